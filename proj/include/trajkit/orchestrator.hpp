#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajkit/backend.hpp"
#include "trajkit/model.hpp"
#include "trajkit/tools.hpp"

namespace trajkit {

struct LeakDetected : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExecutionLimits {
  size_t max_iterations = 8;
  int64_t tool_timeout_ms = 300000;
  size_t max_generation = 2048;
};

// Observable strings, shared with tests.
std::string stop_message();      // emitted when the iteration budget runs out
std::string recovery_message();  // fed back after unusable output

// Prompt templates. Slots use {name} placeholders.
std::string planner_template();
std::string component_template();
std::string gene_agent_instruction();
std::string image_agent_instruction();
std::string generic_agent_instruction();

std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& slots);

struct ComponentSpec {
  std::string agent_name;
  std::string description;        // one line for the planner's agent list
  std::string extra_instruction;  // domain preamble, e.g. gene_agent_instruction()
  ToolRegistry tools;
};

struct AgentConfig {
  ExecutionLimits limits;
  std::map<std::string, std::string> extra_params;
  // Backend used for action-input reshaping. Null means reuse the main
  // backend.
  TextBackend* parsing_assistant = nullptr;
};

enum class Termination { FinalAnswer, IterationLimit, Timeout };
const char* termination_name(Termination t);
Termination termination_from_name(const std::string& name, size_t line = 0);

struct ComponentRun {
  std::string agent_name;
  MetaTrajectory trajectory;
  std::vector<ToolCallRecord> tool_calls;
  std::string final_answer;
  Termination termination = Termination::IterationLimit;

  bool operator==(const ComponentRun& o) const;
  json to_json() const;
  static ComponentRun from_json(const json& v, size_t line = 0);
};

struct RunRecord {
  std::string query;
  MetaTrajectory planner_trajectory;
  std::vector<ComponentRun> component_runs;
  std::string final_answer;
  Termination termination = Termination::IterationLimit;
  json extra = json::object();

  const std::string& sample_id() const { return planner_trajectory.sample_id; }
  bool operator==(const RunRecord& o) const;
  void validate(size_t line = 0) const;
  json to_json() const;
  static RunRecord from_json(const json& v, size_t line = 0);
};

// Tracks how many component agents are instantiated at once. run_planner
// acquires exactly one handle around each delegation.
class ComponentLifecycle {
 public:
  class Handle {
   public:
    Handle(ComponentLifecycle* owner, std::string name) : owner_(owner), name_(std::move(name)) {}
    Handle(Handle&& o) noexcept : owner_(o.owner_), name_(std::move(o.name_)) {
      o.owner_ = nullptr;
    }
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    Handle& operator=(Handle&&) = delete;
    ~Handle() { release(); }
    void release();

   private:
    ComponentLifecycle* owner_;
    std::string name_;
  };

  Handle acquire(const std::string& name);
  size_t live() const;
  size_t peak() const;
  // Throws LeakDetected naming any component still held.
  void verify_all_released() const;

 private:
  friend class Handle;
  void release_one(const std::string& name);

  mutable std::mutex mutex_;
  std::vector<std::string> live_names_;
  size_t peak_ = 0;
};

// Runs one component agent ReACT loop over its tool registry.
ComponentRun run_component(const ComponentSpec& spec, const std::string& sub_query,
                           const std::optional<std::string>& image, TextBackend& backend,
                           const AgentConfig& config, Clock& clock);

// Runs the planner loop, delegating Action steps to component agents. The
// same backend serves the planner and every component.
RunRecord run_planner(const std::string& sample_id, const std::string& query,
                      const std::optional<std::string>& image, TextBackend& backend,
                      const std::vector<ComponentSpec>& components, const AgentConfig& config,
                      Clock& clock, ComponentLifecycle* lifecycle = nullptr);

}  // namespace trajkit
