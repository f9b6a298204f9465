#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajkit/model.hpp"
#include "trajkit/react.hpp"

namespace trajkit {

// Raised by tool executors to signal failure; the message becomes the
// observation and the record is marked unsuccessful.
struct ToolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Millisecond clock. FakeClock lets tests drive timeouts deterministically.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual int64_t now_ms() = 0;
};

class SystemClock : public Clock {
 public:
  int64_t now_ms() override;
};

class FakeClock : public Clock {
 public:
  explicit FakeClock(int64_t start_ms = 0) : now_(start_ms) {}
  int64_t now_ms() override { return now_.load(); }
  void advance(int64_t ms) { now_ += ms; }

 private:
  std::atomic<int64_t> now_;
};

struct ToolSpec {
  std::string name;
  std::string description;
  InputSchema schema;
  std::function<std::string(const json&)> executor;
};

class ToolRegistry {
 public:
  // Rejects duplicate names; registration order is preserved.
  void add(ToolSpec spec);
  const ToolSpec* find(const std::string& name) const;
  const std::vector<ToolSpec>& specs() const { return specs_; }
  std::vector<std::string> names() const;
  bool empty() const { return specs_.empty(); }

 private:
  std::vector<ToolSpec> specs_;
};

// "<name> is not a valid tool, try one of [A, B, C]."
std::string invalid_tool_message(const std::string& name, const std::vector<std::string>& names);

// Runs the named tool with a wall-clock timeout. Timeouts and executor
// exceptions produce failed records; the executor's return value is the
// observation on success. Unknown tools fail with the invalid-tool message.
ToolCallRecord execute_tool(const std::string& name, const json& input,
                            const ToolRegistry& registry, int64_t timeout_ms, Clock& clock);

ToolCallRecord make_failed_record(const std::string& tool, const std::string& input,
                                  const std::string& observation, int64_t duration_ms = 0);

// --- mock tools ---

struct MockBehavior {
  // When set, the observation echoes this input field.
  std::string echo_field;
  // Keyed canned observations; key is the compact dump of the input object.
  std::map<std::string, std::string> keyed;
  std::string default_observation = "No results found.";
  // When set, the fallback observation names the query:
  // "No results found for query '<value of this field>'".
  std::string not_found_field;
  // Advances the fake clock before returning, to exercise timeout paths.
  int64_t delay_ms = 0;
  FakeClock* clock = nullptr;
  // When set, a missing file at this path field fails the call.
  std::string image_field;
};

ToolSpec make_mock_tool(std::string name, std::string description, InputSchema schema,
                        MockBehavior behavior);

// The standard pathology tool specs (schemas only, mock executors).
// Passing a FakeClock makes QwenVLCaptionTool consume simulated time.
ToolRegistry make_pathology_registry(FakeClock* clock = nullptr);

// Input schemas for the standard toolset, keyed by tool name.
InputSchema pathology_tool_schema(const std::string& name);

// --- HTTP-backed domain clients ---

// Renders one tumor-type entry block. Matches the observation style the
// mock registry and fixtures use.
std::string format_oncotree_entry(const json& entry);
std::string format_oncotree_results(const json& entries, const std::string& query);
// GET {base}/api/tumorTypes/search/{query_type}/{query}. Throws ToolError
// ("API call failed: ...") on transport errors.
std::string oncotree_lookup(const std::string& base_url, const std::string& query,
                            const std::string& query_type);

std::string format_mygene_hit(const json& hit, size_t rank);
std::string format_mygene_results(const json& response);
// GET {base}/v3/query?q=...&fields=...&size=top_k
std::string mygene_query(const std::string& base_url, const std::string& q, int top_k = 3);

ToolSpec make_oncotree_tool(std::string base_url);
ToolSpec make_mygene_tool(std::string base_url, int top_k = 3);

}  // namespace trajkit
