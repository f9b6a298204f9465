#include "trajkit/orchestrator.hpp"

#include <algorithm>
#include <cctype>

#include "trajkit/react.hpp"

namespace trajkit {

std::string stop_message() { return "Agent stopped due to iteration limit or time limit."; }

std::string recovery_message() {
  return "Could not parse Action / Action Input. Please follow the format: "
         "Thought/Action/Action Input or Final Answer.";
}

std::string planner_template() {
  return
      "<Context Begin>:\n"
      "You are a master planner. Analyze the user's query and decide whether to answer directly "
      "or delegate to a specialized agent.\n"
      "\n"
      "Please strictly follow the ReACT format, and give dialogues in Thought/Action/Action "
      "Input loop.\n"
      "\n"
      "Available Specialist Agents:\n"
      "{agent_list}\n"
      "\n"
      "If you can answer the query directly, respond with:\n"
      "Final Answer: [your direct answer]\n"
      "\n"
      "If the query requires a specialist, strictly follow the ReACT format:\n"
      "Thought: The information obtained so far regarding the user query, along with the "
      "sub-agents that need to be invoked next and the aspects that require further discussion.\n"
      "Action: [agent_name]\n"
      "Action Input: [detailed sub query]\n"
      "\n"
      "Example:\n"
      "User query: \"What is the role of TP53 in cancer?\"\n"
      "\n"
      "Thought: To answer the effects of TP53, I need to call sub-agent xx to investigate yy.\n"
      "Action: GeneAgent\n"
      "Action Input: Explain the role and function of TP53 gene in cancer development.\n"
      "\n"
      "Once you believe the summaries from the sub-agents are sufficient to answer the user's "
      "question, please output Final Answer and provide the summarized answer to the question. "
      "Repeatedly calling the same sub-agent and asking the same query is meaningless.\n"
      "\n"
      "Begin!\n"
      "\n"
      "User Query: <Question>: {query}\n"
      "<Image>: {img}\n"
      "Extra parameters:\n"
      "{extra_params_str}\n"
      "Thought: {agent_scratchpad}";
}

std::string component_template() {
  return
      "<Context Begin>:\n"
      "Please follow strict ReACT format (Thought/Action/Action Input) to solve tasks.\n"
      "\n"
      "Thought: what should I do?\n"
      "Action: the subagent or tool to use, return only the subagent or tool name without any "
      "redundance\n"
      "Action Input: the input to the subagent or tool\n"
      "\n"
      "(Observation will be provided after tool execution)\n"
      "\n"
      "Launch Thought/Action/Action Loop as needed, repeatedly generating the same action and "
      "action input is not suggested.\n"
      "\n"
      "If you think you have enough information or you cannot solve the query anymore, please "
      "provide:\n"
      "Final Answer: your final answer to the question\n"
      "\n"
      "You MUST NOT output \"Final Answer\" in the same step as \"Action\" and \"Action Input\". "
      "If you do so, your output will be considered INVALID and ignored.\n"
      "\n"
      "Specific requirements are given below:\n"
      "\n"
      "{extra_instruction}\n"
      "You have access to the following tools:\n"
      "\n"
      "{tool_descriptions}\n"
      "\n"
      "<Question>: {query}\n"
      "<Image>: {img}\n"
      "\n"
      "Extra parameters:\n"
      "{extra_params_str}\n"
      "\n"
      "Use the following format to solve a given question:\n"
      "Thought: what should I do?\n"
      "Action: must be one of [{tool_names}]\n"
      "Action Input: the input to the tool\n"
      "\n"
      "(Observation will be provided after tool execution)\n"
      "\n"
      "{agent_scratchpad}";
}

std::string gene_agent_instruction() {
  return "You are a gene expert. Answer gene-related queries by tool calling.";
}

std::string image_agent_instruction() {
  return "You are an image expert. Analyze histopathology slides by tool calling.\n"
         "You are encouraged to give hypotheses based on the pathology image you see.";
}

std::string generic_agent_instruction() {
  return "You are a domain expert. Answer queries by tool calling.";
}

std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& slots) {
  std::string out = tmpl;
  for (const auto& [key, value] : slots) {
    const std::string needle = "{" + key + "}";
    size_t pos = 0;
    while ((pos = out.find(needle, pos)) != std::string::npos) {
      out.replace(pos, needle.size(), value);
      pos += value.size();
    }
  }
  return out;
}

const char* termination_name(Termination t) {
  switch (t) {
    case Termination::FinalAnswer: return "final_answer";
    case Termination::IterationLimit: return "iteration_limit";
    case Termination::Timeout: return "timeout";
  }
  return "iteration_limit";
}

Termination termination_from_name(const std::string& name, size_t line) {
  if (name == "final_answer") return Termination::FinalAnswer;
  if (name == "iteration_limit") return Termination::IterationLimit;
  if (name == "timeout") return Termination::Timeout;
  throw InvariantError(line, "termination", "unknown value '" + name + "'");
}

// --- records ---

bool ComponentRun::operator==(const ComponentRun& o) const {
  return agent_name == o.agent_name && trajectory == o.trajectory && tool_calls == o.tool_calls &&
         final_answer == o.final_answer && termination == o.termination;
}

json ComponentRun::to_json() const {
  json v = json::object();
  v["agent_name"] = agent_name;
  v["trajectory"] = trajectory.to_json();
  json calls = json::array();
  for (const auto& c : tool_calls) calls.push_back(c.to_json());
  v["tool_calls"] = std::move(calls);
  v["final_answer"] = final_answer;
  v["termination"] = termination_name(termination);
  return v;
}

ComponentRun ComponentRun::from_json(const json& v, size_t line) {
  if (!v.is_object()) throw ParseError(line, "component run must be a JSON object");
  ComponentRun r;
  if (!v.contains("agent_name") || !v["agent_name"].is_string())
    throw InvariantError(line, "agent_name", "must be a string");
  r.agent_name = v["agent_name"].get<std::string>();
  if (!v.contains("trajectory"))
    throw InvariantError(line, "trajectory", "required field is missing");
  r.trajectory = MetaTrajectory::from_json(v["trajectory"], line);
  if (!v.contains("tool_calls") || !v["tool_calls"].is_array())
    throw InvariantError(line, "tool_calls", "must be an array");
  for (const auto& c : v["tool_calls"]) r.tool_calls.push_back(ToolCallRecord::from_json(c, line));
  if (!v.contains("final_answer") || !v["final_answer"].is_string())
    throw InvariantError(line, "final_answer", "must be a string");
  r.final_answer = v["final_answer"].get<std::string>();
  if (!v.contains("termination") || !v["termination"].is_string())
    throw InvariantError(line, "termination", "must be a string");
  r.termination = termination_from_name(v["termination"].get<std::string>(), line);
  return r;
}

bool RunRecord::operator==(const RunRecord& o) const {
  return query == o.query && planner_trajectory == o.planner_trajectory &&
         component_runs == o.component_runs && final_answer == o.final_answer &&
         termination == o.termination && extra == o.extra;
}

void RunRecord::validate(size_t line) const {
  planner_trajectory.validate(line, 0);
  for (const auto& c : component_runs) c.trajectory.validate(line, 0);
}

json RunRecord::to_json() const {
  json v = json::object();
  v["query"] = query;
  v["planner_trajectory"] = planner_trajectory.to_json();
  json runs = json::array();
  for (const auto& r : component_runs) runs.push_back(r.to_json());
  v["component_runs"] = std::move(runs);
  v["final_answer"] = final_answer;
  v["termination"] = termination_name(termination);
  for (auto it = extra.begin(); it != extra.end(); ++it) v[it.key()] = it.value();
  return v;
}

RunRecord RunRecord::from_json(const json& v, size_t line) {
  if (!v.is_object()) throw ParseError(line, "run record must be a JSON object");
  RunRecord r;
  if (!v.contains("query") || !v["query"].is_string())
    throw InvariantError(line, "query", "must be a string");
  r.query = v["query"].get<std::string>();
  if (!v.contains("planner_trajectory"))
    throw InvariantError(line, "planner_trajectory", "required field is missing");
  r.planner_trajectory = MetaTrajectory::from_json(v["planner_trajectory"], line);
  if (!v.contains("component_runs") || !v["component_runs"].is_array())
    throw InvariantError(line, "component_runs", "must be an array");
  for (const auto& c : v["component_runs"])
    r.component_runs.push_back(ComponentRun::from_json(c, line));
  if (!v.contains("final_answer") || !v["final_answer"].is_string())
    throw InvariantError(line, "final_answer", "must be a string");
  r.final_answer = v["final_answer"].get<std::string>();
  if (!v.contains("termination") || !v["termination"].is_string())
    throw InvariantError(line, "termination", "must be a string");
  r.termination = termination_from_name(v["termination"].get<std::string>(), line);
  r.extra = json::object();
  for (auto it = v.begin(); it != v.end(); ++it) {
    const auto& k = it.key();
    if (k != "query" && k != "planner_trajectory" && k != "component_runs" &&
        k != "final_answer" && k != "termination")
      r.extra[k] = it.value();
  }
  r.validate(line);
  return r;
}

// --- lifecycle ---

void ComponentLifecycle::Handle::release() {
  if (!owner_) return;
  owner_->release_one(name_);
  owner_ = nullptr;
}

ComponentLifecycle::Handle ComponentLifecycle::acquire(const std::string& name) {
  std::lock_guard<std::mutex> lk(mutex_);
  live_names_.push_back(name);
  peak_ = std::max(peak_, live_names_.size());
  return Handle(this, name);
}

void ComponentLifecycle::release_one(const std::string& name) {
  std::lock_guard<std::mutex> lk(mutex_);
  auto it = std::find(live_names_.begin(), live_names_.end(), name);
  if (it != live_names_.end()) live_names_.erase(it);
}

size_t ComponentLifecycle::live() const {
  std::lock_guard<std::mutex> lk(mutex_);
  return live_names_.size();
}

size_t ComponentLifecycle::peak() const {
  std::lock_guard<std::mutex> lk(mutex_);
  return peak_;
}

void ComponentLifecycle::verify_all_released() const {
  std::lock_guard<std::mutex> lk(mutex_);
  if (live_names_.empty()) return;
  std::string names;
  for (size_t i = 0; i < live_names_.size(); ++i) {
    if (i) names += ", ";
    names += live_names_[i];
  }
  throw LeakDetected("components still live: " + names);
}

// --- agent loops ---

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string input_text(const ActionInput& in) {
  return in.parsed ? in.parsed->dump() : in.raw;
}

std::string extra_params_str(const std::map<std::string, std::string>& params) {
  if (params.empty()) return "None";
  std::string out;
  for (const auto& [k, v] : params) {
    if (!out.empty()) out += "\n";
    out += k + ": " + v;
  }
  return out;
}

// The planner prompt ends with "Thought: ", so its scratchpad starts with the
// bare thought text of the first step.
std::string planner_scratchpad(const std::vector<TrajectoryStep>& steps) {
  std::string out;
  for (const auto& s : steps) {
    out += s.thought + "\nAction: " + s.action + "\nAction Input: " + input_text(s.action_input) +
           "\nObservation: " + s.observation + "\nThought: ";
  }
  return out;
}

std::string component_scratchpad(const std::vector<TrajectoryStep>& steps) {
  std::string out;
  for (const auto& s : steps) out += render_step(s);
  if (!steps.empty()) out += "Thought: ";
  return out;
}

struct StepAttempt {
  bool is_final = false;
  std::string final_answer;
  bool ok = false;
  ParsedAction value;
  std::string thought;
};

StepAttempt attempt_step(TextBackend& backend, const std::string& prompt,
                         const std::vector<std::string>& images, size_t max_tokens) {
  CompletionRequest req;
  req.prompt = prompt;
  req.images = images;
  req.max_tokens = max_tokens;
  std::string reply = backend.complete(req);
  auto segments = parse_transcript(reply);
  StepAttempt a;
  bool has_action = false, has_final = false;
  std::string final_content;
  for (const auto& seg : segments) {
    if (seg.kind == SegmentKind::Action) has_action = true;
    if (seg.kind == SegmentKind::FinalAnswer) {
      has_final = true;
      final_content = seg.content;
    }
    if (seg.kind == SegmentKind::Thought) a.thought = trim(seg.content);
  }
  if (has_final && !has_action) {
    a.is_final = true;
    a.final_answer = trim(final_content);
    return a;
  }
  auto ex = extract_action(segments);
  a.ok = ex.status == ExtractStatus::Ok;
  a.value = ex.value;
  return a;
}

// Runs one step with a single retry after unusable output. Returns the
// attempt to act on; failed.second tells whether both tries were unusable.
std::pair<StepAttempt, bool> attempt_with_retry(TextBackend& backend,
                                                const std::function<std::string(
                                                    const std::string&)>& render,
                                                const std::string& scratchpad,
                                                const std::vector<std::string>& images,
                                                size_t max_tokens) {
  StepAttempt a = attempt_step(backend, render(scratchpad), images, max_tokens);
  if (a.is_final || a.ok) return {a, false};
  std::string retry_pad = scratchpad + "\nObservation: " + recovery_message() + "\nThought: ";
  StepAttempt b = attempt_step(backend, render(retry_pad), images, max_tokens);
  if (b.is_final || b.ok) return {b, false};
  if (b.thought.empty()) b.thought = a.thought;
  return {b, true};
}

}  // namespace

ComponentRun run_component(const ComponentSpec& spec, const std::string& sub_query,
                           const std::optional<std::string>& image, TextBackend& backend,
                           const AgentConfig& config, Clock& clock) {
  ComponentRun run;
  run.agent_name = spec.agent_name;
  run.trajectory.sample_id = spec.agent_name;
  run.trajectory.image = image;
  run.termination = Termination::IterationLimit;

  std::string tool_descriptions;
  std::string tool_names;
  for (const auto& t : spec.tools.specs()) {
    if (!tool_descriptions.empty()) tool_descriptions += "\n";
    tool_descriptions += t.name + ": " + t.description;
    if (!tool_names.empty()) tool_names += ", ";
    tool_names += t.name;
  }
  const std::string params_str = extra_params_str(config.extra_params);
  auto render = [&](const std::string& scratchpad) {
    return render_template(component_template(),
                           {{"extra_instruction", spec.extra_instruction},
                            {"tool_descriptions", tool_descriptions},
                            {"tool_names", tool_names},
                            {"query", sub_query},
                            {"img", image ? *image : "None"},
                            {"extra_params_str", params_str},
                            {"agent_scratchpad", scratchpad}});
  };
  std::vector<std::string> images;
  if (image) images.push_back(*image);

  for (size_t iter = 0; iter < config.limits.max_iterations; ++iter) {
    std::string scratchpad = component_scratchpad(run.trajectory.steps);
    auto [a, failed] =
        attempt_with_retry(backend, render, scratchpad, images, config.limits.max_generation);
    if (a.is_final) {
      run.final_answer = a.final_answer;
      run.termination = Termination::FinalAnswer;
      break;
    }
    TrajectoryStep step;
    step.index = static_cast<int64_t>(run.trajectory.steps.size()) + 1;
    step.thought = a.thought;
    if (failed) {
      step.action = a.value.action;
      step.action_input = ActionInput::from_raw(a.value.raw_input);
      step.observation = recovery_message();
      run.trajectory.steps.push_back(std::move(step));
      continue;
    }
    step.action = a.value.action;
    const ToolSpec* tool = spec.tools.find(a.value.action);
    ToolCallRecord record;
    if (!tool) {
      record = make_failed_record(a.value.action, a.value.raw_input,
                                  invalid_tool_message(a.value.action, spec.tools.names()));
      step.action_input = ActionInput::from_raw(a.value.raw_input);
    } else {
      TextBackend* assistant =
          config.parsing_assistant ? config.parsing_assistant : &backend;
      CoerceResult coerced = coerce_action_input(a.value.raw_input, tool->schema, assistant);
      if (coerced.status != CoerceResult::Status::Ok) {
        record = make_failed_record(a.value.action, a.value.raw_input, coerced.error);
        step.action_input = ActionInput::from_raw(a.value.raw_input);
      } else {
        record = execute_tool(a.value.action, coerced.value, spec.tools,
                              config.limits.tool_timeout_ms, clock);
        step.action_input = ActionInput::from_parsed(coerced.value);
      }
    }
    step.observation = record.observation;
    run.tool_calls.push_back(std::move(record));
    run.trajectory.steps.push_back(std::move(step));
  }

  if (run.termination != Termination::FinalAnswer) run.final_answer = stop_message();
  run.trajectory.final_answer = run.final_answer;
  return run;
}

RunRecord run_planner(const std::string& sample_id, const std::string& query,
                      const std::optional<std::string>& image, TextBackend& backend,
                      const std::vector<ComponentSpec>& components, const AgentConfig& config,
                      Clock& clock, ComponentLifecycle* lifecycle) {
  RunRecord rec;
  rec.query = query;
  rec.planner_trajectory.sample_id = sample_id;
  rec.planner_trajectory.image = image;
  rec.termination = Termination::IterationLimit;

  std::string agent_list;
  std::vector<std::string> agent_names;
  for (const auto& c : components) {
    if (!agent_list.empty()) agent_list += "\n";
    agent_list += "- " + c.agent_name + ": " + c.description;
    agent_names.push_back(c.agent_name);
  }
  const std::string params_str = extra_params_str(config.extra_params);
  auto render = [&](const std::string& scratchpad) {
    return render_template(planner_template(),
                           {{"agent_list", agent_list},
                            {"query", query},
                            {"img", image ? *image : "None"},
                            {"extra_params_str", params_str},
                            {"agent_scratchpad", scratchpad}});
  };
  std::vector<std::string> images;
  if (image) images.push_back(*image);

  for (size_t iter = 0; iter < config.limits.max_iterations; ++iter) {
    std::string scratchpad = planner_scratchpad(rec.planner_trajectory.steps);
    auto [a, failed] =
        attempt_with_retry(backend, render, scratchpad, images, config.limits.max_generation);
    TrajectoryStep step;
    step.index = static_cast<int64_t>(rec.planner_trajectory.steps.size()) + 1;
    step.thought = a.thought;
    if (a.is_final) {
      rec.final_answer = a.final_answer;
      rec.termination = Termination::FinalAnswer;
      rec.planner_trajectory.steps.push_back(std::move(step));
      break;
    }
    if (failed) {
      step.action = a.value.action;
      step.action_input = ActionInput::from_raw(a.value.raw_input);
      step.observation = recovery_message();
      rec.planner_trajectory.steps.push_back(std::move(step));
      continue;
    }
    step.action = a.value.action;
    step.action_input = ActionInput::from_raw(a.value.raw_input);
    const ComponentSpec* target = nullptr;
    for (const auto& c : components)
      if (c.agent_name == a.value.action) {
        target = &c;
        break;
      }
    if (!target) {
      step.observation = invalid_tool_message(a.value.action, agent_names);
    } else {
      std::optional<ComponentLifecycle::Handle> handle;
      if (lifecycle) handle.emplace(lifecycle->acquire(target->agent_name));
      ComponentRun sub =
          run_component(*target, a.value.raw_input, image, backend, config, clock);
      if (handle) handle->release();
      step.observation = sub.final_answer;
      rec.component_runs.push_back(std::move(sub));
    }
    rec.planner_trajectory.steps.push_back(std::move(step));
  }

  if (rec.termination != Termination::FinalAnswer) rec.final_answer = stop_message();
  rec.planner_trajectory.final_answer = rec.final_answer;
  return rec;
}

}  // namespace trajkit
