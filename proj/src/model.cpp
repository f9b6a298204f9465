#include "trajkit/model.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace trajkit {

namespace {

const json* find_field(const json& v, const char* key) {
  auto it = v.find(key);
  if (it == v.end() || it->is_null()) return nullptr;
  return &*it;
}

std::string need_string(const json& v, const char* key, size_t line) {
  auto it = v.find(key);
  if (it == v.end() || it->is_null())
    throw InvariantError(line, key, "required field is missing");
  if (!it->is_string()) throw InvariantError(line, key, "must be a string");
  return it->get<std::string>();
}

std::optional<std::string> opt_string(const json& v, const char* key, size_t line) {
  const json* f = find_field(v, key);
  if (!f) return std::nullopt;
  if (!f->is_string()) throw InvariantError(line, key, "must be a string or null");
  return f->get<std::string>();
}

json collect_extra(const json& v, std::initializer_list<const char*> known) {
  json extra = json::object();
  for (auto it = v.begin(); it != v.end(); ++it) {
    bool is_known = false;
    for (const char* k : known)
      if (it.key() == k) {
        is_known = true;
        break;
      }
    if (!is_known) extra[it.key()] = it.value();
  }
  return extra;
}

void append_extra(json& out, const json& extra) {
  for (auto it = extra.begin(); it != extra.end(); ++it) out[it.key()] = it.value();
}

void expect_object(const json& v, size_t line, const char* what) {
  if (!v.is_object()) throw ParseError(line, std::string(what) + " must be a JSON object");
}

}  // namespace

// --- AenNode ---

bool AenNode::operator==(const AenNode& o) const {
  return id == o.id && query == o.query && action == o.action && action_input == o.action_input &&
         observation == o.observation && image == o.image && step == o.step &&
         reasoning == o.reasoning && extra == o.extra;
}

void AenNode::validate(size_t line) const {
  if (id.empty()) throw InvariantError(line, "id", "must be non-empty");
  if (action.empty()) throw InvariantError(line, "action", "must be non-empty");
  if (step && *step < 0) throw InvariantError(line, "step", "must be >= 0");
}

json AenNode::to_json() const {
  json v = json::object();
  v["id"] = id;
  v["query"] = query;
  v["action"] = action;
  v["action_input"] = action_input.to_json();
  v["observation"] = observation;
  v["image"] = image ? json(*image) : json(nullptr);
  v["step"] = step ? json(*step) : json(nullptr);
  v["reasoning"] = reasoning ? json(*reasoning) : json(nullptr);
  append_extra(v, extra);
  return v;
}

AenNode AenNode::from_json(const json& v, size_t line) {
  expect_object(v, line, "AEN record");
  AenNode n;
  n.id = need_string(v, "id", line);
  n.query = need_string(v, "query", line);
  n.action = need_string(v, "action", line);
  auto ai = v.find("action_input");
  if (ai == v.end()) throw InvariantError(line, "action_input", "required field is missing");
  n.action_input = ActionInput::from_json(*ai);
  n.observation = need_string(v, "observation", line);
  n.image = opt_string(v, "image", line);
  const json* st = find_field(v, "step");
  if (st) {
    if (!st->is_number_integer()) throw InvariantError(line, "step", "must be an integer or null");
    n.step = st->get<int64_t>();
  }
  n.reasoning = opt_string(v, "reasoning", line);
  n.extra = collect_extra(
      v, {"id", "query", "action", "action_input", "observation", "image", "step", "reasoning"});
  n.validate(line);
  return n;
}

// --- Connection ---

bool Connection::operator==(const Connection& o) const {
  return src == o.src && dst == o.dst && score == o.score && reasoning == o.reasoning &&
         extra == o.extra;
}

void Connection::validate(size_t line) const {
  if (src.empty()) throw InvariantError(line, "src", "must be non-empty");
  if (dst.empty()) throw InvariantError(line, "dst", "must be non-empty");
  if (src == dst) throw InvariantError(line, "dst", "must differ from src");
  if (!std::isfinite(score) || score < 0.0 || score > 1.0)
    throw InvariantError(line, "score", "must be in [0, 1]");
}

json Connection::to_json() const {
  json v = json::object();
  v["src"] = src;
  v["dst"] = dst;
  v["score"] = score;
  v["reasoning"] = reasoning;
  append_extra(v, extra);
  return v;
}

Connection Connection::from_json(const json& v, size_t line) {
  expect_object(v, line, "connection record");
  Connection c;
  c.src = need_string(v, "src", line);
  c.dst = need_string(v, "dst", line);
  const json* sc = find_field(v, "score");
  if (!sc) throw InvariantError(line, "score", "required field is missing");
  if (!sc->is_number()) throw InvariantError(line, "score", "must be a number");
  c.score = sc->get<double>();
  c.reasoning = need_string(v, "reasoning", line);
  c.extra = collect_extra(v, {"src", "dst", "score", "reasoning"});
  c.validate(line);
  return c;
}

// --- TrajectoryStep ---

bool TrajectoryStep::operator==(const TrajectoryStep& o) const {
  return index == o.index && thought == o.thought && action == o.action &&
         action_input == o.action_input && observation == o.observation && extra == o.extra;
}

json TrajectoryStep::to_json() const {
  json v = json::object();
  v["index"] = index;
  v["thought"] = thought;
  v["action"] = action;
  v["action_input"] = action_input.to_json();
  v["observation"] = observation;
  append_extra(v, extra);
  return v;
}

TrajectoryStep TrajectoryStep::from_json(const json& v, size_t line) {
  expect_object(v, line, "trajectory step");
  TrajectoryStep s;
  const json* idx = find_field(v, "index");
  if (!idx || !idx->is_number_integer())
    throw InvariantError(line, "index", "must be an integer");
  s.index = idx->get<int64_t>();
  s.thought = need_string(v, "thought", line);
  s.action = need_string(v, "action", line);
  auto ai = v.find("action_input");
  if (ai == v.end()) throw InvariantError(line, "action_input", "required field is missing");
  s.action_input = ActionInput::from_json(*ai);
  s.observation = need_string(v, "observation", line);
  s.extra = collect_extra(v, {"index", "thought", "action", "action_input", "observation"});
  return s;
}

// --- MetaTrajectory ---

bool MetaTrajectory::operator==(const MetaTrajectory& o) const {
  return sample_id == o.sample_id && image == o.image && steps == o.steps &&
         final_answer == o.final_answer && extra == o.extra;
}

void MetaTrajectory::validate(size_t line, size_t min_steps) const {
  if (sample_id.empty()) throw InvariantError(line, "sample_id", "must be non-empty");
  if (steps.size() < min_steps)
    throw InvariantError(line, "steps", "must contain at least " + std::to_string(min_steps) +
                                            " step(s)");
  for (size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].index != static_cast<int64_t>(i + 1))
      throw InvariantError(line, "steps",
                           "indices must be contiguous starting at 1 (step " +
                               std::to_string(i) + " has index " +
                               std::to_string(steps[i].index) + ")");
  }
}

json MetaTrajectory::to_json() const {
  json v = json::object();
  v["sample_id"] = sample_id;
  v["image"] = image ? json(*image) : json(nullptr);
  json arr = json::array();
  for (const auto& s : steps) arr.push_back(s.to_json());
  v["steps"] = std::move(arr);
  v["final_answer"] = final_answer;
  append_extra(v, extra);
  return v;
}

MetaTrajectory MetaTrajectory::from_json(const json& v, size_t line) {
  expect_object(v, line, "trajectory record");
  MetaTrajectory t;
  t.sample_id = need_string(v, "sample_id", line);
  t.image = opt_string(v, "image", line);
  const json* steps = find_field(v, "steps");
  if (!steps || !steps->is_array()) throw InvariantError(line, "steps", "must be an array");
  for (const auto& e : *steps) t.steps.push_back(TrajectoryStep::from_json(e, line));
  t.final_answer = need_string(v, "final_answer", line);
  t.extra = collect_extra(v, {"sample_id", "image", "steps", "final_answer"});
  t.validate(line, 0);
  return t;
}

// --- ToolCallRecord ---

bool ToolCallRecord::operator==(const ToolCallRecord& o) const {
  return tool == o.tool && input == o.input && success == o.success &&
         observation == o.observation && duration_ms == o.duration_ms && extra == o.extra;
}

void ToolCallRecord::validate(size_t line) const {
  if (duration_ms < 0) throw InvariantError(line, "duration_ms", "must be >= 0");
}

json ToolCallRecord::to_json() const {
  json v = json::object();
  v["tool"] = tool;
  v["input"] = input;
  v["success"] = success;
  v["observation"] = observation;
  v["duration_ms"] = duration_ms;
  append_extra(v, extra);
  return v;
}

ToolCallRecord ToolCallRecord::from_json(const json& v, size_t line) {
  expect_object(v, line, "tool call record");
  ToolCallRecord r;
  r.tool = need_string(v, "tool", line);
  r.input = need_string(v, "input", line);
  const json* succ = find_field(v, "success");
  if (!succ || !succ->is_boolean()) throw InvariantError(line, "success", "must be a boolean");
  r.success = succ->get<bool>();
  r.observation = need_string(v, "observation", line);
  const json* dur = find_field(v, "duration_ms");
  if (!dur || !dur->is_number_integer())
    throw InvariantError(line, "duration_ms", "must be an integer");
  r.duration_ms = dur->get<int64_t>();
  r.extra = collect_extra(v, {"tool", "input", "success", "observation", "duration_ms"});
  r.validate(line);
  return r;
}

// --- JSONL ---

namespace detail {

json parse_line(const std::string& text, size_t line_no) {
  try {
    return json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line_no, e.what());
  }
}

std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw ParseError(line_no, "blank line");
    out.push_back(line);
  }
  return out;
}

std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  return out;
}

}  // namespace detail

void JsonlTraits<AenNode>::post_read(std::vector<AenNode>& records) {
  std::set<std::string> seen;
  for (size_t i = 0; i < records.size(); ++i)
    if (!seen.insert(records[i].id).second)
      throw InvariantError(i + 1, "id", "duplicate id '" + records[i].id + "'");
}

void JsonlTraits<MetaTrajectory>::post_read(std::vector<MetaTrajectory>& records) {
  for (size_t i = 0; i < records.size(); ++i) records[i].validate(i + 1, 1);
}

}  // namespace trajkit
