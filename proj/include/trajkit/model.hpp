#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace trajkit {

// Insertion-ordered JSON keeps serialized field order deterministic.
using json = nlohmann::ordered_json;

struct ParseError : std::runtime_error {
  size_t line;
  ParseError(size_t line_no, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line_no) + ": " + msg), line(line_no) {}
};

struct InvariantError : std::runtime_error {
  size_t line;
  std::string field;
  InvariantError(size_t line_no, const std::string& field_name, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line_no) + ": field '" + field_name + "': " + msg),
        line(line_no),
        field(field_name) {}
};

// Tool/agent input as it appeared on the wire. `parsed` is set when the input
// was a structured JSON value; `raw` always holds a textual form.
struct ActionInput {
  std::string raw;
  std::optional<json> parsed;

  bool operator==(const ActionInput& o) const { return raw == o.raw && parsed == o.parsed; }

  json to_json() const {
    if (parsed) return *parsed;
    return json(raw);
  }

  static ActionInput from_json(const json& v) {
    ActionInput a;
    if (v.is_string()) {
      a.raw = v.get<std::string>();
    } else {
      a.parsed = v;
      a.raw = v.dump();
    }
    return a;
  }

  static ActionInput from_raw(std::string s) {
    ActionInput a;
    a.raw = std::move(s);
    return a;
  }

  static ActionInput from_parsed(json v) {
    ActionInput a;
    a.raw = v.dump();
    a.parsed = std::move(v);
    return a;
  }
};

// One verified (query, action, observation) execution record.
struct AenNode {
  std::string id;
  std::string query;
  std::string action;
  ActionInput action_input;
  std::string observation;
  std::optional<std::string> image;
  std::optional<int64_t> step;
  std::optional<std::string> reasoning;
  json extra = json::object();  // unknown fields, preserved across round-trips

  bool operator==(const AenNode& o) const;
  void validate(size_t line = 0) const;
  json to_json() const;
  static AenNode from_json(const json& v, size_t line = 0);
};

struct Connection {
  std::string src;
  std::string dst;
  double score = 0.0;
  std::string reasoning;
  json extra = json::object();

  bool operator==(const Connection& o) const;
  void validate(size_t line = 0) const;
  json to_json() const;
  static Connection from_json(const json& v, size_t line = 0);
};

struct TrajectoryStep {
  int64_t index = 0;  // 1-based
  std::string thought;
  std::string action;
  ActionInput action_input;
  std::string observation;
  json extra = json::object();

  bool operator==(const TrajectoryStep& o) const;
  json to_json() const;
  static TrajectoryStep from_json(const json& v, size_t line = 0);
};

struct MetaTrajectory {
  std::string sample_id;
  std::optional<std::string> image;
  std::vector<TrajectoryStep> steps;
  std::string final_answer;
  json extra = json::object();

  bool operator==(const MetaTrajectory& o) const;
  // min_steps = 0 admits orchestrator traces where a run answered without any
  // tool step; dataset records require at least one.
  void validate(size_t line = 0, size_t min_steps = 1) const;
  json to_json() const;
  static MetaTrajectory from_json(const json& v, size_t line = 0);
};

struct ToolCallRecord {
  std::string tool;
  std::string input;
  bool success = false;
  std::string observation;
  int64_t duration_ms = 0;
  json extra = json::object();

  bool operator==(const ToolCallRecord& o) const;
  void validate(size_t line = 0) const;
  json to_json() const;
  static ToolCallRecord from_json(const json& v, size_t line = 0);
};

// --- JSONL ---

namespace detail {
json parse_line(const std::string& text, size_t line_no);
std::vector<std::string> read_lines(std::istream& in);
}

// Per-type validation hooks for the JSONL readers and writers.
template <typename T>
struct JsonlTraits {
  static void post_read(std::vector<T>&) {}
  static void pre_write(const T& rec, size_t line) { rec.validate(line); }
};

template <>
struct JsonlTraits<AenNode> {
  static void post_read(std::vector<AenNode>& records);
  static void pre_write(const AenNode& rec, size_t line) { rec.validate(line); }
};

template <>
struct JsonlTraits<MetaTrajectory> {
  static void post_read(std::vector<MetaTrajectory>& records);
  static void pre_write(const MetaTrajectory& rec, size_t line) { rec.validate(line, 1); }
};

// Reads one record per line. Blank lines are rejected; unknown fields are kept.
template <typename T>
std::vector<T> read_jsonl(std::istream& in) {
  std::vector<std::string> lines = detail::read_lines(in);
  std::vector<T> out;
  out.reserve(lines.size());
  for (size_t i = 0; i < lines.size(); ++i)
    out.push_back(T::from_json(detail::parse_line(lines[i], i + 1), i + 1));
  JsonlTraits<T>::post_read(out);
  return out;
}

// Writes one record per line, validating each first. Returns records written.
template <typename T>
size_t write_jsonl(const std::vector<T>& records, std::ostream& out) {
  for (size_t i = 0; i < records.size(); ++i) {
    JsonlTraits<T>::pre_write(records[i], i + 1);
    out << records[i].to_json().dump() << '\n';
  }
  return records.size();
}

namespace detail {
std::ifstream open_for_read(const std::string& path);
std::ofstream open_for_write(const std::string& path);
}

template <typename T>
std::vector<T> read_jsonl_file(const std::string& path) {
  std::ifstream in = detail::open_for_read(path);
  return read_jsonl<T>(in);
}

template <typename T>
size_t write_jsonl_file(const std::vector<T>& records, const std::string& path) {
  std::ofstream out = detail::open_for_write(path);
  size_t n = write_jsonl(records, out);
  out.flush();
  if (!out) throw std::runtime_error("write to " + path + " failed");
  return n;
}

}  // namespace trajkit
