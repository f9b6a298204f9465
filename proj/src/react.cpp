#include "trajkit/react.hpp"

#include <algorithm>
#include <cctype>

#include "trajkit/backend.hpp"

namespace trajkit {

namespace {

bool is_space_tab(char c) { return c == ' ' || c == '\t'; }

size_t skip_space_tab(std::string_view t, size_t pos) {
  while (pos < t.size() && is_space_tab(t[pos])) ++pos;
  return pos;
}

bool starts_with_at(std::string_view t, size_t pos, std::string_view s) {
  return t.size() - pos >= s.size() && t.compare(pos, s.size(), s) == 0;
}

std::string trim_copy(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

struct MarkerNames {
  SegmentKind kind;
  std::string_view name;
};

// "Action Input" must be tried before "Action".
constexpr MarkerNames kMarkers[] = {
    {SegmentKind::FinalAnswer, "Final Answer"}, {SegmentKind::ActionInput, "Action Input"},
    {SegmentKind::Action, "Action"},            {SegmentKind::Observation, "Observation"},
    {SegmentKind::Thought, "Thought"},
};

struct MarkerMatch {
  SegmentKind kind;
  size_t content_offset;
};

// Tries to recognize a marker on the line starting at line_start. Accepted
// shapes, after optional indentation / list bullet / leading "**":
//   Name:   Name:**   Name**:
std::optional<MarkerMatch> match_marker(std::string_view t, size_t line_start) {
  size_t pos = skip_space_tab(t, line_start);
  // list bullet: "- " "* " "+ " or "1. " "2) "
  if (pos + 1 < t.size() && (t[pos] == '-' || t[pos] == '*' || t[pos] == '+') &&
      t[pos + 1] == ' ') {
    // "** " would be a bullet only if not bold; treat "**" as bold, "* " as bullet
    if (!(t[pos] == '*' && pos + 1 < t.size() && t[pos + 1] == '*'))
      pos = skip_space_tab(t, pos + 2);
  } else if (pos < t.size() && std::isdigit(static_cast<unsigned char>(t[pos]))) {
    size_t q = pos;
    while (q < t.size() && std::isdigit(static_cast<unsigned char>(t[q]))) ++q;
    if (q < t.size() && (t[q] == '.' || t[q] == ')') && q + 1 < t.size() && t[q + 1] == ' ')
      pos = skip_space_tab(t, q + 2);
    else
      return std::nullopt;  // bare number at line start, not a marker line
  }
  if (starts_with_at(t, pos, "**")) pos += 2;
  for (const auto& m : kMarkers) {
    if (!starts_with_at(t, pos, m.name)) continue;
    size_t q = pos + m.name.size();
    if (starts_with_at(t, q, ":")) {
      ++q;
      if (starts_with_at(t, q, "**")) q += 2;
    } else if (starts_with_at(t, q, "**:")) {
      q += 3;
    } else {
      continue;
    }
    return MarkerMatch{m.kind, skip_space_tab(t, q)};
  }
  return std::nullopt;
}

size_t trim_trailing_newlines(std::string_view t, size_t begin, size_t end) {
  while (end > begin && (t[end - 1] == '\n' || t[end - 1] == '\r')) --end;
  return end;
}

}  // namespace

const char* segment_kind_name(SegmentKind k) {
  switch (k) {
    case SegmentKind::Thought: return "thought";
    case SegmentKind::Action: return "action";
    case SegmentKind::ActionInput: return "action_input";
    case SegmentKind::Observation: return "observation";
    case SegmentKind::FinalAnswer: return "final_answer";
  }
  return "unknown";
}

std::vector<Segment> parse_transcript(std::string_view text) {
  std::vector<Segment> out;
  std::optional<MarkerMatch> open;
  size_t line_start = 0;
  auto close_open = [&](size_t line_begin) {
    if (!open) return;
    size_t end = trim_trailing_newlines(text, open->content_offset, line_begin);
    size_t begin = std::min(open->content_offset, end);
    out.push_back(Segment{open->kind, begin, end,
                          std::string(text.substr(begin, end - begin))});
    open.reset();
  };
  while (line_start <= text.size()) {
    if (line_start == text.size()) break;
    auto m = match_marker(text, line_start);
    if (m) {
      close_open(line_start);
      open = m;
    }
    size_t nl = text.find('\n', line_start);
    if (nl == std::string_view::npos) break;
    line_start = nl + 1;
  }
  close_open(text.size());
  return out;
}

ExtractResult extract_action(const std::vector<Segment>& segments) {
  ExtractResult r;
  bool has_action = false, has_final = false;
  ptrdiff_t last_thought = -1;
  for (size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].kind == SegmentKind::Action) has_action = true;
    if (segments[i].kind == SegmentKind::FinalAnswer) has_final = true;
    if (segments[i].kind == SegmentKind::Thought) last_thought = static_cast<ptrdiff_t>(i);
  }
  if (has_action && has_final) {
    r.status = ExtractStatus::InvalidSameStep;
    return r;
  }
  ptrdiff_t action_idx = -1;
  for (size_t i = static_cast<size_t>(last_thought + 1); i < segments.size(); ++i) {
    if (segments[i].kind == SegmentKind::Action) {
      action_idx = static_cast<ptrdiff_t>(i);
      break;
    }
  }
  if (action_idx < 0) {
    r.status = ExtractStatus::MissingAction;
    return r;
  }
  // Action names must fit on one line; drop anything past the first newline.
  std::string a = segments[static_cast<size_t>(action_idx)].content;
  size_t nl = a.find('\n');
  if (nl != std::string::npos) a.resize(nl);
  std::string cleaned;
  cleaned.reserve(a.size());
  for (char c : a)
    if (c != '*' && c != '`') cleaned.push_back(c);
  cleaned = trim_copy(cleaned);
  if (cleaned.size() >= 2 && cleaned.front() == '[' && cleaned.back() == ']')
    cleaned = trim_copy(cleaned.substr(1, cleaned.size() - 2));
  r.value.action = cleaned;

  ptrdiff_t input_idx = -1;
  for (size_t i = static_cast<size_t>(action_idx + 1); i < segments.size(); ++i) {
    if (segments[i].kind == SegmentKind::ActionInput) {
      input_idx = static_cast<ptrdiff_t>(i);
      break;
    }
  }
  if (input_idx < 0) {
    r.status = ExtractStatus::MissingActionInput;
    return r;
  }
  r.value.raw_input = trim_copy(segments[static_cast<size_t>(input_idx)].content);
  json parsed = json::parse(r.value.raw_input, nullptr, /*allow_exceptions=*/false);
  if (!parsed.is_discarded() && parsed.is_object()) r.value.structured_input = std::move(parsed);
  r.status = ExtractStatus::Ok;
  return r;
}

// --- schema ---

namespace {

const char* type_name(FieldSpec::Type t) {
  switch (t) {
    case FieldSpec::Type::String: return "string";
    case FieldSpec::Type::Number: return "number";
    case FieldSpec::Type::Integer: return "integer";
    case FieldSpec::Type::Boolean: return "boolean";
  }
  return "string";
}

bool type_matches(FieldSpec::Type t, const json& v) {
  switch (t) {
    case FieldSpec::Type::String: return v.is_string();
    case FieldSpec::Type::Number: return v.is_number();
    case FieldSpec::Type::Integer: return v.is_number_integer();
    case FieldSpec::Type::Boolean: return v.is_boolean();
  }
  return false;
}

}  // namespace

json InputSchema::to_json() const {
  json props = json::object();
  json required = json::array();
  for (const auto& f : fields) {
    props[f.name] = json{{"type", type_name(f.type)}};
    if (f.required) required.push_back(f.name);
  }
  json v = json::object();
  v["title"] = title;
  v["type"] = "object";
  v["properties"] = std::move(props);
  v["required"] = std::move(required);
  return v;
}

std::vector<std::string> InputSchema::check(const json& obj) const {
  std::vector<std::string> problems;
  if (!obj.is_object()) {
    problems.push_back("input: Input should be an object [type=object_type]");
    return problems;
  }
  for (const auto& f : fields) {
    auto it = obj.find(f.name);
    if (it == obj.end() || it->is_null()) {
      if (f.required) problems.push_back(f.name + ": Field required [type=missing]");
      continue;
    }
    if (!type_matches(f.type, *it))
      problems.push_back(f.name + ": Input should be a valid " + type_name(f.type) +
                         " [type=" + type_name(f.type) + "_type]");
  }
  return problems;
}

std::string InputSchema::error_message(const std::vector<std::string>& problems) const {
  std::string msg = std::to_string(problems.size()) + " validation error" +
                    (problems.size() == 1 ? "" : "s") + " for " + title + ". ";
  for (size_t i = 0; i < problems.size(); ++i) {
    if (i) msg += "; ";
    msg += problems[i];
  }
  return msg;
}

std::string parsing_prompt(const std::string& raw, const InputSchema& schema) {
  std::string p;
  p += "Do not interpret, or infer new information from the input. You are not allowed to add "
       "extra information.\n";
  p += "You must only fill the fields according to the schema below.\n\n";
  p += "=== SCHEMA ===\n";
  p += schema.to_json().dump(2);
  p += "\n\n=== INPUT ===\n";
  p += raw;
  p += "\n\nNow return the JSON object:";
  return p;
}

namespace {

// Strips markdown code fences and grabs the outermost JSON object if the
// reply carries prose around it.
json parse_assistant_reply(const std::string& reply) {
  std::string t = trim_copy(reply);
  if (t.rfind("```", 0) == 0) {
    size_t nl = t.find('\n');
    t = nl == std::string::npos ? std::string() : t.substr(nl + 1);
    size_t fence = t.rfind("```");
    if (fence != std::string::npos) t = t.substr(0, fence);
    t = trim_copy(t);
  }
  json v = json::parse(t, nullptr, false);
  if (!v.is_discarded()) return v;
  size_t b = t.find('{');
  size_t e = t.rfind('}');
  if (b != std::string::npos && e != std::string::npos && e > b)
    return json::parse(t.substr(b, e - b + 1), nullptr, false);
  return json(json::value_t::discarded);
}

}  // namespace

CoerceResult coerce_action_input(const std::string& raw, const InputSchema& schema,
                                 TextBackend* assistant) {
  CoerceResult r;
  json direct = json::parse(raw, nullptr, false);
  bool parsed_ok = !direct.is_discarded();
  std::vector<std::string> problems;
  if (parsed_ok) {
    problems = schema.check(direct);
    if (problems.empty()) {
      r.status = CoerceResult::Status::Ok;
      r.value = std::move(direct);
      return r;
    }
  }
  if (!assistant) {
    if (parsed_ok) {
      r.status = CoerceResult::Status::ValidationError;
      r.error = schema.error_message(problems);
    } else {
      r.status = CoerceResult::Status::AssistantUnavailable;
      r.error = "action input is not valid JSON and no parsing assistant is configured";
    }
    return r;
  }
  CompletionRequest req;
  req.prompt = parsing_prompt(raw, schema);
  std::string reply = assistant->complete(req);
  json reshaped = parse_assistant_reply(reply);
  if (reshaped.is_discarded()) {
    r.status = CoerceResult::Status::ValidationError;
    r.error = "1 validation error for " + schema.title +
              ". input: Assistant reply is not valid JSON [type=json_invalid]";
    return r;
  }
  problems = schema.check(reshaped);
  if (!problems.empty()) {
    r.status = CoerceResult::Status::ValidationError;
    r.error = schema.error_message(problems);
    return r;
  }
  r.status = CoerceResult::Status::Ok;
  r.value = std::move(reshaped);
  return r;
}

// --- segment mask ---

std::vector<TokenSpan> whitespace_token_offsets(std::string_view text) {
  std::vector<TokenSpan> out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    size_t b = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    out.push_back(TokenSpan{b, i});
  }
  return out;
}

SegmentMask generate_segment_mask(size_t text_length, const std::vector<TokenSpan>& token_offsets,
                                  const std::vector<Segment>& segments, size_t visual_len,
                                  size_t batch) {
  for (size_t i = 0; i < token_offsets.size(); ++i) {
    const auto& t = token_offsets[i];
    if (t.begin > t.end || t.end > text_length)
      throw OffsetOutOfRange("token " + std::to_string(i) + " spans [" +
                             std::to_string(t.begin) + ", " + std::to_string(t.end) +
                             ") beyond text length " + std::to_string(text_length));
    if (i > 0 && t.begin < token_offsets[i - 1].end)
      throw std::invalid_argument("token offsets must be ascending and non-overlapping");
  }
  SegmentMask m;
  m.batch = batch;
  m.visual_len = visual_len;
  m.text_len = token_offsets.size();
  m.data.assign(batch * m.seq_len() * 3, 0);
  for (size_t ti = 0; ti < token_offsets.size(); ++ti) {
    const auto& t = token_offsets[ti];
    int channel = -1;
    for (const auto& seg : segments) {
      if (t.begin < seg.end && seg.begin < t.end) {
        switch (seg.kind) {
          case SegmentKind::Thought: channel = 0; break;
          case SegmentKind::Action: channel = 1; break;
          case SegmentKind::ActionInput: channel = 2; break;
          default: channel = -1; break;
        }
        break;  // first intersecting segment decides
      }
    }
    if (channel < 0) continue;
    for (size_t b = 0; b < batch; ++b)
      m.set(b, visual_len + ti, static_cast<size_t>(channel), 1);
  }
  return m;
}

// --- rendering ---

std::string render_step(const TrajectoryStep& s) {
  std::string out;
  out += "Thought: " + s.thought + "\n";
  out += "Action: " + s.action + "\n";
  out += "Action Input: " + (s.action_input.parsed ? s.action_input.parsed->dump()
                                                   : s.action_input.raw) +
         "\n";
  out += "Observation: " + s.observation + "\n";
  return out;
}

std::string render_react(const MetaTrajectory& t) {
  std::string out;
  for (const auto& s : t.steps) out += render_step(s);
  if (!t.final_answer.empty()) out += "Final Answer: " + t.final_answer + "\n";
  return out;
}

MetaTrajectory parse_react_trajectory(std::string_view text) {
  MetaTrajectory t;
  auto segments = parse_transcript(text);
  TrajectoryStep cur;
  bool open = false;
  auto flush = [&]() {
    if (!open) return;
    cur.index = static_cast<int64_t>(t.steps.size()) + 1;
    t.steps.push_back(cur);
    cur = TrajectoryStep{};
    open = false;
  };
  for (const auto& seg : segments) {
    std::string body = trim_copy(seg.content);
    switch (seg.kind) {
      case SegmentKind::Thought:
        flush();
        open = true;
        cur.thought = body;
        break;
      case SegmentKind::Action:
        if (open && !cur.action.empty()) flush();
        open = true;
        cur.action = body;
        break;
      case SegmentKind::ActionInput:
        open = true;
        cur.action_input = ActionInput::from_raw(body);
        break;
      case SegmentKind::Observation:
        open = true;
        cur.observation = body;
        break;
      case SegmentKind::FinalAnswer:
        flush();
        t.final_answer = body;
        break;
    }
  }
  flush();
  return t;
}

}  // namespace trajkit
