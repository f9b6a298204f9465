#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "trajkit/model.hpp"

namespace trajkit {

class TextBackend;

enum class SegmentKind { Thought, Action, ActionInput, Observation, FinalAnswer };

const char* segment_kind_name(SegmentKind k);

// A marker-delimited region of a transcript. The span covers the segment
// content only: it starts after the marker (and any following spaces on the
// marker line) and ends at the start of the next marker line or end of input.
struct Segment {
  SegmentKind kind;
  size_t begin = 0;
  size_t end = 0;
  std::string content;
};

// Scans a ReACT transcript for Thought / Action / Action Input / Observation /
// Final Answer markers. Markers are case-sensitive and recognized only at the
// start of a line, after optional indentation, list bullets, and markdown
// bold. Never throws; unmarked text before the first marker is ignored.
std::vector<Segment> parse_transcript(std::string_view text);

enum class ExtractStatus { Ok, MissingAction, MissingActionInput, InvalidSameStep };

struct ParsedAction {
  std::string action;      // trimmed of whitespace, markdown and one bracket layer
  std::string raw_input;   // Action Input content, whitespace-trimmed
  std::optional<json> structured_input;  // set when raw_input parses as a JSON object
};

struct ExtractResult {
  ExtractStatus status = ExtractStatus::MissingAction;
  ParsedAction value;
};

// Pulls the most recent action out of parsed segments: the first Action after
// the last Thought, paired with the first Action Input after it. A Final
// Answer alongside any Action is InvalidSameStep.
ExtractResult extract_action(const std::vector<Segment>& segments);

// --- Action Input coercion ---

struct FieldSpec {
  enum class Type { String, Number, Integer, Boolean };
  std::string name;
  Type type = Type::String;
  bool required = true;
};

struct InputSchema {
  std::string title;
  std::vector<FieldSpec> fields;

  json to_json() const;
  // Returns per-field problems, empty when the object conforms.
  std::vector<std::string> check(const json& obj) const;
  // "1 validation error for FooSchema. text: Field required [type=missing]"
  std::string error_message(const std::vector<std::string>& problems) const;
};

struct CoerceResult {
  enum class Status { Ok, ValidationError, AssistantUnavailable };
  Status status = Status::Ok;
  json value;
  std::string error;
};

// Stage 1: parse raw text as JSON and validate against the schema. Stage 2:
// ask the assistant backend to reshape the input, then validate its reply.
// With no assistant, unparsable input yields AssistantUnavailable and
// parsable-but-invalid input yields ValidationError.
CoerceResult coerce_action_input(const std::string& raw, const InputSchema& schema,
                                 TextBackend* assistant);

// Prompt sent to the assistant in stage 2.
std::string parsing_prompt(const std::string& raw, const InputSchema& schema);

// --- Segment mask ---

struct OffsetOutOfRange : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TokenSpan {
  size_t begin = 0;
  size_t end = 0;
};

// Byte offsets of whitespace-delimited tokens.
std::vector<TokenSpan> whitespace_token_offsets(std::string_view text);

// Boolean indicator tensor of shape batch x (visual_len + tokens) x 3 with
// channels (thought, action, action input). Visual rows are all zero. A text
// token is assigned the channel of the first segment it overlaps, if that
// segment is one of the three reasoning kinds.
struct SegmentMask {
  size_t batch = 0;
  size_t visual_len = 0;
  size_t text_len = 0;
  std::vector<uint8_t> data;  // batch * seq_len * 3, row-major

  size_t seq_len() const { return visual_len + text_len; }
  uint8_t at(size_t b, size_t t, size_t i) const { return data[(b * seq_len() + t) * 3 + i]; }
  void set(size_t b, size_t t, size_t i, uint8_t v) { data[(b * seq_len() + t) * 3 + i] = v; }
};

SegmentMask generate_segment_mask(size_t text_length, const std::vector<TokenSpan>& token_offsets,
                                  const std::vector<Segment>& segments, size_t visual_len,
                                  size_t batch);

// --- Rendering ---

// Serializes steps in marker form:
//   Thought: ...\nAction: ...\nAction Input: ...\nObservation: ...\n
// followed by "Final Answer: ..." when the answer is non-empty.
std::string render_react(const MetaTrajectory& t);

std::string render_step(const TrajectoryStep& s);

// Inverse of render_react for well-formed transcripts: groups segments back
// into steps. sample_id is left empty.
MetaTrajectory parse_react_trajectory(std::string_view text);

}  // namespace trajkit
