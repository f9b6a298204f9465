#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajkit/model.hpp"
#include "trajkit/orchestrator.hpp"

namespace trajkit {

struct JudgeUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnparsableScore : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Ground truth and run sets that do not line up on sample ids.
struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Lowercases, maps punctuation to spaces, splits on whitespace.
std::set<std::string> normalized_tokens(std::string_view text);

// Token-set Jaccard similarity; two empty texts are identical (1.0).
double jaccard_similarity(std::string_view a, std::string_view b);

// 0.5 * [run produced valid output] + 0.5 * successful / total tool calls.
// A run with zero tool calls counts its success ratio as 1.
double trajectory_success_score(bool valid_output, const std::vector<ToolCallRecord>& calls);

// Fraction of call pairs that repeat a tool with near-identical input:
// |{(i,j) : i<j, same tool, jaccard > theta}| / |{(i,j) : i<j}|.
// Fewer than two calls yields 0.
double tool_redundancy_rate(const std::vector<ToolCallRecord>& calls, double theta = 0.7);

struct Tcf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Set overlap between expected and actually attempted tools. Both sets empty
// scores 1 across the board; an empty actual set alone scores 0.
Tcf1 tool_consistency_f1(const std::set<std::string>& expected,
                         const std::set<std::string>& actual);

// First number found in the judge's reply, clamped to [0, 1]. Throws
// UnparsableScore when the reply holds no number.
double parse_judge_score(const std::string& reply);

std::string consistency_prompt(const std::string& reference, const std::string& answer);
std::string hallucination_prompt(const std::string& question, const std::string& answer,
                                 const std::string& trajectory);

// Judge-scored semantic agreement between reference and answer.
double answer_consistency(const std::string& reference, const std::string& answer,
                          TextBackend& judge);

// Judge-scored unsupportedness of the answer given the trajectory evidence.
double hallucination_score(const std::string& question, const std::string& answer,
                           const std::string& trajectory, TextBackend& judge);

// Exact match (case-folded, trimmed) scores 1; otherwise the judge rates
// similarity; with no judge a miss scores 0.
double choice_match_score(const std::string& predicted, const std::string& correct,
                          TextBackend* judge);

struct GroundTruthEntry {
  std::string sample_id;
  std::optional<std::set<std::string>> expected_tools;
  std::optional<std::string> reference_answer;
  std::optional<std::string> mc_correct;
  std::string subtask = "overall";
};

using GroundTruth = std::map<std::string, GroundTruthEntry>;

GroundTruth read_ground_truth_file(const std::string& path);

struct MetricReport {
  double tss = 0.0;
  double trr = 0.0;
  std::optional<Tcf1> tcf1;
  std::optional<double> acs;
  std::optional<double> hr;
  std::optional<std::map<std::string, double>> mc_f1;
  size_t n = 0;

  json to_json() const;  // absent metrics serialize as null
};

// Aggregates per-run metrics over a result set. Ground-truth-dependent
// metrics are computed only when the ground truth is present; judge-dependent
// metrics only when a judge is supplied. Throws ShapeMismatch when ids in the
// runs and ground truth disagree.
MetricReport evaluate_dataset(const std::vector<RunRecord>& runs, const GroundTruth* truth,
                              TextBackend* judge, double trr_theta = 0.7);

}  // namespace trajkit
