#include "trajkit/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "trajkit/react.hpp"

namespace trajkit {

std::set<std::string> normalized_tokens(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    unsigned char u = static_cast<unsigned char>(c);
    if (std::ispunct(u))
      cleaned.push_back(' ');
    else
      cleaned.push_back(static_cast<char>(std::tolower(u)));
  }
  std::set<std::string> tokens;
  size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() && std::isspace(static_cast<unsigned char>(cleaned[i]))) ++i;
    size_t b = i;
    while (i < cleaned.size() && !std::isspace(static_cast<unsigned char>(cleaned[i]))) ++i;
    if (i > b) tokens.insert(cleaned.substr(b, i - b));
  }
  return tokens;
}

double jaccard_similarity(std::string_view a, std::string_view b) {
  std::set<std::string> ta = normalized_tokens(a);
  std::set<std::string> tb = normalized_tokens(b);
  if (ta.empty() && tb.empty()) return 1.0;
  size_t inter = 0;
  for (const auto& t : ta)
    if (tb.count(t)) ++inter;
  size_t uni = ta.size() + tb.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double trajectory_success_score(bool valid_output, const std::vector<ToolCallRecord>& calls) {
  double ratio = 1.0;
  if (!calls.empty()) {
    size_t ok = 0;
    for (const auto& c : calls)
      if (c.success) ++ok;
    ratio = static_cast<double>(ok) / static_cast<double>(calls.size());
  }
  return 0.5 * (valid_output ? 1.0 : 0.0) + 0.5 * ratio;
}

double tool_redundancy_rate(const std::vector<ToolCallRecord>& calls, double theta) {
  if (calls.size() < 2) return 0.0;
  size_t redundant = 0;
  size_t total = 0;
  for (size_t i = 0; i < calls.size(); ++i) {
    for (size_t j = i + 1; j < calls.size(); ++j) {
      ++total;
      if (calls[i].tool != calls[j].tool) continue;
      if (jaccard_similarity(calls[i].input, calls[j].input) > theta) ++redundant;
    }
  }
  return static_cast<double>(redundant) / static_cast<double>(total);
}

Tcf1 tool_consistency_f1(const std::set<std::string>& expected,
                         const std::set<std::string>& actual) {
  Tcf1 r;
  if (expected.empty() && actual.empty()) {
    r.precision = r.recall = r.f1 = 1.0;
    return r;
  }
  if (actual.empty() || expected.empty()) return r;  // zeros
  size_t inter = 0;
  for (const auto& t : actual)
    if (expected.count(t)) ++inter;
  r.precision = static_cast<double>(inter) / static_cast<double>(actual.size());
  r.recall = static_cast<double>(inter) / static_cast<double>(expected.size());
  r.f1 = (r.precision + r.recall) == 0.0
             ? 0.0
             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

double parse_judge_score(const std::string& reply) {
  for (size_t i = 0; i < reply.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(reply[i]);
    bool starts_number = std::isdigit(c) || (c == '.' && i + 1 < reply.size() &&
                                             std::isdigit(static_cast<unsigned char>(reply[i + 1])));
    if (!starts_number) continue;
    try {
      double v = std::stod(reply.substr(i));
      if (!std::isfinite(v)) break;
      return std::clamp(v, 0.0, 1.0);
    } catch (...) {
      continue;
    }
  }
  throw UnparsableScore("no numeric score in judge reply: " + reply);
}

std::string consistency_prompt(const std::string& reference, const std::string& answer) {
  std::string p;
  p += "Rate the semantic consistency between the reference answer and the candidate answer.\n";
  p += "Score 1 means the candidate fully matches the reference; 0 means it contradicts or "
       "misses it.\n\n";
  p += "Reference answer:\n" + reference + "\n\n";
  p += "Candidate answer:\n" + answer + "\n\n";
  p += "Reply with a single number between 0 and 1.";
  return p;
}

std::string hallucination_prompt(const std::string& question, const std::string& answer,
                                 const std::string& trajectory) {
  std::string p;
  p += "Judge whether the answer makes claims that the trajectory evidence does not support.\n";
  p += "Score 1 means fully unsupported; 0 means fully grounded in the evidence.\n\n";
  p += "Question:\n" + question + "\n\n";
  p += "Trajectory:\n" + trajectory + "\n\n";
  p += "Answer:\n" + answer + "\n\n";
  p += "Reply with a single number between 0 and 1.";
  return p;
}

namespace {

double ask_judge(TextBackend& judge, const std::string& prompt) {
  CompletionRequest req;
  req.prompt = prompt;
  return parse_judge_score(judge.complete(req));
}

std::string fold_trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out;
  out.reserve(e - b);
  for (size_t i = b; i < e; ++i)
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[i]))));
  return out;
}

}  // namespace

double answer_consistency(const std::string& reference, const std::string& answer,
                          TextBackend& judge) {
  return ask_judge(judge, consistency_prompt(reference, answer));
}

double hallucination_score(const std::string& question, const std::string& answer,
                           const std::string& trajectory, TextBackend& judge) {
  return ask_judge(judge, hallucination_prompt(question, answer, trajectory));
}

double choice_match_score(const std::string& predicted, const std::string& correct,
                          TextBackend* judge) {
  if (fold_trim(predicted) == fold_trim(correct)) return 1.0;
  if (!judge) return 0.0;
  return ask_judge(*judge, consistency_prompt(correct, predicted));
}

GroundTruth read_ground_truth_file(const std::string& path) {
  std::ifstream in = detail::open_for_read(path);
  std::vector<std::string> lines = detail::read_lines(in);
  GroundTruth truth;
  for (size_t i = 0; i < lines.size(); ++i) {
    json v = detail::parse_line(lines[i], i + 1);
    if (!v.is_object()) throw ParseError(i + 1, "ground truth entry must be a JSON object");
    GroundTruthEntry e;
    if (!v.contains("sample_id") || !v["sample_id"].is_string())
      throw InvariantError(i + 1, "sample_id", "must be a string");
    e.sample_id = v["sample_id"].get<std::string>();
    if (v.contains("expected_tools") && !v["expected_tools"].is_null()) {
      if (!v["expected_tools"].is_array())
        throw InvariantError(i + 1, "expected_tools", "must be an array");
      std::set<std::string> tools;
      for (const auto& t : v["expected_tools"]) {
        if (!t.is_string())
          throw InvariantError(i + 1, "expected_tools", "entries must be strings");
        tools.insert(t.get<std::string>());
      }
      e.expected_tools = std::move(tools);
    }
    if (v.contains("reference_answer") && v["reference_answer"].is_string())
      e.reference_answer = v["reference_answer"].get<std::string>();
    if (v.contains("mc_correct") && v["mc_correct"].is_string())
      e.mc_correct = v["mc_correct"].get<std::string>();
    if (v.contains("subtask") && v["subtask"].is_string())
      e.subtask = v["subtask"].get<std::string>();
    if (!truth.emplace(e.sample_id, e).second)
      throw InvariantError(i + 1, "sample_id", "duplicate sample id '" + e.sample_id + "'");
  }
  return truth;
}

json MetricReport::to_json() const {
  json v = json::object();
  v["tss"] = tss;
  v["trr"] = trr;
  if (tcf1) {
    json t = json::object();
    t["precision"] = tcf1->precision;
    t["recall"] = tcf1->recall;
    t["f1"] = tcf1->f1;
    v["tcf1"] = std::move(t);
  } else {
    v["tcf1"] = nullptr;
  }
  v["acs"] = acs ? json(*acs) : json(nullptr);
  v["hr"] = hr ? json(*hr) : json(nullptr);
  if (mc_f1) {
    json m = json::object();
    for (const auto& [k, s] : *mc_f1) m[k] = s;
    v["mc_f1"] = std::move(m);
  } else {
    v["mc_f1"] = nullptr;
  }
  v["n"] = n;
  return v;
}

MetricReport evaluate_dataset(const std::vector<RunRecord>& runs, const GroundTruth* truth,
                              TextBackend* judge, double trr_theta) {
  MetricReport report;
  report.n = runs.size();
  if (runs.empty()) return report;

  std::set<std::string> seen_ids;
  for (const auto& r : runs) {
    if (!seen_ids.insert(r.sample_id()).second)
      throw ShapeMismatch("duplicate sample id '" + r.sample_id() + "' in runs");
    if (truth && !truth->count(r.sample_id()))
      throw ShapeMismatch("sample id '" + r.sample_id() + "' missing from ground truth");
  }

  double tss_sum = 0.0, trr_sum = 0.0;
  double p_sum = 0.0, r_sum = 0.0, f_sum = 0.0;
  size_t tcf1_n = 0;
  double acs_sum = 0.0;
  size_t acs_n = 0;
  double hr_sum = 0.0;
  size_t hr_n = 0;
  std::map<std::string, std::pair<double, size_t>> mc_acc;

  for (const auto& run : runs) {
    std::vector<ToolCallRecord> calls;
    for (const auto& c : run.component_runs)
      calls.insert(calls.end(), c.tool_calls.begin(), c.tool_calls.end());

    bool valid = run.termination == Termination::FinalAnswer;
    tss_sum += trajectory_success_score(valid, calls);
    trr_sum += tool_redundancy_rate(calls, trr_theta);

    const GroundTruthEntry* gt = nullptr;
    if (truth) gt = &truth->at(run.sample_id());

    if (gt && gt->expected_tools) {
      std::set<std::string> actual;
      for (const auto& c : calls) actual.insert(c.tool);
      Tcf1 t = tool_consistency_f1(*gt->expected_tools, actual);
      p_sum += t.precision;
      r_sum += t.recall;
      f_sum += t.f1;
      ++tcf1_n;
    }
    if (gt && gt->reference_answer && judge) {
      acs_sum += answer_consistency(*gt->reference_answer, run.final_answer, *judge);
      ++acs_n;
    }
    if (judge) {
      std::string trajectory_text = render_react(run.planner_trajectory);
      for (const auto& c : run.component_runs) trajectory_text += render_react(c.trajectory);
      double h = hallucination_score(run.query, run.final_answer, trajectory_text, *judge);
      hr_sum += h > 0.5 ? 1.0 : 0.0;
      ++hr_n;
    }
    if (gt && gt->mc_correct) {
      double s = choice_match_score(run.final_answer, *gt->mc_correct, judge);
      auto& slot = mc_acc[gt->subtask];
      slot.first += s;
      slot.second += 1;
    }
  }

  double dn = static_cast<double>(runs.size());
  report.tss = tss_sum / dn;
  report.trr = trr_sum / dn;
  if (tcf1_n > 0) {
    Tcf1 t;
    t.precision = p_sum / static_cast<double>(tcf1_n);
    t.recall = r_sum / static_cast<double>(tcf1_n);
    t.f1 = f_sum / static_cast<double>(tcf1_n);
    report.tcf1 = t;
  }
  if (acs_n > 0) report.acs = acs_sum / static_cast<double>(acs_n);
  if (hr_n > 0) report.hr = hr_sum / static_cast<double>(hr_n);
  if (!mc_acc.empty()) {
    std::map<std::string, double> mc;
    for (const auto& [k, v] : mc_acc) mc[k] = v.first / static_cast<double>(v.second);
    report.mc_f1 = std::move(mc);
  }
  return report;
}

}  // namespace trajkit
