#include "trajkit/engine.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

#include "trajkit/backend.hpp"
#include "trajkit/react.hpp"

namespace trajkit {

namespace {

uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

// --- scorers ---

std::pair<double, std::string> HashPairScorer::score(const AenNode& src, const AenNode& dst) {
  uint64_t h = fnv1a(dst.id, fnv1a("\x1f", fnv1a(src.id)));
  double s = static_cast<double>(h >> 11) * 0x1.0p-53;
  return {s, "Follows from " + src.id + " to " + dst.id + "."};
}

std::string LlmPairScorer::prompt(const AenNode& src, const AenNode& dst) {
  auto render = [](const AenNode& n) {
    std::string out;
    out += "Query: " + n.query + "\n";
    out += "Action: " + n.action + "\n";
    out += "Action Input: " + (n.action_input.parsed ? n.action_input.parsed->dump()
                                                     : n.action_input.raw) +
           "\n";
    out += "Observation: " + n.observation + "\n";
    return out;
  };
  std::string p;
  p += "Decide whether the second execution step could plausibly follow the first in a single "
       "reasoning chain.\n\n";
  p += "Step A:\n" + render(src) + "\nStep B:\n" + render(dst);
  p += "\nReply with a JSON object: {\"score\": <number between 0 and 1>, \"reasoning\": "
       "\"<one sentence>\"}";
  return p;
}

std::pair<double, std::string> LlmPairScorer::score(const AenNode& src, const AenNode& dst) {
  CompletionRequest req;
  req.prompt = prompt(src, dst);
  std::string reply = backend_.complete(req);
  json v = json::parse(reply, nullptr, false);
  double s = 0.0;
  std::string reasoning = trim(reply);
  if (v.is_object() && v.contains("score") && v["score"].is_number()) {
    s = v["score"].get<double>();
    if (v.contains("reasoning") && v["reasoning"].is_string())
      reasoning = v["reasoning"].get<std::string>();
  } else {
    // Fall back to the first number in the reply.
    size_t i = reply.find_first_of("0123456789");
    if (i != std::string::npos) {
      try {
        s = std::stod(reply.substr(i));
      } catch (...) {
        s = 0.0;
      }
    }
  }
  if (!std::isfinite(s)) s = 0.0;
  s = std::clamp(s, 0.0, 1.0);
  return {s, reasoning};
}

bool image_compatible(const AenNode& a, const AenNode& b) {
  // Incompatible only when both carry images and they differ.
  return !(a.image && b.image && *a.image != *b.image);
}

// --- connection discovery ---

std::vector<Connection> discover_connections(const std::vector<AenNode>& nodes,
                                             const ConnectionParams& params, PairScorer& scorer,
                                             DiscoveryStats* stats) {
  const size_t n = nodes.size();
  if (n < 2)
    throw InsufficientNodes("connection discovery needs at least 2 nodes, got " +
                            std::to_string(n));
  Rng rng(params.seed);
  std::set<std::pair<size_t, size_t>> evaluated;
  std::vector<Connection> kept;
  const size_t max_attempts = params.attempts_multiplier * params.max_pairs;
  size_t attempts = 0;
  while (evaluated.size() < params.max_pairs && attempts < max_attempts) {
    auto [i, j] = rng.ordered_pair(n);
    ++attempts;
    if (evaluated.count({i, j})) continue;
    if (!image_compatible(nodes[i], nodes[j])) continue;
    if (params.filter && !params.filter(nodes[i], nodes[j])) continue;
    evaluated.insert({i, j});
    auto [s, reasoning] = scorer.score(nodes[i], nodes[j]);
    s = std::clamp(s, 0.0, 1.0);
    if (s >= params.threshold) {
      Connection c;
      c.src = nodes[i].id;
      c.dst = nodes[j].id;
      c.score = s;
      c.reasoning = std::move(reasoning);
      kept.push_back(std::move(c));
    }
  }
  std::sort(kept.begin(), kept.end(), [](const Connection& a, const Connection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.src != b.src) return a.src < b.src;
    return a.dst < b.dst;
  });
  if (stats) {
    stats->attempts = attempts;
    stats->pairs_evaluated = evaluated.size();
    stats->connections_kept = kept.size();
  }
  return kept;
}

// --- trajectory construction ---

std::string final_answer_prompt(const MetaTrajectory& t, const std::string& query) {
  MetaTrajectory body = t;
  body.final_answer.clear();
  std::string p;
  p += "Query: " + query + "\n\n";
  p += render_react(body);
  p += "\nNow provide the Final Answer to the original query.";
  return p;
}

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += "_";
    out += ids[i];
  }
  return out;
}

TrajectoryStep step_from_node(const AenNode& n, int64_t index, const std::string& thought) {
  TrajectoryStep s;
  s.index = index;
  s.thought = thought;
  s.action = n.action;
  s.action_input = n.action_input;
  s.observation = n.observation;
  return s;
}

}  // namespace

ConstructionResult construct_trajectories(const std::vector<AenNode>& nodes,
                                          const std::vector<Connection>& connections,
                                          const ConstructionParams& params,
                                          TextBackend& answerer) {
  std::map<std::string, const AenNode*> by_id;
  for (const auto& n : nodes) by_id[n.id] = &n;
  for (const auto& c : connections) {
    if (!by_id.count(c.src))
      throw DataMismatch("connection references unknown node id '" + c.src + "'");
    if (!by_id.count(c.dst))
      throw DataMismatch("connection references unknown node id '" + c.dst + "'");
  }
  // Connections arrive sorted by descending score; per-source index slices
  // preserve that order, so the first admissible entry is the argmax.
  std::map<std::string, std::vector<size_t>> out_edges;
  for (size_t i = 0; i < connections.size(); ++i)
    out_edges[connections[i].src].push_back(i);

  std::map<std::string, size_t> usage;
  std::set<std::pair<std::string, std::string>> used_pairs;
  ConstructionResult result;

  for (const auto& seed : connections) {
    if (params.max_trajectories > 0 && result.trajectories.size() >= params.max_trajectories)
      break;
    if (used_pairs.count({seed.src, seed.dst})) continue;
    if (usage[seed.src] >= params.max_usage || usage[seed.dst] >= params.max_usage) continue;

    const AenNode& first = *by_id[seed.src];
    const AenNode& second = *by_id[seed.dst];
    std::vector<std::string> ids = {first.id, second.id};
    std::set<std::string> members(ids.begin(), ids.end());

    MetaTrajectory t;
    t.image = first.image ? first.image : second.image;
    t.steps.push_back(step_from_node(first, 1, first.query));
    t.steps.push_back(step_from_node(second, 2, seed.reasoning));

    std::string current = second.id;
    while (t.steps.size() < params.max_length) {
      const Connection* best = nullptr;
      auto it = out_edges.find(current);
      if (it != out_edges.end()) {
        for (size_t idx : it->second) {
          const Connection& c = connections[idx];
          if (members.count(c.dst)) continue;
          if (usage[c.dst] >= params.max_usage) continue;
          best = &c;
          break;
        }
      }
      if (!best || best->score == 0.0) break;
      const AenNode& node = *by_id[best->dst];
      ids.push_back(node.id);
      members.insert(node.id);
      t.steps.push_back(
          step_from_node(node, static_cast<int64_t>(t.steps.size()) + 1, best->reasoning));
      current = node.id;
    }

    t.sample_id = join_ids(ids);
    CompletionRequest req;
    req.prompt = final_answer_prompt(t, first.query);
    if (t.image) req.images.push_back(*t.image);
    try {
      std::string reply = answerer.complete(req);
      auto segments = parse_transcript(reply);
      std::string answer;
      for (const auto& seg : segments)
        if (seg.kind == SegmentKind::FinalAnswer) answer = trim(seg.content);
      t.final_answer = answer.empty() ? trim(reply) : answer;
      if (t.final_answer.empty()) t.final_answer = reply;
    } catch (const BackendError& e) {
      result.rejections.push_back({t.sample_id, std::string("answerer failed: ") + e.what()});
      continue;
    }

    used_pairs.insert({seed.src, seed.dst});
    for (const auto& id : ids) ++usage[id];
    result.trajectories.push_back(std::move(t));
  }
  return result;
}

// --- dataset operations ---

FilterResult filter_trajectories(const std::vector<MetaTrajectory>& trajectories,
                                 size_t min_nodes, size_t max_nodes,
                                 const std::function<bool(const MetaTrajectory&)>& predicate) {
  FilterResult r;
  for (const auto& t : trajectories) {
    size_t n = t.steps.size();
    if (n < min_nodes || n > max_nodes) {
      r.rejections.push_back({t.sample_id, "node count " + std::to_string(n) + " outside [" +
                                               std::to_string(min_nodes) + ", " +
                                               std::to_string(max_nodes) + "]"});
      continue;
    }
    if (predicate && !predicate(t)) {
      r.rejections.push_back({t.sample_id, "rejected by quality predicate"});
      continue;
    }
    r.kept.push_back(t);
  }
  return r;
}

std::vector<size_t> largest_remainder_counts(size_t total, const std::vector<double>& fractions) {
  if (fractions.empty()) throw BadRatios("no fractions given");
  double sum = 0.0;
  for (double f : fractions) {
    if (!std::isfinite(f) || f < 0.0) throw BadRatios("fractions must be non-negative");
    sum += f;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw BadRatios("fractions must sum to 1");
  std::vector<size_t> counts(fractions.size());
  std::vector<double> remainders(fractions.size());
  size_t assigned = 0;
  for (size_t i = 0; i < fractions.size(); ++i) {
    double exact = static_cast<double>(total) * fractions[i];
    counts[i] = static_cast<size_t>(std::floor(exact));
    remainders[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  std::vector<size_t> order(fractions.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (remainders[a] != remainders[b]) return remainders[a] > remainders[b];
    return a < b;
  });
  for (size_t k = 0; assigned < total; ++k, ++assigned) counts[order[k % order.size()]] += 1;
  return counts;
}

SplitResult split_dataset(const std::vector<MetaTrajectory>& trajectories,
                          const SplitRatios& ratios, uint64_t seed) {
  std::vector<size_t> counts =
      largest_remainder_counts(trajectories.size(), {ratios.train, ratios.val, ratios.test});
  std::vector<MetaTrajectory> shuffled = trajectories;
  Rng rng(seed);
  rng.shuffle(shuffled);
  SplitResult r;
  size_t pos = 0;
  r.train.assign(shuffled.begin(), shuffled.begin() + static_cast<ptrdiff_t>(counts[0]));
  pos += counts[0];
  r.val.assign(shuffled.begin() + static_cast<ptrdiff_t>(pos),
               shuffled.begin() + static_cast<ptrdiff_t>(pos + counts[1]));
  pos += counts[1];
  r.test.assign(shuffled.begin() + static_cast<ptrdiff_t>(pos), shuffled.end());
  return r;
}

// --- scalability probe ---

double expected_max_uniform(size_t m) {
  return static_cast<double>(m) / (static_cast<double>(m) + 1.0);
}

std::vector<ProbeStat> scalability_probe(const std::vector<size_t>& sizes, size_t trials,
                                         double threshold, uint64_t seed) {
  Rng rng(seed);
  std::vector<ProbeStat> out;
  for (size_t n : sizes) {
    ProbeStat stat;
    stat.n = n;
    stat.pairs = n < 2 ? 0 : n * (n - 1);
    std::vector<double> maxima;
    maxima.reserve(trials);
    double chain_sum = 0.0;
    for (size_t t = 0; t < trials; ++t) {
      double best = 0.0;
      size_t above = 0;
      for (size_t k = 0; k < stat.pairs; ++k) {
        double s = rng.uniform();
        if (s > best) best = s;
        if (s >= threshold) ++above;
      }
      maxima.push_back(best);
      chain_sum += static_cast<double>(above);
    }
    double mean = 0.0;
    for (double m : maxima) mean += m;
    mean = maxima.empty() ? 0.0 : mean / static_cast<double>(maxima.size());
    double var = 0.0;
    for (double m : maxima) var += (m - mean) * (m - mean);
    var = maxima.size() > 1 ? var / static_cast<double>(maxima.size() - 1) : 0.0;
    stat.mean_max_score = mean;
    stat.stderr_max_score =
        maxima.empty() ? 0.0 : std::sqrt(var / static_cast<double>(maxima.size()));
    stat.mean_chain_len = trials == 0 ? 0.0 : chain_sum / static_cast<double>(trials);
    out.push_back(stat);
  }
  return out;
}

// --- AEN generation ---

std::string aen_prompt(const std::string& query, const std::optional<std::string>& image,
                       const ToolRegistry& registry) {
  std::string p;
  p += "Answer the following query with exactly one tool call.\n\n";
  p += "Available tools:\n";
  for (const auto& spec : registry.specs())
    p += "- " + spec.name + ": " + spec.description + "\n";
  p += "\nUse the format:\nThought: why this tool answers the query\nAction: the tool name, one "
       "of [";
  auto names = registry.names();
  for (size_t i = 0; i < names.size(); ++i) {
    if (i) p += ", ";
    p += names[i];
  }
  p += "]\nAction Input: a JSON object of tool arguments\n\n";
  p += "Query: " + query + "\n";
  if (image) p += "Image: " + *image + "\n";
  p += "Thought: ";
  return p;
}

AenNode generate_aen(const std::string& query, const std::optional<std::string>& image,
                     TextBackend& backend, const ToolRegistry& registry,
                     const GenerateParams& params, Clock& clock,
                     TextBackend* parsing_assistant) {
  CompletionRequest req;
  req.prompt = aen_prompt(query, image, registry);
  if (image) req.images.push_back(*image);

  const size_t attempts = 1 + params.max_retries;
  for (size_t attempt = 0; attempt < attempts; ++attempt) {
    std::string reply = backend.complete(req);
    auto segments = parse_transcript(reply);
    auto extracted = extract_action(segments);
    if (extracted.status != ExtractStatus::Ok) continue;

    AenNode node;
    node.query = query;
    node.image = image;
    node.action = extracted.value.action;
    const ToolSpec* spec = registry.find(node.action);
    if (!spec) {
      node.action_input = ActionInput::from_raw(extracted.value.raw_input);
      node.observation = invalid_tool_message(node.action, registry.names());
      return node;
    }
    CoerceResult coerced =
        coerce_action_input(extracted.value.raw_input, spec->schema, parsing_assistant);
    if (coerced.status != CoerceResult::Status::Ok) {
      node.action_input = ActionInput::from_raw(extracted.value.raw_input);
      node.observation = coerced.error;
      return node;
    }
    node.action_input = ActionInput::from_parsed(coerced.value);
    ToolCallRecord record =
        execute_tool(node.action, coerced.value, registry, params.tool_timeout_ms, clock);
    node.observation = record.observation;
    return node;
  }
  throw MalformedOutput("backend produced no parsable action in " + std::to_string(attempts) +
                        " attempt(s)");
}

}  // namespace trajkit
