#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajkit/model.hpp"
#include "trajkit/rng.hpp"
#include "trajkit/tools.hpp"

namespace trajkit {

class TextBackend;

struct InsufficientNodes : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadRatios : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AnswererError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Inputs that disagree with each other, e.g. a connection naming a node id
// that is absent from the node list.
struct DataMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- connection discovery ---

// Scores a directed candidate edge, returning (score in [0,1], reasoning).
class PairScorer {
 public:
  virtual ~PairScorer() = default;
  virtual std::pair<double, std::string> score(const AenNode& src, const AenNode& dst) = 0;
};

// Deterministic scorer derived from a content hash; good enough to exercise
// the pipeline without a model in the loop.
class HashPairScorer : public PairScorer {
 public:
  std::pair<double, std::string> score(const AenNode& src, const AenNode& dst) override;
};

class LlmPairScorer : public PairScorer {
 public:
  explicit LlmPairScorer(TextBackend& backend) : backend_(backend) {}
  std::pair<double, std::string> score(const AenNode& src, const AenNode& dst) override;
  static std::string prompt(const AenNode& src, const AenNode& dst);

 private:
  TextBackend& backend_;
};

// True when the nodes reference the same image or at least one has none.
bool image_compatible(const AenNode& a, const AenNode& b);

struct ConnectionParams {
  double threshold = 0.7;
  size_t max_pairs = 1000;          // sampling budget of distinct pairs
  size_t attempts_multiplier = 10;  // total draws allowed = multiplier * max_pairs
  uint64_t seed = 37;
  // Optional semantic gate applied alongside image compatibility.
  std::function<bool(const AenNode&, const AenNode&)> filter;
};

struct DiscoveryStats {
  size_t attempts = 0;
  size_t pairs_evaluated = 0;   // distinct compatible pairs scored
  size_t connections_kept = 0;  // scored at or above the threshold
};

// Samples ordered node pairs uniformly at random, scores compatible unseen
// ones, keeps those meeting the threshold. Result is sorted by descending
// score, ties broken by ascending (src, dst). Requires at least 2 nodes.
std::vector<Connection> discover_connections(const std::vector<AenNode>& nodes,
                                             const ConnectionParams& params, PairScorer& scorer,
                                             DiscoveryStats* stats = nullptr);

// --- trajectory construction ---

struct ConstructionParams {
  size_t max_length = 8;        // max nodes per trajectory
  size_t max_usage = 3;         // max trajectories a node may join
  size_t max_trajectories = 0;  // 0 means unlimited
};

struct Rejection {
  std::string sample_id;
  std::string reason;
};

struct ConstructionResult {
  std::vector<MetaTrajectory> trajectories;
  std::vector<Rejection> rejections;
};

// Builds a natural-language answer from a finished trajectory.
std::string final_answer_prompt(const MetaTrajectory& t, const std::string& query);

// Walks connections in score order, seeding a trajectory from each unused
// pair and greedily extending it along the highest-scoring admissible edges.
// Node usage is capped; seed pairs are consumed, extension edges are not.
ConstructionResult construct_trajectories(const std::vector<AenNode>& nodes,
                                          const std::vector<Connection>& connections,
                                          const ConstructionParams& params,
                                          TextBackend& answerer);

// --- dataset operations ---

struct FilterResult {
  std::vector<MetaTrajectory> kept;
  std::vector<Rejection> rejections;
};

FilterResult filter_trajectories(
    const std::vector<MetaTrajectory>& trajectories, size_t min_nodes = 2, size_t max_nodes = 8,
    const std::function<bool(const MetaTrajectory&)>& predicate = nullptr);

struct SplitRatios {
  double train = 0.85;
  double val = 0.05;
  double test = 0.10;
};

struct SplitResult {
  std::vector<MetaTrajectory> train;
  std::vector<MetaTrajectory> val;
  std::vector<MetaTrajectory> test;
};

// Largest-remainder allocation of the requested counts.
std::vector<size_t> largest_remainder_counts(size_t total, const std::vector<double>& fractions);

// Shuffles deterministically, then partitions by largest-remainder counts.
SplitResult split_dataset(const std::vector<MetaTrajectory>& trajectories,
                          const SplitRatios& ratios, uint64_t seed);

// --- scalability probe ---

struct ProbeStat {
  size_t n = 0;      // node count
  size_t pairs = 0;  // n * (n - 1)
  double mean_max_score = 0.0;
  double stderr_max_score = 0.0;
  double mean_chain_len = 0.0;  // greedy chain length through kept scores
};

// Expected maximum of m i.i.d. uniform(0,1) draws.
double expected_max_uniform(size_t m);

// For each n: samples n*(n-1) scores per trial, recording the max and the
// length of the greedy descending chain above the threshold.
std::vector<ProbeStat> scalability_probe(const std::vector<size_t>& sizes, size_t trials,
                                         double threshold, uint64_t seed);

// --- AEN generation ---

struct GenerateParams {
  size_t max_retries = 1;  // extra attempts after a malformed completion
  int64_t tool_timeout_ms = 300000;
};

// Prompt asking a backend to pick one tool call for a query.
std::string aen_prompt(const std::string& query, const std::optional<std::string>& image,
                       const ToolRegistry& registry);

// One verified query -> action -> observation cycle. The node id is left
// empty for the caller to assign. Throws MalformedOutput when the backend
// never produces an extractable action.
AenNode generate_aen(const std::string& query, const std::optional<std::string>& image,
                     TextBackend& backend, const ToolRegistry& registry,
                     const GenerateParams& params, Clock& clock,
                     TextBackend* parsing_assistant = nullptr);

}  // namespace trajkit
