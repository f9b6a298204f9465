#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajkit/model.hpp"

namespace trajkit {

struct EmptyMatrix : std::runtime_error {
  EmptyMatrix() : std::runtime_error("co-occurrence matrix has no tools") {}
};

// Symmetric sequential co-occurrence counts. counts[a][b] is the number of
// adjacent (step i, step i+1) action pairs {a,b} across the corpus; the
// diagonal counts self-adjacency. Tool order is first appearance.
struct CooccurrenceMatrix {
  std::vector<std::string> tools;
  std::vector<std::vector<uint64_t>> counts;

  size_t index_of(const std::string& tool) const;  // npos when absent
};

CooccurrenceMatrix count_cooccurrence(const std::vector<MetaTrajectory>& trajectories);

// counts[a][b] / sqrt(deg(a) * deg(b)), where deg is the row sum. Rows with
// zero degree normalize to zero.
std::vector<std::vector<double>> normalize_cooccurrence(const CooccurrenceMatrix& m);

struct ToolCluster {
  std::string agent_name;
  std::vector<std::string> tools;
};

// Agglomerative clustering with average linkage over the normalized matrix.
// Merging stops when the best linkage falls below min_link. Clusters are
// ordered by descending size, then by first tool name; members keep first-
// appearance order. Agent names are assigned Agent1, Agent2, ...
// Throws EmptyMatrix when the matrix has no tools.
std::vector<ToolCluster> cluster_tools(const CooccurrenceMatrix& matrix,
                                       double min_link = 0.1);

json clusters_to_json(const std::vector<ToolCluster>& clusters);
std::vector<ToolCluster> clusters_from_json(const json& v);

}  // namespace trajkit
