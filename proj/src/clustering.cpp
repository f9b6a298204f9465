#include "trajkit/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace trajkit {

size_t CooccurrenceMatrix::index_of(const std::string& tool) const {
  for (size_t i = 0; i < tools.size(); ++i)
    if (tools[i] == tool) return i;
  return std::numeric_limits<size_t>::max();
}

CooccurrenceMatrix count_cooccurrence(const std::vector<MetaTrajectory>& trajectories) {
  CooccurrenceMatrix m;
  std::vector<std::vector<size_t>> sequences;
  for (const auto& t : trajectories) {
    std::vector<size_t> seq;  // tool indices of the steps that carry actions
    for (const auto& step : t.steps) {
      if (step.action.empty()) continue;
      size_t idx = m.index_of(step.action);
      if (idx == std::numeric_limits<size_t>::max()) {
        idx = m.tools.size();
        m.tools.push_back(step.action);
      }
      seq.push_back(idx);
    }
    sequences.push_back(std::move(seq));
  }
  m.counts.assign(m.tools.size(), std::vector<uint64_t>(m.tools.size(), 0));
  for (const auto& seq : sequences) {
    for (size_t i = 0; i + 1 < seq.size(); ++i) {
      size_t a = seq[i], b = seq[i + 1];
      m.counts[a][b] += 1;
      if (a != b) m.counts[b][a] += 1;
    }
  }
  return m;
}

std::vector<std::vector<double>> normalize_cooccurrence(const CooccurrenceMatrix& m) {
  const size_t n = m.tools.size();
  std::vector<double> deg(n, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) deg[i] += static_cast<double>(m.counts[i][j]);
  std::vector<std::vector<double>> out(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      if (deg[i] <= 0.0 || deg[j] <= 0.0) continue;
      out[i][j] = static_cast<double>(m.counts[i][j]) / std::sqrt(deg[i] * deg[j]);
    }
  return out;
}

namespace {

double average_linkage(const std::vector<size_t>& a, const std::vector<size_t>& b,
                       const std::vector<std::vector<double>>& norm) {
  double sum = 0.0;
  for (size_t x : a)
    for (size_t y : b) sum += norm[x][y];
  return sum / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

}  // namespace

std::vector<ToolCluster> cluster_tools(const CooccurrenceMatrix& m, double min_link) {
  if (m.tools.empty()) throw EmptyMatrix();
  auto norm = normalize_cooccurrence(m);
  std::vector<std::vector<size_t>> clusters;
  for (size_t i = 0; i < m.tools.size(); ++i) clusters.push_back({i});

  while (clusters.size() > 1) {
    double best = -1.0;
    size_t bi = 0, bj = 0;
    for (size_t i = 0; i < clusters.size(); ++i) {
      for (size_t j = i + 1; j < clusters.size(); ++j) {
        double link = average_linkage(clusters[i], clusters[j], norm);
        // Ties resolve toward the pair whose earliest members appeared first.
        size_t lo = std::min(clusters[i][0], clusters[j][0]);
        size_t hi = std::max(clusters[i][0], clusters[j][0]);
        size_t cur_lo = std::min(clusters[bi].empty() ? 0 : clusters[bi][0],
                                 clusters[bj].empty() ? 0 : clusters[bj][0]);
        size_t cur_hi = std::max(clusters[bi].empty() ? 0 : clusters[bi][0],
                                 clusters[bj].empty() ? 0 : clusters[bj][0]);
        if (link > best ||
            (link == best && (lo < cur_lo || (lo == cur_lo && hi < cur_hi)))) {
          best = link;
          bi = i;
          bj = j;
        }
      }
    }
    if (best < min_link) break;
    std::vector<size_t> merged = clusters[bi];
    merged.insert(merged.end(), clusters[bj].begin(), clusters[bj].end());
    std::sort(merged.begin(), merged.end());
    clusters.erase(clusters.begin() + static_cast<ptrdiff_t>(bj));
    clusters[bi] = std::move(merged);
  }

  std::sort(clusters.begin(), clusters.end(),
            [&](const std::vector<size_t>& a, const std::vector<size_t>& b) {
              if (a.size() != b.size()) return a.size() > b.size();
              return m.tools[a[0]] < m.tools[b[0]];
            });
  std::vector<ToolCluster> out;
  for (size_t i = 0; i < clusters.size(); ++i) {
    ToolCluster c;
    c.agent_name = "Agent" + std::to_string(i + 1);
    for (size_t idx : clusters[i]) c.tools.push_back(m.tools[idx]);
    out.push_back(std::move(c));
  }
  return out;
}

json clusters_to_json(const std::vector<ToolCluster>& clusters) {
  json arr = json::array();
  for (const auto& c : clusters) {
    json e = json::object();
    e["agent_name"] = c.agent_name;
    json tools = json::array();
    for (const auto& t : c.tools) tools.push_back(t);
    e["tools"] = std::move(tools);
    arr.push_back(std::move(e));
  }
  json v = json::object();
  v["clusters"] = std::move(arr);
  return v;
}

std::vector<ToolCluster> clusters_from_json(const json& v) {
  if (!v.is_object() || !v.contains("clusters") || !v["clusters"].is_array())
    throw InvariantError(0, "clusters", "must be an array");
  std::vector<ToolCluster> out;
  std::set<std::string> seen_tools;
  std::set<std::string> seen_names;
  for (const auto& e : v["clusters"]) {
    if (!e.is_object()) throw InvariantError(0, "clusters", "entries must be objects");
    ToolCluster c;
    if (!e.contains("agent_name") || !e["agent_name"].is_string() ||
        e["agent_name"].get<std::string>().empty())
      throw InvariantError(0, "agent_name", "must be a non-empty string");
    c.agent_name = e["agent_name"].get<std::string>();
    if (!seen_names.insert(c.agent_name).second)
      throw InvariantError(0, "agent_name", "duplicate agent name '" + c.agent_name + "'");
    if (!e.contains("tools") || !e["tools"].is_array())
      throw InvariantError(0, "tools", "must be an array");
    for (const auto& t : e["tools"]) {
      if (!t.is_string()) throw InvariantError(0, "tools", "entries must be strings");
      std::string name = t.get<std::string>();
      if (!seen_tools.insert(name).second)
        throw InvariantError(0, "tools", "tool '" + name + "' appears in multiple clusters");
      c.tools.push_back(std::move(name));
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace trajkit
