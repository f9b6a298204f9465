#include <doctest.h>

#include <map>
#include <set>

#include "oracles.hpp"
#include "trajkit/backend.hpp"
#include "trajkit/engine.hpp"
#include "trajkit/react.hpp"

using namespace trajkit;

namespace {

AenNode node(const std::string& id, const std::string& image = "") {
  AenNode n;
  n.id = id;
  n.query = "What does " + id + " show?";
  n.action = "DocumentGeneQueryTool";
  n.action_input = ActionInput::from_parsed(json{{"query", id}});
  n.observation = "evidence for " + id;
  if (!image.empty()) n.image = image;
  return n;
}

std::vector<AenNode> make_nodes(size_t n, size_t images = 0) {
  std::vector<AenNode> out;
  for (size_t i = 0; i < n; ++i) {
    std::string img = images ? "img" + std::to_string(i % images) + ".png" : "";
    out.push_back(node("n" + std::to_string(i), img));
  }
  return out;
}

Connection conn(const std::string& s, const std::string& d, double score) {
  Connection c;
  c.src = s;
  c.dst = d;
  c.score = score;
  c.reasoning = s + "->" + d;
  return c;
}

}  // namespace

TEST_CASE("image compatibility rules") {
  AenNode same1 = node("a", "x.png"), same2 = node("b", "x.png");
  AenNode other = node("c", "y.png");
  AenNode text1 = node("d"), text2 = node("e");
  CHECK(image_compatible(same1, same2));
  CHECK(image_compatible(same1, text1));
  CHECK(image_compatible(text1, same1));
  CHECK(image_compatible(text1, text2));
  CHECK_FALSE(image_compatible(same1, other));
}

TEST_CASE("discovery needs at least two nodes") {
  HashPairScorer scorer;
  ConnectionParams p;
  CHECK_THROWS_AS(discover_connections({}, p, scorer), InsufficientNodes);
  CHECK_THROWS_AS(discover_connections(make_nodes(1), p, scorer), InsufficientNodes);
}

TEST_CASE("discovery keeps scores at or above the threshold, sorted") {
  auto nodes = make_nodes(6);
  ConnectionParams p;
  p.threshold = 0.5;
  p.max_pairs = 30;  // exhaustive for n=6
  p.seed = 11;
  HashPairScorer scorer;
  DiscoveryStats stats;
  auto conns = discover_connections(nodes, p, scorer, &stats);
  CHECK(stats.pairs_evaluated == 30);
  CHECK(stats.connections_kept == conns.size());
  CHECK(!conns.empty());
  for (const auto& c : conns) {
    CHECK(c.score >= 0.5);
    CHECK(c.score <= 1.0);
    CHECK(c.src != c.dst);
  }
  for (size_t i = 1; i < conns.size(); ++i) {
    bool ordered = conns[i - 1].score > conns[i].score ||
                   (conns[i - 1].score == conns[i].score &&
                    std::make_pair(conns[i - 1].src, conns[i - 1].dst) <
                        std::make_pair(conns[i].src, conns[i].dst));
    CHECK(ordered);
  }
  // No duplicate pairs.
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& c : conns) CHECK(seen.insert({c.src, c.dst}).second);
}

TEST_CASE("threshold above one keeps nothing but still scores pairs") {
  auto nodes = make_nodes(4);
  ConnectionParams p;
  p.threshold = 1.1;
  p.max_pairs = 12;
  HashPairScorer scorer;
  DiscoveryStats stats;
  auto conns = discover_connections(nodes, p, scorer, &stats);
  CHECK(conns.empty());
  CHECK(stats.pairs_evaluated == 12);
  CHECK(stats.connections_kept == 0);
}

TEST_CASE("incompatible corpus exhausts the attempt budget") {
  std::vector<AenNode> nodes = {node("a", "x.png"), node("b", "y.png")};
  ConnectionParams p;
  p.max_pairs = 5;
  p.attempts_multiplier = 10;
  HashPairScorer scorer;
  DiscoveryStats stats;
  auto conns = discover_connections(nodes, p, scorer, &stats);
  CHECK(conns.empty());
  CHECK(stats.pairs_evaluated == 0);
  CHECK(stats.attempts == 50);
}

TEST_CASE("semantic filter excludes pairs without consuming the pair budget") {
  auto nodes = make_nodes(4);
  ConnectionParams p;
  p.threshold = 0.0;
  p.max_pairs = 12;
  p.filter = [](const AenNode& a, const AenNode&) { return a.id != "n0"; };
  HashPairScorer scorer;
  DiscoveryStats stats;
  auto conns = discover_connections(nodes, p, scorer, &stats);
  for (const auto& c : conns) CHECK(c.src != "n0");
  // 3 sources x 3 destinations pass the filter.
  CHECK(stats.pairs_evaluated == 9);
}

TEST_CASE("discovery matches the independent oracle across seeds") {
  for (uint64_t seed : {1ULL, 7ULL, 37ULL, 101ULL, 9001ULL}) {
    for (size_t n : {2, 3, 5, 8}) {
      auto nodes = make_nodes(n, n >= 5 ? 2 : 0);
      ConnectionParams p;
      p.threshold = 0.4;
      p.max_pairs = n * (n - 1);
      p.seed = seed;
      HashPairScorer scorer;
      DiscoveryStats stats;
      auto got = discover_connections(nodes, p, scorer, &stats);

      oracles::OracleDiscovery want = oracles::oracle_discover(
          nodes, 0.4, n * (n - 1), 10, seed, [](const AenNode& a, const AenNode& b) {
            HashPairScorer s;
            auto [v, why] = s.score(a, b);
            return oracles::OracleScore{v, why};
          });
      REQUIRE(got.size() == want.kept.size());
      for (size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].src == want.kept[i].src);
        CHECK(got[i].dst == want.kept[i].dst);
        CHECK(got[i].score == doctest::Approx(want.kept[i].score).epsilon(1e-15));
      }
      CHECK(stats.attempts == want.attempts);
      CHECK(stats.pairs_evaluated == want.evaluated);
    }
  }
}

TEST_CASE("construction follows the sorted edges and reuses nodes up to the cap") {
  auto nodes = make_nodes(4);
  // a->b seeds; best extension from b is b->c, then c->d.
  std::vector<Connection> conns = {
      conn("n0", "n1", 0.95), conn("n1", "n2", 0.9), conn("n2", "n3", 0.85),
      conn("n1", "n3", 0.5),
  };
  ConstructionParams p;
  CannedBackend answerer("Final Answer: combined evidence.");
  auto r = construct_trajectories(nodes, conns, p, answerer);
  // Seeds in score order: (n0,n1) -> extends to n2 then n3.
  // (n1,n2) second seed: n2 extends to... n3 already used twice? usage caps at 3.
  REQUIRE(!r.trajectories.empty());
  const MetaTrajectory& t = r.trajectories[0];
  REQUIRE(t.steps.size() == 4);
  CHECK(t.sample_id == "n0_n1_n2_n3");
  CHECK(t.steps[0].action == "DocumentGeneQueryTool");
  CHECK(t.steps[0].thought == nodes[0].query);
  CHECK(t.steps[1].thought == "n0->n1");
  CHECK(t.steps[2].thought == "n1->n2");
  CHECK(t.steps[3].thought == "n2->n3");
  CHECK(t.final_answer == "combined evidence.");
  for (size_t i = 0; i < t.steps.size(); ++i) CHECK(t.steps[i].index == int64_t(i + 1));
}

TEST_CASE("node usage never exceeds the cap and seed pairs are unique") {
  auto nodes = make_nodes(10);
  std::vector<Connection> conns;
  double s = 0.99;
  for (size_t i = 0; i < 10; ++i)
    for (size_t j = 0; j < 10; ++j)
      if (i != j) conns.push_back(conn("n" + std::to_string(i), "n" + std::to_string(j), s -= 0.001));
  std::sort(conns.begin(), conns.end(),
            [](const Connection& a, const Connection& b) { return a.score > b.score; });
  ConstructionParams p;
  CannedBackend answerer("done");
  auto r = construct_trajectories(nodes, conns, p, answerer);
  std::map<std::string, size_t> usage;
  std::set<std::pair<std::string, std::string>> seeds;
  for (const auto& t : r.trajectories) {
    REQUIRE(t.steps.size() >= 2);
    CHECK(t.steps.size() <= p.max_length);
    std::set<std::string> members;
    for (const auto& step : t.steps) {
      // Recover node ids from the sample id.
      (void)step;
    }
    // sample_id joins member ids with '_'; members are unique per trajectory.
    std::vector<std::string> ids;
    std::string cur;
    for (char c : t.sample_id + "_") {
      if (c == '_') {
        ids.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    for (const auto& id : ids) {
      CHECK(members.insert(id).second);
      ++usage[id];
    }
    CHECK(seeds.insert({ids[0], ids[1]}).second);
  }
  for (const auto& [id, count] : usage) {
    INFO("node ", id);
    CHECK(count <= p.max_usage);
  }
}

TEST_CASE("max_trajectories truncates construction") {
  auto nodes = make_nodes(8);
  std::vector<Connection> conns;
  for (size_t i = 0; i + 1 < 8; ++i)
    conns.push_back(conn("n" + std::to_string(i), "n" + std::to_string(i + 1), 0.9 - 0.01 * i));
  ConstructionParams p;
  p.max_trajectories = 2;
  CannedBackend answerer("ok");
  auto r = construct_trajectories(nodes, conns, p, answerer);
  CHECK(r.trajectories.size() == 2);
}

TEST_CASE("a zero-score edge never extends a trajectory but may still seed one") {
  auto nodes = make_nodes(3);
  std::vector<Connection> conns = {conn("n0", "n1", 0.9), conn("n1", "n2", 0.0)};
  ConstructionParams p;
  CannedBackend answerer("ok");
  auto r = construct_trajectories(nodes, conns, p, answerer);
  REQUIRE(r.trajectories.size() == 2);
  // The first trajectory refuses the zero-score extension out of n1.
  CHECK(r.trajectories[0].sample_id == "n0_n1");
  // The zero-score connection still seeds its own pair afterwards.
  CHECK(r.trajectories[1].sample_id == "n1_n2");
}

TEST_CASE("max_length caps extension") {
  auto nodes = make_nodes(12);
  std::vector<Connection> conns;
  for (size_t i = 0; i + 1 < 12; ++i)
    conns.push_back(conn("n" + std::to_string(i), "n" + std::to_string(i + 1), 0.99 - 0.001 * i));
  ConstructionParams p;
  p.max_length = 8;
  p.max_trajectories = 1;
  CannedBackend answerer("ok");
  auto r = construct_trajectories(nodes, conns, p, answerer);
  REQUIRE(r.trajectories.size() == 1);
  CHECK(r.trajectories[0].steps.size() == 8);
}

TEST_CASE("connections naming unknown nodes are a data mismatch") {
  auto nodes = make_nodes(2);
  std::vector<Connection> conns = {conn("n0", "ghost", 0.9)};
  ConstructionParams p;
  CannedBackend answerer("ok");
  CHECK_THROWS_WITH_AS(construct_trajectories(nodes, conns, p, answerer),
                       "connection references unknown node id 'ghost'", DataMismatch);
}

TEST_CASE("trajectory image comes from the first node that has one") {
  std::vector<AenNode> nodes = {node("a"), node("b", "slide.png")};
  std::vector<Connection> conns = {conn("a", "b", 0.9)};
  ConstructionParams p;
  CannedBackend answerer("ok");
  auto r = construct_trajectories(nodes, conns, p, answerer);
  REQUIRE(r.trajectories.size() == 1);
  CHECK(r.trajectories[0].image == "slide.png");

  std::vector<AenNode> both = {node("a", "first.png"), node("b", "first.png")};
  auto r2 = construct_trajectories(both, {conn("a", "b", 0.9)}, p, answerer);
  CHECK(r2.trajectories[0].image == "first.png");

  std::vector<AenNode> none = {node("a"), node("b")};
  auto r3 = construct_trajectories(none, {conn("a", "b", 0.9)}, p, answerer);
  CHECK_FALSE(r3.trajectories[0].image.has_value());
}

TEST_CASE("answerer reply parsing prefers the last final answer segment") {
  auto nodes = make_nodes(2);
  std::vector<Connection> conns = {conn("n0", "n1", 0.9)};
  ConstructionParams p;

  CannedBackend markers("Thought: wrap up\nFinal Answer: first\nFinal Answer:   the real one  \n");
  auto r1 = construct_trajectories(nodes, conns, p, markers);
  CHECK(r1.trajectories[0].final_answer == "the real one");

  CannedBackend plain("  plain text answer \n");
  auto r2 = construct_trajectories(nodes, conns, p, plain);
  CHECK(r2.trajectories[0].final_answer == "plain text answer");

  CannedBackend blank("   \n  ");
  auto r3 = construct_trajectories(nodes, conns, p, blank);
  CHECK(r3.trajectories[0].final_answer == "   \n  ");
}

TEST_CASE("answerer failures reject the trajectory and release its nodes") {
  auto nodes = make_nodes(2);
  std::vector<Connection> conns = {conn("n0", "n1", 0.9), conn("n0", "n1", 0.8)};
  // Note: same pair twice; after the failed first attempt the seed must not
  // be marked used, so the second connection seeds the same pair and works.
  ConstructionParams p;
  class FailOnce : public TextBackend {
   public:
    std::string complete(const CompletionRequest&) override {
      if (!failed_) {
        failed_ = true;
        throw TransportError("socket closed");
      }
      return "recovered";
    }

   private:
    bool failed_ = false;
  };
  FailOnce answerer;
  auto r = construct_trajectories(nodes, conns, p, answerer);
  REQUIRE(r.rejections.size() == 1);
  CHECK(r.rejections[0].sample_id == "n0_n1");
  CHECK(r.rejections[0].reason == "answerer failed: socket closed");
  REQUIRE(r.trajectories.size() == 1);
  CHECK(r.trajectories[0].final_answer == "recovered");
}

TEST_CASE("construction matches the oracle on exhaustive hash-scored corpora") {
  for (uint64_t seed : {3ULL, 42ULL, 512ULL}) {
    auto nodes = make_nodes(9, 3);
    ConnectionParams dp;
    dp.threshold = 0.2;
    dp.max_pairs = 9 * 8;
    dp.seed = seed;
    HashPairScorer scorer;
    auto conns = discover_connections(nodes, dp, scorer);

    ConstructionParams cp;
    CannedBackend answerer("Final Answer: synthesized");
    auto got = construct_trajectories(nodes, conns, cp, answerer);
    auto want = oracles::oracle_construct(nodes, conns, cp.max_length, cp.max_usage, 0);

    REQUIRE(got.trajectories.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) {
      const auto& g = got.trajectories[i];
      const auto& w = want[i];
      REQUIRE(g.steps.size() == w.ids.size());
      std::string joined;
      for (size_t k = 0; k < w.ids.size(); ++k) joined += (k ? "_" : "") + w.ids[k];
      CHECK(g.sample_id == joined);
      for (size_t k = 0; k < g.steps.size(); ++k) CHECK(g.steps[k].thought == w.thoughts[k]);
      if (w.image.empty())
        CHECK_FALSE(g.image.has_value());
      else
        CHECK(g.image == w.image);
    }
  }
}

TEST_CASE("filter enforces node count bounds and a custom predicate") {
  std::vector<MetaTrajectory> ts;
  for (size_t len : {1, 2, 5, 8, 9}) {
    MetaTrajectory t;
    t.sample_id = "len" + std::to_string(len);
    for (size_t i = 1; i <= len; ++i) {
      TrajectoryStep s;
      s.index = int64_t(i);
      s.thought = "t";
      s.action = "DocumentGeneQueryTool";
      s.action_input = ActionInput::from_raw("q");
      s.observation = "o";
      t.steps.push_back(s);
    }
    t.final_answer = "a";
    ts.push_back(t);
  }
  auto r = filter_trajectories(ts);
  CHECK(r.kept.size() == 3);
  CHECK(r.rejections.size() == 2);
  for (const auto& rej : r.rejections)
    CHECK((rej.sample_id == "len1" || rej.sample_id == "len9"));

  auto pred = filter_trajectories(
      ts, 2, 8, [](const MetaTrajectory& t) { return t.sample_id != "len5"; });
  CHECK(pred.kept.size() == 2);
  CHECK(pred.rejections.size() == 3);
}

TEST_CASE("largest remainder allocation") {
  auto got = largest_remainder_counts(6818, {0.85, 0.05, 0.10});
  REQUIRE(got.size() == 3);
  CHECK(got[0] == 5795);
  CHECK(got[1] == 341);
  CHECK(got[2] == 682);

  auto oracle = oracles::oracle_largest_remainder(6818, {0.85, 0.05, 0.10});
  CHECK(got == oracle);

  CHECK(largest_remainder_counts(10, {0.0, 0.0, 1.0}) == std::vector<size_t>({0, 0, 10}));
  CHECK(largest_remainder_counts(0, {0.85, 0.05, 0.10}) == std::vector<size_t>({0, 0, 0}));
  CHECK(largest_remainder_counts(1, {0.5, 0.5}) == std::vector<size_t>({1, 0}));

  CHECK_THROWS_AS(largest_remainder_counts(5, {}), BadRatios);
  CHECK_THROWS_AS(largest_remainder_counts(5, {0.9, 0.2}), BadRatios);
  CHECK_THROWS_AS(largest_remainder_counts(5, {1.2, -0.2}), BadRatios);
}

TEST_CASE("largest remainder matches the oracle across random ratio mixes") {
  Rng rng(5150);
  for (int iter = 0; iter < 200; ++iter) {
    size_t total = rng.bounded(10000);
    size_t buckets = 2 + rng.bounded(4);
    std::vector<double> raw(buckets);
    double sum = 0.0;
    for (double& x : raw) sum += (x = rng.uniform() + 1e-3);
    for (double& x : raw) x /= sum;
    auto got = largest_remainder_counts(total, raw);
    auto want = oracles::oracle_largest_remainder(total, raw);
    CHECK(got == want);
    size_t s = 0;
    for (size_t c : got) s += c;
    CHECK(s == total);
  }
}

TEST_CASE("split is a deterministic partition") {
  std::vector<MetaTrajectory> ts;
  for (int i = 0; i < 97; ++i) {
    MetaTrajectory t;
    t.sample_id = "s" + std::to_string(i);
    TrajectoryStep s1, s2;
    s1.index = 1;
    s1.action = "A";
    s1.action_input = ActionInput::from_raw("x");
    s2.index = 2;
    s2.action = "B";
    s2.action_input = ActionInput::from_raw("y");
    t.steps = {s1, s2};
    t.final_answer = "a";
    ts.push_back(t);
  }
  SplitRatios r;
  auto s1 = split_dataset(ts, r, 37);
  auto s2 = split_dataset(ts, r, 37);
  CHECK(s1.train.size() == 82);  // 97*0.85 = 82.45 -> floor 82, remainder .45
  CHECK(s1.val.size() == 5);     // 4.85 -> 4, remainder .85 wins one leftover
  CHECK(s1.test.size() == 10);   // 9.7 -> 9, remainder .7 wins the other
  CHECK(s1.train.size() + s1.val.size() + s1.test.size() == 97);

  auto ids = [](const std::vector<MetaTrajectory>& v) {
    std::vector<std::string> out;
    for (const auto& t : v) out.push_back(t.sample_id);
    return out;
  };
  CHECK(ids(s1.train) == ids(s2.train));
  CHECK(ids(s1.val) == ids(s2.val));
  CHECK(ids(s1.test) == ids(s2.test));

  // Different seed shuffles differently but still partitions.
  auto s3 = split_dataset(ts, r, 38);
  CHECK(ids(s3.train) != ids(s1.train));
  std::set<std::string> all;
  for (const auto& t : s3.train) all.insert(t.sample_id);
  for (const auto& t : s3.val) all.insert(t.sample_id);
  for (const auto& t : s3.test) all.insert(t.sample_id);
  CHECK(all.size() == 97);
}

TEST_CASE("expected max of uniform draws") {
  CHECK(expected_max_uniform(1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(expected_max_uniform(9) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(expected_max_uniform(99) == doctest::Approx(0.99).epsilon(1e-15));
}

TEST_CASE("probe reports one row per size with the right pair counts") {
  auto stats = scalability_probe({2, 4}, 50, 0.7, 7);
  REQUIRE(stats.size() == 2);
  CHECK(stats[0].n == 2);
  CHECK(stats[0].pairs == 2);
  CHECK(stats[1].n == 4);
  CHECK(stats[1].pairs == 12);
  for (const auto& s : stats) {
    CHECK(s.mean_max_score > 0.0);
    CHECK(s.mean_max_score < 1.0);
    CHECK(s.stderr_max_score > 0.0);
    CHECK(s.mean_chain_len >= 0.0);
  }
  CHECK(stats[1].mean_max_score > stats[0].mean_max_score);
}

TEST_CASE("prompt shapes for scoring and answering") {
  AenNode a = node("a"), b = node("b");
  std::string sp = LlmPairScorer::prompt(a, b);
  CHECK(sp.find(a.query) != std::string::npos);
  CHECK(sp.find(b.query) != std::string::npos);
  CHECK(sp.find("\"score\"") != std::string::npos);

  MetaTrajectory t;
  t.sample_id = "x";
  TrajectoryStep s;
  s.index = 1;
  s.thought = "look";
  s.action = "BLIPTool";
  s.action_input = ActionInput::from_raw("q");
  s.observation = "obs";
  t.steps = {s};
  std::string fp = final_answer_prompt(t, "What is shown?");
  CHECK(fp.rfind("Query: What is shown?\n\n", 0) == 0);
  const std::string tail = "\nNow provide the Final Answer to the original query.";
  CHECK(fp.rfind(tail) == fp.size() - tail.size());
  // The rendered trajectory appears between the two.
  CHECK(fp.find("Thought: look\n") != std::string::npos);
  CHECK(fp.find("Final Answer:") == std::string::npos);
}

TEST_CASE("llm pair scorer parses json and falls back to the first number") {
  AenNode a = node("a"), b = node("b");
  ScriptedBackend good({R"({"score": 0.83, "reasoning": "related markers"})"});
  LlmPairScorer s1(good);
  auto [score1, why1] = s1.score(a, b);
  CHECK(score1 == doctest::Approx(0.83));
  CHECK(why1 == "related markers");

  ScriptedBackend loose({"I'd estimate 0.6 because they share a gene."});
  LlmPairScorer s2(loose);
  auto [score2, why2] = s2.score(a, b);
  CHECK(score2 == doctest::Approx(0.6));

  ScriptedBackend clamped({R"({"score": 1.7, "reasoning": "over"})"});
  LlmPairScorer s3(clamped);
  CHECK(s3.score(a, b).first == 1.0);
}

TEST_CASE("aen generation picks a tool, executes it and records the cycle") {
  FakeClock clock;
  ToolRegistry reg = make_pathology_registry(&clock);
  std::string prompt_head = "Answer the following query with exactly one tool call.\n\n";
  ScriptedBackend backend({
      "Thought: the gene info tool fits\nAction: ProteinAtlasGeneInfoTool\n"
      "Action Input: {\"gene\": \"BRCA1\"}\n",
  });
  GenerateParams p;
  AenNode n = generate_aen("What is BRCA1?", std::nullopt, backend, reg, p, clock);
  CHECK(n.query == "What is BRCA1?");
  CHECK(n.action == "ProteinAtlasGeneInfoTool");
  REQUIRE(n.action_input.parsed.has_value());
  CHECK((*n.action_input.parsed)["gene"] == "BRCA1");
  CHECK(!n.observation.empty());
  CHECK_FALSE(n.image.has_value());
  REQUIRE(backend.requests().size() == 1);
  CHECK(backend.requests()[0].prompt.rfind(prompt_head, 0) == 0);
  const std::string tail = "Thought: ";
  const std::string& sent = backend.requests()[0].prompt;
  CHECK(sent.rfind(tail) == sent.size() - tail.size());
}

TEST_CASE("aen generation surfaces unknown tools as failed observations") {
  FakeClock clock;
  ToolRegistry reg = make_pathology_registry(&clock);
  ScriptedBackend backend({"Thought: t\nAction: EchoTool\nAction Input: {\"x\": 1}\n"});
  GenerateParams p;
  AenNode n = generate_aen("q", std::nullopt, backend, reg, p, clock);
  CHECK(n.action == "EchoTool");
  CHECK(n.observation.find("EchoTool is not a valid tool, try one of [") == 0);
}

TEST_CASE("aen generation records coercion failures as the observation") {
  FakeClock clock;
  ToolRegistry reg = make_pathology_registry(&clock);
  ScriptedBackend backend(
      {"Thought: t\nAction: ProteinAtlasGeneInfoTool\nAction Input: {\"other\": 1}\n"});
  GenerateParams p;
  AenNode n = generate_aen("q", std::nullopt, backend, reg, p, clock);
  CHECK(n.action == "ProteinAtlasGeneInfoTool");
  CHECK(n.observation.find("gene: Field required [type=missing]") != std::string::npos);
}

TEST_CASE("aen generation retries malformed output then gives up") {
  FakeClock clock;
  ToolRegistry reg = make_pathology_registry(&clock);
  ScriptedBackend backend({"no markers here", "still nothing"});
  GenerateParams p;
  p.max_retries = 1;
  CHECK_THROWS_WITH_AS(generate_aen("q", std::nullopt, backend, reg, p, clock),
                       "backend produced no parsable action in 2 attempt(s)", MalformedOutput);
  CHECK(backend.consumed() == 2);

  ScriptedBackend second({"garbage",
                          "Thought: retry works\nAction: DocumentGeneQueryTool\n"
                          "Action Input: {\"query\": \"BRCA1\"}\n"});
  AenNode n = generate_aen("q", std::nullopt, second, reg, p, clock);
  CHECK(n.action == "DocumentGeneQueryTool");
}

TEST_CASE("aen generation passes the image through and can fail on missing files") {
  FakeClock clock;
  ToolRegistry reg = make_pathology_registry(&clock);
  ScriptedBackend backend(
      {"Thought: look\nAction: BLIPTool\nAction Input: "
       "{\"text\": \"what tissue?\", \"image_path\": \"glioblastoma.jpg\"}\n"});
  GenerateParams p;
  AenNode n = generate_aen("describe", std::string("glioblastoma.jpg"), backend, reg, p, clock);
  CHECK(n.image == "glioblastoma.jpg");
  CHECK(n.observation == "API call failed: Image file does not exist: glioblastoma.jpg");
  REQUIRE(backend.requests().size() == 1);
  CHECK(backend.requests()[0].images == std::vector<std::string>{"glioblastoma.jpg"});
}
