#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trajkit/adapter.hpp"
#include "trajkit/backend.hpp"
#include "trajkit/clustering.hpp"
#include "trajkit/engine.hpp"
#include "trajkit/metrics.hpp"
#include "trajkit/model.hpp"
#include "trajkit/orchestrator.hpp"
#include "trajkit/react.hpp"
#include "trajkit/tools.hpp"

using namespace trajkit;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyResult : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  json v = json::parse(buf.str(), nullptr, false);
  if (v.is_discarded()) throw ConfigError("config file " + path + " is not valid JSON");
  if (!v.is_object()) throw ConfigError("config must be a JSON object");
  return v;
}

template <typename T>
T cfg_get(const json& cfg, const std::string& key, T fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field '" + key + "' has the wrong type");
  }
}

std::vector<std::string> read_text_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  if (!out.flush()) throw std::runtime_error("write to " + path + " failed");
}

// A backend plus its lifecycle hooks. `deterministic` marks backends whose
// responses never depend on wall time, enabling the simulated clock.
struct BackendBundle {
  std::unique_ptr<TextBackend> backend;
  std::unique_ptr<TextBackend> inner;  // kept alive for recording wrappers
  std::function<void()> finalize;
  bool deterministic = true;
};

BackendBundle make_backend(const json& spec) {
  if (!spec.is_object()) throw ConfigError("backend config must be a JSON object");
  std::string type = cfg_get<std::string>(spec, "type", "");
  BackendBundle b;
  if (type == "scripted") {
    std::vector<std::string> script;
    if (spec.contains("script") && spec["script"].is_array()) {
      for (const auto& s : spec["script"]) {
        if (!s.is_string()) throw ConfigError("backend script entries must be strings");
        script.push_back(s.get<std::string>());
      }
    } else if (spec.contains("script_file")) {
      std::string raw = read_text_file(cfg_get<std::string>(spec, "script_file", ""));
      // Responses are separated by a line holding only "---".
      std::string cur;
      std::istringstream ss(raw);
      std::string line;
      while (std::getline(ss, line)) {
        if (line == "---") {
          script.push_back(cur);
          cur.clear();
        } else {
          if (!cur.empty()) cur += "\n";
          cur += line;
        }
      }
      if (!cur.empty()) script.push_back(cur);
    } else {
      throw ConfigError("scripted backend needs 'script' or 'script_file'");
    }
    b.backend = std::make_unique<ScriptedBackend>(
        std::move(script), cfg_get<size_t>(spec, "generation_limit", 2048));
  } else if (type == "canned") {
    b.backend = std::make_unique<CannedBackend>(cfg_get<std::string>(spec, "text", ""));
  } else if (type == "replay") {
    std::string path = cfg_get<std::string>(spec, "cassette", "");
    if (path.empty()) throw ConfigError("replay backend needs 'cassette'");
    b.backend = std::make_unique<ReplayBackend>(ReplayBackend::load(path));
  } else if (type == "record") {
    std::string path = cfg_get<std::string>(spec, "cassette", "");
    if (path.empty()) throw ConfigError("record backend needs 'cassette'");
    if (!spec.contains("inner")) throw ConfigError("record backend needs 'inner'");
    BackendBundle inner = make_backend(spec["inner"]);
    auto rec = std::make_unique<RecordingBackend>(*inner.backend);
    RecordingBackend* raw = rec.get();
    b.inner = std::move(inner.backend);
    b.backend = std::move(rec);
    b.finalize = [raw, path]() { raw->save(path); };
    b.deterministic = false;
  } else if (type == "http") {
    HttpBackendConfig cfg;
    cfg.base_url = cfg_get<std::string>(spec, "base_url", "");
    if (cfg.base_url.empty()) throw ConfigError("http backend needs 'base_url'");
    cfg.model = cfg_get<std::string>(spec, "model", "");
    cfg.api_key_env = cfg_get<std::string>(spec, "api_key_env", "OPENAI_API_KEY");
    cfg.path = cfg_get<std::string>(spec, "path", "/v1/chat/completions");
    cfg.max_in_flight = cfg_get<size_t>(spec, "max_in_flight", 4);
    cfg.generation_limit = cfg_get<size_t>(spec, "generation_limit", 2048);
    if (spec.contains("api_key"))
      throw ConfigError("api keys are read from the environment, not from config files; set "
                        "the variable named by 'api_key_env' instead");
    b.backend = std::make_unique<HttpBackend>(cfg);
    b.deterministic = false;
  } else {
    throw ConfigError("unknown backend type '" + type + "'");
  }
  return b;
}

ExecutionLimits limits_from_config(const json& cfg) {
  ExecutionLimits limits;
  if (cfg.contains("limits") && cfg["limits"].is_object()) {
    const json& l = cfg["limits"];
    limits.max_iterations = cfg_get<size_t>(l, "max_iterations", limits.max_iterations);
    limits.tool_timeout_ms = cfg_get<int64_t>(l, "tool_timeout_ms", limits.tool_timeout_ms);
    limits.max_generation = cfg_get<size_t>(l, "max_generation", limits.max_generation);
  }
  return limits;
}

std::map<std::string, std::string> extra_params_from_config(const json& cfg) {
  std::map<std::string, std::string> out;
  if (cfg.contains("extra_params") && cfg["extra_params"].is_object())
    for (auto it = cfg["extra_params"].begin(); it != cfg["extra_params"].end(); ++it)
      out[it.key()] = it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
  return out;
}

std::vector<ToolCluster> default_clusters() {
  return {
      {"ImageAgent", {"BLIPTool", "CLIPTool", "QwenVLCaptionTool", "OncoTreeTool"}},
      {"GeneAgent",
       {"PathwayKGTool", "EnsemblToDatabaseTool", "ProteinAtlasGeneInfoTool",
        "DocumentGeneQueryTool", "BiomedicalEntityExtractorTool"}},
  };
}

std::vector<ComponentSpec> components_from_config(const json& cfg, FakeClock* clock) {
  std::vector<ToolCluster> clusters;
  if (cfg.contains("agents") && cfg["agents"].is_object())
    clusters = clusters_from_json(cfg["agents"]);
  else
    clusters = default_clusters();
  ToolRegistry all = make_pathology_registry(clock);
  std::vector<ComponentSpec> out;
  for (const auto& c : clusters) {
    ComponentSpec spec;
    spec.agent_name = c.agent_name;
    if (c.agent_name == "GeneAgent") {
      spec.extra_instruction = gene_agent_instruction();
      spec.description = "Expert in gene-level analysis and biomedical knowledge lookup.";
    } else if (c.agent_name == "ImageAgent") {
      spec.extra_instruction = image_agent_instruction();
      spec.description = "Expert in histopathology image analysis.";
    } else {
      spec.extra_instruction = generic_agent_instruction();
      std::string names;
      for (size_t i = 0; i < c.tools.size(); ++i) {
        if (i) names += ", ";
        names += c.tools[i];
      }
      spec.description = "Specialist operating: " + names + ".";
    }
    for (const auto& name : c.tools) {
      const ToolSpec* t = all.find(name);
      if (!t) throw ConfigError("agent '" + c.agent_name + "' names unknown tool '" + name + "'");
      spec.tools.add(*t);
    }
    out.push_back(std::move(spec));
  }
  return out;
}

void print_metric_table(const MetricReport& r, std::ostream& os) {
  char buf[128];
  auto row = [&](const char* name, const std::string& value) {
    std::snprintf(buf, sizeof(buf), "%-12s %s\n", name, value.c_str());
    os << buf;
  };
  auto num = [](double v) {
    char b[64];
    std::snprintf(b, sizeof(b), "%.6f", v);
    return std::string(b);
  };
  row("tss", num(r.tss));
  row("trr", num(r.trr));
  if (r.tcf1)
    row("tcf1", num(r.tcf1->f1) + " (p " + num(r.tcf1->precision) + ", r " +
                    num(r.tcf1->recall) + ")");
  else
    row("tcf1", "n/a");
  row("acs", r.acs ? num(*r.acs) : "n/a");
  row("hr", r.hr ? num(*r.hr) : "n/a");
  if (r.mc_f1) {
    for (const auto& [k, v] : *r.mc_f1) row(("mc:" + k).c_str(), num(v));
  } else {
    row("mc", "n/a");
  }
  row("n", std::to_string(r.n));
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"meta-trajectory synthesis and evaluation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file")->expected(1);
  // Flag overrides; flags win over config values.
  std::optional<uint64_t> seed_flag;
  app.add_option("--seed", seed_flag, "RNG seed (default 37)");

  auto cfg = [&]() {
    json c = load_config(config_path);
    if (seed_flag) c["seed"] = *seed_flag;
    if (!c.contains("seed")) c["seed"] = 37;
    return c;
  };

  // generate
  auto* gen = app.add_subcommand("generate", "generate execution nodes from queries");
  std::string gen_queries, gen_out, gen_image;
  gen->add_option("--queries", gen_queries, "file with one query per line")->required();
  gen->add_option("--out", gen_out, "output nodes JSONL")->required();
  gen->add_option("--image", gen_image, "image path attached to every query");
  gen->callback([&]() {
    json c = cfg();
    if (!c.contains("backend")) throw ConfigError("generate needs a 'backend' config entry");
    BackendBundle backend = make_backend(c["backend"]);
    BackendBundle assistant;
    if (c.contains("assistant")) assistant = make_backend(c["assistant"]);
    FakeClock fake;
    SystemClock real;
    Clock& clock = backend.deterministic ? static_cast<Clock&>(fake) : real;
    ToolRegistry registry =
        make_pathology_registry(backend.deterministic ? &fake : nullptr);
    GenerateParams params;
    params.tool_timeout_ms = limits_from_config(c).tool_timeout_ms;
    std::optional<std::string> image;
    if (!gen_image.empty()) image = gen_image;

    std::vector<std::string> queries = read_text_lines(gen_queries);
    std::vector<AenNode> nodes;
    size_t failures = 0;
    for (size_t i = 0; i < queries.size(); ++i) {
      try {
        AenNode node = generate_aen(queries[i], image, *backend.backend, registry, params,
                                    clock, assistant.backend.get());
        node.id = std::to_string(i);
        nodes.push_back(std::move(node));
      } catch (const MalformedOutput& e) {
        ++failures;
        std::cerr << "query " << i << ": " << e.what() << "\n";
      }
    }
    if (backend.finalize) backend.finalize();
    if (nodes.empty()) throw EmptyResult("no nodes generated");
    write_jsonl_file(nodes, gen_out);
    std::cerr << "generated " << nodes.size() << " node(s), " << failures << " failure(s)\n";
  });

  // connect
  auto* con = app.add_subcommand("connect", "discover connections between nodes");
  std::string con_nodes, con_out;
  std::optional<double> threshold_flag;
  std::optional<size_t> max_pairs_flag;
  con->add_option("--nodes", con_nodes, "input nodes JSONL")->required();
  con->add_option("--out", con_out, "output connections JSONL")->required();
  con->add_option("--threshold", threshold_flag, "minimum score to keep (default 0.7)");
  con->add_option("--max-pairs", max_pairs_flag, "pair sampling budget (default 1000)");
  auto connection_params = [&](const json& c) {
    ConnectionParams p;
    p.threshold = threshold_flag ? *threshold_flag : cfg_get<double>(c, "threshold", 0.7);
    p.max_pairs = max_pairs_flag ? *max_pairs_flag : cfg_get<size_t>(c, "max_pairs", 1000);
    p.attempts_multiplier = cfg_get<size_t>(c, "attempts_multiplier", 10);
    p.seed = cfg_get<uint64_t>(c, "seed", 37);
    return p;
  };
  auto make_scorer = [](const json& c, BackendBundle& backend_slot) -> std::unique_ptr<PairScorer> {
    std::string kind = cfg_get<std::string>(c, "scorer", "hash");
    if (kind == "hash") return std::make_unique<HashPairScorer>();
    if (kind == "llm") {
      if (!c.contains("backend")) throw ConfigError("llm scorer needs a 'backend' config entry");
      backend_slot = make_backend(c["backend"]);
      return std::make_unique<LlmPairScorer>(*backend_slot.backend);
    }
    throw ConfigError("unknown scorer '" + kind + "'");
  };
  con->callback([&]() {
    json c = cfg();
    BackendBundle scorer_backend;
    auto scorer = make_scorer(c, scorer_backend);
    std::vector<AenNode> nodes = read_jsonl_file<AenNode>(con_nodes);
    DiscoveryStats stats;
    std::vector<Connection> conns =
        discover_connections(nodes, connection_params(c), *scorer, &stats);
    write_jsonl_file(conns, con_out);
    if (scorer_backend.finalize) scorer_backend.finalize();
    std::cerr << "attempts " << stats.attempts << ", evaluated " << stats.pairs_evaluated
              << ", kept " << stats.connections_kept << "\n";
    if (conns.empty()) throw EmptyResult("no connections met the threshold");
  });

  // synthesize
  auto* syn = app.add_subcommand("synthesize", "build trajectory datasets from nodes");
  std::string syn_nodes, syn_train, syn_val, syn_test, syn_report, split_flag;
  std::optional<size_t> max_traj_flag, max_usage_flag, max_len_flag;
  syn->add_option("--nodes", syn_nodes, "input nodes JSONL")->required();
  syn->add_option("--out-train", syn_train, "train split JSONL")->required();
  syn->add_option("--out-val", syn_val, "validation split JSONL")->required();
  syn->add_option("--out-test", syn_test, "test split JSONL")->required();
  syn->add_option("--report", syn_report, "construction report JSON");
  syn->add_option("--threshold", threshold_flag, "minimum score to keep (default 0.7)");
  syn->add_option("--max-pairs", max_pairs_flag, "pair sampling budget (default 1000)");
  syn->add_option("--max-trajectories", max_traj_flag, "trajectory cap (default unlimited)");
  syn->add_option("--max-usage", max_usage_flag, "node reuse cap (default 3)");
  syn->add_option("--max-length", max_len_flag, "trajectory step cap (default 8)");
  syn->add_option("--split", split_flag, "train:val:test weights, e.g. 85:5:10");
  syn->callback([&]() {
    json c = cfg();
    BackendBundle scorer_backend;
    auto scorer = make_scorer(c, scorer_backend);
    if (!c.contains("backend")) throw ConfigError("synthesize needs a 'backend' config entry");
    BackendBundle answerer = make_backend(c["backend"]);
    std::vector<AenNode> nodes = read_jsonl_file<AenNode>(syn_nodes);
    DiscoveryStats stats;
    std::vector<Connection> conns =
        discover_connections(nodes, connection_params(c), *scorer, &stats);
    ConstructionParams cp;
    cp.max_length = max_len_flag ? *max_len_flag : cfg_get<size_t>(c, "max_length", 8);
    cp.max_usage = max_usage_flag ? *max_usage_flag : cfg_get<size_t>(c, "max_usage", 3);
    cp.max_trajectories =
        max_traj_flag ? *max_traj_flag : cfg_get<size_t>(c, "max_trajectories", 0);
    ConstructionResult built = construct_trajectories(nodes, conns, cp, *answerer.backend);
    FilterResult filtered =
        filter_trajectories(built.trajectories, cfg_get<size_t>(c, "min_nodes", 2),
                            cfg_get<size_t>(c, "max_nodes", 8));
    SplitRatios ratios;
    if (c.contains("ratios") && c["ratios"].is_object()) {
      ratios.train = cfg_get<double>(c["ratios"], "train", ratios.train);
      ratios.val = cfg_get<double>(c["ratios"], "val", ratios.val);
      ratios.test = cfg_get<double>(c["ratios"], "test", ratios.test);
    }
    if (!split_flag.empty()) {
      double w[3];
      if (std::sscanf(split_flag.c_str(), "%lf:%lf:%lf", &w[0], &w[1], &w[2]) != 3 ||
          w[0] < 0 || w[1] < 0 || w[2] < 0)
        throw ConfigError("--split expects non-negative train:val:test weights, e.g. 85:5:10");
      double total = w[0] + w[1] + w[2];
      if (total <= 0) throw ConfigError("--split weights must not all be zero");
      ratios.train = w[0] / total;
      ratios.val = w[1] / total;
      ratios.test = w[2] / total;
    }
    SplitResult split = split_dataset(filtered.kept, ratios, cfg_get<uint64_t>(c, "seed", 37));
    if (answerer.finalize) answerer.finalize();
    if (scorer_backend.finalize) scorer_backend.finalize();

    json report = json::object();
    report["nodes_in"] = nodes.size();
    report["pairs_evaluated"] = stats.pairs_evaluated;
    report["connections_kept"] = conns.size();
    report["max_usage"] = cp.max_usage;
    report["max_length"] = cp.max_length;
    report["trajectories"] = filtered.kept.size();
    json rejections = json::array();
    for (const auto& r : built.rejections)
      rejections.push_back(json{{"sample_id", r.sample_id}, {"reason", r.reason}});
    for (const auto& r : filtered.rejections)
      rejections.push_back(json{{"sample_id", r.sample_id}, {"reason", r.reason}});
    report["rejections"] = std::move(rejections);
    json split_counts = json::object();
    split_counts["train"] = split.train.size();
    split_counts["val"] = split.val.size();
    split_counts["test"] = split.test.size();
    report["split"] = std::move(split_counts);
    if (!syn_report.empty()) write_text_file(syn_report, report.dump(2) + "\n");

    if (filtered.kept.empty()) throw EmptyResult("no trajectories survived filtering");
    write_jsonl_file(split.train, syn_train);
    write_jsonl_file(split.val, syn_val);
    write_jsonl_file(split.test, syn_test);
    std::cerr << "kept " << filtered.kept.size() << " trajectorie(s): train "
              << split.train.size() << ", val " << split.val.size() << ", test "
              << split.test.size() << "\n";
  });

  // run
  auto* run = app.add_subcommand("run", "answer queries with the planner/component agents");
  std::string run_queries, run_out, run_image;
  run->add_option("--queries", run_queries, "file with one query per line")->required();
  run->add_option("--out", run_out, "output run records JSONL")->required();
  run->add_option("--image", run_image, "image path attached to every query");
  run->callback([&]() {
    json c = cfg();
    if (!c.contains("backend")) throw ConfigError("run needs a 'backend' config entry");
    BackendBundle backend = make_backend(c["backend"]);
    BackendBundle assistant;
    if (c.contains("assistant")) assistant = make_backend(c["assistant"]);
    FakeClock fake;
    SystemClock real;
    Clock& clock = backend.deterministic ? static_cast<Clock&>(fake) : real;
    std::vector<ComponentSpec> components =
        components_from_config(c, backend.deterministic ? &fake : nullptr);
    AgentConfig agent_config;
    agent_config.limits = limits_from_config(c);
    agent_config.extra_params = extra_params_from_config(c);
    agent_config.parsing_assistant = assistant.backend.get();
    std::optional<std::string> image;
    if (!run_image.empty()) image = run_image;

    std::vector<std::string> queries = read_text_lines(run_queries);
    if (queries.empty()) throw EmptyResult("no queries to run");
    std::vector<RunRecord> records;
    for (size_t i = 0; i < queries.size(); ++i) {
      ComponentLifecycle lifecycle;
      RunRecord rec = run_planner(std::to_string(i), queries[i], image, *backend.backend,
                                  components, agent_config, clock, &lifecycle);
      lifecycle.verify_all_released();
      records.push_back(std::move(rec));
    }
    if (backend.finalize) backend.finalize();
    write_jsonl_file(records, run_out);
    std::cerr << "ran " << records.size() << " quer(ies)\n";
  });

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score run records");
  std::string eval_runs, eval_truth, eval_out;
  std::optional<double> trr_theta_flag;
  eval->add_option("--runs", eval_runs, "run records JSONL")->required();
  eval->add_option("--truth", eval_truth, "ground truth JSONL");
  eval->add_option("--out", eval_out, "metric report JSON (default stdout)");
  eval->add_option("--trr-theta", trr_theta_flag, "input similarity threshold (default 0.7)");
  eval->callback([&]() {
    json c = cfg();
    std::vector<RunRecord> runs = read_jsonl_file<RunRecord>(eval_runs);
    if (runs.empty()) throw EmptyResult("no runs to evaluate");
    GroundTruth truth;
    bool have_truth = false;
    if (!eval_truth.empty()) {
      truth = read_ground_truth_file(eval_truth);
      have_truth = true;
    }
    BackendBundle judge;
    if (c.contains("judge")) judge = make_backend(c["judge"]);
    double theta = trr_theta_flag ? *trr_theta_flag : cfg_get<double>(c, "trr_theta", 0.7);
    MetricReport report = evaluate_dataset(runs, have_truth ? &truth : nullptr,
                                           judge.backend.get(), theta);
    if (judge.finalize) judge.finalize();
    std::string body = report.to_json().dump(2) + "\n";
    if (eval_out.empty())
      std::cout << body;
    else
      write_text_file(eval_out, body);
    print_metric_table(report, std::cerr);
  });

  // parse
  auto* par = app.add_subcommand("parse", "parse a ReACT transcript into segments");
  std::string par_in, par_out;
  par->add_option("--in", par_in, "transcript text file")->required();
  par->add_option("--out", par_out, "segments JSON (default stdout)");
  par->callback([&]() {
    std::string text = read_text_file(par_in);
    auto segments = parse_transcript(text);
    json arr = json::array();
    for (const auto& s : segments) {
      json e = json::object();
      e["kind"] = segment_kind_name(s.kind);
      e["begin"] = s.begin;
      e["end"] = s.end;
      e["content"] = s.content;
      arr.push_back(std::move(e));
    }
    std::string body = arr.dump(2) + "\n";
    if (par_out.empty())
      std::cout << body;
    else
      write_text_file(par_out, body);
  });

  // adapter-stats
  auto* ast = app.add_subcommand("adapter-stats", "parameter and overhead accounting");
  uint64_t ast_layers = 32, ast_dim = 4096, ast_ffn_mult = 4, ast_lora = 8;
  uint64_t ast_batch = 1, ast_seq = 1024, ast_text = 512;
  ast->add_option("--layers", ast_layers, "transformer layer count");
  ast->add_option("--d", ast_dim, "hidden dimension");
  ast->add_option("--ffn-mult", ast_ffn_mult, "FFN expansion factor");
  ast->add_option("--lora-rank", ast_lora, "LoRA rank for comparison");
  ast->add_option("--batch", ast_batch, "batch size for overhead estimate");
  ast->add_option("--seq-len", ast_seq, "sequence length for overhead estimate");
  ast->add_option("--text-len", ast_text, "text token count for overhead estimate");
  ast->callback([&]() {
    ParameterStats s = parameter_stats(ast_layers, ast_dim, ast_ffn_mult, ast_lora);
    double ov = overhead_estimate(ast_batch, ast_seq, ast_text, ast_dim);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "layers              %llu\n",
                  static_cast<unsigned long long>(s.layers));
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "hidden dim          %llu\n",
                  static_cast<unsigned long long>(s.dim));
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "adapter params      %llu\n",
                  static_cast<unsigned long long>(s.adapter_params));
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "adapter per layer   %llu\n",
                  static_cast<unsigned long long>(s.adapter_per_layer));
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "ffn params          %llu\n",
                  static_cast<unsigned long long>(s.ffn_params));
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "lora per layer      %llu\n",
                  static_cast<unsigned long long>(s.lora_per_layer));
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "rho                 %.6f (%.4f%%)\n", s.rho, s.rho * 100.0);
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "overhead            %.6f (%.3f%%)\n", ov, ov * 100.0);
    std::cout << buf;
  });

  // cluster
  auto* clu = app.add_subcommand("cluster", "group tools into agents by co-occurrence");
  std::string clu_in, clu_out;
  std::optional<double> min_link_flag;
  clu->add_option("--trajectories", clu_in, "trajectories JSONL")->required();
  clu->add_option("--out", clu_out, "cluster config JSON (default stdout)");
  clu->add_option("--min-link", min_link_flag, "merge threshold (default 0.1)");
  clu->callback([&]() {
    json c = cfg();
    double min_link = min_link_flag ? *min_link_flag : cfg_get<double>(c, "min_link", 0.1);
    std::vector<MetaTrajectory> trajectories = read_jsonl_file<MetaTrajectory>(clu_in);
    CooccurrenceMatrix matrix = count_cooccurrence(trajectories);
    std::vector<ToolCluster> clusters = cluster_tools(matrix, min_link);
    std::string body = clusters_to_json(clusters).dump(2) + "\n";
    if (clu_out.empty())
      std::cout << body;
    else
      write_text_file(clu_out, body);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return 0;
}

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const EmptyResult& e) {
    std::cerr << "empty result: " << e.what() << "\n";
    return 4;
  } catch (const EmptyMatrix& e) {
    std::cerr << "empty result: " << e.what() << "\n";
    return 4;
  } catch (const DataMismatch& e) {
    std::cerr << "data mismatch: " << e.what() << "\n";
    return 5;
  } catch (const ShapeMismatch& e) {
    std::cerr << "data mismatch: " << e.what() << "\n";
    return 5;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 5;
  } catch (const InvariantError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 5;
  } catch (const BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
