#include "trajkit/tools.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <mutex>
#include <thread>

#include "trajkit/backend.hpp"

namespace trajkit {

int64_t SystemClock::now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void ToolRegistry::add(ToolSpec spec) {
  for (const auto& s : specs_)
    if (s.name == spec.name)
      throw std::invalid_argument("duplicate tool name '" + spec.name + "'");
  specs_.push_back(std::move(spec));
}

const ToolSpec* ToolRegistry::find(const std::string& name) const {
  for (const auto& s : specs_)
    if (s.name == name) return &s;
  return nullptr;
}

std::vector<std::string> ToolRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(specs_.size());
  for (const auto& s : specs_) out.push_back(s.name);
  return out;
}

std::string invalid_tool_message(const std::string& name,
                                 const std::vector<std::string>& names) {
  std::string msg = name + " is not a valid tool, try one of [";
  for (size_t i = 0; i < names.size(); ++i) {
    if (i) msg += ", ";
    msg += names[i];
  }
  msg += "].";
  return msg;
}

ToolCallRecord make_failed_record(const std::string& tool, const std::string& input,
                                  const std::string& observation, int64_t duration_ms) {
  ToolCallRecord r;
  r.tool = tool;
  r.input = input;
  r.success = false;
  r.observation = observation;
  r.duration_ms = duration_ms;
  return r;
}

namespace {

std::string timeout_message(int64_t timeout_ms) {
  return "Tool execution timed out after " + std::to_string(timeout_ms / 1000) + "s";
}

std::string input_text(const json& input) {
  return input.is_string() ? input.get<std::string>() : input.dump();
}

}  // namespace

ToolCallRecord execute_tool(const std::string& name, const json& input,
                            const ToolRegistry& registry, int64_t timeout_ms, Clock& clock) {
  std::string in_text = input_text(input);
  const ToolSpec* spec = registry.find(name);
  if (!spec) return make_failed_record(name, in_text, invalid_tool_message(name, registry.names()));

  struct State {
    std::mutex m;
    std::condition_variable cv;
    bool done = false;
    bool failed = false;
    std::string observation;
  };
  auto st = std::make_shared<State>();
  int64_t start = clock.now_ms();
  std::thread([st, fn = spec->executor, input]() {
    std::string obs;
    bool failed = false;
    try {
      obs = fn(input);
    } catch (const std::exception& e) {
      obs = e.what();
      failed = true;
    } catch (...) {
      obs = "tool executor raised an unknown error";
      failed = true;
    }
    std::lock_guard<std::mutex> lk(st->m);
    st->observation = std::move(obs);
    st->failed = failed;
    st->done = true;
    st->cv.notify_all();
  }).detach();

  std::unique_lock<std::mutex> lk(st->m);
  while (!st->done) {
    st->cv.wait_for(lk, std::chrono::milliseconds(1));
    if (!st->done && clock.now_ms() - start >= timeout_ms) {
      // The worker is abandoned; its state block outlives it via shared_ptr.
      return make_failed_record(name, in_text, timeout_message(timeout_ms),
                                clock.now_ms() - start);
    }
  }
  int64_t elapsed = clock.now_ms() - start;
  if (elapsed >= timeout_ms)
    return make_failed_record(name, in_text, timeout_message(timeout_ms), elapsed);
  ToolCallRecord r;
  r.tool = name;
  r.input = in_text;
  r.success = !st->failed;
  r.observation = st->observation;
  r.duration_ms = elapsed;
  return r;
}

// --- mocks ---

namespace {

// Key-order-independent lookup key for keyed mock observations.
std::string canonical_key(const json& input) {
  return nlohmann::json(input).dump();
}

}  // namespace

ToolSpec make_mock_tool(std::string name, std::string description, InputSchema schema,
                        MockBehavior behavior) {
  ToolSpec spec;
  spec.name = std::move(name);
  spec.description = std::move(description);
  spec.schema = std::move(schema);
  spec.executor = [b = std::move(behavior)](const json& input) -> std::string {
    if (b.delay_ms > 0 && b.clock) b.clock->advance(b.delay_ms);
    auto hit = b.keyed.find(canonical_key(input));
    if (hit != b.keyed.end()) return hit->second;
    if (!b.image_field.empty() && input.is_object()) {
      auto f = input.find(b.image_field);
      if (f != input.end() && f->is_string()) {
        const std::string path = f->get<std::string>();
        if (!std::filesystem::exists(path))
          throw ToolError("API call failed: Image file does not exist: " + path);
      }
    }
    if (!b.echo_field.empty() && input.is_object()) {
      auto f = input.find(b.echo_field);
      if (f != input.end() && f->is_string()) return f->get<std::string>();
    }
    if (!b.not_found_field.empty() && input.is_object()) {
      auto f = input.find(b.not_found_field);
      if (f != input.end() && f->is_string())
        return "No results found for query '" + f->get<std::string>() + "'";
    }
    return b.default_observation;
  };
  return spec;
}

InputSchema pathology_tool_schema(const std::string& name) {
  using T = FieldSpec::Type;
  InputSchema s;
  s.title = name + "Schema";
  if (name == "BLIPTool") {
    s.fields = {{"text", T::String, true}, {"image_path", T::String, true}};
  } else if (name == "CLIPTool") {
    s.fields = {{"image_path", T::String, true}};
  } else if (name == "QwenVLCaptionTool") {
    s.fields = {{"text", T::String, true}, {"image_path", T::String, true}};
  } else if (name == "OncoTreeTool") {
    s.fields = {{"query", T::String, true}, {"query_type", T::String, true}};
  } else if (name == "PathwayKGTool") {
    s.fields = {{"gene1", T::String, true},
                {"gene2", T::String, true},
                {"radius", T::Integer, false},
                {"use_in_edges", T::Boolean, false}};
  } else if (name == "EnsemblToDatabaseTool") {
    s.fields = {{"ensembl", T::String, true}};
  } else if (name == "ProteinAtlasGeneInfoTool") {
    s.fields = {{"gene", T::String, true}};
  } else if (name == "DocumentGeneQueryTool") {
    s.fields = {{"query", T::String, true}};
  } else if (name == "BiomedicalEntityExtractorTool") {
    s.fields = {{"text", T::String, true}};
  } else {
    throw std::invalid_argument("no schema for tool '" + name + "'");
  }
  return s;
}

ToolRegistry make_pathology_registry(FakeClock* clock) {
  ToolRegistry reg;
  auto add = [&](const std::string& name, const std::string& desc, MockBehavior b) {
    reg.add(make_mock_tool(name, desc, pathology_tool_schema(name), std::move(b)));
  };

  MockBehavior blip;
  blip.image_field = "image_path";
  blip.default_observation = "The image shows tissue with dense cellular regions.";
  add("BLIPTool", "Answer a question about an image with visual question answering.", blip);

  MockBehavior clip;
  clip.image_field = "image_path";
  clip.default_observation = "tumor tissue";
  add("CLIPTool", "Classify an image against candidate labels.", clip);

  MockBehavior qwen;
  qwen.image_field = "image_path";
  qwen.default_observation =
      "The image is a hematoxylin and eosin stained histopathology slide.";
  qwen.delay_ms = clock ? 1200 : 0;
  qwen.clock = clock;
  add("QwenVLCaptionTool", "Generate a detailed caption for a pathology image.", qwen);

  MockBehavior onco;
  onco.keyed[canonical_key(json{{"query", "Glioblastoma"}, {"query_type", "name"}})] =
      "Tumor/Disease: Glioblastoma, IDH-Wildtype (GB)\n"
      "**Main Type**: Glioma\n"
      "**Tissue/Organ**: CNS/Brain\n"
      "**Upstream Nodes**: {'parent': 'ADIFG', 'precursors': []}\n"
      "**Downstream Nodes**: None\n"
      "---";
  onco.default_observation = "No results found.";
  add("OncoTreeTool", "Look up tumor type codes, main types and tissues in OncoTree.", onco);

  MockBehavior kg;
  kg.default_observation = "No results found.";
  add("PathwayKGTool", "Query pathway relations between two genes in a knowledge graph.", kg);

  MockBehavior ens;
  ens.default_observation = "No results found.";
  add("EnsemblToDatabaseTool", "Map an Ensembl gene identifier to database entries.", ens);

  MockBehavior atlas;
  atlas.default_observation = "No results found.";
  add("ProteinAtlasGeneInfoTool", "Retrieve gene and protein information from Protein Atlas.",
      atlas);

  MockBehavior doc;
  doc.not_found_field = "query";
  add("DocumentGeneQueryTool", "Search indexed biomedical documents for gene evidence.", doc);

  MockBehavior extractor;
  extractor.echo_field = "text";
  extractor.default_observation = "No results found.";
  add("BiomedicalEntityExtractorTool", "Extract biomedical entities from free text.", extractor);

  return reg;
}

// --- domain clients ---

namespace {

std::string url_encode(const std::string& s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 0xf]);
    }
  }
  return out;
}

std::string json_string_or(const json& v, const char* key, const std::string& fallback) {
  auto it = v.find(key);
  if (it == v.end() || !it->is_string()) return fallback;
  return it->get<std::string>();
}

// Python-style list repr of an array of strings: [] or ['A', 'B'].
std::string py_list(const json& arr) {
  std::string out = "[";
  if (arr.is_array()) {
    for (size_t i = 0; i < arr.size(); ++i) {
      if (i) out += ", ";
      out += "'" + arr[i].get<std::string>() + "'";
    }
  }
  out += "]";
  return out;
}

}  // namespace

std::string format_oncotree_entry(const json& entry) {
  std::string name = json_string_or(entry, "name", "Unknown");
  std::string code = json_string_or(entry, "code", "?");
  std::string out;
  out += "Tumor/Disease: " + name + " (" + code + ")\n";
  out += "**Main Type**: " + json_string_or(entry, "mainType", "None") + "\n";
  out += "**Tissue/Organ**: " + json_string_or(entry, "tissue", "None") + "\n";
  std::string parent = json_string_or(entry, "parent", "");
  json precursors = entry.contains("precursors") ? entry["precursors"] : json::array();
  out += "**Upstream Nodes**: {'parent': '" + parent + "', 'precursors': " +
         py_list(precursors) + "}\n";
  std::string downstream = "None";
  auto children = entry.find("children");
  if (children != entry.end() && children->is_object() && !children->empty()) {
    std::vector<std::string> codes;
    for (auto it = children->begin(); it != children->end(); ++it) codes.push_back(it.key());
    std::sort(codes.begin(), codes.end());
    json arr = json::array();
    for (const auto& c : codes) arr.push_back(c);
    downstream = py_list(arr);
  }
  out += "**Downstream Nodes**: " + downstream + "\n";
  out += "---";
  return out;
}

std::string format_oncotree_results(const json& entries, const std::string& query) {
  if (!entries.is_array() || entries.empty())
    return "No results found for query '" + query + "'";
  std::string out;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (i) out += "\n";
    out += format_oncotree_entry(entries[i]);
  }
  return out;
}

std::string oncotree_lookup(const std::string& base_url, const std::string& query,
                            const std::string& query_type) {
  std::string type = query_type.empty() ? "name" : query_type;
  std::string path = "/api/tumorTypes/search/" + url_encode(type) + "/" + url_encode(query);
  std::string body;
  try {
    body = http_get_body(base_url, path);
  } catch (const std::exception& e) {
    throw ToolError(std::string("API call failed: ") + e.what());
  }
  json v = json::parse(body, nullptr, false);
  if (v.is_discarded()) throw ToolError("API call failed: response is not valid JSON");
  return format_oncotree_results(v, query);
}

std::string format_mygene_hit(const json& hit, size_t rank) {
  std::string entrez = "None";
  auto eg = hit.find("entrezgene");
  if (eg != hit.end() && !eg->is_null()) entrez = eg->is_string() ? eg->get<std::string>() : eg->dump();
  std::string score = "None";
  auto sc = hit.find("_score");
  if (sc != hit.end() && sc->is_number()) score = sc->dump();
  std::string out;
  out += std::to_string(rank) + ". Gene entry: " + json_string_or(hit, "name", "Unknown") +
         " (Entrez ID: " + entrez + ", Correlation Score: " + score + ")\n";
  out += "Summary: " + json_string_or(hit, "summary", "No summary available.");
  return out;
}

std::string format_mygene_results(const json& response) {
  auto hits = response.find("hits");
  if (hits == response.end() || !hits->is_array() || hits->empty())
    return "No results found.";
  std::string out;
  for (size_t i = 0; i < hits->size(); ++i) {
    if (i) out += "\n\n";
    out += format_mygene_hit((*hits)[i], i + 1);
  }
  return out;
}

std::string mygene_query(const std::string& base_url, const std::string& q, int top_k) {
  std::string path = "/v3/query?q=" + url_encode(q) +
                     "&fields=symbol,name,summary,entrezgene&size=" + std::to_string(top_k);
  std::string body;
  try {
    body = http_get_body(base_url, path);
  } catch (const std::exception& e) {
    throw ToolError(std::string("API call failed: ") + e.what());
  }
  json v = json::parse(body, nullptr, false);
  if (v.is_discarded()) throw ToolError("API call failed: response is not valid JSON");
  return format_mygene_results(v);
}

ToolSpec make_oncotree_tool(std::string base_url) {
  ToolSpec spec;
  spec.name = "OncoTreeTool";
  spec.description = "Look up tumor type codes, main types and tissues in OncoTree.";
  spec.schema = pathology_tool_schema("OncoTreeTool");
  spec.executor = [base = std::move(base_url)](const json& input) {
    std::string q = input.value("query", "");
    std::string t = input.value("query_type", "name");
    return oncotree_lookup(base, q, t);
  };
  return spec;
}

ToolSpec make_mygene_tool(std::string base_url, int top_k) {
  ToolSpec spec;
  spec.name = "DocumentGeneQueryTool";
  spec.description = "Search indexed biomedical documents for gene evidence.";
  spec.schema = pathology_tool_schema("DocumentGeneQueryTool");
  spec.executor = [base = std::move(base_url), top_k](const json& input) {
    return mygene_query(base, input.value("query", ""), top_k);
  };
  return spec;
}

}  // namespace trajkit
