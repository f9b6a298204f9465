#include "trajkit/backend.hpp"

#include <cstdlib>
#include <fstream>
#include <semaphore>

#include <httplib.h>

namespace trajkit {

std::string ScriptedBackend::complete(const CompletionRequest& req) {
  if (req.max_tokens > generation_limit_)
    throw BackendError("max_tokens " + std::to_string(req.max_tokens) +
                       " exceeds generation limit " + std::to_string(generation_limit_));
  requests_.push_back(req);
  if (next_ >= responses_.size())
    throw ScriptExhausted("scripted backend exhausted after " +
                          std::to_string(responses_.size()) + " responses");
  return responses_[next_++];
}

// --- cassette ---

void CassetteEntry::validate(size_t line) const {
  if (fingerprint.empty()) throw InvariantError(line, "fingerprint", "must be non-empty");
}

json CassetteEntry::to_json() const {
  json v = json::object();
  v["fingerprint"] = fingerprint;
  v["response"] = response;
  for (auto it = extra.begin(); it != extra.end(); ++it) v[it.key()] = it.value();
  return v;
}

CassetteEntry CassetteEntry::from_json(const json& v, size_t line) {
  if (!v.is_object()) throw ParseError(line, "cassette entry must be a JSON object");
  CassetteEntry e;
  auto fp = v.find("fingerprint");
  if (fp == v.end() || !fp->is_string())
    throw InvariantError(line, "fingerprint", "must be a string");
  e.fingerprint = fp->get<std::string>();
  auto resp = v.find("response");
  if (resp == v.end() || !resp->is_string())
    throw InvariantError(line, "response", "must be a string");
  e.response = resp->get<std::string>();
  e.extra = json::object();
  for (auto it = v.begin(); it != v.end(); ++it)
    if (it.key() != "fingerprint" && it.key() != "response") e.extra[it.key()] = it.value();
  e.validate(line);
  return e;
}

std::string request_fingerprint(const CompletionRequest& req) {
  // FNV-1a 64-bit over prompt and max_tokens. Timestamps and attachments stay
  // out so re-recorded cassettes line up.
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
  };
  mix(req.prompt);
  mix("\x1f");
  mix(std::to_string(req.max_tokens));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string RecordingBackend::complete(const CompletionRequest& req) {
  std::string response = inner_.complete(req);
  entries_.push_back(CassetteEntry{request_fingerprint(req), response, json::object()});
  return response;
}

void RecordingBackend::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& e : entries_) out << e.to_json().dump() << '\n';
}

ReplayBackend ReplayBackend::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<CassetteEntry> entries;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw ParseError(line_no, "blank line");
    entries.push_back(CassetteEntry::from_json(detail::parse_line(line, line_no), line_no));
  }
  return ReplayBackend(std::move(entries));
}

std::string ReplayBackend::complete(const CompletionRequest& req) {
  if (next_ >= entries_.size())
    throw CassetteMismatch("cassette exhausted after " + std::to_string(entries_.size()) +
                           " entries");
  std::string got = request_fingerprint(req);
  if (got != entries_[next_].fingerprint)
    throw CassetteMismatch("request fingerprint " + got + " does not match cassette entry " +
                           std::to_string(next_) + " (" + entries_[next_].fingerprint + ")");
  return entries_[next_++].response;
}

// --- HTTP ---

json chat_completion_body(const std::string& model, const CompletionRequest& req) {
  json content;
  if (req.images.empty()) {
    content = req.prompt;
  } else {
    content = json::array();
    content.push_back(json{{"type", "text"}, {"text", req.prompt}});
    for (const auto& img : req.images)
      content.push_back(json{{"type", "image_url"}, {"image_url", json{{"url", img}}}});
  }
  json body = json::object();
  body["model"] = model;
  body["messages"] = json::array({json{{"role", "user"}, {"content", content}}});
  body["max_tokens"] = req.max_tokens;
  body["temperature"] = req.temperature;
  return body;
}

std::string parse_chat_completion(const std::string& body) {
  json v = json::parse(body, nullptr, false);
  if (v.is_discarded()) throw TransportError("response is not valid JSON");
  try {
    return v.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("unexpected response shape: ") + e.what());
  }
}

struct HttpBackend::Impl {
  HttpBackendConfig config;
  std::counting_semaphore<256> in_flight;
  std::string api_key;

  explicit Impl(HttpBackendConfig cfg)
      : config(std::move(cfg)),
        in_flight(static_cast<ptrdiff_t>(config.max_in_flight == 0 ? 1 : config.max_in_flight)) {
    if (!config.api_key_env.empty()) {
      const char* v = std::getenv(config.api_key_env.c_str());
      if (v) api_key = v;
    }
  }
};

HttpBackend::HttpBackend(HttpBackendConfig config) : impl_(new Impl(std::move(config))) {}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::complete(const CompletionRequest& req) {
  if (req.max_tokens > impl_->config.generation_limit)
    throw BackendError("max_tokens " + std::to_string(req.max_tokens) +
                       " exceeds generation limit " +
                       std::to_string(impl_->config.generation_limit));
  impl_->in_flight.acquire();
  struct Release {
    std::counting_semaphore<256>& s;
    ~Release() { s.release(); }
  } release{impl_->in_flight};

  httplib::Client client(impl_->config.base_url);
  client.set_connection_timeout(impl_->config.timeout_sec, 0);
  client.set_read_timeout(impl_->config.timeout_sec, 0);
  httplib::Headers headers;
  if (!impl_->api_key.empty()) headers.emplace("Authorization", "Bearer " + impl_->api_key);
  std::string body = chat_completion_body(impl_->config.model, req).dump();
  auto res = client.Post(impl_->config.path, headers, body, "application/json");
  if (!res)
    throw TransportError("request to " + impl_->config.base_url + impl_->config.path +
                         " failed: " + httplib::to_string(res.error()));
  if (res->status == 429) throw QuotaError("rate limited (429): " + res->body);
  if (res->status < 200 || res->status >= 300)
    throw TransportError("HTTP " + std::to_string(res->status) + ": " + res->body);
  return parse_chat_completion(res->body);
}

std::string http_get_body(const std::string& base_url, const std::string& path,
                          int timeout_sec) {
  httplib::Client client(base_url);
  client.set_connection_timeout(timeout_sec, 0);
  client.set_read_timeout(timeout_sec, 0);
  auto res = client.Get(path);
  if (!res)
    throw TransportError("request to " + base_url + path +
                         " failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw TransportError("HTTP " + std::to_string(res->status) + " from " + base_url + path);
  return res->body;
}

}  // namespace trajkit
