#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajkit/model.hpp"

namespace trajkit {

struct BackendError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TransportError : BackendError {
  using BackendError::BackendError;
};
struct QuotaError : BackendError {
  using BackendError::BackendError;
};
struct ScriptExhausted : BackendError {
  using BackendError::BackendError;
};
struct CassetteMismatch : BackendError {
  using BackendError::BackendError;
};
// Backend output that violates the expected shape (e.g. no action to extract).
struct MalformedOutput : BackendError {
  using BackendError::BackendError;
};

struct CompletionRequest {
  std::string prompt;
  std::vector<std::string> images;  // paths or URLs, passed through untouched
  size_t max_tokens = 2048;
  double temperature = 0.0;
};

class TextBackend {
 public:
  virtual ~TextBackend() = default;
  virtual std::string complete(const CompletionRequest& req) = 0;
};

// Replays a fixed list of responses in order; throws ScriptExhausted past the
// end. Requests are logged for assertions.
class ScriptedBackend : public TextBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> responses, size_t generation_limit = 2048)
      : responses_(std::move(responses)), generation_limit_(generation_limit) {}

  std::string complete(const CompletionRequest& req) override;

  size_t consumed() const { return next_; }
  const std::vector<CompletionRequest>& requests() const { return requests_; }

 private:
  std::vector<std::string> responses_;
  size_t next_ = 0;
  size_t generation_limit_;
  std::vector<CompletionRequest> requests_;
};

// Returns the same response for every request. Never exhausts.
class CannedBackend : public TextBackend {
 public:
  explicit CannedBackend(std::string response) : response_(std::move(response)) {}
  std::string complete(const CompletionRequest&) override { return response_; }

 private:
  std::string response_;
};

class FunctionBackend : public TextBackend {
 public:
  explicit FunctionBackend(std::function<std::string(const CompletionRequest&)> fn)
      : fn_(std::move(fn)) {}
  std::string complete(const CompletionRequest& req) override { return fn_(req); }

 private:
  std::function<std::string(const CompletionRequest&)> fn_;
};

// --- record / replay ---

struct CassetteEntry {
  std::string fingerprint;
  std::string response;
  json extra = json::object();

  bool operator==(const CassetteEntry& o) const {
    return fingerprint == o.fingerprint && response == o.response && extra == o.extra;
  }
  void validate(size_t line = 0) const;
  json to_json() const;
  static CassetteEntry from_json(const json& v, size_t line = 0);
};

// Stable content hash of prompt and max_tokens; never time-dependent.
std::string request_fingerprint(const CompletionRequest& req);

class RecordingBackend : public TextBackend {
 public:
  explicit RecordingBackend(TextBackend& inner) : inner_(inner) {}
  std::string complete(const CompletionRequest& req) override;
  const std::vector<CassetteEntry>& entries() const { return entries_; }
  void save(const std::string& path) const;

 private:
  TextBackend& inner_;
  std::vector<CassetteEntry> entries_;
};

// Serves recorded responses in order, verifying each request fingerprint.
class ReplayBackend : public TextBackend {
 public:
  explicit ReplayBackend(std::vector<CassetteEntry> entries) : entries_(std::move(entries)) {}
  static ReplayBackend load(const std::string& path);
  std::string complete(const CompletionRequest& req) override;
  size_t remaining() const { return entries_.size() - next_; }

 private:
  std::vector<CassetteEntry> entries_;
  size_t next_ = 0;
};

// --- HTTP ---

struct HttpBackendConfig {
  std::string base_url;  // e.g. http://127.0.0.1:8080
  std::string model;
  // Name of the environment variable holding the API key. Keys are never read
  // from config files. When the variable is unset no auth header is sent.
  std::string api_key_env = "OPENAI_API_KEY";
  std::string path = "/v1/chat/completions";
  size_t max_in_flight = 4;
  size_t generation_limit = 2048;
  int timeout_sec = 120;
};

class HttpBackend : public TextBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  ~HttpBackend() override;
  std::string complete(const CompletionRequest& req) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Request body for the chat completions wire format; exposed for tests.
json chat_completion_body(const std::string& model, const CompletionRequest& req);
// Extracts choices[0].message.content; throws TransportError on bad shape.
std::string parse_chat_completion(const std::string& body);

// Plain GET returning the response body. Throws TransportError on connection
// failures and non-2xx statuses. Used by the domain API clients.
std::string http_get_body(const std::string& base_url, const std::string& path,
                          int timeout_sec = 30);

}  // namespace trajkit
