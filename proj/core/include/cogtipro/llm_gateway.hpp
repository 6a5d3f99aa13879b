// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cogtipro/records.hpp"

namespace cogtipro::llm {

/// Which step of the refinement loop issued a request.
enum class Role { kExtractor, kClassifier, kRefiner };
std::string_view to_string(Role r);
Role role_from_string(std::string_view s);

struct CompletionRequest {
  Role role = Role::kExtractor;
  std::string prompt_text;
  std::string input_text;
  double temperature = 0.0;
  int max_tokens = 1024;
};

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct CompletionResponse {
  std::string text;
  std::string backend_id;
  std::optional<Usage> usage;
  std::optional<std::chrono::milliseconds> latency;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual CompletionResponse complete(const CompletionRequest& request) = 0;
  virtual std::string id() const = 0;
  /// False when responses depend on call order (e.g. a fixture cursor); the
  /// gateway then serializes batches in index order.
  virtual bool order_independent() const { return true; }
  /// False for remote models whose decoding we do not control.
  virtual bool reproducible() const { return true; }
};

// ---- fixture backend --------------------------------------------------------

struct FixtureEntry {
  Role role = Role::kExtractor;
  std::string response;
};

/// Returns scripted responses in order, one cursor per role.
class FixtureBackend final : public Backend {
 public:
  explicit FixtureBackend(std::vector<FixtureEntry> entries);
  /// JSON array of {role_tag, response}.
  static std::shared_ptr<FixtureBackend> from_file(
      const std::filesystem::path& path);

  CompletionResponse complete(const CompletionRequest& request) override;
  std::string id() const override { return "fixture"; }
  bool order_independent() const override { return false; }

  std::size_t remaining(Role role) const;

 private:
  std::vector<std::vector<std::string>> scripts_;  // indexed by Role
  std::vector<std::size_t> cursors_;
  mutable std::mutex mu_;
};

// ---- rule backend -----------------------------------------------------------

/// Deterministic pseudo-LLM built on marker_statistics(). See rule_backend.hpp
/// for the text formats it reads and writes.
class RuleBackend final : public Backend {
 public:
  CompletionResponse complete(const CompletionRequest& request) override;
  std::string id() const override { return "rule"; }
};

// ---- HTTP backend -----------------------------------------------------------

struct HttpOptions {
  /// Full endpoint, e.g. "http://localhost:8080/v1/chat/completions".
  std::string url;
  std::string model = "gpt-4o-mini";
  /// Environment variable holding the bearer token. Unset variable means no
  /// Authorization header.
  std::string api_key_env = "COGTIPRO_API_KEY";
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::seconds timeout{60};
};

/// Chat-completion client: system message = prompt, user message = input.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpOptions options);
  CompletionResponse complete(const CompletionRequest& request) override;
  std::string id() const override { return "http:" + options_.model; }
  bool reproducible() const override { return false; }

 private:
  HttpOptions options_;
};

// ---- gateway ----------------------------------------------------------------

struct GatewayOptions {
  /// Upper bound on concurrent backend calls in complete_batch().
  int parallelism = 1;
  /// Optional JSON-lines audit log of every request/response pair.
  std::optional<std::filesystem::path> replay_log;
};

class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Throws Error when the backend returns empty text.
  CompletionResponse complete(const CompletionRequest& request);

  /// Results are returned in request order whatever the completion order.
  /// When several requests fail, the lowest-index failure is rethrown.
  std::vector<CompletionResponse> complete_batch(
      const std::vector<CompletionRequest>& requests);

  const Backend& backend() const { return *backend_; }
  std::size_t calls() const;

 private:
  void log(const CompletionRequest& req, const CompletionResponse& resp);

  std::shared_ptr<Backend> backend_;
  GatewayOptions options_;
  mutable std::mutex log_mu_;
  std::ofstream replay_;
  std::size_t calls_ = 0;
};

/// Scans for the last standalone "MCI" or "HC" token (case-insensitive).
Prediction parse_label(std::string_view text);

}  // namespace cogtipro::llm
