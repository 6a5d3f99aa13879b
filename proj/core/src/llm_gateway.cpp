// SPDX-License-Identifier: Apache-2.0
#include "cogtipro/llm_gateway.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "cogtipro/error.hpp"
#include "cogtipro/json_io.hpp"
#include "cogtipro/text.hpp"

namespace cogtipro::llm {

using nlohmann::json;

std::string_view to_string(Role r) {
  switch (r) {
    case Role::kExtractor:
      return "extractor";
    case Role::kClassifier:
      return "classifier";
    case Role::kRefiner:
      return "refiner";
  }
  return "extractor";
}

Role role_from_string(std::string_view s) {
  auto n = text::normalize(s);
  if (n == "extractor") return Role::kExtractor;
  if (n == "classifier") return Role::kClassifier;
  if (n == "refiner") return Role::kRefiner;
  throw ConfigError(fmt::format("unknown role tag '{}'", s));
}

// ---- fixture ----------------------------------------------------------------

FixtureBackend::FixtureBackend(std::vector<FixtureEntry> entries)
    : scripts_(3), cursors_(3, 0) {
  for (auto& e : entries) {
    scripts_[static_cast<std::size_t>(e.role)].push_back(std::move(e.response));
  }
}

std::shared_ptr<FixtureBackend> FixtureBackend::from_file(
    const std::filesystem::path& path) {
  auto j = json_io::read_json_file(path);
  if (!j.is_array()) {
    throw IngestionError(
        fmt::format("fixture '{}' must be a JSON array", path.string()));
  }
  std::vector<FixtureEntry> entries;
  for (const auto& e : j) {
    try {
      entries.push_back({role_from_string(e.at("role_tag").get<std::string>()),
                         e.at("response").get<std::string>()});
    } catch (const json::exception& ex) {
      throw IngestionError(
          fmt::format("fixture '{}': {}", path.string(), ex.what()));
    }
  }
  return std::make_shared<FixtureBackend>(std::move(entries));
}

CompletionResponse FixtureBackend::complete(const CompletionRequest& request) {
  std::lock_guard lock(mu_);
  auto r = static_cast<std::size_t>(request.role);
  if (cursors_[r] >= scripts_[r].size()) {
    throw FixtureExhaustedError(
        fmt::format("fixture has no {} response left (used {})",
                    to_string(request.role), scripts_[r].size()));
  }
  return {scripts_[r][cursors_[r]++], id(), std::nullopt, std::nullopt};
}

std::size_t FixtureBackend::remaining(Role role) const {
  std::lock_guard lock(mu_);
  auto r = static_cast<std::size_t>(role);
  return scripts_[r].size() - cursors_[r];
}

// ---- gateway ----------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options)
    : backend_(std::move(backend)), options_(std::move(options)) {
  if (!backend_) throw ConfigError("gateway requires a backend");
  if (options_.parallelism < 1) options_.parallelism = 1;
  if (options_.replay_log) {
    if (options_.replay_log->has_parent_path()) {
      std::filesystem::create_directories(options_.replay_log->parent_path());
    }
    replay_.open(*options_.replay_log, std::ios::app);
    if (!replay_) {
      throw IoError(fmt::format("cannot open replay log '{}'",
                                options_.replay_log->string()));
    }
  }
}

Gateway::~Gateway() = default;

std::size_t Gateway::calls() const {
  std::lock_guard lock(log_mu_);
  return calls_;
}

void Gateway::log(const CompletionRequest& req,
                  const CompletionResponse& resp) {
  std::lock_guard lock(log_mu_);
  ++calls_;
  if (!replay_.is_open()) return;
  json j{{"role_tag", std::string(to_string(req.role))},
         {"prompt_text", req.prompt_text},
         {"input_text", req.input_text},
         {"temperature", req.temperature},
         {"max_tokens", req.max_tokens},
         {"response", resp.text},
         {"backend_id", resp.backend_id}};
  replay_ << j.dump() << '\n';
  replay_.flush();
}

CompletionResponse Gateway::complete(const CompletionRequest& request) {
  auto resp = backend_->complete(request);
  if (text::trim(resp.text).empty()) {
    throw Error(fmt::format("backend '{}' returned an empty {} completion",
                            backend_->id(), to_string(request.role)));
  }
  log(request, resp);
  return resp;
}

std::vector<CompletionResponse> Gateway::complete_batch(
    const std::vector<CompletionRequest>& requests) {
  std::vector<CompletionResponse> out(requests.size());
  const auto n = requests.size();
  int workers = std::min<int>(options_.parallelism, static_cast<int>(n));
  if (!backend_->order_independent() || workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = complete(requests[i]);
    return out;
  }

  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = complete(requests[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

// ---- label parsing ----------------------------------------------------------

Prediction parse_label(std::string_view s) {
  Prediction last = Prediction::Abstain;
  std::size_t i = 0;
  auto is_word = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
  };
  while (i < s.size()) {
    while (i < s.size() && !is_word(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && is_word(s[j])) ++j;
    if (j > i) {
      auto w = text::to_lower_ascii(s.substr(i, j - i));
      if (w == "mci") last = Prediction::MCI;
      if (w == "hc") last = Prediction::HC;
    }
    i = j;
  }
  return last;
}

}  // namespace cogtipro::llm
