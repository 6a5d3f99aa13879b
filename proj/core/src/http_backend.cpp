// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "cogtipro/error.hpp"
#include "cogtipro/http_client.hpp"
#include "cogtipro/llm_gateway.hpp"

namespace cogtipro {
namespace http {

using nlohmann::json;

Endpoint parse_url(std::string_view url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw ConfigError(fmt::format("URL '{}' lacks a scheme", url));
  }
  auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ConfigError(fmt::format("unsupported URL scheme in '{}'", url));
  }
  auto rest = url.substr(scheme_end + 3);
  auto slash = rest.find('/');
  auto host = rest.substr(0, slash);
  if (host.empty()) throw ConfigError(fmt::format("URL '{}' lacks a host", url));
  Endpoint e;
  e.origin = std::string(scheme) + "://" + std::string(host);
  e.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
  return e;
}

std::optional<std::string> env_token(const std::string& variable) {
  if (variable.empty()) return std::nullopt;
  const char* v = std::getenv(variable.c_str());
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

json post_json(std::string_view url, const json& body,
               const PostOptions& options) {
  auto ep = parse_url(url);
  httplib::Client client(ep.origin);
  client.set_connection_timeout(options.timeout);
  client.set_read_timeout(options.timeout);
  client.set_write_timeout(options.timeout);
  httplib::Headers headers;
  if (options.bearer_token) {
    headers.emplace("Authorization", "Bearer " + *options.bearer_token);
  }
  const std::string payload = body.dump();
  auto backoff = options.initial_backoff;
  std::string last_error;
  const int attempts = std::max(1, options.max_attempts);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    auto res = client.Post(ep.path, headers, payload, "application/json");
    if (res) {
      if (res->status >= 200 && res->status < 300) {
        try {
          return json::parse(res->body);
        } catch (const json::exception& e) {
          throw IngestionError(
              fmt::format("non-JSON reply from {}: {}", url, e.what()));
        }
      }
      if (res->status != 429 && res->status < 500) {
        throw ConfigError(fmt::format("{} answered HTTP {}: {}", url,
                                      res->status, res->body.substr(0, 200)));
      }
      last_error = fmt::format("HTTP {}", res->status);
    } else {
      last_error = httplib::to_string(res.error());
    }
    if (attempt < attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw TransportError(fmt::format("POST {} failed after {} attempts: {}", url,
                                   attempts, last_error));
}

}  // namespace http

namespace llm {

HttpBackend::HttpBackend(HttpOptions options) : options_(std::move(options)) {
  http::parse_url(options_.url);  // validate eagerly
}

CompletionResponse HttpBackend::complete(const CompletionRequest& request) {
  using nlohmann::json;
  json body{{"model", options_.model},
            {"messages",
             json::array({json{{"role", "system"}, {"content", request.prompt_text}},
                          json{{"role", "user"}, {"content", request.input_text}}})},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens}};
  http::PostOptions po;
  po.max_attempts = options_.max_attempts;
  po.initial_backoff = options_.initial_backoff;
  po.timeout = options_.timeout;
  po.bearer_token = http::env_token(options_.api_key_env);

  auto started = std::chrono::steady_clock::now();
  json reply = http::post_json(options_.url, body, po);
  auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);

  CompletionResponse resp;
  resp.backend_id = id();
  resp.latency = elapsed;
  try {
    const auto& content = reply.at("choices").at(0).at("message").at("content");
    resp.text = content.is_null() ? std::string{} : content.get<std::string>();
    if (reply.contains("usage")) {
      const auto& u = reply["usage"];
      resp.usage = Usage{u.value("prompt_tokens", 0), u.value("completion_tokens", 0)};
    }
  } catch (const json::exception& e) {
    throw IngestionError(
        fmt::format("chat completion reply lacks choices[0].message.content: {}",
                    e.what()));
  }
  return resp;
}

}  // namespace llm
}  // namespace cogtipro
