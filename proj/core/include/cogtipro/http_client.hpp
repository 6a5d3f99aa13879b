// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace cogtipro::http {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

/// Splits "http(s)://host[:port][/path]". Throws ConfigError otherwise.
Endpoint parse_url(std::string_view url);

struct PostOptions {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::seconds timeout{60};
  std::optional<std::string> bearer_token;
};

/// POSTs a JSON body and parses a JSON reply. Connection failures, 429 and
/// 5xx responses are retried with exponential backoff; after the last attempt
/// a TransportError is thrown. Other non-2xx statuses throw ConfigError.
nlohmann::json post_json(std::string_view url, const nlohmann::json& body,
                         const PostOptions& options);

/// Value of an environment variable, if set and non-empty.
std::optional<std::string> env_token(const std::string& variable);

}  // namespace cogtipro::http
