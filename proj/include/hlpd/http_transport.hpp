#pragma once

#include <string>

#include "hlpd/endpoint.hpp"
#include "httplib.h"

namespace hlpd {

// cpp-httplib transport. https needs CPPHTTPLIB_OPENSSL_SUPPORT at build time.
inline HttpReply httplib_post(const HttpPost& post) {
  if (network_forbidden()) return {0, {}, "network access is disabled"};
  const auto scheme_end = post.url.find("://");
  if (scheme_end == std::string::npos) return {0, {}, "malformed URL " + post.url};
  const auto path_start = post.url.find('/', scheme_end + 3);
  const std::string origin = post.url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : post.url.substr(path_start);

  httplib::Client client(origin);
  client.set_connection_timeout(post.timeout_s, 0);
  client.set_read_timeout(post.timeout_s, 0);
  client.set_write_timeout(post.timeout_s, 0);
  httplib::Headers headers;
  std::string content_type = "application/json";
  for (const auto& [k, v] : post.headers) {
    if (k == "Content-Type") content_type = v;
    else headers.emplace(k, v);
  }
  const auto result = client.Post(path, headers, post.body, content_type);
  if (!result) return {0, {}, httplib::to_string(result.error())};
  return {result->status, result->body, {}};
}

}  // namespace hlpd
