// Chat-completions client for a remote language-model proposer.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "coverage_pilot/json_io.hpp"
#include "coverage_pilot/proposer.hpp"

// After Eigen: <resolv.h> (pulled in by httplib) defines a macro named _res.
#include <httplib.h>

namespace cpilot {

namespace {

constexpr std::string_view kSystemPrompt =
    "You plan and evaluate coverage paths for an autonomous aerial vehicle on a 2-D grid. "
    "Follow the requested output format exactly.";

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // .../chat/completions
};

Endpoint split_base_url(const std::string& base) {
  const std::size_t scheme_end = base.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument("API base '" + base + "' must start with http:// or https://");
  }
  const std::size_t path_start = base.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = base.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : base.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  ep.path = prefix + "/chat/completions";
  return ep;
}

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v == nullptr ? std::string() : std::string(v);
}

}  // namespace

RemoteConfig RemoteConfig::from_env() {
  RemoteConfig config;
  config.base_url = env_or_empty("COVERAGE_PILOT_API_BASE");
  config.api_key = env_or_empty("COVERAGE_PILOT_API_KEY");
  config.model = env_or_empty("COVERAGE_PILOT_MODEL");
  std::string missing;
  if (config.base_url.empty()) missing += " COVERAGE_PILOT_API_BASE";
  if (config.api_key.empty()) missing += " COVERAGE_PILOT_API_KEY";
  if (config.model.empty()) missing += " COVERAGE_PILOT_MODEL";
  if (!missing.empty()) {
    throw std::invalid_argument("remote proposer is not configured; missing" + missing);
  }
  return config;
}

ProposerReply remote_propose(const ProposerAction& action, const ProposalContext& ctx,
                             const RemoteConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  const Endpoint ep = split_base_url(config.base_url);

  const Json body{
      {"model", config.model},
      {"messages", Json::array({Json{{"role", "system"}, {"content", kSystemPrompt}},
                                Json{{"role", "user"},
                                     {"content", build_prompt(action, ctx.map, ctx.coverage,
                                                              ctx.instruction, ctx.start)}}})},
      {"temperature", config.temperature},
  };
  const std::string payload = body.dump();
  const httplib::Headers headers{{"Authorization", "Bearer " + config.api_key}};

  std::string last_error;
  int requests = 0;
  for (int attempt = 0; attempt <= config.retry_budget; ++attempt) {
    if (attempt > 0) {
      const double delay = config.backoff_base_seconds * std::pow(2.0, attempt - 1);
      std::this_thread::sleep_for(std::chrono::duration<double>(delay));
    }
    // A fresh client per request keeps concurrent expansions independent.
    httplib::Client client(ep.origin);
    const auto timeout = std::chrono::duration<double>(config.timeout_seconds);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    ++requests;
    auto res = client.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw BackendUnavailable("chat-completions endpoint answered HTTP " +
                               std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }

    ProposerReply reply;
    std::string content;
    try {
      const Json j = Json::parse(res->body);
      content = j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
      reply.raw = res->body;
      reply.parse_error = std::string("malformed chat-completions response: ") + e.what();
    }
    if (!reply.parse_error) {
      try {
        reply = parse_reply(action.kind, content);
      } catch (const ReplyParseError& e) {
        reply.raw = content;
        reply.parse_error = e.what();
      }
    }
    reply.requests = requests;
    reply.latency_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return reply;
  }
  throw BackendUnavailable("chat-completions endpoint unavailable after " +
                           std::to_string(requests) + " requests (" + last_error + ")");
}

}  // namespace cpilot
