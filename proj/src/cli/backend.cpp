#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "kopa/cli.hpp"
#include "kopa/error.hpp"

namespace kopa::cli {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("backend.url needs a scheme: " + url);
  auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

void sleep_ms(double ms) {
  if (ms > 0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

BackendResult request(httplib::Client& client, const Endpoint& ep, const BackendSettings& s,
                      const std::string& prompt) {
  BackendResult out;
  const std::string body = nlohmann::json{{s.prompt_field, prompt}}.dump();
  for (std::size_t attempt = 0; attempt <= s.max_retries; ++attempt) {
    out.attempts = attempt + 1;
    double wait = s.backoff_ms * std::pow(2.0, double(attempt));
    auto res = client.Post(ep.path, body, "application/json");
    if (!res) {
      out.error = "transport: " + httplib::to_string(res.error());
    } else if (res->status == 200) {
      out.ok = true;
      out.error.clear();
      auto j = nlohmann::json::parse(res->body, nullptr, false);
      if (!j.is_discarded() && j.is_object() && j.contains(s.response_field) && j[s.response_field].is_string()) {
        out.text = j[s.response_field].get<std::string>();
        out.answer = parse_answer(out.text);
      }
      return out;
    } else {
      out.error = "HTTP " + std::to_string(res->status);
      const bool retryable = res->status == 429 || res->status >= 500;
      if (!retryable) return out;
      if (res->status == 429 && res->has_header("Retry-After")) {
        try {
          wait = std::max(wait, 1000.0 * std::stod(res->get_header_value("Retry-After")));
        } catch (const std::exception&) {
        }
      }
    }
    if (attempt < s.max_retries) sleep_ms(wait);
  }
  return out;
}

}  // namespace

std::vector<BackendResult> run_backend(const BackendSettings& s, std::span<const PromptInstance> instances) {
  if (!(s.timeout_s > 0.0)) throw ConfigError("backend.timeout_s must be > 0");
  if (s.window == 0) throw ConfigError("backend.window must be >= 1");
  const auto ep = split_url(s.url);

  std::vector<BackendResult> results(instances.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    httplib::Client client(ep.origin);
    const auto timeout = std::chrono::duration<double>(s.timeout_s);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    for (std::size_t i; (i = next.fetch_add(1)) < instances.size();) {
      results[i] = request(client, ep, s, serialize_prompt(instances[i]));
      if (!results[i].ok) spdlog::warn("instance {} failed after {} attempt(s): {}", i, results[i].attempts, results[i].error);
    }
  };
  const std::size_t n = std::min(s.window, std::max<std::size_t>(instances.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return results;
}

}  // namespace kopa::cli
