#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <random>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "lbm/think/parser.hpp"

namespace lbm::think {

using Clock = std::chrono::steady_clock;

// Raised when a backend cannot deliver; carries whatever was produced.
class BackendUnavailable : public Error {
 public:
  BackendUnavailable(const std::string& what, std::vector<CotResponse> partial = {})
      : Error(what), partial_(std::move(partial)) {}
  const std::vector<CotResponse>& partial() const { return partial_; }

 private:
  std::vector<CotResponse> partial_;
};

class ThinkBackend {
 public:
  virtual ~ThinkBackend() = default;
  virtual std::string name() const = 0;
  // Synchronous backends answer inline without blocking.
  virtual bool synchronous() const { return true; }
  virtual std::vector<CotResponse> generate(const PromptContext& ctx, const std::string& prompt, int n,
                                            Clock::time_point deadline = Clock::time_point::max()) = 0;
};

// Rule-based CoT: states the ratio implied by the context (shortest round-trip
// form, so the claim is exact) and concludes with `dir`.
inline std::string scripted_cot_text(const PromptContext& ctx, Direction dir) {
  const double ratio = ctx.computed_cpa_ratio();
  std::string s = "CPA limit " + format_roundtrip(ctx.cpa_constraint) + ". CPA ratio = " + format_roundtrip(ratio) + ". ";
  if (dir == Direction::Decrease)
    s += ratio > 1.0 ? "Cost per conversion is above the limit, so the bid should come down."
                     : "Spend should slow down, so the bid should come down.";
  else
    s += ratio > 1.0 ? "Conversions should pick up, so the bid should go up."
                     : "Cost per conversion is within the limit, so the bid should go up.";
  s += "\nDIRECTION: ";
  s += to_string(dir);
  return s;
}

// DECREASE iff the computed ratio exceeds 1.
inline Direction oracle_direction(const PromptContext& ctx) {
  return ctx.computed_cpa_ratio() > 1.0 ? Direction::Decrease : Direction::Increase;
}

// Scripted oracle; with noise_rate > 0 each response's direction is flipped
// independently with that probability (the noisy variant used to diversify
// GQPO groups).
class OracleBackend final : public ThinkBackend {
 public:
  explicit OracleBackend(double noise_rate = 0.0, std::uint64_t seed = 1) : noise_(noise_rate), rng_(seed) {
    if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw InvalidArgument("noise_rate must lie in [0, 1]");
  }
  std::string name() const override { return noise_ > 0.0 ? "noisy" : "scripted"; }
  double noise_rate() const { return noise_; }

  std::vector<CotResponse> generate(const PromptContext& ctx, const std::string&, int n,
                                    Clock::time_point = Clock::time_point::max()) override {
    if (n < 1) throw InvalidArgument("generate_cot needs n >= 1");
    ctx.validate();
    std::vector<CotResponse> out;
    const Direction base = oracle_direction(ctx);
    std::lock_guard lock(mu_);
    for (int i = 0; i < n; ++i) {
      Direction d = base;
      if (noise_ > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < noise_) d = flip(d);
      out.push_back(parse_cot(scripted_cot_text(ctx, d)));
    }
    return out;
  }

 private:
  double noise_;
  std::mt19937_64 rng_;
  std::mutex mu_;
};

struct RemoteConfig {
  std::string endpoint = "http://127.0.0.1:8000/v1/chat/completions";
  std::string model = "reasoner";
  double temperature = 0.7;
  int timeout_ms = 2000;
  int max_retries = 2;
  int max_in_flight = 4;
  std::string auth_env = "LBM_THINK_TOKEN";
  std::string system_prompt = "You are a careful auto-bidding analyst.";
};

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

inline ParsedUrl parse_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint '" + url + "' lacks a scheme");
  if (url.compare(0, scheme, "http") != 0) throw ConfigError("only http endpoints are supported: '" + url + "'");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

// JSON-over-HTTP chat completion: POST {model, messages, temperature, n};
// completions are read from choices[i].message.content.
class RemoteChatBackend final : public ThinkBackend {
 public:
  explicit RemoteChatBackend(RemoteConfig cfg)
      : cfg_(std::move(cfg)), url_(parse_endpoint(cfg_.endpoint)), slots_(std::clamp(cfg_.max_in_flight, 1, 64)) {
    if (cfg_.max_in_flight < 1 || cfg_.max_in_flight > 64) throw ConfigError("max_in_flight must lie in [1, 64]");
    if (cfg_.timeout_ms < 0 || cfg_.max_retries < 0) throw ConfigError("timeout and retries must be non-negative");
  }

  std::string name() const override { return "remote"; }
  bool synchronous() const override { return false; }
  const RemoteConfig& config() const { return cfg_; }

  std::vector<CotResponse> generate(const PromptContext&, const std::string& prompt, int n,
                                    Clock::time_point deadline = Clock::time_point::max()) override {
    if (n < 1) throw InvalidArgument("generate_cot needs n >= 1");
    const auto start = Clock::now();
    const auto budget_end = start + std::chrono::milliseconds(cfg_.timeout_ms);
    const auto end = std::min(deadline, budget_end);
    std::vector<CotResponse> out;
    if (cfg_.timeout_ms == 0 || end <= start) throw BackendUnavailable("remote think: no time left for a request");
    if (!slots_.try_acquire_until(end)) throw BackendUnavailable("remote think: in-flight limit reached until deadline");
    struct Release {
      std::counting_semaphore<64>& s;
      ~Release() { s.release(); }
    } release{slots_};

    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= cfg_.max_retries && static_cast<int>(out.size()) < n; ++attempt) {
      const auto now = Clock::now();
      if (now >= end) break;
      const auto left = std::chrono::duration_cast<std::chrono::microseconds>(end - now).count();
      httplib::Client cli(url_.scheme_host_port);
      cli.set_connection_timeout(left / 1000000, left % 1000000);
      cli.set_read_timeout(left / 1000000, left % 1000000);
      cli.set_write_timeout(left / 1000000, left % 1000000);
      httplib::Headers headers;
      if (const char* tok = std::getenv(cfg_.auth_env.c_str()); tok && *tok)
        headers.emplace("Authorization", std::string("Bearer ") + tok);
      const int want = n - static_cast<int>(out.size());
      const nlohmann::json body = {
          {"model", cfg_.model},
          {"messages", {{{"role", "system"}, {"content", cfg_.system_prompt}}, {{"role", "user"}, {"content", prompt}}}},
          {"temperature", cfg_.temperature},
          {"n", want}};
      auto res = cli.Post(url_.path, headers, body.dump(), "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "HTTP " + std::to_string(res->status);
        if (res->status >= 400 && res->status < 500 && res->status != 429) break;  // not retryable
        continue;
      }
      try {
        const auto j = nlohmann::json::parse(res->body);
        for (const auto& c : j.at("choices")) {
          if (static_cast<int>(out.size()) >= n) break;
          out.push_back(parse_cot(c.at("message").at("content").get<std::string>()));
        }
      } catch (const std::exception& e) {
        last_error = std::string("malformed response: ") + e.what();
      }
    }
    if (static_cast<int>(out.size()) < n)
      throw BackendUnavailable("remote think failed after retries (" + last_error + ")", std::move(out));
    return out;
  }

 private:
  RemoteConfig cfg_;
  ParsedUrl url_;
  std::counting_semaphore<64> slots_;
};

// Calls the backend and returns n responses (generate_cot).
inline std::vector<CotResponse> generate_cot(ThinkBackend& backend, const PromptContext& ctx, int n,
                                             Clock::time_point deadline = Clock::time_point::max()) {
  return backend.generate(ctx, build_prompt(ctx), n, deadline);
}

}  // namespace lbm::think
