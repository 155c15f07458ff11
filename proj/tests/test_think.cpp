#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "lbm/think/backend.hpp"
#include "lbm/think/cot_file.hpp"
#include "lbm/think/scheduler.hpp"

using namespace lbm;
using namespace lbm::think;
using namespace std::chrono_literals;

namespace {

PromptContext make_ctx(double cost, double conversions, double C, int rows = 4) {
  PromptContext ctx;
  ctx.cpa_constraint = C;
  ctx.budget = 1000;
  ctx.total_cost = cost;
  ctx.total_conversions = conversions;
  ctx.t = rows;
  for (int i = 0; i < rows; ++i) ctx.history.push_back({i, conversions / rows, cost / rows, 1000 - cost * (i + 1) / rows, 3.5, 1.25});
  return ctx;
}

// Canned chat-completion server on an ephemeral port.
struct FakeServer {
  httplib::Server srv;
  int port = 0;
  std::thread th;
  std::atomic<int> calls{0};
  std::function<void(int call, const httplib::Request&, httplib::Response&)> handler;

  FakeServer() {
    srv.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      handler(calls++, req, res);
    });
    port = srv.bind_to_any_port("127.0.0.1");
    th = std::thread([this] { srv.listen_after_bind(); });
    srv.wait_until_ready();
  }
  ~FakeServer() {
    srv.stop();
    th.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions"; }
};

void reply_choices(const httplib::Request& req, httplib::Response& res, const std::string& text) {
  const auto in = nlohmann::json::parse(req.body);
  nlohmann::json out = {{"choices", nlohmann::json::array()}};
  for (int i = 0; i < in.at("n").get<int>(); ++i)
    out["choices"].push_back({{"index", i}, {"message", {{"role", "assistant"}, {"content", text}}}});
  res.set_content(out.dump(), "application/json");
}

int run_episode(ThinkScheduler& sched, int T) {
  int used = 0;
  for (int t = 1; t <= T; ++t) {
    sched.request(t, make_ctx(24, 2, 6));
    if (!sched.take(t).empty()) ++used;
  }
  sched.join();
  return used;
}

}  // namespace

TEST(Prompt, DeterministicWithRawNumbers) {
  const auto ctx = make_ctx(24, 2, 6);
  const auto p = build_prompt(ctx);
  EXPECT_EQ(p, build_prompt(ctx));
  EXPECT_NE(p.find("[prompt-v1]"), std::string::npos);
  EXPECT_NE(p.find("Cumulative spend 24, cumulative conversions 2"), std::string::npos);
  EXPECT_NE(p.find("CPA constraint 6"), std::string::npos);
  EXPECT_EQ(p.find("= 2"), std::string::npos);  // the ratio itself is never shown
  EXPECT_NE(p.find("DIRECTION: INCREASE or DIRECTION: DECREASE"), std::string::npos);
  EXPECT_DOUBLE_EQ(ctx.computed_cpa_ratio(), 2.0);
}

TEST(Prompt, RowsMatchHistory) {
  const auto p = build_prompt(make_ctx(10, 2, 6, 2));
  std::istringstream in(p);
  int rows = -1;  // the table header also contains separators
  for (std::string line; std::getline(in, line);)
    if (line.find(" | ") != std::string::npos) ++rows;
  EXPECT_EQ(rows, 2);
  EXPECT_THROW(build_prompt(make_ctx(10, 2, 6, 0)), InvalidArgument);
}

TEST(Prompt, ContextFromStatesUsesShownValues) {
  namespace f = market::feature;
  std::vector<act::StateRow> states(3);
  states[1][f::cumulative_cost] = 12.3456f;
  states[2][f::cumulative_cost] = 24.001f;
  states[2][f::cumulative_conversions] = 2.0f;
  states[1][f::last_interval_cost] = 12.3456f;
  states[1][f::budget_left] = 0.5f;
  std::vector<float> actions{1.0f, 1.5f};
  const auto ctx = context_from_states(states, actions, 2, 6.0, 100.0, 48);
  ASSERT_EQ(ctx.history.size(), 2u);
  EXPECT_DOUBLE_EQ(ctx.history[0].spend, 12.35);
  EXPECT_DOUBLE_EQ(ctx.history[0].remaining_budget, 50.0);
  EXPECT_DOUBLE_EQ(ctx.total_cost, 24.0);
  EXPECT_DOUBLE_EQ(ctx.history[1].action, 1.5);
  EXPECT_TRUE(context_from_states(states, actions, 0, 6.0, 100.0, 48).history.empty());
  EXPECT_EQ(context_from_states(std::vector<act::StateRow>(10), std::vector<float>(9), 9, 6, 100, 48).history.size(), 4u);
}

TEST(Parser, Examples) {
  EXPECT_EQ(parse_cot("Spend is high.\nDIRECTION: DECREASE").direction, Direction::Decrease);
  const auto two = parse_cot("DIRECTION: DECREASE\nOn reflection\nDIRECTION: INCREASE");
  EXPECT_EQ(two.direction, Direction::Increase);
  EXPECT_FALSE(two.diagnostics.empty());
  const auto none = parse_cot("The bid looks fine as it is.");
  EXPECT_EQ(none.direction, Direction::None);
  EXPECT_FALSE(none.diagnostics.empty());
  EXPECT_EQ(parse_cot("DIRECTION: maybe").direction, Direction::None);
  EXPECT_EQ(parse_cot("direction: increase.").direction, Direction::Increase);
  const auto r = parse_cot("cpa ratio was 3 earlier. Now the CPA ratio = 1.25e0, up.\nDIRECTION: DECREASE");
  ASSERT_TRUE(r.claimed_cpa_ratio);
  EXPECT_DOUBLE_EQ(*r.claimed_cpa_ratio, 1.25);
  EXPECT_FALSE(parse_cot("DIRECTION: INCREASE").claimed_cpa_ratio);
}

TEST(Parser, Totality) {
  std::mt19937_64 rng(1);
  const std::string alphabet = "DIRECTION:INCREASEDECREASE CPA ratio=0.123456789e+-\n\t.!x";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), len(0, 80);
  for (int i = 0; i < 5000; ++i) {
    std::string s;
    for (std::size_t k = len(rng); k > 0; --k) s += alphabet[pick(rng)];
    if (i % 7 == 0) s += '\0';
    CotResponse r;
    ASSERT_NO_THROW(r = parse_cot(s));
    EXPECT_TRUE(r.direction == Direction::Increase || r.direction == Direction::Decrease || r.direction == Direction::None);
    if (r.claimed_cpa_ratio) {
      EXPECT_GE(*r.claimed_cpa_ratio, 0.0);
    }
  }
}

TEST(Hallucination, Examples) {
  const auto ctx = make_ctx(24, 2, 6);
  CotResponse c;
  c.claimed_cpa_ratio = 2.0;
  EXPECT_TRUE(hallucination_check(ctx, c).pass);
  c.claimed_cpa_ratio = 1.0;
  EXPECT_FALSE(hallucination_check(ctx, c, 0.05).pass);
  c.claimed_cpa_ratio.reset();
  const auto w = hallucination_check(ctx, c);
  EXPECT_TRUE(w.pass);
  EXPECT_TRUE(w.warning);
}

TEST(Oracle, DirectionsAndNoise) {
  OracleBackend scripted;
  EXPECT_EQ(scripted.generate(make_ctx(14.4, 2, 6), "", 1)[0].direction, Direction::Decrease);  // ratio 1.2
  EXPECT_EQ(scripted.generate(make_ctx(9.6, 2, 6), "", 1)[0].direction, Direction::Increase);   // ratio 0.8
  OracleBackend flipped(1.0);
  for (const auto& r : flipped.generate(make_ctx(9.6, 2, 6), "", 5)) EXPECT_EQ(r.direction, Direction::Decrease);
  EXPECT_EQ(scripted.generate(make_ctx(9.6, 2, 6), "", 3).size(), 3u);
  EXPECT_THROW(scripted.generate(make_ctx(9.6, 2, 6), "", 0), InvalidArgument);
  EXPECT_THROW(OracleBackend(1.5), InvalidArgument);
}

TEST(Oracle, ClaimsPassAtZeroTolerance) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 500.0);
  std::uniform_int_distribution<int> conv(0, 40);
  OracleBackend noisy(0.5, 9);
  for (int i = 0; i < 2000; ++i) {
    const auto ctx = make_ctx(shown(u(rng)), conv(rng), shown(1.0 + u(rng) / 50.0));
    for (const auto& r : noisy.generate(ctx, build_prompt(ctx), 2)) {
      ASSERT_TRUE(r.claimed_cpa_ratio);
      EXPECT_TRUE(hallucination_check(ctx, r, 0.0).pass) << r.text;
    }
  }
}

TEST(Remote, CannedChoicesAndRequestShape) {
  FakeServer fake;
  nlohmann::json seen;
  std::string auth;
  fake.handler = [&](int, const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    auth = req.get_header_value("Authorization");
    reply_choices(req, res, "CPA ratio = 2.0.\nDIRECTION: DECREASE");
  };
  ::setenv("LBM_TEST_TOKEN", "secret", 1);
  RemoteConfig cfg;
  cfg.endpoint = fake.endpoint();
  cfg.auth_env = "LBM_TEST_TOKEN";
  RemoteChatBackend remote(cfg);
  const auto ctx = make_ctx(24, 2, 6);
  const auto out = generate_cot(remote, ctx, 3);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& r : out) {
    EXPECT_EQ(r.direction, Direction::Decrease);
    EXPECT_TRUE(hallucination_check(ctx, r).pass);
  }
  EXPECT_EQ(seen.at("n"), 3);
  EXPECT_EQ(seen.at("model"), cfg.model);
  EXPECT_EQ(seen.at("messages").back().at("content"), build_prompt(ctx));
  EXPECT_EQ(auth, "Bearer secret");
}

TEST(Remote, RetriesThenReportsPartial) {
  FakeServer fake;
  fake.handler = [](int call, const httplib::Request& req, httplib::Response& res) {
    if (call == 0) {
      res.status = 503;
      return;
    }
    if (call == 1) {
      nlohmann::json one = {{"choices", {{{"message", {{"content", "DIRECTION: INCREASE"}}}}}}};
      res.set_content(one.dump(), "application/json");
      return;
    }
    (void)req;
    res.status = 500;
  };
  RemoteConfig cfg;
  cfg.endpoint = fake.endpoint();
  cfg.max_retries = 2;
  RemoteChatBackend remote(cfg);
  try {
    generate_cot(remote, make_ctx(24, 2, 6), 2);
    FAIL() << "expected BackendUnavailable";
  } catch (const BackendUnavailable& e) {
    EXPECT_EQ(e.partial().size(), 1u);
  }
  EXPECT_EQ(fake.calls.load(), 3);
}

TEST(Remote, ClientErrorNotRetried) {
  FakeServer fake;
  fake.handler = [](int, const httplib::Request&, httplib::Response& res) { res.status = 401; };
  RemoteConfig cfg;
  cfg.endpoint = fake.endpoint();
  RemoteChatBackend remote(cfg);
  EXPECT_THROW(generate_cot(remote, make_ctx(24, 2, 6), 1), BackendUnavailable);
  EXPECT_EQ(fake.calls.load(), 1);
}

TEST(Remote, RejectsBadEndpoints) {
  RemoteConfig cfg;
  cfg.endpoint = "https://example.invalid/v1";
  EXPECT_THROW(RemoteChatBackend{cfg}, ConfigError);
  cfg.endpoint = "localhost:8000";
  EXPECT_THROW(RemoteChatBackend{cfg}, ConfigError);
  cfg.endpoint = "http://127.0.0.1:1/";
  cfg.max_in_flight = 0;
  EXPECT_THROW(RemoteChatBackend{cfg}, ConfigError);
}

TEST(Scheduler, ScriptedNeverMisses) {
  OracleBackend oracle;
  ThinkScheduler sched(oracle, 50ms);
  EXPECT_EQ(run_episode(sched, 47), 47);
  EXPECT_EQ(sched.stats().misses, 0);
  EXPECT_TRUE(sched.take(0).empty());  // never requested: not a miss
  EXPECT_EQ(sched.stats().misses, 0);
}

TEST(Scheduler, ZeroTimeoutAllMissEpisodeCompletes) {
  FakeServer fake;
  fake.handler = [](int, const httplib::Request& req, httplib::Response& res) { reply_choices(req, res, "DIRECTION: INCREASE"); };
  RemoteConfig cfg;
  cfg.endpoint = fake.endpoint();
  cfg.timeout_ms = 0;
  RemoteChatBackend remote(cfg);
  ThinkScheduler sched(remote, 100ms);
  const auto start = Clock::now();
  EXPECT_EQ(run_episode(sched, 48), 0);
  EXPECT_EQ(sched.stats().misses, 48);
  EXPECT_LT(Clock::now() - start, 48 * 100ms);
  EXPECT_EQ(fake.calls.load(), 0);
}

TEST(Scheduler, OneSlowResponseOneMiss) {
  FakeServer fake;
  fake.handler = [](int call, const httplib::Request& req, httplib::Response& res) {
    if (call == 17) std::this_thread::sleep_for(600ms);
    reply_choices(req, res, "CPA ratio = 2.\nDIRECTION: DECREASE");
  };
  RemoteConfig cfg;
  cfg.endpoint = fake.endpoint();
  cfg.timeout_ms = 5000;
  RemoteChatBackend remote(cfg);
  ThinkScheduler sched(remote, 250ms);
  EXPECT_EQ(run_episode(sched, 48), 47);
  const auto st = sched.stats();
  EXPECT_EQ(st.misses, 1);
  EXPECT_EQ(st.delivered, 47);
}

TEST(CotFile, RoundTripAndErrors) {
  CotFile f;
  f.header["source"] = "scripted";
  f.add({7, 3, "CPA ratio = 2.\nDIRECTION: DECREASE", Direction::Decrease, 2.0});
  f.add({7, 4, "no claim \"quoted\"\n", Direction::None, std::nullopt});
  const auto path = (std::filesystem::temp_directory_path() / "lbm_test_cot.jsonl").string();
  write_cot_file(path, f);
  const auto g = read_cot_file(path);
  ASSERT_EQ(g.entries.size(), 2u);
  const auto* e = g.find(7, 3);
  ASSERT_NE(e, nullptr);
  EXPECT_EQ(e->text, f.find(7, 3)->text);
  EXPECT_EQ(e->direction, Direction::Decrease);
  EXPECT_EQ(*e->claimed_cpa_ratio, 2.0);
  EXPECT_FALSE(g.find(7, 4)->claimed_cpa_ratio);
  EXPECT_EQ(g.find(8, 3), nullptr);
  EXPECT_EQ(g.header.at("source"), "scripted");
  std::remove(path.c_str());
  EXPECT_THROW(read_cot_file(path), MissingArtifact);
}
