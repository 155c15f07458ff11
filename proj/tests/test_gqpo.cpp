#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "lbm/core/hash.hpp"
#include "lbm/gqpo/adapters.hpp"
#include "lbm/gqpo/pipeline.hpp"

using namespace lbm;
using namespace lbm::gqpo;
using think::Direction;

namespace {

std::vector<market::Trajectory> synthetic_data(int n, int T = 48, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 5.0f), ua(0.5f, 9.0f);
  std::vector<market::Trajectory> out;
  for (int i = 0; i < n; ++i) {
    market::Trajectory t;
    t.meta.id = 100 + i;
    t.meta.budget = 10000;
    t.meta.cpa_constraint = 8;
    for (int k = 0; k < T; ++k) {
      act::StateRow s;
      for (auto& x : s) x = u(rng);
      t.states.push_back(s);
      t.actions.push_back(ua(rng));
      t.rewards.push_back(1.0f);
      t.costs.push_back(8.0f);
    }
    t.returns_to_go = market::plain_returns_to_go(t.rewards);
    out.push_back(std::move(t));
  }
  return out;
}

// INCREASE raises the dataset action, DECREASE lowers it, within [0, 10].
struct DirectionActor {
  double operator()(const market::Trajectory& tr, int t, const std::string& cot) const {
    const double a = tr.actions[t];
    const auto d = think::parse_cot(cot).direction;
    if (d == Direction::Increase) return std::min(a + 0.5, 10.0);
    if (d == Direction::Decrease) return std::max(a - 0.5, 0.0);
    return a;
  }
};

struct MonotoneCritic {
  double operator()(const market::Trajectory&, int, double action) const { return 2.0 * action; }
};

// Deterministic pseudo-random Q per (trajectory, t, action), positive or not.
struct HashCritic {
  double operator()(const market::Trajectory& tr, int t, double action) const {
    std::uint64_t h = fnv1a64(std::to_string(tr.meta.id) + ":" + std::to_string(t) + ":" + format_roundtrip(action));
    return static_cast<double>(h % 2001) / 1000.0 - 1.0;
  }
};

// Independent reference for the selection rule.
std::optional<std::size_t> brute_force_best(const std::vector<double>& dq) {
  double best = 0.0;
  for (double v : dq) best = std::max(best, v);
  if (!(best > 0.0)) return std::nullopt;
  for (std::size_t i = 0; i < dq.size(); ++i)
    if (dq[i] == best) return i;
  return std::nullopt;
}

class FailingBackend final : public think::ThinkBackend {
 public:
  explicit FailingBackend(int ok_calls) : ok_(ok_calls) {}
  std::string name() const override { return "failing"; }
  std::vector<think::CotResponse> generate(const think::PromptContext& ctx, const std::string& p, int n,
                                           think::Clock::time_point d) override {
    if (calls_++ >= ok_) throw think::BackendUnavailable("injected failure");
    return inner_.generate(ctx, p, n, d);
  }

 private:
  int ok_;
  int calls_ = 0;
  think::OracleBackend inner_;
};

class AsyncOracle final : public think::ThinkBackend {
 public:
  std::string name() const override { return "async"; }
  bool synchronous() const override { return false; }
  std::vector<think::CotResponse> generate(const think::PromptContext& ctx, const std::string& p, int n,
                                           think::Clock::time_point d) override {
    return inner_.generate(ctx, p, n, d);
  }

 private:
  think::OracleBackend inner_;
};

std::string temp_path(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST(RelativeQ, Examples) {
  const auto data = synthetic_data(1);
  MonotoneCritic mono;
  EXPECT_EQ(relative_q(mono, data[0], 3, 2.5, 2.5), 0.0);
  EXPECT_GT(relative_q(mono, data[0], 3, 3.0, 2.5), 0.0);
  auto stub = [](const market::Trajectory&, int, double a) { return a == 1.0 ? 5.0 : 4.0; };
  EXPECT_EQ(relative_q(stub, data[0], 3, 1.0, 2.0), 1.0);
  EXPECT_THROW(relative_q(mono, data[0], 48, 1.0, 2.0), InvalidArgument);
}

TEST(SelectBest, Examples) {
  EXPECT_EQ(select_best({-0.1, 0.3, 0.2}), std::optional<std::size_t>(1));
  EXPECT_EQ(select_best({-0.1, -0.3, 0.0}), std::nullopt);
  EXPECT_EQ(select_best({0.3, 0.3}), std::optional<std::size_t>(0));
  EXPECT_THROW(select_best({}), InvalidArgument);
}

TEST(SelectBest, MatchesBruteForceOnRandomGroups) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> size(1, 6), level(-3, 3);
  for (int g = 0; g < 1000; ++g) {
    std::vector<double> dq(static_cast<std::size_t>(size(rng)));
    for (auto& v : dq) v = level(rng) * 0.1;  // coarse levels force ties and zeros
    const auto got = select_best(dq);
    EXPECT_EQ(got, brute_force_best(dq));
    if (got) {
      for (double v : dq) EXPECT_GE(dq[*got], v);
    }
  }
}

TEST(Pipeline, MonotoneCriticFilterAndIncreaseChosen) {
  const auto data = synthetic_data(6);
  DirectionActor actor;
  MonotoneCritic critic;
  think::OracleBackend noisy(0.5, 7);
  GqpoConfig cfg;
  cfg.target_count = 150;
  cfg.seed = 3;
  const auto res = run_pipeline(data, actor, critic, noisy, cfg);
  ASSERT_EQ(res.records.size(), 150u);
  EXPECT_TRUE(res.report.target_reached);
  EXPECT_GT(res.report.rejected_groups, 0u);
  for (const auto& r : res.records) {
    EXPECT_GT(r.delta_q, 0.0);
    EXPECT_EQ(r.direction, Direction::Increase);
    EXPECT_DOUBLE_EQ(r.weight, std::exp(r.delta_q));
    EXPECT_EQ(r.prompt.rfind("[prompt-v1]", 0), 0u);
    EXPECT_LE(r.group_delta_q.size(), 2u);  // only two distinct scripted texts per state
  }
  EXPECT_EQ(res.report.chosen_directions.at("INCREASE"), 150u);
  EXPECT_EQ(res.report.accepted, 150u);
  EXPECT_EQ(res.report.pairs_examined, res.report.accepted + res.report.rejected_groups);
}

TEST(Pipeline, ChoicesEqualIndependentBruteForcePass) {
  const auto data = synthetic_data(10);
  DirectionActor actor;
  HashCritic critic;
  GqpoConfig cfg;
  cfg.target_count = 100000;  // unreachable: every pair is examined
  cfg.seed = 11;
  think::OracleBackend noisy(0.5, 21);
  const auto res = run_pipeline(data, actor, critic, noisy, cfg);
  EXPECT_FALSE(res.report.target_reached);
  EXPECT_EQ(res.report.pairs_examined, 10u * 47u);

  // Reference: same pair order and generator seed, scored and selected from scratch.
  std::vector<std::pair<std::size_t, int>> pairs;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (int t = 1; t < 48; ++t) pairs.emplace_back(i, t);
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  think::OracleBackend ref_backend(0.5, 21);
  std::vector<std::pair<std::uint64_t, std::string>> expected;
  for (const auto& [i, t] : pairs) {
    const auto& tr = data[i];
    const auto ctx = think::context_from_states(tr.states, tr.actions, t, 8, 10000, 48);
    const auto group = ref_backend.generate(ctx, think::build_prompt(ctx), 3);
    std::vector<std::string> texts;
    std::vector<double> dq;
    for (const auto& c : group) {
      if (std::find(texts.begin(), texts.end(), c.text) != texts.end()) continue;
      texts.push_back(c.text);
      dq.push_back(critic(tr, t, actor(tr, t, c.text)) - critic(tr, t, tr.actions[t]));
    }
    if (auto b = brute_force_best(dq)) expected.emplace_back(tr.meta.id * 100 + t, texts[*b]);
  }
  ASSERT_EQ(res.records.size(), expected.size());
  for (std::size_t k = 0; k < expected.size(); ++k) {
    EXPECT_EQ(res.records[k].traj_id * 100 + res.records[k].t, expected[k].first);
    EXPECT_EQ(res.records[k].response, expected[k].second);
  }
}

TEST(Pipeline, BetaZeroGivesUnitWeights) {
  const auto data = synthetic_data(3);
  DirectionActor actor;
  MonotoneCritic critic;
  think::OracleBackend noisy(0.5, 2);
  GqpoConfig cfg;
  cfg.beta = 0.0;
  cfg.target_count = 50;
  for (const auto& r : run_pipeline(data, actor, critic, noisy, cfg).records) EXPECT_EQ(r.weight, 1.0);
}

TEST(Pipeline, DeterministicExport) {
  const auto data = synthetic_data(3);
  DirectionActor actor;
  HashCritic critic;
  GqpoConfig cfg;
  cfg.target_count = 40;
  think::OracleBackend a(0.5, 4), b(0.5, 4);
  EXPECT_EQ(encode_sft(run_pipeline(data, actor, critic, a, cfg).records, cfg.beta),
            encode_sft(run_pipeline(data, actor, critic, b, cfg).records, cfg.beta));
}

TEST(Pipeline, ParallelGroupsMatchSequential) {
  const auto data = synthetic_data(3);
  DirectionActor actor;
  HashCritic critic;
  GqpoConfig cfg;
  cfg.target_count = 60;
  think::OracleBackend seq;
  AsyncOracle par;
  const auto r1 = run_pipeline(data, actor, critic, seq, cfg, 1);
  const auto r2 = run_pipeline(data, actor, critic, par, cfg, 4);
  EXPECT_EQ(r1.records, r2.records);
}

TEST(Pipeline, BackendFailureKeepsPartialOutput) {
  const auto data = synthetic_data(3);
  DirectionActor actor;
  MonotoneCritic critic;
  FailingBackend failing(10);
  GqpoConfig cfg;
  cfg.target_count = 100;
  const auto res = run_pipeline(data, actor, critic, failing, cfg);
  EXPECT_EQ(res.report.pairs_examined, 10u);
  EXPECT_EQ(res.records.size(), res.report.accepted);
  EXPECT_GT(res.records.size(), 0u);
  EXPECT_FALSE(res.report.backend_error.empty());
  EXPECT_FALSE(res.report.target_reached);
}

TEST(Pipeline, ConfigAndReport) {
  GqpoConfig cfg;
  cfg.group_size = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.beta = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  GqpoReport rep;
  for (double v : {-1.0, -0.05, 0.0, 0.0005, 0.5}) rep.add_to_histogram(v);
  const auto j = rep.to_json();
  std::size_t total = 0;
  for (const auto& b : j.at("delta_q_histogram")) total += b.at("count").get<std::size_t>();
  EXPECT_EQ(total, 5u);
  EXPECT_EQ(j.at("delta_q_histogram").at(0).at("count"), 1);  // < -0.1
  EXPECT_EQ(j.at("delta_q_histogram").at(4).at("count"), 2);  // [0, 0.001): 0 and 0.0005
}

TEST(Sft, TwoThousandRecordsRoundTrip) {
  std::vector<GqpoRecord> recs;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(1e-6, 2.0);
  for (int i = 0; i < 2000; ++i) {
    GqpoRecord r;
    r.prompt = "[prompt-v1]\nline \"two\"\n";
    r.response = "CPA ratio = 0.1.\nDIRECTION: INCREASE";
    r.delta_q = u(rng);
    r.weight = std::exp(r.delta_q);
    r.traj_id = i / 47;
    r.t = i % 47 + 1;
    r.direction = Direction::Increase;
    r.cot_action = u(rng);
    r.dataset_action = u(rng);
    r.group_delta_q = {r.delta_q, -u(rng)};
    r.rejected = 2;
    recs.push_back(r);
  }
  const auto path = temp_path("lbm_test_sft.jsonl");
  export_sft(path, recs, 1.0);
  std::ifstream in(path);
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 2001);
  const auto f = read_sft(path);
  EXPECT_EQ(f.records, recs);
  EXPECT_EQ(f.header.at("format"), "gqpo-sft-v1");
  EXPECT_EQ(f.header.at("recommended_finetune").at("batch_size"), 64);
  EXPECT_EQ(f.header.at("recommended_finetune").at("learning_rate"), 1e-6);
  EXPECT_EQ(f.header.at("recommended_finetune").at("epochs"), 5);
  std::remove(path.c_str());
}

TEST(Sft, RefusesInvalidExports) {
  GqpoRecord r;
  r.delta_q = 0.0;
  EXPECT_THROW(encode_sft({r}, 1.0), InvalidArgument);
  r.delta_q = -0.5;
  EXPECT_THROW(encode_sft({r}, 1.0), InvalidArgument);
  EXPECT_THROW(encode_sft({}, 1.0), InvalidArgument);
  r.delta_q = 0.5;
  EXPECT_THROW(export_sft("/nonexistent-dir/x.jsonl", {r}, 1.0), IoError);
  EXPECT_THROW(read_sft(temp_path("lbm_missing_sft.jsonl")), MissingArtifact);
}

TEST(Adapters, BundlesActAsActorAndCritic) {
  const auto data = synthetic_data(2, 12);
  std::mt19937_64 rng(1);
  act::ActBundle ab;
  act::ActModelConfig ac;
  ac.transformer = {.d_model = 16, .n_heads = 2, .n_layers = 1, .max_seq_len = 3 * 2 + 2 + 64};
  ac.seq_len = 2;
  ac.vocab_size = 200;
  ac.max_cot_len = 64;
  ac.embed_widths = {16, 16, 16};
  ac.head_widths = {16, 1};
  ab.model = act::ActModel<float>(ac, rng);
  ab.tokenizer = act::Tokenizer(200);
  ab.normalizer = act::Normalizer::fit(data, 2000.0);
  ab.rtg = act::RtgSchedule::from_dataset(data, 2000.0, 0.0);
  iql::IqlConfig qc;
  qc.transformer = {.d_model = 16, .n_heads = 2, .n_layers = 1, .max_seq_len = 4};
  qc.seq_len = 2;
  qc.batch_size = 4;
  iql::IqlLearner<float> learner(qc);
  auto cb = iql::make_critic_bundle(learner, ab.normalizer, data);
  BundleActor actor(ab);
  BundleCritic critic(cb);
  static_assert(Actor<BundleActor> && Critic<BundleCritic>);
  think::OracleBackend noisy(0.5, 1);
  GqpoConfig cfg;
  cfg.target_count = 5;
  const auto res = run_pipeline(data, actor, critic, noisy, cfg);
  for (const auto& r : res.records) EXPECT_GT(r.delta_q, 0.0);
  EXPECT_EQ(actor(data[0], 4, "DIRECTION: INCREASE"), actor(data[0], 4, "DIRECTION: INCREASE"));
  const auto before = critic.out_of_distribution();
  critic(data[0], 4, data[0].actions[4]);
  EXPECT_EQ(critic.out_of_distribution(), before);
  critic(data[0], 4, 50.0);
  EXPECT_EQ(critic.out_of_distribution(), before + 1);
}
