#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "lbm/act/bundle.hpp"
#include "lbm/act/trainer.hpp"
#include "lbm/market/dataset.hpp"
#include "lbm/nn/gradcheck.hpp"
#include "lbm/think/backend.hpp"

using namespace lbm;
using namespace lbm::act;
using think::Direction;

namespace {

ActModelConfig tiny_config(int L = 2, int d = 16) {
  ActModelConfig c;
  c.transformer.d_model = d;
  c.transformer.n_heads = 2;
  c.transformer.n_layers = 1;
  c.transformer.max_seq_len = 3 * L + 2 + 40;
  c.seq_len = L;
  c.vocab_size = Tokenizer::kFirstWord + 40;
  c.max_cot_len = 40;
  c.embed_widths = {d, d, d};
  c.head_widths = {d, d, 1};
  return c;
}

market::Trajectory synthetic_traj(std::uint64_t id, int T, std::mt19937_64& rng, float const_action = -1.0f) {
  market::Trajectory t;
  t.meta.id = id;
  t.meta.budget = 1000;
  t.meta.cpa_constraint = 5;
  std::normal_distribution<float> nd(0.0f, 1.0f);
  float a = 2.0f;
  for (int i = 0; i < T; ++i) {
    StateRow s{};
    for (auto& x : s) x = nd(rng);
    s[market::feature::time_left] = float(T - i) / T;
    t.states.push_back(s);
    a = const_action >= 0 ? const_action : std::clamp(a + 0.3f * nd(rng), 0.0f, 10.0f);
    t.actions.push_back(a);
    t.rewards.push_back(1.0f + 0.1f * i);
    t.costs.push_back(5.0f * t.rewards.back());
  }
  t.returns_to_go = market::plain_returns_to_go(t.rewards);
  return t;
}

DecisionSequence random_window(int L, std::mt19937_64& rng, int valid = -1) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  DecisionSequence s;
  s.L = L;
  s.valid_steps = valid < 0 ? L + 1 : valid;
  s.rtg.resize(L + 1);
  s.states.resize(L + 1);
  s.actions.resize(L);
  for (int k = 0; k <= L; ++k) {
    s.rtg[k] = nd(rng);
    for (auto& x : s.states[k]) x = nd(rng);
    if (k < L) s.actions[k] = nd(rng);
  }
  s.normalized = true;
  return s;
}

}  // namespace

TEST(Tokenizer, IdsInRangeAndTailKept) {
  Tokenizer tok(Tokenizer::kFirstWord + 5);
  tok.fit({"CPA ratio = 1.25. The bid should go up.\nDIRECTION: INCREASE", "DIRECTION: DECREASE bid bid"});
  const auto ids = tok.encode("Unseen words 42! DIRECTION: DECREASE");
  for (int id : ids) {
    EXPECT_GE(id, 0);
    EXPECT_LT(id, tok.vocab_size());
  }
  const auto tail = tok.encode("Unseen words 42! DIRECTION: DECREASE", 3);
  ASSERT_EQ(tail.size(), 3u);
  EXPECT_TRUE(std::equal(tail.begin(), tail.end(), ids.end() - 3));
  const auto back = Tokenizer::from_json(tok.to_json());
  EXPECT_EQ(back.encode("DIRECTION: INCREASE bid"), tok.encode("DIRECTION: INCREASE bid"));
  EXPECT_THROW(Tokenizer(10), InvalidArgument);
}

TEST(Tokenizer, DirectionsDiffer) {
  Tokenizer tok(2048);
  tok.fit({"DIRECTION: INCREASE", "DIRECTION: DECREASE"});
  EXPECT_NE(tok.encode("DIRECTION: INCREASE"), tok.encode("DIRECTION: DECREASE"));
  EXPECT_EQ(tok.encode("DIRECTION: INCREASE").size(), 3u);
}

TEST(DualEmbed, EmptyCotIsNumericOnly) {
  std::mt19937_64 rng(1);
  ActModel<double> m(tiny_config(10, 16), rng);
  nn::Graph<double> g;
  auto [x, valid] = m.dual_embed(g, {}, random_window(10, rng));
  EXPECT_EQ(x.rows(), 32);
  EXPECT_EQ(valid.size(), 32u);
}

TEST(DualEmbed, CotPrecedesNumeric) {
  std::mt19937_64 rng(2);
  ActModel<double> m(tiny_config(0, 16), rng);
  auto seq = random_window(0, rng);
  nn::Graph<double> g;
  auto [x, valid] = m.dual_embed(g, {Tokenizer::kFirstWord + 1}, seq);
  ASSERT_EQ(x.rows(), 3);  // 1 CoT token + R_0 + s_0
  auto cot = m.embed_cot(g, {Tokenizer::kFirstWord + 1});
  auto num = m.embed_numeric(g, seq);
  for (int c = 0; c < 16; ++c) {
    EXPECT_EQ(x.data()[c], cot.data()[c]);
    EXPECT_EQ(x.data()[16 + c], num.data()[c]);
  }
}

TEST(DualEmbed, RejectsUnnormalizedAndOverlength) {
  std::mt19937_64 rng(3);
  ActModel<double> m(tiny_config(2, 16), rng);
  auto seq = random_window(2, rng);
  nn::Graph<double> g;
  seq.normalized = false;
  EXPECT_THROW(m.dual_embed(g, {}, seq), InvalidArgument);
  seq.normalized = true;
  EXPECT_THROW(m.dual_embed(g, std::vector<int>(41, 5), seq), InvalidArgument);
}

TEST(ActModel, DeterministicAndClamped) {
  std::mt19937_64 rng(4);
  auto cfg = tiny_config(2, 16);
  cfg.action_max = 0.001;  // force clamping to bite
  ActModel<float> m(cfg, rng);
  for (auto* p : m.params())
    for (auto& v : p->value) v *= 50.0f;
  for (int i = 0; i < 50; ++i) {
    auto seq = random_window(2, rng);
    std::vector<int> cot{Tokenizer::kFirstWord, Tokenizer::kFirstChar + 3};
    const double a = m.predict(cot, seq), b = m.predict(cot, seq);
    EXPECT_EQ(a, b);
    EXPECT_GE(a, cfg.action_min);
    EXPECT_LE(a, cfg.action_max);
  }
}

TEST(ActModel, PaddingSlotsDoNotAffectOutput) {
  std::mt19937_64 rng(5);
  ActModel<double> m(tiny_config(4, 16), rng);
  auto seq = random_window(4, rng, 2);  // steps 0..2 are padding
  const double base = m.predict({Tokenizer::kFirstWord}, seq);
  for (int k = 0; k < seq.first_valid_step(); ++k) {
    seq.rtg[k] = 100.0f;
    seq.states[k].fill(-7.0f);
    seq.actions[k] = 3.0f;
  }
  EXPECT_EQ(m.predict({Tokenizer::kFirstWord}, seq), base);
}

TEST(ActModel, EmptyCotEqualsPlainDecisionTransformer) {
  std::mt19937_64 rng(6);
  ActModel<float> m(tiny_config(3, 16), rng);
  auto seq = random_window(3, rng);
  // Independent assembly of the numeric-only computation from the model's parts.
  nn::Graph<float> g;
  const int L = 3;
  std::vector<nn::Tensor<float>> rows;
  for (int k = 0; k <= L; ++k) {
    rows.push_back(nn::relu(m.proj_rtg(g, g.constant({1, 1}, std::vector<float>{seq.rtg[k]}))));
    rows.push_back(nn::relu(m.proj_state(g, g.constant({1, 16}, std::vector<float>(seq.states[k].begin(), seq.states[k].end())))));
    if (k < L) rows.push_back(nn::relu(m.proj_action(g, g.constant({1, 1}, std::vector<float>{seq.actions[k]}))));
  }
  auto x = m.decision_mlp(g, nn::concat_rows(rows));
  x = nn::add_row(nn::add(x, g.param(m.num_pos)), nn::slice_rows(g.param(m.seg_emb), 1, 1));
  std::mt19937_64 unused(0);
  auto h = m.transformer(g, x, seq.item_valid(), false, unused);
  auto out = m.head(g, nn::slice_rows(h, h.rows() - 1, 1));
  const float plain = std::clamp<float>(out.item(), 0.0f, 10.0f);
  EXPECT_EQ(static_cast<float>(m.predict({}, seq)), plain);
}

TEST(ActModel, GradCheckDecisionEmbedAndHead) {
  std::mt19937_64 rng(7);
  auto cfg = tiny_config(1, 8);
  cfg.embed_widths = {8, 8, 8};
  cfg.head_widths = {8, 8, 1};
  ActModel<double> m(cfg, rng);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto* p : m.params())
    for (auto& v : p->value) v += nd(rng);
  auto seq = random_window(1, rng);
  std::vector<int> cot{Tokenizer::kFirstWord + 2, Tokenizer::kFirstChar + 10};
  // Decision-embed MLP and projections only.
  nn::ParamList<double> embed_ps;
  m.proj_rtg.collect(embed_ps);
  m.proj_state.collect(embed_ps);
  m.proj_action.collect(embed_ps);
  m.decision_mlp.collect(embed_ps);
  auto r1 = nn::grad_check<double>([&](nn::Graph<double>& g) { return nn::mse_loss(m.embed_numeric(g, seq)); }, embed_ps);
  EXPECT_LT(r1.max_rel_error, 1e-4) << r1.worst_param;
  // Action head on a fixed input.
  nn::ParamList<double> head_ps;
  m.head.collect(head_ps);
  nn::Param<double> hin("hin", {1, 8});
  for (auto& v : hin.value) v = nd(rng) * 3;
  head_ps.push_back(&hin);
  auto r2 = nn::grad_check<double>([&](nn::Graph<double>& g) {
    return nn::mse_loss(nn::sub(m.head(g, g.param(hin)), g.scalar(1.5)));
  }, head_ps);
  EXPECT_LT(r2.max_rel_error, 1e-4) << r2.worst_param;
  // Whole model end to end.
  auto r3 = nn::grad_check<double>([&](nn::Graph<double>& g) {
    std::mt19937_64 u(0);
    return nn::l1_loss(nn::sub(m.forward(g, cot, seq, u), g.scalar(2.0)));
  }, m.params());
  EXPECT_LT(r3.max_rel_error, 1e-4) << r3.worst_param;
}

TEST(AnchorFilter, Examples) {
  EXPECT_TRUE(anchor_accepts(Direction::Increase, 1.2, 1.0));
  EXPECT_FALSE(anchor_accepts(Direction::Decrease, 1.2, 1.0));
  EXPECT_FALSE(anchor_accepts(Direction::Increase, 0.8, 1.0));
  EXPECT_TRUE(anchor_accepts(Direction::Decrease, 0.8, 1.0));
  for (auto d : {Direction::Increase, Direction::Decrease, Direction::None}) EXPECT_TRUE(anchor_accepts(d, 1.0, 1.0));
  EXPECT_TRUE(anchor_accepts(Direction::None, 5.0, 1.0));
}

TEST(AnchorFilter, Soundness) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> dd(0, 2), coarse(0, 4);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int i = 0; i < 10000; ++i) {
    const auto d = static_cast<Direction>(dd(rng));
    const double a_prev = coarse(rng) == 0 ? 2.0 : u(rng);
    const double a_t = coarse(rng) == 0 ? a_prev : u(rng);
    if (!anchor_accepts(d, a_t, a_prev) || d == Direction::None) continue;
    const double delta = a_t - a_prev;
    if (d == Direction::Increase) { EXPECT_GE(delta, 0.0); }
    if (d == Direction::Decrease) { EXPECT_LE(delta, 0.0); }
  }
}

TEST(Rtg, ZeroWeightIsPlain) {
  std::mt19937_64 rng(9);
  auto t = synthetic_traj(1, 12, rng);
  EXPECT_EQ(rtg_reweight(t, 0.0), t.returns_to_go);
}

TEST(Rtg, AtConstraintAddsW) {
  std::mt19937_64 rng(10);
  auto t = synthetic_traj(1, 12, rng);  // costs = C * rewards in every step
  const auto r = rtg_reweight(t, 1.0);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r[i], t.returns_to_go[i] + 1.0f, 1e-4);
}

TEST(Rtg, WeightGridAndOverspend) {
  std::mt19937_64 rng(11);
  auto t = synthetic_traj(1, 6, rng);
  for (auto& c : t.costs) c *= 2.0f;  // ratio 2 on every suffix -> penalty 0.25
  for (double w : {0.0, 0.1, 0.2, 0.5, 1.0}) {
    const auto r = rtg_reweight(t, w, 10.0);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r[i], t.returns_to_go[i] / 10.0 + w * 0.25, 1e-5);
  }
  EXPECT_THROW(rtg_reweight(t, 1.0, 1.0, 48), InvalidArgument);
  t.costs.pop_back();
  EXPECT_THROW(rtg_reweight(t, 1.0), InvalidArgument);
}

TEST(Rtg, InferenceInit) {
  std::mt19937_64 rng(12);
  auto a = synthetic_traj(1, 4, rng), b = synthetic_traj(2, 4, rng);
  b.rewards = {100, 100, 100, 100};
  const auto s = RtgSchedule::from_dataset({a, b}, 2000.0, 0.0);
  EXPECT_DOUBLE_EQ(s.initial(), 400.0 / 2000.0);
  EXPECT_DOUBLE_EQ(s.next(s.initial(), 10.0), 400.0 / 2000.0 - 10.0 / 2000.0);
  EXPECT_DOUBLE_EQ(RtgSchedule::from_dataset({b}, 2000.0, 0.5).initial(), 0.2 + 0.5);
  EXPECT_THROW(RtgSchedule::from_dataset({}, 2000.0, 0.0), InvalidArgument);
}

TEST(Train, LossValues) {
  std::mt19937_64 rng(13);
  ActModel<float> m(tiny_config(2, 16), rng);
  ActTrainConfig tc;
  tc.lr = 1e-12;
  tc.weight_decay = 0.0;
  ActTrainer<float> tr(m, tc);
  ActSample s;
  s.seq = random_window(2, rng);
  nn::Graph<float> g;
  std::mt19937_64 u(0);
  s.label = m.forward(g, s.cot, s.seq, u).item();
  EXPECT_EQ(tr.train_step({&s}), 0.0);
  const float pred = s.label;
  s.label = pred + 2.0f;
  EXPECT_NEAR(tr.train_step({&s}), 2.0, 1e-5);
  EXPECT_THROW(tr.train_step({}), InvalidArgument);
}

TEST(Train, ConstantActionOverfit) {
  std::mt19937_64 rng(14);
  std::vector<market::Trajectory> data;
  for (int i = 0; i < 8; ++i) data.push_back(synthetic_traj(i, 12, rng, 3.0f));
  auto cfg = tiny_config(2, 16);
  ActModel<float> m(cfg, rng);
  const auto norm = Normalizer::fit(data, 10.0);
  Tokenizer tok(cfg.vocab_size);
  const auto samples = build_act_samples(data, nullptr, tok, norm, cfg, 0.0);
  ActTrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 8;
  ActTrainer<float> tr(m, tc);
  tr.train(samples, 400);
  for (int i = 0; i < 20; ++i) EXPECT_NEAR(m.predict({}, samples[i * 3].seq), 3.0, 0.1);
}

TEST(Train, SamplesRespectAnchorFilter) {
  market::DatasetSpec spec;
  spec.num_periods = 3;
  spec.episode.impressions_per_step = 100;
  const auto ds = market::generate_dataset(spec);
  think::OracleBackend oracle(0.5, 3);
  think::CotFile cots;
  std::vector<std::string> corpus;
  for (const auto& t : ds.trajectories)
    for (int s = 1; s < static_cast<int>(t.length()); ++s) {
      auto ctx = think::context_from_states(t.states, t.actions, s, t.meta.cpa_constraint, t.meta.budget, 48);
      auto r = oracle.generate(ctx, "", 1).front();
      cots.add({t.meta.id, s, r.text, r.direction, r.claimed_cpa_ratio});
      corpus.push_back(r.text);
    }
  auto cfg = tiny_config(10, 16);
  cfg.transformer.max_seq_len = 192;
  cfg.max_cot_len = 128;
  cfg.vocab_size = 400;
  Tokenizer tok(cfg.vocab_size);
  tok.fit(corpus);
  SampleStats st;
  const auto samples = build_act_samples(ds.trajectories, &cots, tok, Normalizer::fit(ds.trajectories, 2000.0),
                                         cfg, 0.0, &st);
  EXPECT_EQ(st.total, samples.size());
  EXPECT_GT(st.rejected, 0u);
  EXPECT_GT(st.with_cot, 0u);
  EXPECT_EQ(st.missing, 0u);
  for (const auto& s : samples) {
    if (s.t == 0) { EXPECT_TRUE(s.cot.empty()); }
    if (s.direction == Direction::Increase) { EXPECT_GE(s.label - s.prev_action, 0.0f); }
    if (s.direction == Direction::Decrease) { EXPECT_LE(s.label - s.prev_action, 0.0f); }
    EXPECT_LE(s.cot.size(), 128u);
  }
}

TEST(Bundle, SaveLoadSamePredictions) {
  std::mt19937_64 rng(15);
  std::vector<market::Trajectory> data{synthetic_traj(0, 6, rng)};
  ActBundle b;
  b.model = ActModel<float>(tiny_config(2, 16), rng);
  b.tokenizer = Tokenizer(b.model.cfg.vocab_size);
  b.tokenizer.fit({"DIRECTION: INCREASE"});
  b.normalizer = Normalizer::fit(data, 2000.0);
  b.rtg = RtgSchedule::from_dataset(data, 2000.0, 0.2);
  const auto path = (std::filesystem::temp_directory_path() / "lbm_test_act_bundle.ckpt").string();
  save_act_bundle(path, b);
  auto c = load_act_bundle(path);
  auto seq = random_window(2, rng);
  const auto cot = b.tokenizer.encode("DIRECTION: INCREASE");
  EXPECT_EQ(c.tokenizer.encode("DIRECTION: INCREASE"), cot);
  EXPECT_EQ(b.model.predict(cot, seq), c.model.predict(cot, seq));
  EXPECT_EQ(c.rtg.initial(), b.rtg.initial());
  EXPECT_EQ(c.normalizer.state_mean, b.normalizer.state_mean);
  std::remove(path.c_str());
}

TEST(Train, CotInfluenceAfterTraining) {
  // Labels depend only on the CoT direction; a fused model must separate them.
  std::mt19937_64 rng(16);
  auto cfg = tiny_config(1, 16);
  ActModel<float> m(cfg, rng);
  Tokenizer tok(cfg.vocab_size);
  tok.fit({"DIRECTION: INCREASE", "DIRECTION: DECREASE"});
  const auto inc = tok.encode("DIRECTION: INCREASE"), dec = tok.encode("DIRECTION: DECREASE");
  std::vector<ActSample> samples;
  for (int i = 0; i < 64; ++i) {
    ActSample s;
    s.seq = random_window(1, rng);
    s.cot = i % 2 ? inc : dec;
    s.label = i % 2 ? 4.0f : 1.0f;
    samples.push_back(s);
  }
  ActTrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 8;
  ActTrainer<float> tr(m, tc);
  tr.train(samples, 300);
  int differ = 0;
  for (int i = 0; i < 20; ++i) {
    auto seq = random_window(1, rng);
    if (m.predict(inc, seq) - m.predict(dec, seq) > 1.0) ++differ;
  }
  EXPECT_GE(differ, 18);
}
