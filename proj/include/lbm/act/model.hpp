#pragma once

// Dual-embedding decision model. CoT token ids and numeric decision items are
// embedded by separate paths, concatenated CoT-first, fused by a causal
// transformer, and the action is read from the final (s_t) position.

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbm/act/sequence.hpp"
#include "lbm/nn/layers.hpp"

namespace lbm::act {

struct ActModelConfig {
  nn::TransformerConfig transformer;
  int seq_len = 10;  // L
  int vocab_size = 2048;
  int max_cot_len = 128;
  std::vector<int> embed_widths{64, 64, 64};
  std::vector<int> head_widths{64, 64, 1};
  double action_min = 0.0;
  double action_max = 10.0;

  int numeric_items() const { return 3 * (seq_len + 1) - 1; }

  void validate() const {
    transformer.validate();
    if (seq_len < 0) throw InvalidArgument("seq_len must be non-negative");
    if (max_cot_len < 0) throw InvalidArgument("max_cot_len must be non-negative");
    if (embed_widths.empty() || embed_widths.back() != transformer.d_model)
      throw InvalidArgument("decision-embed output width must equal d_model");
    if (head_widths.empty() || head_widths.back() != 1) throw InvalidArgument("action head must end in width 1");
    if (max_cot_len + numeric_items() > transformer.max_seq_len)
      throw InvalidArgument("max_cot_len + numeric window exceeds transformer max_seq_len");
    if (!(action_max > action_min)) throw InvalidArgument("empty action range");
  }
};

inline nlohmann::json to_json(const ActModelConfig& c) {
  const auto& t = c.transformer;
  return {{"d_model", t.d_model},         {"n_heads", t.n_heads},         {"n_layers", t.n_layers},
          {"max_seq_len", t.max_seq_len}, {"dropout", t.dropout_rate},    {"ffn_mult", t.ffn_mult},
          {"seq_len", c.seq_len},         {"vocab_size", c.vocab_size},   {"max_cot_len", c.max_cot_len},
          {"embed_widths", c.embed_widths}, {"head_widths", c.head_widths}, {"action_min", c.action_min},
          {"action_max", c.action_max}};
}

inline ActModelConfig act_config_from_json(const nlohmann::json& j) {
  ActModelConfig c;
  c.transformer.d_model = j.at("d_model");
  c.transformer.n_heads = j.at("n_heads");
  c.transformer.n_layers = j.at("n_layers");
  c.transformer.max_seq_len = j.at("max_seq_len");
  c.transformer.dropout_rate = j.at("dropout");
  c.transformer.ffn_mult = j.at("ffn_mult");
  c.seq_len = j.at("seq_len");
  c.vocab_size = j.at("vocab_size");
  c.max_cot_len = j.at("max_cot_len");
  c.embed_widths = j.at("embed_widths").get<std::vector<int>>();
  c.head_widths = j.at("head_widths").get<std::vector<int>>();
  c.action_min = j.at("action_min");
  c.action_max = j.at("action_max");
  return c;
}

template <class T>
struct ActModel {
  ActModelConfig cfg;
  nn::Param<T> tok_emb;   // [vocab, d]
  nn::Param<T> cot_pos;   // [max_cot_len, d]
  nn::Param<T> num_pos;   // [numeric_items, d]
  nn::Param<T> seg_emb;   // [2, d]: 0 = CoT, 1 = numeric
  nn::Linear<T> proj_rtg, proj_state, proj_action;
  nn::Mlp<T> decision_mlp;
  nn::Transformer<T> transformer;
  nn::Mlp<T> head;

  ActModel() = default;

  template <class Rng>
  ActModel(const ActModelConfig& c, Rng& rng) : cfg(c) {
    cfg.validate();
    const int d = cfg.transformer.d_model;
    tok_emb = nn::Param<T>("act.tok_emb", {cfg.vocab_size, d});
    cot_pos = nn::Param<T>("act.cot_pos", {std::max(cfg.max_cot_len, 1), d});
    num_pos = nn::Param<T>("act.num_pos", {cfg.numeric_items(), d});
    seg_emb = nn::Param<T>("act.seg_emb", {2, d});
    for (auto* p : {&tok_emb, &cot_pos, &num_pos, &seg_emb}) nn::init_trunc_normal(*p, nn::kInitStd, rng);
    proj_rtg = nn::Linear<T>("act.proj_rtg", 1, d, rng);
    proj_state = nn::Linear<T>("act.proj_state", static_cast<int>(market::kStateDim), d, rng);
    proj_action = nn::Linear<T>("act.proj_action", 1, d, rng);
    decision_mlp = nn::Mlp<T>("act.decision", d, cfg.embed_widths, rng);
    transformer = nn::Transformer<T>("act.tf", cfg.transformer, rng);
    head = nn::Mlp<T>("act.head", d, cfg.head_widths, rng);
  }

  nn::ParamList<T> params() {
    nn::ParamList<T> ps{&tok_emb, &cot_pos, &num_pos, &seg_emb};
    proj_rtg.collect(ps);
    proj_state.collect(ps);
    proj_action.collect(ps);
    decision_mlp.collect(ps);
    transformer.collect(ps);
    head.collect(ps);
    return ps;
  }

  // Decision embedding of the numeric window: per-item-type projection, ReLU,
  // shared MLP, then slot position and the numeric segment vector.
  nn::Tensor<T> embed_numeric(nn::Graph<T>& g, const DecisionSequence& seq) {
    if (!seq.normalized) throw InvalidArgument("decision sequence is not normalized");
    seq.validate();
    if (seq.L != cfg.seq_len) throw InvalidArgument("decision window length differs from model seq_len");
    const int L = seq.L, n = seq.item_count();
    std::vector<T> r(seq.rtg.begin(), seq.rtg.end()), a(seq.actions.begin(), seq.actions.end());
    std::vector<T> s;
    s.reserve((L + 1) * market::kStateDim);
    for (const auto& row : seq.states) s.insert(s.end(), row.begin(), row.end());
    std::vector<nn::Tensor<T>> typed{proj_rtg(g, g.constant({L + 1, 1}, std::move(r))),
                                     proj_state(g, g.constant({L + 1, static_cast<int>(market::kStateDim)}, std::move(s)))};
    if (L > 0) typed.push_back(proj_action(g, g.constant({L, 1}, std::move(a))));
    auto stacked = nn::relu(nn::concat_rows(typed));
    // Rows of `stacked`: R_0..R_L, s_0..s_L, a_0..a_{L-1}; gather into R,s,a order.
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k <= L; ++k) {
      order.push_back(k);
      order.push_back(L + 1 + k);
      if (k < L) order.push_back(2 * (L + 1) + k);
    }
    auto items = decision_mlp(g, nn::embedding(stacked, order));
    items = nn::add(items, g.param(num_pos));
    return nn::add_row(items, nn::slice_rows(g.param(seg_emb), 1, 1));
  }

  nn::Tensor<T> embed_cot(nn::Graph<T>& g, const std::vector<int>& ids) {
    if (static_cast<int>(ids.size()) > cfg.max_cot_len)
      throw InvalidArgument("CoT of " + std::to_string(ids.size()) + " tokens exceeds max_cot_len " +
                            std::to_string(cfg.max_cot_len));
    std::vector<int> pos(ids.size());
    std::iota(pos.begin(), pos.end(), 0);
    auto e = nn::add(nn::embedding(g.param(tok_emb), ids), nn::embedding(g.param(cot_pos), pos));
    return nn::add_row(e, nn::slice_rows(g.param(seg_emb), 0, 1));
  }

  // Full dual-embedded input and its key-validity mask.
  std::pair<nn::Tensor<T>, std::vector<unsigned char>> dual_embed(nn::Graph<T>& g, const std::vector<int>& cot,
                                                                  const DecisionSequence& seq) {
    auto num = embed_numeric(g, seq);
    auto valid = seq.item_valid();
    if (cot.empty()) return {num, valid};
    std::vector<unsigned char> kv(cot.size(), 1);
    kv.insert(kv.end(), valid.begin(), valid.end());
    return {nn::concat_rows<T>({embed_cot(g, cot), num}), kv};
  }

  // Unclamped action-head output, [1, 1].
  template <class Rng>
  nn::Tensor<T> forward(nn::Graph<T>& g, const std::vector<int>& cot, const DecisionSequence& seq, Rng& rng) {
    auto [x, valid] = dual_embed(g, cot, seq);
    auto h = transformer(g, x, valid, /*last_only=*/true, rng);
    return head(g, h);
  }

  // Inference: clamped to the action range.
  double predict(const std::vector<int>& cot, const DecisionSequence& seq) {
    nn::Graph<T> g;
    std::mt19937_64 unused(0);
    const double a = static_cast<double>(forward(g, cot, seq, unused).item());
    return std::clamp(a, cfg.action_min, cfg.action_max);
  }
};

}  // namespace lbm::act
