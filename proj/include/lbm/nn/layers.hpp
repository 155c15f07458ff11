#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lbm/nn/tensor.hpp"

namespace lbm::nn {

template <class T>
using ParamList = std::vector<Param<T>*>;

// Truncated normal (resampled beyond two standard deviations).
template <class T, class Rng>
void init_trunc_normal(Param<T>& p, double stddev, Rng& rng) {
  std::normal_distribution<double> nd(0.0, stddev);
  for (auto& v : p.value) {
    double x = nd(rng);
    while (std::abs(x) > 2.0 * stddev) x = nd(rng);
    v = static_cast<T>(x);
  }
}

template <class T>
void init_constant(Param<T>& p, T c) {
  std::fill(p.value.begin(), p.value.end(), c);
}

inline constexpr double kInitStd = 0.02;

template <class T>
struct Linear {
  Param<T> weight;  // [in, out]
  Param<T> bias;    // [1, out]

  Linear() = default;
  template <class Rng>
  Linear(const std::string& name, int in, int out, Rng& rng)
      : weight(name + ".weight", {in, out}), bias(name + ".bias", {1, out}) {
    init_trunc_normal(weight, kInitStd, rng);
  }

  int in_features() const { return weight.shape.rows; }
  int out_features() const { return weight.shape.cols; }

  Tensor<T> operator()(Graph<T>& g, Tensor<T> x) { return add_row(matmul(x, g.param(weight)), g.param(bias)); }

  void collect(ParamList<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

// Stack of Linear layers with ReLU between them (none after the last).
template <class T>
struct Mlp {
  std::vector<Linear<T>> layers;

  Mlp() = default;
  // widths = output width of each layer.
  template <class Rng>
  Mlp(const std::string& name, int in, const std::vector<int>& widths, Rng& rng) {
    int prev = in;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      layers.emplace_back(name + "." + std::to_string(i), prev, widths[i], rng);
      prev = widths[i];
    }
  }

  int out_features() const { return layers.back().out_features(); }

  Tensor<T> operator()(Graph<T>& g, Tensor<T> x) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i](g, x);
      if (i + 1 < layers.size()) x = relu(x);
    }
    return x;
  }

  void collect(ParamList<T>& out) {
    for (auto& l : layers) l.collect(out);
  }
};

template <class T>
struct LayerNorm {
  Param<T> gain;
  Param<T> bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim) : gain(name + ".gain", {1, dim}), bias(name + ".bias", {1, dim}) {
    init_constant(gain, T(1));
  }

  Tensor<T> operator()(Graph<T>& g, Tensor<T> x) { return layer_norm(x, g.param(gain), g.param(bias)); }

  void collect(ParamList<T>& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

struct TransformerConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int max_seq_len = 192;
  double dropout_rate = 0.0;
  bool causal = true;
  int ffn_mult = 4;

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || max_seq_len <= 0)
      throw InvalidArgument("transformer dimensions must be positive");
    if (d_model % n_heads != 0) throw InvalidArgument("d_model must be divisible by n_heads");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw InvalidArgument("dropout must lie in [0, 1)");
  }
};

template <class T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  int n_heads = 1;

  MultiHeadAttention() = default;
  template <class Rng>
  MultiHeadAttention(const std::string& name, int d_model, int heads, Rng& rng)
      : q(name + ".q", d_model, d_model, rng),
        k(name + ".k", d_model, d_model, rng),
        v(name + ".v", d_model, d_model, rng),
        o(name + ".o", d_model, d_model, rng),
        n_heads(heads) {}

  // queries[nq, d] attend over keys_values[nk, d].
  Tensor<T> operator()(Graph<T>& g, Tensor<T> queries, Tensor<T> keys_values, const AttentionMask& mask) {
    Tensor<T> Q = q(g, queries), K = k(g, keys_values), V = v(g, keys_values);
    const int dh = Q.cols() / n_heads;
    std::vector<Tensor<T>> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h)
      heads.push_back(attention(slice_cols(Q, h * dh, dh), slice_cols(K, h * dh, dh), slice_cols(V, h * dh, dh), mask));
    Tensor<T> cat = n_heads == 1 ? heads.front() : concat_cols(heads);
    return o(g, cat);
  }

  void collect(ParamList<T>& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
  }
};

// Pre-norm residual block: x + attn(ln(x)), then x + ffn(ln(x)).
template <class T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  Mlp<T> ffn;
  double dropout_rate = 0.0;

  TransformerBlock() = default;
  template <class Rng>
  TransformerBlock(const std::string& name, const TransformerConfig& cfg, Rng& rng)
      : ln1(name + ".ln1", cfg.d_model),
        ln2(name + ".ln2", cfg.d_model),
        attn(name + ".attn", cfg.d_model, cfg.n_heads, rng),
        ffn(name + ".ffn", cfg.d_model, {cfg.d_model * cfg.ffn_mult, cfg.d_model}, rng),
        dropout_rate(cfg.dropout_rate) {}

  // With last_only, only the final position is computed (its value is the same
  // as the last row of the full causal computation).
  template <class Rng>
  Tensor<T> operator()(Graph<T>& g, Tensor<T> x, AttentionMask mask, bool last_only, Rng& rng) {
    Tensor<T> h = ln1(g, x);
    Tensor<T> resid = x;
    Tensor<T> q = h;
    if (last_only) {
      const int n = x.rows();
      resid = slice_rows(x, n - 1, 1);
      q = slice_rows(h, n - 1, 1);
      mask.query_offset = n - 1;
    }
    Tensor<T> a = dropout(attn(g, q, h, mask), dropout_rate, rng);
    Tensor<T> y = add(resid, a);
    Tensor<T> f = dropout(ffn(g, ln2(g, y)), dropout_rate, rng);
    return add(y, f);
  }

  void collect(ParamList<T>& out) {
    ln1.collect(out);
    attn.collect(out);
    ln2.collect(out);
    ffn.collect(out);
  }
};

template <class T>
struct Transformer {
  TransformerConfig cfg;
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> ln_f;

  Transformer() = default;
  template <class Rng>
  Transformer(const std::string& name, const TransformerConfig& c, Rng& rng) : cfg(c), ln_f(name + ".ln_f", c.d_model) {
    cfg.validate();
    for (int i = 0; i < cfg.n_layers; ++i) blocks.emplace_back(name + ".block" + std::to_string(i), cfg, rng);
  }

  // x[n, d] -> [n, d], or [1, d] for the final position when last_only.
  template <class Rng>
  Tensor<T> operator()(Graph<T>& g, Tensor<T> x, const std::vector<unsigned char>& key_valid, bool last_only, Rng& rng) {
    if (x.rows() > cfg.max_seq_len)
      throw InvalidArgument("sequence of " + std::to_string(x.rows()) + " exceeds max_seq_len " +
                            std::to_string(cfg.max_seq_len));
    AttentionMask mask;
    mask.causal = cfg.causal;
    mask.key_valid = key_valid;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const bool last = last_only && i + 1 == blocks.size();
      x = blocks[i](g, x, mask, last, rng);
    }
    if (last_only && blocks.empty()) x = slice_rows(x, x.rows() - 1, 1);
    return ln_f(g, x);
  }

  void collect(ParamList<T>& out) {
    for (auto& b : blocks) b.collect(out);
    ln_f.collect(out);
  }
};

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

// Copies values between two parameter lists of identical layout.
template <class T>
void copy_values(const ParamList<T>& from, const ParamList<T>& to) {
  if (from.size() != to.size()) throw InvalidArgument("parameter lists differ in length");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i]->shape != to[i]->shape) throw InvalidArgument("parameter shape mismatch at " + from[i]->name);
    to[i]->value = from[i]->value;
  }
}

template <class T>
std::size_t count_params(const ParamList<T>& params) {
  std::size_t n = 0;
  for (auto* p : params) n += p->value.size();
  return n;
}

}  // namespace lbm::nn
