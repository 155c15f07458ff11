#pragma once

// Reverse-mode automatic differentiation over a recorded op tape.
//
// Every tensor is a row-major matrix (vectors are 1 x n, scalars 1 x 1). A
// Graph owns the nodes of one forward pass; ops append nodes in topological
// order, so backward() is a single reverse sweep. Parameters live outside the
// graph in Param<T> objects owned by the model; the graph only borrows their
// values and keeps per-node gradient buffers, which are folded into
// Param::grad by accumulate_param_grads(). That keeps models copyable and lets
// several graphs read the same parameters concurrently.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lbm/core/error.hpp"

namespace lbm::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct Shape {
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  bool operator==(const Shape&) const = default;
};

inline std::string to_string(Shape s) { return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]"; }

template <class T>
struct Param {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, Shape s) : name(std::move(n)), shape(s), value(s.size(), T(0)), grad(s.size(), T(0)) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <class T>
class Graph;

template <class T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph<T>* g, int id) : g_(g), id_(id) {}

  Graph<T>& graph() const { return *g_; }
  int id() const { return id_; }
  bool valid() const { return g_ != nullptr; }
  Shape shape() const;
  int rows() const { return shape().rows; }
  int cols() const { return shape().cols; }
  std::span<const T> data() const;
  std::span<const T> grad() const;
  T item() const;

 private:
  Graph<T>* g_ = nullptr;
  int id_ = -1;
};

template <class T>
class Graph {
 public:
  struct Node {
    Shape shape;
    std::vector<T> own;
    const T* ext = nullptr;  // borrowed parameter storage
    std::vector<T> grad;
    bool requires_grad = false;
    Param<T>* param = nullptr;
    std::function<void()> backward;

    const T* data() const { return ext ? ext : own.data(); }
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training = false;
  // When set, kink-sensitive ops (relu, abs, expectile) append the sign of each
  // input element here. Gradient checking compares these patterns.
  std::vector<signed char>* kink_log = nullptr;

  std::size_t size() const { return nodes_.size(); }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  const T* data(int id) const { return node(id).data(); }

  T* grad(int id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad.assign(n.shape.size(), T(0));
    return n.grad.data();
  }

  bool needs_grad(int id) const { return node(id).requires_grad; }

  Tensor<T> constant(Shape s, std::vector<T> values) {
    if (values.size() != s.size()) throw InvalidArgument("constant: data length does not match shape " + to_string(s));
    return push(s, std::move(values), false);
  }

  Tensor<T> constant(Shape s, std::span<const T> values) {
    return constant(s, std::vector<T>(values.begin(), values.end()));
  }

  Tensor<T> zeros(Shape s) { return push(s, std::vector<T>(s.size(), T(0)), false); }

  Tensor<T> scalar(T v) { return push({1, 1}, std::vector<T>{v}, false); }

  // Leaf bound to a parameter. Reusing the same Param in one graph yields the
  // same node.
  Tensor<T> param(Param<T>& p) {
    for (std::size_t i = 0; i < bound_.size(); ++i)
      if (bound_[i].first == &p) return Tensor<T>(this, bound_[i].second);
    Node n;
    n.shape = p.shape;
    n.ext = p.value.data();
    n.requires_grad = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    bound_.emplace_back(&p, id);
    return Tensor<T>(this, id);
  }

  // Appends an op result. `backward` is stored only if some input needs a grad.
  Tensor<T> push(Shape s, std::vector<T> values, bool requires_grad, std::function<void()> backward = {},
                 const char* op = "op") {
    for (const T& v : values)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError(std::string("non-finite value produced by ") + op);
    Node n;
    n.shape = s;
    n.own = std::move(values);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Tensor<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  void backward(Tensor<T> loss, T seed = T(1)) {
    if (loss.shape().size() != 1) throw InvalidArgument("backward() requires a scalar loss");
    if (!needs_grad(loss.id())) return;
    grad(loss.id())[0] += seed;
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = node(i);
      if (n.backward && !n.grad.empty()) n.backward();
    }
  }

  // Adds every bound parameter's gradient into Param::grad.
  void accumulate_param_grads() {
    for (auto& [p, id] : bound_) {
      const Node& n = node(id);
      if (n.grad.empty()) continue;
      for (std::size_t k = 0; k < n.grad.size(); ++k) p->grad[k] += n.grad[k];
    }
  }

  void log_kinks(const T* x, std::size_t n) {
    if (!kink_log) return;
    for (std::size_t i = 0; i < n; ++i) kink_log->push_back(x[i] > T(0) ? 1 : (x[i] < T(0) ? -1 : 0));
  }

 private:
  std::deque<Node> nodes_;
  std::vector<std::pair<Param<T>*, int>> bound_;
};

template <class T>
Shape Tensor<T>::shape() const { return g_->node(id_).shape; }
template <class T>
std::span<const T> Tensor<T>::data() const { return {g_->data(id_), g_->node(id_).shape.size()}; }
template <class T>
std::span<const T> Tensor<T>::grad() const {
  const auto& n = g_->node(id_);
  return {n.grad.data(), n.grad.size()};
}
template <class T>
T Tensor<T>::item() const {
  if (shape().size() != 1) throw InvalidArgument("item() on a non-scalar tensor " + to_string(shape()));
  return data()[0];
}

namespace detail {

template <class T>
void same_graph(const Tensor<T>& a, const Tensor<T>& b) {
  if (&a.graph() != &b.graph()) throw InvalidArgument("tensors belong to different graphs");
}

template <class T>
ConstMatMap<T> cmap(Graph<T>& g, int id) {
  const Shape s = g.node(id).shape;
  return ConstMatMap<T>(g.data(id), s.rows, s.cols);
}

template <class T>
MatMap<T> gmap(Graph<T>& g, int id) {
  const Shape s = g.node(id).shape;
  return MatMap<T>(g.grad(id), s.rows, s.cols);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <class T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
  detail::same_graph(a, b);
  Graph<T>& g = a.graph();
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows) throw InvalidArgument("matmul shape mismatch " + to_string(sa) + " x " + to_string(sb));
  const Shape so{sa.rows, sb.cols};
  std::vector<T> out(so.size());
  MatMap<T>(out.data(), so.rows, so.cols).noalias() = detail::cmap(g, a.id()) * detail::cmap(g, b.id());
  const int ia = a.id(), ib = b.id();
  const bool rg = g.needs_grad(ia) || g.needs_grad(ib);
  Tensor<T> o = g.push(so, std::move(out), rg, {}, "matmul");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, ia, ib, io] {
      auto gout = ConstMatMap<T>(g.node(io).grad.data(), g.node(io).shape.rows, g.node(io).shape.cols);
      if (g.needs_grad(ia)) detail::gmap(g, ia).noalias() += gout * detail::cmap(g, ib).transpose();
      if (g.needs_grad(ib)) detail::gmap(g, ib).noalias() += detail::cmap(g, ia).transpose() * gout;
    };
  }
  return o;
}

template <class T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  detail::same_graph(a, b);
  Graph<T>& g = a.graph();
  if (a.shape() != b.shape()) throw InvalidArgument("add shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const auto da = a.data(), db = b.data();
  std::vector<T> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  const int ia = a.id(), ib = b.id();
  const bool rg = g.needs_grad(ia) || g.needs_grad(ib);
  Tensor<T> o = g.push(a.shape(), std::move(out), rg, {}, "add");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, ia, ib, io] {
      const auto& go = g.node(io).grad;
      for (int id : {ia, ib}) {
        if (!g.needs_grad(id)) continue;
        T* gi = g.grad(id);
        for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
      }
    };
  }
  return o;
}

template <class T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  detail::same_graph(a, b);
  Graph<T>& g = a.graph();
  if (a.shape() != b.shape()) throw InvalidArgument("sub shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const auto da = a.data(), db = b.data();
  std::vector<T> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  const int ia = a.id(), ib = b.id();
  const bool rg = g.needs_grad(ia) || g.needs_grad(ib);
  Tensor<T> o = g.push(a.shape(), std::move(out), rg, {}, "sub");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, ia, ib, io] {
      const auto& go = g.node(io).grad;
      if (g.needs_grad(ia)) {
        T* gi = g.grad(ia);
        for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
      }
      if (g.needs_grad(ib)) {
        T* gi = g.grad(ib);
        for (std::size_t i = 0; i < go.size(); ++i) gi[i] -= go[i];
      }
    };
  }
  return o;
}

// a[n, m] + row[1, m] broadcast over rows.
template <class T>
Tensor<T> add_row(Tensor<T> a, Tensor<T> row) {
  detail::same_graph(a, row);
  Graph<T>& g = a.graph();
  const Shape sa = a.shape();
  if (row.rows() != 1 || row.cols() != sa.cols)
    throw InvalidArgument("add_row expects a [1x" + std::to_string(sa.cols) + "] row, got " + to_string(row.shape()));
  const auto da = a.data(), dr = row.data();
  std::vector<T> out(da.size());
  for (int r = 0; r < sa.rows; ++r)
    for (int c = 0; c < sa.cols; ++c) out[r * sa.cols + c] = da[r * sa.cols + c] + dr[c];
  const int ia = a.id(), ir = row.id();
  const bool rg = g.needs_grad(ia) || g.needs_grad(ir);
  Tensor<T> o = g.push(sa, std::move(out), rg, {}, "add_row");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, ia, ir, io, sa] {
      const auto& go = g.node(io).grad;
      if (g.needs_grad(ia)) {
        T* gi = g.grad(ia);
        for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
      }
      if (g.needs_grad(ir)) {
        T* gr = g.grad(ir);
        for (int r = 0; r < sa.rows; ++r)
          for (int c = 0; c < sa.cols; ++c) gr[c] += go[r * sa.cols + c];
      }
    };
  }
  return o;
}

template <class T>
Tensor<T> scale(Tensor<T> a, T s) {
  Graph<T>& g = a.graph();
  const auto da = a.data();
  std::vector<T> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * s;
  const int ia = a.id();
  const bool rg = g.needs_grad(ia);
  Tensor<T> o = g.push(a.shape(), std::move(out), rg, {}, "scale");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, ia, io, s] {
      const auto& go = g.node(io).grad;
      T* gi = g.grad(ia);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * s;
    };
  }
  return o;
}

// Subgradient 0 at x = 0.
template <class T>
Tensor<T> relu(Tensor<T> a) {
  Graph<T>& g = a.graph();
  const auto da = a.data();
  g.log_kinks(da.data(), da.size());
  std::vector<T> out(da.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] > T(0) ? da[i] : T(0);
  const int ia = a.id();
  const bool rg = g.needs_grad(ia);
  Tensor<T> o = g.push(a.shape(), std::move(out), rg, {}, "relu");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, ia, io] {
      const auto& go = g.node(io).grad;
      const T* x = g.data(ia);
      T* gi = g.grad(ia);
      for (std::size_t i = 0; i < go.size(); ++i)
        if (x[i] > T(0)) gi[i] += go[i];
    };
  }
  return o;
}

template <class T>
Tensor<T> sum(Tensor<T> a) {
  Graph<T>& g = a.graph();
  T acc = T(0);
  for (T v : a.data()) acc += v;
  const int ia = a.id();
  const bool rg = g.needs_grad(ia);
  Tensor<T> o = g.push({1, 1}, std::vector<T>{acc}, rg, {}, "sum");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, ia, io] {
      const T go = g.node(io).grad[0];
      T* gi = g.grad(ia);
      const std::size_t n = g.node(ia).shape.size();
      for (std::size_t i = 0; i < n; ++i) gi[i] += go;
    };
  }
  return o;
}

template <class T>
Tensor<T> mean(Tensor<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.shape().size()));
}

template <class T>
Tensor<T> slice_rows(Tensor<T> a, int start, int len) {
  Graph<T>& g = a.graph();
  const Shape sa = a.shape();
  if (start < 0 || len < 0 || start + len > sa.rows) throw InvalidArgument("slice_rows out of range");
  const auto da = a.data();
  std::vector<T> out(da.begin() + start * sa.cols, da.begin() + (start + len) * sa.cols);
  const int ia = a.id();
  const bool rg = g.needs_grad(ia);
  Tensor<T> o = g.push({len, sa.cols}, std::move(out), rg, {}, "slice_rows");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, ia, io, start, sa] {
      const auto& go = g.node(io).grad;
      T* gi = g.grad(ia) + start * sa.cols;
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    };
  }
  return o;
}

template <class T>
Tensor<T> slice_cols(Tensor<T> a, int start, int len) {
  Graph<T>& g = a.graph();
  const Shape sa = a.shape();
  if (start < 0 || len < 0 || start + len > sa.cols) throw InvalidArgument("slice_cols out of range");
  const auto da = a.data();
  std::vector<T> out(static_cast<std::size_t>(sa.rows) * len);
  for (int r = 0; r < sa.rows; ++r)
    for (int c = 0; c < len; ++c) out[r * len + c] = da[r * sa.cols + start + c];
  const int ia = a.id();
  const bool rg = g.needs_grad(ia);
  Tensor<T> o = g.push({sa.rows, len}, std::move(out), rg, {}, "slice_cols");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, ia, io, start, len, sa] {
      const auto& go = g.node(io).grad;
      T* gi = g.grad(ia);
      for (int r = 0; r < sa.rows; ++r)
        for (int c = 0; c < len; ++c) gi[r * sa.cols + start + c] += go[r * len + c];
    };
  }
  return o;
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows of nothing");
  Graph<T>& g = parts.front().graph();
  const int cols = parts.front().cols();
  int rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    detail::same_graph(parts.front(), p);
    if (p.cols() != cols) throw InvalidArgument("concat_rows column mismatch");
    rows += p.rows();
    rg = rg || g.needs_grad(p.id());
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  std::vector<int> ids;
  for (const auto& p : parts) {
    const auto d = p.data();
    out.insert(out.end(), d.begin(), d.end());
    ids.push_back(p.id());
  }
  Tensor<T> o = g.push({rows, cols}, std::move(out), rg, {}, "concat_rows");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, ids, io] {
      const auto& go = g.node(io).grad;
      std::size_t off = 0;
      for (int id : ids) {
        const std::size_t n = g.node(id).shape.size();
        if (g.needs_grad(id)) {
          T* gi = g.grad(id);
          for (std::size_t i = 0; i < n; ++i) gi[i] += go[off + i];
        }
        off += n;
      }
    };
  }
  return o;
}

template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols of nothing");
  Graph<T>& g = parts.front().graph();
  const int rows = parts.front().rows();
  int cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    detail::same_graph(parts.front(), p);
    if (p.rows() != rows) throw InvalidArgument("concat_cols row mismatch");
    cols += p.cols();
    rg = rg || g.needs_grad(p.id());
  }
  std::vector<T> out(static_cast<std::size_t>(rows) * cols);
  std::vector<std::pair<int, int>> spans;  // (id, column offset)
  int off = 0;
  for (const auto& p : parts) {
    const auto d = p.data();
    const int pc = p.cols();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < pc; ++c) out[r * cols + off + c] = d[r * pc + c];
    spans.emplace_back(p.id(), off);
    off += pc;
  }
  Tensor<T> o = g.push({rows, cols}, std::move(out), rg, {}, "concat_cols");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, spans, io, rows, cols] {
      const auto& go = g.node(io).grad;
      for (auto [id, coff] : spans) {
        if (!g.needs_grad(id)) continue;
        const int pc = g.node(id).shape.cols;
        T* gi = g.grad(id);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < pc; ++c) gi[r * pc + c] += go[r * cols + coff + c];
      }
    };
  }
  return o;
}

// Gathers rows of table[V, d] by id.
template <class T>
Tensor<T> embedding(Tensor<T> table, const std::vector<int>& ids) {
  Graph<T>& g = table.graph();
  const Shape st = table.shape();
  const auto dt = table.data();
  std::vector<T> out(ids.size() * static_cast<std::size_t>(st.cols));
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= st.rows)
      throw InvalidArgument("embedding id " + std::to_string(ids[r]) + " outside table of " + std::to_string(st.rows));
    std::copy_n(dt.begin() + ids[r] * st.cols, st.cols, out.begin() + r * st.cols);
  }
  const int it = table.id();
  const bool rg = g.needs_grad(it);
  Tensor<T> o = g.push({static_cast<int>(ids.size()), st.cols}, std::move(out), rg, {}, "embedding");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, it, io, ids, st] {
      const auto& go = g.node(io).grad;
      T* gt = g.grad(it);
      for (std::size_t r = 0; r < ids.size(); ++r)
        for (int c = 0; c < st.cols; ++c) gt[ids[r] * st.cols + c] += go[r * st.cols + c];
    };
  }
  return o;
}

// Row-wise layer normalization with learned gain and bias rows.
template <class T>
Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, T eps = T(1e-5)) {
  detail::same_graph(x, gamma);
  detail::same_graph(x, beta);
  Graph<T>& g = x.graph();
  const Shape s = x.shape();
  if (gamma.shape() != Shape{1, s.cols} || beta.shape() != Shape{1, s.cols})
    throw InvalidArgument("layer_norm gain/bias must be [1x" + std::to_string(s.cols) + "]");
  const auto dx = x.data(), dg = gamma.data(), db = beta.data();
  std::vector<T> out(s.size()), xhat(s.size()), inv_std(static_cast<std::size_t>(s.rows));
  for (int r = 0; r < s.rows; ++r) {
    const T* row = dx.data() + r * s.cols;
    T mu = T(0);
    for (int c = 0; c < s.cols; ++c) mu += row[c];
    mu /= s.cols;
    T var = T(0);
    for (int c = 0; c < s.cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= s.cols;
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int c = 0; c < s.cols; ++c) {
      const T h = (row[c] - mu) * is;
      xhat[r * s.cols + c] = h;
      out[r * s.cols + c] = h * dg[c] + db[c];
    }
  }
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool rg = g.needs_grad(ix) || g.needs_grad(ig) || g.needs_grad(ib);
  Tensor<T> o = g.push(s, std::move(out), rg, {}, "layer_norm");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, ix, ig, ib, io, s, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
      const auto& go = g.node(io).grad;
      const T* dgam = g.data(ig);
      if (g.needs_grad(ig) || g.needs_grad(ib)) {
        T* gg = g.needs_grad(ig) ? g.grad(ig) : nullptr;
        T* gb = g.needs_grad(ib) ? g.grad(ib) : nullptr;
        for (int r = 0; r < s.rows; ++r)
          for (int c = 0; c < s.cols; ++c) {
            const std::size_t k = static_cast<std::size_t>(r) * s.cols + c;
            if (gg) gg[c] += go[k] * xhat[k];
            if (gb) gb[c] += go[k];
          }
      }
      if (g.needs_grad(ix)) {
        T* gx = g.grad(ix);
        for (int r = 0; r < s.rows; ++r) {
          T m1 = T(0), m2 = T(0);
          for (int c = 0; c < s.cols; ++c) {
            const std::size_t k = static_cast<std::size_t>(r) * s.cols + c;
            const T dh = go[k] * dgam[c];
            m1 += dh;
            m2 += dh * xhat[k];
          }
          m1 /= s.cols;
          m2 /= s.cols;
          for (int c = 0; c < s.cols; ++c) {
            const std::size_t k = static_cast<std::size_t>(r) * s.cols + c;
            const T dh = go[k] * dgam[c];
            gx[k] += inv_std[r] * (dh - m1 - xhat[k] * m2);
          }
        }
      }
    };
  }
  return o;
}

// Inverted dropout; identity unless the graph is in training mode.
template <class T, class Rng>
Tensor<T> dropout(Tensor<T> a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw InvalidArgument("dropout rate must be in [0, 1)");
  Graph<T>& g = a.graph();
  if (!g.training || rate == 0.0) return a;
  const auto da = a.data();
  std::vector<T> mask(da.size()), out(da.size());
  const T keep = static_cast<T>(1.0 - rate);
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    mask[i] = u < rate ? T(0) : T(1) / keep;
    out[i] = da[i] * mask[i];
  }
  const int ia = a.id();
  const bool rg = g.needs_grad(ia);
  Tensor<T> o = g.push(a.shape(), std::move(out), rg, {}, "dropout");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, ia, io, mask = std::move(mask)] {
      const auto& go = g.node(io).grad;
      T* gi = g.grad(ia);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i] * mask[i];
    };
  }
  return o;
}

// ---------------------------------------------------------------------------
// Attention

struct AttentionMask {
  bool causal = true;
  // Position of query row 0 in key coordinates; query row i attends to keys
  // j <= query_offset + i under the causal rule.
  int query_offset = 0;
  // Optional per-key validity; invalid keys never receive weight.
  std::vector<unsigned char> key_valid;

  bool allowed(int qi, int kj) const {
    if (causal && kj > query_offset + qi) return false;
    if (!key_valid.empty() && !key_valid[static_cast<std::size_t>(kj)]) return false;
    return true;
  }
};

// softmax(q k^T / sqrt(d)) with masked entries excluded; rows with no allowed
// key are all zero.
template <class T>
std::vector<T> attention_weights(std::span<const T> q, std::span<const T> k, int nq, int nk, int d,
                                 const AttentionMask& mask) {
  std::vector<T> p(static_cast<std::size_t>(nq) * nk, T(0));
  const T sc = T(1) / std::sqrt(static_cast<T>(d));
  ConstMatMap<T> Q(q.data(), nq, d), K(k.data(), nk, d);
  RowMat<T> S = (Q * K.transpose()) * sc;
  for (int i = 0; i < nq; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < nk; ++j)
      if (mask.allowed(i, j)) mx = std::max(mx, S(i, j));
    if (!std::isfinite(static_cast<double>(mx))) continue;
    T z = T(0);
    for (int j = 0; j < nk; ++j)
      if (mask.allowed(i, j)) {
        const T e = std::exp(S(i, j) - mx);
        p[i * nk + j] = e;
        z += e;
      }
    for (int j = 0; j < nk; ++j) p[i * nk + j] /= z;
  }
  return p;
}

// Scaled dot-product attention for one head: q[nq, d], k[nk, d], v[nk, dv].
template <class T>
Tensor<T> attention(Tensor<T> q, Tensor<T> k, Tensor<T> v, const AttentionMask& mask) {
  detail::same_graph(q, k);
  detail::same_graph(q, v);
  Graph<T>& g = q.graph();
  const int nq = q.rows(), nk = k.rows(), d = q.cols(), dv = v.cols();
  if (k.cols() != d || v.rows() != nk)
    throw InvalidArgument("attention shape mismatch q" + to_string(q.shape()) + " k" + to_string(k.shape()) +
                          " v" + to_string(v.shape()));
  if (!mask.key_valid.empty() && static_cast<int>(mask.key_valid.size()) != nk)
    throw InvalidArgument("attention key mask length differs from key count");
  std::vector<T> p = attention_weights<T>(q.data(), k.data(), nq, nk, d, mask);
  std::vector<T> out(static_cast<std::size_t>(nq) * dv);
  MatMap<T>(out.data(), nq, dv).noalias() = ConstMatMap<T>(p.data(), nq, nk) * detail::cmap(g, v.id());
  const int iq = q.id(), ik = k.id(), iv = v.id();
  const bool rg = g.needs_grad(iq) || g.needs_grad(ik) || g.needs_grad(iv);
  Tensor<T> o = g.push({nq, dv}, std::move(out), rg, {}, "attention");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, iq, ik, iv, io, nq, nk, d, dv, p = std::move(p)] {
      ConstMatMap<T> P(p.data(), nq, nk);
      ConstMatMap<T> dO(g.node(io).grad.data(), nq, dv);
      if (g.needs_grad(iv)) detail::gmap(g, iv).noalias() += P.transpose() * dO;
      if (!g.needs_grad(iq) && !g.needs_grad(ik)) return;
      RowMat<T> dP = dO * detail::cmap(g, iv).transpose();
      RowMat<T> dS(nq, nk);
      for (int i = 0; i < nq; ++i) {
        T dot = T(0);
        for (int j = 0; j < nk; ++j) dot += dP(i, j) * P(i, j);
        for (int j = 0; j < nk; ++j) dS(i, j) = P(i, j) * (dP(i, j) - dot);
      }
      const T sc = T(1) / std::sqrt(static_cast<T>(d));
      if (g.needs_grad(iq)) detail::gmap(g, iq).noalias() += (dS * detail::cmap(g, ik)) * sc;
      if (g.needs_grad(ik)) detail::gmap(g, ik).noalias() += (dS.transpose() * detail::cmap(g, iq)) * sc;
    };
  }
  return o;
}

// ---------------------------------------------------------------------------
// Losses

// mean over elements of |tau - 1(u < 0)| * u^2. Subgradient at u = 0 is 0.
template <class T>
Tensor<T> expectile_loss(Tensor<T> u, T tau) {
  if (!(tau > T(0) && tau < T(1))) throw InvalidArgument("expectile tau must lie in (0, 1)");
  Graph<T>& g = u.graph();
  const auto du = u.data();
  g.log_kinks(du.data(), du.size());
  const std::size_t n = du.size();
  T acc = T(0);
  for (T x : du) acc += (x < T(0) ? T(1) - tau : tau) * x * x;
  const int iu = u.id();
  const bool rg = g.needs_grad(iu);
  Tensor<T> o = g.push({1, 1}, std::vector<T>{acc / static_cast<T>(n)}, rg, {}, "expectile_loss");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, iu, io, tau, n] {
      const T go = g.node(io).grad[0];
      const T* x = g.data(iu);
      T* gu = g.grad(iu);
      for (std::size_t i = 0; i < n; ++i) {
        const T w = x[i] < T(0) ? T(1) - tau : tau;
        gu[i] += go * T(2) * w * x[i] / static_cast<T>(n);
      }
    };
  }
  return o;
}

template <class T>
Tensor<T> mse_loss(Tensor<T> u) {
  Graph<T>& g = u.graph();
  const auto du = u.data();
  const std::size_t n = du.size();
  T acc = T(0);
  for (T x : du) acc += x * x;
  const int iu = u.id();
  const bool rg = g.needs_grad(iu);
  Tensor<T> o = g.push({1, 1}, std::vector<T>{acc / static_cast<T>(n)}, rg, {}, "mse_loss");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, iu, io, n] {
      const T go = g.node(io).grad[0];
      const T* x = g.data(iu);
      T* gu = g.grad(iu);
      for (std::size_t i = 0; i < n; ++i) gu[i] += go * T(2) * x[i] / static_cast<T>(n);
    };
  }
  return o;
}

// mean |u|; subgradient 0 at u = 0.
template <class T>
Tensor<T> l1_loss(Tensor<T> u) {
  Graph<T>& g = u.graph();
  const auto du = u.data();
  g.log_kinks(du.data(), du.size());
  const std::size_t n = du.size();
  T acc = T(0);
  for (T x : du) acc += std::abs(x);
  const int iu = u.id();
  const bool rg = g.needs_grad(iu);
  Tensor<T> o = g.push({1, 1}, std::vector<T>{acc / static_cast<T>(n)}, rg, {}, "l1_loss");
  if (rg) {
    const int io = o.id();
    g.node(io).backward = [&g, iu, io, n] {
      const T go = g.node(io).grad[0];
      const T* x = g.data(iu);
      T* gu = g.grad(iu);
      for (std::size_t i = 0; i < n; ++i) {
        const T sgn = x[i] > T(0) ? T(1) : (x[i] < T(0) ? T(-1) : T(0));
        gu[i] += go * sgn / static_cast<T>(n);
      }
    };
  }
  return o;
}

}  // namespace lbm::nn
