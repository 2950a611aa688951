#pragma once

// Reverse-mode differentiation over Tensor2 values.
//
// A Tape records every op in creation order, which is a valid topological
// order, so backward() is a single reverse sweep. Parameters enter the tape
// through Tape::param() and receive their gradient when backward() finishes.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "bdm/error.hpp"
#include "bdm/parameter.hpp"
#include "bdm/tensor.hpp"

namespace bdm {

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor2& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  using BackFn = std::function<void(Tape&, std::size_t)>;

  /// A tape built with grad_enabled = false records values only (inference).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor2 v) { return push(std::move(v), false, nullptr); }

  /// Leaf that receives a gradient, readable through grad() after backward().
  Var variable(Tensor2 v) { return push(std::move(v), true, nullptr); }

  /// Leaf bound to a parameter; the node reads the parameter's value in place,
  /// so the parameter must not change while the tape is alive. Repeated calls
  /// return the same node.
  Var param(const Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
    Var v = push(Tensor2{}, true, nullptr);
    nodes_[v.id].ref = &p.value;
    nodes_[v.id].param = grad_enabled_ ? const_cast<Parameter*>(&p) : nullptr;
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  Var push(Tensor2 value, bool requires_grad, BackFn back) {
    requires_grad = requires_grad && grad_enabled_;
    nodes_.push_back(Node{std::move(value), nullptr, Tensor2{}, requires_grad ? std::move(back) : BackFn{}, nullptr,
                          requires_grad});
    return Var{this, nodes_.size() - 1};
  }

  const Tensor2& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.value;
  }
  bool grad_enabled() const { return grad_enabled_; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of a node, allocated (zeroed) on first use.
  Tensor2& grad_ref(std::size_t id) {
    Node& n = nodes_[id];
    const Tensor2& v = value(id);
    if (n.grad.empty() && !v.empty()) n.grad = Tensor2(v.rows(), v.cols());
    return n.grad;
  }

  /// Gradient of a variable leaf after backward(); zeros if none flowed.
  Tensor2 grad(Var v) {
    const Tensor2& g = grad_ref(v.id);
    return g;
  }

  /// Propagates d(loss)/d(node) to every node and adds it into bound Parameters.
  /// Parameter gradients accumulate across calls until the parameters are zeroed.
  void backward(Var loss) {
    if (loss.tape != this) throw ContractError("backward: variable belongs to a different tape");
    if (!grad_enabled_) throw ContractError("backward: tape was built without gradients");
    const Tensor2& lv = value(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractError("backward: root must be a scalar, got " + shape_str(lv));
    }
    for (Node& n : nodes_) {
      if (!n.grad.empty()) n.grad.fill(0.0);
    }
    grad_ref(loss.id)(0, 0) = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.back) n.back(*this, i);
    }
    for (Node& n : nodes_) {
      if (n.param == nullptr || n.grad.empty()) continue;
      auto& dst = n.param->gradient.values();
      const auto& src = n.grad.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }

  void clear() {
    nodes_.clear();
    param_nodes_.clear();
  }

  std::size_t size() const { return nodes_.size(); }

  /// Hash of every branch taken by non-smooth ops (ReLU signs, min/max argument
  /// rows). Two evaluations with equal signatures lie on the same smooth piece.
  std::uint64_t branch_signature() const { return branch_sig_; }
  void note_branch(std::uint64_t v) { branch_sig_ = (branch_sig_ ^ v) * 0x100000001b3ULL; }

 private:
  struct Node {
    Tensor2 value;
    const Tensor2* ref;
    Tensor2 grad;
    BackFn back;
    Parameter* param;
    bool requires_grad;
  };

  bool grad_enabled_ = true;
  std::uint64_t branch_sig_ = 0xcbf29ce484222325ULL;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Tensor2& Var::value() const { return tape->value(id); }

namespace detail {

inline void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands live on different tapes");
}

inline void accumulate(Tensor2& dst, const Tensor2& src) {
  auto& d = dst.values();
  const auto& s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  detail::check_same_tape(a, b);
  const Tensor2& av = a.value();
  const Tensor2& bv = b.value();
  if (av.cols() != bv.rows()) throw DimensionError("matmul: " + shape_str(av) + " x " + shape_str(bv));
  Tensor2 out(av.rows(), bv.cols());
  kernel::gemm_nn(av, bv, out);
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const Tensor2& g = tp.grad_ref(self);
    if (tp.requires_grad(ia)) kernel::gemm_nt(g, tp.value(ib), tp.grad_ref(ia));
    if (tp.requires_grad(ib)) kernel::gemm_tn(tp.value(ia), g, tp.grad_ref(ib));
  });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  detail::check_same_tape(a, b);
  const Tensor2& av = a.value();
  const Tensor2& bv = b.value();
  if (av.cols() != bv.cols()) throw DimensionError("matmul_nt: " + shape_str(av) + " x " + shape_str(bv) + "^T");
  Tensor2 out(av.rows(), bv.rows());
  kernel::gemm_nt(av, bv, out);
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const Tensor2& g = tp.grad_ref(self);
    if (tp.requires_grad(ia)) kernel::gemm_nn(g, tp.value(ib), tp.grad_ref(ia));
    if (tp.requires_grad(ib)) kernel::gemm_tn(g, tp.value(ia), tp.grad_ref(ib));
  });
}

inline Var transpose(Var a) {
  const Tensor2& av = a.value();
  Tensor2 out(av.cols(), av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
  Tape& t = *a.tape;
  return t.push(std::move(out), t.requires_grad(a), [ia = a.id](Tape& tp, std::size_t self) {
    const Tensor2& g = tp.grad_ref(self);
    Tensor2& ga = tp.grad_ref(ia);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(j, i);
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw DimensionError("add: " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
  Tensor2 out = a.value();
  detail::accumulate(out, b.value());
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const Tensor2& g = tp.grad_ref(self);
    if (tp.requires_grad(ia)) detail::accumulate(tp.grad_ref(ia), g);
    if (tp.requires_grad(ib)) detail::accumulate(tp.grad_ref(ib), g);
  });
}

/// Adds a 1 x n row to every row of a.
inline Var add_row(Var a, Var bias) {
  detail::check_same_tape(a, bias);
  const Tensor2& av = a.value();
  const Tensor2& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw DimensionError("add_row: " + shape_str(av) + " + " + shape_str(bv));
  }
  Tensor2 out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv(0, c);
  }
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a) || t.requires_grad(bias);
  return t.push(std::move(out), rg, [ia = a.id, ib = bias.id](Tape& tp, std::size_t self) {
    const Tensor2& g = tp.grad_ref(self);
    if (tp.requires_grad(ia)) detail::accumulate(tp.grad_ref(ia), g);
    if (tp.requires_grad(ib)) {
      Tensor2& gb = tp.grad_ref(ib);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::check_same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw DimensionError("mul: " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
  Tensor2 out = a.value();
  auto& o = out.values();
  const auto& bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  Tape& t = *a.tape;
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_ref(self).values();
    if (tp.requires_grad(ia)) {
      auto& ga = tp.grad_ref(ia).values();
      const auto& bv = tp.value(ib).values();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(ib)) {
      auto& gb = tp.grad_ref(ib).values();
      const auto& av = tp.value(ia).values();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor2 out = a.value();
  for (double& v : out.values()) v *= s;
  Tape& t = *a.tape;
  return t.push(std::move(out), t.requires_grad(a), [ia = a.id, s](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_ref(self).values();
    auto& ga = tp.grad_ref(ia).values();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

inline Var relu(Var a) {
  Tensor2 out = a.value();
  Tape& t = *a.tape;
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double& v = out.values()[i];
    if (v > 0.0) bits ^= 0x9e3779b97f4a7c15ULL * (i + 1);
    else v = 0.0;
  }
  t.note_branch(bits);
  return t.push(std::move(out), t.requires_grad(a), [ia = a.id](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_ref(self).values();
    const auto& x = tp.value(ia).values();
    auto& ga = tp.grad_ref(ia).values();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

inline Var tanh(Var a) {
  Tensor2 out = a.value();
  for (double& v : out.values()) v = std::tanh(v);
  Tape& t = *a.tape;
  return t.push(std::move(out), t.requires_grad(a), [ia = a.id](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_ref(self).values();
    const auto& y = tp.value(self).values();
    auto& ga = tp.grad_ref(ia).values();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalization and softmax

/// Per-row layer normalization with 1 x n gain and bias.
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  detail::check_same_tape(x, gain);
  detail::check_same_tape(x, bias);
  const Tensor2& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != n || !gain.value().same_shape(bias.value())) {
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(n));
  }
  Tensor2 xhat(xv.rows(), n);
  std::vector<double> inv_std(xv.rows());
  Tensor2 out(xv.rows(), n);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (row[c] - mean) * inv_std[r];
      out(r, c) = xhat(r, c) * gain.value()(0, c) + bias.value()(0, c);
    }
  }
  Tape& t = *x.tape;
  const bool rg = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
  return t.push(std::move(out), rg,
                [ix = x.id, ig = gain.id, ib = bias.id, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape& tp, std::size_t self) {
                  const Tensor2& g = tp.grad_ref(self);
                  const Tensor2& gv = tp.value(ig);
                  const std::size_t n = g.cols();
                  if (tp.requires_grad(ig)) {
                    Tensor2& gg = tp.grad_ref(ig);
                    for (std::size_t r = 0; r < g.rows(); ++r)
                      for (std::size_t c = 0; c < n; ++c) gg(0, c) += g(r, c) * xhat(r, c);
                  }
                  if (tp.requires_grad(ib)) {
                    Tensor2& gb = tp.grad_ref(ib);
                    for (std::size_t r = 0; r < g.rows(); ++r)
                      for (std::size_t c = 0; c < n; ++c) gb(0, c) += g(r, c);
                  }
                  if (tp.requires_grad(ix)) {
                    Tensor2& gx = tp.grad_ref(ix);
                    std::vector<double> dxhat(n);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      double sum_d = 0.0, sum_dx = 0.0;
                      for (std::size_t c = 0; c < n; ++c) {
                        dxhat[c] = g(r, c) * gv(0, c);
                        sum_d += dxhat[c];
                        sum_dx += dxhat[c] * xhat(r, c);
                      }
                      const double k = inv_std[r] / static_cast<double>(n);
                      for (std::size_t c = 0; c < n; ++c) {
                        gx(r, c) += k * (static_cast<double>(n) * dxhat[c] - sum_d - xhat(r, c) * sum_dx);
                      }
                    }
                  }
                });
}

/// Softmax of each row over its first `valid_cols` entries; the rest are 0.
inline Var softmax_rows(Var x, std::size_t valid_cols) {
  const Tensor2& xv = x.value();
  if (valid_cols == 0 || valid_cols > xv.cols()) throw ContractError("softmax_rows: bad valid column count");
  Tensor2 out(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < valid_cols; ++c) mx = std::max(mx, xv(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < valid_cols; ++c) {
      out(r, c) = std::exp(xv(r, c) - mx);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < valid_cols; ++c) out(r, c) /= z;
  }
  Tape& t = *x.tape;
  return t.push(std::move(out), t.requires_grad(x), [ix = x.id, valid_cols](Tape& tp, std::size_t self) {
    const Tensor2& g = tp.grad_ref(self);
    const Tensor2& y = tp.value(self);
    Tensor2& gx = tp.grad_ref(ix);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < valid_cols; ++c) s += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < valid_cols; ++c) gx(r, c) += y(r, c) * (g(r, c) - s);
    }
  });
}

/// Scales each row to unit L2 norm.
inline Var l2_normalize_rows(Var x) {
  const Tensor2& xv = x.value();
  Tensor2 out = xv;
  std::vector<double> norms(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    norms[r] = l2_norm(xv.row(r));
    if (!(norms[r] > 0.0)) throw ContractError("l2_normalize_rows: zero-norm row");
    for (double& v : out.row(r)) v /= norms[r];
  }
  Tape& t = *x.tape;
  return t.push(std::move(out), t.requires_grad(x), [ix = x.id, norms = std::move(norms)](Tape& tp, std::size_t self) {
    const Tensor2& g = tp.grad_ref(self);
    const Tensor2& y = tp.value(self);
    Tensor2& gx = tp.grad_ref(ix);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double gy = dot(g.row(r), y.row(r));
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) += (g(r, c) - y(r, c) * gy) / norms[r];
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

inline Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const Tensor2& xv = x.value();
  if (start + count > xv.cols()) throw DimensionError("slice_cols out of range");
  Tensor2 out(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = xv(r, start + c);
  Tape& t = *x.tape;
  return t.push(std::move(out), t.requires_grad(x), [ix = x.id, start](Tape& tp, std::size_t self) {
    const Tensor2& g = tp.grad_ref(self);
    Tensor2& gx = tp.grad_ref(ix);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, start + c) += g(r, c);
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& t = *parts[0].tape;
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape != &t) throw ContractError("concat_cols: mixed tapes");
    if (p.rows() != rows) throw DimensionError("concat_cols: row count mismatch");
    cols += p.cols();
    rg = rg || t.requires_grad(p);
  }
  Tensor2 out(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor2& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
    off += pv.cols();
    ids.push_back(p.id);
  }
  return t.push(std::move(out), rg, [ids = std::move(ids)](Tape& tp, std::size_t self) {
    const Tensor2& g = tp.grad_ref(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t w = tp.value(id).cols();
      if (tp.requires_grad(id)) {
        Tensor2& gp = tp.grad_ref(id);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, off + c);
      }
      off += w;
    }
  });
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& t = *parts[0].tape;
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  bool rg = false;
  for (const Var& p : parts) {
    if (p.tape != &t) throw ContractError("concat_rows: mixed tapes");
    if (p.cols() != cols) throw DimensionError("concat_rows: column count mismatch");
    rows += p.rows();
    rg = rg || t.requires_grad(p);
  }
  Tensor2 out(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto& src = p.value().values();
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(off * cols));
    off += p.rows();
    ids.push_back(p.id);
  }
  return t.push(std::move(out), rg, [ids = std::move(ids)](Tape& tp, std::size_t self) {
    const auto& g = tp.grad_ref(self).values();
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t n = tp.value(id).size();
      if (tp.requires_grad(id)) {
        auto& gp = tp.grad_ref(id).values();
        for (std::size_t k = 0; k < n; ++k) gp[k] += g[off + k];
      }
      off += n;
    }
  });
}

/// Output row t is the sum of table rows listed in rows_per_output[t]; an empty list gives a zero row.
inline Var gather_sum(Var table, std::vector<std::vector<std::size_t>> rows_per_output) {
  const Tensor2& tv = table.value();
  const std::size_t dim = tv.cols();
  Tensor2 out(rows_per_output.size(), dim);
  for (std::size_t t = 0; t < rows_per_output.size(); ++t) {
    auto o = out.row(t);
    for (std::size_t idx : rows_per_output[t]) {
      if (idx >= tv.rows()) {
        throw ContractError("gather_sum: row id " + std::to_string(idx) + " out of range (table has " +
                            std::to_string(tv.rows()) + " rows)");
      }
      auto src = tv.row(idx);
      for (std::size_t c = 0; c < dim; ++c) o[c] += src[c];
    }
  }
  Tape& t = *table.tape;
  return t.push(std::move(out), t.requires_grad(table),
                [it = table.id, rows = std::move(rows_per_output)](Tape& tp, std::size_t self) {
                  const Tensor2& g = tp.grad_ref(self);
                  Tensor2& gt = tp.grad_ref(it);
                  for (std::size_t r = 0; r < rows.size(); ++r) {
                    auto gr = g.row(r);
                    for (std::size_t idx : rows[r]) {
                      auto dst = gt.row(idx);
                      for (std::size_t c = 0; c < gr.size(); ++c) dst[c] += gr[c];
                    }
                  }
                });
}

namespace detail {

template <typename Better>
Var reduce_select_rows(Var x, std::size_t valid_rows, Better better, const char* what) {
  const Tensor2& xv = x.value();
  if (valid_rows == 0 || valid_rows > xv.rows()) throw ContractError(std::string(what) + ": bad valid row count");
  Tensor2 out(1, xv.cols());
  std::vector<std::size_t> arg(xv.cols(), 0);
  for (std::size_t c = 0; c < xv.cols(); ++c) {
    double best = xv(0, c);
    for (std::size_t r = 1; r < valid_rows; ++r) {
      if (better(xv(r, c), best)) {
        best = xv(r, c);
        arg[c] = r;
      }
    }
    out(0, c) = best;
  }
  Tape& t = *x.tape;
  for (std::size_t a : arg) t.note_branch(a);
  return t.push(std::move(out), t.requires_grad(x), [ix = x.id, arg = std::move(arg)](Tape& tp, std::size_t self) {
    const Tensor2& g = tp.grad_ref(self);
    Tensor2& gx = tp.grad_ref(ix);
    for (std::size_t c = 0; c < arg.size(); ++c) gx(arg[c], c) += g(0, c);
  });
}

}  // namespace detail

/// Column-wise minimum over the first valid_rows rows (1 x n).
inline Var min_rows(Var x, std::size_t valid_rows) {
  return detail::reduce_select_rows(x, valid_rows, [](double a, double b) { return a < b; }, "min_rows");
}

/// Column-wise maximum over the first valid_rows rows (1 x n).
inline Var max_rows(Var x, std::size_t valid_rows) {
  return detail::reduce_select_rows(x, valid_rows, [](double a, double b) { return a > b; }, "max_rows");
}

/// Column-wise mean over the first valid_rows rows, summed in row order (1 x n).
inline Var mean_rows(Var x, std::size_t valid_rows) {
  const Tensor2& xv = x.value();
  if (valid_rows == 0 || valid_rows > xv.rows()) throw ContractError("mean_rows: bad valid row count");
  Tensor2 out(1, xv.cols());
  for (std::size_t r = 0; r < valid_rows; ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out(0, c) += xv(r, c);
  const double inv = 1.0 / static_cast<double>(valid_rows);
  for (double& v : out.values()) v *= inv;
  Tape& t = *x.tape;
  return t.push(std::move(out), t.requires_grad(x), [ix = x.id, valid_rows, inv](Tape& tp, std::size_t self) {
    const Tensor2& g = tp.grad_ref(self);
    Tensor2& gx = tp.grad_ref(ix);
    for (std::size_t r = 0; r < valid_rows; ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) += g(0, c) * inv;
  });
}

inline Var mean_rows(Var x) { return mean_rows(x, x.rows()); }

/// Row k of the result is the mean of rows [offsets[k], offsets[k+1]) of x, summed
/// in row order like mean_rows. offsets must start at 0, end at x.rows() and
/// describe non-empty segments.
inline Var segment_mean_rows(Var x, std::vector<std::size_t> offsets) {
  const Tensor2& xv = x.value();
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != xv.rows()) {
    throw ContractError("segment_mean_rows: offsets must run from 0 to the row count");
  }
  const std::size_t k = offsets.size() - 1;
  Tensor2 out(k, xv.cols());
  for (std::size_t s = 0; s < k; ++s) {
    if (offsets[s + 1] <= offsets[s]) throw ContractError("segment_mean_rows: empty or decreasing segment");
    auto dst = out.row(s);
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
      for (std::size_t c = 0; c < xv.cols(); ++c) dst[c] += xv(r, c);
    const double inv = 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
    for (double& v : dst) v *= inv;
  }
  Tape& t = *x.tape;
  return t.push(std::move(out), t.requires_grad(x), [ix = x.id, offsets = std::move(offsets)](Tape& tp, std::size_t self) {
    const Tensor2& g = tp.grad_ref(self);
    Tensor2& gx = tp.grad_ref(ix);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(offsets[s + 1] - offsets[s]);
      for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gx(r, c) += g(s, c) * inv;
    }
  });
}

inline Var sum_all(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  Tape& t = *x.tape;
  return t.push(Tensor2::scalar(s), t.requires_grad(x), [ix = x.id](Tape& tp, std::size_t self) {
    const double g = tp.grad_ref(self)(0, 0);
    for (double& v : tp.grad_ref(ix).values()) v += g;
  });
}

}  // namespace bdm
