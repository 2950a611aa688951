#pragma once

// Bidirectional additive-margin softmax ranking loss with in-batch negatives.
//
// For a K x (K+H) score matrix S, row i's loss is
//   -log( e^{s(S_ii - m)} / (e^{s(S_ii - m)} + sum_{j != i} e^{s S_ij}) )
// where columns K..K+H-1 hold appended hard negatives. The diagonal is the
// only label; hard negatives are never positives. The logit scale s defaults
// to 1, which is the plain additive-margin form.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "bdm/autodiff.hpp"
#include "bdm/error.hpp"
#include "bdm/tensor.hpp"

namespace bdm {

struct LossConfig {
  double margin = 0.3;
  /// Expected K; 0 accepts any batch size.
  std::size_t batch_size = 0;
  /// Logit scale applied to the margin-adjusted cosine scores.
  double scale = 1.0;

  void validate() const {
    if (!(margin >= 0.0)) throw ContractError("LossConfig: margin must be >= 0");
    if (!(scale > 0.0) || !std::isfinite(scale)) throw ContractError("LossConfig: scale must be finite and > 0");
  }
};

/// Scores of K sources against K in-batch targets followed by H hard negatives.
struct ScoreMatrix {
  Tensor2 scores;

  std::size_t batch() const { return scores.rows(); }
  std::size_t hard() const { return scores.cols() - scores.rows(); }
};

inline ScoreMatrix score_matrix(const Tensor2& src, const Tensor2& tgt, const Tensor2* hard = nullptr) {
  if (src.rows() != tgt.rows()) {
    throw ContractError("score_matrix: source rows " + std::to_string(src.rows()) + " != target rows " +
                        std::to_string(tgt.rows()));
  }
  if (src.cols() != tgt.cols() || (hard && hard->rows() > 0 && hard->cols() != src.cols())) {
    throw ContractError("score_matrix: embedding dimensions differ");
  }
  if (src.rows() == 0) throw ContractError("score_matrix: empty batch");
  const std::size_t k = src.rows();
  const std::size_t h = hard ? hard->rows() : 0;
  ScoreMatrix sm{Tensor2(k, k + h)};
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) sm.scores(i, j) = dot(src.row(i), tgt.row(j));
    for (std::size_t j = 0; j < h; ++j) sm.scores(i, k + j) = dot(src.row(i), hard->row(j));
  }
  return sm;
}

namespace detail {

/// Mean per-row loss; if grad is non-null it receives dLoss/dScores.
inline double am_softmax_rows(const Tensor2& s, double margin, double scale, Tensor2* grad) {
  const std::size_t k = s.rows();
  const std::size_t n = s.cols();
  if (k == 0 || n < k) throw ContractError("additive-margin loss: score matrix must be K x (K+H)");
  std::vector<double> logits(n);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      logits[j] = scale * (j == i ? s(i, j) - margin : s(i, j));
      mx = std::max(mx, logits[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(logits[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - logits[i];
    if (grad) {
      for (std::size_t j = 0; j < n; ++j) {
        const double p = std::exp(logits[j] - lse);
        (*grad)(i, j) += scale * (p - (j == i ? 1.0 : 0.0)) / static_cast<double>(k);
      }
    }
  }
  return total / static_cast<double>(k);
}

}  // namespace detail

/// Directional loss J over a score matrix.
inline double forward_loss(const ScoreMatrix& sm, const LossConfig& cfg) {
  cfg.validate();
  if (cfg.batch_size != 0 && cfg.batch_size != sm.batch()) {
    throw ContractError("forward_loss: LossConfig.batch_size " + std::to_string(cfg.batch_size) +
                        " != score matrix batch " + std::to_string(sm.batch()));
  }
  return detail::am_softmax_rows(sm.scores, cfg.margin, cfg.scale, nullptr);
}

/// Forward (src->tgt) plus backward (tgt->src) loss; hard negatives apply per direction.
inline double bidirectional_loss(const Tensor2& src, const Tensor2& tgt, const Tensor2* hard_fwd,
                                 const Tensor2* hard_bwd, const LossConfig& cfg) {
  return forward_loss(score_matrix(src, tgt, hard_fwd), cfg) + forward_loss(score_matrix(tgt, src, hard_bwd), cfg);
}

/// Taped directional loss over a K x (K+H) score node.
inline Var am_softmax_loss(Var scores, double margin, double scale = 1.0) {
  LossConfig{margin, 0, scale}.validate();
  const double loss = detail::am_softmax_rows(scores.value(), margin, scale, nullptr);
  Tape& t = *scores.tape;
  return t.push(Tensor2::scalar(loss), t.requires_grad(scores),
                [is = scores.id, margin, scale](Tape& tp, std::size_t self) {
    const double g = tp.grad_ref(self)(0, 0);
    Tensor2 local(tp.value(is).rows(), tp.value(is).cols());
    detail::am_softmax_rows(tp.value(is), margin, scale, &local);
    auto& dst = tp.grad_ref(is).values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g * local.values()[k];
  });
}

/// Taped bidirectional loss over K x d embedding nodes. Hard negatives (H x d) are optional.
inline Var bidirectional_loss(Var src, Var tgt, std::optional<Var> hard_fwd, std::optional<Var> hard_bwd,
                              const LossConfig& cfg) {
  cfg.validate();
  if (src.rows() != tgt.rows() || src.cols() != tgt.cols()) {
    throw ContractError("bidirectional_loss: src " + shape_str(src.value()) + " vs tgt " + shape_str(tgt.value()));
  }
  if (cfg.batch_size != 0 && cfg.batch_size != src.rows()) {
    throw ContractError("bidirectional_loss: batch size mismatch");
  }
  auto direction = [&](Var q, Var c, std::optional<Var> hard) {
    Var cands = c;
    if (hard && hard->rows() > 0) {
      const Var parts[] = {c, *hard};
      cands = concat_rows(parts);
    }
    return am_softmax_loss(matmul_nt(q, cands), cfg.margin, cfg.scale);
  };
  return add(direction(src, tgt, hard_fwd), direction(tgt, src, hard_bwd));
}

}  // namespace bdm
