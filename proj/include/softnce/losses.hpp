#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "softnce/error.hpp"
#include "softnce/estimators.hpp"
#include "softnce/matrix.hpp"
#include "softnce/similarity.hpp"

namespace softnce {

// Scalar loss and its gradient with respect to every entry of the SimMatrix.
struct LossResult {
  double value = 0.0;
  Matrix grad;
};

enum class LossKind { infonce, soft, bce, weighted, klreg, fnc_topk, fnc_threshold };

struct LossConfig {
  LossKind kind = LossKind::infonce;
  double lambda_main = 1.3;
  double lambda_kl = 0.7;
  int k = 1;
  double ratio = 0.7;
};

// Losses that consume estimated SimScores (and, for soft, a WeightMatrix).
inline bool needs_estimates(LossKind kind) {
  return kind == LossKind::soft || kind == LossKind::bce || kind == LossKind::weighted || kind == LossKind::klreg;
}

namespace detail {

inline double row_max(const Matrix& s, std::size_t i) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : s.row(i)) m = std::max(m, v);
  return m;
}

inline double row_logsumexp(const Matrix& s, std::size_t i) {
  const double m = row_max(s, i);
  double z = 0.0;
  for (double v : s.row(i)) z += std::exp(v - m);
  return m + std::log(z);
}

// log sum_{k != i} exp(s_ik)
inline double row_logsumexp_negatives(const Matrix& s, std::size_t i) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < s.cols(); ++k)
    if (k != i) m = std::max(m, s(i, k));
  double z = 0.0;
  for (std::size_t k = 0; k < s.cols(); ++k)
    if (k != i) z += std::exp(s(i, k) - m);
  return m + std::log(z);
}

inline void check_loss_inputs(const Matrix& s, const char* what) {
  require_square(s, what);
  if (s.rows() < 2) throw DimensionError(std::string(what) + ": batch size must be >= 2");
}

}  // namespace detail

// -(1/N) sum_i log softmax(s_i)_i
inline LossResult infonce(const SimMatrix& s) {
  detail::check_loss_inputs(s, "infonce");
  const std::size_t n = s.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossResult out{0.0, Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double lse = detail::row_logsumexp(s, i);
    out.value += inv_n * (lse - s(i, i));
    for (std::size_t j = 0; j < n; ++j) out.grad(i, j) = inv_n * (std::exp(s(i, j) - lse) - (i == j ? 1.0 : 0.0));
  }
  return out;
}

// InfoNCE with per-negative weights in the denominator:
//   -(1/N) sum_i log( e^{s_ii} / (e^{s_ii} + sum_{j!=i} w_ij e^{s_ij}) )
// The diagonal of W is treated as 1.
inline LossResult soft_infonce(const SimMatrix& s, const WeightMatrix& w) {
  detail::check_loss_inputs(s, "soft_infonce");
  require_same_shape(s, w, "soft_infonce");
  if (!w.all_finite()) throw NumericError("soft_infonce: weight matrix has non-finite entries");
  const std::size_t n = s.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossResult out{0.0, Matrix(n, n)};
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = detail::row_max(s, i);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      e[j] = (j == i ? 1.0 : w(i, j)) * std::exp(s(i, j) - m);
      z += e[j];
    }
    if (!(z > 0.0)) throw NumericError("soft_infonce: non-positive weighted denominator in row " + std::to_string(i));
    out.value += inv_n * (m + std::log(z) - s(i, i));
    for (std::size_t j = 0; j < n; ++j) out.grad(i, j) = inv_n * (e[j] / z - (i == j ? 1.0 : 0.0));
  }
  return out;
}

// dL/d exp(s_ij) = w_ij / (N sum_k w_ik exp(s_ik)) for the weighted loss,
// with w_ii = 1. For j != i this is the exact partial derivative; entry i
// carries only the denominator's share (the numerator adds -1/(N e^{s_ii})).
inline std::vector<double> gradient_wrt_exp(const SimMatrix& s, const WeightMatrix& w, std::size_t i) {
  detail::check_loss_inputs(s, "gradient_wrt_exp");
  require_same_shape(s, w, "gradient_wrt_exp");
  if (i >= s.rows()) throw DimensionError("gradient_wrt_exp: row index out of range");
  const std::size_t n = s.rows();
  const double m = detail::row_max(s, i);
  double z = 0.0;  // scaled by e^{-m}
  for (std::size_t j = 0; j < n; ++j) z += (j == i ? 1.0 : w(i, j)) * std::exp(s(i, j) - m);
  std::vector<double> g(n);
  const double scale = std::exp(-m) / (static_cast<double>(n) * z);
  for (std::size_t j = 0; j < n; ++j) g[j] = (j == i ? 1.0 : w(i, j)) * scale;
  return g;
}

inline constexpr double kProbabilityClip = 1e-12;

namespace detail {

// Shared BCE body. `log_norm(i)` is the log normalizer of row i and
// `in_norm(i, k)` tells whether s_ik enters it. Diagonal targets are 1 when
// `positive_target_one`, else sim_ii (0 by convention).
template <typename LogNorm, typename InNorm>
LossResult bce_impl(const SimMatrix& s, const SimScores& sim, bool positive_target_one, LogNorm log_norm,
                    InNorm in_norm) {
  const std::size_t n = s.rows();
  const double scale = 1.0 / static_cast<double>(n * n);
  LossResult out{0.0, Matrix(n, n)};
  std::vector<double> p(n), gp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lz = log_norm(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double target = (i == j) ? (positive_target_one ? 1.0 : sim(i, i)) : sim(i, j);
      const double log_p = s(i, j) - lz;
      const double raw = std::exp(log_p);
      const bool clipped = raw < kProbabilityClip || raw > 1.0 - kProbabilityClip;
      const double pc = std::clamp(raw, kProbabilityClip, 1.0 - kProbabilityClip);
      const double lp = clipped ? std::log(pc) : log_p;
      const double l1p = clipped ? std::log1p(-pc) : std::log1p(-raw);
      out.value -= scale * (target * lp + (1.0 - target) * l1p);
      p[j] = raw;
      gp[j] = clipped ? 0.0 : -scale * (target / raw - (1.0 - target) / (1.0 - raw));
    }
    // d p_ij / d s_ik = p_ij delta_jk - [k in normalizer] p_ij p_ik
    double inner = 0.0;
    for (std::size_t j = 0; j < n; ++j) inner += gp[j] * p[j];
    for (std::size_t k = 0; k < n; ++k) {
      double g = gp[k] * p[k];
      if (in_norm(i, k)) g -= p[k] * inner;
      out.grad(i, k) = g;
    }
  }
  return out;
}

}  // namespace detail

// Binary cross-entropy with soft labels: target 1 for the positive, sim_ij for
// negatives, p_ij = softmax over all N codes. Probabilities are clipped to
// [1e-12, 1-1e-12]; clipped entries contribute no gradient.
inline LossResult bce_loss(const SimMatrix& s, const SimScores& sim) {
  detail::check_loss_inputs(s, "bce_loss");
  require_same_shape(s, sim, "bce_loss");
  return detail::bce_impl(
      s, sim, true, [&](std::size_t i) { return detail::row_logsumexp(s, i); },
      [](std::size_t, std::size_t) { return true; });
}

// BCE variant whose probabilities are normalized over the negatives only,
// p_ij = e^{s_ij} / sum_{k!=i} e^{s_ik} for every j (p_ii may exceed 1 and is
// then clipped). Targets are sim_ij for all j, so the diagonal target is 0.
// This is the form the BCE upper bound in theory.hpp is stated for.
inline LossResult bce_loss_negative_softmax(const SimMatrix& s, const SimScores& sim) {
  detail::check_loss_inputs(s, "bce_loss_negative_softmax");
  require_same_shape(s, sim, "bce_loss_negative_softmax");
  return detail::bce_impl(
      s, sim, false, [&](std::size_t i) { return detail::row_logsumexp_negatives(s, i); },
      [](std::size_t i, std::size_t k) { return i != k; });
}

// -(1/N) sum_i sum_j m_ij log softmax(s_i)_j with m_ii = 1, m_ij = sim_ij.
inline LossResult weighted_infonce(const SimMatrix& s, const SimScores& sim) {
  detail::check_loss_inputs(s, "weighted_infonce");
  require_same_shape(s, sim, "weighted_infonce");
  const std::size_t n = s.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossResult out{0.0, Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double lse = detail::row_logsumexp(s, i);
    double mass = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double m = i == j ? 1.0 : sim(i, j);
      mass += m;
      out.value += inv_n * m * (lse - s(i, j));
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double m = i == j ? 1.0 : sim(i, j);
      out.grad(i, j) = inv_n * (mass * std::exp(s(i, j) - lse) - m);
    }
  }
  return out;
}

// KL(a || b) over j != i with 0 log 0 = 0; b given as log-probabilities.
inline double kl_negatives(const SimScores& sim, std::size_t i, const std::vector<double>& log_b) {
  double kl = 0.0;
  for (std::size_t j = 0; j < sim.cols(); ++j) {
    if (j == i) continue;
    const double a = sim(i, j);
    if (a > 0.0) kl += a * (std::log(a) - log_b[j]);
  }
  return kl;
}

// lambda_main * InfoNCE + lambda_kl * (1/N) sum_i KL(sim_i || P_i), where P_i
// is the model's softmax over the negatives j != i.
inline LossResult kl_reg_infonce(const SimMatrix& s, const SimScores& sim, double lambda_main = 1.3,
                                 double lambda_kl = 0.7) {
  detail::check_loss_inputs(s, "kl_reg_infonce");
  require_same_shape(s, sim, "kl_reg_infonce");
  if (!(lambda_main >= 0.0) || !(lambda_kl >= 0.0)) throw ConfigError("kl_reg_infonce: lambdas must be >= 0");
  const std::size_t n = s.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossResult out = infonce(s);
  out.value *= lambda_main;
  for (double& g : out.grad.data()) g *= lambda_main;
  std::vector<double> log_p(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lse = detail::row_logsumexp_negatives(s, i);
    double mass = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      log_p[j] = j == i ? 0.0 : s(i, j) - lse;
      if (j != i) mass += sim(i, j);
    }
    out.value += lambda_kl * inv_n * kl_negatives(sim, i, log_p);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) out.grad(i, j) += lambda_kl * inv_n * (mass * std::exp(log_p[j]) - sim(i, j));
  }
  return out;
}

enum class FncMode { topk, threshold };

// 0/1 matrix marking kept negatives (1) and cancelled ones (0); diagonal 1.
// topk removes the k largest s_ij per row, ties going to the smaller column
// index; threshold removes every j with s_ij > ratio * s_ii.
inline WeightMatrix fnc_keep_mask(const SimMatrix& s, FncMode mode, int k, double ratio) {
  detail::check_loss_inputs(s, "fnc_infonce");
  const std::size_t n = s.rows();
  if (mode == FncMode::topk && (k < 0 || static_cast<std::size_t>(k) > n - 2))
    throw ConfigError("fnc_infonce: top-K must satisfy 0 <= k <= N-2 (k=" + std::to_string(k) +
                      ", N=" + std::to_string(n) + ")");
  if (mode == FncMode::threshold && !(ratio > 0.0 && ratio <= 1.0))
    throw ConfigError("fnc_infonce: ratio must be in (0, 1]");
  WeightMatrix keep(n, n, 1.0);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    if (mode == FncMode::topk) {
      order.clear();
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) order.push_back(j);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s(i, a) > s(i, b); });
      for (int r = 0; r < k; ++r) keep(i, order[static_cast<std::size_t>(r)]) = 0.0;
    } else {
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && s(i, j) > ratio * s(i, i)) keep(i, j) = 0.0;
    }
  }
  return keep;
}

// InfoNCE with suspected false negatives removed from each row's denominator.
inline LossResult fnc_infonce(const SimMatrix& s, FncMode mode, int k, double ratio) {
  const WeightMatrix keep = fnc_keep_mask(s, mode, k, ratio);
  const std::size_t n = s.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  LossResult out{0.0, Matrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (keep(i, j) != 0.0) m = std::max(m, s(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (keep(i, j) != 0.0) z += std::exp(s(i, j) - m);
    out.value += inv_n * (m + std::log(z) - s(i, i));
    for (std::size_t j = 0; j < n; ++j) {
      if (keep(i, j) == 0.0) continue;
      out.grad(i, j) = inv_n * (std::exp(s(i, j) - m) / z - (i == j ? 1.0 : 0.0));
    }
  }
  return out;
}

inline void validate(const LossConfig& c) {
  if (c.kind == LossKind::klreg && (!(c.lambda_main >= 0.0) || !(c.lambda_kl >= 0.0)))
    throw ConfigError("klreg: lambdas must be >= 0");
  if (c.kind == LossKind::fnc_topk && c.k < 0) throw ConfigError("fnc_topk: k must be >= 0");
  if (c.kind == LossKind::fnc_threshold && !(c.ratio > 0.0 && c.ratio <= 1.0))
    throw ConfigError("fnc_threshold: ratio must be in (0, 1]");
}

// Dispatch for the trainer. `sim` and `weights` must be supplied for the kinds
// where needs_estimates() is true (weights only for soft).
inline LossResult compute_loss(const LossConfig& config, const SimMatrix& s, const SimScores* sim,
                               const WeightMatrix* weights) {
  auto need = [](const void* p, const char* what) {
    if (!p) throw ConfigError(std::string("loss requires ") + what);
  };
  switch (config.kind) {
    case LossKind::infonce:
      return infonce(s);
    case LossKind::soft:
      need(weights, "a weight matrix");
      return soft_infonce(s, *weights);
    case LossKind::bce:
      need(sim, "similarity estimates");
      return bce_loss(s, *sim);
    case LossKind::weighted:
      need(sim, "similarity estimates");
      return weighted_infonce(s, *sim);
    case LossKind::klreg:
      need(sim, "similarity estimates");
      return kl_reg_infonce(s, *sim, config.lambda_main, config.lambda_kl);
    case LossKind::fnc_topk:
      return fnc_infonce(s, FncMode::topk, config.k, config.ratio);
    case LossKind::fnc_threshold:
      return fnc_infonce(s, FncMode::threshold, config.k, config.ratio);
  }
  return {};
}

}  // namespace softnce
