#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "softnce/estimators.hpp"
#include "softnce/losses.hpp"
#include "softnce/parallel.hpp"
#include "softnce/rng.hpp"

namespace softnce {

// Alignment / uniformity split of the weighted InfoNCE objective:
//   align = -(1/N) sum_i s_ii
//   unif  =  (1/N) sum_i log(e^{s_ii} + sum_{j!=i} w_ij e^{s_ij})
struct Decomposition {
  double align = 0.0;
  double unif = 0.0;
};

inline Decomposition decompose(const SimMatrix& s, const WeightMatrix& w) {
  detail::check_loss_inputs(s, "decompose");
  require_same_shape(s, w, "decompose");
  const std::size_t n = s.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  Decomposition d;
  for (std::size_t i = 0; i < n; ++i) {
    d.align -= inv_n * s(i, i);
    const double m = detail::row_max(s, i);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (j == i ? 1.0 : w(i, j)) * std::exp(s(i, j) - m);
    d.unif += inv_n * (m + std::log(z));
  }
  return d;
}

inline constexpr double kBoundTolerance = 1e-9;

// slack is oriented so that slack >= 0 means the bound holds.
struct BoundReport {
  double lhs = std::numeric_limits<double>::quiet_NaN();
  double rhs = std::numeric_limits<double>::quiet_NaN();
  double slack = std::numeric_limits<double>::quiet_NaN();
  bool holds = false;
  bool conditions_met = true;
  std::string reason;
};

namespace detail {

inline BoundReport unmet(std::string reason) {
  BoundReport r;
  r.conditions_met = false;
  r.reason = std::move(reason);
  return r;
}

inline double entropy_term(const SimScores& sim, std::size_t i) {  // sum_{j!=i} a log a
  double h = 0.0;
  for (std::size_t j = 0; j < sim.cols(); ++j)
    if (j != i && sim(i, j) > 0.0) h += sim(i, j) * std::log(sim(i, j));
  return h;
}

}  // namespace detail

// Lower bound on the uniformity term with unclamped weights, evaluated on
// similarities clamped at 0:
//   unif >= 1/(N(bN-a-1)) sum_i [ b sum_{j!=i} log P_i(j) + a KL(sim_i||P_i) - a sum_{j!=i} sim_ij log sim_ij ]
// with P_i the softmax over negatives. Requires bN-a-1 > 0 and non-negative
// weights (the mixing step treats the weights as a distribution).
inline BoundReport check_theorem1(const SimMatrix& s, const SimScores& sim, double alpha, double beta) {
  detail::check_loss_inputs(s, "check_theorem1");
  require_same_shape(s, sim, "check_theorem1");
  const std::size_t n = s.rows();
  const double nn = static_cast<double>(n);
  const double c = beta * nn - alpha - 1.0;
  if (!(c > 0.0)) return detail::unmet("beta*N - alpha - 1 <= 0");
  WeightMatrix w;
  try {
    w = unclamped_weights(sim, alpha, beta);
  } catch (const ConfigError& e) {
    return detail::unmet(e.what());
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && w(i, j) < 0.0) return detail::unmet("negative pre-clamp weight (sim_ij > beta/alpha)");

  SimMatrix clamped = s;
  for (double& v : clamped.data()) v = std::max(0.0, v);

  BoundReport r;
  r.lhs = decompose(clamped, w).unif;
  double total = 0.0;
  std::vector<double> log_p(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lse = detail::row_logsumexp_negatives(clamped, i);
    double sum_log_p = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      log_p[j] = j == i ? 0.0 : clamped(i, j) - lse;
      if (j != i) sum_log_p += log_p[j];
    }
    total += beta * sum_log_p + alpha * kl_negatives(sim, i, log_p) - alpha * detail::entropy_term(sim, i);
  }
  r.rhs = total / (nn * c);
  r.slack = r.lhs - r.rhs;
  r.holds = r.slack >= -kBoundTolerance;
  return r;
}

// Upper bound on the negatives-normalized BCE loss:
//   L_BCE <= 1/N^2 sum_i [ -sum_j log(1 - P_i(j)) + KL(sim_i||P_i) - sum_{j!=i} sim_ij log sim_ij ]
// with P_i(j) = e^{s_ij} / sum_{k!=i} e^{s_ik}, clipped exactly as in the loss.
inline BoundReport check_theorem2(const SimMatrix& s, const SimScores& sim) {
  detail::check_loss_inputs(s, "check_theorem2");
  require_same_shape(s, sim, "check_theorem2");
  const std::size_t n = s.rows();
  BoundReport r;
  r.lhs = bce_loss_negative_softmax(s, sim).value;
  double total = 0.0;
  std::vector<double> log_p(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lse = detail::row_logsumexp_negatives(s, i);
    double sum_log1m = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double lp = s(i, j) - lse;
      const double raw = std::exp(lp);
      const bool clipped = raw < kProbabilityClip || raw > 1.0 - kProbabilityClip;
      const double pc = std::clamp(raw, kProbabilityClip, 1.0 - kProbabilityClip);
      log_p[j] = clipped ? std::log(pc) : lp;
      sum_log1m += std::log1p(-(clipped ? pc : raw));
    }
    total += -sum_log1m + kl_negatives(sim, i, log_p) - detail::entropy_term(sim, i);
  }
  r.rhs = total / static_cast<double>(n * n);
  r.slack = r.rhs - r.lhs;
  r.holds = r.slack >= -kBoundTolerance;
  return r;
}

// Soft-InfoNCE (alpha = beta = 1, unclamped weights) against weighted InfoNCE:
//   L_soft >= L_W + (1/N) sum_i [ log P_i(i) + sum_{j!=i} (N-1-sim_ij)/(N-2) log P_i(j) ]
// with P_i the softmax over all N codes.
inline BoundReport check_prop1(const SimMatrix& s, const SimScores& sim) {
  detail::check_loss_inputs(s, "check_prop1");
  require_same_shape(s, sim, "check_prop1");
  const std::size_t n = s.rows();
  if (n < 3) throw DimensionError("check_prop1: batch size must be >= 3");
  const double nn = static_cast<double>(n);
  BoundReport r;
  r.lhs = soft_infonce(s, unclamped_weights(sim, 1.0, 1.0)).value;
  double extra = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lse = detail::row_logsumexp(s, i);
    extra += s(i, i) - lse;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) extra += (nn - 1.0 - sim(i, j)) / (nn - 2.0) * (s(i, j) - lse);
  }
  r.rhs = weighted_infonce(s, sim).value + extra / nn;
  r.slack = r.lhs - r.rhs;
  r.holds = r.slack >= -kBoundTolerance;
  return r;
}

// ---------------------------------------------------------------------------
// Randomized sweeps

struct BoundInstance {
  std::size_t index = 0;
  SimMatrix s;
  SimScores sim;
  double alpha = 1.0;
  double beta = 1.0;
};

struct BoundSweep {
  std::string name;
  std::size_t total = 0;
  std::size_t passed = 0;
  std::size_t rejected = 0;  // draws discarded for failing the preconditions
  double min_slack = std::numeric_limits<double>::infinity();
  std::vector<std::pair<BoundInstance, BoundReport>> failures;
};

struct VerifyReport {
  std::uint64_t seed = 0;
  std::size_t instances = 0;
  std::vector<BoundSweep> bounds;

  bool all_passed() const {
    for (const auto& b : bounds)
      if (b.passed != b.total) return false;
    return true;
  }
};

namespace detail {

inline BoundInstance random_instance(Rng& rng, const std::vector<std::size_t>& sizes) {
  static const double kScales[] = {0.25, 1.0, 3.0};
  static const double kTemps[] = {0.2, 1.0, 5.0};
  BoundInstance inst;
  const std::size_t n = sizes[rng.below(sizes.size())];
  const double scale = kScales[rng.below(3)];
  const double t = kTemps[rng.below(3)];
  inst.s = SimMatrix(n, n);
  for (double& v : inst.s.data()) v = scale * rng.normal();
  RawScores raw(n, n);
  for (double& v : raw.data()) v = rng.normal();
  inst.sim = normalize_scores(raw, t);
  return inst;
}

inline nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  return rows;
}

template <typename Draw, typename Check>
BoundSweep run_sweep(std::string name, std::size_t instances, std::uint64_t seed, std::uint64_t stream, Draw draw,
                     Check check) {
  constexpr int kMaxDraws = 10000;
  struct Slot {
    BoundInstance inst;
    BoundReport report;
    std::size_t rejected = 0;
  };
  std::vector<Slot> slots(instances);
  parallel_for(instances, [&](std::size_t k) {
    Rng rng(mix_seed(seed, stream, k));
    for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
      BoundInstance inst = draw(rng, k);
      inst.index = k;
      BoundReport rep = check(inst);
      if (rep.conditions_met) {
        slots[k] = Slot{std::move(inst), rep, slots[k].rejected};
        return;
      }
      ++slots[k].rejected;
    }
    slots[k].report = unmet("no instance satisfying the preconditions after repeated draws");
  });
  BoundSweep out;
  out.name = std::move(name);
  for (auto& slot : slots) {
    ++out.total;
    out.rejected += slot.rejected;
    if (slot.report.conditions_met) out.min_slack = std::min(out.min_slack, slot.report.slack);
    if (slot.report.conditions_met && slot.report.holds) {
      ++out.passed;
    } else {
      out.failures.emplace_back(std::move(slot.inst), slot.report);
    }
  }
  return out;
}

}  // namespace detail

// Checks every bound on `instances` random batches each. Theorem-1 instances
// alternate (alpha, beta) between (1, 1) and (1.3, 0.7) and redraw until the
// preconditions hold; the other two use N in {4, 8}.
inline VerifyReport verify_bounds(std::size_t instances, std::uint64_t seed) {
  VerifyReport report;
  report.seed = seed;
  report.instances = instances;
  report.bounds.push_back(detail::run_sweep(
      "theorem1", instances, seed, 1,
      [](Rng& rng, std::size_t k) {
        BoundInstance inst = detail::random_instance(rng, {4, 8, 16});
        if (k % 2 == 1) inst.alpha = 1.3, inst.beta = 0.7;
        return inst;
      },
      [](const BoundInstance& in) { return check_theorem1(in.s, in.sim, in.alpha, in.beta); }));
  report.bounds.push_back(detail::run_sweep(
      "theorem2", instances, seed, 2, [](Rng& rng, std::size_t) { return detail::random_instance(rng, {4, 8}); },
      [](const BoundInstance& in) { return check_theorem2(in.s, in.sim); }));
  report.bounds.push_back(detail::run_sweep(
      "prop1", instances, seed, 3, [](Rng& rng, std::size_t) { return detail::random_instance(rng, {4, 8}); },
      [](const BoundInstance& in) { return check_prop1(in.s, in.sim); }));
  return report;
}

inline nlohmann::json to_json(const VerifyReport& report) {
  nlohmann::json j;
  j["seed"] = report.seed;
  j["instances"] = report.instances;
  j["all_passed"] = report.all_passed();
  nlohmann::json bounds = nlohmann::json::object();
  for (const auto& b : report.bounds) {
    nlohmann::json entry;
    entry["total"] = b.total;
    entry["passed"] = b.passed;
    entry["rejected_draws"] = b.rejected;
    entry["min_slack"] = std::isfinite(b.min_slack) ? nlohmann::json(b.min_slack) : nlohmann::json(nullptr);
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& [inst, rep] : b.failures) {
      failures.push_back({{"index", inst.index},
                          {"alpha", inst.alpha},
                          {"beta", inst.beta},
                          {"s", detail::matrix_json(inst.s)},
                          {"sim", detail::matrix_json(inst.sim)},
                          {"lhs", rep.lhs},
                          {"rhs", rep.rhs},
                          {"slack", rep.slack},
                          {"conditions_met", rep.conditions_met},
                          {"reason", rep.reason}});
    }
    entry["failures"] = failures;
    bounds[b.name] = entry;
  }
  j["bounds"] = bounds;
  return j;
}

}  // namespace softnce
