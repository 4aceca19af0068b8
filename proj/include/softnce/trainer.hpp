#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "softnce/corpus.hpp"
#include "softnce/encoder.hpp"
#include "softnce/estimators.hpp"
#include "softnce/eval.hpp"
#include "softnce/losses.hpp"
#include "softnce/similarity.hpp"

namespace softnce {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1234;
  LossConfig loss;
  EstimatorConfig estimator;
  Metric metric = Metric::dot;
  double sim_scale = 1.0;
  int eval_every = 0;  // 0 disables periodic evaluation
};

inline void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) throw ConfigError("lr must be finite and >= 0");
  if (!(c.sim_scale > 0.0)) throw ConfigError("sim_scale must be > 0");
  if (c.eval_every < 0) throw ConfigError("eval_every must be >= 0");
  validate(c.loss);
  if (needs_estimates(c.loss.kind)) validate(c.estimator);
}

struct OptimizerState {
  std::uint64_t step = 0;
  Matrix m;
  Matrix v;
};

// SGD or bias-corrected Adam. Throws NumericError if the gradient is not
// finite; `where` is appended to the message.
inline void optimizer_step(EncoderParams& params, const ParamGrad& grad, OptimizerState& state,
                           const TrainConfig& config, const std::string& where = {}) {
  require_same_shape(params.embed, grad, "optimizer_step");
  double max_abs = 0.0;
  bool finite = true;
  for (double g : grad.data()) {
    if (!std::isfinite(g)) finite = false;
    else max_abs = std::max(max_abs, std::abs(g));
  }
  if (!finite) {
    std::ostringstream msg;
    msg << "non-finite gradient" << (where.empty() ? "" : " at " + where) << " (max finite |g| = " << max_abs << ")";
    throw NumericError(msg.str());
  }
  ++state.step;
  auto& theta = params.embed.data();
  const auto& g = grad.data();
  if (config.optimizer == OptimizerKind::sgd) {
    for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= config.lr * g[k];
    return;
  }
  if (state.m.rows() != grad.rows() || state.m.cols() != grad.cols()) {
    state.m = Matrix(grad.rows(), grad.cols());
    state.v = Matrix(grad.rows(), grad.cols());
  }
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  auto& m = state.m.data();
  auto& v = state.v.data();
  for (std::size_t k = 0; k < theta.size(); ++k) {
    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
    theta[k] -= config.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config.adam_eps);
  }
}

struct TrainReport {
  std::vector<double> epoch_loss;                 // mean batch loss per epoch
  std::vector<std::pair<int, double>> eval_mrr;   // (1-based epoch, MRR)
  std::string checkpoint_path;
  double wall_seconds = 0.0;                      // not serialized, so reports stay reproducible
};

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& [epoch, value] : r.eval_mrr) evals.push_back({{"epoch", epoch}, {"mrr", value}});
  return {{"epoch_loss", r.epoch_loss}, {"eval", evals}, {"checkpoint", r.checkpoint_path}};
}

// Held-out queries and the codebase they are ranked against. When absent,
// periodic evaluation ranks the training queries against the training codes.
struct EvalSet {
  const std::vector<Record>* queries = nullptr;
  const std::vector<Record>* codebase = nullptr;
};

struct BatchOutcome {
  double loss = 0.0;
  ParamGrad grad;
};

// Forward and backward pass for one batch. Query and code features share
// the same encoder parameters.
inline BatchOutcome batch_gradient(const EncoderParams& params, const Batch& batch,
                                   const std::vector<FeatureVector>& query_feats,
                                   const std::vector<FeatureVector>& code_feats, const TrainConfig& config,
                                   const ExternalScoreTable* table) {
  const std::size_t n = batch.size();
  std::vector<FeatureVector> qf, cf;
  std::vector<Representation> qr, cr;
  qf.reserve(n), cf.reserve(n), qr.reserve(n), cr.reserve(n);
  for (std::size_t k : batch.source_index) {
    qf.push_back(query_feats[k]);
    cf.push_back(code_feats[k]);
    qr.push_back(encode(params, qf.back()));
    cr.push_back(encode(params, cf.back()));
  }
  const SimMatrix s = batch_similarity(qr, cr, config.metric, config.sim_scale);
  std::optional<SimScores> sim;
  std::optional<WeightMatrix> weights;
  if (needs_estimates(config.loss.kind)) {
    sim = estimate_sim_scores(config.estimator, batch, table);
    if (config.loss.kind == LossKind::soft)
      weights = compute_weights(*sim, config.estimator.alpha, config.estimator.beta, config.estimator.clamp_floor);
  }
  const LossResult loss = compute_loss(config.loss, s, sim ? &*sim : nullptr, weights ? &*weights : nullptr);
  const SimilarityGrads g = similarity_backward(qr, cr, config.metric, config.sim_scale, loss.grad);
  BatchOutcome out{loss.value, ParamGrad(params.feature_dim(), params.embed_dim())};
  accumulate_encoder_grad(params, qf, g.queries, out.grad);
  accumulate_encoder_grad(params, cf, g.codes, out.grad);
  return out;
}

struct TrainResult {
  EncoderParams params;
  TrainReport report;
};

// In-batch-negative training. Epoch e shuffles with seed XOR e; estimator
// scores are recomputed per batch from batch content only.
inline TrainResult train(const std::vector<Record>& records, const TrainConfig& config, EncoderParams params,
                         const ExternalScoreTable* table = nullptr, EvalSet eval = {}) {
  validate(config);
  if (records.size() < config.batch_size)
    throw ConfigError("train: " + std::to_string(records.size()) + " records is fewer than batch size " +
                      std::to_string(config.batch_size));
  if (needs_estimates(config.loss.kind) && config.estimator.kind == EstimatorKind::external && !table)
    throw ConfigError("train: external estimator selected but no score table was provided");
  const auto started = std::chrono::steady_clock::now();
  const std::size_t dim = params.feature_dim();
  std::vector<FeatureVector> query_feats, code_feats;
  query_feats.reserve(records.size());
  code_feats.reserve(records.size());
  for (const auto& r : records) {
    query_feats.push_back(query_features(r, dim));
    code_feats.push_back(code_features(r, dim));
  }

  TrainResult result{std::move(params), {}};
  OptimizerState state;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = make_batches(records, config.batch_size, config.seed ^ static_cast<std::uint64_t>(epoch), true);
    double total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const std::string where = "epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1);
      BatchOutcome out;
      try {
        out = batch_gradient(result.params, batches[b], query_feats, code_feats, config, table);
      } catch (const Error& e) {
        throw Error(where + ": " + e.what());
      }
      total += out.loss;
      optimizer_step(result.params, out.grad, state, config, where);
    }
    result.report.epoch_loss.push_back(total / static_cast<double>(batches.size()));
    if (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0) {
      const auto& queries = eval.queries ? *eval.queries : records;
      const auto& codebase = eval.codebase ? *eval.codebase : records;
      result.report.eval_mrr.emplace_back(epoch + 1, evaluate(result.params, queries, codebase, config.metric).mrr);
    }
  }
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace softnce
