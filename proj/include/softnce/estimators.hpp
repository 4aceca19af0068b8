#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "softnce/corpus.hpp"
#include "softnce/error.hpp"
#include "softnce/matrix.hpp"

namespace softnce {

// Unnormalized similarity estimates; the diagonal is ignored.
using RawScores = Matrix;
// Row-stochastic over j != i, diagonal 0.
using SimScores = Matrix;
// Off-diagonal weights, diagonal 1.
using WeightMatrix = Matrix;

enum class EstimatorKind { bm25, lexical, external, uniform };

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::uniform;
  double t = 1.0;
  double k1 = 1.2;
  double b = 0.75;
  double alpha = 1.0;
  double beta = 1.0;
  double clamp_floor = 0.1;
};

// Per-estimator (alpha, beta, t) defaults. BM25 gets a larger alpha because
// in-batch BM25 scores for negatives are close together; score-file
// estimators follow the neural-estimator setting. The lexical stand-in uses
// the same setting as score files.
inline EstimatorConfig default_estimator_config(EstimatorKind kind) {
  EstimatorConfig c;
  c.kind = kind;
  switch (kind) {
    case EstimatorKind::bm25:
      c.alpha = 1.5, c.beta = 0.5, c.t = 1.0;
      break;
    case EstimatorKind::lexical:
    case EstimatorKind::external:
      c.alpha = 1.3, c.beta = 0.7, c.t = 0.1;
      break;
    case EstimatorKind::uniform:
      c.alpha = 1.0, c.beta = 1.0, c.t = 1.0;
      break;
  }
  return c;
}

inline void validate(const EstimatorConfig& c) {
  if (!(c.t > 0.0)) throw ConfigError("estimator: temperature t must be > 0");
  if (!(c.alpha > 0.0) || !(c.beta > 0.0)) throw ConfigError("estimator: alpha and beta must be > 0");
  if (!(c.b >= 0.0 && c.b <= 1.0)) throw ConfigError("estimator: BM25 b must be in [0,1]");
  if (!(c.k1 >= 0.0)) throw ConfigError("estimator: BM25 k1 must be >= 0");
  if (!std::isfinite(c.clamp_floor)) throw ConfigError("estimator: clamp_floor must be finite");
}

// Okapi BM25 of each query against each in-batch code. The document
// collection is exactly the batch's codes: document frequencies and the
// average length come from the batch alone. Query terms are taken as a set.
inline RawScores estimate_bm25(const Batch& batch, double k1 = 1.2, double b = 0.75) {
  const std::size_t n = batch.size();
  if (n < 2) throw DimensionError("estimate_bm25: batch size must be >= 2");
  std::vector<TokenBag> docs;
  docs.reserve(n);
  double total_len = 0.0;
  std::map<std::string, int> doc_freq;
  for (const auto& r : batch.records) {
    docs.push_back(tokenize(r.code, TextMode::code));
    total_len += static_cast<double>(bag_size(docs.back()));
    for (const auto& [tok, c] : docs.back()) ++doc_freq[tok];
  }
  const double avgdl = total_len / static_cast<double>(n);
  RawScores r(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto terms = token_set(tokenize(batch.records[i].query, TextMode::query));
    for (std::size_t j = 0; j < n; ++j) {
      const double dl = static_cast<double>(bag_size(docs[j]));
      const double norm = avgdl > 0.0 ? k1 * (1.0 - b + b * dl / avgdl) : k1;
      double score = 0.0;
      for (const auto& term : terms) {
        auto tf_it = docs[j].find(term);
        if (tf_it == docs[j].end()) continue;
        const double nt = doc_freq[term];
        const double idf = std::log((static_cast<double>(n) - nt + 0.5) / (nt + 0.5) + 1.0);
        const double tf = tf_it->second;
        score += idf * tf * (k1 + 1.0) / (tf + norm);
      }
      r(i, j) = score;
    }
  }
  return r;
}

inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : a) inter += b.count(t);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

// Jaccard overlap of query subtokens with code subtokens.
inline RawScores estimate_lexical(const Batch& batch) {
  const std::size_t n = batch.size();
  if (n < 2) throw DimensionError("estimate_lexical: batch size must be >= 2");
  std::vector<std::set<std::string>> qs, cs;
  for (const auto& r : batch.records) {
    qs.push_back(token_set(tokenize(r.query, TextMode::query)));
    cs.push_back(token_set(tokenize(r.code, TextMode::code)));
  }
  RawScores r(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) r(i, j) = jaccard(qs[i], cs[j]);
  return r;
}

// (query id, code id) -> score, as produced by any external model.
class ExternalScoreTable {
 public:
  void set(const std::string& qid, const std::string& cid, double score) { scores_[key(qid, cid)] = score; }

  const double* find(const std::string& qid, const std::string& cid) const {
    auto it = scores_.find(key(qid, cid));
    return it == scores_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return scores_.size(); }

  // JSONL lines {"qid": ..., "cid": ..., "score": ...}.
  static ExternalScoreTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open score file: " + path);
    ExternalScoreTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw DatasetError(path + " line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
      }
      if (!j.is_object() || !j.contains("qid") || !j.contains("cid") || !j.contains("score") ||
          !j["qid"].is_string() || !j["cid"].is_string())
        throw DatasetError(path + " line " + std::to_string(line_no) + ": expected {\"qid\", \"cid\", \"score\"}");
      double score = std::numeric_limits<double>::quiet_NaN();
      if (j["score"].is_number()) score = j["score"].get<double>();
      if (!std::isfinite(score))
        throw DatasetError(path + " line " + std::to_string(line_no) + ": non-finite score");
      table.set(j["qid"].get<std::string>(), j["cid"].get<std::string>(), score);
    }
    return table;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot write score file: " + path);
    std::vector<std::pair<std::string, double>> rows(scores_.begin(), scores_.end());
    std::sort(rows.begin(), rows.end());
    for (const auto& [k, v] : rows) {
      const auto sep = k.find('\x1f');
      nlohmann::json j{{"qid", k.substr(0, sep)}, {"cid", k.substr(sep + 1)}, {"score", v}};
      out << j.dump() << '\n';
    }
  }

 private:
  static std::string key(const std::string& qid, const std::string& cid) { return qid + '\x1f' + cid; }
  std::unordered_map<std::string, double> scores_;
};

inline RawScores external_scores(const ExternalScoreTable& table, const Batch& batch) {
  const std::size_t n = batch.size();
  RawScores r(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double* s = table.find(batch.records[i].id, batch.records[j].id);
      if (!s)
        throw DatasetError("external scores: missing pair (" + batch.records[i].id + ", " + batch.records[j].id + ")");
      r(i, j) = *s;
    }
  return r;
}

inline RawScores load_external_scores(const std::string& path, const Batch& batch) {
  return external_scores(ExternalScoreTable::load(path), batch);
}

// Row-wise softmax with temperature over j != i, stabilized by the row max.
inline SimScores normalize_scores(const RawScores& raw, double t) {
  require_square(raw, "normalize_scores");
  if (!(t > 0.0)) throw ConfigError("normalize_scores: temperature must be > 0");
  const std::size_t n = raw.rows();
  SimScores p(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) mx = std::max(mx, raw(i, j) / t);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      p(i, j) = std::exp(raw(i, j) / t - mx);
      z += p(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) p(i, j) = j == i ? 0.0 : p(i, j) / z;
  }
  return p;
}

inline constexpr double kWeightDenominatorEpsilon = 1e-6;

// Soft-InfoNCE weights before clamping:
//   w_ij = (beta - alpha*sim_ij) / (beta - alpha/(N-1) * sum_{k!=i} sim_ik),  w_ii = 1
// Throws ConfigError if the normalizer falls below kWeightDenominatorEpsilon.
inline WeightMatrix unclamped_weights(const SimScores& sim, double alpha, double beta) {
  require_square(sim, "weights");
  const std::size_t n = sim.rows();
  if (n < 2) throw DimensionError("weights: batch size must be >= 2");
  WeightMatrix w(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) row_sum += sim(i, j);
    const double denom = beta - alpha / static_cast<double>(n - 1) * row_sum;
    if (!(denom >= kWeightDenominatorEpsilon)) {
      std::ostringstream msg;
      msg << "weight normalizer beta - alpha/(N-1)*sum(sim) = " << denom << " is below " << kWeightDenominatorEpsilon
          << " for N=" << n << ", alpha=" << alpha << ", beta=" << beta << " (needs N-1 > alpha/beta)";
      throw ConfigError(msg.str());
    }
    for (std::size_t j = 0; j < n; ++j) w(i, j) = j == i ? 1.0 : (beta - alpha * sim(i, j)) / denom;
  }
  return w;
}

// Clamped weights; clamped rows are deliberately not renormalized.
inline WeightMatrix compute_weights(const SimScores& sim, double alpha, double beta, double clamp_floor = 0.1) {
  WeightMatrix w = unclamped_weights(sim, alpha, beta);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      if (i != j) w(i, j) = std::max(clamp_floor, w(i, j));
  return w;
}

// Negative-sampling distribution implied by the weights at alpha = beta = 1:
// q_ij = (1 - sim_ij) / (N - 2) for j != i.
inline Matrix implied_sampling_distribution(const SimScores& sim) {
  require_square(sim, "implied_sampling_distribution");
  const std::size_t n = sim.rows();
  if (n < 3) throw DimensionError("implied_sampling_distribution: batch size must be >= 3");
  Matrix q(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) q(i, j) = (1.0 - sim(i, j)) / static_cast<double>(n - 2);
  return q;
}

// Raw in-batch estimates for the configured estimator. `table` is required
// for the external kind.
inline RawScores estimate(const EstimatorConfig& config, const Batch& batch, const ExternalScoreTable* table) {
  switch (config.kind) {
    case EstimatorKind::bm25:
      return estimate_bm25(batch, config.k1, config.b);
    case EstimatorKind::lexical:
      return estimate_lexical(batch);
    case EstimatorKind::external:
      if (!table) throw ConfigError("external estimator requires a score table");
      return external_scores(*table, batch);
    case EstimatorKind::uniform:
      return RawScores(batch.size(), batch.size());
  }
  return {};
}

inline SimScores estimate_sim_scores(const EstimatorConfig& config, const Batch& batch,
                                     const ExternalScoreTable* table) {
  return normalize_scores(estimate(config, batch, table), config.t);
}

}  // namespace softnce
