#pragma once

#include <string>
#include <vector>

#include "softnce/encoder.hpp"
#include "softnce/error.hpp"
#include "softnce/matrix.hpp"

namespace softnce {

enum class Metric { dot, cosine };

// s(i, j) = scale * metric(q_i, c_j)
using SimMatrix = Matrix;

inline double similarity(const Representation& q, const Representation& c, Metric metric) {
  const double d = dot(q, c);
  if (metric == Metric::dot) return d;
  const double nq = l2_norm(q);
  const double nc = l2_norm(c);
  if (nq == 0.0 || nc == 0.0) return 0.0;
  return d / (nq * nc);
}

inline SimMatrix batch_similarity(const std::vector<Representation>& queries, const std::vector<Representation>& codes,
                                  Metric metric, double scale = 1.0) {
  if (queries.size() != codes.size())
    throw DimensionError("batch_similarity: " + std::to_string(queries.size()) + " queries vs " +
                         std::to_string(codes.size()) + " codes");
  if (queries.size() < 2) throw DimensionError("batch_similarity: batch size must be >= 2");
  if (!(scale > 0.0)) throw ConfigError("batch_similarity: scale must be > 0");
  const std::size_t n = queries.size();
  const std::size_t d = queries.front().size();
  for (std::size_t k = 0; k < n; ++k)
    if (queries[k].size() != d || codes[k].size() != d) throw DimensionError("batch_similarity: dimension mismatch");
  SimMatrix s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s(i, j) = scale * similarity(queries[i], codes[j], metric);
  return s;
}

struct SimilarityGrads {
  std::vector<Representation> queries;
  std::vector<Representation> codes;
};

// Chains dL/dS back to the query and code representations.
inline SimilarityGrads similarity_backward(const std::vector<Representation>& queries,
                                           const std::vector<Representation>& codes, Metric metric, double scale,
                                           const Matrix& grad_s) {
  const std::size_t n = queries.size();
  if (codes.size() != n || grad_s.rows() != n || grad_s.cols() != n)
    throw DimensionError("similarity_backward: shape mismatch");
  const std::size_t d = n ? queries.front().size() : 0;
  SimilarityGrads g{std::vector<Representation>(n, Representation(d, 0.0)),
                    std::vector<Representation>(n, Representation(d, 0.0))};
  if (metric == Metric::dot) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double w = scale * grad_s(i, j);
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) {
          g.queries[i][c] += w * codes[j][c];
          g.codes[j][c] += w * queries[i][c];
        }
      }
    return g;
  }
  std::vector<double> qn(n), cn(n);
  for (std::size_t k = 0; k < n; ++k) {
    qn[k] = l2_norm(queries[k]);
    cn[k] = l2_norm(codes[k]);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (qn[i] == 0.0 || cn[j] == 0.0) continue;  // cosine with a zero vector is the constant 0
      const double w = scale * grad_s(i, j);
      if (w == 0.0) continue;
      const double cosv = dot(queries[i], codes[j]) / (qn[i] * cn[j]);
      for (std::size_t c = 0; c < d; ++c) {
        g.queries[i][c] += w * (codes[j][c] / (qn[i] * cn[j]) - cosv * queries[i][c] / (qn[i] * qn[i]));
        g.codes[j][c] += w * (queries[i][c] / (qn[i] * cn[j]) - cosv * codes[j][c] / (cn[j] * cn[j]));
      }
    }
  return g;
}

}  // namespace softnce
