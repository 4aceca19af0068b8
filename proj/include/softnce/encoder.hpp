#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "softnce/corpus.hpp"
#include "softnce/error.hpp"
#include "softnce/matrix.hpp"
#include "softnce/rng.hpp"

namespace softnce {

// Siamese bag-of-subtokens encoder: one D x d embedding table shared by
// queries and codes. A representation is the count-weighted sum of the rows
// selected by the feature vector, optionally L2-normalized.
struct EncoderParams {
  Matrix embed;  // D x d
  bool normalize_output = false;
  std::uint64_t init_seed = 0;
  double init_scale = 0.0;

  std::size_t feature_dim() const { return embed.rows(); }
  std::size_t embed_dim() const { return embed.cols(); }
  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

using Representation = std::vector<double>;
using ParamGrad = Matrix;

inline EncoderParams init_params(std::size_t feature_dim, std::size_t embed_dim, std::uint64_t seed, double scale,
                                 bool normalize_output = false) {
  if (feature_dim < 1 || embed_dim < 1) throw ConfigError("init_params: dimensions must be >= 1");
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ConfigError("init_params: scale must be finite and >= 0");
  EncoderParams p;
  p.embed = Matrix(feature_dim, embed_dim);
  p.normalize_output = normalize_output;
  p.init_seed = seed;
  p.init_scale = scale;
  Rng rng(seed);
  for (double& v : p.embed.data()) v = rng.uniform(-scale, scale);
  return p;
}

namespace detail {

inline void check_feature(const EncoderParams& params, const FeatureVector& f) {
  if (f.dim != params.feature_dim())
    throw DimensionError("feature dimension " + std::to_string(f.dim) + " does not match encoder dimension " +
                         std::to_string(params.feature_dim()));
}

// Un-normalized embedding sum.
inline Representation embed_sum(const EncoderParams& params, const FeatureVector& f) {
  check_feature(params, f);
  Representation x(params.embed_dim(), 0.0);
  for (const auto& [k, v] : f.entries) {
    const auto row = params.embed.row(k);
    for (std::size_t c = 0; c < x.size(); ++c) x[c] += v * row[c];
  }
  return x;
}

}  // namespace detail

inline Representation encode(const EncoderParams& params, const FeatureVector& f) {
  Representation x = detail::embed_sum(params, f);
  if (params.normalize_output && !f.entries.empty()) {
    const double n = l2_norm(x);
    if (n > 0.0)
      for (double& v : x) v /= n;
  }
  return x;
}

// Accumulates d(sum_b upstream_b . encode(feature_b)) / d(embed) into `grad`.
// Features are visited in list order so the floating-point reduction order is fixed.
inline void accumulate_encoder_grad(const EncoderParams& params, const std::vector<FeatureVector>& features,
                                    const std::vector<Representation>& upstream, ParamGrad& grad) {
  if (features.size() != upstream.size()) throw DimensionError("encoder backward: features/upstream length mismatch");
  require_same_shape(grad, params.embed, "encoder backward");
  const std::size_t d = params.embed_dim();
  std::vector<double> gx(d);
  for (std::size_t b = 0; b < features.size(); ++b) {
    const auto& f = features[b];
    const auto& g = upstream[b];
    if (g.size() != d) throw DimensionError("encoder backward: upstream vector has wrong length");
    gx.assign(g.begin(), g.end());
    if (params.normalize_output && !f.entries.empty()) {
      const Representation x = detail::embed_sum(params, f);
      const double n = l2_norm(x);
      if (n > 0.0) {
        // (I - u u^T) g / |x|
        double ug = 0.0;
        for (std::size_t c = 0; c < d; ++c) ug += x[c] / n * g[c];
        for (std::size_t c = 0; c < d; ++c) gx[c] = (g[c] - ug * x[c] / n) / n;
      }
    } else {
      detail::check_feature(params, f);
    }
    for (const auto& [k, v] : f.entries) {
      auto row = grad.row(k);
      for (std::size_t c = 0; c < d; ++c) row[c] += v * gx[c];
    }
  }
}

inline ParamGrad encode_batch_with_grads(const EncoderParams& params, const std::vector<FeatureVector>& features,
                                         const std::vector<Representation>& upstream) {
  ParamGrad grad(params.feature_dim(), params.embed_dim());
  accumulate_encoder_grad(params, features, upstream, grad);
  return grad;
}

inline constexpr const char* kCheckpointHeader = "softnce-encoder-checkpoint v1";

// Text checkpoint; values use %.17g so a save/load round trip is exact.
inline void save_checkpoint(const EncoderParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint: " + path);
  out << kCheckpointHeader << '\n';
  out << "feature_dim " << params.feature_dim() << '\n';
  out << "embed_dim " << params.embed_dim() << '\n';
  out << "normalize_output " << (params.normalize_output ? 1 : 0) << '\n';
  out << "init_seed " << params.init_seed << '\n';
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", params.init_scale);
  out << "init_scale " << buf << '\n';
  for (std::size_t r = 0; r < params.feature_dim(); ++r) {
    const auto row = params.embed.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", row[c]);
      out << (c ? " " : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("failed writing checkpoint: " + path);
}

inline EncoderParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint: " + path);
  std::string header;
  std::getline(in, header);
  if (header != kCheckpointHeader) throw Error("unrecognized checkpoint header in " + path + ": " + header);
  auto expect_key = [&](const char* key) {
    std::string k;
    in >> k;
    if (k != key) throw Error(std::string("checkpoint: expected key ") + key + ", found " + k);
  };
  std::size_t feature_dim = 0, embed_dim = 0;
  int normalize = 0;
  EncoderParams p;
  std::string scale_text;
  expect_key("feature_dim");
  in >> feature_dim;
  expect_key("embed_dim");
  in >> embed_dim;
  expect_key("normalize_output");
  in >> normalize;
  expect_key("init_seed");
  in >> p.init_seed;
  expect_key("init_scale");
  in >> scale_text;
  if (!in || feature_dim == 0 || embed_dim == 0) throw Error("checkpoint: malformed header fields in " + path);
  p.init_scale = std::strtod(scale_text.c_str(), nullptr);
  p.normalize_output = normalize != 0;
  p.embed = Matrix(feature_dim, embed_dim);
  std::string tok;
  for (double& v : p.embed.data()) {
    if (!(in >> tok)) throw Error("checkpoint: truncated matrix in " + path);
    v = std::strtod(tok.c_str(), nullptr);
  }
  return p;
}

}  // namespace softnce
