#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "softnce/corpus.hpp"
#include "softnce/encoder.hpp"
#include "softnce/error.hpp"
#include "softnce/parallel.hpp"
#include "softnce/similarity.hpp"

namespace softnce {

struct RankedList {
  std::string query_id;
  std::vector<std::pair<std::string, double>> entries;  // (code id, score), descending; ties keep codebase order
};

struct EvalReport {
  double mrr = 0.0;
  std::size_t num_queries = 0;
  std::vector<std::size_t> ranks;  // 1-based rank of each query's true code
};

// Codebase encoded once and reused across queries.
struct EncodedCodebase {
  std::vector<std::string> ids;
  std::vector<Representation> reps;
};

inline EncodedCodebase encode_codebase(const EncoderParams& params, const std::vector<Record>& codebase) {
  EncodedCodebase out;
  out.ids.resize(codebase.size());
  out.reps.resize(codebase.size());
  parallel_for(codebase.size(), [&](std::size_t k) {
    out.ids[k] = codebase[k].id;
    out.reps[k] = encode(params, code_features(codebase[k], params.feature_dim()));
  });
  return out;
}

inline RankedList rank_encoded(const Representation& query, const std::string& query_id, const EncodedCodebase& index,
                               Metric metric) {
  if (index.reps.empty()) throw Error("rank_codebase: codebase is empty");
  std::vector<std::size_t> order(index.reps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> scores(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) scores[k] = similarity(query, index.reps[k], metric);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RankedList out;
  out.query_id = query_id;
  out.entries.reserve(order.size());
  for (std::size_t k : order) out.entries.emplace_back(index.ids[k], scores[k]);
  return out;
}

inline RankedList rank_codebase(const EncoderParams& params, const Record& query, const std::vector<Record>& codebase,
                                Metric metric) {
  if (codebase.empty()) throw Error("rank_codebase: codebase is empty");
  return rank_encoded(encode(params, query_features(query, params.feature_dim())), query.id,
                      encode_codebase(params, codebase), metric);
}

inline double mrr(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw Error("mrr: no ranks given");
  double s = 0.0;
  for (std::size_t r : ranks) {
    if (r < 1) throw Error("mrr: ranks must be >= 1");
    s += 1.0 / static_cast<double>(r);
  }
  return s / static_cast<double>(ranks.size());
}

// Each test record's true code is the codebase entry with the same id.
inline EvalReport evaluate(const EncoderParams& params, const std::vector<Record>& test,
                           const std::vector<Record>& codebase, Metric metric) {
  if (test.empty()) throw Error("evaluate: test set is empty");
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t k = 0; k < codebase.size(); ++k) position.emplace(codebase[k].id, k);
  for (const auto& q : test)
    if (!position.count(q.id)) throw Error("evaluate: true code for query \"" + q.id + "\" is not in the codebase");
  const EncodedCodebase index = encode_codebase(params, codebase);
  EvalReport report;
  report.num_queries = test.size();
  report.ranks.resize(test.size());
  parallel_for(test.size(), [&](std::size_t k) {
    const auto ranked = rank_encoded(encode(params, query_features(test[k], params.feature_dim())), test[k].id,
                                     index, metric);
    for (std::size_t r = 0; r < ranked.entries.size(); ++r)
      if (ranked.entries[r].first == test[k].id) {
        report.ranks[k] = r + 1;
        break;
      }
  });
  report.mrr = mrr(report.ranks);
  return report;
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"mrr", r.mrr}, {"num_queries", r.num_queries}, {"ranks", r.ranks}};
}

}  // namespace softnce
