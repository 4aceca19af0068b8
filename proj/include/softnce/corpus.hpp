#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "softnce/error.hpp"
#include "softnce/rng.hpp"

namespace softnce {

// One query-code pair. `cluster` and `dup_of` are generator metadata and are
// empty for real corpora.
struct Record {
  std::string id;
  std::string query;
  std::string code;
  std::string lang;
  std::string dup_of;
  std::optional<int> cluster;

  friend bool operator==(const Record&, const Record&) = default;
};

// Subtoken multiset. Ordered so iteration (and therefore hashing into
// features) is deterministic.
using TokenBag = std::map<std::string, int>;

// Hashed sparse count vector. Entries are sorted by index, values > 0.
struct FeatureVector {
  std::size_t dim = 0;
  std::vector<std::pair<std::uint32_t, double>> entries;

  double mass() const {
    double s = 0.0;
    for (const auto& [k, v] : entries) s += v;
    return s;
  }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct Batch {
  std::vector<Record> records;
  std::vector<std::size_t> source_index;  // position of each record in the input list

  std::size_t size() const { return records.size(); }
};

enum class TextMode { code, query };

inline constexpr std::size_t kDefaultFeatureDim = std::size_t{1} << 15;

namespace detail {

inline bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
inline bool is_upper(char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; }
inline bool is_lower(char c) { return std::islower(static_cast<unsigned char>(c)) != 0; }
inline bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Splits an alphanumeric run at camelCase boundaries:
//   getFileName -> get File Name, HTTPServer -> HTTP Server, utf8Decode -> utf8 Decode
inline void split_camel(std::string_view word, std::vector<std::string_view>& out) {
  std::size_t start = 0;
  for (std::size_t k = 1; k < word.size(); ++k) {
    const char prev = word[k - 1];
    const char cur = word[k];
    const bool lower_to_upper = (is_lower(prev) || is_digit(prev)) && is_upper(cur);
    const bool acronym_end = is_upper(prev) && is_upper(cur) && k + 1 < word.size() && is_lower(word[k + 1]);
    if (lower_to_upper || acronym_end) {
      out.push_back(word.substr(start, k - start));
      start = k;
    }
  }
  out.push_back(word.substr(start));
}

}  // namespace detail

// Splits on non-alphanumerics (so snake_case is split too), additionally on
// camelCase boundaries in code mode, and lowercases everything.
inline TokenBag tokenize(std::string_view text, TextMode mode) {
  TokenBag bag;
  std::vector<std::string_view> pieces;
  std::size_t k = 0;
  while (k < text.size()) {
    while (k < text.size() && !detail::is_alnum(text[k])) ++k;
    const std::size_t start = k;
    while (k < text.size() && detail::is_alnum(text[k])) ++k;
    if (k == start) continue;
    const auto word = text.substr(start, k - start);
    pieces.clear();
    if (mode == TextMode::code) {
      detail::split_camel(word, pieces);
    } else {
      pieces.push_back(word);
    }
    for (auto p : pieces)
      if (!p.empty()) ++bag[detail::lower(p)];
  }
  return bag;
}

inline std::set<std::string> token_set(const TokenBag& bag) {
  std::set<std::string> s;
  for (const auto& [tok, n] : bag) s.insert(tok);
  return s;
}

inline std::size_t bag_size(const TokenBag& bag) {
  std::size_t n = 0;
  for (const auto& [tok, c] : bag) n += static_cast<std::size_t>(c);
  return n;
}

// 64-bit FNV-1a over the token's bytes. Byte-oriented, so the value does not
// depend on platform endianness or std::hash.
inline std::uint64_t stable_hash(std::string_view token) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : token) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline FeatureVector featurize(const TokenBag& bag, std::size_t dim) {
  if (dim == 0) throw ConfigError("featurize: dimension must be >= 1");
  std::map<std::uint32_t, double> acc;
  for (const auto& [tok, n] : bag) acc[static_cast<std::uint32_t>(stable_hash(tok) % dim)] += n;
  FeatureVector fv;
  fv.dim = dim;
  fv.entries.assign(acc.begin(), acc.end());
  return fv;
}

inline FeatureVector query_features(const Record& r, std::size_t dim) {
  return featurize(tokenize(r.query, TextMode::query), dim);
}

inline FeatureVector code_features(const Record& r, std::size_t dim) {
  return featurize(tokenize(r.code, TextMode::code), dim);
}

namespace detail {

inline bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; });
}

inline std::string required_string(const nlohmann::json& obj, const char* key, std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string())
    throw DatasetError("line " + std::to_string(line_no) + ": missing or non-string key \"" + key + "\"");
  return it->get<std::string>();
}

}  // namespace detail

inline Record parse_record(std::string_view line, std::size_t line_no) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DatasetError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
  }
  if (!obj.is_object()) throw DatasetError("line " + std::to_string(line_no) + ": expected a JSON object");
  Record r;
  r.id = detail::required_string(obj, "id", line_no);
  r.query = detail::required_string(obj, "query", line_no);
  r.code = detail::required_string(obj, "code", line_no);
  if (r.id.empty()) throw DatasetError("line " + std::to_string(line_no) + ": empty id");
  if (detail::blank(r.query)) throw DatasetError("line " + std::to_string(line_no) + ": empty query");
  if (detail::blank(r.code)) throw DatasetError("line " + std::to_string(line_no) + ": empty code");
  if (auto it = obj.find("lang"); it != obj.end() && it->is_string()) r.lang = it->get<std::string>();
  if (auto it = obj.find("dup_of"); it != obj.end() && it->is_string()) r.dup_of = it->get<std::string>();
  if (auto it = obj.find("cluster"); it != obj.end() && it->is_number_integer()) r.cluster = it->get<int>();
  return r;
}

// JSONL: one {"id","query","code"[,"lang","dup_of","cluster"]} object per line.
// Blank lines are skipped but still counted for line numbers.
inline std::vector<Record> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset file: " + path);
  std::vector<Record> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    Record r = parse_record(line, line_no);
    if (!seen.insert(r.id).second)
      throw DatasetError("line " + std::to_string(line_no) + ": duplicate id \"" + r.id + "\"");
    records.push_back(std::move(r));
  }
  return records;
}

inline nlohmann::json to_json(const Record& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["query"] = r.query;
  j["code"] = r.code;
  if (!r.lang.empty()) j["lang"] = r.lang;
  if (!r.dup_of.empty()) j["dup_of"] = r.dup_of;
  if (r.cluster) j["cluster"] = *r.cluster;
  return j;
}

inline void write_dataset(const std::vector<Record>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write dataset file: " + path);
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

// Consecutive batches of exactly `batch_size`; the remainder is dropped so that
// every query sees exactly batch_size-1 in-batch negatives.
inline std::vector<Batch> make_batches(const std::vector<Record>& records, std::size_t batch_size,
                                       std::uint64_t seed, bool shuffle) {
  if (batch_size < 2) throw ConfigError("make_batches: batch size must be >= 2");
  if (records.size() < batch_size) {
    std::cerr << "warning: " << records.size() << " records is fewer than batch size " << batch_size
              << "; no batches produced\n";
    return {};
  }
  std::vector<std::size_t> order(records.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order);
  }
  std::vector<Batch> batches;
  const std::size_t count = records.size() / batch_size;
  batches.reserve(count);
  for (std::size_t b = 0; b < count; ++b) {
    Batch batch;
    for (std::size_t k = b * batch_size; k < (b + 1) * batch_size; ++k) {
      batch.records.push_back(records[order[k]]);
      batch.source_index.push_back(order[k]);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace softnce
