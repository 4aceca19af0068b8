#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "softnce/corpus.hpp"
#include "softnce/estimators.hpp"
#include "softnce/rng.hpp"

namespace softnce {

namespace detail {

struct TopicSpec {
  std::vector<std::string> query_verbs;   // natural-language phrasings of the operation
  std::string code_verb;                  // identifier stem used in code
  std::vector<std::string> api;           // calls only this topic uses
  std::vector<std::string> qualifiers;    // natural-language qualifier, paired with...
  std::vector<std::string> qualifier_ids; // ...its identifier form
};

inline const std::vector<TopicSpec>& topics() {
  static const std::vector<TopicSpec> kTopics = {
      {{"sort", "order", "arrange"}, "sort", {"sorted", "cmp", "swap", "pivot"},
       {"by date", "by name", "descending", "in place"}, {"ByDate", "ByName", "Desc", "InPlace"}},
      {{"read", "load", "open"}, "read", {"fopen", "readline", "buffer", "fclose"},
       {"from disk", "line by line", "as bytes", "lazily"}, {"FromDisk", "Lines", "Bytes", "Lazy"}},
      {{"parse", "decode", "deserialize"}, "parse", {"tokens", "lexer", "ast", "scanner"},
       {"from json", "from xml", "strictly", "with defaults"}, {"Json", "Xml", "Strict", "Defaults"}},
      {{"send", "post", "upload"}, "send", {"socket", "http", "request", "headers"},
       {"over https", "asynchronously", "with retry", "in chunks"}, {"Https", "Async", "Retry", "Chunked"}},
      {{"hash", "digest", "fingerprint"}, "hash", {"sha256", "hexdigest", "salt", "hmac"},
       {"securely", "with salt", "as hex", "incrementally"}, {"Secure", "Salted", "Hex", "Incremental"}},
      {{"validate", "check", "verify"}, "validate", {"schema", "regex", "assert", "raise"},
       {"against schema", "with regex", "strictly", "for nulls"}, {"Schema", "Regex", "Strict", "Nulls"}},
      {{"cache", "memoize", "store"}, "cache", {"lru", "ttl", "evict", "lookup"},
       {"in memory", "with expiry", "per thread", "on disk"}, {"Memory", "Expiry", "Thread", "Disk"}},
      {{"merge", "combine", "join"}, "merge", {"zip", "concat", "dedupe", "union"},
       {"by key", "without duplicates", "recursively", "in order"}, {"ByKey", "Unique", "Recursive", "Ordered"}},
      {{"render", "draw", "display"}, "render", {"canvas", "pixel", "template", "viewport"},
       {"as html", "to png", "with colors", "as table"}, {"Html", "Png", "Color", "Table"}},
      {{"compress", "zip", "pack"}, "compress", {"gzip", "deflate", "zlib", "stream"},
       {"with gzip", "in memory", "to archive", "fast"}, {"Gzip", "Mem", "Archive", "Fast"}},
      {{"schedule", "queue", "enqueue"}, "schedule", {"cron", "worker", "dispatch", "timer"},
       {"every hour", "with priority", "in background", "once"}, {"Hourly", "Priority", "Background", "Once"}},
      {{"encrypt", "cipher", "seal"}, "encrypt", {"aes", "nonce", "iv", "cipherkey"},
       {"with aes", "with password", "in place", "per block"}, {"Aes", "Password", "Inplace", "Block"}},
      {{"format", "stringify", "print"}, "format", {"sprintf", "pad", "locale", "printf"},
       {"as currency", "with padding", "as percent", "for logs"}, {"Currency", "Padded", "Percent", "Log"}},
      {{"filter", "select", "remove"}, "filter", {"predicate", "keep", "drop", "mask"},
       {"by status", "by owner", "if empty", "by age"}, {"ByStatus", "ByOwner", "Empty", "ByAge"}},
      {{"convert", "transform", "cast"}, "convert", {"coerce", "mapper", "unit", "scale"},
       {"to utc", "to int", "to metric", "to upper"}, {"Utc", "Int", "Metric", "Upper"}},
      {{"count", "tally", "aggregate"}, "count", {"counter", "histogram", "groupby", "sum"},
       {"per day", "by type", "distinct", "total"}, {"Daily", "ByType", "Distinct", "Total"}},
  };
  return kTopics;
}

inline const std::vector<std::string>& entities() {
  static const std::vector<std::string> kEntities = {
      "user",    "order",   "invoice", "file",     "record",  "node",    "event",  "product",
      "account", "message", "ticket",  "session",  "payment", "comment", "image",  "report",
      "config",  "token",   "device",  "customer", "article", "task",    "job",    "address",
      "profile", "photo",   "note",    "contract", "vendor",  "review",  "course", "booking",
      "track",   "song",    "city",    "employee", "asset",   "metric",  "log",    "policy"};
  return kEntities;
}

// Local variable names shared by every topic; duplicate edits draw from here.
inline const std::vector<std::string>& locals() {
  static const std::vector<std::string> kLocals = {"tmp", "val", "res", "item", "buf", "acc", "out", "cur",
                                                   "elem", "data", "obj", "ret"};
  return kLocals;
}

inline const std::vector<std::string>& query_templates() {
  static const std::vector<std::string> kTemplates = {
      "{verb} {entity} {qual}", "how to {verb} a {entity} {qual}", "{verb} the {entity} list {qual}",
      "function to {verb} {entity} {qual}", "{verb} {entity} objects {qual}", "best way to {verb} {entity} {qual}"};
  return kTemplates;
}

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
  return s;
}

inline std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

struct Intent {
  std::size_t topic;
  std::size_t entity;
  std::size_t qualifier;
  auto operator<=>(const Intent&) const = default;
};

inline std::string make_query(const Intent& in, Rng& rng) {
  const auto& t = topics()[in.topic];
  std::string q = rng.pick(query_templates());
  q = replace_all(q, "{verb}", rng.pick(t.query_verbs));
  q = replace_all(q, "{entity}", entities()[in.entity]);
  q = replace_all(q, "{qual}", t.qualifiers[in.qualifier]);
  return q;
}

inline std::string make_code(const Intent& in, const std::string& local) {
  const auto& t = topics()[in.topic];
  const auto& e = entities()[in.entity];
  std::string code = "def " + t.code_verb + "_" + e + "_" + t.qualifier_ids[in.qualifier] + "(" + e + "s):\n";
  code += "    " + local + " = " + t.api[0] + "(" + e + "s, " + t.api[1] + ")\n";
  code += "    " + local + " = " + t.api[2] + "(" + local + ", " + t.api[3] + ")\n";
  code += "    return " + local + "\n";
  return code;
}

}  // namespace detail

inline std::size_t synthetic_cluster_count(std::size_t num_pairs) {
  return std::clamp<std::size_t>((num_pairs + 24) / 25, 2, detail::topics().size());
}

inline constexpr std::size_t kCopiesPerOriginal = 4;

// Templated query-code pairs partitioned into topic clusters. Exactly
// round(dup_rate * num_pairs) records are near-duplicates of an original
// (same intent, fresh query wording, code with the local variable renamed);
// they carry `dup_of`. clusters = 0 picks a size-based default. Deterministic
// given the seed.
inline std::vector<Record> generate_synthetic(std::size_t num_pairs, double dup_rate, std::uint64_t seed,
                                              std::size_t clusters = 0) {
  if (num_pairs == 0) throw ConfigError("generate_synthetic: num_pairs must be >= 1");
  if (!(dup_rate >= 0.0 && dup_rate <= 1.0)) throw ConfigError("generate_synthetic: dup_rate must be in [0,1]");
  Rng rng(seed);
  if (clusters == 0) clusters = synthetic_cluster_count(num_pairs);
  if (clusters > detail::topics().size())
    throw ConfigError("generate_synthetic: at most " + std::to_string(detail::topics().size()) + " clusters");
  std::size_t num_dups = static_cast<std::size_t>(dup_rate * static_cast<double>(num_pairs) + 0.5);
  if (num_dups >= num_pairs) num_dups = num_pairs - 1;

  std::vector<std::size_t> positions(num_pairs);
  for (std::size_t k = 0; k < num_pairs; ++k) positions[k] = k;
  rng.shuffle(positions);
  std::vector<bool> is_dup(num_pairs, false);
  for (std::size_t k = 0; k < num_dups; ++k) is_dup[positions[k]] = true;

  const std::size_t n_entities = detail::entities().size();
  const std::size_t n_quals = detail::topics().front().qualifiers.size();
  std::set<detail::Intent> used;
  std::vector<detail::Intent> intents(num_pairs);
  std::vector<std::string> local_of(num_pairs);
  std::vector<Record> records(num_pairs);
  std::vector<std::size_t> originals;

  for (std::size_t k = 0; k < num_pairs; ++k) {
    if (is_dup[k]) continue;
    detail::Intent in{k % clusters, 0, 0};
    // Fresh intents while they last; afterwards repeats are allowed.
    for (int attempt = 0; attempt < 64; ++attempt) {
      in.entity = rng.below(n_entities);
      in.qualifier = rng.below(n_quals);
      if (!used.count(in)) break;
    }
    used.insert(in);
    intents[k] = in;
    local_of[k] = rng.pick(detail::locals());
    Record& r = records[k];
    r.id = "s" + std::to_string(k);
    r.query = detail::make_query(in, rng);
    r.code = detail::make_code(in, local_of[k]);
    r.lang = "python";
    r.cluster = static_cast<int>(in.topic);
    originals.push_back(k);
  }

  // Copies concentrate on a few popular originals, about kCopiesPerOriginal each.
  const std::size_t popular =
      std::min(originals.size(), std::max<std::size_t>(1, (num_dups + kCopiesPerOriginal - 1) / kCopiesPerOriginal));
  for (std::size_t k = 0; k < num_pairs; ++k) {
    if (!is_dup[k]) continue;
    const std::size_t src = originals[rng.below(popular)];
    const auto& in = intents[src];
    std::string local = rng.pick(detail::locals());
    while (local == local_of[src]) local = rng.pick(detail::locals());
    Record& r = records[k];
    r.id = "s" + std::to_string(k);
    r.query = detail::make_query(in, rng);
    r.code = detail::make_code(in, local);
    r.lang = "python";
    r.cluster = static_cast<int>(in.topic);
    r.dup_of = records[src].id;
  }
  return records;
}

// Root of a record's duplicate group: its own id, or the id it duplicates.
inline const std::string& duplicate_root(const Record& r) { return r.dup_of.empty() ? r.id : r.dup_of; }

// Oracle relevance built from generator metadata: `same_group` for records in
// the same duplicate group, `same_cluster` for the same topic cluster, 0
// otherwise. Covers every ordered pair of distinct records.
inline ExternalScoreTable oracle_scores(const std::vector<Record>& records, double same_group = 1.0,
                                        double same_cluster = 0.0) {
  ExternalScoreTable table;
  for (const auto& q : records)
    for (const auto& c : records) {
      if (q.id == c.id) continue;
      double score = 0.0;
      if (duplicate_root(q) == duplicate_root(c)) score = same_group;
      else if (q.cluster && c.cluster && *q.cluster == *c.cluster) score = same_cluster;
      table.set(q.id, c.id, score);
    }
  return table;
}

// Deterministic split; the test part holds round(fraction * size) records.
inline std::pair<std::vector<Record>, std::vector<Record>> train_test_split(const std::vector<Record>& records,
                                                                            double test_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(records.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  Rng rng(mix_seed(seed, 0x5b1));  // decorrelated from a generator run with the same seed
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(records.size()) + 0.5);
  std::vector<bool> in_test(records.size(), false);
  for (std::size_t k = 0; k < n_test && k < order.size(); ++k) in_test[order[k]] = true;
  std::pair<std::vector<Record>, std::vector<Record>> out;
  for (std::size_t k = 0; k < records.size(); ++k) (in_test[k] ? out.second : out.first).push_back(records[k]);
  return out;
}

}  // namespace softnce
