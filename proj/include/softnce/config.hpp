#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "softnce/encoder.hpp"
#include "softnce/error.hpp"
#include "softnce/estimators.hpp"
#include "softnce/losses.hpp"
#include "softnce/trainer.hpp"

namespace softnce {

// Flat key=value run configuration. One assignment per line, '#' starts a
// comment. Unknown keys are rejected; estimator-dependent keys (alpha, beta,
// t) default to the estimator's setting when left unset.
class RunConfig {
 public:
  static const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> kKeys = {
        "train_path", "test_path", "codebase_path", "external_scores_path", "checkpoint_path",
        "epochs", "batch_size", "lr", "optimizer", "seed", "eval_every",
        "loss", "lambda_main", "lambda_kl", "topk", "ratio",
        "estimator", "alpha", "beta", "t", "k1", "b", "clamp_floor",
        "metric", "sim_scale",
        "feature_dim", "embed_dim", "normalize", "init_seed", "init_scale"};
    return kKeys;
  }

  static RunConfig parse(std::istream& in, const std::string& origin = "<config>") {
    RunConfig c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      try {
        c.set(line);
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse(in, path);
  }

  // Accepts "key=value".
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got \"" + assignment + "\"");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) {
    if (!is_known(key)) throw ConfigError("unknown config key \"" + key + "\"");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback = {}) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  void require(const std::vector<std::string>& keys, const std::string& command) const {
    for (const auto& k : keys)
      if (!has(k) || get(k).empty()) throw ConfigError(command + ": missing required config key \"" + k + "\"");
  }

  TrainConfig train_config() const {
    TrainConfig c;
    c.epochs = static_cast<int>(integer("epochs", 30));
    c.batch_size = static_cast<std::size_t>(integer("batch_size", 32));
    c.lr = real("lr", 1e-3);
    c.optimizer = optimizer_kind(get("optimizer", "adam"));
    c.seed = static_cast<std::uint64_t>(integer("seed", 1234));
    c.eval_every = static_cast<int>(integer("eval_every", 0));
    c.loss = loss_config();
    c.estimator = estimator_config();
    c.metric = metric();
    c.sim_scale = real("sim_scale", 1.0);
    validate(c);
    return c;
  }

  LossConfig loss_config() const {
    LossConfig l;
    l.kind = loss_kind(get("loss", "infonce"));
    l.lambda_main = real("lambda_main", 1.3);
    l.lambda_kl = real("lambda_kl", 0.7);
    l.k = static_cast<int>(integer("topk", 1));
    l.ratio = real("ratio", 0.7);
    return l;
  }

  EstimatorConfig estimator_config() const {
    EstimatorConfig e = default_estimator_config(estimator_kind(get("estimator", "uniform")));
    e.alpha = real("alpha", e.alpha);
    e.beta = real("beta", e.beta);
    e.t = real("t", e.t);
    e.k1 = real("k1", e.k1);
    e.b = real("b", e.b);
    e.clamp_floor = real("clamp_floor", e.clamp_floor);
    return e;
  }

  Metric metric() const {
    const auto m = get("metric", "dot");
    if (m == "dot") return Metric::dot;
    if (m == "cosine") return Metric::cosine;
    throw ConfigError("metric must be dot or cosine, got \"" + m + "\"");
  }

  std::size_t feature_dim() const { return static_cast<std::size_t>(integer("feature_dim", kDefaultFeatureDim)); }
  std::size_t embed_dim() const { return static_cast<std::size_t>(integer("embed_dim", 32)); }
  bool normalize() const { return boolean("normalize", false); }
  std::uint64_t init_seed() const { return static_cast<std::uint64_t>(integer("init_seed", integer("seed", 1234))); }
  double init_scale() const { return real("init_scale", 0.1); }

  EncoderParams initial_params() const {
    if (embed_dim() < 2) throw ConfigError("embed_dim must be >= 2");
    return init_params(feature_dim(), embed_dim(), init_seed(), init_scale(), normalize());
  }

  // Every known key with its effective value, so the file reproduces the run on its own.
  std::string resolved() const {
    const TrainConfig tc = train_config();
    std::map<std::string, std::string> out;
    for (const auto& k : {"train_path", "test_path", "codebase_path", "external_scores_path", "checkpoint_path"})
      out[k] = get(k);
    out["epochs"] = std::to_string(tc.epochs);
    out["batch_size"] = std::to_string(tc.batch_size);
    out["lr"] = number(tc.lr);
    out["optimizer"] = tc.optimizer == OptimizerKind::adam ? "adam" : "sgd";
    out["seed"] = std::to_string(tc.seed);
    out["eval_every"] = std::to_string(tc.eval_every);
    out["loss"] = name(tc.loss.kind);
    out["lambda_main"] = number(tc.loss.lambda_main);
    out["lambda_kl"] = number(tc.loss.lambda_kl);
    out["topk"] = std::to_string(tc.loss.k);
    out["ratio"] = number(tc.loss.ratio);
    out["estimator"] = name(tc.estimator.kind);
    out["alpha"] = number(tc.estimator.alpha);
    out["beta"] = number(tc.estimator.beta);
    out["t"] = number(tc.estimator.t);
    out["k1"] = number(tc.estimator.k1);
    out["b"] = number(tc.estimator.b);
    out["clamp_floor"] = number(tc.estimator.clamp_floor);
    out["metric"] = tc.metric == Metric::dot ? "dot" : "cosine";
    out["sim_scale"] = number(tc.sim_scale);
    out["feature_dim"] = std::to_string(feature_dim());
    out["embed_dim"] = std::to_string(embed_dim());
    out["normalize"] = normalize() ? "true" : "false";
    out["init_seed"] = std::to_string(init_seed());
    out["init_scale"] = number(init_scale());
    std::ostringstream s;
    for (const auto& [k, v] : out) s << k << '=' << v << '\n';
    return s.str();
  }

  static std::string name(LossKind k) {
    switch (k) {
      case LossKind::infonce: return "infonce";
      case LossKind::soft: return "soft";
      case LossKind::bce: return "bce";
      case LossKind::weighted: return "weighted";
      case LossKind::klreg: return "klreg";
      case LossKind::fnc_topk: return "fnc_topk";
      case LossKind::fnc_threshold: return "fnc_threshold";
    }
    return "";
  }

  static std::string name(EstimatorKind k) {
    switch (k) {
      case EstimatorKind::bm25: return "bm25";
      case EstimatorKind::lexical: return "lexical";
      case EstimatorKind::external: return "external";
      case EstimatorKind::uniform: return "uniform";
    }
    return "";
  }

  static LossKind loss_kind(const std::string& s) {
    for (auto k : {LossKind::infonce, LossKind::soft, LossKind::bce, LossKind::weighted, LossKind::klreg,
                   LossKind::fnc_topk, LossKind::fnc_threshold})
      if (name(k) == s) return k;
    throw ConfigError("unknown loss \"" + s + "\"");
  }

  static EstimatorKind estimator_kind(const std::string& s) {
    for (auto k : {EstimatorKind::bm25, EstimatorKind::lexical, EstimatorKind::external, EstimatorKind::uniform})
      if (name(k) == s) return k;
    throw ConfigError("unknown estimator \"" + s + "\"");
  }

  static OptimizerKind optimizer_kind(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw ConfigError("optimizer must be adam or sgd, got \"" + s + "\"");
  }

  // Shortest decimal that parses back to the same double.
  static std::string number(double v) {
    char buf[40];
    for (int precision = 1; precision <= 17; ++precision) {
      std::snprintf(buf, sizeof buf, "%.*g", precision, v);
      if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
  }

  static bool is_known(const std::string& key) {
    for (const auto& k : known_keys())
      if (k == key) return true;
    return false;
  }

  long long integer(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    const auto v = get(key);
    std::size_t used = 0;
    long long out = 0;
    try {
      out = std::stoll(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw ConfigError("key \"" + key + "\" expects an integer, got \"" + v + "\"");
    return out;
  }

  double real(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const auto v = get(key);
    std::size_t used = 0;
    double out = 0.0;
    try {
      out = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw ConfigError("key \"" + key + "\" expects a number, got \"" + v + "\"");
    return out;
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("key \"" + key + "\" expects true/false, got \"" + v + "\"");
  }

  std::map<std::string, std::string> values_;
};

}  // namespace softnce
