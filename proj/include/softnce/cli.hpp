#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "softnce/config.hpp"
#include "softnce/corpus.hpp"
#include "softnce/encoder.hpp"
#include "softnce/estimators.hpp"
#include "softnce/eval.hpp"
#include "softnce/synthetic.hpp"
#include "softnce/theory.hpp"
#include "softnce/trainer.hpp"

namespace softnce {

namespace cli {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = ".";
};

struct GenArgs {
  std::size_t num_pairs = 1000;
  double dup_rate = 0.2;
  std::uint64_t seed = 7;
  std::size_t clusters = 0;
  double test_fraction = 0.2;
  bool oracle = false;
};

inline RunConfig resolve(const CommonArgs& args) {
  RunConfig c = args.config_path.empty() ? RunConfig{} : RunConfig::load(args.config_path);
  for (const auto& s : args.overrides) c.set(s);
  return c;
}

inline fs::path prepare_out(const CommonArgs& args) {
  fs::path out(args.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error("cannot create output directory " + out.string() + ": " + ec.message());
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

inline std::unique_ptr<ExternalScoreTable> score_table(const RunConfig& c, const TrainConfig& tc) {
  if (!needs_estimates(tc.loss.kind) || tc.estimator.kind != EstimatorKind::external) return nullptr;
  c.require({"external_scores_path"}, "external estimator");
  return std::make_unique<ExternalScoreTable>(ExternalScoreTable::load(c.get("external_scores_path")));
}

inline int run_train(const CommonArgs& args, std::ostream& out) {
  const RunConfig c = resolve(args);
  c.require({"train_path"}, "train");
  const TrainConfig tc = c.train_config();
  const auto dir = prepare_out(args);
  write_text(dir / "config.resolved", c.resolved());

  const auto records = load_dataset(c.get("train_path"));
  const auto table = score_table(c, tc);
  std::vector<Record> test, codebase;
  EvalSet eval;
  if (c.has("test_path") && c.has("codebase_path")) {
    test = load_dataset(c.get("test_path"));
    codebase = load_dataset(c.get("codebase_path"));
    eval = {&test, &codebase};
  }
  auto result = train(records, tc, c.initial_params(), table.get(), eval);
  result.report.checkpoint_path = "checkpoint";
  save_checkpoint(result.params, (dir / "checkpoint").string());
  write_text(dir / "report.json", to_json(result.report).dump(2) + "\n");
  out << "train: " << tc.epochs << " epochs, final loss " << RunConfig::number(result.report.epoch_loss.back())
      << ", outputs in " << dir.string() << "\n";
  return 0;
}

inline int run_eval(const CommonArgs& args, std::ostream& out) {
  const RunConfig c = resolve(args);
  c.require({"checkpoint_path", "test_path", "codebase_path"}, "eval");
  const Metric metric = c.metric();
  const auto dir = prepare_out(args);
  write_text(dir / "config.resolved", c.resolved());
  const auto params = load_checkpoint(c.get("checkpoint_path"));
  const auto report = evaluate(params, load_dataset(c.get("test_path")), load_dataset(c.get("codebase_path")), metric);
  write_text(dir / "report.json", to_json(report).dump(2) + "\n");
  out << "eval: mrr " << RunConfig::number(report.mrr) << " over " << report.num_queries << " queries\n";
  return 0;
}

inline int run_weights(const CommonArgs& args, std::ostream& out) {
  const RunConfig c = resolve(args);
  c.require({"train_path"}, "weights");
  const TrainConfig tc = c.train_config();
  const auto dir = prepare_out(args);
  write_text(dir / "config.resolved", c.resolved());
  const auto records = load_dataset(c.get("train_path"));
  const auto batches = make_batches(records, tc.batch_size, tc.seed, true);
  if (batches.empty()) throw DatasetError("weights: fewer records than batch size");
  std::unique_ptr<ExternalScoreTable> table;
  if (tc.estimator.kind == EstimatorKind::external) {
    c.require({"external_scores_path"}, "external estimator");
    table = std::make_unique<ExternalScoreTable>(ExternalScoreTable::load(c.get("external_scores_path")));
  }
  const Batch& batch = batches.front();
  const SimScores sim = estimate_sim_scores(tc.estimator, batch, table.get());
  const WeightMatrix w = compute_weights(sim, tc.estimator.alpha, tc.estimator.beta, tc.estimator.clamp_floor);
  std::string csv = "row,col,query_id,code_id,sim,weight\n";
  char buf[128];
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t j = 0; j < batch.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,", i, j);
      csv += buf + batch.records[i].id + "," + batch.records[j].id;
      std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", sim(i, j), w(i, j));
      csv += buf;
    }
  write_text(dir / "weights_batch0.csv", csv);
  out << "weights: " << batch.size() << "x" << batch.size() << " batch written to "
      << (dir / "weights_batch0.csv").string() << "\n";
  return 0;
}

inline int run_verify(const CommonArgs& args, std::size_t instances, std::uint64_t seed, std::ostream& out,
                      std::ostream& err) {
  const RunConfig c = resolve(args);
  const auto dir = prepare_out(args);
  write_text(dir / "config.resolved", c.resolved());
  const VerifyReport report = verify_bounds(instances, seed);
  write_text(dir / "verify.json", to_json(report).dump(2) + "\n");
  for (const auto& b : report.bounds)
    out << b.name << ": " << b.passed << "/" << b.total << " (min slack " << RunConfig::number(b.min_slack) << ")\n";
  if (!report.all_passed()) {
    err << "softnce: verify: bound violations recorded in " << (dir / "verify.json").string() << "\n";
    return 1;
  }
  return 0;
}

inline int run_sweep(const CommonArgs& args, const std::vector<double>& alphas, std::ostream& out) {
  RunConfig c = resolve(args);
  if (!c.has("loss")) c.set("loss", "soft");
  c.require({"train_path", "test_path", "codebase_path"}, "sweep");
  if (c.loss_config().kind != LossKind::soft) throw ConfigError("sweep: loss must be soft");
  if (alphas.empty()) throw ConfigError("sweep: --alpha needs at least one value");
  const auto dir = prepare_out(args);
  write_text(dir / "config.resolved", c.resolved());
  const auto records = load_dataset(c.get("train_path"));
  const auto test = load_dataset(c.get("test_path"));
  const auto codebase = load_dataset(c.get("codebase_path"));
  const EncoderParams init = c.initial_params();
  std::unique_ptr<ExternalScoreTable> table;
  nlohmann::json points = nlohmann::json::array();
  for (double alpha : alphas) {
    RunConfig point = c;
    point.set("alpha", RunConfig::number(alpha));
    point.set("beta", RunConfig::number(2.0 - alpha));
    const TrainConfig tc = point.train_config();
    if (!table) table = score_table(point, tc);
    const auto result = train(records, tc, init, table.get());
    const double value = evaluate(result.params, test, codebase, tc.metric).mrr;
    points.push_back({{"alpha", tc.estimator.alpha}, {"beta", tc.estimator.beta}, {"mrr", value}});
    out << "alpha=" << RunConfig::number(tc.estimator.alpha) << " beta=" << RunConfig::number(tc.estimator.beta)
        << " mrr=" << RunConfig::number(value) << "\n";
  }
  write_text(dir / "sweep.json", points.dump(2) + "\n");
  return 0;
}

inline int run_gen(const CommonArgs& args, const GenArgs& g, std::ostream& out) {
  if (!(g.test_fraction >= 0.0 && g.test_fraction < 1.0)) throw ConfigError("gen: --test-fraction must be in [0,1)");
  const auto dir = prepare_out(args);
  const auto records = generate_synthetic(g.num_pairs, g.dup_rate, g.seed, g.clusters);
  const auto [train_part, test_part] = train_test_split(records, g.test_fraction, g.seed);
  write_dataset(records, (dir / "corpus.jsonl").string());
  write_dataset(train_part, (dir / "train.jsonl").string());
  write_dataset(test_part, (dir / "test.jsonl").string());
  std::string conf = "train_path=" + (dir / "train.jsonl").string() + "\n" +
                     "test_path=" + (dir / "test.jsonl").string() + "\n" +
                     "codebase_path=" + (dir / "corpus.jsonl").string() + "\n";
  if (g.oracle) {
    oracle_scores(train_part).save((dir / "oracle_scores.jsonl").string());
    conf += "external_scores_path=" + (dir / "oracle_scores.jsonl").string() + "\n";
  }
  write_text(dir / "dataset.conf", conf);
  out << "gen: " << records.size() << " records (" << train_part.size() << " train, " << test_part.size()
      << " test) in " << dir.string() << "\n";
  return 0;
}

inline void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_path, "key=value config file");
  sub->add_option("--set", args.overrides, "override one key, key=value (repeatable)");
  sub->add_option("--out", args.out_dir, "output directory");
}

}  // namespace cli

// Runs one subcommand. Returns 0 on success; otherwise prints a one-line
// diagnostic to `err` and returns nonzero.
inline int dispatch(const std::vector<std::string>& argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Soft-InfoNCE code search: training, evaluation and bound checks", "softnce"};
  app.require_subcommand(1, 1);
  cli::CommonArgs common;
  cli::GenArgs gen;
  std::size_t instances = 1000;
  std::uint64_t verify_seed = 7;
  std::vector<double> alphas;

  auto* train_cmd = app.add_subcommand("train", "fit an encoder, write checkpoint and report");
  auto* eval_cmd = app.add_subcommand("eval", "rank a test set against a codebase");
  auto* weights_cmd = app.add_subcommand("weights", "dump similarity scores and weights of the first batch");
  auto* verify_cmd = app.add_subcommand("verify", "randomized checks of the loss bounds");
  auto* sweep_cmd = app.add_subcommand("sweep", "train over a grid of alpha with beta = 2 - alpha");
  auto* gen_cmd = app.add_subcommand("gen", "write a synthetic corpus");
  for (auto* sub : {train_cmd, eval_cmd, weights_cmd, verify_cmd, sweep_cmd, gen_cmd}) cli::add_common(sub, common);
  verify_cmd->add_option("--instances", instances, "instances per bound")->check(CLI::PositiveNumber);
  verify_cmd->add_option("--seed", verify_seed, "sweep seed");
  sweep_cmd->add_option("--alpha", alphas, "comma-separated alpha values")->delimiter(',')->required();
  gen_cmd->add_option("--num-pairs", gen.num_pairs, "number of query-code pairs")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--dup-rate", gen.dup_rate, "fraction of near-duplicate codes")->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--clusters", gen.clusters, "topic clusters (0 = size-based default)");
  gen_cmd->add_option("--test-fraction", gen.test_fraction, "held-out fraction");
  gen_cmd->add_flag("--oracle-scores", gen.oracle, "also write oracle scores for the training split");

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "softnce: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*train_cmd) return cli::run_train(common, out);
    if (*eval_cmd) return cli::run_eval(common, out);
    if (*weights_cmd) return cli::run_weights(common, out);
    if (*verify_cmd) return cli::run_verify(common, instances, verify_seed, out, err);
    if (*sweep_cmd) return cli::run_sweep(common, alphas, out);
    if (*gen_cmd) return cli::run_gen(common, gen, out);
  } catch (const std::exception& e) {
    err << "softnce: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return dispatch(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace softnce
