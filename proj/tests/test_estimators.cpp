#include <gtest/gtest.h>

#include "softnce/estimators.hpp"
#include "test_util.hpp"

using namespace softnce;

namespace {

Batch make_batch(const std::vector<std::pair<std::string, std::string>>& pairs) {
  Batch b;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    b.records.push_back({"r" + std::to_string(k), pairs[k].first, pairs[k].second, "", "", std::nullopt});
    b.source_index.push_back(k);
  }
  return b;
}

Matrix sim_rows(const std::vector<std::vector<double>>& off_diagonal) {
  const std::size_t n = off_diagonal.size();
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0, k = 0; j < n; ++j)
      if (j != i) m(i, j) = off_diagonal[i][k++];
  return m;
}

}  // namespace

TEST(Bm25, NoOverlapGivesZeroRow) {
  const auto r = estimate_bm25(make_batch({{"zzz", "a b"}, {"a", "c"}}));
  EXPECT_EQ(r(0, 0), 0.0);
  EXPECT_EQ(r(0, 1), 0.0);
}

TEST(Bm25, IdenticalDocsScoreEqually) {
  const auto r = estimate_bm25(make_batch({{"tok", "tok"}, {"x", "tok"}}));
  EXPECT_EQ(r(0, 0), r(0, 1));
}

TEST(Bm25, ThreeDocumentFixture) {
  // Docs {a b}, {a}, {c}; every query is "a" except the last, "a c a".
  const auto r = estimate_bm25(make_batch({{"a", "a b"}, {"a", "a"}, {"a c a", "c"}}), 1.2, 0.75);
  EXPECT_NEAR(r(0, 0), 0.39019169220400696, 1e-9);
  EXPECT_NEAR(r(0, 1), 0.523548346501579, 1e-9);
  EXPECT_EQ(r(0, 2), 0.0);
  EXPECT_GT(r(0, 1), r(0, 0));
  EXPECT_NEAR(r(2, 0), 0.39019169220400696, 1e-9);
  EXPECT_NEAR(r(2, 2), 1.0925692944940748, 1e-9);
}

TEST(Jaccard, Examples) {
  EXPECT_EQ(jaccard({"a", "b"}, {"a", "b"}), 1.0);
  EXPECT_EQ(jaccard({"a"}, {"b"}), 0.0);
  EXPECT_EQ(jaccard({"a", "b", "c"}, {"b", "c", "d"}), 0.5);
}

TEST(Lexical, UsesQueryAndCodeTokenization) {
  const auto r = estimate_lexical(make_batch({{"read file", "readFile(x)"}, {"sort list", "sortList(y)"}}));
  EXPECT_NEAR(r(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r(0, 1), 0.0);
}

TEST(External, EchoesCompleteTable) {
  testutil::TempDir dir("ext");
  testutil::write_file(dir.file("s.jsonl"),
                       "{\"qid\":\"r0\",\"cid\":\"r1\",\"score\":0.25}\n"
                       "{\"qid\":\"r1\",\"cid\":\"r0\",\"score\":-3}\n");
  const auto r = load_external_scores(dir.file("s.jsonl"), make_batch({{"q", "c"}, {"q", "c"}}));
  EXPECT_EQ(r(0, 1), 0.25);
  EXPECT_EQ(r(1, 0), -3.0);
}

TEST(External, MissingPairIsNamed) {
  ExternalScoreTable table;
  Batch b;
  for (int k = 0; k < 8; ++k) {
    b.records.push_back({(k == 3 ? "q3" : k == 7 ? "c7" : "x" + std::to_string(k)), "q", "c", "", "", std::nullopt});
    b.source_index.push_back(static_cast<std::size_t>(k));
  }
  for (const auto& q : b.records)
    for (const auto& c : b.records)
      if (q.id != c.id && !(q.id == "q3" && c.id == "c7")) table.set(q.id, c.id, 1.0);
  try {
    external_scores(table, b);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("(q3, c7)"), std::string::npos) << e.what();
  }
}

TEST(External, EqualScoresNormalizeToUniform) {
  ExternalScoreTable table;
  const auto b = make_batch({{"q", "c"}, {"q", "c"}, {"q", "c"}, {"q", "c"}});
  for (const auto& q : b.records)
    for (const auto& c : b.records)
      if (q.id != c.id) table.set(q.id, c.id, 5.0);
  const auto sim = normalize_scores(external_scores(table, b), 0.1);
  EXPECT_LE(max_abs_diff(sim, testutil::uniform_sim(4)), 1e-15);
}

TEST(External, LoadRejectsBadFiles) {
  testutil::TempDir dir("ext_bad");
  testutil::write_file(dir.file("a.jsonl"), "{\"qid\":\"a\",\"cid\":\"b\"}\n");
  EXPECT_THROW(ExternalScoreTable::load(dir.file("a.jsonl")), DatasetError);
  testutil::write_file(dir.file("b.jsonl"), "{oops\n");
  EXPECT_THROW(ExternalScoreTable::load(dir.file("b.jsonl")), DatasetError);
  testutil::write_file(dir.file("c.jsonl"), "{\"qid\":\"a\",\"cid\":\"b\",\"score\":null}\n");
  EXPECT_THROW(ExternalScoreTable::load(dir.file("c.jsonl")), DatasetError);
  EXPECT_THROW(ExternalScoreTable::load(dir.file("none.jsonl")), DatasetError);
}

TEST(External, SaveLoadRoundTrip) {
  testutil::TempDir dir("ext_rt");
  ExternalScoreTable t;
  t.set("b", "a", 0.1);
  t.set("a", "b", 1.0 / 3.0);
  t.save(dir.file("s.jsonl"));
  const auto u = ExternalScoreTable::load(dir.file("s.jsonl"));
  EXPECT_EQ(u.size(), 2u);
  EXPECT_EQ(*u.find("a", "b"), 1.0 / 3.0);
  EXPECT_EQ(u.find("a", "c"), nullptr);
}

TEST(Normalize, ConstantRowIsUniform) {
  for (double t : {0.01, 1.0, 50.0}) EXPECT_LE(max_abs_diff(normalize_scores(Matrix(5, 5, 2.0), t), testutil::uniform_sim(5)), 1e-15);
}

TEST(Normalize, TwoTermSoftmax) {
  const auto p = normalize_scores(sim_rows({{1.0, 2.0}, {0, 0}, {0, 0}}), 1.0);
  EXPECT_NEAR(p(0, 1), 0.26894, 1e-5);
  EXPECT_NEAR(p(0, 2), 0.73106, 1e-5);
  const auto flat = normalize_scores(sim_rows({{1.0, 2.0}, {0, 0}, {0, 0}}), 1e6);
  EXPECT_NEAR(flat(0, 1), 0.5, 1e-6);
  EXPECT_NEAR(flat(0, 2), 0.5, 1e-6);
}

TEST(Normalize, TemperatureOracle) {
  const auto p = normalize_scores(Matrix::from_rows({{0, 1, 2}, {3, 0, 1}, {2, 2, 0}}), 0.5);
  const Matrix expected = Matrix::from_rows({{0.0, 0.11920292202211755, 0.8807970779778823},
                                             {0.9820137900379085, 0.0, 0.017986209962091555},
                                             {0.5, 0.5, 0.0}});
  EXPECT_LE(max_abs_diff(p, expected), 1e-15);
}

TEST(Weights, UniformRecoversInfoNce) {
  const auto w = compute_weights(testutil::uniform_sim(6), 1.0, 1.0);
  EXPECT_LE(max_abs_diff(w, Matrix(6, 6, 1.0)), 1e-15);
}

TEST(Weights, HandEvaluatedRows) {
  const auto w = compute_weights(sim_rows({{0.7, 0.3}, {0.5, 0.5}, {0.5, 0.5}}), 1.0, 1.0);
  EXPECT_NEAR(w(0, 1), 0.6, 1e-15);
  EXPECT_NEAR(w(0, 2), 1.4, 1e-15);
  EXPECT_NEAR(w(0, 1) + w(0, 2), 2.0, 1e-15);

  const auto sim = sim_rows({{0.95, 0.05}, {0.5, 0.5}, {0.5, 0.5}});
  const auto raw = unclamped_weights(sim, 1.3, 0.7);
  EXPECT_NEAR(raw(0, 1), -10.7, 1e-12);
  EXPECT_NEAR(raw(0, 2), 12.7, 1e-12);
  const auto w2 = compute_weights(sim, 1.3, 0.7, 0.1);
  EXPECT_EQ(w2(0, 1), 0.1);
  EXPECT_NEAR(w2(0, 2), 12.7, 1e-12);
  EXPECT_EQ(w2(0, 0), 1.0);
}

TEST(Weights, MatrixOracle) {
  const Matrix sim = Matrix::from_rows({{0, 0.7, 0.3}, {0.25, 0, 0.75}, {0.6, 0.4, 0}});
  const Matrix expected = Matrix::from_rows({{1.0, 0.1, 6.200000000000007}, {7.500000000000009, 1.0, 0.1},
                                             {0.1, 3.6000000000000036, 1.0}});
  EXPECT_LE(max_abs_diff(compute_weights(sim, 1.3, 0.7, 0.1), expected), 1e-12);
}

TEST(Weights, PreClampRowsSumToNMinusOne) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + rng.below(30);
    const auto sim = testutil::random_sim(rng, n, 0.2 + 3.0 * rng.uniform());
    for (auto [a, b] : {std::pair{1.0, 1.0}, {1.3, 0.7}, {1.5, 0.5}}) {
      if (b * static_cast<double>(n - 1) <= a) continue;
      const auto w = unclamped_weights(sim, a, b);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          if (j != i) s += w(i, j);
        EXPECT_NEAR(s, static_cast<double>(n - 1), 1e-9);
      }
    }
  }
}

TEST(Weights, DenominatorErrorNamesConfiguration) {
  try {
    compute_weights(testutil::uniform_sim(2), 1.3, 0.7);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("N=2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("alpha=1.3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("beta=0.7"), std::string::npos) << msg;
  }
  EXPECT_NO_THROW(compute_weights(testutil::uniform_sim(3), 1.3, 0.7));
}

TEST(ImpliedSampling, Examples) {
  const auto q = implied_sampling_distribution(testutil::uniform_sim(4));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(q(i, j), i == j ? 0.0 : 1.0 / 3.0, 1e-15);
  const auto one_hot = implied_sampling_distribution(sim_rows({{1.0, 0.0}, {0.5, 0.5}, {0.5, 0.5}}));
  EXPECT_EQ(one_hot(0, 1), 0.0);
  EXPECT_EQ(one_hot(0, 2), 1.0);
  const auto fixed = implied_sampling_distribution(Matrix::from_rows({{0, 0.7, 0.3}, {0.25, 0, 0.75}, {0.6, 0.4, 0}}));
  EXPECT_NEAR(fixed(0, 1), 0.3, 1e-15);
  EXPECT_NEAR(fixed(0, 2), 0.7, 1e-15);
  EXPECT_THROW(implied_sampling_distribution(testutil::uniform_sim(2)), DimensionError);
}

TEST(ImpliedSampling, RowsSumToOne) {
  Rng rng(4);
  for (std::size_t n = 3; n <= 32; ++n) {
    const auto q = implied_sampling_distribution(testutil::random_sim(rng, n, 0.5));
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += q(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Estimate, UniformKindAndDefaults) {
  const auto b = make_batch({{"a", "b"}, {"c", "d"}, {"e", "f"}});
  EXPECT_LE(max_abs_diff(estimate_sim_scores(default_estimator_config(EstimatorKind::uniform), b, nullptr),
                         testutil::uniform_sim(3)),
            1e-15);
  EXPECT_THROW(estimate(default_estimator_config(EstimatorKind::external), b, nullptr), ConfigError);
  const auto bm = default_estimator_config(EstimatorKind::bm25);
  EXPECT_EQ(bm.alpha, 1.5);
  EXPECT_EQ(bm.beta, 0.5);
  const auto ext = default_estimator_config(EstimatorKind::external);
  EXPECT_EQ(ext.alpha, 1.3);
  EXPECT_EQ(ext.beta, 0.7);
  EXPECT_EQ(ext.t, 0.1);
  EstimatorConfig bad;
  bad.t = 0.0;
  EXPECT_THROW(validate(bad), ConfigError);
}
