#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "credscore/explain.hpp"
#include "credscore/metrics.hpp"

using namespace credscore;

namespace {

FeatureMatrix make_matrix(const std::vector<std::vector<double>>& rows) {
  FeatureMatrix m;
  std::size_t cols = rows.empty() ? 0 : rows[0].size();
  for (std::size_t c = 0; c < cols; ++c) m.column_names.push_back("f" + std::to_string(c));
  m.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  m.row_keys.resize(rows.size());
  return m;
}

FeatureMatrix random_matrix(int n, int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0, 1);
  std::vector<std::vector<double>> rows(n, std::vector<double>(m));
  for (auto& r : rows)
    for (auto& v : r) v = d(rng);
  return make_matrix(rows);
}

GbdtModel fit_random_model(int n, int m, int trees, int depth, Loss loss, std::uint64_t seed) {
  FeatureMatrix x = random_matrix(n, m, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> noise(0, 0.3);
  std::vector<double> y(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double v = x.values(i, 0) - 0.7 * x.values(i, m > 1 ? 1 : 0) + noise(rng);
    y[static_cast<std::size_t>(i)] = loss == Loss::LogLoss ? (v > 0 ? 1.0 : 0.0) : v;
  }
  GbdtConfig cfg;
  cfg.loss = loss;
  cfg.iterations = trees;
  cfg.max_depth = depth;
  cfg.seed = seed;
  return fit(x, y, cfg).model;
}

// value function v(S): cover-weighted conditional expectation over the ensemble
double value_of_subset(const GbdtModel& model, const Eigen::RowVectorXd& row,
                       const std::vector<bool>& subset) {
  double v = model.base_score;
  for (int t = 0; t < model.best_iteration; ++t)
    v += model.config.learning_rate *
         tree_expectation_subset(model.trees[static_cast<std::size_t>(t)], 1.0, row, subset);
  return v;
}

double factorial(int n) {
  double f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// exponential-time Shapley value directly from the definition
double brute_force_phi(const GbdtModel& model, const Eigen::RowVectorXd& row, int j, int m) {
  double phi = 0;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    if (mask & (1u << j)) continue;
    std::vector<bool> s(static_cast<std::size_t>(m), false);
    int size = 0;
    for (int f = 0; f < m; ++f)
      if (mask & (1u << f)) {
        s[static_cast<std::size_t>(f)] = true;
        ++size;
      }
    double without = value_of_subset(model, row, s);
    s[static_cast<std::size_t>(j)] = true;
    double with = value_of_subset(model, row, s);
    phi += factorial(size) * factorial(m - size - 1) / factorial(m) * (with - without);
  }
  return phi;
}

}  // namespace

TEST_CASE("local accuracy on fuzzed models") {
  for (int rep = 0; rep < 20; ++rep) {
    Loss loss = rep % 2 == 0 ? Loss::LogLoss : Loss::SquaredError;
    GbdtModel model = fit_random_model(120, 2 + rep % 4, 3 + rep % 5, 2 + rep % 3, loss, 200 + rep);
    FeatureMatrix probe = random_matrix(15, static_cast<int>(model.feature_names.size()), 500 + rep);
    probe.column_names = model.feature_names;
    ShapMatrix shap = tree_shap(model, probe);
    std::vector<double> raw = predict_raw(model, probe);
    for (Eigen::Index r = 0; r < probe.rows(); ++r) {
      double total = shap.base_value + shap.phi.row(r).sum();
      CHECK(std::abs(total - raw[static_cast<std::size_t>(r)]) < 1e-9);
    }
  }
}

TEST_CASE("shap equals brute-force Shapley on small models") {
  for (int rep = 0; rep < 6; ++rep) {
    int m = 2 + rep % 3;  // up to 4 features, subset lattice stays tiny
    GbdtModel model = fit_random_model(100, m, 3, 3, Loss::SquaredError, 900 + rep);
    FeatureMatrix probe = random_matrix(5, m, 1300 + rep);
    probe.column_names = model.feature_names;
    ShapMatrix shap = tree_shap(model, probe);
    for (Eigen::Index r = 0; r < probe.rows(); ++r) {
      Eigen::RowVectorXd row = probe.values.row(r);
      for (int j = 0; j < m; ++j) {
        double oracle = brute_force_phi(model, row, j, m);
        CHECK(std::abs(shap.phi(r, j) - oracle) < 1e-8);
      }
    }
  }
}

TEST_CASE("subset expectation oracle base cases") {
  GbdtModel model = fit_random_model(80, 2, 1, 1, Loss::SquaredError, 17);
  FeatureMatrix probe = random_matrix(1, 2, 18);
  Eigen::RowVectorXd row = probe.values.row(0);
  const Tree& tree = model.trees[0];
  // full subset reproduces the point prediction
  CHECK(tree_expectation_subset(tree, 1.0, row, {true, true}) ==
        doctest::Approx(tree.predict_row(row)).epsilon(1e-12));
  // empty subset is the cover-weighted tree mean
  double mean = 0;
  double root_cover = tree.nodes[0].cover;
  for (const TreeNode& n : tree.nodes)
    if (n.feature < 0) mean += n.leaf_value * n.cover / root_cover;
  CHECK(tree_expectation_subset(tree, 1.0, row, {false, false}) ==
        doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("aggregate importance and rank correlation") {
  ShapMatrix a, b;
  a.feature_names = {"x", "y", "z"};
  a.phi = Eigen::MatrixXd(2, 3);
  a.phi << 3, -1, 0.5, -3, 1, 0.5;  // mean |phi| = 3, 1, 0.5
  b = a;
  ImportanceRanking ra = aggregate_importance({a});
  REQUIRE(ra.entries.size() == 3);
  CHECK(ra.entries[0].first == "x");
  CHECK(ra.entries[0].second == doctest::Approx(3.0));
  CHECK(ra.entries[2].first == "z");

  CHECK(ranking_rank_correlation(ra, aggregate_importance({b})) == doctest::Approx(1.0));
  ShapMatrix rev = a;
  rev.phi << 0.5, -1, 3, -0.5, 1, 3;  // reversed ordering
  CHECK(ranking_rank_correlation(ra, aggregate_importance({rev})) == doctest::Approx(-1.0));
}

TEST_CASE("permutation importance finds the informative feature") {
  // f0 fully determines the label, f1 is pure noise
  FeatureMatrix x = random_matrix(400, 2, 33);
  std::vector<double> y(400);
  for (int i = 0; i < 400; ++i) y[static_cast<std::size_t>(i)] = x.values(i, 0) > 0 ? 1.0 : 0.0;
  GbdtConfig cfg;
  cfg.loss = Loss::LogLoss;
  cfg.iterations = 20;
  cfg.max_depth = 3;
  GbdtModel model = fit(x, y, cfg).model;
  ImportanceRanking rank = permutation_importance(model, x, y, ImportanceMetric::Auc, 5, 7);
  REQUIRE(rank.entries.size() == 2);
  CHECK(rank.entries[0].first == "f0");
  CHECK(rank.entries[0].second > 0.3);
  CHECK(std::abs(rank.entries[1].second) < 0.05);
  // deterministic under the same seed
  ImportanceRanking again = permutation_importance(model, x, y, ImportanceMetric::Auc, 5, 7);
  CHECK(rank.entries[0].second == again.entries[0].second);
}

TEST_CASE("partial dependence of a single split is a step") {
  FeatureMatrix x = make_matrix({{1, 0}, {2, 0}, {3, 0}, {4, 0}});
  std::vector<double> y = {1, 1, 3, 3};
  GbdtConfig cfg;
  cfg.loss = Loss::SquaredError;
  cfg.iterations = 1;
  cfg.learning_rate = 1.0;
  cfg.max_depth = 1;
  cfg.l2 = 0.0;
  GbdtModel model = fit(x, y, cfg).model;
  PdpCurve curve = partial_dependence(model, "f0", {0, 1, 2, 3, 4, 5}, x);
  REQUIRE(curve.response.size() == 6);
  CHECK(curve.response[0] == doctest::Approx(1.0));
  CHECK(curve.response[2] == doctest::Approx(1.0));
  CHECK(curve.response[3] == doctest::Approx(3.0));
  CHECK(curve.response[5] == doctest::Approx(3.0));
  CHECK_THROWS_AS(partial_dependence(model, "no_such", {0}, x), Error);
}

TEST_CASE("tsv export shape") {
  GbdtModel model = fit_random_model(50, 3, 2, 2, Loss::SquaredError, 77);
  FeatureMatrix probe = random_matrix(4, 3, 78);
  probe.column_names = model.feature_names;
  ShapMatrix shap = tree_shap(model, probe);
  std::string tsv = shap.to_tsv();
  // header + one line per row
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 5);
}
