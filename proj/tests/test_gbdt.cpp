#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "credscore/gbdt.hpp"

using namespace credscore;

namespace {

FeatureMatrix make_matrix(const std::vector<std::vector<double>>& rows,
                          std::vector<std::string> names = {}) {
  FeatureMatrix m;
  std::size_t cols = rows.empty() ? 0 : rows[0].size();
  if (names.empty())
    for (std::size_t c = 0; c < cols; ++c) names.push_back("f" + std::to_string(c));
  m.column_names = names;
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

// noisy linear signal for regression/classification fixtures
std::vector<double> linear_target(const FeatureMatrix& x, bool binary, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0, 0.3);
  std::vector<double> y(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double v = x.values(i, 0) - 0.5 * x.values(i, 1 % x.cols()) + noise(rng);
    y[static_cast<std::size_t>(i)] = binary ? (v > 0 ? 1.0 : 0.0) : v;
  }
  return y;
}

}  // namespace

TEST_CASE("single depth-1 squared-error tree matches hand oracle") {
  // oracle by hand: base = mean(y) = 2; residual gradients (pred - y) = [1,1,-1,-1],
  // hess = 1; best split x <= 2 gives leaves -G/H = -1 and +1, so the model
  // reproduces y exactly with lr = 1.
  FeatureMatrix x = make_matrix({{1}, {2}, {3}, {4}});
  std::vector<double> y = {1, 1, 3, 3};
  GbdtConfig cfg;
  cfg.loss = Loss::SquaredError;
  cfg.growth_mode = GrowthMode::DepthWise;
  cfg.iterations = 1;
  cfg.learning_rate = 1.0;
  cfg.max_depth = 1;
  cfg.l2 = 0.0;
  FitResult res = fit(x, y, cfg);
  REQUIRE(res.model.trees.size() == 1);
  CHECK(res.model.base_score == doctest::Approx(2.0));
  const Tree& tree = res.model.trees[0];
  REQUIRE(tree.nodes.size() == 3);
  CHECK(tree.nodes[0].feature == 0);
  CHECK(tree.nodes[0].threshold >= 2.0);
  CHECK(tree.nodes[0].threshold < 3.0);
  std::vector<double> pred = predict_raw(res.model, x);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(pred[i] == doctest::Approx(y[i]).epsilon(1e-12));
  // covers count training rows through each node
  CHECK(tree.nodes[0].cover == doctest::Approx(4.0));
  CHECK(tree.nodes[tree.nodes[0].left].cover == doctest::Approx(2.0));
}

TEST_CASE("logloss gradients match finite differences") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> d(0, 2);
  std::vector<double> y, raw;
  for (int i = 0; i < 50; ++i) {
    y.push_back(static_cast<double>(rng() % 2));
    raw.push_back(d(rng));
  }
  std::vector<double> g, h;
  loss_grad_hess(Loss::LogLoss, y, raw, &g, &h);
  double max_g_err = 0, max_h_err = 0;
  const double eps = 1e-6;
  for (std::size_t i = 0; i < y.size(); ++i) {
    auto nll = [&](double r) {
      double p = sigmoid(r);
      return -(y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p));
    };
    const double eps_h = 1e-4;  // wider step tames second-difference roundoff
    double g_num = (nll(raw[i] + eps) - nll(raw[i] - eps)) / (2 * eps);
    double h_num = (nll(raw[i] + eps_h) - 2 * nll(raw[i]) + nll(raw[i] - eps_h)) / (eps_h * eps_h);
    max_g_err = std::max(max_g_err, std::abs(g_num - g[i]));
    max_h_err = std::max(max_h_err, std::abs(h_num - h[i]));
  }
  CHECK(max_g_err < 1e-6);
  CHECK(max_h_err < 1e-3);  // second difference is numerically coarser
}

TEST_CASE("training loss is non-increasing without regularization") {
  FeatureMatrix x = random_matrix(200, 4, 31);
  std::vector<double> y = linear_target(x, false, 32);
  GbdtConfig cfg;
  cfg.loss = Loss::SquaredError;
  cfg.iterations = 40;
  cfg.learning_rate = 0.2;
  cfg.max_depth = 3;
  cfg.l2 = 0.0;
  FitResult res = fit(x, y, cfg);
  REQUIRE(res.log.train_loss.size() == 40);
  for (std::size_t i = 1; i < res.log.train_loss.size(); ++i)
    CHECK(res.log.train_loss[i] <= res.log.train_loss[i - 1] + 1e-12);
}

TEST_CASE("early stopping freezes the best iteration") {
  FeatureMatrix x = random_matrix(150, 3, 41);
  std::vector<double> y = linear_target(x, true, 42);
  // validation from a different generating seed -> overfit shows up
  FeatureMatrix xv = random_matrix(80, 3, 43);
  std::vector<double> yv = linear_target(xv, true, 44);
  GbdtConfig cfg;
  cfg.loss = Loss::LogLoss;
  cfg.iterations = 300;
  cfg.learning_rate = 0.3;
  cfg.max_depth = 4;
  cfg.early_stopping_rounds = 10;
  FitResult res = fit(x, y, cfg, &xv, &yv);
  CHECK(res.model.best_iteration < 300);
  CHECK(res.model.best_iteration >= 1);
  // best_iteration indexes the minimum of the recorded validation losses
  std::size_t argmin = 0;
  for (std::size_t i = 1; i < res.log.val_loss.size(); ++i)
    if (res.log.val_loss[i] < res.log.val_loss[argmin]) argmin = i;
  CHECK(res.model.best_iteration == static_cast<int>(argmin) + 1);
}

TEST_CASE("deterministic across runs and thread counts") {
  FeatureMatrix x = random_matrix(300, 6, 51);
  std::vector<double> y = linear_target(x, true, 52);
  GbdtConfig cfg;
  cfg.loss = Loss::LogLoss;
  cfg.iterations = 25;
  cfg.max_depth = 4;
  cfg.subsample = 0.8;
  cfg.feature_fraction = 0.8;
  cfg.seed = 99;
  cfg.n_threads = 1;
  std::string h1 = fit(x, y, cfg).model.hash();
  std::string h2 = fit(x, y, cfg).model.hash();
  cfg.n_threads = 4;
  std::string h4 = fit(x, y, cfg).model.hash();
  CHECK(h1 == h2);
  CHECK(h1 == h4);
}

TEST_CASE("serialization round trip preserves predictions bit for bit") {
  FeatureMatrix x = random_matrix(120, 5, 61);
  std::vector<double> y = linear_target(x, false, 62);
  GbdtConfig cfg;
  cfg.loss = Loss::SquaredError;
  cfg.iterations = 15;
  cfg.growth_mode = GrowthMode::LeafWise;
  cfg.num_leaves = 12;
  FitResult res = fit(x, y, cfg);
  GbdtModel copy = GbdtModel::from_json(res.model.to_json());
  CHECK(copy.hash() == res.model.hash());
  std::vector<double> a = predict_raw(res.model, x);
  std::vector<double> b = predict_raw(copy, x);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

namespace {

int node_level(const Tree& tree, int target) {
  // BFS depth of a node index
  std::vector<std::pair<int, int>> queue = {{0, 0}};
  for (std::size_t q = 0; q < queue.size(); ++q) {
    auto [idx, lvl] = queue[q];
    if (idx == target) return lvl;
    const TreeNode& n = tree.nodes[static_cast<std::size_t>(idx)];
    if (n.feature >= 0) {
      queue.push_back({n.left, lvl + 1});
      queue.push_back({n.right, lvl + 1});
    }
  }
  return -1;
}

}  // namespace

TEST_CASE("growth mode structural contracts on fuzzed configs") {
  std::mt19937_64 rng(71);
  for (int rep = 0; rep < 30; ++rep) {
    FeatureMatrix x = random_matrix(80 + static_cast<int>(rng() % 80), 3 + static_cast<int>(rng() % 4), rng());
    std::vector<double> y = linear_target(x, rep % 2 == 0, rng());
    GbdtConfig cfg;
    cfg.loss = rep % 2 == 0 ? Loss::LogLoss : Loss::SquaredError;
    cfg.iterations = 5;
    cfg.max_depth = 2 + static_cast<int>(rng() % 4);
    cfg.num_leaves = 4 + static_cast<int>(rng() % 12);
    cfg.seed = rng();
    for (GrowthMode mode : {GrowthMode::Symmetric, GrowthMode::LeafWise, GrowthMode::DepthWise}) {
      cfg.growth_mode = mode;
      FitResult res = fit(x, y, cfg);
      for (const Tree& tree : res.model.trees) {
        if (mode != GrowthMode::LeafWise) CHECK(tree.depth() <= cfg.max_depth);
        if (mode == GrowthMode::LeafWise) CHECK(tree.n_leaves() <= cfg.num_leaves);
        if (mode == GrowthMode::Symmetric) {
          // oblivious: every internal node at a level shares feature and threshold
          std::map<int, std::pair<int, double>> per_level;
          for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
            const TreeNode& n = tree.nodes[i];
            if (n.feature < 0) continue;
            int lvl = node_level(tree, static_cast<int>(i));
            auto it = per_level.find(lvl);
            if (it == per_level.end()) {
              per_level[lvl] = {n.feature, n.threshold};
            } else {
              CHECK(it->second.first == n.feature);
              CHECK(it->second.second == n.threshold);
            }
          }
        }
      }
    }
  }
}

TEST_CASE("single-class logloss degenerates to a constant model") {
  FeatureMatrix x = random_matrix(30, 2, 81);
  std::vector<double> y(30, 1.0);
  GbdtConfig cfg;
  cfg.loss = Loss::LogLoss;
  cfg.iterations = 10;
  FitResult res = fit(x, y, cfg);
  std::vector<double> p = predict_proba(res.model, x);
  for (double v : p) {
    CHECK(v > 0.95);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("probabilities are the sigmoid of raw scores") {
  FeatureMatrix x = random_matrix(60, 3, 91);
  std::vector<double> y = linear_target(x, true, 92);
  GbdtConfig cfg;
  cfg.loss = Loss::LogLoss;
  cfg.iterations = 10;
  FitResult res = fit(x, y, cfg);
  std::vector<double> raw = predict_raw(res.model, x);
  std::vector<double> p = predict_proba(res.model, x);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(sigmoid(raw[i])).epsilon(1e-15));
  CHECK_THROWS_AS(predict_proba(GbdtModel{GbdtConfig{GrowthMode::DepthWise, Loss::SquaredError}}, x), Error);
}

TEST_CASE("config validation") {
  GbdtConfig cfg;
  cfg.learning_rate = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = GbdtConfig{};
  cfg.subsample = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = GbdtConfig{};
  cfg.iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
