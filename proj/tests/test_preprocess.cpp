#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "credscore/preprocess.hpp"

using namespace credscore;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ObservationSet make_obs(std::vector<std::string> num_names,
                        std::vector<std::vector<double>> rows,
                        std::vector<std::string> cat_names = {},
                        std::vector<std::vector<std::optional<std::string>>> cats = {}) {
  ObservationSet obs;
  obs.numeric_names = std::move(num_names);
  obs.categorical_names = std::move(cat_names);
  obs.content_hash = "testhash";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ObservationSet::Record r;
    r.firm_id = "F" + std::to_string(i);
    r.agency = "A";
    r.rating = "BBB";
    r.period = Date{2015, 1, 1};
    r.period_valid = true;
    r.numeric = rows[i];
    if (!cats.empty()) r.categorical = cats[i];
    obs.records.push_back(std::move(r));
  }
  return obs;
}

}  // namespace

TEST_CASE("exact and near duplicates") {
  ObservationSet obs = make_obs({"x"}, {{1}, {1}, {2}, {kNaN}});
  obs.records[1] = obs.records[0];                      // exact duplicate
  obs.records[3].firm_id = obs.records[2].firm_id;      // same firm/agency/period as row 2
  obs.records[3].period = obs.records[2].period;
  auto [dedup, audit] = deduplicate(obs);
  CHECK(audit.exact_duplicates_removed == std::vector<std::size_t>{1});
  REQUIRE(audit.near_duplicates_resolved.size() == 1);
  CHECK(audit.near_duplicates_resolved[0].kept == 2);  // fewer missing cells wins
  CHECK(dedup.records.size() == 2);
}

TEST_CASE("derived ratios") {
  ObservationSet obs = make_obs({"ebitda", "revenue"}, {{10, 100}, {5, 0}, {kNaN, 50}});
  AuditLog audit;
  ObservationSet out = derive_features(obs, &audit);
  int idx = out.numeric_index("ebitda_margin");
  REQUIRE(idx >= 0);
  CHECK(out.records[0].numeric[static_cast<std::size_t>(idx)] == doctest::Approx(0.1));
  CHECK(std::isnan(out.records[1].numeric[static_cast<std::size_t>(idx)]));  // zero denominator
  CHECK(std::isnan(out.records[2].numeric[static_cast<std::size_t>(idx)]));  // missing numerator
  // ratios without source columns are skipped with a warning
  bool warned = false;
  for (const auto& w : audit.warnings) warned |= w.find("interest_coverage") != std::string::npos;
  CHECK(warned);
}

TEST_CASE("missingness bands select the imputation") {
  // 20 rows: x complete -> median; y 20% missing -> knn;
  // z 50% missing but perfectly informative -> kept as knn;
  // w 50% missing and uninformative -> dropped by the auc screen
  std::vector<std::vector<double>> rows;
  std::vector<int> targets;
  for (int i = 0; i < 20; ++i) {
    int label = i % 2;
    double y = i < 4 ? kNaN : static_cast<double>(i);
    double z = i < 10 ? kNaN : static_cast<double>(label);
    double w = i < 10 ? kNaN : static_cast<double>(1 + (i / 2) % 2);
    rows.push_back({static_cast<double>(i), y, z, w});
    targets.push_back(label);
  }
  ObservationSet obs = make_obs({"x", "y", "z", "w"}, rows);
  auto [fp, audit] = fit_preprocessor(obs, PreprocessPolicy{}, &targets, "f0");
  CHECK(fp.numeric[0].imputation == FittedPreprocessor::Imputation::Median);
  CHECK(fp.numeric[1].imputation == FittedPreprocessor::Imputation::Knn);
  CHECK(fp.numeric[2].imputation == FittedPreprocessor::Imputation::Knn);
  CHECK(fp.numeric[3].imputation == FittedPreprocessor::Imputation::Dropped);
  CHECK(fp.numeric[3].drop_reason == "low_auc");
  CHECK(fp.fitted_on == "f0:testhash");
}

TEST_CASE("constant features are dropped") {
  ObservationSet obs = make_obs({"c", "x"}, {{7, 1}, {7, 2}, {7, 3}});
  std::vector<int> targets = {0, 1, 0};
  auto [fp, audit] = fit_preprocessor(obs, PreprocessPolicy{}, &targets, "f0");
  CHECK(fp.numeric[0].imputation == FittedPreprocessor::Imputation::Dropped);
  CHECK(fp.numeric[0].drop_reason == "constant");
  CHECK(fp.output_columns() == std::vector<std::string>{"x"});
}

TEST_CASE("z-score uses training moments") {
  // winsor bounds at the extremes make the transform a pure standardization;
  // oracle: mean 3, sd(ddof=1) sqrt(2.5) on 1..5
  PreprocessPolicy pol;
  pol.winsor_lo = 0.0;
  pol.winsor_hi = 1.0;
  ObservationSet obs = make_obs({"x"}, {{1}, {2}, {3}, {4}, {5}});
  std::vector<int> targets = {0, 1, 0, 1, 0};
  auto [fp, audit] = fit_preprocessor(obs, pol, &targets, "f0");
  CHECK_FALSE(fp.numeric[0].log_applied);
  CHECK(fp.numeric[0].mu == doctest::Approx(3.0));
  CHECK(fp.numeric[0].sigma == doctest::Approx(std::sqrt(2.5)).epsilon(1e-12));
  FeatureMatrix m = apply_preprocessor(fp, obs);
  CHECK(m.values(0, 0) == doctest::Approx((1.0 - 3.0) / std::sqrt(2.5)).epsilon(1e-12));
  // moments are frozen: a shifted apply-time sample does not re-standardize
  ObservationSet shifted = make_obs({"x"}, {{100}});
  FeatureMatrix ms = apply_preprocessor(fp, shifted);
  CHECK(ms.values(0, 0) == doctest::Approx((5.0 - 3.0) / std::sqrt(2.5)).epsilon(1e-12));  // winsorized to train max
}

TEST_CASE("log transform applies to skewed strictly positive features") {
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 30; ++i) rows.push_back({std::exp(0.5 * i), std::exp(0.5 * i) - 5.0});
  ObservationSet obs = make_obs({"pos_skewed", "signed_skewed"}, rows);
  std::vector<int> targets(30);
  for (int i = 0; i < 30; ++i) targets[static_cast<std::size_t>(i)] = i % 2;
  PreprocessPolicy pol;
  pol.winsor_lo = 0.0;
  pol.winsor_hi = 1.0;
  auto [fp, audit] = fit_preprocessor(obs, pol, &targets, "f0");
  CHECK(fp.numeric[0].log_applied);
  CHECK_FALSE(fp.numeric[1].log_applied);  // not strictly positive
  FeatureMatrix m = apply_preprocessor(fp, obs);
  // log then z-score of exp(0.5 i): equally spaced, so first value standardizes
  // against mu = mean(0.5 i) and sd(ddof=1) of the arithmetic ladder
  double mu = 0.5 * 14.5;
  double ss = 0;
  for (int i = 0; i < 30; ++i) ss += (0.5 * i - mu) * (0.5 * i - mu);
  double sd = std::sqrt(ss / 29.0);
  CHECK(m.values(0, 0) == doctest::Approx((0.0 - mu) / sd).epsilon(1e-9));
}

TEST_CASE("knn imputation oracle") {
  // train: x = 0..9 fully observed; y = 100x observed for x <= 7, missing after
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 10; ++i)
    rows.push_back({static_cast<double>(i), i <= 7 ? 100.0 * i : kNaN});
  ObservationSet train = make_obs({"x", "y"}, rows);
  std::vector<int> targets = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  PreprocessPolicy pol;
  pol.knn_k = 2;
  pol.winsor_lo = 0.0;
  pol.winsor_hi = 1.0;
  pol.log_skew_threshold = 100.0;
  auto [fp, audit] = fit_preprocessor(train, pol, &targets, "f0");
  REQUIRE(fp.numeric[1].imputation == FittedPreprocessor::Imputation::Knn);

  // query x=0.2: nearest donors with y present are x=0 and x=1 -> mean y = 50
  ObservationSet query = make_obs({"x", "y"}, {{0.2, kNaN}});
  FeatureMatrix m = apply_preprocessor(fp, query);
  double mu = fp.numeric[1].mu, sigma = fp.numeric[1].sigma;
  CHECK(m.values(0, 1) == doctest::Approx((50.0 - mu) / sigma).epsilon(1e-12));

  // all-features-missing row falls back to the training median
  ObservationSet blank = make_obs({"x", "y"}, {{kNaN, kNaN}});
  FeatureMatrix mb = apply_preprocessor(fp, blank);
  CHECK(mb.values(0, 1) == doctest::Approx((fp.numeric[1].median - mu) / sigma).epsilon(1e-12));
}

TEST_CASE("woe encoding oracle") {
  // A: 3 pos / 1 neg, B: 1 pos / 3 neg, +0.5 smoothing:
  // oracle by hand: WoE(A) = ln((3.5/5)/(1.5/5)) = ln(7/3)
  std::vector<std::vector<double>> rows(8, std::vector<double>{1.0});
  rows[0][0] = 2.0;  // keep the numeric feature non-constant
  std::vector<std::vector<std::optional<std::string>>> cats;
  std::vector<int> targets;
  for (int i = 0; i < 8; ++i) {
    bool is_a = i < 4;
    cats.push_back({std::optional<std::string>(is_a ? "A" : "B")});
    targets.push_back(is_a ? (i < 3 ? 1 : 0) : (i == 4 ? 1 : 0));
  }
  ObservationSet obs = make_obs({"x"}, rows, {"grp"}, cats);
  PreprocessPolicy pol;
  pol.woe_cardinality_threshold = 1;  // force WoE even at 2 categories
  auto [fp, audit] = fit_preprocessor(obs, pol, &targets, "f0");
  REQUIRE(fp.categorical[0].encoding == FittedPreprocessor::Encoding::Woe);
  CHECK(fp.categorical[0].woe.at("A") == doctest::Approx(std::log(7.0 / 3.0)).epsilon(1e-12));
  CHECK(fp.categorical[0].woe.at("B") == doctest::Approx(std::log(3.0 / 7.0)).epsilon(1e-12));
  // unseen category takes the neutral default
  ObservationSet unseen = make_obs({"x"}, {{1.0}}, {"grp"}, {{std::optional<std::string>("C")}});
  FeatureMatrix m = apply_preprocessor(fp, unseen);
  CHECK(m.values(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("one-hot and ordered label encodings") {
  std::vector<std::vector<double>> rows = {{1}, {2}, {3}, {4}};
  std::vector<std::vector<std::optional<std::string>>> cats = {
      {std::optional<std::string>("tech"), std::optional<std::string>("small")},
      {std::optional<std::string>("energy"), std::optional<std::string>("mid")},
      {std::optional<std::string>("tech"), std::optional<std::string>("large")},
      {std::nullopt, std::nullopt}};
  ObservationSet obs = make_obs({"x"}, rows, {"sector", "size"}, cats);
  PreprocessPolicy pol;
  pol.ordered_domains["size"] = {"small", "mid", "large"};
  std::vector<int> targets = {0, 1, 0, 1};
  auto [fp, audit] = fit_preprocessor(obs, pol, &targets, "f0");
  CHECK(fp.categorical[0].encoding == FittedPreprocessor::Encoding::OneHot);
  CHECK(fp.categorical[1].encoding == FittedPreprocessor::Encoding::Label);
  auto cols = fp.output_columns();
  CHECK(std::find(cols.begin(), cols.end(), "sector=tech") != cols.end());
  FeatureMatrix m = apply_preprocessor(fp, obs);
  int tech = m.column_index("sector=tech");
  int size = m.column_index("size");
  REQUIRE(tech >= 0);
  REQUIRE(size >= 0);
  CHECK(m.values(0, tech) == 1.0);
  CHECK(m.values(1, tech) == 0.0);
  CHECK(m.values(3, tech) == 0.0);  // missing -> all zeros
  CHECK(m.values(0, size) == 0.0);
  CHECK(m.values(2, size) == 2.0);
  CHECK(m.values(3, size) == -1.0);  // missing -> sentinel

  // unseen one-hot category maps to the zero vector
  ObservationSet unseen = make_obs({"x"}, {{1}}, {"sector", "size"},
                                   {{std::optional<std::string>("retail"), std::optional<std::string>("mid")}});
  FeatureMatrix mu = apply_preprocessor(fp, unseen);
  int energy = mu.column_index("sector=energy");
  CHECK(mu.values(0, tech) == 0.0);
  CHECK(mu.values(0, energy) == 0.0);
}

TEST_CASE("serialization round trip reproduces transforms bit for bit") {
  std::vector<std::vector<double>> rows;
  std::vector<int> targets;
  for (int i = 0; i < 25; ++i) {
    rows.push_back({static_cast<double>(i % 7), i % 5 == 0 ? kNaN : std::exp(0.3 * (i % 11)), static_cast<double>(i)});
    targets.push_back(i % 2);
  }
  std::vector<std::vector<std::optional<std::string>>> cats;
  for (int i = 0; i < 25; ++i)
    cats.push_back({std::optional<std::string>(i % 3 == 0 ? "a" : (i % 3 == 1 ? "b" : "c"))});
  ObservationSet obs = make_obs({"x", "y", "z"}, rows, {"g"}, cats);
  auto [fp, audit] = fit_preprocessor(obs, PreprocessPolicy{}, &targets, "f3");
  FittedPreprocessor copy = FittedPreprocessor::from_json(fp.to_json());
  CHECK(copy.hash() == fp.hash());
  FeatureMatrix a = apply_preprocessor(fp, obs);
  FeatureMatrix b = apply_preprocessor(copy, obs);
  REQUIRE(a.column_names == b.column_names);
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) CHECK(a.values(r, c) == b.values(r, c));
}

TEST_CASE("fit depends only on the training slice") {
  std::vector<std::vector<double>> rows;
  std::vector<int> targets;
  for (int i = 0; i < 12; ++i) {
    rows.push_back({static_cast<double>(i), static_cast<double>(i * i)});
    targets.push_back(i % 2);
  }
  ObservationSet train = make_obs({"x", "y"}, rows);
  auto [fp1, a1] = fit_preprocessor(train, PreprocessPolicy{}, &targets, "f0");
  auto [fp2, a2] = fit_preprocessor(train, PreprocessPolicy{}, &targets, "f0");
  CHECK(fp1.hash() == fp2.hash());
  // applying to arbitrary other rows never mutates the fitted state
  ObservationSet other = make_obs({"x", "y"}, {{55, -3}, {kNaN, 2}});
  apply_preprocessor(fp1, other);
  CHECK(fp1.hash() == fp2.hash());
}

TEST_CASE("policy validation") {
  PreprocessPolicy p;
  p.low_missing_band = 0.5;
  p.high_missing_band = 0.25;
  CHECK_THROWS_AS(p.validate(), Error);
  p = PreprocessPolicy{};
  p.knn_k = 0;
  CHECK_THROWS_AS(p.validate(), Error);
  p = PreprocessPolicy{};
  p.winsor_lo = 0.99;
  p.winsor_hi = 0.01;
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("column mismatch is rejected at apply time") {
  ObservationSet train = make_obs({"x"}, {{1}, {2}, {3}});
  std::vector<int> targets = {0, 1, 0};
  auto [fp, audit] = fit_preprocessor(train, PreprocessPolicy{}, &targets, "f0");
  ObservationSet other = make_obs({"renamed"}, {{1}});
  CHECK_THROWS_AS(apply_preprocessor(fp, other), Error);
}
