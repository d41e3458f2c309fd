#include "credscore/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "credscore/metrics.hpp"

namespace credscore {

namespace {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0;
  double one_fraction = 0;
  double pweight = 0;
};

void extend_path(std::vector<PathElement>& path, double zero_fraction, double one_fraction,
                 int feature) {
  int depth = static_cast<int>(path.size());
  path.push_back({feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0});
  for (int i = depth - 1; i >= 0; --i) {
    path[i + 1].pweight +=
        one_fraction * path[i].pweight * (i + 1) / static_cast<double>(depth + 1);
    path[i].pweight = zero_fraction * path[i].pweight * (depth - i) / static_cast<double>(depth + 1);
  }
}

void unwind_path(std::vector<PathElement>& path, int index) {
  int depth = static_cast<int>(path.size()) - 1;
  double n = path[depth].pweight;
  double one_fraction = path[index].one_fraction;
  double zero_fraction = path[index].zero_fraction;
  for (int j = depth - 1; j >= 0; --j) {
    if (one_fraction != 0) {
      double tmp = path[j].pweight;
      path[j].pweight = n * (depth + 1) / static_cast<double>((j + 1) * one_fraction);
      n = tmp - path[j].pweight * zero_fraction * (depth - j) / static_cast<double>(depth + 1);
    } else {
      path[j].pweight = path[j].pweight * (depth + 1) /
                        (zero_fraction * static_cast<double>(depth - j));
    }
  }
  for (int j = index; j < depth; ++j) {
    path[j].feature = path[j + 1].feature;
    path[j].zero_fraction = path[j + 1].zero_fraction;
    path[j].one_fraction = path[j + 1].one_fraction;
  }
  path.pop_back();
}

double unwound_path_sum(const std::vector<PathElement>& path, int index) {
  int depth = static_cast<int>(path.size()) - 1;
  double one_fraction = path[index].one_fraction;
  double zero_fraction = path[index].zero_fraction;
  double total = 0;
  if (one_fraction != 0) {
    double n = path[depth].pweight;
    for (int j = depth - 1; j >= 0; --j) {
      double tmp = n / static_cast<double>((j + 1) * one_fraction);
      total += tmp;
      n = path[j].pweight - tmp * zero_fraction * (depth - j);
    }
  } else {
    for (int j = depth - 1; j >= 0; --j)
      total += path[j].pweight / (zero_fraction * static_cast<double>(depth - j));
  }
  return total * (depth + 1);
}

void shap_recurse(const Tree& tree, double scale,
                  const Eigen::Ref<const Eigen::RowVectorXd>& row, int node,
                  std::vector<PathElement> path, double zero_fraction, double one_fraction,
                  int feature, Eigen::Ref<Eigen::RowVectorXd> phi) {
  extend_path(path, zero_fraction, one_fraction, feature);
  const TreeNode& n = tree.nodes[node];

  if (n.feature < 0) {
    for (int i = 1; i < static_cast<int>(path.size()); ++i) {
      double w = unwound_path_sum(path, i);
      phi[path[i].feature] +=
          w * (path[i].one_fraction - path[i].zero_fraction) * n.leaf_value * scale;
    }
    return;
  }

  const TreeNode& left = tree.nodes[n.left];
  const TreeNode& right = tree.nodes[n.right];
  bool go_left = row[n.feature] <= n.threshold;
  int hot = go_left ? n.left : n.right;
  int cold = go_left ? n.right : n.left;
  double hot_cover = go_left ? left.cover : right.cover;
  double cold_cover = go_left ? right.cover : left.cover;
  double denom = n.cover > 0 ? n.cover : 1.0;
  double hot_zero = hot_cover / denom;
  double cold_zero = cold_cover / denom;

  double incoming_zero = 1.0, incoming_one = 1.0;
  // A feature already on the path keeps a single entry.
  int prev = -1;
  for (int i = 1; i < static_cast<int>(path.size()); ++i) {
    if (path[i].feature == n.feature) {
      prev = i;
      break;
    }
  }
  if (prev >= 0) {
    incoming_zero = path[prev].zero_fraction;
    incoming_one = path[prev].one_fraction;
    unwind_path(path, prev);
  }

  shap_recurse(tree, scale, row, hot, path, hot_zero * incoming_zero, incoming_one, n.feature, phi);
  shap_recurse(tree, scale, row, cold, path, cold_zero * incoming_zero, 0.0, n.feature, phi);
}

double tree_mean(const Tree& tree) {
  double root_cover = tree.nodes.empty() ? 0.0 : tree.nodes[0].cover;
  if (root_cover <= 0) return 0.0;
  double total = 0;
  for (const auto& n : tree.nodes)
    if (n.feature < 0) total += n.leaf_value * n.cover;
  return total / root_cover;
}

}  // namespace

ShapMatrix tree_shap(const GbdtModel& model, const FeatureMatrix& rows) {
  if (rows.column_names != model.feature_names)
    throw Error("tree_shap: feature columns do not match the model");
  ShapMatrix out;
  out.feature_names = model.feature_names;
  out.phi = Eigen::MatrixXd::Zero(rows.rows(), rows.cols());
  out.base_value = model.base_score;
  for (int t = 0; t < model.best_iteration && t < static_cast<int>(model.trees.size()); ++t)
    out.base_value += model.config.learning_rate * tree_mean(model.trees[t]);

  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    auto row = rows.values.row(r);
    Eigen::RowVectorXd phi_row = Eigen::RowVectorXd::Zero(rows.cols());
    for (int t = 0; t < model.best_iteration && t < static_cast<int>(model.trees.size()); ++t) {
      const Tree& tree = model.trees[t];
      if (tree.nodes.size() == 1) continue;  // constant tree contributes to base only
      shap_recurse(tree, model.config.learning_rate, row, 0, {}, 1.0, 1.0, -1, phi_row);
    }
    out.phi.row(r) = phi_row;
  }
  return out;
}

double tree_expectation_subset(const Tree& tree, double learning_rate,
                               const Eigen::Ref<const Eigen::RowVectorXd>& row,
                               const std::vector<bool>& in_subset) {
  std::function<double(int)> walk = [&](int node) -> double {
    const TreeNode& n = tree.nodes[node];
    if (n.feature < 0) return n.leaf_value;
    if (in_subset[n.feature]) return walk(row[n.feature] <= n.threshold ? n.left : n.right);
    double denom = n.cover > 0 ? n.cover : 1.0;
    return (tree.nodes[n.left].cover / denom) * walk(n.left) +
           (tree.nodes[n.right].cover / denom) * walk(n.right);
  };
  return learning_rate * walk(0);
}

ImportanceRanking aggregate_importance(const std::vector<ShapMatrix>& shap_sets) {
  if (shap_sets.empty()) throw Error("aggregate_importance: no inputs");
  const auto& names = shap_sets[0].feature_names;
  for (const auto& s : shap_sets)
    if (s.feature_names != names)
      throw Error("aggregate_importance: mismatched feature names across inputs");

  Eigen::VectorXd totals = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(names.size()));
  std::size_t n_rows = 0;
  for (const auto& s : shap_sets) {
    totals += s.phi.cwiseAbs().colwise().sum().transpose();
    n_rows += static_cast<std::size_t>(s.phi.rows());
  }
  if (n_rows == 0) throw Error("aggregate_importance: no rows");
  totals /= static_cast<double>(n_rows);

  ImportanceRanking ranking;
  std::vector<std::size_t> order(names.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return totals[static_cast<Eigen::Index>(a)] > totals[static_cast<Eigen::Index>(b)];
  });
  for (std::size_t i : order)
    ranking.entries.emplace_back(names[i], totals[static_cast<Eigen::Index>(i)]);
  return ranking;
}

ImportanceRanking permutation_importance(const GbdtModel& model, const FeatureMatrix& data,
                                         const std::vector<double>& labels, ImportanceMetric metric,
                                         int repeats, std::uint64_t seed) {
  if (repeats < 1) throw Error("permutation_importance: repeats must be >= 1");
  auto evaluate = [&](const FeatureMatrix& fm) {
    auto raw = predict_raw(model, fm);
    if (metric == ImportanceMetric::Auc) {
      std::vector<int> y(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] > 0.5 ? 1 : 0;
      return auc(y, raw);
    }
    return regression_metrics(labels, raw).rmse;
  };

  double baseline = evaluate(data);
  ImportanceRanking ranking;
  std::vector<std::pair<std::string, double>> scores;
  const std::size_t n = static_cast<std::size_t>(data.rows());
  for (Eigen::Index f = 0; f < data.cols(); ++f) {
    double total = 0;
    for (int rep = 0; rep < repeats; ++rep) {
      // Streams keyed by (feature, repeat) so results are scheduling-invariant.
      Rng rng(derive_seed(seed, "perm", data.column_names[static_cast<std::size_t>(f)], rep));
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      FeatureMatrix shuffled = data;
      for (std::size_t r = 0; r < n; ++r)
        shuffled.values(static_cast<Eigen::Index>(r), f) =
            data.values(static_cast<Eigen::Index>(perm[r]), f);
      double m = evaluate(shuffled);
      total += metric == ImportanceMetric::Auc ? baseline - m : m - baseline;
    }
    scores.emplace_back(data.column_names[static_cast<std::size_t>(f)],
                        total / static_cast<double>(repeats));
  }
  std::stable_sort(scores.begin(), scores.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  ranking.entries = std::move(scores);
  return ranking;
}

PdpCurve partial_dependence(const GbdtModel& model, const std::string& feature,
                            const std::vector<double>& grid, const FeatureMatrix& data) {
  if (grid.empty()) throw Error("partial_dependence: empty grid");
  int f = data.column_index(feature);
  if (f < 0) throw Error("partial_dependence: unknown feature " + feature);
  PdpCurve curve;
  curve.feature = feature;
  curve.grid = grid;
  std::sort(curve.grid.begin(), curve.grid.end());
  FeatureMatrix working = data;
  for (double g : curve.grid) {
    working.values.col(f).setConstant(g);
    auto raw = predict_raw(model, working);
    curve.response.push_back(std::accumulate(raw.begin(), raw.end(), 0.0) /
                             static_cast<double>(raw.size()));
  }
  return curve;
}

double ranking_rank_correlation(const ImportanceRanking& a, const ImportanceRanking& b) {
  std::vector<double> ra, rb;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    for (std::size_t j = 0; j < b.entries.size(); ++j) {
      if (a.entries[i].first == b.entries[j].first) {
        ra.push_back(static_cast<double>(i));
        rb.push_back(static_cast<double>(j));
        break;
      }
    }
  }
  if (ra.size() < 2) return 0.0;
  double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
  double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da <= 0 || db <= 0) return 0.0;
  return num / std::sqrt(da * db);
}

std::string ShapMatrix::to_tsv() const {
  std::ostringstream out;
  out.precision(17);
  out << "base_value";
  for (const auto& n : feature_names) out << '\t' << n;
  out << '\n';
  for (Eigen::Index r = 0; r < phi.rows(); ++r) {
    out << base_value;
    for (Eigen::Index c = 0; c < phi.cols(); ++c) out << '\t' << phi(r, c);
    out << '\n';
  }
  return out.str();
}

std::string ImportanceRanking::to_json() const {
  nlohmann::json j;
  nlohmann::json entries_json = nlohmann::json::array();
  for (const auto& [name, score] : entries) entries_json.push_back({{"feature", name}, {"score", score}});
  j["entries"] = entries_json;
  j["provenance"] = provenance;
  return j.dump(2);
}

std::string PdpCurve::to_json() const {
  nlohmann::json j;
  j["feature"] = feature;
  j["grid"] = grid;
  j["response"] = response;
  return j.dump(2);
}

}  // namespace credscore
