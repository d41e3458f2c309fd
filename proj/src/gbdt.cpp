#include "credscore/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "credscore/ingest.hpp"

namespace credscore {

int FeatureMatrix::column_index(const std::string& name) const {
  auto it = std::find(column_names.begin(), column_names.end(), name);
  return it == column_names.end() ? -1 : static_cast<int>(it - column_names.begin());
}

void GbdtConfig::validate() const {
  if (learning_rate <= 0) throw Error("gbdt: learning_rate must be > 0");
  if (subsample <= 0 || subsample > 1) throw Error("gbdt: subsample must be in (0, 1]");
  if (feature_fraction <= 0 || feature_fraction > 1)
    throw Error("gbdt: feature_fraction must be in (0, 1]");
  if (iterations < 1) throw Error("gbdt: iterations must be >= 1");
  if (l1 < 0 || l2 < 0) throw Error("gbdt: l1/l2 must be >= 0");
  if (histogram_bins < 2) throw Error("gbdt: histogram_bins must be >= 2");
}

double Tree::predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  int node = 0;
  while (nodes[node].feature >= 0) {
    const TreeNode& n = nodes[node];
    node = row[n.feature] <= n.threshold ? n.left : n.right;
  }
  return nodes[node].leaf_value;
}

int Tree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  int best = 0;
  while (!stack.empty()) {
    auto [node, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    if (nodes[node].feature >= 0) {
      stack.push_back({nodes[node].left, d + 1});
      stack.push_back({nodes[node].right, d + 1});
    }
  }
  return best;
}

int Tree::n_leaves() const {
  int c = 0;
  for (const auto& n : nodes)
    if (n.feature < 0) ++c;
  return c;
}

void loss_grad_hess(Loss loss, const std::vector<double>& y, const std::vector<double>& pred_raw,
                    std::vector<double>* grad, std::vector<double>* hess) {
  if (y.size() != pred_raw.size()) throw Error("loss_grad_hess: length mismatch");
  grad->resize(y.size());
  hess->resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (loss == Loss::LogLoss) {
      double p = sigmoid(pred_raw[i]);
      (*grad)[i] = p - y[i];
      (*hess)[i] = std::max(p * (1.0 - p), 1e-16);
    } else {
      (*grad)[i] = pred_raw[i] - y[i];
      (*hess)[i] = 1.0;
    }
  }
}

double loss_value(Loss loss, const std::vector<double>& y, const std::vector<double>& pred_raw) {
  double total = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (loss == Loss::LogLoss) {
      double p = std::clamp(sigmoid(pred_raw[i]), 1e-15, 1.0 - 1e-15);
      total += -(y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
    } else {
      double d = pred_raw[i] - y[i];
      total += 0.5 * d * d;
    }
  }
  return total / static_cast<double>(y.size());
}

namespace {

double soft_threshold(double g, double l1) {
  if (g > l1) return g - l1;
  if (g < -l1) return g + l1;
  return 0.0;
}

struct SplitStats {
  double g = 0, h = 0;
};

double node_score(const SplitStats& s, double l1, double l2) {
  double t = soft_threshold(s.g, l1);
  return t * t / (s.h + l2);
}

double leaf_weight(const SplitStats& s, double l1, double l2) {
  return -soft_threshold(s.g, l1) / (s.h + l2);
}

struct Candidate {
  int feature = -1;
  int bin = -1;  // split between bin and bin+1; threshold = edges[feature][bin]
  double gain = 0.0;
  SplitStats left, right;
};

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<std::uint16_t>>& binned,
              const std::vector<std::vector<double>>& edges, const std::vector<double>& grad,
              const std::vector<double>& hess, const GbdtConfig& cfg,
              const std::vector<int>& active_features)
      : binned_(binned), edges_(edges), grad_(grad), hess_(hess), cfg_(cfg),
        active_features_(active_features) {}

  // Histogram of (G, H) per bin for one feature over a row set.
  std::vector<SplitStats> histogram(int feature, const std::vector<std::size_t>& rows) const {
    std::vector<SplitStats> bins(edges_[feature].size() + 1);
    const auto& col = binned_[feature];
    for (std::size_t r : rows) {
      auto& b = bins[col[r]];
      b.g += grad_[r];
      b.h += hess_[r];
    }
    return bins;
  }

  // Best split for one node; scans features ascending, bins ascending, so the
  // lowest feature index / threshold wins gain ties.
  Candidate best_split(const std::vector<std::size_t>& rows, const SplitStats& parent) const {
    Candidate best;
    double parent_score = node_score(parent, cfg_.l1, cfg_.l2);
    std::vector<std::vector<SplitStats>> hists(active_features_.size());
    auto build_range = [&](std::size_t from, std::size_t to) {
      for (std::size_t i = from; i < to; ++i) hists[i] = histogram(active_features_[i], rows);
    };
    if (cfg_.n_threads > 1 && active_features_.size() > 1) {
      std::size_t n_threads = std::min<std::size_t>(cfg_.n_threads, active_features_.size());
      std::vector<std::thread> pool;
      std::size_t chunk = (active_features_.size() + n_threads - 1) / n_threads;
      for (std::size_t t = 0; t < n_threads; ++t) {
        std::size_t from = t * chunk;
        std::size_t to = std::min(from + chunk, active_features_.size());
        if (from < to) pool.emplace_back(build_range, from, to);
      }
      for (auto& th : pool) th.join();
    } else {
      build_range(0, active_features_.size());
    }

    for (std::size_t fi = 0; fi < active_features_.size(); ++fi) {
      int feature = active_features_[fi];
      const auto& hist = hists[fi];
      SplitStats left;
      for (std::size_t b = 0; b + 1 < hist.size(); ++b) {
        left.g += hist[b].g;
        left.h += hist[b].h;
        SplitStats right{parent.g - left.g, parent.h - left.h};
        if (left.h < cfg_.min_child_weight || right.h < cfg_.min_child_weight) continue;
        double gain = 0.5 * (node_score(left, cfg_.l1, cfg_.l2) +
                             node_score(right, cfg_.l1, cfg_.l2) - parent_score);
        if (gain > best.gain) {
          best.feature = feature;
          best.bin = static_cast<int>(b);
          best.gain = gain;
          best.left = left;
          best.right = right;
        }
      }
    }
    return best;
  }

  SplitStats totals(const std::vector<std::size_t>& rows) const {
    SplitStats s;
    for (std::size_t r : rows) {
      s.g += grad_[r];
      s.h += hess_[r];
    }
    return s;
  }

  void partition(int feature, int bin, const std::vector<std::size_t>& rows,
                 std::vector<std::size_t>* left, std::vector<std::size_t>* right) const {
    const auto& col = binned_[feature];
    for (std::size_t r : rows)
      (col[r] <= static_cast<std::uint16_t>(bin) ? left : right)->push_back(r);
  }

  double threshold_of(int feature, int bin) const { return edges_[feature][bin]; }

  Tree build(const std::vector<std::size_t>& rows) const {
    switch (cfg_.growth_mode) {
      case GrowthMode::DepthWise: return build_depthwise(rows);
      case GrowthMode::LeafWise: return build_leafwise(rows);
      case GrowthMode::Symmetric: return build_symmetric(rows);
    }
    throw Error("gbdt: unknown growth mode");
  }

 private:
  Tree build_depthwise(const std::vector<std::size_t>& rows) const {
    Tree tree;
    struct Item {
      int node;
      int depth;
      std::vector<std::size_t> rows;
      SplitStats stats;
    };
    tree.nodes.push_back({});
    std::vector<Item> level{{0, 0, rows, totals(rows)}};
    while (!level.empty()) {
      std::vector<Item> next;
      for (auto& item : level) {
        Candidate cand;
        if (item.depth < cfg_.max_depth) cand = best_split(item.rows, item.stats);
        if (cand.feature >= 0 && cand.gain > 0) {
          std::vector<std::size_t> lrows, rrows;
          partition(cand.feature, cand.bin, item.rows, &lrows, &rrows);
          int li = static_cast<int>(tree.nodes.size());
          tree.nodes.push_back({});
          tree.nodes.push_back({});
          auto& n = tree.nodes[item.node];
          n.feature = cand.feature;
          n.threshold = threshold_of(cand.feature, cand.bin);
          n.left = li;
          n.right = li + 1;
          next.push_back({li, item.depth + 1, std::move(lrows), cand.left});
          next.push_back({li + 1, item.depth + 1, std::move(rrows), cand.right});
        } else {
          tree.nodes[item.node].leaf_value = leaf_weight(item.stats, cfg_.l1, cfg_.l2);
        }
      }
      level = std::move(next);
    }
    return tree;
  }

  Tree build_leafwise(const std::vector<std::size_t>& rows) const {
    Tree tree;
    tree.nodes.push_back({});
    struct Leaf {
      int node;
      std::vector<std::size_t> rows;
      SplitStats stats;
      Candidate cand;
    };
    std::vector<Leaf> leaves;
    leaves.push_back({0, rows, totals(rows), {}});
    leaves[0].cand = best_split(leaves[0].rows, leaves[0].stats);
    int n_leaves = 1;
    while (n_leaves < cfg_.num_leaves) {
      // Best-gain leaf next; earlier-created leaf wins ties.
      int best = -1;
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        const auto& cand = leaves[i].cand;
        if (cand.feature < 0 || cand.gain <= 0) continue;
        if (best < 0 || cand.gain > leaves[best].cand.gain) best = static_cast<int>(i);
      }
      if (best < 0) break;
      Leaf leaf = std::move(leaves[best]);
      leaves.erase(leaves.begin() + best);
      std::vector<std::size_t> lrows, rrows;
      partition(leaf.cand.feature, leaf.cand.bin, leaf.rows, &lrows, &rrows);
      int li = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      auto& n = tree.nodes[leaf.node];
      n.feature = leaf.cand.feature;
      n.threshold = threshold_of(leaf.cand.feature, leaf.cand.bin);
      n.left = li;
      n.right = li + 1;
      Leaf lchild{li, std::move(lrows), leaf.cand.left, {}};
      Leaf rchild{li + 1, std::move(rrows), leaf.cand.right, {}};
      lchild.cand = best_split(lchild.rows, lchild.stats);
      rchild.cand = best_split(rchild.rows, rchild.stats);
      leaves.push_back(std::move(lchild));
      leaves.push_back(std::move(rchild));
      ++n_leaves;
    }
    for (const auto& leaf : leaves)
      tree.nodes[leaf.node].leaf_value = leaf_weight(leaf.stats, cfg_.l1, cfg_.l2);
    return tree;
  }

  // Oblivious growth: one (feature, threshold) per level, shared by every node.
  Tree build_symmetric(const std::vector<std::size_t>& rows) const {
    Tree tree;
    tree.nodes.push_back({});
    struct Item {
      int node;
      std::vector<std::size_t> rows;
      SplitStats stats;
    };
    std::vector<Item> level;
    level.push_back({0, rows, totals(rows)});
    for (int depth = 0; depth < cfg_.max_depth; ++depth) {
      // Score every (feature, bin) by total gain across the level.
      int best_feature = -1, best_bin = -1;
      double best_gain = 0.0;
      std::vector<std::vector<std::vector<SplitStats>>> hists(level.size());
      for (std::size_t n = 0; n < level.size(); ++n) {
        hists[n].resize(active_features_.size());
        for (std::size_t fi = 0; fi < active_features_.size(); ++fi)
          hists[n][fi] = histogram(active_features_[fi], level[n].rows);
      }
      for (std::size_t fi = 0; fi < active_features_.size(); ++fi) {
        int feature = active_features_[fi];
        std::size_t n_bins = edges_[feature].size() + 1;
        std::vector<SplitStats> lefts(level.size());
        for (std::size_t b = 0; b + 1 < n_bins; ++b) {
          double total_gain = 0.0;
          for (std::size_t n = 0; n < level.size(); ++n) {
            lefts[n].g += hists[n][fi][b].g;
            lefts[n].h += hists[n][fi][b].h;
            SplitStats right{level[n].stats.g - lefts[n].g, level[n].stats.h - lefts[n].h};
            if (lefts[n].h < cfg_.min_child_weight || right.h < cfg_.min_child_weight) continue;
            double gain = 0.5 * (node_score(lefts[n], cfg_.l1, cfg_.l2) +
                                 node_score(right, cfg_.l1, cfg_.l2) -
                                 node_score(level[n].stats, cfg_.l1, cfg_.l2));
            if (gain > 0) total_gain += gain;
          }
          if (total_gain > best_gain) {
            best_gain = total_gain;
            best_feature = feature;
            best_bin = static_cast<int>(b);
          }
        }
        // reset accumulated lefts for next feature
        std::fill(lefts.begin(), lefts.end(), SplitStats{});
      }
      if (best_feature < 0 || best_gain <= 0) break;
      std::vector<Item> next;
      for (auto& item : level) {
        std::vector<std::size_t> lrows, rrows;
        partition(best_feature, best_bin, item.rows, &lrows, &rrows);
        int li = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        tree.nodes.push_back({});
        auto& n = tree.nodes[item.node];
        n.feature = best_feature;
        n.threshold = threshold_of(best_feature, best_bin);
        n.left = li;
        n.right = li + 1;
        next.push_back({li, std::move(lrows), {}});
        next.push_back({li + 1, std::move(rrows), {}});
        next[next.size() - 2].stats = totals(next[next.size() - 2].rows);
        next[next.size() - 1].stats = totals(next[next.size() - 1].rows);
      }
      level = std::move(next);
    }
    for (const auto& item : level)
      tree.nodes[item.node].leaf_value = leaf_weight(item.stats, cfg_.l1, cfg_.l2);
    return tree;
  }

  const std::vector<std::vector<std::uint16_t>>& binned_;
  const std::vector<std::vector<double>>& edges_;
  const std::vector<double>& grad_;
  const std::vector<double>& hess_;
  const GbdtConfig& cfg_;
  const std::vector<int>& active_features_;
};

// Fill training-set covers by routing every row through the tree.
void compute_covers(Tree* tree, const FeatureMatrix& train) {
  for (auto& n : tree->nodes) n.cover = 0;
  for (Eigen::Index r = 0; r < train.rows(); ++r) {
    int node = 0;
    tree->nodes[node].cover += 1;
    while (tree->nodes[node].feature >= 0) {
      const TreeNode& n = tree->nodes[node];
      node = train.values(r, n.feature) <= n.threshold ? n.left : n.right;
      tree->nodes[node].cover += 1;
    }
  }
}

}  // namespace

FitResult fit(const FeatureMatrix& train, const std::vector<double>& y, const GbdtConfig& config,
              const FeatureMatrix* val, const std::vector<double>* y_val) {
  config.validate();
  const std::size_t n = static_cast<std::size_t>(train.rows());
  const int m = static_cast<int>(train.cols());
  if (n != y.size() || n < 2) throw Error("gbdt fit: train rows must equal |y| and be >= 2");
  if (config.early_stopping_rounds > 0 && (val == nullptr || y_val == nullptr))
    throw Error("gbdt fit: early stopping requires a validation set");
  if (!train.values.allFinite()) throw Error("gbdt fit: NaN/Inf in features (preprocessor contract violation)");

  FitResult res;
  res.model.config = config;
  res.model.feature_names = train.column_names;

  double mean_y = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  if (config.loss == Loss::LogLoss) {
    bool single_class = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
    double p = std::clamp(mean_y, 1e-15, 1.0 - 1e-15);
    res.model.base_score = std::log(p / (1.0 - p));
    if (single_class) {
      std::cerr << "warning: single-class targets, model is constant base score\n";
      res.log.stopping_reason = "degenerate targets";
      res.model.best_iteration = 0;
      return res;
    }
  } else {
    res.model.base_score = mean_y;
  }

  // Quantile bin edges fixed from the training fold.
  std::vector<std::vector<double>> edges(m);
  std::vector<std::vector<std::uint16_t>> binned(m, std::vector<std::uint16_t>(n));
  for (int f = 0; f < m; ++f) {
    std::vector<double> col(n);
    for (std::size_t r = 0; r < n; ++r) col[r] = train.values(r, f);
    std::vector<double> cand;
    for (int b = 1; b < config.histogram_bins; ++b)
      cand.push_back(quantile_linear(col, static_cast<double>(b) / config.histogram_bins));
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    edges[f] = std::move(cand);
    for (std::size_t r = 0; r < n; ++r) {
      auto it = std::lower_bound(edges[f].begin(), edges[f].end(), col[r]);
      binned[f][r] = static_cast<std::uint16_t>(it - edges[f].begin());
    }
  }

  std::vector<double> preds(n, res.model.base_score);
  std::vector<double> val_preds;
  if (val != nullptr) val_preds.assign(static_cast<std::size_t>(val->rows()), res.model.base_score);

  Rng rng(config.seed);
  std::vector<double> grad, hess;
  double best_val = std::numeric_limits<double>::infinity();
  int best_iter = 0, rounds_since_best = 0;

  for (int iter = 0; iter < config.iterations; ++iter) {
    loss_grad_hess(config.loss, y, preds, &grad, &hess);

    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    if (config.subsample < 1.0) {
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(std::max<std::size_t>(1, static_cast<std::size_t>(
                                               std::floor(config.subsample * static_cast<double>(n)))));
      std::sort(rows.begin(), rows.end());
    }
    std::vector<int> features(m);
    std::iota(features.begin(), features.end(), 0);
    if (config.feature_fraction < 1.0) {
      std::shuffle(features.begin(), features.end(), rng);
      features.resize(std::max<std::size_t>(
          1, static_cast<std::size_t>(std::ceil(config.feature_fraction * static_cast<double>(m)))));
      std::sort(features.begin(), features.end());
    }

    TreeBuilder builder(binned, edges, grad, hess, config, features);
    Tree tree = builder.build(rows);
    compute_covers(&tree, train);

    for (std::size_t r = 0; r < n; ++r)
      preds[r] += config.learning_rate * tree.predict_row(train.values.row(static_cast<Eigen::Index>(r)));
    if (val != nullptr)
      for (Eigen::Index r = 0; r < val->rows(); ++r)
        val_preds[static_cast<std::size_t>(r)] +=
            config.learning_rate * tree.predict_row(val->values.row(r));

    res.model.trees.push_back(std::move(tree));
    res.log.train_loss.push_back(loss_value(config.loss, y, preds));
    if (val != nullptr) {
      double vl = loss_value(config.loss, *y_val, val_preds);
      res.log.val_loss.push_back(vl);
      if (vl < best_val) {
        best_val = vl;
        best_iter = iter + 1;
        rounds_since_best = 0;
      } else {
        ++rounds_since_best;
      }
      if (config.early_stopping_rounds > 0 && rounds_since_best >= config.early_stopping_rounds) {
        res.log.stopping_reason = "early stopping at iteration " + std::to_string(iter + 1);
        break;
      }
    }
  }
  if (res.log.stopping_reason.empty()) res.log.stopping_reason = "completed all iterations";
  res.model.best_iteration =
      (val != nullptr && config.early_stopping_rounds > 0) ? best_iter
                                                           : static_cast<int>(res.model.trees.size());
  return res;
}

std::vector<double> predict_raw(const GbdtModel& model, const FeatureMatrix& rows) {
  if (rows.column_names != model.feature_names)
    throw Error("predict_raw: feature columns do not match the model");
  std::vector<double> out(static_cast<std::size_t>(rows.rows()), model.base_score);
  for (int t = 0; t < model.best_iteration && t < static_cast<int>(model.trees.size()); ++t)
    for (Eigen::Index r = 0; r < rows.rows(); ++r)
      out[static_cast<std::size_t>(r)] +=
          model.config.learning_rate * model.trees[t].predict_row(rows.values.row(r));
  return out;
}

std::vector<double> predict_proba(const GbdtModel& model, const FeatureMatrix& rows) {
  if (model.config.loss != Loss::LogLoss)
    throw Error("predict_proba: model was not trained with log loss");
  auto raw = predict_raw(model, rows);
  for (auto& v : raw) v = sigmoid(v);
  return raw;
}

std::string GbdtModel::to_json() const {
  nlohmann::json j;
  j["format_version"] = 1;
  nlohmann::json c;
  c["growth_mode"] = config.growth_mode == GrowthMode::Symmetric
                         ? "symmetric"
                         : (config.growth_mode == GrowthMode::LeafWise ? "leaf_wise" : "depth_wise");
  c["loss"] = config.loss == Loss::LogLoss ? "log_loss" : "squared_error";
  c["iterations"] = config.iterations;
  c["learning_rate"] = config.learning_rate;
  c["max_depth"] = config.max_depth;
  c["num_leaves"] = config.num_leaves;
  c["subsample"] = config.subsample;
  c["feature_fraction"] = config.feature_fraction;
  c["l1"] = config.l1;
  c["l2"] = config.l2;
  c["min_child_weight"] = config.min_child_weight;
  c["early_stopping_rounds"] = config.early_stopping_rounds;
  c["histogram_bins"] = config.histogram_bins;
  c["seed"] = config.seed;
  j["config"] = c;
  j["base_score"] = base_score;
  j["best_iteration"] = best_iteration;
  j["feature_names"] = feature_names;
  nlohmann::json jt = nlohmann::json::array();
  for (const auto& tree : trees) {
    nlohmann::json jn = nlohmann::json::array();
    for (const auto& n : tree.nodes)
      jn.push_back({n.feature, n.threshold, n.left, n.right, n.leaf_value, n.cover});
    jt.push_back(jn);
  }
  j["trees"] = jt;
  return j.dump();
}

GbdtModel GbdtModel::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  GbdtModel m;
  const auto& c = j.at("config");
  std::string gm = c.at("growth_mode").get<std::string>();
  m.config.growth_mode = gm == "symmetric" ? GrowthMode::Symmetric
                                           : (gm == "leaf_wise" ? GrowthMode::LeafWise
                                                                : GrowthMode::DepthWise);
  m.config.loss = c.at("loss").get<std::string>() == "log_loss" ? Loss::LogLoss : Loss::SquaredError;
  m.config.iterations = c.at("iterations").get<int>();
  m.config.learning_rate = c.at("learning_rate").get<double>();
  m.config.max_depth = c.at("max_depth").get<int>();
  m.config.num_leaves = c.at("num_leaves").get<int>();
  m.config.subsample = c.at("subsample").get<double>();
  m.config.feature_fraction = c.at("feature_fraction").get<double>();
  m.config.l1 = c.at("l1").get<double>();
  m.config.l2 = c.at("l2").get<double>();
  m.config.min_child_weight = c.at("min_child_weight").get<double>();
  m.config.early_stopping_rounds = c.at("early_stopping_rounds").get<int>();
  m.config.histogram_bins = c.at("histogram_bins").get<int>();
  m.config.seed = c.at("seed").get<std::uint64_t>();
  m.base_score = j.at("base_score").get<double>();
  m.best_iteration = j.at("best_iteration").get<int>();
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  for (const auto& jt : j.at("trees")) {
    Tree tree;
    for (const auto& jn : jt) {
      TreeNode n;
      n.feature = jn[0].get<int>();
      n.threshold = jn[1].get<double>();
      n.left = jn[2].get<int>();
      n.right = jn[3].get<int>();
      n.leaf_value = jn[4].get<double>();
      n.cover = jn[5].get<double>();
      tree.nodes.push_back(n);
    }
    m.trees.push_back(std::move(tree));
  }
  return m;
}

std::string GbdtModel::hash() const { return hex64(fnv1a64(to_json())); }

}  // namespace credscore
