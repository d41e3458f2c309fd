#ifndef CREDSCORE_GBDT_HPP
#define CREDSCORE_GBDT_HPP

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "credscore/common.hpp"

namespace credscore {

// Dense, fully imputed design matrix. Row keys identify (firm, agency, period).
struct FeatureMatrix {
  struct RowKey {
    std::string firm_id, agency;
    Date period;
  };
  std::vector<std::string> column_names;
  Eigen::MatrixXd values;  // n x m
  std::vector<RowKey> row_keys;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  int column_index(const std::string& name) const;  // -1 when absent
};

enum class GrowthMode { Symmetric, LeafWise, DepthWise };
enum class Loss { LogLoss, SquaredError };

struct GbdtConfig {
  GrowthMode growth_mode = GrowthMode::DepthWise;
  Loss loss = Loss::LogLoss;
  int iterations = 100;
  double learning_rate = 0.1;
  int max_depth = 6;     // Symmetric / DepthWise
  int num_leaves = 31;   // LeafWise
  double subsample = 1.0;
  double feature_fraction = 1.0;
  double l1 = 0.0;
  double l2 = 1.0;
  double min_child_weight = 1.0;
  int early_stopping_rounds = 0;
  int histogram_bins = 64;
  std::uint64_t seed = 0;
  int n_threads = 1;

  void validate() const;
};

struct TreeNode {
  int feature = -1;        // -1 marks a leaf
  double threshold = 0.0;  // go left when x <= threshold
  int left = -1, right = -1;
  double leaf_value = 0.0;
  double cover = 0.0;  // training-row count through this node
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  int depth() const;
  int n_leaves() const;
};

struct GbdtModel {
  GbdtConfig config;
  double base_score = 0.0;
  std::vector<Tree> trees;
  int best_iteration = 0;  // prediction uses trees[0..best_iteration)
  std::vector<std::string> feature_names;

  std::string to_json() const;
  static GbdtModel from_json(const std::string& text);
  std::string hash() const;
};

struct TrainLog {
  std::vector<double> train_loss, val_loss;
  std::string stopping_reason;
};

struct FitResult {
  GbdtModel model;
  TrainLog log;
};

void loss_grad_hess(Loss loss, const std::vector<double>& y, const std::vector<double>& pred_raw,
                    std::vector<double>* grad, std::vector<double>* hess);
double loss_value(Loss loss, const std::vector<double>& y, const std::vector<double>& pred_raw);

FitResult fit(const FeatureMatrix& train, const std::vector<double>& y, const GbdtConfig& config,
              const FeatureMatrix* val = nullptr, const std::vector<double>* y_val = nullptr);

std::vector<double> predict_raw(const GbdtModel& model, const FeatureMatrix& rows);
std::vector<double> predict_proba(const GbdtModel& model, const FeatureMatrix& rows);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace credscore

#endif
