#ifndef CREDSCORE_EXPLAIN_HPP
#define CREDSCORE_EXPLAIN_HPP

#include <Eigen/Core>
#include <string>
#include <vector>

#include "credscore/gbdt.hpp"

namespace credscore {

struct ShapMatrix {
  double base_value = 0.0;
  Eigen::MatrixXd phi;  // n x m attributions in raw-score space
  std::vector<std::string> feature_names;

  std::string to_tsv() const;
};

struct ImportanceRanking {
  std::vector<std::pair<std::string, double>> entries;  // descending scores
  std::vector<std::string> provenance;

  std::string to_json() const;
};

struct PdpCurve {
  std::string feature;
  std::vector<double> grid;
  std::vector<double> response;

  std::string to_json() const;
};

// Exact Shapley values for the ensemble via the path-weight recursion,
// background distribution given by training-time leaf covers.
ShapMatrix tree_shap(const GbdtModel& model, const FeatureMatrix& rows);

// Cover-weighted expectation of one tree restricted to a feature subset;
// test oracle for small models, exponential in the subset lattice.
double tree_expectation_subset(const Tree& tree, double learning_rate,
                               const Eigen::Ref<const Eigen::RowVectorXd>& row,
                               const std::vector<bool>& in_subset);

ImportanceRanking aggregate_importance(const std::vector<ShapMatrix>& shap_sets);

enum class ImportanceMetric { Auc, Rmse };

ImportanceRanking permutation_importance(const GbdtModel& model, const FeatureMatrix& data,
                                         const std::vector<double>& labels, ImportanceMetric metric,
                                         int repeats, std::uint64_t seed);

PdpCurve partial_dependence(const GbdtModel& model, const std::string& feature,
                            const std::vector<double>& grid, const FeatureMatrix& data);

// Spearman rank correlation between two importance rankings over shared features.
double ranking_rank_correlation(const ImportanceRanking& a, const ImportanceRanking& b);

}  // namespace credscore

#endif
