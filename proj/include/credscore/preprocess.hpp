#ifndef CREDSCORE_PREPROCESS_HPP
#define CREDSCORE_PREPROCESS_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "credscore/gbdt.hpp"
#include "credscore/ingest.hpp"

namespace credscore {

struct PreprocessPolicy {
  double low_missing_band = 0.05;
  double high_missing_band = 0.25;
  int knn_k = 5;
  double winsor_lo = 0.01;
  double winsor_hi = 0.99;
  double log_skew_threshold = 2.0;
  int woe_cardinality_threshold = 10;
  double drop_auc_margin = 0.02;
  // Categorical features with a declared order use label encoding.
  std::map<std::string, std::vector<std::string>> ordered_domains;

  void validate() const;
};

struct AuditLog {
  std::vector<std::size_t> exact_duplicates_removed;
  struct NearDuplicate {
    std::string firm_id, agency;
    Date period;
    std::size_t kept;
    std::vector<std::size_t> dropped;
  };
  std::vector<NearDuplicate> near_duplicates_resolved;
  std::vector<std::pair<std::string, std::string>> dropped_features;  // (feature, reason)
  std::vector<std::string> warnings;

  std::string to_json() const;
};

struct FittedPreprocessor {
  enum class Imputation { Median, Knn, Dropped };
  struct NumericPlan {
    Imputation imputation = Imputation::Median;
    std::string drop_reason;
    double median = 0;
    double winsor_lo = 0, winsor_hi = 0;
    bool log_applied = false;
    double mu = 0, sigma = 1;
    double donor_mean = 0, donor_std = 1;  // raw-scale stats for KNN distance
  };
  enum class Encoding { Label, OneHot, Woe };
  struct CategoricalPlan {
    Encoding encoding = Encoding::OneHot;
    std::vector<std::string> categories;          // Label order / OneHot columns
    std::map<std::string, double> woe;            // Woe table
    double default_woe = 0;                       // unseen category fallback
  };

  std::vector<std::string> numeric_names;
  std::vector<NumericPlan> numeric;
  std::vector<std::string> categorical_names;
  std::vector<CategoricalPlan> categorical;
  int knn_k = 5;
  // Raw training rows retained as KNN donors (NaN marks missing).
  Eigen::MatrixXd donor_rows;
  std::string fitted_on;  // fold identifier + data hash
  PreprocessPolicy policy;

  std::vector<std::string> output_columns() const;
  std::string to_json() const;
  static FittedPreprocessor from_json(const std::string& text);
  std::string hash() const;
};

std::pair<ObservationSet, AuditLog> deduplicate(const ObservationSet& obs);
ObservationSet derive_features(const ObservationSet& obs, AuditLog* audit = nullptr);

std::pair<FittedPreprocessor, AuditLog> fit_preprocessor(
    const ObservationSet& train, const PreprocessPolicy& policy,
    const std::vector<int>* binary_targets = nullptr, const std::string& fold_id = "");

FeatureMatrix apply_preprocessor(const FittedPreprocessor& fp, const ObservationSet& obs);

}  // namespace credscore

#endif
