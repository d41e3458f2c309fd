#ifndef CREDSCORE_METRICS_HPP
#define CREDSCORE_METRICS_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "credscore/common.hpp"

namespace credscore {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::int64_t total() const { return tp + fp + tn + fn; }
};

struct ClassificationReport {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, auc = 0, brier = 0, kappa = 0;
  double threshold = 0.5;
};

struct RegressionReport {
  double rmse = 0, mae = 0, r2 = 0;
  bool r2_defined = true;
};

struct PsiReport {
  double psi = 0;
  bool flagged = false;  // strictly > 0.25
  std::vector<double> bin_edges;
};

struct DeLongResult {
  double auc_a = 0, auc_b = 0;
  double var_diff = 0;
  double z = 0;
  double p_value = 1.0;
};

struct BootstrapCI {
  double point = 0, lower = 0, upper = 0;
  double level = 0.95;
  std::size_t n_resamples = 0;
  std::size_t n_skipped = 0;
};

ConfusionCounts confusion(const std::vector<int>& labels, const std::vector<double>& probs,
                          double threshold = 0.5);
double kappa(const ConfusionCounts& c);
double auc(const std::vector<int>& labels, const std::vector<double>& scores);
// Trapezoidal ROC integration; oracle counterpart of the Mann-Whitney form.
double auc_trapezoid(const std::vector<int>& labels, const std::vector<double>& scores);

ClassificationReport classification_metrics(const std::vector<int>& labels,
                                            const std::vector<double>& probs,
                                            double threshold = 0.5);
RegressionReport regression_metrics(const std::vector<double>& y, const std::vector<double>& pred);
DeLongResult delong_test(const std::vector<int>& labels, const std::vector<double>& scores_a,
                         const std::vector<double>& scores_b);
BootstrapCI bootstrap_ci(const std::function<double(const std::vector<std::size_t>&)>& stat,
                         std::size_t n_rows, std::size_t n_resamples, std::uint64_t seed);
// Convenience bootstrap for AUC; redraws single-class resamples (10 retries, then skip).
BootstrapCI bootstrap_auc_ci(const std::vector<int>& labels, const std::vector<double>& scores,
                             std::size_t n_resamples, std::uint64_t seed);
BootstrapCI bootstrap_rmse_ci(const std::vector<double>& y, const std::vector<double>& pred,
                              std::size_t n_resamples, std::uint64_t seed);

PsiReport psi(const std::vector<double>& expected, const std::vector<double>& actual,
              int n_bins = 10);
// PSI from pre-binned proportions (boundary-convention checks).
PsiReport psi_from_proportions(const std::vector<double>& expected_props,
                               const std::vector<double>& actual_props);

double normal_cdf(double x);

}  // namespace credscore

#endif
