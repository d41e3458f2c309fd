#ifndef CREDSCORE_TUNE_HPP
#define CREDSCORE_TUNE_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "credscore/common.hpp"
#include "credscore/gbdt.hpp"

namespace credscore {

struct Dimension {
  enum class Scale { Linear, Log };
  std::string name;
  double lower = 0, upper = 1;
  Scale scale = Scale::Linear;
  bool is_integer = false;
};

struct SearchSpace {
  std::vector<Dimension> dims;

  // Table-driven spaces for the three growth presets.
  static SearchSpace for_preset(GrowthMode mode);
};

using Params = std::map<std::string, double>;

struct Trial {
  Params params;
  double value = 0;
  enum class Status { Completed, Failed } status = Trial::Status::Completed;
};

struct StudyState {
  std::vector<Trial> trials;
  std::uint64_t seed = 0;
  double gamma = 0.25;
  int n_startup = 10;
  int n_candidates = 24;

  std::string to_json() const;
};

struct EnsembleWeights {
  std::vector<double> weights;  // >= 0, sum to one
};

struct IsotonicMap {
  std::vector<double> breakpoints;  // ascending scores
  std::vector<double> values;       // non-decreasing probabilities
};

struct LogisticCalibration {
  double a = 1.0, b = 0.0;
  bool separation_capped = false;

  double apply(double score) const { return sigmoid(a * score + b); }
};

Params suggest(const StudyState& state, const SearchSpace& space);

struct StudyResult {
  Params best_params;
  double best_value = 0;
  StudyState state;
};

StudyResult run_study(const std::function<double(const Params&)>& objective,
                      const SearchSpace& space, int n_trials, std::uint64_t seed);

EnsembleWeights optimize_weights(const std::vector<std::vector<double>>& val_preds,
                                 const std::vector<int>& labels);

IsotonicMap fit_isotonic(const std::vector<double>& scores, const std::vector<int>& labels);
double apply_isotonic(const IsotonicMap& map, double score);

LogisticCalibration fit_logistic_calibration(const std::vector<double>& scores,
                                             const std::vector<int>& default_labels);

}  // namespace credscore

#endif
