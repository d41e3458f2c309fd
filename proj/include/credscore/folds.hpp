#ifndef CREDSCORE_FOLDS_HPP
#define CREDSCORE_FOLDS_HPP

#include <string>
#include <vector>

#include "credscore/ingest.hpp"

namespace credscore {

// Calendar-year period index; rows with unparseable dates are excluded and listed.
struct PeriodIndex {
  std::vector<int> periods;  // strictly increasing years
  std::vector<std::vector<std::size_t>> rows_per_period;
  std::vector<std::size_t> excluded_rows;

  int position(int period) const;  // -1 when absent
};

struct TemporalFold {
  std::vector<int> train_periods;  // all periods <= t
  int val_period = 0;              // t+1
  int test_period = 0;             // t+2
};

struct TemporalFoldPlan {
  std::vector<TemporalFold> folds;
  int final_holdout = 0;  // latest period

  std::string to_json(const PeriodIndex& periods) const;
};

struct LeakageReport {
  std::vector<std::string> violations;
  bool passed() const { return violations.empty(); }
};

struct FoldSplit {
  std::vector<std::size_t> train_rows, val_rows, test_rows;
};

PeriodIndex build_period_index(const ObservationSet& obs);
TemporalFoldPlan plan_folds(const PeriodIndex& periods, int k);
LeakageReport check_leakage(const TemporalFoldPlan& plan, const PeriodIndex& periods);
FoldSplit materialize_fold(const TemporalFold& fold, const PeriodIndex& periods);

}  // namespace credscore

#endif
