#include "credscore/folds.hpp"

#include <algorithm>
#include <map>

#include <json.hpp>

namespace credscore {

int PeriodIndex::position(int period) const {
  auto it = std::lower_bound(periods.begin(), periods.end(), period);
  if (it == periods.end() || *it != period) return -1;
  return static_cast<int>(it - periods.begin());
}

PeriodIndex build_period_index(const ObservationSet& obs) {
  std::map<int, std::vector<std::size_t>> by_year;
  PeriodIndex idx;
  for (std::size_t i = 0; i < obs.records.size(); ++i) {
    if (obs.records[i].period_valid)
      by_year[obs.records[i].period.year].push_back(i);
    else
      idx.excluded_rows.push_back(i);
  }
  for (auto& [year, rows] : by_year) {
    idx.periods.push_back(year);
    idx.rows_per_period.push_back(std::move(rows));
  }
  return idx;
}

TemporalFoldPlan plan_folds(const PeriodIndex& periods, int k) {
  const int n = static_cast<int>(periods.periods.size());
  if (k < 1) throw Error("plan_folds: k must be >= 1");
  if (n < k + 2)
    throw Error("plan_folds: need at least " + std::to_string(k + 2) +
                " distinct periods, have " + std::to_string(n));

  TemporalFoldPlan plan;
  plan.final_holdout = periods.periods.back();
  // Feasible origins are positions with two following periods; keep the k most recent.
  const int n_origins = n - 2;
  const int first = n_origins - k;
  for (int p = first; p < n_origins; ++p) {
    TemporalFold fold;
    for (int q = 0; q <= p; ++q) fold.train_periods.push_back(periods.periods[q]);
    fold.val_period = periods.periods[p + 1];
    fold.test_period = periods.periods[p + 2];
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

LeakageReport check_leakage(const TemporalFoldPlan& plan, const PeriodIndex& periods) {
  LeakageReport rep;
  for (std::size_t i = 0; i < plan.folds.size(); ++i) {
    const auto& f = plan.folds[i];
    const std::string tag = "fold " + std::to_string(i);
    for (int tp : f.train_periods) {
      if (tp >= f.val_period)
        rep.violations.push_back(tag + ": train period " + std::to_string(tp) +
                                 " >= val period " + std::to_string(f.val_period));
      // Tuning data (train/val) must stay strictly before the final holdout;
      // the holdout may appear only as a fold's test block.
      if (tp >= plan.final_holdout)
        rep.violations.push_back(tag + ": train period " + std::to_string(tp) +
                                 " touches final holdout " + std::to_string(plan.final_holdout));
    }
    if (f.val_period >= f.test_period)
      rep.violations.push_back(tag + ": val period " + std::to_string(f.val_period) +
                               " >= test period " + std::to_string(f.test_period));
    if (f.val_period >= plan.final_holdout)
      rep.violations.push_back(tag + ": val period " + std::to_string(f.val_period) +
                               " touches final holdout " + std::to_string(plan.final_holdout));
  }
  (void)periods;
  return rep;
}

FoldSplit materialize_fold(const TemporalFold& fold, const PeriodIndex& periods) {
  FoldSplit split;
  for (int tp : fold.train_periods) {
    int pos = periods.position(tp);
    if (pos < 0) continue;
    const auto& rows = periods.rows_per_period[pos];
    split.train_rows.insert(split.train_rows.end(), rows.begin(), rows.end());
  }
  if (int pos = periods.position(fold.val_period); pos >= 0)
    split.val_rows = periods.rows_per_period[pos];
  if (int pos = periods.position(fold.test_period); pos >= 0)
    split.test_rows = periods.rows_per_period[pos];
  return split;
}

std::string TemporalFoldPlan::to_json(const PeriodIndex& periods) const {
  nlohmann::json j;
  j["final_holdout"] = final_holdout;
  nlohmann::json jf = nlohmann::json::array();
  for (const auto& f : folds) {
    auto split = materialize_fold(f, periods);
    nlohmann::json e;
    e["train_periods"] = f.train_periods;
    e["val_period"] = f.val_period;
    e["test_period"] = f.test_period;
    e["n_train"] = split.train_rows.size();
    e["n_val"] = split.val_rows.size();
    e["n_test"] = split.test_rows.size();
    jf.push_back(e);
  }
  j["folds"] = jf;
  return j.dump(2);
}

}  // namespace credscore
