#ifndef CREDSCORE_RUNNER_HPP
#define CREDSCORE_RUNNER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "credscore/folds.hpp"
#include "credscore/gbdt.hpp"
#include "credscore/ingest.hpp"
#include "credscore/preprocess.hpp"
#include "credscore/targets.hpp"
#include "credscore/tune.hpp"

namespace credscore {

enum class RunTarget { Binary, Continuous, Both };

struct RunConfig {
  std::string data_path;
  std::string schema_path;
  char delimiter = ',';
  std::vector<std::string> agencies;  // empty = every agency in the data
  RunTarget target = RunTarget::Both;
  int k_folds = 5;
  std::vector<GrowthMode> presets = {GrowthMode::Symmetric, GrowthMode::LeafWise,
                                     GrowthMode::DepthWise};
  int trials_per_study = 50;
  std::uint64_t master_seed = 42;
  std::string out_dir = "out";
  PreprocessPolicy policy;
  int n_threads = 1;

  static RunConfig from_json_file(const std::string& path);
  nlohmann::json to_json() const;
};

struct RunManifest {
  nlohmann::json doc;

  // Hash over everything except wall-clock timings.
  std::string hash() const;
  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);
};

struct ReportBundle {
  std::string classification_table;  // aligned text, agency x train/test acc + auc
  std::string regression_table;      // aligned text, agency x train/test rmse + r2
  nlohmann::json classification_json;
  nlohmann::json regression_json;
};

RunManifest run_experiment(const RunConfig& config);
ReportBundle emit_report(const RunManifest& manifest, const std::string& out_dir);

// Shared by the CLI: per-agency observation subset after dedup + derivation.
ObservationSet agency_subset(const ObservationSet& obs, const std::string& agency);
ObservationSet select_rows(const ObservationSet& obs, const std::vector<std::size_t>& rows);

}  // namespace credscore

#endif
