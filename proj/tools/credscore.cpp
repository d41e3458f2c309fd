#include <algorithm>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "credscore/runner.hpp"
#include "credscore/targets.hpp"

using namespace credscore;

namespace {

struct Cli {
  std::string config_path;
  std::string agency;
  std::string target;
  int trials = -1;
  std::int64_t seed = -1;
  std::string out;
};

RunConfig load_config(const Cli& cli) {
  if (cli.config_path.empty()) throw CLI::ValidationError("--config is required");
  RunConfig config = RunConfig::from_json_file(cli.config_path);
  if (!cli.agency.empty()) config.agencies = {cli.agency};
  if (!cli.target.empty())
    config.target = cli.target == "binary" ? RunTarget::Binary : RunTarget::Continuous;
  if (cli.trials >= 0) config.trials_per_study = cli.trials;
  if (cli.seed >= 0) config.master_seed = static_cast<std::uint64_t>(cli.seed);
  if (!cli.out.empty()) config.out_dir = cli.out;
  return config;
}

ObservationSet load_observations(const RunConfig& config) {
  RawTable table = load_table(config.data_path, config.delimiter);
  return bind_schema(table, SchemaMap::from_json_file(config.schema_path));
}

RunManifest manifest_for(const RunConfig& config) {
  return RunManifest::load(config.out_dir + "/manifest.json");
}

int run_and_report(const RunConfig& config, bool with_report) {
  RunManifest manifest = run_experiment(config);
  if (with_report) emit_report(manifest, config.out_dir);
  std::cout << "manifest: " << config.out_dir << "/manifest.json (hash " << manifest.hash()
            << ")\n";
  if (manifest.doc.value("any_failure", false)) {
    std::cerr << "one or more agencies failed; see manifest for details\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"corporate credit scoring engine"};
  app.require_subcommand(1);
  app.fallthrough();  // accept the global flags after the subcommand too

  Cli cli;
  app.add_option("--config", cli.config_path, "JSON run configuration");
  app.add_option("--agency", cli.agency, "restrict to one agency");
  app.add_option("--target", cli.target, "binary|continuous")
      ->check(CLI::IsMember({"binary", "continuous"}));
  app.add_option("--trials", cli.trials, "tuning trials per study");
  app.add_option("--seed", cli.seed, "master seed");
  app.add_option("--out", cli.out, "output directory");

  auto* c_ingest = app.add_subcommand("ingest", "load and validate the dataset");
  auto* c_summarize = app.add_subcommand("summarize", "exploratory feature statistics");
  auto* c_folds = app.add_subcommand("plan-folds", "temporal fold plan");
  auto* c_tune = app.add_subcommand("tune", "hyperparameter search (runs the pipeline)");
  auto* c_train = app.add_subcommand("train", "fit models (runs the pipeline)");
  auto* c_evaluate = app.add_subcommand("evaluate", "metric tables from a finished run");
  auto* c_explain = app.add_subcommand("explain", "feature attributions from a finished run");
  auto* c_drift = app.add_subcommand("drift", "train-vs-test stability from a finished run");
  auto* c_report = app.add_subcommand("report", "emit benchmark-style tables");
  auto* c_runall = app.add_subcommand("run-all", "full pipeline plus report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  RunConfig config;
  try {
    config = load_config(cli);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (c_ingest->parsed()) {
      ObservationSet obs = load_observations(config);
      std::size_t dated = 0;
      for (const auto& r : obs.records) dated += r.period_valid ? 1 : 0;
      std::cout << "rows: " << obs.records.size() << "\n"
                << "rows with valid dates: " << dated << "\n"
                << "numeric features: " << obs.numeric_names.size() << "\n"
                << "categorical features: " << obs.categorical_names.size() << "\n"
                << "content hash: " << obs.content_hash << "\n";
      return 0;
    }

    if (c_summarize->parsed()) {
      ObservationSet obs = load_observations(config);
      if (!config.agencies.empty()) {
        ObservationSet merged = obs;
        merged.records.clear();
        for (const auto& r : obs.records)
          if (std::find(config.agencies.begin(), config.agencies.end(), r.agency) !=
              config.agencies.end())
            merged.records.push_back(r);
        obs = merged;
      }
      std::cout << summarize(obs).to_text_table();
      return 0;
    }

    if (c_folds->parsed()) {
      ObservationSet obs = load_observations(config);
      std::vector<std::string> agencies = config.agencies;
      if (agencies.empty()) {
        std::set<std::string> found;
        for (const auto& r : obs.records) found.insert(r.agency);
        agencies.assign(found.begin(), found.end());
      }
      for (const auto& agency : agencies) {
        ObservationSet sub = agency_subset(obs, agency);
        PeriodIndex periods = build_period_index(sub);
        int feasible = static_cast<int>(periods.periods.size()) - 2;
        std::cout << "== " << agency << " ==\n";
        if (feasible < 1) {
          std::cout << "not enough periods for a fold plan\n";
          continue;
        }
        TemporalFoldPlan plan = plan_folds(periods, std::min(config.k_folds, feasible));
        std::cout << plan.to_json(periods) << "\n";
      }
      return 0;
    }

    if (c_tune->parsed() || c_train->parsed() || c_runall->parsed())
      return run_and_report(config, c_runall->parsed());

    // Remaining subcommands read a manifest written by train / run-all.
    RunManifest manifest = manifest_for(config);

    if (c_evaluate->parsed() || c_report->parsed()) {
      ReportBundle bundle = emit_report(manifest, config.out_dir);
      if (!bundle.classification_table.empty())
        std::cout << "classification (holdout fold)\n" << bundle.classification_table << "\n";
      if (!bundle.regression_table.empty())
        std::cout << "regression (holdout fold)\n" << bundle.regression_table << "\n";
      return 0;
    }

    if (c_explain->parsed()) {
      for (auto it = manifest.doc["agencies"].begin(); it != manifest.doc["agencies"].end(); ++it) {
        if (!it.value().contains("explain")) continue;
        std::cout << "== " << it.key() << " ==\n";
        const auto& ex = it.value()["explain"];
        for (const char* key : {"classification_importance", "regression_importance"}) {
          if (!ex.contains(key) || !ex[key].contains("entries")) continue;
          std::cout << key << ":\n";
          int shown = 0;
          for (const auto& e : ex[key]["entries"]) {
            std::cout << "  " << e[0].get<std::string>() << "  " << e[1].get<double>() << "\n";
            if (++shown >= 10) break;
          }
        }
        if (ex.contains("cross_task_rank_correlation"))
          std::cout << "cross-task rank correlation: "
                    << ex["cross_task_rank_correlation"].get<double>() << "\n";
      }
      return 0;
    }

    if (c_drift->parsed()) {
      for (auto it = manifest.doc["agencies"].begin(); it != manifest.doc["agencies"].end(); ++it) {
        if (!it.value().contains("psi")) continue;
        std::cout << "== " << it.key() << " ==\n";
        const auto& psi = it.value()["psi"];
        for (auto f = psi.begin(); f != psi.end(); ++f)
          std::cout << "  " << f.key() << "  psi=" << f.value()["psi"].get<double>()
                    << (f.value()["flagged"].get<bool>() ? "  FLAGGED" : "") << "\n";
      }
      return 0;
    }

    std::cerr << "unhandled subcommand\n";
    return 2;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
