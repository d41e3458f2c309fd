#include "credscore/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include "credscore/context_store.hpp"
#include "credscore/explain.hpp"
#include "credscore/metrics.hpp"

namespace fs = std::filesystem;

namespace credscore {

namespace {

void write_atomic(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp);
    out << content;
  }
  fs::rename(tmp, path);
}

std::string slug(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else if (!out.empty() && out.back() != '_')
      out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

std::string preset_name(GrowthMode m) {
  switch (m) {
    case GrowthMode::Symmetric: return "symmetric";
    case GrowthMode::LeafWise: return "leaf_wise";
    case GrowthMode::DepthWise: return "depth_wise";
  }
  return "?";
}

GrowthMode preset_from_name(const std::string& name) {
  if (name == "symmetric") return GrowthMode::Symmetric;
  if (name == "leaf_wise") return GrowthMode::LeafWise;
  if (name == "depth_wise") return GrowthMode::DepthWise;
  throw Error("unknown preset: " + name);
}

GbdtConfig config_from_params(GrowthMode preset, Loss loss, const Params& p, std::uint64_t seed,
                              int n_threads) {
  GbdtConfig c;
  c.growth_mode = preset;
  c.loss = loss;
  c.seed = seed;
  c.n_threads = n_threads;
  c.early_stopping_rounds = 30;
  c.iterations = 400;
  switch (preset) {
    case GrowthMode::Symmetric:
      c.iterations = static_cast<int>(p.at("iterations"));
      c.learning_rate = p.at("learning_rate");
      c.max_depth = static_cast<int>(p.at("max_depth"));
      break;
    case GrowthMode::LeafWise:
      c.num_leaves = static_cast<int>(p.at("num_leaves"));
      c.learning_rate = p.at("learning_rate");
      c.feature_fraction = p.at("feature_fraction");
      break;
    case GrowthMode::DepthWise:
      c.max_depth = static_cast<int>(p.at("max_depth"));
      c.learning_rate = p.at("learning_rate");
      c.subsample = p.at("subsample");
      break;
  }
  return c;
}

nlohmann::json classification_to_json(const ClassificationReport& r) {
  return {{"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall},
          {"f1", r.f1},             {"auc", r.auc},             {"brier", r.brier},
          {"kappa", r.kappa},       {"threshold", r.threshold}};
}

nlohmann::json regression_to_json(const RegressionReport& r) {
  nlohmann::json j = {{"rmse", r.rmse}, {"mae", r.mae}};
  if (r.r2_defined)
    j["r2"] = r.r2;
  else
    j["r2"] = nullptr;
  return j;
}

std::vector<double> weighted_mix(const std::vector<std::vector<double>>& preds,
                                 const std::vector<double>& w) {
  std::vector<double> mix(preds[0].size(), 0.0);
  for (std::size_t m = 0; m < preds.size(); ++m)
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] += w[m] * preds[m][i];
  return mix;
}

struct FoldData {
  std::string id;
  FeatureMatrix train, val, test;
  std::vector<int> y_train_bin, y_val_bin, y_test_bin;
  std::vector<double> y_train_cont, y_val_cont, y_test_cont;
  FittedPreprocessor fp;
  AuditLog fit_audit;
};

}  // namespace

ObservationSet select_rows(const ObservationSet& obs, const std::vector<std::size_t>& rows) {
  ObservationSet out;
  out.numeric_names = obs.numeric_names;
  out.categorical_names = obs.categorical_names;
  out.content_hash = obs.content_hash;
  out.records.reserve(rows.size());
  for (std::size_t r : rows) out.records.push_back(obs.records[r]);
  return out;
}

ObservationSet agency_subset(const ObservationSet& obs, const std::string& agency) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < obs.records.size(); ++i)
    if (obs.records[i].agency == agency) rows.push_back(i);
  return select_rows(obs, rows);
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config file: " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  RunConfig c;
  c.data_path = j.at("data_path").get<std::string>();
  c.schema_path = j.at("schema_path").get<std::string>();
  if (j.contains("delimiter")) c.delimiter = j.at("delimiter").get<std::string>().at(0);
  if (j.contains("agencies")) c.agencies = j.at("agencies").get<std::vector<std::string>>();
  if (j.contains("target")) {
    std::string t = j.at("target").get<std::string>();
    c.target = t == "binary" ? RunTarget::Binary
                             : (t == "continuous" ? RunTarget::Continuous : RunTarget::Both);
  }
  if (j.contains("k_folds")) c.k_folds = j.at("k_folds").get<int>();
  if (j.contains("presets")) {
    c.presets.clear();
    for (const auto& p : j.at("presets")) c.presets.push_back(preset_from_name(p.get<std::string>()));
  }
  if (j.contains("trials_per_study")) c.trials_per_study = j.at("trials_per_study").get<int>();
  if (j.contains("master_seed")) c.master_seed = j.at("master_seed").get<std::uint64_t>();
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("n_threads")) c.n_threads = j.at("n_threads").get<int>();
  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    if (p.contains("knn_k")) c.policy.knn_k = p.at("knn_k").get<int>();
    if (p.contains("low_missing_band")) c.policy.low_missing_band = p.at("low_missing_band").get<double>();
    if (p.contains("high_missing_band")) c.policy.high_missing_band = p.at("high_missing_band").get<double>();
    if (p.contains("log_skew_threshold")) c.policy.log_skew_threshold = p.at("log_skew_threshold").get<double>();
    if (p.contains("woe_cardinality_threshold"))
      c.policy.woe_cardinality_threshold = p.at("woe_cardinality_threshold").get<int>();
    if (p.contains("drop_auc_margin")) c.policy.drop_auc_margin = p.at("drop_auc_margin").get<double>();
    if (p.contains("ordered_domains"))
      c.policy.ordered_domains =
          p.at("ordered_domains").get<std::map<std::string, std::vector<std::string>>>();
  }
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["data_path"] = data_path;
  j["schema_path"] = schema_path;
  j["delimiter"] = std::string(1, delimiter);
  j["agencies"] = agencies;
  j["target"] = target == RunTarget::Binary ? "binary"
                                            : (target == RunTarget::Continuous ? "continuous" : "both");
  j["k_folds"] = k_folds;
  nlohmann::json jp = nlohmann::json::array();
  for (auto p : presets) jp.push_back(preset_name(p));
  j["presets"] = jp;
  j["trials_per_study"] = trials_per_study;
  j["master_seed"] = master_seed;
  j["out_dir"] = out_dir;
  j["n_threads"] = n_threads;
  return j;
}

std::string RunManifest::hash() const {
  nlohmann::json copy = doc;
  copy.erase("timings");
  // Where the artifacts land is incidental; the hash tracks inputs and results.
  if (copy.contains("config")) copy["config"].erase("out_dir");
  return hex64(fnv1a64(copy.dump()));
}

void RunManifest::save(const std::string& path) const { write_atomic(path, doc.dump(2)); }

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read manifest: " + path);
  RunManifest m;
  m.doc = nlohmann::json::parse(in);
  return m;
}

namespace {

nlohmann::json run_agency(const RunConfig& config, const ObservationSet& all_obs,
                          const std::string& agency, const std::string& agency_dir) {
  nlohmann::json out;
  const RatingScale scale = RatingScale::standard();

  ObservationSet obs = agency_subset(all_obs, agency);
  if (obs.records.empty()) {
    out["status"] = "no data";
    return out;
  }

  auto [dedup, audit] = deduplicate(obs);
  ObservationSet derived = derive_features(dedup, &audit);

  // Rows with ratings outside the scale are excluded from modeling.
  std::vector<std::size_t> usable;
  std::size_t unknown_ratings = 0;
  for (std::size_t i = 0; i < derived.records.size(); ++i) {
    if (scale.contains(derived.records[i].rating) && derived.records[i].period_valid)
      usable.push_back(i);
    else
      ++unknown_ratings;
  }
  ObservationSet model_obs = select_rows(derived, usable);
  if (model_obs.records.size() < 10) {
    out["status"] = "failed: fewer than 10 usable rows";
    return out;
  }
  out["n_usable"] = model_obs.records.size();
  out["n_excluded_rows"] = unknown_ratings;
  write_atomic(agency_dir + "/audit.json", audit.to_json());
  write_atomic(agency_dir + "/summary.json", summarize(model_obs).to_json());

  PeriodIndex periods = build_period_index(model_obs);
  int feasible = static_cast<int>(periods.periods.size()) - 2;
  if (feasible < 1) {
    out["status"] = "failed: fewer than 3 distinct periods";
    return out;
  }
  int k = std::min(config.k_folds, feasible);
  if (k < config.k_folds)
    out["note"] = "k capped at " + std::to_string(k) + " by available periods";
  TemporalFoldPlan plan = plan_folds(periods, k);
  LeakageReport leakage = check_leakage(plan, periods);
  if (!leakage.passed()) throw Error("internal: generated fold plan leaks");
  write_atomic(agency_dir + "/folds.json", plan.to_json(periods));
  out["fold_plan"] = nlohmann::json::parse(plan.to_json(periods));

  const bool do_cls = config.target != RunTarget::Continuous;
  const bool do_reg = config.target != RunTarget::Binary;

  nlohmann::json folds_json = nlohmann::json::array();
  std::vector<FoldData> fold_data;

  for (std::size_t fi = 0; fi < plan.folds.size(); ++fi) {
    const auto& fold = plan.folds[fi];
    FoldSplit split = materialize_fold(fold, periods);
    if (split.train_rows.empty() || split.val_rows.empty() || split.test_rows.empty()) {
      std::cerr << "warning: fold " << fi << " has an empty split, skipped\n";
      continue;
    }
    FoldData fd;
    fd.id = "fold_" + std::to_string(fold.val_period - 1);
    ObservationSet train_obs = select_rows(model_obs, split.train_rows);
    ObservationSet val_obs = select_rows(model_obs, split.val_rows);
    ObservationSet test_obs = select_rows(model_obs, split.test_rows);

    auto labels_of = [&](const ObservationSet& o, std::vector<int>* bin, std::vector<double>* cont) {
      for (const auto& r : o.records) {
        bin->push_back(to_binary(r.rating, scale));
        cont->push_back(to_continuous(r.rating, scale));
      }
    };
    labels_of(train_obs, &fd.y_train_bin, &fd.y_train_cont);
    labels_of(val_obs, &fd.y_val_bin, &fd.y_val_cont);
    labels_of(test_obs, &fd.y_test_bin, &fd.y_test_cont);

    auto [fp, fit_audit] = fit_preprocessor(train_obs, config.policy, &fd.y_train_bin, fd.id);
    fd.fp = std::move(fp);
    fd.fit_audit = std::move(fit_audit);
    fd.train = apply_preprocessor(fd.fp, train_obs);
    fd.val = apply_preprocessor(fd.fp, val_obs);
    fd.test = apply_preprocessor(fd.fp, test_obs);
    fold_data.push_back(std::move(fd));
  }
  if (fold_data.empty()) {
    out["status"] = "failed: no usable folds";
    return out;
  }

  struct TaskModels {
    std::vector<GbdtModel> models;  // per preset, last fold
    std::vector<double> weights;
  };
  TaskModels last_cls, last_reg;
  std::vector<double> cls_test_auc, cls_train_auc, cls_test_acc, cls_train_acc;
  std::vector<double> reg_test_rmse, reg_train_rmse, reg_test_r2, reg_train_r2;

  for (std::size_t fi = 0; fi < fold_data.size(); ++fi) {
    FoldData& fd = fold_data[fi];
    const bool is_last = fi + 1 == fold_data.size();
    std::string fold_dir = agency_dir + "/" + fd.id;
    fs::create_directories(fold_dir);
    write_atomic(fold_dir + "/preprocessor.json", fd.fp.to_json());
    write_atomic(fold_dir + "/fit_audit.json", fd.fit_audit.to_json());

    nlohmann::json fold_json;
    fold_json["id"] = fd.id;
    fold_json["preprocessor_hash"] = fd.fp.hash();
    fold_json["n_train"] = fd.train.rows();
    fold_json["n_val"] = fd.val.rows();
    fold_json["n_test"] = fd.test.rows();

    auto run_task = [&](Loss loss, const char* task) {
      nlohmann::json task_json;
      std::vector<double> y_train =
          loss == Loss::LogLoss
              ? std::vector<double>(fd.y_train_bin.begin(), fd.y_train_bin.end())
              : fd.y_train_cont;
      std::vector<double> y_val =
          loss == Loss::LogLoss ? std::vector<double>(fd.y_val_bin.begin(), fd.y_val_bin.end())
                                : fd.y_val_cont;

      std::vector<GbdtModel> models;
      std::vector<std::vector<double>> val_scores, test_scores, train_scores;
      nlohmann::json presets_json = nlohmann::json::object();
      for (GrowthMode preset : config.presets) {
        std::string pname = preset_name(preset);
        std::uint64_t study_seed =
            derive_seed(config.master_seed, std::string("tune-") + task + "-" + pname, agency,
                        static_cast<int>(fi));
        SearchSpace space = SearchSpace::for_preset(preset);
        auto objective = [&](const Params& p) {
          GbdtConfig gc = config_from_params(preset, loss, p, study_seed, config.n_threads);
          auto fitres = fit(fd.train, y_train, gc, &fd.val, &y_val);
          if (fitres.log.val_loss.empty()) return loss_value(loss, y_val, std::vector<double>(y_val.size(), fitres.model.base_score));
          double best = *std::min_element(fitres.log.val_loss.begin(), fitres.log.val_loss.end());
          if (loss == Loss::SquaredError) best = std::sqrt(2.0 * best);  // report as RMSE
          return best;
        };
        StudyResult study = run_study(objective, space, config.trials_per_study, study_seed);
        std::uint64_t fit_seed = derive_seed(config.master_seed,
                                             std::string("fit-") + task + "-" + pname, agency,
                                             static_cast<int>(fi));
        GbdtConfig gc = config_from_params(preset, loss, study.best_params, fit_seed, config.n_threads);
        auto fitres = fit(fd.train, y_train, gc, &fd.val, &y_val);
        GbdtModel model = std::move(fitres.model);
        if (is_last)
          write_atomic(fold_dir + "/model_" + task + "_" + pname + ".json", model.to_json());
        write_atomic(fold_dir + "/study_" + task + "_" + pname + ".json", study.state.to_json());

        auto score_of = [&](const FeatureMatrix& m) {
          return loss == Loss::LogLoss ? predict_proba(model, m) : predict_raw(model, m);
        };
        val_scores.push_back(score_of(fd.val));
        test_scores.push_back(score_of(fd.test));
        train_scores.push_back(score_of(fd.train));
        nlohmann::json pj;
        pj["best_params"] = study.best_params;
        pj["best_value"] = study.best_value;
        pj["best_iteration"] = model.best_iteration;
        pj["model_hash"] = model.hash();
        presets_json[pname] = pj;
        models.push_back(std::move(model));
      }
      task_json["presets"] = presets_json;

      // Ensemble weights maximize validation AUC against the binary labels.
      EnsembleWeights weights = optimize_weights(val_scores, fd.y_val_bin);
      task_json["ensemble_weights"] = weights.weights;
      std::vector<double> val_mix = weighted_mix(val_scores, weights.weights);
      std::vector<double> test_mix = weighted_mix(test_scores, weights.weights);
      std::vector<double> train_mix = weighted_mix(train_scores, weights.weights);

      if (loss == Loss::LogLoss) {
        IsotonicMap iso = fit_isotonic(val_mix, fd.y_val_bin);
        std::vector<double> test_cal(test_mix.size()), train_cal(train_mix.size());
        for (std::size_t i = 0; i < test_mix.size(); ++i) test_cal[i] = apply_isotonic(iso, test_mix[i]);
        for (std::size_t i = 0; i < train_mix.size(); ++i)
          train_cal[i] = apply_isotonic(iso, train_mix[i]);
        task_json["isotonic"] = {{"breakpoints", iso.breakpoints}, {"values", iso.values}};

        ClassificationReport train_rep = classification_metrics(fd.y_train_bin, train_cal);
        ClassificationReport test_rep = classification_metrics(fd.y_test_bin, test_cal);
        // AUC from the uncalibrated mix (isotonic ties can only blur ranks).
        train_rep.auc = auc(fd.y_train_bin, train_mix);
        test_rep.auc = auc(fd.y_test_bin, test_mix);
        task_json["train"] = classification_to_json(train_rep);
        task_json["test"] = classification_to_json(test_rep);
        cls_train_auc.push_back(train_rep.auc);
        cls_test_auc.push_back(test_rep.auc);
        cls_train_acc.push_back(train_rep.accuracy);
        cls_test_acc.push_back(test_rep.accuracy);

        if (test_scores.size() >= 2) {
          nlohmann::json dl = nlohmann::json::array();
          for (std::size_t a = 0; a < test_scores.size(); ++a)
            for (std::size_t b = a + 1; b < test_scores.size(); ++b) {
              DeLongResult d = delong_test(fd.y_test_bin, test_scores[a], test_scores[b]);
              dl.push_back({{"a", preset_name(config.presets[a])},
                            {"b", preset_name(config.presets[b])},
                            {"auc_a", d.auc_a},
                            {"auc_b", d.auc_b},
                            {"z", d.z},
                            {"p", d.p_value}});
            }
          task_json["delong"] = dl;
        }
        try {
          BootstrapCI ci = bootstrap_auc_ci(
              fd.y_test_bin, test_mix, 1000,
              derive_seed(config.master_seed, "bootstrap-auc", agency, static_cast<int>(fi)));
          task_json["test_auc_ci"] = {{"point", ci.point}, {"lower", ci.lower}, {"upper", ci.upper}};
        } catch (const Error& e) {
          task_json["test_auc_ci"] = std::string("unavailable: ") + e.what();
        }
        if (is_last) {
          last_cls.models = std::move(models);
          last_cls.weights = weights.weights;
        }
      } else {
        LogisticCalibration cal = fit_logistic_calibration(
            val_mix, [&] {
              std::vector<int> pd(fd.y_val_bin.size());
              for (std::size_t i = 0; i < pd.size(); ++i) pd[i] = 1 - fd.y_val_bin[i];
              return pd;
            }());
        task_json["pd_calibration"] = {{"a", cal.a}, {"b", cal.b},
                                       {"separation_capped", cal.separation_capped}};
        RegressionReport train_rep = regression_metrics(fd.y_train_cont, train_mix);
        RegressionReport test_rep = regression_metrics(fd.y_test_cont, test_mix);
        task_json["train"] = regression_to_json(train_rep);
        task_json["test"] = regression_to_json(test_rep);
        reg_train_rmse.push_back(train_rep.rmse);
        reg_test_rmse.push_back(test_rep.rmse);
        if (train_rep.r2_defined) reg_train_r2.push_back(train_rep.r2);
        if (test_rep.r2_defined) reg_test_r2.push_back(test_rep.r2);
        BootstrapCI ci = bootstrap_rmse_ci(
            fd.y_test_cont, test_mix, 1000,
            derive_seed(config.master_seed, "bootstrap-rmse", agency, static_cast<int>(fi)));
        task_json["test_rmse_ci"] = {{"point", ci.point}, {"lower", ci.lower}, {"upper", ci.upper}};
        if (is_last) {
          last_reg.models = std::move(models);
          last_reg.weights = weights.weights;
        }
      }
      return task_json;
    };

    if (do_cls) fold_json["classification"] = run_task(Loss::LogLoss, "cls");
    if (do_reg) fold_json["regression"] = run_task(Loss::SquaredError, "reg");
    folds_json.push_back(std::move(fold_json));
  }
  out["folds"] = folds_json;

  auto mean_of = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  nlohmann::json agg;
  if (do_cls) {
    agg["classification"] = {
        {"mean", {{"train_auc", mean_of(cls_train_auc)}, {"test_auc", mean_of(cls_test_auc)},
                  {"train_accuracy", mean_of(cls_train_acc)}, {"test_accuracy", mean_of(cls_test_acc)}}},
        {"holdout", {{"train_auc", cls_train_auc.back()}, {"test_auc", cls_test_auc.back()},
                     {"train_accuracy", cls_train_acc.back()}, {"test_accuracy", cls_test_acc.back()}}}};
  }
  if (do_reg) {
    agg["regression"] = {
        {"mean", {{"train_rmse", mean_of(reg_train_rmse)}, {"test_rmse", mean_of(reg_test_rmse)},
                  {"train_r2", mean_of(reg_train_r2)}, {"test_r2", mean_of(reg_test_r2)}}},
        {"holdout", {{"train_rmse", reg_train_rmse.back()}, {"test_rmse", reg_test_rmse.back()},
                     {"train_r2", reg_train_r2.empty() ? 0.0 : reg_train_r2.back()},
                     {"test_r2", reg_test_r2.empty() ? 0.0 : reg_test_r2.back()}}}};
  }
  out["aggregate"] = agg;

  // Explainability on the last fold's test block.
  const FoldData& last = fold_data.back();
  nlohmann::json explain_json;
  ImportanceRanking cls_ranking, reg_ranking;
  if (do_cls && !last_cls.models.empty()) {
    std::vector<ShapMatrix> shaps;
    for (const auto& model : last_cls.models) shaps.push_back(tree_shap(model, last.test));
    cls_ranking = aggregate_importance(shaps);
    cls_ranking.provenance.push_back(agency + "/classification");
    write_atomic(agency_dir + "/shap_classification.tsv", shaps.front().to_tsv());
    write_atomic(agency_dir + "/importance_classification.json", cls_ranking.to_json());
    explain_json["classification_importance"] = nlohmann::json::parse(cls_ranking.to_json());

    std::size_t best_model = std::max_element(last_cls.weights.begin(), last_cls.weights.end()) -
                             last_cls.weights.begin();
    std::vector<double> y(last.y_test_bin.begin(), last.y_test_bin.end());
    try {
      ImportanceRanking perm = permutation_importance(
          last_cls.models[best_model], last.test, y, ImportanceMetric::Auc, 5,
          derive_seed(config.master_seed, "perm", agency, -1));
      write_atomic(agency_dir + "/permutation_importance.json", perm.to_json());
    } catch (const Error& e) {
      explain_json["permutation_importance"] = std::string("unavailable: ") + e.what();
    }

    // PDP over the top aggregated features.
    nlohmann::json pdps = nlohmann::json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(3, cls_ranking.entries.size()); ++i) {
      const std::string& feat = cls_ranking.entries[i].first;
      int col = last.test.column_index(feat);
      if (col < 0) continue;
      std::vector<double> column(last.test.rows());
      for (Eigen::Index r = 0; r < last.test.rows(); ++r) column[static_cast<std::size_t>(r)] = last.test.values(r, col);
      std::vector<double> grid;
      for (int q = 0; q <= 8; ++q) grid.push_back(quantile_linear(column, q / 8.0));
      std::sort(grid.begin(), grid.end());
      grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
      PdpCurve curve = partial_dependence(last_cls.models[best_model], feat, grid, last.test);
      pdps.push_back(nlohmann::json::parse(curve.to_json()));
    }
    explain_json["pdp"] = pdps;
    write_atomic(agency_dir + "/pdp.json", explain_json["pdp"].dump(2));
  }
  if (do_reg && !last_reg.models.empty()) {
    std::vector<ShapMatrix> shaps;
    for (const auto& model : last_reg.models) shaps.push_back(tree_shap(model, last.test));
    reg_ranking = aggregate_importance(shaps);
    reg_ranking.provenance.push_back(agency + "/regression");
    write_atomic(agency_dir + "/importance_regression.json", reg_ranking.to_json());
    explain_json["regression_importance"] = nlohmann::json::parse(reg_ranking.to_json());
  }
  if (!cls_ranking.entries.empty() && !reg_ranking.entries.empty())
    explain_json["cross_task_rank_correlation"] = ranking_rank_correlation(cls_ranking, reg_ranking);
  out["explain"] = explain_json;

  // Train-vs-test feature drift on the last fold.
  nlohmann::json psi_json = nlohmann::json::object();
  for (std::size_t c = 0; c < last.train.column_names.size(); ++c) {
    std::vector<double> tr(last.train.rows()), te(last.test.rows());
    for (Eigen::Index r = 0; r < last.train.rows(); ++r) tr[static_cast<std::size_t>(r)] = last.train.values(r, static_cast<Eigen::Index>(c));
    for (Eigen::Index r = 0; r < last.test.rows(); ++r) te[static_cast<std::size_t>(r)] = last.test.values(r, static_cast<Eigen::Index>(c));
    PsiReport rep = psi(tr, te);
    psi_json[last.train.column_names[c]] = {{"psi", rep.psi}, {"flagged", rep.flagged}};
  }
  write_atomic(agency_dir + "/psi.json", psi_json.dump(2));
  out["psi"] = psi_json;

  // Desk-scale retrieval index over the training feature rows.
  {
    VectorIndex index(static_cast<int>(last.train.cols()), SimilarityMetric::Cosine);
    std::vector<EmbeddingRecord> recs;
    for (Eigen::Index r = 0; r < last.train.rows(); ++r) {
      EmbeddingRecord rec;
      const auto& key = last.train.row_keys[static_cast<std::size_t>(r)];
      rec.id = key.firm_id + "|" + key.period.to_string();
      rec.vector = last.train.values.row(r).transpose();
      rec.timestamp = key.period.to_string();
      recs.push_back(std::move(rec));
    }
    index.upsert(recs);
    index.save(agency_dir + "/context_index.bin");
    out["context_index"] = {{"count", index.count()}, {"dimension", index.dimension()}};
  }

  out["status"] = "ok";
  return out;
}

}  // namespace

RunManifest run_experiment(const RunConfig& config) {
  auto t0 = std::chrono::steady_clock::now();
  RunManifest manifest;
  manifest.doc["config"] = config.to_json();

  RawTable table = load_table(config.data_path, config.delimiter);
  SchemaMap schema = SchemaMap::from_json_file(config.schema_path);
  ObservationSet obs = bind_schema(table, schema);
  manifest.doc["dataset"] = {{"content_hash", table.content_hash},
                             {"n_rows", table.rows.size()},
                             {"source", config.data_path}};

  std::vector<std::string> agencies = config.agencies;
  if (agencies.empty()) {
    std::set<std::string> found;
    for (const auto& r : obs.records) found.insert(r.agency);
    agencies.assign(found.begin(), found.end());
  }

  fs::create_directories(config.out_dir);
  nlohmann::json agencies_json = nlohmann::json::object();
  bool any_failure = false;
  for (const auto& agency : agencies) {
    std::string dir = config.out_dir + "/" + slug(agency);
    fs::create_directories(dir);
    try {
      agencies_json[agency] = run_agency(config, obs, agency, dir);
      if (agencies_json[agency]["status"] != "ok" &&
          agencies_json[agency]["status"] != "no data")
        any_failure = true;
    } catch (const std::exception& e) {
      agencies_json[agency] = {{"status", std::string("failed: ") + e.what()}};
      any_failure = true;
      std::cerr << "agency " << agency << " failed: " << e.what() << "\n";
    }
  }
  manifest.doc["agencies"] = agencies_json;
  manifest.doc["any_failure"] = any_failure;
  auto t1 = std::chrono::steady_clock::now();
  manifest.doc["timings"] = {
      {"total_seconds", std::chrono::duration<double>(t1 - t0).count()}};
  manifest.doc["manifest_hash"] = "";
  manifest.doc.erase("manifest_hash");
  manifest.save(config.out_dir + "/manifest.json");
  return manifest;
}

ReportBundle emit_report(const RunManifest& manifest, const std::string& out_dir) {
  if (!manifest.doc.contains("agencies")) throw Error("emit_report: manifest missing agencies stage");
  ReportBundle bundle;

  // Canonical agency order mirrors the benchmark tables.
  std::vector<std::string> canonical = {"Moody's Investors Service", "Fitch Ratings",
                                        "Standard & Poor's Ratings Services",
                                        "Egan-Jones Ratings Company"};
  std::vector<std::string> order;
  for (const auto& a : canonical)
    if (manifest.doc["agencies"].contains(a)) order.push_back(a);
  for (auto it = manifest.doc["agencies"].begin(); it != manifest.doc["agencies"].end(); ++it)
    if (std::find(order.begin(), order.end(), it.key()) == order.end()) order.push_back(it.key());

  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%8.4f", v);
    return std::string(buf);
  };

  std::ostringstream cls, reg;
  cls << "agency, train_accuracy, test_accuracy, train_auc, test_auc\n";
  reg << "agency, train_rmse, test_rmse, train_r2, test_r2\n";
  bool have_cls = false, have_reg = false;
  for (const auto& agency : order) {
    const auto& a = manifest.doc["agencies"][agency];
    if (!a.contains("aggregate")) continue;
    const auto& agg = a["aggregate"];
    if (agg.contains("classification")) {
      have_cls = true;
      const auto& h = agg["classification"]["holdout"];
      cls << agency << ", " << fmt(h["train_accuracy"].get<double>()) << ", "
          << fmt(h["test_accuracy"].get<double>()) << ", " << fmt(h["train_auc"].get<double>())
          << ", " << fmt(h["test_auc"].get<double>()) << "\n";
      bundle.classification_json[agency] = agg["classification"];
    }
    if (agg.contains("regression")) {
      have_reg = true;
      const auto& h = agg["regression"]["holdout"];
      reg << agency << ", " << fmt(h["train_rmse"].get<double>()) << ", "
          << fmt(h["test_rmse"].get<double>()) << ", " << fmt(h["train_r2"].get<double>()) << ", "
          << fmt(h["test_r2"].get<double>()) << "\n";
      bundle.regression_json[agency] = agg["regression"];
    }
  }
  fs::create_directories(out_dir + "/report");
  if (have_cls) {
    bundle.classification_table = cls.str();
    write_atomic(out_dir + "/report/classification_table.txt", bundle.classification_table);
    write_atomic(out_dir + "/report/classification.json", bundle.classification_json.dump(2));
  } else {
    std::cerr << "notice: classification table omitted (no classification runs in manifest)\n";
  }
  if (have_reg) {
    bundle.regression_table = reg.str();
    write_atomic(out_dir + "/report/regression_table.txt", bundle.regression_table);
    write_atomic(out_dir + "/report/regression.json", bundle.regression_json.dump(2));
  } else {
    std::cerr << "notice: regression table omitted (no regression runs in manifest)\n";
  }
  return bundle;
}

}  // namespace credscore
