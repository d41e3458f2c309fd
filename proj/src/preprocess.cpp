#include "credscore/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "credscore/metrics.hpp"

namespace credscore {

void PreprocessPolicy::validate() const {
  if (!(0 <= low_missing_band && low_missing_band < high_missing_band && high_missing_band <= 1))
    throw Error("policy: need 0 <= low_missing_band < high_missing_band <= 1");
  if (winsor_lo >= winsor_hi) throw Error("policy: winsor_lo must be < winsor_hi");
  if (knn_k < 1) throw Error("policy: knn_k must be >= 1");
}

namespace {

std::size_t missing_count(const ObservationSet::Record& r) {
  std::size_t c = 0;
  for (double v : r.numeric)
    if (std::isnan(v)) ++c;
  for (const auto& v : r.categorical)
    if (!v.has_value()) ++c;
  return c;
}

std::string record_fingerprint(const ObservationSet::Record& r) {
  std::ostringstream out;
  out.precision(17);
  out << r.firm_id << '\x1f' << r.agency << '\x1f' << r.rating << '\x1f'
      << (r.period_valid ? r.period.to_string() : "?");
  for (double v : r.numeric) out << '\x1f' << v;
  for (const auto& v : r.categorical) out << '\x1f' << (v ? *v : "\x01");
  return out.str();
}

}  // namespace

std::pair<ObservationSet, AuditLog> deduplicate(const ObservationSet& obs) {
  AuditLog audit;
  ObservationSet out;
  out.numeric_names = obs.numeric_names;
  out.categorical_names = obs.categorical_names;
  out.content_hash = obs.content_hash;

  std::set<std::string> seen;
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < obs.records.size(); ++i) {
    std::string fp = record_fingerprint(obs.records[i]);
    if (seen.count(fp)) {
      audit.exact_duplicates_removed.push_back(i);
    } else {
      seen.insert(fp);
      survivors.push_back(i);
    }
  }

  // Near-duplicates: same (firm, agency, period); keep the most complete row.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i : survivors) {
    const auto& r = obs.records[i];
    std::string key = r.firm_id + '\x1f' + r.agency + '\x1f' +
                      (r.period_valid ? r.period.to_string() : "?");
    groups[key].push_back(i);
  }
  std::set<std::size_t> near_dropped;
  for (auto& [key, members] : groups) {
    if (members.size() < 2) continue;
    std::size_t best = members[0];
    for (std::size_t i : members)
      if (missing_count(obs.records[i]) < missing_count(obs.records[best])) best = i;
    AuditLog::NearDuplicate nd;
    const auto& r = obs.records[best];
    nd.firm_id = r.firm_id;
    nd.agency = r.agency;
    nd.period = r.period;
    nd.kept = best;
    for (std::size_t i : members)
      if (i != best) {
        nd.dropped.push_back(i);
        near_dropped.insert(i);
      }
    audit.near_duplicates_resolved.push_back(std::move(nd));
  }

  for (std::size_t i : survivors)
    if (!near_dropped.count(i)) out.records.push_back(obs.records[i]);
  return {out, audit};
}

namespace {

// Source-column aliases for the derived ratios; matching is case-insensitive.
int find_column(const ObservationSet& obs, const std::vector<std::string>& aliases) {
  auto lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
  };
  for (const auto& alias : aliases) {
    std::string want = lower(alias);
    for (std::size_t i = 0; i < obs.numeric_names.size(); ++i)
      if (lower(obs.numeric_names[i]) == want) return static_cast<int>(i);
  }
  return -1;
}

struct RatioDef {
  std::string name;
  std::vector<std::string> numerator_aliases;
  std::vector<std::string> denominator_aliases;
};

const std::vector<RatioDef>& ratio_definitions() {
  static const std::vector<RatioDef> defs = {
      {"interest_coverage", {"ebit", "operatingIncome"}, {"interestExpense", "interest_expense"}},
      {"ebitda_margin", {"ebitda"}, {"revenue", "totalRevenue", "sales"}},
      {"fcf_margin", {"freeCashFlow", "free_cash_flow", "fcf"}, {"revenue", "totalRevenue", "sales"}},
      {"short_term_leverage", {"shortTermDebt", "currentDebt"}, {"totalCapital", "total_capital"}},
      {"long_term_leverage", {"longTermDebt", "long_term_debt"}, {"totalCapital", "total_capital"}},
  };
  return defs;
}

}  // namespace

ObservationSet derive_features(const ObservationSet& obs, AuditLog* audit) {
  ObservationSet out = obs;
  for (const auto& def : ratio_definitions()) {
    int num = find_column(obs, def.numerator_aliases);
    int den = find_column(obs, def.denominator_aliases);
    if (num < 0 || den < 0) {
      if (audit) audit->warnings.push_back("derived ratio skipped (missing sources): " + def.name);
      continue;
    }
    int existing = out.numeric_index(def.name);
    int target;
    if (existing >= 0) {
      target = existing;
    } else {
      out.numeric_names.push_back(def.name);
      target = static_cast<int>(out.numeric_names.size()) - 1;
      for (auto& r : out.records) r.numeric.push_back(std::numeric_limits<double>::quiet_NaN());
    }
    std::size_t mismatches = 0;
    for (auto& r : out.records) {
      double n = r.numeric[num], d = r.numeric[den];
      double v = (std::isnan(n) || std::isnan(d) || std::abs(d) < 1e-12)
                     ? std::numeric_limits<double>::quiet_NaN()
                     : n / d;
      if (existing >= 0 && !std::isnan(r.numeric[target]) && !std::isnan(v) &&
          std::abs(r.numeric[target] - v) > 1e-9)
        ++mismatches;
      r.numeric[target] = v;
    }
    if (mismatches > 0 && audit)
      audit->warnings.push_back("derived ratio " + def.name + " recomputed; " +
                                std::to_string(mismatches) + " stored values disagreed");
  }
  return out;
}

std::pair<FittedPreprocessor, AuditLog> fit_preprocessor(const ObservationSet& train,
                                                         const PreprocessPolicy& policy,
                                                         const std::vector<int>* binary_targets,
                                                         const std::string& fold_id) {
  policy.validate();
  if (train.records.empty()) throw Error("fit_preprocessor: empty training set");
  if (binary_targets != nullptr && binary_targets->size() != train.records.size())
    throw Error("fit_preprocessor: target length mismatch");

  AuditLog audit;
  FittedPreprocessor fp;
  fp.policy = policy;
  fp.knn_k = policy.knn_k;
  fp.numeric_names = train.numeric_names;
  fp.categorical_names = train.categorical_names;
  fp.fitted_on = fold_id + ":" + train.content_hash;

  const std::size_t n = train.records.size();
  const std::size_t m = train.numeric_names.size();

  for (std::size_t f = 0; f < m; ++f) {
    FittedPreprocessor::NumericPlan plan;
    std::vector<double> observed;
    std::vector<int> observed_targets;
    for (std::size_t r = 0; r < n; ++r) {
      double v = train.records[r].numeric[f];
      if (!std::isnan(v)) {
        observed.push_back(v);
        if (binary_targets) observed_targets.push_back((*binary_targets)[r]);
      }
    }
    double missing_fraction = 1.0 - static_cast<double>(observed.size()) / static_cast<double>(n);

    bool constant = true;
    for (double v : observed)
      if (v != observed.front()) {
        constant = false;
        break;
      }
    if (observed.empty() || constant) {
      plan.imputation = FittedPreprocessor::Imputation::Dropped;
      plan.drop_reason = observed.empty() ? "all_missing" : "constant";
      audit.dropped_features.emplace_back(train.numeric_names[f], plan.drop_reason);
      fp.numeric.push_back(plan);
      continue;
    }

    if (missing_fraction < policy.low_missing_band) {
      plan.imputation = FittedPreprocessor::Imputation::Median;
    } else if (missing_fraction <= policy.high_missing_band) {
      plan.imputation = FittedPreprocessor::Imputation::Knn;
    } else {
      // Usefulness screen: univariate AUC of observed values against targets.
      if (binary_targets == nullptr)
        throw Error("fit_preprocessor: binary targets required for the high-missingness screen on " +
                    train.numeric_names[f]);
      double a = 0.5;
      try {
        a = auc(observed_targets, observed);
      } catch (const Error&) {
        // single-class slice, treat as uninformative
      }
      if (std::abs(a - 0.5) < policy.drop_auc_margin) {
        plan.imputation = FittedPreprocessor::Imputation::Dropped;
        plan.drop_reason = "low_auc";
        audit.dropped_features.emplace_back(train.numeric_names[f], plan.drop_reason);
        fp.numeric.push_back(plan);
        continue;
      }
      plan.imputation = FittedPreprocessor::Imputation::Knn;
    }

    plan.median = quantile_linear(observed, 0.5);
    plan.winsor_lo = quantile_linear(observed, policy.winsor_lo);
    plan.winsor_hi = quantile_linear(observed, policy.winsor_hi);
    double min_v = *std::min_element(observed.begin(), observed.end());
    plan.log_applied = min_v > 0 && sample_skewness_adjusted(observed) > policy.log_skew_threshold;

    // Raw-scale stats for the KNN donor space.
    double raw_mean = std::accumulate(observed.begin(), observed.end(), 0.0) /
                      static_cast<double>(observed.size());
    double raw_ss = 0;
    for (double v : observed) raw_ss += (v - raw_mean) * (v - raw_mean);
    plan.donor_mean = raw_mean;
    plan.donor_std = observed.size() > 1
                         ? std::sqrt(raw_ss / static_cast<double>(observed.size() - 1))
                         : 1.0;
    if (plan.donor_std <= 0) plan.donor_std = 1.0;

    // mu/sigma after winsorize + optional log, on observed training values.
    std::vector<double> transformed;
    transformed.reserve(observed.size());
    for (double v : observed) {
      double t = std::clamp(v, plan.winsor_lo, plan.winsor_hi);
      if (plan.log_applied) t = std::log(t);
      transformed.push_back(t);
    }
    plan.mu = std::accumulate(transformed.begin(), transformed.end(), 0.0) /
              static_cast<double>(transformed.size());
    double ss = 0;
    for (double t : transformed) ss += (t - plan.mu) * (t - plan.mu);
    plan.sigma = transformed.size() > 1
                     ? std::sqrt(ss / static_cast<double>(transformed.size() - 1))
                     : 0.0;
    if (plan.sigma <= 0) {
      // Winsorization can flatten a near-constant feature.
      plan.imputation = FittedPreprocessor::Imputation::Dropped;
      plan.drop_reason = "constant_after_transform";
      audit.dropped_features.emplace_back(train.numeric_names[f], plan.drop_reason);
    }
    fp.numeric.push_back(plan);
  }

  // Retain raw training rows as KNN donors.
  fp.donor_rows = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n),
                                            static_cast<Eigen::Index>(m),
                                            std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t f = 0; f < m; ++f) fp.donor_rows(static_cast<Eigen::Index>(r),
                                                      static_cast<Eigen::Index>(f)) =
        train.records[r].numeric[f];

  // Categorical encoders.
  for (std::size_t f = 0; f < train.categorical_names.size(); ++f) {
    FittedPreprocessor::CategoricalPlan plan;
    const std::string& name = train.categorical_names[f];
    std::map<std::string, std::pair<double, double>> counts;  // category -> (pos, neg)
    std::set<std::string> domain;
    for (std::size_t r = 0; r < n; ++r) {
      const auto& v = train.records[r].categorical[f];
      if (!v) continue;
      domain.insert(*v);
      if (binary_targets) {
        if ((*binary_targets)[r] == 1)
          counts[*v].first += 1;
        else
          counts[*v].second += 1;
      }
    }
    auto ordered_it = policy.ordered_domains.find(name);
    if (ordered_it != policy.ordered_domains.end()) {
      plan.encoding = FittedPreprocessor::Encoding::Label;
      plan.categories = ordered_it->second;
    } else if (static_cast<int>(domain.size()) <= policy.woe_cardinality_threshold) {
      plan.encoding = FittedPreprocessor::Encoding::OneHot;
      plan.categories.assign(domain.begin(), domain.end());
    } else {
      if (binary_targets == nullptr)
        throw Error("fit_preprocessor: binary targets required for WoE encoding of " + name);
      plan.encoding = FittedPreprocessor::Encoding::Woe;
      double pos_total = 0, neg_total = 0;
      for (const auto& [cat, pn] : counts) {
        pos_total += pn.first + 0.5;
        neg_total += pn.second + 0.5;
      }
      for (const auto& [cat, pn] : counts) {
        double dist_pos = (pn.first + 0.5) / pos_total;
        double dist_neg = (pn.second + 0.5) / neg_total;
        plan.woe[cat] = std::log(dist_pos / dist_neg);
        plan.categories.push_back(cat);
      }
      plan.default_woe = 0.0;  // global prior
    }
    fp.categorical.push_back(std::move(plan));
  }

  return {fp, audit};
}

std::vector<std::string> FittedPreprocessor::output_columns() const {
  std::vector<std::string> cols;
  for (std::size_t f = 0; f < numeric_names.size(); ++f)
    if (numeric[f].imputation != Imputation::Dropped) cols.push_back(numeric_names[f]);
  for (std::size_t f = 0; f < categorical_names.size(); ++f) {
    const auto& plan = categorical[f];
    if (plan.encoding == Encoding::OneHot) {
      for (const auto& cat : plan.categories) cols.push_back(categorical_names[f] + "=" + cat);
    } else {
      cols.push_back(categorical_names[f]);
    }
  }
  return cols;
}

namespace {

double impute_knn(const FittedPreprocessor& fp, const std::vector<double>& query,
                  std::size_t target) {
  // Nearest donors in standardized raw space over columns observed in both
  // rows; the donor must hold the target feature. Ties break by row order.
  const std::size_t m = fp.numeric_names.size();
  std::vector<std::pair<double, std::size_t>> candidates;
  for (Eigen::Index r = 0; r < fp.donor_rows.rows(); ++r) {
    double target_v = fp.donor_rows(r, static_cast<Eigen::Index>(target));
    if (std::isnan(target_v)) continue;
    double dist2 = 0;
    std::size_t shared = 0;
    for (std::size_t f = 0; f < m; ++f) {
      if (f == target) continue;
      if (fp.numeric[f].imputation == FittedPreprocessor::Imputation::Dropped) continue;
      double q = query[f];
      double t = fp.donor_rows(r, static_cast<Eigen::Index>(f));
      if (std::isnan(q) || std::isnan(t)) continue;
      double d = (q - t) / fp.numeric[f].donor_std;
      dist2 += d * d;
      ++shared;
    }
    if (shared == 0) continue;
    candidates.emplace_back(std::sqrt(dist2 / static_cast<double>(shared)), r);
  }
  if (candidates.empty()) return fp.numeric[target].median;
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::size_t k = std::min<std::size_t>(fp.knn_k, candidates.size());
  double total = 0;
  for (std::size_t i = 0; i < k; ++i)
    total += fp.donor_rows(static_cast<Eigen::Index>(candidates[i].second),
                           static_cast<Eigen::Index>(target));
  return total / static_cast<double>(k);
}

}  // namespace

FeatureMatrix apply_preprocessor(const FittedPreprocessor& fp, const ObservationSet& obs) {
  if (obs.numeric_names != fp.numeric_names || obs.categorical_names != fp.categorical_names)
    throw Error("apply_preprocessor: observation columns do not match the fitted preprocessor");

  FeatureMatrix out;
  out.column_names = fp.output_columns();
  out.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(obs.records.size()),
                                     static_cast<Eigen::Index>(out.column_names.size()));
  out.row_keys.reserve(obs.records.size());

  for (std::size_t r = 0; r < obs.records.size(); ++r) {
    const auto& rec = obs.records[r];
    out.row_keys.push_back({rec.firm_id, rec.agency, rec.period});
    Eigen::Index c = 0;
    for (std::size_t f = 0; f < fp.numeric_names.size(); ++f) {
      const auto& plan = fp.numeric[f];
      if (plan.imputation == FittedPreprocessor::Imputation::Dropped) continue;
      double v = rec.numeric[f];
      if (std::isnan(v)) {
        v = plan.imputation == FittedPreprocessor::Imputation::Median
                ? plan.median
                : impute_knn(fp, rec.numeric, f);
      }
      if (std::isnan(v))
        throw Error("apply_preprocessor: feature " + fp.numeric_names[f] +
                    " still missing after imputation");
      v = std::clamp(v, plan.winsor_lo, plan.winsor_hi);
      if (plan.log_applied) v = std::log(v);
      out.values(static_cast<Eigen::Index>(r), c++) = (v - plan.mu) / plan.sigma;
    }
    for (std::size_t f = 0; f < fp.categorical_names.size(); ++f) {
      const auto& plan = fp.categorical[f];
      const auto& v = rec.categorical[f];
      if (plan.encoding == FittedPreprocessor::Encoding::OneHot) {
        for (const auto& cat : plan.categories) {
          out.values(static_cast<Eigen::Index>(r), c++) = (v && *v == cat) ? 1.0 : 0.0;
        }
      } else if (plan.encoding == FittedPreprocessor::Encoding::Label) {
        double code = -1.0;  // unknown / missing
        if (v) {
          auto it = std::find(plan.categories.begin(), plan.categories.end(), *v);
          if (it != plan.categories.end())
            code = static_cast<double>(it - plan.categories.begin());
        }
        out.values(static_cast<Eigen::Index>(r), c++) = code;
      } else {
        double code = plan.default_woe;
        if (v) {
          auto it = plan.woe.find(*v);
          if (it != plan.woe.end()) code = it->second;
        }
        out.values(static_cast<Eigen::Index>(r), c++) = code;
      }
    }
  }
  return out;
}

std::string FittedPreprocessor::to_json() const {
  nlohmann::json j;
  j["format_version"] = 1;
  j["fitted_on"] = fitted_on;
  j["knn_k"] = knn_k;
  nlohmann::json pol;
  pol["low_missing_band"] = policy.low_missing_band;
  pol["high_missing_band"] = policy.high_missing_band;
  pol["knn_k"] = policy.knn_k;
  pol["winsor_lo"] = policy.winsor_lo;
  pol["winsor_hi"] = policy.winsor_hi;
  pol["log_skew_threshold"] = policy.log_skew_threshold;
  pol["woe_cardinality_threshold"] = policy.woe_cardinality_threshold;
  pol["drop_auc_margin"] = policy.drop_auc_margin;
  j["policy"] = pol;
  j["numeric_names"] = numeric_names;
  nlohmann::json jn = nlohmann::json::array();
  for (const auto& p : numeric) {
    nlohmann::json e;
    e["imputation"] = p.imputation == Imputation::Median
                          ? "median"
                          : (p.imputation == Imputation::Knn ? "knn" : "dropped");
    e["drop_reason"] = p.drop_reason;
    e["median"] = p.median;
    e["winsor_lo"] = p.winsor_lo;
    e["winsor_hi"] = p.winsor_hi;
    e["log_applied"] = p.log_applied;
    e["mu"] = p.mu;
    e["sigma"] = p.sigma;
    e["donor_mean"] = p.donor_mean;
    e["donor_std"] = p.donor_std;
    jn.push_back(e);
  }
  j["numeric"] = jn;
  j["categorical_names"] = categorical_names;
  nlohmann::json jc = nlohmann::json::array();
  for (const auto& p : categorical) {
    nlohmann::json e;
    e["encoding"] = p.encoding == Encoding::Label ? "label"
                                                  : (p.encoding == Encoding::OneHot ? "onehot" : "woe");
    e["categories"] = p.categories;
    e["woe"] = p.woe;
    e["default_woe"] = p.default_woe;
    jc.push_back(e);
  }
  j["categorical"] = jc;
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < donor_rows.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index f = 0; f < donor_rows.cols(); ++f) {
      double v = donor_rows(r, f);
      if (std::isnan(v))
        row.push_back(nullptr);
      else
        row.push_back(v);
    }
    rows.push_back(row);
  }
  j["donor_rows"] = rows;
  return j.dump();
}

FittedPreprocessor FittedPreprocessor::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  FittedPreprocessor fp;
  fp.fitted_on = j.at("fitted_on").get<std::string>();
  fp.knn_k = j.at("knn_k").get<int>();
  const auto& pol = j.at("policy");
  fp.policy.low_missing_band = pol.at("low_missing_band").get<double>();
  fp.policy.high_missing_band = pol.at("high_missing_band").get<double>();
  fp.policy.knn_k = pol.at("knn_k").get<int>();
  fp.policy.winsor_lo = pol.at("winsor_lo").get<double>();
  fp.policy.winsor_hi = pol.at("winsor_hi").get<double>();
  fp.policy.log_skew_threshold = pol.at("log_skew_threshold").get<double>();
  fp.policy.woe_cardinality_threshold = pol.at("woe_cardinality_threshold").get<int>();
  fp.policy.drop_auc_margin = pol.at("drop_auc_margin").get<double>();
  fp.numeric_names = j.at("numeric_names").get<std::vector<std::string>>();
  for (const auto& e : j.at("numeric")) {
    NumericPlan p;
    std::string imp = e.at("imputation").get<std::string>();
    p.imputation = imp == "median" ? Imputation::Median
                                   : (imp == "knn" ? Imputation::Knn : Imputation::Dropped);
    p.drop_reason = e.at("drop_reason").get<std::string>();
    p.median = e.at("median").get<double>();
    p.winsor_lo = e.at("winsor_lo").get<double>();
    p.winsor_hi = e.at("winsor_hi").get<double>();
    p.log_applied = e.at("log_applied").get<bool>();
    p.mu = e.at("mu").get<double>();
    p.sigma = e.at("sigma").get<double>();
    p.donor_mean = e.at("donor_mean").get<double>();
    p.donor_std = e.at("donor_std").get<double>();
    fp.numeric.push_back(p);
  }
  fp.categorical_names = j.at("categorical_names").get<std::vector<std::string>>();
  for (const auto& e : j.at("categorical")) {
    CategoricalPlan p;
    std::string enc = e.at("encoding").get<std::string>();
    p.encoding = enc == "label" ? Encoding::Label
                                : (enc == "onehot" ? Encoding::OneHot : Encoding::Woe);
    p.categories = e.at("categories").get<std::vector<std::string>>();
    p.woe = e.at("woe").get<std::map<std::string, double>>();
    p.default_woe = e.at("default_woe").get<double>();
    fp.categorical.push_back(p);
  }
  const auto& rows = j.at("donor_rows");
  fp.donor_rows = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(rows.size()),
                                            static_cast<Eigen::Index>(fp.numeric_names.size()),
                                            std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t f = 0; f < rows[r].size(); ++f)
      if (!rows[r][f].is_null())
        fp.donor_rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) =
            rows[r][f].get<double>();
  return fp;
}

std::string FittedPreprocessor::hash() const { return hex64(fnv1a64(to_json())); }

std::string AuditLog::to_json() const {
  nlohmann::json j;
  j["exact_duplicates_removed"] = exact_duplicates_removed;
  nlohmann::json nd = nlohmann::json::array();
  for (const auto& e : near_duplicates_resolved) {
    nlohmann::json x;
    x["firm_id"] = e.firm_id;
    x["agency"] = e.agency;
    x["period"] = e.period.to_string();
    x["kept"] = e.kept;
    x["dropped"] = e.dropped;
    nd.push_back(x);
  }
  j["near_duplicates_resolved"] = nd;
  nlohmann::json df = nlohmann::json::array();
  for (const auto& [f, reason] : dropped_features) df.push_back({{"feature", f}, {"reason", reason}});
  j["dropped_features"] = df;
  j["warnings"] = warnings;
  return j.dump(2);
}

}  // namespace credscore
