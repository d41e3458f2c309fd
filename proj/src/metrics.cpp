#include "credscore/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include "credscore/ingest.hpp"

namespace credscore {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace {

void check_binary(const std::vector<int>& labels, std::size_t n_scores, const char* op) {
  if (labels.size() != n_scores)
    throw Error(std::string(op) + ": length mismatch");
  if (labels.empty()) throw Error(std::string(op) + ": empty input");
  bool has_pos = false, has_neg = false;
  for (int y : labels) {
    if (y == 1) has_pos = true;
    else if (y == 0) has_neg = true;
    else throw Error(std::string(op) + ": labels must be 0/1");
  }
  if (!has_pos || !has_neg) throw Error(std::string(op) + ": both classes required");
}

// Midranks (1-based, average ties).
std::vector<double> midranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double r = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

ConfusionCounts confusion(const std::vector<int>& labels, const std::vector<double>& probs,
                          double threshold) {
  if (labels.size() != probs.size()) throw Error("confusion: length mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    bool pred = probs[i] >= threshold;
    if (labels[i] == 1)
      pred ? ++c.tp : ++c.fn;
    else
      pred ? ++c.fp : ++c.tn;
  }
  return c;
}

double kappa(const ConfusionCounts& c) {
  const double n = static_cast<double>(c.total());
  if (n <= 0) throw Error("kappa: empty confusion counts");
  double po = static_cast<double>(c.tp + c.tn) / n;
  double pe = (static_cast<double>(c.tp + c.fn) * static_cast<double>(c.tp + c.fp) +
               static_cast<double>(c.tn + c.fp) * static_cast<double>(c.tn + c.fn)) /
              (n * n);
  if (pe >= 1.0) return 0.0;  // degenerate marginals
  return (po - pe) / (1.0 - pe);
}

double auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  check_binary(labels, scores.size(), "auc");
  auto ranks = midranks(scores);
  double rank_sum_pos = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      rank_sum_pos += ranks[i];
      ++n_pos;
    }
  }
  std::size_t n_neg = labels.size() - n_pos;
  double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc_trapezoid(const std::vector<int>& labels, const std::vector<double>& scores) {
  check_binary(labels, scores.size(), "auc_trapezoid");
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double n_pos = 0, n_neg = 0;
  for (int y : labels) (y == 1 ? n_pos : n_neg) += 1.0;

  double area = 0, tp = 0, fp = 0, prev_tp = 0, prev_fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) (labels[order[k]] == 1 ? tp : fp) += 1.0;
    area += (fp - prev_fp) * (tp + prev_tp) / 2.0;
    prev_tp = tp;
    prev_fp = fp;
    i = j + 1;
  }
  return area / (n_pos * n_neg);
}

ClassificationReport classification_metrics(const std::vector<int>& labels,
                                            const std::vector<double>& probs, double threshold) {
  check_binary(labels, probs.size(), "classification_metrics");
  ClassificationReport rep;
  rep.threshold = threshold;
  ConfusionCounts c = confusion(labels, probs, threshold);
  const double n = static_cast<double>(c.total());
  rep.accuracy = static_cast<double>(c.tp + c.tn) / n;
  if (c.tp + c.fp > 0)
    rep.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  else
    std::cerr << "warning: precision 0/0, reported as 0\n";
  if (c.tp + c.fn > 0)
    rep.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  rep.f1 = (rep.precision + rep.recall > 0)
               ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
               : 0.0;
  rep.auc = auc(labels, probs);
  double brier = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double d = probs[i] - static_cast<double>(labels[i]);
    brier += d * d;
  }
  rep.brier = brier / n;
  rep.kappa = kappa(c);
  return rep;
}

RegressionReport regression_metrics(const std::vector<double>& y, const std::vector<double>& pred) {
  if (y.size() != pred.size()) throw Error("regression_metrics: length mismatch");
  if (y.empty()) throw Error("regression_metrics: empty input");
  RegressionReport rep;
  double sse = 0, sae = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double d = pred[i] - y[i];
    sse += d * d;
    sae += std::abs(d);
  }
  const double n = static_cast<double>(y.size());
  rep.rmse = std::sqrt(sse / n);
  rep.mae = sae / n;
  double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sst = 0;
  for (double v : y) sst += (v - mean) * (v - mean);
  if (sst > 0) {
    rep.r2 = 1.0 - sse / sst;
  } else {
    rep.r2_defined = false;
    rep.r2 = std::numeric_limits<double>::quiet_NaN();
  }
  return rep;
}

DeLongResult delong_test(const std::vector<int>& labels, const std::vector<double>& scores_a,
                         const std::vector<double>& scores_b) {
  check_binary(labels, scores_a.size(), "delong_test");
  if (scores_a.size() != scores_b.size()) throw Error("delong_test: length mismatch");

  std::vector<double> pos_a, neg_a, pos_b, neg_b;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      pos_a.push_back(scores_a[i]);
      pos_b.push_back(scores_b[i]);
    } else {
      neg_a.push_back(scores_a[i]);
      neg_b.push_back(scores_b[i]);
    }
  }
  const std::size_t m = pos_a.size(), n = neg_a.size();

  auto components = [&](const std::vector<double>& pos, const std::vector<double>& neg,
                        std::vector<double>& v10, std::vector<double>& v01) {
    v10.assign(m, 0.0);
    v01.assign(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double psi = pos[i] > neg[j] ? 1.0 : (pos[i] == neg[j] ? 0.5 : 0.0);
        v10[i] += psi;
        v01[j] += psi;
      }
    }
    for (auto& v : v10) v /= static_cast<double>(n);
    for (auto& v : v01) v /= static_cast<double>(m);
  };

  std::vector<double> v10a, v01a, v10b, v01b;
  components(pos_a, neg_a, v10a, v01a);
  components(pos_b, neg_b, v10b, v01b);

  DeLongResult res;
  res.auc_a = std::accumulate(v10a.begin(), v10a.end(), 0.0) / static_cast<double>(m);
  res.auc_b = std::accumulate(v10b.begin(), v10b.end(), 0.0) / static_cast<double>(m);

  auto cov = [](const std::vector<double>& x, const std::vector<double>& y, double mx, double my) {
    if (x.size() < 2) return 0.0;
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
    return s / static_cast<double>(x.size() - 1);
  };

  double s10_aa = cov(v10a, v10a, res.auc_a, res.auc_a);
  double s10_bb = cov(v10b, v10b, res.auc_b, res.auc_b);
  double s10_ab = cov(v10a, v10b, res.auc_a, res.auc_b);
  double s01_aa = cov(v01a, v01a, res.auc_a, res.auc_a);
  double s01_bb = cov(v01b, v01b, res.auc_b, res.auc_b);
  double s01_ab = cov(v01a, v01b, res.auc_a, res.auc_b);

  res.var_diff = (s10_aa + s10_bb - 2.0 * s10_ab) / static_cast<double>(m) +
                 (s01_aa + s01_bb - 2.0 * s01_ab) / static_cast<double>(n);
  double diff = res.auc_a - res.auc_b;
  if (res.var_diff <= 0.0 || diff == 0.0) {
    res.z = 0.0;
    res.p_value = diff == 0.0 ? 1.0 : 0.0;
    if (diff != 0.0 && res.var_diff <= 0.0) res.p_value = 0.0;
    if (diff == 0.0) res.p_value = 1.0;
  } else {
    res.z = diff / std::sqrt(res.var_diff);
    res.p_value = 2.0 * (1.0 - normal_cdf(std::abs(res.z)));
  }
  return res;
}

BootstrapCI bootstrap_ci(const std::function<double(const std::vector<std::size_t>&)>& stat,
                         std::size_t n_rows, std::size_t n_resamples, std::uint64_t seed) {
  if (n_rows == 0) throw Error("bootstrap_ci: empty data");
  std::vector<std::size_t> identity(n_rows);
  std::iota(identity.begin(), identity.end(), 0);

  BootstrapCI ci;
  ci.point = stat(identity);
  ci.n_resamples = n_resamples;

  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n_rows - 1);
  std::vector<double> values;
  values.reserve(n_resamples);
  for (std::size_t r = 0; r < n_resamples; ++r) {
    bool done = false;
    for (int attempt = 0; attempt < 10 && !done; ++attempt) {
      std::vector<std::size_t> idx(n_rows);
      for (auto& v : idx) v = pick(rng);
      try {
        values.push_back(stat(idx));
        done = true;
      } catch (const Error&) {
        // degenerate resample (e.g. single class); redraw
      }
    }
    if (!done) ++ci.n_skipped;
  }
  if (values.size() < 100) throw Error("bootstrap_ci: fewer than 100 valid resamples");
  ci.lower = quantile_linear(values, 0.025);
  ci.upper = quantile_linear(values, 0.975);
  return ci;
}

BootstrapCI bootstrap_auc_ci(const std::vector<int>& labels, const std::vector<double>& scores,
                             std::size_t n_resamples, std::uint64_t seed) {
  check_binary(labels, scores.size(), "bootstrap_auc_ci");
  auto stat = [&](const std::vector<std::size_t>& idx) {
    std::vector<int> l(idx.size());
    std::vector<double> s(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      l[i] = labels[idx[i]];
      s[i] = scores[idx[i]];
    }
    return auc(l, s);
  };
  return bootstrap_ci(stat, labels.size(), n_resamples, seed);
}

BootstrapCI bootstrap_rmse_ci(const std::vector<double>& y, const std::vector<double>& pred,
                              std::size_t n_resamples, std::uint64_t seed) {
  if (y.size() != pred.size()) throw Error("bootstrap_rmse_ci: length mismatch");
  auto stat = [&](const std::vector<std::size_t>& idx) {
    double sse = 0;
    for (std::size_t i : idx) {
      double d = pred[i] - y[i];
      sse += d * d;
    }
    return std::sqrt(sse / static_cast<double>(idx.size()));
  };
  return bootstrap_ci(stat, y.size(), n_resamples, seed);
}

PsiReport psi_from_proportions(const std::vector<double>& expected_props,
                               const std::vector<double>& actual_props) {
  if (expected_props.size() != actual_props.size())
    throw Error("psi: proportion vectors differ in length");
  constexpr double kFloor = 1e-4;
  PsiReport rep;
  for (std::size_t i = 0; i < expected_props.size(); ++i) {
    double e = std::max(expected_props[i], kFloor);
    double a = std::max(actual_props[i], kFloor);
    rep.psi += (a - e) * std::log(a / e);
  }
  rep.flagged = rep.psi > 0.25;
  return rep;
}

PsiReport psi(const std::vector<double>& expected, const std::vector<double>& actual, int n_bins) {
  if (expected.empty() || actual.empty()) throw Error("psi: empty sample");
  std::vector<double> edges;
  for (int i = 1; i < n_bins; ++i)
    edges.push_back(quantile_linear(expected, static_cast<double>(i) / n_bins));

  auto bin_props = [&](const std::vector<double>& sample) {
    std::vector<double> counts(n_bins, 0.0);
    for (double v : sample) {
      std::size_t b = std::upper_bound(edges.begin(), edges.end(), v) - edges.begin();
      counts[b] += 1.0;
    }
    for (auto& c : counts) c /= static_cast<double>(sample.size());
    return counts;
  };

  PsiReport rep = psi_from_proportions(bin_props(expected), bin_props(actual));
  rep.bin_edges = edges;
  return rep;
}

}  // namespace credscore
