#include "credscore/tune.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "credscore/metrics.hpp"

namespace credscore {

SearchSpace SearchSpace::for_preset(GrowthMode mode) {
  SearchSpace s;
  switch (mode) {
    case GrowthMode::Symmetric:
      s.dims = {{"iterations", 100, 2000, Dimension::Scale::Linear, true},
                {"learning_rate", 1e-4, 0.3, Dimension::Scale::Log, false},
                {"max_depth", 4, 10, Dimension::Scale::Linear, true}};
      break;
    case GrowthMode::LeafWise:
      s.dims = {{"num_leaves", 31, 512, Dimension::Scale::Linear, true},
                {"learning_rate", 1e-4, 0.3, Dimension::Scale::Log, false},
                {"feature_fraction", 0.5, 1.0, Dimension::Scale::Linear, false}};
      break;
    case GrowthMode::DepthWise:
      s.dims = {{"max_depth", 3, 12, Dimension::Scale::Linear, true},
                {"learning_rate", 1e-4, 0.3, Dimension::Scale::Log, false},
                {"subsample", 0.5, 1.0, Dimension::Scale::Linear, false}};
      break;
  }
  return s;
}

namespace {

double to_internal(const Dimension& d, double x) {
  return d.scale == Dimension::Scale::Log ? std::log(x) : x;
}

double from_internal(const Dimension& d, double t) {
  double x = d.scale == Dimension::Scale::Log ? std::exp(t) : t;
  x = std::clamp(x, d.lower, d.upper);
  if (d.is_integer) x = std::clamp(std::round(x), d.lower, d.upper);
  return x;
}

// Halton radical inverse for the quasi-random startup phase.
double radical_inverse(std::size_t index, int base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * static_cast<double>(index % base);
    index /= base;
  }
  return r;
}

constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29};

double gaussian_mixture_logpdf(double t, const std::vector<double>& centers,
                               const std::vector<double>& bws) {
  double acc = 0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    double z = (t - centers[i]) / bws[i];
    acc += std::exp(-0.5 * z * z) / bws[i];
  }
  double pdf = acc / (static_cast<double>(centers.size()) * std::sqrt(2.0 * M_PI));
  return std::log(std::max(pdf, 1e-300));
}

// Per-point bandwidth from nearest-neighbor spacing, so the good-density model
// sharpens as trials concentrate; floored to keep the mixture proper.
std::vector<double> adaptive_bandwidths(const std::vector<double>& centers, double range) {
  // clip keeps kernels from degenerating when trials pile up at one point
  double floor_bw = std::max(
      range / std::min(100.0, static_cast<double>(centers.size() + 1)), 1e-12);
  if (centers.size() < 2) return std::vector<double>(centers.size(), 0.1 * range);
  std::vector<double> bws(centers.size());
  for (std::size_t i = 0; i < centers.size(); ++i) {
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centers.size(); ++j)
      if (j != i) nearest = std::min(nearest, std::abs(centers[i] - centers[j]));
    bws[i] = std::max(nearest, floor_bw);
  }
  return bws;
}

double bandwidth(const std::vector<double>& centers, double range) {
  if (centers.size() < 2) return 0.1 * range;
  double mean = std::accumulate(centers.begin(), centers.end(), 0.0) /
                static_cast<double>(centers.size());
  double ss = 0;
  for (double c : centers) ss += (c - mean) * (c - mean);
  double sigma = std::sqrt(ss / static_cast<double>(centers.size() - 1));
  double bw = 1.06 * sigma * std::pow(static_cast<double>(centers.size()), -0.2);
  return std::max(bw, 1e-3 * range);
}

}  // namespace

Params suggest(const StudyState& state, const SearchSpace& space) {
  if (space.dims.empty()) throw Error("suggest: empty search space");

  std::vector<const Trial*> completed;
  for (const auto& t : state.trials)
    if (t.status == Trial::Status::Completed) completed.push_back(&t);

  Params out;
  if (static_cast<int>(completed.size()) < state.n_startup) {
    // Seeded Halton points with a per-dimension random shift.
    std::size_t index = state.trials.size() + 1;
    for (std::size_t d = 0; d < space.dims.size(); ++d) {
      const auto& dim = space.dims[d];
      Rng shift_rng(derive_seed(state.seed, "startup-shift", dim.name));
      double shift = std::uniform_real_distribution<double>(0.0, 1.0)(shift_rng);
      double u = radical_inverse(index, kPrimes[d % 10]) + shift;
      u -= std::floor(u);
      double t_lo = to_internal(dim, dim.lower), t_hi = to_internal(dim, dim.upper);
      out[dim.name] = from_internal(dim, t_lo + u * (t_hi - t_lo));
    }
    return out;
  }

  // TPE: split at the gamma quantile, model good/bad densities per dimension,
  // keep the candidate with the highest density ratio.
  std::sort(completed.begin(), completed.end(),
            [](const Trial* a, const Trial* b) { return a->value < b->value; });
  std::size_t n_good = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(state.gamma * static_cast<double>(completed.size()))));

  Rng rng(derive_seed(state.seed, "tpe", "", static_cast<int>(state.trials.size())));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  double best_score = -std::numeric_limits<double>::infinity();
  Params best;
  for (int c = 0; c < state.n_candidates; ++c) {
    Params cand;
    double score = 0;
    for (const auto& dim : space.dims) {
      double t_lo = to_internal(dim, dim.lower), t_hi = to_internal(dim, dim.upper);
      double range = t_hi - t_lo;
      std::vector<double> good, bad;
      for (std::size_t i = 0; i < completed.size(); ++i) {
        double t = to_internal(dim, completed[i]->params.at(dim.name));
        (i < n_good ? good : bad).push_back(t);
      }
      std::vector<double> bw_good = adaptive_bandwidths(good, range);
      std::vector<double> bw_bad = adaptive_bandwidths(bad, range);
      // wide prior component in both mixtures keeps a floor of exploration
      double mid = 0.5 * (t_lo + t_hi);
      good.push_back(mid);
      bw_good.push_back(range);
      bad.push_back(mid);
      bw_bad.push_back(range);
      std::size_t pick = std::min<std::size_t>(
          static_cast<std::size_t>(unit(rng) * static_cast<double>(good.size())), good.size() - 1);
      double t = std::clamp(good[pick] + gauss(rng) * bw_good[pick], t_lo, t_hi);
      score += gaussian_mixture_logpdf(t, good, bw_good);
      if (!bad.empty()) score -= gaussian_mixture_logpdf(t, bad, bw_bad);
      cand[dim.name] = from_internal(dim, t);
    }
    if (score > best_score) {
      best_score = score;
      best = std::move(cand);
    }
  }
  return best;
}

StudyResult run_study(const std::function<double(const Params&)>& objective,
                      const SearchSpace& space, int n_trials, std::uint64_t seed) {
  StudyResult res;
  res.state.seed = seed;
  res.best_value = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_trials; ++i) {
    Params p = suggest(res.state, space);
    Trial trial;
    trial.params = p;
    try {
      trial.value = objective(p);
      if (!std::isfinite(trial.value)) throw Error("non-finite objective");
      trial.status = Trial::Status::Completed;
      if (trial.value < res.best_value) {
        res.best_value = trial.value;
        res.best_params = p;
      }
    } catch (const std::exception& e) {
      trial.status = Trial::Status::Failed;
      trial.value = std::numeric_limits<double>::quiet_NaN();
      std::cerr << "trial " << i << " failed: " << e.what() << "\n";
    }
    res.state.trials.push_back(std::move(trial));
  }
  if (!std::isfinite(res.best_value)) throw Error("run_study: every trial failed");
  return res;
}

std::string StudyState::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["gamma"] = gamma;
  j["n_startup"] = n_startup;
  nlohmann::json jt = nlohmann::json::array();
  for (const auto& t : trials) {
    nlohmann::json e;
    e["params"] = t.params;
    e["status"] = t.status == Trial::Status::Completed ? "completed" : "failed";
    if (t.status == Trial::Status::Completed) e["value"] = t.value;
    jt.push_back(e);
  }
  j["trials"] = jt;
  return j.dump();
}

namespace {

double ensemble_auc(const std::vector<std::vector<double>>& preds, const std::vector<int>& labels,
                    const std::vector<double>& w) {
  std::vector<double> mix(labels.size(), 0.0);
  for (std::size_t m = 0; m < preds.size(); ++m)
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] += w[m] * preds[m][i];
  return auc(labels, mix);
}

double dist_to_uniform(const std::vector<double>& w) {
  double u = 1.0 / static_cast<double>(w.size());
  double d = 0;
  for (double v : w) d += (v - u) * (v - u);
  return d;
}

void enumerate_simplex(std::size_t dims, int denom, std::vector<int>& counts,
                       const std::function<void(const std::vector<int>&)>& visit, int remaining,
                       std::size_t at) {
  if (at + 1 == dims) {
    counts[at] = remaining;
    visit(counts);
    return;
  }
  for (int c = 0; c <= remaining; ++c) {
    counts[at] = c;
    enumerate_simplex(dims, denom, counts, visit, remaining - c, at + 1);
  }
}

}  // namespace

EnsembleWeights optimize_weights(const std::vector<std::vector<double>>& val_preds,
                                 const std::vector<int>& labels) {
  if (val_preds.empty()) throw Error("optimize_weights: no models");
  for (const auto& p : val_preds)
    if (p.size() != labels.size()) throw Error("optimize_weights: length mismatch");

  const std::size_t m = val_preds.size();
  if (m == 1) return {{1.0}};

  constexpr int kDenom = 20;
  std::vector<double> best_w;
  double best_auc = -1, best_dist = 0;
  auto consider = [&](const std::vector<double>& w) {
    double a = ensemble_auc(val_preds, labels, w);
    double d = dist_to_uniform(w);
    if (a > best_auc + 1e-12 || (std::abs(a - best_auc) <= 1e-12 && d < best_dist - 1e-15)) {
      best_auc = a;
      best_dist = d;
      best_w = w;
    }
  };

  std::vector<int> counts(m, 0);
  enumerate_simplex(m, kDenom, counts, [&](const std::vector<int>& c) {
    std::vector<double> w(m);
    for (std::size_t i = 0; i < m; ++i) w[i] = static_cast<double>(c[i]) / kDenom;
    consider(w);
  }, kDenom, 0);

  // Coordinate-wise golden-section refinement around the grid optimum.
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < m; ++i) {
      auto with_coord = [&](double wi) {
        std::vector<double> w = best_w;
        double rest = 1.0 - w[i];
        w[i] = wi;
        double scale = rest > 1e-15 ? (1.0 - wi) / rest : 0.0;
        for (std::size_t k = 0; k < m; ++k)
          if (k != i) w[k] = rest > 1e-15 ? w[k] * scale : (1.0 - wi) / static_cast<double>(m - 1);
        return w;
      };
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 40; ++it) {
        double x1 = hi - phi * (hi - lo);
        double x2 = lo + phi * (hi - lo);
        double f1 = ensemble_auc(val_preds, labels, with_coord(x1));
        double f2 = ensemble_auc(val_preds, labels, with_coord(x2));
        consider(with_coord(x1));
        consider(with_coord(x2));
        if (f1 < f2)
          lo = x1;
        else
          hi = x2;
      }
    }
  }

  // Exact simplex feasibility.
  double total = 0;
  for (auto& w : best_w) {
    w = std::max(w, 0.0);
    total += w;
  }
  for (auto& w : best_w) w /= total;
  return {best_w};
}

IsotonicMap fit_isotonic(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw Error("fit_isotonic: length mismatch");
  if (scores.size() < 2) throw Error("fit_isotonic: need at least 2 samples");
  bool has_pos = false, has_neg = false;
  for (int y : labels) (y == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) throw Error("fit_isotonic: both classes required");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Tie groups first, so the fit is a function of the score.
  struct Block {
    double score_min;
    double sum_y;
    double count;
  };
  std::vector<Block> blocks;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    Block b{scores[order[i]], 0, 0};
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      b.sum_y += labels[order[j]];
      b.count += 1;
      ++j;
    }
    blocks.push_back(b);
    i = j;
  }

  // Pool adjacent violators.
  std::vector<Block> stack;
  for (const auto& b : blocks) {
    stack.push_back(b);
    while (stack.size() >= 2) {
      auto& prev = stack[stack.size() - 2];
      auto& last = stack[stack.size() - 1];
      if (prev.sum_y / prev.count <= last.sum_y / last.count) break;
      prev.sum_y += last.sum_y;
      prev.count += last.count;
      stack.pop_back();
    }
  }

  IsotonicMap map;
  for (const auto& b : stack) {
    map.breakpoints.push_back(b.score_min);
    map.values.push_back(b.sum_y / b.count);
  }
  return map;
}

double apply_isotonic(const IsotonicMap& map, double score) {
  if (map.breakpoints.empty()) throw Error("apply_isotonic: empty map");
  auto it = std::upper_bound(map.breakpoints.begin(), map.breakpoints.end(), score);
  if (it == map.breakpoints.begin()) return map.values.front();
  std::size_t idx = static_cast<std::size_t>(it - map.breakpoints.begin()) - 1;
  return map.values[idx];
}

LogisticCalibration fit_logistic_calibration(const std::vector<double>& scores,
                                             const std::vector<int>& default_labels) {
  if (scores.size() != default_labels.size()) throw Error("fit_logistic_calibration: length mismatch");
  bool has_pos = false, has_neg = false;
  for (int y : default_labels) (y == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) throw Error("fit_logistic_calibration: both classes required");

  double a = 0.0, b = 0.0;
  auto nll = [&](double aa, double bb) {
    double total = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      double p = std::clamp(sigmoid(aa * scores[i] + bb), 1e-15, 1.0 - 1e-15);
      total += default_labels[i] == 1 ? -std::log(p) : -std::log(1.0 - p);
    }
    return total;
  };

  double cur = nll(a, b);
  for (int iter = 0; iter < 100; ++iter) {
    double ga = 0, gb = 0, haa = 0, hab = 0, hbb = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      double s = scores[i];
      double p = sigmoid(a * s + b);
      double r = p - static_cast<double>(default_labels[i]);
      double w = std::max(p * (1.0 - p), 1e-12);
      ga += r * s;
      gb += r;
      haa += w * s * s;
      hab += w * s;
      hbb += w;
    }
    if (std::sqrt(ga * ga + gb * gb) < 1e-10) break;
    double det = haa * hbb - hab * hab;
    double da, db;
    if (std::abs(det) < 1e-18) {
      da = ga / std::max(haa, 1e-12);
      db = gb / std::max(hbb, 1e-12);
    } else {
      da = (hbb * ga - hab * gb) / det;
      db = (haa * gb - hab * ga) / det;
    }
    double step = 1.0;
    for (int h = 0; h < 30; ++h) {
      double next = nll(a - step * da, b - step * db);
      if (next <= cur) {
        a -= step * da;
        b -= step * db;
        cur = next;
        break;
      }
      step /= 2.0;
    }
  }

  // Perfectly separated scores have a divergent slope; detect directly, since
  // the gradient tolerance can stop the iteration before |a| grows large.
  double min_pos = std::numeric_limits<double>::infinity(), max_pos = -min_pos;
  double min_neg = min_pos, max_neg = -min_pos;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (default_labels[i] == 1) {
      min_pos = std::min(min_pos, scores[i]);
      max_pos = std::max(max_pos, scores[i]);
    } else {
      min_neg = std::min(min_neg, scores[i]);
      max_neg = std::max(max_neg, scores[i]);
    }
  }
  bool separable = min_pos > max_neg || min_neg > max_pos;

  LogisticCalibration cal;
  if (separable && std::abs(a) <= 30.0) {
    a = min_pos > max_neg ? 30.0 : -30.0;
    cal.separation_capped = true;
    std::cerr << "warning: logistic calibration slope capped (separation)\n";
    for (int iter = 0; iter < 100; ++iter) {
      double gb = 0, hbb = 0;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        double p = sigmoid(a * scores[i] + b);
        gb += p - static_cast<double>(default_labels[i]);
        hbb += std::max(p * (1.0 - p), 1e-12);
      }
      if (std::abs(gb) < 1e-10) break;
      b -= gb / hbb;
    }
  } else if (std::abs(a) > 30.0) {
    std::cerr << "warning: logistic calibration slope capped (separation)\n";
    a = std::copysign(30.0, a);
    cal.separation_capped = true;
    // Refit the intercept with the slope fixed.
    for (int iter = 0; iter < 100; ++iter) {
      double gb = 0, hbb = 0;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        double p = sigmoid(a * scores[i] + b);
        gb += p - static_cast<double>(default_labels[i]);
        hbb += std::max(p * (1.0 - p), 1e-12);
      }
      if (std::abs(gb) < 1e-10) break;
      b -= gb / hbb;
    }
  }
  cal.a = a;
  cal.b = b;
  return cal;
}

}  // namespace credscore
