#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crowdfair/detail/parallel.hpp"
#include "crowdfair/detail/rng.hpp"
#include "crowdfair/error.hpp"
#include "crowdfair/fair_td.hpp"
#include "crowdfair/linear_model.hpp"
#include "crowdfair/metrics.hpp"

namespace crowdfair {

// Mixture of linear classifiers with probability weights (the solution shape
// the constrained-classification game produces).
struct RandomizedClassifier {
  std::vector<LogisticModel> models;
  std::vector<double> weights;  // >= 0, sums to 1
  std::string diagnostic;       // non-empty when the game did not close the gap

  void validate() const {
    if (models.size() != weights.size() || models.empty())
      throw ValidationError("randomized classifier: model/weight size mismatch");
    double s = 0.0;
    for (double w : weights) {
      if (w < 0) throw ValidationError("randomized classifier: negative weight");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw ValidationError("randomized classifier: weights must sum to 1");
  }
};

inline std::vector<std::uint8_t> predict_all(const LogisticModel& model,
                                             std::span<const std::vector<double>> x) {
  std::vector<std::uint8_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = model.predict(x[i]);
  return out;
}

inline FairnessReport evaluate_model(const LogisticModel& model,
                                     std::span<const std::vector<double>> x,
                                     std::span<const std::int8_t> truth,
                                     std::span<const std::string> groups,
                                     const MetricsOptions& opt = {}) {
  const auto preds = predict_all(model, x);
  return fairness_report(preds, truth, groups, opt);
}

// Expected metrics of a mixture: the weight-convex combination of the member
// models' per-group confusion cells.
inline FairnessReport evaluate_randomized(const RandomizedClassifier& rc,
                                          std::span<const std::vector<double>> x,
                                          std::span<const std::int8_t> truth,
                                          std::span<const std::string> groups,
                                          const MetricsOptions& opt = {}) {
  rc.validate();
  if (groups.size() != x.size())
    throw ValidationError("evaluate_randomized: every row needs a group");
  std::map<std::string, GroupCells> cells;
  for (std::size_t mi = 0; mi < rc.models.size(); ++mi) {
    const double wt = rc.weights[mi];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto p = rc.models[mi].predict(x[i]);
      auto& c = cells[groups[i]];
      c.support += wt;
      c.positives += wt * p;
      const std::int8_t t = truth.empty() ? std::int8_t{-1} : truth[i];
      if (t == 1) (p ? c.tp : c.fn) += wt;
      else if (t == 0) (p ? c.fp : c.tn) += wt;
    }
  }
  return detail_metrics::report_from_cells(cells, static_cast<std::int64_t>(x.size()), opt);
}

// ---------------------------------------------------------------------------
// H4 delta protocol
// ---------------------------------------------------------------------------

struct DeltaConfig {
  int repeats = 10;
  double split_fraction = 0.5;
  std::uint64_t seed = 0;
  int threads = 1;
  TrainConfig train;

  void validate(std::size_t n) const {
    train.validate();
    if (repeats < 1) throw ValidationError("repeats must be >= 1");
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
      throw ValidationError("split_fraction must be in (0, 1)");
    const auto n_train = static_cast<std::size_t>(static_cast<double>(n) * split_fraction);
    if (n_train < 1 || n_train >= n)
      throw ValidationError("split leaves an empty train or test set");
    if (threads < 1) throw ValidationError("threads must be >= 1");
  }
};

// Averaged (metric of truth-trained model) - (metric of consensus-trained
// model) over shared random splits. delta_accuracy is in percentage points.
struct DeltaReport {
  double delta_accuracy = 0.0;
  double delta_dp_diff = 0.0;
  double delta_eo_diff = 0.0;
  int repeats = 0;
  double split_fraction = 0.5;
};

inline DeltaReport delta_experiment(std::span<const std::vector<double>> features,
                                    std::span<const std::int8_t> truth,
                                    std::span<const std::uint8_t> td_labels,
                                    std::span<const std::string> groups,
                                    const DeltaConfig& cfg = {}) {
  const std::size_t n = features.size();
  cfg.validate(n);
  if (truth.size() != n || td_labels.size() != n || groups.size() != n)
    throw ValidationError("delta_experiment: inputs must align per task");
  for (const auto t : truth)
    if (t != 0 && t != 1) throw ComputeError("delta_experiment requires ground truth for every task");

  const auto gi = detail_fair::index_groups(groups);
  const auto n_train = static_cast<std::size_t>(static_cast<double>(n) * cfg.split_fraction);

  struct RepeatOutcome {
    double d_acc = 0.0;
    std::optional<double> d_dp, d_eo;
  };
  std::vector<RepeatOutcome> outcomes(static_cast<std::size_t>(cfg.repeats));

  detail::parallel_indexed(cfg.repeats, cfg.threads, [&](std::int64_t rep) {
    detail::Rng rng(cfg.seed + static_cast<std::uint64_t>(rep));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);

    bool ok = false;
    for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
      rng.shuffle(perm);
      // The split must leave every group represented in the test fold and
      // both label sources trainable (two classes in the train fold).
      std::vector<char> group_in_test(static_cast<std::size_t>(gi.n_groups()), 0);
      for (std::size_t i = n_train; i < n; ++i)
        group_in_test[static_cast<std::size_t>(gi.of_task[perm[i]])] = 1;
      bool truth0 = false, truth1 = false, td0 = false, td1 = false;
      for (std::size_t i = 0; i < n_train; ++i) {
        (truth[perm[i]] ? truth1 : truth0) = true;
        (td_labels[perm[i]] ? td1 : td0) = true;
      }
      ok = truth0 && truth1 && td0 && td1 &&
           std::all_of(group_in_test.begin(), group_in_test.end(), [](char c) { return c != 0; });
    }
    if (!ok)
      throw ComputeError("delta_experiment: no usable split found in 20 attempts (repeat " +
                         std::to_string(rep) + ")");

    std::vector<std::vector<double>> x_train, x_test;
    std::vector<std::uint8_t> y_truth, y_td;
    std::vector<std::int8_t> truth_test;
    std::vector<std::string> groups_test;
    for (std::size_t i = 0; i < n_train; ++i) {
      x_train.push_back(features[perm[i]]);
      y_truth.push_back(static_cast<std::uint8_t>(truth[perm[i]]));
      y_td.push_back(td_labels[perm[i]]);
    }
    for (std::size_t i = n_train; i < n; ++i) {
      x_test.push_back(features[perm[i]]);
      truth_test.push_back(truth[perm[i]]);
      groups_test.push_back(groups[perm[i]]);
    }

    const auto model_truth = train_logistic(x_train, y_truth, cfg.train);
    const auto model_td = train_logistic(x_train, y_td, cfg.train);
    const auto rep_truth = evaluate_model(model_truth, x_test, truth_test, groups_test);
    const auto rep_td = evaluate_model(model_td, x_test, truth_test, groups_test);

    auto& out = outcomes[static_cast<std::size_t>(rep)];
    out.d_acc = (rep_truth.accuracy.value() - rep_td.accuracy.value()) * 100.0;
    if (rep_truth.dp_diff && rep_td.dp_diff) out.d_dp = *rep_truth.dp_diff - *rep_td.dp_diff;
    if (rep_truth.eo_diff && rep_td.eo_diff) out.d_eo = *rep_truth.eo_diff - *rep_td.eo_diff;
  });

  DeltaReport report;
  report.repeats = cfg.repeats;
  report.split_fraction = cfg.split_fraction;
  double acc = 0.0, dp = 0.0, eo = 0.0;
  int dp_n = 0, eo_n = 0;
  for (const auto& o : outcomes) {
    acc += o.d_acc;
    if (o.d_dp) {
      dp += *o.d_dp;
      ++dp_n;
    }
    if (o.d_eo) {
      eo += *o.d_eo;
      ++eo_n;
    }
  }
  report.delta_accuracy = acc / static_cast<double>(cfg.repeats);
  if (dp_n == 0 || eo_n == 0)
    throw ComputeError("delta_experiment: fairness deltas undefined in every repeat");
  report.delta_dp_diff = dp / static_cast<double>(dp_n);
  report.delta_eo_diff = eo / static_cast<double>(eo_n);
  return report;
}

// ---------------------------------------------------------------------------
// Fair-ML baselines
// ---------------------------------------------------------------------------

struct ExpGradConfig {
  double bound = 100.0;        // total Lagrange-multiplier mass B
  double learning_rate = 2.0;  // multiplicative-weights step
  int max_rounds = 50;
  double violation_tol = 0.02;  // accepted overshoot of the mixture
  TrainConfig train;

  void validate() const {
    train.validate();
    if (!(bound > 0)) throw ValidationError("bound must be > 0");
    if (!(learning_rate > 0)) throw ValidationError("learning_rate must be > 0");
    if (max_rounds < 1) throw ValidationError("max_rounds must be >= 1");
    if (violation_tol < 0) throw ValidationError("violation_tol must be >= 0");
  }
};

namespace detail_ds {

inline LogisticModel train_weighted(std::span<const std::vector<double>> x,
                                    const std::vector<double>& targets,
                                    const std::vector<double>& weights,
                                    const TrainConfig& cfg) {
  std::vector<double> params(x.front().size() + 1, 0.0);
  detail_opt::WeightedLogistic obj{x, targets, weights, cfg.l2};
  detail_opt::minimize_gd(obj, params, {cfg.max_steps, cfg.grad_tol, cfg.lr});
  return detail_opt::model_from_params(params);
}

}  // namespace detail_ds

// Reduction of demographic-parity-constrained classification to a sequence of
// cost-sensitive fits: multiplicative-weights ascent on the constraint
// multipliers, best response by weighted logistic training, uniform mixture
// returned. If the mixture misses the budget by more than violation_tol the
// best single iterate is returned and flagged in the diagnostic.
inline RandomizedClassifier exponentiated_gradient(std::span<const std::vector<double>> features,
                                                   std::span<const std::uint8_t> labels,
                                                   std::span<const std::string> groups,
                                                   const FairnessConstraint& constraint,
                                                   const ExpGradConfig& cfg = {}) {
  cfg.validate();
  constraint.validate();
  if (constraint.kind != FairnessKind::DemographicParity)
    throw ValidationError("exponentiated_gradient supports the demographic-parity constraint only");
  const std::size_t n = features.size();
  if (labels.size() != n || groups.size() != n)
    throw ValidationError("exponentiated_gradient: inputs must align per row");

  if (constraint.inactive()) {
    RandomizedClassifier rc;
    rc.models.push_back(train_logistic(features, labels, cfg.train));
    rc.weights.push_back(1.0);
    return rc;
  }

  const auto gi = detail_fair::index_groups(groups);
  const auto k = static_cast<std::size_t>(gi.n_groups());
  if (k < 2) throw ValidationError("exponentiated_gradient: need at least two groups");
  std::vector<double> group_size(k, 0.0);
  for (const auto g : gi.of_task) group_size[static_cast<std::size_t>(g)] += 1.0;

  // One +/- pair of multipliers per group for |mean(h|g) - mean(h)| <= eps.
  std::vector<double> theta(2 * k, 0.0);
  std::vector<LogisticModel> iterates;
  std::vector<std::vector<double>> iterate_rates;  // per-iterate group rates
  std::vector<double> iterate_mean, iterate_error;

  std::vector<double> targets(n), weights(n), costs(n);
  for (int round = 0; round < cfg.max_rounds; ++round) {
    // lambda from theta, kept on the simplex of mass <= bound
    double z = 1.0;
    for (const double t : theta) z += std::exp(t);
    std::vector<double> lambda(2 * k);
    for (std::size_t j = 0; j < 2 * k; ++j) lambda[j] = cfg.bound * std::exp(theta[j]) / z;

    double lambda_net_total = 0.0;  // sum over groups of (lambda+ - lambda-)
    for (std::size_t g = 0; g < k; ++g) lambda_net_total += lambda[2 * g] - lambda[2 * g + 1];
    for (std::size_t i = 0; i < n; ++i) {
      const auto g = static_cast<std::size_t>(gi.of_task[i]);
      const double lambda_net = lambda[2 * g] - lambda[2 * g + 1];
      costs[i] = (1.0 - 2.0 * static_cast<double>(labels[i])) / static_cast<double>(n) +
                 lambda_net / group_size[g] - lambda_net_total / static_cast<double>(n);
      targets[i] = costs[i] < 0.0 ? 1.0 : 0.0;
      weights[i] = std::abs(costs[i]);
    }
    const auto h = detail_ds::train_weighted(features, targets, weights, cfg.train);

    std::vector<double> rates(k, 0.0);
    double mean = 0.0, err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = h.predict(features[i]);
      rates[static_cast<std::size_t>(gi.of_task[i])] += p;
      mean += p;
      err += std::abs(p - static_cast<double>(labels[i]));
    }
    for (std::size_t g = 0; g < k; ++g) rates[g] /= group_size[g];
    mean /= static_cast<double>(n);
    err /= static_cast<double>(n);

    for (std::size_t g = 0; g < k; ++g) {
      theta[2 * g] += cfg.learning_rate * (rates[g] - mean - constraint.epsilon);
      theta[2 * g + 1] += cfg.learning_rate * (mean - rates[g] - constraint.epsilon);
    }
    iterates.push_back(h);
    iterate_rates.push_back(std::move(rates));
    iterate_mean.push_back(mean);
    iterate_error.push_back(err);
  }

  auto spread_of = [&](const std::vector<double>& rates) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t g = 0; g < k; ++g) {
      if (group_size[g] == 0.0) continue;
      lo = std::min(lo, rates[g]);
      hi = std::max(hi, rates[g]);
    }
    return hi - lo;
  };

  // Uniform mixture; its group rates are the averages of the member rates.
  RandomizedClassifier mixture;
  mixture.models = iterates;
  mixture.weights.assign(iterates.size(), 1.0 / static_cast<double>(iterates.size()));
  std::vector<double> mix_rates(k, 0.0);
  for (const auto& r : iterate_rates)
    for (std::size_t g = 0; g < k; ++g) mix_rates[g] += r[g] / static_cast<double>(iterates.size());
  if (spread_of(mix_rates) <= constraint.epsilon + cfg.violation_tol) return mixture;

  // The averaged play missed the budget: fall back to the best single
  // iterate (feasible with lowest error, else lowest violation).
  std::size_t best = 0;
  bool best_feasible = false;
  double best_err = 1e300, best_viol = 1e300;
  for (std::size_t t = 0; t < iterates.size(); ++t) {
    const double viol = spread_of(iterate_rates[t]);
    const bool feasible = viol <= constraint.epsilon + cfg.violation_tol;
    const bool better = feasible
                            ? (!best_feasible || iterate_error[t] < best_err)
                            : (!best_feasible && viol < best_viol);
    if (better) {
      best = t;
      best_feasible = feasible;
      best_err = iterate_error[t];
      best_viol = viol;
    }
  }
  RandomizedClassifier rc;
  rc.models.push_back(iterates[best]);
  rc.weights.push_back(1.0);
  rc.diagnostic = "mixture violation above budget after " + std::to_string(cfg.max_rounds) +
                  " rounds; best iterate returned";
  return rc;
}

// Logistic regression with a prejudice regularizer: eta times the empirical
// mutual information between the (soft) decision event and the group event,
// descended jointly with the log-loss.
inline LogisticModel prejudice_remover(std::span<const std::vector<double>> features,
                                       std::span<const std::uint8_t> labels,
                                       std::span<const std::string> groups, double eta,
                                       const TrainConfig& cfg = {}) {
  cfg.validate();
  if (eta < 0) throw ValidationError("eta must be >= 0");
  if (eta == 0.0) return train_logistic(features, labels, cfg);
  const std::size_t n = features.size();
  if (labels.size() != n || groups.size() != n)
    throw ValidationError("prejudice_remover: inputs must align per row");
  bool has0 = false, has1 = false;
  for (const auto l : labels) (l ? has1 : has0) = true;
  if (!has0 || !has1)
    throw ComputeError("prejudice_remover: training labels are single-class; decision boundary undefined");

  const auto gi = detail_fair::index_groups(groups);
  const auto kg = static_cast<std::size_t>(gi.n_groups());
  const std::size_t d = features.front().size();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = labels[i];

  std::vector<double> s(n);  // soft predictions, reused across evaluations
  auto objective = [&](const std::vector<double>& params, std::vector<double>& grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = params[d];
      for (std::size_t j = 0; j < d; ++j) z += params[j] * features[i][j];
      obj += log1pexp(z) - y[i] * z;
      s[i] = sigmoid(z);
      const double r = s[i] - y[i];
      for (std::size_t j = 0; j < d; ++j) grad[j] += r * features[i][j];
      grad[d] += r;
    }
    obj /= static_cast<double>(n);
    for (auto& g : grad) g /= static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) {
      obj += 0.5 * cfg.l2 * params[j] * params[j];
      grad[j] += cfg.l2 * params[j];
    }

    // Prejudice index over the joint (decision, group) distribution implied
    // by the soft predictions.
    std::vector<double> p1g(kg, 0.0), pg(kg, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      p1g[static_cast<std::size_t>(gi.of_task[i])] += s[i];
      pg[static_cast<std::size_t>(gi.of_task[i])] += 1.0;
    }
    double p1 = 0.0;
    for (std::size_t g = 0; g < kg; ++g) {
      p1g[g] /= static_cast<double>(n);
      pg[g] /= static_cast<double>(n);
      p1 += p1g[g];
    }
    const double p0 = 1.0 - p1;
    const auto slog = [](double v) { return std::log(std::max(v, 1e-12)); };
    double pi = 0.0;
    for (std::size_t g = 0; g < kg; ++g) {
      const double p0g = pg[g] - p1g[g];
      if (p1g[g] > 0.0) pi += p1g[g] * (slog(p1g[g]) - slog(p1) - slog(pg[g]));
      if (p0g > 0.0) pi += p0g * (slog(p0g) - slog(p0) - slog(pg[g]));
    }
    obj += eta * pi;
    // dPI/ds_i = (1/n) [log(p1g/p0g) - log(p1/p0)] for i in group g.
    std::vector<double> dpi_ds(kg);
    for (std::size_t g = 0; g < kg; ++g) {
      const double p0g = pg[g] - p1g[g];
      dpi_ds[g] = (slog(p1g[g]) - slog(p0g)) - (slog(p1) - slog(p0));
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double chain = eta * dpi_ds[static_cast<std::size_t>(gi.of_task[i])] *
                           s[i] * (1.0 - s[i]) / static_cast<double>(n);
      for (std::size_t j = 0; j < d; ++j) grad[j] += chain * features[i][j];
      grad[d] += chain;
    }
    return obj;
  };

  std::vector<double> params(d + 1, 0.0);
  detail_opt::minimize_gd(objective, params, {cfg.max_steps, cfg.grad_tol, cfg.lr});
  return detail_opt::model_from_params(params);
}

}  // namespace crowdfair
