#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crowdfair/error.hpp"

namespace crowdfair {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double log1pexp(double z) {
  if (z > 35.0) return z + std::exp(-z);
  if (z < -35.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

struct LogisticModel {
  std::vector<double> weights;
  double bias = 0.0;

  double decision(std::span<const double> x) const {
    double z = bias;
    for (std::size_t j = 0; j < weights.size(); ++j) z += weights[j] * x[j];
    return z;
  }
  double predict_proba(std::span<const double> x) const { return sigmoid(decision(x)); }
  std::uint8_t predict(std::span<const double> x) const {
    return predict_proba(x) >= 0.5 ? 1 : 0;
  }
};

namespace detail_opt {

struct GdOptions {
  int max_steps = 2000;
  double grad_tol = 1e-6;
  double lr = 0.5;
};

struct GdReport {
  double objective = 0.0;
  double grad_norm = 0.0;
  int steps = 0;
  bool converged = false;   // hit grad_tol
  bool degenerate = false;  // non-finite objective or gradient encountered
};

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Batch gradient descent with step halving on non-improvement. Only steps
// that do not increase the objective are accepted, so the objective sequence
// is non-increasing — callers that run this inside an EM M-step keep the
// generalized-EM guarantee.
template <typename ObjFn>
GdReport minimize_gd(ObjFn&& f, std::vector<double>& params, const GdOptions& opt) {
  GdReport rep;
  std::vector<double> grad(params.size(), 0.0);
  std::vector<double> cand(params.size(), 0.0);
  std::vector<double> cand_grad(params.size(), 0.0);
  double obj = f(params, grad);
  if (!std::isfinite(obj)) {
    rep.degenerate = true;
    return rep;
  }
  for (int step = 0; step < opt.max_steps; ++step) {
    rep.steps = step;
    rep.grad_norm = norm2(grad);
    if (!std::isfinite(rep.grad_norm)) {
      rep.degenerate = true;
      break;
    }
    if (rep.grad_norm < opt.grad_tol) {
      rep.converged = true;
      break;
    }
    double lr = opt.lr;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving) {
      for (std::size_t j = 0; j < params.size(); ++j) cand[j] = params[j] - lr * grad[j];
      const double cand_obj = f(cand, cand_grad);
      if (std::isfinite(cand_obj) && cand_obj <= obj) {
        params = cand;
        obj = cand_obj;
        grad = cand_grad;
        accepted = true;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) break;  // no improving step at any tried scale
  }
  rep.objective = obj;
  return rep;
}

// Weighted logistic objective: sum_i w_i * (log(1+e^{z_i}) - y_i z_i) / sum_i w_i
// plus (l2/2)*||weights||^2 (bias unpenalized). y may be fractional
// (posterior targets in EM) and w_i >= 0.
struct WeightedLogistic {
  std::span<const std::vector<double>> x;
  std::span<const double> y;
  std::span<const double> w;  // empty = all ones
  double l2 = 0.0;

  double operator()(const std::vector<double>& params, std::vector<double>& grad) const {
    const std::size_t n = x.size();
    const std::size_t d = params.size() - 1;  // last entry is the bias
    double wsum = 0.0;
    std::fill(grad.begin(), grad.end(), 0.0);
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double wi = w.empty() ? 1.0 : w[i];
      if (wi == 0.0) continue;
      wsum += wi;
      double z = params[d];
      for (std::size_t j = 0; j < d; ++j) z += params[j] * x[i][j];
      obj += wi * (log1pexp(z) - y[i] * z);
      const double r = wi * (sigmoid(z) - y[i]);
      for (std::size_t j = 0; j < d; ++j) grad[j] += r * x[i][j];
      grad[d] += r;
    }
    if (wsum > 0.0) {
      obj /= wsum;
      for (auto& g : grad) g /= wsum;
    }
    for (std::size_t j = 0; j < d; ++j) {
      obj += 0.5 * l2 * params[j] * params[j];
      grad[j] += l2 * params[j];
    }
    return obj;
  }
};

inline LogisticModel model_from_params(const std::vector<double>& params) {
  LogisticModel m;
  m.weights.assign(params.begin(), params.end() - 1);
  m.bias = params.back();
  return m;
}

}  // namespace detail_opt

struct TrainConfig {
  double l2 = 1e-4;
  int max_steps = 2000;
  double grad_tol = 1e-6;
  double lr = 0.5;
  std::uint64_t seed = 0;  // training is deterministic; kept for interface parity

  void validate() const {
    if (l2 < 0) throw ValidationError("l2 must be >= 0");
    if (max_steps < 1) throw ValidationError("max_steps must be >= 1");
    if (grad_tol <= 0) throw ValidationError("grad_tol must be > 0");
    if (lr <= 0) throw ValidationError("lr must be > 0");
  }
};

// Plain L2-regularized logistic regression, initialized at zero.
inline LogisticModel train_logistic(std::span<const std::vector<double>> features,
                                    std::span<const std::uint8_t> labels,
                                    const TrainConfig& cfg = {}) {
  cfg.validate();
  if (features.empty()) throw ValidationError("train_logistic: empty training set");
  if (features.size() != labels.size())
    throw ValidationError("train_logistic: feature/label length mismatch");
  bool has0 = false, has1 = false;
  for (const auto l : labels) (l ? has1 : has0) = true;
  if (!has0 || !has1)
    throw ComputeError("train_logistic: training labels are single-class; decision boundary undefined");

  const std::size_t d = features.front().size();
  std::vector<double> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i];
  std::vector<double> params(d + 1, 0.0);
  detail_opt::WeightedLogistic obj{features, y, {}, cfg.l2};
  detail_opt::minimize_gd(obj, params, {cfg.max_steps, cfg.grad_tol, cfg.lr});
  return detail_opt::model_from_params(params);
}

}  // namespace crowdfair
