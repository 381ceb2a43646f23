#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crowdfair/detail/parallel.hpp"
#include "crowdfair/error.hpp"
#include "crowdfair/linear_model.hpp"
#include "crowdfair/model.hpp"

namespace crowdfair {

struct EMConfig {
  // max_iter = 0 is permitted and returns the voting-anchored initialization
  // untouched (used to pin the initialization contract in tests); the CLI
  // insists on >= 1.
  int max_iter = 100;
  double tol = 1e-6;        // stop when max per-task posterior change < tol
  double smoothing = 0.01;  // Laplace pseudo-count per estimated-probability cell
  std::uint64_t seed = 0;   // EM here is deterministic; kept for interface parity
  int threads = 1;

  void validate() const {
    if (max_iter < 0) throw ValidationError("max_iter must be >= 0");
    if (!(tol > 0)) throw ValidationError("tol must be > 0");
    if (smoothing < 0) throw ValidationError("smoothing must be >= 0");
    if (threads < 1) throw ValidationError("threads must be >= 1");
  }
};

// Per-worker conditional response distribution: p[a][b] = P(report b | truth a).
struct ConfusionMatrix {
  std::array<std::array<double, 2>, 2> p{{{0.5, 0.5}, {0.5, 0.5}}};
};

// The two coins of the annotator model: sensitivity = P(report 1 | y = 1),
// specificity = P(report 0 | y = 0).
struct TwoCoinParams {
  double sensitivity = 0.5;
  double specificity = 0.5;
};

struct DawidSkeneResult {
  TDResult result;
  std::vector<ConfusionMatrix> confusion;  // one per worker
  std::array<double, 2> prior{0.5, 0.5};   // P(y = 0), P(y = 1)
  std::vector<double> loglik_trace;        // observed-data log-likelihood per iteration
};

struct LfcResult {
  TDResult result;
  std::vector<TwoCoinParams> coins;  // one per worker
  double prevalence = 0.5;           // P(y = 1); mean prior when features are used
  std::optional<LogisticModel> classifier;  // feature mode only
  std::vector<double> loglik_trace;
};

namespace detail_td {

inline std::vector<double> mv_soft_posteriors(const AnnotationMatrix& m) {
  std::vector<double> q(static_cast<std::size_t>(m.n_tasks()));
  for (TaskId t = 0; t < m.n_tasks(); ++t) {
    const auto rows = m.task_rows(t);
    std::int64_t pos = 0;
    for (const auto& e : rows) pos += e.label;
    q[static_cast<std::size_t>(t)] =
        static_cast<double>(pos) / static_cast<double>(rows.size());
  }
  return q;
}

inline double safe_log(double x) {
  return x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity();
}

// Optional posterior transform applied after each E-step (the in-processing
// fairness projection plugs in here). Receives the iteration index.
using PosteriorHook = std::function<void(std::vector<double>&, int)>;

struct DsEngine {
  const AnnotationMatrix& m;
  EMConfig cfg;
  std::array<double, 2> prior{0.5, 0.5};
  std::vector<ConfusionMatrix> pi;

  explicit DsEngine(const AnnotationMatrix& matrix, const EMConfig& config)
      : m(matrix), cfg(config), pi(static_cast<std::size_t>(matrix.n_workers())) {}

  void m_step(const std::vector<double>& q) {
    const double s = cfg.smoothing;
    const auto n = static_cast<double>(m.n_tasks());
    double pos = 0.0;
    for (double v : q) pos += v;
    prior[1] = (s + pos) / (2.0 * s + n);
    prior[0] = (s + (n - pos)) / (2.0 * s + n);
    detail::parallel_chunks(m.n_workers(), cfg.threads, [&](std::int64_t, std::int64_t b, std::int64_t e) {
      for (std::int64_t w = b; w < e; ++w) {
        std::array<std::array<double, 2>, 2> cnt{{{s, s}, {s, s}}};
        for (const auto ei : m.worker_entries(static_cast<WorkerId>(w))) {
          const auto& entry = m.entries()[static_cast<std::size_t>(ei)];
          const double q1 = q[static_cast<std::size_t>(entry.task)];
          cnt[1][entry.label] += q1;
          cnt[0][entry.label] += 1.0 - q1;
        }
        auto& p = pi[static_cast<std::size_t>(w)].p;
        for (int a = 0; a < 2; ++a) {
          const double row = cnt[a][0] + cnt[a][1];
          // Zero row mass (only possible with smoothing = 0) carries no
          // likelihood weight; any value is an M-step argmax, so the previous
          // row is kept.
          if (row > 0.0) {
            p[a][0] = cnt[a][0] / row;
            p[a][1] = cnt[a][1] / row;
          }
        }
      }
    });
  }

  // Computes posteriors for the current parameters; returns the observed-data
  // log-likelihood. When q_out is null only the likelihood is evaluated.
  double e_step(std::vector<double>* q_out, std::vector<double>& ll_buf) const {
    const auto n = m.n_tasks();
    ll_buf.resize(static_cast<std::size_t>(n));
    std::vector<std::array<std::array<double, 2>, 2>> log_pi(pi.size());
    for (std::size_t w = 0; w < pi.size(); ++w)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) log_pi[w][a][b] = safe_log(pi[w].p[a][b]);
    const double lp0 = safe_log(prior[0]);
    const double lp1 = safe_log(prior[1]);
    detail::parallel_chunks(n, cfg.threads, [&](std::int64_t, std::int64_t b, std::int64_t e) {
      for (std::int64_t t = b; t < e; ++t) {
        double l0 = lp0, l1 = lp1;
        for (const auto& entry : m.task_rows(static_cast<TaskId>(t))) {
          const auto& lw = log_pi[static_cast<std::size_t>(entry.worker)];
          l0 += lw[0][entry.label];
          l1 += lw[1][entry.label];
        }
        const double mx = std::max(l0, l1);
        double p1 = 0.5, ll;
        if (std::isfinite(mx)) {
          const double s0 = std::exp(l0 - mx), s1 = std::exp(l1 - mx);
          p1 = s1 / (s0 + s1);
          ll = mx + std::log(s0 + s1);
        } else {
          ll = -std::numeric_limits<double>::infinity();  // unreachable from a valid M-step
        }
        if (q_out) (*q_out)[static_cast<std::size_t>(t)] = p1;
        ll_buf[static_cast<std::size_t>(t)] = ll;
      }
    });
    double total = 0.0;
    for (double v : ll_buf) total += v;
    return total;
  }
};

inline DawidSkeneResult ds_em(const AnnotationMatrix& m, const EMConfig& cfg,
                              const PosteriorHook* hook, const std::string& name) {
  cfg.validate();
  if (m.n_workers() < 1) throw ValidationError(name + ": need at least one worker");

  DsEngine engine(m, cfg);
  std::vector<double> q = mv_soft_posteriors(m);
  std::vector<double> q_new(q.size());
  std::vector<double> ll_buf;

  DawidSkeneResult out;
  out.result.algorithm = name;
  out.result.converged = true;

  int it = 0;
  double ll = -std::numeric_limits<double>::infinity();
  for (; it < cfg.max_iter; ++it) {
    engine.m_step(q);
    ll = engine.e_step(&q_new, ll_buf);
    out.loglik_trace.push_back(ll);
    if (hook) (*hook)(q_new, it);
    double delta = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i)
      delta = std::max(delta, std::abs(q_new[i] - q[i]));
    q.swap(q_new);
    if (delta < cfg.tol) {
      ++it;
      break;
    }
    if (it + 1 == cfg.max_iter) {
      ++it;
      out.result.converged = false;
      out.result.diagnostic = "max_iter reached before posterior change < tol";
      break;
    }
  }
  if (cfg.max_iter == 0) {
    engine.m_step(q);
    ll = engine.e_step(nullptr, ll_buf);
  }

  out.result.posterior = std::move(q);
  out.result.finalize_labels();
  out.result.iterations = it;
  out.result.final_loglik = ll;
  out.confusion = std::move(engine.pi);
  out.prior = engine.prior;
  return out;
}

}  // namespace detail_td

// Majority voting: the consensus is the label most workers chose; the
// posterior is the positive-vote fraction.
inline TDResult majority_vote(const AnnotationMatrix& m) {
  TDResult r;
  r.algorithm = "mv";
  r.posterior = detail_td::mv_soft_posteriors(m);
  r.finalize_labels();
  r.iterations = 0;
  r.final_loglik = 0.0;
  r.converged = true;
  return r;
}

// Dawid-Skene: per-worker confusion matrices and a class prior estimated by
// EM, initialized from majority-voting soft posteriors.
inline DawidSkeneResult dawid_skene(const AnnotationMatrix& m, const EMConfig& cfg = {}) {
  return detail_td::ds_em(m, cfg, nullptr, "ds");
}

namespace detail_td {

struct LfcEngine {
  const AnnotationMatrix& m;
  EMConfig cfg;
  std::span<const std::vector<double>> features;  // empty in feature-free mode
  std::vector<TwoCoinParams> coins;
  double prevalence = 0.5;
  std::vector<double> model_params;  // [w..., bias], feature mode
  std::vector<double> task_prior1;   // per-task P(y=1) under the current prior model
  bool degenerate_fit = false;

  LfcEngine(const AnnotationMatrix& matrix, std::span<const std::vector<double>> feats,
            const EMConfig& config)
      : m(matrix), cfg(config), features(feats),
        coins(static_cast<std::size_t>(matrix.n_workers())),
        task_prior1(static_cast<std::size_t>(matrix.n_tasks()), 0.5) {
    if (!features.empty()) model_params.assign(features.front().size() + 1, 0.0);
  }

  bool feature_mode() const { return !features.empty(); }

  void m_step(const std::vector<double>& q) {
    const double s = cfg.smoothing;
    detail::parallel_chunks(m.n_workers(), cfg.threads, [&](std::int64_t, std::int64_t b, std::int64_t e) {
      for (std::int64_t w = b; w < e; ++w) {
        double pos_mass = s * 2.0, pos_hits = s;   // truth-1 mass and reported-1 hits
        double neg_mass = s * 2.0, neg_hits = s;   // truth-0 mass and reported-0 hits
        for (const auto ei : m.worker_entries(static_cast<WorkerId>(w))) {
          const auto& entry = m.entries()[static_cast<std::size_t>(ei)];
          const double q1 = q[static_cast<std::size_t>(entry.task)];
          pos_mass += q1;
          neg_mass += 1.0 - q1;
          if (entry.label == 1) pos_hits += q1;
          else neg_hits += 1.0 - q1;
        }
        auto& c = coins[static_cast<std::size_t>(w)];
        if (pos_mass > 0.0) c.sensitivity = pos_hits / pos_mass;
        if (neg_mass > 0.0) c.specificity = neg_hits / neg_mass;
      }
    });
    if (feature_mode()) {
      // Raykar-style prior refit: weighted logistic ascent on the posterior
      // targets, warm-started from the previous parameters so the EM
      // objective cannot decrease.
      detail_opt::WeightedLogistic obj{features, q, {}, 0.0};
      const auto rep = detail_opt::minimize_gd(obj, model_params, {200, 1e-6, 0.1});
      if (rep.degenerate) {
        degenerate_fit = true;
        return;
      }
      double mean = 0.0;
      for (std::size_t i = 0; i < task_prior1.size(); ++i) {
        double z = model_params.back();
        for (std::size_t j = 0; j + 1 < model_params.size(); ++j)
          z += model_params[j] * features[i][j];
        task_prior1[i] = sigmoid(z);
        mean += task_prior1[i];
      }
      prevalence = mean / static_cast<double>(task_prior1.size());
    } else {
      const double s2 = cfg.smoothing;
      const auto n = static_cast<double>(m.n_tasks());
      double pos = 0.0;
      for (double v : q) pos += v;
      prevalence = (s2 + pos) / (2.0 * s2 + n);
      std::fill(task_prior1.begin(), task_prior1.end(), prevalence);
    }
  }

  double e_step(std::vector<double>* q_out, std::vector<double>& ll_buf) const {
    const auto n = m.n_tasks();
    ll_buf.resize(static_cast<std::size_t>(n));
    std::vector<std::array<double, 4>> lcoin(coins.size());
    for (std::size_t w = 0; w < coins.size(); ++w) {
      lcoin[w] = {safe_log(coins[w].sensitivity), safe_log(1.0 - coins[w].sensitivity),
                  safe_log(coins[w].specificity), safe_log(1.0 - coins[w].specificity)};
    }
    detail::parallel_chunks(n, cfg.threads, [&](std::int64_t, std::int64_t b, std::int64_t e) {
      for (std::int64_t t = b; t < e; ++t) {
        const double p1 = task_prior1[static_cast<std::size_t>(t)];
        double l1 = safe_log(p1), l0 = safe_log(1.0 - p1);
        for (const auto& entry : m.task_rows(static_cast<TaskId>(t))) {
          const auto& lw = lcoin[static_cast<std::size_t>(entry.worker)];
          if (entry.label == 1) {
            l1 += lw[0];  // log(alpha)
            l0 += lw[3];  // log(1 - beta)
          } else {
            l1 += lw[1];  // log(1 - alpha)
            l0 += lw[2];  // log(beta)
          }
        }
        const double mx = std::max(l0, l1);
        double q1 = 0.5, ll;
        if (std::isfinite(mx)) {
          const double s0 = std::exp(l0 - mx), s1 = std::exp(l1 - mx);
          q1 = s1 / (s0 + s1);
          ll = mx + std::log(s0 + s1);
        } else {
          ll = -std::numeric_limits<double>::infinity();
        }
        if (q_out) (*q_out)[static_cast<std::size_t>(t)] = q1;
        ll_buf[static_cast<std::size_t>(t)] = ll;
      }
    });
    double total = 0.0;
    for (double v : ll_buf) total += v;
    return total;
  }
};

}  // namespace detail_td

// Learning from Crowds: per-worker sensitivity/specificity coins estimated by
// EM. With task features the class prior becomes a logistic model refit each
// M-step; without them it is a scalar prevalence.
inline LfcResult learning_from_crowds(const AnnotationMatrix& m,
                                      std::span<const std::vector<double>> features,
                                      const EMConfig& cfg = {}) {
  cfg.validate();
  if (m.n_workers() < 1) throw ValidationError("lfc: need at least one worker");
  if (!features.empty()) {
    if (static_cast<std::int32_t>(features.size()) != m.n_tasks())
      throw ValidationError("lfc: every task needs a feature vector");
    const auto d = features.front().size();
    for (const auto& f : features)
      if (f.size() != d) throw ValidationError("lfc: inconsistent feature dimensionality");
  }

  detail_td::LfcEngine engine(m, features, cfg);
  std::vector<double> q = detail_td::mv_soft_posteriors(m);
  std::vector<double> q_new(q.size());
  std::vector<double> ll_buf;

  LfcResult out;
  out.result.algorithm = "lfc";
  out.result.converged = true;

  int it = 0;
  double ll = -std::numeric_limits<double>::infinity();
  for (; it < cfg.max_iter; ++it) {
    engine.m_step(q);
    if (engine.degenerate_fit) {
      out.result.converged = false;
      out.result.diagnostic = "degenerate feature fit in the prior model";
      break;
    }
    ll = engine.e_step(&q_new, ll_buf);
    out.loglik_trace.push_back(ll);
    double delta = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i)
      delta = std::max(delta, std::abs(q_new[i] - q[i]));
    q.swap(q_new);
    if (delta < cfg.tol) {
      ++it;
      break;
    }
    if (it + 1 == cfg.max_iter) {
      ++it;
      out.result.converged = false;
      out.result.diagnostic = "max_iter reached before posterior change < tol";
      break;
    }
  }
  if (cfg.max_iter == 0) {
    engine.m_step(q);
    ll = engine.e_step(nullptr, ll_buf);
  }

  out.result.posterior = std::move(q);
  out.result.finalize_labels();
  out.result.iterations = it;
  out.result.final_loglik = ll;
  out.coins = std::move(engine.coins);
  out.prevalence = engine.prevalence;
  if (engine.feature_mode() && !engine.degenerate_fit)
    out.classifier = detail_opt::model_from_params(engine.model_params);
  return out;
}

inline LfcResult learning_from_crowds(const AnnotationMatrix& m, const EMConfig& cfg = {}) {
  return learning_from_crowds(m, {}, cfg);
}

}  // namespace crowdfair
