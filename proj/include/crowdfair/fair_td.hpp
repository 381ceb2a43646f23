#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crowdfair/error.hpp"
#include "crowdfair/metrics.hpp"
#include "crowdfair/model.hpp"
#include "crowdfair/truth_discovery.hpp"

namespace crowdfair {

enum class FairnessKind { DemographicParity, EqualizedOdds };

inline std::string to_string(FairnessKind k) {
  return k == FairnessKind::DemographicParity ? "dp" : "eo";
}

// Budget on the corresponding *_diff metric of the output labels. At
// epsilon >= 1 every variant reduces bit-exactly to its unconstrained
// counterpart.
struct FairnessConstraint {
  FairnessKind kind = FairnessKind::DemographicParity;
  double epsilon = 0.0;

  void validate() const {
    if (!(epsilon >= 0)) throw ValidationError("epsilon must be >= 0");
  }
  bool inactive() const { return epsilon >= 1.0; }
};

namespace detail_fair {

struct GroupIndex {
  std::vector<std::int32_t> of_task;  // task -> dense group id
  std::vector<std::string> names;     // dense group id -> name (sorted)
  std::int32_t n_groups() const { return static_cast<std::int32_t>(names.size()); }
};

inline GroupIndex index_groups(std::span<const std::string> groups) {
  GroupIndex gi;
  gi.names.assign(groups.begin(), groups.end());
  std::sort(gi.names.begin(), gi.names.end());
  gi.names.erase(std::unique(gi.names.begin(), gi.names.end()), gi.names.end());
  gi.of_task.resize(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    gi.of_task[i] = static_cast<std::int32_t>(
        std::lower_bound(gi.names.begin(), gi.names.end(), groups[i]) - gi.names.begin());
  }
  return gi;
}

// Max pairwise positive-rate gap of a hard labeling; empty when fewer than
// two groups are present.
inline std::optional<double> label_spread(std::span<const std::uint8_t> labels,
                                          const GroupIndex& gi) {
  std::vector<std::int64_t> size(static_cast<std::size_t>(gi.n_groups()), 0);
  std::vector<std::int64_t> pos(static_cast<std::size_t>(gi.n_groups()), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++size[static_cast<std::size_t>(gi.of_task[i])];
    pos[static_cast<std::size_t>(gi.of_task[i])] += labels[i];
  }
  double lo = 1e300, hi = -1e300;
  int present = 0;
  for (std::size_t g = 0; g < size.size(); ++g) {
    if (size[g] == 0) continue;
    ++present;
    const double r = static_cast<double>(pos[g]) / static_cast<double>(size[g]);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  if (present < 2) return std::nullopt;
  return hi - lo;
}

// ---- post-processing threshold search -------------------------------------

struct GroupTasks {
  std::vector<std::size_t> idx;       // row indices, sorted by posterior desc
  std::vector<double> sorted_p;       // posteriors, descending
  std::vector<std::int64_t> pos_prefix;  // input-positive count among top j
};

struct Candidate {
  double threshold;
  std::int64_t positives;  // labels set positive when this threshold applies
  std::int64_t flips;      // vs the input hard labels
};

inline std::vector<Candidate> build_candidates(const GroupTasks& g) {
  const auto n = static_cast<std::int64_t>(g.sorted_p.size());
  const std::int64_t total_pos = g.pos_prefix[static_cast<std::size_t>(n)];
  std::vector<Candidate> cands;
  auto add = [&](double t, std::int64_t j) {
    const std::int64_t pos_kept = g.pos_prefix[static_cast<std::size_t>(j)];
    cands.push_back({t, j, (j - pos_kept) + (total_pos - pos_kept)});
  };
  add(2.0, 0);  // sentinel above every posterior: all negative
  std::int64_t j = 0;
  while (j < n) {
    const double v = g.sorted_p[static_cast<std::size_t>(j)];
    std::int64_t k = j;
    while (k < n && g.sorted_p[static_cast<std::size_t>(k)] == v) ++k;
    add(v, k);  // threshold at v labels the top k rows positive
    j = k;
  }
  return cands;
}

struct SearchResult {
  std::vector<double> threshold;  // per group
  std::int64_t flips = 0;
  double achieved = 0.0;  // positive-rate spread of the selected labeling
};

// Exhaustive search over the per-group candidate grids for the labeling that
// minimizes flips subject to rate spread <= epsilon, tie-broken by smaller
// achieved spread. Feasibility is guaranteed: the all-negative and
// all-positive corners have spread zero. O(n^2) for two groups; exponential
// in the number of groups, which is fine at the scale this targets.
inline SearchResult threshold_search(const std::vector<GroupTasks>& groups, double epsilon) {
  const std::size_t k = groups.size();
  std::vector<std::vector<Candidate>> cands(k);
  for (std::size_t g = 0; g < k; ++g) cands[g] = build_candidates(groups[g]);

  SearchResult best;
  best.flips = std::numeric_limits<std::int64_t>::max();
  best.achieved = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> pick(k, 0);

  auto recurse = [&](auto&& self, std::size_t g, std::int64_t flips, double lo, double hi) -> void {
    if (flips > best.flips) return;
    if (g == k) {
      const double spread = (hi > lo) ? hi - lo : 0.0;
      if (spread > epsilon + 1e-12) return;
      if (flips < best.flips || (flips == best.flips && spread < best.achieved)) {
        best.flips = flips;
        best.achieved = spread;
        best.threshold.resize(k);
        for (std::size_t i = 0; i < k; ++i)
          best.threshold[i] = cands[i][pick[i]].threshold;
      }
      return;
    }
    const auto size_g = static_cast<double>(groups[g].sorted_p.size());
    for (std::size_t c = 0; c < cands[g].size(); ++c) {
      pick[g] = c;
      const double r = static_cast<double>(cands[g][c].positives) / size_g;
      self(self, g + 1, flips + cands[g][c].flips, std::min(lo, r), std::max(hi, r));
    }
  };
  recurse(recurse, 0, 0, 1e300, -1e300);
  return best;
}

// Remaps a posterior so the decision rule "posterior >= 0.5" reproduces the
// shifted threshold t, monotonically within each side.
inline double remap_posterior(double p, double t) {
  if (p >= t) {
    if (t >= 1.0) return 1.0;
    return std::min(1.0, 0.5 + 0.5 * (p - t) / (1.0 - t));
  }
  // t > 0 here: p < t implies t positive.
  return std::min(0.5 * p / t, 0.5 - 1e-12);
}

// ---- in-processing projection ----------------------------------------------

// Shifts one group's posteriors by an additive logit offset so that the
// implied hard labeling has the requested positive count. The offset is
// located by bisection on the (monotone, stepwise) count function.
inline void shift_group_logit(std::vector<double>& q, const std::vector<std::size_t>& members,
                              std::int64_t target_count) {
  auto count_at = [&](double delta) {
    const double thresh = sigmoid(-delta);
    std::int64_t c = 0;
    for (const auto i : members) c += (q[i] >= thresh) ? 1 : 0;
    return c;
  };
  if (count_at(0.0) == target_count) return;
  double lo = -60.0, hi = 60.0;
  for (int step = 0; step < 200; ++step) {
    const double mid = 0.5 * (lo + hi);
    if (count_at(mid) < target_count) lo = mid;
    else hi = mid;
  }
  // Ties between equal posteriors collapse achievable counts; take the
  // closer side of the final bracket.
  const std::int64_t c_lo = count_at(lo), c_hi = count_at(hi);
  const double delta =
      (std::llabs(c_hi - target_count) <= std::llabs(target_count - c_lo)) ? hi : lo;
  if (delta == 0.0) return;
  for (const auto i : members) {
    const double p = q[i];
    if (p <= 0.0 || p >= 1.0) continue;  // logit fixpoints stay put
    q[i] = sigmoid((std::log(p) - std::log1p(-p)) + delta);
  }
}

inline void project_posteriors(std::vector<double>& q, const GroupIndex& gi, double epsilon) {
  const auto n_groups = static_cast<std::size_t>(gi.n_groups());
  std::vector<std::vector<std::size_t>> members(n_groups);
  for (std::size_t i = 0; i < q.size(); ++i)
    members[static_cast<std::size_t>(gi.of_task[i])].push_back(i);

  std::vector<double> rate(n_groups, 0.0);
  std::int64_t total_pos = 0;
  double lo = 1e300, hi = -1e300;
  int present = 0;
  for (std::size_t g = 0; g < n_groups; ++g) {
    if (members[g].empty()) continue;
    std::int64_t pos = 0;
    for (const auto i : members[g]) pos += (q[i] >= 0.5) ? 1 : 0;
    total_pos += pos;
    rate[g] = static_cast<double>(pos) / static_cast<double>(members[g].size());
    lo = std::min(lo, rate[g]);
    hi = std::max(hi, rate[g]);
    ++present;
  }
  if (present < 2 || hi - lo <= epsilon + 1e-12) return;  // constraint not binding

  const double anchor = static_cast<double>(total_pos) / static_cast<double>(q.size());
  const double band_lo = std::max(0.0, anchor - epsilon / 2.0);
  const double band_hi = std::min(1.0, anchor + epsilon / 2.0);
  for (std::size_t g = 0; g < n_groups; ++g) {
    if (members[g].empty()) continue;
    const double target = std::clamp(rate[g], band_lo, band_hi);
    if (target == rate[g]) continue;
    const auto size_g = static_cast<std::int64_t>(members[g].size());
    std::int64_t want = std::llround(target * static_cast<double>(size_g));
    // Posteriors exactly 0 or 1 cannot be moved by a logit shift.
    std::int64_t fixed_pos = 0, fixed_neg = 0;
    for (const auto i : members[g]) {
      if (q[i] >= 1.0) ++fixed_pos;
      if (q[i] <= 0.0) ++fixed_neg;
    }
    want = std::clamp(want, fixed_pos, size_g - fixed_neg);
    shift_group_logit(q, members[g], want);
  }
}

}  // namespace detail_fair

// Pre-processing mitigation: each worker gets an unfairness score measured
// against the majority-vote consensus as pseudo-truth, votes are down-weighted
// by max(0, 1 - unfairness/eps_w) with eps_w = epsilon/(1 - epsilon), and a
// weighted vote produces the result. Tasks whose labelers all hit weight zero
// fall back to the unweighted vote and are counted in fallback_tasks.
inline TDResult fair_td_pre(const AnnotationMatrix& m, std::span<const std::string> groups,
                            const FairnessConstraint& constraint, const EMConfig& cfg = {}) {
  constraint.validate();
  cfg.validate();
  if (static_cast<std::int32_t>(groups.size()) != m.n_tasks())
    throw ValidationError("fair_td_pre: groups required for all tasks");

  const auto gi = detail_fair::index_groups(groups);
  TDResult r = majority_vote(m);
  r.algorithm = "fair-td-pre";
  if (constraint.inactive()) {
    r.achieved_violation = detail_fair::label_spread(r.hard_label, gi);
    return r;
  }

  // Worker unfairness vs consensus pseudo-truth.
  std::vector<std::int8_t> pseudo_truth(r.hard_label.begin(), r.hard_label.end());
  std::vector<double> weight(static_cast<std::size_t>(m.n_workers()), 1.0);
  const double eps_w = constraint.epsilon / (1.0 - constraint.epsilon);
  for (WorkerId w = 0; w < m.n_workers(); ++w) {
    std::vector<std::uint8_t> pred;
    std::vector<std::int8_t> tru;
    std::vector<std::string> grp;
    for (const auto ei : m.worker_entries(w)) {
      const auto& e = m.entries()[static_cast<std::size_t>(ei)];
      pred.push_back(e.label);
      tru.push_back(pseudo_truth[static_cast<std::size_t>(e.task)]);
      grp.push_back(groups[static_cast<std::size_t>(e.task)]);
    }
    const auto rep = fairness_report(pred, tru, grp);
    const auto metric =
        constraint.kind == FairnessKind::DemographicParity ? rep.dp_diff : rep.eo_diff;
    const double u = metric.value_or(0.0);  // not-computable counts as fair
    if (u <= 0.0) continue;
    weight[static_cast<std::size_t>(w)] = (eps_w > 0.0) ? std::max(0.0, 1.0 - u / eps_w) : 0.0;
  }

  for (TaskId t = 0; t < m.n_tasks(); ++t) {
    double wsum = 0.0, psum = 0.0;
    for (const auto& e : m.task_rows(t)) {
      const double w = weight[static_cast<std::size_t>(e.worker)];
      wsum += w;
      psum += w * static_cast<double>(e.label);
    }
    if (wsum == 0.0) {
      ++r.fallback_tasks;  // posterior already holds the unweighted vote
      continue;
    }
    r.posterior[static_cast<std::size_t>(t)] = psum / wsum;
  }
  r.finalize_labels();
  if (r.fallback_tasks > 0)
    r.diagnostic = std::to_string(r.fallback_tasks) +
                   " task(s) had zero total weight; unweighted vote kept";
  if (constraint.kind == FairnessKind::DemographicParity)
    r.achieved_violation = detail_fair::label_spread(r.hard_label, gi);
  return r;
}

// Post-processing mitigation: per-group decision thresholds over the finite
// grid of observed posteriors, chosen to minimize label flips subject to the
// budget. For equalized odds the ground truth is required and the
// true-positive and false-positive sides are adjusted independently through
// threshold pairs.
inline TDResult fair_td_post(const TDResult& td, std::span<const std::string> groups,
                             const FairnessConstraint& constraint,
                             std::span<const std::int8_t> truth = {}) {
  constraint.validate();
  if (groups.size() != td.posterior.size())
    throw ValidationError("fair_td_post: groups required for all tasks");

  const auto gi = detail_fair::index_groups(groups);
  TDResult r = td;
  r.algorithm = "fair-td-post";
  r.fallback_tasks = 0;
  if (constraint.inactive()) {
    r.achieved_violation = detail_fair::label_spread(r.hard_label, gi);
    return r;
  }

  const auto n = td.posterior.size();
  auto solve_subset = [&](const std::vector<std::vector<std::size_t>>& members)
      -> std::pair<std::optional<double>, std::vector<std::pair<std::size_t, double>>> {
    // Returns (achieved spread, per-row applicable threshold).
    std::vector<detail_fair::GroupTasks> gts;
    std::vector<std::size_t> gid;
    for (std::size_t g = 0; g < members.size(); ++g) {
      if (members[g].empty()) continue;
      detail_fair::GroupTasks gt;
      gt.idx = members[g];
      std::sort(gt.idx.begin(), gt.idx.end(), [&](std::size_t a, std::size_t b) {
        if (td.posterior[a] != td.posterior[b]) return td.posterior[a] > td.posterior[b];
        return a < b;
      });
      gt.sorted_p.reserve(gt.idx.size());
      gt.pos_prefix.assign(gt.idx.size() + 1, 0);
      for (std::size_t j = 0; j < gt.idx.size(); ++j) {
        gt.sorted_p.push_back(td.posterior[gt.idx[j]]);
        gt.pos_prefix[j + 1] = gt.pos_prefix[j] + td.hard_label[gt.idx[j]];
      }
      gts.push_back(std::move(gt));
      gid.push_back(g);
    }
    std::vector<std::pair<std::size_t, double>> assignment;
    if (gts.size() < 2) return {std::nullopt, assignment};  // nothing to constrain
    const auto best = detail_fair::threshold_search(gts, constraint.epsilon);
    for (std::size_t k = 0; k < gts.size(); ++k)
      for (const auto row : gts[k].idx) assignment.emplace_back(row, best.threshold[k]);
    return {best.achieved, assignment};
  };

  std::vector<std::pair<std::size_t, double>> thresholds;
  std::optional<double> achieved;
  if (constraint.kind == FairnessKind::DemographicParity) {
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(gi.n_groups()));
    for (std::size_t i = 0; i < n; ++i)
      members[static_cast<std::size_t>(gi.of_task[i])].push_back(i);
    auto [spread, assign] = solve_subset(members);
    achieved = spread;
    thresholds = std::move(assign);
  } else {
    if (truth.size() != n)
      throw ComputeError("fair_td_post: equalized odds requires ground truth for every task");
    for (const auto t : truth)
      if (t < 0) throw ComputeError("fair_td_post: equalized odds requires ground truth for every task");
    std::vector<std::vector<std::size_t>> pos_members(static_cast<std::size_t>(gi.n_groups()));
    std::vector<std::vector<std::size_t>> neg_members(static_cast<std::size_t>(gi.n_groups()));
    for (std::size_t i = 0; i < n; ++i)
      (truth[i] == 1 ? pos_members : neg_members)[static_cast<std::size_t>(gi.of_task[i])]
          .push_back(i);
    auto [tpr_spread, tpr_assign] = solve_subset(pos_members);
    auto [fpr_spread, fpr_assign] = solve_subset(neg_members);
    if (tpr_spread || fpr_spread)
      achieved = std::max(tpr_spread.value_or(0.0), fpr_spread.value_or(0.0));
    thresholds = std::move(tpr_assign);
    thresholds.insert(thresholds.end(), fpr_assign.begin(), fpr_assign.end());
  }

  for (const auto& [row, t] : thresholds)
    r.posterior[row] = detail_fair::remap_posterior(td.posterior[row], t);
  r.finalize_labels();
  r.achieved_violation = achieved;
  return r;
}

// In-processing mitigation: the Dawid-Skene loop with a per-iteration
// projection that shifts each group's posteriors by an additive logit offset
// until the implied labeling fits the budget (demographic parity only).
inline TDResult fair_td_in(const AnnotationMatrix& m, std::span<const std::string> groups,
                           const FairnessConstraint& constraint, const EMConfig& cfg = {}) {
  constraint.validate();
  if (constraint.kind != FairnessKind::DemographicParity)
    throw ValidationError("fair_td_in supports the demographic-parity constraint only");
  if (static_cast<std::int32_t>(groups.size()) != m.n_tasks())
    throw ValidationError("fair_td_in: groups required for all tasks");

  const auto gi = detail_fair::index_groups(groups);
  DawidSkeneResult ds;
  if (constraint.inactive()) {
    ds = detail_td::ds_em(m, cfg, nullptr, "fair-td-in");
  } else {
    detail_td::PosteriorHook hook = [&](std::vector<double>& q, int) {
      detail_fair::project_posteriors(q, gi, constraint.epsilon);
    };
    ds = detail_td::ds_em(m, cfg, &hook, "fair-td-in");
  }
  TDResult r = std::move(ds.result);
  r.achieved_violation = detail_fair::label_spread(r.hard_label, gi);
  return r;
}

}  // namespace crowdfair
