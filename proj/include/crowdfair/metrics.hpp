#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crowdfair/error.hpp"

namespace crowdfair {

struct MetricsOptions {
  // Groups with fewer predicted tasks than this are left out of the gap
  // computations (and listed in excluded_groups).
  std::int64_t min_support = 1;
};

// Confusion cells for one group. Fractional so that mixtures of classifiers
// can be scored by convex combination of member cells.
struct GroupCells {
  double support = 0;    // predicted tasks in this group
  double positives = 0;  // predicted positive
  double tp = 0, fp = 0, tn = 0, fn = 0;  // only rows with known truth
};

struct GroupStats {
  double positive_rate = 0.0;
  std::optional<double> tpr;  // needs >= 1 true-positive-eligible row
  std::optional<double> fpr;  // needs >= 1 true-negative-eligible row
  double support = 0;
};

// The four fairness summaries plus the accuracy-side metrics for any binary
// predictor. Fields that cannot be computed (no truth, or < 2 usable groups)
// stay empty rather than defaulting to a number.
struct FairnessReport {
  std::int64_t n = 0;  // predicted rows the report covers
  std::optional<double> accuracy;
  std::optional<double> fpr;
  std::optional<double> fnr;
  std::optional<double> dp_diff;
  std::optional<double> dp_ratio;
  std::optional<double> eo_diff;
  std::optional<double> eo_ratio;
  std::vector<std::pair<std::string, GroupStats>> per_group;  // sorted by group name
  std::vector<std::string> excluded_groups;                   // below min_support

  bool fairness_computable() const { return dp_diff.has_value(); }
};

namespace detail_metrics {

// min/max ratio with the documented degenerate-denominator rule:
// max == 0 (hence min == 0) -> 1 (identically-zero rates are parity),
// min == 0 with max > 0 -> 0.
inline double min_max_ratio(double min_v, double max_v) {
  if (max_v == 0.0) return 1.0;
  return min_v / max_v;
}

inline FairnessReport report_from_cells(const std::map<std::string, GroupCells>& cells,
                                        std::int64_t n_rows, const MetricsOptions& opt) {
  FairnessReport rep;
  rep.n = n_rows;

  double tp = 0, fp = 0, tn = 0, fn = 0;
  for (const auto& [name, c] : cells) {
    tp += c.tp;
    fp += c.fp;
    tn += c.tn;
    fn += c.fn;
    GroupStats gs;
    gs.support = c.support;
    gs.positive_rate = c.positives / c.support;
    if (c.tp + c.fn > 0) gs.tpr = c.tp / (c.tp + c.fn);
    if (c.fp + c.tn > 0) gs.fpr = c.fp / (c.fp + c.tn);
    rep.per_group.emplace_back(name, gs);
  }
  const double n_truth = tp + fp + tn + fn;
  if (n_truth > 0) {
    rep.accuracy = (tp + tn) / n_truth;
    if (fp + tn > 0) rep.fpr = fp / (fp + tn);
    if (tp + fn > 0) rep.fnr = fn / (tp + fn);
  }

  // Gap metrics over groups meeting min_support.
  std::vector<const GroupStats*> usable;
  for (const auto& [name, gs] : rep.per_group) {
    if (static_cast<std::int64_t>(gs.support) < opt.min_support) {
      rep.excluded_groups.push_back(name);
    } else {
      usable.push_back(&gs);
    }
  }
  if (usable.size() < 2) return rep;  // fairness fields stay not-computable

  double pr_min = 1e300, pr_max = -1e300;
  for (const auto* g : usable) {
    pr_min = std::min(pr_min, g->positive_rate);
    pr_max = std::max(pr_max, g->positive_rate);
  }
  rep.dp_diff = pr_max - pr_min;
  rep.dp_ratio = min_max_ratio(pr_min, pr_max);

  // Equalized odds: the max of the TPR and FPR spreads. A group without
  // positive (negative) truth rows has no TPR (FPR) and drops out of that
  // component; a component needs >= 2 groups to exist.
  std::optional<double> tpr_gap, fpr_gap, tpr_ratio, fpr_ratio;
  {
    double lo = 1e300, hi = -1e300;
    int cnt = 0;
    for (const auto* g : usable)
      if (g->tpr) {
        lo = std::min(lo, *g->tpr);
        hi = std::max(hi, *g->tpr);
        ++cnt;
      }
    if (cnt >= 2) {
      tpr_gap = hi - lo;
      tpr_ratio = min_max_ratio(lo, hi);
    }
  }
  {
    double lo = 1e300, hi = -1e300;
    int cnt = 0;
    for (const auto* g : usable)
      if (g->fpr) {
        lo = std::min(lo, *g->fpr);
        hi = std::max(hi, *g->fpr);
        ++cnt;
      }
    if (cnt >= 2) {
      fpr_gap = hi - lo;
      fpr_ratio = min_max_ratio(lo, hi);
    }
  }
  if (tpr_gap && fpr_gap) {
    rep.eo_diff = std::max(*tpr_gap, *fpr_gap);
    rep.eo_ratio = std::min(*tpr_ratio, *fpr_ratio);
  } else if (tpr_gap) {
    rep.eo_diff = tpr_gap;
    rep.eo_ratio = tpr_ratio;
  } else if (fpr_gap) {
    rep.eo_diff = fpr_gap;
    rep.eo_ratio = fpr_ratio;
  }
  return rep;
}

}  // namespace detail_metrics

// Scores a binary predictor, group-wise, over exactly the rows supplied.
// Rows are (prediction, truth, group) aligned; truth -1 means unknown.
// Partial coverage is the caller's concern: pass only predicted rows. The
// same task may appear in several rows (pooled evaluation).
inline FairnessReport fairness_report(std::span<const std::uint8_t> pred,
                                      std::span<const std::int8_t> truth,
                                      std::span<const std::string> group,
                                      const MetricsOptions& opt = {}) {
  if (pred.empty()) throw ValidationError("fairness_report: no predictions");
  if (group.size() != pred.size())
    throw ValidationError("fairness_report: every predicted task needs a group");
  if (!truth.empty() && truth.size() != pred.size())
    throw ValidationError("fairness_report: truth/prediction length mismatch");

  std::map<std::string, GroupCells> cells;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != 0 && pred[i] != 1)
      throw ValidationError("fairness_report: predictions must be binary");
    auto& c = cells[group[i]];
    c.support += 1;
    c.positives += pred[i];
    const std::int8_t t = truth.empty() ? std::int8_t{-1} : truth[i];
    if (t == 1) {
      (pred[i] == 1 ? c.tp : c.fn) += 1;
    } else if (t == 0) {
      (pred[i] == 1 ? c.fp : c.tn) += 1;
    }
  }
  return detail_metrics::report_from_cells(cells, static_cast<std::int64_t>(pred.size()), opt);
}

// Fraction of agreeing tasks among tasks carrying both a prediction and a
// truth value.
inline double accuracy(std::span<const std::uint8_t> pred, std::span<const std::int8_t> truth) {
  if (pred.size() != truth.size())
    throw ValidationError("accuracy: prediction/truth length mismatch");
  std::int64_t both = 0, agree = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] < 0) continue;
    ++both;
    if (pred[i] == truth[i]) ++agree;
  }
  if (both == 0) throw ComputeError("accuracy: no task has both a prediction and a truth value");
  return static_cast<double>(agree) / static_cast<double>(both);
}

}  // namespace crowdfair
