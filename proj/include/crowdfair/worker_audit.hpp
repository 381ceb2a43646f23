#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crowdfair/detail/parallel.hpp"
#include "crowdfair/error.hpp"
#include "crowdfair/metrics.hpp"
#include "crowdfair/model.hpp"

namespace crowdfair {

struct WorkerReport {
  WorkerId worker = 0;
  RawId raw_id = 0;
  std::int64_t n_labeled = 0;
  FairnessReport report;  // computed over exactly this worker's labeled tasks
};

// One report per worker, measured against ground truth. Workers whose
// labeled tasks span fewer than two groups keep not-computable fairness
// fields (they are still listed).
inline std::vector<WorkerReport> audit_workers(const AnnotationMatrix& m, const TaskTable& tasks,
                                               int threads = 1) {
  tasks.validate(m.n_tasks());
  tasks.require_truth("audit_workers");
  std::vector<WorkerReport> out(static_cast<std::size_t>(m.n_workers()));
  detail::parallel_chunks(m.n_workers(), threads, [&](std::int64_t, std::int64_t b, std::int64_t e) {
    for (std::int64_t w = b; w < e; ++w) {
      std::vector<std::uint8_t> pred;
      std::vector<std::int8_t> truth;
      std::vector<std::string> group;
      for (const auto ei : m.worker_entries(static_cast<WorkerId>(w))) {
        const auto& entry = m.entries()[static_cast<std::size_t>(ei)];
        pred.push_back(entry.label);
        truth.push_back(tasks.truth[static_cast<std::size_t>(entry.task)]);
        group.push_back(tasks.group[static_cast<std::size_t>(entry.task)]);
      }
      auto& rep = out[static_cast<std::size_t>(w)];
      rep.worker = static_cast<WorkerId>(w);
      rep.raw_id = m.worker_ids()[static_cast<std::size_t>(w)];
      rep.n_labeled = static_cast<std::int64_t>(pred.size());
      rep.report = fairness_report(pred, truth, group);
    }
  });
  return out;
}

struct Histogram {
  std::array<std::int64_t, 10> counts{};  // uniform bins over [0, 1]
  std::int64_t not_computable = 0;
};

struct AuditHistograms {
  Histogram accuracy, fpr, dp_diff, eo_diff;
};

inline AuditHistograms metric_histograms(const std::vector<WorkerReport>& reports) {
  AuditHistograms h;
  auto tally = [](Histogram& hist, const std::optional<double>& v) {
    if (!v) {
      ++hist.not_computable;
      return;
    }
    const int bin = std::min(9, static_cast<int>(*v * 10.0));
    ++hist.counts[static_cast<std::size_t>(std::max(0, bin))];
  };
  for (const auto& r : reports) {
    tally(h.accuracy, r.report.accuracy);
    tally(h.fpr, r.report.fpr);
    tally(h.dp_diff, r.report.dp_diff);
    tally(h.eo_diff, r.report.eo_diff);
  }
  return h;
}

inline const std::vector<double>& default_bucket_edges() {
  static const std::vector<double> edges{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  return edges;
}

struct BucketRow {
  double lo = 0.0, hi = 0.0;  // workers with accuracy in (lo, hi]
  std::int64_t n_workers = 0;
  std::optional<FairnessReport> pooled;  // empty bucket -> NA
};

// Buckets workers by accuracy and scores each bucket over the union of its
// members' labels (pooled recount, not an average of member metrics).
inline std::vector<BucketRow> bucket_table(const AnnotationMatrix& m, const TaskTable& tasks,
                                           const std::vector<WorkerReport>& reports,
                                           const std::vector<double>& edges = default_bucket_edges()) {
  tasks.validate(m.n_tasks());
  tasks.require_truth("bucket_table");
  if (edges.size() < 2) throw ValidationError("bucket_table: need at least two bucket edges");
  std::vector<BucketRow> rows(edges.size() - 1);
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    rows[b].lo = edges[b];
    rows[b].hi = edges[b + 1];
  }
  std::vector<std::vector<WorkerId>> members(rows.size());
  for (const auto& r : reports) {
    if (!r.report.accuracy) continue;
    const double a = *r.report.accuracy;
    for (std::size_t b = 0; b < rows.size(); ++b) {
      if (a > rows[b].lo && a <= rows[b].hi) {
        members[b].push_back(r.worker);
        break;
      }
    }
  }
  for (std::size_t b = 0; b < rows.size(); ++b) {
    rows[b].n_workers = static_cast<std::int64_t>(members[b].size());
    if (members[b].empty()) continue;
    std::vector<std::uint8_t> pred;
    std::vector<std::int8_t> truth;
    std::vector<std::string> group;
    for (const auto w : members[b]) {
      for (const auto ei : m.worker_entries(w)) {
        const auto& entry = m.entries()[static_cast<std::size_t>(ei)];
        pred.push_back(entry.label);
        truth.push_back(tasks.truth[static_cast<std::size_t>(entry.task)]);
        group.push_back(tasks.group[static_cast<std::size_t>(entry.task)]);
      }
    }
    rows[b].pooled = fairness_report(pred, truth, group);
  }
  return rows;
}

enum class SweepMetric { DpDiff, EoDiff };

inline std::string to_string(SweepMetric m) {
  return m == SweepMetric::DpDiff ? "dp_diff" : "eo_diff";
}

inline const std::vector<double>& default_threshold_grid() {
  static const std::vector<double> grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  return grid;
}

struct SweepRow {
  double threshold = 0.0;
  std::optional<double> dominated_fraction;   // domination sweep
  std::optional<double> acc_after_removal;    // removal sweep
  std::optional<std::int64_t> tasks_remaining;
};

namespace detail_audit {

// A worker is unfair at a threshold iff its metric value meets or exceeds it
// (closed boundary: threshold 0 marks every scored worker unfair). Workers
// whose metric is not computable are treated as fair and never removed.
inline std::vector<char> unfair_flags(const std::vector<WorkerReport>& reports, SweepMetric metric,
                                      double threshold) {
  std::vector<char> unfair(reports.size(), 0);
  for (std::size_t w = 0; w < reports.size(); ++w) {
    const auto& v = metric == SweepMetric::DpDiff ? reports[w].report.dp_diff
                                                  : reports[w].report.eo_diff;
    unfair[w] = (v && *v >= threshold) ? 1 : 0;
  }
  return unfair;
}

}  // namespace detail_audit

// For each threshold: the fraction of tasks whose unfair labelers strictly
// outnumber their fair labelers.
inline std::vector<SweepRow> domination_sweep(const AnnotationMatrix& m,
                                              const std::vector<WorkerReport>& reports,
                                              SweepMetric metric,
                                              const std::vector<double>& grid = default_threshold_grid()) {
  if (static_cast<std::int32_t>(reports.size()) != m.n_workers())
    throw ValidationError("domination_sweep: one report per worker required");
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (const double t : grid) {
    const auto unfair = detail_audit::unfair_flags(reports, metric, t);
    std::int64_t dominated = 0;
    for (TaskId task = 0; task < m.n_tasks(); ++task) {
      std::int64_t u = 0, f = 0;
      for (const auto& e : m.task_rows(task))
        (unfair[static_cast<std::size_t>(e.worker)] ? u : f) += 1;
      if (u > f) ++dominated;
    }
    SweepRow row;
    row.threshold = t;
    row.dominated_fraction = static_cast<double>(dominated) / static_cast<double>(m.n_tasks());
    rows.push_back(row);
  }
  return rows;
}

// For each threshold: drop the unfair workers, re-vote on what remains, and
// report the vote accuracy over still-answered tasks plus how many tasks
// still have any answer.
inline std::vector<SweepRow> removal_impact(const AnnotationMatrix& m, const TaskTable& tasks,
                                            const std::vector<WorkerReport>& reports,
                                            SweepMetric metric,
                                            const std::vector<double>& grid = default_threshold_grid()) {
  if (static_cast<std::int32_t>(reports.size()) != m.n_workers())
    throw ValidationError("removal_impact: one report per worker required");
  tasks.validate(m.n_tasks());
  tasks.require_truth("removal_impact");
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (const double t : grid) {
    const auto unfair = detail_audit::unfair_flags(reports, metric, t);
    std::int64_t answered = 0, correct = 0;
    for (TaskId task = 0; task < m.n_tasks(); ++task) {
      std::int64_t kept = 0, pos = 0;
      for (const auto& e : m.task_rows(task)) {
        if (unfair[static_cast<std::size_t>(e.worker)]) continue;
        ++kept;
        pos += e.label;
      }
      if (kept == 0) continue;
      ++answered;
      const double posterior = static_cast<double>(pos) / static_cast<double>(kept);
      const auto label = TDResult::hard_from_posterior(posterior);
      if (label == tasks.truth[static_cast<std::size_t>(task)]) ++correct;
    }
    SweepRow row;
    row.threshold = t;
    row.tasks_remaining = answered;
    if (answered > 0)
      row.acc_after_removal = static_cast<double>(correct) / static_cast<double>(answered);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace crowdfair
