#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "crowdfair/error.hpp"

namespace crowdfair {

// Dense indices assigned at ingestion: tasks in [0, n_tasks), workers in
// [0, n_workers).
using TaskId = std::int32_t;
using WorkerId = std::int32_t;
// Identifier as it appears in input files; may be sparse.
using RawId = std::int64_t;

struct Annotation {
  TaskId task;
  WorkerId worker;
  std::uint8_t label;  // strictly 0 or 1
};

using AnnotationRow = std::tuple<RawId, RawId, int>;  // (task, worker, label)

// Sparse worker x task binary label store. Immutable after construction;
// safe to share across threads.
class AnnotationMatrix {
public:
  // Builds a matrix from raw rows. Task and worker ids are remapped to dense
  // indices in ascending raw-id order; the remapping is kept for output.
  // An exact duplicate row collapses to one entry; a duplicate with a
  // conflicting label is an error.
  static AnnotationMatrix from_rows(const std::vector<AnnotationRow>& rows) {
    return from_rows(rows, {});
  }

  // Same, but with an explicit task universe (ingestion from a tasks file).
  // Every annotation must reference a task in the universe and every task in
  // the universe must receive at least one label.
  static AnnotationMatrix from_rows(const std::vector<AnnotationRow>& rows,
                                    const std::vector<RawId>& task_universe) {
    if (rows.empty()) throw IngestError("annotation row list is empty");
    for (const auto& [t, w, l] : rows) {
      if (t < 0 || w < 0)
        throw IngestError("negative id in annotation row (task " + std::to_string(t) +
                          ", worker " + std::to_string(w) + ")");
      if (l != 0 && l != 1)
        throw IngestError("non-binary label " + std::to_string(l) + " for (task " +
                          std::to_string(t) + ", worker " + std::to_string(w) + ")");
    }

    AnnotationMatrix m;
    m.task_ids_ = task_universe;
    if (m.task_ids_.empty()) {
      for (const auto& [t, w, l] : rows) m.task_ids_.push_back(t);
      sort_unique(m.task_ids_);
    } else {
      std::vector<RawId> sorted = m.task_ids_;
      sort_unique(sorted);
      if (sorted.size() != m.task_ids_.size())
        throw IngestError("task universe contains duplicate ids");
      m.task_ids_ = std::move(sorted);
    }
    for (const auto& [t, w, l] : rows) m.worker_ids_.push_back(w);
    sort_unique(m.worker_ids_);

    std::map<std::pair<RawId, RawId>, int> seen;
    m.entries_.reserve(rows.size());
    for (const auto& [t, w, l] : rows) {
      const auto key = std::make_pair(t, w);
      auto [it, inserted] = seen.emplace(key, l);
      if (!inserted) {
        if (it->second != l)
          throw IngestError("conflicting duplicate labels for (task " + std::to_string(t) +
                            ", worker " + std::to_string(w) + ")");
        continue;  // exact duplicate, keep one
      }
      const auto ti = index_of(m.task_ids_, t);
      if (!ti)
        throw IngestError("annotation references unknown task id " + std::to_string(t));
      const auto wi = index_of(m.worker_ids_, w);
      m.entries_.push_back(Annotation{*ti, *wi, static_cast<std::uint8_t>(l)});
    }
    std::sort(m.entries_.begin(), m.entries_.end(), [](const Annotation& a, const Annotation& b) {
      return std::tie(a.task, a.worker) < std::tie(b.task, b.worker);
    });
    m.build_index();
    for (TaskId t = 0; t < m.n_tasks(); ++t) {
      if (m.task_rows(t).empty())
        throw IngestError("task id " + std::to_string(m.task_ids_[static_cast<std::size_t>(t)]) +
                          " has zero labels");
    }
    return m;
  }

  std::int32_t n_tasks() const { return static_cast<std::int32_t>(task_ids_.size()); }
  std::int32_t n_workers() const { return static_cast<std::int32_t>(worker_ids_.size()); }
  std::int64_t n_entries() const { return static_cast<std::int64_t>(entries_.size()); }

  std::span<const Annotation> entries() const { return entries_; }

  // All labels of one task, ordered by worker.
  std::span<const Annotation> task_rows(TaskId t) const {
    const auto b = task_offsets_[static_cast<std::size_t>(t)];
    const auto e = task_offsets_[static_cast<std::size_t>(t) + 1];
    return {entries_.data() + b, static_cast<std::size_t>(e - b)};
  }

  // Indices into entries() of one worker's labels, ordered by task.
  std::span<const std::int64_t> worker_entries(WorkerId w) const {
    const auto b = worker_offsets_[static_cast<std::size_t>(w)];
    const auto e = worker_offsets_[static_cast<std::size_t>(w) + 1];
    return {worker_entry_idx_.data() + b, static_cast<std::size_t>(e - b)};
  }

  std::int64_t worker_label_count(WorkerId w) const {
    return worker_offsets_[static_cast<std::size_t>(w) + 1] -
           worker_offsets_[static_cast<std::size_t>(w)];
  }

  const std::vector<RawId>& task_ids() const { return task_ids_; }
  const std::vector<RawId>& worker_ids() const { return worker_ids_; }

  // Entries with dense ids mapped back to raw ids (for serialization).
  std::vector<AnnotationRow> to_rows() const {
    std::vector<AnnotationRow> rows;
    rows.reserve(entries_.size());
    for (const auto& e : entries_) {
      rows.emplace_back(task_ids_[static_cast<std::size_t>(e.task)],
                        worker_ids_[static_cast<std::size_t>(e.worker)], e.label);
    }
    return rows;
  }

private:
  static void sort_unique(std::vector<RawId>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }

  static std::optional<TaskId> index_of(const std::vector<RawId>& sorted, RawId id) {
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), id);
    if (it == sorted.end() || *it != id) return std::nullopt;
    return static_cast<TaskId>(it - sorted.begin());
  }

  void build_index() {
    task_offsets_.assign(static_cast<std::size_t>(n_tasks()) + 1, 0);
    worker_offsets_.assign(static_cast<std::size_t>(n_workers()) + 1, 0);
    for (const auto& e : entries_) {
      ++task_offsets_[static_cast<std::size_t>(e.task) + 1];
      ++worker_offsets_[static_cast<std::size_t>(e.worker) + 1];
    }
    for (std::size_t i = 1; i < task_offsets_.size(); ++i) task_offsets_[i] += task_offsets_[i - 1];
    for (std::size_t i = 1; i < worker_offsets_.size(); ++i)
      worker_offsets_[i] += worker_offsets_[i - 1];
    worker_entry_idx_.resize(entries_.size());
    std::vector<std::int64_t> cursor(worker_offsets_.begin(), worker_offsets_.end() - 1);
    for (std::int64_t i = 0; i < n_entries(); ++i) {
      const auto w = static_cast<std::size_t>(entries_[static_cast<std::size_t>(i)].worker);
      worker_entry_idx_[static_cast<std::size_t>(cursor[w]++)] = i;
    }
  }

  std::vector<Annotation> entries_;            // sorted by (task, worker)
  std::vector<std::int64_t> task_offsets_;     // CSR over entries_
  std::vector<std::int64_t> worker_offsets_;   // CSR over worker_entry_idx_
  std::vector<std::int64_t> worker_entry_idx_;
  std::vector<RawId> task_ids_;    // dense -> raw
  std::vector<RawId> worker_ids_;  // dense -> raw
};

// Per-task metadata: sensitive group, optional ground truth, optional
// feature vector. Aligned with the dense task ids of an AnnotationMatrix.
struct TaskTable {
  std::vector<std::string> group;             // size n_tasks
  std::vector<std::int8_t> truth;             // size n_tasks; -1 = unknown
  std::vector<std::vector<double>> features;  // empty, or size n_tasks with equal dims

  std::int32_t n_tasks() const { return static_cast<std::int32_t>(group.size()); }

  bool has_features() const { return !features.empty(); }

  int feature_dim() const {
    return features.empty() ? 0 : static_cast<int>(features.front().size());
  }

  bool has_full_truth() const {
    if (truth.empty()) return false;
    for (const auto t : truth)
      if (t < 0) return false;
    return true;
  }

  // Throws unless every task that needs ground truth has it. Operations that
  // evaluate against truth fail fast instead of substituting consensus.
  void require_truth(const std::string& op) const {
    if (!has_full_truth())
      throw ComputeError(op + " requires ground truth for every task");
  }

  void validate(std::int32_t expected_tasks) const {
    if (n_tasks() != expected_tasks)
      throw ValidationError("task table has " + std::to_string(n_tasks()) +
                            " rows, expected " + std::to_string(expected_tasks));
    if (!truth.empty() && truth.size() != group.size())
      throw ValidationError("truth column length mismatch");
    for (const auto t : truth)
      if (t != -1 && t != 0 && t != 1) throw ValidationError("truth values must be 0, 1 or unknown");
    if (!features.empty()) {
      if (features.size() != group.size()) throw ValidationError("feature rows length mismatch");
      const auto d = features.front().size();
      for (const auto& f : features)
        if (f.size() != d) throw ValidationError("inconsistent feature dimensionality");
    }
  }
};

// Output of any truth-discovery run: per-task positive-class posterior plus
// the hard consensus label and convergence metadata.
struct TDResult {
  std::string algorithm;
  std::vector<double> posterior;         // P(y=1), one per task, each in [0,1]
  std::vector<std::uint8_t> hard_label;  // 1 iff posterior >= 0.5 (tie -> positive)
  int iterations = 0;
  double final_loglik = 0.0;
  bool converged = true;
  std::string diagnostic;  // non-empty when converged=false or a fallback fired
  std::optional<double> achieved_violation;  // fairness-aware variants only
  std::int64_t fallback_tasks = 0;           // tasks that fell back to unweighted voting

  // Global decision rule, shared by every algorithm so comparisons stay
  // tie-break-consistent.
  static std::uint8_t hard_from_posterior(double p) { return p >= 0.5 ? 1 : 0; }

  void finalize_labels() {
    hard_label.resize(posterior.size());
    for (std::size_t i = 0; i < posterior.size(); ++i)
      hard_label[i] = hard_from_posterior(posterior[i]);
  }
};

}  // namespace crowdfair
