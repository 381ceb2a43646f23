#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "crowdfair/detail/rng.hpp"
#include "crowdfair/error.hpp"
#include "crowdfair/model.hpp"

namespace crowdfair {

struct GroupSpec {
  std::string name;
  double proportion = 0.0;  // group probabilities sum to 1
  double base_rate = 0.5;   // P(y = 1 | group)
};

// Group-specific coins generalize the worker-global two-coin story; unequal
// per-group specificity is how "accurate yet unfair" workers are planted.
struct WorkerSpec {
  std::vector<double> sensitivity;  // indexed by group
  std::vector<double> specificity;
};

struct SimConfig {
  std::int32_t n_tasks = 0;
  std::int32_t n_workers = 0;
  std::int32_t labels_per_task = 0;
  std::vector<GroupSpec> groups;
  std::vector<WorkerSpec> workers;  // size n_workers
  int feature_dim = 0;              // 0 = no features
  double feature_shift = 1.0;       // mean shift per label / group unit
  std::int32_t block_size = 0;      // 0 = uniform assignment; else disjoint worker pools
                                    // of labels_per_task workers per block of tasks
  std::uint64_t seed = 0;

  void validate() const {
    if (n_tasks < 1) throw ValidationError("sim: n_tasks must be >= 1");
    if (n_workers < 1) throw ValidationError("sim: n_workers must be >= 1");
    if (labels_per_task < 1 || labels_per_task > n_workers)
      throw ValidationError("sim: labels_per_task must be in [1, n_workers]");
    if (groups.empty()) throw ValidationError("sim: at least one group required");
    double psum = 0.0;
    for (const auto& g : groups) {
      if (g.proportion < 0 || g.proportion > 1)
        throw ValidationError("sim: group proportion out of [0, 1]");
      if (g.base_rate < 0 || g.base_rate > 1)
        throw ValidationError("sim: base rate out of [0, 1]");
      psum += g.proportion;
    }
    if (std::abs(psum - 1.0) > 1e-9)
      throw ValidationError("sim: group proportions must sum to 1");
    if (static_cast<std::int32_t>(workers.size()) != n_workers)
      throw ValidationError("sim: worker_spec size must equal n_workers");
    for (const auto& w : workers) {
      if (w.sensitivity.size() != groups.size() || w.specificity.size() != groups.size())
        throw ValidationError("sim: per-worker coins must cover every group");
      for (const auto v : w.sensitivity)
        if (v < 0 || v > 1) throw ValidationError("sim: sensitivity out of [0, 1]");
      for (const auto v : w.specificity)
        if (v < 0 || v > 1) throw ValidationError("sim: specificity out of [0, 1]");
    }
    if (feature_dim < 0) throw ValidationError("sim: feature_dim must be >= 0");
    if (block_size != 0) {
      if (block_size < 1 || n_tasks % block_size != 0)
        throw ValidationError("sim: block_size must divide n_tasks");
      const auto blocks = n_tasks / block_size;
      if (n_workers != blocks * labels_per_task)
        throw ValidationError("sim: block mode needs n_workers = (n_tasks/block_size) * labels_per_task");
    }
  }
};

struct SimData {
  AnnotationMatrix matrix;
  TaskTable tasks;
};

// Draws a complete synthetic dataset: group and truth per task, a worker
// assignment, labels from each assigned worker's group-specific coins, and
// (optionally) Gaussian features whose mean is shifted by the label on every
// coordinate and by the group index on coordinate 0. Fully determined by the
// seed.
inline SimData generate(const SimConfig& cfg) {
  cfg.validate();
  detail::Rng rng(cfg.seed);

  const auto n = static_cast<std::size_t>(cfg.n_tasks);
  std::vector<std::int32_t> task_group(n);
  std::vector<std::int8_t> task_truth(n);
  std::vector<std::vector<double>> features;
  if (cfg.feature_dim > 0) features.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    double acc = 0.0;
    std::int32_t g = static_cast<std::int32_t>(cfg.groups.size()) - 1;
    for (std::size_t j = 0; j < cfg.groups.size(); ++j) {
      acc += cfg.groups[j].proportion;
      if (u < acc) {
        g = static_cast<std::int32_t>(j);
        break;
      }
    }
    task_group[i] = g;
    task_truth[i] = rng.bernoulli(cfg.groups[static_cast<std::size_t>(g)].base_rate) ? 1 : 0;
    if (cfg.feature_dim > 0) {
      auto& x = features[i];
      x.resize(static_cast<std::size_t>(cfg.feature_dim));
      for (int j = 0; j < cfg.feature_dim; ++j) {
        double mean = cfg.feature_shift * static_cast<double>(task_truth[i]);
        if (j == 0) mean += cfg.feature_shift * static_cast<double>(g);
        x[static_cast<std::size_t>(j)] = rng.normal(mean, 1.0);
      }
    }
  }

  std::vector<AnnotationRow> rows;
  rows.reserve(n * static_cast<std::size_t>(cfg.labels_per_task));
  std::vector<std::int32_t> scratch;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::int32_t> assigned;
    if (cfg.block_size > 0) {
      const auto block = static_cast<std::int32_t>(i) / cfg.block_size;
      assigned.resize(static_cast<std::size_t>(cfg.labels_per_task));
      for (std::int32_t j = 0; j < cfg.labels_per_task; ++j)
        assigned[static_cast<std::size_t>(j)] = block * cfg.labels_per_task + j;
    } else {
      assigned = rng.sample_without_replacement(cfg.n_workers, cfg.labels_per_task, scratch);
    }
    const auto g = static_cast<std::size_t>(task_group[i]);
    for (const auto w : assigned) {
      const auto& spec = cfg.workers[static_cast<std::size_t>(w)];
      int label;
      if (task_truth[i] == 1) {
        label = rng.bernoulli(spec.sensitivity[g]) ? 1 : 0;
      } else {
        label = rng.bernoulli(spec.specificity[g]) ? 0 : 1;
      }
      rows.emplace_back(static_cast<RawId>(i), static_cast<RawId>(w), label);
    }
  }

  SimData data{AnnotationMatrix::from_rows(rows), TaskTable{}};
  data.tasks.group.resize(n);
  data.tasks.truth = std::move(task_truth);
  for (std::size_t i = 0; i < n; ++i)
    data.tasks.group[i] = cfg.groups[static_cast<std::size_t>(task_group[i])].name;
  data.tasks.features = std::move(features);
  data.tasks.validate(cfg.n_tasks);
  return data;
}

}  // namespace crowdfair
