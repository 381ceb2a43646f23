#pragma once

// Shared test machinery: random-instance generators and independent
// brute-force oracles. The oracles recompute expected values directly from
// definitions and deliberately stay off the library code paths they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crowdfair/crowdfair.hpp"

namespace testsup {

using crowdfair::AnnotationRow;
using Rng = crowdfair::detail::Rng;

// RAII temp directory under the system temp root.
class TempDir {
public:
  TempDir() {
    auto pattern = (std::filesystem::temp_directory_path() / "crowdfair_XXXXXX").string();
    std::vector<char> buf(pattern.begin(), pattern.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const { return path_ + "/" + name; }

private:
  std::string path_;
};

// ---------------------------------------------------------------------------
// random instances
// ---------------------------------------------------------------------------

struct RandomMatrix {
  std::vector<AnnotationRow> rows;
  int n_tasks = 0;
  int n_workers = 0;
};

inline RandomMatrix random_matrix(Rng& rng, int max_tasks, int max_workers) {
  RandomMatrix out;
  out.n_tasks = 1 + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(max_tasks)));
  out.n_workers = 1 + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(max_workers)));
  std::vector<std::int32_t> scratch;
  for (int t = 0; t < out.n_tasks; ++t) {
    const int k =
        1 + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(out.n_workers)));
    const auto workers = rng.sample_without_replacement(out.n_workers, k, scratch);
    for (const auto w : workers)
      out.rows.emplace_back(t, w, rng.bernoulli(0.5) ? 1 : 0);
  }
  return out;
}

inline std::vector<std::string> random_groups(Rng& rng, int n, int n_groups = 2) {
  static const std::array<const char*, 4> names{"A", "B", "C", "D"};
  std::vector<std::string> g(static_cast<std::size_t>(n));
  for (auto& v : g)
    v = names[rng.uniform_below(static_cast<std::uint64_t>(n_groups))];
  return g;
}

inline std::vector<std::int8_t> random_truth(Rng& rng, int n) {
  std::vector<std::int8_t> t(static_cast<std::size_t>(n));
  for (auto& v : t) v = rng.bernoulli(0.5) ? 1 : 0;
  return t;
}

// ---------------------------------------------------------------------------
// majority-vote oracle: per-task mode count, ties resolved to the positive
// class.
// ---------------------------------------------------------------------------

inline std::map<std::int64_t, int> mv_oracle(const std::vector<AnnotationRow>& rows) {
  std::map<std::int64_t, std::pair<int, int>> votes;  // task -> (zeros, ones)
  for (const auto& [t, w, l] : rows) {
    if (l == 1) ++votes[t].second;
    else ++votes[t].first;
  }
  std::map<std::int64_t, int> labels;
  for (const auto& [t, v] : votes) labels[t] = v.second >= v.first ? 1 : 0;
  return labels;
}

// ---------------------------------------------------------------------------
// fairness-report oracle: exhaustive per-group confusion-cell recount
// ---------------------------------------------------------------------------

struct OracleReport {
  std::optional<double> accuracy, fpr, fnr, dp_diff, dp_ratio, eo_diff, eo_ratio;
};

inline OracleReport fairness_oracle(const std::vector<int>& pred, const std::vector<int>& truth,
                                    const std::vector<std::string>& group,
                                    long min_support = 1) {
  struct Cells {
    long support = 0, pos = 0, tp = 0, fp = 0, tn = 0, fn = 0;
  };
  std::map<std::string, Cells> by_group;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto& c = by_group[group[i]];
    ++c.support;
    if (pred[i] == 1) ++c.pos;
    if (truth[i] == 1) ++(pred[i] == 1 ? c.tp : c.fn);
    if (truth[i] == 0) ++(pred[i] == 1 ? c.fp : c.tn);
  }

  OracleReport r;
  long tp = 0, fp = 0, tn = 0, fn = 0;
  for (const auto& [name, c] : by_group) {
    tp += c.tp;
    fp += c.fp;
    tn += c.tn;
    fn += c.fn;
  }
  if (tp + fp + tn + fn > 0) {
    r.accuracy = static_cast<double>(tp + tn) / static_cast<double>(tp + fp + tn + fn);
    if (fp + tn > 0) r.fpr = static_cast<double>(fp) / static_cast<double>(fp + tn);
    if (tp + fn > 0) r.fnr = static_cast<double>(fn) / static_cast<double>(tp + fn);
  }

  std::vector<double> rates, tprs, fprs;
  for (const auto& [name, c] : by_group) {
    if (c.support < min_support) continue;
    rates.push_back(static_cast<double>(c.pos) / static_cast<double>(c.support));
    if (c.tp + c.fn > 0) tprs.push_back(static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn));
    if (c.fp + c.tn > 0) fprs.push_back(static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn));
  }
  if (rates.size() < 2) return r;

  auto ratio = [](double lo, double hi) { return hi == 0.0 ? 1.0 : lo / hi; };
  const auto [rmin, rmax] = std::minmax_element(rates.begin(), rates.end());
  r.dp_diff = *rmax - *rmin;
  r.dp_ratio = ratio(*rmin, *rmax);

  std::optional<double> tgap, tratio, fgap, fratio;
  if (tprs.size() >= 2) {
    const auto [lo, hi] = std::minmax_element(tprs.begin(), tprs.end());
    tgap = *hi - *lo;
    tratio = ratio(*lo, *hi);
  }
  if (fprs.size() >= 2) {
    const auto [lo, hi] = std::minmax_element(fprs.begin(), fprs.end());
    fgap = *hi - *lo;
    fratio = ratio(*lo, *hi);
  }
  if (tgap && fgap) {
    r.eo_diff = std::max(*tgap, *fgap);
    r.eo_ratio = std::min(*tratio, *fratio);
  } else if (tgap) {
    r.eo_diff = tgap;
    r.eo_ratio = tratio;
  } else if (fgap) {
    r.eo_diff = fgap;
    r.eo_ratio = fratio;
  }
  return r;
}

// ---------------------------------------------------------------------------
// post-processing threshold-pair oracle: enumerate every combination of
// observed-posterior thresholds per group, return the minimal flip count
// subject to the rate-spread budget.
// ---------------------------------------------------------------------------

struct PostOracleResult {
  long min_flips = -1;
  double achieved = 0.0;
};

inline PostOracleResult post_threshold_oracle(const std::vector<double>& posterior,
                                              const std::vector<int>& input_label,
                                              const std::vector<std::string>& group,
                                              double epsilon) {
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < posterior.size(); ++i) members[group[i]].push_back(i);

  std::vector<std::vector<std::size_t>> sets;
  for (auto& [name, idx] : members) sets.push_back(idx);

  // candidate thresholds per group: each observed posterior plus a sentinel
  std::vector<std::vector<double>> cand(sets.size());
  for (std::size_t g = 0; g < sets.size(); ++g) {
    for (const auto i : sets[g]) cand[g].push_back(posterior[i]);
    cand[g].push_back(2.0);
    std::sort(cand[g].begin(), cand[g].end());
    cand[g].erase(std::unique(cand[g].begin(), cand[g].end()), cand[g].end());
  }

  PostOracleResult best;
  std::vector<std::size_t> pick(sets.size(), 0);
  auto eval = [&]() {
    long flips = 0;
    double lo = 1e300, hi = -1e300;
    for (std::size_t g = 0; g < sets.size(); ++g) {
      long pos = 0;
      for (const auto i : sets[g]) {
        const int lab = posterior[i] >= cand[g][pick[g]] ? 1 : 0;
        pos += lab;
        if (lab != input_label[i]) ++flips;
      }
      const double rate = static_cast<double>(pos) / static_cast<double>(sets[g].size());
      lo = std::min(lo, rate);
      hi = std::max(hi, rate);
    }
    if (hi - lo > epsilon + 1e-12) return;
    if (best.min_flips < 0 || flips < best.min_flips ||
        (flips == best.min_flips && hi - lo < best.achieved)) {
      best.min_flips = flips;
      best.achieved = hi - lo;
    }
  };
  auto recurse = [&](auto&& self, std::size_t g) -> void {
    if (g == sets.size()) {
      eval();
      return;
    }
    for (std::size_t c = 0; c < cand[g].size(); ++c) {
      pick[g] = c;
      self(self, g + 1);
    }
  };
  recurse(recurse, 0);
  return best;
}

// Central finite differences of a scalar function of a parameter vector.
template <typename F>
std::vector<double> finite_difference_gradient(F&& f, std::vector<double> params,
                                               double h = 1e-5) {
  std::vector<double> grad(params.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    const double keep = params[j];
    params[j] = keep + h;
    const double up = f(params);
    params[j] = keep - h;
    const double down = f(params);
    params[j] = keep;
    grad[j] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline double relative_gradient_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

}  // namespace testsup
