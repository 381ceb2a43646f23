#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "crowdfair/downstream.hpp"
#include "crowdfair/error.hpp"
#include "crowdfair/metrics.hpp"
#include "crowdfair/model.hpp"
#include "crowdfair/worker_audit.hpp"

namespace crowdfair {

inline constexpr int kReportSchemaVersion = 1;

// ---------------------------------------------------------------------------
// number formatting: reports carry floats at 6 significant digits
// ---------------------------------------------------------------------------

inline std::string format_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline double round_g6(double v) { return std::strtod(format_g6(v).c_str(), nullptr); }

inline std::string csv_number(const std::optional<double>& v) {
  return v ? format_g6(*v) : std::string("NA");
}

inline nlohmann::ordered_json json_number(const std::optional<double>& v) {
  if (!v) return nullptr;
  return round_g6(*v);
}

// ---------------------------------------------------------------------------
// low-level file helpers
// ---------------------------------------------------------------------------

namespace detail_io {

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

inline void check_utf8(const std::string& s, const std::string& path, std::size_t line_no) {
  std::size_t i = 0;
  auto fail = [&] {
    throw IngestError(path + ":" + std::to_string(line_no) + ": row is not valid UTF-8 text");
  };
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra;
    if (c < 0x80) {
      if (c < 0x20 && c != '\t') fail();  // control characters are malformed
      extra = 0;
    } else if ((c >> 5) == 0x6) {
      extra = 1;
    } else if ((c >> 4) == 0xe) {
      extra = 2;
    } else if ((c >> 3) == 0x1e) {
      extra = 3;
    } else {
      fail();
      return;
    }
    if (i + extra >= s.size()) fail();
    for (std::size_t j = 1; j <= extra; ++j)
      if ((static_cast<unsigned char>(s[i + j]) >> 6) != 0x2) fail();
    i += extra + 1;
  }
}

inline std::int64_t parse_id(const std::string& field, const std::string& path,
                             std::size_t line_no, const char* what) {
  char* end = nullptr;
  const auto v = std::strtoll(field.c_str(), &end, 10);
  if (field.empty() || end != field.c_str() + field.size() || v < 0)
    throw IngestError(path + ":" + std::to_string(line_no) + ": bad " + what + " '" + field + "'");
  return v;
}

inline double parse_real(const std::string& field, const std::string& path, std::size_t line_no,
                         const char* what) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (field.empty() || end != field.c_str() + field.size())
    throw IngestError(path + ":" + std::to_string(line_no) + ": bad " + what + " '" + field + "'");
  return v;
}

inline int parse_binary(const std::string& field, const std::string& path, std::size_t line_no,
                        const char* what) {
  if (field == "0") return 0;
  if (field == "1") return 1;
  throw IngestError(path + ":" + std::to_string(line_no) + ": non-binary " + what + " '" + field +
                    "'");
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

// Datasets round-trip exactly; reports use format_g6 instead.
inline std::string format_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail_io

// ---------------------------------------------------------------------------
// dataset files
// ---------------------------------------------------------------------------

struct Provenance {
  std::string annotations_path;
  std::string tasks_path;
  std::int64_t annotation_rows = 0;
  std::int64_t task_rows = 0;
};

struct DatasetBundle {
  AnnotationMatrix matrix;
  TaskTable tasks;
  Provenance provenance;
};

// Schema: annotations.csv has header task_id,worker_id,label; tasks.csv has
// header task_id,group,truth[,feat_0..feat_{d-1}] with the truth cell blank
// when unknown.
inline DatasetBundle load_dataset(const std::string& annotations_path,
                                  const std::string& tasks_path) {
  using namespace detail_io;

  const auto task_lines = read_lines(tasks_path);
  if (task_lines.empty()) throw IngestError(tasks_path + ": empty file");
  {
    const auto header = split_csv(task_lines[0]);
    if (header.size() < 3 || header[0] != "task_id" || header[1] != "group" ||
        header[2] != "truth")
      throw IngestError(tasks_path + ":1: header must start with task_id,group,truth");
    for (std::size_t j = 3; j < header.size(); ++j) {
      if (header[j] != "feat_" + std::to_string(j - 3))
        throw IngestError(tasks_path + ":1: feature columns must be named feat_0, feat_1, ...");
    }
  }
  const auto feat_dim = split_csv(task_lines[0]).size() - 3;

  struct TaskRow {
    std::string group;
    std::int8_t truth;
    std::vector<double> features;
  };
  std::unordered_map<RawId, TaskRow> task_rows;
  std::vector<RawId> task_universe;
  for (std::size_t ln = 1; ln < task_lines.size(); ++ln) {
    if (task_lines[ln].empty()) continue;
    check_utf8(task_lines[ln], tasks_path, ln + 1);
    const auto f = split_csv(task_lines[ln]);
    if (f.size() != 3 + feat_dim)
      throw IngestError(tasks_path + ":" + std::to_string(ln + 1) +
                        ": expected " + std::to_string(3 + feat_dim) + " fields, got " +
                        std::to_string(f.size()));
    const auto id = parse_id(f[0], tasks_path, ln + 1, "task_id");
    if (f[1].empty())
      throw IngestError(tasks_path + ":" + std::to_string(ln + 1) + ": empty group");
    TaskRow row;
    row.group = f[1];
    row.truth = f[2].empty() ? std::int8_t{-1}
                             : static_cast<std::int8_t>(parse_binary(f[2], tasks_path, ln + 1, "truth"));
    row.features.reserve(feat_dim);
    for (std::size_t j = 0; j < feat_dim; ++j)
      row.features.push_back(parse_real(f[3 + j], tasks_path, ln + 1, "feature"));
    if (!task_rows.emplace(id, std::move(row)).second)
      throw IngestError(tasks_path + ":" + std::to_string(ln + 1) + ": duplicate task_id " +
                        std::to_string(id));
    task_universe.push_back(id);
  }
  if (task_universe.empty()) throw IngestError(tasks_path + ": no task rows");

  const auto ann_lines = read_lines(annotations_path);
  if (ann_lines.empty()) throw IngestError(annotations_path + ": empty file");
  {
    const auto header = split_csv(ann_lines[0]);
    if (header.size() != 3 || header[0] != "task_id" || header[1] != "worker_id" ||
        header[2] != "label")
      throw IngestError(annotations_path + ":1: header must be task_id,worker_id,label");
  }
  std::vector<AnnotationRow> rows;
  for (std::size_t ln = 1; ln < ann_lines.size(); ++ln) {
    if (ann_lines[ln].empty()) continue;
    check_utf8(ann_lines[ln], annotations_path, ln + 1);
    const auto f = split_csv(ann_lines[ln]);
    if (f.size() != 3)
      throw IngestError(annotations_path + ":" + std::to_string(ln + 1) +
                        ": expected 3 fields, got " + std::to_string(f.size()));
    const auto task = parse_id(f[0], annotations_path, ln + 1, "task_id");
    const auto worker = parse_id(f[1], annotations_path, ln + 1, "worker_id");
    const auto label = parse_binary(f[2], annotations_path, ln + 1, "label");
    if (task_rows.find(task) == task_rows.end())
      throw IngestError(annotations_path + ":" + std::to_string(ln + 1) + ": unknown task_id " +
                        std::to_string(task));
    rows.emplace_back(task, worker, label);
  }
  if (rows.empty()) throw IngestError(annotations_path + ": no annotation rows");

  DatasetBundle bundle{AnnotationMatrix::from_rows(rows, task_universe), TaskTable{}, Provenance{}};
  const auto n = static_cast<std::size_t>(bundle.matrix.n_tasks());
  bundle.tasks.group.resize(n);
  bundle.tasks.truth.resize(n);
  if (feat_dim > 0) bundle.tasks.features.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto& row = task_rows.at(bundle.matrix.task_ids()[t]);
    bundle.tasks.group[t] = row.group;
    bundle.tasks.truth[t] = row.truth;
    if (feat_dim > 0) bundle.tasks.features[t] = row.features;
  }
  bundle.tasks.validate(bundle.matrix.n_tasks());
  bundle.provenance = {annotations_path, tasks_path,
                       static_cast<std::int64_t>(rows.size()),
                       static_cast<std::int64_t>(task_universe.size())};
  return bundle;
}

inline void write_dataset(const AnnotationMatrix& m, const TaskTable& tasks,
                          const std::string& annotations_path, const std::string& tasks_path) {
  using namespace detail_io;
  tasks.validate(m.n_tasks());
  std::ostringstream ann;
  ann << "task_id,worker_id,label\n";
  for (const auto& [t, w, l] : m.to_rows()) ann << t << ',' << w << ',' << l << '\n';
  write_text(annotations_path, ann.str());

  std::ostringstream ts;
  ts << "task_id,group,truth";
  for (int j = 0; j < tasks.feature_dim(); ++j) ts << ",feat_" << j;
  ts << '\n';
  for (std::size_t i = 0; i < tasks.group.size(); ++i) {
    ts << m.task_ids()[i] << ',' << tasks.group[i] << ',';
    if (tasks.truth[i] >= 0) ts << static_cast<int>(tasks.truth[i]);
    for (int j = 0; j < tasks.feature_dim(); ++j)
      ts << ',' << format_exact(tasks.features[i][static_cast<std::size_t>(j)]);
    ts << '\n';
  }
  write_text(tasks_path, ts.str());
}

// ---------------------------------------------------------------------------
// report serialization
// ---------------------------------------------------------------------------

enum class ReportFormat { Json, Csv };

inline nlohmann::ordered_json to_json(const FairnessReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["n"] = r.n;
  j["accuracy"] = json_number(r.accuracy);
  j["fpr"] = json_number(r.fpr);
  j["fnr"] = json_number(r.fnr);
  j["dp_diff"] = json_number(r.dp_diff);
  j["dp_ratio"] = json_number(r.dp_ratio);
  j["eo_diff"] = json_number(r.eo_diff);
  j["eo_ratio"] = json_number(r.eo_ratio);
  nlohmann::ordered_json per_group = nlohmann::ordered_json::object();
  for (const auto& [name, gs] : r.per_group) {
    nlohmann::ordered_json g;
    g["positive_rate"] = json_number(gs.positive_rate);
    g["tpr"] = json_number(gs.tpr);
    g["fpr"] = json_number(gs.fpr);
    g["support"] = gs.support;
    per_group[name] = g;
  }
  j["per_group"] = per_group;
  j["excluded_groups"] = r.excluded_groups;
  return j;
}

inline void write_fairness_report(const FairnessReport& r, const std::string& path,
                                  ReportFormat format) {
  if (format == ReportFormat::Json) {
    detail_io::write_text(path, to_json(r).dump(2) + "\n");
    return;
  }
  std::ostringstream out;
  out << "n,accuracy,fpr,fnr,dp_diff,dp_ratio,eo_diff,eo_ratio\n";
  out << r.n << ',' << csv_number(r.accuracy) << ',' << csv_number(r.fpr) << ','
      << csv_number(r.fnr) << ',' << csv_number(r.dp_diff) << ',' << csv_number(r.dp_ratio) << ','
      << csv_number(r.eo_diff) << ',' << csv_number(r.eo_ratio) << '\n';
  detail_io::write_text(path, out.str());
}

inline void write_labels_csv(const TDResult& td, const std::vector<RawId>& task_ids,
                             const std::string& path) {
  std::ostringstream out;
  out << "task_id,posterior,hard_label\n";
  for (std::size_t i = 0; i < td.posterior.size(); ++i) {
    out << task_ids[i] << ',' << format_g6(td.posterior[i]) << ','
        << static_cast<int>(td.hard_label[i]) << '\n';
  }
  detail_io::write_text(path, out.str());
}

inline void write_workers_csv(const std::vector<WorkerReport>& reports, const std::string& path) {
  std::ostringstream out;
  out << "worker_id,n_labeled,accuracy,fpr,fnr,dp_diff,dp_ratio,eo_diff,eo_ratio\n";
  for (const auto& r : reports) {
    out << r.raw_id << ',' << r.n_labeled << ',' << csv_number(r.report.accuracy) << ','
        << csv_number(r.report.fpr) << ',' << csv_number(r.report.fnr) << ','
        << csv_number(r.report.dp_diff) << ',' << csv_number(r.report.dp_ratio) << ','
        << csv_number(r.report.eo_diff) << ',' << csv_number(r.report.eo_ratio) << '\n';
  }
  detail_io::write_text(path, out.str());
}

inline void write_histograms_json(const AuditHistograms& h, const std::string& path) {
  auto hist = [](const Histogram& x) {
    nlohmann::ordered_json j;
    j["bin_edges"] = nlohmann::ordered_json::array();
    for (int i = 0; i <= 10; ++i) j["bin_edges"].push_back(round_g6(i / 10.0));
    j["counts"] = x.counts;
    j["not_computable"] = x.not_computable;
    return j;
  };
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["accuracy"] = hist(h.accuracy);
  j["fpr"] = hist(h.fpr);
  j["dp_diff"] = hist(h.dp_diff);
  j["eo_diff"] = hist(h.eo_diff);
  detail_io::write_text(path, j.dump(2) + "\n");
}

inline void write_bucket_csv(const std::vector<BucketRow>& rows, const std::string& path) {
  std::ostringstream out;
  out << "accuracy_lo,accuracy_hi,n_workers,dp_diff,eo_diff\n";
  for (const auto& b : rows) {
    std::optional<double> dp, eo;
    if (b.pooled) {
      dp = b.pooled->dp_diff;
      eo = b.pooled->eo_diff;
    }
    out << format_g6(b.lo) << ',' << format_g6(b.hi) << ',' << b.n_workers << ','
        << csv_number(dp) << ',' << csv_number(eo) << '\n';
  }
  detail_io::write_text(path, out.str());
}

inline void write_domination_csv(const std::vector<std::pair<SweepMetric, std::vector<SweepRow>>>& sweeps,
                                 const std::string& path) {
  std::ostringstream out;
  out << "metric,threshold,dominated_fraction\n";
  for (const auto& [metric, rows] : sweeps)
    for (const auto& r : rows)
      out << to_string(metric) << ',' << format_g6(r.threshold) << ','
          << csv_number(r.dominated_fraction) << '\n';
  detail_io::write_text(path, out.str());
}

inline void write_removal_csv(const std::vector<std::pair<SweepMetric, std::vector<SweepRow>>>& sweeps,
                              const std::string& path) {
  std::ostringstream out;
  out << "metric,threshold,acc_after_removal,tasks_remaining\n";
  for (const auto& [metric, rows] : sweeps)
    for (const auto& r : rows) {
      out << to_string(metric) << ',' << format_g6(r.threshold) << ','
          << csv_number(r.acc_after_removal) << ',';
      if (r.tasks_remaining) out << *r.tasks_remaining;
      else out << "NA";
      out << '\n';
    }
  detail_io::write_text(path, out.str());
}

inline nlohmann::ordered_json to_json(const DeltaReport& d) {
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["delta_accuracy"] = round_g6(d.delta_accuracy);
  j["delta_dp_diff"] = round_g6(d.delta_dp_diff);
  j["delta_eo_diff"] = round_g6(d.delta_eo_diff);
  j["repeats"] = d.repeats;
  j["split_fraction"] = round_g6(d.split_fraction);
  return j;
}

struct FrontierRow {
  std::string method;
  std::string td_algorithm;      // label source: mv, ds, or the variant's base
  std::string constraint_value;  // numeric, or "inf" at the unconstrained endpoint
  std::string split;             // full, train, or test
  std::optional<double> accuracy, dp_diff, eo_diff;
};

inline void write_frontier_csv(const std::vector<FrontierRow>& rows, const std::string& path) {
  std::ostringstream out;
  out << "method,td_algorithm,constraint_value,split,accuracy,dp_diff,eo_diff\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.td_algorithm << ',' << r.constraint_value << ',' << r.split << ','
        << csv_number(r.accuracy) << ',' << csv_number(r.dp_diff) << ',' << csv_number(r.eo_diff)
        << '\n';
  }
  detail_io::write_text(path, out.str());
}

}  // namespace crowdfair
