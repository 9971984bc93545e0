#pragma once

// Batch evaluation of fusion outputs against a corpus manifest, either by
// running a trained checkpoint or by scoring a directory of fused images
// produced elsewhere, and side-by-side comparison of several such jobs.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "firegan/checkpoint.hpp"
#include "firegan/data.hpp"
#include "firegan/io.hpp"
#include "firegan/log.hpp"
#include "firegan/metrics.hpp"
#include "firegan/training.hpp"

namespace firegan::evaluation {

namespace fs = std::filesystem;

struct EvalJob {
  std::string name;
  fs::path manifest;          // JSON split manifest or CSV corpus list
  std::string split = "all";  // subset of a JSON manifest: train, val or all
  std::optional<fs::path> checkpoint;  // training-state directory (g1/, g2/)
  std::optional<fs::path> fused_dir;   // images named <id>_fused.<ext> or <id>.<ext>
  metrics::MetricParams params;
  int image_size = 0;  // checkpoint inference resize; 0 keeps native size
  fs::path output_dir;  // empty: nothing written

  void validate() const {
    if (checkpoint.has_value() == fused_dir.has_value())
      throw ValidationError("evaluation job '" + name + "' needs exactly one of checkpoint or fused_dir");
    if (manifest.empty()) throw ValidationError("evaluation job '" + name + "' has no manifest");
    if (image_size < 0) throw ValidationError("image_size must be >= 0");
    params.validate();
  }
};

struct Exclusion {
  std::string id;
  std::string reason;
};

struct EvalResult {
  std::string name;
  std::vector<metrics::MetricRecord> items;  // manifest order
  metrics::MetricRecord aggregate;
  std::vector<metrics::PairRecord> genir_items;  // checkpoint jobs only
  std::optional<metrics::PairRecord> genir_aggregate;
  std::vector<Exclusion> excluded;
};

// Fused image for `id` in `dir`: <id>_fused.<ext> preferred, then <id>.<ext>.
inline std::optional<fs::path> find_fused(const fs::path& dir, const std::string& id) {
  for (const std::string& stem : {id + "_fused", id})
    for (const char* ext : {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".PNG", ".JPG"}) {
      const fs::path p = dir / (stem + ext);
      if (fs::is_regular_file(p)) return p;
    }
  return std::nullopt;
}

namespace detail {

template <std::size_t N>
void write_rows(const fs::path& path, const std::array<const char*, N>& keys,
                const std::vector<metrics::ScoreRow<N>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << metrics::csv_header(keys) << '\n';
  for (const auto& r : rows) out << metrics::csv_row(r) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

template <std::size_t N>
void write_boxplot(std::ostream& out, const std::string& group, const std::array<const char*, N>& keys,
                   const std::vector<metrics::ScoreRow<N>>& rows) {
  const auto summary = metrics::boxplot_summary(rows);
  for (std::size_t k = 0; k < N; ++k) {
    out << group << ',' << keys[k];
    if (!summary[k]) {
      out << ",0,error,error,error,error,error\n";
      continue;
    }
    const auto& s = *summary[k];
    out << ',' << s.count;
    for (double v : {s.min, s.q1, s.median, s.q3, s.max}) out << ',' << metrics::format_value(v);
    out << '\n';
  }
}

template <std::size_t N>
nlohmann::json row_json(const metrics::ScoreRow<N>& r, const std::array<const char*, N>& keys) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t k = 0; k < N; ++k) {
    if (!r.values[k]) j[keys[k]] = nullptr;
    else if (std::isinf(*r.values[k])) j[keys[k]] = metrics::format_value(r.values[k]);
    else j[keys[k]] = *r.values[k];
  }
  return j;
}

}  // namespace detail

inline void write_outputs(const EvalResult& r, const fs::path& dir, const EvalJob& job) {
  fs::create_directories(dir);
  detail::write_rows(dir / "per_item.csv", metrics::kTripleKeys, r.items);
  detail::write_rows(dir / "aggregate.csv", metrics::kTripleKeys, std::vector{r.aggregate});
  if (r.genir_aggregate) {
    detail::write_rows(dir / "per_item_genir.csv", metrics::kPairKeys, r.genir_items);
    detail::write_rows(dir / "aggregate_genir.csv", metrics::kPairKeys, std::vector{*r.genir_aggregate});
  }
  {
    std::ofstream out(dir / "boxplot_summary.csv");
    if (!out) throw IoError("cannot write " + (dir / "boxplot_summary.csv").string());
    out << "group,metric,count,min,q1,median,q3,max\n";
    if (!r.items.empty()) detail::write_boxplot(out, "fused", metrics::kTripleKeys, r.items);
    if (!r.genir_items.empty()) detail::write_boxplot(out, "genir", metrics::kPairKeys, r.genir_items);
  }
  nlohmann::json report = {
      {"name", r.name},
      {"manifest", job.manifest.generic_string()},
      {"split", job.split},
      {"source", job.checkpoint ? "checkpoint" : "fused_dir"},
      {"source_path", (job.checkpoint ? *job.checkpoint : *job.fused_dir).generic_string()},
      {"items", r.items.size()},
      {"aggregate", detail::row_json(r.aggregate, metrics::kTripleKeys)}};
  nlohmann::json ex = nlohmann::json::array();
  for (const auto& e : r.excluded) ex.push_back({{"id", e.id}, {"reason", e.reason}});
  report["excluded"] = ex;
  if (r.genir_aggregate) report["genir_aggregate"] = detail::row_json(*r.genir_aggregate, metrics::kPairKeys);
  checkpoint::write_json(dir / "report.json", report);
}

// Scores every manifest item; items that cannot be scored at all (missing or
// unreadable files, size mismatches) are logged and left out of the
// aggregate. Checkpoint jobs also score generated IR against real IR.
inline EvalResult run_eval(const EvalJob& job) {
  job.validate();
  const auto manifest = data::read_manifest(job.manifest);
  const auto entries = manifest.select(job.split);
  EvalResult r;
  r.name = job.name;

  std::optional<Network<float>> g1, g2;
  if (job.checkpoint) {
    if (!fs::is_directory(*job.checkpoint)) throw IoError("checkpoint not found: " + job.checkpoint->string());
    g1.emplace(checkpoint::load_network<float>(*job.checkpoint / "g1"));
    g2.emplace(checkpoint::load_network<float>(*job.checkpoint / "g2"));
  } else if (!fs::is_directory(*job.fused_dir)) {
    throw IoError("fused image directory not found: " + job.fused_dir->string());
  }

  for (const auto& entry : entries) {
    try {
      ImagePair pair = data::load_pair(entry);
      if (job.checkpoint) {
        if (job.image_size > 0) pair = data::resize_pair(pair, job.image_size, job.image_size);
        const Image vis = to_model_domain(pair.visible);
        const Image gen = generate_ir(*g1, vis);
        const Image fused = fuse(*g2, vis, gen);
        r.items.push_back(metrics::evaluate_triple(pair.visible, pair.infrared, fused, job.params, entry.id));
        r.genir_items.push_back(metrics::evaluate_pair(pair.infrared, gen, job.params, entry.id));
      } else {
        const auto path = find_fused(*job.fused_dir, entry.id);
        if (!path) throw IoError("no fused image for '" + entry.id + "' in " + job.fused_dir->string());
        const Image fused = io::read_image(*path);
        if (fused.height() != pair.visible.height() || fused.width() != pair.visible.width())
          throw DataError("fused image for '" + entry.id + "' is not registered with its sources");
        r.items.push_back(metrics::evaluate_triple(pair.visible, pair.infrared, fused, job.params, entry.id));
      }
    } catch (const std::exception& e) {
      log::warn("evaluation '" + job.name + "': excluded " + entry.id + ": " + e.what());
      r.excluded.push_back({entry.id, e.what()});
    }
  }
  r.aggregate = metrics::aggregate(r.items);
  if (job.checkpoint) r.genir_aggregate = metrics::aggregate(r.genir_items);
  if (!r.excluded.empty())
    log::warn("evaluation '" + job.name + "': " + std::to_string(r.excluded.size()) + " of " +
              std::to_string(entries.size()) + " items excluded");
  if (!job.output_dir.empty()) write_outputs(r, job.output_dir, job);
  return r;
}

// Seven metric rows by one column per job.
struct Comparison {
  std::vector<std::string> columns;
  std::vector<std::array<std::optional<double>, 7>> cells;  // cells[job][metric]

  std::string csv() const {
    std::ostringstream os;
    os << "metric";
    for (const auto& c : columns) os << ',' << c;
    os << '\n';
    for (std::size_t k = 0; k < 7; ++k) {
      os << metrics::kTripleLabels[k];
      for (const auto& col : cells) os << ',' << metrics::format_value(col[k]);
      os << '\n';
    }
    return os.str();
  }

  // Fixed-width plain-text table with four decimals.
  std::string text() const {
    auto cell = [](const std::optional<double>& v) {
      if (!v) return std::string("error");
      if (std::isinf(*v)) return std::string(*v > 0 ? "inf" : "-inf");
      std::ostringstream os;
      os << std::fixed << std::setprecision(4) << *v;
      return os.str();
    };
    std::size_t first = 6;
    for (const char* l : metrics::kTripleLabels) first = std::max(first, std::string(l).size());
    std::vector<std::size_t> width;
    for (std::size_t j = 0; j < columns.size(); ++j) {
      std::size_t w = columns[j].size();
      for (std::size_t k = 0; k < 7; ++k) w = std::max(w, cell(cells[j][k]).size());
      width.push_back(w);
    }
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(first)) << "Metric";
    for (std::size_t j = 0; j < columns.size(); ++j)
      os << "  " << std::right << std::setw(static_cast<int>(width[j])) << columns[j];
    os << '\n';
    for (std::size_t k = 0; k < 7; ++k) {
      os << std::left << std::setw(static_cast<int>(first)) << metrics::kTripleLabels[k];
      for (std::size_t j = 0; j < columns.size(); ++j)
        os << "  " << std::right << std::setw(static_cast<int>(width[j])) << cell(cells[j][k]);
      os << '\n';
    }
    return os.str();
  }
};

inline Comparison compare_results(const std::vector<EvalResult>& results) {
  Comparison c;
  for (const auto& r : results) {
    c.columns.push_back(r.name);
    c.cells.push_back(r.aggregate.values);
  }
  return c;
}

// Runs every job (each writing into <output_dir>/<job name> unless it has its
// own output_dir) and writes comparison.csv / comparison.txt.
inline Comparison compare_runs(std::vector<EvalJob> jobs, const fs::path& output_dir = {}) {
  if (jobs.empty()) throw ValidationError("compare_runs needs at least one job");
  auto canonical = [](const fs::path& p) {
    std::error_code ec;
    auto c = fs::weakly_canonical(p, ec);
    return ec ? p : c;
  };
  const fs::path manifest = canonical(jobs.front().manifest);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& job = jobs[i];
    if (canonical(job.manifest) != manifest || job.split != jobs.front().split)
      throw ValidationError("manifest mismatch: job '" + job.name + "' uses " + job.manifest.string() + " (" +
                            job.split + "), expected " + jobs.front().manifest.string() + " (" +
                            jobs.front().split + ")");
    if (job.name.empty()) job.name = "job" + std::to_string(i + 1);
    if (std::find(names.begin(), names.end(), job.name) != names.end())
      throw ValidationError("duplicate job name '" + job.name + "'");
    names.push_back(job.name);
    if (job.output_dir.empty() && !output_dir.empty()) job.output_dir = output_dir / job.name;
  }
  std::vector<EvalResult> results;
  for (const auto& job : jobs) results.push_back(run_eval(job));
  Comparison c = compare_results(results);
  if (!output_dir.empty()) {
    fs::create_directories(output_dir);
    std::ofstream(output_dir / "comparison.csv") << c.csv();
    std::ofstream(output_dir / "comparison.txt") << c.text();
  }
  return c;
}

// Reads a per_item.csv / aggregate.csv back into rows.
inline std::vector<metrics::MetricRecord> read_rows(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != metrics::csv_header(metrics::kTripleKeys)) throw DataError(path.string() + ": unexpected header");
  std::vector<metrics::MetricRecord> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    metrics::MetricRecord r;
    std::getline(ss, r.id, ',');
    for (std::size_t k = 0; k < 7; ++k) {
      std::string cell;
      if (!std::getline(ss, cell, ',')) throw DataError(path.string() + ": short row for '" + r.id + "'");
      r.values[k] = metrics::parse_value(cell);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace firegan::evaluation
