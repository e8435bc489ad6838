#pragma once

// Run directories, metrics CSV files, result tables and scatter plots.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bms/mixture.hpp"
#include "bms/trainer.hpp"

namespace bms::harness {

namespace fs = std::filesystem;

inline constexpr const char* kMetricsHeader =
    "iter,loss_rg,loss_di,loss_dl,modes,hq_pct,mismatch_count,ivom";

/// Shortest decimal that reads back to the same double.
std::string format_double(double v);

/// One metrics.csv line (no newline); absent values are empty fields.
std::string metrics_row(const train::MetricsRecord& rec);
/// Inverse of metrics_row.
train::MetricsRecord parse_metrics_row(const std::string& line);
/// Rows of a metrics.csv file; the header must match kMetricsHeader exactly.
std::vector<train::MetricsRecord> read_metrics_csv(const fs::path& path);

/// $BMS_RUNS_DIR, or ./runs when unset.
fs::path runs_root();

struct RunPaths {
  fs::path dir;
  fs::path manifest;
  fs::path metrics;
  fs::path checkpoint;
  fs::path samples_svg;
};
RunPaths run_paths(const fs::path& dir);

/// <variant>_<data>_T<T>_seed<seed>_<hash prefix>
std::string run_name(const train::TrainConfig& cfg);

nlohmann::json manifest(const train::TrainConfig& cfg, const RunPaths& paths,
                        double wall_seconds);
/// The resolved configuration stored in a manifest.
train::TrainConfig read_manifest_config(const fs::path& manifest_path);

struct RunOutcome {
  RunPaths paths;
  std::vector<train::MetricsRecord> history;
  std::string config_hash;
};

/// Trains `cfg` into `dir`, writing metrics.csv as evaluations happen, the
/// final checkpoint, a sample scatter plot and the manifest. Progress lines
/// go to `log` when non-null.
RunOutcome train_run(const train::TrainConfig& cfg, const fs::path& dir, std::ostream* log);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t n = 0;
};
Stat summarize(const std::vector<double>& values);

struct TableRow {
  std::string group;  // variant / data / T
  std::size_t runs = 0;
  Stat modes;
  Stat hq_pct;
  std::optional<Stat> mismatch_count;
  std::optional<Stat> ivom;
};

/// Groups runs by configuration (seed excluded) and summarizes the final
/// metrics.csv row of each.
std::vector<TableRow> aggregate(const std::vector<fs::path>& run_dirs);
std::string format_table(const std::vector<TableRow>& rows);

struct Bounds {
  double x_min, x_max, y_min, y_max;
};

/// Plot frame: data bounds mapped affinely onto [margin, size - margin]
/// with y pointing up.
class PlotFrame {
 public:
  PlotFrame(Bounds data, double width = 640, double height = 640, double margin = 40);
  double px(double x) const;
  double py(double y) const;
  const Bounds& data() const { return data_; }
  double width() const { return width_; }
  double height() const { return height_; }
  double margin() const { return margin_; }

 private:
  Bounds data_;
  double width_, height_, margin_;
};

/// Smallest box holding the centers (padded by 4 sigma) and all points.
Bounds plot_bounds(const data::MixtureSpec& spec, const Tensor& samples, const Tensor* flagged);

/// SVG with axes, one `circle` per sample (and per flagged point, drawn in
/// red) and a cross at every mixture center.
std::string render_scatter_svg(const Tensor& samples, const data::MixtureSpec& spec,
                               const Tensor* flagged = nullptr);
void plot_scatter(const fs::path& path, const Tensor& samples, const data::MixtureSpec& spec,
                  const Tensor* flagged = nullptr);

}  // namespace bms::harness
