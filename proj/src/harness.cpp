#include "bms/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "bms/checkpoint.hpp"
#include "bms/config.hpp"

namespace bms::harness {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("bad number '" + s + "' in metrics.csv");
  }
  return v;
}

std::size_t parse_count(const std::string& s) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("bad integer '" + s + "' in metrics.csv");
  }
  return v;
}

std::string optional_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

std::optional<double> parse_optional(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_double(s);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string mean_std(const Stat& s, int digits) {
  return fixed(s.mean, digits) + " ± " + fixed(s.std, digits);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string metrics_row(const train::MetricsRecord& r) {
  std::string line = std::to_string(r.iteration);
  line += ',' + optional_field(r.loss_rg);
  line += ',' + optional_field(r.loss_di);
  line += ',' + optional_field(r.loss_dl);
  line += ',' + std::to_string(r.modes_captured);
  line += ',' + format_double(r.hq_percent);
  line += ',' + (r.mismatch_count ? std::to_string(*r.mismatch_count) : std::string());
  line += ',' + optional_field(r.ivom);
  return line;
}

train::MetricsRecord parse_metrics_row(const std::string& line) {
  const auto f = split_csv(line);
  if (f.size() != 8) throw std::runtime_error("metrics.csv row has " + std::to_string(f.size()) +
                                              " fields, expected 8: '" + line + "'");
  train::MetricsRecord r;
  r.iteration = parse_count(f[0]);
  r.loss_rg = parse_optional(f[1]);
  r.loss_di = parse_optional(f[2]);
  r.loss_dl = parse_optional(f[3]);
  r.modes_captured = parse_count(f[4]);
  r.hq_percent = parse_double(f[5]);
  if (!f[6].empty()) r.mismatch_count = parse_count(f[6]);
  r.ivom = parse_optional(f[7]);
  return r;
}

std::vector<train::MetricsRecord> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw std::runtime_error("'" + path.string() + "' does not start with the metrics header");
  }
  std::vector<train::MetricsRecord> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_metrics_row(line));
  }
  return rows;
}

fs::path runs_root() {
  const char* env = std::getenv("BMS_RUNS_DIR");
  return env && *env ? fs::path(env) : fs::path("runs");
}

RunPaths run_paths(const fs::path& dir) {
  return {dir, dir / "manifest.json", dir / "metrics.csv", dir / "checkpoint.bms",
          dir / "samples.svg"};
}

std::string run_name(const train::TrainConfig& cfg) {
  const std::string hash = config::content_hash(config::to_json(cfg));
  return std::string(objectives::to_string(cfg.objective.variant)) + "_" + cfg.data.kind + "_T" +
         std::to_string(cfg.objective.samples) + "_seed" + std::to_string(cfg.seed) + "_" +
         hash.substr(0, 8);
}

nlohmann::json manifest(const train::TrainConfig& cfg, const RunPaths& paths,
                        double wall_seconds) {
  const nlohmann::json resolved = config::to_json(cfg);
  const data::MixtureSpec spec = cfg.data.mixture();
  nlohmann::json centers = nlohmann::json::array();
  for (const auto& c : spec.centers) centers.push_back({c[0], c[1]});
  return {
      {"config", resolved},
      {"config_hash", config::content_hash(resolved)},
      {"dataset", {{"name", spec.name}, {"sigma", spec.sigma}, {"centers", centers}}},
      {"artifacts",
       {{"metrics", paths.metrics.filename().string()},
        {"checkpoint", paths.checkpoint.filename().string()},
        {"samples_plot", paths.samples_svg.filename().string()}}},
      {"wall_clock_seconds", wall_seconds},
  };
}

train::TrainConfig read_manifest_config(const fs::path& manifest_path) {
  if (!fs::is_regular_file(manifest_path)) {
    throw std::runtime_error("no run manifest at '" + manifest_path.string() + "'");
  }
  const nlohmann::json m = config::load_file(manifest_path);
  if (!m.contains("config")) {
    throw config::ConfigError("manifest '" + manifest_path.string() + "' has no config section");
  }
  return config::from_json(m.at("config"));
}

RunOutcome train_run(const train::TrainConfig& cfg, const fs::path& dir, std::ostream* log) {
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  RunOutcome outcome;
  outcome.paths = run_paths(dir);
  outcome.config_hash = config::content_hash(config::to_json(cfg));
  fs::create_directories(dir);

  auto write_manifest = [&](const std::string& status) {
    nlohmann::json m = manifest(cfg, outcome.paths, elapsed());
    m["status"] = status;
    write_text(outcome.paths.manifest, m.dump(2) + "\n");
  };
  write_manifest("running");

  std::ofstream csv(outcome.paths.metrics, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write '" + outcome.paths.metrics.string() + "'");
  csv << kMetricsHeader << '\n';

  train::TrainHooks hooks;
  hooks.on_eval = [&](const train::MetricsRecord& rec) {
    csv << metrics_row(rec) << '\n';
    csv.flush();
    if (log) {
      *log << "[" << dir.filename().string() << "] iter " << rec.iteration << " modes "
           << rec.modes_captured << " hq " << fixed(rec.hq_percent, 2) << "% ("
           << fixed(elapsed(), 0) << "s)\n";
      log->flush();
    }
  };
  hooks.on_checkpoint = [&](const train::Trainer& t) {
    io::save_checkpoint(outcome.paths.checkpoint, t.checkpoint());
  };

  train::Trainer trainer(cfg);
  try {
    outcome.history = train::run(trainer, hooks);
  } catch (const train::TrainingDiverged&) {
    io::save_checkpoint(outcome.paths.checkpoint, trainer.checkpoint());
    write_manifest("diverged");
    throw;
  }
  io::save_checkpoint(outcome.paths.checkpoint, trainer.checkpoint());

  Rng plot_rng(Rng::derive(cfg.seed, 0xB107));
  const Tensor samples =
      train::sample_model(trainer.bundle(), std::min<std::size_t>(cfg.eval.samples, 2000), plot_rng);
  plot_scatter(outcome.paths.samples_svg, samples, trainer.mixture());
  write_manifest("completed");
  return outcome;
}

Stat summarize(const std::vector<double>& values) {
  Stat s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

std::vector<TableRow> aggregate(const std::vector<fs::path>& run_dirs) {
  struct Group {
    std::string key;
    std::vector<train::MetricsRecord> finals;
  };
  std::vector<Group> groups;
  for (const fs::path& dir : run_dirs) {
    const RunPaths paths = run_paths(dir);
    const train::TrainConfig cfg = read_manifest_config(paths.manifest);
    const auto rows = read_metrics_csv(paths.metrics);
    if (rows.empty()) throw std::runtime_error("'" + paths.metrics.string() + "' has no rows");
    const std::string key = std::string(objectives::to_string(cfg.objective.variant)) + " / " +
                            cfg.data.kind + " / T=" + std::to_string(cfg.objective.samples);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) { return g.key == key; });
    if (it == groups.end()) {
      groups.push_back({key, {}});
      it = groups.end() - 1;
    }
    it->finals.push_back(rows.back());
  }

  std::vector<TableRow> table;
  for (const Group& g : groups) {
    TableRow row;
    row.group = g.key;
    row.runs = g.finals.size();
    std::vector<double> modes, hq, mismatch, ivom;
    for (const auto& r : g.finals) {
      modes.push_back(static_cast<double>(r.modes_captured));
      hq.push_back(r.hq_percent);
      if (r.mismatch_count) mismatch.push_back(static_cast<double>(*r.mismatch_count));
      if (r.ivom) ivom.push_back(*r.ivom);
    }
    row.modes = summarize(modes);
    row.hq_pct = summarize(hq);
    if (mismatch.size() == g.finals.size()) row.mismatch_count = summarize(mismatch);
    if (ivom.size() == g.finals.size()) row.ivom = summarize(ivom);
    table.push_back(row);
  }
  return table;
}

std::string format_table(const std::vector<TableRow>& rows) {
  std::ostringstream out;
  out << "| config | runs | modes | HQ% | mismatch | IvOM |\n";
  out << "|---|---|---|---|---|---|\n";
  for (const TableRow& r : rows) {
    out << "| " << r.group << " | " << r.runs << " | " << mean_std(r.modes, 2) << " | "
        << mean_std(r.hq_pct, 2) << " | "
        << (r.mismatch_count ? mean_std(*r.mismatch_count, 2) : std::string("-")) << " | "
        << (r.ivom ? mean_std(*r.ivom, 6) : std::string("-")) << " |\n";
  }
  return out.str();
}

PlotFrame::PlotFrame(Bounds data, double width, double height, double margin)
    : data_(data), width_(width), height_(height), margin_(margin) {
  if (!(data_.x_max > data_.x_min)) {
    data_.x_min -= 1.0;
    data_.x_max += 1.0;
  }
  if (!(data_.y_max > data_.y_min)) {
    data_.y_min -= 1.0;
    data_.y_max += 1.0;
  }
}

double PlotFrame::px(double x) const {
  return margin_ + (x - data_.x_min) / (data_.x_max - data_.x_min) * (width_ - 2 * margin_);
}

double PlotFrame::py(double y) const {
  return height_ - margin_ -
         (y - data_.y_min) / (data_.y_max - data_.y_min) * (height_ - 2 * margin_);
}

Bounds plot_bounds(const data::MixtureSpec& spec, const Tensor& samples, const Tensor* flagged) {
  Bounds b{HUGE_VAL, -HUGE_VAL, HUGE_VAL, -HUGE_VAL};
  auto include = [&](double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    b.x_min = std::min(b.x_min, x);
    b.x_max = std::max(b.x_max, x);
    b.y_min = std::min(b.y_min, y);
    b.y_max = std::max(b.y_max, y);
  };
  const double pad = 4.0 * spec.sigma;
  for (const auto& c : spec.centers) {
    include(c[0] - pad, c[1] - pad);
    include(c[0] + pad, c[1] + pad);
  }
  for (const Tensor* t : {&samples, flagged}) {
    if (!t) continue;
    for (std::size_t i = 0; i < t->rows(); ++i) include(t->at(i, 0), t->at(i, 1));
  }
  if (b.x_min > b.x_max) b = {-1.0, 1.0, -1.0, 1.0};
  return b;
}

std::string render_scatter_svg(const Tensor& samples, const data::MixtureSpec& spec,
                               const Tensor* flagged) {
  for (const Tensor* t : {&samples, flagged}) {
    if (t && t->size() && (t->ndim() != 2 || t->cols() != 2)) {
      throw ShapeError("render_scatter_svg: points must be [n x 2], got " + to_string(t->shape()));
    }
  }
  const PlotFrame f(plot_bounds(spec, samples, flagged));
  const double left = f.margin(), right = f.width() - f.margin();
  const double top = f.margin(), bottom = f.height() - f.margin();
  const auto num = [](double v) { return fixed(v, 2); };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(f.width()) << "\" height=\""
      << num(f.height()) << "\" viewBox=\"0 0 " << num(f.width()) << ' ' << num(f.height())
      << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << num(f.width()) << "\" height=\"" << num(f.height())
      << "\" fill=\"white\"/>\n";
  svg << "<g class=\"axes\" stroke=\"#444\" stroke-width=\"1\">\n"
      << "<line x1=\"" << num(left) << "\" y1=\"" << num(bottom) << "\" x2=\"" << num(right)
      << "\" y2=\"" << num(bottom) << "\"/>\n"
      << "<line x1=\"" << num(left) << "\" y1=\"" << num(bottom) << "\" x2=\"" << num(left)
      << "\" y2=\"" << num(top) << "\"/>\n"
      << "</g>\n";
  svg << "<g class=\"ticks\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#444\">\n"
      << "<text x=\"" << num(left) << "\" y=\"" << num(bottom + 16) << "\">"
      << fixed(f.data().x_min, 2) << "</text>\n"
      << "<text x=\"" << num(right) << "\" y=\"" << num(bottom + 16)
      << "\" text-anchor=\"end\">" << fixed(f.data().x_max, 2) << "</text>\n"
      << "<text x=\"" << num(left - 4) << "\" y=\"" << num(bottom)
      << "\" text-anchor=\"end\">" << fixed(f.data().y_min, 2) << "</text>\n"
      << "<text x=\"" << num(left - 4) << "\" y=\"" << num(top + 10)
      << "\" text-anchor=\"end\">" << fixed(f.data().y_max, 2) << "</text>\n"
      << "</g>\n";

  svg << "<g class=\"samples\" fill=\"#1f77b4\" fill-opacity=\"0.5\">\n";
  for (std::size_t i = 0; i < samples.rows() && samples.size(); ++i) {
    svg << "<circle cx=\"" << num(f.px(samples.at(i, 0))) << "\" cy=\""
        << num(f.py(samples.at(i, 1))) << "\" r=\"1.5\"/>\n";
  }
  svg << "</g>\n";
  if (flagged) {
    svg << "<g class=\"flagged\" fill=\"#d62728\" stroke=\"black\" stroke-width=\"0.5\">\n";
    for (std::size_t i = 0; i < flagged->rows() && flagged->size(); ++i) {
      svg << "<circle cx=\"" << num(f.px(flagged->at(i, 0))) << "\" cy=\""
          << num(f.py(flagged->at(i, 1))) << "\" r=\"3\"/>\n";
    }
    svg << "</g>\n";
  }
  svg << "<g class=\"centers\" stroke=\"black\" stroke-width=\"1.5\">\n";
  for (const auto& c : spec.centers) {
    const double x = f.px(c[0]), y = f.py(c[1]);
    svg << "<path d=\"M" << num(x - 5) << ' ' << num(y) << " L" << num(x + 5) << ' ' << num(y)
        << " M" << num(x) << ' ' << num(y - 5) << " L" << num(x) << ' ' << num(y + 5)
        << "\"/>\n";
  }
  svg << "</g>\n</svg>\n";
  return svg.str();
}

void plot_scatter(const fs::path& path, const Tensor& samples, const data::MixtureSpec& spec,
                  const Tensor* flagged) {
  write_text(path, render_scatter_svg(samples, spec, flagged));
}

}  // namespace bms::harness
