#include "bms/mixture.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace bms::data {

void MixtureSpec::validate() const {
  if (centers.empty()) throw std::invalid_argument("mixture needs at least one center");
  if (!(sigma > 0)) throw std::invalid_argument("mixture sigma must be positive");
  if (centers.size() > 1 && !(min_center_distance() > 6.0 * sigma)) {
    throw std::invalid_argument("mixture centers closer than 6 sigma");
  }
}

double MixtureSpec::min_center_distance() const {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = i + 1; j < centers.size(); ++j) {
      best = std::min(best, std::hypot(centers[i][0] - centers[j][0],
                                       centers[i][1] - centers[j][1]));
    }
  }
  return best;
}

MixtureSpec grid_spec(std::size_t side, double spacing, double sigma) {
  MixtureSpec spec{"grid", {}, sigma};
  const double offset = spacing * (static_cast<double>(side) - 1.0) / 2.0;
  for (std::size_t i = 0; i < side; ++i) {
    for (std::size_t j = 0; j < side; ++j) {
      spec.centers.push_back({spacing * static_cast<double>(i) - offset,
                              spacing * static_cast<double>(j) - offset});
    }
  }
  spec.validate();
  return spec;
}

MixtureSpec ring_spec(std::size_t k, double radius, double sigma) {
  MixtureSpec spec{"ring", {}, sigma};
  for (std::size_t i = 0; i < k; ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(k);
    double cx = radius * std::cos(angle);
    double cy = radius * std::sin(angle);
    // exact zeros for the axis-aligned centers
    if (std::abs(cx) < 1e-15 * radius) cx = 0.0;
    if (std::abs(cy) < 1e-15 * radius) cy = 0.0;
    spec.centers.push_back({cx, cy});
  }
  spec.validate();
  return spec;
}

Tensor sample(const MixtureSpec& spec, std::size_t n, Rng& rng) {
  Tensor out({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const Point& c = spec.centers[rng.index(spec.centers.size())];
    out[2 * i] = c[0] + spec.sigma * rng.normal();
    out[2 * i + 1] = c[1] + spec.sigma * rng.normal();
  }
  return out;
}

std::vector<double> log_density(const MixtureSpec& spec, const Tensor& points) {
  const double k = static_cast<double>(spec.centers.size());
  const double var = spec.sigma * spec.sigma;
  const double log_norm = -std::log(k) - std::log(2.0 * std::numbers::pi * var);
  std::vector<double> out(points.rows());
  std::vector<double> terms(spec.centers.size());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const double x = points[2 * i];
    const double y = points[2 * i + 1];
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < spec.centers.size(); ++c) {
      const double dx = x - spec.centers[c][0];
      const double dy = y - spec.centers[c][1];
      terms[c] = -(dx * dx + dy * dy) / (2.0 * var);
      peak = std::max(peak, terms[c]);
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - peak);
    out[i] = log_norm + peak + std::log(s);
  }
  return out;
}

Assignment nearest_center(const MixtureSpec& spec, double x, double y) {
  Assignment best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t c = 0; c < spec.centers.size(); ++c) {
    const double d = std::hypot(x - spec.centers[c][0], y - spec.centers[c][1]);
    if (d < best.distance) best = {c, d};
  }
  return best;
}

void write_points_csv(const std::filesystem::path& path, const Tensor& points) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x,y\n";
  char buf[64];
  for (std::size_t i = 0; i < points.rows(); ++i) {
    for (int c = 0; c < 2; ++c) {
      auto res = std::to_chars(buf, buf + sizeof buf, points[2 * i + c]);
      out.write(buf, res.ptr - buf);
      out << (c == 0 ? ',' : '\n');
    }
  }
}

Tensor read_points_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "x,y") {
    throw std::runtime_error(path.string() + ": expected header 'x,y'");
  }
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    double x = 0;
    double y = 0;
    const char* end = line.data() + line.size();
    if (comma == std::string::npos ||
        std::from_chars(line.data(), line.data() + comma, x).ec != std::errc() ||
        std::from_chars(line.data() + comma + 1, end, y).ec != std::errc()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": malformed row");
    }
    values.push_back(x);
    values.push_back(y);
  }
  const std::size_t n = values.size() / 2;
  return Tensor({n, 2}, std::move(values));
}

}  // namespace bms::data
