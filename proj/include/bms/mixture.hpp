#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "bms/rng.hpp"
#include "bms/tensor.hpp"

namespace bms::data {

using Point = std::array<double, 2>;

/// Uniform-weight isotropic Gaussian mixture in the plane.
struct MixtureSpec {
  std::string name;
  std::vector<Point> centers;
  double sigma = 0.05;

  /// At least one center, sigma > 0, and centers pairwise further apart than
  /// 6 sigma so that 3-sigma balls do not overlap.
  void validate() const;
  double min_center_distance() const;
};

/// side x side lattice with the given spacing, centered on the origin.
MixtureSpec grid_spec(std::size_t side = 5, double spacing = 2.0, double sigma = 0.05);

/// k centers evenly spaced on a circle, the first at angle 0.
MixtureSpec ring_spec(std::size_t k = 8, double radius = 2.0, double sigma = 0.05);

/// n x 2 draws: uniform mode choice, then isotropic Gaussian noise.
Tensor sample(const MixtureSpec& spec, std::size_t n, Rng& rng);

/// Mixture log-density at each row of an n x 2 tensor.
std::vector<double> log_density(const MixtureSpec& spec, const Tensor& points);

/// Index of the nearest center and the distance to it.
struct Assignment {
  std::size_t mode;
  double distance;
};
Assignment nearest_center(const MixtureSpec& spec, double x, double y);

/// `x,y` header followed by one row per point.
void write_points_csv(const std::filesystem::path& path, const Tensor& points);
Tensor read_points_csv(const std::filesystem::path& path);

}  // namespace bms::data
