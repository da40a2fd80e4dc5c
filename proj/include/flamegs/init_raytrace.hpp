#pragma once

#include "flamegs/camera.hpp"
#include "flamegs/gaussian_model.hpp"
#include "flamegs/voxel_grid.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace flamegs {

struct InitConfig {
  double intensity_threshold = 0.05;
  /// Views that must hit a voxel for it to count as occupied; 0 means all views.
  int min_view_agreement = 0;
  int pixel_stride = 4;
  std::uint64_t seed = 0;
  int grid_resolution = 50;
  double initial_opacity = 0.1;
  double initial_luminance = 0.5;
};

/// No voxel reached the required view agreement.
class EmptyHullError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OccupancyGrid {
  GridGeometry geometry;
  std::vector<std::uint64_t> hit_mask;  ///< bit v set if view v's rays pierce the voxel
  int view_count = 0;
  int min_view_agreement = 0;

  [[nodiscard]] int hit_count(std::size_t voxel) const;
  [[nodiscard]] bool occupied(std::size_t voxel) const {
    return hit_count(voxel) >= min_view_agreement;
  }
  [[nodiscard]] std::vector<std::size_t> occupied_voxels() const;
};

struct PixelCoord {
  int x = 0;
  int y = 0;
  bool operator==(const PixelCoord&) const = default;
};

/// Pixels on the stride lattice whose value exceeds `threshold`.
std::vector<PixelCoord> threshold_mask(const CameraView& view, double threshold, int stride = 1);

/// Visual-hull carving on a fixed grid. Throws EmptyHullError if no voxel
/// reaches the agreement count (including agreement > number of views).
OccupancyGrid carve_grid(const std::vector<CameraView>& views, const GridGeometry& geometry,
                         const InitConfig& config, int threads = 1);

/// One Gaussian per occupied voxel (jittered center, isotropic nearest-
/// neighbour scale, identity rotation).
GaussianSet seed_gaussians(const OccupancyGrid& grid, const InitConfig& config, int sh_degree = 0);

/// Mean distance from each point to its (up to) 3 nearest neighbours using a
/// voxel-bucket search. Falls back to `fallback` when there are < 4 points.
std::vector<double> mean_neighbor_distance(const std::vector<Vec3>& points,
                                           const GridGeometry& buckets, double fallback);

// FLOC debug dump: "FLOC", u32 dims x3, f32 bbox (min xyz, max xyz), then one
// saturating u8 hit count per voxel, x-fastest.
void write_floc(const std::filesystem::path& path, const OccupancyGrid& grid);

}  // namespace flamegs
