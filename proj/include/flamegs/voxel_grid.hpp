#pragma once

#include "flamegs/camera.hpp"
#include "flamegs/common.hpp"

#include <array>
#include <cstddef>
#include <functional>
#include <optional>

namespace flamegs {

/// Axis-aligned box split into dims[0] x dims[1] x dims[2] voxels. Linear
/// voxel indices are x-fastest.
struct GridGeometry {
  std::array<int, 3> dims{50, 50, 50};
  Vec3 bbox_min = Vec3::Constant(-0.5);
  Vec3 bbox_max = Vec3::Constant(0.5);

  void validate() const;
  [[nodiscard]] std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  [[nodiscard]] Vec3 pitch() const {
    return (bbox_max - bbox_min).cwiseQuotient(Vec3(dims[0], dims[1], dims[2]));
  }
  [[nodiscard]] std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  [[nodiscard]] std::array<int, 3> coords(std::size_t index) const;
  [[nodiscard]] Vec3 voxel_center(std::size_t index) const;
  [[nodiscard]] double diagonal() const { return (bbox_max - bbox_min).norm(); }
};

/// Cube centered at the centroid of the camera optical centers with side
/// `side_factor` times the mean camera-to-centroid distance.
GridGeometry default_grid_for_rig(const CameraRig& rig, int resolution, double side_factor = 0.6);

/// Parametric [t_enter, t_exit] of the ray inside the box (t >= 0), or
/// nullopt when the ray misses.
std::optional<std::pair<double, double>> clip_ray_to_box(const Ray& ray, const Vec3& box_min,
                                                         const Vec3& box_max);

/// Amanatides-Woo traversal: visit(index, t_enter, t_exit) for every voxel
/// the ray passes through, in order along the ray.
void traverse_grid(const Ray& ray, const GridGeometry& grid,
                   const std::function<void(std::size_t, double, double)>& visit);

}  // namespace flamegs
