#include "flamegs/voxel_grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace flamegs {

void GridGeometry::validate() const {
  for (int d : dims) {
    if (d < 1) throw InvalidParameter("grid dimensions must be positive");
  }
  if (!bbox_min.allFinite() || !bbox_max.allFinite() ||
      (bbox_min.array() >= bbox_max.array()).any()) {
    throw InvalidParameter("grid bbox_min must be below bbox_max componentwise");
  }
}

std::array<int, 3> GridGeometry::coords(std::size_t index) const {
  const int x = static_cast<int>(index % dims[0]);
  const std::size_t rest = index / dims[0];
  const int y = static_cast<int>(rest % dims[1]);
  const int z = static_cast<int>(rest / dims[1]);
  return {x, y, z};
}

Vec3 GridGeometry::voxel_center(std::size_t index) const {
  const auto c = coords(index);
  return bbox_min + (Vec3(c[0], c[1], c[2]) + Vec3::Constant(0.5)).cwiseProduct(pitch());
}

GridGeometry default_grid_for_rig(const CameraRig& rig, int resolution, double side_factor) {
  if (rig.empty()) throw InvalidParameter("rig has no cameras");
  Vec3 centroid = Vec3::Zero();
  for (const auto& v : rig) centroid += v.pose.center();
  centroid /= static_cast<double>(rig.size());
  double mean_dist = 0.0;
  for (const auto& v : rig) mean_dist += (v.pose.center() - centroid).norm();
  mean_dist /= static_cast<double>(rig.size());
  if (!(mean_dist > 0)) throw InvalidParameter("cameras coincide; cannot size the grid");
  const double half = 0.5 * side_factor * mean_dist;
  GridGeometry g;
  g.dims = {resolution, resolution, resolution};
  g.bbox_min = centroid - Vec3::Constant(half);
  g.bbox_max = centroid + Vec3::Constant(half);
  g.validate();
  return g;
}

std::optional<std::pair<double, double>> clip_ray_to_box(const Ray& ray, const Vec3& box_min,
                                                         const Vec3& box_max) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a], d = ray.direction[a];
    if (d == 0.0) {
      if (o < box_min[a] || o > box_max[a]) return std::nullopt;
      continue;
    }
    double ta = (box_min[a] - o) / d;
    double tb = (box_max[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  if (!(t1 > t0)) return std::nullopt;
  return std::make_pair(t0, t1);
}

void traverse_grid(const Ray& ray, const GridGeometry& grid,
                   const std::function<void(std::size_t, double, double)>& visit) {
  const auto span = clip_ray_to_box(ray, grid.bbox_min, grid.bbox_max);
  if (!span) return;
  const auto [t_enter, t_exit] = *span;
  const Vec3 pitch = grid.pitch();

  // Start voxel from the midpoint-biased entry point to avoid face ambiguity.
  const double t_probe = t_enter + 1e-9 * (t_exit - t_enter);
  const Vec3 p = ray.origin + t_probe * ray.direction;
  std::array<int, 3> cell{}, step{};
  std::array<double, 3> t_max{}, t_delta{};
  for (int a = 0; a < 3; ++a) {
    int c = static_cast<int>(std::floor((p[a] - grid.bbox_min[a]) / pitch[a]));
    cell[a] = std::clamp(c, 0, grid.dims[a] - 1);
    const double d = ray.direction[a];
    if (d > 0) {
      step[a] = 1;
      t_max[a] = (grid.bbox_min[a] + (cell[a] + 1) * pitch[a] - ray.origin[a]) / d;
      t_delta[a] = pitch[a] / d;
    } else if (d < 0) {
      step[a] = -1;
      t_max[a] = (grid.bbox_min[a] + cell[a] * pitch[a] - ray.origin[a]) / d;
      t_delta[a] = -pitch[a] / d;
    } else {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }

  double t = t_enter;
  while (t < t_exit) {
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    const double t_next = std::min(t_max[axis], t_exit);
    if (t_next > t) visit(grid.index(cell[0], cell[1], cell[2]), t, t_next);
    t = t_next;
    if (t >= t_exit) break;
    cell[axis] += step[axis];
    if (cell[axis] < 0 || cell[axis] >= grid.dims[axis]) break;
    t_max[axis] += t_delta[axis];
  }
}

}  // namespace flamegs
