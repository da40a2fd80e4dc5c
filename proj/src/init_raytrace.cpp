#include "flamegs/init_raytrace.hpp"

#include "binary_io.hpp"
#include "flamegs/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace flamegs {

int OccupancyGrid::hit_count(std::size_t voxel) const { return std::popcount(hit_mask[voxel]); }

std::vector<std::size_t> OccupancyGrid::occupied_voxels() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < hit_mask.size(); ++i) {
    if (occupied(i)) out.push_back(i);
  }
  return out;
}

std::vector<PixelCoord> threshold_mask(const CameraView& view, double threshold, int stride) {
  if (stride < 1) throw std::invalid_argument("pixel stride must be >= 1");
  std::vector<PixelCoord> out;
  const Image& img = view.image;
  for (int y = 0; y < img.height; y += stride) {
    for (int x = 0; x < img.width; x += stride) {
      if (img(x, y) > threshold) out.push_back({x, y});
    }
  }
  return out;
}

OccupancyGrid carve_grid(const std::vector<CameraView>& views, const GridGeometry& geometry,
                         const InitConfig& config, int threads) {
  geometry.validate();
  if (*std::min_element(geometry.dims.begin(), geometry.dims.end()) < 2) {
    throw InvalidParameter("occupancy grid needs at least 2 voxels per axis");
  }
  if (views.size() < 2) throw std::invalid_argument("carving needs at least two views");
  if (views.size() > 64) throw std::invalid_argument("carving supports at most 64 views");
  const int agreement =
      config.min_view_agreement > 0 ? config.min_view_agreement : static_cast<int>(views.size());

  OccupancyGrid grid;
  grid.geometry = geometry;
  grid.view_count = static_cast<int>(views.size());
  grid.min_view_agreement = agreement;
  grid.hit_mask.assign(geometry.voxel_count(), 0);

  // Per-view masks, unioned afterwards so the result is schedule independent.
  std::vector<std::vector<std::uint8_t>> per_view(views.size());
  parallel_for(views.size(), threads, [&](std::size_t v) {
    auto& mask = per_view[v];
    mask.assign(geometry.voxel_count(), 0);
    for (const PixelCoord& px : threshold_mask(views[v], config.intensity_threshold,
                                               config.pixel_stride)) {
      const Ray ray = pixel_ray(views[v], Vec2(px.x, px.y));
      traverse_grid(ray, geometry, [&](std::size_t idx, double, double) { mask[idx] = 1; });
    }
  });
  for (std::size_t v = 0; v < views.size(); ++v) {
    const std::uint64_t bit = std::uint64_t{1} << v;
    for (std::size_t i = 0; i < grid.hit_mask.size(); ++i) {
      if (per_view[v][i]) grid.hit_mask[i] |= bit;
    }
  }

  bool any = false;
  if (agreement <= grid.view_count) {
    for (std::size_t i = 0; i < grid.hit_mask.size() && !any; ++i) any = grid.occupied(i);
  }
  if (!any) {
    std::ostringstream msg;
    msg << "visual hull is empty (threshold tau=" << config.intensity_threshold
        << ", agreement K=" << agreement << " of " << views.size() << " views)";
    throw EmptyHullError(msg.str());
  }
  return grid;
}

std::vector<double> mean_neighbor_distance(const std::vector<Vec3>& points,
                                           const GridGeometry& buckets, double fallback) {
  const std::size_t n = points.size();
  std::vector<double> out(n, fallback);
  if (n < 4) return out;

  const Vec3 pitch = buckets.pitch();
  auto cell_of = [&](const Vec3& p) {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a) {
      c[a] = std::clamp(static_cast<int>(std::floor((p[a] - buckets.bbox_min[a]) / pitch[a])), 0,
                        buckets.dims[a] - 1);
    }
    return c;
  };
  std::vector<std::vector<std::uint32_t>> bins(buckets.voxel_count());
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto c = cell_of(points[i]);
    bins[buckets.index(c[0], c[1], c[2])].push_back(i);
  }
  const double min_pitch = pitch.minCoeff();
  const int max_ring = *std::max_element(buckets.dims.begin(), buckets.dims.end());

  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cell_of(points[i]);
    std::array<double, 3> best{std::numeric_limits<double>::infinity(),
                               std::numeric_limits<double>::infinity(),
                               std::numeric_limits<double>::infinity()};
    for (int ring = 0; ring <= max_ring; ++ring) {
      // Points outside the searched cube are at least this far away.
      if (ring > 0 && best[2] <= (ring - 1) * min_pitch) break;
      for (int dz = -ring; dz <= ring; ++dz) {
        for (int dy = -ring; dy <= ring; ++dy) {
          for (int dx = -ring; dx <= ring; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
            const int x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
            if (x < 0 || y < 0 || z < 0 || x >= buckets.dims[0] || y >= buckets.dims[1] ||
                z >= buckets.dims[2]) {
              continue;
            }
            for (std::uint32_t j : bins[buckets.index(x, y, z)]) {
              if (j == i) continue;
              const double d = (points[j] - points[i]).norm();
              if (d < best[2]) {
                best[2] = d;
                std::sort(best.begin(), best.end());
              }
            }
          }
        }
      }
    }
    out[i] = (best[0] + best[1] + best[2]) / 3.0;
  }
  return out;
}

GaussianSet seed_gaussians(const OccupancyGrid& grid, const InitConfig& config, int sh_degree) {
  const auto voxels = grid.occupied_voxels();
  if (voxels.empty()) throw EmptyHullError("no occupied voxels to seed");
  const Vec3 pitch = grid.geometry.pitch();

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> jitter(-0.25, 0.25);
  std::vector<Vec3> positions;
  positions.reserve(voxels.size());
  for (std::size_t v : voxels) {
    Vec3 offset(jitter(rng), jitter(rng), jitter(rng));
    positions.push_back(grid.geometry.voxel_center(v) + offset.cwiseProduct(pitch));
  }

  const double fallback = pitch.mean();
  const auto dist = mean_neighbor_distance(positions, grid.geometry, fallback);

  GaussianSet set(sh_degree);
  set.gaussians.reserve(positions.size());
  const int nsh = sh_coeff_count(sh_degree);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    Gaussian3D g;
    g.position = positions[i];
    g.log_scale = Vec3::Constant(std::log(std::max(dist[i], 1e-9)));
    g.rotation = Vec4(1, 0, 0, 0);
    g.opacity_logit = logit(config.initial_opacity);
    g.sh = ShCoeffs::Zero(nsh);
    g.sh[0] = config.initial_luminance / kShC0;
    set.gaussians.push_back(g);
  }
  return set;
}

void write_floc(const std::filesystem::path& path, const OccupancyGrid& grid) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  detail::write_magic(os, "FLOC");
  for (int d : grid.geometry.dims) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (int a = 0; a < 3; ++a) detail::write_le<float>(os, static_cast<float>(grid.geometry.bbox_min[a]));
  for (int a = 0; a < 3; ++a) detail::write_le<float>(os, static_cast<float>(grid.geometry.bbox_max[a]));
  std::string counts(grid.hit_mask.size(), '\0');
  for (std::size_t i = 0; i < grid.hit_mask.size(); ++i) {
    counts[i] = static_cast<char>(std::min(grid.hit_count(i), 255));
  }
  os.write(counts.data(), static_cast<std::streamsize>(counts.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace flamegs
