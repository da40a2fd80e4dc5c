#include "flamegs/art.hpp"

#include "binary_io.hpp"
#include "flamegs/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace flamegs {

double WeightRow::squared_norm() const {
  double s = 0.0;
  for (const auto& e : entries) s += e.length * e.length;
  return s;
}

WeightRow build_weight_row(const Ray& ray, const GridGeometry& grid, std::uint64_t ray_id) {
  WeightRow row;
  row.ray_id = ray_id;
  traverse_grid(ray, grid, [&](std::size_t idx, double t0, double t1) {
    const double len = t1 - t0;
    if (len > 0) row.entries.push_back({static_cast<std::uint32_t>(idx), len});
  });
  return row;
}

double forward_project(const VoxelGrid& grid, const WeightRow& row) {
  double acc = 0.0;
  for (const auto& e : row.entries) acc += e.length * grid.values[e.voxel];
  return acc;
}

std::vector<double> forward_project(const VoxelGrid& grid, const std::vector<WeightRow>& rows) {
  std::vector<double> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = forward_project(grid, rows[r]);
  return out;
}

std::vector<RaySample> lattice_rays(const std::vector<CameraView>& views, int pixel_stride) {
  if (pixel_stride < 1) throw std::invalid_argument("pixel stride must be >= 1");
  std::vector<RaySample> out;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto& k = views[v].intrinsics;
    for (int y = 0; y < k.height; y += pixel_stride) {
      for (int x = 0; x < k.width; x += pixel_stride) out.push_back({v, x, y});
    }
  }
  return out;
}

std::vector<WeightRow> build_weight_rows(const std::vector<CameraView>& views,
                                         const std::vector<RaySample>& rays,
                                         const GridGeometry& grid, int threads) {
  std::vector<WeightRow> rows(rays.size());
  parallel_for(rays.size(), threads, [&](std::size_t r) {
    const RaySample& s = rays[r];
    rows[r] = build_weight_row(pixel_ray(views[s.view], Vec2(s.x, s.y)), grid, r);
  });
  return rows;
}

std::vector<double> gather_measurements(const std::vector<CameraView>& views,
                                        const std::vector<RaySample>& rays) {
  std::vector<double> b(rays.size());
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const Image& img = views[rays[r].view].image;
    if (img.empty()) throw std::invalid_argument("view has no image to measure");
    b[r] = img(rays[r].x, rays[r].y);
  }
  return b;
}

namespace {

void kaczmarz_update(VoxelGrid& x, const WeightRow& row, double measurement, double relaxation) {
  const double norm2 = row.squared_norm();
  if (norm2 <= 0.0) return;
  const double residual = measurement - forward_project(x, row);
  const double scale = relaxation * residual / norm2;
  for (const auto& e : row.entries) {
    double& v = x.values[e.voxel];
    v = std::max(0.0, v + scale * e.length);
  }
}

void check_art_args(std::size_t rows, std::size_t measurements, double relaxation,
                    int iterations) {
  if (rows != measurements) {
    throw std::invalid_argument("measurement count does not match row count");
  }
  if (!(relaxation > 0.0 && relaxation < 2.0)) {
    throw std::invalid_argument("relaxation must lie in (0, 2)");
  }
  if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
}

}  // namespace

VoxelGrid art_reconstruct(const std::vector<WeightRow>& rows, const std::vector<double>& measurements,
                          const VoxelGrid& initial, double relaxation, int iterations,
                          const std::function<void(const VoxelGrid&, const ArtProgress&)>& on_sweep) {
  check_art_args(rows.size(), measurements.size(), relaxation, iterations);
  VoxelGrid x = initial;
  for (double& v : x.values) v = std::max(0.0, v);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      kaczmarz_update(x, rows[r], measurements[r], relaxation);
    }
    if (on_sweep) on_sweep(x, ArtProgress{it + 1});
  }
  return x;
}

VoxelGrid art_reconstruct_lazy(const std::vector<CameraView>& views,
                               const std::vector<RaySample>& rays,
                               const std::vector<double>& measurements, const VoxelGrid& initial,
                               double relaxation, int iterations,
                               const std::function<void(const VoxelGrid&, const ArtProgress&)>& on_sweep) {
  check_art_args(rays.size(), measurements.size(), relaxation, iterations);
  VoxelGrid x = initial;
  for (double& v : x.values) v = std::max(0.0, v);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t r = 0; r < rays.size(); ++r) {
      const RaySample& s = rays[r];
      const WeightRow row =
          build_weight_row(pixel_ray(views[s.view], Vec2(s.x, s.y)), x.geometry, r);
      kaczmarz_update(x, row, measurements[r], relaxation);
    }
    if (on_sweep) on_sweep(x, ArtProgress{it + 1});
  }
  return x;
}

Image project_volume(const VoxelGrid& grid, const CameraView& view, int threads) {
  const int w = view.intrinsics.width, h = view.intrinsics.height;
  Image out(w, h);
  parallel_for(static_cast<std::size_t>(h), threads, [&](std::size_t y) {
    for (int x = 0; x < w; ++x) {
      const Ray ray = pixel_ray(view, Vec2(x, static_cast<double>(y)));
      double acc = 0.0;
      traverse_grid(ray, grid.geometry, [&](std::size_t idx, double t0, double t1) {
        acc += (t1 - t0) * grid.values[idx];
      });
      out(x, static_cast<int>(y)) = acc;
    }
  });
  return out;
}

VoxelGrid sample_gaussians_to_grid(const GaussianSet& set, const GridGeometry& geometry,
                                   int threads) {
  geometry.validate();
  VoxelGrid out(geometry);
  const Vec3 pitch = geometry.pitch();
  // Each Gaussian only touches voxels within 8 standard deviations of its
  // largest axis (density there is below 1.3e-14).
  constexpr double kReach = 8.0;
  struct Prepared {
    Vec3 mu;
    Mat3 precision;
    double weight;
    std::array<int, 3> lo, hi;
  };
  std::vector<Prepared> prepared;
  prepared.reserve(set.size());
  for (const Gaussian3D& g : set.gaussians) {
    const Mat3 sigma = build_covariance(g.log_scale, g.rotation);
    const double reach = kReach * g.scale().maxCoeff();
    Prepared p;
    p.mu = g.position;
    p.precision = sigma.inverse();
    p.weight = g.opacity() * std::max(0.0, kShC0 * g.sh[0]);
    for (int a = 0; a < 3; ++a) {
      p.lo[a] = std::max(0, static_cast<int>(std::floor((g.position[a] - reach - geometry.bbox_min[a]) / pitch[a] - 0.5)));
      p.hi[a] = std::min(geometry.dims[a] - 1, static_cast<int>(std::ceil((g.position[a] + reach - geometry.bbox_min[a]) / pitch[a] - 0.5)));
    }
    prepared.push_back(p);
  }
  // Parallel over z slabs; each slab accumulates Gaussians in set order.
  parallel_for(static_cast<std::size_t>(geometry.dims[2]), threads, [&](std::size_t zs) {
    const int z = static_cast<int>(zs);
    for (const Prepared& p : prepared) {
      if (z < p.lo[2] || z > p.hi[2] || p.weight == 0.0) continue;
      for (int y = p.lo[1]; y <= p.hi[1]; ++y) {
        for (int x = p.lo[0]; x <= p.hi[0]; ++x) {
          const std::size_t idx = geometry.index(x, y, z);
          const Vec3 d = geometry.voxel_center(idx) - p.mu;
          out.values[idx] += p.weight * std::exp(-0.5 * d.dot(p.precision * d));
        }
      }
    }
  });
  return out;
}

void write_weight_rows(const std::filesystem::path& path, const std::vector<WeightRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  detail::write_magic(os, "FLWR");
  detail::write_le<std::uint64_t>(os, rows.size());
  for (const auto& r : rows) {
    detail::write_le<std::uint64_t>(os, r.ray_id);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.entries.size()));
    for (const auto& e : r.entries) {
      detail::write_le<std::uint32_t>(os, e.voxel);
      detail::write_le<double>(os, e.length);
    }
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<WeightRow> read_weight_rows(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  constexpr std::string_view what = "FLWR";
  detail::expect_magic(is, "FLWR", what);
  const auto n = detail::read_le<std::uint64_t>(is, what);
  std::vector<WeightRow> rows(n);
  for (auto& r : rows) {
    r.ray_id = detail::read_le<std::uint64_t>(is, what);
    const auto m = detail::read_le<std::uint32_t>(is, what);
    r.entries.resize(m);
    for (auto& e : r.entries) {
      e.voxel = detail::read_le<std::uint32_t>(is, what);
      e.length = detail::read_le<double>(is, what);
    }
  }
  return rows;
}

void write_flvl(const std::filesystem::path& path, const VoxelGrid& grid) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  detail::write_magic(os, "FLVL");
  for (int d : grid.geometry.dims) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (int a = 0; a < 3; ++a) detail::write_le<float>(os, static_cast<float>(grid.geometry.bbox_min[a]));
  for (int a = 0; a < 3; ++a) detail::write_le<float>(os, static_cast<float>(grid.geometry.bbox_max[a]));
  for (double v : grid.values) detail::write_le<float>(os, static_cast<float>(v));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

VoxelGrid read_flvl(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  constexpr std::string_view what = "FLVL";
  detail::expect_magic(is, "FLVL", what);
  GridGeometry g;
  for (int& d : g.dims) d = static_cast<int>(detail::read_le<std::uint32_t>(is, what));
  for (int a = 0; a < 3; ++a) g.bbox_min[a] = detail::read_le<float>(is, what);
  for (int a = 0; a < 3; ++a) g.bbox_max[a] = detail::read_le<float>(is, what);
  g.validate();
  VoxelGrid grid(g);
  for (double& v : grid.values) v = detail::read_le<float>(is, what);
  return grid;
}

}  // namespace flamegs
