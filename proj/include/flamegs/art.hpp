#pragma once

#include "flamegs/camera.hpp"
#include "flamegs/gaussian_model.hpp"
#include "flamegs/voxel_grid.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace flamegs {

/// Dense emission volume, x-fastest.
struct VoxelGrid {
  GridGeometry geometry;
  std::vector<double> values;

  VoxelGrid() = default;
  explicit VoxelGrid(const GridGeometry& g, double fill = 0.0)
      : geometry(g), values(g.voxel_count(), fill) {}
};

struct WeightEntry {
  std::uint32_t voxel = 0;
  double length = 0.0;
};

/// Sparse row of the projection matrix: path lengths of one ray through voxels.
struct WeightRow {
  std::uint64_t ray_id = 0;
  std::vector<WeightEntry> entries;

  [[nodiscard]] double squared_norm() const;
};

WeightRow build_weight_row(const Ray& ray, const GridGeometry& grid, std::uint64_t ray_id = 0);

/// Line integrals b_r = sum_k length_rk * value_k.
std::vector<double> forward_project(const VoxelGrid& grid, const std::vector<WeightRow>& rows);
double forward_project(const VoxelGrid& grid, const WeightRow& row);

/// Rays of every view on a pixel lattice, in (view, y, x) order.
struct RaySample {
  std::size_t view = 0;
  int x = 0;
  int y = 0;
};
std::vector<RaySample> lattice_rays(const std::vector<CameraView>& views, int pixel_stride);

std::vector<WeightRow> build_weight_rows(const std::vector<CameraView>& views,
                                         const std::vector<RaySample>& rays,
                                         const GridGeometry& grid, int threads = 1);

/// Measured pixel values for each sampled ray.
std::vector<double> gather_measurements(const std::vector<CameraView>& views,
                                        const std::vector<RaySample>& rays);

struct ArtProgress {
  int sweep = 0;  ///< completed sweeps
};

/// Sequential Kaczmarz with non-negativity clamp, rows in ascending order.
/// `on_sweep` (optional) runs after each sweep.
VoxelGrid art_reconstruct(const std::vector<WeightRow>& rows, const std::vector<double>& measurements,
                          const VoxelGrid& initial, double relaxation, int iterations,
                          const std::function<void(const VoxelGrid&, const ArtProgress&)>& on_sweep = {});

/// Same sweep but rows are rebuilt on the fly (constant memory).
VoxelGrid art_reconstruct_lazy(const std::vector<CameraView>& views,
                               const std::vector<RaySample>& rays,
                               const std::vector<double>& measurements, const VoxelGrid& initial,
                               double relaxation, int iterations,
                               const std::function<void(const VoxelGrid&, const ArtProgress&)>& on_sweep = {});

/// Renders a volume into a view by line integration over every pixel ray.
Image project_volume(const VoxelGrid& grid, const CameraView& view, int threads = 1);

/// value(x) = sum_i opacity_i * luminance_i * G_i(x) at voxel centers.
VoxelGrid sample_gaussians_to_grid(const GaussianSet& set, const GridGeometry& geometry,
                                   int threads = 1);

// Weight-row cache file: "FLWR", u64 rows, then per row u64 id, u32 n, n x (u32 voxel, f64 length).
void write_weight_rows(const std::filesystem::path& path, const std::vector<WeightRow>& rows);
std::vector<WeightRow> read_weight_rows(const std::filesystem::path& path);

// FLVL volume: "FLVL", u32 dims x3, f32 bbox min/max, then f32 values x-fastest.
void write_flvl(const std::filesystem::path& path, const VoxelGrid& grid);
VoxelGrid read_flvl(const std::filesystem::path& path);

}  // namespace flamegs
