#include "flamegs/evaluate.hpp"

#include "flamegs/memory.hpp"
#include "flamegs/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace flamegs {

std::string method_name(Method m) { return m == Method::flamegs ? "FlameGS" : "ART"; }

Method parse_method(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "flamegs") return Method::flamegs;
  if (lower == "art") return Method::art;
  throw InvalidParameter("unknown method: " + name);
}

void MetricsReport::summarize() {
  mean_mae = mean_psnr = mean_ssim = total_wall_seconds = mean_parameter_count = 0.0;
  peak_bytes = 0;
  if (folds.empty()) return;
  for (const auto& f : folds) {
    mean_mae += f.mae;
    mean_psnr += f.psnr;
    mean_ssim += f.ssim;
    total_wall_seconds += f.wall_seconds;
    mean_parameter_count += static_cast<double>(f.parameter_count);
    peak_bytes = std::max(peak_bytes, f.peak_bytes);
  }
  const double n = static_cast<double>(folds.size());
  mean_mae /= n;
  mean_psnr /= n;
  mean_ssim /= n;
  mean_parameter_count /= n;
}

GridGeometry evaluation_bounds(const Dataset& data, const EvalConfig& config, int resolution) {
  GridGeometry g = config.bounds ? *config.bounds : default_grid_for_rig(data.views, resolution);
  g.dims = {resolution, resolution, resolution};
  g.validate();
  return g;
}

GaussianSet ray_traced_init(const std::vector<CameraView>& train_views, const GridGeometry& bounds,
                            const InitConfig& init, int sh_degree, int threads) {
  GridGeometry g = bounds;
  g.dims = {init.grid_resolution, init.grid_resolution, init.grid_resolution};
  const OccupancyGrid occ = carve_grid(train_views, g, init, threads);
  return seed_gaussians(occ, init, sh_degree);
}

FoldMetrics compare_images(const Image& rendered, const Image& truth) {
  const Image r = clamp01(rendered);
  FoldMetrics m;
  m.mae = mae(r, truth);
  m.psnr = psnr(r, truth);
  m.ssim = ssim(r, truth);
  return m;
}

namespace {

std::vector<CameraView> without(const CameraRig& views, std::size_t held_out) {
  std::vector<CameraView> out;
  out.reserve(views.size() - 1);
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (i != held_out) out.push_back(views[i]);
  }
  return out;
}

}  // namespace

FoldMetrics evaluate_fold(const Dataset& data, Method method, std::size_t held_out,
                          const EvalConfig& config) {
  if (held_out >= data.views.size()) throw InvalidParameter("held-out index out of range");
  const CameraView& target = data.views[held_out];
  const std::vector<CameraView> train_views = without(data.views, held_out);

  reset_peak_allocated_bytes();
  const auto start = std::chrono::steady_clock::now();
  Image rendered;
  std::size_t params = 0;
  if (method == Method::flamegs) {
    const GridGeometry bounds = evaluation_bounds(data, config, config.init.grid_resolution);
    GaussianSet init = config.initializer
                           ? config.initializer(train_views, bounds)
                           : ray_traced_init(train_views, bounds, config.init, config.sh_degree,
                                             config.threads);
    TrainConfig tc = config.train;
    tc.threads = config.threads;
    tc.scene_extent = (bounds.bbox_max - bounds.bbox_min).maxCoeff();
    const TrainOutput out = train(train_views, init, tc);
    CameraView eval_view = target;
    eval_view.delta = PoseDelta{};
    RenderSettings rs;
    rs.threads = config.threads;
    rendered = render_forward(out.set, eval_view, rs).pixels;
    params = out.set.size() * static_cast<std::size_t>(parameter_count(out.set.sh_degree));
  } else {
    const GridGeometry grid = evaluation_bounds(data, config, config.art.voxels);
    const auto rays = lattice_rays(train_views, config.art.pixel_stride);
    const auto b = gather_measurements(train_views, rays);
    VoxelGrid volume(grid, 0.0);
    if (config.art.materialize_rows) {
      const auto rows = build_weight_rows(train_views, rays, grid, config.threads);
      volume = art_reconstruct(rows, b, volume, config.art.relaxation, config.art.iterations);
    } else {
      volume = art_reconstruct_lazy(train_views, rays, b, volume, config.art.relaxation,
                                    config.art.iterations);
    }
    rendered = project_volume(volume, target, config.threads);
    params = grid.voxel_count();
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  FoldMetrics m = compare_images(rendered, target.image);
  m.held_out = target.id;
  m.wall_seconds = seconds;
  m.peak_bytes = peak_allocated_bytes();
  m.parameter_count = params;
  return m;
}

MetricsReport cross_validate(const Dataset& data, Method method, const EvalConfig& config) {
  if (data.views.size() < 3) throw InvalidParameter("cross-validation needs at least 3 cameras");
  MetricsReport report;
  report.method = method_name(method);
  std::vector<std::size_t> folds = config.folds;
  if (folds.empty()) {
    for (std::size_t i = 0; i < data.views.size(); ++i) folds.push_back(i);
  }
  for (std::size_t f : folds) {
    report.folds.push_back(evaluate_fold(data, method, f, config));
    if (config.on_fold) config.on_fold(report.folds.back());
  }
  report.summarize();
  return report;
}

namespace {

nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

}  // namespace

std::string reports_to_json_string(const std::vector<MetricsReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : r.folds) {
      folds.push_back({{"held_out", f.held_out},
                       {"mae", f.mae},
                       {"psnr", number_or_inf(f.psnr)},
                       {"ssim", f.ssim},
                       {"wall_seconds", f.wall_seconds},
                       {"peak_bytes", f.peak_bytes},
                       {"parameter_count", f.parameter_count}});
    }
    arr.push_back({{"model", r.method},
                   {"mae", r.mean_mae},
                   {"psnr", number_or_inf(r.mean_psnr)},
                   {"ssim", r.mean_ssim},
                   {"training_time_s", r.total_wall_seconds},
                   {"memory_cost_gb", static_cast<double>(r.peak_bytes) / 1e9},
                   {"peak_bytes", r.peak_bytes},
                   {"parameter_count", r.mean_parameter_count},
                   {"folds", folds}});
  }
  return arr.dump(2);
}

std::string reports_to_table(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %10s %9s %8s %18s %18s\n", "Model", "MAE", "PSNR",
                "SSIM", "Training time(s)", "Memory cost (GB)");
  os << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-10s %10.5f %9.2f %8.4f %18.1f %18.3f\n", r.method.c_str(),
                  r.mean_mae, r.mean_psnr, r.mean_ssim, r.total_wall_seconds,
                  static_cast<double>(r.peak_bytes) / 1e9);
    os << line;
  }
  return os.str();
}

}  // namespace flamegs
