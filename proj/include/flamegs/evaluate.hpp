#pragma once

#include "flamegs/art.hpp"
#include "flamegs/init_raytrace.hpp"
#include "flamegs/phantom.hpp"
#include "flamegs/trainer.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace flamegs {

enum class Method { flamegs, art };

std::string method_name(Method m);
Method parse_method(const std::string& name);

struct ArtConfig {
  int voxels = 120;
  double relaxation = 0.01;
  int iterations = 50;
  int pixel_stride = 1;
  bool materialize_rows = false;  ///< keep all weight rows in memory
};

struct FoldMetrics {
  std::string held_out;
  double mae = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double wall_seconds = 0.0;
  std::size_t peak_bytes = 0;
  std::size_t parameter_count = 0;
};

struct MetricsReport {
  std::string method;
  std::vector<FoldMetrics> folds;
  double mean_mae = 0.0;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double total_wall_seconds = 0.0;
  std::size_t peak_bytes = 0;  ///< max over folds
  double mean_parameter_count = 0.0;

  void summarize();
};

using Initializer =
    std::function<GaussianSet(const std::vector<CameraView>& train_views, const GridGeometry& bounds)>;

struct EvalConfig {
  InitConfig init;
  TrainConfig train;
  int sh_degree = 0;
  ArtConfig art;
  int threads = 1;
  /// Reconstruction box; default derives from the full rig so every fold
  /// sees the same volume.
  std::optional<GridGeometry> bounds;
  /// Replaces ray-traced initialization (fixtures).
  Initializer initializer;
  /// Restrict to these held-out camera indices (empty = all).
  std::vector<std::size_t> folds;
  std::function<void(const FoldMetrics&)> on_fold;
};

/// Box used for reconstruction, with `resolution` voxels per side.
GridGeometry evaluation_bounds(const Dataset& data, const EvalConfig& config, int resolution);

/// Default FlameGS initialization: carve + seed on the training views.
GaussianSet ray_traced_init(const std::vector<CameraView>& train_views, const GridGeometry& bounds,
                            const InitConfig& init, int sh_degree, int threads);

/// Metrics of a render against a ground-truth image; the render is clamped to [0, 1].
FoldMetrics compare_images(const Image& rendered, const Image& truth);

FoldMetrics evaluate_fold(const Dataset& data, Method method, std::size_t held_out,
                          const EvalConfig& config);

/// Leave-one-camera-out cross-validation over every camera (or config.folds).
MetricsReport cross_validate(const Dataset& data, Method method, const EvalConfig& config);

std::string reports_to_json_string(const std::vector<MetricsReport>& reports);
/// Aligned text table: Model, MAE, PSNR, SSIM, Training time(s), Memory cost (GB).
std::string reports_to_table(const std::vector<MetricsReport>& reports);

}  // namespace flamegs
