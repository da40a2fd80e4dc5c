#pragma once

#include "flamegs/camera.hpp"
#include "flamegs/gaussian_model.hpp"
#include "flamegs/image.hpp"
#include "flamegs/renderer.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace flamegs {

struct LearningRates {
  double position = 1.6e-4;
  double position_final_factor = 0.01;  ///< exponential decay target over the run
  double log_scale = 5e-3;
  double rotation = 1e-3;
  double opacity = 5e-2;
  double sh = 2.5e-3;
  double pose = 1e-4;
};

struct TrainConfig {
  int iterations = 10000;
  double lambda_dssim = 0.2;
  int pose_opt_start = 500;
  int densify_start = 500;
  int densify_end = 3000;
  int densify_interval = 100;
  double prune_opacity = 0.05;
  /// Threshold on the mean view-space positional gradient norm, measured in
  /// normalized device units (pixel gradient times half the image size).
  double densify_grad_threshold = 2e-4;
  /// Clone (rather than split) when the largest scale is below this fraction
  /// of the scene extent.
  double clone_scale_fraction = 0.01;
  double split_scale_divisor = 1.6;
  double scene_extent = 1.0;  ///< side of the reconstruction bbox
  std::size_t max_gaussians = 0;  ///< 0 = unlimited
  int checkpoint_interval = 1000;
  LearningRates lr;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  double l1 = 0.0;
  double dssim = 0.0;
  Image grad;  ///< dL/d(rendered)
};

/// (1 - lambda) * L1 + lambda * (1 - SSIM) / 2 and its pixel gradient. L1 uses
/// the raw render; SSIM uses the render clamped to [0, 1].
LossResult compute_loss(const Image& rendered, const Image& target, double lambda);

/// Adam moments for one parameter vector.
struct AdamSlot {
  static constexpr int kSize = 11 + kMaxShCoeffs;
  std::array<double, kSize> m{};
  std::array<double, kSize> v{};
};

struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-15;
  std::int64_t step = 0;
  std::vector<AdamSlot> gaussians;
  std::vector<AdamSlot> poses;  ///< first 6 entries used
  std::vector<std::int64_t> pose_steps;
};

struct DensityControlState {
  std::vector<double> grad_accum;
  std::vector<int> observations;
  std::vector<Vec3> position_grad_accum;

  void reset(std::size_t n);
};

struct DensityReport {
  int iteration = 0;
  int pruned = 0;
  int cloned = 0;
  int split = 0;
  std::size_t count_after = 0;
  double min_opacity_after = 0.0;
};

/// Thrown when pruning would leave no Gaussians.
class DegenerateCollapse : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown on non-finite loss. `snapshot` holds the parameters before the step.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, GaussianSet snap)
      : std::runtime_error(what), snapshot(std::move(snap)) {}
  GaussianSet snapshot;
};

/// Clone/split/prune one round. Moments of new entries start at zero.
DensityReport adaptive_density_control(GaussianSet& set, DensityControlState& dc,
                                       OptimizerState& opt, const TrainConfig& config,
                                       std::mt19937_64& rng);

struct StepRecord {
  int iteration = 0;
  std::string view_id;
  double loss = 0.0;
  double l1 = 0.0;
  double dssim = 0.0;
  std::size_t gaussian_count = 0;
  double wall_seconds = 0.0;
};

/// Mutable optimization state over a fixed set of training views.
struct TrainState {
  GaussianSet set;
  std::vector<CameraView> views;
  OptimizerState opt;
  DensityControlState dc;
  std::mt19937_64 rng;
  std::vector<std::size_t> epoch_order;
  std::size_t epoch_pos = 0;
  int iteration = 0;  ///< completed steps
  std::vector<DensityReport> density_events;

  TrainState(GaussianSet init, std::vector<CameraView> training_views, const TrainConfig& config);
};

/// One forward/backward/Adam step on the next view of the shuffled epoch.
/// Density control runs afterwards when the schedule says so.
StepRecord train_step(TrainState& state, const TrainConfig& config);

struct TrainOutput {
  GaussianSet set;
  std::vector<CameraView> views;  ///< with optimized pose deltas
  std::vector<StepRecord> history;
  std::vector<DensityReport> density_events;
  double wall_seconds = 0.0;
};

struct TrainCallbacks {
  /// Called after every step.
  std::function<void(const TrainState&, const StepRecord&)> on_step;
  /// Called at every checkpoint_interval and at the end.
  std::function<void(const TrainState&)> on_checkpoint;
};

TrainOutput train(const std::vector<CameraView>& views, const GaussianSet& init,
                  const TrainConfig& config, const TrainCallbacks& callbacks = {});

/// Writes a run directory: initial snapshot, periodic checkpoints
/// (FLGS + pose-delta JSON), config.json, loss.csv and density.csv.
TrainOutput train_to_directory(const std::vector<CameraView>& views, const GaussianSet& init,
                               const TrainConfig& config, const std::filesystem::path& run_dir);

std::string train_config_to_json_string(const TrainConfig& config);

/// Position learning rate at `iteration` (exponential decay).
double position_lr(const TrainConfig& config, int iteration);

}  // namespace flamegs
