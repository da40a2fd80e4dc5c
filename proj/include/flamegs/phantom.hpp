#pragma once

#include "flamegs/camera.hpp"
#include "flamegs/voxel_grid.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flamegs {

struct PhantomComponent {
  double weight = 1.0;
  Vec3 mean = Vec3::Zero();
  Mat3 covariance = Mat3::Identity();
};

/// Normalized Gaussian mixture emission field.
struct PhantomSpec {
  std::vector<PhantomComponent> components;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PhantomOptions {
  int components = 5;
  double ball_radius = 0.2;
  double min_std = 0.025;
  double max_std = 0.055;
  std::uint64_t seed = 7;
};

/// Seeded anisotropic mixture whose components stay inside a ball.
PhantomSpec make_random_phantom(const Vec3& center, const PhantomOptions& options);

double eval_phantom(const PhantomSpec& spec, const Vec3& x);

struct RigOptions {
  int cameras = 10;
  double radius = 1.0;
  Vec3 target = Vec3::Zero();
  int width = 200;
  int height = 256;
  double focal = 300.0;
};

/// Cameras on a horizontal (world z-up) circle, evenly spaced in azimuth,
/// looking at the target with image rows pointing down the vertical axis.
CameraRig make_rig(const RigOptions& options);

struct Dataset {
  CameraRig views;  ///< each with its image
  std::optional<PhantomSpec> phantom;
};

struct PhantomRenderOptions {
  int samples_per_ray = 256;
  double normalize_max = 0.9;
  double noise_std = 0.0;  ///< optional additive Gaussian noise
  std::uint64_t noise_seed = 0;
  int threads = 1;
};

/// Midpoint-rule ray integration of the phantom through `bounds` for every
/// pixel of every camera, then one global scale so the dataset max equals
/// normalize_max.
Dataset render_phantom_views(const PhantomSpec& spec, const CameraRig& rig,
                             const GridGeometry& bounds, const PhantomRenderOptions& options = {});

/// Unnormalized line integral along one pixel ray.
double integrate_phantom_ray(const PhantomSpec& spec, const Ray& ray, const GridGeometry& bounds,
                             int samples);

// Dataset directory: rig.json, view_<id>.pgm, optional phantom.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

std::string phantom_to_json_string(const PhantomSpec& spec);
PhantomSpec phantom_from_json_string(const std::string& text);

}  // namespace flamegs
