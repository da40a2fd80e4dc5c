#pragma once

#include "flamegs/camera.hpp"
#include "flamegs/gaussian_model.hpp"
#include "flamegs/image.hpp"

#include <cstdint>
#include <vector>

namespace flamegs {

struct RenderSettings {
  int tile_size = 16;
  double alpha_max = 0.99;
  double transmittance_stop = 1e-4;
  /// Footprint radius in standard deviations; used for culling, tile
  /// binning and the per-pixel support test.
  double footprint_sigma = 3.0;
  int threads = 1;
};

/// Screen-space footprint of one Gaussian in one view.
struct Splat2D {
  Vec2 mean2d = Vec2::Zero();
  Mat2 inv_cov2d = Mat2::Identity();
  Mat2 cov2d = Mat2::Identity();
  double depth = 0.0;
  double opacity = 0.0;
  double luminance = 0.0;
  std::size_t source_index = 0;

  // cached for the backward pass
  Vec3 cam_point = Vec3::Zero();
  Vec3 view_dir = Vec3::UnitZ();
  double view_distance = 1.0;
  double luminance_raw = 0.0;
  int x_min = 0, x_max = -1, y_min = 0, y_max = -1;  ///< pixel AABB, inclusive
};

/// Does the k-sigma ellipse of (mean, cov) intersect the axis-aligned rectangle?
bool ellipse_intersects_rect(const Vec2& mean, const Mat2& inv_cov, double k, const Vec2& rect_min,
                             const Vec2& rect_max);

/// Projects every Gaussian in front of the near plane whose footprint
/// ellipse intersects the image, in GaussianSet order.
std::vector<Splat2D> cull_and_project(const GaussianSet& set, const CameraView& view,
                                      const RenderSettings& settings = {});

/// Ascending depth, ties by source_index.
std::vector<Splat2D> depth_sort(std::vector<Splat2D> splats);

struct FrameBuffer {
  Image pixels;
  Image transmittance;  ///< terminal transmittance per pixel
  std::vector<Splat2D> splats;  ///< depth-sorted
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<std::uint32_t>> tile_lists;  ///< indices into splats, front to back
  std::vector<std::uint32_t> last_contributor;  ///< per pixel: tile-list prefix length composited
};

/// Composites pre-sorted splats front to back into a width x height image.
FrameBuffer composite(std::vector<Splat2D> sorted_splats, int width, int height,
                      const RenderSettings& settings = {});

FrameBuffer render_forward(const GaussianSet& set, const CameraView& view,
                           const RenderSettings& settings = {});

struct GaussianGrad {
  Vec3 position = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();
  double opacity_logit = 0.0;
  ShCoeffs sh;
};

struct PoseGrad {
  Vec3 rotation = Vec3::Zero();
  Vec3 translation = Vec3::Zero();
};

struct GradientBuffer {
  std::vector<GaussianGrad> gaussians;
  PoseGrad pose;
  /// dL/d(mean2d) in pixels per Gaussian (zero if culled).
  std::vector<Vec2> mean2d;
  std::vector<std::uint8_t> visible;
};

/// Internal inconsistency detected during backpropagation (non-finite gradient).
class GradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Analytic gradient of sum_p dL_dpixels(p) * C(p) with respect to every
/// Gaussian parameter and the view's pose delta.
GradientBuffer render_backward(const GaussianSet& set, const CameraView& view,
                               const FrameBuffer& frame, const Image& dL_dpixels,
                               const RenderSettings& settings = {});

}  // namespace flamegs
