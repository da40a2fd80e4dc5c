#pragma once

#include "flamegs/common.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace flamegs {

inline constexpr int kMaxShDegree = 2;
inline constexpr int kMaxShCoeffs = (kMaxShDegree + 1) * (kMaxShDegree + 1);
inline constexpr double kShC0 = 0.28209479177387814;

/// Dynamic-length SH vector with inline storage (no heap per Gaussian).
using ShCoeffs = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxShCoeffs, 1>;
using ShBasis = std::array<double, kMaxShCoeffs>;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Stored parameters per Gaussian: 3 position + 3 log-scale + 4 quaternion +
/// 1 opacity logit + SH coefficients.
constexpr int parameter_count(int sh_degree) { return 11 + sh_coeff_count(sh_degree); }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// One anisotropic emitter. Rotation is a (w, x, y, z) quaternion.
struct Gaussian3D {
  Vec3 position = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
  double opacity_logit = 0.0;
  ShCoeffs sh = ShCoeffs::Zero(1);

  [[nodiscard]] double opacity() const { return sigmoid(opacity_logit); }
  [[nodiscard]] Vec3 scale() const { return log_scale.array().exp(); }
};

struct GaussianSet {
  int sh_degree = 0;
  std::vector<Gaussian3D> gaussians;

  GaussianSet() = default;
  explicit GaussianSet(int degree) : sh_degree(degree) {}

  [[nodiscard]] std::size_t size() const { return gaussians.size(); }
  [[nodiscard]] bool empty() const { return gaussians.empty(); }

  /// Throws InvalidParameter if a member has the wrong SH length or
  /// non-finite parameters.
  void validate() const;
};

/// Rotation matrix of the normalized quaternion (w, x, y, z).
Mat3 quaternion_to_rotation(const Vec4& q);

/// Sigma = R S S^T R^T with S = diag(exp(log_scale)).
Mat3 build_covariance(const Vec3& log_scale, const Vec4& q);

/// Unnormalized Gaussian exp(-1/2 (x-mu)^T Sigma^-1 (x-mu)).
double eval_density(const Gaussian3D& g, const Vec3& x);

/// Real SH basis up to `degree` evaluated at a unit direction.
ShBasis sh_basis(int degree, const Vec3& dir);

/// SH luminance before the non-negativity clamp.
double eval_luminance_raw(const Gaussian3D& g, const Vec3& view_dir);

/// Emitted luminance along `view_dir`, clamped at zero.
double eval_luminance(const Gaussian3D& g, const Vec3& view_dir);

/// Gradient of the raw SH luminance with respect to the (unit) direction,
/// treating its components as independent.
Vec3 sh_luminance_direction_grad(const Gaussian3D& g, const Vec3& dir);

struct CovarianceGrad {
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();
};

/// Pulls dL/dSigma back onto (log_scale, quaternion). The quaternion
/// gradient includes the normalization step.
CovarianceGrad backprop_covariance(const Vec3& log_scale, const Vec4& q, const Mat3& dL_dsigma);

// FLGS binary snapshot: "FLGS", u32 version=1, u32 count, u32 sh_degree, then
// per Gaussian f32 position(3) log_scale(3) quaternion wxyz(4)
// opacity_logit(1) sh((deg+1)^2). Little-endian.
void write_flgs(std::ostream& os, const GaussianSet& set);
GaussianSet read_flgs(std::istream& is);
void write_flgs(const std::filesystem::path& path, const GaussianSet& set);
GaussianSet read_flgs(const std::filesystem::path& path);

}  // namespace flamegs
