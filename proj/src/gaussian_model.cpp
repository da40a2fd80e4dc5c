#include "flamegs/gaussian_model.hpp"

#include "binary_io.hpp"

#include <Eigen/Dense>

#include <fstream>
#include <string>

namespace flamegs {

namespace {

constexpr double kShC1 = 0.4886025119029199;
constexpr std::array<double, 5> kShC2 = {1.0925484305920792, -1.0925484305920792,
                                         0.31539156525252005, -1.0925484305920792,
                                         0.5462742152960396};

constexpr std::uint32_t kFlgsVersion = 1;

void check_quaternion(const Vec4& q) {
  if (!q.allFinite()) throw InvalidParameter("quaternion has non-finite components");
  if (q.squaredNorm() < 1e-24) throw InvalidParameter("quaternion has zero norm");
}

}  // namespace

void GaussianSet::validate() const {
  if (sh_degree < 0 || sh_degree > kMaxShDegree) {
    throw InvalidParameter("sh_degree must be in [0, " + std::to_string(kMaxShDegree) + "]");
  }
  const int nsh = sh_coeff_count(sh_degree);
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const Gaussian3D& g = gaussians[i];
    if (g.sh.size() != nsh) {
      throw InvalidParameter("gaussian " + std::to_string(i) + " has " +
                             std::to_string(g.sh.size()) + " SH coefficients, expected " +
                             std::to_string(nsh));
    }
    if (!g.position.allFinite() || !g.log_scale.allFinite() || !g.rotation.allFinite() ||
        !std::isfinite(g.opacity_logit) || !g.sh.allFinite()) {
      throw InvalidParameter("gaussian " + std::to_string(i) + " has non-finite parameters");
    }
  }
}

Mat3 quaternion_to_rotation(const Vec4& q_in) {
  check_quaternion(q_in);
  const Vec4 q = q_in.normalized();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Mat3 build_covariance(const Vec3& log_scale, const Vec4& q) {
  if (!log_scale.allFinite()) throw InvalidParameter("log_scale has non-finite components");
  const Vec3 s = log_scale.array().exp();
  if (!s.allFinite() || (s.array() <= 0.0).any()) {
    throw InvalidParameter("scale overflowed or underflowed");
  }
  const Mat3 m = quaternion_to_rotation(q) * s.asDiagonal();
  return m * m.transpose();
}

double eval_density(const Gaussian3D& g, const Vec3& x) {
  const Mat3 sigma = build_covariance(g.log_scale, g.rotation);
  const Vec3 d = x - g.position;
  const double mahal = d.dot(sigma.ldlt().solve(d));
  return std::exp(-0.5 * mahal);
}

ShBasis sh_basis(int degree, const Vec3& dir) {
  ShBasis b{};
  b[0] = kShC0;
  if (degree < 1) return b;
  const double x = dir.x(), y = dir.y(), z = dir.z();
  b[1] = -kShC1 * y;
  b[2] = kShC1 * z;
  b[3] = -kShC1 * x;
  if (degree < 2) return b;
  b[4] = kShC2[0] * x * y;
  b[5] = kShC2[1] * y * z;
  b[6] = kShC2[2] * (2 * z * z - x * x - y * y);
  b[7] = kShC2[3] * x * z;
  b[8] = kShC2[4] * (x * x - y * y);
  return b;
}

namespace {

int degree_of(const ShCoeffs& sh) {
  switch (sh.size()) {
    case 1: return 0;
    case 4: return 1;
    case 9: return 2;
    default: throw InvalidParameter("SH coefficient count must be 1, 4 or 9");
  }
}

}  // namespace

double eval_luminance_raw(const Gaussian3D& g, const Vec3& view_dir) {
  const int degree = degree_of(g.sh);
  const ShBasis b = sh_basis(degree, view_dir);
  double c = 0.0;
  for (int k = 0; k < g.sh.size(); ++k) c += b[k] * g.sh[k];
  return c;
}

double eval_luminance(const Gaussian3D& g, const Vec3& view_dir) {
  return std::max(0.0, eval_luminance_raw(g, view_dir));
}

Vec3 sh_luminance_direction_grad(const Gaussian3D& g, const Vec3& dir) {
  const int degree = degree_of(g.sh);
  Vec3 grad = Vec3::Zero();
  if (degree < 1) return grad;
  const double x = dir.x(), y = dir.y(), z = dir.z();
  const auto& k = g.sh;
  grad.y() += -kShC1 * k[1];
  grad.z() += kShC1 * k[2];
  grad.x() += -kShC1 * k[3];
  if (degree < 2) return grad;
  grad += k[4] * kShC2[0] * Vec3(y, x, 0);
  grad += k[5] * kShC2[1] * Vec3(0, z, y);
  grad += k[6] * kShC2[2] * Vec3(-2 * x, -2 * y, 4 * z);
  grad += k[7] * kShC2[3] * Vec3(z, 0, x);
  grad += k[8] * kShC2[4] * Vec3(2 * x, -2 * y, 0);
  return grad;
}

CovarianceGrad backprop_covariance(const Vec3& log_scale, const Vec4& q_in,
                                   const Mat3& dL_dsigma) {
  const Vec3 s = log_scale.array().exp();
  const Mat3 rot = quaternion_to_rotation(q_in);
  const Mat3 m = rot * s.asDiagonal();
  // Sigma = M M^T
  const Mat3 dL_dm = (dL_dsigma + dL_dsigma.transpose()) * m;

  CovarianceGrad out;
  Mat3 dL_drot;
  for (int j = 0; j < 3; ++j) {
    out.log_scale[j] = s[j] * dL_dm.col(j).dot(rot.col(j));
    dL_drot.col(j) = dL_dm.col(j) * s[j];
  }

  const double qn = q_in.norm();
  const Vec4 q = q_in / qn;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  const Mat3& g = dL_drot;
  Vec4 dq;
  dq[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) +
               x * g(2, 1));
  dq[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
               z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
  dq[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
               w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
  dq[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) -
               2 * z * g(1, 1) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  // through q / |q|
  out.rotation = (dq - q * q.dot(dq)) / qn;
  return out;
}

void write_flgs(std::ostream& os, const GaussianSet& set) {
  set.validate();
  detail::write_magic(os, "FLGS");
  detail::write_le<std::uint32_t>(os, kFlgsVersion);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(set.size()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(set.sh_degree));
  auto put = [&](double v) { detail::write_le<float>(os, static_cast<float>(v)); };
  for (const Gaussian3D& g : set.gaussians) {
    for (int k = 0; k < 3; ++k) put(g.position[k]);
    for (int k = 0; k < 3; ++k) put(g.log_scale[k]);
    for (int k = 0; k < 4; ++k) put(g.rotation[k]);
    put(g.opacity_logit);
    for (int k = 0; k < g.sh.size(); ++k) put(g.sh[k]);
  }
}

GaussianSet read_flgs(std::istream& is) {
  constexpr std::string_view what = "FLGS";
  detail::expect_magic(is, "FLGS", what);
  const auto version = detail::read_le<std::uint32_t>(is, what);
  if (version != kFlgsVersion) {
    throw FormatError("FLGS: unsupported version " + std::to_string(version));
  }
  const auto count = detail::read_le<std::uint32_t>(is, what);
  const auto degree = detail::read_le<std::uint32_t>(is, what);
  if (degree > static_cast<std::uint32_t>(kMaxShDegree)) {
    throw FormatError("FLGS: sh_degree " + std::to_string(degree) + " unsupported");
  }
  GaussianSet set(static_cast<int>(degree));
  set.gaussians.reserve(count);
  const int nsh = sh_coeff_count(set.sh_degree);
  auto get = [&] { return static_cast<double>(detail::read_le<float>(is, what)); };
  for (std::uint32_t i = 0; i < count; ++i) {
    Gaussian3D g;
    for (int k = 0; k < 3; ++k) g.position[k] = get();
    for (int k = 0; k < 3; ++k) g.log_scale[k] = get();
    for (int k = 0; k < 4; ++k) g.rotation[k] = get();
    g.opacity_logit = get();
    g.sh.resize(nsh);
    for (int k = 0; k < nsh; ++k) g.sh[k] = get();
    set.gaussians.push_back(g);
  }
  set.validate();
  return set;
}

void write_flgs(const std::filesystem::path& path, const GaussianSet& set) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  write_flgs(os, set);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

GaussianSet read_flgs(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  return read_flgs(is);
}

}  // namespace flamegs
