#include "flamegs/renderer.hpp"

#include "flamegs/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace flamegs {

bool ellipse_intersects_rect(const Vec2& mean, const Mat2& inv_cov, double k, const Vec2& rect_min,
                             const Vec2& rect_max) {
  if ((mean.array() >= rect_min.array()).all() && (mean.array() <= rect_max.array()).all()) {
    return true;
  }
  // Center outside: the minimum of the convex quadratic over the box lies on
  // its boundary, so check each edge segment.
  const Vec2 corners[4] = {rect_min, Vec2(rect_max.x(), rect_min.y()), rect_max,
                           Vec2(rect_min.x(), rect_max.y())};
  const double k2 = k * k;
  for (int e = 0; e < 4; ++e) {
    const Vec2 a = corners[e] - mean;
    const Vec2 dir = corners[(e + 1) % 4] - corners[e];
    const double qa = dir.dot(inv_cov * dir);
    const double qb = dir.dot(inv_cov * a);
    const double t = qa > 0 ? std::clamp(-qb / qa, 0.0, 1.0) : 0.0;
    const Vec2 p = a + t * dir;
    if (p.dot(inv_cov * p) <= k2) return true;
  }
  return false;
}

std::vector<Splat2D> cull_and_project(const GaussianSet& set, const CameraView& view,
                                      const RenderSettings& settings) {
  const Pose pose = view.effective_pose();
  const Vec3 center = pose.center();
  const Intrinsics& intr = view.intrinsics;
  const Vec2 rect_min(-0.5, -0.5);
  const Vec2 rect_max(intr.width - 0.5, intr.height - 0.5);
  const double k = settings.footprint_sigma;

  std::vector<Splat2D> out;
  out.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Gaussian3D& g = set.gaussians[i];
    const Vec3 pc = pose.rotation * g.position + pose.translation;
    const auto jac = projection_jacobian(pc, intr);
    if (!jac) continue;
    const Mat3 sigma = build_covariance(g.log_scale, g.rotation);
    const Mat3 sigma_cam = pose.rotation * sigma * pose.rotation.transpose();
    Mat2 cov = (*jac) * sigma_cam * jac->transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov(0, 0) += kCovarianceFloor;
    cov(1, 1) += kCovarianceFloor;

    Splat2D s;
    s.mean2d = Vec2(intr.fx * pc.x() / pc.z() + intr.cx, intr.fy * pc.y() / pc.z() + intr.cy);
    s.cov2d = cov;
    s.inv_cov2d = cov.inverse();
    if (!ellipse_intersects_rect(s.mean2d, s.inv_cov2d, k, rect_min, rect_max)) continue;

    s.depth = pc.z();
    s.cam_point = pc;
    const Vec3 v = g.position - center;
    s.view_distance = v.norm();
    s.view_dir = s.view_distance > 0 ? Vec3(v / s.view_distance) : Vec3::UnitZ();
    s.luminance_raw = eval_luminance_raw(g, s.view_dir);
    s.luminance = std::max(0.0, s.luminance_raw);
    s.opacity = g.opacity();
    s.source_index = i;

    const double rx = k * std::sqrt(cov(0, 0));
    const double ry = k * std::sqrt(cov(1, 1));
    s.x_min = std::max(0, static_cast<int>(std::ceil(s.mean2d.x() - rx)));
    s.x_max = std::min(intr.width - 1, static_cast<int>(std::floor(s.mean2d.x() + rx)));
    s.y_min = std::max(0, static_cast<int>(std::ceil(s.mean2d.y() - ry)));
    s.y_max = std::min(intr.height - 1, static_cast<int>(std::floor(s.mean2d.y() + ry)));
    out.push_back(s);
  }
  return out;
}

namespace {

// The fields the per-pixel loops read, packed for cache locality.
struct PackedSplat {
  double mx, my;
  double a00, a01, a11;
  double opacity;
  double luminance;
};

std::vector<PackedSplat> pack_splats(const std::vector<Splat2D>& splats) {
  std::vector<PackedSplat> out(splats.size());
  for (std::size_t i = 0; i < splats.size(); ++i) {
    const Splat2D& s = splats[i];
    out[i] = {s.mean2d.x(), s.mean2d.y(), s.inv_cov2d(0, 0), s.inv_cov2d(0, 1),
              s.inv_cov2d(1, 1), s.opacity,   s.luminance};
  }
  return out;
}

}  // namespace

std::vector<Splat2D> depth_sort(std::vector<Splat2D> splats) {
  std::sort(splats.begin(), splats.end(), [](const Splat2D& a, const Splat2D& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.source_index < b.source_index;
  });
  return splats;
}

FrameBuffer composite(std::vector<Splat2D> sorted_splats, int width, int height,
                      const RenderSettings& settings) {
  FrameBuffer fb;
  fb.pixels = Image(width, height, 0.0);
  fb.transmittance = Image(width, height, 1.0);
  fb.last_contributor.assign(static_cast<std::size_t>(width) * height, 0);
  fb.splats = std::move(sorted_splats);
  const int ts = settings.tile_size;
  fb.tiles_x = (width + ts - 1) / ts;
  fb.tiles_y = (height + ts - 1) / ts;
  fb.tile_lists.assign(static_cast<std::size_t>(fb.tiles_x) * fb.tiles_y, {});

  for (std::uint32_t i = 0; i < fb.splats.size(); ++i) {
    const Splat2D& s = fb.splats[i];
    if (s.x_min > s.x_max || s.y_min > s.y_max) continue;
    for (int ty = s.y_min / ts; ty <= s.y_max / ts; ++ty) {
      for (int tx = s.x_min / ts; tx <= s.x_max / ts; ++tx) {
        fb.tile_lists[static_cast<std::size_t>(ty) * fb.tiles_x + tx].push_back(i);
      }
    }
  }

  const double k2 = settings.footprint_sigma * settings.footprint_sigma;
  const std::vector<PackedSplat> packed = pack_splats(fb.splats);
  parallel_for(fb.tile_lists.size(), settings.threads, [&](std::size_t tile) {
    const auto& list = fb.tile_lists[tile];
    if (list.empty()) return;
    const int tx = static_cast<int>(tile % fb.tiles_x);
    const int ty = static_cast<int>(tile / fb.tiles_x);
    const int x0 = tx * ts, x1 = std::min(width, x0 + ts);
    const int y0 = ty * ts, y1 = std::min(height, y0 + ts);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        double t = 1.0;
        double c = 0.0;
        std::uint32_t last = 0;
        for (std::uint32_t k = 0; k < list.size(); ++k) {
          const PackedSplat& s = packed[list[k]];
          const double dx = x - s.mx;
          const double dy = y - s.my;
          const double q = s.a00 * dx * dx + 2.0 * s.a01 * dx * dy + s.a11 * dy * dy;
          if (q > k2) continue;
          const double alpha = std::min(settings.alpha_max, s.opacity * std::exp(-0.5 * q));
          c += s.luminance * alpha * t;
          t *= 1.0 - alpha;
          last = k + 1;
          if (t < settings.transmittance_stop) break;
        }
        const std::size_t idx = static_cast<std::size_t>(y) * width + x;
        fb.pixels.pixels[idx] = c;
        fb.transmittance.pixels[idx] = t;
        fb.last_contributor[idx] = last;
      }
    }
  });
  return fb;
}

FrameBuffer render_forward(const GaussianSet& set, const CameraView& view,
                           const RenderSettings& settings) {
  return composite(depth_sort(cull_and_project(set, view, settings)), view.intrinsics.width,
                   view.intrinsics.height, settings);
}

namespace {

struct SplatGrad2D {
  double mean_x = 0, mean_y = 0;
  double conic00 = 0, conic01 = 0, conic11 = 0;  ///< dL/dA for symmetric A (off-diagonal per entry)
  double opacity = 0;
  double luminance = 0;

  SplatGrad2D& operator+=(const SplatGrad2D& o) {
    mean_x += o.mean_x;
    mean_y += o.mean_y;
    conic00 += o.conic00;
    conic01 += o.conic01;
    conic11 += o.conic11;
    opacity += o.opacity;
    luminance += o.luminance;
    return *this;
  }
};

struct Contribution {
  std::uint32_t list_pos;
  double alpha;
  double gauss;
  double t_before;
  double dx, dy;
  bool clamped;
};

}  // namespace

GradientBuffer render_backward(const GaussianSet& set, const CameraView& view,
                               const FrameBuffer& frame, const Image& dL_dpixels,
                               const RenderSettings& settings) {
  const int width = frame.pixels.width;
  const int height = frame.pixels.height;
  if (!dL_dpixels.same_shape(frame.pixels)) {
    throw std::invalid_argument("dL_dpixels shape does not match the frame");
  }
  const int ts = settings.tile_size;
  const double k2 = settings.footprint_sigma * settings.footprint_sigma;

  const std::vector<PackedSplat> packed = pack_splats(frame.splats);
  // Per-tile partial gradients, indexed like the tile list.
  std::vector<std::vector<SplatGrad2D>> tile_grads(frame.tile_lists.size());
  parallel_for(frame.tile_lists.size(), settings.threads, [&](std::size_t tile) {
    const auto& list = frame.tile_lists[tile];
    if (list.empty()) return;
    auto& grads = tile_grads[tile];
    grads.assign(list.size(), SplatGrad2D{});
    const int tx = static_cast<int>(tile % frame.tiles_x);
    const int ty = static_cast<int>(tile / frame.tiles_x);
    const int x0 = tx * ts, x1 = std::min(width, x0 + ts);
    const int y0 = ty * ts, y1 = std::min(height, y0 + ts);
    std::vector<Contribution> contribs;
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const std::size_t idx = static_cast<std::size_t>(y) * width + x;
        const double g = dL_dpixels.pixels[idx];
        if (g == 0.0) continue;
        const std::uint32_t last = frame.last_contributor[idx];
        contribs.clear();
        double t = 1.0;
        for (std::uint32_t k = 0; k < last; ++k) {
          const PackedSplat& s = packed[list[k]];
          const double dx = x - s.mx;
          const double dy = y - s.my;
          const double q = s.a00 * dx * dx + 2.0 * s.a01 * dx * dy + s.a11 * dy * dy;
          if (q > k2) continue;
          const double gauss = std::exp(-0.5 * q);
          const double raw = s.opacity * gauss;
          const bool clamped = raw > settings.alpha_max;
          const double alpha = clamped ? settings.alpha_max : raw;
          contribs.push_back({k, alpha, gauss, t, dx, dy, clamped});
          t *= 1.0 - alpha;
        }
        double behind = 0.0;  // luminance composited behind the current splat
        for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
          const PackedSplat& s = packed[list[it->list_pos]];
          SplatGrad2D& sg = grads[it->list_pos];
          sg.luminance += g * it->alpha * it->t_before;
          const double dL_dalpha = g * it->t_before * (s.luminance - behind);
          behind = s.luminance * it->alpha + (1.0 - it->alpha) * behind;
          if (it->clamped) continue;
          sg.opacity += dL_dalpha * it->gauss;
          const double dL_dpower = dL_dalpha * it->alpha;
          // power = -1/2 d^T A d with d = p - mean
          sg.mean_x += dL_dpower * (s.a00 * it->dx + s.a01 * it->dy);
          sg.mean_y += dL_dpower * (s.a01 * it->dx + s.a11 * it->dy);
          sg.conic00 += -0.5 * dL_dpower * it->dx * it->dx;
          sg.conic01 += -0.5 * dL_dpower * it->dx * it->dy;
          sg.conic11 += -0.5 * dL_dpower * it->dy * it->dy;
        }
      }
    }
  });

  // Fixed tile order reduction keeps results independent of thread count.
  std::vector<SplatGrad2D> splat_grads(frame.splats.size());
  for (std::size_t tile = 0; tile < frame.tile_lists.size(); ++tile) {
    const auto& list = frame.tile_lists[tile];
    const auto& grads = tile_grads[tile];
    for (std::size_t k = 0; k < grads.size(); ++k) splat_grads[list[k]] += grads[k];
  }

  GradientBuffer out;
  const int nsh = sh_coeff_count(set.sh_degree);
  out.gaussians.resize(set.size());
  for (auto& gg : out.gaussians) gg.sh = ShCoeffs::Zero(nsh);
  out.mean2d.assign(set.size(), Vec2::Zero());
  out.visible.assign(set.size(), 0);

  const Pose pose = view.effective_pose();
  const Mat3& rot = pose.rotation;
  const Vec3& trans = pose.translation;
  const Intrinsics& intr = view.intrinsics;

  struct PosePartial {
    Mat3 d_rot = Mat3::Zero();
    Vec3 d_trans = Vec3::Zero();
  };
  std::vector<PosePartial> pose_partials(frame.splats.size());

  parallel_for(frame.splats.size(), settings.threads, [&](std::size_t si) {
    const Splat2D& s = frame.splats[si];
    const SplatGrad2D& sg = splat_grads[si];
    const Gaussian3D& g = set.gaussians[s.source_index];
    GaussianGrad& gg = out.gaussians[s.source_index];
    PosePartial& pp = pose_partials[si];
    out.visible[s.source_index] = 1;
    out.mean2d[s.source_index] = Vec2(sg.mean_x, sg.mean_y);

    const double sig = s.opacity;
    gg.opacity_logit = sg.opacity * sig * (1.0 - sig);

    Vec3 dL_dmu = Vec3::Zero();
    if (s.luminance_raw > 0.0) {
      const ShBasis basis = sh_basis(set.sh_degree, s.view_dir);
      for (int k = 0; k < nsh; ++k) gg.sh[k] = sg.luminance * basis[k];
      if (set.sh_degree > 0) {
        const Vec3 dL_ddir = sg.luminance * sh_luminance_direction_grad(g, s.view_dir);
        const Vec3 dL_dv =
            (dL_ddir - s.view_dir * s.view_dir.dot(dL_ddir)) / s.view_distance;
        // v = mu - center, center = -R^T T
        dL_dmu += dL_dv;
        const Vec3 dL_dcenter = -dL_dv;
        pp.d_trans += -rot * dL_dcenter;
        pp.d_rot += -trans * dL_dcenter.transpose();
      }
    }

    // Screen covariance chain.
    Mat2 dL_dconic;
    dL_dconic << sg.conic00, sg.conic01, sg.conic01, sg.conic11;
    const Mat2& a = s.inv_cov2d;
    const Mat2 dL_dcov2d = -a * dL_dconic * a;

    const Vec3& pc = s.cam_point;
    const double z = pc.z();
    Mat23 jac;
    jac << intr.fx / z, 0.0, -intr.fx * pc.x() / (z * z), 0.0, intr.fy / z,
        -intr.fy * pc.y() / (z * z);
    const Mat3 sigma = build_covariance(g.log_scale, g.rotation);
    const Mat3 sigma_cam = rot * sigma * rot.transpose();
    const Mat3 dL_dsigma_cam = jac.transpose() * dL_dcov2d * jac;
    const Mat23 dL_djac = 2.0 * dL_dcov2d * jac * sigma_cam;
    const Mat3 dL_dsigma = rot.transpose() * dL_dsigma_cam * rot;
    pp.d_rot += 2.0 * dL_dsigma_cam * rot * sigma;

    const CovarianceGrad cg = backprop_covariance(g.log_scale, g.rotation, dL_dsigma);
    gg.log_scale = cg.log_scale;
    gg.rotation = cg.rotation;

    Vec3 dL_dpc = Vec3::Zero();
    const double fx = intr.fx, fy = intr.fy;
    const double z2 = z * z, z3 = z2 * z;
    dL_dpc.x() += dL_djac(0, 2) * (-fx / z2);
    dL_dpc.y() += dL_djac(1, 2) * (-fy / z2);
    dL_dpc.z() += dL_djac(0, 0) * (-fx / z2) + dL_djac(0, 2) * (2.0 * fx * pc.x() / z3) +
                  dL_djac(1, 1) * (-fy / z2) + dL_djac(1, 2) * (2.0 * fy * pc.y() / z3);
    // projected mean
    dL_dpc.x() += sg.mean_x * fx / z;
    dL_dpc.y() += sg.mean_y * fy / z;
    dL_dpc.z() += -sg.mean_x * fx * pc.x() / z2 - sg.mean_y * fy * pc.y() / z2;

    // pc = R mu + T
    dL_dmu += rot.transpose() * dL_dpc;
    pp.d_rot += dL_dpc * g.position.transpose();
    pp.d_trans += dL_dpc;
    gg.position = dL_dmu;
  });

  Mat3 dL_drot = Mat3::Zero();
  Vec3 dL_dtrans = Vec3::Zero();
  for (const auto& pp : pose_partials) {
    dL_drot += pp.d_rot;
    dL_dtrans += pp.d_trans;
  }
  // R' = R0 exp([phi]x), T' = T0 + dT
  const Mat3 e = so3_exp(view.delta.rotation);
  const Mat3 h = e.transpose() * (view.pose.rotation.transpose() * dL_drot);
  const Vec3 g_w(h(2, 1) - h(1, 2), h(0, 2) - h(2, 0), h(1, 0) - h(0, 1));
  out.pose.rotation = so3_right_jacobian(view.delta.rotation).transpose() * g_w;
  out.pose.translation = dL_dtrans;

  auto finite = [](const GaussianGrad& gg) {
    return gg.position.allFinite() && gg.log_scale.allFinite() && gg.rotation.allFinite() &&
           std::isfinite(gg.opacity_logit) && gg.sh.allFinite();
  };
  for (std::size_t i = 0; i < out.gaussians.size(); ++i) {
    if (!finite(out.gaussians[i])) {
      throw GradientError("non-finite gradient for gaussian " + std::to_string(i));
    }
  }
  if (!out.pose.rotation.allFinite() || !out.pose.translation.allFinite()) {
    throw GradientError("non-finite pose gradient");
  }
  return out;
}

}  // namespace flamegs
