#include "flamegs/phantom.hpp"

#include "flamegs/gaussian_model.hpp"
#include "flamegs/parallel.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace flamegs {

using nlohmann::json;

void PhantomSpec::validate() const {
  for (const auto& c : components) {
    if (!(c.weight >= 0.0) || !c.mean.allFinite() || !c.covariance.allFinite()) {
      throw InvalidParameter("phantom component has invalid weight or mean");
    }
    if ((c.covariance - c.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 ||
        c.covariance.llt().info() != Eigen::Success) {
      throw InvalidParameter("phantom covariance must be symmetric positive definite");
    }
  }
}

PhantomSpec make_random_phantom(const Vec3& center, const PhantomOptions& options) {
  if (options.components < 1) throw InvalidParameter("phantom needs at least one component");
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  PhantomSpec spec;
  spec.seed = options.seed;
  for (int i = 0; i < options.components; ++i) {
    PhantomComponent c;
    Vec3 stds;
    for (int a = 0; a < 3; ++a) {
      stds[a] = options.min_std + (options.max_std - options.min_std) * unit(rng);
    }
    Vec4 q(normal(rng), normal(rng), normal(rng), normal(rng));
    const Mat3 rot = quaternion_to_rotation(q);
    c.covariance = rot * stds.cwiseAbs2().asDiagonal() * rot.transpose();
    c.covariance = 0.5 * (c.covariance + c.covariance.transpose());
    // Keep mean + 2 * largest std inside the ball.
    const double r_max = std::max(0.0, options.ball_radius - 2.0 * stds.maxCoeff());
    Vec3 dir(normal(rng), normal(rng), normal(rng));
    dir.normalize();
    c.mean = center + dir * r_max * std::cbrt(unit(rng));
    c.weight = 0.5 + unit(rng);
    spec.components.push_back(c);
  }
  return spec;
}

double eval_phantom(const PhantomSpec& spec, const Vec3& x) {
  static const double norm = std::pow(2.0 * std::numbers::pi, 1.5);
  double acc = 0.0;
  for (const auto& c : spec.components) {
    const Eigen::LLT<Mat3> llt(c.covariance);
    const Vec3 d = x - c.mean;
    const Vec3 y = llt.matrixL().solve(d);
    const double det_sqrt = llt.matrixL().determinant();
    acc += c.weight * std::exp(-0.5 * y.squaredNorm()) / (norm * det_sqrt);
  }
  return acc;
}

CameraRig make_rig(const RigOptions& options) {
  if (options.cameras < 2) throw InvalidParameter("rig needs at least two cameras");
  if (!(options.radius > 0) || !(options.focal > 0)) {
    throw InvalidParameter("rig radius and focal length must be positive");
  }
  CameraRig rig;
  for (int i = 0; i < options.cameras; ++i) {
    const double phi = 2.0 * std::numbers::pi * i / options.cameras;
    const Vec3 center = options.target + options.radius * Vec3(std::cos(phi), std::sin(phi), 0.0);
    const Vec3 forward = (options.target - center).normalized();
    const Vec3 down(0, 0, -1);
    const Vec3 right = down.cross(forward).normalized();
    const Vec3 y_axis = forward.cross(right);
    CameraView v;
    v.id = "cam" + std::to_string(i);
    v.intrinsics = Intrinsics{options.focal, options.focal, (options.width - 1) / 2.0,
                              (options.height - 1) / 2.0, options.width, options.height};
    v.pose.rotation.row(0) = right.transpose();
    v.pose.rotation.row(1) = y_axis.transpose();
    v.pose.rotation.row(2) = forward.transpose();
    v.pose.translation = -v.pose.rotation * center;
    rig.push_back(v);
  }
  return rig;
}

double integrate_phantom_ray(const PhantomSpec& spec, const Ray& ray, const GridGeometry& bounds,
                             int samples) {
  const auto span = clip_ray_to_box(ray, bounds.bbox_min, bounds.bbox_max);
  if (!span) return 0.0;
  const double dt = (span->second - span->first) / samples;
  double acc = 0.0;
  for (int s = 0; s < samples; ++s) {
    const double t = span->first + (s + 0.5) * dt;
    acc += eval_phantom(spec, ray.origin + t * ray.direction);
  }
  return acc * dt;
}

namespace {

// Mixture with its Cholesky factors prepared once for fast pixel loops.
struct PreparedComponent {
  Vec3 mean;
  Eigen::Matrix3d l_inv;
  double scale;
};

std::vector<PreparedComponent> prepare(const PhantomSpec& spec) {
  const double norm = std::pow(2.0 * std::numbers::pi, 1.5);
  std::vector<PreparedComponent> out;
  for (const auto& c : spec.components) {
    const Eigen::LLT<Mat3> llt(c.covariance);
    const Mat3 l = llt.matrixL();
    out.push_back({c.mean, l.inverse(), c.weight / (norm * l.determinant())});
  }
  return out;
}

}  // namespace

Dataset render_phantom_views(const PhantomSpec& spec, const CameraRig& rig,
                             const GridGeometry& bounds, const PhantomRenderOptions& options) {
  if (options.samples_per_ray < 64) throw InvalidParameter("samples_per_ray must be >= 64");
  spec.validate();
  const auto comps = prepare(spec);
  Dataset data;
  data.views = rig;
  data.phantom = spec;
  for (auto& view : data.views) {
    const int w = view.intrinsics.width, h = view.intrinsics.height;
    view.image = Image(w, h);
    parallel_for(static_cast<std::size_t>(h), options.threads, [&](std::size_t yy) {
      const int y = static_cast<int>(yy);
      for (int x = 0; x < w; ++x) {
        const Ray ray = pixel_ray(view, Vec2(x, y));
        const auto span = clip_ray_to_box(ray, bounds.bbox_min, bounds.bbox_max);
        if (!span) continue;
        const int n = options.samples_per_ray;
        const double dt = (span->second - span->first) / n;
        double acc = 0.0;
        for (const auto& c : comps) {
          // Along the ray the Mahalanobis form is a quadratic in t.
          const Vec3 o = c.l_inv * (ray.origin - c.mean);
          const Vec3 d = c.l_inv * ray.direction;
          const double aa = d.squaredNorm(), bb = o.dot(d), cc = o.squaredNorm();
          double sum = 0.0;
          for (int s = 0; s < n; ++s) {
            const double t = span->first + (s + 0.5) * dt;
            sum += std::exp(-0.5 * (aa * t * t + 2.0 * bb * t + cc));
          }
          acc += c.scale * sum;
        }
        view.image(x, y) = acc * dt;
      }
    });
  }
  double max_value = 0.0;
  for (const auto& v : data.views) {
    for (double p : v.image.pixels) max_value = std::max(max_value, p);
  }
  if (max_value > 0.0) {
    const double s = options.normalize_max / max_value;
    for (auto& v : data.views) {
      for (double& p : v.image.pixels) p *= s;
    }
  }
  if (options.noise_std > 0.0) {
    std::mt19937_64 rng(options.noise_seed);
    std::normal_distribution<double> noise(0.0, options.noise_std);
    for (auto& v : data.views) {
      for (double& p : v.image.pixels) p = std::clamp(p + noise(rng), 0.0, 1.0);
    }
  }
  return data;
}

std::string phantom_to_json_string(const PhantomSpec& spec) {
  json comps = json::array();
  for (const auto& c : spec.components) {
    std::vector<double> cov(9);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) cov[3 * i + j] = c.covariance(i, j);
    }
    comps.push_back({{"weight", c.weight},
                     {"mean", {c.mean.x(), c.mean.y(), c.mean.z()}},
                     {"covariance", cov}});
  }
  return json{{"seed", spec.seed}, {"components", comps}}.dump(2);
}

PhantomSpec phantom_from_json_string(const std::string& text) {
  PhantomSpec spec;
  try {
    const json j = json::parse(text);
    spec.seed = j.value("seed", std::uint64_t{0});
    for (const auto& c : j.at("components")) {
      PhantomComponent pc;
      pc.weight = c.at("weight").get<double>();
      const auto m = c.at("mean").get<std::vector<double>>();
      const auto cov = c.at("covariance").get<std::vector<double>>();
      if (m.size() != 3 || cov.size() != 9) throw FormatError("phantom component arity");
      pc.mean = Vec3(m[0], m[1], m[2]);
      for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) pc.covariance(i, k) = cov[3 * i + k];
      }
      spec.components.push_back(pc);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("phantom json: ") + e.what());
  }
  spec.validate();
  return spec;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  write_rig_json(dir / "rig.json", data.views);
  for (const auto& v : data.views) write_pgm16(dir / ("view_" + v.id + ".pgm"), v.image);
  if (data.phantom) {
    std::ofstream os(dir / "phantom.json");
    if (!os) throw std::runtime_error("cannot write phantom.json in " + dir.string());
    os << phantom_to_json_string(*data.phantom) << '\n';
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset data;
  data.views = read_rig_json(dir / "rig.json");
  for (auto& v : data.views) {
    v.image = read_pgm16(dir / ("view_" + v.id + ".pgm"));
    if (v.image.width != v.intrinsics.width || v.image.height != v.intrinsics.height) {
      throw FormatError("image size of " + v.id + " does not match its intrinsics");
    }
  }
  if (std::filesystem::exists(dir / "phantom.json")) {
    std::ifstream is(dir / "phantom.json");
    std::ostringstream ss;
    ss << is.rdbuf();
    data.phantom = phantom_from_json_string(ss.str());
  }
  return data;
}

}  // namespace flamegs
