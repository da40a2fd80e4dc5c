#include "flamegs/camera.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <sstream>

namespace flamegs {

using nlohmann::json;

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0) || !std::isfinite(fx) || !std::isfinite(fy)) {
    throw InvalidParameter("focal lengths must be positive and finite");
  }
  if (width <= 0 || height <= 0) throw InvalidParameter("image size must be positive");
  if (!(cx > 0 && cx < width) || !(cy > 0 && cy < height)) {
    throw InvalidParameter("principal point must lie inside the image");
  }
}

void Pose::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw InvalidParameter("pose has non-finite entries");
  }
  if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(rotation.determinant() - 1.0) > 1e-6) {
    throw InvalidParameter("pose rotation is not a proper rotation");
  }
}

Pose CameraView::effective_pose() const { return apply_pose_delta(pose, delta); }

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Mat3 so3_exp(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = skew(phi);
  double a, b;
  if (theta2 < 1e-12) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * k + b * k * k;
}

Mat3 so3_right_jacobian(const Vec3& phi) {
  const double theta2 = phi.squaredNorm();
  const Mat3 k = skew(phi);
  double a, b;
  if (theta2 < 1e-10) {
    a = 0.5 - theta2 / 24.0;
    b = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = (1.0 - std::cos(theta)) / theta2;
    b = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() - a * k + b * k * k;
}

Pose apply_pose_delta(const Pose& pose, const PoseDelta& delta) {
  if (delta.rotation.isZero(0.0) && delta.translation.isZero(0.0)) return pose;
  Pose out;
  out.rotation = pose.rotation * so3_exp(delta.rotation);
  out.translation = pose.translation + delta.translation;
  return out;
}

std::optional<ProjectedPoint> project_point(const Vec3& world, const CameraView& view) {
  const Pose p = view.effective_pose();
  const Vec3 c = p.rotation * world + p.translation;
  if (!(c.z() > kZNear)) return std::nullopt;
  const Intrinsics& k = view.intrinsics;
  return ProjectedPoint{Vec2(k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy), c.z()};
}

std::optional<Mat23> projection_jacobian(const Vec3& cam_point, const Intrinsics& intr) {
  const double z = cam_point.z();
  if (!(z > kZNear)) return std::nullopt;
  Mat23 j;
  j << intr.fx / z, 0.0, -intr.fx * cam_point.x() / (z * z), 0.0, intr.fy / z,
      -intr.fy * cam_point.y() / (z * z);
  return j;
}

std::optional<Mat2> project_covariance(const Mat3& sigma, const CameraView& view,
                                       const Vec3& cam_point) {
  const auto j = projection_jacobian(cam_point, view.intrinsics);
  if (!j) return std::nullopt;
  const Mat3 w = view.effective_pose().rotation;
  Mat2 cov = (*j) * w * sigma * w.transpose() * j->transpose();
  cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
  cov(0, 0) += kCovarianceFloor;
  cov(1, 1) += kCovarianceFloor;
  return cov;
}

Ray pixel_ray(const CameraView& view, const Vec2& pixel) {
  const Intrinsics& k = view.intrinsics;
  if (!pixel.allFinite() || pixel.x() < -0.5 || pixel.x() > k.width - 0.5 || pixel.y() < -0.5 ||
      pixel.y() > k.height - 0.5) {
    throw std::invalid_argument("pixel outside image bounds");
  }
  const Pose p = view.effective_pose();
  const Vec3 dir_cam((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
  Ray r;
  r.origin = p.center();
  r.direction = (p.rotation.transpose() * dir_cam).normalized();
  return r;
}

namespace {

json view_to_json(const CameraView& v) {
  json j;
  j["id"] = v.id;
  j["width"] = v.intrinsics.width;
  j["height"] = v.intrinsics.height;
  j["fx"] = v.intrinsics.fx;
  j["fy"] = v.intrinsics.fy;
  j["cx"] = v.intrinsics.cx;
  j["cy"] = v.intrinsics.cy;
  std::vector<double> r(9), t(3);
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 3; ++c) r[3 * i + c] = v.pose.rotation(i, c);
    t[i] = v.pose.translation[i];
  }
  j["R"] = r;
  j["t"] = t;
  return j;
}

CameraView view_from_json(const json& j) {
  CameraView v;
  try {
    v.id = j.at("id").get<std::string>();
    v.intrinsics.width = j.at("width").get<int>();
    v.intrinsics.height = j.at("height").get<int>();
    v.intrinsics.fx = j.at("fx").get<double>();
    v.intrinsics.fy = j.at("fy").get<double>();
    v.intrinsics.cx = j.at("cx").get<double>();
    v.intrinsics.cy = j.at("cy").get<double>();
    const auto r = j.at("R").get<std::vector<double>>();
    const auto t = j.at("t").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) throw FormatError("camera R must have 9 and t 3 entries");
    for (int i = 0; i < 3; ++i) {
      for (int c = 0; c < 3; ++c) v.pose.rotation(i, c) = r[3 * i + c];
      v.pose.translation[i] = t[i];
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("rig json: ") + e.what());
  }
  v.intrinsics.validate();
  v.pose.validate();
  return v;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

std::string rig_to_json_string(const CameraRig& rig) {
  json cams = json::array();
  for (const auto& v : rig) cams.push_back(view_to_json(v));
  return json{{"cameras", cams}}.dump(2);
}

CameraRig rig_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("rig json: ") + e.what());
  }
  if (!j.contains("cameras") || !j["cameras"].is_array()) {
    throw FormatError("rig json: missing 'cameras' array");
  }
  CameraRig rig;
  for (const auto& c : j["cameras"]) rig.push_back(view_from_json(c));
  return rig;
}

CameraRig read_rig_json(const std::filesystem::path& path) {
  return rig_from_json_string(read_text(path));
}

void write_rig_json(const std::filesystem::path& path, const CameraRig& rig) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << rig_to_json_string(rig) << '\n';
}

std::string pose_deltas_to_json_string(const CameraRig& views) {
  json arr = json::array();
  for (const auto& v : views) {
    arr.push_back({{"id", v.id},
                   {"delta_rot", {v.delta.rotation.x(), v.delta.rotation.y(), v.delta.rotation.z()}},
                   {"delta_t",
                    {v.delta.translation.x(), v.delta.translation.y(), v.delta.translation.z()}}});
  }
  return arr.dump(2);
}

void apply_pose_deltas_json(const std::string& text, CameraRig& views) {
  json arr;
  try {
    arr = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("pose delta json: ") + e.what());
  }
  for (const auto& e : arr) {
    const auto id = e.at("id").get<std::string>();
    const auto r = e.at("delta_rot").get<std::vector<double>>();
    const auto t = e.at("delta_t").get<std::vector<double>>();
    if (r.size() != 3 || t.size() != 3) throw FormatError("pose delta entries need 3 values");
    for (auto& v : views) {
      if (v.id == id) {
        v.delta.rotation = Vec3(r[0], r[1], r[2]);
        v.delta.translation = Vec3(t[0], t[1], t[2]);
      }
    }
  }
}

}  // namespace flamegs
