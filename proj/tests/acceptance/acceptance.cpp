// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// writes artifacts (reports, run directories) under ./acceptance_out.
//
// Environment:
//   FLAMEGS_THREADS                worker threads (default 1)
//   FLAMEGS_ACCEPTANCE_CRITERIA    comma list of criteria to run (default all)
//   FLAMEGS_ACCEPTANCE_ITERS       training iterations (default 10000; lower
//                                  values are reported as a reduced run)

#include "flamegs/evaluate.hpp"
#include "flamegs/memory.hpp"
#include "flamegs/metrics.hpp"
#include "gradcheck.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace flamegs;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

void log(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int env_int(const char* name, int fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::atoi(v) : fallback;
}

// ---------------------------------------------------------------------------
// Shared desk-scale setup.

struct Desk {
  Dataset data;
  GridGeometry bounds;
};

Desk make_desk(int threads) {
  RigOptions ro;  // 10 cameras, 200x256
  const CameraRig rig = make_rig(ro);
  Desk d;
  d.bounds = default_grid_for_rig(rig, 50);
  PhantomOptions po;  // 5 components, seed 7
  const PhantomSpec spec = make_random_phantom(0.5 * (d.bounds.bbox_min + d.bounds.bbox_max), po);
  PhantomRenderOptions pr;
  pr.threads = threads;
  d.data = render_phantom_views(spec, rig, d.bounds, pr);
  return d;
}

std::vector<CameraView> without(const CameraRig& views, std::size_t held) {
  std::vector<CameraView> out;
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (i != held) out.push_back(views[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients vs central differences.

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  const auto scene = testutil::make_grad_scene(2024, 20, 3, 64, 1);
  const auto r = testutil::check_gradients(scene, 1e-6, 1e-3, 1e-7);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = r.failures == 0 && secs < 120.0;
  o.detail = fmt("%d entries, %d outside max(1e-3 rel, 1e-7 abs), worst %.2f of tolerance (%s), "
                 "%.1f s (limit 120 s)",
                 r.checked, r.failures, r.worst_ratio, r.worst.c_str(), secs);
  return o;
}

// ---------------------------------------------------------------------------
// 4. ART on a small consistent system vs a dense least-squares solve.

Outcome criterion_art_oracle() {
  const auto t0 = Clock::now();
  GridGeometry g;
  g.dims = {6, 6, 6};
  g.bbox_min = Vec3::Zero();
  g.bbox_max = Vec3::Ones();
  const int n_vox = 216;
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // Axis-aligned rays through every voxel column plus random oblique rays.
  std::vector<Ray> rays;
  for (int a = 0; a < 3; ++a) {
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        Vec3 o = Vec3::Zero(), d = Vec3::Zero();
        const int b = (a + 1) % 3, c = (a + 2) % 3;
        o[a] = -1.0;
        o[b] = (i + 0.5) / 6.0;
        o[c] = (j + 0.5) / 6.0;
        d[a] = 1.0;
        rays.push_back({o, d});
      }
    }
  }
  while (rays.size() < 900) {
    Ray r;
    Vec3 dir(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
    r.origin = Vec3::Constant(0.5) + 2.0 * dir.normalized();
    const Vec3 target(u(rng), u(rng), u(rng));
    r.direction = (target - r.origin).normalized();
    rays.push_back(r);
  }
  std::vector<WeightRow> rows;
  for (std::size_t i = 0; i < rays.size(); ++i) rows.push_back(build_weight_row(rays[i], g, i));

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), n_vox);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (const auto& e : rows[r].entries) w(static_cast<Eigen::Index>(r), e.voxel) += e.length;
  }
  Eigen::VectorXd x_true(n_vox);
  for (int i = 0; i < n_vox; ++i) x_true[i] = 0.2 + u(rng);
  const Eigen::VectorXd b = w * x_true;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(w);
  const Eigen::VectorXd x_ls = qr.solve(b);
  const double ls_residual = (w * x_ls - b).norm() / b.norm();

  VoxelGrid zero(g, 0.0);
  std::vector<double> meas(b.data(), b.data() + b.size());
  const VoxelGrid x = art_reconstruct(rows, meas, zero, 0.5, 500);
  const Eigen::Map<const Eigen::VectorXd> xv(x.values.data(), n_vox);
  const double residual = (w * xv - b).norm() / b.norm();
  const double dist = (xv - x_ls).norm() / x_ls.norm();

  // Weight rows vs dense midpoint sampling.
  double worst_row = 0.0;
  for (std::size_t r = 0; r < 200; ++r) {
    const Ray& ray = rays[rays.size() - 1 - r];
    const auto span = clip_ray_to_box(ray, g.bbox_min, g.bbox_max);
    if (!span) continue;
    std::map<std::uint32_t, double> sampled;
    const int samples = 200000;
    const double dt = (span->second - span->first) / samples;
    for (int s = 0; s < samples; ++s) {
      const Vec3 p = ray.origin + (span->first + (s + 0.5) * dt) * ray.direction;
      std::array<int, 3> c{};
      for (int a = 0; a < 3; ++a) c[a] = std::clamp(static_cast<int>(p[a] * 6.0), 0, 5);
      sampled[static_cast<std::uint32_t>(g.index(c[0], c[1], c[2]))] += dt;
    }
    const WeightRow& row = rows[rays.size() - 1 - r];
    double err = 0.0, total = 0.0;
    std::set<std::uint32_t> seen;
    for (const auto& e : row.entries) {
      err += std::abs(sampled[e.voxel] - e.length);
      total += e.length;
      seen.insert(e.voxel);
    }
    for (const auto& [v, len] : sampled) {
      if (!seen.count(v)) err += len;
    }
    worst_row = std::max(worst_row, err / total);
  }
  const double secs = seconds_since(t0);

  Outcome o;
  o.pass = qr.rank() == n_vox && residual < 1e-3 && worst_row < 0.01 && secs < 60.0;
  o.detail = fmt("rank %ld/%d, ART residual %.2e (limit 1e-3), least-squares residual %.1e, "
                 "|x_art - x_ls|/|x_ls| %.2e, worst weight-row deviation %.3f%% (limit 1%%), %.1f s",
                 static_cast<long>(qr.rank()), n_vox, residual, ls_residual, dist,
                 100.0 * worst_row, secs);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Projected covariance vs Monte-Carlo, and pixel ray round trips.

Outcome criterion_projection(const Desk& desk) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_cov = 0.0, worst_angle = 0.0;
  const int gaussians = 24;
  const int samples = 400000;
  for (int k = 0; k < gaussians; ++k) {
    CameraView view = desk.data.views[static_cast<std::size_t>(k) % desk.data.views.size()];
    view.delta.rotation = testutil::random_vec(rng, -0.01, 0.01);
    view.delta.translation = testutil::random_vec(rng, -0.01, 0.01);
    const Vec3 mu = testutil::random_vec(rng, -0.2, 0.2);
    const Vec3 log_scale = testutil::random_vec(rng, std::log(0.002), std::log(0.01));
    const Mat3 sigma = build_covariance(log_scale, testutil::random_quaternion(rng));
    const Pose pose = view.effective_pose();
    const Vec3 cam_point = pose.rotation * mu + pose.translation;
    const double dist = cam_point.z();
    // Full 3-sigma extent of the largest axis.
    const double angle = 2.0 * std::atan(3.0 * std::exp(log_scale.maxCoeff()) / dist);
    worst_angle = std::max(worst_angle, angle * 180.0 / M_PI);

    const Eigen::LLT<Mat3> llt(sigma);
    const Mat3 l = llt.matrixL();
    Vec2 mean = Vec2::Zero();
    Mat2 second = Mat2::Zero();
    std::vector<Vec2> pts;
    pts.reserve(samples);
    for (int s = 0; s < samples; ++s) {
      const Vec3 x = mu + l * Vec3(n01(rng), n01(rng), n01(rng));
      const auto p = project_point(x, view);
      if (!p) continue;
      pts.push_back(p->pixel);
      mean += p->pixel;
    }
    mean /= static_cast<double>(pts.size());
    for (const auto& p : pts) second += (p - mean) * (p - mean).transpose();
    second /= static_cast<double>(pts.size() - 1);
    const auto model = project_covariance(sigma, view, cam_point);
    if (!model) return {false, "project_covariance rejected a visible Gaussian"};
    // The model carries the screen-space floor; the projection itself excludes it.
    const Mat2 sigma2 = *model - kCovarianceFloor * Mat2::Identity();
    worst_cov = std::max(worst_cov, (second - sigma2).norm() / sigma2.norm());
  }

  double worst_px = 0.0;
  for (const auto& v : desk.data.views) {
    CameraView view = v;
    view.delta.rotation = testutil::random_vec(rng, -0.02, 0.02);
    view.delta.translation = testutil::random_vec(rng, -0.02, 0.02);
    const int w = view.intrinsics.width, h = view.intrinsics.height;
    for (int j = 0; j < 16; ++j) {
      for (int i = 0; i < 16; ++i) {
        const Vec2 px(-0.5 + (i + 0.5) * w / 16.0, -0.5 + (j + 0.5) * h / 16.0);
        const Ray r = pixel_ray(view, px);
        for (double t : {0.5, 1.0, 1.5}) {
          const auto p = project_point(r.origin + t * r.direction, view);
          if (!p) return {false, "round-trip point fell behind the camera"};
          worst_px = std::max(worst_px, (p->pixel - px).norm());
        }
      }
    }
  }
  Outcome o;
  o.pass = worst_cov < 0.05 && worst_angle < 5.0 && worst_px < 1e-6;
  o.detail = fmt("%d Gaussians (max subtended %.2f deg), worst covariance deviation %.2f%% "
                 "(limit 5%%); pixel round trip worst %.2e px over 10 x 16x16 lattices (limit 1e-6)",
                 gaussians, worst_angle, 100.0 * worst_cov, worst_px);
  return o;
}

// ---------------------------------------------------------------------------
// 6a. Every seeded Gaussian lies in a voxel pierced by above-threshold rays
// of at least K views, checked by brute force ray/box tests.

Outcome criterion_hull(const Desk& desk, int threads) {
  const auto& views = desk.data.views;
  InitConfig ic;
  GridGeometry grid = desk.bounds;
  grid.dims = {ic.grid_resolution, ic.grid_resolution, ic.grid_resolution};
  const OccupancyGrid occ = carve_grid(views, grid, ic, threads);
  const GaussianSet seeds = seed_gaussians(occ, ic, 0);
  const int k_required = ic.min_view_agreement > 0 ? ic.min_view_agreement
                                                   : static_cast<int>(views.size());

  std::vector<std::vector<Ray>> bright(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    for (const auto& px : threshold_mask(views[v], ic.intensity_threshold, ic.pixel_stride)) {
      bright[v].push_back(pixel_ray(views[v], Vec2(px.x, px.y)));
    }
  }
  const Vec3 pitch = grid.pitch();
  std::size_t inside = 0;
  std::map<std::size_t, bool> verdicts;
  for (const auto& g : seeds.gaussians) {
    std::array<int, 3> c{};
    bool in_box = true;
    for (int a = 0; a < 3; ++a) {
      const double f = (g.position[a] - grid.bbox_min[a]) / pitch[a];
      c[a] = static_cast<int>(std::floor(f));
      in_box = in_box && c[a] >= 0 && c[a] < grid.dims[a];
    }
    if (!in_box) continue;
    const std::size_t idx = grid.index(c[0], c[1], c[2]);
    auto it = verdicts.find(idx);
    if (it == verdicts.end()) {
      const Vec3 lo = grid.bbox_min + Vec3(c[0], c[1], c[2]).cwiseProduct(pitch);
      const Vec3 hi = lo + pitch;
      int hits = 0;
      for (std::size_t v = 0; v < views.size(); ++v) {
        for (const auto& r : bright[v]) {
          if (clip_ray_to_box(r, lo, hi)) {
            ++hits;
            break;
          }
        }
      }
      it = verdicts.emplace(idx, hits >= k_required).first;
    }
    inside += it->second;
  }
  Outcome o;
  o.pass = !seeds.empty() && inside == seeds.size();
  o.detail = fmt("%zu/%zu seeds inside the %d-view hull", inside, seeds.size(), k_required);
  return o;
}

// 6b. Wide random initialization in the spirit of RAIN-GS: as many Gaussians
// as the ray-traced init, uniform over a cube three times the extent of the
// camera centres, scaled by nearest-neighbour spacing like a point-cloud init.
GaussianSet wide_random_init(const std::vector<CameraView>& train_views,
                             const GridGeometry& bounds, const InitConfig& ic) {
  const std::size_t count = ray_traced_init(train_views, bounds, ic, 0, 1).size();
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (const auto& v : train_views) {
    const Vec3 c = v.effective_pose().center();
    lo = lo.cwiseMin(c);
    hi = hi.cwiseMax(c);
  }
  const Vec3 center = 0.5 * (lo + hi);
  const double half = 1.5 * (hi - lo).maxCoeff();
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-half, half);
  std::vector<Vec3> positions;
  for (std::size_t i = 0; i < count; ++i) positions.push_back(center + Vec3(u(rng), u(rng), u(rng)));
  GridGeometry buckets;
  buckets.dims = {16, 16, 16};
  buckets.bbox_min = center - Vec3::Constant(half);
  buckets.bbox_max = center + Vec3::Constant(half);
  const auto dist = mean_neighbor_distance(positions, buckets, half / 10.0);
  GaussianSet set(0);
  for (std::size_t i = 0; i < count; ++i) {
    Gaussian3D g;
    g.position = positions[i];
    g.log_scale = Vec3::Constant(std::log(dist[i]));
    g.rotation = Vec4(1, 0, 0, 0);
    g.opacity_logit = logit(ic.initial_opacity);
    g.sh = ShCoeffs::Zero(1);
    g.sh[0] = ic.initial_luminance / kShC0;
    set.gaussians.push_back(g);
  }
  return set;
}

// ---------------------------------------------------------------------------
// 7/8. Two identical fold-0 runs written to disk.

std::string strip_wall_clock(const std::string& csv) {
  std::istringstream is(csv);
  std::string line, out;
  while (std::getline(is, line)) {
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    out += line.substr(0, c1) + line.substr(c2) + "\n";
  }
  return out;
}

Outcome criterion_density(const fs::path& run, const TrainConfig& tc) {
  std::istringstream is(slurp(run / "density.csv"));
  std::string line;
  std::getline(is, line);
  std::vector<int> its;
  double min_after = 1.0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) return {false, "malformed density.csv row: " + line};
    its.push_back(std::stoi(cells[0]));
    min_after = std::min(min_after, std::stod(cells[5]));
  }
  std::vector<int> expected;
  for (int it = tc.densify_start; it <= std::min(tc.densify_end, tc.iterations); ++it) {
    if (it % tc.densify_interval == 0) expected.push_back(it);
  }
  // Gaussian counts may only change at scheduled events.
  std::istringstream ls(slurp(run / "loss.csv"));
  std::getline(ls, line);
  std::size_t prev = 0;
  int off_schedule_changes = 0;
  std::set<int> event_set(its.begin(), its.end());
  {
    // The count before the first step is the initial set size.
    std::ifstream f(run / "initial.flgs", std::ios::binary);
    prev = read_flgs(f).size();
  }
  while (std::getline(ls, line)) {
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    const int it = std::stoi(cells[0]);
    const std::size_t count = std::stoul(cells[5]);
    if (count != prev && !event_set.count(it)) ++off_schedule_changes;
    prev = count;
  }
  Outcome o;
  o.pass = its == expected && min_after >= tc.prune_opacity && off_schedule_changes == 0;
  o.detail = fmt("%zu events at iterations %d..%d (expected %zu every %d in [%d, %d]), "
                 "min opacity after any event %.4f (limit %.2f), %d off-schedule count changes",
                 its.size(), its.empty() ? 0 : its.front(), its.empty() ? 0 : its.back(),
                 expected.size(), tc.densify_interval, tc.densify_start, tc.densify_end,
                 min_after, tc.prune_opacity, off_schedule_changes);
  return o;
}

Outcome criterion_determinism(const fs::path& a, const fs::path& b) {
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(a)) files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());
  int compared = 0, checkpoints = 0;
  std::vector<std::string> differing;
  for (const auto& f : files) {
    if (!fs::exists(b / f)) {
      differing.push_back(f + " (missing)");
      continue;
    }
    const std::string x = slurp(a / f), y = slurp(b / f);
    const bool same = f == "loss.csv" ? strip_wall_clock(x) == strip_wall_clock(y) : x == y;
    ++compared;
    if (f.rfind("ckpt_", 0) == 0 && f.size() > 5 && f.substr(f.size() - 5) == ".flgs") ++checkpoints;
    if (!same) differing.push_back(f);
  }
  Outcome o;
  o.pass = differing.empty() && checkpoints > 0 && compared > 0;
  std::string diff;
  for (const auto& d : differing) diff += " " + d;
  o.detail = fmt("%d files compared (%d FLGS checkpoints; loss.csv without wall_seconds), "
                 "%zu differ%s",
                 compared, checkpoints, differing.size(), diff.c_str());
  return o;
}

// ---------------------------------------------------------------------------
// 9. Wall time to training-view MAE < 0.01, evaluation overhead excluded.

double training_mae(const std::vector<CameraView>& views,
                    const std::function<Image(const CameraView&)>& render) {
  double acc = 0.0;
  for (const auto& v : views) acc += compare_images(render(v), v.image).mae;
  return acc / static_cast<double>(views.size());
}

Outcome criterion_convergence(const Desk& desk, const TrainConfig& base, int threads) {
  const double target = 0.01;
  const auto train_views = without(desk.data.views, 0);

  // FlameGS: initialization counts toward its time.
  double fgs_time = -1.0;
  int fgs_iter = -1;
  {
    double clock = 0.0;
    auto t0 = Clock::now();
    InitConfig ic;
    const GaussianSet init = ray_traced_init(train_views, desk.bounds, ic, 0, threads);
    TrainConfig tc = base;
    tc.threads = threads;
    tc.scene_extent = (desk.bounds.bbox_max - desk.bounds.bbox_min).maxCoeff();
    TrainState st(init, train_views, tc);
    clock += seconds_since(t0);
    RenderSettings rs;
    rs.threads = threads;
    for (int it = 1; it <= std::min(2000, tc.iterations); ++it) {
      t0 = Clock::now();
      train_step(st, tc);
      clock += seconds_since(t0);
      const double m = training_mae(st.views, [&](const CameraView& v) {
        return render_forward(st.set, v, rs).pixels;
      });
      if (m < target) {
        fgs_time = clock;
        fgs_iter = it;
        break;
      }
    }
  }

  // ART with materialized rows, 60^3, relaxation 0.01: row building counts.
  double art_time = -1.0, art_total = 0.0;
  int art_sweep = -1;
  {
    double clock = 0.0;
    auto t0 = Clock::now();
    GridGeometry grid = desk.bounds;
    grid.dims = {60, 60, 60};
    const auto rays = lattice_rays(train_views, 1);
    const auto b = gather_measurements(train_views, rays);
    const auto rows = build_weight_rows(train_views, rays, grid, threads);
    VoxelGrid x(grid, 0.0);
    clock += seconds_since(t0);
    t0 = Clock::now();
    art_reconstruct(rows, b, x, 0.01, 50, [&](const VoxelGrid& vol, const ArtProgress& p) {
      clock += seconds_since(t0);
      if (art_time < 0) {
        const double m = training_mae(train_views, [&](const CameraView& v) {
          return project_volume(vol, v, threads);
        });
        if (m < target) {
          art_time = clock;
          art_sweep = p.sweep;
        }
      }
      t0 = Clock::now();
    });
    clock += seconds_since(t0);
    art_total = clock;
  }

  Outcome o;
  if (fgs_time < 0) {
    o.pass = false;
    o.detail = "FlameGS did not reach training MAE < 0.01 within 2000 iterations";
    return o;
  }
  // If ART never reaches the target, its full run time is a lower bound.
  const double art_bound = art_time >= 0 ? art_time : art_total;
  o.pass = fgs_time < 0.25 * art_bound;
  o.detail = fmt("FlameGS reached training MAE < 0.01 at iteration %d after %.2f s; ART %s "
                 "%.2f s (sweep %d); ratio %.2f (limit 0.25)",
                 fgs_iter, fgs_time, art_time >= 0 ? "after" : "never, full run", art_bound,
                 art_sweep, fgs_time / art_bound);
  return o;
}

}  // namespace

int main() {
  const int threads = std::max(1, env_int("FLAMEGS_THREADS", 1));
  const int iterations = env_int("FLAMEGS_ACCEPTANCE_ITERS", 10000);
  std::set<int> wanted;
  if (const char* sel = std::getenv("FLAMEGS_ACCEPTANCE_CRITERIA"); sel && *sel) {
    std::istringstream is(sel);
    std::string tok;
    while (std::getline(is, tok, ',')) wanted.insert(std::stoi(tok));
  } else {
    for (int i = 1; i <= 9; ++i) wanted.insert(i);
  }
  const bool reduced = iterations != 10000;
  const fs::path out_dir = fs::current_path() / "acceptance_out";
  fs::create_directories(out_dir);

  std::map<int, Outcome> results;
  const std::map<int, std::string> names = {
      {1, "gradient correctness"},   {2, "desk-scale round trip"},
      {3, "baseline ordering"},      {4, "ART oracle equivalence"},
      {5, "projection fidelity"},    {6, "initialization safety"},
      {7, "density-control schedule"}, {8, "determinism"},
      {9, "loss convergence shape"}};
  // Result lines also go to a file, since ctest hides output of passing tests.
  std::ofstream results_file(out_dir / "acceptance_results.txt");
  auto say = [&](const std::string& line) {
    std::cout << line << std::flush;
    results_file << line << std::flush;
  };
  auto report = [&](int id, Outcome o) {
    say("criterion " + std::to_string(id) + " " + (o.pass ? "PASS" : "FAIL") + "  " +
        names.at(id) + ": " + o.detail + "\n");
    results[id] = std::move(o);
  };
  auto run = [&](int id, const std::function<Outcome()>& fn) {
    if (!wanted.count(id)) return;
    log("criterion " + std::to_string(id) + ": " + names.at(id));
    try {
      report(id, fn());
    } catch (const std::exception& e) {
      report(id, {false, std::string("exception: ") + e.what()});
    }
  };

  say("flamegs acceptance (threads " + std::to_string(threads) + ", training iterations " +
      std::to_string(iterations) + (reduced ? ", REDUCED RUN" : "") + ")\n");

  run(1, criterion_gradients);
  run(4, criterion_art_oracle);

  const bool needs_desk = wanted.count(2) || wanted.count(3) || wanted.count(5) ||
                          wanted.count(6) || wanted.count(7) || wanted.count(8) ||
                          wanted.count(9);
  if (!needs_desk) return 0;
  log("rendering the desk phantom");
  const Desk desk = make_desk(threads);
  write_dataset(out_dir / "desk_dataset", desk.data);

  run(5, [&] { return criterion_projection(desk); });

  EvalConfig cfg;
  cfg.threads = threads;
  cfg.train.iterations = iterations;
  cfg.bounds = desk.bounds;
  cfg.on_fold = [](const FoldMetrics& m) {
    log(fmt("fold %s: MAE %.5f PSNR %.2f SSIM %.4f in %.1f s", m.held_out.c_str(), m.mae, m.psnr,
            m.ssim, m.wall_seconds));
  };

  std::optional<MetricsReport> fgs, art;
  if (wanted.count(2) || wanted.count(3) || wanted.count(6)) {
    log("FlameGS cross-validation");
    EvalConfig fc = cfg;
    // Criterion 6 alone only needs the cam0 fold.
    if (!wanted.count(2) && !wanted.count(3)) fc.folds = {0};
    fgs = cross_validate(desk.data, Method::flamegs, fc);
  }
  run(2, [&] {
    double worst_fold = 0.0;
    for (const auto& f : fgs->folds) worst_fold = std::max(worst_fold, f.wall_seconds);
    Outcome o;
    o.pass = fgs->folds.size() == 10 && fgs->mean_ssim >= 0.95 && fgs->mean_psnr >= 35.0 &&
             worst_fold < 1800.0;
    o.detail = fmt("%zu folds: mean SSIM %.4f (>= 0.95), mean PSNR %.2f dB (>= 35), "
                   "mean MAE %.5f, slowest fold %.0f s (limit 1800 s)",
                   fgs->folds.size(), fgs->mean_ssim, fgs->mean_psnr, fgs->mean_mae, worst_fold);
    return o;
  });

  run(3, [&] {
    EvalConfig ac = cfg;
    ac.art.voxels = 60;
    ac.art.relaxation = 0.01;
    ac.art.iterations = 50;
    ac.art.materialize_rows = true;
    log("ART cross-validation");
    art = cross_validate(desk.data, Method::art, ac);
    const std::vector<MetricsReport> both = {*fgs, *art};
    std::ofstream(out_dir / "comparison_report.json") << reports_to_json_string(both) << "\n";
    const std::string table = reports_to_table(both);
    std::ofstream(out_dir / "comparison_report.txt") << table;
    say(table);
    Outcome o;
    const bool ssim_ok = art->mean_ssim < fgs->mean_ssim;
    const bool mae_ok = art->mean_mae > fgs->mean_mae;
    const bool time_ok = fgs->total_wall_seconds < art->total_wall_seconds;
    o.pass = ssim_ok && mae_ok && time_ok;
    o.detail = fmt("SSIM ART %.4f vs FlameGS %.4f [%s]; MAE ART %.5f vs FlameGS %.5f [%s]; "
                   "wall time FlameGS %.0f s vs ART %.0f s [%s]",
                   art->mean_ssim, fgs->mean_ssim, ssim_ok ? "ok" : "not lower", art->mean_mae,
                   fgs->mean_mae, mae_ok ? "ok" : "not higher", fgs->total_wall_seconds,
                   art->total_wall_seconds, time_ok ? "ok" : "FlameGS slower");
    return o;
  });

  run(6, [&] {
    Outcome hull = criterion_hull(desk, threads);
    EvalConfig rc = cfg;
    rc.folds = {0};
    rc.initializer = [&](const std::vector<CameraView>& tv, const GridGeometry& b) {
      return wide_random_init(tv, b, rc.init);
    };
    log("wide random initialization, fold cam0");
    const MetricsReport wide = cross_validate(desk.data, Method::flamegs, rc);
    const double ours = fgs->folds.front().psnr;
    const double theirs = wide.folds.front().psnr;
    Outcome o;
    o.pass = hull.pass && ours - theirs >= 5.0;
    o.detail = hull.detail + fmt("; held-out cam0 PSNR ray-traced %.2f dB vs wide random %.2f dB "
                                 "(gap %.2f, need >= 5)",
                                 ours, theirs, ours - theirs);
    return o;
  });

  if (wanted.count(7) || wanted.count(8)) {
    const auto train_views = without(desk.data.views, 0);
    const GaussianSet init = ray_traced_init(train_views, desk.bounds, cfg.init, 0, threads);
    TrainConfig tc = cfg.train;
    tc.threads = threads;
    tc.scene_extent = (desk.bounds.bbox_max - desk.bounds.bbox_min).maxCoeff();
    const fs::path a = out_dir / "run_a", b = out_dir / "run_b";
    fs::remove_all(a);
    fs::remove_all(b);
    log("training run A");
    train_to_directory(train_views, init, tc, a);
    run(7, [&] { return criterion_density(a, tc); });
    if (wanted.count(8)) {
      log("training run B");
      train_to_directory(train_views, init, tc, b);
      run(8, [&] { return criterion_determinism(a, b); });
    }
  }

  run(9, [&] { return criterion_convergence(desk, cfg.train, threads); });

  int passed = 0;
  for (const auto& [id, o] : results) passed += o.pass;
  say("summary: " + std::to_string(passed) + "/" + std::to_string(results.size()) +
      " criteria passed" + (reduced ? " (reduced run; tolerances unchanged)" : "") + "\n");
  return 0;
}
