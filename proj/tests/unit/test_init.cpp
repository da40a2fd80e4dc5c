#include "doctest.h"
#include "test_util.hpp"

#include "flamegs/init_raytrace.hpp"

#include <deque>
#include <fstream>
#include <set>

using namespace flamegs;

namespace {

std::vector<CameraView> ring_views(int n, const Vec3& target, int size, double f, double radius = 2.0) {
  std::vector<CameraView> out;
  for (int i = 0; i < n; ++i) {
    const double a = 2 * M_PI * i / n;
    out.push_back(testutil::look_at_view("c" + std::to_string(i),
                                         target + Vec3(radius * std::cos(a), radius * std::sin(a), 0.3 * (i % 3 - 1)),
                                         target, size, size, f));
  }
  return out;
}

GridGeometry cube(double half, int res) {
  GridGeometry g;
  g.dims = {res, res, res};
  g.bbox_min = Vec3::Constant(-half);
  g.bbox_max = Vec3::Constant(half);
  return g;
}

}  // namespace

TEST_CASE("threshold mask") {
  CameraView v = testutil::look_at_view("c", Vec3(2, 0, 0), Vec3::Zero(), 13, 9, 10);
  CHECK(threshold_mask(v, 0.05).empty());
  v.image = Image(13, 9, 1.0);
  CHECK(threshold_mask(v, 0.05).size() == 13u * 9u);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (double& p : v.image.pixels) p = u(rng);
  const auto got = threshold_mask(v, 0.4, 3);
  std::vector<PixelCoord> expect;
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 13; ++x) {
      if (x % 3 == 0 && y % 3 == 0 && v.image(x, y) > 0.4) expect.push_back({x, y});
    }
  }
  CHECK(got == expect);
}

TEST_CASE("fully bright views carve the frustum intersection") {
  auto views = ring_views(4, Vec3::Zero(), 41, 30);
  for (auto& v : views) v.image = Image(41, 41, 1.0);
  const GridGeometry g = cube(1.6, 16);
  InitConfig cfg;
  cfg.pixel_stride = 1;
  const OccupancyGrid occ = carve_grid(views, g, cfg);
  int inside_checked = 0, outside_checked = 0;
  for (std::size_t i = 0; i < g.voxel_count(); ++i) {
    const auto c = g.coords(i);
    // Classify by the voxel's 8 corners in every view.
    bool all_in = true, some_view_all_out = false;
    for (const auto& v : views) {
      int in = 0;
      for (int k = 0; k < 8; ++k) {
        const Vec3 corner = g.bbox_min + Vec3(c[0] + (k & 1), c[1] + ((k >> 1) & 1), c[2] + ((k >> 2) & 1))
                                             .cwiseProduct(g.pitch());
        const auto p = project_point(corner, v);
        if (p && p->pixel.x() > 0 && p->pixel.y() > 0 && p->pixel.x() < 40 && p->pixel.y() < 40) ++in;
      }
      if (in < 8) all_in = false;
      if (in == 0) {
        // All corners outside one image does not rule out the voxel crossing
        // the image; require the center to be well outside too.
        const auto pc = project_point(g.voxel_center(i), v);
        if (pc && (pc->pixel.x() < -10 || pc->pixel.x() > 50 || pc->pixel.y() < -10 || pc->pixel.y() > 50)) {
          some_view_all_out = true;
        }
      }
    }
    if (all_in) {
      ++inside_checked;
      REQUIRE(occ.occupied(i));
    }
    if (some_view_all_out) {
      ++outside_checked;
      REQUIRE_FALSE(occ.occupied(i));
    }
  }
  CHECK(inside_checked > 100);
  CHECK(outside_checked > 100);
}

TEST_CASE("rays through one point carve a connected cluster around it") {
  const Vec3 p(0.13, -0.07, 0.05);
  auto views = ring_views(5, p, 31, 40);
  for (auto& v : views) {
    v.image = Image(31, 31, 0.0);
    v.image(15, 15) = 1.0;  // principal point sees p
  }
  const GridGeometry g = cube(0.5, 20);
  InitConfig cfg;
  cfg.pixel_stride = 1;
  const OccupancyGrid occ = carve_grid(views, g, cfg);
  const auto voxels = occ.occupied_voxels();
  REQUIRE_FALSE(voxels.empty());

  std::array<int, 3> pc{};
  for (int a = 0; a < 3; ++a) pc[a] = static_cast<int>(std::floor((p[a] - g.bbox_min[a]) / g.pitch()[a]));
  const std::size_t home = g.index(pc[0], pc[1], pc[2]);
  std::set<std::size_t> occupied(voxels.begin(), voxels.end());
  CHECK(occupied.count(home) == 1);

  std::set<std::size_t> seen{home};
  std::deque<std::size_t> todo{home};
  while (!todo.empty()) {
    const auto c = g.coords(todo.front());
    todo.pop_front();
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
          if (x < 0 || y < 0 || z < 0 || x >= 20 || y >= 20 || z >= 20) continue;
          const std::size_t n = g.index(x, y, z);
          if (occupied.count(n) && seen.insert(n).second) todo.push_back(n);
        }
  }
  CHECK(seen.size() == occupied.size());
}

TEST_CASE("carving errors and order invariance") {
  auto views = ring_views(4, Vec3::Zero(), 21, 20);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : views) {
    v.image = Image(21, 21);
    for (int y = 5; y < 16; ++y)
      for (int x = 5; x < 16; ++x) v.image(x, y) = 0.2 + 0.8 * u(rng);
  }
  const GridGeometry g = cube(0.6, 12);
  InitConfig cfg;
  cfg.pixel_stride = 1;
  cfg.min_view_agreement = 5;
  CHECK_THROWS_AS(carve_grid(views, g, cfg), EmptyHullError);
  cfg.min_view_agreement = 0;
  cfg.intensity_threshold = 1.0;
  try {
    carve_grid(views, g, cfg);
    FAIL("expected empty hull");
  } catch (const EmptyHullError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("tau=1") != std::string::npos);
    CHECK(msg.find("K=4") != std::string::npos);
  }
  cfg.intensity_threshold = 0.05;
  const OccupancyGrid a = carve_grid(views, g, cfg);
  auto reversed = views;
  std::reverse(reversed.begin(), reversed.end());
  const OccupancyGrid b = carve_grid(reversed, g, cfg, 3);
  for (std::size_t i = 0; i < g.voxel_count(); ++i) REQUIRE(a.hit_count(i) == b.hit_count(i));
}

TEST_CASE("seeding degenerate layouts") {
  OccupancyGrid occ;
  occ.geometry = cube(0.5, 10);
  occ.view_count = 2;
  occ.min_view_agreement = 2;
  occ.hit_mask.assign(1000, 0);
  const std::size_t v = occ.geometry.index(3, 4, 5);
  occ.hit_mask[v] = 3;
  InitConfig cfg;
  GaussianSet one = seed_gaussians(occ, cfg);
  REQUIRE(one.size() == 1);
  const double h = 0.1;
  CHECK(one.gaussians[0].log_scale[0] == doctest::Approx(std::log(h)));
  CHECK((one.gaussians[0].position - occ.geometry.voxel_center(v)).cwiseAbs().maxCoeff() <= 0.25 * h + 1e-12);
  CHECK(one.gaussians[0].opacity() == doctest::Approx(0.1));
  CHECK(one.gaussians[0].opacity_logit == doctest::Approx(-2.1972).epsilon(1e-4));
  CHECK(eval_luminance(one.gaussians[0], Vec3(0, 0, 1)) == doctest::Approx(0.5));

  occ.hit_mask[occ.geometry.index(4, 4, 5)] = 3;
  GaussianSet two = seed_gaussians(occ, cfg, 2);
  REQUIRE(two.size() == 2);
  for (const auto& g : two.gaussians) {
    CHECK(g.log_scale[1] == doctest::Approx(std::log(h)));
    CHECK(g.sh.size() == 9);
    CHECK(g.rotation == Vec4(1, 0, 0, 0));
  }
}

TEST_CASE("neighbour distances match all-pairs search") {
  std::mt19937_64 rng(19);
  const GridGeometry g = cube(1.0, 25);
  std::vector<Vec3> pts;
  for (int i = 0; i < 400; ++i) pts.push_back(testutil::random_vec(rng, -1, 1));
  for (int i = 0; i < 50; ++i) pts.push_back(Vec3(0.9, 0.9, 0.9) + testutil::random_vec(rng, -0.01, 0.01));
  const auto got = mean_neighbor_distance(pts, g, 0.5);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j != i) d.push_back((pts[j] - pts[i]).norm());
    }
    std::partial_sort(d.begin(), d.begin() + 3, d.end());
    REQUIRE(got[i] == doctest::Approx((d[0] + d[1] + d[2]) / 3).epsilon(1e-12));
  }
}

TEST_CASE("seeds stay inside occupied voxels and are reproducible") {
  OccupancyGrid occ;
  occ.geometry = cube(0.5, 12);
  occ.view_count = 3;
  occ.min_view_agreement = 3;
  occ.hit_mask.assign(occ.geometry.voxel_count(), 0);
  std::mt19937_64 rng(8);
  for (auto& m : occ.hit_mask) m = rng() & 7;
  InitConfig cfg;
  cfg.seed = 42;
  const GaussianSet a = seed_gaussians(occ, cfg);
  const GaussianSet b = seed_gaussians(occ, cfg);
  REQUIRE(a.size() == occ.occupied_voxels().size());
  const Vec3 pitch = occ.geometry.pitch();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vec3 p = a.gaussians[i].position;
    REQUIRE(a.gaussians[i].position == b.gaussians[i].position);
    REQUIRE(a.gaussians[i].log_scale == b.gaussians[i].log_scale);
    std::array<int, 3> c{};
    for (int k = 0; k < 3; ++k) c[k] = static_cast<int>(std::floor((p[k] - occ.geometry.bbox_min[k]) / pitch[k]));
    REQUIRE(occ.occupied(occ.geometry.index(c[0], c[1], c[2])));
  }
}

TEST_CASE("occupancy dump layout") {
  OccupancyGrid occ;
  occ.geometry = cube(0.5, 4);
  occ.hit_mask.assign(64, 0);
  occ.hit_mask[5] = 0b1011;
  const auto dir = testutil::temp_dir("floc");
  write_floc(dir / "o.floc", occ);
  std::ifstream is(dir / "o.floc", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  REQUIRE(bytes.size() == 4 + 12 + 24 + 64);
  CHECK(bytes.substr(0, 4) == "FLOC");
  CHECK(static_cast<int>(bytes[40 + 5]) == 3);
}
