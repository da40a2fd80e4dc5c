// flamegs command-line tool: phantom, init, train, art, eval, export-volume, rerun.
#include "flamegs/art.hpp"
#include "flamegs/evaluate.hpp"
#include "flamegs/init_raytrace.hpp"
#include "flamegs/metrics.hpp"
#include "flamegs/parallel.hpp"
#include "flamegs/phantom.hpp"
#include "flamegs/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flamegs;

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::uint64_t fnv1a(std::istream& is, std::uint64_t h = 0xcbf29ce484222325ULL) {
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Directories hash their regular files in name order, manifest excluded.
std::string hash_input(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& f : files) {
      std::istringstream name(f.filename().string());
      h = fnv1a(name, h);
      std::ifstream is(f, std::ios::binary);
      h = fnv1a(is, h);
    }
    return hex64(h);
  }
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read input: " + p.string());
  return hex64(fnv1a(is));
}

/// Written before any computation with status "partial", rewritten as
/// "complete" on success.
class Manifest {
 public:
  Manifest(fs::path path, const CLI::App& sub, std::vector<std::string> argv, int threads)
      : path_(std::move(path)) {
    doc_["threads"] = threads;
    doc_["tool"] = "flamegs";
    doc_["version"] = kToolVersion;
    doc_["command"] = sub.get_name();
    doc_["argv"] = argv;
    json config = json::object();
    for (const CLI::Option* opt : sub.get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || name == "help") continue;
      if (opt->count() > 0) {
        const auto& res = opt->results();
        config[name] = res.size() == 1 ? json(res[0]) : json(res);
      } else if (opt->get_type_size() == 0) {
        config[name] = false;
      } else {
        config[name] = opt->get_default_str();
      }
    }
    doc_["config"] = config;
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::array();
    doc_["status"] = "partial";
  }

  void input(const fs::path& p) { doc_["inputs"][p.string()] = hash_input(p); }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }
  void set(const std::string& key, json value) { doc_[key] = std::move(value); }
  void write() const {
    if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
    std::ofstream os(path_);
    if (!os) throw std::runtime_error("cannot write manifest: " + path_.string());
    os << doc_.dump(2) << '\n';
  }
  void complete() {
    doc_["status"] = "complete";
    write();
  }

 private:
  fs::path path_;
  json doc_;
};

fs::path manifest_for_file(const fs::path& out) {
  return out.parent_path() / (out.filename().string() + ".manifest.json");
}

std::pair<int, int> parse_size(const std::string& s) {
  int w = 0, h = 0;
  char x = 0;
  std::istringstream is(s);
  if (!(is >> w >> x >> h) || (x != 'x' && x != 'X') || w <= 0 || h <= 0) {
    throw CLI::ValidationError("--size", "expected WxH, got " + s);
  }
  return {w, h};
}

std::size_t view_index(const CameraRig& views, const std::string& id) {
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].id == id) return i;
  }
  throw InvalidParameter("no camera with id " + id);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
}

struct InitFlags {
  double tau = 0.05;
  int agreement = 0;
  int grid = 50;
  int stride = 4;
  std::uint64_t seed = 0;
  int sh_degree = 0;

  void add(CLI::App* app) {
    app->add_option("--tau", tau, "Intensity threshold")->check(CLI::Range(0.0, 1.0));
    app->add_option("--agreement", agreement, "Views required per voxel (0 = all)")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--grid", grid, "Voxels per side")->check(CLI::PositiveNumber);
    app->add_option("--stride", stride, "Pixel stride")->check(CLI::PositiveNumber);
    app->add_option("--init-seed", seed, "Jitter seed");
    app->add_option("--sh-degree", sh_degree, "Spherical harmonics degree")->check(CLI::Range(0, 2));
  }
  [[nodiscard]] InitConfig config() const {
    InitConfig c;
    c.intensity_threshold = tau;
    c.min_view_agreement = agreement;
    c.grid_resolution = grid;
    c.pixel_stride = stride;
    c.seed = seed;
    return c;
  }
};

struct TrainFlags {
  TrainConfig config;
  void add(CLI::App* app) {
    app->add_option("--iters", config.iterations, "Training iterations")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--lambda", config.lambda_dssim, "D-SSIM weight")->check(CLI::Range(0.0, 1.0));
    app->add_option("--lr-position", config.lr.position);
    app->add_option("--lr-scale", config.lr.log_scale);
    app->add_option("--lr-rotation", config.lr.rotation);
    app->add_option("--lr-opacity", config.lr.opacity);
    app->add_option("--lr-sh", config.lr.sh);
    app->add_option("--lr-pose", config.lr.pose);
    app->add_option("--pose-start", config.pose_opt_start);
    app->add_option("--checkpoint-every", config.checkpoint_interval)->check(CLI::PositiveNumber);
    app->add_option("--max-gaussians", config.max_gaussians);
    app->add_option("--seed", config.seed, "Training seed");
  }
};

struct ArtFlags {
  ArtConfig config;
  void add(CLI::App* app) {
    app->add_option("--voxels", config.voxels, "Voxels per side")->check(CLI::PositiveNumber);
    app->add_option("--relaxation", config.relaxation)->check(CLI::Range(0.0, 2.0));
    app->add_option("--art-iters", config.iterations)->check(CLI::NonNegativeNumber);
    app->add_option("--pixel-stride", config.pixel_stride)->check(CLI::PositiveNumber);
    app->add_flag("--materialize", config.materialize_rows, "Keep all weight rows in memory");
  }
};

json metrics_json(const FoldMetrics& m) {
  return {{"held_out", m.held_out},
          {"mae", m.mae},
          {"psnr", std::isinf(m.psnr) ? json("inf") : json(m.psnr)},
          {"ssim", m.ssim}};
}

int run(std::vector<std::string> args) {
  CLI::App app{"FlameGS: Gaussian splatting for flame emission tomography"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  int threads = default_thread_count();
  app.add_option("--threads", threads, "Worker threads (default FLAMEGS_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic dataset");
  phantom->option_defaults()->always_capture_default();
  RigOptions rig_opts;
  PhantomOptions ph_opts;
  PhantomRenderOptions render_opts;
  std::string size = "200x256";
  fs::path ph_out;
  phantom->add_option("--cameras", rig_opts.cameras)->check(CLI::Range(3, 64));
  phantom->add_option("--radius", rig_opts.radius)->check(CLI::PositiveNumber);
  phantom->add_option("--size", size, "Image size WxH");
  phantom->add_option("--focal", rig_opts.focal)->check(CLI::PositiveNumber);
  phantom->add_option("--components", ph_opts.components)->check(CLI::PositiveNumber);
  phantom->add_option("--seed", ph_opts.seed);
  phantom->add_option("--samples", render_opts.samples_per_ray)->check(CLI::Range(64, 1 << 16));
  phantom->add_option("--noise", render_opts.noise_std)->check(CLI::NonNegativeNumber);
  phantom->add_option("--out", ph_out)->required();

  // init
  auto* init = app.add_subcommand("init", "Ray-traced Gaussian initialization");
  init->option_defaults()->always_capture_default();
  InitFlags init_flags;
  init_flags.add(init);
  fs::path init_data, init_out, init_dump;
  init->add_option("--data", init_data)->required()->check(CLI::ExistingDirectory);
  init->add_option("--out", init_out)->required();
  init->add_option("--dump-occupancy", init_dump, "Write FLOC hit counts");

  // train
  auto* train_cmd = app.add_subcommand("train", "Optimize Gaussians and pose deltas");
  train_cmd->option_defaults()->always_capture_default();
  TrainFlags train_flags;
  train_flags.add(train_cmd);
  InitFlags train_init;
  train_init.add(train_cmd);
  fs::path train_data, train_initial, train_out;
  std::string holdout;
  train_cmd->add_option("--data", train_data)->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--init", train_initial, "Initial FLGS (default: ray-traced init)")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--holdout", holdout, "Camera id excluded from training");
  train_cmd->add_option("--out", train_out)->required();

  // art
  auto* art = app.add_subcommand("art", "ART voxel baseline");
  art->option_defaults()->always_capture_default();
  ArtFlags art_flags;
  art_flags.add(art);
  fs::path art_data, art_out;
  std::string art_holdout;
  fs::path art_cache;
  art->add_option("--data", art_data)->required()->check(CLI::ExistingDirectory);
  art->add_option("--holdout", art_holdout);
  art->add_option("--cache-rows", art_cache, "Weight-row cache file (read if present, else written)");
  art->add_option("--out", art_out)->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Leave-one-camera-out cross-validation");
  eval->option_defaults()->always_capture_default();
  TrainFlags eval_train;
  eval_train.add(eval);
  InitFlags eval_init;
  eval_init.add(eval);
  ArtFlags eval_art;
  eval_art.add(eval);
  fs::path eval_data, eval_out;
  std::string eval_method = "both";
  eval->add_option("--data", eval_data)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--method", eval_method)->check(CLI::IsMember({"flamegs", "art", "both"}));
  eval->add_option("--out", eval_out)->required();

  // export-volume
  auto* exp = app.add_subcommand("export-volume", "Sample Gaussians onto a voxel grid");
  exp->option_defaults()->always_capture_default();
  fs::path exp_in, exp_data, exp_out;
  int exp_grid = 50;
  exp->add_option("--gaussians", exp_in)->required()->check(CLI::ExistingFile);
  exp->add_option("--data", exp_data, "Dataset whose rig defines the box")
      ->required()
      ->check(CLI::ExistingDirectory);
  exp->add_option("--grid", exp_grid)->check(CLI::PositiveNumber);
  exp->add_option("--out", exp_out)->required();

  // rerun
  auto* rerun = app.add_subcommand("rerun", "Re-execute the command recorded in a manifest");
  fs::path rerun_manifest;
  rerun->add_option("manifest", rerun_manifest)->required()->check(CLI::ExistingFile);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (rerun->parsed()) {
    std::ifstream is(rerun_manifest);
    const json doc = json::parse(is);
    // Recorded argv may rely on FLAMEGS_THREADS; pin it to the recorded count.
    setenv("FLAMEGS_THREADS", std::to_string(doc.at("threads").get<int>()).c_str(), 1);
    return run(doc.at("argv").get<std::vector<std::string>>());
  }

  if (phantom->parsed()) {
    const auto [w, h] = parse_size(size);
    rig_opts.width = w;
    rig_opts.height = h;
    render_opts.noise_seed = ph_opts.seed;
    render_opts.threads = threads;
    Manifest manifest(ph_out / "manifest.json", *phantom, args, threads);
    manifest.output(ph_out);
    manifest.write();
    const CameraRig rig = make_rig(rig_opts);
    const GridGeometry bounds = default_grid_for_rig(rig, 50);
    const PhantomSpec spec =
        make_random_phantom(0.5 * (bounds.bbox_min + bounds.bbox_max), ph_opts);
    const Dataset data = render_phantom_views(spec, rig, bounds, render_opts);
    write_dataset(ph_out, data);
    manifest.complete();
    std::cout << "wrote " << data.views.size() << " views of " << w << "x" << h << " to "
              << ph_out.string() << "\n";
    return 0;
  }

  if (init->parsed()) {
    Manifest manifest(manifest_for_file(init_out), *init, args, threads);
    manifest.input(init_data);
    manifest.output(init_out);
    manifest.write();
    const Dataset data = read_dataset(init_data);
    const InitConfig cfg = init_flags.config();
    GridGeometry g = default_grid_for_rig(data.views, cfg.grid_resolution);
    const OccupancyGrid occ = carve_grid(data.views, g, cfg, threads);
    const GaussianSet set = seed_gaussians(occ, cfg, init_flags.sh_degree);
    write_flgs(init_out, set);
    if (!init_dump.empty()) {
      write_floc(init_dump, occ);
      manifest.output(init_dump);
    }
    const std::size_t occupied = occ.occupied_voxels().size();
    manifest.set("occupied_voxels", occupied);
    manifest.set("seeded_gaussians", set.size());
    manifest.complete();
    std::cout << "occupied voxels: " << occupied << "\nseeded gaussians: " << set.size() << "\n";
    return 0;
  }

  if (train_cmd->parsed()) {
    Manifest manifest(train_out / "manifest.json", *train_cmd, args, threads);
    manifest.input(train_data);
    if (!train_initial.empty()) manifest.input(train_initial);
    manifest.output(train_out);
    manifest.write();
    const Dataset data = read_dataset(train_data);
    std::vector<CameraView> views;
    std::optional<std::size_t> held;
    if (!holdout.empty()) held = view_index(data.views, holdout);
    for (std::size_t i = 0; i < data.views.size(); ++i) {
      if (!held || i != *held) views.push_back(data.views[i]);
    }
    GaussianSet initial;
    if (!train_initial.empty()) {
      initial = read_flgs(train_initial);
    } else {
      const InitConfig ic = train_init.config();
      initial = ray_traced_init(views, default_grid_for_rig(data.views, ic.grid_resolution), ic,
                                train_init.sh_degree, threads);
    }
    TrainConfig tc = train_flags.config;
    tc.threads = threads;
    const GridGeometry box = default_grid_for_rig(data.views, 2);
    tc.scene_extent = (box.bbox_max - box.bbox_min).maxCoeff();
    const TrainOutput out = train_to_directory(views, initial, tc, train_out);
    json summary = {{"iterations", tc.iterations},
                    {"gaussians", out.set.size()},
                    {"density_events", out.density_events.size()},
                    {"final_loss", out.history.empty() ? 0.0 : out.history.back().loss}};
    if (held) {
      CameraView target = data.views[*held];
      RenderSettings rs;
      rs.threads = threads;
      FoldMetrics m = compare_images(render_forward(out.set, target, rs).pixels, target.image);
      m.held_out = target.id;
      summary["eval"] = metrics_json(m);
      write_text(train_out / "eval.json", metrics_json(m).dump(2) + "\n");
      std::cout << "eval " << target.id << ": MAE " << m.mae << " PSNR " << m.psnr << " SSIM "
                << m.ssim << "\n";
    }
    manifest.set("summary", summary);
    manifest.complete();
    std::cout << "trained " << tc.iterations << " iterations, " << out.set.size()
              << " gaussians\n";
    return 0;
  }

  if (art->parsed()) {
    Manifest manifest(manifest_for_file(art_out), *art, args, threads);
    manifest.input(art_data);
    manifest.output(art_out);
    manifest.write();
    const Dataset data = read_dataset(art_data);
    std::optional<std::size_t> held;
    if (!art_holdout.empty()) held = view_index(data.views, art_holdout);
    std::vector<CameraView> views;
    for (std::size_t i = 0; i < data.views.size(); ++i) {
      if (!held || i != *held) views.push_back(data.views[i]);
    }
    const ArtConfig& ac = art_flags.config;
    GridGeometry grid = default_grid_for_rig(data.views, ac.voxels);
    const auto rays = lattice_rays(views, ac.pixel_stride);
    const auto b = gather_measurements(views, rays);
    VoxelGrid volume(grid, 0.0);
    if (ac.materialize_rows || !art_cache.empty()) {
      std::vector<WeightRow> rows;
      if (!art_cache.empty() && fs::exists(art_cache)) {
        rows = read_weight_rows(art_cache);
        if (rows.size() != rays.size()) throw FormatError("weight-row cache does not match the rays");
      } else {
        rows = build_weight_rows(views, rays, grid, threads);
        if (!art_cache.empty()) write_weight_rows(art_cache, rows);
      }
      volume = art_reconstruct(rows, b, volume, ac.relaxation, ac.iterations);
    } else {
      volume = art_reconstruct_lazy(views, rays, b, volume, ac.relaxation, ac.iterations);
    }
    write_flvl(art_out, volume);
    if (held) {
      FoldMetrics m =
          compare_images(project_volume(volume, data.views[*held], threads), data.views[*held].image);
      m.held_out = data.views[*held].id;
      manifest.set("eval", metrics_json(m));
      std::cout << "eval " << m.held_out << ": MAE " << m.mae << " PSNR " << m.psnr << " SSIM "
                << m.ssim << "\n";
    }
    manifest.complete();
    std::cout << "reconstructed " << grid.voxel_count() << " voxels from " << rays.size()
              << " rays\n";
    return 0;
  }

  if (eval->parsed()) {
    Manifest manifest(eval_out / "manifest.json", *eval, args, threads);
    manifest.input(eval_data);
    manifest.output(eval_out / "report.json");
    manifest.output(eval_out / "report.txt");
    manifest.write();
    const Dataset data = read_dataset(eval_data);
    EvalConfig cfg;
    cfg.init = eval_init.config();
    cfg.sh_degree = eval_init.sh_degree;
    cfg.train = eval_train.config;
    cfg.art = eval_art.config;
    cfg.threads = threads;
    cfg.on_fold = [](const FoldMetrics& m) {
      std::cerr << "fold " << m.held_out << ": MAE " << m.mae << " PSNR " << m.psnr << " SSIM "
                << m.ssim << " (" << m.wall_seconds << " s)\n";
    };
    std::vector<MetricsReport> reports;
    if (eval_method != "art") reports.push_back(cross_validate(data, Method::flamegs, cfg));
    if (eval_method != "flamegs") reports.push_back(cross_validate(data, Method::art, cfg));
    fs::create_directories(eval_out);
    write_text(eval_out / "report.json", reports_to_json_string(reports) + "\n");
    const std::string table = reports_to_table(reports);
    write_text(eval_out / "report.txt", table);
    manifest.complete();
    std::cout << table;
    return 0;
  }

  if (exp->parsed()) {
    Manifest manifest(manifest_for_file(exp_out), *exp, args, threads);
    manifest.input(exp_in);
    manifest.input(exp_data);
    manifest.output(exp_out);
    manifest.write();
    const Dataset data = read_dataset(exp_data);
    const GaussianSet set = read_flgs(exp_in);
    const VoxelGrid vol =
        sample_gaussians_to_grid(set, default_grid_for_rig(data.views, exp_grid), threads);
    write_flvl(exp_out, vol);
    manifest.complete();
    std::cout << "exported " << vol.values.size() << " voxels\n";
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(args);
  } catch (const EmptyHullError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingAborted& e) {
    std::cerr << "error: training aborted: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
