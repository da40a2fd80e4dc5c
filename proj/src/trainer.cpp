#include "flamegs/trainer.hpp"

#include "flamegs/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace flamegs {

void TrainConfig::validate() const {
  if (iterations < 0) throw InvalidParameter("iterations must be non-negative");
  if (!(lambda_dssim >= 0.0 && lambda_dssim <= 1.0)) {
    throw InvalidParameter("lambda_dssim must lie in [0, 1]");
  }
  if (densify_interval < 1) throw InvalidParameter("densify_interval must be positive");
  if (!(split_scale_divisor > 1.0)) throw InvalidParameter("split divisor must exceed 1");
  if (checkpoint_interval < 1) throw InvalidParameter("checkpoint_interval must be positive");
  if (threads < 1) throw InvalidParameter("threads must be positive");
}

double position_lr(const TrainConfig& config, int iteration) {
  if (config.iterations <= 0) return config.lr.position;
  const double t = std::clamp(static_cast<double>(iteration) / config.iterations, 0.0, 1.0);
  return config.lr.position * std::pow(config.lr.position_final_factor, t);
}

LossResult compute_loss(const Image& rendered, const Image& target, double lambda) {
  if (!rendered.same_shape(target)) {
    throw std::invalid_argument("rendered and target images differ in size");
  }
  const std::size_t n = rendered.size();
  LossResult out;
  out.grad = Image(rendered.width, rendered.height);
  const double inv_n = 1.0 / static_cast<double>(n);
  double l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = rendered.pixels[i] - target.pixels[i];
    l1 += std::abs(d);
    out.grad.pixels[i] = (1.0 - lambda) * inv_n * static_cast<double>((d > 0) - (d < 0));
  }
  out.l1 = l1 * inv_n;
  if (lambda > 0.0) {
    const Image clamped = clamp01(rendered);
    const SsimResult s = ssim_with_grad(clamped, target);
    out.dssim = 0.5 * (1.0 - s.value);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = rendered.pixels[i];
      if (r < 0.0 || r > 1.0) continue;
      out.grad.pixels[i] += -0.5 * lambda * s.grad_a.pixels[i];
    }
  } else {
    out.dssim = 0.5 * (1.0 - ssim(clamp01(rendered), target));
  }
  out.loss = (1.0 - lambda) * out.l1 + lambda * out.dssim;
  return out;
}

void DensityControlState::reset(std::size_t n) {
  grad_accum.assign(n, 0.0);
  observations.assign(n, 0);
  position_grad_accum.assign(n, Vec3::Zero());
}

namespace {

constexpr int kPos = 0, kScale = 3, kRot = 6, kOpacity = 10, kSh = 11;

void pack(const Gaussian3D& g, std::array<double, AdamSlot::kSize>& p) {
  for (int k = 0; k < 3; ++k) p[kPos + k] = g.position[k];
  for (int k = 0; k < 3; ++k) p[kScale + k] = g.log_scale[k];
  for (int k = 0; k < 4; ++k) p[kRot + k] = g.rotation[k];
  p[kOpacity] = g.opacity_logit;
  for (int k = 0; k < g.sh.size(); ++k) p[kSh + k] = g.sh[k];
}

void unpack(const std::array<double, AdamSlot::kSize>& p, Gaussian3D& g) {
  for (int k = 0; k < 3; ++k) g.position[k] = p[kPos + k];
  for (int k = 0; k < 3; ++k) g.log_scale[k] = p[kScale + k];
  for (int k = 0; k < 4; ++k) g.rotation[k] = p[kRot + k];
  g.opacity_logit = p[kOpacity];
  for (int k = 0; k < g.sh.size(); ++k) g.sh[k] = p[kSh + k];
}

void pack_grad(const GaussianGrad& g, std::array<double, AdamSlot::kSize>& p) {
  for (int k = 0; k < 3; ++k) p[kPos + k] = g.position[k];
  for (int k = 0; k < 3; ++k) p[kScale + k] = g.log_scale[k];
  for (int k = 0; k < 4; ++k) p[kRot + k] = g.rotation[k];
  p[kOpacity] = g.opacity_logit;
  for (int k = 0; k < g.sh.size(); ++k) p[kSh + k] = g.sh[k];
}

void adam_update(double& param, double grad, double& m, double& v, double lr,
                 const OptimizerState& opt, double bias1, double bias2) {
  m = opt.beta1 * m + (1.0 - opt.beta1) * grad;
  v = opt.beta2 * v + (1.0 - opt.beta2) * grad * grad;
  const double m_hat = m / bias1;
  const double v_hat = v / bias2;
  param -= lr * m_hat / (std::sqrt(v_hat) + opt.epsilon);
}

void shuffle_epoch(TrainState& s) {
  s.epoch_order.resize(s.views.size());
  for (std::size_t i = 0; i < s.epoch_order.size(); ++i) s.epoch_order[i] = i;
  // Fisher-Yates with explicit modulo draws so the order depends only on the engine.
  for (std::size_t i = s.epoch_order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(s.rng() % i);
    std::swap(s.epoch_order[i - 1], s.epoch_order[j]);
  }
  s.epoch_pos = 0;
}

bool finite_parameters(const Gaussian3D& g) {
  return g.position.allFinite() && g.log_scale.allFinite() && g.rotation.allFinite() &&
         std::isfinite(g.opacity_logit) && g.sh.allFinite();
}

}  // namespace

TrainState::TrainState(GaussianSet init, std::vector<CameraView> training_views,
                       const TrainConfig& config)
    : set(std::move(init)), views(std::move(training_views)), rng(config.seed) {
  config.validate();
  set.validate();
  if (views.empty()) throw std::invalid_argument("training needs at least one view");
  if (set.empty()) throw std::invalid_argument("training needs at least one Gaussian");
  for (const auto& v : views) {
    if (v.image.width != v.intrinsics.width || v.image.height != v.intrinsics.height) {
      throw std::invalid_argument("view " + v.id + " image does not match its intrinsics");
    }
  }
  opt.gaussians.assign(set.size(), AdamSlot{});
  opt.poses.assign(views.size(), AdamSlot{});
  opt.pose_steps.assign(views.size(), 0);
  dc.reset(set.size());
}

DensityReport adaptive_density_control(GaussianSet& set, DensityControlState& dc,
                                       OptimizerState& opt, const TrainConfig& config,
                                       std::mt19937_64& rng) {
  DensityReport report;
  const std::size_t n = set.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  const double clone_limit = config.clone_scale_fraction * config.scene_extent;
  const double split_shift = std::log(config.split_scale_divisor);

  std::vector<Gaussian3D> kept;
  std::vector<AdamSlot> kept_slots;
  std::vector<Gaussian3D> added;
  kept.reserve(n);
  kept_slots.reserve(n);
  std::size_t budget = config.max_gaussians > 0
                           ? (config.max_gaussians > n ? config.max_gaussians - n : 0)
                           : static_cast<std::size_t>(-1);

  for (std::size_t i = 0; i < n; ++i) {
    const Gaussian3D& g = set.gaussians[i];
    const double mean_grad = dc.observations[i] > 0 ? dc.grad_accum[i] / dc.observations[i] : 0.0;
    const bool trigger = mean_grad >= config.densify_grad_threshold && mean_grad > 0.0;
    const double max_scale = g.scale().maxCoeff();
    if (trigger && max_scale < clone_limit && budget >= 1) {
      Gaussian3D copy = g;
      const Vec3 dir = dc.position_grad_accum[i];
      if (dir.norm() > 0) copy.position -= 0.5 * max_scale * dir.normalized();
      added.push_back(copy);
      --budget;
      ++report.cloned;
      kept.push_back(g);
      kept_slots.push_back(opt.gaussians[i]);
    } else if (trigger && max_scale >= clone_limit && budget >= 1) {
      const Mat3 rot = quaternion_to_rotation(g.rotation);
      const Vec3 s = g.scale();
      for (int c = 0; c < 2; ++c) {
        Gaussian3D child = g;
        const Vec3 z(normal(rng), normal(rng), normal(rng));
        child.position = g.position + rot * s.cwiseProduct(z);
        child.log_scale = g.log_scale - Vec3::Constant(split_shift);
        added.push_back(child);
      }
      --budget;  // net growth of one
      ++report.split;
    } else {
      kept.push_back(g);
      kept_slots.push_back(opt.gaussians[i]);
    }
  }

  std::vector<Gaussian3D> next;
  std::vector<AdamSlot> next_slots;
  next.reserve(kept.size() + added.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i].opacity() < config.prune_opacity) {
      ++report.pruned;
      continue;
    }
    next.push_back(kept[i]);
    next_slots.push_back(kept_slots[i]);
  }
  for (const auto& g : added) {
    if (g.opacity() < config.prune_opacity) {
      ++report.pruned;
      continue;
    }
    next.push_back(g);
    next_slots.push_back(AdamSlot{});
  }
  if (next.empty()) {
    throw DegenerateCollapse("density control pruned every Gaussian (opacity threshold " +
                             std::to_string(config.prune_opacity) + ")");
  }
  set.gaussians = std::move(next);
  opt.gaussians = std::move(next_slots);
  dc.reset(set.size());

  report.count_after = set.size();
  report.min_opacity_after = 1.0;
  for (const auto& g : set.gaussians) {
    report.min_opacity_after = std::min(report.min_opacity_after, g.opacity());
  }
  return report;
}

StepRecord train_step(TrainState& s, const TrainConfig& config) {
  if (s.epoch_pos >= s.epoch_order.size()) shuffle_epoch(s);
  const std::size_t vi = s.epoch_order[s.epoch_pos++];
  CameraView& view = s.views[vi];
  const int it = s.iteration + 1;

  RenderSettings rs;
  rs.threads = config.threads;
  const FrameBuffer frame = render_forward(s.set, view, rs);
  const LossResult loss = compute_loss(frame.pixels, view.image, config.lambda_dssim);
  if (!std::isfinite(loss.loss)) {
    throw TrainingAborted("non-finite loss at iteration " + std::to_string(it) + " on view " +
                              view.id,
                          s.set);
  }
  const GradientBuffer grads = render_backward(s.set, view, frame, loss.grad, rs);

  // Gaussian parameters.
  ++s.opt.step;
  const double bias1 = 1.0 - std::pow(s.opt.beta1, static_cast<double>(s.opt.step));
  const double bias2 = 1.0 - std::pow(s.opt.beta2, static_cast<double>(s.opt.step));
  const int nsh = sh_coeff_count(s.set.sh_degree);
  const int nparam = kSh + nsh;
  std::array<double, AdamSlot::kSize> lrs{};
  const double lr_pos = position_lr(config, it);
  for (int k = 0; k < nparam; ++k) {
    lrs[k] = k < kScale ? lr_pos
             : k < kRot ? config.lr.log_scale
             : k < kOpacity ? config.lr.rotation
             : k == kOpacity ? config.lr.opacity
                             : config.lr.sh;
  }
  std::array<double, AdamSlot::kSize> p{}, gr{};
  for (std::size_t i = 0; i < s.set.size(); ++i) {
    Gaussian3D& g = s.set.gaussians[i];
    AdamSlot& slot = s.opt.gaussians[i];
    pack(g, p);
    pack_grad(grads.gaussians[i], gr);
    for (int k = 0; k < nparam; ++k) {
      if (lrs[k] == 0.0) continue;
      adam_update(p[k], gr[k], slot.m[k], slot.v[k], lrs[k], s.opt, bias1, bias2);
    }
    unpack(p, g);
    g.rotation.normalize();
    if (!finite_parameters(g)) {
      throw TrainingAborted("non-finite parameters after step " + std::to_string(it), s.set);
    }
  }

  // Pose delta of this view.
  if (it >= config.pose_opt_start && config.lr.pose > 0.0) {
    AdamSlot& slot = s.opt.poses[vi];
    const auto step = ++s.opt.pose_steps[vi];
    const double pb1 = 1.0 - std::pow(s.opt.beta1, static_cast<double>(step));
    const double pb2 = 1.0 - std::pow(s.opt.beta2, static_cast<double>(step));
    for (int k = 0; k < 3; ++k) {
      adam_update(view.delta.rotation[k], grads.pose.rotation[k], slot.m[k], slot.v[k],
                  config.lr.pose, s.opt, pb1, pb2);
      adam_update(view.delta.translation[k], grads.pose.translation[k], slot.m[3 + k],
                  slot.v[3 + k], config.lr.pose, s.opt, pb1, pb2);
    }
  }

  // Densification statistics (NDC-scaled screen gradient).
  const double half_w = 0.5 * view.intrinsics.width;
  const double half_h = 0.5 * view.intrinsics.height;
  for (std::size_t i = 0; i < s.set.size(); ++i) {
    if (!grads.visible[i]) continue;
    const Vec2 g2 = grads.mean2d[i];
    s.dc.grad_accum[i] += std::hypot(g2.x() * half_w, g2.y() * half_h);
    s.dc.observations[i] += 1;
    s.dc.position_grad_accum[i] += grads.gaussians[i].position;
  }

  s.iteration = it;
  StepRecord rec;
  rec.iteration = it;
  rec.view_id = view.id;
  rec.loss = loss.loss;
  rec.l1 = loss.l1;
  rec.dssim = loss.dssim;

  if (it >= config.densify_start && it <= config.densify_end &&
      it % config.densify_interval == 0) {
    DensityReport report = adaptive_density_control(s.set, s.dc, s.opt, config, s.rng);
    report.iteration = it;
    s.density_events.push_back(report);
  }
  rec.gaussian_count = s.set.size();
  return rec;
}

TrainOutput train(const std::vector<CameraView>& views, const GaussianSet& init,
                  const TrainConfig& config, const TrainCallbacks& callbacks) {
  TrainState state(init, views, config);
  TrainOutput out;
  const auto start = std::chrono::steady_clock::now();
  out.history.reserve(static_cast<std::size_t>(config.iterations));
  for (int i = 0; i < config.iterations; ++i) {
    StepRecord rec = train_step(state, config);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (callbacks.on_step) callbacks.on_step(state, rec);
    out.history.push_back(rec);
    if (callbacks.on_checkpoint && state.iteration % config.checkpoint_interval == 0) {
      callbacks.on_checkpoint(state);
    }
  }
  if (callbacks.on_checkpoint && state.iteration % config.checkpoint_interval != 0) {
    callbacks.on_checkpoint(state);
  }
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.set = std::move(state.set);
  out.views = std::move(state.views);
  out.density_events = std::move(state.density_events);
  return out;
}

std::string train_config_to_json_string(const TrainConfig& c) {
  nlohmann::json j = {
      {"iterations", c.iterations},
      {"lambda_dssim", c.lambda_dssim},
      {"pose_opt_start", c.pose_opt_start},
      {"densify_start", c.densify_start},
      {"densify_end", c.densify_end},
      {"densify_interval", c.densify_interval},
      {"prune_opacity", c.prune_opacity},
      {"densify_grad_threshold", c.densify_grad_threshold},
      {"clone_scale_fraction", c.clone_scale_fraction},
      {"split_scale_divisor", c.split_scale_divisor},
      {"scene_extent", c.scene_extent},
      {"max_gaussians", c.max_gaussians},
      {"checkpoint_interval", c.checkpoint_interval},
      {"seed", c.seed},
      {"threads", c.threads},
      {"lr",
       {{"position", c.lr.position},
        {"position_final_factor", c.lr.position_final_factor},
        {"log_scale", c.lr.log_scale},
        {"rotation", c.lr.rotation},
        {"opacity", c.lr.opacity},
        {"sh", c.lr.sh},
        {"pose", c.lr.pose}}}};
  return j.dump(2);
}

namespace {

std::string format_row(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.3f,%.9g,%.9g,%.9g,%zu\n", r.iteration, r.wall_seconds,
                r.loss, r.l1, r.dssim, r.gaussian_count);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << text;
}

void write_checkpoint(const std::filesystem::path& dir, const std::string& stem,
                      const GaussianSet& set, const std::vector<CameraView>& views) {
  write_flgs(dir / (stem + ".flgs"), set);
  write_text(dir / (stem + "_poses.json"), pose_deltas_to_json_string(views) + "\n");
}

}  // namespace

TrainOutput train_to_directory(const std::vector<CameraView>& views, const GaussianSet& init,
                               const TrainConfig& config, const std::filesystem::path& run_dir) {
  std::filesystem::create_directories(run_dir);
  write_text(run_dir / "config.json", train_config_to_json_string(config) + "\n");
  write_checkpoint(run_dir, "initial", init, views);

  std::ofstream csv(run_dir / "loss.csv");
  if (!csv) throw std::runtime_error("cannot open loss.csv in " + run_dir.string());
  csv << "iteration,wall_seconds,loss,l1,dssim,gaussian_count\n";
  std::ofstream views_log(run_dir / "views.log");
  TrainCallbacks cb;
  cb.on_step = [&](const TrainState&, const StepRecord& r) {
    csv << format_row(r);
    views_log << r.iteration << ' ' << r.view_id << '\n';
  };
  cb.on_checkpoint = [&](const TrainState& s) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "ckpt_%06d", s.iteration);
    write_checkpoint(run_dir, stem, s.set, s.views);
    csv.flush();
  };

  TrainOutput out;
  try {
    out = train(views, init, config, cb);
  } catch (const TrainingAborted& e) {
    write_flgs(run_dir / "aborted_snapshot.flgs", e.snapshot);
    throw;
  }
  write_checkpoint(run_dir, "final", out.set, out.views);

  std::ofstream dens(run_dir / "density.csv");
  dens << "iteration,pruned,cloned,split,count_after,min_opacity_after\n";
  for (const auto& e : out.density_events) {
    dens << e.iteration << ',' << e.pruned << ',' << e.cloned << ',' << e.split << ','
         << e.count_after << ',' << e.min_opacity_after << '\n';
  }
  return out;
}

}  // namespace flamegs
