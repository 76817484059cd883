#include "robustlens/inversion.hpp"

#include <algorithm>
#include <cmath>

#include "robustlens/rng.hpp"

namespace robustlens {

std::string inversion_mode_name(InversionMode m) {
  switch (m) {
    case InversionMode::deterministic: return "deterministic";
    case InversionMode::noise_once: return "noise-once";
    case InversionMode::noise_each_step: return "noise-each-step";
  }
  return "?";
}

InversionMode inversion_mode_from_name(const std::string& s) {
  if (s == "deterministic") return InversionMode::deterministic;
  if (s == "noise-once") return InversionMode::noise_once;
  if (s == "noise-each-step") return InversionMode::noise_each_step;
  fail(ErrorCode::bad_config, "unknown inversion mode '" + s + "'");
}

void InversionConfig::validate() const {
  if (iters < 1) fail(ErrorCode::bad_config, "inversion iters must be positive");
  if (lr <= 0.0) fail(ErrorCode::bad_config, "inversion lr must be positive");
  if (init_sigma < 0.0) fail(ErrorCode::bad_config, "init sigma must be >= 0");
  if (mode != InversionMode::deterministic && !noise.has_value())
    fail(ErrorCode::bad_config,
         "mode '" + inversion_mode_name(mode) + "' needs a noise model");
}

namespace {

Tensor init_image(const Model& model, const InversionConfig& cfg) {
  const Index n = model.config().input_dim();
  Rng rng(child_seed(cfg.seed, "invert-init"));
  Tensor x = Tensor::zeros({1, n});
  for (Index i = 0; i < n; ++i)
    x.data[i] = std::clamp(0.5 + cfg.init_sigma * rng.normal(), 0.0, 1.0);
  return model.prepare_input(x);
}

double inv_loss(const Model& extractor, const Tensor& x, const Tensor& z_target) {
  Bindings b = extractor.param_bindings();
  b["x"] = x;
  b["_ztarget"] = z_target;
  double loss = extractor.graph().evaluate(b, {"inv_loss"}).at("inv_loss").value();
  if (!std::isfinite(loss)) fail(ErrorCode::non_finite, "non-finite inversion loss");
  return loss;
}

Tensor inv_grad(const Model& extractor, const Tensor& x, const Tensor& z_target) {
  Bindings b = extractor.param_bindings();
  b["x"] = x;
  b["_ztarget"] = z_target;
  Tensor g = extractor.graph().backward(b, "inv_loss", {"x"}).at("x");
  if (!g.all_finite()) fail(ErrorCode::non_finite, "non-finite inversion gradient");
  return g;
}

void clamp01(Tensor& x) {
  for (Index i = 0; i < x.size(); ++i) x.data[i] = std::clamp(x.data[i], 0.0, 1.0);
}

Tensor check_target(const Model& model, const Tensor& z_target) {
  if (z_target.size() != model.config().k)
    fail(ErrorCode::shape_mismatch, "inversion target dimension does not match k");
  return Tensor({1, static_cast<Index>(model.config().k)}, z_target.data);
}

// Shared descent loop against a fixed extractor and target.
InversionResult descend(const Model& extractor, const Tensor& z_target,
                        const InversionConfig& cfg) {
  Tensor x = init_image(extractor, cfg);
  InversionResult res;
  res.mode = cfg.mode;
  res.iterations = cfg.iters;

  Tensor best_x = x;
  double best_loss = inv_loss(extractor, x, z_target);
  for (int t = 0; t < cfg.iters; ++t) {
    double loss = inv_loss(extractor, x, z_target);
    res.loss_trace.push_back(loss);
    res.iterations = t + 1;
    if (loss < best_loss) {
      best_loss = loss;
      best_x = x;
    }
    if (loss == 0.0) break;  // exact hit; the norm gradient is undefined here
    // Step on the squared norm (loss * grad of the norm) so a constant lr
    // contracts instead of oscillating at step size; the trace still reports
    // the plain norm.
    Tensor g = inv_grad(extractor, x, z_target);
    x.data -= cfg.lr * loss * g.data;
    clamp01(x);
  }
  double tail = inv_loss(extractor, x, z_target);
  if (tail < best_loss) {
    best_loss = tail;
    best_x = x;
  }
  res.x_hat = best_x.reshaped({1, best_x.size()});
  res.final_loss = best_loss;
  res.clean_loss = best_loss;
  return res;
}

}  // namespace

InversionResult invert(const Model& model, const Tensor& z_target,
                       const InversionConfig& cfg) {
  cfg.validate();
  return descend(model, check_target(model, z_target), cfg);
}

InversionResult variational_invert(const Model& model, const Tensor& z_target,
                                   const InversionConfig& cfg) {
  cfg.validate();
  if (cfg.mode != InversionMode::noise_once)
    fail(ErrorCode::bad_config, "variational_invert requires the noise-once mode");
  Tensor zt = check_target(model, z_target);
  Model perturbed =
      sample_perturbed(model, *cfg.noise, child_seed(cfg.seed, "inv-noise"));
  InversionResult res = descend(perturbed, zt, cfg);
  res.clean_loss = inv_loss(model, model.prepare_input(res.x_hat), zt);
  return res;
}

InversionResult effective_image(const Model& model, const Tensor& x_source,
                                const InversionConfig& cfg) {
  cfg.validate();
  if (cfg.mode != InversionMode::noise_each_step)
    fail(ErrorCode::bad_config, "effective_image requires the noise-each-step mode");
  Tensor xs = model.prepare_input(
      Tensor({1, x_source.size()}, x_source.data));
  Bindings clean_b = model.param_bindings();
  clean_b["x"] = xs;
  Tensor z_clean = model.graph().evaluate(clean_b, {"z"}).at("z");

  Tensor x = init_image(model, cfg);
  InversionResult res;
  res.mode = cfg.mode;
  res.iterations = cfg.iters;

  Tensor best_x = x;
  double best_clean = inv_loss(model, x, z_clean);
  uint64_t stream = child_seed(cfg.seed, "inv-step");
  for (int t = 0; t < cfg.iters; ++t) {
    Model noisy = sample_perturbed(model, *cfg.noise,
                                   stream + static_cast<uint64_t>(t));
    // Target recomputed under this iteration's noise draw.
    Bindings nb = noisy.param_bindings();
    nb["x"] = xs;
    Tensor z_n = noisy.graph().evaluate(nb, {"z"}).at("z");

    double loss = inv_loss(noisy, x, z_n);
    res.loss_trace.push_back(loss);
    res.iterations = t + 1;
    double clean = inv_loss(model, x, z_clean);
    if (clean < best_clean) {
      best_clean = clean;
      best_x = x;
    }
    if (loss == 0.0) continue;  // nothing to step on under this noise draw
    Tensor g = inv_grad(noisy, x, z_n);
    x.data -= cfg.lr * loss * g.data;
    clamp01(x);
  }
  double tail = inv_loss(model, x, z_clean);
  if (tail < best_clean) {
    best_clean = tail;
    best_x = x;
  }
  res.x_hat = best_x.reshaped({1, best_x.size()});
  res.clean_loss = best_clean;
  res.final_loss = best_clean;
  return res;
}

std::vector<ModeCurve> compare_modes(const Model& model,
                                     const std::vector<Tensor>& images,
                                     std::vector<InversionConfig> cfgs) {
  if (cfgs.empty()) fail(ErrorCode::bad_config, "compare_modes needs a config");
  if (images.empty()) fail(ErrorCode::bad_config, "compare_modes needs images");
  bool has_baseline = false;
  for (const auto& c : cfgs)
    if (c.mode == InversionMode::deterministic) has_baseline = true;
  if (!has_baseline) {
    InversionConfig base = cfgs.front();
    base.mode = InversionMode::deterministic;
    base.noise.reset();
    cfgs.insert(cfgs.begin(), base);
  }
  for (const auto& c : cfgs) {
    c.validate();
    if (c.iters != cfgs.front().iters)
      fail(ErrorCode::bad_config, "compare_modes needs a shared iteration budget");
  }

  std::vector<ModeCurve> table;
  for (const auto& c : cfgs) {
    std::vector<std::vector<double>> traces;
    for (const auto& img : images) {
      InversionResult r;
      if (c.mode == InversionMode::noise_each_step) {
        r = effective_image(model, img, c);
      } else {
        Tensor z = model.forward_features(model.prepare_input(
            Tensor({1, img.size()}, img.data)));
        r = c.mode == InversionMode::deterministic ? invert(model, z, c)
                                                   : variational_invert(model, z, c);
      }
      traces.push_back(std::move(r.loss_trace));
    }
    ModeCurve curve;
    curve.mode = c.mode;
    for (int t = 0; t < c.iters; ++t) {
      std::vector<double> column;
      // Traces that converged exactly and stopped early hold their last value.
      for (const auto& tr : traces)
        column.push_back(static_cast<size_t>(t) < tr.size() ? tr[static_cast<size_t>(t)]
                                                            : tr.back());
      std::sort(column.begin(), column.end());
      size_t m = column.size() / 2;
      curve.median_loss.push_back(column.size() % 2 == 1
                                      ? column[m]
                                      : 0.5 * (column[m - 1] + column[m]));
    }
    table.push_back(std::move(curve));
  }
  return table;
}

}  // namespace robustlens
