#pragma once

#include <optional>
#include <string>
#include <vector>

#include "robustlens/infogeom.hpp"
#include "robustlens/model.hpp"

namespace robustlens {

enum class InversionMode { deterministic, noise_once, noise_each_step };

std::string inversion_mode_name(InversionMode m);
InversionMode inversion_mode_from_name(const std::string& s);

struct InversionConfig {
  int iters = 500;
  double lr = 0.1;
  double init_sigma = 0.1;  // x'(0) ~ N(0.5, sigma^2), clamped
  InversionMode mode = InversionMode::deterministic;
  std::optional<NoiseModel> noise;  // required for the noisy modes
  uint64_t seed = 0;

  void validate() const;
};

struct InversionResult {
  Tensor x_hat;  // [1, n] in [0,1]
  std::vector<double> loss_trace;
  int iterations = 0;
  InversionMode mode = InversionMode::deterministic;
  /// L_inv(x_hat) under the extractor the optimization ran against.
  double final_loss = 0.0;
  /// L_inv under the clean extractor; equals final_loss in deterministic mode.
  double clean_loss = 0.0;
};

/// Plain gradient descent on ||z_target - f(x')||_2 with clamping and
/// best-iterate tracking.
InversionResult invert(const Model& model, const Tensor& z_target,
                       const InversionConfig& cfg);

/// Noise-once inversion: perturb the weights a single time, then invert the
/// target against the perturbed extractor.
InversionResult variational_invert(const Model& model, const Tensor& z_target,
                                   const InversionConfig& cfg);

/// Per-step noise: every iteration resamples w+n and steps on
/// ||f_{w+n}(x') - f_{w+n}(x_source)||_2; the best iterate is chosen by the
/// clean extractor's loss against f_w(x_source).
InversionResult effective_image(const Model& model, const Tensor& x_source,
                                const InversionConfig& cfg);

struct ModeCurve {
  InversionMode mode;
  std::vector<double> median_loss;  // one entry per iteration
};

/// Median loss per iteration for each configuration; a deterministic baseline
/// is added when the caller did not include one. All configs must share the
/// iteration budget. Noisy-target modes invert f_w(image); the per-step mode
/// consumes the image directly.
std::vector<ModeCurve> compare_modes(const Model& model,
                                     const std::vector<Tensor>& images,
                                     std::vector<InversionConfig> cfgs);

}  // namespace robustlens
