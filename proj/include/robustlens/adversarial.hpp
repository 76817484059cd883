#pragma once

#include <utility>
#include <vector>

#include "robustlens/dataset.hpp"
#include "robustlens/model.hpp"

namespace robustlens {

enum class LossTarget { cross_entropy, kl_vs_clean };

/// L2 PGD configuration in pixel units.
struct AttackSpec {
  double epsilon = 0.0;
  int steps = 1;
  double step_size = 0.0;  // <= 0 means the 2.5*eps/steps default
  double clamp_lo = 0.0, clamp_hi = 1.0;
  LossTarget loss_target = LossTarget::cross_entropy;

  double effective_step() const {
    return step_size > 0.0 ? step_size : 2.5 * epsilon / steps;
  }
  void validate() const;
};

enum class TrainMode { standard, at, trades };

TrainMode train_mode_from_name(const std::string& s);
std::string train_mode_name(TrainMode m);

struct TrainConfig {
  int epochs = 20;
  Index batch_size = 64;
  double lr = 0.05;
  /// Epoch fractions at which the learning rate drops by 10x.
  std::vector<double> decay_points = {0.6, 0.85};
  double momentum = 0.9;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  double beta = 0.0;  // KL weight for trades mode
  TrainMode mode = TrainMode::standard;
  /// Cap on samples used for the per-epoch accuracy metrics.
  Index eval_cap = 512;

  void validate() const;
};

struct EpochMetrics {
  int epoch;
  double clean_acc;
  double robust_acc;
  double loss;
  double w_l2norm;
};

struct TrainMetrics {
  std::vector<EpochMetrics> epochs;
};

Tensor onehot_batch(const std::vector<int>& y, int K);

/// Iterated l2 ascent from x (no random start): normalized gradient step,
/// projection onto the eps-ball around x, then clamp, every step. Samples
/// whose loss did not improve fall back to x, so the attack never reduces
/// the target loss.
Tensor pgd_attack(const Model& model, const Tensor& x, const std::vector<int>& y,
                  const AttackSpec& spec);

/// CE(x) + beta * KL(p(.|x+delta) || p(.|x)) with the inner max found by PGD
/// on the KL objective; mean over the batch.
double kl_robust_loss(const Model& model, const Tensor& x, const std::vector<int>& y,
                      const AttackSpec& spec, double beta);

/// SGD with momentum on the clean, adversarial, or trades objective.
std::pair<Model, TrainMetrics> train(const Model& model, const LabeledDataset& ds,
                                     const AttackSpec& attack, const TrainConfig& cfg);

double clean_accuracy(const Model& model, const LabeledDataset& ds);
double robust_accuracy(const Model& model, const LabeledDataset& ds,
                       const AttackSpec& spec);

}  // namespace robustlens
