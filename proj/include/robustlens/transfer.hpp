#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "robustlens/adversarial.hpp"
#include "robustlens/dataset.hpp"
#include "robustlens/model.hpp"

namespace robustlens {

/// Rows are f_w(x_i) in dataset order.
RowMatrix extract_features(const Model& model, const LabeledDataset& ds);

struct ProbeConfig {
  double lr = 0.5;
  int max_iters = 5000;
  double grad_tol = 1e-5;
  double test_fraction = 0.2;
  uint64_t seed = 0;
};

struct ProbeResult {
  RowMatrix W;  // k x K
  Vector b;
  double train_acc = 0.0;
  double test_acc = 0.0;
  int iters = 0;
  double grad_norm = 0.0;
};

/// Multinomial logistic regression by full-batch gradient descent on an 80/20
/// seeded split (by default).
ProbeResult linear_probe(const RowMatrix& features, const std::vector<int>& labels,
                         int K, const ProbeConfig& cfg);

struct FinetuneConfig {
  int epochs = 5;
  Index batch_size = 64;
  double lr = 0.05;  // 0 is allowed and leaves the weights untouched
  double momentum = 0.9;
  double test_fraction = 0.2;
  uint64_t seed = 0;
  uint64_t head_seed = 0;

  void validate() const;
};

struct TransferReport {
  std::string source_id;
  std::string target_id;
  int mode = 0;
  double test_acc = 0.0;
  double robust_test_acc = 0.0;  // only meaningful when an attack was given
  uint64_t seed = 0;
};

struct FinetuneOutcome {
  Model model;
  TransferReport report;
};

/// Fine-tune on the target with a fresh head. Mode 0 trains the head plus the
/// normalization pair directly before it, mode 1 the head plus every
/// normalization parameter, mode 2 everything; parameters outside the mode's
/// set stay bit-identical.
FinetuneOutcome finetune(const Model& source, const LabeledDataset& target,
                         int mode, const std::optional<AttackSpec>& attack,
                         const FinetuneConfig& cfg,
                         const std::string& source_id = "",
                         const std::string& target_id = "");

struct EmdResult {
  double distance = 0.0;
  double residual = 0.0;  // marginal violation of the pre-rounding plan
  bool converged = false;
};

struct EmdConfig {
  double reg = 1e-2;
  int max_iters = 10000;
  Index feature_cap = 0;  // 0 = use every sample when building centroids
};

/// Entropic OT between per-class centroid signatures in the reference
/// extractor's feature space; the cost is evaluated on a rounded feasible plan.
EmdResult dataset_emd(const LabeledDataset& a, const LabeledDataset& b,
                      const Model& reference, const EmdConfig& cfg = {});

struct GapRow {
  std::string target_id;
  double distance = 0.0;
  double gap = 0.0;  // robust-source minus standard-source accuracy
};

struct GapTable {
  std::vector<GapRow> rows;  // sorted by distance
  double spearman = 0.0;
};

/// Spearman rank correlation with average ranks for ties.
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

GapTable gap_vs_distance(std::vector<GapRow> rows);

}  // namespace robustlens
