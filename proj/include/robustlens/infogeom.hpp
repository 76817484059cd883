#pragma once

#include <string>
#include <utility>
#include <vector>

#include "robustlens/dataset.hpp"
#include "robustlens/model.hpp"

namespace robustlens {

enum class DecoderKind { gaussian_unit, categorical };

std::string decoder_name(DecoderKind k);
DecoderKind decoder_from_name(const std::string& s);

/// The channel p_w(z|x) used by the Fisher estimators: either z ~ N(f(x),
/// sigma_z^2 I) or the categorical output distribution itself.
struct DecoderModel {
  DecoderKind kind = DecoderKind::gaussian_unit;
  double sigma_z = 1.0;

  void validate() const;
};

struct SensitivityEstimate {
  RowMatrix S;  // n x n, symmetric PSD
  DecoderKind decoder;
};

struct WeightFisherDiag {
  Vector values;  // per-parameter, nonnegative, flat-layout order
  Index sample_count = 0;
  uint64_t seed = 0;
};

struct NoiseModel {
  Vector sigma2;  // per-parameter variances
  double beta = 0.0;
  double lambda = 0.0;
};

/// Jacobian of the representation w.r.t. a single input: J[i,.] = grad_x z_i.
RowMatrix rep_jacobian(const Model& model, const Tensor& x);
/// Same for the logits.
RowMatrix logits_jacobian(const Model& model, const Tensor& x);

SensitivityEstimate sensitivity(const Model& model, const Tensor& x,
                                const DecoderModel& decoder);

/// Mean sensitivity over a deterministic subsample of the dataset.
RowMatrix fisher_rep(const Model& model, const LabeledDataset& ds,
                     const DecoderModel& decoder, Index sample_count,
                     uint64_t seed = 0);

/// Power iteration from the normalized all-ones vector; the returned
/// eigenvector has its first nonzero component positive.
std::pair<double, Vector> top_eigpair(const RowMatrix& S, double tol = 1e-10,
                                      int max_iter = 10000);

struct KlSecondOrderRow {
  double epsilon;
  double exact_kl;   // max KL over the epsilon-sphere, found by ascent
  double approx_kl;  // (eps^2/2) * v1' S v1
  double ratio;
};

std::vector<KlSecondOrderRow> kl_second_order_check(
    const Model& model, const Tensor& x, const std::vector<double>& epsilons,
    int ascent_steps = 50);

struct GnrBoundReport {
  double mean_diag;      // tr(S)/n — the GNR direction average
  double top_quadratic;  // v1' S v1 — the AT direction
  bool holds;
};

GnrBoundReport gnr_bound_check(const RowMatrix& S);

struct LogisticFisherReport {
  RowMatrix closed_form;  // c * w w'
  RowMatrix mc_estimate;
  double c;
  double rel_frobenius;
};

/// Binary model p(y=1|x) = sigmoid(w.x) with score (y - p) w; the closed form
/// is checked against Monte-Carlo over sampled labels.
LogisticFisherReport logistic_fisher_oracle(const Vector& w, const RowMatrix& xs,
                                            Index label_samples, uint64_t seed);

/// Diagonal of the true Fisher: labels sampled from the model's own p_w(y|x).
WeightFisherDiag weight_fisher_diag(const Model& model, const LabeledDataset& ds,
                                    Index samples, uint64_t seed);

/// Sigma*_i = (beta/2) / (F_i + beta/(2 lambda^2)).
NoiseModel effective_noise(const WeightFisherDiag& fisher, double beta,
                           double lambda);

Model sample_perturbed(const Model& model, const NoiseModel& noise, uint64_t seed);

/// Mean over sampled x of (1/2) log det(S(z|x) + ridge I); the data-entropy
/// and dimension constants cancel in model differences and are omitted.
double effective_info_term(const Model& model, const LabeledDataset& ds,
                           const DecoderModel& decoder, double ridge,
                           Index samples, uint64_t seed = 0);

/// Sum_i log(1 / max(F_i, floor)) — larger means flatter weight Fisher.
double weight_logvar(const WeightFisherDiag& fisher, double floor_value);

struct WeightInfoProxy {
  double total;  // ||w_A - w_B||_2
  std::vector<std::pair<std::string, double>> per_layer;
};

/// Finite-difference proxy for dataset sensitivity of the weights: distance
/// between two models retrained with identical seeds on perturbed data.
WeightInfoProxy weight_info_proxy(const Model& a, const Model& b);

struct DpiReport {
  double tr_y;
  double tr_z;
  bool holds;
};

/// Gaussian channel z|x ~ N(f(x), sigma_z^2 I) followed by the categorical
/// head: tr F_{y|x} <= tr F_{z|x}.
DpiReport fisher_dpi_check(const Model& model, const Tensor& x,
                           double sigma_z = 1.0);

}  // namespace robustlens
