#include "robustlens/infogeom.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "robustlens/adversarial.hpp"
#include "robustlens/rng.hpp"

namespace robustlens {

std::string decoder_name(DecoderKind k) {
  return k == DecoderKind::gaussian_unit ? "gaussian-unit" : "categorical";
}

DecoderKind decoder_from_name(const std::string& s) {
  if (s == "gaussian-unit") return DecoderKind::gaussian_unit;
  if (s == "categorical") return DecoderKind::categorical;
  fail(ErrorCode::bad_config, "unknown decoder kind '" + s + "'");
}

void DecoderModel::validate() const {
  if (kind == DecoderKind::gaussian_unit && sigma_z <= 0.0)
    fail(ErrorCode::bad_config, "gaussian-unit decoder needs sigma_z > 0");
}

namespace {

// Shape a single sample to the model's [1,...] input layout.
Tensor single_input(const Model& model, const Tensor& x) {
  if (x.size() != model.config().input_dim())
    fail(ErrorCode::shape_mismatch,
         "expected a single sample of " + std::to_string(model.config().input_dim()) +
             " values, got " + std::to_string(x.size()));
  Tensor flat({1, x.size()}, x.data);
  return model.prepare_input(flat);
}

// Rows of d(selector . out)/dx for each basis selector; `sel_input`/`sel_out`
// pick the z or logits probe of the model graph.
RowMatrix selector_jacobian(const Model& model, const Tensor& x,
                            const std::string& sel_input, const std::string& sel_out,
                            Index rows) {
  Tensor xb = single_input(model, x);
  const Index n = xb.size();
  Bindings b = model.param_bindings();
  b["x"] = xb;
  RowMatrix J(rows, n);
  for (Index i = 0; i < rows; ++i) {
    Tensor sel = Tensor::zeros({1, rows});
    sel.data[i] = 1.0;
    b[sel_input] = sel;
    Bindings g = model.graph().backward(b, sel_out, {"x"});
    const Tensor& gx = g.at("x");
    if (!gx.all_finite()) fail(ErrorCode::non_finite, "non-finite Jacobian row");
    J.row(i) = gx.data.transpose();
  }
  return J;
}

Vector softmax_probs(const Model& model, const Tensor& xb) {
  Tensor lsm = model.forward_log_softmax(xb);
  Vector p = lsm.data.array().exp();
  return p;
}

// Fisher of a categorical distribution with probabilities p, in logit space.
RowMatrix categorical_fisher(const Vector& p) {
  RowMatrix F = RowMatrix(p.asDiagonal()) - p * p.transpose();
  return F;
}

std::vector<Index> pick_indices(Index N, Index count, uint64_t seed,
                                std::string_view tag) {
  if (count > N) fail(ErrorCode::bad_config, "sample count exceeds dataset size");
  std::vector<Index> idx(static_cast<size_t>(N));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng(child_seed(seed, tag));
  for (Index i = N - 1; i > 0; --i)
    std::swap(idx[static_cast<size_t>(i)],
              idx[static_cast<size_t>(rng.next_below(static_cast<uint64_t>(i + 1)))]);
  idx.resize(static_cast<size_t>(count));
  return idx;
}

}  // namespace

RowMatrix rep_jacobian(const Model& model, const Tensor& x) {
  return selector_jacobian(model, x, "_zsel", "zsel", model.config().k);
}

RowMatrix logits_jacobian(const Model& model, const Tensor& x) {
  return selector_jacobian(model, x, "_lsel", "lsel", model.config().K);
}

SensitivityEstimate sensitivity(const Model& model, const Tensor& x,
                                const DecoderModel& decoder) {
  decoder.validate();
  SensitivityEstimate est;
  est.decoder = decoder.kind;
  if (decoder.kind == DecoderKind::gaussian_unit) {
    RowMatrix J = rep_jacobian(model, x);
    est.S = (J.transpose() * J) / (decoder.sigma_z * decoder.sigma_z);
  } else {
    RowMatrix JL = logits_jacobian(model, x);
    Vector p = softmax_probs(model, single_input(model, x));
    est.S = JL.transpose() * categorical_fisher(p) * JL;
  }
  // Symmetrize away roundoff so downstream eigensolves see an exact symmetric
  // matrix.
  est.S = ((est.S + RowMatrix(est.S.transpose())) * 0.5).eval();
  if (!est.S.allFinite()) fail(ErrorCode::non_finite, "non-finite sensitivity");
  return est;
}

RowMatrix fisher_rep(const Model& model, const LabeledDataset& ds,
                     const DecoderModel& decoder, Index sample_count,
                     uint64_t seed) {
  auto idx = pick_indices(ds.size(), sample_count, seed, "fisher-rep");
  const Index n = model.config().input_dim();
  RowMatrix F = RowMatrix::Zero(n, n);
  for (Index i : idx) F += sensitivity(model, ds.image(i), decoder).S;
  F /= static_cast<double>(sample_count);
  return F;
}

std::pair<double, Vector> top_eigpair(const RowMatrix& S, double tol, int max_iter) {
  const Index n = S.rows();
  Vector v = Vector::Ones(n) / std::sqrt(static_cast<double>(n));
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector Sv = S * v;
    double norm = Sv.norm();
    if (norm == 0.0) {
      lambda = 0.0;
      break;
    }
    lambda = v.dot(Sv);
    // Converge on the eigen-residual, which is the reported guarantee.
    if ((Sv - lambda * v).norm() <= tol * std::max(std::abs(lambda), 1e-300)) break;
    v = Sv / norm;
    if (it + 1 == max_iter)
      fail(ErrorCode::not_converged, "power iteration did not converge");
  }
  for (Index i = 0; i < n; ++i) {
    if (v[i] == 0.0) continue;
    if (v[i] < 0.0) v = -v;
    break;
  }
  return {lambda, v};
}

std::vector<KlSecondOrderRow> kl_second_order_check(
    const Model& model, const Tensor& x, const std::vector<double>& epsilons,
    int ascent_steps) {
  Tensor xb = single_input(model, x);
  const Index n = xb.size();
  Bindings params = model.param_bindings();
  Bindings clean = params;
  clean["x"] = xb;
  Tensor lsm_ref = model.graph().evaluate(clean, {"lsm"}).at("lsm");

  DecoderModel dec;
  dec.kind = DecoderKind::categorical;
  SensitivityEstimate est = sensitivity(model, x, dec);
  auto [lambda1, v1] = top_eigpair(est.S);

  auto kl_at = [&](const Vector& delta) {
    Bindings b = params;
    Tensor xa = xb;
    xa.data += delta;
    b["_x_adv"] = xa;
    b["_lsm_ref"] = lsm_ref;
    return model.graph().evaluate(b, {"kl_vs_ref_sum"}).at("kl_vs_ref_sum").value();
  };
  auto kl_grad = [&](const Vector& delta) {
    Bindings b = params;
    Tensor xa = xb;
    xa.data += delta;
    b["_x_adv"] = xa;
    b["_lsm_ref"] = lsm_ref;
    return model.graph().backward(b, "kl_vs_ref_sum", {"_x_adv"}).at("_x_adv").data;
  };

  std::vector<KlSecondOrderRow> rows;
  for (double eps : epsilons) {
    KlSecondOrderRow row;
    row.epsilon = eps;
    row.approx_kl = 0.5 * eps * eps * lambda1;
    if (eps == 0.0) {
      row.exact_kl = 0.0;
      row.ratio = 1.0;
      rows.push_back(row);
      continue;
    }
    // Ascent on the eps-sphere, started from the second-order optimum.
    Vector delta = eps * v1;
    double best = kl_at(delta);
    double step = eps / 4.0;
    for (int t = 0; t < ascent_steps; ++t) {
      Vector g = kl_grad(delta);
      if (!g.allFinite()) fail(ErrorCode::non_finite, "non-finite KL gradient");
      double gn = g.norm();
      if (gn == 0.0) break;
      delta += (step / gn) * g;
      delta *= eps / delta.norm();
      best = std::max(best, kl_at(delta));
    }
    row.exact_kl = best;
    row.ratio = row.approx_kl > 0.0 ? row.exact_kl / row.approx_kl
                                    : (row.exact_kl == 0.0 ? 1.0 : HUGE_VAL);
    rows.push_back(row);
  }
  return rows;
}

GnrBoundReport gnr_bound_check(const RowMatrix& S) {
  GnrBoundReport r;
  r.mean_diag = S.trace() / static_cast<double>(S.rows());
  // Looser tolerance but a generous iteration budget: near-degenerate top
  // eigenvalues make power iteration slow, and 1e-8 slack is all `holds` needs.
  auto [lambda1, v1] = top_eigpair(S, 1e-9, 200000);
  r.top_quadratic = v1.dot(S * v1);
  r.holds = r.mean_diag <= r.top_quadratic + 1e-8;
  return r;
}

LogisticFisherReport logistic_fisher_oracle(const Vector& w, const RowMatrix& xs,
                                            Index label_samples, uint64_t seed) {
  const Index m = xs.rows();
  if (m < 1) fail(ErrorCode::bad_config, "logistic oracle needs at least one point");
  Vector p(m);
  for (Index i = 0; i < m; ++i) p[i] = 1.0 / (1.0 + std::exp(-w.dot(xs.row(i))));

  LogisticFisherReport rep;
  rep.c = (p.array() * (1.0 - p.array())).mean();
  rep.closed_form = rep.c * (w * w.transpose());

  // MC over sampled labels: score of log p(y|x) is (y - p) w.
  Rng rng(child_seed(seed, "logistic-oracle"));
  RowMatrix acc = RowMatrix::Zero(w.size(), w.size());
  for (Index t = 0; t < label_samples; ++t) {
    Index i = t % m;
    double y = rng.next_double() < p[i] ? 1.0 : 0.0;
    double s = y - p[i];
    acc += (s * s) * (w * w.transpose());
  }
  rep.mc_estimate = acc / static_cast<double>(label_samples);
  double denom = std::max(rep.closed_form.norm(), 1e-300);
  rep.rel_frobenius = (rep.mc_estimate - rep.closed_form).norm() / denom;
  return rep;
}

WeightFisherDiag weight_fisher_diag(const Model& model, const LabeledDataset& ds,
                                    Index samples, uint64_t seed) {
  if (samples < 1) fail(ErrorCode::bad_config, "weight Fisher needs samples >= 1");
  const auto& layout = model.params().layout;
  std::vector<std::string> param_names;
  for (const auto& blk : layout) param_names.push_back(blk.name);

  Rng rng(child_seed(seed, "weight-fisher"));
  Bindings params = model.param_bindings();
  const int K = model.config().K;

  WeightFisherDiag out;
  out.values = Vector::Zero(model.flat().size());
  out.sample_count = samples;
  out.seed = seed;

  for (Index t = 0; t < samples; ++t) {
    Index i = static_cast<Index>(rng.next_below(static_cast<uint64_t>(ds.size())));
    Tensor xb = model.prepare_input(ds.image(i));
    Bindings b = params;
    b["x"] = xb;
    Tensor lsm = model.graph().evaluate(b, {"lsm"}).at("lsm");
    // Sample y from the model's own conditional.
    double u = rng.next_double();
    int y = K - 1;
    double cum = 0.0;
    for (int j = 0; j < K; ++j) {
      cum += std::exp(lsm.data[j]);
      if (u < cum) {
        y = j;
        break;
      }
    }
    b["_onehot"] = onehot_batch({y}, K);
    Bindings g = model.graph().backward(b, "loglik", param_names);
    for (const auto& blk : layout)
      out.values.segment(blk.offset, blk.size()) +=
          g.at(blk.name).data.array().square().matrix();
  }
  out.values /= static_cast<double>(samples);
  return out;
}

NoiseModel effective_noise(const WeightFisherDiag& fisher, double beta, double lambda) {
  if (beta <= 0.0 || lambda <= 0.0)
    fail(ErrorCode::bad_config, "effective noise needs beta > 0 and lambda > 0");
  NoiseModel nm;
  nm.beta = beta;
  nm.lambda = lambda;
  double prior = beta / (2.0 * lambda * lambda);
  nm.sigma2 = (beta / 2.0) / (fisher.values.array() + prior);
  return nm;
}

Model sample_perturbed(const Model& model, const NoiseModel& noise, uint64_t seed) {
  if (noise.sigma2.size() != model.flat().size())
    fail(ErrorCode::layout_mismatch, "noise model does not match parameter layout");
  Rng rng(child_seed(seed, "perturb"));
  Vector flat = model.flat();
  for (Index i = 0; i < flat.size(); ++i)
    flat[i] += std::sqrt(noise.sigma2[i]) * rng.normal();
  return model.with_flat(flat);
}

double effective_info_term(const Model& model, const LabeledDataset& ds,
                           const DecoderModel& decoder, double ridge,
                           Index samples, uint64_t seed) {
  if (ridge <= 0.0) fail(ErrorCode::bad_config, "ridge must be positive");
  auto idx = pick_indices(ds.size(), samples, seed, "eff-info");
  double acc = 0.0;
  for (Index i : idx) {
    SensitivityEstimate est = sensitivity(model, ds.image(i), decoder);
    Eigen::SelfAdjointEigenSolver<RowMatrix> es(est.S, Eigen::EigenvaluesOnly);
    double half_logdet = 0.0;
    for (Index j = 0; j < est.S.rows(); ++j)
      half_logdet += 0.5 * std::log(std::max(es.eigenvalues()[j] + ridge, ridge));
    acc += half_logdet;
  }
  return acc / static_cast<double>(samples);
}

double weight_logvar(const WeightFisherDiag& fisher, double floor_value) {
  if (floor_value <= 0.0) fail(ErrorCode::bad_config, "floor must be positive");
  double acc = 0.0;
  for (Index i = 0; i < fisher.values.size(); ++i)
    acc += std::log(1.0 / std::max(fisher.values[i], floor_value));
  return acc;
}

WeightInfoProxy weight_info_proxy(const Model& a, const Model& b) {
  const auto& la = a.params().layout;
  const auto& lb = b.params().layout;
  bool match = la.size() == lb.size();
  for (size_t i = 0; match && i < la.size(); ++i)
    match = la[i].name == lb[i].name && la[i].shape == lb[i].shape;
  if (!match) fail(ErrorCode::layout_mismatch, "models have different architectures");

  WeightInfoProxy out;
  Vector diff = a.flat() - b.flat();
  out.total = diff.norm();
  for (const auto& blk : la)
    out.per_layer.emplace_back(blk.name, diff.segment(blk.offset, blk.size()).norm());
  return out;
}

DpiReport fisher_dpi_check(const Model& model, const Tensor& x, double sigma_z) {
  if (sigma_z <= 0.0) fail(ErrorCode::bad_config, "sigma_z must be positive");
  RowMatrix J = rep_jacobian(model, x);
  Tensor xb = single_input(model, x);
  Vector p = softmax_probs(model, xb);
  // Logits are z.A + b, so the logit-space map applied to z is A'.
  RowMatrix A = model.block("head.A").mat();
  RowMatrix M = A.transpose() * J;  // K x n: d(logits)/dx through z
  DpiReport r;
  r.tr_y = (M.transpose() * categorical_fisher(p) * M).trace();
  r.tr_z = (J.transpose() * J).trace() / (sigma_z * sigma_z);
  r.holds = r.tr_y <= r.tr_z + 1e-8;
  return r;
}

}  // namespace robustlens
