#include "robustlens/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "robustlens/rng.hpp"

namespace robustlens {

void AttackSpec::validate() const {
  if (epsilon < 0.0) fail(ErrorCode::bad_config, "attack epsilon must be >= 0");
  if (steps < 1) fail(ErrorCode::bad_config, "attack steps must be >= 1");
  if (clamp_lo >= clamp_hi) fail(ErrorCode::bad_config, "bad clamp range");
}

void TrainConfig::validate() const {
  if (epochs < 1) fail(ErrorCode::bad_config, "epochs must be positive");
  if (batch_size < 1) fail(ErrorCode::bad_config, "batch size must be positive");
  if (lr <= 0.0) fail(ErrorCode::bad_config, "learning rate must be positive");
}

TrainMode train_mode_from_name(const std::string& s) {
  if (s == "standard") return TrainMode::standard;
  if (s == "at") return TrainMode::at;
  if (s == "trades") return TrainMode::trades;
  fail(ErrorCode::bad_config, "unknown training mode '" + s + "'");
}

std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::standard: return "standard";
    case TrainMode::at: return "at";
    case TrainMode::trades: return "trades";
  }
  return "?";
}

Tensor onehot_batch(const std::vector<int>& y, int K) {
  Tensor t = Tensor::zeros({static_cast<Index>(y.size()), K});
  for (size_t i = 0; i < y.size(); ++i)
    t.data[static_cast<Index>(i) * K + y[i]] = 1.0;
  return t;
}

namespace {

// Per-sample loss values from a log-softmax batch.
Vector per_sample_ce(const Tensor& lsm, const std::vector<int>& y) {
  Vector out(lsm.dim(0));
  for (Index i = 0; i < lsm.dim(0); ++i)
    out[i] = -lsm.data[i * lsm.dim(1) + y[static_cast<size_t>(i)]];
  return out;
}

Vector per_sample_kl(const Tensor& lsm_adv, const Tensor& lsm_ref) {
  Vector out(lsm_adv.dim(0));
  Index K = lsm_adv.dim(1);
  for (Index i = 0; i < lsm_adv.dim(0); ++i) {
    double acc = 0.0;
    for (Index j = 0; j < K; ++j) {
      Index p = i * K + j;
      acc += std::exp(lsm_adv.data[p]) * (lsm_adv.data[p] - lsm_ref.data[p]);
    }
    out[i] = acc;
  }
  return out;
}

struct AttackObjective {
  std::string grad_output;  // graph output for the ascent
  Tensor lsm_ref;           // clean log-softmax (kl target only)
};

}  // namespace

Tensor pgd_attack(const Model& model, const Tensor& x_in, const std::vector<int>& y,
                  const AttackSpec& spec) {
  spec.validate();
  Tensor x = model.prepare_input(x_in);
  if (spec.epsilon == 0.0) return x;

  const Index n = x.dim(0);
  const Index d = x.size() / n;
  Bindings params = model.param_bindings();

  AttackObjective obj;
  Tensor onehot;
  if (spec.loss_target == LossTarget::cross_entropy) {
    obj.grad_output = "nll_adv_sum";
    onehot = onehot_batch(y, model.config().K);
  } else {
    obj.grad_output = "kl_vs_ref_sum";
    Bindings b = params;
    b["x"] = x;
    obj.lsm_ref = model.graph().evaluate(b, {"lsm"}).at("lsm");
  }

  auto adv_bindings = [&](const Tensor& xa) {
    Bindings b = params;
    b["_x_adv"] = xa;
    if (spec.loss_target == LossTarget::cross_entropy)
      b["_onehot"] = onehot;
    else
      b["_lsm_ref"] = obj.lsm_ref;
    return b;
  };
  auto per_sample_loss = [&](const Tensor& xa) {
    Tensor lsm = model.graph().evaluate(adv_bindings(xa), {"lsm_adv"}).at("lsm_adv");
    return spec.loss_target == LossTarget::cross_entropy ? per_sample_ce(lsm, y)
                                                         : per_sample_kl(lsm, obj.lsm_ref);
  };

  Vector loss0 = per_sample_loss(x);
  Tensor xa = x;
  double step = spec.effective_step();
  for (int t = 0; t < spec.steps; ++t) {
    Bindings grads = model.graph().backward(adv_bindings(xa), obj.grad_output, {"_x_adv"});
    const Tensor& g = grads.at("_x_adv");
    if (!g.all_finite()) fail(ErrorCode::non_finite, "non-finite attack gradient");
    for (Index i = 0; i < n; ++i) {
      auto gi = g.data.segment(i * d, d);
      double norm = gi.norm();
      if (norm == 0.0) continue;
      auto xi = xa.data.segment(i * d, d);
      xi += (step / norm) * gi;
      // Project onto the l2 ball around the clean sample, then clamp;
      // clamping cannot leave the ball because the clean pixels are feasible.
      Vector delta = xi - x.data.segment(i * d, d);
      double dn = delta.norm();
      if (dn > spec.epsilon) delta *= spec.epsilon / dn;
      xi = x.data.segment(i * d, d) + delta;
      for (Index j = 0; j < d; ++j)
        xi[j] = std::clamp(xi[j], spec.clamp_lo, spec.clamp_hi);
    }
  }

  // Fallback: never return a point with lower loss than the clean sample.
  Vector loss1 = per_sample_loss(xa);
  for (Index i = 0; i < n; ++i)
    if (loss1[i] < loss0[i]) xa.data.segment(i * d, d) = x.data.segment(i * d, d);
  return xa;
}

double kl_robust_loss(const Model& model, const Tensor& x_in, const std::vector<int>& y,
                      const AttackSpec& spec, double beta) {
  if (spec.loss_target != LossTarget::kl_vs_clean)
    fail(ErrorCode::bad_config, "kl_robust_loss requires the kl-vs-clean target");
  Tensor x = model.prepare_input(x_in);
  const Index n = x.dim(0);
  Tensor lsm = model.forward_log_softmax(x);
  double ce = per_sample_ce(lsm, y).mean();
  if (beta == 0.0 || spec.epsilon == 0.0) return ce;
  Tensor xa = pgd_attack(model, x, y, spec);
  Bindings b = model.param_bindings();
  b["_x_adv"] = xa;
  Tensor lsm_adv = model.graph().evaluate(b, {"lsm_adv"}).at("lsm_adv");
  double kl = per_sample_kl(lsm_adv, lsm).mean();
  (void)n;
  return ce + beta * kl;
}

double clean_accuracy(const Model& model, const LabeledDataset& ds) {
  Index correct = 0;
  auto batches = batch_iter(ds.size(), 256, 0, 0);
  for (const auto& idx : batches) {
    auto preds = model.predict(ds.gather(idx));
    auto ys = ds.gather_labels(idx);
    for (size_t i = 0; i < idx.size(); ++i)
      if (preds[i] == ys[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

double robust_accuracy(const Model& model, const LabeledDataset& ds,
                       const AttackSpec& spec) {
  Index correct = 0;
  auto batches = batch_iter(ds.size(), 128, 0, 0);
  for (const auto& idx : batches) {
    Tensor x = ds.gather(idx);
    auto ys = ds.gather_labels(idx);
    Tensor xa = pgd_attack(model, x, ys, spec);
    auto preds = model.predict(xa);
    for (size_t i = 0; i < idx.size(); ++i)
      if (preds[i] == ys[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::pair<Model, TrainMetrics> train(const Model& model_in, const LabeledDataset& ds,
                                     const AttackSpec& attack, const TrainConfig& cfg) {
  attack.validate();
  cfg.validate();
  ds.validate();
  if (ds.K != model_in.config().K)
    fail(ErrorCode::bad_config, "dataset class count does not match model");

  Model model = model_in;
  const auto& layout = model.params().layout;
  std::vector<std::string> param_names;
  for (const auto& b : layout) param_names.push_back(b.name);

  Vector velocity = Vector::Zero(model.flat().size());
  TrainMetrics metrics;

  // Deterministic evaluation subset for the per-epoch metrics.
  LabeledDataset eval_ds = ds;
  if (ds.size() > cfg.eval_cap) {
    auto order = batch_iter(ds.size(), cfg.eval_cap, child_seed(cfg.seed, "eval-subset"), 0);
    eval_ds = ds.subset(order.front());
  }

  AttackSpec train_attack = attack;
  if (cfg.mode == TrainMode::trades) train_attack.loss_target = LossTarget::kl_vs_clean;

  std::vector<int> decay_epochs;
  for (double f : cfg.decay_points)
    decay_epochs.push_back(static_cast<int>(f * cfg.epochs));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr;
    for (int de : decay_epochs)
      if (epoch >= de) lr *= 0.1;

    double loss_sum = 0.0;
    Index loss_count = 0;
    auto batches = batch_iter(ds.size(), cfg.batch_size, cfg.seed, epoch);
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      const Index bn = static_cast<Index>(idx.size());
      Tensor x = model.prepare_input(ds.gather(idx));
      std::vector<int> y = ds.gather_labels(idx);
      Tensor onehot = onehot_batch(y, ds.K);

      Bindings base = model.param_bindings();
      Vector grad = Vector::Zero(model.flat().size());
      double batch_loss = 0.0;

      auto accumulate = [&](const Bindings& b, const std::string& out, double scale) {
        Bindings g = model.graph().backward(b, out, param_names);
        for (const auto& blk : layout)
          grad.segment(blk.offset, blk.size()) += scale * g.at(blk.name).data;
      };

      if (cfg.mode == TrainMode::standard ||
          (cfg.mode == TrainMode::at && attack.epsilon == 0.0)) {
        Bindings b = base;
        b["x"] = x;
        b["_onehot"] = onehot;
        batch_loss = model.graph().evaluate(b, {"nll_sum"}).at("nll_sum").value() / bn;
        accumulate(b, "nll_sum", 1.0 / bn);
      } else if (cfg.mode == TrainMode::at) {
        Tensor xa = pgd_attack(model, x, y, train_attack);
        Bindings b = base;
        b["_x_adv"] = xa;
        b["_onehot"] = onehot;
        batch_loss = model.graph().evaluate(b, {"nll_adv_sum"}).at("nll_adv_sum").value() / bn;
        accumulate(b, "nll_adv_sum", 1.0 / bn);
      } else {  // trades
        Bindings b = base;
        b["x"] = x;
        b["_onehot"] = onehot;
        double ce = model.graph().evaluate(b, {"nll_sum"}).at("nll_sum").value() / bn;
        accumulate(b, "nll_sum", 1.0 / bn);
        batch_loss = ce;
        if (cfg.beta != 0.0 && attack.epsilon > 0.0) {
          Tensor xa = pgd_attack(model, x, y, train_attack);
          b["_x_adv"] = xa;
          double kl = model.graph().evaluate(b, {"kl_sum"}).at("kl_sum").value() / bn;
          accumulate(b, "kl_sum", cfg.beta / bn);
          batch_loss += cfg.beta * kl;
        }
      }

      if (!std::isfinite(batch_loss)) {
        std::ostringstream os;
        os << "training diverged: loss " << batch_loss << " at epoch " << epoch
           << " batch " << bi << " lr " << lr << " |w| " << model.param_l2_norm();
        fail(ErrorCode::non_finite, os.str());
      }

      if (cfg.weight_decay > 0.0) grad += cfg.weight_decay * model.flat();
      velocity = cfg.momentum * velocity - lr * grad;
      model.set_flat(model.flat() + velocity);

      loss_sum += batch_loss * bn;
      loss_count += bn;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.loss = loss_sum / static_cast<double>(loss_count);
    em.clean_acc = clean_accuracy(model, eval_ds);
    AttackSpec eval_attack = attack;
    eval_attack.loss_target = LossTarget::cross_entropy;
    em.robust_acc = attack.epsilon > 0.0
                        ? robust_accuracy(model, eval_ds, eval_attack)
                        : em.clean_acc;
    em.w_l2norm = model.param_l2_norm();
    metrics.epochs.push_back(em);
  }

  Model out = model;
  out.mutable_config().train_eps = attack.epsilon;
  return {out, metrics};
}

}  // namespace robustlens
