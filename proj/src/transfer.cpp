#include "robustlens/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "robustlens/rng.hpp"

namespace robustlens {

RowMatrix extract_features(const Model& model, const LabeledDataset& ds) {
  const Index k = model.config().k;
  RowMatrix out(ds.size(), k);
  // Per-sample so each row is bit-identical to forward_features(x_i); batched
  // GEMM rounds differently.
  for (Index i = 0; i < ds.size(); ++i)
    out.row(i) = model.forward_features(ds.image(i)).data.transpose();
  return out;
}

namespace {

RowMatrix softmax_rows_of(const RowMatrix& logits) {
  RowMatrix p = logits;
  for (Index i = 0; i < p.rows(); ++i) {
    double m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double head_accuracy(const RowMatrix& X, const std::vector<Index>& idx,
                     const std::vector<int>& labels, const RowMatrix& W,
                     const Vector& b) {
  Index correct = 0;
  for (Index i : idx) {
    Vector logits = W.transpose() * X.row(i).transpose() + b;
    Index best = 0;
    logits.maxCoeff(&best);
    // Lowest-index tie-break to match Model::predict.
    for (Index j = 0; j < logits.size(); ++j)
      if (logits[j] == logits[best] && j < best) best = j;
    if (static_cast<int>(best) == labels[static_cast<size_t>(i)]) ++correct;
  }
  return idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(idx.size());
}

std::pair<std::vector<Index>, std::vector<Index>> seeded_split(Index n,
                                                               double test_fraction,
                                                               uint64_t seed) {
  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(child_seed(seed, "probe-split"));
  for (Index i = n - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)],
              order[static_cast<size_t>(rng.next_below(static_cast<uint64_t>(i + 1)))]);
  Index n_test = static_cast<Index>(std::llround(test_fraction * static_cast<double>(n)));
  std::vector<Index> test(order.begin(), order.begin() + n_test);
  std::vector<Index> train(order.begin() + n_test, order.end());
  return {train, test};
}

}  // namespace

ProbeResult linear_probe(const RowMatrix& features, const std::vector<int>& labels,
                         int K, const ProbeConfig& cfg) {
  const Index n = features.rows();
  if (n != static_cast<Index>(labels.size()))
    fail(ErrorCode::shape_mismatch, "feature/label count mismatch");
  std::set<int> present(labels.begin(), labels.end());
  if (present.size() < 2)
    fail(ErrorCode::degenerate, "linear probe needs at least two classes");

  auto [train_idx, test_idx] = seeded_split(n, cfg.test_fraction, cfg.seed);
  const Index m = static_cast<Index>(train_idx.size());
  const Index k = features.cols();

  RowMatrix X(m, k);
  RowMatrix Y = RowMatrix::Zero(m, K);
  for (Index r = 0; r < m; ++r) {
    X.row(r) = features.row(train_idx[static_cast<size_t>(r)]);
    Y(r, labels[static_cast<size_t>(train_idx[static_cast<size_t>(r)])]) = 1.0;
  }

  ProbeResult res;
  res.W = RowMatrix::Zero(k, K);
  res.b = Vector::Zero(K);
  for (int t = 0; t < cfg.max_iters; ++t) {
    RowMatrix logits = X * res.W;
    logits.rowwise() += res.b.transpose();
    RowMatrix P = softmax_rows_of(logits);
    RowMatrix D = (P - Y) / static_cast<double>(m);
    RowMatrix gW = X.transpose() * D;
    Vector gb = D.colwise().sum().transpose();
    res.grad_norm = std::sqrt(gW.squaredNorm() + gb.squaredNorm());
    res.iters = t;
    if (res.grad_norm < cfg.grad_tol) break;
    res.W -= cfg.lr * gW;
    res.b -= cfg.lr * gb;
  }

  res.train_acc = head_accuracy(features, train_idx, labels, res.W, res.b);
  res.test_acc = head_accuracy(features, test_idx, labels, res.W, res.b);
  return res;
}

void FinetuneConfig::validate() const {
  if (epochs < 0) fail(ErrorCode::bad_config, "finetune epochs must be >= 0");
  if (batch_size < 1) fail(ErrorCode::bad_config, "batch size must be positive");
  if (lr < 0.0) fail(ErrorCode::bad_config, "learning rate must be >= 0");
}

FinetuneOutcome finetune(const Model& source, const LabeledDataset& target,
                         int mode, const std::optional<AttackSpec>& attack,
                         const FinetuneConfig& cfg, const std::string& source_id,
                         const std::string& target_id) {
  cfg.validate();
  target.validate();
  if (mode < 0 || mode > 2)
    fail(ErrorCode::bad_config, "transfer mode must be 0, 1, or 2");
  if (mode == 1 && !source.config().norm)
    fail(ErrorCode::bad_config, "mode 1 needs normalization layers to tune");

  Model model = source;
  model.reinit_head(target.K, child_seed(cfg.head_seed, "transfer-head"));

  // Blocks the mode allows to move.
  std::set<std::string> trainable = {"head.A", "head.b"};
  if (mode == 0 && source.config().norm) {
    std::string z_norm = model.z_norm_name();
    trainable.insert(z_norm + ".g");
    trainable.insert(z_norm + ".s");
  } else if (mode == 1) {
    for (const auto& blk : model.params().layout)
      if (blk.name.rfind("norm", 0) == 0) trainable.insert(blk.name);
  } else if (mode == 2) {
    for (const auto& blk : model.params().layout) trainable.insert(blk.name);
  }

  auto [train_ds, test_ds] = target.split(cfg.test_fraction, cfg.seed);

  const auto& layout = model.params().layout;
  std::vector<std::string> wrt(trainable.begin(), trainable.end());
  Vector velocity = Vector::Zero(model.flat().size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = batch_iter(train_ds.size(), cfg.batch_size,
                              child_seed(cfg.seed, "transfer-train"), epoch);
    for (const auto& idx : batches) {
      const Index bn = static_cast<Index>(idx.size());
      Bindings b = model.param_bindings();
      b["x"] = model.prepare_input(train_ds.gather(idx));
      b["_onehot"] = onehot_batch(train_ds.gather_labels(idx), target.K);
      Bindings g = model.graph().backward(b, "nll_sum", wrt);
      Vector grad = Vector::Zero(model.flat().size());
      for (const auto& blk : layout)
        if (trainable.count(blk.name))
          grad.segment(blk.offset, blk.size()) = g.at(blk.name).data / static_cast<double>(bn);
      velocity = cfg.momentum * velocity - cfg.lr * grad;
      model.set_flat(model.flat() + velocity);
      if (!model.flat().allFinite())
        fail(ErrorCode::non_finite, "finetune diverged");
    }
  }

  FinetuneOutcome out{model, {}};
  out.report.source_id = source_id;
  out.report.target_id = target_id.empty() ? target.name : target_id;
  out.report.mode = mode;
  out.report.seed = cfg.seed;
  out.report.test_acc = clean_accuracy(model, test_ds);
  out.report.robust_test_acc =
      attack ? robust_accuracy(model, test_ds, *attack) : out.report.test_acc;
  return out;
}

namespace {

// Per-class centroid signature in the reference feature space.
struct Signature {
  RowMatrix centroids;  // K x k
  Vector mass;          // class frequencies, sums to 1
};

Signature make_signature(const LabeledDataset& ds, const Model& reference,
                         Index cap) {
  LabeledDataset used = ds;
  if (cap > 0 && ds.size() > cap) {
    std::vector<Index> idx(static_cast<size_t>(cap));
    std::iota(idx.begin(), idx.end(), Index{0});
    used = ds.subset(idx);
  }
  RowMatrix feats = extract_features(reference, used);
  const Index k = feats.cols();
  Signature sig;
  sig.centroids = RowMatrix::Zero(used.K, k);
  sig.mass = Vector::Zero(used.K);
  for (Index i = 0; i < used.size(); ++i) {
    int y = used.labels[static_cast<size_t>(i)];
    sig.centroids.row(y) += feats.row(i);
    sig.mass[y] += 1.0;
  }
  for (Index c = 0; c < used.K; ++c) {
    if (sig.mass[c] == 0.0)
      fail(ErrorCode::degenerate,
           "class " + std::to_string(c) + " of '" + used.name + "' is empty");
    sig.centroids.row(c) /= sig.mass[c];
  }
  sig.mass /= sig.mass.sum();
  return sig;
}

double logsumexp(const Vector& v) {
  double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

EmdResult dataset_emd(const LabeledDataset& a, const LabeledDataset& b,
                      const Model& reference, const EmdConfig& cfg) {
  Signature sa = make_signature(a, reference, cfg.feature_cap);
  Signature sb = make_signature(b, reference, cfg.feature_cap);
  const Index na = sa.mass.size(), nb = sb.mass.size();

  RowMatrix C(na, nb);
  for (Index i = 0; i < na; ++i)
    for (Index j = 0; j < nb; ++j)
      C(i, j) = (sa.centroids.row(i) - sb.centroids.row(j)).norm();

  // Log-domain Sinkhorn: reg 1e-2 with O(1) costs underflows in the kernel
  // domain, so iterate on the potentials directly.
  Vector f = Vector::Zero(na), g = Vector::Zero(nb);
  Vector log_a = sa.mass.array().log(), log_b = sb.mass.array().log();
  for (int it = 0; it < cfg.max_iters; ++it) {
    for (Index i = 0; i < na; ++i) {
      Vector row = (g - C.row(i).transpose()) / cfg.reg;
      f[i] = cfg.reg * (log_a[i] - logsumexp(row));
    }
    for (Index j = 0; j < nb; ++j) {
      Vector col = (f - C.col(j)) / cfg.reg;
      g[j] = cfg.reg * (log_b[j] - logsumexp(col));
    }
    if (it % 10 == 9) {
      // After a g-update the column marginals are exact; check the rows.
      double viol = 0.0;
      for (Index i = 0; i < na; ++i) {
        Vector row = (g.array() + f[i] - C.row(i).transpose().array()) / cfg.reg;
        viol += std::abs(std::exp(logsumexp(row)) - sa.mass[i]);
      }
      if (viol < 1e-12) break;
    }
  }

  RowMatrix P(na, nb);
  for (Index i = 0; i < na; ++i)
    for (Index j = 0; j < nb; ++j)
      P(i, j) = std::exp((f[i] + g[j] - C(i, j)) / cfg.reg);

  EmdResult res;
  res.residual = (P.rowwise().sum() - sa.mass).lpNorm<1>() +
                 (P.colwise().sum().transpose() - sb.mass).lpNorm<1>();
  res.converged = res.residual <= 1e-6;

  // Round to a feasible plan (scale rows, then columns, then patch the
  // leftover mass with a rank-one term).
  for (Index i = 0; i < na; ++i) {
    double r = P.row(i).sum();
    if (r > sa.mass[i]) P.row(i) *= sa.mass[i] / r;
  }
  for (Index j = 0; j < nb; ++j) {
    double c = P.col(j).sum();
    if (c > sb.mass[j]) P.col(j) *= sb.mass[j] / c;
  }
  Vector err_a = sa.mass - P.rowwise().sum();
  Vector err_b = sb.mass - P.colwise().sum().transpose();
  double total = err_a.lpNorm<1>();
  if (total > 0.0) P += (err_a * err_b.transpose()) / total;

  res.distance = (P.array() * C.array()).sum();
  return res;
}

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    fail(ErrorCode::bad_config, "spearman needs two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t i, size_t j) { return v[i] < v[j]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank, 1-based
      for (size_t t = i; t <= j; ++t) r[order[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0)
    fail(ErrorCode::degenerate, "spearman undefined for a constant series");
  return cov / std::sqrt(va * vb);
}

GapTable gap_vs_distance(std::vector<GapRow> rows) {
  if (rows.size() < 3)
    fail(ErrorCode::bad_config, "gap_vs_distance needs at least three targets");
  std::sort(rows.begin(), rows.end(),
            [](const GapRow& x, const GapRow& y) { return x.distance < y.distance; });
  std::vector<double> d, g;
  for (const auto& r : rows) {
    d.push_back(r.distance);
    g.push_back(r.gap);
  }
  GapTable table;
  table.rows = std::move(rows);
  table.spearman = spearman_rho(d, g);
  return table;
}

}  // namespace robustlens
