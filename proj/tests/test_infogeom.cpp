#include <cmath>

#include "doctest.h"
#include "robustlens/adversarial.hpp"
#include "robustlens/infogeom.hpp"
#include "robustlens/rng.hpp"

using namespace robustlens;

namespace {

ModelConfig vec_mlp(int in, int k, int K, uint64_t seed = 0) {
  ModelConfig c;
  c.arch = Arch::mlp;
  c.widths = {k};
  c.k = k;
  c.K = K;
  c.seed = seed;
  c.in_c = 1;
  c.in_h = 1;
  c.in_w = in;
  return c;
}

// z = x.W + 1 with positive inputs, so relu is inactive and J = W'.
Model affine_model(const RowMatrix& W, int K, uint64_t seed = 0) {
  Model m = Model::init(vec_mlp(static_cast<int>(W.rows()),
                                static_cast<int>(W.cols()), K, seed));
  Tensor w = Tensor::zeros({W.rows(), W.cols()});
  w.mat() = W;
  m.set_block("fc0.w", w);
  m.set_block("fc0.b", Tensor::full({W.cols()}, 1.0));
  return m;
}

Tensor random_sample(Index n, uint64_t seed) {
  Rng rng(seed);
  Tensor x = Tensor::zeros({n});
  for (Index i = 0; i < n; ++i) x.data[i] = rng.next_double();
  return x;
}

LabeledDataset vector_dataset(const RowMatrix& rows, int K = 2) {
  LabeledDataset ds;
  ds.images = Tensor::zeros({rows.rows(), 1, 1, rows.cols()});
  for (Index i = 0; i < rows.size(); ++i) ds.images.data[i] = rows.data()[i];
  for (Index i = 0; i < rows.rows(); ++i)
    ds.labels.push_back(static_cast<int>(i) % K);
  ds.name = "vecs";
  ds.K = K;
  return ds;
}

}  // namespace

TEST_CASE("rep_jacobian") {
  SUBCASE("affine extractor has J = W'") {
    Rng rng(5);
    RowMatrix W(4, 3);
    for (Index i = 0; i < W.size(); ++i) W.data()[i] = rng.next_double();
    Model m = affine_model(W, 2);
    RowMatrix J = rep_jacobian(m, random_sample(4, 6));
    CHECK((J - RowMatrix(W.transpose())).norm() < 1e-14);
  }
  SUBCASE("constant extractor has J = 0") {
    Model m = affine_model(RowMatrix::Zero(4, 3), 2);
    RowMatrix J = rep_jacobian(m, random_sample(4, 7));
    CHECK(J.norm() == 0.0);
  }
  SUBCASE("J v matches the forward-mode directional derivative") {
    Model m = Model::init(vec_mlp(6, 4, 3, 11));
    Tensor x = random_sample(6, 8);
    RowMatrix J = rep_jacobian(m, x);

    Rng rng(9);
    Tensor v = Tensor::zeros({1, 6});
    for (Index i = 0; i < 6; ++i) v.data[i] = rng.normal();
    Bindings b = m.param_bindings();
    b["x"] = m.prepare_input(Tensor({1, 6}, x.data));
    Bindings dirs;
    dirs["x"] = v;
    Vector tangent = m.graph().jvp(b, dirs, {"z"}).at("z").data;
    Vector Jv = J * v.data;
    CHECK((tangent - Jv).norm() <= 1e-10 * std::max(Jv.norm(), 1.0));
  }
  SUBCASE("batch input is rejected") {
    Model m = Model::init(vec_mlp(4, 3, 2));
    CHECK_THROWS_AS(rep_jacobian(m, Tensor::zeros({2, 4})), Error);
  }
}

TEST_CASE("sensitivity") {
  SUBCASE("affine extractor, gaussian-unit: S = J'J") {
    Rng rng(13);
    RowMatrix W(4, 3);
    for (Index i = 0; i < W.size(); ++i) W.data()[i] = rng.next_double();
    Model m = affine_model(W, 2);
    DecoderModel dec;
    SensitivityEstimate est = sensitivity(m, random_sample(4, 3), dec);
    RowMatrix expect = W * W.transpose();  // J'J with J = W'
    CHECK((est.S - expect).norm() < 1e-13);
    CHECK((est.S - RowMatrix(est.S.transpose())).norm() < 1e-12);
  }
  SUBCASE("zero network gives S = 0") {
    Model m = affine_model(RowMatrix::Zero(5, 3), 2);
    DecoderModel dec;
    CHECK(sensitivity(m, random_sample(5, 4), dec).S.norm() == 0.0);
    dec.kind = DecoderKind::categorical;
    CHECK(sensitivity(m, random_sample(5, 4), dec).S.norm() == 0.0);
  }
  SUBCASE("sigma_z scales S by 1/sigma^2") {
    Rng wrng(17);
    RowMatrix W(5, 3);
    for (Index i = 0; i < W.size(); ++i) W.data()[i] = wrng.next_double();
    Model m = affine_model(W, 2);  // relu always active, so S is nonzero
    Tensor x = random_sample(5, 5);
    DecoderModel unit, wide;
    wide.sigma_z = 2.0;
    RowMatrix a = sensitivity(m, x, unit).S;
    RowMatrix b = sensitivity(m, x, wide).S;
    CHECK(a.norm() > 0.0);
    CHECK((a - 4.0 * b).norm() <= 1e-12 * a.norm());
  }
  SUBCASE("categorical S matches Monte-Carlo over sampled labels") {
    Model m = Model::init(vec_mlp(6, 4, 3, 19));
    Tensor x = random_sample(6, 21);
    DecoderModel dec;
    dec.kind = DecoderKind::categorical;
    RowMatrix S = sensitivity(m, x, dec).S;

    RowMatrix JL = logits_jacobian(m, x);
    Tensor lsm = m.forward_log_softmax(m.prepare_input(Tensor({1, 6}, x.data)));
    Vector p = lsm.data.array().exp();
    Rng rng(23);
    RowMatrix mc = RowMatrix::Zero(6, 6);
    const int draws = 100000;
    for (int t = 0; t < draws; ++t) {
      double u = rng.next_double();
      int y = 2;
      double cum = 0.0;
      for (int j = 0; j < 3; ++j) {
        cum += p[j];
        if (u < cum) {
          y = j;
          break;
        }
      }
      Vector score = Vector::Zero(3);
      score[y] = 1.0;
      score -= p;
      Vector g = JL.transpose() * score;
      mc += g * g.transpose();
    }
    mc /= draws;
    CHECK((mc - S).norm() / S.norm() < 0.02);
  }
}

TEST_CASE("fisher_rep") {
  Model m = Model::init(vec_mlp(4, 3, 2, 29));
  Rng rng(31);
  RowMatrix rows(5, 4);
  for (Index i = 0; i < rows.size(); ++i) rows.data()[i] = rng.next_double();
  LabeledDataset ds = vector_dataset(rows);
  DecoderModel dec;

  SUBCASE("one point equals the sensitivity there") {
    RowMatrix F = fisher_rep(m, ds, dec, 1, 3);
    bool matched = false;
    for (Index i = 0; i < ds.size(); ++i)
      if ((F - sensitivity(m, ds.image(i), dec).S).norm() < 1e-14) matched = true;
    CHECK(matched);
  }
  SUBCASE("linear model is input-independent") {
    RowMatrix W(4, 3);
    for (Index i = 0; i < W.size(); ++i) W.data()[i] = 0.3 + 0.1 * static_cast<double>(i);
    Model lin = affine_model(W, 2);
    RowMatrix F = fisher_rep(lin, ds, dec, 5);
    CHECK((F - RowMatrix(W * W.transpose())).norm() < 1e-12);
  }
  SUBCASE("trace is the mean of per-sample traces") {
    RowMatrix F = fisher_rep(m, ds, dec, 5);
    double acc = 0.0;
    for (Index i = 0; i < 5; ++i) acc += sensitivity(m, ds.image(i), dec).S.trace();
    CHECK(F.trace() == doctest::Approx(acc / 5.0).epsilon(1e-12));
  }
  SUBCASE("oversampling is rejected") {
    CHECK_THROWS_AS(fisher_rep(m, ds, dec, 6), Error);
  }
}

TEST_CASE("top_eigpair") {
  SUBCASE("diag(3,1)") {
    RowMatrix S(2, 2);
    S << 3, 0, 0, 1;
    auto [l, v] = top_eigpair(S);
    CHECK(l == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(std::abs(v[0]) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(v[0] > 0.0);
    CHECK((S * v - l * v).norm() <= 1e-6);
  }
  SUBCASE("[[2,1],[1,2]]") {
    RowMatrix S(2, 2);
    S << 2, 1, 1, 2;
    auto [l, v] = top_eigpair(S);
    CHECK(l == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(v[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
    CHECK(v[1] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
  }
  SUBCASE("identity converges immediately") {
    auto [l, v] = top_eigpair(RowMatrix::Identity(4, 4));
    CHECK(l == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("zero matrix") {
    auto [l, v] = top_eigpair(RowMatrix::Zero(3, 3));
    CHECK(l == 0.0);
    CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("kl_second_order_check") {
  SUBCASE("epsilon 0 gives zero KL and ratio 1") {
    Model m = Model::init(vec_mlp(4, 3, 3, 37));
    auto rows = kl_second_order_check(m, random_sample(4, 1), {0.0});
    CHECK(rows[0].exact_kl == 0.0);
    CHECK(rows[0].approx_kl == 0.0);
    CHECK(rows[0].ratio == 1.0);
  }
  SUBCASE("softmax-linear model at eps 1e-2 has ratio in [0.9, 1.1]") {
    RowMatrix W = RowMatrix::Identity(4, 4);
    Model m = affine_model(W, 3, 41);
    auto rows = kl_second_order_check(m, random_sample(4, 2), {1e-2}, 30);
    CHECK(rows[0].ratio > 0.9);
    CHECK(rows[0].ratio < 1.1);
  }
  SUBCASE("ratio approaches 1 as eps shrinks") {
    Model m = Model::init(vec_mlp(5, 4, 3, 43));
    auto rows = kl_second_order_check(m, random_sample(5, 3), {1e-1, 1e-2, 1e-3}, 30);
    double d1 = std::abs(rows[0].ratio - 1.0);
    double d2 = std::abs(rows[1].ratio - 1.0);
    double d3 = std::abs(rows[2].ratio - 1.0);
    CHECK(d2 <= d1 + 1e-12);
    CHECK(d3 <= d2 + 1e-12);
    // The ascent can only improve on the second-order starting point.
    for (const auto& r : rows) CHECK(r.ratio >= 1.0 - 1e-9);
  }
}

TEST_CASE("gnr_bound_check") {
  SUBCASE("identity is the equality case") {
    GnrBoundReport r = gnr_bound_check(RowMatrix::Identity(5, 5));
    CHECK(r.mean_diag == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.top_quadratic == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.holds);
  }
  SUBCASE("diag(3,1)") {
    RowMatrix S(2, 2);
    S << 3, 0, 0, 1;
    GnrBoundReport r = gnr_bound_check(S);
    CHECK(r.mean_diag == doctest::Approx(2.0));
    CHECK(r.top_quadratic == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(r.holds);
  }
  SUBCASE("100 random PSD matrices") {
    Rng rng(47);
    for (int t = 0; t < 100; ++t) {
      Index n = 2 + static_cast<Index>(rng.next_below(5));
      RowMatrix G(n, n);
      for (Index i = 0; i < G.size(); ++i) G.data()[i] = rng.normal();
      RowMatrix S = G.transpose() * G;
      CHECK(gnr_bound_check(S).holds);
    }
  }
}

TEST_CASE("logistic_fisher_oracle") {
  SUBCASE("zero weights give zero Fisher") {
    RowMatrix xs(2, 2);
    xs << 1, 0, -1, 0;
    auto rep = logistic_fisher_oracle(Vector::Zero(2), xs, 1000, 1);
    CHECK(rep.closed_form.norm() == 0.0);
    CHECK(rep.mc_estimate.norm() == 0.0);
  }
  SUBCASE("w=(1,0) on x in {(1,0),(-1,0)}") {
    Vector w(2);
    w << 1, 0;
    RowMatrix xs(2, 2);
    xs << 1, 0, -1, 0;
    auto rep = logistic_fisher_oracle(w, xs, 100000, 2);
    double s1 = 1.0 / (1.0 + std::exp(-1.0));
    double c = s1 * (1.0 - s1);  // same value at both points
    CHECK(rep.c == doctest::Approx(c).epsilon(1e-12));
    CHECK(rep.closed_form(0, 0) == doctest::Approx(c).epsilon(1e-12));
    CHECK(rep.closed_form(1, 1) == 0.0);
    CHECK(rep.rel_frobenius < 0.02);
  }
  SUBCASE("trace identity tr F = c |w|^2") {
    Rng rng(53);
    Vector w(3);
    for (Index i = 0; i < 3; ++i) w[i] = rng.normal();
    RowMatrix xs(4, 3);
    for (Index i = 0; i < xs.size(); ++i) xs.data()[i] = rng.normal();
    auto rep = logistic_fisher_oracle(w, xs, 10, 3);
    CHECK(rep.closed_form.trace() ==
          doctest::Approx(rep.c * w.squaredNorm()).epsilon(1e-12));
  }
}

TEST_CASE("weight_fisher_diag") {
  Rng rng(59);
  RowMatrix rows(8, 4);
  for (Index i = 0; i < rows.size(); ++i) rows.data()[i] = rng.next_double();
  LabeledDataset ds = vector_dataset(rows, 4);

  SUBCASE("uniform-output model: head-bias Fisher is the multinomial variance") {
    Model m = Model::init(vec_mlp(4, 3, 4, 61));
    m.set_flat(Vector::Zero(m.flat().size()));  // logits identically zero
    WeightFisherDiag f = weight_fisher_diag(m, ds, 4000, 7);
    const auto& blk = m.params().find("head.b");
    double expect = 0.25 * (1.0 - 0.25);
    for (Index i = 0; i < blk.size(); ++i) {
      double v = f.values[blk.offset + i];
      CHECK(v == doctest::Approx(expect).epsilon(0.1));
    }
    // Everything upstream of the zero representation has zero gradient except
    // the biases feeding the relu at zero (subgradient 0), so check sign only.
    CHECK(f.values.minCoeff() >= 0.0);
  }
  SUBCASE("entries are nonnegative and the estimate is seed-deterministic") {
    Model m = Model::init(vec_mlp(4, 3, 4, 67));
    WeightFisherDiag a = weight_fisher_diag(m, ds, 200, 11);
    WeightFisherDiag b = weight_fisher_diag(m, ds, 200, 11);
    CHECK(a.values == b.values);
    CHECK(a.values.minCoeff() >= 0.0);
    CHECK(a.values.maxCoeff() > 0.0);
  }
  SUBCASE("two long runs with different seeds agree roughly") {
    Model m = Model::init(vec_mlp(4, 3, 4, 71));
    WeightFisherDiag a = weight_fisher_diag(m, ds, 3000, 13);
    WeightFisherDiag b = weight_fisher_diag(m, ds, 3000, 17);
    CHECK((a.values - b.values).norm() / a.values.norm() < 0.15);
  }
}

TEST_CASE("effective_noise") {
  WeightFisherDiag f;
  f.values = Vector(3);
  double beta = 0.8, lambda = 2.0;
  f.values << 0.0, beta / (2.0 * lambda * lambda), 5.0;
  NoiseModel nm = effective_noise(f, beta, lambda);
  CHECK(nm.sigma2[0] == doctest::Approx(lambda * lambda).epsilon(1e-12));
  CHECK(nm.sigma2[1] == doctest::Approx(lambda * lambda / 2.0).epsilon(1e-12));
  // Antitone in F and bounded by lambda^2.
  CHECK(nm.sigma2[2] < nm.sigma2[1]);
  CHECK(nm.sigma2.maxCoeff() <= lambda * lambda + 1e-12);
  // beta -> 0 shrinks the noise where F > 0.
  NoiseModel tiny = effective_noise(f, 1e-8, lambda);
  CHECK(tiny.sigma2[2] < 1e-8);
  CHECK_THROWS_AS(effective_noise(f, 0.0, lambda), Error);
}

TEST_CASE("sample_perturbed") {
  Model m = Model::init(vec_mlp(4, 3, 2, 73));
  NoiseModel nm;
  nm.sigma2 = Vector::Constant(m.flat().size(), 0.04);

  SUBCASE("same seed gives the same perturbation; zero noise is the identity") {
    Model a = sample_perturbed(m, nm, 5);
    Model b = sample_perturbed(m, nm, 5);
    CHECK(a.flat() == b.flat());
    CHECK(a.flat() != m.flat());
    NoiseModel zero;
    zero.sigma2 = Vector::Zero(m.flat().size());
    CHECK(sample_perturbed(m, zero, 5).flat() == m.flat());
  }
  SUBCASE("empirical variance matches sigma2 within 5%") {
    const int draws = 10000;
    double mean = 0.0, sq = 0.0;
    for (int t = 0; t < draws; ++t) {
      double d = sample_perturbed(m, nm, static_cast<uint64_t>(t)).flat()[0] - m.flat()[0];
      mean += d;
      sq += d * d;
    }
    mean /= draws;
    double var = sq / draws - mean * mean;
    CHECK(var == doctest::Approx(0.04).epsilon(0.05));
  }
  SUBCASE("layout mismatch is rejected") {
    NoiseModel bad;
    bad.sigma2 = Vector::Zero(3);
    CHECK_THROWS_AS(sample_perturbed(m, bad, 1), Error);
  }
}

TEST_CASE("effective_info_term") {
  Rng rng(79);
  RowMatrix rows(4, 6);
  for (Index i = 0; i < rows.size(); ++i) rows.data()[i] = rng.next_double();
  LabeledDataset ds = vector_dataset(rows);
  DecoderModel dec;
  double ridge = 1e-6;

  SUBCASE("zero network gives (n/2) log ridge") {
    Model m = affine_model(RowMatrix::Zero(6, 3), 2);
    double t = effective_info_term(m, ds, dec, ridge, 4);
    CHECK(t == doctest::Approx(3.0 * std::log(ridge)).epsilon(1e-9));
  }
  SUBCASE("orthonormal-row Jacobian") {
    RowMatrix W = RowMatrix::Zero(6, 2);
    W(0, 0) = 1.0;
    W(1, 1) = 1.0;  // J = W' has orthonormal rows
    Model m = affine_model(W, 2);
    double t = effective_info_term(m, ds, dec, ridge, 4);
    double expect = 0.5 * (2.0 * std::log(1.0 + ridge) + 4.0 * std::log(ridge));
    CHECK(t == doctest::Approx(expect).epsilon(1e-9));
  }
  SUBCASE("doubling the extractor output increases the term") {
    Rng wrng(83);
    RowMatrix W(6, 3);
    for (Index i = 0; i < W.size(); ++i) W.data()[i] = wrng.next_double();
    Model m = affine_model(W, 2);  // active relu keeps S away from zero
    double t1 = effective_info_term(m, ds, dec, ridge, 4);
    Model doubled = m.with_flat(m.flat());
    Tensor w = doubled.block("fc0.w");
    w.data *= 2.0;
    doubled.set_block("fc0.w", w);
    Tensor b = doubled.block("fc0.b");
    b.data *= 2.0;
    doubled.set_block("fc0.b", b);
    double t2 = effective_info_term(doubled, ds, dec, ridge, 4);
    CHECK(t2 > t1);
  }
}

TEST_CASE("weight_logvar") {
  WeightFisherDiag f;
  f.values = Vector::Constant(5, 1.0);
  CHECK(weight_logvar(f, 1e-12) == doctest::Approx(0.0));
  f.values = Vector::Constant(5, std::exp(-1.0));
  CHECK(weight_logvar(f, 1e-12) == doctest::Approx(5.0).epsilon(1e-12));
  // Permutation invariance.
  Vector v(3);
  v << 0.5, 2.0, 3.0;
  WeightFisherDiag a, b;
  a.values = v;
  b.values = Vector(3);
  b.values << 3.0, 0.5, 2.0;
  CHECK(weight_logvar(a, 1e-12) == doctest::Approx(weight_logvar(b, 1e-12)).epsilon(1e-14));
}

TEST_CASE("weight_info_proxy") {
  Model a = Model::init(vec_mlp(4, 3, 2, 89));
  SUBCASE("identical models have zero displacement") {
    WeightInfoProxy p = weight_info_proxy(a, a);
    CHECK(p.total == 0.0);
  }
  SUBCASE("per-layer squared norms sum to the total") {
    Model b = Model::init(vec_mlp(4, 3, 2, 97));
    WeightInfoProxy p = weight_info_proxy(a, b);
    double acc = 0.0;
    for (const auto& [name, v] : p.per_layer) acc += v * v;
    CHECK(std::sqrt(acc) == doctest::Approx(p.total).epsilon(1e-9));
    CHECK(p.per_layer.size() == a.params().layout.size());
  }
  SUBCASE("architecture mismatch is rejected") {
    Model b = Model::init(vec_mlp(4, 5, 2, 89));
    try {
      weight_info_proxy(a, b);
      FAIL("expected layout mismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::layout_mismatch);
    }
  }
}

TEST_CASE("fisher_dpi_check") {
  SUBCASE("zero head gives tr F_yx = 0") {
    Model m = Model::init(vec_mlp(5, 4, 3, 101));
    m.set_block("head.A", Tensor::zeros({4, 3}));
    DpiReport r = fisher_dpi_check(m, random_sample(5, 1));
    CHECK(r.tr_y == 0.0);
    CHECK(r.tr_z >= 0.0);
    CHECK(r.holds);
  }
  SUBCASE("200 random triples hold at sigma_z = 1") {
    Rng rng(103);
    for (int t = 0; t < 200; ++t) {
      Model m = Model::init(vec_mlp(6, 8, 4, 1000 + static_cast<uint64_t>(t)));
      Tensor A = m.block("head.A");
      A.data *= 0.5;
      m.set_block("head.A", A);
      Tensor x = Tensor::zeros({6});
      for (Index i = 0; i < 6; ++i) x.data[i] = rng.next_double();
      CHECK(fisher_dpi_check(m, x).holds);
    }
  }
  SUBCASE("inequality is maintained while scaling the head") {
    Model m = Model::init(vec_mlp(6, 8, 4, 107));
    Tensor base = m.block("head.A");
    base.data *= 0.1;  // spectral norm well under the saturation threshold
    Tensor x = random_sample(6, 4);
    double prev = -1.0;
    for (int i = 0; i <= 20; ++i) {
      double tscale = 0.5 * i;
      Tensor A = base;
      A.data *= tscale;
      m.set_block("head.A", A);
      DpiReport r = fisher_dpi_check(m, x);
      CHECK(r.holds);
      CHECK(std::isfinite(r.tr_y));
      if (i == 0) CHECK(r.tr_y == 0.0);
      if (i == 1) CHECK(r.tr_y > 0.0);
      (void)prev;
      prev = r.tr_y;
    }
  }
}
