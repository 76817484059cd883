#include <cmath>

#include "doctest.h"
#include "robustlens/inversion.hpp"
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

// f(x) = x.W with nonnegative weights, so relu never clips on [0,1] inputs.
Model linear_extractor(const RowMatrix& W, uint64_t seed = 0) {
  Model m = Model::init(vec_mlp(static_cast<int>(W.rows()),
                                static_cast<int>(W.cols()), 2, seed));
  Tensor w = Tensor::zeros({W.rows(), W.cols()});
  w.mat() = W;
  m.set_block("fc0.w", w);
  m.set_block("fc0.b", Tensor::zeros({W.cols()}));
  return m;
}

NoiseModel uniform_noise(const Model& m, double sigma2) {
  NoiseModel nm;
  nm.sigma2 = Vector::Constant(m.flat().size(), sigma2);
  return nm;
}

}  // namespace

TEST_CASE("deterministic inversion") {
  SUBCASE("identity extractor recovers the target") {
    Model m = linear_extractor(RowMatrix::Identity(3, 3));
    Tensor z = Tensor::row({0.3, 0.6, 0.9});
    InversionConfig cfg;
    cfg.iters = 500;
    cfg.lr = 0.1;
    InversionResult r = invert(m, z, cfg);
    CHECK(r.final_loss < 1e-4);
    CHECK((r.x_hat.data - z.data).norm() < 1e-3);
  }
  SUBCASE("full-row-rank linear map reaches a least-squares image") {
    Rng rng(3);
    RowMatrix W(5, 3);  // J = W' is 3x5, full row rank w.h.p.
    for (Index i = 0; i < W.size(); ++i) W.data()[i] = rng.next_double();
    Model m = linear_extractor(W);
    Tensor x_true = Tensor::row({0.2, 0.8, 0.4, 0.6, 0.5});
    Tensor z = m.forward_features(m.prepare_input(Tensor({1, 5}, x_true.data)));
    InversionConfig cfg;
    cfg.iters = 2000;
    InversionResult r = invert(m, Tensor({3}, z.data), cfg);
    Vector residual = z.data - W.transpose() * r.x_hat.data;
    CHECK(residual.norm() < 1e-3);
  }
  SUBCASE("sigma 0 starts from the constant 0.5 image") {
    Model m = linear_extractor(RowMatrix::Identity(3, 3));
    Tensor z = Tensor::row({0.0, 0.0, 0.0});
    InversionConfig cfg;
    cfg.iters = 1;
    cfg.init_sigma = 0.0;
    InversionResult r = invert(m, z, cfg);
    // Loss at the all-0.5 start against a zero target is sqrt(3)/2.
    CHECK(r.loss_trace[0] == doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-12));
  }
  SUBCASE("outputs stay in [0,1] and the best loss beats the start") {
    Model m = Model::init(vec_mlp(6, 4, 2, 7));
    Tensor z = Tensor::row({1.5, -0.5, 2.0, 0.1});
    InversionConfig cfg;
    cfg.iters = 100;
    cfg.seed = 9;
    InversionResult r = invert(m, z, cfg);
    CHECK(r.x_hat.data.minCoeff() >= 0.0);
    CHECK(r.x_hat.data.maxCoeff() <= 1.0);
    CHECK(r.final_loss <= r.loss_trace.front());
    CHECK(static_cast<int>(r.loss_trace.size()) == r.iterations);
  }
  SUBCASE("traces are deterministic per seed") {
    Rng rng(11);
    RowMatrix W(5, 3);
    for (Index i = 0; i < W.size(); ++i) W.data()[i] = rng.next_double();
    Model m = linear_extractor(W);  // input-sensitive, so traces depend on init
    Tensor z = Tensor::row({0.4, 0.2, 0.9});
    InversionConfig cfg;
    cfg.iters = 50;
    cfg.seed = 21;
    InversionResult a = invert(m, z, cfg);
    InversionResult b = invert(m, z, cfg);
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.x_hat.data == b.x_hat.data);
    cfg.seed = 22;
    InversionResult c = invert(m, z, cfg);
    CHECK(a.loss_trace != c.loss_trace);
  }
  SUBCASE("wrong target dimension is rejected") {
    Model m = Model::init(vec_mlp(4, 3, 2));
    InversionConfig cfg;
    CHECK_THROWS_AS(invert(m, Tensor::row({1.0, 2.0}), cfg), Error);
  }
}

TEST_CASE("variational inversion") {
  Model m = Model::init(vec_mlp(5, 3, 2, 13));
  Tensor z = Tensor::row({0.5, 0.1, 0.7});

  SUBCASE("zero noise matches deterministic mode bit-exactly") {
    InversionConfig det;
    det.iters = 80;
    det.seed = 5;
    InversionResult a = invert(m, z, det);

    InversionConfig var = det;
    var.mode = InversionMode::noise_once;
    var.noise = uniform_noise(m, 0.0);
    InversionResult b = variational_invert(m, z, var);
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.x_hat.data == b.x_hat.data);
    CHECK(b.clean_loss == b.final_loss);
  }
  SUBCASE("same seed, same noise draw, same result") {
    InversionConfig cfg;
    cfg.iters = 60;
    cfg.seed = 17;
    cfg.mode = InversionMode::noise_once;
    cfg.noise = uniform_noise(m, 0.01);
    InversionResult a = variational_invert(m, z, cfg);
    InversionResult b = variational_invert(m, z, cfg);
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.x_hat.data == b.x_hat.data);
    // Both the perturbed-extractor and clean-extractor losses are reported.
    CHECK(a.final_loss >= 0.0);
    CHECK(a.clean_loss >= 0.0);
  }
  SUBCASE("missing noise model is a config error") {
    InversionConfig cfg;
    cfg.mode = InversionMode::noise_once;
    CHECK_THROWS_AS(variational_invert(m, z, cfg), Error);
  }
}

TEST_CASE("effective image") {
  Model m = Model::init(vec_mlp(5, 3, 2, 19));
  Tensor x_source = Tensor::row({0.5, 0.5, 0.5, 0.5, 0.5});

  SUBCASE("zero noise reduces to deterministic inversion of f(x_source)") {
    InversionConfig cfg;
    cfg.iters = 80;
    cfg.seed = 23;
    cfg.mode = InversionMode::noise_each_step;
    cfg.noise = uniform_noise(m, 0.0);
    InversionResult eff = effective_image(m, x_source, cfg);

    Tensor z = m.forward_features(m.prepare_input(Tensor({1, 5}, x_source.data)));
    InversionConfig det;
    det.iters = 80;
    det.seed = 23;
    InversionResult base = invert(m, Tensor({3}, z.data), det);
    CHECK(eff.loss_trace == base.loss_trace);
    CHECK(eff.x_hat.data == base.x_hat.data);
  }
  SUBCASE("starting at x_source gives zero initial loss in the noiseless limit") {
    InversionConfig cfg;
    cfg.iters = 3;
    cfg.init_sigma = 0.0;  // x'(0) = 0.5 everywhere = x_source
    cfg.mode = InversionMode::noise_each_step;
    cfg.noise = uniform_noise(m, 0.0);
    InversionResult r = effective_image(m, x_source, cfg);
    CHECK(r.loss_trace[0] == 0.0);
    CHECK(r.clean_loss == 0.0);
  }
  SUBCASE("noisy runs keep the invariants: range, best-iterate, determinism") {
    Tensor x_img = Tensor::row({0.9, 0.1, 0.6, 0.3, 0.8});
    InversionConfig cfg;
    cfg.iters = 100;
    cfg.seed = 29;
    cfg.mode = InversionMode::noise_each_step;
    cfg.noise = uniform_noise(m, 0.05);
    InversionResult a = effective_image(m, x_img, cfg);
    CHECK(a.x_hat.data.minCoeff() >= 0.0);
    CHECK(a.x_hat.data.maxCoeff() <= 1.0);
    // The clean loss is a minimum over iterates, so it beats the start.
    Tensor z = m.forward_features(m.prepare_input(Tensor({1, 5}, x_img.data)));
    InversionResult b = effective_image(m, x_img, cfg);
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.clean_loss == b.clean_loss);
    CHECK(a.clean_loss <= (m.forward_features(a.x_hat).data - z.data).norm() + 1e-12);
  }
}

TEST_CASE("compare_modes") {
  Model m = Model::init(vec_mlp(4, 3, 2, 31));
  Tensor img = Tensor::row({0.2, 0.7, 0.5, 0.9});

  SUBCASE("single image, single deterministic config equals its trace") {
    InversionConfig cfg;
    cfg.iters = 40;
    cfg.seed = 3;
    auto table = compare_modes(m, {img}, {cfg});
    REQUIRE(table.size() == 1);
    CHECK(table[0].mode == InversionMode::deterministic);
    Tensor z = m.forward_features(m.prepare_input(Tensor({1, 4}, img.data)));
    InversionResult r = invert(m, Tensor({3}, z.data), cfg);
    CHECK(table[0].median_loss == r.loss_trace);
    CHECK(table[0].median_loss.size() == 40);
  }
  SUBCASE("a deterministic baseline is always present") {
    InversionConfig cfg;
    cfg.iters = 10;
    cfg.mode = InversionMode::noise_once;
    cfg.noise = uniform_noise(m, 0.01);
    auto table = compare_modes(m, {img}, {cfg});
    REQUIRE(table.size() == 2);
    CHECK(table[0].mode == InversionMode::deterministic);
    CHECK(table[1].mode == InversionMode::noise_once);
  }
  SUBCASE("mismatched budgets are rejected") {
    InversionConfig a, b;
    a.iters = 10;
    b.iters = 20;
    CHECK_THROWS_AS(compare_modes(m, {img}, {a, b}), Error);
  }
}
