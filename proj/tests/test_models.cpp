#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "robustlens/model.hpp"
#include "robustlens/rng.hpp"

using namespace robustlens;

namespace {

ModelConfig tiny_mlp(int in = 4, int k = 3, int K = 2, bool norm = false) {
  ModelConfig c;
  c.arch = Arch::mlp;
  c.widths = {k};
  c.k = k;
  c.K = K;
  c.norm = norm;
  c.in_c = 1;
  c.in_h = 1;
  c.in_w = in;
  return c;
}

Tensor random_batch(Index n, Index d, uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros({n, d});
  for (Index i = 0; i < t.size(); ++i) t.data[i] = rng.next_double();
  return t;
}

}  // namespace

TEST_CASE("same seed gives bit-identical params") {
  ModelConfig c = tiny_mlp();
  c.seed = 99;
  Model a = Model::init(c);
  Model b = Model::init(c);
  CHECK(a.flat() == b.flat());
}

TEST_CASE("zero-width layer is rejected") {
  ModelConfig c = tiny_mlp();
  c.widths = {0};
  c.k = 0;
  CHECK_THROWS_AS(Model::init(c), Error);
}

TEST_CASE("mlp 784-256-128 layout has 4 weight blocks plus head") {
  ModelConfig c;
  c.arch = Arch::mlp;
  c.widths = {256, 128};
  c.k = 128;
  c.K = 10;
  Model m = Model::init(c);
  const auto& layout = m.params().layout;
  REQUIRE(layout.size() == 6);
  CHECK(layout[0].name == "fc0.w");
  CHECK(layout[4].name == "head.A");
  CHECK(layout[5].name == "head.b");
  // Offsets partition the flat vector exactly.
  Index off = 0;
  for (const auto& b : layout) {
    CHECK(b.offset == off);
    off += b.size();
  }
  CHECK(off == m.flat().size());
}

TEST_CASE("identity extractor passes inputs through") {
  ModelConfig c = tiny_mlp(3, 3, 2);
  Model m = Model::init(c);
  Tensor eye = Tensor::zeros({3, 3});
  eye.mat().setIdentity();
  m.set_block("fc0.w", eye);
  m.set_block("fc0.b", Tensor::zeros({3}));
  Tensor x = random_batch(2, 3, 5);  // nonnegative, so relu is identity
  Tensor z = m.forward_features(x);
  CHECK((z.data - x.data).norm() == 0.0);
}

TEST_CASE("all-zero weights give zero representation plus biases") {
  ModelConfig c = tiny_mlp(4, 3, 2);
  Model m = Model::init(c);
  m.set_block("fc0.w", Tensor::zeros({4, 3}));
  m.set_block("fc0.b", Tensor::full({3}, 0.5));
  Tensor z = m.forward_features(random_batch(2, 4, 6));
  for (Index i = 0; i < z.size(); ++i) CHECK(z.data[i] == 0.5);
}

TEST_CASE("forward is bit-stable across calls") {
  ModelConfig c = tiny_mlp(6, 4, 3);
  c.seed = 3;
  Model m = Model::init(c);
  Tensor x = random_batch(5, 6, 7);
  CHECK(m.forward_features(x).data == m.forward_features(x).data);
  CHECK(m.forward_logits(x).data == m.forward_logits(x).data);
}

TEST_CASE("head bias dominates when A is zero") {
  ModelConfig c = tiny_mlp(4, 3, 5);
  Model m = Model::init(c);
  m.set_block("head.A", Tensor::zeros({3, 5}));
  Tensor b = Tensor::zeros({5});
  b.data[3] = 10.0;
  m.set_block("head.b", b);
  auto preds = m.predict(random_batch(4, 4, 8));
  for (int p : preds) CHECK(p == 3);
}

TEST_CASE("logits match head applied to features") {
  ModelConfig c = tiny_mlp(4, 2, 2);
  c.seed = 11;
  Model m = Model::init(c);
  Tensor x = random_batch(3, 4, 9);
  Tensor z = m.forward_features(x);
  Tensor logits = m.forward_logits(x);
  Tensor A = m.block("head.A");
  Tensor bb = m.block("head.b");
  for (Index r = 0; r < 3; ++r)
    for (Index j = 0; j < 2; ++j) {
      double manual = bb.data[j];
      for (Index i = 0; i < 2; ++i) manual += z.mat()(r, i) * A.mat()(i, j);
      CHECK(logits.mat()(r, j) == doctest::Approx(manual).epsilon(1e-15));
    }
}

TEST_CASE("argmax tie-break picks the lowest index and is batch-order stable") {
  ModelConfig c = tiny_mlp(4, 3, 4);
  Model m = Model::init(c);
  m.set_block("head.A", Tensor::zeros({3, 4}));
  m.set_block("head.b", Tensor::zeros({4}));  // all logits tie
  Tensor x = random_batch(6, 4, 10);
  auto preds = m.predict(x);
  for (int p : preds) CHECK(p == 0);

  // Permute the batch; per-sample predictions must follow the permutation.
  ModelConfig c2 = tiny_mlp(4, 3, 4);
  c2.seed = 21;
  Model m2 = Model::init(c2);
  auto base = m2.predict(x);
  std::vector<Index> perm = {5, 3, 0, 1, 4, 2};
  Tensor xp = Tensor::zeros({6, 4});
  for (Index r = 0; r < 6; ++r) xp.data.segment(r * 4, 4) = x.data.segment(perm[r] * 4, 4);
  auto permuted = m2.predict(xp);
  for (Index r = 0; r < 6; ++r) CHECK(permuted[r] == base[perm[r]]);
}

TEST_CASE("param_l2_norm") {
  ModelConfig c = tiny_mlp();
  Model m = Model::init(c);
  Vector zeros = Vector::Zero(m.flat().size());
  CHECK(m.with_flat(zeros).param_l2_norm() == 0.0);
  Vector one = zeros;
  one[2] = 3.0;
  CHECK(m.with_flat(one).param_l2_norm() == 3.0);
  // Brute-force sum over layout blocks.
  double acc = 0.0;
  for (const auto& b : m.params().layout) acc += m.block(b.name).data.squaredNorm();
  CHECK(m.param_l2_norm() == doctest::Approx(std::sqrt(acc)).epsilon(1e-12));
}

TEST_CASE("block round-trip is the identity") {
  ModelConfig c = tiny_mlp(5, 4, 3, true);
  c.seed = 17;
  Model m = Model::init(c);
  Vector before = m.flat();
  for (const auto& b : m.params().layout) m.set_block(b.name, m.block(b.name));
  CHECK(m.flat() == before);
}

TEST_CASE("smallconv forward shape") {
  ModelConfig c;
  c.arch = Arch::smallconv;
  c.channels = {4, 6};
  c.k = 8;
  c.K = 3;
  c.in_c = 1;
  c.in_h = 28;
  c.in_w = 28;
  Model m = Model::init(c);
  Tensor x = Tensor::zeros({2, 1, 28, 28});
  Tensor z = m.forward_features(x);
  CHECK(z.shape == Shape{2, 8});
  CHECK(m.forward_logits(x).shape == Shape{2, 3});
}

TEST_CASE("checkpoint round-trip") {
  ModelConfig c = tiny_mlp(5, 4, 3, true);
  c.seed = 23;
  c.train_eps = 0.5;
  Model m = Model::init(c);
  std::string path = "ckpt_test.rlns";
  save_checkpoint(m, path);
  Model loaded = load_checkpoint(path);
  CHECK(loaded.config().K == c.K);
  CHECK(loaded.config().norm == c.norm);
  CHECK(loaded.config().seed == c.seed);
  CHECK(loaded.config().train_eps == c.train_eps);

  // f32 payload: save-load-save must be idempotent and the second load
  // bit-identical to the first.
  std::string path2 = "ckpt_test2.rlns";
  save_checkpoint(loaded, path2);
  Model loaded2 = load_checkpoint(path2);
  CHECK(loaded.flat() == loaded2.flat());
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("checkpoint error paths") {
  ModelConfig c = tiny_mlp();
  Model m = Model::init(c);
  std::string path = "ckpt_err.rlns";
  save_checkpoint(m, path);

  SUBCASE("corrupted magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
    f.close();
    try {
      load_checkpoint(path);
      FAIL("expected bad magic");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::bad_magic);
    }
  }
  SUBCASE("trailing bytes") {
    std::ofstream f(path, std::ios::app | std::ios::binary);
    f.put('\0');
    f.close();
    try {
      load_checkpoint(path);
      FAIL("expected trailing data");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::trailing_data);
    }
  }
  SUBCASE("truncated payload") {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), {});
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(all.data(), static_cast<std::streamsize>(all.size() - 5));
    out.close();
    try {
      load_checkpoint(path);
      FAIL("expected truncation error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::truncated);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("reinit_head keeps the extractor and changes K") {
  ModelConfig c = tiny_mlp(5, 4, 3);
  c.seed = 31;
  Model m = Model::init(c);
  Tensor w_before = m.block("fc0.w");
  m.reinit_head(7, 99);
  CHECK(m.config().K == 7);
  CHECK(m.block("head.A").shape == Shape{4, 7});
  CHECK(m.block("fc0.w").data == w_before.data);
}
