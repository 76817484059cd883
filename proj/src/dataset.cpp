#include "robustlens/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include "robustlens/rng.hpp"

namespace robustlens {

Tensor LabeledDataset::image(Index i) const {
  Index stride = channels() * height() * width();
  Tensor out({1, channels(), height(), width()}, images.data.segment(i * stride, stride));
  return out;
}

Tensor LabeledDataset::gather(const std::vector<Index>& idx) const {
  Index stride = channels() * height() * width();
  Tensor out = Tensor::zeros({static_cast<Index>(idx.size()), channels(), height(), width()});
  for (size_t r = 0; r < idx.size(); ++r)
    out.data.segment(static_cast<Index>(r) * stride, stride) =
        images.data.segment(idx[r] * stride, stride);
  return out;
}

std::vector<int> LabeledDataset::gather_labels(const std::vector<Index>& idx) const {
  std::vector<int> out(idx.size());
  for (size_t r = 0; r < idx.size(); ++r) out[r] = labels[static_cast<size_t>(idx[r])];
  return out;
}

LabeledDataset LabeledDataset::subset(const std::vector<Index>& idx) const {
  LabeledDataset out;
  out.images = gather(idx);
  out.labels = gather_labels(idx);
  out.name = name;
  out.K = K;
  return out;
}

std::pair<LabeledDataset, LabeledDataset> LabeledDataset::split(double test_fraction,
                                                                uint64_t seed) const {
  std::vector<Index> order(static_cast<size_t>(size()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(child_seed(seed, "dataset-split"));
  for (Index i = size() - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)],
              order[rng.next_below(static_cast<uint64_t>(i) + 1)]);
  Index n_test = static_cast<Index>(std::llround(test_fraction * size()));
  std::vector<Index> test_idx(order.begin(), order.begin() + n_test);
  std::vector<Index> train_idx(order.begin() + n_test, order.end());
  return {subset(train_idx), subset(test_idx)};
}

void LabeledDataset::validate() const {
  if (images.rank() != 4) fail(ErrorCode::shape_mismatch, "dataset images must be rank 4");
  if (size() < 1) fail(ErrorCode::bad_config, "dataset is empty");
  if (static_cast<Index>(labels.size()) != size())
    fail(ErrorCode::shape_mismatch, "label count does not match image count");
  for (int y : labels)
    if (y < 0 || y >= K) fail(ErrorCode::bad_config, "label out of range");
  if (images.data.minCoeff() < 0.0 || images.data.maxCoeff() > 1.0)
    fail(ErrorCode::bad_config, "pixel values outside [0,1]");
}

// ---------------------------------------------------------------------------
// IDX (big-endian) and CIFAR-10 binary loaders.
// ---------------------------------------------------------------------------

namespace {

uint32_t read_be32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) fail(ErrorCode::truncated, "truncated " + what);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) fail(ErrorCode::io, "cannot open " + images_path);
  if (read_be32(img, images_path) != 0x00000803u)
    fail(ErrorCode::bad_magic, "bad magic in IDX image file " + images_path);
  uint32_t n = read_be32(img, images_path);
  uint32_t h = read_be32(img, images_path);
  uint32_t w = read_be32(img, images_path);

  std::ifstream lbl(labels_path, std::ios::binary);
  if (!lbl) fail(ErrorCode::io, "cannot open " + labels_path);
  if (read_be32(lbl, labels_path) != 0x00000801u)
    fail(ErrorCode::bad_magic, "bad magic in IDX label file " + labels_path);
  uint32_t nl = read_be32(lbl, labels_path);
  if (nl != n)
    fail(ErrorCode::shape_mismatch, "IDX image/label count mismatch: " +
                                        std::to_string(n) + " vs " + std::to_string(nl));

  LabeledDataset ds;
  ds.name = "idx";
  ds.images = Tensor::zeros({static_cast<Index>(n), 1, static_cast<Index>(h),
                             static_cast<Index>(w)});
  std::vector<unsigned char> buf(static_cast<size_t>(n) * h * w);
  img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!img) fail(ErrorCode::truncated, "truncated pixel data in " + images_path);
  for (size_t i = 0; i < buf.size(); ++i)
    ds.images.data[static_cast<Index>(i)] = buf[i] / 255.0;

  std::vector<unsigned char> lbuf(n);
  lbl.read(reinterpret_cast<char*>(lbuf.data()), n);
  if (!lbl) fail(ErrorCode::truncated, "truncated label data in " + labels_path);
  ds.labels.assign(lbuf.begin(), lbuf.end());
  int maxy = 0;
  for (int y : ds.labels) maxy = std::max(maxy, y);
  ds.K = std::max(maxy + 1, 2);
  ds.validate();
  return ds;
}

LabeledDataset load_cifar_bin(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::io, "cannot open " + path);
  is.seekg(0, std::ios::end);
  std::streamoff bytes = is.tellg();
  is.seekg(0);
  constexpr std::streamoff kRecord = 3073;  // 1 label byte + 3x32x32 pixels
  if (bytes == 0) fail(ErrorCode::bad_config, "empty CIFAR file " + path);
  if (bytes % kRecord != 0)
    fail(ErrorCode::shape_mismatch, "CIFAR file size is not a multiple of 3073");
  Index n = static_cast<Index>(bytes / kRecord);

  LabeledDataset ds;
  ds.name = "cifar";
  ds.K = 10;
  ds.images = Tensor::zeros({n, 3, 32, 32});
  ds.labels.resize(static_cast<size_t>(n));
  std::vector<unsigned char> rec(kRecord);
  for (Index i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(rec.data()), kRecord);
    if (!is) fail(ErrorCode::truncated, "truncated CIFAR record");
    if (rec[0] >= 10) fail(ErrorCode::bad_config, "CIFAR label >= 10");
    ds.labels[static_cast<size_t>(i)] = rec[0];
    for (Index p = 0; p < 3072; ++p)
      ds.images.data[i * 3072 + p] = rec[static_cast<size_t>(1 + p)] / 255.0;
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic shapes.
// ---------------------------------------------------------------------------

LabeledDataset gen_synthetic(const std::string& task, Index n, uint64_t seed) {
  int K;
  if (task == "shapes2")
    K = 2;
  else if (task == "shapes4")
    K = 4;
  else
    fail(ErrorCode::bad_config, "unknown synthetic task '" + task + "'");
  if (n < K) fail(ErrorCode::bad_config, "need at least K samples");

  constexpr Index H = 28, W = 28;
  LabeledDataset ds;
  ds.name = task;
  ds.K = K;
  ds.images = Tensor::zeros({n, 1, H, W});
  ds.labels.resize(static_cast<size_t>(n));

  Rng rng(child_seed(seed, "synthetic-" + task));
  for (Index i = 0; i < n; ++i) {
    int label = static_cast<int>(i % K);  // round-robin keeps classes balanced
    ds.labels[static_cast<size_t>(i)] = label;

    bool is_circle, is_hollow;
    if (task == "shapes4") {
      is_circle = label >= 2;
      is_hollow = (label % 2) == 1;
    } else {
      is_hollow = label == 1;
      is_circle = rng.next_below(2) == 1;
    }
    double cx = rng.uniform(9.0, 19.0);
    double cy = rng.uniform(9.0, 19.0);
    double r = rng.uniform(4.0, 8.0);

    auto px = ds.images.data.segment(i * H * W, H * W);
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        double dx = x - cx, dy = y - cy;
        double d = is_circle ? std::sqrt(dx * dx + dy * dy)
                             : std::max(std::abs(dx), std::abs(dy));
        bool on = is_hollow ? (d <= r && d > r - 1.5) : (d <= r);
        double v = (on ? 0.9 : 0.0) + 0.05 * rng.normal();
        px[y * W + x] = std::clamp(v, 0.0, 1.0);
      }
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Variants.
// ---------------------------------------------------------------------------

VariantKind variant_from_name(const std::string& s) {
  if (s == "rotate90" || s == "rot90") return VariantKind::rotate90;
  if (s == "permute" || s == "pixel-permute") return VariantKind::pixel_permute;
  if (s == "invert") return VariantKind::invert;
  if (s == "chdrop" || s == "channel-drop") return VariantKind::channel_drop;
  if (s == "remap" || s == "label-remap") return VariantKind::label_remap;
  fail(ErrorCode::bad_config, "unknown variant kind '" + s + "'");
}

std::string variant_name(VariantKind k) {
  switch (k) {
    case VariantKind::rotate90: return "rot90";
    case VariantKind::pixel_permute: return "permute";
    case VariantKind::invert: return "invert";
    case VariantKind::channel_drop: return "chdrop";
    case VariantKind::label_remap: return "remap";
  }
  return "?";
}

LabeledDataset apply_variant(const LabeledDataset& ds, const VariantSpec& spec) {
  LabeledDataset out = ds;
  out.name = ds.name + "+" + variant_name(spec.kind);
  const Index C = ds.channels(), H = ds.height(), W = ds.width(), N = ds.size();
  switch (spec.kind) {
    case VariantKind::invert:
      out.images.data = Vector::Ones(ds.images.size()) - ds.images.data;
      break;
    case VariantKind::rotate90: {
      // 90 degrees clockwise: out[y][x] = in[H-1-x][y]; requires square frames
      // so four applications are the identity on the same shape.
      if (H != W) fail(ErrorCode::shape_mismatch, "rotate90 requires square images");
      for (Index i = 0; i < N; ++i)
        for (Index c = 0; c < C; ++c) {
          Index base = (i * C + c) * H * W;
          for (Index y = 0; y < H; ++y)
            for (Index x = 0; x < W; ++x)
              out.images.data[base + y * W + x] =
                  ds.images.data[base + (H - 1 - x) * W + y];
        }
      break;
    }
    case VariantKind::pixel_permute: {
      Index p = C * H * W;
      std::vector<Index> perm(static_cast<size_t>(p));
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(child_seed(spec.seed, "pixel-permute"));
      for (Index i = p - 1; i > 0; --i)
        std::swap(perm[static_cast<size_t>(i)],
                  perm[rng.next_below(static_cast<uint64_t>(i) + 1)]);
      for (Index i = 0; i < N; ++i)
        for (Index j = 0; j < p; ++j)
          out.images.data[i * p + j] = ds.images.data[i * p + perm[static_cast<size_t>(j)]];
      break;
    }
    case VariantKind::channel_drop: {
      if (C < 2)
        fail(ErrorCode::shape_mismatch, "channel-drop needs a multi-channel dataset");
      Rng rng(child_seed(spec.seed, "channel-drop"));
      Index drop = static_cast<Index>(rng.next_below(static_cast<uint64_t>(C)));
      for (Index i = 0; i < N; ++i)
        out.images.data.segment((i * C + drop) * H * W, H * W).setZero();
      break;
    }
    case VariantKind::label_remap: {
      std::vector<int> perm(static_cast<size_t>(ds.K));
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(child_seed(spec.seed, "label-remap"));
      for (int i = ds.K - 1; i > 0; --i)
        std::swap(perm[static_cast<size_t>(i)],
                  perm[rng.next_below(static_cast<uint64_t>(i) + 1)]);
      for (auto& y : out.labels) y = perm[static_cast<size_t>(y)];
      break;
    }
  }
  return out;
}

std::vector<std::vector<Index>> batch_iter(Index n, Index batch_size, uint64_t seed,
                                           int epoch) {
  if (batch_size < 1) fail(ErrorCode::bad_config, "batch_size must be >= 1");
  std::vector<Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(child_seed(seed, "batch-epoch-" + std::to_string(epoch)));
  for (Index i = n - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)],
              order[rng.next_below(static_cast<uint64_t>(i) + 1)]);
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start < n; start += batch_size) {
    Index end = std::min(start + batch_size, n);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

}  // namespace robustlens
