#pragma once

#include <string>
#include <vector>

#include "robustlens/tensor.hpp"

namespace robustlens {

/// Image classification dataset; pixel values always land in [0,1].
struct LabeledDataset {
  Tensor images;  // [N, C, H, W]
  std::vector<int> labels;
  std::string name;
  int K = 0;

  Index size() const { return images.rank() == 4 ? images.dim(0) : 0; }
  Index channels() const { return images.dim(1); }
  Index height() const { return images.dim(2); }
  Index width() const { return images.dim(3); }

  /// Single image as a [1,C,H,W] tensor.
  Tensor image(Index i) const;
  /// Batch gather by index list.
  Tensor gather(const std::vector<Index>& idx) const;
  std::vector<int> gather_labels(const std::vector<Index>& idx) const;
  LabeledDataset subset(const std::vector<Index>& idx) const;
  /// Deterministic split into (train, test) with the given test fraction.
  std::pair<LabeledDataset, LabeledDataset> split(double test_fraction,
                                                  uint64_t seed) const;

  void validate() const;
};

enum class VariantKind { rotate90, pixel_permute, invert, channel_drop, label_remap };

VariantKind variant_from_name(const std::string& s);
std::string variant_name(VariantKind k);

struct VariantSpec {
  VariantKind kind;
  uint64_t seed = 0;
};

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);
LabeledDataset load_cifar_bin(const std::string& path);

/// Procedural 28x28 grayscale shapes. "shapes4" labels the four combinations
/// of {square, circle} x {filled, hollow}; "shapes2" labels filled vs hollow
/// with the shape type randomized, so the task differs from shapes4.
LabeledDataset gen_synthetic(const std::string& task, Index n, uint64_t seed);

LabeledDataset apply_variant(const LabeledDataset& ds, const VariantSpec& spec);

/// Deterministic shuffled batches keyed by (seed, epoch); the union of the
/// returned batches is exactly {0..N-1}, last short batch kept.
std::vector<std::vector<Index>> batch_iter(Index n, Index batch_size,
                                           uint64_t seed, int epoch);

}  // namespace robustlens
