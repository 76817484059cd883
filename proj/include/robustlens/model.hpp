#pragma once

#include <memory>
#include <string>
#include <vector>

#include "robustlens/graph.hpp"
#include "robustlens/tensor.hpp"

namespace robustlens {

enum class Arch { mlp, smallconv };

std::string arch_name(Arch a);
Arch arch_from_name(const std::string& s);

struct ModelConfig {
  Arch arch = Arch::mlp;
  /// mlp: hidden layer widths; the last width is the representation dim k.
  std::vector<int> widths = {256, 128};
  /// smallconv: channel counts for the two conv layers (kernel 5, strides 1,2).
  std::vector<int> channels = {16, 32};
  int k = 128;
  int K = 10;
  bool norm = false;  // per-feature scale+shift after each extractor layer
  uint64_t seed = 0;
  int in_c = 1, in_h = 28, in_w = 28;
  double train_eps = 0.0;  // training attack radius, recorded in checkpoints

  Index input_dim() const { return static_cast<Index>(in_c) * in_h * in_w; }
  void validate() const;
};

struct LayoutBlock {
  std::string name;
  Index offset;
  Shape shape;
  Index size() const { return shape_numel(shape); }
};

/// Flat parameter vector plus the block layout that partitions it.
struct Params {
  Vector flat;
  std::vector<LayoutBlock> layout;

  const LayoutBlock& find(const std::string& name) const;
  Tensor block(const std::string& name) const;
  void set_block(const std::string& name, const Tensor& t);
};

/// Feature extractor + linear head over one shared static graph.
///
/// Graph inputs: "x", "_x_adv", every parameter block by name, and probe
/// inputs "_zsel", "_lsel", "_onehot", "_lsm_ref", "_ztarget". Outputs:
/// "z", "logits", "lsm", "zsel", "lsel", "loglik", "nll_sum", "inv_loss",
/// "z_adv", "lsm_adv", "nll_adv_sum", "kl_sum", "kl_vs_ref_sum".
/// Pruned evaluation means callers bind only what their output needs.
class Model {
 public:
  static Model init(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  const Params& params() const { return params_; }
  const ComputeGraph& graph() const { return *graph_; }

  Tensor forward_features(const Tensor& x) const;
  Tensor forward_logits(const Tensor& x) const;
  Tensor forward_log_softmax(const Tensor& x) const;
  /// Argmax with lowest-index tie-break.
  std::vector<int> predict(const Tensor& x) const;

  double param_l2_norm() const;

  Bindings param_bindings() const;
  /// Reshape a batch to the graph's expected "x" layout.
  Tensor prepare_input(const Tensor& x) const;

  Tensor block(const std::string& name) const { return params_.block(name); }
  void set_block(const std::string& name, const Tensor& t) { params_.set_block(name, t); }
  void set_flat(const Vector& flat);
  const Vector& flat() const { return params_.flat; }

  /// Copy with different parameter values (same config and graph).
  Model with_flat(Vector flat) const;

  /// Name of the normalization block pair acting on z, or "" if norm is off.
  std::string z_norm_name() const { return z_norm_name_; }

  /// Re-initialize the head for a (possibly different) class count.
  void reinit_head(int new_K, uint64_t seed);

 private:
  Model() = default;
  static std::shared_ptr<const ComputeGraph> build_graph(const ModelConfig& c,
                                                         std::string* z_norm_name);
  static std::vector<LayoutBlock> build_layout(const ModelConfig& c);

  ModelConfig config_;
  Params params_;
  std::shared_ptr<const ComputeGraph> graph_;
  std::string z_norm_name_;
};

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace robustlens
