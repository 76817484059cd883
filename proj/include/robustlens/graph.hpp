#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "robustlens/tensor.hpp"

namespace robustlens {

using Bindings = std::map<std::string, Tensor>;

enum class Op {
  input,
  constant,
  add,
  sub,
  scale,
  mul,
  row_mul,
  bias_add,
  matmul,
  conv2d,
  relu,
  log_softmax,
  exp,
  sum,
  l2_norm,
  reshape,
};

const char* op_name(Op op);

struct Node {
  Op op;
  std::vector<int> inputs;
  std::string name;     // input nodes
  Tensor value;         // constant nodes
  Scalar c = 0.0;       // scale factor
  int stride = 1;       // conv2d
  bool same_pad = false;
  Shape target;         // reshape
};

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  bool pass = false;
  int coords_checked = 0;
  // Coordinates skipped because a relu input changed sign under the probe.
  std::vector<std::pair<std::string, Index>> excluded;
};

/// Static computation graph over Tensors. Built once, evaluated many times;
/// shapes are validated against each op's rule on every evaluation so one
/// graph serves any batch size.
class ComputeGraph {
 public:
  int input(std::string name);
  int constant(Tensor t);

  int add(int a, int b);
  int sub(int a, int b);
  int scale(int a, Scalar c);
  int mul(int a, int b);
  /// Per-feature multiply: [N,D] x [D] or [N,C,H,W] x [C].
  int row_mul(int a, int g);
  /// Broadcast add: [N,D] + [D] or [N,C,H,W] + [C].
  int bias_add(int a, int b);
  int matmul(int a, int b);
  int conv2d(int x, int w, int stride, bool same_pad);
  int relu(int a);
  int log_softmax(int a);
  int exp_(int a);
  int sum(int a);
  int l2_norm(int a);
  int reshape(int a, Shape target);

  void mark_output(int id, std::string name);

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const std::vector<std::string>& input_names() const { return input_names_; }

  /// Evaluate the marked outputs (all of them, or the requested subset).
  /// Only inputs in the ancestor cone of the requested outputs must be bound.
  Bindings evaluate(const Bindings& bindings,
                    const std::vector<std::string>& outputs = {}) const;

  /// Reverse-mode gradient of a scalar output w.r.t. free inputs.
  /// Disconnected inputs get zero gradients.
  Bindings backward(const Bindings& bindings, const std::string& output,
                    const std::vector<std::string>& wrt = {}) const;

  /// Forward-mode directional derivative of the outputs; inputs missing
  /// from `directions` carry zero tangent.
  Bindings jvp(const Bindings& bindings, const Bindings& directions,
               const std::vector<std::string>& outputs = {}) const;

  /// Compare backward() against central finite differences coordinate by
  /// coordinate. Large inputs are subsampled (at least 64 coordinates).
  FiniteDiffReport finite_diff_check(const Bindings& bindings,
                                     const std::string& output, double h,
                                     double tol,
                                     uint64_t subsample_seed = 0) const;

 private:
  int push(Node n);
  void check_id(int id) const;
  std::vector<char> needed_mask(const std::vector<std::string>& outputs) const;
  std::vector<Tensor> forward(const Bindings& bindings,
                              const std::vector<char>& needed) const;
  Tensor eval_node(int id, const std::vector<Tensor>& vals,
                   const Bindings& bindings) const;

  std::vector<Node> nodes_;
  std::map<std::string, int> outputs_;
  std::map<std::string, int> inputs_;
  std::vector<std::string> input_names_;
};

}  // namespace robustlens
