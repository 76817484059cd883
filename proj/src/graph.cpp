#include "robustlens/graph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "robustlens/rng.hpp"

namespace robustlens {

const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::scale: return "scale";
    case Op::mul: return "mul";
    case Op::row_mul: return "row_mul";
    case Op::bias_add: return "bias_add";
    case Op::matmul: return "matmul";
    case Op::conv2d: return "conv2d";
    case Op::relu: return "relu";
    case Op::log_softmax: return "log_softmax";
    case Op::exp: return "exp";
    case Op::sum: return "sum";
    case Op::l2_norm: return "l2_norm";
    case Op::reshape: return "reshape";
  }
  return "?";
}

namespace {

struct ConvGeom {
  Index N, C, H, W, O, kh, kw, Ho, Wo;
  int stride;
  Index pad_h, pad_w;
};

ConvGeom conv_geom(const Tensor& x, const Tensor& w, int stride, bool same_pad) {
  if (x.rank() != 4 || w.rank() != 4)
    fail(ErrorCode::shape_mismatch, "conv2d expects rank-4 input and kernel, got " +
                                        shape_str(x.shape) + " and " + shape_str(w.shape));
  ConvGeom g;
  g.N = x.dim(0); g.C = x.dim(1); g.H = x.dim(2); g.W = x.dim(3);
  g.O = w.dim(0); g.kh = w.dim(2); g.kw = w.dim(3);
  g.stride = stride;
  if (w.dim(1) != g.C)
    fail(ErrorCode::shape_mismatch, "conv2d channel mismatch: input has " +
                                        std::to_string(g.C) + ", kernel expects " +
                                        std::to_string(w.dim(1)));
  if (g.kh > 5 || g.kw > 5 || g.kh < 1 || g.kw < 1)
    fail(ErrorCode::shape_mismatch, "conv2d kernel size out of supported range");
  if (stride != 1 && stride != 2)
    fail(ErrorCode::shape_mismatch, "conv2d stride must be 1 or 2");
  if (same_pad) {
    g.Ho = (g.H + stride - 1) / stride;
    g.Wo = (g.W + stride - 1) / stride;
    Index tot_h = std::max<Index>((g.Ho - 1) * stride + g.kh - g.H, 0);
    Index tot_w = std::max<Index>((g.Wo - 1) * stride + g.kw - g.W, 0);
    g.pad_h = tot_h / 2;
    g.pad_w = tot_w / 2;
  } else {
    if (g.H < g.kh || g.W < g.kw)
      fail(ErrorCode::shape_mismatch, "conv2d valid padding: input smaller than kernel");
    g.Ho = (g.H - g.kh) / stride + 1;
    g.Wo = (g.W - g.kw) / stride + 1;
    g.pad_h = g.pad_w = 0;
  }
  return g;
}

Tensor conv_forward(const Tensor& x, const Tensor& w, const ConvGeom& g) {
  Tensor out = Tensor::zeros({g.N, g.O, g.Ho, g.Wo});
  const double* xd = x.data.data();
  const double* wd = w.data.data();
  double* od = out.data.data();
  for (Index n = 0; n < g.N; ++n)
    for (Index o = 0; o < g.O; ++o)
      for (Index i = 0; i < g.Ho; ++i)
        for (Index j = 0; j < g.Wo; ++j) {
          double acc = 0.0;
          for (Index c = 0; c < g.C; ++c)
            for (Index u = 0; u < g.kh; ++u) {
              Index h = i * g.stride - g.pad_h + u;
              if (h < 0 || h >= g.H) continue;
              for (Index v = 0; v < g.kw; ++v) {
                Index ww = j * g.stride - g.pad_w + v;
                if (ww < 0 || ww >= g.W) continue;
                acc += xd[((n * g.C + c) * g.H + h) * g.W + ww] *
                       wd[((o * g.C + c) * g.kh + u) * g.kw + v];
              }
            }
          od[((n * g.O + o) * g.Ho + i) * g.Wo + j] = acc;
        }
  return out;
}

void conv_backward(const Tensor& x, const Tensor& w, const ConvGeom& g,
                   const Tensor& gout, Tensor* dx, Tensor* dw) {
  const double* xd = x.data.data();
  const double* wd = w.data.data();
  const double* gd = gout.data.data();
  double* dxd = dx ? dx->data.data() : nullptr;
  double* dwd = dw ? dw->data.data() : nullptr;
  for (Index n = 0; n < g.N; ++n)
    for (Index o = 0; o < g.O; ++o)
      for (Index i = 0; i < g.Ho; ++i)
        for (Index j = 0; j < g.Wo; ++j) {
          double gv = gd[((n * g.O + o) * g.Ho + i) * g.Wo + j];
          if (gv == 0.0) continue;
          for (Index c = 0; c < g.C; ++c)
            for (Index u = 0; u < g.kh; ++u) {
              Index h = i * g.stride - g.pad_h + u;
              if (h < 0 || h >= g.H) continue;
              for (Index v = 0; v < g.kw; ++v) {
                Index ww = j * g.stride - g.pad_w + v;
                if (ww < 0 || ww >= g.W) continue;
                Index xi = ((n * g.C + c) * g.H + h) * g.W + ww;
                Index wi = ((o * g.C + c) * g.kh + u) * g.kw + v;
                if (dxd) dxd[xi] += gv * wd[wi];
                if (dwd) dwd[wi] += gv * xd[xi];
              }
            }
        }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    fail(ErrorCode::shape_mismatch, std::string(what) + ": shapes " + shape_str(a.shape) +
                                        " vs " + shape_str(b.shape));
}

// Per-feature axis for bias_add / row_mul broadcasting.
Index feature_dim(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) return 1;
  if (a.rank() == 4 && b.rank() == 1 && b.dim(0) == a.dim(1)) return 1;
  fail(ErrorCode::shape_mismatch, std::string(what) + ": cannot broadcast " +
                                      shape_str(b.shape) + " over " + shape_str(a.shape));
}

Tensor softmax_rows(const Tensor& lsm) {
  Tensor p = lsm;
  p.data = lsm.data.array().exp();
  return p;
}

// A single -1 entry in a reshape target is inferred from the element count.
Shape resolve_target(const Shape& target, Index numel) {
  Shape t = target;
  Index known = 1;
  int neg = -1;
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i] == -1) {
      if (neg >= 0) fail(ErrorCode::shape_mismatch, "reshape: multiple -1 dims");
      neg = static_cast<int>(i);
    } else {
      known *= t[i];
    }
  }
  if (neg >= 0) {
    if (known == 0 || numel % known != 0)
      fail(ErrorCode::shape_mismatch, "reshape: cannot infer dim");
    t[static_cast<size_t>(neg)] = numel / known;
  }
  return t;
}

}  // namespace

int ComputeGraph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void ComputeGraph::check_id(int id) const {
  if (id < 0 || id >= node_count())
    fail(ErrorCode::shape_mismatch, "bad node id " + std::to_string(id));
}

int ComputeGraph::input(std::string name) {
  if (inputs_.count(name))
    fail(ErrorCode::bad_config, "duplicate input name " + name);
  Node n{Op::input, {}, name, {}, 0.0, 1, false, {}};
  int id = push(std::move(n));
  inputs_[name] = id;
  input_names_.push_back(name);
  return id;
}

int ComputeGraph::constant(Tensor t) {
  Node n{Op::constant, {}, "", std::move(t), 0.0, 1, false, {}};
  return push(std::move(n));
}

#define RL_BINOP(fname, opk)                          \
  int ComputeGraph::fname(int a, int b) {             \
    check_id(a); check_id(b);                         \
    return push(Node{opk, {a, b}, "", {}, 0.0, 1, false, {}}); \
  }

RL_BINOP(add, Op::add)
RL_BINOP(sub, Op::sub)
RL_BINOP(mul, Op::mul)
RL_BINOP(row_mul, Op::row_mul)
RL_BINOP(bias_add, Op::bias_add)
RL_BINOP(matmul, Op::matmul)
#undef RL_BINOP

int ComputeGraph::scale(int a, Scalar c) {
  check_id(a);
  return push(Node{Op::scale, {a}, "", {}, c, 1, false, {}});
}

int ComputeGraph::conv2d(int x, int w, int stride, bool same_pad) {
  check_id(x); check_id(w);
  return push(Node{Op::conv2d, {x, w}, "", {}, 0.0, stride, same_pad, {}});
}

#define RL_UNOP(fname, opk)                            \
  int ComputeGraph::fname(int a) {                     \
    check_id(a);                                       \
    return push(Node{opk, {a}, "", {}, 0.0, 1, false, {}}); \
  }

RL_UNOP(relu, Op::relu)
RL_UNOP(log_softmax, Op::log_softmax)
RL_UNOP(exp_, Op::exp)
RL_UNOP(sum, Op::sum)
RL_UNOP(l2_norm, Op::l2_norm)
#undef RL_UNOP

int ComputeGraph::reshape(int a, Shape target) {
  check_id(a);
  return push(Node{Op::reshape, {a}, "", {}, 0.0, 1, false, std::move(target)});
}

void ComputeGraph::mark_output(int id, std::string name) {
  check_id(id);
  outputs_[std::move(name)] = id;
}

std::vector<char> ComputeGraph::needed_mask(const std::vector<std::string>& outputs) const {
  std::vector<char> needed(nodes_.size(), 0);
  std::vector<int> stack;
  if (outputs.empty()) {
    for (const auto& [name, id] : outputs_) stack.push_back(id);
  } else {
    for (const auto& name : outputs) {
      auto it = outputs_.find(name);
      if (it == outputs_.end())
        fail(ErrorCode::bad_config, "unknown graph output " + name);
      stack.push_back(it->second);
    }
  }
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    if (needed[id]) continue;
    needed[id] = 1;
    for (int in : nodes_[id].inputs) stack.push_back(in);
  }
  return needed;
}

Tensor ComputeGraph::eval_node(int id, const std::vector<Tensor>& vals,
                               const Bindings& bindings) const {
  const Node& n = nodes_[id];
  auto in = [&](int slot) -> const Tensor& { return vals[n.inputs[slot]]; };
  switch (n.op) {
    case Op::input: {
      auto it = bindings.find(n.name);
      if (it == bindings.end())
        fail(ErrorCode::unbound_input, "unbound input " + n.name);
      return it->second;
    }
    case Op::constant:
      return n.value;
    case Op::add: {
      check_same_shape(in(0), in(1), "add");
      Tensor out = in(0);
      out.data += in(1).data;
      return out;
    }
    case Op::sub: {
      check_same_shape(in(0), in(1), "sub");
      Tensor out = in(0);
      out.data -= in(1).data;
      return out;
    }
    case Op::scale: {
      Tensor out = in(0);
      out.data *= n.c;
      return out;
    }
    case Op::mul: {
      check_same_shape(in(0), in(1), "mul");
      Tensor out = in(0);
      out.data.array() *= in(1).data.array();
      return out;
    }
    case Op::row_mul:
    case Op::bias_add: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      feature_dim(a, b, op_name(n.op));
      Tensor out = a;
      Index C = b.size();
      Index inner = (a.rank() == 4) ? a.dim(2) * a.dim(3) : 1;
      Index outer = a.dim(0);
      for (Index o = 0; o < outer; ++o)
        for (Index c = 0; c < C; ++c) {
          auto seg = out.data.segment((o * C + c) * inner, inner);
          if (n.op == Op::row_mul)
            seg *= b.data[c];
          else
            seg.array() += b.data[c];
        }
      return out;
    }
    case Op::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        fail(ErrorCode::shape_mismatch, "matmul: " + shape_str(a.shape) + " x " +
                                            shape_str(b.shape));
      Tensor out = Tensor::zeros({a.dim(0), b.dim(1)});
      out.mat() = a.mat() * b.mat();
      return out;
    }
    case Op::conv2d: {
      ConvGeom g = conv_geom(in(0), in(1), n.stride, n.same_pad);
      return conv_forward(in(0), in(1), g);
    }
    case Op::relu: {
      Tensor out = in(0);
      out.data = out.data.cwiseMax(0.0);
      return out;
    }
    case Op::log_softmax: {
      const Tensor& a = in(0);
      if (a.rank() != 2)
        fail(ErrorCode::shape_mismatch, "log_softmax expects rank 2, got " + shape_str(a.shape));
      Tensor out = a;
      auto m = out.mat();
      for (Index r = 0; r < m.rows(); ++r) {
        double mx = m.row(r).maxCoeff();
        double lse = std::log((m.row(r).array() - mx).exp().sum()) + mx;
        m.row(r).array() -= lse;
      }
      return out;
    }
    case Op::exp: {
      Tensor out = in(0);
      out.data = out.data.array().exp();
      return out;
    }
    case Op::sum:
      return Tensor::scalar(in(0).data.sum());
    case Op::l2_norm:
      return Tensor::scalar(in(0).data.norm());
    case Op::reshape:
      return in(0).reshaped(resolve_target(n.target, in(0).size()));
  }
  fail(ErrorCode::bad_config, "unreachable op");
}

std::vector<Tensor> ComputeGraph::forward(const Bindings& bindings,
                                          const std::vector<char>& needed) const {
  std::vector<Tensor> vals(nodes_.size());
  for (int id = 0; id < node_count(); ++id) {
    if (!needed[id]) continue;
    vals[id] = eval_node(id, vals, bindings);
    if (!vals[id].all_finite())
      fail(ErrorCode::non_finite, std::string("non-finite value at node ") +
                                      std::to_string(id) + " (" + op_name(nodes_[id].op) + ")");
  }
  return vals;
}

Bindings ComputeGraph::evaluate(const Bindings& bindings,
                                const std::vector<std::string>& outputs) const {
  auto needed = needed_mask(outputs);
  auto vals = forward(bindings, needed);
  Bindings out;
  for (const auto& [name, id] : outputs_) {
    if (!outputs.empty() &&
        std::find(outputs.begin(), outputs.end(), name) == outputs.end())
      continue;
    out[name] = vals[id];
  }
  return out;
}

Bindings ComputeGraph::backward(const Bindings& bindings, const std::string& output,
                                const std::vector<std::string>& wrt) const {
  auto it = outputs_.find(output);
  if (it == outputs_.end()) fail(ErrorCode::bad_config, "unknown graph output " + output);
  int out_id = it->second;
  auto needed = needed_mask({output});
  auto vals = forward(bindings, needed);
  if (!vals[out_id].is_scalar())
    fail(ErrorCode::shape_mismatch, "backward requires a scalar output, got " +
                                        shape_str(vals[out_id].shape));

  std::vector<Tensor> grads(nodes_.size());
  auto grad_of = [&](int id) -> Tensor& {
    if (grads[id].size() == 0) grads[id] = Tensor::zeros(vals[id].shape);
    return grads[id];
  };
  grad_of(out_id).data[0] = 1.0;

  for (int id = node_count() - 1; id >= 0; --id) {
    if (!needed[id] || grads[id].size() == 0) continue;
    const Node& n = nodes_[id];
    const Tensor& g = grads[id];
    auto in = [&](int slot) -> const Tensor& { return vals[n.inputs[slot]]; };
    switch (n.op) {
      case Op::input:
      case Op::constant:
        break;
      case Op::add:
        grad_of(n.inputs[0]).data += g.data;
        grad_of(n.inputs[1]).data += g.data;
        break;
      case Op::sub:
        grad_of(n.inputs[0]).data += g.data;
        grad_of(n.inputs[1]).data -= g.data;
        break;
      case Op::scale:
        grad_of(n.inputs[0]).data += n.c * g.data;
        break;
      case Op::mul:
        grad_of(n.inputs[0]).data.array() += g.data.array() * in(1).data.array();
        grad_of(n.inputs[1]).data.array() += g.data.array() * in(0).data.array();
        break;
      case Op::row_mul:
      case Op::bias_add: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        Index C = b.size();
        Index inner = (a.rank() == 4) ? a.dim(2) * a.dim(3) : 1;
        Index outer = a.dim(0);
        Tensor& ga = grad_of(n.inputs[0]);
        Tensor& gb = grad_of(n.inputs[1]);
        for (Index o = 0; o < outer; ++o)
          for (Index c = 0; c < C; ++c) {
            auto gseg = g.data.segment((o * C + c) * inner, inner);
            if (n.op == Op::row_mul) {
              ga.data.segment((o * C + c) * inner, inner) += b.data[c] * gseg;
              gb.data[c] += gseg.dot(a.data.segment((o * C + c) * inner, inner));
            } else {
              ga.data.segment((o * C + c) * inner, inner) += gseg;
              gb.data[c] += gseg.sum();
            }
          }
        break;
      }
      case Op::matmul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        Tensor gm({g.shape}, g.data);
        grad_of(n.inputs[0]).mat() += gm.mat() * b.mat().transpose();
        grad_of(n.inputs[1]).mat() += a.mat().transpose() * gm.mat();
        break;
      }
      case Op::conv2d: {
        ConvGeom geom = conv_geom(in(0), in(1), n.stride, n.same_pad);
        conv_backward(in(0), in(1), geom, g, &grad_of(n.inputs[0]),
                      &grad_of(n.inputs[1]));
        break;
      }
      case Op::relu: {
        // Subgradient 0 at the kink.
        Tensor& ga = grad_of(n.inputs[0]);
        ga.data.array() +=
            g.data.array() * (in(0).data.array() > 0.0).cast<double>();
        break;
      }
      case Op::log_softmax: {
        const Tensor& y = vals[id];
        Tensor p = softmax_rows(y);
        Tensor& ga = grad_of(n.inputs[0]);
        auto gm = Eigen::Map<const RowMatrix>(g.data.data(), y.dim(0), y.dim(1));
        auto pm = p.mat();
        auto gam = ga.mat();
        for (Index r = 0; r < gm.rows(); ++r) {
          double rowsum = gm.row(r).sum();
          gam.row(r) += gm.row(r) - rowsum * pm.row(r);
        }
        break;
      }
      case Op::exp:
        grad_of(n.inputs[0]).data.array() +=
            g.data.array() * vals[id].data.array();
        break;
      case Op::sum:
        grad_of(n.inputs[0]).data.array() += g.data[0];
        break;
      case Op::l2_norm: {
        double norm = vals[id].data[0];
        if (norm > 0.0)
          grad_of(n.inputs[0]).data += (g.data[0] / norm) * in(0).data;
        break;
      }
      case Op::reshape: {
        grad_of(n.inputs[0]).data += g.data;
        break;
      }
    }
  }

  Bindings result;
  std::vector<std::string> names = wrt.empty() ? input_names_ : wrt;
  for (const auto& name : names) {
    auto iit = inputs_.find(name);
    if (iit == inputs_.end()) fail(ErrorCode::bad_config, "unknown graph input " + name);
    int id = iit->second;
    if (!needed[id] || grads[id].size() == 0) {
      auto bit = bindings.find(name);
      if (bit != bindings.end())
        result[name] = Tensor::zeros(bit->second.shape);
      else
        result[name] = Tensor::zeros({0});
    } else {
      result[name] = grads[id];
    }
  }
  return result;
}

Bindings ComputeGraph::jvp(const Bindings& bindings, const Bindings& directions,
                           const std::vector<std::string>& outputs) const {
  auto needed = needed_mask(outputs);
  auto vals = forward(bindings, needed);
  std::vector<Tensor> tans(nodes_.size());
  for (int id = 0; id < node_count(); ++id) {
    if (!needed[id]) continue;
    const Node& n = nodes_[id];
    auto in = [&](int slot) -> const Tensor& { return vals[n.inputs[slot]]; };
    auto tan = [&](int slot) -> const Tensor& { return tans[n.inputs[slot]]; };
    Tensor t;
    switch (n.op) {
      case Op::input: {
        auto dit = directions.find(n.name);
        if (dit != directions.end()) {
          if (!dit->second.same_shape(vals[id]))
            fail(ErrorCode::shape_mismatch, "jvp direction shape mismatch on " + n.name);
          t = dit->second;
        } else {
          t = Tensor::zeros(vals[id].shape);
        }
        break;
      }
      case Op::constant:
        t = Tensor::zeros(vals[id].shape);
        break;
      case Op::add:
        t = tan(0);
        t.data += tan(1).data;
        break;
      case Op::sub:
        t = tan(0);
        t.data -= tan(1).data;
        break;
      case Op::scale:
        t = tan(0);
        t.data *= n.c;
        break;
      case Op::mul:
        t = tan(0);
        t.data.array() = tan(0).data.array() * in(1).data.array() +
                         in(0).data.array() * tan(1).data.array();
        break;
      case Op::row_mul:
      case Op::bias_add: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        Index C = b.size();
        Index inner = (a.rank() == 4) ? a.dim(2) * a.dim(3) : 1;
        Index outer = a.dim(0);
        t = Tensor::zeros(a.shape);
        for (Index o = 0; o < outer; ++o)
          for (Index c = 0; c < C; ++c) {
            auto seg = t.data.segment((o * C + c) * inner, inner);
            auto ta = tan(0).data.segment((o * C + c) * inner, inner);
            if (n.op == Op::row_mul)
              seg = b.data[c] * ta +
                    tan(1).data[c] * a.data.segment((o * C + c) * inner, inner);
            else
              seg = ta.array() + tan(1).data[c];
          }
        break;
      }
      case Op::matmul:
        t = Tensor::zeros(vals[id].shape);
        t.mat() = tan(0).mat() * in(1).mat() + in(0).mat() * tan(1).mat();
        break;
      case Op::conv2d: {
        ConvGeom geom = conv_geom(in(0), in(1), n.stride, n.same_pad);
        t = conv_forward(tan(0), in(1), geom);
        t.data += conv_forward(in(0), tan(1), geom).data;
        break;
      }
      case Op::relu:
        t = tan(0);
        t.data.array() *= (in(0).data.array() > 0.0).cast<double>();
        break;
      case Op::log_softmax: {
        const Tensor& y = vals[id];
        Tensor p = softmax_rows(y);
        t = tan(0);
        auto tm = t.mat();
        auto pm = p.mat();
        for (Index r = 0; r < tm.rows(); ++r) {
          double pdot = pm.row(r).dot(tm.row(r));
          tm.row(r).array() -= pdot;
        }
        break;
      }
      case Op::exp:
        t = tan(0);
        t.data.array() *= vals[id].data.array();
        break;
      case Op::sum:
        t = Tensor::scalar(tan(0).data.sum());
        break;
      case Op::l2_norm: {
        double norm = vals[id].data[0];
        t = Tensor::scalar(norm > 0.0 ? in(0).data.dot(tan(0).data) / norm : 0.0);
        break;
      }
      case Op::reshape:
        t = tan(0).reshaped(resolve_target(n.target, tan(0).size()));
        break;
    }
    tans[id] = std::move(t);
  }
  Bindings out;
  for (const auto& [name, id] : outputs_) {
    if (!outputs.empty() &&
        std::find(outputs.begin(), outputs.end(), name) == outputs.end())
      continue;
    out[name] = tans[id];
  }
  return out;
}

FiniteDiffReport ComputeGraph::finite_diff_check(const Bindings& bindings,
                                                 const std::string& output,
                                                 double h, double tol,
                                                 uint64_t subsample_seed) const {
  if (h <= 0.0) fail(ErrorCode::bad_config, "finite_diff_check requires h > 0");
  FiniteDiffReport report;
  auto needed = needed_mask({output});
  auto grads = backward(bindings, output);

  // Relu input sign patterns at a perturbed point, for kink detection.
  auto relu_signs = [&](const Bindings& b) {
    auto vals = forward(b, needed);
    std::vector<char> signs;
    for (int id = 0; id < node_count(); ++id) {
      if (!needed[id] || nodes_[id].op != Op::relu) continue;
      const Tensor& v = vals[nodes_[id].inputs[0]];
      for (Index i = 0; i < v.size(); ++i) signs.push_back(v.data[i] > 0.0 ? 1 : 0);
    }
    return signs;
  };
  auto eval_scalar = [&](const Bindings& b) {
    auto out = evaluate(b, {output});
    return out.at(output).value();
  };

  Rng rng(subsample_seed);
  constexpr Index kSubsampleAbove = 64;
  for (const auto& name : input_names_) {
    auto bit = bindings.find(name);
    if (bit == bindings.end()) continue;
    int id = inputs_.at(name);
    if (!needed[id]) continue;
    const Tensor& x = bit->second;

    std::vector<Index> coords;
    if (x.size() <= kSubsampleAbove) {
      for (Index i = 0; i < x.size(); ++i) coords.push_back(i);
    } else {
      for (Index i = 0; i < kSubsampleAbove; ++i)
        coords.push_back(static_cast<Index>(rng.next_below(x.size())));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }

    Bindings b = bindings;
    for (Index i : coords) {
      double orig = x.data[i];
      b[name].data[i] = orig + h;
      double fp = eval_scalar(b);
      auto sp = relu_signs(b);
      b[name].data[i] = orig - h;
      double fm = eval_scalar(b);
      auto sm = relu_signs(b);
      b[name].data[i] = orig;
      if (sp != sm) {
        report.excluded.emplace_back(name, i);
        continue;
      }
      double fd = (fp - fm) / (2.0 * h);
      double ad = grads.at(name).data[i];
      double denom = std::max({std::abs(fd), std::abs(ad), 1e-6});
      double rel = std::abs(fd - ad) / denom;
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.coords_checked;
    }
  }
  report.pass = report.max_rel_error < tol;
  return report;
}

}  // namespace robustlens
