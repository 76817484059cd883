#include "robustlens/model.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "robustlens/rng.hpp"

namespace robustlens {

std::string arch_name(Arch a) { return a == Arch::mlp ? "mlp" : "smallconv"; }

Arch arch_from_name(const std::string& s) {
  if (s == "mlp") return Arch::mlp;
  if (s == "smallconv") return Arch::smallconv;
  fail(ErrorCode::bad_config, "unknown architecture '" + s + "'");
}

namespace {

// Spatial dims after the two conv layers (kernel 5, valid padding, strides 1,2).
void conv_out_dims(const ModelConfig& c, Index* h2, Index* w2) {
  Index h1 = c.in_h - 4, w1 = c.in_w - 4;
  *h2 = (h1 - 5) / 2 + 1;
  *w2 = (w1 - 5) / 2 + 1;
}

}  // namespace

void ModelConfig::validate() const {
  if (k < 1) fail(ErrorCode::bad_config, "representation dim k must be >= 1");
  if (K < 2) fail(ErrorCode::bad_config, "class count K must be >= 2");
  if (in_c < 1 || in_h < 1 || in_w < 1) fail(ErrorCode::bad_config, "bad input dims");
  if (arch == Arch::mlp) {
    if (widths.empty()) fail(ErrorCode::bad_config, "mlp needs at least one layer");
    for (int w : widths)
      if (w < 1) fail(ErrorCode::bad_config, "zero-width layer");
    if (widths.back() != k)
      fail(ErrorCode::bad_config, "mlp last width must equal k");
  } else {
    if (channels.size() != 2) fail(ErrorCode::bad_config, "smallconv needs two channel counts");
    for (int c : channels)
      if (c < 1) fail(ErrorCode::bad_config, "zero-channel layer");
    if (in_h < 13 || in_w < 13)
      fail(ErrorCode::bad_config, "smallconv input too small for two 5x5 valid convs");
  }
}

const LayoutBlock& Params::find(const std::string& name) const {
  for (const auto& b : layout)
    if (b.name == name) return b;
  fail(ErrorCode::layout_mismatch, "no parameter block named " + name);
}

Tensor Params::block(const std::string& name) const {
  const LayoutBlock& b = find(name);
  return Tensor(b.shape, flat.segment(b.offset, b.size()));
}

void Params::set_block(const std::string& name, const Tensor& t) {
  const LayoutBlock& b = find(name);
  if (t.shape != b.shape)
    fail(ErrorCode::shape_mismatch, "block " + name + " expects " + shape_str(b.shape));
  flat.segment(b.offset, b.size()) = t.data;
}

std::vector<LayoutBlock> Model::build_layout(const ModelConfig& c) {
  std::vector<LayoutBlock> layout;
  Index off = 0;
  auto push = [&](const std::string& name, Shape shape) {
    layout.push_back({name, off, shape});
    off += shape_numel(shape);
  };
  if (c.arch == Arch::mlp) {
    Index in = c.input_dim();
    for (size_t i = 0; i < c.widths.size(); ++i) {
      Index out = c.widths[i];
      push("fc" + std::to_string(i) + ".w", {in, out});
      push("fc" + std::to_string(i) + ".b", {out});
      if (c.norm) {
        push("norm" + std::to_string(i) + ".g", {out});
        push("norm" + std::to_string(i) + ".s", {out});
      }
      in = out;
    }
  } else {
    push("conv0.w", {c.channels[0], c.in_c, 5, 5});
    push("conv0.b", {c.channels[0]});
    if (c.norm) {
      push("norm0.g", {c.channels[0]});
      push("norm0.s", {c.channels[0]});
    }
    push("conv1.w", {c.channels[1], c.channels[0], 5, 5});
    push("conv1.b", {c.channels[1]});
    if (c.norm) {
      push("norm1.g", {c.channels[1]});
      push("norm1.s", {c.channels[1]});
    }
    Index h2, w2;
    conv_out_dims(c, &h2, &w2);
    push("fc0.w", {c.channels[1] * h2 * w2, c.k});
    push("fc0.b", {c.k});
    if (c.norm) {
      push("norm2.g", {c.k});
      push("norm2.s", {c.k});
    }
  }
  push("head.A", {c.k, c.K});
  push("head.b", {c.K});
  return layout;
}

std::shared_ptr<const ComputeGraph> Model::build_graph(const ModelConfig& c,
                                                       std::string* z_norm_name) {
  auto g = std::make_shared<ComputeGraph>();
  std::map<std::string, int> pid;
  for (const auto& b : build_layout(c)) pid[b.name] = g->input(b.name);
  int x = g->input("x");
  int xa = g->input("_x_adv");

  z_norm_name->clear();
  auto extractor = [&](int h) -> int {
    if (c.arch == Arch::mlp) {
      for (size_t i = 0; i < c.widths.size(); ++i) {
        std::string fc = "fc" + std::to_string(i);
        h = g->bias_add(g->matmul(h, pid[fc + ".w"]), pid[fc + ".b"]);
        h = g->relu(h);
        if (c.norm) {
          std::string nm = "norm" + std::to_string(i);
          h = g->bias_add(g->row_mul(h, pid[nm + ".g"]), pid[nm + ".s"]);
          *z_norm_name = nm;
        }
      }
    } else {
      h = g->conv2d(h, pid["conv0.w"], 1, false);
      h = g->bias_add(h, pid["conv0.b"]);
      h = g->relu(h);
      if (c.norm)
        h = g->bias_add(g->row_mul(h, pid["norm0.g"]), pid["norm0.s"]);
      h = g->conv2d(h, pid["conv1.w"], 2, false);
      h = g->bias_add(h, pid["conv1.b"]);
      h = g->relu(h);
      if (c.norm)
        h = g->bias_add(g->row_mul(h, pid["norm1.g"]), pid["norm1.s"]);
      Index h2, w2;
      conv_out_dims(c, &h2, &w2);
      h = g->reshape(h, {-1, c.channels[1] * h2 * w2});
      h = g->bias_add(g->matmul(h, pid["fc0.w"]), pid["fc0.b"]);
      h = g->relu(h);
      if (c.norm) {
        h = g->bias_add(g->row_mul(h, pid["norm2.g"]), pid["norm2.s"]);
        *z_norm_name = "norm2";
      }
    }
    return h;
  };

  int z = extractor(x);
  int logits = g->bias_add(g->matmul(z, pid["head.A"]), pid["head.b"]);
  int lsm = g->log_softmax(logits);
  g->mark_output(z, "z");
  g->mark_output(logits, "logits");
  g->mark_output(lsm, "lsm");

  // Probe outputs: row selections, per-batch log-likelihood, inversion loss.
  int zsel = g->input("_zsel");
  g->mark_output(g->sum(g->mul(z, zsel)), "zsel");
  int lsel = g->input("_lsel");
  g->mark_output(g->sum(g->mul(logits, lsel)), "lsel");
  int onehot = g->input("_onehot");
  int loglik = g->sum(g->mul(lsm, onehot));
  g->mark_output(loglik, "loglik");
  g->mark_output(g->scale(loglik, -1.0), "nll_sum");
  int ztarget = g->input("_ztarget");
  g->mark_output(g->l2_norm(g->sub(z, ztarget)), "inv_loss");

  // Adversarial branch shares the parameter inputs.
  int za = extractor(xa);
  int logits_a = g->bias_add(g->matmul(za, pid["head.A"]), pid["head.b"]);
  int lsm_a = g->log_softmax(logits_a);
  g->mark_output(za, "z_adv");
  g->mark_output(lsm_a, "lsm_adv");
  g->mark_output(g->scale(g->sum(g->mul(lsm_a, onehot)), -1.0), "nll_adv_sum");
  // KL(p(.|x_adv) || p(.|x)) summed over the batch; both sides carry weights.
  g->mark_output(g->sum(g->mul(g->exp_(lsm_a), g->sub(lsm_a, lsm))), "kl_sum");
  // Same, against a fixed reference distribution (attack inner loop).
  int lsm_ref = g->input("_lsm_ref");
  g->mark_output(g->sum(g->mul(g->exp_(lsm_a), g->sub(lsm_a, lsm_ref))),
                 "kl_vs_ref_sum");
  return g;
}

Model Model::init(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config_ = config;
  m.params_.layout = build_layout(config);
  Index total = 0;
  for (const auto& b : m.params_.layout) total += b.size();
  m.params_.flat = Vector::Zero(total);

  Rng rng(child_seed(config.seed, "model-init"));
  Index fan_in = 1;
  for (const auto& b : m.params_.layout) {
    auto seg = m.params_.flat.segment(b.offset, b.size());
    if (b.name.rfind("norm", 0) == 0) {
      bool is_gain = b.name.size() > 2 && b.name.substr(b.name.size() - 2) == ".g";
      seg.setConstant(is_gain ? 1.0 : 0.0);
      continue;
    }
    // Fan-in-scaled uniform init; biases reuse their layer's fan-in.
    if (b.shape.size() == 4)
      fan_in = b.shape[1] * b.shape[2] * b.shape[3];
    else if (b.shape.size() == 2)
      fan_in = b.shape[0];
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Index i = 0; i < b.size(); ++i) seg[i] = rng.uniform(-bound, bound);
  }

  m.graph_ = build_graph(config, &m.z_norm_name_);
  return m;
}

Tensor Model::prepare_input(const Tensor& x) const {
  if (config_.arch == Arch::mlp) {
    if (x.rank() == 2) return x;
    if (x.rank() == 4) return x.reshaped({x.dim(0), config_.input_dim()});
  } else {
    if (x.rank() == 4) return x;
    if (x.rank() == 2)
      return x.reshaped({x.dim(0), config_.in_c, config_.in_h, config_.in_w});
  }
  fail(ErrorCode::shape_mismatch, "model input must be rank 2 or 4, got " +
                                      shape_str(x.shape));
}

Bindings Model::param_bindings() const {
  Bindings b;
  for (const auto& blk : params_.layout)
    b[blk.name] = Tensor(blk.shape, params_.flat.segment(blk.offset, blk.size()));
  return b;
}

Tensor Model::forward_features(const Tensor& x) const {
  Bindings b = param_bindings();
  b["x"] = prepare_input(x);
  return graph_->evaluate(b, {"z"}).at("z");
}

Tensor Model::forward_logits(const Tensor& x) const {
  Bindings b = param_bindings();
  b["x"] = prepare_input(x);
  return graph_->evaluate(b, {"logits"}).at("logits");
}

Tensor Model::forward_log_softmax(const Tensor& x) const {
  Bindings b = param_bindings();
  b["x"] = prepare_input(x);
  return graph_->evaluate(b, {"lsm"}).at("lsm");
}

std::vector<int> Model::predict(const Tensor& x) const {
  Tensor logits = forward_logits(x);
  std::vector<int> out(static_cast<size_t>(logits.dim(0)));
  auto m = logits.mat();
  for (Index r = 0; r < m.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < m.cols(); ++c)
      if (m(r, c) > m(r, best)) best = c;
    out[static_cast<size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

double Model::param_l2_norm() const { return params_.flat.norm(); }

void Model::set_flat(const Vector& flat) {
  if (flat.size() != params_.flat.size())
    fail(ErrorCode::layout_mismatch, "flat parameter size mismatch");
  params_.flat = flat;
}

Model Model::with_flat(Vector flat) const {
  Model m = *this;
  m.set_flat(flat);
  return m;
}

void Model::reinit_head(int new_K, uint64_t seed) {
  ModelConfig c = config_;
  c.K = new_K;
  c.seed = seed;
  Model fresh = Model::init(c);
  for (const auto& b : params_.layout)
    if (b.name.rfind("head.", 0) != 0) fresh.params_.set_block(b.name, params_.block(b.name));
  *this = fresh;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "RLNS" magic, u32 LE version (=1), u32 LE header length,
// UTF-8 key:value header lines, then each layout block as raw f32 LE.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'L', 'N', 'S'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) fail(ErrorCode::truncated, "checkpoint truncated");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::io, "cannot open " + path + " for writing");
  const ModelConfig& c = model.config();
  std::ostringstream hdr;
  hdr << "arch:" << arch_name(c.arch) << "\n";
  hdr << "widths:" << join_ints(c.widths) << "\n";
  hdr << "channels:" << join_ints(c.channels) << "\n";
  hdr << "k:" << c.k << "\nK:" << c.K << "\n";
  hdr << "norm:" << (c.norm ? 1 : 0) << "\n";
  hdr << "seed:" << c.seed << "\n";
  hdr << "in:" << c.in_c << "x" << c.in_h << "x" << c.in_w << "\n";
  char eps[64];
  std::snprintf(eps, sizeof(eps), "%.17g", c.train_eps);
  hdr << "train_eps:" << eps << "\n";
  std::string h = hdr.str();

  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(h.size()));
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& b : model.params().layout) {
    for (Index i = 0; i < b.size(); ++i) {
      float f = static_cast<float>(model.params().flat[b.offset + i]);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(os, bits);
    }
  }
  if (!os) fail(ErrorCode::io, "write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::io, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is) fail(ErrorCode::truncated, "checkpoint truncated");
  if (std::memcmp(magic, kMagic, 4) != 0)
    fail(ErrorCode::bad_magic, "bad magic in " + path);
  uint32_t version = get_u32(is);
  if (version != kVersion)
    fail(ErrorCode::bad_version, "unsupported checkpoint version " + std::to_string(version));
  uint32_t hlen = get_u32(is);
  std::string hdr(hlen, '\0');
  is.read(hdr.data(), hlen);
  if (!is) fail(ErrorCode::truncated, "checkpoint truncated in header");

  std::map<std::string, std::string> kv;
  std::stringstream hs(hdr);
  std::string line;
  while (std::getline(hs, line)) {
    auto pos = line.find(':');
    if (pos == std::string::npos) continue;
    kv[line.substr(0, pos)] = line.substr(pos + 1);
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) fail(ErrorCode::bad_config, "checkpoint header missing " + key);
    return it->second;
  };

  ModelConfig c;
  c.arch = arch_from_name(need("arch"));
  c.widths = split_ints(need("widths"));
  c.channels = split_ints(need("channels"));
  c.k = std::stoi(need("k"));
  c.K = std::stoi(need("K"));
  c.norm = std::stoi(need("norm")) != 0;
  c.seed = std::stoull(need("seed"));
  {
    std::stringstream ss(need("in"));
    char sep;
    ss >> c.in_c >> sep >> c.in_h >> sep >> c.in_w;
  }
  c.train_eps = std::stod(need("train_eps"));

  Model m = Model::init(c);
  Vector flat(m.flat().size());
  for (Index i = 0; i < flat.size(); ++i) {
    uint32_t bits = get_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    flat[i] = static_cast<double>(f);
  }
  is.peek();
  if (!is.eof()) fail(ErrorCode::trailing_data, "trailing data in " + path);
  m.set_flat(flat);
  return m;
}

}  // namespace robustlens
