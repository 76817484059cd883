#include "robustlens/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <tuple>

#include "robustlens/adversarial.hpp"
#include "robustlens/csv.hpp"
#include "robustlens/image_io.hpp"
#include "robustlens/infogeom.hpp"
#include "robustlens/inversion.hpp"
#include "robustlens/rng.hpp"
#include "robustlens/transfer.hpp"

namespace fs = std::filesystem;

namespace robustlens {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

/// Split on commas at parenthesis depth zero.
std::vector<std::string> split_args(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

uint64_t parse_u64(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    uint64_t v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::bad_config, "bad integer '" + s + "' in " + what);
  }
}

std::string resolve_data_path(const std::string& p) {
  std::string path = p;
  if (!fs::path(p).is_absolute()) {
    if (const char* root = std::getenv("ROBUSTLENS_DATA")) {
      path = (fs::path(root) / p).string();
    }
  }
  if (!fs::exists(path))
    fail(ErrorCode::bad_config, "dataset path not found: '" + path + "'");
  return path;
}

LabeledDataset load_spec_inner(const std::string& raw) {
  std::string spec = trim(raw);
  if (spec.empty()) fail(ErrorCode::bad_config, "empty dataset spec");

  size_t paren = spec.find('(');
  size_t query = spec.find('?');
  if (paren != std::string::npos && (query == std::string::npos || paren < query)) {
    if (spec.back() != ')')
      fail(ErrorCode::bad_config, "unbalanced parentheses in dataset spec '" + spec + "'");
    std::string head = trim(spec.substr(0, paren));
    std::string body = spec.substr(paren + 1, spec.size() - paren - 2);
    auto args = split_args(body);
    if (head == "idx") {
      if (args.size() != 2)
        fail(ErrorCode::bad_config, "idx(images,labels) takes two paths");
      std::string images = resolve_data_path(args[0]);
      std::string labels = resolve_data_path(args[1]);
      return load_idx(images, labels);
    }
    if (head == "cifar") {
      if (args.size() != 1) fail(ErrorCode::bad_config, "cifar(file) takes one path");
      return load_cifar_bin(resolve_data_path(args[0]));
    }
    VariantSpec vs;
    bool seeded = false;
    if (head == "invert") {
      vs.kind = VariantKind::invert;
    } else if (head == "rotate") {
      vs.kind = VariantKind::rotate90;
    } else if (head == "drop") {
      vs.kind = VariantKind::channel_drop;
    } else if (head == "permute") {
      vs.kind = VariantKind::pixel_permute;
      seeded = true;
    } else if (head == "remap") {
      vs.kind = VariantKind::label_remap;
      seeded = true;
    } else {
      fail(ErrorCode::bad_config, "unknown dataset wrapper '" + head + "'");
    }
    if (seeded) {
      if (args.size() != 2)
        fail(ErrorCode::bad_config, head + "(SPEC,seed) takes a spec and a seed");
      vs.seed = parse_u64(args[1], "dataset spec '" + spec + "'");
    } else if (args.size() != 1) {
      fail(ErrorCode::bad_config, head + "(SPEC) takes exactly one spec");
    }
    return apply_variant(load_spec_inner(args[0]), vs);
  }

  // Base: name with optional ?k=v&k=v parameters.
  std::string name = query == std::string::npos ? spec : spec.substr(0, query);
  Index n = 512;
  uint64_t seed = 0;
  if (query != std::string::npos) {
    for (const auto& kv : split(spec.substr(query + 1), '&')) {
      size_t eq = kv.find('=');
      if (eq == std::string::npos)
        fail(ErrorCode::bad_config, "bad parameter '" + kv + "' in dataset spec");
      std::string k = trim(kv.substr(0, eq)), v = trim(kv.substr(eq + 1));
      if (k == "n")
        n = static_cast<Index>(parse_u64(v, "dataset spec '" + spec + "'"));
      else if (k == "seed")
        seed = parse_u64(v, "dataset spec '" + spec + "'");
      else
        fail(ErrorCode::bad_config, "unknown dataset parameter '" + k + "'");
    }
  }
  if (name != "shapes4" && name != "shapes2")
    fail(ErrorCode::bad_config, "unknown dataset '" + name + "'");
  return gen_synthetic(name, n, seed);
}

std::vector<std::string> spec_list(const std::string& joined) {
  std::vector<std::string> out;
  for (auto& s : split(joined, ';'))
    if (!s.empty()) out.push_back(s);
  if (out.empty()) fail(ErrorCode::bad_config, "empty list");
  return out;
}

void ensure_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) fail(ErrorCode::io, "cannot create output directory '" + out + "'");
}

std::string out_path(const Config& cfg, const std::string& file) {
  std::string out = cfg.get_str("out", ".");
  ensure_dir(out);
  return (fs::path(out) / file).string();
}

std::string require_existing(const Config& cfg, const std::string& key) {
  std::string p = cfg.require_str(key);
  if (!fs::exists(p))
    fail(ErrorCode::bad_config, key + " path not found: '" + p + "'");
  return p;
}

struct LoadedSource {
  std::string path;
  Model model;
};

std::vector<LoadedSource> load_sources(const Config& cfg, const std::string& key) {
  std::vector<LoadedSource> out;
  for (const auto& p : spec_list(cfg.require_str(key))) {
    if (!fs::exists(p))
      fail(ErrorCode::bad_config, key + " path not found: '" + p + "'");
    out.push_back({p, load_checkpoint(p)});
  }
  return out;
}

// --- tiny CSV reader for the report command ---

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::optional<CsvTable> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) return std::nullopt;
  CsvTable t;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (t.header.empty())
      t.header = cells;
    else
      t.rows.push_back(cells);
  }
  if (t.header.empty()) return std::nullopt;
  return t;
}

std::vector<double> column(const CsvTable& t, const std::string& name) {
  auto it = std::find(t.header.begin(), t.header.end(), name);
  if (it == t.header.end())
    fail(ErrorCode::bad_config, "column '" + name + "' missing from csv");
  size_t j = static_cast<size_t>(it - t.header.begin());
  std::vector<double> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) out.push_back(std::stod(row.at(j)));
  return out;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

LabeledDataset load_dataset_spec(const std::string& spec) {
  LabeledDataset ds = load_spec_inner(spec);
  ds.name = trim(spec);  // canonical id used in every CSV
  return ds;
}

void cmd_train(const Config& cfg) {
  cfg.check_known({"dataset", "out", "seed", "model.arch", "model.widths",
                   "model.channels", "model.k", "model.norm", "attack.eps",
                   "attack.steps", "attack.step_size", "train.mode", "train.epochs",
                   "train.batch", "train.lr", "train.momentum", "train.weight_decay",
                   "train.beta", "train.eval_cap"});
  LabeledDataset ds = load_dataset_spec(cfg.require_str("dataset"));
  uint64_t seed = cfg.get_u64("seed", 0);

  ModelConfig mc;
  mc.arch = arch_from_name(cfg.get_str("model.arch", "mlp"));
  mc.widths = cfg.get_int_list("model.widths", {64, 32});
  mc.channels = cfg.get_int_list("model.channels", {16, 32});
  mc.k = mc.arch == Arch::mlp ? mc.widths.back() : cfg.get_int("model.k", 64);
  mc.K = ds.K;
  mc.norm = cfg.get_bool("model.norm", false);
  mc.seed = child_seed(seed, "model-init");
  mc.in_c = static_cast<int>(ds.channels());
  mc.in_h = static_cast<int>(ds.height());
  mc.in_w = static_cast<int>(ds.width());
  mc.train_eps = cfg.get_double("attack.eps", 0.0);

  AttackSpec attack;
  attack.epsilon = mc.train_eps;
  attack.steps = cfg.get_int("attack.steps", 10);
  attack.step_size = cfg.get_double("attack.step_size", 0.0);

  TrainConfig tc;
  tc.mode = train_mode_from_name(cfg.get_str("train.mode", "standard"));
  tc.epochs = cfg.get_int("train.epochs", 10);
  tc.batch_size = cfg.get_int("train.batch", 64);
  tc.lr = cfg.get_double("train.lr", 0.05);
  tc.momentum = cfg.get_double("train.momentum", 0.9);
  tc.weight_decay = cfg.get_double("train.weight_decay", 0.0);
  tc.beta = cfg.get_double("train.beta", 6.0);
  tc.eval_cap = cfg.get_int("train.eval_cap", 512);
  tc.seed = seed;

  auto [trained, metrics] = train(Model::init(mc), ds, attack, tc);
  save_checkpoint(trained, out_path(cfg, "model.rlns"));

  CsvWriter csv(out_path(cfg, "train_metrics.csv"), "train-metrics", 1,
                {"epoch", "clean_acc", "robust_acc", "loss", "w_l2norm"});
  for (const auto& e : metrics.epochs) {
    csv.cell(e.epoch);
    csv.cell(e.clean_acc);
    csv.cell(e.robust_acc);
    csv.cell(e.loss);
    csv.cell(e.w_l2norm);
    csv.end_row();
  }
  const auto& last = metrics.epochs.back();
  std::cout << "trained " << arch_name(mc.arch) << " on " << ds.name << " ("
            << train_mode_name(tc.mode) << ", eps=" << attack.epsilon
            << "): clean_acc=" << last.clean_acc << " robust_acc=" << last.robust_acc
            << "\n";
}

void cmd_fisher(const Config& cfg) {
  cfg.check_known({"ckpt", "dataset", "decoder", "sigma_z", "samples", "wf_samples",
                   "ridge", "floor", "seed", "out"});
  auto sources = load_sources(cfg, "ckpt");
  LabeledDataset ds = load_dataset_spec(cfg.require_str("dataset"));

  DecoderModel decoder;
  decoder.kind = decoder_from_name(cfg.get_str("decoder", "gaussian-unit"));
  decoder.sigma_z = cfg.get_double("sigma_z", 1.0);
  Index samples = cfg.get_int("samples", 16);
  Index wf_samples = cfg.get_int("wf_samples", 200);
  double ridge = cfg.get_double("ridge", 1e-6);
  double floor_value = cfg.get_double("floor", 1e-12);
  uint64_t seed = cfg.get_u64("seed", 0);

  CsvWriter csv(out_path(cfg, "fisher.csv"), "fisher-report", 1,
                {"model", "eps_train", "decoder", "tr_F_zx", "lambda1",
                 "eff_info_term", "weight_logvar"});
  for (const auto& src : sources) {
    RowMatrix S = fisher_rep(src.model, ds, decoder, samples,
                             child_seed(seed, "fisher-rep"));
    auto [lambda1, v1] = top_eigpair(S);
    double eff = effective_info_term(src.model, ds, decoder, ridge, samples,
                                     child_seed(seed, "eff-info"));
    WeightFisherDiag wf = weight_fisher_diag(src.model, ds, wf_samples,
                                             child_seed(seed, "weight-fisher"));
    csv.cell(src.path);
    csv.cell(src.model.config().train_eps);
    csv.cell(decoder_name(decoder.kind));
    csv.cell(S.trace());
    csv.cell(lambda1);
    csv.cell(eff);
    csv.cell(weight_logvar(wf, floor_value));
    csv.end_row();
    std::cout << src.path << ": tr_F_zx=" << S.trace() << " lambda1=" << lambda1
              << "\n";
  }
}

void cmd_invert(const Config& cfg) {
  cfg.check_known({"ckpt", "dataset", "images", "mode", "iters", "lr", "init_sigma",
                   "beta", "lambda", "wf_samples", "seed", "out"});
  Model model = load_checkpoint(require_existing(cfg, "ckpt"));
  LabeledDataset ds = load_dataset_spec(cfg.require_str("dataset"));

  std::vector<InversionMode> modes;
  for (const auto& m : spec_list(cfg.get_str("mode", "deterministic")))
    modes.push_back(inversion_mode_from_name(m));

  int iters = cfg.get_int("iters", 500);
  double lr = cfg.get_double("lr", 0.1);
  double init_sigma = cfg.get_double("init_sigma", 0.1);
  double beta = cfg.get_double("beta", 0.0);
  double lambda = cfg.get_double("lambda", 1.0);
  uint64_t seed = cfg.get_u64("seed", 0);
  Index n_images = cfg.get_int("images", 4);
  if (n_images < 1 || n_images > ds.size())
    fail(ErrorCode::bad_config, "images must be in [1, dataset size]");

  bool any_noisy = std::any_of(modes.begin(), modes.end(), [](InversionMode m) {
    return m != InversionMode::deterministic;
  });
  std::optional<NoiseModel> noise;
  if (any_noisy) {
    if (beta <= 0.0)
      fail(ErrorCode::bad_config,
           "noise model required: set beta > 0 for the noisy inversion modes");
    WeightFisherDiag wf =
        weight_fisher_diag(model, ds, cfg.get_int("wf_samples", 100),
                           child_seed(seed, "weight-fisher"));
    noise = effective_noise(wf, beta, lambda);
  }

  std::vector<Tensor> images;
  for (Index i = 0; i < n_images; ++i) images.push_back(ds.image(i));

  std::vector<InversionConfig> cfgs;
  for (InversionMode m : modes) {
    InversionConfig ic;
    ic.iters = iters;
    ic.lr = lr;
    ic.init_sigma = init_sigma;
    ic.mode = m;
    ic.seed = seed;
    if (m != InversionMode::deterministic) ic.noise = noise;
    cfgs.push_back(ic);
  }
  auto curves = compare_modes(model, images, cfgs);

  std::vector<std::string> header = {"iter"};
  for (const auto& c : curves) header.push_back(inversion_mode_name(c.mode));
  CsvWriter csv(out_path(cfg, "inversion_loss.csv"), "inversion-loss", 1, header);
  for (int t = 0; t < iters; ++t) {
    csv.cell(t);
    for (const auto& c : curves) csv.cell(c.median_loss[static_cast<size_t>(t)]);
    csv.end_row();
  }

  Shape img_shape = {1, ds.channels(), ds.height(), ds.width()};
  for (const auto& c : cfgs) {
    for (Index i = 0; i < n_images; ++i) {
      InversionConfig ic = c;
      ic.seed = seed + static_cast<uint64_t>(i);
      InversionResult r;
      if (ic.mode == InversionMode::deterministic) {
        r = invert(model, model.forward_features(images[i]), ic);
      } else if (ic.mode == InversionMode::noise_once) {
        r = variational_invert(model, model.forward_features(images[i]), ic);
      } else {
        r = effective_image(model, images[i], ic);
      }
      std::string base = "recon_" + inversion_mode_name(ic.mode) + "_" +
                         std::to_string(i);
      write_image(out_path(cfg, base), r.x_hat.reshaped(img_shape));
    }
  }
  std::cout << "inverted " << n_images << " images over " << modes.size()
            << " mode(s), " << iters << " iterations each\n";
}

void cmd_transfer(const Config& cfg) {
  cfg.check_known({"source", "target", "source_dataset", "mode", "seeds",
                   "probe_eps", "attack.steps", "epochs", "batch", "lr",
                   "correlate", "out"});
  auto sources = load_sources(cfg, "source");
  auto target_specs = spec_list(cfg.require_str("target"));
  std::vector<LabeledDataset> targets;
  for (const auto& s : target_specs) targets.push_back(load_dataset_spec(s));
  LabeledDataset source_ds = load_dataset_spec(cfg.require_str("source_dataset"));

  std::vector<int> modes = cfg.get_int_list("mode", {0});
  std::vector<int> seeds = cfg.get_int_list("seeds", {0});
  double probe_eps = cfg.get_double("probe_eps", -1.0);
  int attack_steps = cfg.get_int("attack.steps", 10);
  bool correlate = cfg.get_bool("correlate", false);

  FinetuneConfig base_fc;
  base_fc.epochs = cfg.get_int("epochs", 3);
  base_fc.batch_size = cfg.get_int("batch", 64);
  base_fc.lr = cfg.get_double("lr", 0.05);

  // clean accuracies at the first mode, kept for the gap table
  std::map<std::tuple<size_t, size_t, int>, std::vector<double>> mode0_clean;

  CsvWriter csv(out_path(cfg, "transfer.csv"), "transfer-report", 1,
                {"source", "eps_train", "target", "mode", "seed", "clean_acc",
                 "robust_acc"});
  for (size_t si = 0; si < sources.size(); ++si) {
    const auto& src = sources[si];
    double eps = probe_eps >= 0.0 ? probe_eps : src.model.config().train_eps;
    std::optional<AttackSpec> attack;
    if (eps > 0.0) {
      AttackSpec a;
      a.epsilon = eps;
      a.steps = attack_steps;
      attack = a;
    }
    for (size_t ti = 0; ti < targets.size(); ++ti) {
      for (int mode : modes) {
        for (int sd : seeds) {
          FinetuneConfig fc = base_fc;
          fc.seed = static_cast<uint64_t>(sd);
          fc.head_seed = static_cast<uint64_t>(sd);
          auto out = finetune(src.model, targets[ti], mode, attack, fc, src.path,
                              target_specs[ti]);
          csv.cell(src.path);
          csv.cell(src.model.config().train_eps);
          csv.cell(target_specs[ti]);
          csv.cell(mode);
          csv.cell(static_cast<long long>(sd));
          csv.cell(out.report.test_acc);
          csv.cell(out.report.robust_test_acc);
          csv.end_row();
          if (mode == modes.front())
            mode0_clean[{si, ti, mode}].push_back(out.report.test_acc);
        }
      }
    }
  }

  // distances from the source task, in the standard source's feature space
  size_t ref = 0;
  for (size_t si = 0; si < sources.size(); ++si)
    if (sources[si].model.config().train_eps == 0.0) {
      ref = si;
      break;
    }
  std::vector<double> distances;
  {
    CsvWriter emd(out_path(cfg, "emd.csv"), "emd", 1,
                  {"dsA", "dsB", "distance", "residual"});
    for (size_t ti = 0; ti < targets.size(); ++ti) {
      EmdResult r = dataset_emd(source_ds, targets[ti], sources[ref].model);
      distances.push_back(r.distance);
      emd.cell(source_ds.name);
      emd.cell(target_specs[ti]);
      emd.cell(r.distance);
      emd.cell(r.residual);
      emd.end_row();
    }
  }

  if (correlate) {
    if (targets.size() < 3)
      fail(ErrorCode::bad_config,
           "correlate needs at least 3 targets, got " +
               std::to_string(targets.size()));
    std::optional<size_t> std_i, rob_i;
    for (size_t si = 0; si < sources.size(); ++si) {
      if (sources[si].model.config().train_eps == 0.0) {
        if (!std_i) std_i = si;
      } else if (!rob_i) {
        rob_i = si;
      }
    }
    if (!std_i || !rob_i)
      fail(ErrorCode::bad_config,
           "correlate needs one standard (eps_train=0) and one robust source");
    std::vector<GapRow> rows;
    for (size_t ti = 0; ti < targets.size(); ++ti) {
      GapRow row;
      row.target_id = target_specs[ti];
      row.distance = distances[ti];
      row.gap = median_of(mode0_clean[{*rob_i, ti, modes.front()}]) -
                median_of(mode0_clean[{*std_i, ti, modes.front()}]);
      rows.push_back(row);
    }
    GapTable table = gap_vs_distance(std::move(rows));
    CsvWriter gap(out_path(cfg, "gap.csv"), "gap-vs-distance", 1,
                  {"target", "distance", "gap"});
    for (const auto& row : table.rows) {
      gap.cell(row.target_id);
      gap.cell(row.distance);
      gap.cell(row.gap);
      gap.end_row();
    }
    gap.comment("spearman: " + format_double(table.spearman));
    std::cout << "spearman(gap, distance) = " << table.spearman << "\n";
  }
  std::cout << "transfer grid: " << sources.size() << " source(s) x "
            << targets.size() << " target(s) x " << modes.size() << " mode(s) x "
            << seeds.size() << " seed(s)\n";
}

void cmd_report(const Config& cfg) {
  cfg.check_known({"run", "out"});
  std::string run = cfg.require_str("run");
  Config out_cfg = cfg;
  if (!cfg.has("out")) out_cfg.set("out", run);

  static const char* known[] = {"train_metrics.csv", "fisher.csv",
                                "inversion_loss.csv", "transfer.csv", "emd.csv",
                                "gap.csv"};
  std::vector<std::pair<std::string, CsvTable>> found;
  for (const char* f : known) {
    auto t = read_csv((fs::path(run) / f).string());
    if (t) found.emplace_back(f, std::move(*t));
  }
  if (found.empty()) {
    std::string msg = "no experiment output found in '" + run +
                      "'; expected at least one of:";
    for (const char* f : known) msg += std::string("\n  - ") + f;
    fail(ErrorCode::bad_config, msg);
  }

  std::ofstream summary(out_path(out_cfg, "summary.txt"));
  if (!summary) fail(ErrorCode::io, "cannot write summary.txt");
  for (const auto& [name, table] : found) {
    summary << name << ": " << table.rows.size() << " rows\n";
    std::cout << name << ": " << table.rows.size() << " rows\n";
  }

  for (const auto& [name, table] : found) {
    if (name == "train_metrics.csv") {
      write_svg_lines(out_path(out_cfg, "train_curves.svg"), "training accuracy",
                      {{"clean_acc", column(table, "clean_acc")},
                       {"robust_acc", column(table, "robust_acc")}});
    } else if (name == "inversion_loss.csv") {
      std::vector<std::pair<std::string, std::vector<double>>> series;
      for (const auto& col : table.header)
        if (col != "iter") series.emplace_back(col, column(table, col));
      write_svg_lines(out_path(out_cfg, "inversion_curves.svg"),
                      "inversion loss (median over images)", series);
    } else if (name == "gap.csv") {
      write_svg_lines(out_path(out_cfg, "gap_plot.svg"),
                      "transfer gap by target distance rank",
                      {{"gap", column(table, "gap")},
                       {"distance", column(table, "distance")}});
    }
  }
}

int run_command(const std::string& command, const Config& cfg) {
  try {
    if (command == "train")
      cmd_train(cfg);
    else if (command == "fisher")
      cmd_fisher(cfg);
    else if (command == "invert")
      cmd_invert(cfg);
    else if (command == "transfer")
      cmd_transfer(cfg);
    else if (command == "report")
      cmd_report(cfg);
    else
      fail(ErrorCode::bad_config, "unknown command '" + command + "'");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::bad_config ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace robustlens
