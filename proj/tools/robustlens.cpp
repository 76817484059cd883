#include <array>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "robustlens/config.hpp"
#include "robustlens/pipeline.hpp"

namespace {

// Flags common to every analysis subcommand: a config file plus repeatable
// key=value overrides; a handful of frequent keys also get dedicated flags.
struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("-c,--config", args->config_path, "flat key=value config file");
  cmd->add_option("--set", args->sets, "override a config key (key=value)")
      ->take_all();
}

void add_alias(CLI::App* cmd, CommonArgs* args, const std::string& flag,
               const std::string& key, const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [args, key](const std::string& v) { args->sets.push_back(key + "=" + v); },
      help);
}

robustlens::Config build_config(const CommonArgs& args) {
  robustlens::Config cfg;
  if (!args.config_path.empty())
    cfg = robustlens::Config::parse_file(args.config_path);
  for (const auto& kv : args.sets) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos)
      robustlens::fail(robustlens::ErrorCode::bad_config,
                       "--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robustlens: robustness, information geometry and transfer tools"};
  app.require_subcommand(1);

  std::map<std::string, CommonArgs> args;
  struct SubDef {
    const char* name;
    const char* help;
    std::vector<std::array<const char*, 3>> aliases;  // flag, key, help
  };
  const std::vector<SubDef> subs = {
      {"train",
       "train a model and write a checkpoint plus per-epoch metrics",
       {{"--dataset", "dataset", "dataset spec, e.g. shapes4?n=2000&seed=7"},
        {"--mode", "train.mode", "standard | at | trades"},
        {"--eps", "attack.eps", "l2 attack radius used in training"},
        {"--epochs", "train.epochs", "training epochs"},
        {"--seed", "seed", "experiment seed"},
        {"--out", "out", "output directory"}}},
      {"fisher",
       "Fisher information report for one or more checkpoints",
       {{"--ckpt", "ckpt", "checkpoint path(s), ';' separated"},
        {"--dataset", "dataset", "dataset spec"},
        {"--decoder", "decoder", "gaussian-unit | categorical"},
        {"--samples", "samples", "inputs sampled for the representation Fisher"},
        {"--seed", "seed", "experiment seed"},
        {"--out", "out", "output directory"}}},
      {"invert",
       "representation inversion with optional weight noise",
       {{"--ckpt", "ckpt", "checkpoint path"},
        {"--dataset", "dataset", "dataset spec providing the targets"},
        {"--mode", "mode", "deterministic | noise-once | noise-each-step (';' list)"},
        {"--iters", "iters", "gradient descent iterations"},
        {"--beta", "beta", "noise scale; required for the noisy modes"},
        {"--lambda", "lambda", "prior width for the effective noise"},
        {"--seed", "seed", "experiment seed"},
        {"--out", "out", "output directory"}}},
      {"transfer",
       "fine-tuning grid over sources, targets, modes and seeds",
       {{"--source", "source", "source checkpoint path(s), ';' separated"},
        {"--target", "target", "target dataset spec(s), ';' separated"},
        {"--source-dataset", "source_dataset", "source dataset spec (for EMD)"},
        {"--mode", "mode", "fine-tuning modes, e.g. 0,1,2"},
        {"--seeds", "seeds", "comma list of seeds"},
        {"--out", "out", "output directory"}}},
      {"report",
       "summarize a run directory and render SVG plots",
       {{"--run", "run", "run directory holding the CSV outputs"},
        {"--out", "out", "output directory (defaults to the run directory)"}}},
  };
  std::vector<std::pair<std::string, CLI::App*>> cmds;
  for (const auto& def : subs) {
    CLI::App* cmd = app.add_subcommand(def.name, def.help);
    CommonArgs& a = args[def.name];
    add_common(cmd, &a);
    for (const auto& [flag, key, help] : def.aliases) add_alias(cmd, &a, flag, key, help);
    cmds.emplace_back(def.name, cmd);
  }
  app.get_subcommand("transfer")
      ->add_flag_function(
          "--correlate",
          [&args](int64_t) { args["transfer"].sets.push_back("correlate=true"); },
          "rank-correlate transfer gap against dataset distance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  for (const auto& [name, cmd] : cmds) {
    if (cmd->parsed()) {
      try {
        return robustlens::run_command(name, build_config(args[name]));
      } catch (const robustlens::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == robustlens::ErrorCode::bad_config ? 1 : 2;
      }
    }
  }
  return 1;
}
