#pragma once

#include <string>

#include "robustlens/config.hpp"
#include "robustlens/dataset.hpp"

namespace robustlens {

/// Resolve a dataset spec string. Bases: `shapes4?n=..&seed=..`,
/// `shapes2?..`, `idx(images,labels)`, `cifar(file)`. Wrappers:
/// `invert(SPEC)`, `rotate(SPEC)`, `permute(SPEC,seed)`, `remap(SPEC,seed)`,
/// `drop(SPEC)`. Relative file paths resolve under $ROBUSTLENS_DATA.
LabeledDataset load_dataset_spec(const std::string& spec);

void cmd_train(const Config& cfg);
void cmd_fisher(const Config& cfg);
void cmd_invert(const Config& cfg);
void cmd_transfer(const Config& cfg);
void cmd_report(const Config& cfg);

/// 0 on success, 1 on configuration errors, 2 on runtime/numeric errors.
int run_command(const std::string& command, const Config& cfg);

}  // namespace robustlens
