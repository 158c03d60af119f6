// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ebmforge/config.hpp"

namespace ebmforge::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

// The full verification suite, one result per acceptance check. Training
// artifacts land under work_dir. Results print as they complete.
std::vector<CheckResult> run_acceptance(const std::filesystem::path& work_dir);

bool all_passed(const std::vector<CheckResult>& results);

// Pinned training configurations for the long-running checks; also exposed
// so the CLI and the committed config files stay in sync.
config::TrainConfig stability_full_config();
config::TrainConfig stability_ablation_config();
config::TrainConfig compose_config(bool second_axis);

}  // namespace ebmforge::verify
