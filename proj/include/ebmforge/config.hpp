// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ebmforge::config {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct KeyValue {
  std::string key, value;
  int line = 0;  // 0 for overrides
};

// "key = value" lines, '#' comments, blank lines ignored.
std::vector<KeyValue> parse_file(const std::filesystem::path& path);
KeyValue parse_override(const std::string& assignment);  // "key=value"

// Full hyperparameter record for a training run. Defaults follow the
// reference configuration (replay buffer 10000 at 99% reuse, Adam 0.9/0.999,
// EMA 0.9999); everything is overridable from config files and the CLI.
struct TrainConfig {
  std::string dataset = "eight-gaussians";
  std::size_t data_n = 10000;
  std::string data_filter = "none";  // none | x0pos | x1pos
  std::size_t batch_size = 64;
  std::size_t iterations = 1000;

  std::string model_kind = "auto";  // auto | mlp | multiscale | conditional
  std::vector<std::size_t> hidden = {64, 64};
  std::vector<std::size_t> scales = {1, 2, 4};
  std::size_t condition_dim = 2;
  std::size_t condition = 1;

  std::size_t langevin_steps = 20;
  double langevin_step_size = 0.1;
  double langevin_noise_sigma = 0.005;

  double aug_perturb_p = 0.0;
  double aug_perturb_sigma = 0.1;
  double aug_reflect_p = 0.0;
  std::vector<std::size_t> aug_reflect_axes = {0, 1};
  double aug_flip_p = 0.0;
  double aug_rescale_p = 0.0;
  double aug_rescale_lo = 0.5, aug_rescale_hi = 1.0;
  double aug_blur_p = 0.0;
  double aug_blur_sigma_lo = 0.3, aug_blur_sigma_hi = 1.2;
  double aug_brightness_p = 0.0;
  double aug_brightness_lo = -0.2, aug_brightness_hi = 0.2;

  std::size_t buffer_capacity = 10000;
  double buffer_reuse_probability = 0.99;
  std::string chain_init = "buffer";  // buffer | noise

  double weight_opt = 1.0;
  double weight_ent = 1.0;

  double lr = 1e-4;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  double ema_decay = 0.9999;

  std::uint64_t seed = 0;
  double divergence_threshold = 10.0;
  std::size_t divergence_window = 50;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  bool metrics_wallclock = false;    // true trades bitwise-reproducible CSVs for timings

  std::string checkpoint_name = "model.ckpt";
  std::string metrics_name = "metrics.csv";

  void set(const KeyValue& kv);  // throws ConfigError on unknown key / bad value
  void validate() const;
  std::vector<KeyValue> to_key_values() const;  // canonical order, resolved values
};

TrainConfig load_train_config(const std::optional<std::filesystem::path>& file,
                              const std::vector<std::string>& overrides);

void write_effective_config(const std::filesystem::path& path, const TrainConfig& cfg);

}  // namespace ebmforge::config
