// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>

#include "ebmforge/config.hpp"
#include "ebmforge/data.hpp"
#include "ebmforge/model.hpp"
#include "ebmforge/objective.hpp"

namespace ebmforge::trainer {

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;

  void init(std::span<const ad::Tensor* const> params);
};

// Bias-corrected Adam. Returns false (and applies nothing) on a non-finite
// gradient: the caller's divergence signal.
bool adam_step(AdamState& state, std::span<ad::Tensor* const> params,
               std::span<const ad::Tensor> grads, double lr, double beta1, double beta2,
               double eps);

void ema_update(std::span<ad::Tensor* const> ema, std::span<const ad::Tensor* const> params,
                double decay);

// True iff |energy_diff| > threshold for `window` consecutive trailing rows.
bool detect_divergence(std::span<const double> energy_diff_history, double threshold,
                       std::size_t window);

struct TrainResult {
  bool diverged = false;
  std::size_t iterations_run = 0;
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
  model::AnyModel model;
  model::AnyModel ema;
};

// The outer training loop: positives, negatives through the sampler, the
// full loss, Adam, EMA, buffer update, one metrics row per iteration.
// Divergence stops the run and is flagged in the metrics trailer and result.
TrainResult train(const config::TrainConfig& cfg, const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_from = std::nullopt);

// Model construction as train() would do it (shape comes from the dataset).
model::AnyModel build_model(const config::TrainConfig& cfg, const model::InputSpec& input);
data::Dataset build_dataset(const config::TrainConfig& cfg);

// Load live or EMA ("ema." prefixed) parameters from a checkpoint into a
// freshly built model.
model::AnyModel load_model(const config::TrainConfig& cfg,
                           const std::filesystem::path& checkpoint, bool use_ema);

}  // namespace ebmforge::trainer
