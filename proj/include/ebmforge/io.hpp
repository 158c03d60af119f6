// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "ebmforge/sampler.hpp"
#include "ebmforge/tensor.hpp"

namespace ebmforge::io {

// vector samples as CSV, header "dim0,dim1,..."
void dump_csv(const std::filesystem::path& path, const ad::Tensor& samples);

// grid samples as binary PGM (P5, maxval 255), values mapped linearly from
// the data box; one file per sample with a numeric suffix.
void dump_pgm(const std::filesystem::path& path, const ad::Tensor& grid, const sampler::Box& box);
void dump_pgm_batch(const std::filesystem::path& dir, const std::string& stem,
                    const ad::Tensor& grids, const sampler::Box& box);

inline constexpr const char* kMetricsHeader =
    "iter,loss_cd,loss_kl_opt,loss_kl_ent,energy_pos,energy_neg,energy_diff,grad_cd,grad_kl,"
    "buffer_fill,wall_s";

struct MetricsRow {
  std::size_t iter = 0;
  double loss_cd = 0.0, loss_kl_opt = 0.0, loss_kl_ent = 0.0;
  double energy_pos = 0.0, energy_neg = 0.0, energy_diff = 0.0;
  double grad_cd = 0.0, grad_kl = 0.0;
  std::size_t buffer_fill = 0;
  double wall_s = 0.0;
};

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void write(const MetricsRow& row);
  void comment(const std::string& text);  // "# ..." trailer line
  void flush();

 private:
  std::ofstream out_;
};

}  // namespace ebmforge::io
