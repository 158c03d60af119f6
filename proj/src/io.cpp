// SPDX-License-Identifier: Apache-2.0
#include "ebmforge/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace ebmforge::io {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void dump_csv(const std::filesystem::path& path, const ad::Tensor& samples) {
  if (samples.rank() != 2) throw std::invalid_argument("dump_csv: expected [n,d] samples");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  const std::size_t n = samples.shape[0], d = samples.shape[1];
  for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << "dim" << j;
  out << "\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out << (j ? "," : "") << fmt(samples.values[i * d + j]);
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void dump_pgm(const std::filesystem::path& path, const ad::Tensor& grid, const sampler::Box& box) {
  if (grid.rank() != 2) throw std::invalid_argument("dump_pgm: expected [h,w] grid");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  const std::size_t h = grid.shape[0], w = grid.shape[1];
  out << "P5\n" << w << " " << h << "\n255\n";
  for (std::size_t i = 0; i < h * w; ++i) {
    const double lo = box.lo[i % box.dims()];
    const double hi = box.hi[i % box.dims()];
    const double t = hi > lo ? (grid.values[i] - lo) / (hi - lo) : 0.0;
    const int byte = static_cast<int>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(byte));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void dump_pgm_batch(const std::filesystem::path& dir, const std::string& stem,
                    const ad::Tensor& grids, const sampler::Box& box) {
  if (grids.rank() != 3) throw std::invalid_argument("dump_pgm_batch: expected [n,h,w]");
  const std::size_t n = grids.shape[0], h = grids.shape[1], w = grids.shape[2];
  for (std::size_t i = 0; i < n; ++i) {
    ad::Tensor one({h, w},
                   {grids.values.begin() + static_cast<std::ptrdiff_t>(i * h * w),
                    grids.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * h * w)});
    char suffix[16];
    std::snprintf(suffix, sizeof(suffix), "%04zu", i);
    dump_pgm(dir / (stem + "_" + suffix + ".pgm"), one, box);
  }
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot write metrics: " + path.string());
  out_ << kMetricsHeader << "\n";
}

void MetricsWriter::write(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu,%.6f", r.iter, r.loss_cd,
                r.loss_kl_opt, r.loss_kl_ent, r.energy_pos, r.energy_neg, r.energy_diff, r.grad_cd,
                r.grad_kl, r.buffer_fill, r.wall_s);
  out_ << buf << "\n";
}

void MetricsWriter::comment(const std::string& text) { out_ << "# " << text << "\n"; }

void MetricsWriter::flush() { out_.flush(); }

}  // namespace ebmforge::io
