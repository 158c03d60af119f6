// SPDX-License-Identifier: Apache-2.0
#include "ebmforge/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

namespace ebmforge::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

sampler::Box tight_box(const ad::Tensor& samples, std::size_t d) {
  sampler::Box box;
  box.lo.assign(d, std::numeric_limits<double>::infinity());
  box.hi.assign(d, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t j = i % d;
    box.lo[j] = std::min(box.lo[j], samples.values[i]);
    box.hi[j] = std::max(box.hi[j], samples.values[i]);
  }
  return box;
}

Dataset finish_vector(ad::Tensor samples, std::vector<int> labels) {
  Dataset ds;
  ds.input = model::InputSpec::vec(samples.shape[1]);
  ds.bbox = tight_box(samples, samples.shape[1]);
  ds.samples = std::move(samples);
  ds.labels = std::move(labels);
  return ds;
}

}  // namespace

std::vector<std::vector<double>> eight_gaussian_centers() {
  std::vector<std::vector<double>> centers;
  for (int k = 0; k < 8; ++k) {
    const double a = kPi / 4.0 * k;
    centers.push_back({2.0 * std::cos(a), 2.0 * std::sin(a)});
  }
  return centers;
}

Dataset make_mixture(const std::string& name, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("make_mixture: n must be >= 1");
  Rng rng(Rng::mix(seed, 0x6d1f));
  ad::Tensor samples = ad::Tensor::zeros({n, 2});
  std::vector<int> labels(n, 0);

  if (name == "eight-gaussians") {
    const auto centers = eight_gaussian_centers();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = rng.index(8);
      labels[i] = static_cast<int>(k);
      samples.values[2 * i] = centers[k][0] + 0.1 * rng.normal();
      samples.values[2 * i + 1] = centers[k][1] + 0.1 * rng.normal();
    }
  } else if (name == "two-rings") {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ring = rng.index(2);
      labels[i] = static_cast<int>(ring);
      const double r = (ring == 0 ? 1.0 : 2.0) + 0.05 * rng.normal();
      const double a = rng.uniform(0.0, 2.0 * kPi);
      samples.values[2 * i] = r * std::cos(a);
      samples.values[2 * i + 1] = r * std::sin(a);
    }
  } else if (name == "checkerboard") {
    // 4x4 cell board over [-2,2]^2, density on the dark cells
    for (std::size_t i = 0; i < n; ++i) {
      double x, y;
      int cx, cy;
      do {
        x = rng.uniform(-2.0, 2.0);
        y = rng.uniform(-2.0, 2.0);
        cx = static_cast<int>(std::floor(x + 2.0));
        cy = static_cast<int>(std::floor(y + 2.0));
      } while ((cx + cy) % 2 != 0);
      samples.values[2 * i] = x;
      samples.values[2 * i + 1] = y;
      labels[i] = cx + 4 * cy;
    }
  } else if (name == "pinwheel") {
    const int arms = 5;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t arm = rng.index(arms);
      labels[i] = static_cast<int>(arm);
      const double radial = std::abs(0.3 * rng.normal()) + 0.3;
      const double tangent = 0.08 * rng.normal();
      const double base = 2.0 * kPi * static_cast<double>(arm) / arms;
      const double a = base + 2.0 * radial + tangent;  // swirl grows with radius
      const double r = 2.0 * radial;
      samples.values[2 * i] = r * std::cos(a);
      samples.values[2 * i + 1] = r * std::sin(a);
    }
  } else {
    throw std::invalid_argument("make_mixture: unknown dataset \"" + name + "\"");
  }
  return finish_vector(std::move(samples), std::move(labels));
}

Dataset make_shapes(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("make_shapes: n must be >= 1");
  if (size % 4 != 0) {
    throw std::invalid_argument("make_shapes: size must be divisible by 4, got " +
                                std::to_string(size));
  }
  Rng rng(Rng::mix(seed, 0x5a9e));
  ad::Tensor samples = ad::Tensor::zeros({n, size, size});
  std::vector<int> labels(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double* g = samples.values.data() + i * size * size;
    for (std::size_t p = 0; p < size * size; ++p) g[p] = -1.0;  // background 0 -> mapped to -1
    const bool is_square = rng.bernoulli(0.5);
    const double intensity = rng.uniform(0.5, 1.0);
    const double mapped = intensity * 2.0 - 1.0;
    std::size_t sh, sw;
    if (is_square) {
      sh = sw = 2 + rng.index(size / 2 - 1);
    } else if (rng.bernoulli(0.5)) {
      sh = 1;
      sw = 3 + rng.index(size - 3);
    } else {
      sw = 1;
      sh = 3 + rng.index(size - 3);
    }
    const std::size_t r0 = rng.index(size - sh + 1);
    const std::size_t c0 = rng.index(size - sw + 1);
    for (std::size_t r = r0; r < r0 + sh; ++r) {
      for (std::size_t c = c0; c < c0 + sw; ++c) g[r * size + c] = mapped;
    }
    const double centroid_col = static_cast<double>(c0) + (static_cast<double>(sw) - 1.0) / 2.0;
    const int side = centroid_col < static_cast<double>(size) / 2.0 ? 0 : 1;  // 0: left half
    labels[i] = (is_square ? 2 : 0) + side;
  }
  Dataset ds;
  ds.input = model::InputSpec::grid(size, size);
  ds.bbox = sampler::Box::cube(size * size, -1.0, 1.0);
  ds.samples = std::move(samples);
  ds.labels = std::move(labels);
  return ds;
}

Dataset load_idx(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) {
    throw std::runtime_error("idx: file not found: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("idx: cannot open: " + path.string());
  auto read_u32be = [&](const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error(std::string("idx: truncated while reading ") + what);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
  };
  const std::uint32_t magic = read_u32be("magic");
  if (magic != 0x00000803u) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "0x%08x", magic);
    throw std::runtime_error(std::string("idx: bad magic ") + buf + " (expected 0x00000803)");
  }
  const std::uint32_t count = read_u32be("image count");
  const std::uint32_t rows = read_u32be("rows");
  const std::uint32_t cols = read_u32be("cols");
  std::vector<unsigned char> pixels(static_cast<std::size_t>(count) * rows * cols);
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!in) {
    throw std::runtime_error("idx: truncated payload (" + std::to_string(in.gcount()) + " of " +
                             std::to_string(pixels.size()) + " bytes)");
  }
  const std::size_t ch = rows - rows % 4;  // center crop to 4-divisible extents
  const std::size_t cw = cols - cols % 4;
  if (ch == 0 || cw == 0) throw std::runtime_error("idx: images too small after 4-crop");
  const std::size_t r_off = (rows - ch) / 2;
  const std::size_t c_off = (cols - cw) / 2;
  ad::Tensor samples = ad::Tensor::zeros({count, ch, cw});
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* src = pixels.data() + i * rows * cols;
    double* dst = samples.values.data() + i * ch * cw;
    for (std::size_t r = 0; r < ch; ++r) {
      for (std::size_t c = 0; c < cw; ++c) {
        dst[r * cw + c] = static_cast<double>(src[(r + r_off) * cols + (c + c_off)]) / 255.0 * 2.0 - 1.0;
      }
    }
  }
  Dataset ds;
  ds.input = model::InputSpec::grid(ch, cw);
  ds.bbox = sampler::Box::cube(ch * cw, -1.0, 1.0);
  ds.samples = std::move(samples);
  return ds;
}

ad::Tensor minibatch(const Dataset& ds, std::size_t batch, Rng& rng) {
  if (ds.size() == 0) throw std::invalid_argument("minibatch: empty dataset");
  const std::size_t d = ds.samples.size() / ds.size();
  ad::Shape shape = ds.samples.shape;
  shape[0] = batch;
  ad::Tensor out = ad::Tensor::zeros(shape);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t i = rng.index(ds.size());
    std::copy(ds.samples.values.begin() + static_cast<std::ptrdiff_t>(i * d),
              ds.samples.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * d),
              out.values.begin() + static_cast<std::ptrdiff_t>(b * d));
  }
  return out;
}

Dataset filter(const Dataset& ds, const std::function<bool(std::span<const double>)>& keep) {
  const std::size_t d = ds.size() ? ds.samples.size() / ds.size() : 0;
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::span<const double> row(ds.samples.values.data() + i * d, d);
    if (keep(row)) kept.push_back(i);
  }
  if (kept.empty()) throw std::invalid_argument("filter: predicate keeps no samples");
  ad::Shape shape = ds.samples.shape;
  shape[0] = kept.size();
  ad::Tensor samples = ad::Tensor::zeros(shape);
  std::vector<int> labels;
  for (std::size_t j = 0; j < kept.size(); ++j) {
    std::copy(ds.samples.values.begin() + static_cast<std::ptrdiff_t>(kept[j] * d),
              ds.samples.values.begin() + static_cast<std::ptrdiff_t>((kept[j] + 1) * d),
              samples.values.begin() + static_cast<std::ptrdiff_t>(j * d));
    if (!ds.labels.empty()) labels.push_back(ds.labels[kept[j]]);
  }
  Dataset out;
  out.input = ds.input;
  out.bbox = tight_box(samples, d);
  out.samples = std::move(samples);
  out.labels = std::move(labels);
  return out;
}

Dataset shifted(const Dataset& ds, std::span<const double> offset) {
  const std::size_t d = ds.size() ? ds.samples.size() / ds.size() : 0;
  if (offset.size() != d) throw std::invalid_argument("shifted: offset dim mismatch");
  Dataset out = ds;
  for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples.values[i] += offset[i % d];
  out.bbox = tight_box(out.samples, d);
  return out;
}

sampler::Box sampling_box(const Dataset& ds) {
  if (ds.input.kind == model::InputKind::grid) {
    return sampler::Box::cube(ds.input.flat_dim(), -1.0, 1.0);
  }
  return ds.bbox.expanded(0.2);
}

}  // namespace ebmforge::data
