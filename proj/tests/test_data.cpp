// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "ebmforge/data.hpp"

using namespace ebmforge;
using ad::Tensor;

namespace {

void write_u32be(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("eight-gaussians construction") {
  const auto centers = data::eight_gaussian_centers();
  REQUIRE(centers.size() == 8);
  CHECK(centers[0][0] == doctest::Approx(2.0));
  CHECK(centers[0][1] == doctest::Approx(0.0));
  const double s = std::sqrt(2.0);
  CHECK(centers[1][0] == doctest::Approx(s));
  CHECK(centers[1][1] == doctest::Approx(s));
  CHECK(centers[2][0] == doctest::Approx(0.0));
  CHECK(centers[2][1] == doctest::Approx(2.0));

  const data::Dataset ds = data::make_mixture("eight-gaussians", 2000, 1);
  CHECK(ds.size() == 2000);
  REQUIRE(ds.labels.size() == 2000);
  // every sample sits close to its labeled component center
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& c = centers[static_cast<std::size_t>(ds.labels[i])];
    const double dx = ds.samples.values[2 * i] - c[0];
    const double dy = ds.samples.values[2 * i + 1] - c[1];
    CHECK(std::sqrt(dx * dx + dy * dy) < 0.8);
  }
}

TEST_CASE("mixture determinism and validation") {
  const data::Dataset a = data::make_mixture("two-rings", 500, 9);
  const data::Dataset b = data::make_mixture("two-rings", 500, 9);
  CHECK(a.samples.values == b.samples.values);
  CHECK(a.labels == b.labels);

  CHECK_THROWS_AS(data::make_mixture("eight-gaussians", 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(data::make_mixture("no-such-density", 10, 1), std::invalid_argument);

  for (const char* name : {"checkerboard", "pinwheel"}) {
    const data::Dataset ds = data::make_mixture(name, 300, 4);
    CHECK(ds.size() == 300);
  }
}

TEST_CASE("two-rings radii match the construction") {
  const data::Dataset ds = data::make_mixture("two-rings", 2000, 17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double r = std::hypot(ds.samples.values[2 * i], ds.samples.values[2 * i + 1]);
    const double target = ds.labels[i] == 0 ? 1.0 : 2.0;
    CHECK(std::abs(r - target) < 0.4);  // 8 sigma of the radial noise
  }
}

TEST_CASE("bounding box contains every sample") {
  const data::Dataset ds = data::make_mixture("eight-gaussians", 400, 3);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const std::size_t j = i % 2;
    CHECK(ds.samples.values[i] >= ds.bbox.lo[j]);
    CHECK(ds.samples.values[i] <= ds.bbox.hi[j]);
  }
  const sampler::Box sbox = data::sampling_box(ds);
  CHECK(sbox.hi[0] - sbox.lo[0] == doctest::Approx(1.2 * (ds.bbox.hi[0] - ds.bbox.lo[0])));
}

TEST_CASE("shape grids: divisibility, one shape, range, attributes") {
  CHECK_THROWS_AS(data::make_shapes(10, 6, 1), std::invalid_argument);

  const data::Dataset ds = data::make_shapes(50, 8, 2);
  CHECK(ds.input.height == 8);
  REQUIRE(ds.labels.size() == 50);
  for (std::size_t i = 0; i < 50; ++i) {
    const double* g = ds.samples.values.data() + i * 64;
    double sum_col = 0.0, mass = 0.0;
    bool any_fg = false;
    for (std::size_t r = 0; r < 8; ++r) {
      for (std::size_t c = 0; c < 8; ++c) {
        const double v = g[r * 8 + c];
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
        if (v > -1.0) {
          any_fg = true;
          sum_col += static_cast<double>(c);
          mass += 1.0;
        }
      }
    }
    CHECK(any_fg);  // exactly one shape, never all-background
    const double centroid_col = sum_col / mass;
    const int side = ds.labels[i] & 1;
    if (side == 0) {
      CHECK(centroid_col < 4.0);
    } else {
      CHECK(centroid_col >= 4.0);
    }
  }

  const data::Dataset again = data::make_shapes(50, 8, 2);
  CHECK(again.samples.values == ds.samples.values);
}

TEST_CASE("filter and shifted") {
  const data::Dataset ds = data::make_mixture("eight-gaussians", 1000, 5);
  const data::Dataset right =
      data::filter(ds, [](std::span<const double> x) { return x[0] > 0.0; });
  CHECK(right.size() > 0);
  for (std::size_t i = 0; i < right.size(); ++i) CHECK(right.samples.values[2 * i] > 0.0);

  const std::vector<double> offset = {3.0, -1.0};
  const data::Dataset moved = data::shifted(ds, offset);
  CHECK(moved.samples.values[0] == ds.samples.values[0] + 3.0);
  CHECK(moved.samples.values[1] == ds.samples.values[1] - 1.0);
}

TEST_CASE("idx loader: errors are distinct and loading works") {
  const auto missing = temp_file("ebmforge_missing.idx");
  std::filesystem::remove(missing);
  CHECK_THROWS_WITH_AS(data::load_idx(missing), doctest::Contains("not found"),
                       std::runtime_error);

  const auto badmagic = temp_file("ebmforge_badmagic.idx");
  {
    std::ofstream out(badmagic, std::ios::binary);
    write_u32be(out, 0x00000801u);
    write_u32be(out, 1);
  }
  CHECK_THROWS_WITH_AS(data::load_idx(badmagic), doctest::Contains("0x00000801"),
                       std::runtime_error);

  const auto truncated = temp_file("ebmforge_trunc.idx");
  {
    std::ofstream out(truncated, std::ios::binary);
    write_u32be(out, 0x00000803u);
    write_u32be(out, 2);
    write_u32be(out, 4);
    write_u32be(out, 4);
    const char few[5] = {0, 1, 2, 3, 4};  // far fewer than 32 pixels
    out.write(few, sizeof(few));
  }
  CHECK_THROWS_WITH_AS(data::load_idx(truncated), doctest::Contains("truncated"),
                       std::runtime_error);

  const auto good = temp_file("ebmforge_good.idx");
  {
    std::ofstream out(good, std::ios::binary);
    write_u32be(out, 0x00000803u);
    write_u32be(out, 2);
    write_u32be(out, 4);
    write_u32be(out, 4);
    for (int i = 0; i < 32; ++i) out.put(static_cast<char>(i * 8));
  }
  const data::Dataset ds = data::load_idx(good);
  CHECK(ds.size() == 2);
  CHECK(ds.input.height == 4);  // 4 is already divisible by 4: no crop
  CHECK(ds.samples.values[0] == doctest::Approx(-1.0));
  for (double v : ds.samples.values) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }

  // 6x6 center-crops to 4x4
  const auto crop = temp_file("ebmforge_crop.idx");
  {
    std::ofstream out(crop, std::ios::binary);
    write_u32be(out, 0x00000803u);
    write_u32be(out, 1);
    write_u32be(out, 6);
    write_u32be(out, 6);
    for (int i = 0; i < 36; ++i) out.put(static_cast<char>(i));
  }
  const data::Dataset cropped = data::load_idx(crop);
  CHECK(cropped.input.height == 4);
  CHECK(cropped.input.width == 4);

  for (const auto& p : {missing, badmagic, truncated, good, crop}) std::filesystem::remove(p);
}

TEST_CASE("minibatch draws rows verbatim") {
  const data::Dataset ds = data::make_mixture("eight-gaussians", 100, 6);
  Rng rng(7);
  const Tensor mb = data::minibatch(ds, 10, rng);
  CHECK(mb.shape == ad::Shape{10, 2});
  // every drawn row exists in the dataset
  for (std::size_t b = 0; b < 10; ++b) {
    bool found = false;
    for (std::size_t i = 0; i < ds.size() && !found; ++i) {
      found = mb.values[2 * b] == ds.samples.values[2 * i] &&
              mb.values[2 * b + 1] == ds.samples.values[2 * i + 1];
    }
    CHECK(found);
  }
}
