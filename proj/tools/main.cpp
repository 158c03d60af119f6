// SPDX-License-Identifier: Apache-2.0
//
// Single-binary entry point: train, sample, eval-ood, compose, verify,
// truncation-report. Exit codes: 0 success, 1 runtime/divergence failure,
// 2 usage or config errors.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "ebmforge/config.hpp"
#include "ebmforge/data.hpp"
#include "ebmforge/eval.hpp"
#include "ebmforge/io.hpp"
#include "ebmforge/ops.hpp"
#include "ebmforge/trainer.hpp"
#include "ebmforge/verify.hpp"

namespace {

namespace fs = std::filesystem;
using namespace ebmforge;

fs::path default_out_root() {
  if (const char* env = std::getenv("EBMFORGE_OUT")) return fs::path(env);
  return fs::path("ebmforge-out");
}

config::TrainConfig load_config(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
  std::optional<fs::path> file;
  if (!config_path.empty()) file = fs::path(config_path);
  return config::load_train_config(file, overrides);
}

sampler::AugmentationSpec aug_from_config(const config::TrainConfig& cfg, const data::Dataset& ds,
                                          const sampler::Box& box) {
  sampler::AugmentationSpec aug;
  aug.data_box = box;
  if (ds.input.kind == model::InputKind::grid) {
    sampler::GridAug g;
    g.flip_probability = cfg.aug_flip_p;
    g.rescale_probability = cfg.aug_rescale_p;
    g.rescale_lo = cfg.aug_rescale_lo;
    g.rescale_hi = cfg.aug_rescale_hi;
    g.blur_probability = cfg.aug_blur_p;
    g.blur_sigma_lo = cfg.aug_blur_sigma_lo;
    g.blur_sigma_hi = cfg.aug_blur_sigma_hi;
    g.brightness_probability = cfg.aug_brightness_p;
    g.brightness_lo = cfg.aug_brightness_lo;
    g.brightness_hi = cfg.aug_brightness_hi;
    aug.grid = g;
  } else {
    sampler::VectorAug v;
    v.perturb_probability = cfg.aug_perturb_p;
    v.perturb_sigma = cfg.aug_perturb_sigma;
    v.reflect_probability = cfg.aug_reflect_p;
    v.reflect_axes = cfg.aug_reflect_axes;
    aug.vec = v;
  }
  return aug;
}

sampler::LangevinConfig langevin_from_config(const config::TrainConfig& cfg,
                                             const sampler::Box& box) {
  sampler::LangevinConfig lcfg;
  lcfg.steps = cfg.langevin_steps;
  lcfg.step_size = cfg.langevin_step_size;
  lcfg.noise_sigma = cfg.langevin_noise_sigma;
  lcfg.clamp = box;
  return lcfg;
}

void write_json(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& kv) {
  std::ofstream out(path, std::ios::trunc);
  out << "{";
  for (std::size_t i = 0; i < kv.size(); ++i) {
    out << (i ? ", " : "") << "\"" << kv[i].first << "\": " << kv[i].second;
  }
  out << "}\n";
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const fs::path& out, const std::string& resume) {
  const config::TrainConfig cfg = load_config(config_path, overrides);
  fs::create_directories(out);
  config::write_effective_config(out / "effective-config.txt", cfg);
  std::optional<fs::path> resume_from;
  if (!resume.empty()) resume_from = fs::path(resume);
  const trainer::TrainResult res = trainer::train(cfg, out, resume_from);
  std::cout << "checkpoint: " << res.checkpoint_path.string() << "\n"
            << "metrics:    " << res.metrics_path.string() << "\n"
            << "iterations: " << res.iterations_run << (res.diverged ? " (diverged)" : "") << "\n";
  return res.diverged ? 1 : 0;
}

int cmd_sample(const std::string& config_path, const std::vector<std::string>& overrides,
               const fs::path& out, const std::string& checkpoint, std::size_t n,
               std::size_t rounds, bool use_live) {
  const config::TrainConfig cfg = load_config(config_path, overrides);
  fs::create_directories(out);
  config::write_effective_config(out / "effective-config.txt", cfg);
  const data::Dataset ds = trainer::build_dataset(cfg);
  const sampler::Box box = data::sampling_box(ds);
  const model::AnyModel m = trainer::load_model(cfg, checkpoint, !use_live);
  const std::optional<std::size_t> cond =
      std::holds_alternative<model::ConditionalEnergy>(m) ? std::optional<std::size_t>(cfg.condition)
                                                          : std::nullopt;
  Rng rng(Rng::mix(cfg.seed, 0x5A3D));
  const ad::Shape per_sample(ds.samples.shape.begin() + 1, ds.samples.shape.end());
  const ad::Tensor samples =
      sampler::sample_model(model::bind_energy(m, cond), aug_from_config(cfg, ds, box),
                            langevin_from_config(cfg, box), rounds, n, per_sample, rng);
  if (ds.input.kind == model::InputKind::grid) {
    io::dump_pgm_batch(out, "sample", samples, box);
    std::cout << "wrote " << n << " PGM grids under " << out.string() << "\n";
  } else {
    io::dump_csv(out / "samples.csv", samples);
    std::cout << "wrote " << (out / "samples.csv").string() << "\n";
  }
  return 0;
}

int cmd_eval_ood(const std::string& config_path, const std::vector<std::string>& overrides,
                 const fs::path& out, const std::string& checkpoint, double shift_x, double shift_y,
                 std::size_t n) {
  const config::TrainConfig cfg = load_config(config_path, overrides);
  fs::create_directories(out);
  config::write_effective_config(out / "effective-config.txt", cfg);
  const model::AnyModel m = trainer::load_model(cfg, checkpoint, /*use_ema=*/true);
  const std::optional<std::size_t> cond =
      std::holds_alternative<model::ConditionalEnergy>(m) ? std::optional<std::size_t>(cfg.condition)
                                                          : std::nullopt;
  const data::Dataset in_ds = data::make_mixture(cfg.dataset, n, Rng::mix(cfg.seed, 0x00D1));
  const std::vector<double> offset = {shift_x, shift_y};
  const data::Dataset out_ds = data::shifted(in_ds, offset);
  const model::EnergyFn e = model::bind_energy(m, cond);
  const eval::OODReport rep = eval::ood_report(e, in_ds.samples, out_ds.samples);

  write_json(out / "ood_report.json",
             {{"auroc", num(rep.auroc)},
              {"n_in", std::to_string(rep.n_in)},
              {"n_out", std::to_string(rep.n_out)},
              {"energy_in_mean", num(rep.energy_in_mean)},
              {"energy_in_std", num(rep.energy_in_std)},
              {"energy_out_mean", num(rep.energy_out_mean)},
              {"energy_out_std", num(rep.energy_out_std)}});
  {
    std::ofstream csv(out / "ood_energies.csv", std::ios::trunc);
    csv << "set,energy\n";
    for (double v : eval::energies_of(e, in_ds.samples)) csv << "in," << num(v) << "\n";
    for (double v : eval::energies_of(e, out_ds.samples)) csv << "out," << num(v) << "\n";
  }
  std::ofstream txt(out / "ood_summary.txt", std::ios::trunc);
  txt << "AUROC " << num(rep.auroc) << " over " << rep.n_in << " in / " << rep.n_out
      << " out samples\n"
      << "in-distribution energy  " << num(rep.energy_in_mean) << " +- " << num(rep.energy_in_std)
      << "\n"
      << "out-distribution energy " << num(rep.energy_out_mean) << " +- "
      << num(rep.energy_out_std) << "\n";
  std::cout << "AUROC = " << num(rep.auroc) << "\n";
  return 0;
}

int cmd_compose(const std::vector<std::string>& overrides, const fs::path& out) {
  fs::create_directories(out);
  config::TrainConfig cfg_a = verify::compose_config(false);
  config::TrainConfig cfg_b = verify::compose_config(true);
  for (const std::string& o : overrides) {
    const config::KeyValue kv = config::parse_override(o);
    cfg_a.set(kv);
    cfg_b.set(kv);
  }
  cfg_b.data_filter = "x1pos";
  cfg_a.validate();
  cfg_b.validate();
  config::write_effective_config(out / "effective-config-a.txt", cfg_a);
  config::write_effective_config(out / "effective-config-b.txt", cfg_b);

  std::cout << "training factor model A (x0 > 0)...\n";
  const trainer::TrainResult ra = trainer::train(cfg_a, out / "model_a");
  std::cout << "training factor model B (x1 > 0)...\n";
  const trainer::TrainResult rb = trainer::train(cfg_b, out / "model_b");
  if (ra.diverged || rb.diverged) {
    std::cerr << "compose: factor training diverged\n";
    return 1;
  }

  const std::vector<model::ComposeMember> members = {{&ra.ema, cfg_a.condition},
                                                     {&rb.ema, cfg_b.condition}};
  const data::Dataset ds = data::make_mixture("eight-gaussians", 1000, Rng::mix(cfg_a.seed, 1));
  const sampler::Box box = data::sampling_box(ds);
  sampler::AugmentationSpec aug = aug_from_config(cfg_a, ds, box);
  sampler::LangevinConfig lcfg = langevin_from_config(cfg_a, box);
  lcfg.steps = 20;

  Rng rng(Rng::mix(cfg_a.seed, 0xC0));
  const ad::Tensor samples =
      sampler::sample_model(model::bind_compose(members), aug, lcfg, 12, 1000, {2}, rng);
  const std::vector<eval::Predicate> preds = {
      [](std::span<const double> x) { return x[0] > 0.0; },
      [](std::span<const double> x) { return x[1] > 0.0; }};
  const double frac = eval::composition_satisfaction(samples, preds);
  io::dump_csv(out / "composed_samples.csv", samples);
  write_json(out / "composition_report.json", {{"intersection_fraction", num(frac)},
                                               {"n_samples", "1000"}});
  std::cout << "intersection fraction = " << num(frac) << "\n";
  return 0;
}

int cmd_verify(const fs::path& out) {
  const auto results = verify::run_acceptance(out);
  return verify::all_passed(results) ? 0 : 1;
}

int cmd_truncation(const fs::path& out, std::uint64_t seed) {
  fs::create_directories(out);
  const model::AnyModel m =
      model::init_params(seed, std::vector<std::size_t>{2, 16, 16, 1}, model::InputSpec::vec(2));
  const data::Dataset ds = data::make_mixture("eight-gaussians", 256, Rng::mix(seed, 1));
  Rng rng(Rng::mix(seed, 2));
  const ad::Tensor x0 = data::minibatch(ds, 16, rng);
  std::ofstream csv(out / "truncation_report.csv", std::ios::trunc);
  csv << "K,cosine,norm_ratio,truncated_norm,full_norm,degenerate\n";
  std::printf("%2s | %10s | %10s | %12s | %12s\n", "K", "cosine", "norm ratio", "trunc norm",
              "full norm");
  for (std::size_t K : {1ul, 2ul, 3ul}) {
    const eval::TruncationReport rep =
        eval::compare_truncation(m, x0, K, 0.02, 0.005, Rng::mix(seed, 100 + K));
    csv << K << "," << num(rep.cosine) << "," << num(rep.norm_ratio) << ","
        << num(rep.truncated_norm) << "," << num(rep.full_norm) << "," << (rep.degenerate ? 1 : 0)
        << "\n";
    std::printf("%2zu | %10.6f | %10.6f | %12.6g | %12.6g\n", K, rep.cosine, rep.norm_ratio,
                rep.truncated_norm, rep.full_norm);
  }
  std::cout << "wrote " << (out / "truncation_report.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"energy-based model training engine"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, resume, params_kind = "ema";
  std::vector<std::string> overrides;
  std::string out_dir = default_out_root().string();
  std::size_t n = 1000, rounds = 12;
  double shift_x = 3.0, shift_y = 3.0;
  std::uint64_t seed = 55;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* copt = sub->add_option("--config,-c", config_path, "config file (key = value lines)");
    if (needs_config) copt->required();
    sub->add_option("--set,-s", overrides, "override, repeatable: key=value");
    sub->add_option("--out,-o", out_dir, "output directory (default $EBMFORGE_OUT or ./ebmforge-out)");
  };

  CLI::App* c_train = app.add_subcommand("train", "run the training loop");
  add_common(c_train, true);
  c_train->add_option("--resume", resume, "continue from a checkpoint");

  CLI::App* c_sample = app.add_subcommand("sample", "generate samples from a checkpoint");
  add_common(c_sample, true);
  c_sample->add_option("--checkpoint", checkpoint, "checkpoint to sample from")->required();
  c_sample->add_option("--n", n, "number of samples");
  c_sample->add_option("--rounds", rounds, "augmentation rounds (K Langevin steps each)");
  c_sample->add_option("--params", params_kind, "ema | live (default ema)");

  CLI::App* c_ood = app.add_subcommand("eval-ood", "energy-scored OOD detection report");
  add_common(c_ood, true);
  c_ood->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  c_ood->add_option("--shift-x", shift_x, "OOD shift along x0");
  c_ood->add_option("--shift-y", shift_y, "OOD shift along x1");
  c_ood->add_option("--n", n, "samples per side");

  CLI::App* c_compose = app.add_subcommand(
      "compose", "train two conditional factor models and sample their sum");
  add_common(c_compose, false);

  CLI::App* c_verify = app.add_subcommand("verify", "run the full verification suite");
  add_common(c_verify, false);

  CLI::App* c_trunc = app.add_subcommand("truncation-report",
                                         "truncated vs full backprop gradient comparison");
  add_common(c_trunc, false);
  c_trunc->add_option("--seed", seed, "model/batch seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const fs::path out(out_dir);
    if (c_train->parsed()) return cmd_train(config_path, overrides, out, resume);
    if (c_sample->parsed()) {
      if (params_kind != "ema" && params_kind != "live") {
        std::cerr << "--params must be ema or live\n";
        return 2;
      }
      return cmd_sample(config_path, overrides, out, checkpoint, n, rounds, params_kind == "live");
    }
    if (c_ood->parsed()) return cmd_eval_ood(config_path, overrides, out, checkpoint, shift_x, shift_y, n);
    if (c_compose->parsed()) return cmd_compose(overrides, out);
    if (c_verify->parsed()) return cmd_verify(out);
    if (c_trunc->parsed()) return cmd_truncation(out, seed);
  } catch (const config::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
