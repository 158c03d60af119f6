// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>

#include "ebmforge/model.hpp"
#include "ebmforge/sampler.hpp"

namespace ebmforge::eval {

struct FDOracleConfig {
  double step = 1e-5;
  double rel_tol_first = 1e-6;
  double rel_tol_second = 1e-4;
};

// Central-difference gradient of a scalar function of the given tensors.
// f must be deterministic (freeze any noise by seed before calling).
using ScalarFn = std::function<double(std::span<const ad::Tensor>)>;
std::vector<ad::Tensor> fd_gradient(const ScalarFn& f, std::span<const ad::Tensor> params,
                                    double step = 1e-5);

// max_i |a_i - f_i| / max(1, max_i |f_i|), over all tensors
double max_rel_error(std::span<const ad::Tensor> a, std::span<const ad::Tensor> b);

// Autodiff parameter gradient of the truncated objective vs the FD oracle
// with evaluation-side parameters held at their unperturbed values. x_pre is
// the (detached) state entering the final step; noise is that step's kick.
std::vector<ad::Tensor> kl_opt_autodiff_grad(const model::AnyModel& m, const ad::Tensor& x_pre,
                                             double step_size, const std::vector<double>& noise);
std::vector<ad::Tensor> kl_opt_fd_grad(const model::AnyModel& m, const ad::Tensor& x_pre,
                                       double step_size, const std::vector<double>& noise,
                                       double fd_step = 1e-5);

struct TruncationReport {
  double cosine = 0.0;
  double norm_ratio = 0.0;  // truncated / full
  double truncated_norm = 0.0;
  double full_norm = 0.0;
  bool degenerate = false;  // both gradients zero
};

// Truncated (last step only) vs fully-unrolled backprop through K Langevin
// steps, same frozen noise; compares the parameter gradients of the mean
// final-state energy under frozen evaluation parameters.
TruncationReport compare_truncation(const model::AnyModel& m, const ad::Tensor& x0, std::size_t K,
                                    double step_size, double noise_sigma, std::uint64_t noise_seed);

// P(out scores above in), ties counted half; rank-based.
double auroc(std::span<const double> scores_in, std::span<const double> scores_out);

struct ModeCoverage {
  std::vector<std::size_t> counts;  // per center
  std::size_t unassigned = 0;
  std::size_t covered = 0;
};
ModeCoverage mode_coverage(const ad::Tensor& samples,
                           const std::vector<std::vector<double>>& centers, double radius,
                           double coverage_fraction = 0.02);

using Predicate = std::function<bool(std::span<const double>)>;
double composition_satisfaction(const ad::Tensor& samples, std::span<const Predicate> predicates);

struct OODReport {
  double auroc = 0.0;
  double energy_in_mean = 0.0, energy_in_std = 0.0;
  double energy_out_mean = 0.0, energy_out_std = 0.0;
  std::size_t n_in = 0, n_out = 0;
};

// Energy-scored OOD detection: lower energy reads as in-distribution.
OODReport ood_report(const model::EnergyFn& energy, const ad::Tensor& samples_in,
                     const ad::Tensor& samples_out);

std::vector<double> energies_of(const model::EnergyFn& energy, const ad::Tensor& samples);

}  // namespace ebmforge::eval
