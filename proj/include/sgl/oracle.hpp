#pragma once

// Numerical certification of the architecture hypergradient. The composed
// objective inlines one SGL inner iteration (stage-1 step, pseudo-labels,
// stage-2 step) as an explicit function of the architecture values on fixed
// batches and sums the validation losses. Central differences of it are
// compared with the engine's analytic own/cross terms.

#include <span>
#include <vector>

#include "sgl/engine.hpp"

namespace sgl {

// Per-learner validation losses L(W'_k(A), A_k, D_val). Pseudo-labels are
// produced with the group's current architectures unless the engine is
// configured with label_arch_path, in which case `arch_values` are used.
std::vector<double> composed_objective_terms(const SglEngine& engine, const GroupState& group,
                                             std::span<const ArchParams> arch_values, const StepBatches& batches);

double composed_objective(const SglEngine& engine, const GroupState& group, std::span<const ArchParams> arch_values,
                          const StepBatches& batches);

// ||a - n|| / ||n||; 0 when both vanish, +inf when only n vanishes.
double relative_l2_error(std::span<const double> analytic, std::span<const double> numeric);

struct GradcheckReport {
  std::size_t learners = 0;
  std::size_t arch_coordinates = 0;
  // own_error[k]: own_arch_grad(k) vs d(term k)/dA_k.
  std::vector<double> own_error;
  // cross_error[k][j]: cross_arch_grad(k, j) vs d(term j)/dA_k; 0 on the diagonal.
  std::vector<std::vector<double>> cross_error;
  // cross_exact_zero[k][j]: analytic cross term is exactly the zero vector.
  std::vector<std::vector<bool>> cross_exact_zero;
  double total_error = 0.0;
  double tolerance = 1e-3;
  bool pass = false;
  double seconds = 0.0;
  std::vector<double> analytic_total;
  std::vector<double> numeric_total;
};

inline constexpr double gradcheck_step = 1e-4;
inline constexpr double gradcheck_tolerance = 1e-3;

GradcheckReport check_hypergradient(const SglEngine& engine, const GroupState& group, const StepBatches& batches,
                                    double h = gradcheck_step, double tolerance = gradcheck_tolerance);

}  // namespace sgl
