#pragma once

// Central-difference Hessian-vector products. For a gradient field g(p),
//
//   hvp_fd(g, base, d) = (g(base + a d) - g(base - a d)) / (2 a),
//   a = fd_scale / ||d||_2,
//
// approximates the mixed second derivative of the underlying loss applied to
// d. The field may return several gradients (one per differentiated set).

#include <functional>
#include <span>
#include <vector>

#include "sgl/params.hpp"

namespace sgl {

using GradientField = std::function<std::vector<ParamVector>(const ParamVector& point)>;

// Directions shorter than this produce exact zeros.
inline constexpr double hvp_min_direction_norm = 1e-12;

std::vector<ParamVector> hvp_fd(const GradientField& field, const ParamVector& base, const ParamVector& direction,
                                double fd_scale, std::span<const LayoutPtr> result_layouts);

ParamVector hvp_fd(const std::function<ParamVector(const ParamVector&)>& field, const ParamVector& base,
                   const ParamVector& direction, double fd_scale, const LayoutPtr& result_layout);

// Builder form: the builder's scalar is differentiated with respect to
// `diff_wrt` while `base` (held constant) is shifted along `direction`.
ParamVector hvp_fd(const ScalarBuilder& builder, const ParamVector& base, const ParamVector& diff_wrt,
                   const ParamVector& direction, double fd_scale, Precision precision = Precision::f64);

}  // namespace sgl
