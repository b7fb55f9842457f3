#include "sgl/hvp.hpp"

namespace sgl {

std::vector<ParamVector> hvp_fd(const GradientField& field, const ParamVector& base, const ParamVector& direction,
                                double fd_scale, std::span<const LayoutPtr> result_layouts) {
  if (!base.same_layout(direction)) throw ShapeError("hvp_fd: direction does not match the base point layout");
  const double dn = norm2(direction);
  if (!(dn >= hvp_min_direction_norm)) {
    std::vector<ParamVector> zeros;
    for (const auto& l : result_layouts) zeros.emplace_back(l);
    return zeros;
  }
  const double alpha = fd_scale / dn;
  auto plus = field(axpy(base, alpha, direction));
  auto minus = field(axpy(base, -alpha, direction));
  if (plus.size() != result_layouts.size() || minus.size() != result_layouts.size()) {
    throw ShapeError("hvp_fd: gradient field returned an unexpected number of gradients");
  }
  const double inv = 1.0 / (2.0 * alpha);
  for (std::size_t i = 0; i < plus.size(); ++i) {
    for (std::size_t c = 0; c < plus[i].dim(); ++c) plus[i][c] = (plus[i][c] - minus[i][c]) * inv;
  }
  return plus;
}

ParamVector hvp_fd(const std::function<ParamVector(const ParamVector&)>& field, const ParamVector& base,
                   const ParamVector& direction, double fd_scale, const LayoutPtr& result_layout) {
  GradientField wrapped = [&](const ParamVector& p) { return std::vector<ParamVector>{field(p)}; };
  const LayoutPtr layouts[] = {result_layout};
  return std::move(hvp_fd(wrapped, base, direction, fd_scale, layouts)[0]);
}

ParamVector hvp_fd(const ScalarBuilder& builder, const ParamVector& base, const ParamVector& diff_wrt,
                   const ParamVector& direction, double fd_scale, Precision precision) {
  auto field = [&](const ParamVector& point) { return grad_at(builder, point, diff_wrt, precision); };
  return hvp_fd(field, base, direction, fd_scale, diff_wrt.layout());
}

}  // namespace sgl
