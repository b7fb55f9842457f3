#include "sgl/params.hpp"

#include <cmath>

namespace sgl {

std::size_t ParamLayout::add(std::string name, Shape shape) {
  for (const auto& e : entries_) {
    if (e.name == name) throw Error("ParamLayout: duplicate entry '" + name + "'");
  }
  Entry e;
  e.name = std::move(name);
  e.size = numel(shape);
  e.shape = std::move(shape);
  e.offset = total_;
  total_ += e.size;
  entries_.push_back(std::move(e));
  return entries_.size() - 1;
}

std::size_t ParamLayout::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  throw Error("ParamLayout: no entry named '" + name + "'");
}

bool ParamLayout::operator==(const ParamLayout& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name || entries_[i].shape != other.entries_[i].shape) return false;
  }
  return true;
}

ParamVector::ParamVector(LayoutPtr layout) : layout_(std::move(layout)), values_(layout_->total(), 0.0) {}

ParamVector::ParamVector(LayoutPtr layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_->total()) {
    throw ShapeError("ParamVector: layout holds " + std::to_string(layout_->total()) + " scalars, got " +
                     std::to_string(values_.size()));
  }
}

std::span<double> ParamVector::view(std::size_t entry) {
  const auto& e = layout_->entry(entry);
  return std::span<double>(values_).subspan(e.offset, e.size);
}

std::span<const double> ParamVector::view(std::size_t entry) const {
  const auto& e = layout_->entry(entry);
  return std::span<const double>(values_).subspan(e.offset, e.size);
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (layout_ == other.layout_) return true;
  if (!layout_ || !other.layout_) return false;
  return *layout_ == *other.layout_;
}

namespace {

void require_same(const ParamVector& a, const ParamVector& b, const char* op) {
  if (!a.same_layout(b)) {
    throw ShapeError(std::string(op) + ": layout mismatch (" + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()) + " scalars)");
  }
}

}  // namespace

double dot(const ParamVector& a, const ParamVector& b) {
  require_same(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const ParamVector& a) { return std::sqrt(dot(a, a)); }

bool all_finite(const ParamVector& a) {
  for (double v : a.flat())
    if (!std::isfinite(v)) return false;
  return true;
}

ParamVector axpy(const ParamVector& a, double s, const ParamVector& b) {
  require_same(a, b, "axpy");
  ParamVector out = a;
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] += s * b[i];
  return out;
}

ParamVector scaled(const ParamVector& a, double s) {
  ParamVector out = a;
  for (auto& v : out.flat()) v *= s;
  return out;
}

ParamVector operator+(const ParamVector& a, const ParamVector& b) { return axpy(a, 1.0, b); }

ParamVector operator-(const ParamVector& a, const ParamVector& b) {
  require_same(a, b, "sub");
  ParamVector out = a;
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] -= b[i];
  return out;
}

ParamVector zeros_like(const ParamVector& a) { return ParamVector(a.layout()); }

void round_to(ParamVector& a, Precision p) {
  if (p == Precision::f64) return;
  for (auto& v : a.flat()) v = quantize(v, p);
}

BoundParams::BoundParams(Tape& tape, const ParamVector& params, bool requires_grad)
    : layout_(params.layout()) {
  tensors_.reserve(layout_->size());
  for (std::size_t i = 0; i < layout_->size(); ++i) {
    auto v = params.view(i);
    std::vector<double> values(v.begin(), v.end());
    Shape shape = layout_->entry(i).shape;
    tensors_.push_back(requires_grad ? tape.variable(std::move(shape), std::move(values))
                                     : tape.constant(std::move(shape), std::move(values)));
  }
}

const Tensor& BoundParams::operator[](const std::string& name) const {
  return tensors_.at(layout_->index_of(name));
}

std::vector<ParamVector> grad(const Tensor& scalar, std::span<const BoundParams* const> wrt) {
  std::vector<Tensor> leaves;
  for (const auto* b : wrt) leaves.insert(leaves.end(), b->tensors().begin(), b->tensors().end());
  auto raw = scalar.tape()->gradient(scalar, leaves);
  std::vector<ParamVector> out;
  std::size_t k = 0;
  for (const auto* b : wrt) {
    ParamVector g(b->layout());
    for (std::size_t i = 0; i < b->layout()->size(); ++i, ++k) {
      auto dst = g.view(i);
      std::copy(raw[k].begin(), raw[k].end(), dst.begin());
    }
    out.push_back(std::move(g));
  }
  return out;
}

ParamVector grad(const Tensor& scalar, const BoundParams& wrt) {
  const BoundParams* sets[] = {&wrt};
  return std::move(grad(scalar, sets)[0]);
}

ParamVector grad_at(const ScalarBuilder& builder, const ParamVector& at, const ParamVector& wrt,
                    Precision precision) {
  Tape tape(precision);
  auto held = bind_constant(tape, at);
  auto varied = bind_variable(tape, wrt);
  return grad(builder(tape, held, varied), varied);
}

}  // namespace sgl
