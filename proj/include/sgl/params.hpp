#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sgl/autodiff.hpp"

namespace sgl {

// Ordered, named collection of tensor shapes. Registration order fixes the
// flat layout.
class ParamLayout {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  // Returns the entry index.
  std::size_t add(std::string name, Shape shape);

  const std::vector<Entry>& entries() const { return entries_; }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  std::size_t size() const { return entries_.size(); }
  std::size_t total() const { return total_; }
  // Throws if absent.
  std::size_t index_of(const std::string& name) const;

  bool operator==(const ParamLayout& other) const;

 private:
  std::vector<Entry> entries_;
  std::size_t total_ = 0;
};

using LayoutPtr = std::shared_ptr<const ParamLayout>;

// Flat vector of scalars with a shared layout.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(LayoutPtr layout);
  ParamVector(LayoutPtr layout, std::vector<double> values);

  const LayoutPtr& layout() const { return layout_; }
  std::size_t dim() const { return values_.size(); }

  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }
  const std::vector<double>& values() const { return values_; }

  std::span<double> view(std::size_t entry);
  std::span<const double> view(std::size_t entry) const;
  std::span<double> view(const std::string& name) { return view(layout_->index_of(name)); }
  std::span<const double> view(const std::string& name) const { return view(layout_->index_of(name)); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool same_layout(const ParamVector& other) const;

  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.same_layout(b) && a.values_ == b.values_;
  }

 private:
  LayoutPtr layout_;
  std::vector<double> values_;
};

// --- Flat vector arithmetic. All binary forms require equal layouts.

double dot(const ParamVector& a, const ParamVector& b);
double norm2(const ParamVector& a);
bool all_finite(const ParamVector& a);
// a + s * b
ParamVector axpy(const ParamVector& a, double s, const ParamVector& b);
ParamVector scaled(const ParamVector& a, double s);
ParamVector operator+(const ParamVector& a, const ParamVector& b);
ParamVector operator-(const ParamVector& a, const ParamVector& b);
ParamVector zeros_like(const ParamVector& a);
void round_to(ParamVector& a, Precision p);

// A ParamVector placed on a tape, one leaf per layout entry.
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(Tape& tape, const ParamVector& params, bool requires_grad);

  const Tensor& operator[](std::size_t entry) const { return tensors_.at(entry); }
  const Tensor& operator[](const std::string& name) const;
  std::span<const Tensor> tensors() const { return tensors_; }
  const LayoutPtr& layout() const { return layout_; }

 private:
  LayoutPtr layout_;
  std::vector<Tensor> tensors_;
};

inline BoundParams bind_variable(Tape& tape, const ParamVector& p) { return {tape, p, true}; }
inline BoundParams bind_constant(Tape& tape, const ParamVector& p) { return {tape, p, false}; }

// d(scalar)/d(wrt) as a flat vector in wrt's layout.
ParamVector grad(const Tensor& scalar, const BoundParams& wrt);
// Gradients for several parameter sets from one reverse sweep.
std::vector<ParamVector> grad(const Tensor& scalar, std::span<const BoundParams* const> wrt);

// Builds a scalar on a fresh tape from (held, varied) parameter sets.
using ScalarBuilder = std::function<Tensor(Tape&, const BoundParams& held, const BoundParams& varied)>;

// Gradient of the builder's scalar with respect to `wrt`, with `at` held
// fixed as constants at the supplied values.
ParamVector grad_at(const ScalarBuilder& builder, const ParamVector& at, const ParamVector& wrt,
                    Precision precision = Precision::f64);

}  // namespace sgl
