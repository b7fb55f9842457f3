#pragma once

// Dense tensors recorded on a define-by-run tape with reverse-mode
// differentiation. A tape is built per evaluation and discarded afterwards;
// only first derivatives are supported. Second-order quantities are formed
// elsewhere by differencing gradients.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sgl/error.hpp"

namespace sgl {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

enum class Precision { f64, f32 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& text);

// Rounds a value to the storage precision. Identity for f64.
double quantize(double v, Precision p);

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  std::span<const double> values() const;
  double item() const;
  double at(std::size_t i) const { return values()[i]; }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class OpKind : std::uint8_t {
  leaf,
  matmul,
  add,
  add_row,  // [n,m] + [m]
  sub,
  mul,
  scale,        // tensor * 0-d tensor
  scale_const,  // tensor * double
  tanh,
  relu,
  softmax,
  log,
  sum,
  mean,
  pick,       // 0-d element of a tensor
  conv1d,     // width-preserving 1-D convolution, kernel of odd length
};

class Tape {
 public:
  explicit Tape(Precision precision = Precision::f64) : precision_(precision) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Precision precision() const { return precision_; }

  // Leaf that receives gradients.
  Tensor variable(Shape shape, std::vector<double> values);
  // Leaf that never receives gradients.
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor scalar(double v) { return constant({}, {v}); }

  std::size_t size() const { return nodes_.size(); }

  // Appends an operation node. Used by the primitive operations below; the
  // value must already be computed and the inputs must live on this tape.
  Tensor record(OpKind kind, std::span<const Tensor> inputs, Shape shape,
                std::vector<double> value, std::size_t aux = 0, double param = 0.0);

  // Reverse sweep from a 0-d output; returns d(output)/d(leaf) for each
  // requested leaf. Leaves not reachable from the output get zeros.
  std::vector<std::vector<double>> gradient(const Tensor& output,
                                            std::span<const Tensor> leaves) const;

 private:
  friend class Tensor;

  struct Node {
    OpKind kind = OpKind::leaf;
    Shape shape;
    std::vector<double> value;
    std::vector<std::size_t> inputs;
    std::size_t aux = 0;
    double param = 0.0;
    bool requires_grad = false;
  };

  Tensor push(Node node);
  void backward_node(const Node& node, const std::vector<double>& adj,
                     std::vector<std::vector<double>>& adjoints) const;

  Precision precision_;
  std::vector<Node> nodes_;
};

// Primitive operations. Every operation checks shapes and throws ShapeError
// naming the operation and the offending shapes.
Tensor matmul(const Tensor& a, const Tensor& b);
// Same shapes, or a [n,m] matrix plus a length-m row vector.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, const Tensor& s);
Tensor scale(const Tensor& a, double s);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
// Softmax over the last axis.
Tensor softmax(const Tensor& a);
// Natural log guarded by log(max(x, log_floor)).
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor pick(const Tensor& a, std::size_t index);
// Zero-padded "same" convolution along the last axis of a [n,m] matrix.
Tensor conv1d(const Tensor& a, const Tensor& kernel);

inline constexpr double log_floor = 1e-12;

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace sgl
