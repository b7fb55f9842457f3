#include "sgl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sgl {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string to_string(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

Precision parse_precision(const std::string& text) {
  if (text == "f64") return Precision::f64;
  if (text == "f32") return Precision::f32;
  throw ConfigError("precision must be f64 or f32, got '" + text + "'");
}

double quantize(double v, Precision p) {
  return p == Precision::f64 ? v : static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// Tensor

const Shape& Tensor::shape() const { return tape_->nodes_[id_].shape; }
std::size_t Tensor::size() const { return tape_->nodes_[id_].value.size(); }
std::span<const double> Tensor::values() const { return tape_->nodes_[id_].value; }
bool Tensor::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return values()[0];
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::push(Node node) {
  if (precision_ == Precision::f32) {
    for (auto& v : node.value) v = quantize(v, precision_);
  }
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::variable(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("variable: shape " + to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  n.requires_grad = true;
  return push(std::move(n));
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("constant: shape " + to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(values);
  return push(std::move(n));
}

Tensor Tape::record(OpKind kind, std::span<const Tensor> inputs, Shape shape,
                    std::vector<double> value, std::size_t aux, double param) {
  Node n;
  n.kind = kind;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.aux = aux;
  n.param = param;
  for (const auto& t : inputs) {
    if (t.tape() != this) throw Error("record: input tensor belongs to a different tape");
    n.inputs.push_back(t.id());
    n.requires_grad = n.requires_grad || nodes_[t.id()].requires_grad;
  }
  return push(std::move(n));
}

std::vector<std::vector<double>> Tape::gradient(const Tensor& output,
                                                std::span<const Tensor> leaves) const {
  if (output.tape() != this) throw Error("gradient: output belongs to a different tape");
  if (!output.shape().empty()) {
    throw ShapeError("gradient: output must be 0-dimensional, got shape " + to_string(output.shape()));
  }
  std::vector<std::vector<double>> adjoints(nodes_.size());
  if (nodes_[output.id()].requires_grad) {
    adjoints[output.id()] = {1.0};
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      const Node& node = nodes_[i];
      if (adjoints[i].empty() || node.kind == OpKind::leaf) continue;
      backward_node(node, adjoints[i], adjoints);
    }
  }
  std::vector<std::vector<double>> out;
  out.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    if (leaf.tape() != this) throw Error("gradient: leaf belongs to a different tape");
    auto g = adjoints[leaf.id()];
    if (g.empty()) g.assign(nodes_[leaf.id()].value.size(), 0.0);
    if (precision_ == Precision::f32) {
      for (auto& v : g) v = quantize(v, precision_);
    }
    out.push_back(std::move(g));
  }
  return out;
}

namespace {

std::vector<double>& accum(std::vector<std::vector<double>>& adjoints, std::size_t id, std::size_t n) {
  auto& a = adjoints[id];
  if (a.empty()) a.assign(n, 0.0);
  return a;
}

}  // namespace

void Tape::backward_node(const Node& node, const std::vector<double>& adj,
                         std::vector<std::vector<double>>& adjoints) const {
  auto input = [&](std::size_t k) -> const Node& { return nodes_[node.inputs[k]]; };
  auto wants = [&](std::size_t k) { return input(k).requires_grad; };
  auto target = [&](std::size_t k) -> std::vector<double>& {
    return accum(adjoints, node.inputs[k], input(k).value.size());
  };

  switch (node.kind) {
    case OpKind::leaf:
      break;
    case OpKind::matmul: {
      const auto& a = input(0);
      const auto& b = input(1);
      const std::size_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
      if (wants(0)) {
        auto& da = target(0);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += adj[i * m + j] * b.value[p * m + j];
            da[i * k + p] += s;
          }
      }
      if (wants(1)) {
        auto& db = target(1);
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += a.value[i * k + p] * adj[i * m + j];
            db[p * m + j] += s;
          }
      }
      break;
    }
    case OpKind::add:
    case OpKind::sub: {
      const double sign = node.kind == OpKind::sub ? -1.0 : 1.0;
      if (wants(0)) {
        auto& da = target(0);
        for (std::size_t i = 0; i < adj.size(); ++i) da[i] += adj[i];
      }
      if (wants(1)) {
        auto& db = target(1);
        for (std::size_t i = 0; i < adj.size(); ++i) db[i] += sign * adj[i];
      }
      break;
    }
    case OpKind::add_row: {
      if (wants(0)) {
        auto& da = target(0);
        for (std::size_t i = 0; i < adj.size(); ++i) da[i] += adj[i];
      }
      if (wants(1)) {
        auto& db = target(1);
        const std::size_t m = db.size();
        for (std::size_t i = 0; i < adj.size(); ++i) db[i % m] += adj[i];
      }
      break;
    }
    case OpKind::mul: {
      const auto& a = input(0);
      const auto& b = input(1);
      if (wants(0)) {
        auto& da = target(0);
        for (std::size_t i = 0; i < adj.size(); ++i) da[i] += adj[i] * b.value[i];
      }
      if (wants(1)) {
        auto& db = target(1);
        for (std::size_t i = 0; i < adj.size(); ++i) db[i] += adj[i] * a.value[i];
      }
      break;
    }
    case OpKind::scale: {
      const auto& a = input(0);
      const double s = input(1).value[0];
      if (wants(0)) {
        auto& da = target(0);
        for (std::size_t i = 0; i < adj.size(); ++i) da[i] += adj[i] * s;
      }
      if (wants(1)) {
        double ds = 0.0;
        for (std::size_t i = 0; i < adj.size(); ++i) ds += adj[i] * a.value[i];
        target(1)[0] += ds;
      }
      break;
    }
    case OpKind::scale_const: {
      if (wants(0)) {
        auto& da = target(0);
        for (std::size_t i = 0; i < adj.size(); ++i) da[i] += adj[i] * node.param;
      }
      break;
    }
    case OpKind::tanh: {
      if (wants(0)) {
        auto& da = target(0);
        for (std::size_t i = 0; i < adj.size(); ++i) {
          const double y = node.value[i];
          da[i] += adj[i] * (1.0 - y * y);
        }
      }
      break;
    }
    case OpKind::relu: {
      if (wants(0)) {
        const auto& a = input(0);
        auto& da = target(0);
        for (std::size_t i = 0; i < adj.size(); ++i)
          if (a.value[i] > 0.0) da[i] += adj[i];
      }
      break;
    }
    case OpKind::softmax: {
      if (wants(0)) {
        auto& da = target(0);
        const std::size_t m = node.shape.back();
        const std::size_t rows = node.value.size() / m;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = &node.value[r * m];
          const double* g = &adj[r * m];
          double dot = 0.0;
          for (std::size_t j = 0; j < m; ++j) dot += g[j] * y[j];
          for (std::size_t j = 0; j < m; ++j) da[r * m + j] += y[j] * (g[j] - dot);
        }
      }
      break;
    }
    case OpKind::log: {
      if (wants(0)) {
        const auto& a = input(0);
        auto& da = target(0);
        for (std::size_t i = 0; i < adj.size(); ++i)
          if (a.value[i] > log_floor) da[i] += adj[i] / a.value[i];
      }
      break;
    }
    case OpKind::sum:
    case OpKind::mean: {
      if (wants(0)) {
        auto& da = target(0);
        const double g = node.kind == OpKind::sum ? adj[0] : adj[0] / static_cast<double>(da.size());
        for (auto& v : da) v += g;
      }
      break;
    }
    case OpKind::pick: {
      if (wants(0)) target(0)[node.aux] += adj[0];
      break;
    }
    case OpKind::conv1d: {
      const auto& a = input(0);
      const auto& k = input(1);
      const std::size_t m = a.shape.back();
      const std::size_t rows = a.value.size() / m;
      const std::size_t kw = k.value.size();
      const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(kw / 2);
      const bool wa = wants(0), wk = wants(1);
      std::vector<double>* da = wa ? &target(0) : nullptr;
      std::vector<double>* dk = wk ? &target(1) : nullptr;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < m; ++i) {
          const double g = adj[r * m + i];
          for (std::size_t t = 0; t < kw; ++t) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(t) - c;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(m)) continue;
            if (wa) (*da)[r * m + src] += g * k.value[t];
            if (wk) (*dk)[t] += g * a.value[r * m + src];
          }
        }
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Primitive operations

namespace {

Tape& tape_of(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.valid() || !b.valid()) throw Error(std::string(op) + ": uninitialized tensor");
  if (a.tape() != b.tape()) throw Error(std::string(op) + ": operands on different tapes");
  return *a.tape();
}

Tape& tape_of(const Tensor& a, const char* op) {
  if (!a.valid()) throw Error(std::string(op) + ": uninitialized tensor");
  return *a.tape();
}

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                   to_string(b.shape()));
}

Tensor unary(OpKind kind, const Tensor& a, std::vector<double> value, const char* op) {
  Tape& tape = tape_of(a, op);
  const Tensor in[] = {a};
  return tape.record(kind, in, a.shape(), std::move(value));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tape = tape_of(a, b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) mismatch("matmul", a, b);
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  std::vector<double> out(n * m, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += x * bv[p * m + j];
    }
  const Tensor in[] = {a, b};
  return tape.record(OpKind::matmul, in, {n, m}, std::move(out));
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tape& tape = tape_of(a, b, "add");
  const Tensor in[] = {a, b};
  auto av = a.values();
  auto bv = b.values();
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return tape.record(OpKind::add, in, a.shape(), std::move(out));
  }
  if (a.rank() == 2 && b.rank() == 1 && a.shape()[1] == b.shape()[0]) {
    const std::size_t m = b.shape()[0];
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % m];
    return tape.record(OpKind::add_row, in, a.shape(), std::move(out));
  }
  mismatch("add", a, b);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape& tape = tape_of(a, b, "sub");
  if (a.shape() != b.shape()) mismatch("sub", a, b);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const Tensor in[] = {a, b};
  return tape.record(OpKind::sub, in, a.shape(), std::move(out));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& tape = tape_of(a, b, "mul");
  if (a.shape() != b.shape()) mismatch("mul", a, b);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const Tensor in[] = {a, b};
  return tape.record(OpKind::mul, in, a.shape(), std::move(out));
}

Tensor scale(const Tensor& a, const Tensor& s) {
  Tape& tape = tape_of(a, s, "scale");
  if (s.size() != 1 || s.rank() != 0) mismatch("scale", a, s);
  const double f = s.values()[0];
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * f;
  const Tensor in[] = {a, s};
  return tape.record(OpKind::scale, in, a.shape(), std::move(out));
}

Tensor scale(const Tensor& a, double s) {
  Tape& tape = tape_of(a, "scale");
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  const Tensor in[] = {a};
  return tape.record(OpKind::scale_const, in, a.shape(), std::move(out), 0, s);
}

Tensor tanh(const Tensor& a) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  return unary(OpKind::tanh, a, std::move(out), "tanh");
}

Tensor relu(const Tensor& a) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return unary(OpKind::relu, a, std::move(out), "relu");
}

Tensor softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax: needs at least one axis, got shape []");
  const std::size_t m = a.shape().back();
  if (m == 0) throw ShapeError("softmax: empty last axis in shape " + to_string(a.shape()));
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < av.size() / m; ++r) {
    const double* x = &av[r * m];
    const double mx = *std::max_element(x, x + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (out[r * m + j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] /= z;
  }
  return unary(OpKind::softmax, a, std::move(out), "softmax");
}

Tensor log(const Tensor& a) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(av[i], log_floor));
  return unary(OpKind::log, a, std::move(out), "log");
}

Tensor sum(const Tensor& a) {
  Tape& tape = tape_of(a, "sum");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const Tensor in[] = {a};
  return tape.record(OpKind::sum, in, {}, {s});
}

Tensor mean(const Tensor& a) {
  Tape& tape = tape_of(a, "mean");
  if (a.size() == 0) throw ShapeError("mean: empty tensor of shape " + to_string(a.shape()));
  double s = 0.0;
  for (double v : a.values()) s += v;
  const Tensor in[] = {a};
  return tape.record(OpKind::mean, in, {}, {s / static_cast<double>(a.size())});
}

Tensor pick(const Tensor& a, std::size_t index) {
  Tape& tape = tape_of(a, "pick");
  if (index >= a.size()) {
    throw ShapeError("pick: index " + std::to_string(index) + " out of range for shape " +
                     to_string(a.shape()));
  }
  const Tensor in[] = {a};
  return tape.record(OpKind::pick, in, {}, {a.values()[index]}, index);
}

Tensor conv1d(const Tensor& a, const Tensor& kernel) {
  Tape& tape = tape_of(a, kernel, "conv1d");
  if (a.rank() != 2 || kernel.rank() != 1 || kernel.size() % 2 == 0) mismatch("conv1d", a, kernel);
  const std::size_t m = a.shape()[1];
  const std::size_t rows = a.shape()[0];
  const std::size_t kw = kernel.size();
  const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(kw / 2);
  auto av = a.values();
  auto kv = kernel.values();
  std::vector<double> out(av.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t t = 0; t < kw; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(t) - c;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(m)) continue;
        s += kv[t] * av[r * m + static_cast<std::size_t>(src)];
      }
      out[r * m + i] = s;
    }
  const Tensor in[] = {a, kernel};
  return tape.record(OpKind::conv1d, in, a.shape(), std::move(out));
}

}  // namespace sgl
