#include "sgl/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace sgl {

namespace {

const std::map<CandidateOp, std::string>& op_names() {
  static const std::map<CandidateOp, std::string> names = {
      {CandidateOp::zero, "zero"},
      {CandidateOp::identity, "identity"},
      {CandidateOp::affine, "affine"},
      {CandidateOp::affine_tanh, "affine_tanh"},
      {CandidateOp::affine_relu, "affine_relu"},
      {CandidateOp::avg_pool_1d, "avg_pool_1d"},
      {CandidateOp::conv_1d, "conv_1d"},
  };
  return names;
}

constexpr std::size_t conv_kernel_width = 3;

}  // namespace

std::string to_string(CandidateOp op) { return op_names().at(op); }

CandidateOp parse_candidate_op(const std::string& name) {
  for (const auto& [op, n] : op_names())
    if (n == name) return op;
  throw ConfigError("unknown candidate op '" + name + "'");
}

bool is_parametric(CandidateOp op) {
  switch (op) {
    case CandidateOp::affine:
    case CandidateOp::affine_tanh:
    case CandidateOp::affine_relu:
    case CandidateOp::conv_1d:
      return true;
    default:
      return false;
  }
}

std::vector<CandidateOp> default_op_set() {
  return {CandidateOp::zero, CandidateOp::identity, CandidateOp::affine, CandidateOp::affine_tanh,
          CandidateOp::affine_relu};
}

CellSpec CellSpec::dense(std::size_t num_nodes, std::size_t num_input_nodes, std::size_t width,
                         std::vector<CandidateOp> ops) {
  CellSpec s;
  s.num_nodes = num_nodes;
  s.num_input_nodes = num_input_nodes;
  s.width = width;
  s.ops = std::move(ops);
  for (std::size_t j = num_input_nodes; j < num_nodes; ++j)
    for (std::size_t i = 0; i < j; ++i) s.edges.push_back({i, j});
  return s;
}

std::vector<std::size_t> CellSpec::incoming(std::size_t node) const {
  std::vector<std::size_t> out;
  for (std::size_t e = 0; e < edges.size(); ++e)
    if (edges[e].to == node) out.push_back(e);
  return out;
}

void CellSpec::validate() const {
  if (num_input_nodes < 1 || num_input_nodes > 2) throw ConfigError("cell: num_input_nodes must be 1 or 2");
  if (num_nodes <= num_input_nodes) throw ConfigError("cell: num_nodes must exceed num_input_nodes");
  if (width == 0) throw ConfigError("cell: width must be positive");
  if (ops.empty()) throw ConfigError("cell: op set is empty");
  for (std::size_t a = 0; a < ops.size(); ++a)
    for (std::size_t b = a + 1; b < ops.size(); ++b)
      if (ops[a] == ops[b]) throw ConfigError("cell: op '" + to_string(ops[a]) + "' listed twice");
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& edge = edges[e];
    if (edge.from >= edge.to || edge.to >= num_nodes) {
      throw ConfigError("cell: edge " + std::to_string(e) + " (" + std::to_string(edge.from) + "->" +
                        std::to_string(edge.to) + ") must satisfy from < to < num_nodes");
    }
    if (edge.to < num_input_nodes) throw ConfigError("cell: edge " + std::to_string(e) + " targets an input node");
  }
  for (std::size_t n = num_input_nodes; n < num_nodes; ++n) {
    if (incoming(n).empty()) throw ConfigError("cell: node " + std::to_string(n) + " has no incoming edges");
  }
}

LayoutPtr make_arch_layout(const CellSpec& spec) {
  auto layout = std::make_shared<ParamLayout>();
  for (std::size_t e = 0; e < spec.edges.size(); ++e) layout->add("edge" + std::to_string(e), {spec.ops.size()});
  return layout;
}

std::vector<std::vector<double>> arch_weights(const ArchParams& arch) {
  std::vector<std::vector<double>> out;
  for (std::size_t e = 0; e < arch.layout()->size(); ++e) {
    auto logits = arch.view(e);
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
    for (auto& v : p) v /= z;
    out.push_back(std::move(p));
  }
  return out;
}

CellSlots register_cell_weights(ParamLayout& layout, const CellSpec& spec, const std::string& prefix) {
  CellSlots slots(spec.edges.size(), std::vector<OpSlot>(spec.ops.size()));
  const std::size_t h = spec.width;
  for (std::size_t e = 0; e < spec.edges.size(); ++e) {
    for (std::size_t o = 0; o < spec.ops.size(); ++o) {
      const auto op = spec.ops[o];
      const std::string base = prefix + ".e" + std::to_string(e) + "." + to_string(op);
      if (op == CandidateOp::conv_1d) {
        slots[e][o].weight = layout.add(base + ".k", {conv_kernel_width});
      } else if (is_parametric(op)) {
        slots[e][o].weight = layout.add(base + ".w", {h, h});
        slots[e][o].bias = layout.add(base + ".b", {h});
      }
    }
  }
  return slots;
}

Tensor apply_op(CandidateOp op, const Tensor& x, const BoundParams& weights, const OpSlot& slot) {
  Tape& tape = *x.tape();
  switch (op) {
    case CandidateOp::zero:
      return tape.constant(x.shape(), std::vector<double>(x.size(), 0.0));
    case CandidateOp::identity:
      return x;
    case CandidateOp::affine:
      return add(matmul(x, weights[*slot.weight]), weights[*slot.bias]);
    case CandidateOp::affine_tanh:
      return tanh(add(matmul(x, weights[*slot.weight]), weights[*slot.bias]));
    case CandidateOp::affine_relu:
      return relu(add(matmul(x, weights[*slot.weight]), weights[*slot.bias]));
    case CandidateOp::avg_pool_1d: {
      const double third = 1.0 / 3.0;
      return conv1d(x, tape.constant({conv_kernel_width}, {third, third, third}));
    }
    case CandidateOp::conv_1d:
      return conv1d(x, weights[*slot.weight]);
  }
  throw Error("apply_op: unhandled op");
}

EdgeMix EdgeMix::from_logits(const BoundParams& arch) {
  EdgeMix m;
  for (const auto& t : arch.tensors()) m.probs_.push_back(softmax(t));
  return m;
}

EdgeMix EdgeMix::fixed(std::vector<std::vector<double>> masks) {
  EdgeMix m;
  m.masks_ = std::move(masks);
  return m;
}

std::size_t EdgeMix::num_edges() const { return is_fixed() ? masks_.size() : probs_.size(); }

namespace {

void check_width(const Tensor& x, std::size_t width, std::size_t edge) {
  if (x.rank() != 2 || x.shape()[1] != width) {
    throw ShapeError("edge " + std::to_string(edge) + ": input shape " + to_string(x.shape()) +
                     " does not match width " + std::to_string(width));
  }
}

Tensor accumulate(const std::optional<Tensor>& acc, const Tensor& term) { return acc ? add(*acc, term) : term; }

Tensor mix_with_probs(const Tensor& x, const Tensor& probs, std::span<const CandidateOp> ops,
                      const BoundParams& weights, std::span<const OpSlot> slots) {
  std::optional<Tensor> out;
  for (std::size_t o = 0; o < ops.size(); ++o) {
    if (ops[o] == CandidateOp::zero) continue;
    out = accumulate(out, scale(apply_op(ops[o], x, weights, slots[o]), pick(probs, o)));
  }
  if (!out) return apply_op(CandidateOp::zero, x, weights, {});
  return *out;
}

Tensor mix_with_mask(const Tensor& x, const std::vector<double>& mask, std::span<const CandidateOp> ops,
                     const BoundParams& weights, std::span<const OpSlot> slots, std::optional<Tensor>& acc) {
  for (std::size_t o = 0; o < ops.size(); ++o) {
    if (ops[o] == CandidateOp::zero || mask[o] == 0.0) continue;
    auto term = apply_op(ops[o], x, weights, slots[o]);
    if (mask[o] != 1.0) term = scale(term, mask[o]);
    acc = accumulate(acc, term);
  }
  return acc ? *acc : apply_op(CandidateOp::zero, x, weights, {});
}

}  // namespace

Tensor mixed_op_forward(const Tensor& x, const Tensor& logits, std::span<const CandidateOp> ops,
                        const BoundParams& weights, std::span<const OpSlot> slots, std::size_t edge,
                        std::size_t width) {
  if (logits.size() != ops.size()) {
    throw ShapeError("edge " + std::to_string(edge) + ": " + std::to_string(logits.size()) + " logits for " +
                     std::to_string(ops.size()) + " ops");
  }
  check_width(x, width, edge);
  return mix_with_probs(x, softmax(logits), ops, weights, slots);
}

Tensor cell_forward(std::span<const Tensor> inputs, const CellSpec& spec, const EdgeMix& mix,
                    const BoundParams& weights, const CellSlots& slots) {
  if (inputs.size() != spec.num_input_nodes) {
    throw ShapeError("cell: expected " + std::to_string(spec.num_input_nodes) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  if (mix.num_edges() != spec.edges.size()) {
    throw ShapeError("cell: architecture has " + std::to_string(mix.num_edges()) + " edges, cell has " +
                     std::to_string(spec.edges.size()));
  }
  std::vector<Tensor> nodes(inputs.begin(), inputs.end());
  nodes.resize(spec.num_nodes);
  for (std::size_t n = spec.num_input_nodes; n < spec.num_nodes; ++n) {
    std::optional<Tensor> acc;
    const auto in = spec.incoming(n);
    if (in.empty()) throw ShapeError("cell: node " + std::to_string(n) + " has no incoming edges");
    for (auto e : in) {
      const Tensor& x = nodes[spec.edges[e].from];
      check_width(x, spec.width, e);
      if (mix.is_fixed()) {
        mix_with_mask(x, mix.mask(e), spec.ops, weights, slots[e], acc);
      } else {
        acc = accumulate(acc, mix_with_probs(x, mix.probs(e), spec.ops, weights, slots[e]));
      }
    }
    nodes[n] = acc ? *acc : apply_op(CandidateOp::zero, nodes[0], weights, {});
  }
  return nodes[spec.output_node()];
}

Genotype derive_genotype(const ArchParams& arch, const CellSpec& spec, std::size_t k) {
  if (k < 1) throw ConfigError("genotype: k must be at least 1");
  if (arch.layout()->size() != spec.edges.size()) throw ShapeError("genotype: architecture does not match cell");
  const auto weights = arch_weights(arch);
  Genotype g;
  g.k = k;
  for (std::size_t n = spec.num_input_nodes; n < spec.num_nodes; ++n) {
    const auto in = spec.incoming(n);
    if (in.empty()) throw ConfigError("genotype: node " + std::to_string(n) + " has no incoming edges");
    std::vector<GenotypeEntry> candidates;
    std::vector<std::size_t> op_index;
    for (auto e : in)
      for (std::size_t o = 0; o < spec.ops.size(); ++o) {
        if (spec.ops[o] == CandidateOp::zero) continue;
        candidates.push_back({e, spec.edges[e].from, spec.ops[o], weights[e][o]});
        op_index.push_back(o);
      }
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (candidates[a].weight != candidates[b].weight) return candidates[a].weight > candidates[b].weight;
      if (candidates[a].edge != candidates[b].edge) return candidates[a].edge < candidates[b].edge;
      return op_index[a] < op_index[b];
    });
    std::vector<GenotypeEntry> kept;
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i) kept.push_back(candidates[order[i]]);
    g.nodes.push_back(std::move(kept));
  }
  return g;
}

std::vector<std::vector<double>> genotype_masks(const Genotype& g, const CellSpec& spec) {
  std::vector<std::vector<double>> masks(spec.edges.size(), std::vector<double>(spec.ops.size(), 0.0));
  for (const auto& node : g.nodes)
    for (const auto& entry : node) {
      const auto it = std::find(spec.ops.begin(), spec.ops.end(), entry.op);
      if (entry.edge >= spec.edges.size() || it == spec.ops.end()) {
        throw ShapeError("genotype: entry does not belong to this cell");
      }
      masks[entry.edge][static_cast<std::size_t>(it - spec.ops.begin())] = 1.0;
    }
  return masks;
}

}  // namespace sgl
