#pragma once

// Differentiable cell search space. A cell is a DAG of nodes; every edge
// carries a softmax-weighted mixture of candidate operations whose logits are
// the architecture variables.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sgl/autodiff.hpp"
#include "sgl/params.hpp"

namespace sgl {

enum class CandidateOp { zero, identity, affine, affine_tanh, affine_relu, avg_pool_1d, conv_1d };

std::string to_string(CandidateOp op);
CandidateOp parse_candidate_op(const std::string& name);
bool is_parametric(CandidateOp op);

std::vector<CandidateOp> default_op_set();

struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  bool operator==(const Edge&) const = default;
};

struct CellSpec {
  std::size_t num_nodes = 4;
  // Node 0 is always an input; with 2 input nodes node 1 receives the output
  // of the cell before the previous one.
  std::size_t num_input_nodes = 1;
  // Feature width shared by every node.
  std::size_t width = 4;
  std::vector<Edge> edges;
  std::vector<CandidateOp> ops;

  // Every pair (i, j) with i < j and j a non-input node, ordered by j then i.
  static CellSpec dense(std::size_t num_nodes, std::size_t num_input_nodes, std::size_t width,
                        std::vector<CandidateOp> ops);

  std::size_t output_node() const { return num_nodes - 1; }
  std::vector<std::size_t> incoming(std::size_t node) const;
  // Throws ConfigError on malformed specs (cycles, dangling nodes, bad counts).
  void validate() const;

  bool operator==(const CellSpec&) const = default;
};

// Architecture logits: one entry "edge<e>" of length |ops| per edge.
using ArchParams = ParamVector;

LayoutPtr make_arch_layout(const CellSpec& spec);
// Per-edge softmax of the logits (plain values, no tape).
std::vector<std::vector<double>> arch_weights(const ArchParams& arch);

// Entry indices into a weight layout for one parametric op on one edge.
struct OpSlot {
  std::optional<std::size_t> weight;
  std::optional<std::size_t> bias;
};

// Slot table for one cell: slots[edge][op].
using CellSlots = std::vector<std::vector<OpSlot>>;

CellSlots register_cell_weights(ParamLayout& layout, const CellSpec& spec, const std::string& prefix);

// Applies one candidate op to a [n, width] input.
Tensor apply_op(CandidateOp op, const Tensor& x, const BoundParams& weights, const OpSlot& slot);

// Per-edge mixing coefficients for the ops: either differentiable
// probabilities (softmax of bound logits) or a fixed 0/1 mask from a genotype.
class EdgeMix {
 public:
  static EdgeMix from_logits(const BoundParams& arch);
  static EdgeMix fixed(std::vector<std::vector<double>> masks);

  std::size_t num_edges() const;
  bool is_fixed() const { return !masks_.empty(); }
  const Tensor& probs(std::size_t edge) const { return probs_.at(edge); }
  const std::vector<double>& mask(std::size_t edge) const { return masks_.at(edge); }

 private:
  std::vector<Tensor> probs_;
  std::vector<std::vector<double>> masks_;
};

// sum_o p_o * op_o(x) with p = softmax(logits). `edge` names the edge in errors.
Tensor mixed_op_forward(const Tensor& x, const Tensor& logits, std::span<const CandidateOp> ops,
                        const BoundParams& weights, std::span<const OpSlot> slots, std::size_t edge,
                        std::size_t width);

Tensor cell_forward(std::span<const Tensor> inputs, const CellSpec& spec, const EdgeMix& mix,
                    const BoundParams& weights, const CellSlots& slots);

struct GenotypeEntry {
  std::size_t edge = 0;
  std::size_t from = 0;
  CandidateOp op = CandidateOp::identity;
  double weight = 0.0;
  bool operator==(const GenotypeEntry&) const = default;
};

struct Genotype {
  std::size_t k = 1;
  // nodes[i] holds the retained entries for non-input node num_input_nodes + i.
  std::vector<std::vector<GenotypeEntry>> nodes;
  bool operator==(const Genotype&) const = default;
};

Genotype derive_genotype(const ArchParams& arch, const CellSpec& spec, std::size_t k);
// 0/1 masks selecting exactly the retained (edge, op) pairs.
std::vector<std::vector<double>> genotype_masks(const Genotype& g, const CellSpec& spec);

}  // namespace sgl
