#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "petri/grad/tensor.hpp"

namespace petri::grad {

enum class Op : std::uint8_t {
  leaf,
  constant,
  add,
  mul,
  matmul,
  sum,
  relu,
  tanh,
  softmax,
  clip,
  cosine,
  log,
  negate,
  scale,
  // Structural ops. They move data around without arithmetic.
  reshape,
  slice,
  stack,
  neighborhood_matmul,
  scatter_rows,
};

const char* op_name(Op op);

struct NodeId {
  std::uint32_t index = 0;
  bool operator==(const NodeId&) const = default;
};

using RowIndex = std::vector<std::uint32_t>;

/// Op parameters. Only the fields an op reads are meaningful for it.
struct OpAttrs {
  /// sum: reduced axis, or -1 to reduce everything to a scalar.
  /// softmax / slice / stack: the axis they act on.
  int axis = -1;
  float lo = 0.0f;      // clip
  float hi = 0.0f;      // clip
  float factor = 1.0f;  // scale
  Shape shape;          // reshape target
  std::size_t begin = 0;
  std::size_t end = 0;
  /// softmax: entries with mask == 0 are excluded and get weight 0.
  std::shared_ptr<const Tensor> mask;
  /// neighborhood_matmul: grid rows to evaluate; scatter_rows: destinations.
  std::shared_ptr<const RowIndex> rows;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  /// scatter_rows: number of rows in the output.
  std::size_t out_rows = 0;
};

/// Computes one op from input values. Shared by Tape::forward and
/// Tape::replay so that replays are bit-identical.
Tensor evaluate(Op op, std::span<const Tensor* const> inputs, const OpAttrs& attrs);

/// Reverse-mode tape. Nodes are appended in execution order, so the node
/// list is always a topological order. One tape per training segment; it is
/// not thread-safe, but independent tapes share nothing.
class Tape {
 public:
  NodeId parameter(Tensor value);
  NodeId constant(Tensor value);

  /// Generic entry point: evaluates `op`, checks the result is finite and
  /// records it. Throws ShapeError or NonFiniteError.
  NodeId forward(Op op, std::span<const NodeId> inputs, OpAttrs attrs = {});

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId sum(NodeId x, int axis = -1);
  NodeId relu(NodeId x);
  NodeId tanh(NodeId x);
  NodeId softmax(NodeId x, int axis, std::shared_ptr<const Tensor> mask = nullptr);
  NodeId clip(NodeId x, float lo, float hi);
  /// Cosine similarity over the last axis; leading axes broadcast.
  NodeId cosine(NodeId a, NodeId b);
  NodeId log(NodeId x);
  NodeId negate(NodeId x);
  NodeId scale(NodeId x, float factor);
  NodeId reshape(NodeId x, Shape shape);
  NodeId slice(NodeId x, int axis, std::size_t begin, std::size_t end);
  NodeId stack(std::span<const NodeId> xs);
  /// x: [grid_h*grid_w, C] laid out row-major over the grid, w: [9*C, F].
  /// For each selected cell, flattens its toroidal 3x3 neighborhood and
  /// multiplies by w, giving [rows.size(), F].
  NodeId neighborhood_matmul(NodeId x, NodeId w, std::shared_ptr<const RowIndex> rows,
                             std::size_t grid_h, std::size_t grid_w);
  /// x: [n, C] -> [out_rows, C] with row i written to rows[i], zeros elsewhere.
  NodeId scatter_rows(NodeId x, std::shared_ptr<const RowIndex> rows, std::size_t out_rows);

  const Tensor& value(NodeId id) const { return nodes_.at(id.index).value; }
  Op op(NodeId id) const { return nodes_.at(id.index).op; }
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(NodeId id) const { return nodes_.at(id.index).requires_grad; }

  /// Gradient of scalar `loss` with respect to each node in `wrt`. Only the
  /// subgraph between `wrt` and `loss` is visited.
  std::vector<Tensor> backward(NodeId loss, std::span<const NodeId> wrt) const;

  /// Re-evaluates every non-leaf node from the recorded leaves.
  std::vector<Tensor> replay() const;

 private:
  struct Node {
    Op op;
    std::vector<NodeId> inputs;
    Tensor value;
    OpAttrs attrs;
    bool requires_grad;
  };

  NodeId push(Node node);

  std::vector<Node> nodes_;
};

}  // namespace petri::grad
