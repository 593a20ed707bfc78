#include "petri/grad/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "petri/common.hpp"

namespace petri::grad {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatR>;
using MutMap = Eigen::Map<MatR>;

constexpr double kCosineEps = 1e-8;

// L2 norm of each length-`len` row, accumulated in double.
std::vector<double> row_norms(const Tensor& t, std::size_t len) {
  std::vector<double> out(len == 0 ? 0 : t.numel() / len);
  const float* p = t.data().data();
  for (std::size_t r = 0; r < out.size(); ++r, p += len) {
    double acc = 0.0;
    for (std::size_t l = 0; l < len; ++l) acc += static_cast<double>(p[l]) * p[l];
    out[r] = std::sqrt(acc);
  }
  return out;
}

[[noreturn]] void shape_fail(Op op, const std::string& what) {
  throw ShapeError(std::string(op_name(op)) + ": " + what);
}

// Right-aligned numpy-style broadcasting. Strides are expressed per output
// dimension, 0 where the input is broadcast.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> sa;
  std::vector<std::size_t> sb;
};

std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t offset = out.size() - in.size();
  for (std::size_t d = in.size(); d-- > 0;) {
    strides[d + offset] = (in[d] == 1 && out[d + offset] != 1) ? 0 : stride;
    stride *= in[d];
  }
  return strides;
}

BroadcastPlan plan_broadcast(Op op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t da = d + a.size() >= rank ? a[d + a.size() - rank] : 1;
    const std::size_t db = d + b.size() >= rank ? b[d + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      shape_fail(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[d] = da == 1 ? db : da;
  }
  return {out, broadcast_strides(a, out), broadcast_strides(b, out)};
}

template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t rank = p.out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t total = shape_numel(p.out);
  const std::size_t inner = p.out[rank - 1];
  if (total == 0 || inner == 0) return;
  const std::size_t step_a = p.sa[rank - 1];
  const std::size_t step_b = p.sb[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j * step_a, ob + j * step_b);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      oa += p.sa[d];
      ob += p.sb[d];
      if (idx[d] < p.out[d]) break;
      oa -= p.sa[d] * p.out[d];
      ob -= p.sb[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

// (outer, n, inner) split of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

std::size_t normalize_axis(Op op, int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) shape_fail(op, "axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit sp;
  for (std::size_t d = 0; d < axis; ++d) sp.outer *= s[d];
  sp.n = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) sp.inner *= s[d];
  return sp;
}

void neighbor_offsets(std::size_t cell, std::size_t gh, std::size_t gw, std::size_t out[9]) {
  const std::size_t y = cell / gw;
  const std::size_t x = cell % gw;
  std::size_t k = 0;
  for (std::size_t dy = 0; dy < 3; ++dy) {
    const std::size_t yy = (y + gh - 1 + dy) % gh;
    for (std::size_t dx = 0; dx < 3; ++dx) {
      const std::size_t xx = (x + gw - 1 + dx) % gw;
      out[k++] = yy * gw + xx;
    }
  }
}

// Materializes the [n, 9*C] neighborhood matrix for the selected cells.
std::vector<float> gather_neighborhoods(const Tensor& x, const RowIndex& rows, std::size_t gh,
                                        std::size_t gw) {
  const std::size_t c = x.dim(1);
  std::vector<float> nb(rows.size() * 9 * c);
  std::size_t nbr[9];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    neighbor_offsets(rows[i], gh, gw, nbr);
    float* dst = nb.data() + i * 9 * c;
    for (std::size_t k = 0; k < 9; ++k) {
      std::copy_n(x.data().data() + nbr[k] * c, c, dst + k * c);
    }
  }
  return nb;
}

Tensor eval_binary_elementwise(Op op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    const std::size_t n = a.numel();
    if (op == Op::add) {
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
    } else {
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
    }
    return out;
  }
  const auto plan = plan_broadcast(op, a.shape(), b.shape());
  Tensor out(plan.out);
  if (op == Op::add) {
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = a[ia] + b[ib]; });
  } else {
    for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = a[ia] * b[ib]; });
  }
  return out;
}

template <class F>
Tensor map_unary(const Tensor& x, F&& f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::matmul: return "matmul";
    case Op::sum: return "sum";
    case Op::relu: return "relu";
    case Op::tanh: return "tanh";
    case Op::softmax: return "softmax";
    case Op::clip: return "clip";
    case Op::cosine: return "cosine";
    case Op::log: return "log";
    case Op::negate: return "negate";
    case Op::scale: return "scale";
    case Op::reshape: return "reshape";
    case Op::slice: return "slice";
    case Op::stack: return "stack";
    case Op::neighborhood_matmul: return "neighborhood_matmul";
    case Op::scatter_rows: return "scatter_rows";
  }
  return "?";
}

Tensor evaluate(Op op, std::span<const Tensor* const> in, const OpAttrs& attrs) {
  auto need_inputs = [&](std::size_t n) {
    if (in.size() != n) shape_fail(op, "expected " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
  };
  switch (op) {
    case Op::leaf:
    case Op::constant:
      shape_fail(op, "leaves are not evaluated");

    case Op::add:
    case Op::mul:
      need_inputs(2);
      return eval_binary_elementwise(op, *in[0], *in[1]);

    case Op::matmul: {
      need_inputs(2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        shape_fail(op, shape_str(a.shape()) + " x " + shape_str(b.shape()));
      }
      Tensor out(Shape{a.dim(0), b.dim(1)});
      if (out.numel() == 0) return out;
      MutMap(out.data().data(), a.dim(0), b.dim(1)).noalias() =
          ConstMap(a.data().data(), a.dim(0), a.dim(1)) * ConstMap(b.data().data(), b.dim(0), b.dim(1));
      return out;
    }

    case Op::sum: {
      need_inputs(1);
      const Tensor& x = *in[0];
      if (attrs.axis == -1) {
        double acc = 0.0;
        for (float v : x.data()) acc += v;
        return Tensor::scalar(static_cast<float>(acc));
      }
      const std::size_t axis = normalize_axis(op, attrs.axis, x.rank());
      const AxisSplit sp = split_at(x.shape(), axis);
      Shape out_shape = x.shape();
      out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
      Tensor out(out_shape);
      std::vector<double> acc(sp.inner);
      for (std::size_t o = 0; o < sp.outer; ++o) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < sp.n; ++j) {
          const float* row = x.data().data() + (o * sp.n + j) * sp.inner;
          for (std::size_t i = 0; i < sp.inner; ++i) acc[i] += row[i];
        }
        for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] = static_cast<float>(acc[i]);
      }
      return out;
    }

    case Op::relu:
      need_inputs(1);
      return map_unary(*in[0], [](float v) { return v > 0.0f ? v : 0.0f; });
    case Op::tanh: {
      need_inputs(1);
      Tensor out(in[0]->shape());
      const auto n = static_cast<Eigen::Index>(out.numel());
      Eigen::Map<Eigen::ArrayXf>(out.data().data(), n) = Eigen::Map<const Eigen::ArrayXf>(in[0]->data().data(), n).tanh();
      return out;
    }
    case Op::log:
      need_inputs(1);
      return map_unary(*in[0], [](float v) { return std::log(v); });
    case Op::negate:
      need_inputs(1);
      return map_unary(*in[0], [](float v) { return -v; });
    case Op::scale: {
      need_inputs(1);
      const float f = attrs.factor;
      return map_unary(*in[0], [f](float v) { return v * f; });
    }
    case Op::clip: {
      need_inputs(1);
      if (!(attrs.lo <= attrs.hi)) shape_fail(op, "lo > hi");
      const float lo = attrs.lo, hi = attrs.hi;
      return map_unary(*in[0], [lo, hi](float v) { return std::clamp(v, lo, hi); });
    }

    case Op::softmax: {
      need_inputs(1);
      const Tensor& x = *in[0];
      const std::size_t axis = normalize_axis(op, attrs.axis, x.rank());
      const Tensor* mask = attrs.mask.get();
      if (mask && mask->shape() != x.shape()) shape_fail(op, "mask shape mismatch");
      const AxisSplit sp = split_at(x.shape(), axis);
      Tensor out(x.shape());
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const std::size_t base = o * sp.n * sp.inner + i;
          float mx = -std::numeric_limits<float>::infinity();
          for (std::size_t j = 0; j < sp.n; ++j) {
            const std::size_t at = base + j * sp.inner;
            if (!mask || (*mask)[at] != 0.0f) mx = std::max(mx, x[at]);
          }
          if (mx == -std::numeric_limits<float>::infinity()) continue;  // fully masked: all zero
          double z = 0.0;
          for (std::size_t j = 0; j < sp.n; ++j) {
            const std::size_t at = base + j * sp.inner;
            if (!mask || (*mask)[at] != 0.0f) {
              const float e = std::exp(x[at] - mx);
              out[at] = e;
              z += e;
            }
          }
          const float inv = static_cast<float>(1.0 / z);
          for (std::size_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] *= inv;
        }
      }
      return out;
    }

    case Op::cosine: {
      need_inputs(2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() == 0 || b.rank() == 0 || a.shape().back() != b.shape().back()) {
        shape_fail(op, "last axes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
      }
      const std::size_t len = a.shape().back();
      const Shape lead_a(a.shape().begin(), a.shape().end() - 1);
      const Shape lead_b(b.shape().begin(), b.shape().end() - 1);
      const auto plan = plan_broadcast(op, lead_a, lead_b);
      Tensor out(plan.out);
      const auto norm_a = row_norms(a, len);
      const auto norm_b = row_norms(b, len);
      for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        const float* pa = a.data().data() + ia * len;
        const float* pb = b.data().data() + ib * len;
        double dot = 0.0;
        for (std::size_t l = 0; l < len; ++l) dot += static_cast<double>(pa[l]) * pb[l];
        out[o] = static_cast<float>(dot / ((norm_a[ia] + kCosineEps) * (norm_b[ib] + kCosineEps)));
      });
      return out;
    }

    case Op::reshape:
      need_inputs(1);
      return in[0]->reshaped(attrs.shape);

    case Op::slice: {
      need_inputs(1);
      const Tensor& x = *in[0];
      const std::size_t axis = normalize_axis(op, attrs.axis, x.rank());
      if (attrs.begin > attrs.end || attrs.end > x.dim(axis)) shape_fail(op, "range out of bounds");
      const AxisSplit sp = split_at(x.shape(), axis);
      Shape out_shape = x.shape();
      out_shape[axis] = attrs.end - attrs.begin;
      Tensor out(out_shape);
      const std::size_t width = out_shape[axis] * sp.inner;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(x.data().data() + (o * sp.n + attrs.begin) * sp.inner, width, out.data().data() + o * width);
      }
      return out;
    }

    case Op::stack: {
      if (in.empty()) shape_fail(op, "no inputs");
      const Shape& s = in[0]->shape();
      Shape out_shape;
      out_shape.push_back(in.size());
      out_shape.insert(out_shape.end(), s.begin(), s.end());
      Tensor out(out_shape);
      const std::size_t block = in[0]->numel();
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i]->shape() != s) shape_fail(op, "inputs differ in shape");
        std::copy_n(in[i]->data().data(), block, out.data().data() + i * block);
      }
      return out;
    }

    case Op::neighborhood_matmul: {
      need_inputs(2);
      const Tensor& x = *in[0];
      const Tensor& w = *in[1];
      if (!attrs.rows) shape_fail(op, "missing rows");
      if (x.rank() != 2 || x.dim(0) != attrs.grid_h * attrs.grid_w) shape_fail(op, "x must be [H*W, C]");
      if (w.rank() != 2 || w.dim(0) != 9 * x.dim(1)) shape_fail(op, "w must be [9*C, F]");
      const RowIndex& rows = *attrs.rows;
      Tensor out(Shape{rows.size(), w.dim(1)});
      if (rows.empty()) return out;
      const auto nb = gather_neighborhoods(x, rows, attrs.grid_h, attrs.grid_w);
      MutMap(out.data().data(), rows.size(), w.dim(1)).noalias() =
          ConstMap(nb.data(), rows.size(), w.dim(0)) * ConstMap(w.data().data(), w.dim(0), w.dim(1));
      return out;
    }

    case Op::scatter_rows: {
      need_inputs(1);
      const Tensor& x = *in[0];
      if (!attrs.rows || x.rank() != 2 || x.dim(0) != attrs.rows->size()) shape_fail(op, "rows/x mismatch");
      const std::size_t c = x.dim(1);
      Tensor out(Shape{attrs.out_rows, c});
      for (std::size_t i = 0; i < attrs.rows->size(); ++i) {
        const std::size_t r = (*attrs.rows)[i];
        if (r >= attrs.out_rows) shape_fail(op, "row index out of range");
        std::copy_n(x.data().data() + i * c, c, out.data().data() + r * c);
      }
      return out;
    }
  }
  shape_fail(op, "unknown op");
}

NodeId Tape::push(Node node) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) throw Error("tape overflow");
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Tape::parameter(Tensor value) { return push({Op::leaf, {}, std::move(value), {}, true}); }

NodeId Tape::constant(Tensor value) { return push({Op::constant, {}, std::move(value), {}, false}); }

NodeId Tape::forward(Op op, std::span<const NodeId> inputs, OpAttrs attrs) {
  std::vector<const Tensor*> values;
  values.reserve(inputs.size());
  bool rg = false;
  for (NodeId id : inputs) {
    // Inputs must already be on the tape; this is what keeps it acyclic.
    if (id.index >= nodes_.size()) throw Error(std::string(op_name(op)) + ": input node not on tape");
    values.push_back(&nodes_[id.index].value);
    rg = rg || nodes_[id.index].requires_grad;
  }
  Tensor out = evaluate(op, values, attrs);
  if (!out.all_finite()) throw NonFiniteError(std::string(op_name(op)) + " produced a non-finite value");
  return push({op, std::vector<NodeId>(inputs.begin(), inputs.end()), std::move(out), std::move(attrs), rg});
}

NodeId Tape::add(NodeId a, NodeId b) { return forward(Op::add, std::array{a, b}); }
NodeId Tape::sub(NodeId a, NodeId b) { return add(a, negate(b)); }
NodeId Tape::mul(NodeId a, NodeId b) { return forward(Op::mul, std::array{a, b}); }
NodeId Tape::matmul(NodeId a, NodeId b) { return forward(Op::matmul, std::array{a, b}); }

NodeId Tape::sum(NodeId x, int axis) {
  OpAttrs at;
  at.axis = axis;
  return forward(Op::sum, std::array{x}, std::move(at));
}

NodeId Tape::relu(NodeId x) { return forward(Op::relu, std::array{x}); }
NodeId Tape::tanh(NodeId x) { return forward(Op::tanh, std::array{x}); }

NodeId Tape::softmax(NodeId x, int axis, std::shared_ptr<const Tensor> mask) {
  OpAttrs at;
  at.axis = axis;
  at.mask = std::move(mask);
  return forward(Op::softmax, std::array{x}, std::move(at));
}

NodeId Tape::clip(NodeId x, float lo, float hi) {
  OpAttrs at;
  at.lo = lo;
  at.hi = hi;
  return forward(Op::clip, std::array{x}, std::move(at));
}

NodeId Tape::cosine(NodeId a, NodeId b) { return forward(Op::cosine, std::array{a, b}); }
NodeId Tape::log(NodeId x) { return forward(Op::log, std::array{x}); }
NodeId Tape::negate(NodeId x) { return forward(Op::negate, std::array{x}); }

NodeId Tape::scale(NodeId x, float factor) {
  OpAttrs at;
  at.factor = factor;
  return forward(Op::scale, std::array{x}, std::move(at));
}

NodeId Tape::reshape(NodeId x, Shape shape) {
  OpAttrs at;
  at.shape = std::move(shape);
  return forward(Op::reshape, std::array{x}, std::move(at));
}

NodeId Tape::slice(NodeId x, int axis, std::size_t begin, std::size_t end) {
  OpAttrs at;
  at.axis = axis;
  at.begin = begin;
  at.end = end;
  return forward(Op::slice, std::array{x}, std::move(at));
}

NodeId Tape::stack(std::span<const NodeId> xs) {
  OpAttrs at;
  at.axis = 0;
  return forward(Op::stack, xs, std::move(at));
}

NodeId Tape::neighborhood_matmul(NodeId x, NodeId w, std::shared_ptr<const RowIndex> rows, std::size_t grid_h,
                                 std::size_t grid_w) {
  OpAttrs at;
  at.rows = std::move(rows);
  at.grid_h = grid_h;
  at.grid_w = grid_w;
  return forward(Op::neighborhood_matmul, std::array{x, w}, std::move(at));
}

NodeId Tape::scatter_rows(NodeId x, std::shared_ptr<const RowIndex> rows, std::size_t out_rows) {
  OpAttrs at;
  at.rows = std::move(rows);
  at.out_rows = out_rows;
  return forward(Op::scatter_rows, std::array{x}, std::move(at));
}

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> values;
  values.reserve(nodes_.size());
  std::vector<const Tensor*> in;
  for (const Node& n : nodes_) {
    if (n.op == Op::leaf || n.op == Op::constant) {
      values.push_back(n.value);
      continue;
    }
    in.clear();
    for (NodeId id : n.inputs) in.push_back(&values[id.index]);
    values.push_back(evaluate(n.op, in, n.attrs));
  }
  return values;
}

std::vector<Tensor> Tape::backward(NodeId loss, std::span<const NodeId> wrt) const {
  if (loss.index >= nodes_.size()) throw Error("backward: loss node not on tape");
  if (nodes_[loss.index].value.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(nodes_[loss.index].value.shape()));
  }
  const std::size_t count = loss.index + 1;

  // needs[i]: node i depends on some wrt node, so gradient must reach it.
  std::vector<char> needs(count, 0);
  for (NodeId id : wrt) {
    if (id.index < count) needs[id.index] = 1;
  }
  for (std::size_t i = 0; i < count; ++i) {
    for (NodeId in : nodes_[i].inputs) {
      if (in.index >= i) throw Error("backward: tape is not topologically ordered");
      if (needs[in.index]) needs[i] = 1;
    }
  }

  std::vector<Tensor> grads(count);
  std::vector<char> has(count, 0);
  auto grad_of = [&](NodeId id) -> Tensor& {
    if (!has[id.index]) {
      grads[id.index] = Tensor(nodes_[id.index].value.shape());
      has[id.index] = 1;
    }
    return grads[id.index];
  };
  auto wants = [&](NodeId id) { return needs[id.index] != 0; };

  grads[loss.index] = Tensor(nodes_[loss.index].value.shape(), 1.0f);
  has[loss.index] = 1;

  std::vector<char> is_wrt(count, 0);
  for (NodeId id : wrt) {
    if (id.index < count) is_wrt[id.index] = 1;
  }

  for (std::size_t i = count; i-- > 0;) {
    if (!has[i] || !needs[i]) continue;
    const Node& n = nodes_[i];
    const Tensor& g = grads[i];
    const Tensor& y = n.value;

    switch (n.op) {
      case Op::leaf:
      case Op::constant:
        break;

      case Op::add:
      case Op::mul: {
        const NodeId ia = n.inputs[0], ib = n.inputs[1];
        const Tensor& a = nodes_[ia.index].value;
        const Tensor& b = nodes_[ib.index].value;
        const bool mul = n.op == Op::mul;
        if (a.shape() == b.shape()) {
          if (wants(ia)) {
            Tensor& ga = grad_of(ia);
            for (std::size_t k = 0; k < g.numel(); ++k) ga[k] += mul ? g[k] * b[k] : g[k];
          }
          if (wants(ib)) {
            Tensor& gb = grad_of(ib);
            for (std::size_t k = 0; k < g.numel(); ++k) gb[k] += mul ? g[k] * a[k] : g[k];
          }
          break;
        }
        const auto plan = plan_broadcast(n.op, a.shape(), b.shape());
        if (wants(ia)) {
          Tensor& ga = grad_of(ia);
          for_each_broadcast(plan, [&](std::size_t o, std::size_t pa, std::size_t pb) {
            ga[pa] += mul ? g[o] * b[pb] : g[o];
          });
        }
        if (wants(ib)) {
          Tensor& gb = grad_of(ib);
          for_each_broadcast(plan, [&](std::size_t o, std::size_t pa, std::size_t pb) {
            gb[pb] += mul ? g[o] * a[pa] : g[o];
          });
        }
        break;
      }

      case Op::matmul: {
        const NodeId ia = n.inputs[0], ib = n.inputs[1];
        const Tensor& a = nodes_[ia.index].value;
        const Tensor& b = nodes_[ib.index].value;
        const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
        if (m == 0 || k == 0 || nn == 0) break;
        const ConstMap G(g.data().data(), m, nn);
        if (wants(ia)) {
          MutMap(grad_of(ia).data().data(), m, k).noalias() += G * ConstMap(b.data().data(), k, nn).transpose();
        }
        if (wants(ib)) {
          MutMap(grad_of(ib).data().data(), k, nn).noalias() += ConstMap(a.data().data(), m, k).transpose() * G;
        }
        break;
      }

      case Op::sum: {
        const NodeId ix = n.inputs[0];
        if (!wants(ix)) break;
        Tensor& gx = grad_of(ix);
        if (n.attrs.axis == -1) {
          const float gv = g[0];
          for (float& v : gx.data()) v += gv;
          break;
        }
        const std::size_t axis = normalize_axis(n.op, n.attrs.axis, gx.rank());
        const AxisSplit sp = split_at(gx.shape(), axis);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t j = 0; j < sp.n; ++j) {
            float* row = gx.data().data() + (o * sp.n + j) * sp.inner;
            const float* src = g.data().data() + o * sp.inner;
            for (std::size_t q = 0; q < sp.inner; ++q) row[q] += src[q];
          }
        }
        break;
      }

      case Op::relu:
      case Op::tanh:
      case Op::clip:
      case Op::log:
      case Op::negate:
      case Op::scale: {
        const NodeId ix = n.inputs[0];
        if (!wants(ix)) break;
        Tensor& gx = grad_of(ix);
        const Tensor& x = nodes_[ix.index].value;
        const std::size_t cnt = g.numel();
        switch (n.op) {
          case Op::relu:
            for (std::size_t k = 0; k < cnt; ++k) gx[k] += x[k] > 0.0f ? g[k] : 0.0f;
            break;
          case Op::tanh:
            for (std::size_t k = 0; k < cnt; ++k) gx[k] += g[k] * (1.0f - y[k] * y[k]);
            break;
          case Op::clip:
            // Subgradient 1 on the closed interval, 0 outside.
            for (std::size_t k = 0; k < cnt; ++k) {
              gx[k] += (x[k] >= n.attrs.lo && x[k] <= n.attrs.hi) ? g[k] : 0.0f;
            }
            break;
          case Op::log:
            for (std::size_t k = 0; k < cnt; ++k) gx[k] += g[k] / x[k];
            break;
          case Op::negate:
            for (std::size_t k = 0; k < cnt; ++k) gx[k] -= g[k];
            break;
          default:
            for (std::size_t k = 0; k < cnt; ++k) gx[k] += g[k] * n.attrs.factor;
            break;
        }
        break;
      }

      case Op::softmax: {
        const NodeId ix = n.inputs[0];
        if (!wants(ix)) break;
        Tensor& gx = grad_of(ix);
        const std::size_t axis = normalize_axis(n.op, n.attrs.axis, y.rank());
        const AxisSplit sp = split_at(y.shape(), axis);
        for (std::size_t o = 0; o < sp.outer; ++o) {
          for (std::size_t q = 0; q < sp.inner; ++q) {
            const std::size_t base = o * sp.n * sp.inner + q;
            double dot = 0.0;
            for (std::size_t j = 0; j < sp.n; ++j) dot += static_cast<double>(y[base + j * sp.inner]) * g[base + j * sp.inner];
            for (std::size_t j = 0; j < sp.n; ++j) {
              const std::size_t at = base + j * sp.inner;
              gx[at] += y[at] * static_cast<float>(g[at] - dot);
            }
          }
        }
        break;
      }

      case Op::cosine: {
        const NodeId ia = n.inputs[0], ib = n.inputs[1];
        const Tensor& a = nodes_[ia.index].value;
        const Tensor& b = nodes_[ib.index].value;
        const std::size_t len = a.shape().back();
        const Shape lead_a(a.shape().begin(), a.shape().end() - 1);
        const Shape lead_b(b.shape().begin(), b.shape().end() - 1);
        const auto plan = plan_broadcast(n.op, lead_a, lead_b);
        Tensor* ga = wants(ia) ? &grad_of(ia) : nullptr;
        Tensor* gb = wants(ib) ? &grad_of(ib) : nullptr;
        const auto norm_a = row_norms(a, len);
        const auto norm_b = row_norms(b, len);
        for_each_broadcast(plan, [&](std::size_t o, std::size_t pa, std::size_t pb) {
          const double go = g[o];
          if (go == 0.0) return;
          const float* va = a.data().data() + pa * len;
          const float* vb = b.data().data() + pb * len;
          double dot = 0.0;
          for (std::size_t l = 0; l < len; ++l) dot += static_cast<double>(va[l]) * vb[l];
          const double na = norm_a[pa], nb = norm_b[pb];
          const double da = na + kCosineEps, db = nb + kCosineEps;
          if (ga) {
            float* out = ga->data().data() + pa * len;
            const double c1 = go / (da * db);
            const double c2 = na > 0.0 ? go * dot / (da * da * db * na) : 0.0;
            for (std::size_t l = 0; l < len; ++l) out[l] += static_cast<float>(c1 * vb[l] - c2 * va[l]);
          }
          if (gb) {
            float* out = gb->data().data() + pb * len;
            const double c1 = go / (da * db);
            const double c2 = nb > 0.0 ? go * dot / (db * db * da * nb) : 0.0;
            for (std::size_t l = 0; l < len; ++l) out[l] += static_cast<float>(c1 * va[l] - c2 * vb[l]);
          }
        });
        break;
      }

      case Op::reshape: {
        const NodeId ix = n.inputs[0];
        if (!wants(ix)) break;
        Tensor& gx = grad_of(ix);
        for (std::size_t k = 0; k < g.numel(); ++k) gx[k] += g[k];
        break;
      }

      case Op::slice: {
        const NodeId ix = n.inputs[0];
        if (!wants(ix)) break;
        Tensor& gx = grad_of(ix);
        const std::size_t axis = normalize_axis(n.op, n.attrs.axis, gx.rank());
        const AxisSplit sp = split_at(gx.shape(), axis);
        const std::size_t width = (n.attrs.end - n.attrs.begin) * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o) {
          float* dst = gx.data().data() + (o * sp.n + n.attrs.begin) * sp.inner;
          const float* src = g.data().data() + o * width;
          for (std::size_t q = 0; q < width; ++q) dst[q] += src[q];
        }
        break;
      }

      case Op::stack: {
        const std::size_t block = g.numel() / n.inputs.size();
        for (std::size_t s = 0; s < n.inputs.size(); ++s) {
          if (!wants(n.inputs[s])) continue;
          Tensor& gx = grad_of(n.inputs[s]);
          const float* src = g.data().data() + s * block;
          for (std::size_t q = 0; q < block; ++q) gx[q] += src[q];
        }
        break;
      }

      case Op::neighborhood_matmul: {
        const NodeId ix = n.inputs[0], iw = n.inputs[1];
        const Tensor& x = nodes_[ix.index].value;
        const Tensor& w = nodes_[iw.index].value;
        const RowIndex& rows = *n.attrs.rows;
        if (rows.empty()) break;
        const std::size_t c = x.dim(1), f = w.dim(1), k9 = w.dim(0);
        const ConstMap G(g.data().data(), rows.size(), f);
        if (wants(iw)) {
          const auto nb = gather_neighborhoods(x, rows, n.attrs.grid_h, n.attrs.grid_w);
          MutMap(grad_of(iw).data().data(), k9, f).noalias() += ConstMap(nb.data(), rows.size(), k9).transpose() * G;
        }
        if (wants(ix)) {
          MatR gnb = G * ConstMap(w.data().data(), k9, f).transpose();
          Tensor& gx = grad_of(ix);
          std::size_t nbr[9];
          for (std::size_t r = 0; r < rows.size(); ++r) {
            neighbor_offsets(rows[r], n.attrs.grid_h, n.attrs.grid_w, nbr);
            const float* src = gnb.data() + r * k9;
            for (std::size_t kk = 0; kk < 9; ++kk) {
              float* dst = gx.data().data() + nbr[kk] * c;
              for (std::size_t q = 0; q < c; ++q) dst[q] += src[kk * c + q];
            }
          }
        }
        break;
      }

      case Op::scatter_rows: {
        const NodeId ix = n.inputs[0];
        if (!wants(ix)) break;
        Tensor& gx = grad_of(ix);
        const std::size_t c = gx.dim(1);
        const RowIndex& rows = *n.attrs.rows;
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const float* src = g.data().data() + rows[r] * c;
          float* dst = gx.data().data() + r * c;
          for (std::size_t q = 0; q < c; ++q) dst[q] += src[q];
        }
        break;
      }
    }
    // Interior gradients are not needed once propagated.
    if (!is_wrt[i]) {
      grads[i] = Tensor();
      has[i] = 2;
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (NodeId id : wrt) {
    if (id.index < count && has[id.index] == 1) {
      out.push_back(grads[id.index]);
    } else {
      out.emplace_back(nodes_.at(id.index).value.shape());
    }
  }
  return out;
}

}  // namespace petri::grad
