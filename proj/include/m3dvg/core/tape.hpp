#ifndef M3DVG_CORE_TAPE_HPP_
#define M3DVG_CORE_TAPE_HPP_

// Reverse-mode differentiation over rank-2 tensors.
//
// A Tape records every operation in creation order, so node ids are already
// a topological order and backward is a single reverse sweep. Vars are cheap
// handles (tape pointer + node id); the tape must outlive them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "m3dvg/core/error.hpp"
#include "m3dvg/core/tensor.hpp"

namespace m3dvg {

class Tape;
class GradAccumulator;
class Gradients;

struct Var;
inline Gradients backward(Var output);

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradAccumulator& acc)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Rank-1 values are stored as a single row.
  Var leaf(Tensor value, bool trainable = true) {
    if (value.rank() == 1) value = value.reshaped({1, value.cols()});
    nodes_.push_back(Node{std::move(value), {}, trainable, true, "leaf"});
    return Var{this, nodes_.size() - 1};
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(Tensor value, BackwardFn backward, const char* op) {
    nodes_.push_back(Node{std::move(value), std::move(backward), false, false, op});
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  std::size_t size() const { return nodes_.size(); }
  bool is_trainable_leaf(std::size_t id) const {
    return nodes_[id].leaf && nodes_[id].trainable;
  }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }

  std::vector<Var> trainable_leaves() {
    std::vector<Var> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (is_trainable_leaf(i)) out.push_back(Var{this, i});
    return out;
  }

 private:
  friend class GradAccumulator;
  friend class Gradients;
  friend Gradients backward(Var output);

  struct Node {
    Tensor value;
    BackwardFn backward;
    bool trainable = false;
    bool leaf = false;
    const char* op = "";
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

// Lazily allocated gradient slots, one per tape node.
class GradAccumulator {
 public:
  explicit GradAccumulator(const Tape& tape) : tape_(&tape), grads_(tape.size()) {}

  Tensor& slot(std::size_t id) {
    Tensor& g = grads_[id];
    if (g.empty()) g = Tensor::zeros(tape_->value(id).shape());
    return g;
  }
  Tensor& slot(Var v) { return slot(v.id); }
  bool has(std::size_t id) const { return !grads_[id].empty(); }
  const Tensor& get(std::size_t id) const { return grads_[id]; }

 private:
  friend Gradients backward(Var output);
  const Tape* tape_;
  std::vector<Tensor> grads_;
};

class Gradients {
 public:
  Gradients(const Tape& tape, std::vector<Tensor> grads)
      : tape_(&tape), grads_(std::move(grads)) {}

  // Nodes that did not contribute to the output get an all-zero gradient.
  Tensor operator[](Var v) const {
    if (v.id < grads_.size() && !grads_[v.id].empty()) return grads_[v.id];
    return Tensor::zeros(tape_->value(v.id).shape());
  }

 private:
  const Tape* tape_;
  std::vector<Tensor> grads_;
};

// Gradients of a scalar output with respect to every node recorded before it.
inline Gradients backward(Var output) {
  Tape& tape = *output.tape;
  const Tensor& out = output.value();
  if (out.size() != 1)
    throw ContractError("backward: output must be scalar, got shape " +
                        shape_str(out.shape()));
  GradAccumulator acc(tape);
  acc.slot(output.id)[0] = 1.0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    if (!acc.has(i)) continue;
    const auto& node = tape.nodes_[i];
    if (node.backward) {
      // Backward closures only write to parents, which have smaller ids.
      node.backward(acc.grads_[i], acc);
    }
  }
  return Gradients(tape, std::move(acc.grads_));
}

namespace detail {

inline Tensor make_value(Shape shape, std::vector<double> data, const char* op) {
  for (double v : data)
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + ": non-finite value in output " +
                         shape_str(shape));
  return Tensor(std::move(shape), std::move(data));
}

inline void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr)
    throw ContractError(std::string(op) + ": operands live on different tapes");
}

enum class Broadcast { kSame, kRow, kCol, kScalar };

inline Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  throw ShapeError(std::string(op) + ": cannot combine " + shape_str(a.shape()) +
                   " with " + shape_str(b.shape()));
}

inline std::size_t bindex(Broadcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Broadcast::kSame: return r * cols + c;
    case Broadcast::kRow: return c;
    case Broadcast::kCol: return r;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

template <class Fwd, class DA, class DB>
Var binary(Var a, Var b, const char* op, Fwd fwd, DA da, DB db) {
  require_same_tape(a, b, op);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Broadcast kind = classify(av, bv, op);
  std::size_t rows = av.rows(), cols = av.cols();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = fwd(av[r * cols + c], bv[bindex(kind, r, c, cols)]);
  Tape* tape = a.tape;
  std::size_t ia = a.id, ib = b.id;
  return tape->record(
      make_value(av.shape(), std::move(out), op),
      [tape, ia, ib, kind, rows, cols, da, db](const Tensor& g, GradAccumulator& acc) {
        const Tensor& av = tape->value(ia);
        const Tensor& bv = tape->value(ib);
        Tensor& ga = acc.slot(ia);
        for (std::size_t i = 0; i < rows * cols; ++i) {
          std::size_t j = bindex(kind, i / cols, i % cols, cols);
          ga[i] += g[i] * da(av[i], bv[j]);
        }
        Tensor& gb = acc.slot(ib);
        for (std::size_t i = 0; i < rows * cols; ++i) {
          std::size_t j = bindex(kind, i / cols, i % cols, cols);
          gb[j] += g[i] * db(av[i], bv[j]);
        }
      },
      op);
}

// Elementwise map; the derivative sees input x and output y.
template <class Fwd, class Deriv>
Var unary(Var a, const char* op, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  Tape* tape = a.tape;
  std::size_t ia = a.id;
  std::size_t iy = tape->size();
  return tape->record(
      make_value(av.shape(), std::move(out), op),
      [tape, ia, iy, deriv](const Tensor& g, GradAccumulator& acc) {
        const Tensor& x = tape->value(ia);
        const Tensor& y = tape->value(iy);
        Tensor& gx = acc.slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(x[i], y[i]);
      },
      op);
}

}  // namespace detail

}  // namespace m3dvg

#endif  // M3DVG_CORE_TAPE_HPP_
