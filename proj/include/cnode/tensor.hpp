#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cnode/common.hpp"

namespace cnode {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Primitive kinds recorded on the tape. Shape rules:
//   matmul            (m,k)x(k,n)->(m,n)  or  (m,k)x(k)->(m)
//   add, sub          same shape
//   mul               same shape, or either operand a scalar {1} (broadcast)
//   scale             any shape, multiplies by a plain constant
//   tanh, softplus,
//   exp, log, square  elementwise, any shape
//   sum, mean         any shape -> scalar {1}
//   concat            rank-1 inputs -> rank-1
//   slice             rank-1, [offset, offset+length)
//   broadcast_add_row (m,n) + (n) -> (m,n)
enum class Op {
  kLeaf,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kTanh,
  kSoftplus,
  kExp,
  kLog,
  kSquare,
  kSum,
  kMean,
  kConcat,
  kSlice,
  kBroadcastAddRow,
};

const char* op_name(Op op);

// Extra, non-differentiable operands of a primitive.
struct OpExtra {
  double scalar = 0.0;       // scale factor
  std::size_t offset = 0;    // slice start
  std::size_t length = 0;    // slice length
};

class Tape;

// Dense 64-bit real array. A Tensor is either detached (plain data) or a
// handle to a node on a Tape; values are immutable once created.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  const std::vector<double>& values() const;

  // Scalar access; requires size() == 1.
  double value() const;
  double at(std::size_t i) const { return values()[i]; }

  int node() const { return node_; }
  bool on_tape() const { return node_ >= 0; }

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  int node_ = -1;
  const Tape* tape_ = nullptr;
};

// Reverse-mode differentiation tape. Nodes are appended in execution order,
// so parents always precede children; the backward sweep walks the record
// once in reverse. Single-writer: no concurrent use of one tape.
class Tape {
 public:
  // check_finite: scan every primitive's output and reject NaN/Inf. On by
  // default; can be disabled for speed once a model is trusted.
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a tensor as a differentiable leaf on this tape.
  Tensor leaf(const Tensor& detached);
  Tensor leaf(Shape shape, std::vector<double> values);

  // Records one primitive. Detached inputs are auto-registered as leaves.
  Tensor apply(Op op, const std::vector<Tensor>& inputs, const OpExtra& extra = {});

  std::size_t size() const { return nodes_.size(); }
  bool check_finite() const { return check_finite_; }

  // Gradient of a scalar root with respect to every node. Nodes off the
  // path to the root hold zero gradient.
  class Gradients {
   public:
    Tensor at(const Tensor& t) const;
    Tensor at(int node) const;
    bool touched(const Tensor& t) const;

   private:
    friend class Tape;
    Gradients(const Tape* tape, std::vector<std::vector<double>> g)
        : tape_(tape), g_(std::move(g)) {}
    const Tape* tape_;
    std::vector<std::vector<double>> g_;
  };

  Gradients backward(const Tensor& root) const;

 private:
  struct Node {
    Op op;
    Shape shape;
    std::shared_ptr<const std::vector<double>> out;
    std::vector<int> parents;
    OpExtra extra;
  };

  Tensor wrap(int node) const;
  int push(Op op, Shape shape, std::vector<double> values, std::vector<int> parents,
           const OpExtra& extra);

  std::vector<Node> nodes_;
  bool check_finite_;
};

// Free-function aliases over Tape::apply.
Tensor apply_primitive(Tape& tape, Op op, const std::vector<Tensor>& inputs,
                       const OpExtra& extra = {});

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);
Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor scale(Tape& t, const Tensor& a, double c);
Tensor tanh(Tape& t, const Tensor& a);
Tensor softplus(Tape& t, const Tensor& a);
Tensor exp(Tape& t, const Tensor& a);
Tensor log(Tape& t, const Tensor& a);
Tensor square(Tape& t, const Tensor& a);
Tensor sum(Tape& t, const Tensor& a);
Tensor mean(Tape& t, const Tensor& a);
Tensor concat(Tape& t, const std::vector<Tensor>& parts);
Tensor slice(Tape& t, const Tensor& a, std::size_t offset, std::size_t length);
Tensor broadcast_add_row(Tape& t, const Tensor& mat, const Tensor& row);

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |central| + 1e-12) for a scalar-valued tensor function.
using TensorFn = std::function<Tensor(Tape&, const Tensor&)>;
double grad_check(const TensorFn& f, const Tensor& at, double step);

}  // namespace cnode
