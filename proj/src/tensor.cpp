#include "cnode/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cnode {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << ")";
  return os.str();
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kTanh: return "tanh";
    case Op::kSoftplus: return "softplus";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kBroadcastAddRow: return "broadcast_add_row";
  }
  return "?";
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != values.size()) {
    throw ContractError("Tensor: shape " + shape_str(shape_) + " does not match " +
                        std::to_string(values.size()) + " values");
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(Shape shape) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

const std::vector<double>& Tensor::values() const {
  if (!data_) throw ContractError("Tensor: access to empty tensor");
  return *data_;
}

double Tensor::value() const {
  if (size() != 1) {
    throw ContractError("Tensor::value: tensor of shape " + shape_str(shape_) +
                        " is not a scalar");
  }
  return (*data_)[0];
}

namespace {

void check_all_finite(const std::vector<double>& v, Op op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op_name(op)) + ": non-finite output");
    }
  }
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor Tape::wrap(int node) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  Tensor t;
  t.shape_ = n.shape;
  t.data_ = n.out;
  t.node_ = node;
  t.tape_ = this;
  return t;
}

int Tape::push(Op op, Shape shape, std::vector<double> values, std::vector<int> parents,
               const OpExtra& extra) {
  if (check_finite_ && op != Op::kLeaf) check_all_finite(values, op);
  Node n;
  n.op = op;
  n.shape = std::move(shape);
  n.out = std::make_shared<const std::vector<double>>(std::move(values));
  n.parents = std::move(parents);
  n.extra = extra;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::leaf(const Tensor& detached) {
  Node n;
  n.op = Op::kLeaf;
  n.shape = detached.shape();
  n.out = detached.data_ ? detached.data_
                         : std::make_shared<const std::vector<double>>();
  nodes_.push_back(std::move(n));
  return wrap(static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
  return leaf(Tensor(std::move(shape), std::move(values)));
}

Tensor Tape::apply(Op op, const std::vector<Tensor>& inputs, const OpExtra& extra) {
  if (op == Op::kLeaf) {
    throw ContractError("apply: leaf is not a primitive; use Tape::leaf");
  }
  // Register detached inputs first: appending leaves may reallocate the
  // node vector, so pointers into it are only taken afterwards.
  std::vector<int> pids;
  pids.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    if (!in.on_tape()) {
      pids.push_back(leaf(in).node());
    } else if (in.tape_ != this) {
      throw ContractError(std::string(op_name(op)) + ": input belongs to a different tape");
    } else {
      pids.push_back(in.node());
    }
  }
  std::vector<const std::vector<double>*> pv;
  pv.reserve(inputs.size());
  std::vector<const Shape*> ps;
  ps.reserve(inputs.size());
  for (int id : pids) {
    pv.push_back(nodes_[static_cast<std::size_t>(id)].out.get());
    ps.push_back(&nodes_[static_cast<std::size_t>(id)].shape);
  }

  auto need_inputs = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ContractError(std::string(op_name(op)) + ": expected " + std::to_string(n) +
                          " inputs, got " + std::to_string(inputs.size()));
    }
  };
  auto mismatch = [&](const Shape& a, const Shape& b) -> ContractError {
    return ContractError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(a) +
                         " and " + shape_str(b));
  };

  Shape out_shape;
  std::vector<double> out;

  switch (op) {
    case Op::kMatmul: {
      need_inputs(2);
      const Shape& sa = *ps[0];
      const Shape& sb = *ps[1];
      if (sa.size() != 2 || (sb.size() != 1 && sb.size() != 2)) throw mismatch(sa, sb);
      std::size_t m = sa[0], k = sa[1];
      const std::vector<double>& A = *pv[0];
      const std::vector<double>& B = *pv[1];
      if (sb.size() == 1) {
        if (sb[0] != k) throw mismatch(sa, sb);
        out_shape = {m};
        out.assign(m, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          const double* row = A.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) acc += row[p] * B[p];
          out[i] = acc;
        }
      } else {
        if (sb[0] != k) throw mismatch(sa, sb);
        std::size_t n = sb[1];
        out_shape = {m, n};
        out.assign(m * n, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double a = A[i * k + p];
            if (a == 0.0) continue;
            const double* brow = B.data() + p * n;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += a * brow[j];
          }
        }
      }
      break;
    }
    case Op::kAdd:
    case Op::kSub: {
      need_inputs(2);
      if (*ps[0] != *ps[1]) throw mismatch(*ps[0], *ps[1]);
      out_shape = *ps[0];
      const std::vector<double>& a = *pv[0];
      const std::vector<double>& b = *pv[1];
      out.resize(a.size());
      if (op == Op::kAdd) {
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
      } else {
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
      }
      break;
    }
    case Op::kMul: {
      need_inputs(2);
      const std::vector<double>& a = *pv[0];
      const std::vector<double>& b = *pv[1];
      if (*ps[0] == *ps[1]) {
        out_shape = *ps[0];
        out.resize(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
      } else if (a.size() == 1) {
        out_shape = *ps[1];
        out.resize(b.size());
        for (std::size_t i = 0; i < b.size(); ++i) out[i] = a[0] * b[i];
      } else if (b.size() == 1) {
        out_shape = *ps[0];
        out.resize(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[0];
      } else {
        throw mismatch(*ps[0], *ps[1]);
      }
      break;
    }
    case Op::kScale: {
      need_inputs(1);
      out_shape = *ps[0];
      const std::vector<double>& a = *pv[0];
      out.resize(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = extra.scalar * a[i];
      break;
    }
    case Op::kTanh:
    case Op::kSoftplus:
    case Op::kExp:
    case Op::kLog:
    case Op::kSquare: {
      need_inputs(1);
      out_shape = *ps[0];
      const std::vector<double>& a = *pv[0];
      out.resize(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        double x = a[i];
        switch (op) {
          case Op::kTanh: out[i] = std::tanh(x); break;
          case Op::kSoftplus: out[i] = stable_softplus(x); break;
          case Op::kExp: out[i] = std::exp(x); break;
          case Op::kLog: out[i] = std::log(x); break;
          default: out[i] = x * x; break;
        }
      }
      break;
    }
    case Op::kSum:
    case Op::kMean: {
      need_inputs(1);
      const std::vector<double>& a = *pv[0];
      if (a.empty()) {
        throw ContractError(std::string(op_name(op)) + ": empty input");
      }
      double acc = 0.0;
      for (double x : a) acc += x;
      if (op == Op::kMean) acc /= static_cast<double>(a.size());
      out_shape = {1};
      out = {acc};
      break;
    }
    case Op::kConcat: {
      if (inputs.empty()) throw ContractError("concat: no inputs");
      std::size_t total = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (ps[i]->size() != 1) {
          throw ContractError("concat: rank-1 inputs required, got " + shape_str(*ps[i]));
        }
        total += (*ps[i])[0];
      }
      out_shape = {total};
      out.reserve(total);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        out.insert(out.end(), pv[i]->begin(), pv[i]->end());
      }
      break;
    }
    case Op::kSlice: {
      need_inputs(1);
      if (ps[0]->size() != 1) {
        throw ContractError("slice: rank-1 input required, got " + shape_str(*ps[0]));
      }
      std::size_t n = (*ps[0])[0];
      if (extra.offset + extra.length > n || extra.length == 0) {
        throw ContractError("slice: range [" + std::to_string(extra.offset) + ", " +
                            std::to_string(extra.offset + extra.length) +
                            ") out of bounds for " + shape_str(*ps[0]));
      }
      out_shape = {extra.length};
      out.assign(pv[0]->begin() + static_cast<std::ptrdiff_t>(extra.offset),
                 pv[0]->begin() + static_cast<std::ptrdiff_t>(extra.offset + extra.length));
      break;
    }
    case Op::kBroadcastAddRow: {
      need_inputs(2);
      const Shape& sa = *ps[0];
      const Shape& sb = *ps[1];
      if (sa.size() != 2 || sb.size() != 1 || sb[0] != sa[1]) throw mismatch(sa, sb);
      std::size_t m = sa[0], n = sa[1];
      const std::vector<double>& A = *pv[0];
      const std::vector<double>& r = *pv[1];
      out_shape = sa;
      out.resize(m * n);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] + r[j];
      }
      break;
    }
    case Op::kLeaf:
      break;  // unreachable
  }

  int id = push(op, std::move(out_shape), std::move(out), std::move(pids), extra);
  return wrap(id);
}

Tape::Gradients Tape::backward(const Tensor& root) const {
  if (!root.on_tape() || root.tape_ != this) {
    throw ContractError("backward: root is not on this tape");
  }
  if (root.size() != 1) {
    throw ContractError("backward: root must be scalar, got shape " + shape_str(root.shape()));
  }

  std::vector<std::vector<double>> g(nodes_.size());
  g[static_cast<std::size_t>(root.node())] = {1.0};

  auto grad_of = [&](int id) -> std::vector<double>& {
    auto& buf = g[static_cast<std::size_t>(id)];
    if (buf.empty()) {
      buf.assign(nodes_[static_cast<std::size_t>(id)].out->size(), 0.0);
    }
    return buf;
  };

  for (int i = root.node(); i >= 0; --i) {
    const auto& gi = g[static_cast<std::size_t>(i)];
    if (gi.empty()) continue;  // not on any path to the root
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.op == Op::kLeaf) continue;

    auto pval = [&](std::size_t p) -> const std::vector<double>& {
      return *nodes_[static_cast<std::size_t>(n.parents[p])].out;
    };
    auto pshape = [&](std::size_t p) -> const Shape& {
      return nodes_[static_cast<std::size_t>(n.parents[p])].shape;
    };

    switch (n.op) {
      case Op::kMatmul: {
        const Shape& sa = pshape(0);
        const Shape& sb = pshape(1);
        std::size_t m = sa[0], k = sa[1];
        const std::vector<double>& A = pval(0);
        const std::vector<double>& B = pval(1);
        auto& ga = grad_of(n.parents[0]);
        auto& gb = grad_of(n.parents[1]);
        if (sb.size() == 1) {
          for (std::size_t i2 = 0; i2 < m; ++i2) {
            double gi2 = gi[i2];
            if (gi2 == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) {
              ga[i2 * k + p] += gi2 * B[p];
              gb[p] += A[i2 * k + p] * gi2;
            }
          }
        } else {
          std::size_t nn = sb[1];
          for (std::size_t i2 = 0; i2 < m; ++i2) {
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const double* grow = gi.data() + i2 * nn;
              const double* brow = B.data() + p * nn;
              for (std::size_t j = 0; j < nn; ++j) acc += grow[j] * brow[j];
              ga[i2 * k + p] += acc;
              double a = A[i2 * k + p];
              if (a != 0.0) {
                double* gbrow = gb.data() + p * nn;
                for (std::size_t j = 0; j < nn; ++j) gbrow[j] += a * grow[j];
              }
            }
          }
        }
        break;
      }
      case Op::kAdd: {
        auto& ga = grad_of(n.parents[0]);
        auto& gb = grad_of(n.parents[1]);
        for (std::size_t j = 0; j < gi.size(); ++j) {
          ga[j] += gi[j];
          gb[j] += gi[j];
        }
        break;
      }
      case Op::kSub: {
        auto& ga = grad_of(n.parents[0]);
        auto& gb = grad_of(n.parents[1]);
        for (std::size_t j = 0; j < gi.size(); ++j) {
          ga[j] += gi[j];
          gb[j] -= gi[j];
        }
        break;
      }
      case Op::kMul: {
        const std::vector<double>& a = pval(0);
        const std::vector<double>& b = pval(1);
        auto& ga = grad_of(n.parents[0]);
        auto& gb = grad_of(n.parents[1]);
        if (a.size() == b.size()) {
          for (std::size_t j = 0; j < gi.size(); ++j) {
            ga[j] += gi[j] * b[j];
            gb[j] += gi[j] * a[j];
          }
        } else if (a.size() == 1) {
          double acc = 0.0;
          for (std::size_t j = 0; j < gi.size(); ++j) {
            acc += gi[j] * b[j];
            gb[j] += gi[j] * a[0];
          }
          ga[0] += acc;
        } else {
          double acc = 0.0;
          for (std::size_t j = 0; j < gi.size(); ++j) {
            acc += gi[j] * a[j];
            ga[j] += gi[j] * b[0];
          }
          gb[0] += acc;
        }
        break;
      }
      case Op::kScale: {
        auto& ga = grad_of(n.parents[0]);
        for (std::size_t j = 0; j < gi.size(); ++j) ga[j] += n.extra.scalar * gi[j];
        break;
      }
      case Op::kTanh: {
        const std::vector<double>& y = *n.out;
        auto& ga = grad_of(n.parents[0]);
        for (std::size_t j = 0; j < gi.size(); ++j) ga[j] += gi[j] * (1.0 - y[j] * y[j]);
        break;
      }
      case Op::kSoftplus: {
        const std::vector<double>& x = pval(0);
        auto& ga = grad_of(n.parents[0]);
        for (std::size_t j = 0; j < gi.size(); ++j) ga[j] += gi[j] * sigmoid(x[j]);
        break;
      }
      case Op::kExp: {
        const std::vector<double>& y = *n.out;
        auto& ga = grad_of(n.parents[0]);
        for (std::size_t j = 0; j < gi.size(); ++j) ga[j] += gi[j] * y[j];
        break;
      }
      case Op::kLog: {
        const std::vector<double>& x = pval(0);
        auto& ga = grad_of(n.parents[0]);
        for (std::size_t j = 0; j < gi.size(); ++j) ga[j] += gi[j] / x[j];
        break;
      }
      case Op::kSquare: {
        const std::vector<double>& x = pval(0);
        auto& ga = grad_of(n.parents[0]);
        for (std::size_t j = 0; j < gi.size(); ++j) ga[j] += 2.0 * x[j] * gi[j];
        break;
      }
      case Op::kSum: {
        auto& ga = grad_of(n.parents[0]);
        for (std::size_t j = 0; j < ga.size(); ++j) ga[j] += gi[0];
        break;
      }
      case Op::kMean: {
        auto& ga = grad_of(n.parents[0]);
        double s = gi[0] / static_cast<double>(ga.size());
        for (std::size_t j = 0; j < ga.size(); ++j) ga[j] += s;
        break;
      }
      case Op::kConcat: {
        std::size_t off = 0;
        for (std::size_t p = 0; p < n.parents.size(); ++p) {
          auto& gp = grad_of(n.parents[p]);
          for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += gi[off + j];
          off += gp.size();
        }
        break;
      }
      case Op::kSlice: {
        auto& ga = grad_of(n.parents[0]);
        for (std::size_t j = 0; j < gi.size(); ++j) ga[n.extra.offset + j] += gi[j];
        break;
      }
      case Op::kBroadcastAddRow: {
        auto& ga = grad_of(n.parents[0]);
        auto& gr = grad_of(n.parents[1]);
        std::size_t cols = pshape(1)[0];
        for (std::size_t j = 0; j < gi.size(); ++j) {
          ga[j] += gi[j];
          gr[j % cols] += gi[j];
        }
        break;
      }
      case Op::kLeaf:
        break;
    }
  }

  return Gradients(this, std::move(g));
}

Tensor Tape::Gradients::at(const Tensor& t) const {
  if (!t.on_tape() || t.tape_ != tape_) {
    throw ContractError("Gradients: tensor is not on the differentiated tape");
  }
  return at(t.node());
}

Tensor Tape::Gradients::at(int node) const {
  const auto& n = tape_->nodes_[static_cast<std::size_t>(node)];
  const auto& buf = g_[static_cast<std::size_t>(node)];
  if (buf.empty()) return Tensor::zeros(n.shape);
  return Tensor(n.shape, buf);
}

bool Tape::Gradients::touched(const Tensor& t) const {
  return !g_[static_cast<std::size_t>(t.node())].empty();
}

Tensor apply_primitive(Tape& tape, Op op, const std::vector<Tensor>& inputs,
                       const OpExtra& extra) {
  return tape.apply(op, inputs, extra);
}

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) { return t.apply(Op::kMatmul, {a, b}); }
Tensor add(Tape& t, const Tensor& a, const Tensor& b) { return t.apply(Op::kAdd, {a, b}); }
Tensor sub(Tape& t, const Tensor& a, const Tensor& b) { return t.apply(Op::kSub, {a, b}); }
Tensor mul(Tape& t, const Tensor& a, const Tensor& b) { return t.apply(Op::kMul, {a, b}); }

Tensor scale(Tape& t, const Tensor& a, double c) {
  OpExtra e;
  e.scalar = c;
  return t.apply(Op::kScale, {a}, e);
}

Tensor tanh(Tape& t, const Tensor& a) { return t.apply(Op::kTanh, {a}); }
Tensor softplus(Tape& t, const Tensor& a) { return t.apply(Op::kSoftplus, {a}); }
Tensor exp(Tape& t, const Tensor& a) { return t.apply(Op::kExp, {a}); }
Tensor log(Tape& t, const Tensor& a) { return t.apply(Op::kLog, {a}); }
Tensor square(Tape& t, const Tensor& a) { return t.apply(Op::kSquare, {a}); }
Tensor sum(Tape& t, const Tensor& a) { return t.apply(Op::kSum, {a}); }
Tensor mean(Tape& t, const Tensor& a) { return t.apply(Op::kMean, {a}); }
Tensor concat(Tape& t, const std::vector<Tensor>& parts) { return t.apply(Op::kConcat, parts); }

Tensor slice(Tape& t, const Tensor& a, std::size_t offset, std::size_t length) {
  OpExtra e;
  e.offset = offset;
  e.length = length;
  return t.apply(Op::kSlice, {a}, e);
}

Tensor broadcast_add_row(Tape& t, const Tensor& mat, const Tensor& row) {
  return t.apply(Op::kBroadcastAddRow, {mat, row});
}

double grad_check(const TensorFn& f, const Tensor& at, double step) {
  if (step <= 0.0) throw ContractError("grad_check: step must be positive");

  std::vector<double> analytic;
  {
    Tape tape;
    Tensor x = tape.leaf(at);
    Tensor y = f(tape, x);
    if (y.size() != 1) {
      throw ContractError("grad_check: f must be scalar-valued");
    }
    analytic = tape.backward(y).at(x).values();
  }

  auto eval = [&](const std::vector<double>& v) {
    Tape tape;
    Tensor x = tape.leaf(Tensor(at.shape(), v));
    double out = f(tape, x).value();
    if (!std::isfinite(out)) {
      throw NumericError("grad_check: non-finite function value near evaluation point");
    }
    return out;
  };

  double worst = 0.0;
  std::vector<double> v = at.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    double keep = v[i];
    v[i] = keep + step;
    double fp = eval(v);
    v[i] = keep - step;
    double fm = eval(v);
    v[i] = keep;
    double central = (fp - fm) / (2.0 * step);
    double err = std::abs(analytic[i] - central) /
                 (std::abs(analytic[i]) + std::abs(central) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace cnode
