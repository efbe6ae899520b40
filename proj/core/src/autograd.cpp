#include "mdrlab/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "mdrlab/error.hpp"

namespace mdrlab {

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
    return;
  }
  std::fill(grad.data().begin(), grad.data().end(), 0.0);
}

const Tensor& Var::value() const { return tape->value(index); }

// --- Tape --------------------------------------------------------------------

Var Tape::constant(Tensor value) {
  value.check_finite("constant");
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::leaf(Parameter& parameter) {
  Node node;
  node.op = "leaf";
  node.external = &parameter.value;
  node.parameter = &parameter;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (consumed_) throw Error("cannot record '" + op + "' on a consumed tape");
  if (!value.all_finite()) throw NumericError("non-finite output from primitive '" + op + "'");
  Node node;
  node.op = std::move(op);
  node.value = std::move(value);
  for (auto i : inputs) {
    if (i >= nodes_.size()) throw Error("tape input index out of range");
    node.requires_grad = node.requires_grad || nodes_[i].requires_grad;
  }
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t index) const {
  const Node& n = nodes_.at(index);
  return n.external ? *n.external : n.value;
}

Tensor& Tape::grad_mut(std::size_t index) {
  Node& n = nodes_.at(index);
  if (!n.has_grad) {
    n.grad = Tensor(value(index).shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw Error("backward: root belongs to a different tape");
  if (consumed_) throw Error("backward: tape already consumed");
  if (value(root.index).size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + shape_string(value(root.index).shape()));
  }
  consumed_ = true;
  grad_mut(root.index)[0] = 1.0;
  for (std::size_t i = root.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad) continue;
    n.grad.check_finite("gradient of '" + n.op + "'");
    if (n.parameter != nullptr) {
      Parameter& p = *n.parameter;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
      auto g = p.grad.data();
      auto src = n.grad.data();
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += src[j];
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
  for (std::size_t i = 0; i <= root.index; ++i) {
    if (!nodes_[i].has_grad) grad_mut(i);
  }
}

// --- helpers -------------------------------------------------------------------

namespace {

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw Error("operation on a detached Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw Error("operands recorded on different tapes");
  return tape_of(a);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// g_input[j] += fn(j) for every element, if the input takes a gradient.
template <class F>
void accumulate(Tape& t, std::size_t input, F&& fn) {
  if (!t.requires_grad(input)) return;
  auto g = t.grad_mut(input).data();
  for (std::size_t j = 0; j < g.size(); ++j) g[j] += fn(j);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

// Elementwise unary op. `dydx(x, y)` is the local derivative.
template <class F, class D>
Var unary(const char* op, Var x, F forward, D dydx) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t j = 0; j < xv.size(); ++j) out[j] = forward(xv[j]);
  const std::size_t in = x.index;
  return t.push(op, std::move(out), {in}, [in, dydx](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& y = t.value(self);
    const Tensor& xv = t.value(in);
    accumulate(t, in, [&](std::size_t j) { return gy[j] * dydx(xv[j], y[j]); });
  });
}

// C[m,n] += A[m,k] * B[k,n], all row-major. Inner loop is an axpy so it
// vectorizes without reassociating sums.
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  // Four rows of C per pass so each row of B is loaded once per block.
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    const double* a0 = a + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    for (std::size_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = brow[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T as row dot products, 4x4 output tiles. Each
// entry is summed over p in order, the same order gemm_nn uses.
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  auto dot_tail = [&](std::size_t i, std::size_t j) {
    const double* arow = a + i * k;
    const double* brow = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
    c[i * n + j] += acc;
  };
  const std::size_t mb = m - m % 4, nb = n - n % 4;
  for (std::size_t i = 0; i < mb; i += 4) {
    for (std::size_t j = 0; j < nb; j += 4) {
      double s[4][4] = {};
      for (std::size_t p = 0; p < k; ++p) {
        double av[4], bv[4];
        for (std::size_t r = 0; r < 4; ++r) {
          av[r] = a[(i + r) * k + p];
          bv[r] = b[(j + r) * k + p];
        }
        for (std::size_t r = 0; r < 4; ++r) {
          for (std::size_t q = 0; q < 4; ++q) s[r][q] += av[r] * bv[q];
        }
      }
      for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t q = 0; q < 4; ++q) c[(i + r) * n + j + q] += s[r][q];
      }
    }
    for (std::size_t j = nb; j < n; ++j) {
      for (std::size_t r = 0; r < 4; ++r) dot_tail(i + r, j);
    }
  }
  for (std::size_t i = mb; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) dot_tail(i, j);
  }
}

std::vector<double> transpose(std::size_t rows, std::size_t cols, const double* src) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
}

}  // namespace

// --- linear algebra -------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix("matmul", av);
  require_matrix("matmul", bv);
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Tensor out(Shape{m, n});
  gemm_nn(m, k, n, av.data().data(), bv.data().data(), out.data().data());
  const std::size_t ia = a.index, ib = b.index;
  return t.push("matmul", std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const double* gy = t.grad(self).data().data();
    if (t.requires_grad(ia)) {
      // dA = dC * B^T
      const auto bt = transpose(k, n, t.value(ib).data().data());
      gemm_nn(m, n, k, gy, bt.data(), t.grad_mut(ia).data().data());
    }
    if (t.requires_grad(ib)) {
      // dB = A^T * dC
      const auto at = transpose(m, k, t.value(ia).data().data());
      gemm_nn(k, m, n, at.data(), gy, t.grad_mut(ib).data().data());
    }
  });
}

Var matmul_bt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix("matmul_bt", av);
  require_matrix("matmul_bt", bv);
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  if (bv.dim(1) != k) {
    throw ShapeError("matmul_bt: inner dimensions differ " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()) + "^T");
  }
  Tensor out(Shape{m, n});
  if (m >= 32) {
    const auto bt = transpose(n, k, bv.data().data());
    gemm_nn(m, k, n, av.data().data(), bt.data(), out.data().data());
  } else {
    gemm_nt(m, k, n, av.data().data(), bv.data().data(), out.data().data());
  }
  const std::size_t ia = a.index, ib = b.index;
  return t.push("matmul_bt", std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const double* gy = t.grad(self).data().data();
    if (t.requires_grad(ia)) {
      // dA[m,k] = dC[m,n] * B[n,k]
      gemm_nn(m, n, k, gy, t.value(ib).data().data(), t.grad_mut(ia).data().data());
    }
    if (t.requires_grad(ib)) {
      // dB[n,k] = dC^T[n,m] * A[m,k]
      const auto gyt = transpose(m, n, gy);
      gemm_nn(n, m, k, gyt.data(), t.value(ia).data().data(), t.grad_mut(ib).data().data());
    }
  });
}

// --- elementwise binary -------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += bv[j];
  const std::size_t ia = a.index, ib = b.index;
  return t.push("add", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    accumulate(t, ia, [&](std::size_t j) { return gy[j]; });
    accumulate(t, ib, [&](std::size_t j) { return gy[j]; });
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t j = 0; j < out.size(); ++j) out[j] -= bv[j];
  const std::size_t ia = a.index, ib = b.index;
  return t.push("sub", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    accumulate(t, ia, [&](std::size_t j) { return gy[j]; });
    accumulate(t, ib, [&](std::size_t j) { return -gy[j]; });
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t j = 0; j < out.size(); ++j) out[j] *= bv[j];
  const std::size_t ia = a.index, ib = b.index;
  return t.push("mul", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    accumulate(t, ia, [&](std::size_t j) { return gy[j] * bv[j]; });
    accumulate(t, ib, [&](std::size_t j) { return gy[j] * av[j]; });
  });
}

Var div(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("div", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (bv[j] == 0.0) throw NumericError("div: division by zero");
    out[j] /= bv[j];
  }
  const std::size_t ia = a.index, ib = b.index;
  return t.push("div", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& y = t.value(self);
    const Tensor& bv = t.value(ib);
    accumulate(t, ia, [&](std::size_t j) { return gy[j] / bv[j]; });
    accumulate(t, ib, [&](std::size_t j) { return -gy[j] * y[j] / bv[j]; });
  });
}

Var minimum(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("minimum", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::min(out[j], bv[j]);
  const std::size_t ia = a.index, ib = b.index;
  // Ties route the gradient to the first operand.
  return t.push("minimum", std::move(out), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    accumulate(t, ia, [&](std::size_t j) { return av[j] <= bv[j] ? gy[j] : 0.0; });
    accumulate(t, ib, [&](std::size_t j) { return av[j] <= bv[j] ? 0.0 : gy[j]; });
  });
}

// --- elementwise unary ---------------------------------------------------------------

Var neg(Var x) {
  return unary("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Var scale(Var x, double factor) {
  return unary("scale", x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double offset) {
  return unary("add_scalar", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
  }
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var square(Var x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sqrt(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw NumericError("sqrt: non-positive input " + std::to_string(v));
  }
  return unary("sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Var clamp(Var x, double lo, double hi) {
  if (lo > hi) throw Error("clamp: lo > hi");
  return unary("clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// --- reductions ----------------------------------------------------------------------

Var sum(Var x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t in = x.index;
  return t.push("sum", Tensor::scalar(s), {in}, [in](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    accumulate(t, in, [g](std::size_t) { return g; });
  });
}

Var sum(Var x, std::size_t axis) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis(xv.shape(), axis, "sum");
  Tensor out(drop_axis(xv.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.n; ++i) {
      for (std::size_t r = 0; r < s.inner; ++r) out[o * s.inner + r] += xv[(o * s.n + i) * s.inner + r];
    }
  }
  const std::size_t in = x.index;
  return t.push("sum_axis", std::move(out), {in}, [in, s](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    accumulate(t, in, [&](std::size_t j) {
      const std::size_t o = j / (s.n * s.inner);
      const std::size_t r = j % s.inner;
      return gy[o * s.inner + r];
    });
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var mean(Var x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "mean");
  return scale(sum(x, axis), 1.0 / static_cast<double>(s.n));
}

Var variance(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const double n = static_cast<double>(xv.size());
  double mu = 0.0;
  for (double v : xv.data()) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : xv.data()) var += (v - mu) * (v - mu);
  var /= n;
  const std::size_t in = x.index;
  return t.push("variance", Tensor::scalar(var), {in}, [in, mu, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& xv = t.value(in);
    accumulate(t, in, [&](std::size_t j) { return g * 2.0 * (xv[j] - mu) / n; });
  });
}

Var variance(Var x, std::size_t axis) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis(xv.shape(), axis, "variance");
  const Shape reduced = drop_axis(xv.shape(), axis);
  std::vector<double> mu(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.n; ++i) {
      for (std::size_t r = 0; r < s.inner; ++r) mu[o * s.inner + r] += xv[(o * s.n + i) * s.inner + r];
    }
  }
  const double n = static_cast<double>(s.n);
  for (auto& v : mu) v /= n;
  Tensor out(reduced);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.n; ++i) {
      for (std::size_t r = 0; r < s.inner; ++r) {
        const double d = xv[(o * s.n + i) * s.inner + r] - mu[o * s.inner + r];
        out[o * s.inner + r] += d * d;
      }
    }
  }
  for (std::size_t j = 0; j < out.size(); ++j) out[j] /= n;
  const std::size_t in = x.index;
  return t.push("variance_axis", std::move(out), {in}, [in, s, mu = std::move(mu), n](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    const Tensor& xv = t.value(in);
    accumulate(t, in, [&](std::size_t j) {
      const std::size_t o = j / (s.n * s.inner);
      const std::size_t r = j % s.inner;
      const std::size_t k = o * s.inner + r;
      return gy[k] * 2.0 * (xv[j] - mu[k]) / n;
    });
  });
}

// --- shape manipulation ---------------------------------------------------------------

Var broadcast_to(Var x, const Shape& shape) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const Shape& src = xv.shape();
  if (src.size() > shape.size()) {
    throw ShapeError("broadcast_to: cannot broadcast " + shape_string(src) + " to " + shape_string(shape));
  }
  // Source stride for each output axis (0 on broadcast axes).
  const std::size_t rank = shape.size();
  const std::size_t offset = rank - src.size();
  std::vector<std::size_t> src_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = src.size(); i-- > 0;) {
    const std::size_t out_axis = i + offset;
    if (src[i] == shape[out_axis]) {
      src_stride[out_axis] = stride;
    } else if (src[i] != 1) {
      throw ShapeError("broadcast_to: cannot broadcast " + shape_string(src) + " to " + shape_string(shape));
    }
    stride *= src[i];
  }
  const std::size_t total = shape_size(shape);
  std::vector<std::size_t> source_index(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t s_idx = 0;
  for (std::size_t j = 0; j < total; ++j) {
    source_index[j] = s_idx;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      s_idx += src_stride[ax];
      if (counter[ax] < shape[ax]) break;
      s_idx -= src_stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  Tensor out(shape);
  for (std::size_t j = 0; j < total; ++j) out[j] = xv[source_index[j]];
  const std::size_t in = x.index;
  return t.push("broadcast", std::move(out), {in}, [in, map = std::move(source_index)](Tape& t, std::size_t self) {
    if (!t.requires_grad(in)) return;
    const Tensor& gy = t.grad(self);
    auto gx = t.grad_mut(in).data();
    for (std::size_t j = 0; j < map.size(); ++j) gx[map[j]] += gy[j];
  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(x);
  const Tensor& xv = x.value();
  const AxisSplit s = split_axis(xv.shape(), axis, "slice");
  if (begin >= end || end > s.n) {
    throw ShapeError("slice: invalid range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis of " +
                     std::to_string(s.n));
  }
  Shape out_shape = xv.shape();
  out_shape[axis] = end - begin;
  const std::size_t len = end - begin;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t r = 0; r < s.inner; ++r) {
        out[(o * len + i) * s.inner + r] = xv[(o * s.n + begin + i) * s.inner + r];
      }
    }
  }
  const std::size_t in = x.index;
  return t.push("slice", std::move(out), {in}, [in, s, begin, len](Tape& t, std::size_t self) {
    if (!t.requires_grad(in)) return;
    const Tensor& gy = t.grad(self);
    auto gx = t.grad_mut(in).data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t r = 0; r < s.inner; ++r) {
          gx[(o * s.n + begin + i) * s.inner + r] += gy[(o * len + i) * s.inner + r];
        }
      }
    }
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& t = tape_of(parts.front());
  const Shape& first = parts.front().shape();
  split_axis(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> inputs;
  std::vector<std::size_t> lengths;
  for (const Var& p : parts) {
    if (p.tape != &t) throw Error("concat: operands recorded on different tapes");
    const Shape& sh = p.shape();
    bool ok = sh.size() == first.size();
    for (std::size_t i = 0; ok && i < sh.size(); ++i) ok = (i == axis) || sh[i] == first[i];
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_string(first) + " and " + shape_string(sh));
    out_shape[axis] += sh[axis];
    inputs.push_back(p.index);
    lengths.push_back(sh[axis]);
  }
  const AxisSplit s = split_axis(out_shape, axis, "concat");
  Tensor out(out_shape);
  std::size_t at = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& pv = parts[p].value();
    const std::size_t len = lengths[p];
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t r = 0; r < s.inner; ++r) {
          out[(o * s.n + at + i) * s.inner + r] = pv[(o * len + i) * s.inner + r];
        }
      }
    }
    at += len;
  }
  return t.push("concat", std::move(out), inputs, [inputs, lengths, s](Tape& t, std::size_t self) {
    const Tensor& gy = t.grad(self);
    std::size_t at = 0;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
      const std::size_t len = lengths[p];
      if (t.requires_grad(inputs[p])) {
        auto gx = t.grad_mut(inputs[p]).data();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < len; ++i) {
            for (std::size_t r = 0; r < s.inner; ++r) {
              gx[(o * len + i) * s.inner + r] += gy[(o * s.n + at + i) * s.inner + r];
            }
          }
        }
      }
      at += len;
    }
  });
}

Var log_softmax(Var logits) {
  Tape& t = tape_of(logits);
  const Tensor& xv = logits.value();
  require_matrix("log_softmax", xv);
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double mx = xv.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xv.at(i, j) - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = xv.at(i, j) - lz;
  }
  const std::size_t in = logits.index;
  return t.push("log_softmax", std::move(out), {in}, [in, m, n](Tape& t, std::size_t self) {
    if (!t.requires_grad(in)) return;
    const Tensor& gy = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad_mut(in);
    for (std::size_t i = 0; i < m; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += gy.at(i, j);
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += gy.at(i, j) - std::exp(y.at(i, j)) * total;
    }
  });
}

}  // namespace mdrlab
