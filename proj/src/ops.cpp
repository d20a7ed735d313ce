#include "physattn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "physattn/error.hpp"

namespace physattn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Graph& graph_of(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) throw ContractError("operands live on different graphs");
  return *a.graph;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& x) {
  if (x.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(x.shape()));
}

std::size_t normalize_axis(const char* op, int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(a);
}

// outer × length × inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Batch broadcasting for matmul: maps every output batch index to the
// corresponding input batch indices.
struct BatchPlan {
  Shape out_batch;
  std::vector<std::size_t> a_index, b_index;
};

BatchPlan plan_batches(const Shape& a, const Shape& b) {
  const std::size_t ra = a.size() - 2, rb = b.size() - 2;
  const std::size_t r = std::max(ra, rb);
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(ra), pa.begin() + static_cast<std::ptrdiff_t>(r - ra));
  std::copy(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(rb), pb.begin() + static_cast<std::ptrdiff_t>(r - rb));
  BatchPlan plan;
  plan.out_batch.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError("matmul: batch dimensions do not broadcast: " + shape_string(a) + " vs " + shape_string(b));
    }
    plan.out_batch[i] = std::max(pa[i], pb[i]);
  }
  const std::size_t count = element_count(plan.out_batch);
  plan.a_index.resize(count);
  plan.b_index.resize(count);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t n = 0; n < count; ++n) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < r; ++i) {
      ia = ia * pa[i] + (pa[i] == 1 ? 0 : idx[i]);
      ib = ib * pb[i] + (pb[i] == 1 ? 0 : idx[i]);
    }
    plan.a_index[n] = ia;
    plan.b_index[n] = ib;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < plan.out_batch[i]) break;
      idx[i] = 0;
    }
  }
  return plan;
}

// Adds f(i) into the gradient of `id`, or stores it on a first contribution.
template <typename F>
void accumulate(Graph& g, NodeId id, std::size_t n, F&& f) {
  const auto [t, assign] = g.grad_target(id);
  if (t == nullptr) return;
  double* o = t->raw();
  if (assign) {
    for (std::size_t i = 0; i < n; ++i) o[i] = f(i);
  } else {
    for (std::size_t i = 0; i < n; ++i) o[i] += f(i);
  }
}

// Eigen counterpart of accumulate for a matrix-shaped gradient.
template <typename Expr>
void accumulate_matrix(Graph& g, NodeId id, Eigen::Index rows, Eigen::Index cols, const Expr& expr) {
  const auto [t, assign] = g.grad_target(id);
  if (t == nullptr) return;
  MutMap m(t->raw(), rows, cols);
  if (assign) {
    m.noalias() = expr;
  } else {
    m.noalias() += expr;
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 2 || bv.rank() < 2 || av.dim(-1) != bv.dim(-2)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
  }
  const std::size_t P = av.dim(-2), Q = av.dim(-1), R = bv.dim(-1);
  auto plan = std::make_shared<BatchPlan>(plan_batches(av.shape(), bv.shape()));
  Shape out_shape = plan->out_batch;
  out_shape.push_back(P);
  out_shape.push_back(R);
  Tensor out = Tensor::uninitialized(out_shape);
  const auto ai = static_cast<Eigen::Index>(P), qi = static_cast<Eigen::Index>(Q), ri = static_cast<Eigen::Index>(R);
  for (std::size_t n = 0; n < plan->a_index.size(); ++n) {
    ConstMap A(av.raw() + plan->a_index[n] * P * Q, ai, qi);
    ConstMap B(bv.raw() + plan->b_index[n] * Q * R, qi, ri);
    MutMap C(out.raw() + n * P * R, ai, ri);
    C.noalias() = A * B;
  }
  const NodeId ia = a.id, ib = b.id;
  return g.record("matmul", {ia, ib}, std::move(out), [=](Graph& gr, const Tensor& dc) {
    const Tensor& A_ = gr.value(ia);
    const Tensor& B_ = gr.value(ib);
    if (plan->a_index.size() == 1) {
      ConstMap dC(dc.raw(), ai, ri);
      accumulate_matrix(gr, ia, ai, qi, dC * ConstMap(B_.raw(), qi, ri).transpose());
      accumulate_matrix(gr, ib, qi, ri, ConstMap(A_.raw(), ai, qi).transpose() * dC);
      return;
    }
    Tensor* da = gr.grad_slot(ia);
    Tensor* db = gr.grad_slot(ib);
    for (std::size_t n = 0; n < plan->a_index.size(); ++n) {
      ConstMap dC(dc.raw() + n * P * R, ai, ri);
      if (da) {
        ConstMap B(B_.raw() + plan->b_index[n] * Q * R, qi, ri);
        MutMap dA(da->raw() + plan->a_index[n] * P * Q, ai, qi);
        dA.noalias() += dC * B.transpose();
      }
      if (db) {
        ConstMap A(A_.raw() + plan->a_index[n] * P * Q, ai, qi);
        MutMap dB(db->raw() + plan->b_index[n] * Q * R, qi, ri);
        dB.noalias() += A.transpose() * dC;
      }
    }
  });
}

Var matmul_tn(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows()) {
    throw ShapeError("matmul_tn: incompatible shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
  }
  const auto n = static_cast<Eigen::Index>(av.rows()), p = static_cast<Eigen::Index>(av.cols()),
             r = static_cast<Eigen::Index>(bv.cols());
  Tensor out = Tensor::uninitialized({av.cols(), bv.cols()});
  MutMap(out.raw(), p, r).noalias() = ConstMap(av.raw(), n, p).transpose() * ConstMap(bv.raw(), n, r);
  const NodeId ia = a.id, ib = b.id;
  return g.record("matmul_tn", {ia, ib}, std::move(out), [=](Graph& gr, const Tensor& dc) {
    ConstMap dC(dc.raw(), p, r);
    accumulate_matrix(gr, ia, n, p, ConstMap(gr.value(ib).raw(), n, r) * dC.transpose());
    accumulate_matrix(gr, ib, n, r, ConstMap(gr.value(ia).raw(), n, p) * dC);
  });
}

Var affine(Var x, Var weight, Var bias) {
  Graph& g = graph_of(x, weight);
  graph_of(x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || xv.cols() != wv.rows() || wv.cols() != bv.size()) {
    throw ShapeError("affine: incompatible shapes " + shape_string(xv.shape()) + ", " + shape_string(wv.shape()) +
                     ", " + shape_string(bv.shape()));
  }
  const auto n = static_cast<Eigen::Index>(xv.rows()), k = static_cast<Eigen::Index>(xv.cols()),
             m = static_cast<Eigen::Index>(wv.cols());
  Tensor out = Tensor::uninitialized({xv.rows(), wv.cols()});
  MutMap y(out.raw(), n, m);
  y.noalias() = ConstMap(xv.raw(), n, k) * ConstMap(wv.raw(), k, m);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.raw(), m);
  const NodeId ix = x.id, iw = weight.id, ib = bias.id;
  return g.record("affine", {ix, iw, ib}, std::move(out), [=](Graph& gr, const Tensor& dy) {
    ConstMap dY(dy.raw(), n, m);
    accumulate_matrix(gr, ix, n, k, dY * ConstMap(gr.value(iw).raw(), k, m).transpose());
    accumulate_matrix(gr, iw, k, m, ConstMap(gr.value(ix).raw(), n, k).transpose() * dY);
    accumulate_matrix(gr, ib, 1, m, dY.colwise().sum());
  });
}

Var transpose(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw ShapeError("transpose: rank < 2 for " + shape_string(xv.shape()));
  const std::size_t P = xv.dim(-2), Q = xv.dim(-1);
  const std::size_t batches = xv.size() / (P * Q);
  Shape shape = xv.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor out = Tensor::uninitialized(shape);
  for (std::size_t n = 0; n < batches; ++n) {
    const double* src = xv.raw() + n * P * Q;
    double* dst = out.raw() + n * P * Q;
    for (std::size_t i = 0; i < P; ++i)
      for (std::size_t j = 0; j < Q; ++j) dst[j * P + i] = src[i * Q + j];
  }
  const NodeId ix = x.id;
  return x.graph->record("transpose", {ix}, std::move(out), [=](Graph& g, const Tensor& dy) {
    accumulate(g, ix, batches * P * Q, [&](std::size_t k) {
      const std::size_t n = k / (P * Q), i = (k / Q) % P, j = k % Q;
      return dy[n * P * Q + j * P + i];
    });
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const NodeId ia = a.id, ib = b.id;
  return g.record("add", {ia, ib}, std::move(out), [=](Graph& gr, const Tensor& dy) {
    const double* src = dy.raw();
    for (NodeId id : {ia, ib}) accumulate(gr, id, dy.size(), [src](std::size_t i) { return src[i]; });
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const NodeId ia = a.id, ib = b.id;
  return g.record("sub", {ia, ib}, std::move(out), [=](Graph& gr, const Tensor& dy) {
    const double* src = dy.raw();
    accumulate(gr, ia, dy.size(), [src](std::size_t i) { return src[i]; });
    accumulate(gr, ib, dy.size(), [src](std::size_t i) { return -src[i]; });
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const NodeId ia = a.id, ib = b.id;
  return g.record("mul", {ia, ib}, std::move(out), [=](Graph& gr, const Tensor& dy) {
    const Tensor& av_ = gr.value(ia);
    const Tensor& bv_ = gr.value(ib);
    accumulate(gr, ia, dy.size(), [&](std::size_t i) { return dy[i] * bv_[i]; });
    accumulate(gr, ib, dy.size(), [&](std::size_t i) { return dy[i] * av_[i]; });
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  const NodeId ix = x.id;
  return x.graph->record("scale", {ix}, std::move(out), [=](Graph& g, const Tensor& dy) {
    accumulate(g, ix, dy.size(), [&](std::size_t i) { return factor * dy[i]; });
  });
}

Var add_scalar(Var x, double shift) {
  Tensor out = x.value();
  for (double& v : out.data()) v += shift;
  const NodeId ix = x.id;
  return x.graph->record("add_scalar", {ix}, std::move(out), [=](Graph& g, const Tensor& dy) {
    accumulate(g, ix, dy.size(), [&](std::size_t i) { return dy[i]; });
  });
}

Var add_bias(Var x, Var bias) {
  Graph& g = graph_of(x, bias);
  const Tensor& bv = bias.value();
  if (bv.rank() != 1 || x.value().rank() < 1 || x.value().dim(-1) != bv.size()) {
    throw ShapeError("add_bias: bias " + shape_string(bv.shape()) + " does not match input " +
                     shape_string(x.value().shape()));
  }
  const std::size_t C = bv.size();
  Tensor out = x.value();
  const std::size_t rows = out.size() / C;
  {
    double* o = out.raw();
    const double* b = bv.raw();
    for (std::size_t r = 0; r < rows; ++r, o += C)
      for (std::size_t c = 0; c < C; ++c) o[c] += b[c];
  }
  const NodeId ix = x.id, ib = bias.id;
  return g.record("add_bias", {ix, ib}, std::move(out), [=](Graph& gr, const Tensor& dy) {
    const double* d = dy.raw();
    accumulate(gr, ix, dy.size(), [d](std::size_t i) { return d[i]; });
    if (Tensor* db = gr.grad_slot(ib)) {
      double* o = db->raw();
      for (std::size_t r = 0; r < rows; ++r, d += C)
        for (std::size_t c = 0; c < C; ++c) o[c] += d[c];
    }
  });
}

Var softmax(Var x, int axis) {
  const Tensor& xv = x.value();
  const std::size_t ax = normalize_axis("softmax", axis, xv.rank());
  const AxisSplit s = split_axis(xv.shape(), ax);
  Tensor out = Tensor::uninitialized(xv.shape());
  if (s.inner == 1) {
    const auto len = static_cast<Eigen::Index>(s.length);
    for (std::size_t o = 0; o < s.outer; ++o) {
      Eigen::Map<const Eigen::ArrayXd> row(xv.raw() + o * s.length, len);
      Eigen::Map<Eigen::ArrayXd> y(out.raw() + o * s.length, len);
      y = (row - row.maxCoeff()).exp();
      y *= 1.0 / y.sum();
    }
  } else {
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.length * s.inner + i;
        double mx = xv[base];
        for (std::size_t k = 1; k < s.length; ++k) mx = std::max(mx, xv[base + k * s.inner]);
        double total = 0.0;
        for (std::size_t k = 0; k < s.length; ++k) {
          const double e = std::exp(xv[base + k * s.inner] - mx);
          out[base + k * s.inner] = e;
          total += e;
        }
        const double inv = 1.0 / total;
        for (std::size_t k = 0; k < s.length; ++k) out[base + k * s.inner] *= inv;
      }
    }
  }
  const NodeId ix = x.id;
  Graph* g = x.graph;
  const NodeId self = g->size();
  return g->record("softmax", {ix}, std::move(out), [=](Graph& gr, const Tensor& dy) {
    const Tensor& y = gr.value(self);
    const auto [dx, assign] = gr.grad_target(ix);
    if (dx == nullptr) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.length * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.length; ++k) dot += dy[base + k * s.inner] * y[base + k * s.inner];
        for (std::size_t k = 0; k < s.length; ++k) {
          const std::size_t j = base + k * s.inner;
          const double v = y[j] * (dy[j] - dot);
          (*dx)[j] = assign ? v : (*dx)[j] + v;
        }
      }
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of(x, gain);
  graph_of(x, bias);
  const Tensor& xv = x.value();
  if (xv.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const std::size_t C = xv.dim(-1);
  if (gain.value().shape() != Shape{C} || bias.value().shape() != Shape{C}) {
    throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(C) + "], got " +
                     shape_string(gain.value().shape()) + " and " + shape_string(bias.value().shape()));
  }
  const std::size_t rows = xv.size() / C;
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  Tensor out = Tensor::uninitialized(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.raw() + r * C;
    double mean = 0.0;
    for (std::size_t c = 0; c < C; ++c) mean += row[c];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(C);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (row[c] - mean) * is;
      xhat[r * C + c] = h;
      out[r * C + c] = gv[c] * h + bv[c];
    }
  }
  const NodeId ix = x.id, ig = gain.id, ib = bias.id;
  return g.record("layer_norm", {ix, ig, ib}, std::move(out),
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, const Tensor& dy) {
                    const Tensor& gv_ = gr.value(ig);
                    if (Tensor* dg = gr.grad_slot(ig)) {
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < C; ++c) (*dg)[c] += dy[r * C + c] * xhat[r * C + c];
                    }
                    if (Tensor* db = gr.grad_slot(ib)) {
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < C; ++c) (*db)[c] += dy[r * C + c];
                    }
                    if (const auto [dx, assign] = gr.grad_target(ix); dx != nullptr) {
                      const double invC = 1.0 / static_cast<double>(C);
                      for (std::size_t r = 0; r < rows; ++r) {
                        double mean_d = 0.0, mean_dh = 0.0;
                        for (std::size_t c = 0; c < C; ++c) {
                          const double d = dy[r * C + c] * gv_[c];
                          mean_d += d;
                          mean_dh += d * xhat[r * C + c];
                        }
                        mean_d *= invC;
                        mean_dh *= invC;
                        for (std::size_t c = 0; c < C; ++c) {
                          const double d = dy[r * C + c] * gv_[c];
                          const double v = inv_std[r] * (d - mean_d - xhat[r * C + c] * mean_dh);
                          (*dx)[r * C + c] = assign ? v : (*dx)[r * C + c] + v;
                        }
                      }
                    }
                  });
}

namespace {
constexpr double kGeluCubic = 0.044715;
const double kGeluScale = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

Var gelu(Var x) {
  const Tensor& xv = x.value();
  const auto n = static_cast<Eigen::Index>(xv.size());
  Tensor out = Tensor::uninitialized(xv.shape());
  Tensor t = Tensor::uninitialized(xv.shape());
  Eigen::Map<const Eigen::ArrayXd> v(xv.raw(), n);
  Eigen::Map<Eigen::ArrayXd> tv(t.raw(), n);
  // tanh(y) = 1 - 2 / (exp(2y) + 1), using Eigen's vectorized exp.
  tv = 1.0 - 2.0 / ((2.0 * kGeluScale * (v + kGeluCubic * v.cube())).exp() + 1.0);
  Eigen::Map<Eigen::ArrayXd>(out.raw(), n) = 0.5 * v * (1.0 + tv);
  const NodeId ix = x.id;
  return x.graph->record("gelu", {ix}, std::move(out), [=, t = std::move(t)](Graph& g, const Tensor& dy) {
    Eigen::Map<const Eigen::ArrayXd> xa(g.value(ix).raw(), n), ta(t.raw(), n), da(dy.raw(), n);
    const auto [t_dx, assign] = g.grad_target(ix);
    Eigen::Map<Eigen::ArrayXd> dx(t_dx->raw(), n);
    auto local = da * (0.5 * (1.0 + ta) + 0.5 * xa * (1.0 - ta.square()) * kGeluScale * (1.0 + 3.0 * kGeluCubic * xa.square()));
    if (assign) {
      dx = local;
    } else {
      dx += local;
    }
  });
}

Var reduce_sum(Var x, int axis) {
  const Tensor& xv = x.value();
  const std::size_t ax = normalize_axis("reduce_sum", axis, xv.rank());
  const AxisSplit s = split_axis(xv.shape(), ax);
  Shape shape = xv.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  Tensor out(shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.length; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.length + k) * s.inner + i];
  const NodeId ix = x.id;
  return x.graph->record("reduce_sum", {ix}, std::move(out), [=](Graph& g, const Tensor& dy) {
    Tensor* dx = g.grad_slot(ix);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.length; ++k)
        for (std::size_t i = 0; i < s.inner; ++i) (*dx)[(o * s.length + k) * s.inner + i] += dy[o * s.inner + i];
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const NodeId ix = x.id;
  return x.graph->record("sum", {ix}, Tensor::scalar(total), [=](Graph& g, const Tensor& dy) {
    Tensor* dx = g.grad_slot(ix);
    const double d = dy[0];
    for (double& v : dx->data()) v += d;
  });
}

Var div_rows(Var x, Var d) {
  Graph& g = graph_of(x, d);
  const Tensor& xv = x.value();
  const Tensor& dv = d.value();
  require_matrix("div_rows", xv);
  if (dv.shape() != Shape{xv.rows()}) {
    throw ShapeError("div_rows: divisor " + shape_string(dv.shape()) + " does not match rows of " +
                     shape_string(xv.shape()));
  }
  const std::size_t R = xv.rows(), C = xv.cols();
  Tensor out = Tensor::uninitialized(xv.shape());
  for (std::size_t r = 0; r < R; ++r) {
    const double inv = 1.0 / dv[r];
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = xv[r * C + c] * inv;
  }
  const NodeId ix = x.id, id = d.id;
  return g.record("div_rows", {ix, id}, std::move(out), [=](Graph& gr, const Tensor& dy) {
    const Tensor& xv_ = gr.value(ix);
    const Tensor& dv_ = gr.value(id);
    accumulate(gr, ix, R * C, [&](std::size_t k) { return dy[k] / dv_[k / C]; });
    if (Tensor* dd = gr.grad_slot(id)) {
      for (std::size_t r = 0; r < R; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) acc += dy[r * C + c] * xv_[r * C + c];
        (*dd)[r] -= acc / (dv_[r] * dv_[r]);
      }
    }
  });
}

Var columns(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  require_matrix("columns", xv);
  const std::size_t R = xv.rows(), C = xv.cols();
  if (count == 0 || begin + count > C) {
    throw ShapeError("columns: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_string(xv.shape()));
  }
  Tensor out = Tensor::uninitialized({R, count});
  for (std::size_t r = 0; r < R; ++r)
    std::copy_n(xv.raw() + r * C + begin, count, out.raw() + r * count);
  const NodeId ix = x.id;
  return x.graph->record("columns", {ix}, std::move(out), [=](Graph& g, const Tensor& dy) {
    Tensor* dx = g.grad_slot(ix);
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < count; ++c) (*dx)[r * C + begin + c] += dy[r * count + c];
  });
}

Var concat_columns(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_columns: nothing to concatenate");
  Graph& g = *parts.front().graph;
  const std::size_t R = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::vector<NodeId> ids;
  std::size_t total = 0;
  for (Var p : parts) {
    graph_of(parts.front(), p);
    require_matrix("concat_columns", p.value());
    if (p.value().rows() != R) {
      throw ShapeError("concat_columns: row mismatch " + shape_string(parts.front().value().shape()) + " vs " +
                       shape_string(p.value().shape()));
    }
    widths.push_back(p.value().cols());
    ids.push_back(p.id);
    total += p.value().cols();
  }
  Tensor out = Tensor::uninitialized({R, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < R; ++r) std::copy_n(pv.raw() + r * widths[k], widths[k], out.raw() + r * total + offset);
    offset += widths[k];
  }
  return g.record("concat_columns", ids, std::move(out), [=](Graph& gr, const Tensor& dy) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      accumulate(gr, ids[k], R * w, [&](std::size_t i) { return dy[(i / w) * total + off + i % w]; });
      off += widths[k];
    }
  });
}

Var frobenius_norm(Var x) {
  double ss = 0.0;
  for (double v : x.value().data()) ss += v * v;
  const double norm = std::sqrt(ss);
  const NodeId ix = x.id;
  return x.graph->record("frobenius_norm", {ix}, Tensor::scalar(norm), [=](Graph& g, const Tensor& dy) {
    if (norm == 0.0) return;
    const Tensor& xv = g.value(ix);
    const double f = dy[0] / norm;
    accumulate(g, ix, xv.size(), [&](std::size_t i) { return f * xv[i]; });
  });
}

Var grid_patches3x3(Var x, GridShape grid) {
  const Tensor& xv = x.value();
  require_matrix("grid_patches3x3", xv);
  if (xv.rows() != grid.points()) {
    throw ShapeError("grid_patches3x3: " + std::to_string(xv.rows()) + " rows for a " + std::to_string(grid.height) +
                     "x" + std::to_string(grid.width) + " grid");
  }
  const std::size_t C = xv.cols();
  const auto H = static_cast<std::ptrdiff_t>(grid.height), W = static_cast<std::ptrdiff_t>(grid.width);
  Tensor out({grid.points(), 9 * C});
  // Calls `f(point, patch_slot, neighbour)` for every in-bounds neighbour.
  auto for_each_tap = [H, W](auto&& f) {
    for (std::ptrdiff_t r = 0; r < H; ++r)
      for (std::ptrdiff_t c = 0; c < W; ++c)
        for (std::ptrdiff_t dr = -1; dr <= 1; ++dr)
          for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
            const std::ptrdiff_t rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
            f(static_cast<std::size_t>(r * W + c), static_cast<std::size_t>(3 * (dr + 1) + (dc + 1)),
              static_cast<std::size_t>(rr * W + cc));
          }
  };
  for_each_tap([&](std::size_t p, std::size_t slot, std::size_t nb) {
    std::copy_n(xv.raw() + nb * C, C, out.raw() + p * 9 * C + slot * C);
  });
  const NodeId ix = x.id;
  return x.graph->record("grid_patches3x3", {ix}, std::move(out), [=](Graph& g, const Tensor& dy) {
    Tensor* dx = g.grad_slot(ix);
    for_each_tap([&](std::size_t p, std::size_t slot, std::size_t nb) {
      for (std::size_t c = 0; c < C; ++c) (*dx)[nb * C + c] += dy[p * 9 * C + slot * C + c];
    });
  });
}

Var grid_central_gradient(Var x, GridShape grid) {
  const Tensor& xv = x.value();
  require_matrix("grid_central_gradient", xv);
  if (xv.rows() != grid.points()) {
    throw ShapeError("grid_central_gradient: " + std::to_string(xv.rows()) + " rows for a " +
                     std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
  }
  if (grid.height < 3 || grid.width < 3) throw ShapeError("grid_central_gradient: grid must be at least 3x3");
  const std::size_t C = xv.cols(), H = grid.height, W = grid.width;
  const double fx = 0.5 * static_cast<double>(W - 1);  // 1 / (2 hx)
  const double fy = 0.5 * static_cast<double>(H - 1);
  const std::size_t iw = W - 2;
  Tensor out = Tensor::uninitialized({(H - 2) * iw, 2 * C});
  for (std::size_t r = 1; r + 1 < H; ++r)
    for (std::size_t c = 1; c + 1 < W; ++c) {
      const std::size_t o = ((r - 1) * iw + (c - 1)) * 2 * C;
      for (std::size_t k = 0; k < C; ++k) {
        out[o + k] = fx * (xv[(r * W + c + 1) * C + k] - xv[(r * W + c - 1) * C + k]);
        out[o + C + k] = fy * (xv[((r + 1) * W + c) * C + k] - xv[((r - 1) * W + c) * C + k]);
      }
    }
  const NodeId ix = x.id;
  return x.graph->record("grid_central_gradient", {ix}, std::move(out), [=](Graph& g, const Tensor& dy) {
    Tensor* dx = g.grad_slot(ix);
    for (std::size_t r = 1; r + 1 < H; ++r)
      for (std::size_t c = 1; c + 1 < W; ++c) {
        const std::size_t o = ((r - 1) * iw + (c - 1)) * 2 * C;
        for (std::size_t k = 0; k < C; ++k) {
          (*dx)[(r * W + c + 1) * C + k] += fx * dy[o + k];
          (*dx)[(r * W + c - 1) * C + k] -= fx * dy[o + k];
          (*dx)[((r + 1) * W + c) * C + k] += fy * dy[o + C + k];
          (*dx)[((r - 1) * W + c) * C + k] -= fy * dy[o + C + k];
        }
      }
  });
}

}  // namespace physattn
