#include "lightner/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "lightner/error.hpp"
#include "lightner/simd/kernels.hpp"

namespace lightner {

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, mode_ == Mode::kTrain});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  const bool differentiable = p.trainable && mode_ == Mode::kTrain;
  nodes_.push_back(Node{p.value, {}, {}, differentiable ? &p : nullptr, differentiable});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape != this) throw Error("TAPE_MISMATCH", "operands recorded on different tapes");
    needs = needs || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, nullptr, needs});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_slot(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
}

void Tape::backward(Var loss) {
  if (backward_done_) throw Error("BACKWARD_TWICE", "backward already ran on this tape; reset() first");
  if (loss.tape != this) throw Error("TAPE_MISMATCH", "loss was recorded on another tape");
  if (nodes_[loss.id].value.size() != 1)
    throw Error("SHAPE_MISMATCH", "backward needs a scalar loss, got " + nodes_[loss.id].value.shape_string());
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;

  grad_slot(loss).fill(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, n.value, n.grad);
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (!p.has_grad()) p.grad = Tensor(p.value.shape(), 0.0);
      for (std::size_t k = 0; k < n.grad.size(); ++k) p.grad[k] += n.grad[k];
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

namespace ad {
namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw Error("SHAPE_MISMATCH", std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                                    b.shape_string());
}

std::vector<std::size_t> matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

const simd::KernelTable& k() { return simd::active(); }

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  const std::size_t m = A.rows(), kk = A.cols(), n = B.cols();
  Tensor out(matrix_shape(m, n), 0.0);
  k().gemm_nn(m, n, kk, A.data(), B.data(), out.data());
  Var parents[] = {a, b};
  return a.tape->record(std::move(out), parents, [a, b, m, n, kk](Tape& t, const Tensor&, const Tensor& g) {
    if (t.requires_grad(a)) k().gemm_nt(m, kk, n, g.data(), t.value(b).data(), t.grad_slot(a).data());
    if (t.requires_grad(b)) k().gemm_tn(kk, n, m, t.value(a).data(), g.data(), t.grad_slot(b).data());
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols()) shape_error("matmul_nt", A, B);
  const std::size_t m = A.rows(), kk = A.cols(), n = B.rows();
  Tensor out(matrix_shape(m, n), 0.0);
  k().gemm_nt(m, n, kk, A.data(), B.data(), out.data());
  Var parents[] = {a, b};
  return a.tape->record(std::move(out), parents, [a, b, m, n, kk](Tape& t, const Tensor&, const Tensor& g) {
    if (t.requires_grad(a)) k().gemm_nn(m, kk, n, g.data(), t.value(b).data(), t.grad_slot(a).data());
    if (t.requires_grad(b)) k().gemm_tn(n, kk, m, g.data(), t.value(a).data(), t.grad_slot(b).data());
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  const std::size_t r = A.rows(), c = A.cols();
  Tensor out(matrix_shape(c, r), 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = A(i, j);
  Var parents[] = {a};
  return a.tape->record(std::move(out), parents, [a, r, c](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Var add(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!A.same_shape(B)) shape_error("add", A, B);
  Tensor out = A;
  k().axpy(1.0, B.data(), out.data(), out.size());
  Var parents[] = {a, b};
  return a.tape->record(std::move(out), parents, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (t.requires_grad(a)) k().axpy(1.0, g.data(), t.grad_slot(a).data(), g.size());
    if (t.requires_grad(b)) k().axpy(1.0, g.data(), t.grad_slot(b).data(), g.size());
  });
}

Var add_row(Var a, Var row) {
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  if (R.rows() != 1 || R.cols() != A.cols()) shape_error("add_row", A, R);
  Tensor out = A;
  const std::size_t rows = A.rows(), cols = A.cols();
  for (std::size_t i = 0; i < rows; ++i) k().axpy(1.0, R.data(), out.data() + i * cols, cols);
  Var parents[] = {a, row};
  return a.tape->record(std::move(out), parents, [a, row, rows, cols](Tape& t, const Tensor&, const Tensor& g) {
    if (t.requires_grad(a)) k().axpy(1.0, g.data(), t.grad_slot(a).data(), g.size());
    if (t.requires_grad(row)) {
      Tensor& gr = t.grad_slot(row);
      for (std::size_t i = 0; i < rows; ++i) k().axpy(1.0, g.data() + i * cols, gr.data(), cols);
    }
  });
}

Var mul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!A.same_shape(B)) shape_error("mul", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  Var parents[] = {a, b};
  return a.tape->record(std::move(out), parents, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_slot(a);
      const Tensor& B = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_slot(b);
      const Tensor& A = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  Var parents[] = {a};
  return a.tape->record(std::move(out), parents, [a, s](Tape& t, const Tensor&, const Tensor& g) {
    k().axpy(s, g.data(), t.grad_slot(a).data(), g.size());
  });
}

Var softmax_rows(Var a) {
  const Tensor& A = a.value();
  Tensor out = A;
  const std::size_t rows = A.rows(), cols = A.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    double* r = out.data() + i * cols;
    const double mx = *std::max_element(r, r + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += (r[j] = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) r[j] /= z;
  }
  Var parents[] = {a};
  return a.tape->record(std::move(out), parents, [a, rows, cols](Tape& t, const Tensor& y, const Tensor& g) {
    Tensor& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* yr = y.data() + i * cols;
      const double* gr = g.data() + i * cols;
      const double inner = k().dot(yr, gr, cols);
      double* out_r = ga.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) out_r[j] += yr[j] * (gr[j] - inner);
    }
  });
}

Var log_softmax_rows(Var a) {
  const Tensor& A = a.value();
  Tensor out = A;
  const std::size_t rows = A.rows(), cols = A.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    double* r = out.data() + i * cols;
    const double mx = *std::max_element(r, r + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(r[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) r[j] -= lse;
  }
  Var parents[] = {a};
  return a.tape->record(std::move(out), parents, [a, rows, cols](Tape& t, const Tensor& y, const Tensor& g) {
    Tensor& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* yr = y.data() + i * cols;
      const double* gr = g.data() + i * cols;
      double gsum = 0.0;
      for (std::size_t j = 0; j < cols; ++j) gsum += gr[j];
      double* out_r = ga.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) out_r[j] += gr[j] - std::exp(yr[j]) * gsum;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& X = x.value();
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  const std::size_t rows = X.rows(), cols = X.cols();
  if (G.size() != cols) shape_error("layer_norm", X, G);
  if (B.size() != cols) shape_error("layer_norm", X, B);

  Tensor normalized(X.shape(), 0.0);
  std::vector<double> inv_std(rows);
  Tensor out(X.shape(), 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = X.data() + i * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(cols);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) {
      const double h = (xr[j] - mean) * inv_std[i];
      normalized(i, j) = h;
      out(i, j) = h * G[j] + B[j];
    }
  }
  Var parents[] = {x, gain, bias};
  return x.tape->record(
      std::move(out), parents,
      [x, gain, bias, rows, cols, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          Tape& t, const Tensor&, const Tensor& g) {
        if (t.requires_grad(gain)) {
          Tensor& gg = t.grad_slot(gain);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) gg[j] += g(i, j) * normalized(i, j);
        }
        if (t.requires_grad(bias)) {
          Tensor& gb = t.grad_slot(bias);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) gb[j] += g(i, j);
        }
        if (t.requires_grad(x)) {
          const Tensor& G = t.value(gain);
          Tensor& gx = t.grad_slot(x);
          const double inv_n = 1.0 / static_cast<double>(cols);
          for (std::size_t i = 0; i < rows; ++i) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
              const double dh = g(i, j) * G[j];
              mean_dh += dh;
              mean_dh_h += dh * normalized(i, j);
            }
            mean_dh *= inv_n;
            mean_dh_h *= inv_n;
            for (std::size_t j = 0; j < cols; ++j) {
              const double dh = g(i, j) * G[j];
              gx(i, j) += inv_std[i] * (dh - mean_dh - normalized(i, j) * mean_dh_h);
            }
          }
        }
      });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  const Tensor& T = table.value();
  const std::size_t rows = T.rows(), cols = T.cols();
  Tensor out(matrix_shape(indices.size(), cols), 0.0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows)
      throw Error("INDEX_OUT_OF_RANGE", "gather_rows: index " + std::to_string(indices[i]) +
                                            " outside table of " + std::to_string(rows) + " rows");
    std::copy_n(T.data() + indices[i] * cols, cols, out.data() + i * cols);
  }
  Var parents[] = {table};
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return table.tape->record(std::move(out), parents,
                            [table, cols, idx = std::move(idx)](Tape& t, const Tensor&, const Tensor& g) {
                              Tensor& gt = t.grad_slot(table);
                              for (std::size_t i = 0; i < idx.size(); ++i)
                                k().axpy(1.0, g.data() + i * cols, gt.data() + idx[i] * cols, cols);
                            });
}

Var concat(std::span<const Var> parts, Axis axis) {
  if (parts.empty()) throw Error("SHAPE_MISMATCH", "concat: no operands");
  const Tensor& first = parts[0].value();
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (axis == Axis::kRows && v.cols() != first.cols()) shape_error("concat(rows)", first, v);
    if (axis == Axis::kCols && v.rows() != first.rows()) shape_error("concat(cols)", first, v);
    total += axis == Axis::kRows ? v.rows() : v.cols();
  }
  const std::size_t out_rows = axis == Axis::kRows ? total : first.rows();
  const std::size_t out_cols = axis == Axis::kRows ? first.cols() : total;
  Tensor out(matrix_shape(out_rows, out_cols), 0.0);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) {
        if (axis == Axis::kRows)
          out(offset + i, j) = v(i, j);
        else
          out(i, offset + j) = v(i, j);
      }
    offset += axis == Axis::kRows ? v.rows() : v.cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), parts,
                               [ps = std::move(ps), axis, out_cols](Tape& t, const Tensor&, const Tensor& g) {
                                 std::size_t off = 0;
                                 for (const Var& p : ps) {
                                   const Tensor& v = t.value(p);
                                   if (t.requires_grad(p)) {
                                     Tensor& gp = t.grad_slot(p);
                                     for (std::size_t i = 0; i < v.rows(); ++i)
                                       for (std::size_t j = 0; j < v.cols(); ++j)
                                         gp[i * v.cols() + j] += axis == Axis::kRows
                                                                     ? g[(off + i) * out_cols + j]
                                                                     : g[i * out_cols + off + j];
                                   }
                                   off += axis == Axis::kRows ? v.rows() : v.cols();
                                 }
                               });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  if (begin > end || end > A.rows())
    throw Error("SHAPE_MISMATCH", "slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                                      ") out of " + A.shape_string());
  const std::size_t cols = A.cols();
  Tensor out(matrix_shape(end - begin, cols),
             std::vector<double>(A.data() + begin * cols, A.data() + end * cols));
  Var parents[] = {a};
  return a.tape->record(std::move(out), parents, [a, begin, cols](Tape& t, const Tensor&, const Tensor& g) {
    k().axpy(1.0, g.data(), t.grad_slot(a).data() + begin * cols, g.size());
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& A = a.value();
  if (begin > end || end > A.cols())
    throw Error("SHAPE_MISMATCH", "slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) +
                                      ") out of " + A.shape_string());
  const std::size_t rows = A.rows(), cols = A.cols(), width = end - begin;
  Tensor out(matrix_shape(rows, width), 0.0);
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(A.data() + i * cols + begin, width, out.data() + i * width);
  Var parents[] = {a};
  return a.tape->record(std::move(out), parents,
                        [a, begin, rows, cols, width](Tape& t, const Tensor&, const Tensor& g) {
                          Tensor& ga = t.grad_slot(a);
                          for (std::size_t i = 0; i < rows; ++i)
                            k().axpy(1.0, g.data() + i * width, ga.data() + i * cols + begin, width);
                        });
}

Var gelu(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  Var parents[] = {a};
  return a.tape->record(std::move(out), parents, [a](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_slot(a);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      ga[i] += g[i] * (cdf + x[i] * pdf);
    }
  });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::tanh(v);
  Var parents[] = {a};
  return a.tape->record(std::move(out), parents, [a](Tape& t, const Tensor& y, const Tensor& g) {
    Tensor& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var masked_fill(Var a, const Tensor& additive_mask) {
  const Tensor& A = a.value();
  if (A.rows() != additive_mask.rows() || A.cols() != additive_mask.cols())
    shape_error("masked_fill", A, additive_mask);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += additive_mask[i];
  Var parents[] = {a};
  return a.tape->record(std::move(out), parents, [a, additive_mask](Tape& t, const Tensor&, const Tensor& g) {
    Tensor& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (std::isfinite(additive_mask[i])) ga[i] += g[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  Var parents[] = {a};
  return a.tape->record(Tensor::scalar(s), parents, [a](Tape& t, const Tensor&, const Tensor& g) {
    for (double& v : t.grad_slot(a).values()) v += g[0];
  });
}

Var nll_rows(Var log_probs, std::span<const std::size_t> targets) {
  const Tensor& L = log_probs.value();
  if (targets.size() != L.rows())
    throw Error("SHAPE_MISMATCH", "nll_rows: " + std::to_string(targets.size()) + " targets for " +
                                      L.shape_string());
  const std::size_t cols = L.cols();
  double s = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= cols)
      throw Error("TARGET_OUT_OF_RANGE", "nll_rows: target " + std::to_string(targets[i]) + " outside " +
                                             std::to_string(cols) + " classes");
    s -= L(i, targets[i]);
  }
  Var parents[] = {log_probs};
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return log_probs.tape->record(Tensor::scalar(s), parents,
                                [log_probs, cols, tg = std::move(tg)](Tape& t, const Tensor&, const Tensor& g) {
                                  Tensor& gl = t.grad_slot(log_probs);
                                  for (std::size_t i = 0; i < tg.size(); ++i) gl[i * cols + tg[i]] -= g[0];
                                });
}

}  // namespace ad
}  // namespace lightner
