#include "evokg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "evokg/errors.hpp"
#include "evokg/gemm.hpp"

namespace evokg {
namespace {

using NodePtr = std::shared_ptr<Node>;

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Var& x, std::size_t rank) {
  if (x.shape().size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(x.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor& Node::grad_slot() {
  if (!grad_ready) {
    grad = Tensor(value.shape(), 0.0);
    grad_ready = true;
  }
  return grad;
}

Var Var::parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                         std::vector<std::tuple<std::size_t, std::size_t, double>> triplets) {
  std::stable_sort(triplets.begin(), triplets.end(),
                   [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });
  SparseMatrix s;
  s.rows = rows;
  s.cols = cols;
  s.row_ptr.assign(rows + 1, 0);
  s.col_idx.reserve(triplets.size());
  s.values.reserve(triplets.size());
  for (const auto& [r, c, v] : triplets) {
    if (r >= rows || c >= cols) throw ShapeError("sparse entry out of range");
    ++s.row_ptr[r + 1];
    s.col_idx.push_back(c);
    s.values.push_back(v);
  }
  for (std::size_t r = 0; r < rows; ++r) s.row_ptr[r + 1] += s.row_ptr[r];
  return s;
}

void Tape::check_open() const {
  if (consumed_) throw std::logic_error("tape already consumed by backward()");
}

Var Tape::record(Tensor value, std::initializer_list<const Var*> inputs, std::function<void(Node&)> backward) {
  check_open();
  bool any = false;
  for (const Var* in : inputs) any = any || in->requires_grad();
  if (!record_ || !any) return Var::constant(std::move(value));
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->backward = std::move(backward);
  nodes_.push_back(node);
  return Var(std::move(node));
}

void Tape::backward(const Var& loss) {
  check_open();
  if (!loss.defined() || loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  const auto it = std::find(nodes_.rbegin(), nodes_.rend(), loss.shared());
  if (it == nodes_.rend()) throw std::logic_error("backward: loss was not recorded on this tape");
  loss.node()->grad_slot().fill(1.0);
  for (auto cur = it; cur != nodes_.rend(); ++cur) {
    Node& n = **cur;
    if (n.grad_ready && n.backward) n.backward(n);
  }
  for (auto& n : nodes_) n->backward = nullptr;
  nodes_.clear();
  consumed_ = true;
}

Var Tape::matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out(Shape{m, n});
  gemm(m, n, k, row_major(a.value().raw(), k), row_major(b.value().raw(), n), out.raw(), n, false);
  NodePtr an = a.shared(), bn = b.shared();
  return record(std::move(out), {&a, &b}, [an, bn, m, n, k](Node& o) {
    const MatrixView dc = row_major(o.grad.raw(), n);
    if (an->requires_grad)
      gemm(m, k, n, dc, row_major(bn->value.raw(), n).transposed(), an->grad_slot().raw(), k, true);
    if (bn->requires_grad)
      gemm(k, n, m, row_major(an->value.raw(), k).transposed(), dc, bn->grad_slot().raw(), n, true);
  });
}

Var Tape::matmul_nt(const Var& a, const Var& b) {
  require_rank("matmul_nt", a, 2);
  require_rank("matmul_nt", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw ShapeError("matmul_nt: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + "^T");
  }
  Tensor out(Shape{m, n});
  gemm(m, n, k, row_major(a.value().raw(), k), row_major(b.value().raw(), k).transposed(), out.raw(), n, false);
  NodePtr an = a.shared(), bn = b.shared();
  return record(std::move(out), {&a, &b}, [an, bn, m, n, k](Node& o) {
    const MatrixView dc = row_major(o.grad.raw(), n);
    if (an->requires_grad) gemm(m, k, n, dc, row_major(bn->value.raw(), k), an->grad_slot().raw(), k, true);
    if (bn->requires_grad)
      gemm(n, k, m, dc.transposed(), row_major(an->value.raw(), k), bn->grad_slot().raw(), k, true);
  });
}

Var Tape::spmm(std::shared_ptr<const SparseMatrix> s, const Var& x) {
  require_rank("spmm", x, 2);
  if (x.shape()[0] != s->cols) {
    throw ShapeError("spmm: sparse [" + std::to_string(s->rows) + "x" + std::to_string(s->cols) + "] times " +
                     shape_string(x.shape()));
  }
  const std::size_t d = x.shape()[1];
  Tensor out(Shape{s->rows, d});
  const double* xv = x.value().raw();
  for (std::size_t r = 0; r < s->rows; ++r) {
    double* dst = out.raw() + r * d;
    for (std::size_t e = s->row_ptr[r]; e < s->row_ptr[r + 1]; ++e) {
      const double v = s->values[e];
      const double* src = xv + s->col_idx[e] * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += v * src[j];
    }
  }
  NodePtr xn = x.shared();
  return record(std::move(out), {&x}, [s, xn, d](Node& o) {
    double* gx = xn->grad_slot().raw();
    const double* go = o.grad.raw();
    for (std::size_t r = 0; r < s->rows; ++r) {
      for (std::size_t e = s->row_ptr[r]; e < s->row_ptr[r + 1]; ++e) {
        const double v = s->values[e];
        double* dst = gx + s->col_idx[e] * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += v * go[r * d + j];
      }
    }
  });
}

Var Tape::conv1d(const Var& input, const Var& kernels, std::size_t padding, bool flat_output) {
  require_rank("conv1d kernels", kernels, 3);
  const bool batched = input.shape().size() == 3;
  if (!batched && input.shape().size() != 2) {
    throw ShapeError("conv1d: input must be [C x L] or [B x C x L], got " + shape_string(input.shape()));
  }
  const std::size_t nb = batched ? input.shape()[0] : 1;
  const std::size_t nc = input.shape()[batched ? 1 : 0];
  const std::size_t len = input.shape()[batched ? 2 : 1];
  const std::size_t nk = kernels.shape()[0], width = kernels.shape()[2];
  if (kernels.shape()[1] != nc) {
    throw ShapeError("conv1d: kernel channels " + shape_string(kernels.shape()) + " vs input " +
                     shape_string(input.shape()));
  }
  if (width == 0 || width > len + 2 * padding) {
    throw ShapeError("conv1d: kernel width " + std::to_string(width) + " exceeds padded input length " +
                     std::to_string(len + 2 * padding));
  }
  const std::size_t out_len = len + 2 * padding - width + 1;
  Tensor out(!batched ? Shape{nk, out_len} : flat_output ? Shape{nb, nk * out_len} : Shape{nb, nk, out_len});
  const double* x = input.value().raw();
  const double* w = kernels.value().raw();
  // out[b,k,t] = sum_c sum_u w[k,c,u] * x[b,c,t+u-padding], accumulated in (c, u) order.
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t k = 0; k < nk; ++k) {
      double* dst = out.raw() + (b * nk + k) * out_len;
      for (std::size_t c = 0; c < nc; ++c) {
        const double* src = x + (b * nc + c) * len;
        for (std::size_t u = 0; u < width; ++u) {
          const double wv = w[(k * nc + c) * width + u];
          // valid t: 0 <= t + u - padding < len
          const std::size_t t_lo = padding > u ? padding - u : 0;
          const std::size_t t_hi = std::min(out_len, len + padding - u);
          for (std::size_t t = t_lo; t < t_hi; ++t) dst[t] += wv * src[t + u - padding];
        }
      }
    }
  }
  NodePtr xn = input.shared(), wn = kernels.shared();
  return record(std::move(out), {&input, &kernels}, [xn, wn, nb, nc, len, nk, width, padding, out_len](Node& o) {
    const double* go = o.grad.raw();
    const double* x = xn->value.raw();
    const double* w = wn->value.raw();
    double* gx = xn->requires_grad ? xn->grad_slot().raw() : nullptr;
    double* gw = wn->requires_grad ? wn->grad_slot().raw() : nullptr;
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t k = 0; k < nk; ++k) {
        const double* g = go + (b * nk + k) * out_len;
        for (std::size_t c = 0; c < nc; ++c) {
          for (std::size_t u = 0; u < width; ++u) {
            const std::size_t t_lo = padding > u ? padding - u : 0;
            const std::size_t t_hi = std::min(out_len, len + padding - u);
            const std::size_t wi = (k * nc + c) * width + u;
            const std::size_t base = (b * nc + c) * len;
            if (gx) {
              const double wv = w[wi];
              for (std::size_t t = t_lo; t < t_hi; ++t) gx[base + t + u - padding] += wv * g[t];
            }
            if (gw) {
              double acc = 0.0;
              for (std::size_t t = t_lo; t < t_hi; ++t) acc += g[t] * x[base + t + u - padding];
              gw[wi] += acc;
            }
          }
        }
      }
    }
  });
}

Var Tape::add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  NodePtr an = a.shared(), bn = b.shared();
  return record(std::move(out), {&a, &b}, [an, bn](Node& o) {
    for (const auto& in : {an, bn}) {
      if (!in->requires_grad) continue;
      Tensor& g = in->grad_slot();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Var Tape::sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  NodePtr an = a.shared(), bn = b.shared();
  return record(std::move(out), {&a, &b}, [an, bn](Node& o) {
    if (an->requires_grad) {
      Tensor& g = an->grad_slot();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      Tensor& g = bn->grad_slot();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Var Tape::mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  NodePtr an = a.shared(), bn = b.shared();
  return record(std::move(out), {&a, &b}, [an, bn](Node& o) {
    if (an->requires_grad) {
      Tensor& g = an->grad_slot();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      Tensor& g = bn->grad_slot();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * an->value[i];
    }
  });
}

Var Tape::add_bias(const Var& x, const Var& bias) {
  require_rank("add_bias", x, 2);
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (bias.value().size() != n) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " vs rows " + shape_string(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.value()[j];
  NodePtr xn = x.shared(), bn = bias.shared();
  return record(std::move(out), {&x, &bias}, [xn, bn, m, n](Node& o) {
    if (xn->requires_grad) {
      Tensor& g = xn->grad_slot();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      Tensor& g = bn->grad_slot();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
    }
  });
}

Var Tape::affine(const Var& x, double scale, double shift) {
  Tensor out = x.value();
  for (double& v : out.data()) v = scale * v + shift;
  NodePtr xn = x.shared();
  return record(std::move(out), {&x}, [xn, scale](Node& o) {
    Tensor& g = xn->grad_slot();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * o.grad[i];
  });
}

Var Tape::sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = stable_sigmoid(v);
  NodePtr xn = x.shared();
  return record(std::move(out), {&x}, [xn](Node& o) {
    Tensor& g = xn->grad_slot();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = o.value[i];
      g[i] += o.grad[i] * s * (1.0 - s);
    }
  });
}

Var Tape::tanh(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::tanh(v);
  NodePtr xn = x.shared();
  return record(std::move(out), {&x}, [xn](Node& o) {
    Tensor& g = xn->grad_slot();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double t = o.value[i];
      g[i] += o.grad[i] * (1.0 - t * t);
    }
  });
}

Var Tape::relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  NodePtr xn = x.shared();
  return record(std::move(out), {&x}, [xn](Node& o) {
    Tensor& g = xn->grad_slot();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xn->value[i] > 0.0) g[i] += o.grad[i];
  });
}

namespace {
void check_rrelu(double lower, double upper, Mode mode, const Rng* rng) {
  if (!(lower > 0.0 && lower <= upper && upper < 1.0)) {
    throw ConfigError("rrelu: slope bounds must satisfy 0 < lower <= upper < 1");
  }
  if (mode == Mode::kTrain && rng == nullptr) throw ConfigError("rrelu: train mode needs a random generator");
}
}  // namespace

Var Tape::rrelu(Var&& x, double lower, double upper, Mode mode, Rng* rng) {
  if (mode == Mode::kEval && x.defined() && !x.requires_grad() && x.shared().use_count() == 1) {
    check_rrelu(lower, upper, mode, rng);
    check_open();
    const double fixed = (lower + upper) / 2.0;
    for (double& v : x.mutable_value().data()) v = v >= 0.0 ? v : v * fixed;
    return std::move(x);
  }
  return rrelu(static_cast<const Var&>(x), lower, upper, mode, rng);
}

Var Tape::rrelu(const Var& x, double lower, double upper, Mode mode, Rng* rng) {
  check_rrelu(lower, upper, mode, rng);
  Tensor out = x.value();
  if (mode == Mode::kEval) {
    // Fixed slope: no per-element state, the backward pass reads the input sign.
    const double fixed = (lower + upper) / 2.0;
    for (double& v : out.data()) v = v >= 0.0 ? v : v * fixed;
    NodePtr xn = x.shared();
    return record(std::move(out), {&x}, [xn, fixed](Node& o) {
      Tensor& g = xn->grad_slot();
      const Tensor& xv = xn->value;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (xv[i] >= 0.0 ? 1.0 : fixed);
    });
  }
  Tensor slope(x.shape(), 1.0);
  std::uniform_real_distribution<double> draw(lower, upper);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] >= 0.0) continue;
    slope[i] = draw(*rng);
    out[i] *= slope[i];
  }
  NodePtr xn = x.shared();
  return record(std::move(out), {&x}, [xn, slope = std::move(slope)](Node& o) {
    Tensor& g = xn->grad_slot();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * slope[i];
  });
}

Var Tape::dropout(const Var& x, double p, Mode mode, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must lie in [0, 1)");
  check_open();
  if (mode == Mode::kEval || p == 0.0) return x;
  if (rng == nullptr) throw ConfigError("dropout: train mode needs a random generator");
  Tensor mask(x.shape(), 0.0);
  const double keep_scale = 1.0 / (1.0 - p);
  std::bernoulli_distribution drop(p);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = drop(*rng) ? 0.0 : keep_scale;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  NodePtr xn = x.shared();
  return record(std::move(out), {&x}, [xn, mask = std::move(mask)](Node& o) {
    Tensor& g = xn->grad_slot();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * mask[i];
  });
}

Var Tape::reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  NodePtr xn = x.shared();
  return record(std::move(out), {&x}, [xn](Node& o) {
    Tensor& g = xn->grad_slot();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Var Tape::concat_cols(const Var& a, const Var& b) {
  require_rank("concat_cols", a, 2);
  require_rank("concat_cols", b, 2);
  const std::size_t m = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
  if (b.shape()[0] != m) {
    throw ShapeError("concat_cols: row counts differ, " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out(Shape{m, p + q});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.value().raw() + i * p, p, out.raw() + i * (p + q));
    std::copy_n(b.value().raw() + i * q, q, out.raw() + i * (p + q) + p);
  }
  NodePtr an = a.shared(), bn = b.shared();
  return record(std::move(out), {&a, &b}, [an, bn, m, p, q](Node& o) {
    if (an->requires_grad) {
      Tensor& g = an->grad_slot();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) g[i * p + j] += o.grad[i * (p + q) + j];
    }
    if (bn->requires_grad) {
      Tensor& g = bn->grad_slot();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < q; ++j) g[i * q + j] += o.grad[i * (p + q) + p + j];
    }
  });
}

Var Tape::gather_rows(const Var& x, std::vector<std::size_t> index) {
  require_rank("gather_rows", x, 2);
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  Tensor out(Shape{index.size(), d});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) {
      throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                       shape_string(x.shape()));
    }
    std::copy_n(x.value().raw() + index[i] * d, d, out.raw() + i * d);
  }
  NodePtr xn = x.shared();
  return record(std::move(out), {&x}, [xn, index = std::move(index), d](Node& o) {
    Tensor& g = xn->grad_slot();
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[index[i] * d + j] += o.grad[i * d + j];
  });
}

Var Tape::mean_rows(const Var& x) {
  require_rank("mean_rows", x, 2);
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (m == 0) throw ShapeError("mean_rows: no rows");
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += x.value()[i * n + j];
  for (double& v : out.data()) v /= static_cast<double>(m);
  NodePtr xn = x.shared();
  return record(std::move(out), {&x}, [xn, m, n](Node& o) {
    Tensor& g = xn->grad_slot();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o.grad[j] / static_cast<double>(m);
  });
}

Var Tape::row_sum(const Var& x) {
  require_rank("row_sum", x, 2);
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += x.value()[i * n + j];
  NodePtr xn = x.shared();
  return record(std::move(out), {&x}, [xn, m, n](Node& o) {
    Tensor& g = xn->grad_slot();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o.grad[i];
  });
}

Var Tape::sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  NodePtr xn = x.shared();
  return record(Tensor::scalar(total), {&x}, [xn](Node& o) {
    Tensor& g = xn->grad_slot();
    const double go = o.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go;
  });
}

Var Tape::normalize_rows(const Var& x, double zero_tol, std::size_t* zero_rows) {
  require_rank("normalize_rows", x, 2);
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out = x.value();
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += out[i * n + j] * out[i * n + j];
    norms[i] = std::sqrt(ss);
    if (norms[i] < zero_tol) {
      if (zero_rows) ++*zero_rows;
      continue;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= norms[i];
  }
  NodePtr xn = x.shared();
  return record(std::move(out), {&x}, [xn, norms = std::move(norms), zero_tol, m, n](Node& o) {
    Tensor& g = xn->grad_slot();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = o.value.raw() + i * n;
      const double* gy = o.grad.raw() + i * n;
      if (norms[i] < zero_tol) {
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += gy[j];
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += (gy[j] - y[j] * dot) / norms[i];
    }
  });
}

Var Tape::binary_cross_entropy(const Var& probs, const Tensor& labels, std::span<const double> row_weights,
                               double eps) {
  require_rank("binary_cross_entropy", probs, 2);
  if (labels.shape() != probs.shape()) {
    throw ShapeError("binary_cross_entropy: labels " + shape_string(labels.shape()) + " vs probabilities " +
                     shape_string(probs.shape()));
  }
  const std::size_t q = probs.shape()[0], n = probs.shape()[1];
  std::vector<double> weights(row_weights.begin(), row_weights.end());
  if (weights.empty()) weights.assign(q, 1.0);
  if (weights.size() != q) throw ShapeError("binary_cross_entropy: one weight per row required");
  double total_weight = 0.0;
  for (double w : weights) total_weight += w;
  if (q == 0 || total_weight <= 0.0) return Var::constant(Tensor::scalar(0.0));

  const double* p = probs.value().raw();
  double loss = 0.0;
  for (std::size_t r = 0; r < q; ++r) {
    double row = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double pc = std::clamp(p[r * n + i], eps, 1.0 - eps);
      const double y = labels[r * n + i];
      row -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
    }
    loss += weights[r] * row;
  }
  loss /= total_weight;
  NodePtr pn = probs.shared();
  return record(Tensor::scalar(loss), {&probs},
                [pn, labels, weights = std::move(weights), total_weight, eps, q, n](Node& o) {
                  Tensor& g = pn->grad_slot();
                  const double go = o.grad[0];
                  for (std::size_t r = 0; r < q; ++r) {
                    const double scale = go * weights[r] / total_weight;
                    for (std::size_t i = 0; i < n; ++i) {
                      const double pv = pn->value[r * n + i];
                      if (pv <= eps || pv >= 1.0 - eps) continue;
                      const double y = labels[r * n + i];
                      g[r * n + i] += scale * (-y / pv + (1.0 - y) / (1.0 - pv));
                    }
                  }
                });
}

}  // namespace evokg
