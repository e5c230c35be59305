#include "ppgn/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ppgn/errors.hpp"

PPGN_NAMESPACE_BEGIN
namespace nn {

namespace {

using MatR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using MapV = Eigen::Map<Vec>;
using CMapV = Eigen::Map<const Vec>;

using BackwardFn = std::function<void(detail::Node&)>;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  std::ostringstream msg;
  msg << op << ": incompatible shapes " << shape_str(a) << " and " << shape_str(b);
  throw ShapeError(msg.str());
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    std::ostringstream msg;
    msg << op << ": expected rank " << rank << ", got shape " << shape_str(t.shape());
    throw ShapeError(msg.str());
  }
}

/// Builds an output tensor and, when a tape is active and any input tracks
/// gradients, records it together with its backward rule.
Tensor emit(Shape shape, std::vector<Scalar> data, std::initializer_list<Tensor> inputs,
            const char* op, BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  Tape* tape = Tape::current();
  const bool track = tape != nullptr &&
                     std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->op = op;
    for (const auto& t : inputs) node->inputs.push_back(t.node_ptr());
    node->backward = std::move(backward);
    tape->record(node);
  }
  return Tensor(std::move(node));
}

bool wants_grad(const std::shared_ptr<detail::Node>& n) {
  return n != nullptr && n->requires_grad;
}

template <typename F>
Tensor unary(const Tensor& x, const char* op, F forward, Scalar (*deriv)(Scalar x, Scalar y)) {
  std::vector<Scalar> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return emit(x.shape(), std::move(out), {x}, op, [deriv](detail::Node& self) {
    auto& src = self.inputs[0];
    if (!wants_grad(src)) return;
    auto g = src->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(src->data[i], self.data[i]);
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) shape_mismatch("matmul", a.shape(), b.shape());
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<Scalar> out(static_cast<std::size_t>(m * n));
  MapR(out.data(), m, n).noalias() =
      CMapR(a.data().data(), m, k) * CMapR(b.data().data(), k, n);
  return emit({a.dim(0), b.dim(1)}, std::move(out), {a, b}, "matmul",
              [m, k, n](detail::Node& self) {
                CMapR dy(self.grad.data(), m, n);
                auto& na = self.inputs[0];
                auto& nb = self.inputs[1];
                if (wants_grad(na)) {
                  MapR(na->grad_buffer().data(), m, k).noalias() +=
                      dy * CMapR(nb->data.data(), k, n).transpose();
                }
                if (wants_grad(nb)) {
                  MapR(nb->grad_buffer().data(), k, n).noalias() +=
                      CMapR(na->data.data(), m, k).transpose() * dy;
                }
              });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_bias", bias, 1);
  if (x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    shape_mismatch("add_bias", x.shape(), bias.shape());
  }
  const std::size_t c = bias.dim(0);
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
  return emit(x.shape(), std::move(out), {x, bias}, "add_bias", [c](detail::Node& self) {
    auto& nx = self.inputs[0];
    auto& nb = self.inputs[1];
    if (wants_grad(nx)) {
      auto g = nx->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(nb)) {
      auto g = nb->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % c] += self.grad[i];
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_bias(matmul(x, weight), bias);
}

namespace {

template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, DA da, DB db) {
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
  std::vector<Scalar> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i], y[i]);
  return emit(a.shape(), std::move(out), {a, b}, op, [da, db](detail::Node& self) {
    auto& na = self.inputs[0];
    auto& nb = self.inputs[1];
    if (wants_grad(na)) {
      auto g = na->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += self.grad[i] * da(na->data[i], nb->data[i]);
      }
    }
    if (wants_grad(nb)) {
      auto g = nb->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += self.grad[i] * db(na->data[i], nb->data[i]);
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](Scalar x, Scalar y) { return x + y; },
      [](Scalar, Scalar) { return Scalar(1); }, [](Scalar, Scalar) { return Scalar(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](Scalar x, Scalar y) { return x - y; },
      [](Scalar, Scalar) { return Scalar(1); }, [](Scalar, Scalar) { return Scalar(-1); });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "hadamard", [](Scalar x, Scalar y) { return x * y; },
      [](Scalar, Scalar y) { return y; }, [](Scalar x, Scalar) { return x; });
}

Tensor scale(const Tensor& a, Scalar factor) {
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return emit(a.shape(), std::move(out), {a}, "scale", [factor](detail::Node& self) {
    auto& src = self.inputs[0];
    if (!wants_grad(src)) return;
    auto g = src->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](Scalar v) { return v > 0 ? v : Scalar(0); },
      [](Scalar v, Scalar) { return v > 0 ? Scalar(1) : Scalar(0); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](Scalar v) { return std::tanh(v); },
      [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](Scalar v) {
        // Branches keep exp() from overflowing for large |v|.
        if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
        const Scalar e = std::exp(v);
        return e / (Scalar(1) + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](Scalar v) { return v * v; },
      [](Scalar v, Scalar) { return Scalar(2) * v; });
}

Tensor log_clamped(const Tensor& x, Scalar floor) {
  std::vector<Scalar> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(in[i], floor));
  return emit(x.shape(), std::move(out), {x}, "log_clamped", [floor](detail::Node& self) {
    auto& src = self.inputs[0];
    if (!wants_grad(src)) return;
    auto g = src->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (src->data[i] > floor) g[i] += self.grad[i] / src->data[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (auto v : x.data()) acc += v;
  return emit({1}, {static_cast<Scalar>(acc)}, {x}, "sum", [](detail::Node& self) {
    auto& src = self.inputs[0];
    if (!wants_grad(src)) return;
    for (auto& g : src->grad_buffer()) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.numel()));
}

Tensor l1_normalize(const Tensor& x) {
  if (x.rank() == 0 || x.numel() == 0) throw ShapeError("l1_normalize: empty tensor");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto in = x.data();
  std::vector<Scalar> out(x.numel());
  auto norms = std::make_shared<std::vector<Scalar>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::abs(in[r * n + j]);
    if (!(s > 0.0)) {
      throw InvalidInputError("l1_normalize: row " + std::to_string(r) +
                              " has zero L1 norm");
    }
    (*norms)[r] = static_cast<Scalar>(s);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = in[r * n + j] / static_cast<Scalar>(s);
  }
  return emit(x.shape(), std::move(out), {x}, "l1_normalize",
              [n, rows, norms](detail::Node& self) {
                auto& src = self.inputs[0];
                if (!wants_grad(src)) return;
                auto g = src->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                  const Scalar s = (*norms)[r];
                  // d(x_j/s)/dx_i = delta_ij/s - x_j*sign(x_i)/s^2
                  double dot = 0.0;
                  for (std::size_t j = 0; j < n; ++j) {
                    dot += self.grad[r * n + j] * src->data[r * n + j];
                  }
                  const Scalar k = static_cast<Scalar>(dot) / (s * s);
                  for (std::size_t i = 0; i < n; ++i) {
                    const Scalar xi = src->data[r * n + i];
                    const Scalar sign = xi > 0 ? Scalar(1) : (xi < 0 ? Scalar(-1) : Scalar(0));
                    g[r * n + i] += self.grad[r * n + i] / s - sign * k;
                  }
                }
              });
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0 || x.numel() == 0) throw ShapeError("log_softmax: empty tensor");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto in = x.data();
  std::vector<Scalar> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = in.data() + r * n;
    const Scalar mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(static_cast<double>(row[j] - mx));
    const Scalar lse = mx + static_cast<Scalar>(std::log(s));
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = row[j] - lse;
  }
  return emit(x.shape(), std::move(out), {x}, "log_softmax", [n, rows](detail::Node& self) {
    auto& src = self.inputs[0];
    if (!wants_grad(src)) return;
    auto g = src->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += self.grad[r * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        g[r * n + j] += self.grad[r * n + j] -
                        std::exp(self.data[r * n + j]) * static_cast<Scalar>(gs);
      }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
              int pad) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  const std::size_t batch = x.dim(0), height = x.dim(1), width = x.dim(2), cin = x.dim(3);
  const std::size_t k = weight.dim(0), cout = weight.dim(3);
  if (weight.dim(1) != k || weight.dim(2) != cin) {
    shape_mismatch("conv2d", x.shape(), weight.shape());
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    shape_mismatch("conv2d bias", weight.shape(), bias.shape());
  }
  if (stride <= 0 || pad < 0 || height + 2 * static_cast<std::size_t>(pad) < k ||
      width + 2 * static_cast<std::size_t>(pad) < k) {
    throw ShapeError("conv2d: invalid stride/pad for input " + shape_str(x.shape()));
  }
  const auto s = static_cast<std::size_t>(stride);
  const auto p = static_cast<std::size_t>(pad);
  const std::size_t ho = (height + 2 * p - k) / s + 1;
  const std::size_t wo = (width + 2 * p - k) / s + 1;
  const std::size_t rows = batch * ho * wo;
  const std::size_t kdim = k * k * cin;
  const bool pointwise = k == 1 && s == 1 && p == 0;

  // im2col: one row per output position, columns ordered (ky, kx, cin).
  auto col = std::make_shared<std::vector<Scalar>>();
  if (!pointwise) {
    col->assign(rows * kdim, Scalar(0));
    const Scalar* src = x.data().data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          Scalar* dst = col->data() + ((b * ho + oy) * wo + ox) * kdim;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) -
                                      static_cast<std::ptrdiff_t>(p);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) -
                                        static_cast<std::ptrdiff_t>(p);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
              const Scalar* from =
                  src + ((b * height + static_cast<std::size_t>(iy)) * width +
                         static_cast<std::size_t>(ix)) * cin;
              std::copy(from, from + cin, dst + (ky * k + kx) * cin);
            }
          }
        }
      }
    }
  }
  const auto m = static_cast<Eigen::Index>(rows);
  const auto kk = static_cast<Eigen::Index>(kdim);
  const auto n = static_cast<Eigen::Index>(cout);
  const Scalar* col_ptr = pointwise ? x.data().data() : col->data();

  std::vector<Scalar> out(rows * cout);
  MapR y(out.data(), m, n);
  y.noalias() = CMapR(col_ptr, m, kk) * CMapR(weight.data().data(), kk, n);
  if (bias.defined()) y.rowwise() += CMapV(bias.data().data(), n).transpose();

  return emit(
      {batch, ho, wo, cout}, std::move(out), {x, weight, bias}, "conv2d",
      [=](detail::Node& self) {
        CMapR dy(self.grad.data(), m, n);
        auto& nx = self.inputs[0];
        auto& nw = self.inputs[1];
        auto& nb = self.inputs[2];
        const Scalar* colp = pointwise ? nx->data.data() : col->data();
        if (wants_grad(nw)) {
          MapR(nw->grad_buffer().data(), kk, n).noalias() +=
              CMapR(colp, m, kk).transpose() * dy;
        }
        if (wants_grad(nb)) {
          MapV(nb->grad_buffer().data(), n) += dy.colwise().sum().transpose();
        }
        if (!wants_grad(nx)) return;
        if (pointwise) {
          MapR(nx->grad_buffer().data(), m, kk).noalias() +=
              dy * CMapR(nw->data.data(), kk, n).transpose();
          return;
        }
        MatR dcol = dy * CMapR(nw->data.data(), kk, n).transpose();
        auto gx = nx->grad_buffer();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const Scalar* from = dcol.data() + ((b * ho + oy) * wo + ox) * kdim;
              for (std::size_t ky = 0; ky < k; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) -
                                          static_cast<std::ptrdiff_t>(p);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) -
                                            static_cast<std::ptrdiff_t>(p);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
                  Scalar* to = gx.data() + ((b * height + static_cast<std::size_t>(iy)) * width +
                                            static_cast<std::size_t>(ix)) * cin;
                  const Scalar* seg = from + (ky * k + kx) * cin;
                  for (std::size_t c = 0; c < cin; ++c) to[c] += seg[c];
                }
              }
            }
          }
        }
      });
}

Tensor instance_norm(const Tensor& x, Scalar eps) {
  require_rank("instance_norm", x, 4);
  const std::size_t batch = x.dim(0), spatial = x.dim(1) * x.dim(2), ch = x.dim(3);
  if (spatial == 0) throw ShapeError("instance_norm: needs at least one spatial element");
  const auto in = x.data();
  std::vector<Scalar> out(x.numel());
  auto inv_std = std::make_shared<std::vector<Scalar>>(batch * ch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      double m = 0.0;
      for (std::size_t i = 0; i < spatial; ++i) m += in[(b * spatial + i) * ch + c];
      m /= static_cast<double>(spatial);
      double v = 0.0;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double d = in[(b * spatial + i) * ch + c] - m;
        v += d * d;
      }
      v /= static_cast<double>(spatial);
      const double is = 1.0 / std::sqrt(v + eps);
      (*inv_std)[b * ch + c] = static_cast<Scalar>(is);
      for (std::size_t i = 0; i < spatial; ++i) {
        const std::size_t idx = (b * spatial + i) * ch + c;
        out[idx] = static_cast<Scalar>((in[idx] - m) * is);
      }
    }
  }
  return emit(x.shape(), std::move(out), {x}, "instance_norm",
              [batch, spatial, ch, inv_std](detail::Node& self) {
                auto& src = self.inputs[0];
                if (!wants_grad(src)) return;
                auto g = src->grad_buffer();
                const double inv_n = 1.0 / static_cast<double>(spatial);
                for (std::size_t b = 0; b < batch; ++b) {
                  for (std::size_t c = 0; c < ch; ++c) {
                    double gm = 0.0, gy = 0.0;
                    for (std::size_t i = 0; i < spatial; ++i) {
                      const std::size_t idx = (b * spatial + i) * ch + c;
                      gm += self.grad[idx];
                      gy += self.grad[idx] * self.data[idx];
                    }
                    gm *= inv_n;
                    gy *= inv_n;
                    const double is = (*inv_std)[b * ch + c];
                    for (std::size_t i = 0; i < spatial; ++i) {
                      const std::size_t idx = (b * spatial + i) * ch + c;
                      g[idx] += static_cast<Scalar>(
                          is * (self.grad[idx] - gm - self.data[idx] * gy));
                    }
                  }
                }
              });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  const BatchNormOptions& options) {
  if (x.rank() < 2) throw ShapeError("batch_norm: expected [..., C], got " + shape_str(x.shape()));
  const std::size_t ch = x.shape().back();
  const std::size_t rows = x.numel() / ch;
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->rank() != 1 || t->dim(0) != ch) shape_mismatch("batch_norm", x.shape(), t->shape());
  }
  if (rows == 0) throw ShapeError("batch_norm: needs at least one batch element");

  const auto in = x.data();
  const auto gam = gamma.data();
  const auto bet = beta.data();
  std::vector<Scalar> out(x.numel());
  auto xhat = std::make_shared<std::vector<Scalar>>(x.numel());
  auto inv_std = std::make_shared<std::vector<Scalar>>(ch);

  if (training) {
    std::vector<double> m(ch, 0.0), v(ch, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < ch; ++c) m[c] += in[r * ch + c];
    }
    for (auto& mc : m) mc /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < ch; ++c) {
        const double d = in[r * ch + c] - m[c];
        v[c] += d * d;
      }
    }
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::size_t c = 0; c < ch; ++c) {
      const double biased = v[c] / static_cast<double>(rows);
      const double unbiased = rows > 1 ? v[c] / static_cast<double>(rows - 1) : biased;
      (*inv_std)[c] = static_cast<Scalar>(1.0 / std::sqrt(biased + options.eps));
      rm[c] = static_cast<Scalar>((1.0 - options.momentum) * rm[c] + options.momentum * m[c]);
      rv[c] = static_cast<Scalar>((1.0 - options.momentum) * rv[c] + options.momentum * unbiased);
    }
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t i = r * ch + c;
        (*xhat)[i] = static_cast<Scalar>((in[i] - m[c]) * (*inv_std)[c]);
      }
    }
  } else {
    const auto rm = running_mean.data();
    const auto rv = running_var.data();
    for (std::size_t c = 0; c < ch; ++c) {
      (*inv_std)[c] = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(rv[c]) + options.eps));
    }
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t i = r * ch + c;
        (*xhat)[i] = (in[i] - rm[c]) * (*inv_std)[c];
      }
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = gam[i % ch] * (*xhat)[i] + bet[i % ch];
  }

  return emit(x.shape(), std::move(out), {x, gamma, beta}, "batch_norm",
              [rows, ch, xhat, inv_std, training](detail::Node& self) {
                auto& nx = self.inputs[0];
                auto& ng = self.inputs[1];
                auto& nbeta = self.inputs[2];
                const auto& dy = self.grad;
                if (wants_grad(ng) || wants_grad(nbeta)) {
                  std::vector<double> dg(ch, 0.0), db(ch, 0.0);
                  for (std::size_t i = 0; i < dy.size(); ++i) {
                    dg[i % ch] += dy[i] * (*xhat)[i];
                    db[i % ch] += dy[i];
                  }
                  if (wants_grad(ng)) {
                    auto g = ng->grad_buffer();
                    for (std::size_t c = 0; c < ch; ++c) g[c] += static_cast<Scalar>(dg[c]);
                  }
                  if (wants_grad(nbeta)) {
                    auto g = nbeta->grad_buffer();
                    for (std::size_t c = 0; c < ch; ++c) g[c] += static_cast<Scalar>(db[c]);
                  }
                }
                if (!wants_grad(nx)) return;
                auto gx = nx->grad_buffer();
                const auto& gam = ng->data;
                if (!training) {
                  for (std::size_t i = 0; i < dy.size(); ++i) {
                    gx[i] += dy[i] * gam[i % ch] * (*inv_std)[i % ch];
                  }
                  return;
                }
                std::vector<double> mean_d(ch, 0.0), mean_dx(ch, 0.0);
                for (std::size_t i = 0; i < dy.size(); ++i) {
                  const double d = dy[i] * gam[i % ch];
                  mean_d[i % ch] += d;
                  mean_dx[i % ch] += d * (*xhat)[i];
                }
                for (std::size_t c = 0; c < ch; ++c) {
                  mean_d[c] /= static_cast<double>(rows);
                  mean_dx[c] /= static_cast<double>(rows);
                }
                for (std::size_t i = 0; i < dy.size(); ++i) {
                  const std::size_t c = i % ch;
                  const double d = dy[i] * gam[c];
                  gx[i] += static_cast<Scalar>(
                      (*inv_std)[c] * (d - mean_d[c] - (*xhat)[i] * mean_dx[c]));
                }
              });
}

Tensor expand_spatial(const Tensor& v, std::size_t height, std::size_t width) {
  require_rank("expand_spatial", v, 2);
  const std::size_t batch = v.dim(0), ch = v.dim(1), spatial = height * width;
  std::vector<Scalar> out(batch * spatial * ch);
  const auto in = v.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < spatial; ++i) {
      std::copy(in.begin() + static_cast<std::ptrdiff_t>(b * ch),
                in.begin() + static_cast<std::ptrdiff_t>((b + 1) * ch),
                out.begin() + static_cast<std::ptrdiff_t>((b * spatial + i) * ch));
    }
  }
  return emit({batch, height, width, ch}, std::move(out), {v}, "expand_spatial",
              [batch, spatial, ch](detail::Node& self) {
                auto& src = self.inputs[0];
                if (!wants_grad(src)) return;
                auto g = src->grad_buffer();
                for (std::size_t b = 0; b < batch; ++b) {
                  for (std::size_t i = 0; i < spatial; ++i) {
                    for (std::size_t c = 0; c < ch; ++c) {
                      g[b * ch + c] += self.grad[(b * spatial + i) * ch + c];
                    }
                  }
                }
              });
}

Tensor embedding_bag_mean(const Tensor& table, const std::vector<std::vector<int>>& ids) {
  require_rank("embedding_bag_mean", table, 2);
  const std::size_t vocab = table.dim(0), dim = table.dim(1), batch = ids.size();
  const auto tab = table.data();
  std::vector<Scalar> out(batch * dim, Scalar(0));
  for (std::size_t b = 0; b < batch; ++b) {
    if (ids[b].empty()) throw InvalidInputError("embedding_bag_mean: empty token list");
    const Scalar inv = Scalar(1) / static_cast<Scalar>(ids[b].size());
    for (int id : ids[b]) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
        throw InvalidInputError("embedding_bag_mean: token id " + std::to_string(id) +
                                " outside vocabulary of " + std::to_string(vocab));
      }
      for (std::size_t j = 0; j < dim; ++j) {
        out[b * dim + j] += tab[static_cast<std::size_t>(id) * dim + j] * inv;
      }
    }
  }
  return emit({batch, dim}, std::move(out), {table}, "embedding_bag_mean",
              [ids, dim](detail::Node& self) {
                auto& src = self.inputs[0];
                if (!wants_grad(src)) return;
                auto g = src->grad_buffer();
                for (std::size_t b = 0; b < ids.size(); ++b) {
                  const Scalar inv = Scalar(1) / static_cast<Scalar>(ids[b].size());
                  for (int id : ids[b]) {
                    for (std::size_t j = 0; j < dim; ++j) {
                      g[static_cast<std::size_t>(id) * dim + j] += self.grad[b * dim + j] * inv;
                    }
                  }
                }
              });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  std::vector<Scalar> out(x.data().begin(), x.data().end());
  return emit(std::move(shape), std::move(out), {x}, "reshape", [](detail::Node& self) {
    auto& src = self.inputs[0];
    if (!wants_grad(src)) return;
    auto g = src->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != first.size()) shape_mismatch("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) shape_mismatch("concat", first, s);
    }
    widths.push_back(s[axis] * inner);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  const std::size_t row = total * inner;
  std::vector<Scalar> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * widths[p]), widths[p],
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    }
    offset += widths[p];
  }

  // emit() takes an initializer list; record the dynamic input set by hand.
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(out_shape);
  node->data = std::move(out);
  Tape* tape = Tape::current();
  const bool track = tape != nullptr && std::any_of(parts.begin(), parts.end(),
                                                    [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->op = "concat";
    for (const auto& t : parts) node->inputs.push_back(t.node_ptr());
    node->backward = [outer, row, widths](detail::Node& self) {
      std::size_t off = 0;
      for (std::size_t p = 0; p < self.inputs.size(); ++p) {
        auto& src = self.inputs[p];
        if (wants_grad(src)) {
          auto g = src->grad_buffer();
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t j = 0; j < widths[p]; ++j) {
              g[o * widths[p] + j] += self.grad[o * row + off + j];
            }
          }
        }
        off += widths[p];
      }
    };
    tape->record(node);
  }
  return Tensor(std::move(node));
}

Tensor gather(const Tensor& x, std::span<const std::size_t> indices) {
  const auto in = x.data();
  std::vector<Scalar> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= in.size()) {
      throw ShapeError("gather: index " + std::to_string(indices[i]) +
                       " out of range for shape " + shape_str(x.shape()));
    }
    out[i] = in[indices[i]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return emit({indices.size()}, std::move(out), {x}, "gather",
              [idx = std::move(idx)](detail::Node& self) {
                auto& src = self.inputs[0];
                if (!wants_grad(src)) return;
                auto g = src->grad_buffer();
                for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
              });
}

}  // namespace nn
PPGN_NAMESPACE_END
