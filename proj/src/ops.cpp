#include "skpn/ops.hpp"

#include "skpn/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace skpn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError("shape", std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                  " vs " + shape_string(b.shape()));
  }
}

struct ConvGeometry {
  std::int64_t n, cin, h, w, cout, cin_g, cout_g, kh, kw;
  int groups;
  std::int64_t patch() const { return cin_g * kh * kw; }
  std::int64_t pixels() const { return h * w; }
};

// Replicate-padded patches of input channels [c0, c0 + cin_g) of one sample,
// laid out (cin_g * kh * kw) x (H * W).
void im2col(const double* sample, const ConvGeometry& g, std::int64_t c0, RowMat& cols) {
  const std::int64_t rh = g.kh / 2, rw = g.kw / 2;
  cols.resize(g.patch(), g.pixels());
  for (std::int64_t ci = 0; ci < g.cin_g; ++ci) {
    const double* chan = sample + (c0 + ci) * g.pixels();
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        double* row = cols.data() + ((ci * g.kh + i) * g.kw + j) * g.pixels();
        for (std::int64_t y = 0; y < g.h; ++y) {
          const double* src = chan + clamp_index(y + i - rh, g.h) * g.w;
          double* dst = row + y * g.w;
          for (std::int64_t x = 0; x < g.w; ++x) dst[x] = src[clamp_index(x + j - rw, g.w)];
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add column gradients back onto the sample.
void col2im(const RowMat& cols, const ConvGeometry& g, std::int64_t c0, double* sample_grad) {
  const std::int64_t rh = g.kh / 2, rw = g.kw / 2;
  for (std::int64_t ci = 0; ci < g.cin_g; ++ci) {
    double* chan = sample_grad + (c0 + ci) * g.pixels();
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const double* row = cols.data() + ((ci * g.kh + i) * g.kw + j) * g.pixels();
        for (std::int64_t y = 0; y < g.h; ++y) {
          double* dst = chan + clamp_index(y + i - rh, g.h) * g.w;
          const double* src = row + y * g.w;
          for (std::int64_t x = 0; x < g.w; ++x) dst[clamp_index(x + j - rw, g.w)] += src[x];
        }
      }
    }
  }
}

template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* name, F f, DF df) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = f(v);
  return Tensor::make_result(x.shape(), std::move(out), name, {x},
                             [x, df](std::span<const double> grad, auto& pg) {
                               const auto in = x.data();
                               for (std::size_t i = 0; i < grad.size(); ++i) {
                                 pg[0][i] = grad[i] * df(in[i]);
                               }
                             });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, int groups) {
  if (input.rank() != 4) {
    throw ShapeError("rank", "conv2d: input must be [N,C,H,W], got " + shape_string(input.shape()));
  }
  if (weights.rank() != 4) {
    throw ShapeError("rank",
                     "conv2d: weights must be [Cout,Cin/groups,kh,kw], got " + shape_string(weights.shape()));
  }
  if (groups <= 0) throw ShapeError("groups", "conv2d: groups must be positive");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weights.dim(0), 0, 0,
                 weights.dim(2), weights.dim(3), groups};
  if (g.cin % groups != 0) {
    throw ShapeError("groups", "conv2d: Cin=" + std::to_string(g.cin) + " not divisible by groups=" +
                                   std::to_string(groups));
  }
  if (g.cout % groups != 0) {
    throw ShapeError("groups", "conv2d: Cout=" + std::to_string(g.cout) +
                                   " not divisible by groups=" + std::to_string(groups));
  }
  g.cin_g = g.cin / groups;
  g.cout_g = g.cout / groups;
  if (weights.dim(1) != g.cin_g) {
    throw ShapeError("Cin", "conv2d: weights expect " + std::to_string(weights.dim(1)) +
                                " input channels per group, input provides " + std::to_string(g.cin_g));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) {
    throw ShapeError("kernel", "conv2d: kernel extents must be odd, got " + shape_string(weights.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != g.cout) {
    throw ShapeError("Cout", "conv2d: bias must be [" + std::to_string(g.cout) + "], got " +
                                 shape_string(bias.shape()));
  }

  const auto in = input.data();
  const auto wt = weights.data();
  const auto b = bias.data();
  std::vector<double> out(static_cast<std::size_t>(g.n * g.cout * g.pixels()));
  RowMat cols;
  for (std::int64_t s = 0; s < g.n; ++s) {
    const double* sample = in.data() + s * g.cin * g.pixels();
    for (int grp = 0; grp < groups; ++grp) {
      im2col(sample, g, grp * g.cin_g, cols);
      ConstMatMap wg(wt.data() + grp * g.cout_g * g.patch(), g.cout_g, g.patch());
      MatMap og(out.data() + (s * g.cout + grp * g.cout_g) * g.pixels(), g.cout_g, g.pixels());
      og.noalias() = wg * cols;
      for (std::int64_t co = 0; co < g.cout_g; ++co) og.row(co).array() += b[grp * g.cout_g + co];
    }
  }

  return Tensor::make_result(
      {g.n, g.cout, g.h, g.w}, std::move(out), "conv2d", {input, weights, bias},
      [input, weights, g](std::span<const double> grad, auto& pg) {
        const auto in = input.data();
        const auto wt = weights.data();
        RowMat cols, dcols;
        for (std::int64_t s = 0; s < g.n; ++s) {
          const double* sample = in.data() + s * g.cin * g.pixels();
          for (int grp = 0; grp < g.groups; ++grp) {
            ConstMatMap dout(grad.data() + (s * g.cout + grp * g.cout_g) * g.pixels(), g.cout_g,
                             g.pixels());
            if (weights.requires_grad()) {
              im2col(sample, g, grp * g.cin_g, cols);
              MatMap dw(pg[1].data() + grp * g.cout_g * g.patch(), g.cout_g, g.patch());
              dw.noalias() += dout * cols.transpose();
            }
            if (input.requires_grad()) {
              ConstMatMap wg(wt.data() + grp * g.cout_g * g.patch(), g.cout_g, g.patch());
              dcols.noalias() = wg.transpose() * dout;
              col2im(dcols, g, grp * g.cin_g, pg[0].data() + s * g.cin * g.pixels());
            }
            for (std::int64_t co = 0; co < g.cout_g; ++co) {
              pg[2][grp * g.cout_g + co] += dout.row(co).sum();
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return Tensor::make_result(a.shape(), std::move(out), "add", {a, b},
                             [](std::span<const double> grad, auto& pg) {
                               std::copy(grad.begin(), grad.end(), pg[0].begin());
                               std::copy(grad.begin(), grad.end(), pg[1].begin());
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return Tensor::make_result(a.shape(), std::move(out), "sub", {a, b},
                             [](std::span<const double> grad, auto& pg) {
                               for (std::size_t i = 0; i < grad.size(); ++i) {
                                 pg[0][i] = grad[i];
                                 pg[1][i] = -grad[i];
                               }
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return Tensor::make_result(a.shape(), std::move(out), "mul", {a, b},
                             [a, b](std::span<const double> grad, auto& pg) {
                               const auto ad = a.data();
                               const auto bd = b.data();
                               for (std::size_t i = 0; i < grad.size(); ++i) {
                                 pg[0][i] = grad[i] * bd[i];
                                 pg[1][i] = grad[i] * ad[i];
                               }
                             });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::make_result({}, {total}, "sum", {x}, [](std::span<const double> grad, auto& pg) {
    std::fill(pg[0].begin(), pg[0].end(), grad[0]);
  });
}

Tensor reduce_mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("numel", "reduce_mean of an empty tensor");
  const double n = static_cast<double>(x.numel());
  double total = 0.0;
  for (double v : x.data()) total += v;
  return Tensor::make_result({}, {total / n}, "reduce_mean", {x},
                             [n](std::span<const double> grad, auto& pg) {
                               std::fill(pg[0].begin(), pg[0].end(), grad[0] / n);
                             });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("axis", "softmax: axis " + std::to_string(axis) + " out of range for " +
                                 shape_string(x.shape()));
  }
  const auto& shape = x.shape();
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::int64_t len = shape[axis];

  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      double peak = -std::numeric_limits<double>::infinity();
      for (std::int64_t c = 0; c < len; ++c) peak = std::max(peak, in[base + c * inner]);
      double total = 0.0;
      for (std::int64_t c = 0; c < len; ++c) {
        out[base + c * inner] = std::exp(in[base + c * inner] - peak);
        total += out[base + c * inner];
      }
      for (std::int64_t c = 0; c < len; ++c) out[base + c * inner] /= total;
    }
  }

  auto probs = std::make_shared<std::vector<double>>(out);
  return Tensor::make_result(
      shape, std::move(out), "softmax", {x},
      [probs, outer, inner, len](std::span<const double> grad, auto& pg) {
        const auto& y = *probs;
        for (std::int64_t o = 0; o < outer; ++o) {
          for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * len * inner + i;
            double dot = 0.0;
            for (std::int64_t c = 0; c < len; ++c) dot += grad[base + c * inner] * y[base + c * inner];
            for (std::int64_t c = 0; c < len; ++c) {
              pg[0][base + c * inner] = y[base + c * inner] * (grad[base + c * inner] - dot);
            }
          }
        }
      });
}

Tensor softmax_vec(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("rank", "softmax_vec needs at least one axis");
  return softmax(x, x.rank() - 1);
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1_loss");
  if (a.numel() == 0) throw ShapeError("numel", "l1_loss of empty tensors");
  const auto ad = a.data();
  const auto bd = b.data();
  double total = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) total += std::abs(ad[i] - bd[i]);
  const double n = static_cast<double>(ad.size());
  return Tensor::make_result({}, {total / n}, "l1_loss", {a, b},
                             [a, b, n](std::span<const double> grad, auto& pg) {
                               const auto ad = a.data();
                               const auto bd = b.data();
                               for (std::size_t i = 0; i < ad.size(); ++i) {
                                 const double d = ad[i] - bd[i];
                                 const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                                 pg[0][i] = grad[0] * s / n;
                                 pg[1][i] = -grad[0] * s / n;
                               }
                             });
}

}  // namespace skpn
