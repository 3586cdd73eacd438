#include "pyramnet/ops.hpp"

#include "pyramnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pyramnet {

namespace {

int normalize_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  }
  return a;
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisView {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisView axis_view(const Shape& shape, int axis) {
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
  v.extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()) + " differ");
  }
}

// Image-like tensors may omit the batch axis; returns {B, H, W, C}.
template <typename Scalar>
std::array<Index, 4> image_dims(const Tensor<Scalar>& x, const char* op) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  throw DimensionError(std::string(op) + ": expected [B,H,W,C] or [H,W,C], got " +
                       to_string(x.shape()));
}

}  // namespace

template <typename Scalar>
BatchNormState<Scalar>::BatchNormState(Index channels)
    : gamma(Tensor<Scalar>::ones({channels})),
      beta(Tensor<Scalar>::zeros({channels})),
      running_mean(Array<Scalar>::Zero(channels)),
      running_var(Array<Scalar>::Ones(channels)) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  return make_op<Scalar>("add", a.shape(), a.value() + b.value(), {a, b}, [](Node<Scalar>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->grad_buffer() += self.grad;
    }
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "mul");
  return make_op<Scalar>("mul", a.shape(), a.value() * b.value(), {a, b}, [](Node<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.grad_buffer() += self.grad * pb.value;
    if (pb.requires_grad) pb.grad_buffer() += self.grad * pa.value;
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  return make_op<Scalar>("scale", x.shape(), x.value() * factor, {x}, [factor](Node<Scalar>& self) {
    self.parents[0]->grad_buffer() += self.grad * factor;
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Array<Scalar> out(1);
  out[0] = x.value().sum();
  return make_op<Scalar>("sum", {1}, std::move(out), {x}, [](Node<Scalar>& self) {
    self.parents[0]->grad_buffer() += self.grad[0];
  });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  return make_op<Scalar>("reshape", std::move(shape), x.value(), {x}, [](Node<Scalar>& self) {
    self.parents[0]->grad_buffer() += self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape lead = parts.front().shape();
  lead.pop_back();
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    l.pop_back();
    if (l != lead) {
      throw DimensionError("concat: leading shape " + to_string(p.shape()) + " does not match " +
                           to_string(parts.front().shape()));
    }
    widths.push_back(p.dim(-1));
    total += widths.back();
  }
  const Index rows = numel(lead);
  Array<Scalar> out(rows * total);
  MatrixMap<Scalar> y(out.data(), rows, total);
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    y.middleCols(offset, widths[i]) = parts[i].matrix();
    offset += widths[i];
  }
  Shape shape = lead;
  shape.push_back(total);
  return make_op<Scalar>("concat", std::move(shape), std::move(out), parts,
                         [rows, total, widths](Node<Scalar>& self) {
                           ConstMatrixMap<Scalar> gy(self.grad.data(), rows, total);
                           Index off = 0;
                           for (std::size_t i = 0; i < widths.size(); ++i) {
                             auto& p = *self.parents[i];
                             if (p.requires_grad) {
                               MatrixMap<Scalar>(p.grad_buffer().data(), rows, widths[i]) +=
                                   gy.middleCols(off, widths[i]);
                             }
                             off += widths[i];
                           }
                         });
}

template <typename Scalar>
Tensor<Scalar> pointwise_linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                                const Tensor<Scalar>& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(0)) {
    throw DimensionError("pointwise_linear: input " + to_string(x.shape()) +
                         " incompatible with weight " + to_string(weight.shape()));
  }
  const Index cin = weight.dim(0);
  const Index cout = weight.dim(1);
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != cout) {
    throw DimensionError("pointwise_linear: bias " + to_string(bias.shape()) +
                         " incompatible with weight " + to_string(weight.shape()));
  }
  const Index rows = x.size() / cin;
  Array<Scalar> out(rows * cout);
  MatrixMap<Scalar> y(out.data(), rows, cout);
  y.noalias() = x.matrix() * weight.matrix();
  if (has_bias) y.rowwise() += bias.value().matrix().transpose();

  Shape shape = x.shape();
  shape.back() = cout;
  std::vector<Tensor<Scalar>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op<Scalar>(
      "pointwise_linear", std::move(shape), std::move(out), inputs,
      [rows, cin, cout, has_bias](Node<Scalar>& self) {
        ConstMatrixMap<Scalar> gy(self.grad.data(), rows, cout);
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        if (xn.requires_grad) {
          MatrixMap<Scalar>(xn.grad_buffer().data(), rows, cin).noalias() +=
              gy * ConstMatrixMap<Scalar>(wn.value.data(), cin, cout).transpose();
        }
        if (wn.requires_grad) {
          MatrixMap<Scalar>(wn.grad_buffer().data(), cin, cout).noalias() +=
              ConstMatrixMap<Scalar>(xn.value.data(), rows, cin).transpose() * gy;
        }
        if (has_bias && self.parents[2]->requires_grad) {
          self.parents[2]->grad_buffer() += gy.colwise().sum().transpose().array();
        }
      });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  return make_op<Scalar>("relu", x.shape(), x.value().max(Scalar(0)), {x}, [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.grad_buffer() += (p.value > Scalar(0)).select(self.grad, Scalar(0));
  });
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x, int axis, bool keepdim) {
  const int a = normalize_axis(axis, x.rank(), "global_avg_pool");
  const AxisView v = axis_view(x.shape(), a);
  if (v.extent == 0) throw DimensionError("global_avg_pool: empty axis in " + to_string(x.shape()));
  Array<Scalar> out = Array<Scalar>::Zero(v.outer * v.inner);
  const Scalar* src = x.value().data();
  for (Index o = 0; o < v.outer; ++o) {
    auto dst = out.segment(o * v.inner, v.inner);
    for (Index e = 0; e < v.extent; ++e) {
      dst += Eigen::Map<const Array<Scalar>>(src + (o * v.extent + e) * v.inner, v.inner);
    }
  }
  out /= static_cast<Scalar>(v.extent);
  Shape shape = x.shape();
  if (keepdim) {
    shape[static_cast<std::size_t>(a)] = 1;
  } else {
    shape.erase(shape.begin() + a);
  }
  return make_op<Scalar>("global_avg_pool", std::move(shape), std::move(out), {x},
                         [v](Node<Scalar>& self) {
                           auto& g = self.parents[0]->grad_buffer();
                           const Scalar inv = Scalar(1) / static_cast<Scalar>(v.extent);
                           for (Index o = 0; o < v.outer; ++o) {
                             auto gy = self.grad.segment(o * v.inner, v.inner);
                             for (Index e = 0; e < v.extent; ++e) {
                               g.segment((o * v.extent + e) * v.inner, v.inner) += gy * inv;
                             }
                           }
                         });
}

template <typename Scalar>
Tensor<Scalar> max_pool_over_points(const Tensor<Scalar>& x, int axis) {
  const int a = normalize_axis(axis, x.rank(), "max_pool_over_points");
  const AxisView v = axis_view(x.shape(), a);
  if (v.extent == 0) throw DimensionError("max_pool_over_points: empty axis");
  Array<Scalar> out(v.outer * v.inner);
  std::vector<Index> arg(static_cast<std::size_t>(v.outer * v.inner), 0);
  const Scalar* src = x.value().data();
  for (Index o = 0; o < v.outer; ++o) {
    Scalar* dst = out.data() + o * v.inner;
    Index* best = arg.data() + o * v.inner;
    std::copy_n(src + o * v.extent * v.inner, v.inner, dst);
    for (Index e = 1; e < v.extent; ++e) {
      const Scalar* row = src + (o * v.extent + e) * v.inner;
      for (Index i = 0; i < v.inner; ++i) {
        if (row[i] > dst[i]) {
          dst[i] = row[i];
          best[i] = e;
        }
      }
    }
  }
  Shape shape = x.shape();
  shape.erase(shape.begin() + a);
  return make_op<Scalar>("max_pool_over_points", std::move(shape), std::move(out), {x},
                         [v, arg = std::move(arg)](Node<Scalar>& self) {
                           auto& g = self.parents[0]->grad_buffer();
                           for (Index o = 0; o < v.outer; ++o) {
                             for (Index i = 0; i < v.inner; ++i) {
                               const Index e = arg[static_cast<std::size_t>(o * v.inner + i)];
                               g[(o * v.extent + e) * v.inner + i] += self.grad[o * v.inner + i];
                             }
                           }
                         });
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, Scalar keep_prob, bool training,
                       std::mt19937_64& rng) {
  if (!(keep_prob > Scalar(0) && keep_prob <= Scalar(1))) {
    throw ConfigError("dropout: keep probability " + std::to_string(keep_prob) +
                      " outside (0, 1]");
  }
  if (!training) return x;
  Array<Scalar> mask(x.size());
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const Scalar survivor = Scalar(1) / keep_prob;
  for (Index i = 0; i < mask.size(); ++i) {
    mask[i] = uniform(rng) < static_cast<double>(keep_prob) ? survivor : Scalar(0);
  }
  Array<Scalar> out = x.value() * mask;
  return make_op<Scalar>("dropout", x.shape(), std::move(out), {x},
                         [mask = std::move(mask)](Node<Scalar>& self) {
                           self.parents[0]->grad_buffer() += self.grad * mask;
                         });
}

template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  const Index classes = logits.dim(-1);
  const Index rows = classes == 0 ? 0 : logits.size() / classes;
  if (rows == 0) throw DataError("softmax_cross_entropy: empty logits");
  if (static_cast<Index>(labels.size()) != rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + to_string(logits.shape()));
  }
  ConstMatrixMap<Scalar> z = logits.matrix();
  RowMatrix<Scalar> prob(rows, classes);
  double total = 0.0;
  for (Index r = 0; r < rows; ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= classes) {
      throw DataError("label " + std::to_string(label) + " out of range [0, " +
                      std::to_string(classes) + ") at sample " + std::to_string(r));
    }
    const Scalar m = z.row(r).maxCoeff();
    prob.row(r) = (z.row(r).array() - m).exp().matrix();
    const Scalar s = prob.row(r).sum();
    prob.row(r) /= s;
    total += static_cast<double>(m + std::log(s) - z(r, label));
  }
  Array<Scalar> out(1);
  out[0] = static_cast<Scalar>(total / static_cast<double>(rows));
  std::vector<int> owned(labels.begin(), labels.end());
  return make_op<Scalar>("softmax_cross_entropy", {1}, std::move(out), {logits},
                         [prob = std::move(prob), owned = std::move(owned)](Node<Scalar>& self) {
                           const Index n = prob.rows();
                           const Scalar g = self.grad[0] / static_cast<Scalar>(n);
                           MatrixMap<Scalar> gz(self.parents[0]->grad_buffer().data(), n, prob.cols());
                           gz += prob * g;
                           for (Index r = 0; r < n; ++r) gz(r, owned[static_cast<std::size_t>(r)]) -= g;
                         });
}

template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, BatchNormState<Scalar>& state, bool training) {
  const Index channels = x.dim(-1);
  if (channels != state.channels()) {
    throw DimensionError("batch_norm: input " + to_string(x.shape()) + " vs " +
                         std::to_string(state.channels()) + " channels");
  }
  const Index rows = x.size() / channels;
  ConstMatrixMap<Scalar> xm = x.matrix();
  const auto gamma = state.gamma.value().matrix().transpose();
  const auto beta = state.beta.value().matrix().transpose();
  Array<Scalar> out(x.size());
  MatrixMap<Scalar> y(out.data(), rows, channels);

  if (!training) {
    const Array<Scalar> inv_std = (state.running_var + state.epsilon).rsqrt();
    RowMatrix<Scalar> xhat =
        (xm.rowwise() - state.running_mean.matrix().transpose()).array().rowwise() *
        inv_std.transpose();
    y.array() = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
    return make_op<Scalar>(
        "batch_norm", x.shape(), std::move(out), {x, state.gamma, state.beta},
        [rows, channels, inv_std, xhat = std::move(xhat)](Node<Scalar>& self) {
          ConstMatrixMap<Scalar> gy(self.grad.data(), rows, channels);
          auto& xn = *self.parents[0];
          auto& gn = *self.parents[1];
          auto& bn = *self.parents[2];
          if (xn.requires_grad) {
            const Array<Scalar> factor = gn.value * inv_std;
            MatrixMap<Scalar>(xn.grad_buffer().data(), rows, channels).array() +=
                gy.array().rowwise() * factor.transpose();
          }
          if (gn.requires_grad) gn.grad_buffer() += (gy.array() * xhat.array()).colwise().sum().transpose();
          if (bn.requires_grad) bn.grad_buffer() += gy.colwise().sum().transpose().array();
        });
  }

  if (rows < 2) {
    throw ConfigError("batch_norm: training mode needs at least 2 rows per channel, got " +
                      std::to_string(rows));
  }
  const Array<Scalar> mean = xm.colwise().mean().transpose().array();
  RowMatrix<Scalar> centered = xm.rowwise() - mean.matrix().transpose();
  const Array<Scalar> var = centered.array().square().colwise().mean().transpose();
  const Array<Scalar> inv_std = (var + state.epsilon).rsqrt();
  RowMatrix<Scalar> xhat = centered.array().rowwise() * inv_std.transpose();
  y.array() = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();

  const Scalar d = state.decay;
  const Scalar correction = static_cast<Scalar>(rows) / static_cast<Scalar>(rows - 1);
  state.running_mean = d * state.running_mean + (Scalar(1) - d) * mean;
  state.running_var = d * state.running_var + (Scalar(1) - d) * var * correction;

  return make_op<Scalar>(
      "batch_norm", x.shape(), std::move(out), {x, state.gamma, state.beta},
      [rows, channels, inv_std, xhat = std::move(xhat)](Node<Scalar>& self) {
        ConstMatrixMap<Scalar> gy(self.grad.data(), rows, channels);
        auto& xn = *self.parents[0];
        auto& gn = *self.parents[1];
        auto& bn = *self.parents[2];
        if (xn.requires_grad) {
          const RowMatrix<Scalar> dxhat = gy.array().rowwise() * gn.value.transpose();
          const auto sum_d = dxhat.colwise().sum().array();
          const auto sum_dx = (dxhat.array() * xhat.array()).colwise().sum();
          const Scalar n = static_cast<Scalar>(rows);
          RowMatrix<Scalar> dx = ((dxhat.array() * n).rowwise() - sum_d).matrix();
          dx.array() -= xhat.array().rowwise() * sum_dx;
          dx.array().rowwise() *= (inv_std / n).transpose();
          MatrixMap<Scalar>(xn.grad_buffer().data(), rows, channels) += dx;
        }
        if (gn.requires_grad) gn.grad_buffer() += (gy.array() * xhat.array()).colwise().sum().transpose();
        if (bn.requires_grad) bn.grad_buffer() += gy.colwise().sum().transpose().array();
      });
}

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias, Stride2d stride) {
  const auto [batch, height, width, cin] = image_dims(x, "conv2d");
  if (kernel.rank() != 4) {
    throw DimensionError("conv2d: kernel must be [kh,kw,Cin,Cout], got " + to_string(kernel.shape()));
  }
  const Index kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ConfigError("conv2d: kernel extents must be odd, got " + to_string(kernel.shape()));
  }
  if (stride.rows < 1 || stride.cols < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (kernel.dim(2) != cin) {
    throw DimensionError("conv2d: input " + to_string(x.shape()) + " vs kernel " +
                         to_string(kernel.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != cout) {
    throw DimensionError("conv2d: bias " + to_string(bias.shape()) + " vs kernel " +
                         to_string(kernel.shape()));
  }
  const Index oh = same_output_extent(height, stride.rows);
  const Index ow = same_output_extent(width, stride.cols);
  const Index pad_top = std::max<Index>((oh - 1) * stride.rows + kh - height, 0) / 2;
  const Index pad_left = std::max<Index>((ow - 1) * stride.cols + kw - width, 0) / 2;
  const Index patch = kh * kw * cin;
  const Index rows = batch * oh * ow;

  RowMatrix<Scalar> col = RowMatrix<Scalar>::Zero(rows, patch);
  const Scalar* src = x.value().data();
  for (Index b = 0; b < batch; ++b) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        Scalar* dst = col.row((b * oh + oy) * ow + ox).data();
        for (Index ky = 0; ky < kh; ++ky) {
          const Index iy = oy * stride.rows - pad_top + ky;
          if (iy < 0 || iy >= height) continue;
          for (Index kx = 0; kx < kw; ++kx) {
            const Index ix = ox * stride.cols - pad_left + kx;
            if (ix < 0 || ix >= width) continue;
            std::copy_n(src + ((b * height + iy) * width + ix) * cin, cin, dst + (ky * kw + kx) * cin);
          }
        }
      }
    }
  }
  Array<Scalar> out(rows * cout);
  MatrixMap<Scalar> y(out.data(), rows, cout);
  y.noalias() = col * ConstMatrixMap<Scalar>(kernel.value().data(), patch, cout);
  if (has_bias) y.rowwise() += bias.value().matrix().transpose();

  Shape shape = x.rank() == 4 ? Shape{batch, oh, ow, cout} : Shape{oh, ow, cout};
  std::vector<Tensor<Scalar>> inputs{x, kernel};
  if (has_bias) inputs.push_back(bias);
  return make_op<Scalar>(
      "conv2d", std::move(shape), std::move(out), inputs,
      [=, col = std::move(col)](Node<Scalar>& self) {
        ConstMatrixMap<Scalar> gy(self.grad.data(), rows, cout);
        auto& xn = *self.parents[0];
        auto& kn = *self.parents[1];
        if (kn.requires_grad) {
          MatrixMap<Scalar>(kn.grad_buffer().data(), patch, cout).noalias() += col.transpose() * gy;
        }
        if (has_bias && self.parents[2]->requires_grad) {
          self.parents[2]->grad_buffer() += gy.colwise().sum().transpose().array();
        }
        if (!xn.requires_grad) return;
        const RowMatrix<Scalar> gcol = gy * ConstMatrixMap<Scalar>(kn.value.data(), patch, cout).transpose();
        Scalar* gx = xn.grad_buffer().data();
        for (Index b = 0; b < batch; ++b) {
          for (Index oy = 0; oy < oh; ++oy) {
            for (Index ox = 0; ox < ow; ++ox) {
              const Scalar* g = gcol.row((b * oh + oy) * ow + ox).data();
              for (Index ky = 0; ky < kh; ++ky) {
                const Index iy = oy * stride.rows - pad_top + ky;
                if (iy < 0 || iy >= height) continue;
                for (Index kx = 0; kx < kw; ++kx) {
                  const Index ix = ox * stride.cols - pad_left + kx;
                  if (ix < 0 || ix >= width) continue;
                  Scalar* d = gx + ((b * height + iy) * width + ix) * cin;
                  const Scalar* s = g + (ky * kw + kx) * cin;
                  for (Index c = 0; c < cin; ++c) d[c] += s[c];
                }
              }
            }
          }
        }
      });
}

namespace {

// Source taps for one axis of an align-corners resize.
template <typename Scalar>
struct ResizeTaps {
  std::vector<Index> lo, hi;
  std::vector<Scalar> frac;
};

template <typename Scalar>
ResizeTaps<Scalar> resize_taps(Index from, Index to) {
  ResizeTaps<Scalar> t;
  t.lo.resize(static_cast<std::size_t>(to));
  t.hi.resize(static_cast<std::size_t>(to));
  t.frac.resize(static_cast<std::size_t>(to));
  for (Index i = 0; i < to; ++i) {
    const double src = (from == 1 || to == 1)
                           ? 0.0
                           : static_cast<double>(i) * static_cast<double>(from - 1) /
                                 static_cast<double>(to - 1);
    const Index lo = std::min<Index>(static_cast<Index>(std::floor(src)), from - 1);
    const auto k = static_cast<std::size_t>(i);
    t.lo[k] = lo;
    t.hi[k] = std::min<Index>(lo + 1, from - 1);
    t.frac[k] = static_cast<Scalar>(src - static_cast<double>(lo));
  }
  return t;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> bilinear_resize(const Tensor<Scalar>& x, Index height, Index width) {
  const auto [batch, h, w, channels] = image_dims(x, "bilinear_resize");
  if (height < 1 || width < 1) {
    throw ConfigError("bilinear_resize: target extent must be >= 1, got " + std::to_string(height) +
                      "x" + std::to_string(width));
  }
  if (h < 1 || w < 1) throw DimensionError("bilinear_resize: empty input " + to_string(x.shape()));
  Shape shape = x.rank() == 4 ? Shape{batch, height, width, channels} : Shape{height, width, channels};
  if (height == h && width == w) {
    return make_op<Scalar>("bilinear_resize", std::move(shape), x.value(), {x}, [](Node<Scalar>& self) {
      self.parents[0]->grad_buffer() += self.grad;
    });
  }
  const auto ty = resize_taps<Scalar>(h, height);
  const auto tx = resize_taps<Scalar>(w, width);
  Array<Scalar> out(batch * height * width * channels);
  const Scalar* src = x.value().data();
  for (Index b = 0; b < batch; ++b) {
    for (Index i = 0; i < height; ++i) {
      const auto si = static_cast<std::size_t>(i);
      const Scalar ay = ty.frac[si];
      const Scalar* r0 = src + (b * h + ty.lo[si]) * w * channels;
      const Scalar* r1 = src + (b * h + ty.hi[si]) * w * channels;
      for (Index j = 0; j < width; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        const Scalar ax = tx.frac[sj];
        const Index c0 = tx.lo[sj] * channels, c1 = tx.hi[sj] * channels;
        Scalar* dst = out.data() + ((b * height + i) * width + j) * channels;
        for (Index c = 0; c < channels; ++c) {
          const Scalar top = (Scalar(1) - ax) * r0[c0 + c] + ax * r0[c1 + c];
          const Scalar bottom = (Scalar(1) - ax) * r1[c0 + c] + ax * r1[c1 + c];
          dst[c] = (Scalar(1) - ay) * top + ay * bottom;
        }
      }
    }
  }
  return make_op<Scalar>(
      "bilinear_resize", std::move(shape), std::move(out), {x},
      [=](Node<Scalar>& self) {
        Scalar* gx = self.parents[0]->grad_buffer().data();
        for (Index b = 0; b < batch; ++b) {
          for (Index i = 0; i < height; ++i) {
            const auto si = static_cast<std::size_t>(i);
            const Scalar ay = ty.frac[si];
            Scalar* r0 = gx + (b * h + ty.lo[si]) * w * channels;
            Scalar* r1 = gx + (b * h + ty.hi[si]) * w * channels;
            for (Index j = 0; j < width; ++j) {
              const auto sj = static_cast<std::size_t>(j);
              const Scalar ax = tx.frac[sj];
              const Index c0 = tx.lo[sj] * channels, c1 = tx.hi[sj] * channels;
              const Scalar* g = self.grad.data() + ((b * height + i) * width + j) * channels;
              for (Index c = 0; c < channels; ++c) {
                const Scalar top = (Scalar(1) - ay) * g[c];
                const Scalar bottom = ay * g[c];
                r0[c0 + c] += (Scalar(1) - ax) * top;
                r0[c1 + c] += ax * top;
                r1[c0 + c] += (Scalar(1) - ax) * bottom;
                r1[c1 + c] += ax * bottom;
              }
            }
          }
        }
      });
}

#define PYRAMNET_INSTANTIATE(S)                                                               \
  template struct BatchNormState<S>;                                                          \
  template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                              \
  template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                              \
  template Tensor<S> scale<S>(const Tensor<S>&, S);                                           \
  template Tensor<S> sum<S>(const Tensor<S>&);                                                \
  template Tensor<S> reshape<S>(const Tensor<S>&, Shape);                                     \
  template Tensor<S> concat<S>(const std::vector<Tensor<S>>&);                                \
  template Tensor<S> pointwise_linear<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&); \
  template Tensor<S> relu<S>(const Tensor<S>&);                                               \
  template Tensor<S> global_avg_pool<S>(const Tensor<S>&, int, bool);                         \
  template Tensor<S> max_pool_over_points<S>(const Tensor<S>&, int);                          \
  template Tensor<S> dropout<S>(const Tensor<S>&, S, bool, std::mt19937_64&);                 \
  template Tensor<S> softmax_cross_entropy<S>(const Tensor<S>&, std::span<const int>);        \
  template Tensor<S> batch_norm<S>(const Tensor<S>&, BatchNormState<S>&, bool);               \
  template Tensor<S> conv2d<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Stride2d); \
  template Tensor<S> bilinear_resize<S>(const Tensor<S>&, Index, Index);

PYRAMNET_INSTANTIATE(float)
PYRAMNET_INSTANTIATE(double)
#undef PYRAMNET_INSTANTIATE

}  // namespace pyramnet
