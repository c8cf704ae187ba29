#include "cunet/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <sstream>

#include "cunet/tensor/parallel.hpp"

namespace cunet {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace ops {
namespace {

using std::ptrdiff_t;
using std::size_t;

template <typename T>
void check_rank4(const Tensor<T>& t, const char* op, const char* what) {
  if (!t.defined() || t.rank() != 4) {
    throw ShapeError(std::string(op) + ": " + what + " must be 4-D [N,C,H,W], got " +
                     (t.defined() ? shape_to_string(t.shape()) : std::string("null")));
  }
}

template <typename T>
void debug_check_finite(const Tensor<T>& out, const char* op) {
#ifndef NDEBUG
  if (!out.all_finite()) throw NumericError(std::string(op) + ": non-finite output");
#else
  (void)out;
  (void)op;
#endif
}

/// Dot product with eight independent partial sums; fixed association
/// order keeps it deterministic while letting the compiler vectorise.
template <typename T>
T dot(const T* a, const T* b, size_t n) {
  T acc[8] = {};
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (size_t k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) +
         tail;
}

template <typename T>
T dot_strided(const T* a, const T* b, size_t n, size_t stride_b) {
  T acc = 0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i * stride_b];
  return acc;
}

/// Range [lo, hi) of output columns whose input column ox*stride+k-pad is
/// inside [0, extent).
struct ValidRange {
  size_t lo = 0;
  size_t hi = 0;
};

ValidRange valid_range(size_t out_extent, size_t in_extent, size_t k, size_t stride,
                       size_t pad) {
  ValidRange r;
  if (pad > k) r.lo = (pad - k + stride - 1) / stride;
  const ptrdiff_t last = static_cast<ptrdiff_t>(in_extent) - 1 + static_cast<ptrdiff_t>(pad) -
                         static_cast<ptrdiff_t>(k);
  if (last < 0) return ValidRange{0, 0};
  r.hi = std::min(out_extent, static_cast<size_t>(last) / stride + 1);
  if (r.lo > r.hi) r.lo = r.hi;
  return r;
}

}  // namespace

size_t conv_output_extent(size_t in, size_t kernel, size_t stride, size_t padding,
                          const char* axis) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (kernel == 0) throw ShapeError(std::string("conv2d: zero kernel ") + axis);
  if (in + 2 * padding < kernel) {
    throw ShapeError(std::string("conv2d: kernel ") + axis + " " + std::to_string(kernel) +
                     " exceeds padded input " + axis + " " + std::to_string(in + 2 * padding));
  }
  const size_t out = (in + 2 * padding - kernel) / stride + 1;
  if (out == 0) throw ShapeError(std::string("conv2d: zero-sized output ") + axis);
  return out;
}

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions options, Tape<T>* tape) {
  check_rank4(input, "conv2d", "input");
  check_rank4(weight, "conv2d", "weight");
  const size_t N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const size_t Cout = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  if (weight.dim(1) != Cin) {
    throw ShapeError("conv2d: input channels " + std::to_string(Cin) +
                     " do not match weight channels " + std::to_string(weight.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout)) {
    throw ShapeError("conv2d: bias shape " + shape_to_string(bias.shape()) +
                     " does not match output channels " + std::to_string(Cout));
  }
  const size_t S = options.stride, P = options.padding;
  const size_t OH = conv_output_extent(H, KH, S, P, "height");
  const size_t OW = conv_output_extent(W, KW, S, P, "width");

  Tensor<T> out(Shape{N, Cout, OH, OW});
  const T* x = input.raw();
  const T* w = weight.raw();
  T* o = out.raw();

  std::vector<ValidRange> col_ranges(KW);
  for (size_t kx = 0; kx < KW; ++kx) col_ranges[kx] = valid_range(OW, W, kx, S, P);

  parallel_for(N * Cout, [&](size_t idx) {
    const size_t n = idx / Cout, co = idx % Cout;
    T* op = o + idx * OH * OW;
    std::fill(op, op + OH * OW, bias.defined() ? bias[co] : T(0));
    for (size_t ci = 0; ci < Cin; ++ci) {
      const T* xp = x + (n * Cin + ci) * H * W;
      const T* wk = w + (co * Cin + ci) * KH * KW;
      for (size_t ky = 0; ky < KH; ++ky) {
        for (size_t kx = 0; kx < KW; ++kx) {
          const T wv = wk[ky * KW + kx];
          const ValidRange cr = col_ranges[kx];
          if (cr.lo >= cr.hi) continue;
          const size_t len = cr.hi - cr.lo;
          for (size_t oy = 0; oy < OH; ++oy) {
            const ptrdiff_t iy = static_cast<ptrdiff_t>(oy * S + ky) - static_cast<ptrdiff_t>(P);
            if (iy < 0 || iy >= static_cast<ptrdiff_t>(H)) continue;
            T* orow = op + oy * OW + cr.lo;
            const T* xrow = xp + static_cast<size_t>(iy) * W + (cr.lo * S + kx - P);
            if (S == 1) {
              for (size_t j = 0; j < len; ++j) orow[j] += wv * xrow[j];
            } else {
              for (size_t j = 0; j < len; ++j) orow[j] += wv * xrow[j * S];
            }
          }
        }
      }
    }
  });
  debug_check_finite(out, "conv2d");

  if (Tape<T>::wants(tape, {&input, &weight, &bias})) {
    std::vector<Tensor<T>> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    tape->record(
        "conv2d", inputs, out,
        [input, weight, bias, out, S, P, N, Cin, H, W, Cout, KH, KW, OH, OW,
         col_ranges]() mutable {
          const T* dy = out.grad().data();
          const T* x = input.raw();
          const T* w = weight.raw();
          if (input.requires_grad()) {
            T* dx = input.ensure_grad().data();
            parallel_for(N * Cin, [&](size_t idx) {
              const size_t n = idx / Cin, ci = idx % Cin;
              T* dxp = dx + idx * H * W;
              for (size_t co = 0; co < Cout; ++co) {
                const T* dyp = dy + (n * Cout + co) * OH * OW;
                const T* wk = w + (co * Cin + ci) * KH * KW;
                for (size_t ky = 0; ky < KH; ++ky) {
                  for (size_t kx = 0; kx < KW; ++kx) {
                    const T wv = wk[ky * KW + kx];
                    const ValidRange cr = col_ranges[kx];
                    if (cr.lo >= cr.hi) continue;
                    const size_t len = cr.hi - cr.lo;
                    for (size_t oy = 0; oy < OH; ++oy) {
                      const ptrdiff_t iy =
                          static_cast<ptrdiff_t>(oy * S + ky) - static_cast<ptrdiff_t>(P);
                      if (iy < 0 || iy >= static_cast<ptrdiff_t>(H)) continue;
                      const T* dyrow = dyp + oy * OW + cr.lo;
                      T* dxrow = dxp + static_cast<size_t>(iy) * W + (cr.lo * S + kx - P);
                      if (S == 1) {
                        for (size_t j = 0; j < len; ++j) dxrow[j] += wv * dyrow[j];
                      } else {
                        for (size_t j = 0; j < len; ++j) dxrow[j * S] += wv * dyrow[j];
                      }
                    }
                  }
                }
              }
            });
          }
          if (weight.requires_grad()) {
            T* dw = weight.ensure_grad().data();
            parallel_for(Cout, [&](size_t co) {
              for (size_t ci = 0; ci < Cin; ++ci) {
                for (size_t ky = 0; ky < KH; ++ky) {
                  for (size_t kx = 0; kx < KW; ++kx) {
                    const ValidRange cr = col_ranges[kx];
                    if (cr.lo >= cr.hi) continue;
                    const size_t len = cr.hi - cr.lo;
                    T acc = 0;
                    for (size_t n = 0; n < N; ++n) {
                      const T* dyp = dy + (n * Cout + co) * OH * OW;
                      const T* xp = x + (n * Cin + ci) * H * W;
                      for (size_t oy = 0; oy < OH; ++oy) {
                        const ptrdiff_t iy =
                            static_cast<ptrdiff_t>(oy * S + ky) - static_cast<ptrdiff_t>(P);
                        if (iy < 0 || iy >= static_cast<ptrdiff_t>(H)) continue;
                        const T* dyrow = dyp + oy * OW + cr.lo;
                        const T* xrow = xp + static_cast<size_t>(iy) * W + (cr.lo * S + kx - P);
                        acc += S == 1 ? dot(dyrow, xrow, len) : dot_strided(dyrow, xrow, len, S);
                      }
                    }
                    dw[((co * Cin + ci) * KH + ky) * KW + kx] += acc;
                  }
                }
              }
            });
          }
          if (bias.defined() && bias.requires_grad()) {
            T* db = bias.ensure_grad().data();
            for (size_t co = 0; co < Cout; ++co) {
              T acc = 0;
              for (size_t n = 0; n < N; ++n) {
                const T* dyp = dy + (n * Cout + co) * OH * OW;
                for (size_t i = 0; i < OH * OW; ++i) acc += dyp[i];
              }
              db[co] += acc;
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// maxpool2d

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, Tape<T>* tape) {
  check_rank4(input, "maxpool2d", "input");
  const size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0) throw ShapeError("maxpool2d: height " + std::to_string(H) + " is odd");
  if (W % 2 != 0) throw ShapeError("maxpool2d: width " + std::to_string(W) + " is odd");
  const size_t OH = H / 2, OW = W / 2;
  Tensor<T> out(Shape{N, C, OH, OW});
  const bool record = Tape<T>::wants(tape, {&input});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(record ? out.numel() : 0);
  const T* x = input.raw();
  T* o = out.raw();
  parallel_for(N * C, [&](size_t plane) {
    const T* xp = x + plane * H * W;
    T* op = o + plane * OH * OW;
    for (size_t oy = 0; oy < OH; ++oy) {
      for (size_t ox = 0; ox < OW; ++ox) {
        size_t best = (2 * oy) * W + 2 * ox;
        const size_t cand[3] = {best + 1, best + W, best + W + 1};
        for (size_t c : cand) {
          if (xp[c] > xp[best]) best = c;
        }
        op[oy * OW + ox] = xp[best];
        if (record) (*argmax)[plane * OH * OW + oy * OW + ox] = static_cast<std::uint32_t>(best);
      }
    }
  });
  if (record) {
    tape->record("maxpool2d", {input}, out, [input, out, argmax, H, W, OH, OW]() mutable {
      T* dx = input.ensure_grad().data();
      const T* dy = out.grad().data();
      const size_t planes = out.numel() / (OH * OW);
      for (size_t plane = 0; plane < planes; ++plane) {
        for (size_t i = 0; i < OH * OW; ++i) {
          dx[plane * H * W + (*argmax)[plane * OH * OW + i]] += dy[plane * OH * OW + i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// upsample_nn2d

template <typename T>
Tensor<T> upsample_nn2d(const Tensor<T>& input, Tape<T>* tape) {
  check_rank4(input, "upsample_nn2d", "input");
  const size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const size_t OH = 2 * H, OW = 2 * W;
  Tensor<T> out(Shape{N, C, OH, OW});
  const T* x = input.raw();
  T* o = out.raw();
  for (size_t plane = 0; plane < N * C; ++plane) {
    const T* xp = x + plane * H * W;
    T* op = o + plane * OH * OW;
    for (size_t y = 0; y < H; ++y) {
      T* r0 = op + (2 * y) * OW;
      for (size_t xx = 0; xx < W; ++xx) {
        r0[2 * xx] = r0[2 * xx + 1] = xp[y * W + xx];
      }
      std::copy(r0, r0 + OW, r0 + OW);
    }
  }
  if (Tape<T>::wants(tape, {&input})) {
    tape->record("upsample_nn2d", {input}, out, [input, out, H, W, OW]() mutable {
      T* dx = input.ensure_grad().data();
      const T* dy = out.grad().data();
      const size_t planes = input.numel() / (H * W);
      for (size_t plane = 0; plane < planes; ++plane) {
        const T* dyp = dy + plane * 4 * H * W;
        T* dxp = dx + plane * H * W;
        for (size_t y = 0; y < H; ++y) {
          const T* r0 = dyp + (2 * y) * OW;
          const T* r1 = r0 + OW;
          for (size_t xx = 0; xx < W; ++xx) {
            dxp[y * W + xx] += (r0[2 * xx] + r0[2 * xx + 1]) + (r1[2 * xx] + r1[2 * xx + 1]);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm2d

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode, Tape<T>* tape) {
  check_rank4(input, "batchnorm2d", "input");
  const size_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  const auto check_vec = [C](const Tensor<T>& t, const char* what) {
    if (!t.defined() || t.rank() != 1 || t.dim(0) != C) {
      throw ShapeError(std::string("batchnorm2d: ") + what + " shape " +
                       (t.defined() ? shape_to_string(t.shape()) : std::string("null")) +
                       " does not match channel count " + std::to_string(C));
    }
  };
  check_vec(gamma, "gamma");
  check_vec(beta, "beta");
  check_vec(state.running_mean, "running_mean");
  check_vec(state.running_var, "running_var");
  const size_t M = N * HW;
  if (mode == Mode::train && M < 2) {
    throw ShapeError("batchnorm2d: train mode needs at least 2 values per channel, got " +
                     std::to_string(M));
  }

  Tensor<T> out(input.shape());
  Tensor<T> xhat(input.shape());
  std::vector<T> inv_std(C);
  const T* x = input.raw();
  T* y = out.raw();
  T* xh = xhat.raw();
  const double eps = state.epsilon;

  parallel_for(C, [&](size_t c) {
    double mean, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (size_t n = 0; n < N; ++n) {
        const T* p = x + (n * C + c) * HW;
        for (size_t i = 0; i < HW; ++i) s += p[i];
      }
      mean = s / static_cast<double>(M);
      double ss = 0.0;
      for (size_t n = 0; n < N; ++n) {
        const T* p = x + (n * C + c) * HW;
        for (size_t i = 0; i < HW; ++i) {
          const double d = p[i] - mean;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(M);
      const double m = state.momentum;
      state.running_mean[c] =
          static_cast<T>((1.0 - m) * state.running_mean[c] + m * mean);
      state.running_var[c] = static_cast<T>(
          (1.0 - m) * state.running_var[c] + m * var * static_cast<double>(M) / (M - 1));
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + eps));
    const T mu = static_cast<T>(mean);
    inv_std[c] = istd;
    const T g = gamma[c], b = beta[c];
    for (size_t n = 0; n < N; ++n) {
      const size_t off = (n * C + c) * HW;
      for (size_t i = 0; i < HW; ++i) {
        const T h = (x[off + i] - mu) * istd;
        xh[off + i] = h;
        y[off + i] = g * h + b;
      }
    }
  });
  debug_check_finite(out, "batchnorm2d");

  if (Tape<T>::wants(tape, {&input, &gamma, &beta})) {
    tape->record("batchnorm2d", {input, gamma, beta}, out,
                 [input, gamma, beta, out, xhat, inv_std, mode, N, C, HW, M]() mutable {
                   const T* dy = out.grad().data();
                   const T* xh = xhat.raw();
                   std::vector<T> sum_dy(C), sum_dy_xhat(C);
                   for (size_t c = 0; c < C; ++c) {
                     T s = 0, sx = 0;
                     for (size_t n = 0; n < N; ++n) {
                       const size_t off = (n * C + c) * HW;
                       for (size_t i = 0; i < HW; ++i) {
                         s += dy[off + i];
                         sx += dy[off + i] * xh[off + i];
                       }
                     }
                     sum_dy[c] = s;
                     sum_dy_xhat[c] = sx;
                   }
                   if (gamma.requires_grad()) {
                     T* dg = gamma.ensure_grad().data();
                     for (size_t c = 0; c < C; ++c) dg[c] += sum_dy_xhat[c];
                   }
                   if (beta.requires_grad()) {
                     T* db = beta.ensure_grad().data();
                     for (size_t c = 0; c < C; ++c) db[c] += sum_dy[c];
                   }
                   if (!input.requires_grad()) return;
                   T* dx = input.ensure_grad().data();
                   const T m = static_cast<T>(M);
                   for (size_t c = 0; c < C; ++c) {
                     const T scale = gamma[c] * inv_std[c];
                     for (size_t n = 0; n < N; ++n) {
                       const size_t off = (n * C + c) * HW;
                       if (mode == Mode::train) {
                         const T k = scale / m;
                         for (size_t i = 0; i < HW; ++i) {
                           dx[off + i] +=
                               k * (m * dy[off + i] - sum_dy[c] - xh[off + i] * sum_dy_xhat[c]);
                         }
                       } else {
                         for (size_t i = 0; i < HW; ++i) dx[off + i] += scale * dy[off + i];
                       }
                     }
                   }
                 });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise activations

template <typename T>
Tensor<T> relu(const Tensor<T>& input, Tape<T>* tape) {
  Tensor<T> out(input.shape());
  const T* x = input.raw();
  T* y = out.raw();
  // written so that NaN propagates instead of turning into 0
  for (size_t i = 0; i < input.numel(); ++i) y[i] = x[i] < T(0) ? T(0) : x[i];
  if (Tape<T>::wants(tape, {&input})) {
    tape->record("relu", {input}, out, [input, out]() mutable {
      T* dx = input.ensure_grad().data();
      const T* dy = out.grad().data();
      const T* x = input.raw();
      for (size_t i = 0; i < input.numel(); ++i) {
        if (x[i] > T(0)) dx[i] += dy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input, Tape<T>* tape) {
  Tensor<T> out(input.shape());
  const T* x = input.raw();
  T* y = out.raw();
  const T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  for (size_t i = 0; i < input.numel(); ++i) {
    T v;
    if (x[i] >= T(0)) {
      v = T(1) / (T(1) + std::exp(-x[i]));
    } else {
      const T e = std::exp(x[i]);
      v = e / (T(1) + e);
    }
    y[i] = std::clamp(v, lo, hi);
  }
  if (Tape<T>::wants(tape, {&input})) {
    tape->record("sigmoid", {input}, out, [input, out]() mutable {
      T* dx = input.ensure_grad().data();
      const T* dy = out.grad().data();
      const T* y = out.raw();
      for (size_t i = 0; i < input.numel(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// concat_channels

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  check_rank4(a, "concat_channels", "first operand");
  check_rank4(b, "concat_channels", "second operand");
  const char* names[] = {"batch", "channels", "height", "width"};
  for (size_t axis : {size_t{0}, size_t{2}, size_t{3}}) {
    if (a.dim(axis) != b.dim(axis)) {
      throw ShapeError(std::string("concat_channels: ") + names[axis] + " mismatch " +
                       std::to_string(a.dim(axis)) + " vs " + std::to_string(b.dim(axis)) +
                       " for shapes " + shape_to_string(a.shape()) + " and " +
                       shape_to_string(b.shape()));
    }
  }
  const size_t N = a.dim(0), CA = a.dim(1), CB = b.dim(1), HW = a.dim(2) * a.dim(3);
  Tensor<T> out(Shape{N, CA + CB, a.dim(2), a.dim(3)});
  for (size_t n = 0; n < N; ++n) {
    std::copy_n(a.raw() + n * CA * HW, CA * HW, out.raw() + n * (CA + CB) * HW);
    std::copy_n(b.raw() + n * CB * HW, CB * HW, out.raw() + (n * (CA + CB) + CA) * HW);
  }
  if (Tape<T>::wants(tape, {&a, &b})) {
    tape->record("concat_channels", {a, b}, out, [a, b, out, N, CA, CB, HW]() mutable {
      const T* dy = out.grad().data();
      if (a.requires_grad()) {
        T* da = a.ensure_grad().data();
        for (size_t n = 0; n < N; ++n) {
          const T* src = dy + n * (CA + CB) * HW;
          for (size_t i = 0; i < CA * HW; ++i) da[n * CA * HW + i] += src[i];
        }
      }
      if (b.requires_grad()) {
        T* db = b.ensure_grad().data();
        for (size_t n = 0; n < N; ++n) {
          const T* src = dy + (n * (CA + CB) + CA) * HW;
          for (size_t i = 0; i < CB * HW; ++i) db[n * CB * HW + i] += src[i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// bce_loss

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target, Tape<T>* tape) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("bce_loss: prediction shape " + shape_to_string(pred.shape()) +
                     " differs from target shape " + shape_to_string(target.shape()));
  }
  const size_t M = pred.numel();
  if (M == 0) throw ShapeError("bce_loss: empty input");
  const T lo = static_cast<T>(kBceClamp);
  const T hi = T(1) - lo;
  double total = 0.0;
  for (size_t i = 0; i < M; ++i) {
    const double p = std::clamp(pred[i], lo, hi);
    const double y = target[i];
    total += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(M)));
  if (Tape<T>::wants(tape, {&pred})) {
    tape->record("bce_loss", {pred, target}, out, [pred, target, out, lo, hi, M]() mutable {
      T* dp = pred.ensure_grad().data();
      const T g = out.grad()[0] / static_cast<T>(M);
      for (size_t i = 0; i < M; ++i) {
        const T p = pred[i];
        if (p < lo || p > hi) continue;  // clamp is flat there
        const T y = target[i];
        dp[i] += g * (-y / p + (T(1) - y) / (T(1) - p));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// small arithmetic used by tests and optimiser probes

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()) + " differ");
  }
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  if (Tape<T>::wants(tape, {&a, &b})) {
    tape->record("add", {a, b}, out, [a, b, out]() mutable {
      const auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.ensure_grad();
        for (size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto db = b.ensure_grad();
        for (size_t i = 0; i < db.size(); ++i) db[i] += dy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value, Tape<T>* tape) {
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + value;
  if (Tape<T>::wants(tape, {&a})) {
    tape->record("add_scalar", {a}, out, [a, out]() mutable {
      auto da = a.ensure_grad();
      const auto dy = out.grad();
      for (size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()) + " differ");
  }
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  if (Tape<T>::wants(tape, {&a, &b})) {
    tape->record("mul", {a, b}, out, [a, b, out]() mutable {
      const auto dy = out.grad();
      // a and b may alias (x*x); each side still contributes once.
      if (a.requires_grad()) {
        auto da = a.ensure_grad();
        for (size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * b[i];
      }
      if (b.requires_grad()) {
        auto db = b.ensure_grad();
        for (size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * a[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, Tape<T>* tape) {
  double total = 0.0;
  for (const T v : a.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total));
  if (Tape<T>::wants(tape, {&a})) {
    tape->record("sum", {a}, out, [a, out]() mutable {
      auto da = a.ensure_grad();
      const T g = out.grad()[0];
      for (auto& v : da) v += g;
    });
  }
  return out;
}

#define CUNET_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                            Conv2dOptions, Tape<T>*);                                         \
  template Tensor<T> maxpool2d(const Tensor<T>&, Tape<T>*);                                   \
  template Tensor<T> upsample_nn2d(const Tensor<T>&, Tape<T>*);                               \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                 BatchNormState<T>&, Mode, Tape<T>*);                         \
  template Tensor<T> relu(const Tensor<T>&, Tape<T>*);                                        \
  template Tensor<T> sigmoid(const Tensor<T>&, Tape<T>*);                                     \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&, Tape<T>*);           \
  template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                       \
  template Tensor<T> add_scalar(const Tensor<T>&, T, Tape<T>*);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                       \
  template Tensor<T> sum(const Tensor<T>&, Tape<T>*);

CUNET_INSTANTIATE_OPS(float)
CUNET_INSTANTIATE_OPS(double)

#undef CUNET_INSTANTIATE_OPS

}  // namespace ops
}  // namespace cunet
