#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "bevloc/tensor.hpp"

namespace bevloc::nn {

#ifndef NDEBUG
template <typename T>
inline void debug_check_finite(const TensorT<T>& t, const char* where) {
  if (!t.all_finite()) throw Error(std::string("non-finite values after ") + where);
}
#else
template <typename T>
inline void debug_check_finite(const TensorT<T>&, const char*) {}
#endif

// ---------------------------------------------------------------------------
// conv2d: cross-correlation. input {N,C,H,W} or {C,H,W}, weight {O,C,kh,kw},
// bias {O} or empty. Output extent floor((in + 2*pad - k)/stride) + 1.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& bias,
                  int stride, int pad) {
  const bool batched = input.ndim() == 4;
  if (!batched && input.ndim() != 3) throw Error("conv2d: input must be 3D or 4D");
  if (weight.ndim() != 4) throw Error("conv2d: weight must be {O,C,kh,kw}");
  if (stride < 1) throw Error("conv2d: stride must be >= 1");
  if (pad < 0) throw Error("conv2d: pad must be >= 0");

  const TensorT<T>& x = input;
  const int n_batch = batched ? x.shape[0] : 1;
  const int c_in = batched ? x.shape[1] : x.shape[0];
  const int h_in = batched ? x.shape[2] : x.shape[1];
  const int w_in = batched ? x.shape[3] : x.shape[2];
  const int c_out = weight.shape[0];
  const int kh = weight.shape[2];
  const int kw = weight.shape[3];
  if (weight.shape[1] != c_in) throw Error("conv2d: channel mismatch between input and weight");
  if (!bias.data.empty() && (bias.ndim() != 1 || bias.shape[0] != c_out))
    throw Error("conv2d: bias length must equal output channels");

  const int h_out = (h_in + 2 * pad - kh) / stride + 1;
  const int w_out = (w_in + 2 * pad - kw) / stride + 1;
  if (h_out < 1 || w_out < 1) throw Error("conv2d: kernel larger than padded input");

  std::vector<int> out_shape =
      batched ? std::vector<int>{n_batch, c_out, h_out, w_out} : std::vector<int>{c_out, h_out, w_out};
  TensorT<T> y(out_shape);

  const std::size_t x_plane = static_cast<std::size_t>(h_in) * w_in;
  const std::size_t y_plane = static_cast<std::size_t>(h_out) * w_out;
  for (int n = 0; n < n_batch; ++n) {
    const T* xb = x.data.data() + static_cast<std::size_t>(n) * c_in * x_plane;
    T* yb = y.data.data() + static_cast<std::size_t>(n) * c_out * y_plane;
    for (int o = 0; o < c_out; ++o) {
      const T b = bias.data.empty() ? T(0) : bias.data[o];
      for (int oh = 0; oh < h_out; ++oh) {
        for (int ow = 0; ow < w_out; ++ow) {
          T acc = b;
          const int ih0 = oh * stride - pad;
          const int iw0 = ow * stride - pad;
          for (int c = 0; c < c_in; ++c) {
            const T* xp = xb + c * x_plane;
            const T* wp = weight.data.data() +
                          (static_cast<std::size_t>(o) * c_in + c) * kh * kw;
            for (int u = 0; u < kh; ++u) {
              const int ih = ih0 + u;
              if (ih < 0 || ih >= h_in) continue;
              const T* xrow = xp + static_cast<std::size_t>(ih) * w_in;
              const T* wrow = wp + static_cast<std::size_t>(u) * kw;
              for (int v = 0; v < kw; ++v) {
                const int iw = iw0 + v;
                if (iw < 0 || iw >= w_in) continue;
                acc += xrow[iw] * wrow[v];
              }
            }
          }
          yb[static_cast<std::size_t>(o) * y_plane + static_cast<std::size_t>(oh) * w_out + ow] = acc;
        }
      }
    }
  }
  debug_check_finite(y, "conv2d");
  return y;
}

template <typename T>
struct Conv2dGrads {
  TensorT<T> gx, gw, gb;
};

template <typename T>
Conv2dGrads<T> conv2d_vjp(const TensorT<T>& input, const TensorT<T>& weight, const TensorT<T>& gy,
                          int stride, int pad, bool has_bias) {
  const bool batched = input.ndim() == 4;
  const int n_batch = batched ? input.shape[0] : 1;
  const int c_in = batched ? input.shape[1] : input.shape[0];
  const int h_in = batched ? input.shape[2] : input.shape[1];
  const int w_in = batched ? input.shape[3] : input.shape[2];
  const int c_out = weight.shape[0];
  const int kh = weight.shape[2];
  const int kw = weight.shape[3];
  const int h_out = batched ? gy.shape[2] : gy.shape[1];
  const int w_out = batched ? gy.shape[3] : gy.shape[2];

  Conv2dGrads<T> g;
  g.gx = TensorT<T>(input.shape);
  g.gw = TensorT<T>(weight.shape);
  if (has_bias) g.gb = TensorT<T>({c_out});

  const std::size_t x_plane = static_cast<std::size_t>(h_in) * w_in;
  const std::size_t y_plane = static_cast<std::size_t>(h_out) * w_out;
  for (int n = 0; n < n_batch; ++n) {
    const T* xb = input.data.data() + static_cast<std::size_t>(n) * c_in * x_plane;
    const T* gyb = gy.data.data() + static_cast<std::size_t>(n) * c_out * y_plane;
    T* gxb = g.gx.data.data() + static_cast<std::size_t>(n) * c_in * x_plane;
    for (int o = 0; o < c_out; ++o) {
      for (int oh = 0; oh < h_out; ++oh) {
        for (int ow = 0; ow < w_out; ++ow) {
          const T go = gyb[static_cast<std::size_t>(o) * y_plane +
                           static_cast<std::size_t>(oh) * w_out + ow];
          if (has_bias) g.gb.data[o] += go;
          if (go == T(0)) continue;
          const int ih0 = oh * stride - pad;
          const int iw0 = ow * stride - pad;
          for (int c = 0; c < c_in; ++c) {
            const T* xp = xb + c * x_plane;
            T* gxp = gxb + c * x_plane;
            const std::size_t w_base = (static_cast<std::size_t>(o) * c_in + c) * kh * kw;
            for (int u = 0; u < kh; ++u) {
              const int ih = ih0 + u;
              if (ih < 0 || ih >= h_in) continue;
              for (int v = 0; v < kw; ++v) {
                const int iw = iw0 + v;
                if (iw < 0 || iw >= w_in) continue;
                const std::size_t xi = static_cast<std::size_t>(ih) * w_in + iw;
                const std::size_t wi = w_base + static_cast<std::size_t>(u) * kw + v;
                g.gw.data[wi] += go * xp[xi];
                gxp[xi] += go * weight.data[wi];
              }
            }
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// batchnorm2d. Per-channel statistics over (N,H,W). Population variance.
// ---------------------------------------------------------------------------

template <typename T>
struct BnCtx {
  bool training = true;
  TensorT<T> xhat;
  std::vector<T> invstd;
};

template <typename T>
TensorT<T> batchnorm2d(const TensorT<T>& input, const TensorT<T>& gamma, const TensorT<T>& beta,
                       TensorT<T>& running_mean, TensorT<T>& running_var, bool training,
                       T momentum = T(0.1), T eps = T(1e-5), BnCtx<T>* ctx = nullptr) {
  const bool batched = input.ndim() == 4;
  if (!batched && input.ndim() != 3) throw Error("batchnorm2d: input must be 3D or 4D");
  const int n_batch = batched ? input.shape[0] : 1;
  const int channels = batched ? input.shape[1] : input.shape[0];
  const int h = batched ? input.shape[2] : input.shape[1];
  const int w = batched ? input.shape[3] : input.shape[2];
  if (gamma.numel() != static_cast<std::size_t>(channels) ||
      beta.numel() != static_cast<std::size_t>(channels))
    throw Error("batchnorm2d: gamma/beta length must equal channels");
  const std::size_t per_channel = static_cast<std::size_t>(n_batch) * h * w;
  if (training && per_channel == 0) throw Error("batchnorm2d: zero-size batch in train mode");

  TensorT<T> y(input.shape);
  TensorT<T> xhat(input.shape);
  std::vector<T> invstd(channels);
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  for (int c = 0; c < channels; ++c) {
    T mean, var;
    if (training) {
      double sum = 0.0, sumsq = 0.0;
      for (int n = 0; n < n_batch; ++n) {
        const T* p = input.data.data() + (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum += p[i];
          sumsq += static_cast<double>(p[i]) * p[i];
        }
      }
      const double m = sum / static_cast<double>(per_channel);
      const double v = std::max(0.0, sumsq / static_cast<double>(per_channel) - m * m);
      mean = static_cast<T>(m);
      var = static_cast<T>(v);
      running_mean.data[c] = (T(1) - momentum) * running_mean.data[c] + momentum * mean;
      running_var.data[c] = (T(1) - momentum) * running_var.data[c] + momentum * var;
    } else {
      mean = running_mean.data[c];
      var = running_var.data[c];
    }
    const T is = T(1) / std::sqrt(var + eps);
    invstd[c] = is;
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (input.data[base + i] - mean) * is;
        xhat.data[base + i] = xh;
        y.data[base + i] = gamma.data[c] * xh + beta.data[c];
      }
    }
  }
  if (ctx) {
    ctx->training = training;
    ctx->xhat = std::move(xhat);
    ctx->invstd = std::move(invstd);
  }
  debug_check_finite(y, "batchnorm2d");
  return y;
}

template <typename T>
struct BnGrads {
  TensorT<T> gx, ggamma, gbeta;
};

template <typename T>
BnGrads<T> batchnorm2d_vjp(const BnCtx<T>& ctx, const TensorT<T>& gamma, const TensorT<T>& gy) {
  const bool batched = gy.ndim() == 4;
  const int n_batch = batched ? gy.shape[0] : 1;
  const int channels = batched ? gy.shape[1] : gy.shape[0];
  const int h = batched ? gy.shape[2] : gy.shape[1];
  const int w = batched ? gy.shape[3] : gy.shape[2];
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t per_channel = static_cast<std::size_t>(n_batch) * plane;

  BnGrads<T> g;
  g.gx = TensorT<T>(gy.shape);
  g.ggamma = TensorT<T>({channels});
  g.gbeta = TensorT<T>({channels});

  for (int c = 0; c < channels; ++c) {
    double sum_gy = 0.0, sum_gy_xhat = 0.0;
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_gy += gy.data[base + i];
        sum_gy_xhat += static_cast<double>(gy.data[base + i]) * ctx.xhat.data[base + i];
      }
    }
    g.gbeta.data[c] = static_cast<T>(sum_gy);
    g.ggamma.data[c] = static_cast<T>(sum_gy_xhat);
    const T gis = gamma.data[c] * ctx.invstd[c];
    if (ctx.training) {
      const T inv_n = T(1) / static_cast<T>(per_channel);
      for (int n = 0; n < n_batch; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T t = gy.data[base + i] - static_cast<T>(sum_gy) * inv_n -
                      ctx.xhat.data[base + i] * static_cast<T>(sum_gy_xhat) * inv_n;
          g.gx.data[base + i] = gis * t;
        }
      }
    } else {
      for (int n = 0; n < n_batch; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) g.gx.data[base + i] = gis * gy.data[base + i];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Pointwise ops.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> y = x;
  for (T& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
TensorT<T> relu_vjp(const TensorT<T>& x, const TensorT<T>& gy) {
  TensorT<T> gx(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) gx.data[i] = x.data[i] > T(0) ? gy.data[i] : T(0);
  return gx;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  TensorT<T> y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const T v = x.data[i];
    y.data[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                          : std::exp(v) / (T(1) + std::exp(v));
  }
  return y;
}

// takes the forward output, not the input
template <typename T>
TensorT<T> sigmoid_vjp(const TensorT<T>& y, const TensorT<T>& gy) {
  TensorT<T> gx(y.shape);
  for (std::size_t i = 0; i < y.data.size(); ++i)
    gx.data[i] = gy.data[i] * y.data[i] * (T(1) - y.data[i]);
  return gx;
}

template <typename T>
TensorT<T> upsample_nearest2x(const TensorT<T>& x) {
  if (x.ndim() != 3) throw Error("upsample_nearest2x: input must be {C,H,W}");
  const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  TensorT<T> y({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const T v = x.at3(ch, i, j);
        y.at3(ch, 2 * i, 2 * j) = v;
        y.at3(ch, 2 * i, 2 * j + 1) = v;
        y.at3(ch, 2 * i + 1, 2 * j) = v;
        y.at3(ch, 2 * i + 1, 2 * j + 1) = v;
      }
  return y;
}

template <typename T>
TensorT<T> upsample_nearest2x_vjp(const TensorT<T>& gy) {
  const int c = gy.shape[0], h2 = gy.shape[1], w2 = gy.shape[2];
  TensorT<T> gx({c, h2 / 2, w2 / 2});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h2 / 2; ++i)
      for (int j = 0; j < w2 / 2; ++j)
        gx.at3(ch, i, j) = gy.at3(ch, 2 * i, 2 * j) + gy.at3(ch, 2 * i, 2 * j + 1) +
                           gy.at3(ch, 2 * i + 1, 2 * j) + gy.at3(ch, 2 * i + 1, 2 * j + 1);
  return gx;
}

// ---------------------------------------------------------------------------
// linear: y = x @ w^T + b. x {N,Din}, w {Dout,Din}, b {Dout} or empty.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b = {}) {
  if (x.ndim() != 2 || w.ndim() != 2) throw Error("linear: x and w must be 2D");
  if (x.shape[1] != w.shape[1]) throw Error("linear: inner dimension mismatch");
  const int n = x.shape[0], d_in = x.shape[1], d_out = w.shape[0];
  TensorT<T> y({n, d_out});
  for (int i = 0; i < n; ++i) {
    const T* xr = x.data.data() + static_cast<std::size_t>(i) * d_in;
    T* yr = y.data.data() + static_cast<std::size_t>(i) * d_out;
    for (int o = 0; o < d_out; ++o) {
      const T* wr = w.data.data() + static_cast<std::size_t>(o) * d_in;
      T acc = b.data.empty() ? T(0) : b.data[o];
      for (int d = 0; d < d_in; ++d) acc += xr[d] * wr[d];
      yr[o] = acc;
    }
  }
  return y;
}

template <typename T>
struct LinearGrads {
  TensorT<T> gx, gw, gb;
};

template <typename T>
LinearGrads<T> linear_vjp(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& gy,
                          bool has_bias) {
  const int n = x.shape[0], d_in = x.shape[1], d_out = w.shape[0];
  LinearGrads<T> g;
  g.gx = TensorT<T>({n, d_in});
  g.gw = TensorT<T>({d_out, d_in});
  if (has_bias) g.gb = TensorT<T>({d_out});
  for (int i = 0; i < n; ++i) {
    const T* xr = x.data.data() + static_cast<std::size_t>(i) * d_in;
    const T* gyr = gy.data.data() + static_cast<std::size_t>(i) * d_out;
    T* gxr = g.gx.data.data() + static_cast<std::size_t>(i) * d_in;
    for (int o = 0; o < d_out; ++o) {
      const T go = gyr[o];
      if (has_bias) g.gb.data[o] += go;
      if (go == T(0)) continue;
      const T* wr = w.data.data() + static_cast<std::size_t>(o) * d_in;
      T* gwr = g.gw.data.data() + static_cast<std::size_t>(o) * d_in;
      for (int d = 0; d < d_in; ++d) {
        gxr[d] += go * wr[d];
        gwr[d] += go * xr[d];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// softmax along an axis, numerically stable.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
  if (x.ndim() == 0) throw Error("softmax: empty tensor");
  if (axis < 0) axis += x.ndim();
  if (axis < 0 || axis >= x.ndim()) throw Error("softmax: axis out of range");
  if (x.shape[axis] == 0) throw Error("softmax: empty axis");

  std::size_t inner = 1, outer = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape[i];
  for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.shape[i];
  const std::size_t k = x.shape[axis];

  TensorT<T> y(x.shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * k * inner + in;
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < k; ++j) m = std::max(m, x.data[base + j * inner]);
      T sum = T(0);
      for (std::size_t j = 0; j < k; ++j) {
        const T e = std::exp(x.data[base + j * inner] - m);
        y.data[base + j * inner] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (std::size_t j = 0; j < k; ++j) y.data[base + j * inner] *= inv;
    }
  }
  return y;
}

// takes the forward output
template <typename T>
TensorT<T> softmax_vjp(const TensorT<T>& y, const TensorT<T>& gy, int axis) {
  if (axis < 0) axis += y.ndim();
  std::size_t inner = 1, outer = 1;
  for (int i = 0; i < axis; ++i) outer *= y.shape[i];
  for (int i = axis + 1; i < y.ndim(); ++i) inner *= y.shape[i];
  const std::size_t k = y.shape[axis];

  TensorT<T> gx(y.shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * k * inner + in;
      T dot = T(0);
      for (std::size_t j = 0; j < k; ++j)
        dot += gy.data[base + j * inner] * y.data[base + j * inner];
      for (std::size_t j = 0; j < k; ++j)
        gx.data[base + j * inner] =
            y.data[base + j * inner] * (gy.data[base + j * inner] - dot);
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Multi-head attention with additive bias and output projection.
// q {Nq,D}, k/v {Nk,D}, bias {H,Nq,Nk} or {1,Nq,Nk} or empty, wo {D,D}.
// z^(m) = softmax(q^(m) k^(m)T / sqrt(Dh) + bias_m) v^(m); out = concat(z) wo^T.
// Projections carry no additive bias so that all-zero values yield zero output.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> multi_head_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                                const TensorT<T>& bias, const TensorT<T>& wo, int heads) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2) throw Error("mha: q,k,v must be 2D");
  const int nq = q.shape[0], d = q.shape[1], nk = k.shape[0];
  if (k.shape[1] != d || v.shape[1] != d || v.shape[0] != nk) throw Error("mha: k/v shape mismatch");
  if (heads < 1 || d % heads != 0) throw Error("mha: embedding dim must divide by heads");
  if (wo.ndim() != 2 || wo.shape[0] != d || wo.shape[1] != d) throw Error("mha: wo must be {D,D}");
  bool bias_broadcast = false;
  if (!bias.data.empty()) {
    if (bias.ndim() != 3 || bias.shape[1] != nq || bias.shape[2] != nk)
      throw Error("mha: bias must broadcast to {H,Nq,Nk}");
    if (bias.shape[0] == 1)
      bias_broadcast = true;
    else if (bias.shape[0] != heads)
      throw Error("mha: bias head extent mismatch");
  }
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  TensorT<T> attn({heads, nq, nk});
  TensorT<T> z({nq, d});
  std::vector<T> row(nk);
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    for (int i = 0; i < nq; ++i) {
      const T* qr = q.data.data() + static_cast<std::size_t>(i) * d + off;
      T m = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < nk; ++j) {
        const T* kr = k.data.data() + static_cast<std::size_t>(j) * d + off;
        T s = T(0);
        for (int t = 0; t < dh; ++t) s += qr[t] * kr[t];
        s *= scale;
        if (!bias.data.empty()) {
          const int bh = bias_broadcast ? 0 : h;
          s += bias.data[(static_cast<std::size_t>(bh) * nq + i) * nk + j];
        }
        row[j] = s;
        m = std::max(m, s);
      }
      T sum = T(0);
      for (int j = 0; j < nk; ++j) {
        const T e = std::exp(row[j] - m);
        row[j] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      T* ar = attn.data.data() + (static_cast<std::size_t>(h) * nq + i) * nk;
      for (int j = 0; j < nk; ++j) ar[j] = row[j] * inv;
      T* zr = z.data.data() + static_cast<std::size_t>(i) * d + off;
      for (int j = 0; j < nk; ++j) {
        const T a = ar[j];
        if (a == T(0)) continue;
        const T* vr = v.data.data() + static_cast<std::size_t>(j) * d + off;
        for (int t = 0; t < dh; ++t) zr[t] += a * vr[t];
      }
    }
  }
  TensorT<T> out = linear(z, wo);
  debug_check_finite(out, "multi_head_attention");
  return out;
}

template <typename T>
struct MhaGrads {
  TensorT<T> gq, gk, gv, gbias, gwo;
};

// Recomputes attention rows instead of storing the {H,Nq,Nk} weight matrix;
// the encoder's spatial stage would otherwise hold hundreds of MB of tape.
template <typename T>
MhaGrads<T> multi_head_attention_vjp(const TensorT<T>& q, const TensorT<T>& k,
                                     const TensorT<T>& v, const TensorT<T>& bias,
                                     const TensorT<T>& wo, int heads, const TensorT<T>& gy,
                                     bool need_gbias) {
  const int nq = q.shape[0], d = q.shape[1], nk = k.shape[0];
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const bool has_bias = !bias.data.empty();
  const bool bias_broadcast = has_bias && bias.shape[0] == 1;

  MhaGrads<T> g;
  g.gq = TensorT<T>({nq, d});
  g.gk = TensorT<T>({nk, d});
  g.gv = TensorT<T>({nk, d});
  g.gwo = TensorT<T>({d, d});
  if (need_gbias && has_bias) g.gbias = TensorT<T>(bias.shape);

  std::vector<T> attn(nk), gattn(nk), gs(nk);
  std::vector<T> z_row(d), gz_row(d);
  for (int i = 0; i < nq; ++i) {
    const T* qr = q.data.data() + static_cast<std::size_t>(i) * d;
    const T* gyr = gy.data.data() + static_cast<std::size_t>(i) * d;
    // gz_i = gy_i wo ; gwo += gy_i (x) z_i once z is rebuilt
    for (int t = 0; t < d; ++t) {
      T acc = T(0);
      for (int o = 0; o < d; ++o) acc += gyr[o] * wo.data[static_cast<std::size_t>(o) * d + t];
      gz_row[t] = acc;
      z_row[t] = T(0);
    }
    for (int h = 0; h < heads; ++h) {
      const int off = h * dh;
      // rebuild the attention row
      T m = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < nk; ++j) {
        const T* kr = k.data.data() + static_cast<std::size_t>(j) * d + off;
        T s = T(0);
        for (int t = 0; t < dh; ++t) s += qr[off + t] * kr[t];
        s *= scale;
        if (has_bias) {
          const int bh = bias_broadcast ? 0 : h;
          s += bias.data[(static_cast<std::size_t>(bh) * nq + i) * nk + j];
        }
        attn[j] = s;
        m = std::max(m, s);
      }
      T sum = T(0);
      for (int j = 0; j < nk; ++j) {
        const T e = std::exp(attn[j] - m);
        attn[j] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int j = 0; j < nk; ++j) attn[j] *= inv;

      for (int j = 0; j < nk; ++j) {
        const T* vr = v.data.data() + static_cast<std::size_t>(j) * d + off;
        T acc = T(0);
        for (int t = 0; t < dh; ++t) acc += gz_row[off + t] * vr[t];
        gattn[j] = acc;
        if (attn[j] != T(0)) {
          for (int t = 0; t < dh; ++t) z_row[off + t] += attn[j] * vr[t];
          T* gvr = g.gv.data.data() + static_cast<std::size_t>(j) * d + off;
          for (int t = 0; t < dh; ++t) gvr[t] += attn[j] * gz_row[off + t];
        }
      }
      T dot = T(0);
      for (int j = 0; j < nk; ++j) dot += gattn[j] * attn[j];
      for (int j = 0; j < nk; ++j) gs[j] = attn[j] * (gattn[j] - dot);
      if (need_gbias && has_bias) {
        const int bh = bias_broadcast ? 0 : h;
        T* gb = g.gbias.data.data() + (static_cast<std::size_t>(bh) * nq + i) * nk;
        for (int j = 0; j < nk; ++j) gb[j] += gs[j];
      }
      T* gqr = g.gq.data.data() + static_cast<std::size_t>(i) * d + off;
      for (int j = 0; j < nk; ++j) {
        const T s = gs[j] * scale;
        if (s == T(0)) continue;
        const T* kr = k.data.data() + static_cast<std::size_t>(j) * d + off;
        T* gkr = g.gk.data.data() + static_cast<std::size_t>(j) * d + off;
        for (int t = 0; t < dh; ++t) {
          gqr[t] += s * kr[t];
          gkr[t] += s * qr[off + t];
        }
      }
    }
    // gwo[o,t] += gy[i,o] * z[i,t]
    for (int o = 0; o < d; ++o) {
      const T go = gyr[o];
      if (go == T(0)) continue;
      T* gwor = g.gwo.data.data() + static_cast<std::size_t>(o) * d;
      for (int t = 0; t < d; ++t) gwor[t] += go * z_row[t];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// grid_sample: bilinear lookup of feature {C,H,W} at points {N,2} given as
// (row, col) in continuous pixel units. Out-of-grid neighbors contribute zero.
// Integer coordinates return the grid value exactly.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> grid_sample(const TensorT<T>& feature, const TensorT<T>& points) {
  if (feature.ndim() != 3) throw Error("grid_sample: feature must be {C,H,W}");
  if (points.ndim() != 2 || points.shape[1] != 2) throw Error("grid_sample: points must be {N,2}");
  const int c = feature.shape[0], h = feature.shape[1], w = feature.shape[2];
  const int n = points.shape[0];
  TensorT<T> y({c, n});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int p = 0; p < n; ++p) {
    const T r = points.at2(p, 0);
    const T cc = points.at2(p, 1);
    if (!std::isfinite(static_cast<double>(r)) || !std::isfinite(static_cast<double>(cc)))
      throw Error("grid_sample: non-finite sample point");
    const int r0 = static_cast<int>(std::floor(r));
    const int c0 = static_cast<int>(std::floor(cc));
    const T fr = r - static_cast<T>(r0);
    const T fc = cc - static_cast<T>(c0);
    const T w00 = (T(1) - fr) * (T(1) - fc);
    const T w01 = (T(1) - fr) * fc;
    const T w10 = fr * (T(1) - fc);
    const T w11 = fr * fc;
    const bool i00 = r0 >= 0 && r0 < h && c0 >= 0 && c0 < w;
    const bool i01 = r0 >= 0 && r0 < h && c0 + 1 >= 0 && c0 + 1 < w;
    const bool i10 = r0 + 1 >= 0 && r0 + 1 < h && c0 >= 0 && c0 < w;
    const bool i11 = r0 + 1 >= 0 && r0 + 1 < h && c0 + 1 >= 0 && c0 + 1 < w;
    for (int ch = 0; ch < c; ++ch) {
      const T* f = feature.data.data() + ch * plane;
      T acc = T(0);
      if (i00) acc += w00 * f[static_cast<std::size_t>(r0) * w + c0];
      if (i01) acc += w01 * f[static_cast<std::size_t>(r0) * w + c0 + 1];
      if (i10) acc += w10 * f[static_cast<std::size_t>(r0 + 1) * w + c0];
      if (i11) acc += w11 * f[static_cast<std::size_t>(r0 + 1) * w + c0 + 1];
      y.data[static_cast<std::size_t>(ch) * n + p] = acc;
    }
  }
  return y;
}

template <typename T>
struct GridSampleGrads {
  TensorT<T> gfeature, gpoints;
};

template <typename T>
GridSampleGrads<T> grid_sample_vjp(const TensorT<T>& feature, const TensorT<T>& points,
                                   const TensorT<T>& gy, bool need_gpoints = true) {
  const int c = feature.shape[0], h = feature.shape[1], w = feature.shape[2];
  const int n = points.shape[0];
  GridSampleGrads<T> g;
  g.gfeature = TensorT<T>(feature.shape);
  if (need_gpoints) g.gpoints = TensorT<T>(points.shape);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int p = 0; p < n; ++p) {
    const T r = points.at2(p, 0);
    const T cc = points.at2(p, 1);
    const int r0 = static_cast<int>(std::floor(r));
    const int c0 = static_cast<int>(std::floor(cc));
    const T fr = r - static_cast<T>(r0);
    const T fc = cc - static_cast<T>(c0);
    const bool i00 = r0 >= 0 && r0 < h && c0 >= 0 && c0 < w;
    const bool i01 = r0 >= 0 && r0 < h && c0 + 1 >= 0 && c0 + 1 < w;
    const bool i10 = r0 + 1 >= 0 && r0 + 1 < h && c0 >= 0 && c0 < w;
    const bool i11 = r0 + 1 >= 0 && r0 + 1 < h && c0 + 1 >= 0 && c0 + 1 < w;
    T gr = T(0), gc = T(0);
    for (int ch = 0; ch < c; ++ch) {
      const T go = gy.data[static_cast<std::size_t>(ch) * n + p];
      const T* f = feature.data.data() + ch * plane;
      T* gf = g.gfeature.data.data() + ch * plane;
      const T f00 = i00 ? f[static_cast<std::size_t>(r0) * w + c0] : T(0);
      const T f01 = i01 ? f[static_cast<std::size_t>(r0) * w + c0 + 1] : T(0);
      const T f10 = i10 ? f[static_cast<std::size_t>(r0 + 1) * w + c0] : T(0);
      const T f11 = i11 ? f[static_cast<std::size_t>(r0 + 1) * w + c0 + 1] : T(0);
      if (go != T(0)) {
        if (i00) gf[static_cast<std::size_t>(r0) * w + c0] += go * (T(1) - fr) * (T(1) - fc);
        if (i01) gf[static_cast<std::size_t>(r0) * w + c0 + 1] += go * (T(1) - fr) * fc;
        if (i10) gf[static_cast<std::size_t>(r0 + 1) * w + c0] += go * fr * (T(1) - fc);
        if (i11) gf[static_cast<std::size_t>(r0 + 1) * w + c0 + 1] += go * fr * fc;
      }
      if (need_gpoints) {
        gr += go * ((T(1) - fc) * (f10 - f00) + fc * (f11 - f01));
        gc += go * ((T(1) - fr) * (f01 - f00) + fr * (f11 - f10));
      }
    }
    if (need_gpoints) {
      g.gpoints.at2(p, 0) = gr;
      g.gpoints.at2(p, 1) = gc;
    }
  }
  return g;
}

}  // namespace bevloc::nn
