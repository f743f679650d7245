#pragma once

// Test-only oracles, each coded independently of the implementation path it
// checks: naive scalar loops, homogeneous-matrix composition, array rotation,
// and a small finite-difference probe.

#include <array>
#include <cmath>
#include <vector>

#include "bevloc/rng.hpp"
#include "bevloc/tensor.hpp"

namespace oracles {

using bevloc::nn::Tensor64;

// six-loop cross-correlation, batch {N,C,H,W}, weight {O,C,kh,kw}
inline Tensor64 conv2d_loops(const Tensor64& x, const Tensor64& w, const Tensor64& b, int stride,
                             int pad) {
  const int nb = x.shape[0], ci = x.shape[1], hi = x.shape[2], wi = x.shape[3];
  const int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
  const int ho = (hi + 2 * pad - kh) / stride + 1;
  const int wo = (wi + 2 * pad - kw) / stride + 1;
  Tensor64 y({nb, co, ho, wo});
  for (int n = 0; n < nb; ++n)
    for (int o = 0; o < co; ++o)
      for (int r = 0; r < ho; ++r)
        for (int c = 0; c < wo; ++c) {
          double acc = b.data.empty() ? 0.0 : b.data[o];
          for (int ch = 0; ch < ci; ++ch)
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                const int ir = r * stride - pad + u;
                const int ic = c * stride - pad + v;
                if (ir < 0 || ir >= hi || ic < 0 || ic >= wi) continue;
                acc += x.at4(n, ch, ir, ic) * w.at4(o, ch, u, v);
              }
          y.at4(n, o, r, c) = acc;
        }
  return y;
}

// scalar bilinear lookup with zero padding
inline double bilinear_scalar(const Tensor64& f, int channel, double r, double c) {
  const int h = f.shape[1], w = f.shape[2];
  const int r0 = static_cast<int>(std::floor(r));
  const int c0 = static_cast<int>(std::floor(c));
  const double fr = r - r0, fc = c - c0;
  auto tap = [&](int rr, int cc) -> double {
    if (rr < 0 || rr >= h || cc < 0 || cc >= w) return 0.0;
    return f.at3(channel, rr, cc);
  };
  return (1.0 - fr) * ((1.0 - fc) * tap(r0, c0) + fc * tap(r0, c0 + 1)) +
         fr * ((1.0 - fc) * tap(r0 + 1, c0) + fc * tap(r0 + 1, c0 + 1));
}

// proper SE(2) homogeneous matrices; azimuth is clockwise from north, the
// vehicle frame is x forward / y left, so the standard angle is pi/2 - azimuth
using Mat3 = std::array<double, 9>;

inline Mat3 se2_matrix(double easting, double northing, double azimuth) {
  const double phi = 0.5 * 3.14159265358979323846 - azimuth;
  return {std::cos(phi), -std::sin(phi), easting,
          std::sin(phi), std::cos(phi),  northing,
          0.0,           0.0,            1.0};
}

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[3 * i + j] += a[3 * i + k] * b[3 * k + j];
  return c;
}

inline Mat3 mat3_rigid_inverse(const Mat3& m) {
  // [R t; 0 1]^-1 = [R^T  -R^T t; 0 1]
  return {m[0], m[3], -(m[0] * m[2] + m[3] * m[5]),
          m[1], m[4], -(m[1] * m[2] + m[4] * m[5]),
          0.0,  0.0,  1.0};
}

// relative pose in the previous frame via inv(T_prev) * T_cur
struct DeltaOracle {
  double dx, dy, dtheta;
};

inline DeltaOracle pose_delta_matrix(double ce, double cn, double ca, double pe, double pn,
                                     double pa) {
  const Mat3 rel = mat3_mul(mat3_rigid_inverse(se2_matrix(pe, pn, pa)), se2_matrix(ce, cn, ca));
  DeltaOracle d;
  d.dx = rel[2];
  d.dy = rel[5];
  // rotation angle of rel is phi_cur - phi_prev = -(ca - pa)
  d.dtheta = -std::atan2(rel[3], rel[0]);
  return d;
}

// counterclockwise quarter-turn of a {C,H,W} array (H == W)
template <typename T>
bevloc::nn::TensorT<T> rotate90_ccw(const bevloc::nn::TensorT<T>& in) {
  const int c = in.shape[0], n = in.shape[1];
  bevloc::nn::TensorT<T> out(in.shape);
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < n; ++r)
      for (int col = 0; col < n; ++col) out.at3(ch, r, col) = in.at3(ch, col, n - 1 - r);
  return out;
}

// single-head attention with bias, written as plain loops
inline Tensor64 attention_scalar(const Tensor64& q, const Tensor64& k, const Tensor64& v,
                                 const Tensor64& bias, const Tensor64& wo) {
  const int nq = q.shape[0], d = q.shape[1], nk = k.shape[0];
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor64 z({nq, d});
  std::vector<double> row(nk);
  for (int i = 0; i < nq; ++i) {
    for (int j = 0; j < nk; ++j) {
      double s = 0.0;
      for (int t = 0; t < d; ++t) s += q.at2(i, t) * k.at2(j, t);
      s *= scale;
      if (!bias.data.empty()) s += bias.data[static_cast<std::size_t>(i) * nk + j];
      row[j] = s;
    }
    double m = row[0];
    for (int j = 1; j < nk; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (int j = 0; j < nk; ++j) {
      row[j] = std::exp(row[j] - m);
      sum += row[j];
    }
    for (int j = 0; j < nk; ++j)
      for (int t = 0; t < d; ++t) z.at2(i, t) += row[j] / sum * v.at2(j, t);
  }
  Tensor64 out({nq, d});
  for (int i = 0; i < nq; ++i)
    for (int o = 0; o < d; ++o) {
      double acc = 0.0;
      for (int t = 0; t < d; ++t) acc += z.at2(i, t) * wo.at2(o, t);
      out.at2(i, o) = acc;
    }
  return out;
}

inline Tensor64 random_tensor(std::vector<int> shape, bevloc::Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
  Tensor64 t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace oracles
