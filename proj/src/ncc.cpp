#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "bevloc/registration.hpp"

namespace bevloc::reg {

namespace {

// zero-variance guard: per-pixel variance below 1e-9 counts as constant
constexpr double kVarFloor = 1e-9;

struct TemplateStats {
  std::vector<double> centered;  // (T - mean) on valid pixels, 0 elsewhere
  double norm = 0.0;             // ||T - mean|| over valid pixels
  std::size_t n_valid = 0;
};

TemplateStats center_template(const nn::Tensor& templ, const std::vector<std::uint8_t>& mask) {
  const std::size_t n = templ.numel();
  if (!mask.empty() && mask.size() != n) throw Error("ncc: mask size mismatch");
  TemplateStats st;
  st.centered.assign(n, 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    sum += templ.data[i];
    ++st.n_valid;
  }
  if (st.n_valid < 2) throw Error("ncc: template has fewer than two valid pixels");
  const double mean = sum / static_cast<double>(st.n_valid);
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double d = templ.data[i] - mean;
    st.centered[i] = d;
    sq += d * d;
  }
  if (sq <= kVarFloor * static_cast<double>(st.n_valid))
    throw Error("ncc: degenerate (constant) template");
  st.norm = std::sqrt(sq);
  return st;
}

}  // namespace

nn::Tensor to_gray(const nn::Tensor& rgb) {
  if (rgb.ndim() != 3 || rgb.shape[0] != 3) throw Error("to_gray: expected {3,H,W}");
  const int h = rgb.shape[1], w = rgb.shape[2];
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  nn::Tensor g({h, w});
  for (std::size_t i = 0; i < plane; ++i)
    g.data[i] = 0.299f * rgb.data[i] + 0.587f * rgb.data[plane + i] +
                0.114f * rgb.data[2 * plane + i];
  return g;
}

ScoreMap ncc_map(const nn::Tensor& templ, const std::vector<std::uint8_t>& mask,
                 const nn::Tensor& region) {
  if (templ.ndim() != 2 || region.ndim() != 2) throw Error("ncc: images must be {H,W}");
  const int th = templ.shape[0], tw = templ.shape[1];
  const int rh = region.shape[0], rw = region.shape[1];
  if (th > rh || tw > rw) throw Error("ncc: template larger than region");

  const TemplateStats st = center_template(templ, mask);
  const double nv = static_cast<double>(st.n_valid);

  ScoreMap out;
  out.rows = rh - th + 1;
  out.cols = rw - tw + 1;
  out.scores.assign(static_cast<std::size_t>(out.rows) * out.cols, 0.0);

  for (int pr = 0; pr < out.rows; ++pr) {
    for (int pc = 0; pc < out.cols; ++pc) {
      double num = 0.0, sw = 0.0, sww = 0.0;
      for (int i = 0; i < th; ++i) {
        const float* wrow = region.data.data() + static_cast<std::size_t>(pr + i) * rw + pc;
        const double* trow = st.centered.data() + static_cast<std::size_t>(i) * tw;
        const std::uint8_t* mrow =
            mask.empty() ? nullptr : mask.data() + static_cast<std::size_t>(i) * tw;
        for (int j = 0; j < tw; ++j) {
          if (mrow && !mrow[j]) continue;
          const double w = wrow[j];
          num += trow[j] * w;
          sw += w;
          sww += w * w;
        }
      }
      const double var_w = sww - sw * sw / nv;
      double score = 0.0;
      if (var_w > kVarFloor * nv) score = num / (st.norm * std::sqrt(var_w));
      out.scores[static_cast<std::size_t>(pr) * out.cols + pc] = score;
    }
  }
  return out;
}

int next_fast_size(int n) {
  if (n < 1) return 1;
  for (int s = n;; ++s) {
    int r = s;
    for (int f : {2, 3, 5, 7})
      while (r % f == 0) r /= f;
    if (r == 1) return s;
  }
}

namespace {

// FFTW plans keyed by padded size; planning is not thread-safe, execution on
// caller-owned fftw_malloc buffers is.
struct FftPlans {
  fftw_plan fwd = nullptr;
  fftw_plan inv = nullptr;
  int nr = 0, nc = 0;

  ~FftPlans() {
    if (fwd) fftw_destroy_plan(fwd);
    if (inv) fftw_destroy_plan(inv);
  }
};

const FftPlans& plans_for(int nr, int nc) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::unique_ptr<FftPlans>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{nr, nc}];
  if (!slot) {
    auto p = std::make_unique<FftPlans>();
    p->nr = nr;
    p->nc = nc;
    const std::size_t n_real = static_cast<std::size_t>(nr) * nc;
    const std::size_t n_cplx = static_cast<std::size_t>(nr) * (nc / 2 + 1);
    double* rbuf = fftw_alloc_real(n_real);
    fftw_complex* cbuf = fftw_alloc_complex(n_cplx);
    p->fwd = fftw_plan_dft_r2c_2d(nr, nc, rbuf, cbuf, FFTW_ESTIMATE);
    p->inv = fftw_plan_dft_c2r_2d(nr, nc, cbuf, rbuf, FFTW_ESTIMATE);
    fftw_free(rbuf);
    fftw_free(cbuf);
    if (!p->fwd || !p->inv) throw Error("ncc: FFTW plan creation failed");
    slot = std::move(p);
  }
  return *slot;
}

struct FftwRealDeleter {
  void operator()(double* p) const { fftw_free(p); }
};
struct FftwCplxDeleter {
  void operator()(fftw_complex* p) const { fftw_free(p); }
};

}  // namespace

ScoreMap ncc_map_fast(const nn::Tensor& templ, const nn::Tensor& region) {
  if (templ.ndim() != 2 || region.ndim() != 2) throw Error("ncc: images must be {H,W}");
  const int th = templ.shape[0], tw = templ.shape[1];
  const int rh = region.shape[0], rw = region.shape[1];
  if (th > rh || tw > rw) throw Error("ncc: template larger than region");

  const TemplateStats st = center_template(templ, {});
  const double nv = static_cast<double>(st.n_valid);

  // circular correlation is exact for valid placements once padded to >= region
  const int nr = next_fast_size(rh);
  const int nc = next_fast_size(rw);
  const FftPlans& plans = plans_for(nr, nc);
  const std::size_t n_real = static_cast<std::size_t>(nr) * nc;
  const std::size_t n_cplx = static_cast<std::size_t>(nr) * (nc / 2 + 1);

  std::unique_ptr<double, FftwRealDeleter> real_buf(fftw_alloc_real(n_real));
  std::unique_ptr<fftw_complex, FftwCplxDeleter> f_region(fftw_alloc_complex(n_cplx));
  std::unique_ptr<fftw_complex, FftwCplxDeleter> f_templ(fftw_alloc_complex(n_cplx));
  if (!real_buf || !f_region || !f_templ) throw Error("ncc: FFTW allocation failed");

  double* rb = real_buf.get();
  std::fill(rb, rb + n_real, 0.0);
  for (int i = 0; i < rh; ++i)
    for (int j = 0; j < rw; ++j)
      rb[static_cast<std::size_t>(i) * nc + j] = region.data[static_cast<std::size_t>(i) * rw + j];
  fftw_execute_dft_r2c(plans.fwd, rb, f_region.get());

  std::fill(rb, rb + n_real, 0.0);
  for (int i = 0; i < th; ++i)
    for (int j = 0; j < tw; ++j)
      rb[static_cast<std::size_t>(i) * nc + j] = st.centered[static_cast<std::size_t>(i) * tw + j];
  fftw_execute_dft_r2c(plans.fwd, rb, f_templ.get());

  // numerator = IFFT(F(region) * conj(F(centered template)))
  const double scale = 1.0 / static_cast<double>(n_real);
  for (std::size_t i = 0; i < n_cplx; ++i) {
    const double ar = f_region.get()[i][0], ai = f_region.get()[i][1];
    const double br = f_templ.get()[i][0], bi = f_templ.get()[i][1];
    f_region.get()[i][0] = (ar * br + ai * bi) * scale;
    f_region.get()[i][1] = (ai * br - ar * bi) * scale;
  }
  fftw_execute_dft_c2r(plans.inv, f_region.get(), rb);

  // integral images for window sums of W and W^2
  const int ir_w = rw + 1;
  std::vector<double> int_w(static_cast<std::size_t>(rh + 1) * ir_w, 0.0);
  std::vector<double> int_ww(static_cast<std::size_t>(rh + 1) * ir_w, 0.0);
  for (int i = 0; i < rh; ++i) {
    double row_w = 0.0, row_ww = 0.0;
    for (int j = 0; j < rw; ++j) {
      const double v = region.data[static_cast<std::size_t>(i) * rw + j];
      row_w += v;
      row_ww += v * v;
      int_w[static_cast<std::size_t>(i + 1) * ir_w + j + 1] =
          int_w[static_cast<std::size_t>(i) * ir_w + j + 1] + row_w;
      int_ww[static_cast<std::size_t>(i + 1) * ir_w + j + 1] =
          int_ww[static_cast<std::size_t>(i) * ir_w + j + 1] + row_ww;
    }
  }
  auto window_sum = [&](const std::vector<double>& ii, int r0, int c0, int r1, int c1) {
    return ii[static_cast<std::size_t>(r1) * ir_w + c1] -
           ii[static_cast<std::size_t>(r0) * ir_w + c1] -
           ii[static_cast<std::size_t>(r1) * ir_w + c0] +
           ii[static_cast<std::size_t>(r0) * ir_w + c0];
  };

  ScoreMap out;
  out.rows = rh - th + 1;
  out.cols = rw - tw + 1;
  out.scores.assign(static_cast<std::size_t>(out.rows) * out.cols, 0.0);
  for (int pr = 0; pr < out.rows; ++pr) {
    for (int pc = 0; pc < out.cols; ++pc) {
      const double sw = window_sum(int_w, pr, pc, pr + th, pc + tw);
      const double sww = window_sum(int_ww, pr, pc, pr + th, pc + tw);
      const double var_w = sww - sw * sw / nv;
      double score = 0.0;
      if (var_w > kVarFloor * nv) {
        const double num = rb[static_cast<std::size_t>(pr) * nc + pc];
        score = num / (st.norm * std::sqrt(var_w));
      }
      out.scores[static_cast<std::size_t>(pr) * out.cols + pc] = score;
    }
  }
  return out;
}

ScoreMap ncc_map_fast(const nn::Tensor& templ, const std::vector<std::uint8_t>& mask,
                      const nn::Tensor& region) {
  bool full = true;
  for (std::uint8_t v : mask)
    if (!v) {
      full = false;
      break;
    }
  if (full) return ncc_map_fast(templ, region);
  return ncc_map(templ, mask, region);
}

}  // namespace bevloc::reg
