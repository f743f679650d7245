#include "bevloc/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "bevloc/dataset.hpp"
#include "bevloc/model.hpp"
#include "bevloc/training.hpp"

namespace bevloc::verify {

namespace {

using nn::Tensor64;

constexpr double kStep = 1e-4;
constexpr double kOpTol = 1e-5;
constexpr double kComposedTol = 1e-4;
constexpr int kProbes = 10;

Tensor64 rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

double dot(const Tensor64& a, const Tensor64& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

double rel_err(double a, double f) {
  return std::abs(a - f) / std::max({1e-2, std::abs(a), std::abs(f)});
}

// probes d/dt sum(cotangent * op(x + t u)) against the analytic grad
double probe_arg(Tensor64& x, const Tensor64& analytic,
                 const std::function<Tensor64()>& fwd, const Tensor64& cotangent, Rng& rng) {
  double worst = 0.0;
  const Tensor64 saved = x;
  for (int p = 0; p < kProbes; ++p) {
    Tensor64 u = rand_tensor(x.shape, rng);
    const double ana = dot(analytic, u);
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = saved.data[i] + kStep * u.data[i];
    const double plus = dot(cotangent, fwd());
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = saved.data[i] - kStep * u.data[i];
    const double minus = dot(cotangent, fwd());
    x = saved;
    worst = std::max(worst, rel_err(ana, (plus - minus) / (2.0 * kStep)));
  }
  return worst;
}

struct Suite {
  std::vector<GradCheckRow> rows;
  Rng rng;

  explicit Suite(std::uint64_t seed) : rng(seed) {}

  void row(const std::string& name, double err, double tol) {
    rows.push_back({name, err, tol, err <= tol});
  }

  void check_conv2d() {
    Tensor64 x = rand_tensor({2, 3, 6, 6}, rng);
    Tensor64 w = rand_tensor({4, 3, 3, 3}, rng);
    Tensor64 b = rand_tensor({4}, rng);
    Tensor64 y = nn::conv2d(x, w, b, 1, 1);
    Tensor64 cot = rand_tensor(y.shape, rng);
    auto g = nn::conv2d_vjp(x, w, cot, 1, 1, true);
    auto fwd = [&] { return nn::conv2d(x, w, b, 1, 1); };
    row("conv2d/input", probe_arg(x, g.gx, fwd, cot, rng), kOpTol);
    row("conv2d/weight", probe_arg(w, g.gw, fwd, cot, rng), kOpTol);
    row("conv2d/bias", probe_arg(b, g.gb, fwd, cot, rng), kOpTol);

    Tensor64 x2 = rand_tensor({3, 8, 8}, rng);
    Tensor64 w2 = rand_tensor({5, 3, 3, 3}, rng);
    Tensor64 y2 = nn::conv2d(x2, w2, {}, 2, 0);
    Tensor64 cot2 = rand_tensor(y2.shape, rng);
    auto g2 = nn::conv2d_vjp(x2, w2, cot2, 2, 0, false);
    auto fwd2 = [&] { return nn::conv2d(x2, w2, {}, 2, 0); };
    row("conv2d_s2/input", probe_arg(x2, g2.gx, fwd2, cot2, rng), kOpTol);
    row("conv2d_s2/weight", probe_arg(w2, g2.gw, fwd2, cot2, rng), kOpTol);
  }

  void check_batchnorm(bool training) {
    const std::string tag = training ? "batchnorm_train" : "batchnorm_eval";
    Tensor64 x = rand_tensor({2, 3, 4, 4}, rng);
    Tensor64 gamma = rand_tensor({3}, rng, 0.5, 1.5);
    Tensor64 beta = rand_tensor({3}, rng);
    Tensor64 rm = rand_tensor({3}, rng, -0.2, 0.2);
    Tensor64 rv = rand_tensor({3}, rng, 0.5, 1.5);
    nn::BnCtx<double> ctx;
    Tensor64 y = [&] {
      Tensor64 m = rm, v = rv;  // keep the originals for replays
      return nn::batchnorm2d(x, gamma, beta, m, v, training, 0.1, 1e-5, &ctx);
    }();
    Tensor64 cot = rand_tensor(y.shape, rng);
    auto g = nn::batchnorm2d_vjp(ctx, gamma, cot);
    auto fwd = [&] {
      Tensor64 m = rm, v = rv;
      return nn::batchnorm2d<double>(x, gamma, beta, m, v, training, 0.1, 1e-5, nullptr);
    };
    row(tag + "/input", probe_arg(x, g.gx, fwd, cot, rng), kOpTol);
    row(tag + "/gamma", probe_arg(gamma, g.ggamma, fwd, cot, rng), kOpTol);
    row(tag + "/beta", probe_arg(beta, g.gbeta, fwd, cot, rng), kOpTol);
  }

  void check_pointwise() {
    Tensor64 x = rand_tensor({40}, rng);
    Tensor64 cot = rand_tensor({40}, rng);
    Tensor64 gx = nn::relu_vjp(x, cot);
    row("relu/input", probe_arg(x, gx, [&] { return nn::relu(x); }, cot, rng), kOpTol);

    Tensor64 xs = rand_tensor({40}, rng, -3.0, 3.0);
    Tensor64 ys = nn::sigmoid(xs);
    Tensor64 gxs = nn::sigmoid_vjp(ys, cot);
    row("sigmoid/input", probe_arg(xs, gxs, [&] { return nn::sigmoid(xs); }, cot, rng), kOpTol);

    Tensor64 xu = rand_tensor({3, 4, 4}, rng);
    Tensor64 yu = nn::upsample_nearest2x(xu);
    Tensor64 cu = rand_tensor(yu.shape, rng);
    Tensor64 gxu = nn::upsample_nearest2x_vjp(cu);
    row("upsample_nearest2x/input",
        probe_arg(xu, gxu, [&] { return nn::upsample_nearest2x(xu); }, cu, rng), kOpTol);

    Tensor64 xl = rand_tensor({5, 7}, rng);
    Tensor64 wl = rand_tensor({6, 7}, rng);
    Tensor64 bl = rand_tensor({6}, rng);
    Tensor64 yl = nn::linear(xl, wl, bl);
    Tensor64 cl = rand_tensor(yl.shape, rng);
    auto gl = nn::linear_vjp(xl, wl, cl, true);
    auto fwd_l = [&] { return nn::linear(xl, wl, bl); };
    row("linear/input", probe_arg(xl, gl.gx, fwd_l, cl, rng), kOpTol);
    row("linear/weight", probe_arg(wl, gl.gw, fwd_l, cl, rng), kOpTol);
    row("linear/bias", probe_arg(bl, gl.gb, fwd_l, cl, rng), kOpTol);

    Tensor64 xsm = rand_tensor({4, 9}, rng, -2.0, 2.0);
    Tensor64 ysm = nn::softmax(xsm, 1);
    Tensor64 csm = rand_tensor(ysm.shape, rng);
    Tensor64 gsm = nn::softmax_vjp(ysm, csm, 1);
    row("softmax/input", probe_arg(xsm, gsm, [&] { return nn::softmax(xsm, 1); }, csm, rng),
        kOpTol);
  }

  void check_mha() {
    const int heads = 2, nq = 6, nk = 8, d = 8;
    Tensor64 q = rand_tensor({nq, d}, rng);
    Tensor64 k = rand_tensor({nk, d}, rng);
    Tensor64 v = rand_tensor({nk, d}, rng);
    Tensor64 bias = rand_tensor({heads, nq, nk}, rng, -0.5, 0.5);
    Tensor64 wo = rand_tensor({d, d}, rng);
    Tensor64 y = nn::multi_head_attention(q, k, v, bias, wo, heads);
    Tensor64 cot = rand_tensor(y.shape, rng);
    auto g = nn::multi_head_attention_vjp(q, k, v, bias, wo, heads, cot, true);
    auto fwd = [&] { return nn::multi_head_attention(q, k, v, bias, wo, heads); };
    row("mha/q", probe_arg(q, g.gq, fwd, cot, rng), kOpTol);
    row("mha/k", probe_arg(k, g.gk, fwd, cot, rng), kOpTol);
    row("mha/v", probe_arg(v, g.gv, fwd, cot, rng), kOpTol);
    row("mha/bias", probe_arg(bias, g.gbias, fwd, cot, rng), kOpTol);
    row("mha/wo", probe_arg(wo, g.gwo, fwd, cot, rng), kOpTol);
  }

  void check_grid_sample() {
    Tensor64 f = rand_tensor({3, 7, 7}, rng);
    Tensor64 pts({12, 2});
    for (int i = 0; i < 12; ++i) {
      // keep fractions away from the bilinear kinks at integer coordinates
      pts.at2(i, 0) = static_cast<double>(rng.uniform_int(7)) - 0.5 + rng.uniform(0.1, 0.9);
      pts.at2(i, 1) = static_cast<double>(rng.uniform_int(7)) - 0.5 + rng.uniform(0.1, 0.9);
    }
    Tensor64 y = nn::grid_sample(f, pts);
    Tensor64 cot = rand_tensor(y.shape, rng);
    auto g = nn::grid_sample_vjp(f, pts, cot, true);
    auto fwd = [&] { return nn::grid_sample(f, pts); };
    row("grid_sample/feature", probe_arg(f, g.gfeature, fwd, cot, rng), kOpTol);
    row("grid_sample/points", probe_arg(pts, g.gpoints, fwd, cot, rng), kOpTol);
  }

  // miniature window with off-integer propagation and deformation offsets
  struct MiniSetup {
    std::unique_ptr<model::BevModelT<double>> model;
    std::vector<model::FrameInputT<double>> window;
    Tensor64 label;
  };

  MiniSetup make_miniature(std::uint64_t seed) {
    MiniSetup s;
    const model::ModelConfig cfg = model::ModelConfig::miniature();
    s.model = std::make_unique<model::BevModelT<double>>(cfg);
    s.model->init(seed);
    auto& params = s.model->params();
    for (auto& [name, e] : params) {
      if (!e.trainable) continue;
      if (name.find("offset") != std::string::npos || name.find("bias_table") != std::string::npos)
        for (double& v : e.value.data) v = rng.uniform(-0.05, 0.05);
    }
    s.model->set_cameras(data::default_camera_rig(cfg.image_w, cfg.image_h));

    geometry::Pose2 p0{500100.0, 4479900.0, 0.3};
    geometry::Pose2 p1{500100.7, 4479900.9, 0.41};
    for (int t = 0; t < 2; ++t) {
      model::FrameInputT<double> f;
      for (int v = 0; v < 3; ++v)
        f.images[static_cast<std::size_t>(v)] = rand_tensor({3, cfg.image_h, cfg.image_w}, rng, 0.0, 1.0);
      f.pose = t == 0 ? p0 : p1;
      f.timestamp = t * 0.4;
      s.window.push_back(std::move(f));
    }
    s.label = rand_tensor({3, cfg.render_out_px(), cfg.render_out_px()}, rng, 0.0, 1.0);
    return s;
  }

  // 20 random trainable coordinates against finite differences of the loss
  void check_composed(const std::string& name, bool through_renderer) {
    MiniSetup s = make_miniature(rng.bits());
    auto& params = s.model->params();

    auto loss_fn = [&]() -> double {
      if (!through_renderer) {
        model::BevFeatureT<double> b = s.model->encoder().encode_window(s.window);
        double acc = 0.0;
        for (double v : b.tensor.data) acc += v;
        return acc;
      }
      Tensor64 img = s.model->forward(s.window, true);
      double acc = 0.0;
      for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double d = img.data[i] - s.label.data[i];
        acc += d * d;
      }
      return acc / static_cast<double>(img.numel());
    };

    params.zero_grad();
    if (!through_renderer) {
      model::EncodeCtxT<double> ectx;
      model::BevFeatureT<double> b = s.model->encoder().encode_window(s.window, &ectx);
      Tensor64 ones = Tensor64::full(b.tensor.shape, 1.0);
      s.model->encoder().backward(ones, ectx);
    } else {
      model::EncodeCtxT<double> ectx;
      model::RenderCtxT<double> rctx;
      Tensor64 img = s.model->forward(s.window, true, &ectx, &rctx);
      Tensor64 g(img.shape);
      const double inv_n = 1.0 / static_cast<double>(img.numel());
      for (std::size_t i = 0; i < img.data.size(); ++i)
        g.data[i] = 2.0 * (img.data[i] - s.label.data[i]) * inv_n;
      s.model->backward(g, ectx, rctx);
    }

    std::vector<std::string> names;
    for (auto& [n, e] : params) {
      if (!e.trainable) continue;
      if (!through_renderer && n.rfind("encoder.", 0) != 0) continue;
      names.push_back(n);
    }
    double worst = 0.0;
    for (int probe = 0; probe < 20; ++probe) {
      const std::string& pname = names[rng.uniform_int(names.size())];
      auto& entry = params.entry(pname);
      const std::size_t idx = rng.uniform_int(entry.value.numel());
      const double saved = entry.value.data[idx];
      entry.value.data[idx] = saved + kStep;
      const double plus = loss_fn();
      entry.value.data[idx] = saved - kStep;
      const double minus = loss_fn();
      entry.value.data[idx] = saved;
      const double fd = (plus - minus) / (2.0 * kStep);
      worst = std::max(worst, rel_err(entry.grad.data[idx], fd));
    }
    row(name, worst, kComposedTol);
  }
};

}  // namespace

std::vector<GradCheckRow> gradcheck_all(std::uint64_t seed) {
  Suite suite(seed);
  suite.check_conv2d();
  suite.check_batchnorm(true);
  suite.check_batchnorm(false);
  suite.check_pointwise();
  suite.check_mha();
  suite.check_grid_sample();
  suite.check_composed("encoder_window/params", false);
  suite.check_composed("model_mse/params", true);
  return std::move(suite.rows);
}

bool all_passed(const std::vector<GradCheckRow>& rows) {
  for (const auto& r : rows)
    if (!r.pass) return false;
  return !rows.empty();
}

}  // namespace bevloc::verify
