#pragma once

#include <string>
#include <vector>

#include "bevloc/model_config.hpp"
#include "bevloc/ops.hpp"
#include "bevloc/params.hpp"
#include "bevloc/rng.hpp"

namespace bevloc::model {

template <typename T>
struct RenderCtxT {
  struct LayerCtx {
    nn::TensorT<T> conv_in;
    nn::BnCtx<T> bn;
  };
  std::vector<LayerCtx> layers;
  std::vector<nn::TensorT<T>> pre_act;   // per stage, input of the activation
  std::vector<nn::TensorT<T>> post_act;  // per stage, output of the activation
};

// Rendering head: decoder block 0 (stride-2 conv + BN + ReLU), three decoder
// blocks of (conv + BN) x4 + ReLU, then four x2 upsample blocks of
// (conv + BN) x2 with ReLU (Sigmoid on the last). d x l x w -> 3 x 16(l/2) px.
template <typename T>
class RendererT {
 public:
  RendererT(const ModelConfig& cfg, nn::ParamStoreT<T>& params)
      : cfg_(cfg), params_(params) {
    cfg_.validate();
    build_stages();
  }

  static void create_params(nn::ParamStoreT<T>& p, const ModelConfig& cfg) {
    for (const auto& l : layer_specs(cfg)) {
      p.create(l.conv + ".weight", {l.out_ch, l.in_ch, 3, 3});
      p.create(l.bn + ".gamma", {l.out_ch});
      p.create(l.bn + ".beta", {l.out_ch});
      p.create(l.bn + ".running_mean", {l.out_ch}, false);
      p.create(l.bn + ".running_var", {l.out_ch}, false);
    }
  }

  static void init_params(nn::ParamStoreT<T>& p, const ModelConfig& cfg, Rng& rng) {
    for (const auto& l : layer_specs(cfg)) {
      const double bound = std::sqrt(6.0 / (l.in_ch * 9));
      for (T& v : p.value(l.conv + ".weight").data) v = static_cast<T>(rng.uniform(-bound, bound));
      std::fill(p.value(l.bn + ".gamma").data.begin(), p.value(l.bn + ".gamma").data.end(), T(1));
      std::fill(p.value(l.bn + ".running_var").data.begin(),
                p.value(l.bn + ".running_var").data.end(), T(1));
    }
  }

  nn::TensorT<T> render(const nn::TensorT<T>& feature, bool training,
                        RenderCtxT<T>* ctx = nullptr) const {
    if (feature.ndim() != 3 || feature.shape[0] != cfg_.embed_dim ||
        feature.shape[1] != cfg_.grid.cells_l || feature.shape[2] != cfg_.grid.cells_w)
      throw Error("render: feature has wrong extent " + feature.shape_str());
    if (ctx) {
      ctx->layers.clear();
      ctx->pre_act.clear();
      ctx->post_act.clear();
    }
    nn::TensorT<T> x = feature;
    for (const Stage& stage : stages_) {
      for (std::size_t li = 0; li < stage.layers.size(); ++li) {
        const LayerSpec& l = stage.layers[li];
        if (l.upsample_before) x = nn::upsample_nearest2x(x);
        typename RenderCtxT<T>::LayerCtx lc;
        if (ctx) lc.conv_in = x;
        nn::TensorT<T> y = nn::conv2d(x, params_.value(l.conv + ".weight"), {}, l.stride, 1);
        x = nn::batchnorm2d(y, params_.value(l.bn + ".gamma"), params_.value(l.bn + ".beta"),
                            params_.value(l.bn + ".running_mean"),
                            params_.value(l.bn + ".running_var"), training, T(0.1), T(1e-5),
                            ctx ? &lc.bn : nullptr);
        if (ctx) ctx->layers.push_back(std::move(lc));
      }
      if (ctx) ctx->pre_act.push_back(x);
      x = stage.sigmoid ? nn::sigmoid(x) : nn::relu(x);
      if (ctx) ctx->post_act.push_back(x);
    }
    return x;
  }

  // returns the gradient with respect to the input feature
  nn::TensorT<T> backward(const nn::TensorT<T>& g_out, const RenderCtxT<T>& ctx) const {
    nn::TensorT<T> g = g_out;
    std::size_t layer_idx = ctx.layers.size();
    for (std::size_t si = stages_.size(); si-- > 0;) {
      const Stage& stage = stages_[si];
      g = stage.sigmoid ? nn::sigmoid_vjp(ctx.post_act[si], g)
                        : nn::relu_vjp(ctx.pre_act[si], g);
      for (std::size_t li = stage.layers.size(); li-- > 0;) {
        const LayerSpec& l = stage.layers[li];
        const auto& lc = ctx.layers[--layer_idx];
        auto bg = nn::batchnorm2d_vjp(lc.bn, params_.value(l.bn + ".gamma"), g);
        params_.accumulate(l.bn + ".gamma", bg.ggamma);
        params_.accumulate(l.bn + ".beta", bg.gbeta);
        auto cg = nn::conv2d_vjp(lc.conv_in, params_.value(l.conv + ".weight"), bg.gx, l.stride, 1,
                                 false);
        params_.accumulate(l.conv + ".weight", cg.gw);
        g = std::move(cg.gx);
        if (l.upsample_before) g = nn::upsample_nearest2x_vjp(g);
      }
    }
    return g;
  }

  std::size_t param_count() const { return params_.param_count("renderer."); }

 private:
  struct LayerSpec {
    std::string conv, bn;
    int in_ch = 0, out_ch = 0, stride = 1;
    bool upsample_before = false;
  };
  struct Stage {
    std::vector<LayerSpec> layers;
    bool sigmoid = false;
  };

  static std::vector<LayerSpec> layer_specs(const ModelConfig& cfg) {
    std::vector<LayerSpec> specs;
    const int base = cfg.render_base;
    auto add = [&](const std::string& block, int idx, int in_ch, int out_ch, int stride,
                   bool up) {
      LayerSpec l;
      l.conv = "renderer." + block + ".conv" + std::to_string(idx);
      l.bn = "renderer." + block + ".bn" + std::to_string(idx);
      l.in_ch = in_ch;
      l.out_ch = out_ch;
      l.stride = stride;
      l.upsample_before = up;
      specs.push_back(std::move(l));
    };
    add("dec0", 0, cfg.embed_dim, base, 2, false);
    for (int b = 1; b <= 3; ++b)
      for (int i = 0; i < 4; ++i) add("dec" + std::to_string(b), i, base, base, 1, false);
    int ch = base;
    for (int b = 0; b < 4; ++b) {
      const int out_ch = b == 3 ? 3 : ch / 2;
      add("up" + std::to_string(b), 0, ch, out_ch, 1, true);
      add("up" + std::to_string(b), 1, out_ch, out_ch, 1, false);
      ch = out_ch;
    }
    return specs;
  }

  void build_stages() {
    const std::vector<LayerSpec> specs = layer_specs(cfg_);
    stages_.clear();
    std::size_t i = 0;
    auto take = [&](std::size_t count, bool sigmoid) {
      Stage s;
      for (std::size_t j = 0; j < count; ++j) s.layers.push_back(specs[i++]);
      s.sigmoid = sigmoid;
      stages_.push_back(std::move(s));
    };
    take(1, false);                      // dec0
    for (int b = 0; b < 3; ++b) take(4, false);  // dec1..3
    for (int b = 0; b < 4; ++b) take(2, b == 3); // up0..3
  }

  ModelConfig cfg_;
  nn::ParamStoreT<T>& params_;
  std::vector<Stage> stages_;
};

using Renderer = RendererT<float>;

}  // namespace bevloc::model
