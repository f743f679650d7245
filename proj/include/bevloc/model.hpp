#pragma once

#include <memory>
#include <string>

#include "bevloc/encoder.hpp"
#include "bevloc/renderer.hpp"

namespace bevloc::model {

// Rendered top-down view. The image spans twice the BEV grid extent, so the
// default configuration yields 224 px covering 51.296 m (0.229 m/px).
struct BevImage {
  nn::Tensor rgb;  // {3,out,out} in [0,1]
  geometry::Pose2 anchor_pose;
  double coverage_m = 0.0;
};

// Encoder + rendering head over one parameter store.
template <typename T>
class BevModelT {
 public:
  explicit BevModelT(const ModelConfig& cfg)
      : cfg_(cfg), encoder_(cfg, params_), renderer_(cfg, params_) {
    EncoderT<T>::create_params(params_, cfg_);
    RendererT<T>::create_params(params_, cfg_);
    write_config_vector();
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    EncoderT<T>::init_params(params_, cfg_, rng);
    RendererT<T>::init_params(params_, cfg_, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStoreT<T>& params() { return params_; }
  const nn::ParamStoreT<T>& params() const { return params_; }
  EncoderT<T>& encoder() { return encoder_; }
  const EncoderT<T>& encoder() const { return encoder_; }
  RendererT<T>& renderer() { return renderer_; }
  const RendererT<T>& renderer() const { return renderer_; }

  void set_cameras(const std::array<geometry::CameraModel, 3>& cams) {
    encoder_.set_projections(cams);
  }

  std::size_t encoder_param_count() const { return params_.param_count("encoder."); }
  std::size_t renderer_param_count() const { return params_.param_count("renderer."); }
  std::size_t total_param_count() const {
    return encoder_param_count() + renderer_param_count();
  }

  nn::TensorT<T> forward(const std::vector<FrameInputT<T>>& frames, bool training,
                         EncodeCtxT<T>* ectx = nullptr, RenderCtxT<T>* rctx = nullptr,
                         BevFeatureT<T>* feature_out = nullptr) const {
    BevFeatureT<T> feat = encoder_.encode_window(frames, ectx);
    nn::TensorT<T> img = renderer_.render(feat.tensor, training, rctx);
    if (feature_out) *feature_out = std::move(feat);
    return img;
  }

  // gradient flow back through renderer and the whole window tape
  void backward(const nn::TensorT<T>& g_image, const EncodeCtxT<T>& ectx,
                const RenderCtxT<T>& rctx) const {
    nn::TensorT<T> g_feat = renderer_.backward(g_image, rctx);
    encoder_.backward(g_feat, ectx);
  }

 private:
  void write_config_vector() {
    nn::TensorT<T>& v = params_.create("config.vector", {16}, false);
    v.data[0] = T(1);  // format version
    v.data[1] = static_cast<T>(cfg_.embed_dim);
    v.data[2] = static_cast<T>(cfg_.heads);
    v.data[3] = static_cast<T>(cfg_.grid.cells_l);
    v.data[4] = static_cast<T>(cfg_.grid.cells_w);
    v.data[5] = static_cast<T>(cfg_.grid.cells_h);
    v.data[6] = static_cast<T>(cfg_.grid.length_m);
    v.data[7] = static_cast<T>(cfg_.grid.width_m);
    v.data[8] = static_cast<T>(cfg_.grid.height_m);
    v.data[9] = static_cast<T>(cfg_.image_h);
    v.data[10] = static_cast<T>(cfg_.image_w);
    v.data[11] = static_cast<T>(cfg_.patch_kernel);
    v.data[12] = static_cast<T>(cfg_.render_base);
    v.data[13] = static_cast<T>(cfg_.offset_clamp);
  }

  ModelConfig cfg_;
  nn::ParamStoreT<T> params_;
  EncoderT<T> encoder_;
  RendererT<T> renderer_;
};

using BevModel = BevModelT<float>;

// BRW1 checkpoint with the configuration carried in the "config.vector" entry
void save_model(const BevModel& m, const std::string& path);
std::unique_ptr<BevModel> load_model(const std::string& path);

BevImage render_bev_image(const BevModel& m, const std::vector<FrameInputT<float>>& frames);

}  // namespace bevloc::model
