#include "bevloc/model.hpp"

#include <cmath>

namespace bevloc::model {

void save_model(const BevModel& m, const std::string& path) {
  nn::save_brw1(m.params(), path);
}

std::unique_ptr<BevModel> load_model(const std::string& path) {
  nn::ParamStore raw = nn::load_brw1_fresh(path);
  if (!raw.contains("config.vector")) throw Error("model: checkpoint lacks config.vector");
  const nn::Tensor& v = raw.value("config.vector");
  if (v.numel() < 14 || std::lround(v.data[0]) != 1)
    throw Error("model: unsupported config.vector");

  ModelConfig cfg;
  cfg.embed_dim = static_cast<int>(std::lround(v.data[1]));
  cfg.heads = static_cast<int>(std::lround(v.data[2]));
  cfg.grid.cells_l = static_cast<int>(std::lround(v.data[3]));
  cfg.grid.cells_w = static_cast<int>(std::lround(v.data[4]));
  cfg.grid.cells_h = static_cast<int>(std::lround(v.data[5]));
  cfg.grid.length_m = v.data[6];
  cfg.grid.width_m = v.data[7];
  cfg.grid.height_m = v.data[8];
  cfg.image_h = static_cast<int>(std::lround(v.data[9]));
  cfg.image_w = static_cast<int>(std::lround(v.data[10]));
  cfg.patch_kernel = static_cast<int>(std::lround(v.data[11]));
  cfg.render_base = static_cast<int>(std::lround(v.data[12]));
  cfg.offset_clamp = v.data[13];

  auto model = std::make_unique<BevModel>(cfg);
  nn::load_brw1(model->params(), path);
  return model;
}

BevImage render_bev_image(const BevModel& m, const std::vector<FrameInputT<float>>& frames) {
  BevFeatureT<float> feat;
  nn::Tensor rgb = m.forward(frames, false, nullptr, nullptr, &feat);
  BevImage img;
  img.rgb = std::move(rgb);
  img.anchor_pose = feat.anchor_pose;
  img.coverage_m = 2.0 * m.config().grid.length_m;
  return img;
}

}  // namespace bevloc::model
