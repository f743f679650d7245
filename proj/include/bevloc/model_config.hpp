#pragma once

#include "bevloc/geometry.hpp"

namespace bevloc::model {

// Dimensions shared by encoder and renderer. The default instance matches the
// production geometry (0.229 m/px aerial raster, 25.648 m BEV extent, 28x28x5
// grid, 224 px renders); the miniature is the desk-scale configuration used
// for gradient checks and the overfit demonstration.
struct ModelConfig {
  int embed_dim = 64;
  int heads = 4;
  geometry::BevGridSpec grid;  // defaults: 25.648 x 25.648 x 2 m, 28 x 28 x 5
  int image_h = 224;
  int image_w = 224;
  int patch_kernel = 8;  // patch projection kernel == stride
  int render_base = 128;
  double offset_clamp = 4.0;

  int feat_h() const { return image_h / patch_kernel; }
  int feat_w() const { return image_w / patch_kernel; }
  int bev_cells() const { return grid.cells_l * grid.cells_w; }
  int points_per_query() const { return grid.cells_h; }
  // decoder block 0 halves the grid, four upsample blocks scale by 16
  int render_out_px() const { return (grid.cells_l / 2) * 16; }

  void validate() const {
    grid.validate();
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
      throw Error("ModelConfig: embed_dim must be a positive multiple of heads");
    if (patch_kernel < 1 || image_h % patch_kernel != 0 || image_w % patch_kernel != 0)
      throw Error("ModelConfig: image dims must divide by the patch stride");
    if (grid.cells_l % 2 != 0) throw Error("ModelConfig: grid length cells must be even");
    if (render_base < 8 || render_base % 8 != 0)
      throw Error("ModelConfig: render_base must be a positive multiple of 8");
  }

  static ModelConfig defaults() { return ModelConfig{}; }

  static ModelConfig miniature() {
    ModelConfig c;
    c.embed_dim = 8;
    c.heads = 4;
    c.grid.cells_l = 8;
    c.grid.cells_w = 8;
    c.grid.cells_h = 5;
    c.grid.length_m = 8 * 0.916;
    c.grid.width_m = 8 * 0.916;
    c.grid.height_m = 2.0;
    c.image_h = 64;
    c.image_w = 64;
    c.render_base = 16;  // full-size channels / 8
    return c;
  }
};

}  // namespace bevloc::model
