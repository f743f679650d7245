#pragma once

#include <array>
#include <string>
#include <vector>

#include "bevloc/geometry.hpp"
#include "bevloc/model_config.hpp"
#include "bevloc/ops.hpp"
#include "bevloc/params.hpp"
#include "bevloc/rng.hpp"

namespace bevloc::model {

inline constexpr std::array<const char*, 3> kViewNames = {"left", "center", "right"};

template <typename T>
struct BevFeatureT {
  nn::TensorT<T> tensor;  // {d,l,w}
  geometry::Pose2 anchor_pose;
  double timestamp = 0.0;
};
using BevFeature = BevFeatureT<float>;

template <typename T>
struct FrameInputT {
  std::array<nn::TensorT<T>, 3> images;  // {3,H,W} each, values in [0,1]
  geometry::Pose2 pose;
  double timestamp = 0.0;
};

// warp a BEV feature into the grid of `to_pose`; zero fill where the old grid
// has no coverage
template <typename T>
BevFeatureT<T> propagate(const geometry::BevGridSpec& spec, const BevFeatureT<T>& b,
                         const geometry::Pose2& to_pose,
                         geometry::SampleGrid* grid_out = nullptr) {
  const geometry::PoseDelta delta = geometry::pose_delta(to_pose, b.anchor_pose);
  geometry::SampleGrid grid = geometry::warp_grid(spec, delta);
  BevFeatureT<T> out;
  out.tensor = geometry::bilinear_sample(b.tensor, grid);
  out.anchor_pose = to_pose;
  out.timestamp = b.timestamp;
  if (grid_out) *grid_out = std::move(grid);
  return out;
}

namespace detail {

template <typename T>
nn::TensorT<T> chw_to_rows(const nn::TensorT<T>& t) {
  const int c = t.shape[0], h = t.shape[1], w = t.shape[2];
  nn::TensorT<T> rows({h * w, c});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h * w; ++i)
      rows.data[static_cast<std::size_t>(i) * c + ch] =
          t.data[static_cast<std::size_t>(ch) * h * w + i];
  return rows;
}

template <typename T>
nn::TensorT<T> rows_to_chw(const nn::TensorT<T>& rows, int h, int w) {
  const int c = rows.shape[1];
  nn::TensorT<T> t({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h * w; ++i)
      t.data[static_cast<std::size_t>(ch) * h * w + i] =
          rows.data[static_cast<std::size_t>(i) * c + ch];
  return t;
}

template <typename T>
T clamp_sym(T v, T lim) {
  return v > lim ? lim : (v < -lim ? -lim : v);
}

inline int clamp_int(long v, int lo, int hi) {
  return v < lo ? lo : (v > hi ? hi : static_cast<int>(v));
}

}  // namespace detail

template <typename T>
struct EncodeCtxT {
  struct View {
    nn::TensorT<T> offsets_raw;  // {2*h_pts, l, w}, pre-clamp
    nn::TensorT<T> points;       // {N*h_pts, 2} deformed feature coords
    std::vector<std::uint8_t> valid;
    std::vector<int> key_row, key_col;  // nearest feature cell per token
    nn::TensorT<T> tokens;              // {N*h_pts, d}, invalid rows zeroed
  };
  struct Frame {
    std::array<nn::TensorT<T>, 3> images;
    std::array<nn::TensorT<T>, 3> cam_feat;
    bool first = false;
    geometry::SampleGrid prop_grid;
    nn::TensorT<T> b_prev;        // {d,l,w}
    nn::TensorT<T> t_offsets_raw; // {2,l,w}
    nn::TensorT<T> t_points;      // {N,2}
    std::vector<int> t_key_row, t_key_col;
    nn::TensorT<T> t_tokens;      // {N,d}
    nn::TensorT<T> b_temp;        // {d,l,w}
    std::array<View, 3> views;
    nn::TensorT<T> stacked;       // {3d,l,w}
    nn::TensorT<T> b_out;         // {d,l,w}
  };
  std::vector<Frame> frames;
};

// Single-layer BEV encoder: temporal deformable attention against the
// propagated previous feature, spatial deformable attention over the three
// camera views, per-view offset networks, channel stacking and a fusion
// convolution. The trainable query seeds the first frame.
template <typename T>
class EncoderT {
 public:
  EncoderT(const ModelConfig& cfg, nn::ParamStoreT<T>& params)
      : cfg_(cfg), params_(params) {
    cfg_.validate();
  }

  static void create_params(nn::ParamStoreT<T>& p, const ModelConfig& cfg) {
    const int d = cfg.embed_dim;
    const int l = cfg.grid.cells_l, w = cfg.grid.cells_w;
    const int hp = cfg.points_per_query();
    const int k = cfg.patch_kernel;
    p.create("encoder.query", {d, l, w});
    p.create("encoder.patch.weight", {d, 3, k, k});
    p.create("encoder.patch.bias", {d});
    p.create("encoder.temporal.offset.weight", {2, d, 1, 1});
    p.create("encoder.temporal.offset.bias", {2});
    for (const char* m : {"wq", "wk", "wv", "wo"})
      p.create(std::string("encoder.temporal.") + m, {d, d});
    p.create("encoder.temporal.bias_table", {cfg.heads, 2 * l - 1, 2 * w - 1});
    for (const char* view : kViewNames) {
      p.create(std::string("encoder.spatial.offset.") + view + ".weight", {2 * hp, d, 1, 1});
      p.create(std::string("encoder.spatial.offset.") + view + ".bias", {2 * hp});
    }
    for (const char* m : {"wq", "wk", "wv", "wo"})
      p.create(std::string("encoder.spatial.") + m, {d, d});
    p.create("encoder.spatial.bias_table",
             {cfg.heads, l + cfg.feat_h() - 1, w + cfg.feat_w() - 1});
    p.create("encoder.fusion.weight", {d, 3 * d, 1, 1});
    p.create("encoder.fusion.bias", {d});
  }

  // Kaiming-uniform weights, zero biases; offset networks and bias tables are
  // zero-initialized so deformed points start exactly at the reference points.
  static void init_params(nn::ParamStoreT<T>& p, const ModelConfig& cfg, Rng& rng) {
    const int d = cfg.embed_dim;
    auto kaiming = [&](const std::string& name, int fan_in) {
      const double bound = std::sqrt(6.0 / fan_in);
      for (T& v : p.value(name).data) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    for (T& v : p.value("encoder.query").data) v = static_cast<T>(rng.uniform(-0.1, 0.1));
    kaiming("encoder.patch.weight", 3 * cfg.patch_kernel * cfg.patch_kernel);
    for (const char* m : {"wq", "wk", "wv", "wo"}) kaiming(std::string("encoder.temporal.") + m, d);
    for (const char* m : {"wq", "wk", "wv", "wo"}) kaiming(std::string("encoder.spatial.") + m, d);
    kaiming("encoder.fusion.weight", 3 * d);
  }

  const ModelConfig& config() const { return cfg_; }

  void set_projections(const std::array<geometry::CameraModel, 3>& cams) {
    for (int v = 0; v < 3; ++v) {
      if (cams[v].image_h != cfg_.image_h || cams[v].image_w != cfg_.image_w)
        throw Error("encoder: camera image size does not match the model configuration");
      projections_[v] = geometry::project_bev_points(cfg_.grid, cams[v]);
    }
    have_projections_ = true;
  }

  BevFeatureT<T> encode_window(const std::vector<FrameInputT<T>>& frames,
                               EncodeCtxT<T>* ctx = nullptr) const {
    if (frames.empty()) throw Error("encode_window: empty window");
    if (!have_projections_) throw Error("encode_window: camera projections not set");
    // ties allowed: short windows pad by duplicating the earliest frame
    for (std::size_t i = 1; i < frames.size(); ++i)
      if (frames[i].timestamp < frames[i - 1].timestamp)
        throw Error("encode_window: frames must be time-ordered");

    if (ctx) ctx->frames.clear();
    BevFeatureT<T> b;
    for (std::size_t t = 0; t < frames.size(); ++t) {
      typename EncodeCtxT<T>::Frame frame_ctx;
      frame_ctx.first = t == 0;
      nn::TensorT<T> b_prev;
      if (t == 0) {
        b_prev = params_.value("encoder.query");
      } else {
        BevFeatureT<T> warped =
            propagate(cfg_.grid, b, frames[t].pose, ctx ? &frame_ctx.prop_grid : nullptr);
        b_prev = std::move(warped.tensor);
      }
      nn::TensorT<T> b_out = encode_frame(frames[t], b_prev, ctx ? &frame_ctx : nullptr);
      b.tensor = std::move(b_out);
      b.anchor_pose = frames[t].pose;
      b.timestamp = frames[t].timestamp;
      if (ctx) {
        frame_ctx.b_prev = std::move(b_prev);
        ctx->frames.push_back(std::move(frame_ctx));
      }
    }
    return b;
  }

  // accumulates parameter gradients for d(loss)/d(b_out of the last frame)
  void backward(const nn::TensorT<T>& g_out, const EncodeCtxT<T>& ctx) const {
    if (ctx.frames.empty()) throw Error("encoder backward: empty context");
    nn::TensorT<T> g = g_out;
    for (std::size_t t = ctx.frames.size(); t-- > 0;) {
      nn::TensorT<T> g_bprev = backward_frame(g, ctx.frames[t]);
      if (ctx.frames[t].first) {
        params_.accumulate("encoder.query", g_bprev);
      } else {
        // through the propagation warp, into the previous frame's output
        const auto& grid = ctx.frames[t].prop_grid;
        const int n = grid.rows * grid.cols;
        nn::TensorT<T> pts({n, 2});
        for (int i = 0; i < 2 * n; ++i)
          pts.data[static_cast<std::size_t>(i)] = static_cast<T>(grid.pts[static_cast<std::size_t>(i)]);
        nn::TensorT<T> g_flat = g_bprev.reshaped({g_bprev.shape[0], n});
        auto gs = nn::grid_sample_vjp(ctx.frames[t - 1].b_out, pts, g_flat, false);
        g = std::move(gs.gfeature);
      }
    }
  }

  std::size_t param_count() const { return params_.param_count("encoder."); }

 private:
  nn::TensorT<T> encode_frame(const FrameInputT<T>& input, const nn::TensorT<T>& b_prev,
                              typename EncodeCtxT<T>::Frame* fc) const {
    const int d = cfg_.embed_dim;
    const int l = cfg_.grid.cells_l, w = cfg_.grid.cells_w;
    const int n = l * w;

    // patch projection, shared across views
    std::array<nn::TensorT<T>, 3> cam_feat;
    for (int v = 0; v < 3; ++v) {
      const nn::TensorT<T>& img = input.images[v];
      if (img.ndim() != 3 || img.shape[0] != 3 || img.shape[1] != cfg_.image_h ||
          img.shape[2] != cfg_.image_w)
        throw Error("encode: camera image has wrong shape " + img.shape_str());
      cam_feat[v] = nn::conv2d(img, params_.value("encoder.patch.weight"),
                               params_.value("encoder.patch.bias"), cfg_.patch_kernel, 0);
    }

    // ---- temporal attention: query is the trainable Q, tokens from b_prev
    const nn::TensorT<T>& query = params_.value("encoder.query");
    nn::TensorT<T> t_offsets_raw =
        nn::conv2d(query, params_.value("encoder.temporal.offset.weight"),
                   params_.value("encoder.temporal.offset.bias"), 1, 0);
    nn::TensorT<T> t_points({n, 2});
    std::vector<int> t_key_row(n), t_key_col(n);
    for (int r = 0; r < l; ++r)
      for (int c = 0; c < w; ++c) {
        const int i = r * w + c;
        const T dr = detail::clamp_sym(t_offsets_raw.at3(0, r, c), static_cast<T>(cfg_.offset_clamp));
        const T dc = detail::clamp_sym(t_offsets_raw.at3(1, r, c), static_cast<T>(cfg_.offset_clamp));
        t_points.at2(i, 0) = static_cast<T>(r) + dr;
        t_points.at2(i, 1) = static_cast<T>(c) + dc;
        t_key_row[i] = detail::clamp_int(std::lround(static_cast<double>(t_points.at2(i, 0))), 0, l - 1);
        t_key_col[i] = detail::clamp_int(std::lround(static_cast<double>(t_points.at2(i, 1))), 0, w - 1);
      }
    nn::TensorT<T> t_tokens_chw = nn::grid_sample(b_prev, t_points);  // {d,n}
    nn::TensorT<T> t_tokens = detail::chw_to_rows(t_tokens_chw.reshaped({d, l, w}));

    nn::TensorT<T> q_rows = detail::chw_to_rows(query);
    nn::TensorT<T> q = nn::linear(q_rows, params_.value("encoder.temporal.wq"));
    nn::TensorT<T> k = nn::linear(t_tokens, params_.value("encoder.temporal.wk"));
    nn::TensorT<T> v = nn::linear(t_tokens, params_.value("encoder.temporal.wv"));
    nn::TensorT<T> bias = gather_bias(params_.value("encoder.temporal.bias_table"), l, w,
                                      t_key_row, t_key_col, 2 * w - 1);
    nn::TensorT<T> b_temp_rows = nn::multi_head_attention(
        q, k, v, bias, params_.value("encoder.temporal.wo"), cfg_.heads);
    nn::TensorT<T> b_temp = detail::rows_to_chw(b_temp_rows, l, w);

    // ---- spatial attention per view, then channel stacking + fusion conv
    nn::TensorT<T> b_temp_rows_q = detail::chw_to_rows(b_temp);
    nn::TensorT<T> stacked({3 * d, l, w});
    for (int view = 0; view < 3; ++view) {
      typename EncodeCtxT<T>::View* vc = fc ? &fc->views[view] : nullptr;
      nn::TensorT<T> out_rows =
          spatial_view(view, cam_feat[view], b_temp, b_temp_rows_q, vc);
      nn::TensorT<T> out_chw = detail::rows_to_chw(out_rows, l, w);
      std::copy(out_chw.data.begin(), out_chw.data.end(),
                stacked.data.begin() + static_cast<std::size_t>(view) * d * n);
    }
    nn::TensorT<T> b_out = nn::conv2d(stacked, params_.value("encoder.fusion.weight"),
                                      params_.value("encoder.fusion.bias"), 1, 0);

    if (fc) {
      fc->images = input.images;
      fc->cam_feat = cam_feat;
      fc->t_offsets_raw = std::move(t_offsets_raw);
      fc->t_points = std::move(t_points);
      fc->t_key_row = std::move(t_key_row);
      fc->t_key_col = std::move(t_key_col);
      fc->t_tokens = std::move(t_tokens);
      fc->b_temp = std::move(b_temp);
      fc->stacked = std::move(stacked);
      fc->b_out = b_out;
    }
    return b_out;
  }

  nn::TensorT<T> spatial_view(int view, const nn::TensorT<T>& feat, const nn::TensorT<T>& b_temp,
                              const nn::TensorT<T>& b_temp_rows,
                              typename EncodeCtxT<T>::View* vc) const {
    const int d = cfg_.embed_dim;
    const int l = cfg_.grid.cells_l, w = cfg_.grid.cells_w;
    const int hp = cfg_.points_per_query();
    const int n = l * w;
    const int n_tok = n * hp;
    const int fh = cfg_.feat_h(), fw = cfg_.feat_w();
    const double k_px = cfg_.patch_kernel;
    const std::string prefix = std::string("encoder.spatial.offset.") + kViewNames[view];

    nn::TensorT<T> offsets_raw = nn::conv2d(b_temp, params_.value(prefix + ".weight"),
                                            params_.value(prefix + ".bias"), 1, 0);
    const geometry::ProjectedPoints& proj = projections_[static_cast<std::size_t>(view)];
    nn::TensorT<T> points({n_tok, 2});
    std::vector<std::uint8_t> valid(static_cast<std::size_t>(n_tok));
    std::vector<int> key_row(n_tok), key_col(n_tok);
    for (int r = 0; r < l; ++r)
      for (int c = 0; c < w; ++c)
        for (int j = 0; j < hp; ++j) {
          const int tok = (r * w + c) * hp + j;
          // image pixels -> patch-feature coordinates (pixel centers align)
          const double base_r = (proj.pts[2 * static_cast<std::size_t>(tok)] + 0.5) / k_px - 0.5;
          const double base_c = (proj.pts[2 * static_cast<std::size_t>(tok) + 1] + 0.5) / k_px - 0.5;
          const T dr = detail::clamp_sym(offsets_raw.at3(2 * j, r, c), static_cast<T>(cfg_.offset_clamp));
          const T dc = detail::clamp_sym(offsets_raw.at3(2 * j + 1, r, c), static_cast<T>(cfg_.offset_clamp));
          points.at2(tok, 0) = static_cast<T>(base_r) + dr;
          points.at2(tok, 1) = static_cast<T>(base_c) + dc;
          valid[static_cast<std::size_t>(tok)] = proj.valid[static_cast<std::size_t>(tok)];
          key_row[tok] = detail::clamp_int(std::lround(static_cast<double>(points.at2(tok, 0))), 0, fh - 1);
          key_col[tok] = detail::clamp_int(std::lround(static_cast<double>(points.at2(tok, 1))), 0, fw - 1);
        }

    nn::TensorT<T> tokens_chw = nn::grid_sample(feat, points);  // {d, n_tok}
    nn::TensorT<T> tokens({n_tok, d});
    for (int tok = 0; tok < n_tok; ++tok) {
      if (!valid[static_cast<std::size_t>(tok)]) continue;  // invalid rows stay zero
      for (int ch = 0; ch < d; ++ch)
        tokens.at2(tok, ch) = tokens_chw.at2(ch, tok);
    }

    nn::TensorT<T> q = nn::linear(b_temp_rows, params_.value("encoder.spatial.wq"));
    nn::TensorT<T> k = nn::linear(tokens, params_.value("encoder.spatial.wk"));
    nn::TensorT<T> v = nn::linear(tokens, params_.value("encoder.spatial.wv"));
    nn::TensorT<T> bias = gather_bias(params_.value("encoder.spatial.bias_table"), l, w,
                                      key_row, key_col, w + fw - 1);
    nn::TensorT<T> out = nn::multi_head_attention(q, k, v, bias,
                                                  params_.value("encoder.spatial.wo"), cfg_.heads);
    if (vc) {
      vc->offsets_raw = std::move(offsets_raw);
      vc->points = std::move(points);
      vc->valid = std::move(valid);
      vc->key_row = std::move(key_row);
      vc->key_col = std::move(key_col);
      vc->tokens = std::move(tokens);
    }
    return out;
  }

  // bias[h,i,j] = table[h, key_row[j]-q_row[i]+l-1, key_col[j]-q_col[i]+w-1]
  nn::TensorT<T> gather_bias(const nn::TensorT<T>& table, int l, int w,
                             const std::vector<int>& key_row, const std::vector<int>& key_col,
                             int table_cols) const {
    const int heads = cfg_.heads;
    const int nq = l * w;
    const int nk = static_cast<int>(key_row.size());
    const std::size_t tplane = static_cast<std::size_t>(table.shape[1]) * table.shape[2];
    nn::TensorT<T> bias({heads, nq, nk});
    for (int h = 0; h < heads; ++h) {
      const T* tp = table.data.data() + static_cast<std::size_t>(h) * tplane;
      T* bp = bias.data.data() + static_cast<std::size_t>(h) * nq * nk;
      for (int i = 0; i < nq; ++i) {
        const int qr = i / w, qc = i % w;
        for (int j = 0; j < nk; ++j)
          bp[static_cast<std::size_t>(i) * nk + j] =
              tp[static_cast<std::size_t>(key_row[j] - qr + l - 1) * table_cols +
                 (key_col[j] - qc + w - 1)];
      }
    }
    return bias;
  }

  void scatter_bias_grad(const std::string& table_name, int l, int w,
                         const std::vector<int>& key_row, const std::vector<int>& key_col,
                         int table_cols, const nn::TensorT<T>& gbias) const {
    nn::TensorT<T>& gt = params_.grad(table_name);
    const int heads = cfg_.heads;
    const int nq = l * w;
    const int nk = static_cast<int>(key_row.size());
    const std::size_t tplane = static_cast<std::size_t>(gt.shape[1]) * gt.shape[2];
    for (int h = 0; h < heads; ++h) {
      T* tp = gt.data.data() + static_cast<std::size_t>(h) * tplane;
      const T* bp = gbias.data.data() + static_cast<std::size_t>(h) * nq * nk;
      for (int i = 0; i < nq; ++i) {
        const int qr = i / w, qc = i % w;
        for (int j = 0; j < nk; ++j)
          tp[static_cast<std::size_t>(key_row[j] - qr + l - 1) * table_cols +
             (key_col[j] - qc + w - 1)] += bp[static_cast<std::size_t>(i) * nk + j];
      }
    }
  }

  // gradient of clamp(offsets_raw) given point gradients, laid out as the
  // offset conv output
  nn::TensorT<T> offsets_grad(const nn::TensorT<T>& offsets_raw, const nn::TensorT<T>& gpoints,
                              int pts_per_cell, int l, int w) const {
    nn::TensorT<T> g(offsets_raw.shape);
    const T lim = static_cast<T>(cfg_.offset_clamp);
    for (int r = 0; r < l; ++r)
      for (int c = 0; c < w; ++c)
        for (int j = 0; j < pts_per_cell; ++j) {
          const int tok = (r * w + c) * pts_per_cell + j;
          if (std::abs(offsets_raw.at3(2 * j, r, c)) < lim)
            g.at3(2 * j, r, c) = gpoints.at2(tok, 0);
          if (std::abs(offsets_raw.at3(2 * j + 1, r, c)) < lim)
            g.at3(2 * j + 1, r, c) = gpoints.at2(tok, 1);
        }
    return g;
  }

  // returns the gradient with respect to b_prev
  nn::TensorT<T> backward_frame(const nn::TensorT<T>& g_out,
                                const typename EncodeCtxT<T>::Frame& fc) const {
    const int d = cfg_.embed_dim;
    const int l = cfg_.grid.cells_l, w = cfg_.grid.cells_w;
    const int n = l * w;
    const int hp = cfg_.points_per_query();
    const int fh = cfg_.feat_h(), fw = cfg_.feat_w();

    // fusion conv
    auto fg = nn::conv2d_vjp(fc.stacked, params_.value("encoder.fusion.weight"), g_out, 1, 0, true);
    params_.accumulate("encoder.fusion.weight", fg.gw);
    params_.accumulate("encoder.fusion.bias", fg.gb);

    nn::TensorT<T> g_btemp({d, l, w});
    const nn::TensorT<T> b_temp_rows = detail::chw_to_rows(fc.b_temp);

    for (int view = 0; view < 3; ++view) {
      const auto& vc = fc.views[view];
      const int n_tok = n * hp;
      nn::TensorT<T> g_view({d, l, w});
      std::copy(fg.gx.data.begin() + static_cast<std::size_t>(view) * d * n,
                fg.gx.data.begin() + static_cast<std::size_t>(view + 1) * d * n,
                g_view.data.begin());
      nn::TensorT<T> g_rows = detail::chw_to_rows(g_view);

      // rebuild projections and bias, then attention backward
      nn::TensorT<T> q = nn::linear(b_temp_rows, params_.value("encoder.spatial.wq"));
      nn::TensorT<T> k = nn::linear(vc.tokens, params_.value("encoder.spatial.wk"));
      nn::TensorT<T> v = nn::linear(vc.tokens, params_.value("encoder.spatial.wv"));
      nn::TensorT<T> bias = gather_bias(params_.value("encoder.spatial.bias_table"), l, w,
                                        vc.key_row, vc.key_col, w + fw - 1);
      auto mg = nn::multi_head_attention_vjp(q, k, v, bias, params_.value("encoder.spatial.wo"),
                                             cfg_.heads, g_rows, true);
      params_.accumulate("encoder.spatial.wo", mg.gwo);
      scatter_bias_grad("encoder.spatial.bias_table", l, w, vc.key_row, vc.key_col, w + fw - 1,
                        mg.gbias);

      auto lq = nn::linear_vjp(b_temp_rows, params_.value("encoder.spatial.wq"), mg.gq, false);
      params_.accumulate("encoder.spatial.wq", lq.gw);
      add_rows_to_chw(g_btemp, lq.gx, l, w);
      auto lk = nn::linear_vjp(vc.tokens, params_.value("encoder.spatial.wk"), mg.gk, false);
      params_.accumulate("encoder.spatial.wk", lk.gw);
      auto lv = nn::linear_vjp(vc.tokens, params_.value("encoder.spatial.wv"), mg.gv, false);
      params_.accumulate("encoder.spatial.wv", lv.gw);

      // token gradients through the validity mask, back to feature + points
      nn::TensorT<T> g_tokens_chw({d, n_tok});
      for (int tok = 0; tok < n_tok; ++tok) {
        if (!vc.valid[static_cast<std::size_t>(tok)]) continue;
        for (int ch = 0; ch < d; ++ch)
          g_tokens_chw.at2(ch, tok) = lk.gx.at2(tok, ch) + lv.gx.at2(tok, ch);
      }
      auto gs = nn::grid_sample_vjp(fc.cam_feat[view], vc.points, g_tokens_chw, true);

      nn::TensorT<T> g_off = offsets_grad(vc.offsets_raw, gs.gpoints, hp, l, w);
      const std::string prefix = std::string("encoder.spatial.offset.") + kViewNames[view];
      auto og = nn::conv2d_vjp(fc.b_temp, params_.value(prefix + ".weight"), g_off, 1, 0, true);
      params_.accumulate(prefix + ".weight", og.gw);
      params_.accumulate(prefix + ".bias", og.gb);
      for (std::size_t i = 0; i < g_btemp.data.size(); ++i) g_btemp.data[i] += og.gx.data[i];

      // camera feature -> shared patch projection
      auto pg = nn::conv2d_vjp(fc.images[view], params_.value("encoder.patch.weight"),
                               gs.gfeature, cfg_.patch_kernel, 0, true);
      params_.accumulate("encoder.patch.weight", pg.gw);
      params_.accumulate("encoder.patch.bias", pg.gb);
    }

    // ---- temporal attention backward
    nn::TensorT<T> g_btemp_rows = detail::chw_to_rows(g_btemp);
    const nn::TensorT<T>& query = params_.value("encoder.query");
    nn::TensorT<T> q_rows = detail::chw_to_rows(query);
    nn::TensorT<T> q = nn::linear(q_rows, params_.value("encoder.temporal.wq"));
    nn::TensorT<T> k = nn::linear(fc.t_tokens, params_.value("encoder.temporal.wk"));
    nn::TensorT<T> v = nn::linear(fc.t_tokens, params_.value("encoder.temporal.wv"));
    nn::TensorT<T> bias = gather_bias(params_.value("encoder.temporal.bias_table"), l, w,
                                      fc.t_key_row, fc.t_key_col, 2 * w - 1);
    auto mg = nn::multi_head_attention_vjp(q, k, v, bias, params_.value("encoder.temporal.wo"),
                                           cfg_.heads, g_btemp_rows, true);
    params_.accumulate("encoder.temporal.wo", mg.gwo);
    scatter_bias_grad("encoder.temporal.bias_table", l, w, fc.t_key_row, fc.t_key_col, 2 * w - 1,
                      mg.gbias);

    auto lq = nn::linear_vjp(q_rows, params_.value("encoder.temporal.wq"), mg.gq, false);
    params_.accumulate("encoder.temporal.wq", lq.gw);
    nn::TensorT<T> g_query({d, l, w});
    add_rows_to_chw(g_query, lq.gx, l, w);
    auto lk = nn::linear_vjp(fc.t_tokens, params_.value("encoder.temporal.wk"), mg.gk, false);
    params_.accumulate("encoder.temporal.wk", lk.gw);
    auto lv = nn::linear_vjp(fc.t_tokens, params_.value("encoder.temporal.wv"), mg.gv, false);
    params_.accumulate("encoder.temporal.wv", lv.gw);

    nn::TensorT<T> g_tokens_chw({d, n});
    for (int tok = 0; tok < n; ++tok)
      for (int ch = 0; ch < d; ++ch)
        g_tokens_chw.at2(ch, tok) = lk.gx.at2(tok, ch) + lv.gx.at2(tok, ch);
    auto gs = nn::grid_sample_vjp(fc.b_prev, fc.t_points, g_tokens_chw, true);

    nn::TensorT<T> g_off = offsets_grad(fc.t_offsets_raw, gs.gpoints, 1, l, w);
    auto og = nn::conv2d_vjp(query, params_.value("encoder.temporal.offset.weight"), g_off, 1, 0, true);
    params_.accumulate("encoder.temporal.offset.weight", og.gw);
    params_.accumulate("encoder.temporal.offset.bias", og.gb);
    for (std::size_t i = 0; i < g_query.data.size(); ++i) g_query.data[i] += og.gx.data[i];
    params_.accumulate("encoder.query", g_query);

    return gs.gfeature;  // gradient w.r.t. b_prev
  }

  static void add_rows_to_chw(nn::TensorT<T>& chw, const nn::TensorT<T>& rows, int h, int w) {
    const int c = rows.shape[1];
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h * w; ++i)
        chw.data[static_cast<std::size_t>(ch) * h * w + i] +=
            rows.data[static_cast<std::size_t>(i) * c + ch];
  }

  ModelConfig cfg_;
  nn::ParamStoreT<T>& params_;
  std::array<geometry::ProjectedPoints, 3> projections_;
  bool have_projections_ = false;
};

using Encoder = EncoderT<float>;

}  // namespace bevloc::model
