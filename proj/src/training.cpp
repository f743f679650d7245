#include "bevloc/training.hpp"

#include <cmath>

namespace bevloc::train {

LossResult mse_loss(const nn::Tensor& render, const nn::Tensor& label) {
  if (!render.same_shape(label))
    throw Error("mse_loss: shape mismatch " + render.shape_str() + " vs " + label.shape_str());
  const std::size_t n = render.numel();
  if (n == 0) throw Error("mse_loss: empty images");
  LossResult r;
  r.grad = nn::Tensor(render.shape);
  double acc = 0.0;
  const float inv_n = 1.0f / static_cast<float>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(render.data[i]) - label.data[i];
    acc += d * d;
    r.grad.data[i] = 2.0f * static_cast<float>(d) * inv_n;
  }
  r.value = acc / static_cast<double>(n);
  return r;
}

Trainer::Trainer(model::BevModel& m, const TrainConfig& cfg) : model_(m), cfg_(cfg) {
  cfg_.validate();
}

double Trainer::train_step(const TrainSample& sample) { return train_batch({&sample}); }

double Trainer::train_batch(const std::vector<const TrainSample*>& batch) {
  if (batch.empty()) throw Error("train_batch: empty batch");
  model_.params().zero_grad();
  double loss_sum = 0.0;
  for (const TrainSample* s : batch) {
    model::EncodeCtxT<float> ectx;
    model::RenderCtxT<float> rctx;
    nn::Tensor img = model_.forward(s->window, true, &ectx, &rctx);
    LossResult loss = mse_loss(img, s->label);
    if (!std::isfinite(loss.value))
      throw Error("train: non-finite loss (step " + std::to_string(step_) +
                  ", window of " + std::to_string(s->window.size()) + " frames)");
    loss_sum += loss.value;
    model_.backward(loss.grad, ectx, rctx);
  }
  apply_update(1.0 / static_cast<double>(batch.size()));
  ++step_;
  return loss_sum / static_cast<double>(batch.size());
}

std::vector<double> Trainer::overfit_demo(const TrainSample& sample, int steps) {
  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) curve.push_back(train_step(sample));
  return curve;
}

void Trainer::apply_update(double batch_scale) {
  const float lr = static_cast<float>(cfg_.learning_rate);
  const float scale = static_cast<float>(batch_scale);
  for (auto& [name, e] : model_.params()) {
    if (!e.trainable) continue;
    switch (cfg_.optimizer) {
      case TrainConfig::Optimizer::kSgd:
        for (std::size_t i = 0; i < e.value.numel(); ++i)
          e.value.data[i] -= lr * scale * e.grad.data[i];
        break;
      case TrainConfig::Optimizer::kMomentum: {
        nn::Tensor& vel = velocity_.try_emplace(name, nn::Tensor(e.value.shape)).first->second;
        const float mu = static_cast<float>(cfg_.momentum);
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
          vel.data[i] = mu * vel.data[i] + scale * e.grad.data[i];
          e.value.data[i] -= lr * vel.data[i];
        }
        break;
      }
      case TrainConfig::Optimizer::kAdam: {
        nn::Tensor& m = adam_m_.try_emplace(name, nn::Tensor(e.value.shape)).first->second;
        nn::Tensor& v = adam_v_.try_emplace(name, nn::Tensor(e.value.shape)).first->second;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double t = static_cast<double>(step_ + 1);
        const double corr1 = 1.0 - std::pow(b1, t);
        const double corr2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
          const double g = static_cast<double>(e.grad.data[i]) * batch_scale;
          m.data[i] = static_cast<float>(b1 * m.data[i] + (1.0 - b1) * g);
          v.data[i] = static_cast<float>(b2 * v.data[i] + (1.0 - b2) * g * g);
          const double mhat = m.data[i] / corr1;
          const double vhat = v.data[i] / corr2;
          e.value.data[i] -= static_cast<float>(cfg_.learning_rate * mhat / (std::sqrt(vhat) + eps));
        }
        break;
      }
    }
  }
}

}  // namespace bevloc::train
