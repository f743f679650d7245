#pragma once

#include <map>
#include <vector>

#include "bevloc/model.hpp"

namespace bevloc::train {

struct TrainConfig {
  double learning_rate = 4e-5;
  int steps = 500;
  int batch_size = 1;
  std::uint64_t seed = 1;
  enum class Optimizer { kSgd, kMomentum, kAdam } optimizer = Optimizer::kSgd;
  double momentum = 0.9;
  double window_seconds = 5.0;
  int past_frames = 5;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error("TrainConfig: learning rate must be positive");
    if (batch_size < 1) throw Error("TrainConfig: batch size must be >= 1");
  }
};

struct LossResult {
  double value = 0.0;
  nn::Tensor grad;
};

// mean squared error over pixels; gradient 2(r - l)/N
LossResult mse_loss(const nn::Tensor& render, const nn::Tensor& label);

struct TrainSample {
  std::vector<model::FrameInputT<float>> window;
  nn::Tensor label;
};

class Trainer {
 public:
  Trainer(model::BevModel& m, const TrainConfig& cfg);

  // forward, hand-composed backward, one optimizer update; returns the loss
  double train_step(const TrainSample& sample);
  double train_batch(const std::vector<const TrainSample*>& batch);

  // repeated steps on one fixed sample; returns the loss sequence
  std::vector<double> overfit_demo(const TrainSample& sample, int steps);

 private:
  void apply_update(double batch_scale);

  model::BevModel& model_;
  TrainConfig cfg_;
  std::map<std::string, nn::Tensor> velocity_, adam_m_, adam_v_;
  long step_ = 0;
};

}  // namespace bevloc::train
