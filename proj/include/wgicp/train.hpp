// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT
//
// Training loop: predicted weights -> soft rejection -> unrolled
// differentiable alignment -> Frobenius pose loss -> Adam.

#ifndef WGICP_TRAIN_HPP
#define WGICP_TRAIN_HPP

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "wgicp/registration.hpp"
#include "wgicp/weights.hpp"

namespace wgicp {

/// One supervised frame pair: align source (frame t) onto target
/// (frame t-1); gt_relative maps source coordinates into the target frame.
/// Clouds must be preprocessed (downsampled, covariances attached).
struct TrainingPair {
  PointCloud target;
  PointCloud source;
  RigidTransform gt_relative;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 1;
  int batch = 1;  // frame pairs per optimizer step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  double rejection_ratio = 0.0;  // inference-time ratio this model targets
  int k_d = 4;
  double knn_temperature = 1.0;
  LmParams lm = LmParams::differentiable_defaults();

  void validate() const {
    if (!(learning_rate >= 0.0)) throw InvalidArgumentError("TrainConfig: learning_rate must be >= 0");
    if (epochs < 0) throw InvalidArgumentError("TrainConfig: epochs must be >= 0");
    if (batch < 1) throw InvalidArgumentError("TrainConfig: batch must be >= 1");
    if (!(rejection_ratio >= 0.0 && rejection_ratio < 1.0)) {
      throw InvalidArgumentError("TrainConfig: rejection_ratio must be in [0, 1)");
    }
    lm.validate();
  }
};

struct TrainResult {
  WeightModel model;
  std::vector<double> loss_history;  // mean pose loss per epoch
};

/// Deterministic given the seed: pairs are visited in dataset order, the
/// only randomness is the model initialization owned by the caller.
inline TrainResult train(const WeightModel& initial, std::span<const TrainingPair> dataset,
                         const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw InvalidArgumentError("train: empty dataset");
  for (const auto& pair : dataset) {
    if (pair.source.covariances.size() != pair.source.size() ||
        pair.target.covariances.size() != pair.target.size()) {
      throw InvalidArgumentError("train: pairs must be preprocessed with covariances");
    }
  }

  TrainResult res;
  res.model = initial;
  const std::size_t np = res.model.params.size();

  std::vector<double> m(np, 0.0), v(np, 0.0), grad(np, 0.0);
  std::vector<KdTree> target_trees;
  target_trees.reserve(dataset.size());
  for (const auto& pair : dataset) target_trees.emplace_back(pair.target);

  LmParams lm = config.lm;
  lm.gate = GateMode::SmoothGated;

  Tape tape;
  std::size_t adam_step = 0;
  std::size_t global_step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t epoch_pairs = 0;

    for (std::size_t start = 0; start < dataset.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t stop = std::min(dataset.size(), start + static_cast<std::size_t>(config.batch));
      tape.clear();
      detail::TapeExec ex{&tape};
      const std::vector<Var> params = tape.inputs(std::span<const double>(res.model.params));

      Var batch_loss = tape.constant(0.0);
      for (std::size_t pi = start; pi < stop; ++pi) {
        const TrainingPair& pair = dataset[pi];
        auto w_src_raw = detail::predict_weights_on(ex, std::span<const Var>(params), pair.source);
        auto w_tgt_raw = detail::predict_weights_on(ex, std::span<const Var>(params), pair.target);
        auto w_src = detail::soft_reject_on(ex, std::span<const Var>(w_src_raw));
        auto w_tgt = detail::soft_reject_on(ex, std::span<const Var>(w_tgt_raw));

        const detail::ProblemConsts<detail::TapeExec> pc(ex, pair.source, pair.target,
                                                         config.k_d, config.knn_temperature);
        auto unrolled = detail::unrolled_wgicp_solve(ex, pc, target_trees[pi],
                                                     std::span<const Var>(w_src),
                                                     std::span<const Var>(w_tgt), lm, {});
        const Var loss = detail::pose_loss_expr(ex, unrolled.R, unrolled.t, pair.gt_relative);
        batch_loss = tape.add(batch_loss, loss);
        epoch_loss += tape.value(loss);
        ++epoch_pairs;
      }
      const Var mean_loss =
          tape.mul(batch_loss, tape.constant(1.0 / static_cast<double>(stop - start)));
      ++global_step;
      if (!std::isfinite(tape.value(mean_loss))) {
        throw DivergedError("train: loss not finite at step " + std::to_string(global_step));
      }

      tape.backward(mean_loss);
      for (std::size_t i = 0; i < np; ++i) grad[i] = tape.adjoint(params[i]);

      ++adam_step;
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(adam_step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(adam_step));
      for (std::size_t i = 0; i < np; ++i) {
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        res.model.params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
      }
    }
    res.loss_history.push_back(epoch_loss / static_cast<double>(epoch_pairs));
  }
  return res;
}

}  // namespace wgicp

#endif  // WGICP_TRAIN_HPP
