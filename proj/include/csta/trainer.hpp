#pragma once

// Optimization loop: batch-1 Adam over shuffled videos, per-epoch test
// evaluation, best-test-epoch checkpointing.

#include <cstdint>
#include <string>
#include <vector>

#include "csta/dataio.hpp"
#include "csta/metrics.hpp"
#include "csta/model.hpp"

namespace csta {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 1;
  float learning_rate = 1e-3f;
  float weight_decay = 1e-7f;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.999f;
  float adam_eps = 1e-8f;
  float dropout = 0.6f;
  bool decoupled_weight_decay = false;  // default couples wd into the gradient
  float grad_clip_norm = 0.0f;          // <= 0 disables clipping
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument
};

struct OptimizerState {
  std::vector<std::vector<float>> m;  // first moments, aligned with params
  std::vector<std::vector<float>> v;  // second moments
  long long step = 0;
};

// Standard Adam with bias correction. Weight decay is added to the gradient
// (coupled L2) unless decoupled_weight_decay is set. Non-finite gradients
// abort with a diagnostic naming the parameter.
void adam_step(const std::vector<NamedParam>& params, OptimizerState& state,
               const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double test_tau = 0.0;
  double test_rho = 0.0;
};

struct TrainResult {
  std::vector<std::vector<float>> best_params;  // snapshot, parameters() order
  int best_epoch = -1;
  double best_tau = 0.0;
  double best_rho = 0.0;
  std::vector<EpochStats> curve;
};

// Builds the predicted binary summary mask for a video: precomputed change
// points when the record has them, KTS otherwise, then knapsack under the
// budget. Used by the summary evaluation protocol.
std::vector<double> predicted_summary_mask(const VideoRecord& video,
                                           const std::vector<double>& scores,
                                           double budget_ratio = 0.15);

// frame scores (score protocol) or summary mask (summary protocol) for a
// trained model on one video
std::vector<double> predict_video(const CstaModel& model,
                                  const VideoRecord& video);
VideoEval evaluate_model_on_video(const CstaModel& model,
                                  const VideoRecord& video,
                                  double budget_ratio = 0.15);

// Per epoch: seeded shuffle of the training videos, per-video Adam updates
// against the mean annotator vector (MSE), then test evaluation; returns the
// checkpoint of the best test mean(tau, rho). The model is left holding its
// final-epoch parameters; restore best_params for the best one. Dropout is
// applied at the model's configured rate; the adapter below wires
// TrainConfig::dropout into the model it builds.
TrainResult train_split(CstaModel& model,
                        const std::vector<const VideoRecord*>& train,
                        const std::vector<const VideoRecord*>& test,
                        const TrainConfig& cfg);

std::string epoch_curve_csv(const TrainResult& result);

// Adapter wiring train_split into cross_validate: a fresh model per fold
// seeded by the fold seed, trained with `train_cfg`, evaluated at its best
// epoch. `on_fold_done` (optional) receives the trained model and result,
// e.g. to save checkpoints.
TrainEvalFn make_csta_train_fn(
    const CstaConfig& model_cfg, const TrainConfig& train_cfg,
    std::function<void(const CstaModel&, const TrainResult&, std::uint64_t)>
        on_fold_done = nullptr);

}  // namespace csta
