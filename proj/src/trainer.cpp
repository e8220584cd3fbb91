#include "csta/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "csta/shots.hpp"

namespace csta {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (learning_rate <= 0.0f) throw std::invalid_argument("train: learning rate must be > 0");
  if (weight_decay < 0.0f) throw std::invalid_argument("train: weight decay must be >= 0");
  if (adam_beta1 < 0.0f || adam_beta1 >= 1.0f || adam_beta2 < 0.0f ||
      adam_beta2 >= 1.0f) {
    throw std::invalid_argument("train: adam betas must be in [0, 1)");
  }
  if (adam_eps <= 0.0f) throw std::invalid_argument("train: adam eps must be > 0");
  if (dropout < 0.0f || dropout >= 1.0f) {
    throw std::invalid_argument("train: dropout must be in [0, 1)");
  }
}

void adam_step(const std::vector<NamedParam>& params, OptimizerState& state,
               const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value->data.size(), 0.0f);
      state.v.emplace_back(p.value->data.size(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam: state does not match parameter list");
  }

  for (const auto& p : params) {
    if (p.value->grad.empty()) continue;
    for (float g : p.value->grad) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("adam: non-finite gradient in '" + p.name +
                                 "' at step " + std::to_string(state.step + 1));
      }
    }
  }

  double clip_scale = 1.0;
  if (cfg.grad_clip_norm > 0.0f) {
    double sq = 0.0;
    for (const auto& p : params) {
      for (float g : p.value->grad) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip_norm) clip_scale = cfg.grad_clip_norm / norm;
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.adam_beta1),
                                    static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.adam_beta2),
                                    static_cast<double>(state.step));

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& w = params[pi].value->data;
    auto& grad = params[pi].value->grad;
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    if (grad.empty()) continue;
    for (std::size_t i = 0; i < w.size(); ++i) {
      double g = static_cast<double>(grad[i]) * clip_scale;
      if (!cfg.decoupled_weight_decay) {
        g += static_cast<double>(cfg.weight_decay) * w[i];
      }
      const double mi = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
      const double vi = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double update = cfg.learning_rate * (mi / bc1) /
                      (std::sqrt(vi / bc2) + cfg.adam_eps);
      if (cfg.decoupled_weight_decay) {
        update += static_cast<double>(cfg.learning_rate) * cfg.weight_decay * w[i];
      }
      w[i] = static_cast<float>(w[i] - update);
    }
  }
}

std::vector<double> predicted_summary_mask(const VideoRecord& video,
                                           const std::vector<double>& scores,
                                           double budget_ratio) {
  ShotSegmentation seg;
  if (video.has_change_points) {
    seg.total_frames = video.n_frames;
    seg.change_points = video.change_points;
  } else {
    KtsOptions opt;
    opt.max_changes = std::max(1, video.n_frames / 8);
    opt.penalty = 1.0;
    seg = kts_segment(video.features, video.n_frames, video.dim, opt);
  }
  auto means = shot_scores(scores, seg);
  auto sel = knapsack_select(means, seg.shot_lengths(), video.n_frames,
                             budget_ratio);
  std::vector<double> mask;
  for (auto bit : sel.frame_mask) mask.push_back(bit ? 1.0 : 0.0);
  return mask;
}

std::vector<double> predict_video(const CstaModel& model,
                                  const VideoRecord& video) {
  NoGradGuard ng;
  auto features = tensor({video.n_frames, video.dim}, video.features);
  Rng unused(0);
  auto scores = model.forward(features, /*training=*/false, unused);
  return std::vector<double>(scores->data.begin(), scores->data.end());
}

VideoEval evaluate_model_on_video(const CstaModel& model,
                                  const VideoRecord& video,
                                  double budget_ratio) {
  auto scores = predict_video(model, video);
  if (protocol_for(video.annotation_kind) == EvalProtocol::summary) {
    auto mask = predicted_summary_mask(video, scores, budget_ratio);
    return evaluate_video(mask, video.annotations, video.id);
  }
  return evaluate_video(scores, video.annotations, video.id);
}

namespace {

std::vector<float> mean_annotation(const VideoRecord& video) {
  std::vector<float> target(static_cast<std::size_t>(video.n_frames), 0.0f);
  for (const auto& ann : video.annotations) {
    for (int t = 0; t < video.n_frames; ++t) {
      target[static_cast<std::size_t>(t)] += ann[static_cast<std::size_t>(t)];
    }
  }
  const float inv = 1.0f / static_cast<float>(video.annotations.size());
  for (auto& v : target) v *= inv;
  return target;
}

}  // namespace

TrainResult train_split(CstaModel& model,
                        const std::vector<const VideoRecord*>& train,
                        const std::vector<const VideoRecord*>& test,
                        const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train: empty training set");

  auto params = model.parameters();
  OptimizerState state;
  Rng order_rng(mix_seed(cfg.seed, 0xe9ac8));
  Rng dropout_rng(mix_seed(cfg.seed, 0xd409));

  std::vector<TensorPtr> features;
  std::vector<TensorPtr> targets;
  for (const auto* video : train) {
    features.push_back(tensor({video->n_frames, video->dim}, video->features));
    targets.push_back(tensor({video->n_frames}, mean_annotation(*video)));
  }

  TrainResult result;
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t cursor = 0;
    while (cursor < order.size()) {
      const std::size_t batch_end =
          std::min(cursor + static_cast<std::size_t>(cfg.batch_size), order.size());
      const double batch_n = static_cast<double>(batch_end - cursor);
      for (const auto& p : params) p.value->zero_grad();
      for (std::size_t b = cursor; b < batch_end; ++b) {
        const int vi = order[b];
        auto scores = model.forward(features[static_cast<std::size_t>(vi)],
                                    /*training=*/true, dropout_rng);
        auto loss = mse_loss(scores, targets[static_cast<std::size_t>(vi)]);
        loss_sum += scalar_value(loss);
        backward(batch_n == 1.0 ? loss : scale(loss, 1.0 / batch_n));
      }
      adam_step(params, state, cfg);
      cursor = batch_end;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train.size());

    double tau = 0.0, rho = 0.0;
    int used = 0;
    for (const auto* video : test) {
      const auto eval = evaluate_model_on_video(model, *video);
      if (eval.skipped) continue;
      tau += eval.tau;
      rho += eval.rho;
      ++used;
    }
    stats.test_tau = used ? tau / used : 0.0;
    stats.test_rho = used ? rho / used : 0.0;
    result.curve.push_back(stats);

    const double score = (stats.test_tau + stats.test_rho) / 2.0;
    const double best_score = (result.best_tau + result.best_rho) / 2.0;
    if (result.best_epoch < 0 || score > best_score) {
      result.best_epoch = epoch;
      result.best_tau = stats.test_tau;
      result.best_rho = stats.test_rho;
      result.best_params = model.snapshot();
    }
  }
  return result;
}

std::string epoch_curve_csv(const TrainResult& result) {
  std::ostringstream os;
  os << "epoch,train_loss,test_tau,test_rho,best\n";
  for (const auto& s : result.curve) {
    os << s.epoch << ',' << s.train_loss << ',' << s.test_tau << ','
       << s.test_rho << ',' << (s.epoch == result.best_epoch ? 1 : 0) << "\n";
  }
  return os.str();
}

TrainEvalFn make_csta_train_fn(
    const CstaConfig& model_cfg, const TrainConfig& train_cfg,
    std::function<void(const CstaModel&, const TrainResult&, std::uint64_t)>
        on_fold_done) {
  return [model_cfg, train_cfg, on_fold_done](
             const std::vector<const VideoRecord*>& train,
             const std::vector<const VideoRecord*>& test,
             std::uint64_t seed) -> FoldResult {
    CstaConfig cfg = model_cfg;
    cfg.seed = seed;
    cfg.dropout_rate = train_cfg.dropout;  // the protocol's rate governs
    cfg.backbone.stages.clear();           // re-derive for the fold seed
    CstaModel model(cfg);
    TrainConfig tcfg = train_cfg;
    tcfg.seed = seed;
    auto result = train_split(model, train, test, tcfg);

    model.restore(result.best_params);
    FoldResult fold;
    fold.best_epoch = result.best_epoch;
    for (const auto* video : test) {
      fold.videos.push_back(evaluate_model_on_video(model, *video));
    }
    if (on_fold_done) on_fold_done(model, result, seed);
    return fold;
  };
}

}  // namespace csta
