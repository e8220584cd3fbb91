#include "doctest.h"

#include <cmath>

#include "csta/trainer.hpp"

using namespace csta;

namespace {

TrainConfig quick_config(int epochs, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = seed;
  return cfg;
}

std::vector<const VideoRecord*> pointers(const Dataset& ds, std::size_t from,
                                         std::size_t to) {
  std::vector<const VideoRecord*> out;
  for (std::size_t i = from; i < to; ++i) out.push_back(&ds.videos[i]);
  return out;
}

}  // namespace

TEST_CASE("adam leaves parameters unchanged on zero gradients") {
  auto w = tensor({3}, {0.5f, -0.25f, 1.0f}, true);
  w->ensure_grad();
  std::vector<NamedParam> params = {{"w", w}};
  OptimizerState state;
  TrainConfig cfg;
  cfg.weight_decay = 0.0f;
  adam_step(params, state, cfg);
  CHECK(state.step == 1);
  CHECK(w->data == std::vector<float>{0.5f, -0.25f, 1.0f});
}

TEST_CASE("first adam step matches the closed-form update") {
  const float w0 = 0.8f, g = 0.37f;
  auto w = tensor({1}, {w0}, true);
  w->ensure_grad();
  w->grad[0] = g;
  std::vector<NamedParam> params = {{"w", w}};
  OptimizerState state;
  TrainConfig cfg;
  cfg.weight_decay = 0.0f;
  adam_step(params, state, cfg);
  // bias-corrected m-hat = g, v-hat = g^2
  const double expected = w0 - cfg.learning_rate * g / (std::fabs(g) + cfg.adam_eps);
  CHECK(w->data[0] == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("adam drives a quadratic to its minimum") {
  auto w = tensor({1}, {1.0f}, true);
  std::vector<NamedParam> params = {{"w", w}};
  OptimizerState state;
  TrainConfig cfg;
  cfg.learning_rate = 0.05f;
  cfg.weight_decay = 0.0f;
  for (int step = 0; step < 500; ++step) {
    w->ensure_grad();
    w->grad[0] = 2.0f * w->data[0];
    adam_step(params, state, cfg);
  }
  CHECK(std::fabs(w->data[0]) < 1e-3);
}

TEST_CASE("adam aborts on non-finite gradients with a diagnostic") {
  auto w = tensor({2}, {0.1f, 0.2f}, true);
  w->ensure_grad();
  w->grad[1] = std::numeric_limits<float>::quiet_NaN();
  std::vector<NamedParam> params = {{"broken", w}};
  OptimizerState state;
  TrainConfig cfg;
  try {
    adam_step(params, state, cfg);
    FAIL("expected abort");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("broken") != std::string::npos);
  }
}

TEST_CASE("coupled weight decay shrinks an otherwise gradient-free weight") {
  auto w = tensor({1}, {1.0f}, true);
  std::vector<NamedParam> params = {{"w", w}};
  OptimizerState state;
  TrainConfig cfg;
  cfg.weight_decay = 0.1f;
  cfg.learning_rate = 0.01f;
  for (int step = 0; step < 50; ++step) {
    w->ensure_grad();
    w->zero_grad();
    adam_step(params, state, cfg);
  }
  CHECK(w->data[0] < 1.0f);
  CHECK(w->data[0] > 0.0f);
}

TEST_CASE("config validation rejects bad hyperparameters") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0f;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.dropout = 1.0f;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

namespace {

SyntheticSpec trainer_spec(std::uint64_t seed, float noise) {
  SyntheticSpec spec;
  spec.n_videos = 6;
  spec.t_min = 20;
  spec.t_max = 28;
  spec.dim = 32;
  spec.n_segments = 4;
  spec.n_annotators = 2;
  spec.noise = noise;
  spec.seed = seed;
  return spec;
}

CstaConfig trainer_model_cfg(std::uint64_t seed) {
  CstaConfig cfg;
  cfg.dim = 32;
  cfg.reduction = 4;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("training reduces the loss and records a best epoch") {
  auto ds = gen_synthetic(trainer_spec(3, 0.0f));
  auto train = pointers(ds, 0, 4);
  auto test = pointers(ds, 4, 6);

  CstaModel model(trainer_model_cfg(7));
  auto result = train_split(model, train, test, quick_config(12, 7));

  REQUIRE(result.curve.size() == 12);
  CHECK(result.best_epoch >= 0);
  CHECK(result.curve.back().train_loss < result.curve.front().train_loss);

  // best epoch holds the max mean(tau, rho) over the curve
  double best = -2.0;
  for (const auto& s : result.curve) {
    best = std::max(best, (s.test_tau + s.test_rho) / 2.0);
  }
  CHECK((result.best_tau + result.best_rho) / 2.0 == doctest::Approx(best));

  // restoring the checkpoint reproduces its logged test correlations
  model.restore(result.best_params);
  double tau = 0.0, rho = 0.0;
  int used = 0;
  for (const auto* video : test) {
    auto eval = evaluate_model_on_video(model, *video);
    if (eval.skipped) continue;
    tau += eval.tau;
    rho += eval.rho;
    ++used;
  }
  CHECK(tau / used == doctest::Approx(result.best_tau));
  CHECK(rho / used == doctest::Approx(result.best_rho));

  const auto csv = epoch_curve_csv(result);
  CHECK(csv.find("epoch,train_loss") != std::string::npos);
}

TEST_CASE("noiseless loss is monotone under a 10-epoch moving average") {
  // dropout off isolates the optimization trend from sampling jitter
  auto spec = trainer_spec(23, 0.0f);
  spec.n_videos = 4;
  spec.t_min = 16;
  spec.t_max = 20;
  spec.dim = 16;
  spec.n_segments = 3;
  spec.n_annotators = 1;
  auto ds = gen_synthetic(spec);
  auto train = pointers(ds, 0, 4);

  CstaConfig cfg;
  cfg.dim = 16;
  cfg.reduction = 4;
  cfg.seed = 25;
  cfg.dropout_rate = 0.0f;
  CstaModel model(cfg);
  TrainConfig tcfg = quick_config(40, 27);
  auto result = train_split(model, train, train, tcfg);

  std::vector<double> ma;
  for (std::size_t i = 0; i + 10 <= result.curve.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = i; j < i + 10; ++j) acc += result.curve[j].train_loss;
    ma.push_back(acc / 10.0);
  }
  REQUIRE(ma.size() > 5);
  for (std::size_t i = 1; i < ma.size(); ++i) {
    CHECK(ma[i] <= ma[i - 1]);
  }
}

TEST_CASE("fixed seeds reproduce training bitwise") {
  auto ds = gen_synthetic(trainer_spec(5, 0.05f));
  auto train = pointers(ds, 0, 4);
  auto test = pointers(ds, 4, 6);

  CstaModel m1(trainer_model_cfg(9));
  CstaModel m2(trainer_model_cfg(9));
  auto r1 = train_split(m1, train, test, quick_config(5, 11));
  auto r2 = train_split(m2, train, test, quick_config(5, 11));

  REQUIRE(r1.curve.size() == r2.curve.size());
  for (std::size_t i = 0; i < r1.curve.size(); ++i) {
    CHECK(r1.curve[i].train_loss == r2.curve[i].train_loss);
    CHECK(r1.curve[i].test_tau == r2.curve[i].test_tau);
  }
  CHECK(r1.best_epoch == r2.best_epoch);
  REQUIRE(r1.best_params.size() == r2.best_params.size());
  for (std::size_t i = 0; i < r1.best_params.size(); ++i) {
    CHECK(r1.best_params[i] == r2.best_params[i]);
  }
}

TEST_CASE("summary-protocol evaluation builds masks within budget") {
  auto spec = trainer_spec(13, 0.05f);
  spec.annotation_kind = AnnotationKind::summaries;
  spec.t_min = 36;
  spec.t_max = 44;
  spec.n_segments = 9;
  auto ds = gen_synthetic(spec);

  CstaModel model(trainer_model_cfg(15));
  const auto& video = ds.videos[0];
  auto scores = predict_video(model, video);
  auto mask = predicted_summary_mask(video, scores);
  REQUIRE(mask.size() == static_cast<std::size_t>(video.n_frames));
  int selected = 0;
  for (double v : mask) {
    CHECK((v == 0.0 || v == 1.0));
    selected += v == 1.0 ? 1 : 0;
  }
  CHECK(selected <= static_cast<int>(std::floor(0.15 * video.n_frames)));

  auto eval = evaluate_model_on_video(model, video);
  CHECK_FALSE(eval.id.empty());
}

TEST_CASE("train adapter wires into cross_validate") {
  auto ds = gen_synthetic(trainer_spec(17, 0.0f));
  CrossValidateOptions opt;
  opt.folds = 3;
  opt.repeats = 1;
  opt.seed = 19;

  TrainConfig tcfg = quick_config(3, 0);
  auto report = cross_validate(
      ds, make_csta_train_fn(trainer_model_cfg(0), tcfg), opt);
  REQUIRE(report.results.size() == 3);
  for (const auto& res : report.results) {
    CHECK(res.best_epoch >= 0);
    CHECK(res.videos.size() == 2);
  }

  auto report2 = cross_validate(
      ds, make_csta_train_fn(trainer_model_cfg(0), tcfg), opt);
  CHECK(report.overall_tau == report2.overall_tau);
}
