#include "doctest.h"

#include <cmath>

#include "csta/model.hpp"

using namespace csta;

namespace {

TensorPtr find_param(const CstaModel& model, const std::string& name) {
  for (const auto& p : model.parameters()) {
    if (p.name == name) return p.value;
  }
  REQUIRE_MESSAGE(false, ("missing parameter " + name).c_str());
  return nullptr;
}

CstaConfig tiny_config(int dim = 16, int reduction = 4, std::uint64_t seed = 1) {
  CstaConfig cfg;
  cfg.dim = dim;
  cfg.reduction = reduction;
  cfg.seed = seed;
  return cfg;
}

TensorPtr rand_features(int t, int d, std::uint64_t seed) {
  Rng rng(seed);
  return uniform({t, d}, -1.0f, 1.0f, rng);
}

}  // namespace

TEST_CASE("embed replicates channels behind the CLS row") {
  CstaModel model(tiny_config(4, 1, 3));
  auto x = tensor({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto e = model.embed(x);
  REQUIRE(e->shape == std::vector<int>{3, 3, 4});
  auto cls = model.cls_token();
  for (int c = 0; c < 3; ++c) {
    for (int j = 0; j < 4; ++j) {
      CHECK(e->data[(c * 3 + 0) * 4 + j] == cls->data[c * 4 + j]);
      CHECK(e->data[(c * 3 + 1) * 4 + j] == x->data[0 * 4 + j]);
      CHECK(e->data[(c * 3 + 2) * 4 + j] == x->data[1 * 4 + j]);
    }
  }
}

TEST_CASE("embed of zeros with a zero CLS token is zero") {
  CstaModel model(tiny_config(8, 1, 4));
  auto cls = model.cls_token();
  std::fill(cls->data.begin(), cls->data.end(), 0.0f);
  auto e = model.embed(zeros({5, 8}));
  for (float v : e->data) CHECK(v == 0.0f);
}

TEST_CASE("embed replication invariant on random input") {
  CstaModel model(tiny_config(16, 4, 5));
  auto x = rand_features(9, 16, 6);
  auto e = model.embed(x);
  const int s = 10, d = 16;
  for (int row = 1; row < s; ++row) {
    for (int j = 0; j < d; ++j) {
      const float v0 = e->data[(0 * s + row) * d + j];
      CHECK(e->data[(1 * s + row) * d + j] == v0);
      CHECK(e->data[(2 * s + row) * d + j] == v0);
    }
  }
  CHECK_THROWS_AS(model.embed(zeros({3, 8})), std::invalid_argument);
}

TEST_CASE("key_value_embed identity and zero projections") {
  CstaModel model(tiny_config(4, 1, 7));
  auto wk = find_param(model, "wk");
  auto wv = find_param(model, "wv");
  std::fill(wk->data.begin(), wk->data.end(), 0.0f);
  std::fill(wv->data.begin(), wv->data.end(), 0.0f);
  for (int i = 0; i < 4; ++i) wk->data[i * 4 + i] = 1.0f;

  auto e = model.embed(rand_features(3, 4, 8));
  auto [ek, ev] = model.key_value_embed(e);
  CHECK(ek->shape == e->shape);
  for (std::size_t i = 0; i < e->data.size(); ++i) {
    CHECK(ek->data[i] == doctest::Approx(e->data[i]));
  }
  for (float v : ev->data) CHECK(v == 0.0f);
}

TEST_CASE("key_value_embed matches an explicit matmul oracle") {
  CstaModel model(tiny_config(8, 1, 9));
  auto x = rand_features(4, 8, 10);
  auto e = model.embed(x);
  auto [ek, ev] = model.key_value_embed(e);
  auto wk = find_param(model, "wk");
  auto wv = find_param(model, "wv");

  const int s = 5, d = 8;
  for (int c = 0; c < 3; ++c) {
    for (int row = 0; row < s; ++row) {
      for (int j = 0; j < d; ++j) {
        double acc = 0.0;
        for (int t = 0; t < d; ++t) {
          acc += static_cast<double>(e->data[(c * s + row) * d + t]) *
                 static_cast<double>(wk->data[t * d + j]);
        }
        CHECK(ek->data[(c * s + row) * d + j] == doctest::Approx(acc).epsilon(1e-5));
      }
    }
  }
  for (int row = 0; row < s; ++row) {
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int t = 0; t < d; ++t) {
        acc += static_cast<double>(e->data[(0 * s + row) * d + t]) *
               static_cast<double>(wv->data[t * d + j]);
      }
      CHECK(ev->data[row * d + j] == doctest::Approx(acc).epsilon(1e-5));
    }
  }
}

TEST_CASE("attention_map with a zeroed backbone reduces to LayerNorm(ek[0])") {
  CstaModel model(tiny_config(16, 4, 11));
  model.backbone().zero_all_parameters();
  auto e = model.embed(rand_features(6, 16, 12));
  auto [ek, ev] = model.key_value_embed(e);
  (void)ev;
  auto p = model.attention_map(ek);
  auto expected = layer_norm(select0(ek, 0), find_param(model, "ln_att.g"),
                             find_param(model, "ln_att.b"), 1e-6f);
  REQUIRE(p->shape == expected->shape);
  for (std::size_t i = 0; i < p->data.size(); ++i) {
    CHECK(p->data[i] == doctest::Approx(expected->data[i]).epsilon(1e-5));
  }
}

TEST_CASE("attention_map shape contract across lengths") {
  CstaModel model(tiny_config(16, 4, 13));
  for (int t : {1, 7, 50}) {
    auto e = model.embed(rand_features(t, 16, 14 + t));
    auto [ek, ev] = model.key_value_embed(e);
    (void)ev;
    auto p = model.attention_map(ek);
    CHECK(p->shape == std::vector<int>{t + 1, 16});
  }
}

TEST_CASE("attention_map equals its five-stage manual composition") {
  CstaModel model(tiny_config(16, 4, 15));
  auto e = model.embed(rand_features(9, 16, 16));
  auto [ek, ev] = model.key_value_embed(e);
  (void)ev;
  auto got = model.attention_map(ek);

  auto cnn = model.backbone().forward(ek);
  auto pooled = adaptive_avg_pool2d(cnn, 10, 1);
  auto map = transpose2d(reshape(pooled, {16, 10}));
  auto sum = add(map, select0(ek, 0));
  auto expected = layer_norm(sum, find_param(model, "ln_att.g"),
                             find_param(model, "ln_att.b"), 1e-6f);
  REQUIRE(got->shape == expected->shape);
  CHECK(got->data == expected->data);
}

TEST_CASE("positional encoding closed forms") {
  auto pe = positional_encoding(8, 6);
  for (int j = 0; j < 6; ++j) {
    CHECK(pe->data[j] == (j % 2 == 0 ? 0.0f : 1.0f));  // sin 0 / cos 0
  }
  for (float v : pe->data) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(pe->data[1 * 6 + 0] == doctest::Approx(0.8414709848).epsilon(1e-6));
  CHECK_THROWS_AS(positional_encoding(4, 5), std::invalid_argument);
}

TEST_CASE("uniform attention weights from a constant map") {
  CstaModel model(tiny_config(8, 1, 17));
  const int s = 5, d = 8;
  auto p_pos = full({s, d}, 0.37f);
  auto [att_t, att_d] = model.attention_weights(p_pos);
  for (float v : att_t->data) CHECK(v == doctest::Approx(1.0 / s).epsilon(1e-6));
  for (float v : att_d->data) CHECK(v == doctest::Approx(1.0 / d).epsilon(1e-6));
}

TEST_CASE("mixing normalization identity: sum of M is D + S for all-ones values") {
  CstaModel model(tiny_config(8, 1, 18));
  const int s = 7, d = 8;
  Rng rng(19);
  auto p_pos = uniform({s, d}, -2.0f, 2.0f, rng);
  auto ones = full({s, d}, 1.0f);
  auto [att_t, att_d] = model.attention_weights(p_pos);
  auto m = add(mul(att_t, ones), mul(att_d, ones));
  const double total = scalar_value(sum_all(m));
  CHECK(total == doctest::Approx(static_cast<double>(d + s)).epsilon(1e-5));
}

TEST_CASE("mix pools 3 rows to 2 with half-overlap windows") {
  CstaConfig cfg = tiny_config(6, 1, 20);
  CstaModel model(cfg);
  const int s = 3, d = 6;
  Rng rng(21);
  auto p_pos = uniform({s, d}, -1.0f, 1.0f, rng);
  auto ev = uniform({s, d}, -1.0f, 1.0f, rng);
  Rng drop_rng(0);
  auto got = model.mix(p_pos, ev, /*training=*/false, drop_rng);
  REQUIRE(got->shape == std::vector<int>{2, d});

  auto [att_t, att_d] = model.attention_weights(p_pos);
  auto m = add(mul(att_t, ev), mul(att_d, ev));
  for (int j = 0; j < d; ++j) {
    const float r0 = (m->data[0 * d + j] + m->data[1 * d + j]) / 2.0f;
    const float r1 = (m->data[1 * d + j] + m->data[2 * d + j]) / 2.0f;
    CHECK(got->data[0 * d + j] == doctest::Approx(r0).epsilon(1e-6));
    CHECK(got->data[1 * d + j] == doctest::Approx(r1).epsilon(1e-6));
  }
}

TEST_CASE("attention weight normalization holds on random inputs") {
  CstaModel model(tiny_config(16, 4, 22));
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const int s = rng.uniform_int(2, 12);
    auto p_pos = uniform({s, 16}, -3.0f, 3.0f, rng);
    auto [att_t, att_d] = model.attention_weights(p_pos);
    for (int j = 0; j < 16; ++j) {
      double col = 0.0;
      for (int i = 0; i < s; ++i) col += att_t->data[i * 16 + j];
      CHECK(std::fabs(col - 1.0) < 1e-5);
    }
    for (int i = 0; i < s; ++i) {
      double row = 0.0;
      for (int j = 0; j < 16; ++j) row += att_d->data[i * 16 + j];
      CHECK(std::fabs(row - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("classifier with a zero head predicts 0.5 everywhere") {
  CstaModel model(tiny_config(8, 1, 24));
  auto fc2w = find_param(model, "fc2.w");
  auto fc2b = find_param(model, "fc2.b");
  std::fill(fc2w->data.begin(), fc2w->data.end(), 0.0f);
  std::fill(fc2b->data.begin(), fc2b->data.end(), 0.0f);
  Rng rng(25);
  auto m = uniform({6, 8}, -1.0f, 1.0f, rng);
  Rng drop(0);
  auto s = model.classify(m, false, drop);
  for (float v : s->data) CHECK(v == 0.5f);
}

TEST_CASE("classifier equals manual layer composition and stays in (0,1)") {
  CstaModel model(tiny_config(8, 1, 26));
  Rng rng(27);
  auto m = uniform({5, 8}, -2.0f, 2.0f, rng);
  Rng drop(0);
  auto got = model.classify(m, false, drop);

  auto h = relu(linear(m, find_param(model, "fc1.w"), find_param(model, "fc1.b")));
  h = layer_norm(h, find_param(model, "ln_clf.g"), find_param(model, "ln_clf.b"), 1e-6f);
  auto expected = sigmoid(linear(h, find_param(model, "fc2.w"), find_param(model, "fc2.b")));
  CHECK(got->data == expected->data);
  for (float v : got->data) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
}

TEST_CASE("forward is deterministic in inference and sized by T") {
  CstaModel model(tiny_config(16, 4, 28));
  for (int t : {1, 13, 100}) {
    auto x = rand_features(t, 16, 29 + t);
    Rng r1(0), r2(0);
    auto s1 = model.forward(x, false, r1);
    auto s2 = model.forward(x, false, r2);
    CHECK(s1->shape == std::vector<int>{t});
    CHECK(s1->data == s2->data);
    for (float v : s1->data) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
  }
}

TEST_CASE("training dropout is seed-deterministic") {
  CstaModel model(tiny_config(16, 4, 30));
  auto x = rand_features(12, 16, 31);
  Rng r1(77), r2(77), r3(78);
  auto a = model.forward(x, true, r1);
  auto b = model.forward(x, true, r2);
  auto c = model.forward(x, true, r3);
  CHECK(a->data == b->data);
  bool all_same = true;
  for (std::size_t i = 0; i < a->data.size(); ++i) {
    all_same = all_same && a->data[i] == c->data[i];
  }
  CHECK_FALSE(all_same);
}

TEST_CASE("every parameter group receives gradient on a generic input") {
  CstaModel model(tiny_config(16, 4, 32));
  auto x = rand_features(9, 16, 33);
  Rng rng(0);
  auto scores = model.forward(x, false, rng);
  auto target = full({9}, 0.9f);
  auto loss = mse_loss(scores, target);
  backward(loss);
  for (const auto& p : model.parameters()) {
    bool any = false;
    REQUIRE(!p.value->grad.empty());
    for (float g : p.value->grad) any = any || (g != 0.0f);
    CHECK_MESSAGE(any, p.name);
  }
}

TEST_CASE("mse_loss values and gradient") {
  auto a = tensor({2}, {1.0f, 0.0f}, true);
  auto b = tensor({2}, {0.0f, 0.0f});
  CHECK(scalar_value(mse_loss(a, a)) == doctest::Approx(0.0));
  CHECK(scalar_value(mse_loss(a, b)) == doctest::Approx(0.5));
  CHECK_THROWS_AS(mse_loss(a, zeros({3})), std::invalid_argument);

  Rng rng(34);
  auto pred = uniform({10}, 0.1f, 0.9f, rng, true);
  auto target = uniform({10}, 0.0f, 1.0f, rng);
  auto fwd = [&]() { return mse_loss(pred, target); };
  CHECK(grad_check(fwd, {pred}) < 1e-3);
}

TEST_CASE("end-to-end gradient check on the tiny model") {
  CstaModel model(tiny_config(16, 4, 35));
  auto x = rand_features(5, 16, 36);
  auto target = full({5}, 0.7f);
  auto fwd = [&]() {
    Rng rng(0);
    return mse_loss(model.forward(x, false, rng), target);
  };
  std::vector<TensorPtr> leaves;
  for (const auto& p : model.parameters()) leaves.push_back(p.value);
  GradCheckOptions opt;
  opt.h = 5e-3;
  opt.rel_floor = 1e-2;
  opt.max_checks_per_leaf = 6;
  opt.sample_seed = 37;
  opt.exclude_kinks = true;
  GradCheckStats stats;
  opt.stats = &stats;
  const double err = grad_check(fwd, leaves, opt);
  CHECK(err < 1e-2);
  CHECK(stats.checked >= 50);
}

TEST_CASE("ablation variants change the pipeline shape rules") {
  CstaConfig cfg = tiny_config(16, 4, 38);
  cfg.use_cls = false;
  cfg.use_softmax = false;
  cfg.use_pos_enc = false;
  cfg.use_skip = false;
  CstaModel model(cfg);
  auto x = rand_features(7, 16, 39);
  auto e = model.embed(x);
  CHECK(e->shape == std::vector<int>{3, 7, 16});
  Rng rng(0);
  auto s = model.forward(x, false, rng);
  CHECK(s->shape == std::vector<int>{7});
  for (const auto& p : model.parameters()) {
    CHECK(p.name != "cls");
    CHECK(p.name.find("ln_att") == std::string::npos);
  }
}

TEST_CASE("checkpoint round-trips config and parameters") {
  CstaConfig cfg = tiny_config(16, 4, 40);
  cfg.dropout_rate = 0.35f;
  CstaModel model(cfg);
  auto x = rand_features(6, 16, 41);
  Rng r0(0);
  auto before = model.forward(x, false, r0);

  const std::string path = "test_model_ckpt.bin";
  save_checkpoint(path, model);
  CstaModel loaded = load_checkpoint(path);
  CHECK(loaded.config().dropout_rate == doctest::Approx(0.35f));
  CHECK(loaded.config().dim == 16);

  Rng r1(0);
  auto after = loaded.forward(x, false, r1);
  CHECK(before->data == after->data);
  std::remove(path.c_str());

  CHECK_THROWS(load_checkpoint("does_not_exist.ckpt"));
}
