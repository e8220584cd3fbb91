#include "doctest.h"

#include <cmath>
#include <vector>

#include "csta/tensor.hpp"

using namespace csta;

namespace {

TensorPtr rand_tensor(std::vector<int> shape, Rng& rng, float lo = -1.0f,
                      float hi = 1.0f, bool requires_grad = true) {
  return uniform(std::move(shape), lo, hi, rng, requires_grad);
}

// values bounded away from 0 so relu kinks stay out of finite-difference range
TensorPtr rand_tensor_nudged(std::vector<int> shape, Rng& rng) {
  auto t = zeros(std::move(shape), true);
  for (auto& v : t->data) {
    const double mag = rng.uniform(0.1, 1.0);
    v = static_cast<float>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

}  // namespace

TEST_CASE("conv2d matches hand examples") {
  // scalar scaling kernel
  auto x = full({1, 3, 3}, 1.0f);
  auto w = tensor({1, 1, 1, 1}, {2.0f}, true);
  auto y = conv2d(x, w, nullptr, 1, 0);
  CHECK(y->shape == std::vector<int>{1, 3, 3});
  for (float v : y->data) CHECK(v == doctest::Approx(2.0f));

  // full-window dot product against an explicit oracle
  auto x2 = tensor({1, 2, 2}, {1, 2, 3, 4});
  auto w2 = full({1, 1, 2, 2}, 1.0f);
  auto y2 = conv2d(x2, w2, nullptr, 1, 0);
  CHECK(y2->shape == std::vector<int>{1, 1, 1});
  double oracle = 0.0;
  for (int i = 0; i < 4; ++i) oracle += x2->data[i] * w2->data[i];
  CHECK(y2->data[0] == doctest::Approx(oracle));

  // Dirac kernel with pad 1 is the identity
  Rng rng(7);
  auto x3 = rand_tensor({1, 4, 5}, rng);
  auto dirac = zeros({1, 1, 3, 3});
  dirac->data[4] = 1.0f;
  auto y3 = conv2d(x3, dirac, nullptr, 1, 1);
  REQUIRE(y3->shape == x3->shape);
  for (std::size_t i = 0; i < x3->data.size(); ++i) {
    CHECK(y3->data[i] == x3->data[i]);
  }
}

TEST_CASE("conv2d output geometry and channel checks") {
  Rng rng(3);
  auto x = rand_tensor({3, 9, 16}, rng);
  auto w = rand_tensor({5, 3, 3, 3}, rng);
  auto y = conv2d(x, w, nullptr, 2, 1);
  CHECK(y->shape == std::vector<int>{5, 5, 8});

  auto wbad = rand_tensor({5, 2, 3, 3}, rng);
  CHECK_THROWS_AS(conv2d(x, wbad, nullptr, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, w, nullptr, 0, 1), std::invalid_argument);
  auto wtall = rand_tensor({1, 3, 11, 3}, rng);
  CHECK_THROWS_AS(conv2d(x, wtall, nullptr, 1, 0), std::invalid_argument);
}

TEST_CASE("adaptive_avg_pool2d window rule") {
  Rng rng(11);
  auto x = rand_tensor({2, 5, 7}, rng);
  auto same = adaptive_avg_pool2d(x, 5, 7);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    CHECK(same->data[i] == x->data[i]);
  }

  const float a = 0.25f, b = -1.5f, c = 2.0f;
  auto col = tensor({1, 3, 1}, {a, b, c});
  auto pooled = adaptive_avg_pool2d(col, 2, 1);
  CHECK(pooled->data[0] == doctest::Approx((a + b) / 2.0));
  CHECK(pooled->data[1] == doctest::Approx((b + c) / 2.0));

  auto ones = full({1, 4, 4}, 1.0f);
  auto gm = adaptive_avg_pool2d(ones, 1, 1);
  CHECK(gm->data[0] == 1.0f);

  CHECK_THROWS_AS(adaptive_avg_pool2d(x, 0, 1), std::invalid_argument);
}

TEST_CASE("adaptive_avg_pool2d global target equals arithmetic mean") {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = rand_tensor({3, 4, 6}, rng);
    auto y = adaptive_avg_pool2d(x, 1, 1);
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int i = 0; i < 24; ++i) acc += x->data[c * 24 + i];
      CHECK(y->data[c] == static_cast<float>(acc / 24.0));
    }
  }
}

TEST_CASE("adaptive_avg_pool2d upsampling windows stay nonempty") {
  Rng rng(13);
  auto x = rand_tensor({2, 3, 2}, rng);
  auto y = adaptive_avg_pool2d(x, 9, 5);
  CHECK(y->shape == std::vector<int>{2, 9, 5});
  for (float v : y->data) CHECK(std::isfinite(v));
}

TEST_CASE("softmax values and normalization") {
  auto x = tensor({3}, {0.0f, 0.0f, 0.0f});
  auto s = softmax(x, 0);
  for (float v : s->data) CHECK(v == doctest::Approx(1.0 / 3.0));

  auto x2 = tensor({2}, {0.0f, std::log(2.0f)});
  auto s2 = softmax(x2, 0);
  CHECK(s2->data[0] == doctest::Approx(1.0 / 3.0));
  CHECK(s2->data[1] == doctest::Approx(2.0 / 3.0));

  // shift invariance
  Rng rng(5);
  auto x3 = rand_tensor({4}, rng, -2.0f, 2.0f, false);
  auto shifted = zeros({4});
  for (int i = 0; i < 4; ++i) shifted->data[i] = x3->data[i] + 7.5f;
  auto s3 = softmax(x3, 0);
  auto s4 = softmax(shifted, 0);
  for (int i = 0; i < 4; ++i) {
    CHECK(s4->data[i] == doctest::Approx(s3->data[i]).epsilon(1e-5));
  }
}

TEST_CASE("softmax slices sum to one along every axis") {
  Rng rng(17);
  auto x = rand_tensor({3, 4, 5}, rng, -3.0f, 3.0f, false);
  for (int axis = 0; axis < 3; ++axis) {
    auto s = softmax(x, axis);
    // walk all slices
    const auto& shp = x->shape;
    int outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shp[i];
    for (int i = axis + 1; i < 3; ++i) inner *= shp[i];
    const int len = shp[axis];
    for (int o = 0; o < outer; ++o) {
      for (int in = 0; in < inner; ++in) {
        double sum = 0.0;
        for (int k = 0; k < len; ++k) {
          const float v = s->data[(o * len + k) * inner + in];
          CHECK(v > 0.0f);
          sum += v;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-6);
      }
    }
  }
  CHECK_THROWS_AS(softmax(x, 3), std::invalid_argument);
}

TEST_CASE("layer_norm closed forms") {
  auto gamma = full({4}, 1.0f, true);
  auto beta = zeros({4}, true);

  auto constant = full({2, 4}, 3.25f);
  auto y = layer_norm(constant, gamma, beta);
  for (float v : y->data) CHECK(v == doctest::Approx(0.0f));

  auto g2 = full({2}, 1.0f);
  auto b2 = zeros({2});
  auto row = tensor({1, 2}, {1.0f, -1.0f});
  auto y2 = layer_norm(row, g2, b2, 1e-6f);
  const double istd = 1.0 / std::sqrt(1.0 + 1e-6);
  CHECK(y2->data[0] == doctest::Approx(istd).epsilon(1e-6));
  CHECK(y2->data[1] == doctest::Approx(-istd).epsilon(1e-6));

  auto g0 = zeros({4});
  auto bb = full({4}, -2.5f);
  Rng rng(9);
  auto x = rand_tensor({3, 4}, rng);
  auto y3 = layer_norm(x, g0, bb);
  for (float v : y3->data) CHECK(v == -2.5f);

  CHECK_THROWS_AS(layer_norm(x, gamma, beta, 0.0f), std::invalid_argument);
}

TEST_CASE("layer_norm standardizes rows") {
  Rng rng(21);
  auto x = rand_tensor({5, 16}, rng, -4.0f, 4.0f, false);
  auto gamma = full({16}, 1.0f);
  auto beta = zeros({16});
  auto y = layer_norm(x, gamma, beta);
  for (int r = 0; r < 5; ++r) {
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < 16; ++i) mean += y->data[r * 16 + i];
    mean /= 16.0;
    for (int i = 0; i < 16; ++i) {
      const double c = y->data[r * 16 + i] - mean;
      var += c * c;
    }
    var /= 16.0;
    CHECK(std::fabs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("dropout semantics") {
  Rng rng(31);
  auto x = rand_tensor({50}, rng, 0.5f, 1.5f, false);

  Rng r0(1);
  auto y0 = dropout(x, 0.0f, true, r0);
  CHECK(y0.get() == x.get());

  Rng r1(1);
  auto y1 = dropout(x, 0.7f, false, r1);
  CHECK(y1.get() == x.get());

  CHECK_THROWS_AS(dropout(x, 1.0f, true, r1), std::invalid_argument);

  // survivor fraction: binomial with p=0.4 over 10k elements, +-3 sigma
  auto big = full({10000}, 1.0f);
  Rng r2(123);
  auto yd = dropout(big, 0.6f, true, r2);
  int survivors = 0;
  for (float v : yd->data) {
    if (v != 0.0f) {
      ++survivors;
      CHECK(v == doctest::Approx(1.0f / 0.4f));
    }
  }
  const double frac = survivors / 10000.0;
  const double sigma = std::sqrt(0.4 * 0.6 / 10000.0);
  CHECK(std::fabs(frac - 0.4) < 3.0 * sigma);

  // deterministic under a fixed seed
  Rng ra(555), rb(555);
  auto da = dropout(x, 0.5f, true, ra);
  auto db = dropout(x, 0.5f, true, rb);
  CHECK(da->data == db->data);
}

TEST_CASE("sum of squares has exact analytic gradient") {
  Rng rng(41);
  auto x = rand_tensor({7}, rng);
  auto loss = sum_all(mul(x, x));
  backward(loss);
  for (int i = 0; i < 7; ++i) {
    CHECK(x->grad[i] == 2.0f * x->data[i]);
  }
}

TEST_CASE("backward visits shared subgraphs once") {
  auto x = tensor({3}, {1.0f, 2.0f, 3.0f}, true);
  auto a = mul(x, x);
  auto b = add(a, a);  // diamond: a feeds b twice
  auto loss = sum_all(b);
  backward(loss);
  for (int i = 0; i < 3; ++i) {
    CHECK(x->grad[i] == doctest::Approx(4.0f * x->data[i]));
  }
  CHECK_THROWS_AS(backward(b), std::invalid_argument);
}

TEST_CASE("grad_check: conv2d -> relu -> sum") {
  // reroll until every pre-activation clears the relu kink by more than the
  // finite-difference step can move it
  Rng rng(51);
  TensorPtr x, w, b;
  float margin = 0.0f;
  for (int attempt = 0; attempt < 200 && margin <= 0.05f; ++attempt) {
    x = rand_tensor_nudged({1, 4, 4}, rng);
    w = rand_tensor({2, 1, 3, 3}, rng, -0.15f, 0.15f);
    b = rand_tensor({2}, rng, 0.6f, 0.9f);
    NoGradGuard ng;
    auto pre = conv2d(x, w, b, 1, 1);
    margin = std::numeric_limits<float>::infinity();
    for (float v : pre->data) margin = std::min(margin, std::fabs(v));
  }
  REQUIRE(margin > 0.05f);
  auto fwd = [&]() { return sum_all(relu(conv2d(x, w, b, 1, 1))); };
  GradCheckOptions opt;
  opt.h = 1e-2;
  opt.rel_floor = 1e-2;
  const double err = grad_check(fwd, {x, w, b}, opt);
  CHECK(err < 1e-3);
}

TEST_CASE("grad_check: softmax -> mse chain") {
  Rng rng(52);
  auto x = rand_tensor({6}, rng, -1.0f, 1.0f);
  auto target = rand_tensor({6}, rng, 0.0f, 1.0f, false);
  auto fwd = [&]() {
    auto d = sub(softmax(x, 0), target);
    return scale(sum_all(mul(d, d)), 1.0 / 6.0);
  };
  GradCheckOptions opt;
  opt.h = 1e-2;
  opt.rel_floor = 1e-2;
  const double err = grad_check(fwd, {x}, opt);
  CHECK(err < 1e-3);
}

TEST_CASE("grad_check: every differentiable op on random instances") {
  // float32 forward values limit the difference quotient to ~1e-5 absolute;
  // a larger step plus the matching floor keeps the check honest: relative
  // 1e-3 for gradients above the floor, absolute 1e-5 below it.
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(1000 + trial);
    GradCheckOptions opt;
    opt.sample_seed = 77 + trial;
    opt.h = 1e-2;
    opt.rel_floor = 1e-2;

    {
      auto x = rand_tensor({2, 5, 4}, rng, -0.8f, 0.8f);
      auto w = rand_tensor({3, 2, 3, 3}, rng, -0.4f, 0.4f);
      auto b = rand_tensor({3}, rng, -0.2f, 0.2f);
      auto fwd = [&]() { return scale(sum_all(conv2d(x, w, b, 2, 1)), 1.0 / 15.0); };
      CHECK(grad_check(fwd, {x, w, b}, opt) < 1e-3);
    }
    {
      // distinct spaced values keep the argmax stable under +-h
      auto x = zeros({1, 4, 4}, true);
      std::vector<float> vals;
      for (int i = 0; i < 16; ++i) vals.push_back(0.1f * static_cast<float>(i));
      rng.shuffle(vals);
      x->data = vals;
      auto fwd = [&]() { return scale(sum_all(maxpool2d(x, 2, 2, true)), 1.0 / 4.0); };
      CHECK(grad_check(fwd, {x}, opt) < 1e-3);
    }
    {
      auto x = rand_tensor({2, 5, 3}, rng);
      auto fwd = [&]() { return scale(sum_all(mul(adaptive_avg_pool2d(x, 3, 2), adaptive_avg_pool2d(x, 3, 2))), 1.0 / 12.0); };
      CHECK(grad_check(fwd, {x}, opt) < 1e-3);
    }
    {
      auto x = rand_tensor({3, 4}, rng, -1.5f, 1.5f);
      auto m = rand_tensor({3, 4}, rng, 0.0f, 1.0f, false);
      for (int axis = 0; axis < 2; ++axis) {
        auto fwd = [&]() { return scale(sum_all(mul(softmax(x, axis), m)), 1.0 / 12.0); };
        CHECK(grad_check(fwd, {x}, opt) < 1e-3);
      }
    }
    {
      auto x = rand_tensor({2, 6}, rng);
      auto gamma = rand_tensor({6}, rng, 0.5f, 1.5f);
      auto beta = rand_tensor({6}, rng, -0.5f, 0.5f);
      auto m = rand_tensor({2, 6}, rng, 0.0f, 1.0f, false);
      auto fwd = [&]() { return scale(sum_all(mul(layer_norm(x, gamma, beta), m)), 1.0 / 12.0); };
      CHECK(grad_check(fwd, {x, gamma, beta}, opt) < 1e-3);
    }
    {
      auto x = rand_tensor({5, 5}, rng);
      const std::uint64_t mask_seed = 900 + trial;
      auto fwd = [&]() {
        Rng mask_rng(mask_seed);  // identical mask on every re-evaluation
        return scale(sum_all(dropout(x, 0.4f, true, mask_rng)), 1.0 / 25.0);
      };
      CHECK(grad_check(fwd, {x}, opt) < 1e-3);
    }
    {
      auto a = rand_tensor({3, 4}, rng);
      auto b = rand_tensor({4, 2}, rng);
      auto fwd = [&]() { return scale(sum_all(mul(matmul(a, b), matmul(a, b))), 1.0 / 6.0); };
      CHECK(grad_check(fwd, {a, b}, opt) < 1e-3);
    }
    {
      auto x = rand_tensor({3, 4}, rng);
      auto w = rand_tensor({4, 2}, rng);
      auto b = rand_tensor({2}, rng);
      auto fwd = [&]() { return scale(sum_all(sigmoid(linear(x, w, b))), 1.0 / 6.0); };
      CHECK(grad_check(fwd, {x, w, b}, opt) < 1e-3);
    }
    {
      auto x = rand_tensor_nudged({4, 3}, rng);
      auto fwd = [&]() { return scale(sum_all(relu(x)), 1.0 / 12.0); };
      CHECK(grad_check(fwd, {x}, opt) < 1e-3);
    }
    {
      auto a = rand_tensor({2, 3}, rng);
      auto b = rand_tensor({2, 3}, rng);
      auto c = rand_tensor({1, 3}, rng);
      auto fwd = [&]() {
        auto cat = concat({a, b, c}, 0);
        auto chain = transpose2d(reshape(sub(cat, scale(cat, 0.25)), {5, 3}));
        return scale(sum_all(mul(chain, chain)), 1.0 / 12.0);
      };
      CHECK(grad_check(fwd, {a, b, c}, opt) < 1e-3);
    }
    {
      auto x = rand_tensor({3, 2, 2}, rng);
      auto fwd = [&]() {
        auto s = select0(x, 1);
        return scale(sum_all(mul(s, s)), 1.0 / 4.0);
      };
      CHECK(grad_check(fwd, {x}, opt) < 1e-3);
    }
  }
}

TEST_CASE("ops are deterministic and inputs validated") {
  Rng rng(61);
  auto x = rand_tensor({2, 3, 3}, rng);
  auto w = rand_tensor({2, 2, 3, 3}, rng);
  auto y1 = conv2d(x, w, nullptr, 1, 1);
  auto y2 = conv2d(x, w, nullptr, 1, 1);
  CHECK(y1->data == y2->data);

  CHECK_THROWS_AS(tensor({2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(
      tensor({2}, {1.0f, std::numeric_limits<float>::infinity()}),
      std::invalid_argument);
  CHECK_THROWS_AS(tensor({0}, {}), std::invalid_argument);
}

TEST_CASE("no-grad guard detaches results") {
  Rng rng(71);
  auto x = rand_tensor({4}, rng);
  {
    NoGradGuard ng;
    auto y = mul(x, x);
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
  }
  auto y2 = mul(x, x);
  CHECK(y2->requires_grad);
}
