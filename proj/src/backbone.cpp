#include "csta/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace csta {

namespace {

bool is_power_of_two(int v) { return v >= 1 && (v & (v - 1)) == 0; }

int log2_exact(int v) {
  int k = 0;
  while ((1 << k) < v) ++k;
  return k;
}

}  // namespace

BackboneSpec BackboneSpec::make(int out_channels, int reduction,
                                std::uint64_t seed) {
  BackboneSpec spec;
  spec.out_channels = out_channels;
  spec.reduction = reduction;
  spec.seed = seed;
  if (!is_power_of_two(reduction)) {
    throw std::invalid_argument("backbone: reduction must be a power of two");
  }
  const int pools = log2_exact(reduction);
  if (pools == 0) {
    spec.stages.push_back({out_channels, 3, false});
  } else {
    for (int i = 0; i < pools; ++i) {
      const bool last = (i == pools - 1);
      const int width = last ? out_channels : std::min(32 << i, 128);
      spec.stages.push_back({width, 3, true});
    }
  }
  return spec;
}

void BackboneSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) {
    throw std::invalid_argument("backbone: channel counts must be positive");
  }
  if (!is_power_of_two(reduction)) {
    throw std::invalid_argument("backbone: reduction must be a power of two");
  }
  if (stages.empty()) {
    throw std::invalid_argument("backbone: no stages");
  }
  int stride_product = 1;
  for (const auto& s : stages) {
    if (s.out_channels < 1) {
      throw std::invalid_argument("backbone: stage width must be positive");
    }
    if (s.kernel < 1 || s.kernel % 2 == 0) {
      throw std::invalid_argument("backbone: kernels must be odd for same padding");
    }
    if (s.pool) stride_product *= 2;
  }
  if (stride_product != reduction) {
    throw std::invalid_argument(
        "backbone: stage strides multiply to " + std::to_string(stride_product) +
        ", expected reduction " + std::to_string(reduction));
  }
  if (stages.back().out_channels != out_channels) {
    throw std::invalid_argument("backbone: final stage width must equal out_channels");
  }
}

Backbone::Backbone(BackboneSpec spec) : spec_(std::move(spec)) {
  if (spec_.stages.empty()) {
    BackboneSpec derived =
        BackboneSpec::make(spec_.out_channels, spec_.reduction, spec_.seed);
    derived.in_channels = spec_.in_channels;
    derived.use_bias = spec_.use_bias;
    spec_ = std::move(derived);
  }
  spec_.validate();

  Rng rng(mix_seed(spec_.seed, 0x6261636bULL));
  int in_c = spec_.in_channels;
  for (const auto& st : spec_.stages) {
    Layer layer;
    layer.stage = st;
    layer.in_channels = in_c;
    const int fan_in = in_c * st.kernel * st.kernel;
    const float bound = static_cast<float>(std::sqrt(6.0 / fan_in));
    layer.weight =
        uniform({st.out_channels, in_c, st.kernel, st.kernel}, -bound, bound,
                rng, /*requires_grad=*/true);
    if (spec_.use_bias) {
      layer.bias = zeros({st.out_channels}, /*requires_grad=*/true);
    }
    layers_.push_back(std::move(layer));
    in_c = st.out_channels;
  }
}

TensorPtr Backbone::forward(const TensorPtr& ek) const {
  if (ek->ndim() != 3 || ek->shape[0] != spec_.in_channels) {
    throw std::invalid_argument("backbone: input must be in_channels x H x W");
  }
  TensorPtr x = ek;
  for (const auto& layer : layers_) {
    x = relu(conv2d(x, layer.weight, layer.bias, 1, (layer.stage.kernel - 1) / 2));
    if (layer.stage.pool) x = maxpool2d(x, 2, 2, /*ceil_mode=*/true);
  }
  return x;
}

std::vector<NamedParam> Backbone::parameters(const std::string& prefix) const {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.push_back({prefix + ".s" + std::to_string(i) + ".w", layers_[i].weight});
    if (layers_[i].bias) {
      out.push_back({prefix + ".s" + std::to_string(i) + ".b", layers_[i].bias});
    }
  }
  return out;
}

void Backbone::zero_all_parameters() {
  for (auto& layer : layers_) {
    std::fill(layer.weight->data.begin(), layer.weight->data.end(), 0.0f);
    if (layer.bias) {
      std::fill(layer.bias->data.begin(), layer.bias->data.end(), 0.0f);
    }
  }
}

}  // namespace csta
