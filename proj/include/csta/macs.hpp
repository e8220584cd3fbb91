#pragma once

// Multiply-accumulate accounting over a layer-list network description.
// Only convolutions and linear layers carry MACs; activations, pooling,
// normalization, softmax and elementwise work count zero.

#include <cstdint>
#include <string>
#include <vector>

namespace csta {

enum class Phase { feature_extraction, score_prediction };

enum class LayerKind {
  conv2d,
  linear,
  maxpool2d,
  adaptive_avg_pool2d,
  activation,
  layer_norm,
  softmax,
  dropout,
  elementwise,
  reshape,
};

struct LayerDesc {
  std::string name;
  LayerKind kind = LayerKind::activation;
  Phase phase = Phase::score_prediction;
  // When set, restarts the shape chain at this layer (branch inputs);
  // otherwise the previous layer's output shape is used.
  std::vector<int> input_shape;

  // conv2d
  int out_channels = 0;
  int kernel_h = 0, kernel_w = 0;
  int stride = 1, padding = 0;
  // linear (tokens = input numel / in_features)
  int in_features = 0, out_features = 0;
  // maxpool2d
  int pool_kernel = 0, pool_stride = 0;
  bool ceil_mode = true;
  // adaptive_avg_pool2d
  int target_h = 0, target_w = 0;
  // reshape
  std::vector<int> reshape_to;
};

struct MacLine {
  std::string name;
  LayerKind kind;
  Phase phase;
  std::uint64_t macs = 0;
  std::vector<int> output_shape;
};

struct MacReport {
  std::vector<int> input_shape;
  std::vector<MacLine> lines;
  std::uint64_t total = 0;
  std::uint64_t feature_extraction = 0;  // zero here: features are ingested
  std::uint64_t score_prediction = 0;
};

// Resolves the shape chain layer by layer; throws std::invalid_argument on
// any mismatch (wrong rank, channel/in_features disagreement, bad reshape).
MacReport count_macs(const std::vector<LayerDesc>& network,
                     const std::vector<int>& input_shape);

std::string format_mac_report(const MacReport& report);
std::string mac_report_csv(const MacReport& report);
const char* layer_kind_name(LayerKind kind);

}  // namespace csta
