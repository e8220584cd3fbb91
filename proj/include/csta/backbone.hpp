#pragma once

// Trainable 2D CNN applied to the stacked frame-feature image. A stage is
// conv (same padding) + relu, optionally followed by a stride-2 ceil-mode
// max pool; the pools multiply up to the reduction ratio r.

#include <cstdint>
#include <string>
#include <vector>

#include "csta/tensor.hpp"

namespace csta {

struct NamedParam {
  std::string name;
  TensorPtr value;
};

struct BackboneStage {
  int out_channels = 0;
  int kernel = 3;     // odd, same-padded
  bool pool = false;  // stride-2 ceil max pool after the conv
};

struct BackboneSpec {
  int in_channels = 3;
  int out_channels = 64;  // must equal the feature dim D
  int reduction = 32;     // power of two; product of stage strides
  bool use_bias = true;
  std::uint64_t seed = 0;
  std::vector<BackboneStage> stages;  // empty -> default ladder for r

  // Default ladder: log2(r) pooled stages with widths 32, 64, 128, 128, ...
  // and the final stage mapping to out_channels. r=1 is a single
  // stride-preserving conv.
  static BackboneSpec make(int out_channels, int reduction,
                           std::uint64_t seed = 0);

  void validate() const;  // throws std::invalid_argument on inconsistency
};

class Backbone {
 public:
  explicit Backbone(BackboneSpec spec);

  // ek: in_channels x H x W -> out_channels x ceil(H/r) x ceil(W/r)
  TensorPtr forward(const TensorPtr& ek) const;

  const BackboneSpec& spec() const { return spec_; }
  std::vector<NamedParam> parameters(const std::string& prefix) const;

  struct Layer {
    BackboneStage stage;
    int in_channels = 0;
    TensorPtr weight;
    TensorPtr bias;  // null when bias-free
  };
  const std::vector<Layer>& layers() const { return layers_; }

  void zero_all_parameters();  // tests force the CNN branch to zero

 private:
  BackboneSpec spec_;
  std::vector<Layer> layers_;
};

}  // namespace csta
