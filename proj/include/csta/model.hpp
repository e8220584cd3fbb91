#pragma once

// The CSTA network: CLS-augmented three-channel embedding, key/value
// projection, CNN attention map with skip connection, fixed sinusoidal
// positional encoding, dual-axis softmax mixing, and the sigmoid classifier.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "csta/backbone.hpp"
#include "csta/macs.hpp"
#include "csta/tensor.hpp"

namespace csta {

struct CstaConfig {
  int dim = 64;           // feature dimension D (desk-scale default; 1024 works)
  int reduction = 32;     // backbone reduction ratio r
  float dropout_rate = 0.6f;
  float ln_eps = 1e-6f;
  std::uint64_t seed = 0;

  // Ablation switches; defaults are the full model. The disabled variants
  // exist for the direction-sanity benchmark, not as tuned alternatives.
  bool use_softmax = true;   // dual-axis attention weights vs raw maps
  bool use_cls = true;       // learnable CLS row fused by the final pooling
  bool use_pos_enc = true;   // sinusoidal encoding added to attention maps
  bool use_skip = true;      // key-embedding skip + layer norm (attention map)

  BackboneSpec backbone;  // stages empty -> default ladder for (dim, reduction)
};

// Fixed sinusoidal matrix: PE[t, 2i] = sin(t / 10000^(2i/d)),
// PE[t, 2i+1] = cos(t / 10000^(2i/d)). d must be even. Not trainable.
TensorPtr positional_encoding(int t_len, int d);

// mean squared error, (1/T) * sum (pred - target)^2
TensorPtr mse_loss(const TensorPtr& pred, const TensorPtr& target);

class CstaModel {
 public:
  explicit CstaModel(CstaConfig cfg);

  // features: T x D frame representations (leaf, no grad)
  // returns scores in (0,1), shape {T}
  TensorPtr forward(const TensorPtr& features, bool training, Rng& rng) const;

  // pipeline stages, exposed for tests and the stage-by-stage oracles
  TensorPtr embed(const TensorPtr& features) const;  // 3 x S x D, S = T(+1)
  std::pair<TensorPtr, TensorPtr> key_value_embed(const TensorPtr& e) const;
  TensorPtr attention_map(const TensorPtr& ek) const;           // S x D
  TensorPtr add_positional(const TensorPtr& p) const;           // P + PE
  std::pair<TensorPtr, TensorPtr> attention_weights(const TensorPtr& p_pos) const;
  TensorPtr mix(const TensorPtr& p_pos, const TensorPtr& ev, bool training,
                Rng& rng) const;                                // T x D
  TensorPtr classify(const TensorPtr& m, bool training, Rng& rng) const;

  std::vector<NamedParam> parameters() const;
  const CstaConfig& config() const { return cfg_; }
  Backbone& backbone() { return *backbone_; }
  const Backbone& backbone() const { return *backbone_; }
  TensorPtr cls_token() const { return cls_; }

  // layer list for MAC accounting at a given video length
  std::vector<LayerDesc> describe(int frames) const;

  // parameter blob snapshot/restore, aligned with parameters() order
  std::vector<std::vector<float>> snapshot() const;
  void restore(const std::vector<std::vector<float>>& snap);

 private:
  CstaConfig cfg_;
  std::shared_ptr<Backbone> backbone_;
  TensorPtr wk_, wv_;             // D x D projections
  TensorPtr cls_;                 // 3 x 1 x D
  TensorPtr ln_att_g_, ln_att_b_; // attention-map layer norm affine
  TensorPtr fc1_w_, fc1_b_;       // D x D classifier trunk
  TensorPtr ln_clf_g_, ln_clf_b_;
  TensorPtr fc2_w_, fc2_b_;       // D x 1 head
};

// Checkpoint file: magic/version header, serialized config, named row-major
// little-endian float32 parameter payloads.
void save_checkpoint(const std::string& path, const CstaModel& model);
CstaModel load_checkpoint(const std::string& path);

std::string encode_csta_config(const CstaConfig& cfg);
CstaConfig decode_csta_config(const std::string& text);

}  // namespace csta
