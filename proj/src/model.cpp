#include "csta/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace csta {

TensorPtr positional_encoding(int t_len, int d) {
  if (t_len < 1) throw std::invalid_argument("positional_encoding: empty length");
  if (d < 2 || d % 2 != 0) {
    throw std::invalid_argument("positional_encoding: dimension must be even");
  }
  auto pe = zeros({t_len, d});
  for (int t = 0; t < t_len; ++t) {
    for (int i = 0; i < d / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / d);
      pe->data[static_cast<std::size_t>(t) * d + 2 * i] =
          static_cast<float>(std::sin(t * freq));
      pe->data[static_cast<std::size_t>(t) * d + 2 * i + 1] =
          static_cast<float>(std::cos(t * freq));
    }
  }
  return pe;
}

TensorPtr mse_loss(const TensorPtr& pred, const TensorPtr& target) {
  if (pred->numel() != target->numel()) {
    throw std::invalid_argument("mse_loss: length mismatch");
  }
  auto p = pred->ndim() == 1 ? pred : reshape(pred, {static_cast<int>(pred->numel())});
  auto t = target->ndim() == 1 ? target : reshape(target, {static_cast<int>(target->numel())});
  auto d = sub(p, t);
  return scale(sum_all(mul(d, d)), 1.0 / static_cast<double>(pred->numel()));
}

CstaModel::CstaModel(CstaConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.dim < 2 || cfg_.dim % 2 != 0) {
    throw std::invalid_argument("csta: dim must be even and >= 2");
  }
  if (cfg_.backbone.stages.empty()) {
    cfg_.backbone = BackboneSpec::make(cfg_.dim, cfg_.reduction,
                                       mix_seed(cfg_.seed, 1));
  }
  if (cfg_.backbone.out_channels != cfg_.dim) {
    throw std::invalid_argument("csta: backbone out_channels must equal dim");
  }
  backbone_ = std::make_shared<Backbone>(cfg_.backbone);

  Rng rng(mix_seed(cfg_.seed, 2));
  const int d = cfg_.dim;
  const float kv_bound = static_cast<float>(1.0 / std::sqrt(d));
  wk_ = uniform({d, d}, -kv_bound, kv_bound, rng, true);
  wv_ = uniform({d, d}, -kv_bound, kv_bound, rng, true);
  cls_ = uniform({3, 1, d}, -kv_bound, kv_bound, rng, true);

  auto xavier = [&rng](int fan_in, int fan_out) {
    const float bound = static_cast<float>(std::sqrt(6.0 / (fan_in + fan_out)));
    return uniform({fan_in, fan_out}, -bound, bound, rng, true);
  };
  fc1_w_ = xavier(d, d);
  fc1_b_ = zeros({d}, true);
  fc2_w_ = xavier(d, 1);
  fc2_b_ = zeros({1}, true);

  ln_att_g_ = full({d}, 1.0f, true);
  ln_att_b_ = zeros({d}, true);
  ln_clf_g_ = full({d}, 1.0f, true);
  ln_clf_b_ = zeros({d}, true);
}

TensorPtr CstaModel::embed(const TensorPtr& features) const {
  if (features->ndim() != 2 || features->shape[1] != cfg_.dim) {
    throw std::invalid_argument("csta: features must be T x dim");
  }
  const int t = features->shape[0];
  auto x1 = reshape(features, {1, t, cfg_.dim});
  auto x3 = concat({x1, x1, x1}, 0);  // replicate to three channels
  if (!cfg_.use_cls) return x3;
  return concat({cls_, x3}, 1);  // CLS row leads the frame rows
}

std::pair<TensorPtr, TensorPtr> CstaModel::key_value_embed(const TensorPtr& e) const {
  const int s = e->shape[1], d = e->shape[2];
  auto flat = reshape(e, {3 * s, d});
  auto ek = reshape(matmul(flat, wk_), {3, s, d});
  auto ev = matmul(select0(e, 0), wv_);  // single channel carries the values
  return {ek, ev};
}

TensorPtr CstaModel::attention_map(const TensorPtr& ek) const {
  const int s = ek->shape[1], d = ek->shape[2];
  auto cnn = backbone_->forward(ek);               // D x ceil(S/r) x ceil(D/r)
  auto pooled = adaptive_avg_pool2d(cnn, s, 1);    // D x S x 1
  auto map = transpose2d(reshape(pooled, {d, s})); // S x D
  if (!cfg_.use_skip) return map;
  auto sum = add(map, select0(ek, 0));
  return layer_norm(sum, ln_att_g_, ln_att_b_, cfg_.ln_eps);
}

TensorPtr CstaModel::add_positional(const TensorPtr& p) const {
  if (!cfg_.use_pos_enc) return p;
  return add(p, positional_encoding(p->shape[0], p->shape[1]));
}

std::pair<TensorPtr, TensorPtr> CstaModel::attention_weights(
    const TensorPtr& p_pos) const {
  return {softmax(p_pos, 0), softmax(p_pos, 1)};
}

TensorPtr CstaModel::mix(const TensorPtr& p_pos, const TensorPtr& ev,
                         bool training, Rng& rng) const {
  const int s = p_pos->shape[0], d = p_pos->shape[1];
  const int t = cfg_.use_cls ? s - 1 : s;
  TensorPtr m;
  if (cfg_.use_softmax) {
    auto [att_t, att_d] = attention_weights(p_pos);
    att_t = dropout(att_t, cfg_.dropout_rate, training, rng);
    att_d = dropout(att_d, cfg_.dropout_rate, training, rng);
    m = add(mul(att_t, ev), mul(att_d, ev));
  } else {
    m = mul(dropout(p_pos, cfg_.dropout_rate, training, rng), ev);
  }
  // fold the CLS row into the frames by average pooling S -> T rows
  auto pooled = adaptive_avg_pool2d(reshape(m, {1, s, d}), t, d);
  return reshape(pooled, {t, d});
}

TensorPtr CstaModel::classify(const TensorPtr& m, bool training, Rng& rng) const {
  auto h = relu(linear(m, fc1_w_, fc1_b_));
  h = dropout(h, cfg_.dropout_rate, training, rng);
  h = layer_norm(h, ln_clf_g_, ln_clf_b_, cfg_.ln_eps);
  return sigmoid(linear(h, fc2_w_, fc2_b_));  // T x 1
}

TensorPtr CstaModel::forward(const TensorPtr& features, bool training,
                             Rng& rng) const {
  const int t = features->shape[0];
  auto e = embed(features);
  auto [ek, ev] = key_value_embed(e);
  auto p = attention_map(ek);
  auto p_pos = add_positional(p);
  auto m = mix(p_pos, ev, training, rng);
  auto scores = classify(m, training, rng);
  return reshape(scores, {t});
}

std::vector<NamedParam> CstaModel::parameters() const {
  std::vector<NamedParam> out = {
      {"wk", wk_},       {"wv", wv_},
      {"fc1.w", fc1_w_}, {"fc1.b", fc1_b_},
      {"fc2.w", fc2_w_}, {"fc2.b", fc2_b_},
      {"ln_clf.g", ln_clf_g_}, {"ln_clf.b", ln_clf_b_},
  };
  if (cfg_.use_cls) out.push_back({"cls", cls_});
  if (cfg_.use_skip) {
    out.push_back({"ln_att.g", ln_att_g_});
    out.push_back({"ln_att.b", ln_att_b_});
  }
  for (auto& p : backbone_->parameters("backbone")) out.push_back(std::move(p));
  return out;
}

std::vector<LayerDesc> CstaModel::describe(int frames) const {
  if (frames < 1) throw std::invalid_argument("describe: frames must be >= 1");
  const int d = cfg_.dim;
  const int s = cfg_.use_cls ? frames + 1 : frames;
  std::vector<LayerDesc> net;

  LayerDesc key;
  key.name = "key_embed";
  key.kind = LayerKind::linear;
  key.input_shape = {3 * s, d};
  key.in_features = d;
  key.out_features = d;
  net.push_back(key);

  LayerDesc value = key;
  value.name = "value_embed";
  value.input_shape = {s, d};
  net.push_back(value);

  bool first = true;
  int in_c = cfg_.backbone.in_channels;
  for (std::size_t i = 0; i < backbone_->layers().size(); ++i) {
    const auto& layer = backbone_->layers()[i];
    LayerDesc conv;
    conv.name = "backbone.s" + std::to_string(i) + ".conv";
    conv.kind = LayerKind::conv2d;
    if (first) {
      conv.input_shape = {in_c, s, d};
      first = false;
    }
    conv.out_channels = layer.stage.out_channels;
    conv.kernel_h = conv.kernel_w = layer.stage.kernel;
    conv.stride = 1;
    conv.padding = (layer.stage.kernel - 1) / 2;
    net.push_back(conv);
    LayerDesc act;
    act.name = conv.name + ".relu";
    act.kind = LayerKind::activation;
    net.push_back(act);
    if (layer.stage.pool) {
      LayerDesc pool;
      pool.name = "backbone.s" + std::to_string(i) + ".pool";
      pool.kind = LayerKind::maxpool2d;
      pool.pool_kernel = 2;
      pool.pool_stride = 2;
      net.push_back(pool);
    }
  }

  LayerDesc attpool;
  attpool.name = "attention.pool";
  attpool.kind = LayerKind::adaptive_avg_pool2d;
  attpool.target_h = s;
  attpool.target_w = 1;
  net.push_back(attpool);

  if (cfg_.use_skip) {
    LayerDesc ln;
    ln.name = "attention.layer_norm";
    ln.kind = LayerKind::layer_norm;
    ln.input_shape = {s, d};
    net.push_back(ln);
  }

  if (cfg_.use_softmax) {
    LayerDesc sm;
    sm.name = "mixing.softmax_td";
    sm.kind = LayerKind::softmax;
    sm.input_shape = {s, d};
    net.push_back(sm);
  }
  LayerDesc mixel;
  mixel.name = "mixing.elementwise";
  mixel.kind = LayerKind::elementwise;
  mixel.input_shape = {s, d};
  net.push_back(mixel);
  LayerDesc mixpool;
  mixpool.name = "mixing.pool";
  mixpool.kind = LayerKind::adaptive_avg_pool2d;
  mixpool.input_shape = {1, s, d};
  mixpool.target_h = frames;
  mixpool.target_w = d;
  net.push_back(mixpool);
  LayerDesc squeeze;
  squeeze.name = "mixing.squeeze";
  squeeze.kind = LayerKind::reshape;
  squeeze.reshape_to = {frames, d};
  net.push_back(squeeze);

  LayerDesc fc1;
  fc1.name = "classifier.fc1";
  fc1.kind = LayerKind::linear;
  fc1.in_features = d;
  fc1.out_features = d;
  net.push_back(fc1);
  LayerDesc ln2;
  ln2.name = "classifier.layer_norm";
  ln2.kind = LayerKind::layer_norm;
  net.push_back(ln2);
  LayerDesc fc2;
  fc2.name = "classifier.fc2";
  fc2.kind = LayerKind::linear;
  fc2.in_features = d;
  fc2.out_features = 1;
  net.push_back(fc2);

  return net;
}

std::vector<std::vector<float>> CstaModel::snapshot() const {
  std::vector<std::vector<float>> snap;
  for (const auto& p : parameters()) snap.push_back(p.value->data);
  return snap;
}

void CstaModel::restore(const std::vector<std::vector<float>>& snap) {
  auto params = parameters();
  if (snap.size() != params.size()) {
    throw std::invalid_argument("restore: parameter count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (snap[i].size() != params[i].value->data.size()) {
      throw std::invalid_argument("restore: shape mismatch at " + params[i].name);
    }
    params[i].value->data = snap[i];
  }
}

// ---- config text form (used by checkpoints and the CLI) ----

std::string encode_csta_config(const CstaConfig& cfg) {
  std::ostringstream os;
  os << "dim=" << cfg.dim << "\n";
  os << "reduction=" << cfg.reduction << "\n";
  os << "dropout=" << cfg.dropout_rate << "\n";
  os << "ln_eps=" << cfg.ln_eps << "\n";
  os << "seed=" << cfg.seed << "\n";
  os << "use_softmax=" << (cfg.use_softmax ? 1 : 0) << "\n";
  os << "use_cls=" << (cfg.use_cls ? 1 : 0) << "\n";
  os << "use_pos_enc=" << (cfg.use_pos_enc ? 1 : 0) << "\n";
  os << "use_skip=" << (cfg.use_skip ? 1 : 0) << "\n";
  os << "backbone.in_channels=" << cfg.backbone.in_channels << "\n";
  os << "backbone.use_bias=" << (cfg.backbone.use_bias ? 1 : 0) << "\n";
  os << "backbone.seed=" << cfg.backbone.seed << "\n";
  os << "backbone.stages=";
  for (std::size_t i = 0; i < cfg.backbone.stages.size(); ++i) {
    const auto& s = cfg.backbone.stages[i];
    os << (i ? "," : "") << s.out_channels << ":" << s.kernel << ":"
       << (s.pool ? 1 : 0);
  }
  os << "\n";
  return os.str();
}

CstaConfig decode_csta_config(const std::string& text) {
  CstaConfig cfg;
  cfg.backbone.stages.clear();
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "dim") cfg.dim = std::stoi(val);
    else if (key == "reduction") cfg.reduction = std::stoi(val);
    else if (key == "dropout") cfg.dropout_rate = std::stof(val);
    else if (key == "ln_eps") cfg.ln_eps = std::stof(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "use_softmax") cfg.use_softmax = val != "0";
    else if (key == "use_cls") cfg.use_cls = val != "0";
    else if (key == "use_pos_enc") cfg.use_pos_enc = val != "0";
    else if (key == "use_skip") cfg.use_skip = val != "0";
    else if (key == "backbone.in_channels") cfg.backbone.in_channels = std::stoi(val);
    else if (key == "backbone.use_bias") cfg.backbone.use_bias = val != "0";
    else if (key == "backbone.seed") cfg.backbone.seed = std::stoull(val);
    else if (key == "backbone.stages" && !val.empty()) {
      std::istringstream ss(val);
      std::string item;
      while (std::getline(ss, item, ',')) {
        BackboneStage st;
        int pool = 0;
        if (std::sscanf(item.c_str(), "%d:%d:%d", &st.out_channels, &st.kernel,
                        &pool) != 3) {
          throw std::invalid_argument("config: malformed backbone stage '" + item + "'");
        }
        st.pool = pool != 0;
        cfg.backbone.stages.push_back(st);
      }
    }
  }
  cfg.backbone.out_channels = cfg.dim;
  cfg.backbone.reduction = cfg.reduction;
  return cfg;
}

// ---- checkpoint io ----

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x41545343;  // "CSTA"
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char buf[4];
  is.read(reinterpret_cast<char*>(buf), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  return static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
         (static_cast<std::uint32_t>(buf[2]) << 16) |
         (static_cast<std::uint32_t>(buf[3]) << 24);
}

void write_f32_le(std::ostream& os, const std::vector<float>& values) {
  for (float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
  }
}

void read_f32_le(std::istream& is, std::vector<float>& values) {
  for (auto& v : values) {
    const std::uint32_t bits = read_u32(is);
    std::memcpy(&v, &bits, 4);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const CstaModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for write");
  write_u32(os, kCheckpointMagic);
  write_u32(os, kCheckpointVersion);
  const std::string cfg = encode_csta_config(model.config());
  write_u32(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  const auto params = model.parameters();
  write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    write_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(os, static_cast<std::uint32_t>(p.value->shape.size()));
    for (int d : p.value->shape) write_u32(os, static_cast<std::uint32_t>(d));
    write_f32_le(os, p.value->data);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

CstaModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  if (read_u32(is) != kCheckpointMagic) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = read_u32(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  }
  const std::uint32_t cfg_len = read_u32(is);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), cfg_len);
  if (!is) throw std::runtime_error("checkpoint: truncated config");

  CstaModel model(decode_csta_config(cfg_text));
  auto params = model.parameters();
  const std::uint32_t count = read_u32(is);
  if (count != params.size()) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t ndim = read_u32(is);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u32(is));
    if (name != params[i].name || shape != params[i].value->shape) {
      throw std::runtime_error("checkpoint: tensor '" + name +
                               "' does not match model layout");
    }
    read_f32_le(is, params[i].value->data);
    if (!is) throw std::runtime_error("checkpoint: truncated payload at " + name);
  }
  return model;
}

}  // namespace csta
