#include "csta/macs.hpp"

#include <sstream>
#include <stdexcept>

namespace csta {

namespace {

std::uint64_t numel(const std::vector<int>& shape) {
  std::uint64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("count_macs: non-positive dimension");
    n *= static_cast<std::uint64_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += (i ? "x" : "") + std::to_string(shape[i]);
  }
  return s;
}

[[noreturn]] void chain_error(const LayerDesc& layer, const std::string& why) {
  throw std::invalid_argument("count_macs: unresolvable shape chain at '" +
                              layer.name + "': " + why);
}

}  // namespace

MacReport count_macs(const std::vector<LayerDesc>& network,
                     const std::vector<int>& input_shape) {
  MacReport report;
  report.input_shape = input_shape;
  std::vector<int> shape = input_shape;
  numel(shape);

  for (const auto& layer : network) {
    if (!layer.input_shape.empty()) shape = layer.input_shape;
    std::uint64_t macs = 0;

    switch (layer.kind) {
      case LayerKind::conv2d: {
        if (shape.size() != 3) chain_error(layer, "conv2d expects CxHxW");
        const int c = shape[0], h = shape[1], w = shape[2];
        if (layer.out_channels < 1 || layer.kernel_h < 1 || layer.kernel_w < 1) {
          chain_error(layer, "conv2d geometry incomplete");
        }
        if (h + 2 * layer.padding < layer.kernel_h ||
            w + 2 * layer.padding < layer.kernel_w) {
          chain_error(layer, "kernel larger than padded input");
        }
        const int oh = (h + 2 * layer.padding - layer.kernel_h) / layer.stride + 1;
        const int ow = (w + 2 * layer.padding - layer.kernel_w) / layer.stride + 1;
        macs = static_cast<std::uint64_t>(layer.out_channels) * c * layer.kernel_h *
               layer.kernel_w * oh * ow;
        shape = {layer.out_channels, oh, ow};
        break;
      }
      case LayerKind::linear: {
        if (shape.empty() || shape.back() != layer.in_features) {
          chain_error(layer, "linear expects trailing dim " +
                                 std::to_string(layer.in_features) + ", got " +
                                 shape_str(shape));
        }
        const std::uint64_t tokens = numel(shape) / static_cast<std::uint64_t>(layer.in_features);
        macs = tokens * static_cast<std::uint64_t>(layer.in_features) *
               static_cast<std::uint64_t>(layer.out_features);
        shape.back() = layer.out_features;
        break;
      }
      case LayerKind::maxpool2d: {
        if (shape.size() != 3) chain_error(layer, "maxpool2d expects CxHxW");
        auto out_dim = [&layer](int n) {
          if (n <= layer.pool_kernel) return 1;
          const int num = n - layer.pool_kernel;
          const int d = layer.ceil_mode ? (num + layer.pool_stride - 1) / layer.pool_stride
                                        : num / layer.pool_stride;
          return d + 1;
        };
        shape = {shape[0], out_dim(shape[1]), out_dim(shape[2])};
        break;
      }
      case LayerKind::adaptive_avg_pool2d: {
        if (shape.size() != 3) chain_error(layer, "adaptive pool expects CxHxW");
        if (layer.target_h < 1 || layer.target_w < 1) {
          chain_error(layer, "zero-sized pool target");
        }
        shape = {shape[0], layer.target_h, layer.target_w};
        break;
      }
      case LayerKind::reshape: {
        if (numel(layer.reshape_to) != numel(shape)) {
          chain_error(layer, "reshape " + shape_str(shape) + " -> " +
                                 shape_str(layer.reshape_to));
        }
        shape = layer.reshape_to;
        break;
      }
      case LayerKind::activation:
      case LayerKind::layer_norm:
      case LayerKind::softmax:
      case LayerKind::dropout:
      case LayerKind::elementwise:
        break;
    }

    report.lines.push_back({layer.name, layer.kind, layer.phase, macs, shape});
    report.total += macs;
    if (layer.phase == Phase::feature_extraction) {
      report.feature_extraction += macs;
    } else {
      report.score_prediction += macs;
    }
  }
  return report;
}

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::linear: return "linear";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::adaptive_avg_pool2d: return "adaptive_avg_pool2d";
    case LayerKind::activation: return "activation";
    case LayerKind::layer_norm: return "layer_norm";
    case LayerKind::softmax: return "softmax";
    case LayerKind::dropout: return "dropout";
    case LayerKind::elementwise: return "elementwise";
    case LayerKind::reshape: return "reshape";
  }
  return "?";
}

std::string format_mac_report(const MacReport& report) {
  std::ostringstream os;
  os << "input shape: " << shape_str(report.input_shape) << "\n";
  for (const auto& line : report.lines) {
    os << "  " << line.name << " [" << layer_kind_name(line.kind) << "] -> "
       << shape_str(line.output_shape) << " : " << line.macs << " MACs\n";
  }
  os << "feature extraction total: " << report.feature_extraction
     << " MACs (features are ingested precomputed)\n";
  os << "score prediction total:   " << report.score_prediction << " MACs\n";
  os << "total:                    " << report.total << " MACs\n";
  return os.str();
}

std::string mac_report_csv(const MacReport& report) {
  std::ostringstream os;
  os << "layer,kind,phase,macs,output_shape\n";
  for (const auto& line : report.lines) {
    os << line.name << ',' << layer_kind_name(line.kind) << ','
       << (line.phase == Phase::feature_extraction ? "FE" : "SP") << ','
       << line.macs << ',' << shape_str(line.output_shape) << "\n";
  }
  os << "total,,," << report.total << ",\n";
  return os.str();
}

}  // namespace csta
