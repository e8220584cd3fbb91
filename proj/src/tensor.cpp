#include "csta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace csta {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t* g_branch_hash = nullptr;

inline void fold_branch(std::uint64_t value) {
  if (g_branch_hash) {
    *g_branch_hash = (*g_branch_hash ^ value) * 0x100000001b3ULL;
  }
}

void check_axis(const Tensor& t, int axis, const char* op) {
  if (axis < 0 || axis >= t.ndim()) {
    throw std::invalid_argument(std::string(op) + ": axis out of range");
  }
}

// result node wired into the graph when recording is on and any parent
// carries grad
TensorPtr make_node(std::vector<int> shape, std::vector<float> data,
                    std::vector<TensorPtr> parents,
                    std::function<void(Tensor&)> backward_fn) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  t->requires_grad = needs;
  if (needs) {
    t->parents = std::move(parents);
    t->backward_fn = std::move(backward_fn);
  }
  return t;
}

}  // namespace

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const double span = static_cast<double>(hi) - static_cast<double>(lo) + 1.0;
  int v = lo + static_cast<int>(uniform() * span);
  return std::min(v, hi);
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

BranchHashScope::BranchHashScope(std::uint64_t* sink) : prev_(g_branch_hash) {
  g_branch_hash = sink;
}
BranchHashScope::~BranchHashScope() { g_branch_hash = prev_; }

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
    n *= d;
  }
  return n;
}

TensorPtr tensor(std::vector<int> shape, std::vector<float> values,
                 bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("tensor: data length does not match shape");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw std::invalid_argument("tensor: non-finite value at index " +
                                  std::to_string(i));
    }
  }
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr zeros(std::vector<int> shape, bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data.assign(static_cast<std::size_t>(n), 0.0f);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr full(std::vector<int> shape, float value, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

TensorPtr scalar(float value) { return tensor({1}, {value}); }

TensorPtr uniform(std::vector<int> shape, float lo, float hi, Rng& rng,
                  bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  for (auto& v : t->data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// ---- conv2d ----

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b,
                 int stride, int padding) {
  if (x->ndim() != 3 || w->ndim() != 4) {
    throw std::invalid_argument("conv2d: expects CxHxW input and OxIxKhxKw kernel");
  }
  const int c_in = x->shape[0], h = x->shape[1], wd = x->shape[2];
  const int c_out = w->shape[0], kh = w->shape[2], kw = w->shape[3];
  if (w->shape[1] != c_in) {
    throw std::invalid_argument("conv2d: kernel channels do not match input");
  }
  if (b && (b->ndim() != 1 || b->shape[0] != c_out)) {
    throw std::invalid_argument("conv2d: bias length does not match out channels");
  }
  if (stride < 1 || padding < 0) {
    throw std::invalid_argument("conv2d: stride must be >=1 and padding >=0");
  }
  if (h + 2 * padding < kh || wd + 2 * padding < kw) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (wd + 2 * padding - kw) / stride + 1;

  std::vector<float> out(static_cast<std::size_t>(c_out) * oh * ow);
  const float* xd = x->data.data();
  const float* wdat = w->data.data();
  for (int oc = 0; oc < c_out; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b ? b->data[static_cast<std::size_t>(oc)] : 0.0;
        const int iy0 = oy * stride - padding;
        const int ix0 = ox * stride - padding;
        for (int ic = 0; ic < c_in; ++ic) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= wd) continue;
              acc += static_cast<double>(xd[(static_cast<std::size_t>(ic) * h + iy) * wd + ix]) *
                     static_cast<double>(wdat[((static_cast<std::size_t>(oc) * c_in + ic) * kh + ky) * kw + kx]);
            }
          }
        }
        out[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] =
            static_cast<float>(acc);
      }
    }
  }

  std::vector<TensorPtr> parents = b ? std::vector<TensorPtr>{x, w, b}
                                     : std::vector<TensorPtr>{x, w};
  auto bw = [c_in, c_out, h, wd, kh, kw, oh, ow, stride, padding,
             has_bias = (b != nullptr)](Tensor& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    const bool gx = px.requires_grad;
    const bool gw = pw.requires_grad;
    if (gx) px.ensure_grad();
    if (gw) pw.ensure_grad();
    Tensor* pb = has_bias ? self.parents[2].get() : nullptr;
    if (pb && pb->requires_grad) {
      pb->ensure_grad();
    } else {
      pb = nullptr;
    }
    const float* g = self.grad.data();
    for (int oc = 0; oc < c_out; ++oc) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const float go = g[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
          if (go == 0.0f) continue;
          if (pb) pb->grad[static_cast<std::size_t>(oc)] += go;
          const int iy0 = oy * stride - padding;
          const int ix0 = ox * stride - padding;
          for (int ic = 0; ic < c_in; ++ic) {
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = iy0 + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ix0 + kx;
                if (ix < 0 || ix >= wd) continue;
                const std::size_t xi = (static_cast<std::size_t>(ic) * h + iy) * wd + ix;
                const std::size_t wi = ((static_cast<std::size_t>(oc) * c_in + ic) * kh + ky) * kw + kx;
                if (gx) px.grad[xi] += go * pw.data[wi];
                if (gw) pw.grad[wi] += go * px.data[xi];
              }
            }
          }
        }
      }
    }
  };
  return make_node({c_out, oh, ow}, std::move(out), std::move(parents),
                   std::move(bw));
}

// ---- maxpool2d ----

TensorPtr maxpool2d(const TensorPtr& x, int k, int stride, bool ceil_mode) {
  if (x->ndim() != 3) throw std::invalid_argument("maxpool2d: expects CxHxW");
  if (k < 1 || stride < 1) {
    throw std::invalid_argument("maxpool2d: kernel and stride must be >=1");
  }
  const int c = x->shape[0], h = x->shape[1], w = x->shape[2];
  auto out_dim = [k, stride, ceil_mode](int n) {
    if (n <= k) return 1;
    const int num = n - k;
    const int d = ceil_mode ? (num + stride - 1) / stride : num / stride;
    return d + 1;
  };
  const int oh = out_dim(h);
  const int ow = out_dim(w);

  std::vector<float> out(static_cast<std::size_t>(c) * oh * ow);
  std::vector<std::int32_t> argmax(out.size());
  const float* xd = x->data.data();
  for (int ci = 0; ci < c; ++ci) {
    for (int oy = 0; oy < oh; ++oy) {
      const int y0 = oy * stride;
      const int y1 = std::min(y0 + k, h);
      for (int ox = 0; ox < ow; ++ox) {
        const int x0 = ox * stride;
        const int x1 = std::min(x0 + k, w);
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t best_idx = -1;
        for (int iy = y0; iy < y1; ++iy) {
          for (int ix = x0; ix < x1; ++ix) {
            const std::size_t idx = (static_cast<std::size_t>(ci) * h + iy) * w + ix;
            if (xd[idx] > best) {  // first max wins ties
              best = xd[idx];
              best_idx = static_cast<std::int32_t>(idx);
            }
          }
        }
        const std::size_t oi = (static_cast<std::size_t>(ci) * oh + oy) * ow + ox;
        out[oi] = best;
        argmax[oi] = best_idx;
        fold_branch(static_cast<std::uint64_t>(best_idx));
      }
    }
  }

  auto bw = [argmax = std::move(argmax)](Tensor& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[static_cast<std::size_t>(argmax[i])] += self.grad[i];
    }
  };
  return make_node({c, oh, ow}, std::move(out), {x}, std::move(bw));
}

// ---- adaptive_avg_pool2d ----

TensorPtr adaptive_avg_pool2d(const TensorPtr& x, int out_h, int out_w) {
  if (x->ndim() != 3) {
    throw std::invalid_argument("adaptive_avg_pool2d: expects CxHxW");
  }
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("adaptive_avg_pool2d: zero-sized target");
  }
  const int c = x->shape[0], h = x->shape[1], w = x->shape[2];
  auto win = [](int i, int in, int out, int& lo, int& hi) {
    lo = static_cast<int>((static_cast<std::int64_t>(i) * in) / out);
    hi = static_cast<int>((static_cast<std::int64_t>(i + 1) * in + out - 1) / out);
  };

  std::vector<float> out(static_cast<std::size_t>(c) * out_h * out_w);
  const float* xd = x->data.data();
  for (int ci = 0; ci < c; ++ci) {
    for (int oy = 0; oy < out_h; ++oy) {
      int y0, y1;
      win(oy, h, out_h, y0, y1);
      for (int ox = 0; ox < out_w; ++ox) {
        int x0, x1;
        win(ox, w, out_w, x0, x1);
        double acc = 0.0;
        for (int iy = y0; iy < y1; ++iy) {
          for (int ix = x0; ix < x1; ++ix) {
            acc += xd[(static_cast<std::size_t>(ci) * h + iy) * w + ix];
          }
        }
        out[(static_cast<std::size_t>(ci) * out_h + oy) * out_w + ox] =
            static_cast<float>(acc / ((y1 - y0) * (x1 - x0)));
      }
    }
  }

  auto bw = [c, h, w, out_h, out_w, win](Tensor& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int ci = 0; ci < c; ++ci) {
      for (int oy = 0; oy < out_h; ++oy) {
        int y0, y1;
        win(oy, h, out_h, y0, y1);
        for (int ox = 0; ox < out_w; ++ox) {
          int x0, x1;
          win(ox, w, out_w, x0, x1);
          const float g =
              self.grad[(static_cast<std::size_t>(ci) * out_h + oy) * out_w + ox] /
              static_cast<float>((y1 - y0) * (x1 - x0));
          for (int iy = y0; iy < y1; ++iy) {
            for (int ix = x0; ix < x1; ++ix) {
              p.grad[(static_cast<std::size_t>(ci) * h + iy) * w + ix] += g;
            }
          }
        }
      }
    }
  };
  return make_node({c, out_h, out_w}, std::move(out), {x}, std::move(bw));
}

// ---- softmax ----

namespace {

// decompose shape around `axis` into outer x len x inner strides
void axis_spans(const std::vector<int>& shape, int axis, std::int64_t& outer,
                std::int64_t& len, std::int64_t& inner) {
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  len = shape[static_cast<std::size_t>(axis)];
  inner = 1;
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) {
    inner *= shape[static_cast<std::size_t>(i)];
  }
}

}  // namespace

TensorPtr softmax(const TensorPtr& x, int axis) {
  check_axis(*x, axis, "softmax");
  std::int64_t outer, len, inner;
  axis_spans(x->shape, axis, outer, len, inner);

  std::vector<float> out(x->data.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      float mx = x->data[static_cast<std::size_t>(base)];
      for (std::int64_t k = 1; k < len; ++k) {
        mx = std::max(mx, x->data[static_cast<std::size_t>(base + k * inner)]);
      }
      double sum = 0.0;
      for (std::int64_t k = 0; k < len; ++k) {
        const double e = std::exp(
            static_cast<double>(x->data[static_cast<std::size_t>(base + k * inner)] - mx));
        out[static_cast<std::size_t>(base + k * inner)] = static_cast<float>(e);
        sum += e;
      }
      for (std::int64_t k = 0; k < len; ++k) {
        out[static_cast<std::size_t>(base + k * inner)] =
            static_cast<float>(out[static_cast<std::size_t>(base + k * inner)] / sum);
      }
    }
  }

  auto bw = [outer, len, inner](Tensor& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = o * len * inner + i;
        double dot = 0.0;
        for (std::int64_t k = 0; k < len; ++k) {
          const std::size_t idx = static_cast<std::size_t>(base + k * inner);
          dot += static_cast<double>(self.grad[idx]) * self.data[idx];
        }
        for (std::int64_t k = 0; k < len; ++k) {
          const std::size_t idx = static_cast<std::size_t>(base + k * inner);
          p.grad[idx] += static_cast<float>(
              self.data[idx] * (static_cast<double>(self.grad[idx]) - dot));
        }
      }
    }
  };
  return make_node(x->shape, std::move(out), {x}, std::move(bw));
}

// ---- layer_norm ----

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, float eps) {
  if (x->ndim() < 1) throw std::invalid_argument("layer_norm: scalar input");
  if (eps <= 0.0f) throw std::invalid_argument("layer_norm: eps must be > 0");
  const int d = x->shape.back();
  if (gamma->numel() != d || beta->numel() != d) {
    throw std::invalid_argument("layer_norm: affine params must have last-axis length");
  }
  const std::int64_t rows = x->numel() / d;

  std::vector<float> out(x->data.size());
  std::vector<float> xhat(x->data.size());
  std::vector<float> inv_std(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* row = x->data.data() + r * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += row[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      const double c = row[i] - mean;
      var += c * c;
    }
    var /= d;
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = static_cast<float>(istd);
    for (int i = 0; i < d; ++i) {
      const float xh = static_cast<float>((row[i] - mean) * istd);
      xhat[static_cast<std::size_t>(r * d + i)] = xh;
      out[static_cast<std::size_t>(r * d + i)] =
          xh * gamma->data[static_cast<std::size_t>(i)] +
          beta->data[static_cast<std::size_t>(i)];
    }
  }

  auto bw = [d, rows, xhat = std::move(xhat),
             inv_std = std::move(inv_std)](Tensor& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    px.ensure_grad();
    pg.ensure_grad();
    pb.ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const std::size_t off = static_cast<std::size_t>(r * d);
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int i = 0; i < d; ++i) {
        const float g = self.grad[off + i];
        pb.grad[static_cast<std::size_t>(i)] += g;
        pg.grad[static_cast<std::size_t>(i)] += g * xhat[off + i];
        const double dxh = static_cast<double>(g) * pg.data[static_cast<std::size_t>(i)];
        sum_dxhat += dxh;
        sum_dxhat_xhat += dxh * xhat[off + i];
      }
      const double istd = inv_std[static_cast<std::size_t>(r)];
      for (int i = 0; i < d; ++i) {
        const double dxh =
            static_cast<double>(self.grad[off + i]) * pg.data[static_cast<std::size_t>(i)];
        px.grad[off + i] += static_cast<float>(
            istd * (dxh - sum_dxhat / d - xhat[off + i] * sum_dxhat_xhat / d));
      }
    }
  };
  return make_node(x->shape, std::move(out), {x, gamma, beta}, std::move(bw));
}

// ---- dropout ----

TensorPtr dropout(const TensorPtr& x, float rate, bool training, Rng& rng) {
  if (rate < 0.0f || rate >= 1.0f) {
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  }
  if (!training || rate == 0.0f) return x;

  const float keep_scale = 1.0f / (1.0f - rate);
  std::vector<float> mask(x->data.size());
  std::vector<float> out(x->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0f : keep_scale;
    out[i] = x->data[i] * mask[i];
  }
  auto bw = [mask = std::move(mask)](Tensor& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[i] += self.grad[i] * mask[i];
    }
  };
  return make_node(x->shape, std::move(out), {x}, std::move(bw));
}

// ---- matmul / linear ----

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->ndim() != 2 || b->ndim() != 2 || a->shape[1] != b->shape[0]) {
    throw std::invalid_argument("matmul: incompatible 2D shapes");
  }
  const int n = a->shape[0], k = a->shape[1], m = b->shape[1];
  std::vector<float> out(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) {
        acc += static_cast<double>(a->data[static_cast<std::size_t>(i) * k + t]) *
               static_cast<double>(b->data[static_cast<std::size_t>(t) * m + j]);
      }
      out[static_cast<std::size_t>(i) * m + j] = static_cast<float>(acc);
    }
  }
  auto bw = [n, k, m](Tensor& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      // dA = G B^T
      for (int i = 0; i < n; ++i) {
        for (int t = 0; t < k; ++t) {
          double acc = 0.0;
          for (int j = 0; j < m; ++j) {
            acc += static_cast<double>(self.grad[static_cast<std::size_t>(i) * m + j]) *
                   static_cast<double>(pb.data[static_cast<std::size_t>(t) * m + j]);
          }
          pa.grad[static_cast<std::size_t>(i) * k + t] += static_cast<float>(acc);
        }
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      // dB = A^T G
      for (int t = 0; t < k; ++t) {
        for (int j = 0; j < m; ++j) {
          double acc = 0.0;
          for (int i = 0; i < n; ++i) {
            acc += static_cast<double>(pa.data[static_cast<std::size_t>(i) * k + t]) *
                   static_cast<double>(self.grad[static_cast<std::size_t>(i) * m + j]);
          }
          pb.grad[static_cast<std::size_t>(t) * m + j] += static_cast<float>(acc);
        }
      }
    }
  };
  return make_node({n, m}, std::move(out), {a, b}, std::move(bw));
}

TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
  if (x->ndim() != 2 || w->ndim() != 2 || x->shape[1] != w->shape[0]) {
    throw std::invalid_argument("linear: incompatible shapes");
  }
  const int n = x->shape[0], in = x->shape[1], out_d = w->shape[1];
  if (b && (b->ndim() != 1 || b->shape[0] != out_d)) {
    throw std::invalid_argument("linear: bias length must match output dim");
  }
  std::vector<float> out(static_cast<std::size_t>(n) * out_d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < out_d; ++j) {
      double acc = b ? b->data[static_cast<std::size_t>(j)] : 0.0;
      for (int t = 0; t < in; ++t) {
        acc += static_cast<double>(x->data[static_cast<std::size_t>(i) * in + t]) *
               static_cast<double>(w->data[static_cast<std::size_t>(t) * out_d + j]);
      }
      out[static_cast<std::size_t>(i) * out_d + j] = static_cast<float>(acc);
    }
  }
  std::vector<TensorPtr> parents = b ? std::vector<TensorPtr>{x, w, b}
                                     : std::vector<TensorPtr>{x, w};
  auto bw = [n, in, out_d, has_bias = (b != nullptr)](Tensor& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    Tensor* pb = has_bias ? self.parents[2].get() : nullptr;
    if (px.requires_grad) {
      px.ensure_grad();
      for (int i = 0; i < n; ++i) {
        for (int t = 0; t < in; ++t) {
          double acc = 0.0;
          for (int j = 0; j < out_d; ++j) {
            acc += static_cast<double>(self.grad[static_cast<std::size_t>(i) * out_d + j]) *
                   static_cast<double>(pw.data[static_cast<std::size_t>(t) * out_d + j]);
          }
          px.grad[static_cast<std::size_t>(i) * in + t] += static_cast<float>(acc);
        }
      }
    }
    if (pw.requires_grad) {
      pw.ensure_grad();
      for (int t = 0; t < in; ++t) {
        for (int j = 0; j < out_d; ++j) {
          double acc = 0.0;
          for (int i = 0; i < n; ++i) {
            acc += static_cast<double>(px.data[static_cast<std::size_t>(i) * in + t]) *
                   static_cast<double>(self.grad[static_cast<std::size_t>(i) * out_d + j]);
          }
          pw.grad[static_cast<std::size_t>(t) * out_d + j] += static_cast<float>(acc);
        }
      }
    }
    if (pb && pb->requires_grad) {
      pb->ensure_grad();
      for (int j = 0; j < out_d; ++j) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
          acc += self.grad[static_cast<std::size_t>(i) * out_d + j];
        }
        pb->grad[static_cast<std::size_t>(j)] += static_cast<float>(acc);
      }
    }
  };
  return make_node({n, out_d}, std::move(out), std::move(parents), std::move(bw));
}

// ---- elementwise ----

TensorPtr relu(const TensorPtr& x) {
  std::vector<float> out(x->data.size());
  std::uint64_t mask_bits = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool on = x->data[i] > 0.0f;
    out[i] = on ? x->data[i] : 0.0f;
    mask_bits = (mask_bits << 1) | static_cast<std::uint64_t>(on);
    if ((i & 63u) == 63u) {
      fold_branch(mask_bits);
      mask_bits = 0;
    }
  }
  fold_branch(mask_bits);
  auto bw = [](Tensor& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (p.data[i] > 0.0f) p.grad[i] += self.grad[i];
    }
  };
  return make_node(x->shape, std::move(out), {x}, std::move(bw));
}

TensorPtr sigmoid(const TensorPtr& x) {
  std::vector<float> out(x->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(x->data[i]))));
  }
  auto bw = [](Tensor& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const float s = self.data[i];
      p.grad[i] += self.grad[i] * s * (1.0f - s);
    }
  };
  return make_node(x->shape, std::move(out), {x}, std::move(bw));
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(*a, *b, "add");
  std::vector<float> out(a->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
  auto bw = [](Tensor& self) {
    // skip non-grad parents (e.g. positional-encoding constants)
    for (int pi = 0; pi < 2; ++pi) {
      auto& p = *self.parents[static_cast<std::size_t>(pi)];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  };
  return make_node(a->shape, std::move(out), {a, b}, std::move(bw));
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(*a, *b, "sub");
  std::vector<float> out(a->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] - b->data[i];
  auto bw = [](Tensor& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  };
  return make_node(a->shape, std::move(out), {a, b}, std::move(bw));
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(*a, *b, "mul");
  std::vector<float> out(a->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
  auto bw = [](Tensor& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        pa.grad[i] += self.grad[i] * pb.data[i];
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        pb.grad[i] += self.grad[i] * pa.data[i];
      }
    }
  };
  return make_node(a->shape, std::move(out), {a, b}, std::move(bw));
}

TensorPtr scale(const TensorPtr& x, double c) {
  std::vector<float> out(x->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(x->data[i] * c);
  }
  auto bw = [c](Tensor& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[i] += static_cast<float>(self.grad[i] * c);
    }
  };
  auto node = make_node(x->shape, std::move(out), {x}, std::move(bw));
  if (x->has_scalar_acc && node->numel() == 1) {
    node->scalar_acc = x->scalar_acc * c;
    node->has_scalar_acc = true;
  }
  return node;
}

TensorPtr concat(const std::vector<TensorPtr>& xs, int axis) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  check_axis(*xs[0], axis, "concat");
  std::vector<int> shape = xs[0]->shape;
  int total = 0;
  for (const auto& x : xs) {
    if (x->ndim() != static_cast<int>(shape.size())) {
      throw std::invalid_argument("concat: rank mismatch");
    }
    for (int i = 0; i < x->ndim(); ++i) {
      if (i != axis && x->shape[static_cast<std::size_t>(i)] != shape[static_cast<std::size_t>(i)]) {
        throw std::invalid_argument("concat: shape mismatch off the concat axis");
      }
    }
    total += x->shape[static_cast<std::size_t>(axis)];
  }
  shape[static_cast<std::size_t>(axis)] = total;

  std::int64_t outer, len, inner;
  axis_spans(shape, axis, outer, len, inner);
  std::vector<float> out(static_cast<std::size_t>(outer * len * inner));
  std::int64_t written = 0;
  std::vector<std::int64_t> offsets;  // start of each part along the axis
  for (const auto& x : xs) {
    offsets.push_back(written);
    const std::int64_t part = x->shape[static_cast<std::size_t>(axis)];
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(x->data.begin() + o * part * inner, part * inner,
                  out.begin() + (o * len + written) * inner);
    }
    written += part;
  }

  auto bw = [outer, len, inner, offsets](Tensor& self) {
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      auto& p = *self.parents[pi];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      const std::int64_t part = static_cast<std::int64_t>(p.grad.size()) / (outer * inner);
      const std::int64_t start = offsets[pi];
      for (std::int64_t o = 0; o < outer; ++o) {
        const float* src = self.grad.data() + (o * len + start) * inner;
        float* dst = p.grad.data() + o * part * inner;
        for (std::int64_t i = 0; i < part * inner; ++i) dst[i] += src[i];
      }
    }
  };
  return make_node(std::move(shape), std::move(out), xs, std::move(bw));
}

TensorPtr select0(const TensorPtr& x, int index) {
  if (x->ndim() < 2) throw std::invalid_argument("select0: needs rank >= 2");
  if (index < 0 || index >= x->shape[0]) {
    throw std::invalid_argument("select0: index out of range");
  }
  std::vector<int> shape(x->shape.begin() + 1, x->shape.end());
  const std::int64_t block = shape_numel(shape);
  std::vector<float> out(x->data.begin() + index * block,
                         x->data.begin() + (index + 1) * block);
  auto bw = [index, block](Tensor& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::int64_t i = 0; i < block; ++i) {
      p.grad[static_cast<std::size_t>(index * block + i)] += self.grad[static_cast<std::size_t>(i)];
    }
  };
  return make_node(std::move(shape), std::move(out), {x}, std::move(bw));
}

TensorPtr transpose2d(const TensorPtr& x) {
  if (x->ndim() != 2) throw std::invalid_argument("transpose2d: expects 2D");
  const int n = x->shape[0], m = x->shape[1];
  std::vector<float> out(x->data.size());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      out[static_cast<std::size_t>(j) * n + i] = x->data[static_cast<std::size_t>(i) * m + j];
    }
  }
  auto bw = [n, m](Tensor& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        p.grad[static_cast<std::size_t>(i) * m + j] += self.grad[static_cast<std::size_t>(j) * n + i];
      }
    }
  };
  return make_node({m, n}, std::move(out), {x}, std::move(bw));
}

TensorPtr reshape(const TensorPtr& x, std::vector<int> new_shape) {
  if (shape_numel(new_shape) != x->numel()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  auto bw = [](Tensor& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  };
  std::vector<float> out = x->data;
  return make_node(std::move(new_shape), std::move(out), {x}, std::move(bw));
}

TensorPtr sum_all(const TensorPtr& x) {
  double acc = 0.0;
  for (float v : x->data) acc += v;
  auto bw = [](Tensor& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    const float g = self.grad[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  };
  auto node = make_node({1}, {static_cast<float>(acc)}, {x}, std::move(bw));
  node->scalar_acc = acc;
  node->has_scalar_acc = true;
  return node;
}

double scalar_value(const TensorPtr& x) {
  if (x->numel() != 1) {
    throw std::invalid_argument("scalar_value: tensor is not scalar");
  }
  return x->has_scalar_acc ? x->scalar_acc : static_cast<double>(x->data[0]);
}

// ---- backward ----

void backward(const TensorPtr& loss) {
  if (loss->numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar");
  }
  // iterative post-order DFS; each node visited once
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> seen;
  std::vector<std::pair<Tensor*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor* p = node->parents[next++].get();
      if (p->backward_fn && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss->ensure_grad();
  loss->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

void zero_grads(const std::vector<TensorPtr>& leaves) {
  for (const auto& t : leaves) t->zero_grad();
}

// ---- grad check ----

double grad_check(const std::function<TensorPtr()>& forward,
                  const std::vector<TensorPtr>& leaves,
                  const GradCheckOptions& opt) {
  zero_grads(leaves);
  TensorPtr loss = forward();
  backward(loss);

  std::vector<std::vector<float>> analytic;
  analytic.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    leaf->ensure_grad();
    analytic.push_back(leaf->grad);
  }

  Rng sampler(opt.sample_seed);
  double max_rel = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = *leaves[li];
    const std::int64_t n = leaf.numel();
    std::vector<std::int64_t> indices;
    if (opt.max_checks_per_leaf < 0 || n <= opt.max_checks_per_leaf) {
      for (std::int64_t i = 0; i < n; ++i) indices.push_back(i);
    } else {
      for (int i = 0; i < opt.max_checks_per_leaf; ++i) {
        indices.push_back(sampler.uniform_int(0, static_cast<int>(n) - 1));
      }
    }
    for (std::int64_t idx : indices) {
      const float saved = leaf.data[static_cast<std::size_t>(idx)];
      bool branch_flip = false;
      auto central = [&](double h) {
        NoGradGuard ng;
        std::uint64_t sig_p = 0, sig_m = 0;
        leaf.data[static_cast<std::size_t>(idx)] = static_cast<float>(saved + h);
        double fp;
        {
          BranchHashScope scope(&sig_p);
          fp = scalar_value(forward());
        }
        leaf.data[static_cast<std::size_t>(idx)] = static_cast<float>(saved - h);
        double fm;
        {
          BranchHashScope scope(&sig_m);
          fm = scalar_value(forward());
        }
        leaf.data[static_cast<std::size_t>(idx)] = saved;
        branch_flip = branch_flip || (sig_p != sig_m);
        return (fp - fm) / (2.0 * h);
      };
      double numeric = central(opt.h);
      if (opt.exclude_kinks) {
        const double half = central(opt.h / 2.0);
        const double spread = std::max(
            {std::fabs(numeric), std::fabs(half), opt.rel_floor});
        if (branch_flip || std::fabs(numeric - half) > opt.kink_tol * spread) {
          if (opt.stats) ++opt.stats->skipped;
          continue;
        }
        numeric = half;
      }
      if (opt.stats) ++opt.stats->checked;
      const double a = analytic[li][static_cast<std::size_t>(idx)];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), opt.rel_floor});
      max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace csta
