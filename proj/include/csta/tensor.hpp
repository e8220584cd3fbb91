#pragma once

// Dense float32 tensors with reverse-mode autodiff. Values are immutable
// once created; every op returns a fresh node. Reductions (matmul, conv,
// pooling, normalization) accumulate in double and round once on store.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace csta {

// Deterministic RNG: mt19937_64 core with hand-rolled distributions so
// streams are reproducible across standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller, one spare cached
  double normal();

  // inclusive bounds
  int uniform_int(int lo, int hi);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(uniform_int(0, i))]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64-style combiner for deriving independent stream seeds
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

class Tensor : public std::enable_shared_from_this<Tensor> {
 public:
  std::vector<int> shape;
  std::vector<float> data;   // row-major
  std::vector<float> grad;   // allocated on demand, same length as data
  bool requires_grad = false;

  // Scalar reductions keep their 64-bit accumulator here (data[0] is the
  // rounded float). Finite-difference checks and loss logging read it.
  double scalar_acc = 0.0;
  bool has_scalar_acc = false;

  // autodiff graph wiring; empty for leaves and detached results
  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backward_fn;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
  }
};

// Thread-local gradient recording switch; eval paths wrap themselves in
// NoGradGuard so forward passes do not retain graphs.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

std::int64_t shape_numel(const std::vector<int>& shape);

// Factories. `tensor` validates that every value is finite and throws
// std::invalid_argument otherwise; ops preserve finiteness from there.
TensorPtr tensor(std::vector<int> shape, std::vector<float> values,
                 bool requires_grad = false);
TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
TensorPtr full(std::vector<int> shape, float value, bool requires_grad = false);
TensorPtr scalar(float value);
TensorPtr uniform(std::vector<int> shape, float lo, float hi, Rng& rng,
                  bool requires_grad = false);

// ---- primitive ops (all differentiable) ----

// x: C_in x H x W, w: C_out x C_in x kh x kw, b: C_out or nullptr.
// Zero padding, cross-correlation semantics, output floor((H+2p-kh)/s)+1.
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b,
                 int stride, int padding);

// x: C x H x W, kernel k, stride s. ceil_mode keeps partial end windows so
// spatial dims never collapse below 1; windows are clipped to the input.
TensorPtr maxpool2d(const TensorPtr& x, int k, int stride, bool ceil_mode);

// x: C x H x W -> C x out_h x out_w. Window rule: rows
// [floor(i*H/out_h), ceil((i+1)*H/out_h)) and same for columns; works for
// both down- and up-sampling targets.
TensorPtr adaptive_avg_pool2d(const TensorPtr& x, int out_h, int out_w);

// numerically stabilized (max subtraction) along `axis`
TensorPtr softmax(const TensorPtr& x, int axis);

// normalization over the last axis; gamma/beta have that axis' length
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, float eps = 1e-6f);

// Inverted dropout: training keeps elements with prob 1-rate and scales by
// 1/(1-rate); inference is the identity. 0 <= rate < 1.
TensorPtr dropout(const TensorPtr& x, float rate, bool training, Rng& rng);

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);  // (n,k)x(k,m)
TensorPtr linear(const TensorPtr& x, const TensorPtr& w,
                 const TensorPtr& b);  // x:(n,in) w:(in,out) b:(out) or null
TensorPtr relu(const TensorPtr& x);    // grad at 0 is 0
TensorPtr sigmoid(const TensorPtr& x);
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& x, double c);
TensorPtr concat(const std::vector<TensorPtr>& xs, int axis);
TensorPtr select0(const TensorPtr& x, int index);  // drop leading axis
TensorPtr transpose2d(const TensorPtr& x);
TensorPtr reshape(const TensorPtr& x, std::vector<int> new_shape);
TensorPtr sum_all(const TensorPtr& x);  // scalar, carries scalar_acc

// scalar_acc of a scalar tensor, falling back to the float value
double scalar_value(const TensorPtr& x);

// Reverse-mode sweep from a scalar loss; every reachable node's backward
// runs exactly once. Leaf grads accumulate, so zero them between steps.
void backward(const TensorPtr& loss);
void zero_grads(const std::vector<TensorPtr>& leaves);

// Central-difference gradient check. `forward` must rebuild the graph from
// the current leaf values and be deterministic (re-seed any dropout RNG).
// Returns max over sampled coordinates of |a - n| / max(|a|, |n|, rel_floor);
// the floor turns the comparison absolute for near-zero gradients, where a
// float32 difference quotient carries no relative accuracy.
// While a scope is active, relu sign masks and maxpool argmax picks fold
// into the sink hash. Finite-difference checks compare the signatures of the
// two sides of a central difference: different signatures mean the
// perturbation crossed (or straddles) a kink and the quotient measures a
// secant across pieces, so the coordinate is excluded. The filter never
// looks at the analytic gradient.
class BranchHashScope {
 public:
  explicit BranchHashScope(std::uint64_t* sink);
  ~BranchHashScope();
  BranchHashScope(const BranchHashScope&) = delete;
  BranchHashScope& operator=(const BranchHashScope&) = delete;

 private:
  std::uint64_t* prev_;
};

// With exclude_kinks set, coordinates whose +-h (or +-h/2) evaluations land
// on different branch signatures are skipped, and the two step sizes must
// agree as a secondary consistency check.
struct GradCheckStats {
  int checked = 0;
  int skipped = 0;
};
struct GradCheckOptions {
  double h = 1e-3;
  double rel_floor = 1e-3;
  int max_checks_per_leaf = -1;  // <0 checks every coordinate
  std::uint64_t sample_seed = 0;
  bool exclude_kinks = false;
  double kink_tol = 0.3;
  GradCheckStats* stats = nullptr;
};
double grad_check(const std::function<TensorPtr()>& forward,
                  const std::vector<TensorPtr>& leaves,
                  const GradCheckOptions& opt = {});

}  // namespace csta
