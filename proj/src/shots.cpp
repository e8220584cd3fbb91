#include "csta/shots.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace csta {

std::vector<std::pair<int, int>> ShotSegmentation::shots() const {
  std::vector<std::pair<int, int>> out;
  int begin = 0;
  for (int cp : change_points) {
    out.emplace_back(begin, cp);
    begin = cp;
  }
  out.emplace_back(begin, total_frames);
  return out;
}

std::vector<int> ShotSegmentation::shot_lengths() const {
  std::vector<int> out;
  for (const auto& [b, e] : shots()) out.push_back(e - b);
  return out;
}

KtsCost::KtsCost(const std::vector<float>& features, int frames, int dim,
                 KtsKernel kernel, double rbf_gamma)
    : frames_(frames) {
  if (frames < 1 || dim < 1 ||
      features.size() != static_cast<std::size_t>(frames) * dim) {
    throw std::invalid_argument("kts: feature matrix does not match T x d");
  }
  for (float v : features) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("kts: non-finite feature value");
    }
  }

  std::vector<double> gram(static_cast<std::size_t>(frames) * frames);
  auto dot = [&](int i, int j) {
    double acc = 0.0;
    const float* a = features.data() + static_cast<std::size_t>(i) * dim;
    const float* b = features.data() + static_cast<std::size_t>(j) * dim;
    for (int k = 0; k < dim; ++k) acc += static_cast<double>(a[k]) * b[k];
    return acc;
  };

  if (kernel == KtsKernel::linear) {
    for (int i = 0; i < frames; ++i) {
      for (int j = i; j < frames; ++j) {
        const double v = dot(i, j);
        gram[static_cast<std::size_t>(i) * frames + j] = v;
        gram[static_cast<std::size_t>(j) * frames + i] = v;
      }
    }
  } else {
    std::vector<double> sq(static_cast<std::size_t>(frames));
    for (int i = 0; i < frames; ++i) sq[i] = dot(i, i);
    std::vector<double> dists;
    for (int i = 0; i < frames; ++i) {
      for (int j = i + 1; j < frames; ++j) {
        const double d2 = std::max(0.0, sq[i] + sq[j] - 2.0 * dot(i, j));
        dists.push_back(d2);
        gram[static_cast<std::size_t>(i) * frames + j] = d2;  // reused below
      }
    }
    double gamma = rbf_gamma;
    if (gamma <= 0.0) {
      std::vector<double> positive;
      for (double d : dists) {
        if (d > 0.0) positive.push_back(d);
      }
      if (positive.empty()) {
        gamma = 1.0;
      } else {
        std::nth_element(positive.begin(),
                         positive.begin() + positive.size() / 2, positive.end());
        gamma = 1.0 / positive[positive.size() / 2];
      }
    }
    for (int i = 0; i < frames; ++i) {
      gram[static_cast<std::size_t>(i) * frames + i] = 1.0;
      for (int j = i + 1; j < frames; ++j) {
        const double v = std::exp(-gamma * gram[static_cast<std::size_t>(i) * frames + j]);
        gram[static_cast<std::size_t>(i) * frames + j] = v;
        gram[static_cast<std::size_t>(j) * frames + i] = v;
      }
    }
  }

  diag_prefix_.assign(static_cast<std::size_t>(frames) + 1, 0.0);
  for (int i = 0; i < frames; ++i) {
    diag_prefix_[i + 1] =
        diag_prefix_[i] + gram[static_cast<std::size_t>(i) * frames + i];
  }
  const std::size_t n1 = static_cast<std::size_t>(frames) + 1;
  block_prefix_.assign(n1 * n1, 0.0);
  for (int i = 0; i < frames; ++i) {
    for (int j = 0; j < frames; ++j) {
      block_prefix_[(i + 1) * n1 + (j + 1)] =
          gram[static_cast<std::size_t>(i) * frames + j] +
          block_prefix_[i * n1 + (j + 1)] + block_prefix_[(i + 1) * n1 + j] -
          block_prefix_[i * n1 + j];
    }
  }
}

double KtsCost::segment_cost(int begin, int end) const {
  const std::size_t n1 = static_cast<std::size_t>(frames_) + 1;
  const double diag = diag_prefix_[end] - diag_prefix_[begin];
  const double block = block_prefix_[static_cast<std::size_t>(end) * n1 + end] -
                       block_prefix_[static_cast<std::size_t>(begin) * n1 + end] -
                       block_prefix_[static_cast<std::size_t>(end) * n1 + begin] +
                       block_prefix_[static_cast<std::size_t>(begin) * n1 + begin];
  return diag - block / (end - begin);
}

ShotSegmentation kts_segment(const std::vector<float>& features, int frames,
                             int dim, const KtsOptions& options) {
  if (frames < 2) throw std::invalid_argument("kts: need at least two frames");
  if (options.max_changes < 0 || options.max_changes >= frames) {
    throw std::invalid_argument("kts: max_changes must be in [0, T)");
  }
  const KtsCost cost(features, frames, dim, options.kernel, options.rbf_gamma);
  const int max_k = options.max_changes;

  // dp[j][t]: min cost splitting [0, t) into j segments; predecessors kept
  // for reconstruction, smallest boundary wins ties.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> dp(
      static_cast<std::size_t>(max_k) + 2,
      std::vector<double>(static_cast<std::size_t>(frames) + 1, inf));
  std::vector<std::vector<int>> prev(
      static_cast<std::size_t>(max_k) + 2,
      std::vector<int>(static_cast<std::size_t>(frames) + 1, -1));
  for (int t = 1; t <= frames; ++t) dp[1][t] = cost.segment_cost(0, t);
  for (int j = 2; j <= max_k + 1; ++j) {
    for (int t = j; t <= frames; ++t) {
      for (int s = j - 1; s < t; ++s) {
        if (dp[j - 1][s] == inf) continue;
        const double c = dp[j - 1][s] + cost.segment_cost(s, t);
        if (c < dp[j][t]) {
          dp[j][t] = c;
          prev[j][t] = s;
        }
      }
    }
  }

  int best_k = 0;
  double best_obj = inf;
  const double log_t = std::log(static_cast<double>(frames));
  for (int k = 0; k <= max_k; ++k) {
    double obj = dp[k + 1][frames];
    if (options.penalty.has_value()) obj += *options.penalty * k * log_t;
    if (obj < best_obj) {  // strict: ties keep fewer changes
      best_obj = obj;
      best_k = k;
    }
  }

  ShotSegmentation seg;
  seg.total_frames = frames;
  int t = frames;
  for (int j = best_k + 1; j >= 2; --j) {
    t = prev[j][t];
    seg.change_points.push_back(t);
  }
  std::reverse(seg.change_points.begin(), seg.change_points.end());
  return seg;
}

std::vector<double> shot_scores(const std::vector<double>& frame_scores,
                                const ShotSegmentation& seg) {
  if (static_cast<int>(frame_scores.size()) != seg.total_frames) {
    throw std::invalid_argument("shot_scores: score length does not cover [0, T)");
  }
  std::vector<double> out;
  for (const auto& [b, e] : seg.shots()) {
    double acc = 0.0;
    for (int i = b; i < e; ++i) acc += frame_scores[static_cast<std::size_t>(i)];
    out.push_back(acc / (e - b));
  }
  return out;
}

SummarySelection knapsack_select(const std::vector<double>& scores,
                                 const std::vector<int>& lengths,
                                 int total_frames, double budget_ratio) {
  const int n = static_cast<int>(scores.size());
  if (n == 0) throw std::invalid_argument("knapsack: empty shot list");
  if (lengths.size() != scores.size()) {
    throw std::invalid_argument("knapsack: scores/lengths size mismatch");
  }
  long long length_sum = 0;
  for (int len : lengths) {
    if (len <= 0) throw std::invalid_argument("knapsack: non-positive shot length");
    length_sum += len;
  }
  if (length_sum != total_frames) {
    throw std::invalid_argument("knapsack: shot lengths must sum to T");
  }
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) {
      throw std::invalid_argument("knapsack: scores must lie in [0, 1]");
    }
  }
  if (budget_ratio < 0.0) throw std::invalid_argument("knapsack: negative budget");

  const int capacity = static_cast<int>(std::floor(budget_ratio * total_frames));

  // dp over items i..n-1: maximize value, then minimize frames; full ties
  // prefer including item i, which yields the lexicographically smallest set
  const std::size_t cols = static_cast<std::size_t>(capacity) + 1;
  std::vector<double> value(static_cast<std::size_t>(n + 1) * cols, 0.0);
  std::vector<int> frames(static_cast<std::size_t>(n + 1) * cols, 0);
  std::vector<std::uint8_t> take(static_cast<std::size_t>(n + 1) * cols, 0);
  for (int i = n - 1; i >= 0; --i) {
    for (int c = 0; c <= capacity; ++c) {
      const std::size_t here = static_cast<std::size_t>(i) * cols + c;
      const std::size_t skip = static_cast<std::size_t>(i + 1) * cols + c;
      value[here] = value[skip];
      frames[here] = frames[skip];
      if (lengths[static_cast<std::size_t>(i)] <= c) {
        const std::size_t incl = static_cast<std::size_t>(i + 1) * cols + c -
                                 lengths[static_cast<std::size_t>(i)];
        const double v = scores[static_cast<std::size_t>(i)] + value[incl];
        const int f = lengths[static_cast<std::size_t>(i)] + frames[incl];
        if (v > value[here] || (v == value[here] && f <= frames[here])) {
          value[here] = v;
          frames[here] = f;
          take[here] = 1;
        }
      }
    }
  }

  SummarySelection sel;
  sel.frame_mask.assign(static_cast<std::size_t>(total_frames), 0);
  int c = capacity;
  int offset = 0;
  for (int i = 0; i < n; ++i) {
    const int len = lengths[static_cast<std::size_t>(i)];
    if (take[static_cast<std::size_t>(i) * cols + c]) {
      sel.selected_shots.push_back(i);
      sel.selected_frames += len;
      for (int f = offset; f < offset + len; ++f) sel.frame_mask[static_cast<std::size_t>(f)] = 1;
      c -= len;
    }
    offset += len;
  }
  return sel;
}

}  // namespace csta
