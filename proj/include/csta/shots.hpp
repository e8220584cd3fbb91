#pragma once

// Shot segmentation (kernel temporal segmentation) and knapsack-constrained
// summary selection.

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace csta {

struct ShotSegmentation {
  int total_frames = 0;
  std::vector<int> change_points;  // strictly increasing, interior to (0, T)

  // half-open [begin, end) intervals covering [0, T)
  std::vector<std::pair<int, int>> shots() const;
  std::vector<int> shot_lengths() const;
};

enum class KtsKernel { linear, rbf };

struct KtsOptions {
  int max_changes = 0;
  // When set, the number of changes k <= max_changes is chosen by minimizing
  // cost(k) + penalty * k * log(T); ties prefer fewer changes. When absent,
  // the minimum-cost segmentation over k <= max_changes is returned.
  std::optional<double> penalty;
  KtsKernel kernel = KtsKernel::linear;
  double rbf_gamma = 0.0;  // <= 0 picks 1 / median pairwise squared distance
};

// Within-segment scatter costs on the kernel Gram matrix, shared by the DP
// and by test-side exhaustive enumeration so both search the same landscape.
class KtsCost {
 public:
  KtsCost(const std::vector<float>& features, int frames, int dim,
          KtsKernel kernel, double rbf_gamma);

  // sum_{t in [a,b)} K_tt - (1/(b-a)) sum_{t,u in [a,b)} K_tu
  double segment_cost(int begin, int end) const;
  int frames() const { return frames_; }

 private:
  int frames_;
  std::vector<double> diag_prefix_;   // size T+1
  std::vector<double> block_prefix_;  // (T+1)^2 integral image of K
};

ShotSegmentation kts_segment(const std::vector<float>& features, int frames,
                             int dim, const KtsOptions& options);

// per-shot mean of frame scores
std::vector<double> shot_scores(const std::vector<double>& frame_scores,
                                const ShotSegmentation& seg);

struct SummarySelection {
  std::vector<int> selected_shots;
  std::vector<std::uint8_t> frame_mask;  // length T
  int selected_frames = 0;
};

// Exact 0/1 knapsack over capacity floor(budget_ratio * T), maximizing the
// summed shot scores. Ties prefer fewer selected frames, then the
// lexicographically smallest index set. Values accumulate item-by-item from
// the highest index down; an enumeration oracle that does the same compares
// bit-exactly.
SummarySelection knapsack_select(const std::vector<double>& scores,
                                 const std::vector<int>& lengths,
                                 int total_frames, double budget_ratio = 0.15);

}  // namespace csta
