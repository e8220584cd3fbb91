#pragma once

// Rank-correlation metrics and the fold/repeat evaluation protocol.
// Constant vectors make both coefficients undefined; such comparisons are
// reported as skips and excluded from averages rather than zero-filled.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "csta/dataio.hpp"

namespace csta {

// tau-b with tie corrections, merge-sort based
std::optional<double> kendall_tau(const std::vector<double>& x,
                                  const std::vector<double>& y);

// Pearson correlation of midranks (average ranks over ties)
std::optional<double> spearman_rho(const std::vector<double>& x,
                                   const std::vector<double>& y);

// score: correlate predicted frame scores against annotator scores.
// summary: correlate the knapsack-built binary mask against annotator masks.
enum class EvalProtocol { score, summary };
EvalProtocol protocol_for(AnnotationKind kind);

struct VideoEval {
  std::string id;
  double tau = 0.0;
  double rho = 0.0;
  bool skipped = false;  // every annotator comparison was undefined
  int used_annotators = 0;
  int skipped_annotators = 0;
};

// Correlates `predicted` (frame scores or a binary summary mask, as the
// protocol dictates) against each annotator vector and averages the defined
// coefficients.
VideoEval evaluate_video(const std::vector<double>& predicted,
                         const std::vector<std::vector<float>>& annotations,
                         const std::string& id = "");

struct FoldResult {
  int repeat = 0;
  int fold = 0;
  std::uint64_t seed = 0;
  int best_epoch = -1;
  std::vector<VideoEval> videos;  // test videos of this fold
  double mean_tau = 0.0;          // over non-skipped videos
  double mean_rho = 0.0;
  int evaluated = 0;
};

struct EvalReport {
  int folds = 0;
  int repeats = 0;
  std::uint64_t master_seed = 0;
  std::vector<std::uint64_t> fold_seeds;
  std::vector<FoldResult> results;    // repeats x folds entries
  std::vector<double> repeat_tau;     // mean over folds, per repeat
  std::vector<double> repeat_rho;
  double overall_tau = 0.0;           // mean over repeats
  double overall_rho = 0.0;
};

// Trains on the given split and returns per-test-video evaluations plus the
// selected epoch. Implemented by the trainer; cross_validate only drives
// the protocol.
using TrainEvalFn = std::function<FoldResult(
    const std::vector<const VideoRecord*>& train,
    const std::vector<const VideoRecord*>& test, std::uint64_t seed)>;

struct CrossValidateOptions {
  int folds = 5;
  int repeats = 10;
  std::uint64_t seed = 0;
  int jobs = 1;
};

// Documented partition rule: for repeat r the video indices are shuffled by
// Rng(mix_seed(seed, r)); fold f tests the f-th contiguous chunk (sizes
// N/folds, the first N%folds chunks one larger) and trains on the rest.
// Fold seeds are mix_seed(seed, r * 1000 + f + 1). Folds may run on
// `jobs` threads; results are aggregated by (repeat, fold) index so the
// outcome does not depend on scheduling.
std::vector<std::vector<int>> fold_partition(int n_videos, int folds,
                                             std::uint64_t seed, int repeat);
EvalReport cross_validate(const Dataset& dataset, const TrainEvalFn& train_fn,
                          const CrossValidateOptions& options);

std::string eval_report_text(const EvalReport& report);
std::string eval_report_csv(const EvalReport& report);

}  // namespace csta
