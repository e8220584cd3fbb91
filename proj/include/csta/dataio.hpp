#pragma once

// Dataset container: a directory holding a text manifest plus one binary
// blob per video. Blob layout: 16-byte header (magic, version, T, D as
// little-endian u32) followed by row-major little-endian float32 features
// (T x D) and then one annotation vector per annotator (each length T).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace csta {

enum class AnnotationKind { scores, summaries };

struct VideoRecord {
  std::string id;
  int n_frames = 0;
  int dim = 0;
  std::vector<float> features;                   // T x D row-major
  std::vector<std::vector<float>> annotations;   // per annotator, length T
  AnnotationKind annotation_kind = AnnotationKind::scores;
  std::vector<int> change_points;                // optional, strictly increasing
  bool has_change_points = false;
};

struct Dataset {
  std::string name;
  int dim = 0;
  int format_version = 1;
  std::vector<VideoRecord> videos;
};

bool operator==(const VideoRecord& a, const VideoRecord& b);
bool operator==(const Dataset& a, const Dataset& b);

// Validates every record invariant (lengths, value ranges, unique ids,
// uniform D, interior change points); violations raise std::runtime_error
// naming the record and field.
void validate_dataset(const Dataset& ds);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

struct SyntheticSpec {
  int n_videos = 8;
  int t_min = 30;
  int t_max = 50;
  int dim = 64;
  int n_segments = 5;
  int n_annotators = 3;
  float noise = 0.1f;               // feature and annotator noise scale
  AnnotationKind annotation_kind = AnnotationKind::scores;
  double budget_ratio = 0.15;       // for summary-style annotations
  std::uint64_t seed = 0;
  std::string name = "synthetic";
};

// Piecewise-constant segment prototypes plus Gaussian noise. Each segment
// carries a hidden importance in [0,1]; a dataset-level unit direction g is
// mixed in so that features . g recovers the importance (linear probe
// learnability). Annotator vectors are the hidden importance plus
// per-annotator noise clipped to [0,1]; summary-style annotations run the
// knapsack over each annotator's scores on the true change points. True
// change points are stored on every record.
//
// Structure draws (segment cuts, prototypes, importances) and noise draws
// come from separate seed-derived streams, so two generations differing only
// in `noise` share identical hidden structure.
Dataset gen_synthetic(const SyntheticSpec& spec);

}  // namespace csta
