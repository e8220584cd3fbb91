#include "csta/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "csta/shots.hpp"
#include "csta/tensor.hpp"

namespace csta {

namespace fs = std::filesystem;

bool operator==(const VideoRecord& a, const VideoRecord& b) {
  return a.id == b.id && a.n_frames == b.n_frames && a.dim == b.dim &&
         a.features == b.features && a.annotations == b.annotations &&
         a.annotation_kind == b.annotation_kind &&
         a.has_change_points == b.has_change_points &&
         a.change_points == b.change_points;
}

bool operator==(const Dataset& a, const Dataset& b) {
  return a.name == b.name && a.dim == b.dim &&
         a.format_version == b.format_version && a.videos == b.videos;
}

namespace {

[[noreturn]] void record_error(const std::string& id, const std::string& field,
                               const std::string& why) {
  throw std::runtime_error("dataset: record '" + id + "' field '" + field +
                           "': " + why);
}

constexpr std::uint32_t kBlobMagic = 0x44545343;  // "CSTD"
constexpr std::uint32_t kBlobVersion = 1;
constexpr int kManifestVersion = 1;

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
  if (!is) throw std::runtime_error("dataset: truncated blob");
  return static_cast<std::uint32_t>(buf[0]) |
         (static_cast<std::uint32_t>(buf[1]) << 8) |
         (static_cast<std::uint32_t>(buf[2]) << 16) |
         (static_cast<std::uint32_t>(buf[3]) << 24);
}

void write_floats(std::ostream& os, const std::vector<float>& values) {
  for (float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
  }
}

void read_floats(std::istream& is, std::vector<float>& values) {
  for (auto& v : values) {
    const std::uint32_t bits = read_u32(is);
    std::memcpy(&v, &bits, 4);
  }
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  std::size_t e = s.find_last_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

}  // namespace

void validate_dataset(const Dataset& ds) {
  if (ds.dim < 1) throw std::runtime_error("dataset: dim must be positive");
  if (ds.format_version != kManifestVersion) {
    throw std::runtime_error("dataset: unsupported format version " +
                             std::to_string(ds.format_version));
  }
  std::vector<std::string> ids;
  for (const auto& video : ds.videos) {
    if (video.id.empty()) record_error("?", "id", "empty id");
    if (std::find(ids.begin(), ids.end(), video.id) != ids.end()) {
      record_error(video.id, "id", "duplicate id");
    }
    ids.push_back(video.id);
    if (video.n_frames < 1) record_error(video.id, "frames", "must be >= 1");
    if (video.dim != ds.dim) {
      record_error(video.id, "dim",
                   "record dim " + std::to_string(video.dim) +
                       " differs from dataset dim " + std::to_string(ds.dim));
    }
    if (video.features.size() !=
        static_cast<std::size_t>(video.n_frames) * video.dim) {
      record_error(video.id, "features",
                   "expected " + std::to_string(video.n_frames * video.dim) +
                       " values, got " + std::to_string(video.features.size()));
    }
    for (float v : video.features) {
      if (!std::isfinite(v)) record_error(video.id, "features", "non-finite value");
    }
    if (video.annotations.empty()) {
      record_error(video.id, "annotations", "at least one annotator required");
    }
    for (std::size_t a = 0; a < video.annotations.size(); ++a) {
      const auto& ann = video.annotations[a];
      if (ann.size() != static_cast<std::size_t>(video.n_frames)) {
        record_error(video.id, "annotations[" + std::to_string(a) + "]",
                     "length " + std::to_string(ann.size()) + " != frames " +
                         std::to_string(video.n_frames));
      }
      for (float v : ann) {
        if (video.annotation_kind == AnnotationKind::scores) {
          if (!(v >= 0.0f && v <= 1.0f)) {
            record_error(video.id, "annotations[" + std::to_string(a) + "]",
                         "score outside [0, 1]");
          }
        } else if (v != 0.0f && v != 1.0f) {
          record_error(video.id, "annotations[" + std::to_string(a) + "]",
                       "summary mask value not in {0, 1}");
        }
      }
    }
    if (video.has_change_points) {
      int last = 0;
      for (int cp : video.change_points) {
        if (cp <= last || cp >= video.n_frames) {
          record_error(video.id, "change_points",
                       "must be strictly increasing and interior");
        }
        last = cp;
      }
    }
  }
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  validate_dataset(ds);
  fs::create_directories(dir);

  std::ostringstream manifest;
  manifest << "# csta dataset\n";
  manifest << "format_version = " << ds.format_version << "\n";
  manifest << "name = " << ds.name << "\n";
  manifest << "dim = " << ds.dim << "\n";
  manifest << "videos = " << ds.videos.size() << "\n";
  for (const auto& video : ds.videos) {
    manifest << "\n[video]\n";
    manifest << "id = " << video.id << "\n";
    manifest << "frames = " << video.n_frames << "\n";
    manifest << "annotators = " << video.annotations.size() << "\n";
    manifest << "annotation_kind = "
             << (video.annotation_kind == AnnotationKind::scores ? "scores"
                                                                 : "summaries")
             << "\n";
    if (video.has_change_points) {
      manifest << "change_points = ";
      for (std::size_t i = 0; i < video.change_points.size(); ++i) {
        manifest << (i ? "," : "") << video.change_points[i];
      }
      manifest << "\n";
    }
    manifest << "file = " << video.id << ".bin\n";
  }
  {
    std::ofstream os(fs::path(dir) / "manifest.txt", std::ios::binary);
    if (!os) throw std::runtime_error("dataset: cannot write manifest in " + dir);
    const std::string text = manifest.str();
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
  }

  for (const auto& video : ds.videos) {
    std::ofstream os(fs::path(dir) / (video.id + ".bin"), std::ios::binary);
    if (!os) throw std::runtime_error("dataset: cannot write blob for " + video.id);
    write_u32(os, kBlobMagic);
    write_u32(os, kBlobVersion);
    write_u32(os, static_cast<std::uint32_t>(video.n_frames));
    write_u32(os, static_cast<std::uint32_t>(video.dim));
    write_floats(os, video.features);
    for (const auto& ann : video.annotations) write_floats(os, ann);
    if (!os) throw std::runtime_error("dataset: blob write failed for " + video.id);
  }
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "manifest.txt");
  if (!is) throw std::runtime_error("dataset: no manifest.txt under " + dir);

  Dataset ds;
  ds.format_version = -1;
  VideoRecord* current = nullptr;
  std::vector<std::pair<std::string, int>> files;  // blob name, annotators
  std::string line;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line == "[video]") {
      ds.videos.emplace_back();
      current = &ds.videos.back();
      files.emplace_back("", 0);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("dataset: malformed manifest line '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!current) {
      if (key == "format_version") ds.format_version = std::stoi(value);
      else if (key == "name") ds.name = value;
      else if (key == "dim") ds.dim = std::stoi(value);
      else if (key == "videos") {}  // count is implied by sections
      else throw std::runtime_error("dataset: unknown manifest key '" + key + "'");
      continue;
    }
    if (key == "id") current->id = value;
    else if (key == "frames") current->n_frames = std::stoi(value);
    else if (key == "annotators") files.back().second = std::stoi(value);
    else if (key == "annotation_kind") {
      if (value == "scores") current->annotation_kind = AnnotationKind::scores;
      else if (value == "summaries") current->annotation_kind = AnnotationKind::summaries;
      else throw std::runtime_error("dataset: unknown annotation kind '" + value + "'");
    } else if (key == "change_points") {
      std::istringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        current->change_points.push_back(std::stoi(trim(item)));
      }
      current->has_change_points = true;
    } else if (key == "file") {
      files.back().first = value;
    } else {
      throw std::runtime_error("dataset: unknown video key '" + key + "'");
    }
  }
  if (ds.format_version != kManifestVersion) {
    throw std::runtime_error("dataset: unsupported format version " +
                             std::to_string(ds.format_version));
  }

  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    auto& video = ds.videos[i];
    video.dim = ds.dim;
    const auto& [file, annotators] = files[i];
    if (file.empty()) record_error(video.id, "file", "missing blob reference");
    if (annotators < 1) record_error(video.id, "annotators", "must be >= 1");
    std::ifstream blob(fs::path(dir) / file, std::ios::binary);
    if (!blob) record_error(video.id, "file", "cannot open " + file);
    if (read_u32(blob) != kBlobMagic) record_error(video.id, "file", "bad magic");
    const std::uint32_t version = read_u32(blob);
    if (version != kBlobVersion) {
      record_error(video.id, "file", "unsupported blob version " + std::to_string(version));
    }
    const int frames = static_cast<int>(read_u32(blob));
    const int dim = static_cast<int>(read_u32(blob));
    if (frames != video.n_frames) {
      record_error(video.id, "frames",
                   "manifest declares " + std::to_string(video.n_frames) +
                       " frames but blob holds " + std::to_string(frames));
    }
    if (dim != ds.dim) {
      record_error(video.id, "dim", "blob dim " + std::to_string(dim) +
                                        " != dataset dim " + std::to_string(ds.dim));
    }
    video.features.assign(static_cast<std::size_t>(frames) * dim, 0.0f);
    read_floats(blob, video.features);
    video.annotations.assign(static_cast<std::size_t>(annotators),
                             std::vector<float>(static_cast<std::size_t>(frames)));
    for (auto& ann : video.annotations) read_floats(blob, ann);
    // the blob must end exactly here
    char extra;
    if (blob.read(&extra, 1)) {
      record_error(video.id, "file", "trailing bytes in blob");
    }
  }

  validate_dataset(ds);
  return ds;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.n_videos < 1 || spec.dim < 1 || spec.n_segments < 1 ||
      spec.n_annotators < 1 || spec.t_min < 1 || spec.t_max < spec.t_min) {
    throw std::invalid_argument("gen_synthetic: parameters must be positive");
  }
  if (spec.noise < 0.0f) {
    throw std::invalid_argument("gen_synthetic: noise must be >= 0");
  }
  if (spec.t_min <= spec.n_segments) {
    throw std::invalid_argument("gen_synthetic: need t_min > n_segments");
  }

  // dataset-level probe direction, unit norm
  Rng dir_rng(mix_seed(spec.seed, 0xd1));
  std::vector<double> g(static_cast<std::size_t>(spec.dim));
  double norm = 0.0;
  for (auto& v : g) {
    v = dir_rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : g) v /= norm;

  Dataset ds;
  ds.name = spec.name;
  ds.dim = spec.dim;

  for (int vi = 0; vi < spec.n_videos; ++vi) {
    Rng structure(mix_seed(spec.seed, 1000 + static_cast<std::uint64_t>(vi)));
    Rng feature_noise(mix_seed(spec.seed, 3000 + static_cast<std::uint64_t>(vi)));

    VideoRecord video;
    {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "v%03d", vi);
      video.id = buf;
    }
    video.dim = spec.dim;
    const int frames = structure.uniform_int(spec.t_min, spec.t_max);
    video.n_frames = frames;

    // distinct interior cut points
    std::vector<int> candidates;
    for (int i = 1; i < frames; ++i) candidates.push_back(i);
    structure.shuffle(candidates);
    std::vector<int> cuts(candidates.begin(),
                          candidates.begin() + (spec.n_segments - 1));
    std::sort(cuts.begin(), cuts.end());
    video.change_points = cuts;
    video.has_change_points = true;

    // per-segment prototype (orthogonal to g) and hidden importance
    std::vector<std::vector<double>> protos;
    std::vector<double> importance;
    for (int s = 0; s < spec.n_segments; ++s) {
      std::vector<double> z(static_cast<std::size_t>(spec.dim));
      double zg = 0.0;
      for (std::size_t k = 0; k < z.size(); ++k) {
        z[k] = structure.normal();
        zg += z[k] * g[k];
      }
      const double u = structure.uniform(0.05, 0.95);
      for (std::size_t k = 0; k < z.size(); ++k) {
        z[k] = z[k] - zg * g[k] + u * g[k];
      }
      protos.push_back(std::move(z));
      importance.push_back(u);
    }

    std::vector<int> segment_of(static_cast<std::size_t>(frames));
    {
      int seg = 0;
      for (int t = 0; t < frames; ++t) {
        while (seg < static_cast<int>(cuts.size()) && t >= cuts[seg]) ++seg;
        segment_of[static_cast<std::size_t>(t)] = seg;
      }
    }

    video.features.reserve(static_cast<std::size_t>(frames) * spec.dim);
    for (int t = 0; t < frames; ++t) {
      const auto& proto = protos[static_cast<std::size_t>(segment_of[t])];
      for (int k = 0; k < spec.dim; ++k) {
        video.features.push_back(static_cast<float>(
            proto[static_cast<std::size_t>(k)] + spec.noise * feature_noise.normal()));
      }
    }

    video.annotation_kind = spec.annotation_kind;
    ShotSegmentation seg;
    seg.total_frames = frames;
    seg.change_points = cuts;
    for (int a = 0; a < spec.n_annotators; ++a) {
      Rng ann_rng(mix_seed(spec.seed, 2000 + 97 * static_cast<std::uint64_t>(vi) +
                                          static_cast<std::uint64_t>(a)));
      std::vector<float> scores(static_cast<std::size_t>(frames));
      for (int t = 0; t < frames; ++t) {
        const double v = importance[static_cast<std::size_t>(segment_of[t])] +
                         spec.noise * ann_rng.normal();
        scores[static_cast<std::size_t>(t)] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
      if (spec.annotation_kind == AnnotationKind::scores) {
        video.annotations.push_back(std::move(scores));
      } else {
        std::vector<double> frame_scores(scores.begin(), scores.end());
        auto means = shot_scores(frame_scores, seg);
        auto sel = knapsack_select(means, seg.shot_lengths(), frames,
                                   spec.budget_ratio);
        std::vector<float> mask(static_cast<std::size_t>(frames));
        for (int t = 0; t < frames; ++t) {
          mask[static_cast<std::size_t>(t)] =
              sel.frame_mask[static_cast<std::size_t>(t)] ? 1.0f : 0.0f;
        }
        video.annotations.push_back(std::move(mask));
      }
    }

    ds.videos.push_back(std::move(video));
  }

  validate_dataset(ds);
  return ds;
}

}  // namespace csta
