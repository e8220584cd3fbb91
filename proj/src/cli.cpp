#include "csta/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "csta/config.hpp"
#include "csta/macs.hpp"
#include "csta/metrics.hpp"
#include "csta/trainer.hpp"

namespace csta {

namespace fs = std::filesystem;

namespace {

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

LogLevel log_level() {
  const char* env = std::getenv("CSTA_LOG");
  if (!env) return LogLevel::info;
  const std::string v(env);
  if (v == "quiet") return LogLevel::quiet;
  if (v == "debug") return LogLevel::debug;
  return LogLevel::info;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::cerr << "csta: " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::cerr << "csta[debug]: " << msg << "\n";
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
}

void write_resolved_config(const RunConfig& rc, const std::string& dir) {
  // the output location is implied by where the file sits; keeping it out
  // makes reruns into different directories byte-identical
  RunConfig copy = rc;
  copy.out_dir.clear();
  write_file(fs::path(dir) / "run_config.txt", copy.to_ini().serialize());
}

// shared flag plumbing: every subcommand accepts the common flags plus a
// config file whose values sit between built-in defaults and explicit flags
struct CommonFlags {
  std::string config_path;
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  int jobs = 1;
  CLI::Option* data_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file");
    data_opt = cmd->add_option("--data", data, "dataset directory");
    out_opt = cmd->add_option("--out", out, "output directory");
    seed_opt = cmd->add_option("--seed", seed, "master RNG seed");
    jobs_opt = cmd->add_option("--jobs", jobs, "parallel fold workers");
  }

  RunConfig resolve() const {
    RunConfig rc;
    if (!config_path.empty()) {
      rc.apply(IniMap::parse_file(config_path));
      log_debug("loaded config " + config_path);
    }
    if (data_opt->count()) rc.data_dir = data;
    if (out_opt->count()) rc.out_dir = out;
    if (seed_opt->count()) rc.seed = seed;
    if (jobs_opt->count()) rc.jobs = jobs;
    return rc;
  }
};

std::pair<int, int> parse_frame_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    const int t = std::stoi(text);
    return {t, t};
  }
  return {std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1))};
}

int cmd_gen(const CommonFlags& common, const std::string& frames,
            const std::map<std::string, std::string>& overrides) {
  RunConfig rc = common.resolve();
  for (const auto& [key, value] : overrides) {
    IniMap one;
    one.set(key, value);
    rc.apply(one);
  }
  if (!frames.empty()) {
    const auto [lo, hi] = parse_frame_range(frames);
    rc.gen.t_min = lo;
    rc.gen.t_max = hi;
  }
  if (rc.out_dir.empty()) throw std::runtime_error("gen: --out is required");
  rc.gen.seed = rc.seed;
  rc.gen.budget_ratio = rc.budget_ratio;

  auto ds = gen_synthetic(rc.gen);
  save_dataset(ds, rc.out_dir);
  write_resolved_config(rc, rc.out_dir);
  log_info("wrote " + std::to_string(ds.videos.size()) + " videos to " +
           rc.out_dir);
  std::cout << "dataset " << rc.out_dir << " videos " << ds.videos.size()
            << " dim " << ds.dim << "\n";
  return 0;
}

CstaConfig model_config_for(const RunConfig& rc, const Dataset& ds) {
  CstaConfig cfg = rc.model;
  if (cfg.dim != ds.dim) {
    log_info("model dim " + std::to_string(cfg.dim) + " -> dataset dim " +
             std::to_string(ds.dim));
    cfg.dim = ds.dim;
  }
  cfg.backbone.stages.clear();
  return cfg;
}

int cmd_train(const CommonFlags& common, int epochs_flag, int folds_flag,
              int repeats_flag, CLI::Option* epochs_opt, CLI::Option* folds_opt,
              CLI::Option* repeats_opt) {
  RunConfig rc = common.resolve();
  if (epochs_opt->count()) rc.train.epochs = epochs_flag;
  if (folds_opt->count()) rc.folds = folds_flag;
  if (repeats_opt->count()) rc.repeats = repeats_flag;
  if (rc.data_dir.empty()) throw std::runtime_error("train: --data is required");
  if (rc.out_dir.empty()) throw std::runtime_error("train: --out is required");

  const Dataset ds = load_dataset(rc.data_dir);
  const CstaConfig model_cfg = model_config_for(rc, ds);
  rc.model = model_cfg;

  // map fold seeds back to (repeat, fold) for checkpoint naming
  std::map<std::uint64_t, std::pair<int, int>> seed_names;
  for (int r = 0; r < rc.repeats; ++r) {
    for (int f = 0; f < rc.folds; ++f) {
      seed_names[mix_seed(rc.seed, static_cast<std::uint64_t>(r) * 1000 + f + 1)] = {r, f};
    }
  }
  const std::string out = rc.out_dir;
  fs::create_directories(out);
  auto on_fold_done = [&seed_names, out](const CstaModel& model,
                                         const TrainResult& result,
                                         std::uint64_t seed) {
    const auto [r, f] = seed_names.at(seed);
    const std::string stem =
        "fold_r" + std::to_string(r) + "_f" + std::to_string(f);
    save_checkpoint((fs::path(out) / (stem + ".ckpt")).string(), model);
    write_file(fs::path(out) / (stem + "_curve.csv"), epoch_curve_csv(result));
  };

  CrossValidateOptions cv;
  cv.folds = rc.folds;
  cv.repeats = rc.repeats;
  cv.seed = rc.seed;
  cv.jobs = rc.jobs;
  log_info("training " + std::to_string(cv.folds) + " folds x " +
           std::to_string(cv.repeats) + " repeats on " +
           std::to_string(ds.videos.size()) + " videos");
  const auto report = cross_validate(
      ds, make_csta_train_fn(model_cfg, rc.train, on_fold_done), cv);

  write_file(fs::path(out) / "report.txt", eval_report_text(report));
  write_file(fs::path(out) / "report.csv", eval_report_csv(report));
  write_resolved_config(rc, out);
  std::cout << "overall tau " << report.overall_tau << " rho "
            << report.overall_rho << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& common, const std::string& checkpoint,
             CLI::Option* ckpt_opt) {
  RunConfig rc = common.resolve();
  if (ckpt_opt->count()) rc.checkpoint = checkpoint;
  if (rc.data_dir.empty()) throw std::runtime_error("eval: --data is required");
  if (rc.checkpoint.empty()) throw std::runtime_error("eval: --checkpoint is required");

  const Dataset ds = load_dataset(rc.data_dir);
  CstaModel model = load_checkpoint(rc.checkpoint);
  if (model.config().dim != ds.dim) {
    throw std::runtime_error("eval: checkpoint dim " +
                             std::to_string(model.config().dim) +
                             " does not match dataset dim " +
                             std::to_string(ds.dim));
  }

  std::ostringstream csv;
  csv << "video,tau,rho,skipped\n";
  double tau = 0.0, rho = 0.0;
  int used = 0;
  for (const auto& video : ds.videos) {
    const auto eval = evaluate_model_on_video(model, video, rc.budget_ratio);
    csv << eval.id << ',' << eval.tau << ',' << eval.rho << ','
        << (eval.skipped ? 1 : 0) << "\n";
    if (eval.skipped) continue;
    tau += eval.tau;
    rho += eval.rho;
    ++used;
  }
  const double mean_tau = used ? tau / used : 0.0;
  const double mean_rho = used ? rho / used : 0.0;
  csv << "mean," << mean_tau << ',' << mean_rho << ",\n";
  if (!rc.out_dir.empty()) {
    write_file(fs::path(rc.out_dir) / "eval.csv", csv.str());
    write_resolved_config(rc, rc.out_dir);
  }
  std::cout << "eval tau " << mean_tau << " rho " << mean_rho << " over "
            << used << " videos\n";
  return 0;
}

int cmd_summarize(const CommonFlags& common, const std::string& checkpoint,
                  double budget, CLI::Option* ckpt_opt, CLI::Option* budget_opt) {
  RunConfig rc = common.resolve();
  if (ckpt_opt->count()) rc.checkpoint = checkpoint;
  if (budget_opt->count()) rc.budget_ratio = budget;
  if (rc.data_dir.empty()) throw std::runtime_error("summarize: --data is required");
  if (rc.checkpoint.empty()) {
    throw std::runtime_error("summarize: --checkpoint is required");
  }

  const Dataset ds = load_dataset(rc.data_dir);
  CstaModel model = load_checkpoint(rc.checkpoint);
  if (model.config().dim != ds.dim) {
    throw std::runtime_error("summarize: checkpoint dim does not match dataset");
  }

  std::ostringstream listing;
  std::ostringstream csv;
  csv << "video,frames,budget,selected_frames,selected_shots,mask\n";
  for (const auto& video : ds.videos) {
    const auto scores = predict_video(model, video);

    ShotSegmentation seg;
    if (video.has_change_points) {
      seg.total_frames = video.n_frames;
      seg.change_points = video.change_points;
    } else {
      KtsOptions kts = rc.kts;
      if (kts.max_changes <= 0) {
        kts.max_changes = std::max(1, video.n_frames / 8);
      }
      seg = kts_segment(video.features, video.n_frames, video.dim, kts);
    }
    const auto means = shot_scores(scores, seg);
    const auto sel = knapsack_select(means, seg.shot_lengths(), video.n_frames,
                                     rc.budget_ratio);

    const int budget_frames =
        static_cast<int>(std::floor(rc.budget_ratio * video.n_frames));
    listing << video.id << ": " << video.n_frames << " frames, budget "
            << budget_frames << ", selected " << sel.selected_frames << "\n";
    std::string shots_str;
    const auto shots = seg.shots();
    for (int si : sel.selected_shots) {
      listing << "  shot " << si << " [" << shots[si].first << ", "
              << shots[si].second << ") score " << means[si] << "\n";
      shots_str += (shots_str.empty() ? "" : ";") + std::to_string(si);
    }
    std::string mask;
    for (auto bit : sel.frame_mask) mask += bit ? '1' : '0';
    csv << video.id << ',' << video.n_frames << ',' << budget_frames << ','
        << sel.selected_frames << ',' << shots_str << ',' << mask << "\n";
  }
  if (!rc.out_dir.empty()) {
    write_file(fs::path(rc.out_dir) / "summary.csv", csv.str());
    write_file(fs::path(rc.out_dir) / "summary.txt", listing.str());
    write_resolved_config(rc, rc.out_dir);
  }
  std::cout << listing.str();
  return 0;
}

int cmd_macs(const CommonFlags& common, int frames, const std::string& checkpoint,
             int dim_flag, int reduction_flag, CLI::Option* ckpt_opt,
             CLI::Option* dim_opt, CLI::Option* red_opt) {
  RunConfig rc = common.resolve();
  if (ckpt_opt->count()) rc.checkpoint = checkpoint;
  if (dim_opt->count()) rc.model.dim = dim_flag;
  if (red_opt->count()) rc.model.reduction = reduction_flag;
  if (frames < 1) throw std::runtime_error("macs: --frames must be >= 1");

  std::unique_ptr<CstaModel> model;
  if (!rc.checkpoint.empty()) {
    model = std::make_unique<CstaModel>(load_checkpoint(rc.checkpoint));
  } else {
    CstaConfig cfg = rc.model;
    cfg.backbone.stages.clear();
    model = std::make_unique<CstaModel>(cfg);
  }
  const int s = model->config().use_cls ? frames + 1 : frames;
  const auto report =
      count_macs(model->describe(frames), {3, s, model->config().dim});
  std::cout << format_mac_report(report);
  if (!rc.out_dir.empty()) {
    write_file(fs::path(rc.out_dir) / "macs.csv", mac_report_csv(report));
    write_resolved_config(rc, rc.out_dir);
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"CSTA video summarization pipeline"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  CommonFlags gen_common;
  gen_common.attach(gen);
  std::string gen_frames;
  std::map<std::string, std::string> gen_overrides;
  int gen_videos = 0, gen_dim = 0, gen_segments = 0, gen_annotators = 0;
  float gen_noise = 0.0f;
  std::string gen_kind;
  auto* videos_opt = gen->add_option("--videos", gen_videos, "video count");
  gen->add_option("--frames", gen_frames, "frame count or range lo:hi");
  auto* dim_opt = gen->add_option("--dim", gen_dim, "feature dimension");
  auto* seg_opt = gen->add_option("--segments", gen_segments, "segments per video");
  auto* ann_opt = gen->add_option("--annotators", gen_annotators, "annotators per video");
  auto* noise_opt = gen->add_option("--noise", gen_noise, "noise scale");
  auto* kind_opt = gen->add_option("--kind", gen_kind, "scores | summaries");

  // train
  auto* train = app.add_subcommand("train", "cross-validated training");
  CommonFlags train_common;
  train_common.attach(train);
  int train_epochs = 0, train_folds = 0, train_repeats = 0;
  auto* epochs_opt = train->add_option("--epochs", train_epochs, "training epochs");
  auto* folds_opt = train->add_option("--folds", train_folds, "cross-validation folds");
  auto* repeats_opt = train->add_option("--repeats", train_repeats, "protocol repeats");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  CommonFlags eval_common;
  eval_common.attach(eval);
  std::string eval_ckpt;
  auto* eval_ckpt_opt = eval->add_option("--checkpoint", eval_ckpt, "model checkpoint");

  // summarize
  auto* summarize = app.add_subcommand("summarize", "emit summary masks");
  CommonFlags sum_common;
  sum_common.attach(summarize);
  std::string sum_ckpt;
  double sum_budget = 0.15;
  auto* sum_ckpt_opt = summarize->add_option("--checkpoint", sum_ckpt, "model checkpoint");
  auto* sum_budget_opt = summarize->add_option("--budget", sum_budget, "summary length ratio");

  // macs
  auto* macs = app.add_subcommand("macs", "multiply-accumulate report");
  CommonFlags macs_common;
  macs_common.attach(macs);
  int macs_frames = 100, macs_dim = 0, macs_reduction = 0;
  std::string macs_ckpt;
  macs->add_option("--frames", macs_frames, "video length T");
  auto* macs_ckpt_opt = macs->add_option("--checkpoint", macs_ckpt, "model checkpoint");
  auto* macs_dim_opt = macs->add_option("--dim", macs_dim, "feature dimension");
  auto* macs_red_opt = macs->add_option("--reduction", macs_reduction, "backbone reduction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) {
      if (videos_opt->count()) gen_overrides["gen.videos"] = std::to_string(gen_videos);
      if (dim_opt->count()) gen_overrides["gen.dim"] = std::to_string(gen_dim);
      if (seg_opt->count()) gen_overrides["gen.segments"] = std::to_string(gen_segments);
      if (ann_opt->count()) gen_overrides["gen.annotators"] = std::to_string(gen_annotators);
      if (noise_opt->count()) gen_overrides["gen.noise"] = std::to_string(gen_noise);
      if (kind_opt->count()) gen_overrides["gen.kind"] = gen_kind;
      return cmd_gen(gen_common, gen_frames, gen_overrides);
    }
    if (train->parsed()) {
      return cmd_train(train_common, train_epochs, train_folds, train_repeats,
                       epochs_opt, folds_opt, repeats_opt);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_common, eval_ckpt, eval_ckpt_opt);
    }
    if (summarize->parsed()) {
      return cmd_summarize(sum_common, sum_ckpt, sum_budget, sum_ckpt_opt,
                           sum_budget_opt);
    }
    if (macs->parsed()) {
      return cmd_macs(macs_common, macs_frames, macs_ckpt, macs_dim,
                      macs_reduction, macs_ckpt_opt, macs_dim_opt, macs_red_opt);
    }
  } catch (const std::exception& e) {
    std::cerr << "csta: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace csta
