#include "csta/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "csta/tensor.hpp"

namespace csta {

namespace {

void check_pair(const std::vector<double>& x, const std::vector<double>& y,
                const char* op) {
  if (x.size() != y.size()) {
    throw std::invalid_argument(std::string(op) + ": length mismatch");
  }
  if (x.size() < 2) {
    throw std::invalid_argument(std::string(op) + ": need at least two samples");
  }
}

// merge-sort inversion count over values[order]; equal values do not count
long long count_inversions(std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<double> buffer(n);
  long long inversions = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
      const std::size_t mid = lo + width;
      const std::size_t hi = std::min(lo + 2 * width, n);
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (values[j] < values[i]) {  // strict: ties are not inversions
          inversions += static_cast<long long>(mid - i);
          buffer[k++] = values[j++];
        } else {
          buffer[k++] = values[i++];
        }
      }
      while (i < mid) buffer[k++] = values[i++];
      while (j < hi) buffer[k++] = values[j++];
      std::copy(buffer.begin() + lo, buffer.begin() + hi, values.begin() + lo);
    }
  }
  return inversions;
}

long long tie_pair_count(std::vector<double> sorted) {
  long long pairs = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const long long g = static_cast<long long>(j - i);
    pairs += g * (g - 1) / 2;
    i = j;
  }
  return pairs;
}

}  // namespace

std::optional<double> kendall_tau(const std::vector<double>& x,
                                  const std::vector<double>& y) {
  check_pair(x, y, "kendall_tau");
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });

  const long long tot = static_cast<long long>(n) * (n - 1) / 2;

  // tie counts: n1 in x, n2 in y, n3 in both
  long long n1 = 0, n3 = 0;
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j < n && x[order[j]] == x[order[i]]) ++j;
      const long long g = static_cast<long long>(j - i);
      n1 += g * (g - 1) / 2;
      std::size_t a = i;
      while (a < j) {
        std::size_t b = a;
        while (b < j && y[order[b]] == y[order[a]]) ++b;
        const long long h = static_cast<long long>(b - a);
        n3 += h * (h - 1) / 2;
        a = b;
      }
      i = j;
    }
  }
  std::vector<double> y_sorted = y;
  std::sort(y_sorted.begin(), y_sorted.end());
  const long long n2 = tie_pair_count(std::move(y_sorted));

  if (n1 == tot || n2 == tot) return std::nullopt;  // constant vector

  std::vector<double> y_by_x(n);
  for (std::size_t i = 0; i < n; ++i) y_by_x[i] = y[order[i]];
  const long long dis = count_inversions(y_by_x);

  const double con_minus_dis =
      static_cast<double>(tot - n1 - n2 + n3 - 2 * dis);
  const double denom = std::sqrt(static_cast<double>(tot - n1) *
                                 static_cast<double>(tot - n2));
  return con_minus_dis / denom;
}

std::optional<double> spearman_rho(const std::vector<double>& x,
                                   const std::vector<double>& y) {
  check_pair(x, y, "spearman_rho");
  const std::size_t n = x.size();
  auto midrank = [n](const std::vector<double>& v) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j < n && v[order[j]] == v[order[i]]) ++j;
      const double mid = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
      for (std::size_t k = i; k < j; ++k) rank[order[k]] = mid;
      i = j;
    }
    return rank;
  };

  const auto rx = midrank(x);
  const auto ry = midrank(y);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rx[i] - mx, b = ry[i] - my;
    cov += a * b;
    vx += a * a;
    vy += b * b;
  }
  if (vx == 0.0 || vy == 0.0) return std::nullopt;  // constant vector
  return cov / std::sqrt(vx * vy);
}

EvalProtocol protocol_for(AnnotationKind kind) {
  return kind == AnnotationKind::summaries ? EvalProtocol::summary
                                           : EvalProtocol::score;
}

VideoEval evaluate_video(const std::vector<double>& predicted,
                         const std::vector<std::vector<float>>& annotations,
                         const std::string& id) {
  if (annotations.empty()) {
    throw std::invalid_argument("evaluate_video: empty annotation list");
  }
  VideoEval out;
  out.id = id;
  double tau_sum = 0.0, rho_sum = 0.0;
  for (const auto& ann : annotations) {
    if (ann.size() != predicted.size()) {
      throw std::invalid_argument("evaluate_video: annotation length mismatch");
    }
    std::vector<double> y(ann.begin(), ann.end());
    const auto tau = kendall_tau(predicted, y);
    const auto rho = spearman_rho(predicted, y);
    if (tau.has_value() && rho.has_value()) {
      tau_sum += *tau;
      rho_sum += *rho;
      ++out.used_annotators;
    } else {
      ++out.skipped_annotators;
    }
  }
  if (out.used_annotators == 0) {
    out.skipped = true;
  } else {
    out.tau = tau_sum / out.used_annotators;
    out.rho = rho_sum / out.used_annotators;
  }
  return out;
}

std::vector<std::vector<int>> fold_partition(int n_videos, int folds,
                                             std::uint64_t seed, int repeat) {
  if (folds < 1 || n_videos < folds) {
    throw std::invalid_argument("fold_partition: need at least one video per fold");
  }
  std::vector<int> order(static_cast<std::size_t>(n_videos));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(repeat)));
  rng.shuffle(order);

  std::vector<std::vector<int>> parts;
  const int base = n_videos / folds;
  const int rem = n_videos % folds;
  int cursor = 0;
  for (int f = 0; f < folds; ++f) {
    const int size = base + (f < rem ? 1 : 0);
    parts.emplace_back(order.begin() + cursor, order.begin() + cursor + size);
    cursor += size;
  }
  return parts;
}

EvalReport cross_validate(const Dataset& dataset, const TrainEvalFn& train_fn,
                          const CrossValidateOptions& options) {
  if (options.folds < 1 || options.repeats < 1) {
    throw std::invalid_argument("cross_validate: folds and repeats must be >= 1");
  }
  if (static_cast<int>(dataset.videos.size()) < options.folds) {
    throw std::invalid_argument("cross_validate: fewer videos than folds");
  }

  EvalReport report;
  report.folds = options.folds;
  report.repeats = options.repeats;
  report.master_seed = options.seed;
  report.results.resize(static_cast<std::size_t>(options.folds) * options.repeats);

  struct Task {
    int repeat;
    int fold;
    std::vector<const VideoRecord*> train;
    std::vector<const VideoRecord*> test;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (int r = 0; r < options.repeats; ++r) {
    const auto parts = fold_partition(static_cast<int>(dataset.videos.size()),
                                      options.folds, options.seed, r);
    for (int f = 0; f < options.folds; ++f) {
      Task task;
      task.repeat = r;
      task.fold = f;
      task.seed = mix_seed(options.seed,
                           static_cast<std::uint64_t>(r) * 1000 + f + 1);
      report.fold_seeds.push_back(task.seed);
      for (int fi = 0; fi < options.folds; ++fi) {
        for (int idx : parts[static_cast<std::size_t>(fi)]) {
          const VideoRecord* rec = &dataset.videos[static_cast<std::size_t>(idx)];
          if (fi == f) {
            task.test.push_back(rec);
          } else {
            task.train.push_back(rec);
          }
        }
      }
      tasks.push_back(std::move(task));
    }
  }

  auto run_task = [&](const Task& task) {
    FoldResult result = train_fn(task.train, task.test, task.seed);
    result.repeat = task.repeat;
    result.fold = task.fold;
    result.seed = task.seed;
    double tau = 0.0, rho = 0.0;
    int used = 0;
    for (const auto& v : result.videos) {
      if (v.skipped) continue;
      tau += v.tau;
      rho += v.rho;
      ++used;
    }
    result.evaluated = used;
    result.mean_tau = used ? tau / used : 0.0;
    result.mean_rho = used ? rho / used : 0.0;
    report.results[static_cast<std::size_t>(task.repeat) * options.folds +
                   task.fold] = std::move(result);
  };

  const int jobs = std::max(1, options.jobs);
  if (jobs == 1) {
    for (const auto& task : tasks) run_task(task);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&]() {
        while (true) {
          const std::size_t i = next.fetch_add(1);
          if (i >= tasks.size()) break;
          run_task(tasks[i]);
        }
      });
    }
    for (auto& t : workers) t.join();
  }

  for (int r = 0; r < options.repeats; ++r) {
    double tau = 0.0, rho = 0.0;
    for (int f = 0; f < options.folds; ++f) {
      const auto& res = report.results[static_cast<std::size_t>(r) * options.folds + f];
      tau += res.mean_tau;
      rho += res.mean_rho;
    }
    report.repeat_tau.push_back(tau / options.folds);
    report.repeat_rho.push_back(rho / options.folds);
  }
  report.overall_tau =
      std::accumulate(report.repeat_tau.begin(), report.repeat_tau.end(), 0.0) /
      options.repeats;
  report.overall_rho =
      std::accumulate(report.repeat_rho.begin(), report.repeat_rho.end(), 0.0) /
      options.repeats;
  return report;
}

std::string eval_report_text(const EvalReport& report) {
  std::ostringstream os;
  os << "cross-validation: " << report.folds << " folds x " << report.repeats
     << " repeats, master seed " << report.master_seed << "\n";
  for (const auto& res : report.results) {
    os << "  repeat " << res.repeat << " fold " << res.fold << " (seed "
       << res.seed << ", best epoch " << res.best_epoch
       << "): tau=" << res.mean_tau << " rho=" << res.mean_rho << " over "
       << res.evaluated << " videos\n";
  }
  for (std::size_t r = 0; r < report.repeat_tau.size(); ++r) {
    os << "repeat " << r << " mean: tau=" << report.repeat_tau[r]
       << " rho=" << report.repeat_rho[r] << "\n";
  }
  os << "overall: tau=" << report.overall_tau << " rho=" << report.overall_rho
     << "\n";
  return os.str();
}

std::string eval_report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "repeat,fold,seed,best_epoch,video,tau,rho,skipped\n";
  for (const auto& res : report.results) {
    for (const auto& v : res.videos) {
      os << res.repeat << ',' << res.fold << ',' << res.seed << ','
         << res.best_epoch << ',' << v.id << ',' << v.tau << ',' << v.rho
         << ',' << (v.skipped ? 1 : 0) << "\n";
    }
  }
  os << "overall,,,,," << report.overall_tau << ',' << report.overall_rho
     << ",\n";
  return os.str();
}

}  // namespace csta
