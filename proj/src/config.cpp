#include "csta/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace csta {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw std::invalid_argument("config: '" + key + "' expects a boolean, got '" +
                              value + "'");
}

}  // namespace

IniMap IniMap::parse_text(const std::string& text) {
  IniMap ini;
  std::istringstream is(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw std::invalid_argument("config: malformed section at line " +
                                    std::to_string(line_no));
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: expected 'key = value' at line " +
                                  std::to_string(line_no));
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument("config: empty key at line " +
                                  std::to_string(line_no));
    }
    ini.values_[section.empty() ? key : section + "." + key] = value;
  }
  return ini;
}

IniMap IniMap::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::stringstream buffer;
  buffer << is.rdbuf();
  return parse_text(buffer.str());
}

std::optional<std::string> IniMap::get(const std::string& dotted_key) const {
  const auto it = values_.find(dotted_key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

void IniMap::set(const std::string& dotted_key, const std::string& value) {
  values_[dotted_key] = value;
}

std::string IniMap::serialize() const {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    if (sec != section) {
      if (!section.empty() || !os.str().empty()) os << "\n";
      os << "[" << sec << "]\n";
      section = sec;
    }
    os << name << " = " << value << "\n";
  }
  return os.str();
}

void RunConfig::apply(const IniMap& ini) {
  auto s = [&](const char* key, std::string& out) {
    if (auto v = ini.get(key)) out = *v;
  };
  auto i = [&](const char* key, int& out) {
    if (auto v = ini.get(key)) out = std::stoi(*v);
  };
  auto u64 = [&](const char* key, std::uint64_t& out) {
    if (auto v = ini.get(key)) out = std::stoull(*v);
  };
  auto f = [&](const char* key, float& out) {
    if (auto v = ini.get(key)) out = std::stof(*v);
  };
  auto d = [&](const char* key, double& out) {
    if (auto v = ini.get(key)) out = std::stod(*v);
  };
  auto b = [&](const char* key, bool& out) {
    if (auto v = ini.get(key)) out = parse_bool(*v, key);
  };

  s("data.path", data_dir);
  s("run.out", out_dir);
  u64("run.seed", seed);
  i("run.jobs", jobs);
  s("run.checkpoint", checkpoint);

  i("model.dim", model.dim);
  i("model.reduction", model.reduction);
  f("model.dropout", model.dropout_rate);
  f("model.ln_eps", model.ln_eps);
  b("model.use_softmax", model.use_softmax);
  b("model.use_cls", model.use_cls);
  b("model.use_pos_enc", model.use_pos_enc);
  b("model.use_skip", model.use_skip);

  i("train.epochs", train.epochs);
  i("train.batch_size", train.batch_size);
  f("train.learning_rate", train.learning_rate);
  f("train.weight_decay", train.weight_decay);
  f("train.adam_beta1", train.adam_beta1);
  f("train.adam_beta2", train.adam_beta2);
  f("train.adam_eps", train.adam_eps);
  f("train.dropout", train.dropout);
  b("train.decoupled_weight_decay", train.decoupled_weight_decay);
  f("train.grad_clip_norm", train.grad_clip_norm);
  i("train.folds", folds);
  i("train.repeats", repeats);

  i("gen.videos", gen.n_videos);
  i("gen.t_min", gen.t_min);
  i("gen.t_max", gen.t_max);
  i("gen.dim", gen.dim);
  i("gen.segments", gen.n_segments);
  i("gen.annotators", gen.n_annotators);
  f("gen.noise", gen.noise);
  s("gen.name", gen.name);
  if (auto v = ini.get("gen.kind")) {
    if (*v == "scores") gen.annotation_kind = AnnotationKind::scores;
    else if (*v == "summaries") gen.annotation_kind = AnnotationKind::summaries;
    else throw std::invalid_argument("config: gen.kind must be scores or summaries");
  }

  d("summary.budget_ratio", budget_ratio);
  i("kts.max_changes", kts.max_changes);
  if (auto v = ini.get("kts.penalty")) {
    kts.penalty = std::stod(*v);
  }
  if (auto v = ini.get("kts.kernel")) {
    if (*v == "linear") kts.kernel = KtsKernel::linear;
    else if (*v == "rbf") kts.kernel = KtsKernel::rbf;
    else throw std::invalid_argument("config: kts.kernel must be linear or rbf");
  }
  d("kts.rbf_gamma", kts.rbf_gamma);
}

IniMap RunConfig::to_ini() const {
  IniMap ini;
  auto fmt = [](auto v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  ini.set("data.path", data_dir);
  ini.set("run.out", out_dir);
  ini.set("run.seed", fmt(seed));
  ini.set("run.jobs", fmt(jobs));
  ini.set("run.checkpoint", checkpoint);

  ini.set("model.dim", fmt(model.dim));
  ini.set("model.reduction", fmt(model.reduction));
  ini.set("model.dropout", fmt(model.dropout_rate));
  ini.set("model.ln_eps", fmt(model.ln_eps));
  ini.set("model.use_softmax", model.use_softmax ? "true" : "false");
  ini.set("model.use_cls", model.use_cls ? "true" : "false");
  ini.set("model.use_pos_enc", model.use_pos_enc ? "true" : "false");
  ini.set("model.use_skip", model.use_skip ? "true" : "false");

  ini.set("train.epochs", fmt(train.epochs));
  ini.set("train.batch_size", fmt(train.batch_size));
  ini.set("train.learning_rate", fmt(train.learning_rate));
  ini.set("train.weight_decay", fmt(train.weight_decay));
  ini.set("train.adam_beta1", fmt(train.adam_beta1));
  ini.set("train.adam_beta2", fmt(train.adam_beta2));
  ini.set("train.adam_eps", fmt(train.adam_eps));
  ini.set("train.dropout", fmt(train.dropout));
  ini.set("train.decoupled_weight_decay",
          train.decoupled_weight_decay ? "true" : "false");
  ini.set("train.grad_clip_norm", fmt(train.grad_clip_norm));
  ini.set("train.folds", fmt(folds));
  ini.set("train.repeats", fmt(repeats));

  ini.set("gen.videos", fmt(gen.n_videos));
  ini.set("gen.t_min", fmt(gen.t_min));
  ini.set("gen.t_max", fmt(gen.t_max));
  ini.set("gen.dim", fmt(gen.dim));
  ini.set("gen.segments", fmt(gen.n_segments));
  ini.set("gen.annotators", fmt(gen.n_annotators));
  ini.set("gen.noise", fmt(gen.noise));
  ini.set("gen.name", gen.name);
  ini.set("gen.kind", gen.annotation_kind == AnnotationKind::scores
                          ? "scores"
                          : "summaries");

  ini.set("summary.budget_ratio", fmt(budget_ratio));
  ini.set("kts.max_changes", fmt(kts.max_changes));
  if (kts.penalty.has_value()) ini.set("kts.penalty", fmt(*kts.penalty));
  ini.set("kts.kernel", kts.kernel == KtsKernel::linear ? "linear" : "rbf");
  ini.set("kts.rbf_gamma", fmt(kts.rbf_gamma));
  return ini;
}

}  // namespace csta
