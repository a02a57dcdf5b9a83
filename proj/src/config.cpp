#include "tempo/config.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <vector>

#include "tempo/errors.hpp"
#include "tempo/losses.hpp"

namespace tempo {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(where + ": expected true or false, got '" + v + "'");
}

long long parse_ll(const std::string& v, const std::string& where) {
  size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected an integer, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(where + ": expected an integer, got '" + v + "'");
  return out;
}

int parse_int(const std::string& v, const std::string& where) {
  return static_cast<int>(parse_ll(v, where));
}

uint64_t parse_u64(const std::string& v, const std::string& where) {
  size_t used = 0;
  uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected an unsigned integer, got '" + v + "'");
  }
  if (used != v.size())
    throw ConfigError(where + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v, const std::string& where) {
  size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected a number, got '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(where + ": expected a number, got '" + v + "'");
  return out;
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<int> parse_int_list(const std::string& v, const std::string& where) {
  std::vector<int> out;
  for (const std::string& item : split_commas(v)) out.push_back(parse_int(item, where));
  return out;
}

AugmentKind augment_from_string(const std::string& s, const std::string& where) {
  if (s == "crop") return AugmentKind::kCrop;
  if (s == "flip") return AugmentKind::kFlip;
  if (s == "rotate") return AugmentKind::kRotate;
  if (s == "copy_paste") return AugmentKind::kCopyPaste;
  throw ConfigError(where + ": unknown augmentation '" + s +
                    "' (crop, flip, rotate, copy_paste)");
}

std::string augments_to_string(const std::set<AugmentKind>& a) {
  std::string out;
  auto add = [&](AugmentKind k, const char* name) {
    if (!a.count(k)) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(AugmentKind::kCrop, "crop");
  add(AugmentKind::kFlip, "flip");
  add(AugmentKind::kRotate, "rotate");
  add(AugmentKind::kCopyPaste, "copy_paste");
  return out;
}

QueueSampling sampling_from_string(const std::string& s, const std::string& where) {
  if (s == "uniform") return QueueSampling::kUniform;
  if (s == "recency") return QueueSampling::kRecency;
  throw ConfigError(where + ": unknown sampling '" + s + "' (uniform, recency)");
}

std::string to_string(QueueSampling s) {
  return s == QueueSampling::kUniform ? "uniform" : "recency";
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string int_list_str(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

void apply_entry(RunConfig& rc, const std::string& sec, const std::string& key,
                 const std::string& v) {
  const std::string where = sec + "." + key;
  if (sec == "run") {
    if (key == "task") {
      if (v != "stabilize" && v != "propagate" && v != "evaluate" && v != "toy")
        throw ConfigError(where + ": unknown task '" + v + "'");
      rc.task = v;
      return;
    }
    if (key == "seed") { rc.seed = parse_u64(v, where); return; }
    if (key == "jobs") { rc.jobs = parse_int(v, where); return; }
    if (key == "window") { rc.window = parse_int(v, where); return; }
  } else if (sec == "io") {
    if (key == "input_dir") { rc.input_dir = v; return; }
    if (key == "processed_dir") { rc.processed_dir = v; return; }
    if (key == "out_dir") { rc.out_dir = v; return; }
    if (key == "flow_manifest") { rc.flow_manifest = v; return; }
  } else if (sec == "net") {
    if (key == "backbone") { rc.net.backbone = backbone_from_string(v); return; }
    if (key == "depth") { rc.net.depth = parse_int(v, where); return; }
    if (key == "base_channels") { rc.net.base_channels = parse_int(v, where); return; }
    if (key == "heads") {
      rc.net.heads = parse_int(v, where);
      rc.net_heads_set = true;
      return;
    }
    if (key == "in_channels") { rc.net.in_channels = parse_int(v, where); return; }
    if (key == "out_channels") { rc.net.out_channels = parse_int(v, where); return; }
    if (key == "final_activation") {
      rc.net.final_activation = activation_from_string(v);
      return;
    }
  } else if (sec == "train") {
    TrainConfig& t = rc.train;
    if (key == "learning_rate") { t.learning_rate = parse_double(v, where); return; }
    if (key == "epochs") { t.epochs = parse_int(v, where); return; }
    if (key == "loss") { t.loss = loss_from_string(v); return; }
    if (key == "perceptual_weight") { t.perceptual_weight = parse_double(v, where); return; }
    if (key == "feature_weights") { t.feature_weights = v; return; }
    if (key == "irt") { t.irt = parse_bool(v, where); return; }
    if (key == "delta") { t.delta = parse_double(v, where); return; }
    if (key == "warmup_iterations") { t.warmup_iterations = parse_int(v, where); return; }
    if (key == "main_mode_frame") { t.main_mode_frame = parse_int(v, where); return; }
    if (key == "confidence_per_epoch") { t.confidence_per_epoch = parse_bool(v, where); return; }
    if (key == "coarse_to_fine") { t.coarse_to_fine = parse_bool(v, where); return; }
    if (key == "coarse_scale") { t.coarse_scale = parse_double(v, where); return; }
    if (key == "coarse_epoch_percent") { t.coarse_epoch_percent = parse_int(v, where); return; }
    if (key == "init_checkpoint") { t.init_checkpoint = v; return; }
    if (key == "auto_stop") { t.auto_stop = parse_bool(v, where); return; }
    if (key == "auto_stop_window") { t.auto_stop_window = parse_int(v, where); return; }
    if (key == "auto_stop_threshold") { t.auto_stop_threshold = parse_double(v, where); return; }
  } else if (sec == "propagate") {
    PropagationConfig& p = rc.prop;
    if (key == "k_iterations") { p.k_iterations = parse_int(v, where); return; }
    if (key == "task") { p.task = task_from_string(v); return; }
    if (key == "sampling") { p.sampling = sampling_from_string(v, where); return; }
    if (key == "augmentation") {
      p.augmentation.clear();
      if (!v.empty())
        for (const std::string& item : split_commas(v))
          p.augmentation.insert(augment_from_string(item, where));
      return;
    }
    if (key == "crop_h") { p.crop_h = parse_int(v, where); return; }
    if (key == "crop_w") { p.crop_w = parse_int(v, where); return; }
    if (key == "reinfer_all") { p.reinfer_all = parse_bool(v, where); return; }
  } else if (sec == "toy") {
    ToyConfig& t = rc.toy;
    if (key == "n_frames") { t.n_frames = parse_int(v, where); return; }
    if (key == "input_dim") { t.input_dim = parse_int(v, where); return; }
    if (key == "out_dim") { t.out_dim = parse_int(v, where); return; }
    if (key == "noise_scale") { t.noise_scale = parse_double(v, where); return; }
    if (key == "bimodal") { t.bimodal = parse_bool(v, where); return; }
    if (key == "cluster_separation") { t.cluster_separation = parse_double(v, where); return; }
    if (key == "iterations") { t.iterations = parse_int(v, where); return; }
    if (key == "snapshot_iters") { t.snapshot_iters = parse_int_list(v, where); return; }
    if (key == "hidden_dim") { t.hidden_dim = parse_int(v, where); return; }
    if (key == "learning_rate") { t.learning_rate = parse_double(v, where); return; }
    if (key == "warmup_iterations") { t.warmup_iterations = parse_int(v, where); return; }
    if (key == "delta") { t.delta = parse_double(v, where); return; }
    if (key == "irt") { rc.toy_irt = parse_bool(v, where); return; }
  } else if (sec == "metrics") {
    if (key == "channel_mean") { rc.metrics.channel_mean = parse_bool(v, where); return; }
    if (key == "alpha1") { rc.metrics.alpha1 = parse_double(v, where); return; }
    if (key == "alpha2") { rc.metrics.alpha2 = parse_double(v, where); return; }
  } else {
    throw ConfigError("unknown config section '" + sec +
                      "' (run, io, net, train, propagate, toy, metrics)");
  }
  throw ConfigError("unknown config key '" + where + "'");
}

}  // namespace

ConfigFile parse_config_text(const std::string& text, const std::string& what) {
  ConfigFile f;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const std::string where = what + ":" + std::to_string(lineno);
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3)
        throw ConfigError(where + ": malformed section header '" + s + "'");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      f.sections[section];
      continue;
    }
    const size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ": expected 'key = value', got '" + s + "'");
    if (section.empty()) throw ConfigError(where + ": key before any [section]");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!f.sections[section].emplace(key, value).second)
      throw ConfigError(where + ": duplicate key '" + key + "'");
  }
  return f;
}

ConfigFile parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw DataError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

void RunConfig::validate() const {
  if (task != "stabilize" && task != "propagate" && task != "evaluate" && task != "toy")
    throw ConfigError("unknown task '" + task + "'");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  if (window < 2) throw ConfigError("clip window needs at least two frames");
}

void apply_config(RunConfig& rc, const ConfigFile& f) {
  for (const auto& [section, kv] : f.sections)
    for (const auto& [key, value] : kv) apply_entry(rc, section, key, value);
}

std::string write_run_config(const RunConfig& rc) {
  std::ostringstream o;
  o << "# tempo " << kVersion << "\n\n";
  o << "[run]\n"
    << "task = " << rc.task << "\n"
    << "seed = " << rc.seed << "\n"
    << "jobs = " << rc.jobs << "\n"
    << "window = " << rc.window << "\n\n";
  o << "[io]\n"
    << "input_dir = " << rc.input_dir << "\n"
    << "processed_dir = " << rc.processed_dir << "\n"
    << "out_dir = " << rc.out_dir << "\n"
    << "flow_manifest = " << rc.flow_manifest << "\n\n";
  o << "[net]\n"
    << "backbone = " << to_string(rc.net.backbone) << "\n"
    << "depth = " << rc.net.depth << "\n"
    << "base_channels = " << rc.net.base_channels << "\n";
  if (rc.net_heads_set) o << "heads = " << rc.net.heads << "\n";
  o << "in_channels = " << rc.net.in_channels << "\n"
    << "out_channels = " << rc.net.out_channels << "\n"
    << "final_activation = " << to_string(rc.net.final_activation) << "\n\n";
  const TrainConfig& t = rc.train;
  o << "[train]\n"
    << "learning_rate = " << format_g(t.learning_rate) << "\n"
    << "epochs = " << t.epochs << "\n"
    << "loss = " << to_string(t.loss) << "\n"
    << "perceptual_weight = " << format_g(t.perceptual_weight) << "\n"
    << "feature_weights = " << t.feature_weights << "\n"
    << "irt = " << bool_str(t.irt) << "\n"
    << "delta = " << format_g(t.delta) << "\n"
    << "warmup_iterations = " << t.warmup_iterations << "\n"
    << "main_mode_frame = " << t.main_mode_frame << "\n"
    << "confidence_per_epoch = " << bool_str(t.confidence_per_epoch) << "\n"
    << "coarse_to_fine = " << bool_str(t.coarse_to_fine) << "\n"
    << "coarse_scale = " << format_g(t.coarse_scale) << "\n"
    << "coarse_epoch_percent = " << t.coarse_epoch_percent << "\n"
    << "init_checkpoint = " << t.init_checkpoint << "\n"
    << "auto_stop = " << bool_str(t.auto_stop) << "\n"
    << "auto_stop_window = " << t.auto_stop_window << "\n"
    << "auto_stop_threshold = " << format_g(t.auto_stop_threshold) << "\n\n";
  const PropagationConfig& p = rc.prop;
  o << "[propagate]\n"
    << "k_iterations = " << p.k_iterations << "\n"
    << "task = " << to_string(p.task) << "\n"
    << "sampling = " << to_string(p.sampling) << "\n"
    << "augmentation = " << augments_to_string(p.augmentation) << "\n"
    << "crop_h = " << p.crop_h << "\n"
    << "crop_w = " << p.crop_w << "\n"
    << "reinfer_all = " << bool_str(p.reinfer_all) << "\n\n";
  const ToyConfig& y = rc.toy;
  o << "[toy]\n"
    << "n_frames = " << y.n_frames << "\n"
    << "input_dim = " << y.input_dim << "\n"
    << "out_dim = " << y.out_dim << "\n"
    << "noise_scale = " << format_g(y.noise_scale) << "\n"
    << "bimodal = " << bool_str(y.bimodal) << "\n"
    << "cluster_separation = " << format_g(y.cluster_separation) << "\n"
    << "iterations = " << y.iterations << "\n"
    << "snapshot_iters = " << int_list_str(y.snapshot_iters) << "\n"
    << "hidden_dim = " << y.hidden_dim << "\n"
    << "learning_rate = " << format_g(y.learning_rate) << "\n"
    << "warmup_iterations = " << y.warmup_iterations << "\n"
    << "delta = " << format_g(y.delta) << "\n"
    << "irt = " << bool_str(rc.toy_irt) << "\n\n";
  o << "[metrics]\n"
    << "channel_mean = " << bool_str(rc.metrics.channel_mean) << "\n"
    << "alpha1 = " << format_g(rc.metrics.alpha1) << "\n"
    << "alpha2 = " << format_g(rc.metrics.alpha2) << "\n";
  return o.str();
}

}  // namespace tempo
