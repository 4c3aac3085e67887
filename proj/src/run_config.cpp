#include "edgedepth/run_config.hpp"

#include <fstream>
#include <sstream>

#include "edgedepth/errors.hpp"

namespace edgedepth {

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  if (epochs < 1) throw ConfigError("train.epochs must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0)) throw ConfigError("opt.beta1 out of range");
  if (!(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) throw ConfigError("opt.beta2 out of range");
  if (!(optim.eps > 0.0)) throw ConfigError("opt.eps must be positive");
  if (!(optim.lr_start > 0.0) || !(optim.lr_end > 0.0)) {
    throw ConfigError("opt.lr_start and opt.lr_end must be positive");
  }
  if (!(cap_max > cap_min)) throw ConfigError("eval.cap_max must exceed eval.cap_min");
  if (augment.hflip_prob < 0.0 || augment.hflip_prob > 1.0) {
    throw ConfigError("aug.hflip_prob must be in [0, 1]");
  }
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

}  // namespace

std::string RunConfig::resolved_text() const {
  std::ostringstream os;
  os << "preset=" << preset << "\n";
  os << "model.input_h=" << model.input_h << "\n";
  os << "model.input_w=" << model.input_w << "\n";
  os << "model.enc_widths=" << model.enc_widths[0] << "," << model.enc_widths[1] << ","
     << model.enc_widths[2] << "," << model.enc_widths[3] << "," << model.enc_widths[4]
     << "\n";
  os << "model.pem8.channels=" << model.pem8.reduced_channels << "\n";
  os << "model.pem8.embed_dim=" << model.pem8.embed_dim << "\n";
  os << "model.pem8.out_channels=" << model.pem8.out_channels << "\n";
  os << "model.pem16.channels=" << model.pem16.reduced_channels << "\n";
  os << "model.pem16.embed_dim=" << model.pem16.embed_dim << "\n";
  os << "model.pem16.out_channels=" << model.pem16.out_channels << "\n";
  os << "model.k=" << model.k << "\n";
  os << "model.max_depth=" << fmt(model.max_depth) << "\n";
  os << "model.aspp_rates=" << join_ints(model.aspp_rates) << "\n";
  os << "model.aspp_pointwise=" << (model.aspp_pointwise ? 1 : 0) << "\n";
  os << "model.aspp_global=" << (model.aspp_global ? 1 : 0) << "\n";
  os << "model.decoder_channels=" << model.decoder_channels << "\n";
  os << "model.use_patch_modules=" << (model.use_patch_modules ? 1 : 0) << "\n";
  os << "model.relu_slope=" << fmt(model.relu_slope) << "\n";
  os << "loss.lambda=" << fmt(loss.lambda) << "\n";
  os << "aug.hflip_prob=" << fmt(augment.hflip_prob) << "\n";
  os << "aug.rotate_deg=" << fmt(augment.rotate_deg) << "\n";
  os << "aug.brightness=" << fmt(augment.brightness) << "\n";
  os << "aug.contrast=" << fmt(augment.contrast) << "\n";
  os << "aug.color=" << fmt(augment.color) << "\n";
  os << "opt.beta1=" << fmt(optim.beta1) << "\n";
  os << "opt.beta2=" << fmt(optim.beta2) << "\n";
  os << "opt.eps=" << fmt(optim.eps) << "\n";
  os << "opt.lr_start=" << fmt(optim.lr_start) << "\n";
  os << "opt.lr_end=" << fmt(optim.lr_end) << "\n";
  os << "opt.cosine=" << (optim.cosine ? 1 : 0) << "\n";
  os << "train.epochs=" << epochs << "\n";
  os << "train.batch_size=" << batch_size << "\n";
  os << "train.seed=" << seed << "\n";
  os << "paths.data_root=" << data_root << "\n";
  os << "paths.out_dir=" << out_dir << "\n";
  os << "eval.cap_min=" << fmt(cap_min) << "\n";
  os << "eval.cap_max=" << fmt(cap_max) << "\n";
  os << "eval.crop=" << crop_mode_name(crop_mode) << "\n";
  return os.str();
}

RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  cfg.preset = name;
  if (name == "desk") {
    cfg.model.input_h = 64;
    cfg.model.input_w = 64;
    cfg.model.enc_widths = {4, 8, 16, 24, 48};
    cfg.model.pem8 = {12, 12, 12, 4, 4};
    cfg.model.pem16 = {12, 12, 12, 2, 2};
    cfg.model.k = 3;
    cfg.model.max_depth = 10.0;
    cfg.model.decoder_channels = 24;
    cfg.epochs = 250;
    cfg.batch_size = 4;
    cfg.optim.lr_start = 2e-3;
    cfg.optim.lr_end = 2e-4;
    cfg.augment = AugmentConfig{0.0, 0.0, 0.0, 0.0, 0.0};
    cfg.cap_min = 0.0;
    cfg.cap_max = 10.0;
    cfg.crop_mode = CropMode::kNone;
  } else if (name == "nyu") {
    cfg.model.input_h = 480;
    cfg.model.input_w = 640;
    cfg.model.enc_widths = {16, 24, 32, 48, 64};
    cfg.model.pem8 = {24, 32, 24, 4, 4};
    cfg.model.pem16 = {24, 32, 24, 2, 2};
    cfg.model.k = 9;
    cfg.model.max_depth = 10.0;
    cfg.model.decoder_channels = 32;
    cfg.epochs = 50;
    cfg.batch_size = 4;
    cfg.optim.lr_start = 1e-4;
    cfg.optim.lr_end = 1e-5;
    cfg.augment = AugmentConfig{0.5, 2.5, 0.2, 0.2, 0.1};
    cfg.cap_min = 0.0;
    cfg.cap_max = 10.0;
    cfg.crop_mode = CropMode::kEigenCenter;
  } else if (name == "kitti") {
    cfg.model.input_h = 352;
    cfg.model.input_w = 1216;
    cfg.model.enc_widths = {16, 24, 32, 48, 64};
    cfg.model.pem8 = {24, 32, 24, 4, 4};
    cfg.model.pem16 = {24, 32, 24, 2, 2};
    cfg.model.k = 9;
    cfg.model.max_depth = 80.0;
    cfg.model.decoder_channels = 32;
    cfg.epochs = 50;
    cfg.batch_size = 4;
    cfg.optim.lr_start = 1e-4;
    cfg.optim.lr_end = 1e-5;
    cfg.augment = AugmentConfig{0.5, 1.0, 0.2, 0.2, 0.1};
    cfg.cap_min = 0.0;
    cfg.cap_max = 80.0;
    cfg.crop_mode = CropMode::kKittiBottomCenter;
  } else {
    throw ConfigError("unknown preset '" + name + "' (desk|nyu|kitti)");
  }
  return cfg;
}

namespace {

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("config key '" + key + "': expected 0/1, got '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(parse_int(key, item));
  }
  if (out.empty()) {
    throw ConfigError("config key '" + key + "': expected a comma-separated list");
  }
  return out;
}

}  // namespace

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "preset") {
    cfg = preset_config(value);
  } else if (key == "model.input_h") {
    cfg.model.input_h = parse_int(key, value);
  } else if (key == "model.input_w") {
    cfg.model.input_w = parse_int(key, value);
  } else if (key == "model.enc_widths") {
    const std::vector<int> w = parse_int_list(key, value);
    if (w.size() != 5) {
      throw ConfigError("config key 'model.enc_widths': expected 5 widths");
    }
    std::copy(w.begin(), w.end(), cfg.model.enc_widths.begin());
  } else if (key == "model.pem8.channels") {
    cfg.model.pem8.reduced_channels = parse_int(key, value);
  } else if (key == "model.pem8.embed_dim") {
    cfg.model.pem8.embed_dim = parse_int(key, value);
  } else if (key == "model.pem8.out_channels") {
    cfg.model.pem8.out_channels = parse_int(key, value);
  } else if (key == "model.pem16.channels") {
    cfg.model.pem16.reduced_channels = parse_int(key, value);
  } else if (key == "model.pem16.embed_dim") {
    cfg.model.pem16.embed_dim = parse_int(key, value);
  } else if (key == "model.pem16.out_channels") {
    cfg.model.pem16.out_channels = parse_int(key, value);
  } else if (key == "model.k") {
    cfg.model.k = parse_int(key, value);
  } else if (key == "model.max_depth") {
    cfg.model.max_depth = parse_double(key, value);
  } else if (key == "model.aspp_rates") {
    cfg.model.aspp_rates = parse_int_list(key, value);
  } else if (key == "model.aspp_pointwise") {
    cfg.model.aspp_pointwise = parse_bool(key, value);
  } else if (key == "model.aspp_global") {
    cfg.model.aspp_global = parse_bool(key, value);
  } else if (key == "model.decoder_channels") {
    cfg.model.decoder_channels = parse_int(key, value);
  } else if (key == "model.use_patch_modules") {
    cfg.model.use_patch_modules = parse_bool(key, value);
  } else if (key == "model.relu_slope") {
    cfg.model.relu_slope = parse_double(key, value);
  } else if (key == "loss.lambda") {
    cfg.loss.lambda = parse_double(key, value);
  } else if (key == "aug.hflip_prob") {
    cfg.augment.hflip_prob = parse_double(key, value);
  } else if (key == "aug.rotate_deg") {
    cfg.augment.rotate_deg = parse_double(key, value);
  } else if (key == "aug.brightness") {
    cfg.augment.brightness = parse_double(key, value);
  } else if (key == "aug.contrast") {
    cfg.augment.contrast = parse_double(key, value);
  } else if (key == "aug.color") {
    cfg.augment.color = parse_double(key, value);
  } else if (key == "opt.beta1") {
    cfg.optim.beta1 = parse_double(key, value);
  } else if (key == "opt.beta2") {
    cfg.optim.beta2 = parse_double(key, value);
  } else if (key == "opt.eps") {
    cfg.optim.eps = parse_double(key, value);
  } else if (key == "opt.lr_start") {
    cfg.optim.lr_start = parse_double(key, value);
  } else if (key == "opt.lr_end") {
    cfg.optim.lr_end = parse_double(key, value);
  } else if (key == "opt.cosine") {
    cfg.optim.cosine = parse_bool(key, value);
  } else if (key == "train.epochs") {
    cfg.epochs = parse_int(key, value);
  } else if (key == "train.batch_size") {
    cfg.batch_size = parse_int(key, value);
  } else if (key == "train.seed") {
    cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "paths.data_root") {
    cfg.data_root = value;
  } else if (key == "paths.out_dir") {
    cfg.out_dir = value;
  } else if (key == "eval.cap_min") {
    cfg.cap_min = parse_double(key, value);
  } else if (key == "eval.cap_max") {
    cfg.cap_max = parse_double(key, value);
  } else if (key == "eval.crop") {
    cfg.crop_mode = crop_mode_from_string(value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

RunConfig load_run_config(const std::string& path, const std::string& preset) {
  RunConfig cfg = preset_config(preset);
  std::ifstream f(path);
  if (!f) {
    throw ConfigError("cannot open config file '" + path + "'");
  }
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key=value, got '" + line + "'");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto key_end = key.find_last_not_of(" \t");
    key = key.substr(0, key_end == std::string::npos ? 0 : key_end + 1);
    const auto val_start = value.find_first_not_of(" \t");
    value = val_start == std::string::npos ? "" : value.substr(val_start);
    apply_override(cfg, key, value);
  }
  return cfg;
}

void apply_cap_range(RunConfig& cfg, const std::string& range) {
  const std::size_t dash = range.find('-');
  if (dash == std::string::npos || dash == 0 || dash + 1 >= range.size()) {
    throw ConfigError("cap range '" + range + "' must look like '0-80'");
  }
  cfg.cap_min = parse_double("cap", range.substr(0, dash));
  cfg.cap_max = parse_double("cap", range.substr(dash + 1));
  if (!(cfg.cap_max > cfg.cap_min)) {
    throw ConfigError("cap range '" + range + "': max must exceed min");
  }
}

}  // namespace edgedepth
