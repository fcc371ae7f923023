#include "patchmix/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>

namespace patchmix {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

uint64_t parse_u64(const std::string& v) {
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ArgumentError("config: bad unsigned value '" + v + "'");
  }
}

int parse_int(const std::string& v) {
  try {
    return std::stoi(v);
  } catch (const std::exception&) {
    throw ArgumentError("config: bad integer value '" + v + "'");
  }
}

double parse_double(const std::string& v) {
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    throw ArgumentError("config: bad numeric value '" + v + "'");
  }
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ArgumentError("config: bad boolean value '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v); }},
      {"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
      {"use_scm", [](RunConfig& c, const std::string& v) { c.use_scm = parse_bool(v); }},
      {"scm_rho", [](RunConfig& c, const std::string& v) { c.scm_rho = parse_double(v); }},
      {"scm_classes", [](RunConfig& c, const std::string& v) { c.scm_classes = parse_int(v); }},
      {"scm_novel", [](RunConfig& c, const std::string& v) { c.scm_novel = parse_int(v); }},
      {"scm_dim_s", [](RunConfig& c, const std::string& v) { c.scm_dim_s = parse_int(v); }},
      {"scm_dim_z", [](RunConfig& c, const std::string& v) { c.scm_dim_z = parse_int(v); }},
      {"scm_grid", [](RunConfig& c, const std::string& v) { c.scm_grid = parse_int(v); }},
      {"scm_image", [](RunConfig& c, const std::string& v) { c.scm_image = parse_int(v); }},
      {"scm_sigma", [](RunConfig& c, const std::string& v) { c.scm_sigma = parse_double(v); }},
      {"scm_scale", [](RunConfig& c, const std::string& v) { c.scm_scale = parse_double(v); }},
      {"scm_z_scale", [](RunConfig& c, const std::string& v) { c.scm_z_scale = parse_double(v); }},
      {"scm_train", [](RunConfig& c, const std::string& v) { c.scm_train = parse_int(v); }},
      {"scm_test", [](RunConfig& c, const std::string& v) { c.scm_test = parse_int(v); }},
      {"train_manifest", [](RunConfig& c, const std::string& v) { c.train_manifest = v; }},
      {"test_manifest", [](RunConfig& c, const std::string& v) { c.test_manifest = v; }},
      {"way", [](RunConfig& c, const std::string& v) { c.way = parse_int(v); }},
      {"shot", [](RunConfig& c, const std::string& v) { c.shot = parse_int(v); }},
      {"queries", [](RunConfig& c, const std::string& v) { c.queries = parse_int(v); }},
      {"feat_dim", [](RunConfig& c, const std::string& v) { c.feat_dim = parse_int(v); }},
      {"hidden", [](RunConfig& c, const std::string& v) { c.hidden = parse_int(v); }},
      {"grid", [](RunConfig& c, const std::string& v) { c.grid = parse_int(v); }},
      {"epochs1", [](RunConfig& c, const std::string& v) { c.epochs1 = parse_int(v); }},
      {"epochs2", [](RunConfig& c, const std::string& v) { c.epochs2 = parse_int(v); }},
      {"episodes_per_epoch", [](RunConfig& c, const std::string& v) { c.episodes_per_epoch = parse_int(v); }},
      {"lr", [](RunConfig& c, const std::string& v) { c.lr = parse_double(v); }},
      {"weight_decay", [](RunConfig& c, const std::string& v) { c.weight_decay = parse_double(v); }},
      {"momentum", [](RunConfig& c, const std::string& v) { c.momentum = parse_double(v); }},
      {"logit_scale", [](RunConfig& c, const std::string& v) { c.logit_scale = parse_double(v); }},
      {"augment", [](RunConfig& c, const std::string& v) { c.augment = v; }},
      {"cgr", [](RunConfig& c, const std::string& v) { c.cgr = parse_bool(v); }},
      {"cgr_temperature", [](RunConfig& c, const std::string& v) { c.cgr_temperature = parse_double(v); }},
      {"cgr_hard", [](RunConfig& c, const std::string& v) { c.cgr_hard = parse_bool(v); }},
      {"lambda_sel", [](RunConfig& c, const std::string& v) { c.lambda_sel = parse_double(v); }},
      {"lambda_rec", [](RunConfig& c, const std::string& v) { c.lambda_rec = parse_double(v); }},
      {"distill", [](RunConfig& c, const std::string& v) { c.distill = v; }},
      {"distill_temperature", [](RunConfig& c, const std::string& v) { c.distill_temperature = parse_double(v); }},
      {"iv_trace", [](RunConfig& c, const std::string& v) { c.iv_trace = parse_bool(v); }},
      {"iv_repeats", [](RunConfig& c, const std::string& v) { c.iv_repeats = parse_int(v); }},
      {"iv_novel_way", [](RunConfig& c, const std::string& v) { c.iv_novel_way = parse_int(v); }},
      {"eval_episodes", [](RunConfig& c, const std::string& v) { c.eval_episodes = parse_int(v); }},
      {"exp_eval_episodes", [](RunConfig& c, const std::string& v) { c.exp_eval_episodes = parse_int(v); }},
      {"checkpoint", [](RunConfig& c, const std::string& v) { c.checkpoint = v; }},
      {"pretrain_epochs", [](RunConfig& c, const std::string& v) { c.pretrain_epochs = parse_int(v); }},
      {"pretrain_batches", [](RunConfig& c, const std::string& v) { c.pretrain_batches = parse_int(v); }},
      {"batch", [](RunConfig& c, const std::string& v) { c.batch = parse_int(v); }},
      {"moco_temperature", [](RunConfig& c, const std::string& v) { c.moco_temperature = parse_double(v); }},
      {"momentum_m", [](RunConfig& c, const std::string& v) { c.momentum_m = parse_double(v); }},
      {"key_bank", [](RunConfig& c, const std::string& v) { c.key_bank = parse_int(v); }},
      {"clusters", [](RunConfig& c, const std::string& v) { c.clusters = parse_int(v); }},
      {"partitions", [](RunConfig& c, const std::string& v) { c.partitions = parse_int(v); }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  if (way < 2 || shot < 1 || queries < 1)
    throw ArgumentError("config: bad way/shot/queries");
  if (augment != "none" && augment != "mixup" && augment != "cutmix" &&
      augment != "patchmix")
    throw ArgumentError("config: augment must be none|mixup|cutmix|patchmix");
  if (distill != "auto" && distill != "mse" && distill != "kl")
    throw ArgumentError("config: distill must be auto|mse|kl");
  if (lr <= 0.0 || logit_scale <= 0.0)
    throw ArgumentError("config: lr and logit_scale must be positive");
  if (epochs1 < 0 || epochs2 < 0 || episodes_per_epoch < 1)
    throw ArgumentError("config: bad epoch counts");
  if (use_scm) scm_config().validate();
}

ScmConfig RunConfig::scm_config() const {
  ScmConfig s;
  s.n_classes = scm_classes;
  s.n_novel = scm_novel;
  s.dim_s = scm_dim_s;
  s.dim_z = scm_dim_z;
  s.rho = scm_rho;
  s.grid = scm_grid;
  s.image = scm_image;
  s.noise_sigma = scm_sigma;
  s.code_scale = scm_scale;
  s.z_scale = scm_z_scale;
  return s;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto it = setters().find(key);
  if (it == setters().end())
    throw ArgumentError("config: unknown key '" + key + "'");
  it->second(cfg, value);
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("missing config file: " + path);
  RunConfig cfg;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ArgumentError("config line " + std::to_string(lineno) +
                          ": expected key = value");
    set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    size_t eq = o.find('=');
    if (eq == std::string::npos)
      throw ArgumentError("override '" + o + "': expected key=value");
    set_key(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

void apply_scm_shorthand(RunConfig& cfg, const std::string& spec) {
  cfg.use_scm = true;
  static const std::map<std::string, std::string> shorthand = {
      {"rho", "scm_rho"},       {"classes", "scm_classes"},
      {"novel", "scm_novel"},   {"dim_s", "scm_dim_s"},
      {"dim_z", "scm_dim_z"},   {"grid", "scm_grid"},
      {"image", "scm_image"},   {"sigma", "scm_sigma"},
      {"scale", "scm_scale"},   {"train", "scm_train"},
      {"z_scale", "scm_z_scale"},
      {"test", "scm_test"},
  };
  size_t pos = 0;
  while (pos < spec.size()) {
    size_t comma = spec.find(',', pos);
    std::string item = spec.substr(pos, comma == std::string::npos
                                            ? std::string::npos
                                            : comma - pos);
    pos = comma == std::string::npos ? spec.size() : comma + 1;
    item = trim(item);
    if (item.empty()) continue;
    size_t eq = item.find('=');
    if (eq == std::string::npos)
      throw ArgumentError("--scm item '" + item + "': expected key=value");
    std::string key = trim(item.substr(0, eq));
    auto it = shorthand.find(key);
    if (it == shorthand.end())
      throw ArgumentError("--scm: unknown key '" + key + "'");
    set_key(cfg, it->second, trim(item.substr(eq + 1)));
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : setters()) keys.push_back(k);
  return keys;
}

}  // namespace patchmix
