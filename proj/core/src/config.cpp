#include "seffsal/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace seffsal {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(trim(item));
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& text, const char* what) {
  T v{};
  const char* b = text.data();
  const char* e = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (text.empty() || ec != std::errc() || ptr != e) bad_value(key, text, what);
  return v;
}

const std::vector<std::string> kTrain{"train", "ablate"};
const std::vector<std::string> kNet{"train", "infer", "ablate"};

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"variant", "full", "network variant: full, scale2 or scale1", kNet},
      {"fusion", "seff", "fusion block: seff, or cbr for the parameter-matched CBR stack", kNet},
      {"stage_channels", "16,32,64,128", "backbone widths of the four stages", kNet},
      {"blocks_per_stage", "1", "extra stride-1 conv blocks per backbone stage", kNet},
      {"decoder_channels", "16,32,32,64", "decoder widths of layers 1..4", kNet},
      {"seff_reduction", "4", "channel reduction of the LCC/GCC bottlenecks", kNet},
      {"input_size", "352", "scale-1 input side; scales 2 and 3 use 1/2 and 1/4", kNet},
      {"batch_size", "10", "samples per optimizer step", kTrain},
      {"lr0", "5e-5", "initial Adam learning rate", kTrain},
      {"decay_factor", "5", "learning-rate divisor per decay step", kTrain},
      {"decay_every", "40", "epochs between learning-rate decays", kTrain},
      {"epochs", "100", "training epochs", kTrain},
      {"max_iterations", "0", "stop after this many steps (0: no limit)", kTrain},
      {"checkpoint_every", "10", "checkpoint period in epochs (0: final only)", {"train"}},
      {"seed", "0", "seed for initialization, shuffling and synthetic data",
       {"train", "ablate", "synth"}},
      {"flip", "false", "random horizontal flip per batch", kTrain},
      {"lambda_bce", "1", "weight of the weighted BCE term", kTrain},
      {"lambda_iou", "0.5", "weight of the weighted IoU term", kTrain},
      {"lambda_l1", "0.3", "weight of the weighted L1 term", kTrain},
      {"omega_mu", "0.5", "scale of the pixel weight omega", kTrain},
      {"pooling_kernels", "3,15,31", "box sizes of the pixel weight omega", kTrain},
      {"train_dir", "", "training set root with RGB/, depth/ and GT/", {"train"}},
      {"test_dir", "", "dataset root to predict (infer without --rgb/--depth)", {"infer"}},
      {"out_dir", "run", "output directory (overridden by --out)",
       {"train", "infer", "ablate", "synth"}},
      {"checkpoint", "", "checkpoint to load", {"infer"}},
      {"synth_n", "100", "synthetic training samples", {"ablate", "synth"}},
      {"synth_test_n", "30", "synthetic test samples", {"ablate", "synth"}},
      {"synth_canvas", "128", "side of synthetic images (>= 64)", {"ablate", "synth"}},
      {"ablate_train", "false", "train and evaluate every ablation variant", {"ablate"}},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) {
    values_[k.name] = k.default_value;
    explicit_[k.name] = false;
  }
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw.substr(0, raw.find('#'));
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(where + ": config key '" + key + "' already set on line " +
                        std::to_string(it->second));
    }
    seen[key] = line_no;
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' must have the form key=value");
  }
  set(trim(std::string_view(assignment).substr(0, eq)),
      trim(std::string_view(assignment).substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  if (value.find('\n') != std::string::npos) {
    throw ConfigError("config key '" + key + "': value spans several lines");
  }
  it->second = value;
  explicit_[key] = true;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

bool RunConfig::is_default(const std::string& key) const {
  (void)get(key);
  return !explicit_.at(key);
}

int RunConfig::get_int(const std::string& key) const {
  return parse_number<int>(key, get(key), "an integer");
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key), "a non-negative integer");
}

double RunConfig::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key), "a number");
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_list(get(key))) {
    out.push_back(parse_number<int>(key, item, "a comma-separated list of integers"));
  }
  return out;
}

std::filesystem::path RunConfig::require_path(const std::string& key) const {
  const std::string& v = get(key);
  if (v.empty()) throw ConfigError("config key '" + key + "' is required but not set");
  return v;
}

NetConfig RunConfig::net() const {
  NetConfig c;
  auto four = [&](const std::string& key) {
    const auto v = get_int_list(key);
    if (v.size() != 4) bad_value(key, get(key), "four comma-separated integers");
    return std::array<int, 4>{v[0], v[1], v[2], v[3]};
  };
  try {
    c.variant = parse_variant(get("variant"));
  } catch (const ConfigError& e) {
    throw ConfigError("config key 'variant': " + std::string(e.what()));
  }
  try {
    c.fusion = parse_fusion(get("fusion"));
  } catch (const ConfigError& e) {
    throw ConfigError("config key 'fusion': " + std::string(e.what()));
  }
  c.backbone.stage_channels = four("stage_channels");
  c.backbone.blocks_per_stage = get_int("blocks_per_stage");
  c.decoder_channels = four("decoder_channels");
  c.seff_reduction = get_int("seff_reduction");
  c.input_size = get_int("input_size");
  c.validate();
  return c;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.batch_size = get_int("batch_size");
  t.lr0 = get_double("lr0");
  t.decay_factor = get_double("decay_factor");
  t.decay_every = get_int("decay_every");
  t.epochs = get_int("epochs");
  t.max_iterations = get_int("max_iterations");
  t.checkpoint_every = get_int("checkpoint_every");
  t.seed = get_u64("seed");
  t.flip = get_bool("flip");
  t.loss.lambda_bce = get_double("lambda_bce");
  t.loss.lambda_iou = get_double("lambda_iou");
  t.loss.lambda_l1 = get_double("lambda_l1");
  t.loss.omega_mu = get_double("omega_mu");
  t.loss.pooling_kernels = get_int_list("pooling_kernels");
  t.validate();
  return t;
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  for (const auto& k : config_keys()) out << k.name << " = " << values_.at(k.name) << '\n';
  return out.str();
}

}  // namespace seffsal
