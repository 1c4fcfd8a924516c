#include "seffsal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace seffsal {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'E', 'F', 'F', 'C', 'K', 'P', 'T'};

json net_to_json(const NetConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"fusion", to_string(c.fusion)},
          {"stage_channels", c.backbone.stage_channels},
          {"blocks_per_stage", c.backbone.blocks_per_stage},
          {"decoder_channels", c.decoder_channels},
          {"seff_reduction", c.seff_reduction},
          {"input_size", c.input_size}};
}

NetConfig net_from_json(const json& j) {
  NetConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.fusion = parse_fusion(j.at("fusion").get<std::string>());
  c.backbone.stage_channels = j.at("stage_channels").get<std::array<int, 4>>();
  c.backbone.blocks_per_stage = j.at("blocks_per_stage").get<int>();
  c.decoder_channels = j.at("decoder_channels").get<std::array<int, 4>>();
  c.seff_reduction = j.at("seff_reduction").get<int>();
  c.input_size = j.at("input_size").get<int>();
  return c;
}

std::string describe(const NetConfig& c) { return net_to_json(c).dump(); }

json shape_json(const Shape& s) { return {s.n, s.c, s.h, s.w}; }
Shape shape_from(const json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

struct TensorBlob {
  std::string name;
  const Tensor* tensor;
};

// Doubles are written in host order; the header records the order so a mismatching
// reader refuses the file instead of misreading it.
bool little_endian() {
  const std::uint16_t probe = 1;
  std::uint8_t first = 0;
  std::memcpy(&first, &probe, 1);
  return first == 1;
}

std::string head_name(int scale, int layer) {
  return "S" + std::to_string(scale) + std::to_string(layer);
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be finite and non-negative");
  if (!(decay_factor > 0.0)) throw ConfigError("decay_factor must be positive");
  if (decay_every <= 0) throw ConfigError("decay_every must be positive");
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (max_iterations < 0) throw ConfigError("max_iterations must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  try {
    loss.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ContractError("lr_schedule of a negative epoch");
  const int steps = epoch / cfg.decay_every;
  return cfg.lr0 / std::pow(cfg.decay_factor, steps);
}

Adam::Adam(std::vector<std::pair<std::string, Var>> params, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, p] : params_) {
    slots_.push_back({Tensor(p.shape(), 0.0), Tensor(p.shape(), 0.0)});
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var& p = params_[k].second;
    const Tensor& g = p.grad();
    if (g.empty()) continue;
    Slot& s = slots_[k];
    Tensor& w = p.mutable_value();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g[i];
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g[i] * g[i];
      if (lr == 0.0) continue;
      const double mhat = s.m[i] / c1;
      const double vhat = s.v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

std::map<std::string, Adam::Slot> Adam::state() const {
  std::map<std::string, Slot> out;
  for (std::size_t k = 0; k < params_.size(); ++k) out[params_[k].first] = slots_[k];
  return out;
}

void Adam::load_state(long long steps, const std::map<std::string, Slot>& state) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto it = state.find(params_[k].first);
    if (it == state.end()) {
      throw CheckpointError("optimizer state lacks parameter " + params_[k].first);
    }
    if (it->second.m.shape() != params_[k].second.shape() ||
        it->second.v.shape() != params_[k].second.shape()) {
      throw CheckpointError("optimizer state shape mismatch for " + params_[k].first);
    }
    slots_[k] = it->second;
  }
  t_ = steps;
}

Checkpoint capture(MsNet& net, const Adam* optimizer, int epoch, long long iteration,
                   const std::string& config_echo) {
  Checkpoint c;
  c.net = net.config();
  c.epoch = epoch;
  c.iteration = iteration;
  c.config_echo = config_echo;
  net.visit(
      "", [&](const std::string& name, Var& p) { c.params[name] = p.value(); },
      [&](const std::string& name, Tensor& b) { c.buffers[name] = b; });
  if (optimizer != nullptr) {
    c.optimizer_steps = optimizer->steps();
    c.optimizer = optimizer->state();
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  json header;
  header["format_version"] = ckpt.version;
  header["byte_order"] = little_endian() ? "little" : "big";
  header["net"] = net_to_json(ckpt.net);
  header["epoch"] = ckpt.epoch;
  header["iteration"] = ckpt.iteration;
  header["config_echo"] = ckpt.config_echo;
  header["optimizer_steps"] = ckpt.optimizer_steps;

  std::vector<TensorBlob> blobs;
  json dir = json::array();
  std::size_t offset = 0;
  auto add = [&](const std::string& kind, const std::string& name, const Tensor& t) {
    dir.push_back({{"kind", kind}, {"name", name}, {"shape", shape_json(t.shape())},
                   {"offset", offset}});
    offset += t.numel();
    blobs.push_back({name, &t});
  };
  for (const auto& [name, t] : ckpt.params) add("param", name, t);
  for (const auto& [name, t] : ckpt.buffers) add("buffer", name, t);
  for (const auto& [name, s] : ckpt.optimizer) {
    add("adam_m", name, s.m);
    add("adam_v", name, s.v);
  }
  header["tensors"] = dir;
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t version = ckpt.version;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& b : blobs) {
    out.write(reinterpret_cast<const char*>(b.tensor->data()),
              static_cast<std::streamsize>(b.tensor->numel() * sizeof(double)));
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + path.string() + " has format version " +
                          std::to_string(version) + ", this build reads version " +
                          std::to_string(kCheckpointVersion));
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 30)) throw CheckpointError("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated checkpoint header in " + path.string());

  Checkpoint c;
  try {
    const json header = json::parse(text);
    if (header.at("byte_order").get<std::string>() != (little_endian() ? "little" : "big")) {
      throw CheckpointError("checkpoint " + path.string() + " uses a different byte order");
    }
    c.version = version;
    c.net = net_from_json(header.at("net"));
    c.epoch = header.at("epoch").get<int>();
    c.iteration = header.at("iteration").get<long long>();
    c.config_echo = header.at("config_echo").get<std::string>();
    c.optimizer_steps = header.at("optimizer_steps").get<long long>();
    for (const auto& e : header.at("tensors")) {
      Tensor t(shape_from(e.at("shape")));
      in.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
      if (!in) throw CheckpointError("truncated tensor data in " + path.string());
      const std::string kind = e.at("kind").get<std::string>();
      const std::string name = e.at("name").get<std::string>();
      if (kind == "param") c.params[name] = std::move(t);
      else if (kind == "buffer") c.buffers[name] = std::move(t);
      else if (kind == "adam_m") c.optimizer[name].m = std::move(t);
      else if (kind == "adam_v") c.optimizer[name].v = std::move(t);
      else throw CheckpointError("unknown tensor kind '" + kind + "' in " + path.string());
    }
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError("checkpoint " + path.string() + " names an unknown architecture: " +
                          e.what());
  }
  return c;
}

void restore(MsNet& net, const Checkpoint& ckpt, Adam* optimizer) {
  const NetConfig& want = net.config();
  if (describe(want) != describe(ckpt.net)) {
    throw CheckpointError("checkpoint (format v" + std::to_string(ckpt.version) +
                          ") was written for " + describe(ckpt.net) +
                          " but the configuration requests " + describe(want));
  }
  std::size_t seen_params = 0, seen_buffers = 0;
  net.visit(
      "",
      [&](const std::string& name, Var& p) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end()) throw CheckpointError("checkpoint lacks parameter " + name);
        if (it->second.shape() != p.shape()) {
          throw CheckpointError("parameter " + name + " has shape " + it->second.shape().str() +
                                " in the checkpoint but " + p.shape().str() + " in the network");
        }
        p.mutable_value() = it->second;
        ++seen_params;
      },
      [&](const std::string& name, Tensor& b) {
        auto it = ckpt.buffers.find(name);
        if (it == ckpt.buffers.end() || it->second.shape() != b.shape()) {
          throw CheckpointError("checkpoint lacks or misshapes buffer " + name);
        }
        b = it->second;
        ++seen_buffers;
      });
  if (seen_params != ckpt.params.size() || seen_buffers != ckpt.buffers.size()) {
    throw CheckpointError("checkpoint holds tensors the network does not have");
  }
  if (optimizer != nullptr) optimizer->load_state(ckpt.optimizer_steps, ckpt.optimizer);
}

MsNet load_network(const fs::path& path, const NetConfig& expected) {
  const Checkpoint c = load_checkpoint(path);
  MsNet net(expected, 0);
  restore(net, c);
  return net;
}

TrainResult train(MsNet& net, const std::vector<Sample>& data, const TrainConfig& cfg,
                  const TrainOptions& opts) {
  cfg.validate();
  if (data.empty()) throw ContractError("train on an empty dataset");
  const NetConfig& nc = net.config();
  Adam adam(net.named_parameters());

  TrainResult result;
  const int n = static_cast<int>(data.size());
  std::mt19937_64 rng(derive_seed(cfg.seed, "train.shuffle"));
  std::vector<std::size_t> order(data.size());

  auto save = [&](int epoch, const std::string& file) {
    if (opts.run_dir.empty()) return;
    const fs::path p = opts.run_dir / "checkpoints" / file;
    save_checkpoint(capture(net, &adam, epoch, result.iterations, opts.config_echo), p);
    result.checkpoints.push_back(p);
  };

  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n && !stop; start += cfg.batch_size) {
      const int end = std::min(n, start + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
      const bool flip = cfg.flip && (rng() & 1u) != 0;
      const Batch batch = collate(data, idx, nc.variant, nc.input_size, flip);

      adam.zero_grad();
      const ForwardResult fwd = net.forward(batch.inputs, Mode::train);
      const LossBreakdown loss = total_loss(fwd.bundle, batch.gt, cfg.loss);
      TrainLogRow row;
      row.epoch = epoch;
      row.iteration = result.iterations + 1;
      row.lr = lr;
      row.total = loss.total.value()[0];
      for (const auto& h : loss.heads) {
        if (!std::isfinite(h.value)) {
          throw NumericError("non-finite loss at head " + head_name(h.scale, h.layer) +
                             " (epoch " + std::to_string(epoch) + ", iteration " +
                             std::to_string(row.iteration) + ")");
        }
        row.heads.push_back(h.value);
      }
      if (result.head_names.empty()) {
        for (const auto& h : loss.heads) result.head_names.push_back(head_name(h.scale, h.layer));
      }
      backward(loss.total);
      adam.step(lr);
      ++result.iterations;
      if (opts.on_step) opts.on_step(row);
      result.log.push_back(std::move(row));
      if (cfg.max_iterations > 0 && result.iterations >= cfg.max_iterations) stop = true;
    }
    result.epochs_run = epoch + 1;
    const bool last = stop || epoch + 1 == cfg.epochs;
    if (!last && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << epoch + 1 << ".ckpt";
      save(epoch + 1, name.str());
    }
  }
  save(result.epochs_run, "final.ckpt");
  if (!opts.run_dir.empty()) write_loss_csv(result, opts.run_dir / "loss.csv");
  adam.zero_grad();
  return result;
}

void write_loss_csv(const TrainResult& result, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,iter,total";
  for (const auto& h : result.head_names) out << ',' << h;
  out << ",lr\n";
  for (const auto& r : result.log) {
    out << r.epoch << ',' << r.iteration << ',' << format_double(r.total);
    for (double h : r.heads) out << ',' << format_double(h);
    out << ',' << format_double(r.lr) << '\n';
  }
}

Tensor predict(const MsNet& net, const Tensor& rgb, const Tensor& depth) {
  if (rgb.shape().n != 1 || rgb.shape().c != 3 || depth.shape().c != 1 ||
      depth.spatial() != rgb.spatial()) {
    throw ContractError("predict expects one [1,3,H,W] image and a matching [1,1,H,W] depth");
  }
  const NetConfig& nc = net.config();
  Sample s{rgb, depth, Tensor({1, 1, rgb.shape().h, rgb.shape().w}), ""};
  const ScalePyramid p = make_pyramid(s, nc.variant, nc.input_size);
  NetInputs inputs{p.rgb, p.depth};
  NoGradGuard guard;
  const ForwardResult fwd = net.forward(inputs, Mode::eval);
  const auto [i, j] = MsNet::output_head(nc.variant);
  return ops::resize_bilinear(fwd.bundle.at(i, j).value(), rgb.spatial());
}

void infer(const MsNet& net, const fs::path& rgb_path, const fs::path& depth_path,
           const fs::path& out_path) {
  const Tensor rgb = read_rgb(rgb_path);
  const Tensor depth = read_depth(depth_path);
  if (depth.spatial() != rgb.spatial()) {
    throw IoError("size mismatch between " + rgb_path.string() + " and " + depth_path.string());
  }
  write_gray_png(predict(net, rgb, depth), out_path);
}

void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, std::numeric_limits<int>::max());
#endif
}

}  // namespace seffsal
