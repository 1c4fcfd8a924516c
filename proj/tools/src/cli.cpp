#include "seffsal/cli.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

namespace seffsal::cli {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string seed;
};

void add_common(CLI::App* cmd, CommonArgs& a, const std::string& out_help) {
  cmd->add_option("--config", a.config, "config file (key = value lines)");
  cmd->add_option("--set", a.overrides, "override a config key, KEY=VALUE (repeatable)")
      ->type_name("K=V");
  cmd->add_option("--out", a.out, out_help);
  cmd->add_option("--seed", a.seed, "shorthand for --set seed=N")->type_name("N");
}

// Every config key a subcommand reads, with its default, for --help.
std::string key_footer(const std::string& command) {
  std::ostringstream os;
  bool any = false;
  for (const auto& k : config_keys()) {
    if (std::find(k.commands.begin(), k.commands.end(), command) == k.commands.end()) continue;
    if (!any) os << "Config keys read:\n";
    any = true;
    os << "  " << std::left << std::setw(18) << k.name << std::setw(16)
       << (k.default_value.empty() ? "(unset)" : k.default_value) << k.help << '\n';
  }
  if (!any) os << "Reads no config keys.\n";
  return os.str();
}

RunConfig resolve(const CommonArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig() : RunConfig::load(a.config);
  for (const auto& o : a.overrides) cfg.apply_override(o);
  if (!a.seed.empty()) cfg.set("seed", a.seed);
  if (!a.out.empty()) cfg.set("out_dir", a.out);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

int cmd_train(const CommonArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve(a);
  const fs::path data_root = cfg.require_path("train_dir");
  const NetConfig net_cfg = cfg.net();
  const TrainConfig train_cfg = cfg.train();
  const fs::path run_dir = cfg.require_path("out_dir");
  if (!fs::is_directory(data_root)) {
    throw ConfigError("config key 'train_dir': directory not found: " + data_root.string());
  }
  const std::vector<Sample> data = load_dataset(data_root);
  fs::create_directories(run_dir);
  write_text(run_dir / "config.txt", cfg.echo());

  MsNet net(net_cfg, train_cfg.seed);
  out << "training " << to_string(net_cfg.variant) << " (" << to_string(net_cfg.fusion) << ", "
      << net.parameter_count() << " parameters) on " << data.size() << " samples\n";
  TrainOptions opts;
  opts.run_dir = run_dir;
  opts.config_echo = cfg.echo();
  opts.on_step = [&](const TrainLogRow& r) {
    out << "epoch " << r.epoch << " iter " << r.iteration << " loss " << fmt(r.total) << " lr "
        << r.lr << '\n';
  };
  const TrainResult res = train(net, data, train_cfg, opts);
  out << "wrote " << res.checkpoints.back().string() << " and " << (run_dir / "loss.csv").string()
      << '\n';
  return kExitOk;
}

int cmd_infer(const CommonArgs& a, const std::string& rgb, const std::string& depth,
              std::ostream& out) {
  const RunConfig cfg = resolve(a);
  const fs::path ckpt = cfg.require_path("checkpoint");
  const MsNet net = load_network(ckpt, cfg.net());
  if (!rgb.empty() || !depth.empty()) {
    if (rgb.empty() || depth.empty()) throw ConfigError("--rgb and --depth must be given together");
    fs::path target = cfg.require_path("out_dir");
    if (target.extension() != ".png") target /= fs::path(rgb).stem().string() + ".png";
    infer(net, rgb, depth, target);
    out << "wrote " << target.string() << '\n';
    return kExitOk;
  }
  const fs::path root = cfg.require_path("test_dir");
  const fs::path out_dir = cfg.require_path("out_dir");
  const auto entries = scan_dataset(root);
  for (const auto& e : entries) infer(net, e.rgb, e.depth, out_dir / (e.id + ".png"));
  out << "wrote " << entries.size() << " predictions to " << out_dir.string() << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& csv,
             std::ostream& out, std::ostream& err) {
  const metrics::MetricReport r = metrics::evaluate_dataset(pred, gt);
  if (r.images.empty()) {
    err << "error: no prediction shares a filename stem with the ground truth in " << gt << '\n';
    return kExitConfig;
  }
  const fs::path csv_path = csv.empty() ? fs::path("metrics.csv") : fs::path(csv);
  if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
  metrics::write_csv(r, csv_path);
  out << "images " << r.images.size() << " (empty gt: " << r.skipped_empty_gt << ")\n"
      << "MAE " << fmt(r.mae) << "  maxF " << fmt(r.f_max) << "  maxE " << fmt(r.e_max)
      << "  S " << fmt(r.s_measure) << '\n'
      << "wrote " << csv_path.string() << '\n';
  return kExitOk;
}

void print_table(const std::vector<AblationRow>& rows, std::ostream& out) {
  out << std::left << std::setw(10) << "variant" << std::right << std::setw(12) << "params"
      << std::setw(14) << "fusion_params";
  const bool metrics = std::any_of(rows.begin(), rows.end(), [](auto& r) { return r.evaluated; });
  if (metrics) out << std::setw(9) << "MAE" << std::setw(9) << "maxF" << std::setw(9) << "maxE"
                   << std::setw(9) << "S";
  out << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(10) << r.name << std::right << std::setw(12) << r.parameters
        << std::setw(14) << r.fusion_parameters;
    if (r.evaluated) {
      out << std::setw(9) << fmt(r.report.mae) << std::setw(9) << fmt(r.report.f_max)
          << std::setw(9) << fmt(r.report.e_max) << std::setw(9) << fmt(r.report.s_measure);
    }
    out << '\n';
  }
}

int cmd_ablate(const CommonArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve(a);
  const fs::path out_dir = cfg.require_path("out_dir");
  const auto rows = run_ablation(cfg, out_dir, cfg.get_bool("ablate_train"), out);
  print_table(rows, out);
  out << "wrote " << (out_dir / "ablation.csv").string() << '\n';
  return kExitOk;
}

int cmd_synth(const CommonArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve(a);
  const fs::path out_dir = cfg.require_path("out_dir");
  const std::uint64_t seed = cfg.get_u64("seed");
  const int side = cfg.get_int("synth_canvas");
  const int n_train = cfg.get_int("synth_n");
  const int n_test = cfg.get_int("synth_test_n");
  write_dataset(synth_generate(seed, n_train, {side, side}), out_dir / "train");
  out << "wrote " << n_train << " samples to " << (out_dir / "train").string() << '\n';
  if (n_test > 0) {
    write_dataset(synth_generate(derive_seed(seed, "test"), n_test, {side, side}),
                  out_dir / "test");
    out << "wrote " << n_test << " samples to " << (out_dir / "test").string() << '\n';
  }
  return kExitOk;
}

}  // namespace

std::vector<AblationRow> ablation_variants(const NetConfig& base) {
  std::vector<AblationRow> rows;
  auto add = [&](const std::string& name, Variant v, FusionKind f) {
    AblationRow r;
    r.name = name;
    r.net = base;
    r.net.variant = v;
    r.net.fusion = f;
    MsNet net(r.net, 0);
    r.parameters = net.parameter_count();
    r.fusion_parameters = net.fusion_parameter_count();
    rows.push_back(std::move(r));
  };
  add("full", Variant::full, FusionKind::seff);
  add("scale2", Variant::scale2, FusionKind::seff);
  add("scale1", Variant::scale1, FusionKind::seff);
  add("w/o-SEFF", Variant::full, FusionKind::cbr);
  return rows;
}

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const fs::path& out_dir,
                                      bool train_each, std::ostream& log) {
  std::vector<AblationRow> rows = ablation_variants(cfg.net());
  fs::create_directories(out_dir);
  if (train_each) {
    const TrainConfig tc = cfg.train();
    const int side = cfg.get_int("synth_canvas");
    const SynthSet train_set = synth_generate(tc.seed, cfg.get_int("synth_n"), {side, side});
    const SynthSet test_set =
        synth_generate(derive_seed(tc.seed, "test"), cfg.get_int("synth_test_n"), {side, side});
    const fs::path test_root = out_dir / "data" / "test";
    write_dataset(train_set, out_dir / "data" / "train");
    write_dataset(test_set, test_root);
    for (auto& r : rows) {
      const std::string dir_name = r.name == "w/o-SEFF" ? "wo_seff" : r.name;
      log << "ablate: training " << r.name << '\n';
      MsNet net(r.net, tc.seed);
      TrainConfig variant_tc = tc;
      variant_tc.checkpoint_every = 0;
      TrainOptions opts;
      opts.run_dir = out_dir / dir_name;
      train(net, train_set.samples, variant_tc, opts);
      const fs::path pred_dir = out_dir / dir_name / "pred";
      for (const Sample& s : test_set.samples) {
        write_gray_png(predict(net, s.rgb, s.depth), pred_dir / (s.id + ".png"));
      }
      r.report = metrics::evaluate_dataset(pred_dir, test_root / "GT");
      r.evaluated = true;
      log << "ablate: " << r.name << " maxF " << fmt(r.report.f_max) << " S "
          << fmt(r.report.s_measure) << '\n';
    }
  }
  std::ofstream csv(out_dir / "ablation.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (out_dir / "ablation.csv").string());
  csv << std::setprecision(17) << "variant,params,fusion_params,mae,f_max,e_max,s_measure\n";
  for (const auto& r : rows) {
    csv << r.name << ',' << r.parameters << ',' << r.fusion_parameters << ',';
    if (r.evaluated) {
      csv << r.report.mae << ',' << r.report.f_max << ',' << r.report.e_max << ','
          << r.report.s_measure;
    } else {
      csv << ",,,";
    }
    csv << '\n';
  }
  return rows;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"seffsal: multiscale RGB-D salient object detection"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  CommonArgs train_a, infer_a, ablate_a, synth_a;
  auto* train_cmd = app.add_subcommand("train", "train a network on <train_dir>");
  add_common(train_cmd, train_a, "run directory (overrides out_dir)");
  train_cmd->footer(key_footer("train"));

  std::string rgb, depth;
  auto* infer_cmd = app.add_subcommand(
      "infer", "write 8-bit saliency PNGs for one RGB/depth pair or for every sample of test_dir");
  add_common(infer_cmd, infer_a, "output PNG, or directory (overrides out_dir)");
  infer_cmd->add_option("--rgb", rgb, "RGB image for single-pair inference");
  infer_cmd->add_option("--depth", depth, "depth image for single-pair inference");
  infer_cmd->footer(key_footer("infer"));

  std::string pred_dir, gt_dir, csv;
  auto* eval_cmd = app.add_subcommand("eval", "score prediction PNGs against GT masks");
  eval_cmd->add_option("--pred", pred_dir, "directory of 8-bit prediction PNGs")->required();
  eval_cmd->add_option("--gt", gt_dir, "directory of GT masks (>= 128 is foreground)")->required();
  eval_cmd->add_option("--out", csv, "per-image CSV with a final mean row (default metrics.csv)");
  eval_cmd->footer(key_footer("eval"));

  auto* ablate_cmd = app.add_subcommand(
      "ablate", "parameter table for full/scale2/scale1/w/o-SEFF, optionally trained and scored");
  add_common(ablate_cmd, ablate_a, "output directory (overrides out_dir)");
  ablate_cmd->footer(key_footer("ablate"));

  auto* synth_cmd = app.add_subcommand(
      "synth", "write synthetic train/ and test/ datasets in the RGB/depth/GT layout");
  add_common(synth_cmd, synth_a, "output directory (overrides out_dir)");
  synth_cmd->footer(key_footer("synth"));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_a, out);
    if (infer_cmd->parsed()) return cmd_infer(infer_a, rgb, depth, out);
    if (eval_cmd->parsed()) return cmd_eval(pred_dir, gt_dir, csv, out, err);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_a, out);
    if (synth_cmd->parsed()) return cmd_synth(synth_a, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace seffsal::cli
