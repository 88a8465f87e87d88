// Command-line front end: gen-data, train, eval, infer, bench, gradcheck.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "rmc/checkpoint.hpp"
#include "rmc/config.hpp"
#include "rmc/errors.hpp"
#include "rmc/eval.hpp"
#include "rmc/gradcheck.hpp"
#include "rmc/train.hpp"

namespace fs = std::filesystem;
using namespace rmc;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Raised for bad flag combinations found after parsing.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numeric self-check fails.
struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::vector<std::string> sets;
};

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

bool is_bool_key(const std::string& key) { return key == "improved" || key == "localize"; }

/// Every configuration key becomes a flag of the same name with dashes.
void add_config_flags(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "key = value configuration file; flags override it")
      ->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "extra key=value overrides");
  for (const auto& key : RunConfig::keys()) {
    auto* opt = app->add_option("--" + dashed(key), c.values[key], "config key " + key);
    if (is_bool_key(key)) opt->expected(0, 1);
    c.options[key] = opt;
  }
}

RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config_path.empty()) cfg.load_file(c.config_path);
  for (const auto& key : RunConfig::keys()) {
    const auto* opt = c.options.at(key);
    if (opt->count() == 0) continue;
    const std::string& v = c.values.at(key);
    cfg.set(key, v.empty() && is_bool_key(key) ? "true" : v);
  }
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

/// <out>/<command>-YYYYmmdd-HHMMSS, suffixed when taken; config.txt inside.
fs::path make_run_dir(const RunConfig& cfg, const std::string& command) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream stamp;
  stamp << command << '-' << std::put_time(&tm, "%Y%m%d-%H%M%S");
  fs::path dir = fs::path(cfg.out) / stamp.str();
  for (int n = 1; fs::exists(dir); ++n) dir = fs::path(cfg.out) / (stamp.str() + "-" + std::to_string(n));
  fs::create_directories(dir);
  std::ofstream(dir / "config.txt") << cfg.to_text();
  return dir;
}

std::string manifest_path(const RunConfig& cfg) {
  if (cfg.data.empty()) throw UsageError("--data is required (a dataset directory or its manifest.txt)");
  const fs::path p(cfg.data);
  return fs::is_directory(p) ? (p / "manifest.txt").string() : p.string();
}

void load_weights(const RunConfig& cfg, const ActionNet<float>& net) {
  if (cfg.checkpoint.empty()) throw UsageError("--checkpoint is required");
  for (const auto& t : read_checkpoint(cfg.checkpoint)) {
    if (t.name == "rmc.fc.bias" && t.tensor.numel() != cfg.act_num)
      throw FormatError(FormatError::Kind::Mismatch, cfg.checkpoint + ": checkpoint act_num " +
                                                         std::to_string(t.tensor.numel()) + " does not match act_num " +
                                                         std::to_string(cfg.act_num));
  }
  load_checkpoint(cfg.checkpoint, net.state());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FormatError(FormatError::Kind::Io, "cannot write " + path.string());
  out << text;
}

int cmd_gen_data(const RunConfig& cfg) {
  const SynthConfig sc = cfg.synth();
  fs::create_directories(cfg.out);
  const std::string manifest = make_dataset(cfg.out, cfg.seed, cfg.train_count, cfg.test_count, sc);
  write_text(fs::path(cfg.out) / "config.txt", cfg.to_text());
  std::cout << "wrote " << cfg.train_count + cfg.test_count << " clips, manifest " << manifest << "\n";
  return kOk;
}

int cmd_train(const RunConfig& cfg) {
  const NetConfig nc = cfg.net();
  const TrainConfig tc = cfg.train();
  const auto data = load_split(manifest_path(cfg), Split::Train);
  const fs::path dir = make_run_dir(cfg, "train");
  ActionNet<float> net(nc, cfg.seed);
  std::cout << "run " << dir.string() << "\n";
  const TrainResult res = train(net, data, tc, [](const CurvePoint& p) {
    std::cout << "iter " << p.iter << " loss " << total_loss(p.loss) << " err " << p.err_rate << "\n";
  });
  std::ofstream curves(dir / "curves.txt");
  write_curves(curves, res.curves);
  save_checkpoint((dir / "checkpoint.rmcw").string(), net.state());
  const EvalReport rep = evaluate(net, data, cfg.eval_iou, cfg.batch);
  write_text(dir / "train_report.txt", rep.to_text());
  std::cout << "trained " << cfg.iterations << " iterations in " << res.seconds << " s\n" << rep.to_text();
  std::cout << "checkpoint " << (dir / "checkpoint.rmcw").string() << "\n";
  return kOk;
}

Split split_of(const std::string& s) {
  try {
    return parse_split(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

int cmd_eval(const RunConfig& cfg, const std::string& split) {
  const NetConfig nc = cfg.net();
  ActionNet<float> net(nc, cfg.seed);
  load_weights(cfg, net);
  const auto data = load_split(manifest_path(cfg), split_of(split));
  const fs::path dir = make_run_dir(cfg, "eval");
  const EvalReport rep = evaluate(net, data, cfg.eval_iou, cfg.batch);
  write_text(dir / "report.txt", rep.to_text());
  std::cout << rep.to_text();
  return kOk;
}

int cmd_infer(const RunConfig& cfg, const std::string& split) {
  const NetConfig nc = cfg.net();
  ActionNet<float> net(nc, cfg.seed);
  load_weights(cfg, net);
  const auto data = load_split(manifest_path(cfg), split_of(split));
  const fs::path dir = make_run_dir(cfg, "infer");
  const Predictions p = predict(net, data, cfg.batch);
  std::ofstream props(dir / "proposals.txt");
  write_proposals(props, p.frames);
  std::ostringstream actions;
  for (size_t i = 0; i < data.size(); ++i) {
    const int k = p.predicted[i];
    actions << data[i].clip_id << ' ' << pattern_names()[static_cast<size_t>(k)] << ' ' << std::fixed
            << std::setprecision(4) << p.probs[i][static_cast<size_t>(k)] << '\n';
  }
  write_text(dir / "actions.txt", actions.str());
  std::cout << actions.str() << "proposals " << (dir / "proposals.txt").string() << "\n";
  return kOk;
}

int cmd_bench(const RunConfig& cfg, int clips, int reps) {
  if (clips < 1 || reps < 1) throw UsageError("--clips and --reps must be positive");
  const NetConfig nc = cfg.net();
  ActionNet<float> net(nc, cfg.seed);
  if (!cfg.checkpoint.empty()) load_weights(cfg, net);
  const fs::path dir = make_run_dir(cfg, "bench");
  const BenchResult b = bench_fps(net, clips, reps, 1, cfg.seed);
  std::ostringstream os;
  os << "frames_per_sec=" << b.frames_per_sec << "\nclips_per_sec=" << b.clips_per_sec << "\n";
  for (const auto kind : {BackboneKind::RMC, BackboneKind::R3D}) {
    BackboneConfig bc = nc.backbone;
    bc.kind = kind;
    bc.conv5_spatial_stride = 2;
    const Backbone<float> bb(bc, cfg.seed);
    os << to_string(kind) << "_backbone_seconds=" << bench_backbone_seconds(bb, clips, reps, 1, cfg.seed)
       << "\n" << to_string(kind) << "_backbone_macs=" << bb.total_macs(clips) << "\n";
  }
  write_text(dir / "bench.txt", os.str());
  std::cout << os.str();
  return kOk;
}

int cmd_gradcheck(const RunConfig& cfg, int bits) {
  if (bits != 32 && bits != 64) throw UsageError("--bits must be 32 or 64");
  const fs::path dir = make_run_dir(cfg, "gradcheck");
  const auto results = bits == 32 ? gradcheck_suite<float>(cfg.seed) : gradcheck_suite<double>(cfg.seed);
  const std::string table = format_gradcheck(results);
  write_text(dir / "gradcheck.txt", table);
  std::cout << table;
  for (const auto& r : results)
    if (!r.pass) throw NumericFailure("gradient check failed for " + r.name);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Specific-target action recognition: synthetic data, training and evaluation"};
  app.require_subcommand(1);
  struct Sub {
    CLI::App* app;
    Common common;
  };
  std::map<std::string, Sub> subs;
  auto add = [&](const std::string& name, const std::string& help) -> CLI::App* {
    auto& s = subs[name];
    s.app = app.add_subcommand(name, help);
    add_config_flags(s.app, s.common);
    return s.app;
  };
  auto* gen = add("gen-data", "render a synthetic clip dataset into --out");
  int n_train = -1, n_test = -1;
  gen->add_option("--train", n_train, "training clips (train_count)");
  gen->add_option("--test", n_test, "test clips (test_count)");
  add("train", "train on the train split and write a checkpoint and curves");
  std::string eval_split = "test", infer_split = "test";
  add("eval", "evaluate a checkpoint")->add_option("--split", eval_split, "train or test");
  add("infer", "dump per-frame boxes and per-clip actions")->add_option("--split", infer_split, "train or test");
  auto* bench = add("bench", "time inference and the rMC and R3D backbones");
  int clips = 2, reps = 20;
  bench->add_option("--clips", clips, "clips per forward");
  bench->add_option("--reps", reps, "timed repetitions (median reported)");
  int bits = 32;
  add("gradcheck", "finite-difference check of every differentiable operation")
      ->add_option("--bits", bits, "32 or 64");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    for (auto& [name, s] : subs) {
      if (!s.app->parsed()) continue;
      RunConfig cfg = resolve(s.common);
      if (name == "gen-data") {
        if (n_train >= 0) cfg.train_count = n_train;
        if (n_test >= 0) cfg.test_count = n_test;
        return cmd_gen_data(cfg);
      }
      if (name == "train") return cmd_train(cfg);
      if (name == "eval") return cmd_eval(cfg, eval_split);
      if (name == "infer") return cmd_infer(cfg, infer_split);
      if (name == "bench") return cmd_bench(cfg, clips, reps);
      if (name == "gradcheck") return cmd_gradcheck(cfg, bits);
    }
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const NumericFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
  return kUsage;
}
