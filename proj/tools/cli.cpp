#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "tmaseg/annotation.hpp"
#include "tmaseg/checkpoint.hpp"
#include "tmaseg/dataset.hpp"
#include "tmaseg/error.hpp"
#include "tmaseg/evaluation.hpp"
#include "tmaseg/imaging.hpp"
#include "tmaseg/models.hpp"
#include "tmaseg/trainer.hpp"

namespace tmaseg::cli {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct ConvertArgs {
  std::string mask, out;
};
struct SplitArgs {
  std::string cores, fractions = "0.5,0.25,0.25", out;
  std::uint64_t seed = 0;
};
struct TrainArgs {
  std::string arch = "unet-compact", manifest, cores, out, log, resume;
  std::int64_t steps = 2000, val_interval = 250;
  std::uint64_t seed = 0;
  int patch = 64, batch = 4;
  double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  bool augment = false;
};
struct PredictArgs {
  std::string ckpt, image, out;
  int patch = 256, stride = 128;
};
struct EvaluateArgs {
  std::string ckpt, manifest, cores, split = "test", report, curve;
  bool sweep = false;
  double threshold = 0.5;
  int patch = 256, stride = 128;
};

struct Options {
  std::string config;
  int threads = 0;  // 0: not given
  ConvertArgs convert;
  SplitArgs split;
  TrainArgs train;
  PredictArgs predict;
  EvaluateArgs evaluate;
};

struct Commands {
  std::unique_ptr<CLI::App> app;
  CLI::App* convert = nullptr;
  CLI::App* split = nullptr;
  CLI::App* train = nullptr;
  CLI::App* predict = nullptr;
  CLI::App* evaluate = nullptr;
};

// `strict` enforces required flags; the first pass runs without it so that
// values may still come from the config file.
Commands build(Options& o, bool strict) {
  Commands c;
  c.app = std::make_unique<CLI::App>("Cancer segmentation for tissue microarray cores", "tmaseg");
  auto& app = *c.app;
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", o.config, "File of `key = value` lines supplying flag defaults (# comments)");
  app.add_option("--threads", o.threads, "Worker threads for inference and data loading (default: $TMASEG_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  auto req = [strict](CLI::Option* opt) { return strict ? opt->required() : opt; };

  c.convert = app.add_subcommand("convert", "Decode and validate an annotation PNG; writes a palette-exact copy");
  req(c.convert->add_option("--mask", o.convert.mask, "Annotation PNG to decode"));
  req(c.convert->add_option("--out", o.convert.out, "Output label PNG with exact palette colours"));

  c.split = app.add_subcommand("split", "Area-balanced train/val/test split of a core directory");
  req(c.split->add_option("--cores", o.split.cores, "Directory of <id>.png and <id>_mask.png files"));
  c.split->add_option("--fractions", o.split.fractions, "Train,val,test fractions summing to 1")
      ->capture_default_str();
  c.split->add_option("--seed", o.split.seed, "Shuffle seed")->capture_default_str();
  req(c.split->add_option("--out", o.split.out, "Manifest file to write"));

  c.train = app.add_subcommand("train", "Train a segmentation network");
  c.train->add_option("--arch", o.train.arch, "Architecture preset (e.g. unet, unet-compact, drn-c26-compact)")
      ->capture_default_str();
  req(c.train->add_option("--manifest", o.train.manifest, "Split manifest"));
  req(c.train->add_option("--cores", o.train.cores, "Core directory"));
  c.train->add_option("--steps", o.train.steps, "Total optimizer steps")->capture_default_str()->check(CLI::PositiveNumber);
  c.train->add_option("--seed", o.train.seed, "Seed for initialization and sampling")->capture_default_str();
  req(c.train->add_option("--out", o.train.out, "Checkpoint path; the best one is written to <stem>.best<ext>"));
  c.train->add_option("--patch", o.train.patch, "Training patch size")->capture_default_str()->check(CLI::PositiveNumber);
  c.train->add_option("--batch", o.train.batch, "Patches per step")->capture_default_str()->check(CLI::PositiveNumber);
  c.train->add_option("--lr", o.train.lr, "Adam learning rate")->capture_default_str();
  c.train->add_option("--beta1", o.train.beta1, "Adam first-moment decay")->capture_default_str();
  c.train->add_option("--beta2", o.train.beta2, "Adam second-moment decay")->capture_default_str();
  c.train->add_option("--eps", o.train.eps, "Adam epsilon")->capture_default_str();
  c.train->add_option("--val-interval", o.train.val_interval, "Validate (and update the best checkpoint) every N steps")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  c.train->add_flag("--augment", o.train.augment, "Random dihedral transforms of training patches");
  c.train->add_option("--log", o.train.log, "Write `step<TAB>loss` lines to this file");
  c.train->add_option("--resume", o.train.resume, "Continue from this checkpoint up to --steps");

  c.predict = app.add_subcommand("predict", "Write a cancer probability heatmap for one core");
  req(c.predict->add_option("--ckpt", o.predict.ckpt, "Checkpoint"));
  req(c.predict->add_option("--image", o.predict.image, "Core image PNG"));
  req(c.predict->add_option("--out", o.predict.out, "Heatmap PNG (gray = 255 * probability)"));
  c.predict->add_option("--patch", o.predict.patch, "Inference patch size")->capture_default_str()->check(CLI::PositiveNumber);
  c.predict->add_option("--stride", o.predict.stride, "Patch stride")->capture_default_str()->check(CLI::PositiveNumber);

  c.evaluate = app.add_subcommand("evaluate", "Pixel-wise precision/recall/F1 per core, averaged over a split");
  req(c.evaluate->add_option("--ckpt", o.evaluate.ckpt, "Checkpoint"));
  req(c.evaluate->add_option("--manifest", o.evaluate.manifest, "Split manifest"));
  req(c.evaluate->add_option("--cores", o.evaluate.cores, "Core directory"));
  c.evaluate->add_option("--split", o.evaluate.split, "Split to report on (val|test)")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "val", "test"}));
  c.evaluate->add_flag("--sweep", o.evaluate.sweep, "Choose the F1-optimal threshold on the val split");
  c.evaluate->add_option("--threshold", o.evaluate.threshold, "Fixed threshold (multiple of 0.01) when not sweeping")
      ->capture_default_str();
  req(c.evaluate->add_option("--report", o.evaluate.report, "Report file to write"));
  c.evaluate->add_option("--curve", o.evaluate.curve, "With --sweep: write `threshold<TAB>P<TAB>R<TAB>F1` lines");
  c.evaluate->add_option("--patch", o.evaluate.patch, "Inference patch size")->capture_default_str()->check(CLI::PositiveNumber);
  c.evaluate->add_option("--stride", o.evaluate.stride, "Patch stride")->capture_default_str()->check(CLI::PositiveNumber);
  return c;
}

bool parse_bool(const std::string& key, const std::string& v) {
  std::string s = v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw UsageError("config key '" + key + "' expects true or false, got '" + v + "'");
}

// Appends config values for flags the command line left unset.
std::vector<std::string> merge_config(const Commands& c, const std::vector<std::string>& args,
                                      const std::string& config_path) {
  std::ifstream in(config_path);
  if (!in) throw UsageError("cannot read config file " + config_path);
  std::stringstream text;
  text << in.rdbuf();
  const auto entries = parse_config_text(text.str(), config_path);
  CLI::App* sub = c.app->get_subcommands().front();
  std::vector<std::string> merged = args;
  for (const auto& [key, value] : entries) {
    const std::string name = "--" + key;
    CLI::Option* opt = nullptr;
    if (key != "help" && key != "config") {
      opt = sub->get_option_no_throw(name);
      if (opt == nullptr) opt = c.app->get_option_no_throw(name);
    }
    if (opt == nullptr) {
      throw UsageError("unknown config key '" + key + "' for '" + sub->get_name() + "'");
    }
    if (opt->count() > 0) continue;
    if (opt->get_expected_min() == 0) {
      if (parse_bool(key, value)) merged.push_back(name);
    } else {
      merged.push_back(name);
      merged.push_back(value);
    }
  }
  return merged;
}

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("TMASEG_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1 || n > 4096) throw UsageError("TMASEG_THREADS must be a positive integer");
    return static_cast<int>(n);
  }
  return 1;
}

ModelConfig parse_preset(const std::string& name, std::uint64_t seed) {
  try {
    return preset(name, seed);
  } catch (const Error&) {
    std::string names;
    for (const auto& n : preset_names()) names += " " + n;
    throw UsageError("unknown --arch '" + name + "'; presets:" + names);
  }
}

SplitFractions parse_fractions(const std::string& text) {
  std::vector<double> v;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(trim(item), &used));
      if (used != trim(item).size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw UsageError("--fractions: '" + item + "' is not a number");
    }
  }
  if (v.size() != 3) throw UsageError("--fractions needs three comma-separated values");
  for (double f : v) {
    if (!(f > 0.0 && f <= 1.0)) throw UsageError("--fractions values must lie in (0, 1]");
  }
  if (std::abs(v[0] + v[1] + v[2] - 1.0) > 1e-6) throw UsageError("--fractions must sum to 1");
  return {v[0], v[1], v[2]};
}

void check_patch(const ModelConfig& cfg, int patch) {
  const int a = alignment_of(cfg.arch);
  if (patch % a != 0) {
    throw UsageError("--patch " + std::to_string(patch) + " must be a multiple of " + std::to_string(a) + " for " +
                     model_name(cfg));
  }
}

int cmd_convert(const ConvertArgs& a, std::ostream& out) {
  const ImageRGB image = load_rgb(a.mask);
  const LabelMask mask = decode_annotation(image);
  std::int64_t off_palette = 0;
  std::array<std::int64_t, kTissueClassCount> counts{};
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const auto label = mask.labels[static_cast<std::size_t>(y) * static_cast<std::size_t>(mask.width) +
                                     static_cast<std::size_t>(x)];
      ++counts[static_cast<std::size_t>(label)];
      const auto* px = image.pixel(y, x);
      if (!(PaletteColor{px[0], px[1], px[2]} == kPalette[static_cast<std::size_t>(label)])) ++off_palette;
    }
  }
  save_rgb(encode_labels(mask), a.out);
  out << "size\t" << mask.height << 'x' << mask.width << '\n';
  for (int c = 0; c < kTissueClassCount; ++c) {
    out << tissue_class_name(static_cast<TissueClass>(c)) << '\t' << counts[static_cast<std::size_t>(c)] << '\n';
  }
  out << "off_palette\t" << off_palette << '\n';
  return kExitOk;
}

int cmd_split(const SplitArgs& a, std::ostream& out) {
  const SplitFractions fractions = parse_fractions(a.fractions);
  CoreStore store(a.cores);
  const auto records = store.scan();
  const SplitManifest manifest = balance_split(records, fractions, a.seed);
  write_manifest(manifest, a.out);
  for (auto s : kAllSplits) {
    const auto t = manifest.totals(s);
    out << split_name(s) << '\t' << manifest.count(s) << " cores\tcancer=" << t.cancer << " stroma=" << t.stroma
        << " necrosis=" << t.necrosis << " normal=" << t.normal << '\n';
  }
  out << "imbalance\t" << split_imbalance(manifest, fractions) << '\n';
  return kExitOk;
}

int cmd_train(const TrainArgs& a, int threads, std::ostream& out) {
  TrainConfig cfg;
  cfg.model = parse_preset(a.arch, a.seed);
  check_patch(cfg.model, a.patch);
  cfg.patch = a.patch;
  cfg.batch = a.batch;
  cfg.steps = a.steps;
  cfg.adam = {a.lr, a.beta1, a.beta2, a.eps};
  cfg.seed = a.seed;
  cfg.augment = a.augment;
  cfg.val_interval = a.val_interval;
  cfg.checkpoint = a.out;
  cfg.log = a.log;
  cfg.threads = threads;
  try {
    validate(cfg);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const SplitManifest manifest = read_manifest(a.manifest);
  CoreStore store(a.cores);
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) resume = load_checkpoint(a.resume);
  const TrainResult r = train(cfg, manifest, store, resume ? &*resume : nullptr);
  out << "model\t" << model_name(cfg.model) << " (" << r.latest.params.parameter_count() << " parameters)\n";
  out << "steps\t" << r.latest.params.step() << '\n';
  if (!r.losses.empty()) out << "final_loss\t" << r.losses.back() << '\n';
  out << "best_val_loss\t" << r.latest.best_val_loss << '\n';
  out << "checkpoint\t" << a.out << '\n';
  return kExitOk;
}

int cmd_predict(const PredictArgs& a, int threads, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  check_patch(ck.config, a.patch);
  const Network net = restore_network(ck);
  const ImageRGB image = load_rgb(a.image);
  const Heatmap heat = predict_core(net, image, a.patch, a.stride, threads);
  save_heatmap(heat, a.out);
  out << "heatmap\t" << heat.height() << 'x' << heat.width() << '\t' << a.out << '\n';
  return kExitOk;
}

int cmd_evaluate(const EvaluateArgs& a, int threads, std::ostream& out) {
  if (!a.curve.empty() && !a.sweep) throw UsageError("--curve requires --sweep");
  if (!a.sweep) {
    try {
      threshold_index(a.threshold);
    } catch (const Error&) {
      throw UsageError("--threshold must be a multiple of 0.01 in [0, 1]");
    }
  }
  const Split split = parse_split(a.split);
  const Checkpoint ck = load_checkpoint(a.ckpt);
  check_patch(ck.config, a.patch);
  const Network net = restore_network(ck);
  const SplitManifest manifest = read_manifest(a.manifest);
  CoreStore store(a.cores);

  double threshold = a.threshold;
  std::vector<ScoreHistogram> val;
  if (a.sweep) {
    val = score_split(net, manifest, Split::Val, store, a.patch, a.stride, threads);
    const ThresholdSweep sweep = sweep_threshold(val);
    threshold = sweep.best_threshold;
    if (!a.curve.empty()) write_curve(sweep, a.curve);
    out << "val_threshold\t" << format_2dp(threshold) << "\tval_f1\t" << format_2dp(sweep.best.f1) << '\n';
  }
  const auto scored = (a.sweep && split == Split::Val) ? val
                                                        : score_split(net, manifest, split, store, a.patch, a.stride, threads);
  const EvalReport report = make_report(model_name(ck.config), threshold, scored);
  write_report(report, a.report);
  out << "model\t" << report.model << "\tsplit\t" << split_name(split) << "\tthreshold\t" << format_2dp(threshold)
      << '\n';
  out << "macro\t" << format_2dp(report.macro.precision) << ' ' << format_2dp(report.macro.recall) << ' '
      << format_2dp(report.macro.f1) << '\n';
  return kExitOk;
}

int parse_into(Commands& c, std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  std::reverse(args.begin(), args.end());
  try {
    c.app->parse(args);
  } catch (const CLI::CallForHelp& e) {
    c.app->exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    c.app->exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    c.app->exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    c.app->exit(e, out, err);
    return kExitUsage;
  }
  return -1;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> entries;
  std::stringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw Error(ErrorCode::ParseError, where + "expected `key = value`");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty() || value.empty()) throw Error(ErrorCode::ParseError, where + "empty key or value");
    if (!entries.emplace(key, value).second) throw Error(ErrorCode::ParseError, where + "repeated key '" + key + "'");
  }
  return entries;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> effective = args;
  {
    Options probe;
    Commands c = build(probe, false);
    if (int code = parse_into(c, args, out, err); code >= 0) return code;
    if (!probe.config.empty()) {
      try {
        effective = merge_config(c, args, probe.config);
      } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
      } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
      }
    }
  }
  Options o;
  Commands c = build(o, true);
  if (int code = parse_into(c, effective, out, err); code >= 0) return code;

  try {
    const int threads = resolve_threads(o.threads);
    if (c.app->got_subcommand(c.convert)) return cmd_convert(o.convert, out);
    if (c.app->got_subcommand(c.split)) return cmd_split(o.split, out);
    if (c.app->got_subcommand(c.train)) return cmd_train(o.train, threads, out);
    if (c.app->got_subcommand(c.predict)) return cmd_predict(o.predict, threads, out);
    if (c.app->got_subcommand(c.evaluate)) return cmd_evaluate(o.evaluate, threads, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\nRun with --help for the list of flags.\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  err << "error: no subcommand\n";
  return kExitUsage;
}

}  // namespace tmaseg::cli
