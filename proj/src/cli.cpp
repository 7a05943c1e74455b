#include "tilemark/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>

#include "tilemark/error.hpp"
#include "tilemark/parallel.hpp"
#include "tilemark/prediction_io.hpp"
#include "tilemark/run_config.hpp"

namespace tilemark {

int worker_count() {
  if (const char* env = std::getenv("TILEMARK_THREADS"); env && *env) {
    int n = 0;
    try {
      n = parse_int("TILEMARK_THREADS", env);
    } catch (const ConfigError&) {
      n = 0;
    }
    if (n < 1) throw ConfigError("TILEMARK_THREADS must be a positive integer");
    return n;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

namespace cli {

namespace fs = std::filesystem;

namespace {

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int count = 0;
  int size = 64;
  std::string pattern = "parallel";
  int spacing = 16;
  int width = 2;
  std::optional<double> orientation;
  double gain = 1.0;
  double noise = 1.0;
  int roads = 1;
  std::uint64_t seed = 0;
  std::string prefix = "scene";
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.count < 1) throw ConfigError("--count must be >= 1");
  const bool mixed = a.pattern == "mixed";
  if (!mixed) drain_pattern_from_string(a.pattern);

  std::vector<SynthSceneConfig> configs;
  for (int i = 0; i < a.count; ++i) {
    SynthSceneConfig c;
    c.size = a.size;
    c.line_spacing = a.spacing;
    c.line_width = a.width;
    c.line_brightness_gain = a.gain;
    c.background_noise_scale = a.noise;
    c.n_confounder_roads = a.roads;
    c.seed = mix_seed(a.seed, static_cast<std::uint64_t>(i));
    std::mt19937_64 pose(mix_seed(c.seed, 99));
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(pose);
    c.orientation_deg = a.orientation ? *a.orientation : 180.0 * u;
    c.pattern = mixed ? (pose() % 2 ? DrainPattern::kHerringbone : DrainPattern::kParallel)
                      : drain_pattern_from_string(a.pattern);
    c.validate();
    configs.push_back(c);
  }

  std::vector<Sample> samples(configs.size());
  parallel_for(configs.size(), worker_count(), [&](std::size_t i) {
    samples[i] = generate_synthetic_scene(configs[i]);
    std::ostringstream id;
    id << a.prefix << '_' << std::setw(4) << std::setfill('0') << i;
    samples[i].id = id.str();
  });
  save_dataset(a.out, samples);
  out << "wrote " << samples.size() << " samples to " << a.out << '\n';
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string preset;
  std::vector<std::string> overrides;
  std::string data;
  std::string val;
  std::string out;
  std::string log;
  std::string resume;
};

RunConfig resolve_run_config(const std::string& config_path, const std::string& preset,
                             const std::vector<std::string>& overrides) {
  KeyValueConfig kv;
  if (!config_path.empty()) kv = KeyValueConfig::load(config_path);
  if (!preset.empty()) {
    if (kv.contains("preset") && *kv.get("preset") != preset) {
      throw ConfigError("--preset conflicts with the config file's preset");
    }
    kv.set("preset", preset);
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(' '));
      s.erase(s.find_last_not_of(' ') + 1);
      return s;
    };
    kv.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  return RunConfig::from_kv(kv);
}

std::pair<std::vector<Sample>, std::vector<Sample>> load_split(const TrainArgs& a,
                                                               const DataConfig& data) {
  const fs::path root(a.data);
  if (!a.val.empty()) return {load_dataset(root), load_dataset(a.val)};
  if (fs::is_directory(root / "train") && fs::is_directory(root / "val")) {
    return {load_dataset(root / "train"), load_dataset(root / "val")};
  }
  auto all = load_dataset(root);
  if (all.size() < 2) throw ManifestError("need at least 2 samples to hold out a validation set");
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(data.split_seed, 21));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(data.val_fraction * all.size())), 1, all.size() - 1);
  std::set<std::size_t> val_ids(order.begin(), order.begin() + n_val);
  std::vector<Sample> train, val;
  for (std::size_t i = 0; i < all.size(); ++i) (val_ids.count(i) ? val : train).push_back(all[i]);
  return {train, val};
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.config.empty() && a.preset.empty()) throw ConfigError("train needs --config or --preset");
  const RunConfig run = resolve_run_config(a.config, a.preset, a.overrides);
  auto [train_set, val_set] = load_split(a, run.data);
  if (run.data.augment_factor > 1) {
    train_set = expand_training_set(train_set, run.data.augment_factor, run.data.augment_seed);
  }
  out << "model " << to_string(run.model.kind) << ", " << train_set.size() << " training / "
      << val_set.size() << " validation samples\n";

  std::optional<Checkpoint> resume;
  TrainOptions options;
  if (!a.resume.empty()) {
    resume = load_checkpoint(a.resume);
    if (read_model_config(resume->config).kind != run.model.kind) {
      throw CheckpointError("checkpoint model kind differs from the configured model");
    }
    options.resume = &*resume;
  }
  options.on_epoch = [&](const EpochLog& l) {
    out << "epoch " << l.epoch << "  lr " << format_double(l.lr) << "  train "
        << format_double(l.train_loss) << "  val " << format_double(l.val_loss) << "  ("
        << std::fixed << std::setprecision(1) << l.wall_time << " s)\n"
        << std::defaultfloat << std::setprecision(6);
  };

  const auto result = train(run.model, train_set, val_set, run.train, options);
  const fs::path ckpt(a.out);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(result.best, ckpt);
  const fs::path log = a.log.empty() ? ckpt.parent_path() / "train_log.csv" : fs::path(a.log);
  write_train_log_csv(log, result.logs);
  out << "best epoch " << result.best.epoch << " val " << format_double(result.best.best_val_loss)
      << (result.stopped_early ? " (early stop)" : "") << "\ncheckpoint " << ckpt.string()
      << "\nlog " << log.string() << '\n';
  return kExitOk;
}

// ---- predict ----------------------------------------------------------------

std::vector<std::string> png_ids(const fs::path& dir) {
  std::set<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") ids.insert(e.path().stem().string());
  }
  return {ids.begin(), ids.end()};
}

fs::path subdir_or_self(const fs::path& dir, const char* name) {
  if (!fs::is_directory(dir)) throw ManifestError("not a directory: " + dir.string());
  return fs::is_directory(dir / name) ? dir / name : dir;
}

int cmd_predict(const std::string& ckpt_path, const std::string& images_arg,
                const std::string& out_arg, bool raw, std::ostream& out) {
  const auto loaded = instantiate(load_checkpoint(ckpt_path));
  const fs::path images = subdir_or_self(images_arg, "images");
  const auto ids = png_ids(images);
  if (ids.empty()) throw ManifestError("no PNG images in " + images.string());

  std::vector<Image> inputs(ids.size());
  std::vector<std::string> bad;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    inputs[i] = read_rgb_png(images / (ids[i] + ".png"));
    try {
      loaded.model->check_input(inputs[i].height, inputs[i].width);
    } catch (const ShapeError&) {
      bad.push_back(ids[i]);
    }
  }
  if (!bad.empty()) {
    std::string list;
    for (const auto& id : bad) list += (list.empty() ? "" : ", ") + id;
    throw ShapeError("image size incompatible with the model for: " + list);
  }

  const fs::path dest(out_arg);
  fs::create_directories(dest);
  parallel_for(ids.size(), worker_count(), [&](std::size_t i) {
    const auto prob = predict(*loaded.model, loaded.parameters, inputs[i]);
    write_gray_png(dest / (ids[i] + ".png"), quantize_prediction(prob));
    if (raw) write_raw_prediction(dest / (ids[i] + ".dpred"), prob);
  });
  out << "wrote " << ids.size() << " predictions to " << dest.string() << '\n';
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string report;
  std::string grade_thresholds;
  std::string grade_statistic = "cell";
  double pixel_threshold = 0.5;
  std::string grids;
};

fs::path sibling(const fs::path& report, const std::string& suffix) {
  return report.parent_path() / (report.stem().string() + suffix + ".csv");
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  EvalConfig cfg;
  cfg.pixel_threshold = a.pixel_threshold;
  cfg.grade_statistic = grade_statistic_from_string(a.grade_statistic);
  if (!a.grade_thresholds.empty()) {
    const auto comma = a.grade_thresholds.find(',');
    if (comma == std::string::npos) throw ConfigError("--grade-thresholds expects t1,t2");
    cfg.grade_thresholds =
        std::pair{parse_double("--grade-thresholds", a.grade_thresholds.substr(0, comma)),
                  parse_double("--grade-thresholds", a.grade_thresholds.substr(comma + 1))};
  }
  cfg.validate();

  const fs::path gt_dir = subdir_or_self(a.gt, "masks");
  const fs::path pred_dir(a.pred);
  if (!fs::is_directory(pred_dir)) throw ManifestError("not a directory: " + pred_dir.string());
  const auto gt_ids = png_ids(gt_dir);
  std::set<std::string> pred_ids;
  for (const auto& e : fs::directory_iterator(pred_dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".png" || ext == ".dpred")) {
      pred_ids.insert(e.path().stem().string());
    }
  }
  std::vector<std::string> unmatched;
  for (const auto& id : gt_ids) {
    if (!pred_ids.count(id)) unmatched.push_back("no prediction for " + id);
  }
  const std::set<std::string> gt_set(gt_ids.begin(), gt_ids.end());
  for (const auto& id : pred_ids) {
    if (!gt_set.count(id)) unmatched.push_back("no ground truth for " + id);
  }
  if (!unmatched.empty()) {
    std::string msg;
    for (const auto& m : unmatched) msg += (msg.empty() ? "" : "; ") + m;
    throw ManifestError(msg);
  }
  if (gt_ids.empty()) throw ManifestError("no ground-truth masks in " + gt_dir.string());

  std::vector<ProbabilityMap> probs(gt_ids.size());
  std::vector<BinaryMask> gts(gt_ids.size());
  parallel_for(gt_ids.size(), worker_count(), [&](std::size_t i) {
    probs[i] = read_prediction(pred_dir, gt_ids[i]);
    const auto raw = read_gray_png(gt_dir / (gt_ids[i] + ".png"));
    gts[i] = BinaryMask(raw.height, raw.width);
    for (std::size_t k = 0; k < raw.values.size(); ++k) gts[i].values[k] = raw.values[k] >= 128;
    if (probs[i].height != gts[i].height || probs[i].width != gts[i].width) {
      throw ShapeError("prediction and mask sizes differ for " + gt_ids[i]);
    }
  });

  const auto sweep = threshold_sweep(probs, gts);
  const fs::path report(a.report);
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  write_sweep_csv(report, sweep);

  GradeThresholds thresholds;
  thresholds.pixel_positive_threshold = cfg.pixel_threshold;
  std::string source = "given";
  if (cfg.grade_thresholds) {
    std::tie(thresholds.t1, thresholds.t2) = *cfg.grade_thresholds;
  } else {
    const auto derived = derive_grade_thresholds(gts, cfg.grade_statistic);
    thresholds.t1 = derived.t1;
    thresholds.t2 = derived.t2;
    source = "derived";
  }
  thresholds.validate();

  std::vector<PatchGrid> pred_grids, gt_grids;
  std::ofstream per_image(sibling(report, "_images"), std::ios::binary);
  per_image << "id,dice,iou\n";
  for (std::size_t i = 0; i < gt_ids.size(); ++i) {
    const auto pred_mask = binarize(probs[i], thresholds.pixel_positive_threshold);
    per_image << gt_ids[i] << ',' << format_double(dice_coefficient(pred_mask, gts[i])) << ','
              << format_double(iou(pred_mask, gts[i])) << '\n';
    pred_grids.push_back(grade_patches(downscale_to_grid(pred_mask), thresholds));
    gt_grids.push_back(grade_patches(downscale_to_grid(gts[i]), thresholds));
  }
  const auto cm = patch_confusion(pred_grids, gt_grids);
  write_confusion_csv(sibling(report, "_confusion"), cm);
  write_class_metrics_csv(sibling(report, "_classes"), cm);
  {
    std::ofstream g(sibling(report, "_grading"), std::ios::binary);
    g << "key,value\nt1," << format_double(thresholds.t1) << "\nt2,"
      << format_double(thresholds.t2) << "\npixel_threshold,"
      << format_double(thresholds.pixel_positive_threshold) << "\nsource," << source
      << "\nstatistic," << to_string(cfg.grade_statistic) << '\n';
  }
  if (!a.grids.empty()) {
    fs::create_directories(a.grids);
    for (std::size_t i = 0; i < gt_ids.size(); ++i) {
      write_gray_png(fs::path(a.grids) / (gt_ids[i] + "_pred.png"), grid_to_image(pred_grids[i]));
      write_gray_png(fs::path(a.grids) / (gt_ids[i] + "_gt.png"), grid_to_image(gt_grids[i]));
    }
  }

  out << "images " << gt_ids.size() << "\nmean dice " << format_double(sweep.mean_dice)
      << "\nmean iou " << format_double(sweep.mean_iou) << "\ngrade thresholds (" << source
      << ") t1 " << format_double(thresholds.t1) << " t2 " << format_double(thresholds.t2)
      << "\npatch accuracy "
      << format_double(static_cast<double>(cm.trace()) / static_cast<double>(cm.total())) << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tile-drainage segmentation toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate synthetic drainage scenes");
  synth->add_option("--out", sa.out, "Dataset directory to write")->required();
  synth->add_option("--count", sa.count, "Number of samples")->required();
  synth->add_option("--size", sa.size, "Image side in pixels (multiple of 16)");
  synth->add_option("--pattern", sa.pattern, "parallel, herringbone or mixed");
  synth->add_option("--spacing", sa.spacing, "Line spacing in pixels");
  synth->add_option("--width", sa.width, "Line width in pixels");
  synth->add_option("--orientation", sa.orientation, "Line orientation in degrees (random if unset)");
  synth->add_option("--gain", sa.gain, "Line brightness gain");
  synth->add_option("--noise", sa.noise, "Background noise scale");
  synth->add_option("--roads", sa.roads, "Confounder roads per scene");
  synth->add_option("--seed", sa.seed, "Random seed");
  synth->add_option("--id-prefix", sa.prefix, "Sample id prefix");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", ta.config, "Run config file");
  tr->add_option("--preset", ta.preset, "Preset name")
      ->check(CLI::IsMember(RunConfig::preset_names()));
  tr->add_option("--set", ta.overrides, "key=value override (repeatable)");
  tr->add_option("--data", ta.data, "Dataset directory")->required();
  tr->add_option("--val", ta.val, "Separate validation dataset directory");
  tr->add_option("--out", ta.out, "Checkpoint path")->required();
  tr->add_option("--log", ta.log, "Epoch log CSV (default: train_log.csv beside the checkpoint)");
  tr->add_option("--resume", ta.resume, "Checkpoint to continue from");

  std::string p_ckpt, p_images, p_out;
  bool p_no_raw = false;
  auto* pr = app.add_subcommand("predict", "Write probability maps for a directory of images");
  pr->add_option("--ckpt", p_ckpt, "Checkpoint")->required();
  pr->add_option("--images", p_images, "Image directory (or dataset root)")->required();
  pr->add_option("--out", p_out, "Output directory")->required();
  pr->add_flag("--no-raw", p_no_raw, "Skip the raw .dpred sidecars");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score predictions against ground truth");
  ev->add_option("--pred", ea.pred, "Prediction directory")->required();
  ev->add_option("--gt", ea.gt, "Mask directory (or dataset root)")->required();
  ev->add_option("--report", ea.report, "Pixel-level report CSV")->required();
  ev->add_option("--grade-thresholds", ea.grade_thresholds, "Fixed t1,t2 for patch grades");
  ev->add_option("--grade-statistic", ea.grade_statistic, "cell or image");
  ev->add_option("--pixel-threshold", ea.pixel_threshold, "Binarization threshold for grading");
  ev->add_option("--grids", ea.grids, "Directory for 3x3 grade images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(sa, out);
    if (*tr) return cmd_train(ta, out);
    if (*pr) return cmd_predict(p_ckpt, p_images, p_out, !p_no_raw, out);
    if (*ev) return cmd_eval(ea, out);
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace cli
}  // namespace tilemark
