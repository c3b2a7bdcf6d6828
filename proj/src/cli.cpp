#include "msfr/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <ostream>

#include "msfr/checkpoint.hpp"
#include "msfr/config.hpp"
#include "msfr/evaluation.hpp"
#include "msfr/gradcheck_suite.hpp"
#include "msfr/io.hpp"
#include "msfr/pipeline.hpp"
#include "msfr/toy_data.hpp"

namespace fs = std::filesystem;

namespace msfr {

namespace {

/// A configuration or argument problem found before any work starts.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Remembers everything a command creates and deletes it unless committed.
class OutputGuard {
 public:
  OutputGuard() = default;
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = files_.rbegin(); it != files_.rend(); ++it) fs::remove(*it, ec);
    for (auto it = dirs_.rbegin(); it != dirs_.rend(); ++it) {
      if (fs::is_empty(*it, ec)) fs::remove(*it, ec);
    }
  }

  const fs::path& file(const fs::path& p) {
    files_.push_back(p);
    return files_.back();
  }

  void dir(const fs::path& p) {
    if (fs::exists(p)) {
      if (!fs::is_directory(p)) throw UsageError("not a directory: " + p.string());
      return;
    }
    std::vector<fs::path> created;
    for (fs::path q = p; !q.empty() && !fs::exists(q); q = q.parent_path()) created.push_back(q);
    fs::create_directories(p);
    dirs_.insert(dirs_.end(), created.begin(), created.end());
  }

  void commit() { committed_ = true; }

 private:
  std::vector<fs::path> files_;
  std::vector<fs::path> dirs_;
  bool committed_ = false;
};

void require_input(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what);
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

void require_input_dir(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what);
  if (!fs::is_directory(path)) throw UsageError(std::string(what) + " is not a directory: " + path);
}

void require_output_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what);
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw UsageError(std::string(what) + ": directory does not exist: " + parent.string());
  }
  if (fs::is_directory(path)) throw UsageError(std::string(what) + " is a directory: " + path);
}

void require_output_dir(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what);
  if (fs::exists(path) && !fs::is_directory(path)) throw UsageError(std::string(what) + " is not a directory: " + path);
}

/// Averages RGB to gray when the model expects one channel.
std::vector<Scene> scenes_for(const std::string& annotations, const ModelConfig& model) {
  std::vector<Scene> scenes = load_scenes(annotations);
  const int want = model.backbone.in_channels;
  for (Scene& s : scenes) {
    const int have = s.image.dim(1);
    if (have == want) continue;
    if (have != 3 || want != 1) {
      throw std::runtime_error("image " + s.id + " has " + std::to_string(have) + " channels, model expects " +
                               std::to_string(want));
    }
    Tensor gray({1, 1, s.image.dim(2), s.image.dim(3)});
    for (int y = 0; y < gray.dim(2); ++y) {
      for (int x = 0; x < gray.dim(3); ++x) {
        gray.at(0, 0, y, x) = (s.image.at(0, 0, y, x) + s.image.at(0, 1, y, x) + s.image.at(0, 2, y, x)) / 3.0;
      }
    }
    s.image = std::move(gray);
  }
  return scenes;
}

Model load_model(const RunConfig& cfg) {
  Model model(cfg.model, 0);
  restore_params(load_checkpoint(cfg.checkpoint), model.params());
  return model;
}

// ---- subcommands -------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  require_output_dir(cfg.data_dir, "output directory (--out)");
  OutputGuard guard;
  guard.dir(cfg.data_dir);
  const ToyDataset ds = generate_toy_dataset(cfg.n_images, cfg.train.image_size, cfg.faces, cfg.train.seed);
  AnnotationFile ann;
  int faces = 0;
  for (const Scene& s : ds.scenes) {
    const std::string name = s.id + ".pgm";
    save_image(guard.file(fs::path(cfg.data_dir) / name), s.image, s.width, s.height);
    ann.push_back({name, s.gt_boxes});
    faces += static_cast<int>(s.gt_boxes.size());
  }
  const fs::path ann_path = fs::path(cfg.data_dir) / "annotations.txt";
  write_file(guard.file(ann_path), serialize_annotations(ann));
  guard.commit();
  out << "wrote " << ds.scenes.size() << " images with " << faces << " faces; annotations: " << ann_path.string()
      << "\n";
  return kExitOk;
}

int cmd_train(RunConfig cfg, std::ostream& out, std::ostream& err) {
  require_input(cfg.train_annotations, "training annotations (--data)");
  require_output_file(cfg.checkpoint, "checkpoint (--checkpoint)");
  if (cfg.trace.empty()) cfg.trace = cfg.checkpoint + ".trace";
  require_output_file(cfg.trace, "loss trace (--trace)");
  const std::vector<Scene> scenes = scenes_for(cfg.train_annotations, cfg.model);

  OutputGuard guard;
  const int report_every = std::max(cfg.train.trace_every, cfg.train.iterations / 20);
  TrainedModel t = train_model(cfg.model, scenes, cfg.train, [&](const TraceRow& row) {
    if (row.iteration % report_every == 0 || row.iteration == cfg.train.iterations) {
      err << "iter " << format_trace_row(row) << "\n";
    }
  });
  write_file(guard.file(cfg.trace), format_trace(t.trace));
  save_checkpoint(guard.file(cfg.checkpoint), snapshot_params(t.model.params()));
  guard.commit();
  out << "trained " << cfg.train.iterations << " iterations on " << scenes.size() << " images; checkpoint "
      << cfg.checkpoint << ", trace " << cfg.trace << "\n";
  return kExitOk;
}

int cmd_detect(const RunConfig& cfg, std::ostream& out) {
  require_input(cfg.checkpoint, "checkpoint (--checkpoint)");
  require_input(cfg.test_annotations, "image list (--data)");
  require_output_dir(cfg.detections_dir, "detection directory (--out)");
  if (!cfg.overlay_dir.empty()) require_output_dir(cfg.overlay_dir, "overlay directory (--overlay)");
  const Model model = load_model(cfg);
  std::vector<Scene> scenes = scenes_for(cfg.test_annotations, cfg.model);
  std::sort(scenes.begin(), scenes.end(), [](const Scene& a, const Scene& b) { return a.id < b.id; });

  OutputGuard guard;
  guard.dir(cfg.detections_dir);
  if (!cfg.overlay_dir.empty()) guard.dir(cfg.overlay_dir);
  std::size_t total = 0;
  for (const Scene& s : scenes) {
    const std::vector<Detection> dets =
        model.detect(s.image, s.width, s.height, cfg.score_threshold, cfg.nms_threshold);
    total += dets.size();
    write_file(guard.file(fs::path(cfg.detections_dir) / (s.id + ".txt")), format_detections(dets));
    if (!cfg.overlay_dir.empty()) {
      save_image(guard.file(fs::path(cfg.overlay_dir) / (s.id + ".ppm")), render_overlay(s.image, s.width, s.height, dets),
                 s.width, s.height);
    }
  }
  guard.commit();
  out << "wrote " << total << " detections for " << scenes.size() << " images to " << cfg.detections_dir << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  require_input(cfg.test_annotations, "annotations (--data)");
  require_input_dir(cfg.detections_dir, "detection directory (--detections)");
  if (!cfg.report.empty()) require_output_file(cfg.report, "report (--report)");
  std::vector<AnnotatedImage> images;
  for (const AnnotationRecord& r : parse_annotations(cfg.test_annotations)) {
    images.push_back({image_stem(r.image_path), r.boxes});
  }
  std::vector<fs::path> files;
  for (const fs::directory_entry& e : fs::directory_iterator(cfg.detections_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  DetectionMap dets;
  for (const fs::path& f : files) dets[f.stem().string()] = parse_detections_text(read_file(f), f.string());

  const std::string report = format_report(evaluate_dataset(images, dets, cfg.eval));
  OutputGuard guard;
  if (!cfg.report.empty()) write_file(guard.file(cfg.report), report);
  guard.commit();
  out << report;
  return kExitOk;
}

int cmd_gradcheck(int seeds, double tolerance, std::ostream& out) {
  GradCheckSuiteConfig gc;
  gc.seeds = seeds;
  gc.tolerance = tolerance;
  const std::vector<GradCheckRow> rows = run_gradcheck_suite(gc);
  out << format_gradcheck_table(rows);
  const bool ok = std::all_of(rows.begin(), rows.end(), [](const GradCheckRow& r) { return r.passed; });
  out << (ok ? "all gradient checks passed\n" : "gradient check FAILED\n");
  return ok ? kExitOk : kExitRuntime;
}

int cmd_ablate(const RunConfig& cfg, const std::string& out_dir, std::ostream& out) {
  require_input(cfg.train_annotations, "training annotations (--train)");
  require_input(cfg.test_annotations, "test annotations (--test)");
  if (!out_dir.empty()) require_output_dir(out_dir, "report directory (--out)");
  const std::vector<Scene> train = scenes_for(cfg.train_annotations, cfg.model);
  const std::vector<Scene> test = scenes_for(cfg.test_annotations, cfg.model);
  const AblationResult r = run_ablation(train, test, cfg);
  const std::string ms = format_report(r.multi_scale), t5 = format_report(r.tap5_only);

  OutputGuard guard;
  if (!out_dir.empty()) {
    guard.dir(out_dir);
    write_file(guard.file(fs::path(out_dir) / "report_multi_scale.txt"), ms);
    write_file(guard.file(fs::path(out_dir) / "report_tap5_only.txt"), t5);
  }
  guard.commit();
  out << "# multi_scale (" << r.multi_scale_params << " parameters)\n" << ms;
  out << "# tap5_only (" << r.tap5_only_params << " parameters)\n" << t5;
  const double a = r.multi_scale.overall.ap.value_or(0.0), b = r.tap5_only.overall.ap.value_or(0.0);
  char buf[128];
  std::snprintf(buf, sizeof buf, "ap_multi_scale %.6f\nap_tap5_only %.6f\nap_gap %.6f\n", a, b, a - b);
  out << buf;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale Faster R-CNN face detector: data, training, detection and evaluation", "msfr"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> sets;
  // flag text -> config key, in application order
  std::vector<std::pair<CLI::Option*, std::string>> flag_keys;
  std::map<std::string, std::string> flag_values;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override one config key (key=value), repeatable");
  };
  auto keyed = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    CLI::Option* o = sub->add_option(flag, flag_values[flag + "@" + sub->get_name()], help);
    flag_keys.emplace_back(o, key);
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic face dataset");
  common(gen);
  keyed(gen, "--out", "data_dir", "output directory");
  keyed(gen, "--count", "n_images", "number of images");
  keyed(gen, "--size", "image_size", "image side in pixels");
  keyed(gen, "--face-min", "face_min", "smallest face height");
  keyed(gen, "--face-max", "face_max", "largest face height");
  keyed(gen, "--seed", "seed", "random seed");

  CLI::App* tr = app.add_subcommand("train", "train a model and write a checkpoint and loss trace");
  common(tr);
  keyed(tr, "--data", "train_annotations", "training annotation file");
  keyed(tr, "--checkpoint", "checkpoint", "output checkpoint");
  keyed(tr, "--trace", "trace", "output loss trace (default: <checkpoint>.trace)");
  keyed(tr, "--iterations", "iterations", "SGD iterations");
  keyed(tr, "--lr", "learning_rate", "learning rate");
  keyed(tr, "--seed", "seed", "random seed");

  CLI::App* det = app.add_subcommand("detect", "run a trained model over annotated images");
  common(det);
  keyed(det, "--checkpoint", "checkpoint", "model checkpoint");
  keyed(det, "--data", "test_annotations", "annotation file listing the images");
  keyed(det, "--out", "detections_dir", "directory for per-image detection files");
  keyed(det, "--overlay", "overlay_dir", "directory for PPM overlays");
  keyed(det, "--score-threshold", "score_threshold", "minimum detection score");

  CLI::App* ev = app.add_subcommand("eval", "score detection files against annotations");
  common(ev);
  keyed(ev, "--data", "test_annotations", "annotation file");
  keyed(ev, "--detections", "detections_dir", "directory of detection files");
  keyed(ev, "--report", "report", "output report file");
  keyed(ev, "--iou-threshold", "iou_threshold", "match criterion (IoU strictly above)");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every layer");
  int gc_seeds = 5;
  double gc_tol = 1e-4;
  gc->add_option("--seeds", gc_seeds, "seeds per operation")->check(CLI::Range(1, 1000));
  gc->add_option("--tolerance", gc_tol, "maximum relative error")->check(CLI::PositiveNumber);

  CLI::App* ab = app.add_subcommand("ablate", "train multi-scale and tap5-only models and compare AP");
  common(ab);
  std::string ablate_out;
  keyed(ab, "--train", "train_annotations", "training annotation file");
  keyed(ab, "--test", "test_annotations", "held-out annotation file");
  keyed(ab, "--iterations", "iterations", "SGD iterations per model");
  keyed(ab, "--seed", "seed", "random seed");
  ab->add_option("--out", ablate_out, "directory for the two report files");

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success&) {
    out << app.help();
    for (CLI::App* sub : app.get_subcommands()) out << sub->help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  RunConfig cfg;
  try {
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      apply_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [opt, key] : flag_keys) {
      if (opt->count() == 0) continue;
      apply_config_value(cfg, key, opt->as<std::string>());
    }
    cfg.validate();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(cfg, out);
    if (tr->parsed()) return cmd_train(cfg, out, err);
    if (det->parsed()) return cmd_detect(cfg, out);
    if (ev->parsed()) return cmd_eval(cfg, out);
    if (gc->parsed()) return cmd_gradcheck(gc_seeds, gc_tol, out);
    if (ab->parsed()) return cmd_ablate(cfg, ablate_out, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << "error: no subcommand\n";
  return kExitUsage;
}

}  // namespace msfr
