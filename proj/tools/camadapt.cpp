// camadapt: batch entry point for dataset building, training, transformation,
// evaluation and the benchmark study. Logs go to stderr; results go to files.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "camadapt/autograd.hpp"
#include "camadapt/bench.hpp"
#include "camadapt/checkpoint.hpp"
#include "camadapt/error.hpp"
#include "camadapt/gradcheck.hpp"
#include "camadapt/image.hpp"
#include "camadapt/preprocess.hpp"
#include "camadapt/synth.hpp"
#include "camadapt/training.hpp"

namespace fs = std::filesystem;
using namespace camadapt;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool dry_run = false;
  bool quiet = false;
};

Globals g;

void log(const std::string& s) {
  if (!g.quiet) std::cerr << s << std::endl;
}

void plan(const std::string& s) { std::cerr << "[dry-run] " << s << std::endl; }

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) fail(ErrorKind::kIo, what + " not found: " + p.string());
}

TrainConfig load_config_or(const std::string& path, const TrainConfig& defaults) {
  TrainConfig c = path.empty() ? defaults : load_train_config(path, defaults);
  if (g.seed) c.seed = *g.seed;
  c.validate();
  return c;
}

nlohmann::json read_json_file(const fs::path& p) {
  require_file(p, "config");
  std::ifstream in(p);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kConfig, p.string() + ": " + e.what());
  }
}

std::string seconds_since(std::chrono::steady_clock::time_point t0) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1fs",
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return buf;
}

// ---- synth

struct SynthArgs {
  std::string config;
  std::string out;
};

void cmd_synth(const SynthArgs& a) {
  SynthConfig c = a.config.empty() ? default_benchmark_config(g.seed.value_or(2020))
                                   : parse_synth_config(read_json_file(a.config));
  if (g.seed) c.seed = *g.seed;
  const std::size_t per_brand = [&] {
    std::size_t n = 0;
    for (int k : c.train_per_grade) n += k;
    for (int k : c.test_per_grade) n += k;
    return n;
  }();
  if (g.dry_run) {
    plan("would write " + std::to_string(per_brand * c.filters.size()) + " images for " +
         std::to_string(c.filters.size()) + " brands under " + a.out);
    return;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const Manifest m = build_synth_dataset(c, a.out);
  std::ofstream(fs::path(a.out) / "synth.json") << synth_config_to_json(c).dump(2) << "\n";
  write_cross_tab_csv(fs::path(a.out) / "cross_tab.csv", cross_tab(m), m.task());
  log("wrote " + std::to_string(m.size()) + " images to " + a.out + " in " + seconds_since(t0));
}

// ---- prep

struct PrepArgs {
  std::string brands, grades, images, ext = ".png", out, task = "binary", split = "test";
  int size = 0;
};

void cmd_prep(const PrepArgs& a) {
  const Task task = parse_task(a.task);
  const Split split = parse_split(a.split);
  if (a.size != 0 && (a.size < 16 || a.size % 16 != 0)) fail(ErrorKind::kConfig, "--size must be a multiple of 16");
  const Manifest joined = join_brand_labels(a.brands, a.grades, a.images, a.ext, task, split);
  const CrossTab tab = cross_tab(joined);
  if (g.dry_run) {
    plan("joined " + std::to_string(joined.size()) + " images over " + std::to_string(tab.brands.size()) +
         " brands; would write " + a.out + "/manifest.csv");
    return;
  }
  fs::create_directories(a.out);
  std::vector<ImageRecord> records;
  for (const auto& r : joined.records()) {
    if (a.size == 0) {
      records.push_back(r);
      continue;
    }
    const fs::path dst = fs::path(a.out) / "images" / (r.image_id() + ".png");
    fs::create_directories(dst.parent_path());
    write_png(dst, square_and_resize(read_image(r.path()), a.size));
    records.emplace_back(r.image_id(), dst, r.grade(), r.brand(), r.split());
  }
  const Manifest m(task, std::move(records), joined.brands());
  save_manifest(fs::path(a.out) / "manifest.csv", m);
  write_cross_tab_csv(fs::path(a.out) / "cross_tab.csv", tab, task);
  log("manifest with " + std::to_string(m.size()) + " images written to " + a.out);
}

// ---- train-cls

struct TrainClsArgs {
  std::string manifest, source, config, out, task = "binary";
};

void cmd_train_cls(const TrainClsArgs& a) {
  const TrainConfig c = load_config_or(a.config, default_classifier_config());
  const Manifest m = load_manifest(a.manifest, parse_task(a.task));
  if (!m.has_brand(a.source)) fail(ErrorKind::kConfig, "source brand '" + a.source + "' not in manifest");
  if (g.dry_run) {
    plan("would train a classifier on " + std::to_string(m.select(a.source, Split::kTrain).size()) + " " +
         a.source + " images for " + std::to_string(c.epochs) + " epochs into " + a.out);
    return;
  }
  ClassifierTrainingOptions o;
  o.out_dir = a.out;
  o.on_epoch = [](const ClassifierEpoch& e) {
    char line[128];
    std::snprintf(line, sizeof(line), "epoch %d loss %.4f acc %.3f lr %.2e", e.epoch, e.loss, e.accuracy, e.lr);
    log(line);
  };
  train_classifier(m, a.source, c, o);
  log("classifier written to " + (fs::path(a.out) / "classifier.ckpt").string());
}

// ---- train-adapt

struct TrainAdaptArgs {
  std::string manifest, source, target, classifier, config, out, task = "binary";
  int log_every = 19;
};

void cmd_train_adapt(const TrainAdaptArgs& a) {
  require_file(a.classifier, "classifier checkpoint");
  const Manifest m = load_manifest(a.manifest, parse_task(a.task));
  for (const auto& b : {a.source, a.target}) {
    if (!m.has_brand(b)) fail(ErrorKind::kConfig, "brand '" + b + "' not in manifest");
  }
  const Classifier cls = load_classifier(a.classifier);
  TrainConfig defaults;
  defaults.image_size = cls.config().input_size;
  const TrainConfig c = load_config_or(a.config, defaults);
  if (c.image_size != cls.config().input_size) {
    fail(ErrorKind::kArtifactMismatch, "classifier expects " + std::to_string(cls.config().input_size) +
                                           " px images, config asks for " + std::to_string(c.image_size));
  }
  if (g.dry_run) {
    plan("would adapt " + a.source + " <- " + a.target + " for " + std::to_string(c.epochs) + " epochs into " +
         a.out);
    return;
  }
  AdaptationOptions o;
  o.out_dir = a.out;
  const auto t0 = std::chrono::steady_clock::now();
  o.on_step = [&](const LossRow& r) {
    if (a.log_every <= 0 || r.step % a.log_every != 0) return;
    char line[200];
    std::snprintf(line, sizeof(line), "step %lld epoch %d gan_F %.4f gan_G %.4f cyc %.5f idt %.5f total %.4f",
                  static_cast<long long>(r.step), r.epoch, r.loss.gan_f, r.loss.gan_g, r.loss.cyc, r.loss.idt,
                  r.loss.total);
    log(std::string(line) + " " + seconds_since(t0));
  };
  cls.freeze();
  train_adaptation(m, a.source, a.target, cls, c, o);
  log("adaptation written to " + (fs::path(a.out) / "adapt.ckpt").string());
}

// ---- transform

struct TransformArgs {
  std::string checkpoint, classifier, out, direction = "to-source";
  std::vector<std::string> inputs;
  bool resize = false;
};

void cmd_transform(const TransformArgs& a) {
  require_file(a.checkpoint, "adaptation checkpoint");
  require_file(a.classifier, "classifier checkpoint");
  if (a.direction != "to-source" && a.direction != "to-target") {
    fail(ErrorKind::kConfig, "--direction must be to-source or to-target");
  }
  const Classifier cls = load_classifier(a.classifier);
  const AdaptationRun run = load_adaptation(a.checkpoint, cls);
  const ResidualGenerator& gen = a.direction == "to-source" ? run.g : run.f;
  std::vector<Image> images;
  for (const auto& in : a.inputs) {
    Image img = read_image(in);
    if (img.height != run.image_size || img.width != run.image_size) {
      if (!a.resize) {
        fail(ErrorKind::kArtifactMismatch, in + ": " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                               " does not match the checkpoint's " +
                                               std::to_string(run.image_size) + " px (use --resize)");
      }
      img = square_and_resize(img, run.image_size);
    }
    images.push_back(std::move(img));
  }
  if (g.dry_run) {
    plan("would write " + std::to_string(images.size()) + " transformed images and heatmaps to " + a.out);
    return;
  }
  fs::create_directories(a.out);
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Transformed t = transform(gen, constant(to_tensor(images[i])));
    Image heat = image_from_tensor(t.residue.value(), 0);
    for (double& v : heat.data) v = std::clamp((v + 1.0) / 2.0, 0.0, 1.0);
    const std::string stem = fs::path(a.inputs[i]).stem().string();
    write_png(fs::path(a.out) / (stem + ".png"), image_from_tensor(t.image.value(), 0));
    write_png(fs::path(a.out) / (stem + "_residue.png"), heat);
  }
  log("transformed " + std::to_string(images.size()) + " images into " + a.out);
}

// ---- eval

struct EvalArgs {
  std::string manifest, classifier, source, out, task = "binary";
  std::vector<std::string> adapt;  // brand=checkpoint
};

void cmd_eval(const EvalArgs& a) {
  require_file(a.classifier, "classifier checkpoint");
  const Manifest m = load_manifest(a.manifest, parse_task(a.task));
  if (!m.has_brand(a.source)) fail(ErrorKind::kConfig, "source brand '" + a.source + "' not in manifest");
  const Classifier cls = load_classifier(a.classifier);
  std::vector<std::pair<DomainId, fs::path>> wanted;
  for (const auto& item : a.adapt) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::kConfig, "--adapt expects BRAND=CHECKPOINT, got " + item);
    wanted.emplace_back(item.substr(0, eq), item.substr(eq + 1));
    require_file(wanted.back().second, "adaptation checkpoint");
  }
  if (g.dry_run) {
    plan("would evaluate " + std::to_string(m.brands().size()) + " brands (" + std::to_string(wanted.size()) +
         " adapted) into " + a.out);
    return;
  }
  std::vector<AdaptationRun> runs;
  runs.reserve(wanted.size());
  std::map<DomainId, const AdaptationRun*> by_brand;
  for (const auto& [brand, path] : wanted) {
    runs.push_back(load_adaptation(path, cls));
    by_brand[brand] = &runs.back();
  }
  StudyReport r;
  r.source = a.source;
  r.task = m.task();
  r.metric = metric_for(m.task());
  r.seed = g.seed.value_or(0);
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(cls.parameters().hash()));
  r.config_hash = hash;
  r.code_version = code_version();
  r.results = evaluate_matrix(cls, m, a.source, by_brand, cls.config().input_size, g.jobs);
  emit_reports(a.out, r);
  std::cerr << render_report(r, ReportFormat::kMarkdown);
}

// ---- study

struct StudyArgs {
  std::string spec, out;
  bool shift_only = false;
};

void cmd_study(const StudyArgs& a) {
  ExperimentSpec spec = a.spec.empty() ? default_experiment_spec(a.out, g.seed.value_or(2020))
                                       : load_experiment_spec(a.spec);
  if (!a.out.empty()) spec.out_dir = a.out;
  if (spec.out_dir.empty()) fail(ErrorKind::kConfig, "study needs --out or out_dir in the spec");
  if (g.seed) {
    spec.seed = *g.seed;
    spec = with_derived_seeds(spec);
  }
  spec.validate();
  if (g.dry_run) {
    plan("study " + config_hash(spec) + ": source " + spec.source + ", " + std::to_string(spec.targets.size()) +
         " targets, classifier " + std::to_string(spec.classifier.epochs) + " epochs, adaptation " +
         std::to_string(spec.adaptation.epochs) + " epochs, output " + spec.out_dir.string());
    return;
  }
  StudyOptions o;
  o.jobs = g.jobs;
  const auto t0 = std::chrono::steady_clock::now();
  o.log = [&](const std::string& s) { log("[" + seconds_since(t0) + "] " + s); };
  const StudyReport r = a.shift_only ? run_shift_study(spec, o) : run_adaptation_study(spec, o);
  std::cerr << render_report(r, ReportFormat::kMarkdown);
  log("reports written to " + spec.out_dir.string());
}

// ---- gradcheck

struct GradcheckArgs {
  GradcheckOptions options;
};

int cmd_gradcheck(GradcheckArgs a) {
  if (a.options.size < 16 || a.options.size % 16 != 0) fail(ErrorKind::kConfig, "--size must be a multiple of 16");
  if (g.seed) a.options.seed = *g.seed;
  if (g.dry_run) {
    plan("would run gradcheck at " + std::to_string(a.options.size) + " px");
    return 0;
  }
  const GradcheckReport r = run_gradcheck(a.options);
  std::cout << format_gradcheck(r);
  return r.passed ? 0 : 1;
}

// ---- report

struct ReportArgs {
  std::string in, out, format = "md";
};

void cmd_report(const ReportArgs& a) {
  const ReportFormat f = parse_report_format(a.format);
  const StudyReport r = load_report(a.in);
  if (g.dry_run) {
    plan("would write " + to_string(f) + " report with " + std::to_string(r.results.size()) + " rows to " + a.out);
    return;
  }
  emit_report(a.out, r, f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"camadapt: camera-brand domain adaptation with residual CycleGANs"};
  app.require_subcommand(1);
  app.add_option("--seed", g.seed, "Seed for every random choice (overrides config files)");
  app.add_option("--jobs", g.jobs, "Worker threads for per-target runs and evaluation")->check(CLI::PositiveNumber);
  app.add_flag("--dry-run", g.dry_run, "Validate inputs and print the plan without writing anything");
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress logs");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic multi-brand fundus dataset");
  s->add_option("--config", synth.config, "Synthetic dataset config (JSON); default benchmark if omitted");
  s->add_option("--out", synth.out, "Output directory")->required();

  PrepArgs prep;
  auto* p = app.add_subcommand("prep", "Join brand labels with grades into a manifest");
  p->add_option("--brands", prep.brands, "CSV with image_id,brand")->required();
  p->add_option("--grades", prep.grades, "CSV with image_id,grade[,split]")->required();
  p->add_option("--images", prep.images, "Directory holding <image_id><ext>")->required();
  p->add_option("--ext", prep.ext, "Image file extension")->capture_default_str();
  p->add_option("--out", prep.out, "Output directory")->required();
  p->add_option("--task", prep.task, "binary or grade")->capture_default_str();
  p->add_option("--split", prep.split, "Split for rows without one")->capture_default_str();
  p->add_option("--size", prep.size, "Crop to the fundus disc and resize to this side (0 keeps originals)");

  TrainClsArgs tc;
  auto* c = app.add_subcommand("train-cls", "Train the source-brand classifier");
  c->add_option("--manifest", tc.manifest, "Manifest CSV")->required();
  c->add_option("--source", tc.source, "Source brand")->required();
  c->add_option("--config", tc.config, "Training config (JSON)");
  c->add_option("--out", tc.out, "Output directory")->required();
  c->add_option("--task", tc.task, "binary or grade")->capture_default_str();

  TrainAdaptArgs ta;
  auto* t = app.add_subcommand("train-adapt", "Train a residual CycleGAN between two brands");
  t->add_option("--manifest", ta.manifest, "Manifest CSV")->required();
  t->add_option("--source", ta.source, "Source brand")->required();
  t->add_option("--target", ta.target, "Target brand")->required();
  t->add_option("--classifier", ta.classifier, "Frozen classifier checkpoint")->required();
  t->add_option("--config", ta.config, "Training config (JSON)");
  t->add_option("--out", ta.out, "Output directory")->required();
  t->add_option("--task", ta.task, "binary or grade")->capture_default_str();
  t->add_option("--log-every", ta.log_every, "Log every N steps (0 disables)")->capture_default_str();

  TransformArgs tr;
  auto* x = app.add_subcommand("transform", "Apply a trained generator to images");
  x->add_option("--checkpoint", tr.checkpoint, "Adaptation checkpoint")->required();
  x->add_option("--classifier", tr.classifier, "Classifier the adaptation was trained against")->required();
  x->add_option("--out", tr.out, "Output directory")->required();
  x->add_option("--direction", tr.direction, "to-source (target images) or to-target")->capture_default_str();
  x->add_flag("--resize", tr.resize, "Crop and resize inputs that do not match the checkpoint");
  x->add_option("images", tr.inputs, "Input images")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a classifier on every brand's test split");
  e->add_option("--manifest", ev.manifest, "Manifest CSV")->required();
  e->add_option("--classifier", ev.classifier, "Classifier checkpoint")->required();
  e->add_option("--source", ev.source, "Source brand")->required();
  e->add_option("--adapt", ev.adapt, "BRAND=CHECKPOINT; adds an adapted cell (repeatable)");
  e->add_option("--out", ev.out, "Output directory for report.{csv,json,md}")->required();
  e->add_option("--task", ev.task, "binary or grade")->capture_default_str();

  StudyArgs st;
  auto* b = app.add_subcommand("study", "Run the domain-shift and adaptation study");
  b->add_option("--spec", st.spec, "Experiment spec (JSON); default synthetic benchmark if omitted");
  b->add_option("--out", st.out, "Output directory (overrides the spec)");
  b->add_flag("--shift-only", st.shift_only, "Stop after the unadapted evaluation");

  GradcheckArgs gc;
  auto* k = app.add_subcommand("gradcheck", "Finite-difference check of every loss term");
  k->add_option("--size", gc.options.size, "Image side")->capture_default_str();
  k->add_option("--samples", gc.options.samples, "Scalars per parameter group")->capture_default_str();
  k->add_option("--tolerance", gc.options.tolerance, "Relative error bound")->capture_default_str();
  k->add_flag("--corrupt", gc.options.corrupt_gradient, "Scale analytic gradients (negative control)")
      ->group("");

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Render a stored report.json");
  r->add_option("--in", rp.in, "report.json")->required();
  r->add_option("--format", rp.format, "csv, json or md")->capture_default_str();
  r->add_option("--out", rp.out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*s) cmd_synth(synth);
    if (*p) cmd_prep(prep);
    if (*c) cmd_train_cls(tc);
    if (*t) cmd_train_adapt(ta);
    if (*x) cmd_transform(tr);
    if (*e) cmd_eval(ev);
    if (*b) cmd_study(st);
    if (*k) return cmd_gradcheck(gc);
    if (*r) cmd_report(rp);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << std::endl;
    return err.exit_code();
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << std::endl;
    return 4;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << std::endl;
    return 2;
  }
  return 0;
}
