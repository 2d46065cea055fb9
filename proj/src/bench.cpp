#include "camadapt/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "camadapt/checkpoint.hpp"
#include "camadapt/error.hpp"
#include "camadapt/seed.hpp"

#ifndef CAMADAPT_VERSION
#define CAMADAPT_VERSION "unknown"
#endif

namespace camadapt {
namespace {

void say(const StudyOptions& options, const std::string& message) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  if (options.log) options.log(message);
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results are indexed by
// i, so merge order never depends on scheduling. The first failure (by
// index) is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
}

StudyReport make_report(const ExperimentSpec& spec, std::vector<EvalResult> results) {
  StudyReport r;
  r.source = spec.source;
  r.task = spec.dataset.task;
  r.metric = metric_for(spec.dataset.task);
  r.seed = spec.seed;
  r.config_hash = config_hash(spec);
  r.code_version = code_version();
  sort_results(results);
  r.results = std::move(results);
  return r;
}

void check_brands(const ExperimentSpec& spec, const Manifest& manifest) {
  if (!manifest.has_brand(spec.source)) fail(ErrorKind::kConfig, "source brand '" + spec.source + "' not in dataset");
  for (const auto& t : spec.targets) {
    if (!manifest.has_brand(t)) fail(ErrorKind::kConfig, "target brand '" + t + "' not in dataset");
  }
}

std::filesystem::path classifier_path(const ExperimentSpec& spec) {
  return spec.out_dir / "classifier" / "classifier.ckpt";
}

// A finished shift study left a classifier trained with exactly this config.
std::optional<Classifier> reusable_classifier(const ExperimentSpec& spec) {
  const auto path = classifier_path(spec);
  if (!std::filesystem::exists(path)) return std::nullopt;
  const Checkpoint ckpt = read_checkpoint(path, "classifier");
  const nlohmann::json& meta = ckpt.config.value("metadata", nlohmann::json::object());
  if (meta.value("source", std::string()) != spec.source) return std::nullopt;
  if (meta.value("config_hash", std::string()) != config_hash(spec)) return std::nullopt;
  if (meta.value("epoch", -1) != spec.classifier.epochs) return std::nullopt;
  return load_classifier(path);
}

Classifier obtain_classifier(const ExperimentSpec& spec, const Manifest& manifest,
                             const StudyOptions& options) {
  if (auto cls = reusable_classifier(spec)) {
    say(options, "reusing classifier " + classifier_path(spec).string());
    return std::move(*cls);
  }
  say(options, "training classifier on " + spec.source);
  ClassifierTrainingOptions copt;
  copt.out_dir = spec.out_dir / "classifier";
  copt.on_epoch = [&](const ClassifierEpoch& e) {
    char line[128];
    std::snprintf(line, sizeof(line), "classifier epoch %d loss %.4f acc %.3f", e.epoch, e.loss, e.accuracy);
    say(options, line);
  };
  ClassifierTraining trained = train_classifier(manifest, spec.source, spec.classifier, copt);
  // Tag the final checkpoint so a later adaptation study can reuse it.
  save_classifier(classifier_path(spec), trained.classifier,
                  {{"source", spec.source},
                   {"epoch", spec.classifier.epochs},
                   {"train_config", nlohmann::json(spec.classifier)},
                   {"config_hash", config_hash(spec)}});
  return std::move(trained.classifier);
}

void write_spec(const ExperimentSpec& spec) {
  std::filesystem::create_directories(spec.out_dir);
  write_text(spec.out_dir / "spec.json", experiment_spec_to_json(spec).dump(2) + "\n");
}

}  // namespace

std::string code_version() { return CAMADAPT_VERSION; }

TrainConfig default_benchmark_adaptation_config() {
  TrainConfig c;
  c.epochs = 4;
  c.generator.base_width = 8;
  c.checkpoint_every = 0;
  return c;
}

void ExperimentSpec::validate() const {
  if (source.empty()) fail(ErrorKind::kConfig, "experiment needs a source brand");
  std::set<DomainId> seen;
  for (const auto& t : targets) {
    if (t == source) fail(ErrorKind::kConfig, "source brand '" + source + "' is also listed as a target");
    if (!seen.insert(t).second) fail(ErrorKind::kConfig, "target '" + t + "' listed twice");
  }
  if (dataset.synth.has_value() == !dataset.manifest.empty()) {
    fail(ErrorKind::kConfig, "dataset needs exactly one of 'synthetic' or 'manifest'");
  }
  if (dataset.synth) {
    const SynthConfig& s = *dataset.synth;
    if (s.source != source) fail(ErrorKind::kConfig, "synthetic source '" + s.source + "' differs from '" + source + "'");
    for (const auto& t : targets) {
      if (!s.filters.count(t)) fail(ErrorKind::kConfig, "target '" + t + "' has no synthetic filter");
    }
    if (s.task != dataset.task) fail(ErrorKind::kConfig, "synthetic task differs from dataset task");
  }
  classifier.validate();
  adaptation.validate();
  if (classifier.image_size != adaptation.image_size ||
      classifier.image_size != classifier.classifier.input_size) {
    fail(ErrorKind::kConfig, "classifier and adaptation image sizes differ");
  }
  if (dataset.synth && dataset.synth->image_size != classifier.image_size) {
    fail(ErrorKind::kConfig, "synthetic image_size differs from the training image size");
  }
}

ExperimentSpec default_experiment_spec(const std::filesystem::path& out_dir, std::uint64_t seed) {
  ExperimentSpec spec;
  spec.dataset.synth = default_benchmark_config(seed);
  spec.dataset.task = Task::kBinary;
  spec.source = "A";
  spec.targets = {"B", "C", "D", "E"};
  spec.classifier = default_classifier_config();
  spec.adaptation = default_benchmark_adaptation_config();
  spec.out_dir = out_dir;
  spec.seed = seed;
  return with_derived_seeds(std::move(spec));
}

ExperimentSpec with_derived_seeds(ExperimentSpec spec) {
  if (spec.dataset.synth) spec.dataset.synth->seed = spec.seed;
  spec.classifier.seed = spec.seed;
  spec.adaptation.seed = spec.seed;
  return spec;
}

std::uint64_t target_seed(std::uint64_t seed, const DomainId& target) {
  return mix_seed(seed, fnv1a(target.data(), target.size()));
}

nlohmann::json experiment_spec_to_json(const ExperimentSpec& spec) {
  nlohmann::json dataset{{"task", to_string(spec.dataset.task)}};
  if (spec.dataset.synth) {
    dataset["synthetic"] = synth_config_to_json(*spec.dataset.synth);
  } else {
    dataset["manifest"] = spec.dataset.manifest.string();
  }
  return {{"dataset", dataset},
          {"source", spec.source},
          {"targets", spec.targets},
          {"classifier", nlohmann::json(spec.classifier)},
          {"adaptation", nlohmann::json(spec.adaptation)},
          {"out_dir", spec.out_dir.string()},
          {"seed", spec.seed}};
}

ExperimentSpec parse_experiment_spec(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) fail(ErrorKind::kConfig, "experiment spec must be a JSON object");
  static const std::set<std::string> kKnown{"dataset", "source",  "targets", "classifier",
                                            "adaptation", "out_dir", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!kKnown.count(it.key())) fail(ErrorKind::kConfig, "unknown experiment key '" + it.key() + "'");
  }
  ExperimentSpec spec;
  try {
    const nlohmann::json& d = j.at("dataset");
    spec.dataset.task = parse_task(d.value("task", std::string("binary")));
    if (d.contains("synthetic")) spec.dataset.synth = parse_synth_config(d.at("synthetic"));
    if (d.contains("manifest")) {
      std::filesystem::path m = d.at("manifest").get<std::string>();
      spec.dataset.manifest = m.is_relative() && !base_dir.empty() ? base_dir / m : m;
    }
    spec.source = j.at("source").get<std::string>();
    spec.targets = j.at("targets").get<std::vector<std::string>>();
    if (j.contains("classifier")) spec.classifier = parse_train_config(j.at("classifier"), default_classifier_config());
    if (j.contains("adaptation")) {
      spec.adaptation = parse_train_config(j.at("adaptation"), default_benchmark_adaptation_config());
    }
    if (j.contains("out_dir")) spec.out_dir = j.at("out_dir").get<std::string>();
    spec.seed = j.value("seed", spec.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("experiment spec: ") + e.what());
  }
  spec = with_derived_seeds(std::move(spec));
  spec.validate();
  return spec;
}

ExperimentSpec load_experiment_spec(const std::filesystem::path& path) {
  return parse_experiment_spec(read_json(path), path.parent_path());
}

std::string config_hash(const ExperimentSpec& spec) {
  nlohmann::json j = experiment_spec_to_json(spec);
  j.erase("out_dir");
  const std::string text = j.dump();
  return hex64(fnv1a(text.data(), text.size()));
}

Manifest prepare_dataset(const ExperimentSpec& spec) {
  if (!spec.dataset.synth) return load_manifest(spec.dataset.manifest, spec.dataset.task);
  const auto dir = spec.out_dir / "data";
  const nlohmann::json wanted = synth_config_to_json(*spec.dataset.synth);
  if (std::filesystem::exists(dir / "manifest.csv") && std::filesystem::exists(dir / "synth.json")) {
    if (read_json(dir / "synth.json") == wanted) return load_manifest(dir / "manifest.csv", spec.dataset.task);
  }
  Manifest m = build_synth_dataset(*spec.dataset.synth, dir);
  write_text(dir / "synth.json", wanted.dump(2) + "\n");
  return m;
}

std::vector<EvalResult> evaluate_matrix(const Classifier& classifier, const Manifest& manifest,
                                        const DomainId& source,
                                        const std::map<DomainId, const AdaptationRun*>& runs,
                                        int image_size, int jobs) {
  if (!manifest.has_brand(source)) fail(ErrorKind::kConfig, "unknown source brand '" + source + "'");
  for (const auto& [brand, run] : runs) {
    if (!manifest.has_brand(brand)) fail(ErrorKind::kConfig, "adaptation for unknown brand '" + brand + "'");
    if (run == nullptr) fail(ErrorKind::kInvalidArgument, "null adaptation run for brand " + brand);
  }
  struct Cell {
    DomainId brand;
    const AdaptationRun* run;
  };
  std::vector<Cell> cells;
  for (const auto& brand : manifest.brands()) {
    cells.push_back({brand, nullptr});
    auto it = runs.find(brand);
    if (brand != source && it != runs.end()) cells.push_back({brand, it->second});
  }
  for (const auto& brand : manifest.brands()) {
    if (manifest.select(brand, Split::kTest).empty()) {
      fail(ErrorKind::kDegenerateInput, "brand '" + brand + "' has an empty test split");
    }
  }
  std::vector<EvalResult> results(cells.size());
  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    const auto records = manifest.select(cells[i].brand, Split::kTest);
    const std::vector<Image> images = load_images(records, image_size);
    CellPredictions cell;
    cell.labels = task_labels(records, manifest.task());
    std::vector<Prediction> preds;
    if (cells[i].run) {
      for (auto& a : adapt_and_classify(*cells[i].run, images)) preds.push_back(std::move(a.prediction));
    } else {
      preds = classify_batch(classifier, images);
    }
    for (const auto& p : preds) {
      cell.preds.push_back(p.label);
      cell.scores.push_back(p.positive_score());
    }
    results[i] = evaluate_cell(cells[i].brand, manifest.task(), cell, cells[i].run != nullptr);
  });
  sort_results(results);
  return results;
}

std::optional<double> StudyReport::value(const DomainId& brand, bool adapted) const {
  for (const auto& r : results) {
    if (r.brand == brand && r.adapted == adapted) return r.value;
  }
  return std::nullopt;
}

StudyReport run_shift_study(const ExperimentSpec& spec, const StudyOptions& options) {
  spec.validate();
  write_spec(spec);
  const Manifest manifest = prepare_dataset(spec);
  check_brands(spec, manifest);
  const Classifier cls = obtain_classifier(spec, manifest, options);
  say(options, "evaluating " + std::to_string(manifest.brands().size()) + " brands unadapted");
  StudyReport report = make_report(spec, evaluate_matrix(cls, manifest, spec.source, {},
                                                         spec.classifier.image_size, options.jobs));
  emit_reports(spec.out_dir, report);
  return report;
}

StudyReport run_adaptation_study(const ExperimentSpec& spec, const StudyOptions& options) {
  spec.validate();
  write_spec(spec);
  const Manifest manifest = prepare_dataset(spec);
  check_brands(spec, manifest);
  const Classifier cls = obtain_classifier(spec, manifest, options);
  cls.freeze();
  const FeatureStats stats =
      compute_feature_stats(manifest, spec.source, cls, spec.adaptation.image_size, spec.adaptation.bins);

  std::vector<std::optional<AdaptationRun>> runs(spec.targets.size());
  parallel_for(spec.targets.size(), options.jobs, [&](std::size_t i) {
    const DomainId& target = spec.targets[i];
    TrainConfig config = spec.adaptation;
    config.seed = target_seed(spec.seed, target);
    AdaptationOptions aopt;
    aopt.out_dir = spec.out_dir / "adapt" / target;
    aopt.monitor_dir = spec.out_dir / "monitors" / target;
    aopt.stats = stats;
    aopt.keep_going = options.keep_going;
    const std::int64_t log_every = config.checkpoint_every > 0 ? config.checkpoint_every : 20;
    aopt.on_step = [&, target](const LossRow& row) {
      if (row.step % log_every != 0) return;
      char line[160];
      std::snprintf(line, sizeof(line), "%s step %lld epoch %d total %.4f cyc %.4f idt %.4f", target.c_str(),
                    static_cast<long long>(row.step), row.epoch, row.loss.total, row.loss.cyc, row.loss.idt);
      say(options, line);
    };
    say(options, "adapting " + spec.source + " <- " + target);
    runs[i].emplace(train_adaptation(manifest, spec.source, target, cls, config, aopt));
  });

  std::map<DomainId, const AdaptationRun*> by_brand;
  for (std::size_t i = 0; i < runs.size(); ++i) by_brand[spec.targets[i]] = &*runs[i];
  say(options, "evaluating adapted and unadapted cells");
  StudyReport report = make_report(spec, evaluate_matrix(cls, manifest, spec.source, by_brand,
                                                         spec.classifier.image_size, options.jobs));
  emit_reports(spec.out_dir, report);
  return report;
}

std::string to_string(ReportFormat format) {
  switch (format) {
    case ReportFormat::kCsv:
      return "csv";
    case ReportFormat::kJson:
      return "json";
    case ReportFormat::kMarkdown:
      return "md";
  }
  return "csv";
}

ReportFormat parse_report_format(const std::string& token) {
  if (token == "csv") return ReportFormat::kCsv;
  if (token == "json") return ReportFormat::kJson;
  if (token == "md" || token == "markdown") return ReportFormat::kMarkdown;
  fail(ErrorKind::kConfig, "unknown report format '" + token + "' (expected csv, json or md)");
}

std::string render_report(const StudyReport& report, ReportFormat format) {
  if (report.results.empty()) fail(ErrorKind::kInvalidArgument, "report has no results");
  std::vector<EvalResult> results = report.results;
  sort_results(results);
  std::ostringstream out;
  switch (format) {
    case ReportFormat::kCsv:
      out << "brand,metric,value,n_samples,adapted,seed,config_hash,code_version\n";
      for (const auto& r : results) {
        out << r.brand << ',' << to_string(r.metric_name) << ',' << fixed6(r.value) << ',' << r.n_samples << ','
            << (r.adapted ? 1 : 0) << ',' << report.seed << ',' << report.config_hash << ',' << report.code_version
            << '\n';
      }
      break;
    case ReportFormat::kJson: {
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& r : results) {
        rows.push_back({{"brand", r.brand},
                        {"metric", to_string(r.metric_name)},
                        {"value", r.value},
                        {"n_samples", r.n_samples},
                        {"adapted", r.adapted}});
      }
      const nlohmann::json j{{"metadata",
                              {{"source", report.source},
                               {"task", to_string(report.task)},
                               {"metric", to_string(report.metric)},
                               {"seed", report.seed},
                               {"config_hash", report.config_hash},
                               {"code_version", report.code_version}}},
                             {"results", rows}};
      out << j.dump(2) << '\n';
      break;
    }
    case ReportFormat::kMarkdown: {
      const ResultTable table = make_table(results);
      out << "Source `" << report.source << "`, metric " << to_string(report.metric) << ", seed " << report.seed
          << ", config " << report.config_hash << ", " << report.code_version << "\n\n";
      out << "| brand | no adaptation | adapted | n |\n";
      out << "|---|---|---|---|\n";
      for (const auto& row : table.rows) {
        out << "| " << row.brand << " | " << fixed6(row.unadapted) << " | "
            << (row.has_adapted ? fixed6(row.adapted) : std::string("-")) << " | " << row.n_samples << " |\n";
      }
      break;
    }
  }
  return out.str();
}

void emit_report(const std::filesystem::path& path, const StudyReport& report, ReportFormat format) {
  write_text(path, render_report(report, format));
}

void emit_reports(const std::filesystem::path& dir, const StudyReport& report) {
  for (ReportFormat f : {ReportFormat::kCsv, ReportFormat::kJson, ReportFormat::kMarkdown}) {
    emit_report(dir / ("report." + to_string(f)), report, f);
  }
}

StudyReport report_from_json(const nlohmann::json& j) {
  StudyReport r;
  try {
    const nlohmann::json& m = j.at("metadata");
    r.source = m.at("source").get<std::string>();
    r.task = parse_task(m.at("task").get<std::string>());
    r.metric = parse_metric_name(m.at("metric").get<std::string>());
    r.seed = m.at("seed").get<std::uint64_t>();
    r.config_hash = m.at("config_hash").get<std::string>();
    r.code_version = m.at("code_version").get<std::string>();
    for (const auto& row : j.at("results")) {
      EvalResult e;
      e.brand = row.at("brand").get<std::string>();
      e.metric_name = parse_metric_name(row.at("metric").get<std::string>());
      e.value = row.at("value").get<double>();
      e.n_samples = row.at("n_samples").get<std::size_t>();
      e.adapted = row.at("adapted").get<bool>();
      r.results.push_back(e);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("report: ") + e.what());
  }
  sort_results(r.results);
  return r;
}

StudyReport load_report(const std::filesystem::path& json_path) { return report_from_json(read_json(json_path)); }

}  // namespace camadapt
