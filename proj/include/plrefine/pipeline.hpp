#pragma once

// Batch orchestration: binarize -> best component -> morphology -> prompts -> refinement, plus the
// evaluate / tune / ablate drivers used by the command-line tool.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "plrefine/backends.hpp"
#include "plrefine/components.hpp"
#include "plrefine/config.hpp"
#include "plrefine/dataset.hpp"
#include "plrefine/hpo.hpp"
#include "plrefine/maps.hpp"
#include "plrefine/metrics.hpp"
#include "plrefine/morphology.hpp"
#include "plrefine/npy.hpp"
#include "plrefine/png.hpp"
#include "plrefine/prompts.hpp"
#include "plrefine/refine.hpp"

namespace plrefine {

namespace fs = std::filesystem;

/// Binarize, keep the best component per class, then apply the morphology operator.
inline MaskSet clean_mask(const ProbabilityMap& probs, const RefinementConfig& config) {
  const MaskSet binary = binarize(probs, config.threshold);
  const MaskSet best = keep_best_component(binary, probs, config.connectivity);
  return apply_morph(best, config.morph, config.fallback_on_empty);
}

struct PipelineResult {
  MaskSet cleaned;
  PromptExtraction prompts;
  MaskRefinement refined;
};

inline PipelineResult run_pipeline(const Image& image, const ProbabilityMap& probs, const RefinementConfig& config,
                                   Refiner& refiner) {
  if (image.width() != probs.width() || image.height() != probs.height())
    throw DimensionMismatch("image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                            " but its probability map is " + std::to_string(probs.width()) + "x" +
                            std::to_string(probs.height()));
  PipelineResult r;
  r.cleaned = clean_mask(probs, config);
  r.prompts = build_prompt_sets(r.cleaned, config.prompt_mode);
  r.refined = refine_mask_set(refiner, image, r.prompts.prompts, config.prompt_mode, probs.num_classes(), &r.cleaned);
  return r;
}

inline int effective_workers(const RefinementConfig& config) {
  int n = config.workers > 0 ? config.workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (config.refiner == RefinerKind::remote) n = std::min(n, config.remote.max_in_flight);
  return std::max(1, n);
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < std::min<int>(workers, static_cast<int>(n)); ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
  }
  if (error) std::rethrow_exception(error);
}

/// Wraps refiners that declare a serial contract so concurrent workers take turns.
inline std::shared_ptr<Refiner> honour_serial_contract(std::shared_ptr<Refiner> refiner,
                                                       const std::shared_ptr<std::mutex>& lock) {
  if (refiner->concurrent_calls_safe()) return refiner;
  return std::make_shared<SerializedRefiner>(std::move(refiner), lock);
}

/// An image with its likelihoods and (optionally) ground truth, held in memory.
struct Sample {
  std::string id;
  Image image;
  ProbabilityMap probs;
  std::optional<MaskSet> truth;
};

inline Sample load_sample(const DatasetEntry& entry, bool need_truth) {
  Sample s{entry.id(), read_image(entry.image), read_probability_map(entry.probs), std::nullopt};
  if (entry.gt) s.truth = read_mask_set(*entry.gt);
  if (need_truth && !s.truth) throw ConfigError("entry " + entry.id() + " has no ground truth");
  if (s.truth && (s.truth->width() != s.image.width() || s.truth->height() != s.image.height() ||
                  s.truth->num_classes() != s.probs.num_classes()))
    throw DimensionMismatch("ground truth of " + entry.id() + " does not match its probability map");
  return s;
}

/// Refined masks for in-memory samples, in input order.
inline std::vector<MaskSet> refine_samples(const std::vector<Sample>& samples, const RefinementConfig& config,
                                           const RefinerFactory& factory) {
  std::vector<MaskSet> out(samples.size());
  auto lock = std::make_shared<std::mutex>();
  parallel_for(samples.size(), effective_workers(config), [&](std::size_t i) {
    const auto& s = samples[i];
    auto refiner = honour_serial_contract(factory(s.truth ? &*s.truth : nullptr), lock);
    out[i] = run_pipeline(s.image, s.probs, config, *refiner).refined.mask;
  });
  return out;
}

inline DiceReport evaluate_samples(const std::vector<MaskSet>& predictions, const std::vector<Sample>& samples,
                                   AbsentPolicy policy) {
  std::vector<MaskSet> truths;
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    if (!s.truth) throw ConfigError("sample " + s.id + " has no ground truth");
    truths.push_back(*s.truth);
    ids.push_back(s.id);
  }
  return evaluate(predictions, truths, policy, ids);
}

// ---- refine ----

struct EntryRecord {
  std::string id;
  std::string image;
  std::string status;  // ok | failed | skipped
  std::string output;
  std::vector<int> empty_classes;
  std::vector<std::string> warnings;
  std::string error;
  int refiner_calls = 0;
  double seconds = 0;
};

inline nlohmann::json to_json(const EntryRecord& r) {
  return {{"id", r.id},           {"image", r.image},         {"status", r.status},
          {"output", r.output},   {"empty_classes", r.empty_classes}, {"warnings", r.warnings},
          {"error", r.error},     {"refiner_calls", r.refiner_calls}, {"seconds", r.seconds}};
}

struct RefineRun {
  std::vector<EntryRecord> records;  // one per index entry, index order
  int ok = 0, failed = 0, skipped = 0;
  nlohmann::json manifest;

  bool partial_failure() const { return failed > 0; }
};

struct RefineOptions {
  Split split = Split::unlabelled;
  bool write_prompts = false;  // also emit <id>.prompts.json
};

/// Refines every entry of the chosen split into <out_dir>/<id>.npy and writes manifest.json.
/// Entries of other splits are listed as skipped; per-entry errors are recorded and the run goes on.
inline RefineRun cmd_refine(const DatasetIndex& index, const RefinementConfig& config, const fs::path& out_dir,
                            const RefineOptions& options = {}, RefinerFactory factory = {}) {
  config.validate();
  index.validate();
  fs::create_directories(out_dir);
  if (!factory) factory = make_refiner_factory(config);

  RefineRun run;
  run.records.resize(index.entries.size());
  auto lock = std::make_shared<std::mutex>();
  const auto started = std::chrono::steady_clock::now();
  parallel_for(index.entries.size(), effective_workers(config), [&](std::size_t i) {
    const auto& entry = index.entries[i];
    auto& rec = run.records[i];
    rec.id = entry.id();
    rec.image = entry.image.generic_string();
    if (entry.split != options.split) {
      rec.status = "skipped";
      return;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const Sample s = load_sample(entry, false);
      auto refiner = honour_serial_contract(factory(s.truth ? &*s.truth : nullptr), lock);
      auto result = run_pipeline(s.image, s.probs, config, *refiner);
      const fs::path out = out_dir / (rec.id + ".npy");
      write_mask_set(result.refined.mask, out);
      if (options.write_prompts) {
        auto arr = nlohmann::json::array();
        for (const auto& ps : result.prompts.prompts) arr.push_back(to_json(ps));
        std::ofstream(out_dir / (rec.id + ".prompts.json")) << arr.dump() << '\n';
      }
      rec.output = out.filename().generic_string();
      rec.empty_classes = result.prompts.empty_classes;
      rec.warnings = result.prompts.warnings;
      rec.warnings.insert(rec.warnings.end(), result.refined.warnings.begin(), result.refined.warnings.end());
      rec.refiner_calls = result.refined.calls;
      rec.status = "ok";
    } catch (const std::exception& e) {
      rec.status = "failed";
      rec.error = e.what();
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });

  auto entries = nlohmann::json::array();
  for (const auto& r : run.records) {
    run.ok += r.status == "ok";
    run.failed += r.status == "failed";
    run.skipped += r.status == "skipped";
    entries.push_back(to_json(r));
  }
  run.manifest = {{"config_fingerprint", fingerprint(config)},
                   {"config", to_json(config)},
                   {"split", to_string(options.split)},
                   {"counts", {{"ok", run.ok}, {"failed", run.failed}, {"skipped", run.skipped}}},
                   {"total_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()},
                   {"entries", entries}};
  std::ofstream(out_dir / "manifest.json") << run.manifest.dump(2) << '\n';
  return run;
}

// ---- evaluate ----

enum class PredictionSource {
  masks,          // <pred_dir>/<id>.npy mask sets
  probabilities,  // the index's probability maps, binarized (the unrefined baseline)
};

struct EvaluateOptions {
  Split split = Split::test;
  PredictionSource source = PredictionSource::masks;
  fs::path report_dir;   // report.json / report.csv written here when set
  fs::path overlay_dir;  // overlay PNGs written here when set
};

struct EvaluateRun {
  std::optional<DiceReport> report;
  std::vector<std::pair<std::string, std::string>> failures;  // (id, reason)
  nlohmann::json json;
};

/// Image with the contour of every predicted class drawn in a per-class colour.
inline std::vector<std::uint8_t> render_overlay(const Image& image, const MaskSet& mask) {
  const int w = image.width(), h = image.height();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < image.size(); ++i) rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = image[i] / 2;
  for (int c = 0; c < mask.num_classes(); ++c) {
    const double hue = std::fmod(c * 0.61803398875, 1.0) * 6.0;
    const double f = hue - std::floor(hue);
    const int sector = static_cast<int>(hue);
    const double rgbf[6][3] = {{1, f, 0}, {1 - f, 1, 0}, {0, 1, f}, {0, 1 - f, 1}, {f, 0, 1}, {1, 0, 1 - f}};
    const auto& col = rgbf[sector % 6];
    const auto& p = mask.plane(c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!p(x, y)) continue;
        const bool edge = x == 0 || y == 0 || x == w - 1 || y == h - 1 || !p(x - 1, y) || !p(x + 1, y) ||
                          !p(x, y - 1) || !p(x, y + 1);
        if (!edge) continue;
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        for (int k = 0; k < 3; ++k) rgb[3 * i + k] = static_cast<std::uint8_t>(55 + 200 * col[k]);
      }
  }
  return png::encode_rgb8(w, h, rgb);
}

inline EvaluateRun cmd_evaluate(const DatasetIndex& index, const RefinementConfig& config, const fs::path& pred_dir,
                                const EvaluateOptions& options = {}) {
  EvaluateRun run;
  std::vector<MaskSet> preds, truths;
  std::vector<std::string> ids;
  for (const auto& entry : index.of_split(options.split)) {
    try {
      if (!entry.gt) throw ConfigError("no ground truth");
      MaskSet truth = read_mask_set(*entry.gt);
      MaskSet pred;
      if (options.source == PredictionSource::probabilities) {
        pred = binarize(read_probability_map(entry.probs), config.threshold);
      } else {
        const fs::path p = pred_dir / (entry.id() + ".npy");
        if (!fs::exists(p)) throw Error("missing prediction " + p.string());
        pred = read_mask_set(p);
      }
      if (!pred.same_shape(truth)) throw DimensionMismatch("prediction and ground truth differ in shape");
      if (!options.overlay_dir.empty()) {
        fs::create_directories(options.overlay_dir);
        npy::write_file_bytes(options.overlay_dir / (entry.id() + ".png"), render_overlay(read_image(entry.image), pred));
      }
      preds.push_back(std::move(pred));
      truths.push_back(std::move(truth));
      ids.push_back(entry.id());
    } catch (const std::exception& e) {
      run.failures.emplace_back(entry.id(), e.what());
    }
  }
  auto failures = nlohmann::json::array();
  for (const auto& [id, why] : run.failures) failures.push_back({{"id", id}, {"error", why}});
  if (!preds.empty()) {
    run.report = evaluate(preds, truths, config.absent_policy, ids);
    run.report->config_fingerprint = fingerprint(config);
    run.json = to_json(*run.report);
  } else {
    run.json = {{"mean", nullptr}, {"std", nullptr}, {"images", nlohmann::json::array()}};
  }
  run.json["failures"] = failures;
  run.json["split"] = to_string(options.split);
  if (!options.report_dir.empty()) {
    fs::create_directories(options.report_dir);
    std::ofstream(options.report_dir / "report.json") << run.json.dump(2) << '\n';
    if (run.report) std::ofstream(options.report_dir / "report.csv") << to_csv(*run.report);
  }
  return run;
}

// ---- tune ----

/// Mean validation Dice of the configuration a search point resolves to.
inline hpo::Objective make_objective(const std::vector<Sample>& samples, const RefinementConfig& base,
                                     RefinerFactory factory = {}) {
  return [&samples, base, factory](const hpo::Params& params, nlohmann::json& snapshot) {
    const RefinementConfig config = apply_params(base, params);
    snapshot = to_json(config);
    const RefinerFactory f = factory ? factory : make_refiner_factory(config);
    return evaluate_samples(refine_samples(samples, config, f), samples, config.absent_policy).mean;
  };
}

inline hpo::Validity config_validity(const RefinementConfig& base) {
  return [base](const hpo::Params& p) {
    try {
      apply_params(base, p);
      return true;
    } catch (const ConfigError&) {
      return false;
    }
  };
}

struct TuneRun {
  hpo::TuneResult result;
  std::optional<RefinementConfig> best_config;
};

/// TPE search on the validation split. The history file is appended after every trial and, when it
/// already exists, resumed from.
inline TuneRun cmd_tune(const DatasetIndex& index, const RefinementConfig& base, const hpo::SearchSpace& space,
                        int n_trials, std::uint64_t seed, const fs::path& history_path = {},
                        std::function<void(const hpo::Trial&)> on_trial = {}, RefinerFactory factory = {}) {
  std::vector<Sample> samples;
  for (const auto& e : index.of_split(Split::val)) samples.push_back(load_sample(e, true));
  if (samples.empty()) throw EmptyDataset("index has no validation entries");
  std::vector<hpo::Trial> history;
  if (!history_path.empty()) history = hpo::load_history(history_path);
  hpo::TuneOptions options;
  options.n_trials = n_trials;
  options.seed = seed;
  options.valid = config_validity(base);
  options.history_path = history_path;
  options.on_trial = std::move(on_trial);
  TuneRun run{hpo::tune(make_objective(samples, base, std::move(factory)), space, options, std::move(history)),
              std::nullopt};
  if (run.result.best) run.best_config = apply_params(base, run.result.best->params);
  return run;
}

// ---- ablate ----

struct AblationPlan {
  std::vector<int> subset_sizes;  // explicit sizes; generated from `step` when empty
  int step = 5;
  std::string seed_image;         // id or path of the single image covering all classes
  std::uint64_t rng_seed = 0;
  std::optional<fs::path> predictions_root;  // <root>/n<size>/<id>.npy probability maps per subset
};

inline AblationPlan plan_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  AblationPlan p;
  try {
    p.subset_sizes = j.value("subset_sizes", std::vector<int>{});
    p.step = j.value("step", 5);
    p.seed_image = j.value("seed_image", std::string());
    p.rng_seed = j.value("rng_seed", std::uint64_t{0});
    if (j.contains("predictions_root") && !j["predictions_root"].is_null()) {
      fs::path root = j["predictions_root"].get<std::string>();
      p.predictions_root = root.is_absolute() || base_dir.empty() ? root : base_dir / root;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed ablation plan: ") + e.what());
  }
  return p;
}

/// Sizes 1, step, 2*step, ... and finally the full training-set size.
inline std::vector<int> resolve_subset_sizes(const AblationPlan& plan, int n_train) {
  std::vector<int> sizes = plan.subset_sizes;
  if (sizes.empty()) {
    if (plan.step < 1) throw ConfigError("ablation step must be >= 1");
    sizes.push_back(1);
    for (int n = plan.step; n < n_train; n += plan.step)
      if (n > 1) sizes.push_back(n);
    if (n_train > 1) sizes.push_back(n_train);
  }
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1) throw ConfigError("ablation subset sizes must be >= 1");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ConfigError("ablation subset sizes must be strictly increasing");
  }
  if (sizes.empty()) throw ConfigError("ablation plan has no subset sizes");
  if (sizes.back() > n_train)
    throw ConfigError("ablation needs " + std::to_string(sizes.back()) + " training entries, index has " +
                      std::to_string(n_train));
  return sizes;
}

/// Nested subsets: the designated seed image first, then the remaining training entries in a
/// seeded random order; subset n is the first n of that order.
inline std::vector<std::vector<DatasetEntry>> nested_subsets(const std::vector<DatasetEntry>& train,
                                                             const AblationPlan& plan, const std::vector<int>& sizes) {
  auto is_seed = [&](const DatasetEntry& e) {
    return e.id() == plan.seed_image || e.image.generic_string() == plan.seed_image ||
           e.image.filename().generic_string() == plan.seed_image;
  };
  auto seed_it = std::find_if(train.begin(), train.end(), is_seed);
  if (plan.seed_image.empty() || seed_it == train.end())
    throw ConfigError("ablation seed image '" + plan.seed_image + "' is not a training entry");
  std::vector<DatasetEntry> rest;
  for (const auto& e : train)
    if (!is_seed(e)) rest.push_back(e);
  std::mt19937_64 rng(plan.rng_seed);
  // Fisher-Yates with an explicit draw so the order does not depend on std::shuffle's implementation
  for (std::size_t i = rest.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(rest[i - 1], rest[j]);
  }
  std::vector<DatasetEntry> order{*seed_it};
  order.insert(order.end(), rest.begin(), rest.end());
  std::vector<std::vector<DatasetEntry>> out;
  for (int n : sizes) out.emplace_back(order.begin(), order.begin() + n);
  return out;
}

struct AblationRow {
  int n = 0;
  std::string method;
  double mean = 0;
  double std = 0;
};

struct AblationRun {
  std::vector<int> sizes;
  std::vector<std::vector<DatasetEntry>> subsets;
  std::vector<AblationRow> rows;
  std::vector<std::string> warnings;
};

/// Emits subsets.json and, for every size whose per-subset probability maps exist, evaluates the
/// unrefined and refined test-split labels into ablation.csv.
inline AblationRun cmd_ablate(const DatasetIndex& index, const AblationPlan& plan, const RefinementConfig& config,
                              const fs::path& out_dir, RefinerFactory factory = {}) {
  const auto train = index.of_split(Split::train);
  AblationRun run;
  run.sizes = resolve_subset_sizes(plan, static_cast<int>(train.size()));
  run.subsets = nested_subsets(train, plan, run.sizes);

  fs::create_directories(out_dir);
  nlohmann::json subsets = nlohmann::json::object();
  for (std::size_t k = 0; k < run.sizes.size(); ++k) {
    auto files = nlohmann::json::array();
    for (const auto& e : run.subsets[k])
      files.push_back({{"image", e.image.generic_string()},
                       {"gt", e.gt ? nlohmann::json(e.gt->generic_string()) : nlohmann::json()}});
    subsets[std::to_string(run.sizes[k])] = files;
  }
  std::ofstream(out_dir / "subsets.json")
      << nlohmann::json{{"sizes", run.sizes}, {"rng_seed", plan.rng_seed}, {"seed_image", plan.seed_image}, {"subsets", subsets}}.dump(2)
      << '\n';

  if (plan.predictions_root) {
    if (!factory) factory = make_refiner_factory(config);
    const auto test = index.of_split(Split::test);
    for (int n : run.sizes) {
      const fs::path dir = *plan.predictions_root / ("n" + std::to_string(n));
      if (!fs::is_directory(dir)) {
        run.warnings.push_back("no predictions for subset size " + std::to_string(n) + " (" + dir.string() + ")");
        continue;
      }
      try {
        std::vector<Sample> samples;
        for (const auto& e : test) {
          DatasetEntry moved = e;
          moved.probs = dir / (e.id() + ".npy");
          samples.push_back(load_sample(moved, true));
        }
        if (samples.empty()) throw EmptyDataset("index has no test entries");
        std::vector<MaskSet> unrefined;
        for (const auto& s : samples) unrefined.push_back(binarize(s.probs, config.threshold));
        const auto base = evaluate_samples(unrefined, samples, config.absent_policy);
        const auto refined = evaluate_samples(refine_samples(samples, config, factory), samples, config.absent_policy);
        run.rows.push_back({n, "unrefined", base.mean, base.std});
        run.rows.push_back({n, "refined", refined.mean, refined.std});
      } catch (const std::exception& e) {
        run.warnings.push_back("subset size " + std::to_string(n) + " skipped: " + e.what());
      }
    }
    std::ofstream csv(out_dir / "ablation.csv");
    csv.precision(17);
    csv << "n,method,mean,std\n";
    for (const auto& r : run.rows) csv << r.n << ',' << r.method << ',' << r.mean << ',' << r.std << '\n';
  }
  return run;
}

}  // namespace plrefine
