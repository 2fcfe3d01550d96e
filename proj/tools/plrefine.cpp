// plrefine: pseudo-label refinement from the command line.
//
//   plrefine refine   --index idx.json --config cfg.json --out dir
//   plrefine evaluate --index idx.json --pred dir [--out dir] [--overlays dir]
//   plrefine tune     --index idx.json --space space.json --trials N --seed S
//   plrefine ablate   --index idx.json --plan plan.json --out dir
//   plrefine synth    --out dir
//
// Exit status: 0 success, 1 fatal configuration or I/O error, 2 partial failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "plrefine/pipeline.hpp"
#include "plrefine/synthetic.hpp"

namespace fs = std::filesystem;
using namespace plrefine;

namespace {

constexpr int kOk = 0;
constexpr int kFatal = 1;
constexpr int kPartial = 2;

struct Common {
  std::string index;
  std::string config;
  std::string refiner;
  int workers = -1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--index", c.index, "dataset index JSON")->required();
  cmd->add_option("--config", c.config, "refinement config JSON (defaults when omitted)");
  cmd->add_option("--refiner", c.refiner, "override the configured refiner")
      ->check(CLI::IsMember({"oracle", "random_walk", "remote"}));
  cmd->add_option("--workers", c.workers, "worker threads (0: one per core)");
}

RefinementConfig resolve_config(const Common& c) {
  RefinementConfig config = c.config.empty() ? RefinementConfig{} : load_config(c.config);
  if (!c.refiner.empty()) config.refiner = parse_refiner_kind(c.refiner);
  if (c.workers >= 0) config.workers = c.workers;
  config.validate();
  return config;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

std::string compact(const hpo::Params& p) { return nlohmann::json(p).dump(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Refine segmentation pseudo labels with promptable refiners"};
  app.require_subcommand(1);

  Common refine_common;
  std::string refine_out, refine_split = "unlabelled";
  bool refine_prompts = false;
  auto* refine = app.add_subcommand("refine", "turn probability maps into refined pseudo-label files");
  add_common(refine, refine_common);
  refine->add_option("--out", refine_out, "output directory")->required();
  refine->add_option("--split", refine_split, "split to refine")
      ->check(CLI::IsMember({"train", "val", "test", "unlabelled"}));
  refine->add_flag("--prompts", refine_prompts, "also write <id>.prompts.json");

  Common eval_common;
  std::string eval_pred, eval_out, eval_overlays, eval_split = "test", eval_source = "masks";
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Dice report of predictions against ground truth");
  add_common(evaluate_cmd, eval_common);
  evaluate_cmd->add_option("--pred", eval_pred, "directory of <id>.npy mask files");
  evaluate_cmd->add_option("--source", eval_source, "masks: files in --pred; probs: the index's maps, binarized")
      ->check(CLI::IsMember({"masks", "probs"}));
  evaluate_cmd->add_option("--split", eval_split, "split to score")
      ->check(CLI::IsMember({"train", "val", "test", "unlabelled"}));
  evaluate_cmd->add_option("--out", eval_out, "where report.json / report.csv go (default: --pred)");
  evaluate_cmd->add_option("--overlays", eval_overlays, "write contour overlay PNGs here");

  Common tune_common;
  std::string tune_space, tune_history, tune_out = "best_config.json";
  int tune_trials = 100;
  std::uint64_t tune_seed = 0;
  auto* tune_cmd = app.add_subcommand("tune", "TPE search over the cleaning and prompt choices on the val split");
  add_common(tune_cmd, tune_common);
  tune_cmd->add_option("--space", tune_space, "search-space JSON (default space when omitted)");
  tune_cmd->add_option("--trials", tune_trials, "trial budget, resumed history included")->check(CLI::PositiveNumber);
  tune_cmd->add_option("--seed", tune_seed, "search seed");
  tune_cmd->add_option("--history", tune_history, "JSON-lines trial history (resumed when present)");
  tune_cmd->add_option("--out", tune_out, "best configuration output");

  Common ablate_common;
  std::string ablate_plan, ablate_out;
  auto* ablate = app.add_subcommand("ablate", "nested training subsets and per-subset refine + evaluate");
  add_common(ablate, ablate_common);
  ablate->add_option("--plan", ablate_plan, "ablation plan JSON")->required();
  ablate->add_option("--out", ablate_out, "output directory")->required();

  std::string synth_out;
  int n_train = 10, n_val = 8, n_test = 20, n_unlabelled = 20, synth_size = 96, synth_classes = 4;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "write a synthetic dataset with an index");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--train", n_train)->check(CLI::NonNegativeNumber);
  synth->add_option("--val", n_val)->check(CLI::NonNegativeNumber);
  synth->add_option("--test", n_test)->check(CLI::NonNegativeNumber);
  synth->add_option("--unlabelled", n_unlabelled)->check(CLI::NonNegativeNumber);
  synth->add_option("--size", synth_size, "image side length")->check(CLI::Range(48, 4096));
  synth->add_option("--classes", synth_classes)->check(CLI::Range(1, 16));
  synth->add_option("--seed", synth_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kFatal;
  }

  try {
    if (*refine) {
      const auto config = resolve_config(refine_common);
      const auto index = load_index(refine_common.index);
      RefineOptions options;
      options.split = parse_split(refine_split);
      options.write_prompts = refine_prompts;
      const auto run = cmd_refine(index, config, refine_out, options);
      for (const auto& r : run.records) {
        if (r.status == "failed") std::cerr << "failed: " << r.id << ": " << r.error << '\n';
        for (const auto& w : r.warnings) std::cerr << "warning: " << r.id << ": " << w << '\n';
      }
      std::cout << "refined " << run.ok << ", failed " << run.failed << ", skipped " << run.skipped << " -> "
                << (fs::path(refine_out) / "manifest.json").string() << '\n';
      return run.partial_failure() ? kPartial : kOk;
    }

    if (*evaluate_cmd) {
      const auto config = resolve_config(eval_common);
      const auto index = load_index(eval_common.index);
      EvaluateOptions options;
      options.split = parse_split(eval_split);
      options.source = eval_source == "probs" ? PredictionSource::probabilities : PredictionSource::masks;
      if (options.source == PredictionSource::masks && eval_pred.empty())
        throw ConfigError("--pred is required unless --source probs");
      options.report_dir = !eval_out.empty() ? fs::path(eval_out) : fs::path(eval_pred);
      options.overlay_dir = eval_overlays;
      const auto run = cmd_evaluate(index, config, eval_pred, options);
      for (const auto& [id, why] : run.failures) std::cerr << "failed: " << id << ": " << why << '\n';
      if (!run.report) throw EmptyDataset("nothing to evaluate");
      std::printf("mean dice %.4f  std %.4f  images %zu\n", run.report->mean, run.report->std,
                  run.report->images_counted);
      return run.failures.empty() ? kOk : kPartial;
    }

    if (*tune_cmd) {
      const auto base = resolve_config(tune_common);
      const auto index = load_index(tune_common.index);
      hpo::SearchSpace space = default_search_space(base.refiner);
      if (!tune_space.empty()) {
        std::ifstream in(tune_space);
        if (!in) throw ConfigError("cannot open search space " + tune_space);
        space = hpo::space_from_json(nlohmann::json::parse(in));
      }
      std::printf("%-6s %-10s %-9s %s\n", "trial", "objective", "status", "params");
      const auto run = cmd_tune(index, base, space, tune_trials, tune_seed, tune_history, [](const hpo::Trial& t) {
        const std::string obj = t.objective ? std::to_string(*t.objective) : "-";
        std::printf("%-6d %-10s %-9s %s\n", t.trial_id, obj.c_str(), hpo::to_string(t.status), compact(t.params).c_str());
        if (!t.error.empty()) std::printf("       error: %s\n", t.error.c_str());
        std::fflush(stdout);
      });
      if (!run.best_config) throw Error("no trial completed");
      std::ofstream(tune_out) << to_json(*run.best_config).dump(2) << '\n';
      std::cout << to_json(*run.best_config).dump(2) << '\n';
      bool any_failed = false;
      for (const auto& t : run.result.history) any_failed |= t.status == hpo::TrialStatus::failed;
      return any_failed ? kPartial : kOk;
    }

    if (*ablate) {
      const auto config = resolve_config(ablate_common);
      const auto index = load_index(ablate_common.index);
      std::ifstream in(ablate_plan);
      if (!in) throw ConfigError("cannot open plan " + ablate_plan);
      const auto plan = plan_from_json(nlohmann::json::parse(in), fs::path(ablate_plan).parent_path());
      const auto run = cmd_ablate(index, plan, config, ablate_out);
      print_warnings(run.warnings);
      for (const auto& r : run.rows) std::printf("n=%-4d %-10s mean %.4f  std %.4f\n", r.n, r.method.c_str(), r.mean, r.std);
      return run.warnings.empty() ? kOk : kPartial;
    }

    if (*synth) {
      synthetic::SceneOptions scene;
      scene.width = scene.height = synth_size;
      scene.num_classes = synth_classes;
      const auto index = synthetic::write_dataset(
          synth_out, {{Split::train, n_train}, {Split::val, n_val}, {Split::test, n_test}, {Split::unlabelled, n_unlabelled}},
          synth_seed, scene);
      std::cout << "wrote " << index.entries.size() << " entries -> " << (fs::path(synth_out) / "index.json").string()
                << '\n';
      return kOk;
    }
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << '\n';
    return kFatal;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFatal;
  }
  return kOk;
}
