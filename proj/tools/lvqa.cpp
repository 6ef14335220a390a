// lvqa: command-line entry point for the localized VQA evaluation pipeline.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "lvqa/commands.hpp"
#include "lvqa/study.hpp"
#include "lvqa/study_server.hpp"

namespace {

using lvqa::ExitCode;
namespace fs = std::filesystem;

int code(ExitCode c) { return static_cast<int>(c); }

/// Flags shared by the pipeline commands. Values are only applied when the
/// flag was given, so they override the config file and environment.
struct RunFlags {
  std::string config_path;
  std::string strategy, seg_endpoint, vqa_endpoint, mock_oracle, out, measure;
  double threshold = 0, margin = 0, blur_radius = 0, mask_confidence = 0;
  int n_groups = 0, target_h = 0, target_w = 0, retries = 0;
  std::vector<std::uint64_t> seeds;
  size_t parallelism = 0;
  bool macro = false, save_views = false, resume = false;

  CLI::Option* o_strategy = nullptr;
  CLI::Option* o_threshold = nullptr;
  CLI::Option* o_margin = nullptr;
  CLI::Option* o_blur = nullptr;
  CLI::Option* o_maskconf = nullptr;
  CLI::Option* o_seg = nullptr;
  CLI::Option* o_vqa = nullptr;
  CLI::Option* o_oracle = nullptr;
  CLI::Option* o_groups = nullptr;
  CLI::Option* o_seeds = nullptr;
  CLI::Option* o_out = nullptr;
  CLI::Option* o_measure = nullptr;
  CLI::Option* o_parallel = nullptr;
  CLI::Option* o_th = nullptr;
  CLI::Option* o_tw = nullptr;
  CLI::Option* o_retries = nullptr;
  CLI::Option* o_macro = nullptr;
  CLI::Option* o_views = nullptr;
  CLI::Option* o_resume = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file (flags take precedence)")->check(CLI::ExistingFile);
    o_strategy = app->add_option("--strategy", strategy, "Localization strategy")
                     ->check(CLI::IsMember({"none", "mask", "blur", "crop", "mask_crop", "blur_crop"}));
    o_threshold = app->add_option("--threshold", threshold, "Decision threshold on P(yes)");
    o_margin = app->add_option("--margin", margin, "Crop margin as a fraction of the box size");
    o_blur = app->add_option("--blur-radius", blur_radius, "Blur radius as a fraction of min(H, W)");
    o_maskconf = app->add_option("--mask-confidence", mask_confidence, "Segmentation confidence threshold");
    o_seg = app->add_option("--seg-endpoint", seg_endpoint, "Segmentation backend URI");
    o_vqa = app->add_option("--vqa-endpoint", vqa_endpoint, "VQA backend URI");
    o_oracle = app->add_option("--mock-oracle", mock_oracle, "Answer from these ground-truth annotations")
                   ->check(CLI::ExistingFile);
    o_groups = app->add_option("--n-groups", n_groups, "Number of random groups");
    o_seeds = app->add_option("--seeds", seeds, "Grouping seeds")->delimiter(',');
    o_out = app->add_option("--out", out, "Output directory");
    o_measure = app->add_option("--measure", measure, "f1, precision or recall")
                    ->check(CLI::IsMember({"f1", "precision", "recall"}));
    o_parallel = app->add_option("--parallelism", parallelism, "Concurrent backend requests");
    o_th = app->add_option("--target-h", target_h, "Localized view height (0: source)");
    o_tw = app->add_option("--target-w", target_w, "Localized view width (0: source)");
    o_retries = app->add_option("--retries", retries, "Attempts per backend call");
    o_macro = app->add_flag("--macro", macro, "Macro-average groups instead of pooling counts");
    o_views = app->add_flag("--save-views", save_views, "Persist localized views with JSON sidecars");
    o_resume = app->add_flag("--resume", resume, "Continue from the cursor left by a failed run");
  }

  lvqa::RunConfig resolve() const {
    lvqa::RunConfig c;
    if (!config_path.empty()) {
      try {
        lvqa::apply_config_json(c, nlohmann::json::parse(lvqa::read_text(config_path)));
      } catch (const nlohmann::json::parse_error& e) {
        throw lvqa::ConfigError(config_path + ": " + e.what());
      }
    }
    lvqa::apply_env(c);
    if (o_strategy->count()) c.strategy = lvqa::parse_strategy(strategy);
    if (o_threshold->count()) c.threshold = threshold;
    if (o_margin->count()) c.margin_fraction = margin;
    if (o_blur->count()) c.blur_radius_fraction = blur_radius;
    if (o_maskconf->count()) c.mask_confidence_threshold = mask_confidence;
    if (o_seg->count()) c.seg_endpoint = seg_endpoint;
    if (o_vqa->count()) c.vqa_endpoint = vqa_endpoint;
    if (o_oracle->count()) c.mock_oracle = mock_oracle;
    if (o_groups->count()) c.n_groups = n_groups;
    if (o_seeds->count()) c.seeds = seeds;
    if (o_out->count()) c.output_dir = out;
    if (o_measure->count()) c.measure = lvqa::parse_measure(measure);
    if (o_parallel->count()) c.parallelism = parallelism;
    if (o_th->count()) c.target_h = target_h;
    if (o_tw->count()) c.target_w = target_w;
    if (o_retries->count()) c.retry_attempts = retries;
    if (o_macro->count()) c.macro = macro;
    if (o_views->count()) c.save_views = save_views;
    if (o_resume->count()) c.resume = resume;
    c.validate();
    return c;
  }
};

int run_study(const std::string& items_path, const std::string& mode_name, const std::string& host, int port,
              const std::string& state_dir, int redundancy, const std::string& static_dir) {
  const auto mode = lvqa::parse_study_mode(mode_name);
  const auto items = lvqa::read_eval_items(items_path);
  if (items.empty()) {
    std::cerr << "study: no items in " << items_path << '\n';
    return code(ExitCode::kValidation);
  }

  // Block termination signals before any thread starts so sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  lvqa::StudyStore store(state_dir.empty() ? std::nullopt : std::optional<fs::path>(state_dir));
  lvqa::StudyConfig cfg;
  cfg.redundancy = redundancy;
  lvqa::StudyServerOptions opts;
  if (!static_dir.empty()) opts.static_dir = static_dir;
  lvqa::StudyServer server(store, opts);
  server.bind(host, port);

  auto created = store.create_study(items, mode, cfg);
  for (const auto& w : created.warnings) std::cerr << "warning: " << w << '\n';
  std::cerr << "study " << created.study_id << " (" << mode_name << "): " << created.n_tasks << " tasks on http://"
            << host << ":" << port << "/v1\n";

  std::thread serving([&] { server.serve(); });
  int sig = 0;
  sigwait(&signals, &sig);
  std::cerr << "shutting down\n";
  server.stop();
  serving.join();
  store.write_snapshots();
  return code(ExitCode::kOk);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Localized VQA evaluation of attribute confusion in text-to-image outputs"};
  app.require_subcommand(1);

  std::string annotations, manifest, ingest_out = "items.jsonl";
  auto* ingest = app.add_subcommand("ingest", "Join annotations with an image manifest into EvalItem JSONL");
  ingest->add_option("annotations", annotations, "Annotation file (JSON array or JSONL)")->required();
  ingest->add_option("manifest", manifest, "CSV: source_id,generator_id,image_ref")->required();
  ingest->add_option("-o,--output", ingest_out, "EvalItem JSONL to write");

  std::string render_in, render_out = "prompts.jsonl";
  auto* render = app.add_subcommand("render", "Render prompts (and swapped negatives) for external generators");
  render->add_option("annotations", render_in, "Annotation file")->required();
  render->add_option("-o,--output", render_out, "Prompt JSONL to write");

  std::string eval_items;
  RunFlags eval_flags;
  auto* evaluate = app.add_subcommand("evaluate", "Score items with reflection and leakage questions");
  evaluate->add_option("items", eval_items, "EvalItem JSONL")->required();
  eval_flags.attach(evaluate);

  std::string swap_items, swap_import;
  RunFlags swap_flags;
  auto* swap = app.add_subcommand("swap-test", "Attribute-swap failure rate");
  swap->add_option("items", swap_items, "EvalItem JSONL (ignored with --import)");
  swap->add_option("--import", swap_import, "Baseline CSV: source_id,generator_id,description_variant,score")
      ->check(CLI::ExistingFile);
  swap_flags.attach(swap);

  std::string metric_path, human_path;
  RunFlags corr_flags;
  auto* correlate = app.add_subcommand("correlate", "Group-level rank correlation against human scores");
  correlate->add_option("--metric", metric_path, "Metric scores (score export or item_id,score)")->required();
  correlate->add_option("--human", human_path, "Human scores (score export or item_id,score)")->required();
  corr_flags.attach(correlate);

  std::string study_items, study_mode = "localized", study_host = "127.0.0.1", state_dir, static_dir;
  int study_port = 8080, redundancy = 3;
  auto* study = app.add_subcommand("study", "Serve a human study over HTTP");
  study->add_option("items", study_items, "EvalItem JSONL")->required();
  study->add_option("--mode", study_mode, "likert or localized")->check(CLI::IsMember({"likert", "localized"}));
  study->add_option("--host", study_host, "Bind address");
  study->add_option("--port", study_port, "Port");
  study->add_option("--state-dir", state_dir, "Directory for the response log and snapshots");
  study->add_option("--redundancy", redundancy, "Responses wanted per task (0: unlimited)");
  study->add_option("--static-dir", static_dir, "Frontend bundle served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return code(ExitCode::kUsage);
  }

  try {
    if (*ingest) return code(lvqa::cmd_ingest(annotations, manifest, ingest_out, std::cerr));
    if (*render) return code(lvqa::cmd_render(render_in, render_out, std::cerr));
    if (*evaluate) {
      const auto cfg = eval_flags.resolve();
      const auto backends = lvqa::make_backends(cfg);
      return code(lvqa::cmd_evaluate(eval_items, cfg, backends, std::cerr));
    }
    if (*swap) {
      const auto cfg = swap_flags.resolve();
      if (!swap_import.empty())
        return code(lvqa::cmd_swap_test(swap_items, fs::path(swap_import), cfg, nullptr, std::cerr));
      if (swap_items.empty()) throw lvqa::ConfigError("swap-test needs an items file or --import");
      const auto backends = lvqa::make_backends(cfg);
      return code(lvqa::cmd_swap_test(swap_items, std::nullopt, cfg, &backends, std::cerr));
    }
    if (*correlate) {
      const auto cfg = corr_flags.resolve();
      return code(lvqa::cmd_correlate(metric_path, human_path, cfg, std::cerr, &std::cout));
    }
    if (*study) return run_study(study_items, study_mode, study_host, study_port, state_dir, redundancy, static_dir);
  } catch (const lvqa::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return code(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return code(ExitCode::kIo);
  }
  return code(ExitCode::kUsage);
}
