#pragma once

// Command implementations behind the lvqa CLI. Each command reads its
// inputs, writes its outputs under RunConfig::output_dir, and reports an
// exit code; diagnostics go to the supplied log stream.

#include <openssl/evp.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lvqa/backends.hpp"
#include "lvqa/correlation.hpp"
#include "lvqa/error.hpp"
#include "lvqa/localization.hpp"
#include "lvqa/probing.hpp"
#include "lvqa/prompt.hpp"
#include "lvqa/raster.hpp"
#include "lvqa/render_table.hpp"
#include "lvqa/scoring.hpp"

namespace lvqa {

namespace fs = std::filesystem;

inline constexpr std::string_view kToolVersion = "0.1.0";

struct RunConfig {
  Strategy strategy = Strategy::kBlurCrop;
  double threshold = 0.5;
  double margin_fraction = 0.1;
  double blur_radius_fraction = 0.05;
  double mask_confidence_threshold = 0.5;
  int target_h = 0;  // 0: keep source height
  int target_w = 0;
  std::string seg_endpoint;
  std::string vqa_endpoint;
  std::string mock_oracle;  // annotation file answering as ground truth
  int n_groups = kDefaultGroups;
  std::vector<std::uint64_t> seeds = kDefaultSeeds;
  Measure measure = Measure::kF1;
  bool macro = false;
  size_t parallelism = 4;
  int retry_attempts = 4;
  int retry_initial_ms = 100;
  bool save_views = false;
  bool resume = false;
  std::string output_dir = "out";

  void validate() const {
    auto frac = [](double v, const char* name) {
      if (!(v > 0.0 && v < 1.0)) throw ConfigError(std::string(name) + " must lie in (0,1)");
    };
    frac(threshold, "threshold");
    frac(margin_fraction, "margin");
    frac(blur_radius_fraction, "blur-radius");
    frac(mask_confidence_threshold, "mask-confidence");
    if (!seg_endpoint.empty()) Endpoint::parse(seg_endpoint);
    if (!vqa_endpoint.empty()) Endpoint::parse(vqa_endpoint);
    if (n_groups < 2) throw ConfigError("n-groups must be at least 2");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (parallelism < 1) throw ConfigError("parallelism must be at least 1");
    if (retry_attempts < 1) throw ConfigError("retry attempts must be at least 1");
    if (target_h < 0 || target_w < 0) throw ConfigError("resize targets must be non-negative");
  }

  EvalConfig eval_config(RetryCounters* counters = nullptr) const {
    EvalConfig e;
    e.strategy = strategy;
    e.localize.margin_fraction = margin_fraction;
    e.localize.blur_radius_fraction = blur_radius_fraction;
    e.localize.target_h = target_h;
    e.localize.target_w = target_w;
    e.threshold = threshold;
    e.mask_confidence_threshold = mask_confidence_threshold;
    e.parallelism = parallelism;
    e.retry.max_attempts = retry_attempts;
    e.retry.initial_delay = std::chrono::milliseconds(retry_initial_ms);
    e.counters = counters;
    return e;
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"strategy", std::string(to_string(c.strategy))},
          {"threshold", c.threshold},
          {"margin", c.margin_fraction},
          {"blur_radius", c.blur_radius_fraction},
          {"mask_confidence", c.mask_confidence_threshold},
          {"target_h", c.target_h},
          {"target_w", c.target_w},
          {"seg_endpoint", c.seg_endpoint},
          {"vqa_endpoint", c.vqa_endpoint},
          {"mock_oracle", c.mock_oracle},
          {"n_groups", c.n_groups},
          {"seeds", c.seeds},
          {"measure", std::string(to_string(c.measure))},
          {"macro", c.macro},
          {"parallelism", c.parallelism},
          {"retry_attempts", c.retry_attempts},
          {"retry_initial_ms", c.retry_initial_ms},
          {"save_views", c.save_views},
          {"out", c.output_dir}};
}

/// Overlays the keys present in `j` onto `c`. Unknown keys are rejected.
inline void apply_config_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "strategy") c.strategy = parse_strategy(v.get<std::string>());
      else if (key == "threshold") c.threshold = v.get<double>();
      else if (key == "margin") c.margin_fraction = v.get<double>();
      else if (key == "blur_radius") c.blur_radius_fraction = v.get<double>();
      else if (key == "mask_confidence") c.mask_confidence_threshold = v.get<double>();
      else if (key == "target_h") c.target_h = v.get<int>();
      else if (key == "target_w") c.target_w = v.get<int>();
      else if (key == "seg_endpoint") c.seg_endpoint = v.get<std::string>();
      else if (key == "vqa_endpoint") c.vqa_endpoint = v.get<std::string>();
      else if (key == "mock_oracle") c.mock_oracle = v.get<std::string>();
      else if (key == "n_groups") c.n_groups = v.get<int>();
      else if (key == "seeds") c.seeds = v.get<std::vector<std::uint64_t>>();
      else if (key == "measure") c.measure = parse_measure(v.get<std::string>());
      else if (key == "macro") c.macro = v.get<bool>();
      else if (key == "parallelism") c.parallelism = v.get<size_t>();
      else if (key == "retry_attempts") c.retry_attempts = v.get<int>();
      else if (key == "retry_initial_ms") c.retry_initial_ms = v.get<int>();
      else if (key == "save_views") c.save_views = v.get<bool>();
      else if (key == "out") c.output_dir = v.get<std::string>();
      else throw ConfigError("unknown config key \"" + key + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

/// LVQA_SEG_ENDPOINT / LVQA_VQA_ENDPOINT override config-file endpoints.
inline void apply_env(RunConfig& c) {
  if (const char* s = std::getenv("LVQA_SEG_ENDPOINT"); s && *s) c.seg_endpoint = s;
  if (const char* s = std::getenv("LVQA_VQA_ENDPOINT"); s && *s) c.vqa_endpoint = s;
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr)) throw Error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

// ---------------------------------------------------------------------------
// File helpers

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

/// A JSON array, a single record object, or JSON Lines.
inline std::vector<nlohmann::json> read_json_records(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    auto j = nlohmann::json::parse(text);
    if (j.is_array()) return {j.begin(), j.end()};
    return {j};
  } catch (const nlohmann::json::parse_error&) {
  }
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<EvalItem> read_eval_items(const fs::path& path) {
  std::vector<EvalItem> items;
  for (const auto& j : read_json_records(path)) items.push_back(eval_item_from_json(j));
  return items;
}

inline void write_eval_items(const fs::path& path, const std::vector<EvalItem>& items) {
  std::string text;
  for (const auto& it : items) text += to_json(it).dump() + "\n";
  write_text(path, text);
}

/// Ground-truth annotations keyed by source id.
inline std::map<std::string, StructuredPrompt, std::less<>> read_annotation_map(const fs::path& path) {
  std::map<std::string, StructuredPrompt, std::less<>> out;
  for (const auto& rec : read_json_records(path)) {
    auto p = parse_structured_annotation(rec).prompt;
    out.insert_or_assign(p.source_id, std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backends

struct Backends {
  std::unique_ptr<SegmentationBackend> seg;
  std::unique_ptr<VqaBackend> vqa;
};

/// Oracle mode answers from --mock-oracle annotations and segments the full
/// frame unless a segmentation endpoint is configured.
inline Backends make_backends(const RunConfig& cfg) {
  Backends b;
  if (!cfg.mock_oracle.empty()) b.vqa = std::make_unique<OracleVqaBackend>(read_annotation_map(cfg.mock_oracle));
  else if (!cfg.vqa_endpoint.empty()) b.vqa = std::make_unique<HttpVqaBackend>(cfg.vqa_endpoint);
  else throw ConfigError("no VQA backend: pass --vqa-endpoint or --mock-oracle");
  if (cfg.strategy != Strategy::kNone) {
    if (!cfg.seg_endpoint.empty()) b.seg = std::make_unique<HttpSegmentationBackend>(cfg.seg_endpoint);
    else if (!cfg.mock_oracle.empty()) b.seg = std::make_unique<FullFrameSegmentation>();
    else throw ConfigError("strategy \"" + std::string(to_string(cfg.strategy)) + "\" needs --seg-endpoint");
  }
  return b;
}

// ---------------------------------------------------------------------------
// ingest

struct IngestReport {
  size_t admissible = 0;
  std::vector<std::string> rejected;  // one reason per rejected record or image
};

/// Joins annotations with an image manifest (CSV: source_id,generator_id,
/// image_ref; relative refs resolve against the manifest's directory),
/// validates, and writes EvalItem JSONL to `out_path`.
inline ExitCode cmd_ingest(const fs::path& annotations_path, const fs::path& manifest_path, const fs::path& out_path,
                           std::ostream& log, IngestReport* report_out = nullptr) {
  IngestReport report;
  std::map<std::string, StructuredPrompt> prompts;
  std::map<std::string, std::string> bad_prompts;
  size_t n = 0;
  for (const auto& rec : read_json_records(annotations_path)) {
    ++n;
    try {
      auto parsed = parse_structured_annotation(rec);
      for (const auto& w : parsed.warnings) log << "warning: record " << n << ": " << w << '\n';
      auto& p = parsed.prompt;
      if (p.source_id.empty()) throw SchemaError("missing field \"source_id\"");
      if (prompts.count(p.source_id) || bad_prompts.count(p.source_id))
        throw SchemaError("duplicate source_id \"" + p.source_id + "\"");
      if (auto v = validate_eval_item(p); !v.admissible()) {
        bad_prompts[p.source_id] = v.summary();
        report.rejected.push_back("annotation " + p.source_id + ": " + v.summary());
        continue;
      }
      prompts.emplace(p.source_id, std::move(p));
    } catch (const SchemaError& e) {
      report.rejected.push_back("annotation record " + std::to_string(n) + ": " + e.what());
    }
  }

  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot read " + manifest_path.string());
  auto rows = csv::read(manifest);
  std::vector<EvalItem> items;
  if (!rows.empty()) {
    auto idx = csv::header_index(rows.front());
    for (const char* col : {"source_id", "generator_id", "image_ref"})
      if (!idx.count(col)) throw SchemaError(std::string("manifest missing column \"") + col + "\"");
    const fs::path base = manifest_path.parent_path();
    std::set<std::string> seen;
    for (size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      const std::string where = "manifest row " + std::to_string(r + 1);
      if (row.size() < rows.front().size()) {
        report.rejected.push_back(where + ": short row");
        continue;
      }
      EvalItem item;
      const auto& sid = row[idx["source_id"]];
      item.generator_id = row[idx["generator_id"]];
      fs::path ref = row[idx["image_ref"]];
      if (ref.is_relative()) ref = (base / ref).lexically_normal();
      item.image_ref = ref.string();
      if (bad_prompts.count(sid)) {
        report.rejected.push_back(where + " (" + sid + "): annotation inadmissible: " + bad_prompts[sid]);
        continue;
      }
      auto p = prompts.find(sid);
      if (p == prompts.end()) {
        report.rejected.push_back(where + ": no admissible annotation for source_id \"" + sid + "\"");
        continue;
      }
      item.prompt = p->second;
      if (!seen.insert(item.id()).second) {
        report.rejected.push_back(where + ": duplicate item " + item.id());
        continue;
      }
      try {
        read_png(item.image_ref);
      } catch (const IoError& e) {
        report.rejected.push_back(where + ": image not decodable: " + e.what());
        continue;
      }
      items.push_back(std::move(item));
    }
  }
  report.admissible = items.size();
  write_eval_items(out_path, items);
  log << "ingest: " << report.admissible << " admissible, " << report.rejected.size() << " rejected\n";
  for (const auto& r : report.rejected) log << "  rejected: " << r << '\n';
  if (report_out) *report_out = report;
  return items.empty() ? ExitCode::kValidation : ExitCode::kOk;
}

// ---------------------------------------------------------------------------
// render

/// Prompt text (and its swapped negative, when admissible) for each
/// annotation, as JSONL for external generators.
inline ExitCode cmd_render(const fs::path& annotations_path, const fs::path& out_path, std::ostream& log) {
  std::string text;
  size_t n = 0;
  for (const auto& rec : read_json_records(annotations_path)) {
    auto p = parse_structured_annotation(rec).prompt;
    nlohmann::json j{{"source_id", p.source_id}, {"rendered_text", p.rendered_text}};
    if (validate_eval_item(p).admissible()) j["swapped_text"] = swap_attributes(p).rendered_text;
    text += j.dump() + "\n";
    ++n;
  }
  write_text(out_path, text);
  log << "render: " << n << " prompts\n";
  return n ? ExitCode::kOk : ExitCode::kValidation;
}

// ---------------------------------------------------------------------------
// evaluate

inline std::vector<ItemScore> item_scores(const std::vector<EvalItem>& items,
                                          const std::vector<std::vector<AnswerRecord>>& per_item) {
  std::vector<ItemScore> out;
  for (size_t i = 0; i < per_item.size(); ++i)
    out.push_back({items[i].prompt.source_id, items[i].generator_id, aggregate(per_item[i], Scope::kImage)});
  return out;
}

inline std::string generator_csv(const std::vector<ItemScore>& scores, bool macro) {
  std::map<std::string, std::vector<ScoreReport>> by_gen;
  std::vector<ScoreReport> all;
  for (const auto& s : scores) {
    by_gen[s.generator_id].push_back(s.report);
    all.push_back(s.report);
  }
  auto combine = [&](const std::vector<ScoreReport>& v, Scope sc) {
    return macro ? aggregate_macro(v, sc) : aggregate_micro(v, sc);
  };
  std::ostringstream out;
  out << "generator_id,n_items,tp,fp,tn,fn,precision,recall,f1\n";
  auto row = [&](const std::string& name, const std::vector<ScoreReport>& v, Scope sc) {
    const auto r = combine(v, sc);
    out << name << ',' << v.size() << ',' << r.counts.tp << ',' << r.counts.fp << ',' << r.counts.tn << ','
        << r.counts.fn << ',' << csv::number(r.precision) << ',' << csv::number(r.recall) << ','
        << csv::number(r.f1) << '\n';
  };
  for (const auto& [g, v] : by_gen) row(g, v, Scope::kGroup);
  row("*", all, Scope::kRun);
  return out.str();
}

inline nlohmann::json run_metadata(const RunConfig& cfg, const Backends& b, size_t n_items) {
  // Where results land does not change them, so it stays out of the hash.
  auto config = to_json(cfg);
  config.erase("out");
  return {{"tool_version", std::string(kToolVersion)},
          {"config", config},
          {"config_sha256", sha256_hex(config.dump())},
          {"seg_model_id", b.seg ? nlohmann::json(b.seg->model_id()) : nlohmann::json(nullptr)},
          {"vqa_model_id", b.vqa->model_id()},
          {"render_table", std::string(render_table::kVersion)},
          {"vqa_wrapper", std::string(render_table::kVqaWrapperVersion)},
          {"aggregation", cfg.macro ? "macro" : "micro"},
          {"n_items", n_items}};
}

inline ExitCode cmd_evaluate(const fs::path& items_path, const RunConfig& cfg, const Backends& backends,
                             std::ostream& log) {
  cfg.validate();
  const auto items = read_eval_items(items_path);
  if (items.empty()) {
    log << "evaluate: no items in " << items_path << '\n';
    return ExitCode::kValidation;
  }
  const fs::path out_dir = cfg.output_dir;
  fs::create_directories(out_dir);
  RetryCounters counters;
  EvalConfig ec = cfg.eval_config(&counters);

  std::vector<std::vector<AnswerRecord>> per_item;
  size_t start = 0;
  if (cfg.resume && fs::exists(out_dir / "cursor.json")) {
    const auto cursor = nlohmann::json::parse(read_text(out_dir / "cursor.json"));
    start = cursor.at("next_item").get<size_t>();
    if (start > items.size()) throw ConfigError("resumption cursor points past the item list");
    per_item.resize(start);
    std::map<std::string, size_t> index;
    for (size_t i = 0; i < start; ++i) index[items[i].id()] = i;
    for (const auto& j : read_json_records(out_dir / "answers.jsonl")) {
      auto r = answer_record_from_json(j);
      auto it = index.find(r.source_id + "/" + r.generator_id);
      if (it != index.end()) per_item[it->second].push_back(std::move(r));
    }
    log << "evaluate: resuming at item " << start << '\n';
  }

  auto flush = [&](const std::vector<std::vector<AnswerRecord>>& done) {
    std::string answers;
    for (const auto& recs : done)
      for (const auto& r : recs) answers += to_json(r).dump() + "\n";
    write_text(out_dir / "answers.jsonl", answers);
    const auto scores = item_scores(items, done);
    std::ostringstream csv_out;
    write_scores_csv(csv_out, scores);
    write_text(out_dir / "scores.csv", csv_out.str());
    write_text(out_dir / "scores_by_generator.csv", generator_csv(scores, cfg.macro));
    write_text(out_dir / "run.json", run_metadata(cfg, backends, items.size()).dump(2) + "\n");
  };

  for (size_t i = start; i < items.size(); ++i) {
    const auto& item = items[i];
    if (cfg.save_views) {
      ec.on_view = [&](size_t e, const LocalizedView& v) {
        const fs::path stem = out_dir / "views" / (item.prompt.source_id + "_" + item.generator_id + "_" + std::to_string(e));
        fs::create_directories(stem.parent_path());
        write_png(stem.string() + ".png", v.pixels);
        write_text(stem.string() + ".json", view_sidecar(v).dump(2) + "\n");
      };
    }
    try {
      per_item.push_back(evaluate_item(item, backends.seg.get(), *backends.vqa, ec));
    } catch (const BackendError& e) {
      flush(per_item);
      nlohmann::json cursor{{"next_item", i},
                            {"completed", i},
                            {"total", items.size()},
                            {"failed_item", item.id()},
                            {"error", e.what()},
                            {"backend_calls", counters.calls.load()},
                            {"retries", counters.retries.load()},
                            {"failures", counters.failures.load()}};
      write_text(out_dir / "cursor.json", cursor.dump(2) + "\n");
      log << "evaluate: backend failure on " << item.id() << " after " << counters.retries.load()
          << " retries: " << e.what() << "\n  partial results flushed; rerun with --resume to continue\n";
      return ExitCode::kBackend;
    }
  }
  flush(per_item);
  if (fs::exists(out_dir / "cursor.json")) fs::remove(out_dir / "cursor.json");
  const auto run = aggregate_micro(
      [&] {
        std::vector<ScoreReport> v;
        for (const auto& s : item_scores(items, per_item)) v.push_back(s.report);
        return v;
      }(),
      Scope::kRun);
  log << "evaluate: " << items.size() << " items, run F1 " << csv::number(run.f1) << '\n';
  return ExitCode::kOk;
}

// ---------------------------------------------------------------------------
// swap-test

inline nlohmann::json to_json(const SwapTestResult& r) {
  return {{"n_cases", r.n_cases}, {"n_failures", r.n_failures}, {"failure_rate", r.failure_rate}};
}

/// Scores each item under its own description and under the swapped
/// negative, or takes both scores from an imported baseline CSV.
inline ExitCode cmd_swap_test(const fs::path& items_path, const std::optional<fs::path>& import_path,
                              const RunConfig& cfg, const Backends* backends, std::ostream& log) {
  cfg.validate();
  std::vector<SwapPair> pairs;
  if (import_path) {
    std::ifstream in(*import_path);
    if (!in) throw IoError("cannot read " + import_path->string());
    pairs = read_baseline_scores(in);
  } else {
    if (!backends) throw ConfigError("swap test needs backends or --import");
    const auto items = read_eval_items(items_path);
    const EvalConfig ec = cfg.eval_config();
    for (const auto& item : items) {
      const Image image = read_png(item.image_ref);
      const StructuredPrompt negative = swap_attributes(item.prompt);
      const double correct = score_image_under_description(image, item.prompt, item.generator_id, backends->seg.get(),
                                                           *backends->vqa, ec, cfg.measure);
      const double swapped = score_image_under_description(image, negative, item.generator_id, backends->seg.get(),
                                                           *backends->vqa, ec, cfg.measure);
      pairs.push_back({item.prompt.source_id, item.generator_id, correct, swapped});
    }
  }
  std::vector<std::pair<double, double>> values;
  for (const auto& p : pairs) values.emplace_back(p.correct, p.swapped);
  const auto result = swap_failure_rate(values);
  nlohmann::json out = to_json(result);
  out["measure"] = import_path ? "imported" : std::string(to_string(cfg.measure));
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : pairs)
    arr.push_back({{"source_id", p.source_id}, {"generator_id", p.generator_id}, {"correct", p.correct},
                   {"swapped", p.swapped}, {"failure", p.swapped > p.correct}});
  out["pairs"] = arr;
  write_text(fs::path(cfg.output_dir) / "swap_test.json", out.dump(2) + "\n");
  char rate[32];
  std::snprintf(rate, sizeof rate, "%.2f", result.failure_rate);
  log << "swap-test: " << result.n_failures << "/" << result.n_cases << " failures (" << rate << "%)\n";
  return ExitCode::kOk;
}

// ---------------------------------------------------------------------------
// correlate

/// Reads either the score export (counts) or a plain item_id,score CSV.
/// Count files pool per group (micro) when `pool_counts` is set, otherwise
/// each item contributes its own measure to a group mean. Plain scores always
/// average.
inline ScoreTable read_score_table(const fs::path& path, bool pool_counts, Measure measure) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  const std::string text = read_text(path);
  std::istringstream probe(text);
  std::string header;
  std::getline(probe, header);
  const auto cols = csv::split(header);
  const bool has_counts = std::find(cols.begin(), cols.end(), "tp") != cols.end();
  std::istringstream body(text);
  if (has_counts) {
    auto scores = read_scores_csv(body);
    if (pool_counts) {
      std::map<std::string, ConfusionCounts> m;
      for (const auto& s : scores)
        if (!m.emplace(s.id(), s.report.counts).second) throw SchemaError("duplicate item " + s.id() + " in " + path.string());
      return ScoreTable::counts(std::move(m), measure);
    }
    std::map<std::string, double> m;
    for (const auto& s : scores)
      if (!m.emplace(s.id(), or_zero(s.report.get(measure))).second)
        throw SchemaError("duplicate item " + s.id() + " in " + path.string());
    return ScoreTable::scalars(std::move(m));
  }
  auto rows = csv::read(body);
  if (rows.empty()) throw SchemaError(path.string() + " is empty");
  auto idx = csv::header_index(rows.front());
  if (!idx.count("item_id") || !idx.count("score"))
    throw SchemaError(path.string() + ": expected columns item_id,score or the score export format");
  std::map<std::string, double> m;
  for (size_t r = 1; r < rows.size(); ++r) {
    const std::string where = path.string() + " row " + std::to_string(r + 1);
    if (rows[r].size() < rows.front().size()) throw SchemaError(where + " is short");
    if (!m.emplace(rows[r][idx["item_id"]], csv::parse_number(rows[r][idx["score"]], where)).second)
      throw SchemaError(where + ": duplicate item " + rows[r][idx["item_id"]]);
  }
  return ScoreTable::scalars(std::move(m));
}

inline ExitCode cmd_correlate(const fs::path& metric_path, const fs::path& human_path, const RunConfig& cfg,
                              std::ostream& log, std::ostream* result_out = nullptr) {
  cfg.validate();
  const auto metric = read_score_table(metric_path, !cfg.macro, cfg.measure);
  const auto human = read_score_table(human_path, !cfg.macro, cfg.measure);
  const auto result = correlate(metric, human, cfg.n_groups, cfg.seeds);
  auto j = to_json(result);
  j["measure"] = std::string(to_string(cfg.measure));
  write_text(fs::path(cfg.output_dir) / "correlation.json", j.dump(2) + "\n");
  if (result_out) *result_out << j.dump(2) << '\n';
  log << "correlate: mean rho " << result.spearman_rho << ", mean tau " << result.kendall_tau << " over "
      << result.n_seeds << " seeds\n";
  return ExitCode::kOk;
}

}  // namespace lvqa
