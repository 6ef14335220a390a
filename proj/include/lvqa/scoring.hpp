#pragma once

// Confusion tallies, Precision/Recall/F1 reports and the attribute-swap
// failure rate.

#include <boost/tokenizer.hpp>

#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lvqa/error.hpp"
#include "lvqa/probing.hpp"

namespace lvqa {

/// Non-negative rational in lowest terms.
struct Fraction {
  long long num = 0;
  long long den = 1;

  static Fraction of(long long n, long long d) {
    const long long g = std::gcd(n, d);
    return g == 0 ? Fraction{0, 1} : Fraction{n / g, d / g};
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Fraction&, const Fraction&) = default;
};

struct ConfusionCounts {
  long long tp = 0;
  long long fp = 0;
  long long tn = 0;
  long long fn = 0;

  long long total() const { return tp + fp + tn + fn; }
  void add(Outcome o) {
    switch (o) {
      case Outcome::kTP: ++tp; break;
      case Outcome::kFP: ++fp; break;
      case Outcome::kTN: ++tn; break;
      case Outcome::kFN: ++fn; break;
    }
  }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;

  std::optional<Fraction> precision() const {
    if (tp + fp == 0) return std::nullopt;
    return Fraction::of(tp, tp + fp);
  }
  std::optional<Fraction> recall() const {
    if (tp + fn == 0) return std::nullopt;
    return Fraction::of(tp, tp + fn);
  }
  // 2PR/(P+R) reduces to 2tp/(2tp+fp+fn); P+R > 0 exactly when tp > 0.
  std::optional<Fraction> f1() const {
    if (tp == 0) return std::nullopt;
    return Fraction::of(2 * tp, 2 * tp + fp + fn);
  }
};

enum class Scope { kImage, kGroup, kRun };

inline std::string_view to_string(Scope s) {
  switch (s) {
    case Scope::kImage: return "image";
    case Scope::kGroup: return "group";
    case Scope::kRun: return "run";
  }
  return "?";
}

enum class Measure { kF1, kPrecision, kRecall };

inline std::string_view to_string(Measure m) {
  switch (m) {
    case Measure::kF1: return "f1";
    case Measure::kPrecision: return "precision";
    case Measure::kRecall: return "recall";
  }
  return "?";
}

inline Measure parse_measure(std::string_view s) {
  for (auto m : {Measure::kF1, Measure::kPrecision, Measure::kRecall})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown measure \"" + std::string(s) + "\"");
}

/// Undefined metrics stay undefined here; see or_zero().
struct ScoreReport {
  ConfusionCounts counts;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  Scope scope = Scope::kImage;

  std::optional<double> get(Measure m) const {
    switch (m) {
      case Measure::kF1: return f1;
      case Measure::kPrecision: return precision;
      case Measure::kRecall: return recall;
    }
    return std::nullopt;
  }
};

/// Total order for comparisons and rankings: undefined counts as 0.
inline double or_zero(std::optional<double> v) { return v.value_or(0.0); }

inline ScoreReport report_from_counts(const ConfusionCounts& c, Scope scope) {
  auto val = [](std::optional<Fraction> f) -> std::optional<double> {
    return f ? std::optional<double>(f->value()) : std::nullopt;
  };
  return ScoreReport{c, val(c.precision()), val(c.recall()), val(c.f1()), scope};
}

inline ConfusionCounts tally(std::span<const AnswerRecord> records) {
  ConfusionCounts c;
  for (const auto& r : records) c.add(r.outcome);
  return c;
}

inline ScoreReport aggregate(std::span<const AnswerRecord> records, Scope scope = Scope::kImage) {
  return report_from_counts(tally(records), scope);
}

/// Micro-average: pool member counts, then compute P/R/F1.
inline ScoreReport aggregate_micro(std::span<const ScoreReport> members, Scope scope) {
  ConfusionCounts pooled;
  for (const auto& m : members) pooled += m.counts;
  return report_from_counts(pooled, scope);
}

/// Macro-average: mean of each defined member metric. Counts are still pooled.
inline ScoreReport aggregate_macro(std::span<const ScoreReport> members, Scope scope) {
  ScoreReport out = aggregate_micro(members, scope);
  auto mean = [&](Measure m) -> std::optional<double> {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : members)
      if (auto v = r.get(m)) sum += *v, ++n;
    return n ? std::optional<double>(sum / n) : std::nullopt;
  };
  out.precision = mean(Measure::kPrecision);
  out.recall = mean(Measure::kRecall);
  out.f1 = mean(Measure::kF1);
  return out;
}

// ---------------------------------------------------------------------------
// Swap test

struct SwapTestResult {
  long n_cases = 0;
  long n_failures = 0;
  double failure_rate = 0.0;  // percent
};

/// A pair fails when the swapped description scores strictly higher.
inline SwapTestResult swap_failure_rate(std::span<const std::pair<double, double>> pairs) {
  if (pairs.empty()) throw EmptyInputError("swap test needs at least one (correct, swapped) pair");
  SwapTestResult r;
  r.n_cases = static_cast<long>(pairs.size());
  for (const auto& [correct, swapped] : pairs)
    if (swapped > correct) ++r.n_failures;
  r.failure_rate = 100.0 * static_cast<double>(r.n_failures) / static_cast<double>(r.n_cases);
  return r;
}

/// Runs the pipeline on `image` against `description` and returns the chosen
/// measure with undefined mapped to 0.
inline double score_image_under_description(const Image& image, const StructuredPrompt& description,
                                            std::string_view generator_id, const SegmentationBackend* seg,
                                            const VqaBackend& vqa, const EvalConfig& cfg,
                                            Measure measure = Measure::kF1) {
  auto records = evaluate_prompt(image, description, generator_id, seg, vqa, cfg);
  return or_zero(aggregate(records).get(measure));
}

inline double score_item_under_description(const EvalItem& item, const StructuredPrompt& description,
                                           const SegmentationBackend* seg, const VqaBackend& vqa,
                                           const EvalConfig& cfg, Measure measure = Measure::kF1) {
  return score_image_under_description(read_png(item.image_ref), description, item.generator_id, seg, vqa, cfg,
                                       measure);
}

// ---------------------------------------------------------------------------
// CSV

namespace csv {

inline std::vector<std::string> split(const std::string& line) {
  using Sep = boost::escaped_list_separator<char>;
  boost::tokenizer<Sep> tok(line, Sep('\\', ',', '"'));
  std::vector<std::string> out;
  for (const auto& t : tok) out.push_back(t);
  return out;
}

/// Reads non-empty lines; the first is the header. Strips CR.
inline std::vector<std::vector<std::string>> read(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(split(line));
  }
  return rows;
}

inline std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string number(std::optional<double> v) { return v ? number(*v) : "NA"; }

inline double parse_number(const std::string& s, const std::string& what) {
  try {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError(what + ": \"" + s + "\" is not a number");
  }
}

inline long long parse_count(const std::string& s, const std::string& what) {
  try {
    size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size() || v < 0) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError(what + ": \"" + s + "\" is not a non-negative integer");
  }
}

inline std::map<std::string, size_t> header_index(const std::vector<std::string>& header) {
  std::map<std::string, size_t> idx;
  for (size_t i = 0; i < header.size(); ++i) idx[header[i]] = i;
  return idx;
}

}  // namespace csv

struct ItemScore {
  std::string source_id;
  std::string generator_id;
  ScoreReport report;

  std::string id() const { return source_id + "/" + generator_id; }
};

inline constexpr const char* kScoreCsvHeader = "source_id,generator_id,tp,fp,tn,fn,precision,recall,f1";

inline void write_scores_csv(std::ostream& out, std::span<const ItemScore> rows) {
  out << kScoreCsvHeader << '\n';
  for (const auto& r : rows) {
    const auto& c = r.report.counts;
    out << r.source_id << ',' << r.generator_id << ',' << c.tp << ',' << c.fp << ',' << c.tn << ',' << c.fn << ','
        << csv::number(r.report.precision) << ',' << csv::number(r.report.recall) << ','
        << csv::number(r.report.f1) << '\n';
  }
}

/// Counts are authoritative; P/R/F1 columns are recomputed from them.
inline std::vector<ItemScore> read_scores_csv(std::istream& in) {
  auto rows = csv::read(in);
  if (rows.empty()) throw SchemaError("score CSV is empty");
  auto idx = csv::header_index(rows.front());
  for (const char* col : {"source_id", "generator_id", "tp", "fp", "tn", "fn"})
    if (!idx.count(col)) throw SchemaError(std::string("score CSV missing column \"") + col + "\"");
  std::vector<ItemScore> out;
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() < rows.front().size()) throw SchemaError("score CSV row " + std::to_string(r + 1) + " is short");
    const std::string where = "score CSV row " + std::to_string(r + 1);
    ConfusionCounts c{csv::parse_count(row[idx["tp"]], where), csv::parse_count(row[idx["fp"]], where),
                      csv::parse_count(row[idx["tn"]], where), csv::parse_count(row[idx["fn"]], where)};
    out.push_back({row[idx["source_id"]], row[idx["generator_id"]], report_from_counts(c, Scope::kImage)});
  }
  return out;
}

struct SwapPair {
  std::string source_id;
  std::string generator_id;
  double correct = 0.0;
  double swapped = 0.0;
};

/// Baseline import: source_id,generator_id,description_variant,score with
/// variant in {correct, swapped}. Output is sorted by (source_id, generator_id).
inline std::vector<SwapPair> read_baseline_scores(std::istream& in) {
  auto rows = csv::read(in);
  if (rows.empty()) throw SchemaError("baseline CSV is empty");
  auto idx = csv::header_index(rows.front());
  for (const char* col : {"source_id", "generator_id", "description_variant", "score"})
    if (!idx.count(col)) throw SchemaError(std::string("baseline CSV missing column \"") + col + "\"");
  std::map<std::pair<std::string, std::string>, std::pair<std::optional<double>, std::optional<double>>> acc;
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = "baseline CSV row " + std::to_string(r + 1);
    if (row.size() < rows.front().size()) throw SchemaError(where + " is short");
    auto& slot = acc[{row[idx["source_id"]], row[idx["generator_id"]]}];
    const auto& variant = row[idx["description_variant"]];
    const double score = csv::parse_number(row[idx["score"]], where);
    auto& target = variant == "correct" ? slot.first : variant == "swapped" ? slot.second
        : throw SchemaError(where + ": description_variant must be correct or swapped");
    if (target) throw SchemaError(where + ": duplicate " + variant + " score");
    target = score;
  }
  std::vector<SwapPair> out;
  for (const auto& [key, scores] : acc) {
    if (!scores.first || !scores.second)
      throw SchemaError("baseline CSV lacks the " + std::string(scores.first ? "swapped" : "correct") +
                        " score for " + key.first + "/" + key.second);
    out.push_back({key.first, key.second, *scores.first, *scores.second});
  }
  return out;
}

}  // namespace lvqa
