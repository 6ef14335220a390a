#pragma once

// Reflection and leakage question sets, the VQA backend contract, and the
// per-item pipeline: segment each entity, localize it, and score every
// question against its subject entity's view.

#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lvqa/concurrency.hpp"
#include "lvqa/error.hpp"
#include "lvqa/localization.hpp"
#include "lvqa/prompt.hpp"
#include "lvqa/raster.hpp"
#include "lvqa/render_table.hpp"

namespace lvqa {

enum class QuestionKind { kReflection, kLeakage };
enum class Label { kPositive, kNegative };
enum class Outcome { kTP, kFP, kTN, kFN };

inline std::string_view to_string(QuestionKind k) { return k == QuestionKind::kReflection ? "reflection" : "leakage"; }
inline std::string_view to_string(Label l) { return l == Label::kPositive ? "positive" : "negative"; }
inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::kTP: return "TP";
    case Outcome::kFP: return "FP";
    case Outcome::kTN: return "TN";
    case Outcome::kFN: return "FN";
  }
  return "?";
}

inline QuestionKind parse_question_kind(std::string_view s) {
  if (s == "reflection") return QuestionKind::kReflection;
  if (s == "leakage") return QuestionKind::kLeakage;
  throw SchemaError("unknown question kind \"" + std::string(s) + "\"");
}

inline Outcome parse_outcome(std::string_view s) {
  for (auto o : {Outcome::kTP, Outcome::kFP, Outcome::kTN, Outcome::kFN})
    if (to_string(o) == s) return o;
  throw SchemaError("unknown outcome \"" + std::string(s) + "\"");
}

/// Reflection questions expect "yes", leakage questions expect "no".
inline Label target_label(QuestionKind kind) {
  return kind == QuestionKind::kReflection ? Label::kPositive : Label::kNegative;
}

/// Confusion cell for a question kind and the label the answer implies.
inline Outcome outcome_for(QuestionKind kind, Label predicted) {
  if (kind == QuestionKind::kReflection) return predicted == Label::kPositive ? Outcome::kTP : Outcome::kFN;
  return predicted == Label::kPositive ? Outcome::kFP : Outcome::kTN;
}

struct Question {
  QuestionKind kind = QuestionKind::kReflection;
  size_t subject_index = 0;  // position of subject_entity in the prompt
  Entity subject_entity;
  Attribute attribute;
  std::string text;

  Label target() const { return target_label(kind); }
};

inline std::string render_question(std::string_view entity_class, std::string_view attribute) {
  if (entity_class.empty() || attribute.empty()) throw InvalidItemError("question needs an entity class and an attribute");
  const char* verb = render_table::is_plural_class(entity_class) ? "Are" : "Is";
  return std::string(verb) + " the " + std::string(entity_class) + " " + std::string(attribute) + "?";
}

inline Question make_question(QuestionKind kind, const StructuredPrompt& p, size_t subject, const Attribute& a) {
  const Entity& e = p.entities[subject];
  return Question{kind, subject, e, a, render_question(e.class_label, a.name)};
}

/// One question per (entity, own attribute), in entity then attribute order.
inline std::vector<Question> build_reflection_questions(const StructuredPrompt& p) {
  std::vector<Question> out;
  for (size_t i = 0; i < p.entities.size(); ++i)
    for (const auto& a : p.entities[i].attributes) out.push_back(make_question(QuestionKind::kReflection, p, i, a));
  return out;
}

/// Every entity probed for the attributes of every other entity, minus
/// (class, attribute) pairs that are also reflection questions. Repeats
/// collapse onto their first occurrence.
inline std::vector<Question> build_leakage_questions(const StructuredPrompt& p) {
  using Key = std::pair<std::string, std::string>;
  std::set<Key> seen;
  for (const auto& e : p.entities)
    for (const auto& a : e.attributes) seen.emplace(e.class_label, a.name);
  std::vector<Question> out;
  for (size_t i = 0; i < p.entities.size(); ++i) {
    for (size_t j = 0; j < p.entities.size(); ++j) {
      if (j == i) continue;
      for (const auto& a : p.entities[j].attributes) {
        if (!seen.emplace(p.entities[i].class_label, a.name).second) continue;
        out.push_back(make_question(QuestionKind::kLeakage, p, i, a));
      }
    }
  }
  return out;
}

/// Q_r followed by Q_l; the index into this list is the question index used
/// to order persisted records.
inline std::vector<Question> build_questions(const StructuredPrompt& p) {
  auto out = build_reflection_questions(p);
  auto leak = build_leakage_questions(p);
  out.insert(out.end(), std::make_move_iterator(leak.begin()), std::make_move_iterator(leak.end()));
  return out;
}

/// Text actually sent to a VQA model.
inline std::string wrap_for_vqa(const Question& q) {
  return q.text + std::string(render_table::kVqaWrapperSuffix);
}

/// Returns P("Yes" | question, image). Implementations must tolerate
/// concurrent calls. `source_id` lets reference backends look up ground truth.
class VqaBackend {
 public:
  virtual ~VqaBackend() = default;
  virtual std::string model_id() const = 0;
  virtual double p_yes(const Image& image, const Question& question, std::string_view source_id) const = 0;
};

struct AnswerRecord {
  std::string source_id;
  std::string generator_id;
  Question question;
  double p_yes = 0.0;
  Label predicted = Label::kNegative;
  Outcome outcome = Outcome::kFN;
  bool fallback_used = false;
  std::string view_ref;
};

inline void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("decision threshold must lie in (0,1)");
}

/// Positive iff p_yes is strictly above the threshold.
inline AnswerRecord make_answer(const Question& q, double p_yes, double threshold) {
  check_threshold(threshold);
  if (!(p_yes >= 0.0 && p_yes <= 1.0)) throw ProtocolError("p_yes outside [0,1] for \"" + q.text + "\"");
  AnswerRecord r;
  r.question = q;
  r.p_yes = p_yes;
  r.predicted = p_yes > threshold ? Label::kPositive : Label::kNegative;
  r.outcome = outcome_for(q.kind, r.predicted);
  return r;
}

inline std::string view_ref_for(std::string_view source_id, std::string_view generator_id, size_t entity_index,
                                Strategy strategy) {
  return std::string(source_id) + "/" + std::string(generator_id) + "/" + std::to_string(entity_index) + ":" +
         std::string(to_string(strategy));
}

inline AnswerRecord score_question(const VqaBackend& backend, const LocalizedView& view, const Question& q,
                                   double threshold, std::string_view source_id = {}) {
  check_threshold(threshold);
  AnswerRecord r = make_answer(q, backend.p_yes(view.pixels, q, source_id), threshold);
  r.source_id = std::string(source_id);
  r.fallback_used = view.fallback_used;
  return r;
}

struct EvalConfig {
  Strategy strategy = Strategy::kBlurCrop;
  LocalizeParams localize;
  double threshold = 0.5;
  double mask_confidence_threshold = 0.5;
  size_t parallelism = 4;
  RetryPolicy retry;
  RetryCounters* counters = nullptr;
  // Called once per entity with its view, e.g. to persist it.
  std::function<void(size_t entity_index, const LocalizedView&)> on_view;
};

namespace detail {

template <typename Fn>
auto annotate_backend_errors(const std::string& context, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const BackendUnavailableError& e) {
    throw BackendUnavailableError(context + ": " + e.what());
  } catch (const ProtocolError& e) {
    throw ProtocolError(context + ": " + e.what());
  } catch (const BackendError& e) {
    throw BackendError(context + ": " + e.what());
  }
}

}  // namespace detail

/// Localized views for every entity of `prompt`, in entity order.
inline std::vector<LocalizedView> localize_entities(const Image& image, const StructuredPrompt& prompt,
                                                    const SegmentationBackend* seg, const EvalConfig& cfg) {
  std::vector<LocalizedView> views;
  views.reserve(prompt.entities.size());
  for (size_t i = 0; i < prompt.entities.size(); ++i) {
    const auto& label = prompt.entities[i].class_label;
    if (cfg.strategy == Strategy::kNone) {
      views.push_back(localize(image, Mask{}, Strategy::kNone, cfg.localize));
    } else {
      if (!seg) throw ConfigError("strategy \"" + std::string(to_string(cfg.strategy)) + "\" needs a segmentation backend");
      Mask mask = detail::annotate_backend_errors("segmenting \"" + label + "\"", [&] {
        return with_retry(cfg.retry, [&] { return segment(*seg, image, label, cfg.mask_confidence_threshold); },
                          cfg.counters);
      });
      views.push_back(localize(image, mask, cfg.strategy, cfg.localize));
    }
    if (cfg.on_view) cfg.on_view(i, views.back());
  }
  return views;
}

/// Scores Q_r and Q_l of `prompt` against an already-decoded image. Records
/// come back in question order.
inline std::vector<AnswerRecord> evaluate_prompt(const Image& image, const StructuredPrompt& prompt,
                                                 std::string_view generator_id, const SegmentationBackend* seg,
                                                 const VqaBackend& vqa, const EvalConfig& cfg) {
  check_threshold(cfg.threshold);
  const auto views = localize_entities(image, prompt, seg, cfg);
  const auto questions = build_questions(prompt);
  return parallel_map(questions.size(), cfg.parallelism, [&](size_t k) {
    const Question& q = questions[k];
    const LocalizedView& view = views[q.subject_index];
    AnswerRecord r = detail::annotate_backend_errors("question \"" + q.text + "\"", [&] {
      return with_retry(cfg.retry, [&] { return score_question(vqa, view, q, cfg.threshold, prompt.source_id); },
                        cfg.counters);
    });
    r.generator_id = std::string(generator_id);
    r.view_ref = view_ref_for(prompt.source_id, generator_id, q.subject_index, view.strategy);
    return r;
  });
}

inline std::vector<AnswerRecord> evaluate_item(const EvalItem& item, const SegmentationBackend* seg,
                                               const VqaBackend& vqa, const EvalConfig& cfg) {
  const Image image = read_png(item.image_ref);
  return evaluate_prompt(image, item.prompt, item.generator_id, seg, vqa, cfg);
}

// ---------------------------------------------------------------------------
// JSONL form

inline nlohmann::json to_json(const AnswerRecord& r) {
  return {{"source_id", r.source_id},
          {"generator_id", r.generator_id},
          {"kind", std::string(to_string(r.question.kind))},
          {"entity", r.question.subject_entity.class_label},
          {"entity_index", r.question.subject_index},
          {"attribute", r.question.attribute.name},
          {"question", r.question.text},
          {"p_yes", r.p_yes},
          {"predicted", std::string(to_string(r.predicted))},
          {"target", std::string(to_string(r.question.target()))},
          {"outcome", std::string(to_string(r.outcome))},
          {"fallback_used", r.fallback_used},
          {"view_ref", r.view_ref}};
}

/// Reads back what to_json wrote. Only fields needed to re-aggregate are
/// required.
inline AnswerRecord answer_record_from_json(const nlohmann::json& j) {
  try {
    AnswerRecord r;
    r.source_id = j.at("source_id").get<std::string>();
    r.generator_id = j.at("generator_id").get<std::string>();
    r.question.kind = parse_question_kind(j.at("kind").get<std::string>());
    r.question.subject_entity.class_label = j.at("entity").get<std::string>();
    r.question.subject_index = j.value("entity_index", size_t{0});
    r.question.attribute.name = j.at("attribute").get<std::string>();
    r.question.text = j.value("question", render_question(r.question.subject_entity.class_label, r.question.attribute.name));
    r.p_yes = j.at("p_yes").get<double>();
    r.predicted = j.at("predicted").get<std::string>() == "positive" ? Label::kPositive : Label::kNegative;
    r.outcome = parse_outcome(j.at("outcome").get<std::string>());
    r.fallback_used = j.value("fallback_used", false);
    r.view_ref = j.value("view_ref", std::string{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("answer record: ") + e.what());
  }
}

}  // namespace lvqa
