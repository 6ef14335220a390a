#pragma once

// Human-study state: Likert and localized protocols, task assignment,
// response storage with an append-only JSONL log, inter-annotator agreement
// and human reference P/R/F1 derived from majority answers.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "lvqa/error.hpp"
#include "lvqa/localization.hpp"
#include "lvqa/probing.hpp"
#include "lvqa/prompt.hpp"
#include "lvqa/scoring.hpp"

namespace lvqa {

enum class StudyMode { kLikert, kLocalized };

inline std::string_view to_string(StudyMode m) { return m == StudyMode::kLikert ? "likert" : "localized"; }

inline StudyMode parse_study_mode(std::string_view s) {
  if (s == "likert") return StudyMode::kLikert;
  if (s == "localized") return StudyMode::kLocalized;
  throw ConfigError("unknown study mode \"" + std::string(s) + "\" (expected likert or localized)");
}

struct StudyTask {
  std::string task_id;
  StudyMode mode = StudyMode::kLikert;
  size_t item_index = 0;
  std::string image_key;
  std::string prompt_text;          // likert
  std::optional<Question> question;  // localized
  std::optional<BBox> highlight;     // localized, optional overlay
};

/// Answers are canonical strings: "1".."5" for Likert, "yes"/"no" for
/// localized tasks.
struct HumanResponse {
  std::string study_id;
  std::string task_id;
  std::string annotator_id;
  std::string answer;
  std::string timestamp;
};

struct StudyConfig {
  // Target responses per task; 0 means unlimited.
  int redundancy = 3;
  // Optional overlay for localized tasks, computed once at creation.
  std::function<std::optional<BBox>(const EvalItem&, const Question&)> highlighter;
};

struct CreatedStudy {
  std::string study_id;
  size_t n_tasks = 0;
  std::vector<std::string> warnings;
};

struct TaskAgreement {
  std::string task_id;
  std::string majority_answer;
  double agreement_ratio = 0.0;
  int n_responses = 0;
};

struct AgreementReport {
  size_t n_tasks = 0;
  double mean_agreement = 0.0;  // percent
  std::vector<TaskAgreement> per_task;
};

struct ItemReference {
  std::string item_id;
  std::string source_id;
  std::string generator_id;
  ScoreReport report;
  // Questions whose majority was tied and resolved against the target label.
  std::vector<std::string> tied_tasks;
};

struct StudySummary {
  std::string study_id;
  StudyMode mode = StudyMode::kLikert;
  size_t n_items = 0;
  size_t n_tasks = 0;
  size_t n_responses = 0;
};

/// Answer domain check for a task's protocol. Returns the canonical answer.
inline std::string canonical_answer(StudyMode mode, const nlohmann::json& raw) {
  if (mode == StudyMode::kLikert) {
    long v = 0;
    if (raw.is_number_integer()) v = raw.get<long>();
    else if (raw.is_string() && raw.get<std::string>().size() == 1 && std::isdigit(raw.get<std::string>()[0]))
      v = raw.get<std::string>()[0] - '0';
    else throw InvalidItemError("likert answer must be an integer 1-5");
    if (v < 1 || v > 5) throw InvalidItemError("likert answer " + std::to_string(v) + " outside 1-5");
    return std::to_string(v);
  }
  if (raw.is_string()) {
    auto s = normalize_label(raw.get<std::string>());
    if (s == "yes" || s == "no") return s;
  } else if (raw.is_boolean()) {
    return raw.get<bool>() ? "yes" : "no";
  }
  throw InvalidItemError("localized answer must be \"yes\" or \"no\"");
}

/// Majority answer and its share among `answers`. Tied answers name the
/// smallest option; the ratio is the same whichever tied option is named.
inline std::pair<std::string, double> majority_of(const std::vector<std::string>& answers) {
  std::map<std::string, int> tally;
  for (const auto& a : answers) ++tally[a];
  std::string best;
  int best_n = 0;
  for (const auto& [a, n] : tally)
    if (n > best_n) best = a, best_n = n;
  return {best, answers.empty() ? 0.0 : static_cast<double>(best_n) / static_cast<double>(answers.size())};
}

/// Thread-safe store for every study served by one process. All public
/// operations are linearizable: they run under one mutex.
class StudyStore {
 public:
  /// With a log directory, replays `events.jsonl` from it and appends every
  /// later mutation there.
  explicit StudyStore(std::optional<std::filesystem::path> log_dir = std::nullopt) : log_dir_(std::move(log_dir)) {
    if (log_dir_) {
      std::filesystem::create_directories(*log_dir_);
      replay();
      log_.open(log_path(), std::ios::app);
      if (!log_) throw IoError("cannot open response log " + log_path().string());
    }
  }

  CreatedStudy create_study(const std::vector<EvalItem>& items, StudyMode mode, const StudyConfig& cfg = {}) {
    std::lock_guard lock(mu_);
    if (items.empty()) throw ConfigError("cannot create a study without items");
    const std::string id = "s" + std::to_string(studies_.size() + 1);
    Study st = build_study(id, items, mode, cfg.redundancy);
    if (mode == StudyMode::kLocalized && cfg.highlighter) {
      for (auto& t : st.tasks) t.highlight = cfg.highlighter(st.items[t.item_index], *t.question);
    }
    CreatedStudy out{id, st.tasks.size(), st.warnings};
    append(study_event(st));
    studies_.emplace(id, std::move(st));
    return out;
  }

  std::vector<StudySummary> list_studies() const {
    std::lock_guard lock(mu_);
    std::vector<StudySummary> out;
    for (const auto& [id, st] : studies_) {
      size_t n = 0;
      for (const auto& r : st.responses) n += r.size();
      out.push_back({id, st.mode, st.items.size(), st.tasks.size(), n});
    }
    return out;
  }

  std::vector<StudyTask> tasks(const std::string& study_id) const {
    std::lock_guard lock(mu_);
    return get(study_id).tasks;
  }

  StudyMode mode(const std::string& study_id) const {
    std::lock_guard lock(mu_);
    return get(study_id).mode;
  }

  /// Least-answered task this annotator has not answered yet, lowest index on
  /// ties. Tasks already at the redundancy target are not offered. nullopt
  /// means the annotator is done.
  std::optional<StudyTask> next_task(const std::string& study_id, const std::string& annotator_id) const {
    std::lock_guard lock(mu_);
    if (annotator_id.empty()) throw InvalidItemError("annotator id is empty");
    const Study& st = get(study_id);
    std::optional<size_t> best;
    for (size_t t = 0; t < st.tasks.size(); ++t) {
      const auto& answered = st.responses[t];
      if (answered.count(annotator_id)) continue;
      if (st.redundancy > 0 && answered.size() >= static_cast<size_t>(st.redundancy)) continue;
      if (!best || answered.size() < st.responses[*best].size()) best = t;
    }
    if (!best) return std::nullopt;
    return st.tasks[*best];
  }

  /// (answered, total) for one annotator.
  std::pair<size_t, size_t> progress(const std::string& study_id, const std::string& annotator_id) const {
    std::lock_guard lock(mu_);
    const Study& st = get(study_id);
    size_t answered = 0;
    for (const auto& r : st.responses) answered += r.count(annotator_id);
    return {answered, st.tasks.size()};
  }

  /// Validates and stores one response. The answer is canonicalized first.
  HumanResponse submit_response(HumanResponse r, const nlohmann::json& raw_answer) {
    std::lock_guard lock(mu_);
    Study& st = get(r.study_id);
    const size_t t = task_index(st, r.task_id);
    if (r.annotator_id.empty()) throw InvalidItemError("annotator id is empty");
    r.answer = canonical_answer(st.mode, raw_answer);
    if (st.responses[t].count(r.annotator_id))
      throw ConflictError("annotator " + r.annotator_id + " already answered " + r.task_id);
    if (r.timestamp.empty()) r.timestamp = now_iso8601();
    append(response_event(r));
    st.responses[t].emplace(r.annotator_id, r.answer);
    return r;
  }

  HumanResponse submit_response(HumanResponse r) {
    const nlohmann::json raw = r.answer;
    return submit_response(std::move(r), raw);
  }

  AgreementReport agreement(const std::string& study_id) const {
    std::lock_guard lock(mu_);
    const Study& st = get(study_id);
    AgreementReport out;
    double sum = 0.0;
    for (size_t t = 0; t < st.tasks.size(); ++t) {
      if (st.responses[t].size() < 2) continue;
      std::vector<std::string> answers;
      for (const auto& [who, a] : st.responses[t]) answers.push_back(a);
      auto [majority, ratio] = majority_of(answers);
      out.per_task.push_back({st.tasks[t].task_id, majority, ratio, static_cast<int>(answers.size())});
      sum += ratio;
    }
    if (out.per_task.empty()) throw InsufficientDataError("no task in " + study_id + " has 2 or more responses");
    out.n_tasks = out.per_task.size();
    out.mean_agreement = 100.0 * sum / static_cast<double>(out.n_tasks);
    return out;
  }

  /// Per-item confusion counts from majority answers to localized questions.
  /// A tied majority resolves against the question's target label.
  std::vector<ItemReference> human_reference_scores(const std::string& study_id) const {
    std::lock_guard lock(mu_);
    const Study& st = get(study_id);
    if (st.mode != StudyMode::kLocalized) throw ModeError("reference scores need a localized study");
    std::vector<std::string> unanswered;
    for (size_t t = 0; t < st.tasks.size(); ++t)
      if (st.responses[t].empty()) unanswered.push_back(st.tasks[t].task_id);
    if (!unanswered.empty()) {
      throw IncompleteStudyError(std::to_string(unanswered.size()) + " localized tasks in " + study_id +
                                     " have no response",
                                 std::move(unanswered));
    }
    std::vector<ItemReference> out;
    for (size_t i = 0; i < st.items.size(); ++i) {
      const auto& item = st.items[i];
      out.push_back({item.id(), item.prompt.source_id, item.generator_id, {}, {}});
    }
    std::vector<ConfusionCounts> counts(st.items.size());
    for (size_t t = 0; t < st.tasks.size(); ++t) {
      const auto& task = st.tasks[t];
      long yes = 0, no = 0;
      for (const auto& [who, a] : st.responses[t]) (a == "yes" ? yes : no)++;
      const QuestionKind kind = task.question->kind;
      Label predicted;
      if (yes == no) {
        predicted = target_label(kind) == Label::kPositive ? Label::kNegative : Label::kPositive;
        out[task.item_index].tied_tasks.push_back(task.task_id);
      } else {
        predicted = yes > no ? Label::kPositive : Label::kNegative;
      }
      counts[task.item_index].add(outcome_for(kind, predicted));
    }
    for (size_t i = 0; i < out.size(); ++i) out[i].report = report_from_counts(counts[i], Scope::kImage);
    return out;
  }

  std::optional<std::filesystem::path> image_path(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto dash = key.rfind("-i");
    if (dash == std::string::npos) return std::nullopt;
    auto it = studies_.find(key.substr(0, dash));
    if (it == studies_.end()) return std::nullopt;
    try {
      size_t used = 0;
      const std::string num = key.substr(dash + 2);
      const unsigned long idx = std::stoul(num, &used);
      if (used != num.size() || idx >= it->second.items.size()) return std::nullopt;
      return std::filesystem::path(it->second.items[idx].image_ref);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  /// Opaque annotator token; carries no identity information.
  std::string issue_annotator_token() {
    std::lock_guard lock(mu_);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string tok = "a-";
    for (int i = 0; i < 16; ++i) tok += kHex[token_rng_() % 16];
    return tok;
  }

  /// Derived per-study report files next to the log.
  void write_snapshots() const {
    if (!log_dir_) return;
    for (const auto& s : list_studies()) {
      nlohmann::json snap{{"study_id", s.study_id}, {"mode", std::string(to_string(s.mode))},
                          {"n_tasks", s.n_tasks}, {"n_responses", s.n_responses}};
      try {
        snap["agreement"] = to_json(agreement(s.study_id));
      } catch (const InsufficientDataError&) {
        snap["agreement"] = nullptr;
      }
      if (s.mode == StudyMode::kLocalized) {
        try {
          snap["reference_scores"] = to_json(human_reference_scores(s.study_id));
        } catch (const IncompleteStudyError&) {
          snap["reference_scores"] = nullptr;
        }
      }
      std::ofstream out(*log_dir_ / ("snapshot_" + s.study_id + ".json"), std::ios::trunc);
      out << snap.dump(2) << '\n';
    }
  }

  static nlohmann::json to_json(const AgreementReport& r) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& t : r.per_task)
      per.push_back({{"task_id", t.task_id}, {"majority_answer", t.majority_answer},
                     {"agreement_ratio", t.agreement_ratio}, {"n_responses", t.n_responses}});
    return {{"n_tasks", r.n_tasks}, {"mean_agreement", r.mean_agreement}, {"per_task", per}};
  }

  static nlohmann::json to_json(const std::vector<ItemReference>& refs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : refs) {
      const auto& c = r.report.counts;
      auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
      arr.push_back({{"item_id", r.item_id}, {"source_id", r.source_id}, {"generator_id", r.generator_id},
                     {"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn},
                     {"precision", opt(r.report.precision)}, {"recall", opt(r.report.recall)},
                     {"f1", opt(r.report.f1)}, {"tied_tasks", r.tied_tasks}});
    }
    return arr;
  }

  /// Task as shown to annotators: no question kind, no target label.
  static nlohmann::json blinded(const StudyTask& t) {
    nlohmann::json j{{"task_id", t.task_id}, {"mode", std::string(to_string(t.mode))},
                     {"image_url", "/v1/images/" + t.image_key}};
    if (t.mode == StudyMode::kLikert) {
      j["prompt_text"] = t.prompt_text;
      j["scale"] = {{"min", 1}, {"max", 5}};
    } else {
      j["question"] = t.question->text;
      j["entity"] = t.question->subject_entity.class_label;
      if (t.highlight)
        j["highlight"] = {{"top", t.highlight->top}, {"left", t.highlight->left},
                          {"bottom", t.highlight->bottom}, {"right", t.highlight->right}};
    }
    return j;
  }

 private:
  struct Study {
    std::string id;
    StudyMode mode = StudyMode::kLikert;
    int redundancy = 3;
    std::vector<EvalItem> items;
    std::vector<StudyTask> tasks;
    std::vector<std::map<std::string, std::string>> responses;  // per task: annotator -> answer
    std::vector<std::string> warnings;
  };

  static Study build_study(const std::string& id, const std::vector<EvalItem>& items, StudyMode mode, int redundancy) {
    Study st;
    st.id = id;
    st.mode = mode;
    st.redundancy = redundancy;
    st.items = items;
    for (size_t i = 0; i < items.size(); ++i) {
      const auto& item = items[i];
      const std::string image_key = id + "-i" + std::to_string(i);
      if (mode == StudyMode::kLikert) {
        StudyTask t;
        t.mode = mode;
        t.item_index = i;
        t.image_key = image_key;
        t.prompt_text = item.prompt.rendered_text.empty() ? render_prompt(item.prompt) : item.prompt.rendered_text;
        st.tasks.push_back(std::move(t));
        continue;
      }
      auto questions = build_questions(item.prompt);
      if (questions.empty())
        st.warnings.push_back("item " + item.id() + " has no questions (empty prompt); no tasks created");
      for (auto& q : questions) {
        StudyTask t;
        t.mode = mode;
        t.item_index = i;
        t.image_key = image_key;
        t.question = std::move(q);
        st.tasks.push_back(std::move(t));
      }
    }
    for (size_t k = 0; k < st.tasks.size(); ++k) st.tasks[k].task_id = id + "-t" + std::to_string(k);
    st.responses.resize(st.tasks.size());
    return st;
  }

  const Study& get(const std::string& id) const {
    auto it = studies_.find(id);
    if (it == studies_.end()) throw NotFoundError("unknown study \"" + id + "\"");
    return it->second;
  }
  Study& get(const std::string& id) { return const_cast<Study&>(std::as_const(*this).get(id)); }

  static size_t task_index(const Study& st, const std::string& task_id) {
    for (size_t t = 0; t < st.tasks.size(); ++t)
      if (st.tasks[t].task_id == task_id) return t;
    throw NotFoundError("unknown task \"" + task_id + "\" in study " + st.id);
  }

  static std::string now_iso8601() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  std::filesystem::path log_path() const { return *log_dir_ / "events.jsonl"; }

  static nlohmann::json study_event(const Study& st) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : st.items) items.push_back(lvqa::to_json(it));
    nlohmann::json highlights = nlohmann::json::object();
    for (const auto& t : st.tasks)
      if (t.highlight)
        highlights[t.task_id] = {t.highlight->top, t.highlight->left, t.highlight->bottom, t.highlight->right};
    return {{"event", "study"}, {"study_id", st.id}, {"mode", std::string(to_string(st.mode))},
            {"redundancy", st.redundancy}, {"items", items}, {"highlights", highlights}};
  }

  static nlohmann::json response_event(const HumanResponse& r) {
    return {{"event", "response"}, {"study_id", r.study_id}, {"task_id", r.task_id},
            {"annotator_id", r.annotator_id}, {"answer", r.answer}, {"timestamp", r.timestamp}};
  }

  void append(const nlohmann::json& event) {
    if (!log_dir_) return;
    log_ << event.dump() << '\n';
    log_.flush();
    if (!log_) throw IoError("failed to append to " + log_path().string());
  }

  // A torn final line (crash mid-write) is ignored; anything else malformed
  // is an error.
  void replay() {
    std::ifstream in(log_path());
    if (!in) return;
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) lines.push_back(line);
    for (size_t n = 0; n < lines.size(); ++n) {
      nlohmann::json ev;
      try {
        ev = nlohmann::json::parse(lines[n]);
      } catch (const nlohmann::json::parse_error&) {
        if (n + 1 == lines.size()) break;
        throw IoError("corrupt response log line " + std::to_string(n + 1));
      }
      const auto kind = ev.at("event").get<std::string>();
      if (kind == "study") {
        std::vector<EvalItem> items;
        for (const auto& j : ev.at("items")) items.push_back(eval_item_from_json(j));
        Study st = build_study(ev.at("study_id").get<std::string>(), items,
                               parse_study_mode(ev.at("mode").get<std::string>()), ev.at("redundancy").get<int>());
        for (auto& t : st.tasks) {
          if (auto h = ev["highlights"].find(t.task_id); h != ev["highlights"].end())
            t.highlight = BBox{(*h)[0].get<int>(), (*h)[1].get<int>(), (*h)[2].get<int>(), (*h)[3].get<int>()};
        }
        studies_.insert_or_assign(st.id, std::move(st));
      } else if (kind == "response") {
        Study& st = get(ev.at("study_id").get<std::string>());
        st.responses[task_index(st, ev.at("task_id").get<std::string>())].insert_or_assign(
            ev.at("annotator_id").get<std::string>(), ev.at("answer").get<std::string>());
      }
    }
  }

  mutable std::mutex mu_;
  std::optional<std::filesystem::path> log_dir_;
  std::ofstream log_;
  std::map<std::string, Study> studies_;
  std::mt19937_64 token_rng_{std::random_device{}()};
};

}  // namespace lvqa
