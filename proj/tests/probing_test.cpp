#include <gtest/gtest.h>

#include <atomic>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "httplib.h"
#include "lvqa/backends.hpp"
#include "lvqa/probing.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace lvqa {
namespace {

using testing::oth;
using testing::pat;
using testing::prompt_of;

using Key = std::pair<std::string, std::string>;

std::set<Key> keys_of(const std::vector<Question>& qs) {
  std::set<Key> s;
  for (const auto& q : qs) s.emplace(q.subject_entity.class_label, q.attribute.name);
  return s;
}

TEST(Questions, RenderWithNumberAgreement) {
  EXPECT_EQ(render_question("blazer", "floral"), "Is the blazer floral?");
  EXPECT_EQ(render_question("pants", "dotted"), "Are the pants dotted?");
  EXPECT_THROW(render_question("", "dotted"), InvalidItemError);
  Question q{QuestionKind::kReflection, 0, {"blazer", {}}, pat("floral"), "Is the blazer floral?"};
  EXPECT_EQ(wrap_for_vqa(q), "Is the blazer floral? Please answer yes or no.");
}

TEST(Questions, ReflectionAndLeakageForTwoEntities) {
  auto p = prompt_of({{"blazer", {pat("floral"), oth("notched lapel")}}, {"pants", {pat("dotted"), oth("gold")}}});
  auto qr = build_reflection_questions(p);
  ASSERT_EQ(qr.size(), 4u);
  EXPECT_EQ(qr[0].text, "Is the blazer floral?");
  EXPECT_EQ(qr[2].text, "Are the pants dotted?");
  auto ql = build_leakage_questions(p);
  ASSERT_EQ(ql.size(), 4u);
  EXPECT_EQ(ql[1].text, "Is the blazer gold?");
  for (const auto& q : ql) EXPECT_EQ(q.kind, QuestionKind::kLeakage);
  auto all = build_questions(p);
  ASSERT_EQ(all.size(), 8u);
  EXPECT_EQ(all[4].kind, QuestionKind::kLeakage);
}

TEST(Questions, LeakageSkipsPairsAlreadyAskedAsReflection) {
  auto p = prompt_of({{"shirt", {pat("striped")}}, {"pants", {oth("striped"), pat("dotted")}}});
  auto ql = build_leakage_questions(p);
  ASSERT_EQ(ql.size(), 1u);
  EXPECT_EQ(ql[0].subject_entity.class_label, "shirt");
  EXPECT_EQ(ql[0].attribute.name, "dotted");
}

TEST(Questions, LeakageDeduplicatesRepeatedAttributes) {
  auto p = prompt_of({{"shirt", {}}, {"pants", {oth("pink")}}, {"skirt", {oth("pink")}}});
  auto ql = build_leakage_questions(p);
  EXPECT_EQ(keys_of(ql), (std::set<Key>{{"shirt", "pink"}}));
  EXPECT_EQ(ql.size(), 1u);
}

TEST(Questions, MatchEnumerationOracleOnRandomPrompts) {
  std::mt19937 rng(43);
  for (int trial = 0; trial < 500; ++trial) {
    auto p = testing::random_prompt(rng);
    const auto [reflect, leak] = oracle::question_keys(p);
    size_t total_attrs = 0;
    for (const auto& e : p.entities) total_attrs += e.attributes.size();
    auto qr = build_reflection_questions(p);
    auto ql = build_leakage_questions(p);
    EXPECT_EQ(qr.size(), total_attrs);
    EXPECT_EQ(keys_of(qr), reflect);
    EXPECT_EQ(keys_of(ql), leak);
    EXPECT_EQ(ql.size(), leak.size());
    for (const auto& q : qr) EXPECT_EQ(q.kind, QuestionKind::kReflection);
  }
}

TEST(Outcomes, ConfusionTable) {
  EXPECT_EQ(outcome_for(QuestionKind::kReflection, Label::kPositive), Outcome::kTP);
  EXPECT_EQ(outcome_for(QuestionKind::kReflection, Label::kNegative), Outcome::kFN);
  EXPECT_EQ(outcome_for(QuestionKind::kLeakage, Label::kPositive), Outcome::kFP);
  EXPECT_EQ(outcome_for(QuestionKind::kLeakage, Label::kNegative), Outcome::kTN);
  for (auto o : {Outcome::kTP, Outcome::kFP, Outcome::kTN, Outcome::kFN}) EXPECT_EQ(parse_outcome(to_string(o)), o);
}

TEST(Outcomes, ThresholdIsStrict) {
  Question q{QuestionKind::kReflection, 0, {"shirt", {}}, pat("striped"), "Is the shirt striped?"};
  EXPECT_EQ(make_answer(q, 0.5, 0.5).predicted, Label::kNegative);
  EXPECT_EQ(make_answer(q, 0.5000001, 0.5).predicted, Label::kPositive);
  EXPECT_EQ(make_answer(q, 0.3, 0.25).outcome, Outcome::kTP);
  EXPECT_THROW(make_answer(q, 1.2, 0.5), ProtocolError);
  EXPECT_THROW(make_answer(q, 0.5, 1.0), ConfigError);
  EXPECT_THROW(make_answer(q, 0.5, 0.0), ConfigError);
}

TEST(Concurrency, ParallelMapKeepsOrder) {
  auto out = parallel_map(100, 4, [](size_t i) {
    std::this_thread::sleep_for(std::chrono::microseconds((100 - i) * 10));
    return i * i;
  });
  for (size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], i * i);
  EXPECT_THROW(parallel_map(10, 3,
                            [](size_t i) {
                              if (i == 5) throw ProtocolError("boom");
                              return i;
                            }),
               ProtocolError);
  EXPECT_TRUE(parallel_map(0, 4, [](size_t i) { return i; }).empty());
}

TEST(Concurrency, RetryOnlyRetryableErrors) {
  RetryPolicy fast{3, std::chrono::milliseconds(1), 2.0};
  RetryCounters counters;
  int calls = 0;
  EXPECT_EQ(with_retry(fast,
                       [&] {
                         if (++calls < 3) throw BackendUnavailableError("busy");
                         return 7;
                       },
                       &counters),
            7);
  EXPECT_EQ(counters.retries.load(), 2);
  calls = 0;
  EXPECT_THROW(with_retry(fast,
                          [&]() -> int {
                            ++calls;
                            throw ProtocolError("bad");
                          }),
               ProtocolError);
  EXPECT_EQ(calls, 1);
  calls = 0;
  EXPECT_THROW(with_retry(fast,
                          [&]() -> int {
                            ++calls;
                            throw BackendUnavailableError("down");
                          }),
               BackendUnavailableError);
  EXPECT_EQ(calls, 3);
}

class CountingVqa : public VqaBackend {
 public:
  std::string model_id() const override { return "count"; }
  double p_yes(const Image&, const Question& q, std::string_view) const override {
    ++calls;
    return q.kind == QuestionKind::kReflection ? 0.9 : 0.1;
  }
  mutable std::atomic<int> calls{0};
};

TEST(Evaluate, OneAnswerPerQuestionInOrder) {
  auto p = prompt_of({{"shirt", {pat("striped"), oth("long-sleeve")}}, {"pants", {pat("dotted")}}}, "s1");
  Image img(20, 20, Rgb{90, 90, 90});
  FullFrameSegmentation seg;
  CountingVqa vqa;
  EvalConfig cfg;
  auto records = evaluate_prompt(img, p, "g1", &seg, vqa, cfg);
  auto qs = build_questions(p);
  ASSERT_EQ(records.size(), qs.size());
  EXPECT_EQ(vqa.calls.load(), static_cast<int>(qs.size()));
  for (size_t k = 0; k < qs.size(); ++k) {
    EXPECT_EQ(records[k].question.text, qs[k].text);
    EXPECT_EQ(records[k].generator_id, "g1");
    EXPECT_EQ(records[k].source_id, "s1");
    EXPECT_EQ(records[k].outcome, qs[k].kind == QuestionKind::kReflection ? Outcome::kTP : Outcome::kTN);
  }
  EXPECT_EQ(records[3].view_ref, "s1/g1/0:blur_crop");
}

TEST(Evaluate, OracleScoresFaithfulAndSwappedImages) {
  auto truth = prompt_of({{"shirt", {pat("striped")}}, {"pants", {pat("dotted")}}}, "s1");
  OracleVqaBackend oracle;
  oracle.add(truth);
  FullFrameSegmentation seg;
  Image img(8, 8);
  EvalConfig cfg;
  auto faithful = evaluate_prompt(img, truth, "g", &seg, oracle, cfg);
  for (const auto& r : faithful) EXPECT_TRUE(r.outcome == Outcome::kTP || r.outcome == Outcome::kTN);

  OracleVqaBackend swapped;
  swapped.add(swap_attributes(truth));
  auto confused = evaluate_prompt(img, truth, "g", &seg, swapped, cfg);
  for (const auto& r : confused) EXPECT_TRUE(r.outcome == Outcome::kFN || r.outcome == Outcome::kFP);

  EXPECT_THROW(evaluate_prompt(img, prompt_of({{"hat", {pat("plaid")}}}, "unknown"), "g", &seg, oracle, cfg),
               ProtocolError);
}

TEST(Evaluate, MissingSegmentationFallsBackPerEntity) {
  auto p = prompt_of({{"shirt", {pat("striped")}}, {"pants", {pat("dotted")}}}, "s1");
  Image img(10, 10);
  ScriptedSegmentation seg({{"shirt", {{Bitmap(10, 10, true), 0.8}}}});
  CountingVqa vqa;
  EvalConfig cfg;
  std::vector<bool> fallbacks;
  cfg.on_view = [&](size_t, const LocalizedView& v) { fallbacks.push_back(v.fallback_used); };
  auto records = evaluate_prompt(img, p, "g", &seg, vqa, cfg);
  EXPECT_EQ(fallbacks, (std::vector<bool>{false, true}));
  for (const auto& r : records) EXPECT_EQ(r.fallback_used, r.question.subject_index == 1);
}

TEST(Evaluate, NoneStrategySkipsSegmentation) {
  auto p = prompt_of({{"shirt", {pat("striped")}}, {"pants", {pat("dotted")}}}, "s1");
  CountingVqa vqa;
  EvalConfig cfg;
  cfg.strategy = Strategy::kNone;
  EXPECT_EQ(evaluate_prompt(Image(4, 4), p, "g", nullptr, vqa, cfg).size(), 4u);
  cfg.strategy = Strategy::kCrop;
  EXPECT_THROW(evaluate_prompt(Image(4, 4), p, "g", nullptr, vqa, cfg), ConfigError);
}

TEST(AnswerJson, RoundTrips) {
  Question q{QuestionKind::kLeakage, 1, {"pants", {}}, pat("striped"), "Are the pants striped?"};
  auto r = make_answer(q, 0.75, 0.5);
  r.source_id = "s";
  r.generator_id = "g";
  r.view_ref = "s/g/1:crop";
  auto back = answer_record_from_json(to_json(r));
  EXPECT_EQ(back.outcome, Outcome::kFP);
  EXPECT_EQ(back.question.text, q.text);
  EXPECT_EQ(back.question.subject_index, 1u);
  EXPECT_DOUBLE_EQ(back.p_yes, 0.75);
  EXPECT_EQ(to_json(back), to_json(r));
  EXPECT_THROW(answer_record_from_json(nlohmann::json::object()), SchemaError);
}

// ---------------------------------------------------------------------------
// HTTP clients against an in-process fake model server.

class FakeModelServer {
 public:
  FakeModelServer() {
    server_.Post("/segment", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = nlohmann::json::parse(req.body);
      last_label = body.at("label");
      auto img = decode_png(base64_decode(body.at("image").get<std::string>()));
      Bitmap m(img.height(), img.width());
      m.set(0, 0);
      nlohmann::json reply{{"candidates", {{{"mask", rle_encode(m)}, {"confidence", 0.9}}}}};
      res.set_content(reply.dump(), "application/json");
    });
    server_.Post("/vqa", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = nlohmann::json::parse(req.body);
      last_question = body.at("question");
      if (failures_left > 0) {
        --failures_left;
        res.status = 503;
        return;
      }
      res.set_content(nlohmann::json{{"p_yes", 0.8}}.dump(), "application/json");
    });
    server_.Post("/bad", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("not json", "text/plain");
    });
    server_.Post("/reject", [](const httplib::Request&, httplib::Response& res) { res.status = 400; });
    server_.Post("/range", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"p_yes": 1.5})", "application/json");
    });
    port = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeModelServer() {
    server_.stop();
    thread_.join();
  }
  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port) + path; }

  int port = 0;
  std::atomic<int> failures_left{0};
  std::string last_label, last_question;

 private:
  httplib::Server server_;
  std::thread thread_;
};

TEST(Endpoint, ParsesAndRejects) {
  auto e = Endpoint::parse("http://localhost:9000/v1/vqa");
  EXPECT_EQ(e.base, "http://localhost:9000");
  EXPECT_EQ(e.path, "/v1/vqa");
  EXPECT_EQ(Endpoint::parse("http://model").path, "/");
  EXPECT_THROW(Endpoint::parse("ftp://x"), ConfigError);
  EXPECT_THROW(Endpoint::parse("localhost:9000"), ConfigError);
}

TEST(HttpBackends, WireContract) {
  FakeModelServer fake;
  HttpSegmentationBackend seg(fake.url("/segment"));
  Image img(5, 7, Rgb{1, 2, 3});
  auto cands = seg.candidates(img, "shirt");
  ASSERT_EQ(cands.size(), 1u);
  EXPECT_EQ(fake.last_label, "shirt");
  EXPECT_EQ(cands[0].mask.count(), 1u);
  EXPECT_EQ(cands[0].mask.width(), 7);
  EXPECT_DOUBLE_EQ(cands[0].confidence, 0.9);

  HttpVqaBackend vqa(fake.url("/vqa"));
  Question q{QuestionKind::kReflection, 0, {"pants", {}}, pat("dotted"), "Are the pants dotted?"};
  EXPECT_DOUBLE_EQ(vqa.p_yes(img, q, "s"), 0.8);
  EXPECT_EQ(fake.last_question, "Are the pants dotted? Please answer yes or no.");
}

TEST(HttpBackends, TransientFailuresAreRetried) {
  FakeModelServer fake;
  fake.failures_left = 2;
  HttpVqaBackend vqa(fake.url("/vqa"));
  Question q{QuestionKind::kReflection, 0, {"pants", {}}, pat("dotted"), "Are the pants dotted?"};
  RetryCounters counters;
  RetryPolicy fast{4, std::chrono::milliseconds(1), 2.0};
  EXPECT_DOUBLE_EQ(with_retry(fast, [&] { return vqa.p_yes(Image(2, 2), q, "s"); }, &counters), 0.8);
  EXPECT_EQ(counters.retries.load(), 2);
}

TEST(HttpBackends, ErrorsAreClassified) {
  FakeModelServer fake;
  Question q{QuestionKind::kReflection, 0, {"pants", {}}, pat("dotted"), "Are the pants dotted?"};
  EXPECT_THROW(HttpVqaBackend(fake.url("/bad")).p_yes(Image(2, 2), q, ""), ProtocolError);
  EXPECT_THROW(HttpVqaBackend(fake.url("/reject")).p_yes(Image(2, 2), q, ""), ProtocolError);
  EXPECT_THROW(HttpVqaBackend(fake.url("/range")).p_yes(Image(2, 2), q, ""), ProtocolError);
  EXPECT_THROW(HttpSegmentationBackend(fake.url("/bad")).candidates(Image(2, 2), "x"), ProtocolError);
  HttpOptions quick{std::chrono::milliseconds(200), std::chrono::milliseconds(200)};
  EXPECT_THROW(HttpVqaBackend("http://127.0.0.1:1/vqa", {}, quick).p_yes(Image(2, 2), q, ""), BackendUnavailableError);
}

}  // namespace
}  // namespace lvqa
