// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "cogtipro/error.hpp"
#include "cogtipro/http_client.hpp"
#include "cogtipro/json_io.hpp"
#include "cogtipro/llm_gateway.hpp"
#include "cogtipro/markers.hpp"
#include "cogtipro/rule_backend.hpp"
#include "test_support.hpp"

// After Eigen: resolv.h defines a `_res` macro that collides with Eigen.
#include <httplib.h>

namespace cogtipro {
namespace {

using llm::CompletionRequest;
using llm::Role;
using markers::Category;
using testing::month_of;

CompletionRequest request(Role role, std::string prompt, std::string input) {
  CompletionRequest r;
  r.role = role;
  r.prompt_text = std::move(prompt);
  r.input_text = std::move(input);
  return r;
}

// ---- parse_label ------------------------------------------------------------

TEST(ParseLabel, SpecExamples) {
  EXPECT_EQ(llm::parse_label("The pattern suggests MCI"), Prediction::MCI);
  EXPECT_EQ(llm::parse_label("hc"), Prediction::HC);
  EXPECT_EQ(llm::parse_label("I cannot determine this"), Prediction::Abstain);
}

TEST(ParseLabel, LastStandaloneTokenWins) {
  EXPECT_EQ(llm::parse_label("MCI or HC? Final answer: HC."), Prediction::HC);
  EXPECT_EQ(llm::parse_label("not HC; (mci)"), Prediction::MCI);
  EXPECT_EQ(llm::parse_label("HCI MCIs hcx"), Prediction::Abstain);
  EXPECT_EQ(llm::parse_label(""), Prediction::Abstain);
}

// ---- fixture ----------------------------------------------------------------

TEST(FixtureBackend, ScriptedPerRole) {
  auto fx = std::make_shared<llm::FixtureBackend>(std::vector<llm::FixtureEntry>{
      {Role::kClassifier, "Prediction: MCI"},
      {Role::kExtractor, "reduced lexical diversity; frequent fillers"},
      {Role::kClassifier, "Prediction: HC"}});
  llm::Gateway gw(fx);
  EXPECT_EQ(gw.complete(request(Role::kClassifier, "p", "x")).text, "Prediction: MCI");
  EXPECT_EQ(gw.complete(request(Role::kExtractor, "p", "x")).text,
            "reduced lexical diversity; frequent fillers");
  EXPECT_EQ(fx->remaining(Role::kClassifier), 1u);
  EXPECT_EQ(gw.complete(request(Role::kClassifier, "p", "x")).text, "Prediction: HC");
  EXPECT_THROW(gw.complete(request(Role::kClassifier, "p", "x")), FixtureExhaustedError);
  EXPECT_THROW(gw.complete(request(Role::kRefiner, "p", "x")), FixtureExhaustedError);
  EXPECT_FALSE(fx->order_independent());
  EXPECT_EQ(gw.calls(), 3u);
}

TEST(FixtureBackend, FromFile) {
  testing::TempDir dir("fx");
  json_io::write_text_file(dir.path() / "fx.json",
                           R"([{"role_tag":"classifier","response":"Prediction: MCI"},
                               {"role_tag":"refiner","response":"INSTRUCTION: x"}])");
  auto fx = llm::FixtureBackend::from_file(dir.path() / "fx.json");
  EXPECT_EQ(fx->remaining(Role::kClassifier), 1u);
  EXPECT_EQ(fx->remaining(Role::kRefiner), 1u);
  EXPECT_EQ(fx->remaining(Role::kExtractor), 0u);
  json_io::write_text_file(dir.path() / "bad.json", R"([{"role_tag":"oracle","response":"x"}])");
  EXPECT_THROW(llm::FixtureBackend::from_file(dir.path() / "bad.json"), ConfigError);
  json_io::write_text_file(dir.path() / "obj.json", R"({"role_tag":"refiner"})");
  EXPECT_THROW(llm::FixtureBackend::from_file(dir.path() / "obj.json"), IngestionError);
}

// ---- rule backend -----------------------------------------------------------

TEST(RuleDirectives, ParseRenderReplace) {
  auto d = llm::rule::parse_directives("text\nWEIGHTS: repetition:1.0 threshold:1.5\n");
  EXPECT_DOUBLE_EQ(d.weight(Category::kRepetition), 1.0);
  EXPECT_DOUBLE_EQ(d.threshold, 1.5);
  EXPECT_EQ(llm::rule::parse_directives("no directives"), llm::rule::Directives{});
  auto last = llm::rule::parse_directives("WEIGHTS: filler:2\nmid\nweights: lexical:0.5 threshold:3");
  EXPECT_DOUBLE_EQ(last.weight(Category::kDisfluency), 0.0);
  EXPECT_DOUBLE_EQ(last.weight(Category::kPragmatic), 0.5);
  EXPECT_EQ(llm::rule::parse_directives(llm::rule::render_directives(last)), last);
  EXPECT_THROW(llm::rule::parse_directives("WEIGHTS: repetition=1"), ConfigError);
  EXPECT_THROW(llm::rule::parse_directives("WEIGHTS: loudness:1"), ConfigError);
  EXPECT_THROW(llm::rule::parse_directives("WEIGHTS: filler:abc"), ConfigError);

  auto replaced = llm::rule::with_directives("Count markers.\nWEIGHTS: threshold:1", last);
  EXPECT_EQ(llm::rule::parse_directives(replaced), last);
  EXPECT_NE(replaced.find("Count markers."), std::string::npos);
  EXPECT_EQ(replaced.find("threshold:1\n"), std::string::npos);
}

TEST(RuleTranscript, RoundTrip) {
  auto m = month_of({{0, "play jazz"}, {7, "um, what's   the weather?"}}, "P07", 4);
  auto back = llm::rule::parse_transcript(llm::rule::render_transcript(m));
  EXPECT_EQ(back.participant_id, "P07");
  EXPECT_EQ(back.month_index, 4);
  ASSERT_EQ(back.commands.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.commands[i].text, m.commands[i].text);
    EXPECT_EQ(back.commands[i].timestamp, m.commands[i].timestamp);
  }
  EXPECT_EQ(markers::marker_statistics(back), markers::marker_statistics(m));
}

MonthlyTranscript three_bursts() {
  std::vector<std::pair<int, std::string>> cmds;
  for (int b = 0; b < 3; ++b) {
    for (int k = 0; k < 3; ++k) cmds.push_back({b * 600 + k * 5, "play music"});
  }
  return month_of(cmds);
}

TEST(RuleBackend, SpecClassifierExamples) {
  llm::RuleBackend rb;
  auto m = three_bursts();
  ASSERT_EQ(markers::marker_statistics(m).repetition_burst_count, 3);
  EXPECT_EQ(rb.complete(request(Role::kClassifier, "WEIGHTS: repetition:1.0 threshold:1.5",
                                llm::rule::render_transcript(m)))
                .text,
            "Prediction: MCI");
  EXPECT_EQ(rb.complete(request(Role::kClassifier, "WEIGHTS: repetition:1.0 threshold:1.5",
                                llm::rule::render_transcript(month_of({}))))
                .text,
            "Prediction: HC");
  EXPECT_THROW(rb.complete(request(Role::kClassifier, "WEIGHTS: bogus:1", "x")), ConfigError);
}

TEST(RuleBackend, ExtractorRendersFocusedMarkers) {
  llm::RuleBackend rb;
  std::vector<std::pair<int, std::string>> cmds;
  for (int b = 0; b < 2; ++b) {
    for (int k = 0; k < 3; ++k) cmds.push_back({b * 600 + k * 5, "stop"});
  }
  const auto t = llm::rule::render_transcript(month_of(cmds));
  auto focused = rb.complete(request(Role::kExtractor, "WEIGHTS: repetition:1 threshold:1", t)).text;
  EXPECT_NE(focused.find("repetition_bursts: 2\n"), std::string::npos) << focused;
  EXPECT_NE(focused.find("notable: repetition"), std::string::npos) << focused;
  EXPECT_TRUE(llm::rule::is_summary(focused));
  auto unfocused = rb.complete(request(Role::kExtractor, "WEIGHTS: threshold:1", t)).text;
  EXPECT_EQ(unfocused.find("repetition_bursts"), std::string::npos) << unfocused;
  // Same request, same reply.
  EXPECT_EQ(rb.complete(request(Role::kExtractor, "WEIGHTS: repetition:1 threshold:1", t)).text,
            focused);
}

TEST(RuleBackend, SummaryRoundTripsFocusedStats) {
  llm::rule::Directives all;
  all.weights.fill(1.0);
  markers::MarkerStats s;
  s.type_token_ratio = 0.4321;
  s.repetition_burst_count = 4;
  s.filler_rate = 0.25;
  s.vague_placeholder_rate = 0.125;
  s.imperative_fraction = 0.5;
  s.topic_jump_rate = 1.0 / 3.0;
  s.self_correction_abandon_count = 9;
  auto back = llm::rule::parse_summary(llm::rule::render_summary(s, 12, all));
  EXPECT_EQ(back.repetition_burst_count, 4);
  EXPECT_EQ(back.self_correction_abandon_count, 9);
  EXPECT_NEAR(back.type_token_ratio, s.type_token_ratio, 1e-6);
  EXPECT_NEAR(back.topic_jump_rate, s.topic_jump_rate, 1e-6);
  EXPECT_NEAR(back.filler_rate, s.filler_rate, 1e-6);
}

TEST(RuleBackend, ClassifierReadsSummaries) {
  llm::RuleBackend rb;
  const std::string prompt = "WEIGHTS: filler:1 threshold:1";
  markers::MarkerStats s;
  s.filler_rate = 0.5;
  llm::rule::Directives focus = llm::rule::parse_directives(prompt);
  EXPECT_EQ(rb.complete(request(Role::kClassifier, prompt,
                                llm::rule::render_summary(s, 10, focus)))
                .text,
            "Prediction: MCI");
  s.filler_rate = 0.01;
  EXPECT_EQ(rb.complete(request(Role::kClassifier, prompt,
                                llm::rule::render_summary(s, 10, focus)))
                .text,
            "Prediction: HC");
}

TEST(RuleBackend, VerdictMatchesScoringFormula) {
  const std::vector<std::string> bank = {"play jazz", "um play jazz", "stop", "that thing",
                                         "never mind", "what is two plus two", "uh stop",
                                         "turn on the lights", "whatever it is"};
  llm::RuleBackend rb;
  Rng rng(31);
  int mci = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<int, std::string>> cmds;
    int t = 0;
    for (int i = rng.integer(0, 25); i > 0; --i) {
      t += rng.integer(0, 15);
      cmds.push_back({t, rng.pick(bank)});
    }
    const auto m = month_of(cmds);
    llm::rule::Directives d;
    for (auto& w : d.weights) w = rng.bernoulli(0.5) ? std::round(rng.uniform(0, 3) * 4) / 4 : 0.0;
    d.threshold = std::round(rng.uniform(0, 6) * 4) / 4;
    const auto s = markers::marker_statistics(m);
    double score = 0;
    for (auto c : markers::kAllCategories) {
      score += d.weight(c) * markers::marker_value(s, c) / llm::rule::notable_level(c);
    }
    const auto want = score > d.threshold ? "Prediction: MCI" : "Prediction: HC";
    mci += score > d.threshold;
    EXPECT_EQ(rb.complete(request(Role::kClassifier, llm::rule::render_directives(d),
                                  llm::rule::render_transcript(m)))
                  .text,
              want);
  }
  // Both verdicts occur in the sample.
  EXPECT_GT(mci, 10);
  EXPECT_LT(mci, 90);
}

std::string digest_with(const std::vector<std::pair<Label, MonthlyTranscript>>& cases) {
  std::string d = "ERROR ANALYSIS\n";
  int mci = 0, hc = 0;
  for (const auto& [l, t] : cases) (l == Label::MCI ? mci : hc)++;
  d += "errors_actual_mci: " + std::to_string(mci) + "\n";
  d += "errors_actual_hc: " + std::to_string(hc) + "\ntop_terms: none\n";
  int k = 0;
  for (const auto& [l, t] : cases) {
    d += "case " + std::to_string(++k) + " (P01 month 1, predicted " +
         (l == Label::MCI ? "HC" : "MCI") + ", actual " + std::string(to_string(l)) +
         "):\nMARKER SUMMARY\ncommands: 3\nnotable: none\n" + llm::rule::render_transcript(t);
  }
  return d;
}

TEST(RuleBackend, RefinerRaisesWeightOfDominantMissedMarker) {
  llm::RuleBackend rb;
  const std::string prompt = "CURRENT PROMPT:\nCONTEXT:\nc\nINSTRUCTION:\nCount.\nWEIGHTS: threshold:1\n";
  auto fillers = month_of({{0, "um play jazz"}, {300, "uh set a timer"}, {600, "hmm stop"},
                           {900, "what time is it"}});
  auto reply = rb.complete(request(Role::kRefiner, prompt,
                                   digest_with({{Label::MCI, fillers}, {Label::MCI, fillers}})))
                   .text;
  auto d = llm::rule::parse_directives(reply);
  EXPECT_GT(d.weight(Category::kDisfluency), 0.0) << reply;
  EXPECT_DOUBLE_EQ(d.weight(Category::kRepetition), 0.0) << reply;
  EXPECT_NE(reply.find("NOTE: attend to filler"), std::string::npos) << reply;
  EXPECT_NE(reply.find("INSTRUCTION:"), std::string::npos);

  auto hc_reply = rb.complete(request(Role::kRefiner, prompt,
                                      digest_with({{Label::HC, fillers}})))
                      .text;
  EXPECT_DOUBLE_EQ(llm::rule::parse_directives(hc_reply).threshold, 1.5) << hc_reply;
}

// ---- gateway ----------------------------------------------------------------

class EchoBackend final : public llm::Backend {
 public:
  llm::CompletionResponse complete(const CompletionRequest& r) override {
    std::this_thread::sleep_for(std::chrono::microseconds(50 * (r.input_text.size() % 7)));
    if (r.input_text == "fail") throw TransportError("boom " + r.prompt_text);
    return {r.input_text, id(), std::nullopt, std::nullopt};
  }
  std::string id() const override { return "echo"; }
};

TEST(Gateway, BatchKeepsRequestOrder) {
  llm::GatewayOptions o;
  o.parallelism = 4;
  llm::Gateway gw(std::make_shared<EchoBackend>(), o);
  std::vector<CompletionRequest> reqs;
  for (int i = 0; i < 64; ++i) reqs.push_back(request(Role::kExtractor, "p", std::to_string(i * 37)));
  auto out = gw.complete_batch(reqs);
  ASSERT_EQ(out.size(), 64u);
  for (int i = 0; i < 64; ++i) EXPECT_EQ(out[i].text, std::to_string(i * 37));
  EXPECT_EQ(gw.calls(), 64u);
}

TEST(Gateway, LowestIndexFailureIsRethrown) {
  llm::GatewayOptions o;
  o.parallelism = 3;
  llm::Gateway gw(std::make_shared<EchoBackend>(), o);
  std::vector<CompletionRequest> reqs;
  for (int i = 0; i < 12; ++i) reqs.push_back(request(Role::kExtractor, std::to_string(i), "ok"));
  reqs[9].input_text = "fail";
  reqs[4].input_text = "fail";
  try {
    gw.complete_batch(reqs);
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_STREQ(e.what(), "boom 4");
  }
}

TEST(Gateway, EmptyCompletionIsAnError) {
  llm::Gateway gw(std::make_shared<EchoBackend>());
  EXPECT_THROW(gw.complete(request(Role::kExtractor, "p", "  ")), Error);
  EXPECT_THROW(llm::Gateway(nullptr), ConfigError);
}

TEST(Gateway, ReplayLog) {
  testing::TempDir dir("replay");
  llm::GatewayOptions o;
  o.replay_log = dir.path() / "sub" / "replay.jsonl";
  {
    llm::Gateway gw(std::make_shared<EchoBackend>(), o);
    gw.complete(request(Role::kClassifier, "prompt", "hello"));
    gw.complete(request(Role::kRefiner, "prompt", "again"));
  }
  std::vector<nlohmann::json> rows;
  json_io::for_each_jsonl(*o.replay_log, [&](const nlohmann::json& j, std::size_t) { rows.push_back(j); });
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["role_tag"], "classifier");
  EXPECT_EQ(rows[1]["response"], "again");
  EXPECT_EQ(rows[1]["backend_id"], "echo");
}

// ---- http -------------------------------------------------------------------

class LocalServer {
 public:
  LocalServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

TEST(Http, ParseUrl) {
  auto e = http::parse_url("https://api.example.com:8443/v1/chat/completions");
  EXPECT_EQ(e.origin, "https://api.example.com:8443");
  EXPECT_EQ(e.path, "/v1/chat/completions");
  EXPECT_EQ(http::parse_url("http://localhost").path, "/");
  EXPECT_THROW(http::parse_url("localhost:80/x"), ConfigError);
  EXPECT_THROW(http::parse_url("ftp://host/x"), ConfigError);
  EXPECT_THROW(http::parse_url("http:///x"), ConfigError);
}

TEST(Http, ChatCompletionRequestShapeAndAuth) {
  LocalServer s;
  nlohmann::json seen;
  std::string auth;
  s.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"Prediction: HC"}}],
                       "usage":{"prompt_tokens":11,"completion_tokens":3}})",
                    "application/json");
  });
  ::setenv("COGTIPRO_TEST_KEY", "sekrit", 1);
  llm::HttpOptions o;
  o.url = s.url("/v1/chat/completions");
  o.model = "test-model";
  o.api_key_env = "COGTIPRO_TEST_KEY";
  llm::HttpBackend backend(o);
  auto r = backend.complete(request(Role::kClassifier, "system text", "user text"));
  EXPECT_EQ(r.text, "Prediction: HC");
  ASSERT_TRUE(r.usage.has_value());
  EXPECT_EQ(r.usage->prompt_tokens, 11);
  EXPECT_EQ(auth, "Bearer sekrit");
  EXPECT_EQ(seen["model"], "test-model");
  EXPECT_EQ(seen["messages"][0]["role"], "system");
  EXPECT_EQ(seen["messages"][0]["content"], "system text");
  EXPECT_EQ(seen["messages"][1]["role"], "user");
  EXPECT_EQ(seen["messages"][1]["content"], "user text");
  EXPECT_EQ(seen["temperature"], 0.0);
  EXPECT_EQ(seen["max_tokens"], 1024);
  EXPECT_FALSE(backend.reproducible());
  ::unsetenv("COGTIPRO_TEST_KEY");
}

TEST(Http, RetriesServerErrorsThenSucceeds) {
  LocalServer s;
  std::atomic<int> hits{0};
  s.server().Post("/x", [&](const httplib::Request&, httplib::Response& res) {
    if (++hits < 3) {
      res.status = hits == 1 ? 503 : 429;
      return;
    }
    res.set_content(R"({"ok":true})", "application/json");
  });
  http::PostOptions o;
  o.initial_backoff = std::chrono::milliseconds{1};
  EXPECT_EQ(http::post_json(s.url("/x"), {{"a", 1}}, o)["ok"], true);
  EXPECT_EQ(hits, 3);
}

TEST(Http, GivesUpAfterBoundedAttempts) {
  LocalServer s;
  std::atomic<int> hits{0};
  s.server().Post("/x", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 500;
  });
  http::PostOptions o;
  o.initial_backoff = std::chrono::milliseconds{1};
  EXPECT_THROW(http::post_json(s.url("/x"), {}, o), TransportError);
  EXPECT_EQ(hits, 3);
}

TEST(Http, ClientErrorsAreNotRetried) {
  LocalServer s;
  std::atomic<int> hits{0};
  s.server().Post("/x", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 401;
    res.set_content("bad key", "text/plain");
  });
  http::PostOptions o;
  o.initial_backoff = std::chrono::milliseconds{1};
  EXPECT_THROW(http::post_json(s.url("/x"), {}, o), ConfigError);
  EXPECT_EQ(hits, 1);
}

TEST(Http, MalformedRepliesAndUnreachableHosts) {
  LocalServer s;
  s.server().Post("/text", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("not json", "text/plain");
  });
  s.server().Post("/shape", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices":[]})", "application/json");
  });
  http::PostOptions o;
  o.initial_backoff = std::chrono::milliseconds{1};
  EXPECT_THROW(http::post_json(s.url("/text"), {}, o), IngestionError);
  llm::HttpOptions ho;
  ho.url = s.url("/shape");
  ho.initial_backoff = std::chrono::milliseconds{1};
  EXPECT_THROW(llm::HttpBackend(ho).complete(request(Role::kExtractor, "p", "i")), IngestionError);

  // Nothing listens on the discard port.
  o.max_attempts = 2;
  o.timeout = std::chrono::seconds{2};
  EXPECT_THROW(http::post_json("http://127.0.0.1:9/x", {}, o), TransportError);
}

}  // namespace
}  // namespace cogtipro
