#include <gtest/gtest.h>

#include <csignal>
#include <sys/wait.h>
#include <unistd.h>

#include <thread>

#include "support.hpp"

using namespace teamfusion;
using namespace tf_test;

namespace {

SessionService::BackendFactory scripted_factory() {
  return [](const std::string&) {
    auto gw = std::make_shared<ModelGateway>(scripted_config());
    return SessionBackendSet{gw, gw};
  };
}

// Holds the first call of each armed phase until `release_after` other
// attempts have been rejected.
class GatedChat : public ChatBackend {
 public:
  std::atomic<bool> armed{false};
  std::atomic<int> rejected{0};
  int release_after = 0;

  ChatResponse chat(const ChatCall& call) override {
    if (armed.exchange(false)) {
      while (rejected.load() < release_after) std::this_thread::yield();
    }
    return {synthetic_response(call, 0), std::nullopt};
  }
};

std::string create_design(SessionService& svc, std::string id = "design-1") {
  return svc.create_session(design_context(), designers(3), SessionConfig::design_defaults(), id);
}

}  // namespace

TEST(Create, ValidatesInputs) {
  TempDir dir;
  SessionService svc(dir.path(), scripted_factory());
  auto cfg = SessionConfig::deliberation_defaults();
  EXPECT_THROW(svc.create_session(deliberation_context(), {}, cfg), ValidationFailed);
  auto dup = commenters(2);
  dup[1].participant_id = dup[0].participant_id;
  EXPECT_THROW(svc.create_session(deliberation_context(), dup, cfg), ValidationFailed);
  auto reserved = commenters(1);
  reserved[0].display_name = "moderator";
  EXPECT_THROW(svc.create_session(deliberation_context(), reserved, cfg), ValidationFailed);
  EXPECT_THROW(svc.create_session(deliberation_context(), commenters(2), cfg, "../escape"), ValidationFailed);

  auto narrow = SessionConfig::design_defaults();
  narrow.narrowing_schedule = {3, 3};
  EXPECT_THROW(svc.create_session(design_context(), designers(2), narrow), ValidationFailed);
  narrow.narrowing_schedule = {7};
  EXPECT_THROW(svc.create_session(design_context(), designers(2), narrow), ValidationFailed);

  try {
    svc.create_session(design_context(), {designer("d", "D", {1, 1, 2, 3, 4, 5})}, SessionConfig::design_defaults());
    FAIL();
  } catch (const ValidationFailed& e) {
    EXPECT_NE(std::string(e.what()).find("permutation"), std::string::npos);
  }
  EXPECT_TRUE(svc.list().empty());

  auto id = svc.create_session(deliberation_context(), commenters(2), cfg);
  EXPECT_EQ(svc.summary(id).phase, Phase::created);
  EXPECT_THROW(svc.create_session(deliberation_context(), commenters(2), cfg, id), ValidationFailed);
  EXPECT_THROW(svc.summary("nope"), NotFound);
}

TEST(Advance, DesignLifecycle) {
  TempDir dir;
  SessionService svc(dir.path(), scripted_factory());
  auto id = create_design(svc);
  EXPECT_THROW(svc.advance(id, true), WrongPhase);

  auto v = svc.advance(id);
  EXPECT_EQ(v.phase, Phase::awaiting_critique);
  EXPECT_EQ(v.deliverable_count, 1u);
  EXPECT_EQ(svc.get(id).active_options.size(), 4u);

  svc.advance(id);
  v = svc.advance(id);
  EXPECT_EQ(v.iteration, 2u);
  EXPECT_EQ(svc.get(id).active_options.size(), 4u);
  v = svc.advance(id);
  EXPECT_EQ(v.phase, Phase::finished);
  EXPECT_TRUE(svc.get(id).final_pick);
  EXPECT_THROW(svc.advance(id), IllegalTransition);
}

TEST(Advance, FinishEarly) {
  TempDir dir;
  SessionService svc(dir.path(), scripted_factory());
  auto id = create_design(svc);
  svc.advance(id);
  auto v = svc.advance(id, true);
  EXPECT_EQ(v.phase, Phase::finished);
  EXPECT_EQ(v.deliverable_count, 1u);
}

TEST(Critique, ValidationAndPhase) {
  TempDir dir;
  SessionService svc(dir.path(), scripted_factory());
  auto id = create_design(svc);
  EXPECT_THROW(svc.submit_critique({id, "d1", "x"}), WrongPhase);
  svc.advance(id);
  EXPECT_THROW(svc.submit_critique({id, "ghost", "x"}), UnknownParticipant);
  EXPECT_THROW(svc.submit_critique({id, "d1", "  "}), ValidationFailed);
  EXPECT_THROW(svc.submit_critique({"missing", "d1", "x"}), NotFound);
}

TEST(Critique, AppearsInNextIterationTranscript) {
  TempDir dir;
  SessionService svc(dir.path(), scripted_factory());
  auto id = create_design(svc);
  svc.advance(id);
  svc.submit_critique({id, "d2", "Make the logo larger."});
  // Read-your-writes before the next advance.
  ASSERT_EQ(svc.get(id).pending_critiques.size(), 1u);
  const auto seq_before = svc.get(id).transcript.messages().back().seq;

  svc.advance(id);
  auto fresh = svc.get_transcript(id, static_cast<std::int64_t>(seq_before));
  auto it = std::find_if(fresh.begin(), fresh.end(), [](const Message& m) { return m.role == Role::human_critique; });
  ASSERT_NE(it, fresh.end());
  EXPECT_EQ(it->content, "Make the logo larger.");
  EXPECT_EQ(it->speaker, "Designer 2");
  EXPECT_EQ(it->iteration, 1u);
  EXPECT_TRUE(svc.get(id).pending_critiques.empty());
}

TEST(Concurrency, ExactlyOneAdvancePerPhase) {
  TempDir dir;
  auto gated = std::make_shared<GatedChat>();
  gated->release_after = 99;
  SessionService svc(dir.path(), [gated](const std::string&) {
    auto stub = std::make_shared<ModelGateway>(scripted_config());
    return SessionBackendSet{gated, stub};
  });
  auto id = create_design(svc);

  for (int phase = 0; phase < 4; ++phase) {
    gated->rejected = 0;
    gated->armed = true;
    std::atomic<int> ok{0};
    std::atomic<int> other{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 100; ++t) {
      threads.emplace_back([&] {
        try {
          svc.advance(id);
          ++ok;
        } catch (const Busy&) {
          ++gated->rejected;
        } catch (...) {
          ++other;
        }
      });
    }
    for (auto& t : threads) t.join();
    EXPECT_EQ(ok.load(), 1) << "phase " << phase;
    EXPECT_EQ(gated->rejected.load(), 99) << "phase " << phase;
    EXPECT_EQ(other.load(), 0);
    // Reads never block and always see a committed state.
    EXPECT_EQ(svc.get(id).deliverables.size(), static_cast<std::size_t>(std::min(phase + 1, 3)));
  }
  EXPECT_EQ(svc.summary(id).phase, Phase::finished);
}

TEST(Concurrency, ReadersDuringAdvanceSeeConsistentSnapshots) {
  TempDir dir;
  SessionService svc(dir.path(), scripted_factory());
  auto id = create_design(svc);
  std::atomic<bool> stop{false};
  std::atomic<int> bad{0};
  std::thread reader([&] {
    while (!stop) {
      auto s = svc.get(id);
      if (s.phase == Phase::awaiting_critique && s.deliverables.size() != s.iteration + 1) ++bad;
      for (std::size_t i = 0; i < s.transcript.size(); ++i) {
        if (s.transcript.messages()[i].seq != i) ++bad;
      }
    }
  });
  for (int i = 0; i < 4; ++i) svc.advance(id);
  stop = true;
  reader.join();
  EXPECT_EQ(bad.load(), 0);
}

TEST(Recovery, ReloadsCommittedSessions) {
  TempDir dir;
  SessionState committed;
  {
    SessionService svc(dir.path(), scripted_factory());
    auto id = create_design(svc);
    svc.advance(id);
    svc.submit_critique({id, "d1", "warmer colors"});
    committed = svc.get(id);
  }
  SessionService again(dir.path(), scripted_factory());
  EXPECT_EQ(again.get("design-1"), committed);
  EXPECT_EQ(again.list(), std::vector<std::string>{"design-1"});
  again.advance("design-1");
  EXPECT_EQ(again.get("design-1").iteration, 1u);
}

TEST(Recovery, TornWritesAreIgnoredOrRepaired) {
  TempDir dir;
  SessionState committed;
  {
    SessionService svc(dir.path(), scripted_factory());
    svc.advance(create_design(svc));
    committed = svc.get("design-1");
  }
  SessionStore store(dir.path());
  // A crash mid-write leaves a partial temp document and stray transcript lines.
  std::ofstream(store.document_path("design-1").string() + ".tmp") << "{\"session_id\": \"design-1\", \"pha";
  {
    std::ofstream jsonl(store.transcript_path("design-1"), std::ios::app);
    jsonl << "{\"seq\":999,\"speaker\":\"x\",\"role\":\"proxy\",\"content\":\"uncommitted\",\"iteration\":1}\n";
  }
  SessionService again(dir.path(), scripted_factory());
  EXPECT_EQ(again.get("design-1"), committed);
  const auto jsonl = slurp(store.transcript_path("design-1"));
  EXPECT_EQ(jsonl.find("uncommitted"), std::string::npos);
  EXPECT_EQ(static_cast<std::size_t>(std::count(jsonl.begin(), jsonl.end(), '\n')), committed.transcript.size());
}

TEST(Recovery, ProcessKilledMidAdvance) {
  TempDir dir;
  const auto marker = dir / "in-flight";
  pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    // Child: commit one round, then hang inside the next one.
    std::size_t calls = 0;
    SessionService svc(dir.path(), [&](const std::string&) {
      auto hang = std::make_shared<FnBackend>([&, marker](const ChatCall& c, std::size_t i) {
        if (++calls > 9) {
          std::ofstream(marker) << "x";
          for (;;) pause();
        }
        return synthetic_response(c, i);
      });
      return SessionBackendSet{hang, std::make_shared<ModelGateway>(scripted_config())};
    });
    auto id = create_design(svc);
    svc.advance(id);
    svc.advance(id);
    _exit(0);
  }
  for (int i = 0; i < 2000 && !std::filesystem::exists(marker); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ASSERT_TRUE(std::filesystem::exists(marker));
  kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);
  ASSERT_TRUE(WIFSIGNALED(status));

  SessionService svc(dir.path(), scripted_factory());
  auto s = svc.get("design-1");
  EXPECT_EQ(s.phase, Phase::awaiting_critique);
  EXPECT_EQ(s.iteration, 0u);
  EXPECT_EQ(s.deliverables.size(), 1u);
  auto v = svc.advance("design-1");
  EXPECT_EQ(v.iteration, 1u);
  EXPECT_EQ(v.deliverable_count, 2u);
}

TEST(Recovery, PartialDiscussionIsCommittedAndResumed) {
  TempDir dir;
  std::atomic<bool> fail{true};
  SessionService svc(dir.path(), [&](const std::string&) {
    auto b = std::make_shared<FnBackend>([&](const ChatCall& c, std::size_t i) -> std::string {
      if (i == 2 && fail.exchange(false)) throw std::runtime_error("timeout");
      return synthetic_response(c, i);
    });
    return SessionBackendSet{b, nullptr};
  });
  auto id = svc.create_session(deliberation_context(), commenters(4), SessionConfig::deliberation_defaults());
  EXPECT_THROW(svc.advance(id), BackendFailure);
  EXPECT_EQ(svc.get(id).phase, Phase::discussing);
  EXPECT_EQ(svc.get(id).transcript.size(), 2u);
  auto v = svc.advance(id);
  EXPECT_EQ(v.phase, Phase::awaiting_critique);
  EXPECT_EQ(svc.get(id).transcript.size(), 4u);
}

TEST(Http, StatusMapping) {
  EXPECT_EQ(http_status_for("NotFound"), 404);
  EXPECT_EQ(http_status_for("ValidationFailed"), 422);
  EXPECT_EQ(http_status_for("Busy"), 409);
  EXPECT_EQ(http_status_for("WrongPhase"), 409);
  EXPECT_EQ(http_status_for("ParseError"), 400);
  EXPECT_EQ(http_status_for("BackendFailure"), 502);
  EXPECT_EQ(http_status_for("Timeout"), 504);
  EXPECT_EQ(http_status_for("Whatever"), 500);
}

TEST(Http, Routes) {
  TempDir dir;
  SessionService svc(dir.path(), scripted_factory());
  httplib::Server server;
  register_routes(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  json body = {{"session_id", "web-1"},
               {"context", design_context()},
               {"participants", designers(3)},
               {"config", {{"turns_per_agent", 1}}}};
  auto r = cli.Post("/sessions", body.dump(), "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 201);
  EXPECT_EQ(json::parse(r->body)["phase"], "created");
  EXPECT_EQ(svc.get("web-1").config.turns_per_agent, 1u);
  EXPECT_EQ(svc.get("web-1").config.narrowing_schedule, (std::vector<unsigned>{3, 2}));

  r = cli.Post("/sessions", json{{"context", design_context()}, {"participants", json::array()}}.dump(),
               "application/json");
  EXPECT_EQ(r->status, 422);
  EXPECT_EQ(json::parse(r->body)["error"]["code"], "ValidationFailed");
  r = cli.Post("/sessions", "{not json", "application/json");
  EXPECT_EQ(r->status, 400);

  r = cli.Post("/sessions/web-1/critiques", json{{"participant_id", "d1"}, {"text", "x"}}.dump(), "application/json");
  EXPECT_EQ(r->status, 409);

  r = cli.Post("/sessions/web-1/advance", "", "application/json");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body)["phase"], "awaiting_critique");

  r = cli.Post("/sessions/web-1/critiques", json{{"participant_id", "d1"}, {"text", "bigger logo"}}.dump(),
               "application/json");
  EXPECT_EQ(r->status, 202);
  r = cli.Post("/sessions/web-1/critiques", json{{"participant_id", "zz"}, {"text", "x"}}.dump(), "application/json");
  EXPECT_EQ(r->status, 422);

  r = cli.Get("/sessions/web-1");
  ASSERT_EQ(r->status, 200);
  json detail = json::parse(r->body);
  EXPECT_EQ(detail["pending_critiques"].size(), 1u);
  EXPECT_EQ(detail["active_options"].size(), 4u);

  r = cli.Get("/sessions/web-1/transcript?since=2");
  json tr = json::parse(r->body);
  EXPECT_EQ(tr["messages"][0]["seq"], 3);
  r = cli.Get("/sessions/web-1/transcript?since=abc");
  EXPECT_EQ(r->status, 400);

  r = cli.Get("/sessions/web-1/deliverables");
  EXPECT_EQ(json::parse(r->body)["deliverables"].size(), 1u);

  r = cli.Post("/sessions/web-1/advance", json{{"finish", true}}.dump(), "application/json");
  EXPECT_EQ(json::parse(r->body)["phase"], "finished");
  r = cli.Post("/sessions/web-1/advance", "", "application/json");
  EXPECT_EQ(r->status, 409);

  r = cli.Get("/sessions");
  EXPECT_EQ(json::parse(r->body).size(), 1u);
  r = cli.Get("/sessions/nope");
  EXPECT_EQ(r->status, 404);

  server.stop();
  th.join();
}
