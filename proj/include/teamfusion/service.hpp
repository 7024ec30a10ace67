#pragma once

// Live-session service: file-backed sessions advanced by at most one driver at
// a time, plus the HTTP+JSON routes that expose them.

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <httplib.h>

#include "teamfusion/core.hpp"
#include "teamfusion/gateway.hpp"
#include "teamfusion/harness.hpp"
#include "teamfusion/session.hpp"
#include "teamfusion/store.hpp"

namespace teamfusion {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct SessionSummaryView {
  std::string session_id;
  Phase phase = Phase::created;
  unsigned iteration = 0;
  std::size_t deliverable_count = 0;
  std::vector<std::string> participants;
  std::string last_update;
};

inline void to_json(json& j, const SessionSummaryView& v) {
  j = json{{"session_id", v.session_id},
           {"phase", v.phase},
           {"iteration", v.iteration},
           {"deliverable_count", v.deliverable_count},
           {"participants", v.participants},
           {"last_update", v.last_update}};
}

struct CritiqueSubmission {
  std::string session_id;
  std::string participant_id;
  std::string text;
};

// Rejects everything create_session would not accept; empty when valid.
inline std::vector<std::string> session_violations(const TaskContext& context,
                                                   const std::vector<ParticipantEvidence>& participants,
                                                   const SessionConfig& config) {
  std::vector<std::string> out = validate_context(context).violations;
  if (participants.empty()) out.emplace_back("at least one participant is required");
  std::set<std::string> ids;
  std::set<std::string> names;
  for (const auto& p : participants) {
    if (!ids.insert(p.participant_id).second) {
      out.push_back("duplicate participant_id " + p.participant_id);
    }
    if (!names.insert(p.name()).second) out.push_back("duplicate display name " + p.name());
    if (p.name() == kModeratorName || p.name() == kRemixerName) {
      out.push_back("display name " + p.name() + " is reserved");
    }
    for (const auto& v : validate_evidence(p, context).violations) {
      out.push_back(p.participant_id + ": " + v);
    }
  }
  for (const auto& v : config_violations(config)) out.push_back(v);
  if (context.kind == TaskKind::design) {
    std::size_t active = context.options.size();
    for (std::size_t i = 0; i < config.narrowing_schedule.size() && i < config.max_iterations; ++i) {
      if (config.narrowing_schedule[i] > active) {
        out.push_back("narrowing_schedule[" + std::to_string(i) + "] exceeds the " +
                      std::to_string(active) + " options active at that iteration");
        break;
      }
      active = config.narrowing_schedule[i] + 1;
    }
  }
  return out;
}

class SessionService {
 public:
  using BackendFactory = std::function<SessionBackendSet(const std::string& session_id)>;

  // Loads every committed session under `root`.
  SessionService(std::filesystem::path root, BackendFactory backends,
                 const TemplateLibrary* templates = nullptr)
      : store_(std::move(root)), backends_(std::move(backends)), templates_(templates) {
    for (const auto& id : store_.list()) {
      if (auto s = store_.load(id)) install(std::move(*s));
    }
  }

  const SessionStore& store() const { return store_; }

  std::string create_session(TaskContext context, std::vector<ParticipantEvidence> participants,
                             SessionConfig config, std::string requested_id = {}) {
    auto problems = session_violations(context, participants, config);
    if (!requested_id.empty() && !valid_session_id(requested_id)) {
      problems.push_back("invalid session_id " + requested_id);
    }
    if (!problems.empty()) {
      std::string msg;
      for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
      throw ValidationFailed(msg);
    }
    std::unique_lock lock(registry_mu_);
    std::string id = requested_id.empty() ? fresh_id() : requested_id;
    if (sessions_.count(id)) throw ValidationFailed("session_id " + id + " already exists");
    SessionState state = make_session(id, std::move(context), std::move(participants), std::move(config));
    store_.save(state);
    auto entry = std::make_shared<Entry>();
    publish(*entry, std::move(state));
    sessions_.emplace(id, std::move(entry));
    return id;
  }

  // Runs one step: a full round (discussion then remix) from created or from
  // awaiting_critique, the rest of an interrupted round, or finalization once
  // the iteration cap is reached or `finish` is requested.
  SessionSummaryView advance(const std::string& session_id, bool finish = false) {
    auto entry = find(session_id);
    std::unique_lock driver(entry->driver, std::try_to_lock);
    if (!driver.owns_lock()) throw Busy("session " + session_id + " is being advanced");
    SessionState state = *snapshot(*entry);
    if (state.phase == Phase::finished) {
      throw IllegalTransition("session " + session_id + " is finished");
    }
    if (finish && state.phase != Phase::awaiting_critique) {
      throw WrongPhase("finish requires phase awaiting_critique, got " +
                       std::string(to_string(state.phase)));
    }
    SessionBackendSet set = backends_(session_id);
    Backends b{set.chat.get(), set.image.get(), templates_, nullptr};
    try {
      if (state.phase == Phase::awaiting_critique &&
          (finish || state.iteration + 1 >= state.config.max_iterations)) {
        state = finalize_session(state, b);
      } else {
        state = run_round(state, b);
      }
    } catch (const PartialProgress& p) {
      commit(*entry, p.partial());
      throw;
    }
    commit(*entry, std::move(state));
    return view(*entry);
  }

  void submit_critique(const CritiqueSubmission& sub) {
    auto entry = find(sub.session_id);
    std::unique_lock driver(entry->driver, std::try_to_lock);
    if (!driver.owns_lock()) throw Busy("session " + sub.session_id + " is being advanced");
    SessionState state = *snapshot(*entry);
    if (state.phase != Phase::awaiting_critique) {
      throw WrongPhase("critiques are accepted in awaiting_critique, session is " +
                       std::string(to_string(state.phase)));
    }
    if (!state.find_participant(sub.participant_id)) {
      throw UnknownParticipant("unknown participant " + sub.participant_id);
    }
    if (sub.text.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw ValidationFailed("critique text is empty");
    }
    state.pending_critiques.push_back({sub.participant_id, sub.text, utc_timestamp()});
    commit(*entry, std::move(state));
  }

  SessionState get(const std::string& session_id) const { return *snapshot(*find(session_id)); }

  SessionSummaryView summary(const std::string& session_id) const { return view(*find(session_id)); }

  std::vector<Message> get_transcript(const std::string& session_id, std::int64_t since_seq) const {
    return snapshot(*find(session_id))->transcript.since(since_seq);
  }

  std::vector<Deliverable> deliverables(const std::string& session_id) const {
    return snapshot(*find(session_id))->deliverables;
  }

  std::vector<std::string> list() const {
    std::shared_lock lock(registry_mu_);
    std::vector<std::string> out;
    for (const auto& [id, e] : sessions_) out.push_back(id);
    return out;
  }

 private:
  struct Entry {
    std::mutex driver;
    std::shared_ptr<const SessionState> state;
    std::shared_ptr<const std::string> last_update;
  };

  static std::shared_ptr<const SessionState> snapshot(const Entry& e) {
    return std::atomic_load(&e.state);
  }

  static void publish(Entry& e, SessionState s) {
    std::atomic_store(&e.state, std::shared_ptr<const SessionState>(
                                    std::make_shared<SessionState>(std::move(s))));
    std::atomic_store(&e.last_update,
                      std::shared_ptr<const std::string>(std::make_shared<std::string>(utc_timestamp())));
  }

  void commit(Entry& e, SessionState s) {
    store_.save(s);
    publish(e, std::move(s));
  }

  static SessionSummaryView view(const Entry& e) {
    auto s = snapshot(e);
    SessionSummaryView v;
    v.session_id = s->session_id;
    v.phase = s->phase;
    v.iteration = s->iteration;
    v.deliverable_count = s->deliverables.size();
    for (const auto& p : s->participants) v.participants.push_back(p.name());
    v.last_update = *std::atomic_load(&e.last_update);
    return v;
  }

  void install(SessionState s) {
    auto entry = std::make_shared<Entry>();
    std::string id = s.session_id;
    publish(*entry, std::move(s));
    sessions_.emplace(std::move(id), std::move(entry));
  }

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::shared_lock lock(registry_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("no session " + id);
    return it->second;
  }

  std::string fresh_id() {
    for (;;) {
      std::string id = "s-" + std::to_string(sessions_.size() + 1) + "-" +
                       sha256_hex(std::to_string(id_rng_()) + utc_timestamp()).substr(0, 8);
      if (!sessions_.count(id) && !store_.exists(id)) return id;
    }
  }

  SessionStore store_;
  BackendFactory backends_;
  const TemplateLibrary* templates_;
  mutable std::shared_mutex registry_mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::mt19937_64 id_rng_{std::random_device{}()};
};

// ---------------------------------------------------------------------------
// HTTP

inline int http_status_for(const std::string& code) {
  static const std::map<std::string, int> kStatus{
      {"NotFound", 404},          {"ValidationFailed", 422}, {"UnknownParticipant", 422},
      {"Busy", 409},              {"WrongPhase", 409},       {"IllegalTransition", 409},
      {"ParseError", 400},        {"SchemaViolation", 400},  {"InvalidArgument", 400},
      {"BackendFailure", 502},    {"HttpError", 502},        {"Timeout", 504},
      {"TapeMismatch", 502},      {"TapeExhausted", 502},    {"NoJsonFound", 502},
      {"UnknownOption", 502},     {"EmptyResponse", 502},    {"KTooLarge", 500},
  };
  auto it = kStatus.find(code);
  return it == kStatus.end() ? 500 : it->second;
}

inline void send_error(httplib::Response& res, const std::string& code, const std::string& message) {
  res.status = http_status_for(code);
  res.set_content(json{{"error", {{"code", code}, {"message", message}}}}.dump(),
                  "application/json");
}

inline void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, e.code(), e.what());
  } catch (const json::exception& e) {
    send_error(res, "ParseError", e.what());
  } catch (const std::exception& e) {
    send_error(res, "InternalError", e.what());
  }
}

inline json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ParseError("request body must be a JSON object");
  return j;
}

// Registers the session routes on `server`:
//   POST /sessions                       {context, participants, config?, session_id?}
//   POST /sessions/{id}/advance          {finish?}
//   POST /sessions/{id}/critiques        {participant_id, text}
//   GET  /sessions/{id}
//   GET  /sessions/{id}/transcript?since=<seq>
//   GET  /sessions/{id}/deliverables
inline void register_routes(httplib::Server& server, SessionService& service) {
  server.Get("/sessions", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      json arr = json::array();
      for (const auto& id : service.list()) arr.push_back(service.summary(id));
      send_json(res, arr);
    });
  });

  server.Post("/sessions", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body = parse_body(req);
      TaskContext context = body.at("context").get<TaskContext>();
      auto participants = body.at("participants").get<std::vector<ParticipantEvidence>>();
      SessionConfig config = context.kind == TaskKind::design ? SessionConfig::design_defaults()
                                                               : SessionConfig::deliberation_defaults();
      if (body.contains("config")) {
        json merged = config;
        merged.update(body["config"]);
        config = merged.get<SessionConfig>();
      }
      std::string id = service.create_session(std::move(context), std::move(participants),
                                              std::move(config), body.value("session_id", ""));
      send_json(res, service.summary(id), 201);
    });
  });

  server.Post(R"(/sessions/([^/]+)/advance)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body = parse_body(req);
      send_json(res, service.advance(req.matches[1], body.value("finish", false)));
    });
  });

  server.Post(R"(/sessions/([^/]+)/critiques)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body = parse_body(req);
      CritiqueSubmission sub{req.matches[1], body.value("participant_id", ""), body.value("text", "")};
      service.submit_critique(sub);
      send_json(res, json{{"accepted", true}, {"session", service.summary(sub.session_id)}}, 202);
    });
  });

  server.Get(R"(/sessions/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json out = service.summary(req.matches[1]);
      SessionState s = service.get(req.matches[1]);
      out["active_options"] = s.active_options;
      out["pending_critiques"] = s.pending_critiques;
      out["final_pick"] = s.final_pick ? json(*s.final_pick) : json(nullptr);
      out["kind"] = s.context.kind;
      send_json(res, out);
    });
  });

  server.Get(R"(/sessions/([^/]+)/transcript)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::int64_t since = -1;
      if (req.has_param("since")) {
        try {
          since = std::stoll(req.get_param_value("since"));
        } catch (const std::exception&) {
          throw InvalidArgument("since must be an integer");
        }
      }
      send_json(res, json{{"messages", service.get_transcript(req.matches[1], since)}});
    });
  });

  server.Get(R"(/sessions/([^/]+)/deliverables)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, json{{"deliverables", service.deliverables(req.matches[1])}}); });
  });
}

}  // namespace teamfusion
