#pragma once

// Discuss phase: a deterministic round-robin over one shared transcript.

#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "teamfusion/core.hpp"
#include "teamfusion/gateway.hpp"
#include "teamfusion/persona.hpp"
#include "teamfusion/templates.hpp"

namespace teamfusion {

inline constexpr std::string_view kModeratorName = "moderator";
inline constexpr std::string_view kRemixerName = "remixer";

struct ScheduleState {
  std::vector<std::string> agent_order;
  std::map<std::string, unsigned> turns_taken;
  unsigned turn_budget = 1;

  unsigned total_turns() const {
    unsigned total = 0;
    for (const auto& [id, n] : turns_taken) total += n;
    return total;
  }
};

// Next agent in the fixed cycle a1..aN, a1..aN, ...; nullopt once every agent
// has spoken turn_budget times.
inline std::optional<std::string> next_speaker(const ScheduleState& sched) {
  std::optional<std::string> best;
  unsigned best_turns = sched.turn_budget;
  for (const auto& agent : sched.agent_order) {
    auto it = sched.turns_taken.find(agent);
    unsigned taken = it == sched.turns_taken.end() ? 0 : it->second;
    if (taken < best_turns) {
      best = agent;
      best_turns = taken;
    }
  }
  return best;
}

inline const TemplateLibrary& builtin_templates() {
  static const TemplateLibrary lib;
  return lib;
}

// Schedule for the current iteration, reconstructed from the transcript so an
// interrupted discussion resumes where it stopped. Agents are keyed by name.
inline ScheduleState schedule_for(const SessionState& state) {
  ScheduleState sched;
  sched.turn_budget = state.config.turns_per_agent;
  for (const auto& p : state.participants) {
    sched.agent_order.push_back(p.name());
    sched.turns_taken[p.name()] = 0;
  }
  for (const auto& m : state.transcript.messages()) {
    if (m.role == Role::proxy && m.iteration == state.iteration) ++sched.turns_taken[m.speaker];
  }
  return sched;
}

inline ChatCall render_agent_call(const PersonaPrompt& persona, const Transcript& transcript,
                                  const SessionConfig& config) {
  ChatCall call;
  call.purpose = CallPurpose::proxy_turn;
  call.speaker = persona.participant_id;
  call.system_prompt = persona.rendered;
  call.history_view = transcript.messages();
  if (config.attach_option_media) call.attachments = persona.attachments;
  call.temperature = config.temperature;
  call.model_id = config.model_id;
  return call;
}

inline std::string render_kickoff(const TaskContext& context, const TemplateLibrary& templates) {
  return fill_placeholders(templates.get(TemplateId::discussion_kickoff).body,
                           {{"brief", context.prompt_text}});
}

// Critiques a participant submitted in earlier rounds, in transcript order.
inline std::vector<std::string> critiques_by(const SessionState& state,
                                             const ParticipantEvidence& p) {
  std::vector<std::string> out;
  for (const auto& m : state.transcript.messages()) {
    if (m.role == Role::human_critique && m.speaker == p.name()) out.push_back(m.content);
  }
  return out;
}

inline PersonaPrompt persona_for(const SessionState& state, const ParticipantEvidence& p,
                                 const TemplateLibrary& templates) {
  const auto id = state.context.kind == TaskKind::design ? TemplateId::design_proxy
                                                         : TemplateId::deliberation_proxy;
  std::vector<std::string> critiques;
  if (state.config.persona_includes_critiques) critiques = critiques_by(state, p);
  return build_persona(p, state.context, templates.get(id), critiques);
}

// Receives one JSON record per proxy turn.
class AuditSink {
 public:
  virtual ~AuditSink() = default;
  virtual void record(const json& entry) = 0;
};

class JsonlAuditSink : public AuditSink {
 public:
  explicit JsonlAuditSink(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::app | std::ios::binary);
    if (!out_) throw ConfigError("cannot open audit log " + path.string());
  }

  void record(const json& entry) override {
    std::lock_guard lock(mu_);
    out_ << entry.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    out_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

// Mixin for errors that leave a session part-way through a step. `partial()`
// is the last consistent state and can be persisted and resumed.
class PartialProgress {
 public:
  explicit PartialProgress(SessionState partial) : partial_(std::move(partial)) {}
  virtual ~PartialProgress() = default;

  const SessionState& partial() const { return partial_; }

 private:
  SessionState partial_;
};

// Thrown when a proxy turn fails; carries the transcript up to the failed turn.
class DiscussionInterrupted : public BackendFailure, public PartialProgress {
 public:
  DiscussionInterrupted(std::size_t turn, std::string cause, SessionState partial)
      : BackendFailure(turn, std::move(cause)), PartialProgress(std::move(partial)) {}
};

// Thrown when the remix step fails after its discussion completed; keeps the
// original error code.
class RemixInterrupted : public Error, public PartialProgress {
 public:
  RemixInterrupted(const Error& cause, SessionState partial)
      : Error(cause.code(), cause.what()), PartialProgress(std::move(partial)) {}
};

// Runs the discussion for the current iteration: kickoff (when enabled), then
// N x turn_budget proxy messages in round-robin order. Ends in `remixing`.
inline SessionState run_discussion(const SessionState& input, ChatBackend& backend,
                                   const TemplateLibrary& templates = builtin_templates(),
                                   AuditSink* audit = nullptr) {
  if (input.phase != Phase::discussing) {
    throw IllegalTransition("run_discussion requires phase discussing, got " +
                            std::string(to_string(input.phase)));
  }
  SessionState state = input;

  if (state.config.kickoff_enabled(state.context.kind)) {
    bool has_kickoff = false;
    for (const auto& m : state.transcript.messages()) {
      has_kickoff |= m.role == Role::system && m.speaker == kModeratorName &&
                     m.iteration == state.iteration;
    }
    if (!has_kickoff) {
      state.transcript.append(std::string(kModeratorName), Role::system,
                              render_kickoff(state.context, templates), state.iteration);
    }
  }

  std::map<std::string, PersonaPrompt> personas;
  for (const auto& p : state.participants) personas.emplace(p.name(), persona_for(state, p, templates));

  ScheduleState sched = schedule_for(state);
  while (auto speaker = next_speaker(sched)) {
    const std::size_t turn = sched.total_turns() + 1;
    ChatCall call = render_agent_call(personas.at(*speaker), state.transcript, state.config);
    auto started = std::chrono::steady_clock::now();
    ChatResponse response;
    try {
      response = backend.chat(call);
    } catch (const std::exception& e) {
      throw DiscussionInterrupted(turn, e.what(), state);
    }
    if (response.text.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw DiscussionInterrupted(turn, "empty response", state);
    }
    const auto& msg =
        state.transcript.append(*speaker, Role::proxy, std::move(response.text), state.iteration);
    ++sched.turns_taken[*speaker];

    if (audit) {
      auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - started)
                         .count();
      json rec{{"session_id", state.session_id},
               {"seq", msg.seq},
               {"speaker", msg.speaker},
               {"iteration", msg.iteration},
               {"latency_ms", latency}};
      if (response.usage) {
        rec["prompt_tokens"] = response.usage->prompt_tokens;
        rec["completion_tokens"] = response.usage->completion_tokens;
      }
      audit->record(rec);
    }
  }
  return transition(state, SessionEvent::DiscussionExhausted);
}

}  // namespace teamfusion
