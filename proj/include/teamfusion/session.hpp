#pragma once

// Drives a session through discuss -> remix -> (critique -> discuss ...) ->
// finish, composing the orchestrator and remix steps.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "teamfusion/core.hpp"
#include "teamfusion/gateway.hpp"
#include "teamfusion/orchestrator.hpp"
#include "teamfusion/remix.hpp"

namespace teamfusion {

struct Backends {
  ChatBackend* chat = nullptr;
  ImageBackend* image = nullptr;
  const TemplateLibrary* templates = nullptr;
  AuditSink* audit = nullptr;

  const TemplateLibrary& tmpl() const { return templates ? *templates : builtin_templates(); }
};

inline RemixRequest remix_request_for(const SessionState& state) {
  RemixRequest req;
  req.context = state.context;
  for (const auto& p : state.participants) {
    if (p.comment_text) req.comments.push_back(*p.comment_text);
  }
  req.transcript = state.transcript;
  req.active_options = state.active_options;
  req.iteration = state.iteration;
  req.temperature = state.config.temperature;
  req.model_id = state.config.model_id;
  req.attach_option_media = state.config.attach_option_media;
  return req;
}

// Top-k kept after `iteration`; nullopt once the schedule is used up, in which
// case every active option stays.
inline std::optional<std::size_t> narrowing_k(const SessionConfig& config, unsigned iteration) {
  if (iteration < config.narrowing_schedule.size()) return config.narrowing_schedule[iteration];
  return std::nullopt;
}

// Remix phase: forms the deliverable for the current iteration, narrows the
// option set (design kind) and moves to awaiting_critique.
inline SessionState run_remix(const SessionState& input, const Backends& b) {
  if (input.phase != Phase::remixing) {
    throw IllegalTransition("run_remix requires phase remixing, got " +
                            std::string(to_string(input.phase)));
  }
  SessionState state = input;
  const RemixRequest req = remix_request_for(state);
  if (state.context.kind == TaskKind::design) {
    Deliverable d =
        remix_design(req, *b.chat, b.image, next_option_number(state), b.tmpl());
    DesignRemixOutput out{*d.final_ranking, *d.editing_directions};
    if (auto k = narrowing_k(state.config, state.iteration)) {
      state.active_options = narrow_options(state.active_options, out, d.generated_option, *k);
    } else if (d.generated_option) {
      state.active_options.push_back(*d.generated_option);
    }
    state.deliverables.push_back(std::move(d));
  } else {
    state.deliverables.push_back(remix_summary(req, *b.chat, b.tmpl()));
  }
  return transition(state, SessionEvent::RemixCompleted);
}

// Closes the session. Design sessions take one more remix call over the
// remaining options and keep its top-ranked option as the final pick.
inline SessionState finalize_session(const SessionState& input, const Backends& b) {
  SessionState state = transition(input, SessionEvent::Finish);
  if (state.context.kind == TaskKind::design && !state.active_options.empty()) {
    ChatResponse r = detail::call_backend(
        *b.chat, design_remix_call(remix_request_for(state), b.tmpl(), CallPurpose::final_pick));
    DesignRemixOutput out = parse_design_remix(r.text, state.active_options);
    const int best = out.final_ranking.front().option_number;
    for (const auto& o : state.active_options) {
      if (o.option_number == best) state.final_pick = o;
    }
  }
  return state;
}

// Critique messages for re-entry, from the session's pending critiques.
inline std::vector<Message> pending_critique_messages(const SessionState& state) {
  std::vector<Message> out;
  for (const auto& c : state.pending_critiques) {
    const auto* p = state.find_participant(c.participant_id);
    Message m;
    m.speaker = p ? p->name() : c.participant_id;
    m.role = Role::human_critique;
    m.content = c.text;
    out.push_back(std::move(m));
  }
  return out;
}

// Continues the current round from whatever phase it is in (created,
// discussing, remixing or awaiting_critique) until its deliverable exists.
inline SessionState run_round(const SessionState& input, const Backends& b) {
  SessionState state = input;
  if (state.phase == Phase::created) {
    state = transition(state, SessionEvent::StartDiscussion);
  } else if (state.phase == Phase::awaiting_critique) {
    state = reenter_deliverable(state, state.deliverables.back(),
                                pending_critique_messages(state));
  }
  if (state.phase == Phase::discussing) state = run_discussion(state, *b.chat, b.tmpl(), b.audit);
  if (state.phase == Phase::remixing) {
    try {
      state = run_remix(state, b);
    } catch (const PartialProgress&) {
      throw;
    } catch (const Error& e) {
      throw RemixInterrupted(e, state);
    }
  }
  return state;
}

// Critiques to inject when re-entering after round `iteration` completes.
using CritiqueSource = std::function<std::vector<Critique>(const SessionState&)>;

// Runs every round up to max_iterations and finishes the session.
inline SessionState run_to_completion(const SessionState& input, const Backends& b,
                                      const CritiqueSource& critiques = {}) {
  SessionState state = input;
  while (state.phase != Phase::finished) {
    if (state.phase == Phase::awaiting_critique) {
      if (state.iteration + 1 >= state.config.max_iterations) {
        state = finalize_session(state, b);
        break;
      }
      if (critiques) {
        for (auto& c : critiques(state)) state.pending_critiques.push_back(std::move(c));
      }
    }
    state = run_round(state, b);
  }
  return state;
}

// Human critiques recorded in a transcript, grouped by the iteration they
// were injected into.
inline std::map<unsigned, std::vector<Critique>> recorded_critiques(const SessionState& state) {
  std::map<unsigned, std::vector<Critique>> out;
  for (const auto& m : state.transcript.messages()) {
    if (m.role != Role::human_critique) continue;
    std::string id = m.speaker;
    for (const auto& p : state.participants) {
      if (p.name() == m.speaker) id = p.participant_id;
    }
    out[m.iteration].push_back({id, m.content, ""});
  }
  return out;
}

// Re-executes a stored session from its inputs, re-injecting its recorded
// critiques, up to the last deliverable the stored session completed.
inline SessionState rerun_session(const SessionState& stored, const Backends& b) {
  SessionState state =
      make_session(stored.session_id, stored.context, stored.participants, stored.config);
  const auto critiques = recorded_critiques(stored);
  while (state.deliverables.size() < stored.deliverables.size()) {
    if (state.phase == Phase::awaiting_critique) {
      auto it = critiques.find(state.iteration + 1);
      if (it != critiques.end()) {
        for (const auto& c : it->second) state.pending_critiques.push_back(c);
      }
    }
    state = run_round(state, b);
  }
  if (stored.phase == Phase::finished && state.phase != Phase::finished) {
    state = finalize_session(state, b);
  }
  state.pending_critiques = stored.pending_critiques;
  return state;
}

}  // namespace teamfusion
