#pragma once

// Domain types and the session state machine shared by every other module.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "teamfusion/errors.hpp"

namespace teamfusion {

using json = nlohmann::json;

enum class TaskKind { open_qa, binary_qa, design };

NLOHMANN_JSON_SERIALIZE_ENUM(TaskKind, {{TaskKind::open_qa, "open_qa"},
                                        {TaskKind::binary_qa, "binary_qa"},
                                        {TaskKind::design, "design"}})

inline bool is_deliberation(TaskKind kind) { return kind != TaskKind::design; }

struct OptionRef {
  int option_number = 0;
  std::string media_uri;
  // Set for options produced by the remix phase; 1-based round number.
  std::optional<unsigned> remixed_in;

  bool is_remixed() const { return remixed_in.has_value(); }
  friend bool operator==(const OptionRef&, const OptionRef&) = default;
};

inline void to_json(json& j, const OptionRef& o) {
  j = json{{"option_number", o.option_number}, {"media_uri", o.media_uri}};
  if (o.remixed_in) {
    j["origin"] = json{{"kind", "remixed"}, {"iteration", *o.remixed_in}};
  } else {
    j["origin"] = json{{"kind", "seed"}};
  }
}

inline void from_json(const json& j, OptionRef& o) {
  o.option_number = j.at("option_number").get<int>();
  o.media_uri = j.value("media_uri", "");
  o.remixed_in.reset();
  if (j.contains("origin") && j["origin"].value("kind", "seed") == "remixed") {
    o.remixed_in = j["origin"].at("iteration").get<unsigned>();
  }
}

struct TaskContext {
  std::string context_id;
  TaskKind kind = TaskKind::open_qa;
  std::string prompt_text;
  std::vector<OptionRef> options;

  friend bool operator==(const TaskContext&, const TaskContext&) = default;
};

inline void to_json(json& j, const TaskContext& c) {
  j = json{{"context_id", c.context_id},
           {"kind", c.kind},
           {"prompt_text", c.prompt_text},
           {"options", c.options}};
}

inline void from_json(const json& j, TaskContext& c) {
  c.context_id = j.at("context_id").get<std::string>();
  c.kind = j.at("kind").get<TaskKind>();
  c.prompt_text = j.value("prompt_text", "");
  c.options = j.value("options", std::vector<OptionRef>{});
}

struct Opinion {
  int rank = 0;
  std::string justification;

  friend bool operator==(const Opinion&, const Opinion&) = default;
};

struct ParticipantEvidence {
  std::string participant_id;
  std::string display_name;
  std::optional<std::string> comment_text;
  // option_number -> opinion
  std::optional<std::map<int, Opinion>> option_opinions;
  std::optional<std::string> cluster_label;

  const std::string& name() const {
    return display_name.empty() ? participant_id : display_name;
  }
  friend bool operator==(const ParticipantEvidence&, const ParticipantEvidence&) = default;
};

inline void to_json(json& j, const ParticipantEvidence& e) {
  j = json{{"participant_id", e.participant_id}, {"display_name", e.display_name}};
  if (e.comment_text) j["comment_text"] = *e.comment_text;
  if (e.option_opinions) {
    json ops = json::object();
    for (const auto& [n, op] : *e.option_opinions) {
      ops[std::to_string(n)] = json{{"rank", op.rank}, {"justification", op.justification}};
    }
    j["option_opinions"] = std::move(ops);
  }
  if (e.cluster_label) j["cluster_label"] = *e.cluster_label;
}

namespace detail {

// Accepts 3 or "3".
inline int coerce_int(const json& v, const std::string& path) {
  constexpr double lo = std::numeric_limits<int>::min();
  constexpr double hi = std::numeric_limits<int>::max();
  if (v.is_number_integer() || v.is_number_float()) {
    const double d = v.get<double>();
    if (d >= lo && d <= hi && d == std::floor(d)) return static_cast<int>(d);
    throw SchemaViolation(path, "expected an integer");
  }
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    std::size_t used = 0;
    try {
      int n = std::stoi(s, &used);
      if (used == s.size()) return n;
    } catch (const std::exception&) {
    }
  }
  throw SchemaViolation(path, "expected an integer");
}

}  // namespace detail

inline void from_json(const json& j, ParticipantEvidence& e) {
  e.participant_id = j.at("participant_id").get<std::string>();
  e.display_name = j.value("display_name", "");
  e.comment_text.reset();
  e.option_opinions.reset();
  e.cluster_label.reset();
  if (j.contains("comment_text") && !j["comment_text"].is_null()) {
    e.comment_text = j["comment_text"].get<std::string>();
  }
  if (j.contains("option_opinions") && !j["option_opinions"].is_null()) {
    std::map<int, Opinion> ops;
    for (const auto& [key, val] : j["option_opinions"].items()) {
      int n = detail::coerce_int(json(key), "option_opinions");
      Opinion op;
      op.rank = detail::coerce_int(val.at("rank"), "option_opinions." + key + ".rank");
      op.justification = val.value("justification", "");
      ops[n] = std::move(op);
    }
    e.option_opinions = std::move(ops);
  }
  if (j.contains("cluster_label") && !j["cluster_label"].is_null()) {
    e.cluster_label = j["cluster_label"].get<std::string>();
  }
}

enum class Role { proxy, remix, system, human_critique };

NLOHMANN_JSON_SERIALIZE_ENUM(Role, {{Role::proxy, "proxy"},
                                    {Role::remix, "remix"},
                                    {Role::system, "system"},
                                    {Role::human_critique, "human_critique"}})

struct Message {
  std::uint64_t seq = 0;
  std::string speaker;
  Role role = Role::proxy;
  std::string content;
  unsigned iteration = 0;

  friend bool operator==(const Message&, const Message&) = default;
};

inline void to_json(json& j, const Message& m) {
  j = json{{"seq", m.seq},
           {"speaker", m.speaker},
           {"role", m.role},
           {"content", m.content},
           {"iteration", m.iteration}};
}

inline void from_json(const json& j, Message& m) {
  m.seq = j.at("seq").get<std::uint64_t>();
  m.speaker = j.at("speaker").get<std::string>();
  m.role = j.at("role").get<Role>();
  m.content = j.at("content").get<std::string>();
  m.iteration = j.value("iteration", 0u);
}

// Append-only shared discussion history. Sequence numbers are assigned on
// append and start at 0.
class Transcript {
 public:
  Transcript() = default;

  const Message& append(std::string speaker, Role role, std::string content,
                        unsigned iteration) {
    if (content.empty()) throw InvalidArgument("message content must be nonempty");
    Message m{next_seq(), std::move(speaker), role, std::move(content), iteration};
    messages_.push_back(std::move(m));
    return messages_.back();
  }

  const std::vector<Message>& messages() const { return messages_; }
  std::size_t size() const { return messages_.size(); }
  bool empty() const { return messages_.empty(); }

  std::vector<Message> since(std::int64_t since_seq) const {
    std::vector<Message> out;
    for (const auto& m : messages_) {
      if (static_cast<std::int64_t>(m.seq) > since_seq) out.push_back(m);
    }
    return out;
  }

  // Rebuilds a transcript from stored messages, enforcing the seq invariant.
  static Transcript from_messages(std::vector<Message> messages) {
    for (std::size_t i = 1; i < messages.size(); ++i) {
      if (messages[i].seq <= messages[i - 1].seq) {
        throw InvariantViolation("transcript seq not strictly increasing at index " +
                                 std::to_string(i));
      }
    }
    Transcript t;
    t.messages_ = std::move(messages);
    return t;
  }

  friend bool operator==(const Transcript&, const Transcript&) = default;

 private:
  std::uint64_t next_seq() const {
    return messages_.empty() ? 0 : messages_.back().seq + 1;
  }

  std::vector<Message> messages_;
};

inline void to_json(json& j, const Transcript& t) { j = t.messages(); }
inline void from_json(const json& j, Transcript& t) {
  t = Transcript::from_messages(j.get<std::vector<Message>>());
}

struct RankedOption {
  int rank = 0;
  int option_number = 0;
  std::string reason;

  friend bool operator==(const RankedOption&, const RankedOption&) = default;
};

enum class DeliverableKind { summary, design_remix };

NLOHMANN_JSON_SERIALIZE_ENUM(DeliverableKind, {{DeliverableKind::summary, "summary"},
                                               {DeliverableKind::design_remix, "design_remix"}})

struct Deliverable {
  unsigned iteration = 0;
  DeliverableKind kind = DeliverableKind::summary;
  std::optional<std::string> summary_text;
  std::optional<std::vector<RankedOption>> final_ranking;
  std::optional<std::string> editing_directions;
  std::optional<OptionRef> generated_option;

  friend bool operator==(const Deliverable&, const Deliverable&) = default;
};

inline void to_json(json& j, const Deliverable& d) {
  j = json{{"iteration", d.iteration}, {"kind", d.kind}};
  if (d.summary_text) j["summary_text"] = *d.summary_text;
  if (d.final_ranking) {
    json arr = json::array();
    for (const auto& r : *d.final_ranking) {
      arr.push_back({{"rank", r.rank}, {"image_number", r.option_number}, {"reason", r.reason}});
    }
    j["final_ranking"] = std::move(arr);
  }
  if (d.editing_directions) j["editing_directions"] = *d.editing_directions;
  if (d.generated_option) j["generated_option"] = *d.generated_option;
}

inline void from_json(const json& j, Deliverable& d) {
  d = Deliverable{};
  d.iteration = j.at("iteration").get<unsigned>();
  d.kind = j.at("kind").get<DeliverableKind>();
  if (j.contains("summary_text")) d.summary_text = j["summary_text"].get<std::string>();
  if (j.contains("final_ranking")) {
    std::vector<RankedOption> ranking;
    for (const auto& r : j["final_ranking"]) {
      ranking.push_back({r.at("rank").get<int>(), r.at("image_number").get<int>(),
                         r.value("reason", "")});
    }
    d.final_ranking = std::move(ranking);
  }
  if (j.contains("editing_directions")) {
    d.editing_directions = j["editing_directions"].get<std::string>();
  }
  if (j.contains("generated_option")) d.generated_option = j["generated_option"].get<OptionRef>();
}

struct SessionConfig {
  unsigned turns_per_agent = 1;
  unsigned max_iterations = 1;
  double temperature = 1.0;
  std::string model_id = "gpt-4.1-mini";
  std::vector<unsigned> narrowing_schedule;
  std::uint64_t rng_seed = 0;
  // Kickoff system message before each discussion; defaults on for design.
  std::optional<bool> kickoff;
  // Append a participant's own submitted critiques to their persona.
  bool persona_includes_critiques = true;
  // Attach option media to design-kind proxy and remix calls.
  bool attach_option_media = true;

  bool kickoff_enabled(TaskKind kind) const {
    return kickoff.value_or(kind == TaskKind::design);
  }

  // Task 1 defaults: one turn per agent, temperature 1.
  static SessionConfig deliberation_defaults() { return SessionConfig{}; }

  // Task 2 defaults: two turns per agent, three iterations, top-3 then top-2.
  static SessionConfig design_defaults() {
    SessionConfig c;
    c.turns_per_agent = 2;
    c.max_iterations = 3;
    c.model_id = "gpt-4o";
    c.narrowing_schedule = {3, 2};
    return c;
  }

  friend bool operator==(const SessionConfig&, const SessionConfig&) = default;
};

inline void to_json(json& j, const SessionConfig& c) {
  j = json{{"turns_per_agent", c.turns_per_agent},
           {"max_iterations", c.max_iterations},
           {"temperature", c.temperature},
           {"model_id", c.model_id},
           {"narrowing_schedule", c.narrowing_schedule},
           {"rng_seed", c.rng_seed},
           {"persona_includes_critiques", c.persona_includes_critiques},
           {"attach_option_media", c.attach_option_media}};
  if (c.kickoff) j["kickoff"] = *c.kickoff;
}

inline void from_json(const json& j, SessionConfig& c) {
  SessionConfig d;
  c.turns_per_agent = j.value("turns_per_agent", d.turns_per_agent);
  c.max_iterations = j.value("max_iterations", d.max_iterations);
  c.temperature = j.value("temperature", d.temperature);
  c.model_id = j.value("model_id", d.model_id);
  c.narrowing_schedule = j.value("narrowing_schedule", d.narrowing_schedule);
  c.rng_seed = j.value("rng_seed", d.rng_seed);
  c.persona_includes_critiques = j.value("persona_includes_critiques", d.persona_includes_critiques);
  c.attach_option_media = j.value("attach_option_media", d.attach_option_media);
  c.kickoff.reset();
  if (j.contains("kickoff") && !j["kickoff"].is_null()) c.kickoff = j["kickoff"].get<bool>();
}

// Returns every violated SessionConfig invariant; empty when valid.
inline std::vector<std::string> config_violations(const SessionConfig& c) {
  std::vector<std::string> out;
  if (c.turns_per_agent < 1) out.emplace_back("turns_per_agent must be >= 1");
  if (c.max_iterations < 1) out.emplace_back("max_iterations must be >= 1");
  for (std::size_t i = 0; i < c.narrowing_schedule.size(); ++i) {
    if (c.narrowing_schedule[i] < 1) out.emplace_back("narrowing_schedule entries must be >= 1");
    if (i > 0 && c.narrowing_schedule[i] >= c.narrowing_schedule[i - 1]) {
      out.emplace_back("narrowing_schedule must be strictly decreasing");
    }
  }
  return out;
}

enum class Phase { created, discussing, remixing, awaiting_critique, finished };

NLOHMANN_JSON_SERIALIZE_ENUM(Phase, {{Phase::created, "created"},
                                     {Phase::discussing, "discussing"},
                                     {Phase::remixing, "remixing"},
                                     {Phase::awaiting_critique, "awaiting_critique"},
                                     {Phase::finished, "finished"}})

enum class SessionEvent { StartDiscussion, DiscussionExhausted, RemixCompleted, Finish };

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::created: return "created";
    case Phase::discussing: return "discussing";
    case Phase::remixing: return "remixing";
    case Phase::awaiting_critique: return "awaiting_critique";
    case Phase::finished: return "finished";
  }
  return "?";
}

inline std::string_view to_string(SessionEvent e) {
  switch (e) {
    case SessionEvent::StartDiscussion: return "StartDiscussion";
    case SessionEvent::DiscussionExhausted: return "DiscussionExhausted";
    case SessionEvent::RemixCompleted: return "RemixCompleted";
    case SessionEvent::Finish: return "Finish";
  }
  return "?";
}

// A critique stored while the session awaits feedback; consumed on re-entry.
struct Critique {
  std::string participant_id;
  std::string text;
  std::string submitted_at;

  friend bool operator==(const Critique&, const Critique&) = default;
};

inline void to_json(json& j, const Critique& c) {
  j = json{{"participant_id", c.participant_id}, {"text", c.text}, {"submitted_at", c.submitted_at}};
}
inline void from_json(const json& j, Critique& c) {
  c.participant_id = j.at("participant_id").get<std::string>();
  c.text = j.at("text").get<std::string>();
  c.submitted_at = j.value("submitted_at", "");
}

struct SessionState {
  std::string session_id;
  TaskContext context;
  std::vector<ParticipantEvidence> participants;
  SessionConfig config;
  Phase phase = Phase::created;
  // 0-based index of the current round.
  unsigned iteration = 0;
  std::vector<OptionRef> active_options;
  Transcript transcript;
  std::vector<Deliverable> deliverables;
  std::vector<Critique> pending_critiques;
  // Single best option chosen when a design session finishes.
  std::optional<OptionRef> final_pick;

  const ParticipantEvidence* find_participant(std::string_view id) const {
    for (const auto& p : participants) {
      if (p.participant_id == id) return &p;
    }
    return nullptr;
  }

  friend bool operator==(const SessionState&, const SessionState&) = default;
};

inline void to_json(json& j, const SessionState& s) {
  j = json{{"session_id", s.session_id},
           {"context", s.context},
           {"participants", s.participants},
           {"config", s.config},
           {"phase", s.phase},
           {"iteration", s.iteration},
           {"active_options", s.active_options},
           {"transcript", s.transcript},
           {"deliverables", s.deliverables},
           {"pending_critiques", s.pending_critiques}};
  j["final_pick"] = s.final_pick ? json(*s.final_pick) : json(nullptr);
}

inline void from_json(const json& j, SessionState& s) {
  s.session_id = j.at("session_id").get<std::string>();
  s.context = j.at("context").get<TaskContext>();
  s.participants = j.at("participants").get<std::vector<ParticipantEvidence>>();
  s.config = j.at("config").get<SessionConfig>();
  s.phase = j.at("phase").get<Phase>();
  s.iteration = j.at("iteration").get<unsigned>();
  s.active_options = j.value("active_options", std::vector<OptionRef>{});
  s.transcript = j.value("transcript", Transcript{});
  s.deliverables = j.value("deliverables", std::vector<Deliverable>{});
  s.pending_critiques = j.value("pending_critiques", std::vector<Critique>{});
  s.final_pick.reset();
  if (j.contains("final_pick") && !j["final_pick"].is_null()) {
    s.final_pick = j["final_pick"].get<OptionRef>();
  }
}

// Creates a session in phase `created`; active options start as the seed set.
inline SessionState make_session(std::string session_id, TaskContext context,
                                 std::vector<ParticipantEvidence> participants,
                                 SessionConfig config) {
  SessionState s;
  s.session_id = std::move(session_id);
  s.active_options = context.options;
  s.context = std::move(context);
  s.participants = std::move(participants);
  s.config = std::move(config);
  return s;
}

// Applies one event of the created -> (discussing -> remixing ->
// awaiting_critique)* -> finished loop. The input is not modified.
inline SessionState transition(const SessionState& state, SessionEvent event) {
  auto illegal = [&](const std::string& why = {}) {
    std::string msg = "illegal event " + std::string(to_string(event)) + " in phase " +
                      std::string(to_string(state.phase));
    if (!why.empty()) msg += " (" + why + ")";
    return IllegalTransition(msg);
  };

  SessionState next = state;
  switch (state.phase) {
    case Phase::created:
      if (event != SessionEvent::StartDiscussion) throw illegal();
      next.phase = Phase::discussing;
      return next;
    case Phase::discussing:
      if (event != SessionEvent::DiscussionExhausted) throw illegal();
      next.phase = Phase::remixing;
      return next;
    case Phase::remixing:
      if (event != SessionEvent::RemixCompleted) throw illegal();
      if (state.deliverables.size() != state.iteration + 1) {
        throw illegal("expected one deliverable per completed iteration");
      }
      next.phase = Phase::awaiting_critique;
      return next;
    case Phase::awaiting_critique:
      if (event == SessionEvent::Finish) {
        next.phase = Phase::finished;
        return next;
      }
      if (event != SessionEvent::StartDiscussion) throw illegal();
      if (state.iteration + 1 >= state.config.max_iterations) {
        throw illegal("iteration cap " + std::to_string(state.config.max_iterations) + " reached");
      }
      next.phase = Phase::discussing;
      next.iteration = state.iteration + 1;
      return next;
    case Phase::finished:
      throw illegal();
  }
  throw illegal();
}

struct ValidationReport {
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

namespace detail {

inline bool is_permutation_of_1_to_n(std::vector<int> ranks) {
  std::sort(ranks.begin(), ranks.end());
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (ranks[i] != static_cast<int>(i) + 1) return false;
  }
  return true;
}

}  // namespace detail

// Lists every way `evidence` is inadmissible for `context`. Never throws.
inline ValidationReport validate_evidence(const ParticipantEvidence& evidence,
                                          const TaskContext& context) {
  ValidationReport report;
  auto& v = report.violations;
  if (evidence.participant_id.empty()) v.emplace_back("participant_id is empty");

  const bool has_comment = evidence.comment_text.has_value();
  const bool has_opinions = evidence.option_opinions.has_value();
  if (!has_comment && !has_opinions) {
    v.emplace_back("neither comment_text nor option_opinions present");
    return report;
  }
  if (has_comment && evidence.comment_text->empty()) v.emplace_back("comment_text is empty");

  if (is_deliberation(context.kind) && !has_comment) {
    v.emplace_back("comment_text required for deliberation contexts");
  }
  if (context.kind == TaskKind::design && !has_opinions) {
    v.emplace_back("option_opinions required for design contexts");
  }

  if (has_opinions) {
    const auto& ops = *evidence.option_opinions;
    if (ops.empty()) v.emplace_back("option_opinions is empty");
    std::vector<int> ranks;
    for (const auto& [n, op] : ops) {
      ranks.push_back(op.rank);
      if (op.justification.empty()) {
        v.emplace_back("missing justification for option " + std::to_string(n));
      }
    }
    if (!ranks.empty() && !detail::is_permutation_of_1_to_n(ranks)) {
      v.emplace_back("ranks not a permutation of 1.." + std::to_string(ranks.size()));
    }
    if (context.kind == TaskKind::design) {
      std::set<int> expected;
      for (const auto& o : context.options) expected.insert(o.option_number);
      std::set<int> got;
      for (const auto& [n, op] : ops) got.insert(n);
      if (got != expected) {
        v.emplace_back("option_opinions cover " + std::to_string(got.size()) +
                       " options but the context has " + std::to_string(expected.size()));
      }
    }
  }
  return report;
}

// Structural checks on a TaskContext.
inline ValidationReport validate_context(const TaskContext& context) {
  ValidationReport report;
  if (context.context_id.empty()) report.violations.emplace_back("context_id is empty");
  if (context.kind == TaskKind::design) {
    if (context.options.size() < 2) {
      report.violations.emplace_back("design contexts need at least 2 options");
    }
    std::set<int> seen;
    for (const auto& o : context.options) {
      if (o.option_number < 1) report.violations.emplace_back("option numbers must be positive");
      if (!seen.insert(o.option_number).second) {
        report.violations.emplace_back("duplicate option number " +
                                       std::to_string(o.option_number));
      }
    }
  }
  return report;
}

// One ranker's ballot: option_number -> rank (1 = best).
using Ballot = std::map<int, int>;

struct BordaScore {
  int option_number = 0;
  long long points = 0;
};

// Borda totals, each ranker awarding n - rank points. Sorted by descending
// points, ties broken by ascending option number.
inline std::vector<BordaScore> borda_scores(const std::vector<Ballot>& ballots) {
  if (ballots.empty()) throw EmptyInput("borda: no rankings supplied");
  std::set<int> options;
  for (const auto& [n, r] : ballots.front()) options.insert(n);
  const int n = static_cast<int>(options.size());
  std::map<int, long long> totals;
  for (std::size_t i = 0; i < ballots.size(); ++i) {
    const auto& b = ballots[i];
    std::set<int> these;
    std::vector<int> ranks;
    for (const auto& [opt, rank] : b) {
      these.insert(opt);
      ranks.push_back(rank);
    }
    if (these != options || !detail::is_permutation_of_1_to_n(ranks)) {
      throw NonPermutation("borda: ranking " + std::to_string(i) +
                           " is not a permutation over the common option set");
    }
    for (const auto& [opt, rank] : b) totals[opt] += n - rank;
  }
  std::vector<BordaScore> out;
  for (const auto& [opt, pts] : totals) out.push_back({opt, pts});
  std::stable_sort(out.begin(), out.end(), [](const BordaScore& a, const BordaScore& b) {
    return a.points != b.points ? a.points > b.points : a.option_number < b.option_number;
  });
  return out;
}

inline std::vector<int> borda_top_k(const std::vector<Ballot>& ballots, std::size_t k) {
  auto scores = borda_scores(ballots);
  if (k == 0 || k > scores.size()) {
    throw InvalidArgument("borda: k must be in 1.." + std::to_string(scores.size()));
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(scores[i].option_number);
  return out;
}

// Rank vectors indexed by position: ranks[i] is the rank of option i + 1.
inline std::vector<int> borda_top_k(const std::vector<std::vector<int>>& rank_vectors,
                                    std::size_t k) {
  std::vector<Ballot> ballots;
  ballots.reserve(rank_vectors.size());
  for (const auto& rv : rank_vectors) {
    Ballot b;
    for (std::size_t i = 0; i < rv.size(); ++i) b[static_cast<int>(i) + 1] = rv[i];
    ballots.push_back(std::move(b));
  }
  return borda_top_k(ballots, k);
}

}  // namespace teamfusion
