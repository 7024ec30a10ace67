#pragma once

// Batch protocols: scenario ingestion, seeded team sampling, the experiment
// runner and rankings-based convergence scoring.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "teamfusion/core.hpp"
#include "teamfusion/gateway.hpp"
#include "teamfusion/metrics.hpp"
#include "teamfusion/session.hpp"
#include "teamfusion/store.hpp"

namespace teamfusion {

struct Scenario {
  std::string scenario_id;
  TaskContext context;
  std::vector<ParticipantEvidence> evidence_pool;
};

inline void to_json(json& j, const Scenario& s) {
  j = json{{"scenario_id", s.scenario_id}, {"context", s.context}, {"evidence_pool", s.evidence_pool}};
}

inline void from_json(const json& j, Scenario& s) {
  s.scenario_id = j.at("scenario_id").get<std::string>();
  s.context = j.at("context").get<TaskContext>();
  s.evidence_pool = j.value("evidence_pool", std::vector<ParticipantEvidence>{});
}

inline std::vector<std::string> scenario_violations(const Scenario& s) {
  std::vector<std::string> out;
  if (s.scenario_id.empty()) out.emplace_back("scenario_id is empty");
  for (const auto& v : validate_context(s.context).violations) out.push_back("context: " + v);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < s.evidence_pool.size(); ++i) {
    const auto& e = s.evidence_pool[i];
    const std::string where = "evidence_pool[" + std::to_string(i) + "]";
    if (!ids.insert(e.participant_id).second) {
      out.push_back(where + ": duplicate participant_id " + e.participant_id);
    }
    for (const auto& v : validate_evidence(e, s.context).violations) {
      out.push_back(where + " (" + e.participant_id + "): " + v);
    }
  }
  return out;
}

namespace detail {

inline std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(offset), '\n'));
}

inline Scenario scenario_from(const json& j, const std::string& where) {
  try {
    return j.get<Scenario>();
  } catch (const Error& e) {
    throw ParseError(where + ": " + e.what());
  } catch (const json::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
}

}  // namespace detail

// Accepts a JSON array of scenarios or JSON-Lines with one scenario per
// line. Every invariant violation across the file is reported at once.
inline std::vector<Scenario> load_scenarios(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<Scenario> out;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return out;

  if (text[first] == '[') {
    json arr;
    try {
      arr = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(detail::line_of_offset(text, e.byte)) + ": " + e.what());
    }
    for (std::size_t i = 0; i < arr.size(); ++i) {
      out.push_back(detail::scenario_from(arr[i], "scenario " + std::to_string(i)));
    }
  } else {
    std::istringstream in(text);
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded()) throw ParseError("line " + std::to_string(lineno) + ": malformed JSON");
      out.push_back(detail::scenario_from(j, "line " + std::to_string(lineno)));
    }
  }

  std::vector<std::string> problems;
  std::set<std::string> seen;
  for (const auto& s : out) {
    if (!seen.insert(s.scenario_id).second) {
      problems.push_back(s.scenario_id + ": duplicate scenario_id");
    }
    for (const auto& v : scenario_violations(s)) problems.push_back(s.scenario_id + ": " + v);
  }
  if (!problems.empty()) {
    std::string msg;
    for (const auto& p : problems) msg += (msg.empty() ? "" : "\n") + p;
    throw InvariantViolation(msg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Seeded sampling

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Uniform draw in [0, n) by rejection; identical on every platform, unlike
// std::uniform_int_distribution.
inline std::size_t bounded_draw(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

// First `k` elements of a seeded Fisher-Yates shuffle.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> items, std::size_t k, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < k && i < items.size(); ++i) {
    std::size_t j = i + bounded_draw(rng, items.size() - i);
    std::swap(items[i], items[j]);
  }
  items.resize(std::min(k, items.size()));
  return items;
}

}  // namespace detail

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index) {
  return detail::splitmix64(base ^ detail::splitmix64(detail::fnv1a64(tag) + index));
}

enum class PolicyKind { one_per_cluster, full, random_subset };
enum class TeamLabel { full_team, small_team, custom };

NLOHMANN_JSON_SERIALIZE_ENUM(PolicyKind, {{PolicyKind::one_per_cluster, "one_per_cluster"},
                                          {PolicyKind::full, "full"},
                                          {PolicyKind::random_subset, "random_subset"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TeamLabel, {{TeamLabel::full_team, "full_team"},
                                         {TeamLabel::small_team, "small_team"},
                                         {TeamLabel::custom, "custom"}})

struct TeamPolicy {
  PolicyKind kind = PolicyKind::full;
  std::size_t size = 0;
  std::uint64_t seed = 0;

  TeamLabel label() const {
    switch (kind) {
      case PolicyKind::full: return TeamLabel::full_team;
      case PolicyKind::random_subset: return TeamLabel::small_team;
      case PolicyKind::one_per_cluster: return TeamLabel::custom;
    }
    return TeamLabel::custom;
  }
};

inline void to_json(json& j, const TeamPolicy& p) {
  j = json{{"kind", p.kind}};
  if (p.kind != PolicyKind::full) j["size"] = p.size;
  if (p.seed) j["seed"] = p.seed;
}

inline void from_json(const json& j, TeamPolicy& p) {
  p.kind = j.at("kind").get<PolicyKind>();
  p.size = j.value("size", std::size_t{0});
  p.seed = j.value("seed", std::uint64_t{0});
}

struct TeamSpec {
  std::string scenario_id;
  std::vector<std::string> member_ids;
  TeamLabel label = TeamLabel::full_team;
  std::size_t replicate = 0;

  friend bool operator==(const TeamSpec&, const TeamSpec&) = default;
};

inline void to_json(json& j, const TeamSpec& t) {
  j = json{{"scenario_id", t.scenario_id},
           {"member_ids", t.member_ids},
           {"label", t.label},
           {"replicate", t.replicate}};
}

inline void check_policy(const Scenario& s, const TeamPolicy& p) {
  const std::size_t pool = s.evidence_pool.size();
  if (pool == 0) throw PolicyInadmissible(s.scenario_id + ": empty evidence pool");
  if (p.kind == PolicyKind::random_subset && (p.size == 0 || p.size > pool)) {
    throw PolicyInadmissible(s.scenario_id + ": random_subset size " + std::to_string(p.size) +
                             " outside 1.." + std::to_string(pool));
  }
  if (p.kind == PolicyKind::one_per_cluster) {
    std::set<std::string> clusters;
    for (const auto& e : s.evidence_pool) {
      if (!e.cluster_label) {
        throw PolicyInadmissible(s.scenario_id + ": participant " + e.participant_id +
                                 " has no cluster_label");
      }
      clusters.insert(*e.cluster_label);
    }
    if (p.size == 0 || p.size > clusters.size()) {
      throw PolicyInadmissible(s.scenario_id + ": one_per_cluster size " + std::to_string(p.size) +
                               " exceeds " + std::to_string(clusters.size()) + " clusters");
    }
  }
}

// One team per replicate. Members keep evidence-pool order for full and
// random_subset teams and cluster-label order for one_per_cluster teams.
inline std::vector<TeamSpec> sample_teams(const Scenario& scenario, const TeamPolicy& policy,
                                          std::uint64_t seed, std::size_t replications = 1) {
  check_policy(scenario, policy);
  const auto& pool = scenario.evidence_pool;
  std::vector<TeamSpec> out;
  for (std::size_t rep = 0; rep < replications; ++rep) {
    std::mt19937_64 rng(derive_seed(seed ^ policy.seed, scenario.scenario_id, rep));
    TeamSpec team{scenario.scenario_id, {}, policy.label(), rep};
    switch (policy.kind) {
      case PolicyKind::full:
        for (const auto& e : pool) team.member_ids.push_back(e.participant_id);
        break;
      case PolicyKind::random_subset: {
        std::vector<std::size_t> idx(pool.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        auto chosen = detail::sample_without_replacement(idx, policy.size, rng);
        std::sort(chosen.begin(), chosen.end());
        for (auto i : chosen) team.member_ids.push_back(pool[i].participant_id);
        break;
      }
      case PolicyKind::one_per_cluster: {
        std::map<std::string, std::vector<std::string>> by_cluster;
        for (const auto& e : pool) by_cluster[*e.cluster_label].push_back(e.participant_id);
        std::vector<std::string> labels;
        for (const auto& [label, ids] : by_cluster) labels.push_back(label);
        auto chosen = detail::sample_without_replacement(labels, policy.size, rng);
        std::sort(chosen.begin(), chosen.end());
        for (const auto& label : chosen) {
          const auto& ids = by_cluster[label];
          team.member_ids.push_back(ids[detail::bounded_draw(rng, ids.size())]);
        }
        break;
      }
    }
    out.push_back(std::move(team));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment plans

struct ExperimentPlan {
  std::vector<Scenario> scenarios;
  std::vector<TeamPolicy> team_policies{TeamPolicy{}};
  std::size_t replications = 1;
  SessionConfig session_config;
  std::uint64_t seed = 0;
};

inline std::vector<std::string> plan_violations(const ExperimentPlan& plan) {
  std::vector<std::string> out;
  if (plan.replications < 1) out.emplace_back("replications must be >= 1");
  if (plan.team_policies.empty()) out.emplace_back("team_policies is empty");
  for (const auto& v : config_violations(plan.session_config)) out.push_back("session_config: " + v);
  for (const auto& s : plan.scenarios) {
    for (const auto& p : plan.team_policies) {
      try {
        check_policy(s, p);
      } catch (const Error& e) {
        out.emplace_back(e.what());
      }
    }
  }
  return out;
}

// Plan JSON: {"scenarios": <path or array>, "team_policies": [...],
// "replications": n, "session_config": {...}, "seed": s}. Relative scenario
// paths resolve against `base_dir`.
inline ExperimentPlan plan_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  ExperimentPlan plan;
  const json& sc = j.at("scenarios");
  if (sc.is_string()) {
    std::filesystem::path p = sc.get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    plan.scenarios = load_scenarios(p);
  } else {
    for (std::size_t i = 0; i < sc.size(); ++i) {
      plan.scenarios.push_back(detail::scenario_from(sc[i], "scenarios[" + std::to_string(i) + "]"));
    }
  }
  if (j.contains("team_policies")) {
    plan.team_policies = j["team_policies"].get<std::vector<TeamPolicy>>();
  } else if (j.contains("team_policy")) {
    plan.team_policies = {j["team_policy"].get<TeamPolicy>()};
  }
  plan.replications = j.value("replications", std::size_t{1});
  if (j.contains("session_config")) plan.session_config = j["session_config"].get<SessionConfig>();
  plan.seed = j.value("seed", std::uint64_t{0});
  auto problems = plan_violations(plan);
  if (!problems.empty()) throw ConfigError(problems.front());
  return plan;
}

inline ExperimentPlan load_plan(const std::filesystem::path& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ParseError("plan " + path.string() + " is not valid JSON");
  return plan_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Running

struct SessionBackendSet {
  std::shared_ptr<ChatBackend> chat;
  std::shared_ptr<ImageBackend> image;
};

using GatewayFactory = std::function<SessionBackendSet(const std::string& session_id)>;

inline std::filesystem::path tape_path_for(const std::filesystem::path& tape_dir,
                                           const std::string& session_id) {
  return tape_dir / (session_id + ".tape.jsonl");
}

// One ModelGateway per session; tape modes read or write
// <tape_dir>/<session_id>.tape.jsonl, tape_dir defaulting to <out_dir>/tapes.
inline GatewayFactory default_gateway_factory(ChatBackendConfig cfg, std::filesystem::path out_dir,
                                              std::shared_ptr<Transport> transport = nullptr,
                                              std::filesystem::path tape_dir = {}) {
  if (tape_dir.empty()) tape_dir = out_dir / "tapes";
  return [cfg = std::move(cfg), out_dir = std::move(out_dir), transport = std::move(transport),
          tape_dir = std::move(tape_dir)](const std::string& id) {
    ChatBackendConfig c = cfg;
    const bool tape = c.mode == GatewayMode::record || c.mode == GatewayMode::replay ||
                      c.image_mode == ImageMode::record || c.image_mode == ImageMode::replay;
    if (tape) c.tape_path = tape_path_for(tape_dir, id);
    if (c.mode == GatewayMode::scripted && c.script.empty() && !c.script_fn) {
      c.script_fn = synthetic_response;
    }
    if (c.artifact_dir == "artifacts") c.artifact_dir = out_dir / "artifacts";
    auto gw = std::make_shared<ModelGateway>(std::move(c), transport);
    return SessionBackendSet{gw, gw};
  };
}

struct SessionResult {
  std::string session_id;
  TeamSpec team;
  bool ok = false;
  std::string error_code;
  std::string error_message;
  Phase phase = Phase::created;
  std::size_t deliverables = 0;
  std::size_t remixed_candidates = 0;
  // Active option count at the start of each iteration.
  std::vector<std::size_t> active_option_counts;
  std::optional<int> final_pick;
};

inline void to_json(json& j, const SessionResult& r) {
  j = json{{"session_id", r.session_id},
           {"scenario_id", r.team.scenario_id},
           {"team_label", r.team.label},
           {"members", r.team.member_ids},
           {"status", r.ok ? "completed" : "failed"},
           {"phase", r.phase},
           {"deliverables", r.deliverables},
           {"remixed_candidates", r.remixed_candidates},
           {"active_option_counts", r.active_option_counts}};
  j["final_pick"] = r.final_pick ? json(*r.final_pick) : json(nullptr);
  if (!r.ok) j["error"] = {{"code", r.error_code}, {"message", r.error_message}};
}

struct ExperimentReport {
  std::vector<SessionResult> sessions;

  std::size_t failed() const {
    return static_cast<std::size_t>(
        std::count_if(sessions.begin(), sessions.end(), [](const SessionResult& r) { return !r.ok; }));
  }
  std::size_t remixed_candidates() const {
    std::size_t n = 0;
    for (const auto& r : sessions) n += r.remixed_candidates;
    return n;
  }
  std::size_t deliverables() const {
    std::size_t n = 0;
    for (const auto& r : sessions) n += r.deliverables;
    return n;
  }
};

inline json report_to_json(const ExperimentReport& report) {
  std::map<std::size_t, std::map<std::size_t, std::size_t>> per_iter;
  for (const auto& r : report.sessions) {
    for (std::size_t i = 0; i < r.active_option_counts.size(); ++i) {
      ++per_iter[i][r.active_option_counts[i]];
    }
  }
  json iterations = json::array();
  for (const auto& [i, hist] : per_iter) {
    json h = json::object();
    std::size_t n = 0;
    for (const auto& [count, sessions] : hist) {
      h[std::to_string(count)] = sessions;
      n += sessions;
    }
    iterations.push_back({{"iteration", i}, {"sessions", n}, {"active_options", h}});
  }
  return json{{"sessions", report.sessions.size()},
              {"completed", report.sessions.size() - report.failed()},
              {"failed", report.failed()},
              {"deliverables", report.deliverables()},
              {"remixed_candidates", report.remixed_candidates()},
              {"per_iteration", iterations},
              {"session_results", report.sessions}};
}

inline std::string sanitize_id(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  if (s.empty() || s.front() == '.') s.insert(s.begin(), '_');
  return s;
}

struct ExperimentOptions {
  std::filesystem::path out_dir = "runs";
  std::size_t parallelism = 1;
  GatewayFactory gateway;
  const TemplateLibrary* templates = nullptr;
  // Writes per-turn audit records to <out_dir>/audit/<session_id>.jsonl.
  bool audit = false;
};

struct PlannedSession {
  std::string session_id;
  const Scenario* scenario = nullptr;
  TeamSpec team;
};

inline std::vector<PlannedSession> plan_sessions(const ExperimentPlan& plan) {
  std::vector<PlannedSession> out;
  std::map<TeamLabel, std::size_t> label_uses;
  for (const auto& p : plan.team_policies) ++label_uses[p.label()];
  for (const auto& s : plan.scenarios) {
    std::map<TeamLabel, std::size_t> seen;
    for (std::size_t pi = 0; pi < plan.team_policies.size(); ++pi) {
      const auto& policy = plan.team_policies[pi];
      const std::size_t ordinal = seen[policy.label()]++;
      std::string tag = json(policy.label()).get<std::string>();
      if (label_uses[policy.label()] > 1) tag += std::to_string(ordinal + 1);
      for (auto& team : sample_teams(s, policy, plan.seed, plan.replications)) {
        std::string id = sanitize_id(s.scenario_id + "." + tag + ".r" + std::to_string(team.replicate));
        out.push_back({std::move(id), &s, std::move(team)});
      }
    }
  }
  return out;
}

// Runs one planned session to completion and persists its final or last
// consistent state. Never throws for session-level failures.
inline SessionResult run_planned_session(const ExperimentPlan& plan, const PlannedSession& ps,
                                         const ExperimentOptions& opts, const SessionStore& store) {
  SessionResult result;
  result.session_id = ps.session_id;
  result.team = ps.team;

  std::vector<ParticipantEvidence> members;
  for (const auto& id : ps.team.member_ids) {
    for (const auto& e : ps.scenario->evidence_pool) {
      if (e.participant_id == id) members.push_back(e);
    }
  }
  SessionConfig config = plan.session_config;
  config.rng_seed = derive_seed(plan.seed, ps.session_id, 0);
  SessionState state = make_session(ps.session_id, ps.scenario->context, members, config);

  auto record = [&](const SessionState& s) {
    result.phase = s.phase;
    result.deliverables = s.deliverables.size();
    result.remixed_candidates = 0;
    for (const auto& d : s.deliverables) result.remixed_candidates += d.generated_option ? 1 : 0;
    if (s.final_pick) result.final_pick = s.final_pick->option_number;
  };

  try {
    SessionBackendSet set = opts.gateway(ps.session_id);
    std::unique_ptr<JsonlAuditSink> audit;
    if (opts.audit) {
      audit = std::make_unique<JsonlAuditSink>(opts.out_dir / "audit" / (ps.session_id + ".jsonl"));
    }
    Backends b{set.chat.get(), set.image.get(), opts.templates, audit.get()};
    while (state.phase != Phase::finished) {
      if (state.phase == Phase::awaiting_critique &&
          state.iteration + 1 >= state.config.max_iterations) {
        state = finalize_session(state, b);
        break;
      }
      if (state.context.kind == TaskKind::design) {
        result.active_option_counts.push_back(state.active_options.size());
      }
      state = run_round(state, b);
    }
    result.ok = true;
  } catch (const Error& e) {
    if (const auto* p = dynamic_cast<const PartialProgress*>(&e)) state = p->partial();
    result.error_code = e.code();
    result.error_message = e.what();
  } catch (const std::exception& e) {
    result.error_code = "InternalError";
    result.error_message = e.what();
  }
  record(state);
  try {
    store.save(state);
  } catch (const std::exception& e) {
    if (result.ok) {
      result.ok = false;
      result.error_code = "IoError";
      result.error_message = e.what();
    }
  }
  return result;
}

// Executes every (scenario, team) session with a bounded worker pool. Results
// are reported in plan order regardless of completion order; failures are
// recorded per session and never abort the batch.
inline ExperimentReport run_experiment(const ExperimentPlan& plan, ExperimentOptions opts) {
  auto problems = plan_violations(plan);
  if (!problems.empty()) throw ConfigError(problems.front());
  if (!opts.gateway) opts.gateway = default_gateway_factory(ChatBackendConfig{}, opts.out_dir);
  const SessionStore store(opts.out_dir);
  const auto planned = plan_sessions(plan);

  ExperimentReport report;
  report.sessions.resize(planned.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < planned.size(); i = next++) {
      report.sessions[i] = run_planned_session(plan, planned[i], opts, store);
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.parallelism, planned.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return report;
}

inline void write_report(const ExperimentReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << report_to_json(report).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Rankings ingestion and convergence scoring

// scenario_id -> participant_id -> option_number -> rank
using RankingTable = std::map<std::string, std::map<std::string, std::map<int, int>>>;

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(field);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? "" : f.substr(b, e - b + 1);
  }
  return out;
}

inline int parse_int_field(const std::string& s, std::size_t lineno, const char* name) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw ParseError("line " + std::to_string(lineno) + ": " + name + " is not an integer");
  }
  return v;
}

}  // namespace detail

inline RankingTable parse_rankings_csv(std::istream& in) {
  RankingTable table;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto f = detail::split_csv_line(line);
    if (!header) {
      if (f != std::vector<std::string>{"scenario_id", "participant_id", "option_number", "rank"}) {
        throw ParseError("line " + std::to_string(lineno) +
                         ": expected header scenario_id,participant_id,option_number,rank");
      }
      header = true;
      continue;
    }
    if (f.size() != 4) throw ParseError("line " + std::to_string(lineno) + ": expected 4 fields");
    const int option = detail::parse_int_field(f[2], lineno, "option_number");
    const int rank = detail::parse_int_field(f[3], lineno, "rank");
    auto& row = table[f[0]][f[1]];
    if (!row.emplace(option, rank).second) {
      throw ParseError("line " + std::to_string(lineno) + ": duplicate option " + f[2] + " for " + f[1]);
    }
  }
  return table;
}

inline RankingTable load_rankings_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path.string());
  return parse_rankings_csv(in);
}

// Rows sorted by participant id, columns by option number.
inline RankMatrix to_rank_matrix(const std::map<std::string, std::map<int, int>>& by_participant) {
  std::set<int> options;
  for (const auto& [pid, row] : by_participant) {
    for (const auto& [opt, rank] : row) options.insert(opt);
  }
  std::vector<std::vector<int>> rows;
  for (const auto& [pid, row] : by_participant) {
    std::vector<int> r;
    for (int opt : options) {
      auto it = row.find(opt);
      r.push_back(it == row.end() ? 0 : it->second);
    }
    rows.push_back(std::move(r));
  }
  return RankMatrix(std::move(rows));
}

struct ProportionEstimate {
  std::size_t successes = 0;
  std::size_t trials = 0;
  double rate = 0;
  double ci_low = 0;
  double ci_high = 0;
};

inline void to_json(json& j, const ProportionEstimate& p) {
  j = json{{"successes", p.successes},
           {"trials", p.trials},
           {"rate", p.rate},
           {"ci95", {p.ci_low, p.ci_high}}};
}

// Wilson score interval at 95%.
inline ProportionEstimate wilson_interval(std::size_t successes, std::size_t trials) {
  ProportionEstimate e{successes, trials};
  if (trials == 0) return e;
  constexpr double z = 1.959963984540054;
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double denom = 1.0 + z * z / n;
  const double center = (p + z * z / (2 * n)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom;
  e.rate = p;
  e.ci_low = std::max(0.0, center - half);
  e.ci_high = std::min(1.0, center + half);
  return e;
}

struct ConvergenceReport {
  std::vector<std::string> scenario_ids;
  std::vector<double> w_before;
  std::vector<double> w_after;
  ConcordanceDelta delta;
  // Over teams whose after-ranking contains options absent from the before set.
  ProportionEstimate remixed_top1;
  ProportionEstimate remixed_top2;
};

inline json convergence_to_json(const ConvergenceReport& r) {
  json per = json::array();
  for (std::size_t i = 0; i < r.scenario_ids.size(); ++i) {
    per.push_back({{"scenario_id", r.scenario_ids[i]},
                   {"w_before", r.w_before[i]},
                   {"w_after", r.w_after[i]},
                   {"bin_before", bin_of(r.w_before[i])},
                   {"bin_after", bin_of(r.w_after[i])}});
  }
  return json{{"mean_w_before", r.delta.mean_before},
              {"mean_w_after", r.delta.mean_after},
              {"bins_before", r.delta.bins_before},
              {"bins_after", r.delta.bins_after},
              {"remixed_top1", r.remixed_top1},
              {"remixed_top2", r.remixed_top2},
              {"scenarios", per}};
}

inline ConvergenceReport score_rankings(const RankingTable& before, const RankingTable& after) {
  ConvergenceReport out;
  std::vector<RankMatrix> mb;
  std::vector<RankMatrix> ma;
  for (const auto& [sid, rows] : before) {
    if (!after.count(sid)) throw LengthMismatch("scenario " + sid + " missing from after-rankings");
  }
  for (const auto& [sid, rows] : after) {
    if (!before.count(sid)) throw LengthMismatch("scenario " + sid + " missing from before-rankings");
  }
  std::size_t top1 = 0;
  std::size_t top2 = 0;
  std::size_t teams = 0;
  for (const auto& [sid, after_rows] : after) {
    const auto& before_rows = before.at(sid);
    out.scenario_ids.push_back(sid);
    mb.push_back(to_rank_matrix(before_rows));
    ma.push_back(to_rank_matrix(after_rows));
    out.w_before.push_back(kendalls_w(mb.back()).w);
    out.w_after.push_back(kendalls_w(ma.back()).w);

    std::set<int> seed_options;
    for (const auto& [pid, row] : before_rows) {
      for (const auto& [opt, rank] : row) seed_options.insert(opt);
    }
    std::vector<Ballot> ballots;
    std::set<int> remixed;
    for (const auto& [pid, row] : after_rows) {
      ballots.push_back(row);
      for (const auto& [opt, rank] : row) {
        if (!seed_options.count(opt)) remixed.insert(opt);
      }
    }
    if (remixed.empty()) continue;
    ++teams;
    const auto order = borda_top_k(ballots, std::min<std::size_t>(2, ballots.front().size()));
    if (remixed.count(order[0])) ++top1;
    if (std::any_of(order.begin(), order.end(), [&](int o) { return remixed.count(o) > 0; })) ++top2;
  }
  out.delta = concordance_delta(mb, ma);
  out.remixed_top1 = wilson_interval(top1, teams);
  out.remixed_top2 = wilson_interval(top2, teams);
  return out;
}

}  // namespace teamfusion
