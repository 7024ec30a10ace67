#include <gtest/gtest.h>

#include "support.hpp"

using namespace teamfusion;
using namespace tf_test;

namespace {

std::filesystem::path samples() { return source_dir() / "samples"; }

Scenario small_scenario() {
  Scenario s;
  s.scenario_id = "sc";
  s.context = deliberation_context();
  for (int i = 0; i < 8; ++i) {
    auto e = commenter("p" + std::to_string(i), "Person " + std::to_string(i), "comment " + std::to_string(i));
    e.cluster_label = "c" + std::to_string(i % 4);
    s.evidence_pool.push_back(e);
  }
  return s;
}

}  // namespace

TEST(Scenarios, LoadSampleJsonl) {
  auto scenarios = load_scenarios(samples() / "design_scenarios.jsonl");
  ASSERT_EQ(scenarios.size(), 50u);
  for (const auto& s : scenarios) {
    EXPECT_TRUE(scenario_violations(s).empty());
    EXPECT_EQ(s.context.options.size(), 6u);
    EXPECT_EQ(s.evidence_pool.size(), 4u);
  }
}

TEST(Scenarios, JsonArrayAndEmptyFile) {
  TempDir dir;
  std::ofstream(dir / "empty.jsonl") << "\n  \n";
  EXPECT_TRUE(load_scenarios(dir / "empty.jsonl").empty());
  json arr = json::array({small_scenario()});
  std::ofstream(dir / "arr.json") << arr.dump(2);
  auto loaded = load_scenarios(dir / "arr.json");
  ASSERT_EQ(loaded.size(), 1u);
  EXPECT_EQ(loaded[0].evidence_pool.size(), 8u);
}

TEST(Scenarios, MalformedLineIsLocated) {
  TempDir dir;
  std::ofstream(dir / "bad.jsonl") << json(small_scenario()).dump() << "\n\n{broken\n";
  try {
    load_scenarios(dir / "bad.jsonl");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Scenarios, InvariantViolationsListed) {
  TempDir dir;
  Scenario s = small_scenario();
  s.evidence_pool[1].participant_id = "p0";
  s.evidence_pool[2].comment_text = "";
  Scenario t = small_scenario();
  {
    std::ofstream out(dir / "bad.jsonl");
    out << json(s).dump() << "\n" << json(t).dump() << "\n";
  }
  try {
    load_scenarios(dir / "bad.jsonl");
    FAIL();
  } catch (const InvariantViolation& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("duplicate"), std::string::npos) << msg;
    EXPECT_NE(msg.find("comment_text is empty"), std::string::npos) << msg;
  }
}

TEST(Teams, FullTeam) {
  auto s = small_scenario();
  auto teams = sample_teams(s, {PolicyKind::full, 0, 0}, 1);
  ASSERT_EQ(teams.size(), 1u);
  EXPECT_EQ(teams[0].member_ids.size(), 8u);
  EXPECT_EQ(teams[0].label, TeamLabel::full_team);
}

TEST(Teams, RandomSubsetIsSeededAndDistinct) {
  auto s = small_scenario();
  TeamPolicy p{PolicyKind::random_subset, 3, 0};
  auto a = sample_teams(s, p, 77, 20);
  auto b = sample_teams(s, p, 77, 20);
  EXPECT_EQ(a, b);
  std::set<std::vector<std::string>> distinct;
  for (const auto& t : a) {
    ASSERT_EQ(t.member_ids.size(), 3u);
    EXPECT_EQ(std::set<std::string>(t.member_ids.begin(), t.member_ids.end()).size(), 3u);
    EXPECT_EQ(t.label, TeamLabel::small_team);
    distinct.insert(t.member_ids);
  }
  EXPECT_GT(distinct.size(), 5u);
  EXPECT_NE(sample_teams(s, p, 78, 20), a);
}

TEST(Teams, OnePerCluster) {
  auto s = small_scenario();
  for (const auto& t : sample_teams(s, {PolicyKind::one_per_cluster, 4, 0}, 5, 10)) {
    std::set<std::string> clusters;
    for (const auto& id : t.member_ids) {
      for (const auto& e : s.evidence_pool) {
        if (e.participant_id == id) clusters.insert(*e.cluster_label);
      }
    }
    EXPECT_EQ(clusters.size(), 4u);
  }
}

TEST(Teams, InadmissiblePolicies) {
  auto s = small_scenario();
  EXPECT_THROW(sample_teams(s, {PolicyKind::random_subset, 9, 0}, 1), PolicyInadmissible);
  EXPECT_THROW(sample_teams(s, {PolicyKind::random_subset, 0, 0}, 1), PolicyInadmissible);
  EXPECT_THROW(sample_teams(s, {PolicyKind::one_per_cluster, 5, 0}, 1), PolicyInadmissible);
  s.evidence_pool[0].cluster_label.reset();
  EXPECT_THROW(sample_teams(s, {PolicyKind::one_per_cluster, 2, 0}, 1), PolicyInadmissible);
  s.evidence_pool.clear();
  EXPECT_THROW(sample_teams(s, {PolicyKind::full, 0, 0}, 1), PolicyInadmissible);
}

TEST(Sampling, BoundedDrawIsUniformEnough) {
  std::mt19937_64 rng(1);
  std::array<int, 6> counts{};
  for (int i = 0; i < 60000; ++i) ++counts[detail::bounded_draw(rng, 6)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(Plan, RejectsInvalidPlans) {
  json j = {{"scenarios", json::array({small_scenario()})},
            {"team_policies", {{{"kind", "random_subset"}, {"size", 20}}}}};
  EXPECT_THROW(plan_from_json(j), ConfigError);
  j["team_policies"] = json::array();
  EXPECT_THROW(plan_from_json(j), ConfigError);
  j["team_policies"] = {{{"kind", "full"}}};
  j["session_config"] = {{"turns_per_agent", 0}};
  EXPECT_THROW(plan_from_json(j), ConfigError);
}

TEST(Plan, SessionIds) {
  auto plan = load_plan(samples() / "plan_design.json");
  auto planned = plan_sessions(plan);
  ASSERT_EQ(planned.size(), 100u);
  EXPECT_EQ(planned[0].session_id, "design01.full_team.r0");
  EXPECT_EQ(planned[1].session_id, "design01.small_team.r0");
  EXPECT_EQ(planned[1].team.member_ids.size(), 2u);
  EXPECT_EQ(sanitize_id("a b/c"), "a_b_c");
  EXPECT_EQ(sanitize_id(".x"), "_.x");
}

TEST(Experiment, DesignBatchCounts) {
  TempDir out;
  auto plan = load_plan(samples() / "plan_design.json");
  ExperimentOptions opts;
  opts.out_dir = out.path();
  opts.parallelism = 4;
  auto report = run_experiment(plan, opts);
  EXPECT_EQ(report.sessions.size(), 100u);
  EXPECT_EQ(report.failed(), 0u);
  EXPECT_EQ(report.remixed_candidates(), 300u);
  EXPECT_EQ(report.deliverables(), 300u);
  for (const auto& r : report.sessions) {
    EXPECT_EQ(r.active_option_counts, (std::vector<std::size_t>{6, 4, 3}));
    EXPECT_TRUE(r.final_pick);
  }
  EXPECT_EQ(SessionStore(out.path()).list().size(), 100u);
  json j = report_to_json(report);
  EXPECT_EQ(j["per_iteration"][1]["active_options"]["4"], 100);
}

TEST(Experiment, DeterministicAcrossParallelism) {
  auto plan = load_plan(samples() / "plan_deliberation.json");
  std::string dumps[2];
  for (int i = 0; i < 2; ++i) {
    TempDir out;
    ExperimentOptions opts;
    opts.out_dir = out.path();
    opts.parallelism = i == 0 ? 1 : 3;
    dumps[i] = report_to_json(run_experiment(plan, opts)).dump(2);
  }
  EXPECT_EQ(dumps[0], dumps[1]);
}

TEST(Experiment, FailuresAreIsolated) {
  TempDir out;
  auto plan = load_plan(samples() / "plan_deliberation.json");
  plan.scenarios.resize(2);
  ExperimentOptions opts;
  opts.out_dir = out.path();
  opts.parallelism = 2;
  opts.gateway = [](const std::string& id) {
    if (id == "question02.custom.r3") {
      auto bad = std::make_shared<FnBackend>([](const ChatCall& c, std::size_t i) -> std::string {
        if (i == 2) throw std::runtime_error("provider down");
        return synthetic_response(c, i);
      });
      return SessionBackendSet{bad, nullptr};
    }
    return SessionBackendSet{std::make_shared<FnBackend>(), nullptr};
  };
  auto report = run_experiment(plan, opts);
  ASSERT_EQ(report.sessions.size(), 10u);
  EXPECT_EQ(report.failed(), 1u);
  const auto& bad = report.sessions[8];
  EXPECT_EQ(bad.session_id, "question02.custom.r3");
  EXPECT_FALSE(bad.ok);
  EXPECT_EQ(bad.error_code, "BackendFailure");
  auto stored = SessionStore(out.path()).load(bad.session_id);
  ASSERT_TRUE(stored);
  EXPECT_EQ(stored->phase, Phase::discussing);
  EXPECT_EQ(stored->transcript.size(), 2u);
}

TEST(Rankings, CsvParsing) {
  std::istringstream good("scenario_id,participant_id,option_number,rank\n\"s,1\",p1,1,2\ns,p1,2,1\n");
  auto t = parse_rankings_csv(good);
  EXPECT_EQ(t.at("s,1").at("p1").at(1), 2);

  std::istringstream bad_header("scenario,participant_id,option_number,rank\n");
  EXPECT_THROW(parse_rankings_csv(bad_header), ParseError);
  std::istringstream bad_int("scenario_id,participant_id,option_number,rank\ns,p,x,1\n");
  try {
    parse_rankings_csv(bad_int);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::istringstream dup("scenario_id,participant_id,option_number,rank\ns,p,1,1\ns,p,1,2\n");
  EXPECT_THROW(parse_rankings_csv(dup), ParseError);
}

TEST(Rankings, WilsonInterval) {
  auto e = wilson_interval(42, 100);
  EXPECT_DOUBLE_EQ(e.rate, 0.42);
  EXPECT_NEAR(e.ci_low, 0.32798, 1e-5);
  EXPECT_NEAR(e.ci_high, 0.51794, 1e-5);
  auto zero = wilson_interval(0, 10);
  EXPECT_EQ(zero.ci_low, 0.0);
  EXPECT_GT(zero.ci_high, 0.0);
  EXPECT_EQ(wilson_interval(0, 0).trials, 0u);
}

TEST(Rankings, ScoreFixture) {
  auto before = load_rankings_csv(data_dir() / "fixtures" / "concordance_before.csv");
  auto after = load_rankings_csv(data_dir() / "fixtures" / "concordance_after.csv");
  auto r = score_rankings(before, after);
  EXPECT_EQ(r.scenario_ids.size(), 100u);
  EXPECT_EQ(r.remixed_top1.successes, 42u);
  EXPECT_EQ(r.remixed_top1.trials, 100u);
  EXPECT_EQ(r.remixed_top2.successes, 88u);
  EXPECT_NEAR(r.delta.mean_before, 0.37, 0.005);
  EXPECT_NEAR(r.delta.mean_after, 0.43, 0.005);
  EXPECT_EQ(convergence_to_json(r)["scenarios"].size(), 100u);

  after.erase(after.begin());
  EXPECT_THROW(score_rankings(before, after), LengthMismatch);
}
