// teamfusion: batch runs, refinement, replay, scoring, judging and the
// session service.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "teamfusion/teamfusion.hpp"

namespace fs = std::filesystem;
using namespace teamfusion;

namespace {

struct GatewayFlags {
  std::string mode = "scripted";
  std::string image_mode = "stub";
  std::string tape;
  std::string model;
  std::string endpoint;
  std::string script;
  int timeout_ms = 60000;
  int max_retries = 2;
};

void add_gateway_flags(CLI::App* cmd, GatewayFlags& g) {
  cmd->add_option("--mode", g.mode, "Gateway mode")
      ->check(CLI::IsMember({"live", "record", "replay", "scripted"}))
      ->capture_default_str();
  cmd->add_option("--image-mode", g.image_mode, "Image backend mode")
      ->check(CLI::IsMember({"live", "record", "replay", "stub"}))
      ->capture_default_str();
  cmd->add_option("--tape", g.tape, "Tape file (judge) or tape directory (sessions)");
  cmd->add_option("--model", g.model, "Chat model id");
  cmd->add_option("--endpoint", g.endpoint, "OpenAI-compatible base URL");
  cmd->add_option("--script", g.script,
                  "JSON array of canned responses, or 'synthetic' for the built-in responder");
  cmd->add_option("--timeout-ms", g.timeout_ms, "Per-request timeout")->capture_default_str();
  cmd->add_option("--max-retries", g.max_retries, "Retries on 429/5xx/timeout")->capture_default_str();
}

ChatBackendConfig gateway_config(const GatewayFlags& g) {
  ChatBackendConfig c;
  c.mode = json(g.mode).get<GatewayMode>();
  c.image_mode = json(g.image_mode).get<ImageMode>();
  if (!g.model.empty()) c.model_id = g.model;
  if (!g.endpoint.empty()) c.endpoint_url = g.endpoint;
  c.timeout = std::chrono::milliseconds(g.timeout_ms);
  c.max_retries = g.max_retries;
  if (g.script == "synthetic") {
    c.script_fn = synthetic_response;
  } else if (!g.script.empty()) {
    json j = json::parse(read_file(g.script), nullptr, false);
    if (j.is_discarded() || !j.is_array()) throw ConfigError("--script must be a JSON array of strings");
    c.script = j.get<std::vector<std::string>>();
  }
  if (c.mode == GatewayMode::scripted && c.script.empty() && !c.script_fn) {
    c.script_fn = synthetic_response;
  }
  return c;
}

fs::path tape_dir_for(const GatewayFlags& g, const fs::path& out_dir) {
  return g.tape.empty() ? out_dir / "tapes" : fs::path(g.tape);
}

void print_error(const Error& e) {
  std::cerr << "error [" << e.code() << "]: " << e.what() << '\n';
}

// Critique file: JSON array of {participant_id, text}, or one
// "participant_id: text" per line.
std::vector<CritiqueSubmission> read_critiques(const fs::path& path, const std::string& session_id) {
  const std::string text = read_file(path);
  std::vector<CritiqueSubmission> out;
  json j = json::parse(text, nullptr, false);
  if (!j.is_discarded() && j.is_array()) {
    for (const auto& c : j) {
      out.push_back({session_id, c.at("participant_id").get<std::string>(), c.at("text").get<std::string>()});
    }
    return out;
  }
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw ParseError("critique line without 'participant_id:' prefix");
    std::string text_part = line.substr(colon + 1);
    text_part.erase(0, text_part.find_first_not_of(' '));
    out.push_back({session_id, line.substr(0, colon), text_part});
  }
  return out;
}

Deliverable deliverable_from(const json& j) {
  if (j.is_string()) {
    Deliverable d;
    d.kind = DeliverableKind::summary;
    d.summary_text = j.get<std::string>();
    return d;
  }
  return j.get<Deliverable>();
}

std::string state_bytes(const SessionState& s) {
  json j = s;
  return j.dump(2, ' ', false, json::error_handler_t::replace);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"teamfusion: multi-proxy deliberation sessions and convergence metrics"};
  app.require_subcommand(1);

  std::string out_dir = "runs";
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t parallelism = 1;
  GatewayFlags gw;

  // run
  auto* run = app.add_subcommand("run", "Execute every session of an experiment plan");
  std::string plan_path;
  bool audit = false;
  run->add_option("plan", plan_path, "Plan JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();
  run->add_option("--seed", seed, "Override the plan seed")->each([&](const std::string&) { seed_given = true; });
  run->add_option("--parallelism", parallelism, "Concurrent sessions")->capture_default_str();
  run->add_flag("--audit", audit, "Write per-turn audit logs");
  add_gateway_flags(run, gw);

  // refine
  auto* refine = app.add_subcommand("refine", "Add critiques to a stored session and run its next step");
  std::string session_id;
  std::string critique_path;
  bool finish = false;
  refine->add_option("session_id", session_id)->required();
  refine->add_option("--critique", critique_path, "Critique file")->check(CLI::ExistingFile);
  refine->add_flag("--finish", finish, "Finish instead of starting another round");
  refine->add_option("--out-dir", out_dir, "Session directory")->capture_default_str();
  add_gateway_flags(refine, gw);

  // replay
  auto* replay = app.add_subcommand("replay", "Re-execute a stored session from its tape and compare");
  replay->add_option("session_id", session_id)->required();
  replay->add_option("--out-dir", out_dir, "Session directory")->capture_default_str();
  replay->add_option("--tape", gw.tape, "Tape directory");

  // score
  auto* score = app.add_subcommand("score", "Concordance before/after and remixed-option inclusion");
  std::string before_csv;
  std::string after_csv;
  score->add_option("before", before_csv)->required()->check(CLI::ExistingFile);
  score->add_option("after", after_csv)->required()->check(CLI::ExistingFile);

  // judge
  auto* judge = app.add_subcommand("judge", "Order-randomized pairwise judging with W/T/L tallies");
  std::string pairs_path;
  judge->add_option("pairs", pairs_path, "Pairs JSON")->required()->check(CLI::ExistingFile);
  judge->add_option("--seed", seed, "Root seed; pair i uses seed + i")->capture_default_str();
  judge->add_option("--parallelism", parallelism, "Concurrent judge calls")->capture_default_str();
  add_gateway_flags(judge, gw);

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the session HTTP API");
  std::string host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port")->capture_default_str();
  serve->add_option("--out-dir", out_dir, "Session directory")->capture_default_str();
  add_gateway_flags(serve, gw);

  // templates
  auto* templates = app.add_subcommand("templates", "Prompt template assets");
  auto* tmpl_export = templates->add_subcommand("export", "Write the built-in templates");
  std::string tmpl_dir = "templates";
  tmpl_export->add_option("dir", tmpl_dir)->capture_default_str();
  templates->require_subcommand(1);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      ExperimentPlan plan = load_plan(plan_path);
      if (seed_given) plan.seed = seed;
      if (!gw.model.empty()) plan.session_config.model_id = gw.model;
      ExperimentOptions opts;
      opts.out_dir = out_dir;
      opts.parallelism = parallelism;
      opts.audit = audit;
      opts.gateway = default_gateway_factory(gateway_config(gw), out_dir, nullptr, tape_dir_for(gw, out_dir));
      ExperimentReport report = run_experiment(plan, opts);
      write_report(report, fs::path(out_dir) / "report.json");
      std::cout << "sessions " << report.sessions.size() << ", failed " << report.failed()
                << ", deliverables " << report.deliverables() << ", remixed candidates "
                << report.remixed_candidates() << '\n'
                << "report: " << (fs::path(out_dir) / "report.json").string() << '\n';
      for (const auto& r : report.sessions) {
        if (!r.ok) std::cerr << "failed " << r.session_id << " [" << r.error_code << "]: " << r.error_message << '\n';
      }
      return report.failed() == 0 ? 0 : 1;
    }

    if (*refine) {
      ChatBackendConfig cfg = gateway_config(gw);
      cfg.resume_tape = true;
      SessionService service(out_dir, default_gateway_factory(cfg, out_dir, nullptr, tape_dir_for(gw, out_dir)));
      if (!critique_path.empty()) {
        for (const auto& c : read_critiques(critique_path, session_id)) service.submit_critique(c);
      }
      SessionSummaryView v = service.advance(session_id, finish);
      std::cout << json(v).dump(2) << '\n';
      return 0;
    }

    if (*replay) {
      SessionStore store(out_dir);
      auto stored = store.load(session_id);
      if (!stored) throw NotFound("no stored session " + session_id);
      ChatBackendConfig cfg;
      cfg.mode = GatewayMode::replay;
      auto factory = default_gateway_factory(cfg, out_dir, std::make_shared<NoNetworkTransport>(),
                                             tape_dir_for(gw, out_dir));
      SessionBackendSet set = factory(session_id);
      SessionState again = rerun_session(*stored, Backends{set.chat.get(), set.image.get()});
      if (state_bytes(again) == state_bytes(*stored)) {
        std::cout << "identical: " << session_id << " (" << again.transcript.size() << " messages, "
                  << again.deliverables.size() << " deliverables)\n";
        return 0;
      }
      std::cout << "DIFFERENT: " << session_id << '\n';
      return 1;
    }

    if (*score) {
      ConvergenceReport r = score_rankings(load_rankings_csv(before_csv), load_rankings_csv(after_csv));
      std::cout << convergence_to_json(r).dump(2) << '\n';
      return 0;
    }

    if (*judge) {
      json doc = json::parse(read_file(pairs_path));
      const json& pairs = doc.is_array() ? doc : doc.at("pairs");
      ChatBackendConfig cfg = gateway_config(gw);
      if (!gw.tape.empty()) cfg.tape_path = gw.tape;
      ModelGateway backend(cfg);
      const std::string model = gw.model.empty() ? std::string("gpt-4.1-mini") : gw.model;
      std::vector<JudgeVerdict> verdicts(pairs.size());
      std::vector<std::string> failures(pairs.size());
      std::atomic<std::size_t> next{0};
      auto worker = [&] {
        for (std::size_t i = next++; i < pairs.size(); i = next++) {
          try {
            std::mt19937_64 rng(seed + i);
            verdicts[i] = judge_pairwise(deliverable_from(pairs[i].at("a")), deliverable_from(pairs[i].at("b")),
                                         pairs[i].at("dimension").get<std::string>(), rng, backend, model);
          } catch (const std::exception& e) {
            failures[i] = e.what();
          }
        }
      };
      std::vector<std::thread> pool;
      for (std::size_t w = 1; w < std::max<std::size_t>(1, parallelism); ++w) pool.emplace_back(worker);
      worker();
      for (auto& t : pool) t.join();
      std::vector<JudgeVerdict> ok;
      int failed = 0;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (failures[i].empty()) {
          ok.push_back(verdicts[i]);
        } else {
          ++failed;
          std::cerr << "pair " << i << ": " << failures[i] << '\n';
        }
      }
      auto tallies = tally_wtl(ok);
      std::cout << format_wtl_table(tallies) << json{{"tallies", tally_to_json(tallies)}, {"verdicts", ok}}.dump(2)
                << '\n';
      return failed == 0 ? 0 : 1;
    }

    if (*serve) {
      ChatBackendConfig cfg = gateway_config(gw);
      cfg.resume_tape = true;
      SessionService service(out_dir, default_gateway_factory(cfg, out_dir, nullptr, tape_dir_for(gw, out_dir)));
      httplib::Server server;
      register_routes(server, service);
      std::cout << "listening on http://" << host << ':' << port << '\n' << std::flush;
      if (!server.listen(host, port)) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
      return 0;
    }

    if (*tmpl_export) {
      TemplateLibrary{}.write_dir(tmpl_dir);
      std::cout << "wrote " << kAllTemplateIds.size() << " templates to " << tmpl_dir << '\n';
      return 0;
    }
  } catch (const Error& e) {
    print_error(e);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
