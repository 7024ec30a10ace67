#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace teamfusion;
using namespace tf_test;

namespace {

std::vector<OptionRef> options(std::initializer_list<int> numbers) {
  std::vector<OptionRef> out;
  for (int n : numbers) out.push_back({n, "media/option-" + std::to_string(n) + ".png", std::nullopt});
  return out;
}

std::string remix_text(std::vector<json> ranking, const std::string& directions = "Use Image 1.") {
  return json{{"final_ranking", json(std::move(ranking))}, {"editing_directions", directions}}.dump();
}

json entry(json rank, json image, std::string reason = "r") {
  return json{{"rank", rank}, {"image_number", image}, {"reason", reason}};
}

template <typename E>
E expect_throw(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const E& e) {
    return e;
  }
  ADD_FAILURE() << "expected exception";
  throw std::logic_error("unreachable");
}

}  // namespace

TEST(ParseRemix, FilledSkeleton) {
  const auto text = slurp(data_dir() / "fixtures" / "remix_filled.txt");
  auto out = parse_design_remix(text, options({1, 2, 3, 4, 5, 6}));
  ASSERT_EQ(out.final_ranking.size(), 3u);
  EXPECT_EQ(out.final_ranking[0].option_number, 2);
  EXPECT_EQ(out.final_ranking[1].option_number, 5);
  EXPECT_EQ(out.final_ranking[2].option_number, 1);
  EXPECT_EQ(out.final_ranking[0].reason, "Strongest composition and clearest product focus");
  EXPECT_NE(out.editing_directions.find("Image 5"), std::string::npos);
}

TEST(ParseRemix, SurroundingProseAndStringRanks) {
  auto text = "Sure! Here you go:\n```json\n" +
              remix_text({entry("2", 3), entry(1, "4")}, "Take {the} layout from Image 4.") +
              "\n```\nLet me know.";
  auto out = parse_design_remix(text, options({3, 4}));
  EXPECT_EQ(out.final_ranking[0].option_number, 4);
  EXPECT_EQ(out.final_ranking[1].rank, 2);
}

TEST(ParseRemix, SkipsLeadingNonJsonBraces) {
  auto text = "{not json} then " + remix_text({entry(1, 1)});
  EXPECT_EQ(parse_design_remix(text, options({1})).final_ranking.size(), 1u);
}

TEST(ParseRemix, NoJson) {
  EXPECT_THROW(parse_design_remix("I could not decide.", options({1})), NoJsonFound);
  EXPECT_THROW(parse_design_remix("", options({1})), NoJsonFound);
}

TEST(ParseRemix, RankContiguity) {
  auto e = expect_throw<SchemaViolation>(
      [] { parse_design_remix(remix_text({entry(1, 1), entry(3, 2)}), options({1, 2})); });
  EXPECT_EQ(e.path(), "final_ranking");
  EXPECT_NE(e.detail().find("contiguous"), std::string::npos);
}

TEST(ParseRemix, UnknownOptionIsLocated) {
  auto e = expect_throw<UnknownOption>(
      [] { parse_design_remix(remix_text({entry(1, 1), entry(2, 9)}), options({1, 2})); });
  EXPECT_NE(std::string(e.what()).find("final_ranking[1]"), std::string::npos);
  EXPECT_NE(std::string(e.what()).find("9"), std::string::npos);
}

TEST(ParseRemix, DirectionsMustReferenceActiveOptions) {
  EXPECT_THROW(parse_design_remix(remix_text({entry(1, 1)}, "Use Image 7."), options({1})), UnknownOption);
}

TEST(ParseRemix, FieldErrorsCarryPaths) {
  auto dup = expect_throw<SchemaViolation>(
      [] { parse_design_remix(remix_text({entry(1, 1), entry(2, 1)}), options({1, 2})); });
  EXPECT_EQ(dup.path(), "final_ranking[1].image_number");

  auto missing = expect_throw<SchemaViolation>([] {
    parse_design_remix(remix_text({json{{"image_number", 1}}}), options({1}));
  });
  EXPECT_EQ(missing.path(), "final_ranking[0].rank");

  auto bad_rank = expect_throw<SchemaViolation>(
      [] { parse_design_remix(remix_text({entry("first", 1)}), options({1})); });
  EXPECT_EQ(bad_rank.path(), "final_ranking[0].rank");

  auto no_dirs = expect_throw<SchemaViolation>([] {
    parse_design_remix(json{{"final_ranking", json::array({entry(1, 1)})}}.dump(), options({1}));
  });
  EXPECT_EQ(no_dirs.path(), "editing_directions");

  auto empty = expect_throw<SchemaViolation>(
      [] { parse_design_remix(json{{"final_ranking", json::array()}, {"editing_directions", "x"}}.dump(), options({1})); });
  EXPECT_EQ(empty.path(), "final_ranking");

  EXPECT_THROW(parse_design_remix(remix_text({entry(1, 1)}, "   "), options({1})), SchemaViolation);
}

TEST(ParseRemix, FuzzNeverCrashes) {
  const auto seed_text = slurp(data_dir() / "fixtures" / "remix_filled.txt");
  const auto active = options({1, 2, 3, 4, 5, 6});
  std::mt19937_64 rng(7);
  const std::string alphabet = "{}[]\":,0123456789 abcxyz\\\n-.Imagernkfil_";
  std::size_t parsed = 0;
  std::size_t rejected = 0;
  for (int i = 0; i < 10000; ++i) {
    std::string text = seed_text;
    const int edits = 1 + static_cast<int>(rng() % 8);
    for (int e = 0; e < edits && !text.empty(); ++e) {
      const std::size_t pos = rng() % text.size();
      switch (rng() % 4) {
        case 0: text[pos] = alphabet[rng() % alphabet.size()]; break;
        case 1: text.erase(pos, 1 + rng() % 5); break;
        case 2: text.insert(pos, 1, alphabet[rng() % alphabet.size()]); break;
        case 3: text.resize(pos); break;
      }
    }
    if (i % 10 == 0) {
      // Random bytes, including invalid UTF-8.
      text.clear();
      for (int k = 0, n = static_cast<int>(rng() % 64); k < n; ++k) text += static_cast<char>(rng() % 256);
    }
    try {
      auto out = parse_design_remix(text, active);
      ++parsed;
      ASSERT_FALSE(out.final_ranking.empty());
      for (std::size_t r = 0; r < out.final_ranking.size(); ++r) {
        ASSERT_EQ(out.final_ranking[r].rank, static_cast<int>(r) + 1);
      }
    } catch (const Error&) {
      ++rejected;
    } catch (const std::exception& e) {
      FAIL() << "case " << i << " escaped with non-library exception: " << e.what();
    }
  }
  EXPECT_EQ(parsed + rejected, 10000u);
  EXPECT_GT(parsed, 0u);
  EXPECT_GT(rejected, 0u);
}

TEST(Narrow, KeepsTopKThenNewOption) {
  const auto active = options({1, 2, 3, 4, 5, 6});
  DesignRemixOutput out{{{1, 4, ""}, {2, 2, ""}, {3, 6, ""}, {4, 1, ""}, {5, 3, ""}, {6, 5, ""}}, "x"};
  OptionRef fresh{7, "stub://7", 1u};
  auto next = narrow_options(active, out, fresh, 3);
  ASSERT_EQ(next.size(), 4u);
  EXPECT_EQ(next[0].option_number, 4);
  EXPECT_EQ(next[1].option_number, 2);
  EXPECT_EQ(next[2].option_number, 6);
  EXPECT_EQ(next[3], fresh);
  EXPECT_EQ(narrow_options(active, out, std::nullopt, 2).size(), 2u);
  EXPECT_THROW(narrow_options(active, out, fresh, 7), KTooLarge);
  DesignRemixOutput partial{{{1, 4, ""}, {2, 2, ""}}, "x"};
  EXPECT_THROW(narrow_options(active, partial, fresh, 3), KTooLarge);
}

TEST(RemixSummary, ProducesDeliverable) {
  RemixRequest req;
  req.context = deliberation_context();
  req.comments = {"a", "b"};
  req.iteration = 2;
  FnBackend backend([](const ChatCall&, std::size_t) { return std::string("60% agree."); });
  auto d = remix_summary(req, backend);
  EXPECT_EQ(d.kind, DeliverableKind::summary);
  EXPECT_EQ(d.iteration, 2u);
  EXPECT_EQ(*d.summary_text, "60% agree.");
  EXPECT_EQ(backend.calls()[0].purpose, CallPurpose::summary_remix);
  EXPECT_TRUE(backend.calls()[0].history_view.empty());
}

TEST(RemixSummary, Errors) {
  RemixRequest req;
  req.context = deliberation_context();
  FnBackend blank([](const ChatCall&, std::size_t) { return std::string(" "); });
  EXPECT_THROW(remix_summary(req, blank), EmptyResponse);
  FnBackend throwing([](const ChatCall&, std::size_t) -> std::string { throw std::runtime_error("down"); });
  EXPECT_THROW(remix_summary(req, throwing), BackendFailure);
  req.context = design_context();
  FnBackend ok;
  EXPECT_THROW(remix_summary(req, ok), InvalidArgument);
}

TEST(RemixDesign, GeneratesNumberedRemixedOption) {
  RemixRequest req;
  req.context = design_context();
  req.active_options = req.context.options;
  req.iteration = 1;
  ModelGateway gw(scripted_config());
  auto d = remix_design(req, gw, &gw, 9);
  ASSERT_TRUE(d.generated_option);
  EXPECT_EQ(d.generated_option->option_number, 9);
  EXPECT_EQ(d.generated_option->remixed_in, 2u);
  EXPECT_EQ(d.generated_option->media_uri.rfind("stub://", 0), 0u);
  EXPECT_EQ(d.final_ranking->size(), 6u);
  EXPECT_EQ(d.iteration, 1u);

  auto no_image = remix_design(req, gw, nullptr, 9);
  EXPECT_TRUE(no_image.generated_option->media_uri.empty());
}

TEST(Reenter, AppendsDeliverableAndCritiques) {
  auto s = make_session("r", design_context(), designers(2), SessionConfig::design_defaults());
  s.phase = Phase::awaiting_critique;
  Deliverable d;
  d.kind = DeliverableKind::design_remix;
  d.final_ranking = std::vector<RankedOption>{{1, 2, "best"}};
  d.editing_directions = "Use Image 2.";
  d.generated_option = OptionRef{7, "", 1u};
  s.deliverables.push_back(d);
  s.pending_critiques.push_back({"d1", "x", ""});
  Message critique;
  critique.speaker = "Designer 1";
  critique.role = Role::human_critique;
  critique.content = "more contrast";

  auto next = reenter_deliverable(s, d, {critique});
  EXPECT_EQ(next.phase, Phase::discussing);
  EXPECT_EQ(next.iteration, 1u);
  ASSERT_EQ(next.transcript.size(), 2u);
  EXPECT_EQ(next.transcript.messages()[0].speaker, "remixer");
  EXPECT_NE(next.transcript.messages()[0].content.find("New remixed option: Image 7"), std::string::npos);
  EXPECT_EQ(next.transcript.messages()[1].role, Role::human_critique);
  EXPECT_EQ(next.transcript.messages()[1].iteration, 1u);
  EXPECT_TRUE(next.pending_critiques.empty());
}

TEST(FullDesignSession, NarrowsSixFourThree) {
  ModelGateway gw(scripted_config());
  Backends b{&gw, &gw, nullptr, nullptr};
  auto state = make_session("full", design_context(), designers(4), SessionConfig::design_defaults());
  std::vector<std::size_t> counts;
  while (state.phase != Phase::finished) {
    if (state.phase == Phase::awaiting_critique && state.iteration + 1 >= state.config.max_iterations) {
      state = finalize_session(state, b);
      break;
    }
    counts.push_back(state.active_options.size());
    state = run_round(state, b);
  }
  EXPECT_EQ(counts, (std::vector<std::size_t>{6, 4, 3}));
  ASSERT_EQ(state.deliverables.size(), 3u);
  for (unsigned i = 0; i < 3; ++i) {
    EXPECT_EQ(state.deliverables[i].iteration, i);
    EXPECT_EQ(state.deliverables[i].generated_option->option_number, static_cast<int>(7 + i));
    EXPECT_EQ(state.deliverables[i].generated_option->remixed_in, i + 1);
  }
  EXPECT_EQ(state.active_options.size(), 4u);
  ASSERT_TRUE(state.final_pick);
  EXPECT_EQ(state.phase, Phase::finished);
}

TEST(FullDesignSession, RemixFailureKeepsDiscussion) {
  FnBackend bad([](const ChatCall& c, std::size_t i) {
    return c.purpose == CallPurpose::design_remix ? std::string("no json here") : synthetic_response(c, i);
  });
  Backends b{&bad, nullptr, nullptr, nullptr};
  auto state = make_session("f", design_context(), designers(2), SessionConfig::design_defaults());
  try {
    run_round(state, b);
    FAIL();
  } catch (const RemixInterrupted& e) {
    EXPECT_EQ(e.code(), "NoJsonFound");
    EXPECT_EQ(e.partial().phase, Phase::remixing);
    EXPECT_EQ(e.partial().transcript.size(), 5u);
  }
}
