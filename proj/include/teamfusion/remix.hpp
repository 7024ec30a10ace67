#pragma once

// Remix phase: turns a discussion into a deliverable, parses the structured
// design-remix output and narrows the option set between iterations.

#include <algorithm>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "teamfusion/core.hpp"
#include "teamfusion/gateway.hpp"
#include "teamfusion/orchestrator.hpp"
#include "teamfusion/templates.hpp"

namespace teamfusion {

struct RemixRequest {
  TaskContext context;
  std::vector<std::string> comments;
  Transcript transcript;
  std::vector<OptionRef> active_options;
  unsigned iteration = 0;
  double temperature = 1.0;
  std::string model_id;
  bool attach_option_media = true;
};

struct DesignRemixOutput {
  std::vector<RankedOption> final_ranking;
  std::string editing_directions;
};

// DesignRemixOutput in the exact field layout the remixer prompt asks for.
inline json to_remix_json(const DesignRemixOutput& out) {
  json ranking = json::array();
  for (const auto& r : out.final_ranking) {
    ranking.push_back({{"rank", r.rank}, {"image_number", r.option_number}, {"reason", r.reason}});
  }
  return json{{"final_ranking", ranking}, {"editing_directions", out.editing_directions}};
}

inline std::string format_comments(const std::vector<std::string>& comments) {
  std::string out;
  for (const auto& c : comments) {
    if (!out.empty()) out += '\n';
    out += "- " + c;
  }
  return out;
}

inline std::string format_history(const Transcript& transcript) {
  std::string out;
  for (const auto& m : transcript.messages()) {
    if (!out.empty()) out += "\n\n";
    out += m.speaker + ": " + m.content;
  }
  return out;
}

inline std::string render_summary_prompt(const RemixRequest& req,
                                         const TemplateLibrary& templates) {
  return fill_placeholders(templates.get(TemplateId::summary_remixer).body,
                           {{"question", req.context.prompt_text},
                            {"comments_str", format_comments(req.comments)},
                            {"history_str", format_history(req.transcript)}});
}

namespace detail {

inline ChatResponse call_backend(ChatBackend& backend, const ChatCall& call) {
  try {
    return backend.chat(call);
  } catch (const BackendFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw BackendFailure(0, e.what());
  }
}

inline bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

inline std::vector<Attachment> option_attachments(const std::vector<OptionRef>& options,
                                                  bool with_media) {
  std::vector<Attachment> out;
  for (const auto& o : options) {
    out.push_back({"Image " + std::to_string(o.option_number), with_media ? o.media_uri : ""});
  }
  return out;
}

}  // namespace detail

inline Deliverable remix_summary(const RemixRequest& req, ChatBackend& backend,
                                 const TemplateLibrary& templates = builtin_templates()) {
  if (!is_deliberation(req.context.kind)) {
    throw InvalidArgument("remix_summary requires an open_qa or binary_qa context");
  }
  ChatCall call;
  call.purpose = CallPurpose::summary_remix;
  call.system_prompt = render_summary_prompt(req, templates);
  call.temperature = req.temperature;
  call.model_id = req.model_id;
  ChatResponse r = detail::call_backend(backend, call);
  if (detail::blank(r.text)) throw EmptyResponse("summary remixer returned no text");
  Deliverable d;
  d.iteration = req.iteration;
  d.kind = DeliverableKind::summary;
  d.summary_text = std::move(r.text);
  return d;
}

namespace detail {

// End index (exclusive) of the balanced JSON object starting at `open`, or
// npos. String literals are skipped so braces inside them do not count.
inline std::size_t match_object(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    char c = s[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

}  // namespace detail

// First well-formed JSON object in `raw`; code fences and surrounding prose
// are ignored.
inline json extract_json_object(std::string_view raw) {
  for (std::size_t pos = raw.find('{'); pos != std::string_view::npos;
       pos = raw.find('{', pos + 1)) {
    std::size_t end = detail::match_object(raw, pos);
    if (end == std::string_view::npos) continue;
    json j = json::parse(raw.substr(pos, end - pos), nullptr, false);
    if (!j.is_discarded() && j.is_object()) return j;
  }
  throw NoJsonFound("no JSON object found in remix output");
}

inline DesignRemixOutput parse_design_remix(std::string_view raw_text,
                                            const std::vector<OptionRef>& active_options) {
  json j = extract_json_object(raw_text);

  if (!j.contains("final_ranking")) throw SchemaViolation("final_ranking", "missing");
  const json& ranking = j["final_ranking"];
  if (!ranking.is_array() || ranking.empty()) {
    throw SchemaViolation("final_ranking", "must be a nonempty array");
  }
  std::set<int> active;
  for (const auto& o : active_options) active.insert(o.option_number);

  DesignRemixOutput out;
  std::set<int> seen;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    const std::string path = "final_ranking[" + std::to_string(i) + "]";
    const json& entry = ranking[i];
    if (!entry.is_object()) throw SchemaViolation(path, "must be an object");
    if (!entry.contains("rank")) throw SchemaViolation(path + ".rank", "missing");
    if (!entry.contains("image_number")) throw SchemaViolation(path + ".image_number", "missing");
    RankedOption r;
    r.rank = detail::coerce_int(entry["rank"], path + ".rank");
    r.option_number = detail::coerce_int(entry["image_number"], path + ".image_number");
    if (entry.contains("reason")) {
      if (!entry["reason"].is_string()) throw SchemaViolation(path + ".reason", "must be a string");
      r.reason = entry["reason"].get<std::string>();
    }
    if (!seen.insert(r.option_number).second) {
      throw SchemaViolation(path + ".image_number",
                            "duplicate image number " + std::to_string(r.option_number));
    }
    if (!active.count(r.option_number)) {
      throw UnknownOption("image " + std::to_string(r.option_number) +
                          " is not an active option (" + path + ")");
    }
    out.final_ranking.push_back(std::move(r));
  }
  std::stable_sort(out.final_ranking.begin(), out.final_ranking.end(),
                   [](const RankedOption& a, const RankedOption& b) { return a.rank < b.rank; });
  for (std::size_t i = 0; i < out.final_ranking.size(); ++i) {
    if (out.final_ranking[i].rank != static_cast<int>(i) + 1) {
      throw SchemaViolation("final_ranking", "ranks not contiguous");
    }
  }

  if (!j.contains("editing_directions")) throw SchemaViolation("editing_directions", "missing");
  if (!j["editing_directions"].is_string()) {
    throw SchemaViolation("editing_directions", "must be a string");
  }
  out.editing_directions = j["editing_directions"].get<std::string>();
  if (detail::blank(out.editing_directions)) throw SchemaViolation("editing_directions", "empty");

  static const std::regex kImageRef(R"(Image\s+(\d{1,9}))");
  for (auto it = std::sregex_iterator(out.editing_directions.begin(),
                                      out.editing_directions.end(), kImageRef);
       it != std::sregex_iterator(); ++it) {
    int n = std::stoi((*it)[1].str());
    if (!active.count(n)) {
      throw UnknownOption("editing_directions reference image " + std::to_string(n) +
                          " which is not an active option");
    }
  }
  return out;
}

// Top-k ranked options followed by the newly remixed one.
inline std::vector<OptionRef> narrow_options(const std::vector<OptionRef>& active_options,
                                             const DesignRemixOutput& remix_out,
                                             const std::optional<OptionRef>& new_option,
                                             std::size_t k) {
  if (k > active_options.size() || k > remix_out.final_ranking.size()) {
    throw KTooLarge("cannot keep top " + std::to_string(k) + " of " +
                    std::to_string(std::min(active_options.size(),
                                            remix_out.final_ranking.size())) +
                    " ranked options");
  }
  std::vector<OptionRef> out;
  for (std::size_t i = 0; i < k; ++i) {
    const int n = remix_out.final_ranking[i].option_number;
    auto it = std::find_if(active_options.begin(), active_options.end(),
                           [n](const OptionRef& o) { return o.option_number == n; });
    if (it == active_options.end()) throw UnknownOption("image " + std::to_string(n));
    out.push_back(*it);
  }
  if (new_option) out.push_back(*new_option);
  return out;
}

inline ChatCall design_remix_call(const RemixRequest& req, const TemplateLibrary& templates,
                                  CallPurpose purpose) {
  ChatCall call;
  call.purpose = purpose;
  call.system_prompt = templates.get(TemplateId::design_remixer).body;
  call.history_view = req.transcript.messages();
  call.attachments = detail::option_attachments(req.active_options, req.attach_option_media);
  call.temperature = req.temperature;
  call.model_id = req.model_id;
  return call;
}

// Number given to the next remixed option: one past every number used so far.
inline int next_option_number(const SessionState& state) {
  int n = 0;
  for (const auto& o : state.context.options) n = std::max(n, o.option_number);
  for (const auto& o : state.active_options) n = std::max(n, o.option_number);
  for (const auto& d : state.deliverables) {
    if (d.generated_option) n = std::max(n, d.generated_option->option_number);
  }
  return n + 1;
}

// Ranks and directs a design remix; `image` may be null, in which case the
// generated option has no media.
inline Deliverable remix_design(const RemixRequest& req, ChatBackend& chat, ImageBackend* image,
                                int new_option_number,
                                const TemplateLibrary& templates = builtin_templates(),
                                std::size_t source_count = 3) {
  if (req.context.kind != TaskKind::design) {
    throw InvalidArgument("remix_design requires a design context");
  }
  ChatResponse r =
      detail::call_backend(chat, design_remix_call(req, templates, CallPurpose::design_remix));
  DesignRemixOutput parsed = parse_design_remix(r.text, req.active_options);

  OptionRef generated;
  generated.option_number = new_option_number;
  generated.remixed_in = req.iteration + 1;
  if (image) {
    std::vector<std::string> sources;
    for (std::size_t i = 0; i < parsed.final_ranking.size() && i < source_count; ++i) {
      for (const auto& o : req.active_options) {
        if (o.option_number == parsed.final_ranking[i].option_number) {
          sources.push_back(o.media_uri);
        }
      }
    }
    try {
      generated.media_uri = image->edit_image(sources, parsed.editing_directions).media_uri;
    } catch (const BackendFailure&) {
      throw;
    } catch (const std::exception& e) {
      throw BackendFailure(0, e.what());
    }
  }

  Deliverable d;
  d.iteration = req.iteration;
  d.kind = DeliverableKind::design_remix;
  d.final_ranking = std::move(parsed.final_ranking);
  d.editing_directions = std::move(parsed.editing_directions);
  d.generated_option = std::move(generated);
  return d;
}

// Text injected into the shared transcript when a deliverable re-enters the
// discussion.
inline std::string deliverable_message(const Deliverable& d,
                                       const std::vector<OptionRef>& active_options) {
  if (d.kind == DeliverableKind::summary) {
    return "Here is the current summary of the comments. Discuss how it can better reflect "
           "your individual standpoint.\n\n" +
           d.summary_text.value_or("");
  }
  std::string out = "Remix result of round " + std::to_string(d.iteration + 1) + ".\nRanking:";
  if (d.final_ranking) {
    for (const auto& r : *d.final_ranking) {
      out += "\n" + std::to_string(r.rank) + ". Image " + std::to_string(r.option_number);
      if (!r.reason.empty()) out += " - " + r.reason;
    }
  }
  if (d.editing_directions) out += "\nEditing directions: " + *d.editing_directions;
  if (d.generated_option) {
    out += "\nNew remixed option: Image " + std::to_string(d.generated_option->option_number);
  }
  out += "\nOptions under discussion:";
  for (const auto& o : active_options) out += " Image " + std::to_string(o.option_number);
  return out;
}

// Starts the next iteration: the deliverable and any critiques become shared
// context and every proxy gets a fresh turn budget.
inline SessionState reenter_deliverable(const SessionState& state, const Deliverable& deliverable,
                                        const std::vector<Message>& critiques) {
  SessionState next = transition(state, SessionEvent::StartDiscussion);
  next.transcript.append(std::string(kRemixerName), Role::system,
                         deliverable_message(deliverable, next.active_options), next.iteration);
  for (const auto& c : critiques) {
    next.transcript.append(c.speaker, Role::human_critique, c.content, next.iteration);
  }
  next.pending_critiques.clear();
  return next;
}

}  // namespace teamfusion
