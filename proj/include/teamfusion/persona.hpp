#pragma once

// Represent phase: compiles a participant's evidence into the layered system
// prompt that conditions their proxy agent.

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "teamfusion/core.hpp"
#include "teamfusion/templates.hpp"

namespace teamfusion {

enum class SectionKind { goal, domain_constraints, roleplay, few_shot_preferences };

inline constexpr std::array<SectionKind, 4> kSectionOrder = {
    SectionKind::goal, SectionKind::domain_constraints, SectionKind::roleplay,
    SectionKind::few_shot_preferences};

inline std::string_view to_string(SectionKind k) {
  switch (k) {
    case SectionKind::goal: return "goal";
    case SectionKind::domain_constraints: return "domain_constraints";
    case SectionKind::roleplay: return "roleplay";
    case SectionKind::few_shot_preferences: return "few_shot_preferences";
  }
  return "?";
}

struct PromptSection {
  SectionKind kind;
  std::string text;

  friend bool operator==(const PromptSection&, const PromptSection&) = default;
};

// A media reference shown to a multimodal model, e.g. {"Image 4", "s3://..."}.
struct Attachment {
  std::string label;
  std::string uri;

  friend bool operator==(const Attachment&, const Attachment&) = default;
};

struct PersonaPrompt {
  std::string participant_id;
  std::vector<PromptSection> sections;
  std::string rendered;
  // Option images paired with the few-shot layer (design kind only).
  std::vector<Attachment> attachments;
};

// Sections joined by single blank lines.
inline std::string render_sections(const std::vector<PromptSection>& sections) {
  std::string out;
  for (std::size_t i = 0; i < sections.size(); ++i) {
    if (i) out += "\n\n";
    out += sections[i].text;
  }
  return out;
}

namespace detail {

// Python-literal style quoting, without escaping so the text stays verbatim.
inline std::string quote_justification(const std::string& s) {
  const char q = s.find('\'') != std::string::npos ? '"' : '\'';
  return q + s + q;
}

}  // namespace detail

// One line per option in ascending option number, e.g.
//   Image 4: {'rank': '1', 'justification': 'bold and colorful'}
inline std::string format_preferences(const std::map<int, Opinion>& opinions) {
  if (opinions.empty()) throw EmptyOpinions("no option opinions to format");
  std::string out;
  for (const auto& [number, op] : opinions) {
    if (!out.empty()) out += '\n';
    out += "Image " + std::to_string(number) + ": {'rank': '" + std::to_string(op.rank) +
           "', 'justification': " + detail::quote_justification(op.justification) + "}";
  }
  return out;
}

inline bool template_matches_kind(TemplateId id, TaskKind kind) {
  if (kind == TaskKind::design) return id == TemplateId::design_proxy;
  return id == TemplateId::deliberation_proxy;
}

// Builds the proxy persona. `own_critiques` are critiques this participant
// submitted in earlier rounds; they extend the few-shot layer.
inline PersonaPrompt build_persona(const ParticipantEvidence& evidence, const TaskContext& context,
                                   const PromptTemplate& tmpl,
                                   const std::vector<std::string>& own_critiques = {}) {
  if (!template_matches_kind(tmpl.id, context.kind)) {
    throw TemplateKindMismatch("template " + std::string(to_string(tmpl.id)) +
                               " cannot build a persona for this context kind");
  }
  check_template(tmpl);

  std::map<std::string, std::string> values;
  PersonaPrompt persona;
  persona.participant_id = evidence.participant_id;

  if (context.kind == TaskKind::design) {
    if (!evidence.option_opinions || evidence.option_opinions->empty()) {
      throw MissingEvidence("participant " + evidence.participant_id + " has no option opinions");
    }
    values["user_name"] = evidence.name();
    values["formatted_preference"] = format_preferences(*evidence.option_opinions);
    for (const auto& [number, op] : *evidence.option_opinions) {
      for (const auto& o : context.options) {
        if (o.option_number == number && !o.media_uri.empty()) {
          persona.attachments.push_back({"Image " + std::to_string(number), o.media_uri});
        }
      }
    }
  } else {
    if (!evidence.comment_text || evidence.comment_text->empty()) {
      throw MissingEvidence("participant " + evidence.participant_id + " has no comment");
    }
    values["name"] = evidence.name();
    values["question"] = context.prompt_text;
    values["comment"] = *evidence.comment_text;
  }

  auto raw = split_sections(tmpl.body);
  if (raw.size() != kSectionOrder.size()) {
    throw TemplateError("persona template " + std::string(to_string(tmpl.id)) + " has " +
                        std::to_string(raw.size()) + " sections, expected 4");
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    persona.sections.push_back({kSectionOrder[i], fill_placeholders(raw[i], values)});
  }
  if (!own_critiques.empty()) {
    auto& few_shot = persona.sections.back().text;
    few_shot += "\n\nYour feedback on the previous deliverable:";
    for (const auto& c : own_critiques) few_shot += "\n- " + c;
  }
  persona.rendered = render_sections(persona.sections);
  return persona;
}

}  // namespace teamfusion
