#pragma once

// Prompt templates: built-in defaults, on-disk overrides and placeholder
// rendering. Placeholders are single-brace named fields such as {name}; there
// is no nesting or logic.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "teamfusion/errors.hpp"

namespace teamfusion {

enum class TemplateId {
  deliberation_proxy,
  design_proxy,
  summary_remixer,
  design_remixer,
  discussion_kickoff
};

inline constexpr std::array<TemplateId, 5> kAllTemplateIds = {
    TemplateId::deliberation_proxy, TemplateId::design_proxy, TemplateId::summary_remixer,
    TemplateId::design_remixer, TemplateId::discussion_kickoff};

inline std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::deliberation_proxy: return "deliberation_proxy";
    case TemplateId::design_proxy: return "design_proxy";
    case TemplateId::summary_remixer: return "summary_remixer";
    case TemplateId::design_remixer: return "design_remixer";
    case TemplateId::discussion_kickoff: return "discussion_kickoff";
  }
  return "?";
}

inline constexpr std::array<std::string_view, 8> kPlaceholderNames = {
    "name", "question", "comment", "user_name", "formatted_preference",
    "brief", "comments_str", "history_str"};

// Persona templates separate their four layers with a line holding only this.
inline constexpr std::string_view kSectionSeparator = "\n---\n";

namespace defaults {

inline constexpr std::string_view kDeliberationProxy =
    R"(Your name is {name}. You are a participant in a public deliberation discussion. Your role is to advocate for and discuss the perspective expressed in your assigned comment.
---
## Discussion Context
**Question:** {question}
---
**Your Assigned Comment:**
{comment}
---
## Your Role and Instructions

1. **Understand and Hold Your Position**: Carefully read and internalize the viewpoint expressed in your comment. This represents your perspective in this discussion. Stay true to the sentiment and reasoning of your assigned comment.

2. **Advocate Effectively**:
   - Express the key points and reasoning behind your position
   - Always speak in concise and at most 2 paragraphs. Go straight to the core point.
   - Avoid adding any additional personal information or experience into discussion aside from given comments.

3. **Engage Constructively**:
   - Listen to and acknowledge other participants' viewpoints
   - Identify common ground where it exists
   - Respectfully challenge points you disagree with, using reasoning and evidence

4. **Contribute to Comprehensive Understanding**: Help ensure that your perspective is clearly understood and represented in the broader discussion, especially if it represents a minority or less common viewpoint.

Remember: The goal is not to "win" the debate, but to ensure all perspectives—including minority opinions—are thoroughly heard, understood, and considered in the final summary of the deliberation.)";

inline constexpr std::string_view kDesignProxy =
    R"(You are a design expert participating in a discussion about design images. You have been given specific preferences over the designs and will discuss them with other experts to reach consensus. Advocate for your preferred designs while being open to other perspectives.
---
Mimic how real designers’ tone and language style to write to each other. Be concise and to the point.
---
You are roleplaying as {user_name}. Always respond from the following perspective and expertise. Attached are the images paired with the justification, roleplay as if this is your preference.
---
{formatted_preference})";

inline constexpr std::string_view kSummaryRemixer =
    R"(You are summarizing a collection of comments for a deliberation question: {question}. You will first receive the comments. Then, a discussion between people who wrote the comments will follow. You must focus on comprehensively summarizing the comments and use the discussion to better understand the viewpoints of the comments. Please do not mention the total number of comments. Do not refer to any specific comment in the summary. If you need to provide statistical information, use percentages instead of absolute numbers.

Here are the comments:

{comments_str}

Here is the discussion, use it to better understand the comments:

{history_str})";

inline constexpr std::string_view kDiscussionKickoff =
    R"(Welcome to the design discussion! Each of you has seen the same set of images but may have different preferences. Please discuss efficiently and work toward consensus on:

1. RANKING: Establish a ranked list of images from best to worst, considering both aesthetic appeal and alignment with the creative brief.

2. DESIGN IMPROVEMENT: Discuss how to enhance and combine the best elements from top 3 performing images. Consider:
   - Primary composition and layout structure from the strongest images
   - Visual elements that should be integrated or refined
   - Color schemes and typography that work best
   - Specific adjustments needed to balance different concerns

3. SYNTHESIS: Develop a cohesive approach that merges strengths from the top 3 performing images while addressing any weaknesses identified in the discussion. When you propose changes to improve, ground the instructions on top 3 performing images.

Share your reasoning and be open to different perspectives as you work toward both a final ranking and concrete design improvement directions.

Here is the creative brief for the task:

{brief})";

inline constexpr std::string_view kDesignRemixer =
    R"(You are a design summarization expert analyzing a roundtable discussion between design experts about image variants. Your task is to carefully read through the entire conversation and extract two key outputs:

1. **FINAL RANKING**: Identify the consensus ranking of images from best to worst

2. **EDITING DIRECTIONS**: Extract specific instructions for creating an improved design by combining elements from different images

## Analysis Instructions:

- Start from the END of the conversation and work backwards - the most recent messages contain the final consensus and should be given the highest priority. Early messages may contain initial disagreements or positions that were later changed.
- Focus on extracting the ultimate agreements on rankings and specific design recommendations that emerged at the conclusion of the discussion.

## Requirements for editing_directions string:

Write detailed instructions as if directing an AI image editing model. It should include the following fields, if mentioned. If the discussion does not touch on the relevant field, don't include the field in your instruction.

1. **Primary Composition**. Example templates include:

Use the overall layout and structure from Image [number], specifically [describe the compositional elements, positioning, or arrangement].

2. **Visual Elements Integration**. Example templates include:
   - Incorporate [specific visual element] from Image [number], such as [detailed description]
   - Add [specific design feature] from Image [number], particularly [detailed description]
   - Include [specific element] from Image [number], focusing on [detailed description]

3. **Color and Typography Refinements**. Example templates include:
   - Adopt the [color scheme/typography style] from Image [number], specifically [details]
   - Modify [specific aspect] using the approach seen in Image [number]

4. **Final Adjustments**. Example templates include:
   - Ensure [specific requirement based on discussion]
   - Balance [specific concern raised in discussion]
   - Maintain [specific positive aspect mentioned]

## Important Guidelines:

- Always reference images by their specific numbers (Image 1, Image 2, etc.)
- Be concrete and specific about visual elements (colors, positioning, typography, objects, etc.)
- Avoid vague language - use precise descriptions
- Focus on actionable instructions that an image editing AI could follow
- Only include elements and instructions that were actually discussed and agreed upon, never add your own novel thoughts
- If no clear consensus was reached, state this explicitly

## Example 'editing_directions':
"Incorporate the bold red CTA button from Image 3, positioning it in the lower-right corner as seen in Image 1, while maintaining the clean white background and centered product placement from Image 5."

Remember: Your output should be directly usable by downstream image editing systems, so precision and specificity are crucial.

## Output Format:

You must output your analysis in the following JSON structure:

```json
{
  "final_ranking": [
    {
      "rank": 1,
      "image_number": <image_number>,
      "reason": "<reason_for_ranking>"
    },
    {
      "rank": 2,
      "image_number": <image_number>,
      "reason": "<reason_for_ranking>"
    },
    {
      "rank": 3,
      "image_number": <image_number>,
      "reason": "<reason_for_ranking>"
    }
  ],
  "editing_directions": "<instructions>"
}

```)";

inline std::string_view body(TemplateId id) {
  switch (id) {
    case TemplateId::deliberation_proxy: return kDeliberationProxy;
    case TemplateId::design_proxy: return kDesignProxy;
    case TemplateId::summary_remixer: return kSummaryRemixer;
    case TemplateId::design_remixer: return kDesignRemixer;
    case TemplateId::discussion_kickoff: return kDiscussionKickoff;
  }
  return {};
}

}  // namespace defaults

struct PromptTemplate {
  TemplateId id = TemplateId::deliberation_proxy;
  std::string body;
};

// Placeholder names appearing in `body`, in order of first appearance.
inline std::vector<std::string> placeholders_in(std::string_view body) {
  static const std::regex kPattern(R"(\{([a-z_]+)\})");
  std::vector<std::string> out;
  std::string s(body);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kPattern); it != std::sregex_iterator();
       ++it) {
    std::string name = (*it)[1].str();
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
  }
  return out;
}

inline bool is_declared_placeholder(std::string_view name) {
  return std::find(kPlaceholderNames.begin(), kPlaceholderNames.end(), name) !=
         kPlaceholderNames.end();
}

// Throws TemplateError when the body uses an undeclared placeholder.
inline void check_template(const PromptTemplate& t) {
  for (const auto& name : placeholders_in(t.body)) {
    if (!is_declared_placeholder(name)) {
      throw TemplateError("template " + std::string(to_string(t.id)) +
                          " uses undeclared placeholder {" + name + "}");
    }
  }
}

// Single-pass substitution; substituted values are never rescanned. Every
// placeholder in `text` must be supplied.
inline std::string fill_placeholders(std::string_view text,
                                     const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      std::size_t close = i + 1;
      while (close < text.size() &&
             ((text[close] >= 'a' && text[close] <= 'z') || text[close] == '_')) {
        ++close;
      }
      if (close < text.size() && text[close] == '}' && close > i + 1) {
        std::string name(text.substr(i + 1, close - i - 1));
        auto it = values.find(name);
        if (it == values.end()) throw TemplateError("placeholder {" + name + "} left unfilled");
        out += it->second;
        i = close + 1;
        continue;
      }
    }
    out += text[i++];
  }
  return out;
}

// Splits a layered persona template into its sections.
inline std::vector<std::string> split_sections(std::string_view body) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = body.find(kSectionSeparator, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(body.substr(start));
      break;
    }
    out.emplace_back(body.substr(start, pos - start));
    start = pos + kSectionSeparator.size();
  }
  return out;
}

// The active template set. Starts from the built-in defaults; files named
// `<template_id>.txt` in a directory override them.
class TemplateLibrary {
 public:
  TemplateLibrary() {
    for (auto id : kAllTemplateIds) {
      templates_[static_cast<std::size_t>(id)] = PromptTemplate{id, std::string(defaults::body(id))};
    }
  }

  static TemplateLibrary builtin() { return TemplateLibrary{}; }

  // Returns the number of templates overridden from `dir`.
  std::size_t load_dir(const std::filesystem::path& dir) {
    std::size_t loaded = 0;
    for (auto id : kAllTemplateIds) {
      auto path = dir / (std::string(to_string(id)) + ".txt");
      if (!std::filesystem::exists(path)) continue;
      std::ifstream in(path, std::ios::binary);
      if (!in) throw TemplateError("cannot read " + path.string());
      std::ostringstream ss;
      ss << in.rdbuf();
      std::string body = ss.str();
      // Editors usually add a final newline; templates never end with one.
      while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
      PromptTemplate t{id, std::move(body)};
      check_template(t);
      templates_[static_cast<std::size_t>(id)] = std::move(t);
      ++loaded;
    }
    return loaded;
  }

  void write_dir(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& t : templates_) {
      std::ofstream out(dir / (std::string(to_string(t.id)) + ".txt"), std::ios::binary);
      out << t.body << '\n';
    }
  }

  const PromptTemplate& get(TemplateId id) const {
    return templates_[static_cast<std::size_t>(id)];
  }

 private:
  std::array<PromptTemplate, kAllTemplateIds.size()> templates_;
};

}  // namespace teamfusion
