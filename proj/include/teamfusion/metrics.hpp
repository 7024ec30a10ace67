#pragma once

// Convergence and evaluation statistics: Kendall's W with its chi-square
// significance and agreement bins, before/after concordance deltas, and the
// order-randomized pairwise judge with win/tie/loss tallies.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "teamfusion/core.hpp"
#include "teamfusion/gateway.hpp"

namespace teamfusion {

// m rankers x n items; row i is ranker i's ranks in item order.
class RankMatrix {
 public:
  RankMatrix() = default;

  explicit RankMatrix(std::vector<std::vector<int>> ranks) : ranks_(std::move(ranks)) {
    for (std::size_t i = 0; i < ranks_.size(); ++i) {
      if (ranks_[i].size() != items() || !detail::is_permutation_of_1_to_n(ranks_[i])) {
        throw NonPermutationRow("row " + std::to_string(i) + " is not a permutation of 1.." +
                                std::to_string(items()));
      }
    }
  }

  std::size_t raters() const { return ranks_.size(); }
  std::size_t items() const { return ranks_.empty() ? 0 : ranks_.front().size(); }
  const std::vector<std::vector<int>>& rows() const { return ranks_; }

 private:
  std::vector<std::vector<int>> ranks_;
};

enum class AgreementBin { slight, fair, moderate, substantial, almost_perfect };

NLOHMANN_JSON_SERIALIZE_ENUM(AgreementBin, {{AgreementBin::slight, "slight"},
                                            {AgreementBin::fair, "fair"},
                                            {AgreementBin::moderate, "moderate"},
                                            {AgreementBin::substantial, "substantial"},
                                            {AgreementBin::almost_perfect, "almost_perfect"}})

inline constexpr std::size_t kBinCount = 5;

// [0,.2) slight, [.2,.4) fair, [.4,.6) moderate, [.6,.8) substantial,
// [.8,1] almost perfect.
inline AgreementBin bin_of(double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw DomainError("W must lie in [0, 1]");
  if (w < 0.2) return AgreementBin::slight;
  if (w < 0.4) return AgreementBin::fair;
  if (w < 0.6) return AgreementBin::moderate;
  if (w < 0.8) return AgreementBin::substantial;
  return AgreementBin::almost_perfect;
}

// Upper-tail probability of chi-square with n - 1 degrees of freedom at
// m (n - 1) w.
inline double chi_square_p(double w, std::size_t m, std::size_t n) {
  if (m < 2 || n < 2) throw DomainError("chi_square_p needs m >= 2 and n >= 2");
  if (!(w >= 0.0 && w <= 1.0)) throw DomainError("W must lie in [0, 1]");
  const double df = static_cast<double>(n - 1);
  const double chi2 = static_cast<double>(m) * df * w;
  if (chi2 == 0.0) return 1.0;
  return boost::math::gamma_q(df / 2.0, chi2 / 2.0);
}

struct ConcordanceReport {
  double w = 0;
  double s = 0;
  double chi_square = 0;
  std::size_t df = 0;
  double p_value = 1;
  AgreementBin bin = AgreementBin::slight;
  // The chi-square approximation is only reliable for n > 7.
  bool approximate = true;
};

inline void to_json(json& j, const ConcordanceReport& r) {
  j = json{{"w", r.w},         {"s", r.s},   {"chi_square", r.chi_square}, {"df", r.df},
           {"p_value", r.p_value}, {"bin", r.bin}, {"approximate", r.approximate}};
}

// W = 12 S / (m^2 (n^3 - n)), S the squared deviation of column rank sums
// about their mean. No tie correction.
inline ConcordanceReport kendalls_w(const RankMatrix& rm) {
  const std::size_t m = rm.raters();
  const std::size_t n = rm.items();
  if (m < 2 || n < 2) throw TooSmall("Kendall's W needs at least 2 rankers and 2 items");

  std::vector<long long> col_sums(n, 0);
  for (const auto& row : rm.rows()) {
    for (std::size_t j = 0; j < n; ++j) col_sums[j] += row[j];
  }
  // Work in doubled units so the mean m (n + 1) / 2 stays integral.
  const long long mean2 = static_cast<long long>(m) * static_cast<long long>(n + 1);
  long long s4 = 0;
  for (long long r : col_sums) {
    const long long d2 = 2 * r - mean2;
    s4 += d2 * d2;
  }
  ConcordanceReport out;
  out.s = static_cast<double>(s4) / 4.0;
  const double md = static_cast<double>(m);
  const double nd = static_cast<double>(n);
  out.w = std::clamp(12.0 * out.s / (md * md * (nd * nd * nd - nd)), 0.0, 1.0);
  out.df = n - 1;
  out.chi_square = md * static_cast<double>(out.df) * out.w;
  out.p_value = chi_square_p(out.w, m, n);
  out.bin = bin_of(out.w);
  out.approximate = n <= 7;
  return out;
}

struct ConcordanceDelta {
  double mean_before = 0;
  double mean_after = 0;
  std::vector<double> per_scenario_deltas;
  std::array<std::size_t, kBinCount> bins_before{};
  std::array<std::size_t, kBinCount> bins_after{};
};

inline void to_json(json& j, const ConcordanceDelta& d) {
  j = json{{"mean_before", d.mean_before},
           {"mean_after", d.mean_after},
           {"per_scenario_deltas", d.per_scenario_deltas},
           {"bins_before", d.bins_before},
           {"bins_after", d.bins_after}};
}

inline ConcordanceDelta concordance_delta(const std::vector<RankMatrix>& before,
                                          const std::vector<RankMatrix>& after) {
  if (before.size() != after.size()) {
    throw LengthMismatch("paired lists differ in length: " + std::to_string(before.size()) +
                         " vs " + std::to_string(after.size()));
  }
  ConcordanceDelta out;
  if (before.empty()) return out;
  double sum_b = 0;
  double sum_a = 0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const double wb = kendalls_w(before[i]).w;
    const double wa = kendalls_w(after[i]).w;
    sum_b += wb;
    sum_a += wa;
    out.per_scenario_deltas.push_back(wa - wb);
    ++out.bins_before[static_cast<std::size_t>(bin_of(wb))];
    ++out.bins_after[static_cast<std::size_t>(bin_of(wa))];
  }
  out.mean_before = sum_b / static_cast<double>(before.size());
  out.mean_after = sum_a / static_cast<double>(after.size());
  return out;
}

// ---------------------------------------------------------------------------
// Pairwise judging

enum class PresentedOrder { ab, ba };
enum class RawChoice { first, second, tie };
enum class Attributed { a_wins, b_wins, tie };

NLOHMANN_JSON_SERIALIZE_ENUM(PresentedOrder, {{PresentedOrder::ab, "ab"}, {PresentedOrder::ba, "ba"}})
NLOHMANN_JSON_SERIALIZE_ENUM(RawChoice, {{RawChoice::first, "first"},
                                         {RawChoice::second, "second"},
                                         {RawChoice::tie, "tie"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Attributed, {{Attributed::a_wins, "a_wins"},
                                          {Attributed::b_wins, "b_wins"},
                                          {Attributed::tie, "tie"}})

struct JudgeVerdict {
  std::string dimension;
  PresentedOrder presented_order = PresentedOrder::ab;
  RawChoice raw_choice = RawChoice::tie;
  Attributed attributed = Attributed::tie;
};

inline void to_json(json& j, const JudgeVerdict& v) {
  j = json{{"dimension", v.dimension},
           {"presented_order", v.presented_order},
           {"raw_choice", v.raw_choice},
           {"attributed", v.attributed}};
}

inline Attributed derandomize(PresentedOrder order, RawChoice choice) {
  if (choice == RawChoice::tie) return Attributed::tie;
  const bool first = choice == RawChoice::first;
  if (order == PresentedOrder::ab) return first ? Attributed::a_wins : Attributed::b_wins;
  return first ? Attributed::b_wins : Attributed::a_wins;
}

// Reads "first" / "second" / "tie" (or 1 / 2) from a judge reply.
inline RawChoice parse_choice(const std::string& reply) {
  std::string lower;
  for (char c : reply) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  auto has_word = [&](const std::string& w) {
    for (std::size_t pos = lower.find(w); pos != std::string::npos; pos = lower.find(w, pos + 1)) {
      const bool left = pos == 0 || !std::isalnum(static_cast<unsigned char>(lower[pos - 1]));
      const std::size_t end = pos + w.size();
      const bool right = end >= lower.size() || !std::isalnum(static_cast<unsigned char>(lower[end]));
      if (left && right) return true;
    }
    return false;
  };
  const bool first = has_word("first") || has_word("1");
  const bool second = has_word("second") || has_word("2");
  const bool tie = has_word("tie");
  if (tie && !first && !second) return RawChoice::tie;
  if (first && !second && !tie) return RawChoice::first;
  if (second && !first && !tie) return RawChoice::second;
  throw UnparseableChoice("cannot read a choice from judge reply: " + reply.substr(0, 80));
}

inline std::string deliverable_text(const Deliverable& d) {
  if (d.summary_text) return *d.summary_text;
  std::string out;
  if (d.final_ranking) {
    out += "Ranking:";
    for (const auto& r : *d.final_ranking) out += " Image " + std::to_string(r.option_number);
    out += "\n";
  }
  if (d.editing_directions) out += "Editing directions: " + *d.editing_directions;
  return out;
}

inline std::string render_judge_prompt(const std::string& first, const std::string& second,
                                       const std::string& dimension) {
  return "You are comparing two outputs on the dimension \"" + dimension +
         "\". Read both and decide which one is better on that dimension alone.\n\n"
         "Output 1:\n" + first + "\n\nOutput 2:\n" + second +
         "\n\nAnswer with exactly one word: first, second, or tie.";
}

// Presentation order is a fair coin from `rng`; the reply is mapped back to
// the underlying a/b before being returned.
template <typename Rng>
JudgeVerdict judge_pairwise(const Deliverable& a, const Deliverable& b,
                            const std::string& dimension, Rng& rng, ChatBackend& backend,
                            const std::string& model_id = "gpt-4.1-mini",
                            double temperature = 0.0) {
  JudgeVerdict v;
  v.dimension = dimension;
  v.presented_order = (rng() >> 63) == 0 ? PresentedOrder::ab : PresentedOrder::ba;
  const bool ab = v.presented_order == PresentedOrder::ab;
  const std::string ta = deliverable_text(a);
  const std::string tb = deliverable_text(b);

  ChatCall call;
  call.purpose = CallPurpose::judge;
  call.system_prompt = render_judge_prompt(ab ? ta : tb, ab ? tb : ta, dimension);
  call.model_id = model_id;
  call.temperature = temperature;
  std::string reply;
  try {
    reply = backend.chat(call).text;
  } catch (const std::exception& e) {
    throw BackendFailure(0, e.what());
  }
  v.raw_choice = parse_choice(reply);
  v.attributed = derandomize(v.presented_order, v.raw_choice);
  return v;
}

struct WinTieLoss {
  int win = 0;
  int tie = 0;
  int loss = 0;

  friend bool operator==(const WinTieLoss&, const WinTieLoss&) = default;
};

// Integer percentages summing to exactly 100. Floors first, then the leftover
// points go to the largest remainders; equal remainders favour win, then tie,
// then loss.
inline WinTieLoss largest_remainder_percent(std::size_t wins, std::size_t ties,
                                            std::size_t losses) {
  const std::size_t total = wins + ties + losses;
  if (total == 0) throw EmptyInput("no verdicts to tally");
  std::array<std::size_t, 3> counts{wins, ties, losses};
  std::array<int, 3> pct{};
  std::array<std::size_t, 3> rem{};
  int assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    pct[i] = static_cast<int>(counts[i] * 100 / total);
    rem[i] = counts[i] * 100 % total;
    assigned += pct[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return rem[x] > rem[y]; });
  for (int i = 0; assigned < 100; ++i, ++assigned) ++pct[order[static_cast<std::size_t>(i)]];
  return {pct[0], pct[1], pct[2]};
}

struct DimensionTally {
  std::string dimension;
  std::size_t wins = 0;
  std::size_t ties = 0;
  std::size_t losses = 0;
  WinTieLoss percent;
};

// Per-dimension win/tie/loss percentages from a's perspective, in order of
// first appearance.
inline std::vector<DimensionTally> tally_wtl(const std::vector<JudgeVerdict>& verdicts) {
  if (verdicts.empty()) throw EmptyInput("no verdicts to tally");
  std::vector<DimensionTally> out;
  for (const auto& v : verdicts) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const DimensionTally& t) { return t.dimension == v.dimension; });
    if (it == out.end()) {
      out.push_back({v.dimension, 0, 0, 0, {}});
      it = out.end() - 1;
    }
    switch (v.attributed) {
      case Attributed::a_wins: ++it->wins; break;
      case Attributed::tie: ++it->ties; break;
      case Attributed::b_wins: ++it->losses; break;
    }
  }
  for (auto& t : out) t.percent = largest_remainder_percent(t.wins, t.ties, t.losses);
  return out;
}

inline json tally_to_json(const std::vector<DimensionTally>& tallies) {
  json arr = json::array();
  for (const auto& t : tallies) {
    arr.push_back({{"dimension", t.dimension},
                   {"counts", {{"win", t.wins}, {"tie", t.ties}, {"loss", t.losses}}},
                   {"percent", {{"win", t.percent.win}, {"tie", t.percent.tie}, {"loss", t.percent.loss}}}});
  }
  return arr;
}

// Plain-text table: one row per dimension, "W / T / L" percentages.
inline std::string format_wtl_table(const std::vector<DimensionTally>& tallies,
                                    const std::string& row_label = "TeamFusion") {
  std::ostringstream out;
  std::size_t width = 10;
  for (const auto& t : tallies) width = std::max(width, t.dimension.size() + 2);
  out << std::left << std::setw(static_cast<int>(row_label.size() + 2)) << "";
  for (const auto& t : tallies) out << std::setw(static_cast<int>(width)) << t.dimension;
  out << "\n" << std::setw(static_cast<int>(row_label.size() + 2)) << row_label;
  for (const auto& t : tallies) {
    std::ostringstream cell;
    cell << t.percent.win << " / " << t.percent.tie << " / " << t.percent.loss;
    out << std::setw(static_cast<int>(width)) << cell.str();
  }
  out << "\n(Win / Tie / Loss, %)\n";
  return out.str();
}

}  // namespace teamfusion
