#include "coverage_pilot/proposer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "coverage_pilot/json_io.hpp"

namespace cpilot {

namespace {
#include "prompt_templates.inc"  // generated from prompts/*.txt

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void replace_all(std::string& text, std::string_view key, const std::string& value) {
  for (std::size_t pos = text.find(key); pos != std::string::npos;
       pos = text.find(key, pos + value.size())) {
    text.replace(pos, key.size(), value);
  }
}

std::string map_section(const GridMap& map, const CoverageMap& coverage, Cell start) {
  std::ostringstream out;
  out << "Grid: " << map.width() << " columns x " << map.height()
      << " rows. Cells are addressed as [row, col] with [0, 0] at the top-left corner.\n";
  out << "Obstacle (no-fly) cells: " << trajectory_to_text(Trajectory(map.obstacles())) << "\n";
  std::vector<Cell> visited;
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      if (coverage.count({r, c}) > 0) visited.push_back({r, c});
    }
  }
  out << "Already visited cells: " << trajectory_to_text(Trajectory(visited)) << "\n";
  out << "Coverage map (A = vehicle, # = obstacle, v = visited, . = unvisited):\n";
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      const Cell cell{r, c};
      char ch = '.';
      if (cell == start) {
        ch = 'A';
      } else if (map.is_obstacle(cell)) {
        ch = '#';
      } else if (coverage.count(cell) > 0) {
        ch = 'v';
      }
      out << ch;
    }
    out << "\n";
  }
  std::string text = out.str();
  text.pop_back();
  return text;
}

constexpr std::string_view kTrajectoryFormat =
    "Output format: reply with one JSON array of [row, col] waypoints that begins at the current "
    "position, for example [[0,0],[0,1],[1,1]]. Consecutive waypoints must be four-connected "
    "neighbours (up, down, left or right).";
constexpr std::string_view kEvaluateFormat =
    "Output format: reply with a line `SCORE: <number between 0 and 1>` and a line "
    "`VERDICT: CONTINUE` if further exploration is required, otherwise `VERDICT: STOP`.";

// Manual scanner for "[[int,int],...]" starting at `pos`; returns one past the closing bracket.
struct Cursor {
  std::string_view s;
  std::size_t pos;

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }
  bool eat(char ch) {
    skip_ws();
    if (pos < s.size() && s[pos] == ch) {
      ++pos;
      return true;
    }
    return false;
  }
  std::optional<int> integer() {
    skip_ws();
    std::size_t p = pos;
    bool negative = false;
    if (p < s.size() && s[p] == '-') {
      negative = true;
      ++p;
    }
    const std::size_t digits_start = p;
    long long value = 0;
    while (p < s.size() && std::isdigit(static_cast<unsigned char>(s[p]))) {
      value = value * 10 + (s[p] - '0');
      if (value > 1'000'000) return std::nullopt;
      ++p;
    }
    if (p == digits_start) return std::nullopt;
    pos = p;
    return static_cast<int>(negative ? -value : value);
  }
};

std::optional<Trajectory> parse_array_at(std::string_view s, std::size_t start) {
  Cursor cur{s, start};
  if (!cur.eat('[')) return std::nullopt;
  Trajectory out;
  do {
    if (!cur.eat('[')) return std::nullopt;
    auto row = cur.integer();
    if (!row || !cur.eat(',')) return std::nullopt;
    auto col = cur.integer();
    if (!col || !cur.eat(']')) return std::nullopt;
    out.waypoints.push_back({*row, *col});
  } while (cur.eat(','));
  if (!cur.eat(']')) return std::nullopt;
  return out;
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

// Position of `word` as a whole word in `text` at or after `from`.
std::size_t find_word(const std::string& text, std::string_view word, std::size_t from = 0) {
  for (std::size_t pos = text.find(word, from); pos != std::string::npos;
       pos = text.find(word, pos + 1)) {
    const bool left = pos == 0 || !is_word_char(text[pos - 1]);
    const bool right = pos + word.size() >= text.size() || !is_word_char(text[pos + word.size()]);
    if (left && right) return pos;
  }
  return std::string::npos;
}

std::optional<double> first_unit_score(const std::string& text, std::size_t from) {
  for (std::size_t i = from; i < text.size(); ++i) {
    const char c = text[i];
    const bool starts_number = std::isdigit(static_cast<unsigned char>(c)) ||
                               (c == '.' && i + 1 < text.size() &&
                                std::isdigit(static_cast<unsigned char>(text[i + 1])));
    if (!starts_number) continue;
    if (i > 0 && (is_word_char(text[i - 1]) || text[i - 1] == '.')) continue;
    std::size_t j = i;
    while (j < text.size() &&
           (std::isdigit(static_cast<unsigned char>(text[j])) || text[j] == '.')) {
      ++j;
    }
    std::string token = text.substr(i, j - i);
    while (!token.empty() && token.back() == '.') token.pop_back();
    char* end = nullptr;
    const double value = std::strtod(token.c_str(), &end);
    const bool whole = end != nullptr && *end == '\0';
    const bool percent = j < text.size() && text[j] == '%';
    if (whole && !percent && value >= 0.0 && value <= 1.0) return value;
    i = j;
  }
  return std::nullopt;
}

std::optional<bool> verdict_token(const std::string& raw) {
  const std::string low = lower(raw);
  if (std::size_t label = low.find("verdict"); label != std::string::npos) {
    const std::size_t c = find_word(low, "continue", label);
    const std::size_t s = find_word(low, "stop", label);
    if (c != std::string::npos || s != std::string::npos) return c < s;
  }
  const std::size_t c = find_word(raw, "CONTINUE");
  const std::size_t s = find_word(raw, "STOP");
  if (c != std::string::npos || s != std::string::npos) return c < s;
  return std::nullopt;
}

}  // namespace

Instruction::Instruction(std::string text_in, int issued_at_in)
    : text(std::move(text_in)), issued_at(issued_at_in) {
  if (std::all_of(text.begin(), text.end(),
                  [](unsigned char c) { return std::isspace(c) != 0; })) {
    throw std::invalid_argument("instruction text must not be empty");
  }
}

std::string to_string(ActionKind kind) {
  switch (kind) {
    case ActionKind::Generate: return "generate";
    case ActionKind::Regenerate: return "regenerate";
    case ActionKind::Finetune: return "finetune";
    case ActionKind::Evaluate: return "evaluate";
  }
  return "?";
}

ActionKind parse_action_kind(std::string_view name) {
  const std::string n = lower(name);
  if (n == "generate" || n == "a1") return ActionKind::Generate;
  if (n == "regenerate" || n == "a2") return ActionKind::Regenerate;
  if (n == "finetune" || n == "a3") return ActionKind::Finetune;
  if (n == "evaluate" || n == "a4") return ActionKind::Evaluate;
  throw std::invalid_argument("unknown action '" + std::string(name) + "'");
}

void ProposerAction::check() const {
  switch (kind) {
    case ActionKind::Generate:
      if (prior || feedback) throw std::invalid_argument("generate carries no prior or feedback");
      break;
    case ActionKind::Regenerate:
      if (!prior || !feedback) throw std::invalid_argument("regenerate needs a prior and feedback");
      break;
    case ActionKind::Finetune:
    case ActionKind::Evaluate:
      if (!prior) throw std::invalid_argument(to_string(kind) + " needs a prior trajectory");
      break;
  }
}

std::string_view prompt_template(ActionKind kind) {
  switch (kind) {
    case ActionKind::Generate: return kPromptGenerate;
    case ActionKind::Regenerate: return kPromptRegenerate;
    case ActionKind::Finetune: return kPromptFinetune;
    case ActionKind::Evaluate: return kPromptEvaluate;
  }
  return {};
}

std::string_view prompt_template_version() { return kPromptVersion; }

std::string build_prompt(const ProposerAction& action, const GridMap& map,
                         const CoverageMap& coverage, const Instruction& instruction, Cell start) {
  action.check();
  std::string text(prompt_template(action.kind));
  std::string feedback_block;
  if (action.feedback && !action.feedback->empty()) {
    feedback_block = "\nFeedback from the constraint checker:\n" + *action.feedback + "\n";
  }
  replace_all(text, "{{map}}", map_section(map, coverage, start));
  replace_all(text, "{{instruction}}", instruction.text);
  replace_all(text, "{{start}}", "[" + std::to_string(start.row) + ", " + std::to_string(start.col) + "]");
  replace_all(text, "{{prior}}", action.prior ? trajectory_to_text(*action.prior) : std::string());
  replace_all(text, "{{feedback_block}}", feedback_block);
  replace_all(text, "{{feedback}}", action.feedback.value_or(""));
  replace_all(text, "{{format}}", std::string(action.kind == ActionKind::Evaluate ? kEvaluateFormat
                                                                                   : kTrajectoryFormat));
  return text;
}

std::string trajectory_to_text(const Trajectory& t) {
  std::string out = "[";
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i > 0) out += ",";
    out += "[" + std::to_string(t[i].row) + "," + std::to_string(t[i].col) + "]";
  }
  out += "]";
  return out;
}

std::optional<Trajectory> extract_trajectory(std::string_view raw) {
  for (std::size_t pos = raw.find('['); pos != std::string_view::npos; pos = raw.find('[', pos + 1)) {
    if (auto t = parse_array_at(raw, pos); t && !t->empty()) return t;
  }
  return std::nullopt;
}

ProposerReply parse_reply(ActionKind kind, const std::string& raw) {
  ProposerReply reply;
  reply.raw = raw;
  if (yields_trajectory(kind)) {
    reply.trajectory = extract_trajectory(raw);
    if (!reply.trajectory) throw ReplyParseError("no waypoint array found in proposer output", raw);
    return reply;
  }
  const std::string low = lower(raw);
  std::size_t from = 0;
  if (std::size_t label = low.find("score"); label != std::string::npos) from = label;
  reply.compliance = first_unit_score(raw, from);
  if (!reply.compliance && from != 0) reply.compliance = first_unit_score(raw, 0);
  reply.explore_further = verdict_token(raw);
  if (!reply.compliance) throw ReplyParseError("no compliance score in [0, 1] found", raw);
  if (!reply.explore_further) throw ReplyParseError("no CONTINUE/STOP verdict found", raw);
  return reply;
}

InstructionIntent parse_intent(std::string_view text) {
  const std::string t = lower(text);
  InstructionIntent intent;

  struct Alias {
    std::string_view phrase;
    Region region;
  };
  // Longer quadrant numerals first so "quadrant iii" is not read as "quadrant ii".
  static constexpr Alias kAliases[] = {
      {"top-left", Region::TopLeft},         {"top left", Region::TopLeft},
      {"upper left", Region::TopLeft},       {"upper-left", Region::TopLeft},
      {"northwest", Region::TopLeft},        {"top-right", Region::TopRight},
      {"top right", Region::TopRight},       {"upper right", Region::TopRight},
      {"upper-right", Region::TopRight},     {"northeast", Region::TopRight},
      {"bottom-left", Region::BottomLeft},   {"bottom left", Region::BottomLeft},
      {"lower left", Region::BottomLeft},    {"lower-left", Region::BottomLeft},
      {"southwest", Region::BottomLeft},     {"bottom-right", Region::BottomRight},
      {"bottom right", Region::BottomRight}, {"lower right", Region::BottomRight},
      {"lower-right", Region::BottomRight},  {"southeast", Region::BottomRight},
      {"quadrant iii", Region::BottomLeft},  {"quadrant iv", Region::BottomRight},
      {"quadrant ii", Region::TopLeft},      {"quadrant i", Region::TopRight},
      {"quadrant 1", Region::TopRight},      {"quadrant 2", Region::TopLeft},
      {"quadrant 3", Region::BottomLeft},    {"quadrant 4", Region::BottomRight},
  };
  for (const auto& alias : kAliases) {
    if (find_word(t, alias.phrase) != std::string::npos) {
      intent.region = alias.region;
      break;
    }
  }

  static constexpr std::string_view kRapid[] = {"quick", "quickly", "rapid", "rapidly", "fast",
                                                "pass through", "traverse", "transit", "hurry"};
  static constexpr std::string_view kFocused[] = {"careful", "carefully", "focus", "focused",
                                                  "thorough", "thoroughly", "detailed", "closely"};
  const auto any_of = [&](const auto& words) {
    return std::any_of(std::begin(words), std::end(words),
                       [&](std::string_view w) { return find_word(t, w) != std::string::npos; });
  };
  if (any_of(kRapid)) {
    intent.mode = InstructionMode::Rapid;
  } else if (any_of(kFocused) || intent.region != Region::Whole) {
    intent.mode = InstructionMode::Focused;
  }
  return intent;
}

std::string to_string(Region region) {
  switch (region) {
    case Region::Whole: return "whole";
    case Region::TopLeft: return "top-left";
    case Region::TopRight: return "top-right";
    case Region::BottomLeft: return "bottom-left";
    case Region::BottomRight: return "bottom-right";
  }
  return "?";
}

bool in_region(Region region, const GridMap& map, Cell c) {
  const bool top = c.row < (map.height() + 1) / 2;
  const bool left = c.col < (map.width() + 1) / 2;
  switch (region) {
    case Region::Whole: return true;
    case Region::TopLeft: return top && left;
    case Region::TopRight: return top && !left;
    case Region::BottomLeft: return !top && left;
    case Region::BottomRight: return !top && !left;
  }
  return false;
}

CoverageMap simulate_flight(const CoverageMap& coverage, const Trajectory& path) {
  CountArray counts = coverage.counts();
  for (std::size_t i = 1; i < path.size(); ++i) counts(path[i].row, path[i].col) += 1;
  return CoverageMap(std::move(counts));
}

double heuristic_compliance(const InstructionIntent& intent, const GridMap& map,
                            const CoverageMap& coverage, const Trajectory& path) {
  if (path.empty()) return 0.0;
  const CoverageMap after = simulate_flight(coverage, path);
  if (intent.mode == InstructionMode::Rapid) {
    const std::size_t steps = path.size() - 1;
    if (steps == 0) return 1.0;
    std::size_t dwell = 0;
    if (intent.region == Region::Whole) {
      // Without a named area, time spent re-flying covered cells counts as dwell.
      CountArray seen = coverage.counts();
      for (std::size_t i = 1; i < path.size(); ++i) {
        if (seen(path[i].row, path[i].col) > 0) ++dwell;
        seen(path[i].row, path[i].col) += 1;
      }
    } else {
      for (std::size_t i = 1; i < path.size(); ++i) {
        if (in_region(intent.region, map, path[i])) ++dwell;
      }
    }
    return 1.0 - static_cast<double>(dwell) / static_cast<double>(steps);
  }
  int total = 0, covered = 0;
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      const Cell cell{r, c};
      if (map.is_obstacle(cell) || !in_region(intent.region, map, cell)) continue;
      ++total;
      covered += after.count(cell) > 0 ? 1 : 0;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(covered) / static_cast<double>(total);
}

}  // namespace cpilot
