#include <doctest.h>

#include <random>

#include "coverage_pilot/proposer.hpp"
#include "support.hpp"

using namespace cpilot;
using namespace cptest;

namespace {

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

ProposalContext context(const GridMap& m, const CoverageMap& cov, const Instruction& instr,
                        std::uint64_t seed = 0) {
  return ProposalContext{m, cov, instr, m.start(), seed, 0.95};
}

}  // namespace

TEST_SUITE("build_prompt") {
  TEST_CASE("generate on a fresh 3x3 map embeds map, start, instruction and format") {
    const GridMap m(3, 3, {{1, 1}}, {0, 0});
    const CoverageMap cov = launch_coverage(m);
    const Instruction instr("complete coverage");
    const std::string p = build_prompt(ProposerAction::generate(), m, cov, instr, {0, 0});
    CHECK(contains(p, "3 columns x 3 rows"));
    CHECK(contains(p, "Obstacle (no-fly) cells: [[1,1]]"));
    CHECK(contains(p, "[0, 0]"));
    CHECK(contains(p, "\"complete coverage\""));
    CHECK(contains(p, "Output format:"));
    CHECK(contains(p, "A..\n.#.\n..."));
  }

  TEST_CASE("regenerate feedback appears verbatim with the prior path") {
    const GridMap m(3, 3, {{1, 1}}, {0, 0});
    const CoverageMap cov = launch_coverage(m);
    const std::string fb = "Error: path enters no-fly zone at coordinates (m, n)";
    const Trajectory prior{{0, 0}, {0, 1}, {1, 1}};
    const std::string p =
        build_prompt(ProposerAction::regenerate(prior, fb), m, cov, Instruction("complete coverage"), {0, 0});
    CHECK(contains(p, fb));
    CHECK(contains(p, "[[0,0],[0,1],[1,1]]"));
  }

  TEST_CASE("each action uses its own directive") {
    const GridMap m = open_map(4, 4);
    const CoverageMap cov = launch_coverage(m);
    const Instruction instr("complete coverage");
    const Trajectory prior{{0, 0}, {0, 1}};
    const std::string g = build_prompt(ProposerAction::generate(), m, cov, instr, {0, 0});
    const std::string f = build_prompt(ProposerAction::finetune(prior), m, cov, instr, {0, 0});
    const std::string e = build_prompt(ProposerAction::evaluate(prior), m, cov, instr, {0, 0});
    CHECK(g != f);
    CHECK(f != e);
    CHECK(contains(e, "[[0,0],[0,1]]"));
    CHECK_FALSE(prompt_template_version().empty());
    for (ActionKind k : {ActionKind::Generate, ActionKind::Regenerate, ActionKind::Finetune, ActionKind::Evaluate}) {
      CHECK_FALSE(prompt_template(k).empty());
    }
  }

  TEST_CASE("same inputs give identical prompts") {
    const GridMap m = generate_map(6, 6, 0.15, 2);
    const CoverageMap cov = launch_coverage(m);
    const Instruction instr("search the top-left quadrant carefully");
    CHECK(build_prompt(ProposerAction::generate(), m, cov, instr, m.start()) ==
          build_prompt(ProposerAction::generate(), m, cov, instr, m.start()));
  }

  TEST_CASE("action invariants are enforced") {
    CHECK_NOTHROW(ProposerAction::generate().check());
    ProposerAction bad = ProposerAction::generate();
    bad.kind = ActionKind::Finetune;
    CHECK_THROWS_AS(bad.check(), std::invalid_argument);
    ProposerAction gen_with_prior = ProposerAction::finetune(Trajectory{{0, 0}});
    gen_with_prior.kind = ActionKind::Generate;
    CHECK_THROWS_AS(gen_with_prior.check(), std::invalid_argument);
    CHECK_THROWS_AS(Instruction(""), std::invalid_argument);
  }
}

TEST_SUITE("parse_reply") {
  TEST_CASE("bare payload") {
    const ProposerReply r = parse_reply(ActionKind::Generate, "[[0,0],[0,1],[0,2]]");
    REQUIRE(r.trajectory);
    CHECK(r.trajectory->size() == 3);
    CHECK(r.raw == "[[0,0],[0,1],[0,2]]");
  }

  TEST_CASE("20 prose-wrapped replies all parse to the embedded path") {
    struct Fixture {
      std::string text;
      std::vector<Cell> expect;
    };
    const std::vector<Fixture> corpus = {
        {"Here is the path: [[0,0],[1,0]] \xE2\x80\x94 it avoids all obstacles.", {{0, 0}, {1, 0}}},
        {"Sure! [[0,0],[0,1],[0,2]]", {{0, 0}, {0, 1}, {0, 2}}},
        {"```json\n[[0,0],[0,1]]\n```", {{0, 0}, {0, 1}}},
        {"Path:\n[ [0, 0], [1, 0], [2, 0] ]\nDone.", {{0, 0}, {1, 0}, {2, 0}}},
        {"I considered [3] options. Final: [[0,0],[0,1]]", {{0, 0}, {0, 1}}},
        {"The start is (0,0). Trajectory = [[0,0],[1,0],[1,1]].", {{0, 0}, {1, 0}, {1, 1}}},
        {"waypoints:[[2,3],[2,4]]", {{2, 3}, {2, 4}}},
        {"[[0,0]]", {{0, 0}}},
        {"Plan follows.\n\n[[0,0],\n [0,1],\n [0,2],\n [1,2]]\n\nThis covers row 0.",
         {{0, 0}, {0, 1}, {0, 2}, {1, 2}}},
        {"Answer: [[10,11],[10,12]] (rows then columns)", {{10, 11}, {10, 12}}},
        {"Not [1,2] but [[0,0],[0,1]]", {{0, 0}, {0, 1}}},
        {"[] is empty, so: [[4,4],[4,5]]", {{4, 4}, {4, 5}}},
        {"```\n[[0, 0], [0, 1]]\n```\nLet me know if you need changes.", {{0, 0}, {0, 1}}},
        {"My reasoning: avoid [[broken. Real path: [[1,1],[1,2]]", {{1, 1}, {1, 2}}},
        {"\t[[0,0],[1,0]]\t", {{0, 0}, {1, 0}}},
        {"Final answer -> [[5,5],[5,6],[6,6],[6,7]] <- end", {{5, 5}, {5, 6}, {6, 6}, {6, 7}}},
        {"The drone should go [[0,0],[0,1]] then hover.", {{0, 0}, {0, 1}}},
        {"First draft [[0,0],[9,9]]; revised [[0,0],[0,1]]", {{0, 0}, {9, 9}}},
        {"{\"path\": [[0,0],[1,0]]}", {{0, 0}, {1, 0}}},
        {"Path (JSON): [[0,0] , [0,1] ,[0,2]] \xE2\x9C\x93", {{0, 0}, {0, 1}, {0, 2}}},
    };
    REQUIRE(corpus.size() == 20);
    for (const auto& f : corpus) {
      CAPTURE(f.text);
      const ProposerReply r = parse_reply(ActionKind::Finetune, f.text);
      REQUIRE(r.trajectory);
      CHECK(r.trajectory->waypoints == f.expect);
      CHECK(r.raw == f.text);
    }
  }

  TEST_CASE("no payload is a parse error carrying the raw text") {
    try {
      parse_reply(ActionKind::Generate, "I cannot plan here.");
      FAIL("expected ReplyParseError");
    } catch (const ReplyParseError& e) {
      CHECK(e.raw() == "I cannot plan here.");
    }
    CHECK_THROWS_AS(parse_reply(ActionKind::Regenerate, "[[0,0],[1]]"), ReplyParseError);
    CHECK_THROWS_AS(parse_reply(ActionKind::Generate, ""), ReplyParseError);
  }

  TEST_CASE("evaluate replies need a unit score and a verdict") {
    const ProposerReply r = parse_reply(ActionKind::Evaluate, "Looks good.\nSCORE: 0.85\nVERDICT: STOP");
    CHECK(*r.compliance == doctest::Approx(0.85));
    CHECK(*r.explore_further == false);
    const ProposerReply c = parse_reply(ActionKind::Evaluate, "score 1 of 3 tries... SCORE: 0.4 VERDICT: CONTINUE");
    CHECK(*c.explore_further == true);
    CHECK_THROWS_AS(parse_reply(ActionKind::Evaluate, "SCORE: 7\nVERDICT: STOP"), ReplyParseError);
    CHECK_THROWS_AS(parse_reply(ActionKind::Evaluate, "SCORE: 0.5"), ReplyParseError);
  }

  TEST_CASE("parse after serialize is the identity on 1000 random valid trajectories") {
    std::mt19937_64 rng(1000);
    for (int trial = 0; trial < 1000; ++trial) {
      const GridMap m = generate_map(4 + trial % 9, 4 + trial % 7, 0.1, rng());
      const Trajectory t = random_walk(m, m.start(), 1 + static_cast<int>(rng() % 80), rng);
      REQUIRE(validate_path(m, t).valid);
      const ProposerReply r = parse_reply(ActionKind::Generate, trajectory_to_text(t));
      REQUIRE(r.trajectory);
      CHECK(*r.trajectory == t);
    }
  }
}

TEST_SUITE("heuristic_propose") {
  TEST_CASE("generate on an empty 3x3 from the corner is the serpentine") {
    const GridMap m = open_map(3, 3);
    const CoverageMap cov = launch_coverage(m);
    const Instruction instr("complete coverage");
    const ProposerReply r = heuristic_propose(ProposerAction::generate(), context(m, cov, instr, 0));
    REQUIRE(r.trajectory);
    CHECK(r.trajectory->waypoints == serpentine(3, 3).waypoints);
    const CoverageSets sets = coverage_sets(simulate_flight(cov, *r.trajectory), m);
    CHECK(sets.visited == 9);
    CHECK(sets.revisited == 0);
  }

  TEST_CASE("regenerate after a collision report passes validate_path") {
    const GridMap m = generate_map(8, 8, 0.2, 9);
    const CoverageMap cov = launch_coverage(m);
    const Instruction instr("complete coverage");
    std::vector<Cell> cells{m.start()};
    for (int c = 1; c < 8; ++c) cells.push_back({m.start().row, c});
    const Trajectory bad(cells);
    const ValidityReport report = validate_path(m, bad);
    REQUIRE_FALSE(report.valid);
    const ProposerReply r = heuristic_propose(ProposerAction::regenerate(bad, describe_violations(report)),
                                              context(m, cov, instr));
    REQUIRE(r.trajectory);
    CHECK(validate_path(m, *r.trajectory).valid);
    CHECK(r.trajectory->front() == m.start());
  }

  TEST_CASE("evaluate a full-coverage path under complete coverage says stop") {
    const GridMap m = open_map(5, 5);
    const CoverageMap cov = launch_coverage(m);
    const Instruction instr("complete coverage");
    const ProposerReply r =
        heuristic_propose(ProposerAction::evaluate(serpentine(5, 5)), context(m, cov, instr));
    REQUIRE(r.compliance);
    CHECK(*r.compliance >= 0.9);
    CHECK(*r.explore_further == false);
    // The raw text round-trips through the same parser a remote reply would use.
    const ProposerReply again = parse_reply(ActionKind::Evaluate, r.raw);
    CHECK(*again.compliance == doctest::Approx(*r.compliance));
  }

  TEST_CASE("evaluate of a short path asks for more exploration") {
    const GridMap m = open_map(5, 5);
    const CoverageMap cov = launch_coverage(m);
    const ProposerReply r = heuristic_propose(ProposerAction::evaluate(Trajectory{{0, 0}, {0, 1}}),
                                              context(m, cov, Instruction("complete coverage")));
    CHECK(*r.explore_further == true);
    CHECK(*r.compliance == doctest::Approx(2.0 / 25.0));
  }

  TEST_CASE("generate and regenerate are valid on 200 random connected maps") {
    std::mt19937_64 rng(200);
    const char* instructions[] = {"complete coverage", "rapid traversal to the bottom-right",
                                  "focus on the top-left quadrant", "search the lower left carefully"};
    for (int trial = 0; trial < 200; ++trial) {
      const GridMap m = generate_map(5 + trial % 6, 5 + trial % 5, 0.05 * (trial % 6), rng());
      const CoverageMap cov = launch_coverage(m);
      const Instruction instr(instructions[trial % 4]);
      const ProposerReply g = heuristic_propose(ProposerAction::generate(), context(m, cov, instr, rng()));
      REQUIRE(g.trajectory);
      CHECK(validate_path(m, *g.trajectory).valid);
      const Trajectory junk = random_walk(open_map(m.width(), m.height()), m.start(), 12, rng);
      const ValidityReport rep = validate_path(m, junk);
      const ProposerReply fixed = heuristic_propose(
          ProposerAction::regenerate(junk, rep.valid ? std::string("none") : describe_violations(rep)),
          context(m, cov, instr, trial));
      REQUIRE(fixed.trajectory);
      CHECK(validate_path(m, *fixed.trajectory).valid);
    }
  }

  TEST_CASE("pure function of its inputs") {
    const GridMap m = generate_map(9, 7, 0.15, 4);
    const CoverageMap cov = launch_coverage(m);
    const Instruction instr("quickly pass through the top-right");
    for (std::uint64_t seed : {0ull, 5ull, 77ull}) {
      const ProposerReply a = heuristic_propose(ProposerAction::generate(), context(m, cov, instr, seed));
      const ProposerReply b = heuristic_propose(ProposerAction::generate(), context(m, cov, instr, seed));
      CHECK(*a.trajectory == *b.trajectory);
      CHECK(a.raw == b.raw);
      const ProposerReply fa = heuristic_propose(ProposerAction::finetune(*a.trajectory), context(m, cov, instr, seed));
      const ProposerReply fb = heuristic_propose(ProposerAction::finetune(*a.trajectory), context(m, cov, instr, seed));
      CHECK(*fa.trajectory == *fb.trajectory);
    }
  }

  TEST_CASE("finetune keeps the start and stays flyable") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 50; ++trial) {
      const GridMap m = generate_map(8, 8, 0.15, rng());
      const CoverageMap cov = launch_coverage(m);
      const Instruction instr(trial % 2 ? "focus on the bottom-right" : "complete coverage");
      const Trajectory prior = *heuristic_propose(ProposerAction::generate(), context(m, cov, instr, trial)).trajectory;
      const ProposerReply r = heuristic_propose(ProposerAction::finetune(prior), context(m, cov, instr, trial));
      REQUIRE(r.trajectory);
      CHECK(r.trajectory->front() == m.start());
      CHECK(validate_path(m, *r.trajectory).valid);
    }
  }
}

TEST_SUITE("instruction intent") {
  TEST_CASE("keywords map to modes and quadrants") {
    CHECK(parse_intent("complete coverage") == InstructionIntent{InstructionMode::Complete, Region::Whole});
    CHECK(parse_intent("Rapid traversal") == InstructionIntent{InstructionMode::Rapid, Region::Whole});
    CHECK(parse_intent("focused area exploration of the top-left") ==
          InstructionIntent{InstructionMode::Focused, Region::TopLeft});
    CHECK(parse_intent("search quadrant III").region == Region::BottomLeft);
    CHECK(parse_intent("quadrant ii please").region == Region::TopLeft);
    CHECK(parse_intent("go to the lower right quickly") ==
          InstructionIntent{InstructionMode::Rapid, Region::BottomRight});
  }

  TEST_CASE("quadrant membership splits an odd grid by integer halves") {
    const GridMap m = open_map(5, 5);
    int counts[5] = {};
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 5; ++c)
        for (Region reg : {Region::TopLeft, Region::TopRight, Region::BottomLeft, Region::BottomRight})
          counts[static_cast<int>(reg)] += in_region(reg, m, {r, c});
    CHECK(counts[1] + counts[2] + counts[3] + counts[4] == 25);
    CHECK(in_region(Region::Whole, m, {4, 4}));
  }

  TEST_CASE("rapid compliance is one minus the dwell fraction") {
    const GridMap m = open_map(4, 4);
    const CoverageMap cov = launch_coverage(m);
    const Trajectory back_and_forth{{0, 0}, {0, 1}, {0, 0}, {0, 1}};
    // Steps 2 and 3 re-fly covered cells.
    CHECK(heuristic_compliance(parse_intent("rapid traversal"), m, cov, back_and_forth) ==
          doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("simulate_flight does not recount the current position") {
    const GridMap m = open_map(3, 1);
    const CoverageMap cov = launch_coverage(m);
    const CoverageMap after = simulate_flight(cov, Trajectory{{0, 0}, {0, 1}});
    CHECK(after.count({0, 0}) == 1);
    CHECK(after.count({0, 1}) == 1);
  }
}
