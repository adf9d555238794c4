#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "augdr/corpus.hpp"
#include "augdr/supervision.hpp"
#include "support.hpp"

using namespace augdr;

namespace {

// Depth-n list over ids "<prefix><i>" with strictly decreasing scores.
RankedList synthetic_list(const std::string& qid, const std::string& tid,
                          const std::string& prefix, std::size_t n, std::size_t offset = 0) {
  std::vector<std::pair<std::string, double>> cands;
  for (std::size_t i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03zu", i + offset);
    cands.emplace_back(prefix + buf, 100.0 - static_cast<double>(i));
  }
  return make_ranked_list(qid, tid, std::move(cands), n);
}

SupervisionPool three_teacher_pool(const std::vector<std::string>& qids) {
  SupervisionPool pool({"t1", "t2", "t3"}, 50);
  for (const auto& q : qids) {
    pool.add(synthetic_list(q, "t1", "a", 50));
    pool.add(synthetic_list(q, "t2", "a", 50, 5));  // overlaps t1 on ranks 1..5
    pool.add(synthetic_list(q, "t3", "c", 50));
  }
  return pool;
}

std::vector<std::string> ids_of(const RankedList& list) {
  std::vector<std::string> out;
  for (const auto& e : list.entries) out.push_back(e.passage_id);
  return out;
}

}  // namespace

TEST_CASE("fusion worked example") {
  RankedList a = make_ranked_list("q", "A", {{"d1", 2.0}, {"d2", 1.0}}, 10);
  RankedList b = make_ranked_list("q", "B", {{"d2", 10.0}, {"d3", 0.0}}, 10);
  auto fused = fuse_lists({a, b}, FusionConfig{{{"A", 1.0}, {"B", 1.0}}}, 10);
  CHECK(ids_of(fused) == std::vector<std::string>{"d1", "d2", "d3"});
  CHECK(fused.entries[0].score == 1.0);
  CHECK(fused.entries[1].score == 1.0);
  CHECK(fused.entries[2].score == 0.0);
  CHECK(fused.teacher_id == kFusedTeacherId);
  fused.validate();
}

TEST_CASE("fusion with one positive weight preserves that teacher's order") {
  RankedList a = synthetic_list("q", "A", "x", 30);
  RankedList b = synthetic_list("q", "B", "y", 30);
  CHECK(ids_of(fuse_lists({a}, FusionConfig{{{"A", 1.0}}}, 30)) == ids_of(a));
  CHECK(ids_of(fuse_lists({a, b}, FusionConfig{{{"A", 0.7}, {"B", 0.0}}}, 30)) == ids_of(a));
  CHECK(fuse_lists({a, b}, FusionConfig{{{"A", 1.0}, {"B", 1.0}}}, 20).size() == 20);
}

TEST_CASE("fusion edge cases") {
  RankedList single = make_ranked_list("q", "A", {{"d9", -3.0}}, 10);
  auto fused = fuse_lists({single}, FusionConfig{{{"A", 2.0}}}, 10);
  REQUIRE(fused.size() == 1);
  CHECK(fused.entries[0].score == 2.0);
  RankedList a = make_ranked_list("q", "A", {{"d1", 1.0}}, 10);
  RankedList other = make_ranked_list("q2", "B", {{"d1", 1.0}}, 10);
  CHECK_THROWS(fuse_lists({a, other}, FusionConfig{{{"A", 1.0}, {"B", 1.0}}}, 10));
  CHECK_THROWS(FusionConfig{{{"A", 0.0}}}.validate_for({"A"}));
  CHECK_THROWS(FusionConfig{{{"A", 1.0}}}.validate_for({"A", "B"}));
  CHECK_THROWS(FusionConfig{{{"A", -1.0}, {"B", 1.0}}}.validate_for({"A", "B"}));
}

TEST_CASE("pool stores truncated lists") {
  SupervisionPool pool({"t1", "t2"}, 20);
  pool.add(synthetic_list("q", "t1", "a", 50));
  CHECK(pool.find("q", "t1")->size() == 20);
  CHECK(pool.find("q", "t2") == nullptr);
  CHECK_THROWS(pool.add(synthetic_list("q", "t9", "a", 5)));
  CHECK_THROWS(SupervisionPool({"t1", "t1"}, 20));
  CHECK(pool.query_ids() == std::vector<std::string>{"q"});
}

TEST_CASE("select_supervision strategies") {
  auto pool = three_teacher_pool({"q"});
  Rng rng(11);
  SUBCASE("progressive T=1 always picks the first teacher") {
    for (int i = 0; i < 500; ++i) {
      CHECK(select_supervision(pool, "q", 1, SupervisionStrategy::progressive, rng)->teacher_id == "t1");
    }
  }
  SUBCASE("progressive T=2 never reaches the third teacher") {
    std::set<std::string> seen;
    for (int i = 0; i < 2000; ++i) {
      seen.insert(select_supervision(pool, "q", 2, SupervisionStrategy::progressive, rng)->teacher_id);
    }
    CHECK(seen == std::set<std::string>{"t1", "t2"});
  }
  SUBCASE("uniform over two teachers is balanced") {
    SupervisionPool two({"t1", "t2"}, 50);
    two.add(synthetic_list("q", "t1", "a", 50));
    two.add(synthetic_list("q", "t2", "b", 50));
    int first = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      first += select_supervision(two, "q", 1, SupervisionStrategy::uniform, rng)->teacher_id == "t1";
    }
    CHECK(std::abs(first / static_cast<double>(draws) - 0.5) <= 0.02);
  }
  SUBCASE("fused uses the stored fused list") {
    CHECK(select_supervision(pool, "q", 1, SupervisionStrategy::fused, rng) == nullptr);
    fuse_pool(pool, FusionConfig{{{"t1", 1.0}, {"t2", 1.0}, {"t3", 1.0}}});
    CHECK(select_supervision(pool, "q", 1, SupervisionStrategy::fused, rng)->teacher_id == "fused");
  }
  SUBCASE("missing list yields nullptr") {
    CHECK(select_supervision(pool, "nope", 1, SupervisionStrategy::progressive, rng) == nullptr);
  }
  CHECK_THROWS(select_supervision(pool, "q", 4, SupervisionStrategy::progressive, rng));
  CHECK_THROWS(select_supervision(pool, "q", 0, SupervisionStrategy::progressive, rng));
}

TEST_CASE("sample_triplet respects the rank windows") {
  auto list = synthetic_list("q", "t1", "a", 50);
  SamplerConfig cfg;
  Rng rng(3);
  std::map<std::string, std::size_t> rank_of;
  for (const auto& e : list.entries) rank_of[e.passage_id] = e.rank;
  std::set<std::size_t> pos_seen, neg_seen;
  for (int i = 0; i < 10000; ++i) {
    auto out = sample_triplet(list, cfg, rng);
    REQUIRE(out.triplet);
    const auto pr = rank_of.at(out.triplet->positive_id);
    const auto nr = rank_of.at(out.triplet->negative_id);
    CHECK((pr >= 1 && pr <= 10));
    CHECK((nr >= 46 && nr <= 50));
    pos_seen.insert(pr);
    neg_seen.insert(nr);
  }
  CHECK(pos_seen.size() == 10);
  CHECK(neg_seen.size() == 5);
}

TEST_CASE("sample_triplet short lists") {
  SamplerConfig cfg;
  Rng rng(5);
  CHECK_FALSE(sample_triplet(synthetic_list("q", "t", "a", 10), cfg, rng).triplet);
  CHECK_FALSE(sample_triplet(synthetic_list("q", "t", "a", 14), cfg, rng).triplet);
  CHECK_FALSE(sample_triplet(synthetic_list("q", "t", "a", 10), cfg, rng).skip_reason.empty());
  auto list = synthetic_list("q", "t", "a", 20);
  for (int i = 0; i < 500; ++i) {
    auto out = sample_triplet(list, cfg, rng);
    REQUIRE(out.triplet);
    const auto neg = std::stoi(out.triplet->negative_id.substr(1));
    CHECK((neg >= 15 && neg <= 19));  // ranks 16..20
  }
}

TEST_CASE("top-1 positive") {
  SamplerConfig cfg;
  cfg.pos_top_k = 1;
  Rng rng(9);
  auto list = synthetic_list("q", "t", "a", 50);
  for (int i = 0; i < 200; ++i) CHECK(sample_triplet(list, cfg, rng).triplet->positive_id == "a000");
}

TEST_CASE("sampler config invariants") {
  CHECK_NOTHROW(SamplerConfig{}.validate());
  CHECK_THROWS(SamplerConfig{0, 46, 50, 0}.validate());
  CHECK_THROWS(SamplerConfig{10, 10, 50, 0}.validate());
  CHECK_THROWS(SamplerConfig{10, 46, 45, 0}.validate());
}

TEST_CASE("positive probability formula") {
  SupervisionPool pool({"t1", "t2", "t3"}, 50);
  pool.add(synthetic_list("q", "t1", "a", 50));
  pool.add(synthetic_list("q", "t2", "a", 50));
  pool.add(synthetic_list("q", "t3", "a", 50, 9));  // shares only a009 with the top-10s above
  auto probs = positive_probability(pool, "q", 3, 10);
  std::map<std::string, double> by_id;
  double total = 0.0;
  for (const auto& p : probs) {
    by_id[p.passage_id] = p.probability;
    total += p.probability;
  }
  CHECK(by_id.at("a009") == doctest::Approx(1.0 / 10.0).epsilon(1e-12));
  CHECK(by_id.at("a018") == doctest::Approx(1.0 / 30.0).epsilon(1e-12));
  CHECK(by_id.at("a000") == doctest::Approx(2.0 / 30.0).epsilon(1e-12));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(probs.front().passage_id == "a009");
  // Equal probability: a higher reciprocal-rank sum comes first.
  CHECK(probs[1].passage_id == "a000");
  for (std::size_t i = 1; i < probs.size(); ++i) CHECK(probs[i - 1].probability >= probs[i].probability);
}

TEST_CASE("positive probability matches sampling frequencies") {
  auto pool = three_teacher_pool({"q"});
  SamplerConfig cfg;
  Rng rng(17);
  const int draws = 200000;
  std::map<std::string, double> counts;
  for (int i = 0; i < draws; ++i) {
    const auto* list = select_supervision(pool, "q", 3, SupervisionStrategy::progressive, rng);
    counts[sample_triplet(*list, cfg, rng).triplet->positive_id] += 1.0;
  }
  for (const auto& p : positive_probability(pool, "q", 3, 10)) {
    CAPTURE(p.passage_id);
    CHECK(std::abs(counts[p.passage_id] / draws - p.probability) < 0.005);
  }
}

TEST_CASE("supervision diversity") {
  SUBCASE("single teacher") {
    auto pool = three_teacher_pool({"q1", "q2"});
    CHECK(supervision_diversity(pool, 1, 10) == 10.0);
    CHECK(supervision_diversity(pool, 2, 10) == 15.0);
    CHECK(supervision_diversity(pool, 3, 10) == 25.0);
  }
  SUBCASE("identical teachers") {
    SupervisionPool pool({"t1", "t2"}, 50);
    pool.add(synthetic_list("q", "t1", "a", 50));
    pool.add(synthetic_list("q", "t2", "a", 50));
    CHECK(supervision_diversity(pool, 2, 10) == 10.0);
  }
  SUBCASE("disjoint teachers") {
    SupervisionPool pool({"t1", "t2"}, 50);
    pool.add(synthetic_list("q", "t1", "a", 50));
    pool.add(synthetic_list("q", "t2", "b", 50));
    CHECK(supervision_diversity(pool, 2, 10) == 20.0);
  }
  SupervisionPool pool({"t1"}, 20);
  CHECK_THROWS(supervision_diversity(pool, 1, 21));
}

TEST_CASE("training stream counting and determinism") {
  auto pool = three_teacher_pool({"q1", "q2"});
  Schedule schedule{SupervisionStrategy::progressive, 1, 2, 2, 1};
  SamplerConfig sampler;
  sampler.seed = 42;
  auto stream = emit_training_stream(pool, {"q1", "q2"}, schedule, sampler);
  CHECK(stream.triplets.size() == 8);
  CHECK(stream.epochs.size() == 8);
  CHECK(stream.skipped.empty());
  for (const auto& t : stream.triplets) {
    if (t.iteration == 1) CHECK(t.source_teacher == "t1");
    CHECK(t.source_teacher != "t3");
    CHECK(t.positive_id != t.negative_id);
  }
  auto again = emit_training_stream(pool, {"q1", "q2"}, schedule, sampler);
  CHECK(again.triplets == stream.triplets);
  sampler.seed = 43;
  schedule.epochs_per_iteration = 20;
  CHECK(emit_training_stream(pool, {"q1", "q2"}, schedule, sampler).triplets.size() == 80);
}

TEST_CASE("progressive containment over many epochs") {
  auto pool = three_teacher_pool({"q1", "q2", "q3"});
  Schedule schedule{SupervisionStrategy::progressive, 1, 3, 50, 1};
  SamplerConfig sampler;
  auto stream = emit_training_stream(pool, {"q1", "q2", "q3"}, schedule, sampler);
  std::map<std::size_t, std::set<std::string>> seen;
  for (const auto& t : stream.triplets) seen[t.iteration].insert(t.source_teacher);
  CHECK(seen[1] == std::set<std::string>{"t1"});
  CHECK(seen[2] == std::set<std::string>{"t1", "t2"});
  CHECK(seen[3] == std::set<std::string>{"t1", "t2", "t3"});
}

TEST_CASE("iterations regenerate independently") {
  auto pool = three_teacher_pool({"q1", "q2", "q3"});
  Schedule full{SupervisionStrategy::progressive, 1, 3, 2, 1};
  SamplerConfig sampler;
  sampler.seed = 8;
  auto stream = emit_training_stream(pool, {"q1", "q2", "q3"}, full, sampler);
  auto third = emit_iteration(pool, {"q1", "q2", "q3"}, 3, full, sampler);
  std::vector<Triplet> tail;
  for (const auto& t : stream.triplets) {
    if (t.iteration == 3) tail.push_back(t);
  }
  CHECK(tail == third.triplets);
}

TEST_CASE("skips are recorded") {
  SupervisionPool pool({"t1"}, 50);
  pool.add(synthetic_list("q1", "t1", "a", 50));
  pool.add(synthetic_list("q2", "t1", "a", 8));
  Schedule schedule{SupervisionStrategy::progressive, 1, 1, 1, 1};
  auto stream = emit_training_stream(pool, {"q1", "q2", "q3"}, schedule, SamplerConfig{});
  CHECK(stream.triplets.size() == 1);
  REQUIRE(stream.skipped.size() == 2);
}

TEST_CASE("schedule validation") {
  CHECK_NOTHROW((Schedule{SupervisionStrategy::progressive, 1, 3, 1, 1}.validate(3)));
  CHECK_THROWS((Schedule{SupervisionStrategy::progressive, 1, 4, 1, 1}.validate(3)));
  CHECK_THROWS((Schedule{SupervisionStrategy::progressive, 0, 1, 1, 1}.validate(3)));
  CHECK_THROWS((Schedule{SupervisionStrategy::uniform, 2, 1, 1, 1}.validate(3)));
  CHECK_THROWS((Schedule{SupervisionStrategy::uniform, 1, 1, 0, 1}.validate(3)));
  CHECK(parse_strategy("progressive") == SupervisionStrategy::progressive);
  CHECK_THROWS(parse_strategy("nope"));
}

TEST_CASE("triplet files round-trip") {
  TempDir dir;
  std::vector<Triplet> triplets{{"q1", "p1", "p2", "bm25", 1}, {"q2", "p3", "p4", "fused", 2}};
  write_triplets(dir / "t.tsv", triplets);
  CHECK(load_triplets(dir / "t.tsv") == triplets);
  write_file(dir / "bad.tsv", "q1\tp1\tp2\tbm25\n");
  CHECK_THROWS_AS(load_triplets(dir / "bad.tsv"), ParseError);
}
