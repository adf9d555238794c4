#include <doctest.h>

#include <cmath>

#include "augdr/teachers.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace augdr;

namespace {

Corpus hand_corpus() {
  return Corpus({
      {"h00", "The cat sat on the mat."},
      {"h01", "A dog chased the cat around the yard."},
      {"h02", "Cats and dogs rarely share a mat."},
      {"h03", "The stock market fell sharply on Monday."},
      {"h04", "Market analysts expect the stock to recover."},
      {"h05", "A quiet cat slept in the warm sun."},
      {"h06", "Dogs bark at the mail carrier every morning."},
      {"h07", "The recipe needs flour, sugar and two eggs."},
      {"h08", "Bake the cake for thirty minutes at high heat."},
      {"h09", "Sugar prices rose in the commodity market."},
      {"h10", "The cat and the dog became friends."},
      {"h11", "Rain fell all day over the quiet town."},
      {"h12", "The town market opens every Saturday morning."},
      {"h13", "Eggs and flour make a simple batter for the cake."},
      {"h14", "A stray dog found shelter from the rain."},
      {"h15", "Investors watched the market and the stock ticker."},
      {"h16", "The old cat ignored the barking dog completely."},
      {"h17", "Warm sun and light rain help the garden grow."},
      {"h18", "The garden cat hunts mice at night."},
      {"h19", "Flour sugar eggs flour sugar eggs."},
  });
}

std::vector<std::vector<std::string>> tokenized(const Corpus& corpus) {
  std::vector<std::vector<std::string>> docs;
  for (const auto& p : corpus) docs.push_back(tokenize(p.text, kMaxPassageTokens).tokens);
  return docs;
}

std::vector<std::string> ids_of(const RankedList& list) {
  std::vector<std::string> out;
  for (const auto& e : list.entries) out.push_back(e.passage_id);
  return out;
}

}  // namespace

TEST_CASE("inverted index over a toy corpus") {
  Corpus corpus({{"d1", "cat sat"}, {"d2", "cat cat dog"}});
  InvertedIndex index(corpus);
  CHECK(index.postings("cat") == std::vector<Posting>{{0, 1}, {1, 2}});
  CHECK(index.avg_doc_length() == 2.5);
  CHECK(index.doc_count() == 2);
  CHECK(index.postings("zebra").empty());
  CHECK(index.term_frequency("cat", 1) == 2);
  CHECK(index.term_frequency("dog", 0) == 0);
  CHECK_THROWS_AS(InvertedIndex(Corpus{}), std::invalid_argument);
}

TEST_CASE("bm25 worked single-term score") {
  Corpus corpus({{"d1", "cat sat"}, {"d2", "cat cat dog"}});
  InvertedIndex index(corpus);
  // idf = ln(1.2); tf part = 1.9 / (1 + 0.9 * (0.6 + 0.4 * 2 / 2.5)) = 1.9 / 1.828.
  const double expected = 0.18950271220378212;
  CHECK(std::abs(std::log(1.2) * 1.9 / 1.828 - expected) < 1e-15);
  CHECK(std::abs(bm25_score(index, {"cat"}, 0) - expected) < 1e-12);
  CHECK(bm25_score(index, {"dog"}, 0) == 0.0);
  CHECK(bm25_score(index, {"cat", "cat"}, 0) == doctest::Approx(2 * expected).epsilon(1e-14));
  CHECK(bm25_score(index, {"zebra"}, 1) == 0.0);
}

TEST_CASE("bm25 with b = 0 ignores document length") {
  Corpus corpus({{"s", "apple pear"}, {"l", "apple pear plum fig kiwi lime"}, {"x", "other"}});
  InvertedIndex index(corpus);
  Bm25Params p{0.9, 0.0};
  CHECK(bm25_score(index, {"apple"}, 0, p) == bm25_score(index, {"apple"}, 1, p));
  CHECK(bm25_score(index, {"apple"}, 0) > bm25_score(index, {"apple"}, 1));
}

TEST_CASE("bm25 teacher top-10 equals the exhaustive oracle") {
  auto corpus = hand_corpus();
  auto docs = tokenized(corpus);
  Bm25Teacher teacher("bm25", corpus);
  for (const char* text : {"cat", "the cat and the dog", "stock market", "flour sugar eggs cake",
                           "rain in town", "dog dog mat", "morning market sugar"}) {
    QueryRecord q{"q", text, QueryOrigin::human, std::nullopt};
    auto qt = tokenize(text, kMaxQueryTokens).tokens;
    std::vector<std::pair<std::string, double>> scored;
    for (std::size_t d = 0; d < docs.size(); ++d) {
      const double s = oracle::bm25(docs, qt, d, 0.9, 0.4);
      if (s > 0.0) scored.emplace_back(corpus[d].id, s);
    }
    auto list = teacher.retrieve(q, 10);
    CAPTURE(text);
    CHECK(ids_of(list) == oracle::rank_by_score(scored, 10));
    for (const auto& e : list.entries) {
      const auto ordinal = *corpus.ordinal_of(e.passage_id);
      CHECK(std::abs(e.score - oracle::bm25(docs, qt, ordinal, 0.9, 0.4)) < 1e-12);
    }
    list.validate();
  }
}

TEST_CASE("bm25 teacher edge cases") {
  auto corpus = hand_corpus();
  Bm25Teacher teacher("bm25", corpus);
  SUBCASE("self retrieval") {
    QueryRecord q{"q", corpus[7].text, QueryOrigin::human, std::nullopt};
    CHECK(teacher.retrieve(q, 5).entries.front().passage_id == "h07");
  }
  SUBCASE("depth beyond the candidate set saturates") {
    QueryRecord q{"q", "the", QueryOrigin::human, std::nullopt};
    auto all = teacher.retrieve(q, 1000);
    CHECK(all.size() <= corpus.size());
    CHECK(all.size() > 10);
  }
  SUBCASE("no matching term gives an empty list") {
    QueryRecord q{"q", "zebra quantum", QueryOrigin::human, std::nullopt};
    CHECK(teacher.retrieve(q, 10).empty());
  }
  SUBCASE("shallow lists are prefixes of deeper ones") {
    QueryRecord q{"q", "the cat dog market", QueryOrigin::human, std::nullopt};
    auto deep = teacher.retrieve(q, 20);
    for (std::size_t k = 1; k <= 20; ++k) CHECK(teacher.retrieve(q, k) == deep.prefix(k));
  }
  CHECK_THROWS_AS(teacher.retrieve({"q", "cat", QueryOrigin::human, std::nullopt}, 0),
                  std::invalid_argument);
}

TEST_CASE("dense teacher is deterministic and exact") {
  auto corpus = hand_corpus();
  DenseHashTeacher a("dense", corpus, DenseHashTeacher::tied_random(1 << 12, 16, 5));
  DenseHashTeacher b("dense", corpus, DenseHashTeacher::tied_random(1 << 12, 16, 5));
  QueryRecord q{"q", "the cat sat in the sun", QueryOrigin::human, std::nullopt};
  CHECK(a.retrieve(q, 20) == b.retrieve(q, 20));
  auto list = a.retrieve(q, 10);
  list.validate();

  // Brute force over independently encoded passages.
  auto qv = encode_text(a.params(), EncoderSide::query, q.text);
  std::vector<std::pair<std::string, double>> scored;
  for (const auto& p : corpus) {
    auto pv = encode_text(a.params(), EncoderSide::passage, p.text);
    double s = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) s += qv[i] * pv[i];
    scored.emplace_back(p.id, s);
  }
  CHECK(ids_of(list) == oracle::rank_by_score(scored, 10));
  CHECK(a.retrieve(q, 1000).size() == corpus.size());
}

TEST_CASE("dense teacher ties exact duplicates and orders them by id") {
  Corpus corpus({{"b", "red apple pie"}, {"a", "red apple pie"}, {"c", "blue sky"}});
  DenseHashTeacher t("dense", corpus, DenseHashTeacher::tied_random(1 << 10, 8, 3));
  auto list = t.retrieve({"q", "red apple pie", QueryOrigin::human, std::nullopt}, 3);
  CHECK(list.entries[0].passage_id == "a");
  CHECK(list.entries[1].passage_id == "b");
  CHECK(list.entries[0].score == list.entries[1].score);
}

TEST_CASE("teacher registry lookups") {
  auto corpus = hand_corpus();
  TeacherRegistry reg;
  reg.add(std::make_unique<Bm25Teacher>("bm25", corpus));
  CHECK_THROWS_AS(reg.add(std::make_unique<Bm25Teacher>("bm25", corpus)), std::invalid_argument);
  QueryRecord q{"q", "cat", QueryOrigin::human, std::nullopt};
  CHECK(teacher_retrieve(reg, "bm25", q, 3).size() == 3);
  CHECK_THROWS_AS(teacher_retrieve(reg, "nope", q, 3), std::out_of_range);
}

TEST_CASE("run files round-trip exactly") {
  auto corpus = hand_corpus();
  Bm25Teacher teacher("bm25", corpus);
  TempDir dir;
  std::vector<RankedList> lists;
  for (const char* text : {"cat", "market stock", "flour"}) {
    std::string qid = "q_" + std::to_string(lists.size());
    lists.push_back(teacher.retrieve({qid, text, QueryOrigin::human, std::nullopt}, 8));
  }
  write_run(dir / "r.run", lists);
  auto run = import_run_file(dir / "r.run");
  REQUIRE(run.size() == 3);
  for (const auto& l : lists) CHECK(run.at(l.query_id) == l);

  RunImportTeacher imported("bm25", dir / "r.run");
  CHECK(imported.retrieve({"q_0", "ignored", QueryOrigin::human, std::nullopt}, 3) ==
        lists[0].prefix(3));
  CHECK(imported.retrieve({"q_unknown", "x", QueryOrigin::human, std::nullopt}, 3).empty());
}

TEST_CASE("run import rejects inconsistent files") {
  TempDir dir;
  SUBCASE("two-line run") {
    auto p = write_file(dir / "r.run", "q1 Q0 d1 1 2.5 t\nq1 Q0 d2 2 1.5 t\n");
    auto run = import_run_file(p, "teacherA");
    CHECK(run.at("q1").size() == 2);
    CHECK(run.at("q1").teacher_id == "teacherA");
  }
  SUBCASE("out-of-order ranks") {
    auto p = write_file(dir / "r.run", "q1 Q0 d1 2 2.5 t\nq1 Q0 d2 1 3.5 t\n");
    CHECK_THROWS_AS(import_run_file(p), ParseError);
  }
  SUBCASE("scores increase with rank") {
    auto p = write_file(dir / "r.run", "q1 Q0 d1 1 2.5 t\nq1 Q0 d2 2 3.5 t\n");
    try {
      import_run_file(p);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("duplicate passage") {
    auto p = write_file(dir / "r.run", "q1 Q0 d1 1 2.5 t\nq1 Q0 d1 2 1.5 t\n");
    CHECK_THROWS_AS(import_run_file(p), ParseError);
  }
  SUBCASE("wrong field count") {
    auto p = write_file(dir / "r.run", "q1 Q0 d1 1 2.5\n");
    CHECK_THROWS_AS(import_run_file(p), ParseError);
  }
}

TEST_CASE("ranked list invariants are checked") {
  RankedList ok{"q", "t", {{"a", 1, 2.0}, {"b", 2, 2.0}, {"c", 3, 1.0}}};
  CHECK_NOTHROW(ok.validate());
  RankedList gap{"q", "t", {{"a", 1, 2.0}, {"b", 3, 1.0}}};
  CHECK_THROWS_AS(gap.validate(), std::logic_error);
  RankedList rising{"q", "t", {{"a", 1, 1.0}, {"b", 2, 2.0}}};
  CHECK_THROWS_AS(rising.validate(), std::logic_error);
  RankedList dup{"q", "t", {{"a", 1, 2.0}, {"a", 2, 1.0}}};
  CHECK_THROWS_AS(dup.validate(), std::logic_error);
}
