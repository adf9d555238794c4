#include <doctest.h>

#include <cmath>
#include <set>

#include "augdr/dense_encoder.hpp"
#include "augdr/hashing.hpp"
#include "augdr/query_augmentation.hpp"
#include "augdr/synthetic.hpp"
#include "augdr/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace augdr;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t dim, double scale = 1.0) {
  std::vector<double> v(dim);
  for (auto& x : v) x = (rng.uniform_real() * 2.0 - 1.0) * scale;
  return v;
}

double rel_err(double a, double b) {
  const double m = std::max(std::abs(a), std::abs(b));
  return m < 1e-6 ? std::abs(a - b) : std::abs(a - b) / m;
}

TrainingExample example(const std::string& q, const std::string& p, const std::string& n,
                        std::size_t buckets) {
  auto h = [&](const std::string& text, std::size_t max_len) {
    return hash_tokens(tokenize(text, max_len), buckets);
  };
  return {q, p, n, h(q, kMaxQueryTokens), h(p, kMaxPassageTokens), h(n, kMaxPassageTokens)};
}

}  // namespace

TEST_CASE("encode definitions") {
  auto params = DualEncoderParams::random(1024, 8, 3);
  SUBCASE("empty text is the zero vector") {
    CHECK(encode_text(params, EncoderSide::query, "") == std::vector<double>(8, 0.0));
    CHECK(encode_text(params, EncoderSide::passage, " ,. ") == std::vector<double>(8, 0.0));
  }
  SUBCASE("single token is its row") {
    const auto b = fnv1a64("apple") % 1024;
    CHECK(token_bucket("apple", 1024) == b);
    auto v = encode_text(params, EncoderSide::query, "Apple");
    auto row = params.row(EncoderSide::query, b);
    CHECK(v == std::vector<double>(row.begin(), row.end()));
  }
  SUBCASE("two tokens average their rows") {
    auto v = encode_text(params, EncoderSide::passage, "apple pear");
    auto a = params.row(EncoderSide::passage, token_bucket("apple", 1024));
    auto b = params.row(EncoderSide::passage, token_bucket("pear", 1024));
    for (std::size_t d = 0; d < 8; ++d) CHECK(v[d] == doctest::Approx((a[d] + b[d]) / 2).epsilon(1e-15));
  }
  SUBCASE("sides use separate tables") {
    CHECK(encode_text(params, EncoderSide::query, "apple") !=
          encode_text(params, EncoderSide::passage, "apple"));
  }
  SUBCASE("over-long token sequences are rejected") {
    TokenSequence long_query;
    long_query.tokens.assign(33, "x");
    CHECK_THROWS_AS(encode(params, EncoderSide::query, long_query), std::invalid_argument);
    long_query.tokens.resize(32);
    CHECK_NOTHROW(encode(params, EncoderSide::query, long_query));
  }
}

TEST_CASE("initialization range and determinism") {
  auto a = DualEncoderParams::random(256, 16, 9);
  auto b = DualEncoderParams::random(256, 16, 9);
  CHECK(a == b);
  CHECK(a.checksum() == b.checksum());
  CHECK_FALSE(a == DualEncoderParams::random(256, 16, 10));
  const double bound = 0.5 / std::sqrt(16.0);
  for (auto side : {EncoderSide::query, EncoderSide::passage}) {
    for (double x : a.table(side)) CHECK((x >= -bound && x <= bound));
  }
  CHECK(a.all_finite());
}

TEST_CASE("score is a plain dot product") {
  std::vector<double> v{1.5, -2.0, 3.0}, zero(3, 0.0);
  CHECK(score(v, zero) == 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      std::vector<double> ei(3, 0.0), ej(3, 0.0);
      ei[i] = 1.0;
      ej[j] = 1.0;
      CHECK(score(ei, ej) == (i == j ? 1.0 : 0.0));
    }
  }
  std::vector<double> a{0.5, -1.25, 2.0, 4.0}, b{2.0, 0.8, -0.5, 0.25};
  CHECK(score(a, b) == doctest::Approx(1.0 - 1.0 - 1.0 + 1.0));
  CHECK_THROWS_AS(score(a, v), std::invalid_argument);
}

TEST_CASE("infonce special values") {
  std::vector<double> q{1.0, 0.0}, d{0.5, 0.5};
  for (std::size_t m = 1; m <= 6; ++m) {
    std::vector<std::vector<double>> negs(m, d);
    CHECK(infonce_loss(q, d, negs).loss == doctest::Approx(std::log(m + 1.0)).epsilon(1e-14));
  }
  std::vector<std::vector<double>> one{d};
  CHECK(infonce_loss(q, d, one).loss == doctest::Approx(0.6931471805599453));
  auto none = infonce_loss(q, d, {});
  CHECK(none.loss == 0.0);
  CHECK(none.grad_query == std::vector<double>(2, 0.0));
  CHECK(none.grad_positive == std::vector<double>(2, 0.0));
  std::vector<double> bad{std::nan(""), 0.0};
  CHECK_THROWS(infonce_loss(bad, d, one));
}

TEST_CASE("infonce agrees with the unshifted formula and stays finite") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t dim = 1 + rng.uniform_index(16);
    auto q = random_vec(rng, dim), p = random_vec(rng, dim);
    std::vector<std::vector<double>> negs(rng.uniform_index(9));
    for (auto& n : negs) n = random_vec(rng, dim);
    CHECK(infonce_loss(q, p, negs).loss == doctest::Approx(oracle::infonce(q, p, negs)).epsilon(1e-12));
  }
  std::vector<double> q{30.0}, p{30.0}, n{-30.0};
  std::vector<std::vector<double>> negs{n};
  auto r = infonce_loss(q, p, negs);
  CHECK(std::isfinite(r.loss));
  CHECK(r.loss >= 0.0);
  std::vector<double> big_n{40.0};
  std::vector<std::vector<double>> big{big_n};
  CHECK(infonce_loss(q, p, big).loss == doctest::Approx(300.0));
}

TEST_CASE("infonce gradients match central finite differences") {
  Rng rng(77);
  const double eps = 1e-4;
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t dim = 1 + rng.uniform_index(16);
    auto q = random_vec(rng, dim), p = random_vec(rng, dim);
    std::vector<std::vector<double>> negs(rng.uniform_index(9));
    for (auto& n : negs) n = random_vec(rng, dim);
    auto r = infonce_loss(q, p, negs);
    auto fd = [&](std::vector<double>& v, std::size_t i) {
      const double keep = v[i];
      v[i] = keep + eps;
      const double up = infonce_loss(q, p, negs).loss;
      v[i] = keep - eps;
      const double down = infonce_loss(q, p, negs).loss;
      v[i] = keep;
      return (up - down) / (2 * eps);
    };
    for (std::size_t i = 0; i < dim; ++i) {
      worst = std::max(worst, rel_err(r.grad_query[i], fd(q, i)));
      worst = std::max(worst, rel_err(r.grad_positive[i], fd(p, i)));
      for (std::size_t j = 0; j < negs.size(); ++j) {
        worst = std::max(worst, rel_err(r.grad_negatives[j][i], fd(negs[j], i)));
      }
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("loss is invariant to shifting every score") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(1 + rng.uniform_index(10));
    for (auto& x : s) x = rng.uniform_real() * 6 - 3;
    auto base = infonce_from_scores(s);
    for (double c : {-50.0, 7.5, 1000.0}) {
      auto shifted = s;
      for (auto& x : shifted) x += c;
      auto r = infonce_from_scores(shifted);
      CHECK(r.loss == doctest::Approx(base.loss).epsilon(1e-9));
      for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(std::abs(r.grad_scores[i] - base.grad_scores[i]) < 1e-12);
      }
    }
    double sum = 0.0;
    for (double g : base.grad_scores) sum += g;
    CHECK(std::abs(sum) < 1e-12);
  }
}

TEST_CASE("train_step with a single triplet is one InfoNCE SGD step") {
  const std::size_t buckets = 4096;
  auto params = DualEncoderParams::random(buckets, 8, 1);
  auto ex = example("alpha", "bravo", "charlie", buckets);
  REQUIRE(std::set<std::size_t>{ex.positive_buckets[0], ex.negative_buckets[0]}.size() == 2);
  auto q = encode_buckets(params, EncoderSide::query, ex.query_buckets);
  auto p = encode_buckets(params, EncoderSide::passage, ex.positive_buckets);
  auto n = encode_buckets(params, EncoderSide::passage, ex.negative_buckets);
  std::vector<std::vector<double>> negs{n};
  auto ref = infonce_loss(q, p, negs);

  TrainConfig cfg;
  cfg.use_in_batch_negatives = false;
  cfg.batch_size = 1;
  cfg.learning_rate = 0.5;
  auto before = params;
  auto report = train_step(params, std::span<const TrainingExample>(&ex, 1), cfg, 1);
  CHECK(report.mean_loss == doctest::Approx(oracle::infonce(q, p, negs)).epsilon(1e-12));
  auto qrow = params.row(EncoderSide::query, ex.query_buckets[0]);
  auto prow = params.row(EncoderSide::passage, ex.positive_buckets[0]);
  auto nrow = params.row(EncoderSide::passage, ex.negative_buckets[0]);
  for (std::size_t d = 0; d < 8; ++d) {
    CHECK(qrow[d] == doctest::Approx(q[d] - 0.5 * ref.grad_query[d]).epsilon(1e-12));
    CHECK(prow[d] == doctest::Approx(p[d] - 0.5 * ref.grad_positive[d]).epsilon(1e-12));
    CHECK(nrow[d] == doctest::Approx(n[d] - 0.5 * ref.grad_negatives[0][d]).epsilon(1e-12));
  }
  (void)before;
}

TEST_CASE("train_step only touches rows of batch tokens") {
  const std::size_t buckets = 2048;
  auto params = DualEncoderParams::random(buckets, 8, 4);
  std::vector<TrainingExample> batch{
      example("red apple", "apple orchard harvest", "car engine", buckets),
      example("fast car", "car engine oil", "apple orchard harvest", buckets),
      example("blue sky", "clear blue sky today", "deep ocean", buckets)};
  auto before = params;
  TrainConfig cfg;
  cfg.batch_size = 3;
  auto report = train_step(params, batch, cfg, 1);
  CHECK(report.mean_loss > 0.0);
  CHECK(report.gradient_norm > 0.0);
  std::set<std::size_t> q_rows, p_rows;
  for (const auto& ex : batch) {
    q_rows.insert(ex.query_buckets.begin(), ex.query_buckets.end());
    p_rows.insert(ex.positive_buckets.begin(), ex.positive_buckets.end());
    p_rows.insert(ex.negative_buckets.begin(), ex.negative_buckets.end());
  }
  std::size_t changed_q = 0, changed_p = 0;
  for (std::size_t b = 0; b < buckets; ++b) {
    auto rq0 = before.row(EncoderSide::query, b), rq1 = params.row(EncoderSide::query, b);
    auto rp0 = before.row(EncoderSide::passage, b), rp1 = params.row(EncoderSide::passage, b);
    const bool dq = !std::equal(rq0.begin(), rq0.end(), rq1.begin());
    const bool dp = !std::equal(rp0.begin(), rp0.end(), rp1.begin());
    if (dq) {
      ++changed_q;
      CHECK(q_rows.count(b) == 1);
    }
    if (dp) {
      ++changed_p;
      CHECK(p_rows.count(b) == 1);
    }
  }
  CHECK(changed_q > 0);
  CHECK(changed_p > 0);
}

TEST_CASE("in-batch negatives drop the query's own positive") {
  const std::size_t buckets = 2048;
  auto params = DualEncoderParams::random(buckets, 8, 6);
  // The second example's negative is the first example's positive.
  std::vector<TrainingExample> batch{example("q one", "shared passage", "other text", buckets),
                                     example("q two", "second passage", "shared passage", buckets)};
  TrainConfig cfg;
  cfg.batch_size = 2;
  auto copy = params;
  auto report = train_step(copy, batch, cfg, 1);
  // Three distinct passages: each query sees its positive plus two negatives.
  double expected = 0.0;
  std::vector<std::vector<double>> pv;
  for (const auto* b : {&batch[0].positive_buckets, &batch[0].negative_buckets, &batch[1].positive_buckets}) {
    pv.push_back(encode_buckets(params, EncoderSide::passage, *b));
  }
  auto q0 = encode_buckets(params, EncoderSide::query, batch[0].query_buckets);
  auto q1 = encode_buckets(params, EncoderSide::query, batch[1].query_buckets);
  expected += oracle::infonce(q0, pv[0], {pv[1], pv[2]});
  expected += oracle::infonce(q1, pv[2], {pv[0], pv[1]});
  CHECK(report.mean_loss == doctest::Approx(expected / 2).epsilon(1e-12));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto params = DualEncoderParams::random(1024, 8, 2);
  auto before = params;
  std::vector<TrainingExample> batch{example("a b", "c d", "e f", 1024), example("g", "h", "i", 1024)};
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  train_step(params, batch, cfg, 1);
  CHECK(params == before);
  CHECK_THROWS(train_step(params, std::span<const TrainingExample>{}, cfg, 1));
}

TEST_CASE("seeded training lowers the loss") {
  SyntheticCorpusConfig ccfg;
  ccfg.passages = 200;
  ccfg.topics = 10;
  auto corpus = make_synthetic_corpus(ccfg);
  auto crops = crop_corpus(corpus, CroppingConfig{});
  const std::size_t buckets = 1 << 14;
  ExampleResolver resolver(corpus, crops, buckets);
  Rng rng(31);
  std::vector<TrainingExample> examples;
  for (std::size_t i = 0; i < 50 * 32; ++i) {
    const auto& q = crops[rng.uniform_index(crops.size())];
    std::string neg;
    do {
      neg = corpus[rng.uniform_index(corpus.size())].id;
    } while (neg == *q.source_passage_id);
    examples.push_back(resolver.resolve({q.id, *q.source_passage_id, neg, "t", 1}));
  }
  auto params = DualEncoderParams::random(buckets, 32, 8);
  TrainConfig cfg;
  cfg.batch_size = 32;
  double first = 0.0, last = 0.0;
  for (std::size_t s = 0; s < 50; ++s) {
    auto r = train_step(params, std::span(examples).subspan(s * 32, 32), cfg, s + 1);
    if (s == 0) first = r.mean_loss;
    last = r.mean_loss;
  }
  CHECK(last < first);
  CHECK(params.all_finite());
}

TEST_CASE("checkpoints round-trip exactly") {
  TempDir dir;
  auto params = DualEncoderParams::random(512, 12, 99);
  save_checkpoint(dir / "p.ckpt", params);
  auto loaded = load_checkpoint(dir / "p.ckpt");
  CHECK(loaded == params);
  CHECK(loaded.checksum() == params.checksum());
  CHECK(std::filesystem::file_size(dir / "p.ckpt") == 8 + 3 * 8 + 2 * 512 * 12 * 8);
  auto bytes = read_file(dir / "p.ckpt");
  write_file(dir / "short.ckpt", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS(load_checkpoint(dir / "short.ckpt"));
  write_file(dir / "magic.ckpt", "NOTMAGIC" + bytes.substr(8));
  CHECK_THROWS(load_checkpoint(dir / "magic.ckpt"));
  write_file(dir / "long.ckpt", bytes + "x");
  CHECK_THROWS(load_checkpoint(dir / "long.ckpt"));
}

TEST_CASE("train is deterministic and reduces to single-teacher training") {
  SyntheticCorpusConfig ccfg;
  ccfg.passages = 120;
  ccfg.topics = 6;
  auto corpus = make_synthetic_corpus(ccfg);
  auto crops = crop_corpus(corpus, CroppingConfig{});
  crops.resize(150);
  SupervisionPool pool({"t1"}, 50);
  for (const auto& q : crops) {
    std::vector<std::pair<std::string, double>> cands;
    Rng rng(derive_seed(1, {q.id}));
    for (std::size_t i = 0; i < 50; ++i) cands.emplace_back(corpus[rng.uniform_index(corpus.size())].id, 0.0);
    std::vector<std::pair<std::string, double>> scored;
    std::set<std::string> seen;
    scored.emplace_back(*q.source_passage_id, 100.0);
    seen.insert(*q.source_passage_id);
    for (auto& [id, s] : cands) {
      if (seen.insert(id).second) scored.emplace_back(id, 50.0 - static_cast<double>(scored.size()));
    }
    pool.add(make_ranked_list(q.id, "t1", scored, 50));
  }
  Schedule schedule{SupervisionStrategy::progressive, 1, 1, 1, 1};
  SamplerConfig sampler;
  sampler.seed = 4;
  TrainConfig cfg;
  cfg.buckets = 4096;
  cfg.dim = 16;
  cfg.batch_size = 16;
  cfg.seed = 12;
  auto a = train(pool, corpus, crops, schedule, sampler, cfg);
  auto b = train(pool, corpus, crops, schedule, sampler, cfg);
  CHECK(a.checksum() == b.checksum());
  CHECK(a == b);

  // Manual single-teacher training over the same stream.
  auto manual = DualEncoderParams::random(cfg.buckets, cfg.dim, cfg.seed);
  std::vector<std::string> ids;
  for (const auto& q : crops) ids.push_back(q.id);
  auto stream = emit_training_stream(pool, ids, schedule, sampler);
  ExampleResolver resolver(corpus, crops, cfg.buckets);
  std::vector<TrainingExample> examples;
  for (const auto& t : stream.triplets) examples.push_back(resolver.resolve(t));
  std::size_t step = 0;
  for (std::size_t i = 0; i < examples.size(); i += cfg.batch_size) {
    const auto n = std::min(cfg.batch_size, examples.size() - i);
    train_step(manual, std::span(examples).subspan(i, n), cfg, ++step);
  }
  CHECK(manual == a);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 1;
  CHECK_THROWS(cfg.validate());
  cfg.use_in_batch_negatives = false;
  CHECK_NOTHROW(cfg.validate());
  cfg.learning_rate = -1.0;
  CHECK_THROWS(cfg.validate());
}
