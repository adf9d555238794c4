#include "augdr/trainer.hpp"

#include <cmath>
#include <stdexcept>

namespace augdr {

namespace {

// Sparse gradient over embedding rows, kept in first-touch order.
class RowGradients {
 public:
  explicit RowGradients(std::size_t dim) : dim_(dim) {}

  std::span<double> row(EncoderSide side, std::size_t bucket) {
    const std::uint64_t key = (static_cast<std::uint64_t>(bucket) << 1) |
                              (side == EncoderSide::passage ? 1U : 0U);
    auto [it, inserted] = slots_.try_emplace(key, keys_.size());
    if (inserted) {
      keys_.push_back({side, bucket});
      values_.resize(values_.size() + dim_, 0.0);
    }
    return std::span<double>(values_).subspan(it->second * dim_, dim_);
  }

  // Spreads the gradient of a mean-pooled vector over its rows.
  void add_pooled(EncoderSide side, std::span<const std::size_t> buckets,
                  std::span<const double> grad) {
    if (buckets.empty()) return;
    const double inv = 1.0 / static_cast<double>(buckets.size());
    for (auto b : buckets) {
      auto r = row(side, b);
      for (std::size_t i = 0; i < dim_; ++i) r[i] += grad[i] * inv;
    }
  }

  double norm() const {
    double sq = 0.0;
    for (double g : values_) sq += g * g;
    return std::sqrt(sq);
  }

  void apply(DualEncoderParams& params, double learning_rate) const {
    for (std::size_t s = 0; s < keys_.size(); ++s) {
      auto target = params.row(keys_[s].side, keys_[s].bucket);
      for (std::size_t i = 0; i < dim_; ++i) target[i] -= learning_rate * values_[s * dim_ + i];
    }
  }

 private:
  struct Key {
    EncoderSide side;
    std::size_t bucket;
  };
  std::size_t dim_;
  std::unordered_map<std::uint64_t, std::size_t> slots_;
  std::vector<Key> keys_;
  std::vector<double> values_;
};

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (use_in_batch_negatives && batch_size < 2) {
    throw std::invalid_argument("in-batch negatives need batch_size >= 2");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be finite and >= 0");
  }
  if (buckets < 1 || dim < 1) throw std::invalid_argument("encoder shape must be positive");
}

LossReport train_step(DualEncoderParams& params, std::span<const TrainingExample> batch,
                      const TrainConfig& cfg, std::size_t step) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const std::size_t dim = params.dim();

  // Distinct passages of the batch, in order of first appearance.
  std::vector<const std::vector<std::size_t>*> passage_buckets;
  std::vector<std::string_view> passage_ids;
  std::unordered_map<std::string_view, std::size_t> passage_slot;
  auto slot_of = [&](const std::string& id, const std::vector<std::size_t>& buckets) {
    auto [it, inserted] = passage_slot.try_emplace(id, passage_ids.size());
    if (inserted) {
      passage_ids.push_back(id);
      passage_buckets.push_back(&buckets);
    }
    return it->second;
  };
  std::vector<std::size_t> pos_slot(batch.size()), neg_slot(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    pos_slot[i] = slot_of(batch[i].positive_id, batch[i].positive_buckets);
    neg_slot[i] = slot_of(batch[i].negative_id, batch[i].negative_buckets);
  }

  std::vector<std::vector<double>> passage_vecs;
  passage_vecs.reserve(passage_ids.size());
  for (const auto* b : passage_buckets) {
    passage_vecs.push_back(encode_buckets(params, EncoderSide::passage, *b));
  }
  std::vector<std::vector<double>> passage_grads(passage_ids.size(), std::vector<double>(dim, 0.0));

  RowGradients grads(dim);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double loss_sum = 0.0;
  std::vector<std::size_t> candidates;
  std::vector<double> scores;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    auto q = encode_buckets(params, EncoderSide::query, ex.query_buckets);

    candidates.clear();
    candidates.push_back(pos_slot[i]);
    if (neg_slot[i] != pos_slot[i]) candidates.push_back(neg_slot[i]);
    if (cfg.use_in_batch_negatives) {
      for (std::size_t s = 0; s < passage_ids.size(); ++s) {
        if (s != pos_slot[i] && s != neg_slot[i]) candidates.push_back(s);
      }
    }

    scores.clear();
    for (auto s : candidates) scores.push_back(score(q, passage_vecs[s]));
    auto sl = infonce_from_scores(scores);
    loss_sum += sl.loss;

    std::vector<double> grad_q(dim, 0.0);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double g = sl.grad_scores[c] * inv_batch;
      const auto& p = passage_vecs[candidates[c]];
      auto& gp = passage_grads[candidates[c]];
      for (std::size_t d = 0; d < dim; ++d) {
        grad_q[d] += g * p[d];
        gp[d] += g * q[d];
      }
    }
    grads.add_pooled(EncoderSide::query, ex.query_buckets, grad_q);
  }
  for (std::size_t s = 0; s < passage_ids.size(); ++s) {
    grads.add_pooled(EncoderSide::passage, *passage_buckets[s], passage_grads[s]);
  }

  LossReport report;
  report.mean_loss = loss_sum * inv_batch;
  report.gradient_norm = grads.norm();
  report.step = step;
  grads.apply(params, cfg.learning_rate);
  return report;
}

ExampleResolver::ExampleResolver(const Corpus& corpus, const std::vector<QueryRecord>& queries,
                                 std::size_t buckets)
    : corpus_(&corpus) {
  passage_buckets_.reserve(corpus.size());
  for (const auto& p : corpus) {
    passage_buckets_.push_back(hash_tokens(tokenize(p.text, kMaxPassageTokens), buckets));
  }
  for (const auto& q : queries) {
    query_buckets_.emplace(q.id, hash_tokens(tokenize(q.text, kMaxQueryTokens), buckets));
  }
}

TrainingExample ExampleResolver::resolve(const Triplet& t) const {
  auto qit = query_buckets_.find(t.query_id);
  if (qit == query_buckets_.end()) throw std::out_of_range("unknown query id '" + t.query_id + "'");
  auto passage = [&](const std::string& id) -> const std::vector<std::size_t>& {
    auto ordinal = corpus_->ordinal_of(id);
    if (!ordinal) throw std::out_of_range("unknown passage id '" + id + "'");
    return passage_buckets_[*ordinal];
  };
  return {t.query_id, t.positive_id, t.negative_id, qit->second,
          passage(t.positive_id), passage(t.negative_id)};
}

IterationSummary train_on_stream(DualEncoderParams& params, const TrainingStream& stream,
                                 const ExampleResolver& resolver, const TrainConfig& cfg,
                                 std::size_t& step) {
  cfg.validate();
  IterationSummary summary;
  summary.triplets = stream.triplets;
  summary.skipped = stream.skipped;
  if (!stream.triplets.empty()) summary.iteration = stream.triplets.front().iteration;

  std::size_t begin = 0;
  while (begin < stream.triplets.size()) {
    const std::size_t epoch = stream.epochs[begin];
    std::size_t epoch_end = begin;
    while (epoch_end < stream.triplets.size() && stream.epochs[epoch_end] == epoch &&
           stream.triplets[epoch_end].iteration == stream.triplets[begin].iteration) {
      ++epoch_end;
    }
    EpochSummary es{stream.triplets[begin].iteration, epoch, 0, 0.0};
    double loss_total = 0.0;
    for (std::size_t b = begin; b < epoch_end; b += cfg.batch_size) {
      const std::size_t e = std::min(b + cfg.batch_size, epoch_end);
      std::vector<TrainingExample> batch;
      batch.reserve(e - b);
      std::map<std::string, std::size_t> teachers;
      for (std::size_t i = b; i < e; ++i) {
        batch.push_back(resolver.resolve(stream.triplets[i]));
        ++teachers[stream.triplets[i].source_teacher];
      }
      summary.step_teachers.push_back(std::move(teachers));
      auto report = train_step(params, batch, cfg, ++step);
      loss_total += report.mean_loss * static_cast<double>(batch.size());
      es.examples += batch.size();
      summary.steps.push_back(report);
    }
    es.mean_loss = es.examples > 0 ? loss_total / static_cast<double>(es.examples) : 0.0;
    summary.epochs.push_back(es);
    begin = epoch_end;
  }
  return summary;
}

DualEncoderParams train(const SupervisionPool& pool, const Corpus& corpus,
                        const std::vector<QueryRecord>& queries, const Schedule& schedule,
                        const SamplerConfig& sampler, const TrainConfig& cfg,
                        const IterationCallback& on_iteration) {
  cfg.validate();
  schedule.validate(pool.teacher_count());
  auto params = DualEncoderParams::random(cfg.buckets, cfg.dim, cfg.seed);
  ExampleResolver resolver(corpus, queries, cfg.buckets);
  std::vector<std::string> query_ids;
  query_ids.reserve(queries.size());
  for (const auto& q : queries) query_ids.push_back(q.id);
  std::size_t step = 0;
  for (std::size_t t = schedule.first_iteration; t <= schedule.last_iteration; ++t) {
    auto stream = emit_iteration(pool, query_ids, t, schedule, sampler);
    auto summary = train_on_stream(params, stream, resolver, cfg, step);
    summary.iteration = t;
    if (on_iteration) on_iteration(summary, params);
  }
  return params;
}

}  // namespace augdr
