#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "augdr/corpus.hpp"
#include "augdr/dense_encoder.hpp"
#include "augdr/supervision.hpp"

namespace augdr {

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 300.0;
  std::uint64_t seed = 0;
  bool use_in_batch_negatives = true;
  std::size_t buckets = DualEncoderParams::kDefaultBuckets;
  std::size_t dim = DualEncoderParams::kDefaultDim;

  void validate() const;
};

struct LossReport {
  double mean_loss = 0.0;
  double gradient_norm = 0.0;
  std::size_t step = 0;
};

/// A triplet with its texts resolved to hashed token buckets.
struct TrainingExample {
  std::string query_id;
  std::string positive_id;
  std::string negative_id;
  std::vector<std::size_t> query_buckets;
  std::vector<std::size_t> positive_buckets;
  std::vector<std::size_t> negative_buckets;
};

/// One SGD step on the batch-mean InfoNCE loss. Each query's negatives are its
/// own hard negative plus, when enabled, every other distinct passage in the
/// batch; its own positive is removed from that set. Only embedding rows of
/// tokens present in the batch change.
LossReport train_step(DualEncoderParams& params, std::span<const TrainingExample> batch,
                      const TrainConfig& cfg, std::size_t step);

/// Resolves triplet ids to hashed token buckets, caching per text.
class ExampleResolver {
 public:
  ExampleResolver(const Corpus& corpus, const std::vector<QueryRecord>& queries,
                  std::size_t buckets);

  /// Throws std::out_of_range for an unknown query or passage id.
  TrainingExample resolve(const Triplet& triplet) const;

 private:
  const Corpus* corpus_;
  std::unordered_map<std::string, std::vector<std::size_t>> query_buckets_;
  std::vector<std::vector<std::size_t>> passage_buckets_;
};

struct EpochSummary {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  std::size_t examples = 0;
  double mean_loss = 0.0;
};

struct IterationSummary {
  std::size_t iteration = 0;
  std::vector<EpochSummary> epochs;
  std::vector<LossReport> steps;
  // Parallel to steps: how many triplets of each source teacher the batch held.
  std::vector<std::map<std::string, std::size_t>> step_teachers;
  std::vector<Triplet> triplets;
  std::vector<SkipRecord> skipped;
};

/// Trains on an emitted stream, batching consecutive triplets within each
/// epoch. step is advanced once per batch.
IterationSummary train_on_stream(DualEncoderParams& params, const TrainingStream& stream,
                                 const ExampleResolver& resolver, const TrainConfig& cfg,
                                 std::size_t& step);

using IterationCallback =
    std::function<void(const IterationSummary&, const DualEncoderParams&)>;

/// Runs every iteration of the schedule from freshly initialized parameters,
/// calling on_iteration after each one (for checkpointing and logging).
DualEncoderParams train(const SupervisionPool& pool, const Corpus& corpus,
                        const std::vector<QueryRecord>& queries, const Schedule& schedule,
                        const SamplerConfig& sampler, const TrainConfig& cfg,
                        const IterationCallback& on_iteration = {});

}  // namespace augdr
