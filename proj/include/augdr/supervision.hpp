#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "augdr/ranked_list.hpp"
#include "augdr/rng.hpp"

namespace augdr {

inline constexpr std::string_view kFusedTeacherId = "fused";

/// Per-query ranked lists from an ordered trajectory of teachers, each
/// truncated to depth K, plus optional precomputed fused lists.
class SupervisionPool {
 public:
  SupervisionPool(std::vector<std::string> trajectory, std::size_t depth);

  const std::vector<std::string>& trajectory() const { return trajectory_; }
  std::size_t teacher_count() const { return trajectory_.size(); }
  std::size_t depth() const { return depth_; }

  /// Stores list truncated to depth. The teacher must be on the trajectory.
  void add(RankedList list);
  void add_run(const Run& run);
  void set_fused(RankedList list);

  const RankedList* find(const std::string& query_id, const std::string& teacher_id) const;
  const RankedList* fused(const std::string& query_id) const;

  /// Query ids with at least one stored teacher list, ascending.
  std::vector<std::string> query_ids() const;

  /// All stored lists of one teacher keyed by query.
  Run teacher_run(const std::string& teacher_id) const;

 private:
  std::vector<std::string> trajectory_;
  std::size_t depth_;
  std::map<std::pair<std::string, std::string>, RankedList> lists_;
  std::map<std::string, RankedList> fused_;
};

struct SamplerConfig {
  std::size_t pos_top_k = 10;
  std::size_t neg_rank_lo = 46;
  std::size_t neg_rank_hi = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FusionConfig {
  std::map<std::string, double> weights;

  void validate_for(const std::vector<std::string>& teacher_ids) const;
};

struct Triplet {
  std::string query_id;
  std::string positive_id;
  std::string negative_id;
  std::string source_teacher;
  std::size_t iteration = 0;

  bool operator==(const Triplet&) const = default;
};

enum class SupervisionStrategy { fused, uniform, progressive };

std::string_view to_string(SupervisionStrategy strategy);
SupervisionStrategy parse_strategy(std::string_view name);

/// Min-max normalizes each list's scores to [0, 1] (a single entry gets 1),
/// sums weight * normalized score per passage (absent counts 0) and keeps
/// the top K by fused score, ties by ascending passage id.
RankedList fuse_lists(const std::vector<RankedList>& lists, const FusionConfig& cfg,
                      std::size_t depth);

/// Fuses the lists of every query in the pool and stores them as fused lists.
void fuse_pool(SupervisionPool& pool, const FusionConfig& cfg);

/// fused -> the stored fused list; uniform -> teacher n ~ U(1, N);
/// progressive -> teacher n ~ U(1, T). Returns nullptr when the chosen list
/// is missing, in which case the caller skips the query.
const RankedList* select_supervision(const SupervisionPool& pool, const std::string& query_id,
                                     std::size_t iteration, SupervisionStrategy strategy,
                                     Rng& rng);

struct SampleOutcome {
  std::optional<Triplet> triplet;
  std::string skip_reason;
};

/// Positive uniform over ranks 1..pos_top_k, hard negative uniform over ranks
/// neg_rank_lo..neg_rank_hi. Lists shorter than neg_rank_hi but holding at
/// least pos_top_k + 5 entries take negatives from their last 5 entries;
/// shorter lists are skipped.
SampleOutcome sample_triplet(const RankedList& list, const SamplerConfig& cfg, Rng& rng);

struct PositiveProbability {
  std::string passage_id;
  double probability = 0.0;
  double reciprocal_rank_sum = 0.0;
};

/// Probability that each passage is drawn as positive at iteration T:
/// (1/T) * sum over the first T teachers of [p in top-k] / k. Sorted by
/// probability descending, then summed reciprocal rank descending, then id.
std::vector<PositiveProbability> positive_probability(const SupervisionPool& pool,
                                                      const std::string& query_id,
                                                      std::size_t iteration, std::size_t k);

/// Mean over pool queries of |union of top-k sets of the first T teachers|.
double supervision_diversity(const SupervisionPool& pool, std::size_t iteration, std::size_t k);

struct Schedule {
  SupervisionStrategy strategy = SupervisionStrategy::progressive;
  std::size_t first_iteration = 1;
  std::size_t last_iteration = 1;
  std::size_t epochs_per_iteration = 3;
  std::size_t triplets_per_query_per_epoch = 1;

  void validate(std::size_t teacher_count) const;
};

struct SkipRecord {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  std::string query_id;
  std::string reason;
};

struct TrainingStream {
  std::vector<Triplet> triplets;
  // Parallel to triplets: the epoch (1-based, within its iteration).
  std::vector<std::size_t> epochs;
  std::vector<SkipRecord> skipped;
};

/// Triplets for one iteration. Every (iteration, epoch) draws from its own
/// stream derived from sampler.seed, so iterations can be regenerated
/// independently.
TrainingStream emit_iteration(const SupervisionPool& pool,
                              const std::vector<std::string>& query_ids,
                              std::size_t iteration, const Schedule& schedule,
                              const SamplerConfig& sampler);

/// For each iteration in the schedule and each epoch: shuffle the queries,
/// then select_supervision and sample_triplet per query.
TrainingStream emit_training_stream(const SupervisionPool& pool,
                                    const std::vector<std::string>& query_ids,
                                    const Schedule& schedule, const SamplerConfig& sampler);

/// `query_id<TAB>positive_id<TAB>negative_id<TAB>source_teacher<TAB>iteration`
void write_triplets(const std::filesystem::path& path, const std::vector<Triplet>& triplets);
std::vector<Triplet> load_triplets(const std::filesystem::path& path);

}  // namespace augdr
