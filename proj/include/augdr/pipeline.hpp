#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "augdr/corpus.hpp"
#include "augdr/evaluation.hpp"
#include "augdr/query_augmentation.hpp"
#include "augdr/supervision.hpp"
#include "augdr/teachers.hpp"
#include "augdr/trainer.hpp"

namespace augdr {

/// Lists every validation problem at once.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// A pipeline stage failed; partial artifacts are left on disk.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct TeacherSpec {
  std::string id;
  TeacherKind kind = TeacherKind::bm25;
  Bm25Params bm25;
  // dense_hash: frozen tied random encoder from seed, or a checkpoint.
  std::optional<std::uint64_t> seed;
  std::size_t buckets = DualEncoderParams::kDefaultBuckets;
  std::size_t dim = DualEncoderParams::kDefaultDim;
  std::string checkpoint;
  // run_import
  std::string run;

  bool operator==(const TeacherSpec&) const;
};

enum class QuerySource { file, crop, generate, mix };

std::string_view to_string(QuerySource source);
QuerySource parse_query_source(std::string_view name);

struct QueryConfig {
  QuerySource source = QuerySource::crop;
  CroppingConfig cropping;
  std::size_t generated_per_passage = 1;
  double cropped_fraction = 0.5;
  // 0 keeps every available query.
  std::size_t max_train_queries = 0;
  // Augmented queries held out for evaluation, judged against their source
  // passage. Used when no eval query file is configured.
  std::size_t holdout = 0;

  bool operator==(const QueryConfig&) const = default;
};

struct PipelineConfig {
  std::string corpus;
  FileFormat corpus_format = FileFormat::tsv;
  std::string queries;       // four-column query TSV when source == file
  std::string eval_queries;  // four-column query TSV
  std::string qrels;
  std::string output_dir = "augdr_out";

  QueryConfig query;
  std::vector<TeacherSpec> trajectory;
  std::size_t depth = 50;
  SupervisionStrategy strategy = SupervisionStrategy::progressive;
  // 0 means one iteration per trajectory teacher.
  std::size_t iterations = 0;
  std::size_t epochs_per_iteration = 3;
  std::size_t triplets_per_query_per_epoch = 1;
  SamplerConfig sampler;
  TrainConfig train;
  FusionConfig fusion;
  EvalCutoffs eval;
  std::uint64_t seed = 0;

  std::size_t iteration_count() const;
  std::vector<std::string> teacher_ids() const;
  Schedule schedule() const;
  /// Sampler and train configs with their seeds derived from the global seed.
  SamplerConfig seeded_sampler() const;
  TrainConfig seeded_train() const;

  /// Every problem found; empty when valid. Paths are checked for existence.
  std::vector<std::string> validate() const;

  bool operator==(const PipelineConfig&) const;
};

nlohmann::json to_json(const PipelineConfig& cfg);
/// Unknown keys are reported as problems alongside type errors.
PipelineConfig config_from_json(const nlohmann::json& j);
/// Appends problems instead of throwing; unreadable fields keep defaults.
PipelineConfig config_from_json(const nlohmann::json& j, std::vector<std::string>& problems);
PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const PipelineConfig& cfg);

/// Applies `json/pointer=value` to a config document; value is parsed as JSON
/// and falls back to a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Append-only JSONL log with non-decreasing step numbers. Opening an
/// existing log continues from its highest step; fresh starts it empty.
class RunLog {
 public:
  explicit RunLog(const std::filesystem::path& path, bool fresh = false);

  /// Throws std::logic_error if record["step"] is lower than the last step.
  void append(nlohmann::json record);
  std::size_t last_step() const { return last_step_; }

 private:
  std::ofstream out_;
  std::size_t last_step_ = 0;
};

/// Drops every record after the one closing `iteration`, so a resumed run can
/// log that iteration's successors again. Empties the log when no such record
/// exists.
void trim_run_log(const std::filesystem::path& path, std::size_t iteration);

/// Builds the trajectory's teachers. Dense teachers without an explicit seed
/// draw one from (seed, teacher id).
TeacherRegistry build_teachers(const std::vector<TeacherSpec>& specs, const Corpus& corpus,
                               std::uint64_t seed);

/// Retrieves depth-K lists for every (teacher, query) pair into a pool.
SupervisionPool label_queries(const TeacherRegistry& registry,
                              const std::vector<std::string>& trajectory,
                              const std::vector<QueryRecord>& queries, std::size_t depth);

struct FusionTuneResult {
  FusionConfig best;
  double best_mrr = 0.0;
  std::size_t evaluated = 0;
};

/// Grid search over weights {0, 0.1, ..., 1} per teacher (all-zero excluded),
/// maximizing MRR@10 of the fused lists. Ties go to vectors whose largest
/// weight is 1, then to the smallest weight sum, then to enumeration order.
FusionTuneResult tune_fusion(const SupervisionPool& dev_pool, const Qrels& dev_qrels,
                             std::size_t grid_steps = 10);

struct PreparedQueries {
  std::vector<QueryRecord> train;
  std::vector<QueryRecord> eval;
  Qrels eval_qrels;
};

/// Builds or loads training queries and the evaluation split.
PreparedQueries prepare_queries(const PipelineConfig& cfg, const Corpus& corpus);

struct RecipeResult {
  std::filesystem::path final_checkpoint;
  std::uint64_t final_checksum = 0;
  std::vector<EpochSummary> epochs;
  std::vector<std::string> teacher_sequence;  // source teacher of each triplet
  std::size_t resumed_from = 0;               // last iteration loaded from disk
  std::optional<EvalReport> report;
  std::optional<EvalReport> untrained_report;
};

struct RecipeOptions {
  bool resume = true;
  bool evaluate_untrained = false;
};

/// queries -> label -> (fuse) -> train per iteration -> retrieve -> eval.
/// Artifacts land in cfg.output_dir; existing iteration checkpoints are
/// reused when resuming. Failures raise StageError.
RecipeResult run_recipe(const PipelineConfig& cfg, const RecipeOptions& options = {});

std::uint64_t file_checksum(const std::filesystem::path& path);

}  // namespace augdr
