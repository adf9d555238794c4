#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "augdr/corpus.hpp"
#include "augdr/dense_encoder.hpp"
#include "augdr/ranked_list.hpp"

namespace augdr {

/// query_id -> passage_id -> grade (>= 0). Grade >= 1 counts as relevant.
class Qrels {
 public:
  using Judgments = std::map<std::string, int>;

  void add(const std::string& query_id, const std::string& passage_id, int grade);
  const std::map<std::string, Judgments>& judgments() const { return judgments_; }
  const Judgments* find(const std::string& query_id) const;
  std::size_t size() const { return judgments_.size(); }

  /// Queries with at least one relevant judgment.
  std::vector<std::string> judged_queries() const;

  bool operator==(const Qrels&) const = default;

 private:
  std::map<std::string, Judgments> judgments_;
};

/// `query_id 0 passage_id grade` per line; negative grades and malformed
/// lines raise ParseError.
Qrels load_qrels(const std::filesystem::path& path);
void write_qrels(const std::filesystem::path& path, const Qrels& qrels);

/// Exhaustive top-k over the corpus by the student's dot-product score.
RankedList retrieve_topk(const DualEncoderParams& params, const Corpus& corpus,
                         const QueryRecord& query, std::size_t k);

/// Retrieves for many queries, reusing one passage encoding pass.
Run retrieve_all(const DualEncoderParams& params, const Corpus& corpus,
                 const std::vector<QueryRecord>& queries, std::size_t k,
                 const std::string& run_tag = "student");

// The metrics average over queries that have at least one relevant judgment.
// Such queries missing from the run score 0; run queries without judgments
// are ignored. Unjudged retrieved passages count as non-relevant.

double mrr_at_k(const Run& run, const Qrels& qrels, std::size_t k = 10);
double recall_at_k(const Run& run, const Qrels& qrels, std::size_t k = 1000);
/// Gain 2^grade - 1, discount log2(rank + 1).
double ndcg_at_k(const Run& run, const Qrels& qrels, std::size_t k = 10);
double success_at_k(const Run& run, const Qrels& qrels, std::size_t k = 5);

struct EvalCutoffs {
  std::size_t mrr = 10;
  std::size_t recall = 1000;
  std::size_t ndcg = 10;
  std::size_t success = 5;
};

struct EvalReport {
  EvalCutoffs cutoffs;
  std::map<std::string, double> metrics;
  std::map<std::string, std::map<std::string, double>> per_query;
};

EvalReport evaluate(const Run& run, const Qrels& qrels, const EvalCutoffs& cutoffs = {});

/// `metric<TAB>value` lines.
void write_eval_report(const std::filesystem::path& path, const EvalReport& report);

}  // namespace augdr
