#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "augdr/corpus.hpp"

namespace augdr {

struct CroppingConfig {
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 64;
  std::string sentence_terminators = ".!?";

  void validate() const;
};

struct MixConfig {
  double cropped_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Splits a passage into sentences and emits each one with at least
/// min_tokens tokens as a cropped query with id `<passage>#s<k>` (k counts
/// kept sentences from 1). A sentence ends at a terminator followed by
/// whitespace, or at a newline. Sentences over max_tokens tokens are cut
/// right after their max_tokens-th token.
std::vector<QueryRecord> crop_sentences(const Passage& passage,
                                        const CroppingConfig& cfg = {});

std::vector<QueryRecord> crop_corpus(const Corpus& corpus, const CroppingConfig& cfg = {});

/// Rule-based stand-in for a neural query generator. Each query draws 3-8
/// distinct content tokens from the passage without replacement, with
/// probability proportional to tf(token, passage) * idf(token), and lists
/// them in order of first appearance.
class PseudoQueryGenerator {
 public:
  static constexpr std::size_t kMinQueryTokens = 3;
  static constexpr std::size_t kMaxQueryTokens = 8;

  explicit PseudoQueryGenerator(const Corpus& corpus);

  /// idf(t) = ln(1 + N / df(t)); unseen tokens are treated as df = 1.
  double idf(const std::string& token) const;

  /// Candidate tokens of a passage with their sampling weight tf * idf, in
  /// order of first appearance. Stopwords are dropped unless nothing else
  /// remains.
  std::vector<std::pair<std::string, double>> token_weights(const Passage& passage) const;

  /// Queries get ids `<passage>#g<k>`, k from 1. The per-passage stream is
  /// seeded from (seed, passage id), so output is independent of call order.
  std::vector<QueryRecord> generate(const Passage& passage, std::size_t n,
                                    std::uint64_t seed) const;

  std::vector<QueryRecord> generate_corpus(std::size_t n_per_passage,
                                           std::uint64_t seed) const;

 private:
  const Corpus* corpus_;
  std::unordered_map<std::string, std::size_t> document_frequency_;
};

bool is_stopword(const std::string& token);

/// Draws round-half-up(cropped_fraction * total) cropped queries and the
/// remainder from generated, both without replacement, and shuffles the
/// result. total defaults to 2 * min(|cropped|, |generated|). Throws
/// std::invalid_argument when either side is short.
std::vector<QueryRecord> mix_queries(const std::vector<QueryRecord>& cropped,
                                     const std::vector<QueryRecord>& generated,
                                     const MixConfig& cfg,
                                     std::optional<std::size_t> total = std::nullopt);

}  // namespace augdr
