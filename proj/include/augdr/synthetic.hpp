#pragma once

#include <cstddef>
#include <cstdint>

#include "augdr/corpus.hpp"

namespace augdr {

/// Topic-structured pseudo-word corpus for desk experiments. Passages are
/// dealt round-robin into equal-sized topics. A passage mixes common words,
/// its topic's words and a few words it owns alone, in period-terminated
/// sentences.
struct SyntheticCorpusConfig {
  std::size_t passages = 2000;
  std::size_t topics = 250;
  std::size_t words_per_topic = 30;
  std::size_t common_words = 80;
  std::size_t specific_words_per_passage = 4;
  std::size_t sentences_per_passage = 6;
  std::size_t min_sentence_tokens = 8;
  std::size_t max_sentence_tokens = 14;
  double common_share = 0.05;
  double topic_share = 0.70;
  std::uint64_t seed = 1;
};

Corpus make_synthetic_corpus(const SyntheticCorpusConfig& cfg = {});

}  // namespace augdr
