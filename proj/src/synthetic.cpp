#include "augdr/synthetic.hpp"

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "augdr/hashing.hpp"
#include "augdr/rng.hpp"

namespace augdr {

namespace {

// Distinct pronounceable word for every index: base-(consonant*vowel)
// syllables, with a tag letter separating the word classes.
std::string pseudo_word(char tag, std::size_t index) {
  static constexpr std::array<char, 15> consonants = {'b', 'd', 'f', 'g', 'k', 'l', 'm', 'n',
                                                      'p', 'r', 's', 't', 'v', 'z', 'h'};
  static constexpr std::array<char, 5> vowels = {'a', 'e', 'i', 'o', 'u'};
  constexpr std::size_t base = consonants.size() * vowels.size();
  std::string word(1, tag);
  do {
    const std::size_t syllable = index % base;
    word += consonants[syllable / vowels.size()];
    word += vowels[syllable % vowels.size()];
    index /= base;
  } while (index > 0);
  return word;
}

}  // namespace

Corpus make_synthetic_corpus(const SyntheticCorpusConfig& cfg) {
  if (cfg.passages == 0 || cfg.topics == 0 || cfg.words_per_topic == 0 || cfg.common_words == 0 ||
      cfg.specific_words_per_passage == 0 || cfg.min_sentence_tokens == 0 ||
      cfg.min_sentence_tokens > cfg.max_sentence_tokens || cfg.common_share < 0.0 ||
      cfg.topic_share < 0.0 || cfg.common_share + cfg.topic_share > 1.0) {
    throw std::invalid_argument("invalid synthetic corpus config");
  }
  Rng rng(derive_seed(cfg.seed, {"synthetic-corpus"}));
  Corpus corpus;
  for (std::size_t p = 0; p < cfg.passages; ++p) {
    const std::size_t topic = p % cfg.topics;
    std::string text;
    for (std::size_t s = 0; s < cfg.sentences_per_passage; ++s) {
      const std::size_t len = rng.uniform_between(cfg.min_sentence_tokens, cfg.max_sentence_tokens);
      for (std::size_t t = 0; t < len; ++t) {
        const double u = rng.uniform_real();
        std::string word;
        if (u < cfg.common_share) {
          word = pseudo_word('c', rng.uniform_index(cfg.common_words));
        } else if (u < cfg.common_share + cfg.topic_share) {
          word = pseudo_word('t', topic * cfg.words_per_topic + rng.uniform_index(cfg.words_per_topic));
        } else {
          word = pseudo_word('s', p * cfg.specific_words_per_passage +
                                      rng.uniform_index(cfg.specific_words_per_passage));
        }
        if (t == 0) {
          word[0] = static_cast<char>(word[0] - 'a' + 'A');
          if (!text.empty()) text += ' ';
        } else {
          text += ' ';
        }
        text += word;
      }
      text += '.';
    }
    corpus.add({"p" + std::to_string(p), std::move(text)});
  }
  return corpus;
}

}  // namespace augdr
