#include "augdr/query_augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "augdr/hashing.hpp"
#include "augdr/rng.hpp"

namespace augdr {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_token_char(char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

// Byte offset just past the n-th token of s (n >= 1), or npos when s has
// fewer than n tokens.
std::size_t end_of_nth_token(std::string_view s, std::size_t n) {
  std::size_t seen = 0;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && !is_token_char(s[i])) ++i;
    if (i == s.size()) break;
    while (i < s.size() && is_token_char(s[i])) ++i;
    if (++seen == n) return i;
  }
  return std::string_view::npos;
}

std::vector<std::string_view> split_sentences(std::string_view text,
                                              std::string_view terminators) {
  std::vector<std::string_view> sentences;
  std::size_t start = 0;
  auto flush = [&](std::size_t end) {
    auto s = trim(text.substr(start, end - start));
    if (!s.empty()) sentences.push_back(s);
    start = end;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c == '\n') {
      flush(i);
      start = i + 1;
    } else if (terminators.find(c) != std::string_view::npos && i + 1 < text.size() &&
               is_space(text[i + 1])) {
      flush(i + 1);
    }
  }
  flush(text.size());
  return sentences;
}

// Small English function-word list; these never make useful pseudo-queries.
const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",    "an",   "and",  "are",  "as",   "at",   "be",   "by",   "for",
      "from", "has",  "have", "he",   "her",  "his",  "i",    "in",   "is",
      "it",   "its",  "of",   "on",   "or",   "she",  "that", "the",  "their",
      "them", "they", "this", "to",   "was",  "were", "which", "will", "with",
      "we",   "you",  "not",  "but",  "can",  "been", "also", "into", "than"};
  return words;
}

}  // namespace

bool is_stopword(const std::string& token) { return stopwords().count(token) > 0; }

void CroppingConfig::validate() const {
  if (min_tokens < 1 || min_tokens > max_tokens) {
    throw std::invalid_argument("cropping config requires 1 <= min_tokens <= max_tokens");
  }
}

void MixConfig::validate() const {
  if (!(cropped_fraction >= 0.0 && cropped_fraction <= 1.0)) {
    throw std::invalid_argument("cropped_fraction must lie in [0, 1]");
  }
}

std::vector<QueryRecord> crop_sentences(const Passage& passage, const CroppingConfig& cfg) {
  cfg.validate();
  std::vector<QueryRecord> out;
  std::size_t kept = 0;
  for (auto sentence : split_sentences(passage.text, cfg.sentence_terminators)) {
    auto n_tokens = tokenize(sentence, cfg.max_tokens + 1).size();
    if (n_tokens < cfg.min_tokens) continue;
    if (n_tokens > cfg.max_tokens) {
      sentence = sentence.substr(0, end_of_nth_token(sentence, cfg.max_tokens));
    }
    QueryRecord q;
    q.id = passage.id + "#s" + std::to_string(++kept);
    q.text = std::string(sentence);
    q.origin = QueryOrigin::cropped;
    q.source_passage_id = passage.id;
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<QueryRecord> crop_corpus(const Corpus& corpus, const CroppingConfig& cfg) {
  std::vector<QueryRecord> out;
  for (const auto& p : corpus) {
    auto qs = crop_sentences(p, cfg);
    std::move(qs.begin(), qs.end(), std::back_inserter(out));
  }
  return out;
}

PseudoQueryGenerator::PseudoQueryGenerator(const Corpus& corpus) : corpus_(&corpus) {
  for (const auto& p : corpus) {
    auto seq = tokenize(p.text, kMaxPassageTokens);
    std::unordered_set<std::string> unique(seq.tokens.begin(), seq.tokens.end());
    for (const auto& t : unique) ++document_frequency_[t];
  }
}

double PseudoQueryGenerator::idf(const std::string& token) const {
  auto it = document_frequency_.find(token);
  const double df = it == document_frequency_.end() ? 1.0 : static_cast<double>(it->second);
  const double n = static_cast<double>(std::max<std::size_t>(corpus_->size(), 1));
  return std::log(1.0 + n / df);
}

std::vector<std::pair<std::string, double>> PseudoQueryGenerator::token_weights(
    const Passage& passage) const {
  auto seq = tokenize(passage.text, kMaxPassageTokens);
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> tf;
  for (const auto& t : seq.tokens) {
    if (tf[t]++ == 0) order.push_back(t);
  }
  bool any_content = std::any_of(order.begin(), order.end(),
                                 [](const std::string& t) { return !is_stopword(t); });
  std::vector<std::pair<std::string, double>> weights;
  for (const auto& t : order) {
    if (any_content && is_stopword(t)) continue;
    weights.emplace_back(t, static_cast<double>(tf[t]) * idf(t));
  }
  return weights;
}

std::vector<QueryRecord> PseudoQueryGenerator::generate(const Passage& passage, std::size_t n,
                                                        std::uint64_t seed) const {
  if (n < 1) throw std::invalid_argument("generate_pseudo_queries requires n >= 1");
  auto candidates = token_weights(passage);
  if (candidates.empty()) return {};

  Rng rng(derive_seed(seed, {"generate", passage.id}));
  std::vector<QueryRecord> out;
  out.reserve(n);
  for (std::size_t k = 1; k <= n; ++k) {
    const std::size_t want = std::min(rng.uniform_between(kMinQueryTokens, kMaxQueryTokens),
                                      candidates.size());
    std::vector<double> w;
    w.reserve(candidates.size());
    for (const auto& c : candidates) w.push_back(c.second);
    std::vector<bool> chosen(candidates.size(), false);
    for (std::size_t drawn = 0; drawn < want; ++drawn) {
      double total = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (!chosen[i]) total += w[i];
      }
      double target = rng.uniform_real() * total;
      std::size_t pick = std::numeric_limits<std::size_t>::max();
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (chosen[i]) continue;
        pick = i;
        target -= w[i];
        if (target < 0.0) break;
      }
      chosen[pick] = true;
    }
    std::string text;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (!chosen[i]) continue;
      if (!text.empty()) text += ' ';
      text += candidates[i].first;
    }
    QueryRecord q;
    q.id = passage.id + "#g" + std::to_string(k);
    q.text = std::move(text);
    q.origin = QueryOrigin::generated;
    q.source_passage_id = passage.id;
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<QueryRecord> PseudoQueryGenerator::generate_corpus(std::size_t n_per_passage,
                                                               std::uint64_t seed) const {
  std::vector<QueryRecord> out;
  for (const auto& p : *corpus_) {
    auto qs = generate(p, n_per_passage, seed);
    std::move(qs.begin(), qs.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<QueryRecord> mix_queries(const std::vector<QueryRecord>& cropped,
                                     const std::vector<QueryRecord>& generated,
                                     const MixConfig& cfg, std::optional<std::size_t> total) {
  cfg.validate();
  const std::size_t m = total.value_or(2 * std::min(cropped.size(), generated.size()));
  const auto n_cropped =
      static_cast<std::size_t>(std::floor(cfg.cropped_fraction * static_cast<double>(m) + 0.5));
  const std::size_t n_generated = m - n_cropped;
  if (n_cropped > cropped.size() || n_generated > generated.size()) {
    std::string msg = "mix_queries: requested " + std::to_string(m) + " queries (" +
                      std::to_string(n_cropped) + " cropped, " +
                      std::to_string(n_generated) + " generated)";
    if (n_cropped > cropped.size()) {
      msg += "; cropped short by " + std::to_string(n_cropped - cropped.size());
    }
    if (n_generated > generated.size()) {
      msg += "; generated short by " + std::to_string(n_generated - generated.size());
    }
    throw std::invalid_argument(msg);
  }

  auto take = [&](const std::vector<QueryRecord>& from, std::size_t n, std::string_view label) {
    std::vector<std::size_t> idx(from.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(derive_seed(cfg.seed, {"mix", label}));
    rng.shuffle(std::span(idx));
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    std::vector<QueryRecord> picked;
    picked.reserve(n);
    for (auto i : idx) picked.push_back(from[i]);
    return picked;
  };
  auto mixed = take(cropped, n_cropped, "cropped");
  auto gen = take(generated, n_generated, "generated");
  std::move(gen.begin(), gen.end(), std::back_inserter(mixed));
  Rng rng(derive_seed(cfg.seed, {"mix", "order"}));
  rng.shuffle(std::span(mixed));
  return mixed;
}

}  // namespace augdr
