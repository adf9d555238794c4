#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace augdr {

inline constexpr std::size_t kMaxQueryTokens = 32;
inline constexpr std::size_t kMaxPassageTokens = 128;

/// Raised for malformed input files. The message carries the path and the
/// 1-based line number when one applies.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::filesystem::path& path, std::size_t line,
             const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class FileFormat { tsv, jsonl };
enum class QueryOrigin { human, cropped, generated };

FileFormat parse_file_format(std::string_view name);
std::string_view to_string(QueryOrigin origin);
QueryOrigin parse_query_origin(std::string_view name);

struct Passage {
  std::string id;
  std::string text;

  bool operator==(const Passage&) const = default;
};

struct QueryRecord {
  std::string id;
  std::string text;
  QueryOrigin origin = QueryOrigin::human;
  // Set iff origin != human.
  std::optional<std::string> source_passage_id;

  bool operator==(const QueryRecord&) const = default;
};

struct TokenSequence {
  std::vector<std::string> tokens;
  std::size_t truncated_to = 0;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  bool operator==(const TokenSequence&) const = default;
};

/// Lowercases ASCII letters, splits on every maximal run of characters that
/// are not ASCII alphanumerics and keeps the first max_len tokens.
TokenSequence tokenize(std::string_view text, std::size_t max_len);

/// Passages in insertion order with an id -> ordinal lookup. Immutable once
/// loaded; concurrent reads are safe.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Passage> passages);
  Corpus(std::initializer_list<Passage> passages)
      : Corpus(std::vector<Passage>(passages)) {}

  /// Throws std::invalid_argument on a duplicate id or an empty text.
  void add(Passage passage);

  std::size_t size() const { return passages_.size(); }
  bool empty() const { return passages_.empty(); }
  const Passage& operator[](std::size_t ordinal) const { return passages_[ordinal]; }
  const std::vector<Passage>& passages() const { return passages_; }

  std::optional<std::size_t> ordinal_of(std::string_view id) const;
  const Passage& at(std::string_view id) const;
  bool contains(std::string_view id) const { return ordinal_of(id).has_value(); }

  auto begin() const { return passages_.begin(); }
  auto end() const { return passages_.end(); }

 private:
  std::vector<Passage> passages_;
  std::unordered_map<std::string, std::size_t> ordinals_;
};

Corpus load_corpus(const std::filesystem::path& path, FileFormat format);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus,
                  FileFormat format);

/// Reads `id<TAB>text` rows (TSV, optionally followed by
/// `<TAB>origin<TAB>source_passage_id`) or JSONL objects with `id`, `text`
/// and an optional `source_passage_id`. Every record is stamped with origin.
std::vector<QueryRecord> load_queries(const std::filesystem::path& path,
                                      FileFormat format, QueryOrigin origin);

/// Reads the four-column query TSV written by write_queries, taking each
/// record's origin from the file.
std::vector<QueryRecord> load_augmented_queries(const std::filesystem::path& path);

/// Writes `id<TAB>text<TAB>origin<TAB>source_passage_id` rows.
void write_queries(const std::filesystem::path& path,
                   const std::vector<QueryRecord>& queries);

/// Checks id uniqueness and that every source_passage_id exists in corpus.
/// Returns the list of problems found, empty when valid.
std::vector<std::string> validate_queries(const std::vector<QueryRecord>& queries,
                                          const Corpus& corpus);

}  // namespace augdr
