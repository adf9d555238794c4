#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "augdr/corpus.hpp"
#include "augdr/dense_encoder.hpp"
#include "augdr/ranked_list.hpp"

namespace augdr {

struct Posting {
  std::uint32_t ordinal;
  std::uint32_t term_frequency;

  bool operator==(const Posting&) const = default;
};

/// Term -> postings over passage texts tokenized at the passage limit.
/// Postings are sorted by ordinal.
class InvertedIndex {
 public:
  /// Throws std::invalid_argument for an empty corpus.
  explicit InvertedIndex(const Corpus& corpus);

  const std::vector<Posting>& postings(const std::string& term) const;
  std::size_t document_frequency(const std::string& term) const {
    return postings(term).size();
  }
  std::uint32_t term_frequency(const std::string& term, std::size_t ordinal) const;

  const std::vector<std::uint32_t>& doc_lengths() const { return doc_lengths_; }
  double avg_doc_length() const { return avg_doc_length_; }
  std::size_t doc_count() const { return doc_lengths_.size(); }
  std::size_t term_count() const { return postings_.size(); }

 private:
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::vector<std::uint32_t> doc_lengths_;
  double avg_doc_length_ = 0.0;
};

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;
};

/// ln((N - df + 0.5) / (df + 0.5) + 1)
double bm25_idf(std::size_t doc_count, std::size_t df);

/// Sum over query tokens (repeats included) of
/// idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avglen)).
double bm25_score(const InvertedIndex& index, const std::vector<std::string>& query_tokens,
                  std::size_t ordinal, const Bm25Params& params = {});

/// Passage vectors precomputed for exhaustive inner-product search.
class DenseIndex {
 public:
  DenseIndex(const DualEncoderParams& params, const Corpus& corpus);

  /// Exact top-k by dot product, ties broken by ascending passage id.
  RankedList search(std::span<const double> query_vec, std::size_t k, std::string query_id,
                    std::string teacher_id) const;

  std::span<const double> passage_vector(std::size_t ordinal) const {
    return std::span<const double>(vectors_).subspan(ordinal * dim_, dim_);
  }

 private:
  const Corpus* corpus_;
  std::size_t dim_;
  std::vector<double> vectors_;
};

enum class TeacherKind { bm25, dense_hash, run_import };

std::string_view to_string(TeacherKind kind);
TeacherKind parse_teacher_kind(std::string_view name);

/// A source of supervision. Implementations are immutable after
/// construction and safe to query concurrently.
class Teacher {
 public:
  explicit Teacher(std::string id) : id_(std::move(id)) {}
  virtual ~Teacher() = default;

  const std::string& id() const { return id_; }
  virtual TeacherKind kind() const = 0;

  /// Top-k passages for the query, ties by ascending passage id.
  virtual RankedList retrieve(const QueryRecord& query, std::size_t k) const = 0;

 private:
  std::string id_;
};

/// Candidates are passages sharing at least one query term; a query with no
/// indexed term gets an empty list.
class Bm25Teacher final : public Teacher {
 public:
  Bm25Teacher(std::string id, const Corpus& corpus, Bm25Params params = {});

  TeacherKind kind() const override { return TeacherKind::bm25; }
  RankedList retrieve(const QueryRecord& query, std::size_t k) const override;
  const InvertedIndex& index() const { return index_; }

 private:
  const Corpus* corpus_;
  InvertedIndex index_;
  Bm25Params params_;
};

/// Scores every passage with a frozen hashed dual encoder.
class DenseHashTeacher final : public Teacher {
 public:
  DenseHashTeacher(std::string id, const Corpus& corpus, DualEncoderParams params);

  /// Random frozen encoder whose passage table is a copy of its query table,
  /// so shared tokens contribute aligned rows.
  static DualEncoderParams tied_random(std::size_t buckets, std::size_t dim, std::uint64_t seed);

  TeacherKind kind() const override { return TeacherKind::dense_hash; }
  RankedList retrieve(const QueryRecord& query, std::size_t k) const override;
  const DualEncoderParams& params() const { return params_; }

 private:
  DualEncoderParams params_;
  DenseIndex index_;
};

/// Serves lists imported from a TREC run file; queries absent from the run
/// get an empty list.
class RunImportTeacher final : public Teacher {
 public:
  RunImportTeacher(std::string id, Run run);
  RunImportTeacher(std::string id, const std::filesystem::path& run_path);

  TeacherKind kind() const override { return TeacherKind::run_import; }
  RankedList retrieve(const QueryRecord& query, std::size_t k) const override;

 private:
  Run run_;
};

/// Teachers by id, in registration order.
class TeacherRegistry {
 public:
  /// Throws std::invalid_argument when the id is already registered.
  void add(std::unique_ptr<Teacher> teacher);
  const Teacher& get(const std::string& teacher_id) const;
  bool contains(const std::string& teacher_id) const;
  const std::vector<std::string>& ids() const { return order_; }

 private:
  std::map<std::string, std::unique_ptr<Teacher>> teachers_;
  std::vector<std::string> order_;
};

/// Throws std::out_of_range for an unknown teacher id and
/// std::invalid_argument for k == 0.
RankedList teacher_retrieve(const TeacherRegistry& registry, const std::string& teacher_id,
                            const QueryRecord& query, std::size_t k);

}  // namespace augdr
