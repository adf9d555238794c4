#include "augdr/teachers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace augdr {

namespace {

const std::vector<Posting> kEmptyPostings;

double bm25_term(double idf, double tf, double doc_len, double avg_len, const Bm25Params& p) {
  return idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * doc_len / avg_len));
}

void check_k(std::size_t k) {
  if (k == 0) throw std::invalid_argument("retrieval depth k must be >= 1");
}

}  // namespace

InvertedIndex::InvertedIndex(const Corpus& corpus) {
  if (corpus.empty()) throw std::invalid_argument("cannot index an empty corpus");
  doc_lengths_.reserve(corpus.size());
  std::unordered_map<std::string, std::uint32_t> tf;
  double total = 0.0;
  for (std::size_t ordinal = 0; ordinal < corpus.size(); ++ordinal) {
    auto seq = tokenize(corpus[ordinal].text, kMaxPassageTokens);
    tf.clear();
    for (const auto& t : seq.tokens) ++tf[t];
    for (const auto& [term, count] : tf) {
      postings_[term].push_back({static_cast<std::uint32_t>(ordinal), count});
    }
    doc_lengths_.push_back(static_cast<std::uint32_t>(seq.size()));
    total += static_cast<double>(seq.size());
  }
  avg_doc_length_ = total / static_cast<double>(doc_lengths_.size());
}

const std::vector<Posting>& InvertedIndex::postings(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? kEmptyPostings : it->second;
}

std::uint32_t InvertedIndex::term_frequency(const std::string& term, std::size_t ordinal) const {
  const auto& list = postings(term);
  auto it = std::lower_bound(list.begin(), list.end(), ordinal,
                             [](const Posting& p, std::size_t o) { return p.ordinal < o; });
  return it != list.end() && it->ordinal == ordinal ? it->term_frequency : 0;
}

double bm25_idf(std::size_t doc_count, std::size_t df) {
  const double n = static_cast<double>(doc_count);
  const double d = static_cast<double>(df);
  return std::log((n - d + 0.5) / (d + 0.5) + 1.0);
}

double bm25_score(const InvertedIndex& index, const std::vector<std::string>& query_tokens,
                  std::size_t ordinal, const Bm25Params& params) {
  if (ordinal >= index.doc_count()) throw std::out_of_range("bm25_score: ordinal out of range");
  const double len = static_cast<double>(index.doc_lengths()[ordinal]);
  double total = 0.0;
  for (const auto& term : query_tokens) {
    const auto tf = index.term_frequency(term, ordinal);
    if (tf == 0) continue;
    const double idf = bm25_idf(index.doc_count(), index.document_frequency(term));
    total += bm25_term(idf, static_cast<double>(tf), len, index.avg_doc_length(), params);
  }
  return total;
}

DenseIndex::DenseIndex(const DualEncoderParams& params, const Corpus& corpus)
    : corpus_(&corpus), dim_(params.dim()) {
  vectors_.reserve(corpus.size() * dim_);
  for (const auto& p : corpus) {
    auto v = encode_text(params, EncoderSide::passage, p.text);
    vectors_.insert(vectors_.end(), v.begin(), v.end());
  }
}

RankedList DenseIndex::search(std::span<const double> query_vec, std::size_t k,
                              std::string query_id, std::string teacher_id) const {
  check_k(k);
  if (query_vec.size() != dim_) throw std::invalid_argument("DenseIndex: query dim mismatch");
  std::vector<std::pair<std::string, double>> candidates;
  candidates.reserve(corpus_->size());
  for (std::size_t i = 0; i < corpus_->size(); ++i) {
    candidates.emplace_back((*corpus_)[i].id, score(query_vec, passage_vector(i)));
  }
  return make_ranked_list(std::move(query_id), std::move(teacher_id), std::move(candidates), k);
}

std::string_view to_string(TeacherKind kind) {
  switch (kind) {
    case TeacherKind::bm25: return "bm25";
    case TeacherKind::dense_hash: return "dense_hash";
    case TeacherKind::run_import: return "run_import";
  }
  return "bm25";
}

TeacherKind parse_teacher_kind(std::string_view name) {
  if (name == "bm25") return TeacherKind::bm25;
  if (name == "dense_hash") return TeacherKind::dense_hash;
  if (name == "run_import") return TeacherKind::run_import;
  throw std::invalid_argument("unknown teacher kind '" + std::string(name) + "'");
}

Bm25Teacher::Bm25Teacher(std::string id, const Corpus& corpus, Bm25Params params)
    : Teacher(std::move(id)), corpus_(&corpus), index_(corpus), params_(params) {}

RankedList Bm25Teacher::retrieve(const QueryRecord& query, std::size_t k) const {
  check_k(k);
  auto tokens = tokenize(query.text, kMaxQueryTokens).tokens;
  // Term-at-a-time accumulation in query-token order, matching bm25_score.
  std::vector<double> acc(index_.doc_count(), 0.0);
  std::vector<bool> touched(index_.doc_count(), false);
  std::vector<std::size_t> candidates;
  for (const auto& term : tokens) {
    const auto& postings = index_.postings(term);
    if (postings.empty()) continue;
    const double idf = bm25_idf(index_.doc_count(), postings.size());
    for (const auto& p : postings) {
      acc[p.ordinal] += bm25_term(idf, static_cast<double>(p.term_frequency),
                                  static_cast<double>(index_.doc_lengths()[p.ordinal]),
                                  index_.avg_doc_length(), params_);
      if (!touched[p.ordinal]) {
        touched[p.ordinal] = true;
        candidates.push_back(p.ordinal);
      }
    }
  }
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(candidates.size());
  for (auto ordinal : candidates) scored.emplace_back((*corpus_)[ordinal].id, acc[ordinal]);
  return make_ranked_list(query.id, id(), std::move(scored), k);
}

DenseHashTeacher::DenseHashTeacher(std::string id, const Corpus& corpus, DualEncoderParams params)
    : Teacher(std::move(id)), params_(std::move(params)), index_(params_, corpus) {}

DualEncoderParams DenseHashTeacher::tied_random(std::size_t buckets, std::size_t dim,
                                                std::uint64_t seed) {
  auto params = DualEncoderParams::random(buckets, dim, seed);
  auto q = params.table(EncoderSide::query);
  auto p = params.table(EncoderSide::passage);
  std::copy(q.begin(), q.end(), p.begin());
  return params;
}

RankedList DenseHashTeacher::retrieve(const QueryRecord& query, std::size_t k) const {
  check_k(k);
  auto qv = encode_text(params_, EncoderSide::query, query.text);
  return index_.search(qv, k, query.id, id());
}

RunImportTeacher::RunImportTeacher(std::string id, Run run)
    : Teacher(std::move(id)), run_(std::move(run)) {
  for (auto& [qid, list] : run_) list.teacher_id = this->id();
}

RunImportTeacher::RunImportTeacher(std::string id, const std::filesystem::path& run_path)
    : RunImportTeacher(id, import_run_file(run_path, id)) {}

RankedList RunImportTeacher::retrieve(const QueryRecord& query, std::size_t k) const {
  check_k(k);
  auto it = run_.find(query.id);
  if (it == run_.end()) return RankedList{query.id, id(), {}};
  return it->second.prefix(k);
}

void TeacherRegistry::add(std::unique_ptr<Teacher> teacher) {
  const std::string id = teacher->id();
  if (!teachers_.emplace(id, std::move(teacher)).second) {
    throw std::invalid_argument("duplicate teacher id '" + id + "'");
  }
  order_.push_back(id);
}

const Teacher& TeacherRegistry::get(const std::string& teacher_id) const {
  auto it = teachers_.find(teacher_id);
  if (it == teachers_.end()) throw std::out_of_range("unknown teacher id '" + teacher_id + "'");
  return *it->second;
}

bool TeacherRegistry::contains(const std::string& teacher_id) const {
  return teachers_.count(teacher_id) > 0;
}

RankedList teacher_retrieve(const TeacherRegistry& registry, const std::string& teacher_id,
                            const QueryRecord& query, std::size_t k) {
  return registry.get(teacher_id).retrieve(query, k);
}

}  // namespace augdr
