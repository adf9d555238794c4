#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace augdr {

struct RankedEntry {
  std::string passage_id;
  std::size_t rank = 0;  // 1-based
  double score = 0.0;

  bool operator==(const RankedEntry&) const = default;
};

/// One source's ordered answer for one query. Ranks run 1..n, scores are
/// non-increasing and passage ids are distinct.
struct RankedList {
  std::string query_id;
  std::string teacher_id;
  std::vector<RankedEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  /// Throws std::logic_error naming the first violated invariant.
  void validate() const;

  /// Copy holding only the first k entries.
  RankedList prefix(std::size_t k) const;

  bool operator==(const RankedList&) const = default;
};

/// query_id -> list, ordered by query id so output files are deterministic.
using Run = std::map<std::string, RankedList>;

/// Builds a list from (passage_id, score) candidates: sorts by score
/// descending then passage id ascending, keeps the top k and assigns ranks.
RankedList make_ranked_list(std::string query_id, std::string teacher_id,
                            std::vector<std::pair<std::string, double>> candidates,
                            std::size_t k);

/// TREC run format: `query_id Q0 passage_id rank score tag`. Scores are
/// printed in shortest round-trip form, so reading back is exact.
void write_run(const std::filesystem::path& path, const std::vector<RankedList>& lists);
void write_run(const std::filesystem::path& path, const Run& run);
void append_run(std::ostream& out, const RankedList& list);

/// Reads a TREC run. When teacher_id is non-empty it replaces the tag column.
/// Ranks must count up from 1 per query and scores must not increase with
/// rank; violations and duplicate (query, passage) pairs raise ParseError.
Run import_run_file(const std::filesystem::path& path, const std::string& teacher_id = {});

}  // namespace augdr
