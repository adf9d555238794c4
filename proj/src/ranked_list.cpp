#include "augdr/ranked_list.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "augdr/corpus.hpp"

namespace augdr {

namespace {

std::string format_score(double score) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), score);
  if (ec != std::errc()) throw std::runtime_error("cannot format score");
  return std::string(buf, ptr);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

}  // namespace

void RankedList::validate() const {
  std::unordered_set<std::string_view> seen;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.rank != i + 1) {
      throw std::logic_error("ranked list for '" + query_id + "': rank " +
                             std::to_string(e.rank) + " at position " + std::to_string(i + 1));
    }
    if (i > 0 && e.score > entries[i - 1].score) {
      throw std::logic_error("ranked list for '" + query_id + "': score increases at rank " +
                             std::to_string(e.rank));
    }
    if (!seen.insert(e.passage_id).second) {
      throw std::logic_error("ranked list for '" + query_id + "': duplicate passage '" +
                             e.passage_id + "'");
    }
  }
}

RankedList RankedList::prefix(std::size_t k) const {
  RankedList out{query_id, teacher_id, {}};
  out.entries.assign(entries.begin(),
                     entries.begin() + static_cast<std::ptrdiff_t>(std::min(k, entries.size())));
  return out;
}

RankedList make_ranked_list(std::string query_id, std::string teacher_id,
                            std::vector<std::pair<std::string, double>> candidates,
                            std::size_t k) {
  auto better = [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  };
  const std::size_t keep = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end(), better);
  RankedList list{std::move(query_id), std::move(teacher_id), {}};
  list.entries.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    list.entries.push_back({std::move(candidates[i].first), i + 1, candidates[i].second});
  }
  return list;
}

void append_run(std::ostream& out, const RankedList& list) {
  const std::string& tag = list.teacher_id.empty() ? std::string("run") : list.teacher_id;
  for (const auto& e : list.entries) {
    out << list.query_id << " Q0 " << e.passage_id << ' ' << e.rank << ' '
        << format_score(e.score) << ' ' << tag << '\n';
  }
}

void write_run(const std::filesystem::path& path, const std::vector<RankedList>& lists) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& list : lists) append_run(out, list);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_run(const std::filesystem::path& path, const Run& run) {
  std::vector<RankedList> lists;
  lists.reserve(run.size());
  for (const auto& [qid, list] : run) lists.push_back(list);
  write_run(path, lists);
}

Run import_run_file(const std::filesystem::path& path, const std::string& teacher_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Run run;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto f = split_ws(line);
    if (f.empty()) continue;
    if (f.size() != 6) {
      throw ParseError(path, line_no, "expected 6 fields (qid Q0 pid rank score tag), found " +
                                          std::to_string(f.size()));
    }
    std::size_t rank = 0;
    {
      auto [p, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), rank);
      if (ec != std::errc() || p != f[3].data() + f[3].size() || rank == 0) {
        throw ParseError(path, line_no, "invalid rank '" + std::string(f[3]) + "'");
      }
    }
    double score = 0.0;
    {
      auto [p, ec] = std::from_chars(f[4].data(), f[4].data() + f[4].size(), score);
      if (ec != std::errc() || p != f[4].data() + f[4].size()) {
        throw ParseError(path, line_no, "invalid score '" + std::string(f[4]) + "'");
      }
    }
    std::string qid(f[0]);
    std::string pid(f[2]);
    if (!seen.emplace(qid, pid).second) {
      throw ParseError(path, line_no, "duplicate passage '" + pid + "' for query '" + qid + "'");
    }
    auto [it, inserted] = run.try_emplace(qid);
    auto& list = it->second;
    if (inserted) {
      list.query_id = qid;
      list.teacher_id = teacher_id.empty() ? std::string(f[5]) : teacher_id;
    }
    if (rank != list.entries.size() + 1) {
      throw ParseError(path, line_no, "rank " + std::to_string(rank) + " out of order for query '" +
                                          qid + "', expected " +
                                          std::to_string(list.entries.size() + 1));
    }
    if (!list.entries.empty() && score > list.entries.back().score) {
      throw ParseError(path, line_no, "score increases with rank for query '" + qid + "'");
    }
    list.entries.push_back({std::move(pid), rank, score});
  }
  return run;
}

}  // namespace augdr
