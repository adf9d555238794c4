#include "augdr/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <stdexcept>

#include "augdr/teachers.hpp"

namespace augdr {

namespace {

using PerQuery = std::map<std::string, double>;

int grade_of(const Qrels::Judgments& j, const std::string& passage_id) {
  auto it = j.find(passage_id);
  return it == j.end() ? 0 : it->second;
}

// Evaluates fn(list-or-null, judgments) for every query with a relevant
// judgment.
PerQuery per_query(const Run& run, const Qrels& qrels,
                   const std::function<double(const RankedList*, const Qrels::Judgments&)>& fn) {
  PerQuery out;
  for (const auto& qid : qrels.judged_queries()) {
    auto it = run.find(qid);
    out[qid] = fn(it == run.end() ? nullptr : &it->second, *qrels.find(qid));
  }
  return out;
}

double mean(const PerQuery& values) {
  if (values.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [qid, v] : values) total += v;
  return total / static_cast<double>(values.size());
}

std::size_t depth(const RankedList* list, std::size_t k) {
  return list == nullptr ? 0 : std::min(k, list->size());
}

PerQuery mrr_per_query(const Run& run, const Qrels& qrels, std::size_t k) {
  return per_query(run, qrels, [k](const RankedList* list, const Qrels::Judgments& j) {
    for (std::size_t i = 0; i < depth(list, k); ++i) {
      if (grade_of(j, list->entries[i].passage_id) >= 1) return 1.0 / static_cast<double>(i + 1);
    }
    return 0.0;
  });
}

PerQuery recall_per_query(const Run& run, const Qrels& qrels, std::size_t k) {
  return per_query(run, qrels, [k](const RankedList* list, const Qrels::Judgments& j) {
    std::size_t relevant = 0;
    for (const auto& [pid, g] : j) relevant += g >= 1 ? 1 : 0;
    std::size_t found = 0;
    for (std::size_t i = 0; i < depth(list, k); ++i) {
      found += grade_of(j, list->entries[i].passage_id) >= 1 ? 1 : 0;
    }
    return static_cast<double>(found) / static_cast<double>(relevant);
  });
}

PerQuery ndcg_per_query(const Run& run, const Qrels& qrels, std::size_t k) {
  auto gain = [](int grade) { return std::exp2(static_cast<double>(grade)) - 1.0; };
  auto discount = [](std::size_t rank) { return std::log2(static_cast<double>(rank) + 1.0); };
  return per_query(run, qrels, [&](const RankedList* list, const Qrels::Judgments& j) {
    double dcg = 0.0;
    for (std::size_t i = 0; i < depth(list, k); ++i) {
      dcg += gain(grade_of(j, list->entries[i].passage_id)) / discount(i + 1);
    }
    std::vector<int> grades;
    for (const auto& [pid, g] : j) grades.push_back(g);
    std::sort(grades.begin(), grades.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, grades.size()); ++i) {
      idcg += gain(grades[i]) / discount(i + 1);
    }
    return dcg / idcg;
  });
}

PerQuery success_per_query(const Run& run, const Qrels& qrels, std::size_t k) {
  return per_query(run, qrels, [k](const RankedList* list, const Qrels::Judgments& j) {
    for (std::size_t i = 0; i < depth(list, k); ++i) {
      if (grade_of(j, list->entries[i].passage_id) >= 1) return 1.0;
    }
    return 0.0;
  });
}

}  // namespace

void Qrels::add(const std::string& query_id, const std::string& passage_id, int grade) {
  if (grade < 0) throw std::invalid_argument("negative relevance grade");
  judgments_[query_id][passage_id] = grade;
}

const Qrels::Judgments* Qrels::find(const std::string& query_id) const {
  auto it = judgments_.find(query_id);
  return it == judgments_.end() ? nullptr : &it->second;
}

std::vector<std::string> Qrels::judged_queries() const {
  std::vector<std::string> out;
  for (const auto& [qid, j] : judgments_) {
    if (std::any_of(j.begin(), j.end(), [](const auto& e) { return e.second >= 1; })) {
      out.push_back(qid);
    }
  }
  return out;
}

Qrels load_qrels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Qrels qrels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string_view> f;
    std::string_view rest(line);
    while (!rest.empty()) {
      auto b = rest.find_first_not_of(" \t");
      if (b == std::string_view::npos) break;
      rest.remove_prefix(b);
      auto e = rest.find_first_of(" \t");
      f.push_back(rest.substr(0, e));
      rest.remove_prefix(e == std::string_view::npos ? rest.size() : e);
    }
    if (f.empty()) continue;
    if (f.size() != 4) {
      throw ParseError(path, line_no, "expected `query_id 0 passage_id grade`");
    }
    int grade = 0;
    auto [p, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), grade);
    if (ec != std::errc() || p != f[3].data() + f[3].size()) {
      throw ParseError(path, line_no, "invalid grade '" + std::string(f[3]) + "'");
    }
    if (grade < 0) throw ParseError(path, line_no, "negative grade " + std::to_string(grade));
    qrels.add(std::string(f[0]), std::string(f[2]), grade);
  }
  return qrels;
}

void write_qrels(const std::filesystem::path& path, const Qrels& qrels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [qid, j] : qrels.judgments()) {
    for (const auto& [pid, g] : j) out << qid << " 0 " << pid << ' ' << g << '\n';
  }
}

RankedList retrieve_topk(const DualEncoderParams& params, const Corpus& corpus,
                         const QueryRecord& query, std::size_t k) {
  DenseIndex index(params, corpus);
  return index.search(encode_text(params, EncoderSide::query, query.text), k, query.id, "student");
}

Run retrieve_all(const DualEncoderParams& params, const Corpus& corpus,
                 const std::vector<QueryRecord>& queries, std::size_t k,
                 const std::string& run_tag) {
  DenseIndex index(params, corpus);
  Run run;
  for (const auto& q : queries) {
    run.emplace(q.id, index.search(encode_text(params, EncoderSide::query, q.text), k, q.id,
                                   run_tag));
  }
  return run;
}

double mrr_at_k(const Run& run, const Qrels& qrels, std::size_t k) {
  return mean(mrr_per_query(run, qrels, k));
}

double recall_at_k(const Run& run, const Qrels& qrels, std::size_t k) {
  return mean(recall_per_query(run, qrels, k));
}

double ndcg_at_k(const Run& run, const Qrels& qrels, std::size_t k) {
  return mean(ndcg_per_query(run, qrels, k));
}

double success_at_k(const Run& run, const Qrels& qrels, std::size_t k) {
  return mean(success_per_query(run, qrels, k));
}

EvalReport evaluate(const Run& run, const Qrels& qrels, const EvalCutoffs& cutoffs) {
  EvalReport report;
  report.cutoffs = cutoffs;
  auto record = [&](const std::string& name, const PerQuery& values) {
    report.metrics[name] = mean(values);
    for (const auto& [qid, v] : values) report.per_query[qid][name] = v;
  };
  record("mrr@" + std::to_string(cutoffs.mrr), mrr_per_query(run, qrels, cutoffs.mrr));
  record("recall@" + std::to_string(cutoffs.recall), recall_per_query(run, qrels, cutoffs.recall));
  record("ndcg@" + std::to_string(cutoffs.ndcg), ndcg_per_query(run, qrels, cutoffs.ndcg));
  record("success@" + std::to_string(cutoffs.success),
         success_per_query(run, qrels, cutoffs.success));
  return report;
}

void write_eval_report(const std::filesystem::path& path, const EvalReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [name, value] : report.metrics) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    out << name << '\t' << std::string_view(buf, static_cast<std::size_t>(p - buf)) << '\n';
  }
}

}  // namespace augdr
