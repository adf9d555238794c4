#include "augdr/supervision.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "augdr/corpus.hpp"
#include "augdr/hashing.hpp"

namespace augdr {

namespace {

constexpr std::size_t kFallbackNegatives = 5;

}  // namespace

SupervisionPool::SupervisionPool(std::vector<std::string> trajectory, std::size_t depth)
    : trajectory_(std::move(trajectory)), depth_(depth) {
  if (trajectory_.empty()) throw std::invalid_argument("supervision trajectory is empty");
  if (depth_ == 0) throw std::invalid_argument("supervision depth must be >= 1");
  std::unordered_set<std::string> seen;
  for (const auto& t : trajectory_) {
    if (!seen.insert(t).second) throw std::invalid_argument("duplicate trajectory teacher '" + t + "'");
  }
}

void SupervisionPool::add(RankedList list) {
  if (std::find(trajectory_.begin(), trajectory_.end(), list.teacher_id) == trajectory_.end()) {
    throw std::invalid_argument("teacher '" + list.teacher_id + "' is not on the trajectory");
  }
  list.validate();
  if (list.size() > depth_) list.entries.resize(depth_);
  auto key = std::make_pair(list.query_id, list.teacher_id);
  lists_.insert_or_assign(std::move(key), std::move(list));
}

void SupervisionPool::add_run(const Run& run) {
  for (const auto& [qid, list] : run) add(list);
}

void SupervisionPool::set_fused(RankedList list) {
  list.validate();
  if (list.size() > depth_) list.entries.resize(depth_);
  auto qid = list.query_id;
  fused_.insert_or_assign(std::move(qid), std::move(list));
}

const RankedList* SupervisionPool::find(const std::string& query_id,
                                        const std::string& teacher_id) const {
  auto it = lists_.find(std::make_pair(query_id, teacher_id));
  return it == lists_.end() ? nullptr : &it->second;
}

const RankedList* SupervisionPool::fused(const std::string& query_id) const {
  auto it = fused_.find(query_id);
  return it == fused_.end() ? nullptr : &it->second;
}

std::vector<std::string> SupervisionPool::query_ids() const {
  std::vector<std::string> out;
  for (const auto& [key, list] : lists_) {
    if (out.empty() || out.back() != key.first) out.push_back(key.first);
  }
  return out;
}

Run SupervisionPool::teacher_run(const std::string& teacher_id) const {
  Run run;
  for (const auto& [key, list] : lists_) {
    if (key.second == teacher_id) run.emplace(key.first, list);
  }
  return run;
}

void SamplerConfig::validate() const {
  if (!(pos_top_k >= 1 && pos_top_k < neg_rank_lo && neg_rank_lo <= neg_rank_hi)) {
    throw std::invalid_argument(
        "sampler config requires 1 <= pos_top_k < neg_rank_lo <= neg_rank_hi");
  }
}

void FusionConfig::validate_for(const std::vector<std::string>& teacher_ids) const {
  bool any_positive = false;
  for (const auto& t : teacher_ids) {
    auto it = weights.find(t);
    if (it == weights.end()) throw std::invalid_argument("no fusion weight for teacher '" + t + "'");
    if (!(it->second >= 0.0)) throw std::invalid_argument("negative fusion weight for '" + t + "'");
    any_positive = any_positive || it->second > 0.0;
  }
  if (!any_positive) throw std::invalid_argument("fusion needs at least one positive weight");
}

std::string_view to_string(SupervisionStrategy strategy) {
  switch (strategy) {
    case SupervisionStrategy::fused: return "fused";
    case SupervisionStrategy::uniform: return "uniform";
    case SupervisionStrategy::progressive: return "progressive";
  }
  return "progressive";
}

SupervisionStrategy parse_strategy(std::string_view name) {
  if (name == "fused") return SupervisionStrategy::fused;
  if (name == "uniform") return SupervisionStrategy::uniform;
  if (name == "progressive") return SupervisionStrategy::progressive;
  throw std::invalid_argument("unknown supervision strategy '" + std::string(name) + "'");
}

RankedList fuse_lists(const std::vector<RankedList>& lists, const FusionConfig& cfg,
                      std::size_t depth) {
  if (lists.empty()) throw std::invalid_argument("fuse_lists: no lists");
  std::vector<std::string> ids;
  for (const auto& l : lists) {
    if (l.query_id != lists.front().query_id) {
      throw std::invalid_argument("fuse_lists: lists belong to different queries");
    }
    ids.push_back(l.teacher_id);
  }
  cfg.validate_for(ids);

  std::unordered_map<std::string, double> fused;
  std::vector<std::string> order;
  for (const auto& list : lists) {
    const double w = cfg.weights.at(list.teacher_id);
    if (list.empty()) continue;
    double hi = list.entries.front().score;
    double lo = list.entries.front().score;
    for (const auto& e : list.entries) {
      hi = std::max(hi, e.score);
      lo = std::min(lo, e.score);
    }
    const double range = hi - lo;
    for (const auto& e : list.entries) {
      const double normalized = range > 0.0 ? (e.score - lo) / range : 1.0;
      auto [it, inserted] = fused.try_emplace(e.passage_id, 0.0);
      if (inserted) order.push_back(e.passage_id);
      it->second += w * normalized;
    }
  }
  std::vector<std::pair<std::string, double>> candidates;
  candidates.reserve(order.size());
  for (auto& id : order) candidates.emplace_back(id, fused[id]);
  return make_ranked_list(lists.front().query_id, std::string(kFusedTeacherId),
                          std::move(candidates), depth);
}

void fuse_pool(SupervisionPool& pool, const FusionConfig& cfg) {
  for (const auto& qid : pool.query_ids()) {
    std::vector<RankedList> lists;
    for (const auto& t : pool.trajectory()) {
      if (const auto* l = pool.find(qid, t)) lists.push_back(*l);
    }
    pool.set_fused(fuse_lists(lists, cfg, pool.depth()));
  }
}

const RankedList* select_supervision(const SupervisionPool& pool, const std::string& query_id,
                                     std::size_t iteration, SupervisionStrategy strategy,
                                     Rng& rng) {
  if (iteration < 1) throw std::invalid_argument("iteration must be >= 1");
  switch (strategy) {
    case SupervisionStrategy::fused:
      return pool.fused(query_id);
    case SupervisionStrategy::uniform: {
      auto n = rng.uniform_index(pool.teacher_count());
      return pool.find(query_id, pool.trajectory()[n]);
    }
    case SupervisionStrategy::progressive: {
      if (iteration > pool.teacher_count()) {
        throw std::invalid_argument("progressive iteration " + std::to_string(iteration) +
                                    " exceeds the trajectory length " +
                                    std::to_string(pool.teacher_count()));
      }
      auto n = rng.uniform_index(iteration);
      return pool.find(query_id, pool.trajectory()[n]);
    }
  }
  return nullptr;
}

SampleOutcome sample_triplet(const RankedList& list, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t n = list.size();
  if (n < cfg.pos_top_k + kFallbackNegatives) {
    return {std::nullopt, "list of " + std::to_string(n) + " entries is shorter than " +
                              std::to_string(cfg.pos_top_k + kFallbackNegatives)};
  }
  std::size_t neg_lo = cfg.neg_rank_lo;
  std::size_t neg_hi = cfg.neg_rank_hi;
  if (n < cfg.neg_rank_hi) {
    neg_lo = n - kFallbackNegatives + 1;
    neg_hi = n;
  }
  const auto pos_rank = rng.uniform_between(1, cfg.pos_top_k);
  const auto& positive = list.entries[pos_rank - 1].passage_id;
  constexpr int kMaxRedraws = 64;
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    const auto neg_rank = rng.uniform_between(neg_lo, neg_hi);
    const auto& negative = list.entries[neg_rank - 1].passage_id;
    if (negative == positive) continue;
    return {Triplet{list.query_id, positive, negative, list.teacher_id, 0}, {}};
  }
  return {std::nullopt, "no negative distinct from the positive"};
}

std::vector<PositiveProbability> positive_probability(const SupervisionPool& pool,
                                                      const std::string& query_id,
                                                      std::size_t iteration, std::size_t k) {
  if (iteration < 1 || k < 1) throw std::invalid_argument("positive_probability needs T, k >= 1");
  const std::size_t teachers = std::min(iteration, pool.teacher_count());
  struct Tally {
    std::size_t hits = 0;
    double rr = 0.0;
  };
  std::map<std::string, Tally> tally;
  for (std::size_t n = 0; n < teachers; ++n) {
    const auto* list = pool.find(query_id, pool.trajectory()[n]);
    if (list == nullptr) continue;
    const std::size_t top = std::min(k, list->size());
    for (std::size_t i = 0; i < top; ++i) {
      auto& t = tally[list->entries[i].passage_id];
      ++t.hits;
      t.rr += 1.0 / static_cast<double>(list->entries[i].rank);
    }
  }
  std::vector<std::pair<std::string, Tally>> rows(tally.begin(), tally.end());
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.second.hits != b.second.hits) return a.second.hits > b.second.hits;
    if (a.second.rr != b.second.rr) return a.second.rr > b.second.rr;
    return a.first < b.first;
  });
  std::vector<PositiveProbability> out;
  out.reserve(rows.size());
  const double denom = static_cast<double>(iteration) * static_cast<double>(k);
  for (auto& [id, t] : rows) {
    out.push_back({id, static_cast<double>(t.hits) / denom, t.rr});
  }
  return out;
}

double supervision_diversity(const SupervisionPool& pool, std::size_t iteration, std::size_t k) {
  if (k > pool.depth()) {
    throw std::invalid_argument("diversity cutoff k exceeds the pool depth");
  }
  const std::size_t teachers = std::min(iteration, pool.teacher_count());
  auto queries = pool.query_ids();
  if (queries.empty()) return 0.0;
  double total = 0.0;
  for (const auto& qid : queries) {
    std::set<std::string> positives;
    for (std::size_t n = 0; n < teachers; ++n) {
      const auto* list = pool.find(qid, pool.trajectory()[n]);
      if (list == nullptr) continue;
      const std::size_t top = std::min(k, list->size());
      for (std::size_t i = 0; i < top; ++i) positives.insert(list->entries[i].passage_id);
    }
    total += static_cast<double>(positives.size());
  }
  return total / static_cast<double>(queries.size());
}

void Schedule::validate(std::size_t teacher_count) const {
  if (first_iteration < 1 || first_iteration > last_iteration) {
    throw std::invalid_argument("schedule requires 1 <= first_iteration <= last_iteration");
  }
  if (strategy == SupervisionStrategy::progressive && last_iteration > teacher_count) {
    throw std::invalid_argument("progressive schedule runs past the trajectory length");
  }
  if (epochs_per_iteration < 1) throw std::invalid_argument("epochs_per_iteration must be >= 1");
  if (triplets_per_query_per_epoch < 1) {
    throw std::invalid_argument("triplets_per_query_per_epoch must be >= 1");
  }
}

TrainingStream emit_iteration(const SupervisionPool& pool,
                              const std::vector<std::string>& query_ids, std::size_t iteration,
                              const Schedule& schedule, const SamplerConfig& sampler) {
  sampler.validate();
  TrainingStream stream;
  const auto iter_label = std::to_string(iteration);
  for (std::size_t epoch = 1; epoch <= schedule.epochs_per_iteration; ++epoch) {
    const auto epoch_label = std::to_string(epoch);
    std::vector<std::string> order = query_ids;
    Rng shuffle_rng(derive_seed(sampler.seed, {"shuffle", iter_label, epoch_label}));
    shuffle_rng.shuffle(std::span(order));
    Rng rng(derive_seed(sampler.seed, {"sample", iter_label, epoch_label}));
    for (const auto& qid : order) {
      for (std::size_t j = 0; j < schedule.triplets_per_query_per_epoch; ++j) {
        const auto* list = select_supervision(pool, qid, iteration, schedule.strategy, rng);
        if (list == nullptr) {
          stream.skipped.push_back({iteration, epoch, qid, "missing supervision list"});
          continue;
        }
        auto outcome = sample_triplet(*list, sampler, rng);
        if (!outcome.triplet) {
          stream.skipped.push_back({iteration, epoch, qid, outcome.skip_reason});
          continue;
        }
        outcome.triplet->iteration = iteration;
        stream.triplets.push_back(std::move(*outcome.triplet));
        stream.epochs.push_back(epoch);
      }
    }
  }
  return stream;
}

TrainingStream emit_training_stream(const SupervisionPool& pool,
                                    const std::vector<std::string>& query_ids,
                                    const Schedule& schedule, const SamplerConfig& sampler) {
  schedule.validate(pool.teacher_count());
  TrainingStream all;
  for (std::size_t t = schedule.first_iteration; t <= schedule.last_iteration; ++t) {
    auto part = emit_iteration(pool, query_ids, t, schedule, sampler);
    std::move(part.triplets.begin(), part.triplets.end(), std::back_inserter(all.triplets));
    all.epochs.insert(all.epochs.end(), part.epochs.begin(), part.epochs.end());
    std::move(part.skipped.begin(), part.skipped.end(), std::back_inserter(all.skipped));
  }
  return all;
}

void write_triplets(const std::filesystem::path& path, const std::vector<Triplet>& triplets) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : triplets) {
    out << t.query_id << '\t' << t.positive_id << '\t' << t.negative_id << '\t'
        << t.source_teacher << '\t' << t.iteration << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Triplet> load_triplets(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Triplet> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1) {
      f.push_back(line.substr(start, tab - start));
    }
    f.push_back(line.substr(start));
    if (f.size() != 5) throw ParseError(path, line_no, "expected 5 tab-separated fields");
    Triplet t{f[0], f[1], f[2], f[3], 0};
    try {
      t.iteration = std::stoul(f[4]);
    } catch (const std::exception&) {
      throw ParseError(path, line_no, "invalid iteration '" + f[4] + "'");
    }
    if (t.positive_id == t.negative_id) {
      throw ParseError(path, line_no, "positive equals negative");
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace augdr
