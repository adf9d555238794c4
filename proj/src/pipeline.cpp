#include "augdr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "augdr/hashing.hpp"
#include "augdr/rng.hpp"

namespace augdr {

using nlohmann::json;

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string msg = "invalid configuration (" + std::to_string(problems.size()) + " problem" +
                    (problems.size() == 1 ? "" : "s") + "):";
  for (const auto& p : problems) msg += "\n  - " + p;
  return msg;
}

// Reads typed fields from one JSON object, recording problems instead of
// throwing so that every error can be reported together.
class FieldReader {
 public:
  FieldReader(const json& obj, std::string prefix, std::vector<std::string>& problems)
      : obj_(obj), prefix_(std::move(prefix)), problems_(problems) {
    if (!obj_.is_object()) problems_.push_back(where("") + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.is_object()) return;
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw std::invalid_argument("expected a boolean");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw std::invalid_argument("expected a string");
      }
      out = it->get<T>();
    } catch (const std::exception& e) {
      problems_.push_back(where(key) + ": " + e.what());
    }
  }

  template <typename Parse, typename T>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string name;
    get(key, name);
    if (name.empty()) return;
    try {
      out = parse(name);
    } catch (const std::exception& e) {
      problems_.push_back(where(key) + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    if (!obj_.is_object()) return nullptr;
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void reject_unknown() {
    if (!obj_.is_object()) return;
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) problems_.push_back(where(key.c_str()) + ": unknown key");
    }
  }

  std::string where(const char* key) const {
    std::string w = prefix_.empty() ? "config" : prefix_;
    if (key[0] != '\0') w += std::string(".") + key;
    return w;
  }

 private:
  const json& obj_;
  std::string prefix_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

json teacher_to_json(const TeacherSpec& t) {
  json j{{"id", t.id}, {"kind", std::string(to_string(t.kind))}};
  switch (t.kind) {
    case TeacherKind::bm25:
      j["k1"] = t.bm25.k1;
      j["b"] = t.bm25.b;
      break;
    case TeacherKind::dense_hash:
      if (t.seed) j["seed"] = *t.seed;
      j["buckets"] = t.buckets;
      j["dim"] = t.dim;
      if (!t.checkpoint.empty()) j["checkpoint"] = t.checkpoint;
      break;
    case TeacherKind::run_import:
      j["run"] = t.run;
      break;
  }
  return j;
}

TeacherSpec teacher_from_json(const json& j, const std::string& prefix,
                              std::vector<std::string>& problems) {
  TeacherSpec t;
  FieldReader r(j, prefix, problems);
  r.get("id", t.id);
  r.get_enum("kind", t.kind, parse_teacher_kind);
  r.get("k1", t.bm25.k1);
  r.get("b", t.bm25.b);
  std::uint64_t seed = 0;
  if (j.is_object() && j.contains("seed")) {
    r.get("seed", seed);
    t.seed = seed;
  } else {
    r.get("seed", seed);
  }
  r.get("buckets", t.buckets);
  r.get("dim", t.dim);
  r.get("checkpoint", t.checkpoint);
  r.get("run", t.run);
  r.reject_unknown();
  return t;
}

std::filesystem::path iteration_path(const std::filesystem::path& dir, const char* stem,
                                     std::size_t t, const char* ext) {
  return dir / (std::string(stem) + std::to_string(t) + ext);
}

template <typename Fn>
auto run_stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

StageError::StageError(std::string stage, const std::string& what)
    : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}

bool TeacherSpec::operator==(const TeacherSpec& o) const {
  return id == o.id && kind == o.kind && bm25.k1 == o.bm25.k1 && bm25.b == o.bm25.b &&
         seed == o.seed && buckets == o.buckets && dim == o.dim && checkpoint == o.checkpoint &&
         run == o.run;
}

std::string_view to_string(QuerySource source) {
  switch (source) {
    case QuerySource::file: return "file";
    case QuerySource::crop: return "crop";
    case QuerySource::generate: return "generate";
    case QuerySource::mix: return "mix";
  }
  return "crop";
}

QuerySource parse_query_source(std::string_view name) {
  if (name == "file") return QuerySource::file;
  if (name == "crop") return QuerySource::crop;
  if (name == "generate") return QuerySource::generate;
  if (name == "mix") return QuerySource::mix;
  throw std::invalid_argument("unknown query source '" + std::string(name) + "'");
}

std::size_t PipelineConfig::iteration_count() const {
  return iterations == 0 ? trajectory.size() : iterations;
}

std::vector<std::string> PipelineConfig::teacher_ids() const {
  std::vector<std::string> ids;
  ids.reserve(trajectory.size());
  for (const auto& t : trajectory) ids.push_back(t.id);
  return ids;
}

Schedule PipelineConfig::schedule() const {
  Schedule s;
  s.strategy = strategy;
  s.first_iteration = 1;
  s.last_iteration = iteration_count();
  s.epochs_per_iteration = epochs_per_iteration;
  s.triplets_per_query_per_epoch = triplets_per_query_per_epoch;
  return s;
}

SamplerConfig PipelineConfig::seeded_sampler() const {
  auto s = sampler;
  s.seed = derive_seed(seed, {"sampler"});
  return s;
}

TrainConfig PipelineConfig::seeded_train() const {
  auto t = train;
  t.seed = derive_seed(seed, {"encoder"});
  return t;
}

std::vector<std::string> PipelineConfig::validate() const {
  std::vector<std::string> problems;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) problems.push_back(msg);
  };
  auto check_file = [&](const std::string& path, const std::string& what) {
    if (!path.empty() && !std::filesystem::is_regular_file(path)) {
      problems.push_back(what + " '" + path + "' does not exist");
    }
  };
  auto check_call = [&](auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  };

  check(!corpus.empty(), "paths.corpus is required");
  check_file(corpus, "corpus");
  check(!output_dir.empty(), "paths.output_dir is required");
  if (query.source == QuerySource::file) {
    check(!queries.empty(), "paths.queries is required when queries.source is 'file'");
  }
  check_file(queries, "query file");
  check_file(eval_queries, "eval query file");
  check_file(qrels, "qrels file");
  check(eval_queries.empty() == qrels.empty(),
        "paths.eval_queries and paths.qrels must be given together");
  if (!eval_queries.empty()) check(query.holdout == 0, "queries.holdout conflicts with paths.eval_queries");
  check_call([&] { query.cropping.validate(); });
  check(query.cropped_fraction >= 0.0 && query.cropped_fraction <= 1.0,
        "queries.cropped_fraction must lie in [0, 1]");
  check(query.generated_per_passage >= 1, "queries.generated_per_passage must be >= 1");

  check(!trajectory.empty(), "trajectory must list at least one teacher");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    const auto& t = trajectory[i];
    const std::string where = "trajectory[" + std::to_string(i) + "]";
    check(!t.id.empty(), where + ".id is required");
    check(t.id != kFusedTeacherId, where + ".id 'fused' is reserved");
    check(ids.insert(t.id).second, where + ": duplicate teacher id '" + t.id + "'");
    if (t.kind == TeacherKind::run_import) {
      check(!t.run.empty(), where + ".run is required for run_import teachers");
      check_file(t.run, where + ".run");
    }
    if (t.kind == TeacherKind::dense_hash) {
      check(t.buckets >= 1 && t.dim >= 1, where + ": buckets and dim must be positive");
      check_file(t.checkpoint, where + ".checkpoint");
    }
    if (t.kind == TeacherKind::bm25) {
      check(t.bm25.k1 >= 0.0 && t.bm25.b >= 0.0 && t.bm25.b <= 1.0,
            where + ": bm25 needs k1 >= 0 and b in [0, 1]");
    }
  }
  check(depth >= 1, "depth must be >= 1");
  check(depth >= sampler.neg_rank_hi, "depth must cover sampler.neg_rank_hi");
  check_call([&] { sampler.validate(); });
  check_call([&] { train.validate(); });
  if (!trajectory.empty()) {
    check_call([&] { schedule().validate(trajectory.size()); });
  }
  if (strategy == SupervisionStrategy::fused) {
    check_call([&] { fusion.validate_for(teacher_ids()); });
  }
  check(eval.mrr >= 1 && eval.recall >= 1 && eval.ndcg >= 1 && eval.success >= 1,
        "eval cutoffs must be >= 1");
  return problems;
}

bool PipelineConfig::operator==(const PipelineConfig& o) const {
  return to_json(*this) == to_json(o);
}

json to_json(const PipelineConfig& cfg) {
  json trajectory = json::array();
  for (const auto& t : cfg.trajectory) trajectory.push_back(teacher_to_json(t));
  json weights = json::object();
  for (const auto& [id, w] : cfg.fusion.weights) weights[id] = w;
  return json{
      {"seed", cfg.seed},
      {"paths",
       {{"corpus", cfg.corpus},
        {"corpus_format", cfg.corpus_format == FileFormat::tsv ? "tsv" : "jsonl"},
        {"queries", cfg.queries},
        {"eval_queries", cfg.eval_queries},
        {"qrels", cfg.qrels},
        {"output_dir", cfg.output_dir}}},
      {"queries",
       {{"source", std::string(to_string(cfg.query.source))},
        {"min_tokens", cfg.query.cropping.min_tokens},
        {"max_tokens", cfg.query.cropping.max_tokens},
        {"sentence_terminators", cfg.query.cropping.sentence_terminators},
        {"generated_per_passage", cfg.query.generated_per_passage},
        {"cropped_fraction", cfg.query.cropped_fraction},
        {"max_train_queries", cfg.query.max_train_queries},
        {"holdout", cfg.query.holdout}}},
      {"trajectory", trajectory},
      {"depth", cfg.depth},
      {"strategy", std::string(to_string(cfg.strategy))},
      {"iterations", cfg.iterations},
      {"epochs_per_iteration", cfg.epochs_per_iteration},
      {"triplets_per_query_per_epoch", cfg.triplets_per_query_per_epoch},
      {"sampler",
       {{"pos_top_k", cfg.sampler.pos_top_k},
        {"neg_rank_lo", cfg.sampler.neg_rank_lo},
        {"neg_rank_hi", cfg.sampler.neg_rank_hi}}},
      {"train",
       {{"batch_size", cfg.train.batch_size},
        {"learning_rate", cfg.train.learning_rate},
        {"in_batch_negatives", cfg.train.use_in_batch_negatives},
        {"buckets", cfg.train.buckets},
        {"dim", cfg.train.dim}}},
      {"fusion", {{"weights", weights}}},
      {"eval",
       {{"mrr", cfg.eval.mrr},
        {"recall", cfg.eval.recall},
        {"ndcg", cfg.eval.ndcg},
        {"success", cfg.eval.success}}},
  };
}

PipelineConfig config_from_json(const json& j) {
  std::vector<std::string> problems;
  auto cfg = config_from_json(j, problems);
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

PipelineConfig config_from_json(const json& j, std::vector<std::string>& problems) {
  PipelineConfig cfg;
  FieldReader root(j, "", problems);
  root.get("seed", cfg.seed);
  if (const auto* paths = root.child("paths")) {
    FieldReader r(*paths, "paths", problems);
    r.get("corpus", cfg.corpus);
    r.get_enum("corpus_format", cfg.corpus_format, parse_file_format);
    r.get("queries", cfg.queries);
    r.get("eval_queries", cfg.eval_queries);
    r.get("qrels", cfg.qrels);
    r.get("output_dir", cfg.output_dir);
    r.reject_unknown();
  }
  if (const auto* q = root.child("queries")) {
    FieldReader r(*q, "queries", problems);
    r.get_enum("source", cfg.query.source, parse_query_source);
    r.get("min_tokens", cfg.query.cropping.min_tokens);
    r.get("max_tokens", cfg.query.cropping.max_tokens);
    r.get("sentence_terminators", cfg.query.cropping.sentence_terminators);
    r.get("generated_per_passage", cfg.query.generated_per_passage);
    r.get("cropped_fraction", cfg.query.cropped_fraction);
    r.get("max_train_queries", cfg.query.max_train_queries);
    r.get("holdout", cfg.query.holdout);
    r.reject_unknown();
  }
  if (const auto* t = root.child("trajectory")) {
    if (!t->is_array()) {
      problems.push_back("config.trajectory must be an array");
    } else {
      for (std::size_t i = 0; i < t->size(); ++i) {
        cfg.trajectory.push_back(
            teacher_from_json((*t)[i], "trajectory[" + std::to_string(i) + "]", problems));
      }
    }
  }
  root.get("depth", cfg.depth);
  root.get_enum("strategy", cfg.strategy, parse_strategy);
  root.get("iterations", cfg.iterations);
  root.get("epochs_per_iteration", cfg.epochs_per_iteration);
  root.get("triplets_per_query_per_epoch", cfg.triplets_per_query_per_epoch);
  if (const auto* s = root.child("sampler")) {
    FieldReader r(*s, "sampler", problems);
    r.get("pos_top_k", cfg.sampler.pos_top_k);
    r.get("neg_rank_lo", cfg.sampler.neg_rank_lo);
    r.get("neg_rank_hi", cfg.sampler.neg_rank_hi);
    r.reject_unknown();
  }
  if (const auto* t = root.child("train")) {
    FieldReader r(*t, "train", problems);
    r.get("batch_size", cfg.train.batch_size);
    r.get("learning_rate", cfg.train.learning_rate);
    r.get("in_batch_negatives", cfg.train.use_in_batch_negatives);
    r.get("buckets", cfg.train.buckets);
    r.get("dim", cfg.train.dim);
    r.reject_unknown();
  }
  if (const auto* f = root.child("fusion")) {
    FieldReader r(*f, "fusion", problems);
    if (const auto* w = r.child("weights")) {
      if (!w->is_object()) {
        problems.push_back("config.fusion.weights must be an object");
      } else {
        for (const auto& [id, value] : w->items()) {
          if (!value.is_number()) {
            problems.push_back("config.fusion.weights." + id + ": expected a number");
          } else {
            cfg.fusion.weights[id] = value.get<double>();
          }
        }
      }
    }
    r.reject_unknown();
  }
  if (const auto* e = root.child("eval")) {
    FieldReader r(*e, "eval", problems);
    r.get("mrr", cfg.eval.mrr);
    r.get("recall", cfg.eval.recall);
    r.get("ndcg", cfg.eval.ndcg);
    r.get("success", cfg.eval.success);
    r.reject_unknown();
  }
  root.reject_unknown();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError({path.string() + ": " + e.what()});
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const PipelineConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

void apply_override(json& doc, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override '" + assignment + "' is not of the form /path=value");
  }
  std::string pointer = assignment.substr(0, eq);
  if (pointer.front() != '/') pointer = "/" + pointer;
  std::replace(pointer.begin(), pointer.end(), '.', '/');
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  doc[json::json_pointer(pointer)] = std::move(value);
}

RunLog::RunLog(const std::filesystem::path& path, bool fresh) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!fresh) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto record = json::parse(line, nullptr, false);
      if (record.is_object() && record.contains("step") && record["step"].is_number_unsigned()) {
        last_step_ = std::max(last_step_, record["step"].get<std::size_t>());
      }
    }
  }
  out_.open(path, fresh ? std::ios::trunc : std::ios::app);
  if (!out_) throw std::runtime_error("cannot open run log " + path.string());
}

void RunLog::append(json record) {
  if (record.contains("step")) {
    const auto step = record["step"].get<std::size_t>();
    if (step < last_step_) {
      throw std::logic_error("run log step " + std::to_string(step) + " precedes " +
                             std::to_string(last_step_));
    }
    last_step_ = step;
  } else {
    record["step"] = last_step_;
  }
  out_ << record.dump() << '\n';
  out_.flush();
}

void trim_run_log(const std::filesystem::path& path, std::size_t iteration) {
  std::vector<std::string> lines;
  {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
  }
  std::size_t keep = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto record = json::parse(lines[i], nullptr, false);
    if (record.is_object() && record.value("stage", "") == "iteration" &&
        record.value("iteration", std::size_t{0}) == iteration) {
      keep = i + 1;
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot rewrite run log " + path.string());
  for (std::size_t i = 0; i < keep; ++i) out << lines[i] << '\n';
}

TeacherRegistry build_teachers(const std::vector<TeacherSpec>& specs, const Corpus& corpus,
                               std::uint64_t seed) {
  TeacherRegistry registry;
  for (const auto& spec : specs) {
    switch (spec.kind) {
      case TeacherKind::bm25:
        registry.add(std::make_unique<Bm25Teacher>(spec.id, corpus, spec.bm25));
        break;
      case TeacherKind::dense_hash: {
        auto params = spec.checkpoint.empty()
                          ? DenseHashTeacher::tied_random(
                                spec.buckets, spec.dim,
                                spec.seed.value_or(derive_seed(seed, {"teacher", spec.id})))
                          : load_checkpoint(spec.checkpoint);
        registry.add(std::make_unique<DenseHashTeacher>(spec.id, corpus, std::move(params)));
        break;
      }
      case TeacherKind::run_import:
        registry.add(std::make_unique<RunImportTeacher>(spec.id, std::filesystem::path(spec.run)));
        break;
    }
  }
  return registry;
}

SupervisionPool label_queries(const TeacherRegistry& registry,
                              const std::vector<std::string>& trajectory,
                              const std::vector<QueryRecord>& queries, std::size_t depth) {
  SupervisionPool pool(trajectory, depth);
  for (const auto& teacher_id : trajectory) {
    for (const auto& q : queries) pool.add(teacher_retrieve(registry, teacher_id, q, depth));
  }
  return pool;
}

FusionTuneResult tune_fusion(const SupervisionPool& dev_pool, const Qrels& dev_qrels,
                             std::size_t grid_steps) {
  if (grid_steps < 1) throw std::invalid_argument("tune_fusion needs grid_steps >= 1");
  const auto& teachers = dev_pool.trajectory();
  const auto queries = dev_pool.query_ids();
  const std::size_t n = teachers.size();
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= grid_steps + 1;

  FusionTuneResult result;
  bool have_best = false;
  std::size_t best_max = 0, best_sum = 0;
  std::vector<std::size_t> digits(n, 0);
  // Index 0 is the all-zero vector, which is skipped. The first teacher is the
  // most significant digit.
  for (std::size_t index = 1; index < total; ++index) {
    for (std::size_t i = n, rest = index; i > 0; --i) {
      digits[i - 1] = rest % (grid_steps + 1);
      rest /= grid_steps + 1;
    }
    FusionConfig cfg;
    for (std::size_t i = 0; i < n; ++i) {
      cfg.weights[teachers[i]] = static_cast<double>(digits[i]) / static_cast<double>(grid_steps);
    }
    Run fused;
    for (const auto& qid : queries) {
      std::vector<RankedList> lists;
      for (const auto& t : teachers) {
        if (const auto* l = dev_pool.find(qid, t)) lists.push_back(*l);
      }
      fused.emplace(qid, fuse_lists(lists, cfg, dev_pool.depth()));
    }
    const double mrr = mrr_at_k(fused, dev_qrels, 10);
    ++result.evaluated;
    const std::size_t max_digit = *std::max_element(digits.begin(), digits.end());
    std::size_t sum = 0;
    for (auto d : digits) sum += d;
    const bool full = max_digit == grid_steps;
    const bool best_full = best_max == grid_steps;
    const bool better = !have_best || mrr > result.best_mrr ||
                        (mrr == result.best_mrr &&
                         ((full && !best_full) || (full == best_full && sum < best_sum)));
    if (better) {
      have_best = true;
      result.best = cfg;
      result.best_mrr = mrr;
      best_max = max_digit;
      best_sum = sum;
    }
  }
  return result;
}

PreparedQueries prepare_queries(const PipelineConfig& cfg, const Corpus& corpus) {
  std::vector<QueryRecord> pool;
  switch (cfg.query.source) {
    case QuerySource::file:
      pool = load_augmented_queries(cfg.queries);
      break;
    case QuerySource::crop:
      pool = crop_corpus(corpus, cfg.query.cropping);
      break;
    case QuerySource::generate: {
      PseudoQueryGenerator gen(corpus);
      pool = gen.generate_corpus(cfg.query.generated_per_passage, derive_seed(cfg.seed, {"generate"}));
      break;
    }
    case QuerySource::mix: {
      PseudoQueryGenerator gen(corpus);
      auto generated =
          gen.generate_corpus(cfg.query.generated_per_passage, derive_seed(cfg.seed, {"generate"}));
      auto cropped = crop_corpus(corpus, cfg.query.cropping);
      MixConfig mix{cfg.query.cropped_fraction, derive_seed(cfg.seed, {"mix"})};
      pool = mix_queries(cropped, generated, mix);
      break;
    }
  }
  if (auto problems = validate_queries(pool, corpus); !problems.empty()) {
    throw ConfigError(std::move(problems));
  }

  PreparedQueries out;
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const bool subsample = cfg.query.holdout > 0 ||
                         (cfg.query.max_train_queries > 0 && cfg.query.max_train_queries < pool.size());
  if (subsample) {
    Rng rng(derive_seed(cfg.seed, {"query-split"}));
    rng.shuffle(std::span(order));
  }
  std::size_t cursor = 0;
  if (cfg.query.holdout > 0) {
    if (cfg.query.holdout >= pool.size()) {
      throw std::invalid_argument("holdout of " + std::to_string(cfg.query.holdout) +
                                  " leaves no training queries out of " +
                                  std::to_string(pool.size()));
    }
    std::vector<std::size_t> held(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.query.holdout));
    std::sort(held.begin(), held.end());
    for (auto i : held) {
      const auto& q = pool[i];
      if (!q.source_passage_id) {
        throw std::invalid_argument("held-out query '" + q.id + "' has no source passage");
      }
      out.eval.push_back(q);
      out.eval_qrels.add(q.id, *q.source_passage_id, 1);
    }
    cursor = cfg.query.holdout;
  }
  std::size_t take = pool.size() - cursor;
  if (cfg.query.max_train_queries > 0) take = std::min(take, cfg.query.max_train_queries);
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
  std::sort(train.begin(), train.end());
  out.train.reserve(train.size());
  for (auto i : train) out.train.push_back(pool[i]);

  if (!cfg.eval_queries.empty()) {
    out.eval = load_augmented_queries(cfg.eval_queries);
    out.eval_qrels = load_qrels(cfg.qrels);
  }
  return out;
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t h = kFnvOffset;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    h = fnv1a64(std::as_bytes(std::span(buf.data(), got)), h);
  }
  return h;
}

RecipeResult run_recipe(const PipelineConfig& cfg, const RecipeOptions& options) {
  if (auto problems = cfg.validate(); !problems.empty()) throw ConfigError(std::move(problems));
  const std::filesystem::path out_dir(cfg.output_dir);
  std::filesystem::create_directories(out_dir);
  save_config(out_dir / "config.json", cfg);
  const auto schedule = cfg.schedule();
  const auto ckpt_dir = out_dir / "checkpoints";
  std::size_t resume_from = 0;
  if (options.resume) {
    while (resume_from < schedule.last_iteration &&
           std::filesystem::exists(iteration_path(ckpt_dir, "iter", resume_from + 1, ".ckpt"))) {
      ++resume_from;
    }
  }
  const auto log_path = out_dir / "run_log.jsonl";
  if (resume_from > 0) trim_run_log(log_path, resume_from);
  RunLog log(log_path, resume_from == 0);
  RecipeResult result;

  const auto corpus = run_stage("load", [&] { return load_corpus(cfg.corpus, cfg.corpus_format); });

  const auto queries = run_stage("queries", [&] {
    auto prepared = prepare_queries(cfg, corpus);
    write_queries(out_dir / "queries.tsv", prepared.train);
    if (!prepared.eval.empty()) {
      write_queries(out_dir / "eval_queries.tsv", prepared.eval);
      write_qrels(out_dir / "eval.qrels", prepared.eval_qrels);
    }
    log.append({{"stage", "queries"},
                {"train_queries", prepared.train.size()},
                {"eval_queries", prepared.eval.size()},
                {"checksum", to_hex(file_checksum(out_dir / "queries.tsv"))}});
    return prepared;
  });

  const auto trajectory = cfg.teacher_ids();
  auto pool = run_stage("label", [&] {
    auto registry = build_teachers(cfg.trajectory, corpus, cfg.seed);
    auto labeled = label_queries(registry, trajectory, queries.train, cfg.depth);
    for (const auto& t : trajectory) {
      const auto path = out_dir / "runs" / (t + ".run");
      write_run(path, labeled.teacher_run(t));
      log.append({{"stage", "label"}, {"teacher", t}, {"checksum", to_hex(file_checksum(path))}});
    }
    return labeled;
  });

  if (cfg.strategy == SupervisionStrategy::fused) {
    run_stage("fuse", [&] {
      fuse_pool(pool, cfg.fusion);
      Run fused;
      for (const auto& qid : pool.query_ids()) {
        if (const auto* l = pool.fused(qid)) fused.emplace(qid, *l);
      }
      const auto path = out_dir / "runs" / "fused.run";
      write_run(path, fused);
      log.append({{"stage", "fuse"}, {"checksum", to_hex(file_checksum(path))}});
      return 0;
    });
  }

  const auto sampler = cfg.seeded_sampler();
  const auto train_cfg = cfg.seeded_train();
  const auto triplet_dir = out_dir / "triplets";

  auto params = run_stage("train", [&] {
    std::vector<std::string> query_ids;
    query_ids.reserve(queries.train.size());
    for (const auto& q : queries.train) query_ids.push_back(q.id);

    result.resumed_from = resume_from;
    auto params = resume_from > 0
                      ? load_checkpoint(iteration_path(ckpt_dir, "iter", resume_from, ".ckpt"))
                      : DualEncoderParams::random(train_cfg.buckets, train_cfg.dim, train_cfg.seed);
    if (resume_from > 0) {
      log.append({{"stage", "resume"}, {"iteration", resume_from}});
    }

    ExampleResolver resolver(corpus, queries.train, train_cfg.buckets);
    std::size_t step = 0;
    for (std::size_t t = schedule.first_iteration; t <= schedule.last_iteration; ++t) {
      auto stream = emit_iteration(pool, query_ids, t, schedule, sampler);
      for (const auto& tr : stream.triplets) result.teacher_sequence.push_back(tr.source_teacher);
      if (t <= resume_from) {
        // Steps are counted per epoch batch so numbering matches a straight run.
        std::size_t begin = 0;
        while (begin < stream.epochs.size()) {
          std::size_t end = begin;
          while (end < stream.epochs.size() && stream.epochs[end] == stream.epochs[begin]) ++end;
          step += (end - begin + train_cfg.batch_size - 1) / train_cfg.batch_size;
          begin = end;
        }
        continue;
      }
      const auto triplet_path = iteration_path(triplet_dir, "iter", t, ".tsv");
      write_triplets(triplet_path, stream.triplets);
      auto summary = train_on_stream(params, stream, resolver, train_cfg, step);
      summary.iteration = t;
      for (std::size_t i = 0; i < summary.steps.size(); ++i) {
        const auto& s = summary.steps[i];
        log.append({{"stage", "train"},
                    {"step", s.step},
                    {"iteration", t},
                    {"teachers", summary.step_teachers[i]},
                    {"loss", s.mean_loss},
                    {"gradient_norm", s.gradient_norm}});
      }
      for (const auto& e : summary.epochs) result.epochs.push_back(e);
      json skipped = json::array();
      for (const auto& sk : summary.skipped) {
        skipped.push_back({{"epoch", sk.epoch}, {"query", sk.query_id}, {"reason", sk.reason}});
      }
      const auto ckpt_path = iteration_path(ckpt_dir, "iter", t, ".ckpt");
      save_checkpoint(ckpt_path, params);
      json epochs = json::array();
      for (const auto& e : summary.epochs) {
        epochs.push_back({{"epoch", e.epoch}, {"examples", e.examples}, {"mean_loss", e.mean_loss}});
      }
      log.append({{"stage", "iteration"},
                  {"iteration", t},
                  {"epochs", epochs},
                  {"skipped", skipped},
                  {"triplets_checksum", to_hex(file_checksum(triplet_path))},
                  {"checkpoint_checksum", to_hex(params.checksum())}});
    }
    return params;
  });

  result.final_checkpoint = ckpt_dir / ("iter" + std::to_string(schedule.last_iteration) + ".ckpt");
  result.final_checksum = params.checksum();

  if (!queries.eval.empty()) {
    run_stage("eval", [&] {
      const std::size_t k = std::max({cfg.eval.mrr, cfg.eval.recall, cfg.eval.ndcg, cfg.eval.success});
      auto run = retrieve_all(params, corpus, queries.eval, std::min(k, corpus.size()));
      write_run(out_dir / "student.run", run);
      result.report = evaluate(run, queries.eval_qrels, cfg.eval);
      write_eval_report(out_dir / "eval.tsv", *result.report);
      json metrics(result.report->metrics);
      log.append({{"stage", "eval"}, {"metrics", metrics}});
      if (options.evaluate_untrained) {
        auto untrained = DualEncoderParams::random(train_cfg.buckets, train_cfg.dim, train_cfg.seed);
        auto base_run = retrieve_all(untrained, corpus, queries.eval, std::min(k, corpus.size()));
        result.untrained_report = evaluate(base_run, queries.eval_qrels, cfg.eval);
        write_eval_report(out_dir / "eval_untrained.tsv", *result.untrained_report);
        log.append({{"stage", "eval_untrained"}, {"metrics", json(result.untrained_report->metrics)}});
      }
      return 0;
    });
  }
  return result;
}

}  // namespace augdr
