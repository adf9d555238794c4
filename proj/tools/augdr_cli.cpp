#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "augdr/corpus.hpp"
#include "augdr/dense_encoder.hpp"
#include "augdr/evaluation.hpp"
#include "augdr/hashing.hpp"
#include "augdr/pipeline.hpp"
#include "augdr/query_augmentation.hpp"
#include "augdr/ranked_list.hpp"
#include "augdr/rng.hpp"
#include "augdr/supervision.hpp"
#include "augdr/synthetic.hpp"
#include "augdr/teachers.hpp"
#include "augdr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace augdr;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

// Precedence: --set > config file > defaults. With validate, parse and
// validation problems are reported together.
PipelineConfig resolve_config(const Common& common, bool validate = false) {
  json doc;
  if (!common.config.empty()) {
    std::ifstream in(common.config);
    if (!in) throw ConfigError({"cannot open config '" + common.config + "'"});
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError({common.config + ": " + e.what()});
    }
  } else {
    doc = to_json(PipelineConfig{});
  }
  for (const auto& o : common.overrides) apply_override(doc, o);
  std::vector<std::string> problems;
  auto cfg = config_from_json(doc, problems);
  if (validate) {
    auto more = cfg.validate();
    problems.insert(problems.end(), more.begin(), more.end());
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

void log_command(const PipelineConfig& cfg, const std::string& command, json record) {
  RunLog log(fs::path(cfg.output_dir) / "run_log.jsonl");
  record["command"] = command;
  log.append(std::move(record));
}

std::string checksum_of(const fs::path& path) { return to_hex(file_checksum(path)); }

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

Corpus load_config_corpus(const PipelineConfig& cfg) {
  if (cfg.corpus.empty()) throw ConfigError({"paths.corpus is required"});
  return load_corpus(cfg.corpus, cfg.corpus_format);
}

// Queries come from the four-column TSV unless --raw names a two-column file.
std::vector<QueryRecord> read_queries(const std::string& path, bool raw) {
  return raw ? load_queries(path, FileFormat::tsv, QueryOrigin::human)
             : load_augmented_queries(path);
}

SupervisionPool load_pool(const PipelineConfig& cfg, const fs::path& runs_dir) {
  const auto ids = cfg.teacher_ids();
  SupervisionPool pool(ids, cfg.depth);
  for (const auto& t : ids) pool.add_run(import_run_file(runs_dir / (t + ".run"), t));
  if (cfg.strategy == SupervisionStrategy::fused) fuse_pool(pool, cfg.fusion);
  return pool;
}

std::vector<std::string> ids_of(const std::vector<QueryRecord>& queries) {
  std::vector<std::string> ids;
  ids.reserve(queries.size());
  for (const auto& q : queries) ids.push_back(q.id);
  return ids;
}

void print_problems(const std::string& command, const ConfigError& e) {
  std::cerr << "augdr " << command << ": invalid configuration\n";
  for (const auto& p : e.problems()) std::cerr << "  - " << p << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense retriever training with augmented queries and multi-teacher supervision"};
  app.require_subcommand(1);

  Common common;
  std::map<std::string, std::function<void()>> handlers;
  auto command = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", common.config, "JSON config file");
    sub->add_option("-s,--set", common.overrides, "Override a config field: /path/to/field=value")
        ->take_all();
    return sub;
  };

  // synth
  std::string out;
  SyntheticCorpusConfig synth;
  {
    auto* sub = command("synth", "Write a topic-structured synthetic corpus");
    sub->add_option("-o,--out", out, "Corpus TSV")->required();
    sub->add_option("--passages", synth.passages);
    sub->add_option("--topics", synth.topics);
    sub->add_option("--seed", synth.seed);
    handlers["synth"] = [&] {
      auto cfg = resolve_config(common);
      ensure_parent(out);
      write_corpus(out, make_synthetic_corpus(synth), FileFormat::tsv);
      log_command(cfg, "synth", {{"passages", synth.passages}, {"output", out}, {"checksum", checksum_of(out)}});
    };
  }

  // crop
  {
    auto* sub = command("crop", "Crop every corpus sentence into a query");
    sub->add_option("-o,--out", out, "Query TSV")->required();
    handlers["crop"] = [&] {
      auto cfg = resolve_config(common);
      cfg.query.cropping.validate();
      const auto queries = crop_corpus(load_config_corpus(cfg), cfg.query.cropping);
      ensure_parent(out);
      write_queries(out, queries);
      log_command(cfg, "crop", {{"queries", queries.size()}, {"output", out}, {"checksum", checksum_of(out)}});
    };
  }

  // generate
  {
    auto* sub = command("generate", "Generate pseudo-queries per passage");
    sub->add_option("-o,--out", out, "Query TSV")->required();
    handlers["generate"] = [&] {
      auto cfg = resolve_config(common);
      const auto corpus = load_config_corpus(cfg);
      PseudoQueryGenerator gen(corpus);
      const auto queries =
          gen.generate_corpus(cfg.query.generated_per_passage, derive_seed(cfg.seed, {"generate"}));
      ensure_parent(out);
      write_queries(out, queries);
      log_command(cfg, "generate", {{"queries", queries.size()}, {"output", out}, {"checksum", checksum_of(out)}});
    };
  }

  // mix
  std::string cropped_path, generated_path;
  std::size_t mix_total = 0;
  {
    auto* sub = command("mix", "Mix cropped and generated queries");
    sub->add_option("--cropped", cropped_path)->required();
    sub->add_option("--generated", generated_path)->required();
    sub->add_option("--total", mix_total, "Query count (default twice the smaller side)");
    sub->add_option("-o,--out", out, "Query TSV")->required();
    handlers["mix"] = [&] {
      auto cfg = resolve_config(common);
      MixConfig mix{cfg.query.cropped_fraction, derive_seed(cfg.seed, {"mix"})};
      const auto queries = mix_queries(load_augmented_queries(cropped_path),
                                       load_augmented_queries(generated_path), mix,
                                       mix_total > 0 ? std::optional(mix_total) : std::nullopt);
      ensure_parent(out);
      write_queries(out, queries);
      log_command(cfg, "mix", {{"queries", queries.size()}, {"output", out}, {"checksum", checksum_of(out)}});
    };
  }

  // index
  {
    auto* sub = command("index", "Build the trajectory's teachers and report index statistics");
    sub->add_option("-o,--out", out, "Statistics JSON");
    handlers["index"] = [&] {
      auto cfg = resolve_config(common, true);
      const auto corpus = load_config_corpus(cfg);
      const auto registry = build_teachers(cfg.trajectory, corpus, cfg.seed);
      json stats = json::object();
      for (const auto& spec : cfg.trajectory) {
        json s{{"kind", std::string(to_string(spec.kind))}};
        if (const auto* bm25 = dynamic_cast<const Bm25Teacher*>(&registry.get(spec.id))) {
          s["passages"] = bm25->index().doc_count();
          s["terms"] = bm25->index().term_count();
          s["avg_doc_length"] = bm25->index().avg_doc_length();
        } else if (spec.kind == TeacherKind::dense_hash) {
          s["passages"] = corpus.size();
          s["dim"] = spec.dim;
        }
        stats[spec.id] = s;
      }
      if (!out.empty()) {
        ensure_parent(out);
        std::ofstream(out) << stats.dump(2) << '\n';
      } else {
        std::cout << stats.dump(2) << '\n';
      }
      log_command(cfg, "index", {{"teachers", stats}});
    };
  }

  // label
  std::string queries_path, runs_dir;
  bool raw = false;
  {
    auto* sub = command("label", "Retrieve depth-K lists from every trajectory teacher");
    sub->add_option("-q,--queries", queries_path, "Query TSV")->required();
    sub->add_flag("--raw", raw, "Queries are a two-column id/text TSV");
    sub->add_option("-o,--out-dir", runs_dir, "Directory for <teacher>.run files")->required();
    handlers["label"] = [&] {
      auto cfg = resolve_config(common, true);
      const auto corpus = load_config_corpus(cfg);
      const auto queries = read_queries(queries_path, raw);
      const auto registry = build_teachers(cfg.trajectory, corpus, cfg.seed);
      const auto pool = label_queries(registry, cfg.teacher_ids(), queries, cfg.depth);
      json outputs = json::object();
      for (const auto& t : cfg.teacher_ids()) {
        const auto path = fs::path(runs_dir) / (t + ".run");
        write_run(path, pool.teacher_run(t));
        outputs[t] = checksum_of(path);
      }
      log_command(cfg, "label", {{"queries", queries.size()}, {"runs", outputs}});
    };
  }

  // fuse
  {
    auto* sub = command("fuse", "Fuse teacher runs with the configured weights");
    sub->add_option("-r,--runs-dir", runs_dir)->required();
    sub->add_option("-o,--out", out, "Fused run file")->required();
    handlers["fuse"] = [&] {
      auto cfg = resolve_config(common, true);
      cfg.strategy = SupervisionStrategy::fused;
      const auto pool = load_pool(cfg, runs_dir);
      Run fused;
      for (const auto& qid : pool.query_ids()) {
        if (const auto* l = pool.fused(qid)) fused.emplace(qid, *l);
      }
      ensure_parent(out);
      write_run(out, fused);
      log_command(cfg, "fuse", {{"output", out}, {"checksum", checksum_of(out)}});
    };
  }

  // sample
  std::string out_dir;
  {
    auto* sub = command("sample", "Emit per-iteration triplet files from teacher runs");
    sub->add_option("-q,--queries", queries_path)->required();
    sub->add_flag("--raw", raw);
    sub->add_option("-r,--runs-dir", runs_dir)->required();
    sub->add_option("-o,--out-dir", out_dir, "Directory for iter<t>.tsv files")->required();
    handlers["sample"] = [&] {
      auto cfg = resolve_config(common, true);
      const auto pool = load_pool(cfg, runs_dir);
      const auto ids = ids_of(read_queries(queries_path, raw));
      const auto schedule = cfg.schedule();
      const auto sampler = cfg.seeded_sampler();
      for (std::size_t t = schedule.first_iteration; t <= schedule.last_iteration; ++t) {
        const auto stream = emit_iteration(pool, ids, t, schedule, sampler);
        const auto path = fs::path(out_dir) / ("iter" + std::to_string(t) + ".tsv");
        write_triplets(path, stream.triplets);
        log_command(cfg, "sample", {{"iteration", t},
                                    {"triplets", stream.triplets.size()},
                                    {"skipped", stream.skipped.size()},
                                    {"checksum", checksum_of(path)}});
      }
    };
  }

  // train
  {
    auto* sub = command("train", "Train the student on teacher runs");
    sub->add_option("-q,--queries", queries_path)->required();
    sub->add_flag("--raw", raw);
    sub->add_option("-r,--runs-dir", runs_dir)->required();
    sub->add_option("-o,--out", out, "Final checkpoint")->required();
    handlers["train"] = [&] {
      auto cfg = resolve_config(common, true);
      const auto corpus = load_config_corpus(cfg);
      const auto queries = read_queries(queries_path, raw);
      const auto pool = load_pool(cfg, runs_dir);
      RunLog log(fs::path(cfg.output_dir) / "run_log.jsonl");
      // Optimizer steps restart at 1; the log step continues past earlier records.
      const std::size_t base = log.last_step();
      const auto params = train(
          pool, corpus, queries, cfg.schedule(), cfg.seeded_sampler(), cfg.seeded_train(),
          [&](const IterationSummary& summary, const DualEncoderParams& p) {
            json epochs = json::array();
            for (const auto& e : summary.epochs) {
              epochs.push_back({{"epoch", e.epoch}, {"examples", e.examples}, {"mean_loss", e.mean_loss}});
            }
            log.append({{"command", "train"},
                        {"step", summary.steps.empty() ? log.last_step() : base + summary.steps.back().step},
                        {"train_step", summary.steps.empty() ? 0 : summary.steps.back().step},
                        {"iteration", summary.iteration},
                        {"epochs", epochs},
                        {"skipped", summary.skipped.size()},
                        {"checkpoint_checksum", to_hex(p.checksum())}});
          });
      ensure_parent(out);
      save_checkpoint(out, params);
      log.append({{"command", "train"}, {"output", out}, {"checkpoint_checksum", to_hex(params.checksum())}});
      std::cout << to_hex(params.checksum()) << '\n';
    };
  }

  // retrieve
  std::string checkpoint;
  std::size_t k = 1000;
  {
    auto* sub = command("retrieve", "Retrieve top-k passages with a trained student");
    sub->add_option("--checkpoint", checkpoint)->required();
    sub->add_option("-q,--queries", queries_path)->required();
    sub->add_flag("--raw", raw);
    sub->add_option("-k,--k", k, "List depth (capped at corpus size)");
    sub->add_option("-o,--out", out, "Run file")->required();
    handlers["retrieve"] = [&] {
      auto cfg = resolve_config(common);
      const auto corpus = load_config_corpus(cfg);
      const auto params = load_checkpoint(checkpoint);
      const auto run = retrieve_all(params, corpus, read_queries(queries_path, raw),
                                    std::min(k, corpus.size()));
      ensure_parent(out);
      write_run(out, run);
      log_command(cfg, "retrieve", {{"queries", run.size()}, {"output", out}, {"checksum", checksum_of(out)}});
    };
  }

  // eval
  std::string run_path, qrels_path;
  {
    auto* sub = command("eval", "Score a run file against qrels");
    sub->add_option("--run", run_path)->required();
    sub->add_option("--qrels", qrels_path)->required();
    sub->add_option("-o,--out", out, "Per-query TSV report");
    handlers["eval"] = [&] {
      auto cfg = resolve_config(common);
      const auto report = evaluate(import_run_file(run_path), load_qrels(qrels_path), cfg.eval);
      if (!out.empty()) {
        ensure_parent(out);
        write_eval_report(out, report);
      }
      for (const auto& [name, value] : report.metrics) std::printf("%s\t%.6f\n", name.c_str(), value);
      log_command(cfg, "eval", {{"run", run_path}, {"metrics", json(report.metrics)}});
    };
  }

  // prob
  std::string query_id;
  std::size_t iteration = 1;
  std::size_t top_k = 10;
  {
    auto* sub = command("prob", "Positive-sampling probability of each passage for one query");
    sub->add_option("-r,--runs-dir", runs_dir)->required();
    sub->add_option("--query", query_id)->required();
    sub->add_option("--iteration", iteration);
    sub->add_option("--top-k", top_k);
    handlers["prob"] = [&] {
      auto cfg = resolve_config(common, true);
      const auto probs = positive_probability(load_pool(cfg, runs_dir), query_id, iteration, top_k);
      for (const auto& p : probs) {
        std::printf("%s\t%.6f\t%.6f\n", p.passage_id.c_str(), p.probability, p.reciprocal_rank_sum);
      }
      log_command(cfg, "prob", {{"query", query_id}, {"iteration", iteration}, {"passages", probs.size()}});
    };
  }

  // diversity
  {
    auto* sub = command("diversity", "Mean count of distinct top-k passages per query");
    sub->add_option("-r,--runs-dir", runs_dir)->required();
    sub->add_option("--iteration", iteration);
    sub->add_option("--top-k", top_k);
    handlers["diversity"] = [&] {
      auto cfg = resolve_config(common, true);
      const double d = supervision_diversity(load_pool(cfg, runs_dir), iteration, top_k);
      std::printf("%.6f\n", d);
      log_command(cfg, "diversity", {{"iteration", iteration}, {"diversity", d}});
    };
  }

  // tune-fusion
  std::size_t grid = 10;
  {
    auto* sub = command("tune-fusion", "Grid-search fusion weights on dev runs by MRR@10");
    sub->add_option("-r,--runs-dir", runs_dir)->required();
    sub->add_option("--qrels", qrels_path)->required();
    sub->add_option("--grid", grid, "Steps per unit weight");
    sub->add_option("-o,--out", out, "Write the config with the tuned weights here");
    handlers["tune-fusion"] = [&] {
      auto cfg = resolve_config(common, true);
      cfg.strategy = SupervisionStrategy::uniform;
      const auto result = tune_fusion(load_pool(cfg, runs_dir), load_qrels(qrels_path), grid);
      json weights(result.best.weights);
      std::cout << json{{"weights", weights}, {"mrr@10", result.best_mrr}}.dump() << '\n';
      if (!out.empty()) {
        auto tuned = resolve_config(common);
        tuned.fusion = result.best;
        save_config(out, tuned);
      }
      log_command(cfg, "tune-fusion",
                  {{"weights", weights}, {"mrr@10", result.best_mrr}, {"evaluated", result.evaluated}});
    };
  }

  // run
  bool no_resume = false, untrained = false;
  {
    auto* sub = command("run", "Run the whole recipe into paths.output_dir");
    sub->add_flag("--no-resume", no_resume, "Ignore existing iteration checkpoints");
    sub->add_flag("--eval-untrained", untrained, "Also score the untrained student");
    handlers["run"] = [&] {
      auto cfg = resolve_config(common);
      const auto result = run_recipe(cfg, {.resume = !no_resume, .evaluate_untrained = untrained});
      std::cout << "checkpoint\t" << result.final_checkpoint.string() << '\n'
                << "checksum\t" << to_hex(result.final_checksum) << '\n';
      if (result.report) {
        for (const auto& [name, value] : result.report->metrics) {
          std::printf("%s\t%.6f\n", name.c_str(), value);
        }
      }
    };
  }

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    handlers.at(name)();
  } catch (const ConfigError& e) {
    print_problems(name, e);
    return 2;
  } catch (const StageError& e) {
    std::cerr << "augdr " << name << ": stage '" << e.stage() << "' failed: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "augdr " << name << ": stage '" << name << "' failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
