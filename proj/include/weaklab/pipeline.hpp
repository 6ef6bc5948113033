#pragma once

#include <array>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "weaklab/config.hpp"
#include "weaklab/corpus.hpp"
#include "weaklab/cost.hpp"
#include "weaklab/distill.hpp"
#include "weaklab/eval.hpp"
#include "weaklab/gateway.hpp"
#include "weaklab/prompt.hpp"
#include "weaklab/stats.hpp"
#include "weaklab/subset.hpp"
#include "weaklab/train_export.hpp"

// End-to-end orchestration: ingest -> select -> sft-export -> weak-label ->
// stats -> train-export -> cost, with per-stage completion markers so an
// interrupted run can resume from the first incomplete stage. Every data
// artifact is written deterministically; timestamps live only in the markers
// and in the run report.

namespace weaklab {

inline constexpr std::array<std::string_view, 7> pipeline_stage_names{
    "ingest", "select", "sft-export", "weak-label", "stats", "train-export", "cost"};

struct StageReport {
  std::string name;
  std::string status;  // completed | skipped | failed
  double duration_s = 0;
  std::string error;
};

struct RunReport {
  std::vector<StageReport> stages;
  json selection_summary;
  json weak_summary;
  json export_summary;
  json cost_summary;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
  std::size_t generation_failures = 0;
  bool ok = true;
  std::string failed_stage;
};

inline json run_report_to_json(const RunReport& r) {
  json stages = json::array();
  for (const StageReport& s : r.stages) {
    json stage{{"name", s.name}, {"status", s.status}, {"duration_s", s.duration_s}};
    if (!s.error.empty()) stage["error"] = s.error;
    stages.push_back(std::move(stage));
  }
  return json{{"stages", stages},
              {"selection", r.selection_summary},
              {"weak_summary", r.weak_summary},
              {"export_summary", r.export_summary},
              {"cost", r.cost_summary},
              {"cache", {{"hits", r.cache_hits}, {"misses", r.cache_misses}}},
              {"generation_failures", r.generation_failures},
              {"ok", r.ok},
              {"failed_stage", r.failed_stage},
              {"data_label", "non-paper data"}};
}

namespace detail {

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct NoteLatency {
  std::string note_id;
  bool have = false;
  double seconds = 0;
};

struct PipelineContext {
  RunConfig cfg;
  std::filesystem::path run_dir;
  std::string snapshot_hash;
  TaskSchema schema;
  Corpus train;
  Corpus test;
  SubsetSelection selection;
  PromptTemplate tpl;
  WeakLabelSet weak;
  std::vector<NoteLatency> note_latencies;  // weak notes, ascending note_id
  RunReport report;
};

inline std::filesystem::path marker_path(const std::filesystem::path& run_dir,
                                         std::string_view stage) {
  return run_dir / ("stage." + std::string(stage) + ".done");
}

inline void write_marker(const PipelineContext& ctx, std::string_view stage) {
  const json j{{"stage", std::string(stage)},
               {"config_hash", ctx.snapshot_hash},
               {"completed_at", utc_timestamp()}};
  write_file_atomic(marker_path(ctx.run_dir, stage), dump_json(j) + "\n");
}

inline std::shared_ptr<CompletionBackend> make_backend(const RunConfig& cfg,
                                                       const Corpus& train) {
  if (cfg.gateway.url) return std::make_shared<HttpBackend>(*cfg.gateway.url,
                                                            cfg.gateway.timeout_seconds);
  const MockSpec& m = *cfg.gateway.mock;
  switch (m.mode) {
    case MockSpec::Mode::echo_gold: return std::make_shared<EchoGoldMock>(train);
    case MockSpec::Mode::fixed: return std::make_shared<FixedMock>(m.fixed_text);
    case MockSpec::Mode::file_scripted: return std::make_shared<FileScriptedMock>(m.script_path);
    case MockSpec::Mode::fault_inject:
      return std::make_shared<FaultInjectMock>(m.fault_rate, m.seed);
  }
  throw ConfigError("no gateway backend configured");
}

// --- stage bodies -----------------------------------------------------------

inline void stage_ingest_run(PipelineContext& ctx) {
  ctx.train.clear();
  for (Note& note : load_corpus(ctx.cfg.train_dir, ctx.schema))
    ctx.train.push_back(segment_sentences(std::move(note)));
  save_corpus_jsonl(ctx.run_dir / "corpus.train.jsonl", ctx.train);
  if (ctx.cfg.test_dir) {
    ctx.test.clear();
    for (Note& note : load_corpus(*ctx.cfg.test_dir, ctx.schema))
      ctx.test.push_back(segment_sentences(std::move(note)));
    save_corpus_jsonl(ctx.run_dir / "corpus.test.jsonl", ctx.test);
  }
}

inline void stage_ingest_load(PipelineContext& ctx) {
  ctx.train = load_corpus_jsonl(ctx.run_dir / "corpus.train.jsonl");
  const auto test_path = ctx.run_dir / "corpus.test.jsonl";
  if (std::filesystem::exists(test_path)) ctx.test = load_corpus_jsonl(test_path);
}

inline void stage_select_run(PipelineContext& ctx) {
  ctx.selection = select_gold_subset(ctx.train, ctx.cfg.n_s);
  save_selection(ctx.run_dir / "selection.json", ctx.selection);
  ctx.report.selection_summary = selection_to_json(ctx.selection);
}

inline void stage_select_load(PipelineContext& ctx) {
  ctx.selection = load_selection(ctx.run_dir / "selection.json");
  ctx.report.selection_summary = selection_to_json(ctx.selection);
}

inline void build_template(PipelineContext& ctx) {
  ctx.tpl = make_prompt_template(
      ctx.schema, sample_few_shot(ctx.train, ctx.cfg.few_shot_k, ctx.cfg.seed,
                                  ctx.cfg.few_shot_require_entities));
}

inline void stage_sft_export_run(PipelineContext& ctx) {
  build_template(ctx);
  export_sft_dataset(ctx.train, ctx.selection.gold_ids, ctx.tpl, ctx.run_dir / "sft");
}

inline void stage_sft_export_load(PipelineContext& ctx) {
  build_template(ctx);  // deterministic under (corpus, k, seed)
}

inline void stage_weak_label_run(PipelineContext& ctx) {
  auto gateway = Gateway(make_backend(ctx.cfg, ctx.train), ctx.run_dir / "cache",
                         ctx.cfg.gateway.retry);

  struct Job {
    const Note* note;
    const Sentence* sentence;
  };
  std::vector<Job> jobs;
  std::vector<std::string> texts;
  for (const std::string& id : ctx.selection.weak_ids) {
    const Note& note = detail::note_by_id(ctx.train, id);
    for (const Sentence& s : note.sentences) {
      jobs.push_back({&note, &s});
      texts.push_back(s.text);
    }
  }

  GenerationRequest defaults;
  defaults.model_id = ctx.cfg.gateway.model_id;
  defaults.max_new_tokens = ctx.cfg.gateway.max_new_tokens;
  defaults.top_k = ctx.cfg.gateway.top_k;
  const auto entries = gateway.run_batch(texts, ctx.tpl, defaults,
                                         ctx.cfg.gateway.parallelism);

  ctx.weak = WeakLabelSet{};
  ctx.weak.provenance.model_id = ctx.cfg.gateway.model_id;
  ctx.weak.provenance.template_digest = sha256_hex(render_template_text(ctx.tpl));
  ctx.weak.provenance.max_new_tokens = ctx.cfg.gateway.max_new_tokens;
  ctx.weak.provenance.top_k = ctx.cfg.gateway.top_k;

  std::map<std::string, NoteLatency> latency_by_note;
  for (const std::string& id : ctx.selection.weak_ids)
    latency_by_note[id] = NoteLatency{id, true, 0.0};

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Job& job = jobs[i];
    const auto& entry = entries[i];
    if (entry.ok) {
      ctx.weak.results.push_back(distill_sentence(job.note->note_id, *job.sentence,
                                                  entry.result.text, ctx.schema));
      latency_by_note[job.note->note_id].seconds += entry.result.latency;
    } else {
      WeakLabelResult failed;
      failed.note_id = job.note->note_id;
      failed.sentence_index = job.sentence->index;
      failed.status = WeakStatus::failed;
      failed.raw_text = entry.error;
      ctx.weak.results.push_back(std::move(failed));
      latency_by_note[job.note->note_id].have = false;
      ctx.report.generation_failures += 1;
    }
  }
  save_weak_labels(ctx.run_dir / "weak" / "labels.jsonl", ctx.weak);

  ctx.note_latencies.clear();
  json jlat = json::array();
  for (const auto& [id, lat] : latency_by_note) {
    ctx.note_latencies.push_back(lat);
    jlat.push_back({{"note_id", id}, {"have", lat.have}, {"seconds", lat.seconds}});
  }
  write_file_atomic(ctx.run_dir / "weak" / "latencies.json", dump_json(jlat) + "\n");

  ctx.report.cache_hits = gateway.cache_hits();
  ctx.report.cache_misses = gateway.cache_misses();
  ctx.report.weak_summary = weak_summary_json(ctx.weak);
}

inline void stage_weak_label_load(PipelineContext& ctx) {
  ctx.weak = load_weak_labels(ctx.run_dir / "weak" / "labels.jsonl");
  ctx.report.weak_summary = weak_summary_json(ctx.weak);
  ctx.note_latencies.clear();
  const auto path = ctx.run_dir / "weak" / "latencies.json";
  if (std::filesystem::exists(path)) {
    const json j = json::parse(read_file(path), nullptr, false);
    if (!j.is_discarded())
      for (const auto& item : j)
        ctx.note_latencies.push_back(NoteLatency{item.value("note_id", ""),
                                                 item.value("have", false),
                                                 item.value("seconds", 0.0)});
  }
}

inline void stage_stats_run(PipelineContext& ctx) {
  {
    std::ostringstream os;
    write_stats_csv(os, corpus_stats(ctx.train));
    write_file_atomic(ctx.run_dir / "reports" / "stats.gold.csv", os.str());
  }
  if (!ctx.weak.results.empty()) {
    std::ostringstream os;
    write_stats_csv(os, corpus_stats(ctx.train, ctx.weak));
    write_file_atomic(ctx.run_dir / "reports" / "stats.weak.csv", os.str());
  }
}

inline void stage_train_export_run(PipelineContext& ctx) {
  const auto vocab = PieceVocabulary::load(ctx.cfg.vocabulary);
  ExportOptions options;
  options.include_failed_as_empty = ctx.cfg.include_failed_as_empty;
  const auto result = export_stage_datasets(ctx.train, ctx.weak, ctx.selection,
                                            ctx.cfg.benchmark_id, ctx.cfg.n_s, vocab,
                                            ctx.run_dir / "export", options);
  ctx.report.export_summary =
      json{{"weak_examples", result.summary.weak_examples},
           {"gold_examples", result.summary.gold_examples},
           {"weak_entities", result.summary.weak_entities},
           {"gold_entities", result.summary.gold_entities},
           {"failed_excluded", result.summary.failed_excluded},
           {"dropped_overlap", result.summary.dropped_overlap},
           {"dropped_truncated", result.summary.dropped_truncated},
           {"dropped_boundary_crossing", result.summary.dropped_boundary_crossing}};
}

inline void stage_cost_run(PipelineContext& ctx) {
  DecoderCostSpec spec{ctx.cfg.cost.total_params, ctx.cfg.cost.n_layer, ctx.cfg.cost.n_ctx,
                       ctx.cfg.cost.d_attn, ctx.cfg.cost.n_tokens_out};
  std::vector<std::pair<bool, double>> per_note;
  for (const NoteLatency& lat : ctx.note_latencies) per_note.emplace_back(lat.have, lat.seconds);
  auto counts = ctx.cfg.cost.sample_note_counts;
  if (counts.empty()) {
    std::size_t usable = 0;
    for (const auto& [have, s] : per_note) usable += have ? 1 : 0;
    counts = default_sample_counts(usable);
  }
  const auto collected = collect_latency_samples(per_note, counts);

  std::optional<LinearFit> fit;
  std::optional<Projection> projection;
  bool distinct = false;
  for (std::size_t i = 1; i < collected.samples.size(); ++i)
    if (collected.samples[i].note_count != collected.samples[0].note_count) distinct = true;
  if (collected.samples.size() >= 2 && distinct) {
    fit = fit_linear(collected.samples);
    projection = project_gpu_time(*fit, ctx.cfg.cost.target_notes);
  }
  ctx.report.cost_summary =
      cost_report_json(spec, ctx.cfg.cost.encoder_flops_per_sentence, collected.samples,
                       fit ? &*fit : nullptr, projection ? &*projection : nullptr);
  write_file_atomic(ctx.run_dir / "reports" / "cost.json",
                    dump_json(ctx.report.cost_summary) + "\n");
}

using StageFn = void (*)(PipelineContext&);

struct StageSpec {
  std::string_view name;
  StageFn run;
  StageFn load;  // rebuild in-memory state from artifacts when skipping
};

inline const std::array<StageSpec, 7>& stage_specs() {
  static const std::array<StageSpec, 7> specs{{
      {"ingest", stage_ingest_run, stage_ingest_load},
      {"select", stage_select_run, stage_select_load},
      {"sft-export", stage_sft_export_run, stage_sft_export_load},
      {"weak-label", stage_weak_label_run, stage_weak_label_load},
      {"stats", stage_stats_run, nullptr},
      {"train-export", stage_train_export_run, nullptr},
      {"cost", stage_cost_run, nullptr},
  }};
  return specs;
}

inline void execute_stages(PipelineContext& ctx, std::size_t first_to_run) {
  namespace chrono = std::chrono;
  const auto& specs = stage_specs();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    StageReport stage;
    stage.name = std::string(specs[i].name);
    const auto t0 = chrono::steady_clock::now();
    try {
      if (i < first_to_run) {
        if (specs[i].load) specs[i].load(ctx);
        stage.status = "skipped";
      } else {
        specs[i].run(ctx);
        write_marker(ctx, specs[i].name);
        stage.status = "completed";
      }
    } catch (const std::exception& e) {
      stage.status = "failed";
      stage.error = e.what();
      stage.duration_s =
          chrono::duration<double>(chrono::steady_clock::now() - t0).count();
      ctx.report.stages.push_back(std::move(stage));
      ctx.report.ok = false;
      ctx.report.failed_stage = std::string(specs[i].name);
      return;
    }
    stage.duration_s = chrono::duration<double>(chrono::steady_clock::now() - t0).count();
    ctx.report.stages.push_back(std::move(stage));
  }
}

inline RunReport finish_run(PipelineContext& ctx) {
  write_file_atomic(ctx.run_dir / "reports" / "run_report.json",
                    dump_json(run_report_to_json(ctx.report)) + "\n");
  return ctx.report;
}

}  // namespace detail

/// Execute the full pipeline under `run_dir`. Stages always execute (rerun on
/// an existing directory is idempotent and cache-accelerated); a stage
/// failure halts downstream stages and is recorded in the report.
/// Configuration errors throw ConfigError before any artifact is written.
inline RunReport run_pipeline(RunConfig cfg, const std::filesystem::path& run_dir) {
  apply_env_overrides(cfg);
  validate_run_config(cfg);

  detail::PipelineContext ctx;
  ctx.cfg = cfg;
  ctx.run_dir = run_dir;
  ctx.schema = builtin_schema(cfg.benchmark_id);

  std::filesystem::create_directories(run_dir);
  for (const char* sub : {"sft", "cache", "weak", "export", "reports"})
    std::filesystem::create_directories(run_dir / sub);
  const std::string snapshot = config_snapshot(cfg);
  write_file_atomic(run_dir / "config.snapshot.toml", snapshot);
  ctx.snapshot_hash = sha256_hex(snapshot);

  detail::execute_stages(ctx, 0);
  return detail::finish_run(ctx);
}

/// Continue an interrupted run: completed stages (markers whose config hash
/// matches the snapshot) are skipped, execution restarts at the first
/// incomplete stage and covers everything downstream of it. A marker whose
/// hash disagrees with the snapshot file means the snapshot was edited.
inline RunReport resume(const std::filesystem::path& run_dir) {
  const auto snapshot_path = run_dir / "config.snapshot.toml";
  if (!std::filesystem::exists(snapshot_path))
    throw Error("cannot resume: missing config snapshot " + snapshot_path.string());
  const std::string snapshot = read_file(snapshot_path);

  detail::PipelineContext ctx;
  ctx.cfg = run_config_from_toml(parse_toml(snapshot));
  validate_run_config(ctx.cfg);
  ctx.run_dir = run_dir;
  ctx.schema = builtin_schema(ctx.cfg.benchmark_id);
  ctx.snapshot_hash = sha256_hex(snapshot);

  const auto& specs = detail::stage_specs();
  std::size_t first_to_run = specs.size();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto path = detail::marker_path(run_dir, specs[i].name);
    if (!std::filesystem::exists(path)) {
      first_to_run = std::min(first_to_run, i);
      continue;
    }
    const json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || j.value("config_hash", "") != ctx.snapshot_hash)
      throw Error("config drift: stage marker '" + std::string(specs[i].name) +
                  "' does not match the config snapshot");
  }

  detail::execute_stages(ctx, first_to_run);
  return detail::finish_run(ctx);
}

/// Score a predictions file against the run's test corpus and write the
/// report next to the other run reports.
inline EvalReport evaluate_predictions(const std::filesystem::path& run_dir,
                                       const std::filesystem::path& predictions_file,
                                       MatchMode mode) {
  const auto snapshot_path = run_dir / "config.snapshot.toml";
  if (!std::filesystem::exists(snapshot_path))
    throw Error("missing config snapshot " + snapshot_path.string());
  RunConfig cfg = run_config_from_toml(parse_toml(read_file(snapshot_path)));
  if (!cfg.test_dir) throw ConfigError("no test corpus configured for this run");

  const auto schema = builtin_schema(cfg.benchmark_id);
  const Corpus test = load_corpus(*cfg.test_dir, schema);
  const auto predictions = load_predictions(predictions_file, test);
  const EvalReport report = micro_scores(test, predictions, mode);

  const std::string mode_name(to_string(mode));
  {
    std::ostringstream os;
    write_report_csv(os, report);
    write_file_atomic(run_dir / "reports" / ("eval." + mode_name + ".csv"), os.str());
  }
  write_file_atomic(run_dir / "reports" / ("eval." + mode_name + ".json"),
                    dump_json(report_to_json(report)) + "\n");
  return report;
}

}  // namespace weaklab
