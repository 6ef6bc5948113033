// weaklab: weak-label generation pipeline for span-annotation tasks.
//
// Subcommands: run, resume, eval, stats, select, render, cost. Exit codes:
// 0 success, 2 configuration error, 3 stage failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "weaklab/config.hpp"
#include "weaklab/cost.hpp"
#include "weaklab/pipeline.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config_error = 2;
constexpr int exit_stage_failure = 3;

struct RunOverrides {
  std::optional<std::size_t> n_s;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> gateway_url;
  std::optional<std::string> mock;
  std::optional<std::size_t> parallelism;
  std::optional<std::size_t> few_shot_k;
  std::optional<std::string> vocabulary;
  std::optional<std::string> train;
  std::optional<std::string> test;
  std::optional<std::string> benchmark;
};

weaklab::RunConfig load_config(const std::string& config_path, const RunOverrides& ov) {
  weaklab::RunConfig cfg;
  try {
    cfg = weaklab::run_config_from_toml(weaklab::parse_toml(weaklab::read_file(config_path)));
  } catch (const std::exception& e) {
    throw weaklab::ConfigError("cannot load config " + config_path + ": " + e.what());
  }
  if (ov.benchmark) cfg.benchmark_id = *ov.benchmark;
  if (ov.train) cfg.train_dir = *ov.train;
  if (ov.test) cfg.test_dir = *ov.test;
  if (ov.n_s) cfg.n_s = *ov.n_s;
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.few_shot_k) cfg.few_shot_k = *ov.few_shot_k;
  if (ov.parallelism) cfg.gateway.parallelism = *ov.parallelism;
  if (ov.vocabulary) cfg.vocabulary = *ov.vocabulary;
  if (ov.gateway_url) {
    cfg.gateway.url = *ov.gateway_url;
    cfg.gateway.mock.reset();
  }
  if (ov.mock) {
    cfg.gateway.mock = weaklab::parse_mock_spec(*ov.mock, cfg.seed);
    cfg.gateway.url.reset();
  }
  return cfg;
}

void print_report(const weaklab::RunReport& report) {
  for (const auto& stage : report.stages) {
    std::printf("%-14s %-10s %8.3fs%s%s\n", stage.name.c_str(), stage.status.c_str(),
                stage.duration_s, stage.error.empty() ? "" : "  ",
                stage.error.c_str());
  }
  std::printf("cache: %zu hit(s), %zu miss(es); generation failures: %zu\n",
              report.cache_hits, report.cache_misses, report.generation_failures);
}

int finish(const weaklab::RunReport& report) {
  print_report(report);
  if (!report.ok) {
    std::fprintf(stderr, "stage '%s' failed\n", report.failed_stage.c_str());
    return exit_stage_failure;
  }
  return exit_ok;
}

std::vector<weaklab::CostSample> read_samples_file(const std::string& path) {
  std::vector<weaklab::CostSample> samples;
  const auto content = weaklab::read_file(path);
  for (const auto& line : weaklab::split_lines(content)) {
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw weaklab::ConfigError("expected 'notes,seconds' lines in " + path);
    samples.push_back({std::stoull(line.substr(0, comma)),
                       std::stod(line.substr(comma + 1))});
  }
  return samples;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weak-label generation pipeline for span-annotation tasks"};
  app.require_subcommand(1);

  // --- run / resume ---------------------------------------------------------
  auto* run = app.add_subcommand("run", "execute the full pipeline");
  std::string config_path, run_dir;
  RunOverrides ov;
  run->add_option("--config", config_path, "TOML run configuration")->required();
  run->add_option("--run-dir", run_dir, "output run directory")->required();
  run->add_option("--n-s", ov.n_s, "gold subset size");
  run->add_option("--seed", ov.seed, "sampling seed");
  run->add_option("--gateway-url", ov.gateway_url, "completion server base URL");
  run->add_option("--mock", ov.mock, "mock backend (echo-gold|fixed:<t>|file:<p>|fault:<r>)");
  run->add_option("--parallelism", ov.parallelism, "in-flight request bound");
  run->add_option("--few-shot-k", ov.few_shot_k, "few-shot example count");
  run->add_option("--vocabulary", ov.vocabulary, "subword piece file");
  run->add_option("--train", ov.train, "training corpus directory");
  run->add_option("--test", ov.test, "test corpus directory");
  run->add_option("--benchmark", ov.benchmark, "task id (2012|2014|2018)");

  auto* resume_cmd = app.add_subcommand("resume", "continue an interrupted run");
  std::string resume_dir;
  resume_cmd->add_option("--run-dir", resume_dir, "run directory")->required();

  // --- eval ------------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "score predictions against the test corpus");
  std::string eval_run_dir, predictions, mode_name = "strict";
  eval_cmd->add_option("--run-dir", eval_run_dir, "run directory")->required();
  eval_cmd->add_option("--predictions", predictions, "JSONL or BIO predictions")->required();
  eval_cmd->add_option("--mode", mode_name, "strict|lenient");

  // --- stats -----------------------------------------------------------------
  auto* stats_cmd = app.add_subcommand("stats", "corpus statistics CSV");
  std::string stats_corpus, stats_task = "2018", stats_out;
  stats_cmd->add_option("--corpus", stats_corpus, "standoff corpus directory")->required();
  stats_cmd->add_option("--task", stats_task, "task id");
  stats_cmd->add_option("--out", stats_out, "output file (default stdout)");

  // --- select ----------------------------------------------------------------
  auto* select_cmd = app.add_subcommand("select", "gold subset selection manifest");
  std::string select_corpus, select_task = "2018", select_out;
  std::size_t select_n_s = 3;
  select_cmd->add_option("--corpus", select_corpus, "standoff corpus directory")->required();
  select_cmd->add_option("--task", select_task, "task id");
  select_cmd->add_option("--n-s", select_n_s, "gold subset size");
  select_cmd->add_option("--out", select_out, "output file (default stdout)");

  // --- render ----------------------------------------------------------------
  auto* render_cmd = app.add_subcommand("render", "render the prompt template");
  std::string render_corpus, render_task = "2018", render_sentence;
  std::size_t render_k = 8;
  std::uint64_t render_seed = 0;
  render_cmd->add_option("--corpus", render_corpus, "corpus for few-shot sampling")->required();
  render_cmd->add_option("--task", render_task, "task id");
  render_cmd->add_option("--few-shot-k", render_k, "few-shot example count");
  render_cmd->add_option("--seed", render_seed, "sampling seed");
  render_cmd->add_option("--sentence", render_sentence,
                         "input sentence (omit for the {input} placeholder)");

  // --- cost ------------------------------------------------------------------
  auto* cost_cmd = app.add_subcommand("cost", "inference FLOPs and GPU-time projection");
  weaklab::DecoderCostSpec spec = weaklab::llama2_13b_cost_spec();
  double encoder_flops = weaklab::encoder_flops_per_sentence_preset;
  std::string samples_path, cost_out;
  std::uint64_t target_notes = 59652;
  cost_cmd->add_option("--total-params", spec.total_params, "decoder parameter count");
  cost_cmd->add_option("--n-layer", spec.n_layer, "decoder layers");
  cost_cmd->add_option("--n-ctx", spec.n_ctx, "prompt context length in tokens");
  cost_cmd->add_option("--d-attn", spec.d_attn, "attention output dimension");
  cost_cmd->add_option("--n-tokens", spec.n_tokens_out, "generated tokens per sentence");
  cost_cmd->add_option("--encoder-flops", encoder_flops, "encoder FLOPs per sentence");
  cost_cmd->add_option("--samples", samples_path, "CSV of notes,gpu_seconds samples");
  cost_cmd->add_option("--target-notes", target_notes, "projection target");
  cost_cmd->add_option("--out", cost_out, "write the JSON report here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return finish(weaklab::run_pipeline(load_config(config_path, ov), run_dir));
    if (*resume_cmd) return finish(weaklab::resume(resume_dir));

    if (*eval_cmd) {
      const auto report = weaklab::evaluate_predictions(
          eval_run_dir, predictions, weaklab::match_mode_from(mode_name));
      weaklab::write_report_csv(std::cout, report);
      return exit_ok;
    }
    if (*stats_cmd) {
      const auto schema = weaklab::builtin_schema(stats_task);
      weaklab::Corpus corpus;
      for (auto& note : weaklab::load_corpus(stats_corpus, schema))
        corpus.push_back(weaklab::segment_sentences(std::move(note)));
      std::ostringstream os;
      weaklab::write_stats_csv(os, weaklab::corpus_stats(corpus));
      if (stats_out.empty())
        std::cout << os.str();
      else
        weaklab::write_file_atomic(stats_out, os.str());
      return exit_ok;
    }
    if (*select_cmd) {
      const auto schema = weaklab::builtin_schema(select_task);
      const auto corpus = weaklab::load_corpus(select_corpus, schema);
      const auto selection = weaklab::select_gold_subset(corpus, select_n_s);
      const auto out = weaklab::dump_json(weaklab::selection_to_json(selection)) + "\n";
      if (select_out.empty())
        std::cout << out;
      else
        weaklab::write_file_atomic(select_out, out);
      return exit_ok;
    }
    if (*render_cmd) {
      const auto schema = weaklab::builtin_schema(render_task);
      weaklab::Corpus corpus;
      for (auto& note : weaklab::load_corpus(render_corpus, schema))
        corpus.push_back(weaklab::segment_sentences(std::move(note)));
      const auto tpl = weaklab::make_prompt_template(
          schema, weaklab::sample_few_shot(corpus, render_k, render_seed));
      std::cout << (render_sentence.empty()
                        ? weaklab::render_template_text(tpl)
                        : weaklab::render_inference_prompt(tpl, render_sentence))
                << "\n";
      return exit_ok;
    }
    if (*cost_cmd) {
      std::vector<weaklab::CostSample> samples;
      std::optional<weaklab::LinearFit> fit;
      std::optional<weaklab::Projection> projection;
      if (!samples_path.empty()) {
        samples = read_samples_file(samples_path);
        fit = weaklab::fit_linear(samples);
        projection = weaklab::project_gpu_time(*fit, target_notes);
      }
      const auto report = weaklab::cost_report_json(
          spec, encoder_flops, samples, fit ? &*fit : nullptr,
          projection ? &*projection : nullptr);
      if (!cost_out.empty()) weaklab::write_file_atomic(cost_out, weaklab::dump_json(report) + "\n");
      // Two-line summary: per-sentence cost of both model families, then the
      // projected wall time for the target corpus.
      std::printf("decoder %.4g FLOPs/sentence (exact %s); encoder %.4g FLOPs/sentence\n",
                  weaklab::u128_to_double(weaklab::decoder_flops(spec)),
                  weaklab::u128_to_string(weaklab::decoder_flops(spec)).c_str(),
                  encoder_flops);
      if (projection)
        std::printf("projected GPU time for %llu notes: %s (slope %.4g s/note, r2 %.4f)\n",
                    static_cast<unsigned long long>(projection->notes),
                    projection->human.c_str(), fit->slope, fit->r_squared);
      else
        std::printf("no timing samples supplied; projection skipped\n");
      return exit_ok;
    }
  } catch (const weaklab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return exit_config_error;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_stage_failure;
  }
  return exit_ok;
}
