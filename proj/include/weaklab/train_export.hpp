#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "weaklab/bio.hpp"
#include "weaklab/corpus.hpp"
#include "weaklab/distill.hpp"
#include "weaklab/json_io.hpp"
#include "weaklab/subset.hpp"
#include "weaklab/wordpiece.hpp"

namespace weaklab {

enum class TrainingStageKind { weak, gold };

inline std::string_view to_string(TrainingStageKind k) {
  return k == TrainingStageKind::weak ? "weak" : "gold";
}

struct StageHyperparameters {
  double validation_ratio = 0.2;
  int input_token_length = 256;
  double learning_rate = 2e-6;
  int batch_size = 2;

  friend bool operator==(const StageHyperparameters&, const StageHyperparameters&) = default;
};

/// Hyperparameter catalog keyed by (benchmark, n_s, stage). The three
/// benchmarks share one recipe: every stage trains at 2e-6 over 256-token
/// inputs; weak stages batch 32; the gold stage batches 1 with a 0.34
/// validation split when only 3 notes are available, else 2 with 0.2.
inline StageHyperparameters catalog_hyperparameters(const std::string& benchmark_id,
                                                    std::size_t n_s,
                                                    TrainingStageKind stage) {
  if (benchmark_id != "2012" && benchmark_id != "2014" && benchmark_id != "2018")
    throw ConfigError("unknown benchmark id: '" + benchmark_id + "'");
  StageHyperparameters hp;
  if (stage == TrainingStageKind::weak) {
    hp.batch_size = 32;
    hp.validation_ratio = 0.2;
  } else {
    hp.batch_size = n_s == 3 ? 1 : 2;
    hp.validation_ratio = n_s == 3 ? 0.34 : 0.2;
  }
  return hp;
}

struct TrainingStage {
  std::string name;  // "weak" | "gold"
  std::string source_file;
  std::vector<std::string> note_ids;
  StageHyperparameters hyperparameters;
};

/// The two-stage (weak then gold) training recipe. Validation splits are by
/// note; checkpoints are selected on validation performance with early
/// stopping after 8 non-improving epochs.
struct TrainingManifest {
  std::vector<TrainingStage> stages;
  int early_stop_patience = 8;
  std::string checkpoint_selection = "best-validation";
};

inline json training_manifest_to_json(const TrainingManifest& m) {
  json stages = json::array();
  for (const TrainingStage& s : m.stages) {
    stages.push_back({{"name", s.name},
                      {"source", s.source_file},
                      {"notes", s.note_ids},
                      {"hyperparameters",
                       {{"validation_ratio", s.hyperparameters.validation_ratio},
                        {"input_token_length", s.hyperparameters.input_token_length},
                        {"learning_rate", s.hyperparameters.learning_rate},
                        {"batch_size", s.hyperparameters.batch_size}}}});
  }
  return json{{"stages", stages},
              {"early_stop_patience", m.early_stop_patience},
              {"checkpoint_selection", m.checkpoint_selection},
              {"validation_split_unit", "note"}};
}

struct ExportOptions {
  /// Post-processing failures carry no usable signal; by default their
  /// sentences are left out of the weak stage. Switch on to keep them as
  /// all-O examples instead.
  bool include_failed_as_empty = false;
};

struct ExportSummary {
  std::size_t weak_examples = 0;
  std::size_t gold_examples = 0;
  std::size_t weak_entities = 0;
  std::size_t gold_entities = 0;
  std::size_t failed_excluded = 0;
  std::size_t dropped_overlap = 0;
  std::size_t dropped_truncated = 0;
  std::size_t dropped_boundary_crossing = 0;
};

struct StageExport {
  TrainingManifest manifest;
  ExportSummary summary;
  std::filesystem::path weak_path;
  std::filesystem::path gold_path;
  std::filesystem::path manifest_path;
};

namespace detail {

inline const Note& note_by_id(const Corpus& corpus, const std::string& id) {
  for (const Note& n : corpus)
    if (n.note_id == id) return n;
  throw Error("note not in corpus: " + id);
}

inline std::vector<Entity> shift_entities(std::vector<Entity> entities, std::size_t offset) {
  for (Entity& e : entities) {
    e.start += offset;
    e.end += offset;
  }
  return entities;
}

inline std::vector<SubwordToken> shift_tokens(std::vector<SubwordToken> tokens,
                                              std::size_t offset) {
  for (SubwordToken& t : tokens) {
    t.start += offset;
    t.end += offset;
  }
  return tokens;
}

}  // namespace detail

/// Convert the weak and gold splits into subword BIO files and emit the
/// two-stage manifest. Weak entities come from the distilled label set
/// (which must cover every sentence of every weak note); gold entities come
/// from the corpus. All offsets in the files are note-relative.
inline StageExport export_stage_datasets(const Corpus& corpus, const WeakLabelSet& weak_set,
                                         const SubsetSelection& selection,
                                         const std::string& benchmark_id, std::size_t n_s,
                                         const PieceVocabulary& vocab,
                                         const std::filesystem::path& out_dir,
                                         const ExportOptions& options = {}) {
  StageExport result;
  const auto weak_hp = catalog_hyperparameters(benchmark_id, n_s, TrainingStageKind::weak);
  const auto gold_hp = catalog_hyperparameters(benchmark_id, n_s, TrainingStageKind::gold);
  const auto max_tokens = static_cast<std::size_t>(weak_hp.input_token_length);

  // Index weak results and check coverage before writing anything.
  std::map<std::pair<std::string, std::size_t>, const WeakLabelResult*> by_sentence;
  for (const WeakLabelResult& r : weak_set.results)
    by_sentence[{r.note_id, r.sentence_index}] = &r;
  std::set<std::string> missing;
  for (const std::string& id : selection.weak_ids) {
    const Note& note = detail::note_by_id(corpus, id);
    for (const Sentence& s : note.sentences)
      if (!by_sentence.count({id, s.index})) missing.insert(id);
  }
  if (!missing.empty()) {
    std::string msg = "missing weak labels for note(s):";
    for (const auto& id : missing) msg += " " + id;
    throw Error(msg);
  }

  std::vector<BioExample> weak_examples;
  for (const std::string& id : selection.weak_ids) {
    const Note& note = detail::note_by_id(corpus, id);
    for (const Sentence& s : note.sentences) {
      const WeakLabelResult& r = *by_sentence.at({id, s.index});
      if (r.status == WeakStatus::failed && !options.include_failed_as_empty) {
        result.summary.failed_excluded += 1;
        continue;
      }
      auto tokens = detail::shift_tokens(tokenize_subwords(s.text, vocab), s.start);
      const auto entities = r.status == WeakStatus::ok
                                ? detail::shift_entities(r.entities, s.start)
                                : std::vector<Entity>{};
      auto conv = to_bio(id, s.index, std::move(tokens), entities, max_tokens);
      result.summary.dropped_overlap += conv.dropped_overlap;
      result.summary.dropped_truncated += conv.dropped_truncated;
      result.summary.weak_entities += from_bio(conv.example).size();
      weak_examples.push_back(std::move(conv.example));
    }
  }

  std::vector<BioExample> gold_examples;
  auto sorted_gold_ids = selection.gold_ids;
  std::sort(sorted_gold_ids.begin(), sorted_gold_ids.end());
  for (const std::string& id : sorted_gold_ids) {
    const Note& note = detail::note_by_id(corpus, id);
    result.summary.dropped_boundary_crossing += boundary_crossing_count(note);
    for (const Sentence& s : note.sentences) {
      auto tokens = detail::shift_tokens(tokenize_subwords(s.text, vocab), s.start);
      const auto entities =
          detail::shift_entities(gold_in_sentence(note, s.index), s.start);
      auto conv = to_bio(id, s.index, std::move(tokens), entities, max_tokens);
      result.summary.dropped_overlap += conv.dropped_overlap;
      result.summary.dropped_truncated += conv.dropped_truncated;
      result.summary.gold_entities += from_bio(conv.example).size();
      gold_examples.push_back(std::move(conv.example));
    }
  }

  result.summary.weak_examples = weak_examples.size();
  result.summary.gold_examples = gold_examples.size();
  result.weak_path = out_dir / "weak.bio";
  result.gold_path = out_dir / "gold.bio";
  result.manifest_path = out_dir / "manifest.json";
  write_file_atomic(result.weak_path, write_bio_file(weak_examples));
  write_file_atomic(result.gold_path, write_bio_file(gold_examples));

  result.manifest.stages.push_back(
      {"weak", result.weak_path.filename().string(), selection.weak_ids, weak_hp});
  result.manifest.stages.push_back(
      {"gold", result.gold_path.filename().string(), selection.gold_ids, gold_hp});
  write_file_atomic(result.manifest_path,
                    dump_json(training_manifest_to_json(result.manifest)) + "\n");
  return result;
}

}  // namespace weaklab
