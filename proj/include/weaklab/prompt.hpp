#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "weaklab/corpus.hpp"
#include "weaklab/json_io.hpp"
#include "weaklab/schema.hpp"

namespace weaklab {

namespace special_tokens {
inline constexpr std::string_view bos = "<s>";
inline constexpr std::string_view eos = "</s>";
inline constexpr std::string_view inst_open = "[INST]";
inline constexpr std::string_view inst_close = "[/INST]";
inline constexpr std::string_view sys_open = "<<SYS>>";
inline constexpr std::string_view sys_close = "<</SYS>>";
}  // namespace special_tokens

inline constexpr std::string_view acknowledgement_turn = "Sure, I'd be happy to help!";
inline constexpr std::string_view input_placeholder = "{input}";

/// One demonstration turn: a sentence plus its labels as (text, type) pairs
/// in gold order. Every label text must occur in the sentence, case-sensitive.
struct FewShotExample {
  std::string sentence_text;
  std::vector<std::pair<std::string, std::string>> entities;
};

/// A renderable chat prompt: system block, task instruction, fixed few-shot
/// examples, and a single input slot. Examples are sampled once per run and
/// reused for every sentence.
struct PromptTemplate {
  TaskSchema schema;
  std::string system_prompt;
  std::string instruction;
  std::vector<FewShotExample> examples;
};

inline PromptTemplate make_prompt_template(TaskSchema schema,
                                           std::vector<FewShotExample> examples = {}) {
  PromptTemplate t;
  t.system_prompt = schema.system_prompt;
  t.instruction = schema.instruction;
  t.schema = std::move(schema);
  t.examples = std::move(examples);
  return t;
}

/// One training example for prompt-based fine-tuning: the rendered prompt up
/// to and including `[/INST]`, and the label list as the completion.
struct SftRecord {
  std::string prompt;
  std::string completion;
};

/// Label list in the exact notation of the prompt templates:
/// `[{"entity": "X", "entity_type": "Y"}, ...]`. Byte-stable.
inline std::string serialize_labels(
    const std::vector<std::pair<std::string, std::string>>& labels) {
  std::string out = "[";
  bool first = true;
  for (const auto& [text, type] : labels) {
    if (!first) out += ", ";
    first = false;
    out += "{\"entity\": " + json(text).dump() + ", \"entity_type\": " + json(type).dump() +
           "}";
  }
  out += "]";
  return out;
}

inline std::vector<std::pair<std::string, std::string>> label_pairs(
    const std::vector<Entity>& entities) {
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(entities.size());
  for (const Entity& e : entities) pairs.emplace_back(e.text, e.entity_type);
  return pairs;
}

namespace detail {

// Deterministic across platforms: the distribution in <random> is
// implementation-defined, so draw bounded values by rejection instead.
inline std::uint32_t bounded_uniform(std::mt19937& rng, std::uint32_t n) {
  const std::uint64_t span = 0x100000000ull;
  const std::uint64_t limit = span - span % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return static_cast<std::uint32_t>(v % n);
}

inline void check_no_special_tokens(std::string_view sentence) {
  using namespace special_tokens;
  for (const auto token : {inst_open, inst_close, sys_open}) {
    if (sentence.find(token) != std::string_view::npos)
      throw Error("input sentence contains the special token literal '" +
                  std::string(token) + "'; rejected rather than escaped");
  }
}

}  // namespace detail

/// Sample k distinct sentences (with their gold labels) from the segmented
/// corpus. Deterministic under (corpus, k, seed). With `require_entities`,
/// only sentences carrying at least one entity are eligible.
inline std::vector<FewShotExample> sample_few_shot(const Corpus& corpus, std::size_t k,
                                                   std::uint64_t seed,
                                                   bool require_entities = false) {
  std::vector<FewShotExample> eligible;
  for (const Note& note : corpus) {
    for (const Sentence& s : note.sentences) {
      auto pairs = label_pairs(gold_in_sentence(note, s.index));
      if (require_entities && pairs.empty()) continue;
      eligible.push_back(FewShotExample{s.text, std::move(pairs)});
    }
  }
  if (eligible.size() < k)
    throw Error("sample_few_shot: need " + std::to_string(k) + " sentences but corpus has " +
                std::to_string(eligible.size()) + " eligible ones");
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  for (std::size_t i = 0; i < k; ++i) {
    const auto j =
        i + detail::bounded_uniform(rng, static_cast<std::uint32_t>(eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(k);
  return eligible;
}

namespace detail {

inline std::string render_with_input(const PromptTemplate& t, std::string_view input) {
  std::string out;
  out += "<s>[INST] <<SYS>>\n";
  out += t.system_prompt;
  out += "\n<</SYS>>\n";
  out += t.instruction;
  out += "[/INST]\n\n";
  out += acknowledgement_turn;
  out += " </s>\n\n";
  for (const FewShotExample& ex : t.examples) {
    out += "<s>[INST] ";
    out += ex.sentence_text;
    out += " [/INST]\n\n";
    out += serialize_labels(ex.entities);
    out += " </s>\n\n";
  }
  out += "<s>[INST] ";
  out += input;
  out += " [/INST]";
  return out;
}

}  // namespace detail

/// The template with the literal `{input}` placeholder, as stored in the run
/// directory for audit.
inline std::string render_template_text(const PromptTemplate& t) {
  return detail::render_with_input(t, input_placeholder);
}

/// Render the prompt for one input sentence. The sentence is embedded
/// verbatim and the output ends exactly with `[/INST]`.
inline std::string render_inference_prompt(const PromptTemplate& t, std::string_view sentence) {
  if (sentence.empty()) throw Error("render_inference_prompt: empty sentence");
  detail::check_no_special_tokens(sentence);
  return detail::render_with_input(t, sentence);
}

/// Render one SFT example: prompt as for inference, completion = gold labels
/// in gold order plus the end-of-sequence terminator.
inline SftRecord render_sft_record(const PromptTemplate& t, std::string_view sentence,
                                   const std::vector<Entity>& gold) {
  for (const Entity& e : gold) {
    if (sentence.find(e.text) == std::string_view::npos)
      throw Error("render_sft_record: gold entity text '" + e.text +
                  "' does not occur in the sentence");
  }
  SftRecord rec;
  rec.prompt = render_inference_prompt(t, sentence);
  rec.completion = serialize_labels(label_pairs(gold)) + " </s>";
  return rec;
}

/// Hyperparameters recorded alongside the SFT dataset.
struct SftManifest {
  double learning_rate = 2e-5;
  std::string schedule = "cosine";
  double weight_decay = 0.1;
  int sequence_length = 4096;
  int epochs = 2;
  int batch_size = 1;
};

inline json sft_manifest_to_json(const SftManifest& m) {
  return json{{"learning_rate", m.learning_rate}, {"schedule", m.schedule},
              {"weight_decay", m.weight_decay},   {"sequence_length", m.sequence_length},
              {"epochs", m.epochs},               {"batch_size", m.batch_size}};
}

struct SftExport {
  std::size_t record_count = 0;
  SftManifest manifest;
  std::filesystem::path dataset_path;
  std::filesystem::path manifest_path;
  std::filesystem::path template_path;
};

/// Write one SftRecord per sentence of the gold-subset notes, plus the
/// hyperparameter manifest and a plain-text template snapshot.
inline SftExport export_sft_dataset(const Corpus& corpus,
                                    const std::vector<std::string>& gold_ids,
                                    const PromptTemplate& t,
                                    const std::filesystem::path& out_dir) {
  std::vector<const Note*> subset;
  for (const Note& note : corpus) {
    if (std::find(gold_ids.begin(), gold_ids.end(), note.note_id) != gold_ids.end())
      subset.push_back(&note);
  }
  if (subset.empty()) throw Error("export_sft_dataset: empty gold subset");

  SftExport result;
  std::string lines;
  for (const Note* note : subset) {
    for (const Sentence& s : note->sentences) {
      const auto rec = render_sft_record(t, s.text, gold_in_sentence(*note, s.index));
      lines += dump_json(json{{"prompt", rec.prompt}, {"completion", rec.completion}}) + "\n";
      result.record_count += 1;
    }
  }
  result.dataset_path = out_dir / "dataset.jsonl";
  result.manifest_path = out_dir / "manifest.json";
  result.template_path = out_dir / "template.txt";
  write_file_atomic(result.dataset_path, lines);
  write_file_atomic(result.manifest_path, dump_json(sft_manifest_to_json(result.manifest)) + "\n");
  write_file_atomic(result.template_path, render_template_text(t));
  return result;
}

}  // namespace weaklab
