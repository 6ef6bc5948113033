#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "weaklab/corpus.hpp"
#include "weaklab/json_io.hpp"
#include "weaklab/schema.hpp"
#include "weaklab/stats.hpp"
#include "weaklab/utf8.hpp"

// Post-processing that turns raw generated text into schema-valid spans:
//   1. extract the text generated after the final [/INST], truncating at any
//      follow-on [INST] or </s> the model produced;
//   2. mine non-greedy {...} candidates and JSON-parse each one;
//   3. recover character spans by exact case-sensitive matching, assigning
//      duplicate surfaces to successive occurrences;
//   4. drop entity types outside the task schema.
// Every step is total; malformed input surfaces as counters, never as an
// exception.

namespace weaklab {

/// A mined label object before validation against the sentence and schema.
struct RawParsedEntity {
  std::string text;
  std::string entity_type;
};

enum class WeakStatus { ok, empty, failed };

inline std::string_view to_string(WeakStatus s) {
  switch (s) {
    case WeakStatus::ok: return "ok";
    case WeakStatus::empty: return "empty";
    case WeakStatus::failed: return "failed";
  }
  return "failed";
}

inline WeakStatus weak_status_from(std::string_view s) {
  if (s == "ok") return WeakStatus::ok;
  if (s == "empty") return WeakStatus::empty;
  if (s == "failed") return WeakStatus::failed;
  throw ParseError("unknown weak-label status: '" + std::string(s) + "'");
}

/// Distillation outcome for one sentence. Entity offsets are
/// sentence-relative. `failed` means nothing recoverable was generated;
/// `empty` means the model said `[]`.
struct WeakLabelResult {
  std::string note_id;
  std::size_t sentence_index = 0;
  WeakStatus status = WeakStatus::ok;
  std::vector<Entity> entities;
  std::size_t dropped_unrecovered = 0;
  std::size_t dropped_bad_type = 0;
  std::string raw_text;  // retained in memory, not persisted
};

struct WeakProvenance {
  std::string model_id;
  std::string template_digest;
  std::uint32_t max_new_tokens = 128;
  std::uint32_t top_k = 1;
};

struct WeakLabelSet {
  std::vector<WeakLabelResult> results;  // at most one per (note_id, sentence_index)
  WeakProvenance provenance;
};

// ---------------------------------------------------------------------------
// Step 1: generated-text extraction.
// ---------------------------------------------------------------------------

/// Substring after the last `[/INST]` (or the whole string when absent),
/// truncated at the first subsequent `[INST]` or `</s>`. The result contains
/// neither marker.
inline std::string extract_generated(std::string_view raw) {
  constexpr std::string_view inst_close = "[/INST]";
  const auto pos = raw.rfind(inst_close);
  std::string_view tail =
      pos == std::string_view::npos ? raw : raw.substr(pos + inst_close.size());
  const auto a = tail.find("[INST]");
  const auto b = tail.find("</s>");
  std::size_t cut = tail.size();
  if (a != std::string_view::npos) cut = std::min(cut, a);
  if (b != std::string_view::npos) cut = std::min(cut, b);
  return std::string(tail.substr(0, cut));
}

// ---------------------------------------------------------------------------
// Step 2: JSON object mining.
// ---------------------------------------------------------------------------

struct ParsedObjects {
  std::vector<RawParsedEntity> entities;
  std::size_t skipped = 0;  // brace candidates that were not valid label objects
};

/// Scan left-to-right for the shortest `{...}` candidates (the non-greedy
/// brace pattern) and JSON-parse each one. Objects need non-empty string
/// values under "entity" and "entity_type"; extra keys are ignored. Nested
/// braces are not supported, mirroring the pattern this mirrors.
inline ParsedObjects extract_json_objects(std::string_view payload) {
  ParsedObjects out;
  std::size_t i = 0;
  while (true) {
    const auto open = payload.find('{', i);
    if (open == std::string_view::npos) break;
    const auto close = payload.find('}', open + 1);
    if (close == std::string_view::npos) break;
    const auto candidate = payload.substr(open, close - open + 1);
    const json j = json::parse(candidate, nullptr, false);
    bool kept = false;
    if (j.is_object()) {
      const auto te = j.find("entity");
      const auto tt = j.find("entity_type");
      if (te != j.end() && tt != j.end() && te->is_string() && tt->is_string()) {
        auto text = te->get<std::string>();
        auto type = tt->get<std::string>();
        if (!text.empty() && !type.empty()) {
          out.entities.push_back({std::move(text), std::move(type)});
          kept = true;
        }
      }
    }
    if (!kept) out.skipped += 1;
    i = close + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step 3: span recovery.
// ---------------------------------------------------------------------------

struct RecoveredSpans {
  std::vector<Entity> entities;
  std::size_t dropped = 0;  // texts with no unconsumed occurrence
};

/// Exact, case-sensitive matching of each parsed entity text in the sentence.
/// For each text, the leftmost occurrence whose start was not already taken
/// by an earlier identical text wins; repeated surfaces therefore map to
/// successive occurrences. Unmatched texts are dropped and counted.
inline RecoveredSpans recover_spans(std::string_view sentence,
                                    const std::vector<RawParsedEntity>& parsed) {
  const auto sent = utf8::decode(sentence);
  RecoveredSpans out;
  std::unordered_map<std::string, std::size_t> next_search_from;
  for (const RawParsedEntity& p : parsed) {
    const auto pattern = utf8::decode(p.text);
    if (pattern.units.empty()) {
      out.dropped += 1;
      continue;
    }
    auto& from = next_search_from[p.text];
    if (from > sent.units.size()) {
      out.dropped += 1;
      continue;
    }
    const auto it = std::search(sent.units.begin() + static_cast<std::ptrdiff_t>(from),
                                sent.units.end(), pattern.units.begin(), pattern.units.end());
    if (it == sent.units.end()) {
      out.dropped += 1;
      continue;
    }
    const auto start = static_cast<std::size_t>(it - sent.units.begin());
    Entity e;
    e.start = start;
    e.end = start + pattern.units.size();
    e.text = p.text;
    e.entity_type = p.entity_type;
    e.source = LabelSource::weak;
    out.entities.push_back(std::move(e));
    from = start + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step 4: entity type filtering.
// ---------------------------------------------------------------------------

struct FilteredEntities {
  std::vector<Entity> entities;
  std::size_t dropped = 0;
};

/// Keep exactly the entities whose type is in the schema, order preserved.
inline FilteredEntities filter_types(std::vector<Entity> entities, const TaskSchema& schema) {
  FilteredEntities out;
  for (Entity& e : entities) {
    if (schema.has_type(e.entity_type))
      out.entities.push_back(std::move(e));
    else
      out.dropped += 1;
  }
  return out;
}

namespace detail {

/// Whitespace-tolerant `[]`.
inline bool matches_empty_list(std::string_view payload) {
  std::size_t b = 0;
  std::size_t e = payload.size();
  while (b < e && is_ascii_space(static_cast<unsigned char>(payload[b]))) ++b;
  while (e > b && is_ascii_space(static_cast<unsigned char>(payload[e - 1]))) --e;
  if (e - b < 2 || payload[b] != '[' || payload[e - 1] != ']') return false;
  for (std::size_t i = b + 1; i + 1 < e; ++i)
    if (!is_ascii_space(static_cast<unsigned char>(payload[i]))) return false;
  return true;
}

}  // namespace detail

/// Full pipeline for one sentence. Never throws: arbitrary input lands in one
/// of the three statuses and the drop counters conserve
/// (#parsed == #recovered + dropped_unrecovered;
///  #recovered == #kept + dropped_bad_type).
inline WeakLabelResult distill_sentence(std::string_view note_id, const Sentence& sentence,
                                        std::string_view raw, const TaskSchema& schema) {
  WeakLabelResult r;
  r.note_id = std::string(note_id);
  r.sentence_index = sentence.index;
  r.raw_text = std::string(raw);

  const std::string payload = extract_generated(raw);
  const auto parsed = extract_json_objects(payload);
  if (parsed.entities.empty()) {
    if (detail::matches_empty_list(payload))
      r.status = WeakStatus::empty;
    else if (!payload.empty())
      r.status = WeakStatus::failed;
    else
      r.status = WeakStatus::ok;
    return r;
  }
  auto recovered = recover_spans(sentence.text, parsed.entities);
  auto kept = filter_types(std::move(recovered.entities), schema);
  r.status = WeakStatus::ok;
  r.entities = std::move(kept.entities);
  r.dropped_unrecovered = recovered.dropped;
  r.dropped_bad_type = kept.dropped;
  return r;
}

// ---------------------------------------------------------------------------
// Weak-label statistics and persistence.
// ---------------------------------------------------------------------------

/// Statistics over a weak-label run, same shape as the gold corpus_stats.
inline EntityStats weak_label_stats(const WeakLabelSet& set) {
  if (set.results.empty()) throw Error("weak_label_stats: no results");
  EntityStats stats;
  std::vector<double> per_sentence;
  std::map<std::string, double> per_note;
  std::size_t failed = 0;
  for (const WeakLabelResult& r : set.results) {
    per_sentence.push_back(static_cast<double>(r.entities.size()));
    per_note[r.note_id] += static_cast<double>(r.entities.size());
    stats.total_entities += r.entities.size();
    if (r.status == WeakStatus::failed) ++failed;
  }
  stats.sentence_count = set.results.size();
  stats.note_count = per_note.size();
  stats.failed_sentence_pct =
      100.0 * static_cast<double>(failed) / static_cast<double>(set.results.size());
  stats.per_sentence = dist_stats(std::move(per_sentence));
  std::vector<double> note_counts;
  for (const auto& [id, count] : per_note) note_counts.push_back(count);
  stats.per_note = dist_stats(std::move(note_counts));
  return stats;
}

/// Statistics over weak labels; the corpus argument validates note ids.
inline EntityStats corpus_stats(const Corpus& corpus, const WeakLabelSet& weak) {
  for (const WeakLabelResult& r : weak.results) {
    const bool known = std::any_of(corpus.begin(), corpus.end(),
                                   [&](const Note& n) { return n.note_id == r.note_id; });
    if (!known) throw Error("weak label for unknown note: " + r.note_id);
  }
  return weak_label_stats(weak);
}

inline json weak_summary_json(const WeakLabelSet& set) {
  const EntityStats s = weak_label_stats(set);
  return json{{"Notes", s.note_count},
              {"Sentences", s.sentence_count},
              {"Total entities", s.total_entities},
              {"Entities per sentence, median [Q1, Q3]", median_iqr_string(s.per_sentence)},
              {"Entities per sentence, mean (Std Dev)", mean_sd_string(s.per_sentence)},
              {"Entities per note, median [Q1, Q3]", median_iqr_string(s.per_note)},
              {"Entities per note, mean (Std Dev)", mean_sd_string(s.per_note)},
              {"Post-processing failed, sentences (%)", s.failed_sentence_pct}};
}

inline json weak_result_to_json(const WeakLabelResult& r) {
  json entities = json::array();
  for (const Entity& e : r.entities)
    entities.push_back(
        {{"start", e.start}, {"end", e.end}, {"text", e.text}, {"type", e.entity_type}});
  return json{{"note_id", r.note_id},
              {"sentence_index", r.sentence_index},
              {"status", std::string(to_string(r.status))},
              {"entities", entities},
              {"dropped_unrecovered", r.dropped_unrecovered},
              {"dropped_bad_type", r.dropped_bad_type}};
}

inline WeakLabelResult weak_result_from_json(const json& j) {
  WeakLabelResult r;
  r.note_id = j.at("note_id").get<std::string>();
  r.sentence_index = j.at("sentence_index").get<std::size_t>();
  r.status = weak_status_from(j.at("status").get<std::string>());
  for (const auto& e : j.at("entities")) {
    Entity entity;
    entity.start = e.at("start").get<std::size_t>();
    entity.end = e.at("end").get<std::size_t>();
    entity.text = e.at("text").get<std::string>();
    entity.entity_type = e.at("type").get<std::string>();
    entity.source = LabelSource::weak;
    r.entities.push_back(std::move(entity));
  }
  r.dropped_unrecovered = j.at("dropped_unrecovered").get<std::size_t>();
  r.dropped_bad_type = j.at("dropped_bad_type").get<std::size_t>();
  return r;
}

/// JSON-Lines: one provenance line, one line per sentence, one closing
/// summary block with the run-level accounting.
inline void save_weak_labels(const std::filesystem::path& path, const WeakLabelSet& set) {
  std::string out;
  out += dump_json(json{{"provenance",
                         {{"model_id", set.provenance.model_id},
                          {"template_digest", set.provenance.template_digest},
                          {"max_new_tokens", set.provenance.max_new_tokens},
                          {"top_k", set.provenance.top_k}}}}) +
         "\n";
  auto sorted = set.results;
  std::sort(sorted.begin(), sorted.end(), [](const WeakLabelResult& a, const WeakLabelResult& b) {
    return std::tie(a.note_id, a.sentence_index) < std::tie(b.note_id, b.sentence_index);
  });
  for (const WeakLabelResult& r : sorted) out += dump_json(weak_result_to_json(r)) + "\n";
  out += dump_json(json{{"summary", weak_summary_json(set)}}) + "\n";
  write_file_atomic(path, out);
}

inline WeakLabelSet load_weak_labels(const std::filesystem::path& path) {
  WeakLabelSet set;
  const auto lines = split_lines(read_file(path));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    json j = json::parse(lines[i], nullptr, false);
    if (j.is_discarded())
      throw ParseError("malformed weak-label line in " + path.string(), i + 1);
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      set.provenance.model_id = p.value("model_id", "");
      set.provenance.template_digest = p.value("template_digest", "");
      set.provenance.max_new_tokens = p.value("max_new_tokens", 128u);
      set.provenance.top_k = p.value("top_k", 1u);
      continue;
    }
    if (j.contains("summary")) continue;
    set.results.push_back(weak_result_from_json(j));
  }
  return set;
}

}  // namespace weaklab
