#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "weaklab/bio.hpp"
#include "weaklab/corpus.hpp"
#include "weaklab/json_io.hpp"

namespace weaklab {

/// strict: identical (start, end, type). lenient: at least one character of
/// span overlap and identical type.
enum class MatchMode { strict, lenient };

inline std::string_view to_string(MatchMode m) {
  return m == MatchMode::strict ? "strict" : "lenient";
}

inline MatchMode match_mode_from(std::string_view s) {
  if (s == "strict") return MatchMode::strict;
  if (s == "lenient" || s == "relaxed") return MatchMode::lenient;
  throw ConfigError("unknown match mode: '" + std::string(s) + "'");
}

struct TypeCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct MatchResult {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (gold index, pred index)
};

namespace detail {

inline std::size_t overlap_chars(const Entity& a, const Entity& b) {
  const std::size_t lo = std::max(a.start, b.start);
  const std::size_t hi = std::min(a.end, b.end);
  return hi > lo ? hi - lo : 0;
}

}  // namespace detail

/// One-to-one matching of predictions against gold within a note. Strict
/// pairs equal keys; lenient pairs greedily in gold order (sorted by start),
/// preferring the unused same-type prediction with the largest overlap, then
/// the earliest start, then the earliest end.
inline MatchResult match_entities(const std::vector<Entity>& gold,
                                  const std::vector<Entity>& pred, MatchMode mode) {
  MatchResult res;
  std::vector<bool> pred_used(pred.size(), false);

  std::vector<std::size_t> gold_order(gold.size());
  for (std::size_t i = 0; i < gold_order.size(); ++i) gold_order[i] = i;
  std::sort(gold_order.begin(), gold_order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(gold[a].start, gold[a].end, gold[a].entity_type) <
           std::tie(gold[b].start, gold[b].end, gold[b].entity_type);
  });

  for (const std::size_t g : gold_order) {
    std::optional<std::size_t> best;
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (pred_used[p] || pred[p].entity_type != gold[g].entity_type) continue;
      if (mode == MatchMode::strict) {
        if (pred[p].start == gold[g].start && pred[p].end == gold[g].end) {
          best = p;
          break;
        }
        continue;
      }
      if (detail::overlap_chars(pred[p], gold[g]) == 0) continue;
      if (!best) {
        best = p;
        continue;
      }
      const auto ov_new = detail::overlap_chars(pred[p], gold[g]);
      const auto ov_best = detail::overlap_chars(pred[*best], gold[g]);
      if (ov_new > ov_best ||
          (ov_new == ov_best &&
           std::tie(pred[p].start, pred[p].end) <
               std::tie(pred[*best].start, pred[*best].end))) {
        best = p;
      }
    }
    if (best) {
      pred_used[*best] = true;
      res.pairs.emplace_back(g, *best);
      res.tp += 1;
    }
  }
  res.fn = gold.size() - res.tp;
  res.fp = pred.size() - res.tp;
  return res;
}

struct EvalReport {
  MatchMode mode = MatchMode::strict;
  std::map<std::string, TypeCounts> per_type;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::map<std::string, TypeCounts> per_note;
  std::string data_label = "non-paper data";
};

namespace detail {

inline void finalize_micro(EvalReport& rep) {
  const double denom_p = static_cast<double>(rep.tp + rep.fp);
  const double denom_r = static_cast<double>(rep.tp + rep.fn);
  rep.precision = denom_p > 0 ? static_cast<double>(rep.tp) / denom_p : 0.0;
  rep.recall = denom_r > 0 ? static_cast<double>(rep.tp) / denom_r : 0.0;
  rep.f1 = (rep.precision + rep.recall) > 0
               ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
               : 0.0;
}

}  // namespace detail

using PredictionSet = std::map<std::string, std::vector<Entity>>;

/// Micro-averaged scores: counts are pooled across all notes before the
/// precision/recall/F1 computation.
inline EvalReport micro_scores(const Corpus& corpus, const PredictionSet& predictions,
                               MatchMode mode) {
  EvalReport rep;
  rep.mode = mode;
  for (const auto& [note_id, entities] : predictions) {
    const bool known = std::any_of(corpus.begin(), corpus.end(),
                                   [&](const Note& n) { return n.note_id == note_id; });
    if (!known) throw Error("prediction for unknown note: " + note_id);
    (void)entities;
  }
  static const std::vector<Entity> no_entities;
  for (const Note& note : corpus) {
    const auto it = predictions.find(note.note_id);
    const auto& pred = it == predictions.end() ? no_entities : it->second;
    const auto match = match_entities(note.gold_entities, pred, mode);

    TypeCounts& note_counts = rep.per_note[note.note_id];
    note_counts.tp += match.tp;
    note_counts.fp += match.fp;
    note_counts.fn += match.fn;
    rep.tp += match.tp;
    rep.fp += match.fp;
    rep.fn += match.fn;

    std::vector<bool> gold_matched(note.gold_entities.size(), false);
    std::vector<bool> pred_matched(pred.size(), false);
    for (const auto& [g, p] : match.pairs) {
      gold_matched[g] = true;
      pred_matched[p] = true;
      rep.per_type[note.gold_entities[g].entity_type].tp += 1;
    }
    for (std::size_t g = 0; g < note.gold_entities.size(); ++g)
      if (!gold_matched[g]) rep.per_type[note.gold_entities[g].entity_type].fn += 1;
    for (std::size_t p = 0; p < pred.size(); ++p)
      if (!pred_matched[p]) rep.per_type[pred[p].entity_type].fp += 1;
  }
  detail::finalize_micro(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Prediction loading: the corpus JSON-Lines entity format, or a BIO file
// decoded sentence by sentence. Entity text, when present, is revalidated
// against the note text.
// ---------------------------------------------------------------------------

inline PredictionSet load_predictions(const std::filesystem::path& path, const Corpus& corpus) {
  const std::string content = read_file(path);
  PredictionSet out;

  const bool looks_bio = content.rfind(docstart_marker, 0) == 0;
  if (looks_bio) {
    std::map<std::string, const Note*> notes;
    for (const Note& n : corpus) notes[n.note_id] = &n;
    for (const BioExample& ex : read_bio_file(content)) {
      const auto it = notes.find(ex.note_id);
      const std::string* text = it == notes.end() ? nullptr : &it->second->text;
      for (Entity& e : from_bio(ex, text)) out[ex.note_id].push_back(std::move(e));
    }
    return out;
  }

  const auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    json j = json::parse(lines[i], nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("note_id") ||
        !j.contains("entities"))
      throw ParseError("malformed prediction line in " + path.string(), i + 1);
    const auto note_id = j.at("note_id").get<std::string>();
    const Note* note = nullptr;
    for (const Note& n : corpus)
      if (n.note_id == note_id) note = &n;
    auto& bucket = out[note_id];
    for (const auto& e : j.at("entities")) {
      Entity entity;
      entity.start = e.at("start").get<std::size_t>();
      entity.end = e.at("end").get<std::size_t>();
      entity.entity_type = e.at("type").get<std::string>();
      entity.text = e.value("text", std::string{});
      entity.source = LabelSource::weak;
      if (!entity.text.empty() && note) {
        if (utf8::substr(note->text, entity.start, entity.end) != entity.text)
          throw ParseError("prediction text does not match note substring", i + 1);
      }
      bucket.push_back(std::move(entity));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

inline void write_report_csv(std::ostream& out, const EvalReport& rep) {
  out << "mode,type,tp,fp,fn,precision,recall,f1\n";
  auto line = [&](const std::string& type, const TypeCounts& c) {
    const double p = c.tp + c.fp ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
    const double r = c.tp + c.fn ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    out << to_string(rep.mode) << "," << type << "," << c.tp << "," << c.fp << "," << c.fn
        << "," << p << "," << r << "," << f << "\n";
  };
  for (const auto& [type, counts] : rep.per_type) line(type, counts);
  out << to_string(rep.mode) << ",micro," << rep.tp << "," << rep.fp << "," << rep.fn << ","
      << rep.precision << "," << rep.recall << "," << rep.f1 << "\n";
  out << "# data: " << rep.data_label << "\n";
}

inline json report_to_json(const EvalReport& rep) {
  json per_type = json::object();
  for (const auto& [type, c] : rep.per_type)
    per_type[type] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
  json per_note = json::object();
  for (const auto& [id, c] : rep.per_note)
    per_note[id] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
  return json{{"mode", std::string(to_string(rep.mode))},
              {"per_type", per_type},
              {"per_note", per_note},
              {"micro",
               {{"tp", rep.tp},
                {"fp", rep.fp},
                {"fn", rep.fn},
                {"precision", rep.precision},
                {"recall", rep.recall},
                {"f1", rep.f1}}},
              {"data_label", rep.data_label}};
}

}  // namespace weaklab
