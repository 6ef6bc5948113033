#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "weaklab/error.hpp"
#include "weaklab/json_io.hpp"
#include "weaklab/schema.hpp"
#include "weaklab/utf8.hpp"

namespace weaklab {

enum class LabelSource { gold, weak };

inline std::string_view to_string(LabelSource s) {
  return s == LabelSource::gold ? "gold" : "weak";
}

inline LabelSource label_source_from(std::string_view s) {
  if (s == "gold") return LabelSource::gold;
  if (s == "weak") return LabelSource::weak;
  throw ParseError("unknown label source: '" + std::string(s) + "'");
}

/// One annotated span. Offsets count Unicode scalar values; end is exclusive.
/// When attached to a note, text equals the note substring [start, end).
struct Entity {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string text;
  std::string entity_type;
  LabelSource source = LabelSource::gold;

  friend bool operator==(const Entity&, const Entity&) = default;
};

struct Sentence {
  std::size_t index = 0;
  std::size_t start = 0;  // scalar offset into the note
  std::size_t end = 0;
  std::string text;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

struct Note {
  std::string note_id;
  std::string text;
  std::vector<Sentence> sentences;
  std::vector<Entity> gold_entities;  // sorted by (start, end)

  friend bool operator==(const Note&, const Note&) = default;
};

using Corpus = std::vector<Note>;

namespace detail {

inline bool is_ascii_space(std::uint32_t u) {
  return u == ' ' || u == '\t' || u == '\n' || u == '\r' || u == '\f' || u == '\v';
}

inline void sort_entities(std::vector<Entity>& entities) {
  std::stable_sort(entities.begin(), entities.end(), [](const Entity& a, const Entity& b) {
    return std::tie(a.start, a.end, a.entity_type, a.text) <
           std::tie(b.start, b.end, b.entity_type, b.text);
  });
}

inline std::size_t parse_offset(std::string_view field, std::size_t line_no) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size())
    throw ParseError("invalid offset '" + std::string(field) + "'", line_no);
  return value;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Standoff annotation format: <id>.txt next to <id>.ann, one entity per
// T-line `T<k>\t<TYPE> <start> <end>\t<surface>`. Comment lines (`#`) are
// ignored; relation/attribute layers (R, E, A, M, N, *) are out of scope and
// skipped. Offsets are scalar-value offsets into the text document.
// ---------------------------------------------------------------------------

inline Note parse_standoff(std::string_view text_doc, std::string_view ann_doc,
                           std::string note_id = {}) {
  Note note;
  note.note_id = std::move(note_id);
  note.text = text_doc;
  const auto decoded = utf8::decode(text_doc);

  std::set<std::string> seen_ids;
  const auto lines = split_lines(ann_doc);
  for (std::size_t li = 0; li < lines.size(); ++li) {
    const std::string& line = lines[li];
    const std::size_t line_no = li + 1;
    if (line.empty() || line[0] == '#') continue;
    if (line[0] == 'R' || line[0] == 'E' || line[0] == 'A' || line[0] == 'M' ||
        line[0] == 'N' || line[0] == '*')
      continue;
    if (line[0] != 'T')
      throw ParseError("unrecognized annotation line: '" + line + "'", line_no);

    const auto tab1 = line.find('\t');
    if (tab1 == std::string::npos)
      throw ParseError("expected tab after annotation id", line_no);
    const auto tab2 = line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos)
      throw ParseError("expected tab after span definition", line_no);

    const std::string id = line.substr(0, tab1);
    if (!seen_ids.insert(id).second)
      throw ParseError("duplicate annotation id " + id, line_no);

    const std::string_view span_def{line.data() + tab1 + 1, tab2 - tab1 - 1};
    if (span_def.find(';') != std::string_view::npos)
      throw ParseError("discontinuous spans are not supported", line_no);
    const auto sp1 = span_def.find(' ');
    const auto sp2 = span_def.rfind(' ');
    if (sp1 == std::string_view::npos || sp2 == sp1)
      throw ParseError("expected '<TYPE> <start> <end>'", line_no);

    Entity entity;
    entity.entity_type = std::string(span_def.substr(0, sp1));
    entity.start = detail::parse_offset(span_def.substr(sp1 + 1, sp2 - sp1 - 1), line_no);
    entity.end = detail::parse_offset(span_def.substr(sp2 + 1), line_no);
    entity.text = line.substr(tab2 + 1);
    entity.source = LabelSource::gold;

    if (entity.start >= entity.end || entity.end > decoded.size())
      throw ParseError("offsets out of bounds for " + id + ": [" +
                           std::to_string(entity.start) + ", " + std::to_string(entity.end) +
                           ") over a " + std::to_string(decoded.size()) + "-character text",
                       line_no);
    const auto actual = utf8::substr(text_doc, decoded, entity.start, entity.end);
    if (actual != entity.text)
      throw ParseError("surface mismatch for " + id + ": annotation says '" + entity.text +
                           "' but text holds '" + std::string(actual) + "'",
                       line_no);
    note.gold_entities.push_back(std::move(entity));
  }
  detail::sort_entities(note.gold_entities);
  return note;
}

inline std::string write_standoff(const Note& note) {
  std::string out;
  std::size_t k = 1;
  for (const Entity& e : note.gold_entities) {
    if (e.text.find('\n') != std::string::npos)
      throw Error("standoff surfaces cannot contain newlines (note " + note.note_id + ")");
    out += "T" + std::to_string(k++) + "\t" + e.entity_type + " " + std::to_string(e.start) +
           " " + std::to_string(e.end) + "\t" + e.text + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sentence segmentation: split after `.`, `!`, `?` when followed by
// whitespace, and at blank lines; never inside a token. Sentences are trimmed
// so the gaps between them are whitespace-only.
// ---------------------------------------------------------------------------

inline Note segment_sentences(Note note) {
  note.sentences.clear();
  const auto decoded = utf8::decode(note.text);
  const auto& u = decoded.units;
  const std::size_t n = u.size();

  std::vector<std::size_t> cuts;
  for (std::size_t i = 0; i < n; ++i) {
    if ((u[i] == '.' || u[i] == '!' || u[i] == '?') && i + 1 < n &&
        detail::is_ascii_space(u[i + 1])) {
      cuts.push_back(i + 1);
    } else if (u[i] == '\n') {
      std::size_t j = i + 1;
      while (j < n && (u[j] == ' ' || u[j] == '\t' || u[j] == '\r')) ++j;
      if (j < n && u[j] == '\n') cuts.push_back(i + 1);
    }
  }
  cuts.push_back(n);

  std::size_t begin = 0;
  std::size_t index = 0;
  for (const std::size_t cut : cuts) {
    std::size_t s = begin;
    std::size_t e = cut;
    while (s < e && detail::is_ascii_space(u[s])) ++s;
    while (e > s && detail::is_ascii_space(u[e - 1])) --e;
    if (s < e) {
      Sentence sent;
      sent.index = index++;
      sent.start = s;
      sent.end = e;
      sent.text = std::string(utf8::substr(note.text, decoded, s, e));
      note.sentences.push_back(std::move(sent));
    }
    begin = cut;
  }
  return note;
}

/// Entities fully inside sentence `index`, re-based to sentence-relative
/// offsets. Entities that cross a sentence boundary belong to no sentence.
inline std::vector<Entity> gold_in_sentence(const Note& note, std::size_t index) {
  const Sentence& s = note.sentences.at(index);
  std::vector<Entity> out;
  for (const Entity& e : note.gold_entities) {
    if (e.start >= s.start && e.end <= s.end) {
      Entity shifted = e;
      shifted.start -= s.start;
      shifted.end -= s.start;
      out.push_back(std::move(shifted));
    }
  }
  return out;
}

/// Gold entities not fully contained in any single sentence. These are kept
/// at note level and excluded from sentence-scoped operations.
inline std::size_t boundary_crossing_count(const Note& note) {
  std::size_t count = 0;
  for (const Entity& e : note.gold_entities) {
    bool inside = false;
    for (const Sentence& s : note.sentences) {
      if (e.start >= s.start && e.end <= s.end) {
        inside = true;
        break;
      }
    }
    if (!inside) ++count;
  }
  return count;
}

// ---------------------------------------------------------------------------
// Corpus loading and the JSON-Lines interchange format.
// ---------------------------------------------------------------------------

inline Corpus load_corpus(const std::filesystem::path& directory, const TaskSchema& schema) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(directory))
    throw Error("corpus directory does not exist: " + directory.string());

  std::map<std::string, int> stems;  // bit 1 = .txt, bit 2 = .ann
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext == ".txt")
      stems[entry.path().stem().string()] |= 1;
    else if (ext == ".ann")
      stems[entry.path().stem().string()] |= 2;
  }
  for (const auto& [stem, mask] : stems) {
    if (mask == 1) throw Error("unpaired corpus file: missing " + stem + ".ann");
    if (mask == 2) throw Error("unpaired corpus file: missing " + stem + ".txt");
  }
  if (stems.empty()) throw Error("no <id>.txt/<id>.ann pairs in " + directory.string());

  Corpus corpus;
  std::set<std::string> bad_types;
  for (const auto& [stem, mask] : stems) {
    auto note = parse_standoff(read_file(directory / (stem + ".txt")),
                               read_file(directory / (stem + ".ann")), stem);
    for (const Entity& e : note.gold_entities)
      if (!schema.has_type(e.entity_type)) bad_types.insert(e.entity_type);
    corpus.push_back(std::move(note));
  }
  if (!bad_types.empty()) {
    std::string msg = "entity types not in schema '" + schema.task_id + "':";
    for (const auto& t : bad_types) msg += " '" + t + "'";
    throw Error(msg);
  }
  // std::map iteration already yields notes sorted by note_id.
  return corpus;
}

inline json note_to_json(const Note& note) {
  json sentences = json::array();
  for (const Sentence& s : note.sentences)
    sentences.push_back({{"start", s.start}, {"end", s.end}});
  json entities = json::array();
  for (const Entity& e : note.gold_entities)
    entities.push_back({{"start", e.start},
                        {"end", e.end},
                        {"text", e.text},
                        {"type", e.entity_type},
                        {"source", std::string(to_string(e.source))}});
  return json{{"note_id", note.note_id},
              {"text", note.text},
              {"sentences", sentences},
              {"entities", entities}};
}

inline Note note_from_json(const json& j) {
  Note note;
  note.note_id = j.at("note_id").get<std::string>();
  note.text = j.at("text").get<std::string>();
  const auto decoded = utf8::decode(note.text);
  std::size_t index = 0;
  for (const auto& s : j.at("sentences")) {
    Sentence sent;
    sent.index = index++;
    sent.start = s.at("start").get<std::size_t>();
    sent.end = s.at("end").get<std::size_t>();
    if (sent.start > sent.end || sent.end > decoded.size())
      throw ParseError("sentence span out of bounds in note " + note.note_id);
    sent.text = std::string(utf8::substr(note.text, decoded, sent.start, sent.end));
    note.sentences.push_back(std::move(sent));
  }
  for (const auto& e : j.at("entities")) {
    Entity entity;
    entity.start = e.at("start").get<std::size_t>();
    entity.end = e.at("end").get<std::size_t>();
    entity.text = e.at("text").get<std::string>();
    entity.entity_type = e.at("type").get<std::string>();
    entity.source = label_source_from(e.at("source").get<std::string>());
    if (entity.start >= entity.end || entity.end > decoded.size())
      throw ParseError("entity span out of bounds in note " + note.note_id);
    if (utf8::substr(note.text, decoded, entity.start, entity.end) != entity.text)
      throw ParseError("entity text does not match note substring in note " + note.note_id);
    note.gold_entities.push_back(std::move(entity));
  }
  return note;
}

inline void save_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus) {
  std::string out;
  for (const Note& note : corpus) out += dump_json(note_to_json(note)) + "\n";
  write_file_atomic(path, out);
}

inline Corpus load_corpus_jsonl(const std::filesystem::path& path) {
  Corpus corpus;
  const auto lines = split_lines(read_file(path));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    json j = json::parse(lines[i], nullptr, false);
    if (j.is_discarded()) throw ParseError("malformed JSON line in " + path.string(), i + 1);
    corpus.push_back(note_from_json(j));
  }
  return corpus;
}

}  // namespace weaklab
