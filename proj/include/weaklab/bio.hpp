#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "weaklab/corpus.hpp"
#include "weaklab/error.hpp"
#include "weaklab/wordpiece.hpp"

namespace weaklab {

/// One tagged, possibly truncated sentence. |tags| == |tokens| and the tag
/// sequence is well-formed (no I-X after O or after a different type).
struct BioExample {
  std::string note_id;
  std::size_t sentence_index = 0;
  std::vector<SubwordToken> tokens;
  std::vector<std::string> tags;
  bool truncated = false;
};

inline bool tags_well_formed(const std::vector<std::string>& tags) {
  std::string prev_type;
  for (const std::string& tag : tags) {
    if (tag == "O") {
      prev_type.clear();
    } else if (tag.size() > 2 && tag[1] == '-' && (tag[0] == 'B' || tag[0] == 'I')) {
      const std::string type = tag.substr(2);
      if (tag[0] == 'I' && type != prev_type) return false;
      prev_type = type;
    } else {
      return false;
    }
  }
  return true;
}

/// Pick one non-overlapping subset for a flat tagging: sort by (start asc,
/// length desc) and greedily keep what fits. Returns kept entities plus the
/// dropped count.
inline std::pair<std::vector<Entity>, std::size_t> resolve_overlaps(
    std::vector<Entity> entities) {
  std::stable_sort(entities.begin(), entities.end(), [](const Entity& a, const Entity& b) {
    if (a.start != b.start) return a.start < b.start;
    return (a.end - a.start) > (b.end - b.start);
  });
  std::vector<Entity> kept;
  std::size_t dropped = 0;
  std::size_t covered_to = 0;
  for (Entity& e : entities) {
    if (kept.empty() || e.start >= covered_to) {
      covered_to = e.end;
      kept.push_back(std::move(e));
    } else {
      ++dropped;
    }
  }
  return {std::move(kept), dropped};
}

struct BioConversion {
  BioExample example;
  std::size_t dropped_overlap = 0;
  std::size_t dropped_truncated = 0;
};

/// Tag tokens against (sentence-relative) entities. A token is inside an
/// entity iff their spans intersect; the first such token gets B-, the rest
/// I-. Sequences longer than `max_tokens` are cut, and entities left without
/// all of their tokens are dropped entirely to avoid dangling tags.
inline BioConversion to_bio(std::string note_id, std::size_t sentence_index,
                            std::vector<SubwordToken> tokens,
                            const std::vector<Entity>& entities, std::size_t max_tokens) {
  BioConversion conv;
  conv.example.note_id = std::move(note_id);
  conv.example.sentence_index = sentence_index;

  auto [kept, dropped] = resolve_overlaps(entities);
  conv.dropped_overlap = dropped;

  std::vector<std::string> tags(tokens.size(), "O");
  struct Placed {
    std::size_t first;
    std::size_t last;  // inclusive token indices
  };
  std::vector<std::pair<Placed, std::string>> placed;
  for (const Entity& e : kept) {
    bool first = true;
    std::size_t first_idx = 0;
    std::size_t last_idx = 0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (tokens[t].start < e.end && tokens[t].end > e.start && tags[t] == "O") {
        tags[t] = (first ? "B-" : "I-") + e.entity_type;
        if (first) first_idx = t;
        last_idx = t;
        first = false;
      }
    }
    if (first) {
      // No token claimed (entity fully over whitespace or shadowed); counted
      // with the overlap drops so entity accounting stays closed.
      conv.dropped_overlap += 1;
    } else {
      placed.push_back({{first_idx, last_idx}, e.entity_type});
    }
  }

  if (tokens.size() > max_tokens) {
    conv.example.truncated = true;
    for (const auto& [span, type] : placed) {
      if (span.last >= max_tokens) {
        for (std::size_t t = span.first; t < std::min(span.last + 1, max_tokens); ++t)
          tags[t] = "O";
        conv.dropped_truncated += 1;
      }
    }
    tokens.resize(max_tokens);
    tags.resize(max_tokens);
  }

  conv.example.tokens = std::move(tokens);
  conv.example.tags = std::move(tags);
  return conv;
}

/// Decode maximal B/I runs back into entities. Orphan I- tags open a new
/// entity (tolerant decoder). When the sentence text is supplied, entity text
/// is read back from it; otherwise text is left empty.
inline std::vector<Entity> from_bio(const BioExample& example,
                                    const std::string* sentence_text = nullptr) {
  std::vector<Entity> out;
  std::string open_type;
  std::size_t open_start = 0;
  std::size_t open_end = 0;
  auto flush = [&]() {
    if (open_type.empty()) return;
    Entity e;
    e.start = open_start;
    e.end = open_end;
    e.entity_type = open_type;
    e.source = LabelSource::weak;
    if (sentence_text) e.text = utf8::substr(*sentence_text, e.start, e.end);
    out.push_back(std::move(e));
    open_type.clear();
  };
  for (std::size_t t = 0; t < example.tags.size(); ++t) {
    const std::string& tag = example.tags[t];
    if (tag == "O") {
      flush();
      continue;
    }
    if (tag.size() <= 2 || tag[1] != '-' || (tag[0] != 'B' && tag[0] != 'I'))
      throw ParseError("malformed BIO tag: '" + tag + "'");
    const std::string type = tag.substr(2);
    const bool continues = tag[0] == 'I' && type == open_type && !open_type.empty();
    if (continues) {
      open_end = example.tokens[t].end;
    } else {
      flush();
      open_type = type;
      open_start = example.tokens[t].start;
      open_end = example.tokens[t].end;
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// CoNLL-style BIO file: one `piece<TAB>start<TAB>end<TAB>tag` per line, blank
// line between sentences, `-DOCSTART- <note_id>` between notes. Offsets are
// note-relative.
// ---------------------------------------------------------------------------

inline constexpr std::string_view docstart_marker = "-DOCSTART-";

inline void append_bio_example(std::string& out, const BioExample& ex) {
  for (std::size_t t = 0; t < ex.tokens.size(); ++t) {
    out += ex.tokens[t].text;
    out += '\t';
    out += std::to_string(ex.tokens[t].start);
    out += '\t';
    out += std::to_string(ex.tokens[t].end);
    out += '\t';
    out += ex.tags[t];
    out += '\n';
  }
  out += '\n';
}

/// Examples grouped by note, notes in the order given. Each note section is
/// preceded by its DOCSTART line.
inline std::string write_bio_file(const std::vector<BioExample>& examples) {
  std::string out;
  std::string current_note;
  bool any = false;
  for (const BioExample& ex : examples) {
    if (!any || ex.note_id != current_note) {
      out += std::string(docstart_marker) + " " + ex.note_id + "\n\n";
      current_note = ex.note_id;
      any = true;
    }
    append_bio_example(out, ex);
  }
  return out;
}

inline std::vector<BioExample> read_bio_file(std::string_view content) {
  std::vector<BioExample> examples;
  std::string current_note;
  std::size_t sentence_index = 0;
  BioExample current;
  bool in_sentence = false;

  auto flush = [&]() {
    if (!in_sentence) return;
    current.note_id = current_note;
    current.sentence_index = sentence_index++;
    examples.push_back(std::move(current));
    current = BioExample{};
    in_sentence = false;
  };

  const auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.empty()) {
      flush();
      continue;
    }
    if (line.rfind(docstart_marker, 0) == 0) {
      flush();
      const auto sp = line.find(' ');
      current_note = sp == std::string::npos ? "" : line.substr(sp + 1);
      sentence_index = 0;
      continue;
    }
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    const auto t3 = t2 == std::string::npos ? std::string::npos : line.find('\t', t2 + 1);
    if (t3 == std::string::npos)
      throw ParseError("expected 'piece<TAB>start<TAB>end<TAB>tag'", i + 1);
    SubwordToken tok;
    tok.text = line.substr(0, t1);
    tok.start = detail::parse_offset(std::string_view(line).substr(t1 + 1, t2 - t1 - 1), i + 1);
    tok.end = detail::parse_offset(std::string_view(line).substr(t2 + 1, t3 - t2 - 1), i + 1);
    tok.is_continuation = tok.text.rfind("##", 0) == 0;
    current.tokens.push_back(std::move(tok));
    current.tags.push_back(line.substr(t3 + 1));
    in_sentence = true;
  }
  flush();
  return examples;
}

}  // namespace weaklab
