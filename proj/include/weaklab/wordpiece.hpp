#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "weaklab/error.hpp"
#include "weaklab/json_io.hpp"
#include "weaklab/utf8.hpp"

namespace weaklab {

/// One subword piece with its character span in the sentence. Continuation
/// pieces carry the `##` prefix in `text`; the span never includes it.
struct SubwordToken {
  std::string text;
  std::size_t start = 0;
  std::size_t end = 0;
  bool is_continuation = false;

  friend bool operator==(const SubwordToken&, const SubwordToken&) = default;
};

/// Piece inventory for greedy longest-match tokenization. Word-initial pieces
/// are stored as-is; continuation pieces are listed with a `##` prefix in the
/// vocabulary file (one piece per line).
class PieceVocabulary {
public:
  PieceVocabulary() = default;

  explicit PieceVocabulary(const std::vector<std::string>& pieces,
                           std::string unk_symbol = "[UNK]")
      : unk_symbol_(std::move(unk_symbol)) {
    for (const std::string& p : pieces) {
      if (p.empty()) continue;
      if (p.size() > 2 && p[0] == '#' && p[1] == '#')
        continuation_.insert(p.substr(2));
      else
        initial_.insert(p);
    }
  }

  static PieceVocabulary load(const std::filesystem::path& path,
                              std::string unk_symbol = "[UNK]") {
    std::vector<std::string> pieces;
    for (auto& line : split_lines(read_file(path)))
      if (!line.empty()) pieces.push_back(std::move(line));
    if (pieces.empty()) throw ParseError("empty vocabulary file: " + path.string());
    return PieceVocabulary(pieces, std::move(unk_symbol));
  }

  bool empty() const { return initial_.empty() && continuation_.empty(); }
  std::size_t size() const { return initial_.size() + continuation_.size(); }
  const std::string& unk_symbol() const { return unk_symbol_; }

  bool contains(std::string_view piece, bool continuation) const {
    const auto& set = continuation ? continuation_ : initial_;
    return set.find(std::string(piece)) != set.end();
  }

private:
  std::unordered_set<std::string> initial_;
  std::unordered_set<std::string> continuation_;
  std::string unk_symbol_ = "[UNK]";
};

namespace detail {

// Words longer than this become a single unknown piece; keeps the greedy
// matcher linear-ish on degenerate input.
inline constexpr std::size_t max_word_units = 256;

}  // namespace detail

/// Whitespace pre-split, then greedy longest-prefix matching per word.
/// A word with no matching decomposition becomes one unknown piece spanning
/// the whole word. Offsets count scalar values into `text`.
inline std::vector<SubwordToken> tokenize_subwords(std::string_view text,
                                                   const PieceVocabulary& vocab) {
  if (vocab.empty()) throw Error("tokenize_subwords: empty vocabulary");

  const auto decoded = utf8::decode(text);
  const auto& u = decoded.units;
  std::vector<SubwordToken> out;

  std::size_t i = 0;
  while (i < u.size()) {
    while (i < u.size() && detail::is_ascii_space(u[i])) ++i;
    if (i >= u.size()) break;
    std::size_t word_end = i;
    while (word_end < u.size() && !detail::is_ascii_space(u[word_end])) ++word_end;

    const std::size_t word_begin = i;
    const std::size_t word_len = word_end - word_begin;
    std::vector<SubwordToken> pieces;
    bool bad = word_len > detail::max_word_units;
    std::size_t start = word_begin;
    while (!bad && start < word_end) {
      std::size_t end = word_end;
      std::size_t matched = 0;
      while (end > start) {
        const auto candidate = utf8::substr(text, decoded, start, end);
        if (vocab.contains(candidate, start > word_begin)) {
          matched = end;
          break;
        }
        --end;
      }
      if (matched == 0) {
        bad = true;
        break;
      }
      SubwordToken tok;
      tok.is_continuation = start > word_begin;
      tok.text = (tok.is_continuation ? "##" : "") +
                 std::string(utf8::substr(text, decoded, start, matched));
      tok.start = start;
      tok.end = matched;
      pieces.push_back(std::move(tok));
      start = matched;
    }
    if (bad) {
      SubwordToken tok;
      tok.text = vocab.unk_symbol();
      tok.start = word_begin;
      tok.end = word_end;
      tok.is_continuation = false;
      out.push_back(std::move(tok));
    } else {
      out.insert(out.end(), std::make_move_iterator(pieces.begin()),
                 std::make_move_iterator(pieces.end()));
    }
    i = word_end;
  }
  return out;
}

}  // namespace weaklab
