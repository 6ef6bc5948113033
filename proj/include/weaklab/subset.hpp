#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "weaklab/corpus.hpp"
#include "weaklab/json_io.hpp"
#include "weaklab/stats.hpp"

namespace weaklab {

/// Subset sizes exercised by the benchmark protocol. Arbitrary sizes are
/// accepted as well.
inline constexpr std::array<std::size_t, 4> preset_subset_sizes{3, 5, 10, 50};

/// The representative gold subset and the remaining weak split.
struct SubsetSelection {
  std::size_t n_s = 0;                 // requested size
  std::vector<std::string> gold_ids;   // selection (ranking) order
  std::vector<std::string> weak_ids;   // ascending note_id
  double median_entities = 0;
  bool truncated = false;              // n_s exceeded the corpus size
};

/// Median of per-note gold entity counts; even count -> mean of middle two.
inline double entity_count_median(const Corpus& corpus) {
  if (corpus.empty()) throw Error("entity_count_median: empty corpus");
  std::vector<double> counts;
  counts.reserve(corpus.size());
  for (const Note& note : corpus)
    counts.push_back(static_cast<double>(note.gold_entities.size()));
  std::sort(counts.begin(), counts.end());
  return quantile_linear(counts, 0.5);
}

/// Rank notes by |entity count - median| ascending, note_id ascending, and
/// take the first n_s as the gold subset. The id tie-break makes the
/// selection independent of corpus input order.
inline SubsetSelection select_gold_subset(const Corpus& corpus, std::size_t n_s) {
  if (n_s < 1) throw Error("select_gold_subset: n_s must be >= 1");
  if (corpus.empty()) throw Error("select_gold_subset: empty corpus");

  SubsetSelection sel;
  sel.n_s = n_s;
  sel.median_entities = entity_count_median(corpus);

  struct Ranked {
    double delta;
    std::string note_id;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(corpus.size());
  for (const Note& note : corpus)
    ranked.push_back({std::abs(static_cast<double>(note.gold_entities.size()) -
                               sel.median_entities),
                      note.note_id});
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    return std::tie(a.delta, a.note_id) < std::tie(b.delta, b.note_id);
  });

  const std::size_t take = std::min(n_s, ranked.size());
  sel.truncated = n_s > ranked.size();
  for (std::size_t i = 0; i < take; ++i) sel.gold_ids.push_back(ranked[i].note_id);
  for (std::size_t i = take; i < ranked.size(); ++i) sel.weak_ids.push_back(ranked[i].note_id);
  std::sort(sel.weak_ids.begin(), sel.weak_ids.end());
  return sel;
}

inline json selection_to_json(const SubsetSelection& sel) {
  return json{{"n_s", sel.n_s},
              {"median", sel.median_entities},
              {"gold_ids", sel.gold_ids},
              {"weak_ids", sel.weak_ids},
              {"truncated", sel.truncated}};
}

inline SubsetSelection selection_from_json(const json& j) {
  SubsetSelection sel;
  sel.n_s = j.at("n_s").get<std::size_t>();
  sel.median_entities = j.at("median").get<double>();
  sel.gold_ids = j.at("gold_ids").get<std::vector<std::string>>();
  sel.weak_ids = j.at("weak_ids").get<std::vector<std::string>>();
  sel.truncated = j.value("truncated", false);
  return sel;
}

inline void save_selection(const std::filesystem::path& path, const SubsetSelection& sel) {
  write_file_atomic(path, dump_json(selection_to_json(sel)) + "\n");
}

inline SubsetSelection load_selection(const std::filesystem::path& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw ParseError("malformed selection manifest: " + path.string());
  return selection_from_json(j);
}

}  // namespace weaklab
