#pragma once

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "weaklab/corpus.hpp"
#include "weaklab/error.hpp"

namespace weaklab {

struct DistStats {
  double median = 0;
  double q1 = 0;
  double q3 = 0;
  double mean = 0;
  double sd = 0;
};

/// Corpus-level entity statistics in the shape of the weak-label summary
/// table: one distribution over sentences, one over notes, plus the
/// failed-sentence percentage when the labels came out of post-processing.
struct EntityStats {
  std::size_t note_count = 0;
  std::size_t sentence_count = 0;
  std::size_t total_entities = 0;
  DistStats per_sentence;
  DistStats per_note;
  double failed_sentence_pct = 0;
  std::size_t boundary_crossing = 0;
};

/// Quantile by linear interpolation between order statistics (the chosen
/// convention; the benchmark tables do not state theirs). `sorted` ascending.
inline double quantile_linear(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw Error("quantile of empty sample");
  if (sorted.size() == 1) return sorted[0];
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Median / quartiles / mean / population standard deviation of `values`.
inline DistStats dist_stats(std::vector<double> values) {
  if (values.empty()) throw Error("statistics of empty sample");
  DistStats out;
  std::sort(values.begin(), values.end());
  out.q1 = quantile_linear(values, 0.25);
  out.median = quantile_linear(values, 0.5);
  out.q3 = quantile_linear(values, 0.75);
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) /
             static_cast<double>(values.size());
  double ss = 0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(values.size()));
  return out;
}

/// Statistics over gold entities. Requires a segmented corpus.
inline EntityStats corpus_stats(const Corpus& corpus) {
  if (corpus.empty()) throw Error("corpus_stats: empty corpus");
  EntityStats stats;
  std::vector<double> per_sentence;
  std::vector<double> per_note;
  for (const Note& note : corpus) {
    if (note.sentences.empty() && !note.text.empty())
      throw Error("corpus_stats: note " + note.note_id + " is not segmented");
    stats.note_count += 1;
    stats.sentence_count += note.sentences.size();
    stats.total_entities += note.gold_entities.size();
    stats.boundary_crossing += boundary_crossing_count(note);
    per_note.push_back(static_cast<double>(note.gold_entities.size()));
    for (const Sentence& s : note.sentences) {
      std::size_t k = 0;
      for (const Entity& e : note.gold_entities)
        if (e.start >= s.start && e.end <= s.end) ++k;
      per_sentence.push_back(static_cast<double>(k));
    }
  }
  if (!per_sentence.empty()) stats.per_sentence = dist_stats(std::move(per_sentence));
  stats.per_note = dist_stats(std::move(per_note));
  return stats;
}

namespace detail {

/// Trim trailing zeros: 3 -> "3", 2.5 -> "2.5", 3.14159 -> "3.14" at 2 places.
inline std::string fmt_trim(double v, int max_decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", max_decimals, v);
  std::string s = buf;
  if (s.find('.') != std::string::npos) {
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
  }
  return s;
}

inline std::string fmt_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

}  // namespace detail

inline std::string median_iqr_string(const DistStats& d) {
  using detail::fmt_trim;
  return fmt_trim(d.median, 1) + " [" + fmt_trim(d.q1, 1) + ", " + fmt_trim(d.q3, 1) + "]";
}

inline std::string mean_sd_string(const DistStats& d) {
  using detail::fmt_fixed;
  return fmt_fixed(d.mean, 2) + " (" + fmt_fixed(d.sd, 2) + ")";
}

/// CSV mirroring the weak-label summary table rows. Results never come from
/// the restricted benchmark corpora, so every report is labeled with the data
/// source it actually covers.
inline void write_stats_csv(std::ostream& out, const EntityStats& s,
                            const std::string& data_label = "non-paper data") {
  using detail::csv_quote;
  using detail::fmt_trim;
  out << "metric,value\n";
  out << "Data source," << csv_quote(data_label) << "\n";
  out << "Notes," << s.note_count << "\n";
  out << "Sentences," << s.sentence_count << "\n";
  out << "Total entities," << s.total_entities << "\n";
  out << csv_quote("Entities per sentence, median [Q1, Q3]") << ","
      << csv_quote(median_iqr_string(s.per_sentence)) << "\n";
  out << csv_quote("Entities per sentence, mean (Std Dev)") << ","
      << csv_quote(mean_sd_string(s.per_sentence)) << "\n";
  out << csv_quote("Entities per note, median [Q1, Q3]") << ","
      << csv_quote(median_iqr_string(s.per_note)) << "\n";
  out << csv_quote("Entities per note, mean (Std Dev)") << ","
      << csv_quote(mean_sd_string(s.per_note)) << "\n";
  out << csv_quote("Post-processing failed, sentences (%)") << ","
      << fmt_trim(s.failed_sentence_pct, 2) << "\n";
  out << "Entities crossing sentence boundaries," << s.boundary_crossing << "\n";
}

}  // namespace weaklab
