#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "weaklab/error.hpp"
#include "weaklab/json_io.hpp"

namespace weaklab {

/// Per-sentence decoder inference cost:
/// n_tokens_out * (2 * total_params + 2 * n_layer * n_ctx * d_attn).
/// The context length is taken from the prompt template length in tokens.
struct DecoderCostSpec {
  std::uint64_t total_params = 0;
  std::uint64_t n_layer = 0;
  std::uint64_t n_ctx = 0;
  std::uint64_t d_attn = 0;
  std::uint64_t n_tokens_out = 0;
};

/// Llama2-13B preset with the 400-token prompt context and 128-token cap.
inline DecoderCostSpec llama2_13b_cost_spec() {
  return DecoderCostSpec{13015864320ull, 40, 400, 4096, 128};
}

/// Measured encoder (BERT-style) cost per input sentence, FLOPs. Comes from a
/// profiler rather than a closed form, so it is a supplied constant.
inline constexpr double encoder_flops_per_sentence_preset = 4.4e10;

/// Exact integer evaluation; 128-bit so huge parameter counts cannot wrap.
inline unsigned __int128 decoder_flops(const DecoderCostSpec& spec) {
  using u128 = unsigned __int128;
  const u128 forward = 2 * static_cast<u128>(spec.total_params) +
                       2 * static_cast<u128>(spec.n_layer) * static_cast<u128>(spec.n_ctx) *
                           static_cast<u128>(spec.d_attn);
  return static_cast<u128>(spec.n_tokens_out) * forward;
}

inline std::string u128_to_string(unsigned __int128 v) {
  if (v == 0) return "0";
  std::string out;
  while (v > 0) {
    out.insert(out.begin(), static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  return out;
}

inline double u128_to_double(unsigned __int128 v) { return static_cast<double>(v); }

// ---------------------------------------------------------------------------
// GPU-time projection: ordinary least squares over (note count, seconds)
// samples, extrapolated to a target corpus size.
// ---------------------------------------------------------------------------

struct CostSample {
  std::uint64_t note_count = 0;
  double gpu_seconds = 0;
};

struct LinearFit {
  double intercept = 0;
  double slope = 0;
  double r_squared = 0;
};

/// OLS minimizing squared residuals. Requires two samples with distinct note
/// counts. A perfect fit over constant y reports r_squared = 1.
inline LinearFit fit_linear(const std::vector<CostSample>& samples) {
  if (samples.size() < 2) throw Error("fit_linear: need at least 2 samples");
  long double sx = 0, sy = 0;
  const auto n = static_cast<long double>(samples.size());
  for (const CostSample& s : samples) {
    sx += static_cast<long double>(s.note_count);
    sy += s.gpu_seconds;
  }
  const long double mx = sx / n;
  const long double my = sy / n;
  long double sxx = 0, sxy = 0, syy = 0;
  for (const CostSample& s : samples) {
    const long double dx = static_cast<long double>(s.note_count) - mx;
    const long double dy = static_cast<long double>(s.gpu_seconds) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0) throw Error("fit_linear: all samples share one note count (degenerate)");
  LinearFit fit;
  fit.slope = static_cast<double>(sxy / sxx);
  fit.intercept = static_cast<double>(my - (sxy / sxx) * mx);
  if (syy == 0) {
    fit.r_squared = 1.0;
  } else {
    long double ss_res = 0;
    for (const CostSample& s : samples) {
      const long double r = s.gpu_seconds -
                            (fit.intercept + fit.slope * static_cast<long double>(s.note_count));
      ss_res += r * r;
    }
    fit.r_squared = static_cast<double>(1.0L - ss_res / syy);
  }
  return fit;
}

/// "727 days" above a day, "16 h 34 m" above an hour, then "M m S s" / "S s".
inline std::string format_duration(double seconds) {
  if (seconds < 0) seconds = 0;
  if (seconds >= 86400.0) {
    const auto days = static_cast<long long>(std::llround(seconds / 86400.0));
    return std::to_string(days) + (days == 1 ? " day" : " days");
  }
  if (seconds >= 3600.0) {
    auto hours = static_cast<long long>(seconds / 3600.0);
    auto minutes = static_cast<long long>(std::llround((seconds - 3600.0 * hours) / 60.0));
    if (minutes == 60) {
      hours += 1;
      minutes = 0;
    }
    return std::to_string(hours) + " h " + std::to_string(minutes) + " m";
  }
  if (seconds >= 60.0) {
    const auto minutes = static_cast<long long>(seconds / 60.0);
    const auto secs = static_cast<long long>(std::llround(seconds - 60.0 * minutes));
    return std::to_string(minutes) + " m " + std::to_string(secs) + " s";
  }
  return std::to_string(static_cast<long long>(std::llround(seconds))) + " s";
}

struct Projection {
  std::uint64_t notes = 0;
  double seconds = 0;
  std::string human;
  bool clamped = false;  // projection went negative and was clamped to zero
};

inline Projection project_gpu_time(const LinearFit& fit, std::uint64_t target_notes) {
  Projection p;
  p.notes = target_notes;
  p.seconds = fit.intercept + fit.slope * static_cast<double>(target_notes);
  if (p.seconds < 0) {
    p.seconds = 0;
    p.clamped = true;
  }
  p.human = format_duration(p.seconds);
  return p;
}

/// Cumulative samples over per-note durations: for each k in `note_counts`,
/// the summed seconds of the first k notes. Notes without a latency are
/// excluded and counted in `skipped`.
struct LatencySamples {
  std::vector<CostSample> samples;
  std::size_t skipped = 0;
};

inline LatencySamples collect_latency_samples(
    const std::vector<std::pair<bool, double>>& per_note_latency,  // (have latency, seconds)
    std::vector<std::uint64_t> note_counts) {
  LatencySamples out;
  std::vector<double> usable;
  for (const auto& [have, seconds] : per_note_latency) {
    if (have)
      usable.push_back(seconds);
    else
      out.skipped += 1;
  }
  std::sort(note_counts.begin(), note_counts.end());
  std::vector<double> prefix(usable.size() + 1, 0.0);
  for (std::size_t i = 0; i < usable.size(); ++i) prefix[i + 1] = prefix[i] + usable[i];
  for (const std::uint64_t k : note_counts) {
    if (k == 0 || k > usable.size()) continue;
    out.samples.push_back({k, prefix[k]});
  }
  return out;
}

/// Evenly spaced prefix sizes over the available notes, mirroring the
/// 50-to-500 sampling protocol at whatever scale the corpus allows.
inline std::vector<std::uint64_t> default_sample_counts(std::size_t available,
                                                        std::size_t points = 10) {
  std::vector<std::uint64_t> counts;
  if (available == 0) return counts;
  for (std::size_t i = 1; i <= points; ++i) {
    const auto k = static_cast<std::uint64_t>(
        std::llround(static_cast<double>(i) * static_cast<double>(available) /
                     static_cast<double>(points)));
    if (k >= 1 && (counts.empty() || counts.back() != k)) counts.push_back(k);
  }
  return counts;
}

inline json cost_report_json(const DecoderCostSpec& spec, double encoder_flops,
                             const std::vector<CostSample>& samples, const LinearFit* fit,
                             const Projection* projection) {
  json jsamples = json::array();
  for (const CostSample& s : samples)
    jsamples.push_back({{"notes", s.note_count}, {"gpu_seconds", s.gpu_seconds}});
  json out{{"flops_per_sentence", u128_to_double(decoder_flops(spec))},
           {"flops_per_sentence_exact", u128_to_string(decoder_flops(spec))},
           {"encoder_flops_per_sentence", encoder_flops},
           {"spec",
            {{"total_params", spec.total_params},
             {"n_layer", spec.n_layer},
             {"n_ctx", spec.n_ctx},
             {"d_attn", spec.d_attn},
             {"n_tokens_out", spec.n_tokens_out}}},
           {"samples", jsamples},
           {"data_label", "non-paper data"}};
  if (fit)
    out["fit"] = {{"intercept", fit->intercept}, {"slope", fit->slope}, {"r2", fit->r_squared}};
  else
    out["fit"] = nullptr;
  if (projection)
    out["projection"] = {{"notes", projection->notes},
                         {"seconds", projection->seconds},
                         {"human", projection->human},
                         {"clamped", projection->clamped}};
  else
    out["projection"] = nullptr;
  return out;
}

}  // namespace weaklab
