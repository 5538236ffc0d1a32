#pragma once

// Model-ready views: day windows, hourly patch tokens, OGTT patchification and
// context/target patch masks.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cgmjepa/common.hpp"
#include "cgmjepa/data.hpp"
#include "cgmjepa/rng.hpp"

namespace cgmjepa {

inline constexpr int kWindowLength = 288;
inline constexpr int kPatchSize = 12;
inline constexpr int kPatchesPerDay = kWindowLength / kPatchSize;  // 24
inline constexpr int kOgttPaddedLength = 48;
inline constexpr int kOgttPatches = kOgttPaddedLength / kPatchSize;  // 4

struct DayWindow {
  std::string subject_id;
  int split_idx = 0;
  std::vector<double> values;  // 288 samples, mg/dL
};

// P x 12, row-major; token j holds samples [12j, 12j + 12).
struct PatchTokens {
  int patches = 0;
  std::vector<double> data;

  double at(int p, int k) const { return data[static_cast<std::size_t>(p) * kPatchSize + k]; }
  std::vector<double> concatenate() const { return data; }
};

struct MaskSpec {
  std::vector<int> masked;  // sorted, unique
  double ratio = 0.0;
  int patches = 0;
};

// Windows of 288 consecutive samples starting at multiples of stride; the
// trailing remainder is dropped. Samples are taken in order (5-min cadence assumed).
inline std::vector<DayWindow> window_days(const GlucoseSeries& series, int stride = kWindowLength) {
  if (stride != 288 && stride != 144) throw ValidationError("window_days: stride must be 288 or 144");
  std::vector<DayWindow> out;
  const int n = static_cast<int>(series.samples.size());
  int idx = 0;
  for (int start = 0; start + kWindowLength <= n; start += stride) {
    DayWindow w{series.subject_id, idx++, {}};
    w.values.reserve(kWindowLength);
    for (int k = 0; k < kWindowLength; ++k) w.values.push_back(series.samples[start + k].glucose);
    out.push_back(std::move(w));
  }
  return out;
}

inline PatchTokens tokenize_values(const std::vector<double>& values) {
  if (values.empty() || values.size() % kPatchSize != 0)
    throw ValidationError("tokenize: length must be a positive multiple of 12");
  for (double v : values)
    if (!std::isfinite(v)) throw ValidationError("tokenize: non-finite value");
  return PatchTokens{static_cast<int>(values.size() / kPatchSize), values};
}

inline PatchTokens tokenize(const DayWindow& window) {
  if (window.values.size() != static_cast<std::size_t>(kWindowLength))
    throw ValidationError("tokenize: day window must have 288 samples");
  return tokenize_values(window.values);
}

// Pads a smoothed 39-slot trace to 48 by repeating the t=180 value and cuts 4
// patches covering t in [-10,45], [50,105], [110,165], [170,225].
inline PatchTokens patchify_ogtt(const AlignedTrace& trace) {
  std::vector<double> v(trace.values.begin(), trace.values.end());
  for (double x : v)
    if (!std::isfinite(x)) throw ValidationError("patchify_ogtt: non-finite value");
  v.resize(kOgttPaddedLength, v.back());
  return PatchTokens{kOgttPatches, std::move(v)};
}

// max(1, round-half-up(ratio * P))
inline int mask_count(int patches, double ratio) {
  const int k = static_cast<int>(std::floor(ratio * patches + 0.5));
  return std::max(1, k);
}

inline MaskSpec sample_mask(int patches, double ratio, SplitMix64& rng) {
  if (!(ratio > 0 && ratio < 1)) throw ValidationError("sample_mask: ratio must be in (0,1)");
  if (patches < 2) throw ValidationError("sample_mask: need at least 2 patches");
  const int k = mask_count(patches, ratio);
  if (k >= patches) throw ValidationError("sample_mask: mask would cover every patch");
  // Partial Fisher-Yates: first k positions form a uniform k-subset.
  std::vector<int> idx(patches);
  for (int i = 0; i < patches; ++i) idx[i] = i;
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(patches - i)));
    std::swap(idx[i], idx[j]);
  }
  MaskSpec m{{idx.begin(), idx.begin() + k}, ratio, patches};
  std::sort(m.masked.begin(), m.masked.end());
  return m;
}

struct ContextSplit {
  PatchTokens context;            // visible tokens in original order
  std::vector<int> context_index;  // their original positions
  std::vector<int> target_index;   // masked positions
};

inline ContextSplit split_context(const PatchTokens& tokens, const MaskSpec& mask) {
  if (mask.patches != tokens.patches) throw ValidationError("split_context: mask/token size mismatch");
  ContextSplit s;
  s.target_index = mask.masked;
  std::vector<bool> is_masked(tokens.patches, false);
  for (int j : mask.masked) {
    if (j < 0 || j >= tokens.patches) throw ValidationError("split_context: mask index out of range");
    is_masked[j] = true;
  }
  s.context.patches = 0;
  for (int p = 0; p < tokens.patches; ++p) {
    if (is_masked[p]) continue;
    s.context_index.push_back(p);
    s.context.data.insert(s.context.data.end(), tokens.data.begin() + p * kPatchSize,
                          tokens.data.begin() + (p + 1) * kPatchSize);
    ++s.context.patches;
  }
  return s;
}

}  // namespace cgmjepa
