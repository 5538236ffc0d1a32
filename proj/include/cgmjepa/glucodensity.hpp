#pragma once

// Glucodensity view: level/speed/acceleration channels from a smoothing
// spline, pairwise 2-D Gaussian KDE images, spatial patch tokens and the
// on-disk precompute cache.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cgmjepa/binio.hpp"
#include "cgmjepa/common.hpp"
#include "cgmjepa/spline.hpp"
#include "cgmjepa/views.hpp"

namespace cgmjepa {

inline constexpr int kGdGrid = 32;
inline constexpr int kGdChannels = 3;
inline constexpr int kGdSpatialPatch = 8;
inline constexpr int kGdTilesPerSide = kGdGrid / kGdSpatialPatch;            // 4
inline constexpr int kGdTokens = kGdTilesPerSide * kGdTilesPerSide;          // 16
inline constexpr int kGdTokenDim = kGdSpatialPatch * kGdSpatialPatch * kGdChannels;  // 192

struct GlucoseChannels {
  std::vector<double> level, speed, accel;  // mg/dL, mg/dL/h, mg/dL/h^2
};

// Spline on t = 5i/60 hours, evaluated at the sample abscissae.
inline GlucoseChannels channels(const DayWindow& window, double lambda = kGlucodensityLambda) {
  const std::size_t n = window.values.size();
  if (n < 2) throw ValidationError("channels: window too short");
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = 5.0 * static_cast<double>(i) / 60.0;
  const SplineFit f = fit_smoothing_spline(t, window.values, lambda);
  GlucoseChannels c;
  c.level.resize(n);
  c.speed.resize(n);
  c.accel.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.level[i] = f.eval(t[i], 0);
    c.speed[i] = f.eval(t[i], 1);
    c.accel[i] = f.eval(t[i], 2);
  }
  return c;
}

// Linear-interpolation percentile (the common "type 7" definition).
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw Error("percentile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

// z[i * gridsize + j] is the density at (x_grid[i], y_grid[j]).
struct KdeGrid {
  int gridsize = kGdGrid;
  std::vector<double> z;
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  bool degenerate = false;

  double x_at(int i) const { return axis(x_min, x_max, i); }
  double y_at(int j) const { return axis(y_min, y_max, j); }
  double axis(double lo, double hi, int i) const {
    return gridsize == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (gridsize - 1);
  }
};

namespace detail {

inline bool zero_spread(double sd, double mean) { return sd <= 1e-9 * std::max(1.0, std::abs(mean)); }

}  // namespace detail

// Unnormalized bivariate Gaussian KDE with Scott's-rule bandwidth on the full
// sample covariance (kernel covariance = cov * n^(-1/3)), on a regular grid
// spanning the 1st-99th percentile range of each axis.
//
// Degenerate inputs: zero spread in one axis falls back to a 1-D Scott KDE of
// the other axis broadcast along the flat one; zero spread in both gives an
// all-ones grid (the whole grid collapses onto the occupied point). Perfectly
// collinear pairs have their correlation shrunk to |rho| = 1 - 1e-9.
inline KdeGrid kde2d_raw(const std::vector<double>& xs, const std::vector<double>& ys,
                         int gridsize = kGdGrid) {
  const std::size_t n = xs.size();
  if (n != ys.size()) throw Error("kde2d: x and y lengths differ");
  if (n < 2) throw Error("kde2d: at least 2 samples required");
  if (gridsize < 1) throw Error("kde2d: gridsize must be positive");
  KdeGrid g;
  g.gridsize = gridsize;
  g.x_min = percentile(xs, 1.0);
  g.x_max = percentile(xs, 99.0);
  g.y_min = percentile(ys, 1.0);
  g.y_max = percentile(ys, 99.0);
  g.z.assign(static_cast<std::size_t>(gridsize) * gridsize, 0.0);

  double mx = 0, my = 0;
  for (std::size_t k = 0; k < n; ++k) {
    mx += xs[k];
    my += ys[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double dx = xs[k] - mx, dy = ys[k] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  sxx /= (n - 1);
  syy /= (n - 1);
  sxy /= (n - 1);
  const bool flat_x = detail::zero_spread(std::sqrt(sxx), mx);
  const bool flat_y = detail::zero_spread(std::sqrt(syy), my);

  if (flat_x && flat_y) {
    g.degenerate = true;
    std::fill(g.z.begin(), g.z.end(), 1.0);
    return g;
  }
  if (flat_x || flat_y) {
    g.degenerate = true;
    const auto& v = flat_x ? ys : xs;
    const double var = (flat_x ? syy : sxx) * std::pow(static_cast<double>(n), -2.0 / 5.0);
    const double norm = 1.0 / (n * std::sqrt(2.0 * std::numbers::pi * var));
    for (int a = 0; a < gridsize; ++a) {
      const double p = flat_x ? g.y_at(a) : g.x_at(a);
      double s = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double d = p - v[k];
        s += std::exp(-0.5 * d * d / var);
      }
      s *= norm;
      for (int b = 0; b < gridsize; ++b) {
        if (flat_x) g.z[static_cast<std::size_t>(b) * gridsize + a] = s;
        else g.z[static_cast<std::size_t>(a) * gridsize + b] = s;
      }
    }
    return g;
  }

  const double rho_max = 1.0 - 1e-9;
  const double lim = rho_max * std::sqrt(sxx * syy);
  if (std::abs(sxy) > lim) sxy = std::copysign(lim, sxy);
  const double f2 = std::pow(static_cast<double>(n), -1.0 / 3.0);
  const double cxx = sxx * f2, cyy = syy * f2, cxy = sxy * f2;
  const double det = cxx * cyy - cxy * cxy;
  const double ixx = cyy / det, iyy = cxx / det, ixy = -cxy / det;
  const double norm = 1.0 / (n * 2.0 * std::numbers::pi * std::sqrt(det));
  for (int i = 0; i < gridsize; ++i) {
    const double px = g.x_at(i);
    for (int j = 0; j < gridsize; ++j) {
      const double py = g.y_at(j);
      double s = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double dx = px - xs[k], dy = py - ys[k];
        s += std::exp(-0.5 * (ixx * dx * dx + 2.0 * ixy * dx * dy + iyy * dy * dy));
      }
      g.z[static_cast<std::size_t>(i) * gridsize + j] = s * norm;
    }
  }
  return g;
}

// kde2d_raw divided by its own maximum.
inline KdeGrid kde2d(const std::vector<double>& xs, const std::vector<double>& ys,
                     int gridsize = kGdGrid) {
  KdeGrid g = kde2d_raw(xs, ys, gridsize);
  const double mx = *std::max_element(g.z.begin(), g.z.end());
  if (mx > 0)
    for (double& v : g.z) v /= mx;
  return g;
}

// 32 x 32 x 3, element (i, j, c) at (i * 32 + j) * 3 + c. Channels are the
// KDE images of (G, G'), (G, G''), (G', G'') in that order.
struct GlucodensityImage {
  std::vector<double> data = std::vector<double>(kGdGrid * kGdGrid * kGdChannels, 0.0);
  std::array<std::array<double, 4>, kGdChannels> ranges{};  // x_min, x_max, y_min, y_max
  std::array<bool, kGdChannels> degenerate{};

  double& at(int i, int j, int c) { return data[(static_cast<std::size_t>(i) * kGdGrid + j) * kGdChannels + c]; }
  double at(int i, int j, int c) const {
    return data[(static_cast<std::size_t>(i) * kGdGrid + j) * kGdChannels + c];
  }
};

inline GlucodensityImage image_from_channels(const GlucoseChannels& ch) {
  GlucodensityImage img;
  const std::array<std::pair<const std::vector<double>*, const std::vector<double>*>, 3> pairs = {{
      {&ch.level, &ch.speed},
      {&ch.level, &ch.accel},
      {&ch.speed, &ch.accel},
  }};
  for (int c = 0; c < kGdChannels; ++c) {
    const KdeGrid g = kde2d(*pairs[c].first, *pairs[c].second, kGdGrid);
    for (int i = 0; i < kGdGrid; ++i)
      for (int j = 0; j < kGdGrid; ++j) img.at(i, j, c) = g.z[static_cast<std::size_t>(i) * kGdGrid + j];
    img.ranges[c] = {g.x_min, g.x_max, g.y_min, g.y_max};
    img.degenerate[c] = g.degenerate;
  }
  return img;
}

inline GlucodensityImage build_image(const DayWindow& window) { return image_from_channels(channels(window)); }

// 16 x 192 row-major. Token t = tile_row * 4 + tile_col; inside a token the
// element (r, c, ch) of the 8 x 8 x 3 tile sits at (r * 8 + c) * 3 + ch.
struct GlucoTokens {
  int rows = kGdTokens;
  int cols = kGdTokenDim;
  std::vector<double> data = std::vector<double>(kGdTokens * kGdTokenDim, 0.0);

  double at(int t, int k) const { return data[static_cast<std::size_t>(t) * cols + k]; }
};

inline GlucoTokens patchify_image(const GlucodensityImage& img) {
  GlucoTokens tok;
  for (int tr = 0; tr < kGdTilesPerSide; ++tr)
    for (int tc = 0; tc < kGdTilesPerSide; ++tc) {
      const int t = tr * kGdTilesPerSide + tc;
      for (int r = 0; r < kGdSpatialPatch; ++r)
        for (int c = 0; c < kGdSpatialPatch; ++c)
          for (int ch = 0; ch < kGdChannels; ++ch)
            tok.data[static_cast<std::size_t>(t) * kGdTokenDim + (r * kGdSpatialPatch + c) * kGdChannels + ch] =
                img.at(tr * kGdSpatialPatch + r, tc * kGdSpatialPatch + c, ch);
    }
  return tok;
}

inline GlucodensityImage unpatchify_image(const GlucoTokens& tok) {
  if (tok.rows != kGdTokens || tok.cols != kGdTokenDim) throw ValidationError("unpatchify: bad token shape");
  GlucodensityImage img;
  for (int tr = 0; tr < kGdTilesPerSide; ++tr)
    for (int tc = 0; tc < kGdTilesPerSide; ++tc) {
      const int t = tr * kGdTilesPerSide + tc;
      for (int r = 0; r < kGdSpatialPatch; ++r)
        for (int c = 0; c < kGdSpatialPatch; ++c)
          for (int ch = 0; ch < kGdChannels; ++ch)
            img.at(tr * kGdSpatialPatch + r, tc * kGdSpatialPatch + c, ch) =
                tok.data[static_cast<std::size_t>(t) * kGdTokenDim + (r * kGdSpatialPatch + c) * kGdChannels + ch];
    }
  return img;
}

// ---------------------------------------------------------------------------
// Precompute cache
//
// File layout (all integers little-endian):
//   magic "CGMJGDC\0" | u32 version | u32 gridsize | u32 spatial_patch |
//   u32 patch_size | u32 window | u64 entry_count |
//   entry_count x { u32 key_len | key bytes (UTF-8 subject_id) | i32 split_idx |
//                   u32 rows | u32 cols | rows*cols float32 }
// Entries are written in (subject_id, split_idx) order.

struct GdFingerprint {
  std::uint32_t gridsize = kGdGrid;
  std::uint32_t spatial_patch = kGdSpatialPatch;
  std::uint32_t patch_size = kPatchSize;
  std::uint32_t window = kWindowLength;
  bool operator==(const GdFingerprint&) const = default;
};

class GdCache {
 public:
  static constexpr char kMagic[8] = {'C', 'G', 'M', 'J', 'G', 'D', 'C', '\0'};
  static constexpr std::uint32_t kFormatVersion = 1;

  using Key = std::pair<std::string, int>;

  GdCache() = default;
  explicit GdCache(std::string path, GdFingerprint fp = {}) : path_(std::move(path)), fp_(fp) {}

  // Loads path if it exists; a fingerprint or version mismatch is a StaleCacheError.
  static GdCache open(const std::string& path, GdFingerprint expected = {}) {
    GdCache c(path, expected);
    if (!std::filesystem::exists(path)) return c;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open cache " + path);
    c.read(is, expected);
    return c;
  }

  const std::string& path() const { return path_; }
  const GdFingerprint& fingerprint() const { return fp_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& subject, int split_idx) const {
    return entries_.count({subject, split_idx}) > 0;
  }
  const GlucoTokens& get(const std::string& subject, int split_idx) const {
    auto it = entries_.find({subject, split_idx});
    if (it == entries_.end())
      throw Error("glucodensity cache has no entry for (" + subject + ", " + std::to_string(split_idx) +
                  "); run precompute-gd");
    return it->second;
  }
  const GlucoTokens* find(const std::string& subject, int split_idx) const {
    auto it = entries_.find({subject, split_idx});
    return it == entries_.end() ? nullptr : &it->second;
  }
  // Stored values are rounded to float32, matching the on-disk payload.
  void put(const std::string& subject, int split_idx, GlucoTokens tok) {
    for (double& v : tok.data) v = static_cast<double>(static_cast<float>(v));
    entries_[{subject, split_idx}] = std::move(tok);
  }
  const std::map<Key, GlucoTokens>& entries() const { return entries_; }

  void write(std::ostream& os) const {
    os.write(kMagic, 8);
    binio::put_u32(os, kFormatVersion);
    binio::put_u32(os, fp_.gridsize);
    binio::put_u32(os, fp_.spatial_patch);
    binio::put_u32(os, fp_.patch_size);
    binio::put_u32(os, fp_.window);
    binio::put_u64(os, entries_.size());
    for (const auto& [key, tok] : entries_) {
      binio::put_str(os, key.first);
      binio::put_i32(os, key.second);
      binio::put_u32(os, static_cast<std::uint32_t>(tok.rows));
      binio::put_u32(os, static_cast<std::uint32_t>(tok.cols));
      for (double v : tok.data) binio::put_f32(os, static_cast<float>(v));
    }
  }

  void save() const {
    if (path_.empty()) throw Error("cache has no path");
    binio::write_atomically(path_, [&](std::ostream& os) { write(os); });
  }

  void read(std::istream& is, const GdFingerprint& expected) {
    char magic[8];
    binio::read_exact(is, magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw StaleCacheError("not a glucodensity cache: " + path_);
    const std::uint32_t version = binio::get_u32(is);
    if (version != kFormatVersion)
      throw StaleCacheError("glucodensity cache version " + std::to_string(version) + " != " +
                            std::to_string(kFormatVersion) + "; delete and rerun precompute-gd");
    GdFingerprint fp;
    fp.gridsize = binio::get_u32(is);
    fp.spatial_patch = binio::get_u32(is);
    fp.patch_size = binio::get_u32(is);
    fp.window = binio::get_u32(is);
    if (!(fp == expected))
      throw StaleCacheError("stale glucodensity cache " + path_ + ": fingerprint (grid " +
                            std::to_string(fp.gridsize) + ", spatial " + std::to_string(fp.spatial_patch) +
                            ", patch " + std::to_string(fp.patch_size) + ", window " +
                            std::to_string(fp.window) + ") does not match current config");
    fp_ = fp;
    const std::uint64_t count = binio::get_u64(is);
    entries_.clear();
    for (std::uint64_t e = 0; e < count; ++e) {
      std::string subject = binio::get_str(is);
      const int split = binio::get_i32(is);
      GlucoTokens tok;
      tok.rows = static_cast<int>(binio::get_u32(is));
      tok.cols = static_cast<int>(binio::get_u32(is));
      if (tok.rows <= 0 || tok.cols <= 0 || tok.rows > 4096 || tok.cols > 4096)
        throw Error("corrupt cache entry shape");
      tok.data.resize(static_cast<std::size_t>(tok.rows) * tok.cols);
      for (double& v : tok.data) v = binio::get_f32(is);
      entries_[{std::move(subject), split}] = std::move(tok);
    }
  }

 private:
  std::string path_;
  GdFingerprint fp_;
  std::map<Key, GlucoTokens> entries_;
};

struct PrecomputeStats {
  std::size_t computed = 0;
  std::size_t reused = 0;
};

// Computes every missing (subject_id, split_idx) entry with a parallel map over
// windows, then writes the cache file from a single thread.
inline PrecomputeStats precompute_cache(const std::vector<DayWindow>& corpus, GdCache& cache,
                                        int workers = 8, bool save = true) {
  std::vector<std::size_t> todo;
  PrecomputeStats st;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (cache.contains(corpus[i].subject_id, corpus[i].split_idx)) ++st.reused;
    else todo.push_back(i);
  }
  std::vector<GlucoTokens> results(todo.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++)
      results[k] = patchify_image(build_image(corpus[todo[k]]));
  };
  const int nthreads = std::max(1, std::min<int>(workers, static_cast<int>(todo.size())));
  if (nthreads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  for (std::size_t k = 0; k < todo.size(); ++k)
    cache.put(corpus[todo[k]].subject_id, corpus[todo[k]].split_idx, std::move(results[k]));
  st.computed = todo.size();
  if (save && (st.computed > 0 || !std::filesystem::exists(cache.path()))) cache.save();
  return st;
}

}  // namespace cgmjepa
