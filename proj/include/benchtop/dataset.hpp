#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "benchtop/common.hpp"
#include "benchtop/image.hpp"

namespace benchtop {

constexpr int kActionDim = 14;
constexpr int kCameras = 3;
constexpr int kEpisodeFormatVersion = 1;

enum class TaskId { Clean, Arrange, Pour };

inline std::string task_name(TaskId t) {
  switch (t) {
    case TaskId::Clean: return "Clean";
    case TaskId::Arrange: return "Arrange";
    case TaskId::Pour: return "Pour";
  }
  return "?";
}

inline TaskId task_from_name(const std::string& s) {
  if (s == "Clean") return TaskId::Clean;
  if (s == "Arrange") return TaskId::Arrange;
  if (s == "Pour") return TaskId::Pour;
  fail("unknown task id: " + s);
}

/// One demonstration episode: raw 14-dim actions plus per-step camera frames.
struct EpisodeRecord {
  TaskId task_id = TaskId::Arrange;
  std::string prompt_text;
  double rate_hz = 50.0;
  Mat actions;                            // T x 14, raw motor units
  std::vector<std::array<Image, 3>> frames;  // T steps x 3 cameras

  int steps() const { return int(actions.rows()); }

  void validate() const {
    require(actions.rows() >= 1, "invalid episode: T < 1");
    require(actions.cols() == kActionDim, "invalid episode: action dim");
    require(actions.allFinite(), "invalid episode");
    require(int(frames.size()) == steps(), "invalid episode: frame count");
    require(rate_hz > 0, "invalid episode: rate");
    int h = frames[0][0].height, w = frames[0][0].width;
    for (const auto& f : frames)
      for (const auto& im : f)
        require(im.height == h && im.width == w, "invalid episode: frame shape");
  }
};

struct NormalizationStats {
  Vec lo = Vec::Zero(kActionDim);
  Vec hi = Vec::Zero(kActionDim);
  double q_lo = 0.01;
  double q_hi = 0.99;
};

/// Model input: W+1 frames per camera plus tokenized prompt.
struct ObservationWindow {
  std::vector<std::array<Image, 3>> frames;  // W+1 entries, oldest first
  std::vector<int> prompt_ids;
};

struct TrainingItem {
  ObservationWindow window;
  Mat chunk;  // H x 14, normalized to [-1,1]
  int anchor_step = 0;
};

// Quantile with linear interpolation between order statistics.
inline double interpolated_quantile(std::vector<double> v, double q) {
  require(!v.empty(), "no data");
  std::sort(v.begin(), v.end());
  double pos = q * double(v.size() - 1);
  size_t i = size_t(pos);
  if (i + 1 >= v.size()) return v.back();
  double frac = pos - double(i);
  return v[i] * (1.0 - frac) + v[i + 1] * frac;
}

inline NormalizationStats compute_norm_stats(const std::vector<EpisodeRecord>& episodes,
                                             double q_lo = 0.01, double q_hi = 0.99) {
  require(!episodes.empty(), "no data");
  require(0.0 <= q_lo && q_lo < q_hi && q_hi <= 1.0, "bad quantile fractions");
  NormalizationStats st;
  st.q_lo = q_lo;
  st.q_hi = q_hi;
  for (int d = 0; d < kActionDim; ++d) {
    std::vector<double> pool;
    for (const auto& ep : episodes) {
      require(ep.actions.allFinite(), "invalid episode");
      for (int t = 0; t < ep.steps(); ++t) pool.push_back(ep.actions(t, d));
    }
    st.lo[d] = interpolated_quantile(pool, q_lo);
    st.hi[d] = interpolated_quantile(std::move(pool), q_hi);
  }
  return st;
}

inline Vec normalize_action(const Vec& a, const NormalizationStats& st) {
  Vec y(kActionDim);
  for (int d = 0; d < kActionDim; ++d) {
    double span = st.hi[d] - st.lo[d];
    y[d] = span == 0.0 ? 0.0 : clamp(2.0 * (a[d] - st.lo[d]) / span - 1.0, -1.0, 1.0);
  }
  return y;
}

inline Vec denormalize_action(const Vec& y, const NormalizationStats& st) {
  Vec a(kActionDim);
  for (int d = 0; d < kActionDim; ++d) {
    require(y[d] >= -1.0 - 1e-12 && y[d] <= 1.0 + 1e-12, "unnormalized input");
    a[d] = st.lo[d] + (y[d] + 1.0) / 2.0 * (st.hi[d] - st.lo[d]);
  }
  return a;
}

/// Builds the (window, chunk) pair anchored at step t. The window repeats the
/// first frame before episode start; the chunk repeats the final action past
/// episode end.
inline TrainingItem make_training_item(const EpisodeRecord& ep, int t,
                                       const NormalizationStats& st,
                                       const std::vector<int>& prompt_ids, int horizon = 32,
                                       int window = 2) {
  require(t >= 0 && t < ep.steps(), "step index out of range");
  TrainingItem item;
  item.anchor_step = t;
  for (int k = window; k >= 0; --k)
    item.window.frames.push_back(ep.frames[size_t(std::max(0, t - k))]);
  item.window.prompt_ids = prompt_ids;
  item.chunk.resize(horizon, kActionDim);
  for (int h = 0; h < horizon; ++h) {
    int src = std::min(t + h, ep.steps() - 1);
    item.chunk.row(h) = normalize_action(ep.actions.row(src).transpose(), st).transpose();
  }
  return item;
}

// ---------------------------------------------------------------------------
// Episode directory format: meta.json + actions.f32 + cam{k}.rgb8
// ---------------------------------------------------------------------------

namespace detail {

inline void write_file(const std::filesystem::path& p, const void* data, size_t bytes) {
  std::ofstream f(p, std::ios::binary);
  require(f.good(), "cannot open for write: " + p.string());
  f.write(reinterpret_cast<const char*>(data), std::streamsize(bytes));
  require(f.good(), "write failed: " + p.string());
}

inline std::vector<char> read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  require(f.good(), "cannot open: " + p.string());
  std::vector<char> buf(size_t(f.tellg()));
  f.seekg(0);
  f.read(buf.data(), std::streamsize(buf.size()));
  require(f.good(), "read failed: " + p.string());
  return buf;
}

}  // namespace detail

inline void save_episode(const EpisodeRecord& ep, const std::filesystem::path& dir) {
  ep.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["format_version"] = kEpisodeFormatVersion;
  meta["task_id"] = task_name(ep.task_id);
  meta["prompt_text"] = ep.prompt_text;
  meta["rate_hz"] = ep.rate_hz;
  meta["steps"] = ep.steps();
  meta["height"] = ep.frames[0][0].height;
  meta["width"] = ep.frames[0][0].width;
  meta["cameras"] = kCameras;
  {
    std::ofstream f(dir / "meta.json");
    f << meta.dump(2) << "\n";
    require(f.good(), "write failed: meta.json");
  }
  std::vector<float> acts(size_t(ep.steps()) * kActionDim);
  for (int t = 0; t < ep.steps(); ++t)
    for (int d = 0; d < kActionDim; ++d) acts[size_t(t) * kActionDim + d] = float(ep.actions(t, d));
  detail::write_file(dir / "actions.f32", acts.data(), acts.size() * sizeof(float));
  for (int k = 0; k < kCameras; ++k) {
    std::vector<std::uint8_t> buf;
    buf.reserve(size_t(ep.steps()) * ep.frames[0][k].data.size());
    for (const auto& f : ep.frames) buf.insert(buf.end(), f[k].data.begin(), f[k].data.end());
    detail::write_file(dir / ("cam" + std::to_string(k) + ".rgb8"), buf.data(), buf.size());
  }
}

inline EpisodeRecord load_episode(const std::filesystem::path& dir) {
  nlohmann::json meta;
  {
    std::ifstream f(dir / "meta.json");
    require(f.good(), "corrupt manifest: missing meta.json in " + dir.string());
    try {
      f >> meta;
    } catch (const std::exception& e) {
      fail("corrupt manifest: " + std::string(e.what()));
    }
  }
  require(meta.value("format_version", -1) == kEpisodeFormatVersion,
          "corrupt manifest: format version");
  EpisodeRecord ep;
  ep.task_id = task_from_name(meta.at("task_id").get<std::string>());
  ep.prompt_text = meta.at("prompt_text").get<std::string>();
  ep.rate_hz = meta.at("rate_hz").get<double>();
  int T = meta.at("steps").get<int>();
  int h = meta.at("height").get<int>();
  int w = meta.at("width").get<int>();
  require(T >= 1 && h >= 1 && w >= 1, "corrupt manifest: bad shape");

  auto abuf = detail::read_file(dir / "actions.f32");
  require(abuf.size() == size_t(T) * kActionDim * sizeof(float),
          "shape mismatch: actions.f32 length");
  ep.actions.resize(T, kActionDim);
  const float* ap = reinterpret_cast<const float*>(abuf.data());
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < kActionDim; ++d) ep.actions(t, d) = double(ap[size_t(t) * kActionDim + d]);

  ep.frames.resize(size_t(T));
  size_t frame_bytes = size_t(h) * w * 3;
  for (int k = 0; k < kCameras; ++k) {
    auto buf = detail::read_file(dir / ("cam" + std::to_string(k) + ".rgb8"));
    require(buf.size() == frame_bytes * size_t(T), "truncated array: cam" + std::to_string(k));
    for (int t = 0; t < T; ++t) {
      Image im(h, w);
      std::copy(buf.begin() + std::ptrdiff_t(frame_bytes) * t,
                buf.begin() + std::ptrdiff_t(frame_bytes) * (t + 1), im.data.begin());
      ep.frames[size_t(t)][size_t(k)] = std::move(im);
    }
  }
  ep.validate();
  return ep;
}

inline void save_norm_stats(const NormalizationStats& st, const std::filesystem::path& path) {
  nlohmann::json j;
  j["lo"] = std::vector<double>(st.lo.data(), st.lo.data() + kActionDim);
  j["hi"] = std::vector<double>(st.hi.data(), st.hi.data() + kActionDim);
  j["q_lo"] = st.q_lo;
  j["q_hi"] = st.q_hi;
  std::ofstream f(path);
  f << j.dump(2) << "\n";
  require(f.good(), "write failed: " + path.string());
}

inline NormalizationStats load_norm_stats(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open: " + path.string());
  nlohmann::json j;
  f >> j;
  NormalizationStats st;
  auto lo = j.at("lo").get<std::vector<double>>();
  auto hi = j.at("hi").get<std::vector<double>>();
  require(lo.size() == kActionDim && hi.size() == kActionDim, "shape mismatch: norm stats");
  for (int d = 0; d < kActionDim; ++d) {
    st.lo[d] = lo[size_t(d)];
    st.hi[d] = hi[size_t(d)];
  }
  st.q_lo = j.at("q_lo").get<double>();
  st.q_hi = j.at("q_hi").get<double>();
  return st;
}

}  // namespace benchtop
