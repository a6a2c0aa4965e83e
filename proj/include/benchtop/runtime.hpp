#pragma once

#include <deque>
#include <functional>

#include "benchtop/sim.hpp"

namespace benchtop {

struct EnsembleConfig {
  double decay = 0.1;  // m in w = exp(-m * age)
  int horizon = 32;
  bool prefer_oldest = false;  // weight oldest chunks heaviest instead

  void validate() const { require(decay >= 0.0 && horizon >= 1, "bad ensemble config"); }
};

/// Bounded buffer of predicted action chunks, newest appended, oldest evicted.
class ChunkBuffer {
 public:
  struct Entry {
    int anchor_step = 0;
    Mat chunk;  // horizon x 14, normalized
    int version = 0;
  };

  explicit ChunkBuffer(int capacity = 4) : capacity_(capacity) {
    require(capacity >= 1, "capacity must be >= 1");
  }

  void submit(int anchor_step, Mat chunk) {
    require(chunk.cols() == kActionDim && chunk.rows() >= 1, "bad chunk shape");
    if (!entries_.empty())
      require(anchor_step >= entries_.back().anchor_step, "regressed anchor");
    entries_.push_back(Entry{anchor_step, std::move(chunk), next_version_++});
    if (int(entries_.size()) > capacity_) entries_.pop_front();
  }

  const std::deque<Entry>& entries() const { return entries_; }
  int size() const { return int(entries_.size()); }

 private:
  std::deque<Entry> entries_;
  int capacity_;
  int next_version_ = 0;
};

struct TickResult {
  Vec command = Vec::Zero(kActionDim);  // normalized
  bool stalled = false;
  int contributors = 0;
  Vec cand_min = Vec::Zero(kActionDim);  // per-dim candidate bounds
  Vec cand_max = Vec::Zero(kActionDim);
};

/// Weighted average over every buffered chunk that covers `step`; falls back
/// to the previous command (stalled) when none does.
inline TickResult control_tick(const ChunkBuffer& buffer, int step, const EnsembleConfig& cfg,
                               const Vec& last_command) {
  cfg.validate();
  TickResult out;
  Vec acc = Vec::Zero(kActionDim);
  double wsum = 0.0;
  int n = 0;
  for (const auto& e : buffer.entries()) {
    int age = step - e.anchor_step;
    if (age < 0 || age >= cfg.horizon || age >= e.chunk.rows()) continue;
    double w = std::exp(-cfg.decay * (cfg.prefer_oldest ? double(cfg.horizon - 1 - age)
                                                        : double(age)));
    Vec cand = e.chunk.row(age).transpose();
    acc += w * cand;
    wsum += w;
    if (n == 0) {
      out.cand_min = cand;
      out.cand_max = cand;
    } else {
      out.cand_min = out.cand_min.cwiseMin(cand);
      out.cand_max = out.cand_max.cwiseMax(cand);
    }
    ++n;
  }
  if (n == 0) {
    out.command = last_command;
    out.stalled = true;
    return out;
  }
  out.command = acc / wsum;
  out.contributors = n;
  return out;
}

// ---------------------------------------------------------------------------
// Fixed-rate episode loop with asynchronous (simulated-time) prediction
// ---------------------------------------------------------------------------

/// predict(window) -> horizon x 14 normalized chunk for the snapshot step.
using ChunkPredictor = std::function<Mat(const ObservationWindow&)>;

struct RunEpisodeConfig {
  EnsembleConfig ensemble;
  int latency_ticks = 8;  // simulated prediction latency (0 = ready next tick)
  int resolution = 64;
  int window = 2;  // observation keeps window+1 frames
  int buffer_capacity = 4;
  bool perturb = false;
  double perturb_magnitude = 0.3;
};

struct EpisodeReport {
  std::uint64_t seed = 0;
  TaskMetrics metrics;
  int ticks = 0;
  int stalled_after_first = 0;  // stalled ticks once a chunk has arrived
  int ticks_before_first = 0;   // warm-up ticks before the first chunk
  bool runtime_stall = false;   // stalled for longer than the horizon
  int predictions = 0;
  bool perturbed = false;
  bool convex_ok = true;  // every command stayed inside its candidates' bounds
};

/// Executes one evaluation episode. The executor ticks the simulator once per
/// control period and never waits for the predictor; predictions are injected
/// `latency_ticks` after their observation snapshot.
inline EpisodeReport run_policy_episode(const ChunkPredictor& predict, const TaskSpec& spec,
                                        std::uint64_t seed, const NormalizationStats& stats,
                                        const std::vector<int>& prompt_ids,
                                        const RunEpisodeConfig& cfg) {
  require(cfg.latency_ticks >= 0, "latency must be >= 0");
  SimState s = reset(spec, seed);
  ChunkBuffer buffer(cfg.buffer_capacity);
  EpisodeReport report;
  report.seed = seed;

  std::deque<std::array<Image, 3>> recent;
  auto window_now = [&] {
    ObservationWindow w;
    for (int k = cfg.window; k >= 0; --k) {
      int idx = std::max(0, int(recent.size()) - 1 - k);
      w.frames.push_back(recent[size_t(idx)]);
    }
    w.prompt_ids = prompt_ids;
    return w;
  };

  // Pending prediction: snapshot taken at `snapshot_step`, chunk becomes
  // available at `ready_step`. In simulated time the predictor restarts
  // immediately after each completion.
  bool first_arrived = false;
  int snapshot_step = 0, ready_step = cfg.latency_ticks;
  std::optional<ObservationWindow> pending;
  // Until the first chunk arrives the executor holds the home posture.
  Vec hold = Vec::Zero(kActionDim);
  Joints lj = home_joints(true), rj = home_joints(false);
  for (int i = 0; i < 3; ++i) {
    hold[i] = lj[i];
    hold[7 + i] = rj[i];
  }
  hold[3] = hold[10] = 1.0;  // grippers open
  Vec last_command = normalize_action(hold, stats);
  int consecutive_stalls = 0;

  for (int t = 0; t < spec.episode_cap; ++t) {
    recent.push_back(render_views(s, cfg.resolution));
    if (int(recent.size()) > cfg.window + 1) recent.pop_front();

    if (!pending) {  // predictor grabs the newest observation
      pending = window_now();
      snapshot_step = t;
      ready_step = t + cfg.latency_ticks;
    }
    if (pending && t >= ready_step) {  // prediction completes
      buffer.submit(snapshot_step, predict(*pending));
      ++report.predictions;
      first_arrived = true;
      pending = window_now();
      snapshot_step = t;
      ready_step = t + cfg.latency_ticks;
    }

    auto tick = control_tick(buffer, t, cfg.ensemble, last_command);
    if (tick.stalled) {
      if (first_arrived) ++report.stalled_after_first;
      else ++report.ticks_before_first;
      if (++consecutive_stalls > cfg.ensemble.horizon) report.runtime_stall = true;
    } else {
      consecutive_stalls = 0;
      for (int d = 0; d < kActionDim; ++d)
        if (tick.command[d] < tick.cand_min[d] - 1e-12 ||
            tick.command[d] > tick.cand_max[d] + 1e-12)
          report.convex_ok = false;
    }
    last_command = tick.command;

    s = step(s, denormalize_action(tick.command, stats));
    ++report.ticks;

    if (cfg.perturb && !report.perturbed && t >= spec.episode_cap / 4 &&
        (s.lattach.active() || s.rattach.active())) {
      perturb(s, cfg.perturb_magnitude);
      report.perturbed = true;
    }
  }
  report.metrics = evaluate_success(s, spec);
  return report;
}

}  // namespace benchtop
