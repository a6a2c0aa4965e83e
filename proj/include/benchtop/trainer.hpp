#pragma once

#include <cstring>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "benchtop/flow.hpp"

namespace benchtop {

constexpr int kCheckpointFormatVersion = 1;

struct TrainConfig {
  int batch_size = 16;
  int accumulation = 8;
  double lr = 1e-4;
  double weight_decay = 1e-8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_decay = 0.999;
  double clip_norm = 1.0;
  int total_iterations = 20000;
  std::uint64_t seed = 0;
  int checkpoint_every = 5000;
  // Optional schedule: linear warmup over the first `lr_warmup_steps`
  // optimizer steps, then cosine decay to lr * lr_final_frac at the end of
  // the run. Defaults reproduce a constant learning rate.
  int lr_warmup_steps = 0;
  double lr_final_frac = 1.0;

  void validate() const {
    require(batch_size >= 1 && accumulation >= 1 && total_iterations >= 0, "bad train config");
    require(lr > 0 && clip_norm > 0 && ema_decay >= 0 && ema_decay < 1.0, "bad train config");
    require(lr_warmup_steps >= 0 && lr_final_frac > 0 && lr_final_frac <= 1.0, "bad train config");
  }

  /// Learning rate at a given (1-based) optimizer step.
  double lr_at(int opt_step) const {
    double out = lr;
    if (lr_warmup_steps > 0 && opt_step < lr_warmup_steps)
      out *= double(opt_step) / double(lr_warmup_steps);
    if (lr_final_frac < 1.0) {
      double total = std::max(1.0, double(total_iterations) / double(accumulation));
      double prog = std::min(1.0, double(opt_step) / total);
      out *= lr_final_frac + (1.0 - lr_final_frac) * 0.5 * (1.0 + std::cos(kPi * prog));
    }
    return out;
  }
};

/// Scales gradients in place so their global L2 norm is at most `threshold`.
/// Returns the scale that was applied.
inline double clip_global_norm(std::vector<Mat>& grads, double threshold) {
  double sq = 0.0;
  for (const auto& g : grads) {
    if (g.size() == 0) continue;
    require(g.allFinite(), "divergence");
    sq += g.squaredNorm();
  }
  double norm = std::sqrt(sq);
  if (norm <= threshold || norm == 0.0) return 1.0;
  double scale = threshold / norm;
  for (auto& g : grads)
    if (g.size()) g *= scale;
  return scale;
}

/// Decoupled-weight-decay Adam update. `step` counts optimizer steps starting
/// at 1 for bias correction.
inline void adamw_step(ParamStore& params, const std::vector<Mat>& grads, std::vector<Mat>& m,
                       std::vector<Mat>& v, int step, const TrainConfig& cfg) {
  double bc1 = 1.0 - std::pow(cfg.adam_beta1, step);
  double bc2 = 1.0 - std::pow(cfg.adam_beta2, step);
  for (int s = 0; s < params.count(); ++s) {
    const Mat& g = grads[size_t(s)].size() ? grads[size_t(s)]
                                           : Mat(Mat::Zero(params.value(s).rows(),
                                                           params.value(s).cols()));
    m[size_t(s)] = cfg.adam_beta1 * m[size_t(s)] + (1.0 - cfg.adam_beta1) * g;
    v[size_t(s)] = cfg.adam_beta2 * v[size_t(s)].array().matrix() +
                   (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
    Mat mhat = m[size_t(s)] / bc1;
    Mat vhat = v[size_t(s)] / bc2;
    Mat denom = vhat.cwiseSqrt().array() + cfg.adam_eps;
    params.value(s) -=
        cfg.lr * (mhat.cwiseQuotient(denom) + cfg.weight_decay * params.value(s));
  }
}

inline void ema_update(std::vector<Mat>& shadow, const ParamStore& params, double decay) {
  for (int s = 0; s < params.count(); ++s)
    shadow[size_t(s)] = decay * shadow[size_t(s)] + (1.0 - decay) * params.value(s);
}

/// Source of training items; implemented by the workbench over an episode set.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual int episode_count() const = 0;
  virtual int episode_steps(int episode) const = 0;
  virtual FlowBatchItem item(int episode, int step, std::uint64_t noise_seed) const = 0;
};

struct TrainLogEntry {
  int opt_step = 0;
  int iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double clip_scale = 1.0;
  double lr = 0.0;
};

class Trainer {
 public:
  Trainer(ParamStore& params, const Adapter& adapter, const ActionExpert& dit,
          const TrainConfig& cfg)
      : params_(params), adapter_(adapter), dit_(dit), cfg_(cfg) {
    cfg.validate();
    grads_ = params.zeros_like();
    m_ = params.zeros_like();
    v_ = params.zeros_like();
    ema_ = params.copy_values();
    sample_rng_ = make_rng(derive_seed(cfg.seed, 0x7a41));
  }

  const TrainConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }
  int opt_step() const { return opt_step_; }
  const std::vector<Mat>& ema() const { return ema_; }
  std::vector<Mat>& ema() { return ema_; }
  std::vector<Mat>& moments_m() { return m_; }
  std::vector<Mat>& moments_v() { return v_; }
  Rng& sample_rng() { return sample_rng_; }
  void set_counters(int iteration, int opt_step) {
    iteration_ = iteration;
    opt_step_ = opt_step;
  }

  /// Runs one micro-batch iteration; returns a log entry when an optimizer
  /// step was taken.
  std::optional<TrainLogEntry> step(const BatchSource& src) {
    require(src.episode_count() > 0, "empty dataset");
    std::vector<FlowBatchItem> batch;
    batch.reserve(size_t(cfg_.batch_size));
    for (int i = 0; i < cfg_.batch_size; ++i) {
      int ep = int(sample_rng_() % std::uint64_t(src.episode_count()));
      int t = int(sample_rng_() % std::uint64_t(src.episode_steps(ep)));
      batch.push_back(src.item(ep, t, derive_seed(cfg_.seed, std::uint64_t(iteration_), std::uint64_t(i))));
    }
    double loss = cfm_loss(params_, adapter_, dit_, batch, &grads_);
    if (!std::isfinite(loss)) fail("non-finite loss at iteration " + std::to_string(iteration_));
    loss_window_ += loss;
    ++loss_count_;
    ++iteration_;

    if (iteration_ % cfg_.accumulation != 0) return std::nullopt;

    double inv = 1.0 / double(cfg_.accumulation);
    double sq = 0.0;
    for (auto& g : grads_)
      if (g.size()) {
        g *= inv;
        sq += g.squaredNorm();
      }
    TrainLogEntry log;
    log.grad_norm = std::sqrt(sq);
    log.clip_scale = clip_global_norm(grads_, cfg_.clip_norm);
    ++opt_step_;
    TrainConfig stepped = cfg_;
    stepped.lr = cfg_.lr_at(opt_step_);
    adamw_step(params_, grads_, m_, v_, opt_step_, stepped);
    log.lr = stepped.lr;
    ema_update(ema_, params_, cfg_.ema_decay);
    for (auto& g : grads_) g.setZero();
    log.opt_step = opt_step_;
    log.iteration = iteration_;
    log.loss = loss_window_ / double(loss_count_);
    loss_window_ = 0.0;
    loss_count_ = 0;
    return log;
  }

  /// Copy of the parameter store holding the EMA shadow values.
  ParamStore ema_store() const {
    ParamStore out;
    for (int s = 0; s < params_.count(); ++s) out.add(params_.name(s), ema_[size_t(s)]);
    return out;
  }

  ParamStore& params() { return params_; }

 private:
  ParamStore& params_;
  const Adapter& adapter_;
  const ActionExpert& dit_;
  TrainConfig cfg_;
  std::vector<Mat> grads_, m_, v_, ema_;
  Rng sample_rng_;
  int iteration_ = 0;
  int opt_step_ = 0;
  double loss_window_ = 0.0;
  int loss_count_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint container: JSON header + little-endian f32 payload.
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::vector<std::pair<std::string, Mat>> params;
  std::vector<Mat> ema, m, v;
  int iteration = 0;
  int opt_step = 0;
  NormalizationStats stats;
  std::string config_text;  // run-config snapshot
  std::string rng_state;
  std::map<std::string, int> vocab;
  int format_version = kCheckpointFormatVersion;
};

namespace detail {

inline void round_to_f32(Mat& m) {
  for (int i = 0; i < m.size(); ++i) m.data()[i] = double(float(m.data()[i]));
}

inline void append_f32(std::vector<float>& payload, const Mat& m) {
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) payload.push_back(float(m(r, c)));
}

inline Mat take_f32(const std::vector<float>& payload, size_t offset, int rows, int cols) {
  require(offset + size_t(rows) * size_t(cols) <= payload.size(), "truncated checkpoint payload");
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = double(payload[offset + size_t(r) * cols + c]);
  return m;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format_version"] = ck.format_version;
  header["iteration"] = ck.iteration;
  header["opt_step"] = ck.opt_step;
  header["rng_state"] = ck.rng_state;
  header["config_text"] = ck.config_text;
  header["vocab"] = ck.vocab;
  header["stats"] = {{"lo", std::vector<double>(ck.stats.lo.data(), ck.stats.lo.data() + kActionDim)},
                     {"hi", std::vector<double>(ck.stats.hi.data(), ck.stats.hi.data() + kActionDim)},
                     {"q_lo", ck.stats.q_lo},
                     {"q_hi", ck.stats.q_hi}};
  std::vector<float> payload;
  nlohmann::json tensors = nlohmann::json::array();
  auto emit = [&](const std::string& name, const std::string& group, const Mat& m) {
    tensors.push_back({{"name", name},
                       {"group", group},
                       {"rows", m.rows()},
                       {"cols", m.cols()},
                       {"offset", payload.size()}});
    detail::append_f32(payload, m);
  };
  for (size_t i = 0; i < ck.params.size(); ++i) {
    emit(ck.params[i].first, "param", ck.params[i].second);
    if (!ck.ema.empty()) emit(ck.params[i].first, "ema", ck.ema[i]);
    if (!ck.m.empty()) emit(ck.params[i].first, "adam_m", ck.m[i]);
    if (!ck.v.empty()) emit(ck.params[i].first, "adam_v", ck.v[i]);
  }
  header["tensors"] = tensors;
  std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open checkpoint for write: " + path.string());
  const char magic[8] = {'B', 'T', 'C', 'K', 'P', 'T', '0', '1'};
  f.write(magic, 8);
  std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(hs.data(), std::streamsize(hs.size()));
  f.write(reinterpret_cast<const char*>(payload.data()),
          std::streamsize(payload.size() * sizeof(float)));
  require(f.good(), "checkpoint write failed");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open checkpoint: " + path.string());
  char magic[8];
  f.read(magic, 8);
  require(f.good() && std::memcmp(magic, "BTCKPT01", 8) == 0, "bad checkpoint magic");
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  f.read(hs.data(), std::streamsize(hlen));
  require(f.good(), "truncated checkpoint header");
  nlohmann::json header = nlohmann::json::parse(hs);
  require(header.value("format_version", -1) == kCheckpointFormatVersion,
          "unsupported checkpoint version");

  std::vector<float> payload;
  {
    std::vector<char> rest((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    require(rest.size() % sizeof(float) == 0, "truncated checkpoint payload");
    payload.resize(rest.size() / sizeof(float));
    std::memcpy(payload.data(), rest.data(), rest.size());
  }

  Checkpoint ck;
  ck.iteration = header.at("iteration").get<int>();
  ck.opt_step = header.at("opt_step").get<int>();
  ck.rng_state = header.at("rng_state").get<std::string>();
  ck.config_text = header.at("config_text").get<std::string>();
  ck.vocab = header.at("vocab").get<std::map<std::string, int>>();
  auto lo = header.at("stats").at("lo").get<std::vector<double>>();
  auto hi = header.at("stats").at("hi").get<std::vector<double>>();
  require(lo.size() == kActionDim && hi.size() == kActionDim, "bad stats in checkpoint");
  for (int d = 0; d < kActionDim; ++d) {
    ck.stats.lo[d] = lo[size_t(d)];
    ck.stats.hi[d] = hi[size_t(d)];
  }
  ck.stats.q_lo = header.at("stats").at("q_lo").get<double>();
  ck.stats.q_hi = header.at("stats").at("q_hi").get<double>();

  for (const auto& tj : header.at("tensors")) {
    std::string name = tj.at("name").get<std::string>();
    std::string group = tj.at("group").get<std::string>();
    Mat m = detail::take_f32(payload, tj.at("offset").get<size_t>(), tj.at("rows").get<int>(),
                             tj.at("cols").get<int>());
    if (group == "param")
      ck.params.emplace_back(name, std::move(m));
    else if (group == "ema")
      ck.ema.push_back(std::move(m));
    else if (group == "adam_m")
      ck.m.push_back(std::move(m));
    else if (group == "adam_v")
      ck.v.push_back(std::move(m));
    else
      fail("unknown tensor group: " + group);
  }
  return ck;
}

/// Captures trainer + model state. The live state is rounded to f32 at the
/// same time, so a run that continues in-process matches a run resumed from
/// the file bit for bit.
inline void checkpoint_trainer(Trainer& tr, const NormalizationStats& stats,
                               const std::string& config_text,
                               const std::map<std::string, int>& vocab,
                               const std::filesystem::path& path) {
  Checkpoint ck;
  ParamStore& ps = tr.params();
  for (int s = 0; s < ps.count(); ++s) {
    detail::round_to_f32(ps.value(s));
    detail::round_to_f32(tr.ema()[size_t(s)]);
    detail::round_to_f32(tr.moments_m()[size_t(s)]);
    detail::round_to_f32(tr.moments_v()[size_t(s)]);
    ck.params.emplace_back(ps.name(s), ps.value(s));
    ck.ema.push_back(tr.ema()[size_t(s)]);
    ck.m.push_back(tr.moments_m()[size_t(s)]);
    ck.v.push_back(tr.moments_v()[size_t(s)]);
  }
  ck.iteration = tr.iteration();
  ck.opt_step = tr.opt_step();
  ck.stats = stats;
  ck.config_text = config_text;
  ck.vocab = vocab;
  std::ostringstream os;
  os << tr.sample_rng();
  ck.rng_state = os.str();
  save_checkpoint(ck, path);
}

/// Restores model parameters and trainer state saved by checkpoint_trainer.
inline void restore_trainer(Trainer& tr, const Checkpoint& ck) {
  ParamStore& ps = tr.params();
  require(int(ck.params.size()) == ps.count(), "checkpoint/config mismatch: tensor count");
  for (int s = 0; s < ps.count(); ++s) {
    require(ck.params[size_t(s)].first == ps.name(s), "checkpoint/config mismatch: tensor name");
    require(ck.params[size_t(s)].second.rows() == ps.value(s).rows() &&
                ck.params[size_t(s)].second.cols() == ps.value(s).cols(),
            "checkpoint/config mismatch: tensor shape");
    ps.value(s) = ck.params[size_t(s)].second;
    tr.ema()[size_t(s)] = ck.ema[size_t(s)];
    tr.moments_m()[size_t(s)] = ck.m[size_t(s)];
    tr.moments_v()[size_t(s)] = ck.v[size_t(s)];
  }
  tr.set_counters(ck.iteration, ck.opt_step);
  std::istringstream is(ck.rng_state);
  is >> tr.sample_rng();
}

}  // namespace benchtop
