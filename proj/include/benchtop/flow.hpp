#pragma once

#include <functional>
#include <vector>

#include "benchtop/action_expert.hpp"

namespace benchtop {

struct FlowConfig {
  double beta_alpha = 1.5;
  double beta_beta = 1.0;
  double tau_scale = 0.999;  // s
  int denoise_steps = 10;
  bool clip_output = true;
  /// Scale on the initial noise at sampling time. 1 reproduces the training
  /// distribution; lower values trade sample diversity for lower variance
  /// around the conditional mean (0 integrates from the origin).
  double sample_temperature = 1.0;
};

/// tau = s * (1 - B), B ~ Beta(alpha, 1) via inverse CDF B = U^(1/alpha).
/// Emphasizes high-noise (small tau) timesteps.
inline double sample_tau(Rng& rng, const FlowConfig& cfg) {
  require(cfg.beta_beta == 1.0, "beta_beta != 1 not supported by the inverse-CDF sampler");
  require(cfg.tau_scale > 0.0 && cfg.tau_scale <= 1.0, "tau_scale outside (0,1]");
  double u = uniform01(rng);
  double b = std::pow(u, 1.0 / cfg.beta_alpha);
  return cfg.tau_scale * (1.0 - b);
}

/// Rectified linear path: tau=0 is pure noise, tau=1 is data.
/// Returns (A_tau, u) with A_tau = tau*A + (1-tau)*eps and u = A - eps.
inline std::pair<Mat, Mat> corrupt(const Mat& clean, const Mat& noise, double tau) {
  require(clean.rows() == noise.rows() && clean.cols() == noise.cols(),
          "corrupt: shape mismatch");
  return {tau * clean + (1.0 - tau) * noise, clean - noise};
}

inline Mat standard_normal_chunk(int horizon, Rng& rng) {
  return random_normal(horizon, kActionDim, rng);
}

/// One training sample for the flow loss; token sequences are the frozen
/// encoder outputs the adapter consumes.
struct FlowBatchItem {
  Mat clean_chunk;  // H x 14 in [-1,1]
  Mat noise;        // H x 14
  double tau = 0.0;
  TokenSequence text;
  TokenSequence image;
};

/// Mean squared velocity error over the batch; gradients (if requested) are
/// accumulated through both the DiT and the adapter.
inline double cfm_loss(const ParamStore& store, const Adapter& adapter, const ActionExpert& dit,
                       const std::vector<FlowBatchItem>& items, std::vector<Mat>* grads) {
  require(!items.empty(), "empty batch");
  double total = 0.0;
  double inv = 1.0 / double(items.size());
  for (const auto& item : items) {
    auto [noisy, target_u] = corrupt(item.clean_chunk, item.noise, item.tau);
    Tape t;
    nn::ParamBinder bind(t, store);
    int text = t.leaf(item.text.tokens);
    int image = t.leaf(item.image.tokens);
    auto cond = adapter.forward(t, bind, text, image);
    int vel = dit.forward(t, bind, t.leaf(noisy), item.tau, cond.conditioned);
    int mse = t.mse_against(vel, target_u);
    double item_loss = t.val(mse)(0, 0);
    require(std::isfinite(item_loss), "non-finite loss");
    total += inv * item_loss;
    if (grads) {
      int scaled = t.mul_scalar(mse, inv);
      t.backward(scaled, grads);
    }
  }
  return total;
}

/// Euler integration of a velocity field from pure noise to a chunk.
/// field(A_tau, tau) -> velocity, both H x 14.
inline Mat generate_chunk(const std::function<Mat(const Mat&, double)>& field, int horizon,
                          const FlowConfig& cfg, Rng& rng) {
  require(cfg.denoise_steps >= 1, "denoise_steps must be >= 1");
  require(cfg.sample_temperature >= 0.0, "sample_temperature must be >= 0");
  Mat a = cfg.sample_temperature * standard_normal_chunk(horizon, rng);
  double delta = 1.0 / double(cfg.denoise_steps);
  for (int k = 0; k < cfg.denoise_steps; ++k) {
    double tau = k * delta;
    Mat v = field(a, tau);
    require(v.allFinite(), "non-finite velocity during integration");
    a += delta * v;
  }
  if (cfg.clip_output) a = a.cwiseMax(-1.0).cwiseMin(1.0);
  return a;
}

}  // namespace benchtop
