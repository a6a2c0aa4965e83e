#pragma once

#include <string>
#include <vector>

#include "benchtop/adapter.hpp"

namespace benchtop {

struct DiTConfig {
  int embed_dim = 512;
  int ff_hidden = 2048;
  int blocks = 8;
  int heads = 8;
  int horizon = 32;
  std::uint64_t init_seed = 13;

  // Cross-attention sits in every second block (positions 2,4,6,8).
  bool has_cross(int block_index) const { return block_index % 2 == 1; }
};

constexpr int kTauSinDim = 128;

/// Sinusoidal frequency features of the flow timestep, geometric frequencies
/// spanning 1 to 1e4. At tau=0 the pattern is alternating (0, 1).
inline RowVec tau_sinusoid(double tau) {
  require(tau >= 0.0 && tau <= 1.0, "flow timestep outside [0,1]");
  RowVec out(kTauSinDim);
  int pairs = kTauSinDim / 2;
  for (int k = 0; k < pairs; ++k) {
    double freq = std::pow(1e4, double(k) / double(pairs - 1));
    out[2 * k] = std::sin(tau * freq);
    out[2 * k + 1] = std::cos(tau * freq);
  }
  return out;
}

/// Diffusion Transformer over action chunks: AdaLN-zero modulation driven by
/// the flow timestep, cross-attention over conditioned tokens every second
/// block, zero-initialized output head.
class ActionExpert {
 public:
  struct Block {
    nn::AttnSlots self_attn, cross_attn;
    int mod_self_w, mod_self_b;
    int mod_cross_w, mod_cross_b;
    int mod_ff_w, mod_ff_b;
    int ff_w1, ff_b1, ff_w2, ff_b2;
    bool has_cross = false;
  };

  ActionExpert(ParamStore& ps, const DiTConfig& cfg) : cfg_(cfg) {
    require(cfg.embed_dim % cfg.heads == 0, "embed dim not divisible by heads");
    Rng rng = make_rng(derive_seed(cfg.init_seed, 0xd17));
    const int E = cfg.embed_dim;
    const double sc = 0.02;
    in_w_ = ps.add("dit.in_proj.w", truncated_normal(kActionDim, E, rng, sc));
    in_b_ = ps.add("dit.in_proj.b", Mat::Zero(1, E));
    tau_w1_ = ps.add("dit.tau_mlp.w1", truncated_normal(kTauSinDim, E, rng, sc));
    tau_b1_ = ps.add("dit.tau_mlp.b1", Mat::Zero(1, E));
    tau_w2_ = ps.add("dit.tau_mlp.w2", truncated_normal(E, E, rng, sc));
    tau_b2_ = ps.add("dit.tau_mlp.b2", Mat::Zero(1, E));
    pos_emb_ = ps.add("dit.pos_emb", truncated_normal(cfg.horizon, E, rng, sc));
    for (int i = 0; i < cfg.blocks; ++i) {
      std::string pre = "dit.block" + std::to_string(i);
      Block b;
      b.has_cross = cfg.has_cross(i);
      b.self_attn = nn::add_attn(ps, pre + ".self", E, rng, sc, /*zero_out=*/false);
      b.mod_self_w = ps.add(pre + ".mod_self.w", Mat::Zero(E, 3 * E));
      b.mod_self_b = ps.add(pre + ".mod_self.b", Mat::Zero(1, 3 * E));
      if (b.has_cross) {
        b.cross_attn = nn::add_attn(ps, pre + ".cross", E, rng, sc, /*zero_out=*/false);
        b.mod_cross_w = ps.add(pre + ".mod_cross.w", Mat::Zero(E, 3 * E));
        b.mod_cross_b = ps.add(pre + ".mod_cross.b", Mat::Zero(1, 3 * E));
      }
      b.mod_ff_w = ps.add(pre + ".mod_ff.w", Mat::Zero(E, 3 * E));
      b.mod_ff_b = ps.add(pre + ".mod_ff.b", Mat::Zero(1, 3 * E));
      b.ff_w1 = ps.add(pre + ".ff.w1", truncated_normal(E, cfg.ff_hidden, rng, sc));
      b.ff_b1 = ps.add(pre + ".ff.b1", Mat::Zero(1, cfg.ff_hidden));
      b.ff_w2 = ps.add(pre + ".ff.w2", truncated_normal(cfg.ff_hidden, E, rng, sc));
      b.ff_b2 = ps.add(pre + ".ff.b2", Mat::Zero(1, E));
      blocks_.push_back(b);
    }
    final_ln_ = nn::add_ln(ps, "dit.final", E);
    out_w_ = ps.add("dit.out_proj.w", Mat::Zero(E, kActionDim));
    out_b_ = ps.add("dit.out_proj.b", Mat::Zero(1, kActionDim));
  }

  const DiTConfig& config() const { return cfg_; }

  /// Condition embedding for the flow timestep.
  int embed_tau(Tape& t, nn::ParamBinder& p, double tau) const {
    int sin = t.leaf(tau_sinusoid(tau));
    int h = t.leaky_gelu_op(nn::affine(t, p, sin, tau_w1_, tau_b1_));
    return nn::affine(t, p, h, tau_w2_, tau_b2_);
  }

  /// out = x + alpha(c) .* Sub( LN(x) .* (1 + gamma(c)) + beta(c) )
  template <typename SubFn>
  int adaln_apply(Tape& t, nn::ParamBinder& p, int x, int c, int mod_w, int mod_b,
                  SubFn&& sub) const {
    const int E = cfg_.embed_dim;
    int mods = t.rowwise_add(t.matmul(c, p(mod_w)), p(mod_b));
    int gamma = t.slice_cols(mods, 0, E);
    int beta = t.slice_cols(mods, E, E);
    int alpha = t.slice_cols(mods, 2 * E, E);
    int h = t.rowwise_add(t.rowwise_mul(t.layernorm_rows(x), t.add_scalar(gamma, 1.0)), beta);
    return t.add(x, t.rowwise_mul(sub(h), alpha));
  }

  /// noisy_chunk: H x 14 leaf; cond: M x E node. Returns H x 14 node.
  int forward(Tape& t, nn::ParamBinder& p, int noisy_chunk, double tau, int cond) const {
    require(t.val(cond).rows() >= 1, "empty conditioning");
    require(t.val(noisy_chunk).rows() == cfg_.horizon &&
                t.val(noisy_chunk).cols() == kActionDim,
            "chunk shape mismatch");
    int x = t.add(nn::affine(t, p, noisy_chunk, in_w_, in_b_), p(pos_emb_));
    int c = embed_tau(t, p, tau);
    for (const auto& b : blocks_) {
      x = adaln_apply(t, p, x, c, b.mod_self_w, b.mod_self_b,
                      [&](int h) { return nn::mha(t, p, h, h, b.self_attn, cfg_.heads); });
      if (b.has_cross)
        x = adaln_apply(t, p, x, c, b.mod_cross_w, b.mod_cross_b,
                        [&](int h) { return nn::mha(t, p, h, cond, b.cross_attn, cfg_.heads); });
      x = adaln_apply(t, p, x, c, b.mod_ff_w, b.mod_ff_b, [&](int h) {
        int f = nn::affine(t, p, h, b.ff_w1, b.ff_b1);
        return nn::affine(t, p, t.leaky_gelu_op(f), b.ff_w2, b.ff_b2);
      });
    }
    int y = nn::layer_norm(t, p, x, final_ln_);
    return nn::affine(t, p, y, out_w_, out_b_);
  }

 private:
  DiTConfig cfg_;
  int in_w_, in_b_;
  int tau_w1_, tau_b1_, tau_w2_, tau_b2_;
  int pos_emb_;
  std::vector<Block> blocks_;
  nn::LnSlots final_ln_;
  int out_w_, out_b_;
};

}  // namespace benchtop
