#pragma once

#include <string>
#include <vector>

#include "benchtop/autodiff.hpp"
#include "benchtop/encoders.hpp"
#include "benchtop/params.hpp"

namespace benchtop {

/// GatedRMS normalization applied to one vector:
/// y_c = gamma_c * sigmoid(g_c) * x_c / rms(x).
inline Vec gated_rms(const Vec& x, const Vec& gamma, const Vec& gate, double eps = 1e-6) {
  double rms = std::sqrt(x.squaredNorm() / double(x.size()) + eps);
  Vec y(x.size());
  for (int c = 0; c < x.size(); ++c) y[c] = gamma[c] * sigmoid(gate[c]) * x[c] / rms;
  return y;
}

struct AdapterConfig {
  int embed_dim = 512;
  int ff_hidden = 2048;
  int blocks = 8;
  int heads = 8;
  int img_dim = 96;  // fused encoder width
  int txt_dim = 64;
  bool condition_includes_image_tokens = true;
  std::uint64_t init_seed = 11;
};

namespace nn {

// Shared multi-head attention parameter bundle.
struct AttnSlots {
  int wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LnSlots {
  int g, b;
};

// zero_out makes the residual branch start silent (plain pre-norm blocks);
// AdaLN-gated blocks keep a normal output projection since the gate itself
// starts at zero.
inline AttnSlots add_attn(ParamStore& ps, const std::string& prefix, int dim, Rng& rng,
                          double init_scale, bool zero_out = true) {
  AttnSlots s;
  s.wq = ps.add(prefix + ".wq", truncated_normal(dim, dim, rng, init_scale));
  s.bq = ps.add(prefix + ".bq", Mat::Zero(1, dim));
  s.wk = ps.add(prefix + ".wk", truncated_normal(dim, dim, rng, init_scale));
  s.bk = ps.add(prefix + ".bk", Mat::Zero(1, dim));
  s.wv = ps.add(prefix + ".wv", truncated_normal(dim, dim, rng, init_scale));
  s.bv = ps.add(prefix + ".bv", Mat::Zero(1, dim));
  s.wo = ps.add(prefix + ".wo",
                zero_out ? Mat(Mat::Zero(dim, dim)) : truncated_normal(dim, dim, rng, init_scale));
  s.bo = ps.add(prefix + ".bo", Mat::Zero(1, dim));
  return s;
}

inline LnSlots add_ln(ParamStore& ps, const std::string& prefix, int dim) {
  return LnSlots{ps.add(prefix + ".ln_g", Mat::Ones(1, dim)),
                 ps.add(prefix + ".ln_b", Mat::Zero(1, dim))};
}

// Tape node ids for the parameters a single forward pass touches.
class ParamBinder {
 public:
  ParamBinder(Tape& t, const ParamStore& ps) : tape_(t), store_(ps), cache_(ps.count(), -1) {}

  int operator()(int slot) {
    if (cache_[size_t(slot)] < 0) cache_[size_t(slot)] = tape_.param(store_.value(slot), slot);
    return cache_[size_t(slot)];
  }

 private:
  Tape& tape_;
  const ParamStore& store_;
  std::vector<int> cache_;
};

inline int affine(Tape& t, ParamBinder& p, int x, int w, int b) {
  return t.rowwise_add(t.matmul(x, p(w)), p(b));
}

inline int layer_norm(Tape& t, ParamBinder& p, int x, const LnSlots& ln) {
  return t.rowwise_add(t.rowwise_mul(t.layernorm_rows(x), p(ln.g)), p(ln.b));
}

inline int mha(Tape& t, ParamBinder& p, int q_in, int kv_in, const AttnSlots& s, int heads) {
  int dim = int(t.val(q_in).cols());
  int dh = dim / heads;
  int q = affine(t, p, q_in, s.wq, s.bq);
  int k = affine(t, p, kv_in, s.wk, s.bk);
  int v = affine(t, p, kv_in, s.wv, s.bv);
  std::vector<int> outs;
  outs.reserve(size_t(heads));
  double scale = 1.0 / std::sqrt(double(dh));
  for (int h = 0; h < heads; ++h) {
    int qh = t.slice_cols(q, h * dh, dh);
    int kh = t.slice_cols(k, h * dh, dh);
    int vh = t.slice_cols(v, h * dh, dh);
    int scores = t.mul_scalar(t.matmul_nt(qh, kh), scale);
    outs.push_back(t.matmul(t.softmax_rows(scores), vh));
  }
  return affine(t, p, t.concat_cols(outs), s.wo, s.bo);
}

inline int gated_rms_rows(Tape& t, ParamBinder& p, int x, int gamma_slot, int gate_slot) {
  int y = t.rowwise_mul(t.rmsnorm_rows(x), p(gamma_slot));
  return t.rowwise_mul(y, t.sigmoid_op(p(gate_slot)));
}

}  // namespace nn

/// Learnable vision-language fusion: projections, GatedRMS, and pre-norm
/// transformer decoder blocks with language queries over image keys/values.
class Adapter {
 public:
  struct Block {
    nn::LnSlots ln1, ln2, ln3;
    nn::AttnSlots self_attn, cross_attn;
    int ff_w1, ff_b1, ff_w2, ff_b2;
  };

  Adapter(ParamStore& ps, const AdapterConfig& cfg) : cfg_(cfg) {
    require(cfg.embed_dim % cfg.heads == 0, "embed dim not divisible by heads");
    Rng rng = make_rng(derive_seed(cfg.init_seed, 0xada));
    const int E = cfg.embed_dim;
    const double sc = 0.02;
    img_proj_w_ = ps.add("adapter.img_proj.w", truncated_normal(cfg.img_dim, E, rng, sc));
    img_proj_b_ = ps.add("adapter.img_proj.b", Mat::Zero(1, E));
    txt_proj_w_ = ps.add("adapter.txt_proj.w", truncated_normal(cfg.txt_dim, E, rng, sc));
    txt_proj_b_ = ps.add("adapter.txt_proj.b", Mat::Zero(1, E));
    grms_img_gamma_ = ps.add("adapter.grms_img.gamma", Mat::Ones(1, E));
    grms_img_gate_ = ps.add("adapter.grms_img.gate", Mat::Zero(1, E));
    grms_txt_gamma_ = ps.add("adapter.grms_txt.gamma", Mat::Ones(1, E));
    grms_txt_gate_ = ps.add("adapter.grms_txt.gate", Mat::Zero(1, E));
    for (int i = 0; i < cfg.blocks; ++i) {
      std::string pre = "adapter.block" + std::to_string(i);
      Block b;
      b.ln1 = nn::add_ln(ps, pre + ".ln1", E);
      b.self_attn = nn::add_attn(ps, pre + ".self", E, rng, sc);
      b.ln2 = nn::add_ln(ps, pre + ".ln2", E);
      b.cross_attn = nn::add_attn(ps, pre + ".cross", E, rng, sc);
      b.ln3 = nn::add_ln(ps, pre + ".ln3", E);
      b.ff_w1 = ps.add(pre + ".ff.w1", truncated_normal(E, cfg.ff_hidden, rng, sc));
      b.ff_b1 = ps.add(pre + ".ff.b1", Mat::Zero(1, cfg.ff_hidden));
      b.ff_w2 = ps.add(pre + ".ff.w2", Mat::Zero(cfg.ff_hidden, E));
      b.ff_b2 = ps.add(pre + ".ff.b2", Mat::Zero(1, E));
      blocks_.push_back(b);
    }
  }

  const AdapterConfig& config() const { return cfg_; }

  struct Output {
    int conditioned = -1;  // M x E node (M = L or L+N)
    int text_only = -1;    // L x E node
    int image_proj = -1;   // N x E node
  };

  /// text_node: L x txt_dim leaf, image_node: N x img_dim leaf.
  Output forward(Tape& t, nn::ParamBinder& p, int text_node, int image_node) const {
    require(t.val(text_node).rows() >= 1, "empty prompt");
    int img = nn::affine(t, p, image_node, img_proj_w_, img_proj_b_);
    img = nn::gated_rms_rows(t, p, img, grms_img_gamma_, grms_img_gate_);
    int x = nn::affine(t, p, text_node, txt_proj_w_, txt_proj_b_);
    x = nn::gated_rms_rows(t, p, x, grms_txt_gamma_, grms_txt_gate_);
    for (const auto& b : blocks_) {
      int h1 = nn::layer_norm(t, p, x, b.ln1);
      x = t.add(x, nn::mha(t, p, h1, h1, b.self_attn, cfg_.heads));
      x = t.add(x, nn::mha(t, p, nn::layer_norm(t, p, x, b.ln2), img, b.cross_attn, cfg_.heads));
      int h = nn::affine(t, p, nn::layer_norm(t, p, x, b.ln3), b.ff_w1, b.ff_b1);
      x = t.add(x, nn::affine(t, p, t.leaky_gelu_op(h), b.ff_w2, b.ff_b2));
    }
    Output out;
    out.text_only = x;
    out.image_proj = img;
    out.conditioned = cfg_.condition_includes_image_tokens ? t.concat_rows({x, img}) : x;
    return out;
  }

 private:
  AdapterConfig cfg_;
  int img_proj_w_, img_proj_b_, txt_proj_w_, txt_proj_b_;
  int grms_img_gamma_, grms_img_gate_, grms_txt_gamma_, grms_txt_gate_;
  std::vector<Block> blocks_;
};

}  // namespace benchtop
