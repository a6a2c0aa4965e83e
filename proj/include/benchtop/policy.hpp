#pragma once

#include <memory>

#include "benchtop/config.hpp"
#include "benchtop/flow.hpp"

namespace benchtop {

/// Everything needed to run a trained policy: the run configuration, a
/// parameter store holding the chosen weight set (EMA by default), the two
/// transformer stacks, the frozen observation encoders built once, the prompt
/// vocabulary and the action normalization stats.
class PolicyBundle {
 public:
  PolicyBundle(RunConfig cfg, const Checkpoint& ck, bool use_ema = true)
      : cfg_(std::move(cfg)),
        adapter_(store_, cfg_.adapter_config()),
        dit_(store_, cfg_.dit_config()),
        enc_(cfg_.observation_encoder()),
        wenc_(enc_, cfg_.resolution),
        stats_(ck.stats) {
    vocab_.token_to_id = ck.vocab;
    require(int(ck.params.size()) == store_.count(), "checkpoint/config mismatch: tensor count");
    for (int s = 0; s < store_.count(); ++s) {
      const Mat& src = use_ema ? ck.ema[size_t(s)] : ck.params[size_t(s)].second;
      require(ck.params[size_t(s)].first == store_.name(s),
              "checkpoint/config mismatch: tensor name");
      require(src.rows() == store_.value(s).rows() && src.cols() == store_.value(s).cols(),
              "checkpoint/config mismatch: tensor shape");
      store_.value(s) = src;
    }
  }

  static PolicyBundle from_checkpoint(const Checkpoint& ck, bool use_ema = true) {
    return PolicyBundle(parse_config(ck.config_text), ck, use_ema);
  }

  static PolicyBundle from_file(const std::filesystem::path& path, bool use_ema = true) {
    return from_checkpoint(load_checkpoint(path), use_ema);
  }

  const RunConfig& config() const { return cfg_; }
  const ParamStore& params() const { return store_; }
  const PromptVocab& vocab() const { return vocab_; }
  const NormalizationStats& stats() const { return stats_; }

  std::vector<int> prompt_ids(const std::string& text) const {
    return tokenize_prompt(text, vocab_);
  }

  /// One denoising pass for a single observation window. The conditioning
  /// tokens are computed once and reused across all integration steps since
  /// they do not depend on the flow state.
  Mat predict(const ObservationWindow& win, Rng& rng) const {
    require(!win.prompt_ids.empty(), "empty prompt ids");
    TokenSequence image = wenc_.encode_images(win);
    TokenSequence text = embed_prompt(win.prompt_ids, vocab_, enc_.text_seed, enc_.text_dim);
    Mat cond;
    {
      Tape t;
      nn::ParamBinder bind(t, store_);
      auto out = adapter_.forward(t, bind, t.leaf(text.tokens), t.leaf(image.tokens));
      cond = t.val(out.conditioned);
    }
    auto field = [&](const Mat& a, double tau) {
      Tape t;
      nn::ParamBinder bind(t, store_);
      int vel = dit_.forward(t, bind, t.leaf(a), tau, t.leaf(cond));
      return t.val(vel);
    };
    return generate_chunk(field, cfg_.horizon, cfg_.flow, rng);
  }

  /// Predictor closure for the episode loop; the per-episode seed keeps the
  /// denoising noise reproducible and independent of the simulator stream.
  ChunkPredictor predictor(std::uint64_t episode_seed) const {
    auto rng = std::make_shared<Rng>(make_rng(derive_seed(episode_seed, 0x9e1)));
    return [this, rng](const ObservationWindow& win) { return predict(win, *rng); };
  }

 private:
  RunConfig cfg_;
  ParamStore store_;
  Adapter adapter_;
  ActionExpert dit_;
  ObservationEncoder enc_;
  WindowEncoder wenc_;
  PromptVocab vocab_;
  NormalizationStats stats_;
};

}  // namespace benchtop
