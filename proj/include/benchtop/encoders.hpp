#pragma once

#include <cctype>
#include <fstream>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "benchtop/common.hpp"
#include "benchtop/dataset.hpp"

namespace benchtop {

/// Seeded random-feature patch encoder standing in for a pretrained vision
/// backbone. Weights are regenerated from the seed on construction and are
/// never trained.
struct FrozenEncoderConfig {
  std::uint64_t seed = 1;
  int patch_size = 8;
  int out_dim = 32;
  int hidden_dim = 64;
};

enum class TokenSource { Image, Text };

struct TokenMeta {
  TokenSource source = TokenSource::Image;
  int camera_id = -1;
  int frame_offset = 0;  // 0 = oldest frame in the window
  int patch_row = -1;
  int patch_col = -1;
  int text_position = -1;
};

struct TokenSequence {
  Mat tokens;  // N x D
  std::vector<TokenMeta> meta;

  int count() const { return int(tokens.rows()); }
  int dim() const { return int(tokens.cols()); }
};

/// Splits an image into non-overlapping patches in raster order, pixel values
/// scaled to [0,1]. Output is P x (ps*ps*3).
inline Mat patchify(const Image& im, int patch_size) {
  require(patch_size >= 1 && im.height % patch_size == 0 && im.width % patch_size == 0,
          "image sides not divisible by patch size");
  int rows = im.height / patch_size, cols = im.width / patch_size;
  Mat out(rows * cols, patch_size * patch_size * 3);
  for (int pr = 0; pr < rows; ++pr)
    for (int pc = 0; pc < cols; ++pc) {
      int p = pr * cols + pc;
      int i = 0;
      for (int r = 0; r < patch_size; ++r)
        for (int c = 0; c < patch_size; ++c) {
          const auto* px = im.px(pr * patch_size + r, pc * patch_size + c);
          out(p, i++) = px[0] / 255.0;
          out(p, i++) = px[1] / 255.0;
          out(p, i++) = px[2] / 255.0;
        }
    }
  return out;
}

class FrozenEncoder {
 public:
  explicit FrozenEncoder(const FrozenEncoderConfig& cfg, int patch_dim)
      : cfg_(cfg), patch_dim_(patch_dim) {
    require(cfg.out_dim >= 1 && cfg.hidden_dim >= 1, "encoder dims must be >= 1");
    Rng rng = make_rng(derive_seed(cfg.seed, 0x5ee0));
    w1_ = random_normal(patch_dim, cfg.hidden_dim, rng, 1.0 / std::sqrt(double(patch_dim)));
    b1_ = random_normal(1, cfg.hidden_dim, rng, 0.1);
    w2_ = random_normal(cfg.hidden_dim, cfg.out_dim, rng, 1.0 / std::sqrt(double(cfg.hidden_dim)));
    b2_ = random_normal(1, cfg.out_dim, rng, 0.1);
  }

  const FrozenEncoderConfig& config() const { return cfg_; }

  /// patches: P x patch_dim -> tokens P x out_dim.
  TokenSequence encode(const Mat& patches, int patches_per_row) const {
    require(patches.cols() == patch_dim_, "patch width mismatch");
    Mat h = (patches * w1_).rowwise() + b1_.row(0);
    h = h.unaryExpr([](double x) { return leaky_gelu(x); });
    TokenSequence seq;
    seq.tokens = (h * w2_).rowwise() + b2_.row(0);
    seq.meta.resize(size_t(patches.rows()));
    for (int p = 0; p < patches.rows(); ++p) {
      seq.meta[size_t(p)].source = TokenSource::Image;
      seq.meta[size_t(p)].patch_row = p / patches_per_row;
      seq.meta[size_t(p)].patch_col = p % patches_per_row;
    }
    return seq;
  }

 private:
  FrozenEncoderConfig cfg_;
  int patch_dim_;
  Mat w1_, b1_, w2_, b2_;
};

/// Concatenates two token streams along the feature dimension.
inline TokenSequence fuse_feature_dim(const TokenSequence& geom, const TokenSequence& vl) {
  require(geom.count() == vl.count(), "token count mismatch");
  for (int i = 0; i < geom.count(); ++i) {
    const auto& a = geom.meta[size_t(i)];
    const auto& b = vl.meta[size_t(i)];
    require(a.source == b.source && a.patch_row == b.patch_row && a.patch_col == b.patch_col &&
                a.camera_id == b.camera_id && a.frame_offset == b.frame_offset,
            "token meta mismatch");
  }
  TokenSequence out;
  out.tokens.resize(geom.count(), geom.dim() + vl.dim());
  out.tokens.leftCols(geom.dim()) = geom.tokens;
  out.tokens.rightCols(vl.dim()) = vl.tokens;
  out.meta = geom.meta;
  return out;
}

// ---------------------------------------------------------------------------
// Prompt vocabulary and embedding
// ---------------------------------------------------------------------------

constexpr int kPadId = 0;
constexpr int kUnkId = 1;

struct PromptVocab {
  std::map<std::string, int> token_to_id;  // content words start at id 2

  int size() const { return int(token_to_id.size()) + 2; }
};

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(char(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

inline PromptVocab build_vocab(const std::vector<std::string>& prompts) {
  require(!prompts.empty(), "empty prompt corpus");
  PromptVocab v;
  int next = 2;
  for (const auto& p : prompts)
    for (const auto& w : split_words(p))
      if (v.token_to_id.emplace(w, next).second) ++next;
  return v;
}

inline std::vector<int> tokenize_prompt(const std::string& text, const PromptVocab& v) {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) {
    auto it = v.token_to_id.find(w);
    ids.push_back(it == v.token_to_id.end() ? kUnkId : it->second);
  }
  if (ids.empty()) ids.push_back(kPadId);
  return ids;
}

inline void save_vocab(const PromptVocab& v, const std::filesystem::path& path) {
  nlohmann::json j(v.token_to_id);
  std::ofstream f(path);
  f << j.dump(2) << "\n";
  require(f.good(), "write failed: " + path.string());
}

inline PromptVocab load_vocab(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open: " + path.string());
  nlohmann::json j;
  f >> j;
  PromptVocab v;
  v.token_to_id = j.get<std::map<std::string, int>>();
  return v;
}

/// Sinusoidal encoding over positions 0..n-1, dim channels.
inline Mat sinusoid_table(int n, int dim, double max_period = 1e4) {
  Mat out(n, dim);
  for (int p = 0; p < n; ++p)
    for (int c = 0; c < dim; ++c) {
      int pair = c / 2;
      double freq = std::pow(max_period, -2.0 * pair / double(dim));
      out(p, c) = (c % 2 == 0) ? std::sin(p * freq) : std::cos(p * freq);
    }
  return out;
}

// Frozen embedding row for a token id: deterministic in (seed, id), so the
// table never needs to be materialized or serialized.
inline RowVec frozen_embedding_row(std::uint64_t seed, int id, int dim) {
  Rng rng = make_rng(derive_seed(seed, 0xe3bed, std::uint64_t(id)));
  return random_normal(1, dim, rng, 1.0).row(0);
}

inline TokenSequence embed_prompt(const std::vector<int>& ids, const PromptVocab& v,
                                  std::uint64_t seed, int dim) {
  TokenSequence seq;
  seq.tokens.resize(int(ids.size()), dim);
  seq.meta.resize(ids.size());
  Mat pos = sinusoid_table(int(ids.size()), dim);
  for (int i = 0; i < int(ids.size()); ++i) {
    require(ids[size_t(i)] >= 0 && ids[size_t(i)] < v.size(), "token id out of vocab range");
    seq.tokens.row(i) = frozen_embedding_row(seed, ids[size_t(i)], dim) + pos.row(i);
    seq.meta[size_t(i)].source = TokenSource::Text;
    seq.meta[size_t(i)].text_position = i;
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Observation assembly
// ---------------------------------------------------------------------------

struct ObservationEncoder {
  FrozenEncoderConfig geom_cfg;
  FrozenEncoderConfig vl_cfg;
  std::uint64_t text_seed = 3;
  int text_dim = 64;
  bool use_geom = true;  // encoder-ablation switches
  bool use_vl = true;
};

/// Holds both frozen encoders built once; encoding a window fuses the two
/// streams along the feature dimension, adds frozen positional/camera/frame
/// encodings and concatenates along the token axis (frame offset ascending,
/// then camera id).
class WindowEncoder {
 public:
  WindowEncoder(const ObservationEncoder& enc, int image_side)
      : enc_(enc),
        patch_dim_(enc.geom_cfg.patch_size * enc.geom_cfg.patch_size * 3),
        geom_(enc.geom_cfg, patch_dim_),
        vl_(enc.vl_cfg, patch_dim_) {
    require(enc.use_geom || enc.use_vl, "at least one encoder stream required");
    require(enc.geom_cfg.patch_size == enc.vl_cfg.patch_size,
            "patch size mismatch between streams");
    per_row_ = image_side / enc.geom_cfg.patch_size;
    fused_dim_ = (enc.use_geom ? enc.geom_cfg.out_dim : 0) + (enc.use_vl ? enc.vl_cfg.out_dim : 0);
  }

  int fused_dim() const { return fused_dim_; }

  TokenSequence encode_images(const ObservationWindow& win) const {
    require(!win.frames.empty(), "empty window");
    int ps = enc_.geom_cfg.patch_size;
    std::vector<TokenSequence> parts;
    for (int f = 0; f < int(win.frames.size()); ++f) {
      for (int cam = 0; cam < kCameras; ++cam) {
        Mat patches = patchify(win.frames[size_t(f)][size_t(cam)], ps);
        TokenSequence fused;
        if (enc_.use_geom && enc_.use_vl)
          fused = fuse_feature_dim(geom_.encode(patches, per_row_), vl_.encode(patches, per_row_));
        else if (enc_.use_geom)
          fused = geom_.encode(patches, per_row_);
        else
          fused = vl_.encode(patches, per_row_);

        // Frozen patch-position encoding plus camera/frame tags.
        fused.tokens += sinusoid_table(fused.count(), fused_dim_);
        RowVec cam_emb = 0.25 * frozen_embedding_row(enc_.text_seed, 100 + cam, fused_dim_);
        RowVec frame_emb = 0.25 * frozen_embedding_row(enc_.text_seed, 200 + f, fused_dim_);
        fused.tokens.rowwise() += (cam_emb + frame_emb);
        for (auto& m : fused.meta) {
          m.camera_id = cam;
          m.frame_offset = f;
        }
        parts.push_back(std::move(fused));
      }
    }
    TokenSequence out;
    int total = 0;
    for (const auto& p : parts) total += p.count();
    out.tokens.resize(total, fused_dim_);
    int off = 0;
    for (auto& p : parts) {
      out.tokens.middleRows(off, p.count()) = p.tokens;
      out.meta.insert(out.meta.end(), p.meta.begin(), p.meta.end());
      off += p.count();
    }
    return out;
  }

 private:
  ObservationEncoder enc_;
  int patch_dim_;
  FrozenEncoder geom_;
  FrozenEncoder vl_;
  int per_row_ = 0;
  int fused_dim_ = 0;
};

inline TokenSequence encode_window_images(const ObservationWindow& win,
                                          const ObservationEncoder& enc) {
  return WindowEncoder(enc, win.frames.at(0)[0].width).encode_images(win);
}

inline std::pair<TokenSequence, TokenSequence> assemble_observation_tokens(
    const ObservationWindow& win, const ObservationEncoder& enc, const PromptVocab& vocab) {
  require(!win.prompt_ids.empty(), "empty prompt ids");
  return {encode_window_images(win, enc),
          embed_prompt(win.prompt_ids, vocab, enc.text_seed, enc.text_dim)};
}

}  // namespace benchtop
