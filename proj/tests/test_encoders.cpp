#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "benchtop/encoders.hpp"

using namespace benchtop;

namespace {

Image noise_image(int side, std::uint64_t seed) {
  Image im(side, side);
  Rng rng = make_rng(seed);
  for (auto& b : im.data) b = std::uint8_t(rng() & 0xff);
  return im;
}

}  // namespace

TEST_CASE("patchify shapes and scaling") {
  CHECK(patchify(noise_image(64, 1), 8).rows() == 64);
  CHECK(patchify(noise_image(64, 1), 8).cols() == 192);
  CHECK(patchify(noise_image(224, 2), 16).rows() == 196);
  Mat black = patchify(Image(16, 16), 8);
  CHECK(black.norm() == 0.0);
  CHECK_THROWS_AS(patchify(noise_image(60, 3), 8), BenchtopError);
  Mat p = patchify(noise_image(16, 4), 8);
  CHECK(p.minCoeff() >= 0.0);
  CHECK(p.maxCoeff() <= 1.0);
}

TEST_CASE("frozen encoder determinism and seed sensitivity") {
  FrozenEncoderConfig cfg;
  cfg.seed = 1;
  cfg.patch_size = 8;
  cfg.out_dim = 16;
  cfg.hidden_dim = 24;
  Image im = noise_image(16, 7);
  Mat patches = patchify(im, 8);
  FrozenEncoder enc_a(cfg, int(patches.cols()));
  FrozenEncoder enc_b(cfg, int(patches.cols()));
  Mat a = enc_a.encode(patches, 2).tokens;
  Mat b = enc_b.encode(patches, 2).tokens;
  CHECK((a - b).norm() == 0.0);

  cfg.seed = 2;
  FrozenEncoder enc_c(cfg, int(patches.cols()));
  CHECK((a - enc_c.encode(patches, 2).tokens).norm() > 0.0);

  // All-zero image: every token is the pure bias path, all rows identical.
  Mat zero_tokens = enc_a.encode(patchify(Image(16, 16), 8), 2).tokens;
  for (int r = 1; r < zero_tokens.rows(); ++r)
    CHECK((zero_tokens.row(r) - zero_tokens.row(0)).norm() == 0.0);
}

TEST_CASE("feature fusion concatenates and preserves the geometric stream") {
  FrozenEncoderConfig g{1, 8, 32, 16};
  FrozenEncoderConfig v{2, 8, 64, 16};
  Mat patches = patchify(noise_image(64, 9), 8);
  FrozenEncoder ge(g, int(patches.cols()));
  FrozenEncoder ve(v, int(patches.cols()));
  auto gt = ge.encode(patches, 8);
  auto vt = ve.encode(patches, 8);
  auto fused = fuse_feature_dim(gt, vt);
  CHECK(fused.count() == 64);
  CHECK(fused.dim() == 96);
  CHECK((fused.tokens.leftCols(32) - gt.tokens).norm() == 0.0);

  TokenSequence zero_geom = gt;
  zero_geom.tokens.setZero();
  auto fused2 = fuse_feature_dim(zero_geom, vt);
  CHECK(fused2.tokens.leftCols(32).norm() == 0.0);
  CHECK((fused2.tokens.rightCols(64) - vt.tokens).norm() == 0.0);

  TokenSequence short_geom = gt;
  short_geom.tokens = gt.tokens.topRows(10);
  short_geom.meta.resize(10);
  CHECK_THROWS_AS(fuse_feature_dim(short_geom, vt), BenchtopError);
}

TEST_CASE("vocab and tokenizer") {
  auto vocab = build_vocab({"brush the tube.", "set the tube.", "pour powder"});
  auto ids = tokenize_prompt("brush the tube.", vocab);
  CHECK(ids.size() == 3);
  for (int id : ids) CHECK(id >= 2);
  CHECK(tokenize_prompt("", vocab) == std::vector<int>{kPadId});
  auto oov = tokenize_prompt("zebra", vocab);
  CHECK(oov == std::vector<int>{kUnkId});
  CHECK(tokenize_prompt("BRUSH The tube", vocab) == ids);

  auto p = std::filesystem::temp_directory_path() / "benchtop_vocab.json";
  save_vocab(vocab, p);
  auto back = load_vocab(p);
  CHECK(back.token_to_id == vocab.token_to_id);
  std::filesystem::remove(p);
}

TEST_CASE("prompt embedding is frozen and positional") {
  auto vocab = build_vocab({"a b c d"});
  std::vector<int> ids{2, 3, 4, 2};  // same word at positions 0 and 3
  auto e1 = embed_prompt(ids, vocab, 5, 32);
  auto e2 = embed_prompt(ids, vocab, 5, 32);
  CHECK((e1.tokens - e2.tokens).norm() == 0.0);

  Mat pos = sinusoid_table(4, 32);
  RowVec delta = e1.tokens.row(0) - e1.tokens.row(3);
  CHECK((delta - (pos.row(0) - pos.row(3))).norm() < 1e-12);

  auto pad = embed_prompt({kPadId}, vocab, 5, 32);
  RowVec expect = frozen_embedding_row(5, kPadId, 32) + pos.row(0);
  CHECK((pad.tokens.row(0) - expect).norm() == 0.0);

  CHECK_THROWS_AS(embed_prompt({99}, vocab, 5, 32), BenchtopError);
}

TEST_CASE("observation assembly counts and locality") {
  ObservationEncoder enc;
  enc.geom_cfg = {1, 8, 8, 16};
  enc.vl_cfg = {2, 8, 16, 16};
  enc.text_dim = 24;
  ObservationWindow win;
  for (int f = 0; f < 3; ++f) {
    std::array<Image, 3> frame;
    for (int c = 0; c < 3; ++c) frame[size_t(c)] = noise_image(16, std::uint64_t(10 + f * 3 + c));
    win.frames.push_back(frame);
  }
  win.prompt_ids = {2, 3};
  auto vocab = build_vocab({"a b"});
  auto [img, txt] = assemble_observation_tokens(win, enc, vocab);
  CHECK(img.count() == 3 * 3 * 4);  // (W+1) * cameras * patches
  CHECK(img.dim() == 24);
  CHECK(txt.count() == 2);

  // Change only frame 0 of camera 0: exactly its 4 token rows change.
  ObservationWindow win2 = win;
  win2.frames[0][0] = noise_image(16, 999);
  auto img2 = encode_window_images(win2, enc);
  int changed = 0;
  for (int r = 0; r < img.count(); ++r)
    if ((img.tokens.row(r) - img2.tokens.row(r)).norm() > 0.0) ++changed;
  CHECK(changed == 4);
  for (int r = 0; r < 4; ++r) {
    CHECK(img.meta[size_t(r)].camera_id == 0);
    CHECK(img.meta[size_t(r)].frame_offset == 0);
  }
}

TEST_CASE("single-stream ablation modes") {
  ObservationEncoder enc;
  enc.geom_cfg = {1, 8, 8, 16};
  enc.vl_cfg = {2, 8, 16, 16};
  ObservationWindow win;
  std::array<Image, 3> frame;
  for (int c = 0; c < 3; ++c) frame[size_t(c)] = noise_image(16, std::uint64_t(c));
  win.frames.push_back(frame);
  win.prompt_ids = {2};

  enc.use_vl = false;
  CHECK(encode_window_images(win, enc).dim() == 8);
  enc.use_vl = true;
  enc.use_geom = false;
  CHECK(encode_window_images(win, enc).dim() == 16);
  enc.use_vl = false;
  CHECK_THROWS_AS(encode_window_images(win, enc), BenchtopError);
}
