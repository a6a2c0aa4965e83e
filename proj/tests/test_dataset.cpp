#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "benchtop/dataset.hpp"

using namespace benchtop;

namespace {

EpisodeRecord make_episode(int T, std::uint64_t seed, int side = 8) {
  EpisodeRecord ep;
  ep.task_id = TaskId::Arrange;
  ep.prompt_text = "set the tube.";
  ep.rate_hz = 50.0;
  Rng rng = make_rng(seed);
  ep.actions = random_normal(T, kActionDim, rng, 1.0);
  ep.frames.resize(size_t(T));
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < kCameras; ++k) {
      Image im(side, side);
      for (auto& b : im.data) b = std::uint8_t(rng() & 0xff);
      ep.frames[size_t(t)][size_t(k)] = std::move(im);
    }
  return ep;
}

}  // namespace

TEST_CASE("quantiles interpolate order statistics") {
  // 101 samples 0..100: q-quantile lands exactly on q*100.
  EpisodeRecord ep;
  ep.actions = Mat::Zero(101, kActionDim);
  for (int t = 0; t <= 100; ++t) ep.actions(t, 0) = double(t);
  ep.frames.resize(101);
  auto st = compute_norm_stats({ep}, 0.01, 0.99);
  CHECK(st.lo[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(st.hi[0] == doctest::Approx(99.0).epsilon(1e-12));
}

TEST_CASE("constant dimension degenerates to lo == hi") {
  EpisodeRecord ep;
  ep.actions = Mat::Constant(10, kActionDim, 5.0);
  auto st = compute_norm_stats({ep});
  CHECK(st.lo[3] == 5.0);
  CHECK(st.hi[3] == 5.0);
  Vec y = normalize_action(ep.actions.row(0).transpose(), st);
  CHECK(y[3] == 0.0);
  Vec back = denormalize_action(y, st);
  CHECK(back[3] == 5.0);
}

TEST_CASE("stats applied to their own dataset leave most values strictly inside") {
  std::vector<EpisodeRecord> eps;
  for (int i = 0; i < 4; ++i) {
    EpisodeRecord ep;
    Rng rng = make_rng(100 + std::uint64_t(i));
    ep.actions = random_normal(250, kActionDim, rng, 2.0);
    eps.push_back(ep);
  }
  auto st = compute_norm_stats(eps);
  int inside = 0, total = 0;
  for (const auto& ep : eps)
    for (int t = 0; t < ep.steps(); ++t) {
      Vec y = normalize_action(ep.actions.row(t).transpose(), st);
      for (int d = 0; d < kActionDim; ++d) {
        ++total;
        if (y[d] > -1.0 && y[d] < 1.0) ++inside;
      }
    }
  CHECK(double(inside) / total >= 0.98);
}

TEST_CASE("normalize anchors, midpoint and clipping") {
  NormalizationStats st;
  st.lo = Vec::Constant(kActionDim, -2.0);
  st.hi = Vec::Constant(kActionDim, 6.0);
  Vec a = Vec::Constant(kActionDim, -2.0);
  CHECK(normalize_action(a, st)[0] == -1.0);
  a.setConstant(2.0);  // midpoint
  CHECK(normalize_action(a, st)[0] == 0.0);
  a.setConstant(6.0 + 1000.0);
  CHECK(normalize_action(a, st)[0] == 1.0);
}

TEST_CASE("normalize/denormalize round trips inside the anchor range") {
  Rng rng = make_rng(9);
  NormalizationStats st;
  for (int d = 0; d < kActionDim; ++d) {
    st.lo[d] = -1.0 - uniform01(rng);
    st.hi[d] = 1.0 + uniform01(rng);
  }
  for (int trial = 0; trial < 100; ++trial) {
    Vec a(kActionDim);
    for (int d = 0; d < kActionDim; ++d)
      a[d] = st.lo[d] + uniform01(rng) * (st.hi[d] - st.lo[d]);
    Vec back = denormalize_action(normalize_action(a, st), st);
    CHECK((back - a).norm() / std::max(1.0, a.norm()) < 1e-6);
  }
  CHECK_THROWS_AS(denormalize_action(Vec::Constant(kActionDim, 1.5), st), BenchtopError);
}

TEST_CASE("stats are permutation invariant") {
  auto e1 = make_episode(20, 1);
  auto e2 = make_episode(30, 2);
  auto e3 = make_episode(25, 3);
  auto a = compute_norm_stats({e1, e2, e3});
  auto b = compute_norm_stats({e3, e1, e2});
  CHECK((a.lo - b.lo).norm() == 0.0);
  CHECK((a.hi - b.hi).norm() == 0.0);
}

TEST_CASE("empty or invalid inputs are rejected") {
  CHECK_THROWS_WITH_AS(compute_norm_stats({}), "no data", BenchtopError);
  EpisodeRecord bad = make_episode(5, 4);
  bad.actions(2, 3) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(compute_norm_stats({bad}), "invalid episode", BenchtopError);
}

TEST_CASE("training item windowing and chunk padding") {
  auto ep = make_episode(100, 5);
  auto st = compute_norm_stats({ep});
  std::vector<int> ids{2, 3, 4};

  auto at_start = make_training_item(ep, 0, st, ids);
  REQUIRE(at_start.window.frames.size() == 3);
  CHECK(at_start.window.frames[0][0] == ep.frames[0][0]);
  CHECK(at_start.window.frames[1][0] == ep.frames[0][0]);
  CHECK(at_start.window.frames[2][0] == ep.frames[0][0]);

  auto at_end = make_training_item(ep, 99, st, ids);
  REQUIRE(at_end.chunk.rows() == 32);
  Vec last = normalize_action(ep.actions.row(99).transpose(), st);
  for (int h = 0; h < 32; ++h) CHECK((at_end.chunk.row(h).transpose() - last).norm() == 0.0);

  auto mid = make_training_item(ep, 10, st, ids);
  for (int h = 0; h < 32; ++h) {
    Vec expect = normalize_action(ep.actions.row(10 + h).transpose(), st);
    CHECK((mid.chunk.row(h).transpose() - expect).norm() == 0.0);
  }
  CHECK(mid.anchor_step == 10);
  for (int h = 0; h < 32; ++h)
    for (int d = 0; d < kActionDim; ++d) {
      CHECK(mid.chunk(h, d) >= -1.0);
      CHECK(mid.chunk(h, d) <= 1.0);
    }

  CHECK_THROWS_AS(make_training_item(ep, 100, st, ids), BenchtopError);
  CHECK_THROWS_AS(make_training_item(ep, -1, st, ids), BenchtopError);
}

TEST_CASE("episode save/load round trip is bit exact") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "benchtop_ep_test";
  fs::remove_all(dir);
  auto ep = make_episode(7, 6);
  save_episode(ep, dir);
  // Actions survive the f32 payload because the generator is rounded first.
  for (int t = 0; t < ep.steps(); ++t)
    for (int d = 0; d < kActionDim; ++d) ep.actions(t, d) = double(float(ep.actions(t, d)));
  save_episode(ep, dir);
  auto back = load_episode(dir);
  CHECK(back.task_id == ep.task_id);
  CHECK(back.prompt_text == ep.prompt_text);
  CHECK(back.rate_hz == ep.rate_hz);
  CHECK((back.actions - ep.actions).norm() == 0.0);
  for (int t = 0; t < ep.steps(); ++t)
    for (int k = 0; k < kCameras; ++k) CHECK(back.frames[size_t(t)][size_t(k)] == ep.frames[size_t(t)][size_t(k)]);

  SUBCASE("manifest step count mismatch") {
    auto meta = detail::read_file(dir / "meta.json");
    std::string s(meta.begin(), meta.end());
    auto pos = s.find("\"steps\": 7");
    REQUIRE(pos != std::string::npos);
    s.replace(pos, 10, "\"steps\": 9");
    detail::write_file(dir / "meta.json", s.data(), s.size());
    CHECK_THROWS_AS(load_episode(dir), BenchtopError);
  }
  SUBCASE("truncated camera array") {
    auto buf = detail::read_file(dir / "cam1.rgb8");
    detail::write_file(dir / "cam1.rgb8", buf.data(), buf.size() - 1);
    CHECK_THROWS_AS(load_episode(dir), BenchtopError);
  }
  fs::remove_all(dir);
}

TEST_CASE("norm stats serialize round trip") {
  namespace fs = std::filesystem;
  auto p = fs::temp_directory_path() / "benchtop_stats.json";
  NormalizationStats st;
  Rng rng = make_rng(12);
  for (int d = 0; d < kActionDim; ++d) {
    st.lo[d] = -uniform01(rng);
    st.hi[d] = uniform01(rng);
  }
  save_norm_stats(st, p);
  auto back = load_norm_stats(p);
  CHECK((back.lo - st.lo).norm() == 0.0);
  CHECK((back.hi - st.hi).norm() == 0.0);
  CHECK(back.q_lo == st.q_lo);
  fs::remove(p);
}
