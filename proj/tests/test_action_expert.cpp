#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "benchtop/action_expert.hpp"

using namespace benchtop;

namespace {

DiTConfig micro_cfg() {
  DiTConfig cfg;
  cfg.embed_dim = 16;
  cfg.ff_hidden = 32;
  cfg.blocks = 2;
  cfg.heads = 4;
  cfg.horizon = 4;
  return cfg;
}

void perturb_params(ParamStore& ps, std::uint64_t seed, double scale = 0.05) {
  Rng rng = make_rng(seed);
  for (int s = 0; s < ps.count(); ++s)
    ps.value(s) += random_normal(int(ps.value(s).rows()), int(ps.value(s).cols()), rng, scale);
}

}  // namespace

TEST_CASE("tau embedding basics") {
  RowVec s0 = tau_sinusoid(0.0);
  for (int k = 0; k < kTauSinDim / 2; ++k) {
    CHECK(s0[2 * k] == 0.0);
    CHECK(s0[2 * k + 1] == 1.0);
  }
  CHECK_THROWS_AS(tau_sinusoid(-0.1), BenchtopError);
  CHECK_THROWS_AS(tau_sinusoid(1.1), BenchtopError);

  ParamStore ps;
  ActionExpert dit(ps, micro_cfg());
  perturb_params(ps, 1);
  Tape t;
  nn::ParamBinder bind(t, ps);
  int a = dit.embed_tau(t, bind, 0.0);
  int b = dit.embed_tau(t, bind, 1.0);
  int a2 = dit.embed_tau(t, bind, 0.0);
  CHECK((t.val(a) - t.val(b)).norm() > 0.0);
  CHECK((t.val(a) - t.val(a2)).norm() == 0.0);
}

TEST_CASE("adaln is gated identity at init") {
  auto cfg = micro_cfg();
  ParamStore ps;
  ActionExpert dit(ps, cfg);
  Rng rng = make_rng(2);
  Mat x = random_normal(cfg.horizon, cfg.embed_dim, rng);
  Mat c = random_normal(1, cfg.embed_dim, rng);

  Tape t;
  nn::ParamBinder bind(t, ps);
  int mod_w = ps.find("dit.block0.mod_self.w");
  int mod_b = ps.find("dit.block0.mod_self.b");
  int out = dit.adaln_apply(t, bind, t.leaf(x), t.leaf(c), mod_w, mod_b, [&](int h) {
    // Any sublayer: the zero gate must erase it.
    return t.mul_scalar(h, 3.0);
  });
  CHECK((t.val(out) - x).norm() == 0.0);
}

TEST_CASE("adaln with gamma=beta=0, alpha=1 is a plain pre-norm residual") {
  auto cfg = micro_cfg();
  ParamStore ps;
  ActionExpert dit(ps, cfg);
  int mod_b = ps.find("dit.block0.mod_self.b");
  ps.value(mod_b).middleCols(2 * cfg.embed_dim, cfg.embed_dim).setOnes();  // alpha = 1

  Rng rng = make_rng(3);
  Mat x = random_normal(cfg.horizon, cfg.embed_dim, rng);
  Mat c = random_normal(1, cfg.embed_dim, rng);
  Tape t;
  nn::ParamBinder bind(t, ps);
  int out = dit.adaln_apply(t, bind, t.leaf(x), t.leaf(c), ps.find("dit.block0.mod_self.w"),
                            mod_b, [&](int h) { return t.mul_scalar(h, 2.0); });
  Tape ref;
  int ln = ref.layernorm_rows(ref.leaf(x));
  Mat expect = x + 2.0 * ref.val(ln);
  CHECK((t.val(out) - expect).norm() < 1e-12);
}

TEST_CASE("dit forward shape and zero output at init") {
  auto cfg = micro_cfg();
  ParamStore ps;
  ActionExpert dit(ps, cfg);
  Rng rng = make_rng(4);
  Mat chunk = random_normal(cfg.horizon, kActionDim, rng);
  Mat cond = random_normal(6, cfg.embed_dim, rng);

  Tape t;
  nn::ParamBinder bind(t, ps);
  int out = dit.forward(t, bind, t.leaf(chunk), 0.3, t.leaf(cond));
  CHECK(t.val(out).rows() == cfg.horizon);
  CHECK(t.val(out).cols() == kActionDim);
  CHECK(t.val(out).norm() == 0.0);  // zero-initialized output head
}

TEST_CASE("conditioning flows only through cross-attention") {
  auto cfg = micro_cfg();
  ParamStore ps;
  ActionExpert dit(ps, cfg);
  perturb_params(ps, 5);

  Rng rng = make_rng(6);
  Mat chunk = random_normal(cfg.horizon, kActionDim, rng);
  Mat cond_a = random_normal(6, cfg.embed_dim, rng);
  Mat cond_b = cond_a;
  cond_b(2, 3) += 1.0;

  auto run = [&] {
    Tape t;
    nn::ParamBinder bind(t, ps);
    return Mat(t.val(dit.forward(t, bind, t.leaf(chunk), 0.5, t.leaf(cond_a))));
  };
  auto run_b = [&] {
    Tape t;
    nn::ParamBinder bind(t, ps);
    return Mat(t.val(dit.forward(t, bind, t.leaf(chunk), 0.5, t.leaf(cond_b))));
  };
  CHECK((run() - run_b()).norm() > 0.0);

  // Zero every cross-attention tensor: the condition can no longer matter.
  for (int s = 0; s < ps.count(); ++s)
    if (ps.name(s).find(".cross") != std::string::npos) ps.value(s).setZero();
  CHECK((run() - run_b()).norm() == 0.0);
}

TEST_CASE("dit determinism and micro gradient check") {
  auto cfg = micro_cfg();
  ParamStore ps;
  ActionExpert dit(ps, cfg);
  perturb_params(ps, 7);

  Rng rng = make_rng(8);
  Mat chunk = random_normal(cfg.horizon, kActionDim, rng);
  Mat cond = random_normal(5, cfg.embed_dim, rng);
  Mat target = random_normal(cfg.horizon, kActionDim, rng);

  auto loss_fn = [&](std::vector<Mat>* grads) {
    Tape t;
    nn::ParamBinder bind(t, ps);
    int out = dit.forward(t, bind, t.leaf(chunk), 0.4, t.leaf(cond));
    int mse = t.mse_against(out, target);
    if (grads) t.backward(mse, grads);
    return t.val(mse)(0, 0);
  };
  CHECK(loss_fn(nullptr) == loss_fn(nullptr));

  std::vector<Mat> grads(size_t(ps.count()));
  loss_fn(&grads);
  Rng pick = make_rng(9);
  double max_rel = 0.0;
  const double h = 1e-6;
  for (int s = 0; s < ps.count(); ++s) {
    Mat& p = ps.value(s);
    int samples = std::min<int>(3, int(p.size()));
    for (int k = 0; k < samples; ++k) {
      int idx = int(pick() % std::uint64_t(p.size()));
      double keep = p.data()[idx];
      p.data()[idx] = keep + h;
      double up = loss_fn(nullptr);
      p.data()[idx] = keep - h;
      double dn = loss_fn(nullptr);
      p.data()[idx] = keep;
      double fd = (up - dn) / (2 * h);
      double an = grads[size_t(s)].size() ? grads[size_t(s)].data()[idx] : 0.0;
      max_rel = std::max(max_rel, std::abs(fd - an) / std::max({1e-4, std::abs(fd), std::abs(an)}));
    }
  }
  CHECK(max_rel < 1e-4);
}

TEST_CASE("parameter structure: exactly four cross-attention sublayers at 8 blocks") {
  DiTConfig cfg;  // defaults: 8 blocks
  int cross = 0;
  for (int i = 0; i < cfg.blocks; ++i)
    if (cfg.has_cross(i)) ++cross;
  CHECK(cross == 4);
}
