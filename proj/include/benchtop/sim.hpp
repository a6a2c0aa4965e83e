#pragma once

#include <cmath>
#include <optional>

#include "benchtop/dataset.hpp"

namespace benchtop {

// ---------------------------------------------------------------------------
// Arms and kinematics
// ---------------------------------------------------------------------------

struct ArmModel {
  double base_x = 0.0, base_y = 0.0;
  std::array<double, 3> link{0.30, 0.25, 0.20};
  double rate_limit = 0.03;  // radians per tick
};

inline ArmModel left_arm() { return ArmModel{-0.25, 0.0}; }
inline ArmModel right_arm() { return ArmModel{0.25, 0.0}; }

struct EePose {
  double x = 0.0, y = 0.0, heading = 0.0;
};

using Joints = Eigen::Vector3d;

inline double total_reach(const ArmModel& a) { return a.link[0] + a.link[1] + a.link[2]; }

/// Joint positions along the chain: base, elbow1, elbow2, end effector.
inline std::array<std::pair<double, double>, 4> fk_points(const ArmModel& arm, const Joints& q) {
  std::array<std::pair<double, double>, 4> p;
  p[0] = {arm.base_x, arm.base_y};
  double a = 0.0;
  for (int i = 0; i < 3; ++i) {
    a += q[i];
    p[size_t(i) + 1] = {p[size_t(i)].first + arm.link[size_t(i)] * std::cos(a),
                        p[size_t(i)].second + arm.link[size_t(i)] * std::sin(a)};
  }
  return p;
}

inline EePose forward_kinematics(const ArmModel& arm, const Joints& q) {
  require(q.allFinite(), "non-finite joints");
  auto p = fk_points(arm, q);
  return EePose{p[3].first, p[3].second, q[0] + q[1] + q[2]};
}

inline double wrap_angle(double a) {
  while (a > kPi) a -= 2 * kPi;
  while (a < -kPi) a += 2 * kPi;
  return a;
}

/// One damped-least-squares step toward target_xy; if heading_weight > 0 the
/// end-effector heading is driven toward target_heading as a third task row.
inline Joints ik_step(const ArmModel& arm, const Joints& q, double tx, double ty,
                      double target_heading = 0.0, double heading_weight = 0.0) {
  auto p = fk_points(arm, q);
  int rows = heading_weight > 0.0 ? 3 : 2;
  Eigen::MatrixXd J(rows, 3);
  for (int i = 0; i < 3; ++i) {
    // Position columns: perpendicular of (ee - joint_i).
    J(0, i) = -(p[3].second - p[size_t(i)].second);
    J(1, i) = p[3].first - p[size_t(i)].first;
    if (rows == 3) J(2, i) = heading_weight;
  }
  Eigen::VectorXd e(rows);
  e[0] = tx - p[3].first;
  e[1] = ty - p[3].second;
  // Clamp the positional error so steps stay well-conditioned far from goal.
  double en = std::hypot(e[0], e[1]);
  if (en > 0.12) {
    e[0] *= 0.12 / en;
    e[1] *= 0.12 / en;
  }
  if (rows == 3)
    e[2] = heading_weight * wrap_angle(target_heading - (q[0] + q[1] + q[2]));
  const double lambda = 0.1;
  Eigen::MatrixXd JJt = J * J.transpose() + lambda * lambda * Eigen::MatrixXd::Identity(rows, rows);
  Eigen::VectorXd dq = J.transpose() * JJt.ldlt().solve(e);
  for (int i = 0; i < 3; ++i) dq[i] = clamp(dq[i], -0.25, 0.25);
  Joints out = q + dq;
  for (int i = 0; i < 3; ++i) out[i] = clamp(out[i], -kPi, kPi);
  return out;
}

struct IkResult {
  Joints joints;
  bool reached = false;
};

/// Iterated damped-least-squares IK. Reachable targets converge to < 1e-3 m;
/// unreachable targets leave the arm stretched toward the target (flagged).
/// If the descent from the current joints stalls (joint-limit wall or a
/// singular stretch), canonical restart postures pointing at the target are
/// tried and the best attempt wins.
inline IkResult ik_solve(const ArmModel& arm, Joints q, double tx, double ty, int max_iters = 200,
                         std::optional<double> heading = std::nullopt,
                         double heading_weight = 0.5) {
  auto attempt = [&](Joints start) {
    for (int it = 0; it < max_iters; ++it) {
      start = ik_step(arm, start, tx, ty, heading.value_or(0.0), heading ? heading_weight : 0.0);
      auto ee = forward_kinematics(arm, start);
      if (std::hypot(ee.x - tx, ee.y - ty) < 1e-4 &&
          (!heading || std::abs(wrap_angle(*heading - ee.heading)) < 2e-3))
        break;
    }
    auto ee = forward_kinematics(arm, start);
    return std::make_pair(start, std::hypot(ee.x - tx, ee.y - ty));
  };

  auto [bq, berr] = attempt(q);
  if (berr >= 1e-3) {
    double phi = std::atan2(ty - arm.base_y, tx - arm.base_x);
    for (const Joints& seed :
         {Joints(phi, 0.0, 0.0), Joints(phi, 0.8, -0.8), Joints(phi, -0.8, 0.8)}) {
      auto [aq, aerr] = attempt(seed);
      if (aerr < berr) {
        bq = aq;
        berr = aerr;
      }
      if (berr < 1e-3) break;
    }
  }
  return IkResult{bq, berr < 1e-3};
}

// ---------------------------------------------------------------------------
// World constants
// ---------------------------------------------------------------------------

namespace world {
constexpr double kGraspRadius = 0.02;
constexpr double kTubeRadius = 0.035;
constexpr double kTubeMouthOffset = 0.04;  // mouth sits above the tube center
constexpr double kBoreRadius = 0.05;       // brush counts scrubs inside this
constexpr double kToolLength = 0.06;       // brush/spoon tip offset from gripper
constexpr double kPourAngle = -1.2;        // heading below this pours
constexpr double kMouthRadius = 0.08;      // pour lands in the tube inside this
constexpr int kGrainTotal = 100;
constexpr int kSpoonCapacity = 30;
constexpr int kGrainRate = 3;  // grains per tick while scooping/pouring
constexpr double kGripRate = 0.08;

// Arrange
constexpr double kSlotX = -0.05, kSlotY = 0.55;
constexpr double kTrayX = 0.375, kTrayY = 0.40, kTrayHX = 0.125, kTrayHY = 0.10;
// Clean
constexpr double kLeftTrayX = -0.35, kLeftTrayY = 0.375, kLeftTrayHX = 0.11, kLeftTrayHY = 0.08;
constexpr double kHoldX = 0.15, kHoldY = 0.18;
constexpr double kBrushHomeX = 0.50, kBrushHomeY = 0.30;
// Pour
constexpr double kPourTubeX = 0.20, kPourTubeY = 0.18;
constexpr double kBinX = 0.45, kBinY = 0.25, kBinHX = 0.08, kBinHY = 0.05;
constexpr double kSpoonHomeX = 0.55, kSpoonHomeY = 0.12;
}  // namespace world

inline Joints home_joints(bool left) {
  return left ? Joints(kPi / 2, kPi / 2, 0.0) : Joints(kPi / 2, -kPi / 2, 0.0);
}

// ---------------------------------------------------------------------------
// Tasks and state
// ---------------------------------------------------------------------------

enum class PromptVariant { Detailed, Concise, Irrelevant };

inline std::string variant_name(PromptVariant v) {
  switch (v) {
    case PromptVariant::Detailed: return "detailed";
    case PromptVariant::Concise: return "concise";
    case PromptVariant::Irrelevant: return "irrelevant";
  }
  return "?";
}

inline PromptVariant variant_from_name(const std::string& s) {
  if (s == "detailed") return PromptVariant::Detailed;
  if (s == "concise") return PromptVariant::Concise;
  if (s == "irrelevant") return PromptVariant::Irrelevant;
  fail("unknown prompt variant: " + s);
}

struct TaskSpec {
  TaskId task = TaskId::Arrange;
  bool multi_goal = false;
  PromptVariant variant = PromptVariant::Detailed;
  int episode_cap = 300;
  double slot_tolerance = 0.01;
  int required_scrubs = 3;
  double transfer_fraction = 0.6;
  double spill_fraction = 0.1;

  void validate() const {
    require(slot_tolerance > 0 && transfer_fraction > 0 && spill_fraction > 0,
            "tolerances must be positive");
    require(episode_cap >= 1, "episode cap must be >= 1");
    require(!multi_goal || task == TaskId::Arrange, "multi-goal is an Arrange variant");
  }

  static TaskSpec for_task(TaskId t, bool multi = false) {
    TaskSpec s;
    s.task = t;
    s.multi_goal = multi;
    s.episode_cap = t == TaskId::Arrange ? 300 : (t == TaskId::Clean ? 500 : 400);
    return s;
  }
};

inline std::string tube_color_name(int color) { return color == 0 ? "cyan" : "white"; }

inline std::string prompt_for(const TaskSpec& spec, int target_color = 0) {
  if (spec.variant == PromptVariant::Irrelevant)
    return "this is a test sentence that is not related to the robot's task.";
  bool detailed = spec.variant == PromptVariant::Detailed;
  switch (spec.task) {
    case TaskId::Clean:
      return detailed ? "take the tube with left hand and scrub with the brush in your right hand."
                      : "brush the tube.";
    case TaskId::Arrange: {
      std::string tube = spec.multi_goal ? tube_color_name(target_color) + " tube" : "tube";
      return detailed ? "pick up the " + tube +
                            " placed in the box with right hand, receive it with left hand, and "
                            "place it in the tube rack."
                      : "set the " + tube + ".";
    }
    case TaskId::Pour:
      return detailed ? "take the tube with left hand and scoop up the powder with right hand and "
                        "pour it into the tube."
                      : "put powder into a tube.";
  }
  return "";
}

struct SimObject {
  double x = 0.0, y = 0.0, angle = 0.0;
  bool operator==(const SimObject& o) const { return x == o.x && y == o.y && angle == o.angle; }
};

// kind: 0 = tube (with index), 1 = brush, 2 = spoon.
struct Attachment {
  int kind = -1;
  int index = 0;
  double rel_x = 0.0, rel_y = 0.0, rel_angle = 0.0;
  bool active() const { return kind >= 0; }
  bool operator==(const Attachment& o) const {
    return kind == o.kind && index == o.index && rel_x == o.rel_x && rel_y == o.rel_y &&
           rel_angle == o.rel_angle;
  }
};

struct SimState {
  TaskId task = TaskId::Arrange;
  bool multi_goal = false;
  Joints ljoints = home_joints(true);
  Joints rjoints = home_joints(false);
  double lgrip = 1.0, rgrip = 1.0;

  std::vector<SimObject> tubes;
  std::vector<int> tube_color;  // 0 cyan, 1 white
  int target_tube = 0;
  SimObject brush, spoon;
  bool has_brush = false, has_spoon = false;
  Attachment lattach, rattach;

  int bin_amount = 0, spoon_amount = 0, tube_amount = 0, spilled_amount = 0;
  int total_grains = 0;

  int scrub_cycles = 0;
  int scrub_prev_sign = 0;
  double scrub_prev_tip_y = 0.0;
  bool scrub_has_prev = false;
  double prev_spoon_heading = 0.0;
  bool has_prev_spoon_heading = false;
  bool tube_was_grasped = false;

  int step_count = 0;
  Rng rng{make_rng(0)};

  bool operator==(const SimState& o) const {
    return task == o.task && multi_goal == o.multi_goal && ljoints == o.ljoints &&
           rjoints == o.rjoints && lgrip == o.lgrip && rgrip == o.rgrip && tubes == o.tubes &&
           tube_color == o.tube_color && target_tube == o.target_tube && brush == o.brush &&
           spoon == o.spoon && has_brush == o.has_brush && has_spoon == o.has_spoon &&
           lattach == o.lattach && rattach == o.rattach && bin_amount == o.bin_amount &&
           spoon_amount == o.spoon_amount && tube_amount == o.tube_amount &&
           spilled_amount == o.spilled_amount && total_grains == o.total_grains &&
           scrub_cycles == o.scrub_cycles && scrub_prev_sign == o.scrub_prev_sign &&
           scrub_prev_tip_y == o.scrub_prev_tip_y && scrub_has_prev == o.scrub_has_prev &&
           prev_spoon_heading == o.prev_spoon_heading &&
           has_prev_spoon_heading == o.has_prev_spoon_heading &&
           tube_was_grasped == o.tube_was_grasped && step_count == o.step_count && rng == o.rng;
  }

  int powder_sum() const { return bin_amount + spoon_amount + tube_amount + spilled_amount; }
};

// ---------------------------------------------------------------------------
// Reset
// ---------------------------------------------------------------------------

inline SimState reset(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  SimState s;
  s.task = spec.task;
  s.multi_goal = spec.multi_goal;
  s.rng = make_rng(derive_seed(seed, 0x51u, std::uint64_t(spec.task)));
  Rng layout = make_rng(derive_seed(seed, 0x1a7u, std::uint64_t(spec.task)));

  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(layout); };

  switch (spec.task) {
    case TaskId::Arrange: {
      int n = spec.multi_goal ? 2 : 1;
      const double margin = 0.03;
      while (int(s.tubes.size()) < n) {
        SimObject t;
        t.x = uniform(world::kTrayX - world::kTrayHX + margin, world::kTrayX + world::kTrayHX - margin);
        t.y = uniform(world::kTrayY - world::kTrayHY + margin, world::kTrayY + world::kTrayHY - margin);
        bool ok = true;
        for (const auto& other : s.tubes)
          if (std::hypot(t.x - other.x, t.y - other.y) < 2 * world::kTubeRadius + 0.02) ok = false;
        if (ok) s.tubes.push_back(t);
      }
      for (int i = 0; i < n; ++i) s.tube_color.push_back(i);
      s.target_tube = spec.multi_goal ? int(layout() % 2) : 0;
      break;
    }
    case TaskId::Clean: {
      SimObject t;
      t.x = uniform(world::kLeftTrayX - world::kLeftTrayHX + 0.03,
                    world::kLeftTrayX + world::kLeftTrayHX - 0.03);
      t.y = uniform(world::kLeftTrayY - world::kLeftTrayHY + 0.03,
                    world::kLeftTrayY + world::kLeftTrayHY - 0.03);
      s.tubes.push_back(t);
      s.tube_color.push_back(0);
      s.brush = SimObject{world::kBrushHomeX + uniform(-0.02, 0.02),
                          world::kBrushHomeY + uniform(-0.02, 0.02), kPi / 2};
      s.has_brush = true;
      break;
    }
    case TaskId::Pour: {
      SimObject t{world::kPourTubeX + uniform(-0.02, 0.02), world::kPourTubeY, 0.0};
      s.tubes.push_back(t);
      s.tube_color.push_back(0);
      s.spoon = SimObject{world::kSpoonHomeX + uniform(-0.02, 0.02),
                          world::kSpoonHomeY + uniform(-0.01, 0.01), kPi / 2};
      s.has_spoon = true;
      s.bin_amount = world::kGrainTotal;
      s.total_grains = world::kGrainTotal;
      break;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Step
// ---------------------------------------------------------------------------

namespace detail {

/// Tool tip when the tool is bound to a gripper with heading `h` (binding
/// rotation included), or free-standing at its own angle.
inline std::pair<double, double> tool_tip(const SimObject& obj, bool attached, const EePose& ee,
                                          double rel_angle) {
  if (attached) {
    double h = ee.heading + rel_angle;
    return {ee.x + world::kToolLength * std::cos(h), ee.y + world::kToolLength * std::sin(h)};
  }
  return {obj.x + world::kToolLength * std::cos(obj.angle),
          obj.y + world::kToolLength * std::sin(obj.angle)};
}

inline bool in_rect(double x, double y, double cx, double cy, double hx, double hy) {
  return std::abs(x - cx) <= hx && std::abs(y - cy) <= hy;
}

inline void follow_gripper(SimState& s, const Attachment& at, const EePose& ee) {
  if (!at.active()) return;
  double c = std::cos(ee.heading), sn = std::sin(ee.heading);
  SimObject* obj = at.kind == 0 ? &s.tubes[size_t(at.index)] : (at.kind == 1 ? &s.brush : &s.spoon);
  obj->x = ee.x + c * at.rel_x - sn * at.rel_y;
  obj->y = ee.y + sn * at.rel_x + c * at.rel_y;
  obj->angle = ee.heading + at.rel_angle;
}

inline void try_attach(SimState& s, Attachment& at, const Attachment& other, const EePose& ee) {
  struct Cand {
    int kind, index;
    double dist;
  };
  std::vector<Cand> cands;
  for (int i = 0; i < int(s.tubes.size()); ++i) {
    if (other.kind == 0 && other.index == i) continue;
    cands.push_back({0, i, std::hypot(ee.x - s.tubes[size_t(i)].x, ee.y - s.tubes[size_t(i)].y)});
  }
  if (s.has_brush && other.kind != 1)
    cands.push_back({1, 0, std::hypot(ee.x - s.brush.x, ee.y - s.brush.y)});
  if (s.has_spoon && other.kind != 2)
    cands.push_back({2, 0, std::hypot(ee.x - s.spoon.x, ee.y - s.spoon.y)});
  const Cand* best = nullptr;
  for (const auto& c : cands)
    if (c.dist <= world::kGraspRadius && (!best || c.dist < best->dist)) best = &c;
  if (!best) return;
  const SimObject& obj =
      best->kind == 0 ? s.tubes[size_t(best->index)] : (best->kind == 1 ? s.brush : s.spoon);
  double c = std::cos(-ee.heading), sn = std::sin(-ee.heading);
  double dx = obj.x - ee.x, dy = obj.y - ee.y;
  at.kind = best->kind;
  at.index = best->index;
  at.rel_x = c * dx - sn * dy;
  at.rel_y = sn * dx + c * dy;
  at.rel_angle = best->kind == 0 ? wrap_angle(obj.angle - ee.heading) : 0.0;
  if (best->kind == 0) s.tube_was_grasped = true;
}

}  // namespace detail

/// Advances the simulation by one control tick with raw joint/gripper targets.
/// Live channels: 0-2 left joints, 3 left gripper, 7-9 right joints, 10 right
/// gripper; dims {4,5,6,11,12,13} are reserved and ignored.
inline SimState step(const SimState& prev, const Vec& action) {
  require(action.size() == kActionDim && action.allFinite(), "non-finite or misshapen action");
  SimState s = prev;
  ArmModel la = left_arm(), ra = right_arm();

  auto advance_arm = [](Joints& q, const ArmModel& arm, const Vec& act, int base) {
    for (int i = 0; i < 3; ++i) {
      double target = clamp(act[base + i], -kPi, kPi);
      q[i] = clamp(q[i] + clamp(target - q[i], -arm.rate_limit, arm.rate_limit), -kPi, kPi);
    }
  };
  advance_arm(s.ljoints, la, action, 0);
  advance_arm(s.rjoints, ra, action, 7);

  auto advance_grip = [](double& g, double target) {
    target = clamp(target, 0.0, 1.0);
    g = clamp(g + clamp(target - g, -world::kGripRate, world::kGripRate), 0.0, 1.0);
  };
  double lgrip_before = s.lgrip, rgrip_before = s.rgrip;
  advance_grip(s.lgrip, action[3]);
  advance_grip(s.rgrip, action[10]);

  EePose lee = forward_kinematics(la, s.ljoints);
  EePose ree = forward_kinematics(ra, s.rjoints);

  // Grasp transitions: closing across 0.5 attaches, opening across 0.5 detaches.
  if (lgrip_before >= 0.5 && s.lgrip < 0.5 && !s.lattach.active())
    detail::try_attach(s, s.lattach, s.rattach, lee);
  if (rgrip_before >= 0.5 && s.rgrip < 0.5 && !s.rattach.active())
    detail::try_attach(s, s.rattach, s.lattach, ree);
  if (s.lgrip >= 0.5) s.lattach = Attachment{};
  if (s.rgrip >= 0.5) s.rattach = Attachment{};

  detail::follow_gripper(s, s.lattach, lee);
  detail::follow_gripper(s, s.rattach, ree);

  // --- Task physics -------------------------------------------------------
  // Scrubbing: brush tip inside the tube bore counts direction reversals.
  bool brush_l = s.lattach.kind == 1, brush_r = s.rattach.kind == 1;
  if (s.has_brush && (brush_l || brush_r) && !s.tubes.empty()) {
    auto tip = detail::tool_tip(s.brush, true, brush_l ? lee : ree,
                                (brush_l ? s.lattach : s.rattach).rel_angle);
    const SimObject& tube = s.tubes[0];
    if (std::hypot(tip.first - tube.x, tip.second - tube.y) <= world::kBoreRadius) {
      double vy = tip.second - s.scrub_prev_tip_y;
      int sign = vy > 1e-5 ? 1 : (vy < -1e-5 ? -1 : 0);
      if (s.scrub_has_prev && sign != 0) {
        if (s.scrub_prev_sign != 0 && sign != s.scrub_prev_sign) ++s.scrub_cycles;
        s.scrub_prev_sign = sign;
      } else if (sign != 0) {
        s.scrub_prev_sign = sign;
      }
      s.scrub_prev_tip_y = tip.second;
      s.scrub_has_prev = true;
    } else {
      s.scrub_has_prev = false;
      s.scrub_prev_sign = 0;
    }
  }

  // Scooping and pouring.
  bool spoon_l = s.lattach.kind == 2, spoon_r = s.rattach.kind == 2;
  if (s.has_spoon && (spoon_l || spoon_r)) {
    const EePose& ee = spoon_l ? lee : ree;
    double rel = (spoon_l ? s.lattach : s.rattach).rel_angle;
    double heading = ee.heading + rel;
    auto tip = detail::tool_tip(s.spoon, true, ee, rel);
    // Scoop: tip in the bin while the spoon rotates upward.
    if (detail::in_rect(tip.first, tip.second, world::kBinX, world::kBinY, world::kBinHX,
                        world::kBinHY)) {
      if (s.has_prev_spoon_heading && heading - s.prev_spoon_heading > 1e-4) {
        int take = std::min({world::kGrainRate, s.bin_amount,
                             world::kSpoonCapacity - s.spoon_amount});
        if (take > 0) {
          s.bin_amount -= take;
          s.spoon_amount += take;
        }
      }
    }
    // Pour: heading past the pour angle empties toward the tube mouth or spills.
    if (heading < world::kPourAngle && s.spoon_amount > 0 && !s.tubes.empty()) {
      double mx = s.tubes[0].x, my = s.tubes[0].y + world::kTubeMouthOffset;
      int out = std::min(world::kGrainRate, s.spoon_amount);
      s.spoon_amount -= out;
      if (std::hypot(tip.first - mx, tip.second - my) <= world::kMouthRadius)
        s.tube_amount += out;
      else
        s.spilled_amount += out;
    }
    s.prev_spoon_heading = heading;
    s.has_prev_spoon_heading = true;
  } else {
    s.has_prev_spoon_heading = false;
  }

  ++s.step_count;
  return s;
}

// ---------------------------------------------------------------------------
// Perturbation (disturbance-recovery evaluation)
// ---------------------------------------------------------------------------

/// Jolts the relative binding angle of an attached object by +-magnitude
/// (rotates the grasp frame). Returns false if nothing is attached.
inline bool perturb(SimState& s, double magnitude = 0.3) {
  Attachment* at = s.rattach.active() ? &s.rattach : (s.lattach.active() ? &s.lattach : nullptr);
  if (!at) return false;
  double delta = (s.rng() & 1u) ? magnitude : -magnitude;
  double c = std::cos(delta), sn = std::sin(delta);
  double rx = at->rel_x, ry = at->rel_y;
  at->rel_x = c * rx - sn * ry;
  at->rel_y = sn * rx + c * ry;
  at->rel_angle = wrap_angle(at->rel_angle + delta);
  return true;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace colors {
constexpr Color kBackground{0, 0, 0};
constexpr Color kTray{55, 55, 55};
constexpr Color kRack{128, 128, 128};
constexpr Color kSlot{25, 25, 25};
constexpr Color kTubeCyan{0, 255, 255};
constexpr Color kTubeWhite{255, 255, 255};
constexpr Color kBrush{255, 0, 255};
constexpr Color kSpoon{255, 255, 0};
constexpr Color kPowder{255, 140, 0};
constexpr Color kBinWall{130, 70, 0};
constexpr Color kLeftArm{0, 200, 0};
constexpr Color kRightArm{70, 120, 255};
}  // namespace colors

namespace detail {

inline void draw_scene(Image& im, const Viewport& vp, const SimState& s) {
  using namespace world;
  // Static fixtures first (painter's order).
  if (s.task == TaskId::Arrange) {
    draw_rect(im, vp, kTrayX, kTrayY, kTrayHX, kTrayHY, colors::kTray);
    draw_rect(im, vp, kSlotX, kSlotY, 0.05, 0.03, colors::kRack);
    draw_disk(im, vp, kSlotX, kSlotY, 0.012, colors::kSlot);
  } else if (s.task == TaskId::Clean) {
    draw_rect(im, vp, kLeftTrayX, kLeftTrayY, kLeftTrayHX, kLeftTrayHY, colors::kTray);
  } else {
    draw_rect(im, vp, kBinX, kBinY, kBinHX, kBinHY, colors::kBinWall);
    if (s.bin_amount > 0) {
      double level = double(s.bin_amount) / double(std::max(1, s.total_grains));
      draw_rect(im, vp, kBinX, kBinY - kBinHY * (1.0 - level) * 0.9, kBinHX * 0.85,
                kBinHY * level * 0.9, colors::kPowder);
    }
    draw_rect(im, vp, s.tubes[0].x, s.tubes[0].y - 0.05, 0.045, 0.02, colors::kRack);
    if (s.spilled_amount > 0) draw_disk(im, vp, 0.05, 0.04, 0.02, colors::kPowder);
  }

  for (size_t i = 0; i < s.tubes.size(); ++i)
    draw_disk(im, vp, s.tubes[i].x, s.tubes[i].y, kTubeRadius,
              s.tube_color[i] == 0 ? colors::kTubeCyan : colors::kTubeWhite);
  if (s.task == TaskId::Pour && s.tube_amount > 0)
    draw_disk(im, vp, s.tubes[0].x, s.tubes[0].y, 0.018, colors::kPowder);

  ArmModel la = left_arm(), ra = right_arm();
  EePose lee = forward_kinematics(la, s.ljoints);
  EePose ree = forward_kinematics(ra, s.rjoints);
  if (s.has_brush) {
    auto tip = tool_tip(s.brush, s.lattach.kind == 1 || s.rattach.kind == 1,
                        s.lattach.kind == 1 ? lee : ree,
                        (s.lattach.kind == 1 ? s.lattach : s.rattach).rel_angle);
    draw_segment(im, vp, s.brush.x, s.brush.y, tip.first, tip.second, 0.02, colors::kBrush);
  }
  if (s.has_spoon) {
    auto tip = tool_tip(s.spoon, s.lattach.kind == 2 || s.rattach.kind == 2,
                        s.lattach.kind == 2 ? lee : ree,
                        (s.lattach.kind == 2 ? s.lattach : s.rattach).rel_angle);
    draw_segment(im, vp, s.spoon.x, s.spoon.y, tip.first, tip.second, 0.018, colors::kSpoon);
    if (s.spoon_amount > 0) draw_disk(im, vp, tip.first, tip.second, 0.013, colors::kPowder);
  }

  auto draw_arm = [&](const ArmModel& arm, const Joints& q, double grip, Color col) {
    auto p = fk_points(arm, q);
    for (int i = 0; i < 3; ++i)
      draw_segment(im, vp, p[size_t(i)].first, p[size_t(i)].second, p[size_t(i) + 1].first,
                   p[size_t(i) + 1].second, 0.032, col);
    // Gripper aperture rendered as the end-effector disk size.
    Color ecol{std::uint8_t(col[0] / 2 + 90), std::uint8_t(col[1] / 2 + 90),
               std::uint8_t(col[2] / 2 + 90)};
    draw_disk(im, vp, p[3].first, p[3].second, 0.012 + 0.012 * grip, ecol);
  };
  draw_arm(la, s.ljoints, s.lgrip, colors::kLeftArm);
  draw_arm(ra, s.rjoints, s.rgrip, colors::kRightArm);
}

}  // namespace detail

/// Front view plus the two wrist views (0.30 m windows centered on each
/// end effector). Deterministic function of the state.
inline std::array<Image, 3> render_views(const SimState& s, int resolution = 64) {
  require(resolution >= 8, "resolution too small");
  std::array<Image, 3> out;
  Viewport front{-0.8, -0.25, 0.8, 1.35, resolution};
  out[0] = Image(resolution, resolution, colors::kBackground);
  detail::draw_scene(out[0], front, s);

  EePose lee = forward_kinematics(left_arm(), s.ljoints);
  EePose ree = forward_kinematics(right_arm(), s.rjoints);
  const double half = 0.15;
  Viewport lw{lee.x - half, lee.y - half, lee.x + half, lee.y + half, resolution};
  Viewport rw{ree.x - half, ree.y - half, ree.x + half, ree.y + half, resolution};
  out[1] = Image(resolution, resolution, colors::kBackground);
  detail::draw_scene(out[1], lw, s);
  out[2] = Image(resolution, resolution, colors::kBackground);
  detail::draw_scene(out[2], rw, s);
  return out;
}

// ---------------------------------------------------------------------------
// Success metrics
// ---------------------------------------------------------------------------

struct TaskMetrics {
  bool success = false;
  int scrub_cycles = 0;
  double final_target_dist = 0.0;
  double transfer_fraction = 0.0;
  double spilled_fraction = 0.0;
  bool tube_was_grasped = false;
};

inline TaskMetrics evaluate_success(const SimState& s, const TaskSpec& spec) {
  TaskMetrics m;
  m.scrub_cycles = s.scrub_cycles;
  m.tube_was_grasped = s.tube_was_grasped;
  switch (spec.task) {
    case TaskId::Arrange: {
      const SimObject& t = s.tubes[size_t(s.target_tube)];
      m.final_target_dist = std::hypot(t.x - world::kSlotX, t.y - world::kSlotY);
      bool held = (s.lattach.kind == 0 && s.lattach.index == s.target_tube) ||
                  (s.rattach.kind == 0 && s.rattach.index == s.target_tube);
      m.success = m.final_target_dist <= spec.slot_tolerance && !held;
      break;
    }
    case TaskId::Clean: {
      EePose lee = forward_kinematics(left_arm(), s.ljoints);
      EePose ree = forward_kinematics(right_arm(), s.rjoints);
      bool brush_l = s.lattach.kind == 1, brush_r = s.rattach.kind == 1;
      auto tip = detail::tool_tip(s.brush, brush_l || brush_r, brush_l ? lee : ree,
                                  (brush_l ? s.lattach : s.rattach).rel_angle);
      double tip_dist = s.tubes.empty()
                            ? 1.0
                            : std::hypot(tip.first - s.tubes[0].x, tip.second - s.tubes[0].y);
      m.final_target_dist = tip_dist;
      m.success = s.tube_was_grasped && s.scrub_cycles >= spec.required_scrubs &&
                  tip_dist > world::kBoreRadius;
      break;
    }
    case TaskId::Pour: {
      m.transfer_fraction = double(s.tube_amount) / double(world::kSpoonCapacity);
      m.spilled_fraction =
          s.total_grains > 0 ? double(s.spilled_amount) / double(s.total_grains) : 0.0;
      m.success = m.transfer_fraction >= spec.transfer_fraction &&
                  m.spilled_fraction <= spec.spill_fraction;
      break;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Scripted demonstration expert
// ---------------------------------------------------------------------------

class ScriptedExpert {
 public:
  ScriptedExpert(const TaskSpec& spec, std::uint64_t seed, double noise_scale = 1.0)
      : spec_(spec), rng_(make_rng(derive_seed(seed, 0xe9u))), noise_scale_(noise_scale) {}

  bool done() const { return done_; }
  bool aborted() const { return aborted_; }

  /// Raw 14-dim action for the current state; advances the internal FSM.
  Vec action(const SimState& s) {
    Vec a = Vec::Zero(kActionDim);
    Joints lt = s.ljoints, rt = s.rjoints;
    double lg = 1.0, rg = 1.0;
    switch (spec_.task) {
      case TaskId::Arrange: arrange_fsm(s, lt, rt, lg, rg); break;
      case TaskId::Clean: clean_fsm(s, lt, rt, lg, rg); break;
      case TaskId::Pour: pour_fsm(s, lt, rt, lg, rg); break;
    }
    double sigma = noise_scale_ * (fine_ ? 0.002 : 0.01);
    for (int i = 0; i < 3; ++i) {
      a[i] = clamp(lt[i] + sigma * normal01(rng_), -kPi, kPi);
      a[7 + i] = clamp(rt[i] + sigma * normal01(rng_), -kPi, kPi);
    }
    a[3] = lg;
    a[10] = rg;
    if (++phase_ticks_ > (phase_ == scrub_phase() ? 400 : 200)) aborted_ = true;
    return a;
  }

 private:
  int scrub_phase() const { return spec_.task == TaskId::Clean ? 8 : -1; }

  void advance() {
    ++phase_;
    phase_ticks_ = 0;
  }

  static double dist(const EePose& ee, double x, double y) {
    return std::hypot(ee.x - x, ee.y - y);
  }

  Joints reach(const ArmModel& arm, const Joints& q, double x, double y,
               std::optional<double> heading = std::nullopt) {
    return ik_solve(arm, q, x, y, 60, heading).joints;
  }

  /// Fine-phase approach: advance the commanded waypoint at most kCreepStep
  /// toward the goal per tick, so precision approaches span many control
  /// frames instead of one or two.
  Joints creep(const ArmModel& arm, const Joints& q, double x, double y,
               std::optional<double> heading = std::nullopt) {
    EePose ee = forward_kinematics(arm, q);
    double dx = x - ee.x, dy = y - ee.y;
    double d = std::hypot(dx, dy);
    if (d > kCreepStep) {
      x = ee.x + dx * kCreepStep / d;
      y = ee.y + dy * kCreepStep / d;
    }
    return reach(arm, q, x, y, heading);
  }

  /// True once the arm has held the current phase's posture long enough for a
  /// grip event; used to put a stationary dwell in front of every close/open.
  bool settled() const { return phase_ticks_ >= kSettleTicks; }

  static constexpr double kCreepStep = 0.008;  // m of EE travel per tick
  static constexpr int kSettleTicks = 12;

  void arrange_fsm(const SimState& s, Joints& lt, Joints& rt, double& /*lg*/, double& rg) {
    ArmModel ra = right_arm();
    EePose ee = forward_kinematics(ra, s.rjoints);
    const SimObject& tube = s.tubes[size_t(s.target_tube)];
    lt = home_joints(true);
    using namespace world;
    fine_ = phase_ == 1 || phase_ == 2 || phase_ == 5 || phase_ == 6;
    switch (phase_) {
      case 0:
        rt = reach(ra, s.rjoints, tube.x, tube.y + 0.07);
        rg = 1.0;
        if (dist(ee, tube.x, tube.y + 0.07) < 0.02) advance();
        break;
      case 1:
        rt = creep(ra, s.rjoints, tube.x, tube.y);
        rg = 1.0;
        if (dist(ee, tube.x, tube.y) < 0.004) advance();
        break;
      case 2:
        rt = reach(ra, s.rjoints, tube.x, tube.y);
        rg = settled() ? 0.0 : 1.0;
        if (s.rattach.kind == 0 && s.rattach.index == s.target_tube) {
          // The tube follows the gripper from here on; fix the lift point now.
          lift_x_ = tube.x;
          lift_y_ = tube.y + 0.09;
          advance();
        }
        break;
      case 3:
        rt = reach(ra, s.rjoints, lift_x_, lift_y_);
        rg = 0.0;
        if (dist(ee, lift_x_, lift_y_) < 0.025) advance();
        break;
      case 4:
        rt = reach(ra, s.rjoints, kSlotX, kSlotY + 0.08);
        rg = 0.0;
        if (dist(ee, kSlotX, kSlotY + 0.08) < 0.015) advance();
        break;
      case 5:
        rt = creep(ra, s.rjoints, kSlotX, kSlotY);
        rg = 0.0;
        if (dist(ee, kSlotX, kSlotY) < 0.004) advance();
        break;
      case 6:
        rt = reach(ra, s.rjoints, kSlotX, kSlotY);
        rg = settled() ? 1.0 : 0.0;
        if (!s.rattach.active() && s.rgrip > 0.7) advance();
        break;
      default:
        rt = reach(ra, s.rjoints, kSlotX, kSlotY + 0.12);
        rg = 1.0;
        if (dist(ee, kSlotX, kSlotY + 0.12) < 0.03) done_ = true;
        break;
    }
  }

  void clean_fsm(const SimState& s, Joints& lt, Joints& rt, double& lg, double& rg) {
    ArmModel la = left_arm(), ra = right_arm();
    EePose lee = forward_kinematics(la, s.ljoints);
    EePose ree = forward_kinematics(ra, s.rjoints);
    const SimObject& tube = s.tubes[0];
    using namespace world;
    const double scrub_y = kHoldY + kToolLength;
    fine_ = phase_ == 1 || phase_ == 2 || phase_ == 5 || phase_ == 6 || phase_ == 8;
    // Left arm: acquire the tube then hold it at the cleaning pose.
    if (phase_ <= 3) {
      switch (phase_) {
        case 0:
          lt = reach(la, s.ljoints, tube.x, tube.y + 0.06);
          lg = 1.0;
          if (dist(lee, tube.x, tube.y + 0.06) < 0.02) advance();
          break;
        case 1:
          lt = creep(la, s.ljoints, tube.x, tube.y);
          lg = 1.0;
          if (dist(lee, tube.x, tube.y) < 0.005) advance();
          break;
        case 2:
          lt = reach(la, s.ljoints, tube.x, tube.y);
          lg = settled() ? 0.0 : 1.0;
          if (s.lattach.kind == 0) advance();
          break;
        default:
          lt = reach(la, s.ljoints, kHoldX, kHoldY);
          lg = 0.0;
          if (dist(lee, kHoldX, kHoldY) < 0.006) advance();
          break;
      }
      rt = home_joints(false);
      rg = 1.0;
      return;
    }
    lt = reach(la, s.ljoints, kHoldX, kHoldY);
    lg = 0.0;
    // Right arm: brush, insert, scrub, withdraw.
    switch (phase_) {
      case 4:
        rt = reach(ra, s.rjoints, s.brush.x, s.brush.y + 0.06);
        rg = 1.0;
        if (dist(ree, s.brush.x, s.brush.y + 0.06) < 0.02) advance();
        break;
      case 5:
        rt = creep(ra, s.rjoints, s.brush.x, s.brush.y);
        rg = 1.0;
        if (dist(ree, s.brush.x, s.brush.y) < 0.005) advance();
        break;
      case 6:
        rt = reach(ra, s.rjoints, s.brush.x, s.brush.y);
        rg = settled() ? 0.0 : 1.0;
        if (s.rattach.kind == 1) advance();
        break;
      case 7:
        rt = reach(ra, s.rjoints, kHoldX, scrub_y + 0.07, -kPi / 2);
        rg = 0.0;
        if (dist(ree, kHoldX, scrub_y + 0.07) < 0.012) advance();
        break;
      case 8: {
        double ty = scrub_y + scrub_dir_ * 0.022;
        rt = reach(ra, s.rjoints, kHoldX, ty, -kPi / 2);
        rg = 0.0;
        if (dist(ree, kHoldX, ty) < 0.008) {
          scrub_dir_ = -scrub_dir_;
          ++scrub_flips_;
        }
        if (scrub_flips_ >= 9) advance();
        break;
      }
      default:
        rt = reach(ra, s.rjoints, kHoldX, kHoldY + 0.22);
        rg = 0.0;
        if (dist(ree, kHoldX, kHoldY + 0.22) < 0.02) done_ = true;
        break;
    }
  }

  void pour_fsm(const SimState& s, Joints& lt, Joints& rt, double& /*lg*/, double& rg) {
    ArmModel ra = right_arm();
    EePose ree = forward_kinematics(ra, s.rjoints);
    lt = home_joints(true);
    using namespace world;
    double mx = s.tubes[0].x, my = s.tubes[0].y + kTubeMouthOffset;
    auto ee_for = [&](double tx, double ty, double h) {
      return std::pair<double, double>{tx - kToolLength * std::cos(h),
                                       ty - kToolLength * std::sin(h)};
    };
    fine_ = phase_ == 1 || phase_ == 2 || phase_ >= 4;
    switch (phase_) {
      case 0:
        rt = reach(ra, s.rjoints, s.spoon.x, s.spoon.y + 0.06);
        rg = 1.0;
        if (dist(ree, s.spoon.x, s.spoon.y + 0.06) < 0.02) advance();
        break;
      case 1:
        rt = creep(ra, s.rjoints, s.spoon.x, s.spoon.y);
        rg = 1.0;
        if (dist(ree, s.spoon.x, s.spoon.y) < 0.005) advance();
        break;
      case 2:
        rt = reach(ra, s.rjoints, s.spoon.x, s.spoon.y);
        rg = settled() ? 0.0 : 1.0;
        if (s.rattach.kind == 2) advance();
        break;
      case 3: {  // move the tip into the bin, spoon tilted down
        tool_heading_ = -0.6;
        auto [ex, ey] = ee_for(kBinX, kBinY, tool_heading_);
        rt = reach(ra, s.rjoints, ex, ey, tool_heading_);
        rg = 0.0;
        if (dist(ree, ex, ey) < 0.012) advance();
        break;
      }
      case 4: {  // scoop: rotate upward while the tip stays in the bin
        tool_heading_ = std::min(0.25, tool_heading_ + 0.03);
        auto [ex, ey] = ee_for(kBinX, kBinY, tool_heading_);
        rt = reach(ra, s.rjoints, ex, ey, tool_heading_);
        rg = 0.0;
        if (s.spoon_amount >= kSpoonCapacity || tool_heading_ >= 0.25) advance();
        break;
      }
      case 5: {  // carry level to above the tube mouth
        auto [ex, ey] = ee_for(mx, my, -0.2);
        rt = reach(ra, s.rjoints, ex, ey + 0.05, -0.2);
        rg = 0.0;
        if (dist(ree, ex, ey + 0.05) < 0.015) {
          tool_heading_ = -0.2;
          advance();
        }
        break;
      }
      case 6: {  // tilt past the pour angle keeping the tip at the mouth
        tool_heading_ = std::max(-1.4, tool_heading_ - 0.025);
        auto [ex, ey] = ee_for(mx, my, tool_heading_);
        rt = reach(ra, s.rjoints, ex, ey, tool_heading_);
        rg = 0.0;
        if (s.spoon_amount == 0 || s.tube_amount >= 24) advance();
        break;
      }
      default: {  // return level
        auto [ex, ey] = ee_for(kBinX, kBinY + 0.10, -0.2);
        rt = reach(ra, s.rjoints, ex, ey, -0.2);
        rg = 0.0;
        if (dist(ree, ex, ey) < 0.02) done_ = true;
        break;
      }
    }
  }

  TaskSpec spec_;
  Rng rng_;
  double noise_scale_;
  int phase_ = 0;
  int phase_ticks_ = 0;
  bool fine_ = false;
  bool done_ = false;
  bool aborted_ = false;
  int scrub_dir_ = 1;
  int scrub_flips_ = 0;
  double tool_heading_ = 0.0;
  double lift_x_ = 0.0, lift_y_ = 0.0;
};

// ---------------------------------------------------------------------------
// Expert rollouts
// ---------------------------------------------------------------------------

struct RolloutResult {
  EpisodeRecord episode;
  SimState final_state;
  TaskMetrics metrics;
  bool aborted = false;
};

/// Runs the scripted expert from reset to completion or the episode cap.
/// Frames (when recorded) are the observations *before* each action.
inline RolloutResult run_expert_episode(const TaskSpec& spec, std::uint64_t seed,
                                        int resolution = 64, bool record_frames = true,
                                        double noise_scale = 1.0) {
  SimState s = reset(spec, seed);
  ScriptedExpert expert(spec, seed, noise_scale);
  RolloutResult out;
  out.episode.task_id = spec.task;
  out.episode.prompt_text = prompt_for(spec, s.tube_color.empty() ? 0 : s.tube_color[size_t(s.target_tube)]);
  std::vector<Vec> acts;
  for (int t = 0; t < spec.episode_cap; ++t) {
    if (record_frames) out.episode.frames.push_back(render_views(s, resolution));
    Vec a = expert.action(s);
    acts.push_back(a);
    s = step(s, a);
    if (expert.done() || expert.aborted()) break;
  }
  out.episode.actions.resize(int(acts.size()), kActionDim);
  for (size_t t = 0; t < acts.size(); ++t) out.episode.actions.row(int(t)) = acts[t].transpose();
  if (record_frames && out.episode.frames.size() > acts.size())
    out.episode.frames.resize(acts.size());
  out.final_state = s;
  out.metrics = evaluate_success(s, spec);
  out.aborted = expert.aborted();
  return out;
}

}  // namespace benchtop
