#include <CLI11.hpp>
#include <iostream>

#include "benchtop/workbench.hpp"

using namespace benchtop;

namespace {

nlohmann::json eval_row_json(const EpisodeReport& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["success"] = r.metrics.success;
  j["final_target_dist"] = r.metrics.final_target_dist;
  j["scrub_cycles"] = r.metrics.scrub_cycles;
  j["tube_was_grasped"] = r.metrics.tube_was_grasped;
  j["transfer_fraction"] = r.metrics.transfer_fraction;
  j["spilled_fraction"] = r.metrics.spilled_fraction;
  j["ticks"] = r.ticks;
  j["stalled_after_first"] = r.stalled_after_first;
  j["runtime_stall"] = r.runtime_stall;
  j["predictions"] = r.predictions;
  j["perturbed"] = r.perturbed;
  return j;
}

nlohmann::json inspect_json(const InspectReport& r) {
  nlohmann::json j;
  j["adapter"]["trainable_params"] = r.adapter_params;
  j["adapter"]["embed_dim"] = r.adapter_embed_dim;
  j["adapter"]["reference_params"] = kReferenceAdapterParams;
  j["adapter"]["ratio_vs_reference"] = r.adapter_ratio;
  j["action_expert"]["trainable_params"] = r.expert_params;
  j["action_expert"]["embed_dim"] = r.expert_embed_dim;
  j["action_expert"]["reference_params"] = kReferenceExpertParams;
  j["action_expert"]["ratio_vs_reference"] = r.expert_ratio;
  j["frozen_encoders"]["trainable_params"] = r.frozen_trainable;
  return j;
}

nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j;
    j["label"] = r.label;
    j["episodes"] = r.episodes;
    j["successes"] = r.successes;
    j["success_rate"] = r.success_rate;
    out.push_back(j);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale bimanual imitation-learning workbench"};
  app.require_subcommand(1);

  // collect
  auto* collect = app.add_subcommand("collect", "roll out the scripted expert into a dataset");
  std::string c_task = "Arrange", c_out, c_config, c_variant = "detailed";
  int c_count = 200;
  std::uint64_t c_seed = 0;
  bool c_multi = false;
  collect->add_option("--task", c_task, "Clean|Arrange|Pour");
  collect->add_option("--count", c_count, "episodes to keep");
  collect->add_option("--out", c_out, "output dataset directory")->required();
  collect->add_option("--config", c_config, "run config file (overrides other flags)");
  collect->add_option("--seed", c_seed, "master seed");
  collect->add_option("--variant", c_variant, "prompt variant");
  collect->add_flag("--multi-goal", c_multi, "two-tube goal-conditioned variant");

  // train
  auto* train = app.add_subcommand("train", "train a policy on a collected dataset");
  std::string t_config, t_data, t_out, t_resume;
  train->add_option("--config", t_config, "run config file")->required();
  train->add_option("--data", t_data, "dataset directory")->required();
  train->add_option("--out", t_out, "output directory")->required();
  train->add_option("--resume", t_resume, "checkpoint to resume from");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint in the simulator");
  std::string e_ckpt;
  int e_episodes = 50, e_latency = 8;
  std::uint64_t e_seed_base = 0;
  bool e_perturb = false;
  eval->add_option("--ckpt", e_ckpt, "checkpoint file")->required();
  eval->add_option("--episodes", e_episodes, "episode count");
  eval->add_option("--latency", e_latency, "injected predictor latency in ticks");
  eval->add_option("--seed-base", e_seed_base, "first episode seed");
  eval->add_flag("--perturb", e_perturb, "mid-episode disturbance mode");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train and compare ablation arms");
  std::string a_mode, a_config, a_out = "ablation";
  int a_collect = 200, a_episodes = 50;
  ablate->add_option("--mode", a_mode, "prompt|encoder")->required();
  ablate->add_option("--config", a_config, "run config file")->required();
  ablate->add_option("--out", a_out, "working directory");
  ablate->add_option("--collect", a_collect, "episodes in the shared dataset");
  ablate->add_option("--episodes", a_episodes, "evaluation episodes per arm");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "report per-module parameter structure");
  std::string i_ckpt, i_config, i_profile;
  inspect->add_option("--ckpt", i_ckpt, "checkpoint file");
  inspect->add_option("--config", i_config, "run config file");
  inspect->add_option("--profile", i_profile, "desk|paper-dims");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*collect) {
      RunConfig cfg;
      if (!c_config.empty()) {
        cfg = load_config(c_config);
      } else {
        cfg = RunConfig::desk();
        cfg.seed = c_seed;
        cfg.task_name_str = c_task;
        cfg.prompt_variant = c_variant;
        cfg.multi_goal = c_multi;
      }
      auto rep = collect_dataset(cfg, c_count, c_out);
      nlohmann::json j;
      j["out"] = c_out;
      j["kept"] = rep.kept;
      j["discarded"] = rep.discarded;
      j["attempts"] = rep.attempts;
      std::cout << j.dump() << "\n";
    } else if (*train) {
      RunConfig cfg = load_config(t_config);
      std::filesystem::create_directories(t_out);
      std::ofstream log(std::filesystem::path(t_out) / "train_log.jsonl",
                        t_resume.empty() ? std::ios::trunc : std::ios::app);
      auto rep = train_policy(cfg, t_data, t_out, &log, std::filesystem::path(t_resume));
      nlohmann::json j;
      j["checkpoint"] = rep.checkpoint_path.string();
      j["iterations"] = rep.iterations;
      j["opt_steps"] = rep.opt_steps;
      j["final_loss"] = rep.final_loss;
      std::cout << j.dump() << "\n";
    } else if (*eval) {
      auto bundle = PolicyBundle::from_file(e_ckpt);
      auto rep = evaluate_policy(bundle, e_episodes, e_latency, e_perturb, e_seed_base);
      for (const auto& row : rep.rows) std::cout << eval_row_json(row).dump() << "\n";
      nlohmann::json j;
      j["episodes"] = rep.episodes;
      j["successes"] = rep.successes;
      j["success_rate"] = rep.success_rate;
      j["stalled_ticks"] = rep.stalled_ticks;
      j["runtime_stalls"] = rep.runtime_stalls;
      j["perturbed"] = rep.perturbed;
      std::cout << j.dump() << "\n";
    } else if (*ablate) {
      RunConfig cfg = load_config(a_config);
      std::vector<AblationRow> rows;
      if (a_mode == "prompt")
        rows = ablate_prompts(cfg, a_collect, a_episodes, a_out, &std::cerr);
      else if (a_mode == "encoder")
        rows = ablate_encoders(cfg, a_collect, a_episodes, a_out, &std::cerr);
      else
        fail("unknown ablation mode: " + a_mode);
      std::cout << ablation_json(rows).dump() << "\n";
    } else if (*inspect) {
      InspectReport rep;
      if (!i_ckpt.empty()) {
        rep = inspect_checkpoint(load_checkpoint(i_ckpt));
      } else if (!i_config.empty()) {
        rep = inspect_structure(load_config(i_config));
      } else if (i_profile == "paper-dims") {
        rep = inspect_structure(RunConfig::paper_dims());
      } else if (i_profile == "desk" || i_profile.empty()) {
        rep = inspect_structure(RunConfig::desk());
      } else {
        fail("unknown profile: " + i_profile);
      }
      std::cout << inspect_json(rep).dump(2) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
