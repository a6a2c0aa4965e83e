#pragma once

#include "benchtop/policy.hpp"

namespace benchtop {

// ---------------------------------------------------------------------------
// Dataset collection
// ---------------------------------------------------------------------------

struct CollectReport {
  int requested = 0;
  int kept = 0;
  int discarded = 0;  // aborted or unsuccessful rollouts
  int attempts = 0;
  std::vector<std::uint64_t> seeds;
};

namespace detail {

inline std::filesystem::path episode_dir(const std::filesystem::path& root, int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "ep_%05d", index);
  return root / buf;
}

}  // namespace detail

/// Rolls out the scripted expert until `count` successful episodes are on
/// disk. Aborted or unsuccessful rollouts are discarded; a sustained failure
/// rate above 20% aborts collection.
inline CollectReport collect_dataset(const RunConfig& cfg, int count,
                                     const std::filesystem::path& out) {
  require(count >= 1, "episode count must be >= 1");
  TaskSpec spec = cfg.task_spec();
  std::filesystem::create_directories(out);
  CollectReport rep;
  rep.requested = count;
  while (rep.kept < count) {
    std::uint64_t seed = derive_seed(cfg.seed, 0xc011, std::uint64_t(rep.attempts));
    ++rep.attempts;
    auto roll = run_expert_episode(spec, seed, cfg.resolution);
    if (roll.aborted || !roll.metrics.success) {
      ++rep.discarded;
      if (rep.attempts >= 20 && 5 * rep.discarded > rep.attempts)
        fail("expert failure rate above 20% (" + std::to_string(rep.discarded) + "/" +
             std::to_string(rep.attempts) + " discarded)");
      continue;
    }
    save_episode(roll.episode, detail::episode_dir(out, rep.kept));
    rep.seeds.push_back(seed);
    ++rep.kept;
  }
  nlohmann::json manifest;
  manifest["task"] = task_name(spec.task);
  manifest["multi_goal"] = spec.multi_goal;
  manifest["variant"] = variant_name(spec.variant);
  manifest["resolution"] = cfg.resolution;
  manifest["episodes"] = rep.kept;
  manifest["seeds"] = rep.seeds;
  manifest["discarded"] = rep.discarded;
  std::ofstream f(out / "manifest.json");
  f << manifest.dump(2) << "\n";
  require(f.good(), "write failed: " + (out / "manifest.json").string());
  return rep;
}

inline std::vector<EpisodeRecord> load_dataset(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  require(f.good(), "corrupt manifest: missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  f >> manifest;
  int count = manifest.at("episodes").get<int>();
  require(count >= 1, "corrupt manifest: empty dataset");
  std::vector<EpisodeRecord> eps;
  eps.reserve(size_t(count));
  for (int i = 0; i < count; ++i) eps.push_back(load_episode(detail::episode_dir(dir, i)));
  return eps;
}

// ---------------------------------------------------------------------------
// Training orchestration
// ---------------------------------------------------------------------------

/// BatchSource over in-memory episodes: windows through the frozen encoders,
/// per-item flow timestep and noise derived from the trainer-issued seed.
class DatasetBatchSource : public BatchSource {
 public:
  DatasetBatchSource(const std::vector<EpisodeRecord>& episodes, NormalizationStats stats,
                     PromptVocab vocab, const RunConfig& cfg)
      : episodes_(episodes),
        stats_(std::move(stats)),
        vocab_(std::move(vocab)),
        enc_(cfg.observation_encoder()),
        wenc_(enc_, cfg.resolution),
        flow_(cfg.flow),
        horizon_(cfg.horizon),
        window_(cfg.window) {
    require(!episodes_.empty(), "empty dataset");
    for (const auto& ep : episodes_)
      prompt_ids_.push_back(tokenize_prompt(ep.prompt_text, vocab_));
  }

  int episode_count() const override { return int(episodes_.size()); }
  int episode_steps(int episode) const override { return episodes_[size_t(episode)].steps(); }

  FlowBatchItem item(int episode, int step, std::uint64_t noise_seed) const override {
    TrainingItem ti = make_training_item(episodes_[size_t(episode)], step, stats_,
                                         prompt_ids_[size_t(episode)], horizon_, window_);
    FlowBatchItem it;
    it.clean_chunk = std::move(ti.chunk);
    Rng r = make_rng(noise_seed);
    it.tau = sample_tau(r, flow_);
    it.noise = standard_normal_chunk(horizon_, r);
    it.image = wenc_.encode_images(ti.window);
    it.text = embed_prompt(ti.window.prompt_ids, vocab_, enc_.text_seed, enc_.text_dim);
    return it;
  }

  const NormalizationStats& stats() const { return stats_; }
  const PromptVocab& vocab() const { return vocab_; }

 private:
  const std::vector<EpisodeRecord>& episodes_;
  NormalizationStats stats_;
  PromptVocab vocab_;
  std::vector<std::vector<int>> prompt_ids_;
  ObservationEncoder enc_;
  WindowEncoder wenc_;
  FlowConfig flow_;
  int horizon_, window_;
};

struct TrainReport {
  std::filesystem::path checkpoint_path;
  double final_loss = 0.0;
  int iterations = 0;
  int opt_steps = 0;
};

/// Trains on in-memory episodes and writes `checkpoint.ckpt`, the
/// normalization stats and a JSON-lines log under `out`. When resuming, the
/// stats and vocabulary stored in the checkpoint take precedence so the data
/// pipeline stays bit-compatible.
inline TrainReport train_on_episodes(const RunConfig& cfg,
                                     const std::vector<EpisodeRecord>& episodes,
                                     const std::filesystem::path& out,
                                     std::ostream* log = nullptr,
                                     const std::filesystem::path& resume = {}) {
  require(!episodes.empty(), "empty dataset");
  std::filesystem::create_directories(out);

  NormalizationStats stats;
  PromptVocab vocab;
  std::optional<Checkpoint> ck;
  if (!resume.empty()) {
    ck = load_checkpoint(resume);
    // Extending a run is the normal resume case, so the iteration budget is
    // excluded from the config comparison.
    RunConfig saved = parse_config(ck->config_text);
    saved.train.total_iterations = cfg.train.total_iterations;
    require(serialize_config(saved) == serialize_config(cfg),
            "checkpoint/config mismatch: config text");
    stats = ck->stats;
    vocab.token_to_id = ck->vocab;
  } else {
    stats = compute_norm_stats(episodes);
    std::vector<std::string> prompts;
    for (const auto& ep : episodes) prompts.push_back(ep.prompt_text);
    vocab = build_vocab(prompts);
  }
  save_norm_stats(stats, out / "norm_stats.json");
  save_config(cfg, out / "run.ini");

  ParamStore ps;
  Adapter adapter(ps, cfg.adapter_config());
  ActionExpert dit(ps, cfg.dit_config());
  Trainer tr(ps, adapter, dit, cfg.train);
  if (ck) restore_trainer(tr, *ck);

  DatasetBatchSource src(episodes, stats, vocab, cfg);
  std::string config_text = serialize_config(cfg);
  auto ckpt_path = out / "checkpoint.ckpt";

  TrainReport rep;
  while (tr.iteration() < cfg.train.total_iterations) {
    auto entry = tr.step(src);
    if (!entry) continue;
    rep.final_loss = entry->loss;
    rep.opt_steps = entry->opt_step;
    if (log) {
      nlohmann::json j;
      j["iteration"] = entry->iteration;
      j["opt_step"] = entry->opt_step;
      j["loss"] = entry->loss;
      j["grad_norm"] = entry->grad_norm;
      j["clip_scale"] = entry->clip_scale;
      j["lr"] = entry->lr;
      (*log) << j.dump() << "\n";
    }
    if (cfg.train.checkpoint_every > 0 && entry->iteration % cfg.train.checkpoint_every == 0 &&
        entry->iteration < cfg.train.total_iterations)
      checkpoint_trainer(tr, stats, config_text, vocab.token_to_id, ckpt_path);
  }
  checkpoint_trainer(tr, stats, config_text, vocab.token_to_id, ckpt_path);
  rep.iterations = tr.iteration();
  rep.checkpoint_path = ckpt_path;
  return rep;
}

inline TrainReport train_policy(const RunConfig& cfg, const std::filesystem::path& data_dir,
                                const std::filesystem::path& out, std::ostream* log = nullptr,
                                const std::filesystem::path& resume = {}) {
  auto episodes = load_dataset(data_dir);
  return train_on_episodes(cfg, episodes, out, log, resume);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
  int episodes = 0;
  int successes = 0;
  double success_rate = 0.0;
  int stalled_ticks = 0;   // stalls after the first chunk, summed
  int runtime_stalls = 0;  // episodes stalled longer than the horizon
  int perturbed = 0;
  std::vector<EpisodeReport> rows;
};

/// Runs `episodes` policy rollouts on seeds seed_base..seed_base+episodes-1.
/// Seeds are plain offsets so ablation arms can be compared pairwise.
inline EvalReport evaluate_policy(const PolicyBundle& bundle, int episodes, int latency,
                                  bool perturb = false, std::uint64_t seed_base = 0) {
  require(episodes >= 1, "episode count must be >= 1");
  TaskSpec spec = bundle.config().task_spec();
  RunEpisodeConfig ec = bundle.config().episode_config();
  ec.latency_ticks = latency;
  ec.perturb = perturb;
  EvalReport rep;
  rep.episodes = episodes;
  for (int i = 0; i < episodes; ++i) {
    std::uint64_t seed = seed_base + std::uint64_t(i);
    SimState s0 = reset(spec, seed);
    int color = s0.tube_color.empty() ? 0 : s0.tube_color[size_t(s0.target_tube)];
    auto ids = bundle.prompt_ids(prompt_for(spec, color));
    auto pred = bundle.predictor(derive_seed(bundle.config().seed, 0xe7a1, seed));
    auto row = run_policy_episode(pred, spec, seed, bundle.stats(), ids, ec);
    rep.successes += row.metrics.success ? 1 : 0;
    rep.stalled_ticks += row.stalled_after_first;
    rep.runtime_stalls += row.runtime_stall ? 1 : 0;
    rep.perturbed += row.perturbed ? 1 : 0;
    rep.rows.push_back(std::move(row));
  }
  rep.success_rate = double(rep.successes) / double(episodes);
  return rep;
}

// ---------------------------------------------------------------------------
// Structure inspection
// ---------------------------------------------------------------------------

constexpr std::int64_t kReferenceAdapterParams = 33'000'000;
constexpr std::int64_t kReferenceExpertParams = 45'000'000;

struct InspectReport {
  std::int64_t adapter_params = 0;
  std::int64_t expert_params = 0;
  std::int64_t frozen_trainable = 0;  // frozen encoders contribute no slots
  double adapter_ratio = 0.0;         // vs the published 33M
  double expert_ratio = 0.0;          // vs the published 45M
  int adapter_embed_dim = 0, expert_embed_dim = 0;
};

inline InspectReport inspect_params(const std::vector<std::pair<std::string, Mat>>& params,
                                    const RunConfig& cfg) {
  InspectReport rep;
  for (const auto& [name, value] : params) {
    if (name.rfind("adapter.", 0) == 0)
      rep.adapter_params += value.size();
    else if (name.rfind("dit.", 0) == 0)
      rep.expert_params += value.size();
    else
      fail("unknown parameter group: " + name);
  }
  rep.adapter_ratio = double(rep.adapter_params) / double(kReferenceAdapterParams);
  rep.expert_ratio = double(rep.expert_params) / double(kReferenceExpertParams);
  rep.adapter_embed_dim = cfg.adapter_embed_dim;
  rep.expert_embed_dim = cfg.dit_embed_dim;
  return rep;
}

inline InspectReport inspect_structure(const RunConfig& cfg) {
  ParamStore ps;
  Adapter adapter(ps, cfg.adapter_config());
  ActionExpert dit(ps, cfg.dit_config());
  std::vector<std::pair<std::string, Mat>> params;
  for (int s = 0; s < ps.count(); ++s) params.emplace_back(ps.name(s), ps.value(s));
  return inspect_params(params, cfg);
}

inline InspectReport inspect_checkpoint(const Checkpoint& ck) {
  return inspect_params(ck.params, parse_config(ck.config_text));
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string label;
  int episodes = 0;
  int successes = 0;
  double success_rate = 0.0;
};

namespace detail {

inline AblationRow ablation_arm(const RunConfig& cfg, const std::vector<EpisodeRecord>& episodes,
                                const std::filesystem::path& arm_dir, const std::string& label,
                                int eval_episodes, std::ostream* log) {
  auto ckpt = arm_dir / "checkpoint.ckpt";
  // A finished arm (same config, full iteration budget) is reused as is.
  bool reuse = false;
  if (std::filesystem::exists(ckpt)) {
    auto prev = load_checkpoint(ckpt);
    reuse = prev.config_text == serialize_config(cfg) && prev.iteration >= cfg.train.total_iterations;
  }
  if (!reuse) {
    if (log) (*log) << "{\"arm\":\"" << label << "\",\"phase\":\"train\"}\n" << std::flush;
    train_on_episodes(cfg, episodes, arm_dir, log);
  }
  auto bundle = PolicyBundle::from_file(ckpt);
  if (log) (*log) << "{\"arm\":\"" << label << "\",\"phase\":\"eval\"}\n" << std::flush;
  auto eval = evaluate_policy(bundle, eval_episodes, cfg.latency_ticks);
  AblationRow row;
  row.label = label;
  row.episodes = eval.episodes;
  row.successes = eval.successes;
  row.success_rate = eval.success_rate;
  return row;
}

}  // namespace detail

/// Prompt-granularity ablation on the multi-goal task: one shared dataset,
/// prompts re-labeled per arm (irrelevant / concise / detailed), one model
/// trained and evaluated per arm on paired seeds.
inline std::vector<AblationRow> ablate_prompts(RunConfig cfg, int collect_count,
                                               int eval_episodes,
                                               const std::filesystem::path& workdir,
                                               std::ostream* log = nullptr) {
  cfg.task_name_str = "Arrange";
  cfg.multi_goal = true;
  cfg.prompt_variant = "detailed";
  auto data_dir = workdir / "dataset";
  if (!std::filesystem::exists(data_dir / "manifest.json"))
    collect_dataset(cfg, collect_count, data_dir);
  auto episodes = load_dataset(data_dir);

  std::vector<AblationRow> rows;
  for (std::string variant : {"irrelevant", "concise", "detailed"}) {
    RunConfig arm = cfg;
    arm.prompt_variant = variant;
    TaskSpec spec = arm.task_spec();
    auto relabeled = episodes;
    for (auto& ep : relabeled) {
      int color = ep.prompt_text.find("cyan") != std::string::npos ? 0 : 1;
      ep.prompt_text = prompt_for(spec, color);
    }
    rows.push_back(detail::ablation_arm(arm, relabeled, workdir / variant, variant,
                                        eval_episodes, log));
  }
  return rows;
}

/// Encoder ablation: one shared dataset, three models trained with the
/// geometric stream only, the vision-language stream only, and both fused.
inline std::vector<AblationRow> ablate_encoders(RunConfig cfg, int collect_count,
                                                int eval_episodes,
                                                const std::filesystem::path& workdir,
                                                std::ostream* log = nullptr) {
  auto data_dir = workdir / "dataset";
  if (!std::filesystem::exists(data_dir / "manifest.json"))
    collect_dataset(cfg, collect_count, data_dir);
  auto episodes = load_dataset(data_dir);

  struct Arm {
    const char* label;
    bool geom, vl;
  };
  std::vector<AblationRow> rows;
  for (Arm a : {Arm{"geometric-only", true, false}, Arm{"vision-language-only", false, true},
                Arm{"fused", true, true}}) {
    RunConfig arm = cfg;
    arm.use_geom = a.geom;
    arm.use_vl = a.vl;
    rows.push_back(detail::ablation_arm(arm, episodes, workdir / a.label, a.label,
                                        eval_episodes, log));
  }
  return rows;
}

}  // namespace benchtop
