#pragma once

#include <cstdio>
#include <map>
#include <sstream>

#include "benchtop/encoders.hpp"
#include "benchtop/runtime.hpp"
#include "benchtop/trainer.hpp"

namespace benchtop {

/// Full run configuration. Flat INI-style text with one section per module;
/// unknown sections or keys are hard errors. Defaults are the desk-scale
/// model dimensions with the original training recipe (batch 16 x accum 8).
struct RunConfig {
  // [run]
  std::uint64_t seed = 0;
  int resolution = 64;
  // [encoders]
  std::uint64_t geom_seed = 1, vl_seed = 2, text_seed = 3;
  int patch_size = 16;
  int geom_dim = 32, geom_hidden = 64;
  int vl_dim = 64, vl_hidden = 64;
  int text_dim = 64;
  bool use_geom = true, use_vl = true;
  // [adapter]
  int adapter_embed_dim = 64, adapter_ff_hidden = 256, adapter_blocks = 8, adapter_heads = 4;
  bool condition_includes_image_tokens = true;
  std::uint64_t adapter_init_seed = 11;
  // [dit]
  int dit_embed_dim = 64, dit_ff_hidden = 256, dit_blocks = 8, dit_heads = 4;
  int horizon = 32;
  std::uint64_t dit_init_seed = 13;
  // [flow]
  FlowConfig flow;
  // [train]
  TrainConfig train;
  // [task]
  std::string task_name_str = "Arrange";
  bool multi_goal = false;
  std::string prompt_variant = "detailed";
  int episode_cap = 0;  // 0 = per-task default
  // [ensemble]
  double ensemble_decay = 0.1;
  bool prefer_oldest = false;
  // [runtime]
  int latency_ticks = 8;
  int buffer_capacity = 4;
  int window = 2;

  // ---- derived views -----------------------------------------------------

  int fused_image_dim() const {
    require(use_geom || use_vl, "at least one encoder stream required");
    return (use_geom ? geom_dim : 0) + (use_vl ? vl_dim : 0);
  }

  ObservationEncoder observation_encoder() const {
    ObservationEncoder enc;
    enc.geom_cfg = FrozenEncoderConfig{geom_seed, patch_size, geom_dim, geom_hidden};
    enc.vl_cfg = FrozenEncoderConfig{vl_seed, patch_size, vl_dim, vl_hidden};
    enc.text_seed = text_seed;
    enc.text_dim = text_dim;
    enc.use_geom = use_geom;
    enc.use_vl = use_vl;
    return enc;
  }

  AdapterConfig adapter_config() const {
    AdapterConfig c;
    c.embed_dim = adapter_embed_dim;
    c.ff_hidden = adapter_ff_hidden;
    c.blocks = adapter_blocks;
    c.heads = adapter_heads;
    c.img_dim = fused_image_dim();
    c.txt_dim = text_dim;
    c.condition_includes_image_tokens = condition_includes_image_tokens;
    c.init_seed = adapter_init_seed;
    return c;
  }

  DiTConfig dit_config() const {
    DiTConfig c;
    c.embed_dim = dit_embed_dim;
    c.ff_hidden = dit_ff_hidden;
    c.blocks = dit_blocks;
    c.heads = dit_heads;
    c.horizon = horizon;
    c.init_seed = dit_init_seed;
    return c;
  }

  TaskSpec task_spec() const {
    TaskSpec s = TaskSpec::for_task(task_from_name(task_name_str), multi_goal);
    s.variant = variant_from_name(prompt_variant);
    if (episode_cap > 0) s.episode_cap = episode_cap;
    s.validate();
    return s;
  }

  RunEpisodeConfig episode_config() const {
    RunEpisodeConfig c;
    c.ensemble.decay = ensemble_decay;
    c.ensemble.horizon = horizon;
    c.ensemble.prefer_oldest = prefer_oldest;
    c.latency_ticks = latency_ticks;
    c.resolution = resolution;
    c.window = window;
    c.buffer_capacity = buffer_capacity;
    return c;
  }

  // ---- profiles ----------------------------------------------------------

  /// Desk profile: dimensions tuned so a 20k-iteration run fits a single
  /// CPU core in well under two hours.
  static RunConfig desk() {
    RunConfig c;
    c.train.batch_size = 16;
    c.train.accumulation = 2;
    c.train.total_iterations = 20000;
    c.train.lr = 2e-4;
    c.train.lr_warmup_steps = 200;
    c.train.lr_final_frac = 0.05;
    return c;
  }

  /// Published model dimensions, for structure inspection only.
  static RunConfig paper_dims() {
    RunConfig c;
    c.patch_size = 16;
    c.geom_dim = 768;
    c.vl_dim = 1152;
    c.text_dim = 768;
    c.adapter_embed_dim = 512;
    c.adapter_ff_hidden = 2048;
    c.adapter_heads = 8;
    c.dit_embed_dim = 512;
    c.dit_ff_hidden = 2048;
    c.dit_heads = 8;
    c.train.batch_size = 16;
    c.train.accumulation = 8;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Parse / serialize
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct ConfigReader {
  std::map<std::string, std::map<std::string, std::string>> kv;

  std::string take(const std::string& sec, const std::string& key) {
    auto s = kv.find(sec);
    if (s == kv.end()) return "";
    auto k = s->second.find(key);
    if (k == s->second.end()) return "";
    std::string v = k->second;
    s->second.erase(k);
    return v;
  }

  void check_exhausted() const {
    for (const auto& [sec, keys] : kv)
      for (const auto& [key, val] : keys)
        fail("unknown config key: [" + sec + "] " + key);
  }
};

inline bool parse_bool(const std::string& v, const std::string& what) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail("bad boolean for " + what + ": " + v);
}

}  // namespace detail

inline std::string serialize_config(const RunConfig& c) {
  std::ostringstream o;
  auto d = detail::fmt_double;
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "[run]\n"
    << "seed = " << c.seed << "\n"
    << "resolution = " << c.resolution << "\n\n";
  o << "[encoders]\n"
    << "geom_seed = " << c.geom_seed << "\n"
    << "vl_seed = " << c.vl_seed << "\n"
    << "text_seed = " << c.text_seed << "\n"
    << "patch_size = " << c.patch_size << "\n"
    << "geom_dim = " << c.geom_dim << "\n"
    << "geom_hidden = " << c.geom_hidden << "\n"
    << "vl_dim = " << c.vl_dim << "\n"
    << "vl_hidden = " << c.vl_hidden << "\n"
    << "text_dim = " << c.text_dim << "\n"
    << "use_geom = " << b(c.use_geom) << "\n"
    << "use_vl = " << b(c.use_vl) << "\n\n";
  o << "[adapter]\n"
    << "embed_dim = " << c.adapter_embed_dim << "\n"
    << "ff_hidden = " << c.adapter_ff_hidden << "\n"
    << "blocks = " << c.adapter_blocks << "\n"
    << "heads = " << c.adapter_heads << "\n"
    << "condition_includes_image_tokens = " << b(c.condition_includes_image_tokens) << "\n"
    << "init_seed = " << c.adapter_init_seed << "\n\n";
  o << "[dit]\n"
    << "embed_dim = " << c.dit_embed_dim << "\n"
    << "ff_hidden = " << c.dit_ff_hidden << "\n"
    << "blocks = " << c.dit_blocks << "\n"
    << "heads = " << c.dit_heads << "\n"
    << "horizon = " << c.horizon << "\n"
    << "init_seed = " << c.dit_init_seed << "\n\n";
  o << "[flow]\n"
    << "beta_alpha = " << d(c.flow.beta_alpha) << "\n"
    << "beta_beta = " << d(c.flow.beta_beta) << "\n"
    << "tau_scale = " << d(c.flow.tau_scale) << "\n"
    << "denoise_steps = " << c.flow.denoise_steps << "\n"
    << "clip_output = " << b(c.flow.clip_output) << "\n"
    << "sample_temperature = " << d(c.flow.sample_temperature) << "\n\n";
  o << "[train]\n"
    << "batch_size = " << c.train.batch_size << "\n"
    << "accumulation = " << c.train.accumulation << "\n"
    << "lr = " << d(c.train.lr) << "\n"
    << "weight_decay = " << d(c.train.weight_decay) << "\n"
    << "adam_beta1 = " << d(c.train.adam_beta1) << "\n"
    << "adam_beta2 = " << d(c.train.adam_beta2) << "\n"
    << "adam_eps = " << d(c.train.adam_eps) << "\n"
    << "ema_decay = " << d(c.train.ema_decay) << "\n"
    << "clip_norm = " << d(c.train.clip_norm) << "\n"
    << "total_iterations = " << c.train.total_iterations << "\n"
    << "checkpoint_every = " << c.train.checkpoint_every << "\n"
    << "lr_warmup_steps = " << c.train.lr_warmup_steps << "\n"
    << "lr_final_frac = " << d(c.train.lr_final_frac) << "\n\n";
  o << "[task]\n"
    << "name = " << c.task_name_str << "\n"
    << "multi_goal = " << b(c.multi_goal) << "\n"
    << "variant = " << c.prompt_variant << "\n"
    << "episode_cap = " << c.episode_cap << "\n\n";
  o << "[ensemble]\n"
    << "decay = " << d(c.ensemble_decay) << "\n"
    << "prefer_oldest = " << b(c.prefer_oldest) << "\n\n";
  o << "[runtime]\n"
    << "latency_ticks = " << c.latency_ticks << "\n"
    << "buffer_capacity = " << c.buffer_capacity << "\n"
    << "window = " << c.window << "\n";
  return o.str();
}

inline RunConfig parse_config(const std::string& text) {
  detail::ConfigReader rd;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      require(t.back() == ']', "bad section header at line " + std::to_string(lineno));
      section = t.substr(1, t.size() - 2);
      continue;
    }
    auto eq = t.find('=');
    require(eq != std::string::npos, "expected key = value at line " + std::to_string(lineno));
    require(!section.empty(), "key outside any section at line " + std::to_string(lineno));
    std::string key = detail::trim(t.substr(0, eq));
    std::string val = detail::trim(t.substr(eq + 1));
    require(!key.empty(), "empty key at line " + std::to_string(lineno));
    require(!rd.kv[section].count(key), "duplicate key: [" + section + "] " + key);
    rd.kv[section][key] = val;
  }

  RunConfig c;
  auto geti = [&](const std::string& sec, const std::string& key, int& out) {
    std::string v = rd.take(sec, key);
    if (!v.empty()) out = std::stoi(v);
  };
  auto getu = [&](const std::string& sec, const std::string& key, std::uint64_t& out) {
    std::string v = rd.take(sec, key);
    if (!v.empty()) out = std::stoull(v);
  };
  auto getd = [&](const std::string& sec, const std::string& key, double& out) {
    std::string v = rd.take(sec, key);
    if (!v.empty()) out = std::stod(v);
  };
  auto getb = [&](const std::string& sec, const std::string& key, bool& out) {
    std::string v = rd.take(sec, key);
    if (!v.empty()) out = detail::parse_bool(v, "[" + sec + "] " + key);
  };
  auto gets = [&](const std::string& sec, const std::string& key, std::string& out) {
    std::string v = rd.take(sec, key);
    if (!v.empty()) out = v;
  };

  getu("run", "seed", c.seed);
  geti("run", "resolution", c.resolution);
  getu("encoders", "geom_seed", c.geom_seed);
  getu("encoders", "vl_seed", c.vl_seed);
  getu("encoders", "text_seed", c.text_seed);
  geti("encoders", "patch_size", c.patch_size);
  geti("encoders", "geom_dim", c.geom_dim);
  geti("encoders", "geom_hidden", c.geom_hidden);
  geti("encoders", "vl_dim", c.vl_dim);
  geti("encoders", "vl_hidden", c.vl_hidden);
  geti("encoders", "text_dim", c.text_dim);
  getb("encoders", "use_geom", c.use_geom);
  getb("encoders", "use_vl", c.use_vl);
  geti("adapter", "embed_dim", c.adapter_embed_dim);
  geti("adapter", "ff_hidden", c.adapter_ff_hidden);
  geti("adapter", "blocks", c.adapter_blocks);
  geti("adapter", "heads", c.adapter_heads);
  getb("adapter", "condition_includes_image_tokens", c.condition_includes_image_tokens);
  getu("adapter", "init_seed", c.adapter_init_seed);
  geti("dit", "embed_dim", c.dit_embed_dim);
  geti("dit", "ff_hidden", c.dit_ff_hidden);
  geti("dit", "blocks", c.dit_blocks);
  geti("dit", "heads", c.dit_heads);
  geti("dit", "horizon", c.horizon);
  getu("dit", "init_seed", c.dit_init_seed);
  getd("flow", "beta_alpha", c.flow.beta_alpha);
  getd("flow", "beta_beta", c.flow.beta_beta);
  getd("flow", "tau_scale", c.flow.tau_scale);
  geti("flow", "denoise_steps", c.flow.denoise_steps);
  getb("flow", "clip_output", c.flow.clip_output);
  getd("flow", "sample_temperature", c.flow.sample_temperature);
  geti("train", "batch_size", c.train.batch_size);
  geti("train", "accumulation", c.train.accumulation);
  getd("train", "lr", c.train.lr);
  getd("train", "weight_decay", c.train.weight_decay);
  getd("train", "adam_beta1", c.train.adam_beta1);
  getd("train", "adam_beta2", c.train.adam_beta2);
  getd("train", "adam_eps", c.train.adam_eps);
  getd("train", "ema_decay", c.train.ema_decay);
  getd("train", "clip_norm", c.train.clip_norm);
  geti("train", "total_iterations", c.train.total_iterations);
  geti("train", "checkpoint_every", c.train.checkpoint_every);
  geti("train", "lr_warmup_steps", c.train.lr_warmup_steps);
  getd("train", "lr_final_frac", c.train.lr_final_frac);
  gets("task", "name", c.task_name_str);
  getb("task", "multi_goal", c.multi_goal);
  gets("task", "variant", c.prompt_variant);
  geti("task", "episode_cap", c.episode_cap);
  getd("ensemble", "decay", c.ensemble_decay);
  getb("ensemble", "prefer_oldest", c.prefer_oldest);
  geti("runtime", "latency_ticks", c.latency_ticks);
  geti("runtime", "buffer_capacity", c.buffer_capacity);
  geti("runtime", "window", c.window);

  rd.check_exhausted();
  task_from_name(c.task_name_str);       // validate enum spellings eagerly
  variant_from_name(c.prompt_variant);
  c.train.seed = c.seed;
  return c;
}

inline RunConfig load_config(const std::filesystem::path& p) {
  std::ifstream f(p);
  require(f.good(), "cannot open config: " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

inline void save_config(const RunConfig& c, const std::filesystem::path& p) {
  std::ofstream f(p);
  f << serialize_config(c);
  require(f.good(), "write failed: " + p.string());
}

}  // namespace benchtop
