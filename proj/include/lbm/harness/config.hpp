#pragma once

// Run configuration: one JSON file with a mandatory top-level seed and the
// sections simulator, act_model, iql, think, gqpo, eval. Every key is optional
// except the seed; unknown keys are rejected with their full path.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbm/act/model.hpp"
#include "lbm/act/trainer.hpp"
#include "lbm/core/binio.hpp"
#include "lbm/core/hash.hpp"
#include "lbm/gqpo/pipeline.hpp"
#include "lbm/iql/critic.hpp"
#include "lbm/market/dataset.hpp"
#include "lbm/think/backend.hpp"

namespace lbm::harness {

// Reads keys of one JSON object and remembers which were consumed.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : path_(std::move(path)) {
    if (j.is_null()) return;
    if (!j.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
    j_ = j;
  }

  template <class T>
  void read(const char* key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + path_ + "." + key + "' has the wrong type");
    }
  }

  Section sub(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return Section(it == j_.end() ? nlohmann::json() : *it, path_ + "." + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError("unknown config key '" + path_ + "." + it.key() + "'");
  }

 private:
  nlohmann::json j_ = nlohmann::json::object();
  std::string path_;
  std::set<std::string> used_;
};

struct ThinkSection {
  std::string backend = "scripted";  // scripted | noisy | remote
  double noise_rate = 0.0;
  int deadline_ms = 200;             // inter-decision interval
  int history = think::kDefaultHistory;
  think::RemoteConfig remote;
};

struct GqpoSection {
  gqpo::GqpoConfig pipeline;
  double noise_rate = 0.5;  // offline generator when the think backend is not remote
  unsigned parallel_groups = 4;
};

struct SweepSection {
  std::string axis = "budget_ratio";
  std::vector<nlohmann::json> values{0.5, 1.0, 1.5};
  int episodes_per_cell = 10;
};

struct EvalSection {
  int episodes = 20;
  double budget_ratio = 1.0;
  std::string instruction_override = "base";  // base | INCREASE | DECREASE
  unsigned workers = 1;
  int scatter_samples = 1000;
  int slack_ms = 2000;  // allowance on top of T * deadline per episode
  SweepSection sweep;
};

struct RunConfig {
  std::uint64_t seed = 0;
  market::DatasetSpec simulator;
  act::ActModelConfig act_model;
  act::ActTrainConfig act_train;
  double act_rtg_weight_w = 0.0;
  double return_scale = 2000.0;
  iql::IqlConfig iql;
  ThinkSection think;
  GqpoSection gqpo;
  EvalSection eval;

  // Sub-seeds per stage, derived from the master seed.
  std::uint64_t stage_seed(std::uint64_t stream) const { return mix_seed(seed, stream); }
};

namespace stream {
enum : std::uint64_t { simulator = 1, act = 2, iql = 3, think = 4, gqpo = 5, eval = 6 };
}

inline std::optional<think::Direction> parse_override(const std::string& s) {
  if (s == "base") return std::nullopt;
  if (s == "INCREASE") return think::Direction::Increase;
  if (s == "DECREASE") return think::Direction::Decrease;
  throw ConfigError("instruction override must be base, INCREASE or DECREASE, got '" + s + "'");
}

inline void validate(const RunConfig& c) {
  const auto& s = c.simulator;
  if (s.num_periods < 1) throw ConfigError("simulator.num_periods must be positive");
  if (!(s.budget_min > 0.0 && s.budget_max >= s.budget_min)) throw ConfigError("simulator budget range is invalid");
  if (!(s.cpa_min > 0.0 && s.cpa_max >= s.cpa_min)) throw ConfigError("simulator CPA range is invalid");
  if (s.episode.num_steps < 2) throw ConfigError("simulator.num_steps must be at least 2");
  if (s.episode.impressions_per_step < 1) throw ConfigError("simulator.impressions_per_step must be positive");
  if (s.policies.empty()) throw ConfigError("simulator.policies must not be empty");
  for (const auto& p : s.policies) {
    try {
      (void)market::make_policy(p, {});
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("simulator.policies: ") + e.what());
    }
  }
  try {
    c.act_model.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("act_model: ") + e.what());
  }
  if (c.act_model.vocab_size < act::Tokenizer::kFirstWord) throw ConfigError("act_model.vocab_size is too small");
  if (c.act_train.steps < 0 || c.act_train.batch_size < 1 || !(c.act_train.lr > 0.0))
    throw ConfigError("act_model training settings are invalid");
  if (!(c.act_rtg_weight_w >= 0.0)) throw ConfigError("act_model.rtg_weight_w must be non-negative");
  if (!(c.return_scale > 0.0)) throw ConfigError("act_model.return_scale must be positive");
  c.iql.validate();
  const auto& t = c.think;
  if (t.backend != "scripted" && t.backend != "noisy" && t.backend != "remote")
    throw ConfigError("think.backend must be scripted, noisy or remote, got '" + t.backend + "'");
  if (!(t.noise_rate >= 0.0 && t.noise_rate <= 1.0)) throw ConfigError("think.noise_rate must lie in [0, 1]");
  if (t.deadline_ms < 0) throw ConfigError("think.deadline_ms must be non-negative");
  if (t.history < 1) throw ConfigError("think.history must be positive");
  if (t.backend == "remote") {
    (void)think::parse_endpoint(t.remote.endpoint);
    if (t.remote.max_in_flight < 1 || t.remote.max_in_flight > 64)
      throw ConfigError("think.remote.max_in_flight must lie in [1, 64]");
    if (t.remote.timeout_ms < 0 || t.remote.max_retries < 0)
      throw ConfigError("think.remote timeout and retries must be non-negative");
  }
  c.gqpo.pipeline.validate();
  if (!(c.gqpo.noise_rate >= 0.0 && c.gqpo.noise_rate <= 1.0)) throw ConfigError("gqpo.noise_rate must lie in [0, 1]");
  const auto& e = c.eval;
  if (e.episodes < 1) throw ConfigError("eval.episodes must be positive");
  if (!(e.budget_ratio > 0.0)) throw ConfigError("eval.budget_ratio must be positive");
  (void)parse_override(e.instruction_override);
  if (e.scatter_samples < 1) throw ConfigError("eval.scatter_samples must be positive");
  if (e.slack_ms < 0) throw ConfigError("eval.slack_ms must be non-negative");
  const auto& sw = e.sweep;
  if (sw.axis != "budget_ratio" && sw.axis != "rtg_weight_w" && sw.axis != "instruction_override")
    throw ConfigError("eval.sweep.axis must be budget_ratio, rtg_weight_w or instruction_override");
  if (sw.values.empty()) throw ConfigError("eval.sweep.values must not be empty");
  if (sw.episodes_per_cell < 1) throw ConfigError("eval.sweep.episodes_per_cell must be positive");
  for (const auto& v : sw.values) {
    if (sw.axis == "instruction_override") {
      if (!v.is_string()) throw ConfigError("eval.sweep.values must be strings for instruction_override");
      (void)parse_override(v.get<std::string>());
    } else {
      if (!v.is_number()) throw ConfigError("eval.sweep.values must be numbers for " + sw.axis);
      if (sw.axis == "budget_ratio" && !(v.get<double>() > 0.0)) throw ConfigError("budget_ratio values must be > 0");
      if (sw.axis == "rtg_weight_w" && !(v.get<double>() >= 0.0)) throw ConfigError("rtg_weight_w values must be >= 0");
    }
  }
}

inline RunConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("seed")) throw ConfigError("config key 'seed' is mandatory");
  RunConfig c;
  Section root(j, "config");
  root.read("seed", c.seed);

  {
    auto s = root.sub("simulator");
    auto& d = c.simulator;
    s.read("num_periods", d.num_periods);
    s.read("num_steps", d.episode.num_steps);
    s.read("impressions_per_step", d.episode.impressions_per_step);
    s.read("sparse", d.episode.sparse_mode);
    s.read("budget_min", d.budget_min);
    s.read("budget_max", d.budget_max);
    s.read("cpa_min", d.cpa_min);
    s.read("cpa_max", d.cpa_max);
    s.read("policies", d.policies);
    s.read("workers", d.workers);
    s.read("action_min", d.env.action_min);
    s.read("action_max", d.env.action_max);
    s.read("sentinel_cpa_ratio", d.env.cpa.sentinel_ratio);
    auto m = s.sub("market");
    auto& mp = d.env.market;
    m.read("num_competitors", mp.num_competitors);
    m.read("value_alpha", mp.value_alpha);
    m.read("value_beta", mp.value_beta);
    m.read("market_cpa", mp.market_cpa);
    m.read("bid_log_sigma", mp.bid_log_sigma);
    m.read("drift_amplitude", mp.drift_amplitude);
    m.read("drift_phase", mp.drift_phase);
    m.read("competitor_value_corr", mp.competitor_value_corr);
    m.read("traffic_amplitude", mp.traffic_amplitude);
    m.read("perf_is_value", mp.perf_is_value);
    m.finish();
    s.finish();
  }
  {
    auto s = root.sub("act_model");
    auto& m = c.act_model;
    s.read("d_model", m.transformer.d_model);
    s.read("n_heads", m.transformer.n_heads);
    s.read("n_layers", m.transformer.n_layers);
    s.read("max_seq_len", m.transformer.max_seq_len);
    s.read("dropout", m.transformer.dropout_rate);
    s.read("ffn_mult", m.transformer.ffn_mult);
    s.read("seq_len", m.seq_len);
    s.read("vocab_size", m.vocab_size);
    s.read("max_cot_len", m.max_cot_len);
    const int d = m.transformer.d_model;
    m.embed_widths = {d, d, d};
    m.head_widths = {d, d, 1};
    s.read("embed_widths", m.embed_widths);
    s.read("head_widths", m.head_widths);
    s.read("steps", c.act_train.steps);
    s.read("batch_size", c.act_train.batch_size);
    s.read("lr", c.act_train.lr);
    s.read("weight_decay", c.act_train.weight_decay);
    s.read("grad_clip", c.act_train.grad_clip);
    s.read("log_every", c.act_train.log_every);
    s.read("rtg_weight_w", c.act_rtg_weight_w);
    s.read("return_scale", c.return_scale);
    s.finish();
  }
  {
    auto s = root.sub("iql");
    auto& q = c.iql;
    s.read("gamma", q.gamma);
    s.read("polyak_tau", q.polyak_tau);
    s.read("expectile", q.expectile);
    s.read("d_model", q.transformer.d_model);
    s.read("n_heads", q.transformer.n_heads);
    s.read("n_layers", q.transformer.n_layers);
    s.read("max_seq_len", q.transformer.max_seq_len);
    s.read("dropout", q.transformer.dropout_rate);
    s.read("seq_len", q.seq_len);
    s.read("lr", q.lr);
    s.read("weight_decay", q.weight_decay);
    s.read("batch_size", q.batch_size);
    s.read("steps", q.steps);
    s.read("grad_clip", q.grad_clip);
    s.read("log_every", q.log_every);
    s.finish();
  }
  {
    auto s = root.sub("think");
    auto& t = c.think;
    s.read("backend", t.backend);
    s.read("noise_rate", t.noise_rate);
    s.read("deadline_ms", t.deadline_ms);
    s.read("history", t.history);
    auto r = s.sub("remote");
    r.read("endpoint", t.remote.endpoint);
    r.read("model", t.remote.model);
    r.read("temperature", t.remote.temperature);
    r.read("timeout_ms", t.remote.timeout_ms);
    r.read("max_retries", t.remote.max_retries);
    r.read("max_in_flight", t.remote.max_in_flight);
    r.read("auth_env", t.remote.auth_env);
    r.read("system_prompt", t.remote.system_prompt);
    r.finish();
    s.finish();
  }
  {
    auto s = root.sub("gqpo");
    auto& g = c.gqpo;
    s.read("group_size", g.pipeline.group_size);
    s.read("beta", g.pipeline.beta);
    s.read("target_count", g.pipeline.target_count);
    s.read("noise_rate", g.noise_rate);
    s.read("parallel_groups", g.parallel_groups);
    s.finish();
  }
  {
    auto s = root.sub("eval");
    auto& e = c.eval;
    s.read("episodes", e.episodes);
    s.read("budget_ratio", e.budget_ratio);
    s.read("instruction_override", e.instruction_override);
    s.read("workers", e.workers);
    s.read("scatter_samples", e.scatter_samples);
    s.read("slack_ms", e.slack_ms);
    auto w = s.sub("sweep");
    w.read("axis", e.sweep.axis);
    w.read("values", e.sweep.values);
    w.read("episodes_per_cell", e.sweep.episodes_per_cell);
    w.finish();
    s.finish();
  }
  root.finish();

  // Derived settings shared between sections.
  c.simulator.seed = c.stage_seed(stream::simulator);
  c.act_model.action_min = c.simulator.env.action_min;
  c.act_model.action_max = c.simulator.env.action_max;
  c.act_train.seed = c.stage_seed(stream::act);
  c.iql.seed = c.stage_seed(stream::iql);
  c.iql.return_scale = c.return_scale;
  c.gqpo.pipeline.seed = c.stage_seed(stream::gqpo);
  c.gqpo.pipeline.history = c.think.history;
  validate(c);
  return c;
}

// Fully resolved configuration, defaults included; keys are sorted, so the
// dump is canonical.
inline nlohmann::json resolved_json(const RunConfig& c) {
  const auto& s = c.simulator;
  const auto& mp = s.env.market;
  const auto& m = c.act_model;
  const auto& q = c.iql;
  const auto& t = c.think;
  const auto& e = c.eval;
  return {
      {"seed", c.seed},
      {"simulator",
       {{"num_periods", s.num_periods},
        {"num_steps", s.episode.num_steps},
        {"impressions_per_step", s.episode.impressions_per_step},
        {"sparse", s.episode.sparse_mode},
        {"budget_min", s.budget_min},
        {"budget_max", s.budget_max},
        {"cpa_min", s.cpa_min},
        {"cpa_max", s.cpa_max},
        {"policies", s.policies},
        {"action_min", s.env.action_min},
        {"action_max", s.env.action_max},
        {"sentinel_cpa_ratio", s.env.cpa.sentinel_ratio},
        {"market",
         {{"num_competitors", mp.num_competitors},
          {"value_alpha", mp.value_alpha},
          {"value_beta", mp.value_beta},
          {"market_cpa", mp.market_cpa},
          {"bid_log_sigma", mp.bid_log_sigma},
          {"drift_amplitude", mp.drift_amplitude},
          {"drift_phase", mp.drift_phase},
          {"competitor_value_corr", mp.competitor_value_corr},
          {"traffic_amplitude", mp.traffic_amplitude},
          {"perf_is_value", mp.perf_is_value}}}}},
      {"act_model",
       {{"d_model", m.transformer.d_model},
        {"n_heads", m.transformer.n_heads},
        {"n_layers", m.transformer.n_layers},
        {"max_seq_len", m.transformer.max_seq_len},
        {"dropout", m.transformer.dropout_rate},
        {"ffn_mult", m.transformer.ffn_mult},
        {"seq_len", m.seq_len},
        {"vocab_size", m.vocab_size},
        {"max_cot_len", m.max_cot_len},
        {"embed_widths", m.embed_widths},
        {"head_widths", m.head_widths},
        {"steps", c.act_train.steps},
        {"batch_size", c.act_train.batch_size},
        {"lr", c.act_train.lr},
        {"weight_decay", c.act_train.weight_decay},
        {"grad_clip", c.act_train.grad_clip},
        {"log_every", c.act_train.log_every},
        {"rtg_weight_w", c.act_rtg_weight_w},
        {"return_scale", c.return_scale}}},
      {"iql",
       {{"gamma", q.gamma},
        {"polyak_tau", q.polyak_tau},
        {"expectile", q.expectile},
        {"d_model", q.transformer.d_model},
        {"n_heads", q.transformer.n_heads},
        {"n_layers", q.transformer.n_layers},
        {"max_seq_len", q.transformer.max_seq_len},
        {"dropout", q.transformer.dropout_rate},
        {"seq_len", q.seq_len},
        {"lr", q.lr},
        {"weight_decay", q.weight_decay},
        {"batch_size", q.batch_size},
        {"steps", q.steps},
        {"grad_clip", q.grad_clip},
        {"log_every", q.log_every}}},
      {"think",
       {{"backend", t.backend},
        {"noise_rate", t.noise_rate},
        {"deadline_ms", t.deadline_ms},
        {"history", t.history},
        {"remote",
         {{"endpoint", t.remote.endpoint},
          {"model", t.remote.model},
          {"temperature", t.remote.temperature},
          {"timeout_ms", t.remote.timeout_ms},
          {"max_retries", t.remote.max_retries},
          {"max_in_flight", t.remote.max_in_flight},
          {"auth_env", t.remote.auth_env},
          {"system_prompt", t.remote.system_prompt}}}}},
      {"gqpo",
       {{"group_size", c.gqpo.pipeline.group_size},
        {"beta", c.gqpo.pipeline.beta},
        {"target_count", c.gqpo.pipeline.target_count},
        {"noise_rate", c.gqpo.noise_rate},
        {"parallel_groups", c.gqpo.parallel_groups}}},
      {"eval",
       {{"episodes", e.episodes},
        {"budget_ratio", e.budget_ratio},
        {"instruction_override", e.instruction_override},
        {"workers", e.workers},
        {"scatter_samples", e.scatter_samples},
        {"slack_ms", e.slack_ms},
        {"sweep", {{"axis", e.sweep.axis}, {"values", e.sweep.values}, {"episodes_per_cell", e.sweep.episodes_per_cell}}}}}};
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(resolved_json(c).dump())); }

inline RunConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path, "config file");
  } catch (const MissingArtifact& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

}  // namespace lbm::harness
