#pragma once

#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbm/act/bundle.hpp"
#include "lbm/core/parallel.hpp"
#include "lbm/gqpo/adapters.hpp"
#include "lbm/gqpo/pipeline.hpp"
#include "lbm/harness/config.hpp"
#include "lbm/harness/episode.hpp"
#include "lbm/iql/bundle.hpp"
#include "lbm/market/trajectory_io.hpp"
#include "lbm/think/cot_file.hpp"

namespace lbm::harness {

// Metadata embedded in every output.
inline nlohmann::json provenance(const RunConfig& cfg, const std::string& command) {
  return {{"command", command}, {"config_hash", config_hash(cfg)}, {"seed", cfg.seed}};
}

inline void check_roster(std::uint64_t hash, const std::string& what) {
  if (hash != market::roster_hash())
    throw MissingArtifact(what + " was produced under a different state feature roster (" + hex64(hash) + " vs " +
                          hex64(market::roster_hash()) + ")");
}

// Reads an input artifact; any decode failure is reported as a missing artifact.
template <class Fn>
auto read_artifact(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const MissingArtifact&) {
    throw;
  } catch (const std::exception& e) {
    throw MissingArtifact(what + " is unreadable: " + e.what());
  }
}

inline market::TrajectoryDataset load_dataset(const std::string& path) {
  const std::string what = "dataset '" + path + "'";
  auto ds = read_artifact(what, [&] { return market::read_trajectories(path); });
  check_roster(ds.header.roster_hash, what);
  if (ds.trajectories.empty()) throw MissingArtifact(what + " holds no trajectories");
  return ds;
}

inline act::ActBundle load_act(const std::string& path) {
  const std::string what = "act checkpoint '" + path + "'";
  auto b = read_artifact(what, [&] { return act::load_act_bundle(path); });
  check_roster(b.roster_hash, what);
  return b;
}

inline iql::CriticBundle load_critic(const std::string& path) {
  const std::string what = "critic checkpoint '" + path + "'";
  auto b = read_artifact(what, [&] { return iql::load_critic_bundle(path); });
  check_roster(b.roster_hash, what);
  return b;
}

inline think::CotFile load_cots(const std::string& path) {
  return read_artifact("CoT side-file '" + path + "'", [&] { return think::read_cot_file(path); });
}

// Creates the think backend for one episode or stage. Oracle backends are
// seeded per use so parallel episodes stay deterministic; a remote backend is
// shared so its in-flight limit is global.
using BackendFactory = std::function<std::shared_ptr<think::ThinkBackend>(std::uint64_t seed)>;

inline BackendFactory make_backend_factory(const ThinkSection& t, std::optional<double> noise_override = {}) {
  if (t.backend == "remote") {
    auto shared = std::make_shared<think::RemoteChatBackend>(t.remote);
    return [shared](std::uint64_t) { return shared; };
  }
  const double noise = noise_override ? *noise_override : (t.backend == "noisy" ? t.noise_rate : 0.0);
  return [noise](std::uint64_t seed) { return std::make_shared<think::OracleBackend>(noise, seed); };
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataResult {
  market::TrajectoryDataset dataset;
  think::CotFile cots;
};

// Behavior dataset plus one CoT per (trajectory, t >= 1) from the think backend.
inline GenDataResult generate_data(const RunConfig& cfg, const BackendFactory& factory) {
  GenDataResult r;
  r.dataset = market::generate_dataset(cfg.simulator, config_hash(cfg));
  r.cots.header = provenance(cfg, "gen-data");
  r.cots.header["backend"] = cfg.think.backend;
  auto backend = factory(cfg.stage_seed(stream::think));
  r.cots.header["backend_name"] = backend->name();
  for (const auto& t : r.dataset.trajectories)
    for (int s = 1; s < static_cast<int>(t.length()); ++s) {
      const auto ctx = think::context_from_states(t.states, t.actions, s, t.meta.cpa_constraint, t.meta.budget,
                                                  static_cast<int>(t.length()), cfg.think.history);
      const auto resp = think::generate_cot(*backend, ctx, 1).front();
      r.cots.add({t.meta.id, s, resp.text, resp.direction, resp.claimed_cpa_ratio});
    }
  return r;
}

inline nlohmann::json cmd_gen_data(const RunConfig& cfg, const std::string& out, const std::string& cot_out) {
  auto r = generate_data(cfg, make_backend_factory(cfg.think));
  market::write_trajectories(out, r.dataset);
  if (!cot_out.empty()) think::write_cot_file(cot_out, r.cots);
  auto j = provenance(cfg, "gen-data");
  j["trajectories"] = r.dataset.trajectories.size();
  j["cot_entries"] = r.cots.entries.size();
  return j;
}

// ---------------------------------------------------------------------------
// train-act

struct ActTrainResult {
  act::ActBundle bundle;
  std::vector<double> curve;
  act::SampleStats stats;
};

inline ActTrainResult train_act_model(const RunConfig& cfg, const std::vector<market::Trajectory>& data,
                                      const think::CotFile* cots, double rtg_w, int steps = -1) {
  ActTrainResult r;
  Rng init(cfg.stage_seed(stream::act) ^ 0xac7);
  r.bundle.model = act::ActModel<float>(cfg.act_model, init);
  r.bundle.tokenizer = act::Tokenizer(cfg.act_model.vocab_size);
  if (cots) {
    std::vector<std::string> corpus;
    for (const auto& [k, e] : cots->entries) corpus.push_back(e.text);
    r.bundle.tokenizer.fit(corpus);
  }
  r.bundle.normalizer = act::Normalizer::fit(data, cfg.return_scale);
  r.bundle.rtg = act::RtgSchedule::from_dataset(data, cfg.return_scale, rtg_w);
  const auto samples = act::build_act_samples(data, cots, r.bundle.tokenizer, r.bundle.normalizer, cfg.act_model,
                                              rtg_w, &r.stats);
  act::ActTrainer<float> trainer(r.bundle.model, cfg.act_train);
  r.curve = trainer.train(samples, steps);
  r.bundle.provenance = provenance(cfg, "train-act");
  r.bundle.provenance["rtg_weight_w"] = rtg_w;
  r.bundle.provenance["samples"] = {{"total", r.stats.total},
                                    {"with_cot", r.stats.with_cot},
                                    {"rejected_by_anchor", r.stats.rejected},
                                    {"missing_cot", r.stats.missing}};
  return r;
}

inline double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  to = std::min(to, v.size());
  if (from >= to) return 0.0;
  double s = 0.0;
  for (std::size_t i = from; i < to; ++i) s += v[i];
  return s / double(to - from);
}

inline nlohmann::json cmd_train_act(const RunConfig& cfg, const std::string& data_path, const std::string& cot_path,
                                    const std::string& out) {
  const auto ds = load_dataset(data_path);
  std::optional<think::CotFile> cots;
  if (!cot_path.empty()) cots = load_cots(cot_path);
  auto r = train_act_model(cfg, ds.trajectories, cots ? &*cots : nullptr, cfg.act_rtg_weight_w);
  act::save_act_bundle(out, r.bundle);
  auto j = provenance(cfg, "train-act");
  j["samples"] = r.bundle.provenance["samples"];
  const std::size_t k = std::max<std::size_t>(1, r.curve.size() / 20);
  j["initial_loss"] = mean_of(r.curve, 0, k);
  j["final_loss"] = mean_of(r.curve, r.curve.size() - std::min(k, r.curve.size()), r.curve.size());
  nlohmann::json log = nlohmann::json::array();
  for (std::size_t i = 0; i < r.curve.size(); ++i)
    if (cfg.act_train.log_every > 0 && ((i + 1) % cfg.act_train.log_every == 0 || i + 1 == r.curve.size()))
      log.push_back({{"step", i + 1}, {"loss", r.curve[i]}});
  nlohmann::json logfile = provenance(cfg, "train-act");
  logfile["log"] = log;
  write_file(out + ".log.json", logfile.dump(2) + "\n");
  return j;
}

// ---------------------------------------------------------------------------
// train-iql

inline iql::CriticBundle train_critic(const RunConfig& cfg, const std::vector<market::Trajectory>& data,
                                      std::vector<iql::IqlLogRow>* log = nullptr, int steps = -1) {
  const auto norm = act::Normalizer::fit(data, cfg.return_scale);
  const auto transitions = iql::build_transitions(data, cfg.iql.seq_len, norm);
  iql::IqlLearner<float> learner(cfg.iql);
  auto rows = learner.train(transitions, steps);
  if (log) *log = std::move(rows);
  auto b = iql::make_critic_bundle(learner, norm, data);
  b.provenance = provenance(cfg, "train-iql");
  return b;
}

inline nlohmann::json cmd_train_iql(const RunConfig& cfg, const std::string& data_path, const std::string& out) {
  const auto ds = load_dataset(data_path);
  std::vector<iql::IqlLogRow> rows;
  auto b = train_critic(cfg, ds.trajectories, &rows);
  iql::save_critic_bundle(out, b);
  std::string lines;
  for (const auto& r : rows) lines += iql::to_json(r).dump() + "\n";
  write_file(out + ".log.jsonl", lines);
  auto j = provenance(cfg, "train-iql");
  j["steps"] = cfg.iql.steps;
  if (!rows.empty()) j["final"] = iql::to_json(rows.back());
  return j;
}

// ---------------------------------------------------------------------------
// gqpo-export

inline nlohmann::json cmd_gqpo_export(const RunConfig& cfg, const std::string& data_path, const std::string& act_path,
                                      const std::string& critic_path, const std::string& out) {
  const auto ds = load_dataset(data_path);
  auto actor_bundle = load_act(act_path);
  auto critic_bundle = load_critic(critic_path);
  gqpo::BundleActor actor(actor_bundle);
  gqpo::BundleCritic critic(critic_bundle);
  const bool remote = cfg.think.backend == "remote";
  auto backend = make_backend_factory(cfg.think, remote ? std::nullopt : std::optional<double>(cfg.gqpo.noise_rate))(
      cfg.stage_seed(stream::gqpo));
  auto res = gqpo::run_pipeline(ds.trajectories, actor, critic, *backend, cfg.gqpo.pipeline, cfg.gqpo.parallel_groups);
  res.report.out_of_distribution = critic.out_of_distribution();
  auto report = provenance(cfg, "gqpo-export");
  report["report"] = res.report.to_json();
  report["backend"] = backend->name();
  if (!res.records.empty()) gqpo::export_sft(out, res.records, cfg.gqpo.pipeline.beta, provenance(cfg, "gqpo-export"));
  write_file(out + ".report.json", report.dump(2) + "\n");
  if (!res.report.backend_error.empty())
    throw think::BackendUnavailable("gqpo-export stopped after " + std::to_string(res.records.size()) +
                                    " records: " + res.report.backend_error);
  return report;
}

// ---------------------------------------------------------------------------
// evaluate / sweep / behavior-scatter

struct ArmSpec {
  std::string name;
  CotMode mode = CotMode::Think;
  std::optional<think::Direction> override_direction;
  double budget_ratio = 1.0;
};

struct ArmResult {
  ArmSpec spec;
  std::vector<EpisodeOutcome> episodes;
  bidding::MetricReport mean;
  think::SchedulerStats think;
  double max_wall_ms = 0.0;
  double mean_delta_action = 0.0;
};

inline double deadline_budget_ms(const RunConfig& cfg) {
  return double(cfg.simulator.episode.num_steps) * cfg.think.deadline_ms + cfg.eval.slack_ms;
}

inline ArmResult run_arm(const RunConfig& cfg, act::ActBundle& model, const BackendFactory& factory,
                         const ArmSpec& arm, int episodes) {
  ArmResult r;
  r.spec = arm;
  r.episodes.resize(static_cast<std::size_t>(episodes));
  EpisodeOptions opt;
  opt.mode = arm.mode;
  opt.override_direction = arm.override_direction;
  opt.deadline = std::chrono::milliseconds(cfg.think.deadline_ms);
  opt.history = cfg.think.history;
  parallel_for(r.episodes.size(), cfg.eval.workers, [&](std::size_t i) {
    const auto setup = make_episode(cfg, static_cast<int>(i), arm.budget_ratio);
    std::shared_ptr<think::ThinkBackend> backend;
    if (arm.mode == CotMode::Think && !arm.override_direction)
      backend = factory(mix_seed(cfg.stage_seed(stream::think), i));
    r.episodes[i] = run_episode(model, backend.get(), setup, cfg.simulator.env, opt);
  });
  std::vector<bidding::MetricReport> rows;
  double dsum = 0.0;
  std::size_t dn = 0;
  for (const auto& e : r.episodes) {
    rows.push_back(e.metrics);
    r.think.requested += e.think.requested;
    r.think.delivered += e.think.delivered;
    r.think.misses += e.think.misses;
    r.think.failures += e.think.failures;
    r.max_wall_ms = std::max(r.max_wall_ms, e.wall_ms);
    for (const auto& s : e.steps)
      if (s.t > 0) {
        dsum += s.delta_action;
        ++dn;
      }
  }
  r.mean = bidding::mean_report(rows);
  r.mean_delta_action = dn ? dsum / double(dn) : 0.0;
  return r;
}

inline nlohmann::json think_json(const think::SchedulerStats& s) {
  return {{"requested", s.requested}, {"delivered", s.delivered}, {"misses", s.misses}, {"failures", s.failures}};
}

inline std::string episode_csv_header() {
  return std::string("arm,episode,budget,cpa_constraint,") + bidding::metric_csv_header() +
         ",cot_requested,cot_delivered,cot_misses,config_hash,seed\n";
}

inline std::string episode_csv_rows(const RunConfig& cfg, const ArmResult& a) {
  std::string out;
  const auto h = config_hash(cfg);
  for (const auto& e : a.episodes)
    out += a.spec.name + "," + std::to_string(e.setup.index) + "," + format_roundtrip(e.setup.episode.budget) + "," +
           format_roundtrip(e.setup.episode.cpa_constraint) + "," + bidding::to_csv_row(e.metrics) + "," +
           std::to_string(e.think.requested) + "," + std::to_string(e.think.delivered) + "," +
           std::to_string(e.think.misses) + "," + h + "," + std::to_string(cfg.seed) + "\n";
  return out;
}

struct EvaluateResult {
  std::vector<ArmResult> arms;
  nlohmann::json report;    // deterministic part
  nlohmann::json timing;    // wall-clock measurements
  std::string csv;
};

inline nlohmann::json arm_json(const ArmResult& a) {
  nlohmann::json m;
  bidding::to_json(m, a.mean);
  return {{"arm", a.spec.name},
          {"episodes", a.episodes.size()},
          {"budget_ratio", a.spec.budget_ratio},
          {"instruction_override", a.spec.override_direction ? think::to_string(*a.spec.override_direction) : "base"},
          {"metrics", m},
          {"mean_delta_action", a.mean_delta_action},
          {"think", think_json(a.think)}};
}

// The configured override (or the scripted CoT) against the empty-CoT
// ablation, paired by episode seed.
inline EvaluateResult evaluate(const RunConfig& cfg, act::ActBundle& model, const BackendFactory& factory,
                               int episodes) {
  EvaluateResult r;
  const auto ov = parse_override(cfg.eval.instruction_override);
  ArmSpec cot{ov ? std::string("override-") + think::to_string(*ov) : "cot", CotMode::Think, ov, cfg.eval.budget_ratio};
  ArmSpec empty{"empty-cot", CotMode::Empty, std::nullopt, cfg.eval.budget_ratio};
  r.arms.push_back(run_arm(cfg, model, factory, cot, episodes));
  r.arms.push_back(run_arm(cfg, model, factory, empty, episodes));
  r.report = provenance(cfg, "evaluate");
  r.report["think_backend"] = cfg.think.backend;
  r.report["arms"] = nlohmann::json::array();
  for (const auto& a : r.arms) r.report["arms"].push_back(arm_json(a));
  r.report["delta"] = {{"score", r.arms[0].mean.score - r.arms[1].mean.score},
                       {"conversions", r.arms[0].mean.conversions - r.arms[1].mean.conversions},
                       {"cpa_ratio", r.arms[0].mean.cpa_ratio - r.arms[1].mean.cpa_ratio}};
  r.timing = {{"deadline_budget_ms", deadline_budget_ms(cfg)}, {"arms", nlohmann::json::array()}};
  for (const auto& a : r.arms) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& e : a.episodes) per.push_back(e.wall_ms);
    r.timing["arms"].push_back({{"arm", a.spec.name}, {"max_wall_ms", a.max_wall_ms}, {"episode_wall_ms", per}});
  }
  r.csv = episode_csv_header();
  for (const auto& a : r.arms) r.csv += episode_csv_rows(cfg, a);
  return r;
}

inline nlohmann::json cmd_evaluate(const RunConfig& cfg, const std::string& act_path, const std::string& out_prefix,
                                   int episodes) {
  auto model = load_act(act_path);
  auto r = evaluate(cfg, model, make_backend_factory(cfg.think), episodes > 0 ? episodes : cfg.eval.episodes);
  auto full = r.report;
  full["timing"] = r.timing;
  write_file(out_prefix + ".json", full.dump(2) + "\n");
  write_file(out_prefix + ".csv", r.csv);
  return full;
}

struct SweepResult {
  std::vector<std::string> labels;
  std::vector<ArmResult> cells;
  std::string csv;
};

// One row per value. budget_ratio and instruction_override evaluate `model`;
// rtg_weight_w retrains the Act model per value from `data`/`cots`.
inline SweepResult sweep(const RunConfig& cfg, act::ActBundle* model, const BackendFactory& factory,
                         const std::vector<market::Trajectory>* data = nullptr, const think::CotFile* cots = nullptr) {
  const auto& sw = cfg.eval.sweep;
  SweepResult r;
  for (const auto& v : sw.values) {
    ArmSpec arm{"", CotMode::Think, std::nullopt, cfg.eval.budget_ratio};
    std::optional<act::ActBundle> retrained;
    act::ActBundle* m = model;
    if (sw.axis == "budget_ratio") {
      arm.budget_ratio = v.get<double>();
      r.labels.push_back(format_roundtrip(arm.budget_ratio));
    } else if (sw.axis == "instruction_override") {
      arm.override_direction = parse_override(v.get<std::string>());
      r.labels.push_back(v.get<std::string>());
    } else {
      if (!data) throw ConfigError("sweep over rtg_weight_w needs a dataset to retrain on");
      retrained = train_act_model(cfg, *data, cots, v.get<double>()).bundle;
      m = &*retrained;
      r.labels.push_back(format_roundtrip(v.get<double>()));
    }
    if (!m) throw MissingArtifact("sweep over " + sw.axis + " needs an act checkpoint");
    arm.name = sw.axis + "=" + r.labels.back();
    r.cells.push_back(run_arm(cfg, *m, factory, arm, sw.episodes_per_cell));
  }
  r.csv = sw.axis + ",episodes," + bidding::metric_csv_header() +
          ",mean_delta_action,cot_requested,cot_delivered,cot_misses,config_hash,seed\n";
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto& c = r.cells[i];
    r.csv += r.labels[i] + "," + std::to_string(c.episodes.size()) + "," + bidding::to_csv_row(c.mean) + "," +
             format_roundtrip(c.mean_delta_action) + "," + std::to_string(c.think.requested) + "," +
             std::to_string(c.think.delivered) + "," + std::to_string(c.think.misses) + "," + config_hash(cfg) + "," +
             std::to_string(cfg.seed) + "\n";
  }
  return r;
}

inline nlohmann::json cmd_sweep(const RunConfig& cfg, const std::string& act_path, const std::string& data_path,
                                const std::string& cot_path, const std::string& out_csv) {
  std::optional<act::ActBundle> model;
  if (!act_path.empty()) model = load_act(act_path);
  std::optional<market::TrajectoryDataset> ds;
  std::optional<think::CotFile> cots;
  if (!data_path.empty()) ds = load_dataset(data_path);
  if (!cot_path.empty()) cots = load_cots(cot_path);
  auto r = sweep(cfg, model ? &*model : nullptr, make_backend_factory(cfg.think), ds ? &ds->trajectories : nullptr,
                 cots ? &*cots : nullptr);
  write_file(out_csv, r.csv);
  auto j = provenance(cfg, "sweep");
  j["axis"] = cfg.eval.sweep.axis;
  j["rows"] = r.cells.size();
  return j;
}

struct ScatterPoint {
  int episode = 0;
  int t = 0;
  double cpa_ratio = 0.0;
  double delta_action = 0.0;
  think::Direction direction = think::Direction::None;
};

// `samples` decision points (t >= 1) drawn without replacement from enough
// evaluation episodes to cover them.
inline std::vector<ScatterPoint> behavior_scatter(const RunConfig& cfg, act::ActBundle& model,
                                                  const BackendFactory& factory, int samples) {
  const int per_episode = cfg.simulator.episode.num_steps - 1;
  const int episodes = (samples + per_episode - 1) / per_episode;
  const auto arm = run_arm(cfg, model, factory, {"scatter", CotMode::Think, parse_override(cfg.eval.instruction_override),
                                                 cfg.eval.budget_ratio},
                           episodes);
  std::vector<ScatterPoint> pts;
  for (const auto& e : arm.episodes)
    for (const auto& s : e.steps)
      if (s.t > 0) pts.push_back({e.setup.index, s.t, s.cpa_ratio, s.delta_action, s.direction});
  Rng rng(mix_seed(cfg.stage_seed(stream::eval), 0x5ca7));
  std::shuffle(pts.begin(), pts.end(), rng);
  pts.resize(static_cast<std::size_t>(samples));
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return std::tie(a.episode, a.t) < std::tie(b.episode, b.t); });
  return pts;
}

inline std::string scatter_csv(const RunConfig& cfg, const std::vector<ScatterPoint>& pts) {
  std::string out = "episode,t,cpa_ratio,delta_action,direction,config_hash,seed\n";
  const auto h = config_hash(cfg);
  for (const auto& p : pts)
    out += std::to_string(p.episode) + "," + std::to_string(p.t) + "," + format_roundtrip(p.cpa_ratio) + "," +
           format_roundtrip(p.delta_action) + "," + think::to_string(p.direction) + "," + h + "," +
           std::to_string(cfg.seed) + "\n";
  return out;
}

inline nlohmann::json cmd_behavior_scatter(const RunConfig& cfg, const std::string& act_path, const std::string& out_csv,
                                           int samples) {
  auto model = load_act(act_path);
  const int n = samples > 0 ? samples : cfg.eval.scatter_samples;
  const auto pts = behavior_scatter(cfg, model, make_backend_factory(cfg.think), n);
  write_file(out_csv, scatter_csv(cfg, pts));
  auto j = provenance(cfg, "behavior-scatter");
  j["samples"] = pts.size();
  return j;
}

}  // namespace lbm::harness
