#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lbm/harness/commands.hpp"

namespace {

using namespace lbm;

void require_input(const std::string& path, const std::string& what) {
  if (path.empty()) throw MissingArtifact(what + " path not given");
  if (!std::filesystem::exists(path)) throw MissingArtifact(what + " '" + path + "' does not exist");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale language-model auto-bidding pipeline"};
  app.require_subcommand(1);

  std::string config_path, out, cot_out, data, cot, act_path, critic, backend;
  int episodes = 0, samples = 0;

  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", config_path, "Run configuration (JSON)")->required();
    c->add_option("--backend", backend, "Override think.backend (scripted, noisy, remote)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the behavior dataset and its CoT side-file");
  add_config(gen);
  gen->add_option("--out", out, "Trajectory file (.jsonl or binary)")->required();
  gen->add_option("--cot-out", cot_out, "CoT side-file");

  auto* tiql = app.add_subcommand("train-iql", "Train the Q/V critics");
  add_config(tiql);
  tiql->add_option("--data", data, "Trajectory file")->required();
  tiql->add_option("--out", out, "Critic checkpoint")->required();

  auto* tact = app.add_subcommand("train-act", "Train the Act model");
  add_config(tact);
  tact->add_option("--data", data, "Trajectory file")->required();
  tact->add_option("--cot", cot, "CoT side-file (omit for a plain decision transformer)");
  tact->add_option("--out", out, "Act checkpoint")->required();

  auto* gq = app.add_subcommand("gqpo-export", "Score CoT groups with the critic and export the SFT set");
  add_config(gq);
  gq->add_option("--data", data, "Trajectory file")->required();
  gq->add_option("--act", act_path, "Act checkpoint")->required();
  gq->add_option("--critic", critic, "Critic checkpoint")->required();
  gq->add_option("--out", out, "SFT JSON-lines file")->required();

  auto* ev = app.add_subcommand("evaluate", "CoT arm against the empty-CoT ablation");
  add_config(ev);
  ev->add_option("--act", act_path, "Act checkpoint")->required();
  ev->add_option("--out", out, "Output prefix (.json and .csv are appended)")->required();
  ev->add_option("--episodes", episodes, "Override eval.episodes");

  auto* sw = app.add_subcommand("sweep", "Sweep eval.sweep.axis over eval.sweep.values");
  add_config(sw);
  sw->add_option("--act", act_path, "Act checkpoint (budget_ratio, instruction_override)");
  sw->add_option("--data", data, "Trajectory file (rtg_weight_w)");
  sw->add_option("--cot", cot, "CoT side-file (rtg_weight_w)");
  sw->add_option("--out", out, "CSV file")->required();

  auto* sc = app.add_subcommand("behavior-scatter", "Sample (cpa_ratio, action delta) decision points");
  add_config(sc);
  sc->add_option("--act", act_path, "Act checkpoint")->required();
  sc->add_option("--out", out, "CSV file")->required();
  sc->add_option("--samples", samples, "Override eval.scatter_samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    auto cfg = harness::load_config(config_path);
    if (!backend.empty()) {
      cfg.think.backend = backend;
      harness::validate(cfg);
    }
    nlohmann::json summary;
    if (gen->parsed()) {
      summary = harness::cmd_gen_data(cfg, out, cot_out);
    } else if (tiql->parsed()) {
      require_input(data, "dataset");
      summary = harness::cmd_train_iql(cfg, data, out);
    } else if (tact->parsed()) {
      require_input(data, "dataset");
      if (!cot.empty()) require_input(cot, "CoT side-file");
      summary = harness::cmd_train_act(cfg, data, cot, out);
    } else if (gq->parsed()) {
      require_input(data, "dataset");
      require_input(act_path, "act checkpoint");
      require_input(critic, "critic checkpoint");
      summary = harness::cmd_gqpo_export(cfg, data, act_path, critic, out);
    } else if (ev->parsed()) {
      require_input(act_path, "act checkpoint");
      summary = harness::cmd_evaluate(cfg, act_path, out, episodes);
    } else if (sw->parsed()) {
      if (cfg.eval.sweep.axis == "rtg_weight_w") {
        require_input(data, "dataset");
        if (!cot.empty()) require_input(cot, "CoT side-file");
      } else {
        require_input(act_path, "act checkpoint");
      }
      summary = harness::cmd_sweep(cfg, act_path, data, cot, out);
    } else if (sc->parsed()) {
      require_input(act_path, "act checkpoint");
      summary = harness::cmd_behavior_scatter(cfg, act_path, out, samples);
    }
    std::cout << summary.dump(2) << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 3;
  } catch (const think::BackendUnavailable& e) {
    std::cerr << "backend failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
