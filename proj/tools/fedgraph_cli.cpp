/*
 * Copyright 2026 The Fedgraph Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Experiment front-end: generate synthetic cohorts, train under the four
// regimes, evaluate, and render result tables.
//
// Exit codes: 0 ok, 1 usage error, 2 data error, 3 training failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedgraph/experiment.hpp"

namespace fs = std::filesystem;
using namespace fedgraph;

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> repeats;
  std::optional<std::string> output_dir;
  std::optional<std::string> transport;
};

ExperimentConfig load_config(const CommonArgs& args) {
  nlohmann::json doc = nlohmann::json::object();
  if (!args.config_path.empty()) {
    doc = nlohmann::json::parse(expdetail::read_file(args.config_path));
  }
  ExperimentConfig cfg = experiment_config_from_json(doc);
  // flags override file fields; FEDGRAPH_SEED (applied above) overrides both
  if (args.seed && std::getenv("FEDGRAPH_SEED") == nullptr) cfg.seed = *args.seed;
  if (args.repeats) cfg.repeats = *args.repeats;
  if (args.output_dir) cfg.output_dir = *args.output_dir;
  if (args.transport) cfg.transport = *args.transport;
  return cfg;
}

std::string row_label_for(const ExperimentConfig& cfg, bool seen) {
  switch (cfg.regime) {
    case Regime::Single: return seen ? "Avg. seen" : "Avg. unseen";
    case Regime::CentralAll: return "All seen";
    case Regime::Fed:
      return cfg.round.aggregator.kind == AggregatorKind::FedAvg ? "FedAvg" : "FedSGD";
  }
  return "?";
}

std::string run_name(const ExperimentConfig& cfg) {
  std::string name = regime_name(cfg.regime);
  if (cfg.regime == Regime::Fed) {
    name += cfg.round.aggregator.kind == AggregatorKind::FedAvg ? "_fedavg" : "_fedsgd";
  }
  if (cfg.regime == Regime::Single) name += "_" + cfg.cohorts.front();
  return name;
}

int cmd_generate(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args);
  cfg.validate();
  for (const auto& name : cfg.cohorts) {
    CohortSpec spec = preset_by_name(name, fold(cfg.seed, "data"));
    Dataset ds = generate_cohort(spec, static_cast<std::size_t>(cfg.n_scenes));
    const fs::path dir = fs::path(cfg.output_dir) / "data" / name;
    save_dataset(dir, spec, ds);
    std::printf("cohort %s: %d scenes -> %s\n", name.c_str(), cfg.n_scenes, dir.string().c_str());
  }
  return 0;
}

Dataset load_cohort_or_die(const ExperimentConfig& cfg, const std::string& name) {
  const fs::path dir = fs::path(cfg.output_dir) / "data" / name;
  if (!fs::exists(dir / "dataset.json")) {
    throw Error(Errc::IoError, "no generated data for cohort '" + name + "' under " +
                                   dir.string() + " (run `fedgraph generate` first)");
  }
  return load_dataset(dir);
}

void write_manifest(const ExperimentConfig& cfg, const std::string& name,
                    const std::vector<std::uint64_t>& repeat_seeds,
                    const std::vector<std::string>& model_paths,
                    const std::vector<std::string>& report_paths) {
  nlohmann::ordered_json m;
  m["config_hash"] = config_hash(cfg);
  m["code_version"] = kCodeVersion;
  m["config"] = experiment_config_to_json(cfg);
  m["row_label_seen"] = row_label_for(cfg, true);
  m["repeat_seeds"] = repeat_seeds;
  m["models"] = model_paths;
  m["reports"] = report_paths;
  m["timestamp"] = static_cast<std::int64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  const fs::path dir = fs::path(cfg.output_dir) / "runs" / name;
  fs::create_directories(dir);
  expdetail::write_file(dir / "manifest.json", m.dump(2) + "\n");
}

int cmd_train(const CommonArgs& args, bool federated) {
  ExperimentConfig cfg = load_config(args);
  if (federated && cfg.regime != Regime::Fed) cfg.regime = Regime::Fed;
  if (!federated && cfg.regime == Regime::Fed) {
    cfg.regime = cfg.cohorts.size() == 1 ? Regime::Single : Regime::CentralAll;
  }
  cfg.validate();

  std::vector<Dataset> cohorts;
  for (const auto& name : cfg.cohorts) cohorts.push_back(load_cohort_or_die(cfg, name));
  std::vector<const Dataset*> ptrs;
  for (const auto& ds : cohorts) ptrs.push_back(&ds);

  const std::string name = run_name(cfg);
  const fs::path run_dir = fs::path(cfg.output_dir) / "runs" / name;
  fs::create_directories(run_dir);

  std::vector<std::uint64_t> repeat_seeds;
  std::vector<std::string> model_paths;
  for (int rep = 0; rep < cfg.repeats; ++rep) {
    const std::uint64_t run_seed = cfg.seed + static_cast<std::uint64_t>(rep);
    repeat_seeds.push_back(run_seed);
    TrainOutcome outcome;
    if (cfg.regime == Regime::Fed) {
      outcome = cfg.transport == "tcp"
                    ? train_federated_tcp(ptrs, cfg.round, cfg.feature_dim, run_seed)
                    : train_federated(ptrs, cfg.round, cfg.feature_dim, run_seed);
    } else {
      outcome = train_centralized(ptrs, cfg.round, cfg.feature_dim, run_seed, ptrs);
    }
    const fs::path model_path = run_dir / ("model_rep" + std::to_string(rep) + ".fsgw");
    save_model(model_path, outcome.store);
    model_paths.push_back(model_path.string());
    std::string csv = "step,loss\n";
    for (std::size_t i = 0; i < outcome.loss_history.size(); ++i) {
      csv += std::to_string(i) + "," + std::to_string(outcome.loss_history[i]) + "\n";
    }
    expdetail::write_file(run_dir / ("losses_rep" + std::to_string(rep) + ".csv"), csv);
    std::printf("trained %s repeat %d (seed %llu, %zu client steps)\n", name.c_str(), rep,
                static_cast<unsigned long long>(run_seed), outcome.loss_history.size());
  }
  write_manifest(cfg, name, repeat_seeds, model_paths, {});
  return 0;
}

int cmd_client(const CommonArgs& args, const std::string& connect, const std::string& cohort_name,
               int client_id) {
  ExperimentConfig cfg = load_config(args);
  const auto colon = connect.rfind(':');
  if (colon == std::string::npos) {
    throw Error(Errc::InvalidConfig, "--connect expects host:port");
  }
  const std::string host = connect.substr(0, colon);
  const int port = std::stoi(connect.substr(colon + 1));
  Dataset ds = load_cohort_or_die(cfg, cohort_name);
  ClientHandle client =
      make_client(static_cast<std::uint16_t>(client_id), ds, cfg.seed);
  run_client(host, static_cast<std::uint16_t>(port), client, cfg.round);
  std::printf("client %d (%s) finished\n", client_id, cohort_name.c_str());
  return 0;
}

int cmd_serve(const CommonArgs& args, int listen_port) {
  ExperimentConfig cfg = load_config(args);
  cfg.regime = Regime::Fed;
  cfg.validate();
  TcpServerTransport transport(static_cast<std::uint16_t>(listen_port),
                               static_cast<std::size_t>(cfg.round.n_clients));
  std::printf("listening on 127.0.0.1:%u for %d clients\n", transport.port(),
              cfg.round.n_clients);
  ServerState state;
  state.global = make_initial_params(cfg.feature_dim, cfg.seed);
  state.config = cfg.round;
  const ParamStore final_store = run_training(state, transport);
  const std::string name = run_name(cfg) + "_server";
  const fs::path run_dir = fs::path(cfg.output_dir) / "runs" / name;
  fs::create_directories(run_dir);
  save_model(run_dir / "model_rep0.fsgw", final_store);
  write_manifest(cfg, name, {cfg.seed}, {(run_dir / "model_rep0.fsgw").string()}, {});
  std::printf("saved %s\n", (run_dir / "model_rep0.fsgw").string().c_str());
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& run, const std::string& task_arg) {
  ExperimentConfig cfg = load_config(args);
  const fs::path run_dir = fs::path(cfg.output_dir) / "runs" / run;
  const fs::path manifest_path = run_dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw Error(Errc::MissingManifest, "no manifest at " + manifest_path.string());
  }
  const auto manifest = nlohmann::json::parse(expdetail::read_file(manifest_path));
  const ExperimentConfig train_cfg = experiment_config_from_json(manifest.at("config"));
  const auto trained_cohorts = train_cfg.cohorts;
  const bool bias_enabled = train_cfg.round.bias_mode != BiasMode::Disabled;

  std::vector<EvalTask> tasks;
  if (task_arg == "predcls") tasks = {EvalTask::PredicateClassification};
  else if (task_arg == "sgg") tasks = {EvalTask::SceneGraphGeneration};
  else if (task_arg == "both")
    tasks = {EvalTask::PredicateClassification, EvalTask::SceneGraphGeneration};
  else throw Error(Errc::InvalidConfig, "task must be predcls, sgg or both");

  const fs::path eval_dir = fs::path(cfg.output_dir) / "evals" / run;
  fs::create_directories(eval_dir);
  std::vector<std::string> report_paths;
  const auto models = manifest.at("models").get<std::vector<std::string>>();
  for (int rep = 0; rep < static_cast<int>(models.size()); ++rep) {
    const ParamStore store = load_model(models[static_cast<std::size_t>(rep)]);
    for (const auto& cohort_name : cfg.cohorts) {
      Dataset ds = load_cohort_or_die(cfg, cohort_name);
      const bool seen = std::find(trained_cohorts.begin(), trained_cohorts.end(), cohort_name) !=
                        trained_cohorts.end();
      for (EvalTask task : tasks) {
        EvalRecord rec;
        rec.row_label = train_cfg.regime == Regime::Single
                            ? (seen ? "Avg. seen" : "Avg. unseen")
                            : manifest.at("row_label_seen").get<std::string>();
        rec.eval_cohort = cohort_name;
        rec.seen = seen;
        rec.repeat = rep;
        rec.report = evaluate_on(store, ds, task, bias_enabled, EvalConfig{}, train_cfg.round.K);
        const std::string file_name =
            cohort_name + "_" + (task == EvalTask::PredicateClassification ? "predcls" : "sgg") +
            "_rep" + std::to_string(rep) + ".eval.json";
        expdetail::write_file(eval_dir / file_name, eval_record_to_json(rec).dump(2) + "\n");
        report_paths.push_back((eval_dir / file_name).string());
        std::printf("%s %s on %s (%s) rep %d: R@8=%s\n", run.c_str(), rec.report.task.c_str(),
                    cohort_name.c_str(), seen ? "seen" : "unseen", rep,
                    rec.report.r_at_k ? std::to_string(*rec.report.r_at_k).c_str() : "n/a");
      }
    }
  }
  nlohmann::ordered_json emanifest;
  emanifest["run"] = run;
  emanifest["reports"] = report_paths;
  expdetail::write_file(eval_dir / "manifest.json", emanifest.dump(2) + "\n");
  return 0;
}

int cmd_report(const CommonArgs& args, const std::vector<std::string>& runs) {
  ExperimentConfig cfg = load_config(args);
  std::vector<EvalRecord> records;
  std::vector<std::string> sources = runs;
  if (sources.empty()) {
    const fs::path evals = fs::path(cfg.output_dir) / "evals";
    if (fs::exists(evals)) {
      for (const auto& entry : fs::directory_iterator(evals)) {
        if (entry.is_directory()) sources.push_back(entry.path().filename().string());
      }
      std::sort(sources.begin(), sources.end());
    }
  }
  if (sources.empty()) throw Error(Errc::MissingManifest, "no evaluation results found");
  for (const auto& run : sources) {
    const fs::path manifest_path = fs::path(cfg.output_dir) / "evals" / run / "manifest.json";
    if (!fs::exists(manifest_path)) {
      throw Error(Errc::MissingManifest, "no evaluation manifest for run '" + run + "'");
    }
    const auto manifest = nlohmann::json::parse(expdetail::read_file(manifest_path));
    for (const auto& path : manifest.at("reports").get<std::vector<std::string>>()) {
      records.push_back(eval_record_from_json(nlohmann::json::parse(expdetail::read_file(path))));
    }
  }
  const fs::path report_dir = fs::path(cfg.output_dir) / "reports";
  fs::create_directories(report_dir);
  const std::string md = render_report_tables(records);
  const std::string csv = render_report_csv(records);
  expdetail::write_file(report_dir / "summary.md", md);
  expdetail::write_file(report_dir / "summary.csv", csv);
  std::printf("%s", md.c_str());
  std::printf("wrote %s and summary.csv\n", (report_dir / "summary.md").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated voxel scene graph experiments"};
  app.require_subcommand(1);

  CommonArgs common;
  std::uint64_t seed_flag = 0;
  int repeats_flag = 0;
  std::string output_flag, transport_flag;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "experiment config JSON");
    sub->add_option("--seed", seed_flag, "base seed (overrides config)")
        ->each([&](const std::string&) { common.seed = seed_flag; });
    sub->add_option("--repeats", repeats_flag, "number of repeats")
        ->each([&](const std::string&) { common.repeats = repeats_flag; });
    sub->add_option("--output-dir", output_flag, "output directory")
        ->each([&](const std::string&) { common.output_dir = output_flag; });
  };

  auto* generate = app.add_subcommand("generate", "write synthetic cohorts to disk");
  add_common(generate);

  auto* train_central = app.add_subcommand("train-central", "centralized training (single/all)");
  add_common(train_central);

  auto* train_fed = app.add_subcommand("train-fed", "federated training");
  add_common(train_fed);
  train_fed->add_option("--transport", transport_flag, "inproc or tcp")
      ->each([&](const std::string&) { common.transport = transport_flag; });
  int listen_port = -1;
  std::string connect_addr, client_cohort;
  int client_id = 0;
  train_fed->add_option("--listen", listen_port, "run as aggregation server on this port");
  train_fed->add_option("--connect", connect_addr, "run as a client against host:port");
  train_fed->add_option("--cohort", client_cohort, "cohort name for --connect mode");
  train_fed->add_option("--client-id", client_id, "client id for --connect mode");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate trained models on test splits");
  add_common(evaluate_cmd);
  std::string eval_run, eval_task = "both";
  evaluate_cmd->add_option("--run", eval_run, "run name under <output>/runs")->required();
  evaluate_cmd->add_option("--task", eval_task, "predcls, sgg or both");

  auto* report_cmd = app.add_subcommand("report", "render result tables from evaluations");
  add_common(report_cmd);
  std::vector<std::string> report_runs;
  report_cmd->add_option("--runs", report_runs, "run names (default: every evaluated run)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (generate->parsed()) return cmd_generate(common);
    if (train_central->parsed()) return cmd_train(common, /*federated=*/false);
    if (train_fed->parsed()) {
      if (!connect_addr.empty()) {
        if (client_cohort.empty()) {
          std::fprintf(stderr, "--connect requires --cohort\n");
          return 1;
        }
        return cmd_client(common, connect_addr, client_cohort, client_id);
      }
      if (listen_port >= 0) return cmd_serve(common, listen_port);
      return cmd_train(common, /*federated=*/true);
    }
    if (evaluate_cmd->parsed()) return cmd_evaluate(common, eval_run, eval_task);
    if (report_cmd->parsed()) return cmd_report(common, report_runs);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    switch (e.code()) {
      case Errc::InvalidConfig:
        return 1;
      case Errc::IoError:
      case Errc::MalformedFrame:
      case Errc::ChecksumMismatch:
      case Errc::MissingManifest:
      case Errc::InconsistentManifests:
      case Errc::EmptyDataset:
        return 2;
      default:
        return 3;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 1;
}
