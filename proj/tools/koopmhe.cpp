// koopmhe: simulate data, train Koopman models and run the moving-horizon estimator.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "koopmhe/error.hpp"
#include "koopmhe/experiment.hpp"
#include "koopmhe/log.hpp"

namespace fs = std::filesystem;
using namespace koopmhe;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  int verbosity = 1;
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig::from_key_values(KeyValues{})
                                          : ExperimentConfig::load(g.config);
  if (g.seed) cfg.set_seeds({*g.seed});
  return cfg;
}

std::uint64_t first_seed(const ExperimentConfig& cfg) { return cfg.seeds.front(); }

std::string out_path(const Globals& g, const std::string& name) {
  std::error_code ec;
  fs::create_directories(g.out, ec);
  require(!ec, ErrorCode::kIo, "cannot create output directory " + g.out + ": " + ec.message());
  return (fs::path(g.out) / name).string();
}

std::vector<std::string> comments(const ExperimentConfig& cfg, std::uint64_t seed) {
  return {hash_comment(cfg), "seed=" + std::to_string(seed)};
}

void stamp(KoopmanModel& m, const ExperimentConfig& cfg) { m.metadata["config_hash"] = cfg.hash(); }

void cmd_simulate(const Globals& g) {
  const ExperimentConfig cfg = load_config(g);
  const std::uint64_t seed = first_seed(cfg);
  const SimulatedData d = simulate_data(cfg, seed);
  out_path(g, "");
  write_data(d, g.out, comments(cfg, seed));
  log_info("seed " + std::to_string(seed) + " config_hash " + cfg.hash() + ": wrote data to " + g.out);
}

void cmd_pretrain(const Globals& g, const std::string& data_dir) {
  const ExperimentConfig cfg = load_config(g);
  const std::uint64_t seed = first_seed(cfg);
  const SimulatedData d = read_data(data_dir, cfg);
  PretrainResult r = pretrain(cfg, d, seed);
  stamp(r.model, cfg);
  save_model(r.model, out_path(g, "pretrained.kmhe"));
  write_text_file(out_path(g, "pretrain_report.csv"), pretrain_report_csv(r.report, comments(cfg, seed)));
  std::printf("nll=%.17g data_loss=%.17g\n", r.report.nll.back(), r.report.data_loss.back());
}

void cmd_train(const Globals& g, const std::string& physics, const std::string& data_dir,
               const std::string& pretrained_path, int repeat) {
  const ExperimentConfig cfg = load_config(g);
  const bool on = physics == "on";
  const SimulatedData d = read_data(data_dir, cfg);
  const std::string tag = on ? "physics" : "baseline";
  for (int i = 0; i < repeat; ++i) {
    const std::uint64_t seed = first_seed(cfg) + static_cast<std::uint64_t>(i);
    const KoopmanModel pre =
        pretrained_path.empty() ? pretrain(cfg, d, seed).model : load_model(pretrained_path);
    FitResult r = train_model(cfg, d, pre, on, seed);
    stamp(r.model, cfg);
    const std::string suffix = repeat == 1 ? "" : "_seed" + std::to_string(seed);
    save_model(r.model, out_path(g, tag + suffix + ".kmhe"));
    write_text_file(out_path(g, "train_report_" + tag + suffix + ".csv"), r.report.to_csv(comments(cfg, seed)));
    const auto ev = evaluate_prediction(r.model, d.scaled_test(), cfg.predict_horizon);
    std::printf("seed=%llu best_epoch=%d test_mse=%.17g\n", static_cast<unsigned long long>(seed),
                r.report.best_epoch, ev.mse);
  }
}

void cmd_predict(const Globals& g, const std::string& model_path, const std::string& data_path, int horizon) {
  const ExperimentConfig cfg = load_config(g);
  const KoopmanModel m = load_model(model_path);
  const Trajectory t = read_trajectory_csv(data_path, m.n_u);
  require(t.state_dim() == m.n_x, ErrorCode::kInputShape, "dataset has " + std::to_string(t.state_dim()) +
                                                              " states, model expects " + std::to_string(m.n_x));
  const int h = horizon > 0 ? horizon : cfg.predict_horizon;
  const auto c = comments(cfg, first_seed(cfg));
  write_text_file(out_path(g, "predictions.csv"), prediction_traces_csv(m, t, h, c));
  const auto ev = evaluate_prediction(m, {m.scaler.scale(t)}, h);
  write_text_file(out_path(g, "prediction_summary.csv"), prediction_summary_csv(ev, c));
  std::printf("mse=%.17g windows=%lld\n", ev.mse, static_cast<long long>(ev.windows));
}

void cmd_estimate(const Globals& g, const std::string& model_path, const std::string& log_path, int design) {
  const ExperimentConfig cfg = load_config(g);
  const std::uint64_t seed = first_seed(cfg);
  const KoopmanModel m = load_model(model_path);
  const auto flag = m.metadata.find("physics_enabled");
  if (flag != m.metadata.end()) {
    const bool physics = flag->second == "true";
    require(physics == (design != 3), ErrorCode::kConfiguration,
            design == 3 ? "design 3 needs the data-only model (physics_enabled = false)"
                        : "designs 1 and 2 need the physics-informed model");
  }
  const Trajectory truth = read_trajectory_csv(log_path, m.n_u);
  const Eigen::MatrixXd y = measure(truth, m.measured, cfg.measurement_std, SeedPlan::from(seed).measurement);
  const MheConfig mc = resolve_mhe_config(cfg.mhe, m, static_cast<MheDesign>(design));
  const EstimationRun run = run_estimator(m, truth, y, mc);
  write_text_file(out_path(g, "estimates_design" + std::to_string(design) + ".csv"),
                  estimates_to_csv(run, comments(cfg, seed)));
  int unconverged = 0;
  for (const auto& r : run.records) unconverged += r.info.converged ? 0 : 1;
  std::printf("mse=%.17g steps=%zu unconverged=%d\n", run.mse, run.records.size(), unconverged);
}

void cmd_compare(const Globals& g, bool unpaired, bool keep_artifacts) {
  ExperimentConfig cfg = load_config(g);
  if (unpaired) {
    cfg.paired = false;
    cfg.source.set("estimate.paired", "false");
  }
  CompareOptions opts;
  if (keep_artifacts) opts.out_dir = g.out;
  const ComparisonReport rep = run_comparison(cfg, opts);
  const std::vector<std::string> c = {hash_comment(cfg)};
  write_text_file(out_path(g, "comparison.csv"), rep.to_csv(c));
  write_text_file(out_path(g, "comparison_summary.csv"), rep.summary_csv(c));
  std::fputs(rep.summary_csv().c_str(), stdout);
}

void cmd_export(const Globals& g, const std::string& model_path, const std::string& comparison_dir) {
  require(!model_path.empty() || !comparison_dir.empty(), ErrorCode::kConfiguration,
          "export needs --model or --comparison");
  if (!model_path.empty()) {
    const KoopmanModel m = load_model(model_path);
    write_text_file(out_path(g, fs::path(model_path).stem().string() + ".txt"), export_readable(m));
  }
  if (!comparison_dir.empty()) {
    const std::string summary = (fs::path(comparison_dir) / "comparison_summary.csv").string();
    const KeyValues kv = [&] {
      // metric,value rows read back as key = value pairs
      std::string text;
      std::istringstream in(read_text_file(summary));
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line == "metric,value") continue;
        const auto comma = line.find(',');
        text += line.substr(0, comma) + " = " + line.substr(comma + 1) + "\n";
      }
      return KeyValues::parse(text, summary);
    }();
    std::string out = "design,model,weights,mean_mse\n";
    const char* rows[3][2] = {{"physics", "self_tuning"}, {"physics", "constant"}, {"baseline", "constant"}};
    for (int d = 1; d <= 3; ++d)
      out += std::to_string(d) + "," + rows[d - 1][0] + "," + rows[d - 1][1] + "," +
             kv.get_string("mean_mse_design" + std::to_string(d)) + "\n";
    write_text_file(out_path(g, "design_table.csv"), out);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-informed Koopman models with self-tuning moving-horizon estimation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed (replaces the config's seed list)");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("-v,--verbose", [&](std::int64_t n) { g.verbosity = 1 + static_cast<int>(n); }, "More logging");
  app.add_flag("-q,--quiet", [&](std::int64_t) { g.verbosity = 0; }, "Errors only");

  std::string data_dir, pretrained, physics = "on", model, log, data_file, comparison;
  int repeat = 1, horizon = 0, design = 1;
  bool unpaired = false, keep = false;

  auto* sim = app.add_subcommand("simulate", "Generate training, validation and test data");
  auto* pre = app.add_subcommand("pretrain-noise", "Pretrain the noise network");
  pre->add_option("--data", data_dir, "Directory written by simulate")->required();
  auto* train = app.add_subcommand("train", "Train a Koopman model");
  train->add_option("--physics", physics, "on: physics-informed, off: data-only")
      ->check(CLI::IsMember({"on", "off"}));
  train->add_option("--data", data_dir, "Directory written by simulate")->required();
  train->add_option("--pretrained", pretrained, "Model from pretrain-noise (pretrains when omitted)");
  train->add_option("--repeat", repeat, "Train with seeds seed, seed+1, ...")->check(CLI::PositiveNumber);
  auto* pred = app.add_subcommand("predict", "Open-loop multi-step prediction on a dataset");
  pred->add_option("--model", model)->required()->check(CLI::ExistingFile);
  pred->add_option("--data", data_file, "Trajectory CSV")->required()->check(CLI::ExistingFile);
  pred->add_option("--horizon", horizon, "Prediction steps (config default 20)");
  auto* est = app.add_subcommand("estimate", "Run the moving-horizon estimator over a trajectory log");
  est->add_option("--model", model)->required()->check(CLI::ExistingFile);
  est->add_option("--log", log, "Trajectory CSV with true states and inputs")->required()->check(CLI::ExistingFile);
  est->add_option("--design", design, "1 self-tuning, 2 constant weights, 3 data-only model")
      ->check(CLI::Range(1, 3));
  auto* cmp = app.add_subcommand("compare", "Train both models and run all designs over the seed list");
  cmp->add_flag("--unpaired", unpaired, "Independent noise realizations per design");
  cmp->add_flag("--keep", keep, "Keep per-seed models, reports and estimate CSVs");
  auto* exp = app.add_subcommand("export", "Readable model dump or design table");
  exp->add_option("--model", model, "Model file to dump")->check(CLI::ExistingFile);
  exp->add_option("--comparison", comparison, "Directory written by compare")->check(CLI::ExistingDirectory);
  exp->add_flag("--readable", "Structured text dump (the only model format offered)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  set_log_level(static_cast<LogLevel>(std::min(g.verbosity + 1, 3)));
  if (g.verbosity == 0) set_log_level(LogLevel::kQuiet);

  try {
    if (*sim) cmd_simulate(g);
    else if (*pre) cmd_pretrain(g, data_dir);
    else if (*train) cmd_train(g, physics, data_dir, pretrained, repeat);
    else if (*pred) cmd_predict(g, model, data_file, horizon);
    else if (*est) cmd_estimate(g, model, log, design);
    else if (*cmp) cmd_compare(g, unpaired, keep);
    else if (*exp) cmd_export(g, model, comparison);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
