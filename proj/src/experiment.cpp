#include "koopmhe/experiment.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>

#include "koopmhe/error.hpp"
#include "koopmhe/log.hpp"
#include "koopmhe/rng.hpp"

namespace koopmhe {

namespace fs = std::filesystem;

namespace {

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string join_doubles(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_double(v[i]);
  }
  return s;
}

std::vector<Trajectory> scaled(const Scaler& s, const std::vector<Trajectory>& runs) {
  std::vector<Trajectory> out;
  out.reserve(runs.size());
  for (const auto& t : runs) out.push_back(s.scale(t));
  return out;
}

std::string with_comments(const std::vector<std::string>& comments) {
  std::string s;
  for (const auto& c : comments) s += "# " + c + "\n";
  return s;
}

}  // namespace

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k = {
      "seeds",           "process_params",     "test_samples",   "predict.horizon",
      "estimate.samples", "estimate.runs",     "estimate.measurement_std", "estimate.paired"};
  return k;
}

void ExperimentConfig::validate() const {
  require(!seeds.empty(), ErrorCode::kConfiguration, "seed list is empty");
  params.validate();
  dataset.validate();
  train.validate();
  mhe.validate();
  require(test_samples >= train.horizon + 1, ErrorCode::kConfiguration,
          "test_samples must cover at least one window");
  require(predict_horizon >= 1, ErrorCode::kConfiguration, "predict.horizon must be >= 1");
  require(estimate_samples > mhe.horizon + 1, ErrorCode::kConfiguration,
          "estimate.samples must exceed mhe.horizon + 1");
  require(estimate_runs >= 1, ErrorCode::kConfiguration, "estimate.runs must be >= 1");
  require(measurement_std >= 0.0 && std::isfinite(measurement_std), ErrorCode::kConfiguration,
          "estimate.measurement_std must be finite and non-negative");
  require(dataset.horizon == train.horizon, ErrorCode::kConfiguration,
          "dataset.horizon and train.horizon differ");
}

std::string ExperimentConfig::hash() const {
  return hex16(fnv1a64(source.to_string() + "\n" + params.to_key_values().to_string()));
}

void ExperimentConfig::set_seeds(const std::vector<std::uint64_t>& s) {
  seeds = s;
  std::string v;
  for (std::size_t i = 0; i < s.size(); ++i) v += (i ? ", " : "") + std::to_string(s[i]);
  source.set("seeds", v);
  validate();
}

ExperimentConfig ExperimentConfig::from_key_values(const KeyValues& kv, const std::string& base_dir) {
  std::vector<std::string> known = keys();
  for (const auto& k : DatasetConfig::keys()) known.push_back("dataset." + k);
  for (const auto& k : TrainConfig::keys()) known.push_back("train." + k);
  for (const auto& k : MheConfig::keys()) known.push_back("mhe." + k);
  kv.expect_only(known, "experiment");

  ExperimentConfig c;
  c.source = kv;
  if (kv.has("seeds")) c.seeds = kv.get_u64s("seeds");
  if (kv.has("process_params")) {
    fs::path p = kv.get_string("process_params");
    if (p.is_relative()) p = fs::path(base_dir) / p;
    require(fs::exists(p), ErrorCode::kConfiguration, "process parameter file not found: " + p.string());
    c.process_params_path = p.string();
    c.params = ProcessParams::load(c.process_params_path);
  }
  c.dataset = DatasetConfig::from_key_values(kv.section("dataset."));
  KeyValues tkv = kv.section("train.");
  if (!tkv.has("horizon")) tkv.set("horizon", std::to_string(c.dataset.horizon));
  c.train = TrainConfig::from_key_values(tkv);
  c.mhe = MheConfig::from_key_values(kv.section("mhe."));
  c.test_samples = kv.get_or<int>("test_samples", c.test_samples);
  c.predict_horizon = kv.get_or<int>("predict.horizon", c.predict_horizon);
  c.estimate_samples = kv.get_or<int>("estimate.samples", c.estimate_samples);
  c.estimate_runs = kv.get_or<int>("estimate.runs", c.estimate_runs);
  c.measurement_std = kv.get_or<double>("estimate.measurement_std", c.measurement_std);
  c.paired = kv.get_or<bool>("estimate.paired", c.paired);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  const KeyValues kv = KeyValues::load(path);
  return from_key_values(kv, fs::path(path).parent_path().string().empty()
                                 ? std::string(".")
                                 : fs::path(path).parent_path().string());
}

SeedPlan SeedPlan::from(std::uint64_t master) {
  const Rng m(master);
  return {m.stream("simulation").seed(), m.stream("test").seed(),      m.stream("init").seed(),
          m.stream("training").seed(),   m.stream("estimation").seed(), m.stream("measurement").seed()};
}

std::vector<Trajectory> SimulatedData::scaled_train() const { return scaled(scaler, dataset.train); }
std::vector<Trajectory> SimulatedData::scaled_validation() const {
  return scaled(scaler, dataset.validation);
}
std::vector<Trajectory> SimulatedData::scaled_test() const { return {scaler.scale(test)}; }

SimulatedData simulate_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  const SeedPlan plan = SeedPlan::from(seed);
  SimulatedData d;
  // Full runs are regenerated with the dataset's own streams and split here so
  // the files hold every sample.
  DatasetConfig whole = cfg.dataset;
  whole.train_fraction = 1.0;
  const TrajectoryDataset full = generate_dataset(whole, cfg.params, plan.simulation);
  d.runs = full.train;
  d.dataset.horizon = cfg.dataset.horizon;
  d.dataset.disturbance = full.disturbance;
  for (const auto& r : d.runs) split_run(r, cfg.dataset.horizon, cfg.dataset.train_fraction, d.dataset);
  d.test = generate_run(cfg.dataset, cfg.params, cfg.test_samples, plan.test);
  d.scaler = fit_scaler(d.dataset.train);
  return d;
}

std::string scaler_to_text(const Scaler& s, const std::vector<std::string>& comments) {
  KeyValues kv;
  kv.set("state_mean", join_doubles(s.state_mean));
  kv.set("state_std", join_doubles(s.state_std));
  kv.set("input_mean", join_doubles(s.input_mean));
  kv.set("input_std", join_doubles(s.input_std));
  return with_comments(comments) + kv.to_string();
}

Scaler scaler_from_text(const std::string& text, const std::string& origin) {
  const KeyValues kv = KeyValues::parse(text, origin);
  kv.expect_only({"state_mean", "state_std", "input_mean", "input_std"}, "scaler");
  Scaler s;
  s.state_mean = to_vector(kv.get_doubles("state_mean"));
  s.state_std = to_vector(kv.get_doubles("state_std"));
  s.input_mean = to_vector(kv.get_doubles("input_mean"));
  s.input_std = to_vector(kv.get_doubles("input_std"));
  s.validate();
  return s;
}

void write_data(const SimulatedData& d, const std::string& dir, const std::vector<std::string>& comments) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create directory " + dir + ": " + ec.message());
  for (std::size_t r = 0; r < d.runs.size(); ++r) {
    const std::string name = d.runs.size() == 1 ? "train.csv" : "train_" + std::to_string(r) + ".csv";
    write_trajectory_csv(join_path(dir, name), d.runs[r], comments);
  }
  if (d.dataset.validation.size() == 1) {
    write_trajectory_csv(join_path(dir, "val.csv"), d.dataset.validation.front(), comments);
  } else {
    for (std::size_t r = 0; r < d.dataset.validation.size(); ++r)
      write_trajectory_csv(join_path(dir, "val_" + std::to_string(r) + ".csv"), d.dataset.validation[r],
                           comments);
  }
  write_trajectory_csv(join_path(dir, "test.csv"), d.test, comments);
  write_text_file(join_path(dir, "scaler.cfg"), scaler_to_text(d.scaler, comments));
}

SimulatedData read_data(const std::string& dir, const ExperimentConfig& cfg) {
  SimulatedData d;
  if (fs::exists(join_path(dir, "train.csv"))) {
    d.runs.push_back(read_trajectory_csv(join_path(dir, "train.csv")));
  } else {
    for (int r = 0; fs::exists(join_path(dir, "train_" + std::to_string(r) + ".csv")); ++r)
      d.runs.push_back(read_trajectory_csv(join_path(dir, "train_" + std::to_string(r) + ".csv")));
  }
  require(!d.runs.empty(), ErrorCode::kIo, "no training data in " + dir);
  d.dataset.horizon = cfg.dataset.horizon;
  for (const auto& r : d.runs) split_run(r, cfg.dataset.horizon, cfg.dataset.train_fraction, d.dataset);
  const std::string test = join_path(dir, "test.csv");
  require(fs::exists(test), ErrorCode::kIo, "missing " + test);
  d.test = read_trajectory_csv(test);
  d.scaler = fit_scaler(d.dataset.train);
  return d;
}

PretrainResult pretrain(const ExperimentConfig& cfg, const SimulatedData& d, std::uint64_t seed) {
  const SeedPlan plan = SeedPlan::from(seed);
  TrainConfig tc = cfg.train;
  tc.seed = plan.training;
  const KoopmanModel init = make_model(tc.shape, d.scaler, plan.init);
  PretrainResult r = pretrain_noise_net(init, d.scaled_train(), tc);
  r.model.metadata["seed"] = std::to_string(seed);
  r.model.metadata["stage"] = "pretrained";
  return r;
}

FitResult train_model(const ExperimentConfig& cfg, const SimulatedData& d, const KoopmanModel& pretrained,
                      bool physics, std::uint64_t seed) {
  const SeedPlan plan = SeedPlan::from(seed);
  TrainConfig tc = cfg.train;
  tc.seed = plan.training;
  tc.physics_enabled = physics;
  require(pretrained.has_noise_net(), ErrorCode::kContract, "training needs a pretrained noise net");
  require(pretrained.scaler == d.scaler, ErrorCode::kInputShape,
          "pretrained model was fit with a different scaler");
  KoopmanModel start = pretrained;
  if (!tc.init_from_pretrained) {
    start = make_model(tc.shape, d.scaler, plan.init);
    start.noise_net = pretrained.noise_net;
  }
  const ReactorPhysics fp(cfg.params, cfg.dataset.dt, tc.physics_equations);
  FitResult r = fit(start, d.scaled_train(), d.scaled_validation(), d.scaled_test(), physics ? &fp : nullptr, tc);
  Eigen::VectorXd lo, hi;
  default_box(d.scaled_train(), 0.0, lo, hi);
  r.model.metadata.clear();
  r.model.metadata["physics_enabled"] = physics ? "true" : "false";
  r.model.metadata["seed"] = std::to_string(seed);
  r.model.metadata["stage"] = "trained";
  r.model.metadata["train_lower"] = join_doubles(lo);
  r.model.metadata["train_upper"] = join_doubles(hi);
  return r;
}

MheConfig resolve_mhe_config(const MheConfig& cfg, const KoopmanModel& model, MheDesign design) {
  MheConfig c = cfg;
  c.self_tuning = design == MheDesign::kSelfTuning;
  if (c.lower.size() == 0 && c.upper.size() == 0) {
    const auto lo = model.metadata.find("train_lower");
    const auto hi = model.metadata.find("train_upper");
    if (lo != model.metadata.end() && hi != model.metadata.end()) {
      KeyValues kv;
      kv.set("lo", lo->second);
      kv.set("hi", hi->second);
      c.lower = to_vector(kv.get_doubles("lo")).array() - c.box_margin;
      c.upper = to_vector(kv.get_doubles("hi")).array() + c.box_margin;
    }
  }
  c.validate();
  return c;
}

Eigen::MatrixXd measure(const Trajectory& truth, const std::vector<int>& measured, double std_dev,
                        std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd y(static_cast<Eigen::Index>(measured.size()), truth.size());
  for (Eigen::Index k = 0; k < truth.size(); ++k)
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      y(i, k) = truth.states(measured[static_cast<std::size_t>(i)], k) + std_dev * rng.normal();
  return y;
}

std::vector<EstimationCase> estimation_cases(const ExperimentConfig& cfg, std::uint64_t seed,
                                             const std::vector<int>& measured) {
  const SeedPlan plan = SeedPlan::from(seed);
  std::vector<EstimationCase> out;
  for (int r = 0; r < cfg.estimate_runs; ++r) {
    const auto idx = static_cast<std::uint64_t>(r);
    EstimationCase c;
    c.truth = generate_run(cfg.dataset, cfg.params, cfg.estimate_samples,
                           Rng(plan.estimation).stream(idx).seed());
    c.measurements = measure(c.truth, measured, cfg.measurement_std, Rng(plan.measurement).stream(idx).seed());
    out.push_back(std::move(c));
  }
  return out;
}

double ComparisonReport::mean_design(int d) const {
  require(d >= 1 && d <= 3, ErrorCode::kContract, "design index must be 1, 2 or 3");
  double s = 0.0;
  for (const auto& r : seeds) s += r.design_mse[static_cast<std::size_t>(d - 1)];
  return seeds.empty() ? 0.0 : s / static_cast<double>(seeds.size());
}

double ComparisonReport::mean_pi_test() const {
  double s = 0.0;
  for (const auto& r : seeds) s += r.pi_test_mse;
  return seeds.empty() ? 0.0 : s / static_cast<double>(seeds.size());
}

double ComparisonReport::mean_baseline_test() const {
  double s = 0.0;
  for (const auto& r : seeds) s += r.baseline_test_mse;
  return seeds.empty() ? 0.0 : s / static_cast<double>(seeds.size());
}

double ComparisonReport::reduction(double reference, double value) {
  return reference > 0.0 ? (reference - value) / reference : 0.0;
}

double ComparisonReport::median_test_improvement() const {
  std::vector<double> v;
  for (const auto& r : seeds) v.push_back(reduction(r.baseline_test_mse, r.pi_test_mse));
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string ComparisonReport::to_csv(const std::vector<std::string>& comments) const {
  std::ostringstream out;
  out << with_comments(comments);
  out << "seed,design,estimate_mse,pi_test_mse,baseline_test_mse\n";
  for (const auto& r : seeds)
    for (int d = 1; d <= 3; ++d)
      out << r.seed << ',' << d << ',' << format_double(r.design_mse[static_cast<std::size_t>(d - 1)]) << ','
          << format_double(r.pi_test_mse) << ',' << format_double(r.baseline_test_mse) << '\n';
  return out.str();
}

std::string ComparisonReport::summary_csv(const std::vector<std::string>& comments) const {
  std::ostringstream out;
  out << with_comments(comments);
  out << "metric,value\n";
  auto row = [&](const std::string& k, double v) { out << k << ',' << format_double(v) << '\n'; };
  row("seeds", static_cast<double>(seeds.size()));
  for (int d = 1; d <= 3; ++d) row("mean_mse_design" + std::to_string(d), mean_design(d));
  row("reduction_design1_vs_design3", reduction(mean_design(3), mean_design(1)));
  row("reduction_design1_vs_design2", reduction(mean_design(2), mean_design(1)));
  row("mean_test_mse_physics", mean_pi_test());
  row("mean_test_mse_baseline", mean_baseline_test());
  row("reduction_test_mse", reduction(mean_baseline_test(), mean_pi_test()));
  row("median_test_improvement", median_test_improvement());
  return out.str();
}

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const CompareOptions& opts) {
  log_info("seed " + std::to_string(seed) + ": simulating");
  const SimulatedData data = simulate_data(cfg, seed);
  log_info("seed " + std::to_string(seed) + ": pretraining noise net");
  const PretrainResult pre = pretrain(cfg, data, seed);
  log_info("seed " + std::to_string(seed) + ": training physics-informed model");
  const FitResult pi = train_model(cfg, data, pre.model, true, seed);
  log_info("seed " + std::to_string(seed) + ": training data-only model");
  const FitResult base = train_model(cfg, data, pre.model, false, seed);

  SeedResult res;
  res.seed = seed;
  const int h = cfg.predict_horizon;
  res.pi_test_mse = evaluate_prediction(pi.model, data.scaled_test(), h).mse;
  res.baseline_test_mse = evaluate_prediction(base.model, data.scaled_test(), h).mse;

  const auto cases = estimation_cases(cfg, seed, pi.model.measured);
  // Unpaired mode draws fresh realizations per design from a design sub-stream.
  auto cases_for = [&](int d) {
    if (cfg.paired) return cases;
    return estimation_cases(cfg, Rng(seed).stream("design").stream(static_cast<std::uint64_t>(d)).seed(),
                            pi.model.measured);
  };
  const std::vector<std::string> comments = {hash_comment(cfg), "seed=" + std::to_string(seed)};
  const std::string dir =
      opts.out_dir.empty() ? std::string() : join_path(opts.out_dir, "seed_" + std::to_string(seed));
  if (!dir.empty()) {
    fs::create_directories(dir);
    save_model(pi.model, join_path(dir, "physics.kmhe"));
    save_model(base.model, join_path(dir, "baseline.kmhe"));
    write_text_file(join_path(dir, "train_report_physics.csv"), pi.report.to_csv(comments));
    write_text_file(join_path(dir, "train_report_baseline.csv"), base.report.to_csv(comments));
  }
  for (int d = 1; d <= 3; ++d) {
    const auto design = static_cast<MheDesign>(d);
    const KoopmanModel& model = d == 3 ? base.model : pi.model;
    const MheConfig mc = resolve_mhe_config(cfg.mhe, model, design);
    const auto runs = cases_for(d);
    double total = 0.0;
    for (std::size_t r = 0; r < runs.size(); ++r) {
      log_info("seed " + std::to_string(seed) + ": design " + std::to_string(d) + " run " + std::to_string(r));
      const EstimationRun er = run_estimator(model, runs[r].truth, runs[r].measurements, mc);
      total += er.mse;
      for (const auto& rec : er.records) {
        ++res.solves;
        if (!rec.info.converged) ++res.unconverged;
        res.max_kkt = std::max(res.max_kkt, rec.info.kkt_residual);
      }
      if (!dir.empty()) {
        write_text_file(join_path(dir, "estimate_design" + std::to_string(d) + "_run" + std::to_string(r) + ".csv"),
                        estimates_to_csv(er, comments));
      }
    }
    res.design_mse[static_cast<std::size_t>(d - 1)] = total / static_cast<double>(runs.size());
  }
  return res;
}

ComparisonReport run_comparison(const ExperimentConfig& cfg, const CompareOptions& opts) {
  cfg.validate();
  ComparisonReport rep;
  for (std::uint64_t s : cfg.seeds) {
    try {
      rep.seeds.push_back(run_seed(cfg, s, opts));
    } catch (const Error& e) {
      throw Error(e.code(), "seed " + std::to_string(s) + ": " + e.detail());
    }
  }
  return rep;
}

std::string prediction_traces_csv(const KoopmanModel& m, const Trajectory& run, int horizon,
                                  const std::vector<std::string>& comments) {
  require(run.state_dim() == m.n_x && run.input_dim() == m.n_u, ErrorCode::kInputShape,
          "trajectory dimensions do not match the model");
  require(horizon >= 1, ErrorCode::kConfiguration, "horizon must be >= 1");
  const Trajectory s = m.scaler.scale(run);
  std::ostringstream out;
  out << with_comments(comments);
  out << "k,state,true,predicted\n";
  for (Eigen::Index k0 = 0; k0 + horizon < run.size(); k0 += horizon) {
    const Eigen::VectorXd z0 = lift(m, s.states.col(k0), true);
    const RolloutResult r =
        rollout(m, z0, s.inputs.middleCols(k0, horizon), Eigen::VectorXd::Zero(m.n_g()));
    const Eigen::MatrixXd x = m.scaler.unscale_states(r.x);
    for (int j = 1; j <= horizon; ++j)
      for (int i = 0; i < m.n_x; ++i)
        out << k0 + j << ',' << i + 1 << ',' << format_double(run.states(i, k0 + j)) << ','
            << format_double(x(i, j)) << '\n';
  }
  return out.str();
}

std::string pretrain_report_csv(const PretrainReport& r, const std::vector<std::string>& comments) {
  std::ostringstream out;
  out << with_comments(comments) << "epoch,nll,data_loss\n";
  for (std::size_t e = 0; e < r.nll.size(); ++e)
    out << e + 1 << ',' << format_double(r.nll[e]) << ',' << format_double(r.data_loss[e]) << '\n';
  return out.str();
}

std::string prediction_summary_csv(const PredictionReport& r, const std::vector<std::string>& comments) {
  std::ostringstream out;
  out << with_comments(comments) << "metric,value\n";
  out << "windows," << r.windows << '\n';
  out << "mse," << format_double(r.mse) << '\n';
  for (Eigen::Index i = 0; i < r.per_state_mse.size(); ++i)
    out << "mse_state" << i + 1 << ',' << format_double(r.per_state_mse[i]) << '\n';
  for (Eigen::Index j = 0; j < r.per_step_mse.size(); ++j)
    out << "mse_step" << j + 1 << ',' << format_double(r.per_step_mse[j]) << '\n';
  return out.str();
}

std::string hash_comment(const ExperimentConfig& cfg) { return "config_hash=" + cfg.hash(); }

}  // namespace koopmhe
