#include "koopmhe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace koopmhe {

void Trajectory::validate() const {
  require(states.cols() >= 1, ErrorCode::kInputShape, "trajectory has no states");
  require(inputs.cols() == states.cols() - 1, ErrorCode::kInputShape,
          "trajectory needs exactly one input fewer than states");
  require(dt > 0.0, ErrorCode::kInputShape, "trajectory sampling period must be positive");
  require(states.allFinite() && inputs.allFinite(), ErrorCode::kInputShape,
          "trajectory contains non-finite values");
}

Trajectory Trajectory::slice(Eigen::Index first, Eigen::Index count) const {
  require(first >= 0 && count >= 1 && first + count <= size(), ErrorCode::kContract,
          "trajectory slice out of range");
  Trajectory t;
  t.states = states.middleCols(first, count);
  t.inputs = inputs.middleCols(first, count - 1);
  t.dt = dt;
  return t;
}

bool Trajectory::operator==(const Trajectory& o) const {
  return dt == o.dt && states.rows() == o.states.rows() && states.cols() == o.states.cols() &&
         inputs.rows() == o.inputs.rows() && inputs.cols() == o.inputs.cols() &&
         states == o.states && inputs == o.inputs;
}

DisturbanceConfig DisturbanceConfig::none(Eigen::Index n) {
  DisturbanceConfig d;
  d.stddev = Eigen::VectorXd::Zero(n);
  d.bound = Eigen::VectorXd::Ones(n);
  return d;
}

void DisturbanceConfig::validate(Eigen::Index n) const {
  require(stddev.size() == n && bound.size() == n, ErrorCode::kConfiguration,
          "disturbance config must have one entry per state");
  for (Eigen::Index i = 0; i < n; ++i) {
    require(std::isfinite(stddev[i]) && stddev[i] >= 0.0, ErrorCode::kConfiguration,
            "disturbance standard deviation must be non-negative");
    require(std::isfinite(bound[i]) && bound[i] > 0.0, ErrorCode::kConfiguration,
            "disturbance bound must be positive");
  }
}

Eigen::VectorXd sample_disturbance(const DisturbanceConfig& dist, Rng& rng) {
  Eigen::VectorXd w(dist.stddev.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w[i] = rng.truncated_normal(dist.stddev[i], dist.bound[i]);
  }
  return w;
}

DisturbanceSpace parse_disturbance_space(const std::string& s) {
  if (s == "scaled") return DisturbanceSpace::kScaled;
  if (s == "raw") return DisturbanceSpace::kRaw;
  fail(ErrorCode::kConfiguration, "unknown disturbance space '" + s + "' (scaled|raw)");
}

std::string to_string(DisturbanceSpace s) {
  return s == DisturbanceSpace::kScaled ? "scaled" : "raw";
}

DisturbanceConfig resolve_disturbance(const DisturbanceSpec& spec,
                                      const Eigen::VectorXd& reference_scale,
                                      std::uint64_t seed) {
  require(reference_scale.size() == kStateDim, ErrorCode::kConfiguration,
          "reference scale must have one entry per state");
  require(spec.gain >= 0.0 && spec.composition_variance >= 0.0 &&
              spec.temperature_variance >= 0.0 && spec.composition_bound > 0.0 &&
              spec.temperature_bound > 0.0,
          ErrorCode::kConfiguration, "disturbance magnitudes must be non-negative");
  DisturbanceConfig d;
  d.seed = seed;
  d.stddev.resize(kStateDim);
  d.bound.resize(kStateDim);
  for (int i = 0; i < kStateDim; ++i) {
    const bool temp = (i == kT1 || i == kT2 || i == kT3);
    const double sd = std::sqrt(temp ? spec.temperature_variance : spec.composition_variance);
    const double b = temp ? spec.temperature_bound : spec.composition_bound;
    const double s = spec.space == DisturbanceSpace::kScaled ? reference_scale[i] : 1.0;
    d.stddev[i] = spec.gain * sd * s;
    d.bound[i] = std::max(spec.gain * b * s, 1e-300);
  }
  return d;
}

Trajectory simulate(const StateVector& x0, const Eigen::MatrixXd& inputs,
                    const DisturbanceConfig& dist, const ProcessParams& p, double dt,
                    Eigen::MatrixXd* applied) {
  require(inputs.rows() == kInputDim && inputs.cols() >= 1, ErrorCode::kInputShape,
          "simulate needs a non-empty 3-row input sequence");
  dist.validate(kStateDim);
  const Eigen::Index n = inputs.cols();
  Rng rng(dist.seed);
  Trajectory t;
  t.dt = dt;
  t.inputs = inputs;
  t.states.resize(kStateDim, n + 1);
  t.states.col(0) = x0;
  if (applied) applied->setZero(kStateDim, n);
  StateVector x = x0;
  for (Eigen::Index k = 0; k < n; ++k) {
    StateVector next;
    try {
      next = rk4_step(x, inputs.col(k), dt, p);
    } catch (const Error& e) {
      fail(ErrorCode::kSimulationDiverged,
           "simulation left its valid region at step " + std::to_string(k) + ": " + e.what());
    }
    if (!dist.is_zero()) {
      const Eigen::VectorXd w = sample_disturbance(dist, rng);
      next += w;
      if (applied) applied->col(k) = w;
    }
    if (!next.allFinite() || next[kT1] <= 0.0 || next[kT2] <= 0.0 || next[kT3] <= 0.0) {
      fail(ErrorCode::kSimulationDiverged,
           "simulation left its valid region at step " + std::to_string(k + 1));
    }
    t.states.col(k + 1) = next;
    x = next;
  }
  return t;
}

void InputPolicy::validate() const {
  require((lower.array() < upper.array()).all(), ErrorCode::kConfiguration,
          "input lower bounds must be below upper bounds");
  require(dwell >= 1, ErrorCode::kConfiguration, "input dwell must be at least 1 step");
  require(noise_variance >= 0.0 && noise_bound > 0.0, ErrorCode::kConfiguration,
          "input noise must have non-negative variance and positive bound");
}

Eigen::MatrixXd generate_inputs(Eigen::Index steps, const InputPolicy& policy, Rng& rng) {
  policy.validate();
  Eigen::MatrixXd u(kInputDim, steps);
  InputVector level = InputVector::Zero();
  const double sd = std::sqrt(policy.noise_variance);
  for (Eigen::Index k = 0; k < steps; ++k) {
    if (k % policy.dwell == 0) {
      for (int i = 0; i < kInputDim; ++i) level[i] = rng.uniform(policy.lower[i], policy.upper[i]);
    }
    for (int i = 0; i < kInputDim; ++i) {
      const double v = level[i] + rng.truncated_normal(sd, policy.noise_bound);
      u(i, k) = std::clamp(v, policy.lower[i], policy.upper[i]);
    }
  }
  return u;
}

void DatasetConfig::validate() const {
  require(n_windows >= 1, ErrorCode::kConfiguration, "n_windows must be at least 1");
  require(horizon >= 1, ErrorCode::kConfiguration, "horizon must be at least 1");
  require(runs >= 1 && runs <= n_windows, ErrorCode::kConfiguration,
          "runs must be between 1 and n_windows");
  require(train_fraction > 0.0 && train_fraction <= 1.0, ErrorCode::kConfiguration,
          "train_fraction must lie in (0, 1]");
  require(dt > 0.0, ErrorCode::kConfiguration, "dt must be positive");
  require((x0_low.array() <= x0_high.array()).all(), ErrorCode::kConfiguration,
          "initial-state range is empty");
  inputs.validate();
}

const std::vector<std::string>& DatasetConfig::keys() {
  static const std::vector<std::string> k = {
      "n_windows",        "horizon",           "runs",
      "train_fraction",   "dt",                "x0_low",
      "x0_high",          "input_lower",       "input_upper",
      "input_dwell",      "input_noise_variance", "input_noise_bound",
      "disturbance.space", "disturbance.composition_variance",
      "disturbance.composition_bound", "disturbance.temperature_variance",
      "disturbance.temperature_bound", "disturbance.gain"};
  return k;
}

namespace {

template <int N>
Eigen::Matrix<double, N, 1> fixed_vector(const KeyValues& kv, const std::string& key,
                                         const Eigen::Matrix<double, N, 1>& fallback) {
  if (!kv.has(key)) return fallback;
  const auto v = kv.get_doubles(key);
  require(static_cast<int>(v.size()) == N, ErrorCode::kConfiguration,
          key + " needs " + std::to_string(N) + " values");
  return Eigen::Map<const Eigen::Matrix<double, N, 1>>(v.data());
}

}  // namespace

DatasetConfig DatasetConfig::from_key_values(const KeyValues& kv) {
  kv.expect_only(keys(), "dataset");
  DatasetConfig c;
  c.n_windows = kv.get_or<int>("n_windows", c.n_windows);
  c.horizon = kv.get_or<int>("horizon", c.horizon);
  c.runs = kv.get_or<int>("runs", c.runs);
  c.train_fraction = kv.get_or<double>("train_fraction", c.train_fraction);
  c.dt = kv.get_or<double>("dt", c.dt);
  c.x0_low = fixed_vector<kStateDim>(kv, "x0_low", c.x0_low);
  c.x0_high = fixed_vector<kStateDim>(kv, "x0_high", c.x0_high);
  c.inputs.lower = fixed_vector<kInputDim>(kv, "input_lower", c.inputs.lower);
  c.inputs.upper = fixed_vector<kInputDim>(kv, "input_upper", c.inputs.upper);
  c.inputs.dwell = kv.get_or<int>("input_dwell", c.inputs.dwell);
  c.inputs.noise_variance = kv.get_or<double>("input_noise_variance", c.inputs.noise_variance);
  c.inputs.noise_bound = kv.get_or<double>("input_noise_bound", c.inputs.noise_bound);
  auto& d = c.disturbance;
  d.space = parse_disturbance_space(kv.get_or<std::string>("disturbance.space", "scaled"));
  d.composition_variance =
      kv.get_or<double>("disturbance.composition_variance", d.composition_variance);
  d.composition_bound = kv.get_or<double>("disturbance.composition_bound", d.composition_bound);
  d.temperature_variance =
      kv.get_or<double>("disturbance.temperature_variance", d.temperature_variance);
  d.temperature_bound = kv.get_or<double>("disturbance.temperature_bound", d.temperature_bound);
  d.gain = kv.get_or<double>("disturbance.gain", d.gain);
  c.validate();
  return c;
}

Eigen::Index TrajectoryDataset::window_count(const std::vector<Trajectory>& runs, int horizon) {
  Eigen::Index n = 0;
  for (const auto& r : runs) n += std::max<Eigen::Index>(0, r.size() - horizon);
  return n;
}

std::vector<WindowRef> enumerate_windows(const std::vector<Trajectory>& runs, int horizon) {
  std::vector<WindowRef> out;
  for (int r = 0; r < static_cast<int>(runs.size()); ++r) {
    for (Eigen::Index s = 0; s + horizon < runs[r].size(); ++s) out.push_back({r, s});
  }
  return out;
}

namespace {

StateVector sample_initial_state(const DatasetConfig& cfg, Rng& rng) {
  StateVector x0;
  for (int i = 0; i < kStateDim; ++i) x0[i] = rng.uniform(cfg.x0_low[i], cfg.x0_high[i]);
  return x0;
}

Trajectory run_once(const DatasetConfig& cfg, const ProcessParams& p, Eigen::Index samples,
                    const Rng& rng, const DisturbanceConfig& dist, Eigen::MatrixXd* applied) {
  Rng x0_rng = rng.stream("x0");
  Rng u_rng = rng.stream("inputs");
  const StateVector x0 = sample_initial_state(cfg, x0_rng);
  const Eigen::MatrixXd u = generate_inputs(samples - 1, cfg.inputs, u_rng);
  return simulate(x0, u, dist, p, cfg.dt, applied);
}

DisturbanceConfig dataset_disturbance(const DatasetConfig& cfg, const ProcessParams& p,
                                      std::uint64_t noise_seed) {
  Eigen::VectorXd ref = Eigen::VectorXd::Ones(kStateDim);
  if (cfg.disturbance.space == DisturbanceSpace::kScaled) ref = disturbance_reference_scale(cfg, p);
  return resolve_disturbance(cfg.disturbance, ref, noise_seed);
}

}  // namespace

Eigen::VectorXd disturbance_reference_scale(const DatasetConfig& cfg, const ProcessParams& p) {
  const Rng pilot(0x5eedULL);
  const Eigen::Index samples = static_cast<Eigen::Index>(cfg.n_windows) + cfg.horizon;
  const Trajectory t =
      run_once(cfg, p, samples, pilot, DisturbanceConfig::none(kStateDim), nullptr);
  const Eigen::VectorXd mean = t.states.rowwise().mean();
  const Eigen::VectorXd sd =
      ((t.states.colwise() - mean).array().square().rowwise().mean()).sqrt();
  return sd;
}

TrajectoryDataset generate_dataset(const DatasetConfig& cfg, const ProcessParams& p,
                                   std::uint64_t seed, std::vector<Eigen::MatrixXd>* applied) {
  cfg.validate();
  p.validate();
  const Rng master(seed);
  TrajectoryDataset ds;
  ds.horizon = cfg.horizon;
  ds.disturbance = dataset_disturbance(cfg, p, master.stream("disturbance").seed());
  if (applied) applied->clear();
  for (int r = 0; r < cfg.runs; ++r) {
    const Eigen::Index windows =
        cfg.n_windows / cfg.runs + (r < cfg.n_windows % cfg.runs ? 1 : 0);
    const Rng run_rng = master.stream("run").stream(static_cast<std::uint64_t>(r));
    DisturbanceConfig dist = ds.disturbance;
    dist.seed = run_rng.stream("disturbance").seed();
    Eigen::MatrixXd w;
    const Trajectory t = run_once(cfg, p, windows + cfg.horizon, run_rng, dist, &w);
    if (applied) applied->push_back(std::move(w));
    split_run(t, cfg.horizon, cfg.train_fraction, ds);
  }
  return ds;
}

void split_run(const Trajectory& t, int horizon, double train_fraction, TrajectoryDataset& ds) {
  const Eigen::Index windows = t.size() - horizon;
  require(windows >= 1, ErrorCode::kInputShape,
          "run of " + std::to_string(t.size()) + " samples is shorter than one window");
  Eigen::Index n_train = static_cast<Eigen::Index>(std::llround(train_fraction * windows));
  n_train = std::clamp<Eigen::Index>(n_train, 1, windows);
  ds.train.push_back(t.slice(0, n_train + horizon));
  if (n_train < windows) ds.validation.push_back(t.slice(n_train, windows - n_train + horizon));
}

Trajectory generate_run(const DatasetConfig& cfg, const ProcessParams& p, Eigen::Index samples,
                        std::uint64_t seed) {
  cfg.validate();
  require(samples >= 2, ErrorCode::kConfiguration, "a run needs at least two samples");
  const Rng master(seed);
  DisturbanceConfig dist = dataset_disturbance(cfg, p, master.stream("disturbance").seed());
  return run_once(cfg, p, samples, master, dist, nullptr);
}

Eigen::MatrixXd Scaler::scale_states(const Eigen::MatrixXd& x) const {
  require(x.rows() == state_dim(), ErrorCode::kInputShape, "state dimension mismatch in scaler");
  return (x.colwise() - state_mean).array().colwise() / state_std.array();
}

Eigen::MatrixXd Scaler::unscale_states(const Eigen::MatrixXd& xs) const {
  require(xs.rows() == state_dim(), ErrorCode::kInputShape, "state dimension mismatch in scaler");
  return (xs.array().colwise() * state_std.array()).matrix().colwise() + state_mean;
}

Eigen::MatrixXd Scaler::scale_inputs(const Eigen::MatrixXd& u) const {
  require(u.rows() == input_dim(), ErrorCode::kInputShape, "input dimension mismatch in scaler");
  return (u.colwise() - input_mean).array().colwise() / input_std.array();
}

Eigen::MatrixXd Scaler::unscale_inputs(const Eigen::MatrixXd& us) const {
  require(us.rows() == input_dim(), ErrorCode::kInputShape, "input dimension mismatch in scaler");
  return (us.array().colwise() * input_std.array()).matrix().colwise() + input_mean;
}

Trajectory Scaler::scale(const Trajectory& t) const {
  Trajectory s;
  s.dt = t.dt;
  s.states = scale_states(t.states);
  s.inputs = t.inputs.cols() > 0 ? scale_inputs(t.inputs) : Eigen::MatrixXd(input_dim(), 0);
  return s;
}

Trajectory Scaler::unscale(const Trajectory& t) const {
  Trajectory s;
  s.dt = t.dt;
  s.states = unscale_states(t.states);
  s.inputs = t.inputs.cols() > 0 ? unscale_inputs(t.inputs) : Eigen::MatrixXd(input_dim(), 0);
  return s;
}

void Scaler::validate() const {
  require(state_mean.size() == state_std.size() && input_mean.size() == input_std.size(),
          ErrorCode::kInputShape, "scaler mean/std sizes differ");
  require((state_std.array() > 0.0).all() && (input_std.array() > 0.0).all(),
          ErrorCode::kDegenerateScaling, "scaler has a non-positive standard deviation");
}

namespace {

void column_stats(const std::vector<const Eigen::MatrixXd*>& blocks, Eigen::VectorXd& mean,
                  Eigen::VectorXd& sd, const char* what) {
  const Eigen::Index rows = blocks.front()->rows();
  Eigen::Index count = 0;
  mean = Eigen::VectorXd::Zero(rows);
  for (const auto* b : blocks) {
    mean += b->rowwise().sum();
    count += b->cols();
  }
  require(count > 0, ErrorCode::kInputShape, std::string("no ") + what + " samples to scale");
  mean /= static_cast<double>(count);
  Eigen::VectorXd var = Eigen::VectorXd::Zero(rows);
  for (const auto* b : blocks) var += (b->colwise() - mean).array().square().rowwise().sum().matrix();
  sd = (var / static_cast<double>(count)).cwiseSqrt();
  for (Eigen::Index i = 0; i < rows; ++i) {
    require(sd[i] > 1e-12 * std::max(1.0, std::abs(mean[i])), ErrorCode::kDegenerateScaling,
            std::string(what) + " component " + std::to_string(i) + " has zero variance");
  }
}

}  // namespace

Scaler fit_scaler(const std::vector<Trajectory>& runs) {
  require(!runs.empty(), ErrorCode::kInputShape, "cannot fit a scaler to an empty dataset");
  std::vector<const Eigen::MatrixXd*> xs, us;
  for (const auto& r : runs) {
    r.validate();
    require(r.state_dim() == runs.front().state_dim() && r.input_dim() == runs.front().input_dim(),
            ErrorCode::kInputShape, "runs have inconsistent dimensions");
    xs.push_back(&r.states);
    if (r.inputs.cols() > 0) us.push_back(&r.inputs);
  }
  Scaler s;
  column_stats(xs, s.state_mean, s.state_std, "state");
  require(!us.empty(), ErrorCode::kInputShape, "no input samples to scale");
  column_stats(us, s.input_mean, s.input_std, "input");
  return s;
}

std::vector<std::string> default_state_names(Eigen::Index n) {
  if (n == kStateDim) return {kStateNames.begin(), kStateNames.end()};
  std::vector<std::string> v;
  for (Eigen::Index i = 0; i < n; ++i) v.push_back("x" + std::to_string(i + 1));
  return v;
}

std::vector<std::string> default_input_names(Eigen::Index n) {
  if (n == kInputDim) return {kInputNames.begin(), kInputNames.end()};
  std::vector<std::string> v;
  for (Eigen::Index i = 0; i < n; ++i) v.push_back("u" + std::to_string(i + 1));
  return v;
}

std::string trajectory_to_csv(const Trajectory& t, const std::vector<std::string>& comments) {
  t.validate();
  std::ostringstream out;
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "# dt=" << format_double(t.dt) << '\n';
  out << 'k';
  for (const auto& n : default_state_names(t.state_dim())) out << ',' << n;
  for (const auto& n : default_input_names(t.input_dim())) out << ',' << n;
  out << '\n';
  for (Eigen::Index k = 0; k < t.size(); ++k) {
    out << k;
    for (Eigen::Index i = 0; i < t.state_dim(); ++i) out << ',' << format_double(t.states(i, k));
    for (Eigen::Index i = 0; i < t.input_dim(); ++i) {
      out << ',';
      if (k + 1 < t.size()) out << format_double(t.inputs(i, k));
    }
    out << '\n';
  }
  return out.str();
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_field(const std::string& s, const std::string& origin, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  require(!s.empty() && end == s.c_str() + s.size() && std::isfinite(v), ErrorCode::kInputShape,
          origin + ":" + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

}  // namespace

Trajectory trajectory_from_csv(const std::string& text, Eigen::Index input_dim,
                               const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  double dt = 1e-3;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::vector<bool> has_inputs;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (line[0] == '#') {
      const auto pos = line.find("dt=");
      if (pos != std::string::npos && line.find_first_not_of("# ") == pos) {
        dt = parse_field(line.substr(pos + 3), origin, lineno);
      }
      continue;
    }
    auto fields = split_commas(line);
    if (header.empty()) {
      header = fields;
      require(header.size() >= static_cast<std::size_t>(2 + input_dim) && header[0] == "k",
              ErrorCode::kInputShape, origin + ": header must start with k and list states and inputs");
      continue;
    }
    require(fields.size() == header.size(), ErrorCode::kInputShape,
            origin + ":" + std::to_string(lineno) + ": expected " +
                std::to_string(header.size()) + " fields");
    const long long k = std::llround(parse_field(fields[0], origin, lineno));
    require(k == static_cast<long long>(rows.size()), ErrorCode::kInputShape,
            origin + ":" + std::to_string(lineno) + ": sample index " + std::to_string(k) +
                " breaks the sequence (expected " + std::to_string(rows.size()) + ")");
    std::vector<double> row;
    const std::size_t nx = header.size() - 1 - static_cast<std::size_t>(input_dim);
    for (std::size_t i = 1; i <= nx; ++i) row.push_back(parse_field(fields[i], origin, lineno));
    bool any_input = false, all_input = true;
    for (std::size_t i = nx + 1; i < fields.size(); ++i) {
      if (fields[i].empty()) {
        all_input = false;
        row.push_back(0.0);
      } else {
        any_input = true;
        row.push_back(parse_field(fields[i], origin, lineno));
      }
    }
    require(any_input == all_input || input_dim == 0, ErrorCode::kInputShape,
            origin + ":" + std::to_string(lineno) + ": partially missing inputs");
    rows.push_back(std::move(row));
    has_inputs.push_back(all_input && input_dim > 0);
  }
  require(!rows.empty(), ErrorCode::kInputShape, origin + ": no samples");
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    require(has_inputs[k] || input_dim == 0, ErrorCode::kInputShape,
            origin + ": missing inputs at sample " + std::to_string(k));
  }
  const Eigen::Index nx = static_cast<Eigen::Index>(header.size()) - 1 - input_dim;
  Trajectory t;
  t.dt = dt;
  t.states.resize(nx, n);
  t.inputs.resize(input_dim, n - 1);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < nx; ++i) t.states(i, k) = rows[k][i];
    if (k + 1 < n) {
      for (Eigen::Index i = 0; i < input_dim; ++i) t.inputs(i, k) = rows[k][nx + i];
    }
  }
  t.validate();
  return t;
}

void write_trajectory_csv(const std::string& path, const Trajectory& t,
                          const std::vector<std::string>& comments) {
  write_text_file(path, trajectory_to_csv(t, comments));
}

Trajectory read_trajectory_csv(const std::string& path, Eigen::Index input_dim) {
  return trajectory_from_csv(read_text_file(path), input_dim, path);
}

}  // namespace koopmhe
