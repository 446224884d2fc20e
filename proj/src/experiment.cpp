#include "eddyid/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "eddyid/io.hpp"

namespace eddyid {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kCodeVersion = "eddyid 1.0.0";
constexpr const char* kFilterMagic = "EDYFILT1";

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  return fields;
}

void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_f64(std::ofstream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
double read_f64(std::ifstream& in) {
  double v;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_vec(std::ofstream& out, const Eigen::VectorXd& v) {
  write_u64(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}
Eigen::VectorXd read_vec(std::ifstream& in) {
  const auto n = static_cast<Eigen::Index>(read_u64(in));
  Eigen::VectorXd v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  return v;
}

void write_mat(std::ofstream& out, const Eigen::MatrixXd& m) {
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}
Eigen::MatrixXd read_mat(std::ifstream& in) {
  const auto r = static_cast<Eigen::Index>(read_u64(in));
  const auto c = static_cast<Eigen::Index>(read_u64(in));
  Eigen::MatrixXd m(r, c);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(m.size() * sizeof(double)));
  return m;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("config: ") + what);
  };
  require(domain_size_km > 0, "domain_size_km must be > 0");
  require(duration_days > 0, "duration_days must be > 0");
  require(n_floes >= 0, "n_floes must be >= 0");
  require(obs_noise_km >= 0, "obs_noise_km must be >= 0");
  require(obs_noise_rad >= 0, "obs_noise_rad must be >= 0");
  require(mode_range >= 1, "mode_range must be >= 1");
  require(ensemble_size >= 1, "ensemble_size must be >= 1");
  require(dt_days > 0, "dt_days must be > 0");
  require(dt_obs_days > 0, "dt_obs_days must be > 0");
  require(snapshot_cadence_days > 0, "snapshot_cadence_days must be > 0");
  require(grid_n >= 2 * mode_range + 2,
          "grid_n too small for the retained modes (aliasing)");
  require(spinup_days >= 0, "spinup_days must be >= 0");
  require(velocity_std_km_per_day > 0, "velocity_std_km_per_day must be > 0");
  require(tcorr0_days > 0, "tcorr0_days must be > 0");
  require(floe_vel_noise > 0, "floe_vel_noise must be > 0");
  require(floe_ang_noise > 0, "floe_ang_noise must be > 0");
  require(tracking_distance_km > 0, "tracking_distance_km must be > 0");
  require(search_distance_km > 0, "search_distance_km must be > 0");
  require(occurrence_radius_km > 0, "occurrence_radius_km must be > 0");
  require(query_time_fraction >= 0 && query_time_fraction <= 1,
          "query_time_fraction must be in [0, 1]");
  require(n_workers >= 1, "n_workers must be >= 1");
  const double stride = dt_obs_days / dt_days;
  require(std::abs(stride - std::llround(stride)) < 1e-9,
          "dt_obs_days must be a multiple of dt_days");
  const double rec = snapshot_cadence_days / dt_obs_days;
  require(std::abs(rec - std::llround(rec)) < 1e-9,
          "snapshot_cadence_days must be a multiple of dt_obs_days");
}

std::string ExperimentConfig::canonical_json() const {
  json j;
  j["domain_size_km"] = domain_size_km;
  j["duration_days"] = duration_days;
  j["n_floes"] = n_floes;
  j["obs_noise_km"] = obs_noise_km;
  j["obs_noise_rad"] = obs_noise_rad;
  j["mode_range"] = mode_range;
  j["ensemble_size"] = ensemble_size;
  j["master_seed"] = master_seed;
  j["dt_days"] = dt_days;
  j["dt_obs_days"] = dt_obs_days;
  j["snapshot_cadence_days"] = snapshot_cadence_days;
  j["grid_n"] = grid_n;
  j["spinup_days"] = spinup_days;
  j["velocity_std_km_per_day"] = velocity_std_km_per_day;
  j["tcorr0_days"] = tcorr0_days;
  j["floe_vel_noise"] = floe_vel_noise;
  j["floe_ang_noise"] = floe_ang_noise;
  j["tracking_distance_km"] = tracking_distance_km;
  j["search_distance_km"] = search_distance_km;
  j["occurrence_radius_km"] = occurrence_radius_km;
  j["query_time_fraction"] = query_time_fraction;
  j["smoother_covariance"] = smoother_covariance;
  return j.dump(2);
}

std::string ExperimentConfig::hash() const {
  // FNV-1a over the canonical form; n_workers is deliberately excluded (it
  // must never affect outputs).
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canonical_json()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << canonical_json() << "\n";
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config parse error: " + std::string(e.what()));
  }
  ExperimentConfig c;
  std::set<std::string> known;
  auto get = [&](const char* key, auto& field) {
    known.insert(key);
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("domain_size_km", c.domain_size_km);
  get("duration_days", c.duration_days);
  get("n_floes", c.n_floes);
  get("obs_noise_km", c.obs_noise_km);
  get("obs_noise_rad", c.obs_noise_rad);
  get("mode_range", c.mode_range);
  get("ensemble_size", c.ensemble_size);
  get("master_seed", c.master_seed);
  get("dt_days", c.dt_days);
  get("dt_obs_days", c.dt_obs_days);
  get("snapshot_cadence_days", c.snapshot_cadence_days);
  get("grid_n", c.grid_n);
  get("spinup_days", c.spinup_days);
  get("velocity_std_km_per_day", c.velocity_std_km_per_day);
  get("tcorr0_days", c.tcorr0_days);
  get("floe_vel_noise", c.floe_vel_noise);
  get("floe_ang_noise", c.floe_ang_noise);
  get("tracking_distance_km", c.tracking_distance_km);
  get("search_distance_km", c.search_distance_km);
  get("occurrence_radius_km", c.occurrence_radius_km);
  get("query_time_fraction", c.query_time_fraction);
  get("smoother_covariance", c.smoother_covariance);
  get("n_workers", c.n_workers);
  for (const auto& [key, value] : j.items())
    if (!known.count(key))
      throw std::invalid_argument("unknown config key: " + key);
  c.validate();
  return c;
}

int ExperimentConfig::record_stride() const {
  return static_cast<int>(std::llround(snapshot_cadence_days / dt_obs_days));
}

double ExperimentConfig::query_time() const {
  const double cadence = snapshot_cadence_days;
  double t = std::round(duration_days * query_time_fraction / cadence) * cadence;
  return std::clamp(t, 0.0, duration_days);
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Calibrate: return "calibrate";
    case Stage::Simulate: return "simulate";
    case Stage::Observe: return "observe";
    case Stage::Filter: return "filter";
    case Stage::Smoother: return "smoother";
    case Stage::Sample: return "sample";
    case Stage::Diagnose: return "diagnose";
    case Stage::Track: return "track";
    case Stage::Stats: return "stats";
    case Stage::Figures: return "figures";
  }
  return "unknown";
}

std::vector<Stage> all_stages() {
  return {Stage::Calibrate, Stage::Simulate, Stage::Observe, Stage::Filter,
          Stage::Smoother,  Stage::Sample,   Stage::Diagnose, Stage::Track,
          Stage::Stats,     Stage::Figures};
}

bool RunManifest::has_stage(const std::string& name) const {
  return std::any_of(stages_completed.begin(), stages_completed.end(),
                     [&](const auto& p) { return p.first == name; });
}

void RunManifest::save(const std::filesystem::path& path) const {
  json j;
  j["code_version"] = code_version;
  j["config_hash"] = config_hash;
  j["config"] = json::parse(config_echo);
  json stages = json::array();
  for (const auto& [name, ts] : stages_completed)
    stages.push_back({{"stage", name}, {"completed_at", ts}});
  j["stages_completed"] = stages;
  j["stage_seeds"] = stage_seeds;
  j["outputs"] = outputs;
  json fails = json::array();
  for (const auto& [name, cause] : failures)
    fails.push_back({{"stage", name}, {"cause", cause}});
  j["failures"] = fails;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest " + path.string());
  json j;
  in >> j;
  RunManifest m;
  m.code_version = j.value("code_version", "");
  m.config_hash = j.value("config_hash", "");
  m.config_echo = j.contains("config") ? j["config"].dump(2) : "{}";
  for (const auto& s : j.value("stages_completed", json::array()))
    m.stages_completed.emplace_back(s.value("stage", ""),
                                    s.value("completed_at", ""));
  if (j.contains("stage_seeds"))
    for (const auto& [k, v] : j["stage_seeds"].items())
      m.stage_seeds[k] = v.get<std::uint64_t>();
  for (const auto& o : j.value("outputs", json::array()))
    m.outputs.push_back(o.get<std::string>());
  for (const auto& f : j.value("failures", json::array()))
    m.failures.emplace_back(f.value("stage", ""), f.value("cause", ""));
  return m;
}

void save_filter_result(const std::filesystem::path& path,
                        const FilterResult& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kFilterMagic, 8);
  write_f64(out, f.dt_inner);
  write_u64(out, static_cast<std::uint64_t>(f.n_inner_per_obs));
  write_u64(out, f.obs_times.size());
  for (double t : f.obs_times) write_f64(out, t);
  for (const auto& v : f.mu) write_vec(out, v);
  for (const auto& m : f.R) write_mat(out, m);
  write_u64(out, f.inner_times.size());
  for (double t : f.inner_times) write_f64(out, t);
  for (const auto& v : f.mu_inner) write_vec(out, v);
  write_u64(out, f.obs_used.size());
  for (std::size_t j = 0; j < f.obs_used.size(); ++j) {
    write_u64(out, f.obs_used[j].size());
    for (const auto& o : f.obs_used[j]) {
      write_f64(out, o.x.x());
      write_f64(out, o.x.y());
      write_f64(out, o.Omega);
    }
    for (double s : f.s_trans[j]) write_f64(out, s);
    for (double s : f.s_rot[j]) write_f64(out, s);
  }
  write_u64(out, static_cast<std::uint64_t>(f.conditioning_interventions));
}

FilterResult load_filter_result(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kFilterMagic, 8) != 0)
    throw std::runtime_error("bad filter checkpoint " + path.string());
  FilterResult f;
  f.dt_inner = read_f64(in);
  f.n_inner_per_obs = static_cast<int>(read_u64(in));
  const std::size_t n_obs = read_u64(in);
  f.obs_times.resize(n_obs);
  for (auto& t : f.obs_times) t = read_f64(in);
  f.mu.reserve(n_obs);
  for (std::size_t i = 0; i < n_obs; ++i) f.mu.push_back(read_vec(in));
  f.R.reserve(n_obs);
  for (std::size_t i = 0; i < n_obs; ++i) f.R.push_back(read_mat(in));
  const std::size_t n_inner = read_u64(in);
  f.inner_times.resize(n_inner);
  for (auto& t : f.inner_times) t = read_f64(in);
  f.mu_inner.reserve(n_inner);
  for (std::size_t i = 0; i < n_inner; ++i) f.mu_inner.push_back(read_vec(in));
  const std::size_t n_steps = read_u64(in);
  f.obs_used.resize(n_steps);
  f.s_trans.resize(n_steps);
  f.s_rot.resize(n_steps);
  for (std::size_t j = 0; j < n_steps; ++j) {
    const std::size_t n_floes = read_u64(in);
    f.obs_used[j].resize(n_floes);
    for (auto& o : f.obs_used[j]) {
      const double x = read_f64(in), y = read_f64(in);
      o.x = Vec2(x, y);
      o.Omega = read_f64(in);
    }
    f.s_trans[j].resize(n_floes);
    for (auto& s : f.s_trans[j]) s = read_f64(in);
    f.s_rot[j].resize(n_floes);
    for (auto& s : f.s_rot[j]) s = read_f64(in);
  }
  f.conditioning_interventions = static_cast<int>(read_u64(in));
  if (!in) throw std::runtime_error("truncated filter checkpoint");
  return f;
}

Experiment::Experiment(ExperimentConfig config, std::filesystem::path outdir)
    : config_(std::move(config)), outdir_(std::move(outdir)) {
  config_.validate();
  std::filesystem::create_directories(outdir_);
  std::filesystem::create_directories(outdir_ / "samples");
  const auto manifest_path = path("manifest.json");
  if (std::filesystem::exists(manifest_path))
    manifest_ = RunManifest::load(manifest_path);
  manifest_.code_version = kCodeVersion;
  manifest_.config_hash = config_.hash();
  manifest_.config_echo = config_.canonical_json();
}

std::vector<double> Experiment::snapshot_times() const {
  const int n = static_cast<int>(
      std::llround(config_.duration_days / config_.snapshot_cadence_days));
  std::vector<double> times(n + 1);
  for (int i = 0; i <= n; ++i) times[i] = i * config_.snapshot_cadence_days;
  return times;
}

CGModel Experiment::make_model(const SpectrumConfig& spectrum) const {
  CGModel model;
  model.modes = spectrum.modes;
  model.params = spectrum.params();
  model.domain_size = config_.domain_size_km;
  model.n_floes = config_.n_floes;
  model.obs_noise_km = config_.obs_noise_km;
  model.obs_noise_rad = config_.obs_noise_rad;
  model.dt_obs = config_.dt_obs_days;
  model.floe_vel_noise = config_.floe_vel_noise;
  model.floe_ang_noise = config_.floe_ang_noise;
  return model;
}

void Experiment::record_stage(Stage s, std::uint64_t seed_used,
                              const std::vector<std::string>& files) {
  const std::string name = stage_name(s);
  std::erase_if(manifest_.stages_completed,
                [&](const auto& p) { return p.first == name; });
  manifest_.stages_completed.emplace_back(name, timestamp_now());
  if (seed_used != 0) manifest_.stage_seeds[name] = seed_used;
  for (const auto& f : files)
    if (std::find(manifest_.outputs.begin(), manifest_.outputs.end(), f) ==
        manifest_.outputs.end())
      manifest_.outputs.push_back(f);
  manifest_.save(path("manifest.json"));
}

void Experiment::run_stage(Stage s) {
  try {
    switch (s) {
      case Stage::Calibrate: stage_calibrate(); break;
      case Stage::Simulate: stage_simulate(); break;
      case Stage::Observe: stage_observe(); break;
      case Stage::Filter: stage_filter(); break;
      case Stage::Smoother: stage_smoother(); break;
      case Stage::Sample: stage_sample(); break;
      case Stage::Diagnose: stage_diagnose(); break;
      case Stage::Track: stage_track(); break;
      case Stage::Stats: stage_stats(); break;
      case Stage::Figures: stage_figures(); break;
    }
  } catch (const std::exception& e) {
    manifest_.failures.emplace_back(stage_name(s), e.what());
    manifest_.save(path("manifest.json"));
    throw;
  }
}

void Experiment::run_through(Stage last) {
  for (Stage s : all_stages()) {
    run_stage(s);
    if (s == last) break;
  }
}

void Experiment::stage_calibrate() {
  auto modes = std::make_shared<const ModeSet>(ModeSet::square(config_.mode_range));
  const SpectrumConfig spectrum = SpectrumConfig::synthetic(
      modes, config_.domain_size_km, config_.velocity_std_km_per_day,
      config_.tcorr0_days);
  spectrum.save(path("spectrum.json"));
  record_stage(Stage::Calibrate, 0, {"spectrum.json"});
}

void Experiment::stage_simulate() {
  const SpectrumConfig spectrum = SpectrumConfig::load(path("spectrum.json"));
  const auto params = spectrum.params();
  Rng ocean_rng = make_rng(config_.master_seed, "truth-ocean");
  SpectralOceanState ocean =
      equilibrium_draw(spectrum, config_.domain_size_km, ocean_rng);
  // Spin-up discard before day 0.
  const int spin_steps =
      static_cast<int>(std::llround(config_.spinup_days / config_.dt_days));
  for (int s = 0; s < spin_steps; ++s)
    ocean = step_ou(ocean, params, config_.dt_days, ocean_rng);
  ocean.time = 0.0;

  Rng floe_rng = make_rng(config_.master_seed, "truth-floes");
  const auto floes = place_floes(config_.n_floes, ocean, floe_rng);
  const TruthRecord truth =
      simulate_truth(floes, ocean, params, FloePhysical{}, config_.dt_days,
                     config_.dt_obs_days, config_.duration_days, ocean_rng);
  save_snapshots(path("truth_ocean.bin"), truth.ocean);
  truth.save_floes_csv(path("truth_floes.csv"));
  record_stage(Stage::Simulate, derive_seed(config_.master_seed, "truth-ocean"),
               {"truth_ocean.bin", "truth_floes.csv"});
}

void Experiment::stage_observe() {
  TruthRecord truth;
  truth.ocean = load_snapshots(path("truth_ocean.bin"));
  for (const auto& state : truth.ocean) truth.times.push_back(state.time);
  truth.floes.assign(truth.times.size(), {});
  {
    std::ifstream in(path("truth_floes.csv"));
    if (!in) throw std::runtime_error("missing truth_floes.csv; rerun simulate");
    std::string line;
    std::getline(in, line);  // header
    std::size_t t_idx = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      const double time = std::stod(f[1]);
      while (t_idx + 1 < truth.times.size() &&
             std::abs(truth.times[t_idx] - time) >
                 std::abs(truth.times[t_idx + 1] - time))
        ++t_idx;
      if (std::abs(truth.times[t_idx] - time) > 1e-9)
        for (t_idx = 0; t_idx < truth.times.size(); ++t_idx)
          if (std::abs(truth.times[t_idx] - time) <= 1e-9) break;
      FloeState fl;
      fl.x = Vec2(std::stod(f[2]), std::stod(f[3]));
      fl.u = Vec2(std::stod(f[4]), std::stod(f[5]));
      fl.Omega = std::stod(f[6]);
      fl.omega = std::stod(f[7]);
      fl.time = time;
      truth.floes[t_idx].push_back(fl);
    }
  }
  Rng rng = make_rng(config_.master_seed, "observe");
  const ObservationSeries obs =
      observe(truth, config_.obs_noise_km, config_.obs_noise_rad, rng);
  obs.save_csv(path("observations.csv"));
  record_stage(Stage::Observe, derive_seed(config_.master_seed, "observe"),
               {"observations.csv"});
}

void Experiment::stage_filter() {
  const SpectrumConfig spectrum = SpectrumConfig::load(path("spectrum.json"));
  ObservationSeries obs = ObservationSeries::load_csv(
      path("observations.csv"), config_.obs_noise_km, config_.obs_noise_rad);
  if (obs.times.empty()) {
    // No floes observed: the filter degenerates to the prior forecast, but
    // still needs the observation time grid.
    const int n = static_cast<int>(
        std::llround(config_.duration_days / config_.dt_obs_days));
    for (int i = 0; i <= n; ++i) obs.times.push_back(i * config_.dt_obs_days);
    obs.obs.assign(obs.times.size(), {});
    obs.dt_obs = config_.dt_obs_days;
  }
  const CGModel model = make_model(spectrum);
  Eigen::VectorXd mu0;
  Eigen::MatrixXd R0;
  model.prior(spectrum, obs.obs[0], mu0, R0);
  const FilterResult filter = filter_forward(model, obs, mu0, R0);
  save_filter_result(path("filter.bin"), filter);
  {
    CsvWriter csv(path("posterior_filter.csv"),
                  {"time", "component", "mu", "diag_R"});
    for (std::size_t t = 0; t < filter.obs_times.size(); ++t)
      for (int c = 0; c < filter.mu[t].size(); ++c)
        csv.row(filter.obs_times[t], c, filter.mu[t](c), filter.R[t](c, c));
  }
  record_stage(Stage::Filter, 0, {"filter.bin", "posterior_filter.csv"});
}

void Experiment::stage_smoother() {
  const SpectrumConfig spectrum = SpectrumConfig::load(path("spectrum.json"));
  const FilterResult filter = load_filter_result(path("filter.bin"));
  const CGModel model = make_model(spectrum);
  const SmootherResult sm =
      smoother_backward(model, filter, config_.smoother_covariance);
  {
    CsvWriter csv(path("posterior_smoother.csv"),
                  {"time", "component", "mu", "diag_R"});
    for (std::size_t t = 0; t < sm.times.size(); ++t)
      for (int c = 0; c < sm.mu[t].size(); ++c)
        csv.row(sm.times[t], c, sm.mu[t](c),
                sm.R.empty() ? std::numeric_limits<double>::quiet_NaN()
                             : sm.R[t](c, c));
  }
  // Posterior-mean ocean snapshots at the diagnostic cadence.
  std::vector<SpectralOceanState> mean_ocean;
  const int stride = config_.record_stride();
  for (std::size_t t = 0; t < sm.times.size(); t += stride)
    mean_ocean.push_back(model.ocean_state(sm.mu[t], sm.times[t]));
  save_snapshots(path("mean_ocean.bin"), mean_ocean);
  record_stage(Stage::Smoother, 0,
               {"posterior_smoother.csv", "mean_ocean.bin"});
}

void Experiment::stage_sample() {
  const SpectrumConfig spectrum = SpectrumConfig::load(path("spectrum.json"));
  const FilterResult filter = load_filter_result(path("filter.bin"));
  const CGModel model = make_model(spectrum);
  const auto samples =
      sample_backward(model, filter, config_.ensemble_size, config_.master_seed,
                      config_.record_stride(), config_.n_workers);
  std::vector<std::string> files;
  for (const auto& s : samples) {
    std::vector<SpectralOceanState> states;
    states.reserve(s.times.size());
    for (std::size_t t = 0; t < s.times.size(); ++t)
      states.push_back(model.ocean_state(s.y[t], s.times[t]));
    const std::string name =
        "samples/sample_" + std::to_string(s.sample_id) + ".bin";
    save_snapshots(path(name), states);
    files.push_back(name);
  }
  record_stage(Stage::Sample, derive_seed(config_.master_seed, "sample"),
               files);
}

namespace {

std::vector<EddyDetection> detect_series(
    const std::vector<SpectralOceanState>& states, int grid_n,
    std::optional<double> sigma_override) {
  std::vector<EddyDetection> out;
  out.reserve(states.size());
  for (const auto& s : states)
    out.push_back(detect_eddies(ow_field(s, grid_n, sigma_override)));
  return out;
}

void parallel_for(int n, int n_workers, const std::function<void(int)>& body) {
  const int workers = std::clamp(n_workers, 1, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int b = w * chunk, e = std::min(n, b + chunk);
    if (b < e)
      pool.emplace_back([&, b, e] {
        for (int i = b; i < e; ++i) body(i);
      });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

void Experiment::stage_diagnose() {
  const auto snap_times = snapshot_times();
  const int stride = config_.record_stride();

  auto truth_all = load_snapshots(path("truth_ocean.bin"));
  std::vector<SpectralOceanState> truth;
  for (std::size_t t = 0; t < truth_all.size(); t += stride)
    truth.push_back(truth_all[t]);
  truth_all.clear();
  const auto mean_ocean = load_snapshots(path("mean_ocean.bin"));

  std::vector<std::vector<SpectralOceanState>> samples(config_.ensemble_size);
  for (int i = 0; i < config_.ensemble_size; ++i)
    samples[i] = load_snapshots(
        path("samples/sample_" + std::to_string(i) + ".bin"));

  // Climatological OW scale: mean per-snapshot sigma over the ensemble, so
  // all fields (truth, posterior mean, members) share one threshold.
  std::vector<double> sigma_sum(config_.ensemble_size, 0.0);
  parallel_for(config_.ensemble_size, config_.n_workers, [&](int i) {
    for (const auto& s : samples[i])
      sigma_sum[i] += ow_field(s, config_.grid_n).sigma_ow;
  });
  double sigma_clim = 0.0;
  std::size_t n_fields = 0;
  for (int i = 0; i < config_.ensemble_size; ++i) {
    sigma_clim += sigma_sum[i];
    n_fields += samples[i].size();
  }
  sigma_clim /= std::max<std::size_t>(1, n_fields);

  std::vector<std::vector<EddyDetection>> det_samples(config_.ensemble_size);
  parallel_for(config_.ensemble_size, config_.n_workers, [&](int i) {
    det_samples[i] = detect_series(samples[i], config_.grid_n, sigma_clim);
  });
  const auto det_truth = detect_series(truth, config_.grid_n, sigma_clim);
  const auto det_mean = detect_series(mean_ocean, config_.grid_n, sigma_clim);

  {
    json meta;
    meta["schema_version"] = 1;
    meta["sigma_clim"] = sigma_clim;
    meta["threshold"] = -0.2 * sigma_clim;
    meta["grid_n"] = config_.grid_n;
    meta["domain_size_km"] = config_.domain_size_km;
    meta["times"] = snap_times;
    std::ofstream out(path("diagnose_meta.json"));
    out << meta.dump(2) << "\n";
  }
  CsvWriter csv(path("detections.csv"),
                {"sample_id", "time", "core_x", "core_y", "ow_value",
                 "area_km2"});
  auto emit = [&](int sample_id, const std::vector<EddyDetection>& dets) {
    for (const auto& det : dets)
      for (const auto& core : det.cores)
        csv.row(sample_id, det.time, core.position.x(), core.position.y(),
                core.ow_value,
                core.boundary >= 0
                    ? det.sizes[core.boundary]
                    : std::numeric_limits<double>::quiet_NaN());
  };
  emit(-2, det_truth);
  emit(-1, det_mean);
  for (int i = 0; i < config_.ensemble_size; ++i) emit(i, det_samples[i]);
  record_stage(Stage::Diagnose, 0, {"diagnose_meta.json", "detections.csv"});
}

namespace {

struct DetectionArchive {
  std::vector<double> times;
  double domain_size = 0.0;
  double sigma_clim = 0.0;
  double threshold = 0.0;
  // keyed by sample_id: -2 truth, -1 posterior mean, >= 0 ensemble members
  std::map<int, std::vector<EddyDetection>> series;
};

DetectionArchive load_detections(const std::filesystem::path& dir,
                                 int ensemble_size) {
  DetectionArchive arc;
  {
    std::ifstream in(dir / "diagnose_meta.json");
    if (!in)
      throw std::runtime_error("missing diagnose_meta.json; rerun diagnose");
    json meta;
    in >> meta;
    arc.times = meta.at("times").get<std::vector<double>>();
    arc.domain_size = meta.at("domain_size_km").get<double>();
    arc.sigma_clim = meta.at("sigma_clim").get<double>();
    arc.threshold = meta.at("threshold").get<double>();
  }
  auto blank_series = [&] {
    std::vector<EddyDetection> s(arc.times.size());
    for (std::size_t t = 0; t < arc.times.size(); ++t) {
      s[t].time = arc.times[t];
      s[t].domain_size = arc.domain_size;
      s[t].sigma_ow = arc.sigma_clim;
      s[t].threshold = arc.threshold;
    }
    return s;
  };
  arc.series[-2] = blank_series();
  arc.series[-1] = blank_series();
  for (int i = 0; i < ensemble_size; ++i) arc.series[i] = blank_series();

  std::ifstream in(dir / "detections.csv");
  if (!in) throw std::runtime_error("missing detections.csv; rerun diagnose");
  std::string line;
  std::getline(in, line);  // header
  const double cadence =
      arc.times.size() > 1 ? arc.times[1] - arc.times[0] : 1.0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const int sample_id = std::stoi(f[0]);
    const double time = std::stod(f[1]);
    const auto t = static_cast<std::size_t>(std::llround(time / cadence));
    if (t >= arc.times.size()) continue;
    auto& det = arc.series.at(sample_id)[t];
    EddyCore core;
    core.position = Vec2(std::stod(f[2]), std::stod(f[3]));
    core.ow_value = std::stod(f[4]);
    const double area = std::stod(f[5]);
    if (std::isfinite(area)) {
      core.boundary = static_cast<int>(det.sizes.size());
      det.sizes.push_back(area);
      det.boundaries.emplace_back();
    } else {
      core.flagged_no_boundary = true;
    }
    det.cores.push_back(core);
  }
  return arc;
}

std::vector<int> count_series(const std::vector<EddyDetection>& dets) {
  std::vector<int> counts;
  counts.reserve(dets.size());
  for (const auto& d : dets) counts.push_back((int)d.cores.size());
  return counts;
}

}  // namespace

std::vector<EddyDetection> Experiment::load_detection_series(
    const std::string& family, int sample_id) const {
  const auto arc = load_detections(outdir_, config_.ensemble_size);
  if (family == "truth") return arc.series.at(-2);
  if (family == "mean") return arc.series.at(-1);
  if (family == "samples") return arc.series.at(sample_id);
  throw std::invalid_argument("unknown detection family: " + family);
}

void Experiment::stage_track() {
  const auto arc = load_detections(outdir_, config_.ensemble_size);
  TrackingConfig cfg;
  cfg.tracking_distance = config_.tracking_distance_km;
  cfg.search_distance = config_.search_distance_km;
  cfg.snapshot_cadence = config_.snapshot_cadence_days;
  CsvWriter csv(path("tracks.csv"),
                {"sample_id", "track_id", "birth_time", "death_time",
                 "lifetime_days", "mean_area_km2", "n_snapshots"});
  for (const auto& [sample_id, dets] : arc.series) {
    const auto tracks = catalog_all_tracks(dets, cfg);
    for (const auto& tr : tracks) {
      double area_sum = 0.0;
      int area_n = 0;
      for (const auto& s : tr.snapshots)
        if (std::isfinite(s.area)) {
          area_sum += s.area;
          ++area_n;
        }
      csv.row(sample_id, tr.track_id, tr.birth_time, tr.death_time,
              tr.lifetime,
              area_n > 0 ? area_sum / area_n
                         : std::numeric_limits<double>::quiet_NaN(),
              static_cast<long long>(tr.snapshots.size()));
    }
  }
  record_stage(Stage::Track, 0, {"tracks.csv"});
}

void Experiment::stage_stats() {
  const auto arc = load_detections(outdir_, config_.ensemble_size);
  std::vector<std::vector<EddyDetection>> sample_series;
  for (int i = 0; i < config_.ensemble_size; ++i)
    sample_series.push_back(arc.series.at(i));

  const CountStatistics counts = ensemble_counts(sample_series);
  const auto truth_counts = count_series(arc.series.at(-2));
  const auto mean_counts = count_series(arc.series.at(-1));
  save_counts_csv(counts, truth_counts, mean_counts, path("counts.csv"));

  // Seed eddies: the truth cores at the query time.
  const double qt = config_.query_time();
  const double cadence = config_.snapshot_cadence_days;
  const auto qt_idx = static_cast<std::size_t>(std::llround(qt / cadence));
  const auto& truth_at_qt = arc.series.at(-2)[qt_idx];
  std::vector<EddyDetection> samples_at_qt;
  for (const auto& s : sample_series) samples_at_qt.push_back(s[qt_idx]);

  json stats;
  stats["schema_version"] = 1;
  stats["config_hash"] = config_.hash();
  stats["n_samples"] = config_.ensemble_size;
  stats["sigma_clim"] = arc.sigma_clim;
  stats["query_time_days"] = qt;
  stats["count_time_mean"] = {
      {"truth", std::accumulate(truth_counts.begin(), truth_counts.end(), 0.0) /
                    truth_counts.size()},
      {"posterior_mean",
       std::accumulate(mean_counts.begin(), mean_counts.end(), 0.0) /
           mean_counts.size()},
      {"ensemble",
       std::accumulate(counts.mean.begin(), counts.mean.end(), 0.0) /
           counts.mean.size()}};

  std::vector<std::string> files = {"counts.csv", "occurrence.csv",
                                    "stats.json"};
  CsvWriter occ(path("occurrence.csv"),
                {"eddy_id", "x", "y", "probability", "stderr"});
  json seeds = json::array();
  for (std::size_t k = 0; k < truth_at_qt.cores.size(); ++k) {
    const Vec2 loc = truth_at_qt.cores[k].position;
    const OccurrenceResult res = occurrence_probability(
        samples_at_qt, loc, config_.occurrence_radius_km);
    occ.row((long long)k, loc.x(), loc.y(), res.probability, res.stderr_);

    TrackingConfig cfg;
    cfg.tracking_distance = config_.tracking_distance_km;
    cfg.search_distance = config_.search_distance_km;
    cfg.snapshot_cadence = cadence;
    cfg.seed_time = qt;
    cfg.seed_location = loc;
    const SampleHistogram lifetime =
        lifetime_distribution(sample_series, cfg);
    const SampleHistogram size = size_distribution(
        samples_at_qt, loc, config_.occurrence_radius_km);
    const std::string lf = "lifetime_seed" + std::to_string(k) + ".csv";
    const std::string sf = "size_seed" + std::to_string(k) + ".csv";
    save_histogram_csv(lifetime, path(lf));
    save_histogram_csv(size, path(sf));
    files.push_back(lf);
    files.push_back(sf);

    // Truth reference values for the same seed.
    const auto truth_track = track_eddy(arc.series.at(-2), cfg);
    json seed;
    seed["eddy_id"] = k;
    seed["x"] = loc.x();
    seed["y"] = loc.y();
    seed["probability"] = res.probability;
    seed["stderr"] = res.stderr_;
    seed["lifetime_mean"] = lifetime.mean;
    seed["lifetime_sd"] = lifetime.sd;
    seed["lifetime_occurrence"] = lifetime.occurrence_fraction;
    seed["size_mean"] = size.mean;
    seed["size_sd"] = size.sd;
    seed["truth_lifetime"] =
        truth_track ? truth_track->lifetime
                    : std::numeric_limits<double>::quiet_NaN();
    seeds.push_back(seed);
  }
  stats["seeds"] = seeds;

  // Climatological lifetimes: every truth track, the unconditioned baseline.
  {
    TrackingConfig cfg;
    cfg.tracking_distance = config_.tracking_distance_km;
    cfg.search_distance = config_.search_distance_km;
    cfg.snapshot_cadence = cadence;
    std::vector<double> clim;
    for (const auto& tr : catalog_all_tracks(arc.series.at(-2), cfg))
      clim.push_back(tr.lifetime);
    const SampleHistogram h =
        make_histogram(std::move(clim), (int)arc.series.at(-2).size());
    stats["climatology_lifetime_mean"] = h.mean;
    stats["climatology_lifetime_sd"] = h.sd;
    stats["climatology_lifetime_n"] = h.n_present;
  }
  {
    std::ofstream out(path("stats.json"));
    out << stats.dump(2) << "\n";
  }
  record_stage(Stage::Stats, 0, files);
}

void Experiment::emit_figure_tables(const std::string& figure_id) {
  auto copy_to = [&](const std::string& from, const std::string& to) {
    if (!std::filesystem::exists(path(from)))
      throw std::runtime_error("missing intermediate " + from +
                               "; rerun the stats stage");
    std::filesystem::copy_file(path(from), path(to),
                               std::filesystem::copy_options::overwrite_existing);
  };
  if (figure_id == "counts") {
    copy_to("counts.csv", "figure_counts.csv");
  } else if (figure_id == "occurrence") {
    copy_to("occurrence.csv", "figure_occurrence.csv");
  } else if (figure_id == "lifetime" || figure_id == "size") {
    int k = 0;
    bool any = false;
    for (;; ++k) {
      const std::string from = figure_id + "_seed" + std::to_string(k) + ".csv";
      if (!std::filesystem::exists(path(from))) break;
      copy_to(from, "figure_" + from);
      any = true;
    }
    if (!any && !std::filesystem::exists(path("stats.json")))
      throw std::runtime_error("missing intermediates for figure " + figure_id +
                               "; rerun the stats stage");
  } else {
    throw std::invalid_argument(
        "unknown figure id '" + figure_id +
        "'; valid ids: counts, occurrence, lifetime, size");
  }
}

void Experiment::stage_figures() {
  std::vector<std::string> files;
  for (const char* id : {"counts", "occurrence", "lifetime", "size"})
    emit_figure_tables(id);
  for (const auto& entry : std::filesystem::directory_iterator(outdir_)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("figure_", 0) == 0) files.push_back(name);
  }
  std::sort(files.begin(), files.end());
  record_stage(Stage::Figures, 0, files);
}

}  // namespace eddyid
