#include "eddyid/floe.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "eddyid/io.hpp"

namespace eddyid {

FloeState floe_step(const FloeState& state, const SpectralOceanState& ocean,
                    const FloePhysical& phys, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("floe_step: dt must be positive");
  const double beta = phys.beta_per_km();
  const Vec2 uo = velocity_at(ocean, state.x);
  const double zeta = vorticity_at(ocean, state.x);

  FloeState next = state;
  const Vec2 du = uo - state.u;
  const double dw = zeta / 2.0 - state.omega;
  next.x = wrap_point(state.x + dt * state.u, ocean.domain_size);
  next.u = state.u + dt * beta * du.norm() * du;
  next.Omega = state.Omega + dt * state.omega;
  next.omega = state.omega + dt * beta * std::abs(dw) * dw;
  next.time = state.time + dt;
  return next;
}

TruthRecord simulate_truth(const std::vector<FloeState>& initial_floes,
                           const SpectralOceanState& initial_ocean,
                           const std::vector<OUModeParams>& ocean_params,
                           const FloePhysical& phys, double dt,
                           double dt_record, double duration, Rng& ocean_rng,
                           OUScheme scheme) {
  const int steps_per_record = static_cast<int>(std::llround(dt_record / dt));
  if (steps_per_record < 1 ||
      std::abs(steps_per_record * dt - dt_record) > 1e-9 * dt_record)
    throw std::invalid_argument(
        "simulate_truth: dt_record must be a multiple of dt");
  const int n_records = static_cast<int>(std::llround(duration / dt_record));

  TruthRecord rec;
  SpectralOceanState ocean = initial_ocean;
  std::vector<FloeState> floes = initial_floes;
  rec.times.push_back(ocean.time);
  rec.floes.push_back(floes);
  rec.ocean.push_back(ocean);
  for (int r = 0; r < n_records; ++r) {
    for (int s = 0; s < steps_per_record; ++s) {
      for (auto& fl : floes) fl = floe_step(fl, ocean, phys, dt);
      ocean = step_ou(ocean, ocean_params, dt, ocean_rng, scheme);
    }
    rec.times.push_back(ocean.time);
    rec.floes.push_back(floes);
    rec.ocean.push_back(ocean);
  }
  return rec;
}

ObservationSeries observe(const TruthRecord& truth, double noise_sd_km,
                          double noise_sd_rad, Rng& rng) {
  if (noise_sd_km < 0.0 || noise_sd_rad < 0.0)
    throw std::invalid_argument("observe: noise sd must be non-negative");
  ObservationSeries series;
  series.noise_sd_km = noise_sd_km;
  series.noise_sd_rad = noise_sd_rad;
  series.times = truth.times;
  series.dt_obs =
      truth.times.size() > 1 ? truth.times[1] - truth.times[0] : 0.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double L = truth.ocean.empty() ? 0.0 : truth.ocean[0].domain_size;
  series.obs.resize(truth.times.size());
  for (std::size_t t = 0; t < truth.times.size(); ++t) {
    series.obs[t].resize(truth.floes[t].size());
    for (std::size_t f = 0; f < truth.floes[t].size(); ++f) {
      const auto& fl = truth.floes[t][f];
      Observation o;
      o.x = Vec2(fl.x.x() + noise_sd_km * normal(rng),
                 fl.x.y() + noise_sd_km * normal(rng));
      if (L > 0) o.x = wrap_point(o.x, L);
      o.Omega = fl.Omega + noise_sd_rad * normal(rng);
      series.obs[t][f] = o;
    }
  }
  return series;
}

std::vector<FloeState> place_floes(int n_floes, const SpectralOceanState& ocean,
                                   Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, ocean.domain_size);
  std::vector<FloeState> floes(n_floes);
  for (auto& fl : floes) {
    fl.x = Vec2(uni(rng), uni(rng));
    fl.u = velocity_at(ocean, fl.x);
    fl.omega = vorticity_at(ocean, fl.x) / 2.0;
    fl.time = ocean.time;
  }
  return floes;
}

void ObservationSeries::save_csv(const std::filesystem::path& path) const {
  CsvWriter csv(path, {"floe_id", "time", "x_obs", "y_obs", "Omega_obs"});
  for (std::size_t t = 0; t < times.size(); ++t)
    for (std::size_t f = 0; f < obs[t].size(); ++f)
      csv.row(static_cast<long long>(f), times[t], obs[t][f].x.x(),
              obs[t][f].x.y(), obs[t][f].Omega);
}

ObservationSeries ObservationSeries::load_csv(
    const std::filesystem::path& path, double noise_sd_km,
    double noise_sd_rad) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);  // header
  ObservationSeries series;
  series.noise_sd_km = noise_sd_km;
  series.noise_sd_rad = noise_sd_rad;
  std::map<double, std::map<long long, Observation>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    long long floe_id;
    double time, x, y, Om;
    std::getline(ss, field, ','); floe_id = std::stoll(field);
    std::getline(ss, field, ','); time = std::stod(field);
    std::getline(ss, field, ','); x = std::stod(field);
    std::getline(ss, field, ','); y = std::stod(field);
    std::getline(ss, field, ','); Om = std::stod(field);
    rows[time][floe_id] = Observation{Vec2(x, y), Om};
  }
  for (const auto& [time, per_floe] : rows) {
    series.times.push_back(time);
    std::vector<Observation> snap;
    for (const auto& [id, o] : per_floe) snap.push_back(o);
    series.obs.push_back(std::move(snap));
  }
  series.dt_obs =
      series.times.size() > 1 ? series.times[1] - series.times[0] : 0.0;
  return series;
}

void TruthRecord::save_floes_csv(const std::filesystem::path& path) const {
  CsvWriter csv(path,
                {"floe_id", "time", "x", "y", "u", "v", "Omega", "omega"});
  for (std::size_t t = 0; t < times.size(); ++t)
    for (std::size_t f = 0; f < floes[t].size(); ++f) {
      const auto& fl = floes[t][f];
      csv.row(static_cast<long long>(f), times[t], fl.x.x(), fl.x.y(),
              fl.u.x(), fl.u.y(), fl.Omega, fl.omega);
    }
}

}  // namespace eddyid
