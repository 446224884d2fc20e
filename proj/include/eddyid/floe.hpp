#pragma once

#include <filesystem>
#include <vector>

#include "eddyid/geometry.hpp"
#include "eddyid/rng.hpp"
#include "eddyid/spectral_ocean.hpp"

namespace eddyid {

struct FloePhysical {
  double thickness_m = 2.0;
  double rho_ice = 920.0;    // kg/m^3
  double rho_ocean = 1000.0; // kg/m^3
  double drag_coeff = 3e-3;  // dimensionless

  // Quadratic drag coefficient in km^-1: d_o * rho_o / (h * rho_ice), with
  // the thickness converted from meters so (km/day)^2 * beta -> km/day^2.
  double beta_per_km() const {
    return drag_coeff * rho_ocean / (thickness_m * rho_ice) * 1000.0;
  }
};

struct FloeState {
  Vec2 x{0.0, 0.0};   // km, wrapped into [0, L)^2
  Vec2 u{0.0, 0.0};   // km/day
  double Omega = 0.0; // rad
  double omega = 0.0; // rad/day
  double time = 0.0;  // days
};

FloeState floe_step(const FloeState& state, const SpectralOceanState& ocean,
                    const FloePhysical& phys, double dt);

struct Observation {
  Vec2 x{0.0, 0.0};
  double Omega = 0.0;
};

struct ObservationSeries {
  double dt_obs = 0.1;        // days
  double noise_sd_km = 0.25;
  double noise_sd_rad = 0.01;
  std::vector<double> times;
  // obs[t][floe]
  std::vector<std::vector<Observation>> obs;

  std::size_t n_floes() const { return obs.empty() ? 0 : obs[0].size(); }
  void save_csv(const std::filesystem::path& path) const;
  static ObservationSeries load_csv(const std::filesystem::path& path,
                                    double noise_sd_km, double noise_sd_rad);
};

struct TruthRecord {
  std::vector<double> times;                  // observation cadence
  std::vector<std::vector<FloeState>> floes;  // floes[t][floe]
  std::vector<SpectralOceanState> ocean;      // ocean[t]

  void save_floes_csv(const std::filesystem::path& path) const;
};

// Co-evolves the ocean (OU) and floes with one-way coupling, recording both
// at the observation cadence. dt_record must be an integer multiple of dt.
TruthRecord simulate_truth(const std::vector<FloeState>& initial_floes,
                           const SpectralOceanState& initial_ocean,
                           const std::vector<OUModeParams>& ocean_params,
                           const FloePhysical& phys, double dt,
                           double dt_record, double duration, Rng& ocean_rng,
                           OUScheme scheme = OUScheme::EulerMaruyama);

ObservationSeries observe(const TruthRecord& truth, double noise_sd_km,
                          double noise_sd_rad, Rng& rng);

// Uniform random placement over the domain, floes starting at the local
// ocean velocity and half the local vorticity.
std::vector<FloeState> place_floes(int n_floes, const SpectralOceanState& ocean,
                                   Rng& rng);

}  // namespace eddyid
