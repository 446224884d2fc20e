#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "eddyid/floe.hpp"
#include "eddyid/spectral_ocean.hpp"

namespace eddyid {

// The coupled floe-ocean forecast model in conditional-Gaussian form.
// Observed X stacks (x, y, Omega) per floe; unobserved Y stacks
// (u, v, omega) per floe followed by (Re, Im) of each primary mode pair.
struct CGModel {
  std::shared_ptr<const ModeSet> modes;
  std::vector<OUModeParams> params;  // aligned with modes
  double domain_size = 400.0;
  FloePhysical phys;
  int n_floes = 0;
  double obs_noise_km = 0.25;
  double obs_noise_rad = 0.01;
  double dt_obs = 0.1;
  // Process noise keeping the floe blocks of b b* nonsingular.
  double floe_vel_noise = 0.05;  // km/day^(3/2)
  double floe_ang_noise = 0.02;  // rad/day^(3/2)
  // Constant-drag surrogate: freezes the linearized drag speed globally,
  // used by the Kalman-Bucy oracle tests.
  std::optional<double> fixed_drag_speed;

  int n_pairs() const { return static_cast<int>(modes->pairs().size()); }
  int dim_x() const { return 3 * n_floes; }
  int dim_y() const { return 3 * n_floes + 2 * n_pairs(); }
  int ocean_offset() const { return 3 * n_floes; }

  // Linear maps from the ocean block (2 reals per pair) to point values.
  Eigen::RowVectorXd ocean_u_row(const Vec2& x) const;
  Eigen::RowVectorXd ocean_v_row(const Vec2& x) const;
  Eigen::RowVectorXd ocean_vorticity_row(const Vec2& x) const;

  Eigen::VectorXd bb_diag() const;  // diagonal of b b*
  Eigen::VectorXd BB_diag() const;  // diagonal of B B*

  SpectralOceanState ocean_state(const Eigen::VectorXd& y, double time) const;
  Eigen::VectorXd ocean_block(const SpectralOceanState& state) const;

  // Prior at t=0: ocean block from the spectrum equilibrium; floe velocities
  // from the ocean-velocity prior at the observed initial positions.
  void prior(const SpectrumConfig& spectrum,
             const std::vector<Observation>& initial_obs,
             Eigen::VectorXd& mu0, Eigen::MatrixXd& R0) const;
};

struct CGMatrices {
  Eigen::VectorXd a0;
  Eigen::MatrixXd a1;
  Eigen::VectorXd bb;  // diag of b b*
  Eigen::VectorXd BB;  // diag of B B*
  // A1 is the selector picking the first dim_x components of Y.
};

// Conditional linearization at one assimilation step: quadratic drag replaced
// by linear drag with the frozen relative speeds s_trans / s_rot per floe,
// and the ocean velocity/vorticity at the observed positions expanded as
// linear maps from the mode coefficients.
CGMatrices build_cg_matrices(const CGModel& model,
                             const std::vector<Observation>& obs,
                             const std::vector<double>& s_trans,
                             const std::vector<double>& s_rot);

struct FilterResult {
  double dt_inner = 0.01;
  int n_inner_per_obs = 0;
  std::vector<double> obs_times;
  std::vector<Eigen::VectorXd> mu;  // at obs times
  std::vector<Eigen::MatrixXd> R;   // at obs times
  std::vector<double> inner_times;
  std::vector<Eigen::VectorXd> mu_inner;  // at every inner step
  // Per assimilation step: the observation snapshot and frozen drag speeds
  // used to build the matrices (needed to rebuild them in backward passes).
  std::vector<std::vector<Observation>> obs_used;
  std::vector<std::vector<double>> s_trans, s_rot;
  int conditioning_interventions = 0;
};

// Forward conditional-Gaussian filter. dX/dt is realized as the first-order
// difference of consecutive observations held constant over the step.
FilterResult filter_forward(const CGModel& model, const ObservationSeries& obs,
                            const Eigen::VectorXd& mu0,
                            const Eigen::MatrixXd& R0, double dt_inner = 0.01);

struct SmootherResult {
  std::vector<double> times;        // obs times
  std::vector<Eigen::VectorXd> mu;
  std::vector<Eigen::MatrixXd> R;   // empty when covariance not requested
};

SmootherResult smoother_backward(const CGModel& model,
                                 const FilterResult& filter,
                                 bool with_covariance = true);

struct PosteriorSample {
  int sample_id = 0;
  std::uint64_t seed = 0;
  std::vector<double> times;       // recorded obs times, ascending
  std::vector<Eigen::VectorXd> y;  // recorded states
};

// Backward trajectory sampling: terminal draw from the filter at T, then the
// conditioned SDE integrated backward (drift-implicit Euler-Maruyama). The
// per-step matrices are computed once and shared by all samples.
// record_stride records every k-th observation time.
std::vector<PosteriorSample> sample_backward(const CGModel& model,
                                             const FilterResult& filter,
                                             int n_samples,
                                             std::uint64_t master_seed,
                                             int record_stride = 1,
                                             int n_workers = 1);

}  // namespace eddyid
