#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "eddyid/cg_assim.hpp"
#include "eddyid/floe.hpp"

#include "cg_reference.hpp"

using namespace eddyid;
using namespace eddyid::testref;

namespace {

std::shared_ptr<const ModeSet> square_modes(int range) {
  return std::make_shared<const ModeSet>(ModeSet::square(range));
}

CGModel small_model(std::shared_ptr<const ModeSet> modes, int n_floes,
                    double L, const SpectrumConfig& spectrum) {
  CGModel model;
  model.modes = modes;
  model.params = spectrum.params();
  model.domain_size = L;
  model.n_floes = n_floes;
  return model;
}


ObservationSeries synthetic_observations(const CGModel& model,
                                         const SpectrumConfig& spectrum,
                                         double duration, std::uint64_t seed) {
  Rng rng(seed);
  SpectralOceanState ocean =
      equilibrium_draw(spectrum, model.domain_size, rng);
  Rng floe_rng(seed + 1);
  const auto floes = place_floes(model.n_floes, ocean, floe_rng);
  const TruthRecord truth =
      simulate_truth(floes, ocean, model.params, model.phys, 0.01,
                     model.dt_obs, duration, rng);
  Rng obs_rng(seed + 2);
  return observe(truth, model.obs_noise_km, model.obs_noise_rad, obs_rng);
}

}  // namespace

TEST_CASE("ocean rows are the exact linear maps of the reconstruction") {
  auto modes = square_modes(2);
  const double L = 300.0;
  const SpectrumConfig spectrum = SpectrumConfig::synthetic(modes, L, 2.0, 8.0);
  CGModel model = small_model(modes, 1, L, spectrum);
  Rng rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(model.dim_y());
    for (int i = 0; i < y.size(); ++i) y(i) = normal(rng);
    const Vec2 x(normal(rng) * 40 + 150, normal(rng) * 40 + 150);
    const SpectralOceanState state = model.ocean_state(y, 0.0);
    const Eigen::VectorXd block = y.tail(2 * model.n_pairs());
    const Vec2 uv = velocity_at(state, x);
    CHECK(model.ocean_u_row(x).dot(block) ==
          doctest::Approx(uv.x()).epsilon(1e-12));
    CHECK(model.ocean_v_row(x).dot(block) ==
          doctest::Approx(uv.y()).epsilon(1e-12));
    CHECK(model.ocean_vorticity_row(x).dot(block) ==
          doctest::Approx(vorticity_at(state, x)).epsilon(1e-12));
  }
}

TEST_CASE("build_cg_matrices: degenerate and decoupled cases") {
  const double L = 200.0;
  auto modes = square_modes(1);
  const SpectrumConfig spectrum = SpectrumConfig::synthetic(modes, L, 1.0, 4.0);
  CGModel model = small_model(modes, 1, L, spectrum);
  std::vector<Observation> obs{{Vec2(50, 60), 0.0}};

  // Frozen speed zero: the floe block decouples from the ocean entirely.
  const CGMatrices m0 = build_cg_matrices(model, obs, {0.0}, {0.0});
  CHECK(m0.a1.topRows(3).norm() == 0.0);

  // With no retained modes the system is pure damped floe dynamics.
  auto empty = std::make_shared<const ModeSet>(ModeSet({}));
  CGModel degenerate;
  degenerate.modes = empty;
  degenerate.domain_size = L;
  degenerate.n_floes = 1;
  const CGMatrices md = build_cg_matrices(degenerate, obs, {2.0}, {1.0});
  const double beta = degenerate.phys.beta_per_km();
  CHECK(md.a1.rows() == 3);
  CHECK(md.a1(0, 0) == doctest::Approx(-beta * 2.0));
  CHECK(md.a1(1, 1) == doctest::Approx(-beta * 2.0));
  CHECK(md.a1(2, 2) == doctest::Approx(-beta * 1.0));
  CHECK(md.a0.norm() == 0.0);
}

TEST_CASE("linearized drag is exact at the linearization point") {
  auto modes = square_modes(2);
  const double L = 300.0;
  const SpectrumConfig spectrum = SpectrumConfig::synthetic(modes, L, 2.0, 8.0);
  CGModel model = small_model(modes, 1, L, spectrum);
  Rng rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(model.dim_y());
  for (int i = 0; i < y.size(); ++i) y(i) = normal(rng);
  const Vec2 x(120.0, 80.0);
  std::vector<Observation> obs{{x, 0.0}};

  const SpectralOceanState state = model.ocean_state(y, 0.0);
  const Vec2 uo = velocity_at(state, x);
  const Vec2 u(y(0), y(1));
  const double zeta = vorticity_at(state, x);
  const double omega = y(2);
  const double s_t = (uo - u).norm();
  const double s_r = std::abs(zeta / 2.0 - omega);
  const CGMatrices m = build_cg_matrices(model, obs, {s_t}, {s_r});
  const Eigen::VectorXd rhs = m.a0 + m.a1 * y;
  const double beta = model.phys.beta_per_km();
  const Vec2 exact_du = beta * (uo - u).norm() * (uo - u);
  const double exact_dw = beta * std::abs(zeta / 2 - omega) * (zeta / 2 - omega);
  CHECK(rhs(0) == doctest::Approx(exact_du.x()).epsilon(1e-10));
  CHECK(rhs(1) == doctest::Approx(exact_du.y()).epsilon(1e-10));
  CHECK(rhs(2) == doctest::Approx(exact_dw).epsilon(1e-10));
}

TEST_CASE("filter without observations follows the prior moment equations") {
  auto modes = square_modes(1);
  const double L = 200.0;
  SpectrumConfig spectrum = SpectrumConfig::synthetic(modes, L, 1.5, 4.0);
  // Nonzero means exercise the forcing terms too.
  for (auto& s : spectrum.stats) s.mean = Complex{0.3, -0.1};
  CGModel model = small_model(modes, 0, L, spectrum);

  ObservationSeries obs;
  obs.dt_obs = 0.1;
  for (int i = 0; i <= 20; ++i) {
    obs.times.push_back(0.1 * i);
    obs.obs.push_back({});
  }
  Eigen::VectorXd mu0;
  Eigen::MatrixXd R0;
  model.prior(spectrum, {}, mu0, R0);
  // Start away from equilibrium so the relaxation is visible.
  mu0.setConstant(1.0);
  R0 *= 0.5;
  const FilterResult f = filter_forward(model, obs, mu0, R0, 0.01);

  // Independent per-pair recursion for the Euler-discretized OU moments.
  const auto& pairs = modes->pairs();
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& prm = model.params[pairs[p].first];
    Eigen::Vector2d mu(mu0(2 * p), mu0(2 * p + 1));
    Eigen::Matrix2d R = R0.block<2, 2>(2 * p, 2 * p);
    Eigen::Matrix2d a1;
    a1 << -prm.a, -prm.phi, prm.phi, -prm.a;
    const Eigen::Vector2d a0(prm.f.real(), prm.f.imag());
    const double q = prm.sigma * prm.sigma / 2.0;
    const double dt = f.dt_inner;
    for (int step = 0; step < 200; ++step) {
      mu += dt * (a0 + a1 * mu);
      R += dt * (a1 * R + R * a1.transpose());
      R += dt * q * Eigen::Matrix2d::Identity();
    }
    CHECK((f.mu.back().segment<2>(2 * p) - mu).norm() < 1e-10);
    CHECK((f.R.back().block<2, 2>(2 * p, 2 * p) - R).norm() < 1e-10);
  }
}

TEST_CASE("linear surrogate matches the Kalman-Bucy and RTS references") {
  auto modes = square_modes(1);
  const double L = 200.0;
  const SpectrumConfig spectrum = SpectrumConfig::synthetic(modes, L, 2.0, 4.0);
  CGModel model = small_model(modes, 1, L, spectrum);
  model.fixed_drag_speed = 2.0;

  const ObservationSeries obs =
      synthetic_observations(model, spectrum, 2.0, 101);
  Eigen::VectorXd mu0;
  Eigen::MatrixXd R0;
  model.prior(spectrum, obs.obs[0], mu0, R0);

  const FilterResult f = filter_forward(model, obs, mu0, R0, 0.01);
  const ReferenceResult ref = reference_filter(model, obs, mu0, R0, 0.01);
  REQUIRE(f.mu.size() == ref.mu.size());
  double scale_mu = 0.0, scale_R = 0.0;
  for (std::size_t t = 0; t < f.mu.size(); ++t) {
    scale_mu = std::max(scale_mu, ref.mu[t].norm());
    scale_R = std::max(scale_R, ref.R[t].norm());
  }
  for (std::size_t t = 0; t < f.mu.size(); ++t) {
    CHECK((f.mu[t] - ref.mu[t]).norm() < 1e-8 * scale_mu);
    CHECK((f.R[t] - ref.R[t]).norm() < 1e-8 * scale_R);
  }

  const SmootherResult sm = smoother_backward(model, f, true);
  // Feed the production filter moments into the reference recursion: the
  // smoother involves R_f^{-1}, which would otherwise amplify the benign
  // 1e-8-level filter differences through an ill-conditioned inverse.
  ReferenceResult shared = ref;
  shared.mu = f.mu;
  shared.mu_inner = f.mu_inner;
  shared.R = f.R;
  const ReferenceResult rsm = reference_smoother(model, obs, shared, 0.01);
  for (std::size_t t = 0; t < sm.mu.size(); ++t) {
    CHECK((sm.mu[t] - rsm.mu[t]).norm() < 1e-8 * scale_mu);
    CHECK((sm.R[t] - rsm.R[t]).norm() < 1e-8 * scale_R);
  }
  // Boundary condition at T is exact.
  CHECK((sm.mu.back() - f.mu.back()).norm() == 0.0);
  CHECK((sm.R.back() - f.R.back()).norm() == 0.0);
}

TEST_CASE("covariance invariants: symmetry, PSD, filter-smoother ordering") {
  auto modes = square_modes(1);
  const double L = 200.0;
  const SpectrumConfig spectrum = SpectrumConfig::synthetic(modes, L, 2.0, 4.0);
  CGModel model = small_model(modes, 2, L, spectrum);
  const ObservationSeries obs =
      synthetic_observations(model, spectrum, 3.0, 202);
  Eigen::VectorXd mu0;
  Eigen::MatrixXd R0;
  model.prior(spectrum, obs.obs[0], mu0, R0);
  const FilterResult f = filter_forward(model, obs, mu0, R0);
  const SmootherResult sm = smoother_backward(model, f, true);
  for (std::size_t t = 0; t < f.R.size(); ++t) {
    CHECK((f.R[t] - f.R[t].transpose()).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f.R[t]);
    CHECK(es.eigenvalues().minCoeff() > -1e-10 * es.eigenvalues().maxCoeff());
    CHECK(sm.R[t].trace() <= f.R[t].trace() + 1e-8 * f.R[t].trace());
  }
}

TEST_CASE("smoother without observations keeps the filter variance") {
  auto modes = square_modes(1);
  const double L = 200.0;
  const SpectrumConfig spectrum = SpectrumConfig::synthetic(modes, L, 1.0, 4.0);
  CGModel model = small_model(modes, 0, L, spectrum);
  ObservationSeries obs;
  obs.dt_obs = 0.1;
  for (int i = 0; i <= 30; ++i) {
    obs.times.push_back(0.1 * i);
    obs.obs.push_back({});
  }
  Eigen::VectorXd mu0;
  Eigen::MatrixXd R0;
  model.prior(spectrum, {}, mu0, R0);
  const FilterResult f = filter_forward(model, obs, mu0, R0);
  const SmootherResult sm = smoother_backward(model, f, true);
  for (std::size_t t = 0; t < f.R.size(); ++t) {
    CHECK((sm.mu[t] - f.mu[t]).norm() < 1e-8 * (1.0 + f.mu[t].norm()));
    CHECK((sm.R[t] - f.R[t]).norm() < 0.03 * f.R[t].norm());
  }
}

TEST_CASE("noise-free backward sampling collapses to the smoother mean") {
  auto modes = square_modes(1);
  const double L = 200.0;
  SpectrumConfig spectrum = SpectrumConfig::synthetic(modes, L, 2.0, 4.0);
  CGModel model = small_model(modes, 1, L, spectrum);
  const ObservationSeries obs =
      synthetic_observations(model, spectrum, 1.0, 303);
  // Shrink every noise amplitude to (nearly) zero after generating data.
  for (auto& s : spectrum.stats) s.variance *= 1e-14;
  model.params = spectrum.params();
  model.floe_vel_noise = 1e-8;
  model.floe_ang_noise = 1e-8;
  Eigen::VectorXd mu0;
  Eigen::MatrixXd R0;
  model.prior(spectrum, obs.obs[0], mu0, R0);
  R0.diagonal().array() += 1e-12;
  const FilterResult f = filter_forward(model, obs, mu0, R0);
  const SmootherResult sm = smoother_backward(model, f, false);
  const auto samples = sample_backward(model, f, 1, 42);
  const auto& s = samples[0];
  for (std::size_t t = 0; t < s.times.size(); ++t) {
    CHECK((s.y[t] - sm.mu[t]).norm() < 1e-4 * (1.0 + sm.mu[t].norm()));
  }
}

TEST_CASE("backward samples reproduce the smoother moments") {
  // A single pair with both wavenumber components nonzero, so both velocity
  // components carry variance.
  auto modes = std::make_shared<const ModeSet>(
      ModeSet({{1, 1}, {-1, -1}}));
  const double L = 200.0;
  const SpectrumConfig spectrum = SpectrumConfig::synthetic(modes, L, 1.5, 2.0);
  CGModel model = small_model(modes, 1, L, spectrum);
  const ObservationSeries obs =
      synthetic_observations(model, spectrum, 1.0, 404);
  Eigen::VectorXd mu0;
  Eigen::MatrixXd R0;
  model.prior(spectrum, obs.obs[0], mu0, R0);
  const FilterResult f = filter_forward(model, obs, mu0, R0);
  const SmootherResult sm = smoother_backward(model, f, true);
  const int n_samples = 4000;
  const auto samples = sample_backward(model, f, n_samples, 777);

  const std::size_t n_obs = f.obs_times.size();
  for (std::size_t t : {std::size_t(0), n_obs / 4, n_obs / 2, 3 * n_obs / 4,
                        n_obs - 1}) {
    const int ny = model.dim_y();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(ny);
    for (const auto& s : samples) mean += s.y[t];
    mean /= n_samples;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(ny, ny);
    for (const auto& s : samples) {
      const Eigen::VectorXd d = s.y[t] - mean;
      cov += d * d.transpose();
    }
    cov /= n_samples - 1;
    for (int i = 0; i < ny; ++i) {
      const double se_mean = std::sqrt(sm.R[t](i, i) / n_samples);
      CHECK(std::abs(mean(i) - sm.mu[t](i)) < 3.0 * se_mean + 1e-12);
      const double se_var = sm.R[t](i, i) * std::sqrt(2.0 / (n_samples - 1));
      CHECK(std::abs(cov(i, i) - sm.R[t](i, i)) < 3.0 * se_var + 1e-12);
    }
  }
  // Construction invariants: finite states with exact conjugate symmetry.
  for (int i = 0; i < 5; ++i) {
    const auto& s = samples[i];
    for (std::size_t t = 0; t < s.times.size(); ++t) {
      CHECK(s.y[t].allFinite());
      const SpectralOceanState state = model.ocean_state(s.y[t], s.times[t]);
      CHECK(state.max_symmetry_violation() == 0.0);
    }
  }
}

TEST_CASE("backward sampling is deterministic and worker-count independent") {
  auto modes = square_modes(1);
  const double L = 200.0;
  const SpectrumConfig spectrum = SpectrumConfig::synthetic(modes, L, 2.0, 4.0);
  CGModel model = small_model(modes, 1, L, spectrum);
  const ObservationSeries obs =
      synthetic_observations(model, spectrum, 1.0, 505);
  Eigen::VectorXd mu0;
  Eigen::MatrixXd R0;
  model.prior(spectrum, obs.obs[0], mu0, R0);
  const FilterResult f = filter_forward(model, obs, mu0, R0);
  const auto a = sample_backward(model, f, 6, 99, 1, 1);
  const auto b = sample_backward(model, f, 6, 99, 1, 3);
  // Growing the ensemble must not reshuffle earlier members.
  const auto c = sample_backward(model, f, 9, 99, 1, 2);
  for (int i = 0; i < 6; ++i)
    for (std::size_t t = 0; t < a[i].times.size(); ++t) {
      CHECK((a[i].y[t] - b[i].y[t]).norm() == 0.0);
      CHECK((a[i].y[t] - c[i].y[t]).norm() == 0.0);
    }
}

TEST_CASE("twin experiment: assimilation beats the free-run forecast") {
  auto modes = square_modes(2);
  const double L = 400.0;
  const SpectrumConfig spectrum = SpectrumConfig::synthetic(modes, L, 2.0, 8.0);
  CGModel model = small_model(modes, 10, L, spectrum);

  // Generate the truth and keep the spectral trajectory for scoring.
  Rng rng(606);
  SpectralOceanState ocean = equilibrium_draw(spectrum, L, rng);
  Rng floe_rng(607);
  const auto floes = place_floes(model.n_floes, ocean, floe_rng);
  const TruthRecord truth = simulate_truth(floes, ocean, model.params,
                                           model.phys, 0.01, 0.1, 10.0, rng);
  Rng obs_rng(608);
  const ObservationSeries obs = observe(truth, 0.25, 0.01, obs_rng);

  Eigen::VectorXd mu0;
  Eigen::MatrixXd R0;
  model.prior(spectrum, obs.obs[0], mu0, R0);
  const FilterResult f = filter_forward(model, obs, mu0, R0);

  // The free-run forecast mean is the equilibrium mean (zero here), so its
  // per-mode RMSE is the truth RMS amplitude.
  const auto& pairs = modes->pairs();
  int improved = 0;
  double err_filter = 0.0, err_free = 0.0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    double e_filt = 0.0, e_zero = 0.0;
    for (std::size_t t = 0; t < f.obs_times.size(); ++t) {
      const Complex truth_c = truth.ocean[t].coeffs[pairs[p].first];
      const Complex est{f.mu[t](model.ocean_offset() + 2 * p),
                        f.mu[t](model.ocean_offset() + 2 * p + 1)};
      e_filt += std::norm(est - truth_c);
      e_zero += std::norm(truth_c);
    }
    if (e_filt < e_zero) ++improved;
    err_filter += e_filt;
    err_free += e_zero;
  }
  CHECK(err_filter < 0.8 * err_free);
  CHECK(improved >= static_cast<int>(0.6 * pairs.size()));
}
