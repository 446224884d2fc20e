#include "eddyid/cg_assim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace eddyid {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Regularized inverse of an SPD matrix: LLT with an escalating ridge,
// eigenvalue floor as the last resort.
Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& A, int* interventions) {
  const int n = static_cast<int>(A.rows());
  double ridge = 0.0;
  const double scale = std::max(A.trace() / n, 1e-300);
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::MatrixXd M = A;
    if (ridge > 0) M.diagonal().array() += ridge;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() == Eigen::Success)
      return llt.solve(Eigen::MatrixXd::Identity(n, n));
    if (interventions) ++*interventions;
    ridge = ridge == 0.0 ? 1e-12 * scale : ridge * 100.0;
  }
  // Eigenvalue floor at 1e-12 of the largest eigenvalue.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("spd_inverse: eigendecomposition failed");
  const double floor = 1e-12 * std::max(es.eigenvalues().maxCoeff(), 1e-300);
  Eigen::VectorXd inv_ev = es.eigenvalues().cwiseMax(floor).cwiseInverse();
  return es.eigenvectors() * inv_ev.asDiagonal() * es.eigenvectors().transpose();
}

void floor_spd(Eigen::MatrixXd& R, int* interventions) {
  R = 0.5 * (R + R.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() == Eigen::Success) return;
  if (interventions) ++*interventions;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R);
  const double floor = 1e-12 * std::max(es.eigenvalues().maxCoeff(), 1e-300);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
  R = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

Eigen::RowVectorXd CGModel::ocean_u_row(const Vec2& x) const {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(2 * n_pairs());
  const auto& pairs = modes->pairs();
  for (int p = 0; p < n_pairs(); ++p) {
    const Wavenumber& k = modes->mode(pairs[p].first);
    const double phase = -kTwoPi * (k.k1 * x.x() + k.k2 * x.y()) / domain_size;
    const Complex c = std::polar(1.0, phase) * mult_u(k, domain_size);
    row(2 * p) = 2.0 * c.real();
    row(2 * p + 1) = -2.0 * c.imag();
  }
  return row;
}

Eigen::RowVectorXd CGModel::ocean_v_row(const Vec2& x) const {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(2 * n_pairs());
  const auto& pairs = modes->pairs();
  for (int p = 0; p < n_pairs(); ++p) {
    const Wavenumber& k = modes->mode(pairs[p].first);
    const double phase = -kTwoPi * (k.k1 * x.x() + k.k2 * x.y()) / domain_size;
    const Complex c = std::polar(1.0, phase) * mult_v(k, domain_size);
    row(2 * p) = 2.0 * c.real();
    row(2 * p + 1) = -2.0 * c.imag();
  }
  return row;
}

Eigen::RowVectorXd CGModel::ocean_vorticity_row(const Vec2& x) const {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(2 * n_pairs());
  const auto& pairs = modes->pairs();
  for (int p = 0; p < n_pairs(); ++p) {
    const Wavenumber& k = modes->mode(pairs[p].first);
    const double phase = -kTwoPi * (k.k1 * x.x() + k.k2 * x.y()) / domain_size;
    const Complex c = std::polar(1.0, phase) * mult_vorticity(k, domain_size);
    row(2 * p) = 2.0 * c.real();
    row(2 * p + 1) = -2.0 * c.imag();
  }
  return row;
}

Eigen::VectorXd CGModel::bb_diag() const {
  Eigen::VectorXd bb(dim_y());
  for (int f = 0; f < n_floes; ++f) {
    bb(3 * f + 0) = floe_vel_noise * floe_vel_noise;
    bb(3 * f + 1) = floe_vel_noise * floe_vel_noise;
    bb(3 * f + 2) = floe_ang_noise * floe_ang_noise;
  }
  const auto& pairs = modes->pairs();
  for (int p = 0; p < n_pairs(); ++p) {
    const double sigma = params[pairs[p].first].sigma;
    // Complex noise (xi1 + i xi2)/sqrt(2): each real component gets sigma^2/2.
    bb(ocean_offset() + 2 * p) = sigma * sigma / 2.0;
    bb(ocean_offset() + 2 * p + 1) = sigma * sigma / 2.0;
  }
  return bb;
}

Eigen::VectorXd CGModel::BB_diag() const {
  // Discrete observation noise mapped to an equivalent continuous intensity.
  Eigen::VectorXd BB(dim_x());
  for (int f = 0; f < n_floes; ++f) {
    BB(3 * f + 0) = obs_noise_km * obs_noise_km / dt_obs;
    BB(3 * f + 1) = obs_noise_km * obs_noise_km / dt_obs;
    BB(3 * f + 2) = obs_noise_rad * obs_noise_rad / dt_obs;
  }
  return BB;
}

SpectralOceanState CGModel::ocean_state(const Eigen::VectorXd& y,
                                        double time) const {
  SpectralOceanState state(modes, domain_size, time);
  const auto& pairs = modes->pairs();
  for (int p = 0; p < n_pairs(); ++p) {
    const Complex c{y(ocean_offset() + 2 * p), y(ocean_offset() + 2 * p + 1)};
    state.coeffs[pairs[p].first] = c;
    state.coeffs[pairs[p].second] = std::conj(c);
  }
  return state;
}

Eigen::VectorXd CGModel::ocean_block(const SpectralOceanState& state) const {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(2 * n_pairs());
  const auto& pairs = modes->pairs();
  for (int p = 0; p < n_pairs(); ++p) {
    y(2 * p) = state.coeffs[pairs[p].first].real();
    y(2 * p + 1) = state.coeffs[pairs[p].first].imag();
  }
  return y;
}

void CGModel::prior(const SpectrumConfig& spectrum,
                    const std::vector<Observation>& initial_obs,
                    Eigen::VectorXd& mu0, Eigen::MatrixXd& R0) const {
  const int ny = dim_y();
  mu0 = Eigen::VectorXd::Zero(ny);
  Eigen::VectorXd var = Eigen::VectorXd::Zero(ny);
  const auto& pairs = modes->pairs();
  Eigen::VectorXd ocean_mu(2 * n_pairs());
  for (int p = 0; p < n_pairs(); ++p) {
    const auto& s = spectrum.stats[pairs[p].first];
    ocean_mu(2 * p) = s.mean.real();
    ocean_mu(2 * p + 1) = s.mean.imag();
    var(ocean_offset() + 2 * p) = s.variance / 2.0;
    var(ocean_offset() + 2 * p + 1) = s.variance / 2.0;
  }
  mu0.segment(ocean_offset(), 2 * n_pairs()) = ocean_mu;
  const double var_u = spectrum.velocity_component_variance(domain_size, 0);
  const double var_v = spectrum.velocity_component_variance(domain_size, 1);
  const double var_w = spectrum.vorticity_variance(domain_size) / 4.0;
  for (int f = 0; f < n_floes; ++f) {
    const Vec2 x = initial_obs[f].x;
    mu0(3 * f + 0) = ocean_u_row(x).dot(ocean_mu);
    mu0(3 * f + 1) = ocean_v_row(x).dot(ocean_mu);
    mu0(3 * f + 2) = ocean_vorticity_row(x).dot(ocean_mu) / 2.0;
    var(3 * f + 0) = var_u;
    var(3 * f + 1) = var_v;
    var(3 * f + 2) = var_w;
  }
  R0 = var.asDiagonal();
}

CGMatrices build_cg_matrices(const CGModel& model,
                             const std::vector<Observation>& obs,
                             const std::vector<double>& s_trans,
                             const std::vector<double>& s_rot) {
  if (static_cast<int>(obs.size()) != model.n_floes)
    throw std::invalid_argument("build_cg_matrices: observation count mismatch");
  const int ny = model.dim_y();
  const int off = model.ocean_offset();
  CGMatrices m;
  m.a0 = Eigen::VectorXd::Zero(ny);
  m.a1 = Eigen::MatrixXd::Zero(ny, ny);
  m.bb = model.bb_diag();
  m.BB = model.BB_diag();

  const double beta = model.phys.beta_per_km();
  for (int f = 0; f < model.n_floes; ++f) {
    const double st = beta * s_trans[f];
    const double sr = beta * s_rot[f];
    const Vec2 x = obs[f].x;
    m.a1(3 * f + 0, 3 * f + 0) = -st;
    m.a1(3 * f + 1, 3 * f + 1) = -st;
    m.a1(3 * f + 2, 3 * f + 2) = -sr;
    m.a1.block(3 * f + 0, off, 1, 2 * model.n_pairs()) =
        st * model.ocean_u_row(x);
    m.a1.block(3 * f + 1, off, 1, 2 * model.n_pairs()) =
        st * model.ocean_v_row(x);
    m.a1.block(3 * f + 2, off, 1, 2 * model.n_pairs()) =
        (sr / 2.0) * model.ocean_vorticity_row(x);
  }
  const auto& pairs = model.modes->pairs();
  for (int p = 0; p < model.n_pairs(); ++p) {
    const auto& prm = model.params[pairs[p].first];
    // du = (-a + i phi) u + f in real coordinates (Re, Im).
    m.a1(off + 2 * p, off + 2 * p) = -prm.a;
    m.a1(off + 2 * p, off + 2 * p + 1) = -prm.phi;
    m.a1(off + 2 * p + 1, off + 2 * p) = prm.phi;
    m.a1(off + 2 * p + 1, off + 2 * p + 1) = -prm.a;
    m.a0(off + 2 * p) = prm.f.real();
    m.a0(off + 2 * p + 1) = prm.f.imag();
  }
  return m;
}

FilterResult filter_forward(const CGModel& model, const ObservationSeries& obs,
                            const Eigen::VectorXd& mu0,
                            const Eigen::MatrixXd& R0, double dt_inner) {
  const int ny = model.dim_y();
  const int nx = model.dim_x();
  if (mu0.size() != ny || R0.rows() != ny)
    throw std::invalid_argument("filter_forward: prior dimension mismatch");
  if (obs.times.size() < 2)
    throw std::invalid_argument("filter_forward: need at least two observations");
  const double dt_obs = obs.dt_obs;
  const int n_sub = std::max(1, static_cast<int>(std::llround(dt_obs / dt_inner)));
  const double dt = dt_obs / n_sub;
  const double L = model.domain_size;

  FilterResult out;
  out.dt_inner = dt;
  out.n_inner_per_obs = n_sub;
  out.obs_times = obs.times;

  Eigen::VectorXd mu = mu0;
  Eigen::MatrixXd R = R0;
  out.mu.push_back(mu);
  out.R.push_back(R);
  out.inner_times.push_back(obs.times[0]);
  out.mu_inner.push_back(mu);

  const Eigen::VectorXd BB = model.BB_diag();
  const Eigen::VectorXd BBinv = BB.cwiseInverse();

  const std::size_t n_steps = obs.times.size() - 1;
  for (std::size_t j = 0; j < n_steps; ++j) {
    const auto& obs_j = obs.obs[j];
    const auto& obs_n = obs.obs[j + 1];
    // dX/dt from first-order differences (minimum image for positions).
    Eigen::VectorXd xdot(nx);
    std::vector<double> s_trans(model.n_floes), s_rot(model.n_floes);
    for (int f = 0; f < model.n_floes; ++f) {
      const Vec2 dxy = min_image(obs_n[f].x - obs_j[f].x, L) / dt_obs;
      const double dom = (obs_n[f].Omega - obs_j[f].Omega) / dt_obs;
      xdot(3 * f + 0) = dxy.x();
      xdot(3 * f + 1) = dxy.y();
      xdot(3 * f + 2) = dom;
      if (model.fixed_drag_speed) {
        s_trans[f] = *model.fixed_drag_speed;
        s_rot[f] = *model.fixed_drag_speed;
      } else {
        // Frozen relative speeds: observed finite-difference motion minus the
        // filter-mean ocean value at the observed position.
        const Eigen::VectorXd ocean_mu = mu.tail(2 * model.n_pairs());
        const Vec2 uo(model.ocean_u_row(obs_j[f].x).dot(ocean_mu),
                      model.ocean_v_row(obs_j[f].x).dot(ocean_mu));
        const double zo = model.ocean_vorticity_row(obs_j[f].x).dot(ocean_mu);
        s_trans[f] = (uo - dxy).norm();
        s_rot[f] = std::abs(zo / 2.0 - dom);
      }
    }
    const CGMatrices cg = build_cg_matrices(model, obs_j, s_trans, s_rot);
    out.obs_used.push_back(obs_j);
    out.s_trans.push_back(s_trans);
    out.s_rot.push_back(s_rot);

    for (int s = 0; s < n_sub; ++s) {
      // Gain K = R A1^T (BB^*)^{-1}; A1 selects the first nx components.
      const Eigen::MatrixXd K = R.leftCols(nx) * BBinv.asDiagonal();
      const Eigen::VectorXd innov = xdot - mu.head(nx);
      const Eigen::MatrixXd A = cg.a1 * R;
      // All increments are evaluated at the pre-step (mu, R).
      const Eigen::MatrixXd KR = K * R.topRows(nx);
      mu += dt * (cg.a0 + cg.a1 * mu) + dt * (K * innov);
      R += dt * (A + A.transpose());
      R.diagonal() += dt * cg.bb;
      R -= dt * KR;
      R = 0.5 * (R + R.transpose()).eval();
      if (!R.allFinite())
        throw std::runtime_error("filter_forward: covariance diverged at t=" +
                                 std::to_string(obs.times[j] + (s + 1) * dt));
      out.inner_times.push_back(obs.times[j] + (s + 1) * dt);
      out.mu_inner.push_back(mu);
    }
    floor_spd(R, &out.conditioning_interventions);
    out.mu.push_back(mu);
    out.R.push_back(R);
  }
  return out;
}

namespace {

// Per-assimilation-step operators for the backward passes. The drift of both
// the smoother and the sampling equation is handled implicitly, so one LU per
// step is shared by the smoother recursion and all samples.
struct BackwardStep {
  Eigen::MatrixXd M;  // (I + dt (a1 + G))^{-1}
  Eigen::MatrixXd G;  // bb R_f^{-1}
  Eigen::VectorXd a0;
  Eigen::VectorXd bb;
};

BackwardStep make_backward_step(const CGModel& model, const FilterResult& f,
                                std::size_t j, double dt, int* interventions) {
  const CGMatrices cg =
      build_cg_matrices(model, f.obs_used[j], f.s_trans[j], f.s_rot[j]);
  BackwardStep step;
  step.G = cg.bb.asDiagonal() * spd_inverse(f.R[j], interventions);
  const int ny = model.dim_y();
  step.M = (Eigen::MatrixXd::Identity(ny, ny) + dt * (cg.a1 + step.G))
               .partialPivLu()
               .inverse();
  step.a0 = cg.a0;
  step.bb = cg.bb;
  return step;
}

}  // namespace

SmootherResult smoother_backward(const CGModel& model,
                                 const FilterResult& filter,
                                 bool with_covariance) {
  const std::size_t n_obs = filter.obs_times.size();
  const int n_sub = filter.n_inner_per_obs;
  const double dt = filter.dt_inner;
  SmootherResult out;
  out.times = filter.obs_times;
  out.mu.resize(n_obs);
  if (with_covariance) out.R.resize(n_obs);

  Eigen::VectorXd mu = filter.mu.back();
  Eigen::MatrixXd R = filter.R.back();
  out.mu[n_obs - 1] = mu;
  if (with_covariance) out.R[n_obs - 1] = R;
  int interventions = 0;
  for (std::size_t j = n_obs - 1; j-- > 0;) {
    const BackwardStep step =
        make_backward_step(model, filter, j, dt, &interventions);
    for (int s = n_sub - 1; s >= 0; --s) {
      const Eigen::VectorXd& muf = filter.mu_inner[j * n_sub + s];
      mu = step.M * (mu + dt * (step.G * muf - step.a0));
      if (with_covariance) {
        Eigen::MatrixXd inner = R;
        inner.diagonal() += dt * step.bb;
        R = step.M * inner * step.M.transpose();
        R = 0.5 * (R + R.transpose()).eval();
      }
    }
    out.mu[j] = mu;
    if (with_covariance) out.R[j] = R;
  }
  return out;
}

std::vector<PosteriorSample> sample_backward(const CGModel& model,
                                             const FilterResult& filter,
                                             int n_samples,
                                             std::uint64_t master_seed,
                                             int record_stride, int n_workers) {
  if (n_samples < 1)
    throw std::invalid_argument("sample_backward: n_samples >= 1");
  const std::size_t n_obs = filter.obs_times.size();
  const int n_sub = filter.n_inner_per_obs;
  const double dt = filter.dt_inner;
  const int ny = model.dim_y();

  // Terminal draw from N(mu_f(T), R_f(T)).
  Eigen::MatrixXd chol;
  {
    Eigen::MatrixXd RT = filter.R.back();
    Eigen::LLT<Eigen::MatrixXd> llt(RT);
    if (llt.info() != Eigen::Success) {
      int dummy = 0;
      floor_spd(RT, &dummy);
      llt.compute(RT);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("sample_backward: terminal covariance not PSD");
    }
    chol = llt.matrixL();
  }

  std::vector<PosteriorSample> samples(n_samples);
  std::vector<Rng> rngs;
  std::vector<Eigen::VectorXd> y(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    samples[i].sample_id = i;
    samples[i].seed = derive_seed(master_seed, "sample", i);
    rngs.emplace_back(samples[i].seed);
    Eigen::VectorXd xi(ny);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int d = 0; d < ny; ++d) xi(d) = normal(rngs[i]);
    y[i] = filter.mu.back() + chol * xi;
  }
  auto record = [&](std::size_t j) {
    for (int i = 0; i < n_samples; ++i) {
      samples[i].times.push_back(filter.obs_times[j]);
      samples[i].y.push_back(y[i]);
    }
  };
  auto should_record = [&](std::size_t j) {
    return j % record_stride == 0 || j == n_obs - 1;
  };
  if (should_record(n_obs - 1)) record(n_obs - 1);

  int interventions = 0;
  for (std::size_t j = n_obs - 1; j-- > 0;) {
    const BackwardStep step =
        make_backward_step(model, filter, j, dt, &interventions);
    // Shared drift offsets for each inner substep of this interval.
    std::vector<Eigen::VectorXd> c(n_sub);
    for (int s = 0; s < n_sub; ++s)
      c[s] = dt * (step.G * filter.mu_inner[j * n_sub + s] - step.a0);
    const Eigen::VectorXd noise_sd = (dt * step.bb.array()).sqrt().matrix();

    auto advance = [&](int begin, int end) {
      std::normal_distribution<double> normal(0.0, 1.0);
      Eigen::VectorXd xi(ny);
      for (int i = begin; i < end; ++i) {
        for (int s = n_sub - 1; s >= 0; --s) {
          for (int d = 0; d < ny; ++d) xi(d) = normal(rngs[i]);
          y[i] = step.M * (y[i] + c[s] + noise_sd.cwiseProduct(xi));
        }
      }
    };
    const int workers = std::clamp(n_workers, 1, n_samples);
    if (workers == 1) {
      advance(0, n_samples);
    } else {
      std::vector<std::thread> pool;
      const int chunk = (n_samples + workers - 1) / workers;
      for (int w = 0; w < workers; ++w) {
        const int b = w * chunk;
        const int e = std::min(n_samples, b + chunk);
        if (b < e) pool.emplace_back(advance, b, e);
      }
      for (auto& t : pool) t.join();
    }
    if (should_record(j)) record(j);
  }
  for (auto& s : samples) {
    std::reverse(s.times.begin(), s.times.end());
    std::reverse(s.y.begin(), s.y.end());
  }
  return samples;
}

}  // namespace eddyid
