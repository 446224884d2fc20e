#include "eddyid/spectral_ocean.hpp"

#include <fftw3.h>

#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace eddyid {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

OUModeParams calibrate(const EquilibriumStats& stats) {
  if (!(stats.t_corr.real() > 0.0))
    throw std::invalid_argument("calibrate: Re(t_corr) must be positive");
  if (stats.variance < 0.0)
    throw std::invalid_argument("calibrate: variance must be non-negative");
  const Complex inv_t = 1.0 / stats.t_corr;
  OUModeParams p;
  p.a = inv_t.real();
  p.phi = -inv_t.imag();
  p.f = stats.mean * inv_t;
  p.sigma = std::sqrt(2.0 * stats.variance * inv_t.real());
  return p;
}

EquilibriumStats equilibrium_stats(const OUModeParams& params) {
  if (!(params.a > 0.0))
    throw std::invalid_argument("equilibrium_stats: damping a must be positive");
  const Complex denom(params.a, -params.phi);
  EquilibriumStats s;
  s.mean = params.f / denom;
  s.variance = params.sigma * params.sigma / (2.0 * params.a);
  s.t_corr = 1.0 / denom;
  return s;
}

ModeSet::ModeSet(std::vector<Wavenumber> modes) : modes_(std::move(modes)) {
  for (std::size_t i = 0; i < modes_.size(); ++i) {
    const auto& k = modes_[i];
    if (k.k1 == 0 && k.k2 == 0)
      throw std::invalid_argument("ModeSet: (0,0) is not a retained mode");
    if (!index_.emplace(k, i).second)
      throw std::invalid_argument("ModeSet: duplicate mode");
    max_component_ = std::max({max_component_, std::abs(k.k1), std::abs(k.k2)});
  }
  for (std::size_t i = 0; i < modes_.size(); ++i) {
    const auto& k = modes_[i];
    auto it = index_.find(-k);
    if (it == index_.end())
      throw std::invalid_argument("ModeSet: retained set not symmetric");
    const bool primary = k.k1 > 0 || (k.k1 == 0 && k.k2 > 0);
    if (primary) pairs_.emplace_back(i, it->second);
  }
}

ModeSet ModeSet::square(int range) {
  if (range < 1) throw std::invalid_argument("ModeSet::square: range >= 1");
  std::vector<Wavenumber> modes;
  for (int k1 = -range; k1 <= range; ++k1)
    for (int k2 = -range; k2 <= range; ++k2)
      if (k1 != 0 || k2 != 0) modes.push_back({k1, k2});
  return ModeSet(std::move(modes));
}

std::size_t ModeSet::index(const Wavenumber& k) const {
  auto it = index_.find(k);
  if (it == index_.end())
    throw std::out_of_range("ModeSet: mode not retained");
  return it->second;
}

bool ModeSet::contains(const Wavenumber& k) const {
  return index_.count(k) > 0;
}

std::vector<OUModeParams> SpectrumConfig::params() const {
  std::vector<OUModeParams> out;
  out.reserve(stats.size());
  for (const auto& s : stats) out.push_back(calibrate(s));
  return out;
}

SpectrumConfig SpectrumConfig::synthetic(std::shared_ptr<const ModeSet> modes,
                                         double domain_size,
                                         double target_velocity_std,
                                         double tcorr0_days) {
  SpectrumConfig cfg;
  cfg.modes = modes;
  cfg.stats.resize(modes->size());
  // Variance ~ |k|^-4, scaled so Var(u component) hits the target.
  double raw_var_u = 0.0;
  for (const auto& k : modes->modes()) {
    const double vk = std::pow(k.norm(), -4.0);
    raw_var_u += vk * std::pow(kTwoPi * k.k2 / domain_size, 2);
  }
  const double scale =
      target_velocity_std * target_velocity_std / raw_var_u;
  for (std::size_t i = 0; i < modes->size(); ++i) {
    const auto& k = modes->mode(i);
    EquilibriumStats s;
    s.mean = Complex{0.0, 0.0};
    s.variance = scale * std::pow(k.norm(), -4.0);
    s.t_corr = Complex{tcorr0_days / k.norm(), 0.0};
    cfg.stats[i] = s;
  }
  return cfg;
}

double SpectrumConfig::velocity_component_variance(double domain_size,
                                                   int component) const {
  double var = 0.0;
  for (std::size_t i = 0; i < modes->size(); ++i) {
    const auto& k = modes->mode(i);
    const int kc = component == 0 ? k.k2 : k.k1;
    var += stats[i].variance * std::pow(kTwoPi * kc / domain_size, 2);
  }
  return var;
}

double SpectrumConfig::vorticity_variance(double domain_size) const {
  double var = 0.0;
  for (std::size_t i = 0; i < modes->size(); ++i) {
    const auto& k = modes->mode(i);
    var += stats[i].variance * std::pow(kTwoPi * k.norm() / domain_size, 4);
  }
  return var;
}

void SpectrumConfig::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["format"] = "eddyid-spectrum";
  j["version"] = 1;
  auto& arr = j["modes"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < modes->size(); ++i) {
    const auto& k = modes->mode(i);
    const auto& s = stats[i];
    arr.push_back({{"k1", k.k1},
                   {"k2", k.k2},
                   {"mean_re", s.mean.real()},
                   {"mean_im", s.mean.imag()},
                   {"variance", s.variance},
                   {"tcorr_re", s.t_corr.real()},
                   {"tcorr_im", s.t_corr.imag()}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

SpectrumConfig SpectrumConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != "eddyid-spectrum")
    throw std::runtime_error("not a spectrum file: " + path.string());
  std::vector<Wavenumber> modes;
  std::vector<EquilibriumStats> stats;
  for (const auto& m : j.at("modes")) {
    modes.push_back({m.at("k1").get<int>(), m.at("k2").get<int>()});
    EquilibriumStats s;
    s.mean = Complex{m.at("mean_re").get<double>(), m.at("mean_im").get<double>()};
    s.variance = m.at("variance").get<double>();
    s.t_corr = Complex{m.at("tcorr_re").get<double>(), m.at("tcorr_im").get<double>()};
    stats.push_back(s);
  }
  SpectrumConfig cfg;
  cfg.modes = std::make_shared<ModeSet>(std::move(modes));
  cfg.stats = std::move(stats);
  return cfg;
}

Complex SpectralOceanState::coeff(const Wavenumber& k) const {
  return modes->contains(k) ? coeffs[modes->index(k)] : Complex{0.0, 0.0};
}

void SpectralOceanState::enforce_conjugate_symmetry() {
  for (const auto& [i, j] : modes->pairs()) coeffs[j] = std::conj(coeffs[i]);
}

double SpectralOceanState::max_symmetry_violation() const {
  double worst = 0.0;
  for (const auto& [i, j] : modes->pairs())
    worst = std::max(worst, std::abs(coeffs[j] - std::conj(coeffs[i])));
  return worst;
}

SpectralOceanState equilibrium_draw(const SpectrumConfig& spectrum,
                                    double domain_size, Rng& rng) {
  SpectralOceanState state(spectrum.modes, domain_size);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& [i, j] : spectrum.modes->pairs()) {
    const auto& s = spectrum.stats[i];
    const double sd = std::sqrt(s.variance / 2.0);
    state.coeffs[i] = s.mean + Complex{sd * normal(rng), sd * normal(rng)};
    state.coeffs[j] = std::conj(state.coeffs[i]);
  }
  return state;
}

SpectralOceanState step_ou(const SpectralOceanState& state,
                           const std::vector<OUModeParams>& params, double dt,
                           Rng& rng, OUScheme scheme) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_ou: dt must be positive");
  if (params.size() != state.modes->size())
    throw std::invalid_argument("step_ou: parameter count mismatch");
  SpectralOceanState next = state;
  next.time += dt;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& [i, j] : state.modes->pairs()) {
    const auto& p = params[i];
    const Complex u = state.coeffs[i];
    const Complex lambda(-p.a, p.phi);
    Complex out;
    if (scheme == OUScheme::EulerMaruyama) {
      // dW = (xi1 + i xi2) / sqrt(2) with xi ~ N(0, dt)
      const Complex noise{normal(rng) * std::sqrt(dt / 2.0),
                          normal(rng) * std::sqrt(dt / 2.0)};
      out = u + dt * (lambda * u + p.f) + p.sigma * noise;
    } else {
      const Complex mean = p.f / (-lambda);
      const double var_eq = p.sigma * p.sigma / (2.0 * p.a);
      const double sd = std::sqrt(var_eq * (1.0 - std::exp(-2.0 * p.a * dt)) / 2.0);
      const Complex noise{sd * normal(rng), sd * normal(rng)};
      out = mean + std::exp(lambda * dt) * (u - mean) + noise;
    }
    next.coeffs[i] = out;
    next.coeffs[j] = std::conj(out);
  }
  return next;
}

Complex mult_u(const Wavenumber& k, double L) {
  return Complex{0.0, kTwoPi * k.k2 / L};
}
Complex mult_v(const Wavenumber& k, double L) {
  return Complex{0.0, -kTwoPi * k.k1 / L};
}
namespace {
// d/dx of exp(-2 pi i (k.x) / L) multiplies by -2 pi i k1 / L.
Complex ddx(const Wavenumber& k, double L) {
  return Complex{0.0, -kTwoPi * k.k1 / L};
}
Complex ddy(const Wavenumber& k, double L) {
  return Complex{0.0, -kTwoPi * k.k2 / L};
}
}  // namespace
Complex mult_ux(const Wavenumber& k, double L) { return mult_u(k, L) * ddx(k, L); }
Complex mult_uy(const Wavenumber& k, double L) { return mult_u(k, L) * ddy(k, L); }
Complex mult_vx(const Wavenumber& k, double L) { return mult_v(k, L) * ddx(k, L); }
Complex mult_vy(const Wavenumber& k, double L) { return mult_v(k, L) * ddy(k, L); }
Complex mult_vorticity(const Wavenumber& k, double L) {
  // curl = dv/dx - du/dy; direct differentiation of the velocity expansion
  // gives the negative square factor (checked against finite differences).
  const double kk = kTwoPi * k.norm() / L;
  return Complex{-kk * kk, 0.0};
}

Vec2 velocity_at(const SpectralOceanState& state, const Vec2& x) {
  const double L = state.domain_size;
  Complex u{0, 0}, v{0, 0};
  for (std::size_t i = 0; i < state.modes->size(); ++i) {
    const auto& k = state.modes->mode(i);
    const double phase = -kTwoPi * (k.k1 * x.x() + k.k2 * x.y()) / L;
    const Complex e = std::polar(1.0, phase) * state.coeffs[i];
    u += e * mult_u(k, L);
    v += e * mult_v(k, L);
  }
  return Vec2(u.real(), v.real());
}

double vorticity_at(const SpectralOceanState& state, const Vec2& x) {
  const double L = state.domain_size;
  Complex z{0, 0};
  for (std::size_t i = 0; i < state.modes->size(); ++i) {
    const auto& k = state.modes->mode(i);
    const double phase = -kTwoPi * (k.k1 * x.x() + k.k2 * x.y()) / L;
    z += std::polar(1.0, phase) * state.coeffs[i] * mult_vorticity(k, L);
  }
  return z.real();
}

namespace {
std::mutex fftw_mutex;  // FFTW planning is not thread-safe
}

std::vector<double> field_grid(
    const SpectralOceanState& state, int n,
    const std::function<Complex(const Wavenumber&)>& multiplier) {
  if (n < 2 * state.modes->max_component() + 2)
    throw std::invalid_argument(
        "field_grid: grid too small, retained modes would alias");
  std::vector<Complex> in(static_cast<std::size_t>(n) * n, Complex{0, 0});
  std::vector<Complex> out(in.size());
  for (std::size_t i = 0; i < state.modes->size(); ++i) {
    const auto& k = state.modes->mode(i);
    const int i1 = (k.k1 % n + n) % n;
    const int i2 = (k.k2 % n + n) % n;
    in[static_cast<std::size_t>(i1) * n + i2] +=
        state.coeffs[i] * multiplier(k);
  }
  {
    std::lock_guard<std::mutex> lock(fftw_mutex);
    fftw_plan plan = fftw_plan_dft_2d(
        n, n, reinterpret_cast<fftw_complex*>(in.data()),
        reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD,
        FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
  }
  std::vector<double> field(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) field[i] = out[i].real();
  return field;
}

VelocityGrid velocity_grid(const SpectralOceanState& state, int n) {
  const double L = state.domain_size;
  VelocityGrid g;
  g.n = n;
  g.spacing = L / n;
  g.u = field_grid(state, n, [L](const Wavenumber& k) { return mult_u(k, L); });
  g.v = field_grid(state, n, [L](const Wavenumber& k) { return mult_v(k, L); });
  return g;
}

void save_snapshots(const std::filesystem::path& path,
                    const std::vector<SpectralOceanState>& states) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const char magic[8] = {'E', 'D', 'Y', 'S', 'N', 'A', 'P', '1'};
  out.write(magic, 8);
  const std::uint64_t count = states.size();
  out.write(reinterpret_cast<const char*>(&count), 8);
  for (const auto& s : states) {
    out.write(reinterpret_cast<const char*>(&s.time), 8);
    out.write(reinterpret_cast<const char*>(&s.domain_size), 8);
    const std::uint64_t nm = s.modes->size();
    out.write(reinterpret_cast<const char*>(&nm), 8);
    for (std::size_t i = 0; i < nm; ++i) {
      const auto& k = s.modes->mode(i);
      const std::int32_t k1 = k.k1, k2 = k.k2;
      const double re = s.coeffs[i].real(), im = s.coeffs[i].imag();
      out.write(reinterpret_cast<const char*>(&k1), 4);
      out.write(reinterpret_cast<const char*>(&k2), 4);
      out.write(reinterpret_cast<const char*>(&re), 8);
      out.write(reinterpret_cast<const char*>(&im), 8);
    }
  }
}

std::vector<SpectralOceanState> load_snapshots(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (std::string(magic, 8) != "EDYSNAP1")
    throw std::runtime_error("not a snapshot file: " + path.string());
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  std::vector<SpectralOceanState> states;
  std::shared_ptr<const ModeSet> shared_modes;
  for (std::uint64_t s = 0; s < count; ++s) {
    double time = 0, L = 0;
    std::uint64_t nm = 0;
    in.read(reinterpret_cast<char*>(&time), 8);
    in.read(reinterpret_cast<char*>(&L), 8);
    in.read(reinterpret_cast<char*>(&nm), 8);
    std::vector<Wavenumber> modes(nm);
    std::vector<Complex> coeffs(nm);
    for (std::uint64_t i = 0; i < nm; ++i) {
      std::int32_t k1 = 0, k2 = 0;
      double re = 0, im = 0;
      in.read(reinterpret_cast<char*>(&k1), 4);
      in.read(reinterpret_cast<char*>(&k2), 4);
      in.read(reinterpret_cast<char*>(&re), 8);
      in.read(reinterpret_cast<char*>(&im), 8);
      modes[i] = {k1, k2};
      coeffs[i] = Complex{re, im};
    }
    if (!shared_modes || shared_modes->modes() != modes)
      shared_modes = std::make_shared<ModeSet>(std::move(modes));
    SpectralOceanState state(shared_modes, L, time);
    state.coeffs = std::move(coeffs);
    states.push_back(std::move(state));
  }
  if (!in) throw std::runtime_error("truncated snapshot file: " + path.string());
  return states;
}

}  // namespace eddyid
