#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <utility>
#include <vector>

#include "eddyid/geometry.hpp"
#include "eddyid/rng.hpp"

namespace eddyid {

using Complex = std::complex<double>;

struct Wavenumber {
  int k1 = 0;
  int k2 = 0;
  auto operator<=>(const Wavenumber&) const = default;
  Wavenumber operator-() const { return {-k1, -k2}; }
  double norm() const { return std::sqrt(double(k1) * k1 + double(k2) * k2); }
};

// Equilibrium statistics of one Fourier mode: mean, variance E|u - m|^2 and
// (complex) decorrelation time with positive real part.
struct EquilibriumStats {
  Complex mean{0.0, 0.0};
  double variance = 0.0;
  Complex t_corr{1.0, 0.0};
};

// OU parameters for du = ((-a + i phi) u + f) dt + sigma dW.
struct OUModeParams {
  double a = 1.0;
  double phi = 0.0;
  Complex f{0.0, 0.0};
  double sigma = 0.0;
};

OUModeParams calibrate(const EquilibriumStats& stats);
EquilibriumStats equilibrium_stats(const OUModeParams& params);

// Symmetric set of retained wavenumbers; (0,0) is always excluded.
class ModeSet {
 public:
  explicit ModeSet(std::vector<Wavenumber> modes);
  static ModeSet square(int range);  // k in [-range, range]^2 \ {(0,0)}

  std::size_t size() const { return modes_.size(); }
  const Wavenumber& mode(std::size_t i) const { return modes_[i]; }
  const std::vector<Wavenumber>& modes() const { return modes_; }
  std::size_t index(const Wavenumber& k) const;
  bool contains(const Wavenumber& k) const;
  // Conjugate pairs (i, j) with mode(j) == -mode(i); i is the primary index.
  const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const {
    return pairs_;
  }
  int max_component() const { return max_component_; }

 private:
  std::vector<Wavenumber> modes_;
  std::map<Wavenumber, std::size_t> index_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  int max_component_ = 0;
};

// Per-mode equilibrium statistics; the calibration input for the OU spectrum.
struct SpectrumConfig {
  std::shared_ptr<const ModeSet> modes;
  std::vector<EquilibriumStats> stats;  // aligned with modes

  std::vector<OUModeParams> params() const;

  // Zero-mean synthetic spectrum with variance ~ |k|^-4, scaled so the
  // reconstructed velocity has the requested per-component standard
  // deviation, and decorrelation time tcorr0 / |k|.
  static SpectrumConfig synthetic(std::shared_ptr<const ModeSet> modes,
                                  double domain_size,
                                  double target_velocity_std,
                                  double tcorr0_days);

  // Equilibrium variance of one velocity component at a fixed point.
  double velocity_component_variance(double domain_size, int component) const;
  // Equilibrium variance of the vorticity at a fixed point.
  double vorticity_variance(double domain_size) const;

  void save(const std::filesystem::path& path) const;
  static SpectrumConfig load(const std::filesystem::path& path);
};

struct SpectralOceanState {
  std::shared_ptr<const ModeSet> modes;
  std::vector<Complex> coeffs;  // aligned with modes, conjugate-symmetric
  double domain_size = 400.0;   // km
  double time = 0.0;            // days

  SpectralOceanState() = default;
  SpectralOceanState(std::shared_ptr<const ModeSet> m, double L, double t = 0.0)
      : modes(std::move(m)), coeffs(modes->size(), Complex{0, 0}),
        domain_size(L), time(t) {}

  Complex coeff(const Wavenumber& k) const;
  void enforce_conjugate_symmetry();
  double max_symmetry_violation() const;
};

// Draw from the equilibrium distribution of the calibrated spectrum.
SpectralOceanState equilibrium_draw(const SpectrumConfig& spectrum,
                                    double domain_size, Rng& rng);

enum class OUScheme { EulerMaruyama, Exact };

SpectralOceanState step_ou(const SpectralOceanState& state,
                           const std::vector<OUModeParams>& params, double dt,
                           Rng& rng, OUScheme scheme = OUScheme::EulerMaruyama);

Vec2 velocity_at(const SpectralOceanState& state, const Vec2& x);
double vorticity_at(const SpectralOceanState& state, const Vec2& x);

struct VelocityGrid {
  int n = 0;
  double spacing = 0.0;       // km
  std::vector<double> u, v;   // row-major, index i*n + j for node (i, j)
};

// Fast evaluation on the uniform grid x_ij = (i, j) * L / n via FFT.
// Requires n >= 2 * max|k component| + 2 so no retained mode aliases.
VelocityGrid velocity_grid(const SpectralOceanState& state, int n);

// Inverse-FFT evaluation of sum_k multiplier(k) * u_k * exp(-2pi i k.x / L)
// on the n x n grid; returns the real part (imaginary residue checked small).
std::vector<double> field_grid(const SpectralOceanState& state, int n,
                               const std::function<Complex(const Wavenumber&)>&
                                   multiplier);

// Spectral multipliers for velocity components and derivatives.
Complex mult_u(const Wavenumber& k, double L);
Complex mult_v(const Wavenumber& k, double L);
Complex mult_ux(const Wavenumber& k, double L);
Complex mult_uy(const Wavenumber& k, double L);
Complex mult_vx(const Wavenumber& k, double L);
Complex mult_vy(const Wavenumber& k, double L);
Complex mult_vorticity(const Wavenumber& k, double L);

// Snapshot export/import: flat binary series of (k1, k2, re, im) records.
void save_snapshots(const std::filesystem::path& path,
                    const std::vector<SpectralOceanState>& states);
std::vector<SpectralOceanState> load_snapshots(
    const std::filesystem::path& path);

}  // namespace eddyid
