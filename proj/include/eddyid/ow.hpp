#pragma once

#include <optional>
#include <vector>

#include "eddyid/geometry.hpp"
#include "eddyid/spectral_ocean.hpp"

namespace eddyid {

struct OWField {
  int n = 0;
  double spacing = 0.0;      // km
  double domain_size = 0.0;  // km
  double time = 0.0;         // days
  std::vector<double> grid;  // row-major, index i*n + j for node x=(i,j)*h
  double sigma_ow = 0.0;     // std of the grid (or a climatological override)
  double threshold = 0.0;    // -0.2 * sigma_ow under the default criterion

  double value(int i, int j) const { return grid[std::size_t(i) * n + j]; }
  Vec2 position(int i, int j) const { return Vec2(i * spacing, j * spacing); }
};

// OW = s_n^2 + s_s^2 - omega^2 with all velocity derivatives computed
// spectrally. sigma_override fixes sigma_ow to a climatological value
// instead of the per-snapshot grid standard deviation.
OWField ow_field(const SpectralOceanState& state, int n,
                 std::optional<double> sigma_override = std::nullopt);

struct EddyCore {
  Vec2 position{0.0, 0.0};
  double ow_value = 0.0;
  int grid_i = 0, grid_j = 0;
  int boundary = -1;             // index into boundaries, -1 if none found
  bool flagged_no_boundary = false;
};

struct EddyDetection {
  double time = 0.0;
  double domain_size = 0.0;
  double sigma_ow = 0.0;
  double threshold = 0.0;
  std::vector<EddyCore> cores;
  std::vector<std::vector<Vec2>> boundaries;  // closed, unwrapped polygons
  std::vector<double> sizes;                  // km^2, aligned with boundaries
};

EddyDetection detect_eddies(const OWField& field);

// Closed level-set polygons on a periodic grid (marching squares with linear
// interpolation). Polygons are unwrapped across the seam; loops that wind
// around the torus are dropped. First vertex equals last vertex.
std::vector<std::vector<Vec2>> periodic_contours(const std::vector<double>& grid,
                                                 int n, double spacing,
                                                 double level);

double polygon_area(const std::vector<Vec2>& polygon);
bool point_in_polygon(const Vec2& p, const std::vector<Vec2>& polygon);

// Ensemble mean of the OW field together with the mean-fluctuation
// decomposition terms; expectations are sample means.
struct OWDecomposition {
  int n = 0;
  double spacing = 0.0;
  std::vector<double> mean_ow;     // E[OW(u)]
  std::vector<double> ow_of_mean;  // OW(mean velocity field)
  std::vector<double> e_uxux, e_uxvy, e_vyvy, e_vxuy;  // fluctuation moments

  std::vector<double> decomposition() const;
  // Valid when every sample is incompressible (u_x = -v_y).
  std::vector<double> decomposition_incompressible() const;
};

OWDecomposition expected_ow(const std::vector<SpectralOceanState>& samples,
                            int n);

}  // namespace eddyid
