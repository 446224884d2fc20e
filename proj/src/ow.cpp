#include "eddyid/ow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace eddyid {

OWField ow_field(const SpectralOceanState& state, int n,
                 std::optional<double> sigma_override) {
  const double L = state.domain_size;
  const auto ux = field_grid(state, n, [L](const Wavenumber& k) { return mult_ux(k, L); });
  const auto uy = field_grid(state, n, [L](const Wavenumber& k) { return mult_uy(k, L); });
  const auto vx = field_grid(state, n, [L](const Wavenumber& k) { return mult_vx(k, L); });
  const auto vy = field_grid(state, n, [L](const Wavenumber& k) { return mult_vy(k, L); });

  OWField f;
  f.n = n;
  f.spacing = L / n;
  f.domain_size = L;
  f.time = state.time;
  f.grid.resize(ux.size());
  for (std::size_t i = 0; i < ux.size(); ++i) {
    const double sn = ux[i] - vy[i];
    const double ss = vx[i] + uy[i];
    const double w = vx[i] - uy[i];
    f.grid[i] = sn * sn + ss * ss - w * w;
  }
  if (sigma_override) {
    f.sigma_ow = *sigma_override;
  } else {
    double mean = 0.0;
    for (double v : f.grid) mean += v;
    mean /= f.grid.size();
    double var = 0.0;
    for (double v : f.grid) var += (v - mean) * (v - mean);
    f.sigma_ow = std::sqrt(var / f.grid.size());
  }
  f.threshold = -0.2 * f.sigma_ow;
  return f;
}

namespace {

// Edge identifiers on the periodic grid: type 0 is the edge from node (i,j)
// to (i+1,j) (along x), type 1 from (i,j) to (i,j+1) (along y).
inline long long edge_key(int type, int i, int j, int n) {
  return (static_cast<long long>(type) * n + i) * n + j;
}

struct Crossing {
  Vec2 point;  // base point in [0, L)^2
  bool exists = false;
};

}  // namespace

std::vector<std::vector<Vec2>> periodic_contours(const std::vector<double>& grid,
                                                 int n, double spacing,
                                                 double level) {
  const double L = n * spacing;
  auto at = [&](int i, int j) {
    return grid[std::size_t((i % n + n) % n) * n + ((j % n + n) % n)];
  };
  auto below = [&](int i, int j) { return at(i, j) < level; };

  // Interpolated crossing points for every edge that straddles the level.
  std::unordered_map<long long, Vec2> points;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double f0 = at(i, j);
      const double fx = at(i + 1, j);
      const double fy = at(i, j + 1);
      if ((f0 < level) != (fx < level)) {
        const double t = (level - f0) / (fx - f0);
        points[edge_key(0, i, j, n)] = Vec2((i + t) * spacing, j * spacing);
      }
      if ((f0 < level) != (fy < level)) {
        const double t = (level - f0) / (fy - f0);
        points[edge_key(1, i, j, n)] = Vec2(i * spacing, (j + t) * spacing);
      }
    }

  // Segments per cell; each connects two crossing edges of that cell.
  std::vector<std::pair<long long, long long>> segments;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const bool b0 = below(i, j);
      const bool b1 = below(i + 1, j);
      const bool b2 = below(i + 1, j + 1);
      const bool b3 = below(i, j + 1);
      const long long e0 = edge_key(0, i, j, n);                // c0-c1
      const long long e1 = edge_key(1, (i + 1) % n, j, n);      // c1-c2
      const long long e2 = edge_key(0, i, (j + 1) % n, n);      // c3-c2
      const long long e3 = edge_key(1, i, j, n);                // c0-c3
      const int idx = (b0 ? 1 : 0) | (b1 ? 2 : 0) | (b2 ? 4 : 0) | (b3 ? 8 : 0);
      switch (idx) {
        case 0: case 15: break;
        case 1: case 14: segments.emplace_back(e0, e3); break;
        case 2: case 13: segments.emplace_back(e0, e1); break;
        case 4: case 11: segments.emplace_back(e1, e2); break;
        case 8: case 7:  segments.emplace_back(e2, e3); break;
        case 3: case 12: segments.emplace_back(e1, e3); break;
        case 6: case 9:  segments.emplace_back(e0, e2); break;
        case 5: case 10: {
          // Saddle; resolve with the cell-center average.
          const double center =
              (at(i, j) + at(i + 1, j) + at(i + 1, j + 1) + at(i, j + 1)) / 4.0;
          const bool center_below = center < level;
          const bool diag_below = (idx == 5);  // c0 and c2 below
          if (center_below == diag_below) {
            segments.emplace_back(e0, e1);
            segments.emplace_back(e2, e3);
          } else {
            segments.emplace_back(e0, e3);
            segments.emplace_back(e1, e2);
          }
          break;
        }
      }
    }

  // Each crossing edge belongs to exactly two segments; chain them into loops.
  std::unordered_map<long long, std::vector<std::size_t>> edge_segments;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    edge_segments[segments[s].first].push_back(s);
    edge_segments[segments[s].second].push_back(s);
  }

  std::vector<std::vector<Vec2>> loops;
  std::vector<bool> used(segments.size(), false);
  for (std::size_t s0 = 0; s0 < segments.size(); ++s0) {
    if (used[s0]) continue;
    std::vector<Vec2> loop;
    long long start_edge = segments[s0].first;
    long long edge = start_edge;
    std::size_t seg = s0;
    Vec2 prev = points.at(edge);
    loop.push_back(prev);
    while (true) {
      used[seg] = true;
      const long long next_edge =
          segments[seg].first == edge ? segments[seg].second : segments[seg].first;
      // Unwrap: keep consecutive points within half a domain of each other.
      Vec2 p = points.at(next_edge);
      p = prev + min_image(p - prev, L);
      loop.push_back(p);
      prev = p;
      if (next_edge == start_edge) break;
      const auto& cands = edge_segments.at(next_edge);
      std::size_t next_seg = seg;
      for (std::size_t c : cands)
        if (c != seg) next_seg = c;
      if (next_seg == seg) break;  // dangling chain; should not happen
      seg = next_seg;
      edge = next_edge;
    }
    // Closed in the plane only if the loop returns with zero net displacement;
    // loops winding around the torus are not eddy boundaries.
    const Vec2 net = loop.back() - loop.front();
    if (net.norm() < L / 2.0) {
      loop.back() = loop.front();
      loops.push_back(std::move(loop));
    }
  }
  return loops;
}

double polygon_area(const std::vector<Vec2>& polygon) {
  double twice = 0.0;
  for (std::size_t i = 0; i + 1 < polygon.size(); ++i)
    twice += polygon[i].x() * polygon[i + 1].y() -
             polygon[i + 1].x() * polygon[i].y();
  return std::abs(twice) / 2.0;
}

bool point_in_polygon(const Vec2& p, const std::vector<Vec2>& polygon) {
  bool inside = false;
  for (std::size_t i = 0; i + 1 < polygon.size(); ++i) {
    const Vec2& a = polygon[i];
    const Vec2& b = polygon[i + 1];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x_cross =
          a.x() + (p.y() - a.y()) / (b.y() - a.y()) * (b.x() - a.x());
      if (p.x() < x_cross) inside = !inside;
    }
  }
  return inside;
}

EddyDetection detect_eddies(const OWField& field) {
  EddyDetection det;
  det.time = field.time;
  det.domain_size = field.domain_size;
  det.sigma_ow = field.sigma_ow;
  det.threshold = field.threshold;
  const int n = field.n;

  // Cores: strict local minima over the periodic 8-neighborhood, below the
  // threshold. Plateau ties break toward the lowest (row, col) index.
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double v = field.value(i, j);
      if (!(v < field.threshold)) continue;
      bool is_min = true;
      for (int di = -1; di <= 1 && is_min; ++di)
        for (int dj = -1; dj <= 1 && is_min; ++dj) {
          if (di == 0 && dj == 0) continue;
          const int ni = (i + di + n) % n;
          const int nj = (j + dj + n) % n;
          const double w = field.value(ni, nj);
          if (w < v || (w == v && std::make_pair(ni, nj) < std::make_pair(i, j)))
            is_min = false;
        }
      if (is_min) {
        EddyCore core;
        core.position = field.position(i, j);
        core.ow_value = v;
        core.grid_i = i;
        core.grid_j = j;
        det.cores.push_back(core);
      }
    }

  const auto contours =
      periodic_contours(field.grid, n, field.spacing, field.threshold);

  // Assign each core the smallest closed contour containing it (under
  // periodic shifts); keep only contours that contain a core.
  const double L = field.domain_size;
  std::vector<int> kept_index(contours.size(), -1);
  for (auto& core : det.cores) {
    int best = -1;
    double best_area = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < contours.size(); ++c) {
      bool contains = false;
      for (int sx = -1; sx <= 1 && !contains; ++sx)
        for (int sy = -1; sy <= 1 && !contains; ++sy)
          if (point_in_polygon(core.position + Vec2(sx * L, sy * L),
                               contours[c]))
            contains = true;
      if (contains) {
        const double area = polygon_area(contours[c]);
        if (area < best_area) {
          best_area = area;
          best = static_cast<int>(c);
        }
      }
    }
    if (best < 0) {
      core.flagged_no_boundary = true;
      continue;
    }
    if (kept_index[best] < 0) {
      kept_index[best] = static_cast<int>(det.boundaries.size());
      det.boundaries.push_back(contours[best]);
      det.sizes.push_back(best_area);
    }
    core.boundary = kept_index[best];
  }
  return det;
}

std::vector<double> OWDecomposition::decomposition() const {
  std::vector<double> out(ow_of_mean.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = ow_of_mean[i] + e_uxux[i] - 2.0 * e_uxvy[i] + e_vyvy[i] +
             4.0 * e_vxuy[i];
  return out;
}

std::vector<double> OWDecomposition::decomposition_incompressible() const {
  std::vector<double> out(ow_of_mean.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = ow_of_mean[i] + 4.0 * e_uxux[i] + 4.0 * e_vxuy[i];
  return out;
}

OWDecomposition expected_ow(const std::vector<SpectralOceanState>& samples,
                            int n) {
  if (samples.size() < 2)
    throw std::invalid_argument("expected_ow: need at least 2 samples");
  const double L = samples[0].domain_size;
  const std::size_t m = std::size_t(n) * n;
  OWDecomposition d;
  d.n = n;
  d.spacing = L / n;
  d.mean_ow.assign(m, 0.0);
  std::vector<double> s_ux(m, 0.0), s_uy(m, 0.0), s_vx(m, 0.0), s_vy(m, 0.0);
  std::vector<double> s_uxux(m, 0.0), s_uxvy(m, 0.0), s_vyvy(m, 0.0),
      s_vxuy(m, 0.0);
  for (const auto& state : samples) {
    if (state.domain_size != L)
      throw std::invalid_argument("expected_ow: mismatched domains");
    const auto ux = field_grid(state, n, [L](const Wavenumber& k) { return mult_ux(k, L); });
    const auto uy = field_grid(state, n, [L](const Wavenumber& k) { return mult_uy(k, L); });
    const auto vx = field_grid(state, n, [L](const Wavenumber& k) { return mult_vx(k, L); });
    const auto vy = field_grid(state, n, [L](const Wavenumber& k) { return mult_vy(k, L); });
    for (std::size_t i = 0; i < m; ++i) {
      const double sn = ux[i] - vy[i];
      const double ss = vx[i] + uy[i];
      const double w = vx[i] - uy[i];
      d.mean_ow[i] += sn * sn + ss * ss - w * w;
      s_ux[i] += ux[i];
      s_uy[i] += uy[i];
      s_vx[i] += vx[i];
      s_vy[i] += vy[i];
      s_uxux[i] += ux[i] * ux[i];
      s_uxvy[i] += ux[i] * vy[i];
      s_vyvy[i] += vy[i] * vy[i];
      s_vxuy[i] += vx[i] * uy[i];
    }
  }
  const double inv = 1.0 / samples.size();
  d.ow_of_mean.resize(m);
  d.e_uxux.resize(m);
  d.e_uxvy.resize(m);
  d.e_vyvy.resize(m);
  d.e_vxuy.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    d.mean_ow[i] *= inv;
    const double mux = s_ux[i] * inv, muy = s_uy[i] * inv;
    const double mvx = s_vx[i] * inv, mvy = s_vy[i] * inv;
    const double sn = mux - mvy;
    const double ss = mvx + muy;
    const double w = mvx - muy;
    d.ow_of_mean[i] = sn * sn + ss * ss - w * w;
    d.e_uxux[i] = s_uxux[i] * inv - mux * mux;
    d.e_uxvy[i] = s_uxvy[i] * inv - mux * mvy;
    d.e_vyvy[i] = s_vyvy[i] * inv - mvy * mvy;
    d.e_vxuy[i] = s_vxuy[i] * inv - mvx * muy;
  }
  return d;
}

}  // namespace eddyid
