#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "eddyid/rng.hpp"
#include "eddyid/stats.hpp"

using namespace eddyid;

namespace {

EddyDetection detection_at(double time, double L,
                           const std::vector<Vec2>& cores,
                           const std::vector<double>& areas = {}) {
  EddyDetection det;
  det.time = time;
  det.domain_size = L;
  det.sigma_ow = 1.0;
  det.threshold = -0.2;
  for (std::size_t k = 0; k < cores.size(); ++k) {
    EddyCore c;
    c.position = cores[k];
    c.ow_value = -1.0;
    if (k < areas.size() && areas[k] >= 0.0) {
      c.boundary = static_cast<int>(det.sizes.size());
      det.sizes.push_back(areas[k]);
      det.boundaries.emplace_back();
    } else if (k < areas.size()) {
      c.boundary = -1;
      c.flagged_no_boundary = true;
    } else {
      c.boundary = static_cast<int>(det.sizes.size());
      det.sizes.push_back(100.0);
      det.boundaries.emplace_back();
    }
    det.cores.push_back(c);
  }
  return det;
}

std::vector<EddyDetection> constant_series(double L, int n_times, int n_cores) {
  std::vector<EddyDetection> series;
  for (int t = 0; t < n_times; ++t) {
    std::vector<Vec2> cores;
    for (int c = 0; c < n_cores; ++c)
      cores.emplace_back(20.0 + 40.0 * c, 20.0 + 40.0 * c);
    series.push_back(detection_at(t, L, cores));
  }
  return series;
}

}  // namespace

TEST_CASE("ensemble_counts: hand-computed mean and population sd") {
  const double L = 400.0;
  // Two members: 3 eddies vs 5 eddies at every time.
  std::vector<std::vector<EddyDetection>> dets{constant_series(L, 4, 3),
                                               constant_series(L, 4, 5)};
  const CountStatistics c = ensemble_counts(dets);
  REQUIRE(c.times.size() == 4);
  REQUIRE(c.per_sample.size() == 2);
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(c.mean[t] == doctest::Approx(4.0));
    CHECK(c.sd[t] == doctest::Approx(1.0));  // population sd of {3, 5}
    CHECK(c.per_sample[0][t] == 3);
    CHECK(c.per_sample[1][t] == 5);
  }
}

TEST_CASE("ensemble_counts: identical members give zero sd") {
  const double L = 400.0;
  std::vector<std::vector<EddyDetection>> dets(5, constant_series(L, 3, 2));
  const CountStatistics c = ensemble_counts(dets);
  for (std::size_t t = 0; t < c.times.size(); ++t) {
    CHECK(c.mean[t] == doctest::Approx(2.0));
    CHECK(c.sd[t] == doctest::Approx(0.0));
  }
}

TEST_CASE("occurrence_probability: all, none, and a known fraction") {
  const double L = 400.0;
  const Vec2 query(100.0, 100.0);
  std::vector<EddyDetection> all, none, some;
  for (int s = 0; s < 100; ++s) {
    all.push_back(detection_at(0.0, L, {{101.0, 100.0}}));
    none.push_back(detection_at(0.0, L, {{300.0, 300.0}}));
    // 37 members have a core at the query, the rest far away.
    some.push_back(detection_at(
        0.0, L, {s < 37 ? Vec2(100.0, 102.0) : Vec2(250.0, 50.0)}));
  }
  const auto pa = occurrence_probability(all, query, 10.0);
  CHECK(pa.probability == doctest::Approx(1.0));
  CHECK(pa.n_hits == 100);
  CHECK(pa.stderr_ == doctest::Approx(0.0));
  const auto pn = occurrence_probability(none, query, 10.0);
  CHECK(pn.probability == doctest::Approx(0.0));
  const auto ps = occurrence_probability(some, query, 10.0);
  CHECK(ps.probability == doctest::Approx(0.37));
  CHECK(ps.n_samples == 100);
  CHECK(ps.stderr_ ==
        doctest::Approx(std::sqrt(0.37 * 0.63 / 100.0)).epsilon(1e-9));
}

TEST_CASE("occurrence_probability: monotone in the radius and periodic") {
  const double L = 400.0;
  const Vec2 query(2.0, 200.0);
  std::vector<EddyDetection> dets;
  for (int s = 0; s < 50; ++s) {
    // Half the members have a core just across the seam (6 km away), the
    // other half a core 20 km away.
    dets.push_back(s % 2 == 0 ? detection_at(0.0, L, {{396.0, 200.0}})
                              : detection_at(0.0, L, {{22.0, 200.0}}));
  }
  const double p_small = occurrence_probability(dets, query, 8.0).probability;
  const double p_large = occurrence_probability(dets, query, 25.0).probability;
  CHECK(p_small == doctest::Approx(0.5));  // seam distance is 6 km, not 394 km
  CHECK(p_large == doctest::Approx(1.0));
  CHECK(p_small <= p_large);
}

TEST_CASE("make_histogram: density integrates to one") {
  std::vector<double> values;
  Rng rng(23);
  std::normal_distribution<double> normal(10.0, 2.0);
  for (int i = 0; i < 500; ++i) values.push_back(normal(rng));
  const SampleHistogram h = make_histogram(values, 600);
  REQUIRE(h.density.size() + 1 == h.bin_edges.size());
  double integral = 0.0;
  for (std::size_t b = 0; b < h.density.size(); ++b)
    integral += h.density[b] * (h.bin_edges[b + 1] - h.bin_edges[b]);
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(h.n_present == 500);
  CHECK(h.n_samples == 600);
  CHECK(h.occurrence_fraction == doctest::Approx(500.0 / 600.0));
  CHECK(h.mean == doctest::Approx(10.0).epsilon(0.05));
  CHECK(h.sd == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("make_histogram: point mass stays well defined") {
  const SampleHistogram h = make_histogram(std::vector<double>(40, 30.0), 40);
  CHECK(h.mean == doctest::Approx(30.0));
  CHECK(h.sd == doctest::Approx(0.0));
  double integral = 0.0;
  for (std::size_t b = 0; b < h.density.size(); ++b)
    integral += h.density[b] * (h.bin_edges[b + 1] - h.bin_edges[b]);
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-9));
  // All mass lies in bins containing the value 30.
  for (std::size_t b = 0; b < h.density.size(); ++b)
    if (h.density[b] > 0.0) {
      CHECK(h.bin_edges[b] <= 30.0);
      CHECK(h.bin_edges[b + 1] >= 30.0);
    }
}

TEST_CASE("make_histogram: empty input is flagged") {
  const SampleHistogram h = make_histogram({}, 50);
  CHECK(h.empty());
  CHECK(h.n_present == 0);
  CHECK(h.occurrence_fraction == doctest::Approx(0.0));
}

TEST_CASE("lifetime_distribution: persistent eddy is a point mass") {
  const double L = 400.0;
  // Every member sees the same eddy for 30 snapshots.
  std::vector<std::vector<EddyDetection>> dets;
  for (int s = 0; s < 8; ++s) {
    std::vector<EddyDetection> series;
    for (int t = 0; t < 30; ++t)
      series.push_back(detection_at(t, L, {{200.0, 200.0}}));
    dets.push_back(series);
  }
  TrackingConfig cfg;
  cfg.seed_time = 10.0;
  cfg.seed_location = Vec2(200.0, 200.0);
  const SampleHistogram h = lifetime_distribution(dets, cfg);
  CHECK(h.n_present == 8);
  CHECK(h.occurrence_fraction == doctest::Approx(1.0));
  CHECK(h.mean == doctest::Approx(30.0));
  CHECK(h.sd == doctest::Approx(0.0));
}

TEST_CASE("lifetime_distribution: absent members lower the occurrence fraction") {
  const double L = 400.0;
  std::vector<std::vector<EddyDetection>> dets;
  for (int s = 0; s < 10; ++s) {
    std::vector<EddyDetection> series;
    for (int t = 0; t < 20; ++t) {
      // Half the members never produce the eddy near the seed.
      if (s < 5)
        series.push_back(detection_at(t, L, {{200.0, 200.0}}));
      else
        series.push_back(detection_at(t, L, {{50.0, 50.0}}));
    }
    dets.push_back(series);
  }
  TrackingConfig cfg;
  cfg.seed_time = 5.0;
  cfg.seed_location = Vec2(200.0, 200.0);
  const SampleHistogram h = lifetime_distribution(dets, cfg);
  CHECK(h.n_samples == 10);
  CHECK(h.n_present == 5);
  CHECK(h.occurrence_fraction == doctest::Approx(0.5));
  CHECK(h.mean == doctest::Approx(20.0));
}

TEST_CASE("size_distribution: point mass and no-boundary exclusion") {
  const double L = 400.0;
  const Vec2 seed(150.0, 150.0);
  std::vector<EddyDetection> at_time;
  for (int s = 0; s < 12; ++s) {
    if (s < 9)
      at_time.push_back(detection_at(0.0, L, {{151.0, 150.0}}, {314.0}));
    else  // core present but without a closed boundary: contributes no area
      at_time.push_back(detection_at(0.0, L, {{151.0, 150.0}}, {-1.0}));
  }
  const SampleHistogram h = size_distribution(at_time, seed, 10.0);
  CHECK(h.n_samples == 12);
  CHECK(h.n_present == 9);
  CHECK(h.mean == doctest::Approx(314.0));
  CHECK(h.sd == doctest::Approx(0.0));
}

TEST_CASE("size_distribution: picks the nearest core within the radius") {
  const double L = 400.0;
  const Vec2 seed(100.0, 100.0);
  std::vector<EddyDetection> at_time{detection_at(
      0.0, L, {{104.0, 100.0}, {109.0, 100.0}, {300.0, 300.0}},
      {111.0, 222.0, 333.0})};
  const SampleHistogram h = size_distribution(at_time, seed, 10.0);
  REQUIRE(h.n_present == 1);
  CHECK(h.values[0] == doctest::Approx(111.0));
}

TEST_CASE("csv exports are well formed") {
  const double L = 400.0;
  std::vector<std::vector<EddyDetection>> dets{constant_series(L, 3, 2),
                                               constant_series(L, 3, 4)};
  const CountStatistics c = ensemble_counts(dets);
  const auto dir = std::filesystem::temp_directory_path();
  const auto counts_path = dir / "stats_counts.csv";
  save_counts_csv(c, {2, 3, 4}, {1, 2, 3}, counts_path);
  std::ifstream in(counts_path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "time,truth_count,det_count,ens_mean,ens_sd");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);
  std::filesystem::remove(counts_path);

  const SampleHistogram h = make_histogram({1.0, 2.0, 2.0, 3.0}, 5);
  const auto hist_path = dir / "stats_hist.csv";
  save_histogram_csv(h, hist_path);
  std::ifstream hin(hist_path);
  std::getline(hin, header);
  CHECK(header.find("bin_lo") != std::string::npos);
  std::filesystem::remove(hist_path);
}
