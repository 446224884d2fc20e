#include "eddyid/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "eddyid/io.hpp"

namespace eddyid {

CountStatistics ensemble_counts(
    const std::vector<std::vector<EddyDetection>>& detections) {
  if (detections.empty())
    throw std::invalid_argument("ensemble_counts: no samples");
  const std::size_t n_times = detections[0].size();
  CountStatistics out;
  out.times.reserve(n_times);
  for (const auto& d : detections[0]) out.times.push_back(d.time);
  for (const auto& series : detections) {
    if (series.size() != n_times)
      throw std::invalid_argument("ensemble_counts: ragged time grid");
    std::vector<int> counts(n_times);
    for (std::size_t t = 0; t < n_times; ++t)
      counts[t] = static_cast<int>(series[t].cores.size());
    out.per_sample.push_back(std::move(counts));
  }
  const double n = static_cast<double>(detections.size());
  out.mean.resize(n_times);
  out.sd.resize(n_times);
  for (std::size_t t = 0; t < n_times; ++t) {
    double s = 0, s2 = 0;
    for (const auto& counts : out.per_sample) {
      s += counts[t];
      s2 += double(counts[t]) * counts[t];
    }
    out.mean[t] = s / n;
    out.sd[t] = std::sqrt(std::max(0.0, s2 / n - out.mean[t] * out.mean[t]));
  }
  return out;
}

OccurrenceResult occurrence_probability(
    const std::vector<EddyDetection>& detections_at_time, const Vec2& location,
    double radius_km) {
  if (radius_km <= 0)
    throw std::invalid_argument("occurrence_probability: radius must be > 0");
  OccurrenceResult out;
  out.n_samples = static_cast<int>(detections_at_time.size());
  if (out.n_samples == 0)
    throw std::invalid_argument("occurrence_probability: no samples");
  for (const auto& det : detections_at_time) {
    const double L = det.domain_size;
    const bool hit = std::any_of(
        det.cores.begin(), det.cores.end(), [&](const EddyCore& c) {
          return periodic_distance(c.position, location, L) <= radius_km;
        });
    if (hit) ++out.n_hits;
  }
  out.probability = double(out.n_hits) / out.n_samples;
  out.stderr_ =
      std::sqrt(out.probability * (1.0 - out.probability) / out.n_samples);
  return out;
}

SampleHistogram make_histogram(std::vector<double> values, int n_samples,
                               int n_bins) {
  SampleHistogram h;
  h.n_samples = n_samples;
  h.n_present = static_cast<int>(values.size());
  h.occurrence_fraction =
      n_samples > 0 ? double(h.n_present) / n_samples : 0.0;
  h.values = std::move(values);
  if (h.values.empty()) return h;
  double s = 0, s2 = 0;
  for (double v : h.values) {
    s += v;
    s2 += v * v;
  }
  h.mean = s / h.n_present;
  h.sd = std::sqrt(std::max(0.0, s2 / h.n_present - h.mean * h.mean));
  if (n_bins <= 0)
    n_bins = std::max(1, (int)std::lround(std::ceil(std::sqrt(h.n_present))));
  auto [mn_it, mx_it] = std::minmax_element(h.values.begin(), h.values.end());
  double lo = *mn_it, hi = *mx_it;
  if (hi - lo < 1e-12 * std::max(1.0, std::abs(hi))) {
    // Point mass: one bin of unit relative width around the value.
    const double pad = std::max(0.5, 0.05 * std::abs(hi));
    lo -= pad;
    hi += pad;
    n_bins = 1;
  }
  const double width = (hi - lo) / n_bins;
  h.bin_edges.resize(n_bins + 1);
  for (int b = 0; b <= n_bins; ++b) h.bin_edges[b] = lo + b * width;
  h.density.assign(n_bins, 0.0);
  for (double v : h.values) {
    int b = std::clamp((int)std::floor((v - lo) / width), 0, n_bins - 1);
    h.density[b] += 1.0;
  }
  for (double& d : h.density) d /= h.n_present * width;
  return h;
}

SampleHistogram lifetime_distribution(
    const std::vector<std::vector<EddyDetection>>& detections,
    const TrackingConfig& cfg) {
  std::vector<double> lifetimes;
  for (const auto& series : detections) {
    const auto track = track_eddy(series, cfg);
    if (track) lifetimes.push_back(track->lifetime);
  }
  return make_histogram(std::move(lifetimes),
                        static_cast<int>(detections.size()));
}

SampleHistogram size_distribution(
    const std::vector<EddyDetection>& detections_at_time,
    const Vec2& seed_location, double radius_km) {
  std::vector<double> areas;
  for (const auto& det : detections_at_time) {
    const double L = det.domain_size;
    int best = -1;
    double best_d = radius_km;
    for (std::size_t c = 0; c < det.cores.size(); ++c) {
      const double d =
          periodic_distance(det.cores[c].position, seed_location, L);
      if (d <= best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    if (best < 0) continue;
    const int boundary = det.cores[best].boundary;
    if (boundary < 0) continue;  // no closed contour: area undefined
    areas.push_back(det.sizes[boundary]);
  }
  return make_histogram(std::move(areas),
                        static_cast<int>(detections_at_time.size()));
}

void save_histogram_csv(const SampleHistogram& h,
                        const std::filesystem::path& path) {
  CsvWriter csv(path, {"bin_lo", "bin_hi", "density", "n_samples", "n_present",
                       "occurrence_fraction", "mean", "sd"});
  if (h.density.empty()) {
    csv.row(0.0, 0.0, 0.0, h.n_samples, h.n_present, h.occurrence_fraction,
            0.0, 0.0);
    return;
  }
  for (std::size_t b = 0; b < h.density.size(); ++b)
    csv.row(h.bin_edges[b], h.bin_edges[b + 1], h.density[b], h.n_samples,
            h.n_present, h.occurrence_fraction, h.mean, h.sd);
}

void save_counts_csv(const CountStatistics& c,
                     const std::vector<int>& truth_counts,
                     const std::vector<int>& baseline_counts,
                     const std::filesystem::path& path) {
  CsvWriter csv(path, {"time", "truth_count", "det_count", "ens_mean",
                       "ens_sd"});
  for (std::size_t t = 0; t < c.times.size(); ++t) {
    const int truth = t < truth_counts.size() ? truth_counts[t] : -1;
    const int det = t < baseline_counts.size() ? baseline_counts[t] : -1;
    csv.row(c.times[t], truth, det, c.mean[t], c.sd[t]);
  }
}

}  // namespace eddyid
