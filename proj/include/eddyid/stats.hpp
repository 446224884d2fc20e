#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "eddyid/ow.hpp"
#include "eddyid/tracking.hpp"

namespace eddyid {

// Per-time eddy counts across the ensemble. sd is the population standard
// deviation (divide by n, not n-1).
struct CountStatistics {
  std::vector<double> times;
  std::vector<double> mean;
  std::vector<double> sd;
  std::vector<std::vector<int>> per_sample;  // per_sample[sample][time]
};

// detections[sample][time]; all samples must share the time grid.
CountStatistics ensemble_counts(
    const std::vector<std::vector<EddyDetection>>& detections);

struct OccurrenceResult {
  double probability = 0.0;
  double stderr_ = 0.0;  // binomial Monte Carlo standard error
  int n_hits = 0;
  int n_samples = 0;
};

// Fraction of samples with at least one core within the periodic radius of
// the location; detections_at_time[sample] is one snapshot per member.
OccurrenceResult occurrence_probability(
    const std::vector<EddyDetection>& detections_at_time, const Vec2& location,
    double radius_km);

// Normalized histogram over the recorded per-sample values; the density
// integrates to one over the bins. Samples where the queried eddy is absent
// are counted as non-occurrences, not histogram entries.
struct SampleHistogram {
  std::vector<double> values;     // one entry per sample with the eddy present
  std::vector<double> bin_edges;  // n_bins + 1
  std::vector<double> density;    // n_bins
  int n_samples = 0;
  int n_present = 0;
  double occurrence_fraction = 0.0;
  double mean = 0.0;
  double sd = 0.0;  // population sd over values
  bool empty() const { return values.empty(); }
};

SampleHistogram make_histogram(std::vector<double> values, int n_samples,
                               int n_bins = 0);

// Lifetime of the eddy seeded by cfg, one track per sample.
// detections[sample][time].
SampleHistogram lifetime_distribution(
    const std::vector<std::vector<EddyDetection>>& detections,
    const TrackingConfig& cfg);

// Area of the seeded eddy in one snapshot per sample; cores with no closed
// boundary contribute no area.
SampleHistogram size_distribution(
    const std::vector<EddyDetection>& detections_at_time,
    const Vec2& seed_location, double radius_km);

void save_histogram_csv(const SampleHistogram& h,
                        const std::filesystem::path& path);
void save_counts_csv(const CountStatistics& c,
                     const std::vector<int>& truth_counts,
                     const std::vector<int>& baseline_counts,
                     const std::filesystem::path& path);

}  // namespace eddyid
