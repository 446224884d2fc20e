#pragma once

#include <optional>
#include <vector>

#include "eddyid/geometry.hpp"
#include "eddyid/ow.hpp"

namespace eddyid {

struct TrackingConfig {
  double tracking_distance = 10.0;  // km, core-to-core between snapshots
  double search_distance = 10.0;    // km, seed-to-core at the seed time
  double snapshot_cadence = 1.0;    // days
  double seed_time = 0.0;           // days
  Vec2 seed_location{0.0, 0.0};     // km
};

struct TrackSnapshot {
  double time = 0.0;
  Vec2 position{0.0, 0.0};
  double ow_value = 0.0;
  double area = 0.0;  // NaN when the core had no closed boundary
};

struct EddyTrack {
  int sample_id = -1;
  int track_id = 0;
  std::vector<TrackSnapshot> snapshots;
  double birth_time = 0.0;
  // Time of the first snapshot where the eddy no longer meets the criterion
  // (one cadence past the last detection), so lifetime = snapshots * cadence.
  double death_time = 0.0;
  double lifetime = 0.0;
};

// Greedy nearest-neighbor matching of cores between consecutive detections
// under the periodic metric; pairs beyond tracking_distance are rejected.
// Ties break by smallest distance, then lowest core index.
std::vector<std::pair<std::size_t, std::size_t>> match_cores(
    const EddyDetection& det_t, const EddyDetection& det_next,
    const TrackingConfig& cfg);

// Track the eddy seeded at (seed_time, seed_location) forward and backward
// until matching fails; absent if no core lies within search_distance.
std::optional<EddyTrack> track_eddy(const std::vector<EddyDetection>& detections,
                                    const TrackingConfig& cfg);

// Partition all cores across all snapshots into maximal tracks.
std::vector<EddyTrack> catalog_all_tracks(
    const std::vector<EddyDetection>& detections, const TrackingConfig& cfg);

}  // namespace eddyid
