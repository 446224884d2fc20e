#include "eddyid/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace eddyid {

namespace {

TrackSnapshot make_snapshot(const EddyDetection& det, std::size_t core) {
  const auto& c = det.cores[core];
  TrackSnapshot s;
  s.time = det.time;
  s.position = c.position;
  s.ow_value = c.ow_value;
  s.area = c.boundary >= 0 ? det.sizes[c.boundary]
                           : std::numeric_limits<double>::quiet_NaN();
  return s;
}

void finalize(EddyTrack& track, double cadence) {
  track.birth_time = track.snapshots.front().time;
  track.death_time = track.snapshots.back().time + cadence;
  track.lifetime = track.death_time - track.birth_time;
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> match_cores(
    const EddyDetection& det_t, const EddyDetection& det_next,
    const TrackingConfig& cfg) {
  if (det_t.domain_size != det_next.domain_size)
    throw std::invalid_argument("match_cores: mismatched domains");
  const double L = det_t.domain_size;
  struct Candidate {
    double dist;
    std::size_t i, j;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < det_t.cores.size(); ++i)
    for (std::size_t j = 0; j < det_next.cores.size(); ++j) {
      const double d = periodic_distance(det_t.cores[i].position,
                                         det_next.cores[j].position, L);
      if (d <= cfg.tracking_distance) candidates.push_back({d, i, j});
    }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              return std::tie(a.dist, a.i, a.j) < std::tie(b.dist, b.i, b.j);
            });
  std::vector<bool> used_t(det_t.cores.size(), false);
  std::vector<bool> used_next(det_next.cores.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& c : candidates) {
    if (used_t[c.i] || used_next[c.j]) continue;
    used_t[c.i] = true;
    used_next[c.j] = true;
    pairs.emplace_back(c.i, c.j);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

std::optional<EddyTrack> track_eddy(const std::vector<EddyDetection>& detections,
                                    const TrackingConfig& cfg) {
  if (detections.empty()) return std::nullopt;
  // Locate the seed snapshot.
  std::size_t t0 = detections.size();
  for (std::size_t t = 0; t < detections.size(); ++t)
    if (std::abs(detections[t].time - cfg.seed_time) < cfg.snapshot_cadence / 2) {
      t0 = t;
      break;
    }
  if (t0 == detections.size())
    throw std::invalid_argument("track_eddy: seed_time outside detection series");

  const double L = detections[t0].domain_size;
  std::size_t seed_core = detections[t0].cores.size();
  double best = cfg.search_distance;
  for (std::size_t c = 0; c < detections[t0].cores.size(); ++c) {
    const double d =
        periodic_distance(detections[t0].cores[c].position, cfg.seed_location, L);
    if (d <= best) {
      best = d;
      seed_core = c;
    }
  }
  if (seed_core == detections[t0].cores.size()) return std::nullopt;

  std::vector<TrackSnapshot> forward, backward;
  // Forward from the seed.
  std::size_t core = seed_core;
  for (std::size_t t = t0; t < detections.size(); ++t) {
    forward.push_back(make_snapshot(detections[t], core));
    if (t + 1 == detections.size()) break;
    const auto pairs = match_cores(detections[t], detections[t + 1], cfg);
    auto it = std::find_if(pairs.begin(), pairs.end(),
                           [&](const auto& p) { return p.first == core; });
    if (it == pairs.end()) break;
    core = it->second;
  }
  // Backward from the seed.
  core = seed_core;
  for (std::size_t t = t0; t > 0; --t) {
    const auto pairs = match_cores(detections[t - 1], detections[t], cfg);
    auto it = std::find_if(pairs.begin(), pairs.end(),
                           [&](const auto& p) { return p.second == core; });
    if (it == pairs.end()) break;
    core = it->first;
    backward.push_back(make_snapshot(detections[t - 1], core));
  }

  EddyTrack track;
  track.snapshots.assign(backward.rbegin(), backward.rend());
  track.snapshots.insert(track.snapshots.end(), forward.begin(), forward.end());
  finalize(track, cfg.snapshot_cadence);
  return track;
}

std::vector<EddyTrack> catalog_all_tracks(
    const std::vector<EddyDetection>& detections, const TrackingConfig& cfg) {
  if (detections.empty())
    throw std::invalid_argument("catalog_all_tracks: empty detection series");
  std::vector<EddyTrack> finished;
  int next_id = 0;
  // Open tracks, keyed by the core index in the current snapshot.
  std::vector<std::pair<std::size_t, EddyTrack>> open;
  for (std::size_t c = 0; c < detections[0].cores.size(); ++c) {
    EddyTrack t;
    t.track_id = next_id++;
    t.snapshots.push_back(make_snapshot(detections[0], c));
    open.emplace_back(c, std::move(t));
  }
  for (std::size_t t = 0; t + 1 < detections.size(); ++t) {
    const auto pairs = match_cores(detections[t], detections[t + 1], cfg);
    std::vector<std::pair<std::size_t, EddyTrack>> still_open;
    std::vector<bool> next_matched(detections[t + 1].cores.size(), false);
    for (auto& [core, track] : open) {
      auto it = std::find_if(pairs.begin(), pairs.end(),
                             [&, c = core](const auto& p) { return p.first == c; });
      if (it == pairs.end()) {
        finalize(track, cfg.snapshot_cadence);
        finished.push_back(std::move(track));
      } else {
        track.snapshots.push_back(make_snapshot(detections[t + 1], it->second));
        next_matched[it->second] = true;
        still_open.emplace_back(it->second, std::move(track));
      }
    }
    for (std::size_t c = 0; c < detections[t + 1].cores.size(); ++c) {
      if (next_matched[c]) continue;
      EddyTrack nt;
      nt.track_id = next_id++;
      nt.snapshots.push_back(make_snapshot(detections[t + 1], c));
      still_open.emplace_back(c, std::move(nt));
    }
    open = std::move(still_open);
  }
  for (auto& [core, track] : open) {
    finalize(track, cfg.snapshot_cadence);
    finished.push_back(std::move(track));
  }
  std::sort(finished.begin(), finished.end(),
            [](const EddyTrack& a, const EddyTrack& b) {
              return a.track_id < b.track_id;
            });
  return finished;
}

}  // namespace eddyid
