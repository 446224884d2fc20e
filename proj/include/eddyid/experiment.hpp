#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "eddyid/cg_assim.hpp"
#include "eddyid/stats.hpp"

namespace eddyid {

// Twin-experiment configuration; key names carry their units. Loaded from a
// JSON file, validated against module preconditions, and echoed into the run
// manifest so no hidden default survives.
struct ExperimentConfig {
  double domain_size_km = 400.0;
  double duration_days = 100.0;
  int n_floes = 40;
  double obs_noise_km = 0.25;
  double obs_noise_rad = 0.01;
  int mode_range = 11;  // retained modes k in [-range, range]^2 \ {0}
  int ensemble_size = 100;
  std::uint64_t master_seed = 1;
  double dt_days = 0.01;
  double dt_obs_days = 0.1;
  double snapshot_cadence_days = 1.0;
  int grid_n = 128;
  double spinup_days = 20.0;
  double velocity_std_km_per_day = 2.0;  // calibration target per component
  double tcorr0_days = 8.0;              // decorrelation time at |k| = 1
  double floe_vel_noise = 0.05;
  double floe_ang_noise = 0.02;
  double tracking_distance_km = 10.0;
  double search_distance_km = 10.0;
  double occurrence_radius_km = 10.0;
  // Seed eddies for the occurrence/lifetime/size queries are the truth cores
  // at this fraction of the run duration (rounded to the snapshot grid).
  double query_time_fraction = 0.7;
  bool smoother_covariance = false;
  int n_workers = 1;  // never affects results

  void validate() const;
  std::string canonical_json() const;
  std::string hash() const;
  void save(const std::filesystem::path& path) const;
  static ExperimentConfig load(const std::filesystem::path& path);

  int record_stride() const;  // observation steps per snapshot
  double query_time() const;  // snapshot-aligned seed time
};

enum class Stage {
  Calibrate,
  Simulate,
  Observe,
  Filter,
  Smoother,
  Sample,
  Diagnose,
  Track,
  Stats,
  Figures
};
const char* stage_name(Stage s);
std::vector<Stage> all_stages();

struct RunManifest {
  std::string config_hash;
  std::string code_version;
  std::string config_echo;  // canonical JSON of the effective config
  // Stage name -> ISO-ish timestamp of completion; insertion order = run order.
  std::vector<std::pair<std::string, std::string>> stages_completed;
  std::map<std::string, std::uint64_t> stage_seeds;
  std::vector<std::string> outputs;
  std::vector<std::pair<std::string, std::string>> failures;  // stage, cause

  bool has_stage(const std::string& name) const;
  void save(const std::filesystem::path& path) const;
  static RunManifest load(const std::filesystem::path& path);
};

// Staged twin-experiment pipeline. Every stage reads its inputs from files
// written by earlier stages, so rerunning a downstream stage from checkpoints
// is identical to a full rerun.
class Experiment {
 public:
  Experiment(ExperimentConfig config, std::filesystem::path outdir);

  void run_stage(Stage s);
  void run_through(Stage last);
  void run_all() { run_through(Stage::Figures); }
  void emit_figure_tables(const std::string& figure_id);

  const ExperimentConfig& config() const { return config_; }
  const RunManifest& manifest() const { return manifest_; }
  const std::filesystem::path& outdir() const { return outdir_; }
  std::filesystem::path path(const std::string& file) const {
    return outdir_ / file;
  }

  // Snapshot time grid (cadence) and observation time grid.
  std::vector<double> snapshot_times() const;

  CGModel make_model(const SpectrumConfig& spectrum) const;

  // Detections written by the diagnose stage; family is "truth", "mean", or
  // "samples" (the latter returns one series per member).
  std::vector<EddyDetection> load_detection_series(
      const std::string& family, int sample_id = -1) const;

 private:
  void stage_calibrate();
  void stage_simulate();
  void stage_observe();
  void stage_filter();
  void stage_smoother();
  void stage_sample();
  void stage_diagnose();
  void stage_track();
  void stage_stats();
  void stage_figures();
  void record_stage(Stage s, std::uint64_t seed_used,
                    const std::vector<std::string>& files);

  ExperimentConfig config_;
  std::filesystem::path outdir_;
  RunManifest manifest_;
};

// Filter checkpoint serialization (flat binary, magic header + version).
void save_filter_result(const std::filesystem::path& path,
                        const FilterResult& f);
FilterResult load_filter_result(const std::filesystem::path& path);

}  // namespace eddyid
