#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ibss/features.hpp"
#include "ibss/frames.hpp"
#include "ibss/invariants.hpp"
#include "ibss/moments.hpp"
#include "ibss/neighborhoods.hpp"
#include "ibss/separability.hpp"
#include "ibss/series.hpp"

namespace ibss {

inline constexpr const char* k_tool_version = "ibss 0.1.0";

// Every knob of the pipeline in one declarative document. Parsed from an
// INI-style text file; unknown sections or keys are rejected.
struct RunConfig {
  // [run]
  std::string out_dir = "out";
  int threads = 0;  // 0 = hardware concurrency

  // [synth]
  double duration_s = 960.0;
  std::uint64_t seed = 42;

  // [featurize]
  std::string wav_in;
  int target_dim = 2;
  int reduce_neighborhoods = 24;
  double residual_limit = 0.15;
  int reduce_patch_k = 0;  // 0 = auto
  bool reduce = true;

  // [bss]
  std::string input;
  std::string truth;

  // [neighborhoods]
  std::string strategy = "grid";
  int cells_per_axis = 7;
  int knn_k = 0;
  std::uint64_t min_count = 0;  // 0 = order-based default

  // [moments]
  int max_order = 5;
  int smooth_passes = 3;

  // [frames]
  double eps_pd_scale = 1e-10;
  double eps_gap_scale = 1e-6;

  // [manifold]
  int manifold_k = 12;
  double manifold_threshold = 0.10;
  int graph_k = 8;
  int smoothing_window = 5;
  int n_patches = 24;
  int patch_k = 24;

  // [factorization]
  int n_functions = 12;
  double factor_threshold = 0.05;
  int factor_smooth_radius = 0;
  bool calibrate_null = false;
  int null_reps = 16;
  std::uint64_t null_seed = 6997;

  // [linearity]
  double direction_cov = 0.05;
  std::uint64_t linearity_min_cells = 10;
  bool smooth_sigma = false;
};

RunConfig parse_config_file(const std::string& path);
// assignment has the form "section.key=value"
void apply_override(RunConfig& config, const std::string& assignment);
// canonical text form; reparsing it reproduces the config exactly
std::string echo_config(const RunConfig& config);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct CellStats {
  std::size_t samples_total = 0;
  std::size_t samples_assigned = 0;
  std::size_t cells_retained = 0;
  std::size_t frames_valid = 0;
  std::size_t frames_degenerate = 0;
  int components = 0;
};

struct BssOutcome {
  NeighborhoodIndex index;
  FrameField frames;
  InvariantField invariants;  // base field, multiplets not built
  PartitionSearchResult partition;
  std::optional<LinearityReport> linearity;
  std::string linearity_error;
  CellStats stats;
  std::vector<StageTiming> timings;
};

BssOutcome run_bss(const TimeSeries& series, const RunConfig& config);

// Canonical report: stable field order, no timings, byte-identical across
// thread counts for a fixed config and input.
std::string report_json(const BssOutcome& outcome, const RunConfig& config,
                        const std::vector<std::string>& manifest, const std::string& input_path);
std::string timings_json(const BssOutcome& outcome);

void write_text_file(const std::string& path, const std::string& content);

// t column carries the original sample times (velocity samples sit one step
// into the series), then sigma columns for both groups and a defined flag.
void write_sigma_csv(const std::string& path, const SourceMap& map);

// One row per retained cell: cell id, box center, multiplet values.
void write_cloud_csv(const std::string& path, const InvariantField& with_multiplets,
                     const NeighborhoodIndex& idx, bool group_a);

struct EvaluationResult {
  std::vector<int> pairing;      // sigma column -> truth column
  std::vector<double> spearman;  // per sigma column, signed, for its paired truth
  double cross_max = 0.0;        // largest |rho| off the chosen pairing
};

// Rank correlation of recovered coordinates against ground truth, maximizing
// total |rho| over column assignments (source order and sign are not
// identifiable). sample_offset aligns sigma sample i with truth row
// i + sample_offset.
EvaluationResult evaluate_against_truth(const SourceMap& map, const TimeSeries& truth,
                                        std::size_t sample_offset = 1);

}  // namespace ibss
