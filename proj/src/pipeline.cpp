#include "ibss/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ibss/common.hpp"
#include "ibss/parallel.hpp"
#include "ibss/stats.hpp"

namespace ibss {
namespace {

enum class FieldKind { k_int, k_u64, k_double, k_bool, k_string };

struct FieldDesc {
  const char* section;
  const char* key;
  FieldKind kind;
  void* ptr;
};

std::vector<FieldDesc> config_fields(RunConfig& c) {
  return {
      {"run", "out_dir", FieldKind::k_string, &c.out_dir},
      {"run", "threads", FieldKind::k_int, &c.threads},
      {"synth", "duration_s", FieldKind::k_double, &c.duration_s},
      {"synth", "seed", FieldKind::k_u64, &c.seed},
      {"featurize", "wav_in", FieldKind::k_string, &c.wav_in},
      {"featurize", "target_dim", FieldKind::k_int, &c.target_dim},
      {"featurize", "neighborhoods", FieldKind::k_int, &c.reduce_neighborhoods},
      {"featurize", "residual_limit", FieldKind::k_double, &c.residual_limit},
      {"featurize", "patch_k", FieldKind::k_int, &c.reduce_patch_k},
      {"featurize", "reduce", FieldKind::k_bool, &c.reduce},
      {"bss", "input", FieldKind::k_string, &c.input},
      {"bss", "truth", FieldKind::k_string, &c.truth},
      {"neighborhoods", "strategy", FieldKind::k_string, &c.strategy},
      {"neighborhoods", "cells_per_axis", FieldKind::k_int, &c.cells_per_axis},
      {"neighborhoods", "knn_k", FieldKind::k_int, &c.knn_k},
      {"neighborhoods", "min_count", FieldKind::k_u64, &c.min_count},
      {"moments", "max_order", FieldKind::k_int, &c.max_order},
      {"moments", "smooth_passes", FieldKind::k_int, &c.smooth_passes},
      {"frames", "eps_pd_scale", FieldKind::k_double, &c.eps_pd_scale},
      {"frames", "eps_gap_scale", FieldKind::k_double, &c.eps_gap_scale},
      {"manifold", "k", FieldKind::k_int, &c.manifold_k},
      {"manifold", "threshold", FieldKind::k_double, &c.manifold_threshold},
      {"manifold", "graph_k", FieldKind::k_int, &c.graph_k},
      {"manifold", "smoothing_window", FieldKind::k_int, &c.smoothing_window},
      {"manifold", "n_patches", FieldKind::k_int, &c.n_patches},
      {"manifold", "patch_k", FieldKind::k_int, &c.patch_k},
      {"factorization", "n_functions", FieldKind::k_int, &c.n_functions},
      {"factorization", "threshold", FieldKind::k_double, &c.factor_threshold},
      {"factorization", "smooth_radius", FieldKind::k_int, &c.factor_smooth_radius},
      {"factorization", "calibrate_null", FieldKind::k_bool, &c.calibrate_null},
      {"factorization", "null_reps", FieldKind::k_int, &c.null_reps},
      {"factorization", "null_seed", FieldKind::k_u64, &c.null_seed},
      {"linearity", "direction_cov", FieldKind::k_double, &c.direction_cov},
      {"linearity", "min_cells", FieldKind::k_u64, &c.linearity_min_cells},
      {"linearity", "smooth_sigma", FieldKind::k_bool, &c.smooth_sigma},
  };
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void assign_field(const FieldDesc& field, const std::string& raw) {
  const std::string value = trim(raw);
  try {
    switch (field.kind) {
      case FieldKind::k_int:
        *static_cast<int*>(field.ptr) = std::stoi(value);
        break;
      case FieldKind::k_u64:
        *static_cast<std::uint64_t*>(field.ptr) = std::stoull(value);
        break;
      case FieldKind::k_double:
        *static_cast<double*>(field.ptr) = std::stod(value);
        break;
      case FieldKind::k_bool:
        if (value == "true" || value == "1") {
          *static_cast<bool*>(field.ptr) = true;
        } else if (value == "false" || value == "0") {
          *static_cast<bool*>(field.ptr) = false;
        } else {
          throw Error(ErrorCategory::k_format, std::string("bad boolean for ") + field.section +
                                                   "." + field.key + ": " + value);
        }
        break;
      case FieldKind::k_string:
        *static_cast<std::string*>(field.ptr) = value;
        break;
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw Error(ErrorCategory::k_format,
                std::string("bad value for ") + field.section + "." + field.key + ": " + value);
  }
}

std::string field_as_string(const FieldDesc& field) {
  switch (field.kind) {
    case FieldKind::k_int:
      return std::to_string(*static_cast<const int*>(field.ptr));
    case FieldKind::k_u64:
      return std::to_string(*static_cast<const std::uint64_t*>(field.ptr));
    case FieldKind::k_double: {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", *static_cast<const double*>(field.ptr));
      return buf;
    }
    case FieldKind::k_bool:
      return *static_cast<const bool*>(field.ptr) ? "true" : "false";
    case FieldKind::k_string:
      return *static_cast<const std::string*>(field.ptr);
  }
  return "";
}

}  // namespace

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::k_io, "cannot open config " + path);

  RunConfig config;
  auto fields = config_fields(config);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw Error(ErrorCategory::k_format,
                    "malformed section header (line " + std::to_string(line_no) + ")");
      }
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : fields) known = known || section == f.section;
      if (!known) {
        throw Error(ErrorCategory::k_format,
                    "unknown config section [" + section + "] (line " + std::to_string(line_no) + ")");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCategory::k_format,
                  "expected key=value (line " + std::to_string(line_no) + ")");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = line.substr(eq + 1);
    bool matched = false;
    for (const auto& f : fields) {
      if (section == f.section && key == f.key) {
        assign_field(f, value);
        matched = true;
        break;
      }
    }
    if (!matched) {
      throw Error(ErrorCategory::k_format, "unknown config key " + section + "." + key +
                                               " (line " + std::to_string(line_no) + ")");
    }
  }
  return config;
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  const std::size_t dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw Error(ErrorCategory::k_invalid_argument,
                "override must look like section.key=value: " + assignment);
  }
  const std::string section = trim(assignment.substr(0, dot));
  const std::string key = trim(assignment.substr(dot + 1, eq - dot - 1));
  auto fields = config_fields(config);
  for (const auto& f : fields) {
    if (section == f.section && key == f.key) {
      assign_field(f, assignment.substr(eq + 1));
      return;
    }
  }
  throw Error(ErrorCategory::k_invalid_argument, "unknown config key " + section + "." + key);
}

std::string echo_config(const RunConfig& config) {
  auto fields = config_fields(const_cast<RunConfig&>(config));
  std::string out;
  std::string section;
  for (const auto& f : fields) {
    if (section != f.section) {
      if (!out.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + field_as_string(f) + "\n";
  }
  return out;
}

namespace {

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>& sink) : sink_(sink) {}

  template <typename Fn>
  auto run(const std::string& name, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      sink_.push_back({name, elapsed.count()});
    } else {
      auto value = fn();
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      sink_.push_back({name, elapsed.count()});
      return value;
    }
  }

 private:
  std::vector<StageTiming>& sink_;
};

}  // namespace

BssOutcome run_bss(const TimeSeries& series, const RunConfig& config) {
  set_max_threads(config.threads);
  validate_series(series);
  const int n = series.n_channels();

  BssOutcome outcome;
  StageClock clock(outcome.timings);

  VelocitySeries vs = clock.run("velocity", [&] { return estimate_velocity(series); });

  const std::size_t min_count =
      config.min_count > 0 ? static_cast<std::size_t>(config.min_count) : default_min_count(n);
  outcome.index = clock.run("neighborhoods", [&] {
    if (config.strategy == "grid") {
      return build_neighborhoods(vs, GridStrategy{config.cells_per_axis}, min_count);
    }
    if (config.strategy == "knn") {
      return build_neighborhoods(vs, KnnStrategy{config.knn_k}, min_count);
    }
    throw Error(ErrorCategory::k_invalid_argument,
                "unknown neighborhood strategy: " + config.strategy);
  });

  MomentField moments =
      clock.run("moments", [&] { return local_moments(vs, outcome.index, config.max_order); });

  outcome.frames = clock.run("frames", [&] {
    FrameTolerances tol;
    tol.eps_pd_scale = config.eps_pd_scale;
    tol.eps_gap_scale = config.eps_gap_scale;
    FrameField frames = construct_frames(moments, tol);
    return align_frames(frames, outcome.index);
  });

  outcome.invariants = clock.run("invariants", [&] {
    InvariantField field = compute_invariant_field(outcome.frames, moments, config.max_order);
    return smooth_invariant_field(field, outcome.index, config.smooth_passes);
  });

  outcome.partition = clock.run("partition_search", [&] {
    PartitionSearchConfig pcfg;
    pcfg.manifold_k = config.manifold_k;
    pcfg.manifold_threshold = config.manifold_threshold;
    pcfg.chart.graph_k = config.graph_k;
    pcfg.chart.smoothing_window = config.smoothing_window;
    pcfg.chart.n_patches = config.n_patches;
    pcfg.chart.patch_k = config.patch_k;
    pcfg.factorization.n_functions = config.n_functions;
    pcfg.factorization.threshold = config.factor_threshold;
    pcfg.factorization.smooth_radius = config.factor_smooth_radius;
    pcfg.factorization.calibrate_null = config.calibrate_null;
    pcfg.factorization.null_reps = config.null_reps;
    pcfg.factorization.null_seed = config.null_seed;
    return partition_search(outcome.invariants, outcome.index, vs, pcfg);
  });

  if (outcome.partition.map.has_value()) {
    clock.run("linearity", [&] {
      LinearityThresholds lt;
      lt.direction_cov = config.direction_cov;
      lt.min_cells = static_cast<std::size_t>(config.linearity_min_cells);
      lt.smooth_sigma = config.smooth_sigma;
      lt.factorization.n_functions = config.n_functions;
      lt.factorization.threshold = config.factor_threshold;
      lt.factorization.smooth_radius = config.factor_smooth_radius;
      lt.factorization.calibrate_null = config.calibrate_null;
      lt.factorization.null_reps = config.null_reps;
      lt.factorization.null_seed = config.null_seed;
      try {
        outcome.linearity = linearity_test(*outcome.partition.map, vs, outcome.index, lt);
      } catch (const Error& e) {
        outcome.linearity_error =
            std::string(error_category_name(e.category())) + ": " + e.what();
      }
    });
  }

  outcome.stats.samples_total = vs.length();
  outcome.stats.samples_assigned = 0;
  for (auto c : outcome.index.cell_of_sample) {
    if (c >= 0) ++outcome.stats.samples_assigned;
  }
  outcome.stats.cells_retained = outcome.index.n_cells();
  outcome.stats.frames_valid = 0;
  outcome.stats.frames_degenerate = 0;
  for (std::size_t i = 0; i < outcome.frames.frames.size(); ++i) {
    if (outcome.frames.valid[i]) ++outcome.stats.frames_valid;
    if (outcome.frames.frames[i].degenerate) ++outcome.stats.frames_degenerate;
  }
  outcome.stats.components = outcome.frames.component_count;
  return outcome;
}

namespace {

using ojson = nlohmann::ordered_json;

ojson grouping_json(const IndexGrouping& g) {
  return ojson{{"a", g.group_a}, {"b", g.group_b}};
}

ojson manifold_json(const ManifoldTest& t) {
  return ojson{{"target_dim", t.target_dim},
               {"residual_fraction", t.residual_fraction},
               {"threshold", t.threshold},
               {"passes", t.passes},
               {"skipped_points", t.skipped}};
}

ojson config_json(const RunConfig& config) {
  auto fields = config_fields(const_cast<RunConfig&>(config));
  ojson out = ojson::object();
  for (const auto& f : fields) {
    if (!out.contains(f.section)) out[f.section] = ojson::object();
    out[f.section][f.key] = field_as_string(f);
  }
  return out;
}

}  // namespace

std::string report_json(const BssOutcome& outcome, const RunConfig& config,
                        const std::vector<std::string>& manifest, const std::string& input_path) {
  ojson doc;
  doc["tool"] = k_tool_version;
  doc["input"] = input_path;
  doc["verdict"] = outcome.partition.separable ? "separable" : "inseparable";
  const PartitionCandidate* winner =
      outcome.partition.winning_index >= 0
          ? &outcome.partition.candidates[static_cast<std::size_t>(outcome.partition.winning_index)]
          : nullptr;
  doc["grouping"] = winner ? grouping_json(winner->grouping) : ojson(nullptr);
  if (winner && winner->factorization.has_value()) {
    doc["statistic"] = winner->factorization->statistic;
    doc["threshold"] = winner->factorization->threshold;
  } else {
    doc["statistic"] = nullptr;
    doc["threshold"] = nullptr;
  }
  if (outcome.linearity.has_value()) {
    ojson cov = ojson::array();
    for (const auto& g : outcome.linearity->groups) cov.push_back(g.direction_cov);
    doc["direction_cov"] = cov;
    doc["linear"] = outcome.linearity->linear;
  } else {
    doc["direction_cov"] = nullptr;
    doc["linear"] = nullptr;
    if (!outcome.linearity_error.empty()) doc["linearity_error"] = outcome.linearity_error;
  }
  doc["truncated_enumeration"] = outcome.partition.truncated;

  ojson candidates = ojson::array();
  for (const auto& cand : outcome.partition.candidates) {
    ojson c;
    c["grouping"] = grouping_json(cand.grouping);
    c["manifold_a"] = manifold_json(cand.test_a);
    c["manifold_b"] = manifold_json(cand.test_b);
    if (cand.factorization.has_value()) {
      c["statistic"] = cand.factorization->statistic;
      c["threshold"] = cand.factorization->threshold;
      c["null_scale"] = cand.factorization->null_scale;
    } else {
      c["statistic"] = nullptr;
      c["threshold"] = nullptr;
    }
    c["passed"] = cand.passed;
    c["failure"] = cand.failure;
    candidates.push_back(std::move(c));
  }
  doc["candidates"] = std::move(candidates);

  doc["cells"] = ojson{{"retained", outcome.stats.cells_retained},
                       {"frames_valid", outcome.stats.frames_valid},
                       {"frames_degenerate", outcome.stats.frames_degenerate},
                       {"alignment_components", outcome.stats.components},
                       {"samples_total", outcome.stats.samples_total},
                       {"samples_assigned", outcome.stats.samples_assigned}};

  if (outcome.partition.map.has_value()) {
    const SourceMap& map = *outcome.partition.map;
    std::size_t defined = 0;
    for (char d : map.defined) defined += d ? 1u : 0u;
    doc["sigma"] = ojson{
        {"mapped_grouping",
         grouping_json(outcome.partition
                           .candidates[static_cast<std::size_t>(outcome.partition.mapped_index)]
                           .grouping)},
        {"samples", map.length()},
        {"defined", defined},
        {"gaps", map.gap_count}};
  } else {
    doc["sigma"] = nullptr;
  }

  doc["config"] = config_json(config);
  doc["manifest"] = manifest;
  return doc.dump(2) + "\n";
}

std::string timings_json(const BssOutcome& outcome) {
  ojson stages = ojson::array();
  for (const auto& t : outcome.timings) {
    stages.push_back(ojson{{"stage", t.stage}, {"seconds", t.seconds}});
  }
  ojson doc;
  doc["tool"] = k_tool_version;
  doc["stages"] = std::move(stages);
  return doc.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::k_io, "cannot open " + path + " for writing");
  out << content;
  if (!out) throw Error(ErrorCategory::k_io, "failed writing " + path);
}

void write_sigma_csv(const std::string& path, const SourceMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::k_io, "cannot open " + path + " for writing");
  out << "t";
  for (Eigen::Index j = 0; j < map.sigma_a.cols(); ++j) out << ",sigmaA" << (j + 1);
  for (Eigen::Index j = 0; j < map.sigma_b.cols(); ++j) out << ",sigmaB" << (j + 1);
  out << ",defined\n";
  char buf[64];
  for (std::size_t i = 0; i < map.length(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(i + 1) * map.dt);
    out << buf;
    for (Eigen::Index j = 0; j < map.sigma_a.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", map.sigma_a(static_cast<Eigen::Index>(i), j));
      out << ',' << buf;
    }
    for (Eigen::Index j = 0; j < map.sigma_b.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", map.sigma_b(static_cast<Eigen::Index>(i), j));
      out << ',' << buf;
    }
    out << ',' << (map.defined[i] ? 1 : 0) << '\n';
  }
  if (!out) throw Error(ErrorCategory::k_io, "failed writing " + path);
}

void write_cloud_csv(const std::string& path, const InvariantField& with_multiplets,
                     const NeighborhoodIndex& idx, bool group_a) {
  if (!with_multiplets.multiplets_built) {
    throw Error(ErrorCategory::k_invalid_argument, "multiplets not built for cloud output");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::k_io, "cannot open " + path + " for writing");
  const auto& labels = group_a ? with_multiplets.labels_a : with_multiplets.labels_b;
  const auto& values = group_a ? with_multiplets.multiplet_a : with_multiplets.multiplet_b;
  out << "cell_id";
  for (Eigen::Index j = 0; j < idx.cells.front().center.size(); ++j) out << ",center" << (j + 1);
  for (const auto& label : labels) out << ',' << label;
  out << '\n';
  char buf[64];
  for (std::size_t cell = 0; cell < idx.n_cells(); ++cell) {
    if (!with_multiplets.valid[cell]) continue;
    out << cell;
    const Vec& center = idx.cells[cell].center;
    for (Eigen::Index j = 0; j < center.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", center(j));
      out << ',' << buf;
    }
    const Vec& v = values[cell];
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", v(j));
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCategory::k_io, "failed writing " + path);
}

EvaluationResult evaluate_against_truth(const SourceMap& map, const TimeSeries& truth,
                                        std::size_t sample_offset) {
  const Eigen::Index d_total = map.sigma_a.cols() + map.sigma_b.cols();
  const Eigen::Index n_truth = truth.samples.cols();
  if (d_total == 0 || n_truth == 0) {
    throw Error(ErrorCategory::k_invalid_argument, "empty evaluation inputs");
  }

  // collect defined samples that land inside the truth series
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < map.length(); ++i) {
    if (!map.defined[i]) continue;
    const std::size_t t_row = i + sample_offset;
    if (t_row >= truth.length()) break;
    rows.push_back(i);
  }
  if (rows.size() < 10) {
    throw Error(ErrorCategory::k_insufficient_data, "too few defined samples for evaluation");
  }

  Mat rho(d_total, n_truth);
  for (Eigen::Index s = 0; s < d_total; ++s) {
    std::vector<double> sigma_col(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(rows[i]);
      sigma_col[i] = s < map.sigma_a.cols()
                         ? map.sigma_a(r, s)
                         : map.sigma_b(r, s - map.sigma_a.cols());
    }
    for (Eigen::Index t = 0; t < n_truth; ++t) {
      std::vector<double> truth_col(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        truth_col[i] =
            truth.samples(static_cast<Eigen::Index>(rows[i] + sample_offset), t);
      }
      rho(s, t) = spearman(sigma_col, truth_col);
    }
  }

  EvaluationResult result;
  result.pairing.assign(static_cast<std::size_t>(d_total), -1);
  result.spearman.assign(static_cast<std::size_t>(d_total), 0.0);

  if (d_total == n_truth && d_total <= 6) {
    // exhaustive assignment maximizing total |rho|
    std::vector<int> perm(static_cast<std::size_t>(n_truth));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_score = -1.0;
    do {
      double score = 0.0;
      for (Eigen::Index s = 0; s < d_total; ++s) {
        score += std::abs(rho(s, perm[static_cast<std::size_t>(s)]));
      }
      if (score > best_score) {
        best_score = score;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (Eigen::Index s = 0; s < d_total; ++s) {
      result.pairing[static_cast<std::size_t>(s)] = best[static_cast<std::size_t>(s)];
      result.spearman[static_cast<std::size_t>(s)] = rho(s, best[static_cast<std::size_t>(s)]);
    }
  } else {
    // unequal counts: each recovered column reports its best truth column
    for (Eigen::Index s = 0; s < d_total; ++s) {
      Eigen::Index arg = 0;
      rho.row(s).cwiseAbs().maxCoeff(&arg);
      result.pairing[static_cast<std::size_t>(s)] = static_cast<int>(arg);
      result.spearman[static_cast<std::size_t>(s)] = rho(s, arg);
    }
  }

  result.cross_max = 0.0;
  for (Eigen::Index s = 0; s < d_total; ++s) {
    for (Eigen::Index t = 0; t < n_truth; ++t) {
      if (result.pairing[static_cast<std::size_t>(s)] == static_cast<int>(t)) continue;
      result.cross_max = std::max(result.cross_max, std::abs(rho(s, t)));
    }
  }
  return result;
}

}  // namespace ibss
