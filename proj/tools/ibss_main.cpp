#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ibss/audio.hpp"
#include "ibss/common.hpp"
#include "ibss/features.hpp"
#include "ibss/generators.hpp"
#include "ibss/pipeline.hpp"

namespace fs = std::filesystem;
using ibss::Error;
using ibss::ErrorCategory;
using ojson = nlohmann::ordered_json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  int threads = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "config file (INI-style sections)");
  cmd->add_option("--set", opts.overrides, "override config values, section.key=value");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--threads", opts.threads, "worker thread cap (0 = hardware)");
}

ibss::RunConfig load_config(const CommonOpts& opts) {
  ibss::RunConfig config;
  if (!opts.config_path.empty()) config = ibss::parse_config_file(opts.config_path);
  for (const auto& assignment : opts.overrides) ibss::apply_override(config, assignment);
  if (!opts.out_dir.empty()) config.out_dir = opts.out_dir;
  if (opts.threads >= 0) config.threads = opts.threads;
  return config;
}

fs::path prepare_out_dir(const ibss::RunConfig& config) {
  fs::path dir(config.out_dir);
  fs::create_directories(dir);
  return dir;
}

void write_manifest(const fs::path& dir, const std::vector<std::string>& files) {
  ojson doc;
  doc["tool"] = ibss::k_tool_version;
  doc["manifest"] = files;
  ibss::write_text_file((dir / "manifest.json").string(), doc.dump(2) + "\n");
}

int cmd_synth(const CommonOpts& opts, double duration_override, std::uint64_t seed_override,
              bool have_seed) {
  ibss::RunConfig config = load_config(opts);
  if (duration_override > 0.0) config.duration_s = duration_override;
  if (have_seed) config.seed = seed_override;
  fs::path dir = prepare_out_dir(config);

  ibss::SceneSpec scene = ibss::default_scene(config.duration_s, config.seed);
  ibss::SceneResult result = ibss::mix_scene(scene);

  ibss::write_wav((dir / "scene.wav").string(), result.pcm, scene.sample_rate);
  ibss::save_series(result.ground_truth, (dir / "truth.csv").string(),
                    ibss::SeriesFormat::k_csv);
  ibss::write_text_file((dir / "config_echo.ini").string(), ibss::echo_config(config));
  write_manifest(dir, {"scene.wav", "truth.csv", "config_echo.ini", "manifest.json"});
  std::cout << "synth: wrote " << (dir / "scene.wav").string() << " ("
            << result.pcm.size() << " samples at " << scene.sample_rate << " Hz)\n";
  return 0;
}

int cmd_featurize(const CommonOpts& opts, const std::string& in_path, bool no_reduce,
                  int target_dim_override) {
  ibss::RunConfig config = load_config(opts);
  if (!in_path.empty()) config.wav_in = in_path;
  if (no_reduce) config.reduce = false;
  if (target_dim_override > 0) config.target_dim = target_dim_override;
  if (config.wav_in.empty()) {
    throw Error(ErrorCategory::k_invalid_argument, "featurize needs --in or featurize.wav_in");
  }
  fs::path dir = prepare_out_dir(config);

  ibss::WavData wav = ibss::read_wav(config.wav_in);
  ibss::TimeSeries features = ibss::featurize(wav);
  ibss::save_series(features, (dir / "features.bin").string(), ibss::SeriesFormat::k_binary);

  std::vector<std::string> manifest{"features.bin", "config_echo.ini", "manifest.json"};
  if (config.reduce) {
    ibss::ReducedSeries reduced =
        ibss::reduce_dimension(features, config.target_dim, config.reduce_neighborhoods,
                               config.residual_limit, config.reduce_patch_k);
    ibss::save_series(reduced.series, (dir / "trajectory.csv").string(),
                      ibss::SeriesFormat::k_csv);
    ojson model;
    model["target_dim"] = reduced.model.target_dim;
    model["explained_variance"] =
        std::vector<double>(reduced.model.explained.data(),
                            reduced.model.explained.data() + reduced.model.explained.size());
    model["residual_profile"] = std::vector<double>(
        reduced.model.residual_profile.data(),
        reduced.model.residual_profile.data() + reduced.model.residual_profile.size());
    model["residual"] = reduced.model.residual;
    model["intrinsic_dim_estimate"] = reduced.model.intrinsic_dim_estimate;
    model["stitch_disagreement"] = reduced.model.stitch_disagreement;
    ibss::write_text_file((dir / "reduction.json").string(), model.dump(2) + "\n");
    manifest.insert(manifest.begin() + 1, {"trajectory.csv", "reduction.json"});
    std::cout << "featurize: residual " << reduced.model.residual << " at dim "
              << config.target_dim << ", intrinsic estimate "
              << reduced.model.intrinsic_dim_estimate << "\n";
  }
  ibss::write_text_file((dir / "config_echo.ini").string(), ibss::echo_config(config));
  write_manifest(dir, manifest);
  std::cout << "featurize: " << features.length() << " frames x " << features.n_channels()
            << " features, dt " << features.dt << " s\n";
  return 0;
}

int cmd_bss(const CommonOpts& opts, const std::string& in_path, const std::string& truth_path) {
  ibss::RunConfig config = load_config(opts);
  if (!in_path.empty()) config.input = in_path;
  if (!truth_path.empty()) config.truth = truth_path;
  if (config.input.empty()) {
    throw Error(ErrorCategory::k_invalid_argument, "bss needs --in or bss.input");
  }
  fs::path dir = prepare_out_dir(config);

  const bool binary = config.input.size() > 4 &&
                      config.input.substr(config.input.size() - 4) == ".bin";
  ibss::TimeSeries series = ibss::load_series(
      config.input, binary ? ibss::SeriesFormat::k_binary : ibss::SeriesFormat::k_csv);

  ibss::BssOutcome outcome = ibss::run_bss(series, config);

  std::vector<std::string> manifest{"report.json", "timings.json", "config_echo.ini"};
  if (outcome.partition.map.has_value()) {
    ibss::write_sigma_csv((dir / "sigma.csv").string(), *outcome.partition.map);
    manifest.push_back("sigma.csv");
    const auto& grouping =
        outcome.partition.candidates[static_cast<std::size_t>(outcome.partition.mapped_index)]
            .grouping;
    ibss::InvariantField with_multiplets =
        ibss::build_multiplets(outcome.invariants, grouping);
    ibss::write_cloud_csv((dir / "cloud_a.csv").string(), with_multiplets, outcome.index, true);
    ibss::write_cloud_csv((dir / "cloud_b.csv").string(), with_multiplets, outcome.index, false);
    manifest.push_back("cloud_a.csv");
    manifest.push_back("cloud_b.csv");
  }

  ibss::write_text_file((dir / "report.json").string(),
                        ibss::report_json(outcome, config, manifest, config.input));
  ibss::write_text_file((dir / "timings.json").string(), ibss::timings_json(outcome));
  ibss::write_text_file((dir / "config_echo.ini").string(), ibss::echo_config(config));

  std::cout << "bss: verdict " << (outcome.partition.separable ? "separable" : "inseparable");
  if (outcome.partition.winning_index >= 0) {
    const auto& g = outcome.partition.winning_grouping();
    std::cout << ", d_A=" << g.d_a();
  }
  std::cout << " (" << outcome.stats.cells_retained << " cells, "
            << outcome.stats.frames_valid << " framed)\n";
  return 0;
}

ibss::SourceMap sigma_from_csv(const std::string& path) {
  ibss::TimeSeries ts = ibss::load_series(path, ibss::SeriesFormat::k_csv);
  int d_a = 0, d_b = 0;
  int defined_col = -1;
  for (std::size_t j = 0; j < ts.channel_names.size(); ++j) {
    const std::string& name = ts.channel_names[j];
    if (name.rfind("sigmaA", 0) == 0) ++d_a;
    if (name.rfind("sigmaB", 0) == 0) ++d_b;
    if (name == "defined") defined_col = static_cast<int>(j);
  }
  if (d_a == 0 || d_b == 0 || defined_col < 0) {
    throw Error(ErrorCategory::k_format, "unexpected sigma.csv layout in " + path);
  }
  ibss::SourceMap map;
  map.dt = ts.dt;
  map.sigma_a = ts.samples.leftCols(d_a);
  map.sigma_b = ts.samples.middleCols(d_a, d_b);
  map.defined.resize(ts.length());
  for (std::size_t i = 0; i < ts.length(); ++i) {
    map.defined[i] = ts.samples(static_cast<Eigen::Index>(i), defined_col) > 0.5 ? 1 : 0;
  }
  return map;
}

int cmd_report(const std::string& run_dir) {
  fs::path dir(run_dir);
  fs::path report_path = dir / "report.json";
  if (!fs::exists(report_path)) {
    std::cerr << "error: missing " << report_path.string() << "\n";
    return 1;
  }
  std::ifstream in(report_path);
  ojson doc = ojson::parse(in, nullptr, true);

  for (const auto& entry : doc["manifest"]) {
    fs::path p = dir / entry.get<std::string>();
    if (!fs::exists(p)) {
      std::cerr << "error: manifest names missing file " << p.string() << "\n";
      return 1;
    }
  }

  std::cout << "run: " << doc.value("input", std::string("?")) << "\n";
  std::cout << "verdict: " << doc.value("verdict", std::string("?")) << "\n";
  if (!doc["grouping"].is_null()) {
    std::cout << "grouping: A=" << doc["grouping"]["a"].dump()
              << " B=" << doc["grouping"]["b"].dump() << "\n";
    std::cout << "statistic: " << doc["statistic"].dump()
              << " (threshold " << doc["threshold"].dump() << ")\n";
  }
  if (!doc["linear"].is_null()) {
    std::cout << "linear: " << doc["linear"].dump() << ", direction_cov "
              << doc["direction_cov"].dump() << "\n";
  }
  const auto& cells = doc["cells"];
  std::cout << "cells: " << cells["retained"] << " retained, " << cells["frames_valid"]
            << " framed, " << cells["frames_degenerate"] << " degenerate\n";
  std::cout << "candidates:\n";
  for (const auto& cand : doc["candidates"]) {
    std::cout << "  A=" << cand["grouping"]["a"].dump()
              << " residuals=" << cand["manifold_a"]["residual_fraction"].dump() << "/"
              << cand["manifold_b"]["residual_fraction"].dump()
              << " stat=" << cand["statistic"].dump()
              << (cand["passed"].get<bool>() ? " PASS" : " fail");
    const std::string failure = cand.value("failure", std::string());
    if (!failure.empty()) std::cout << " [" << failure << "]";
    std::cout << "\n";
  }

  const std::string truth_path = doc["config"]["bss"].value("truth", std::string());
  const bool has_sigma = fs::exists(dir / "sigma.csv");
  if (truth_path.empty() || !has_sigma) {
    std::cout << "evaluation: no ground truth configured\n";
    return 0;
  }
  if (!fs::exists(truth_path)) {
    std::cerr << "error: configured truth file missing: " << truth_path << "\n";
    return 1;
  }
  ibss::SourceMap map = sigma_from_csv((dir / "sigma.csv").string());
  ibss::TimeSeries truth = ibss::load_series(truth_path, ibss::SeriesFormat::k_csv);
  ibss::EvaluationResult eval = ibss::evaluate_against_truth(map, truth);
  std::cout << "evaluation (Spearman after pairing/sign):\n";
  const int d_a = static_cast<int>(map.sigma_a.cols());
  for (std::size_t s = 0; s < eval.spearman.size(); ++s) {
    const std::string label = static_cast<int>(s) < d_a
                                  ? "sigmaA" + std::to_string(s + 1)
                                  : "sigmaB" + std::to_string(s + 1 - static_cast<std::size_t>(d_a));
    std::cout << "  " << label << " -> truth[" << eval.pairing[s]
              << "]: rho = " << eval.spearman[s] << "\n";

    // scatter data for plotting: recovered coordinate vs its paired truth
    std::ofstream scatter(dir / ("scatter_" + label + ".csv"));
    scatter << label << ",truth" << eval.pairing[s] << "\n";
    const Eigen::Index t_col = eval.pairing[s];
    std::size_t written = 0;
    for (std::size_t i = 0; i < map.length() && written < 20000; ++i) {
      if (!map.defined[i]) continue;
      if (i + 1 >= truth.length()) break;
      const double sv = static_cast<int>(s) < d_a
                            ? map.sigma_a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s))
                            : map.sigma_b(static_cast<Eigen::Index>(i),
                                          static_cast<Eigen::Index>(static_cast<int>(s) - d_a));
      char buf[80];
      std::snprintf(buf, sizeof(buf), "%.12g,%.12g", sv,
                    truth.samples(static_cast<Eigen::Index>(i + 1), t_col));
      scatter << buf << "\n";
      ++written;
    }
  }
  std::cout << "  cross-pairing max |rho| = " << eval.cross_max << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"locally invariant source separation pipeline"};
  app.require_subcommand(1);

  CommonOpts synth_opts, feat_opts, bss_opts;
  double synth_duration = 0.0;
  std::uint64_t synth_seed = 0;
  bool have_synth_seed = false;
  std::string feat_in, bss_in, bss_truth, report_dir = "out";
  bool no_reduce = false;
  int feat_dim = 0;

  CLI::App* synth = app.add_subcommand("synth", "synthesize a two-voice scene");
  add_common(synth, synth_opts);
  synth->add_option("--duration", synth_duration, "scene length in seconds");
  synth->add_option("--seed", synth_seed, "scene seed")->each([&](const std::string&) {
    have_synth_seed = true;
  });

  CLI::App* featurize = app.add_subcommand("featurize", "log mel features + reduction");
  add_common(featurize, feat_opts);
  featurize->add_option("--in", feat_in, "input WAV path");
  featurize->add_flag("--no-reduce", no_reduce, "stop after the feature series");
  featurize->add_option("--target-dim", feat_dim, "reduced dimension");

  CLI::App* bss = app.add_subcommand("bss", "run the separation pipeline");
  add_common(bss, bss_opts);
  bss->add_option("--in", bss_in, "input series (.csv or .bin)");
  bss->add_option("--truth", bss_truth, "ground-truth series for later evaluation");

  CLI::App* report = app.add_subcommand("report", "summarize a finished run");
  report->add_option("--run", report_dir, "run directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_opts, synth_duration, synth_seed, have_synth_seed);
    if (featurize->parsed()) return cmd_featurize(feat_opts, feat_in, no_reduce, feat_dim);
    if (bss->parsed()) return cmd_bss(bss_opts, bss_in, bss_truth);
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const Error& e) {
    std::cerr << "error: " << ibss::error_category_name(e.category()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
