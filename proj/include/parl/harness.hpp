/*
 * Copyright 2026 The PARL Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Experiment runner: builds the style-disjoint robot worlds, runs local IL,
// centralized IL, the peer-assisted round and two image-space augmentation
// baselines on identical splits, and writes reports plus every artifact the
// reports were computed from.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "parl/protocol.hpp"

namespace parl {

struct ExperimentConfig {
  int robots = 3;
  int samples_per_task = 20;  // per robot; three tasks
  double holdout = 0.3;
  int fan_out = 2;
  double tau = 0.5;
  double beta = 0.8;
  double lambda = kDefaultRidge;
  double delta_fail = kDefaultFailureDelta;
  std::uint64_t world_seed = 1;
  std::uint64_t augment_seed = 7;
  std::uint64_t protocol_seed = 11;
  bool color_jitter = true;
  bool random_crop = true;
  double jitter_magnitude = 0.15;
  double crop_min_scale = 0.5;
  int baseline_copies = 6;
  bool per_robot_models = false;
  bool exclude_self = false;
  bool remote_labeling = false;
  int max_missing = 0;
  std::set<std::uint16_t> dropouts;
  std::string output_dir = "runs/default";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Throws ConfigError naming the offending field.
void validate(const ExperimentConfig& c);
// "key = value" lines in a fixed order; '#' starts a comment.
std::string to_text(const ExperimentConfig& c);
// Strict: unknown keys, repeated keys and malformed values are ConfigErrors.
// Keys not present keep their defaults. The result is validated.
ExperimentConfig parse_config(std::string_view text);
// Applies one key=value assignment, as used by both the file and CLI flags.
void set_config_value(ExperimentConfig& c, std::string_view key, std::string_view value);
std::vector<std::string> config_keys();

// ---------------------------------------------------------------------------
// Image-space baselines.

// Per-channel gain and offset drawn from [1-m, 1+m] and [-m, m], plus a
// shared contrast stretch around the image mean; results are clamped to [0,1].
// Maps, label, task and provenance are copied unchanged.
DrivingSample baseline_color_jitter(const DrivingSample& sample, std::uint64_t seed, double magnitude = 0.15);

struct CropWindow {
  int x0 = 0, y0 = 0, width = 0, height = 0;
  friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

// Area fraction in [min_scale, 1], aspect ratio in [3/4, 4/3], clipped to the grid.
CropWindow draw_crop_window(int width, int height, std::uint64_t seed, double min_scale);
// Nearest-neighbor resample of the window back to full size: output cell
// (x, y) reads source cell (x0 + floor((x + 0.5) * w / W), same for y).
// Instance boxes are recomputed; nullopt if the crop shows no road.
std::optional<DrivingSample> apply_crop(const DrivingSample& sample, const CropWindow& window);
// Up to eight windows are drawn until one keeps a road in view; otherwise
// the sample is returned unchanged. The label is kept even though the crop
// moves the road.
DrivingSample baseline_random_resized_crop(const DrivingSample& sample, std::uint64_t seed, double min_scale = 0.5);
// Window chosen by baseline_random_resized_crop, nullopt for the fallback.
std::optional<CropWindow> chosen_crop_window(const DrivingSample& sample, std::uint64_t seed, double min_scale = 0.5);

// ---------------------------------------------------------------------------
// Qualitative axes.

struct AugmenterOutputs {
  std::string name;
  std::size_t inputs = 0;
  // Parallel: each output layout and the reference it is compared against.
  // For geometric augmenters the reference is the source put through the
  // same transform, so only content changes count.
  std::vector<Layout> references;
  std::vector<Layout> outputs;
  // Samples generated, when one layout yields several (e.g. one per style).
  // Zero means outputs.size().
  std::size_t produced = 0;
};

struct QualitativeRow {
  std::string name;
  double number = 0.0;  // outputs per input
  bool semantic = false;
  bool instance = false;
  std::optional<double> reality;  // mean plausibility score
  std::string reality_grade;      // A..D, or n/a without a scorer
  friend bool operator==(const QualitativeRow&, const QualitativeRow&) = default;
};

std::string reality_grade(double mean_score, double threshold);
QualitativeRow qualitative_row(const AugmenterOutputs& out, const PlausibilityScorer* scorer);
std::vector<QualitativeRow> qualitative_table(const std::vector<AugmenterOutputs>& outs,
                                              const PlausibilityScorer* scorer);

// ---------------------------------------------------------------------------
// Experiment.

inline constexpr std::array<std::string_view, 5> kApproaches = {"local_il", "centralized_il", "parl",
                                                                "il_color_jitter", "il_random_crop"};

struct ApproachResult {
  std::string name;
  std::vector<std::optional<EvaluationReport>> robots;  // empty for robots without a result
  std::optional<EvaluationReport> overall;               // pooled over robots with a result
};

struct SplitInfo {
  int robot = 0;
  std::uint16_t style = 0;
  std::size_t train = 0, test = 0;
  std::uint64_t train_hash = 0, test_hash = 0;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ComparisonReport {
  ExperimentConfig config;
  std::vector<SplitInfo> splits;
  std::vector<ApproachResult> approaches;
  std::vector<SourceStats> augmentation;
  std::size_t pool_size = 0;
  std::size_t styles = 0;
  double acceptance_rate = 0.0;
  double fan_out_achieved = 0.0;  // accepted candidates per input map
  std::vector<QualitativeRow> qualitative;
  std::vector<std::string> dropped;  // robots that did not take part, with the reason
  std::uint64_t round_ticks = 0;
  std::uint32_t protocol_violations = 0;
  NetworkStats network;
  std::vector<std::pair<std::string, std::uint64_t>> artifacts;  // relative path, fnv1a of contents
  std::vector<CheckResult> checks;

  const ApproachResult* approach(std::string_view name) const;
  bool all_checks_pass() const;
};

// Robot worlds and the stratified split; per robot and task the last
// round(holdout * n) samples (at least one, at most n - 1) are held out.
std::vector<RobotSetup> generate_robots(const ExperimentConfig& c);

EvaluationReport combine_reports(const std::vector<EvaluationReport>& parts);

// Runs everything and writes artifacts under `out_dir` (created if needed).
// Module errors are rethrown as StageError.
ComparisonReport run_experiment(const ExperimentConfig& c, const std::filesystem::path& out_dir);

// Criteria evaluated by `run --check` and stored in the report.
std::vector<CheckResult> acceptance_checks(const ComparisonReport& r);

nlohmann::ordered_json to_json(const ComparisonReport& r);
std::string report_csv(const ComparisonReport& r);
// Markdown tables from a report JSON document (as written by run).
std::string report_markdown(const nlohmann::ordered_json& report);

// Re-evaluates the persisted models of a run directory against its persisted
// test splits; returns approach -> per-robot reports.
std::vector<ApproachResult> reevaluate_run(const std::filesystem::path& run_dir);

}  // namespace parl
