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

// Imitation-learning policies: a fixed featurizer over segmented scenarios
// and closed-form ridge regressors mapping features to steering torque.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "parl/world.hpp"

namespace parl {

inline constexpr int kPoolRows = 4;
inline constexpr int kPoolCols = 4;
inline constexpr int kOccupancyDim = kNumClasses * kPoolRows * kPoolCols;  // 128
inline constexpr int kFeatureDim = kOccupancyDim + 2;                      // + lane offset, obstacle offset
inline constexpr int kWeightDim = kFeatureDim + 1;                         // + bias
inline constexpr int kLaneOffsetFeature = kOccupancyDim;
inline constexpr int kObstacleFeature = kOccupancyDim + 1;

// Occupancy layout: index = (class * kPoolRows + pool_row) * kPoolCols + pool_col.
using FeatureVector = Eigen::Matrix<double, kFeatureDim, 1>;

FeatureVector featurize_map(const SemanticMap& semantic);
// Segments the scenario under `style`, then featurizes the class grid.
// Throws DegenerateInputError when no road is visible.
FeatureVector featurize(const Scenario& scenario, const StyleModel& style);
FeatureVector featurize(const DrivingSample& sample, const StyleModel& style);

struct LabeledFeatures {
  FeatureVector features;
  double torque = 0.5;
};
using Dataset = std::vector<LabeledFeatures>;

// With `skipped` set, samples without a visible road are counted there and
// left out instead of raising DegenerateInputError.
Dataset make_dataset(std::span<const DrivingSample> samples, const StyleModel& style,
                     std::size_t* skipped = nullptr);

struct TrainingMeta {
  std::uint32_t samples = 0;
  std::array<std::uint32_t, 3> provenance{};  // human, crowdsourced, augmented
  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

class PolicyModel {
 public:
  using Weights = Eigen::Matrix<double, kWeightDim, 1>;

  PolicyModel() : weights_(Weights::Zero()) { weights_(0) = 0.5; }
  PolicyModel(Weights weights, double lambda, TrainingMeta meta = {});

  static PolicyModel constant(double torque);

  const Weights& weights() const { return weights_; }
  double lambda() const { return lambda_; }
  const TrainingMeta& meta() const { return meta_; }
  TrainingMeta& meta() { return meta_; }

  double raw(const FeatureVector& f) const { return weights_(0) + weights_.tail<kFeatureDim>().dot(f); }
  // Clamped to [0,1].
  double predict(const FeatureVector& f) const;

  friend bool operator==(const PolicyModel&, const PolicyModel&) = default;

 private:
  Weights weights_;
  double lambda_ = 0.0;
  TrainingMeta meta_;
};

inline constexpr double kDefaultRidge = 1e-6;

// Rows are put in a canonical order before the normal equations are formed,
// so the result does not depend on dataset order.
PolicyModel train(const Dataset& data, double lambda = kDefaultRidge);

// Ridge on local data pulled toward the shared weights; beta = 1 returns the
// shared weights, beta = 0 equals train(local).
PolicyModel fine_tune(const PolicyModel& shared, const Dataset& local, double beta,
                      double lambda = kDefaultRidge);

struct LocalPolicy {
  PolicyModel policy;
  StyleModel style;
};

struct CrowdsourceOptions {
  bool style_weighting = true;
  double bandwidth = 0.02;  // affinity = exp(-style distance / bandwidth)
};

// Mean L-infinity distance between matching class means of two styles.
double style_distance(const StyleModel& a, const StyleModel& b);

// Each member labels the scenario through its own style; labels are the
// affinity-weighted mean of member predictions. Members that cannot see a
// road are skipped; with no usable member the label is 0.5.
// One member's prediction through its own style; nullopt when it cannot see a road.
std::optional<double> member_label(const LocalPolicy& member, const Scenario& scenario);

// Affinity-weighted mean of the available predictions for a scenario rendered
// in style `target`, clamped to their range. 0.5 when nobody answered.
double aggregate_labels(StyleId target, std::span<const StyleModel> member_styles,
                        std::span<const std::optional<double>> predictions,
                        const CrowdsourceOptions& options = {});

std::vector<double> crowdsource_labels(std::span<const Scenario> scenarios,
                                       std::span<const LocalPolicy> members,
                                       const CrowdsourceOptions& options = {});

struct EvaluationReport {
  std::array<double, 3> task_error{};         // mean |prediction - label|, by TaskType
  std::array<double, 3> task_failure_rate{};  // share of samples with error > delta_fail
  std::array<std::uint32_t, 3> task_count{};
  double overall_error = 0.0;
  double overall_failure_rate = 0.0;
  std::uint32_t count = 0;
  double delta_fail = 0.05;
  friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

inline constexpr double kDefaultFailureDelta = 0.05;

// Samples the featurizer cannot perceive are scored with a neutral 0.5 command.
EvaluationReport evaluate(const PolicyModel& model, std::span<const DrivingSample> testset,
                          const StyleModel& style, double delta_fail = kDefaultFailureDelta);

}  // namespace parl
