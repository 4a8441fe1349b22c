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

// Semantic-dimension augmentation: placement ("where") and shape ("what")
// predictors fitted from an agent's layouts, instance insertion, and a
// three-scale plausibility scorer with threshold acceptance.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "parl/world.hpp"

namespace parl {

inline constexpr int kThingClasses = 2;  // car, pedestrian
inline constexpr int kPositionBins = 8;  // per axis
inline constexpr int kScaleBins = 3;
inline constexpr int kContextBins = 3;   // touching road, within two cells, farther
inline constexpr int kScorerScales = 3;  // 1x, 1/2x, 1/4x
inline constexpr int kComponents = 4;    // box layout, instance layout, affine, shape

int thing_index(ClassId c);
ClassId thing_class(int index);

// Scale bin of an instance by box area: <=3, <=10, larger.
int scale_bin(const CellRect& box);
// Distance of the nearest drivable cell (road, lane marking) from the ring
// around `box`: 0 touching, 1 within two more cells, 2 farther.
int context_bin(const ClassGrid& grid, const CellRect& box);
std::pair<int, int> position_bin(const Affine& affine, int width, int height);

class WherePredictor {
 public:
  static constexpr int kBins = kContextBins * kPositionBins * kPositionBins * kScaleBins;

  WherePredictor() = default;
  WherePredictor(int width, int height, double alpha, std::array<std::vector<std::uint32_t>, kThingClasses> counts);

  static int bin(int context, int px, int py, int scale) {
    return ((context * kPositionBins + py) * kPositionBins + px) * kScaleBins + scale;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double alpha() const { return alpha_; }
  bool fitted_for(ClassId c) const;
  std::uint64_t observed(ClassId c) const;
  std::uint32_t raw_count(ClassId c, int context, int px, int py, int scale) const {
    return counts_[thing_index(c)][bin(context, px, py, scale)];
  }
  double probability(ClassId c, int context, int px, int py, int scale) const {
    return probs_[thing_index(c)][bin(context, px, py, scale)];
  }
  const std::vector<std::uint32_t>& counts(ClassId c) const { return counts_[thing_index(c)]; }
  const std::vector<double>& probabilities(ClassId c) const { return probs_[thing_index(c)]; }

  friend bool operator==(const WherePredictor&, const WherePredictor&) = default;

 private:
  int width_ = 0, height_ = 0;
  double alpha_ = 0.5;
  std::array<std::vector<std::uint32_t>, kThingClasses> counts_;
  std::array<std::vector<double>, kThingClasses> probs_;
};

using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

bool single_component(const Mask& mask);

struct ShapeTemplate {
  Mask mask;
  std::uint32_t weight = 1;
  friend bool operator==(const ShapeTemplate& a, const ShapeTemplate& b) {
    return a.weight == b.weight && a.mask.rows() == b.mask.rows() &&
           a.mask.cols() == b.mask.cols() && (a.mask == b.mask).all();
  }
};

class WhatPredictor {
 public:
  using Library = std::array<std::array<std::vector<ShapeTemplate>, kScaleBins>, kThingClasses>;

  WhatPredictor() = default;
  explicit WhatPredictor(Library library);

  const std::vector<ShapeTemplate>& templates(ClassId c, int scale) const {
    return library_[thing_index(c)][scale];
  }
  bool has_class(ClassId c) const;
  const Library& library() const { return library_; }
  friend bool operator==(const WhatPredictor&, const WhatPredictor&) = default;

 private:
  Library library_;
};

struct AugmentationCandidate {
  SemanticMap semantic;
  InstanceMap instances;
  std::vector<InstanceRecord> inserted;
  std::uint64_t source_sample_id = 0;
  std::optional<double> score;

  Layout layout() const { return {semantic, instances}; }
  friend bool operator==(const AugmentationCandidate&, const AugmentationCandidate&) = default;
};

struct Predictors {
  WherePredictor where;
  WhatPredictor what;
};

WherePredictor fit_where(std::span<const Layout> layouts, double alpha = 0.5);
WhatPredictor fit_what(std::span<const Layout> layouts);
Predictors fit_predictors(std::span<const Layout> layouts, double alpha = 0.5);

// Draws a placement and a shape for `cls` and writes it into a copy of
// `base`. Returns nullopt when `max_resamples` placements all fall outside
// the map, or when no placement has mass.
std::optional<AugmentationCandidate> sample_insertion(const WherePredictor& where,
                                                      const WhatPredictor& what,
                                                      const Layout& base, ClassId cls,
                                                      std::uint64_t seed, int max_resamples = 8,
                                                      std::uint64_t source_sample_id = 0);

// Per-scale lookup tables. Every entry is log p - log max p for its
// conditioning class, so the most typical configuration scores 0.
struct ScaleTables {
  static constexpr int kOverlapBins = 4;
  static constexpr int kFillBins = 4;
  static constexpr int kAspectBins = 3;

  std::vector<double> ring;       // [thing][class]
  std::vector<double> context;    // [thing][context]
  std::vector<double> transform;  // [thing][context][scale]
  std::vector<double> row;        // [thing][row bin]
  std::vector<double> overlap;    // [thing][overlap bin]
  std::vector<double> shape;      // [thing][fill][aspect]
  friend bool operator==(const ScaleTables&, const ScaleTables&) = default;
};

// Logistic squashing of a raw component statistic.
struct ComponentCalibration {
  double center = 0.0;
  double temperature = 1.0;
  friend bool operator==(const ComponentCalibration&, const ComponentCalibration&) = default;
};

struct ScorerConfig {
  double threshold = 0.5;
  std::array<double, kComponents> weights = {0.25, 0.25, 0.25, 0.25};
  double margin = 0.1;
  double smoothing = 0.5;
  std::uint64_t seed = 0x5C0DE;
};

// Raw component statistics of a layout, [component][scale].
using ComponentRaw = std::array<std::array<double, kScorerScales>, kComponents>;

class PlausibilityScorer {
 public:
  PlausibilityScorer() = default;
  PlausibilityScorer(double threshold, std::array<double, kComponents> weights,
                     std::array<ScaleTables, kScorerScales> tables,
                     std::array<std::array<ComponentCalibration, kScorerScales>, kComponents> calibration,
                     double knot);

  double threshold() const { return threshold_; }
  const std::array<double, kComponents>& weights() const { return weights_; }
  const std::array<ScaleTables, kScorerScales>& tables() const { return tables_; }
  const std::array<std::array<ComponentCalibration, kScorerScales>, kComponents>& calibration() const {
    return calibration_;
  }
  double knot() const { return knot_; }

  ComponentRaw raw(const Layout& layout) const;
  // Calibrated component scores in [0,1], [component][scale].
  ComponentRaw components(const Layout& layout) const;
  // Weighted mean of the component scores before the threshold map.
  double combined(const Layout& layout) const;
  double score(const Layout& layout) const;
  bool accepts(double score, std::optional<double> threshold = std::nullopt) const {
    return score >= threshold.value_or(threshold_);
  }

  friend bool operator==(const PlausibilityScorer&, const PlausibilityScorer&) = default;

 private:
  double threshold_ = 0.5;
  std::array<double, kComponents> weights_{};
  std::array<ScaleTables, kScorerScales> tables_;
  std::array<std::array<ComponentCalibration, kScorerScales>, kComponents> calibration_{};
  double knot_ = 0.5;
};

// Calibration summary kept next to a fitted scorer.
struct ScorerDiagnostics {
  std::size_t fit_layouts = 0;
  std::size_t calibration_layouts = 0;
  std::size_t negatives = 0;
  std::vector<double> real_scores;
  std::vector<double> negative_scores;
  std::array<std::array<std::vector<double>, kScorerScales>, kComponents> real_components;
  std::array<std::array<std::vector<double>, kScorerScales>, kComponents> negative_components;
  double real_median = 0.0;
  double real_pass_rate = 0.0;
  double negative_pass_rate = 0.0;
};

struct FittedScorer {
  PlausibilityScorer scorer;
  ScorerDiagnostics diagnostics;
};

enum class Corruption : std::uint8_t { in_building = 0, overlap = 1, in_sky = 2 };

// Programmatic implausible variants of a real layout, used as calibration
// negatives. Returns nullopt when the layout has no room for the corruption.
std::optional<Layout> corrupt_layout(const Layout& layout, Corruption kind, std::uint64_t seed);

// Fits the tables on three quarters of the layouts and calibrates on the
// rest against internally generated corruptions.
FittedScorer fit_scorer_with_diagnostics(std::span<const Layout> real_layouts,
                                         const ScorerConfig& config = {});
PlausibilityScorer fit_scorer(std::span<const Layout> real_layouts, double threshold = 0.5);

double score(const PlausibilityScorer& scorer, const AugmentationCandidate& candidate);
AugmentationCandidate scored(const PlausibilityScorer& scorer, AugmentationCandidate candidate);

struct AugmentConfig {
  std::optional<double> threshold;  // overrides the scorer threshold
  int budget_factor = 16;
  int max_resamples = 8;
};

struct AugmentStats {
  int attempts = 0;
  int placement_failures = 0;
  int rejected = 0;
  int accepted = 0;
  friend bool operator==(const AugmentStats&, const AugmentStats&) = default;
};

struct AugmentResult {
  std::vector<AugmentationCandidate> candidates;
  AugmentStats stats;
  friend bool operator==(const AugmentResult&, const AugmentResult&) = default;
};

AugmentResult augment_semantic(const Layout& base, std::uint64_t source_sample_id, int fan_out,
                               const Predictors& predictors, const PlausibilityScorer& scorer,
                               std::uint64_t seed, const AugmentConfig& config = {});
// Without a scorer every placed candidate is accepted and left unscored.
AugmentResult augment_semantic(const Layout& base, std::uint64_t source_sample_id, int fan_out,
                               const Predictors& predictors, const PlausibilityScorer* scorer,
                               std::uint64_t seed, const AugmentConfig& config = {});
AugmentResult augment_semantic(const DrivingSample& sample, int fan_out,
                               const Predictors& predictors, const PlausibilityScorer& scorer,
                               std::uint64_t seed, const AugmentConfig& config = {});

}  // namespace parl
