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

// Per-agent style models: moment fitting from an agent's own scenarios and
// re-rendering of arbitrary layouts in that agent's appearance.

#include <optional>
#include <span>

#include "parl/dat.hpp"
#include "parl/world.hpp"

namespace parl {

struct StyleFitOptions {
  double separation_floor = kDefaultSeparationFloor;
  // Style id for the fitted model; defaults to the style of the first sample.
  std::optional<StyleId> style;
  // Relaxed fits skip the separation check. Used only for the pooled
  // appearance model of the centralized baseline, which mixes domains.
  bool relaxed = false;
};

// Per-class pixel mean and standard deviation under each sample's semantic
// map. Spreads are clamped strictly below half the separation floor.
StyleModel fit_style(std::span<const DrivingSample> samples, const StyleFitOptions& options = {});

Scenario cross_render(const Layout& layout, const StyleModel& style, std::uint64_t seed);
Scenario cross_render(const AugmentationCandidate& candidate, const StyleModel& style,
                      std::uint64_t seed);

}  // namespace parl
