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
#include "parl/style.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "parl/error.hpp"
#include "parl/rng.hpp"

namespace parl {

StyleModel fit_style(std::span<const DrivingSample> samples, const StyleFitOptions& options) {
  if (samples.empty()) throw FitError("style fitting needs at least one sample");
  Eigen::Matrix<double, kNumClasses, kChannels> sum = decltype(sum)::Zero();
  Eigen::Matrix<double, kNumClasses, kChannels> sum_sq = decltype(sum_sq)::Zero();
  Eigen::Matrix<double, kNumClasses, 1> count = decltype(count)::Zero();
  for (const auto& s : samples) {
    const auto& sc = s.scenario;
    if (sc.width != s.semantic.width() || sc.height != s.semantic.height()) {
      throw FitError("scenario and semantic map sizes differ");
    }
    for (int y = 0; y < sc.height; ++y) {
      for (int x = 0; x < sc.width; ++x) {
        const int c = index_of(s.semantic.at(x, y));
        count(c) += 1.0;
        for (int k = 0; k < kChannels; ++k) {
          const double v = sc.pixels[k](y, x);
          sum(c, k) += v;
          sum_sq(c, k) += v * v;
        }
      }
    }
  }
  std::string missing;
  for (int c = 0; c < kNumClasses; ++c) {
    if (count(c) == 0.0) {
      if (!missing.empty()) missing += ", ";
      missing += class_name(static_cast<ClassId>(c));
    }
  }
  if (!missing.empty()) throw FitError("style fitting lacks coverage of classes: " + missing);

  Palette means;
  Spreads spreads;
  const double cap = std::nextafter(0.5 * options.separation_floor, 0.0);
  for (int c = 0; c < kNumClasses; ++c) {
    double widest = 0.0;
    for (int k = 0; k < kChannels; ++k) {
      const double m = sum(c, k) / count(c);
      means(c, k) = std::clamp(m, 0.0, 1.0);
      widest = std::max(widest, std::sqrt(std::max(0.0, sum_sq(c, k) / count(c) - m * m)));
    }
    spreads(c) = std::min(widest, cap);
  }
  const StyleId id = options.style.value_or(samples.front().scenario.style);
  const std::uint64_t texture = derive_seed(0x7E87E, {id.value});
  if (!options.relaxed) {
    for (int a = 0; a < kNumClasses; ++a) {
      for (int b = a + 1; b < kNumClasses; ++b) {
        if ((means.row(a) - means.row(b)).cwiseAbs().maxCoeff() < options.separation_floor) {
          throw FitError("classes " + std::string(class_name(static_cast<ClassId>(a))) + " and " +
                         std::string(class_name(static_cast<ClassId>(b))) +
                         " are closer than the separation floor");
        }
      }
    }
  }
  return StyleModel(id, means, spreads, texture, 0xFF, options.separation_floor,
                    options.relaxed ? StyleModel::Check::relaxed : StyleModel::Check::strict);
}

Scenario cross_render(const Layout& layout, const StyleModel& style, std::uint64_t seed) {
  return render(layout.semantic, layout.instances, style, seed);
}

Scenario cross_render(const AugmentationCandidate& candidate, const StyleModel& style,
                      std::uint64_t seed) {
  return render(candidate.semantic, candidate.instances, style, seed);
}

}  // namespace parl
