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
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "parl/dat.hpp"
#include "parl/error.hpp"
#include "parl/style.hpp"

using namespace parl;
using namespace parl::testing;

namespace {

// Every class on one map, in horizontal bands with road at the bottom.
SemanticMap banded_map(int width = 32, int height = 24) {
  ClassGrid g(height, width);
  for (int y = 0; y < height; ++y) g.row(y).setConstant(static_cast<std::uint8_t>(kNumClasses - 1 - y * kNumClasses / height));
  return SemanticMap(g);
}

DrivingSample sample_of(const SemanticMap& m, const StyleModel& s, std::uint64_t seed) {
  const InstanceMap inst = extract_instances(m);
  return {render(m, inst, s, seed), m, inst, 0.5, TaskType::straight, Provenance::human};
}

}  // namespace

TEST_SUITE("style") {

TEST_CASE("noiseless renders give back the class means") {
  const StyleModel s = flat_style();
  const std::vector<DrivingSample> samples = {sample_of(banded_map(), s, 1), sample_of(banded_map(), s, 2)};
  const StyleModel fit = fit_style(samples);
  for (int c = 0; c < kNumClasses; ++c) {
    for (int k = 0; k < kChannels; ++k) {
      // Pixels are stored as 32-bit floats, so the exact target is the float mean.
      CHECK(fit.class_means()(c, k) == doctest::Approx(static_cast<float>(s.class_means()(c, k))).epsilon(1e-12));
    }
  }
  CHECK(fit.class_spreads().maxCoeff() < 1e-6);
  CHECK(fit.style() == s.style());
}

TEST_CASE("noisy renders: means within three standard errors of the generator") {
  const World w = world_with_styles(3, 11);
  for (std::uint16_t id = 1; id <= 3; ++id) {
    const StyleModel& truth = w.style(StyleId{id});
    const auto samples = samples_for(w, StyleId{id}, 6, 5);
    Eigen::Matrix<double, kNumClasses, 1> n = decltype(n)::Zero();
    for (const auto& x : samples) {
      for (int c = 0; c < kNumClasses; ++c) n(c) += (x.semantic.grid() == c).count();
    }
    const StyleModel fit = fit_style(samples);
    for (int c = 0; c < kNumClasses; ++c) {
      REQUIRE(n(c) > 0);
      // Noise is uniform on [-spread, spread]; its standard deviation is below spread.
      const double bound = 3.0 * truth.class_spreads()(c) / std::sqrt(n(c)) + 1e-7;
      for (int k = 0; k < kChannels; ++k) {
        CHECK(std::abs(fit.class_means()(c, k) - truth.class_means()(c, k)) <= bound);
      }
    }
  }
}

TEST_CASE("fit errors: missing coverage and collapsed classes") {
  const StyleModel s = flat_style();
  const auto only_road = sample_of(SemanticMap::filled(20, 16, ClassId::road), s, 1);
  try {
    fit_style(std::vector<DrivingSample>{only_road});
    FAIL("expected a fit error");
  } catch (const FitError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("sky") != std::string::npos);
    CHECK(msg.find("building") != std::string::npos);
  }
  Palette same = s.class_means();
  same.row(index_of(ClassId::sky)) = same.row(index_of(ClassId::building));
  const StyleModel collapsed(StyleId{4}, same, Spreads::Zero(), 0, 0xFF, 0.05, StyleModel::Check::relaxed);
  CHECK_THROWS_AS(fit_style(std::vector<DrivingSample>{sample_of(banded_map(), collapsed, 1)}), FitError);
  CHECK_THROWS_AS(fit_style(std::vector<DrivingSample>{}), FitError);
}

TEST_CASE("fitted spreads stay below half the separation floor") {
  const World w = world_with_styles(1, 2);
  const StyleModel fit = fit_style(samples_for(w, StyleId{1}, 3, 1));
  CHECK(fit.class_spreads().maxCoeff() < 0.5 * fit.separation_floor());
  CHECK(fit.min_separation() >= fit.separation_floor());
}

TEST_CASE("cross rendering changes appearance and keeps segmentation") {
  const World w = world_with_styles(2, 3);
  const auto x = w.generate(StyleId{1}, TaskType::avoid_cars, 5);
  AugmentationCandidate cand{x.semantic, x.instances, {}, 0, std::nullopt};
  const StyleModel& a = w.style(StyleId{1});
  const StyleModel& b = w.style(StyleId{2});
  const Scenario sa = cross_render(cand, a, 1), sb = cross_render(cand, b, 1);
  CHECK(sa.style == a.style());
  CHECK(sb.style == b.style());
  CHECK_FALSE(sa == sb);
  CHECK(segment_classes(sa, a) == segment_classes(sb, b));
  CHECK(segment_classes(sa, a) == x.semantic);
}

TEST_CASE("fan-out arithmetic: candidates times styles") {
  const World w = world_with_styles(2, 3);
  std::vector<AugmentationCandidate> cands;
  for (std::uint64_t i = 0; i < 2; ++i) {
    const auto x = w.generate(StyleId{1}, TaskType::straight, i);
    cands.push_back({x.semantic, x.instances, {}, i, std::nullopt});
  }
  std::vector<Scenario> out;
  for (const auto& c : cands) {
    for (std::uint16_t s = 1; s <= 2; ++s) out.push_back(cross_render(c, w.style(StyleId{s}), 3));
  }
  CHECK(out.size() == 4);
}

TEST_CASE("style and semantics are orthogonal for fitted styles") {
  const World w = world_with_styles(3, 8);
  std::vector<StyleModel> fitted;
  for (std::uint16_t s = 1; s <= 3; ++s) fitted.push_back(fit_style(samples_for(w, StyleId{s}, 4, 2)));
  for (std::uint64_t k = 0; k < 12; ++k) {
    const auto x = w.generate(StyleId{1}, kAllTasks[k % 3], derive_seed(3, {k}));
    for (const auto& st : fitted) {
      CHECK(segment_classes(cross_render(x.layout(), st, k), st) == x.semantic);
    }
  }
}

}
