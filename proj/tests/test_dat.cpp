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
#include <numeric>

#include "doctest.h"
#include "fixtures.hpp"
#include "parl/dat.hpp"
#include "parl/error.hpp"
#include "parl/stats.hpp"

using namespace parl;
using namespace parl::testing;

namespace {

struct Corpus {
  std::vector<Layout> fit;
  std::vector<Layout> heldout;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    const World w = world_with_styles(3, 1);
    Corpus out;
    for (std::uint16_t s = 1; s <= 3; ++s) {
      for (const auto& l : layouts_of(samples_for(w, StyleId{s}, 14, 1))) out.fit.push_back(l);
      for (const auto& l : layouts_of(samples_for(w, StyleId{s}, 10, 999))) out.heldout.push_back(l);
    }
    return out;
  }();
  return c;
}

const FittedScorer& fitted() {
  static const FittedScorer f = fit_scorer_with_diagnostics(corpus().fit);
  return f;
}

Layout single_car_layout(int x0, int y0) {
  const SemanticMap base = road_map(32, 16);
  ClassGrid g = base.grid();
  InstanceGrid ids = InstanceGrid::Zero(16, 32);
  g.block(y0, x0, 2, 3).setConstant(static_cast<std::uint8_t>(ClassId::car));
  ids.block(y0, x0, 2, 3).setConstant(1);
  const CellRect box{x0, y0, x0 + 2, y0 + 1};
  return {SemanticMap(g), InstanceMap(ids, {{1, ClassId::car, box, affine_of(box)}})};
}

// Relabels every instance id by adding an offset.
Layout relabeled(const Layout& l, std::int32_t offset) {
  InstanceGrid ids = l.instances.grid();
  ids = (ids == 0).select(ids, ids + offset);
  auto recs = l.instances.records();
  for (auto& r : recs) r.id += offset;
  return {l.semantic, InstanceMap(ids, recs)};
}

}  // namespace

TEST_SUITE("dat") {

TEST_CASE("where predictor: normalized, smoothed and count-faithful") {
  const WherePredictor wp = fit_where(corpus().fit, 0.5);
  for (ClassId c : {ClassId::car, ClassId::pedestrian}) {
    REQUIRE(wp.fitted_for(c));
    const auto& p = wp.probabilities(c);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
  }
  // Count oracle: recount the training instances into the same bins.
  std::vector<std::uint32_t> counts(WherePredictor::kBins, 0);
  for (const auto& l : corpus().fit) {
    for (const auto& r : l.instances.records()) {
      if (r.cls != ClassId::car) continue;
      const auto [px, py] = position_bin(r.affine, l.semantic.width(), l.semantic.height());
      ++counts[WherePredictor::bin(context_bin(l.semantic.grid(), r.box), px, py, scale_bin(r.box))];
    }
  }
  CHECK(counts == wp.counts(ClassId::car));
  // Cars in this world never sit in the top row band (sky) away from the road.
  for (int px = 0; px < kPositionBins; ++px) {
    for (int s = 0; s < kScaleBins; ++s) CHECK(wp.raw_count(ClassId::car, 2, px, 0, s) == 0);
  }
  CHECK(fit_where(corpus().fit, 0.5) == wp);
  const WherePredictor sharp = fit_where(corpus().fit, 0.0);
  for (std::size_t b = 0; b < sharp.counts(ClassId::car).size(); ++b) {
    CHECK((sharp.probabilities(ClassId::car)[b] > 0.0) == (sharp.counts(ClassId::car)[b] > 0));
  }
}

TEST_CASE("where predictor: single observation puts the mode at its bin") {
  const Layout l = single_car_layout(10, 10);
  const std::vector<Layout> one{l};
  const WherePredictor wp = fit_where(one, 0.5);
  const auto& r = l.instances.records()[0];
  const auto [px, py] = position_bin(r.affine, 32, 16);
  const auto& p = wp.probabilities(ClassId::car);
  const auto mode = std::max_element(p.begin(), p.end()) - p.begin();
  CHECK(mode == WherePredictor::bin(context_bin(l.semantic.grid(), r.box), px, py, scale_bin(r.box)));
  CHECK_FALSE(wp.fitted_for(ClassId::pedestrian));
}

TEST_CASE("where and what fitting errors") {
  CHECK_THROWS_AS(fit_where({}, 0.5), FitError);
  const std::vector<Layout> empty{{road_map(), InstanceMap::empty(32, 16)}};
  CHECK_THROWS_AS(fit_where(empty, 0.5), FitError);
  CHECK_THROWS_AS(fit_what(empty), FitError);
}

TEST_CASE("what predictor templates are single components") {
  const WhatPredictor what = fit_what(corpus().fit);
  CHECK(what.has_class(ClassId::car));
  CHECK(what.has_class(ClassId::pedestrian));
  for (const auto& per_class : what.library()) {
    for (const auto& per_scale : per_class) {
      for (const auto& t : per_scale) CHECK(single_component(t.mask));
    }
  }
  Mask two = Mask::Zero(3, 3);
  two(0, 0) = two(2, 2) = 1;
  CHECK_FALSE(single_component(two));
}

TEST_CASE("insertion into an all-road map changes exactly the inserted cells") {
  const std::vector<Layout> one{single_car_layout(10, 10)};
  const Predictors pr = fit_predictors(one);
  const Layout base{SemanticMap::filled(32, 16, ClassId::road), InstanceMap::empty(32, 16)};
  const Layout keep = base;
  const auto cand = sample_insertion(pr.where, pr.what, base, ClassId::car, 3);
  REQUIRE(cand);
  CHECK(base == keep);
  REQUIRE(cand->inserted.size() == 1);
  const auto& rec = cand->inserted[0];
  CHECK(cand->instances.records().size() == 1);
  CHECK(cand->instances.find(rec.id) != nullptr);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 32; ++x) {
      const bool inside = cand->instances.at(x, y) == rec.id;
      CHECK((cand->semantic.at(x, y) != ClassId::road) == inside);
    }
  }
  const auto again = sample_insertion(pr.where, pr.what, base, ClassId::car, 3);
  CHECK(*again == *cand);
  CHECK_FALSE(sample_insertion(pr.where, pr.what, base, ClassId::pedestrian, 3));
}

TEST_CASE("scorer fitting needs ten layouts") {
  const std::vector<Layout> few(corpus().fit.begin(), corpus().fit.begin() + 9);
  CHECK_THROWS_AS(fit_scorer(few), FitError);
}

TEST_CASE("scorer separates real layouts from oracle corruptions") {
  const auto& sc = fitted().scorer;
  std::vector<double> real, bad;
  for (const auto& l : corpus().heldout) real.push_back(sc.score(l));
  std::size_t k = 0;
  for (const auto& l : corpus().heldout) {
    if (auto c = oracle_car_in_building(l, k++)) bad.push_back(sc.score(*c));
    if (auto c = oracle_overlap(l, k++)) bad.push_back(sc.score(*c));
  }
  REQUIRE(bad.size() > 20);
  const double pass = static_cast<double>(std::count_if(real.begin(), real.end(), [&](double s) {
                        return s >= sc.threshold();
                      })) / real.size();
  CHECK(pass >= 0.95);
  const double med = quantile(real, 0.5);
  CHECK(med >= sc.threshold() + 0.1 - 1e-12);
  for (double b : bad) {
    CHECK(b < sc.threshold());
    CHECK(b < med);
  }
  CHECK(mean(real) - mean(bad) >= 0.2);
  for (double s : real) {
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("oracle corruptions have the intended geometry") {
  std::size_t checked = 0;
  for (std::size_t i = 0; i < corpus().heldout.size(); ++i) {
    const Layout& l = corpus().heldout[i];
    if (auto c = oracle_overlap(l, i)) {
      const auto& added = c->instances.records().back();
      bool big = false;
      for (const auto& r : l.instances.records()) big = big || box_overlap(r.box, added.box) > 0.5;
      CHECK(big);
      ++checked;
    }
    if (auto c = oracle_car_in_building(l, i)) {
      const auto& added = c->instances.records().back();
      CHECK((l.semantic.grid().block(added.box.y0, added.box.x0, added.box.height(), added.box.width()) ==
             static_cast<std::uint8_t>(ClassId::building))
                .all());
      ++checked;
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("scores ignore instance ids and a bare candidate scores as its base") {
  const auto& sc = fitted().scorer;
  for (std::size_t i = 0; i < 10; ++i) {
    const Layout& l = corpus().heldout[i];
    CHECK(sc.score(relabeled(l, 100)) == sc.score(l));
    const AugmentationCandidate c{l.semantic, l.instances, {}, 0, std::nullopt};
    CHECK(score(sc, c) == sc.score(l));
    CHECK(*scored(sc, c).score == sc.score(l));
  }
}

TEST_CASE("augment: fan-out, thresholds and locality") {
  const auto& sc = fitted().scorer;
  const Predictors pr = fit_predictors(corpus().fit);
  std::size_t full = 0;
  for (std::size_t i = 0; i < 12; ++i) {
    const Layout& base = corpus().heldout[i];
    const auto res = augment_semantic(base, i, 2, pr, sc, 40 + i);
    full += res.candidates.size() == 2;
    CHECK(res.stats.accepted == static_cast<int>(res.candidates.size()));
    CHECK(res.stats.attempts == res.stats.accepted + res.stats.rejected + res.stats.placement_failures);
    CHECK(res.stats.attempts <= 32);
    for (const auto& c : res.candidates) {
      REQUIRE(c.score);
      CHECK(*c.score >= sc.threshold());
      CHECK(c.source_sample_id == i);
      // Conservation and locality.
      CHECK(c.instances.records().size() == base.instances.records().size() + c.inserted.size());
      for (std::size_t r = 0; r < base.instances.records().size(); ++r) {
        CHECK(c.instances.records()[r] == base.instances.records()[r]);
      }
      for (const auto& ins : c.inserted) CHECK(c.instances.find(ins.id) != nullptr);
      for (int y = 0; y < base.semantic.height(); ++y) {
        for (int x = 0; x < base.semantic.width(); ++x) {
          bool inserted = false;
          for (const auto& ins : c.inserted) inserted = inserted || c.instances.at(x, y) == ins.id;
          if (!inserted) CHECK(c.semantic.at(x, y) == base.semantic.at(x, y));
        }
      }
    }
    AugmentConfig zero;
    zero.threshold = 0.0;
    CHECK(augment_semantic(base, i, 1, pr, sc, 40 + i, zero).candidates.size() == 1);
    AugmentConfig one;
    one.threshold = 1.0 + 1e-9;
    CHECK(augment_semantic(base, i, 2, pr, sc, 40 + i, one).candidates.empty());
    CHECK(augment_semantic(base, i, 2, pr, sc, 40 + i) == augment_semantic(base, i, 2, pr, sc, 40 + i));
  }
  CHECK(full >= 10);
  CHECK_THROWS_AS(augment_semantic(corpus().heldout[0], 0, 0, pr, sc, 1), ConfigError);
}

TEST_CASE("acceptance shrinks as the threshold rises") {
  const auto& sc = fitted().scorer;
  const Predictors pr = fit_predictors(corpus().fit);
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<AugmentationCandidate> pool;
    for (std::uint64_t s = 0; s < 20; ++s) {
      if (auto c = sample_insertion(pr.where, pr.what, corpus().heldout[i], ClassId::car, s)) {
        pool.push_back(scored(sc, *c));
      }
    }
    for (double lo : {0.2, 0.4, 0.6}) {
      for (const auto& c : pool) {
        if (!sc.accepts(*c.score, lo)) CHECK_FALSE(sc.accepts(*c.score, lo + 0.2));
      }
    }
  }
}

TEST_CASE("scorer rejects invalid parameters") {
  const auto& sc = fitted().scorer;
  CHECK_THROWS_AS(PlausibilityScorer(0.0, sc.weights(), sc.tables(), sc.calibration(), sc.knot()), ConfigError);
  CHECK_THROWS_AS(PlausibilityScorer(0.5, {0.5, 0.5, 0.5, 0.0}, sc.tables(), sc.calibration(), sc.knot()),
                  ConfigError);
  CHECK_THROWS_AS(PlausibilityScorer(0.5, {1.5, -0.5, 0.0, 0.0}, sc.tables(), sc.calibration(), sc.knot()),
                  ConfigError);
}

TEST_CASE("diagnostics agree with the scorer") {
  const auto& d = fitted().diagnostics;
  CHECK(d.fit_layouts + d.calibration_layouts == corpus().fit.size());
  CHECK(d.negatives > 0);
  CHECK(d.real_pass_rate >= 0.95);
  CHECK(d.negative_pass_rate == 0.0);
}

}
