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

// Shared builders for the test suites.

#include <algorithm>
#include <optional>
#include <vector>

#include "parl/rng.hpp"
#include "parl/world.hpp"

namespace parl::testing {

inline World world_with_styles(int count, std::uint64_t seed = 1) {
  World w;
  for (int s = 1; s <= count; ++s) w.register_style(builtin_style(StyleId{static_cast<std::uint16_t>(s)}, seed));
  return w;
}

inline std::vector<DrivingSample> samples_for(const World& w, StyleId style, int per_task, std::uint64_t seed) {
  std::vector<DrivingSample> out;
  for (TaskType t : kAllTasks) {
    for (int i = 0; i < per_task; ++i) {
      out.push_back(w.generate(style, t, derive_seed(seed, {style.value, static_cast<std::uint64_t>(t),
                                                            static_cast<std::uint64_t>(i)})));
    }
  }
  return out;
}

inline std::vector<Layout> layouts_of(const std::vector<DrivingSample>& s) {
  std::vector<Layout> out;
  for (const auto& x : s) out.push_back(x.layout());
  return out;
}

// Road on the lower half, sky above.
inline SemanticMap road_map(int width = 32, int height = 16) {
  ClassGrid g = ClassGrid::Constant(height, width, static_cast<std::uint8_t>(ClassId::sky));
  g.bottomRows(height / 2).setConstant(static_cast<std::uint8_t>(ClassId::road));
  return SemanticMap(g);
}

// Style whose class means sit on a coarse lattice and whose noise is zero.
inline StyleModel flat_style(StyleId id = StyleId{9}) {
  Palette means;
  for (int c = 0; c < kNumClasses; ++c) {
    means.row(c) << 0.1 + 0.4 * (c & 1), 0.1 + 0.4 * ((c >> 1) & 1), 0.1 + 0.4 * ((c >> 2) & 1);
  }
  return StyleModel(id, means, Spreads::Zero(), 0);
}

// Independent corruption oracle. A car-shaped block written into a region
// made only of building cells, or a shifted copy of an existing instance
// whose box overlaps the original by more than half.
inline std::optional<Layout> oracle_car_in_building(const Layout& l, std::uint64_t seed) {
  const auto& g = l.semantic.grid();
  const int H = static_cast<int>(g.rows()), W = static_cast<int>(g.cols());
  Rng rng(seed);
  const int w = 3 + static_cast<int>(rng.below(2)), h = 2;
  std::vector<std::pair<int, int>> slots;
  for (int y = 0; y + h <= H; ++y) {
    for (int x = 0; x + w <= W; ++x) {
      if ((g.block(y, x, h, w) == static_cast<std::uint8_t>(ClassId::building)).all()) slots.emplace_back(x, y);
    }
  }
  if (slots.empty()) return std::nullopt;
  const auto [x0, y0] = slots[rng.below(slots.size())];
  ClassGrid cls = g;
  InstanceGrid ids = l.instances.grid();
  const std::int32_t id = l.instances.max_id() + 1;
  cls.block(y0, x0, h, w).setConstant(static_cast<std::uint8_t>(ClassId::car));
  ids.block(y0, x0, h, w).setConstant(id);
  auto recs = l.instances.records();
  const CellRect box{x0, y0, x0 + w - 1, y0 + h - 1};
  recs.push_back({id, ClassId::car, box, affine_of(box)});
  return Layout{SemanticMap(cls), InstanceMap(ids, recs)};
}

inline std::optional<Layout> oracle_overlap(const Layout& l, std::uint64_t seed) {
  std::vector<const InstanceRecord*> usable;
  for (const auto& r : l.instances.records()) {
    if (r.box.width() >= 3 && r.box.x1 + 1 < l.semantic.width()) usable.push_back(&r);
  }
  if (usable.empty()) return std::nullopt;
  Rng rng(seed);
  const InstanceRecord& src = *usable[rng.below(usable.size())];
  ClassGrid cls = l.semantic.grid();
  InstanceGrid ids = l.instances.grid();
  const std::int32_t id = l.instances.max_id() + 1;
  const InstanceGrid before = ids;
  for (int y = src.box.y0; y <= src.box.y1; ++y) {
    for (int x = src.box.x1; x >= src.box.x0; --x) {
      if (before(y, x) != src.id) continue;
      cls(y, x + 1) = static_cast<std::uint8_t>(src.cls);
      ids(y, x + 1) = id;
    }
  }
  // Cells of other instances that were overwritten must not leave records
  // pointing at nothing; keep only records that still own a cell.
  std::vector<InstanceRecord> recs;
  for (const auto& r : l.instances.records()) {
    if ((ids == r.id).any()) recs.push_back(r);
  }
  CellRect box{src.box.x0 + 1, src.box.y0, src.box.x1 + 1, src.box.y1};
  recs.push_back({id, src.cls, box, affine_of(box)});
  return Layout{SemanticMap(cls), InstanceMap(ids, recs)};
}

// Overlap of the two boxes relative to the smaller one.
inline double box_overlap(const CellRect& a, const CellRect& b) {
  return static_cast<double>(intersection_area(a, b)) / std::min(a.area(), b.area());
}

}  // namespace parl::testing
