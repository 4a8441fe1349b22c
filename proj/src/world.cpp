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
#include "parl/world.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <unordered_map>

#include "parl/error.hpp"
#include "parl/rng.hpp"

namespace parl {

std::string_view class_name(ClassId c) {
  switch (c) {
    case ClassId::road: return "road";
    case ClassId::lane_marking: return "lane-marking";
    case ClassId::car: return "car";
    case ClassId::pedestrian: return "pedestrian";
    case ClassId::building: return "building";
    case ClassId::vegetation: return "vegetation";
    case ClassId::sky: return "sky";
    case ClassId::sidewalk: return "sidewalk";
  }
  return "unknown";
}

std::array<ClassId, kNumClasses> all_classes() {
  std::array<ClassId, kNumClasses> out{};
  for (int i = 0; i < kNumClasses; ++i) out[i] = static_cast<ClassId>(i);
  return out;
}

std::string_view task_name(TaskType t) {
  switch (t) {
    case TaskType::turn: return "turn";
    case TaskType::avoid_cars: return "avoid-cars";
    case TaskType::straight: return "straight";
  }
  return "unknown";
}

int intersection_area(const CellRect& a, const CellRect& b) {
  const int w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0) + 1;
  const int h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0) + 1;
  return w > 0 && h > 0 ? w * h : 0;
}

Affine affine_of(const CellRect& box) {
  return {0.5 * (box.x0 + box.x1), 0.5 * (box.y0 + box.y1), static_cast<double>(box.width()),
          static_cast<double>(box.height())};
}

// ---------------------------------------------------------------------------
// Maps

SemanticMap::SemanticMap(ClassGrid grid) : grid_(std::move(grid)) {
  if (grid_.rows() < kMinMapSide || grid_.cols() < kMinMapSide) {
    throw ConfigError("semantic map must be at least 16x16, got " +
                      std::to_string(grid_.cols()) + "x" + std::to_string(grid_.rows()));
  }
  if ((grid_ >= kNumClasses).any()) throw ConfigError("semantic map holds a class id outside the palette");
  if (!(grid_ == static_cast<std::uint8_t>(ClassId::road)).any()) {
    throw ConfigError("semantic map has no road region");
  }
}

SemanticMap SemanticMap::filled(int width, int height, ClassId cls) {
  ClassGrid g = ClassGrid::Constant(height, width, static_cast<std::uint8_t>(cls));
  return SemanticMap(std::move(g));
}

InstanceMap::InstanceMap(InstanceGrid grid, std::vector<InstanceRecord> records)
    : grid_(std::move(grid)), records_(std::move(records)) {
  std::unordered_map<std::int32_t, const InstanceRecord*> by_id;
  for (const auto& r : records_) {
    if (r.id <= kBackground) throw ConfigError("instance ids must be positive");
    if (!is_thing(r.cls)) throw ConfigError("instance class must be car or pedestrian");
    if (!by_id.emplace(r.id, &r).second) {
      throw ConfigError("duplicate instance id " + std::to_string(r.id));
    }
  }
  for (Eigen::Index y = 0; y < grid_.rows(); ++y) {
    for (Eigen::Index x = 0; x < grid_.cols(); ++x) {
      const std::int32_t id = grid_(y, x);
      if (id == kBackground) continue;
      auto it = by_id.find(id);
      if (it == by_id.end()) throw ConfigError("instance id " + std::to_string(id) + " has no record");
      if (!it->second->box.contains(static_cast<int>(x), static_cast<int>(y))) {
        throw ConfigError("bounding box of instance " + std::to_string(id) + " misses a cell");
      }
    }
  }
}

InstanceMap InstanceMap::empty(int width, int height) {
  return InstanceMap(InstanceGrid::Zero(height, width), {});
}

const InstanceRecord* InstanceMap::find(std::int32_t id) const {
  for (const auto& r : records_) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

std::int32_t InstanceMap::max_id() const {
  std::int32_t m = kBackground;
  for (const auto& r : records_) m = std::max(m, r.id);
  return m;
}

bool same_partition(const InstanceMap& a, const InstanceMap& b) {
  if (a.width() != b.width() || a.height() != b.height()) return false;
  std::unordered_map<std::int32_t, std::int32_t> fwd, bwd;
  for (int y = 0; y < a.height(); ++y) {
    for (int x = 0; x < a.width(); ++x) {
      const auto ia = a.at(x, y), ib = b.at(x, y);
      if ((ia == kBackground) != (ib == kBackground)) return false;
      if (ia == kBackground) continue;
      auto [f, fnew] = fwd.emplace(ia, ib);
      if (!fnew && f->second != ib) return false;
      auto [r, rnew] = bwd.emplace(ib, ia);
      if (!rnew && r->second != ia) return false;
    }
  }
  return true;
}

bool operator==(const Scenario& a, const Scenario& b) {
  if (a.width != b.width || a.height != b.height || a.style != b.style) return false;
  for (int c = 0; c < kChannels; ++c) {
    if (a.pixels[c].rows() != b.pixels[c].rows() || a.pixels[c].cols() != b.pixels[c].cols()) {
      return false;
    }
    if (!(a.pixels[c] == b.pixels[c]).all()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Styles

StyleModel::StyleModel(StyleId style, Palette means, Spreads spreads, std::uint64_t texture_seed,
                       std::uint8_t present, double separation_floor, Check check)
    : style_(style),
      means_(std::move(means)),
      spreads_(std::move(spreads)),
      texture_seed_(texture_seed),
      present_(present),
      separation_floor_(separation_floor),
      check_(check) {
  if (present_ == 0) throw ConfigError("style model has an empty palette");
  if (!means_.allFinite() || !spreads_.allFinite()) throw ConfigError("style model is not finite");
  if ((means_.array() < 0.0).any() || (means_.array() > 1.0).any()) {
    throw ConfigError("style class means must lie in [0,1]");
  }
  if ((spreads_.array() < 0.0).any()) throw ConfigError("style spreads must be nonnegative");
  if (check_ == Check::relaxed) return;
  if (!(separation_floor_ > 0.0)) throw ConfigError("separation floor must be positive");
  for (int c = 0; c < kNumClasses; ++c) {
    if (has_class(static_cast<ClassId>(c)) && spreads_(c) >= separation_floor_ / 2) {
      throw ConfigError("spread of class " + std::string(class_name(static_cast<ClassId>(c))) +
                        " violates the separation floor");
    }
  }
  if (min_separation() < separation_floor_) {
    throw ConfigError("style class means are closer than the separation floor");
  }
}

double StyleModel::min_separation() const {
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < kNumClasses; ++a) {
    if (!has_class(static_cast<ClassId>(a))) continue;
    for (int b = a + 1; b < kNumClasses; ++b) {
      if (!has_class(static_cast<ClassId>(b))) continue;
      best = std::min(best, (means_.row(a) - means_.row(b)).cwiseAbs().maxCoeff());
    }
  }
  return best;
}

StyleModel builtin_style(StyleId id, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x5717E, id.value}));
  Palette means;
  Spreads spreads;
  for (int c = 0; c < kNumClasses; ++c) {
    for (int attempt = 0;; ++attempt) {
      for (int k = 0; k < kChannels; ++k) means(c, k) = rng.uniform(0.05, 0.95);
      bool ok = true;
      for (int p = 0; p < c && ok; ++p) {
        ok = (means.row(c) - means.row(p)).cwiseAbs().maxCoeff() >= 0.25;
      }
      if (ok) break;
      if (attempt > 10000) throw ConfigError("could not draw a separated palette");
    }
    spreads(c) = rng.uniform(0.01, 0.02);
  }
  return StyleModel(id, means, spreads, rng.next());
}

// ---------------------------------------------------------------------------
// Rendering and segmentation

void render_into(const SemanticMap& semantic, const StyleModel& style, std::uint64_t seed,
                 Scenario& out) {
  const int w = semantic.width(), h = semantic.height();
  out.width = w;
  out.height = h;
  out.style = style.style();
  for (auto& ch : out.pixels) ch.resize(h, w);
  Rng rng(derive_seed(seed, {style.texture_seed()}));
  const auto& means = style.class_means();
  const auto& spreads = style.class_spreads();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const ClassId c = semantic.at(x, y);
      if (!style.has_class(c)) {
        throw RenderError("style " + std::to_string(style.style().value) + " has no appearance for class " +
                          std::string(class_name(c)));
      }
      const int ci = index_of(c);
      for (int k = 0; k < kChannels; ++k) {
        const double noise = spreads(ci) * rng.uniform(-1.0, 1.0);
        out.pixels[k](y, x) = static_cast<float>(std::clamp(means(ci, k) + noise, 0.0, 1.0));
      }
    }
  }
}

Scenario render(const SemanticMap& semantic, const InstanceMap& /*instances*/,
                const StyleModel& style, std::uint64_t seed) {
  Scenario out;
  render_into(semantic, style, seed, out);
  return out;
}

ClassId classify_pixel(const Eigen::Vector3d& px, const StyleModel& style) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int c = 0; c < kNumClasses; ++c) {
    if (!style.has_class(static_cast<ClassId>(c))) continue;
    const double d = (px.transpose() - style.class_means().row(c)).cwiseAbs().maxCoeff();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return static_cast<ClassId>(best);
}

SemanticMap segment_classes(const Scenario& scenario, const StyleModel& style) {
  ClassGrid g(scenario.height, scenario.width);
  bool road = false;
  for (int y = 0; y < scenario.height; ++y) {
    for (int x = 0; x < scenario.width; ++x) {
      const ClassId c = classify_pixel(scenario.pixel(x, y), style);
      road = road || c == ClassId::road;
      g(y, x) = static_cast<std::uint8_t>(c);
    }
  }
  if (!road) throw DegenerateInputError("segmentation found no road region");
  return SemanticMap(std::move(g));
}

InstanceMap extract_instances(const SemanticMap& semantic) {
  const int w = semantic.width(), h = semantic.height();
  InstanceGrid ids = InstanceGrid::Zero(h, w);
  std::vector<InstanceRecord> records;
  std::deque<std::pair<int, int>> queue;
  std::int32_t next = 1;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const ClassId c = semantic.at(x, y);
      if (!is_thing(c) || ids(y, x) != kBackground) continue;
      CellRect box{x, y, x, y};
      ids(y, x) = next;
      queue.emplace_back(x, y);
      while (!queue.empty()) {
        auto [cx, cy] = queue.front();
        queue.pop_front();
        box.x0 = std::min(box.x0, cx);
        box.x1 = std::max(box.x1, cx);
        box.y0 = std::min(box.y0, cy);
        box.y1 = std::max(box.y1, cy);
        constexpr int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int nx = cx + dx[k], ny = cy + dy[k];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          if (ids(ny, nx) != kBackground || semantic.at(nx, ny) != c) continue;
          ids(ny, nx) = next;
          queue.emplace_back(nx, ny);
        }
      }
      records.push_back({next, c, box, affine_of(box)});
      ++next;
    }
  }
  return InstanceMap(std::move(ids), std::move(records));
}

std::pair<SemanticMap, InstanceMap> segment(const Scenario& scenario, const StyleModel& style) {
  SemanticMap sem = segment_classes(scenario, style);
  InstanceMap inst = extract_instances(sem);
  return {std::move(sem), std::move(inst)};
}

// ---------------------------------------------------------------------------
// Scene generation

namespace {

double depth_of(const SceneParams& p, const WorldConfig& cfg, int row) {
  const double span = std::max(1, cfg.height - 1 - p.horizon);
  return std::clamp((cfg.height - 1 - row) / span, 0.0, 1.0);
}

int row_at_depth(const SceneParams& p, const WorldConfig& cfg, double t) {
  return static_cast<int>(std::lround(cfg.height - 1 - t * (cfg.height - 1 - p.horizon)));
}

// Lateral distance of an obstacle car from the lane center, in cells.
constexpr double kObstacleLateral = 5.0;

int sidewalk_width(const SceneParams& p, const WorldConfig& cfg, int row) {
  return depth_of(p, cfg, row) < 0.5 ? 2 : 1;
}

class LayoutBuilder {
 public:
  LayoutBuilder(ClassGrid grid) : grid_(std::move(grid)), ids_(InstanceGrid::Zero(grid_.rows(), grid_.cols())) {}

  ClassId at(int x, int y) const { return static_cast<ClassId>(grid_(y, x)); }
  int width() const { return static_cast<int>(grid_.cols()); }
  int height() const { return static_cast<int>(grid_.rows()); }

  // Places a thing instance when every cell sits on an allowed class and no
  // other instance touches its one-cell ring.
  bool place(ClassId cls, const std::vector<std::pair<int, int>>& cells,
             std::initializer_list<ClassId> allowed) {
    if (cells.empty()) return false;
    CellRect box{cells[0].first, cells[0].second, cells[0].first, cells[0].second};
    for (auto [x, y] : cells) {
      if (x < 0 || y < 0 || x >= width() || y >= height()) return false;
      if (std::find(allowed.begin(), allowed.end(), at(x, y)) == allowed.end()) return false;
      box.x0 = std::min(box.x0, x);
      box.x1 = std::max(box.x1, x);
      box.y0 = std::min(box.y0, y);
      box.y1 = std::max(box.y1, y);
    }
    for (int y = box.y0 - 1; y <= box.y1 + 1; ++y) {
      for (int x = box.x0 - 1; x <= box.x1 + 1; ++x) {
        if (x < 0 || y < 0 || x >= width() || y >= height()) continue;
        if (ids_(y, x) != kBackground) return false;
      }
    }
    const std::int32_t id = static_cast<std::int32_t>(records_.size()) + 1;
    for (auto [x, y] : cells) {
      grid_(y, x) = static_cast<std::uint8_t>(cls);
      ids_(y, x) = id;
    }
    records_.push_back({id, cls, box, affine_of(box)});
    return true;
  }

  Layout finish() && {
    return {SemanticMap(std::move(grid_)), InstanceMap(std::move(ids_), std::move(records_))};
  }

 private:
  ClassGrid grid_;
  InstanceGrid ids_;
  std::vector<InstanceRecord> records_;
};

std::vector<std::pair<int, int>> car_cells(int x0, int y0, int w, int h) {
  std::vector<std::pair<int, int>> cells;
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      const bool corner = w >= 4 && y == y0 && (x == x0 || x == x0 + w - 1);
      if (!corner) cells.emplace_back(x, y);
    }
  }
  return cells;
}

}  // namespace

double road_center(const SceneParams& p, const WorldConfig& cfg, int row) {
  const double t = depth_of(p, cfg, row);
  return 0.5 * (cfg.width - 1) + p.lane_offset * 0.5 * cfg.width + p.curvature * cfg.width * t * t;
}

double road_half_width(const SceneParams& p, const WorldConfig& cfg, int row) {
  return p.half_width * (1.0 - 0.65 * depth_of(p, cfg, row));
}

SceneParams draw_scene_params(TaskType task, std::uint64_t seed, const WorldConfig& cfg) {
  Rng rng(seed);
  SceneParams p;
  p.task = task;
  p.horizon = rng.between(7, 9);
  p.half_width = rng.uniform(10.0, 13.0);
  p.layout_seed = rng.next();
  p.pedestrians = rng.between(0, 2);
  p.lane_offset = rng.uniform(-0.03, 0.03);
  switch (task) {
    case TaskType::straight:
      p.curvature = 0.0;
      p.distant_car = rng.coin(0.4);
      break;
    case TaskType::turn: {
      const double mag = rng.uniform(0.04, 0.2);
      p.curvature = rng.coin() ? mag : -mag;
      p.distant_car = rng.coin(0.4);
      break;
    }
    case TaskType::avoid_cars:
      p.curvature = rng.uniform(-0.03, 0.03);
      p.obstacle_car = true;
      p.obstacle_side = rng.coin() ? 1 : -1;
      p.obstacle_t = rng.uniform(0.15, 0.4);
      break;
  }
  (void)cfg;
  return p;
}

Layout compose_layout(const SceneParams& p, const WorldConfig& cfg) {
  if (cfg.width < kMinMapSide || cfg.height < kMinMapSide) throw ConfigError("world is smaller than 16x16");
  if (p.horizon < 1 || p.horizon > cfg.height - 8) throw ConfigError("horizon row out of range");
  Rng rng(p.layout_seed);
  ClassGrid g = ClassGrid::Constant(cfg.height, cfg.width, static_cast<std::uint8_t>(ClassId::sky));

  // Side fill: alternating building / vegetation blocks along each side.
  std::vector<ClassId> side_fill[2];
  for (auto& fill : side_fill) {
    fill.assign(cfg.height, ClassId::building);
    for (int y = p.horizon; y < cfg.height;) {
      const int len = rng.between(3, 8);
      const ClassId cls = rng.coin(0.55) ? ClassId::building : ClassId::vegetation;
      for (int k = 0; k < len && y < cfg.height; ++k, ++y) fill[y] = cls;
    }
  }

  for (int y = p.horizon; y < cfg.height; ++y) {
    const double c = road_center(p, cfg, y);
    const double hw = road_half_width(p, cfg, y);
    const int sw = sidewalk_width(p, cfg, y);
    const long lane_x = std::lround(c);
    const bool dash = ((y - p.horizon) / 2) % 2 == 0;
    for (int x = 0; x < cfg.width; ++x) {
      const double d = std::abs(x - c);
      ClassId cls;
      if (d <= hw) {
        cls = (dash && x == lane_x) ? ClassId::lane_marking : ClassId::road;
      } else if (d <= hw + sw) {
        cls = ClassId::sidewalk;
      } else {
        cls = side_fill[x < c ? 0 : 1][y];
      }
      g(y, x) = static_cast<std::uint8_t>(cls);
    }
  }
  // The bottom row always carries road, so the map invariant holds.
  LayoutBuilder b(std::move(g));

  if (p.obstacle_car) {
    bool placed = false;
    for (int attempt = 0; attempt < 6 && !placed; ++attempt) {
      const double t = std::clamp(p.obstacle_t + 0.05 * attempt * (attempt % 2 ? 1 : -1), 0.05, 0.6);
      const int row = row_at_depth(p, cfg, t);
      const double hw = road_half_width(p, cfg, row);
      const int w = std::max(3, static_cast<int>(std::lround(hw * 0.55)) - attempt / 2);
      const int h = std::max(2, static_cast<int>(std::lround(w * 0.6)));
      const double cx = road_center(p, cfg, row) + p.obstacle_side * kObstacleLateral;
      const int x0 = static_cast<int>(std::lround(cx - 0.5 * (w - 1)));
      const int y0 = row - h + 1;
      placed = b.place(ClassId::car, car_cells(x0, y0, w, h), {ClassId::road, ClassId::lane_marking});
    }
    if (!placed) throw ConfigError("could not place the obstacle car");
  }
  if (p.distant_car) {
    for (int attempt = 0; attempt < 10; ++attempt) {
      const int row = row_at_depth(p, cfg, rng.uniform(0.6, 0.85));
      const double hw = road_half_width(p, cfg, row);
      const double cx = road_center(p, cfg, row) + rng.uniform(-0.5, 0.5) * hw;
      const int x0 = static_cast<int>(std::lround(cx - 0.5));
      if (b.place(ClassId::car, car_cells(x0, row - 1, 2, 2), {ClassId::road, ClassId::lane_marking})) break;
    }
  }
  for (int k = 0; k < p.pedestrians; ++k) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const int row = rng.between(p.horizon + 4, cfg.height - 2);
      const int side = rng.coin() ? 1 : -1;
      const double edge = road_center(p, cfg, row) + side * (road_half_width(p, cfg, row) + 1.0);
      const int x = static_cast<int>(std::lround(edge));
      if (b.place(ClassId::pedestrian, {{x, row}, {x, row + 1}}, {ClassId::sidewalk})) break;
    }
  }
  return std::move(b).finish();
}

double torque_label(const SceneParams& p, const WorldConfig& cfg) {
  double target = p.lane_offset;
  if (p.obstacle_car) target -= p.obstacle_side * cfg.evasive_shift;
  return std::clamp(0.5 + cfg.curvature_gain * p.curvature + cfg.offset_gain * target, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// World

void World::register_style(const StyleModel& style) {
  styles_.insert_or_assign(style.style(), style);
}

const StyleModel& World::style(StyleId id) const {
  auto it = styles_.find(id);
  if (it == styles_.end()) throw ConfigError("unknown style " + std::to_string(id.value));
  return it->second;
}

DrivingSample World::generate(StyleId style_id, TaskType task, std::uint64_t seed) const {
  (void)style(style_id);
  return generate_from(style_id, draw_scene_params(task, derive_seed(seed, {1}), cfg_), seed);
}

DrivingSample World::generate_from(StyleId style_id, const SceneParams& params,
                                   std::uint64_t seed) const {
  const StyleModel& st = style(style_id);
  Layout layout = compose_layout(params, cfg_);
  Scenario sc = render(layout.semantic, layout.instances, st, derive_seed(seed, {2}));
  return DrivingSample{std::move(sc), std::move(layout.semantic), std::move(layout.instances),
                       torque_label(params, cfg_), params.task, Provenance::human};
}

}  // namespace parl
