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

// Synthetic driving world: class palette, semantic and instance maps, styled
// scenarios, and the seeded scene generator.

#include <Eigen/Core>
#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

namespace parl {

enum class ClassId : std::uint8_t {
  road = 0,
  lane_marking = 1,
  car = 2,
  pedestrian = 3,
  building = 4,
  vegetation = 5,
  sky = 6,
  sidewalk = 7,
};

inline constexpr int kNumClasses = 8;
inline constexpr int kChannels = 3;

constexpr bool is_thing(ClassId c) { return c == ClassId::car || c == ClassId::pedestrian; }
constexpr int index_of(ClassId c) { return static_cast<int>(c); }
std::string_view class_name(ClassId c);
std::array<ClassId, kNumClasses> all_classes();

using ClassGrid = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using InstanceGrid = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Channel = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::int32_t kBackground = 0;
inline constexpr int kMinMapSide = 16;

// Inclusive cell rectangle.
struct CellRect {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;

  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  int area() const { return width() > 0 && height() > 0 ? width() * height() : 0; }
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  friend bool operator==(const CellRect&, const CellRect&) = default;
};

int intersection_area(const CellRect& a, const CellRect& b);

// Placement of an instance: translation is the box center, scale the box
// extent, both in cells.
struct Affine {
  double translate_x = 0, translate_y = 0, scale_x = 1, scale_y = 1;
  friend bool operator==(const Affine&, const Affine&) = default;
};

Affine affine_of(const CellRect& box);

struct InstanceRecord {
  std::int32_t id = 0;
  ClassId cls = ClassId::car;
  CellRect box;
  Affine affine;
  friend bool operator==(const InstanceRecord&, const InstanceRecord&) = default;
};

struct StyleId {
  std::uint16_t value = 0;
  friend auto operator<=>(const StyleId&, const StyleId&) = default;
};

// Per-cell class grid. Immutable; every constructor validates the palette,
// the minimum size and the presence of a road region.
class SemanticMap {
 public:
  explicit SemanticMap(ClassGrid grid);
  static SemanticMap filled(int width, int height, ClassId cls);

  int width() const { return static_cast<int>(grid_.cols()); }
  int height() const { return static_cast<int>(grid_.rows()); }
  ClassId at(int x, int y) const { return static_cast<ClassId>(grid_(y, x)); }
  const ClassGrid& grid() const { return grid_; }

  friend bool operator==(const SemanticMap& a, const SemanticMap& b) {
    return a.grid_.rows() == b.grid_.rows() && a.grid_.cols() == b.grid_.cols() &&
           (a.grid_ == b.grid_).all();
  }

 private:
  ClassGrid grid_;
};

class InstanceMap {
 public:
  InstanceMap(InstanceGrid grid, std::vector<InstanceRecord> records);
  static InstanceMap empty(int width, int height);

  int width() const { return static_cast<int>(grid_.cols()); }
  int height() const { return static_cast<int>(grid_.rows()); }
  std::int32_t at(int x, int y) const { return grid_(y, x); }
  const InstanceGrid& grid() const { return grid_; }
  const std::vector<InstanceRecord>& records() const { return records_; }
  const InstanceRecord* find(std::int32_t id) const;
  std::int32_t max_id() const;

  friend bool operator==(const InstanceMap& a, const InstanceMap& b) {
    return a.grid_.rows() == b.grid_.rows() && a.grid_.cols() == b.grid_.cols() &&
           (a.grid_ == b.grid_).all() && a.records_ == b.records_;
  }

 private:
  InstanceGrid grid_;
  std::vector<InstanceRecord> records_;
};

// A semantic layout: the unit the augmentation pipeline works on.
struct Layout {
  SemanticMap semantic;
  InstanceMap instances;
  friend bool operator==(const Layout&, const Layout&) = default;
};

// True when both instance maps induce the same partition of cells, ignoring
// the concrete id values.
bool same_partition(const InstanceMap& a, const InstanceMap& b);

struct Scenario {
  int width = 0;
  int height = 0;
  std::array<Channel, kChannels> pixels;
  StyleId style;

  Eigen::Vector3d pixel(int x, int y) const {
    return {pixels[0](y, x), pixels[1](y, x), pixels[2](y, x)};
  }
  friend bool operator==(const Scenario& a, const Scenario& b);
};

enum class TaskType : std::uint8_t { turn = 0, avoid_cars = 1, straight = 2 };
enum class Provenance : std::uint8_t { human = 0, crowdsourced = 1, augmented = 2 };

inline constexpr std::array<TaskType, 3> kAllTasks = {TaskType::turn, TaskType::avoid_cars,
                                                      TaskType::straight};
std::string_view task_name(TaskType t);

struct DrivingSample {
  Scenario scenario;
  SemanticMap semantic;
  InstanceMap instances;
  std::optional<double> label;
  TaskType task = TaskType::straight;
  Provenance provenance = Provenance::human;

  Layout layout() const { return {semantic, instances}; }
  friend bool operator==(const DrivingSample&, const DrivingSample&) = default;
};

// Per-agent appearance model: a mean color and noise amplitude per class.
// Classes outside `present` cannot be rendered.
using Palette = Eigen::Matrix<double, kNumClasses, kChannels>;
using Spreads = Eigen::Matrix<double, kNumClasses, 1>;

inline constexpr double kDefaultSeparationFloor = 0.05;

class StyleModel {
 public:
  enum class Check { strict, relaxed };

  StyleModel(StyleId style, Palette means, Spreads spreads, std::uint64_t texture_seed,
             std::uint8_t present = 0xFF, double separation_floor = kDefaultSeparationFloor,
             Check check = Check::strict);

  StyleId style() const { return style_; }
  const Palette& class_means() const { return means_; }
  const Spreads& class_spreads() const { return spreads_; }
  std::uint64_t texture_seed() const { return texture_seed_; }
  std::uint8_t present_mask() const { return present_; }
  bool has_class(ClassId c) const { return (present_ >> index_of(c)) & 1U; }
  double separation_floor() const { return separation_floor_; }
  bool strict() const { return check_ == Check::strict; }
  // Smallest pairwise L-infinity distance between present class means.
  double min_separation() const;

  friend bool operator==(const StyleModel&, const StyleModel&) = default;

 private:
  StyleId style_;
  Palette means_;
  Spreads spreads_;
  std::uint64_t texture_seed_;
  std::uint8_t present_;
  double separation_floor_;
  Check check_;
};

// Deterministic built-in palette for a style id. Class means are at least
// 0.25 apart in L-infinity, spreads lie in [0.01, 0.02].
StyleModel builtin_style(StyleId id, std::uint64_t seed);

void render_into(const SemanticMap& semantic, const StyleModel& style, std::uint64_t seed,
                 Scenario& out);
Scenario render(const SemanticMap& semantic, const InstanceMap& instances,
                const StyleModel& style, std::uint64_t seed);

// Nearest class mean under L-infinity distance; ties go to the lowest ClassId.
ClassId classify_pixel(const Eigen::Vector3d& px, const StyleModel& style);
SemanticMap segment_classes(const Scenario& scenario, const StyleModel& style);
// Connected components (4-neighborhood) of thing classes, ids assigned in
// raster order starting at 1.
InstanceMap extract_instances(const SemanticMap& semantic);
std::pair<SemanticMap, InstanceMap> segment(const Scenario& scenario, const StyleModel& style);

struct WorldConfig {
  int width = 64;
  int height = 32;
  double curvature_gain = 2.0;  // k in torque = 0.5 + k*curvature + j*offset
  double offset_gain = 1.0;     // j
  double evasive_shift = 0.12;  // target-lane shift when avoiding a car
};

struct PlacedInstance {
  ClassId cls = ClassId::car;
  CellRect box;
  std::vector<std::pair<int, int>> cells;  // (x, y)
};

// Everything the layout generator needs; produced from a seed by
// draw_scene_params or written by hand in tests.
struct SceneParams {
  TaskType task = TaskType::straight;
  double curvature = 0.0;    // < 0 bends left
  double lane_offset = 0.0;  // road center relative to the vehicle, in half-widths of the image
  int horizon = 8;
  double half_width = 11.0;  // road half width at the bottom row
  std::uint64_t layout_seed = 0;
  bool obstacle_car = false;
  int obstacle_side = 1;     // +1 right of the lane center, -1 left
  double obstacle_t = 0.3;   // depth of the obstacle along the road, 0 = bottom
  bool distant_car = false;
  int pedestrians = 0;
};

SceneParams draw_scene_params(TaskType task, std::uint64_t seed, const WorldConfig& cfg);
Layout compose_layout(const SceneParams& params, const WorldConfig& cfg);
double torque_label(const SceneParams& params, const WorldConfig& cfg);
double road_center(const SceneParams& params, const WorldConfig& cfg, int row);
double road_half_width(const SceneParams& params, const WorldConfig& cfg, int row);

// Registry of styles plus the generator configuration.
class World {
 public:
  explicit World(WorldConfig cfg = {}) : cfg_(cfg) {}

  void register_style(const StyleModel& style);
  const StyleModel& style(StyleId id) const;
  bool has_style(StyleId id) const { return styles_.count(id) > 0; }
  const WorldConfig& config() const { return cfg_; }

  DrivingSample generate(StyleId style, TaskType task, std::uint64_t seed) const;
  DrivingSample generate_from(StyleId style, const SceneParams& params, std::uint64_t seed) const;

 private:
  WorldConfig cfg_;
  std::map<StyleId, StyleModel> styles_;
};

}  // namespace parl
