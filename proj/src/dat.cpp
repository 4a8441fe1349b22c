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
#include "parl/dat.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <string>

#include "parl/error.hpp"
#include "parl/rng.hpp"
#include "parl/stats.hpp"

namespace parl {

int thing_index(ClassId c) {
  switch (c) {
    case ClassId::car: return 0;
    case ClassId::pedestrian: return 1;
    default: throw ConfigError("class " + std::string(class_name(c)) + " is not an instance class");
  }
}

ClassId thing_class(int index) { return index == 0 ? ClassId::car : ClassId::pedestrian; }

int scale_bin(const CellRect& box) {
  const int a = box.area();
  return a <= 3 ? 0 : (a <= 10 ? 1 : 2);
}

namespace {

bool drivable(std::uint8_t c) {
  return c == static_cast<std::uint8_t>(ClassId::road) ||
         c == static_cast<std::uint8_t>(ClassId::lane_marking);
}

// Visits cells at Chebyshev distance exactly r from the box, inside the grid.
template <typename Fn>
void for_ring(int width, int height, const CellRect& box, int r, Fn&& fn) {
  for (int y = box.y0 - r; y <= box.y1 + r; ++y) {
    if (y < 0 || y >= height) continue;
    const bool edge_row = y == box.y0 - r || y == box.y1 + r;
    for (int x = box.x0 - r; x <= box.x1 + r; ++x) {
      if (x < 0 || x >= width) continue;
      if (!edge_row && x != box.x0 - r && x != box.x1 + r) continue;
      fn(x, y);
    }
  }
}

}  // namespace

int context_bin(const ClassGrid& grid, const CellRect& box) {
  const int w = static_cast<int>(grid.cols()), h = static_cast<int>(grid.rows());
  for (int r = 1; r <= 3; ++r) {
    bool hit = false;
    for_ring(w, h, box, r, [&](int x, int y) { hit = hit || drivable(grid(y, x)); });
    if (hit) return r == 1 ? 0 : 1;
  }
  return 2;
}

std::pair<int, int> position_bin(const Affine& affine, int width, int height) {
  const int px = static_cast<int>(std::floor(affine.translate_x * kPositionBins / width));
  const int py = static_cast<int>(std::floor(affine.translate_y * kPositionBins / height));
  return {std::clamp(px, 0, kPositionBins - 1), std::clamp(py, 0, kPositionBins - 1)};
}

// ---------------------------------------------------------------------------
// Where

WherePredictor::WherePredictor(int width, int height, double alpha,
                               std::array<std::vector<std::uint32_t>, kThingClasses> counts)
    : width_(width), height_(height), alpha_(alpha), counts_(std::move(counts)) {
  if (!(alpha_ >= 0.0)) throw ConfigError("smoothing must be nonnegative");
  for (int ci = 0; ci < kThingClasses; ++ci) {
    auto& cnt = counts_[ci];
    if (cnt.size() != static_cast<std::size_t>(kBins)) throw ConfigError("where histogram has the wrong size");
    auto& p = probs_[ci];
    p.assign(kBins, 0.0);
    double total = 0.0;
    for (int ctx = 0; ctx < kContextBins; ++ctx) {
      for (int py = 0; py < kPositionBins; ++py) {
        for (int px = 0; px < kPositionBins; ++px) {
          for (int s = 0; s < kScaleBins; ++s) {
            bool near_observed = false;
            for (int dy = -1; dy <= 1 && !near_observed; ++dy) {
              for (int dx = -1; dx <= 1; ++dx) {
                const int nx = px + dx, ny = py + dy;
                if (nx < 0 || ny < 0 || nx >= kPositionBins || ny >= kPositionBins) continue;
                if (cnt[bin(ctx, nx, ny, s)] > 0) {
                  near_observed = true;
                  break;
                }
              }
            }
            if (!near_observed) continue;
            const int b = bin(ctx, px, py, s);
            p[b] = cnt[b] + alpha_;
            total += p[b];
          }
        }
      }
    }
    if (total > 0.0) {
      for (double& v : p) v /= total;
    }
  }
}

bool WherePredictor::fitted_for(ClassId c) const { return observed(c) > 0; }

std::uint64_t WherePredictor::observed(ClassId c) const {
  if (!is_thing(c)) return 0;
  const auto& cnt = counts_[thing_index(c)];
  return std::accumulate(cnt.begin(), cnt.end(), std::uint64_t{0});
}

WherePredictor fit_where(std::span<const Layout> layouts, double alpha) {
  if (layouts.empty()) throw FitError("where predictor needs at least one layout");
  const int w = layouts.front().semantic.width(), h = layouts.front().semantic.height();
  std::array<std::vector<std::uint32_t>, kThingClasses> counts;
  for (auto& c : counts) c.assign(WherePredictor::kBins, 0);
  std::size_t seen = 0;
  for (const auto& l : layouts) {
    if (l.semantic.width() != w || l.semantic.height() != h) {
      throw FitError("where predictor layouts differ in size");
    }
    for (const auto& r : l.instances.records()) {
      const int ctx = context_bin(l.semantic.grid(), r.box);
      const auto [px, py] = position_bin(r.affine, w, h);
      ++counts[thing_index(r.cls)][WherePredictor::bin(ctx, px, py, scale_bin(r.box))];
      ++seen;
    }
  }
  if (seen == 0) throw FitError("where predictor needs at least one instance");
  return WherePredictor(w, h, alpha, std::move(counts));
}

// ---------------------------------------------------------------------------
// What

bool single_component(const Mask& mask) {
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  const int total = static_cast<int>((mask != 0).count());
  if (total == 0) return false;
  Mask seen = Mask::Zero(h, w);
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < h && queue.empty(); ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask(y, x)) {
        queue.emplace_back(x, y);
        seen(y, x) = 1;
        break;
      }
    }
  }
  int reached = 0;
  while (!queue.empty()) {
    auto [x, y] = queue.front();
    queue.pop_front();
    ++reached;
    constexpr int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const int nx = x + dx[k], ny = y + dy[k];
      if (nx < 0 || ny < 0 || nx >= w || ny >= h || !mask(ny, nx) || seen(ny, nx)) continue;
      seen(ny, nx) = 1;
      queue.emplace_back(nx, ny);
    }
  }
  return reached == total;
}

WhatPredictor::WhatPredictor(Library library) : library_(std::move(library)) {
  for (const auto& per_class : library_) {
    for (const auto& bin : per_class) {
      for (const auto& t : bin) {
        if (!single_component(t.mask)) throw ConfigError("shape template is not a single component");
      }
    }
  }
}

bool WhatPredictor::has_class(ClassId c) const {
  if (!is_thing(c)) return false;
  for (const auto& bin : library_[thing_index(c)]) {
    if (!bin.empty()) return true;
  }
  return false;
}

WhatPredictor fit_what(std::span<const Layout> layouts) {
  WhatPredictor::Library lib;
  std::size_t kept = 0;
  for (const auto& l : layouts) {
    const auto& ids = l.instances.grid();
    for (const auto& r : l.instances.records()) {
      Mask m = (ids.block(r.box.y0, r.box.x0, r.box.height(), r.box.width()) == r.id).cast<std::uint8_t>();
      if (!single_component(m)) continue;
      auto& bin = lib[thing_index(r.cls)][scale_bin(r.box)];
      auto it = std::find_if(bin.begin(), bin.end(), [&](const ShapeTemplate& t) {
        return t.mask.rows() == m.rows() && t.mask.cols() == m.cols() && (t.mask == m).all();
      });
      if (it != bin.end()) {
        ++it->weight;
      } else {
        bin.push_back({std::move(m), 1});
      }
      ++kept;
    }
  }
  if (kept == 0) throw FitError("what predictor needs at least one instance");
  return WhatPredictor(std::move(lib));
}

Predictors fit_predictors(std::span<const Layout> layouts, double alpha) {
  return {fit_where(layouts, alpha), fit_what(layouts)};
}

// ---------------------------------------------------------------------------
// Insertion

namespace {

template <typename Weights>
std::size_t draw_index(Rng& rng, const Weights& weights, double total) {
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0) continue;
    u -= weights[i];
    if (u < 0) return i;
  }
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0) return i;
  }
  return 0;
}

Mask resample(const Mask& m, int w, int h) {
  Mask out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) out(y, x) = m(y * m.rows() / h, x * m.cols() / w);
  }
  return out;
}

CellRect centered_box(double cx, double cy, int w, int h) {
  const int x0 = static_cast<int>(std::lround(cx - 0.5 * (w - 1)));
  const int y0 = static_cast<int>(std::lround(cy - 0.5 * (h - 1)));
  return {x0, y0, x0 + w - 1, y0 + h - 1};
}

// Writes a mask as a new instance into copies of the base maps.
std::optional<Layout> write_instance(const Layout& base, ClassId cls, const Mask& mask, int x0, int y0,
                                     InstanceRecord* record_out) {
  ClassGrid g = base.semantic.grid();
  InstanceGrid ids = base.instances.grid();
  const std::int32_t id = base.instances.max_id() + 1;
  CellRect box{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), -1, -1};
  for (int y = 0; y < mask.rows(); ++y) {
    for (int x = 0; x < mask.cols(); ++x) {
      if (!mask(y, x)) continue;
      const int gx = x0 + x, gy = y0 + y;
      if (gx < 0 || gy < 0 || gx >= g.cols() || gy >= g.rows()) return std::nullopt;
      g(gy, gx) = static_cast<std::uint8_t>(cls);
      ids(gy, gx) = id;
      box.x0 = std::min(box.x0, gx);
      box.y0 = std::min(box.y0, gy);
      box.x1 = std::max(box.x1, gx);
      box.y1 = std::max(box.y1, gy);
    }
  }
  if (box.x1 < 0) return std::nullopt;
  if (!(g == static_cast<std::uint8_t>(ClassId::road)).any()) return std::nullopt;
  auto records = base.instances.records();
  const InstanceRecord rec{id, cls, box, affine_of(box)};
  records.push_back(rec);
  if (record_out) *record_out = rec;
  return Layout{SemanticMap(std::move(g)), InstanceMap(std::move(ids), std::move(records))};
}

}  // namespace

std::optional<AugmentationCandidate> sample_insertion(const WherePredictor& where,
                                                      const WhatPredictor& what, const Layout& base,
                                                      ClassId cls, std::uint64_t seed,
                                                      int max_resamples,
                                                      std::uint64_t source_sample_id) {
  if (!is_thing(cls) || !where.fitted_for(cls) || !what.has_class(cls)) return std::nullopt;
  const int W = base.semantic.width(), H = base.semantic.height();
  const double bin_w = static_cast<double>(W) / kPositionBins;
  const double bin_h = static_cast<double>(H) / kPositionBins;

  // Placement weights conditioned on the context each bin has in this base.
  std::vector<double> weights(kPositionBins * kPositionBins * kScaleBins, 0.0);
  double total = 0.0;
  for (int s = 0; s < kScaleBins; ++s) {
    const auto& lib = what.templates(cls, s);
    if (lib.empty()) continue;
    const auto& typical = *std::max_element(lib.begin(), lib.end(), [](const auto& a, const auto& b) {
      return a.weight < b.weight;
    });
    for (int py = 0; py < kPositionBins; ++py) {
      for (int px = 0; px < kPositionBins; ++px) {
        const CellRect box = centered_box((px + 0.5) * bin_w, (py + 0.5) * bin_h,
                                          static_cast<int>(typical.mask.cols()),
                                          static_cast<int>(typical.mask.rows()));
        const int ctx = context_bin(base.semantic.grid(), box);
        const double p = where.probability(cls, ctx, px, py, s);
        weights[(py * kPositionBins + px) * kScaleBins + s] = p;
        total += p;
      }
    }
  }
  if (total <= 0.0) return std::nullopt;

  Rng rng(seed);
  for (int attempt = 0; attempt < max_resamples; ++attempt) {
    const std::size_t b = draw_index(rng, weights, total);
    const int s = static_cast<int>(b % kScaleBins);
    const int px = static_cast<int>((b / kScaleBins) % kPositionBins);
    const int py = static_cast<int>(b / kScaleBins / kPositionBins);
    const auto& lib = what.templates(cls, s);
    std::vector<double> tw(lib.size());
    double ttotal = 0.0;
    for (std::size_t i = 0; i < lib.size(); ++i) ttotal += tw[i] = lib[i].weight;
    const Mask& tmpl = lib[draw_index(rng, tw, ttotal)].mask;
    const int w = std::max(1, static_cast<int>(std::lround(tmpl.cols() * rng.uniform(1.0, 1.3))));
    const int h = std::max(1, static_cast<int>(std::lround(tmpl.rows() * rng.uniform(1.0, 1.3))));
    Mask mask = resample(tmpl, w, h);
    if (!single_component(mask)) mask = tmpl;
    const double cx = (px + rng.uniform()) * bin_w;
    const double cy = (py + rng.uniform()) * bin_h;
    const CellRect box = centered_box(cx, cy, static_cast<int>(mask.cols()), static_cast<int>(mask.rows()));
    if (box.x0 < 0 || box.y0 < 0 || box.x1 >= W || box.y1 >= H) continue;
    InstanceRecord rec;
    auto layout = write_instance(base, cls, mask, box.x0, box.y0, &rec);
    if (!layout) continue;
    return AugmentationCandidate{std::move(layout->semantic), std::move(layout->instances), {rec},
                                 source_sample_id, std::nullopt};
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Plausibility scoring

namespace {

constexpr std::array<int, kScorerScales> kScaleFactors = {1, 2, 4};

ClassGrid downsample(const ClassGrid& g, int f) {
  if (f == 1) return g;
  const int h = static_cast<int>((g.rows() + f - 1) / f), w = static_cast<int>((g.cols() + f - 1) / f);
  ClassGrid out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::array<int, kNumClasses> votes{};
      for (int dy = 0; dy < f; ++dy) {
        for (int dx = 0; dx < f; ++dx) {
          const int gy = y * f + dy, gx = x * f + dx;
          if (gy < g.rows() && gx < g.cols()) ++votes[g(gy, gx)];
        }
      }
      out(y, x) = static_cast<std::uint8_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  }
  return out;
}

CellRect scale_box(const CellRect& b, int f) { return {b.x0 / f, b.y0 / f, b.x1 / f, b.y1 / f}; }

int overlap_bin(double ratio) {
  if (ratio <= 0.0) return 0;
  if (ratio <= 0.25) return 1;
  if (ratio <= 0.5) return 2;
  return 3;
}

// Features of one instance at one scale.
struct InstanceFeatures {
  int thing = 0;
  std::array<int, kNumClasses> ring{};
  int ring_total = 0;
  int context = 0;
  int scale = 0;
  int row = 0;
  int overlap = 0;
  int fill = 0;
  int aspect = 0;
};

std::vector<InstanceFeatures> instance_features(const Layout& l, const ClassGrid& g, int f) {
  const auto& recs = l.instances.records();
  const int gw = static_cast<int>(g.cols()), gh = static_cast<int>(g.rows());
  std::vector<InstanceFeatures> out;
  out.reserve(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    InstanceFeatures feat;
    feat.thing = thing_index(r.cls);
    const CellRect sb = scale_box(r.box, f);
    for_ring(gw, gh, sb, 1, [&](int x, int y) {
      ++feat.ring[g(y, x)];
      ++feat.ring_total;
    });
    feat.context = context_bin(g, sb);
    feat.scale = scale_bin(r.box);
    feat.row = position_bin(r.affine, l.semantic.width(), l.semantic.height()).second;
    double worst = 0.0;
    for (std::size_t j = 0; j < recs.size(); ++j) {
      if (j == i) continue;
      const CellRect ob = scale_box(recs[j].box, f);
      const int inter = intersection_area(sb, ob);
      if (inter == 0) continue;
      worst = std::max(worst, static_cast<double>(inter) / std::min(sb.area(), ob.area()));
    }
    feat.overlap = overlap_bin(worst);
    int own = 0;
    for (int y = std::max(0, sb.y0); y <= std::min(gh - 1, sb.y1); ++y) {
      for (int x = std::max(0, sb.x0); x <= std::min(gw - 1, sb.x1); ++x) {
        own += g(y, x) == static_cast<std::uint8_t>(r.cls);
      }
    }
    const double fill = static_cast<double>(own) / sb.area();
    feat.fill = std::min(ScaleTables::kFillBins - 1, static_cast<int>(std::floor(fill * ScaleTables::kFillBins - 1e-9)));
    feat.fill = std::max(feat.fill, 0);
    const double aspect = static_cast<double>(sb.width()) / sb.height();
    feat.aspect = aspect < 0.75 ? 0 : (aspect <= 1.34 ? 1 : 2);
    out.push_back(feat);
  }
  return out;
}

// Converts per-thing count blocks into log p - log max p with additive smoothing.
std::vector<double> log_ratio_table(const std::vector<double>& counts, int per_thing, double alpha) {
  std::vector<double> out(counts.size());
  for (int t = 0; t < kThingClasses; ++t) {
    double total = 0.0, best = 0.0;
    for (int k = 0; k < per_thing; ++k) {
      const double v = counts[t * per_thing + k] + alpha;
      total += v;
      best = std::max(best, v);
    }
    for (int k = 0; k < per_thing; ++k) {
      const double v = counts[t * per_thing + k] + alpha;
      out[t * per_thing + k] = total > 0 ? std::log(v) - std::log(best) : 0.0;
    }
  }
  return out;
}

ScaleTables fit_tables(std::span<const Layout> layouts, int f, double alpha) {
  std::vector<double> ring(kThingClasses * kNumClasses, 0.0);
  std::vector<double> context(kThingClasses * kContextBins, 0.0);
  std::vector<double> transform(kThingClasses * kContextBins * kScaleBins, 0.0);
  std::vector<double> row(kThingClasses * kPositionBins, 0.0);
  std::vector<double> overlap(kThingClasses * ScaleTables::kOverlapBins, 0.0);
  std::vector<double> shape(kThingClasses * ScaleTables::kFillBins * ScaleTables::kAspectBins, 0.0);
  for (const auto& l : layouts) {
    const ClassGrid g = downsample(l.semantic.grid(), f);
    for (const auto& feat : instance_features(l, g, f)) {
      const int t = feat.thing;
      if (feat.ring_total > 0) {
        for (int c = 0; c < kNumClasses; ++c) {
          ring[t * kNumClasses + c] += static_cast<double>(feat.ring[c]) / feat.ring_total;
        }
      }
      context[t * kContextBins + feat.context] += 1;
      transform[(t * kContextBins + feat.context) * kScaleBins + feat.scale] += 1;
      row[t * kPositionBins + feat.row] += 1;
      overlap[t * ScaleTables::kOverlapBins + feat.overlap] += 1;
      shape[(t * ScaleTables::kFillBins + feat.fill) * ScaleTables::kAspectBins + feat.aspect] += 1;
    }
  }
  ScaleTables st;
  st.ring = log_ratio_table(ring, kNumClasses, alpha * 0.1);
  st.context = log_ratio_table(context, kContextBins, alpha);
  st.transform = log_ratio_table(transform, kContextBins * kScaleBins, alpha);
  st.row = log_ratio_table(row, kPositionBins, alpha);
  st.overlap = log_ratio_table(overlap, ScaleTables::kOverlapBins, alpha);
  st.shape = log_ratio_table(shape, ScaleTables::kFillBins * ScaleTables::kAspectBins, alpha);
  return st;
}

double logistic(double raw, const ComponentCalibration& c) {
  const double z = std::clamp((raw - c.center) / c.temperature, -30.0, 30.0);
  return 1.0 / (1.0 + std::exp(-z));
}

double apply_knot(double combined, double knot, double threshold) {
  if (combined <= knot) return threshold * combined / knot;
  return threshold + (1.0 - threshold) * (combined - knot) / (1.0 - knot);
}

}  // namespace

PlausibilityScorer::PlausibilityScorer(
    double threshold, std::array<double, kComponents> weights, std::array<ScaleTables, kScorerScales> tables,
    std::array<std::array<ComponentCalibration, kScorerScales>, kComponents> calibration, double knot)
    : threshold_(threshold),
      weights_(weights),
      tables_(std::move(tables)),
      calibration_(calibration),
      knot_(knot) {
  if (!(threshold_ > 0.0 && threshold_ < 1.0)) throw ConfigError("scorer threshold must lie in (0,1)");
  double sum = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0)) throw ConfigError("scorer weights must be nonnegative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("scorer weights must sum to 1");
  if (!(knot_ > 0.0 && knot_ < 1.0)) throw ConfigError("scorer knot must lie in (0,1)");
  for (const auto& comp : calibration_) {
    for (const auto& c : comp) {
      if (!(c.temperature > 0.0) || !std::isfinite(c.center)) throw ConfigError("invalid scorer calibration");
    }
  }
}

ComponentRaw PlausibilityScorer::raw(const Layout& layout) const {
  ComponentRaw out{};
  for (int s = 0; s < kScorerScales; ++s) {
    const int f = kScaleFactors[s];
    const ScaleTables& t = tables_[s];
    const ClassGrid g = downsample(layout.semantic.grid(), f);
    std::array<double, kComponents> worst{0.0, 0.0, 0.0, 0.0};
    for (const auto& feat : instance_features(layout, g, f)) {
      const int k = feat.thing;
      double box = 0.0;
      if (feat.ring_total > 0) {
        for (int c = 0; c < kNumClasses; ++c) box += feat.ring[c] * t.ring[k * kNumClasses + c];
        box /= feat.ring_total;
      }
      const double ov = t.overlap[k * ScaleTables::kOverlapBins + feat.overlap];
      const double inst = t.context[k * kContextBins + feat.context] + ov;
      const double aff = t.transform[(k * kContextBins + feat.context) * kScaleBins + feat.scale] +
                         t.row[k * kPositionBins + feat.row] + ov;
      const double shp = t.shape[(k * ScaleTables::kFillBins + feat.fill) * ScaleTables::kAspectBins + feat.aspect];
      worst[0] = std::min(worst[0], box);
      worst[1] = std::min(worst[1], inst);
      worst[2] = std::min(worst[2], aff);
      worst[3] = std::min(worst[3], shp);
    }
    for (int c = 0; c < kComponents; ++c) out[c][s] = worst[c];
  }
  return out;
}

ComponentRaw PlausibilityScorer::components(const Layout& layout) const {
  ComponentRaw r = raw(layout);
  for (int c = 0; c < kComponents; ++c) {
    for (int s = 0; s < kScorerScales; ++s) r[c][s] = logistic(r[c][s], calibration_[c][s]);
  }
  return r;
}

double PlausibilityScorer::combined(const Layout& layout) const {
  const ComponentRaw comp = components(layout);
  double total = 0.0;
  for (int c = 0; c < kComponents; ++c) {
    double mean = 0.0;
    for (int s = 0; s < kScorerScales; ++s) mean += comp[c][s];
    total += weights_[c] * mean / kScorerScales;
  }
  return std::clamp(total, 0.0, 1.0);
}

double PlausibilityScorer::score(const Layout& layout) const {
  return std::clamp(apply_knot(combined(layout), knot_, threshold_), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Corruptions

namespace {

Mask car_mask(int w, int h) {
  Mask m = Mask::Ones(h, w);
  if (w >= 4) m(0, 0) = m(0, w - 1) = 0;
  return m;
}

// First position (in a seeded scan order) whose box and one-cell ring lie
// entirely on `region`.
std::optional<std::pair<int, int>> find_region_slot(const ClassGrid& g, ClassId region, int w, int h,
                                                    std::uint64_t seed) {
  const int gw = static_cast<int>(g.cols()), gh = static_cast<int>(g.rows());
  std::vector<std::pair<int, int>> slots;
  for (int y = 1; y + h < gh; ++y) {
    for (int x = 1; x + w < gw; ++x) {
      bool ok = true;
      for (int yy = y - 1; yy <= y + h && ok; ++yy) {
        for (int xx = x - 1; xx <= x + w; ++xx) {
          if (g(yy, xx) != static_cast<std::uint8_t>(region)) {
            ok = false;
            break;
          }
        }
      }
      if (ok) slots.emplace_back(x, y);
    }
  }
  if (slots.empty()) return std::nullopt;
  Rng rng(seed);
  return slots[rng.below(slots.size())];
}

}  // namespace

std::optional<Layout> corrupt_layout(const Layout& layout, Corruption kind, std::uint64_t seed) {
  const ClassGrid& g = layout.semantic.grid();
  switch (kind) {
    case Corruption::in_building:
    case Corruption::in_sky: {
      const ClassId region = kind == Corruption::in_building ? ClassId::building : ClassId::sky;
      Rng rng(seed);
      const int w = rng.between(3, 5), h = rng.between(2, 3);
      auto slot = find_region_slot(g, region, w, h, rng.next());
      if (!slot) return std::nullopt;
      return write_instance(layout, ClassId::car, car_mask(w, h), slot->first, slot->second, nullptr);
    }
    case Corruption::overlap: {
      const auto& recs = layout.instances.records();
      std::vector<const InstanceRecord*> usable;
      for (const auto& r : recs) {
        if (r.box.width() >= 2 || r.box.height() >= 2) usable.push_back(&r);
      }
      if (usable.empty()) return std::nullopt;
      Rng rng(seed);
      const InstanceRecord& r = *usable[rng.below(usable.size())];
      const Mask m = (layout.instances.grid().block(r.box.y0, r.box.x0, r.box.height(), r.box.width()) == r.id)
                         .cast<std::uint8_t>();
      const bool horizontal = r.box.width() >= r.box.height();
      const int dx = horizontal ? 1 : 0, dy = horizontal ? 0 : 1;
      if (!single_component(m)) return std::nullopt;
      return write_instance(layout, r.cls, m, r.box.x0 + dx, r.box.y0 + dy, nullptr);
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Scorer fitting

FittedScorer fit_scorer_with_diagnostics(std::span<const Layout> real_layouts, const ScorerConfig& config) {
  if (real_layouts.size() < 10) {
    throw FitError("plausibility scorer needs at least 10 layouts, got " + std::to_string(real_layouts.size()));
  }
  std::vector<Layout> fit_set, calib_set;
  for (std::size_t i = 0; i < real_layouts.size(); ++i) {
    (i % 4 == 3 ? calib_set : fit_set).push_back(real_layouts[i]);
  }
  std::array<ScaleTables, kScorerScales> tables;
  for (int s = 0; s < kScorerScales; ++s) tables[s] = fit_tables(fit_set, kScaleFactors[s], config.smoothing);

  std::vector<Layout> negatives;
  for (std::size_t i = 0; i < calib_set.size(); ++i) {
    for (auto kind : {Corruption::in_building, Corruption::overlap, Corruption::in_sky}) {
      auto bad = corrupt_layout(calib_set[i], kind, derive_seed(config.seed, {i, static_cast<std::uint64_t>(kind)}));
      if (bad) negatives.push_back(std::move(*bad));
    }
  }

  std::array<std::array<ComponentCalibration, kScorerScales>, kComponents> identity{};
  const PlausibilityScorer probe(config.threshold, config.weights, tables, identity, 0.5);
  std::array<std::array<std::vector<double>, kScorerScales>, kComponents> real_raw;
  for (const auto& l : calib_set) {
    const ComponentRaw r = probe.raw(l);
    for (int c = 0; c < kComponents; ++c) {
      for (int s = 0; s < kScorerScales; ++s) real_raw[c][s].push_back(r[c][s]);
    }
  }
  std::array<std::array<ComponentCalibration, kScorerScales>, kComponents> calibration{};
  for (int c = 0; c < kComponents; ++c) {
    for (int s = 0; s < kScorerScales; ++s) {
      const double lo = quantile(real_raw[c][s], 0.02);
      const double med = quantile(real_raw[c][s], 0.5);
      const double spread = std::max(med - lo, 0.5);
      calibration[c][s] = {lo - spread, spread / 3.0};
    }
  }

  const PlausibilityScorer unmapped(config.threshold, config.weights, tables, calibration, 0.5);
  std::vector<double> real_combined, neg_combined;
  for (const auto& l : calib_set) real_combined.push_back(unmapped.combined(l));
  for (const auto& l : negatives) neg_combined.push_back(unmapped.combined(l));

  const double tau = config.threshold;
  const double lo_real = quantile(real_combined, 0.02);
  const double med_real = quantile(real_combined, 0.5);
  const double hi_neg = neg_combined.empty() ? 0.0 : *std::max_element(neg_combined.begin(), neg_combined.end());
  double knot = hi_neg < lo_real ? hi_neg + 0.35 * (lo_real - hi_neg) : lo_real - 1e-6;
  const double q = config.margin / (1.0 - tau);
  if (q >= 1.0) throw FitError("threshold plus margin exceeds the score range");
  knot = std::min(knot, (med_real - q) / (1.0 - q));
  if (!(knot > 0.0)) throw FitError("plausibility scorer cannot place the median real layout above the threshold");
  knot = std::min(knot, 1.0 - 1e-6);

  FittedScorer out{PlausibilityScorer(tau, config.weights, tables, calibration, knot), {}};
  auto& d = out.diagnostics;
  d.fit_layouts = fit_set.size();
  d.calibration_layouts = calib_set.size();
  d.negatives = negatives.size();
  for (const auto& l : calib_set) {
    d.real_scores.push_back(out.scorer.score(l));
    const ComponentRaw comp = out.scorer.components(l);
    for (int c = 0; c < kComponents; ++c) {
      for (int s = 0; s < kScorerScales; ++s) d.real_components[c][s].push_back(comp[c][s]);
    }
  }
  for (const auto& l : negatives) {
    d.negative_scores.push_back(out.scorer.score(l));
    const ComponentRaw comp = out.scorer.components(l);
    for (int c = 0; c < kComponents; ++c) {
      for (int s = 0; s < kScorerScales; ++s) d.negative_components[c][s].push_back(comp[c][s]);
    }
  }
  d.real_median = quantile(d.real_scores, 0.5);
  auto pass_rate = [&](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return static_cast<double>(std::count_if(v.begin(), v.end(), [&](double s) { return s >= tau; })) / v.size();
  };
  d.real_pass_rate = pass_rate(d.real_scores);
  d.negative_pass_rate = pass_rate(d.negative_scores);
  return out;
}

PlausibilityScorer fit_scorer(std::span<const Layout> real_layouts, double threshold) {
  ScorerConfig cfg;
  cfg.threshold = threshold;
  return fit_scorer_with_diagnostics(real_layouts, cfg).scorer;
}

double score(const PlausibilityScorer& scorer, const AugmentationCandidate& candidate) {
  return scorer.score(candidate.layout());
}

AugmentationCandidate scored(const PlausibilityScorer& scorer, AugmentationCandidate candidate) {
  candidate.score = score(scorer, candidate);
  return candidate;
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentResult augment_semantic(const Layout& base, std::uint64_t source_sample_id, int fan_out,
                               const Predictors& predictors, const PlausibilityScorer& scorer,
                               std::uint64_t seed, const AugmentConfig& config) {
  return augment_semantic(base, source_sample_id, fan_out, predictors, &scorer, seed, config);
}

AugmentResult augment_semantic(const Layout& base, std::uint64_t source_sample_id, int fan_out,
                               const Predictors& predictors, const PlausibilityScorer* scorer,
                               std::uint64_t seed, const AugmentConfig& config) {
  if (fan_out < 1) throw ConfigError("fan-out must be at least 1");
  AugmentResult out;
  std::array<double, kThingClasses> class_weights{};
  double total = 0.0;
  for (int t = 0; t < kThingClasses; ++t) {
    const ClassId c = thing_class(t);
    if (predictors.what.has_class(c)) class_weights[t] = static_cast<double>(predictors.where.observed(c));
    total += class_weights[t];
  }
  if (total <= 0.0) return out;
  const int budget = config.budget_factor * fan_out;
  Rng class_rng(derive_seed(seed, {source_sample_id, 0xC1A55}));
  while (out.stats.accepted < fan_out && out.stats.attempts < budget) {
    const int attempt = out.stats.attempts++;
    const ClassId cls = thing_class(static_cast<int>(draw_index(class_rng, class_weights, total)));
    auto cand = sample_insertion(predictors.where, predictors.what, base, cls,
                                 derive_seed(seed, {source_sample_id, static_cast<std::uint64_t>(attempt)}),
                                 config.max_resamples, source_sample_id);
    if (!cand) {
      ++out.stats.placement_failures;
      continue;
    }
    if (scorer == nullptr) {
      out.candidates.push_back(std::move(*cand));
      ++out.stats.accepted;
      continue;
    }
    AugmentationCandidate c = scored(*scorer, std::move(*cand));
    if (scorer->accepts(*c.score, config.threshold)) {
      out.candidates.push_back(std::move(c));
      ++out.stats.accepted;
    } else {
      ++out.stats.rejected;
    }
  }
  return out;
}

AugmentResult augment_semantic(const DrivingSample& sample, int fan_out, const Predictors& predictors,
                               const PlausibilityScorer& scorer, std::uint64_t seed,
                               const AugmentConfig& config) {
  return augment_semantic(sample.layout(), 0, fan_out, predictors, scorer, seed, config);
}

}  // namespace parl
