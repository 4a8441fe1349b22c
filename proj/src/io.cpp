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
#include "parl/io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "parl/error.hpp"
#include "parl/stats.hpp"

namespace parl {


void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::blob(std::span<const std::uint8_t> bytes) {
  u32(static_cast<std::uint32_t>(bytes.size()));
  raw(bytes);
}

std::uint64_t ByteReader::get(int n) {
  if (remaining() < static_cast<std::size_t>(n)) throw DecodeError("truncated input");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += n;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  if (remaining() < n) throw DecodeError("truncated input");
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

void ByteReader::magic(std::string_view m) {
  auto got = raw(m.size());
  if (!std::equal(got.begin(), got.end(), m.begin())) {
    throw DecodeError("bad magic, expected " + std::string(m));
  }
}

std::span<const std::uint8_t> ByteReader::blob() { return raw(u32()); }

std::size_t ByteReader::count(std::size_t min_bytes_each) {
  const std::uint32_t n = u32();
  if (min_bytes_each > 0 && n > remaining() / min_bytes_each) throw DecodeError("element count exceeds input");
  return n;
}

void ByteReader::expect_end() const {
  if (remaining() != 0) throw DecodeError("trailing bytes after payload");
}

namespace {

// Runs a constructor and maps its validation failure onto DecodeError.
template <typename F>
auto validated(const char* what, F&& make) -> decltype(make()) {
  try {
    return make();
  } catch (const DecodeError&) {
    throw;
  } catch (const Error& e) {
    throw DecodeError(std::string(what) + ": " + e.what());
  }
}

double finite(ByteReader& r) {
  const double v = r.f64();
  if (!std::isfinite(v)) throw DecodeError("non-finite value");
  return v;
}

std::pair<int, int> dims(ByteReader& r) {
  const int w = r.u16(), h = r.u16();
  return {w, h};
}

void write(ByteWriter& w, const CellRect& b) {
  w.i32(b.x0);
  w.i32(b.y0);
  w.i32(b.x1);
  w.i32(b.y1);
}

CellRect read_rect(ByteReader& r) {
  CellRect b;
  b.x0 = r.i32();
  b.y0 = r.i32();
  b.x1 = r.i32();
  b.y1 = r.i32();
  return b;
}

void write(ByteWriter& w, const InstanceRecord& rec) {
  w.i32(rec.id);
  w.u8(static_cast<std::uint8_t>(rec.cls));
  write(w, rec.box);
  w.f64(rec.affine.translate_x);
  w.f64(rec.affine.translate_y);
  w.f64(rec.affine.scale_x);
  w.f64(rec.affine.scale_y);
}

constexpr std::size_t kRecordBytes = 4 + 1 + 16 + 32;

InstanceRecord read_record(ByteReader& r) {
  InstanceRecord rec;
  rec.id = r.i32();
  const auto cls = r.u8();
  if (cls >= kNumClasses) throw DecodeError("class id out of palette");
  rec.cls = static_cast<ClassId>(cls);
  rec.box = read_rect(r);
  rec.affine.translate_x = finite(r);
  rec.affine.translate_y = finite(r);
  rec.affine.scale_x = finite(r);
  rec.affine.scale_y = finite(r);
  return rec;
}

void write_records(ByteWriter& w, const std::vector<InstanceRecord>& recs) {
  w.u32(static_cast<std::uint32_t>(recs.size()));
  for (const auto& rec : recs) write(w, rec);
}

std::vector<InstanceRecord> read_records(ByteReader& r) {
  const std::size_t n = r.count(kRecordBytes);
  std::vector<InstanceRecord> recs;
  recs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) recs.push_back(read_record(r));
  return recs;
}

void write_doubles(ByteWriter& w, const std::vector<double>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (double x : v) w.f64(x);
}

std::vector<double> read_doubles(ByteReader& r) {
  const std::size_t n = r.count(8);
  std::vector<double> v(n);
  for (auto& x : v) x = r.f64();
  return v;
}

}  // namespace

void write(ByteWriter& w, const SemanticMap& m) {
  w.u16(static_cast<std::uint16_t>(m.width()));
  w.u16(static_cast<std::uint16_t>(m.height()));
  w.raw({m.grid().data(), static_cast<std::size_t>(m.grid().size())});
}

SemanticMap read_semantic(ByteReader& r) {
  const auto [w, h] = dims(r);
  auto cells = r.raw(static_cast<std::size_t>(w) * h);
  ClassGrid grid(h, w);
  std::copy(cells.begin(), cells.end(), grid.data());
  return validated("semantic map", [&] { return SemanticMap(std::move(grid)); });
}

void write(ByteWriter& w, const InstanceMap& m) {
  w.u16(static_cast<std::uint16_t>(m.width()));
  w.u16(static_cast<std::uint16_t>(m.height()));
  for (Eigen::Index i = 0; i < m.grid().size(); ++i) w.i32(m.grid().data()[i]);
  write_records(w, m.records());
}

InstanceMap read_instances(ByteReader& r) {
  const auto [w, h] = dims(r);
  if (static_cast<std::size_t>(w) * h > r.remaining() / 4) throw DecodeError("truncated input");
  InstanceGrid grid(h, w);
  for (Eigen::Index i = 0; i < grid.size(); ++i) grid.data()[i] = r.i32();
  auto recs = read_records(r);
  return validated("instance map", [&] { return InstanceMap(std::move(grid), std::move(recs)); });
}

void write(ByteWriter& w, const Layout& l) {
  write(w, l.semantic);
  write(w, l.instances);
}

Layout read_layout(ByteReader& r) {
  auto sem = read_semantic(r);
  auto inst = read_instances(r);
  if (sem.width() != inst.width() || sem.height() != inst.height()) {
    throw DecodeError("layout maps differ in size");
  }
  return {std::move(sem), std::move(inst)};
}

void write(ByteWriter& w, const Scenario& s) {
  w.u16(static_cast<std::uint16_t>(s.width));
  w.u16(static_cast<std::uint16_t>(s.height));
  w.u16(s.style.value);
  for (const auto& ch : s.pixels) {
    for (Eigen::Index i = 0; i < ch.size(); ++i) w.f32(ch.data()[i]);
  }
}

Scenario read_scenario(ByteReader& r) {
  Scenario s;
  std::tie(s.width, s.height) = dims(r);
  s.style.value = r.u16();
  const std::size_t n = static_cast<std::size_t>(s.width) * s.height;
  if (n * kChannels > r.remaining() / 4) throw DecodeError("truncated input");
  for (auto& ch : s.pixels) {
    ch.resize(s.height, s.width);
    for (std::size_t i = 0; i < n; ++i) {
      const float v = r.f32();
      if (!(v >= 0.0f && v <= 1.0f)) throw DecodeError("pixel value outside [0,1]");
      ch.data()[i] = v;
    }
  }
  return s;
}

void write(ByteWriter& w, const DrivingSample& s) {
  write(w, s.scenario);
  write(w, s.semantic);
  write(w, s.instances);
  w.u8(s.label.has_value());
  w.f64(s.label.value_or(0.0));
  w.u8(static_cast<std::uint8_t>(s.task));
  w.u8(static_cast<std::uint8_t>(s.provenance));
}

DrivingSample read_sample(ByteReader& r) {
  auto scenario = read_scenario(r);
  auto sem = read_semantic(r);
  auto inst = read_instances(r);
  if (sem.width() != scenario.width || sem.height() != scenario.height || inst.width() != sem.width() ||
      inst.height() != sem.height()) {
    throw DecodeError("sample grids differ in size");
  }
  const auto has_label = r.u8();
  const double label = r.f64();
  if (has_label > 1) throw DecodeError("bad label flag");
  if (has_label && !(label >= 0.0 && label <= 1.0)) throw DecodeError("label outside [0,1]");
  const auto task = r.u8(), prov = r.u8();
  if (task > 2 || prov > 2) throw DecodeError("bad task or provenance tag");
  DrivingSample s{std::move(scenario), std::move(sem), std::move(inst), std::nullopt,
                  static_cast<TaskType>(task), static_cast<Provenance>(prov)};
  if (has_label) s.label = label;
  return s;
}

void write(ByteWriter& w, const StyleModel& s) {
  w.u16(s.style().value);
  for (int c = 0; c < kNumClasses; ++c) {
    for (int k = 0; k < kChannels; ++k) w.f64(s.class_means()(c, k));
  }
  for (int c = 0; c < kNumClasses; ++c) w.f64(s.class_spreads()(c));
  w.u64(s.texture_seed());
  w.u8(s.present_mask());
  w.f64(s.separation_floor());
  w.u8(s.strict());
}

StyleModel read_style(ByteReader& r) {
  const StyleId id{r.u16()};
  Palette means;
  Spreads spreads;
  for (int c = 0; c < kNumClasses; ++c) {
    for (int k = 0; k < kChannels; ++k) means(c, k) = finite(r);
  }
  for (int c = 0; c < kNumClasses; ++c) spreads(c) = finite(r);
  const auto seed = r.u64();
  const auto present = r.u8();
  const double floor = finite(r);
  const auto strict = r.u8();
  if (strict > 1) throw DecodeError("bad style check flag");
  return validated("style model", [&] {
    return StyleModel(id, means, spreads, seed, present, floor,
                      strict ? StyleModel::Check::strict : StyleModel::Check::relaxed);
  });
}

void write(ByteWriter& w, const PolicyModel& p) {
  w.u16(kWeightDim);
  for (int i = 0; i < kWeightDim; ++i) w.f64(p.weights()(i));
  w.f64(p.lambda());
  w.u32(p.meta().samples);
  for (auto c : p.meta().provenance) w.u32(c);
}

PolicyModel read_policy(ByteReader& r) {
  if (r.u16() != kWeightDim) throw DecodeError("policy weight count mismatch");
  PolicyModel::Weights wts;
  for (int i = 0; i < kWeightDim; ++i) wts(i) = finite(r);
  const double lambda = finite(r);
  if (lambda < 0.0) throw DecodeError("negative ridge strength");
  TrainingMeta meta;
  meta.samples = r.u32();
  for (auto& c : meta.provenance) c = r.u32();
  return validated("policy", [&] { return PolicyModel(wts, lambda, meta); });
}

void write(ByteWriter& w, const EvaluationReport& rep) {
  for (int t = 0; t < 3; ++t) {
    w.f64(rep.task_error[t]);
    w.f64(rep.task_failure_rate[t]);
    w.u32(rep.task_count[t]);
  }
  w.f64(rep.overall_error);
  w.f64(rep.overall_failure_rate);
  w.u32(rep.count);
  w.f64(rep.delta_fail);
}

EvaluationReport read_report(ByteReader& r) {
  EvaluationReport rep;
  std::uint32_t total = 0;
  for (int t = 0; t < 3; ++t) {
    rep.task_error[t] = finite(r);
    rep.task_failure_rate[t] = finite(r);
    rep.task_count[t] = r.u32();
    total += rep.task_count[t];
  }
  rep.overall_error = finite(r);
  rep.overall_failure_rate = finite(r);
  rep.count = r.u32();
  rep.delta_fail = finite(r);
  if (total != rep.count) throw DecodeError("report task counts do not sum to the total");
  auto rate_ok = [](double x) { return x >= 0.0 && x <= 1.0; };
  for (int t = 0; t < 3; ++t) {
    if (!rate_ok(rep.task_failure_rate[t]) || rep.task_error[t] < 0.0) throw DecodeError("bad report rates");
  }
  if (!rate_ok(rep.overall_failure_rate) || rep.overall_error < 0.0 || !(rep.delta_fail > 0.0)) {
    throw DecodeError("bad report rates");
  }
  return rep;
}

void write(ByteWriter& w, const WherePredictor& p) {
  w.u16(static_cast<std::uint16_t>(p.width()));
  w.u16(static_cast<std::uint16_t>(p.height()));
  w.f64(p.alpha());
  for (int ci = 0; ci < kThingClasses; ++ci) {
    for (auto c : p.counts(thing_class(ci))) w.u32(c);
  }
}

WherePredictor read_where(ByteReader& r) {
  const auto [w, h] = dims(r);
  const double alpha = finite(r);
  std::array<std::vector<std::uint32_t>, kThingClasses> counts;
  for (auto& c : counts) {
    c.resize(WherePredictor::kBins);
    for (auto& x : c) x = r.u32();
  }
  return validated("where predictor", [&] { return WherePredictor(w, h, alpha, std::move(counts)); });
}

void write(ByteWriter& w, const WhatPredictor& p) {
  for (const auto& per_class : p.library()) {
    for (const auto& bin : per_class) {
      w.u32(static_cast<std::uint32_t>(bin.size()));
      for (const auto& t : bin) {
        w.u16(static_cast<std::uint16_t>(t.mask.cols()));
        w.u16(static_cast<std::uint16_t>(t.mask.rows()));
        w.raw({t.mask.data(), static_cast<std::size_t>(t.mask.size())});
        w.u32(t.weight);
      }
    }
  }
}

WhatPredictor read_what(ByteReader& r) {
  WhatPredictor::Library lib;
  for (auto& per_class : lib) {
    for (auto& bin : per_class) {
      const std::size_t n = r.count(8);
      for (std::size_t i = 0; i < n; ++i) {
        const auto [w, h] = dims(r);
        auto cells = r.raw(static_cast<std::size_t>(w) * h);
        ShapeTemplate t;
        t.mask.resize(h, w);
        std::copy(cells.begin(), cells.end(), t.mask.data());
        if ((t.mask > 1).any()) throw DecodeError("shape mask is not binary");
        t.weight = r.u32();
        bin.push_back(std::move(t));
      }
    }
  }
  return validated("what predictor", [&] { return WhatPredictor(std::move(lib)); });
}

void write(ByteWriter& w, const PlausibilityScorer& s) {
  w.f64(s.threshold());
  for (double x : s.weights()) w.f64(x);
  for (const auto& t : s.tables()) {
    for (const auto* v : {&t.ring, &t.context, &t.transform, &t.row, &t.overlap, &t.shape}) write_doubles(w, *v);
  }
  for (const auto& comp : s.calibration()) {
    for (const auto& c : comp) {
      w.f64(c.center);
      w.f64(c.temperature);
    }
  }
  w.f64(s.knot());
}

PlausibilityScorer read_scorer(ByteReader& r) {
  const double threshold = finite(r);
  std::array<double, kComponents> weights;
  for (auto& x : weights) x = finite(r);
  std::array<ScaleTables, kScorerScales> tables;
  for (auto& t : tables) {
    for (auto* v : {&t.ring, &t.context, &t.transform, &t.row, &t.overlap, &t.shape}) *v = read_doubles(r);
  }
  std::array<std::array<ComponentCalibration, kScorerScales>, kComponents> cal;
  for (auto& comp : cal) {
    for (auto& c : comp) {
      c.center = finite(r);
      c.temperature = finite(r);
    }
  }
  const double knot = finite(r);
  return validated("scorer", [&] { return PlausibilityScorer(threshold, weights, tables, cal, knot); });
}

void write(ByteWriter& w, const AugmentationCandidate& c) {
  write(w, c.semantic);
  write(w, c.instances);
  write_records(w, c.inserted);
  w.u64(c.source_sample_id);
  w.u8(c.score.has_value());
  w.f64(c.score.value_or(0.0));
}

AugmentationCandidate read_candidate(ByteReader& r) {
  auto layout = read_layout(r);
  auto inserted = read_records(r);
  for (const auto& rec : inserted) {
    const auto* found = layout.instances.find(rec.id);
    if (found == nullptr || !(*found == rec)) throw DecodeError("inserted record missing from instance map");
  }
  AugmentationCandidate c{std::move(layout.semantic), std::move(layout.instances), std::move(inserted),
                          r.u64(), std::nullopt};
  const auto has_score = r.u8();
  const double score = r.f64();
  if (has_score > 1) throw DecodeError("bad score flag");
  if (has_score) {
    if (!(score >= 0.0 && score <= 1.0)) throw DecodeError("score outside [0,1]");
    c.score = score;
  }
  return c;
}

Bytes encode_dataset(std::span<const DrivingSample> samples) {
  ByteWriter w;
  w.magic(kDatasetMagic);
  w.u16(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    ByteWriter body;
    write(body, s);
    w.blob(body.bytes());
  }
  return w.take();
}

std::vector<DrivingSample> decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.magic(kDatasetMagic);
  if (r.u16() != kFormatVersion) throw DecodeError("unsupported dataset version");
  const std::size_t n = r.count(4);
  std::vector<DrivingSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ByteReader body(r.blob());
    out.push_back(read_sample(body));
    body.expect_end();
  }
  r.expect_end();
  return out;
}

namespace {

template <typename T>
Bytes encode_model_as(ModelKind kind, const T& m) {
  ByteWriter body;
  write(body, m);
  ByteWriter w;
  w.magic(kModelMagic);
  w.u16(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.blob(body.bytes());
  return w.take();
}

ByteReader open_model(std::span<const std::uint8_t> bytes, ModelKind expected) {
  ByteReader r(bytes);
  r.magic(kModelMagic);
  if (r.u16() != kFormatVersion) throw DecodeError("unsupported model version");
  if (r.u8() != static_cast<std::uint8_t>(expected)) throw DecodeError("model container holds another kind");
  auto body = r.blob();
  r.expect_end();
  return ByteReader(body);
}

template <typename F>
auto decode_model_as(std::span<const std::uint8_t> bytes, ModelKind kind, F&& read) {
  ByteReader body = open_model(bytes, kind);
  auto m = read(body);
  body.expect_end();
  return m;
}

}  // namespace

Bytes encode_model(const StyleModel& m) { return encode_model_as(ModelKind::style, m); }
Bytes encode_model(const PolicyModel& m) { return encode_model_as(ModelKind::policy, m); }
Bytes encode_model(const WherePredictor& m) { return encode_model_as(ModelKind::where, m); }
Bytes encode_model(const WhatPredictor& m) { return encode_model_as(ModelKind::what, m); }
Bytes encode_model(const PlausibilityScorer& m) { return encode_model_as(ModelKind::scorer, m); }

ModelKind model_kind(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.magic(kModelMagic);
  if (r.u16() != kFormatVersion) throw DecodeError("unsupported model version");
  const auto k = r.u8();
  if (k < 1 || k > 5) throw DecodeError("unknown model kind");
  return static_cast<ModelKind>(k);
}

StyleModel decode_style_model(std::span<const std::uint8_t> b) {
  return decode_model_as(b, ModelKind::style, [](ByteReader& r) { return read_style(r); });
}
PolicyModel decode_policy_model(std::span<const std::uint8_t> b) {
  return decode_model_as(b, ModelKind::policy, [](ByteReader& r) { return read_policy(r); });
}
WherePredictor decode_where_model(std::span<const std::uint8_t> b) {
  return decode_model_as(b, ModelKind::where, [](ByteReader& r) { return read_where(r); });
}
WhatPredictor decode_what_model(std::span<const std::uint8_t> b) {
  return decode_model_as(b, ModelKind::what, [](ByteReader& r) { return read_what(r); });
}
PlausibilityScorer decode_scorer_model(std::span<const std::uint8_t> b) {
  return decode_model_as(b, ModelKind::scorer, [](ByteReader& r) { return read_scorer(r); });
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

namespace {

nlohmann::ordered_json grid_json(const auto& grid) {
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index y = 0; y < grid.rows(); ++y) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index x = 0; x < grid.cols(); ++x) row.push_back(+grid(y, x));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::ordered_json record_json(const InstanceRecord& rec) {
  return {{"id", rec.id},
          {"class", class_name(rec.cls)},
          {"box", {rec.box.x0, rec.box.y0, rec.box.x1, rec.box.y1}},
          {"affine", {rec.affine.translate_x, rec.affine.translate_y, rec.affine.scale_x, rec.affine.scale_y}}};
}

constexpr std::array<const char*, 3> kProvenanceNames = {"human", "crowdsourced", "augmented"};

}  // namespace

nlohmann::ordered_json to_json(const DrivingSample& s) {
  nlohmann::ordered_json j;
  j["width"] = s.scenario.width;
  j["height"] = s.scenario.height;
  j["style"] = s.scenario.style.value;
  j["task"] = task_name(s.task);
  j["provenance"] = kProvenanceNames[static_cast<int>(s.provenance)];
  j["label"] = s.label ? nlohmann::ordered_json(*s.label) : nlohmann::ordered_json(nullptr);
  j["semantic"] = grid_json(s.semantic.grid());
  j["instance_ids"] = grid_json(s.instances.grid());
  auto recs = nlohmann::ordered_json::array();
  for (const auto& rec : s.instances.records()) recs.push_back(record_json(rec));
  j["instances"] = std::move(recs);
  auto px = nlohmann::ordered_json::array();
  for (const auto& ch : s.scenario.pixels) px.push_back(grid_json(ch));
  j["pixels"] = std::move(px);
  return j;
}

nlohmann::ordered_json dataset_json(std::span<const DrivingSample> samples) {
  nlohmann::ordered_json j;
  j["magic"] = kDatasetMagic;
  j["version"] = kFormatVersion;
  j["count"] = samples.size();
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : samples) arr.push_back(to_json(s));
  j["samples"] = std::move(arr);
  return j;
}

nlohmann::ordered_json to_json(const StyleModel& s) {
  nlohmann::ordered_json j;
  j["style"] = s.style().value;
  j["strict"] = s.strict();
  j["separation_floor"] = s.separation_floor();
  j["min_separation"] = s.min_separation();
  auto classes = nlohmann::ordered_json::object();
  for (ClassId c : all_classes()) {
    if (!s.has_class(c)) continue;
    const auto m = s.class_means().row(index_of(c));
    classes[std::string(class_name(c))] = {{"mean", {m(0), m(1), m(2)}},
                                           {"spread", s.class_spreads()(index_of(c))}};
  }
  j["classes"] = std::move(classes);
  return j;
}

nlohmann::ordered_json to_json(const EvaluationReport& r) {
  nlohmann::ordered_json j;
  j["count"] = r.count;
  j["delta_fail"] = r.delta_fail;
  j["overall_error"] = r.overall_error;
  j["overall_failure_rate"] = r.overall_failure_rate;
  auto tasks = nlohmann::ordered_json::object();
  for (TaskType t : kAllTasks) {
    const int i = static_cast<int>(t);
    tasks[std::string(task_name(t))] = {{"count", r.task_count[i]},
                                        {"error", r.task_error[i]},
                                        {"failure_rate", r.task_failure_rate[i]}};
  }
  j["tasks"] = std::move(tasks);
  return j;
}

nlohmann::ordered_json to_json(const ScorerDiagnostics& d) {
  static constexpr std::array<const char*, kComponents> kNames = {"box_layout", "instance_layout", "affine",
                                                                  "shape"};
  auto summary = [](const std::vector<double>& v) {
    return nlohmann::ordered_json{{"n", v.size()},
                                  {"min", v.empty() ? 0.0 : *std::min_element(v.begin(), v.end())},
                                  {"q05", quantile(v, 0.05)},
                                  {"median", quantile(v, 0.5)},
                                  {"q95", quantile(v, 0.95)},
                                  {"max", v.empty() ? 0.0 : *std::max_element(v.begin(), v.end())},
                                  {"mean", mean(v)}};
  };
  nlohmann::ordered_json j;
  j["fit_layouts"] = d.fit_layouts;
  j["calibration_layouts"] = d.calibration_layouts;
  j["negatives"] = d.negatives;
  j["real_median"] = d.real_median;
  j["real_pass_rate"] = d.real_pass_rate;
  j["negative_pass_rate"] = d.negative_pass_rate;
  j["real_scores"] = summary(d.real_scores);
  j["negative_scores"] = summary(d.negative_scores);
  auto comps = nlohmann::ordered_json::object();
  for (int c = 0; c < kComponents; ++c) {
    auto scales = nlohmann::ordered_json::array();
    for (int s = 0; s < kScorerScales; ++s) {
      scales.push_back({{"scale", 1 << s},
                        {"real", summary(d.real_components[c][s])},
                        {"negative", summary(d.negative_components[c][s])}});
    }
    comps[kNames[c]] = std::move(scales);
  }
  j["components"] = std::move(comps);
  return j;
}

std::string report_csv_header() {
  return "count,delta_fail,overall_error,overall_failure_rate,turn_count,turn_error,turn_failure_rate,"
         "avoid_cars_count,avoid_cars_error,avoid_cars_failure_rate,straight_count,straight_error,"
         "straight_failure_rate";
}

std::string report_csv_row(const EvaluationReport& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.count << ',' << r.delta_fail << ',' << r.overall_error << ','
     << r.overall_failure_rate;
  for (int t = 0; t < 3; ++t) os << ',' << r.task_count[t] << ',' << r.task_error[t] << ',' << r.task_failure_rate[t];
  return os.str();
}

}  // namespace parl
