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

// Little-endian binary codecs for every persisted type, the two file
// containers ("PARLDS1" datasets, "PARLDM1" models) and JSON exports.
// Byte layouts are listed in README.md.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "parl/dat.hpp"
#include "parl/policy.hpp"
#include "parl/world.hpp"

namespace parl {

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
  void f32(float v);
  void f64(double v);
  void raw(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void magic(std::string_view m) { buf_.insert(buf_.end(), m.begin(), m.end()); }
  // u32 length, then the bytes.
  void blob(std::span<const std::uint8_t> bytes);

  const Bytes& bytes() const { return buf_; }
  Bytes take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes buf_;
};

// Every read is bounds checked; running past the end throws DecodeError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : data_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(static_cast<std::uint32_t>(get(4))); }
  float f32();
  double f64();
  std::span<const std::uint8_t> raw(std::size_t n);
  void magic(std::string_view m);
  std::span<const std::uint8_t> blob();
  // Guards element counts read off the wire against absurd allocations.
  std::size_t count(std::size_t min_bytes_each);

  std::size_t remaining() const { return data_.size() - pos_; }
  void expect_end() const;

 private:
  std::uint64_t get(int n);
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// Field codecs. Decoders re-run the constructors' validation and report any
// violation as DecodeError.
void write(ByteWriter& w, const SemanticMap& m);
void write(ByteWriter& w, const InstanceMap& m);
void write(ByteWriter& w, const Layout& l);
void write(ByteWriter& w, const Scenario& s);
void write(ByteWriter& w, const DrivingSample& s);
void write(ByteWriter& w, const StyleModel& s);
void write(ByteWriter& w, const PolicyModel& p);
void write(ByteWriter& w, const EvaluationReport& r);
void write(ByteWriter& w, const WherePredictor& p);
void write(ByteWriter& w, const WhatPredictor& p);
void write(ByteWriter& w, const PlausibilityScorer& s);
void write(ByteWriter& w, const AugmentationCandidate& c);

SemanticMap read_semantic(ByteReader& r);
InstanceMap read_instances(ByteReader& r);
Layout read_layout(ByteReader& r);
Scenario read_scenario(ByteReader& r);
DrivingSample read_sample(ByteReader& r);
StyleModel read_style(ByteReader& r);
PolicyModel read_policy(ByteReader& r);
EvaluationReport read_report(ByteReader& r);
WherePredictor read_where(ByteReader& r);
WhatPredictor read_what(ByteReader& r);
PlausibilityScorer read_scorer(ByteReader& r);
AugmentationCandidate read_candidate(ByteReader& r);

inline constexpr std::string_view kDatasetMagic = "PARLDS1";
inline constexpr std::string_view kModelMagic = "PARLDM1";
inline constexpr std::uint16_t kFormatVersion = 1;

Bytes encode_dataset(std::span<const DrivingSample> samples);
std::vector<DrivingSample> decode_dataset(std::span<const std::uint8_t> bytes);

enum class ModelKind : std::uint8_t { style = 1, policy = 2, where = 3, what = 4, scorer = 5 };

Bytes encode_model(const StyleModel& m);
Bytes encode_model(const PolicyModel& m);
Bytes encode_model(const WherePredictor& m);
Bytes encode_model(const WhatPredictor& m);
Bytes encode_model(const PlausibilityScorer& m);

ModelKind model_kind(std::span<const std::uint8_t> bytes);
StyleModel decode_style_model(std::span<const std::uint8_t> bytes);
PolicyModel decode_policy_model(std::span<const std::uint8_t> bytes);
WherePredictor decode_where_model(std::span<const std::uint8_t> bytes);
WhatPredictor decode_what_model(std::span<const std::uint8_t> bytes);
PlausibilityScorer decode_scorer_model(std::span<const std::uint8_t> bytes);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
Bytes read_file(const std::filesystem::path& path);

// JSON mirrors for inspection. They are not read back.
nlohmann::ordered_json to_json(const DrivingSample& s);
nlohmann::ordered_json dataset_json(std::span<const DrivingSample> samples);
nlohmann::ordered_json to_json(const StyleModel& s);
nlohmann::ordered_json to_json(const EvaluationReport& r);
nlohmann::ordered_json to_json(const ScorerDiagnostics& d);

// One CSV line (no newline) and its header, same field order as to_json.
std::string report_csv_header();
std::string report_csv_row(const EvaluationReport& r);

}  // namespace parl
