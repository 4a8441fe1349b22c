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

#include "parl/protocol.hpp"
#include "parl/rng.hpp"

namespace parl::testing {

// Random valid payloads for the round-trip fuzzer.
class Fuzz {
 public:
  explicit Fuzz(std::uint64_t seed) : rng_(seed) {}

  SemanticMap semantic(int w, int h) {
    ClassGrid g(h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) g(y, x) = static_cast<std::uint8_t>(rng_.below(kNumClasses));
    }
    g(h - 1, 0) = 0;
    return SemanticMap(g);
  }
  Layout layout(int w, int h) {
    SemanticMap m = semantic(w, h);
    InstanceMap i = extract_instances(m);
    return {std::move(m), std::move(i)};
  }
  Scenario scenario() {
    Scenario s;
    s.width = 1 + static_cast<int>(rng_.below(12));
    s.height = 1 + static_cast<int>(rng_.below(12));
    s.style = StyleId{static_cast<std::uint16_t>(rng_.below(65536))};
    for (auto& ch : s.pixels) {
      ch.resize(s.height, s.width);
      for (Eigen::Index k = 0; k < ch.size(); ++k) ch.data()[k] = static_cast<float>(rng_.uniform());
    }
    return s;
  }
  PolicyModel policy() {
    PolicyModel::Weights w;
    for (int k = 0; k < kWeightDim; ++k) w(k) = rng_.uniform(-1e3, 1e3) * (rng_.coin(0.1) ? 1e-300 : 1.0);
    TrainingMeta meta{static_cast<std::uint32_t>(rng_.next()),
                      {static_cast<std::uint32_t>(rng_.next()), static_cast<std::uint32_t>(rng_.next()),
                       static_cast<std::uint32_t>(rng_.next())}};
    return PolicyModel(w, rng_.uniform(0, 1), meta);
  }
  EvaluationReport report() {
    EvaluationReport r;
    for (int t = 0; t < 3; ++t) {
      r.task_error[t] = rng_.uniform();
      r.task_failure_rate[t] = rng_.uniform();
      r.task_count[t] = static_cast<std::uint32_t>(rng_.below(100));
    }
    r.overall_error = rng_.uniform();
    r.overall_failure_rate = rng_.uniform();
    r.count = r.task_count[0] + r.task_count[1] + r.task_count[2];
    r.delta_fail = rng_.uniform();
    return r;
  }

  Message message() {
    const NodeId robot = NodeId::robot(static_cast<std::uint16_t>(rng_.below(NodeId::kCloudBit)));
    const NodeId cloud = NodeId::cloud();
    const std::uint64_t seq = 1 + (rng_.next() >> 1);
    const int w = 16 + static_cast<int>(rng_.below(6)), h = 16 + static_cast<int>(rng_.below(6));
    switch (rng_.below(6)) {
      case 0: {
        UploadLocal u{{}, builtin_style(StyleId{static_cast<std::uint16_t>(rng_.below(100))}, rng_.next()), policy()};
        const auto n = 1 + rng_.below(3);
        for (std::uint64_t i = 0; i < n; ++i) u.maps.push_back(layout(w, h));
        return {robot, cloud, seq, std::move(u)};
      }
      case 1: {
        AugmentedSet s;
        const auto n = rng_.below(4);
        for (std::uint64_t i = 0; i < n; ++i) {
          Layout l = layout(w, h);
          std::vector<InstanceRecord> ins;
          for (const auto& r : l.instances.records()) {
            if (rng_.coin()) ins.push_back(r);
          }
          std::optional<double> score;
          if (rng_.coin()) score = rng_.uniform();
          s.candidates.push_back({l.semantic, l.instances, ins, rng_.next(), score});
        }
        return {cloud, robot, seq, std::move(s)};
      }
      case 2: {
        LabelRequest q;
        const auto n = rng_.below(5);
        for (std::uint64_t i = 0; i < n; ++i) q.scenarios.push_back(scenario());
        return {cloud, robot, seq, std::move(q)};
      }
      case 3: {
        LabelResponse a;
        const auto n = rng_.below(20);
        for (std::uint64_t i = 0; i < n; ++i) {
          a.torques.push_back(rng_.coin(0.2) ? std::nullopt : std::optional<double>(rng_.uniform()));
        }
        return {robot, cloud, seq, std::move(a)};
      }
      case 4:
        return {cloud, robot, seq, SharedModel{policy()}};
      default:
        return {robot, cloud, seq, FineTuneAck{policy(), report()}};
    }
  }

 private:
  Rng rng_;
};

// Envelope offset of the variant tag byte.
inline constexpr std::size_t kTagOffset = 7 + 2 + 2 + 2 + 8;

}  // namespace parl::testing
