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
#include <bit>

#include "doctest.h"
#include "fixtures.hpp"
#include "fuzz.hpp"
#include "parl/error.hpp"
#include "parl/harness.hpp"
#include "parl/protocol.hpp"

using namespace parl;
using namespace parl::testing;

namespace {

const std::vector<RobotSetup>& robots(int n = 3) {
  static std::map<int, std::vector<RobotSetup>> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    ExperimentConfig c;
    c.robots = n;
    it = cache.emplace(n, generate_robots(c)).first;
  }
  return it->second;
}


}  // namespace

TEST_SUITE("protocol") {

TEST_CASE("node ids on the wire") {
  CHECK(NodeId::robot(3).wire() == 3);
  CHECK(NodeId::cloud().wire() == 0x8000);
  CHECK(NodeId::from_wire(0x8000) == NodeId::cloud());
  CHECK(NodeId::from_wire(7) == NodeId::robot(7));
  CHECK(NodeId::robot(2).str() == "robot2");
}

TEST_CASE("message tags are far apart") {
  const std::array<std::uint8_t, 6> tags = {0x11, 0x22, 0x44, 0x88, 0x0F, 0x3C};
  for (std::size_t a = 0; a < tags.size(); ++a) {
    for (std::size_t b = a + 1; b < tags.size(); ++b) {
      CHECK(std::popcount(static_cast<unsigned>(tags[a] ^ tags[b])) >= 4);
      CHECK(static_cast<std::uint8_t>(~tags[a]) != tags[b]);
    }
  }
}

TEST_CASE("envelope layout is byte exact") {
  const Message m{NodeId::cloud(), NodeId::robot(2), 0x0102030405060708ULL, SharedModel{PolicyModel::constant(0.5)}};
  const Bytes b = encode(m);
  CHECK(std::string(b.begin(), b.begin() + 7) == "PARLMSG");
  CHECK(b[7] == 1);
  CHECK(b[8] == 0);
  CHECK(b[9] == 0x00);
  CHECK(b[10] == 0x80);
  CHECK(b[11] == 2);
  CHECK(b[13] == 0x08);
  CHECK(b[20] == 0x01);
  CHECK(b[kTagOffset] == 0x0F);
  const std::uint32_t len = b[22] | b[23] << 8 | b[24] << 16 | static_cast<std::uint32_t>(b[25]) << 24;
  CHECK(len + kEnvelopeBytes == b.size());
  CHECK(b[kEnvelopeBytes] == 0x0F);
}

TEST_CASE("fuzzed messages round trip") {
  Fuzz fuzz(20260101);
  std::size_t mismatches = 0;
  for (int i = 0; i < 2000; ++i) {
    const Message m = fuzz.message();
    const Bytes b = encode(m);
    const Message back = decode(b);
    mismatches += !(back == m) || encode(back) != b;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("tag corruption and truncation are decode errors") {
  Fuzz fuzz(7);
  for (int i = 0; i < 200; ++i) {
    const Bytes b = encode(fuzz.message());
    for (int v = 0; v < 256; ++v) {
      if (v == b[kTagOffset]) continue;
      Bytes bad = b;
      bad[kTagOffset] = static_cast<std::uint8_t>(v);
      CHECK_THROWS_AS(decode(bad), DecodeError);
    }
    for (std::size_t cut = 0; cut < b.size(); cut += 1 + cut / 8) {
      CHECK_THROWS_AS(decode(std::span(b).first(cut)), DecodeError);
    }
    CHECK_THROWS_AS(decode(std::span(b).first(b.size() - 1)), DecodeError);
  }
  CHECK_THROWS_AS(decode(Bytes{}), DecodeError);
}

TEST_CASE("invalid messages are refused in both directions") {
  const PolicyModel p = PolicyModel::constant(0.5);
  CHECK_THROWS_AS(encode({NodeId::cloud(), NodeId::robot(0), 0, SharedModel{p}}), ProtocolError);
  CHECK_THROWS_AS(encode({NodeId::robot(0), NodeId::cloud(), 1, SharedModel{p}}), ProtocolError);
  CHECK_THROWS_AS(encode({NodeId::robot(0), NodeId::cloud(), 1, LabelResponse{{1.5}}}), ProtocolError);
  CHECK_THROWS_AS(encode({NodeId::robot(0), NodeId::cloud(1), 1, LabelResponse{{0.5}}}), ProtocolError);
  // A torque outside [0,1] written by hand.
  Bytes b = encode({NodeId::robot(0), NodeId::cloud(), 1, LabelResponse{{0.5}}});
  const double big = 2.0;
  const auto bits = std::bit_cast<std::uint64_t>(big);
  for (int k = 0; k < 8; ++k) b[b.size() - 8 + k] = static_cast<std::uint8_t>(bits >> (8 * k));
  CHECK_THROWS_AS(decode(b), DecodeError);
}

TEST_CASE("network: sequence numbers, duplicates and corruption") {
  SimulatedNetwork net;
  const NodeId r = NodeId::robot(0), c = NodeId::cloud();
  const auto s1 = net.next_seq(r, c), s2 = net.next_seq(r, c);
  CHECK(s1 == 1);
  CHECK(s2 == 2);
  CHECK(net.next_seq(c, r) == 1);
  const Message m1{r, c, s1, LabelResponse{{0.1}}}, m2{r, c, s2, LabelResponse{{0.2}}};
  net.send(m1);
  net.inject(r, c, encode(m1));
  net.inject(r, c, Bytes{1, 2, 3});
  net.send(m2);
  CHECK(*net.receive(c) == m1);
  CHECK(*net.receive(c) == m2);
  CHECK_FALSE(net.receive(c));
  CHECK(net.stats().duplicates == 1);
  CHECK(net.stats().corrupt == 1);
  CHECK(net.idle());
  net.disconnect(r);
  net.send({c, r, net.next_seq(c, r), SharedModel{PolicyModel()}});
  CHECK(net.stats().dropped == 1);
  CHECK_FALSE(net.receive(r));
}

TEST_CASE("stage machine") {
  CHECK(legal_transition(Stage::local_compute, Stage::uploaded));
  CHECK_FALSE(legal_transition(Stage::uploaded, Stage::local_compute));
  CHECK(legal_transition(Stage::labeling, Stage::dropped_out));
  CHECK_FALSE(legal_transition(Stage::done, Stage::dropped_out));
  CHECK_FALSE(legal_transition(Stage::dropped_out, Stage::done));
  CHECK(robot_accepts(Stage::uploaded, MessageTag::augmented_set));
  CHECK_FALSE(robot_accepts(Stage::dispatched, MessageTag::shared_model));
  CHECK_FALSE(robot_accepts(Stage::uploaded, MessageTag::fine_tune_ack));
  CHECK(cloud_accepts(Stage::local_compute, MessageTag::upload_local, false));
  CHECK_FALSE(cloud_accepts(Stage::labeling, MessageTag::label_response, false));
  CHECK(cloud_accepts(Stage::labeling, MessageTag::label_response, true));
  CHECK(stage_name(Stage::cloud_augment) == "CloudAugment");
}

TEST_CASE("local compute") {
  const auto& r = robots()[0];
  const UploadLocal up = robot_local_compute(NodeId::robot(0), r.train);
  CHECK(up.maps.size() == r.train.size());
  CHECK(up == robot_local_compute(NodeId::robot(0), r.train));
  std::vector<DrivingSample> road_only;
  const StyleModel s = flat_style();
  const SemanticMap m = SemanticMap::filled(16, 16, ClassId::road);
  road_only.push_back({render(m, InstanceMap::empty(16, 16), s, 1), m, InstanceMap::empty(16, 16), 0.5,
                       TaskType::straight, Provenance::human});
  CHECK_THROWS_AS(robot_local_compute(NodeId::robot(0), road_only), FitError);
}

TEST_CASE("fan-out arithmetic with four styles and no rejections") {
  const World w = world_with_styles(4, 1);
  Uploads ups;
  for (std::uint16_t r = 0; r < 4; ++r) {
    const auto x = w.generate(StyleId{static_cast<std::uint16_t>(r + 1)}, TaskType::avoid_cars, 10 + r);
    ups.emplace_back(NodeId::robot(r), UploadLocal{{x.layout()}, w.style(StyleId{static_cast<std::uint16_t>(r + 1)}),
                                                   PolicyModel::constant(0.5)});
  }
  CloudConfig cfg;
  cfg.threshold = 0.0;
  const auto res = cloud_round(ups, cfg);
  CHECK_FALSE(res.scorer);
  CHECK(res.participants.size() == 4);
  for (const auto& st : res.stats) {
    CHECK(st.augment.rejected == 0);
    CHECK(st.augment.accepted == 2);
    CHECK(st.scenarios == 8);
  }
  CHECK(res.scenarios.size() == 32);
  CHECK(res.labels.size() == 32);
  CHECK(res.pool_size == 32);
}

TEST_CASE("fan-out two, two styles, no threshold: two inputs give eight scenarios") {
  const World w = world_with_styles(2, 1);
  Uploads ups;
  for (std::uint16_t r = 0; r < 2; ++r) {
    const StyleId sid{static_cast<std::uint16_t>(r + 1)};
    ups.emplace_back(NodeId::robot(r),
                     UploadLocal{{w.generate(sid, TaskType::avoid_cars, 3 + r).layout()}, w.style(sid),
                                 PolicyModel::constant(0.5)});
  }
  CloudConfig cfg;
  cfg.threshold = 0.0;
  CHECK(cloud_augment(ups, cfg).scenarios.size() == 8);
  CHECK_THROWS_AS(cloud_augment({}, cfg), ProtocolError);
}

TEST_CASE("single robot degenerates to single-agent augmentation") {
  ProtocolConfig pc;
  const auto res = run_round(std::span(robots()).first(1), pc);
  REQUIRE(res.cloud);
  CHECK(res.cloud->participants.size() == 1);
  CHECK(res.robots[0].stage == Stage::done);
  for (const auto& sc : res.cloud->scenarios) CHECK(sc.style == StyleId{1});
}

TEST_CASE("full round: exactly-once dispatch, held-out acks and determinism") {
  ProtocolConfig pc;
  const auto a = run_round(robots(), pc);
  REQUIRE(a.cloud);
  CHECK(a.cloud_stage == Stage::done);
  CHECK(a.violations == 0);
  CHECK(a.acks.size() == 3);
  for (std::size_t r = 0; r < 3; ++r) {
    const auto& o = a.robots[r];
    CHECK(o.stage == Stage::done);
    CHECK(o.shared_received == 1);
    REQUIRE(o.ack);
    CHECK(o.ack->report.count == robots()[r].test.size());
    CHECK(o.ack->report ==
          evaluate(o.ack->model, robots()[r].test, o.upload->style, pc.delta_fail));
  }
  const auto b = run_round(robots(), pc);
  CHECK(b.log == a.log);
  for (std::size_t r = 0; r < 3; ++r) CHECK(*b.robots[r].ack == *a.robots[r].ack);

  // beta = 1 hands back the shared weights.
  ProtocolConfig keep = pc;
  keep.beta = 1.0;
  const auto c = run_round(robots(), keep);
  for (const auto& o : c.robots) CHECK(o.ack->model.weights() == o.shared->policy.weights());
}

TEST_CASE("remote labeling gives the same labels as cloud labeling") {
  ProtocolConfig pc;
  const auto local = run_round(robots(), pc);
  pc.remote_labeling = true;
  const auto remote = run_round(robots(), pc);
  REQUIRE(remote.cloud);
  CHECK(remote.cloud->labels == local.cloud->labels);
  CHECK(remote.cloud->dispatch == local.cloud->dispatch);
  CHECK(remote.violations == 0);
}

TEST_CASE("exclude-self labeling and per-robot models") {
  Uploads ups;
  for (std::uint16_t r = 0; r < 3; ++r) ups.emplace_back(NodeId::robot(r), robot_local_compute(NodeId::robot(r), robots()[r].train));
  CloudConfig cfg;
  const auto plan = cloud_augment(ups, cfg);
  const auto preds = cloud_predictions(plan, ups);
  cfg.exclude_self = true;
  const auto labels = cloud_labels(plan, ups, preds, cfg);
  for (std::size_t k = 0; k < plan.scenarios.size(); ++k) {
    std::vector<double> others;
    for (std::size_t m = 0; m < ups.size(); ++m) {
      if (m != plan.scenario_source[k] && preds[m][k]) others.push_back(*preds[m][k]);
    }
    if (others.empty()) continue;
    CHECK(labels[k] >= *std::min_element(others.begin(), others.end()));
    CHECK(labels[k] <= *std::max_element(others.begin(), others.end()));
  }
  cfg.exclude_self = false;
  cfg.per_robot_models = true;
  const auto res = cloud_round(ups, cfg);
  CHECK(res.dispatch.size() == 3);
  CHECK_FALSE(res.dispatch[0] == res.dispatch[1]);
}

TEST_CASE("dropout: the round completes without the missing robot") {
  ProtocolConfig pc;
  pc.max_missing = 1;
  pc.dropouts = {2};
  const auto res = run_round(robots(), pc);
  REQUIRE(res.cloud);
  CHECK(res.cloud->participants.size() == 2);
  CHECK(res.robots[2].stage == Stage::dropped_out);
  CHECK(res.robots[2].shared_received == 0);
  CHECK_FALSE(res.robots[2].augmented);
  for (int r = 0; r < 2; ++r) CHECK(res.robots[r].shared_received == 1);

  // Other robots' uploads do not depend on who else takes part.
  const auto full = run_round(robots(), ProtocolConfig{});
  for (std::uint16_t r = 0; r < 2; ++r) {
    const Message a{NodeId::robot(r), NodeId::cloud(), 1, *res.robots[r].upload};
    const Message b{NodeId::robot(r), NodeId::cloud(), 1, *full.robots[r].upload};
    CHECK(encode(a) == encode(b));
  }

  ProtocolConfig strict = pc;
  strict.max_missing = 0;
  CHECK_THROWS_AS(run_round(robots(), strict), ProtocolError);
}

TEST_CASE("dropout of four: robot three receives nothing") {
  ProtocolConfig pc;
  pc.max_missing = 1;
  pc.dropouts = {3};
  const auto res = run_round(robots(4), pc);
  REQUIRE(res.cloud);
  CHECK(res.cloud->participants.size() == 3);
  CHECK(res.robots[3].shared_received == 0);
  CHECK_FALSE(res.robots[3].augmented);
  CHECK(res.acks.size() == 3);
}

TEST_CASE("a robot whose local compute fails drops out with a diagnostic") {
  std::vector<RobotSetup> setups(robots().begin(), robots().end());
  const StyleModel s = flat_style();
  const SemanticMap m = SemanticMap::filled(64, 32, ClassId::road);
  setups[1].train = {{render(m, InstanceMap::empty(64, 32), s, 1), m, InstanceMap::empty(64, 32), 0.5,
                      TaskType::straight, Provenance::human}};
  ProtocolConfig pc;
  pc.max_missing = 1;
  const auto res = run_round(setups, pc);
  CHECK(res.robots[1].stage == Stage::dropped_out);
  CHECK(res.robots[1].diagnostic.find("coverage") != std::string::npos);
  CHECK(res.robots[1].shared_received == 0);
  CHECK(res.robots[0].stage == Stage::done);
}

TEST_CASE("duplicated traffic is discarded") {
  const auto base = run_round(robots(), ProtocolConfig{});
  ProtocolConfig pc;
  pc.duplicate_messages = true;
  const auto dup = run_round(robots(), pc);
  CHECK(dup.network.duplicates > 0);
  CHECK(dup.violations == 0);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(dup.robots[r].shared_received == 1);
    CHECK(*dup.robots[r].ack == *base.robots[r].ack);
  }
}

TEST_CASE("messages illegal for the receiver's stage are logged and dropped") {
  const auto base = run_round(robots(), ProtocolConfig{});
  ProtocolConfig pc;
  const PolicyModel junk = PolicyModel::constant(0.9);
  pc.injected.push_back({NodeId::robot(0), NodeId::cloud(), 1, FineTuneAck{junk, base.robots[0].ack->report}});
  pc.injected.push_back({NodeId::robot(1), NodeId::cloud(), 1, LabelResponse{{0.3}}});
  const auto res = run_round(robots(), pc);
  CHECK(res.violations == 2);
  CHECK(res.cloud_stage == Stage::done);
  CHECK(res.cloud->dispatch == base.cloud->dispatch);
  bool logged = false;
  for (const auto& l : res.log) logged = logged || l.find("protocol violation") != std::string::npos;
  CHECK(logged);
}

}
