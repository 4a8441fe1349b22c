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

// The peer-assisted round: robot and cloud actors exchanging typed messages
// over an in-process network. Messages travel as encoded bytes so the wire
// codec is exercised on every hop.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "parl/dat.hpp"
#include "parl/io.hpp"
#include "parl/policy.hpp"
#include "parl/style.hpp"
#include "parl/world.hpp"

namespace parl {

struct NodeId {
  enum class Role : std::uint8_t { robot = 0, cloud = 1 };
  static constexpr std::uint16_t kCloudBit = 0x8000;

  Role role = Role::robot;
  std::uint16_t index = 0;

  static NodeId robot(std::uint16_t i);
  static NodeId cloud(std::uint16_t i = 0);
  bool is_cloud() const { return role == Role::cloud; }
  // High bit marks the cloud; the low 15 bits carry the index.
  std::uint16_t wire() const { return static_cast<std::uint16_t>((is_cloud() ? kCloudBit : 0) | index); }
  static NodeId from_wire(std::uint16_t v);
  std::string str() const;

  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

struct UploadLocal {
  std::vector<Layout> maps;
  StyleModel style;
  PolicyModel policy;
  friend bool operator==(const UploadLocal&, const UploadLocal&) = default;
};

// Accepted candidates derived from the receiver's maps; each carries its
// plausibility score (absent when scoring is disabled).
struct AugmentedSet {
  std::vector<AugmentationCandidate> candidates;
  friend bool operator==(const AugmentedSet&, const AugmentedSet&) = default;
};

struct LabelRequest {
  std::vector<Scenario> scenarios;
  friend bool operator==(const LabelRequest&, const LabelRequest&) = default;
};

// One entry per requested scenario; empty when the robot saw no road.
struct LabelResponse {
  std::vector<std::optional<double>> torques;
  friend bool operator==(const LabelResponse&, const LabelResponse&) = default;
};

struct SharedModel {
  PolicyModel policy;
  friend bool operator==(const SharedModel&, const SharedModel&) = default;
};

struct FineTuneAck {
  PolicyModel model;
  EvaluationReport report;
  friend bool operator==(const FineTuneAck&, const FineTuneAck&) = default;
};

using Payload = std::variant<UploadLocal, AugmentedSet, LabelRequest, LabelResponse, SharedModel, FineTuneAck>;

// Tags are pairwise four bits apart and no tag is the complement of another,
// so a flipped or corrupted tag byte never decodes as a different variant.
enum class MessageTag : std::uint8_t {
  upload_local = 0x11,
  augmented_set = 0x22,
  label_request = 0x44,
  label_response = 0x88,
  shared_model = 0x0F,
  fine_tune_ack = 0x3C,
};

MessageTag tag_of(const Payload& p);
std::string_view tag_name(MessageTag t);

struct Message {
  NodeId from;
  NodeId to;
  std::uint64_t seq = 0;
  Payload payload;
  friend bool operator==(const Message&, const Message&) = default;
};

inline constexpr std::string_view kMessageMagic = "PARLMSG";
inline constexpr std::size_t kEnvelopeBytes = 7 + 2 + 2 + 2 + 8 + 1 + 4;

// Throws DecodeError for a message that violates its own invariants.
void validate(const Message& m);
Bytes encode(const Message& m);
Message decode(std::span<const std::uint8_t> bytes);

struct NetworkStats {
  std::uint64_t sent = 0;
  std::uint64_t delivered = 0;
  std::uint64_t bytes = 0;
  std::uint64_t dropped = 0;     // sender or receiver disconnected
  std::uint64_t duplicates = 0;  // seq not above the last delivered one
  std::uint64_t corrupt = 0;     // failed to decode
  friend bool operator==(const NetworkStats&, const NetworkStats&) = default;
};

// Ordered byte queue per (from, to) channel. Not thread-safe; the scheduler
// serializes access.
class SimulatedNetwork {
 public:
  // Next sequence number for the channel, starting at 1.
  std::uint64_t next_seq(NodeId from, NodeId to);
  void send(const Message& m);
  // Enqueues raw bytes as if sent by `from`, for fault injection.
  void inject(NodeId from, NodeId to, Bytes bytes);
  // Pops the first deliverable message addressed to `to`, scanning channels
  // in sender order. Corrupt and duplicate entries are discarded on the way.
  std::optional<Message> receive(NodeId to);

  void disconnect(NodeId n) { disconnected_.insert(n.wire()); }
  bool connected(NodeId n) const { return !disconnected_.contains(n.wire()); }
  // Every send is enqueued twice; the receiver must drop the copy.
  void set_duplicate_all(bool on) { duplicate_all_ = on; }
  bool idle() const;
  const NetworkStats& stats() const { return stats_; }
  const std::vector<std::string>& log() const { return log_; }

 private:
  using Channel = std::pair<std::uint16_t, std::uint16_t>;
  std::map<Channel, std::deque<Bytes>> queues_;
  std::map<Channel, std::uint64_t> send_seq_;
  std::map<Channel, std::uint64_t> recv_seq_;
  std::set<std::uint16_t> disconnected_;
  bool duplicate_all_ = false;
  NetworkStats stats_;
  std::vector<std::string> log_;
};

enum class Stage : std::uint8_t {
  local_compute = 0,
  uploaded,
  cloud_augment,
  labeling,
  cloud_train,
  dispatched,
  fine_tuned,
  done,
  dropped_out,
};

std::string_view stage_name(Stage s);
// Forward moves along the fixed order, or a drop from any stage before done.
bool legal_transition(Stage from, Stage to);
// Whether a node in `stage` may consume a message of this variant. Anything
// else is logged as a protocol violation and discarded.
bool robot_accepts(Stage stage, MessageTag tag);
bool cloud_accepts(Stage stage, MessageTag tag, bool remote_labeling);

// ---------------------------------------------------------------------------
// Node computations. These are pure; the actors below only move messages.

struct LocalComputeOptions {
  StyleFitOptions style;
  double lambda = kDefaultRidge;
};

// Fits the robot's style on its annotated samples, segments every scenario
// under it and trains the local policy. Errors propagate to the caller.
UploadLocal robot_local_compute(NodeId robot, std::span<const DrivingSample> dataset,
                                const LocalComputeOptions& options = {});

struct CloudConfig {
  int fan_out = 2;
  // Acceptance threshold. Zero disables scoring and accepts every placement.
  double threshold = 0.5;
  double lambda = kDefaultRidge;
  double where_alpha = 0.5;
  bool per_robot_models = false;
  bool exclude_self = false;
  CrowdsourceOptions crowd;
  int budget_factor = 16;
  int max_resamples = 8;
  std::uint64_t seed = 7;
};

struct SourceStats {
  NodeId robot;
  std::uint32_t maps = 0;
  AugmentStats augment;
  std::uint32_t scenarios = 0;
  friend bool operator==(const SourceStats&, const SourceStats&) = default;
};

// Output of the augmentation stage: accepted candidates per participant and
// every candidate rendered under every received style.
struct CloudPlan {
  std::vector<NodeId> participants;
  std::vector<AugmentedSet> augmented;
  std::vector<Scenario> scenarios;
  std::vector<std::size_t> scenario_source;  // participant index of each scenario
  std::vector<SourceStats> stats;
  std::optional<ScorerDiagnostics> scorer_diagnostics;
  Predictors predictors;
  std::optional<PlausibilityScorer> scorer;
};

struct CloudRoundResult {
  std::vector<NodeId> participants;
  std::vector<AugmentedSet> augmented;
  std::vector<SharedModel> dispatch;  // one per participant
  std::vector<Scenario> scenarios;    // candidate-major, one per participant style
  std::vector<std::size_t> scenario_source;
  std::vector<double> labels;         // one per scenario
  std::vector<SourceStats> stats;
  std::optional<ScorerDiagnostics> scorer_diagnostics;
  Predictors predictors;
  std::optional<PlausibilityScorer> scorer;
  std::size_t pool_size = 0;
};

using Uploads = std::vector<std::pair<NodeId, UploadLocal>>;

CloudPlan cloud_augment(const Uploads& uploads, const CloudConfig& config);
// predictions[m][k]: participant m's answer for plan scenario k.
std::vector<double> cloud_labels(const CloudPlan& plan, const Uploads& uploads,
                                 const std::vector<std::vector<std::optional<double>>>& predictions,
                                 const CloudConfig& config);
// The participants' predictions computed in the cloud from the uploaded policies.
std::vector<std::vector<std::optional<double>>> cloud_predictions(const CloudPlan& plan, const Uploads& uploads);
CloudRoundResult cloud_train(CloudPlan plan, const Uploads& uploads, std::vector<double> labels,
                             const CloudConfig& config);
// All three stages with labels computed in the cloud. Throws ProtocolError
// when there is no upload.
CloudRoundResult cloud_round(const Uploads& uploads, const CloudConfig& config);

// What a robot answers to a LabelRequest.
LabelResponse robot_label(const LocalPolicy& own, const LabelRequest& request);

FineTuneAck robot_fine_tune(const SharedModel& shared, std::span<const DrivingSample> local_train,
                            std::span<const DrivingSample> heldout, const StyleModel& style, double beta,
                            double lambda = kDefaultRidge, double delta_fail = kDefaultFailureDelta);

// ---------------------------------------------------------------------------
// Round driver.

struct RobotSetup {
  std::vector<DrivingSample> train;
  std::vector<DrivingSample> test;
};

struct ProtocolConfig {
  CloudConfig cloud;
  LocalComputeOptions local;
  double beta = 0.8;
  double delta_fail = kDefaultFailureDelta;
  // The cloud proceeds once every robot uploaded, or at the deadline with
  // at least robots - max_missing (and at least one) uploads.
  std::size_t max_missing = 0;
  std::uint64_t deadline_ticks = 64;
  bool remote_labeling = false;
  // Robots that go offline before computing anything.
  std::set<std::uint16_t> dropouts;
  bool duplicate_messages = false;
  // Delivered before the first tick, for stage-safety tests.
  std::vector<Message> injected;
};

struct RobotOutcome {
  NodeId id;
  Stage stage = Stage::local_compute;
  std::optional<UploadLocal> upload;
  std::optional<AugmentedSet> augmented;
  std::optional<SharedModel> shared;
  std::uint32_t shared_received = 0;
  std::optional<FineTuneAck> ack;
  std::string diagnostic;
};

struct RoundResult {
  std::vector<RobotOutcome> robots;
  Stage cloud_stage = Stage::local_compute;
  std::optional<CloudRoundResult> cloud;
  std::vector<std::pair<NodeId, FineTuneAck>> acks;  // as received by the cloud
  std::vector<std::string> log;
  std::uint32_t violations = 0;
  NetworkStats network;
  std::uint64_t ticks = 0;
};

// Runs one round with a fixed round-robin schedule (robots by index, then the
// cloud), one inbox message or pending action per node per tick.
RoundResult run_round(std::span<const RobotSetup> robots, const ProtocolConfig& config);

}  // namespace parl
