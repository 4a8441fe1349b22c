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
#include "parl/protocol.hpp"

#include <algorithm>
#include <cmath>

#include "parl/error.hpp"
#include "parl/rng.hpp"

namespace parl {

NodeId NodeId::robot(std::uint16_t i) {
  if (i >= kCloudBit) throw ConfigError("robot index out of range");
  return {Role::robot, i};
}

NodeId NodeId::cloud(std::uint16_t i) {
  if (i >= kCloudBit) throw ConfigError("cloud index out of range");
  return {Role::cloud, i};
}

NodeId NodeId::from_wire(std::uint16_t v) {
  return (v & kCloudBit) ? NodeId{Role::cloud, static_cast<std::uint16_t>(v & ~kCloudBit)}
                         : NodeId{Role::robot, v};
}

std::string NodeId::str() const {
  return is_cloud() ? (index == 0 ? std::string("cloud") : "cloud" + std::to_string(index))
                    : "robot" + std::to_string(index);
}

MessageTag tag_of(const Payload& p) {
  static constexpr std::array<MessageTag, 6> kTags = {MessageTag::upload_local,   MessageTag::augmented_set,
                                                      MessageTag::label_request,  MessageTag::label_response,
                                                      MessageTag::shared_model,   MessageTag::fine_tune_ack};
  return kTags[p.index()];
}

std::string_view tag_name(MessageTag t) {
  switch (t) {
    case MessageTag::upload_local: return "UploadLocal";
    case MessageTag::augmented_set: return "AugmentedSet";
    case MessageTag::label_request: return "LabelRequest";
    case MessageTag::label_response: return "LabelResponse";
    case MessageTag::shared_model: return "SharedModel";
    case MessageTag::fine_tune_ack: return "FineTuneAck";
  }
  return "?";
}

namespace {

bool robot_to_cloud(MessageTag t) {
  return t == MessageTag::upload_local || t == MessageTag::label_response || t == MessageTag::fine_tune_ack;
}

void check_direction(const Message& m) {
  const MessageTag t = tag_of(m.payload);
  const NodeId robot = robot_to_cloud(t) ? m.from : m.to;
  const NodeId cloud = robot_to_cloud(t) ? m.to : m.from;
  if (robot.is_cloud() || !cloud.is_cloud()) {
    throw DecodeError(std::string(tag_name(t)) + " sent in the wrong direction");
  }
  if (cloud.index != 0) throw DecodeError("unknown cloud node " + cloud.str());
}

void check_same_size(const std::vector<Layout>& maps) {
  for (const auto& l : maps) {
    if (l.semantic.width() != maps.front().semantic.width() ||
        l.semantic.height() != maps.front().semantic.height()) {
      throw DecodeError("uploaded maps differ in size");
    }
  }
}

void check_torque(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw DecodeError("torque outside [0,1]");
}

}  // namespace

void validate(const Message& m) {
  if (m.seq == 0) throw DecodeError("sequence numbers start at 1");
  check_direction(m);
  std::visit(
      [](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, UploadLocal>) {
          if (p.maps.empty()) throw DecodeError("upload carries no maps");
          check_same_size(p.maps);
          for (const auto& l : p.maps) {
            if (l.instances.width() != l.semantic.width() || l.instances.height() != l.semantic.height()) {
              throw DecodeError("layout maps differ in size");
            }
          }
        } else if constexpr (std::is_same_v<T, AugmentedSet>) {
          for (const auto& c : p.candidates) {
            if (c.score) check_torque(*c.score);
          }
        } else if constexpr (std::is_same_v<T, LabelResponse>) {
          for (const auto& t : p.torques) {
            if (t) check_torque(*t);
          }
        } else if constexpr (std::is_same_v<T, FineTuneAck>) {
          if (p.report.count == 0) throw DecodeError("acknowledged report covers no samples");
        }
      },
      m.payload);
}

Bytes encode(const Message& m) {
  try {
    validate(m);
  } catch (const DecodeError& e) {
    throw ProtocolError(std::string("refusing to encode invalid message: ") + e.what());
  }
  ByteWriter body;
  // The payload repeats the tag, so rewriting the envelope tag alone can
  // never turn one variant into another.
  body.u8(static_cast<std::uint8_t>(tag_of(m.payload)));
  std::visit(
      [&body](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, UploadLocal>) {
          body.u32(static_cast<std::uint32_t>(p.maps.size()));
          for (const auto& l : p.maps) write(body, l);
          body.blob(encode_model(p.style));
          body.blob(encode_model(p.policy));
        } else if constexpr (std::is_same_v<T, AugmentedSet>) {
          body.u32(static_cast<std::uint32_t>(p.candidates.size()));
          for (const auto& c : p.candidates) write(body, c);
        } else if constexpr (std::is_same_v<T, LabelRequest>) {
          body.u32(static_cast<std::uint32_t>(p.scenarios.size()));
          for (const auto& s : p.scenarios) write(body, s);
        } else if constexpr (std::is_same_v<T, LabelResponse>) {
          body.u32(static_cast<std::uint32_t>(p.torques.size()));
          for (const auto& t : p.torques) {
            body.u8(t.has_value());
            body.f64(t.value_or(0.0));
          }
        } else if constexpr (std::is_same_v<T, SharedModel>) {
          body.blob(encode_model(p.policy));
        } else {
          body.blob(encode_model(p.model));
          write(body, p.report);
        }
      },
      m.payload);
  ByteWriter w;
  w.magic(kMessageMagic);
  w.u16(kFormatVersion);
  w.u16(m.from.wire());
  w.u16(m.to.wire());
  w.u64(m.seq);
  w.u8(static_cast<std::uint8_t>(tag_of(m.payload)));
  w.blob(body.bytes());
  return w.take();
}

namespace {

Payload decode_payload(MessageTag tag, ByteReader& r) {
  switch (tag) {
    case MessageTag::upload_local: {
      const std::size_t n = r.count(4);
      std::vector<Layout> maps;
      maps.reserve(n);
      for (std::size_t i = 0; i < n; ++i) maps.push_back(read_layout(r));
      auto style = decode_style_model(r.blob());
      auto policy = decode_policy_model(r.blob());
      return UploadLocal{std::move(maps), std::move(style), std::move(policy)};
    }
    case MessageTag::augmented_set: {
      const std::size_t n = r.count(4);
      AugmentedSet s;
      s.candidates.reserve(n);
      for (std::size_t i = 0; i < n; ++i) s.candidates.push_back(read_candidate(r));
      return s;
    }
    case MessageTag::label_request: {
      const std::size_t n = r.count(6);
      LabelRequest q;
      q.scenarios.reserve(n);
      for (std::size_t i = 0; i < n; ++i) q.scenarios.push_back(read_scenario(r));
      return q;
    }
    case MessageTag::label_response: {
      const std::size_t n = r.count(9);
      LabelResponse a;
      a.torques.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto flag = r.u8();
        const double v = r.f64();
        if (flag > 1 || (flag == 0 && std::bit_cast<std::uint64_t>(v) != 0)) {
          throw DecodeError("bad torque entry");
        }
        a.torques.push_back(flag ? std::optional<double>(v) : std::nullopt);
      }
      return a;
    }
    case MessageTag::shared_model:
      return SharedModel{decode_policy_model(r.blob())};
    case MessageTag::fine_tune_ack: {
      auto model = decode_policy_model(r.blob());
      return FineTuneAck{std::move(model), read_report(r)};
    }
  }
  throw DecodeError("unknown message tag");
}

bool known_tag(std::uint8_t t) {
  switch (static_cast<MessageTag>(t)) {
    case MessageTag::upload_local:
    case MessageTag::augmented_set:
    case MessageTag::label_request:
    case MessageTag::label_response:
    case MessageTag::shared_model:
    case MessageTag::fine_tune_ack:
      return true;
  }
  return false;
}

}  // namespace

Message decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.magic(kMessageMagic);
  if (r.u16() != kFormatVersion) throw DecodeError("unsupported message version");
  Message m{NodeId::from_wire(r.u16()), NodeId::from_wire(r.u16()), r.u64(), SharedModel{PolicyModel()}};
  const std::uint8_t tag = r.u8();
  if (!known_tag(tag)) throw DecodeError("unknown message tag " + std::to_string(tag));
  ByteReader body(r.blob());
  r.expect_end();
  if (body.u8() != tag) throw DecodeError("payload does not match the envelope tag");
  m.payload = decode_payload(static_cast<MessageTag>(tag), body);
  body.expect_end();
  validate(m);
  return m;
}

// ---------------------------------------------------------------------------

std::uint64_t SimulatedNetwork::next_seq(NodeId from, NodeId to) { return ++send_seq_[{from.wire(), to.wire()}]; }

void SimulatedNetwork::send(const Message& m) {
  Bytes bytes = encode(m);
  ++stats_.sent;
  if (!connected(m.from) || !connected(m.to)) {
    ++stats_.dropped;
    log_.push_back("dropped " + std::string(tag_name(tag_of(m.payload))) + " " + m.from.str() + "->" + m.to.str());
    return;
  }
  stats_.bytes += bytes.size();
  auto& q = queues_[{m.from.wire(), m.to.wire()}];
  if (duplicate_all_) q.push_back(bytes);
  q.push_back(std::move(bytes));
}

void SimulatedNetwork::inject(NodeId from, NodeId to, Bytes bytes) {
  queues_[{from.wire(), to.wire()}].push_back(std::move(bytes));
}

std::optional<Message> SimulatedNetwork::receive(NodeId to) {
  for (auto& [channel, q] : queues_) {
    if (channel.second != to.wire()) continue;
    while (!q.empty()) {
      Bytes bytes = std::move(q.front());
      q.pop_front();
      std::optional<Message> decoded;
      try {
        decoded = decode(bytes);
      } catch (const Error& e) {
        ++stats_.corrupt;
        log_.push_back("corrupt message on " + NodeId::from_wire(channel.first).str() + "->" + to.str() + ": " +
                       e.what());
        continue;
      }
      Message& m = *decoded;
      if (m.from.wire() != channel.first || m.to.wire() != channel.second) {
        ++stats_.corrupt;
        log_.push_back("misrouted message on " + NodeId::from_wire(channel.first).str() + "->" + to.str());
        continue;
      }
      auto& last = recv_seq_[channel];
      if (m.seq <= last) {
        ++stats_.duplicates;
        log_.push_back("duplicate seq " + std::to_string(m.seq) + " on " + m.from.str() + "->" + m.to.str());
        continue;
      }
      last = m.seq;
      ++stats_.delivered;
      return decoded;
    }
  }
  return std::nullopt;
}

bool SimulatedNetwork::idle() const {
  return std::all_of(queues_.begin(), queues_.end(), [](const auto& kv) { return kv.second.empty(); });
}

// ---------------------------------------------------------------------------

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::local_compute: return "LocalCompute";
    case Stage::uploaded: return "Uploaded";
    case Stage::cloud_augment: return "CloudAugment";
    case Stage::labeling: return "Labeling";
    case Stage::cloud_train: return "CloudTrain";
    case Stage::dispatched: return "Dispatched";
    case Stage::fine_tuned: return "FineTuned";
    case Stage::done: return "Done";
    case Stage::dropped_out: return "DroppedOut";
  }
  return "?";
}

bool legal_transition(Stage from, Stage to) {
  if (from == Stage::dropped_out || from == Stage::done) return false;
  if (to == Stage::dropped_out) return true;
  return static_cast<int>(to) > static_cast<int>(from);
}

bool robot_accepts(Stage stage, MessageTag tag) {
  switch (tag) {
    case MessageTag::augmented_set:
      return stage == Stage::uploaded;
    case MessageTag::label_request:
      return stage == Stage::uploaded || stage == Stage::cloud_augment;
    case MessageTag::shared_model:
      return stage == Stage::uploaded || stage == Stage::cloud_augment || stage == Stage::labeling;
    default:
      return false;
  }
}

bool cloud_accepts(Stage stage, MessageTag tag, bool remote_labeling) {
  switch (tag) {
    case MessageTag::upload_local:
      return stage == Stage::local_compute || stage == Stage::uploaded;
    case MessageTag::label_response:
      return remote_labeling && stage == Stage::labeling;
    case MessageTag::fine_tune_ack:
      return stage == Stage::dispatched;
    default:
      return false;
  }
}

// ---------------------------------------------------------------------------

UploadLocal robot_local_compute(NodeId robot, std::span<const DrivingSample> dataset,
                                const LocalComputeOptions& options) {
  if (robot.is_cloud()) throw ProtocolError("local compute runs on robots");
  if (dataset.empty()) throw FitError(robot.str() + " has an empty dataset");
  StyleModel style = fit_style(dataset, options.style);
  std::vector<Layout> maps;
  maps.reserve(dataset.size());
  for (const auto& s : dataset) {
    auto [sem, inst] = segment(s.scenario, style);
    maps.push_back({std::move(sem), std::move(inst)});
  }
  PolicyModel policy = train(make_dataset(dataset, style), options.lambda);
  return UploadLocal{std::move(maps), std::move(style), std::move(policy)};
}

namespace {

std::size_t style_index(const Uploads& uploads, StyleId id) {
  for (std::size_t q = 0; q < uploads.size(); ++q) {
    if (uploads[q].second.style.style() == id) return q;
  }
  throw ProtocolError("scenario style " + std::to_string(id.value) + " was not uploaded");
}

}  // namespace

CloudPlan cloud_augment(const Uploads& uploads, const CloudConfig& config) {
  if (uploads.empty()) throw ProtocolError("cloud round aborted: no uploads received");
  if (config.fan_out < 1) throw ConfigError("fan-out must be at least 1");
  if (!(config.threshold >= 0.0 && config.threshold < 1.0)) throw ConfigError("threshold must lie in [0,1)");
  std::set<NodeId> seen_robots;
  std::set<StyleId> seen_styles;
  std::vector<Layout> all;
  for (const auto& [id, up] : uploads) {
    if (id.is_cloud() || !seen_robots.insert(id).second) throw ProtocolError("duplicate or invalid uploader " + id.str());
    if (!seen_styles.insert(up.style.style()).second) {
      throw ProtocolError("two uploads share style " + std::to_string(up.style.style().value));
    }
    all.insert(all.end(), up.maps.begin(), up.maps.end());
  }
  for (const auto& l : all) {
    if (l.semantic.width() != all.front().semantic.width() || l.semantic.height() != all.front().semantic.height()) {
      throw ProtocolError("uploaded maps differ in size");
    }
  }

  CloudPlan plan;
  plan.predictors = fit_predictors(all, config.where_alpha);
  if (config.threshold > 0.0) {
    ScorerConfig sc;
    sc.threshold = config.threshold;
    sc.seed = derive_seed(config.seed, {0x5C0});
    auto fitted = fit_scorer_with_diagnostics(all, sc);
    plan.scorer = std::move(fitted.scorer);
    plan.scorer_diagnostics = std::move(fitted.diagnostics);
  }
  AugmentConfig ac;
  ac.budget_factor = config.budget_factor;
  ac.max_resamples = config.max_resamples;

  for (std::size_t p = 0; p < uploads.size(); ++p) {
    const auto& [id, up] = uploads[p];
    plan.participants.push_back(id);
    AugmentedSet set;
    SourceStats st;
    st.robot = id;
    st.maps = static_cast<std::uint32_t>(up.maps.size());
    for (std::size_t i = 0; i < up.maps.size(); ++i) {
      auto res = augment_semantic(up.maps[i], i, config.fan_out, plan.predictors,
                                  plan.scorer ? &*plan.scorer : nullptr,
                                  derive_seed(config.seed, {id.wire(), i}), ac);
      st.augment.attempts += res.stats.attempts;
      st.augment.placement_failures += res.stats.placement_failures;
      st.augment.rejected += res.stats.rejected;
      st.augment.accepted += res.stats.accepted;
      for (std::size_t j = 0; j < res.candidates.size(); ++j) {
        for (const auto& [other, target] : uploads) {
          plan.scenarios.push_back(cross_render(
              res.candidates[j], target.style,
              derive_seed(config.seed, {0x5CE, id.wire(), i, j, target.style.style().value})));
          plan.scenario_source.push_back(p);
          ++st.scenarios;
        }
        set.candidates.push_back(std::move(res.candidates[j]));
      }
    }
    plan.augmented.push_back(std::move(set));
    plan.stats.push_back(st);
  }
  return plan;
}

std::vector<std::vector<std::optional<double>>> cloud_predictions(const CloudPlan& plan, const Uploads& uploads) {
  std::vector<std::vector<std::optional<double>>> out;
  out.reserve(uploads.size());
  for (const auto& [id, up] : uploads) {
    out.push_back(robot_label(LocalPolicy{up.policy, up.style}, LabelRequest{plan.scenarios}).torques);
  }
  return out;
}

LabelResponse robot_label(const LocalPolicy& own, const LabelRequest& request) {
  LabelResponse r;
  r.torques.reserve(request.scenarios.size());
  for (const auto& sc : request.scenarios) r.torques.push_back(member_label(own, sc));
  return r;
}

std::vector<double> cloud_labels(const CloudPlan& plan, const Uploads& uploads,
                                 const std::vector<std::vector<std::optional<double>>>& predictions,
                                 const CloudConfig& config) {
  if (predictions.size() != uploads.size()) throw ProtocolError("one prediction set per participant expected");
  for (const auto& p : predictions) {
    if (p.size() != plan.scenarios.size()) throw ProtocolError("label response has the wrong length");
  }
  std::vector<StyleModel> all_styles;
  for (const auto& [id, up] : uploads) all_styles.push_back(up.style);
  std::vector<double> labels;
  labels.reserve(plan.scenarios.size());
  for (std::size_t k = 0; k < plan.scenarios.size(); ++k) {
    const std::size_t src = plan.scenario_source[k];
    const bool drop_self = config.exclude_self && uploads.size() > 1;
    std::vector<StyleModel> styles;
    std::vector<std::optional<double>> preds;
    for (std::size_t m = 0; m < uploads.size(); ++m) {
      if (drop_self && m == src) continue;
      styles.push_back(all_styles[m]);
      preds.push_back(predictions[m][k]);
    }
    labels.push_back(aggregate_labels(plan.scenarios[k].style, styles, preds, config.crowd));
  }
  return labels;
}

CloudRoundResult cloud_train(CloudPlan plan, const Uploads& uploads, std::vector<double> labels,
                             const CloudConfig& config) {
  if (labels.size() != plan.scenarios.size()) throw ProtocolError("one label per scenario expected");
  std::vector<Dataset> per_source(uploads.size());
  for (std::size_t k = 0; k < plan.scenarios.size(); ++k) {
    const auto& sc = plan.scenarios[k];
    FeatureVector f;
    try {
      f = featurize(sc, uploads[style_index(uploads, sc.style)].second.style);
    } catch (const DegenerateInputError&) {
      continue;
    }
    per_source[plan.scenario_source[k]].push_back({f, labels[k]});
  }
  auto fit = [&](const Dataset& d) {
    PolicyModel m = train(d, config.lambda);
    m.meta().provenance = {0, 0, static_cast<std::uint32_t>(d.size())};
    return m;
  };

  CloudRoundResult out;
  if (config.per_robot_models) {
    for (const auto& d : per_source) {
      out.dispatch.push_back(SharedModel{fit(d)});
      out.pool_size += d.size();
    }
  } else {
    Dataset pool;
    for (const auto& d : per_source) pool.insert(pool.end(), d.begin(), d.end());
    const SharedModel shared{fit(pool)};
    out.dispatch.assign(uploads.size(), shared);
    out.pool_size = pool.size();
  }
  out.participants = std::move(plan.participants);
  out.augmented = std::move(plan.augmented);
  out.scenarios = std::move(plan.scenarios);
  out.scenario_source = std::move(plan.scenario_source);
  out.labels = std::move(labels);
  out.stats = std::move(plan.stats);
  out.scorer_diagnostics = std::move(plan.scorer_diagnostics);
  out.predictors = std::move(plan.predictors);
  out.scorer = std::move(plan.scorer);
  return out;
}

CloudRoundResult cloud_round(const Uploads& uploads, const CloudConfig& config) {
  CloudPlan plan = cloud_augment(uploads, config);
  auto labels = cloud_labels(plan, uploads, cloud_predictions(plan, uploads), config);
  return cloud_train(std::move(plan), uploads, std::move(labels), config);
}

FineTuneAck robot_fine_tune(const SharedModel& shared, std::span<const DrivingSample> local_train,
                            std::span<const DrivingSample> heldout, const StyleModel& style, double beta,
                            double lambda, double delta_fail) {
  PolicyModel model = fine_tune(shared.policy, make_dataset(local_train, style), beta, lambda);
  model.meta().provenance[0] += static_cast<std::uint32_t>(local_train.size());
  EvaluationReport report = evaluate(model, heldout, style, delta_fail);
  return FineTuneAck{std::move(model), report};
}

// ---------------------------------------------------------------------------

namespace {

struct RoundContext {
  SimulatedNetwork net;
  std::vector<std::string> log;
  std::uint32_t violations = 0;
  const ProtocolConfig* config = nullptr;

  void post(NodeId from, NodeId to, Payload payload) {
    Message m{from, to, net.next_seq(from, to), std::move(payload)};
    log.push_back(from.str() + " -> " + to.str() + " " + std::string(tag_name(tag_of(m.payload))) + " #" +
                  std::to_string(m.seq));
    net.send(m);
  }
  void violation(NodeId at, Stage stage, const Message& m) {
    ++violations;
    log.push_back("protocol violation: " + at.str() + " in " + std::string(stage_name(stage)) + " got " +
                  std::string(tag_name(tag_of(m.payload))) + " from " + m.from.str() + ", discarded");
  }
};

void move_to(NodeId who, Stage& stage, Stage to, RoundContext& ctx) {
  if (!legal_transition(stage, to)) {
    throw ProtocolError(who.str() + " cannot move from " + std::string(stage_name(stage)) + " to " +
                        std::string(stage_name(to)));
  }
  ctx.log.push_back(who.str() + ": " + std::string(stage_name(stage)) + " -> " + std::string(stage_name(to)));
  stage = to;
}

class RobotActor {
 public:
  RobotActor(NodeId id, const RobotSetup& setup) : setup_(setup) { out_.id = id; }

  RobotOutcome& outcome() { return out_; }
  bool finished() const { return out_.stage == Stage::done || out_.stage == Stage::dropped_out; }

  void drop(RoundContext& ctx, std::string why) {
    out_.diagnostic = std::move(why);
    move_to(out_.id, out_.stage, Stage::dropped_out, ctx);
    ctx.net.disconnect(out_.id);
  }

  void step(RoundContext& ctx) {
    const NodeId cloud = NodeId::cloud();
    switch (out_.stage) {
      case Stage::dropped_out:
        return;
      case Stage::local_compute:
        try {
          UploadLocal up = robot_local_compute(out_.id, setup_.train, ctx.config->local);
          own_.emplace(LocalPolicy{up.policy, up.style});
          out_.upload = up;
          ctx.post(out_.id, cloud, std::move(up));
          move_to(out_.id, out_.stage, Stage::uploaded, ctx);
        } catch (const Error& e) {
          ctx.log.push_back(out_.id.str() + " local compute failed: " + e.what());
          drop(ctx, e.what());
        }
        return;
      case Stage::dispatched:
        try {
          FineTuneAck ack = robot_fine_tune(*out_.shared, setup_.train, setup_.test, own_->style,
                                            ctx.config->beta, ctx.config->local.lambda, ctx.config->delta_fail);
          out_.ack = ack;
          ctx.post(out_.id, cloud, std::move(ack));
          move_to(out_.id, out_.stage, Stage::fine_tuned, ctx);
        } catch (const Error& e) {
          ctx.log.push_back(out_.id.str() + " fine-tune failed: " + e.what());
          drop(ctx, e.what());
        }
        return;
      case Stage::fine_tuned:
        move_to(out_.id, out_.stage, Stage::done, ctx);
        return;
      default:
        break;
    }
    auto m = ctx.net.receive(out_.id);
    if (!m) return;
    const MessageTag tag = tag_of(m->payload);
    if (!m->from.is_cloud() || !robot_accepts(out_.stage, tag)) {
      ctx.violation(out_.id, out_.stage, *m);
      return;
    }
    if (auto* set = std::get_if<AugmentedSet>(&m->payload)) {
      out_.augmented = std::move(*set);
      move_to(out_.id, out_.stage, Stage::cloud_augment, ctx);
    } else if (auto* req = std::get_if<LabelRequest>(&m->payload)) {
      ctx.post(out_.id, cloud, robot_label(*own_, *req));
      move_to(out_.id, out_.stage, Stage::labeling, ctx);
    } else if (auto* sm = std::get_if<SharedModel>(&m->payload)) {
      ++out_.shared_received;
      out_.shared = std::move(*sm);
      move_to(out_.id, out_.stage, Stage::dispatched, ctx);
    }
  }

 private:
  const RobotSetup& setup_;
  RobotOutcome out_;
  std::optional<LocalPolicy> own_;
};

class CloudActor {
 public:
  explicit CloudActor(std::size_t robots) : robots_(robots) {}

  Stage stage() const { return stage_; }
  bool finished() const { return stage_ == Stage::done; }
  std::optional<CloudRoundResult>& result() { return result_; }
  std::vector<std::pair<NodeId, FineTuneAck>>& acks() { return acks_; }

  void step(RoundContext& ctx, std::uint64_t tick) {
    const ProtocolConfig& cfg = *ctx.config;
    switch (stage_) {
      case Stage::cloud_augment: {
        plan_ = cloud_augment(uploads_, cfg.cloud);
        for (std::size_t p = 0; p < plan_->participants.size(); ++p) {
          ctx.post(id_, plan_->participants[p], plan_->augmented[p]);
        }
        move_to(id_, stage_, Stage::labeling, ctx);
        stage_started_ = tick;
        if (cfg.remote_labeling) {
          responses_.assign(uploads_.size(), std::nullopt);
          for (const auto& p : plan_->participants) ctx.post(id_, p, LabelRequest{plan_->scenarios});
        }
        return;
      }
      case Stage::labeling:
        if (!cfg.remote_labeling) {
          labels_ = cloud_labels(*plan_, uploads_, cloud_predictions(*plan_, uploads_), cfg.cloud);
          move_to(id_, stage_, Stage::cloud_train, ctx);
          return;
        }
        break;
      case Stage::cloud_train: {
        result_ = cloud_train(std::move(*plan_), uploads_, std::move(labels_), cfg.cloud);
        plan_.reset();
        for (std::size_t p = 0; p < result_->participants.size(); ++p) {
          ctx.post(id_, result_->participants[p], result_->dispatch[p]);
        }
        move_to(id_, stage_, Stage::dispatched, ctx);
        stage_started_ = tick;
        return;
      }
      case Stage::fine_tuned:
        move_to(id_, stage_, Stage::done, ctx);
        return;
      case Stage::done:
        if (auto m = ctx.net.receive(id_)) ctx.violation(id_, stage_, *m);
        return;
      default:
        break;
    }

    if (auto m = ctx.net.receive(id_)) handle(ctx, std::move(*m));

    if (stage_ == Stage::local_compute || stage_ == Stage::uploaded) {
      const std::size_t quorum = robots_ > cfg.max_missing ? robots_ - cfg.max_missing : 0;
      if (uploads_.size() == robots_) {
        begin_augment(ctx);
      } else if (tick >= cfg.deadline_ticks) {
        if (uploads_.empty() || uploads_.size() < quorum) {
          throw ProtocolError("cloud round aborted at deadline: " + std::to_string(uploads_.size()) + " of " +
                              std::to_string(robots_) + " uploads, quorum " + std::to_string(std::max<std::size_t>(quorum, 1)));
        }
        ctx.log.push_back("cloud: deadline reached with " + std::to_string(uploads_.size()) + " uploads");
        begin_augment(ctx);
      }
    } else if (stage_ == Stage::labeling) {
      const bool all = std::all_of(responses_.begin(), responses_.end(), [](const auto& r) { return r.has_value(); });
      if (all || tick >= stage_started_ + cfg.deadline_ticks) {
        std::vector<std::vector<std::optional<double>>> preds;
        for (auto& r : responses_) {
          preds.push_back(r ? std::move(r->torques)
                            : std::vector<std::optional<double>>(plan_->scenarios.size()));
        }
        labels_ = cloud_labels(*plan_, uploads_, preds, cfg.cloud);
        move_to(id_, stage_, Stage::cloud_train, ctx);
      }
    } else if (stage_ == Stage::dispatched) {
      if (acks_.size() == result_->participants.size() || tick >= stage_started_ + cfg.deadline_ticks) {
        move_to(id_, stage_, Stage::fine_tuned, ctx);
      }
    }
  }

 private:
  void begin_augment(RoundContext& ctx) {
    std::sort(uploads_.begin(), uploads_.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    move_to(id_, stage_, Stage::cloud_augment, ctx);
  }

  void handle(RoundContext& ctx, Message m) {
    const MessageTag tag = tag_of(m.payload);
    if (m.from.is_cloud() || !cloud_accepts(stage_, tag, ctx.config->remote_labeling)) {
      ctx.violation(id_, stage_, m);
      return;
    }
    if (auto* up = std::get_if<UploadLocal>(&m.payload)) {
      const bool dup = std::any_of(uploads_.begin(), uploads_.end(), [&](const auto& u) { return u.first == m.from; });
      if (dup || m.from.index >= robots_) {
        ctx.violation(id_, stage_, m);
        return;
      }
      uploads_.emplace_back(m.from, std::move(*up));
      if (stage_ == Stage::local_compute) move_to(id_, stage_, Stage::uploaded, ctx);
    } else if (auto* resp = std::get_if<LabelResponse>(&m.payload)) {
      const std::size_t p = participant(m.from);
      if (p == npos || responses_[p] || resp->torques.size() != plan_->scenarios.size()) {
        ctx.violation(id_, stage_, m);
        return;
      }
      responses_[p] = std::move(*resp);
    } else if (auto* ack = std::get_if<FineTuneAck>(&m.payload)) {
      const bool dup = std::any_of(acks_.begin(), acks_.end(), [&](const auto& a) { return a.first == m.from; });
      if (participant(m.from) == npos || dup) {
        ctx.violation(id_, stage_, m);
        return;
      }
      acks_.emplace_back(m.from, std::move(*ack));
    }
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t participant(NodeId n) const {
    for (std::size_t p = 0; p < uploads_.size(); ++p) {
      if (uploads_[p].first == n) return p;
    }
    return npos;
  }

  NodeId id_ = NodeId::cloud();
  std::size_t robots_;
  Stage stage_ = Stage::local_compute;
  std::uint64_t stage_started_ = 0;
  Uploads uploads_;
  std::optional<CloudPlan> plan_;
  std::vector<std::optional<LabelResponse>> responses_;
  std::vector<double> labels_;
  std::optional<CloudRoundResult> result_;
  std::vector<std::pair<NodeId, FineTuneAck>> acks_;
};

}  // namespace

RoundResult run_round(std::span<const RobotSetup> robots, const ProtocolConfig& config) {
  if (robots.empty()) throw ConfigError("a round needs at least one robot");
  if (robots.size() >= NodeId::kCloudBit) throw ConfigError("too many robots");
  RoundContext ctx;
  ctx.config = &config;
  ctx.net.set_duplicate_all(config.duplicate_messages);

  std::vector<RobotActor> actors;
  actors.reserve(robots.size());
  for (std::size_t r = 0; r < robots.size(); ++r) actors.emplace_back(NodeId::robot(static_cast<std::uint16_t>(r)), robots[r]);
  CloudActor cloud(robots.size());

  for (auto& a : actors) {
    if (config.dropouts.contains(a.outcome().id.index)) a.drop(ctx, "offline (dropout injection)");
  }
  for (const auto& m : config.injected) ctx.post(m.from, m.to, m.payload);

  const std::uint64_t max_ticks = 16 * config.deadline_ticks + 100000;
  std::uint64_t tick = 0;
  for (; tick < max_ticks; ++tick) {
    const bool robots_done = std::all_of(actors.begin(), actors.end(), [](auto& a) { return a.finished(); });
    if (robots_done && cloud.finished() && ctx.net.idle()) break;
    for (auto& a : actors) a.step(ctx);
    cloud.step(ctx, tick);
  }
  if (tick == max_ticks) throw ProtocolError("round did not terminate");

  RoundResult out;
  for (auto& a : actors) out.robots.push_back(std::move(a.outcome()));
  out.cloud_stage = cloud.stage();
  out.cloud = std::move(cloud.result());
  out.acks = std::move(cloud.acks());
  out.log = std::move(ctx.log);
  for (const auto& line : ctx.net.log()) out.log.push_back("network: " + line);
  out.violations = ctx.violations;
  out.network = ctx.net.stats();
  out.ticks = tick;
  return out;
}

}  // namespace parl
