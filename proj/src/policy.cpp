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
#include "parl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "parl/error.hpp"
#include "parl/ridge.hpp"

namespace parl {

namespace {

constexpr int kOffsetRows = 6;

bool drivable_or_car(ClassId c) {
  return c == ClassId::road || c == ClassId::lane_marking || c == ClassId::car;
}

// Leftmost and rightmost cells of the drivable span in a row, or nullopt.
std::optional<std::pair<int, int>> drivable_span(const SemanticMap& m, int row) {
  int lo = -1, hi = -1;
  for (int x = 0; x < m.width(); ++x) {
    if (!drivable_or_car(m.at(x, row))) continue;
    if (lo < 0) lo = x;
    hi = x;
  }
  if (lo < 0) return std::nullopt;
  return std::make_pair(lo, hi);
}

}  // namespace

FeatureVector featurize_map(const SemanticMap& m) {
  FeatureVector f = FeatureVector::Zero();
  const int W = m.width(), H = m.height();
  for (int pr = 0; pr < kPoolRows; ++pr) {
    const int y0 = pr * H / kPoolRows, y1 = (pr + 1) * H / kPoolRows;
    for (int pc = 0; pc < kPoolCols; ++pc) {
      const int x0 = pc * W / kPoolCols, x1 = (pc + 1) * W / kPoolCols;
      const double cells = static_cast<double>((y1 - y0) * (x1 - x0));
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          f((index_of(m.at(x, y)) * kPoolRows + pr) * kPoolCols + pc) += 1.0;
        }
      }
      for (int c = 0; c < kNumClasses; ++c) f((c * kPoolRows + pr) * kPoolCols + pc) /= cells;
    }
  }

  const double half = 0.5 * W, mid = 0.5 * (W - 1);
  double offset_sum = 0.0;
  int rows = 0;
  for (int y = H - 1; y >= H / 2 && rows < kOffsetRows; --y) {
    if (auto span = drivable_span(m, y)) {
      offset_sum += 0.5 * (span->first + span->second) - mid;
      ++rows;
    }
  }
  if (rows == 0) throw DegenerateInputError("no road region in the lower half of the scene");
  f(kLaneOffsetFeature) = offset_sum / rows / half;

  const InstanceMap inst = extract_instances(m);
  const InstanceRecord* nearest = nullptr;
  double nearest_offset = 0.0;
  for (const auto& r : inst.records()) {
    if (r.cls != ClassId::car || r.box.y1 < H / 2) continue;
    auto span = drivable_span(m, r.box.y1);
    if (!span || r.affine.translate_x < span->first || r.affine.translate_x > span->second) continue;
    if (nearest && nearest->box.y1 >= r.box.y1) continue;
    nearest = &r;
    nearest_offset = (r.affine.translate_x - 0.5 * (span->first + span->second)) / half;
  }
  f(kObstacleFeature) = nearest ? nearest_offset : 0.0;
  return f;
}

FeatureVector featurize(const Scenario& scenario, const StyleModel& style) {
  return featurize_map(segment_classes(scenario, style));
}

FeatureVector featurize(const DrivingSample& sample, const StyleModel& style) {
  return featurize(sample.scenario, style);
}

Dataset make_dataset(std::span<const DrivingSample> samples, const StyleModel& style, std::size_t* skipped) {
  Dataset out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.label) throw TrainingError("dataset sample has no torque label");
    if (skipped == nullptr) {
      out.push_back({featurize(s, style), *s.label});
      continue;
    }
    try {
      out.push_back({featurize(s, style), *s.label});
    } catch (const DegenerateInputError&) {
      ++*skipped;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

PolicyModel::PolicyModel(Weights weights, double lambda, TrainingMeta meta)
    : weights_(std::move(weights)), lambda_(lambda), meta_(meta) {
  if (!weights_.allFinite()) throw TrainingError("policy weights are not finite");
}

PolicyModel PolicyModel::constant(double torque) {
  Weights w = Weights::Zero();
  w(0) = torque;
  return PolicyModel(w, 0.0);
}

double PolicyModel::predict(const FeatureVector& f) const {
  const double v = raw(f);
  if (!std::isfinite(v)) return 0.5;
  return std::clamp(v, 0.0, 1.0);
}

namespace {

PolicyModel solve(const Dataset& data, double lambda, double beta, const PolicyModel::Weights& prior) {
  if (data.empty()) throw TrainingError("cannot train on an empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& fa = data[a].features;
    const auto& fb = data[b].features;
    for (int k = 0; k < kFeatureDim; ++k) {
      if (fa(k) != fb(k)) return fa(k) < fb(k);
    }
    return data[a].torque < data[b].torque;
  });
  Eigen::MatrixXd X(data.size(), kWeightDim);
  Eigen::VectorXd y(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& row = data[order[i]];
    if (!row.features.allFinite() || !std::isfinite(row.torque)) throw TrainingError("non-finite training sample");
    X(i, 0) = 1.0;
    X.row(i).tail<kFeatureDim>() = row.features.transpose();
    y(i) = row.torque;
  }
  const Eigen::VectorXd w = solve_proximal_ridge(X, y, lambda, beta, Eigen::VectorXd(prior));
  TrainingMeta meta;
  meta.samples = static_cast<std::uint32_t>(data.size());
  return PolicyModel(PolicyModel::Weights(w), lambda, meta);
}

}  // namespace

PolicyModel train(const Dataset& data, double lambda) {
  return solve(data, lambda, 0.0, PolicyModel::Weights::Zero());
}

PolicyModel fine_tune(const PolicyModel& shared, const Dataset& local, double beta, double lambda) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw TrainingError("fine-tune mix must lie in [0,1]");
  return solve(local, lambda, beta, shared.weights());
}

// ---------------------------------------------------------------------------

double style_distance(const StyleModel& a, const StyleModel& b) {
  return (a.class_means() - b.class_means()).cwiseAbs().rowwise().maxCoeff().mean();
}

std::optional<double> member_label(const LocalPolicy& member, const Scenario& scenario) {
  try {
    return member.policy.predict(featurize(scenario, member.style));
  } catch (const DegenerateInputError&) {
    return std::nullopt;
  }
}

double aggregate_labels(StyleId target, std::span<const StyleModel> member_styles,
                        std::span<const std::optional<double>> predictions, const CrowdsourceOptions& options) {
  if (member_styles.size() != predictions.size()) throw TrainingError("one prediction per member expected");
  const StyleModel* native = nullptr;
  for (const auto& st : member_styles) {
    if (st.style() == target) native = &st;
  }
  std::vector<double> preds, weights;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (!predictions[i]) continue;
    preds.push_back(*predictions[i]);
    weights.push_back(options.style_weighting && native
                          ? std::exp(-style_distance(*native, member_styles[i]) / options.bandwidth)
                          : 1.0);
  }
  if (preds.empty()) return 0.5;
  double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(wsum > 0.0)) {
    std::fill(weights.begin(), weights.end(), 1.0);
    wsum = static_cast<double>(weights.size());
  }
  double label = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) label += weights[i] * preds[i];
  label /= wsum;
  const auto [lo, hi] = std::minmax_element(preds.begin(), preds.end());
  return std::clamp(label, *lo, *hi);
}

std::vector<double> crowdsource_labels(std::span<const Scenario> scenarios, std::span<const LocalPolicy> members,
                                       const CrowdsourceOptions& options) {
  std::vector<StyleModel> styles;
  styles.reserve(members.size());
  for (const auto& m : members) styles.push_back(m.style);
  std::vector<double> labels;
  labels.reserve(scenarios.size());
  std::vector<std::optional<double>> preds(members.size());
  for (const auto& sc : scenarios) {
    for (std::size_t i = 0; i < members.size(); ++i) preds[i] = member_label(members[i], sc);
    labels.push_back(aggregate_labels(sc.style, styles, preds, options));
  }
  return labels;
}

// ---------------------------------------------------------------------------

EvaluationReport evaluate(const PolicyModel& model, std::span<const DrivingSample> testset, const StyleModel& style,
                          double delta_fail) {
  if (testset.empty()) throw EvaluationError("cannot evaluate on an empty test set");
  EvaluationReport rep;
  rep.delta_fail = delta_fail;
  std::array<double, 3> err_sum{}, fail{};
  double total_err = 0.0, total_fail = 0.0;
  for (const auto& s : testset) {
    if (!s.label) throw EvaluationError("test sample has no torque label");
    double pred = 0.5;
    try {
      pred = model.predict(featurize(s, style));
    } catch (const DegenerateInputError&) {
    }
    const double e = std::abs(pred - *s.label);
    const auto t = static_cast<std::size_t>(s.task);
    err_sum[t] += e;
    fail[t] += e > delta_fail ? 1.0 : 0.0;
    ++rep.task_count[t];
    total_err += e;
    total_fail += e > delta_fail ? 1.0 : 0.0;
  }
  for (std::size_t t = 0; t < 3; ++t) {
    if (rep.task_count[t] == 0) continue;
    rep.task_error[t] = err_sum[t] / rep.task_count[t];
    rep.task_failure_rate[t] = fail[t] / rep.task_count[t];
  }
  rep.count = static_cast<std::uint32_t>(testset.size());
  rep.overall_error = total_err / rep.count;
  rep.overall_failure_rate = total_fail / rep.count;
  return rep;
}

}  // namespace parl
