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
#include "parl/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>

#include "parl/error.hpp"
#include "parl/rng.hpp"
#include "parl/stats.hpp"

namespace parl {

// ---------------------------------------------------------------------------
// Config file.

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, end);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || v.empty()) {
    throw ConfigError("bad value for " + std::string(key) + ": '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("bad value for " + std::string(key) + ": expected true or false");
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

template <typename T>
Field int_field(const char* key, T ExperimentConfig::*m) {
  return {key, [m](const ExperimentConfig& c) { return std::to_string(c.*m); },
          [m, key](ExperimentConfig& c, std::string_view v) { c.*m = parse_number<T>(key, v); }};
}

Field double_field(const char* key, double ExperimentConfig::*m) {
  return {key, [m](const ExperimentConfig& c) { return fmt_double(c.*m); },
          [m, key](ExperimentConfig& c, std::string_view v) { c.*m = parse_number<double>(key, v); }};
}

Field bool_field(const char* key, bool ExperimentConfig::*m) {
  return {key, [m](const ExperimentConfig& c) { return std::string(c.*m ? "true" : "false"); },
          [m, key](ExperimentConfig& c, std::string_view v) { c.*m = parse_bool(key, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      int_field("robots", &ExperimentConfig::robots),
      int_field("samples_per_task", &ExperimentConfig::samples_per_task),
      double_field("holdout", &ExperimentConfig::holdout),
      int_field("fan_out", &ExperimentConfig::fan_out),
      double_field("tau", &ExperimentConfig::tau),
      double_field("beta", &ExperimentConfig::beta),
      double_field("lambda", &ExperimentConfig::lambda),
      double_field("delta_fail", &ExperimentConfig::delta_fail),
      int_field("world_seed", &ExperimentConfig::world_seed),
      int_field("augment_seed", &ExperimentConfig::augment_seed),
      int_field("protocol_seed", &ExperimentConfig::protocol_seed),
      bool_field("color_jitter", &ExperimentConfig::color_jitter),
      bool_field("random_crop", &ExperimentConfig::random_crop),
      double_field("jitter_magnitude", &ExperimentConfig::jitter_magnitude),
      double_field("crop_min_scale", &ExperimentConfig::crop_min_scale),
      int_field("baseline_copies", &ExperimentConfig::baseline_copies),
      bool_field("per_robot_models", &ExperimentConfig::per_robot_models),
      bool_field("exclude_self", &ExperimentConfig::exclude_self),
      bool_field("remote_labeling", &ExperimentConfig::remote_labeling),
      int_field("max_missing", &ExperimentConfig::max_missing),
      {"dropouts",
       [](const ExperimentConfig& c) {
         std::string s;
         for (auto d : c.dropouts) s += (s.empty() ? "" : ",") + std::to_string(d);
         return s;
       },
       [](ExperimentConfig& c, std::string_view v) {
         c.dropouts.clear();
         std::string_view rest = v;
         while (!rest.empty()) {
           const auto comma = rest.find(',');
           const std::string item = trim(rest.substr(0, comma));
           c.dropouts.insert(parse_number<std::uint16_t>("dropouts", item));
           if (comma == std::string_view::npos) break;
           rest = rest.substr(comma + 1);
           if (rest.empty()) throw ConfigError("bad value for dropouts: trailing comma");
         }
       }},
      {"output_dir", [](const ExperimentConfig& c) { return c.output_dir; },
       [](ExperimentConfig& c, std::string_view v) {
         if (v.empty()) throw ConfigError("output_dir must not be empty");
         c.output_dir = std::string(v);
       }},
  };
  return f;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.emplace_back(f.key);
  return k;
}

void set_config_value(ExperimentConfig& c, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void validate(const ExperimentConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(c.robots >= 1 && c.robots <= 64, "robots must lie in [1, 64]");
  need(c.samples_per_task >= 2, "samples_per_task must be at least 2 so both splits are non-empty");
  need(c.holdout > 0.0 && c.holdout < 1.0, "holdout must lie in (0, 1)");
  need(c.fan_out >= 1, "fan_out must be at least 1");
  need(c.tau >= 0.0 && c.tau < 1.0, "tau must lie in [0, 1)");
  need(c.beta >= 0.0 && c.beta <= 1.0, "beta must lie in [0, 1]");
  need(c.lambda >= 0.0 && std::isfinite(c.lambda), "lambda must be a finite nonnegative number");
  need(c.delta_fail > 0.0 && c.delta_fail < 1.0, "delta_fail must lie in (0, 1)");
  need(c.jitter_magnitude >= 0.0 && c.jitter_magnitude <= 0.5, "jitter_magnitude must lie in [0, 0.5]");
  need(c.crop_min_scale > 0.0 && c.crop_min_scale <= 1.0, "crop_min_scale must lie in (0, 1]");
  need(c.baseline_copies >= 1, "baseline_copies must be at least 1");
  need(c.max_missing >= 0 && c.max_missing < c.robots, "max_missing must lie in [0, robots)");
  for (auto d : c.dropouts) need(d < c.robots, "dropout index " + std::to_string(d) + " is not a robot");
  need(!c.output_dir.empty() && c.output_dir.find('\n') == std::string::npos, "output_dir must be one non-empty line");
}

std::string to_text(const ExperimentConfig& c) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(c) + "\n";
  return out;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  std::set<std::string> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": repeated key " + key);
    try {
      set_config_value(c, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate(c);
  return c;
}

// ---------------------------------------------------------------------------
// Baselines.

DrivingSample baseline_color_jitter(const DrivingSample& sample, std::uint64_t seed, double magnitude) {
  DrivingSample out = sample;
  if (magnitude <= 0.0) return out;
  Rng rng(seed);
  const double contrast = rng.uniform(1.0 - magnitude, 1.0 + magnitude);
  double grey = 0.0;
  for (const auto& ch : sample.scenario.pixels) grey += ch.cast<double>().mean();
  grey /= kChannels;
  for (int k = 0; k < kChannels; ++k) {
    const double gain = rng.uniform(1.0 - magnitude, 1.0 + magnitude);
    const double offset = rng.uniform(-magnitude, magnitude);
    auto& ch = out.scenario.pixels[k];
    ch = (((ch.cast<double>() - grey) * contrast + grey) * gain + offset).max(0.0).min(1.0).cast<float>();
  }
  return out;
}

CropWindow draw_crop_window(int width, int height, std::uint64_t seed, double min_scale) {
  Rng rng(seed);
  const double area = rng.uniform(min_scale, 1.0);
  const double log_ratio = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
  const double ratio = std::exp(log_ratio);
  CropWindow w;
  w.width = std::clamp(static_cast<int>(std::lround(width * std::sqrt(area * ratio))), 1, width);
  w.height = std::clamp(static_cast<int>(std::lround(height * std::sqrt(area / ratio))), 1, height);
  w.x0 = rng.between(0, width - w.width);
  w.y0 = rng.between(0, height - w.height);
  return w;
}

namespace {

template <typename Grid>
Grid resample(const Grid& g, const CropWindow& w) {
  const Eigen::Index H = g.rows(), W = g.cols();
  Grid out(H, W);
  for (Eigen::Index y = 0; y < H; ++y) {
    const Eigen::Index sy = w.y0 + ((2 * y + 1) * w.height) / (2 * H);
    for (Eigen::Index x = 0; x < W; ++x) {
      const Eigen::Index sx = w.x0 + ((2 * x + 1) * w.width) / (2 * W);
      out(y, x) = g(sy, sx);
    }
  }
  return out;
}

}  // namespace

std::optional<DrivingSample> apply_crop(const DrivingSample& sample, const CropWindow& w) {
  const int W = sample.semantic.width(), H = sample.semantic.height();
  if (w.width < 1 || w.height < 1 || w.x0 < 0 || w.y0 < 0 || w.x0 + w.width > W || w.y0 + w.height > H) {
    throw ConfigError("crop window outside the grid");
  }
  ClassGrid cls = resample(sample.semantic.grid(), w);
  if (!(cls == static_cast<std::uint8_t>(ClassId::road)).any()) return std::nullopt;
  InstanceGrid ids = resample(sample.instances.grid(), w);
  std::vector<InstanceRecord> recs;
  for (const auto& r : sample.instances.records()) {
    CellRect box{W, H, -1, -1};
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        if (ids(y, x) != r.id) continue;
        box.x0 = std::min(box.x0, x);
        box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x);
        box.y1 = std::max(box.y1, y);
      }
    }
    if (box.x1 < 0) continue;
    recs.push_back({r.id, r.cls, box, affine_of(box)});
  }
  DrivingSample out{sample.scenario, SemanticMap(std::move(cls)), InstanceMap(std::move(ids), std::move(recs)),
                    sample.label, sample.task, sample.provenance};
  for (auto& ch : out.scenario.pixels) ch = resample(ch, w);
  return out;
}

std::optional<CropWindow> chosen_crop_window(const DrivingSample& sample, std::uint64_t seed, double min_scale) {
  for (std::uint64_t k = 0; k < 8; ++k) {
    const CropWindow w =
        draw_crop_window(sample.semantic.width(), sample.semantic.height(), derive_seed(seed, {k}), min_scale);
    if (apply_crop(sample, w)) return w;
  }
  return std::nullopt;
}

DrivingSample baseline_random_resized_crop(const DrivingSample& sample, std::uint64_t seed, double min_scale) {
  if (auto w = chosen_crop_window(sample, seed, min_scale)) return *apply_crop(sample, *w);
  return sample;
}

// ---------------------------------------------------------------------------
// Qualitative axes.

std::string reality_grade(double mean_score, double threshold) {
  if (mean_score >= threshold + 0.25) return "A";
  if (mean_score >= threshold) return "B";
  if (mean_score >= threshold - 0.25) return "C";
  return "D";
}

QualitativeRow qualitative_row(const AugmenterOutputs& out, const PlausibilityScorer* scorer) {
  if (out.references.size() != out.outputs.size()) throw ConfigError("one reference per augmented layout expected");
  QualitativeRow row;
  row.name = out.name;
  const std::size_t produced = out.produced ? out.produced : out.outputs.size();
  row.number = out.inputs ? static_cast<double>(produced) / out.inputs : 0.0;
  for (std::size_t i = 0; i < out.outputs.size(); ++i) {
    const auto& ref = out.references[i];
    const auto& got = out.outputs[i];
    if (!(got.semantic == ref.semantic)) row.semantic = true;
    for (const auto& rec : got.instances.records()) {
      const auto* match = ref.instances.find(rec.id);
      if (match == nullptr || !(*match == rec)) row.instance = true;
    }
  }
  if (scorer != nullptr && !out.outputs.empty()) {
    double sum = 0.0;
    for (const auto& l : out.outputs) sum += scorer->score(l);
    row.reality = sum / out.outputs.size();
    row.reality_grade = reality_grade(*row.reality, scorer->threshold());
  } else {
    row.reality_grade = "n/a";
  }
  return row;
}

std::vector<QualitativeRow> qualitative_table(const std::vector<AugmenterOutputs>& outs,
                                              const PlausibilityScorer* scorer) {
  std::vector<QualitativeRow> rows;
  for (const auto& o : outs) rows.push_back(qualitative_row(o, scorer));
  return rows;
}

// ---------------------------------------------------------------------------
// Experiment.

const ApproachResult* ComparisonReport::approach(std::string_view name) const {
  for (const auto& a : approaches) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

bool ComparisonReport::all_checks_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

std::vector<RobotSetup> generate_robots(const ExperimentConfig& c) {
  validate(c);
  World world;
  std::vector<RobotSetup> robots(c.robots);
  const int n = c.samples_per_task;
  const int held = std::clamp(static_cast<int>(std::lround(c.holdout * n)), 1, n - 1);
  for (int r = 0; r < c.robots; ++r) {
    const StyleId sid{static_cast<std::uint16_t>(r + 1)};
    world.register_style(builtin_style(sid, c.world_seed));
    for (TaskType t : kAllTasks) {
      for (int i = 0; i < n; ++i) {
        auto s = world.generate(sid, t,
                                derive_seed(c.world_seed, {static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(t),
                                                           static_cast<std::uint64_t>(i)}));
        (i < n - held ? robots[r].train : robots[r].test).push_back(std::move(s));
      }
    }
  }
  return robots;
}

EvaluationReport combine_reports(const std::vector<EvaluationReport>& parts) {
  if (parts.empty()) throw EvaluationError("nothing to combine");
  EvaluationReport out;
  out.delta_fail = parts.front().delta_fail;
  std::array<double, 3> err{}, fail{};
  double total_err = 0.0, total_fail = 0.0;
  for (const auto& p : parts) {
    for (int t = 0; t < 3; ++t) {
      err[t] += p.task_error[t] * p.task_count[t];
      fail[t] += p.task_failure_rate[t] * p.task_count[t];
      out.task_count[t] += p.task_count[t];
    }
    total_err += p.overall_error * p.count;
    total_fail += p.overall_failure_rate * p.count;
    out.count += p.count;
  }
  for (int t = 0; t < 3; ++t) {
    if (out.task_count[t] == 0) continue;
    out.task_error[t] = err[t] / out.task_count[t];
    out.task_failure_rate[t] = fail[t] / out.task_count[t];
  }
  out.overall_error = total_err / out.count;
  out.overall_failure_rate = total_fail / out.count;
  return out;
}

namespace {

std::string robot_name(int r) { return NodeId::robot(static_cast<std::uint16_t>(r)).str(); }

template <typename F>
auto stage(const std::string& name, const std::string& node, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, node, e.what());
  }
}

void finish(ApproachResult& a) {
  std::vector<EvaluationReport> have;
  for (const auto& r : a.robots) {
    if (r) have.push_back(*r);
  }
  if (!have.empty()) a.overall = combine_reports(have);
}

class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path root) : root_(std::move(root)) {}
  void bytes(const std::string& rel, const Bytes& b) {
    write_file(root_ / rel, b);
    index_.emplace_back(rel, fnv1a({reinterpret_cast<const char*>(b.data()), b.size()}));
  }
  void text(const std::string& rel, const std::string& t) {
    write_text(root_ / rel, t);
    index_.emplace_back(rel, fnv1a(t));
  }
  std::vector<std::pair<std::string, std::uint64_t>> index() const { return index_; }

 private:
  std::filesystem::path root_;
  std::vector<std::pair<std::string, std::uint64_t>> index_;
};

std::uint64_t hash_bytes(const Bytes& b) { return fnv1a({reinterpret_cast<const char*>(b.data()), b.size()}); }

// Trains an IL policy on the robot's data plus augmented copies, featurized
// through the robot's own style.
PolicyModel train_with_copies(const std::vector<DrivingSample>& train_set, const StyleModel& style, double lambda,
                              int copies, const std::function<DrivingSample(const DrivingSample&, std::uint64_t)>& aug,
                              std::uint64_t seed, std::vector<DrivingSample>* produced) {
  std::vector<DrivingSample> all = train_set;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    for (int k = 0; k < copies; ++k) {
      all.push_back(aug(train_set[i], derive_seed(seed, {i, static_cast<std::uint64_t>(k)})));
      if (produced) produced->push_back(all.back());
    }
  }
  std::size_t skipped = 0;
  PolicyModel m = train(make_dataset(all, style, &skipped), lambda);
  m.meta().provenance = {static_cast<std::uint32_t>(train_set.size()), 0,
                         static_cast<std::uint32_t>(m.meta().samples - train_set.size())};
  return m;
}

}  // namespace

std::vector<CheckResult> acceptance_checks(const ComparisonReport& r) {
  std::vector<CheckResult> out;
  const auto* local = r.approach("local_il");
  const auto* parl = r.approach("parl");
  const auto* central = r.approach("centralized_il");
  {
    CheckResult c{"parl_failure_rate_below_local_il", true, ""};
    std::ostringstream os;
    os << std::setprecision(4);
    for (std::size_t i = 0; i < r.splits.size(); ++i) {
      const auto& lo = local ? local->robots[i] : std::nullopt;
      const auto& pa = parl ? parl->robots[i] : std::nullopt;
      if (!lo || !pa) {
        c.passed = false;
        os << robot_name(static_cast<int>(i)) << ": missing result; ";
        continue;
      }
      const double reduction = lo->overall_failure_rate > 0.0
                                   ? (lo->overall_failure_rate - pa->overall_failure_rate) / lo->overall_failure_rate
                                   : 0.0;
      const bool ok = pa->overall_failure_rate < lo->overall_failure_rate && reduction >= 0.3;
      c.passed = c.passed && ok;
      os << robot_name(static_cast<int>(i)) << ": local " << lo->overall_failure_rate << " parl "
         << pa->overall_failure_rate << " reduction " << reduction << (ok ? "" : " FAIL") << "; ";
    }
    c.detail = os.str();
    out.push_back(c);
  }
  {
    CheckResult c{"parl_error_not_above_centralized_il", false, ""};
    if (parl && central && parl->overall && central->overall) {
      const double p = parl->overall->overall_error, q = central->overall->overall_error;
      c.passed = p < q || (p == q && p < 0.02);
      std::ostringstream os;
      os << std::setprecision(4) << "parl " << p << " centralized " << q;
      c.detail = os.str();
    } else {
      c.detail = "missing result";
    }
    out.push_back(c);
  }
  return out;
}

ComparisonReport run_experiment(const ExperimentConfig& c, const std::filesystem::path& out_dir) {
  validate(c);
  ComparisonReport rep;
  rep.config = c;
  ArtifactWriter art(out_dir);
  art.text("config.txt", to_text(c));

  const auto robots = stage("generate", "world", [&] { return generate_robots(c); });
  for (int r = 0; r < c.robots; ++r) {
    const Bytes tr = encode_dataset(robots[r].train), te = encode_dataset(robots[r].test);
    art.bytes("data/" + robot_name(r) + "_train.parlds", tr);
    art.bytes("data/" + robot_name(r) + "_test.parlds", te);
    rep.splits.push_back({r, static_cast<std::uint16_t>(r + 1), robots[r].train.size(), robots[r].test.size(),
                          hash_bytes(tr), hash_bytes(te)});
  }

  auto make_result = [&](std::string_view name) {
    ApproachResult a;
    a.name = std::string(name);
    a.robots.assign(c.robots, std::nullopt);
    return a;
  };

  // Local IL.
  ApproachResult local = make_result("local_il");
  std::vector<StyleModel> styles;
  LocalComputeOptions lopt;
  lopt.lambda = c.lambda;
  for (int r = 0; r < c.robots; ++r) {
    const std::string node = robot_name(r);
    UploadLocal up = stage("local_il", node, [&] { return robot_local_compute(NodeId::robot(r), robots[r].train, lopt); });
    up.policy.meta().provenance = {up.policy.meta().samples, 0, 0};
    styles.push_back(up.style);
    art.bytes("models/" + node + "_style.parldm", encode_model(up.style));
    art.bytes("models/" + node + "_local_il.parldm", encode_model(up.policy));
    local.robots[r] = stage("local_il", node, [&] { return evaluate(up.policy, robots[r].test, up.style, c.delta_fail); });
  }
  finish(local);

  // Centralized IL: one policy over the pooled raw data, perceived through a
  // single pooled appearance model.
  ApproachResult central = make_result("centralized_il");
  stage("centralized_il", "cloud", [&] {
    std::vector<DrivingSample> pooled;
    for (const auto& r : robots) pooled.insert(pooled.end(), r.train.begin(), r.train.end());
    StyleFitOptions so;
    so.relaxed = true;
    so.style = StyleId{0};
    const StyleModel pst = fit_style(pooled, so);
    std::size_t skipped = 0;
    PolicyModel model = train(make_dataset(pooled, pst, &skipped), c.lambda);
    model.meta().provenance = {model.meta().samples, 0, 0};
    art.bytes("models/centralized_style.parldm", encode_model(pst));
    art.bytes("models/centralized_il.parldm", encode_model(model));
    for (int r = 0; r < c.robots; ++r) central.robots[r] = evaluate(model, robots[r].test, pst, c.delta_fail);
    return 0;
  });
  finish(central);

  // Peer-assisted round.
  ProtocolConfig pc;
  pc.cloud.fan_out = c.fan_out;
  pc.cloud.threshold = c.tau;
  pc.cloud.lambda = c.lambda;
  pc.cloud.per_robot_models = c.per_robot_models;
  pc.cloud.exclude_self = c.exclude_self;
  pc.cloud.seed = c.augment_seed;
  pc.local = lopt;
  pc.beta = c.beta;
  pc.delta_fail = c.delta_fail;
  pc.max_missing = static_cast<std::size_t>(c.max_missing);
  pc.remote_labeling = c.remote_labeling;
  pc.dropouts = c.dropouts;
  RoundResult round = stage("parl_round", "cloud", [&] { return run_round(robots, pc); });
  if (!round.cloud) throw StageError("parl_round", "cloud", "round ended without a cloud result");
  const CloudRoundResult& cloud = *round.cloud;

  ApproachResult parl = make_result("parl");
  for (const auto& o : round.robots) {
    const std::string node = o.id.str();
    if (o.ack) {
      parl.robots[o.id.index] = o.ack->report;
      art.bytes("models/" + node + "_parl.parldm", encode_model(o.ack->model));
    }
    if (o.shared) art.bytes("models/" + node + "_shared.parldm", encode_model(o.shared->policy));
    if (o.stage == Stage::dropped_out) rep.dropped.push_back(node + ": " + o.diagnostic);
  }
  finish(parl);
  {
    CheckResult delivery{"shared_model_delivered_exactly_once", true, ""};
    for (const auto& o : round.robots) {
      const bool participant =
          std::find(cloud.participants.begin(), cloud.participants.end(), o.id) != cloud.participants.end();
      const std::uint32_t want = participant ? 1 : 0;
      if (o.shared_received != want) {
        delivery.passed = false;
        delivery.detail += o.id.str() + " received " + std::to_string(o.shared_received) + "; ";
      }
    }
    if (delivery.passed) delivery.detail = std::to_string(cloud.participants.size()) + " participants";
    rep.checks.push_back(delivery);
  }

  art.bytes("models/where.parldm", encode_model(cloud.predictors.where));
  art.bytes("models/what.parldm", encode_model(cloud.predictors.what));
  if (cloud.scorer) art.bytes("models/scorer.parldm", encode_model(*cloud.scorer));
  if (cloud.scorer_diagnostics) art.text("cloud/scorer_diagnostics.json", to_json(*cloud.scorer_diagnostics).dump(2) + "\n");

  // The labeled cloud pool as samples, so the shared model can be refit.
  {
    std::vector<DrivingSample> pool;
    std::size_t k = 0;
    for (std::size_t p = 0; p < cloud.participants.size(); ++p) {
      const auto& src = robots[cloud.participants[p].index].train;
      for (const auto& cand : cloud.augmented[p].candidates) {
        for (std::size_t q = 0; q < cloud.participants.size(); ++q, ++k) {
          pool.push_back({cloud.scenarios.at(k), cand.semantic, cand.instances, cloud.labels.at(k),
                          src.at(cand.source_sample_id).task, Provenance::augmented});
        }
      }
    }
    art.bytes("data/cloud_pool.parlds", encode_dataset(pool));
  }
  {
    std::string log;
    for (const auto& line : round.log) log += line + "\n";
    art.text("cloud/round.log", log);
  }
  rep.augmentation = cloud.stats;
  rep.pool_size = cloud.pool_size;
  rep.styles = cloud.participants.size();
  {
    std::uint64_t attempts = 0, accepted = 0, maps = 0;
    for (const auto& s : cloud.stats) {
      attempts += s.augment.attempts;
      accepted += s.augment.accepted;
      maps += s.maps;
    }
    rep.acceptance_rate = attempts ? static_cast<double>(accepted) / attempts : 0.0;
    rep.fan_out_achieved = maps ? static_cast<double>(accepted) / maps : 0.0;
  }
  rep.round_ticks = round.ticks;
  rep.protocol_violations = round.violations;
  rep.network = round.network;

  // Image-space baselines and the qualitative table.
  std::vector<AugmenterOutputs> qual;
  {
    AugmenterOutputs dat{"dat", 0, {}, {}, 0};
    for (std::size_t p = 0; p < cloud.participants.size(); ++p) {
      const auto& up = *round.robots[cloud.participants[p].index].upload;
      dat.inputs += up.maps.size();
      for (const auto& cand : cloud.augmented[p].candidates) {
        dat.references.push_back(up.maps.at(cand.source_sample_id));
        dat.outputs.push_back(cand.layout());
      }
    }
    dat.produced = dat.outputs.size() * cloud.participants.size();
    qual.push_back(std::move(dat));
  }
  const double jm = c.jitter_magnitude, cm = c.crop_min_scale;
  struct Baseline {
    const char* name;
    bool enabled;
    std::uint64_t tag;
    std::function<DrivingSample(const DrivingSample&, std::uint64_t)> aug;
  };
  const std::vector<Baseline> baselines = {
      {"il_color_jitter", c.color_jitter, 0x717,
       [jm](const DrivingSample& s, std::uint64_t seed) { return baseline_color_jitter(s, seed, jm); }},
      {"il_random_crop", c.random_crop, 0xC20,
       [cm](const DrivingSample& s, std::uint64_t seed) { return baseline_random_resized_crop(s, seed, cm); }},
  };
  std::vector<ApproachResult> extra;
  for (const auto& b : baselines) {
    if (!b.enabled) continue;
    ApproachResult res = make_result(b.name);
    AugmenterOutputs q{b.name == std::string("il_color_jitter") ? "color_jitter" : "random_resized_crop", 0, {}, {}, 0};
    for (int r = 0; r < c.robots; ++r) {
      const std::string node = robot_name(r);
      std::vector<DrivingSample> produced;
      PolicyModel m = stage(b.name, node, [&] {
        return train_with_copies(robots[r].train, styles[r], c.lambda, c.baseline_copies, b.aug,
                                 derive_seed(c.protocol_seed, {b.tag, static_cast<std::uint64_t>(r)}), &produced);
      });
      art.bytes("models/" + node + "_" + b.name + ".parldm", encode_model(m));
      res.robots[r] = stage(b.name, node, [&] { return evaluate(m, robots[r].test, styles[r], c.delta_fail); });
      q.inputs += robots[r].train.size();
      for (const auto& s : produced) {
        // Geometric baselines are compared with the source under the same
        // transform, which is the produced map itself.
        q.references.push_back(s.layout());
        q.outputs.push_back(s.layout());
      }
    }
    finish(res);
    extra.push_back(std::move(res));
    qual.push_back(std::move(q));
  }
  rep.qualitative = qualitative_table(qual, cloud.scorer ? &*cloud.scorer : nullptr);

  rep.approaches.push_back(std::move(local));
  rep.approaches.push_back(std::move(central));
  rep.approaches.push_back(std::move(parl));
  for (auto& e : extra) rep.approaches.push_back(std::move(e));

  auto checks = acceptance_checks(rep);
  checks.insert(checks.end(), rep.checks.begin(), rep.checks.end());
  rep.checks = std::move(checks);
  rep.artifacts = art.index();

  const auto j = to_json(rep);
  write_text(out_dir / "report.json", j.dump(2) + "\n");
  write_text(out_dir / "report.csv", report_csv(rep));
  write_text(out_dir / "report.md", report_markdown(j));
  return rep;
}

// ---------------------------------------------------------------------------
// Report rendering.

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

nlohmann::ordered_json optional_report(const std::optional<EvaluationReport>& r) {
  return r ? to_json(*r) : nlohmann::ordered_json(nullptr);
}

}  // namespace

nlohmann::ordered_json to_json(const ComparisonReport& r) {
  nlohmann::ordered_json j;
  auto cfg = nlohmann::ordered_json::object();
  for (const auto& f : fields()) cfg[f.key] = f.get(r.config);
  j["config"] = std::move(cfg);
  auto splits = nlohmann::ordered_json::array();
  for (const auto& s : r.splits) {
    splits.push_back({{"robot", s.robot},
                      {"style", s.style},
                      {"train", s.train},
                      {"test", s.test},
                      {"train_hash", hex(s.train_hash)},
                      {"test_hash", hex(s.test_hash)}});
  }
  j["splits"] = std::move(splits);
  auto apps = nlohmann::ordered_json::object();
  for (const auto& a : r.approaches) {
    auto robots = nlohmann::ordered_json::array();
    for (const auto& rr : a.robots) robots.push_back(optional_report(rr));
    apps[a.name] = {{"robots", std::move(robots)}, {"overall", optional_report(a.overall)}};
  }
  j["approaches"] = std::move(apps);
  auto per = nlohmann::ordered_json::array();
  for (const auto& s : r.augmentation) {
    per.push_back({{"robot", s.robot.index},
                   {"maps", s.maps},
                   {"attempts", s.augment.attempts},
                   {"placement_failures", s.augment.placement_failures},
                   {"rejected", s.augment.rejected},
                   {"accepted", s.augment.accepted},
                   {"scenarios", s.scenarios}});
  }
  j["augmentation"] = {{"per_robot", std::move(per)},
                       {"styles", r.styles},
                       {"pool_size", r.pool_size},
                       {"acceptance_rate", r.acceptance_rate},
                       {"fan_out_achieved", r.fan_out_achieved}};
  auto qual = nlohmann::ordered_json::array();
  for (const auto& q : r.qualitative) {
    qual.push_back({{"augmenter", q.name},
                    {"number", q.number},
                    {"semantic", q.semantic},
                    {"instance", q.instance},
                    {"reality", q.reality ? nlohmann::ordered_json(*q.reality) : nlohmann::ordered_json(nullptr)},
                    {"reality_grade", q.reality_grade}});
  }
  j["qualitative"] = std::move(qual);
  j["dropped"] = r.dropped;
  j["round"] = {{"ticks", r.round_ticks},
                {"violations", r.protocol_violations},
                {"messages_sent", r.network.sent},
                {"messages_delivered", r.network.delivered},
                {"bytes", r.network.bytes},
                {"dropped", r.network.dropped},
                {"duplicates", r.network.duplicates},
                {"corrupt", r.network.corrupt}};
  auto arts = nlohmann::ordered_json::object();
  for (const auto& [path, h] : r.artifacts) arts[path] = hex(h);
  j["artifacts"] = std::move(arts);
  auto checks = nlohmann::ordered_json::array();
  for (const auto& c : r.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  j["checks"] = std::move(checks);
  return j;
}

std::string report_csv(const ComparisonReport& r) {
  std::string out = "approach,robot," + report_csv_header() + "\n";
  for (const auto& a : r.approaches) {
    for (std::size_t i = 0; i < a.robots.size(); ++i) {
      if (a.robots[i]) out += a.name + "," + std::to_string(i) + "," + report_csv_row(*a.robots[i]) + "\n";
    }
    if (a.overall) out += a.name + ",all," + report_csv_row(*a.overall) + "\n";
  }
  return out;
}

std::string report_markdown(const nlohmann::ordered_json& j) {
  std::ostringstream os;
  os << std::fixed;
  auto pct = [](const nlohmann::ordered_json& v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * v.get<double>() << "%";
    return s.str();
  };
  auto num = [](const nlohmann::ordered_json& v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << v.get<double>();
    return s.str();
  };
  const auto& apps = j.at("approaches");
  os << "## Failure rate (error > " << j.at("config").at("delta_fail").get<std::string>() << ")\n\n";
  os << "| approach | robot | turn | avoid cars | straight | overall |\n|---|---|---|---|---|---|\n";
  for (const auto& [name, a] : apps.items()) {
    const auto& robots = a.at("robots");
    for (std::size_t i = 0; i <= robots.size(); ++i) {
      const auto& rep = i < robots.size() ? robots[i] : a.at("overall");
      if (rep.is_null()) continue;
      os << "| " << name << " | " << (i < robots.size() ? std::to_string(i) : std::string("all")) << " | "
         << pct(rep["tasks"]["turn"]["failure_rate"]) << " | " << pct(rep["tasks"]["avoid-cars"]["failure_rate"])
         << " | " << pct(rep["tasks"]["straight"]["failure_rate"]) << " | " << pct(rep["overall_failure_rate"])
         << " |\n";
    }
  }
  os << "\n## Mean absolute torque error\n\n| approach | robot | turn | avoid cars | straight | overall |\n"
        "|---|---|---|---|---|---|\n";
  for (const auto& [name, a] : apps.items()) {
    const auto& robots = a.at("robots");
    for (std::size_t i = 0; i <= robots.size(); ++i) {
      const auto& rep = i < robots.size() ? robots[i] : a.at("overall");
      if (rep.is_null()) continue;
      os << "| " << name << " | " << (i < robots.size() ? std::to_string(i) : std::string("all")) << " | "
         << num(rep["tasks"]["turn"]["error"]) << " | " << num(rep["tasks"]["avoid-cars"]["error"]) << " | "
         << num(rep["tasks"]["straight"]["error"]) << " | " << num(rep["overall_error"]) << " |\n";
    }
  }
  const auto& aug = j.at("augmentation");
  os << "\n## Augmentation\n\n| robot | maps | attempts | accepted | rejected | placement failures | scenarios |\n"
        "|---|---|---|---|---|---|---|\n";
  for (const auto& s : aug.at("per_robot")) {
    os << "| " << s["robot"] << " | " << s["maps"] << " | " << s["attempts"] << " | " << s["accepted"] << " | "
       << s["rejected"] << " | " << s["placement_failures"] << " | " << s["scenarios"] << " |\n";
  }
  os << "\nstyles " << aug["styles"] << ", pool " << aug["pool_size"] << ", acceptance rate "
     << num(aug["acceptance_rate"]) << ", fan-out achieved " << num(aug["fan_out_achieved"]) << "\n";
  os << "\n## Qualitative axes\n\n| augmenter | number | semantic | instance | reality |\n|---|---|---|---|---|\n";
  for (const auto& q : j.at("qualitative")) {
    os << "| " << q["augmenter"].get<std::string>() << " | " << std::setprecision(2) << q["number"].get<double>()
       << " | " << (q["semantic"].get<bool>() ? "yes" : "none") << " | "
       << (q["instance"].get<bool>() ? "yes" : "none") << " | " << q["reality_grade"].get<std::string>();
    if (!q["reality"].is_null()) os << " (" << num(q["reality"]) << ")";
    os << " |\n";
  }
  os << "\n## Checks\n\n";
  for (const auto& c : j.at("checks")) {
    os << "- " << (c["passed"].get<bool>() ? "PASS" : "FAIL") << " " << c["name"].get<std::string>() << ": "
       << c["detail"].get<std::string>() << "\n";
  }
  return os.str();
}

std::vector<ApproachResult> reevaluate_run(const std::filesystem::path& dir) {
  const Bytes cfg_bytes = read_file(dir / "config.txt");
  const ExperimentConfig c = parse_config({reinterpret_cast<const char*>(cfg_bytes.data()), cfg_bytes.size()});
  std::vector<ApproachResult> out;
  std::vector<std::vector<DrivingSample>> tests;
  std::vector<StyleModel> styles;
  for (int r = 0; r < c.robots; ++r) {
    tests.push_back(decode_dataset(read_file(dir / "data" / (robot_name(r) + "_test.parlds"))));
    styles.push_back(decode_style_model(read_file(dir / "models" / (robot_name(r) + "_style.parldm"))));
  }
  const StyleModel central_style = decode_style_model(read_file(dir / "models" / "centralized_style.parldm"));
  for (std::string_view name : kApproaches) {
    ApproachResult a;
    a.name = std::string(name);
    a.robots.assign(c.robots, std::nullopt);
    bool any = false;
    for (int r = 0; r < c.robots; ++r) {
      const auto path = name == "centralized_il" ? dir / "models" / "centralized_il.parldm"
                                                 : dir / "models" / (robot_name(r) + "_" + std::string(name) + ".parldm");
      if (!std::filesystem::exists(path)) continue;
      const PolicyModel m = decode_policy_model(read_file(path));
      a.robots[r] = evaluate(m, tests[r], name == "centralized_il" ? central_style : styles[r], c.delta_fail);
      any = true;
    }
    if (!any) continue;
    finish(a);
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace parl
