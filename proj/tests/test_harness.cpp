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
#include <filesystem>

#include "doctest.h"
#include "fixtures.hpp"
#include "parl/error.hpp"
#include "parl/harness.hpp"
#include "parl/stats.hpp"

using namespace parl;
using namespace parl::testing;
namespace fs = std::filesystem;

namespace {

const DrivingSample& some_sample() {
  static const DrivingSample s = world_with_styles(1, 1).generate(StyleId{1}, TaskType::avoid_cars, 4);
  return s;
}

std::string slurp(const fs::path& p) {
  const Bytes b = read_file(p);
  return {b.begin(), b.end()};
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("config text round trips losslessly") {
  ExperimentConfig c;
  CHECK(parse_config(to_text(c)) == c);
  c.robots = 4;
  c.lambda = 1.0 / 3.0;
  c.tau = 0.0;
  c.dropouts = {1, 3};
  c.max_missing = 2;
  c.world_seed = ~std::uint64_t{0};
  c.output_dir = "runs/with spaces";
  c.exclude_self = true;
  CHECK(parse_config(to_text(c)) == c);
  CHECK(to_text(parse_config(to_text(c))) == to_text(c));
  CHECK(config_keys().size() == 22);
}

TEST_CASE("config parsing is strict") {
  CHECK_THROWS_AS(parse_config("robots = 3\nrobotz = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("robots = 3\nrobots = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("robots 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("robots = three\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("robots = 3.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("color_jitter = yes\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("tau = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("beta = -0.1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("robots = 2\ndropouts = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("samples_per_task = 1\n"), ConfigError);
  CHECK(parse_config("# comment only\n\n  robots = 2  # trailing\n").robots == 2);
  CHECK(parse_config("").robots == 3);
}

TEST_CASE("color jitter keeps maps and labels and stays in range") {
  const DrivingSample& s = some_sample();
  CHECK(baseline_color_jitter(s, 1, 0.0) == s);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const DrivingSample j = baseline_color_jitter(s, seed, 0.5);
    CHECK(j.semantic == s.semantic);
    CHECK(j.instances == s.instances);
    CHECK(j.label == s.label);
    CHECK(j.task == s.task);
    for (const auto& ch : j.scenario.pixels) {
      CHECK(ch.minCoeff() >= 0.0f);
      CHECK(ch.maxCoeff() <= 1.0f);
    }
  }
  CHECK_FALSE(baseline_color_jitter(s, 1, 0.15).scenario == s.scenario);
}

TEST_CASE("random resized crop: identity, size and coordinate consistency") {
  const DrivingSample& s = some_sample();
  const int W = s.semantic.width(), H = s.semantic.height();
  CHECK(*apply_crop(s, {0, 0, W, H}) == s);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto w = chosen_crop_window(s, seed, 0.5);
    const DrivingSample c = baseline_random_resized_crop(s, seed, 0.5);
    CHECK(c.semantic.width() == W);
    CHECK(c.semantic.height() == H);
    CHECK(c.label == s.label);
    if (!w) {
      CHECK(c == s);
      continue;
    }
    CHECK(w->x0 >= 0);
    CHECK(w->y0 >= 0);
    CHECK(w->x0 + w->width <= W);
    CHECK(w->y0 + w->height <= H);
    // Coordinate oracle, in floating point.
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const int sx = w->x0 + static_cast<int>(std::floor((x + 0.5) * w->width / W));
        const int sy = w->y0 + static_cast<int>(std::floor((y + 0.5) * w->height / H));
        CHECK(c.semantic.at(x, y) == s.semantic.at(sx, sy));
        CHECK(c.scenario.pixels[1](y, x) == s.scenario.pixels[1](sy, sx));
      }
    }
    for (const auto& r : c.instances.records()) {
      CHECK((c.instances.grid() == r.id).any());
      CHECK(s.instances.find(r.id) != nullptr);
    }
  }
  CHECK_THROWS_AS(apply_crop(s, {1, 0, W, H}), ConfigError);
}

TEST_CASE("qualitative axes") {
  const DrivingSample& s = some_sample();
  AugmenterOutputs jitter{"color_jitter", 1, {}, {}, 0};
  AugmenterOutputs crop{"random_resized_crop", 1, {}, {}, 0};
  for (std::uint64_t k = 0; k < 4; ++k) {
    jitter.references.push_back(s.layout());
    jitter.outputs.push_back(baseline_color_jitter(s, k).layout());
    const DrivingSample c = baseline_random_resized_crop(s, k);
    crop.references.push_back(c.layout());
    crop.outputs.push_back(c.layout());
  }
  Layout added = s.layout();
  {
    ClassGrid g = added.semantic.grid();
    InstanceGrid ids = added.instances.grid();
    auto recs = added.instances.records();
    const std::int32_t id = added.instances.max_id() + 1;
    g(0, 0) = static_cast<std::uint8_t>(ClassId::pedestrian);
    ids(0, 0) = id;
    recs.push_back({id, ClassId::pedestrian, {0, 0, 0, 0}, affine_of({0, 0, 0, 0})});
    added = {SemanticMap(g), InstanceMap(ids, recs)};
  }
  AugmenterOutputs dat{"dat", 1, {s.layout(), s.layout()}, {added, added}, 6};
  const auto rows = qualitative_table({jitter, crop, dat}, nullptr);
  CHECK_FALSE(rows[0].semantic);
  CHECK_FALSE(rows[0].instance);
  CHECK(rows[0].number == 4.0);
  CHECK_FALSE(rows[1].semantic);
  CHECK_FALSE(rows[1].instance);
  CHECK(rows[2].semantic);
  CHECK(rows[2].instance);
  CHECK(rows[2].number == 6.0);
  CHECK(rows[2].reality_grade == "n/a");
  CHECK(reality_grade(0.8, 0.5) == "A");
  CHECK(reality_grade(0.6, 0.5) == "B");
  CHECK(reality_grade(0.3, 0.5) == "C");
  CHECK(reality_grade(0.1, 0.5) == "D");
}

TEST_CASE("combined reports are sample-weighted") {
  EvaluationReport a, b;
  a.count = 2;
  a.task_count = {2, 0, 0};
  a.task_error = {0.1, 0, 0};
  a.overall_error = 0.1;
  a.overall_failure_rate = 0.5;
  a.task_failure_rate = {0.5, 0, 0};
  b.count = 6;
  b.task_count = {0, 6, 0};
  b.task_error = {0, 0.3, 0};
  b.overall_error = 0.3;
  b.overall_failure_rate = 0.0;
  const auto c = combine_reports({a, b});
  CHECK(c.count == 8);
  CHECK(c.overall_error == doctest::Approx(0.25));
  CHECK(c.overall_failure_rate == doctest::Approx(0.125));
  CHECK(c.task_error[0] == doctest::Approx(0.1));
  CHECK(c.task_error[1] == doctest::Approx(0.3));
}

TEST_CASE("splits: stratified, disjoint styles, reproducible") {
  ExperimentConfig c;
  const auto r = generate_robots(c);
  REQUIRE(r.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r[i].train.size() == 42);
    CHECK(r[i].test.size() == 18);
    for (const auto& s : r[i].test) CHECK(s.scenario.style == StyleId{static_cast<std::uint16_t>(i + 1)});
    std::array<int, 3> per_task{};
    for (const auto& s : r[i].test) ++per_task[static_cast<int>(s.task)];
    CHECK(per_task == std::array<int, 3>{6, 6, 6});
  }
  CHECK(encode_dataset(generate_robots(c)[1].test) == encode_dataset(r[1].test));
}

TEST_CASE("single-robot experiment runs, persists artifacts and re-evaluates exactly") {
  const fs::path dir = fs::temp_directory_path() / "parl_harness_single";
  fs::remove_all(dir);
  ExperimentConfig c;
  c.robots = 1;
  c.output_dir = dir.string();
  const ComparisonReport rep = run_experiment(c, dir);
  CHECK(rep.styles == 1);
  REQUIRE(rep.approach("parl"));
  CHECK(rep.approach("parl")->robots[0]);
  for (const auto& [path, hash] : rep.artifacts) {
    REQUIRE(fs::exists(dir / path));
    CHECK(fnv1a(slurp(dir / path)) == hash);
  }
  for (const char* f : {"report.json", "report.csv", "report.md", "config.txt", "models/robot0_parl.parldm",
                        "models/scorer.parldm", "data/cloud_pool.parlds", "cloud/scorer_diagnostics.json"}) {
    CHECK(fs::exists(dir / f));
  }
  CHECK(parse_config(slurp(dir / "config.txt")) == c);
  const auto re = reevaluate_run(dir);
  CHECK(re.size() == rep.approaches.size());
  for (const auto& a : re) {
    const auto* orig = rep.approach(a.name);
    REQUIRE(orig);
    CHECK(a.robots == orig->robots);
    CHECK(a.overall == orig->overall);
  }
  // The cloud pool holds one labeled scenario per trained row or skipped scenario.
  CHECK(decode_dataset(read_file(dir / "data/cloud_pool.parlds")).size() >= rep.pool_size);
  fs::remove_all(dir);
}

TEST_CASE("module errors surface as stage errors naming the node") {
  const fs::path dir = fs::temp_directory_path() / "parl_harness_fail";
  fs::remove_all(dir);
  ExperimentConfig c;
  c.robots = 2;
  c.dropouts = {0, 1};
  c.max_missing = 1;
  try {
    run_experiment(c, dir);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "parl_round");
    CHECK(e.node() == "cloud");
  }
  fs::remove_all(dir);
}

TEST_CASE("report rendering") {
  const fs::path dir = fs::temp_directory_path() / "parl_harness_render";
  fs::remove_all(dir);
  ExperimentConfig c;
  c.robots = 2;
  c.color_jitter = false;
  const auto rep = run_experiment(c, dir);
  CHECK(rep.approach("il_color_jitter") == nullptr);
  CHECK(rep.approach("il_random_crop") != nullptr);
  const auto j = nlohmann::ordered_json::parse(slurp(dir / "report.json"));
  CHECK(report_markdown(j) == slurp(dir / "report.md"));
  CHECK(j["splits"].size() == 2);
  CHECK(j["splits"][0]["test_hash"].get<std::string>().size() == 16);
  const std::string csv = slurp(dir / "report.csv");
  CHECK(csv.rfind("approach,robot,", 0) == 0);
  fs::remove_all(dir);
}

}
