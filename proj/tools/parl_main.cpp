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
// Command-line front end: gen, run, eval, report.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "parl/error.hpp"
#include "parl/harness.hpp"
#include "parl/io.hpp"

namespace fs = std::filesystem;
using namespace parl;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kCheckFailed = 2;
constexpr int kConfigError = 3;

std::string dashed(std::string key) {
  for (auto& ch : key) {
    if (ch == '_') ch = '-';
  }
  return key;
}

// Config assembly: defaults, then --config file, then individual flags.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key = value config file");
    for (const auto& key : config_keys()) {
      values[key];
      app->add_option("--" + dashed(key), values[key], "override " + key);
    }
  }

  ExperimentConfig build() const {
    ExperimentConfig c;
    if (!file.empty()) {
      const Bytes raw = read_file(file);
      c = parse_config({reinterpret_cast<const char*>(raw.data()), raw.size()});
    }
    for (const auto& key : config_keys()) {
      const std::string& v = values.at(key);
      if (!v.empty()) set_config_value(c, key, v);
    }
    validate(c);
    return c;
  }
};

fs::path output_path(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("PARL_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
  }
  return p;
}

std::string read_text(const fs::path& p) {
  const Bytes b = read_file(p);
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

void write_failure(const fs::path& dir, const StageError& e) {
  nlohmann::ordered_json j{{"status", "failed"}, {"stage", e.stage()}, {"node", e.node()}, {"error", e.what()}};
  try {
    write_text(dir / "failure.json", j.dump(2) + "\n");
  } catch (const std::exception&) {
  }
  std::cerr << j.dump() << "\n";
}

int cmd_gen(const ConfigFlags& flags) {
  const ExperimentConfig c = flags.build();
  const fs::path out = output_path(c.output_dir);
  const auto robots = generate_robots(c);
  write_text(out / "config.txt", to_text(c));
  for (std::size_t r = 0; r < robots.size(); ++r) {
    const std::string base = "data/" + NodeId::robot(static_cast<std::uint16_t>(r)).str();
    write_file(out / (base + "_train.parlds"), encode_dataset(robots[r].train));
    write_file(out / (base + "_test.parlds"), encode_dataset(robots[r].test));
    write_text(out / (base + "_train.json"), dataset_json(robots[r].train).dump(1) + "\n");
    write_text(out / (base + "_test.json"), dataset_json(robots[r].test).dump(1) + "\n");
    std::cout << base << ": " << robots[r].train.size() << " train, " << robots[r].test.size() << " test\n";
  }
  std::cout << "wrote " << out.string() << "\n";
  return kOk;
}

int cmd_run(const ConfigFlags& flags, bool check) {
  const ExperimentConfig c = flags.build();
  const fs::path out = output_path(c.output_dir);
  try {
    const ComparisonReport rep = run_experiment(c, out);
    std::cout << read_text(out / "report.md");
    std::cout << "wrote " << out.string() << "\n";
    if (check && !rep.all_checks_pass()) return kCheckFailed;
    return kOk;
  } catch (const StageError& e) {
    write_failure(out, e);
    return kFailure;
  }
}

int cmd_eval(const std::string& dir, bool check) {
  const fs::path run = output_path(dir);
  const auto results = reevaluate_run(run);
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& a : results) {
    auto robots = nlohmann::ordered_json::array();
    for (const auto& r : a.robots) robots.push_back(r ? to_json(*r) : nlohmann::ordered_json(nullptr));
    j[a.name] = {{"robots", std::move(robots)},
                 {"overall", a.overall ? to_json(*a.overall) : nlohmann::ordered_json(nullptr)}};
  }
  std::cout << j.dump(2) << "\n";
  if (!check) return kOk;
  // The recomputed reports must equal the stored ones exactly.
  const auto stored = nlohmann::ordered_json::parse(read_text(run / "report.json")).at("approaches");
  bool same = true;
  for (const auto& [name, a] : j.items()) {
    if (!stored.contains(name) || stored[name] != a) {
      std::cerr << "mismatch: " << name << "\n";
      same = false;
    }
  }
  return same ? kOk : kCheckFailed;
}

std::string csv_to_markdown(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::string row = "|";
    std::size_t cols = 0;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      row += " " + cell + " |";
      ++cols;
    }
    out += row + "\n";
    if (header) {
      out += "|";
      for (std::size_t i = 0; i < cols; ++i) out += "---|";
      out += "\n";
      header = false;
    }
  }
  return out;
}

int cmd_report(const std::string& input, const std::string& output) {
  const fs::path in = output_path(input);
  const std::string text = read_text(fs::is_directory(in) ? in / "report.json" : in);
  const std::string md = in.extension() == ".csv" ? csv_to_markdown(text)
                                                  : report_markdown(nlohmann::ordered_json::parse(text));
  if (output.empty()) {
    std::cout << md;
  } else {
    write_text(output_path(output), md);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"peer-assisted robotic learning experiments"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, run_flags;
  auto* gen = app.add_subcommand("gen", "generate the per-robot worlds and splits");
  gen_flags.attach(gen);

  bool check = false;
  auto* run = app.add_subcommand("run", "run the full comparison and write the report");
  run_flags.attach(run);
  run->add_flag("--check", check, "exit 2 when an acceptance check fails");

  std::string eval_dir;
  bool eval_check = false;
  auto* eval = app.add_subcommand("eval", "re-score the saved models of a run");
  eval->add_option("run_dir", eval_dir, "run directory")->required();
  eval->add_flag("--check", eval_check, "exit 2 unless the stored report is reproduced exactly");

  std::string report_in, report_out;
  auto* report = app.add_subcommand("report", "render report.json or report.csv as markdown");
  report->add_option("input", report_in, "run directory, report.json or report.csv")->required();
  report->add_option("-o,--output", report_out, "write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*gen) return cmd_gen(gen_flags);
    if (*run) return cmd_run(run_flags, check);
    if (*eval) return cmd_eval(eval_dir, eval_check);
    if (*report) return cmd_report(report_in, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
