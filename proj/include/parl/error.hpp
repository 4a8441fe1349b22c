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

#include <stdexcept>
#include <string>
#include <utility>

namespace parl {

// Base for every error raised by the library. Each subclass names the stage
// that failed so the harness can produce a structured failure report.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class RenderError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Raised by the experiment runner; names the stage and node that failed.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string node, const std::string& message)
      : Error(stage + " failed on " + node + ": " + message), stage_(std::move(stage)), node_(std::move(node)) {}
  const std::string& stage() const { return stage_; }
  const std::string& node() const { return node_; }

 private:
  std::string stage_;
  std::string node_;
};

}  // namespace parl
