// Copyright 2026 The capmil Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace capmil {

// Every failure raised by the library derives from Error. kind() is a stable
// machine-readable tag; the CLI prints it as the first token of its error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CAPMIL_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(tag, what) {}         \
  };

CAPMIL_DEFINE_ERROR(DimensionError, "dimension")
CAPMIL_DEFINE_ERROR(DegenerateBagError, "degenerate_bag")
CAPMIL_DEFINE_ERROR(NumericError, "numeric")
CAPMIL_DEFINE_ERROR(ContractError, "contract")
CAPMIL_DEFINE_ERROR(ConfigError, "config")
CAPMIL_DEFINE_ERROR(ParseError, "parse")
CAPMIL_DEFINE_ERROR(ValidationError, "validation")
CAPMIL_DEFINE_ERROR(UndefinedMetricError, "undefined_metric")
CAPMIL_DEFINE_ERROR(IoError, "io")

#undef CAPMIL_DEFINE_ERROR

}  // namespace capmil
