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

#include <optional>
#include <string>
#include <vector>

#include "capmil/autodiff.hpp"

namespace capmil {

// One (query, target bag, label) verification unit. key_mask marks the bag
// instances sharing the query's latent class when that is known.
struct Exemplar {
  std::string id;
  Matrix query;   // 1xC
  Matrix target;  // NxC
  int label = 0;
  std::optional<std::vector<bool>> key_mask;

  int channels() const { return static_cast<int>(query.cols()); }
  int bag_size() const { return static_cast<int>(target.rows()); }
};

// Throws ValidationError (citing the id) when an invariant is broken: N >= 1,
// consistent widths, finite features, label in {0,1} and, with a key mask,
// label == 1 exactly when some instance is a key.
void validate(const Exemplar& e);

}  // namespace capmil
