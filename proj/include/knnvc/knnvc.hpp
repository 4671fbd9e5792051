// Copyright 2026-present the knnvc project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "knnvc/eer.hpp"
#include "knnvc/error.hpp"
#include "knnvc/error_rate.hpp"
#include "knnvc/feature_file.hpp"
#include "knnvc/kernels.hpp"
#include "knnvc/knn.hpp"
#include "knnvc/matching_set.hpp"
#include "knnvc/prematch.hpp"
#include "knnvc/synthbench.hpp"

namespace knnvc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace knnvc
