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

#include <optional>
#include <string>

#include "json.hpp"

namespace knnvc {

using Json = nlohmann::json;

/// Parses feature-file metadata. Malformed or non-object metadata yields an
/// empty object; the field is free-form and never fatal.
inline Json
parse_metadata(const std::string& text) {
    auto parsed = Json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded() || !parsed.is_object()) {
        return Json::object();
    }
    return parsed;
}

inline std::optional<std::string>
metadata_string(const std::string& text, const char* key) {
    auto meta = parse_metadata(text);
    auto it = meta.find(key);
    if (it != meta.end() && it->is_string()) {
        return it->get<std::string>();
    }
    return std::nullopt;
}

}  // namespace knnvc
