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

#include <stdexcept>
#include <string>
#include <string_view>

namespace knnvc {

enum class ErrorKind {
    kIo,
    kFormat,
    kTruncation,
    kValidation,
    kConfig,
    kEmptySet,
    kDegenerateFrame,
    kInsufficientData,
};

constexpr std::string_view
to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::kIo:
            return "io";
        case ErrorKind::kFormat:
            return "format";
        case ErrorKind::kTruncation:
            return "truncation";
        case ErrorKind::kValidation:
            return "validation";
        case ErrorKind::kConfig:
            return "config";
        case ErrorKind::kEmptySet:
            return "empty-set";
        case ErrorKind::kDegenerateFrame:
            return "degenerate-frame";
        case ErrorKind::kInsufficientData:
            return "insufficient-data";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {
    }

    ErrorKind
    kind() const noexcept {
        return kind_;
    }

private:
    ErrorKind kind_;
};

}  // namespace knnvc
