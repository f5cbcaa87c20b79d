// Copyright 2026 The tissueseg Authors.
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

// Minimal warning channel. Defaults to stderr; tests swap in a collector.

#ifndef TISSUESEG_LOG_HPP_
#define TISSUESEG_LOG_HPP_

#include <functional>
#include <string>

namespace tissueseg {

using WarningSink = std::function<void(const std::string&)>;

void log_warning(const std::string& message);

/// Installs a sink and returns the previous one. An empty sink restores
/// the stderr default.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace tissueseg

#endif  // TISSUESEG_LOG_HPP_
