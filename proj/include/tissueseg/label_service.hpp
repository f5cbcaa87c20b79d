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

// Patch-labeling sessions: an append-only event log per session, timing
// statistics, inter-annotator consensus and the HTTP service exposing them.

#ifndef TISSUESEG_LABEL_SERVICE_HPP_
#define TISSUESEG_LABEL_SERVICE_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "tissueseg/types.hpp"

namespace httplib {
class Server;
}

namespace tissueseg {

inline constexpr const char* kAnnotatorHeader = "X-Annotator";

struct SessionPatch {
  std::string patch_id;
  std::filesystem::path path;  // PNG served to annotators
};

/// Session config file:
///   {"session_id": "s1", "taxonomy": ["TE", "NEC", "LYM", "TAS"],
///    "patches": [{"patch_id": "p1", "path": "img/p1.png"}, ...],
///    "log": "s1.events.jsonl", "allow_overwrite": false}
/// "taxonomy" may also be a taxonomy object ({"classes": [...]}). Relative
/// paths resolve against the config file's directory. Instead of
/// "patches", "manifest" (a manifest.jsonl path) plus an optional "split"
/// may be given.
struct LabelSessionConfig {
  std::string session_id;
  TissueTaxonomy taxonomy;
  std::vector<SessionPatch> patches;
  std::filesystem::path log_path;
  bool allow_overwrite = false;

  static LabelSessionConfig load(const std::filesystem::path& path);
};

struct LabelEvent {
  std::string annotator;
  std::string patch_id;
  std::vector<std::uint8_t> presence;
  std::int64_t elapsed_ms = 0;
  std::int64_t timestamp_ms = 0;  // wall clock, milliseconds since epoch
  bool overwrite = false;
};

void to_json(nlohmann::json& j, const LabelEvent& e);
void from_json(const nlohmann::json& j, LabelEvent& e);

struct SessionStats {
  std::int64_t events = 0;
  std::int64_t labeled_patches = 0;  // distinct (annotator, patch) pairs
  std::int64_t total_ms = 0;
  double mean_ms_per_patch = 0.0;  // total_ms / events, 0 when empty
};

void to_json(nlohmann::json& j, const SessionStats& s);

/// Pure function of an event sequence.
SessionStats compute_stats(const std::vector<LabelEvent>& events,
                           const std::optional<std::string>& annotator = std::nullopt);

/// Latest presence vector per annotator and patch.
using LabelTable = std::map<std::string, std::map<std::string, std::vector<std::uint8_t>>>;
LabelTable latest_labels(const std::vector<LabelEvent>& events);

struct ConsensusResult {
  double score = 1.0;
  int annotators = 0;
  int pairs = 0;
  std::int64_t cells = 0;  // class labels compared over all pairs
  std::string warning;
};

void to_json(nlohmann::json& j, const ConsensusResult& r);

/// Mean over annotator pairs of the fraction of agreeing class labels on
/// the patches both labeled (restricted to `patches` when non-empty). With
/// two annotators this is agreeing labels / total labels. Fewer than two
/// annotators yields 1.0 with a warning.
ConsensusResult consensus(const LabelTable& table, const std::vector<std::string>& patches = {});

/// One session's event log. Appends are serialized by a writer lock and
/// flushed before returning; readers copy a snapshot.
class LabelSession {
 public:
  explicit LabelSession(LabelSessionConfig config);

  const LabelSessionConfig& config() const { return config_; }
  const SessionPatch* find_patch(const std::string& patch_id) const;

  enum class SubmitStatus { kCreated, kUnknownPatch, kArityMismatch, kDuplicate };
  /// Validates and appends one event. Timestamp is filled in here.
  SubmitStatus submit(LabelEvent& event);

  /// First patch in session order not yet labeled by the annotator.
  const SessionPatch* next_for(const std::string& annotator) const;

  std::vector<LabelEvent> events() const;

 private:
  LabelSessionConfig config_;
  mutable std::shared_mutex mu_;
  std::vector<LabelEvent> events_;
  std::map<std::string, std::map<std::string, int>> labeled_;  // annotator -> patch -> count
};

class LabelService {
 public:
  explicit LabelService(std::vector<LabelSessionConfig> sessions);
  ~LabelService();

  LabelSession* session(const std::string& id);

  /// Installs all routes on a server owned by the caller.
  void register_routes(httplib::Server& server);

  /// Blocking; returns false when binding fails.
  bool listen(const std::string& host, int port);

 private:
  std::map<std::string, std::unique_ptr<LabelSession>> sessions_;
};

}  // namespace tissueseg

#endif  // TISSUESEG_LABEL_SERVICE_HPP_
