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

#include "tissueseg/label_service.hpp"

#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include "httplib.h"
#include "tissueseg/error.hpp"
#include "tissueseg/log.hpp"
#include "tissueseg/manifest.hpp"

namespace tissueseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() ? p : base / p; }

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

LabelSessionConfig LabelSessionConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, path.string());
  const fs::path base = path.parent_path();
  LabelSessionConfig c;
  try {
    const json j = json::parse(in);
    c.session_id = j.at("session_id").get<std::string>();
    const json& tax = j.at("taxonomy");
    c.taxonomy = tax.is_array() ? TissueTaxonomy(tax.get<std::vector<std::string>>())
                                : tax.get<TissueTaxonomy>();
    c.log_path = resolve(base, j.value("log", c.session_id + ".events.jsonl"));
    c.allow_overwrite = j.value("allow_overwrite", false);
    if (j.contains("patches")) {
      for (const auto& p : j.at("patches")) {
        c.patches.push_back({p.at("patch_id").get<std::string>(),
                             resolve(base, p.at("path").get<std::string>())});
      }
    } else {
      const Manifest m = read_manifest(resolve(base, j.at("manifest").get<std::string>()));
      const std::string split = j.value("split", std::string{});
      for (const auto& r : m.records) {
        if (split.empty() || r.split == split) c.patches.push_back({r.patch_id, r.path});
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, path.string() + ": " + e.what());
  }
  if (c.session_id.empty()) throw Error(ErrorCode::kConfigError, "empty session_id");
  std::set<std::string> seen;
  for (const auto& p : c.patches) {
    if (!seen.insert(p.patch_id).second) {
      throw Error(ErrorCode::kDuplicateId, "patch " + p.patch_id + " listed twice");
    }
  }
  return c;
}

void to_json(json& j, const LabelEvent& e) {
  std::vector<int> presence(e.presence.begin(), e.presence.end());
  j = {{"annotator", e.annotator},       {"patch_id", e.patch_id},
       {"presence", presence},           {"elapsed_ms", e.elapsed_ms},
       {"timestamp_ms", e.timestamp_ms}, {"overwrite", e.overwrite}};
}

void from_json(const json& j, LabelEvent& e) {
  e.annotator = j.value("annotator", std::string{});
  e.patch_id = j.at("patch_id").get<std::string>();
  e.presence.clear();
  for (const auto& v : j.at("presence")) {
    const int x = v.get<int>();
    if (x != 0 && x != 1) throw Error(ErrorCode::kParseError, "presence entries must be 0 or 1");
    e.presence.push_back(static_cast<std::uint8_t>(x));
  }
  e.elapsed_ms = j.at("elapsed_ms").get<std::int64_t>();
  if (e.elapsed_ms < 0) throw Error(ErrorCode::kParseError, "elapsed_ms must be non-negative");
  e.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
  e.overwrite = j.value("overwrite", false);
}

void to_json(json& j, const SessionStats& s) {
  j = {{"events", s.events},
       {"labeled_patches", s.labeled_patches},
       {"total_ms", s.total_ms},
       {"mean_ms_per_patch", s.mean_ms_per_patch}};
}

SessionStats compute_stats(const std::vector<LabelEvent>& events,
                           const std::optional<std::string>& annotator) {
  SessionStats s;
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& e : events) {
    if (annotator && e.annotator != *annotator) continue;
    ++s.events;
    s.total_ms += e.elapsed_ms;
    pairs.insert({e.annotator, e.patch_id});
  }
  s.labeled_patches = static_cast<std::int64_t>(pairs.size());
  if (s.events > 0) s.mean_ms_per_patch = static_cast<double>(s.total_ms) / s.events;
  return s;
}

LabelTable latest_labels(const std::vector<LabelEvent>& events) {
  LabelTable t;
  for (const auto& e : events) t[e.annotator][e.patch_id] = e.presence;
  return t;
}

void to_json(json& j, const ConsensusResult& r) {
  j = {{"consensus", r.score}, {"annotators", r.annotators}, {"pairs", r.pairs}, {"cells", r.cells}};
  if (!r.warning.empty()) j["warning"] = r.warning;
}

ConsensusResult consensus(const LabelTable& table, const std::vector<std::string>& patches) {
  ConsensusResult r;
  r.annotators = static_cast<int>(table.size());
  if (r.annotators < 2) {
    r.warning = "degenerate input: fewer than two annotators";
    return r;
  }
  const std::set<std::string> wanted(patches.begin(), patches.end());
  double sum = 0.0;
  for (auto a = table.begin(); a != table.end(); ++a) {
    for (auto b = std::next(a); b != table.end(); ++b) {
      std::int64_t agree = 0;
      std::int64_t cells = 0;
      for (const auto& [patch, la] : a->second) {
        if (!wanted.empty() && !wanted.count(patch)) continue;
        auto it = b->second.find(patch);
        if (it == b->second.end()) continue;
        const auto& lb = it->second;
        const std::size_t n = std::min(la.size(), lb.size());
        for (std::size_t k = 0; k < n; ++k) agree += la[k] == lb[k] ? 1 : 0;
        cells += static_cast<std::int64_t>(n);
      }
      if (cells == 0) continue;
      sum += static_cast<double>(agree) / static_cast<double>(cells);
      r.cells += cells;
      ++r.pairs;
    }
  }
  if (r.pairs == 0) {
    r.warning = "degenerate input: no patch labeled by two annotators";
    return r;
  }
  r.score = sum / r.pairs;
  return r;
}

LabelSession::LabelSession(LabelSessionConfig config) : config_(std::move(config)) {
  std::ifstream in(config_.log_path);
  std::string line;
  int line_no = 0;
  while (in && std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      LabelEvent e = json::parse(line).get<LabelEvent>();
      ++labeled_[e.annotator][e.patch_id];
      events_.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw Error(ErrorCode::kParseError, config_.log_path.string() + " line " +
                                              std::to_string(line_no) + ": " + ex.what());
    }
  }
}

const SessionPatch* LabelSession::find_patch(const std::string& patch_id) const {
  for (const auto& p : config_.patches) {
    if (p.patch_id == patch_id) return &p;
  }
  return nullptr;
}

LabelSession::SubmitStatus LabelSession::submit(LabelEvent& event) {
  if (find_patch(event.patch_id) == nullptr) return SubmitStatus::kUnknownPatch;
  if (static_cast<int>(event.presence.size()) != config_.taxonomy.num_classes()) {
    return SubmitStatus::kArityMismatch;
  }
  std::unique_lock lock(mu_);
  auto& per_patch = labeled_[event.annotator];
  if (per_patch.count(event.patch_id) && !(event.overwrite || config_.allow_overwrite)) {
    return SubmitStatus::kDuplicate;
  }
  event.timestamp_ms = now_ms();
  std::ofstream out(config_.log_path, std::ios::app);
  out << json(event).dump() << "\n";
  out.flush();
  if (!out) throw Error(ErrorCode::kIoError, "cannot append to " + config_.log_path.string());
  ++per_patch[event.patch_id];
  events_.push_back(event);
  return SubmitStatus::kCreated;
}

const SessionPatch* LabelSession::next_for(const std::string& annotator) const {
  std::shared_lock lock(mu_);
  auto it = labeled_.find(annotator);
  for (const auto& p : config_.patches) {
    if (it == labeled_.end() || !it->second.count(p.patch_id)) return &p;
  }
  return nullptr;
}

std::vector<LabelEvent> LabelSession::events() const {
  std::shared_lock lock(mu_);
  return events_;
}

LabelService::LabelService(std::vector<LabelSessionConfig> sessions) {
  for (auto& c : sessions) {
    const std::string id = c.session_id;
    if (sessions_.count(id)) throw Error(ErrorCode::kDuplicateId, "session " + id + " twice");
    sessions_[id] = std::make_unique<LabelSession>(std::move(c));
  }
}

LabelService::~LabelService() = default;

LabelSession* LabelService::session(const std::string& id) {
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second.get();
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

void LabelService::register_routes(httplib::Server& server) {
  auto with_session = [this](const httplib::Request& req, httplib::Response& res) -> LabelSession* {
    LabelSession* s = session(req.path_params.at("id"));
    if (s == nullptr) send_error(res, 404, "unknown session " + req.path_params.at("id"));
    return s;
  };

  server.Get("/session/:id/next", [with_session](const httplib::Request& req,
                                                 httplib::Response& res) {
    LabelSession* s = with_session(req, res);
    if (s == nullptr) return;
    const std::string annotator = req.get_header_value(kAnnotatorHeader);
    if (annotator.empty()) return send_error(res, 400, std::string("missing ") + kAnnotatorHeader);
    const SessionPatch* p = s->next_for(annotator);
    json body = {{"session_id", s->config().session_id},
                 {"class_names", s->config().taxonomy.class_names()},
                 {"done", p == nullptr}};
    if (p != nullptr) {
      body["patch_id"] = p->patch_id;
      body["image_url"] = "/session/" + s->config().session_id + "/image/" + p->patch_id;
    }
    send_json(res, 200, body);
  });

  server.Get("/session/:id/image/:patch", [with_session](const httplib::Request& req,
                                                         httplib::Response& res) {
    LabelSession* s = with_session(req, res);
    if (s == nullptr) return;
    const SessionPatch* p = s->find_patch(req.path_params.at("patch"));
    if (p == nullptr) return send_error(res, 404, "unknown patch");
    std::ifstream in(p->path, std::ios::binary);
    if (!in) return send_error(res, 404, "image file missing");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    res.set_content(bytes, "image/png");
  });

  server.Post("/session/:id/label", [with_session](const httplib::Request& req,
                                                   httplib::Response& res) {
    LabelSession* s = with_session(req, res);
    if (s == nullptr) return;
    const std::string annotator = req.get_header_value(kAnnotatorHeader);
    if (annotator.empty()) return send_error(res, 400, std::string("missing ") + kAnnotatorHeader);
    LabelEvent event;
    try {
      event = json::parse(req.body).get<LabelEvent>();
    } catch (const std::exception& e) {
      return send_error(res, 400, std::string("malformed label: ") + e.what());
    }
    event.annotator = annotator;
    if (req.has_param("overwrite")) {
      const std::string v = req.get_param_value("overwrite");
      event.overwrite = event.overwrite || v == "1" || v == "true";
    }
    switch (s->submit(event)) {
      case LabelSession::SubmitStatus::kCreated:
        return send_json(res, 201, json(event));
      case LabelSession::SubmitStatus::kUnknownPatch:
        return send_error(res, 404, "unknown patch " + event.patch_id);
      case LabelSession::SubmitStatus::kArityMismatch:
        return send_error(res, 400, "presence has " + std::to_string(event.presence.size()) +
                                        " entries, taxonomy has " +
                                        std::to_string(s->config().taxonomy.num_classes()));
      case LabelSession::SubmitStatus::kDuplicate:
        return send_error(res, 409, "patch already labeled by " + annotator);
    }
  });

  server.Get("/session/:id/stats", [with_session](const httplib::Request& req,
                                                  httplib::Response& res) {
    LabelSession* s = with_session(req, res);
    if (s == nullptr) return;
    std::optional<std::string> annotator;
    if (req.has_param("annotator")) annotator = req.get_param_value("annotator");
    send_json(res, 200, json(compute_stats(s->events(), annotator)));
  });

  server.Get("/consensus", [this](const httplib::Request& req, httplib::Response& res) {
    std::vector<LabelEvent> events;
    if (req.has_param("session")) {
      LabelSession* s = session(req.get_param_value("session"));
      if (s == nullptr) return send_error(res, 404, "unknown session");
      events = s->events();
    } else {
      for (const auto& [id, s] : sessions_) {
        auto e = s->events();
        events.insert(events.end(), e.begin(), e.end());
      }
    }
    std::vector<std::string> patches;
    if (req.has_param("patches")) patches = split_csv(req.get_param_value("patches"));
    const ConsensusResult r = consensus(latest_labels(events), patches);
    if (!r.warning.empty()) log_warning("consensus: " + r.warning);
    send_json(res, 200, json(r));
  });
}

bool LabelService::listen(const std::string& host, int port) {
  httplib::Server server;
  register_routes(server);
  return server.listen(host, port);
}

}  // namespace tissueseg
