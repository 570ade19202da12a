#pragma once

// Annotation service: an append-only JSONL record log per session and the
// HTTP API the browser annotator talks to.
//
// Data root layout:
//   <root>/sessions/<dir>/manifest.json (+ the streams it references)
//   <root>/annotations/<session_id>.jsonl

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vrfear/align.hpp"
#include "vrfear/core.hpp"
#include "vrfear/error.hpp"
#include "vrfear/ingest.hpp"
#include "vrfear/labels.hpp"
#include "vrfear/pipeline.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose `_res` macro breaks Eigen headers.
#include <httplib.h>

namespace vrfear {

struct AnnotationRecord {
  std::string record_id;
  std::string annotator_id;
  std::string session_id;
  AnnotationSpan span;
  std::string created_at;
  std::optional<std::string> superseded_by;

  bool live() const { return !superseded_by.has_value(); }
};

// State reconstructed from a log. Immutable once published.
struct LogSnapshot {
  std::vector<AnnotationRecord> records;  // log order
  std::vector<std::string> participants;  // annotators with records or done marks, first-appearance order
  std::set<std::string> done;

  std::vector<AnnotationSpan> live_spans() const {
    std::vector<AnnotationSpan> out;
    for (const auto& r : records)
      if (r.live()) out.push_back(r.span);
    return out;
  }
};

namespace detail {

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void note_participant(LogSnapshot& s, const std::string& who) {
  if (std::find(s.participants.begin(), s.participants.end(), who) == s.participants.end()) {
    s.participants.push_back(who);
  }
}

inline void apply_event(LogSnapshot& s, const nlohmann::json& e, std::int64_t line) {
  const std::string type = e.at("type").get<std::string>();
  if (type == "record") {
    AnnotationRecord r;
    r.record_id = e.at("record_id").get<std::string>();
    r.annotator_id = e.at("annotator_id").get<std::string>();
    r.session_id = e.value("session_id", std::string());
    r.span = {r.annotator_id, e.at("start").get<Millis>(), e.at("end").get<Millis>(), e.at("level").get<int>()};
    r.created_at = e.value("created_at", std::string());
    for (const auto& old : e.value("supersedes", std::vector<std::string>())) {
      for (auto& prev : s.records)
        if (prev.record_id == old) prev.superseded_by = r.record_id;
    }
    note_participant(s, r.annotator_id);
    s.records.push_back(std::move(r));
  } else if (type == "done") {
    const auto who = e.at("annotator_id").get<std::string>();
    s.done.insert(who);
    note_participant(s, who);
  } else {
    throw ParseError("annotation-service", line, "unknown event type '" + type + "'");
  }
}

}  // namespace detail

inline LogSnapshot replay_log(std::istream& in) {
  LogSnapshot s;
  std::string line;
  std::int64_t line_no = 0;
  while (text::next_line(in, line, line_no)) {
    if (text::trim(line).empty()) continue;
    try {
      detail::apply_event(s, nlohmann::json::parse(line), line_no);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("annotation-service", line_no, e.what());
    }
  }
  return s;
}

// True when the first non-blank line of a JSONL file is a store event rather
// than a plain span.
inline bool looks_like_store_log(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      return j.is_object() && j.contains("type");
    } catch (const nlohmann::json::exception&) {
      return false;
    }
  }
  return false;
}

struct FusedResult {
  bool sufficient = false;
  FrameLabels labels;
};

inline FusedResult fuse_snapshot(const LogSnapshot& s, const FrameClock& clock) {
  FusedResult r;
  r.sufficient = s.participants.size() >= 2;
  r.labels = fuse_frames(s.live_spans(), clock, s.participants);
  return r;
}

// One session's log. Writes go through a single mutex-guarded writer; readers
// take the current snapshot pointer and never block on writers.
class AnnotationLog {
 public:
  AnnotationLog(std::filesystem::path file, std::string session_id)
      : file_(std::move(file)), session_id_(std::move(session_id)) {
    auto snap = std::make_shared<LogSnapshot>();
    if (std::filesystem::exists(file_)) {
      std::ifstream in(file_, std::ios::binary);
      *snap = replay_log(in);
    }
    next_id_ = snap->records.size() + 1;
    std::atomic_store(&snapshot_, std::shared_ptr<const LogSnapshot>(std::move(snap)));
  }

  ~AnnotationLog() {
    if (fd_ >= 0) ::close(fd_);
  }
  AnnotationLog(const AnnotationLog&) = delete;
  AnnotationLog& operator=(const AnnotationLog&) = delete;

  std::shared_ptr<const LogSnapshot> snapshot() const { return std::atomic_load(&snapshot_); }

  struct Posted {
    AnnotationRecord record;
    std::vector<std::string> superseded;
  };

  // Records a span. Live records of the same annotator that overlap it are
  // superseded. The event is on disk before this returns.
  Posted post(const AnnotationSpan& span) {
    if (const auto problem = span_problem(span)) {
      throw Error("annotation-service", "invalid_span", *problem);
    }
    std::lock_guard lock(write_mutex_);
    const auto current = snapshot();
    Posted p;
    p.record.record_id = "r" + std::to_string(next_id_);
    p.record.annotator_id = span.annotator_id;
    p.record.session_id = session_id_;
    p.record.span = span;
    p.record.created_at = detail::utc_now();
    for (const auto& r : current->records) {
      if (r.live() && r.annotator_id == span.annotator_id && spans_overlap(r.span, span)) {
        p.superseded.push_back(r.record_id);
      }
    }
    const nlohmann::json event{{"type", "record"},
                               {"record_id", p.record.record_id},
                               {"session_id", session_id_},
                               {"annotator_id", span.annotator_id},
                               {"start", span.start},
                               {"end", span.end},
                               {"level", span.level},
                               {"created_at", p.record.created_at},
                               {"supersedes", p.superseded}};
    append(event);
    ++next_id_;
    publish(*current, event);
    return p;
  }

  void mark_done(const std::string& annotator_id) {
    if (annotator_id.empty()) throw Error("annotation-service", "invalid_span", "annotator_id is empty");
    std::lock_guard lock(write_mutex_);
    const auto current = snapshot();
    const nlohmann::json event{{"type", "done"}, {"annotator_id", annotator_id}, {"created_at", detail::utc_now()}};
    append(event);
    publish(*current, event);
  }

  const std::filesystem::path& file() const { return file_; }

 private:
  void append(const nlohmann::json& event) {
    if (fd_ < 0) {
      std::filesystem::create_directories(file_.parent_path());
      fd_ = ::open(file_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
      if (fd_ < 0) throw Error("annotation-service", "io_error", "cannot open " + file_.string());
    }
    const std::string line = event.dump() + "\n";
    std::size_t written = 0;
    while (written < line.size()) {
      const auto n = ::write(fd_, line.data() + written, line.size() - written);
      if (n < 0) throw Error("annotation-service", "io_error", "write failed for " + file_.string());
      written += static_cast<std::size_t>(n);
    }
    if (::fsync(fd_) != 0) throw Error("annotation-service", "io_error", "fsync failed for " + file_.string());
  }

  void publish(const LogSnapshot& base, const nlohmann::json& event) {
    auto next = std::make_shared<LogSnapshot>(base);
    detail::apply_event(*next, event, 0);
    std::atomic_store(&snapshot_, std::shared_ptr<const LogSnapshot>(std::move(next)));
  }

  std::filesystem::path file_;
  std::string session_id_;
  std::mutex write_mutex_;
  std::shared_ptr<const LogSnapshot> snapshot_;
  std::size_t next_id_ = 1;
  int fd_ = -1;
};

// Sessions under a data root, their cached streams and their logs.
class SessionRepository {
 public:
  explicit SessionRepository(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }

  // Manifests found under <root>/sessions, ordered by session id.
  std::vector<std::pair<SessionManifest, std::filesystem::path>> list() const {
    std::vector<std::pair<SessionManifest, std::filesystem::path>> out;
    const auto dir = root_ / "sessions";
    if (!std::filesystem::is_directory(dir)) return out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      const auto m = entry.path() / "manifest.json";
      if (entry.is_directory() && std::filesystem::exists(m)) out.emplace_back(read_manifest(m), m);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first.session_id < b.first.session_id; });
    return out;
  }

  std::pair<SessionManifest, std::filesystem::path> find(const std::string& id) const {
    for (auto& s : list())
      if (s.first.session_id == id) return s;
    throw Error("annotation-service", "not_found", "unknown session '" + id + "'");
  }

  std::shared_ptr<const LoadedSession> session(const std::string& id) {
    const auto [manifest, path] = find(id);
    std::lock_guard lock(mutex_);
    auto& slot = sessions_[id];
    if (!slot) slot = std::make_shared<const LoadedSession>(load_session(path));
    return slot;
  }

  AnnotationLog& log(const std::string& id) {
    find(id);
    std::lock_guard lock(mutex_);
    auto& slot = logs_[id];
    if (!slot) slot = std::make_unique<AnnotationLog>(root_ / "annotations" / (id + ".jsonl"), id);
    return *slot;
  }

 private:
  std::filesystem::path root_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const LoadedSession>> sessions_;
  std::map<std::string, std::unique_ptr<AnnotationLog>> logs_;
};

// ---------------------------------------------------------------------------
// JSON views

inline nlohmann::json session_summary(const SessionManifest& m) {
  return {{"session_id", m.session_id},
          {"game_id", m.game_id},
          {"start_ms", m.clock.start_ms()},
          {"frame_rate", m.clock.frame_rate()},
          {"frame_count", m.clock.frame_count()},
          {"duration_seconds", m.clock.duration_seconds()}};
}

// Per-frame heart rate, breath rate and audio RMS on the manifest clock,
// max-pooled over buckets of `bucket` frames.
inline nlohmann::json timeline(const LoadedSession& s, std::int64_t bucket) {
  if (bucket < 1) throw Error("annotation-service", "invalid_argument", "bucket must be positive");
  const FrameClock& clock = s.manifest.clock;
  const auto frames = clock.frame_count();
  const PhysioTrack physio = resample_physio(s.streams.physio, clock);
  const auto& audio = s.streams.audio;
  std::vector<double> rms(static_cast<std::size_t>(frames), 0.0);
  for (std::int64_t f = 0; f < frames; ++f) {
    const auto sample_at = [&](double ms) {
      const double pos = (ms - static_cast<double>(s.manifest.audio_start_ms)) * audio.sample_rate / 1000.0;
      return static_cast<std::size_t>(std::clamp(std::llround(pos), 0LL, static_cast<long long>(audio.samples.size())));
    };
    const std::size_t a = sample_at(clock.exact_time(f));
    const std::size_t b = sample_at(clock.exact_time(f + 1));
    double sum = 0.0;
    for (std::size_t i = a; i < b; ++i) sum += audio.samples[i] * audio.samples[i];
    rms[static_cast<std::size_t>(f)] = b > a ? std::sqrt(sum / static_cast<double>(b - a)) : 0.0;
  }
  nlohmann::json points = nlohmann::json::array();
  for (std::int64_t f = 0; f < frames; f += bucket) {
    const std::int64_t end = std::min(frames, f + bucket);
    double hr = -INFINITY, br = -INFINITY, ar = -INFINITY;
    for (std::int64_t i = f; i < end; ++i) {
      const auto u = static_cast<std::size_t>(i);
      hr = std::max(hr, physio.heart_rate[u]);
      br = std::max(br, physio.breath_rate[u]);
      ar = std::max(ar, rms[u]);
    }
    points.push_back({{"frame", f}, {"time_ms", clock.time_of(f)}, {"heart_rate", hr}, {"breath_rate", br}, {"audio_rms", ar}});
  }
  return {{"session_id", s.manifest.session_id},
          {"bucket", bucket},
          {"frame_rate", clock.frame_rate()},
          {"start_ms", clock.start_ms()},
          {"points", points}};
}

// Gap-filled poses for frames [from, to) of the manifest clock.
inline nlohmann::json skeleton_frames(const LoadedSession& s, std::int64_t from, std::int64_t to) {
  const FrameClock& clock = s.manifest.clock;
  from = std::clamp<std::int64_t>(from, 0, clock.frame_count());
  to = std::clamp<std::int64_t>(to, from, clock.frame_count());
  const auto filled = interpolate_keypoints(s.streams.keypoints);
  nlohmann::json frames = nlohmann::json::array();
  for (std::int64_t f = from; f < to; ++f) {
    const auto& kf = filled[nearest_frame(filled, clock.exact_time(f))];
    nlohmann::json joints = nlohmann::json::array();
    for (const auto& j : kf.joints) joints.push_back({j->x, j->y, j->z});
    frames.push_back({{"frame", f}, {"time_ms", clock.time_of(f)}, {"joints", joints}});
  }
  nlohmann::json bones = nlohmann::json::array();
  for (const auto& [a, b] : kBones) bones.push_back({a, b});
  return {{"session_id", s.manifest.session_id},
          {"from", from},
          {"to", to},
          {"joint_names", kJointNames},
          {"bones", bones},
          {"frames", frames}};
}

inline nlohmann::json record_json(const AnnotationRecord& r) {
  return {{"record_id", r.record_id},
          {"annotator_id", r.annotator_id},
          {"session_id", r.session_id},
          {"start", r.span.start},
          {"end", r.span.end},
          {"level", r.span.level},
          {"created_at", r.created_at},
          {"superseded_by", r.superseded_by ? nlohmann::json(*r.superseded_by) : nlohmann::json()}};
}

inline nlohmann::json fused_json(const std::string& session_id, const FusedResult& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& f : r.labels.frames) per.push_back(f.levels);
  return {{"session_id", session_id},
          {"sufficient", r.sufficient},
          {"annotators", r.labels.annotators},
          {"annotator_levels", per},
          {"fused", r.labels.fused}};
}

// ---------------------------------------------------------------------------
// HTTP

class AnnotationServer {
 public:
  explicit AnnotationServer(SessionRepository& repo, std::optional<std::filesystem::path> ui_dir = std::nullopt)
      : repo_(repo) {
    routes();
    if (ui_dir) server_.set_mount_point("/", ui_dir->string());
  }

  int bind_any_port(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool run() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  static int status_for(const std::string& code) {
    if (code == "not_found") return 404;
    if (code == "insufficient_annotators") return 409;
    if (code == "io_error") return 500;
    return 400;
  }

  static void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, const std::string& code, const std::string& message) {
    send_json(res, {{"code", code}, {"message", message}}, status_for(code));
  }

  template <class F>
  auto guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, "invalid_json", e.what());
      } catch (const std::exception& e) {
        send_error(res, "internal", e.what());
      }
    };
  }

  static std::int64_t int_param(const httplib::Request& req, const char* name, std::int64_t fallback) {
    if (!req.has_param(name)) return fallback;
    const auto v = text::parse_int(req.get_param_value(name));
    if (!v) throw Error("annotation-service", "invalid_argument", std::string("query parameter '") + name + "' must be an integer");
    return *v;
  }

  void routes() {
    server_.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json out = nlohmann::json::array();
      for (const auto& [m, path] : repo_.list()) out.push_back(session_summary(m));
      send_json(res, out);
    }));
    server_.Get(R"(/sessions/([^/]+)/manifest)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, nlohmann::json(repo_.find(req.matches[1]).first));
    }));
    server_.Get(R"(/sessions/([^/]+)/timeline)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto s = repo_.session(req.matches[1]);
      send_json(res, timeline(*s, int_param(req, "bucket", 1)));
    }));
    server_.Get(R"(/sessions/([^/]+)/skeleton)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto s = repo_.session(req.matches[1]);
      const auto from = int_param(req, "from", 0);
      const auto to = int_param(req, "to", std::min<std::int64_t>(s->manifest.clock.frame_count(), from + 300));
      if (to - from > 5000) throw Error("annotation-service", "invalid_argument", "at most 5000 frames per request");
      send_json(res, skeleton_frames(*s, from, to));
    }));
    server_.Get(R"(/sessions/([^/]+)/audio)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto [m, path] = repo_.find(req.matches[1]);
      // httplib answers Range requests with 206 from the full body.
      res.set_content(read_text_file(path.parent_path() / m.audio_path, "annotation-service"), "audio/wav");
    }));
    server_.Get(R"(/sessions/([^/]+)/annotations)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto snap = repo_.log(req.matches[1]).snapshot();
      nlohmann::json records = nlohmann::json::array();
      for (const auto& r : snap->records) records.push_back(record_json(r));
      send_json(res, {{"session_id", std::string(req.matches[1])},
                      {"records", records},
                      {"done", std::vector<std::string>(snap->done.begin(), snap->done.end())}});
    }));
    server_.Post(R"(/sessions/([^/]+)/annotations)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      auto& log = repo_.log(id);
      const auto body = nlohmann::json::parse(req.body.empty() ? "{}" : req.body);
      std::string who = req.get_header_value("X-Annotator-Id");
      if (who.empty()) who = body.value("annotator_id", std::string());
      if (who.empty()) throw Error("annotation-service", "missing_annotator", "X-Annotator-Id header or annotator_id required");
      if (body.value("done", false)) {
        log.mark_done(who);
        send_json(res, {{"annotator_id", who}, {"done", true}}, 201);
        return;
      }
      if (!body.contains("start") || !body.contains("end") || !body.contains("level")) {
        throw Error("annotation-service", "invalid_span", "start, end and level are required");
      }
      const AnnotationSpan span{who, body.at("start").get<Millis>(), body.at("end").get<Millis>(), body.at("level").get<int>()};
      const auto posted = log.post(span);
      send_json(res, {{"record_id", posted.record.record_id}, {"superseded", posted.superseded}}, 201);
    }));
    server_.Get(R"(/sessions/([^/]+)/fused)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      const auto manifest = repo_.find(id).first;
      const auto result = fuse_snapshot(*repo_.log(id).snapshot(), manifest.clock);
      auto body = fused_json(id, result);
      if (!result.sufficient) {
        body["code"] = "insufficient_annotators";
        body["message"] = "fusion needs at least 2 annotators with records or done marks";
        send_json(res, body, 409);
        return;
      }
      send_json(res, body);
    }));
  }

  SessionRepository& repo_;
  httplib::Server server_;
};

}  // namespace vrfear
