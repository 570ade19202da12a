#include <catch_amalgamated.hpp>

#include <thread>

#include "tempdir.hpp"
#include "vrfear/synth.hpp"
#include "vrfear/service.hpp"

using namespace vrfear;

namespace {

// Data root with sessions/<id>/ populated from the generator.
void add_session(const TempDir& root, const std::string& id, SynthOptions opt = {}) {
  opt.session_id = id;
  opt.seconds = 4;
  write_synth_session(generate_session(opt), root.path() / "sessions" / id);
}

class RunningServer {
 public:
  explicit RunningServer(SessionRepository& repo) : server_(repo) {
    port_ = server_.bind_any_port();
    thread_ = std::thread([this] { server_.run(); });
    server_.wait_until_ready();
  }
  ~RunningServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

 private:
  AnnotationServer server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("posting, superseding and replay", "[service]") {
  TempDir dir("log");
  const auto file = dir / "s.jsonl";
  {
    AnnotationLog log(file, "s");
    const auto first = log.post({"a1", 0, 1000, 2});
    CHECK(first.record.record_id == "r1");
    CHECK(first.superseded.empty());
    log.post({"a2", 500, 1500, 3});
    const auto rerate = log.post({"a1", 800, 1200, 4});
    CHECK(rerate.superseded == std::vector<std::string>{"r1"});
    const auto snap = log.snapshot();
    REQUIRE(snap->records.size() == 3);
    CHECK_FALSE(snap->records[0].live());
    CHECK(snap->records[0].superseded_by == "r3");
    CHECK(snap->live_spans().size() == 2);
    CHECK(snap->participants == std::vector<std::string>{"a1", "a2"});

    try {
      log.post({"a1", 0, 100, 0});
      FAIL("level 0 must be rejected");
    } catch (const Error& e) {
      CHECK(e.code() == "invalid_span");
    }
    CHECK_THROWS_AS(log.post({"a1", 100, 100, 2}), Error);
    log.mark_done("a3");
  }
  // A fresh log over the same file sees the same state.
  AnnotationLog reopened(file, "s");
  const auto snap = reopened.snapshot();
  CHECK(snap->records.size() == 3);
  CHECK(snap->records[0].superseded_by == "r3");
  CHECK(snap->done.count("a3") == 1);
  CHECK(snap->participants.size() == 3);
  CHECK(reopened.post({"a2", 2000, 2500, 1}).record.record_id == "r4");

  std::ifstream in(file);
  const auto replayed = replay_log(in);
  CHECK(replayed.records.size() == 4);
  CHECK(looks_like_store_log(slurp(file)));
  CHECK_FALSE(looks_like_store_log(R"({"annotator_id":"a1","start":0,"end":10,"level":1})"));
}

TEST_CASE("fusion over a snapshot", "[service]") {
  const FrameClock clock(0, 10.0, 10);
  LogSnapshot empty;
  const auto none = fuse_snapshot(empty, clock);
  CHECK_FALSE(none.sufficient);
  CHECK(none.labels.fused == std::vector<int>(10, 0));

  TempDir dir("fuse");
  AnnotationLog log(dir / "f.jsonl", "f");
  log.post({"a1", 200, 600, 3});
  CHECK_FALSE(fuse_snapshot(*log.snapshot(), clock).sufficient);
  log.post({"a2", 200, 600, 3});
  const auto agreed = fuse_snapshot(*log.snapshot(), clock);
  CHECK(agreed.sufficient);
  CHECK(agreed.labels.fused == std::vector<int>{0, 0, 3, 3, 3, 3, 0, 0, 0, 0});
}

TEST_CASE("concurrent posts all land", "[service]") {
  TempDir dir("concurrent");
  AnnotationLog log(dir / "c.jsonl", "c");
  std::vector<std::thread> writers;
  for (int w = 0; w < 4; ++w) {
    writers.emplace_back([&log, w] {
      for (int i = 0; i < 25; ++i) log.post({"a" + std::to_string(w), i * 100, i * 100 + 50, 1 + i % 5});
    });
  }
  for (auto& t : writers) t.join();
  CHECK(log.snapshot()->records.size() == 100);
  AnnotationLog reopened(dir / "c.jsonl", "c");
  CHECK(reopened.snapshot()->records.size() == 100);
  std::set<std::string> ids;
  for (const auto& r : reopened.snapshot()->records) ids.insert(r.record_id);
  CHECK(ids.size() == 100);
}

TEST_CASE("timeline views", "[service]") {
  TempDir root("timeline");
  add_session(root, "s1");
  SessionRepository repo(root.path());
  const auto s = repo.session("s1");
  const auto full = timeline(*s, 1);
  const auto physio = resample_physio(s->streams.physio, s->manifest.clock);
  REQUIRE(full["points"].size() == 120);
  for (std::size_t f = 0; f < 120; ++f) CHECK(full["points"][f]["heart_rate"] == physio.heart_rate[f]);

  const auto pooled = timeline(*s, 7);
  CHECK(pooled["points"].size() == 18);
  CHECK(pooled["points"][1]["frame"] == 7);

  LoadedSession flat = *s;
  for (auto& p : flat.streams.physio) p.heart_rate = 72.0;
  for (const auto& p : timeline(flat, 5)["points"]) CHECK(p["heart_rate"] == 72.0);
  CHECK_THROWS_AS(timeline(*s, 0), Error);
}

TEST_CASE("repository lookup", "[service]") {
  TempDir root("repo");
  SessionRepository repo(root.path());
  CHECK(repo.list().empty());
  add_session(root, "b");
  add_session(root, "a");
  const auto listed = repo.list();
  REQUIRE(listed.size() == 2);
  CHECK(listed[0].first.session_id == "a");
  try {
    repo.find("zzz");
    FAIL("expected not_found");
  } catch (const Error& e) {
    CHECK(e.code() == "not_found");
  }
}

TEST_CASE("HTTP API", "[service]") {
  TempDir root("http");
  add_session(root, "s1");
  add_session(root, "s2");
  SessionRepository repo(root.path());
  RunningServer server(repo);
  auto cli = server.client();

  auto res = cli.Get("/sessions");
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto sessions = nlohmann::json::parse(res->body);
  REQUIRE(sessions.size() == 2);
  CHECK(sessions[0]["session_id"] == "s1");
  CHECK(sessions[0]["frame_count"] == 120);

  res = cli.Get("/sessions/s1/manifest");
  REQUIRE(res);
  CHECK(nlohmann::json::parse(res->body)["session_id"] == "s1");

  res = cli.Get("/sessions/nope/timeline");
  REQUIRE(res);
  CHECK(res->status == 404);
  CHECK(nlohmann::json::parse(res->body)["code"] == "not_found");

  res = cli.Get("/sessions/s1/timeline?bucket=10");
  REQUIRE(res);
  CHECK(nlohmann::json::parse(res->body)["points"].size() == 12);

  res = cli.Get("/sessions/s1/skeleton?from=5&to=8");
  REQUIRE(res);
  const auto skel = nlohmann::json::parse(res->body);
  REQUIRE(skel["frames"].size() == 3);
  CHECK(skel["frames"][0]["joints"].size() == 25);
  res = cli.Get("/sessions/s1/skeleton?from=0&to=9000");
  REQUIRE(res);
  CHECK(res->status == 400);

  res = cli.Get("/sessions/s1/audio", {{"Range", "bytes=0-43"}});
  REQUIRE(res);
  CHECK(res->status == 206);
  CHECK(res->body.size() == 44);
  CHECK(res->body.substr(0, 4) == "RIFF");

  // Fused labels need two annotators.
  res = cli.Get("/sessions/s1/fused");
  REQUIRE(res);
  CHECK(res->status == 409);
  CHECK(nlohmann::json::parse(res->body)["code"] == "insufficient_annotators");

  res = cli.Post("/sessions/s1/annotations", {{"X-Annotator-Id", "a1"}}, R"({"start":0,"end":100,"level":0})",
                 "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);

  // Replay the generator's spans through the API; the fused result must match
  // the offline fusion of the same spans.
  SynthOptions opt;
  opt.session_id = "s1";
  opt.seconds = 4;
  const auto synth = generate_session(opt);
  for (const auto& span : synth.annotations) {
    res = cli.Post("/sessions/s1/annotations", {{"X-Annotator-Id", span.annotator_id}},
                   nlohmann::json{{"start", span.start}, {"end", span.end}, {"level", span.level}}.dump(),
                   "application/json");
    REQUIRE(res);
    CHECK(res->status == 201);
  }
  res = cli.Get("/sessions/s1/fused");
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto fused = nlohmann::json::parse(res->body);
  CHECK(fused["fused"].get<std::vector<int>>() == session_labels(synth.annotations, synth.manifest.clock).fused);

  res = cli.Get("/sessions/s1/annotations");
  REQUIRE(res);
  CHECK(nlohmann::json::parse(res->body)["records"].size() == synth.annotations.size());

  // Re-rating supersedes.
  res = cli.Post("/sessions/s1/annotations", R"({"annotator_id":"a1","start":0,"end":4000,"level":5})",
                 "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  CHECK_FALSE(nlohmann::json::parse(res->body)["superseded"].empty());

  // A done mark counts as participation without spans.
  res = cli.Post("/sessions/s2/annotations", {{"X-Annotator-Id", "a1"}}, R"({"done":true})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  res = cli.Post("/sessions/s2/annotations", {{"X-Annotator-Id", "a2"}}, R"({"done":true})", "application/json");
  REQUIRE(res);
  res = cli.Get("/sessions/s2/fused");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(nlohmann::json::parse(res->body)["fused"] == std::vector<int>(120, 0));
}
