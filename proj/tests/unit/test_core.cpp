#include <catch_amalgamated.hpp>

#include "vrfear/core.hpp"
#include "vrfear/random.hpp"
#include "vrfear/text.hpp"

using namespace vrfear;

TEST_CASE("frame_to_time examples", "[core]") {
  CHECK(frame_to_time(FrameClock(0, 30, 100), 0) == 0);
  CHECK(frame_to_time(FrameClock(0, 30, 100), 30) == 1000);
  CHECK(frame_to_time(FrameClock(500, 25, 100), 5) == 700);
}

TEST_CASE("frame_to_time rejects out-of-range indices", "[core]") {
  const FrameClock clock(0, 30, 10);
  CHECK_THROWS_AS(clock.time_of(10), Error);
  CHECK_THROWS_AS(clock.time_of(-1), Error);
  CHECK_THROWS_AS(FrameClock(0, 0.0, 1), Error);
  CHECK_THROWS_AS(FrameClock(0, 30, -1), Error);
}

TEST_CASE("frame_to_time is strictly increasing", "[core]") {
  for (double fps : {24.0, 25.0, 28.33, 29.97, 30.0, 60.0, 120.0}) {
    const FrameClock clock(123, fps, 5000);
    for (std::int64_t i = 1; i < clock.frame_count(); ++i) REQUIRE(clock.time_of(i) > clock.time_of(i - 1));
  }
}

TEST_CASE("binarize", "[core]") {
  CHECK(binarize(FearLevel(0)).value() == 0);
  CHECK(binarize(FearLevel(1)).value() == 1);
  CHECK(binarize(FearLevel(5)).value() == 1);
  for (int l = 1; l <= 5; ++l) CHECK(binarize(FearLevel(l)) >= binarize(FearLevel(l - 1)));
  CHECK_THROWS_AS(FearLevel(6), Error);
  CHECK_THROWS_AS(FearLevel(-1), Error);
}

TEST_CASE("class_index maps levels per task", "[core]") {
  CHECK(class_index(3, 6) == 3);
  CHECK(class_index(3, 2) == 1);
  CHECK(class_index(0, 2) == 0);
}

TEST_CASE("manifest JSON round trip", "[core]") {
  SessionManifest m;
  m.session_id = "s01";
  m.game_id = 2;
  m.clock = FrameClock(250, 28.5, 900);
  m.audio_secondary_path = "mic.wav";
  m.audio_start_ms = -40;
  const nlohmann::json j = m;
  CHECK(j["schema_version"] == 1);
  CHECK(j["clock"]["frame_rate"] == 28.5);
  const auto back = j.get<SessionManifest>();
  CHECK(back.session_id == "s01");
  CHECK(back.clock == m.clock);
  CHECK(back.audio_secondary_path == std::optional<std::string>("mic.wav"));
  CHECK(back.audio_start_ms == -40);

  auto bad = j;
  bad["schema_version"] = 2;
  CHECK_THROWS_AS(bad.get<SessionManifest>(), Error);
  bad = j;
  bad["game_id"] = 4;
  CHECK_THROWS_AS(bad.get<SessionManifest>(), Error);
  bad = j;
  bad.erase("clock");
  CHECK_THROWS_AS(bad.get<SessionManifest>(), Error);
}

TEST_CASE("rng draws are reproducible and in range", "[core]") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    REQUIRE(u == b.uniform());
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(a.below(7) == b.below(7));
  }
  std::vector<int> v(20);
  std::iota(v.begin(), v.end(), 0);
  Rng c(3);
  c.shuffle(std::span<int>(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("number formatting round-trips", "[core]") {
  for (double v : {0.1, -3.25, 1e-300, 94.39, 1.0 / 3.0}) {
    CHECK(text::parse_double(text::format_double(v)) == v);
  }
  CHECK(text::parse_double("+2.5") == 2.5);
  CHECK_FALSE(text::parse_double("abc"));
  CHECK_FALSE(text::parse_double("1.5x"));
  CHECK(text::parse_int("-12") == -12);
}
