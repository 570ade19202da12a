#include <catch_amalgamated.hpp>

#include <sstream>

#include "vrfear/ingest.hpp"
#include "vrfear/random.hpp"

using namespace vrfear;

namespace {

std::string keypoint_header_line() {
  std::string h = "timestamp";
  for (int j = 0; j < 25; ++j) h += ",x" + std::to_string(j) + ",y" + std::to_string(j) + ",z" + std::to_string(j);
  return h + "\n";
}

std::string full_row(Millis t, double v) {
  std::string r = std::to_string(t);
  for (int c = 0; c < 75; ++c) r += "," + text::format_double(v + c);
  return r + "\n";
}

// Minimal RIFF builder for the parser tests.
std::string wav_bytes(std::uint16_t format, std::uint16_t channels, std::uint16_t bits, int rate,
                      const std::vector<std::int16_t>& samples, std::uint32_t declared_data = UINT32_MAX) {
  std::string out;
  const auto put16 = [&](std::uint16_t v) { out += static_cast<char>(v & 0xFF), out += static_cast<char>(v >> 8); };
  const auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
  };
  const auto data = static_cast<std::uint32_t>(samples.size() * 2);
  out += "RIFF";
  put32(36 + data);
  out += "WAVEfmt ";
  put32(16);
  put16(format);
  put16(channels);
  put32(static_cast<std::uint32_t>(rate));
  put32(static_cast<std::uint32_t>(rate) * channels * bits / 8);
  put16(static_cast<std::uint16_t>(channels * bits / 8));
  put16(bits);
  out += "data";
  put32(declared_data == UINT32_MAX ? data : declared_data);
  for (auto s : samples) put16(static_cast<std::uint16_t>(s));
  return out;
}

AudioSignal parse_wav_string(const std::string& s) {
  std::istringstream in(s);
  return parse_audio(in);
}

}  // namespace

TEST_CASE("parse_keypoints examples", "[ingest]") {
  std::string row = "0,0,0,0";
  for (int i = 0; i < 72; ++i) row += ",";
  std::istringstream in(keypoint_header_line() + row + "\n");
  const auto frames = parse_keypoints(in);
  REQUIRE(frames.size() == 1);
  REQUIRE(frames[0].joints[0].has_value());
  CHECK(*frames[0].joints[0] == Joint{0, 0, 0});
  for (int j = 1; j < 25; ++j) CHECK_FALSE(frames[0].joints[static_cast<std::size_t>(j)].has_value());

  std::istringstream two(keypoint_header_line() + full_row(0, 1) + full_row(33, 2));
  const auto f2 = parse_keypoints(two);
  REQUIRE(f2.size() == 2);
  CHECK(f2[0].timestamp == 0);
  CHECK(f2[1].timestamp == 33);
  CHECK(f2[1].joints[24]->z == 76.0);
}

TEST_CASE("parse_keypoints reports the offending row", "[ingest]") {
  std::istringstream in(keypoint_header_line() + full_row(0, 1) + "1,2,3,4,5,6,7,8,9,10\n");
  try {
    parse_keypoints(in);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(e.module() == "ingest");
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("parse_keypoints rejects bad cells and order", "[ingest]") {
  std::string bad = full_row(0, 1);
  bad.replace(bad.find(",2,"), 3, ",x,");
  std::istringstream nonnum(keypoint_header_line() + bad);
  CHECK_THROWS_AS(parse_keypoints(nonnum), ParseError);

  std::istringstream order(keypoint_header_line() + full_row(10, 1) + full_row(10, 1));
  CHECK_THROWS_AS(parse_keypoints(order), ParseError);

  std::istringstream noheader(full_row(0, 1));
  CHECK_THROWS_AS(parse_keypoints(noheader), ParseError);
}

TEST_CASE("keypoint parser never drops rows silently", "[ingest]") {
  Rng rng(5);
  std::string body = keypoint_header_line();
  Millis t = 0;
  for (int i = 0; i < 200; ++i) {
    t += 33;
    switch (rng.below(4)) {
      case 0:
        body += "1,2,3\n";
        break;
      case 1:
        body += full_row(t - 100, 0.5);  // goes backwards
        break;
      default:
        body += full_row(t, 0.5);
    }
  }
  std::istringstream in(body);
  const auto report = read_keypoints(in);
  CHECK(report.input_rows == 200);
  CHECK(static_cast<std::int64_t>(report.rows.size() + report.issues.size()) == report.input_rows);
}

TEST_CASE("keypoint write/parse round trip", "[ingest]") {
  Rng rng(11);
  std::vector<KeypointFrame> frames;
  for (int i = 0; i < 20; ++i) {
    KeypointFrame f;
    f.timestamp = i * 33;
    for (auto& j : f.joints)
      if (rng.uniform() > 0.2) j = Joint{rng.normal(), rng.normal(), rng.normal()};
    frames.push_back(f);
  }
  std::stringstream buf;
  write_keypoints(buf, frames);
  CHECK(parse_keypoints(buf) == frames);
}

TEST_CASE("parse_physio examples", "[ingest]") {
  std::istringstream ok("timestamp,heart_rate,breath_rate\n0,90,15.5\n2000,94,16.0\n");
  const auto s = parse_physio(ok);
  REQUIRE(s.size() == 2);
  CHECK(s[1].heart_rate == 94.0);

  std::istringstream dup("timestamp,heart_rate,breath_rate\n0,90,15\n0,91,15\n");
  CHECK_THROWS_WITH(parse_physio(dup), Catch::Matchers::ContainsSubstring("non-increasing"));
  std::istringstream neg("timestamp,heart_rate,breath_rate\n0,-5,15\n");
  CHECK_THROWS_WITH(parse_physio(neg), Catch::Matchers::ContainsSubstring("negative heart rate"));
}

TEST_CASE("physio round trip", "[ingest]") {
  std::vector<PhysioSample> s{{0, 90.25, 15.5}, {2000, 94.0, 16.125}, {4000, 101.5, 17.0}};
  std::stringstream buf;
  write_physio(buf, s);
  CHECK(parse_physio(buf) == s);
}

TEST_CASE("parse_annotations examples", "[ingest]") {
  std::istringstream one(R"({"annotator_id":"a1","start":1000,"end":3000,"level":2})");
  const auto spans = parse_annotations(one);
  REQUIRE(spans.size() == 1);
  CHECK(spans[0] == AnnotationSpan{"a1", 1000, 3000, 2});

  std::istringstream empty(R"({"annotator_id":"a1","start":0,"end":0,"level":2})");
  CHECK_THROWS_WITH(parse_annotations(empty), Catch::Matchers::ContainsSubstring("empty span"));
  std::istringstream level(R"({"annotator_id":"a1","start":0,"end":100,"level":6})");
  CHECK_THROWS_WITH(parse_annotations(level), Catch::Matchers::ContainsSubstring("outside"));
  std::istringstream zero(R"({"annotator_id":"a1","start":0,"end":100,"level":0})");
  CHECK_THROWS_AS(parse_annotations(zero), ParseError);
}

TEST_CASE("same-annotator overlap rejected, other annotators allowed", "[ingest]") {
  std::istringstream in(R"({"annotator_id":"a1","start":0,"end":100,"level":2}
{"annotator_id":"a2","start":50,"end":150,"level":3}
{"annotator_id":"a1","start":100,"end":200,"level":1}
{"annotator_id":"a1","start":150,"end":250,"level":1}
)");
  const auto report = read_annotations(in);
  CHECK(report.rows.size() == 3);
  REQUIRE(report.issues.size() == 1);
  CHECK(report.issues[0].line == 4);
}

TEST_CASE("annotation round trip", "[ingest]") {
  std::vector<AnnotationSpan> spans{{"a1", 0, 500, 1}, {"a2", 100, 900, 5}, {"a1", 500, 700, 3}};
  std::stringstream buf;
  write_annotations(buf, spans);
  CHECK(parse_annotations(buf) == spans);
}

TEST_CASE("parse_audio examples", "[ingest]") {
  const auto silence = parse_wav_string(wav_bytes(1, 1, 16, 16000, std::vector<std::int16_t>(16000, 0)));
  CHECK(silence.sample_rate == 16000);
  REQUIRE(silence.samples.size() == 16000);
  CHECK(std::all_of(silence.samples.begin(), silence.samples.end(), [](double v) { return v == 0.0; }));

  const auto stereo = parse_wav_string(wav_bytes(1, 2, 16, 8000, {16384, -16384}));
  REQUIRE(stereo.samples.size() == 1);
  CHECK(stereo.samples[0] == 0.0);

  try {
    parse_wav_string(wav_bytes(0x55, 1, 16, 8000, {0, 0}));
    FAIL("expected unsupported encoding");
  } catch (const Error& e) {
    CHECK(e.code() == "unsupported_encoding");
  }
}

TEST_CASE("parse_audio scaling and failures", "[ingest]") {
  const auto a = parse_wav_string(wav_bytes(1, 1, 16, 8000, {-32768, 16384, 32767}));
  CHECK(a.samples[0] == -1.0);
  CHECK(a.samples[1] == 0.5);
  CHECK(a.samples[2] == 32767.0 / 32768.0);

  const auto code_of = [](const std::string& bytes) {
    try {
      parse_wav_string(bytes);
    } catch (const Error& e) {
      return e.code();
    }
    return std::string("ok");
  };
  CHECK(code_of(wav_bytes(1, 1, 16, 8000, {1, 2, 3}, 100)) == "truncated");
  CHECK(code_of("not a wav file at all, definitely not") == "not_wav");
  CHECK(code_of(wav_bytes(1, 1, 8, 8000, {1, 2})) == "unsupported_encoding");
}

TEST_CASE("wav write/parse round trip", "[ingest]") {
  AudioSignal s;
  s.sample_rate = 22050;
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) s.samples.push_back(std::round(rng.uniform(-1, 1) * 32767) / 32768.0);
  std::stringstream buf;
  write_wav(buf, s);
  CHECK(parse_audio(buf) == s);
}

TEST_CASE("mix_tracks averages sample-wise", "[ingest]") {
  AudioSignal a{8000, {0.5, 0.25, 1.0}};
  AudioSignal b{8000, {-0.5, 0.25}};
  const auto m = mix_tracks(a, b);
  CHECK(m.samples == std::vector<double>{0.0, 0.25});
  CHECK_THROWS_AS(mix_tracks(a, AudioSignal{16000, {0.0}}), Error);
}
