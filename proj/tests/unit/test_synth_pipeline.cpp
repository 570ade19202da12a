#include <catch_amalgamated.hpp>

#include "tempdir.hpp"
#include "vrfear/align.hpp"
#include "vrfear/pipeline.hpp"
#include "vrfear/synth.hpp"

using namespace vrfear;

TEST_CASE("synthetic sessions are reproducible", "[pipeline]") {
  TempDir a("synth-a"), b("synth-b");
  write_synth_session(generate_session({}), a.path());
  write_synth_session(generate_session({}), b.path());
  for (const char* f : {"manifest.json", "keypoints.csv", "audio.wav", "physio.csv", "annotations.jsonl", "truth.json"}) {
    INFO(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  SynthOptions other;
  other.seed = 8;
  CHECK(generate_session(other).keypoints != generate_session({}).keypoints);
}

TEST_CASE("synthetic session shape", "[pipeline]") {
  const auto s = generate_session({});
  CHECK(s.manifest.clock.frame_count() == 300);
  CHECK(s.keypoints.size() == 300);
  CHECK(s.audio.samples.size() == 160000);
  CHECK(s.physio.back().timestamp >= 10000);
  CHECK(roster_of(s.annotations).size() == 2);
  CHECK(std::count_if(s.planted_levels.begin(), s.planted_levels.end(), [](int l) { return l > 0; }) > 0);
}

TEST_CASE("without gaps interpolation changes nothing", "[pipeline]") {
  SynthOptions opt;
  opt.gap_fraction = 0.0;
  const auto s = generate_session(opt);
  CHECK(interpolate_keypoints(s.keypoints) == s.keypoints);

  opt.gap_fraction = 0.1;
  const auto gappy = generate_session(opt);
  bool any_missing = false;
  for (const auto& f : gappy.keypoints)
    for (const auto& j : f.joints) any_missing = any_missing || !j;
  CHECK(any_missing);
}

TEST_CASE("fusion recovers the planted labels", "[pipeline]") {
  for (std::uint64_t seed : {7, 8, 9}) {
    SynthOptions opt;
    opt.seed = seed;
    const auto s = generate_session(opt);
    const auto aligned = align_session(s.manifest, {s.keypoints, s.audio, s.physio, s.annotations});
    CHECK(aligned.clock == s.manifest.clock);
    CHECK(session_labels(s.annotations, aligned.clock).fused == s.planted_levels);
  }
  SynthOptions noisy;
  noisy.disagreement = 0.5;
  const auto s = generate_session(noisy);
  CHECK(session_labels(s.annotations, s.manifest.clock).fused == s.planted_levels);
}

TEST_CASE("config layering", "[pipeline]") {
  const auto defaults = layered_config({});
  CHECK(defaults.sequence_length == 16);
  CHECK(defaults.net.input_dim == 61);
  CHECK(defaults.net.hidden == 128);

  const auto c = layered_config({nlohmann::json{{"seed", 3}, {"net", {{"hidden", 32}}}},
                                 nlohmann::json{{"net", {{"hidden", 16}}}, {"dataset", {{"stride", 2}}}}});
  CHECK(c.seed == 3);
  CHECK(c.net.seed == 3);
  CHECK(c.split.seed == 3);
  CHECK(c.net.hidden == 16);
  CHECK(c.stride == 2);
  CHECK(c.net.learning_rate == 1e-4);

  try {
    layered_config({nlohmann::json{{"net", {{"hiden", 3}}}}});
    FAIL("expected unknown key");
  } catch (const Error& e) {
    CHECK(e.code() == "unknown_config_key");
    CHECK(std::string(e.what()).find("net.hiden") != std::string::npos);
  }
  CHECK_THROWS_AS(layered_config({nlohmann::json{{"pca", {{"fit", "sometimes"}}}}}), Error);
}

TEST_CASE("config hash tracks content", "[pipeline]") {
  const PipelineConfig a = layered_config({});
  CHECK(config_hash(a) == config_hash(layered_config({})));
  CHECK(config_hash(a).size() == 16);
  CHECK(config_hash(a) != config_hash(layered_config({nlohmann::json{{"seed", 1}}})));
  CHECK(config_from_json(config_to_json(a)).net.hidden == a.net.hidden);
  CHECK(config_hash(config_from_json(config_to_json(a))) == config_hash(a));
}

TEST_CASE("build writes 61 features and 3 label columns per frame", "[pipeline]") {
  TempDir root("build");
  write_synth_session(generate_session({}), root / "s");
  const auto cfg = layered_config({});
  const auto loaded = load_session(root / "s");
  std::vector<PreparedSession> prepared{prepare_session(loaded, cfg)};
  const auto built = build_dataset(prepared, cfg);
  REQUIRE(built.tables.size() == 1);
  CHECK(built.tables[0].frames.size() == 300);
  CHECK(built.pca.k() == 33);
  write_dataset(root / "ds", built, cfg, false);

  std::ifstream in(root / "ds" / "synth.csv");
  std::string line, header;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header.empty()) {
      header = line;
      continue;
    }
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 64);
  }
  CHECK(rows == 300);
  CHECK(header.rfind("frame_index,s0,", 0) == 0);
  CHECK(header.find(",hr,br,label_a,label_b,label_fused") != std::string::npos);

  const auto back = load_dataset(root / "ds");
  REQUIRE(back.tables.size() == 1);
  CHECK(back.tables[0].frames == built.tables[0].frames);
  CHECK(back.config_hash == config_hash(cfg));

  // A second build refuses to overwrite without force.
  try {
    write_dataset(root / "ds", built, cfg, false);
    FAIL("expected output_exists");
  } catch (const Error& e) {
    CHECK(e.code() == "output_exists");
  }
  CHECK_NOTHROW(write_dataset(root / "ds", built, cfg, true));
}

TEST_CASE("expected PCA size is checked", "[pipeline]") {
  TempDir root("pca-k");
  write_synth_session(generate_session({}), root / "s");
  auto cfg = layered_config({});
  const auto prepared = prepare_session(load_session(root / "s"), cfg);
  const auto k = build_dataset({prepared}, cfg).pca.variance_target_components;
  cfg.expect_pca_k = static_cast<int>(k);
  CHECK_NOTHROW(build_dataset({prepared}, cfg));
  cfg.expect_pca_k = static_cast<int>(k) + 1;
  try {
    build_dataset({prepared}, cfg);
    FAIL("expected pca_k_mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == "pca_k_mismatch");
  }
}

TEST_CASE("single-annotator sessions are refused", "[pipeline]") {
  TempDir root("one-annotator");
  auto s = generate_session({});
  std::erase_if(s.annotations, [](const AnnotationSpan& a) { return a.annotator_id == "a2"; });
  write_synth_session(s, root / "s");
  const auto cfg = layered_config({});
  try {
    build_dataset({prepare_session(load_session(root / "s"), cfg)}, cfg);
    FAIL("expected insufficient_annotators");
  } catch (const Error& e) {
    CHECK(e.code() == "insufficient_annotators");
  }
}

TEST_CASE("ingest report counts rows", "[pipeline]") {
  TempDir root("ingest");
  write_synth_session(generate_session({}), root / "s");
  auto report = ingest_report(root / "s");
  CHECK(report["ok"] == true);
  CHECK(report["keypoints"]["rows"] == 300);
  {
    std::ofstream out(root / "s" / "physio.csv", std::ios::app);
    out << "100,-1,3\n";
  }
  report = ingest_report(root / "s");
  CHECK(report["ok"] == false);
  CHECK(report["physio"]["issues"].size() == 1);
}

TEST_CASE("class statistics from sessions match planted counts", "[pipeline]") {
  TempDir root("stats");
  const auto s = generate_session({});
  write_synth_session(s, root / "s");
  const auto stats = session_class_stats({load_session(root / "s")});
  CHECK(stats.total == 300);
  for (int l = 0; l < 6; ++l) {
    const auto planted = std::count(s.planted_levels.begin(), s.planted_levels.end(), l);
    CHECK(stats.levels[static_cast<std::size_t>(l)].count == static_cast<std::size_t>(planted));
  }
}
