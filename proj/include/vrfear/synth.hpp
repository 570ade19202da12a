#pragma once

// Seeded synthetic sessions with planted fear spans, and a planted-separable
// sample set for training checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "vrfear/core.hpp"
#include "vrfear/dataset.hpp"
#include "vrfear/error.hpp"
#include "vrfear/ingest.hpp"
#include "vrfear/labels.hpp"
#include "vrfear/random.hpp"

namespace vrfear {

struct SynthOptions {
  std::uint64_t seed = 7;
  double seconds = 10.0;
  double fps = 30.0;
  int sample_rate = 16000;
  double gap_fraction = 0.02;  // chance that a joint is missing in a frame (frame 0 is always complete)
  double disagreement = 0.0;   // chance that the second annotator rates a span one level off
  std::string session_id = "synth";
  int game_id = 1;
};

struct SynthSession {
  SessionManifest manifest;
  std::vector<KeypointFrame> keypoints;
  AudioSignal audio;
  std::vector<PhysioSample> physio;
  std::vector<AnnotationSpan> annotations;
  std::vector<int> planted_levels;  // per frame, what the fused labels should be
};

namespace detail {

// Rough standing pose in metres, in keypoint column order.
inline constexpr double kRestPose[kJointCount][3] = {
    {0.00, 1.60, 0.05},  {0.00, 1.45, 0.00},  {-0.18, 1.42, 0.00}, {-0.25, 1.15, 0.00}, {-0.28, 0.90, 0.05},
    {0.18, 1.42, 0.00},  {0.25, 1.15, 0.00},  {0.28, 0.90, 0.05},  {0.00, 0.95, 0.00},  {-0.10, 0.95, 0.00},
    {-0.10, 0.50, 0.02}, {-0.10, 0.08, 0.00}, {0.10, 0.95, 0.00},  {0.10, 0.50, 0.02},  {0.10, 0.08, 0.00},
    {-0.03, 1.63, 0.08}, {0.03, 1.63, 0.08},  {-0.07, 1.60, 0.00}, {0.07, 1.60, 0.00},  {0.12, 0.02, 0.15},
    {0.15, 0.02, 0.12},  {0.10, 0.02, -0.05}, {-0.12, 0.02, 0.15}, {-0.15, 0.02, 0.12}, {-0.10, 0.02, -0.05}};

}  // namespace detail

// Frame intervals [first, last) with a planted level, alternating with calm stretches.
struct PlantedSpan {
  std::int64_t first = 0;
  std::int64_t last = 0;
  int level = 1;
};

inline std::vector<PlantedSpan> plant_spans(std::int64_t frames, double fps, Rng& rng) {
  std::vector<PlantedSpan> spans;
  const auto secs = [&](double lo, double hi) {
    return std::max<std::int64_t>(1, std::llround(rng.uniform(lo, hi) * fps));
  };
  std::int64_t f = secs(0.5, 1.5);
  while (f < frames) {
    const std::int64_t len = secs(1.0, 2.5);
    const std::int64_t end = std::min(frames, f + len);
    spans.push_back({f, end, 1 + static_cast<int>(rng.below(5))});
    f = end + secs(1.0, 2.5);
  }
  return spans;
}

inline SynthSession generate_session(const SynthOptions& opt) {
  if (!(opt.seconds >= 2.0)) throw Error("cli", "invalid_argument", "synthetic sessions need at least 2 seconds");
  if (!(opt.fps > 0.0) || opt.sample_rate <= 0) throw Error("cli", "invalid_argument", "fps and sample rate must be positive");
  Rng rng(opt.seed);
  SynthSession s;
  const auto frames = static_cast<std::int64_t>(std::llround(opt.seconds * opt.fps));
  const FrameClock clock(0, opt.fps, frames);
  s.manifest.session_id = opt.session_id;
  s.manifest.game_id = opt.game_id;
  s.manifest.clock = clock;

  const auto planted = plant_spans(frames, opt.fps, rng);
  s.planted_levels.assign(static_cast<std::size_t>(frames), 0);
  for (const auto& p : planted)
    for (std::int64_t f = p.first; f < p.last; ++f) s.planted_levels[static_cast<std::size_t>(f)] = p.level;

  // Annotations: span ends sit on frame start times so frame coverage is exact.
  const auto frame_time = [&](std::int64_t f) { return f < frames ? clock.time_of(f) : clock.end_ms(); };
  for (const char* who : {"a1", "a2"}) {
    for (const auto& p : planted) {
      int level = p.level;
      if (std::string(who) == "a2" && opt.disagreement > 0.0 && rng.uniform() < opt.disagreement) {
        level = level == 5 ? 4 : level + 1;
      }
      s.annotations.push_back({who, frame_time(p.first), frame_time(p.last), level});
    }
  }
  if (opt.disagreement > 0.0) {
    const FrameLabels fused = fuse_frames(s.annotations, clock, {"a1", "a2"});
    s.planted_levels = fused.fused;
  }

  // Keypoints: slow sway plus per-joint oscillation, with extra agitation at
  // higher levels. Timestamps are rounded up so the stream covers the clock.
  double sway_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  std::array<std::array<double, 3>, kJointCount> amp{}, freq{}, phase{};
  for (int j = 0; j < kJointCount; ++j) {
    for (int a = 0; a < 3; ++a) {
      amp[j][a] = rng.uniform(0.005, 0.03);
      freq[j][a] = rng.uniform(0.2, 1.5);
      phase[j][a] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
  }
  double agitation = 0.0;
  for (std::int64_t f = 0; f < frames; ++f) {
    const double t = clock.exact_time(f) / 1000.0;
    agitation += (s.planted_levels[static_cast<std::size_t>(f)] - agitation) * 0.2;
    KeypointFrame kf;
    kf.timestamp = static_cast<Millis>(std::ceil(clock.exact_time(f)));
    const double sway = 0.04 * std::sin(2.0 * std::numbers::pi * 0.25 * t + sway_phase);
    for (int j = 0; j < kJointCount; ++j) {
      double xyz[3];
      for (int a = 0; a < 3; ++a) {
        const double osc = amp[j][a] * std::sin(2.0 * std::numbers::pi * freq[j][a] * t + phase[j][a]);
        const double shake = 0.004 * agitation * std::sin(2.0 * std::numbers::pi * 3.0 * t + phase[j][a]);
        xyz[a] = detail::kRestPose[j][a] + (a == 0 ? sway : 0.0) + osc + shake;
      }
      const bool gap = f > 0 && opt.gap_fraction > 0.0 && rng.uniform() < opt.gap_fraction;
      if (!gap) kf.joints[static_cast<std::size_t>(j)] = Joint{xyz[0], xyz[1], xyz[2]};
    }
    s.keypoints.push_back(kf);
  }

  // Audio: quiet tone mixture; fear spans add a louder, higher burst.
  const double end_ms = clock.exact_time(frames);
  const auto n_samples = static_cast<std::size_t>(std::ceil(end_ms * opt.sample_rate / 1000.0));
  s.audio.sample_rate = opt.sample_rate;
  s.audio.samples.resize(n_samples);
  const double p1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double p2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double t = static_cast<double>(i) / opt.sample_rate;
    const auto f = std::min<std::int64_t>(frames - 1, static_cast<std::int64_t>(t * opt.fps));
    const int level = s.planted_levels[static_cast<std::size_t>(f)];
    double x = 0.08 * std::sin(2.0 * std::numbers::pi * 220.0 * t + p1) +
               0.04 * std::sin(2.0 * std::numbers::pi * 330.0 * t + p2) + 0.01 * rng.normal();
    if (level > 0) {
      x += 0.1 * level * std::sin(2.0 * std::numbers::pi * (600.0 + 80.0 * level) * t) + 0.02 * level * rng.normal();
    }
    // Store what a 16-bit file would hold so in-memory and on-disk signals agree.
    x = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0) / 32768.0;
    s.audio.samples[i] = x;
  }

  // Physiology every two seconds, through the end of the clock.
  const auto level_at = [&](Millis t) {
    const auto f = std::clamp<std::int64_t>(static_cast<std::int64_t>(t * opt.fps / 1000.0), 0, frames - 1);
    return s.planted_levels[static_cast<std::size_t>(f)];
  };
  for (Millis t = 0;; t += 2000) {
    const int level = level_at(t);
    const double hr = 90.0 + 3.0 * level + 1.5 * std::sin(t / 7000.0) + 0.5 * rng.normal();
    const double br = 15.0 + 0.8 * level + 0.3 * rng.normal();
    s.physio.push_back({t, std::round(hr * 100.0) / 100.0, std::round(br * 100.0) / 100.0});
    if (static_cast<double>(t) >= end_ms) break;
  }
  return s;
}

inline void write_synth_session(const SynthSession& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto open = [&](const std::string& name, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(dir / name, mode | std::ios::trunc);
    if (!out) throw Error("cli", "io_error", "cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("manifest.json");
    out << nlohmann::json(s.manifest).dump(2) << '\n';
  }
  {
    auto out = open(s.manifest.keypoints_path);
    write_keypoints(out, s.keypoints);
  }
  {
    auto out = open(s.manifest.audio_path, std::ios::out | std::ios::binary);
    write_wav(out, s.audio);
  }
  {
    auto out = open(s.manifest.physio_path);
    write_physio(out, s.physio);
  }
  {
    auto out = open(s.manifest.annotations_path);
    write_annotations(out, s.annotations);
  }
  {
    auto out = open("truth.json");
    out << nlohmann::json{{"session_id", s.manifest.session_id}, {"fused_levels", s.planted_levels}}.dump() << '\n';
  }
}

// Each class gets a random prototype vector; a sample repeats its class's
// prototype over the window with small per-frame noise.
inline SampleSet separable_samples(std::size_t count, int classes, std::size_t length, std::size_t dims,
                                   std::uint64_t seed, double noise = 0.3) {
  Rng rng(seed);
  std::vector<std::vector<double>> prototypes(static_cast<std::size_t>(classes), std::vector<double>(dims));
  for (auto& p : prototypes)
    for (double& v : p) v = rng.normal();
  SampleSet set(length, dims);
  std::vector<double> buf(length * dims);
  for (std::size_t i = 0; i < count; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
    for (std::size_t t = 0; t < length; ++t)
      for (std::size_t d = 0; d < dims; ++d)
        buf[t * dims + d] = prototypes[static_cast<std::size_t>(c)][d] + noise * rng.normal();
    set.add(buf, c);
  }
  return set;
}

}  // namespace vrfear
