#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include <json.hpp>

#include "vrfear/error.hpp"

namespace vrfear {

// Integer milliseconds are the only time unit used across modules.
using Millis = std::int64_t;

inline constexpr int kJointCount = 25;
inline constexpr int kSkeletonDims = 3 * kJointCount;

// OpenPose BODY_25 ordering.
inline constexpr std::array<std::string_view, kJointCount> kJointNames = {
    "Nose",    "Neck",      "RShoulder", "RElbow", "RWrist",  "LShoulder", "LElbow",
    "LWrist",  "MidHip",    "RHip",      "RKnee",  "RAnkle",  "LHip",      "LKnee",
    "LAnkle",  "REye",      "LEye",      "REar",   "LEar",    "LBigToe",   "LSmallToe",
    "LHeel",   "RBigToe",   "RSmallToe", "RHeel"};

// Joint pairs joined by a bone when drawing the skeleton.
inline constexpr std::array<std::pair<int, int>, 24> kBones = {{
    {1, 0},   {1, 2},   {2, 3},   {3, 4},   {1, 5},   {5, 6},   {6, 7},   {1, 8},
    {8, 9},   {9, 10},  {10, 11}, {8, 12},  {12, 13}, {13, 14}, {0, 15},  {0, 16},
    {15, 17}, {16, 18}, {14, 19}, {19, 20}, {14, 21}, {11, 22}, {22, 23}, {11, 24},
}};

// Maps frame indices of a session onto wall time. Frame i starts at
// start + i * 1000 / fps milliseconds.
class FrameClock {
 public:
  FrameClock() = default;
  FrameClock(Millis start_ms, double frame_rate, std::int64_t frame_count)
      : start_ms_(start_ms), frame_rate_(frame_rate), frame_count_(frame_count) {
    if (!(frame_rate > 0.0) || !std::isfinite(frame_rate)) {
      throw Error("core-model", "invalid_clock", "frame rate must be positive and finite");
    }
    if (frame_count < 0) {
      throw Error("core-model", "invalid_clock", "frame count must be nonnegative");
    }
  }

  Millis start_ms() const noexcept { return start_ms_; }
  double frame_rate() const noexcept { return frame_rate_; }
  std::int64_t frame_count() const noexcept { return frame_count_; }
  double period_ms() const noexcept { return 1000.0 / frame_rate_; }

  // Unrounded start time of frame i; valid for any i including frame_count.
  double exact_time(std::int64_t i) const noexcept {
    return static_cast<double>(start_ms_) + static_cast<double>(i) * 1000.0 / frame_rate_;
  }

  Millis time_of(std::int64_t i) const {
    if (i < 0 || i >= frame_count_) {
      throw Error("core-model", "frame_out_of_range",
                  "frame index " + std::to_string(i) + " outside [0, " +
                      std::to_string(frame_count_) + ")");
    }
    return start_ms_ + std::llround(static_cast<double>(i) * 1000.0 / frame_rate_);
  }

  // End of the covered span (start of the frame after the last one).
  Millis end_ms() const noexcept {
    return start_ms_ + std::llround(static_cast<double>(frame_count_) * 1000.0 / frame_rate_);
  }

  double duration_seconds() const noexcept {
    return static_cast<double>(frame_count_) / frame_rate_;
  }

  friend bool operator==(const FrameClock&, const FrameClock&) = default;

 private:
  Millis start_ms_ = 0;
  double frame_rate_ = 30.0;
  std::int64_t frame_count_ = 0;
};

inline Millis frame_to_time(const FrameClock& clock, std::int64_t i) { return clock.time_of(i); }

// Ordinal fear label: 0 is non-fear, 1..5 rank increasing intensity.
class FearLevel {
 public:
  static constexpr int kMax = 5;
  static constexpr int kCount = 6;

  constexpr FearLevel() = default;
  explicit FearLevel(int level) : level_(level) {
    if (level < 0 || level > kMax) {
      throw Error("core-model", "invalid_level",
                  "fear level " + std::to_string(level) + " outside [0, 5]");
    }
  }
  constexpr int value() const noexcept { return level_; }
  friend constexpr auto operator<=>(FearLevel, FearLevel) = default;

 private:
  int level_ = 0;
};

class BinaryFear {
 public:
  constexpr BinaryFear() = default;
  explicit BinaryFear(int v) : value_(v) {
    if (v != 0 && v != 1) throw Error("core-model", "invalid_level", "binary fear must be 0 or 1");
  }
  constexpr int value() const noexcept { return value_; }
  friend constexpr auto operator<=>(BinaryFear, BinaryFear) = default;

 private:
  int value_ = 0;
};

inline BinaryFear binarize(FearLevel level) { return BinaryFear(level.value() >= 1 ? 1 : 0); }

// Reduces a raw label to the class index used by an n-class task (6 or 2).
inline int class_index(int level, int num_classes) {
  if (num_classes == 2) return level >= 1 ? 1 : 0;
  return level;
}

// Description of one recorded session. Stream paths are relative to the
// directory holding the manifest.
struct SessionManifest {
  static constexpr int kSchemaVersion = 1;

  std::string session_id;
  int game_id = 1;
  FrameClock clock;
  std::string keypoints_path = "keypoints.csv";
  std::string audio_path = "audio.wav";
  std::optional<std::string> audio_secondary_path;
  Millis audio_start_ms = 0;
  std::string physio_path = "physio.csv";
  std::string annotations_path = "annotations.jsonl";
};

inline void to_json(nlohmann::json& j, const SessionManifest& m) {
  j = nlohmann::json{
      {"schema_version", SessionManifest::kSchemaVersion},
      {"session_id", m.session_id},
      {"game_id", m.game_id},
      {"clock",
       {{"start_ms", m.clock.start_ms()},
        {"frame_rate", m.clock.frame_rate()},
        {"frame_count", m.clock.frame_count()}}},
      {"streams",
       {{"keypoints", m.keypoints_path},
        {"audio", m.audio_path},
        {"physio", m.physio_path},
        {"annotations", m.annotations_path}}},
      {"audio_start_ms", m.audio_start_ms},
  };
  if (m.audio_secondary_path) j["streams"]["audio_secondary"] = *m.audio_secondary_path;
}

inline void from_json(const nlohmann::json& j, SessionManifest& m) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != SessionManifest::kSchemaVersion) {
      throw Error("core-model", "schema_version",
                  "unsupported manifest schema_version " + std::to_string(version));
    }
    m.session_id = j.at("session_id").get<std::string>();
    m.game_id = j.at("game_id").get<int>();
    if (m.game_id < 1 || m.game_id > 3) {
      throw Error("core-model", "invalid_manifest", "game_id must be 1, 2 or 3");
    }
    const auto& c = j.at("clock");
    m.clock = FrameClock(c.at("start_ms").get<Millis>(), c.at("frame_rate").get<double>(),
                         c.at("frame_count").get<std::int64_t>());
    const auto& s = j.at("streams");
    m.keypoints_path = s.at("keypoints").get<std::string>();
    m.audio_path = s.at("audio").get<std::string>();
    m.physio_path = s.at("physio").get<std::string>();
    m.annotations_path = s.at("annotations").get<std::string>();
    m.audio_secondary_path.reset();
    if (s.contains("audio_secondary")) m.audio_secondary_path = s["audio_secondary"].get<std::string>();
    m.audio_start_ms = j.value("audio_start_ms", Millis{0});
  } catch (const nlohmann::json::exception& e) {
    throw Error("core-model", "invalid_manifest", std::string("manifest: ") + e.what());
  }
}

}  // namespace vrfear
