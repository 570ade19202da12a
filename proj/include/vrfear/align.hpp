#pragma once

// Puts every modality on one frame clock: fills keypoint gaps, resamples the
// physiology stream per frame and trims all streams to their common span.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vrfear/core.hpp"
#include "vrfear/error.hpp"
#include "vrfear/ingest.hpp"
#include "vrfear/skeleton.hpp"
#include "vrfear/text.hpp"

namespace vrfear {

class UnrecoverableJoint : public Error {
 public:
  explicit UnrecoverableJoint(int joint)
      : Error("align", "unrecoverable_joint",
              "joint " + std::to_string(joint) + " (" + std::string(kJointNames[joint]) +
                  ") is never observed"),
        joint_(joint) {}
  int joint() const noexcept { return joint_; }

 private:
  int joint_;
};

// Fills every missing joint by linear interpolation in time between the
// nearest observed neighbours; gaps at either end copy the nearest observation.
inline std::vector<KeypointFrame> interpolate_keypoints(std::vector<KeypointFrame> frames) {
  if (frames.empty()) return frames;
  const std::size_t n = frames.size();
  std::vector<std::size_t> observed;
  for (int j = 0; j < kJointCount; ++j) {
    observed.clear();
    for (std::size_t i = 0; i < n; ++i)
      if (frames[i].joints[j]) observed.push_back(i);
    if (observed.empty()) throw UnrecoverableJoint(j);
    if (observed.size() == n) continue;

    for (std::size_t i = 0; i < observed.front(); ++i) frames[i].joints[j] = frames[observed.front()].joints[j];
    for (std::size_t i = observed.back() + 1; i < n; ++i) frames[i].joints[j] = frames[observed.back()].joints[j];
    for (std::size_t k = 0; k + 1 < observed.size(); ++k) {
      const std::size_t lo = observed[k];
      const std::size_t hi = observed[k + 1];
      if (hi == lo + 1) continue;
      const Joint a = *frames[lo].joints[j];
      const Joint b = *frames[hi].joints[j];
      const double t0 = static_cast<double>(frames[lo].timestamp);
      const double span = static_cast<double>(frames[hi].timestamp) - t0;
      const auto lerp = [](double v0, double v1, double f) {
        return std::clamp(v0 + (v1 - v0) * f, std::min(v0, v1), std::max(v0, v1));
      };
      for (std::size_t i = lo + 1; i < hi; ++i) {
        const double f = (static_cast<double>(frames[i].timestamp) - t0) / span;
        frames[i].joints[j] = Joint{lerp(a.x, b.x, f), lerp(a.y, b.y, f), lerp(a.z, b.z, f)};
      }
    }
  }
  return frames;
}

struct PhysioTrack {
  std::vector<double> heart_rate;
  std::vector<double> breath_rate;
};

// Value at each frame start: linear between the bracketing samples, the
// nearest sample's value outside the sampled range.
inline PhysioTrack resample_physio(const std::vector<PhysioSample>& samples, const FrameClock& clock) {
  if (samples.empty()) throw Error("align", "empty_physio", "physiology stream is empty");
  PhysioTrack out;
  const auto count = static_cast<std::size_t>(clock.frame_count());
  out.heart_rate.resize(count);
  out.breath_rate.resize(count);
  std::size_t k = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double t = clock.exact_time(static_cast<std::int64_t>(i));
    if (t <= static_cast<double>(samples.front().timestamp)) {
      out.heart_rate[i] = samples.front().heart_rate;
      out.breath_rate[i] = samples.front().breath_rate;
      continue;
    }
    if (t >= static_cast<double>(samples.back().timestamp)) {
      out.heart_rate[i] = samples.back().heart_rate;
      out.breath_rate[i] = samples.back().breath_rate;
      continue;
    }
    while (static_cast<double>(samples[k + 1].timestamp) < t) ++k;
    const PhysioSample& a = samples[k];
    const PhysioSample& b = samples[k + 1];
    const double f = (t - static_cast<double>(a.timestamp)) /
                     static_cast<double>(b.timestamp - a.timestamp);
    out.heart_rate[i] = a.heart_rate + (b.heart_rate - a.heart_rate) * f;
    out.breath_rate[i] = a.breath_rate + (b.breath_rate - a.breath_rate) * f;
  }
  return out;
}

struct SessionStreams {
  std::vector<KeypointFrame> keypoints;
  AudioSignal audio;
  std::vector<PhysioSample> physio;
  std::vector<AnnotationSpan> annotations;
};

struct AlignedStreams {
  FrameClock clock;
  std::vector<Skeleton> keypoints;
  PhysioTrack physio;
  AudioSignal audio;
};

struct TimeSpan {
  double start = 0.0;
  double end = 0.0;
};

// Index of the frame whose timestamp is nearest to t; ties go to the earlier frame.
inline std::size_t nearest_frame(const std::vector<KeypointFrame>& frames, double t) {
  const auto it = std::lower_bound(frames.begin(), frames.end(), t, [](const KeypointFrame& f, double v) {
    return static_cast<double>(f.timestamp) < v;
  });
  if (it == frames.begin()) return 0;
  if (it == frames.end()) return frames.size() - 1;
  const auto hi = static_cast<std::size_t>(it - frames.begin());
  const double d_hi = static_cast<double>(frames[hi].timestamp) - t;
  const double d_lo = t - static_cast<double>(frames[hi - 1].timestamp);
  return d_lo <= d_hi ? hi - 1 : hi;
}

// Spans covered by each stream. A keypoint frame covers one frame period from
// its timestamp; physiology covers first to last sample; audio covers its samples.
inline std::vector<TimeSpan> stream_spans(const SessionManifest& manifest, const SessionStreams& s) {
  const double period = manifest.clock.period_ms();
  std::vector<TimeSpan> spans;
  spans.push_back({static_cast<double>(manifest.clock.start_ms()),
                   manifest.clock.exact_time(manifest.clock.frame_count())});
  spans.push_back({static_cast<double>(s.keypoints.front().timestamp),
                   static_cast<double>(s.keypoints.back().timestamp) + period});
  spans.push_back({static_cast<double>(s.physio.front().timestamp),
                   static_cast<double>(s.physio.back().timestamp)});
  const double a0 = static_cast<double>(manifest.audio_start_ms);
  spans.push_back({a0, a0 + 1000.0 * s.audio.duration_seconds()});
  return spans;
}

inline AlignedStreams align_session(const SessionManifest& manifest, const SessionStreams& streams) {
  if (streams.keypoints.empty()) throw Error("align", "empty_stream", "keypoint stream is empty");
  if (streams.physio.empty()) throw Error("align", "empty_stream", "physiology stream is empty");
  if (streams.audio.samples.empty() || streams.audio.sample_rate <= 0) {
    throw Error("align", "empty_stream", "audio stream is empty");
  }
  const auto spans = stream_spans(manifest, streams);
  double start = spans.front().start;
  double end = spans.front().end;
  for (const auto& s : spans) {
    start = std::max(start, s.start);
    end = std::min(end, s.end);
  }
  const double fps = manifest.clock.frame_rate();
  const auto start_ms = static_cast<Millis>(std::ceil(start));
  const double frames_exact = (end - static_cast<double>(start_ms)) * fps / 1000.0;
  const auto frame_count = frames_exact > 0.0 ? static_cast<std::int64_t>(std::floor(frames_exact + 1e-9)) : 0;
  if (frame_count <= 0) throw Error("align", "empty_overlap", "streams share no common time span");

  AlignedStreams out;
  out.clock = FrameClock(start_ms, fps, frame_count);

  const auto filled = interpolate_keypoints(streams.keypoints);
  out.keypoints.reserve(static_cast<std::size_t>(frame_count));
  for (std::int64_t i = 0; i < frame_count; ++i) {
    out.keypoints.push_back(flatten(filled[nearest_frame(filled, out.clock.exact_time(i))]));
  }

  out.physio = resample_physio(streams.physio, out.clock);

  const int rate = streams.audio.sample_rate;
  const auto offset = static_cast<std::size_t>(
      std::llround((static_cast<double>(start_ms - manifest.audio_start_ms)) * rate / 1000.0));
  const auto wanted = static_cast<std::size_t>(std::llround(out.clock.duration_seconds() * rate));
  const auto& src = streams.audio.samples;
  const std::size_t begin = std::min(offset, src.size());
  const std::size_t length = std::min(wanted, src.size() - begin);
  out.audio.sample_rate = rate;
  out.audio.samples.assign(src.begin() + static_cast<std::ptrdiff_t>(begin),
                           src.begin() + static_cast<std::ptrdiff_t>(begin + length));
  return out;
}

inline std::vector<std::string> aligned_header() {
  std::vector<std::string> h{"frame_index"};
  for (int j = 0; j < kJointCount; ++j)
    for (const char* axis : {"x", "y", "z"}) h.push_back(axis + std::to_string(j));
  h.emplace_back("heart_rate");
  h.emplace_back("breath_rate");
  return h;
}

// Aligned-session CSV: frame_index, 75 keypoint columns, heart_rate, breath_rate.
inline void write_aligned(std::ostream& out, const AlignedStreams& a, const std::string& config_hash = {}) {
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
  out << "# start_ms=" << a.clock.start_ms() << " frame_rate=" << text::format_double(a.clock.frame_rate())
      << '\n';
  const auto header = aligned_header();
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (std::size_t i = 0; i < a.keypoints.size(); ++i) {
    out << i;
    for (double v : a.keypoints[i]) out << ',' << text::format_double(v);
    out << ',' << text::format_double(a.physio.heart_rate[i]) << ','
        << text::format_double(a.physio.breath_rate[i]) << '\n';
  }
}

struct AlignedTable {
  std::vector<Skeleton> keypoints;
  PhysioTrack physio;
};

inline AlignedTable read_aligned(std::istream& in) {
  AlignedTable t;
  std::int64_t line_no = 0;
  const auto header = aligned_header();
  detail::expect_header(in, line_no, header, "align");
  std::string line;
  while (text::next_line(in, line, line_no)) {
    if (text::is_comment_or_blank(line)) continue;
    const auto cells = text::split(line);
    if (cells.size() != header.size()) throw ParseError("align", line_no, "wrong column count");
    const auto idx = text::parse_int(cells[0]);
    if (!idx || *idx != static_cast<std::int64_t>(t.keypoints.size())) {
      throw ParseError("align", line_no, "frame_index out of sequence");
    }
    Skeleton s{};
    for (int c = 0; c < kSkeletonDims; ++c) {
      const auto v = text::parse_double(cells[1 + c]);
      if (!v) throw ParseError("align", line_no, "non-numeric cell");
      s[c] = *v;
    }
    const auto hr = text::parse_double(cells[1 + kSkeletonDims]);
    const auto br = text::parse_double(cells[2 + kSkeletonDims]);
    if (!hr || !br) throw ParseError("align", line_no, "non-numeric cell");
    t.keypoints.push_back(s);
    t.physio.heart_rate.push_back(*hr);
    t.physio.breath_rate.push_back(*br);
  }
  return t;
}

}  // namespace vrfear
