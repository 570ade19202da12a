#pragma once

// Annotator spans to per-frame levels, and the majority-vote fusion rule.

#include <algorithm>
#include <array>
#include <initializer_list>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "vrfear/core.hpp"
#include "vrfear/error.hpp"
#include "vrfear/ingest.hpp"

namespace vrfear {

enum class FusionRule { majority, rounded_average };

inline const char* to_string(FusionRule r) {
  return r == FusionRule::majority ? "majority" : "rounded_average";
}

struct FusedLabel {
  FearLevel level;
  std::vector<int> annotator_levels;
  FusionRule rule = FusionRule::majority;
};

// Nearest integer to sum/count with .5 rounded up. Exact integer arithmetic.
inline int round_half_up_mean(int sum, int count) {
  return static_cast<int>((2 * static_cast<std::int64_t>(sum) + count) / (2 * static_cast<std::int64_t>(count)));
}

// A value with strictly more than half of the votes wins. Otherwise the mean
// level rounded half-up is used, except that a mean strictly between 0 and 1
// becomes 1.
inline FusedLabel fuse_detailed(std::span<const int> levels) {
  if (levels.empty()) throw Error("label-fusion", "empty_input", "fusion needs at least one level");
  std::array<int, FearLevel::kCount> votes{};
  int sum = 0;
  for (int l : levels) {
    if (l < 0 || l > FearLevel::kMax) {
      throw Error("label-fusion", "invalid_level", "level " + std::to_string(l) + " outside [0, 5]");
    }
    ++votes[static_cast<std::size_t>(l)];
    sum += l;
  }
  FusedLabel out;
  out.annotator_levels.assign(levels.begin(), levels.end());
  const int n = static_cast<int>(levels.size());
  for (int l = 0; l < FearLevel::kCount; ++l) {
    if (2 * votes[static_cast<std::size_t>(l)] > n) {
      out.level = FearLevel(l);
      out.rule = FusionRule::majority;
      return out;
    }
  }
  out.rule = FusionRule::rounded_average;
  int level = round_half_up_mean(sum, n);
  if (sum > 0 && sum < n) level = 1;
  out.level = FearLevel(level);
  return out;
}

inline FearLevel fuse(std::span<const int> levels) { return fuse_detailed(levels).level; }

inline FearLevel fuse(std::initializer_list<int> levels) {
  return fuse(std::span<const int>(levels.begin(), levels.size()));
}

struct FrameAnnotations {
  std::int64_t frame = 0;
  std::vector<int> levels;  // one per roster entry, 0 outside every span
};

// Annotator roster in first-appearance order.
inline std::vector<std::string> roster_of(const std::vector<AnnotationSpan>& spans) {
  std::vector<std::string> roster;
  for (const auto& s : spans)
    if (std::find(roster.begin(), roster.end(), s.annotator_id) == roster.end()) roster.push_back(s.annotator_id);
  return roster;
}

// Frame f takes the level of the span covering its start time, with spans
// treated as [start, end).
inline std::vector<FrameAnnotations> spans_to_frames(const std::vector<AnnotationSpan>& spans,
                                                     const FrameClock& clock,
                                                     const std::vector<std::string>& annotators) {
  const auto count = static_cast<std::size_t>(clock.frame_count());
  std::vector<FrameAnnotations> out(count);
  for (std::size_t f = 0; f < count; ++f) {
    out[f].frame = static_cast<std::int64_t>(f);
    out[f].levels.assign(annotators.size(), 0);
  }
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < annotators.size(); ++i) column[annotators[i]] = i;
  for (const auto& s : spans) {
    const auto it = column.find(s.annotator_id);
    if (it == column.end()) continue;
    for (std::size_t f = 0; f < count; ++f) {
      const Millis t = clock.time_of(static_cast<std::int64_t>(f));
      if (t >= s.start && t < s.end) out[f].levels[it->second] = s.level;
    }
  }
  return out;
}

struct FrameLabels {
  std::vector<std::string> annotators;
  std::vector<FrameAnnotations> frames;
  std::vector<int> fused;
};

inline FrameLabels fuse_frames(const std::vector<AnnotationSpan>& spans, const FrameClock& clock,
                               std::vector<std::string> annotators) {
  FrameLabels out;
  out.frames = spans_to_frames(spans, clock, annotators);
  out.annotators = std::move(annotators);
  out.fused.reserve(out.frames.size());
  for (const auto& f : out.frames) {
    out.fused.push_back(f.levels.empty() ? 0 : fuse(f.levels).value());
  }
  return out;
}

// Column names for the label block: label_a, label_b, ... then label_fused.
inline std::vector<std::string> label_columns(std::size_t annotators) {
  std::vector<std::string> cols;
  for (std::size_t i = 0; i < annotators; ++i) {
    std::string name = "label_";
    if (i < 26) {
      name += static_cast<char>('a' + i);
    } else {
      name += std::to_string(i);
    }
    cols.push_back(name);
  }
  cols.emplace_back("label_fused");
  return cols;
}

inline void write_frame_labels(std::ostream& out, const FrameLabels& labels, const std::string& config_hash = {}) {
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
  out << "# annotators=";
  for (std::size_t i = 0; i < labels.annotators.size(); ++i) out << (i ? "," : "") << labels.annotators[i];
  out << "\nframe_index";
  for (const auto& c : label_columns(labels.annotators.size())) out << ',' << c;
  out << '\n';
  for (std::size_t f = 0; f < labels.frames.size(); ++f) {
    out << f;
    for (int l : labels.frames[f].levels) out << ',' << l;
    out << ',' << labels.fused[f] << '\n';
  }
}

}  // namespace vrfear
