#pragma once

// Readers and writers for the raw per-session streams:
//
//   keypoints  CSV  timestamp,x0,y0,z0,...,x24,y24,z24   (empty cell = missing joint)
//   physio     CSV  timestamp,heart_rate,breath_rate
//   annotations JSONL {"annotator_id":..,"start":..,"end":..,"level":..}
//   audio      RIFF/WAVE, 16-bit PCM, any channel count (downmixed by mean)
//
// Every CSV starts with a mandatory header row; lines starting with '#' are
// comments. Each text reader has a lenient form (`read_*`) that reports row
// issues next to the accepted rows, and a strict form (`parse_*`) that throws
// on the first issue.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <cstring>
#include <istream>
#include <iterator>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vrfear/core.hpp"
#include "vrfear/error.hpp"
#include "vrfear/text.hpp"

namespace vrfear {

struct Joint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  friend bool operator==(const Joint&, const Joint&) = default;
};

struct KeypointFrame {
  Millis timestamp = 0;
  std::array<std::optional<Joint>, kJointCount> joints{};

  bool complete() const {
    return std::all_of(joints.begin(), joints.end(), [](const auto& j) { return j.has_value(); });
  }
  friend bool operator==(const KeypointFrame&, const KeypointFrame&) = default;
};

struct AudioSignal {
  int sample_rate = 0;
  std::vector<double> samples;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
  friend bool operator==(const AudioSignal&, const AudioSignal&) = default;
};

struct PhysioSample {
  Millis timestamp = 0;
  double heart_rate = 0.0;
  double breath_rate = 0.0;
  friend bool operator==(const PhysioSample&, const PhysioSample&) = default;
};

struct AnnotationSpan {
  std::string annotator_id;
  Millis start = 0;
  Millis end = 0;
  int level = 1;
  friend bool operator==(const AnnotationSpan&, const AnnotationSpan&) = default;
};

inline bool spans_overlap(const AnnotationSpan& a, const AnnotationSpan& b) {
  return a.start < b.end && b.start < a.end;
}

struct RowIssue {
  std::int64_t line = 0;
  std::string message;
};

template <class T>
struct ParseReport {
  std::vector<T> rows;
  std::vector<RowIssue> issues;
  std::int64_t input_rows = 0;  // data rows seen, excluding header/comments/blank lines

  void throw_if_issues(const std::string& module) const {
    if (!issues.empty()) throw ParseError(module, issues.front().line, issues.front().message);
  }
};

namespace detail {

inline std::vector<std::string> keypoint_header() {
  std::vector<std::string> h{"timestamp"};
  for (int j = 0; j < kJointCount; ++j) {
    for (const char* axis : {"x", "y", "z"}) h.push_back(axis + std::to_string(j));
  }
  return h;
}

// Consumes comments and the header row; throws if the header is absent or wrong.
inline void expect_header(std::istream& in, std::int64_t& line_no,
                          const std::vector<std::string>& expected, const std::string& module) {
  std::string line;
  while (text::next_line(in, line, line_no)) {
    if (text::is_comment_or_blank(line)) continue;
    const auto cells = text::split(line);
    bool ok = cells.size() == expected.size();
    for (std::size_t i = 0; ok && i < cells.size(); ++i) ok = text::trim(cells[i]) == expected[i];
    if (!ok) throw ParseError(module, line_no, "missing or malformed header row");
    return;
  }
  throw ParseError(module, line_no, "empty input: header row required");
}

}  // namespace detail

inline ParseReport<KeypointFrame> read_keypoints(std::istream& in) {
  static const auto header = detail::keypoint_header();
  ParseReport<KeypointFrame> report;
  std::int64_t line_no = 0;
  detail::expect_header(in, line_no, header, "ingest");
  std::string line;
  std::optional<Millis> last;
  while (text::next_line(in, line, line_no)) {
    if (text::is_comment_or_blank(line)) continue;
    ++report.input_rows;
    const auto cells = text::split(line);
    if (cells.size() != header.size()) {
      report.issues.push_back({line_no, "expected " + std::to_string(header.size()) +
                                            " columns, found " + std::to_string(cells.size())});
      continue;
    }
    const auto ts = text::parse_int(cells[0]);
    if (!ts) {
      report.issues.push_back({line_no, "timestamp is not an integer"});
      continue;
    }
    KeypointFrame frame;
    frame.timestamp = *ts;
    std::optional<std::string> problem;
    for (int j = 0; j < kJointCount && !problem; ++j) {
      std::array<std::optional<double>, 3> xyz;
      int empty = 0;
      for (int a = 0; a < 3; ++a) {
        const auto cell = text::trim(cells[1 + 3 * j + a]);
        if (cell.empty()) {
          ++empty;
          continue;
        }
        xyz[a] = text::parse_double(cell);
        if (!xyz[a] || !std::isfinite(*xyz[a])) {
          problem = "non-numeric cell for joint " + std::to_string(j);
        }
      }
      if (problem) break;
      if (empty == 3) continue;
      if (empty != 0) {
        problem = "joint " + std::to_string(j) + " is partially missing";
        break;
      }
      frame.joints[j] = Joint{*xyz[0], *xyz[1], *xyz[2]};
    }
    if (problem) {
      report.issues.push_back({line_no, *problem});
      continue;
    }
    if (last && frame.timestamp <= *last) {
      report.issues.push_back({line_no, "non-monotonic timestamp " + std::to_string(frame.timestamp)});
      continue;
    }
    last = frame.timestamp;
    report.rows.push_back(frame);
  }
  return report;
}

inline std::vector<KeypointFrame> parse_keypoints(std::istream& in) {
  auto report = read_keypoints(in);
  report.throw_if_issues("ingest");
  return std::move(report.rows);
}

inline void write_keypoints(std::ostream& out, const std::vector<KeypointFrame>& frames) {
  const auto header = detail::keypoint_header();
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const auto& f : frames) {
    out << f.timestamp;
    for (const auto& j : f.joints) {
      if (j) {
        out << ',' << text::format_double(j->x) << ',' << text::format_double(j->y) << ','
            << text::format_double(j->z);
      } else {
        out << ",,,";
      }
    }
    out << '\n';
  }
}

inline ParseReport<PhysioSample> read_physio(std::istream& in) {
  ParseReport<PhysioSample> report;
  std::int64_t line_no = 0;
  detail::expect_header(in, line_no, {"timestamp", "heart_rate", "breath_rate"}, "ingest");
  std::string line;
  std::optional<Millis> last;
  while (text::next_line(in, line, line_no)) {
    if (text::is_comment_or_blank(line)) continue;
    ++report.input_rows;
    const auto cells = text::split(line);
    if (cells.size() != 3) {
      report.issues.push_back({line_no, "expected 3 columns, found " + std::to_string(cells.size())});
      continue;
    }
    const auto ts = text::parse_int(cells[0]);
    const auto hr = text::parse_double(cells[1]);
    const auto br = text::parse_double(cells[2]);
    if (!ts || !hr || !br || !std::isfinite(*hr) || !std::isfinite(*br)) {
      report.issues.push_back({line_no, "non-numeric cell"});
      continue;
    }
    if (*hr < 0.0) {
      report.issues.push_back({line_no, "negative heart rate"});
      continue;
    }
    if (*br < 0.0) {
      report.issues.push_back({line_no, "negative breath rate"});
      continue;
    }
    if (last && *ts <= *last) {
      report.issues.push_back({line_no, "non-increasing timestamp " + std::to_string(*ts)});
      continue;
    }
    last = *ts;
    report.rows.push_back({*ts, *hr, *br});
  }
  return report;
}

inline std::vector<PhysioSample> parse_physio(std::istream& in) {
  auto report = read_physio(in);
  report.throw_if_issues("ingest");
  return std::move(report.rows);
}

inline void write_physio(std::ostream& out, const std::vector<PhysioSample>& samples) {
  out << "timestamp,heart_rate,breath_rate\n";
  for (const auto& s : samples) {
    out << s.timestamp << ',' << text::format_double(s.heart_rate) << ','
        << text::format_double(s.breath_rate) << '\n';
  }
}

// Checks a span in isolation; returns the problem or nothing.
inline std::optional<std::string> span_problem(const AnnotationSpan& s) {
  if (s.annotator_id.empty()) return "empty annotator_id";
  if (s.level < 1 || s.level > FearLevel::kMax) {
    return "level " + std::to_string(s.level) + " outside [1, 5]";
  }
  if (s.start >= s.end) return "empty span: start must be before end";
  return std::nullopt;
}

inline ParseReport<AnnotationSpan> read_annotations(std::istream& in) {
  ParseReport<AnnotationSpan> report;
  std::map<std::string, std::vector<AnnotationSpan>> by_annotator;
  std::string line;
  std::int64_t line_no = 0;
  while (text::next_line(in, line, line_no)) {
    if (text::trim(line).empty()) continue;
    ++report.input_rows;
    AnnotationSpan span;
    try {
      const auto j = nlohmann::json::parse(line);
      span.annotator_id = j.at("annotator_id").get<std::string>();
      span.start = j.at("start").get<Millis>();
      span.end = j.at("end").get<Millis>();
      span.level = j.at("level").get<int>();
    } catch (const nlohmann::json::exception& e) {
      report.issues.push_back({line_no, std::string("malformed annotation: ") + e.what()});
      continue;
    }
    if (auto problem = span_problem(span)) {
      report.issues.push_back({line_no, *problem});
      continue;
    }
    auto& mine = by_annotator[span.annotator_id];
    const bool overlaps = std::any_of(mine.begin(), mine.end(),
                                      [&](const AnnotationSpan& o) { return spans_overlap(o, span); });
    if (overlaps) {
      report.issues.push_back({line_no, "overlaps an earlier span by annotator " + span.annotator_id});
      continue;
    }
    mine.push_back(span);
    report.rows.push_back(std::move(span));
  }
  return report;
}

inline std::vector<AnnotationSpan> parse_annotations(std::istream& in) {
  auto report = read_annotations(in);
  report.throw_if_issues("ingest");
  return std::move(report.rows);
}

inline nlohmann::json span_to_json(const AnnotationSpan& s) {
  return {{"annotator_id", s.annotator_id}, {"start", s.start}, {"end", s.end}, {"level", s.level}};
}

inline void write_annotations(std::ostream& out, const std::vector<AnnotationSpan>& spans) {
  for (const auto& s : spans) out << span_to_json(s).dump() << '\n';
}

namespace detail {

inline std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline AudioSignal parse_audio(std::span<const unsigned char> bytes) {
  const auto fail = [](const std::string& code, const std::string& msg) {
    return Error("ingest", code, "wav: " + msg);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw fail("not_wav", "missing RIFF/WAVE header");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t block_align = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = detail::le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) throw fail("truncated", "short fmt chunk");
      const unsigned char* f = bytes.data() + body;
      std::uint16_t tag = detail::le16(f);
      channels = detail::le16(f + 2);
      rate = detail::le32(f + 4);
      block_align = detail::le16(f + 12);
      const std::uint16_t bits = detail::le16(f + 14);
      if (tag == 0xFFFE && size >= 40) tag = detail::le16(f + 24);  // extensible: sub-format GUID
      if (tag != 1) throw fail("unsupported_encoding", "format tag " + std::to_string(tag) + " is not PCM");
      if (bits != 16) throw fail("unsupported_encoding", std::to_string(bits) + "-bit PCM not supported");
      if (channels == 0 || rate == 0 || block_align != 2 * channels) {
        throw fail("invalid_format", "inconsistent fmt chunk");
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw fail("invalid_format", "data chunk before fmt chunk");
      if (body + size > bytes.size()) throw fail("truncated", "data chunk shorter than declared");
      if (size % block_align != 0) throw fail("truncated", "data chunk ends mid-frame");
      AudioSignal signal;
      signal.sample_rate = static_cast<int>(rate);
      const std::size_t frames = size / block_align;
      signal.samples.resize(frames);
      const unsigned char* d = bytes.data() + body;
      for (std::size_t i = 0; i < frames; ++i) {
        double sum = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) {
          const auto raw = static_cast<std::int16_t>(detail::le16(d + 2 * (i * channels + c)));
          sum += static_cast<double>(raw) / 32768.0;
        }
        signal.samples[i] = sum / channels;
      }
      if (signal.samples.empty()) throw fail("empty", "no samples");
      return signal;
    }
    pos = body + size + (size & 1U);
  }
  throw fail("truncated", "no data chunk");
}

inline AudioSignal parse_audio(std::istream& in) {
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  return parse_audio(std::span<const unsigned char>(bytes));
}

// Writes mono 16-bit PCM. Samples are quantized as round(x * 32768), clamped.
inline void write_wav(std::ostream& out, const AudioSignal& signal) {
  const auto put16 = [&](std::uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
    out.write(b, 2);
  };
  const auto put32 = [&](std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                       static_cast<char>((v >> 16) & 0xFF), static_cast<char>(v >> 24)};
    out.write(b, 4);
  };
  const auto data_bytes = static_cast<std::uint32_t>(signal.samples.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(signal.sample_rate));
  put32(static_cast<std::uint32_t>(signal.sample_rate) * 2);
  put16(2);
  put16(16);
  out.write("data", 4);
  put32(data_bytes);
  for (double x : signal.samples) {
    const double q = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
}

// Merges a second track into the first by sample-wise mean over their common length.
inline AudioSignal mix_tracks(const AudioSignal& a, const AudioSignal& b) {
  if (a.sample_rate != b.sample_rate) {
    throw Error("ingest", "sample_rate_mismatch", "audio tracks have different sample rates");
  }
  AudioSignal out;
  out.sample_rate = a.sample_rate;
  const std::size_t n = std::min(a.samples.size(), b.samples.size());
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = 0.5 * (a.samples[i] + b.samples[i]);
  return out;
}

}  // namespace vrfear
