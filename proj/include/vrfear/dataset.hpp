#pragma once

// The 61-column feature table, length-l windows over it, train/validation/test
// splits, feature normalization and per-level class statistics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vrfear/align.hpp"
#include "vrfear/audio_features.hpp"
#include "vrfear/core.hpp"
#include "vrfear/error.hpp"
#include "vrfear/labels.hpp"
#include "vrfear/random.hpp"
#include "vrfear/skeleton.hpp"
#include "vrfear/text.hpp"

namespace vrfear {

inline constexpr int kSkeletonFeatureDims = 33;
inline constexpr int kPhysioDims = 2;
inline constexpr int kFeatureDims = kSkeletonFeatureDims + kAudioFeatureDims + kPhysioDims;
static_assert(kFeatureDims == 61);

using FeatureRow = std::array<double, kFeatureDims>;

struct FeatureFrame {
  std::int64_t frame = 0;
  FeatureRow features{};            // s0..s32, a0..a25, hr, br
  std::vector<int> annotator_levels;
  int label = 0;                    // fused level
  friend bool operator==(const FeatureFrame&, const FeatureFrame&) = default;
};

struct SessionTable {
  std::string session_id;
  std::vector<std::string> annotators;
  std::vector<FeatureFrame> frames;
};

inline std::vector<std::string> feature_columns() {
  std::vector<std::string> cols;
  for (int i = 0; i < kSkeletonFeatureDims; ++i) cols.push_back("s" + std::to_string(i));
  for (int i = 0; i < kAudioFeatureDims; ++i) cols.push_back("a" + std::to_string(i));
  cols.emplace_back("hr");
  cols.emplace_back("br");
  return cols;
}

// Joins the per-frame modality blocks and labels into feature frames.
inline std::vector<FeatureFrame> assemble_frames(const RowMatrix& skeleton, std::span<const AudioFeatureRow> audio,
                                                 const PhysioTrack& physio, const FrameLabels& labels) {
  const std::size_t n = skeleton.rows;
  if (skeleton.cols != static_cast<std::size_t>(kSkeletonFeatureDims) || audio.size() != n ||
      physio.heart_rate.size() != n || physio.breath_rate.size() != n || labels.fused.size() != n) {
    throw Error("sequence-dataset", "shape_mismatch", "modality blocks disagree on frame count or width");
  }
  std::vector<FeatureFrame> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& f = out[i];
    f.frame = static_cast<std::int64_t>(i);
    const auto s = skeleton.row(i);
    std::copy(s.begin(), s.end(), f.features.begin());
    std::copy(audio[i].begin(), audio[i].end(), f.features.begin() + kSkeletonFeatureDims);
    f.features[kFeatureDims - 2] = physio.heart_rate[i];
    f.features[kFeatureDims - 1] = physio.breath_rate[i];
    f.annotator_levels = labels.frames[i].levels;
    f.label = labels.fused[i];
    for (double v : f.features) {
      if (!std::isfinite(v)) {
        throw Error("sequence-dataset", "non_finite", "non-finite feature at frame " + std::to_string(i));
      }
    }
  }
  return out;
}

inline void write_session_table(std::ostream& out, const SessionTable& table, const std::string& config_hash = {}) {
  if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
  out << "# session_id=" << table.session_id << " annotators=";
  for (std::size_t i = 0; i < table.annotators.size(); ++i) out << (i ? "," : "") << table.annotators[i];
  out << "\nframe_index";
  for (const auto& c : feature_columns()) out << ',' << c;
  for (const auto& c : label_columns(table.annotators.size())) out << ',' << c;
  out << '\n';
  for (const auto& f : table.frames) {
    out << f.frame;
    for (double v : f.features) out << ',' << text::format_double(v);
    for (int l : f.annotator_levels) out << ',' << l;
    out << ',' << f.label << '\n';
  }
}

inline SessionTable read_session_table(std::istream& in, std::string session_id = {}) {
  SessionTable t;
  t.session_id = std::move(session_id);
  std::string line;
  std::int64_t line_no = 0;
  std::vector<std::string_view> header;
  std::string header_line;
  std::vector<std::string> named;
  while (text::next_line(in, line, line_no)) {
    if (const auto pos = line.find(" annotators="); line.rfind("# session_id=", 0) == 0 && pos != std::string::npos) {
      for (auto a : text::split(std::string_view(line).substr(pos + 12))) named.emplace_back(a);
    }
    if (text::is_comment_or_blank(line)) continue;
    header_line = line;
    break;
  }
  if (header_line.empty()) throw ParseError("sequence-dataset", line_no, "missing header row");
  const auto cells = text::split(header_line);
  const auto features = feature_columns();
  if (cells.size() < 2 + features.size() || cells[0] != "frame_index" || cells.back() != "label_fused") {
    throw ParseError("sequence-dataset", line_no, "malformed dataset header");
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (cells[1 + i] != features[i]) throw ParseError("sequence-dataset", line_no, "unexpected column " + std::string(cells[1 + i]));
  }
  const std::size_t annotators = cells.size() - 2 - features.size();
  if (named.size() == annotators) {
    t.annotators = std::move(named);
  } else {
    for (std::size_t i = 0; i < annotators; ++i) t.annotators.emplace_back(cells[1 + features.size() + i]);
  }
  while (text::next_line(in, line, line_no)) {
    if (text::is_comment_or_blank(line)) continue;
    const auto row = text::split(line);
    if (row.size() != cells.size()) throw ParseError("sequence-dataset", line_no, "wrong column count");
    FeatureFrame f;
    const auto idx = text::parse_int(row[0]);
    if (!idx) throw ParseError("sequence-dataset", line_no, "bad frame_index");
    f.frame = *idx;
    for (std::size_t i = 0; i < features.size(); ++i) {
      const auto v = text::parse_double(row[1 + i]);
      if (!v) throw ParseError("sequence-dataset", line_no, "non-numeric feature");
      f.features[i] = *v;
    }
    for (std::size_t i = 0; i < annotators; ++i) {
      const auto l = text::parse_int(row[1 + features.size() + i]);
      if (!l || *l < 0 || *l > FearLevel::kMax) throw ParseError("sequence-dataset", line_no, "bad annotator level");
      f.annotator_levels.push_back(static_cast<int>(*l));
    }
    const auto fused = text::parse_int(row.back());
    if (!fused || *fused < 0 || *fused > FearLevel::kMax) throw ParseError("sequence-dataset", line_no, "bad fused label");
    f.label = static_cast<int>(*fused);
    t.frames.push_back(std::move(f));
  }
  return t;
}

// A window of `length` consecutive frames of one session, labelled by the
// fused level of its first frame.
struct WindowRef {
  std::size_t session = 0;
  std::size_t start = 0;
  int target = 0;
  friend bool operator==(const WindowRef&, const WindowRef&) = default;
};

struct SequenceSample {
  RowMatrix features;  // length x 61
  int target = 0;
};

inline std::vector<WindowRef> window(std::span<const SessionTable> sessions, std::size_t length = 16,
                                     std::size_t stride = 1) {
  if (length == 0 || stride == 0) throw Error("sequence-dataset", "invalid_window", "length and stride must be positive");
  std::vector<WindowRef> out;
  for (std::size_t s = 0; s < sessions.size(); ++s) {
    const auto& frames = sessions[s].frames;
    if (frames.size() < length) {
      throw Error("sequence-dataset", "session_too_short",
                  "session " + sessions[s].session_id + " has " + std::to_string(frames.size()) +
                      " frames, fewer than the sequence length " + std::to_string(length));
    }
    for (std::size_t start = 0; start + length <= frames.size(); start += stride) {
      out.push_back({s, start, frames[start].label});
    }
  }
  return out;
}

inline SequenceSample materialize(std::span<const SessionTable> sessions, const WindowRef& ref, std::size_t length) {
  SequenceSample s;
  s.features = RowMatrix(length, kFeatureDims);
  const auto& frames = sessions[ref.session].frames;
  for (std::size_t t = 0; t < length; ++t) {
    const auto& row = frames[ref.start + t].features;
    std::copy(row.begin(), row.end(), s.features.row(t).begin());
  }
  s.target = ref.target;
  return s;
}

enum class SplitMode { per_sample, per_session };

struct SplitSpec {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;
  SplitMode mode = SplitMode::per_sample;
};

inline void to_json(nlohmann::json& j, const SplitSpec& s) {
  j = {{"train", s.train},
       {"validation", s.validation},
       {"test", s.test},
       {"seed", s.seed},
       {"mode", s.mode == SplitMode::per_sample ? "per_sample" : "per_session"}};
}

inline void from_json(const nlohmann::json& j, SplitSpec& s) {
  s.train = j.value("train", s.train);
  s.validation = j.value("validation", s.validation);
  s.test = j.value("test", s.test);
  s.seed = j.value("seed", s.seed);
  const auto mode = j.value("mode", std::string(s.mode == SplitMode::per_sample ? "per_sample" : "per_session"));
  if (mode == "per_sample") {
    s.mode = SplitMode::per_sample;
  } else if (mode == "per_session") {
    s.mode = SplitMode::per_session;
  } else {
    throw Error("sequence-dataset", "invalid_split", "unknown split mode '" + mode + "'");
  }
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

inline std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

// Split sizes. Per sample: train and validation get round(fraction * n), test
// takes the rest. Per session: validation and test each get
// max(1, round(fraction * sessions)), train takes the rest.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitSpec& spec) {
  if (spec.mode == SplitMode::per_sample) {
    const std::size_t train = std::min(n, round_half_up(spec.train * static_cast<double>(n)));
    const std::size_t val = std::min(n - train, round_half_up(spec.validation * static_cast<double>(n)));
    return {train, val, n - train - val};
  }
  const std::size_t val = std::max<std::size_t>(1, round_half_up(spec.validation * static_cast<double>(n)));
  const std::size_t test = std::max<std::size_t>(1, round_half_up(spec.test * static_cast<double>(n)));
  return {n >= val + test ? n - val - test : 0, val, test};
}

inline Split split(std::span<const WindowRef> samples, const SplitSpec& spec) {
  if (std::abs(spec.train + spec.validation + spec.test - 1.0) > 1e-9 || spec.train < 0 || spec.validation < 0 ||
      spec.test < 0) {
    throw Error("sequence-dataset", "invalid_split", "split fractions must be nonnegative and sum to 1");
  }
  if (samples.size() < 10) throw Error("sequence-dataset", "too_few_samples", "splitting needs at least 10 samples");
  Rng rng(spec.seed);
  Split out;
  if (spec.mode == SplitMode::per_sample) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    const auto sizes = split_sizes(order.size(), spec);
    out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
    out.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                          order.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
    out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), order.end());
  } else {
    std::vector<std::size_t> sessions;
    for (const auto& s : samples)
      if (std::find(sessions.begin(), sessions.end(), s.session) == sessions.end()) sessions.push_back(s.session);
    std::sort(sessions.begin(), sessions.end());
    rng.shuffle(std::span<std::size_t>(sessions));
    const auto sizes = split_sizes(sessions.size(), spec);
    std::map<std::size_t, int> assignment;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      assignment[sessions[i]] = i < sizes[0] ? 0 : (i < sizes[0] + sizes[1] ? 1 : 2);
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const int which = assignment[samples[i].session];
      (which == 0 ? out.train : which == 1 ? out.validation : out.test).push_back(i);
    }
  }
  if (out.train.empty() || out.validation.empty() || out.test.empty()) {
    throw Error("sequence-dataset", "empty_split", "split produced an empty train, validation or test set");
  }
  return out;
}

// Per-column z-score transform.
struct Normalizer {
  FeatureRow mean{};
  FeatureRow stddev{};

  void apply(std::span<double> row) const {
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - mean[c % kFeatureDims]) / stddev[c % kFeatureDims];
  }
};

inline Normalizer identity_normalizer() {
  Normalizer n;
  n.mean.fill(0.0);
  n.stddev.fill(1.0);
  return n;
}

// Statistics over the distinct frames covered by the given windows. Columns
// with zero spread keep a unit divisor.
inline Normalizer fit_normalizer(std::span<const SessionTable> sessions, std::span<const WindowRef> windows,
                                 std::span<const std::size_t> members, std::size_t length) {
  std::set<std::pair<std::size_t, std::size_t>> frames;
  for (std::size_t idx : members) {
    const auto& w = windows[idx];
    for (std::size_t t = 0; t < length; ++t) frames.emplace(w.session, w.start + t);
  }
  Normalizer n;
  n.mean.fill(0.0);
  n.stddev.fill(0.0);
  if (frames.empty()) return identity_normalizer();
  for (const auto& [s, f] : frames)
    for (int c = 0; c < kFeatureDims; ++c) n.mean[c] += sessions[s].frames[f].features[c];
  for (double& m : n.mean) m /= static_cast<double>(frames.size());
  for (const auto& [s, f] : frames) {
    for (int c = 0; c < kFeatureDims; ++c) {
      const double d = sessions[s].frames[f].features[c] - n.mean[c];
      n.stddev[c] += d * d;
    }
  }
  for (double& sd : n.stddev) {
    sd = std::sqrt(sd / static_cast<double>(frames.size()));
    if (!(sd > 1e-12)) sd = 1.0;
  }
  return n;
}

inline nlohmann::json normalizer_to_json(const Normalizer& n) {
  return {{"mean", n.mean}, {"stddev", n.stddev}};
}

inline Normalizer normalizer_from_json(const nlohmann::json& j) {
  Normalizer n;
  n.mean = j.at("mean").get<FeatureRow>();
  n.stddev = j.at("stddev").get<FeatureRow>();
  return n;
}

// In-memory windows, row-major (length x dims) each.
class SampleSet {
 public:
  SampleSet(std::size_t length, std::size_t dims) : length_(length), dims_(dims) {}

  void add(std::span<const double> window, int target) {
    if (window.size() != length_ * dims_) throw Error("sequence-dataset", "shape_mismatch", "window has the wrong size");
    data_.insert(data_.end(), window.begin(), window.end());
    targets_.push_back(target);
  }

  std::size_t size() const { return targets_.size(); }
  int target(std::size_t i) const { return targets_[i]; }
  void fill(std::size_t i, std::span<double> out) const {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(i * length_ * dims_), length_ * dims_, out.begin());
  }
  std::size_t length() const { return length_; }
  std::size_t dims() const { return dims_; }

  SampleSet subset(std::span<const std::size_t> members) const {
    SampleSet out(length_, dims_);
    for (std::size_t i : members) {
      out.add(std::span<const double>(data_).subspan(i * length_ * dims_, length_ * dims_), targets_[i]);
    }
    return out;
  }

 private:
  std::size_t length_;
  std::size_t dims_;
  std::vector<double> data_;
  std::vector<int> targets_;
};

// A subset of the windows over session tables, normalized on the fly.
class WindowSource {
 public:
  WindowSource(std::span<const SessionTable> sessions, std::span<const WindowRef> windows,
               std::vector<std::size_t> members, std::size_t length, Normalizer normalizer)
      : sessions_(sessions), windows_(windows), members_(std::move(members)), length_(length),
        normalizer_(normalizer) {}

  std::size_t size() const { return members_.size(); }
  int target(std::size_t i) const { return windows_[members_[i]].target; }
  void fill(std::size_t i, std::span<double> out) const {
    const auto& w = windows_[members_[i]];
    const auto& frames = sessions_[w.session].frames;
    for (std::size_t t = 0; t < length_; ++t) {
      auto row = out.subspan(t * kFeatureDims, kFeatureDims);
      const auto& src = frames[w.start + t].features;
      std::copy(src.begin(), src.end(), row.begin());
      normalizer_.apply(row);
    }
  }
  const WindowRef& ref(std::size_t i) const { return windows_[members_[i]]; }

 private:
  std::span<const SessionTable> sessions_;
  std::span<const WindowRef> windows_;
  std::vector<std::size_t> members_;
  std::size_t length_;
  Normalizer normalizer_;
};

// ---------------------------------------------------------------------------
// Class statistics

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 with fewer than 2 values
  std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

struct LevelStats {
  std::size_t count = 0;
  double ratio = 0.0;
  MeanStd heart_rate;
  MeanStd breath_rate;
  MeanStd acceleration;
};

struct ClassStats {
  std::size_t total = 0;
  std::array<LevelStats, FearLevel::kCount> levels{};
  std::array<LevelStats, 2> binary{};
};

// Inputs for one session: fused labels, per-frame physiology and raw poses.
struct StatsSession {
  std::vector<int> labels;
  PhysioTrack physio;
  std::vector<Skeleton> keypoints;
  double frame_rate = 30.0;
};

// Mean over joints of |p[t+1] - 2 p[t] + p[t-1]| * fps^2, in coordinate units
// per second squared. Undefined (nullopt) for the first and last frame.
inline std::vector<std::optional<double>> acceleration_magnitudes(std::span<const Skeleton> poses, double fps) {
  std::vector<std::optional<double>> out(poses.size());
  for (std::size_t t = 1; t + 1 < poses.size(); ++t) {
    double sum = 0.0;
    for (int j = 0; j < kJointCount; ++j) {
      double sq = 0.0;
      for (int a = 0; a < 3; ++a) {
        const std::size_t c = static_cast<std::size_t>(3 * j + a);
        const double d = poses[t + 1][c] - 2.0 * poses[t][c] + poses[t - 1][c];
        sq += d * d;
      }
      sum += std::sqrt(sq);
    }
    out[t] = sum / kJointCount * fps * fps;
  }
  return out;
}

inline ClassStats class_stats(std::span<const StatsSession> sessions) {
  std::array<std::vector<double>, FearLevel::kCount> hr, br, acc;
  std::array<std::vector<double>, 2> bhr, bbr, bacc;
  ClassStats out;
  for (const auto& s : sessions) {
    const std::size_t n = s.labels.size();
    if (s.physio.heart_rate.size() != n || s.physio.breath_rate.size() != n ||
        (!s.keypoints.empty() && s.keypoints.size() != n)) {
      throw Error("sequence-dataset", "shape_mismatch", "class_stats inputs disagree on frame count");
    }
    const auto accel = acceleration_magnitudes(s.keypoints, s.frame_rate);
    for (std::size_t i = 0; i < n; ++i) {
      const int l = s.labels[i];
      if (l < 0 || l > FearLevel::kMax) throw Error("sequence-dataset", "invalid_level", "label outside [0, 5]");
      const auto b = static_cast<std::size_t>(binarize(FearLevel(l)).value());
      ++out.total;
      ++out.levels[static_cast<std::size_t>(l)].count;
      ++out.binary[b].count;
      hr[static_cast<std::size_t>(l)].push_back(s.physio.heart_rate[i]);
      br[static_cast<std::size_t>(l)].push_back(s.physio.breath_rate[i]);
      bhr[b].push_back(s.physio.heart_rate[i]);
      bbr[b].push_back(s.physio.breath_rate[i]);
      if (!accel.empty() && accel[i]) {
        acc[static_cast<std::size_t>(l)].push_back(*accel[i]);
        bacc[b].push_back(*accel[i]);
      }
    }
  }
  const auto finish = [&](LevelStats& ls, const std::vector<double>& h, const std::vector<double>& r,
                          const std::vector<double>& a) {
    ls.ratio = out.total ? static_cast<double>(ls.count) / static_cast<double>(out.total) : 0.0;
    ls.heart_rate = mean_std(h);
    ls.breath_rate = mean_std(r);
    ls.acceleration = mean_std(a);
  };
  for (std::size_t l = 0; l < out.levels.size(); ++l) finish(out.levels[l], hr[l], br[l], acc[l]);
  for (std::size_t b = 0; b < 2; ++b) finish(out.binary[b], bhr[b], bbr[b], bacc[b]);
  return out;
}

inline nlohmann::json class_stats_to_json(const ClassStats& s) {
  const auto level = [](const LevelStats& l) {
    const auto ms = [](const MeanStd& m) { return nlohmann::json{{"mean", m.mean}, {"std", m.stddev}, {"n", m.n}}; };
    return nlohmann::json{{"count", l.count},
                          {"ratio", l.ratio},
                          {"heart_rate", ms(l.heart_rate)},
                          {"breath_rate", ms(l.breath_rate)},
                          {"acceleration", ms(l.acceleration)}};
  };
  nlohmann::json j{{"total", s.total}, {"levels", nlohmann::json::array()}, {"binary", nlohmann::json::array()}};
  for (const auto& l : s.levels) j["levels"].push_back(level(l));
  for (const auto& l : s.binary) j["binary"].push_back(level(l));
  return j;
}

}  // namespace vrfear
