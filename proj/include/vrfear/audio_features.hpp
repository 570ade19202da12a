#pragma once

// Framewise audio descriptors: zero-crossing rate, spectral centroid,
// bandwidth and rolloff, mean chroma, RMS energy and 20 MFCCs (26 values).

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vrfear/core.hpp"
#include "vrfear/error.hpp"
#include "vrfear/ingest.hpp"

namespace vrfear {

inline constexpr int kMfccCount = 20;
inline constexpr int kAudioFeatureDims = 6 + kMfccCount;

struct AudioFeatureConfig {
  int window = 2048;
  int hop = 512;
  double rolloff_fraction = 0.85;
  int mel_bands = 40;
  double log_floor = 1e-10;
  double chroma_min_hz = 32.703195662574829;  // C1

  friend bool operator==(const AudioFeatureConfig&, const AudioFeatureConfig&) = default;
};

inline void to_json(nlohmann::json& j, const AudioFeatureConfig& c) {
  j = {{"window", c.window},       {"hop", c.hop},
       {"rolloff_fraction", c.rolloff_fraction}, {"mel_bands", c.mel_bands},
       {"log_floor", c.log_floor}, {"chroma_min_hz", c.chroma_min_hz},
       {"mfcc", kMfccCount},       {"window_function", "hann"}};
}

inline void from_json(const nlohmann::json& j, AudioFeatureConfig& c) {
  c.window = j.value("window", c.window);
  c.hop = j.value("hop", c.hop);
  c.rolloff_fraction = j.value("rolloff_fraction", c.rolloff_fraction);
  c.mel_bands = j.value("mel_bands", c.mel_bands);
  c.log_floor = j.value("log_floor", c.log_floor);
  c.chroma_min_hz = j.value("chroma_min_hz", c.chroma_min_hz);
}

struct AudioFeatureFrame {
  double zcr = 0.0;
  double spectral_centroid = 0.0;
  double spectral_bandwidth = 0.0;
  double spectral_rolloff = 0.0;
  double chroma_mean = 0.0;
  double rmse = 0.0;
  std::array<double, kMfccCount> mfcc{};

  // Column order a0..a25 of the dataset.
  std::array<double, kAudioFeatureDims> values() const {
    std::array<double, kAudioFeatureDims> v{};
    v[0] = zcr;
    v[1] = spectral_centroid;
    v[2] = spectral_bandwidth;
    v[3] = spectral_rolloff;
    v[4] = chroma_mean;
    v[5] = rmse;
    std::copy(mfcc.begin(), mfcc.end(), v.begin() + 6);
    return v;
  }
};

inline std::array<std::string, kAudioFeatureDims> audio_feature_names() {
  std::array<std::string, kAudioFeatureDims> n{"zcr", "spectral_centroid", "spectral_bandwidth",
                                               "spectral_rolloff", "chroma_mean", "rmse"};
  for (int i = 0; i < kMfccCount; ++i) n[6 + i] = "mfcc" + std::to_string(i);
  return n;
}

// In-place iterative radix-2 FFT.
inline void fft(std::span<std::complex<double>> x) {
  const std::size_t n = x.size();
  if (n == 0 || !std::has_single_bit(n)) {
    throw Error("audio-features", "not_power_of_two", "FFT length must be a power of two");
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w = std::polar(1.0, angle * static_cast<double>(k));
        const std::complex<double> u = x[i + k];
        const std::complex<double> v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
      }
    }
  }
}

inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Hann-windowed analysis slices starting every `hop` samples; the tail slices
// are zero-padded. Yields ceil(len / hop) slices.
inline std::vector<std::vector<double>> analysis_frames(const AudioSignal& signal, int window, int hop) {
  if (hop < 1 || window < hop) {
    throw Error("audio-features", "invalid_framing", "need window >= hop >= 1");
  }
  if (signal.samples.empty()) throw Error("audio-features", "empty_signal", "audio signal is empty");
  const auto w = hann_window(static_cast<std::size_t>(window));
  const std::size_t n = signal.samples.size();
  const std::size_t count = (n + hop - 1) / hop;
  std::vector<std::vector<double>> out(count, std::vector<double>(window, 0.0));
  for (std::size_t f = 0; f < count; ++f) {
    const std::size_t begin = f * hop;
    for (std::size_t i = 0; i < static_cast<std::size_t>(window) && begin + i < n; ++i) {
      out[f][i] = signal.samples[begin + i] * w[i];
    }
  }
  return out;
}

// Precomputed filterbanks for one (window length, sample rate) pair.
class AudioFeatureExtractor {
 public:
  AudioFeatureExtractor(int sample_rate, const AudioFeatureConfig& config = {})
      : config_(config), sample_rate_(sample_rate) {
    if (sample_rate <= 0) throw Error("audio-features", "invalid_rate", "sample rate must be positive");
    const auto n = static_cast<std::size_t>(config.window);
    if (n < 2 || !std::has_single_bit(n)) {
      throw Error("audio-features", "not_power_of_two", "analysis window must be a power of two");
    }
    if (config.mel_bands < kMfccCount) {
      throw Error("audio-features", "invalid_config", "need at least as many mel bands as MFCCs");
    }
    bins_ = n / 2 + 1;
    freqs_.resize(bins_);
    for (std::size_t k = 0; k < bins_; ++k) freqs_[k] = static_cast<double>(k) * sample_rate / static_cast<double>(n);
    hann_ = hann_window(n);
    build_mel();
    build_dct();
    build_chroma();
  }

  const AudioFeatureConfig& config() const { return config_; }
  int sample_rate() const { return sample_rate_; }
  double nyquist() const { return sample_rate_ / 2.0; }

  // Features of one slice as given (no window applied here). Slices shorter
  // than the configured window are zero-padded.
  AudioFeatureFrame compute(std::span<const double> x) const {
    const auto n = static_cast<std::size_t>(config_.window);
    if (x.size() > n) throw Error("audio-features", "window_too_long", "slice longer than configured window");
    AudioFeatureFrame f;

    std::size_t crossings = 0;
    double energy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      energy += x[i] * x[i];
      if (i + 1 < x.size() && ((x[i] >= 0.0) != (x[i + 1] >= 0.0))) ++crossings;
    }
    f.zcr = x.size() > 1 ? static_cast<double>(crossings) / static_cast<double>(x.size() - 1) : 0.0;
    f.rmse = x.empty() ? 0.0 : std::sqrt(energy / static_cast<double>(x.size()));

    std::vector<std::complex<double>> spec(n);
    for (std::size_t i = 0; i < x.size(); ++i) spec[i] = x[i];
    fft(spec);
    std::vector<double> mag(bins_);
    std::vector<double> power(bins_);
    double mag_total = 0.0;
    for (std::size_t k = 0; k < bins_; ++k) {
      mag[k] = std::abs(spec[k]);
      power[k] = mag[k] * mag[k];
      mag_total += mag[k];
    }

    if (mag_total > 0.0) {
      double weighted = 0.0;
      for (std::size_t k = 0; k < bins_; ++k) weighted += freqs_[k] * mag[k];
      f.spectral_centroid = weighted / mag_total;
      double spread = 0.0;
      for (std::size_t k = 0; k < bins_; ++k) {
        const double d = freqs_[k] - f.spectral_centroid;
        spread += d * d * mag[k];
      }
      f.spectral_bandwidth = std::sqrt(spread / mag_total);
      const double threshold = config_.rolloff_fraction * mag_total;
      double cumulative = 0.0;
      f.spectral_rolloff = freqs_.back();
      for (std::size_t k = 0; k < bins_; ++k) {
        cumulative += mag[k];
        if (cumulative >= threshold) {
          f.spectral_rolloff = freqs_[k];
          break;
        }
      }
      std::array<double, 12> chroma{};
      for (std::size_t k = 0; k < bins_; ++k)
        if (chroma_class_[k] >= 0) chroma[static_cast<std::size_t>(chroma_class_[k])] += power[k];
      const double peak = *std::max_element(chroma.begin(), chroma.end());
      if (peak > 0.0) {
        double sum = 0.0;
        for (double c : chroma) sum += c / peak;
        f.chroma_mean = sum / 12.0;
      }
    }

    const auto bands = static_cast<std::size_t>(config_.mel_bands);
    std::vector<double> log_mel(bands);
    for (std::size_t m = 0; m < bands; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins_; ++k) e += mel_[m * bins_ + k] * power[k];
      log_mel[m] = std::log(std::max(e, config_.log_floor));
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(kMfccCount); ++c) {
      double acc = 0.0;
      for (std::size_t m = 0; m < bands; ++m) acc += dct_[c * bands + m] * log_mel[m];
      f.mfcc[c] = acc;
    }
    return f;
  }

  // Windows the slice with Hann before computing features.
  AudioFeatureFrame compute_windowed(std::span<const double> raw) const {
    std::vector<double> buf(static_cast<std::size_t>(config_.window), 0.0);
    for (std::size_t i = 0; i < raw.size() && i < buf.size(); ++i) buf[i] = raw[i] * hann_[i];
    return compute(buf);
  }

 private:
  void build_mel() {
    const auto bands = static_cast<std::size_t>(config_.mel_bands);
    mel_.assign(bands * bins_, 0.0);
    const double top = hz_to_mel(nyquist());
    std::vector<double> edges(bands + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
      edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(bands + 1));
    }
    for (std::size_t m = 0; m < bands; ++m) {
      const double lo = edges[m];
      const double mid = edges[m + 1];
      const double hi = edges[m + 2];
      for (std::size_t k = 0; k < bins_; ++k) {
        const double f = freqs_[k];
        const double w = std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid));
        mel_[m * bins_ + k] = std::max(0.0, w);
      }
    }
  }

  // Orthonormal DCT-II rows 0..19 over the mel bands.
  void build_dct() {
    const auto bands = static_cast<std::size_t>(config_.mel_bands);
    dct_.assign(static_cast<std::size_t>(kMfccCount) * bands, 0.0);
    for (std::size_t c = 0; c < static_cast<std::size_t>(kMfccCount); ++c) {
      const double scale = std::sqrt((c == 0 ? 1.0 : 2.0) / static_cast<double>(bands));
      for (std::size_t m = 0; m < bands; ++m) {
        dct_[c * bands + m] =
            scale * std::cos(std::numbers::pi * static_cast<double>(c) * (2.0 * static_cast<double>(m) + 1.0) /
                             (2.0 * static_cast<double>(bands)));
      }
    }
  }

  void build_chroma() {
    chroma_class_.assign(bins_, -1);
    for (std::size_t k = 1; k < bins_; ++k) {
      if (freqs_[k] < config_.chroma_min_hz) continue;
      const double midi = 69.0 + 12.0 * std::log2(freqs_[k] / 440.0);
      const long pc = std::lround(midi) % 12;
      chroma_class_[k] = static_cast<int>((pc + 12) % 12);
    }
  }

  AudioFeatureConfig config_;
  int sample_rate_ = 0;
  std::size_t bins_ = 0;
  std::vector<double> freqs_;
  std::vector<double> hann_;
  std::vector<double> mel_;
  std::vector<double> dct_;
  std::vector<int> chroma_class_;
};

inline AudioFeatureFrame feature_vector(std::span<const double> window, int sample_rate,
                                        const AudioFeatureConfig& config = {}) {
  AudioFeatureConfig c = config;
  c.window = static_cast<int>(window.size());
  return AudioFeatureExtractor(sample_rate, c).compute(window);
}

using AudioFeatureRow = std::array<double, kAudioFeatureDims>;

// One feature row per video frame: the mean of all analysis frames whose start
// falls in that frame's interval. A frame that receives none copies the
// nearest preceding frame (or the first following one at the very start).
inline std::vector<AudioFeatureRow> framewise_audio(const AudioSignal& signal, const FrameClock& clock,
                                                    const AudioFeatureConfig& config = {},
                                                    std::optional<Millis> audio_start_ms = std::nullopt) {
  const AudioFeatureExtractor extractor(signal.sample_rate, config);
  if (config.hop < 1 || config.window < config.hop) {
    throw Error("audio-features", "invalid_framing", "need window >= hop >= 1");
  }
  if (signal.samples.empty()) throw Error("audio-features", "empty_signal", "audio signal is empty");
  const auto frames = static_cast<std::size_t>(clock.frame_count());
  std::vector<AudioFeatureRow> sums(frames, AudioFeatureRow{});
  std::vector<int> counts(frames, 0);

  const double start = static_cast<double>(audio_start_ms.value_or(clock.start_ms()));
  const std::size_t n = signal.samples.size();
  const std::size_t analysis = (n + config.hop - 1) / config.hop;
  for (std::size_t a = 0; a < analysis; ++a) {
    const std::size_t begin = a * static_cast<std::size_t>(config.hop);
    const double t = start + 1000.0 * static_cast<double>(begin) / signal.sample_rate;
    const double pos = (t - static_cast<double>(clock.start_ms())) * clock.frame_rate() / 1000.0;
    if (pos < -1e-9) continue;
    const auto idx = static_cast<std::size_t>(std::floor(pos + 1e-9));
    if (idx >= frames) break;
    const std::size_t len = std::min(static_cast<std::size_t>(config.window), n - begin);
    const auto v = extractor.compute_windowed(std::span<const double>(signal.samples).subspan(begin, len)).values();
    for (std::size_t d = 0; d < v.size(); ++d) sums[idx][d] += v[d];
    ++counts[idx];
  }

  std::vector<AudioFeatureRow> out(frames, AudioFeatureRow{});
  std::optional<std::size_t> last;
  for (std::size_t i = 0; i < frames; ++i) {
    if (counts[i] > 0) {
      for (std::size_t d = 0; d < out[i].size(); ++d) out[i][d] = sums[i][d] / counts[i];
      last = i;
    } else if (last) {
      out[i] = out[*last];
    }
  }
  const auto first = std::find_if(counts.begin(), counts.end(), [](int c) { return c > 0; });
  if (first != counts.end()) {
    const auto f = static_cast<std::size_t>(first - counts.begin());
    for (std::size_t i = 0; i < f; ++i) out[i] = out[f];
  }
  return out;
}

}  // namespace vrfear
