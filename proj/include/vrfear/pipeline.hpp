#pragma once

// Stage orchestration shared by the command-line tool and the tests:
// layered configuration, session loading, dataset build, training and
// evaluation over a dataset directory.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vrfear/align.hpp"
#include "vrfear/audio_features.hpp"
#include "vrfear/core.hpp"
#include "vrfear/dataset.hpp"
#include "vrfear/error.hpp"
#include "vrfear/ingest.hpp"
#include "vrfear/labels.hpp"
#include "vrfear/metrics.hpp"
#include "vrfear/net.hpp"
#include "vrfear/skeleton.hpp"
#include "vrfear/text.hpp"

namespace vrfear {

namespace fs = std::filesystem;

enum class PcaFit { train, all };

struct PipelineConfig {
  std::uint64_t seed = 0;
  AudioFeatureConfig audio;
  double pca_variance_target = 0.98;
  PcaFit pca_fit = PcaFit::train;
  std::optional<int> expect_pca_k;
  int sequence_length = 16;
  int stride = 1;
  SplitSpec split;
  NetConfig net;

  // Seeds and shapes that the net and splitter take from the top level.
  void propagate() {
    split.seed = seed;
    net.seed = seed;
    net.sequence_length = sequence_length;
    net.input_dim = kFeatureDims;
  }
};

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json split = c.split;
  split.erase("seed");
  nlohmann::json net = c.net;
  for (const char* k : {"seed", "sequence_length", "input_dim"}) net.erase(k);
  return {{"seed", c.seed},
          {"audio", c.audio},
          {"pca",
           {{"variance_target", c.pca_variance_target},
            {"fit", c.pca_fit == PcaFit::train ? "train" : "all"},
            {"expect_k", c.expect_pca_k ? nlohmann::json(*c.expect_pca_k) : nlohmann::json()}}},
          {"dataset", {{"sequence_length", c.sequence_length}, {"stride", c.stride}, {"split", split}}},
          {"net", net}};
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& known, const nlohmann::json& given, const std::string& path) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!known.contains(it.key())) throw Error("cli", "unknown_config_key", "unknown config key '" + key + "'");
    if (it->is_object() && known[it.key()].is_object()) reject_unknown_keys(known[it.key()], *it, key);
  }
}

}  // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  const PipelineConfig defaults;
  detail::reject_unknown_keys(config_to_json(defaults), j, "");
  PipelineConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("audio")) c.audio = j["audio"].get<AudioFeatureConfig>();
    if (j.contains("pca")) {
      const auto& p = j["pca"];
      c.pca_variance_target = p.value("variance_target", c.pca_variance_target);
      const std::string fit = p.value("fit", std::string("train"));
      if (fit != "train" && fit != "all") throw Error("cli", "invalid_config", "pca.fit must be 'train' or 'all'");
      c.pca_fit = fit == "train" ? PcaFit::train : PcaFit::all;
      if (p.contains("expect_k") && !p["expect_k"].is_null()) c.expect_pca_k = p["expect_k"].get<int>();
    }
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      c.sequence_length = d.value("sequence_length", c.sequence_length);
      c.stride = d.value("stride", c.stride);
      if (d.contains("split")) c.split = d["split"].get<SplitSpec>();
    }
    if (j.contains("net")) c.net = j["net"].get<NetConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("cli", "invalid_config", std::string("config: ") + e.what());
  }
  if (c.sequence_length < 1 || c.stride < 1) {
    throw Error("cli", "invalid_config", "sequence_length and stride must be positive");
  }
  c.propagate();
  c.net.validate();
  return c;
}

// Built-in defaults, then each patch in order (RFC 7386 merge semantics).
inline PipelineConfig layered_config(const std::vector<nlohmann::json>& patches) {
  nlohmann::json merged = config_to_json(PipelineConfig{});
  for (const auto& p : patches) {
    if (!p.is_object()) throw Error("cli", "invalid_config", "config layers must be JSON objects");
    detail::reject_unknown_keys(merged, p, "");
    merged.merge_patch(p);
  }
  return config_from_json(merged);
}

inline std::string config_hash(const PipelineConfig& c) { return text::fnv1a_hex(config_to_json(c).dump()); }

// ---------------------------------------------------------------------------
// Files

inline std::string read_text_file(const fs::path& p, const char* module = "cli") {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(module, "missing_input", "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline nlohmann::json read_json_file(const fs::path& p, const char* module = "cli") {
  try {
    return nlohmann::json::parse(read_text_file(p, module));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(module, "invalid_json", p.string() + ": " + e.what());
  }
}

inline void ensure_writable(const fs::path& p, bool force) {
  if (!force && fs::exists(p)) {
    throw Error("cli", "output_exists", p.string() + " exists; pass --force to overwrite");
  }
}

// Writes through a temporary file so a failed stage never leaves a partial output.
inline void write_file(const fs::path& p, const std::string& content, bool force) {
  ensure_writable(p, force);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cli", "io_error", "cannot write " + p.string());
    out << content;
    if (!out) throw Error("cli", "io_error", "write failed for " + p.string());
  }
  fs::rename(tmp, p);
}

// ---------------------------------------------------------------------------
// Sessions

struct LoadedSession {
  fs::path directory;
  SessionManifest manifest;
  SessionStreams streams;
};

inline fs::path manifest_file(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.json" : p; }

inline SessionManifest read_manifest(const fs::path& p) {
  return read_json_file(manifest_file(p), "core-model").get<SessionManifest>();
}

inline LoadedSession load_session(const fs::path& path) {
  LoadedSession s;
  const fs::path mpath = manifest_file(path);
  s.directory = mpath.parent_path();
  s.manifest = read_manifest(mpath);
  const auto open = [&](const std::string& rel) {
    std::ifstream in(s.directory / rel, std::ios::binary);
    if (!in) throw Error("ingest", "missing_input", "cannot open " + (s.directory / rel).string());
    return in;
  };
  {
    auto in = open(s.manifest.keypoints_path);
    s.streams.keypoints = parse_keypoints(in);
  }
  {
    auto in = open(s.manifest.physio_path);
    s.streams.physio = parse_physio(in);
  }
  {
    auto in = open(s.manifest.annotations_path);
    s.streams.annotations = parse_annotations(in);
  }
  {
    auto in = open(s.manifest.audio_path);
    s.streams.audio = parse_audio(in);
  }
  if (s.manifest.audio_secondary_path) {
    auto in = open(*s.manifest.audio_secondary_path);
    s.streams.audio = mix_tracks(s.streams.audio, parse_audio(in));
  }
  return s;
}

// Per-stream row counts and row problems, without failing on the first one.
inline nlohmann::json ingest_report(const fs::path& path) {
  const fs::path mpath = manifest_file(path);
  const fs::path dir = mpath.parent_path();
  const SessionManifest m = read_manifest(mpath);
  const auto issues_json = [](const auto& report) {
    nlohmann::json issues = nlohmann::json::array();
    for (const auto& i : report.issues) issues.push_back({{"line", i.line}, {"message", i.message}});
    return nlohmann::json{{"input_rows", report.input_rows}, {"rows", report.rows.size()}, {"issues", issues}};
  };
  const auto open = [&](const std::string& rel) {
    std::ifstream in(dir / rel, std::ios::binary);
    if (!in) throw Error("ingest", "missing_input", "cannot open " + (dir / rel).string());
    return in;
  };
  nlohmann::json out{{"session_id", m.session_id}};
  {
    auto in = open(m.keypoints_path);
    out["keypoints"] = issues_json(read_keypoints(in));
  }
  {
    auto in = open(m.physio_path);
    out["physio"] = issues_json(read_physio(in));
  }
  {
    auto in = open(m.annotations_path);
    out["annotations"] = issues_json(read_annotations(in));
  }
  {
    auto in = open(m.audio_path);
    const AudioSignal a = parse_audio(in);
    out["audio"] = {{"sample_rate", a.sample_rate}, {"samples", a.samples.size()}, {"seconds", a.duration_seconds()}};
  }
  bool ok = true;
  for (const char* k : {"keypoints", "physio", "annotations"}) ok = ok && out[k]["issues"].empty();
  out["ok"] = ok;
  return out;
}

struct PreparedSession {
  std::string session_id;
  AlignedStreams aligned;
  std::vector<AudioFeatureRow> audio;
  FrameLabels labels;
};

inline FrameLabels session_labels(const std::vector<AnnotationSpan>& spans, const FrameClock& clock) {
  return fuse_frames(spans, clock, roster_of(spans));
}

inline PreparedSession prepare_session(const LoadedSession& s, const PipelineConfig& cfg) {
  PreparedSession p;
  p.session_id = s.manifest.session_id;
  p.aligned = align_session(s.manifest, s.streams);
  p.audio = framewise_audio(p.aligned.audio, p.aligned.clock, cfg.audio);
  p.labels = session_labels(s.streams.annotations, p.aligned.clock);
  return p;
}

// ---------------------------------------------------------------------------
// Dataset build

struct BuiltDataset {
  std::vector<SessionTable> tables;
  PcaModel pca;
};

// Windows over label-only tables, for choosing the PCA fitting frames before
// any features exist.
inline std::vector<SessionTable> label_tables(const std::vector<PreparedSession>& sessions) {
  std::vector<SessionTable> out;
  for (const auto& s : sessions) {
    SessionTable t;
    t.session_id = s.session_id;
    t.annotators = s.labels.annotators;
    t.frames.resize(s.labels.fused.size());
    for (std::size_t i = 0; i < t.frames.size(); ++i) {
      t.frames[i].frame = static_cast<std::int64_t>(i);
      t.frames[i].label = s.labels.fused[i];
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline BuiltDataset build_dataset(std::vector<PreparedSession> sessions, const PipelineConfig& cfg) {
  if (sessions.empty()) throw Error("sequence-dataset", "no_sessions", "no sessions to build");
  std::sort(sessions.begin(), sessions.end(),
            [](const PreparedSession& a, const PreparedSession& b) { return a.session_id < b.session_id; });
  for (std::size_t i = 1; i < sessions.size(); ++i) {
    if (sessions[i].session_id == sessions[i - 1].session_id) {
      throw Error("sequence-dataset", "duplicate_session", "session id " + sessions[i].session_id + " appears twice");
    }
  }
  for (const auto& s : sessions) {
    if (s.labels.annotators.size() < 2) {
      throw Error("label-fusion", "insufficient_annotators",
                  "session " + s.session_id + " has fewer than 2 annotators");
    }
  }

  // Frames used to fit the PCA: those covered by training windows, or all.
  std::vector<Skeleton> fit_rows;
  if (cfg.pca_fit == PcaFit::all) {
    for (const auto& s : sessions) fit_rows.insert(fit_rows.end(), s.aligned.keypoints.begin(), s.aligned.keypoints.end());
  } else {
    const auto tables = label_tables(sessions);
    const auto windows = window(tables, static_cast<std::size_t>(cfg.sequence_length), static_cast<std::size_t>(cfg.stride));
    const Split sp = split(windows, cfg.split);
    std::set<std::pair<std::size_t, std::size_t>> frames;
    for (std::size_t idx : sp.train)
      for (int t = 0; t < cfg.sequence_length; ++t) frames.emplace(windows[idx].session, windows[idx].start + static_cast<std::size_t>(t));
    for (const auto& [s, f] : frames) fit_rows.push_back(sessions[s].aligned.keypoints[f]);
  }
  PcaOptions opts;
  opts.variance_target = cfg.pca_variance_target;
  opts.components = kSkeletonFeatureDims;
  BuiltDataset out;
  out.pca = fit_pca(skeleton_rows(fit_rows), opts);
  if (cfg.expect_pca_k && static_cast<std::size_t>(*cfg.expect_pca_k) != out.pca.variance_target_components) {
    throw Error("skeleton-features", "pca_k_mismatch",
                "variance target selects k=" + std::to_string(out.pca.variance_target_components) + ", expected " +
                    std::to_string(*cfg.expect_pca_k));
  }

  for (const auto& s : sessions) {
    SessionTable t;
    t.session_id = s.session_id;
    t.annotators = s.labels.annotators;
    const RowMatrix projected = apply_pca(out.pca, skeleton_rows(s.aligned.keypoints));
    t.frames = assemble_frames(projected, s.audio, s.aligned.physio, s.labels);
    out.tables.push_back(std::move(t));
  }
  return out;
}

inline std::string session_file_name(const std::string& id) { return id + ".csv"; }

inline void write_dataset(const fs::path& dir, const BuiltDataset& d, const PipelineConfig& cfg, bool force) {
  const std::string hash = config_hash(cfg);
  nlohmann::json roster{{"schema_version", 1},
                        {"config_hash", hash},
                        {"config", config_to_json(cfg)},
                        {"sessions", nlohmann::json::array()}};
  if (d.pca.k() > 0) {
    roster["pca"] = {{"k", d.pca.k()},
                     {"variance_target_components", d.pca.variance_target_components},
                     {"retained_ratio", d.pca.retained_ratio}};
  }
  for (const auto& t : d.tables) {
    std::ostringstream csv;
    write_session_table(csv, t, hash);
    write_file(dir / session_file_name(t.session_id), csv.str(), force);
    roster["sessions"].push_back({{"session_id", t.session_id},
                                  {"file", session_file_name(t.session_id)},
                                  {"frame_count", t.frames.size()},
                                  {"annotators", t.annotators}});
  }
  if (d.pca.k() > 0) {
    nlohmann::json pca = pca_to_json(d.pca);
    pca["config_hash"] = hash;
    write_file(dir / "pca.json", pca.dump(1) + "\n", force);
  }
  nlohmann::json features = cfg.audio;
  features["config_hash"] = hash;
  write_file(dir / "features.json", features.dump(1) + "\n", force);
  write_file(dir / "roster.json", roster.dump(1) + "\n", force);
}

struct LoadedDataset {
  PipelineConfig config;
  std::string config_hash;
  std::vector<SessionTable> tables;
};

inline LoadedDataset load_dataset(const fs::path& dir) {
  const nlohmann::json roster = read_json_file(dir / "roster.json", "sequence-dataset");
  LoadedDataset d;
  try {
    if (roster.at("schema_version").get<int>() != 1) {
      throw Error("sequence-dataset", "schema_version", "unsupported roster schema_version");
    }
    d.config = config_from_json(roster.at("config"));
    d.config_hash = roster.value("config_hash", std::string());
    for (const auto& s : roster.at("sessions")) {
      std::ifstream in(dir / s.at("file").get<std::string>(), std::ios::binary);
      if (!in) throw Error("sequence-dataset", "missing_input", "cannot open " + s.at("file").get<std::string>());
      d.tables.push_back(read_session_table(in, s.at("session_id").get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("sequence-dataset", "invalid_roster", std::string("roster: ") + e.what());
  }
  return d;
}

// ---------------------------------------------------------------------------
// Training and evaluation over a dataset

struct DatasetSplit {
  std::vector<WindowRef> windows;
  Split split;
};

inline DatasetSplit split_dataset(const std::vector<SessionTable>& tables, const PipelineConfig& cfg) {
  DatasetSplit d;
  d.windows = window(tables, static_cast<std::size_t>(cfg.sequence_length), static_cast<std::size_t>(cfg.stride));
  d.split = split(d.windows, cfg.split);
  return d;
}

struct TrainedModel {
  TrainResult result;
  Checkpoint checkpoint;
};

inline TrainedModel train_on_dataset(const std::vector<SessionTable>& tables, const PipelineConfig& cfg,
                                     const EpochCallback& on_epoch = {}) {
  const DatasetSplit ds = split_dataset(tables, cfg);
  const auto len = static_cast<std::size_t>(cfg.sequence_length);
  const Normalizer norm = fit_normalizer(tables, ds.windows, ds.split.train, len);
  const WindowSource train_src(tables, ds.windows, ds.split.train, len, norm);
  const WindowSource val_src(tables, ds.windows, ds.split.validation, len, norm);
  TrainedModel m;
  m.result = train(train_src, val_src, cfg.net, on_epoch);
  m.checkpoint.config = cfg.net;
  m.checkpoint.params = m.result.params;
  m.checkpoint.normalization = normalizer_to_json(norm);
  m.checkpoint.config_hash = config_hash(cfg);
  return m;
}

inline std::string history_csv(const std::vector<EpochRecord>& history, const std::string& hash) {
  std::ostringstream out;
  if (!hash.empty()) out << "# config_hash=" << hash << '\n';
  out << "epoch,loss,val_accuracy\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << text::format_double(h.loss) << ',' << text::format_double(h.val_accuracy) << '\n';
  }
  return out.str();
}

enum class SplitPart { train, validation, test, all };

inline SplitPart parse_split_part(const std::string& s) {
  if (s == "train") return SplitPart::train;
  if (s == "validation" || s == "val") return SplitPart::validation;
  if (s == "test") return SplitPart::test;
  if (s == "all") return SplitPart::all;
  throw Error("cli", "invalid_argument", "split must be train, validation, test or all");
}

inline std::vector<std::size_t> split_members(const DatasetSplit& ds, SplitPart part) {
  switch (part) {
    case SplitPart::train:
      return ds.split.train;
    case SplitPart::validation:
      return ds.split.validation;
    case SplitPart::test:
      return ds.split.test;
    case SplitPart::all:
      break;
  }
  std::vector<std::size_t> all(ds.windows.size());
  std::iota(all.begin(), all.end(), 0);
  return all;
}

inline EvalReport evaluate_checkpoint(const std::vector<SessionTable>& tables, const PipelineConfig& dataset_cfg,
                                      const Checkpoint& ckpt, SplitPart part) {
  PipelineConfig cfg = dataset_cfg;
  cfg.sequence_length = ckpt.config.sequence_length;
  cfg.propagate();
  const DatasetSplit ds = split_dataset(tables, cfg);
  const Normalizer norm = normalizer_from_json(ckpt.normalization);
  const WindowSource src(tables, ds.windows, split_members(ds, part), static_cast<std::size_t>(cfg.sequence_length), norm);
  const auto preds = predict_classes(src, ckpt.params, ckpt.config);
  std::vector<int> truths(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) truths[i] = class_index(src.target(i), ckpt.config.classes);
  return evaluate(preds, truths, ckpt.config.classes);
}

// Statistics straight from raw sessions (labels, physiology, unreduced poses).
inline ClassStats session_class_stats(const std::vector<LoadedSession>& sessions) {
  std::vector<StatsSession> in;
  for (const auto& s : sessions) {
    const AlignedStreams a = align_session(s.manifest, s.streams);
    StatsSession st;
    st.labels = session_labels(s.streams.annotations, a.clock).fused;
    st.physio = a.physio;
    st.keypoints = a.keypoints;
    st.frame_rate = a.clock.frame_rate();
    in.push_back(std::move(st));
  }
  return class_stats(in);
}

}  // namespace vrfear
