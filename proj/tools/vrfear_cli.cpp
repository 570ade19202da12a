// vrfear: command-line entry point for the fear-recognition pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "vrfear/vrfear.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vrfear;

namespace {

struct Common {
  std::string config_path;
  bool force = false;
  std::optional<std::uint64_t> seed;
};

// Options that map onto pipeline config keys; applied as the last layer.
struct Overrides {
  std::optional<int> sequence_length;
  std::optional<int> stride;
  std::optional<std::string> split_mode;
  std::optional<double> pca_target;
  std::optional<std::string> pca_fit;
  std::optional<int> expect_pca_k;
  std::optional<int> window;
  std::optional<int> hop;
  std::optional<int> classes;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<int> batch;
  std::optional<int> hidden;
  std::optional<double> dropout;
  std::optional<std::string> variant;

  json patch(const Common& c) const {
    json p = json::object();
    if (c.seed) p["seed"] = *c.seed;
    if (sequence_length) p["dataset"]["sequence_length"] = *sequence_length;
    if (stride) p["dataset"]["stride"] = *stride;
    if (split_mode) p["dataset"]["split"]["mode"] = *split_mode;
    if (pca_target) p["pca"]["variance_target"] = *pca_target;
    if (pca_fit) p["pca"]["fit"] = *pca_fit;
    if (expect_pca_k) p["pca"]["expect_k"] = *expect_pca_k;
    if (window) p["audio"]["window"] = *window;
    if (hop) p["audio"]["hop"] = *hop;
    if (classes) p["net"]["classes"] = *classes;
    if (epochs) p["net"]["epochs"] = *epochs;
    if (lr) p["net"]["learning_rate"] = *lr;
    if (batch) p["net"]["batch_size"] = *batch;
    if (hidden) p["net"]["hidden"] = *hidden;
    if (dropout) p["net"]["dropout"] = *dropout;
    if (variant) {
      if (*variant == "blstm-attention") {
        p["net"]["bidirectional"] = true, p["net"]["attention"] = true;
      } else if (*variant == "blstm") {
        p["net"]["bidirectional"] = true, p["net"]["attention"] = false;
      } else if (*variant == "lstm-attention") {
        p["net"]["bidirectional"] = false, p["net"]["attention"] = true;
      } else if (*variant == "lstm") {
        p["net"]["bidirectional"] = false, p["net"]["attention"] = false;
      } else {
        throw Error("cli", "invalid_argument", "unknown variant '" + *variant + "'");
      }
    }
    return p;
  }
};

PipelineConfig resolve(const Common& c, const Overrides& o, std::vector<json> base = {}) {
  if (!c.config_path.empty()) base.push_back(read_json_file(c.config_path));
  base.push_back(o.patch(c));
  return layered_config(base);
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "layered JSON config");
  cmd->add_flag("--force", c.force, "overwrite existing outputs");
  cmd->add_option("--seed", c.seed, "seed for every random choice");
}

void add_feature_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--window", o.window, "audio analysis window (samples)");
  cmd->add_option("--hop", o.hop, "audio hop (samples)");
}

void add_dataset_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--sequence-length", o.sequence_length);
  cmd->add_option("--stride", o.stride);
  cmd->add_option("--split-mode", o.split_mode, "per_sample or per_session");
}

void add_net_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--classes", o.classes, "6 or 2");
  cmd->add_option("--epochs", o.epochs);
  cmd->add_option("--lr", o.lr);
  cmd->add_option("--batch", o.batch);
  cmd->add_option("--hidden", o.hidden);
  cmd->add_option("--dropout", o.dropout);
  cmd->add_option("--variant", o.variant, "blstm-attention, blstm, lstm-attention or lstm");
}

std::string hash_comment(const std::string& hash) { return "# config_hash=" + hash + "\n"; }

void emit(const std::string& out, const std::string& content, bool force) {
  if (out.empty() || out == "-") {
    std::cout << content;
  } else {
    write_file(out, content, force);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal fear recognition toolkit"};
  app.require_subcommand(1);
  Common common;
  Overrides ov;
  std::vector<std::string> sessions;
  std::string out, dataset_dir, checkpoint_path, annotations_path, split_name = "test", session_id, data_root, ui_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::int64_t frame = 0;
  SynthOptions synth;
  int separable = 0;

  auto* ingest = app.add_subcommand("ingest", "validate raw streams and report row problems");
  ingest->add_option("--session", sessions, "session manifest or directory")->required();
  ingest->add_option("--out", out, "report path (default stdout)");
  add_common(ingest, common);

  auto* align = app.add_subcommand("align", "write the aligned-session CSV");
  align->add_option("--session", sessions)->required()->expected(1);
  align->add_option("--out", out)->required();
  add_common(align, common);

  auto* features = app.add_subcommand("features", "write per-frame audio features");
  features->add_option("--session", sessions)->required()->expected(1);
  features->add_option("--out", out)->required();
  add_common(features, common);
  add_feature_overrides(features, ov);

  auto* fuse_cmd = app.add_subcommand("fuse-labels", "per-frame annotator levels and fused labels");
  fuse_cmd->add_option("--session", sessions)->required()->expected(1);
  fuse_cmd->add_option("--annotations", annotations_path, "span JSONL or service log (default: manifest stream)");
  fuse_cmd->add_option("--out", out, "labels CSV (default stdout)");
  add_common(fuse_cmd, common);

  auto* build = app.add_subcommand("build", "build the 61-feature dataset from sessions");
  build->add_option("--session", sessions, "session manifest or directory (repeatable)")->required();
  build->add_option("--out", out, "dataset directory")->required();
  build->add_option("--pca-target", ov.pca_target);
  build->add_option("--pca-fit", ov.pca_fit, "train (default) or all");
  build->add_option("--expect-pca-k", ov.expect_pca_k, "fail unless the variance target selects this k");
  add_common(build, common);
  add_feature_overrides(build, ov);
  add_dataset_overrides(build, ov);

  auto* train_cmd = app.add_subcommand("train", "train the classifier on a dataset directory");
  train_cmd->add_option("--dataset", dataset_dir)->required();
  train_cmd->add_option("--out", out, "model directory")->required();
  add_common(train_cmd, common);
  add_dataset_overrides(train_cmd, ov);
  add_net_overrides(train_cmd, ov);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--dataset", dataset_dir)->required();
  eval_cmd->add_option("--checkpoint", checkpoint_path)->required();
  eval_cmd->add_option("--split", split_name, "train, validation, test or all");
  eval_cmd->add_option("--out", out, "report JSON path (text table goes to stdout)");
  add_common(eval_cmd, common);

  auto* predict_cmd = app.add_subcommand("predict", "classify the window starting at a frame");
  predict_cmd->add_option("--dataset", dataset_dir)->required();
  predict_cmd->add_option("--checkpoint", checkpoint_path)->required();
  predict_cmd->add_option("--session-id", session_id)->required();
  predict_cmd->add_option("--frame", frame, "first frame of the window");
  add_common(predict_cmd, common);

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic session (or a separable dataset)");
  synth_cmd->add_option("--out", out)->required();
  synth_cmd->add_option("--seconds", synth.seconds);
  synth_cmd->add_option("--fps", synth.fps);
  synth_cmd->add_option("--sample-rate", synth.sample_rate);
  synth_cmd->add_option("--gap-fraction", synth.gap_fraction);
  synth_cmd->add_option("--disagreement", synth.disagreement);
  synth_cmd->add_option("--session-id", synth.session_id);
  synth_cmd->add_option("--separable", separable, "write a dataset of N planted-separable windows instead");
  synth_cmd->add_option("--classes", ov.classes, "classes for --separable");
  add_common(synth_cmd, common);

  auto* stats = app.add_subcommand("stats", "per-level class statistics");
  stats->add_option("--session", sessions)->required();
  stats->add_option("--out", out);
  add_common(stats, common);

  auto* serve = app.add_subcommand("serve", "run the annotation service");
  serve->add_option("--data", data_root, "data root with sessions/ and annotations/")->required();
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->add_option("--ui", ui_dir, "static UI directory to mount at /");
  add_common(serve, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"module", "cli"}, {"code", "usage"}, {"message", e.what()}}.dump() << std::endl;
    return 2;
  }

  try {
    if (*ingest) {
      json reports = json::array();
      bool ok = true;
      for (const auto& s : sessions) {
        reports.push_back(ingest_report(s));
        ok = ok && reports.back()["ok"].get<bool>();
      }
      emit(out, reports.dump(1) + "\n", common.force);
      if (!ok) throw Error("ingest", "row_errors", "some rows failed validation; see the report");
    } else if (*align) {
      const auto cfg = resolve(common, ov);
      const auto s = load_session(sessions.front());
      std::ostringstream csv;
      write_aligned(csv, align_session(s.manifest, s.streams), config_hash(cfg));
      emit(out, csv.str(), common.force);
    } else if (*features) {
      const auto cfg = resolve(common, ov);
      const auto s = load_session(sessions.front());
      const auto aligned = align_session(s.manifest, s.streams);
      const auto rows = framewise_audio(aligned.audio, aligned.clock, cfg.audio);
      std::ostringstream csv;
      csv << hash_comment(config_hash(cfg)) << "# audio_config=" << json(cfg.audio).dump() << "\nframe_index";
      for (int i = 0; i < kAudioFeatureDims; ++i) csv << ",a" << i;
      csv << '\n';
      for (std::size_t f = 0; f < rows.size(); ++f) {
        csv << f;
        for (double v : rows[f]) csv << ',' << text::format_double(v);
        csv << '\n';
      }
      emit(out, csv.str(), common.force);
    } else if (*fuse_cmd) {
      const auto cfg = resolve(common, ov);
      const fs::path mpath = manifest_file(sessions.front());
      const auto manifest = read_manifest(mpath);
      const fs::path source = annotations_path.empty() ? mpath.parent_path() / manifest.annotations_path
                                                       : fs::path(annotations_path);
      const std::string content = read_text_file(source, "label-fusion");
      FrameLabels labels;
      if (looks_like_store_log(content)) {
        std::istringstream in(content);
        labels = fuse_snapshot(replay_log(in), manifest.clock).labels;
      } else {
        std::istringstream in(content);
        labels = session_labels(parse_annotations(in), manifest.clock);
      }
      std::ostringstream csv;
      write_frame_labels(csv, labels, config_hash(cfg));
      emit(out, csv.str(), common.force);
    } else if (*build) {
      const auto cfg = resolve(common, ov);
      for (const char* f : {"roster.json", "pca.json", "features.json"}) ensure_writable(fs::path(out) / f, common.force);
      std::vector<PreparedSession> prepared;
      for (const auto& s : sessions) prepared.push_back(prepare_session(load_session(s), cfg));
      const auto built = build_dataset(std::move(prepared), cfg);
      write_dataset(out, built, cfg, common.force);
      std::cerr << "built " << built.tables.size() << " session(s); pca variance-target k="
                << built.pca.variance_target_components << ", retained "
                << text::fixed(built.pca.retained_ratio, 6) << '\n';
    } else if (*train_cmd) {
      const auto ds = load_dataset(dataset_dir);
      const auto cfg = resolve(common, ov, {config_to_json(ds.config)});
      const fs::path dir(out);
      for (const char* f : {"checkpoint.json", "history.csv"}) ensure_writable(dir / f, common.force);
      const auto model = train_on_dataset(ds.tables, cfg, [](const EpochRecord& r) {
        std::fprintf(stderr, "epoch %d loss %.6f val_accuracy %.4f\n", r.epoch, r.loss, r.val_accuracy);
      });
      write_file(dir / "checkpoint.json", checkpoint_to_json(model.checkpoint).dump() + "\n", common.force);
      write_file(dir / "history.csv", history_csv(model.result.history, config_hash(cfg)), common.force);
      std::cerr << "best epoch " << model.result.best_epoch << ", validation accuracy "
                << text::fixed(model.result.best_val_accuracy, 4) << '\n';
    } else if (*eval_cmd) {
      const auto ds = load_dataset(dataset_dir);
      const auto ckpt = checkpoint_from_json(read_json_file(checkpoint_path, "net"));
      const auto report = evaluate_checkpoint(ds.tables, ds.config, ckpt, parse_split_part(split_name));
      json j = report_to_json(report);
      j["split"] = split_name;
      j["config_hash"] = ckpt.config_hash;
      if (!out.empty()) write_file(out, j.dump(1) + "\n", common.force);
      std::cout << report_to_text(report);
    } else if (*predict_cmd) {
      const auto ds = load_dataset(dataset_dir);
      const auto ckpt = checkpoint_from_json(read_json_file(checkpoint_path, "net"));
      const auto it = std::find_if(ds.tables.begin(), ds.tables.end(),
                                   [&](const SessionTable& t) { return t.session_id == session_id; });
      if (it == ds.tables.end()) throw Error("cli", "not_found", "no session '" + session_id + "' in dataset");
      const auto len = static_cast<std::size_t>(ckpt.config.sequence_length);
      if (frame < 0 || static_cast<std::size_t>(frame) + len > it->frames.size()) {
        throw Error("cli", "invalid_argument", "window does not fit inside the session");
      }
      const Normalizer norm = normalizer_from_json(ckpt.normalization);
      Mat x(static_cast<Eigen::Index>(len), kFeatureDims);
      for (std::size_t t = 0; t < len; ++t) {
        FeatureRow row = it->frames[static_cast<std::size_t>(frame) + t].features;
        norm.apply(row);
        for (int d = 0; d < kFeatureDims; ++d) x(static_cast<Eigen::Index>(t), d) = row[static_cast<std::size_t>(d)];
      }
      const auto p = predict(x, ckpt.params, ckpt.config);
      std::cout << json{{"session_id", session_id},
                        {"frame", frame},
                        {"label", p.label},
                        {"probabilities", p.probabilities},
                        {"attention_weights", p.attention.weights},
                        {"attention_scores", p.attention.raw_scores}}
                       .dump()
                << '\n';
    } else if (*synth_cmd) {
      if (common.seed) synth.seed = *common.seed;
      if (separable > 0) {
        const int classes = ov.classes.value_or(6);
        auto cfg = resolve(common, Overrides{});
        const auto set = separable_samples(static_cast<std::size_t>(separable), classes,
                                           static_cast<std::size_t>(cfg.sequence_length), kFeatureDims, synth.seed);
        BuiltDataset d;
        std::vector<double> buf(set.length() * set.dims());
        for (std::size_t i = 0; i < set.size(); ++i) {
          SessionTable t;
          char id[32];
          std::snprintf(id, sizeof id, "sample%04zu", i);
          t.session_id = id;
          t.annotators = {"a1", "a2"};
          set.fill(i, buf);
          for (std::size_t f = 0; f < set.length(); ++f) {
            FeatureFrame ff;
            ff.frame = static_cast<std::int64_t>(f);
            std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(f * set.dims()), set.dims(), ff.features.begin());
            ff.annotator_levels = {set.target(i), set.target(i)};
            ff.label = set.target(i);
            t.frames.push_back(std::move(ff));
          }
          d.tables.push_back(std::move(t));
        }
        write_dataset(out, d, cfg, common.force);
      } else {
        const fs::path dir(out);
        for (const char* f : {"manifest.json", "keypoints.csv", "audio.wav", "physio.csv", "annotations.jsonl", "truth.json"}) {
          ensure_writable(dir / f, common.force);
        }
        write_synth_session(generate_session(synth), dir);
      }
    } else if (*stats) {
      std::vector<LoadedSession> loaded;
      for (const auto& s : sessions) loaded.push_back(load_session(s));
      emit(out, class_stats_to_json(session_class_stats(loaded)).dump(1) + "\n", common.force);
    } else if (*serve) {
      SessionRepository repo(data_root);
      AnnotationServer server(repo, ui_dir.empty() ? std::nullopt : std::optional<fs::path>(ui_dir));
      if (!server.bind(host, port)) throw Error("annotation-service", "io_error", "cannot bind " + host + ":" + std::to_string(port));
      std::cerr << "listening on http://" << host << ':' << port << '\n';
      server.run();
    }
  } catch (const Error& e) {
    std::cerr << json{{"module", e.module()}, {"code", e.code()}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"module", "cli"}, {"code", "internal"}, {"message", e.what()}}.dump() << std::endl;
    return 1;
  }
  return 0;
}
