#pragma once

// Command-line front end. Every subcommand reads a flat key=value config
// (defaults < --config file < flags), produces its artifacts in memory, writes
// them with a manifest, and prints a result JSON on stdout. Errors go to
// stderr as JSON; exit codes are 0 ok, 2 usage, 3 data, 4 numerical.

#include <openssl/evp.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "polycount/clustering.hpp"
#include "polycount/error.hpp"
#include "polycount/evaluation.hpp"
#include "polycount/gradcheck.hpp"
#include "polycount/head.hpp"
#include "polycount/io.hpp"
#include "polycount/loss.hpp"
#include "polycount/parallel.hpp"
#include "polycount/pipeline.hpp"
#include "polycount/synth.hpp"
#include "polycount/trainer.hpp"
#include "polycount/tracklets.hpp"

namespace polycount::app {

using json = io::json;

inline constexpr const char* kVersion = "0.1.0";

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numerical: return 4;
  }
  return 1;
}

// ------------------------------------------------------------------- config

struct Param {
  std::string key;
  std::string flag;
  std::string def;
  std::string help;
};

inline const std::vector<Param>& params() {
  static const std::vector<Param> table = {
      {"io.data", "--data", "", "directory holding detections.jsonl and scenario.json"},
      {"io.detections", "--detections", "", "detection JSON-lines file (overrides --data)"},
      {"io.videos", "--videos", "", "scenario/videos JSON file (overrides --data)"},
      {"io.checkpoint", "--checkpoint", "", "head checkpoint JSON"},
      {"io.embeddings", "--embeddings", "", "tracklet embeddings JSON"},
      {"io.clusters", "--clusters", "", "cluster assignments JSON"},
      {"io.split", "--split", "eval", "video split to embed"},
      {"io.out", "--out", "out", "output directory"},
      {"run.jobs", "--jobs", "0", "worker threads (0 = hardware concurrency)"},

      {"synth.preset", "--preset", "easy", "scenario preset: easy, drift, noisy, paper-scale-ish"},
      {"synth.seed", "--seed", "0", "scenario seed"},
      {"synth.n_videos", "--n-videos", "", "evaluation videos"},
      {"synth.n_train_videos", "--n-train-videos", "", "training videos"},
      {"synth.entities_per_video", "--entities-per-video", "", "range lo,hi"},
      {"synth.tracklets_per_entity", "--tracklets-per-entity", "", "range lo,hi"},
      {"synth.tracklet_length", "--tracklet-length", "", "range lo,hi (frames)"},
      {"synth.tracklet_gap", "--tracklet-gap", "", "range lo,hi (frames)"},
      {"synth.video_length", "--video-length", "", "frames per video"},
      {"synth.feature_dim", "--feature-dim", "", "feature dimension"},
      {"synth.sigma", "--sigma", "", "intra-entity noise"},
      {"synth.beta", "--beta", "", "temporal drift magnitude"},
      {"synth.drift_rank", "--drift-rank", "", "rank of the shared drift subspace (0 = isotropic)"},
      {"synth.inter_entity_min_distance", "--min-distance", "", "minimum centroid separation"},

      {"fragment.kappa", "--kappa", "8", "frames per fragment"},
      {"fragment.sampling_stride", "--stride", "4", "keep one frame in this many"},
      {"fragment.iou_min", "--iou-min", "0.1", "minimum IoU to chain consecutive detections"},
      {"fragment.psi", "--psi", "5", "crop enlargement factor"},

      {"loss.mode", "--loss-mode", "temporally_aware",
       "self_supervised, supervised or temporally_aware"},
      {"loss.tau", "--tau", "0.1", "softmax temperature"},
      {"loss.lambda", "--lambda", "1", "temporal decay of the soft targets"},

      {"head.hidden_dim", "--hidden-dim", "64", "hidden width (0 = single linear layer)"},
      {"head.embedding_dim", "--embedding-dim", "128", "embedding dimension"},

      {"trainer.batch_size", "--batch-size", "56", "rows per batch"},
      {"trainer.views_per_polyp", "--views-per-polyp", "14", "fragments per entity per batch"},
      {"trainer.polyps_per_batch", "--polyps-per-batch", "3", "entities per batch"},
      {"trainer.epochs", "--epochs", "50", "training epochs"},
      {"trainer.steps_per_epoch", "--steps-per-epoch", "10", "batches per epoch"},
      {"trainer.learning_rate", "--lr", "0.001", "learning rate"},
      {"trainer.optimizer", "--optimizer", "adam", "adam or sgd"},
      {"trainer.seed", "--seed", "0", "initialization and sampling seed"},

      {"cluster.algorithm", "--algorithm", "temporal_ap", "threshold, ap or temporal_ap"},
      {"cluster.threshold", "--threshold", "0.5", "threshold clustering cut"},
      {"cluster.preference", "--preference", "0", "AP preference"},
      {"cluster.gamma", "--gamma", "1", "temporal adjacency decay"},
      {"cluster.alpha", "--alpha", "0.5", "weight of visual similarity"},
      {"cluster.damping", "--damping", "0.5", "AP damping"},
      {"cluster.max_iterations", "--max-iterations", "200", "AP iteration cap"},
      {"cluster.convergence_window", "--convergence-window", "15", "AP stable iterations"},

      {"eval.rho", "--rho", "0.05", "FPR target for hyperparameter selection"},
      {"eval.selection", "--selection", "fpr_budget", "fpr_budget or closest_fpr"},
      {"eval.fpr_metric", "--fpr-metric", "pair_impurity", "pair_impurity or wrong_merge"},
      {"eval.grid", "--grid", "full", "full or coarse"},

      {"check.batches", "--batches", "100", "random batches"},
      {"check.seed", "--seed", "0", "batch generator seed"},
      {"check.epsilon", "--epsilon", "1e-5", "finite-difference step"},
  };
  return table;
}

inline const Param* find_param(const std::string& key) {
  for (const auto& p : params())
    if (p.key == key) return &p;
  return nullptr;
}

using RunConfig = std::map<std::string, std::string>;

inline const std::string& get(const RunConfig& cfg, const std::string& key) {
  auto it = cfg.find(key);
  if (it == cfg.end()) throw UsageError("missing config key " + key);
  return it->second;
}

inline double get_double(const RunConfig& cfg, const std::string& key) {
  const std::string& s = get(cfg, key);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw UsageError(key + ": expected a number, got '" + s + "'");
  return v;
}

inline std::uint64_t get_u64(const RunConfig& cfg, const std::string& key) {
  const std::string& s = get(cfg, key);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw UsageError(key + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

inline std::size_t get_size(const RunConfig& cfg, const std::string& key) {
  return static_cast<std::size_t>(get_u64(cfg, key));
}

template <typename T>
Range<T> parse_range(const std::string& key, const std::string& s) {
  auto one = [&](const std::string& part) {
    T v{};
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (part.empty() || ec != std::errc() || ptr != part.data() + part.size())
      throw UsageError(key + ": expected lo,hi, got '" + s + "'");
    return v;
  };
  const auto comma = s.find(',');
  if (comma == std::string::npos) return {one(s), one(s)};
  return {one(s.substr(0, comma)), one(s.substr(comma + 1))};
}

// Flat key=value lines; '#' starts a comment.
inline RunConfig parse_config_text(const std::string& text, const std::string& name) {
  RunConfig out;
  std::istringstream in(text);
  std::string line;
  std::size_t no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = name + ":" + std::to_string(no);
    if (eq == std::string::npos) throw UsageError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (!find_param(key)) throw UsageError(where + ": unknown key '" + key + "'");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

inline ScenarioConfig scenario_config(const RunConfig& cfg) {
  ScenarioConfig c = scenario_preset(get(cfg, "synth.preset"));
  c.seed = get_u64(cfg, "synth.seed");
  auto set = [&](const char* key, auto&& apply) {
    auto it = cfg.find(key);
    if (it != cfg.end() && !it->second.empty()) apply(it->first);
  };
  set("synth.n_videos", [&](const std::string& k) { c.n_videos = get_size(cfg, k); });
  set("synth.n_train_videos", [&](const std::string& k) { c.n_train_videos = get_size(cfg, k); });
  set("synth.entities_per_video",
      [&](const std::string& k) { c.entities_per_video = parse_range<std::size_t>(k, get(cfg, k)); });
  set("synth.tracklets_per_entity",
      [&](const std::string& k) { c.tracklets_per_entity = parse_range<std::size_t>(k, get(cfg, k)); });
  set("synth.tracklet_length",
      [&](const std::string& k) { c.tracklet_length = parse_range<std::size_t>(k, get(cfg, k)); });
  set("synth.tracklet_gap",
      [&](const std::string& k) { c.tracklet_gap = parse_range<std::size_t>(k, get(cfg, k)); });
  set("synth.video_length",
      [&](const std::string& k) { c.video_length = static_cast<std::int64_t>(get_u64(cfg, k)); });
  set("synth.feature_dim", [&](const std::string& k) { c.feature_dim = get_size(cfg, k); });
  set("synth.sigma", [&](const std::string& k) { c.sigma = get_double(cfg, k); });
  set("synth.beta", [&](const std::string& k) { c.beta = get_double(cfg, k); });
  set("synth.drift_rank", [&](const std::string& k) { c.drift_rank = get_size(cfg, k); });
  set("synth.inter_entity_min_distance",
      [&](const std::string& k) { c.inter_entity_min_distance = get_double(cfg, k); });
  c.validate();
  return c;
}

inline FragmentConfig fragment_config(const RunConfig& cfg) {
  FragmentConfig c;
  c.kappa = get_size(cfg, "fragment.kappa");
  c.sampling_stride = get_size(cfg, "fragment.sampling_stride");
  c.iou_min = get_double(cfg, "fragment.iou_min");
  c.psi = get_double(cfg, "fragment.psi");
  c.validate();
  return c;
}

inline LossConfig loss_config(const RunConfig& cfg) {
  LossConfig c;
  c.mode = parse_loss_mode(get(cfg, "loss.mode"));
  c.tau = get_double(cfg, "loss.tau");
  c.lambda = get_double(cfg, "loss.lambda");
  c.validate();
  return c;
}

inline HeadConfig head_config(const RunConfig& cfg, std::size_t input_dim) {
  HeadConfig c{input_dim, get_size(cfg, "head.hidden_dim"), get_size(cfg, "head.embedding_dim")};
  c.validate();
  return c;
}

inline TrainerConfig trainer_config(const RunConfig& cfg) {
  TrainerConfig c;
  c.batch_size = get_size(cfg, "trainer.batch_size");
  c.views_per_polyp = get_size(cfg, "trainer.views_per_polyp");
  c.polyps_per_batch = get_size(cfg, "trainer.polyps_per_batch");
  c.epochs = get_size(cfg, "trainer.epochs");
  c.steps_per_epoch = get_size(cfg, "trainer.steps_per_epoch");
  c.learning_rate = get_double(cfg, "trainer.learning_rate");
  c.optimizer = parse_optimizer(get(cfg, "trainer.optimizer"));
  c.seed = get_u64(cfg, "trainer.seed");
  c.validate();
  return c;
}

inline ClusteringConfig clustering_config(const RunConfig& cfg) {
  ClusteringConfig c;
  c.algorithm = parse_cluster_algorithm(get(cfg, "cluster.algorithm"));
  c.threshold = get_double(cfg, "cluster.threshold");
  c.preference = get_double(cfg, "cluster.preference");
  c.gamma = get_double(cfg, "cluster.gamma");
  c.alpha = get_double(cfg, "cluster.alpha");
  c.damping = get_double(cfg, "cluster.damping");
  c.max_iterations = get_size(cfg, "cluster.max_iterations");
  c.convergence_window = get_size(cfg, "cluster.convergence_window");
  c.validate();
  return c;
}

inline std::size_t jobs(const RunConfig& cfg) {
  const std::size_t j = get_size(cfg, "run.jobs");
  return j == 0 ? default_jobs() : j;
}

// ------------------------------------------------------------------ hashing

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::data, "SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

// ------------------------------------------------------------------ context

struct RunContext {
  std::string subcommand;
  RunConfig cfg;
  std::map<std::string, std::string> inputs;     // path -> sha256
  std::map<std::string, std::string> artifacts;  // file name -> content
  bool verbose = false;

  std::string read(const std::string& path) {
    std::string text = io::read_file(path);
    inputs[path] = sha256_hex(text);
    return text;
  }

  json read_json(const std::string& path) {
    const std::string text = read(path);
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw DataError(path + ": " + e.what());
    }
  }

  void log(const std::string& msg) const {
    if (verbose) std::cerr << "polycount " << subcommand << ": " << msg << "\n";
  }

  void emit(const std::string& name, std::string content) { artifacts[name] = std::move(content); }
};

inline std::string require_path(const RunContext& ctx, const std::string& key) {
  const std::string& v = get(ctx.cfg, key);
  if (v.empty()) throw UsageError(find_param(key)->flag + " is required");
  return v;
}

struct LoadedData {
  std::vector<DetectionRecord> detections;
  std::vector<VideoInfo> videos;
};

inline LoadedData load_data(RunContext& ctx) {
  std::string det = get(ctx.cfg, "io.detections"), vid = get(ctx.cfg, "io.videos");
  const std::string& dir = get(ctx.cfg, "io.data");
  if (det.empty() && !dir.empty()) det = (std::filesystem::path(dir) / "detections.jsonl").string();
  if (vid.empty() && !dir.empty()) vid = (std::filesystem::path(dir) / "scenario.json").string();
  if (det.empty() || vid.empty()) throw UsageError("--data (or --detections and --videos) is required");
  LoadedData d;
  std::istringstream in(ctx.read(det));
  d.detections = io::read_detections(in, det);
  try {
    d.videos = io::videos_from_json(ctx.read_json(vid));
  } catch (const json::exception& e) {
    throw DataError(vid + ": " + e.what());
  }
  return d;
}

// ---------------------------------------------------------------- commands

inline json cmd_generate(RunContext& ctx) {
  const ScenarioConfig sc = scenario_config(ctx.cfg);
  const Scenario s = generate(sc);
  ctx.emit("detections.jsonl", io::detections_jsonl(s.detections));
  ctx.emit("scenario.json", io::dump(io::scenario_json(s)));
  std::set<std::string> entities;
  for (const auto& t : s.truth) entities.insert(qualified_entity(t.video_id, t.entity_id));
  return {{"videos", s.videos.size()},
          {"detections", s.detections.size()},
          {"tracklets", s.truth.size()},
          {"entities", entities.size()}};
}

inline json cmd_tracklets(RunContext& ctx) {
  const FragmentConfig fc = fragment_config(ctx.cfg);
  const LoadedData data = load_data(ctx);
  const auto prepared = prepare_videos(data.detections, data.videos, fc);
  json out{{"videos", json::array()}};
  std::size_t n_tracklets = 0, n_fragments = 0, n_skipped = 0;
  for (const auto& pv : prepared) {
    // frames without known size are not clamped
    const FrameBounds bounds{pv.info.width > 0.0 ? pv.info.width : std::numeric_limits<double>::infinity(),
                             pv.info.height > 0.0 ? pv.info.height : std::numeric_limits<double>::infinity()};
    json jv{{"video_id", pv.info.video_id}, {"length", pv.info.length}, {"split", pv.info.split},
            {"entity_spans", pv.entity_spans}, {"skipped", pv.skipped}, {"tracklets", json::array()}};
    for (std::size_t t = 0; t < pv.tracklets.size(); ++t) {
      const auto& tr = pv.tracklets[t];
      std::vector<std::int64_t> frames;
      for (const auto& d : tr.frames) frames.push_back(d.frame_index);
      json jt{{"tracklet_id", tr.tracklet_id}, {"entity_id", tr.entity_id}, {"frames", frames},
              {"fragments", json::array()}};
      for (const auto& f : pv.fragments[t]) {
        json jf{{"index", f.index}, {"timestamp", f.timestamp}, {"frames", json::array()},
                {"crops", json::array()}};
        for (const auto& d : f.frames) {
          jf["frames"].push_back(d.frame_index);
          const BBox c = enlarge_bbox(d.bbox, fc.psi, bounds);
          jf["crops"].push_back({c.x_min, c.y_min, c.x_max, c.y_max});
        }
        jt["fragments"].push_back(std::move(jf));
        ++n_fragments;
      }
      jv["tracklets"].push_back(std::move(jt));
      ++n_tracklets;
    }
    n_skipped += pv.skipped.size();
    out["videos"].push_back(std::move(jv));
  }
  ctx.emit("tracklets.json", io::dump(out));
  return {{"videos", prepared.size()}, {"tracklets", n_tracklets}, {"fragments", n_fragments},
          {"skipped", n_skipped}};
}

inline json checkpoint_json(const EmbeddingHead& head, const HeadConfig& hc, const LossConfig& lc,
                            const TrainerConfig& tc, const TrainResult& res) {
  return {{"format", "polycount-head"},
          {"version", kVersion},
          {"head", {{"input_dim", hc.input_dim}, {"hidden_dim", hc.hidden_dim},
                    {"embedding_dim", hc.embedding_dim}}},
          {"loss", {{"mode", to_string(lc.mode)}, {"tau", lc.tau}, {"lambda", lc.lambda}}},
          {"trainer", {{"batch_size", tc.batch_size}, {"views_per_polyp", tc.views_per_polyp},
                       {"polyps_per_batch", tc.polyps_per_batch}, {"epochs", tc.epochs},
                       {"steps_per_epoch", tc.steps_per_epoch}, {"learning_rate", tc.learning_rate},
                       {"optimizer", to_string(tc.optimizer)}}},
          {"seed", tc.seed},
          {"epoch_loss", res.epoch_loss},
          {"heldout_loss", res.heldout_loss},
          {"layers", io::head_json(head)}};
}

struct Trained {
  std::vector<PreparedVideo> prepared;
  TrainResult result;
  json checkpoint;
  std::size_t entities = 0;
  std::size_t fragments = 0;
};

inline Trained train_from_data(RunContext& ctx) {
  const FragmentConfig fc = fragment_config(ctx.cfg);
  const LossConfig lc = loss_config(ctx.cfg);
  const TrainerConfig tc = trainer_config(ctx.cfg);
  const LoadedData data = load_data(ctx);
  Trained t;
  t.prepared = prepare_videos(data.detections, data.videos, fc);
  const TrainingSet set = training_set(t.prepared);
  for (const auto& g : set) t.fragments += g.fragments.size();
  t.entities = set.size();
  const HeadConfig hc = head_config(ctx.cfg, feature_dim(t.prepared));
  ctx.log("training on " + std::to_string(t.entities) + " entities, " +
          std::to_string(t.fragments) + " fragments");
  t.result = train(set, EmbeddingHead::initialize(hc, tc.seed), lc, tc);
  t.checkpoint = checkpoint_json(t.result.head, hc, lc, tc, t.result);
  return t;
}

inline json cmd_train(RunContext& ctx) {
  Trained t = train_from_data(ctx);
  ctx.emit("checkpoint.json", io::dump(t.checkpoint));
  const auto& r = t.result;
  return {{"entities", t.entities},
          {"fragments", t.fragments},
          {"epochs", r.epoch_loss.size()},
          {"initial_heldout_loss", r.heldout_loss.empty() ? json() : json(r.heldout_loss.front())},
          {"final_loss", r.epoch_loss.empty() ? json() : json(r.epoch_loss.back())},
          {"final_heldout_loss", r.heldout_loss.empty() ? json() : json(r.heldout_loss.back())}};
}

inline EmbeddingHead load_checkpoint(RunContext& ctx) {
  const std::string path = require_path(ctx, "io.checkpoint");
  const json j = ctx.read_json(path);
  try {
    return io::head_from_json(j.at("layers"));
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline json cmd_embed(RunContext& ctx) {
  const FragmentConfig fc = fragment_config(ctx.cfg);
  const EmbeddingHead head = load_checkpoint(ctx);
  const LoadedData data = load_data(ctx);
  const auto prepared = prepare_videos(data.detections, data.videos, fc);
  if (feature_dim(prepared) != head.input_dim())
    throw DataError("checkpoint expects " + std::to_string(head.input_dim()) +
                    "-dim features, data has " + std::to_string(feature_dim(prepared)));
  const auto embedded = embed_videos(head, prepared, get(ctx.cfg, "io.split"));
  ctx.emit("embeddings.json", io::dump(io::embeddings_json(embedded)));
  std::size_t n = 0;
  for (const auto& v : embedded) n += v.tracklets.size();
  return {{"videos", embedded.size()}, {"tracklets", n}, {"embedding_dim", head.output_dim()}};
}

inline std::vector<EmbeddedVideo> load_embeddings(RunContext& ctx) {
  return io::embeddings_from_json(ctx.read_json(require_path(ctx, "io.embeddings")));
}

inline json cmd_cluster(RunContext& ctx) {
  const ClusteringConfig cc = clustering_config(ctx.cfg);
  const auto videos = load_embeddings(ctx);
  std::vector<io::ClusteredVideo> out;
  json summary = json::array();
  for (const auto& ev : videos) {
    const VideoInstance inst = to_instance(ev);
    io::ClusteredVideo cv{ev.video_id, {}, cluster_tracklets(inst.descriptors, cc)};
    for (const auto& t : ev.tracklets) cv.tracklet_ids.push_back(t.tracklet_id);
    summary.push_back({{"video_id", ev.video_id},
                       {"tracklets", ev.tracklets.size()},
                       {"entity_count", cv.result.entity_count},
                       {"converged", cv.result.converged}});
    out.push_back(std::move(cv));
  }
  ctx.emit("clusters.json", io::dump(io::clusters_json(cc, out)));
  return {{"config", io::config_json(cc)}, {"videos", summary}};
}

inline json cmd_evaluate(RunContext& ctx) {
  const FprMetric metric = parse_fpr_metric(get(ctx.cfg, "eval.fpr_metric"));
  const auto videos = load_embeddings(ctx);
  const auto clusters = io::clusters_from_json(ctx.read_json(require_path(ctx, "io.clusters")));
  std::map<std::string, const io::ClusteredVideo*> by_id;
  for (const auto& c : clusters) by_id[c.video_id] = &c;

  json rows = json::array();
  std::vector<double> frs, fprs, base_frs;
  std::string csv = "video_id,tracklets,entities,clusters,fr,fpr,baseline_fr\n";
  for (const auto& ev : videos) {
    if (ev.tracklets.empty()) continue;
    auto it = by_id.find(ev.video_id);
    if (it == by_id.end()) throw DataError("no clusters for video " + ev.video_id);
    const auto& cv = *it->second;
    const VideoInstance inst = to_instance(ev);
    for (std::size_t i = 0; i < ev.tracklets.size(); ++i)
      if (i >= cv.tracklet_ids.size() || cv.tracklet_ids[i] != ev.tracklets[i].tracklet_id)
        throw DataError("cluster tracklets of " + ev.video_id + " do not match the embeddings");
    if (cv.tracklet_ids.size() != ev.tracklets.size())
      throw DataError("cluster tracklets of " + ev.video_id + " do not match the embeddings");
    const double fr = fragmentation_rate(cv.result.labels, inst.entity_ids);
    const double fpr = false_positive_rate(cv.result.labels, inst.entity_ids, metric);
    const double base = fragmentation_rate(singleton_labels(inst.size()), inst.entity_ids);
    frs.push_back(fr);
    fprs.push_back(fpr);
    base_frs.push_back(base);
    rows.push_back({{"video_id", ev.video_id}, {"tracklets", inst.size()},
                    {"entities", distinct_entities(inst)}, {"clusters", cv.result.entity_count},
                    {"fr", fr}, {"fpr", fpr}, {"baseline_fr", base}});
    csv += ev.video_id + "," + std::to_string(inst.size()) + "," +
           std::to_string(distinct_entities(inst)) + "," + std::to_string(cv.result.entity_count) +
           "," + io::fmt_double(fr) + "," + io::fmt_double(fpr) + "," + io::fmt_double(base) + "\n";
  }
  if (frs.empty()) throw DataError("no videos with tracklets to evaluate");
  const MeanStd fr = mean_std(frs), fpr = mean_std(fprs), base = mean_std(base_frs);
  json result{{"fpr_metric", to_string(metric)},
              {"fr", {{"mean", fr.mean}, {"std", fr.std}}},
              {"fpr", {{"mean", fpr.mean}, {"std", fpr.std}}},
              {"baseline", {{"fr", {{"mean", base.mean}, {"std", base.std}}}, {"fpr", 0.0}}},
              {"videos", rows}};
  ctx.emit("evaluation.json", io::dump(result));
  ctx.emit("evaluation.csv", csv);
  return result;
}

inline GridSearchResult run_grid(RunContext& ctx, const std::vector<VideoInstance>& instances) {
  const ClusteringConfig base = clustering_config(ctx.cfg);
  const GridSpec grid = GridSpec::named(get(ctx.cfg, "eval.grid"));
  const FprMetric metric = parse_fpr_metric(get(ctx.cfg, "eval.fpr_metric"));
  ctx.log("grid search over " + std::to_string(instances.size()) + " videos with " +
          std::to_string(jobs(ctx.cfg)) + " jobs");
  return grid_search(instances, base.algorithm, grid, base, jobs(ctx.cfg), metric);
}

inline json cmd_grid_search(RunContext& ctx) {
  const auto instances = to_instances(load_embeddings(ctx));
  if (instances.empty()) throw DataError("no videos with tracklets");
  const GridSearchResult g = run_grid(ctx, instances);
  const double rho = get_double(ctx.cfg, "eval.rho");
  const SelectionRule rule = parse_selection_rule(get(ctx.cfg, "eval.selection"));
  std::vector<std::size_t> all(instances.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  json configs = json::array();
  for (std::size_t c = 0; c < g.configs.size(); ++c) {
    const Selection s = mean_scores(g, c, all);
    json jc = io::config_json(g.configs[c]);
    jc["index"] = c;
    jc["mean_fr"] = s.mean_fr;
    jc["mean_fpr"] = s.mean_fpr;
    configs.push_back(std::move(jc));
  }
  const Selection best = select_hyperparams(g, all, rho, rule);
  json selected = io::config_json(g.configs[best.index]);
  json out{{"algorithm", to_string(g.algorithm)},
           {"grid", get(ctx.cfg, "eval.grid")},
           {"videos", g.video_ids},
           {"rho", rho},
           {"selection_rule", to_string(rule)},
           {"selected", {{"index", best.index}, {"config", selected}, {"mean_fr", best.mean_fr},
                         {"mean_fpr", best.mean_fpr}}},
           {"configs", std::move(configs)}};
  ctx.emit("grid.json", io::dump(out));
  ctx.emit("grid.csv", io::grid_csv(g));
  return {{"algorithm", out["algorithm"]}, {"configs", g.configs.size()},
          {"videos", g.video_ids.size()}, {"selected", out["selected"]}};
}

inline json cmd_loocv(RunContext& ctx) {
  const bool from_data = !get(ctx.cfg, "io.data").empty() || !get(ctx.cfg, "io.detections").empty();
  const bool from_embeddings = !get(ctx.cfg, "io.embeddings").empty();
  if (from_data == from_embeddings) throw UsageError("loocv needs exactly one of --data or --embeddings");
  std::vector<EmbeddedVideo> embedded;
  if (from_data) {
    Trained t = train_from_data(ctx);
    embedded = embed_videos(t.result.head, t.prepared, get(ctx.cfg, "io.split"));
    ctx.emit("checkpoint.json", io::dump(t.checkpoint));
    ctx.emit("embeddings.json", io::dump(io::embeddings_json(embedded)));
  } else {
    embedded = load_embeddings(ctx);
  }
  const auto instances = to_instances(embedded);
  const GridSearchResult g = run_grid(ctx, instances);
  const EvaluationReport rep = loocv(g, instances, get_double(ctx.cfg, "eval.rho"),
                                     parse_selection_rule(get(ctx.cfg, "eval.selection")));
  json j = io::report_json(rep);
  j["fpr_metric"] = get(ctx.cfg, "eval.fpr_metric");
  j["grid"] = get(ctx.cfg, "eval.grid");
  ctx.emit("report.json", io::dump(j));
  ctx.emit("report.csv", io::report_csv(rep));
  return j;
}

inline json cmd_loss_check(RunContext& ctx) {
  const std::size_t batches = get_size(ctx.cfg, "check.batches");
  if (batches == 0) throw UsageError("--batches must be positive");
  const double eps = get_double(ctx.cfg, "check.epsilon");
  if (!(eps > 0.0)) throw UsageError("--epsilon must be positive");
  const LossConfig lc{get_double(ctx.cfg, "loss.tau"), get_double(ctx.cfg, "loss.lambda"),
                      LossMode::temporally_aware};
  lc.validate();
  const auto rep = run_gradient_check(batches, get_u64(ctx.cfg, "check.seed"), lc.tau, lc.lambda, eps);
  constexpr double loss_tol = 1e-5, head_tol = 1e-4;
  json j{{"batches", rep.batches},
         {"epsilon", eps},
         {"max_relative_error", {{"self_supervised", rep.max_error_self_supervised},
                                 {"supervised", rep.max_error_supervised},
                                 {"temporally_aware", rep.max_error_temporally_aware},
                                 {"head", rep.max_error_head}}},
         {"tolerance", {{"loss", loss_tol}, {"head", head_tol}}},
         {"passed", rep.max_loss_error() <= loss_tol && rep.max_error_head <= head_tol}};
  ctx.emit("loss_check.json", io::dump(j));
  return j;
}

// ------------------------------------------------------------- subcommands

struct Subcommand {
  std::string name;
  std::string description;
  std::vector<std::string> keys;  // exact keys, or prefixes ending in '.'
  std::string seed_key;
  std::function<json(RunContext&)> run;
};

inline const std::vector<Subcommand>& subcommands() {
  static const std::vector<std::string> data = {"io.data", "io.detections", "io.videos"};
  auto cat = [](std::initializer_list<std::vector<std::string>> parts) {
    std::vector<std::string> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
  };
  static const std::vector<Subcommand> table = {
      {"generate", "Generate a synthetic scenario (detections.jsonl, scenario.json)",
       {"synth.", "io.out"}, "synth.seed", cmd_generate},
      {"tracklets", "Build tracklets, fragments and enlarged crop boxes",
       cat({data, {"fragment.", "io.out"}}), "", cmd_tracklets},
      {"train", "Train the embedding head on the training split",
       cat({data, {"fragment.", "loss.", "head.", "trainer.", "io.out"}}), "trainer.seed", cmd_train},
      {"embed", "Embed tracklets with a trained head",
       cat({data, {"io.checkpoint", "io.split", "fragment.", "io.out"}}), "", cmd_embed},
      {"cluster", "Cluster tracklet embeddings per video",
       {"io.embeddings", "cluster.", "io.out"}, "", cmd_cluster},
      {"evaluate", "Score cluster assignments (FR, FPR)",
       {"io.embeddings", "io.clusters", "eval.fpr_metric", "io.out"}, "", cmd_evaluate},
      {"grid-search", "Score every grid configuration on every video",
       {"io.embeddings", "cluster.", "eval.", "run.jobs", "io.out"}, "", cmd_grid_search},
      {"loocv", "Leave-one-video-out evaluation (from embeddings, or train + embed from --data)",
       cat({data, {"io.embeddings", "io.split", "fragment.", "loss.", "head.", "trainer.", "cluster.",
                   "eval.", "run.jobs", "io.out"}}),
       "trainer.seed", cmd_loocv},
      {"loss-check", "Finite-difference check of the loss and head gradients",
       {"check.", "loss.tau", "loss.lambda", "io.out"}, "check.seed", cmd_loss_check},
  };
  return table;
}

inline const Subcommand* find_subcommand(const std::string& name) {
  for (const auto& s : subcommands())
    if (s.name == name) return &s;
  return nullptr;
}

inline bool uses_key(const Subcommand& sc, const std::string& key) {
  return std::any_of(sc.keys.begin(), sc.keys.end(), [&](const std::string& k) {
    return k.back() == '.' ? key.rfind(k, 0) == 0 : key == k;
  });
}

inline std::vector<const Param*> params_for(const Subcommand& sc) {
  std::vector<const Param*> out;
  for (const auto& p : params())
    if (uses_key(sc, p.key)) out.push_back(&p);
  return out;
}

inline RunConfig default_config(const Subcommand& sc) {
  RunConfig cfg;
  for (const Param* p : params_for(sc)) cfg[p->key] = p->def;
  return cfg;
}

inline bool is_path_key(const std::string& key) {
  return key.rfind("io.", 0) == 0 && key != "io.split";
}

// Paths become absolute so manifests do not depend on the working directory.
inline void absolutize(RunConfig& cfg) {
  for (auto& [k, v] : cfg)
    if (is_path_key(k) && !v.empty()) v = std::filesystem::absolute(v).lexically_normal().string();
}

// --------------------------------------------------------------- manifests

inline json manifest_json(const RunContext& ctx, const Subcommand& sc) {
  json cfg = json::object();
  for (const auto& [k, v] : ctx.cfg) cfg[k] = v;
  json inputs = json::object(), outputs = json::object();
  for (const auto& [k, v] : ctx.inputs) inputs[k] = v;
  for (const auto& [k, v] : ctx.artifacts) outputs[k] = sha256_hex(v);
  return {{"tool", "polycount"},
          {"version", kVersion},
          {"subcommand", sc.name},
          {"seed", sc.seed_key.empty() ? json() : json(get(ctx.cfg, sc.seed_key))},
          {"config", cfg},
          {"inputs", inputs},
          {"outputs", outputs}};
}

inline RunContext execute(const Subcommand& sc, RunConfig cfg, bool verbose) {
  RunContext ctx{sc.name, std::move(cfg), {}, {}, verbose};
  json result = sc.run(ctx);
  ctx.artifacts["result.json"] = io::dump(result);
  return ctx;
}

inline void write_outputs(const RunContext& ctx, const Subcommand& sc) {
  const std::filesystem::path out = get(ctx.cfg, "io.out");
  for (const auto& [name, content] : ctx.artifacts) io::write_file(out / name, content);
  io::write_file(out / "manifest.json", io::dump(manifest_json(ctx, sc)));
}

struct ReproduceReport {
  bool match = true;
  json detail;
};

// Re-runs a manifest in memory and compares input and output hashes.
inline ReproduceReport reproduce(const json& manifest, bool verbose = false) {
  const Subcommand* sc = nullptr;
  RunConfig cfg;
  try {
    if (manifest.at("tool").get<std::string>() != "polycount") throw DataError("not a polycount manifest");
    sc = find_subcommand(manifest.at("subcommand").get<std::string>());
    if (!sc) throw DataError("manifest names an unknown subcommand");
    cfg = default_config(*sc);
    for (const auto& [k, v] : manifest.at("config").items()) {
      if (!cfg.count(k)) throw DataError("manifest config has unknown key " + k);
      cfg[k] = v.get<std::string>();
    }
    if (!sc->seed_key.empty() && manifest.contains("seed") && manifest["seed"].is_string())
      cfg[sc->seed_key] = manifest["seed"].get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest: ") + e.what());
  }

  ReproduceReport rep;
  json inputs = json::object();
  for (const auto& [path, expected] : manifest.at("inputs").items()) {
    std::string actual;
    try {
      actual = sha256_hex(io::read_file(path));
    } catch (const DataError&) {
      actual = "missing";
    }
    const bool ok = actual == expected.get<std::string>();
    rep.match = rep.match && ok;
    inputs[path] = {{"expected", expected}, {"actual", actual}, {"match", ok}};
  }

  const RunContext ctx = execute(*sc, cfg, verbose);
  json outputs = json::object();
  std::set<std::string> names;
  for (const auto& [name, h] : manifest.at("outputs").items()) names.insert(name);
  for (const auto& [name, content] : ctx.artifacts) names.insert(name);
  for (const auto& name : names) {
    const json expected = manifest["outputs"].contains(name) ? manifest["outputs"][name] : json();
    auto it = ctx.artifacts.find(name);
    const json actual = it == ctx.artifacts.end() ? json() : json(sha256_hex(it->second));
    const bool ok = expected == actual;
    rep.match = rep.match && ok;
    outputs[name] = {{"expected", expected}, {"actual", actual}, {"match", ok}};
  }
  rep.detail = {{"match", rep.match}, {"subcommand", sc->name}, {"inputs", inputs}, {"outputs", outputs}};
  return rep;
}

// --------------------------------------------------------------------- main

inline void print_error(std::ostream& err, ErrorKind kind, const std::string& message) {
  err << json{{"error", {{"kind", to_string(kind)}, {"message", message}, {"exit_code", exit_code(kind)}}}}
             .dump()
      << "\n";
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Counting distinct entities from video tracklets", "polycount"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "log progress to stderr");

  std::map<std::string, std::map<std::string, std::string>> values;  // subcommand -> key -> value
  std::map<std::string, std::string> config_files;
  std::string manifest_path;
  std::vector<std::pair<CLI::App*, const Subcommand*>> subs;
  for (const auto& sc : subcommands()) {
    CLI::App* sub = app.add_subcommand(sc.name, sc.description);
    sub->add_option("--config", config_files[sc.name], "flat key = value config file");
    for (const Param* p : params_for(sc)) {
      std::string help = p->help + " [" + p->key + (p->def.empty() ? "" : ", default " + p->def) + "]";
      sub->add_option(p->flag, values[sc.name][p->key], help);
    }
    subs.push_back({sub, &sc});
  }
  CLI::App* repro = app.add_subcommand("reproduce", "Re-run a manifest and compare artifact hashes");
  repro->add_option("manifest,--manifest", manifest_path, "manifest.json of an earlier run")->required();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::ostringstream help_out, help_err;
      app.exit(e, help_out, help_err);
      out << help_out.str();
      return 0;
    }
    print_error(err, ErrorKind::usage, e.what());
    return exit_code(ErrorKind::usage);
  }

  try {
    if (repro->parsed()) {
      const ReproduceReport rep = reproduce(io::parse_json_file(manifest_path), verbose);
      out << rep.detail.dump(2) << "\n";
      if (!rep.match) {
        print_error(err, ErrorKind::data, "reproduction mismatch for " + manifest_path);
        return exit_code(ErrorKind::data);
      }
      return 0;
    }
    for (const auto& [sub, sc] : subs) {
      if (!sub->parsed()) continue;
      RunConfig cfg = default_config(*sc);
      if (!config_files[sc->name].empty()) {
        for (const auto& [k, v] : parse_config_text(io::read_file(config_files[sc->name]),
                                                    config_files[sc->name])) {
          if (!cfg.count(k)) throw UsageError(config_files[sc->name] + ": key '" + k +
                                              "' does not apply to " + sc->name);
          cfg[k] = v;
        }
      }
      for (const Param* p : params_for(*sc))
        if (sub->count(p->flag) > 0) cfg[p->key] = values[sc->name][p->key];
      absolutize(cfg);
      const RunContext ctx = execute(*sc, std::move(cfg), verbose);
      write_outputs(ctx, *sc);
      out << ctx.artifacts.at("result.json");
      if (sc->name == "loss-check" && !json::parse(ctx.artifacts.at("result.json")).at("passed").get<bool>()) {
        print_error(err, ErrorKind::numerical, "gradient check exceeded tolerance");
        return exit_code(ErrorKind::numerical);
      }
      return 0;
    }
  } catch (const Error& e) {
    print_error(err, e.kind(), e.what());
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    print_error(err, ErrorKind::data, e.what());
    return exit_code(ErrorKind::data);
  } catch (const json::exception& e) {
    print_error(err, ErrorKind::data, e.what());
    return exit_code(ErrorKind::data);
  }
  print_error(err, ErrorKind::usage, "no subcommand");
  return exit_code(ErrorKind::usage);
}

inline int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace polycount::app
