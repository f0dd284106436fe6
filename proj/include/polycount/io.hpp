#pragma once

// File formats: detection JSON lines, scenario metadata, head checkpoints,
// tracklet embeddings, cluster assignments and evaluation reports.

#include <Eigen/Dense>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "polycount/clustering.hpp"
#include "polycount/error.hpp"
#include "polycount/evaluation.hpp"
#include "polycount/head.hpp"
#include "polycount/pipeline.hpp"
#include "polycount/synth.hpp"
#include "polycount/tracklets.hpp"

namespace polycount::io {

using json = nlohmann::ordered_json;

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
}

inline json parse_json_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- detections

inline json to_json(const DetectionRecord& d) {
  json j;
  j["video_id"] = d.video_id;
  j["frame_index"] = d.frame_index;
  j["entity_id"] = d.entity_id;
  j["bbox"] = {d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max};
  if (!d.feature.empty()) j["feature"] = d.feature;
  return j;
}

inline DetectionRecord detection_from_json(const json& j) {
  DetectionRecord d;
  d.video_id = j.at("video_id").get<std::string>();
  d.frame_index = j.at("frame_index").get<std::int64_t>();
  if (d.frame_index < 0) throw DataError("negative frame_index");
  d.entity_id = j.at("entity_id").get<std::string>();
  const auto& b = j.at("bbox");
  if (!b.is_array() || b.size() != 4) throw DataError("bbox must be [x_min, y_min, x_max, y_max]");
  d.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  if (!d.bbox.valid()) throw DataError("degenerate bbox");
  if (j.contains("feature")) d.feature = j["feature"].get<std::vector<double>>();
  return d;
}

// One JSON object per line; errors carry the 1-based line number.
inline std::vector<DetectionRecord> read_detections(std::istream& in, const std::string& name) {
  std::vector<DetectionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(detection_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(name + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(name + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<DetectionRecord> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_detections(in, path.string());
}

inline std::string detections_jsonl(const std::vector<DetectionRecord>& records) {
  std::string out;
  for (const auto& d : records) {
    out += to_json(d).dump();
    out += '\n';
  }
  return out;
}

// ------------------------------------------------------------------ scenario

inline json scenario_json(const Scenario& s) {
  json j;
  j["videos"] = json::array();
  for (const auto& v : s.videos)
    j["videos"].push_back({{"video_id", v.video_id},
                           {"length", v.length},
                           {"split", v.split},
                           {"width", v.width},
                           {"height", v.height}});
  j["truth"] = json::array();
  for (const auto& t : s.truth)
    j["truth"].push_back({{"tracklet_id", t.tracklet_id},
                          {"video_id", t.video_id},
                          {"entity_id", t.entity_id},
                          {"first_frame", t.first_frame},
                          {"last_frame", t.last_frame}});
  return j;
}

inline std::vector<VideoInfo> videos_from_json(const json& j) {
  std::vector<VideoInfo> out;
  for (const auto& v : j.at("videos")) {
    VideoInfo info;
    info.video_id = v.at("video_id").get<std::string>();
    info.length = v.at("length").get<std::int64_t>();
    info.split = v.value("split", std::string("eval"));
    info.width = v.value("width", 0.0);
    info.height = v.value("height", 0.0);
    out.push_back(info);
  }
  return out;
}

// ---------------------------------------------------------------- checkpoint

inline json head_json(const EmbeddingHead& head) {
  json layers = json::array();
  for (const auto& l : head.layers()) {
    std::vector<double> w(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
        w[static_cast<std::size_t>(r * l.weight.cols() + c)] = l.weight(r, c);
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", w},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return layers;
}

inline EmbeddingHead head_from_json(const json& layers) {
  std::vector<DenseLayer> out;
  for (const auto& l : layers) {
    const auto rows = l.at("rows").get<Eigen::Index>();
    const auto cols = l.at("cols").get<Eigen::Index>();
    const auto w = l.at("weight").get<std::vector<double>>();
    const auto b = l.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows)
      throw DataError("checkpoint layer shape mismatch");
    DenseLayer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) layer.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
      layer.bias(r) = b[static_cast<std::size_t>(r)];
    }
    out.push_back(std::move(layer));
  }
  EmbeddingHead head(std::move(out));
  if (!head.finite()) throw DataError("checkpoint contains non-finite parameters");
  return head;
}

// ---------------------------------------------------------------- embeddings

inline json embeddings_json(const std::vector<EmbeddedVideo>& videos) {
  json j;
  j["videos"] = json::array();
  for (const auto& v : videos) {
    json jv{{"video_id", v.video_id}, {"length", v.length}, {"tracklets", json::array()},
            {"skipped", v.skipped}};
    for (const auto& t : v.tracklets)
      jv["tracklets"].push_back(
          {{"tracklet_id", t.tracklet_id},
           {"entity_id", t.entity_id},
           {"position", t.position},
           {"embedding", std::vector<double>(t.embedding.data(), t.embedding.data() + t.embedding.size())}});
    j["videos"].push_back(std::move(jv));
  }
  return j;
}

inline std::vector<EmbeddedVideo> embeddings_from_json(const json& j) {
  std::vector<EmbeddedVideo> out;
  try {
    for (const auto& jv : j.at("videos")) {
      EmbeddedVideo v;
      v.video_id = jv.at("video_id").get<std::string>();
      v.length = jv.value("length", std::int64_t{0});
      if (jv.contains("skipped")) v.skipped = jv["skipped"].get<std::vector<std::string>>();
      for (const auto& jt : jv.at("tracklets")) {
        EmbeddedTracklet t;
        t.tracklet_id = jt.at("tracklet_id").get<std::string>();
        t.entity_id = jt.value("entity_id", std::string());
        t.position = jt.at("position").get<double>();
        if (!(t.position >= 0.0 && t.position <= 1.0))
          throw DataError("position of " + t.tracklet_id + " outside [0, 1]");
        const auto e = jt.at("embedding").get<std::vector<double>>();
        t.embedding = Eigen::Map<const Eigen::VectorXd>(e.data(), static_cast<Eigen::Index>(e.size()));
        const double n = t.embedding.norm();
        if (!(std::abs(n - 1.0) <= 1e-6))
          throw DataError("embedding of " + t.tracklet_id + " is not unit norm");
        v.tracklets.push_back(std::move(t));
      }
      out.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("embeddings file: ") + e.what());
  }
  return out;
}

// ------------------------------------------------------------------ clusters

inline json config_json(const ClusteringConfig& c) {
  return {{"algorithm", to_string(c.algorithm)},
          {"threshold", c.threshold},
          {"preference", c.preference},
          {"gamma", c.gamma},
          {"alpha", c.alpha},
          {"damping", c.damping},
          {"max_iterations", c.max_iterations},
          {"convergence_window", c.convergence_window}};
}

inline ClusteringConfig config_from_json(const json& j) {
  ClusteringConfig c;
  c.algorithm = parse_cluster_algorithm(j.at("algorithm").get<std::string>());
  c.threshold = j.value("threshold", c.threshold);
  c.preference = j.value("preference", c.preference);
  c.gamma = j.value("gamma", c.gamma);
  c.alpha = j.value("alpha", c.alpha);
  c.damping = j.value("damping", c.damping);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.convergence_window = j.value("convergence_window", c.convergence_window);
  return c;
}

struct ClusteredVideo {
  std::string video_id;
  std::vector<std::string> tracklet_ids;
  ClusterResult result;
};

inline json clusters_json(const ClusteringConfig& cfg, const std::vector<ClusteredVideo>& videos) {
  json j;
  j["config"] = config_json(cfg);
  j["videos"] = json::array();
  for (const auto& v : videos)
    j["videos"].push_back({{"video_id", v.video_id},
                           {"tracklet_ids", v.tracklet_ids},
                           {"labels", v.result.labels},
                           {"exemplars", v.result.exemplars},
                           {"entity_count", v.result.entity_count},
                           {"converged", v.result.converged},
                           {"iterations", v.result.iterations}});
  return j;
}

inline std::vector<ClusteredVideo> clusters_from_json(const json& j) {
  std::vector<ClusteredVideo> out;
  try {
    for (const auto& jv : j.at("videos")) {
      ClusteredVideo v;
      v.video_id = jv.at("video_id").get<std::string>();
      v.tracklet_ids = jv.at("tracklet_ids").get<std::vector<std::string>>();
      v.result.labels = jv.at("labels").get<std::vector<int>>();
      if (v.result.labels.size() != v.tracklet_ids.size())
        throw DataError("cluster labels of " + v.video_id + " do not match its tracklets");
      v.result.entity_count = count_entities(v.result.labels);
      v.result.converged = jv.value("converged", true);
      out.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("clusters file: ") + e.what());
  }
  return out;
}

// -------------------------------------------------------------------- report

inline json report_json(const EvaluationReport& r) {
  json j;
  j["algorithm"] = to_string(r.algorithm);
  j["rho"] = r.rho;
  j["selection_rule"] = to_string(r.rule);
  j["fr"] = {{"mean", r.fr.mean}, {"std", r.fr.std}};
  j["fpr"] = {{"mean", r.fpr.mean}, {"std", r.fpr.std}};
  j["alpha"] = {{"mean", r.alpha.mean}, {"std", r.alpha.std}};
  j["folds"] = json::array();
  for (const auto& f : r.folds)
    j["folds"].push_back({{"video_id", f.video_id},
                          {"fr", f.fr},
                          {"fpr", f.fpr},
                          {"tracklets", f.tracklets},
                          {"entities", f.entities},
                          {"clusters", f.clusters},
                          {"validation_fr", f.validation_fr},
                          {"validation_fpr", f.validation_fpr},
                          {"selected", config_json(f.selected)}});
  return j;
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// One row per (config, video) plus the unweighted mean over videos.
inline std::string grid_csv(const GridSearchResult& g) {
  std::string out = "config,algorithm,threshold,preference,gamma,alpha,video_id,fr,fpr,clusters\n";
  for (std::size_t c = 0; c < g.configs.size(); ++c) {
    const auto& cfg = g.configs[c];
    const std::string prefix = std::to_string(c) + "," + to_string(cfg.algorithm) + "," +
                               fmt_double(cfg.threshold) + "," + fmt_double(cfg.preference) + "," +
                               fmt_double(cfg.gamma) + "," + fmt_double(cfg.alpha) + ",";
    double fr = 0.0, fpr = 0.0;
    for (std::size_t v = 0; v < g.video_ids.size(); ++v) {
      const auto& s = g.scores[c][v];
      out += prefix + g.video_ids[v] + "," + fmt_double(s.fr) + "," + fmt_double(s.fpr) + "," +
             std::to_string(s.clusters) + "\n";
      fr += s.fr;
      fpr += s.fpr;
    }
    const auto n = static_cast<double>(g.video_ids.size());
    out += prefix + "mean," + fmt_double(fr / n) + "," + fmt_double(fpr / n) + ",\n";
  }
  return out;
}

inline std::string report_csv(const EvaluationReport& r) {
  std::string out = "video_id,algorithm,threshold,preference,gamma,alpha,fr,fpr\n";
  for (const auto& f : r.folds)
    out += f.video_id + "," + to_string(f.selected.algorithm) + "," + fmt_double(f.selected.threshold) +
           "," + fmt_double(f.selected.preference) + "," + fmt_double(f.selected.gamma) + "," +
           fmt_double(f.selected.alpha) + "," + fmt_double(f.fr) + "," + fmt_double(f.fpr) + "\n";
  return out;
}

}  // namespace polycount::io
