#include "lac/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace lac {

using nlohmann::json;

void SkeletonTopology::check() const {
  if (num_joints <= 0) throw Error("topology: num_joints must be positive");
  if (root_joint < 0 || root_joint >= num_joints)
    throw Error("topology: root_joint out of range");
  if (static_cast<int>(edges.size()) != num_joints - 1)
    throw Error("topology: a tree over V nodes needs exactly V-1 edges");
  std::vector<int> parent(num_joints, -1);
  std::vector<bool> has_parent(num_joints, false);
  for (const auto& [p, c] : edges) {
    if (p < 0 || p >= num_joints || c < 0 || c >= num_joints)
      throw Error("topology: edge index out of range");
    if (c == root_joint) throw Error("topology: root cannot be a child");
    if (has_parent[c]) throw Error("topology: joint has two parents");
    has_parent[c] = true;
    parent[c] = p;
  }
  // Every non-root joint must reach the root without cycles.
  for (int v = 0; v < num_joints; ++v) {
    if (v == root_joint) continue;
    int cur = v;
    int hops = 0;
    while (cur != root_joint) {
      if (cur < 0 || !has_parent[cur] || ++hops > num_joints)
        throw Error("topology: edges do not form a single connected tree");
      cur = parent[cur];
    }
  }
  if (!joint_names.empty() &&
      static_cast<int>(joint_names.size()) != num_joints)
    throw Error("topology: joint_names size mismatch");
}

const SkeletonTopology& default_topology() {
  static const SkeletonTopology topo = [] {
    SkeletonTopology t;
    t.num_joints = 13;
    t.root_joint = 8;
    t.joint_names = {"head",    "neck",    "l_shoulder", "r_shoulder",
                     "l_elbow", "r_elbow", "l_wrist",    "r_wrist",
                     "pelvis",  "l_hip",   "r_hip",      "l_knee",
                     "r_knee"};
    t.edges = {{8, 1}, {1, 0}, {1, 2},  {1, 3},  {2, 4},  {3, 5},
               {4, 6}, {5, 7}, {8, 9},  {8, 10}, {9, 11}, {10, 12}};
    t.check();
    return t;
  }();
  return topo;
}

ValidationReport validate_sequence(const SkeletonSequence& seq,
                                   const SkeletonTopology& topo) {
  ValidationReport report;
  auto add = [&report](const std::string& msg) { report.violations.push_back(msg); };

  if (seq.length() < 1) add("empty sequence (T must be >= 1)");
  if (seq.channels != 2 && seq.channels != 3)
    add("channel count must be 2 or 3, got " + std::to_string(seq.channels));
  if (!(seq.fps > 0.0)) add("fps must be positive");
  if (seq.num_joints != topo.num_joints)
    add("joint-count mismatch: sequence has " + std::to_string(seq.num_joints) +
        " joints, topology has " + std::to_string(topo.num_joints));
  if (seq.frames.cols() != static_cast<Eigen::Index>(seq.num_joints) * seq.channels)
    add("frames width inconsistent with num_joints*channels");

  if (seq.frames.cols() == static_cast<Eigen::Index>(seq.num_joints) * seq.channels) {
    for (int t = 0; t < seq.length(); ++t) {
      for (int v = 0; v < seq.num_joints; ++v) {
        for (int c = 0; c < seq.channels; ++c) {
          if (!std::isfinite(seq.at(t, v, c))) {
            std::ostringstream os;
            os << "non-finite value at (" << t << "," << v << "," << c << ")";
            add(os.str());
            return report;  // first offending coordinate is enough
          }
        }
      }
    }
  }
  return report;
}

namespace {

double lower_median_bone_length(const SkeletonSequence& seq,
                                const SkeletonTopology& topo) {
  std::vector<double> lengths;
  lengths.reserve(topo.edges.size());
  for (const auto& [p, c] : topo.edges) {
    double sq = 0.0;
    for (int ch = 0; ch < seq.channels; ++ch) {
      const double d = seq.at(0, c, ch) - seq.at(0, p, ch);
      sq += d * d;
    }
    lengths.push_back(std::sqrt(sq));
  }
  std::sort(lengths.begin(), lengths.end());
  return lengths[(lengths.size() - 1) / 2];
}

}  // namespace

SkeletonSequence normalize_sequence(const SkeletonSequence& seq,
                                    const SkeletonTopology& topo) {
  const ValidationReport report = validate_sequence(seq, topo);
  if (!report.ok()) throw Error("normalize_sequence: " + report.violations.front());

  const double med = lower_median_bone_length(seq, topo);
  if (med < 1e-8) throw Error("degenerate skeleton");
  const double inv = 1.0 / med;

  SkeletonSequence out = seq;
  std::vector<double> root(seq.channels);
  for (int c = 0; c < seq.channels; ++c) root[c] = seq.at(0, topo.root_joint, c);
  for (int t = 0; t < out.length(); ++t)
    for (int v = 0; v < out.num_joints; ++v)
      for (int c = 0; c < out.channels; ++c)
        out.at(t, v, c) = (out.at(t, v, c) - root[c]) * inv;
  return out;
}

namespace {

json topology_to_json(const SkeletonTopology& topo) {
  json edges = json::array();
  for (const auto& [p, c] : topo.edges) edges.push_back({p, c});
  return json{{"num_joints", topo.num_joints},
              {"edges", edges},
              {"root_joint", topo.root_joint},
              {"joint_names", topo.joint_names}};
}

SkeletonTopology topology_from_json(const json& j) {
  SkeletonTopology topo;
  if (!j.contains("num_joints") || !j["num_joints"].is_number_integer())
    throw Error("parse error: topology.num_joints");
  topo.num_joints = j["num_joints"].get<int>();
  if (!j.contains("root_joint") || !j["root_joint"].is_number_integer())
    throw Error("parse error: topology.root_joint");
  topo.root_joint = j["root_joint"].get<int>();
  if (!j.contains("edges") || !j["edges"].is_array())
    throw Error("parse error: topology.edges");
  for (const auto& e : j["edges"]) {
    if (!e.is_array() || e.size() != 2) throw Error("parse error: topology.edges");
    topo.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
  }
  if (j.contains("joint_names"))
    topo.joint_names = j["joint_names"].get<std::vector<std::string>>();
  topo.check();
  return topo;
}

json load_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw Error(std::string(what) + ": cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(std::string(what) + ": parse error in " + path + ": " + e.what());
  }
  return j;
}

void store_text_file(const std::string& path, const std::string& text,
                     const char* what) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(std::string(what) + ": cannot open " + path + " for writing");
  out << text;
  if (!out) throw Error(std::string(what) + ": write failed for " + path);
}

}  // namespace

void write_sequence(const SkeletonSequence& seq, const SkeletonTopology& topo,
                    const std::string& path) {
  const ValidationReport report = validate_sequence(seq, topo);
  if (!report.ok()) throw Error("write_sequence: " + report.violations.front());

  json frames = json::array();
  for (int t = 0; t < seq.length(); ++t) {
    json frame = json::array();
    for (int v = 0; v < seq.num_joints; ++v) {
      json joint = json::array();
      for (int c = 0; c < seq.channels; ++c) joint.push_back(seq.at(t, v, c));
      frame.push_back(std::move(joint));
    }
    frames.push_back(std::move(frame));
  }
  json j{{"version", 1},
         {"fps", seq.fps},
         {"topology_id", seq.topology_id},
         {"topology", topology_to_json(topo)},
         {"frames", std::move(frames)},
         {"meta", seq.meta}};
  store_text_file(path, j.dump(), "write_sequence");
}

SkeletonSequence read_sequence(const std::string& path, SkeletonTopology* topo_out) {
  const json j = load_json_file(path, "read_sequence");
  if (!j.is_object()) throw Error("read_sequence: top-level value is not an object");
  if (!j.contains("version") || !j["version"].is_number_integer() ||
      j["version"].get<int>() != 1)
    throw Error("read_sequence: parse error: version");
  if (!j.contains("fps") || !j["fps"].is_number())
    throw Error("read_sequence: parse error: fps");
  if (!j.contains("topology")) throw Error("read_sequence: parse error: topology");
  const SkeletonTopology topo = topology_from_json(j["topology"]);
  if (topo_out) *topo_out = topo;

  if (!j.contains("frames") || !j["frames"].is_array() || j["frames"].empty())
    throw Error("read_sequence: parse error: frames");
  const auto& frames = j["frames"];
  const int T = static_cast<int>(frames.size());
  if (!frames[0].is_array() || frames[0].empty())
    throw Error("read_sequence: parse error: frames");
  const int V = static_cast<int>(frames[0].size());
  if (!frames[0][0].is_array() || frames[0][0].empty())
    throw Error("read_sequence: parse error: frames");
  const int C = static_cast<int>(frames[0][0].size());

  SkeletonSequence seq;
  seq.num_joints = V;
  seq.channels = C;
  seq.fps = j["fps"].get<double>();
  if (j.contains("topology_id")) seq.topology_id = j["topology_id"].get<std::string>();
  if (j.contains("meta"))
    seq.meta = j["meta"].get<std::map<std::string, std::string>>();
  seq.frames.resize(T, V * C);
  for (int t = 0; t < T; ++t) {
    if (!frames[t].is_array() || static_cast<int>(frames[t].size()) != V)
      throw Error("read_sequence: parse error: frames (ragged joint rows)");
    for (int v = 0; v < V; ++v) {
      const auto& joint = frames[t][v];
      if (!joint.is_array() || static_cast<int>(joint.size()) != C)
        throw Error("read_sequence: parse error: frames (ragged channel rows)");
      for (int c = 0; c < C; ++c) {
        if (!joint[c].is_number())
          throw Error("read_sequence: parse error: frames (non-numeric value)");
        seq.at(t, v, c) = joint[c].get<double>();
      }
    }
  }
  return seq;
}

std::string to_string(ManifestKind kind) {
  switch (kind) {
    case ManifestKind::kTrimmed: return "trimmed";
    case ManifestKind::kUntrimmed: return "untrimmed";
    case ManifestKind::kRetargetPairs: return "retarget_pairs";
  }
  throw Error("unknown manifest kind");
}

ManifestKind manifest_kind_from_string(const std::string& s) {
  if (s == "trimmed") return ManifestKind::kTrimmed;
  if (s == "untrimmed") return ManifestKind::kUntrimmed;
  if (s == "retarget_pairs") return ManifestKind::kRetargetPairs;
  throw Error("unknown manifest kind: " + s);
}

std::vector<const ManifestEntry*> DatasetManifest::split_entries(
    const std::string& split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(&e);
  return out;
}

void DatasetManifest::check() const {
  std::vector<std::string> paths;
  for (const auto& e : entries) {
    if (e.split != "train" && e.split != "test")
      throw Error("manifest: unknown split value: " + e.split);
    paths.push_back(e.sequence_path);
  }
  std::sort(paths.begin(), paths.end());
  if (std::adjacent_find(paths.begin(), paths.end()) != paths.end())
    throw Error("manifest: sequence_path values are not unique");
}

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  manifest.check();
  std::ostringstream os;
  os << json{{"kind", to_string(manifest.kind)}}.dump() << "\n";
  for (const auto& e : manifest.entries) {
    json j{{"sequence_path", e.sequence_path},
           {"character_id", e.character_id},
           {"motion_ids", e.motion_ids},
           {"viewpoint_id", e.viewpoint_id},
           {"split", e.split}};
    if (!e.labels_path.empty()) j["labels_path"] = e.labels_path;
    os << j.dump() << "\n";
  }
  store_text_file(path, os.str(), "write_manifest");
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_manifest: cannot open " + path);
  DatasetManifest manifest;
  std::string line;
  bool header = true;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error("read_manifest: parse error at line " + std::to_string(lineno) +
                  ": " + e.what());
    }
    if (header) {
      if (!j.contains("kind")) throw Error("read_manifest: missing kind header");
      manifest.kind = manifest_kind_from_string(j["kind"].get<std::string>());
      header = false;
      continue;
    }
    ManifestEntry e;
    e.sequence_path = j.at("sequence_path").get<std::string>();
    e.character_id = j.at("character_id").get<std::string>();
    e.motion_ids = j.at("motion_ids").get<std::vector<std::string>>();
    e.viewpoint_id = j.at("viewpoint_id").get<std::string>();
    e.split = j.at("split").get<std::string>();
    if (j.contains("labels_path")) e.labels_path = j["labels_path"].get<std::string>();
    manifest.entries.push_back(std::move(e));
  }
  if (header) throw Error("read_manifest: empty manifest file " + path);
  manifest.check();
  return manifest;
}

void UntrimmedAnnotation::check() const {
  if (labels.rows() < 1 || labels.cols() < 1)
    throw Error("annotation: empty label matrix");
  if (static_cast<int>(class_names.size()) != labels.cols())
    throw Error("annotation: class_names size mismatch");
  bool any = false;
  for (Eigen::Index t = 0; t < labels.rows(); ++t)
    for (Eigen::Index k = 0; k < labels.cols(); ++k) {
      const double v = labels(t, k);
      if (v != 0.0 && v != 1.0) throw Error("annotation: labels must be 0/1");
      any = any || v == 1.0;
    }
  if (!any) throw Error("annotation: no frame has an active class");
}

void write_annotation(const UntrimmedAnnotation& ann, const std::string& path) {
  ann.check();
  json rows = json::array();
  for (Eigen::Index t = 0; t < ann.labels.rows(); ++t) {
    json row = json::array();
    for (Eigen::Index k = 0; k < ann.labels.cols(); ++k)
      row.push_back(static_cast<int>(ann.labels(t, k)));
    rows.push_back(std::move(row));
  }
  json j{{"class_names", ann.class_names}, {"labels", std::move(rows)}};
  store_text_file(path, j.dump(), "write_annotation");
}

UntrimmedAnnotation read_annotation(const std::string& path) {
  const json j = load_json_file(path, "read_annotation");
  UntrimmedAnnotation ann;
  ann.class_names = j.at("class_names").get<std::vector<std::string>>();
  const auto& rows = j.at("labels");
  if (!rows.is_array() || rows.empty())
    throw Error("read_annotation: parse error: labels");
  const int T = static_cast<int>(rows.size());
  const int C = static_cast<int>(rows[0].size());
  ann.labels.resize(T, C);
  for (int t = 0; t < T; ++t) {
    if (static_cast<int>(rows[t].size()) != C)
      throw Error("read_annotation: parse error: labels (ragged rows)");
    for (int k = 0; k < C; ++k) ann.labels(t, k) = rows[t][k].get<double>();
  }
  ann.check();
  return ann;
}

}  // namespace lac
