#pragma once

#include <map>
#include <string>
#include <vector>

#include "lac/common.hpp"

namespace lac {

/// Joint tree of a skeleton. Edges are (parent, child) pairs forming one
/// connected tree over all joints, rooted at root_joint.
struct SkeletonTopology {
  int num_joints = 0;
  std::vector<std::pair<int, int>> edges;
  int root_joint = 0;
  std::vector<std::string> joint_names;

  /// Throws Error when the tree invariants do not hold.
  void check() const;
};

/// The 13-joint 2D convention used by the synthetic benchmark.
const SkeletonTopology& default_topology();

/// A T-frame sequence of joint coordinates. Frame t, joint v, channel c is
/// stored at frames(t, v*channels + c); coordinates are in normalized units.
struct SkeletonSequence {
  Mat frames;  // T x (V*channels)
  int num_joints = 0;
  int channels = 2;
  double fps = 30.0;
  std::string topology_id = "lac13";
  std::map<std::string, std::string> meta;

  int length() const { return static_cast<int>(frames.rows()); }
  double at(int t, int v, int c) const { return frames(t, v * channels + c); }
  double& at(int t, int v, int c) { return frames(t, v * channels + c); }
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Checks every SkeletonSequence invariant against the topology. Violations
/// come back as data; nothing throws.
ValidationReport validate_sequence(const SkeletonSequence& seq,
                                   const SkeletonTopology& topo);

/// Root joint of frame 0 moved to the origin, global scale divided by the
/// lower-median bone length of frame 0. Using the lower median (a single
/// bone) makes the result exactly idempotent in floating point.
SkeletonSequence normalize_sequence(const SkeletonSequence& seq,
                                    const SkeletonTopology& topo);

/// Sequence JSON file format:
///   {"version":1, "fps":..., "topology":{...}, "frames":[[[x,y],..V],..T],
///    "meta":{...}}
void write_sequence(const SkeletonSequence& seq, const SkeletonTopology& topo,
                    const std::string& path);
SkeletonSequence read_sequence(const std::string& path,
                               SkeletonTopology* topo_out = nullptr);

enum class ManifestKind { kTrimmed, kUntrimmed, kRetargetPairs };

std::string to_string(ManifestKind kind);
ManifestKind manifest_kind_from_string(const std::string& s);

struct ManifestEntry {
  std::string sequence_path;
  std::string character_id;
  std::vector<std::string> motion_ids;
  std::string viewpoint_id;
  std::string split;  // "train" | "test"
  std::string labels_path;  // untrimmed only; empty otherwise
};

struct DatasetManifest {
  ManifestKind kind = ManifestKind::kTrimmed;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split_entries(const std::string& split) const;
  void check() const;  // unique paths, known split values
};

/// JSON-lines manifest: first line {"kind":...}, then one entry per line.
void write_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

/// Dense per-frame multi-hot labels for untrimmed sequences.
struct UntrimmedAnnotation {
  Mat labels;  // T x num_classes, entries in {0, 1}
  std::vector<std::string> class_names;

  void check() const;  // at least one active frame, binary entries
};

void write_annotation(const UntrimmedAnnotation& ann, const std::string& path);
UntrimmedAnnotation read_annotation(const std::string& path);

}  // namespace lac
