#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "lac/skeleton.hpp"

namespace lac {

/// Per-edge bone lengths, aligned with default_topology().edges.
struct CharacterParams {
  std::vector<double> bone_lengths;
  std::string id;
};

/// 2D similarity transform applied after forward kinematics.
struct Viewpoint {
  double rotation_angle = 0.0;  // radians in [-pi, pi)
  double scale = 1.0;           // in [0.5, 2.0]
  std::array<double, 2> translation{0.0, 0.0};
  std::string id;
};

enum class MotionKind {
  kRaiseArmLeft,
  kRaiseArmRight,
  kSquat,
  kBendOver,
  kWave,
  kWalkCycle,
  kKick,
  kIdle,
};
inline constexpr int kNumMotionKinds = 8;

const std::vector<std::string>& motion_kind_names();
std::string to_string(MotionKind kind);
MotionKind motion_kind_from_string(const std::string& s);

/// A parametric joint-angle trajectory on a subset of edges. The program is
/// active on frames [start_frame, start_frame + duration_frames).
struct MotionProgram {
  MotionKind kind = MotionKind::kIdle;
  double amplitude = 1.0;  // in [0, 1]
  double phase = 0.0;
  int duration_frames = 64;
  int start_frame = 0;
  std::vector<int> joint_support;  // joints this program moves
};

MotionProgram make_program(MotionKind kind, double amplitude, double phase,
                           int duration_frames, int start_frame = 0);

/// Deterministic in seed; all bone lengths within [0.5, 2.0].
CharacterParams make_character(uint64_t seed);
Viewpoint make_viewpoint(uint64_t seed);

/// Forward-kinematics rendering of one program onto a character, then the
/// viewpoint similarity transform. The joint-angle trajectory depends only on
/// the program, never on bone lengths, which is what makes cross-character
/// targets exact.
SkeletonSequence realize(const MotionProgram& program,
                         const CharacterParams& character,
                         const Viewpoint& view, int T);

/// Programs with disjoint joint_support compose additively in angle space;
/// programs sharing an edge blend amplitude-weighted. Labels mark each
/// program's kind active over its window.
std::pair<SkeletonSequence, UntrimmedAnnotation> realize_composite(
    const std::vector<MotionProgram>& programs, const CharacterParams& character,
    const Viewpoint& view, int T);

/// World angle of a topology edge recovered from coordinates (test oracle).
double edge_world_angle(const SkeletonSequence& seq, int t, int edge_index);

struct RetargetDataConfig {
  int num_characters = 8;
  int num_programs = 12;
  int num_viewpoints = 4;
  int T = 64;
  uint64_t seed = 1;
  std::string out_dir;
};

struct TrimmedDataConfig {
  int num_characters = 12;
  int num_programs = 16;
  int num_viewpoints = 4;
  int T = 64;
  uint64_t seed = 2;
  std::string out_dir;
};

struct UntrimmedDataConfig {
  int num_videos = 200;
  int t_min = 256;
  int t_max = 512;
  int max_cooccurrence = 3;
  std::vector<MotionKind> classes;  // empty = all kinds
  int num_train_characters = 10;
  int num_test_characters = 4;
  int num_viewpoints = 8;
  double test_fraction = 0.25;
  uint64_t seed = 3;
  std::string out_dir;
};

/// Full (program x character x viewpoint) grid; the manifest is the linkage:
/// the cross target of (m, c, v) under static source (c', v') is the grid
/// entry (m, c', v'). Split is by character.
DatasetManifest build_retarget_dataset(const RetargetDataConfig& config);

/// Same grid shape, emitted as kind=trimmed for contrastive pretraining and
/// linear probing. motion_ids carry {instance id, kind name}.
DatasetManifest build_trimmed_dataset(const TrimmedDataConfig& config);

/// Long multi-label videos from overlapping programs; dense per-frame labels
/// stored next to each sequence. Characters are disjoint across splits.
DatasetManifest build_untrimmed_dataset(const UntrimmedDataConfig& config);

/// The program instance used for grid datasets (kind cycles over program id,
/// amplitude/phase jittered deterministically).
MotionProgram grid_program(int program_id, uint64_t dataset_seed, int T);

/// Finds the manifest entry with the given ids; null when absent.
const ManifestEntry* find_grid_entry(const DatasetManifest& manifest,
                                     const std::string& motion_id,
                                     const std::string& character_id,
                                     const std::string& viewpoint_id);

}  // namespace lac
