#include "lac/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

namespace lac {

namespace {

constexpr double kPi = std::numbers::pi;

// Edge indices into default_topology().edges.
enum Edge {
  kSpine = 0,   // (8,1)
  kHead = 1,    // (1,0)
  kLClav = 2,   // (1,2)
  kRClav = 3,   // (1,3)
  kLUpper = 4,  // (2,4)
  kRUpper = 5,  // (3,5)
  kLFore = 6,   // (4,6)
  kRFore = 7,   // (5,7)
  kLHip = 8,    // (8,9)
  kRHip = 9,    // (8,10)
  kLThigh = 10, // (9,11)
  kRThigh = 11, // (10,12)
};
constexpr int kNumEdges = 12;

// Rest direction of each edge in world coordinates (y up, x right).
constexpr std::array<double, kNumEdges> kRestWorldAngle = {
    kPi / 2,  kPi / 2,  kPi,      0.0,      -kPi / 2, -kPi / 2,
    -kPi / 2, -kPi / 2, kPi,      0.0,      -kPi / 2, -kPi / 2};

constexpr std::array<double, kNumEdges> kBaseBoneLength = {
    1.2, 0.6, 0.65, 0.65, 0.85, 0.85, 0.75, 0.75, 0.6, 0.6, 1.0, 1.0};

double smoothstep(double x) { return x * x * (3.0 - 2.0 * x); }

// One-shot bump over the window.
double env_pulse(double u) {
  if (u < 0.0 || u > 1.0) return 0.0;
  const double s = std::sin(kPi * u);
  return s * s;
}

// Ramp up, hold, ramp down.
double env_hold(double u) {
  if (u < 0.0 || u > 1.0) return 0.0;
  return smoothstep(std::min(1.0, u / 0.25)) *
         smoothstep(std::min(1.0, (1.0 - u) / 0.25));
}

double periodic(double u, double cycles, double phase) {
  return std::sin(2.0 * kPi * cycles * u + phase);
}

// Angle offsets (radians) each kind applies per edge at normalized time u.
std::array<double, kNumEdges> kind_deltas(MotionKind kind, double a,
                                          double phase, double u) {
  std::array<double, kNumEdges> d{};
  switch (kind) {
    case MotionKind::kRaiseArmLeft:
      d[kLUpper] = -2.1 * a * env_pulse(u);
      d[kLFore] = -0.35 * a * env_pulse(u);
      break;
    case MotionKind::kRaiseArmRight:
      d[kRUpper] = 2.1 * a * env_pulse(u);
      d[kRFore] = 0.35 * a * env_pulse(u);
      break;
    case MotionKind::kSquat:
      d[kLHip] = 0.4 * a * env_pulse(u);
      d[kRHip] = -0.4 * a * env_pulse(u);
      d[kLThigh] = 0.85 * a * env_pulse(u);
      d[kRThigh] = -0.85 * a * env_pulse(u);
      break;
    case MotionKind::kBendOver:
      d[kSpine] = -1.15 * a * env_pulse(u);
      break;
    case MotionKind::kWave:
      d[kLUpper] = -1.9 * a * env_hold(u);
      d[kLFore] = a * env_hold(u) * (-0.9 + 0.5 * std::sin(2.0 * kPi * 3.0 * u + phase));
      break;
    case MotionKind::kWalkCycle:
      d[kLHip] = 0.45 * a * periodic(u, 2.0, phase);
      d[kRHip] = -0.45 * a * periodic(u, 2.0, phase);
      d[kLThigh] = 0.35 * a * periodic(u, 2.0, phase + 1.1);
      d[kRThigh] = -0.35 * a * periodic(u, 2.0, phase + 1.1);
      d[kLUpper] = -0.3 * a * periodic(u, 2.0, phase);
      d[kRUpper] = 0.3 * a * periodic(u, 2.0, phase);
      break;
    case MotionKind::kKick:
      d[kRHip] = 0.35 * a * env_pulse(u);
      d[kRThigh] = 1.25 * a * env_pulse(u);
      break;
    case MotionKind::kIdle:
      break;
  }
  return d;
}

// Edges a kind animates (nonzero rows of the delta table).
std::vector<int> kind_edges(MotionKind kind) {
  switch (kind) {
    case MotionKind::kRaiseArmLeft: return {kLUpper, kLFore};
    case MotionKind::kRaiseArmRight: return {kRUpper, kRFore};
    case MotionKind::kSquat: return {kLHip, kRHip, kLThigh, kRThigh};
    case MotionKind::kBendOver: return {kSpine};
    case MotionKind::kWave: return {kLUpper, kLFore};
    case MotionKind::kWalkCycle:
      return {kLHip, kRHip, kLThigh, kRThigh, kLUpper, kRUpper};
    case MotionKind::kKick: return {kRHip, kRThigh};
    case MotionKind::kIdle: return {};
  }
  return {};
}

struct TopologyIndex {
  std::vector<int> parent_edge;           // per edge, index of parent edge or -1
  std::vector<std::vector<int>> children; // per joint, child edge indices
  std::vector<int> edge_order;            // edges in root-to-leaf order
};

const TopologyIndex& topology_index() {
  static const TopologyIndex idx = [] {
    const auto& topo = default_topology();
    TopologyIndex out;
    const int E = static_cast<int>(topo.edges.size());
    out.children.resize(topo.num_joints);
    std::vector<int> edge_of_child(topo.num_joints, -1);
    for (int e = 0; e < E; ++e) {
      out.children[topo.edges[e].first].push_back(e);
      edge_of_child[topo.edges[e].second] = e;
    }
    out.parent_edge.resize(E);
    for (int e = 0; e < E; ++e)
      out.parent_edge[e] = edge_of_child[topo.edges[e].first];
    // Breadth-first edge order from the root.
    std::vector<int> stack{topo.root_joint};
    while (!stack.empty()) {
      const int j = stack.front();
      stack.erase(stack.begin());
      for (int e : out.children[j]) {
        out.edge_order.push_back(e);
        stack.push_back(topo.edges[e].second);
      }
    }
    return out;
  }();
  return idx;
}

std::vector<int> support_from_edges(const std::vector<int>& edges) {
  const auto& topo = default_topology();
  const auto& idx = topology_index();
  std::vector<bool> moved(topo.num_joints, false);
  std::function<void(int)> mark = [&](int joint) {
    if (moved[joint]) return;
    moved[joint] = true;
    for (int e : idx.children[joint]) mark(topo.edges[e].second);
  };
  for (int e : edges) mark(topo.edges[e].second);
  std::vector<int> out;
  for (int v = 0; v < topo.num_joints; ++v)
    if (moved[v]) out.push_back(v);
  return out;
}

// Relative rest angle of an edge in its parent edge's frame.
double rest_relative_angle(int edge) {
  const int pe = topology_index().parent_edge[edge];
  return pe < 0 ? kRestWorldAngle[edge]
                : kRestWorldAngle[edge] - kRestWorldAngle[pe];
}

bool program_active(const MotionProgram& p, int t) {
  return t >= p.start_frame && t < p.start_frame + p.duration_frames;
}

double program_u(const MotionProgram& p, int t) {
  return (t - p.start_frame) / static_cast<double>(p.duration_frames);
}

// Blended per-edge angle offsets at frame t. A single contributor passes
// through unchanged; several contributors on one edge mix with amplitude
// weights.
std::array<double, kNumEdges> blended_deltas(
    const std::vector<MotionProgram>& programs, int t) {
  std::array<double, kNumEdges> sum{};
  std::array<double, kNumEdges> weight{};
  std::array<double, kNumEdges> single{};
  std::array<int, kNumEdges> count{};
  for (const auto& p : programs) {
    if (!program_active(p, t)) continue;
    const auto d = kind_deltas(p.kind, p.amplitude, p.phase, program_u(p, t));
    for (int e : kind_edges(p.kind)) {
      sum[e] += p.amplitude * d[e];
      weight[e] += p.amplitude;
      single[e] = d[e];
      ++count[e];
    }
  }
  std::array<double, kNumEdges> out{};
  for (int e = 0; e < kNumEdges; ++e) {
    if (count[e] == 1) {
      out[e] = single[e];
    } else if (count[e] > 1 && weight[e] > 0.0) {
      out[e] = sum[e] / weight[e];
    }
  }
  return out;
}

SkeletonSequence render(const std::vector<MotionProgram>& programs,
                        const CharacterParams& character, const Viewpoint& view,
                        int T) {
  const auto& topo = default_topology();
  const auto& idx = topology_index();
  if (static_cast<int>(character.bone_lengths.size()) != kNumEdges)
    throw Error("realize: character bone_lengths size mismatch");

  SkeletonSequence seq;
  seq.num_joints = topo.num_joints;
  seq.channels = 2;
  seq.fps = 30.0;
  seq.frames.resize(T, topo.num_joints * 2);

  const double cr = std::cos(view.rotation_angle);
  const double sr = std::sin(view.rotation_angle);

  std::vector<double> px(topo.num_joints), py(topo.num_joints);
  std::vector<double> world_angle(kNumEdges);
  for (int t = 0; t < T; ++t) {
    const auto deltas = blended_deltas(programs, t);
    px[topo.root_joint] = 0.0;
    py[topo.root_joint] = 0.0;
    for (int e : idx.edge_order) {
      const auto [parent, child] = topo.edges[e];
      const int pe = idx.parent_edge[e];
      const double base = pe < 0 ? 0.0 : world_angle[pe];
      world_angle[e] = base + rest_relative_angle(e) + deltas[e];
      px[child] = px[parent] + character.bone_lengths[e] * std::cos(world_angle[e]);
      py[child] = py[parent] + character.bone_lengths[e] * std::sin(world_angle[e]);
    }
    for (int v = 0; v < topo.num_joints; ++v) {
      const double x = px[v], y = py[v];
      seq.at(t, v, 0) = view.scale * (cr * x - sr * y) + view.translation[0];
      seq.at(t, v, 1) = view.scale * (sr * x + cr * y) + view.translation[1];
    }
  }
  return seq;
}

}  // namespace

const std::vector<std::string>& motion_kind_names() {
  static const std::vector<std::string> names = {
      "raise_arm_left", "raise_arm_right", "squat", "bend_over",
      "wave",           "walk_cycle",      "kick",  "idle"};
  return names;
}

std::string to_string(MotionKind kind) {
  return motion_kind_names().at(static_cast<size_t>(kind));
}

MotionKind motion_kind_from_string(const std::string& s) {
  const auto& names = motion_kind_names();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return static_cast<MotionKind>(i);
  throw Error("unknown motion kind: " + s);
}

MotionProgram make_program(MotionKind kind, double amplitude, double phase,
                           int duration_frames, int start_frame) {
  if (amplitude < 0.0 || amplitude > 1.0)
    throw Error("make_program: amplitude must be in [0, 1]");
  if (duration_frames < 1) throw Error("make_program: duration must be positive");
  MotionProgram p;
  p.kind = kind;
  p.amplitude = amplitude;
  p.phase = phase;
  p.duration_frames = duration_frames;
  p.start_frame = start_frame;
  p.joint_support = support_from_edges(kind_edges(kind));
  return p;
}

CharacterParams make_character(uint64_t seed) {
  Rng rng(mix_seed(seed, 0xC0DE));
  CharacterParams c;
  c.id = "c" + std::to_string(seed);
  c.bone_lengths.resize(kNumEdges);
  for (int e = 0; e < kNumEdges; ++e) {
    const double jitter = rng.uniform(0.9, 1.35);
    c.bone_lengths[e] = std::clamp(kBaseBoneLength[e] * jitter, 0.5, 2.0);
  }
  return c;
}

Viewpoint make_viewpoint(uint64_t seed) {
  Rng rng(mix_seed(seed, 0x71E0));
  Viewpoint v;
  v.id = "v" + std::to_string(seed);
  v.rotation_angle = rng.uniform(-kPi / 4, kPi / 4);
  v.scale = rng.uniform(0.6, 1.8);
  v.translation = {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)};
  return v;
}

SkeletonSequence realize(const MotionProgram& program,
                         const CharacterParams& character,
                         const Viewpoint& view, int T) {
  if (T < 8) throw Error("sequence too short (need at least 8 frames)");
  return render({program}, character, view, T);
}

std::pair<SkeletonSequence, UntrimmedAnnotation> realize_composite(
    const std::vector<MotionProgram>& programs,
    const CharacterParams& character, const Viewpoint& view, int T) {
  if (programs.empty()) throw Error("realize_composite: need at least one program");
  if (T < 8) throw Error("sequence too short (need at least 8 frames)");
  SkeletonSequence seq = render(programs, character, view, T);

  UntrimmedAnnotation ann;
  ann.class_names = motion_kind_names();
  ann.labels = Mat::Zero(T, kNumMotionKinds);
  for (const auto& p : programs)
    for (int t = std::max(0, p.start_frame);
         t < std::min(T, p.start_frame + p.duration_frames); ++t)
      ann.labels(t, static_cast<int>(p.kind)) = 1.0;
  return {std::move(seq), std::move(ann)};
}

double edge_world_angle(const SkeletonSequence& seq, int t, int edge_index) {
  const auto& topo = default_topology();
  const auto [p, c] = topo.edges.at(edge_index);
  return std::atan2(seq.at(t, c, 1) - seq.at(t, p, 1),
                    seq.at(t, c, 0) - seq.at(t, p, 0));
}

MotionProgram grid_program(int program_id, uint64_t dataset_seed, int T) {
  Rng rng(mix_seed(dataset_seed, 0x9001 + static_cast<uint64_t>(program_id)));
  const MotionKind kind = static_cast<MotionKind>(program_id % kNumMotionKinds);
  const double amplitude = rng.uniform(0.6, 1.0);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  return make_program(kind, amplitude, phase, T, 0);
}

namespace {

std::string two_digit(int i) {
  return (i < 10 ? "0" : "") + std::to_string(i);
}

struct GridSpec {
  int num_characters, num_programs, num_viewpoints, T;
  uint64_t seed;
  std::string out_dir;
  ManifestKind kind;
};

DatasetManifest build_grid(const GridSpec& g) {
  if (g.out_dir.empty()) throw Error("dataset config: out_dir required");
  std::filesystem::create_directories(g.out_dir);
  const int test_characters = g.num_characters / 4;
  const int total = g.num_characters * g.num_programs * g.num_viewpoints;

  DatasetManifest manifest;
  manifest.kind = g.kind;
  manifest.entries.resize(total);

  parallel_for(total, [&](int i) {
    const int v = i % g.num_viewpoints;
    const int c = (i / g.num_viewpoints) % g.num_characters;
    const int p = i / (g.num_viewpoints * g.num_characters);
    const MotionProgram program = grid_program(p, g.seed, g.T);
    const CharacterParams character = make_character(mix_seed(g.seed, 0xCC00 + c));
    const Viewpoint view = make_viewpoint(mix_seed(g.seed, 0x7700 + v));
    const std::string name =
        "seq_m" + two_digit(p) + "_c" + two_digit(c) + "_v" + two_digit(v) + ".json";
    const std::string path = g.out_dir + "/" + name;
    SkeletonSequence seq = realize(program, character, view, g.T);
    seq.meta["motion_kind"] = to_string(program.kind);
    write_sequence(seq, default_topology(), path);

    ManifestEntry e;
    e.sequence_path = name;
    e.character_id = "c" + two_digit(c);
    e.motion_ids = {"m" + two_digit(p), to_string(program.kind)};
    e.viewpoint_id = "v" + two_digit(v);
    e.split = c >= g.num_characters - test_characters ? "test" : "train";
    manifest.entries[i] = std::move(e);
  });
  write_manifest(manifest, g.out_dir + "/manifest.jsonl");
  return manifest;
}

}  // namespace

DatasetManifest build_retarget_dataset(const RetargetDataConfig& config) {
  if (config.num_characters < 2)
    throw Error("build_retarget_dataset: need at least 2 characters for cross targets");
  return build_grid({config.num_characters, config.num_programs,
                     config.num_viewpoints, config.T, config.seed,
                     config.out_dir, ManifestKind::kRetargetPairs});
}

DatasetManifest build_trimmed_dataset(const TrimmedDataConfig& config) {
  return build_grid({config.num_characters, config.num_programs,
                     config.num_viewpoints, config.T, config.seed,
                     config.out_dir, ManifestKind::kTrimmed});
}

DatasetManifest build_untrimmed_dataset(const UntrimmedDataConfig& config) {
  if (config.out_dir.empty()) throw Error("dataset config: out_dir required");
  if (config.num_videos < 1) throw Error("build_untrimmed_dataset: num_videos");
  if (config.t_min < 8 || config.t_max < config.t_min)
    throw Error("build_untrimmed_dataset: bad T range");
  if (config.max_cooccurrence < 1)
    throw Error("build_untrimmed_dataset: max_cooccurrence must be >= 1");
  std::filesystem::create_directories(config.out_dir);

  std::vector<MotionKind> classes = config.classes;
  if (classes.empty())
    for (int k = 0; k < kNumMotionKinds; ++k)
      classes.push_back(static_cast<MotionKind>(k));

  const int num_train =
      config.num_videos -
      static_cast<int>(std::lround(config.num_videos * config.test_fraction));

  DatasetManifest manifest;
  manifest.kind = ManifestKind::kUntrimmed;
  manifest.entries.resize(config.num_videos);

  parallel_for(config.num_videos, [&](int i) {
    Rng rng(mix_seed(config.seed, 0xDA7A + static_cast<uint64_t>(i)));
    const bool is_train = i < num_train;
    const int char_pool = is_train ? config.num_train_characters
                                   : config.num_test_characters;
    const int char_idx = static_cast<int>(rng.index(std::max(1, char_pool)));
    // Test characters live in a disjoint id range (cross-subject protocol).
    const int char_id = is_train ? char_idx : 1000 + char_idx;
    const CharacterParams character =
        make_character(mix_seed(config.seed, 0xCC00 + char_id));
    const Viewpoint view = make_viewpoint(
        mix_seed(config.seed, 0x7700 + rng.index(std::max(1, config.num_viewpoints))));

    const int T = config.t_min + static_cast<int>(rng.index(config.t_max - config.t_min + 1));
    const int target_programs = 2 + static_cast<int>(rng.index(2));  // 2 or 3

    std::vector<MotionProgram> programs;
    std::vector<int> active(T, 0);
    for (int p = 0; p < target_programs; ++p) {
      const MotionKind kind = classes[rng.index(static_cast<int64_t>(classes.size()))];
      const double amplitude = rng.uniform(0.55, 1.0);
      const double phase = rng.uniform(0.0, 2.0 * kPi);
      const int duration = 48 + static_cast<int>(rng.index(std::min(113, T - 47)));
      // Keep drawing windows until the co-occurrence cap holds.
      for (int attempt = 0; attempt < 40; ++attempt) {
        const int start = static_cast<int>(rng.index(T - duration + 1));
        bool fits = true;
        for (int t = start; t < start + duration && fits; ++t)
          fits = active[t] < config.max_cooccurrence;
        if (!fits) continue;
        for (int t = start; t < start + duration; ++t) ++active[t];
        programs.push_back(make_program(kind, amplitude, phase, duration, start));
        break;
      }
    }
    if (programs.empty())
      programs.push_back(make_program(classes[0], 0.8, 0.0, std::min(96, T), 0));

    auto [seq, ann] = realize_composite(programs, character, view, T);
    // Restrict label columns to the configured class set.
    Mat labels = Mat::Zero(T, static_cast<int>(classes.size()));
    std::vector<std::string> names;
    for (size_t k = 0; k < classes.size(); ++k) {
      names.push_back(to_string(classes[k]));
      labels.col(static_cast<int>(k)) =
          ann.labels.col(static_cast<int>(classes[k]));
    }
    UntrimmedAnnotation out_ann;
    out_ann.labels = std::move(labels);
    out_ann.class_names = std::move(names);

    const std::string base = "video_" + std::to_string(i);
    seq.meta["video_id"] = base;
    write_sequence(seq, default_topology(), config.out_dir + "/" + base + ".json");
    write_annotation(out_ann, config.out_dir + "/" + base + "_labels.json");

    ManifestEntry e;
    e.sequence_path = base + ".json";
    e.labels_path = base + "_labels.json";
    e.character_id = "c" + std::to_string(char_id);
    for (const auto& p : programs) {
      const std::string kn = to_string(p.kind);
      if (std::find(e.motion_ids.begin(), e.motion_ids.end(), kn) ==
          e.motion_ids.end())
        e.motion_ids.push_back(kn);
    }
    e.viewpoint_id = view.id;
    e.split = is_train ? "train" : "test";
    manifest.entries[i] = std::move(e);
  });

  write_manifest(manifest, config.out_dir + "/manifest.jsonl");
  return manifest;
}

const ManifestEntry* find_grid_entry(const DatasetManifest& manifest,
                                     const std::string& motion_id,
                                     const std::string& character_id,
                                     const std::string& viewpoint_id) {
  for (const auto& e : manifest.entries)
    if (!e.motion_ids.empty() && e.motion_ids.front() == motion_id &&
        e.character_id == character_id && e.viewpoint_id == viewpoint_id)
      return &e;
  return nullptr;
}

}  // namespace lac
