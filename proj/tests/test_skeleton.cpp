#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lac/skeleton.hpp"
#include "test_util.hpp"

using namespace lac;

namespace {

SkeletonSequence random_sequence(uint64_t seed, int T = 16) {
  const auto& topo = default_topology();
  Rng rng(seed);
  SkeletonSequence seq;
  seq.num_joints = topo.num_joints;
  seq.channels = 2;
  seq.fps = 30.0;
  seq.frames.resize(T, topo.num_joints * 2);
  for (int t = 0; t < T; ++t)
    for (int v = 0; v < topo.num_joints; ++v)
      for (int c = 0; c < 2; ++c) seq.at(t, v, c) = rng.uniform(-2.0, 2.0);
  return seq;
}

std::string temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "lac_skeleton_test";
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("default topology is a valid 13-joint tree") {
  const auto& topo = default_topology();
  CHECK(topo.num_joints == 13);
  CHECK(topo.edges.size() == 12);
  CHECK_NOTHROW(topo.check());
}

TEST_CASE("validate accepts a well-formed sequence") {
  const auto seq = random_sequence(1);
  CHECK(validate_sequence(seq, default_topology()).ok());
}

TEST_CASE("validate reports a non-finite coordinate with its position") {
  auto seq = random_sequence(2);
  seq.at(3, 5, 1) = std::numeric_limits<double>::quiet_NaN();
  const auto report = validate_sequence(seq, default_topology());
  REQUIRE_FALSE(report.ok());
  CHECK(report.violations.front() == "non-finite value at (3,5,1)");
}

TEST_CASE("validate reports joint-count mismatch") {
  auto seq = random_sequence(3);
  seq.num_joints = 12;
  seq.frames.conservativeResize(seq.frames.rows(), 24);
  const auto report = validate_sequence(seq, default_topology());
  REQUIRE_FALSE(report.ok());
  CHECK(report.violations.front().find("joint-count mismatch") != std::string::npos);
}

TEST_CASE("validate never mutates its input") {
  auto seq = random_sequence(4);
  const Mat before = seq.frames;
  (void)validate_sequence(seq, default_topology());
  CHECK(seq.frames == before);
}

TEST_CASE("normalize is exactly idempotent") {
  const auto& topo = default_topology();
  const auto seq = random_sequence(5);
  const auto once = normalize_sequence(seq, topo);
  const auto twice = normalize_sequence(once, topo);
  CHECK(once.frames == twice.frames);  // bitwise
}

TEST_CASE("normalize is invariant to uniform translation") {
  const auto& topo = default_topology();
  const auto seq = random_sequence(6);
  auto shifted = seq;
  for (int t = 0; t < seq.length(); ++t)
    for (int v = 0; v < seq.num_joints; ++v)
      for (int c = 0; c < 2; ++c) shifted.at(t, v, c) += 5.0;
  const auto a = normalize_sequence(seq, topo);
  const auto b = normalize_sequence(shifted, topo);
  CHECK(testutil::max_abs_diff(a.frames, b.frames) < 1e-12);
}

TEST_CASE("normalize rejects a degenerate skeleton") {
  const auto& topo = default_topology();
  SkeletonSequence seq;
  seq.num_joints = topo.num_joints;
  seq.channels = 2;
  seq.frames = Mat::Ones(4, topo.num_joints * 2);  // all joints coincident
  CHECK_THROWS_WITH_AS(normalize_sequence(seq, topo), "degenerate skeleton", Error);
}

TEST_CASE("sequence write/read round-trips bit-exactly") {
  const auto& topo = default_topology();
  auto seq = random_sequence(7);
  seq.meta["note"] = "round-trip";
  const std::string path = temp_dir() + "/roundtrip.json";
  write_sequence(seq, topo, path);
  SkeletonTopology topo_back;
  const auto back = read_sequence(path, &topo_back);
  REQUIRE(back.frames.rows() == seq.frames.rows());
  REQUIRE(back.frames.cols() == seq.frames.cols());
  CHECK(back.frames == seq.frames);  // bit-exact doubles
  CHECK(back.fps == seq.fps);
  CHECK(back.topology_id == seq.topology_id);
  CHECK(back.meta.at("note") == "round-trip");
  CHECK(topo_back.num_joints == topo.num_joints);
}

TEST_CASE("ragged frames are a parse error naming frames") {
  const std::string path = temp_dir() + "/ragged.json";
  {
    std::ofstream out(path);
    out << R"({"version":1,"fps":30.0,)"
        << R"("topology":{"num_joints":2,"edges":[[0,1]],"root_joint":0},)"
        << R"("frames":[[[0.0,0.0],[1.0,0.0]],[[0.0,0.0]]],"meta":{}})";
  }
  CHECK_THROWS_WITH_AS(read_sequence(path),
                       "read_sequence: parse error: frames (ragged joint rows)",
                       Error);
}

TEST_CASE("empty file is a parse error") {
  const std::string path = temp_dir() + "/empty.json";
  std::ofstream(path).close();
  CHECK_THROWS_AS(read_sequence(path), Error);
}

TEST_CASE("missing file is an I/O error") {
  CHECK_THROWS_AS(read_sequence(temp_dir() + "/does_not_exist.json"), Error);
}

TEST_CASE("manifest round-trips and rejects duplicate paths") {
  DatasetManifest m;
  m.kind = ManifestKind::kRetargetPairs;
  m.entries.push_back({"a.json", "c0", {"m0", "squat"}, "v0", "train", ""});
  m.entries.push_back({"b.json", "c1", {"m1", "kick"}, "v1", "test", "b_labels.json"});
  const std::string path = temp_dir() + "/manifest.jsonl";
  write_manifest(m, path);
  const auto back = read_manifest(path);
  CHECK(back.kind == ManifestKind::kRetargetPairs);
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[1].labels_path == "b_labels.json");
  CHECK(back.entries[0].motion_ids == std::vector<std::string>{"m0", "squat"});

  m.entries.push_back({"a.json", "c2", {"m2"}, "v0", "train", ""});
  CHECK_THROWS_AS(write_manifest(m, path), Error);
}

TEST_CASE("annotation round-trip and invariants") {
  UntrimmedAnnotation ann;
  ann.class_names = {"squat", "kick"};
  ann.labels = Mat::Zero(4, 2);
  ann.labels(1, 0) = 1.0;
  ann.labels(1, 1) = 1.0;  // co-occurrence allowed
  const std::string path = temp_dir() + "/ann.json";
  write_annotation(ann, path);
  const auto back = read_annotation(path);
  CHECK(back.labels == ann.labels);
  CHECK(back.class_names == ann.class_names);

  UntrimmedAnnotation empty;
  empty.class_names = {"a"};
  empty.labels = Mat::Zero(4, 1);
  CHECK_THROWS_AS(empty.check(), Error);
}
