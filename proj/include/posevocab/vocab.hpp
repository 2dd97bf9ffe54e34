#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posevocab/feature_lines.hpp"
#include "posevocab/kernels.hpp"
#include "posevocab/rotation.hpp"

namespace posevocab {

/// Rotations of J joints over T frames, stored frame-major.
struct PoseSequence {
  std::vector<std::string> joint_names;
  std::size_t frames = 0;
  std::vector<AxisAngle> rotations;
  std::vector<double> timestamps;  // empty, or one per frame

  std::size_t joints() const { return joint_names.size(); }
  const AxisAngle& at(std::size_t frame, std::size_t joint) const {
    return rotations[frame * joints() + joint];
  }
  AxisAngle& at(std::size_t frame, std::size_t joint) {
    return rotations[frame * joints() + joint];
  }
  std::span<const AxisAngle> frame(std::size_t t) const {
    return std::span<const AxisAngle>(rotations).subspan(t * joints(), joints());
  }

  void validate() const;
};

/// "joint_00", "joint_01", ...
std::vector<std::string> default_joint_names(std::size_t count);

/// The 24 SMPL joint names in SMPL order.
const std::vector<std::string>& smpl_joint_names();

/// Joints dropped by default: the root and both hands. What remains of the
/// SMPL skeleton is the 21 body joints.
const std::vector<std::string>& default_excluded_joints();

/// Canonical-space box mapping query points into [0, 1]^3.
struct BBox {
  Vec3 lo{-1.0, -1.0, -1.0};
  Vec3 hi{1.0, 1.0, 1.0};

  void validate() const;
  /// Unclamped normalized coordinates; sampling clamps.
  Vec3 normalize(const Vec3& p) const;

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct InitPolicy {
  enum class Kind { kUniform, kZero };
  Kind kind = Kind::kUniform;
  double amplitude = 1e-2;
  std::uint64_t seed = 0;
};

struct BuildOptions {
  // Joint names removed from the sequence before building.
  std::vector<std::string> exclude_joints = default_excluded_joints();
  // Per-joint key count replacing the per-scale M for that joint.
  std::map<std::string, int> key_count_override;
  kernels::Execution execution = kernels::Execution::kParallel;
};

struct JointVocab {
  // FPS order; scale s uses the first embeddings[s].size() keys.
  std::vector<UnitQuat> keys;
  std::vector<std::vector<FeatureLines>> embeddings;  // [scale][key]

  std::size_t key_count(std::size_t scale) const { return embeddings[scale].size(); }

  friend bool operator==(const JointVocab&, const JointVocab&) = default;
};

struct BuildMetadata {
  std::uint64_t source_hash = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const BuildMetadata&, const BuildMetadata&) = default;
};

struct PoseVocab {
  std::vector<std::string> joint_names;
  std::vector<ScaleConfig> scales;
  BBox bbox;
  BuildMetadata meta;
  std::vector<JointVocab> joints;

  std::size_t joint_count() const { return joints.size(); }
  std::size_t scale_count() const { return scales.size(); }

  void validate() const;

  friend bool operator==(const PoseVocab&, const PoseVocab&) = default;
};

inline constexpr double kDedupTolerance = 1e-9;

/// Indices (into `rotations`) picked by farthest-point sampling under
/// rotation_distance, seeded with rotations[0].
std::vector<std::size_t> farthest_rotation_indices(
    std::span<const UnitQuat> rotations, std::size_t count,
    kernels::Execution exec = kernels::Execution::kSerial);

std::vector<UnitQuat> sample_key_rotations(std::span<const UnitQuat> rotations, std::size_t count,
                                           kernels::Execution exec = kernels::Execution::kSerial);

/// Max over points of the distance to the nearest key.
double coverage_radius(std::span<const UnitQuat> points, std::span<const UnitQuat> keys);

PoseVocab build_vocab(const PoseSequence& seq, const std::vector<ScaleConfig>& scales,
                      const BBox& bbox, const InitPolicy& init,
                      const BuildOptions& options = BuildOptions{});

/// Training rotations of one joint, canonicalized, in frame order.
std::vector<UnitQuat> joint_rotations(const PoseSequence& seq, std::size_t joint);

std::uint64_t sequence_hash(const PoseSequence& seq);

struct ScaleStats {
  std::size_t key_count = 0;
  std::optional<double> coverage_radius;
  std::size_t parameter_count = 0;
  std::size_t memory_bytes = 0;  // f64 embeddings in memory
  std::size_t file_bytes = 0;    // f32 embeddings on disk
};

struct JointStats {
  std::string name;
  std::vector<ScaleStats> scales;
};

struct VocabStats {
  std::vector<JointStats> joints;
  std::size_t total_parameters = 0;
  std::size_t total_memory_bytes = 0;
};

/// Coverage radii need the training sequence; joints are matched by name.
VocabStats vocab_stats(const PoseVocab& v, const PoseSequence* training = nullptr);

}  // namespace posevocab
