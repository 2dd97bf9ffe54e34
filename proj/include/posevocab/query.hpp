#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "posevocab/kernels.hpp"
#include "posevocab/vocab.hpp"

namespace posevocab {

/// Query pose vector: one axis-angle rotation per vocabulary joint.
struct Pose {
  std::vector<AxisAngle> rotations;
};

/// Per-point, per-joint gating weights in [0, 1].
class InfluenceWeights {
 public:
  using Fn = std::function<double(const Vec3& point, std::size_t joint)>;

  static InfluenceWeights uniform(std::size_t joints);
  static InfluenceWeights per_joint(std::vector<double> weights);
  /// exp(-|p - c_j|^2 / (2 sigma^2)) around one center per joint.
  static InfluenceWeights radial(std::vector<Vec3> centers, double sigma);
  static InfluenceWeights from_function(std::size_t joints, Fn fn);

  std::size_t joints() const { return joints_; }

  /// Throws kInvalidInput for weights outside [0, 1].
  void evaluate(const Vec3& point, std::span<double> out) const;
  std::vector<double> evaluate(const Vec3& point) const;

 private:
  InfluenceWeights(std::size_t joints, Fn fn) : joints_(joints), fn_(std::move(fn)) {}

  std::size_t joints_ = 0;
  Fn fn_;
};

/// Block layout of a pose feature: joint-major, then scale, then axis, then
/// channel. Depends only on the vocabulary configuration.
class FeatureLayout {
 public:
  FeatureLayout() = default;
  FeatureLayout(std::size_t joints, std::vector<std::size_t> scale_channels);
  static FeatureLayout of(const PoseVocab& v);

  std::size_t joints() const { return joints_; }
  std::size_t scales() const { return channels_.size(); }
  std::size_t channels(std::size_t scale) const { return channels_[scale]; }
  std::size_t joint_block_size() const { return joint_block_; }
  std::size_t size() const { return joints_ * joint_block_; }

  std::size_t joint_offset(std::size_t joint) const { return joint * joint_block_; }
  std::size_t offset(std::size_t joint, std::size_t scale, Axis axis = Axis::kX) const;

  friend bool operator==(const FeatureLayout&, const FeatureLayout&) = default;

 private:
  std::size_t joints_ = 0;
  std::vector<std::size_t> channels_;
  std::vector<std::size_t> scale_offsets_;
  std::size_t joint_block_ = 0;
};

struct PoseFeature {
  FeatureLayout layout;
  std::vector<double> values;
};

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// The K nearest keys, ascending by distance, ties to the lower index. K is
/// capped at the key count.
std::vector<Neighbor> knn_keys(std::span<const Quat4> keys, const Quat4& query, std::size_t k);
std::vector<Neighbor> knn_keys(std::span<const UnitQuat> keys, const UnitQuat& query, std::size_t k);
std::vector<Neighbor> knn_keys(const JointVocab& jv, const AxisAngle& rotation, std::size_t k);

struct QueryOptions {
  // Replaces every scale's K when set.
  std::optional<std::size_t> knn;
};

/// KNN over the scale's keys and blend of their embeddings with weights
/// 1 - distance.
FeatureLines blend_embeddings(const JointVocab& jv, const UnitQuat& rotation, std::size_t scale,
                              std::size_t k, bool* degenerate = nullptr);
FeatureLines blend_embeddings(const PoseVocab& v, std::size_t joint, const AxisAngle& rotation,
                              std::size_t scale, const QueryOptions& options = {});

PoseFeature query_pose_feature(const PoseVocab& v, const Pose& pose, const Vec3& point,
                               const InfluenceWeights& omega, const QueryOptions& options = {});

/// Per frame, blended embeddings are averaged over a centered window of
/// `window` frames (truncated at the ends) before sampling. `points` holds
/// either one point for every frame or one point per frame.
std::vector<PoseFeature> query_sequence_smoothed(const PoseVocab& v, std::span<const Pose> poses,
                                                 std::span<const Vec3> points,
                                                 const InfluenceWeights& omega,
                                                 std::size_t window = 5,
                                                 const QueryOptions& options = {});

std::vector<PoseFeature> query_sequence_smoothed(const PoseVocab& v, std::span<const Pose> poses,
                                                 const Vec3& point, const InfluenceWeights& omega,
                                                 std::size_t window = 5,
                                                 const QueryOptions& options = {});

struct QueryRecord {
  Pose pose;
  Vec3 point{0.0, 0.0, 0.0};
  std::optional<std::vector<double>> omega;  // per-joint override
};

/// Independent queries; the parallel path keeps output order by index.
std::vector<PoseFeature> query_batch(const PoseVocab& v, std::span<const QueryRecord> records,
                                     const InfluenceWeights& omega, const QueryOptions& options = {},
                                     kernels::Execution exec = kernels::Execution::kParallel);

}  // namespace posevocab
