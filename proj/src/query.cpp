#include "posevocab/query.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <exception>
#include <numeric>
#include <string>

#include "posevocab/error.hpp"

namespace posevocab {

InfluenceWeights InfluenceWeights::uniform(std::size_t joints) {
  return InfluenceWeights(joints, [](const Vec3&, std::size_t) { return 1.0; });
}

InfluenceWeights InfluenceWeights::per_joint(std::vector<double> weights) {
  const std::size_t n = weights.size();
  return InfluenceWeights(n, [w = std::move(weights)](const Vec3&, std::size_t j) { return w[j]; });
}

InfluenceWeights InfluenceWeights::radial(std::vector<Vec3> centers, double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::kInvalidInput, "radial influence sigma must be positive");
  const std::size_t n = centers.size();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  return InfluenceWeights(n, [c = std::move(centers), inv](const Vec3& p, std::size_t j) {
    double r2 = 0.0;
    for (int i = 0; i < 3; ++i) r2 += (p[i] - c[j][i]) * (p[i] - c[j][i]);
    return std::exp(-r2 * inv);
  });
}

InfluenceWeights InfluenceWeights::from_function(std::size_t joints, Fn fn) {
  return InfluenceWeights(joints, std::move(fn));
}

void InfluenceWeights::evaluate(const Vec3& point, std::span<double> out) const {
  if (out.size() != joints_) {
    throw Error(ErrorCode::kDimensionMismatch, "influence weight count differs from joint count");
  }
  for (std::size_t j = 0; j < joints_; ++j) {
    const double w = fn_(point, j);
    if (!(w >= 0.0 && w <= 1.0)) {
      throw Error(ErrorCode::kInvalidInput,
                  "influence weight of joint " + std::to_string(j) + " is outside [0, 1]");
    }
    out[j] = w;
  }
}

std::vector<double> InfluenceWeights::evaluate(const Vec3& point) const {
  std::vector<double> out(joints_);
  evaluate(point, out);
  return out;
}

FeatureLayout::FeatureLayout(std::size_t joints, std::vector<std::size_t> scale_channels)
    : joints_(joints), channels_(std::move(scale_channels)) {
  for (std::size_t d : channels_) {
    scale_offsets_.push_back(joint_block_);
    joint_block_ += 3 * d;
  }
}

FeatureLayout FeatureLayout::of(const PoseVocab& v) {
  std::vector<std::size_t> channels;
  for (const auto& s : v.scales) channels.push_back(static_cast<std::size_t>(s.lines.channels));
  return FeatureLayout(v.joint_count(), std::move(channels));
}

std::size_t FeatureLayout::offset(std::size_t joint, std::size_t scale, Axis axis) const {
  return joint * joint_block_ + scale_offsets_[scale] +
         static_cast<std::size_t>(axis) * channels_[scale];
}

std::vector<Neighbor> knn_keys(std::span<const Quat4> keys, const Quat4& query, std::size_t k) {
  std::vector<Neighbor> all;
  all.reserve(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    all.push_back(Neighbor{i, rotation_distance(keys[i], query)});
  }
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
                    });
  all.resize(k);
  return all;
}

std::vector<Neighbor> knn_keys(std::span<const UnitQuat> keys, const UnitQuat& query, std::size_t k) {
  std::vector<Quat4> raw;
  raw.reserve(keys.size());
  for (const auto& q : keys) raw.push_back(q.components());
  return knn_keys(std::span<const Quat4>(raw), query.components(), k);
}

std::vector<Neighbor> knn_keys(const JointVocab& jv, const AxisAngle& rotation, std::size_t k) {
  return knn_keys(std::span<const UnitQuat>(jv.keys), axis_angle_to_quat(rotation), k);
}

FeatureLines blend_embeddings(const JointVocab& jv, const UnitQuat& rotation, std::size_t scale,
                              std::size_t k, bool* degenerate) {
  const auto& embs = jv.embeddings.at(scale);
  const auto keys = std::span<const UnitQuat>(jv.keys).first(embs.size());
  const auto neighbors = knn_keys(keys, rotation, k);
  std::vector<WeightedLines> set;
  set.reserve(neighbors.size());
  for (const auto& n : neighbors) set.push_back(WeightedLines{1.0 - n.distance, &embs[n.index]});
  return blend(set, degenerate);
}

namespace {

std::size_t scale_knn(const PoseVocab& v, std::size_t scale, const QueryOptions& options) {
  return options.knn ? *options.knn : static_cast<std::size_t>(v.scales[scale].knn);
}

void check_pose(const PoseVocab& v, const Pose& pose) {
  if (pose.rotations.size() != v.joint_count()) {
    throw Error(ErrorCode::kInvalidInput,
                "pose has " + std::to_string(pose.rotations.size()) + " joints, vocabulary has " +
                    std::to_string(v.joint_count()));
  }
}

void check_omega(const PoseVocab& v, const InfluenceWeights& omega) {
  if (omega.joints() != v.joint_count()) {
    throw Error(ErrorCode::kInvalidInput, "influence weights do not match the joint count");
  }
}

// Samples `lines` at the normalized point, gated by w, into out.
void sample_gated(const FeatureLines& lines, const Vec3& u, double w, std::span<double> out) {
  sample(lines, u, out);
  for (double& x : out) x *= w;
}

}  // namespace

FeatureLines blend_embeddings(const PoseVocab& v, std::size_t joint, const AxisAngle& rotation,
                              std::size_t scale, const QueryOptions& options) {
  return blend_embeddings(v.joints.at(joint), axis_angle_to_quat(rotation), scale,
                          scale_knn(v, scale, options));
}

PoseFeature query_pose_feature(const PoseVocab& v, const Pose& pose, const Vec3& point,
                               const InfluenceWeights& omega, const QueryOptions& options) {
  check_pose(v, pose);
  check_omega(v, omega);
  PoseFeature f{FeatureLayout::of(v), {}};
  f.values.assign(f.layout.size(), 0.0);
  const Vec3 u = v.bbox.normalize(point);
  const auto weights = omega.evaluate(point);
  for (std::size_t j = 0; j < v.joint_count(); ++j) {
    const UnitQuat q = axis_angle_to_quat(pose.rotations[j]);
    for (std::size_t s = 0; s < v.scale_count(); ++s) {
      const FeatureLines blended = blend_embeddings(v.joints[j], q, s, scale_knn(v, s, options));
      const std::size_t d = f.layout.channels(s);
      sample_gated(blended, u, weights[j],
                   std::span<double>(f.values).subspan(f.layout.offset(j, s), 3 * d));
    }
  }
  return f;
}

namespace {

// Uniform mean computed as first + sum(x_k - first) / n: identical inputs
// give back the first bit-exactly.
FeatureLines window_mean(const std::deque<FeatureLines>& window) {
  if (window.size() == 1) return window.front();
  FeatureLines out = window.front();
  const auto first = window.front().values();
  std::vector<double> acc(first.size(), 0.0);
  for (std::size_t k = 1; k < window.size(); ++k) {
    const auto x = window[k].values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i] - first[i];
  }
  const auto n = static_cast<double>(window.size());
  auto dst = out.values();
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (acc[i] != 0.0) dst[i] = first[i] + acc[i] / n;
  }
  return out;
}

}  // namespace

std::vector<PoseFeature> query_sequence_smoothed(const PoseVocab& v, std::span<const Pose> poses,
                                                 std::span<const Vec3> points,
                                                 const InfluenceWeights& omega, std::size_t window,
                                                 const QueryOptions& options) {
  if (window < 1 || window % 2 == 0) {
    throw Error(ErrorCode::kInvalidInput, "smoothing window must be odd and >= 1");
  }
  if (points.size() != 1 && points.size() != poses.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "need one point, or one point per frame");
  }
  check_omega(v, omega);
  for (const auto& p : poses) check_pose(v, p);

  const FeatureLayout layout = FeatureLayout::of(v);
  const std::size_t frames = poses.size();
  std::vector<PoseFeature> out(frames, PoseFeature{layout, std::vector<double>(layout.size(), 0.0)});
  std::vector<std::vector<double>> weights(frames);
  std::vector<Vec3> normalized(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const Vec3& p = points.size() == 1 ? points[0] : points[t];
    weights[t] = omega.evaluate(p);
    normalized[t] = v.bbox.normalize(p);
  }

  const std::size_t half = window / 2;
  for (std::size_t j = 0; j < v.joint_count(); ++j) {
    std::vector<UnitQuat> quats;
    for (const auto& p : poses) quats.push_back(axis_angle_to_quat(p.rotations[j]));
    for (std::size_t s = 0; s < v.scale_count(); ++s) {
      const std::size_t k = scale_knn(v, s, options);
      const std::size_t d = layout.channels(s);
      // Sliding window over frames [t - half, t + half] clipped to the sequence.
      std::deque<FeatureLines> ring;
      std::size_t next = 0;
      for (std::size_t t = 0; t < frames; ++t) {
        const std::size_t begin = t >= half ? t - half : 0;
        const std::size_t end = std::min(frames, t + half + 1);
        while (next < end) ring.push_back(blend_embeddings(v.joints[j], quats[next++], s, k));
        while (next - ring.size() < begin) ring.pop_front();
        sample_gated(window_mean(ring), normalized[t], weights[t][j],
                     std::span<double>(out[t].values).subspan(layout.offset(j, s), 3 * d));
      }
    }
  }
  return out;
}

std::vector<PoseFeature> query_sequence_smoothed(const PoseVocab& v, std::span<const Pose> poses,
                                                 const Vec3& point, const InfluenceWeights& omega,
                                                 std::size_t window, const QueryOptions& options) {
  return query_sequence_smoothed(v, poses, std::span<const Vec3>(&point, 1), omega, window, options);
}

std::vector<PoseFeature> query_batch(const PoseVocab& v, std::span<const QueryRecord> records,
                                     const InfluenceWeights& omega, const QueryOptions& options,
                                     kernels::Execution exec) {
  check_omega(v, omega);
  for (std::size_t i = 0; i < records.size(); ++i) {
    check_pose(v, records[i].pose);
    if (records[i].omega && records[i].omega->size() != v.joint_count()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "record " + std::to_string(i) + " has a wrong-sized weight override");
    }
  }
  std::vector<PoseFeature> out(records.size());
  auto run_one = [&](std::size_t i) {
    const auto& r = records[i];
    if (r.omega) {
      out[i] = query_pose_feature(v, r.pose, r.point, InfluenceWeights::per_joint(*r.omega), options);
    } else {
      out[i] = query_pose_feature(v, r.pose, r.point, omega, options);
    }
  };

  if (exec == kernels::Execution::kSerial) {
    for (std::size_t i = 0; i < records.size(); ++i) run_one(i);
    return out;
  }
  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(records.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      run_one(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(posevocab_query_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace posevocab
