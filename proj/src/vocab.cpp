#include "posevocab/vocab.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "posevocab/error.hpp"

namespace posevocab {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seeded by the joint name, not its position, so reordering joints only
// reorders the result.
std::uint64_t joint_seed(std::uint64_t seed, const std::string& name) {
  return splitmix64(seed ^ fnv1a(kFnvOffset, name.data(), name.size()));
}

FeatureLines init_lines(const LinesShape& shape, const InitPolicy& init, std::mt19937_64& rng) {
  FeatureLines fl(shape, 0.0);
  if (init.kind == InitPolicy::Kind::kZero) return fl;
  for (double& v : fl.values()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = init.amplitude * (2.0 * u - 1.0);
  }
  return fl;
}

}  // namespace

void PoseSequence::validate() const {
  if (frames < 1) throw Error(ErrorCode::kInvalidInput, "pose sequence has no frames");
  if (joints() < 1) throw Error(ErrorCode::kInvalidInput, "pose sequence has no joints");
  if (rotations.size() != frames * joints()) {
    throw Error(ErrorCode::kDimensionMismatch, "pose sequence size is not frames * joints");
  }
  if (!timestamps.empty() && timestamps.size() != frames) {
    throw Error(ErrorCode::kDimensionMismatch, "timestamp count differs from frame count");
  }
  std::set<std::string> seen;
  for (const auto& name : joint_names) {
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::kInvalidInput, "duplicate joint name '" + name + "'");
    }
  }
  for (const auto& aa : rotations) {
    for (double c : aa.v) {
      if (!std::isfinite(c)) throw Error(ErrorCode::kNonFinite, "pose sequence has a non-finite rotation");
    }
  }
}

std::vector<std::string> default_joint_names(std::size_t count) {
  std::vector<std::string> names;
  names.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "joint_%02zu", j);
    names.emplace_back(buf);
  }
  return names;
}

const std::vector<std::string>& smpl_joint_names() {
  static const std::vector<std::string> names{
      "pelvis",         "left_hip",      "right_hip",      "spine1",      "left_knee",
      "right_knee",     "spine2",        "left_ankle",     "right_ankle", "spine3",
      "left_foot",      "right_foot",    "neck",           "left_collar", "right_collar",
      "head",           "left_shoulder", "right_shoulder", "left_elbow",  "right_elbow",
      "left_wrist",     "right_wrist",   "left_hand",      "right_hand"};
  return names;
}

const std::vector<std::string>& default_excluded_joints() {
  static const std::vector<std::string> names{"pelvis", "left_hand", "right_hand"};
  return names;
}

void BBox::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(lo[i]) || !std::isfinite(hi[i])) {
      throw Error(ErrorCode::kNonFinite, "bounding box is not finite");
    }
    if (!(hi[i] > lo[i])) {
      throw Error(ErrorCode::kInvalidInput, "bounding box has non-positive extent");
    }
  }
}

Vec3 BBox::normalize(const Vec3& p) const {
  Vec3 u;
  for (int i = 0; i < 3; ++i) u[i] = (p[i] - lo[i]) / (hi[i] - lo[i]);
  return u;
}

void PoseVocab::validate() const {
  if (scales.empty()) throw Error(ErrorCode::kInvalidInput, "vocabulary has no scales");
  for (const auto& s : scales) s.validate();
  bbox.validate();
  if (joint_names.size() != joints.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "joint name count differs from joint count");
  }
  for (const auto& jv : joints) {
    if (jv.keys.empty()) throw Error(ErrorCode::kInvalidInput, "joint vocabulary has no keys");
    if (jv.embeddings.size() != scales.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "joint embedding scales differ from scale list");
    }
    for (std::size_t s = 0; s < scales.size(); ++s) {
      const auto& embs = jv.embeddings[s];
      if (embs.empty() || embs.size() > jv.keys.size()) {
        throw Error(ErrorCode::kDimensionMismatch, "embedding count does not fit the key list");
      }
      for (const auto& fl : embs) {
        if (fl.shape() != scales[s].lines) {
          throw Error(ErrorCode::kDimensionMismatch, "embedding shape differs from its scale");
        }
      }
    }
  }
}

std::vector<std::size_t> farthest_rotation_indices(std::span<const UnitQuat> rotations,
                                                   std::size_t count, kernels::Execution exec) {
  if (rotations.empty()) throw Error(ErrorCode::kInvalidInput, "no rotations to sample from");
  return kernels::farthest_point_indices(
      rotations.size(), count, kDedupTolerance, exec,
      [&](std::size_t i, std::size_t j) { return rotation_distance(rotations[i], rotations[j]); });
}

std::vector<UnitQuat> sample_key_rotations(std::span<const UnitQuat> rotations, std::size_t count,
                                           kernels::Execution exec) {
  std::vector<UnitQuat> keys;
  for (std::size_t i : farthest_rotation_indices(rotations, count, exec)) {
    keys.push_back(rotations[i]);
  }
  return keys;
}

double coverage_radius(std::span<const UnitQuat> points, std::span<const UnitQuat> keys) {
  double radius = 0.0;
  for (const auto& p : points) {
    double nearest = 1.0;
    for (const auto& k : keys) nearest = std::min(nearest, rotation_distance(p, k));
    radius = std::max(radius, nearest);
  }
  return radius;
}

std::vector<UnitQuat> joint_rotations(const PoseSequence& seq, std::size_t joint) {
  std::vector<UnitQuat> out;
  out.reserve(seq.frames);
  for (std::size_t t = 0; t < seq.frames; ++t) out.push_back(axis_angle_to_quat(seq.at(t, joint)));
  return out;
}

std::uint64_t sequence_hash(const PoseSequence& seq) {
  std::uint64_t h = kFnvOffset;
  for (const auto& name : seq.joint_names) {
    h = fnv1a(h, name.data(), name.size());
    h = fnv1a(h, "\0", 1);
  }
  for (const auto& aa : seq.rotations) {
    for (double c : aa.v) {
      const auto bits = std::bit_cast<std::uint64_t>(c);
      h = fnv1a(h, &bits, sizeof(bits));
    }
  }
  return h;
}

PoseVocab build_vocab(const PoseSequence& seq, const std::vector<ScaleConfig>& scales,
                      const BBox& bbox, const InitPolicy& init, const BuildOptions& options) {
  seq.validate();
  bbox.validate();
  if (scales.empty()) throw Error(ErrorCode::kInvalidInput, "at least one scale is required");
  for (const auto& s : scales) s.validate();

  std::vector<std::size_t> kept;
  for (std::size_t j = 0; j < seq.joints(); ++j) {
    const auto& name = seq.joint_names[j];
    if (std::find(options.exclude_joints.begin(), options.exclude_joints.end(), name) ==
        options.exclude_joints.end()) {
      kept.push_back(j);
    }
  }
  if (kept.empty()) throw Error(ErrorCode::kInvalidInput, "every joint is excluded");

  PoseVocab v;
  v.scales = scales;
  v.bbox = bbox;
  v.meta.seed = init.seed;
  v.joints.resize(kept.size());
  for (std::size_t j : kept) v.joint_names.push_back(seq.joint_names[j]);

  PoseSequence kept_seq;
  kept_seq.joint_names = v.joint_names;
  kept_seq.frames = seq.frames;
  for (std::size_t t = 0; t < seq.frames; ++t) {
    for (std::size_t j : kept) kept_seq.rotations.push_back(seq.at(t, j));
  }
  v.meta.source_hash = sequence_hash(kept_seq);

  const auto joint_count = static_cast<std::ptrdiff_t>(kept.size());
  // Joints are independent; each writes only its own slot.
#pragma omp parallel for schedule(dynamic) if (options.execution == kernels::Execution::kParallel)
  for (std::ptrdiff_t jj = 0; jj < joint_count; ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    const std::string& name = v.joint_names[j];
    std::vector<std::size_t> per_scale_m;
    const auto override_it = options.key_count_override.find(name);
    for (const auto& s : scales) {
      const int m = override_it != options.key_count_override.end() ? override_it->second : s.key_count;
      per_scale_m.push_back(static_cast<std::size_t>(std::max(m, 1)));
    }
    const std::size_t max_m = *std::max_element(per_scale_m.begin(), per_scale_m.end());

    JointVocab& jv = v.joints[j];
    // Greedy FPS picks are prefix-stable, so one run at the largest M serves
    // every scale.
    jv.keys = sample_key_rotations(joint_rotations(seq, kept[j]), max_m, kernels::Execution::kSerial);

    std::mt19937_64 rng(joint_seed(init.seed, name));
    jv.embeddings.resize(scales.size());
    for (std::size_t s = 0; s < scales.size(); ++s) {
      const std::size_t count = std::min(per_scale_m[s], jv.keys.size());
      jv.embeddings[s].reserve(count);
      for (std::size_t m = 0; m < count; ++m) {
        jv.embeddings[s].push_back(init_lines(scales[s].lines, init, rng));
      }
    }
  }
  return v;
}

VocabStats vocab_stats(const PoseVocab& v, const PoseSequence* training) {
  VocabStats stats;
  for (std::size_t j = 0; j < v.joint_count(); ++j) {
    JointStats js;
    js.name = v.joint_names[j];
    std::vector<UnitQuat> points;
    bool have_points = false;
    if (training != nullptr) {
      const auto it = std::find(training->joint_names.begin(), training->joint_names.end(), js.name);
      if (it != training->joint_names.end()) {
        points = joint_rotations(*training, static_cast<std::size_t>(it - training->joint_names.begin()));
        have_points = true;
      }
    }
    const JointVocab& jv = v.joints[j];
    for (std::size_t s = 0; s < v.scale_count(); ++s) {
      ScaleStats ss;
      ss.key_count = jv.key_count(s);
      ss.parameter_count = ss.key_count * v.scales[s].lines.size();
      ss.memory_bytes = ss.parameter_count * sizeof(double) + ss.key_count * sizeof(Quat4);
      ss.file_bytes = (ss.parameter_count + 4 * ss.key_count) * sizeof(float);
      if (have_points) {
        ss.coverage_radius =
            coverage_radius(points, std::span<const UnitQuat>(jv.keys).first(ss.key_count));
      }
      stats.total_parameters += ss.parameter_count;
      stats.total_memory_bytes += ss.memory_bytes;
      js.scales.push_back(ss);
    }
    stats.joints.push_back(std::move(js));
  }
  return stats;
}

}  // namespace posevocab
