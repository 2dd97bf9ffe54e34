#include "posevocab/fit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "posevocab/error.hpp"

namespace posevocab {

namespace {

constexpr std::size_t kReductionChunks = 8;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

Vec3 random_axis(std::mt19937_64& rng) {
  const double z = uniform(rng, -1.0, 1.0);
  const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

void init_uniform(std::span<double> values, double amplitude, std::mt19937_64& rng) {
  for (double& v : values) v = uniform(rng, -amplitude, amplitude);
}

std::size_t lines_line_offset(const LinesShape& shape, Axis a) {
  std::size_t rows = 0;
  for (int i = 0; i < static_cast<int>(a); ++i) rows += static_cast<std::size_t>(shape.resolution[i]);
  return rows * static_cast<std::size_t>(shape.channels);
}

// Normalized KNN blend coefficients; all-zero weights fall back to uniform.
std::vector<double> blend_coefficients(const std::vector<Neighbor>& neighbors) {
  std::vector<double> coef;
  double total = 0.0;
  for (const auto& n : neighbors) {
    coef.push_back(1.0 - n.distance);
    total += coef.back();
  }
  if (neighbors.size() == 1) return {1.0};
  for (double& c : coef) c = total > 0.0 ? c / total : 1.0 / static_cast<double>(coef.size());
  return coef;
}

std::vector<Neighbor> nearest(const std::vector<double>& dist, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < dist.size(); ++i) all.push_back(Neighbor{i, dist[i]});
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
                    });
  all.resize(k);
  return all;
}

// Emits terms sampling one feature-line embedding into a feature block.
void emit_line_terms(const LinesShape& shape, std::size_t param_base, std::size_t feature_base,
                     const SampleStencil& st, double coef, std::vector<BlockTerm>& terms) {
  const auto d = static_cast<std::size_t>(shape.channels);
  for (Axis a : kAxes) {
    const int ai = static_cast<int>(a);
    const std::size_t line = param_base + lines_line_offset(shape, a);
    const auto feature = static_cast<std::uint32_t>(feature_base + static_cast<std::size_t>(ai) * d);
    terms.push_back(BlockTerm{feature, static_cast<std::uint32_t>(line + st[ai].lo * d),
                              static_cast<std::uint32_t>(d), coef * st[ai].w_lo});
    if (st[ai].w_hi != 0.0) {
      terms.push_back(BlockTerm{feature, static_cast<std::uint32_t>(line + st[ai].hi * d),
                                static_cast<std::uint32_t>(d), coef * st[ai].w_hi});
    }
  }
}

std::vector<UnitQuat> to_quats(std::span<const AxisAngle> rotations) {
  std::vector<UnitQuat> q;
  q.reserve(rotations.size());
  for (const auto& aa : rotations) q.push_back(axis_angle_to_quat(aa));
  return q;
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFeatureLines: return "featlines";
    case Variant::kGlobalCodes: return "globalcode";
    case Variant::kGlobalKeyPoses: return "globalpose";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  if (name == "featlines") return Variant::kFeatureLines;
  if (name == "globalcode") return Variant::kGlobalCodes;
  if (name == "globalpose") return Variant::kGlobalKeyPoses;
  throw Error(ErrorCode::kInvalidInput, "unknown variant '" + name + "'");
}

SyntheticField SyntheticField::generate(std::size_t joints, std::size_t outputs, std::uint64_t seed) {
  if (joints < 1 || outputs < 1) {
    throw Error(ErrorCode::kInvalidInput, "synthetic field needs at least one joint and output");
  }
  SyntheticField f;
  f.joints = joints;
  f.outputs = outputs;
  f.seed = seed;
  std::mt19937_64 rng(mix(seed ^ 0x5eedf1e1dULL));
  for (std::size_t o = 0; o < outputs; ++o) {
    double total = 0.0;
    const std::size_t first = f.amplitude.size();
    for (std::size_t j = 0; j < joints; ++j) {
      f.amplitude.push_back(uniform(rng, 0.5, 1.0));
      total += f.amplitude.back();
      f.pose_frequency.push_back(uniform(rng, 1.5, 3.0));
      f.spatial_frequency.push_back(uniform(rng, 2.0, 4.0));
      // Axis-aligned directions keep each joint's spatial term separable
      // along one feature line.
      Vec3 u{0.0, 0.0, 0.0};
      u[rng() % 3] = (rng() & 1) ? 1.0 : -1.0;
      f.direction.push_back(u);
    }
    // Keeps |g| <= 3.
    if (total > 3.0) {
      for (std::size_t j = 0; j < joints; ++j) f.amplitude[first + j] *= 3.0 / total;
    }
  }
  for (std::size_t j = 0; j < joints; ++j) {
    f.centers.push_back({uniform(rng, -0.6, 0.6), uniform(rng, -0.6, 0.6), uniform(rng, -0.6, 0.6)});
  }
  return f;
}

InfluenceWeights SyntheticField::influence() const { return InfluenceWeights::radial(centers, sigma); }

void SyntheticField::evaluate(std::span<const UnitQuat> pose, const Vec3& point,
                              std::span<double> out) const {
  if (pose.size() != joints || out.size() != outputs) {
    throw Error(ErrorCode::kDimensionMismatch, "synthetic field evaluated with wrong dimensions");
  }
  const auto omega = influence().evaluate(point);
  for (std::size_t o = 0; o < outputs; ++o) {
    double sum = 0.0;
    for (std::size_t j = 0; j < joints; ++j) {
      const std::size_t i = o * joints + j;
      const Vec3& u = direction[i];
      const double proj = point[0] * u[0] + point[1] * u[1] + point[2] * u[2];
      sum += omega[j] * amplitude[i] *
             std::sin(pose_frequency[i] * pose[j].angle() + spatial_frequency[i] * proj);
    }
    out[o] = sum;
  }
}

std::vector<double> SyntheticField::evaluate(std::span<const UnitQuat> pose, const Vec3& point) const {
  std::vector<double> out(outputs);
  evaluate(pose, point, out);
  return out;
}

PoseSequence random_pose_sequence(std::size_t joints, std::size_t frames, std::uint64_t seed,
                                  double max_angle) {
  PoseSequence seq;
  seq.joint_names = default_joint_names(joints);
  seq.frames = frames;
  std::mt19937_64 rng(mix(seed ^ 0x9053ULL));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < joints; ++j) {
      const Vec3 axis = random_axis(rng);
      const double angle = uniform(rng, 0.0, max_angle);
      seq.rotations.push_back(AxisAngle{{angle * axis[0], angle * axis[1], angle * axis[2]}});
    }
  }
  return seq;
}

PoseSequence perturb_sequence(const PoseSequence& seq, double min_angle, double max_angle,
                              std::uint64_t seed) {
  PoseSequence out = seq;
  std::mt19937_64 rng(mix(seed ^ 0x7e27ULL));
  for (auto& aa : out.rotations) {
    const Vec3 axis = random_axis(rng);
    const double angle = uniform(rng, min_angle, max_angle);
    const UnitQuat delta = axis_angle_to_quat(AxisAngle{{angle * axis[0], angle * axis[1], angle * axis[2]}});
    aa = quat_to_axis_angle(multiply(delta, axis_angle_to_quat(aa)));
  }
  return out;
}

void Readout::apply(std::span<const double> feature, std::span<double> out) const {
  for (std::size_t o = 0; o < outputs; ++o) {
    double y = bias[o];
    const double* w = weights.data() + o * inputs;
    for (std::size_t i = 0; i < inputs; ++i) y += w[i] * feature[i];
    out[o] = y;
  }
}

void Encoder::encode(const SamplePlan& plan, std::span<double> feature) const {
  std::fill(feature.begin(), feature.end(), 0.0);
  for (const auto& t : plan.terms) {
    const double* p = params_.data() + t.param;
    double* f = feature.data() + t.feature;
    for (std::uint32_t i = 0; i < t.length; ++i) f[i] += t.coef * p[i];
  }
}

FeatureLinesEncoder::FeatureLinesEncoder(PoseVocab vocab, InfluenceWeights omega)
    : vocab_(std::move(vocab)), omega_(std::move(omega)), layout_(FeatureLayout::of(vocab_)) {
  vocab_.validate();
  if (omega_.joints() != vocab_.joint_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "influence weights do not match the joint count");
  }
  first_block_.assign(vocab_.joint_count(), std::vector<std::size_t>(vocab_.scale_count()));
  for (std::size_t j = 0; j < vocab_.joint_count(); ++j) {
    for (std::size_t s = 0; s < vocab_.scale_count(); ++s) {
      first_block_[j][s] = tv_blocks_.size();
      for (auto& fl : vocab_.joints[j].embeddings[s]) {
        tv_blocks_.push_back(EmbeddingBlock{params_.size(), fl.shape()});
        params_.insert(params_.end(), fl.values().begin(), fl.values().end());
      }
    }
  }
}

std::size_t FeatureLinesEncoder::block_id(std::size_t joint, std::size_t scale, std::size_t key) const {
  return first_block_[joint][scale] + key;
}

PoseVocab FeatureLinesEncoder::vocab() const {
  PoseVocab out = vocab_;
  std::size_t id = 0;
  for (auto& jv : out.joints) {
    for (auto& embs : jv.embeddings) {
      for (auto& fl : embs) {
        const auto& block = tv_blocks_[id++];
        std::copy_n(params_.begin() + static_cast<std::ptrdiff_t>(block.offset), block.shape.size(),
                    fl.values().begin());
      }
    }
  }
  return out;
}

SamplePlan FeatureLinesEncoder::plan(std::span<const UnitQuat> pose, const Vec3& point) const {
  if (pose.size() != vocab_.joint_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "pose joint count differs from the vocabulary");
  }
  SamplePlan plan;
  const Vec3 u = vocab_.bbox.normalize(point);
  const auto omega = omega_.evaluate(point);
  for (std::size_t j = 0; j < vocab_.joint_count(); ++j) {
    if (omega[j] == 0.0) continue;
    const JointVocab& jv = vocab_.joints[j];
    for (std::size_t s = 0; s < vocab_.scale_count(); ++s) {
      const auto keys = std::span<const UnitQuat>(jv.keys).first(jv.key_count(s));
      const auto neighbors = knn_keys(keys, pose[j], static_cast<std::size_t>(vocab_.scales[s].knn));
      const auto coef = blend_coefficients(neighbors);
      const LinesShape& shape = vocab_.scales[s].lines;
      const SampleStencil st = sample_gradient(shape, u);
      for (std::size_t k = 0; k < neighbors.size(); ++k) {
        const std::size_t id = block_id(j, s, neighbors[k].index);
        emit_line_terms(shape, tv_blocks_[id].offset, layout_.offset(j, s), st, omega[j] * coef[k],
                        plan.terms);
        plan.touched.push_back(static_cast<std::uint32_t>(id));
      }
    }
  }
  return plan;
}

GlobalCodeEncoder::GlobalCodeEncoder(std::vector<std::vector<UnitQuat>> keys, std::size_t code_dim,
                                     std::size_t knn, InfluenceWeights omega, const InitPolicy& init)
    : keys_(std::move(keys)), code_dim_(code_dim), knn_(knn), omega_(std::move(omega)) {
  if (code_dim_ < 1 || knn_ < 1) throw Error(ErrorCode::kInvalidInput, "code dim and knn must be >= 1");
  if (omega_.joints() != keys_.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "influence weights do not match the joint count");
  }
  for (const auto& jk : keys_) {
    if (jk.empty()) throw Error(ErrorCode::kInvalidInput, "joint without keys");
    first_code_.push_back(params_.size());
    params_.resize(params_.size() + jk.size() * code_dim_, 0.0);
  }
  if (init.kind == InitPolicy::Kind::kUniform) {
    std::mt19937_64 rng(mix(init.seed ^ 0xc0de5ULL));
    init_uniform(params_, init.amplitude, rng);
  }
}

SamplePlan GlobalCodeEncoder::plan(std::span<const UnitQuat> pose, const Vec3& point) const {
  if (pose.size() != keys_.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "pose joint count differs from the encoder");
  }
  SamplePlan plan;
  const auto omega = omega_.evaluate(point);
  for (std::size_t j = 0; j < keys_.size(); ++j) {
    if (omega[j] == 0.0) continue;
    const auto neighbors = knn_keys(std::span<const UnitQuat>(keys_[j]), pose[j], knn_);
    const auto coef = blend_coefficients(neighbors);
    for (std::size_t k = 0; k < neighbors.size(); ++k) {
      plan.terms.push_back(BlockTerm{static_cast<std::uint32_t>(j * code_dim_),
                                     static_cast<std::uint32_t>(first_code_[j] + neighbors[k].index * code_dim_),
                                     static_cast<std::uint32_t>(code_dim_), omega[j] * coef[k]});
    }
  }
  return plan;
}

double pose_distance(std::span<const UnitQuat> a, std::span<const UnitQuat> b) {
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorCode::kDimensionMismatch, "pose distance needs equal, nonempty poses");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) sum += rotation_distance(a[j], b[j]);
  return sum / static_cast<double>(a.size());
}

GlobalPoseEncoder::GlobalPoseEncoder(std::vector<std::vector<UnitQuat>> key_poses,
                                     std::vector<ScaleConfig> scales, BBox bbox,
                                     const InitPolicy& init)
    : key_poses_(std::move(key_poses)), scales_(std::move(scales)), bbox_(bbox) {
  if (key_poses_.empty()) throw Error(ErrorCode::kInvalidInput, "no key poses");
  if (scales_.empty()) throw Error(ErrorCode::kInvalidInput, "no scales");
  bbox_.validate();
  std::vector<std::size_t> channels;
  for (const auto& s : scales_) {
    s.lines.validate();
    channels.push_back(static_cast<std::size_t>(s.lines.channels));
  }
  layout_ = FeatureLayout(1, channels);
  for (std::size_t m = 0; m < key_poses_.size(); ++m) {
    for (const auto& s : scales_) {
      tv_blocks_.push_back(EmbeddingBlock{params_.size(), s.lines});
      params_.resize(params_.size() + s.lines.size(), 0.0);
    }
  }
  if (init.kind == InitPolicy::Kind::kUniform) {
    std::mt19937_64 rng(mix(init.seed ^ 0x90a5eULL));
    init_uniform(params_, init.amplitude, rng);
  }
}

SamplePlan GlobalPoseEncoder::plan(std::span<const UnitQuat> pose, const Vec3& point) const {
  std::vector<double> dist;
  dist.reserve(key_poses_.size());
  for (const auto& key : key_poses_) dist.push_back(pose_distance(key, pose));
  SamplePlan plan;
  const Vec3 u = bbox_.normalize(point);
  for (std::size_t s = 0; s < scales_.size(); ++s) {
    const auto neighbors = nearest(dist, static_cast<std::size_t>(scales_[s].knn));
    const auto coef = blend_coefficients(neighbors);
    const SampleStencil st = sample_gradient(scales_[s].lines, u);
    for (std::size_t k = 0; k < neighbors.size(); ++k) {
      const std::size_t id = neighbors[k].index * scales_.size() + s;
      emit_line_terms(scales_[s].lines, tv_blocks_[id].offset, layout_.offset(0, s), st, coef[k],
                      plan.terms);
      plan.touched.push_back(static_cast<std::uint32_t>(id));
    }
  }
  return plan;
}

namespace {

struct ChunkResult {
  double sse = 0.0;
  std::vector<double> grad;
  std::vector<unsigned char> touched;
};

void accumulate_chunk(const Encoder& encoder, const Readout& readout,
                      std::span<const PlannedSample> samples, double grad_scale, bool want_gradient,
                      ChunkResult& out) {
  const std::size_t enc_params = encoder.parameters().size();
  std::vector<double> feature(encoder.feature_size());
  std::vector<double> y(readout.outputs);
  std::vector<double> gy(readout.outputs);
  std::vector<double> gf(encoder.feature_size());
  for (const auto& s : samples) {
    encoder.encode(s.plan, feature);
    readout.apply(feature, y);
    for (auto id : s.plan.touched) out.touched[id] = 1;
    for (std::size_t o = 0; o < readout.outputs; ++o) {
      const double r = y[o] - s.target[o];
      out.sse += r * r;
      gy[o] = grad_scale * r;
    }
    if (!want_gradient) continue;
    double* gw = out.grad.data() + enc_params;
    double* gb = gw + readout.weights.size();
    std::fill(gf.begin(), gf.end(), 0.0);
    for (std::size_t o = 0; o < readout.outputs; ++o) {
      const double* w = readout.weights.data() + o * readout.inputs;
      double* gwo = gw + o * readout.inputs;
      for (std::size_t i = 0; i < readout.inputs; ++i) {
        gwo[i] += gy[o] * feature[i];
        gf[i] += w[i] * gy[o];
      }
      gb[o] += gy[o];
    }
    for (const auto& t : s.plan.terms) {
      double* g = out.grad.data() + t.param;
      const double* f = gf.data() + t.feature;
      for (std::uint32_t i = 0; i < t.length; ++i) g[i] += t.coef * f[i];
    }
  }
}

}  // namespace

Objective evaluate_objective(const Encoder& encoder, const Readout& readout,
                             std::span<const PlannedSample> samples, const LossOptions& options,
                             bool want_gradient, kernels::Execution exec) {
  if (readout.inputs != encoder.feature_size()) {
    throw Error(ErrorCode::kDimensionMismatch, "readout input size differs from the feature size");
  }
  for (const auto& s : samples) {
    if (s.target.size() != readout.outputs) {
      throw Error(ErrorCode::kDimensionMismatch, "target size differs from the readout outputs");
    }
  }
  Objective obj;
  const std::size_t n = samples.size();
  const std::size_t total_params = encoder.parameters().size() + readout.parameter_count();
  const std::size_t blocks = encoder.tv_blocks().size();
  if (n == 0) {
    if (want_gradient) obj.gradient.assign(total_params, 0.0);
    return obj;
  }
  const double denom = static_cast<double>(n * readout.outputs);
  const double grad_scale = 2.0 * options.data_weight / denom;

  std::vector<ChunkResult> chunks(kReductionChunks);
  for (auto& c : chunks) {
    if (want_gradient) c.grad.assign(total_params, 0.0);
    c.touched.assign(blocks, 0);
  }
  auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = c * n / kReductionChunks;
    const std::size_t end = (c + 1) * n / kReductionChunks;
    accumulate_chunk(encoder, readout, samples.subspan(begin, end - begin), grad_scale,
                     want_gradient, chunks[c]);
  };
  if (exec == kernels::Execution::kParallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(kReductionChunks); ++c) {
      run_chunk(static_cast<std::size_t>(c));
    }
  } else {
    for (std::size_t c = 0; c < kReductionChunks; ++c) run_chunk(c);
  }

  // Fixed-order reduction.
  double sse = 0.0;
  std::vector<unsigned char> touched(blocks, 0);
  for (auto& c : chunks) {
    sse += c.sse;
    for (std::size_t b = 0; b < blocks; ++b) touched[b] |= c.touched[b];
  }
  if (want_gradient) {
    obj.gradient = std::move(chunks[0].grad);
    for (std::size_t c = 1; c < kReductionChunks; ++c) {
      for (std::size_t i = 0; i < total_params; ++i) obj.gradient[i] += chunks[c].grad[i];
    }
  }
  obj.data_mse = sse / denom;

  std::size_t touched_count = 0;
  for (auto t : touched) touched_count += t;
  if (touched_count > 0) {
    const auto& params = encoder.parameters();
    double tv_sum = 0.0;
    const double scale = options.tv_weight / static_cast<double>(touched_count);
    for (std::size_t b = 0; b < blocks; ++b) {
      if (!touched[b]) continue;
      const auto& block = encoder.tv_blocks()[b];
      const auto values = std::span<const double>(params).subspan(block.offset, block.shape.size());
      tv_sum += tv_loss(block.shape, values);
      if (want_gradient && options.tv_weight != 0.0) {
        accumulate_tv_gradient(block.shape, values, scale,
                               std::span<double>(obj.gradient).subspan(block.offset, block.shape.size()));
      }
    }
    obj.tv = tv_sum / static_cast<double>(touched_count);
  }
  obj.loss = options.data_weight * obj.data_mse + options.tv_weight * obj.tv;
  return obj;
}

namespace {

std::vector<PlannedSample> plan_samples(const Encoder& encoder, std::span<const FitSample> batch) {
  std::vector<PlannedSample> out;
  out.reserve(batch.size());
  for (const auto& s : batch) {
    const auto quats = to_quats(s.pose.rotations);
    out.push_back(PlannedSample{encoder.plan(quats, s.point), s.target});
  }
  return out;
}

}  // namespace

double fit_loss(const PoseVocab& v, const InfluenceWeights& omega, const Readout& readout,
                std::span<const FitSample> batch, const LossOptions& options) {
  FeatureLinesEncoder encoder(v, omega);
  const auto planned = plan_samples(encoder, batch);
  return evaluate_objective(encoder, readout, planned, options, false).loss;
}

FitGradients fit_gradients(const PoseVocab& v, const InfluenceWeights& omega,
                           const Readout& readout, std::span<const FitSample> batch,
                           const LossOptions& options) {
  FeatureLinesEncoder encoder(v, omega);
  const auto planned = plan_samples(encoder, batch);
  const Objective obj = evaluate_objective(encoder, readout, planned, options, true);

  std::vector<unsigned char> touched(encoder.tv_blocks().size(), 0);
  for (const auto& p : planned) {
    for (auto id : p.plan.touched) touched[id] = 1;
  }
  FitGradients out;
  out.loss = obj.loss;
  for (std::size_t j = 0; j < v.joint_count(); ++j) {
    for (std::size_t s = 0; s < v.scale_count(); ++s) {
      for (std::size_t m = 0; m < v.joints[j].key_count(s); ++m) {
        const std::size_t id = encoder.block_id(j, s, m);
        if (!touched[id]) continue;
        const auto& block = encoder.tv_blocks()[id];
        const auto g = std::span<const double>(obj.gradient).subspan(block.offset, block.shape.size());
        out.embeddings.push_back(
            EmbeddingGradient{j, s, m, FeatureLines(block.shape, std::vector<double>(g.begin(), g.end()))});
      }
    }
  }
  out.readout = Readout(readout.inputs, readout.outputs);
  const std::size_t base = encoder.parameters().size();
  std::copy_n(obj.gradient.begin() + static_cast<std::ptrdiff_t>(base), out.readout.weights.size(),
              out.readout.weights.begin());
  std::copy_n(obj.gradient.begin() + static_cast<std::ptrdiff_t>(base + out.readout.weights.size()),
              out.readout.bias.size(), out.readout.bias.begin());
  return out;
}

namespace {

BuildOptions fit_build_options(kernels::Execution exec) {
  BuildOptions options;
  options.exclude_joints.clear();
  options.execution = exec;
  return options;
}

InitPolicy fit_init(const FitConfig& cfg) {
  return InitPolicy{InitPolicy::Kind::kUniform, cfg.init_amplitude, cfg.seed};
}

std::size_t feature_lines_feature_size(std::size_t joints, const std::vector<ScaleConfig>& scales) {
  std::size_t per_joint = 0;
  for (const auto& s : scales) per_joint += 3 * static_cast<std::size_t>(s.lines.channels);
  return joints * per_joint;
}

std::size_t vocab_parameters(const PoseVocab& v) {
  std::size_t n = 0;
  for (const auto& jv : v.joints) {
    for (std::size_t s = 0; s < v.scale_count(); ++s) n += jv.key_count(s) * v.scales[s].lines.size();
  }
  return n;
}

void validate_config(const FitConfig& cfg) {
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw Error(ErrorCode::kInvalidInput, "learning rate must be positive");
  }
  if (!(cfg.embedding_lr_scale > 0.0)) {
    throw Error(ErrorCode::kInvalidInput, "embedding learning-rate scale must be positive");
  }
  if (!(cfg.tv_weight >= 0.0)) throw Error(ErrorCode::kInvalidInput, "tv weight must be >= 0");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
    throw Error(ErrorCode::kInvalidInput, "momentum must lie in [0, 1)");
  }
  if (cfg.scales.empty()) throw Error(ErrorCode::kInvalidInput, "fit needs at least one scale");
  for (const auto& s : cfg.scales) s.validate();
  cfg.bbox.validate();
  if (cfg.points_per_pose < 1) throw Error(ErrorCode::kInvalidInput, "points per pose must be >= 1");
}

std::vector<FitSample> make_samples(const PoseSequence& seq, const SyntheticField& field,
                                    const BBox& bbox, std::size_t points_per_pose,
                                    std::mt19937_64& rng) {
  std::vector<FitSample> samples;
  samples.reserve(seq.frames * points_per_pose);
  for (std::size_t t = 0; t < seq.frames; ++t) {
    Pose pose{std::vector<AxisAngle>(seq.frame(t).begin(), seq.frame(t).end())};
    const auto quats = to_quats(pose.rotations);
    for (std::size_t k = 0; k < points_per_pose; ++k) {
      Vec3 p;
      for (int i = 0; i < 3; ++i) p[i] = uniform(rng, bbox.lo[i], bbox.hi[i]);
      samples.push_back(FitSample{pose, p, field.evaluate(quats, p)});
    }
  }
  return samples;
}

}  // namespace

std::size_t reference_parameter_count(const PoseSequence& seq, const FitConfig& cfg,
                                      std::size_t outputs) {
  const PoseVocab v = build_vocab(seq, cfg.scales, cfg.bbox, fit_init(cfg), fit_build_options(cfg.execution));
  return vocab_parameters(v) + outputs * (feature_lines_feature_size(v.joint_count(), cfg.scales) + 1);
}

FitResult run_fit(const PoseSequence& seq, const SyntheticField& field, const FitConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  seq.validate();
  validate_config(cfg);
  if (field.joints != seq.joints()) {
    throw Error(ErrorCode::kDimensionMismatch, "synthetic field joint count differs from the sequence");
  }

  FitResult result;
  FitReport& report = result.report;
  report.variant = cfg.variant;
  report.seed = cfg.seed;

  const InfluenceWeights omega = field.influence();
  const InitPolicy init = fit_init(cfg);
  const std::size_t outputs = field.outputs;

  std::mt19937_64 point_rng(mix(cfg.seed ^ 0x9017ULL));
  const auto train = make_samples(seq, field, cfg.bbox, cfg.points_per_pose, point_rng);
  const PoseSequence heldout_seq =
      perturb_sequence(seq, cfg.heldout_min_angle, cfg.heldout_max_angle, mix(cfg.seed + 1));
  const auto heldout = make_samples(heldout_seq, field, cfg.bbox, cfg.heldout_points_per_pose, point_rng);

  PoseVocab vocab = build_vocab(seq, cfg.scales, cfg.bbox, init, fit_build_options(cfg.execution));
  const std::size_t joints = vocab.joint_count();
  report.reference_parameter_count =
      vocab_parameters(vocab) + outputs * (feature_lines_feature_size(joints, cfg.scales) + 1);
  const auto reference = static_cast<double>(report.reference_parameter_count);

  std::unique_ptr<Encoder> encoder;
  switch (cfg.variant) {
    case Variant::kFeatureLines:
      encoder = std::make_unique<FeatureLinesEncoder>(std::move(vocab), omega);
      break;
    case Variant::kGlobalCodes: {
      std::vector<std::vector<UnitQuat>> keys;
      std::size_t key_total = 0;
      for (const auto& jv : vocab.joints) {
        keys.emplace_back(jv.keys.begin(), jv.keys.begin() + static_cast<std::ptrdiff_t>(jv.key_count(0)));
        key_total += keys.back().size();
      }
      // Solve key_total * D + outputs * (J * D + 1) = reference for D.
      const double dim = (reference - static_cast<double>(outputs)) /
                         static_cast<double>(key_total + outputs * joints);
      const auto code_dim = static_cast<std::size_t>(std::max(1.0, std::round(dim)));
      encoder = std::make_unique<GlobalCodeEncoder>(std::move(keys), code_dim,
                                                    static_cast<std::size_t>(cfg.scales[0].knn), omega, init);
      break;
    }
    case Variant::kGlobalKeyPoses: {
      std::size_t per_key = 0;
      for (const auto& s : cfg.scales) per_key += s.lines.size();
      const double feature = static_cast<double>(feature_lines_feature_size(1, cfg.scales));
      const double count = (reference - static_cast<double>(outputs) * (feature + 1.0)) /
                           static_cast<double>(per_key);
      const auto key_count = static_cast<std::size_t>(std::max(1.0, std::round(count)));
      std::vector<std::vector<UnitQuat>> poses;
      for (std::size_t t = 0; t < seq.frames; ++t) poses.push_back(to_quats(seq.frame(t)));
      const auto picked = kernels::farthest_point_indices(
          poses.size(), key_count, kDedupTolerance, cfg.execution,
          [&](std::size_t a, std::size_t b) { return pose_distance(poses[a], poses[b]); });
      std::vector<std::vector<UnitQuat>> key_poses;
      for (std::size_t i : picked) key_poses.push_back(poses[i]);
      encoder = std::make_unique<GlobalPoseEncoder>(std::move(key_poses), cfg.scales, cfg.bbox, init);
      break;
    }
  }

  Readout readout(encoder->feature_size(), outputs);
  {
    std::mt19937_64 rng(mix(cfg.seed ^ 0x4ead07ULL));
    const double bound = 1.0 / std::sqrt(static_cast<double>(readout.inputs));
    init_uniform(readout.weights, bound, rng);
  }

  report.parameter_count = encoder->parameters().size() + readout.parameter_count();
  report.budget_ok = std::abs(static_cast<double>(report.parameter_count) - reference) <=
                     cfg.budget_tolerance * reference;

  auto plan_all = [&](std::span<const FitSample> samples) {
    std::vector<PlannedSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
      out.push_back(PlannedSample{encoder->plan(to_quats(s.pose.rotations), s.point), s.target});
    }
    return out;
  };
  std::vector<PlannedSample> train_plans = plan_all(train);
  const std::vector<PlannedSample> heldout_plans = plan_all(heldout);

  const LossOptions loss{cfg.tv_weight, 1.0};
  const kernels::Execution exec = cfg.execution;
  report.initial_train_mse = evaluate_objective(*encoder, readout, train_plans, loss, false, exec).data_mse;
  report.initial_heldout_mse =
      evaluate_objective(*encoder, readout, heldout_plans, loss, false, exec).data_mse;

  // Flat view: [encoder params | readout weights | readout bias].
  const std::size_t enc_n = encoder->parameters().size();
  const std::size_t w_n = readout.weights.size();
  auto gather = [&] {
    std::vector<double> p(encoder->parameters());
    p.insert(p.end(), readout.weights.begin(), readout.weights.end());
    p.insert(p.end(), readout.bias.begin(), readout.bias.end());
    return p;
  };
  auto scatter = [&](const std::vector<double>& p) {
    std::copy_n(p.begin(), enc_n, encoder->parameters().begin());
    std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(enc_n), w_n, readout.weights.begin());
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(enc_n + w_n), p.end(), readout.bias.begin());
  };

  std::vector<double> params = gather();
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<double> candidate(params.size());
  double lr = cfg.learning_rate;
  const bool full_batch = cfg.batch_size == 0 || cfg.batch_size >= train_plans.size();
  std::mt19937_64 batch_rng(mix(cfg.seed ^ 0xba7c4ULL));
  std::size_t cursor = train_plans.size();

  auto next_batch = [&]() -> std::span<const PlannedSample> {
    if (full_batch) return train_plans;
    if (cursor + cfg.batch_size > train_plans.size()) {
      std::shuffle(train_plans.begin(), train_plans.end(), batch_rng);
      cursor = 0;
    }
    const auto batch = std::span<const PlannedSample>(train_plans).subspan(cursor, cfg.batch_size);
    cursor += cfg.batch_size;
    return batch;
  };

  auto diverge = [&](std::size_t step) {
    report.diverged = true;
    report.diagnostic = "non-finite loss at step " + std::to_string(step) +
                        " (learning rate " + std::to_string(lr) + ")";
  };

  Objective current = evaluate_objective(*encoder, readout, next_batch(), loss, true, exec);
  if (!std::isfinite(current.loss)) diverge(0);
  for (std::size_t step = 0; step < cfg.steps && !report.diverged; ++step) {
    const double lr_embed = lr * cfg.embedding_lr_scale;
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity[i] = cfg.momentum * velocity[i] + current.gradient[i];
      candidate[i] = params[i] - (i < enc_n ? lr_embed : lr) * velocity[i];
    }
    scatter(candidate);
    Objective next = evaluate_objective(*encoder, readout, next_batch(), loss, true, exec);
    ++report.steps_run;
    if (!std::isfinite(next.loss)) {
      scatter(params);
      diverge(step + 1);
      break;
    }
    if (full_batch && next.loss > current.loss) {
      scatter(params);
      lr *= 0.5;
      std::fill(velocity.begin(), velocity.end(), 0.0);
      ++report.rejected_steps;
    } else {
      params.swap(candidate);
      current = std::move(next);
    }
    report.loss_curve.push_back(current.loss);
    report.learning_rates.push_back(lr);
  }

  report.final_train_mse = evaluate_objective(*encoder, readout, train_plans, loss, false, exec).data_mse;
  report.heldout_mse = evaluate_objective(*encoder, readout, heldout_plans, loss, false, exec).data_mse;
  if (auto* lines = dynamic_cast<FeatureLinesEncoder*>(encoder.get())) result.vocab = lines->vocab();
  result.readout = readout;
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace posevocab
