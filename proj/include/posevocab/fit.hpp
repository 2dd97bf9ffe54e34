#pragma once

// Fitting pose embeddings to a synthetic pose-conditioned field by gradient
// descent, and the encoder variants used for the ablation runs.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posevocab/kernels.hpp"
#include "posevocab/query.hpp"
#include "posevocab/vocab.hpp"

namespace posevocab {

enum class Variant {
  kFeatureLines,    // per-joint keys, feature-line embeddings (full method)
  kGlobalCodes,     // per-joint keys, one code vector per key shared by all points
  kGlobalKeyPoses,  // keys are whole poses, feature-line embeddings, no joint split
};

const char* variant_name(Variant v);  // featlines | globalcode | globalpose
Variant parse_variant(const std::string& name);

/// g(pose, p) = sum_j omega(p, j) * a_j * sin(b_j * angle(theta_j) + c_j * <p, u_j>)
/// per output channel, with radial influence weights around per-joint centers.
struct SyntheticField {
  std::size_t joints = 3;
  std::size_t outputs = 1;
  std::uint64_t seed = 0;
  // [output * joints + joint]
  std::vector<double> amplitude;
  std::vector<double> pose_frequency;
  std::vector<double> spatial_frequency;
  std::vector<Vec3> direction;
  std::vector<Vec3> centers;  // per joint
  double sigma = 0.6;

  static SyntheticField generate(std::size_t joints, std::size_t outputs, std::uint64_t seed);

  InfluenceWeights influence() const;
  void evaluate(std::span<const UnitQuat> pose, const Vec3& point, std::span<double> out) const;
  std::vector<double> evaluate(std::span<const UnitQuat> pose, const Vec3& point) const;
};

/// i.i.d. per-joint rotations: uniform axis, angle uniform in [0, max_angle].
PoseSequence random_pose_sequence(std::size_t joints, std::size_t frames, std::uint64_t seed,
                                  double max_angle = 1.5);

/// Every joint rotation composed with a random rotation whose angle is
/// uniform in [min_angle, max_angle] radians.
PoseSequence perturb_sequence(const PoseSequence& seq, double min_angle, double max_angle,
                              std::uint64_t seed);

/// Linear map from a feature vector to the field output: y = W f + b.
struct Readout {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;  // outputs x inputs, row-major
  std::vector<double> bias;

  Readout() = default;
  Readout(std::size_t in, std::size_t out)
      : inputs(in), outputs(out), weights(in * out, 0.0), bias(out, 0.0) {}

  std::size_t parameter_count() const { return weights.size() + bias.size(); }
  void apply(std::span<const double> feature, std::span<double> out) const;
};

/// f[feature + i] += coef * params[param + i] for i < length.
struct BlockTerm {
  std::uint32_t feature = 0;
  std::uint32_t param = 0;
  std::uint32_t length = 0;
  double coef = 0.0;
};

/// The encoding of one (pose, point) is linear in the embedding parameters
/// once the KNN selection is fixed; the plan holds that linear map.
struct SamplePlan {
  std::vector<BlockTerm> terms;
  std::vector<std::uint32_t> touched;  // ids of regularized embeddings used
};

/// One feature-line embedding inside the flat parameter vector.
struct EmbeddingBlock {
  std::size_t offset = 0;
  LinesShape shape;
};

class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual Variant variant() const = 0;
  virtual std::size_t feature_size() const = 0;
  virtual SamplePlan plan(std::span<const UnitQuat> pose, const Vec3& point) const = 0;

  /// Blocks covered by the TV regularizer; `touched` indexes into this.
  const std::vector<EmbeddingBlock>& tv_blocks() const { return tv_blocks_; }

  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

  /// Features from the current parameters.
  void encode(const SamplePlan& plan, std::span<double> feature) const;

 protected:
  std::vector<double> params_;
  std::vector<EmbeddingBlock> tv_blocks_;
};

/// The full method over a PoseVocab. Embeddings are flattened in
/// (joint, scale, key) order.
class FeatureLinesEncoder final : public Encoder {
 public:
  FeatureLinesEncoder(PoseVocab vocab, InfluenceWeights omega);

  Variant variant() const override { return Variant::kFeatureLines; }
  std::size_t feature_size() const override { return layout_.size(); }
  SamplePlan plan(std::span<const UnitQuat> pose, const Vec3& point) const override;

  std::size_t block_id(std::size_t joint, std::size_t scale, std::size_t key) const;
  /// The vocabulary with the current parameters written back.
  PoseVocab vocab() const;

 private:
  PoseVocab vocab_;  // keys and configuration; embedding values live in params_
  InfluenceWeights omega_;
  FeatureLayout layout_;
  std::vector<std::vector<std::size_t>> first_block_;  // [joint][scale]
};

/// Per-joint keys with a single code of `code_dim` values per key.
class GlobalCodeEncoder final : public Encoder {
 public:
  GlobalCodeEncoder(std::vector<std::vector<UnitQuat>> keys, std::size_t code_dim, std::size_t knn,
                    InfluenceWeights omega, const InitPolicy& init);

  Variant variant() const override { return Variant::kGlobalCodes; }
  std::size_t feature_size() const override { return keys_.size() * code_dim_; }
  SamplePlan plan(std::span<const UnitQuat> pose, const Vec3& point) const override;

  std::size_t code_dim() const { return code_dim_; }

 private:
  std::vector<std::vector<UnitQuat>> keys_;
  std::vector<std::size_t> first_code_;
  std::size_t code_dim_;
  std::size_t knn_;
  InfluenceWeights omega_;
};

/// Mean over joints of rotation_distance: the distance between two whole
/// pose vectors.
double pose_distance(std::span<const UnitQuat> a, std::span<const UnitQuat> b);

/// Keys are whole poses picked by FPS under pose_distance; each key carries
/// feature lines on every scale. There is no joint level, so no gating.
class GlobalPoseEncoder final : public Encoder {
 public:
  GlobalPoseEncoder(std::vector<std::vector<UnitQuat>> key_poses, std::vector<ScaleConfig> scales,
                    BBox bbox, const InitPolicy& init);

  Variant variant() const override { return Variant::kGlobalKeyPoses; }
  std::size_t feature_size() const override { return layout_.size(); }
  SamplePlan plan(std::span<const UnitQuat> pose, const Vec3& point) const override;

  std::size_t key_count() const { return key_poses_.size(); }

 private:
  std::vector<std::vector<UnitQuat>> key_poses_;
  std::vector<ScaleConfig> scales_;
  BBox bbox_;
  FeatureLayout layout_;
};

struct LossOptions {
  double tv_weight = 0.0;
  double data_weight = 1.0;
};

struct PlannedSample {
  SamplePlan plan;
  std::vector<double> target;
};

struct Objective {
  double loss = 0.0;      // data_weight * mse + tv_weight * tv
  double data_mse = 0.0;  // mean over samples and outputs
  double tv = 0.0;        // mean tv_loss over touched embeddings
  // [encoder params | readout weights | readout bias]; empty unless requested
  std::vector<double> gradient;
};

/// Loss and analytic gradient. Samples are split into a fixed number of
/// chunks whose partial gradients are reduced in chunk order, so serial and
/// parallel execution agree bit-for-bit.
Objective evaluate_objective(const Encoder& encoder, const Readout& readout,
                             std::span<const PlannedSample> samples, const LossOptions& options,
                             bool want_gradient,
                             kernels::Execution exec = kernels::Execution::kParallel);

struct FitSample {
  Pose pose;
  Vec3 point{0.0, 0.0, 0.0};
  std::vector<double> target;
};

double fit_loss(const PoseVocab& v, const InfluenceWeights& omega, const Readout& readout,
                std::span<const FitSample> batch, const LossOptions& options = {});

struct EmbeddingGradient {
  std::size_t joint = 0;
  std::size_t scale = 0;
  std::size_t key = 0;
  FeatureLines grad;
};

struct FitGradients {
  double loss = 0.0;
  std::vector<EmbeddingGradient> embeddings;  // only embeddings touched by the batch
  Readout readout;                            // gradient with respect to W and b
};

FitGradients fit_gradients(const PoseVocab& v, const InfluenceWeights& omega,
                           const Readout& readout, std::span<const FitSample> batch,
                           const LossOptions& options = {});

struct FitConfig {
  double learning_rate = 0.5;
  // Multiplier on the learning rate for embedding parameters.
  double embedding_lr_scale = 50.0;
  double momentum = 0.9;
  std::size_t steps = 5000;
  double tv_weight = 0.0;
  std::size_t batch_size = 0;  // 0 = full batch with step halving on increase
  std::uint64_t seed = 0;
  Variant variant = Variant::kFeatureLines;
  std::vector<ScaleConfig> scales{ScaleConfig{LinesShape{{16, 16, 16}, 2}, 16, 4}};
  BBox bbox;
  std::size_t points_per_pose = 16;
  std::size_t heldout_points_per_pose = 8;
  double heldout_min_angle = 5.0 * 3.14159265358979323846 / 180.0;
  double heldout_max_angle = 25.0 * 3.14159265358979323846 / 180.0;
  double init_amplitude = 1e-2;
  double budget_tolerance = 0.05;
  kernels::Execution execution = kernels::Execution::kParallel;
};

struct FitReport {
  Variant variant = Variant::kFeatureLines;
  std::uint64_t seed = 0;
  std::vector<double> loss_curve;  // objective after every step
  std::vector<double> learning_rates;
  double initial_train_mse = 0.0;
  double initial_heldout_mse = 0.0;
  double final_train_mse = 0.0;
  double heldout_mse = 0.0;
  std::size_t parameter_count = 0;
  std::size_t reference_parameter_count = 0;  // full method under the same config
  bool budget_ok = true;
  std::size_t steps_run = 0;
  std::size_t rejected_steps = 0;
  bool diverged = false;
  std::string diagnostic;
  double wall_time_seconds = 0.0;
};

struct FitResult {
  FitReport report;
  std::optional<PoseVocab> vocab;  // fitted vocabulary, feature-lines variant only
  Readout readout;
};

/// Trainable parameter count of the full method for `seq` under `cfg`.
std::size_t reference_parameter_count(const PoseSequence& seq, const FitConfig& cfg,
                                      std::size_t outputs);

FitResult run_fit(const PoseSequence& seq, const SyntheticField& field, const FitConfig& cfg);

}  // namespace posevocab
