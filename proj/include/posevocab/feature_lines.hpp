#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "posevocab/rotation.hpp"

namespace posevocab {

enum class Axis : int { kX = 0, kY = 1, kZ = 2 };

inline constexpr std::array<Axis, 3> kAxes{Axis::kX, Axis::kY, Axis::kZ};

/// Shape shared by every embedding in one vocabulary scale.
struct LinesShape {
  std::array<int, 3> resolution{2, 2, 2};
  int channels = 1;

  std::size_t rows(Axis a) const { return static_cast<std::size_t>(resolution[static_cast<int>(a)]); }
  std::size_t size() const;
  void validate() const;

  friend bool operator==(const LinesShape&, const LinesShape&) = default;
};

/// Read-only view of a single R x D feature line, rows contiguous.
struct LineView {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t channels = 0;

  std::span<const double> row(std::size_t i) const { return data.subspan(i * channels, channels); }
};

/// Three feature lines along x, y and z. Storage is one contiguous buffer in
/// (x, y, z) order, each line row-major R x D.
class FeatureLines {
 public:
  FeatureLines() = default;
  explicit FeatureLines(const LinesShape& shape, double fill = 0.0);
  FeatureLines(const LinesShape& shape, std::vector<double> values);

  const LinesShape& shape() const { return shape_; }
  std::size_t channels() const { return static_cast<std::size_t>(shape_.channels); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  std::size_t line_offset(Axis a) const;
  LineView line(Axis a) const;
  std::span<double> line_values(Axis a);
  std::span<const double> row(Axis a, std::size_t i) const;

  friend bool operator==(const FeatureLines&, const FeatureLines&) = default;

 private:
  LinesShape shape_;
  std::vector<double> values_;
};

/// Per-scale vocabulary hyper-parameters.
struct ScaleConfig {
  LinesShape lines;
  int key_count = 256;
  int knn = 8;

  void validate() const;

  friend bool operator==(const ScaleConfig&, const ScaleConfig&) = default;
};

/// The four-scale configuration: M = 256, D = 4, K = 8 and resolutions
/// 256, 128, 32, 8 (same resolution on all three axes of a scale).
std::vector<ScaleConfig> default_scales();

/// Bracketing rows and interpolation coefficients for one axis. At an exact
/// grid hit `hi == lo` and `w_hi == 0`.
struct AxisStencil {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double w_lo = 1.0;
  double w_hi = 0.0;
};

using SampleStencil = std::array<AxisStencil, 3>;

/// Continuous index u * (R - 1) with u clamped to [0, 1]. Indices within a
/// few ulps of an integer snap to it so that grid nodes are hit exactly.
AxisStencil axis_stencil(std::size_t rows, double u);

void lerp_1d(const LineView& line, double u, std::span<double> out);
std::vector<double> lerp_1d(const LineView& line, double u);

/// Feature of a normalized point: lerp on x, y and z lines concatenated,
/// 3 * D values.
void sample(const FeatureLines& fl, const Vec3& u, std::span<double> out);
std::vector<double> sample(const FeatureLines& fl, const Vec3& u);

/// Coefficients of sample() with respect to line entries. Output channel c of
/// axis a equals w_lo * line_a[lo][c] + w_hi * line_a[hi][c].
SampleStencil sample_gradient(const LinesShape& shape, const Vec3& u);

struct WeightedLines {
  double weight = 0.0;
  const FeatureLines* lines = nullptr;
};

/// Normalized weighted sum sum(w_k F_k) / sum(w_k). A single element is
/// returned unchanged. With an all-zero weight sum the unweighted mean is
/// returned and `degenerate` (when given) is set.
FeatureLines blend(std::span<const WeightedLines> set, bool* degenerate = nullptr);

/// Sum of squared L2 differences of consecutive rows on all three lines.
double tv_loss(const FeatureLines& fl);
double tv_loss(const LinesShape& shape, std::span<const double> values);

FeatureLines tv_loss_gradient(const FeatureLines& fl);

/// grad += scale * d tv_loss / d fl.
void accumulate_tv_gradient(const FeatureLines& fl, double scale, std::span<double> grad);
void accumulate_tv_gradient(const LinesShape& shape, std::span<const double> values, double scale,
                            std::span<double> grad);

}  // namespace posevocab
