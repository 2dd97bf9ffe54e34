#include "posevocab/feature_lines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "posevocab/error.hpp"

namespace posevocab {

std::size_t LinesShape::size() const {
  return static_cast<std::size_t>(resolution[0] + resolution[1] + resolution[2]) *
         static_cast<std::size_t>(channels);
}

void LinesShape::validate() const {
  for (int r : resolution) {
    if (r < 2) throw Error(ErrorCode::kInvalidInput, "feature line resolution must be >= 2");
  }
  if (channels < 1) throw Error(ErrorCode::kInvalidInput, "feature channels must be >= 1");
}

FeatureLines::FeatureLines(const LinesShape& shape, double fill)
    : shape_(shape), values_(shape.size(), fill) {
  shape_.validate();
}

FeatureLines::FeatureLines(const LinesShape& shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
  shape_.validate();
  if (values_.size() != shape_.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "feature line buffer does not match shape");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "feature line entry is not finite");
  }
}

std::size_t FeatureLines::line_offset(Axis a) const {
  std::size_t offset = 0;
  for (int i = 0; i < static_cast<int>(a); ++i) {
    offset += static_cast<std::size_t>(shape_.resolution[i]);
  }
  return offset * channels();
}

LineView FeatureLines::line(Axis a) const {
  const std::size_t rows = shape_.rows(a);
  return LineView{std::span<const double>(values_).subspan(line_offset(a), rows * channels()),
                  rows, channels()};
}

std::span<double> FeatureLines::line_values(Axis a) {
  return std::span<double>(values_).subspan(line_offset(a), shape_.rows(a) * channels());
}

std::span<const double> FeatureLines::row(Axis a, std::size_t i) const {
  return line(a).row(i);
}

void ScaleConfig::validate() const {
  lines.validate();
  if (key_count < 1) throw Error(ErrorCode::kInvalidInput, "key count must be >= 1");
  if (knn < 1) throw Error(ErrorCode::kInvalidInput, "knn must be >= 1");
  if (knn > key_count) {
    throw Error(ErrorCode::kInvalidInput,
                "knn " + std::to_string(knn) + " exceeds key count " + std::to_string(key_count));
  }
}

std::vector<ScaleConfig> default_scales() {
  std::vector<ScaleConfig> scales;
  for (int r : {256, 128, 32, 8}) {
    scales.push_back(ScaleConfig{LinesShape{{r, r, r}, 4}, 256, 8});
  }
  return scales;
}

AxisStencil axis_stencil(std::size_t rows, double u) {
  if (!std::isfinite(u)) throw Error(ErrorCode::kNonFinite, "sample coordinate is not finite");
  const double span = static_cast<double>(rows - 1);
  double t = std::clamp(u, 0.0, 1.0) * span;
  const double nearest = std::nearbyint(t);
  if (std::abs(t - nearest) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, span)) {
    t = nearest;
  }
  const double base = std::floor(t);
  const auto lo = static_cast<std::size_t>(base);
  const double frac = t - base;
  if (frac == 0.0) return AxisStencil{lo, lo, 1.0, 0.0};
  return AxisStencil{lo, lo + 1, 1.0 - frac, frac};
}

namespace {

void apply_stencil(const LineView& line, const AxisStencil& st, std::span<double> out) {
  const auto lo = line.row(st.lo);
  if (st.w_hi == 0.0) {
    std::copy(lo.begin(), lo.end(), out.begin());
    return;
  }
  const auto hi = line.row(st.hi);
  for (std::size_t c = 0; c < line.channels; ++c) {
    out[c] = st.w_lo * lo[c] + st.w_hi * hi[c];
  }
}

}  // namespace

void lerp_1d(const LineView& line, double u, std::span<double> out) {
  if (out.size() != line.channels) {
    throw Error(ErrorCode::kDimensionMismatch, "lerp output size differs from channel count");
  }
  apply_stencil(line, axis_stencil(line.rows, u), out);
}

std::vector<double> lerp_1d(const LineView& line, double u) {
  std::vector<double> out(line.channels);
  lerp_1d(line, u, out);
  return out;
}

SampleStencil sample_gradient(const LinesShape& shape, const Vec3& u) {
  SampleStencil st;
  for (Axis a : kAxes) {
    const int i = static_cast<int>(a);
    st[i] = axis_stencil(shape.rows(a), u[i]);
  }
  return st;
}

void sample(const FeatureLines& fl, const Vec3& u, std::span<double> out) {
  const std::size_t d = fl.channels();
  if (out.size() != 3 * d) {
    throw Error(ErrorCode::kDimensionMismatch, "sample output must hold 3 * channels values");
  }
  const SampleStencil st = sample_gradient(fl.shape(), u);
  for (Axis a : kAxes) {
    const int i = static_cast<int>(a);
    apply_stencil(fl.line(a), st[i], out.subspan(i * d, d));
  }
}

std::vector<double> sample(const FeatureLines& fl, const Vec3& u) {
  std::vector<double> out(3 * fl.channels());
  sample(fl, u, out);
  return out;
}

FeatureLines blend(std::span<const WeightedLines> set, bool* degenerate) {
  if (degenerate != nullptr) *degenerate = false;
  if (set.empty()) throw Error(ErrorCode::kInvalidInput, "blend of an empty set");
  const LinesShape& shape = set.front().lines->shape();
  double total = 0.0;
  for (const auto& item : set) {
    if (item.lines->shape() != shape) {
      throw Error(ErrorCode::kInvalidInput, "blend of feature lines with different shapes");
    }
    if (!std::isfinite(item.weight) || item.weight < 0.0) {
      throw Error(ErrorCode::kInvalidInput, "blend weights must be finite and non-negative");
    }
    total += item.weight;
  }
  if (set.size() == 1) return *set.front().lines;

  std::vector<double> acc(shape.size(), 0.0);
  const bool uniform = total == 0.0;
  if (uniform && degenerate != nullptr) *degenerate = true;
  for (const auto& item : set) {
    const double w = uniform ? 1.0 : item.weight;
    const auto src = item.lines->values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * src[i];
  }
  const double denom = uniform ? static_cast<double>(set.size()) : total;
  for (double& v : acc) v /= denom;
  return FeatureLines(shape, std::move(acc));
}

double tv_loss(const LinesShape& shape, std::span<const double> values) {
  const auto d = static_cast<std::size_t>(shape.channels);
  double loss = 0.0;
  std::size_t base = 0;
  for (Axis a : kAxes) {
    const std::size_t rows = shape.rows(a);
    for (std::size_t i = 0; i + 1 < rows; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = values[base + (i + 1) * d + c] - values[base + i * d + c];
        loss += diff * diff;
      }
    }
    base += rows * d;
  }
  return loss;
}

double tv_loss(const FeatureLines& fl) { return tv_loss(fl.shape(), fl.values()); }

void accumulate_tv_gradient(const LinesShape& shape, std::span<const double> values, double scale,
                            std::span<double> grad) {
  if (grad.size() != shape.size() || values.size() != shape.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "tv gradient buffer does not match shape");
  }
  const auto d = static_cast<std::size_t>(shape.channels);
  std::size_t base = 0;
  for (Axis a : kAxes) {
    const std::size_t rows = shape.rows(a);
    for (std::size_t i = 0; i + 1 < rows; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        const std::size_t lo = base + i * d + c;
        const double g = 2.0 * scale * (values[lo + d] - values[lo]);
        grad[lo] -= g;
        grad[lo + d] += g;
      }
    }
    base += rows * d;
  }
}

void accumulate_tv_gradient(const FeatureLines& fl, double scale, std::span<double> grad) {
  accumulate_tv_gradient(fl.shape(), fl.values(), scale, grad);
}

FeatureLines tv_loss_gradient(const FeatureLines& fl) {
  FeatureLines grad(fl.shape(), 0.0);
  accumulate_tv_gradient(fl, 1.0, grad.values());
  return grad;
}

}  // namespace posevocab
