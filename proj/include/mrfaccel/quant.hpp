#pragma once

/*
 * Integer tensors and the quantize / dequantize / requantize primitives.
 *
 * Scheme: symmetric per-tensor quantization (zero_point = 0 by default),
 *   q = clamp(round(x / scale) + zero_point, qmin, qmax)
 *   x' = (q - zero_point) * scale
 * with rounding half away from zero everywhere.
 *
 * Requantization uses a fixed-point multiplier (31-bit normalized mantissa
 * held in an int32 plus a right shift) so integer results are reproducible
 * bit for bit on every platform.
 */

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace mrfaccel {

constexpr std::int64_t qmin_for(int bits) { return -(std::int64_t{1} << (bits - 1)); }
constexpr std::int64_t qmax_for(int bits) { return (std::int64_t{1} << (bits - 1)) - 1; }

struct QuantParams {
  int bits = 8;
  double scale = 1.0;
  std::int64_t zero_point = 0;

  std::int64_t qmin() const { return qmin_for(bits); }
  std::int64_t qmax() const { return qmax_for(bits); }

  /// Throws Error unless bits is 8/16/32, scale is finite and positive and
  /// zero_point fits the signed range.
  void validate() const;

  bool operator==(const QuantParams&) const = default;
};

/// Symmetric params whose range just covers max_abs. A zero range falls back
/// to scale 1 so the tensor still quantizes to all zeros.
QuantParams symmetric_params(double max_abs, int bits);

class QTensor {
 public:
  QTensor() = default;
  /// Throws Error if the value count does not match the shape or any value
  /// lies outside [qmin, qmax].
  QTensor(std::vector<std::size_t> shape, std::vector<std::int64_t> values, QuantParams qparams);

  const std::vector<std::size_t>& shape() const { return shape_; }
  const std::vector<std::int64_t>& values() const { return values_; }
  const QuantParams& qparams() const { return qparams_; }
  std::size_t size() const { return values_.size(); }
  std::int64_t operator[](std::size_t i) const { return values_[i]; }

  bool operator==(const QTensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<std::int64_t> values_;
  QuantParams qparams_;
};

/// std::round semantics: ties go away from zero.
double round_half_away(double x);

std::int64_t quantize_value(double x, const QuantParams& p);
QTensor quantize(std::span<const double> t, const QuantParams& p);
QTensor quantize(std::span<const double> t, std::vector<std::size_t> shape, const QuantParams& p);

double dequantize_value(std::int64_t q, const QuantParams& p);
std::vector<double> dequantize(const QTensor& q);

double fake_quantize_value(double x, const QuantParams& p);
std::vector<double> fake_quantize(std::span<const double> t, const QuantParams& p);

/// Straight-through estimator mask: true when x lies inside the quantizer's
/// representable interval, i.e. the gradient passes unchanged.
bool within_clamp_range(double x, const QuantParams& p);

/// ratio ~= mantissa * 2^-shift with mantissa in [2^30, 2^31).
struct FixedPointMultiplier {
  std::int32_t mantissa = 1 << 30;
  int shift = 30;

  /// Throws Error when ratio is non-finite, non-positive or outside
  /// [2^-32, 2^31), where either the shift or the 64-bit product overflows.
  static FixedPointMultiplier from_ratio(double ratio);

  /// round_half_away(acc * mantissa / 2^shift) in exact integer arithmetic.
  /// acc must fit in 32 bits.
  std::int64_t apply(std::int64_t acc) const;

  double value() const;

  bool operator==(const FixedPointMultiplier&) const = default;
};

std::int64_t requantize(std::int64_t acc, const FixedPointMultiplier& m, const QuantParams& out);
std::int64_t requantize(std::int64_t acc, double in_scale, const QuantParams& out);

}  // namespace mrfaccel
