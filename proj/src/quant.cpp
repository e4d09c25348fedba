#include "mrfaccel/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

#include "mrfaccel/error.hpp"

namespace mrfaccel {

void QuantParams::validate() const {
  if (bits != 8 && bits != 16 && bits != 32) {
    throw Error("quant params: unsupported bit width " + std::to_string(bits));
  }
  if (!std::isfinite(scale) || scale <= 0.0) {
    throw Error("quant params: scale must be finite and positive");
  }
  if (zero_point < qmin() || zero_point > qmax()) {
    throw Error("quant params: zero_point outside the signed range");
  }
}

QuantParams symmetric_params(double max_abs, int bits) {
  QuantParams p;
  p.bits = bits;
  p.scale = (max_abs > 0.0 && std::isfinite(max_abs)) ? max_abs / static_cast<double>(qmax_for(bits)) : 1.0;
  p.validate();
  return p;
}

QTensor::QTensor(std::vector<std::size_t> shape, std::vector<std::int64_t> values, QuantParams qparams)
    : shape_(std::move(shape)), values_(std::move(values)), qparams_(qparams) {
  qparams_.validate();
  const std::size_t expected =
      std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (expected != values_.size()) {
    throw Error("qtensor: value count " + std::to_string(values_.size()) + " does not match shape product " +
                std::to_string(expected));
  }
  for (std::int64_t v : values_) {
    if (v < qparams_.qmin() || v > qparams_.qmax()) {
      throw Error("qtensor: value " + std::to_string(v) + " outside " + std::to_string(qparams_.bits) +
                  "-bit range");
    }
  }
}

double round_half_away(double x) { return std::round(x); }

std::int64_t quantize_value(double x, const QuantParams& p) {
  if (!std::isfinite(x)) {
    throw Error("quantize: non-finite input value");
  }
  // Clamp in the real domain first so the integer conversion cannot overflow.
  double r = round_half_away(x / p.scale) + static_cast<double>(p.zero_point);
  r = std::clamp(r, static_cast<double>(p.qmin()), static_cast<double>(p.qmax()));
  return static_cast<std::int64_t>(r);
}

QTensor quantize(std::span<const double> t, const QuantParams& p) { return quantize(t, {t.size()}, p); }

QTensor quantize(std::span<const double> t, std::vector<std::size_t> shape, const QuantParams& p) {
  p.validate();
  std::vector<std::int64_t> values;
  values.reserve(t.size());
  for (double x : t) values.push_back(quantize_value(x, p));
  return QTensor(std::move(shape), std::move(values), p);
}

double dequantize_value(std::int64_t q, const QuantParams& p) {
  return static_cast<double>(q - p.zero_point) * p.scale;
}

std::vector<double> dequantize(const QTensor& q) {
  std::vector<double> out;
  out.reserve(q.size());
  for (std::int64_t v : q.values()) out.push_back(dequantize_value(v, q.qparams()));
  return out;
}

double fake_quantize_value(double x, const QuantParams& p) { return dequantize_value(quantize_value(x, p), p); }

std::vector<double> fake_quantize(std::span<const double> t, const QuantParams& p) {
  p.validate();
  std::vector<double> out;
  out.reserve(t.size());
  for (double x : t) out.push_back(fake_quantize_value(x, p));
  return out;
}

bool within_clamp_range(double x, const QuantParams& p) {
  const double lo = static_cast<double>(p.qmin() - p.zero_point) * p.scale;
  const double hi = static_cast<double>(p.qmax() - p.zero_point) * p.scale;
  return x >= lo && x <= hi;
}

FixedPointMultiplier FixedPointMultiplier::from_ratio(double ratio) {
  if (!std::isfinite(ratio) || ratio <= 0.0) {
    throw Error("requantize: scale ratio must be finite and positive");
  }
  int exponent = 0;
  const double fraction = std::frexp(ratio, &exponent);  // [0.5, 1)
  auto mantissa = static_cast<std::int64_t>(round_half_away(fraction * 2147483648.0));
  if (mantissa == (std::int64_t{1} << 31)) {
    mantissa >>= 1;
    ++exponent;
  }
  const int shift = 31 - exponent;
  if (shift < 0 || shift > 62) {
    throw Error("requantize: scale ratio " + std::to_string(ratio) + " not representable as a fixed-point multiplier");
  }
  FixedPointMultiplier m;
  m.mantissa = static_cast<std::int32_t>(mantissa);
  m.shift = shift;
  return m;
}

std::int64_t FixedPointMultiplier::apply(std::int64_t acc) const {
  if (acc < std::numeric_limits<std::int32_t>::min() || acc > std::numeric_limits<std::int32_t>::max()) {
    throw Error("requantize: accumulator exceeds 32 bits");
  }
  const std::int64_t product = acc * static_cast<std::int64_t>(mantissa);
  if (shift == 0) return product;
  const std::int64_t half = std::int64_t{1} << (shift - 1);
  if (product >= 0) return (product + half) >> shift;
  return -((-product + half) >> shift);
}

double FixedPointMultiplier::value() const { return std::ldexp(static_cast<double>(mantissa), -shift); }

std::int64_t requantize(std::int64_t acc, const FixedPointMultiplier& m, const QuantParams& out) {
  const std::int64_t r = m.apply(acc) + out.zero_point;
  return std::clamp(r, out.qmin(), out.qmax());
}

std::int64_t requantize(std::int64_t acc, double in_scale, const QuantParams& out) {
  out.validate();
  return requantize(acc, FixedPointMultiplier::from_ratio(in_scale / out.scale), out);
}

}  // namespace mrfaccel
