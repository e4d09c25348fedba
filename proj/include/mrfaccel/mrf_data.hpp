#pragma once

/*
 * Surrogate MRF signals, dataset persistence and error metrics.
 *
 * Signal model (k = 1..L):
 *   s_k = exp(i*phase) * (1 - exp(-k*TR/T1)) * exp(-k*TE/T2)
 *
 * Noise convention: circular complex Gaussian whose RMS magnitude is
 * rms(signal) / snr, i.e. each of the real and imaginary components has
 * standard deviation rms(signal) / (snr * sqrt(2)), where
 * rms(signal) = sqrt(mean_k |s_k|^2).
 *
 * Dataset file (.qmrf), all little-endian:
 *   char[4]  magic "QMRF"
 *   u32      version (1)
 *   u64      n
 *   u32      L
 *   f64 x 8  t1 min/max, t2 min/max, snr min/max, phase min/max
 *   u64      seed
 *   n records of f32 [re_1..re_L, im_1..im_L, t1_ms, t2_ms]
 */

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mrfaccel/rng.hpp"
#include "mrfaccel/training.hpp"

namespace mrfaccel {

struct SequenceTiming {
  double tr_ms = 10.0;
  double te_ms = 2.0;
};

std::vector<std::complex<double>> signal_model(double t1_ms, double t2_ms, double phase, std::size_t length,
                                               SequenceTiming timing = {});

/// An infinite snr leaves the signal untouched and draws nothing.
void add_noise(std::span<std::complex<double>> signal, double snr, rng::Engine& g);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

struct DatasetSpec {
  std::size_t n_samples = 50'000;
  Range t1_ms{100.0, 4000.0};
  Range t2_ms{10.0, 2000.0};
  Range snr{20.0, 100.0};
  Range phase{0.0, 2.0 * std::numbers::pi};
  std::size_t signal_length = 100;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

struct TrainSample {
  std::vector<float> signal;  // real parts then imaginary parts
  float t1_ms = 0.0f;
  float t2_ms = 0.0f;

  bool operator==(const TrainSample&) const = default;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<TrainSample> samples;

  std::size_t size() const { return samples.size(); }
  bool operator==(const Dataset&) const = default;
};

/// Sample i depends only on (spec, i).
TrainSample generate_sample(const DatasetSpec& spec, std::size_t index);
/// Generates samples in parallel across indices.
Dataset generate_dataset(const DatasetSpec& spec);

std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::string_view bytes);
/// Writes to a sibling temporary and renames, so failures leave no partial file.
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

/// Targets are scaled into [0, 1] by these maxima before training.
struct TargetScaling {
  double t1_max_ms = 4000.0;
  double t2_max_ms = 2000.0;
};

RegressionSet to_regression_set(const Dataset& ds, TargetScaling scaling = {});

struct T1T2 {
  double t1_ms = 0.0;
  double t2_ms = 0.0;
};

T1T2 denormalize(std::span<const double> output, TargetScaling scaling = {});
std::vector<T1T2> targets_of(const Dataset& ds);

struct ParamMetrics {
  double mape_percent = 0.0;
  double mpe_percent = 0.0;  // mean of (pred - true) / true
  double rmse_ms = 0.0;
};

struct MetricsReport {
  ParamMetrics t1;
  ParamMetrics t2;
  std::size_t count = 0;
};

MetricsReport evaluate(std::span<const T1T2> preds, std::span<const T1T2> targets);

std::string metrics_json(const MetricsReport& m);
/// Side-by-side table; a second report fills the "Quantized" columns.
std::string metrics_table(const MetricsReport& original, const MetricsReport* quantized = nullptr);

}  // namespace mrfaccel
