#pragma once

/*
 * FPGA cost model for the training accelerator.
 *
 * Scheduling: P physical node units evaluate a layer in ceil(n / P) batches
 * of cycles_per_node cycles each. The backward pass is calibrated against a
 * reference batch count (the default architecture, 14 batches at P = 16):
 *
 *   backward = ceil(cycles_per_backprop_module * batches * k_bp)
 *   k_bp     = backward_cycles_total / (cycles_per_backprop_module * reference_batches)
 *
 * so the reference architecture reproduces backward_cycles_total exactly.
 *
 * Resources: core = P * node_unit + backprop_unit + weight memory, plus
 * the PCIe block when requested. Weight memory is counted in BRAM36 blocks
 * of 4.5 KiB holding 8-bit weights and 32-bit biases.
 */

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <nlohmann/json_fwd.hpp>

#include "mrfaccel/network.hpp"

namespace mrfaccel {

using Rational = boost::multiprecision::cpp_rational;

struct ResourceVector {
  std::int64_t luts = 0;
  std::int64_t dsps = 0;
  std::int64_t ffs = 0;
  std::int64_t brams = 0;

  ResourceVector& operator+=(const ResourceVector& o);
  friend ResourceVector operator+(ResourceVector a, const ResourceVector& b) { return a += b; }
  friend ResourceVector operator-(const ResourceVector& a, const ResourceVector& b) {
    return {a.luts - b.luts, a.dsps - b.dsps, a.ffs - b.ffs, a.brams - b.brams};
  }
  friend ResourceVector operator*(std::int64_t k, const ResourceVector& r) {
    return {k * r.luts, k * r.dsps, k * r.ffs, k * r.brams};
  }
  bool operator==(const ResourceVector&) const = default;
};

struct HardwareProfile {
  double clock_mhz = 200.0;
  std::size_t parallel_nodes = 16;
  std::size_t cycles_per_node = 4;
  std::size_t cycles_per_backprop_module = 3;
  std::size_t backward_cycles_total = 104;
  std::size_t backward_reference_batches = 14;

  ResourceVector node_unit_cost{6'500, 250, 6'600, 0};
  ResourceVector backprop_unit_cost{41'000, 1'000, 40'400, 0};
  ResourceVector pcie_cost{83'000, 0, 148'000, 150};
  ResourceVector board{1'700'000, 12'000, 3'400'000, 2'600};  // ALVEO U250

  std::size_t bram_bytes = 4'608;  // BRAM36 = 4.5 KiB
  int weight_bits = kWeightBits;
  int bias_bits = kBiasBits;

  /// Throws Error on non-positive counts or clock.
  void validate() const;

  /// k_bp as an exact fraction.
  Rational backprop_invocations_per_batch() const;

  bool operator==(const HardwareProfile&) const = default;
};

void to_json(nlohmann::json& j, const HardwareProfile& hp);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, HardwareProfile& hp);
HardwareProfile load_hardware_profile(const std::string& path);

struct CycleReport {
  std::vector<std::size_t> layer_batches;
  std::uint64_t forward_cycles = 0;
  std::uint64_t backward_cycles = 0;
  std::uint64_t cycles_per_sample = 0;
};

std::size_t batch_count(std::size_t n_outputs, std::size_t parallel_nodes);

CycleReport schedule_forward(std::span<const LayerSpec> layers, const HardwareProfile& hp);
CycleReport schedule_backward(std::span<const LayerSpec> layers, const HardwareProfile& hp);
/// Forward and backward combined.
CycleReport schedule(std::span<const LayerSpec> layers, const HardwareProfile& hp);
CycleReport schedule(const NetworkConfig& cfg, const HardwareProfile& hp);

struct TrainingTime {
  Rational seconds;
  std::uint64_t total_cycles = 0;

  double approx_seconds() const { return seconds.convert_to<double>(); }
  std::string exact() const { return seconds.str(); }
};

TrainingTime estimate_training_time(std::uint64_t n_samples, const CycleReport& cycles, const HardwareProfile& hp);
TrainingTime estimate_training_time(std::uint64_t n_samples, const NetworkConfig& cfg, const HardwareProfile& hp);

struct ResourceReport {
  ResourceVector core;
  ResourceVector total;  // core plus PCIe when included
  bool includes_pcie = false;
  ResourceVector board;

  double utilization_percent(std::int64_t used, std::int64_t capacity) const;
  double lut_percent() const { return utilization_percent(total.luts, board.luts); }
  double dsp_percent() const { return utilization_percent(total.dsps, board.dsps); }
  double ff_percent() const { return utilization_percent(total.ffs, board.ffs); }
  double bram_percent() const { return utilization_percent(total.brams, board.brams); }
  bool fits() const;
};

std::int64_t weight_memory_brams(std::span<const LayerSpec> layers, const HardwareProfile& hp);
ResourceReport estimate_resources(std::span<const LayerSpec> layers, const HardwareProfile& hp, bool include_pcie);
ResourceReport estimate_resources(const NetworkConfig& cfg, const HardwareProfile& hp, bool include_pcie);

nlohmann::json cycle_report_json(const CycleReport& c);
nlohmann::json resource_report_json(const ResourceReport& r);
nlohmann::json training_time_json(const TrainingTime& t);
std::string estimate_table(const CycleReport& c, const ResourceReport& r, const TrainingTime* t);

/// Node evaluation hook for the scheduled executor.
using NodeKernel = std::function<NodeResult(std::span<const std::int64_t> x, std::span<const std::int64_t> w,
                                            std::int64_t b, Activation activation,
                                            const FixedPointMultiplier& requant, const QuantParams& out_q)>;

struct ScheduledResult {
  QTensor output;
  std::vector<QTensor> activations;  // per layer
  CycleReport cycles;                 // forward part, as incurred
};

/// Runs the integer forward pass through the semi-parallel schedule: at most
/// parallel_nodes node evaluations per batch slot, layers in order. The
/// default kernel is node_forward_int.
ScheduledResult run_scheduled_forward(const IntegerModel& model, const QTensor& input, const HardwareProfile& hp,
                                      const NodeKernel& kernel = node_forward_int);

struct Mismatch {
  std::size_t trial = 0;
  std::size_t layer = 0;
  std::size_t node = 0;
  std::int64_t scheduled = 0;
  std::int64_t direct = 0;
};

struct VerifyReport {
  std::size_t trials = 0;
  std::size_t mismatches = 0;
  std::size_t cycle_mismatches = 0;
  std::optional<Mismatch> first_mismatch;
  bool passed() const { return mismatches == 0 && cycle_mismatches == 0; }
};

/// Compares scheduled and direct integer execution on one input; returns
/// the first differing activation in layer order.
std::optional<Mismatch> compare_paths(const IntegerModel& model, const QTensor& input, const HardwareProfile& hp,
                                      const NodeKernel& kernel = node_forward_int);

/// n_trials random inputs through a fixed model.
VerifyReport verify_model(const IntegerModel& model, std::size_t n_trials, std::uint64_t seed,
                          const HardwareProfile& hp, const NodeKernel& kernel = node_forward_int);
/// n_trials random (network, input) pairs: random widths, weights and
/// calibration for every trial.
VerifyReport verify_random_networks(std::size_t n_trials, std::uint64_t seed, const HardwareProfile& hp,
                                    const NodeKernel& kernel = node_forward_int);

}  // namespace mrfaccel
