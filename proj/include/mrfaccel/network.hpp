#pragma once

// Fully connected network description and forward execution of the node
// function y = act(sum_i x_i * w_i + b) in three arithmetic modes:
//   Real       double precision, the training reference
//   FakeQuant  double precision on a quantization grid (QAT forward pass)
//   Integer    integer-only hardware path with fixed-point requantization

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mrfaccel/quant.hpp"

namespace mrfaccel {

enum class Activation { ReLU, Linear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

double relu(double z);
/// Subgradient convention: 0 at z == 0.
double relu_derivative(double z);
double activate(Activation a, double z);
double activation_derivative(Activation a, double z);

struct LayerSpec {
  std::size_t n_inputs = 1;
  std::size_t n_outputs = 1;
  Activation activation = Activation::ReLU;

  bool operator==(const LayerSpec&) const = default;
};

/// Chains widths into layer specs: ReLU on every layer except a Linear last.
std::vector<LayerSpec> chain_layers(std::size_t input_dim, std::span<const std::size_t> widths);

struct NetworkConfig {
  std::size_t input_dim = 0;
  std::vector<LayerSpec> layers;

  static constexpr std::size_t kOutputDim = 2;  // T1, T2

  static NetworkConfig from_widths(std::size_t input_dim, std::span<const std::size_t> widths);
  /// 200 inputs (100-point complex signal, real parts then imaginary parts)
  /// through layers of 32, 64, 32, 32, 32, 16 and 2 nodes.
  static NetworkConfig default_mrf();

  /// Throws Error on broken chaining, wrong activations or a head that is
  /// not 2 wide.
  void validate() const;

  std::vector<std::size_t> widths() const;
  std::size_t parameter_count() const;

  bool operator==(const NetworkConfig&) const = default;
};

// Bit widths of the integer datapath.
inline constexpr int kWeightBits = 8;
inline constexpr int kActivationBits = 8;
inline constexpr int kOutputBits = 16;
inline constexpr int kBiasBits = 32;

/// Row-major (output-index major) dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

struct LayerParams {
  Matrix weights;              // n_outputs x n_inputs
  std::vector<double> biases;  // n_outputs
  /// Quantization of this layer's output activations (calibrated).
  QuantParams output_q{kActivationBits, 1.0, 0};

  bool operator==(const LayerParams&) const = default;
};

struct NetworkParams {
  QuantParams input_q{kActivationBits, 1.0, 0};
  std::vector<LayerParams> layers;

  /// Throws Error unless shapes match cfg.
  void check_against(const NetworkConfig& cfg) const;

  bool operator==(const NetworkParams&) const = default;
};

/// Per-tensor symmetric weight quantization from the current real weights.
QuantParams weight_qparams(const Matrix& w);
/// Biases live at the accumulator scale input_scale * weight_scale.
QuantParams bias_qparams(double input_scale, double weight_scale);

enum class ExecMode { Real, FakeQuant, Integer };

std::string to_string(ExecMode m);

struct ForwardTrace {
  ExecMode mode = ExecMode::Real;
  std::vector<double> input;               // y^0 as seen by layer 0
  std::vector<std::vector<double>> z;      // pre-activations per layer
  std::vector<std::vector<double>> y;      // post-activations per layer
  std::vector<std::vector<std::uint8_t>> pass_mask;  // FakeQuant: 1 where the output quantizer did not clamp
  std::vector<std::vector<std::int64_t>> int_acc;    // Integer: exact accumulators
  std::vector<std::vector<std::int64_t>> int_y;      // Integer: requantized activations

  std::size_t depth() const { return z.size(); }
  std::span<const double> layer_input(std::size_t l) const;
  const std::vector<double>& output() const { return y.back(); }
};

struct NodeResult {
  std::int64_t acc = 0;
  std::int64_t out = 0;
};

/// One node: exact accumulation of x.w + b (must fit 32 bits), activation on
/// the accumulator, then requantization to the output grid.
NodeResult node_forward_int(std::span<const std::int64_t> x, std::span<const std::int64_t> w, std::int64_t b,
                            Activation activation, const FixedPointMultiplier& requant, const QuantParams& out_q);

double node_forward_real(std::span<const double> x, std::span<const double> w, double b, Activation activation);

struct IntegerLayer {
  LayerSpec spec;
  QTensor weights;  // {n_outputs, n_inputs}
  QTensor biases;   // {n_outputs}, accumulator scale
  double acc_scale = 1.0;
  FixedPointMultiplier requant;
  QuantParams output_q;

  bool operator==(const IntegerLayer&) const = default;
};

/// Integer-only parameter set: running it needs no real arithmetic.
struct IntegerModel {
  NetworkConfig config;
  QuantParams input_q;
  std::vector<IntegerLayer> layers;

  bool operator==(const IntegerModel&) const = default;
};

/// Quantized view of (cfg, params) using the activation scales already
/// stored in params.
IntegerModel quantize_model(const NetworkConfig& cfg, const NetworkParams& params);

struct IntegerTrace {
  std::vector<QTensor> activations;              // [0] is the quantized input
  std::vector<std::vector<std::int64_t>> acc;    // per layer
  const QTensor& output() const { return activations.back(); }
};

/// Direct integer execution, layer by layer as matrix-vector products.
IntegerTrace integer_forward(const IntegerModel& model, const QTensor& input);
QTensor quantize_input(const IntegerModel& model, std::span<const double> input);

ForwardTrace network_forward(const NetworkConfig& cfg, const NetworkParams& params, std::span<const double> input,
                             ExecMode mode);
/// Integer-mode trace of an exported model; z and y hold dequantized values.
ForwardTrace network_forward(const IntegerModel& model, std::span<const double> input);

}  // namespace mrfaccel
