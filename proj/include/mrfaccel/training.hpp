#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mrfaccel/network.hpp"

namespace mrfaccel {

/// Supervised regression pairs in flat row-major storage.
struct RegressionSet {
  std::size_t input_dim = 0;
  std::size_t target_dim = 0;
  std::vector<double> inputs;
  std::vector<double> targets;

  std::size_t size() const { return input_dim == 0 ? 0 : inputs.size() / input_dim; }
  bool empty() const { return size() == 0; }
  std::span<const double> input(std::size_t i) const { return {inputs.data() + i * input_dim, input_dim}; }
  std::span<const double> target(std::size_t i) const { return {targets.data() + i * target_dim, target_dim}; }
  void push_back(std::span<const double> x, std::span<const double> t);
  /// First n samples (or all of them).
  RegressionSet head(std::size_t n) const;
};

struct Gradients {
  std::vector<Matrix> dW;
  std::vector<std::vector<double>> db;
  std::vector<std::vector<double>> delta;

  static Gradients zeros_like(const NetworkConfig& cfg);
  void accumulate(const Gradients& other);
  void scale(double factor);
};

enum class TrainMode { Float, Qat };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t epochs = 500;
  std::size_t steps_per_epoch = 1000;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Float;
  /// Leading training samples used to calibrate activation scales in QAT.
  std::size_t calibration_samples = 256;

  void validate() const;
};

double mse_loss(std::span<const double> pred, std::span<const double> target);

/// (2/n) * (y_L - target) for MSE through the linear output layer.
std::vector<double> output_delta(const ForwardTrace& trace, std::span<const double> target);

/// delta_l = (W_{l+1}^T delta_{l+1}) o act'(z_l), dW_l = delta_l y_{l-1}^T,
/// db_l = delta_l. For fake-quant traces the recursion runs through the
/// quantized weights and the straight-through masks of the trace.
Gradients backprop(const NetworkConfig& cfg, const NetworkParams& params, const ForwardTrace& trace,
                   std::span<const double> delta_out);

/// w -= lr * dW, b -= lr * db on the real shadow parameters.
void sgd_step(NetworkParams& params, const Gradients& grads, double learning_rate);

/// Uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
NetworkParams init_params(const NetworkConfig& cfg, std::uint64_t seed);

/// Sets input and per-layer output quantization from max-abs statistics of
/// the given inputs. Layers are calibrated in order, each one seeing the
/// fake-quantized outputs of the layers already calibrated.
void calibrate(const NetworkConfig& cfg, NetworkParams& params, const RegressionSet& calibration);

struct TrainResult {
  NetworkParams params;
  std::vector<double> epoch_loss;  // mean per-sample loss per epoch
};

/// Throws Error on an empty dataset and DivergenceError on a non-finite loss.
TrainResult train(const NetworkConfig& cfg, const TrainConfig& tcfg, const RegressionSet& data);
TrainResult train(const NetworkConfig& cfg, const TrainConfig& tcfg, const RegressionSet& data,
                  NetworkParams initial);

/// Calibrates on the given inputs and quantizes; the result runs in pure
/// integer arithmetic.
IntegerModel export_integer_model(const NetworkConfig& cfg, const NetworkParams& params,
                                  const RegressionSet& calibration);

std::string loss_history_csv(std::span<const double> epoch_loss);

}  // namespace mrfaccel
