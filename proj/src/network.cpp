#include "mrfaccel/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mrfaccel/error.hpp"

namespace mrfaccel {

namespace {

constexpr std::int64_t kAccMin = std::numeric_limits<std::int32_t>::min();
constexpr std::int64_t kAccMax = std::numeric_limits<std::int32_t>::max();

void check_acc_width(std::int64_t acc) {
  if (acc < kAccMin || acc > kAccMax) {
    throw Error("node: accumulator " + std::to_string(acc) + " exceeds the 32-bit accumulator width");
  }
}

std::int64_t activate_int(Activation a, std::int64_t acc) {
  return a == Activation::ReLU ? std::max<std::int64_t>(0, acc) : acc;
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::ReLU ? "relu" : "linear"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "linear") return Activation::Linear;
  throw Error("unknown activation '" + s + "'");
}

std::string to_string(ExecMode m) {
  switch (m) {
    case ExecMode::Real: return "real";
    case ExecMode::FakeQuant: return "fake-quant";
    case ExecMode::Integer: return "integer";
  }
  return "?";
}

double relu(double z) { return z > 0.0 ? z : 0.0; }
double relu_derivative(double z) { return z > 0.0 ? 1.0 : 0.0; }

double activate(Activation a, double z) { return a == Activation::ReLU ? relu(z) : z; }
double activation_derivative(Activation a, double z) { return a == Activation::ReLU ? relu_derivative(z) : 1.0; }

std::vector<LayerSpec> chain_layers(std::size_t input_dim, std::span<const std::size_t> widths) {
  std::vector<LayerSpec> layers;
  std::size_t fan_in = input_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const bool last = i + 1 == widths.size();
    layers.push_back({fan_in, widths[i], last ? Activation::Linear : Activation::ReLU});
    fan_in = widths[i];
  }
  return layers;
}

NetworkConfig NetworkConfig::from_widths(std::size_t input_dim, std::span<const std::size_t> widths) {
  NetworkConfig cfg;
  cfg.input_dim = input_dim;
  cfg.layers = chain_layers(input_dim, widths);
  cfg.validate();
  return cfg;
}

NetworkConfig NetworkConfig::default_mrf() {
  static constexpr std::size_t kWidths[] = {32, 64, 32, 32, 32, 16, 2};
  return from_widths(200, kWidths);
}

void NetworkConfig::validate() const {
  if (input_dim == 0) throw Error("network config: input_dim must be positive");
  if (layers.empty()) throw Error("network config: at least one layer required");
  std::size_t fan_in = input_dim;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& s = layers[l];
    if (s.n_inputs == 0 || s.n_outputs == 0) {
      throw Error("network config: layer " + std::to_string(l) + " has an empty dimension");
    }
    if (s.n_inputs != fan_in) {
      throw Error("network config: layer " + std::to_string(l) + " expects " + std::to_string(s.n_inputs) +
                  " inputs but receives " + std::to_string(fan_in));
    }
    const bool last = l + 1 == layers.size();
    if (last && s.activation != Activation::Linear) throw Error("network config: output layer must be linear");
    if (!last && s.activation != Activation::ReLU) {
      throw Error("network config: hidden layer " + std::to_string(l) + " must use relu");
    }
    fan_in = s.n_outputs;
  }
  if (layers.back().n_outputs != kOutputDim) {
    throw Error("network config: output layer must have 2 nodes (T1, T2)");
  }
}

std::vector<std::size_t> NetworkConfig::widths() const {
  std::vector<std::size_t> w;
  for (const auto& s : layers) w.push_back(s.n_outputs);
  return w;
}

std::size_t NetworkConfig::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : layers) n += s.n_outputs * (s.n_inputs + 1);
  return n;
}

void NetworkParams::check_against(const NetworkConfig& cfg) const {
  if (layers.size() != cfg.layers.size()) {
    throw Error("params: " + std::to_string(layers.size()) + " layers but config has " +
                std::to_string(cfg.layers.size()));
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& p = layers[l];
    const auto& s = cfg.layers[l];
    if (p.weights.rows != s.n_outputs || p.weights.cols != s.n_inputs ||
        p.weights.data.size() != s.n_outputs * s.n_inputs || p.biases.size() != s.n_outputs) {
      throw Error("params: layer " + std::to_string(l) + " shape does not match config");
    }
  }
}

QuantParams weight_qparams(const Matrix& w) { return symmetric_params(max_abs(w.data), kWeightBits); }

QuantParams bias_qparams(double input_scale, double weight_scale) {
  QuantParams p{kBiasBits, input_scale * weight_scale, 0};
  p.validate();
  return p;
}

std::span<const double> ForwardTrace::layer_input(std::size_t l) const {
  return l == 0 ? std::span<const double>(input) : std::span<const double>(y[l - 1]);
}

NodeResult node_forward_int(std::span<const std::int64_t> x, std::span<const std::int64_t> w, std::int64_t b,
                            Activation activation, const FixedPointMultiplier& requant, const QuantParams& out_q) {
  if (x.size() != w.size()) {
    throw Error("node: " + std::to_string(x.size()) + " inputs but " + std::to_string(w.size()) + " weights");
  }
  std::int64_t acc = b;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::int64_t product = 0;
    if (__builtin_mul_overflow(x[i], w[i], &product) || __builtin_add_overflow(acc, product, &acc)) {
      throw Error("node: accumulator overflow");
    }
  }
  check_acc_width(acc);
  NodeResult r;
  r.acc = acc;
  r.out = requantize(activate_int(activation, acc), requant, out_q);
  return r;
}

double node_forward_real(std::span<const double> x, std::span<const double> w, double b, Activation activation) {
  if (x.size() != w.size()) {
    throw Error("node: " + std::to_string(x.size()) + " inputs but " + std::to_string(w.size()) + " weights");
  }
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += x[i] * w[i];
  return activate(activation, z + b);
}

IntegerModel quantize_model(const NetworkConfig& cfg, const NetworkParams& params) {
  cfg.validate();
  params.check_against(cfg);
  params.input_q.validate();
  IntegerModel model;
  model.config = cfg;
  model.input_q = params.input_q;
  double in_scale = params.input_q.scale;
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    const LayerParams& p = params.layers[l];
    const QuantParams wq = weight_qparams(p.weights);
    const QuantParams bq = bias_qparams(in_scale, wq.scale);
    p.output_q.validate();
    IntegerLayer layer;
    layer.spec = cfg.layers[l];
    layer.weights = quantize(p.weights.data, {p.weights.rows, p.weights.cols}, wq);
    layer.biases = quantize(p.biases, bq);
    layer.acc_scale = bq.scale;
    layer.output_q = p.output_q;
    layer.requant = FixedPointMultiplier::from_ratio(bq.scale / p.output_q.scale);
    model.layers.push_back(std::move(layer));
    in_scale = p.output_q.scale;
  }
  return model;
}

QTensor quantize_input(const IntegerModel& model, std::span<const double> input) {
  if (input.size() != model.config.input_dim) {
    throw Error("forward: input has " + std::to_string(input.size()) + " values, expected " +
                std::to_string(model.config.input_dim));
  }
  return quantize(input, model.input_q);
}

IntegerTrace integer_forward(const IntegerModel& model, const QTensor& input) {
  if (input.size() != model.config.input_dim || input.qparams() != model.input_q) {
    throw Error("integer forward: input tensor does not match the model input quantization");
  }
  IntegerTrace trace;
  trace.activations.push_back(input);
  for (const IntegerLayer& layer : model.layers) {
    const std::vector<std::int64_t>& x = trace.activations.back().values();
    const std::size_t n_out = layer.spec.n_outputs;
    const std::size_t n_in = layer.spec.n_inputs;
    if (x.size() != n_in) throw Error("integer forward: layer width mismatch");
    const auto& w = layer.weights.values();

    // Column sweep: acc += W[:, j] * x[j].
    std::vector<std::int64_t> acc(layer.biases.values());
    for (std::size_t j = 0; j < n_in; ++j) {
      for (std::size_t i = 0; i < n_out; ++i) acc[i] += w[i * n_in + j] * x[j];
    }
    std::vector<std::int64_t> out(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
      check_acc_width(acc[i]);
      out[i] = requantize(activate_int(layer.spec.activation, acc[i]), layer.requant, layer.output_q);
    }
    trace.acc.push_back(std::move(acc));
    trace.activations.emplace_back(std::vector<std::size_t>{n_out}, std::move(out), layer.output_q);
  }
  return trace;
}

ForwardTrace network_forward(const IntegerModel& model, std::span<const double> input) {
  const IntegerTrace it = integer_forward(model, quantize_input(model, input));
  ForwardTrace trace;
  trace.mode = ExecMode::Integer;
  trace.input = dequantize(it.activations.front());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    std::vector<double> z;
    z.reserve(it.acc[l].size());
    for (std::int64_t a : it.acc[l]) z.push_back(static_cast<double>(a) * model.layers[l].acc_scale);
    trace.z.push_back(std::move(z));
    trace.y.push_back(dequantize(it.activations[l + 1]));
    trace.int_acc.push_back(it.acc[l]);
    trace.int_y.push_back(it.activations[l + 1].values());
  }
  return trace;
}

ForwardTrace network_forward(const NetworkConfig& cfg, const NetworkParams& params, std::span<const double> input,
                             ExecMode mode) {
  if (mode == ExecMode::Integer) return network_forward(quantize_model(cfg, params), input);

  params.check_against(cfg);
  if (input.size() != cfg.input_dim) {
    throw Error("forward: input has " + std::to_string(input.size()) + " values, expected " +
                std::to_string(cfg.input_dim));
  }
  const bool fq = mode == ExecMode::FakeQuant;
  ForwardTrace trace;
  trace.mode = mode;
  trace.input = fq ? fake_quantize(input, params.input_q) : std::vector<double>(input.begin(), input.end());

  double in_scale = params.input_q.scale;
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    const LayerSpec& spec = cfg.layers[l];
    const LayerParams& p = params.layers[l];
    std::span<const double> x = trace.layer_input(l);

    std::vector<double> w_eff;
    std::vector<double> b_eff;
    if (fq) {
      const QuantParams wq = weight_qparams(p.weights);
      w_eff = fake_quantize(p.weights.data, wq);
      b_eff = fake_quantize(p.biases, bias_qparams(in_scale, wq.scale));
    }
    const std::vector<double>& w = fq ? w_eff : p.weights.data;
    const std::vector<double>& b = fq ? b_eff : p.biases;

    std::vector<double> z(spec.n_outputs);
    std::vector<double> y(spec.n_outputs);
    std::vector<std::uint8_t> mask;
    if (fq) mask.resize(spec.n_outputs);
    for (std::size_t i = 0; i < spec.n_outputs; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < spec.n_inputs; ++j) acc += w[i * spec.n_inputs + j] * x[j];
      z[i] = acc + b[i];
      const double a = activate(spec.activation, z[i]);
      if (fq) {
        y[i] = fake_quantize_value(a, p.output_q);
        mask[i] = within_clamp_range(a, p.output_q) ? 1 : 0;
      } else {
        y[i] = a;
      }
    }
    trace.z.push_back(std::move(z));
    trace.y.push_back(std::move(y));
    if (fq) trace.pass_mask.push_back(std::move(mask));
    in_scale = p.output_q.scale;
  }
  return trace;
}

}  // namespace mrfaccel
