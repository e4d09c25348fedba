#include "mrfaccel/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mrfaccel/error.hpp"
#include "mrfaccel/rng.hpp"

namespace mrfaccel {

namespace {

// Stream ids carved out of the training seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kSampleStream = 2;

}  // namespace

void RegressionSet::push_back(std::span<const double> x, std::span<const double> t) {
  if (x.size() != input_dim || t.size() != target_dim) throw Error("regression set: sample shape mismatch");
  inputs.insert(inputs.end(), x.begin(), x.end());
  targets.insert(targets.end(), t.begin(), t.end());
}

RegressionSet RegressionSet::head(std::size_t n) const {
  n = std::min(n, size());
  RegressionSet out;
  out.input_dim = input_dim;
  out.target_dim = target_dim;
  out.inputs.assign(inputs.begin(), inputs.begin() + static_cast<std::ptrdiff_t>(n * input_dim));
  out.targets.assign(targets.begin(), targets.begin() + static_cast<std::ptrdiff_t>(n * target_dim));
  return out;
}

Gradients Gradients::zeros_like(const NetworkConfig& cfg) {
  Gradients g;
  for (const auto& s : cfg.layers) {
    g.dW.emplace_back(s.n_outputs, s.n_inputs);
    g.db.emplace_back(s.n_outputs, 0.0);
    g.delta.emplace_back(s.n_outputs, 0.0);
  }
  return g;
}

void Gradients::accumulate(const Gradients& other) {
  for (std::size_t l = 0; l < dW.size(); ++l) {
    for (std::size_t k = 0; k < dW[l].data.size(); ++k) dW[l].data[k] += other.dW[l].data[k];
    for (std::size_t k = 0; k < db[l].size(); ++k) db[l][k] += other.db[l][k];
    for (std::size_t k = 0; k < delta[l].size(); ++k) delta[l][k] += other.delta[l][k];
  }
}

void Gradients::scale(double factor) {
  for (std::size_t l = 0; l < dW.size(); ++l) {
    for (double& v : dW[l].data) v *= factor;
    for (double& v : db[l]) v *= factor;
    for (double& v : delta[l]) v *= factor;
  }
}

std::string to_string(TrainMode m) { return m == TrainMode::Float ? "float" : "qat"; }

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "float") return TrainMode::Float;
  if (s == "qat") return TrainMode::Qat;
  throw Error("unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error("train config: learning_rate must be finite and non-negative");
  }
  if (epochs == 0 || steps_per_epoch == 0 || batch_size == 0) {
    throw Error("train config: epochs, steps and batch size must be at least 1");
  }
  if (mode == TrainMode::Qat && calibration_samples == 0) {
    throw Error("train config: QAT needs at least one calibration sample");
  }
}

double mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw Error("mse: prediction and target lengths differ");
  if (pred.empty()) throw Error("mse: empty vectors");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

std::vector<double> output_delta(const ForwardTrace& trace, std::span<const double> target) {
  if (trace.y.empty()) throw Error("output delta: empty forward trace");
  const std::vector<double>& y = trace.output();
  if (y.size() != target.size()) throw Error("output delta: target length mismatch");
  const double k = 2.0 / static_cast<double>(y.size());
  std::vector<double> d(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) d[i] = k * (y[i] - target[i]);
  return d;
}

Gradients backprop(const NetworkConfig& cfg, const NetworkParams& params, const ForwardTrace& trace,
                   std::span<const double> delta_out) {
  params.check_against(cfg);
  const std::size_t depth = cfg.layers.size();
  if (trace.depth() != depth || trace.y.size() != depth) throw Error("backprop: trace depth does not match config");
  if (delta_out.size() != cfg.layers.back().n_outputs) throw Error("backprop: output delta length mismatch");
  if (trace.mode == ExecMode::Integer) throw Error("backprop: integer traces carry no gradient path");
  const bool fq = trace.mode == ExecMode::FakeQuant;
  if (fq && trace.pass_mask.size() != depth) throw Error("backprop: fake-quant trace lacks clamp masks");

  Gradients g = Gradients::zeros_like(cfg);
  std::vector<double> upstream(delta_out.begin(), delta_out.end());  // dL/dy^l
  for (std::size_t l = depth; l-- > 0;) {
    const LayerSpec& spec = cfg.layers[l];
    const auto& z = trace.z[l];
    if (z.size() != spec.n_outputs) throw Error("backprop: trace shape mismatch at layer " + std::to_string(l));
    std::vector<double>& delta = g.delta[l];
    for (std::size_t i = 0; i < spec.n_outputs; ++i) {
      double d = upstream[i] * activation_derivative(spec.activation, z[i]);
      if (fq && !trace.pass_mask[l][i]) d = 0.0;
      delta[i] = d;
    }

    std::span<const double> x = trace.layer_input(l);
    if (x.size() != spec.n_inputs) throw Error("backprop: trace input width mismatch at layer " + std::to_string(l));
    Matrix& dW = g.dW[l];
    for (std::size_t i = 0; i < spec.n_outputs; ++i) {
      for (std::size_t j = 0; j < spec.n_inputs; ++j) dW(i, j) = delta[i] * x[j];
    }
    g.db[l] = delta;

    if (l == 0) break;
    const Matrix& w_real = params.layers[l].weights;
    std::vector<double> w_fq;
    if (fq) w_fq = fake_quantize(w_real.data, weight_qparams(w_real));
    const std::vector<double>& w = fq ? w_fq : w_real.data;
    upstream.assign(spec.n_inputs, 0.0);
    for (std::size_t i = 0; i < spec.n_outputs; ++i) {
      for (std::size_t j = 0; j < spec.n_inputs; ++j) upstream[j] += w[i * spec.n_inputs + j] * delta[i];
    }
  }
  return g;
}

void sgd_step(NetworkParams& params, const Gradients& grads, double learning_rate) {
  if (grads.dW.size() != params.layers.size()) throw Error("sgd: gradient depth mismatch");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    LayerParams& p = params.layers[l];
    if (grads.dW[l].data.size() != p.weights.data.size() || grads.db[l].size() != p.biases.size()) {
      throw Error("sgd: gradient shape mismatch at layer " + std::to_string(l));
    }
    for (std::size_t k = 0; k < p.weights.data.size(); ++k) p.weights.data[k] -= learning_rate * grads.dW[l].data[k];
    for (std::size_t k = 0; k < p.biases.size(); ++k) p.biases[k] -= learning_rate * grads.db[l][k];
  }
}

NetworkParams init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  rng::Engine g = rng::stream(seed, kInitStream);
  NetworkParams params;
  for (const LayerSpec& s : cfg.layers) {
    LayerParams p;
    p.weights = Matrix(s.n_outputs, s.n_inputs);
    const double limit = std::sqrt(6.0 / static_cast<double>(s.n_inputs + s.n_outputs));
    for (double& w : p.weights.data) w = rng::uniform(g, -limit, limit);
    p.biases.assign(s.n_outputs, 0.0);
    params.layers.push_back(std::move(p));
  }
  params.layers.back().output_q.bits = kOutputBits;
  return params;
}

void calibrate(const NetworkConfig& cfg, NetworkParams& params, const RegressionSet& calibration) {
  cfg.validate();
  params.check_against(cfg);
  if (calibration.empty()) throw Error("calibration: empty calibration set");
  if (calibration.input_dim != cfg.input_dim) throw Error("calibration: input width mismatch");

  const std::size_t n = calibration.size();
  double in_max = 0.0;
  for (double v : calibration.inputs) in_max = std::max(in_max, std::abs(v));
  params.input_q = symmetric_params(in_max, kActivationBits);

  std::vector<double> act = fake_quantize(calibration.inputs, params.input_q);
  std::size_t width = cfg.input_dim;
  double in_scale = params.input_q.scale;
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    const LayerSpec& spec = cfg.layers[l];
    LayerParams& p = params.layers[l];
    const QuantParams wq = weight_qparams(p.weights);
    const std::vector<double> w = fake_quantize(p.weights.data, wq);
    const std::vector<double> b = fake_quantize(p.biases, bias_qparams(in_scale, wq.scale));

    std::vector<double> out(n * spec.n_outputs);
    double out_max = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const double* x = act.data() + s * width;
      for (std::size_t i = 0; i < spec.n_outputs; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < spec.n_inputs; ++j) acc += w[i * spec.n_inputs + j] * x[j];
        const double a = activate(spec.activation, acc + b[i]);
        out[s * spec.n_outputs + i] = a;
        out_max = std::max(out_max, std::abs(a));
      }
    }
    const bool last = l + 1 == cfg.layers.size();
    p.output_q = symmetric_params(out_max, last ? kOutputBits : kActivationBits);
    act = fake_quantize(out, p.output_q);
    width = spec.n_outputs;
    in_scale = p.output_q.scale;
  }
}

TrainResult train(const NetworkConfig& cfg, const TrainConfig& tcfg, const RegressionSet& data) {
  return train(cfg, tcfg, data, init_params(cfg, tcfg.seed));
}

TrainResult train(const NetworkConfig& cfg, const TrainConfig& tcfg, const RegressionSet& data,
                  NetworkParams initial) {
  cfg.validate();
  tcfg.validate();
  if (data.empty()) throw Error("train: empty dataset");
  if (data.input_dim != cfg.input_dim || data.target_dim != cfg.layers.back().n_outputs) {
    throw Error("train: dataset shape does not match the network");
  }

  TrainResult result;
  result.params = std::move(initial);
  result.params.check_against(cfg);
  NetworkParams& params = result.params;

  const bool qat = tcfg.mode == TrainMode::Qat;
  const ExecMode mode = qat ? ExecMode::FakeQuant : ExecMode::Real;
  const RegressionSet calib = qat ? data.head(tcfg.calibration_samples) : RegressionSet{};
  rng::Engine sampler = rng::stream(tcfg.seed, kSampleStream);
  const double inv_batch = 1.0 / static_cast<double>(tcfg.batch_size);

  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    // Activation ranges drift with the weights; refresh them once per epoch.
    if (qat) calibrate(cfg, params, calib);
    double epoch_sum = 0.0;
    for (std::size_t step = 0; step < tcfg.steps_per_epoch; ++step) {
      Gradients grads = Gradients::zeros_like(cfg);
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < tcfg.batch_size; ++b) {
        const std::size_t idx = rng::below(sampler, data.size());
        const ForwardTrace trace = network_forward(cfg, params, data.input(idx), mode);
        batch_loss += mse_loss(trace.output(), data.target(idx));
        grads.accumulate(backprop(cfg, params, trace, output_delta(trace, data.target(idx))));
      }
      batch_loss *= inv_batch;
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                                  std::to_string(step + 1) + " (learning rate " + std::to_string(tcfg.learning_rate) +
                                  ")",
                              epoch + 1, step + 1);
      }
      grads.scale(inv_batch);
      sgd_step(params, grads, tcfg.learning_rate);
      epoch_sum += batch_loss;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(tcfg.steps_per_epoch));
  }
  if (qat) calibrate(cfg, params, calib);
  return result;
}

IntegerModel export_integer_model(const NetworkConfig& cfg, const NetworkParams& params,
                                  const RegressionSet& calibration) {
  if (calibration.empty()) throw Error("export: calibration set is empty");
  NetworkParams calibrated = params;
  calibrate(cfg, calibrated, calibration);
  return quantize_model(cfg, calibrated);
}

std::string loss_history_csv(std::span<const double> epoch_loss) {
  std::ostringstream os;
  os << "epoch,mean_loss\n";
  char buf[64];
  for (std::size_t e = 0; e < epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1, epoch_loss[e]);
    os << buf;
  }
  return os.str();
}

}  // namespace mrfaccel
