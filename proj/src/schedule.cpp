#include <algorithm>

#include "mrfaccel/error.hpp"
#include "mrfaccel/hardware.hpp"
#include "mrfaccel/rng.hpp"
#include "mrfaccel/training.hpp"

namespace mrfaccel {

ScheduledResult run_scheduled_forward(const IntegerModel& model, const QTensor& input, const HardwareProfile& hp,
                                      const NodeKernel& kernel) {
  hp.validate();
  if (input.size() != model.config.input_dim || input.qparams() != model.input_q) {
    throw Error("scheduled forward: input tensor does not match the model input quantization");
  }
  const std::size_t units = hp.parallel_nodes;
  ScheduledResult result;
  const QTensor* x = &input;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const IntegerLayer& layer = model.layers[l];
    const std::size_t n_out = layer.spec.n_outputs;
    const std::size_t n_in = layer.spec.n_inputs;
    if (x->size() != n_in || layer.weights.size() != n_out * n_in || layer.biases.size() != n_out) {
      throw Error("scheduled forward: width mismatch at layer " + std::to_string(l));
    }
    const std::span<const std::int64_t> xs(x->values());
    const std::span<const std::int64_t> ws(layer.weights.values());
    std::vector<std::int64_t> out(n_out);

    std::size_t batches = 0;
    for (std::size_t first = 0; first < n_out; first += units) {
      // One batch slot: every unit takes the next node, idle units stay idle.
      const std::size_t busy = std::min(units, n_out - first);
      for (std::size_t u = 0; u < busy; ++u) {
        const std::size_t node = first + u;
        const NodeResult r = kernel(xs, ws.subspan(node * n_in, n_in), layer.biases[node], layer.spec.activation,
                                    layer.requant, layer.output_q);
        out[node] = r.out;
      }
      ++batches;
    }
    result.cycles.layer_batches.push_back(batches);
    result.cycles.forward_cycles += batches * hp.cycles_per_node;
    result.activations.emplace_back(std::vector<std::size_t>{n_out}, std::move(out), layer.output_q);
    x = &result.activations.back();
  }
  result.cycles.cycles_per_sample = result.cycles.forward_cycles;
  if (result.activations.empty()) throw Error("scheduled forward: model has no layers");
  result.output = result.activations.back();
  return result;
}

std::optional<Mismatch> compare_paths(const IntegerModel& model, const QTensor& input, const HardwareProfile& hp,
                                      const NodeKernel& kernel) {
  const ScheduledResult scheduled = run_scheduled_forward(model, input, hp, kernel);
  const IntegerTrace direct = integer_forward(model, input);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& a = scheduled.activations[l].values();
    const auto& b = direct.activations[l + 1].values();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] != b[i]) return Mismatch{0, l, i, a[i], b[i]};
    }
  }
  return std::nullopt;
}

namespace {

void record(VerifyReport& report, std::size_t trial, std::optional<Mismatch> m) {
  ++report.trials;
  if (!m) return;
  ++report.mismatches;
  if (!report.first_mismatch) {
    m->trial = trial;
    report.first_mismatch = m;
  }
}

std::vector<double> random_input(rng::Engine& g, std::size_t n) {
  std::vector<double> x(n);
  for (double& v : x) v = rng::uniform(g, -1.0, 1.0);
  return x;
}

}  // namespace

VerifyReport verify_model(const IntegerModel& model, std::size_t n_trials, std::uint64_t seed,
                          const HardwareProfile& hp, const NodeKernel& kernel) {
  VerifyReport report;
  const std::uint64_t expected_cycles = schedule_forward(std::span<const LayerSpec>(model.config.layers), hp).forward_cycles;
  for (std::size_t t = 0; t < n_trials; ++t) {
    rng::Engine g = rng::stream(seed, t);
    const QTensor input = quantize_input(model, random_input(g, model.config.input_dim));
    record(report, t, compare_paths(model, input, hp, kernel));
    if (run_scheduled_forward(model, input, hp, kernel).cycles.forward_cycles != expected_cycles) {
      ++report.cycle_mismatches;
    }
  }
  return report;
}

VerifyReport verify_random_networks(std::size_t n_trials, std::uint64_t seed, const HardwareProfile& hp,
                                    const NodeKernel& kernel) {
  VerifyReport report;
  for (std::size_t t = 0; t < n_trials; ++t) {
    rng::Engine g = rng::stream(seed, t);
    const std::size_t input_dim = 1 + rng::below(g, 64);
    const std::size_t hidden = rng::below(g, 5);
    std::vector<std::size_t> widths;
    for (std::size_t h = 0; h < hidden; ++h) widths.push_back(1 + rng::below(g, 48));
    widths.push_back(NetworkConfig::kOutputDim);
    const NetworkConfig cfg = NetworkConfig::from_widths(input_dim, widths);

    NetworkParams params = init_params(cfg, g());
    for (auto& layer : params.layers) {
      for (double& b : layer.biases) b = rng::uniform(g, -0.2, 0.2);
    }
    RegressionSet calib;
    calib.input_dim = input_dim;
    calib.target_dim = NetworkConfig::kOutputDim;
    const std::vector<double> no_target(NetworkConfig::kOutputDim, 0.0);
    for (int k = 0; k < 8; ++k) calib.push_back(random_input(g, input_dim), no_target);
    const IntegerModel model = export_integer_model(cfg, params, calib);

    const QTensor input = quantize_input(model, random_input(g, input_dim));
    record(report, t, compare_paths(model, input, hp, kernel));
    if (run_scheduled_forward(model, input, hp, kernel).cycles.forward_cycles !=
        schedule_forward(std::span<const LayerSpec>(cfg.layers), hp).forward_cycles) {
      ++report.cycle_mismatches;
    }
  }
  return report;
}

}  // namespace mrfaccel
