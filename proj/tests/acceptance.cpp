// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "mrfaccel/hardware.hpp"
#include "mrfaccel/model_io.hpp"
#include "mrfaccel/mrf_data.hpp"
#include "mrfaccel/training.hpp"
#include "oracles.hpp"

using namespace mrfaccel;

namespace {

// Tolerances.
constexpr double kGradientRelError = 1e-5;
constexpr double kLossReduction = 0.5;       // final epoch loss <= this * first
constexpr double kQuantizedMapeRatio = 1.5;  // quantized MAPE <= this * float MAPE
constexpr std::size_t kVerifyTrials = 1000;
constexpr std::size_t kGradientNets = 50;

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome training_time() {
  const auto t = estimate_training_time(250'000'000, NetworkConfig::default_mrf(), HardwareProfile{});
  return {t.seconds == Rational(200), "training time " + t.exact() + " s for 2.5e8 samples at 200 MHz"};
}

Outcome cycle_counts() {
  const auto c = schedule(NetworkConfig::default_mrf(), HardwareProfile{});
  return {c.forward_cycles == 56 && c.backward_cycles == 104,
          "forward " + std::to_string(c.forward_cycles) + ", backward " + std::to_string(c.backward_cycles) +
              " cycles per sample"};
}

Outcome resources() {
  const HardwareProfile hp;
  const auto core = estimate_resources(NetworkConfig::default_mrf(), hp, false);
  const auto with = estimate_resources(NetworkConfig::default_mrf(), hp, true);
  const long lut = std::lround(core.lut_percent());
  const long dsp = std::lround(core.dsp_percent());
  const ResourceVector pcie_delta = with.total - core.total;
  const bool ok = core.total.luts == 145'000 && core.total.dsps == 5'000 && core.total.ffs == 146'000 &&
                  std::abs(lut - 8) <= 1 && std::abs(dsp - 40) <= 2 &&
                  pcie_delta == ResourceVector{83'000, 0, 148'000, 150};
  char buf[200];
  std::snprintf(buf, sizeof buf, "LUT %lld (%ld%%), DSP %lld (%ld%%), FF %lld; PCIe adds %lld LUT / %lld FF / %lld BRAM",
                static_cast<long long>(core.total.luts), lut, static_cast<long long>(core.total.dsps), dsp,
                static_cast<long long>(core.total.ffs), static_cast<long long>(pcie_delta.luts),
                static_cast<long long>(pcie_delta.ffs), static_cast<long long>(pcie_delta.brams));
  return {ok, buf};
}

Outcome scheduled_equivalence() {
  const auto r = verify_random_networks(kVerifyTrials, 2024, HardwareProfile{});
  return {r.trials == kVerifyTrials && r.passed(), std::to_string(r.trials) + " random networks, " +
                                                       std::to_string(r.mismatches) + " bit mismatches, " +
                                                       std::to_string(r.cycle_mismatches) + " cycle mismatches"};
}

Outcome gradients() {
  double worst = 0.0;
  for (std::size_t i = 0; i < kGradientNets; ++i) {
    const auto c = oracle::random_gradient_case(1000 + i);
    worst = std::max(worst, oracle::check_gradients(c.cfg, c.params, c.x, c.t).max_rel_error);
  }
  char buf[120];
  std::snprintf(buf, sizeof buf, "%zu random networks, max relative error %.3g", kGradientNets, worst);
  return {worst < kGradientRelError, buf};
}

struct Experiment {
  Dataset train_set;
  Dataset test_set;
  RegressionSet train_data;
  TrainConfig base;
};

Experiment make_experiment() {
  Experiment e;
  DatasetSpec tr;
  tr.n_samples = 50'000;
  tr.seed = 7;
  DatasetSpec te = tr;
  te.n_samples = 5'000;
  te.seed = 8;
  e.train_set = generate_dataset(tr);
  e.test_set = generate_dataset(te);
  e.train_data = to_regression_set(e.train_set);
  e.base.learning_rate = 1e-4;
  e.base.epochs = 20;
  e.base.steps_per_epoch = 200;
  e.base.seed = 1;
  return e;
}

template <class Predict>
MetricsReport score(const Dataset& ds, Predict predict) {
  std::vector<T1T2> preds;
  std::vector<double> x;
  for (const auto& s : ds.samples) {
    x.assign(s.signal.begin(), s.signal.end());
    preds.push_back(denormalize(predict(x)));
  }
  return evaluate(preds, targets_of(ds));
}

Outcome training_quality(const Experiment& e) {
  const NetworkConfig cfg = NetworkConfig::default_mrf();
  TrainConfig fcfg = e.base;
  fcfg.mode = TrainMode::Float;
  TrainConfig qcfg = e.base;
  qcfg.mode = TrainMode::Qat;
  const TrainResult fl = train(cfg, fcfg, e.train_data);
  const TrainResult qat = train(cfg, qcfg, e.train_data);
  const IntegerModel im = export_integer_model(cfg, qat.params, e.train_data.head(qcfg.calibration_samples));

  const auto float_m = score(e.test_set, [&](const std::vector<double>& x) {
    return network_forward(cfg, fl.params, x, ExecMode::Real).output();
  });
  const auto int_m = score(e.test_set, [&](const std::vector<double>& x) {
    return dequantize(integer_forward(im, quantize_input(im, x)).output());
  });

  const bool float_drop = fl.epoch_loss.back() <= kLossReduction * fl.epoch_loss.front();
  const bool qat_drop = qat.epoch_loss.back() <= kLossReduction * qat.epoch_loss.front();
  const bool t1_ok = int_m.t1.mape_percent <= kQuantizedMapeRatio * float_m.t1.mape_percent;
  const bool t2_ok = int_m.t2.mape_percent <= kQuantizedMapeRatio * float_m.t2.mape_percent;
  char buf[320];
  std::snprintf(buf, sizeof buf,
                "float loss %.4g -> %.4g, qat loss %.4g -> %.4g; MAPE T1 %.2f%% float vs %.2f%% integer, "
                "T2 %.2f%% vs %.2f%%",
                fl.epoch_loss.front(), fl.epoch_loss.back(), qat.epoch_loss.front(), qat.epoch_loss.back(),
                float_m.t1.mape_percent, int_m.t1.mape_percent, float_m.t2.mape_percent, int_m.t2.mape_percent);
  return {float_drop && qat_drop && t1_ok && t2_ok, buf};
}

Outcome reproducibility(const Experiment& e) {
  const NetworkConfig cfg = NetworkConfig::default_mrf();
  bool same = true;
  for (TrainMode mode : {TrainMode::Float, TrainMode::Qat}) {
    TrainConfig t = e.base;
    t.mode = mode;
    t.epochs = 5;
    const TrainResult a = train(cfg, t, e.train_data);
    const TrainResult b = train(cfg, t, e.train_data);
    same = same && a.epoch_loss == b.epoch_loss && encode_model({cfg, a.params, mode}) == encode_model({cfg, b.params, mode});
  }
  DatasetSpec spec = e.train_set.spec;
  spec.n_samples = 2'000;
  same = same && encode_dataset(generate_dataset(spec)) == encode_dataset(generate_dataset(spec));
  return {same, same ? "repeat runs give identical datasets, loss histories and model bytes"
                     : "repeat runs differ"};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const char* id, const char* name, const Outcome& o) {
    std::printf("%s %s %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };
  report("AC1", "training time", training_time());
  report("AC2", "cycle counts", cycle_counts());
  report("AC3", "resource utilization", resources());
  report("AC4", "scheduled execution is bit exact", scheduled_equivalence());
  report("AC5", "backprop matches finite differences", gradients());
  const Experiment e = make_experiment();
  report("AC6", "training converges and quantized accuracy holds", training_quality(e));
  report("AC7", "reproducibility", reproducibility(e));
  std::printf("%d of 7 criteria failed\n", failures);
  return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
