#include "mrfaccel/cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "binio.hpp"
#include "mrfaccel/error.hpp"
#include "mrfaccel/hardware.hpp"
#include "mrfaccel/model_io.hpp"
#include "mrfaccel/mrf_data.hpp"
#include "mrfaccel/training.hpp"

#ifndef MRFACCEL_VERSION
#define MRFACCEL_VERSION "0.0.0"
#endif

namespace mrfaccel::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
  bool json_output = false;
};

struct GenerateOptions {
  std::size_t n = 50'000;
  double t1_min = 100, t1_max = 4000, t2_min = 10, t2_max = 2000;
  double snr_min = 20, snr_max = 100;
  std::size_t length = 100;
};

struct TrainOptions {
  std::string net;
  std::string data;
  std::string mode = "float";
  std::size_t epochs = 20;
  std::size_t steps = 200;
  std::size_t batch = 1;
  double lr = 1e-4;
  std::size_t calibration = 256;
};

struct EvalOptions {
  std::string model;
  std::string data;
};

struct VerifyOptions {
  std::string model;
  std::size_t trials = 1000;
  int inject_fault_layer = -1;
};

struct EstimateOptions {
  std::string net;
  std::string profile;
  std::uint64_t samples = 250'000'000;
  bool pcie = false;
  double clock = 0.0;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("'" + path + "': " + e.what());
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path sibling(const std::string& out, const std::string& suffix) {
  fs::path p(out);
  p.replace_extension();
  p += suffix;
  return p;
}

json make_manifest(const std::string& command, const std::vector<std::string>& args, const GlobalOptions& g,
                   json configs, json outputs) {
  return {{"command", command},      {"args", args},          {"config_files", std::move(configs)},
          {"seed", g.seed},          {"outputs", std::move(outputs)}, {"tool_version", MRFACCEL_VERSION},
          {"timestamp", utc_timestamp()}};
}

void write_manifest(const std::string& out, const json& manifest) {
  binio::write_file_atomic(sibling(out, ".manifest.json").string(), manifest.dump(2) + "\n");
}

// Applies a JSON object's keys onto a dataset spec.
void apply_dataset_json(const json& j, DatasetSpec& s) {
  for (const auto& [key, v] : j.items()) {
    if (key == "n") s.n_samples = v.get<std::size_t>();
    else if (key == "t1_min") s.t1_ms.lo = v.get<double>();
    else if (key == "t1_max") s.t1_ms.hi = v.get<double>();
    else if (key == "t2_min") s.t2_ms.lo = v.get<double>();
    else if (key == "t2_max") s.t2_ms.hi = v.get<double>();
    else if (key == "snr_min") s.snr.lo = v.get<double>();
    else if (key == "snr_max") s.snr.hi = v.get<double>();
    else if (key == "phase_min") s.phase.lo = v.get<double>();
    else if (key == "phase_max") s.phase.hi = v.get<double>();
    else if (key == "length") s.signal_length = v.get<std::size_t>();
    else if (key == "seed") s.seed = v.get<std::uint64_t>();
    else throw Error("dataset config: unknown key '" + key + "'");
  }
}

void apply_train_json(const json& j, TrainConfig& t) {
  for (const auto& [key, v] : j.items()) {
    if (key == "learning_rate") t.learning_rate = v.get<double>();
    else if (key == "epochs") t.epochs = v.get<std::size_t>();
    else if (key == "steps_per_epoch") t.steps_per_epoch = v.get<std::size_t>();
    else if (key == "batch_size") t.batch_size = v.get<std::size_t>();
    else if (key == "seed") t.seed = v.get<std::uint64_t>();
    else if (key == "mode") t.mode = train_mode_from_string(v.get<std::string>());
    else if (key == "calibration_samples") t.calibration_samples = v.get<std::size_t>();
    else throw Error("train config: unknown key '" + key + "'");
  }
}

int cmd_generate(const GenerateOptions& o, const GlobalOptions& g, const CLI::App& sub,
                 const std::vector<std::string>& args, std::ostream& out) {
  DatasetSpec spec;
  spec.n_samples = o.n;
  spec.t1_ms = {o.t1_min, o.t1_max};
  spec.t2_ms = {o.t2_min, o.t2_max};
  spec.snr = {o.snr_min, o.snr_max};
  spec.signal_length = o.length;
  spec.seed = g.seed;
  if (!g.config.empty()) {
    apply_dataset_json(read_json_file(g.config), spec);
    // Explicit flags win over the file.
    if (sub.count("--n")) spec.n_samples = o.n;
    if (sub.count("--t1-min")) spec.t1_ms.lo = o.t1_min;
    if (sub.count("--t1-max")) spec.t1_ms.hi = o.t1_max;
    if (sub.count("--t2-min")) spec.t2_ms.lo = o.t2_min;
    if (sub.count("--t2-max")) spec.t2_ms.hi = o.t2_max;
    if (sub.count("--snr-min")) spec.snr.lo = o.snr_min;
    if (sub.count("--snr-max")) spec.snr.hi = o.snr_max;
    if (sub.count("--length")) spec.signal_length = o.length;
    if (sub.get_parent()->count("--seed")) spec.seed = g.seed;
  }
  spec.validate();
  const Dataset ds = generate_dataset(spec);
  write_dataset(g.out, ds);
  write_manifest(g.out, make_manifest("generate", args, g, {{"dataset", g.config}}, {{"dataset", g.out}}));
  if (g.json_output) {
    out << json{{"dataset", g.out}, {"samples", ds.size()}, {"signal_length", spec.signal_length}}.dump(2) << "\n";
  } else {
    out << "wrote " << ds.size() << " samples (L=" << spec.signal_length << ") to " << g.out << "\n";
  }
  return kSuccess;
}

int cmd_train(const TrainOptions& o, const GlobalOptions& g, const CLI::App& sub, const std::vector<std::string>& args,
              std::ostream& out) {
  const NetworkConfig cfg = o.net.empty() ? NetworkConfig::default_mrf() : load_network_config(o.net);
  TrainConfig t;
  t.learning_rate = o.lr;
  t.epochs = o.epochs;
  t.steps_per_epoch = o.steps;
  t.batch_size = o.batch;
  t.seed = g.seed;
  t.mode = train_mode_from_string(o.mode);
  t.calibration_samples = o.calibration;
  if (!g.config.empty()) {
    apply_train_json(read_json_file(g.config), t);
    if (sub.count("--lr")) t.learning_rate = o.lr;
    if (sub.count("--epochs")) t.epochs = o.epochs;
    if (sub.count("--steps")) t.steps_per_epoch = o.steps;
    if (sub.count("--batch")) t.batch_size = o.batch;
    if (sub.count("--mode")) t.mode = train_mode_from_string(o.mode);
    if (sub.count("--calibration")) t.calibration_samples = o.calibration;
    if (sub.get_parent()->count("--seed")) t.seed = g.seed;
  }
  t.validate();

  const Dataset ds = read_dataset(o.data);
  const RegressionSet data = to_regression_set(ds);
  const TrainResult r = train(cfg, t, data);

  const std::string loss_path = sibling(g.out, ".loss.csv").string();
  save_model(g.out, {cfg, r.params, t.mode});
  binio::write_file_atomic(loss_path, loss_history_csv(r.epoch_loss));
  json outputs{{"model", g.out}, {"loss_csv", loss_path}};
  if (t.mode == TrainMode::Qat) {
    const std::string int_path = sibling(g.out, ".int.qnet").string();
    save_integer_model(int_path, export_integer_model(cfg, r.params, data.head(t.calibration_samples)));
    outputs["integer_model"] = int_path;
  }
  write_manifest(g.out, make_manifest("train", args, g, {{"net", o.net}, {"train", g.config}, {"data", o.data}},
                                      outputs));
  if (g.json_output) {
    out << json{{"outputs", outputs}, {"epoch_loss", r.epoch_loss}}.dump(2) << "\n";
  } else {
    out << "mode " << to_string(t.mode) << ", " << t.epochs << " epochs x " << t.steps_per_epoch << " steps\n";
    out << "first epoch loss " << r.epoch_loss.front() << ", final epoch loss " << r.epoch_loss.back() << "\n";
    for (const auto& [k, v] : outputs.items()) out << k << ": " << v.get<std::string>() << "\n";
  }
  return kSuccess;
}

int cmd_eval(const EvalOptions& o, const GlobalOptions& g, const std::vector<std::string>& args, std::ostream& out) {
  const std::string bytes = binio::read_file(o.model);
  const ModelKind kind = peek_model_kind(bytes);
  const Dataset ds = read_dataset(o.data);
  const std::size_t input_dim = 2 * ds.spec.signal_length;

  std::vector<T1T2> preds;
  preds.reserve(ds.size());
  std::vector<double> x(input_dim);
  auto signal_of = [&](const TrainSample& s) {
    std::copy(s.signal.begin(), s.signal.end(), x.begin());
    return std::span<const double>(x);
  };
  if (kind == ModelKind::Integer) {
    const IntegerModel m = decode_integer_model(bytes);
    if (m.config.input_dim != input_dim) throw Error("eval: model expects " + std::to_string(m.config.input_dim) +
                                                     " inputs, dataset provides " + std::to_string(input_dim));
    for (const TrainSample& s : ds.samples) {
      const IntegerTrace t = integer_forward(m, quantize_input(m, signal_of(s)));
      preds.push_back(denormalize(dequantize(t.output())));
    }
  } else {
    const RealModel m = decode_model(bytes);
    if (m.config.input_dim != input_dim) throw Error("eval: model expects " + std::to_string(m.config.input_dim) +
                                                     " inputs, dataset provides " + std::to_string(input_dim));
    const ExecMode mode = kind == ModelKind::Qat ? ExecMode::FakeQuant : ExecMode::Real;
    for (const TrainSample& s : ds.samples) {
      preds.push_back(denormalize(network_forward(m.config, m.params, signal_of(s), mode).output()));
    }
  }
  const MetricsReport report = evaluate(preds, targets_of(ds));
  json result = json::parse(metrics_json(report));
  result["model_kind"] = to_string(kind);
  if (!g.out.empty()) {
    binio::write_file_atomic(g.out, result.dump(2) + "\n");
    write_manifest(g.out, make_manifest("eval", args, g, {{"model", o.model}, {"data", o.data}}, {{"metrics", g.out}}));
  }
  if (g.json_output) {
    out << result.dump(2) << "\n";
  } else {
    out << "model kind " << to_string(kind) << ", " << report.count << " samples\n" << metrics_table(report);
  }
  return kSuccess;
}

int cmd_verify(const VerifyOptions& o, const GlobalOptions& g, const std::vector<std::string>& args,
               std::ostream& out, std::ostream& err) {
  const HardwareProfile hp;
  std::optional<IntegerModel> model;
  if (!o.model.empty()) model = load_integer_model(o.model);

  NodeKernel kernel = node_forward_int;
  if (o.inject_fault_layer >= 0) {
    // Negative control: flip the LSB of every requantized output on one layer.
    if (!model) throw Error("verify: --inject-fault needs --model");
    if (static_cast<std::size_t>(o.inject_fault_layer) >= model->layers.size()) {
      throw Error("verify: fault layer out of range");
    }
    const IntegerLayer target = model->layers[static_cast<std::size_t>(o.inject_fault_layer)];
    kernel = [target](std::span<const std::int64_t> x, std::span<const std::int64_t> w, std::int64_t b,
                      Activation a, const FixedPointMultiplier& m, const QuantParams& q) {
      NodeResult r = node_forward_int(x, w, b, a, m, q);
      if (m == target.requant && q == target.output_q) r.out ^= 1;
      return r;
    };
  }

  if (o.trials == 0) err << "warning: 0 trials requested, verification is vacuous\n";
  const VerifyReport report =
      model ? verify_model(*model, o.trials, g.seed, hp, kernel) : verify_random_networks(o.trials, g.seed, hp, kernel);

  json result{{"trials", report.trials},
              {"mismatches", report.mismatches},
              {"cycle_mismatches", report.cycle_mismatches},
              {"passed", report.passed()},
              {"source", model ? o.model : std::string("random networks")}};
  if (report.first_mismatch) {
    const Mismatch& m = *report.first_mismatch;
    result["first_mismatch"] = {
        {"trial", m.trial}, {"layer", m.layer}, {"node", m.node}, {"scheduled", m.scheduled}, {"direct", m.direct}};
  }
  if (!g.out.empty()) {
    binio::write_file_atomic(g.out, result.dump(2) + "\n");
    write_manifest(g.out, make_manifest("verify", args, g, {{"model", o.model}}, {{"report", g.out}}));
  }
  if (g.json_output) {
    out << result.dump(2) << "\n";
  } else {
    out << "verified " << report.trials << " trials: " << report.mismatches << " bit mismatches, "
        << report.cycle_mismatches << " cycle-count mismatches\n";
    if (report.first_mismatch) {
      const Mismatch& m = *report.first_mismatch;
      out << "first mismatch: trial " << m.trial << ", layer " << m.layer << ", node " << m.node << ": scheduled "
          << m.scheduled << " != direct " << m.direct << "\n";
    }
    out << (report.passed() ? "PASS" : "FAIL") << "\n";
  }
  return report.passed() ? kSuccess : kVerificationFailure;
}

int cmd_estimate(const EstimateOptions& o, const GlobalOptions& g, const std::vector<std::string>& args,
                 std::ostream& out) {
  const NetworkConfig cfg = o.net.empty() ? NetworkConfig::default_mrf() : load_network_config(o.net);
  const std::string profile_path = !o.profile.empty() ? o.profile : g.config;
  HardwareProfile hp = profile_path.empty() ? HardwareProfile{} : load_hardware_profile(profile_path);
  if (o.clock > 0.0) hp.clock_mhz = o.clock;
  hp.validate();

  const CycleReport cycles = schedule(cfg, hp);
  const ResourceReport resources = estimate_resources(cfg, hp, o.pcie);
  const TrainingTime time = estimate_training_time(o.samples, cycles, hp);

  json result{{"network", network_config_to_json(cfg)},
              {"profile", hp},
              {"samples", o.samples},
              {"cycles", cycle_report_json(cycles)},
              {"resources", resource_report_json(resources)},
              {"training_time", training_time_json(time)}};
  if (!g.out.empty()) {
    binio::write_file_atomic(g.out, result.dump(2) + "\n");
    write_manifest(g.out, make_manifest("estimate", args, g, {{"net", o.net}, {"profile", profile_path}},
                                        {{"report", g.out}}));
  }
  if (g.json_output) {
    out << result.dump(2) << "\n";
  } else {
    out << estimate_table(cycles, resources, &time);
    out << "training time for " << o.samples << " samples at " << hp.clock_mhz << " MHz: " << time.exact() << " s\n";
  }
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"FPGA training-accelerator emulator and cost model for MRF T1/T2 regression", "mrfaccel"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--config", g.config, "JSON config for the subcommand (dataset spec, train config or hardware profile)");
  app.add_option("--out", g.out, "Primary output path");
  app.add_flag("--json", g.json_output, "Emit JSON on stdout");

  GenerateOptions gen;
  CLI::App* generate = app.add_subcommand("generate", "Generate a surrogate MRF dataset");
  generate->add_option("--n", gen.n, "Number of samples");
  generate->add_option("--t1-min", gen.t1_min, "T1 minimum (ms)");
  generate->add_option("--t1-max", gen.t1_max, "T1 maximum (ms)");
  generate->add_option("--t2-min", gen.t2_min, "T2 minimum (ms)");
  generate->add_option("--t2-max", gen.t2_max, "T2 maximum (ms)");
  generate->add_option("--snr-min", gen.snr_min, "SNR minimum");
  generate->add_option("--snr-max", gen.snr_max, "SNR maximum");
  generate->add_option("--length", gen.length, "Complex signal length L (input width is 2L)");

  TrainOptions tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a float or QAT model with SGD");
  train_cmd->add_option("--net", tr.net, "Network config JSON (default: 200-32-64-32-32-32-16-2)");
  train_cmd->add_option("--data", tr.data, "Training dataset (.qmrf)")->required();
  train_cmd->add_option("--mode", tr.mode, "float or qat")->check(CLI::IsMember({"float", "qat"}));
  train_cmd->add_option("--epochs", tr.epochs, "Epochs");
  train_cmd->add_option("--steps", tr.steps, "Gradient steps per epoch");
  train_cmd->add_option("--batch", tr.batch, "Batch size");
  train_cmd->add_option("--lr", tr.lr, "Learning rate");
  train_cmd->add_option("--calibration", tr.calibration, "Calibration samples for QAT");

  EvalOptions ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a model on a dataset (MAPE, MPE, RMSE)");
  eval_cmd->add_option("--model", ev.model, "Model file (float, qat or integer)")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset (.qmrf)")->required();

  VerifyOptions vf;
  CLI::App* verify_cmd = app.add_subcommand("verify", "Check scheduled vs direct integer execution bit for bit");
  verify_cmd->add_option("--model", vf.model, "Integer model (default: random networks)");
  verify_cmd->add_option("--trials", vf.trials, "Number of random trials");
  verify_cmd->add_option("--inject-fault", vf.inject_fault_layer, "Corrupt the requantizer of a layer (test fixture)")
      ->group("");

  EstimateOptions es;
  CLI::App* estimate_cmd = app.add_subcommand("estimate", "Cycle, resource and training-time estimates");
  estimate_cmd->add_option("--net", es.net, "Network config JSON");
  estimate_cmd->add_option("--profile", es.profile, "Hardware profile JSON");
  estimate_cmd->add_option("--samples", es.samples, "Training samples");
  estimate_cmd->add_flag("--pcie", es.pcie, "Include the PCIe block");
  estimate_cmd->add_option("--clock", es.clock, "Override clock (MHz)");

  // Global options may also follow the subcommand name.
  for (CLI::App* sub : {generate, train_cmd, eval_cmd, verify_cmd, estimate_cmd}) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kUsageError;
  }

  try {
    if (generate->parsed()) {
      if (g.out.empty()) {
        err << "usage error: generate requires --out\n";
        return kUsageError;
      }
      return cmd_generate(gen, g, *generate, args, out);
    }
    if (train_cmd->parsed()) {
      if (g.out.empty()) {
        err << "usage error: train requires --out\n";
        return kUsageError;
      }
      return cmd_train(tr, g, *train_cmd, args, out);
    }
    if (eval_cmd->parsed()) return cmd_eval(ev, g, args, out);
    if (verify_cmd->parsed()) return cmd_verify(vf, g, args, out, err);
    if (estimate_cmd->parsed()) return cmd_estimate(es, g, args, out);
  } catch (const DivergenceError& e) {
    err << "error: training diverged at epoch " << e.epoch() << ", step " << e.step() << ": " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace mrfaccel::cli
