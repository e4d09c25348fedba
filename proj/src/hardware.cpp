#include "mrfaccel/hardware.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mrfaccel/error.hpp"

namespace mrfaccel {

ResourceVector& ResourceVector::operator+=(const ResourceVector& o) {
  luts += o.luts;
  dsps += o.dsps;
  ffs += o.ffs;
  brams += o.brams;
  return *this;
}

void HardwareProfile::validate() const {
  if (!std::isfinite(clock_mhz) || clock_mhz <= 0.0) throw Error("hardware profile: clock_mhz must be positive");
  if (parallel_nodes == 0 || cycles_per_node == 0 || cycles_per_backprop_module == 0 || backward_cycles_total == 0 ||
      backward_reference_batches == 0 || bram_bytes == 0) {
    throw Error("hardware profile: counts must be positive");
  }
  if (board.luts <= 0 || board.dsps <= 0 || board.ffs <= 0 || board.brams <= 0) {
    throw Error("hardware profile: board capacities must be positive");
  }
  for (int bits : {weight_bits, bias_bits}) {
    if (bits != 8 && bits != 16 && bits != 32) throw Error("hardware profile: storage widths must be 8, 16 or 32");
  }
}

Rational HardwareProfile::backprop_invocations_per_batch() const {
  return Rational(static_cast<long long>(backward_cycles_total),
                  static_cast<long long>(cycles_per_backprop_module * backward_reference_batches));
}

namespace {

nlohmann::json resources_to_json(const ResourceVector& r) {
  return {{"luts", r.luts}, {"dsps", r.dsps}, {"ffs", r.ffs}, {"brams", r.brams}};
}

ResourceVector resources_from_json(const nlohmann::json& j, ResourceVector r) {
  if (!j.is_object()) throw Error("hardware profile: resource entries must be objects");
  for (const auto& [key, value] : j.items()) {
    if (key == "luts") r.luts = value.get<std::int64_t>();
    else if (key == "dsps") r.dsps = value.get<std::int64_t>();
    else if (key == "ffs") r.ffs = value.get<std::int64_t>();
    else if (key == "brams") r.brams = value.get<std::int64_t>();
    else throw Error("hardware profile: unknown resource key '" + key + "'");
  }
  return r;
}

}  // namespace

void to_json(nlohmann::json& j, const HardwareProfile& hp) {
  j = nlohmann::json{{"clock_mhz", hp.clock_mhz},
                     {"parallel_nodes", hp.parallel_nodes},
                     {"cycles_per_node", hp.cycles_per_node},
                     {"cycles_per_backprop_module", hp.cycles_per_backprop_module},
                     {"backward_cycles_total", hp.backward_cycles_total},
                     {"backward_reference_batches", hp.backward_reference_batches},
                     {"node_unit_cost", resources_to_json(hp.node_unit_cost)},
                     {"backprop_unit_cost", resources_to_json(hp.backprop_unit_cost)},
                     {"pcie_cost", resources_to_json(hp.pcie_cost)},
                     {"board", resources_to_json(hp.board)},
                     {"bram_bytes", hp.bram_bytes},
                     {"weight_bits", hp.weight_bits},
                     {"bias_bits", hp.bias_bits}};
}

void from_json(const nlohmann::json& j, HardwareProfile& hp) {
  if (!j.is_object()) throw Error("hardware profile: expected a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "clock_mhz") hp.clock_mhz = value.get<double>();
      else if (key == "parallel_nodes") hp.parallel_nodes = value.get<std::size_t>();
      else if (key == "cycles_per_node") hp.cycles_per_node = value.get<std::size_t>();
      else if (key == "cycles_per_backprop_module") hp.cycles_per_backprop_module = value.get<std::size_t>();
      else if (key == "backward_cycles_total") hp.backward_cycles_total = value.get<std::size_t>();
      else if (key == "backward_reference_batches") hp.backward_reference_batches = value.get<std::size_t>();
      else if (key == "node_unit_cost") hp.node_unit_cost = resources_from_json(value, hp.node_unit_cost);
      else if (key == "backprop_unit_cost") hp.backprop_unit_cost = resources_from_json(value, hp.backprop_unit_cost);
      else if (key == "pcie_cost") hp.pcie_cost = resources_from_json(value, hp.pcie_cost);
      else if (key == "board") hp.board = resources_from_json(value, hp.board);
      else if (key == "bram_bytes") hp.bram_bytes = value.get<std::size_t>();
      else if (key == "weight_bits") hp.weight_bits = value.get<int>();
      else if (key == "bias_bits") hp.bias_bits = value.get<int>();
      else throw Error("hardware profile: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("hardware profile: ") + e.what());
  }
  hp.validate();
}

HardwareProfile load_hardware_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open hardware profile '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("hardware profile '" + path + "': " + e.what());
  }
  HardwareProfile hp;
  from_json(j, hp);
  return hp;
}

std::size_t batch_count(std::size_t n_outputs, std::size_t parallel_nodes) {
  return (n_outputs + parallel_nodes - 1) / parallel_nodes;
}

CycleReport schedule_forward(std::span<const LayerSpec> layers, const HardwareProfile& hp) {
  hp.validate();
  CycleReport r;
  std::uint64_t batches = 0;
  for (const LayerSpec& s : layers) {
    r.layer_batches.push_back(batch_count(s.n_outputs, hp.parallel_nodes));
    batches += r.layer_batches.back();
  }
  r.forward_cycles = batches * hp.cycles_per_node;
  r.cycles_per_sample = r.forward_cycles;
  return r;
}

CycleReport schedule_backward(std::span<const LayerSpec> layers, const HardwareProfile& hp) {
  hp.validate();
  CycleReport r;
  std::uint64_t batches = 0;
  for (const LayerSpec& s : layers) {
    r.layer_batches.push_back(batch_count(s.n_outputs, hp.parallel_nodes));
    batches += r.layer_batches.back();
  }
  const Rational cycles = Rational(static_cast<long long>(hp.cycles_per_backprop_module * batches)) *
                          hp.backprop_invocations_per_batch();
  // ceil of a non-negative fraction
  const auto num = boost::multiprecision::numerator(cycles);
  const auto den = boost::multiprecision::denominator(cycles);
  r.backward_cycles = static_cast<std::uint64_t>((num + den - 1) / den);
  r.cycles_per_sample = r.backward_cycles;
  return r;
}

CycleReport schedule(std::span<const LayerSpec> layers, const HardwareProfile& hp) {
  CycleReport r = schedule_forward(layers, hp);
  r.backward_cycles = schedule_backward(layers, hp).backward_cycles;
  r.cycles_per_sample = r.forward_cycles + r.backward_cycles;
  return r;
}

CycleReport schedule(const NetworkConfig& cfg, const HardwareProfile& hp) {
  cfg.validate();
  return schedule(std::span<const LayerSpec>(cfg.layers), hp);
}

TrainingTime estimate_training_time(std::uint64_t n_samples, const CycleReport& cycles, const HardwareProfile& hp) {
  hp.validate();
  TrainingTime t;
  const boost::multiprecision::cpp_int total =
      boost::multiprecision::cpp_int(n_samples) * (cycles.forward_cycles + cycles.backward_cycles);
  t.total_cycles = total.convert_to<std::uint64_t>();
  // clock_mhz is a binary double, so the conversion to a fraction is exact.
  const Rational clock_hz = Rational(hp.clock_mhz) * 1'000'000;
  t.seconds = Rational(total) / clock_hz;
  return t;
}

TrainingTime estimate_training_time(std::uint64_t n_samples, const NetworkConfig& cfg, const HardwareProfile& hp) {
  return estimate_training_time(n_samples, schedule(cfg, hp), hp);
}

double ResourceReport::utilization_percent(std::int64_t used, std::int64_t capacity) const {
  return 100.0 * static_cast<double>(used) / static_cast<double>(capacity);
}

bool ResourceReport::fits() const {
  return total.luts <= board.luts && total.dsps <= board.dsps && total.ffs <= board.ffs && total.brams <= board.brams;
}

std::int64_t weight_memory_brams(std::span<const LayerSpec> layers, const HardwareProfile& hp) {
  std::uint64_t bits = 0;
  for (const LayerSpec& s : layers) {
    bits += static_cast<std::uint64_t>(s.n_outputs) * s.n_inputs * hp.weight_bits;
    bits += static_cast<std::uint64_t>(s.n_outputs) * hp.bias_bits;
  }
  const std::uint64_t bytes = (bits + 7) / 8;
  return static_cast<std::int64_t>((bytes + hp.bram_bytes - 1) / hp.bram_bytes);
}

ResourceReport estimate_resources(std::span<const LayerSpec> layers, const HardwareProfile& hp, bool include_pcie) {
  hp.validate();
  ResourceReport r;
  r.board = hp.board;
  if (!layers.empty()) {
    r.core = static_cast<std::int64_t>(hp.parallel_nodes) * hp.node_unit_cost + hp.backprop_unit_cost;
    r.core.brams += weight_memory_brams(layers, hp);
  }
  r.total = r.core;
  r.includes_pcie = include_pcie;
  if (include_pcie) r.total += hp.pcie_cost;
  return r;
}

ResourceReport estimate_resources(const NetworkConfig& cfg, const HardwareProfile& hp, bool include_pcie) {
  cfg.validate();
  return estimate_resources(std::span<const LayerSpec>(cfg.layers), hp, include_pcie);
}

namespace {

double one_decimal(double v) { return std::round(v * 10.0) / 10.0; }

}  // namespace

nlohmann::json cycle_report_json(const CycleReport& c) {
  return {{"layer_batches", c.layer_batches},
          {"forward_cycles", c.forward_cycles},
          {"backward_cycles", c.backward_cycles},
          {"cycles_per_sample", c.cycles_per_sample}};
}

nlohmann::json resource_report_json(const ResourceReport& r) {
  auto util = [&](std::int64_t used, std::int64_t cap) {
    const double pct = r.utilization_percent(used, cap);
    return nlohmann::json{{"percent", one_decimal(pct)}, {"percent_rounded", std::lround(pct)}};
  };
  return {{"core", resources_to_json(r.core)},
          {"total", resources_to_json(r.total)},
          {"includes_pcie", r.includes_pcie},
          {"board", resources_to_json(r.board)},
          {"utilization",
           {{"luts", util(r.total.luts, r.board.luts)},
            {"dsps", util(r.total.dsps, r.board.dsps)},
            {"ffs", util(r.total.ffs, r.board.ffs)},
            {"brams", util(r.total.brams, r.board.brams)}}},
          {"fits", r.fits()}};
}

nlohmann::json training_time_json(const TrainingTime& t) {
  return {{"total_cycles", t.total_cycles}, {"seconds", t.approx_seconds()}, {"seconds_exact", t.exact()}};
}

std::string estimate_table(const CycleReport& c, const ResourceReport& r, const TrainingTime* t) {
  std::ostringstream os;
  char line[160];
  os << "Cycles\n";
  os << "  layer batches    :";
  for (std::size_t b : c.layer_batches) os << ' ' << b;
  os << "\n";
  std::snprintf(line, sizeof line, "  forward          : %llu\n  backward         : %llu\n  per sample       : %llu\n",
                static_cast<unsigned long long>(c.forward_cycles), static_cast<unsigned long long>(c.backward_cycles),
                static_cast<unsigned long long>(c.cycles_per_sample));
  os << line;
  os << "Resources" << (r.includes_pcie ? " (with PCIe)" : "") << "\n";
  os << "  resource      used    capacity   util%  (rounded)\n";
  auto res = [&](const char* name, std::int64_t used, std::int64_t cap) {
    const double pct = r.utilization_percent(used, cap);
    std::snprintf(line, sizeof line, "  %-8s %9lld %11lld %7.1f  (%ld%%)\n", name, static_cast<long long>(used),
                  static_cast<long long>(cap), one_decimal(pct), std::lround(pct));
    os << line;
  };
  res("LUT", r.total.luts, r.board.luts);
  res("DSP", r.total.dsps, r.board.dsps);
  res("FF", r.total.ffs, r.board.ffs);
  res("BRAM", r.total.brams, r.board.brams);
  if (!r.fits()) os << "  WARNING: design exceeds board capacity\n";
  if (t) {
    std::snprintf(line, sizeof line, "Training time\n  total cycles     : %llu\n  seconds          : %.6g (exact %s)\n",
                  static_cast<unsigned long long>(t->total_cycles), t->approx_seconds(), t->exact().c_str());
    os << line;
  }
  return os.str();
}

}  // namespace mrfaccel
