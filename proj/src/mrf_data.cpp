#include "mrfaccel/mrf_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "binio.hpp"
#include "mrfaccel/error.hpp"

namespace mrfaccel {

namespace {

constexpr char kMagic[4] = {'Q', 'M', 'R', 'F'};
constexpr std::uint32_t kVersion = 1;

void check_range(const Range& r, const char* name) {
  if (std::isnan(r.lo) || std::isnan(r.hi) || r.lo > r.hi) {
    throw Error(std::string("dataset spec: empty ") + name + " range");
  }
}

}  // namespace

std::vector<std::complex<double>> signal_model(double t1_ms, double t2_ms, double phase, std::size_t length,
                                               SequenceTiming timing) {
  if (!(t1_ms > 0.0) || !(t2_ms > 0.0)) throw Error("signal model: T1 and T2 must be positive");
  const std::complex<double> rotation = std::polar(1.0, phase);
  std::vector<std::complex<double>> s(length);
  for (std::size_t k = 1; k <= length; ++k) {
    const double kk = static_cast<double>(k);
    const double recovery = 1.0 - std::exp(-kk * timing.tr_ms / t1_ms);
    const double decay = std::exp(-kk * timing.te_ms / t2_ms);
    s[k - 1] = rotation * (recovery * decay);
  }
  return s;
}

void add_noise(std::span<std::complex<double>> signal, double snr, rng::Engine& g) {
  if (!(snr > 0.0)) throw Error("add_noise: snr must be positive");
  if (std::isinf(snr) || signal.empty()) return;
  double power = 0.0;
  for (const auto& v : signal) power += std::norm(v);
  const double rms = std::sqrt(power / static_cast<double>(signal.size()));
  const double sigma = rms / (snr * std::numbers::sqrt2);
  for (auto& v : signal) {
    const double re = rng::normal(g);
    const double im = rng::normal(g);
    v += std::complex<double>(sigma * re, sigma * im);
  }
}

void DatasetSpec::validate() const {
  check_range(t1_ms, "T1");
  check_range(t2_ms, "T2");
  check_range(snr, "SNR");
  check_range(phase, "phase");
  if (!(t1_ms.lo > 0.0) || !(t2_ms.lo > 0.0)) throw Error("dataset spec: T1 and T2 ranges must be positive");
  if (!std::isfinite(t1_ms.hi) || !std::isfinite(t2_ms.hi)) throw Error("dataset spec: T1/T2 ranges must be finite");
  if (!(snr.lo > 0.0)) throw Error("dataset spec: SNR must be positive");
  if (std::isinf(snr.hi) && !std::isinf(snr.lo)) throw Error("dataset spec: SNR range cannot be half-infinite");
  if (!std::isfinite(phase.lo) || !std::isfinite(phase.hi)) throw Error("dataset spec: phase range must be finite");
  if (t2_ms.lo > t1_ms.hi) throw Error("dataset spec: T2 minimum exceeds T1 maximum, no sample can satisfy T2 <= T1");
  if (signal_length == 0) throw Error("dataset spec: signal length must be at least 1");
}

TrainSample generate_sample(const DatasetSpec& spec, std::size_t index) {
  rng::Engine g = rng::stream(spec.seed, index);
  double t1 = 0.0;
  double t2 = 0.0;
  do {
    t1 = rng::uniform(g, spec.t1_ms.lo, spec.t1_ms.hi);
    t2 = rng::uniform(g, spec.t2_ms.lo, spec.t2_ms.hi);
  } while (t2 > t1);
  const double snr = std::isinf(spec.snr.lo) ? spec.snr.lo : rng::uniform(g, spec.snr.lo, spec.snr.hi);
  const double phase = rng::uniform(g, spec.phase.lo, spec.phase.hi);

  auto s = signal_model(t1, t2, phase, spec.signal_length);
  add_noise(s, snr, g);

  TrainSample out;
  const std::size_t L = spec.signal_length;
  out.signal.resize(2 * L);
  for (std::size_t k = 0; k < L; ++k) {
    out.signal[k] = static_cast<float>(s[k].real());
    out.signal[L + k] = static_cast<float>(s[k].imag());
  }
  out.t1_ms = static_cast<float>(t1);
  out.t2_ms = static_cast<float>(t2);
  return out;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.samples.resize(spec.n_samples);
  const std::size_t workers =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(1, spec.n_samples / 1024));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < spec.n_samples; i += workers) ds.samples[i] = generate_sample(spec, i);
    });
  }
  for (auto& t : pool) t.join();
  return ds;
}

std::string encode_dataset(const Dataset& ds) {
  const DatasetSpec& s = ds.spec;
  std::string out;
  out.reserve(64 + ds.samples.size() * (2 * s.signal_length + 2) * sizeof(float));
  out.append(kMagic, sizeof kMagic);
  binio::put<std::uint32_t>(out, kVersion);
  binio::put<std::uint64_t>(out, ds.samples.size());
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.signal_length));
  for (const Range* r : {&s.t1_ms, &s.t2_ms, &s.snr, &s.phase}) {
    binio::put<double>(out, r->lo);
    binio::put<double>(out, r->hi);
  }
  binio::put<std::uint64_t>(out, s.seed);
  for (const TrainSample& sample : ds.samples) {
    if (sample.signal.size() != 2 * s.signal_length) throw Error("dataset: sample signal length mismatch");
    for (float v : sample.signal) binio::put<float>(out, v);
    binio::put<float>(out, sample.t1_ms);
    binio::put<float>(out, sample.t2_ms);
  }
  return out;
}

Dataset decode_dataset(std::string_view bytes) {
  binio::Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4)) throw Error("dataset: bad magic, not a QMRF file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw Error("dataset: unsupported version " + std::to_string(version));
  Dataset ds;
  const auto n = r.get<std::uint64_t>();
  ds.spec.n_samples = n;
  ds.spec.signal_length = r.get<std::uint32_t>();
  for (Range* rg : {&ds.spec.t1_ms, &ds.spec.t2_ms, &ds.spec.snr, &ds.spec.phase}) {
    rg->lo = r.get<double>();
    rg->hi = r.get<double>();
  }
  ds.spec.seed = r.get<std::uint64_t>();
  const std::size_t record = (2 * ds.spec.signal_length + 2) * sizeof(float);
  if (ds.spec.signal_length == 0 || r.remaining() != n * record) throw Error("dataset: payload size does not match header");
  ds.samples.resize(n);
  for (TrainSample& s : ds.samples) {
    s.signal.resize(2 * ds.spec.signal_length);
    for (float& v : s.signal) v = r.get<float>();
    s.t1_ms = r.get<float>();
    s.t2_ms = r.get<float>();
  }
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  binio::write_file_atomic(path.string(), encode_dataset(ds));
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(binio::read_file(path.string())); }

RegressionSet to_regression_set(const Dataset& ds, TargetScaling scaling) {
  RegressionSet set;
  set.input_dim = 2 * ds.spec.signal_length;
  set.target_dim = 2;
  set.inputs.reserve(ds.size() * set.input_dim);
  set.targets.reserve(ds.size() * 2);
  for (const TrainSample& s : ds.samples) {
    set.inputs.insert(set.inputs.end(), s.signal.begin(), s.signal.end());
    set.targets.push_back(s.t1_ms / scaling.t1_max_ms);
    set.targets.push_back(s.t2_ms / scaling.t2_max_ms);
  }
  return set;
}

T1T2 denormalize(std::span<const double> output, TargetScaling scaling) {
  if (output.size() != 2) throw Error("denormalize: expected 2 outputs");
  return {output[0] * scaling.t1_max_ms, output[1] * scaling.t2_max_ms};
}

std::vector<T1T2> targets_of(const Dataset& ds) {
  std::vector<T1T2> t;
  t.reserve(ds.size());
  for (const TrainSample& s : ds.samples) t.push_back({s.t1_ms, s.t2_ms});
  return t;
}

MetricsReport evaluate(std::span<const T1T2> preds, std::span<const T1T2> targets) {
  if (preds.size() != targets.size()) throw Error("evaluate: prediction and target counts differ");
  if (targets.empty()) throw Error("evaluate: no samples");
  double ape1 = 0, pe1 = 0, se1 = 0, ape2 = 0, pe2 = 0, se2 = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const T1T2& p = preds[i];
    const T1T2& t = targets[i];
    if (t.t1_ms == 0.0 || t.t2_ms == 0.0) throw Error("evaluate: zero target at sample " + std::to_string(i));
    const double r1 = (p.t1_ms - t.t1_ms) / t.t1_ms;
    const double r2 = (p.t2_ms - t.t2_ms) / t.t2_ms;
    ape1 += std::abs(r1);
    pe1 += r1;
    se1 += (p.t1_ms - t.t1_ms) * (p.t1_ms - t.t1_ms);
    ape2 += std::abs(r2);
    pe2 += r2;
    se2 += (p.t2_ms - t.t2_ms) * (p.t2_ms - t.t2_ms);
  }
  const double n = static_cast<double>(preds.size());
  MetricsReport m;
  m.count = preds.size();
  m.t1 = {100.0 * ape1 / n, 100.0 * pe1 / n, std::sqrt(se1 / n)};
  m.t2 = {100.0 * ape2 / n, 100.0 * pe2 / n, std::sqrt(se2 / n)};
  return m;
}

std::string metrics_json(const MetricsReport& m) {
  auto param = [](const ParamMetrics& p) {
    return nlohmann::json{{"mape_percent", p.mape_percent}, {"mpe_percent", p.mpe_percent}, {"rmse_ms", p.rmse_ms}};
  };
  nlohmann::json j{{"count", m.count}, {"t1", param(m.t1)}, {"t2", param(m.t2)}};
  return j.dump(2);
}

std::string metrics_table(const MetricsReport& original, const MetricsReport* quantized) {
  std::ostringstream os;
  char line[160];
  auto row = [&](const char* name, double a1, double b1, double a2, double b2, const char* fmt) {
    if (quantized) {
      std::snprintf(line, sizeof line, "%-10s|", name);
      os << line;
      for (double v : {a1, b1, a2, b2}) {
        std::snprintf(line, sizeof line, fmt, v);
        os << line << "|";
      }
    } else {
      std::snprintf(line, sizeof line, "%-10s|", name);
      os << line;
      for (double v : {a1, a2}) {
        std::snprintf(line, sizeof line, fmt, v);
        os << line << "|";
      }
    }
    os << "\n";
  };
  const MetricsReport& q = quantized ? *quantized : original;
  if (quantized) {
    os << "          |          T1           |          T2           |\n";
    os << "          | Original  | Quantized | Original  | Quantized |\n";
  } else {
    os << "          |    T1     |    T2     |\n";
  }
  row("MAPE (%)", original.t1.mape_percent, q.t1.mape_percent, original.t2.mape_percent, q.t2.mape_percent,
      " %9.2f ");
  row("MPE (%)", original.t1.mpe_percent, q.t1.mpe_percent, original.t2.mpe_percent, q.t2.mpe_percent, " %9.2f ");
  row("RMSE (ms)", original.t1.rmse_ms, q.t1.rmse_ms, original.t2.rmse_ms, q.t2.rmse_ms, " %9.1f ");
  return os.str();
}

}  // namespace mrfaccel
