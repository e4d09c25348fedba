#include "mrfaccel/model_io.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "binio.hpp"
#include "mrfaccel/error.hpp"

namespace mrfaccel {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'Q', 'N', 'E', 'T'};

json qparams_json(const QuantParams& p) { return {{"bits", p.bits}, {"scale", p.scale}, {"zero_point", p.zero_point}}; }

QuantParams qparams_from(const json& j) {
  QuantParams p{j.at("bits").get<int>(), j.at("scale").get<double>(), j.at("zero_point").get<std::int64_t>()};
  p.validate();
  return p;
}

class PayloadWriter {
 public:
  template <typename T, typename Range>
  void add(const std::string& name, const char* dtype, std::vector<std::size_t> shape, const Range& values) {
    const std::size_t offset = payload_.size();
    for (auto v : values) binio::put<T>(payload_, static_cast<T>(v));
    arrays_.push_back({{"name", name},
                       {"dtype", dtype},
                       {"shape", shape},
                       {"offset", offset},
                       {"nbytes", payload_.size() - offset}});
  }

  std::string finish(json header) {
    header["arrays"] = arrays_;
    const std::string text = header.dump();
    std::string out(kMagic, sizeof kMagic);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    out += payload_;
    return out;
  }

 private:
  std::string payload_;
  json arrays_ = json::array();
};

struct Container {
  json header;
  std::string_view payload;

  template <typename T>
  std::vector<T> array(const std::string& name, std::size_t expected_count, const char* dtype) const {
    for (const json& a : header.at("arrays")) {
      if (a.at("name") != name) continue;
      if (a.at("dtype") != dtype) throw Error("model: array '" + name + "' has unexpected dtype");
      const auto offset = a.at("offset").get<std::size_t>();
      const auto nbytes = a.at("nbytes").get<std::size_t>();
      if (nbytes != expected_count * sizeof(T) || offset > payload.size() || payload.size() - offset < nbytes) {
        throw Error("model: array '" + name + "' has inconsistent size");
      }
      binio::Reader r(payload.substr(offset, nbytes));
      std::vector<T> out(expected_count);
      for (T& v : out) v = r.get<T>();
      return out;
    }
    throw Error("model: missing array '" + name + "'");
  }
};

Container open_container(std::string_view bytes) {
  binio::Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4)) throw Error("model: bad magic, not a QNET file");
  const auto header_len = r.get<std::uint32_t>();
  Container c;
  try {
    c.header = json::parse(r.take(header_len));
  } catch (const json::exception& e) {
    throw Error(std::string("model: malformed header: ") + e.what());
  }
  if (c.header.value("format", "") != "mrfaccel-model") throw Error("model: unknown container format");
  if (c.header.value("version", 0) != kModelFormatVersion) throw Error("model: unsupported format version");
  c.payload = bytes.substr(r.position());
  return c;
}

json config_header(const NetworkConfig& cfg) {
  json layers = json::array();
  for (const auto& s : cfg.layers) {
    layers.push_back({{"n_inputs", s.n_inputs}, {"n_outputs", s.n_outputs}, {"activation", to_string(s.activation)}});
  }
  return {{"format", "mrfaccel-model"}, {"version", kModelFormatVersion}, {"input_dim", cfg.input_dim},
          {"layers", layers}};
}

NetworkConfig config_from_header(const json& h) {
  NetworkConfig cfg;
  cfg.input_dim = h.at("input_dim").get<std::size_t>();
  for (const json& l : h.at("layers")) {
    cfg.layers.push_back({l.at("n_inputs").get<std::size_t>(), l.at("n_outputs").get<std::size_t>(),
                          activation_from_string(l.at("activation").get<std::string>())});
  }
  cfg.validate();
  return cfg;
}

template <typename F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(std::string("model: malformed header: ") + e.what());
  }
}

}  // namespace

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Float: return "float";
    case ModelKind::Qat: return "qat";
    case ModelKind::Integer: return "integer";
  }
  return "?";
}

std::string encode_model(const RealModel& model) {
  model.config.validate();
  model.params.check_against(model.config);
  json header = config_header(model.config);
  header["kind"] = model.mode == TrainMode::Qat ? "qat" : "float";
  header["input_q"] = qparams_json(model.params.input_q);
  PayloadWriter w;
  for (std::size_t l = 0; l < model.config.layers.size(); ++l) {
    const LayerParams& p = model.params.layers[l];
    header["layers"][l]["output_q"] = qparams_json(p.output_q);
    const std::string prefix = "layer" + std::to_string(l);
    w.add<double>(prefix + ".weights", "f64", {p.weights.rows, p.weights.cols}, p.weights.data);
    w.add<double>(prefix + ".biases", "f64", {p.biases.size()}, p.biases);
  }
  return w.finish(std::move(header));
}

RealModel decode_model(std::string_view bytes) {
  const Container c = open_container(bytes);
  return guarded([&] {
    const std::string kind = c.header.at("kind").get<std::string>();
    if (kind != "float" && kind != "qat") throw Error("model: expected a float or qat model, found '" + kind + "'");
    RealModel m;
    m.mode = kind == "qat" ? TrainMode::Qat : TrainMode::Float;
    m.config = config_from_header(c.header);
    m.params.input_q = qparams_from(c.header.at("input_q"));
    for (std::size_t l = 0; l < m.config.layers.size(); ++l) {
      const LayerSpec& s = m.config.layers[l];
      const std::string prefix = "layer" + std::to_string(l);
      LayerParams p;
      p.weights = Matrix(s.n_outputs, s.n_inputs);
      p.weights.data = c.array<double>(prefix + ".weights", s.n_outputs * s.n_inputs, "f64");
      p.biases = c.array<double>(prefix + ".biases", s.n_outputs, "f64");
      p.output_q = qparams_from(c.header.at("layers").at(l).at("output_q"));
      m.params.layers.push_back(std::move(p));
    }
    return m;
  });
}

std::string encode_integer_model(const IntegerModel& model) {
  model.config.validate();
  json header = config_header(model.config);
  header["kind"] = "integer";
  header["input_q"] = qparams_json(model.input_q);
  PayloadWriter w;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const IntegerLayer& layer = model.layers[l];
    json& h = header["layers"][l];
    h["weight_q"] = qparams_json(layer.weights.qparams());
    h["bias_q"] = qparams_json(layer.biases.qparams());
    h["output_q"] = qparams_json(layer.output_q);
    h["acc_scale"] = layer.acc_scale;
    h["requant"] = {{"mantissa", layer.requant.mantissa}, {"shift", layer.requant.shift}};
    const std::string prefix = "layer" + std::to_string(l);
    if (layer.weights.qparams().bits != 8 || layer.biases.qparams().bits != 32) {
      throw Error("model: integer export expects 8-bit weights and 32-bit biases");
    }
    w.add<std::int8_t>(prefix + ".weights", "i8", layer.weights.shape(), layer.weights.values());
    w.add<std::int32_t>(prefix + ".biases", "i32", layer.biases.shape(), layer.biases.values());
  }
  return w.finish(std::move(header));
}

IntegerModel decode_integer_model(std::string_view bytes) {
  const Container c = open_container(bytes);
  return guarded([&] {
    if (c.header.at("kind") != "integer") throw Error("model: expected an integer model");
    IntegerModel m;
    m.config = config_from_header(c.header);
    m.input_q = qparams_from(c.header.at("input_q"));
    for (std::size_t l = 0; l < m.config.layers.size(); ++l) {
      const LayerSpec& s = m.config.layers[l];
      const json& h = c.header.at("layers").at(l);
      const std::string prefix = "layer" + std::to_string(l);
      IntegerLayer layer;
      layer.spec = s;
      const auto w8 = c.array<std::int8_t>(prefix + ".weights", s.n_outputs * s.n_inputs, "i8");
      const auto b32 = c.array<std::int32_t>(prefix + ".biases", s.n_outputs, "i32");
      layer.weights = QTensor({s.n_outputs, s.n_inputs}, std::vector<std::int64_t>(w8.begin(), w8.end()),
                              qparams_from(h.at("weight_q")));
      layer.biases = QTensor({s.n_outputs}, std::vector<std::int64_t>(b32.begin(), b32.end()),
                             qparams_from(h.at("bias_q")));
      layer.output_q = qparams_from(h.at("output_q"));
      layer.acc_scale = h.at("acc_scale").get<double>();
      layer.requant.mantissa = h.at("requant").at("mantissa").get<std::int32_t>();
      layer.requant.shift = h.at("requant").at("shift").get<int>();
      if (layer.requant.shift < 0 || layer.requant.shift > 62) throw Error("model: requant shift out of range");
      m.layers.push_back(std::move(layer));
    }
    return m;
  });
}

ModelKind peek_model_kind(std::string_view bytes) {
  const Container c = open_container(bytes);
  const std::string kind = c.header.value("kind", "");
  if (kind == "float") return ModelKind::Float;
  if (kind == "qat") return ModelKind::Qat;
  if (kind == "integer") return ModelKind::Integer;
  throw Error("model: unknown kind '" + kind + "'");
}

void save_model(const std::string& path, const RealModel& model) {
  binio::write_file_atomic(path, encode_model(model));
}

RealModel load_model(const std::string& path) { return decode_model(binio::read_file(path)); }

void save_integer_model(const std::string& path, const IntegerModel& model) {
  binio::write_file_atomic(path, encode_integer_model(model));
}

IntegerModel load_integer_model(const std::string& path) { return decode_integer_model(binio::read_file(path)); }

NetworkConfig network_config_from_json(const json& j) {
  try {
    const auto widths = j.at("widths").get<std::vector<std::size_t>>();
    return NetworkConfig::from_widths(j.at("input_dim").get<std::size_t>(), widths);
  } catch (const json::exception& e) {
    throw Error(std::string("network config: ") + e.what());
  }
}

json network_config_to_json(const NetworkConfig& cfg) { return {{"input_dim", cfg.input_dim}, {"widths", cfg.widths()}}; }

NetworkConfig load_network_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open network config '" + path + "'");
  try {
    return network_config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw Error("network config '" + path + "': " + e.what());
  }
}

}  // namespace mrfaccel
