#pragma once

// Model container: "QNET", u32 header length, a JSON header, then
// little-endian raw arrays. The header names every array with its dtype,
// shape and byte offset into the payload. Weight arrays are row-major with
// the output index major, one weight and one bias array per layer in order.

#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "mrfaccel/network.hpp"
#include "mrfaccel/training.hpp"

namespace mrfaccel {

inline constexpr int kModelFormatVersion = 1;

enum class ModelKind { Float, Qat, Integer };

std::string to_string(ModelKind k);

struct RealModel {
  NetworkConfig config;
  NetworkParams params;
  TrainMode mode = TrainMode::Float;
};

std::string encode_model(const RealModel& model);
RealModel decode_model(std::string_view bytes);

std::string encode_integer_model(const IntegerModel& model);
IntegerModel decode_integer_model(std::string_view bytes);

ModelKind peek_model_kind(std::string_view bytes);

void save_model(const std::string& path, const RealModel& model);
RealModel load_model(const std::string& path);
void save_integer_model(const std::string& path, const IntegerModel& model);
IntegerModel load_integer_model(const std::string& path);

/// {"input_dim": N, "widths": [...]}; activations follow the ReLU/Linear rule.
NetworkConfig network_config_from_json(const nlohmann::json& j);
nlohmann::json network_config_to_json(const NetworkConfig& cfg);
NetworkConfig load_network_config(const std::string& path);

}  // namespace mrfaccel
