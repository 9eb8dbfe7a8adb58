#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bitforge/dataset.hpp"
#include "bitforge/model.hpp"
#include "bitforge/quant.hpp"
#include "bitforge/tensor.hpp"

namespace bitforge {
namespace io {

// Checkpoint layout: magic "BDCK", u32 version, u32 metadata length, canonical
// JSON metadata (sorted keys, no whitespace), then raw little-endian payloads
// in metadata declaration order. f64 tensors are 8 bytes per element, codes
// one byte. Documented in docs/FORMATS.md.
inline constexpr uint32_t kCheckpointVersion = 1;

struct ClipBoundsEntry {
    std::string layer;
    double alpha = 0.0;
    double beta = 0.0;
};

struct Checkpoint {
    std::string kind;  // "model" | "quantized_model" | "raw"
    std::optional<model::ModelConfig> model_config;
    std::optional<quant::QuantConfig> quant_config;
    std::vector<ClipBoundsEntry> clip_bounds;
    nlohmann::json extra;  // run-config echo and other free-form metadata

    std::vector<std::pair<std::string, Tensor>> tensors;
    std::vector<std::pair<std::string, quant::QuantizedTensor>> quantized;

    // reconstructs a runnable model, dequantizing quantized layers
    model::Model to_model() const;
};

void save_model_checkpoint(const std::string& path, const model::Model& m,
                           const nlohmann::json& extra = nlohmann::json::object());

void save_quantized_checkpoint(
    const std::string& path, const model::Model& student,
    const std::vector<std::pair<std::string, quant::QuantizedTensor>>& quantized,
    const quant::QuantConfig& config, const std::vector<ClipBoundsEntry>& clip_bounds,
    const nlohmann::json& extra = nlohmann::json::object());

// config-only checkpoint with no tensors
void save_raw_checkpoint(const std::string& path, const nlohmann::json& extra);

Checkpoint load_checkpoint(const std::string& path);

// newline-delimited JSON records: prompt ids, response ids, source tag
void save_dataset(const std::string& path, const data::Dataset& ds);
data::Dataset load_dataset(const std::string& path);

nlohmann::json model_config_to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json quant_config_to_json(const quant::QuantConfig& c);
quant::QuantConfig quant_config_from_json(const nlohmann::json& j);

}  // namespace io
}  // namespace bitforge
