#pragma once

#include <string>

#include <json.hpp>

namespace bitforge {
namespace pipeline {

// Command entry points shared by the C API and the CLI. Each takes a merged
// options object (flag > config file > default), writes its declared outputs
// plus one manifest next to the primary output, validates what it wrote, and
// returns the manifest. Any failure throws bitforge::Error; on success every
// declared output exists.
//
// Options may carry "config": a JSON file whose keys fill in anything the
// caller did not set explicitly.

nlohmann::json run_pretrain(const nlohmann::json& options);
nlohmann::json run_gen_data(const nlohmann::json& options);
nlohmann::json run_quantize(const nlohmann::json& options);
nlohmann::json run_train(const nlohmann::json& options);
nlohmann::json run_eval(const nlohmann::json& options);
nlohmann::json run_demo_mixture(const nlohmann::json& options);
nlohmann::json run_compare(const nlohmann::json& options);

// "seed" option, else the BITFORGE_SEED environment variable, else 0
uint64_t resolve_seed(const nlohmann::json& options);

// file-config merge: explicit options win over file keys
nlohmann::json merge_with_config_file(const nlohmann::json& options);

}  // namespace pipeline
}  // namespace bitforge
