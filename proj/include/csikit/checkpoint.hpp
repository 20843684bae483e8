#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "csikit/conformer.hpp"

namespace csikit {

/// Checkpoint file: "CSCM" | u16 version | u32 config json length | config
/// json bytes | u32 tensor count | per tensor: u16 name length, name bytes,
/// u8 rank, u32 dims, float64 values. Everything little endian; round trips
/// are byte exact.
void save_checkpoint(const std::string& path, const nlohmann::json& config,
                     const std::vector<const Parameter*>& params);

struct CheckpointData {
    nlohmann::json config;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

CheckpointData load_checkpoint(const std::string& path);

/// Copies checkpoint tensors into the given parameters, matched by name.
/// Missing names or shape mismatches are errors.
void restore_parameters(const CheckpointData& ck,
                        const std::vector<Parameter*>& params);

nlohmann::json conformer_config_to_json(const ConformerConfig& cfg);
ConformerConfig conformer_config_from_json(const nlohmann::json& j);

} // namespace csikit
