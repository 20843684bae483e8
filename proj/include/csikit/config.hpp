#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "csikit/channel.hpp"
#include "csikit/conformer.hpp"
#include "csikit/quantizer.hpp"
#include "csikit/training.hpp"

namespace csikit {

struct DataConfig {
    std::string dir = "data";
    int count = 1500;
    std::vector<int> split = {10, 3, 2}; // train : val : test
    std::string import_path;             // raw float32 import instead of synthesis
    double import_scale = 0.25;
};

struct CompareConfig {
    std::vector<int> bits = {3, 4, 5};
    std::vector<std::string> quantizers = {"uniform", "mulaw", "basevv", "svqvae"};
    int finetune_epochs = 6;
};

/// One declarative configuration for every command: defaults, overlaid by an
/// optional JSON file, overlaid by dotted --set key=value overrides.
/// Unknown keys are rejected at every level.
struct RunConfig {
    ChannelConfig channel;
    ConformerConfig model;
    uint64_t model_seed = 2002;
    QuantizerSpec quantizer;
    TrainConfig training;
    DataConfig data;
    CompareConfig compare;
    std::string run_dir; // empty -> $CSIKIT_RUN_DIR or "runs"

    nlohmann::json resolved;             // full merged config
    std::set<std::string> touched;       // top-level sections set by the user

    std::string config_hash() const;     // FNV-1a of the canonical dump
    bool section_touched(const std::string& s) const {
        return touched.count(s) > 0;
    }
};

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides);

std::string json_hash(const nlohmann::json& j);

} // namespace csikit
