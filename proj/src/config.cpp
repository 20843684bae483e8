#include "csikit/config.hpp"

#include <cstdio>
#include <fstream>

#include "csikit/errors.hpp"

namespace csikit {

namespace {

nlohmann::json default_config() {
    return nlohmann::json{
        {"channel",
         {{"n_t", 32},
          {"n_c", 1024},
          {"n_a", 32},
          {"paths", 4},
          {"max_delay_tap", 24},
          {"seed", 1001}}},
        {"model",
         {{"n_layers", 4},
          {"d_model", 64},
          {"seq_len", 32},
          {"n_heads", 8},
          {"ff_expansion", 4},
          {"conv_expansion", 2},
          {"conv_kernel", 31},
          {"dropout_rate", 0.1},
          {"conv_module", true},
          {"cr", 4},
          {"seed", 2002}}},
        {"quantizer",
         {{"kind", "none"}, {"bits", 5}, {"embed_dim", 32}, {"mu", 255.0}}},
        {"training",
         {{"epochs", 50},
          {"batch_size", 16},
          {"lr_min", 5e-5},
          {"lr_max", 2e-4},
          {"warmup_epochs", 3},
          {"beta", 0.25},
          {"seed", 3003},
          {"val_every", 1}}},
        {"data",
         {{"dir", "data"},
          {"count", 1500},
          {"split", {10, 3, 2}},
          {"import_path", ""},
          {"import_scale", 0.25}}},
        {"compare",
         {{"bits", {3, 4, 5}},
          {"quantizers", {"uniform", "mulaw", "basevv", "svqvae"}},
          {"finetune_epochs", 6}}},
        {"run_dir", ""}};
}

void check_leaf_type(const nlohmann::json& slot, const nlohmann::json& value,
                     const std::string& path);

void merge_checked(nlohmann::json& base, const nlohmann::json& overlay,
                   const std::string& prefix) {
    if (!overlay.is_object()) {
        throw ConfigError("config: expected an object at '" +
                          (prefix.empty() ? "<root>" : prefix) + "'");
    }
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) {
            throw ConfigError("config: unknown key '" + path + "'");
        }
        nlohmann::json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_checked(slot, it.value(), path);
        } else {
            check_leaf_type(slot, it.value(), path);
            slot = it.value();
        }
    }
}

// Parses the value side of --set key=value: JSON when it parses as JSON,
// plain string otherwise.
nlohmann::json parse_override_value(const std::string& text) {
    const auto parsed = nlohmann::json::parse(text, nullptr, false);
    if (!parsed.is_discarded()) {
        return parsed;
    }
    return nlohmann::json(text);
}

void check_leaf_type(const nlohmann::json& slot, const nlohmann::json& value,
                     const std::string& path) {
    if (slot.is_number() && !value.is_number()) {
        throw ConfigError("config: key '" + path + "' expects a number");
    }
    if (slot.is_string() && !value.is_string()) {
        throw ConfigError("config: key '" + path + "' expects a string");
    }
    if (slot.is_boolean() && !value.is_boolean()) {
        throw ConfigError("config: key '" + path + "' expects a boolean");
    }
    if (slot.is_array() && !value.is_array()) {
        throw ConfigError("config: key '" + path + "' expects an array");
    }
}

void apply_override(nlohmann::json& root, const std::string& kv,
                    std::set<std::string>& touched) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must look like key.path=value: " + kv);
    }
    const std::string keypath = kv.substr(0, eq);
    const nlohmann::json value = parse_override_value(kv.substr(eq + 1));

    std::vector<std::string> keys;
    for (size_t pos = 0; pos <= keypath.size();) {
        const size_t dot = keypath.find('.', pos);
        if (dot == std::string::npos) {
            keys.push_back(keypath.substr(pos));
            break;
        }
        keys.push_back(keypath.substr(pos, dot - pos));
        pos = dot + 1;
    }

    nlohmann::json* node = &root;
    std::string walked;
    for (size_t i = 0; i < keys.size(); ++i) {
        walked = walked.empty() ? keys[i] : walked + "." + keys[i];
        if (!node->is_object() || !node->contains(keys[i])) {
            throw ConfigError("config: unknown key '" + walked + "'");
        }
        if (i + 1 == keys.size()) {
            nlohmann::json& slot = (*node)[keys[i]];
            if (slot.is_object()) {
                throw ConfigError("config: '" + walked + "' is a section, not a value");
            }
            check_leaf_type(slot, value, walked);
            slot = value;
        } else {
            node = &(*node)[keys[i]];
        }
    }
    touched.insert(keys[0]);
}

} // namespace

std::string json_hash(const nlohmann::json& j) {
    const std::string s = j.dump();
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string RunConfig::config_hash() const { return json_hash(resolved); }

RunConfig load_run_config(const std::string& config_path,
                          const std::vector<std::string>& overrides) {
    nlohmann::json cfg = default_config();
    std::set<std::string> touched;

    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) {
            throw IoError("cannot open config file " + config_path);
        }
        nlohmann::json file_cfg;
        try {
            file_cfg = nlohmann::json::parse(f);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
        merge_checked(cfg, file_cfg, "");
        for (auto it = file_cfg.begin(); it != file_cfg.end(); ++it) {
            touched.insert(it.key());
        }
    }
    for (const std::string& kv : overrides) {
        apply_override(cfg, kv, touched);
    }

    RunConfig rc;
    rc.resolved = cfg;
    rc.touched = std::move(touched);

    const nlohmann::json& ch = cfg["channel"];
    rc.channel.n_t = ch["n_t"].get<int>();
    rc.channel.n_c = ch["n_c"].get<int>();
    rc.channel.n_a = ch["n_a"].get<int>();
    rc.channel.paths = ch["paths"].get<int>();
    rc.channel.max_delay_tap = ch["max_delay_tap"].get<int>();
    rc.channel.seed = ch["seed"].get<uint64_t>();
    rc.channel.validate();

    const nlohmann::json& m = cfg["model"];
    rc.model.n_layers = m["n_layers"].get<int>();
    rc.model.d_model = m["d_model"].get<int>();
    rc.model.seq_len = m["seq_len"].get<int>();
    rc.model.n_heads = m["n_heads"].get<int>();
    rc.model.ff_expansion = m["ff_expansion"].get<int>();
    rc.model.conv_expansion = m["conv_expansion"].get<int>();
    rc.model.conv_kernel = m["conv_kernel"].get<int>();
    rc.model.dropout_rate = m["dropout_rate"].get<double>();
    rc.model.conv_module_enabled = m["conv_module"].get<bool>();
    rc.model.cr = m["cr"].get<int>();
    rc.model_seed = m["seed"].get<uint64_t>();
    rc.model.validate();

    const nlohmann::json& q = cfg["quantizer"];
    rc.quantizer.kind = quant_kind_from_name(q["kind"].get<std::string>());
    rc.quantizer.bits = q["bits"].get<int>();
    rc.quantizer.embed_dim = q["embed_dim"].get<int>();
    rc.quantizer.mu = q["mu"].get<double>();
    rc.quantizer.init_seed = rc.model_seed ^ 0x51C0DEULL;
    rc.quantizer.validate();

    rc.training = train_config_from_json(cfg["training"]);

    const nlohmann::json& d = cfg["data"];
    rc.data.dir = d["dir"].get<std::string>();
    rc.data.count = d["count"].get<int>();
    rc.data.split = d["split"].get<std::vector<int>>();
    rc.data.import_path = d["import_path"].get<std::string>();
    rc.data.import_scale = d["import_scale"].get<double>();
    if (rc.data.split.size() != 3 || rc.data.split[0] < 1 || rc.data.split[1] < 1 ||
        rc.data.split[2] < 1) {
        throw ConfigError("data.split must be three positive integers");
    }

    const nlohmann::json& cp = cfg["compare"];
    rc.compare.bits = cp["bits"].get<std::vector<int>>();
    rc.compare.quantizers = cp["quantizers"].get<std::vector<std::string>>();
    rc.compare.finetune_epochs = cp["finetune_epochs"].get<int>();
    for (const std::string& name : rc.compare.quantizers) {
        if (quant_kind_from_name(name) == QuantKind::none) {
            throw ConfigError("compare.quantizers cannot include 'none'");
        }
    }
    if (rc.compare.finetune_epochs < 1) {
        throw ConfigError("compare.finetune_epochs must be positive");
    }

    rc.run_dir = cfg["run_dir"].get<std::string>();
    if (rc.run_dir.empty()) {
        const char* env = std::getenv("CSIKIT_RUN_DIR");
        rc.run_dir = env != nullptr ? env : "runs";
    }
    return rc;
}

} // namespace csikit
