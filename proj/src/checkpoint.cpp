#include "csikit/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "csikit/errors.hpp"

namespace csikit {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'C', 'M'};
constexpr uint16_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::ifstream& f, T& v) {
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    return f.gcount() == static_cast<std::streamsize>(sizeof(T));
}

} // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& config,
                     const std::vector<const Parameter*>& params) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("save_checkpoint: cannot open " + path);
    }
    f.write(kMagic, 4);
    write_pod(f, kVersion);
    const std::string cfg = config.dump();
    write_pod(f, static_cast<uint32_t>(cfg.size()));
    f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    write_pod(f, static_cast<uint32_t>(params.size()));
    for (const Parameter* p : params) {
        write_pod(f, static_cast<uint16_t>(p->name.size()));
        f.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_pod(f, static_cast<uint8_t>(p->value.rank()));
        for (int i = 0; i < p->value.rank(); ++i) {
            write_pod(f, static_cast<uint32_t>(p->value.dim(i)));
        }
        for (double v : p->value.data()) {
            write_pod(f, v);
        }
    }
    if (!f) {
        throw IoError("save_checkpoint: write failed for " + path);
    }
}

const Tensor* CheckpointData::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) {
            return &t;
        }
    }
    return nullptr;
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("load_checkpoint: cannot open " + path);
    }
    char magic[4];
    f.read(magic, 4);
    if (f.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
        throw BadMagicError("load_checkpoint: bad magic in " + path);
    }
    uint16_t version = 0;
    if (!read_pod(f, version)) {
        throw TruncatedError("load_checkpoint: truncated header");
    }
    if (version != kVersion) {
        throw VersionError("load_checkpoint: unsupported version " +
                           std::to_string(version));
    }
    uint32_t cfg_len = 0;
    if (!read_pod(f, cfg_len)) {
        throw TruncatedError("load_checkpoint: truncated header");
    }
    std::string cfg(cfg_len, '\0');
    f.read(cfg.data(), cfg_len);
    if (f.gcount() != static_cast<std::streamsize>(cfg_len)) {
        throw TruncatedError("load_checkpoint: truncated config block");
    }
    CheckpointData ck;
    try {
        ck.config = nlohmann::json::parse(cfg);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptStreamError(std::string("load_checkpoint: bad config json: ") +
                                 e.what());
    }
    uint32_t count = 0;
    if (!read_pod(f, count)) {
        throw TruncatedError("load_checkpoint: truncated tensor table");
    }
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = 0;
        if (!read_pod(f, name_len)) {
            throw TruncatedError("load_checkpoint: truncated tensor header");
        }
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        if (f.gcount() != static_cast<std::streamsize>(name_len)) {
            throw TruncatedError("load_checkpoint: truncated tensor name");
        }
        uint8_t rank = 0;
        if (!read_pod(f, rank)) {
            throw TruncatedError("load_checkpoint: truncated tensor rank");
        }
        Shape shape(rank);
        size_t n = 1;
        for (uint8_t r2 = 0; r2 < rank; ++r2) {
            uint32_t dim = 0;
            if (!read_pod(f, dim)) {
                throw TruncatedError("load_checkpoint: truncated tensor dims");
            }
            shape[r2] = static_cast<int>(dim);
            n *= dim;
        }
        std::vector<double> values(n);
        for (size_t j = 0; j < n; ++j) {
            if (!read_pod(f, values[j])) {
                throw TruncatedError("load_checkpoint: payload ends inside tensor " +
                                     name);
            }
        }
        ck.tensors.emplace_back(std::move(name),
                                Tensor(std::move(shape), std::move(values)));
    }
    return ck;
}

void restore_parameters(const CheckpointData& ck,
                        const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        const Tensor* src = ck.find(p->name);
        if (src == nullptr) {
            throw ConfigError("checkpoint is missing tensor " + p->name);
        }
        if (src->shape() != p->value.shape()) {
            throw ConfigError("checkpoint tensor " + p->name + " has wrong shape");
        }
        auto dst = p->value.mutable_data();
        auto sv = src->data();
        std::copy(sv.begin(), sv.end(), dst.begin());
    }
}

nlohmann::json conformer_config_to_json(const ConformerConfig& cfg) {
    return nlohmann::json{{"n_layers", cfg.n_layers},
                          {"d_model", cfg.d_model},
                          {"seq_len", cfg.seq_len},
                          {"n_heads", cfg.n_heads},
                          {"ff_expansion", cfg.ff_expansion},
                          {"conv_expansion", cfg.conv_expansion},
                          {"conv_kernel", cfg.conv_kernel},
                          {"dropout_rate", cfg.dropout_rate},
                          {"conv_module", cfg.conv_module_enabled},
                          {"cr", cfg.cr}};
}

ConformerConfig conformer_config_from_json(const nlohmann::json& j) {
    ConformerConfig cfg;
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.seq_len = j.at("seq_len").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.ff_expansion = j.at("ff_expansion").get<int>();
    cfg.conv_expansion = j.at("conv_expansion").get<int>();
    cfg.conv_kernel = j.at("conv_kernel").get<int>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.conv_module_enabled = j.at("conv_module").get<bool>();
    cfg.cr = j.at("cr").get<int>();
    cfg.validate();
    return cfg;
}

} // namespace csikit
