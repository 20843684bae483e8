#include "csikit/quantizer.hpp"

#include <algorithm>
#include <cmath>

#include "csikit/errors.hpp"

namespace csikit {

std::string quant_kind_name(QuantKind k) {
    switch (k) {
    case QuantKind::none: return "none";
    case QuantKind::svqvae: return "svqvae";
    case QuantKind::uniform: return "uniform";
    case QuantKind::mulaw: return "mulaw";
    case QuantKind::basevv: return "basevv";
    }
    return "none";
}

QuantKind quant_kind_from_name(const std::string& name) {
    if (name == "none") return QuantKind::none;
    if (name == "svqvae") return QuantKind::svqvae;
    if (name == "uniform") return QuantKind::uniform;
    if (name == "mulaw") return QuantKind::mulaw;
    if (name == "basevv") return QuantKind::basevv;
    throw ConfigError("unknown quantizer kind: " + name);
}

void QuantizerSpec::validate() const {
    if (kind == QuantKind::none) {
        return;
    }
    if (bits < 3 || bits > 5) {
        throw ConfigError("quantizer bits must be in {3, 4, 5}");
    }
    if ((kind == QuantKind::svqvae || kind == QuantKind::basevv) && embed_dim < 1) {
        throw ConfigError("embed_dim must be positive");
    }
    if (kind == QuantKind::mulaw && mu <= 0.0) {
        throw ConfigError("mu must be positive");
    }
    if (range_set && !(lo < hi)) {
        throw ConfigError("quantizer range requires lo < hi");
    }
}

nlohmann::json QuantizerSpec::to_json() const {
    return nlohmann::json{{"kind", quant_kind_name(kind)}, {"bits", bits},
                          {"embed_dim", embed_dim},        {"mu", mu},
                          {"lo", lo},                      {"hi", hi},
                          {"range_set", range_set},        {"init_seed", init_seed}};
}

QuantizerSpec QuantizerSpec::from_json(const nlohmann::json& j) {
    QuantizerSpec s;
    s.kind = quant_kind_from_name(j.at("kind").get<std::string>());
    s.bits = j.at("bits").get<int>();
    s.embed_dim = j.at("embed_dim").get<int>();
    s.mu = j.at("mu").get<double>();
    s.lo = j.at("lo").get<double>();
    s.hi = j.at("hi").get<double>();
    s.range_set = j.at("range_set").get<bool>();
    s.init_seed = j.at("init_seed").get<uint64_t>();
    s.validate();
    return s;
}

void Codebook::init(const std::string& prefix, int k_entries, int dim, Rng& rng) {
    if (k_entries < 1 || (k_entries & (k_entries - 1)) != 0) {
        throw ConfigError("codebook size must be a power of two");
    }
    k = k_entries;
    d = dim;
    const double bound = 1.0 / static_cast<double>(k);
    embeddings = Parameter(prefix + ".embeddings",
                           Tensor::uniform({k, d}, -bound, bound, rng));
}

int nearest_neighbor(std::span<const double> v, const Codebook& cb) {
    if (cb.k < 1) {
        throw ConfigError("nearest_neighbor: empty codebook");
    }
    if (static_cast<int>(v.size()) != cb.d) {
        throw DimensionError("nearest_neighbor: vector length != codebook dim");
    }
    auto table = cb.embeddings.value.data();
    int best = 0;
    double best_d2 = 0.0;
    for (int row = 0; row < cb.k; ++row) {
        const double* e = table.data() + static_cast<size_t>(row) * cb.d;
        double d2 = 0.0;
        for (int j = 0; j < cb.d; ++j) {
            const double diff = v[static_cast<size_t>(j)] - e[j];
            d2 += diff * diff;
        }
        if (row == 0 || d2 < best_d2) {
            best = row;
            best_d2 = d2;
        }
    }
    return best;
}

Tensor vq_loss(const Tensor& q_s, const Tensor& q_r, double beta) {
    if (q_s.shape() != q_r.shape()) {
        throw DimensionError("vq_loss: shape mismatch");
    }
    Tensor codebook_term = sum(square(sub(detach(q_s), q_r)));
    Tensor commit_term = sum(square(sub(q_s, detach(q_r))));
    return add(codebook_term, scale(commit_term, beta));
}

// ---- scalar primitives -----------------------------------------------------

int uniform_level(double x, int bits, double lo, double hi) {
    if (!(lo < hi)) {
        throw ConfigError("uniform_level: lo < hi required");
    }
    const int levels = 1 << bits;
    const double t = (x - lo) / (hi - lo);
    int lvl = static_cast<int>(std::floor(t * levels));
    return std::clamp(lvl, 0, levels - 1);
}

double uniform_center(int level, int bits, double lo, double hi) {
    const int levels = 1 << bits;
    return lo + (static_cast<double>(level) + 0.5) * (hi - lo) / levels;
}

double mulaw_compand(double u, double mu) {
    const double s = u < 0.0 ? -1.0 : 1.0;
    return s * std::log1p(mu * std::abs(u)) / std::log1p(mu);
}

double mulaw_expand(double y, double mu) {
    const double s = y < 0.0 ? -1.0 : 1.0;
    return s * (std::pow(1.0 + mu, std::abs(y)) - 1.0) / mu;
}

// ---- factory ----------------------------------------------------------------

std::unique_ptr<QuantizerModule> make_quantizer(const QuantizerSpec& spec,
                                                int codeword_len) {
    spec.validate();
    switch (spec.kind) {
    case QuantKind::none:
        return nullptr;
    case QuantKind::svqvae:
        return std::make_unique<SvqVaeQuantizer>(spec, codeword_len);
    case QuantKind::basevv:
        return std::make_unique<BaseVvQuantizer>(spec, codeword_len);
    case QuantKind::uniform:
    case QuantKind::mulaw:
        return std::make_unique<ScalarQuantizer>(spec.kind, spec, codeword_len);
    }
    return nullptr;
}

// ---- SvqVaeQuantizer ----------------------------------------------------------

SvqVaeQuantizer::SvqVaeQuantizer(const QuantizerSpec& spec, int codeword_len)
    : spec_(spec), codeword_len_(codeword_len) {
    spec_.kind = QuantKind::svqvae;
    const int k = 1 << spec_.bits;
    const int d = spec_.embed_dim;
    Rng rng = Rng::stream(spec_.init_seed, 0xC0DEB00C);
    const double up_bound = 1.0; // fan-in of a 1 -> D pointwise conv is 1
    up_w_ = Parameter("quantizer.up.weight",
                      Tensor::uniform({1, d}, -up_bound, up_bound, rng));
    up_b_ = Parameter("quantizer.up.bias", Tensor::zeros({d}));
    codebook_.init("quantizer.codebook", k, d, rng);
    const double down_bound = 1.0 / std::sqrt(static_cast<double>(d));
    down_w_ = Parameter("quantizer.down.weight",
                        Tensor::uniform({d, 1}, -down_bound, down_bound, rng));
    down_b_ = Parameter("quantizer.down.bias", Tensor::zeros({1}));
}

std::vector<int> SvqVaeQuantizer::lift_and_lookup(std::span<const double> codeword,
                                                  std::vector<double>* q_s_out) const {
    if (static_cast<int>(codeword.size()) != codeword_len_) {
        throw DimensionError("svqvae: codeword length mismatch");
    }
    const int d = codebook_.d;
    auto wv = up_w_.value.data();
    auto bv = up_b_.value.data();
    std::vector<double> lifted(static_cast<size_t>(d));
    std::vector<int> indices(codeword.size());
    if (q_s_out != nullptr) {
        q_s_out->assign(codeword.size() * static_cast<size_t>(d), 0.0);
    }
    for (size_t l = 0; l < codeword.size(); ++l) {
        for (int j = 0; j < d; ++j) {
            lifted[static_cast<size_t>(j)] = codeword[l] * wv[j] + bv[j];
        }
        if (q_s_out != nullptr) {
            std::copy(lifted.begin(), lifted.end(),
                      q_s_out->begin() + l * static_cast<size_t>(d));
        }
        indices[l] = nearest_neighbor(lifted, codebook_);
    }
    return indices;
}

QuantizerModule::TrainOut SvqVaeQuantizer::forward_train(const Tensor& codeword,
                                                         double beta) {
    const int len = codeword.dim(0);
    if (len != codeword_len_) {
        throw DimensionError("svqvae: codeword length mismatch");
    }
    Tensor col = reshape(codeword, {len, 1});
    Tensor q_s = add_rowvec(matmul(col, up_w_.value), up_b_.value); // [L x D]

    std::vector<int> indices(static_cast<size_t>(len));
    auto qv = q_s.data();
    for (int l = 0; l < len; ++l) {
        indices[static_cast<size_t>(l)] = nearest_neighbor(
            qv.subspan(static_cast<size_t>(l) * codebook_.d,
                       static_cast<size_t>(codebook_.d)),
            codebook_);
    }
    Tensor q_r = gather_rows(codebook_.embeddings.value, indices);

    TrainOut out;
    out.vq_codebook = sum(square(sub(detach(q_s), q_r)));
    out.vq_commit = scale(sum(square(sub(q_s, detach(q_r)))), beta);

    Tensor st = straight_through(q_s, q_r);
    Tensor y = add_rowvec(matmul(st, down_w_.value), down_b_.value);
    out.cw_hat = reshape(y, {len});
    return out;
}

Bitstream SvqVaeQuantizer::quantize(std::span<const double> codeword) const {
    return quantize_with_lift(codeword, nullptr);
}

Bitstream SvqVaeQuantizer::quantize_with_lift(std::span<const double> codeword,
                                              std::vector<double>* q_s_out) const {
    const std::vector<int> indices = lift_and_lookup(codeword, q_s_out);
    return make_bitstream(QuantizerId::svqvae, codeword_len_, spec_.bits,
                          codebook_.d, indices);
}

std::vector<double> SvqVaeQuantizer::dequantize(const Bitstream& bs) const {
    if (bs.id != QuantizerId::svqvae || bs.codeword_len != codeword_len_ ||
        bs.bits != spec_.bits || bs.embed_dim != codebook_.d) {
        throw ConfigError("svqvae: bitstream header does not match quantizer");
    }
    const std::vector<int> indices = bitstream_indices(bs);
    auto table = codebook_.embeddings.value.data();
    auto wv = down_w_.value.data();
    const double bias = down_b_.value.at(0);
    std::vector<double> out(indices.size());
    for (size_t l = 0; l < indices.size(); ++l) {
        if (indices[l] >= codebook_.k) {
            throw CorruptStreamError("svqvae: index exceeds codebook size");
        }
        const double* row = table.data() + static_cast<size_t>(indices[l]) * codebook_.d;
        double acc = bias;
        for (int j = 0; j < codebook_.d; ++j) {
            acc += row[j] * wv[j];
        }
        out[l] = acc;
    }
    return out;
}

std::vector<Parameter*> SvqVaeQuantizer::parameters() {
    return {&up_w_, &up_b_, &codebook_.embeddings, &down_w_, &down_b_};
}

double SvqVaeQuantizer::bits_per_csi() const {
    return static_cast<double>(codeword_len_) * spec_.bits;
}

QuantizerSpec SvqVaeQuantizer::spec() const { return spec_; }

// ---- BaseVvQuantizer -----------------------------------------------------------

BaseVvQuantizer::BaseVvQuantizer(const QuantizerSpec& spec, int codeword_len)
    : spec_(spec), codeword_len_(codeword_len) {
    spec_.kind = QuantKind::basevv;
    if (codeword_len_ % spec_.embed_dim != 0) {
        throw ConfigError("basevv: embed_dim must divide the codeword length");
    }
    Rng rng = Rng::stream(spec_.init_seed, 0xBA5EC0DE);
    codebook_.init("quantizer.codebook", 1 << spec_.bits, spec_.embed_dim, rng);
}

QuantizerModule::TrainOut BaseVvQuantizer::forward_train(const Tensor& codeword,
                                                         double beta) {
    const int len = codeword.dim(0);
    if (len != codeword_len_) {
        throw DimensionError("basevv: codeword length mismatch");
    }
    const int d = codebook_.d;
    const int blocks = len / d;
    Tensor q_s = reshape(codeword, {blocks, d});

    std::vector<int> indices(static_cast<size_t>(blocks));
    auto qv = q_s.data();
    for (int b = 0; b < blocks; ++b) {
        indices[static_cast<size_t>(b)] = nearest_neighbor(
            qv.subspan(static_cast<size_t>(b) * d, static_cast<size_t>(d)),
            codebook_);
    }
    Tensor q_r = gather_rows(codebook_.embeddings.value, indices);

    TrainOut out;
    out.vq_codebook = sum(square(sub(detach(q_s), q_r)));
    out.vq_commit = scale(sum(square(sub(q_s, detach(q_r)))), beta);
    out.cw_hat = reshape(straight_through(q_s, q_r), {len});
    return out;
}

Bitstream BaseVvQuantizer::quantize(std::span<const double> codeword) const {
    if (static_cast<int>(codeword.size()) != codeword_len_) {
        throw DimensionError("basevv: codeword length mismatch");
    }
    const int d = codebook_.d;
    const int blocks = codeword_len_ / d;
    std::vector<int> indices(static_cast<size_t>(blocks));
    for (int b = 0; b < blocks; ++b) {
        indices[static_cast<size_t>(b)] = nearest_neighbor(
            codeword.subspan(static_cast<size_t>(b) * d, static_cast<size_t>(d)),
            codebook_);
    }
    return make_bitstream(QuantizerId::basevv, codeword_len_, spec_.bits, d,
                          indices);
}

std::vector<double> BaseVvQuantizer::dequantize(const Bitstream& bs) const {
    if (bs.id != QuantizerId::basevv || bs.codeword_len != codeword_len_ ||
        bs.bits != spec_.bits || bs.embed_dim != codebook_.d) {
        throw ConfigError("basevv: bitstream header does not match quantizer");
    }
    const std::vector<int> indices = bitstream_indices(bs);
    auto table = codebook_.embeddings.value.data();
    std::vector<double> out(static_cast<size_t>(codeword_len_));
    const int d = codebook_.d;
    for (size_t b = 0; b < indices.size(); ++b) {
        if (indices[b] >= codebook_.k) {
            throw CorruptStreamError("basevv: index exceeds codebook size");
        }
        const double* row = table.data() + static_cast<size_t>(indices[b]) * d;
        std::copy(row, row + d, out.begin() + b * static_cast<size_t>(d));
    }
    return out;
}

std::vector<Parameter*> BaseVvQuantizer::parameters() {
    return {&codebook_.embeddings};
}

double BaseVvQuantizer::bits_per_csi() const {
    return static_cast<double>(codeword_len_ / codebook_.d) * spec_.bits;
}

QuantizerSpec BaseVvQuantizer::spec() const { return spec_; }

// ---- ScalarQuantizer -----------------------------------------------------------

ScalarQuantizer::ScalarQuantizer(QuantKind kind, const QuantizerSpec& spec,
                                 int codeword_len)
    : kind_(kind), spec_(spec), codeword_len_(codeword_len) {
    spec_.kind = kind;
    if (kind != QuantKind::uniform && kind != QuantKind::mulaw) {
        throw ConfigError("ScalarQuantizer: kind must be uniform or mulaw");
    }
}

void ScalarQuantizer::observe(std::span<const double> codeword) {
    for (double v : codeword) {
        if (!spec_.range_set) {
            spec_.lo = v;
            spec_.hi = v;
            spec_.range_set = true;
        } else {
            spec_.lo = std::min(spec_.lo, v);
            spec_.hi = std::max(spec_.hi, v);
        }
    }
}

void ScalarQuantizer::require_range() const {
    if (!spec_.range_set || !(spec_.lo < spec_.hi)) {
        throw ConfigError("scalar quantizer range not calibrated");
    }
}

double ScalarQuantizer::map_value(double x) const {
    require_range();
    const double lo = spec_.lo, hi = spec_.hi;
    if (kind_ == QuantKind::uniform) {
        return uniform_center(uniform_level(x, spec_.bits, lo, hi), spec_.bits, lo,
                              hi);
    }
    // mu-law: compand the [-1, 1]-mapped value, quantize uniformly there,
    // then invert both maps.
    const double u = std::clamp(2.0 * (x - lo) / (hi - lo) - 1.0, -1.0, 1.0);
    const double y = mulaw_compand(u, spec_.mu);
    const double yc = uniform_center(uniform_level(y, spec_.bits, -1.0, 1.0),
                                     spec_.bits, -1.0, 1.0);
    const double uc = mulaw_expand(yc, spec_.mu);
    return lo + (uc + 1.0) * (hi - lo) / 2.0;
}

QuantizerModule::TrainOut ScalarQuantizer::forward_train(const Tensor& codeword,
                                                         double) {
    if (codeword.dim(0) != codeword_len_) {
        throw DimensionError("scalar quantizer: codeword length mismatch");
    }
    observe(codeword.data());
    TrainOut out;
    out.cw_hat =
        unit_gradient_map(codeword, [this](double x) { return map_value(x); });
    return out;
}

Bitstream ScalarQuantizer::quantize(std::span<const double> codeword) const {
    require_range();
    if (static_cast<int>(codeword.size()) != codeword_len_) {
        throw DimensionError("scalar quantizer: codeword length mismatch");
    }
    std::vector<int> levels(codeword.size());
    for (size_t i = 0; i < codeword.size(); ++i) {
        if (kind_ == QuantKind::uniform) {
            levels[i] = uniform_level(codeword[i], spec_.bits, spec_.lo, spec_.hi);
        } else {
            const double u = std::clamp(
                2.0 * (codeword[i] - spec_.lo) / (spec_.hi - spec_.lo) - 1.0, -1.0,
                1.0);
            levels[i] = uniform_level(mulaw_compand(u, spec_.mu), spec_.bits, -1.0,
                                      1.0);
        }
    }
    return make_bitstream(kind_ == QuantKind::uniform ? QuantizerId::uniform
                                                      : QuantizerId::mulaw,
                          codeword_len_, spec_.bits, 0, levels);
}

std::vector<double> ScalarQuantizer::dequantize(const Bitstream& bs) const {
    require_range();
    const QuantizerId expect = kind_ == QuantKind::uniform ? QuantizerId::uniform
                                                           : QuantizerId::mulaw;
    if (bs.id != expect || bs.codeword_len != codeword_len_ || bs.bits != spec_.bits) {
        throw ConfigError("scalar quantizer: bitstream header mismatch");
    }
    const std::vector<int> levels = bitstream_indices(bs);
    std::vector<double> out(levels.size());
    for (size_t i = 0; i < levels.size(); ++i) {
        if (kind_ == QuantKind::uniform) {
            out[i] = uniform_center(levels[i], spec_.bits, spec_.lo, spec_.hi);
        } else {
            const double yc = uniform_center(levels[i], spec_.bits, -1.0, 1.0);
            const double uc = mulaw_expand(yc, spec_.mu);
            out[i] = spec_.lo + (uc + 1.0) * (spec_.hi - spec_.lo) / 2.0;
        }
    }
    return out;
}

double ScalarQuantizer::bits_per_csi() const {
    return static_cast<double>(codeword_len_) * spec_.bits;
}

QuantizerSpec ScalarQuantizer::spec() const { return spec_; }

} // namespace csikit
