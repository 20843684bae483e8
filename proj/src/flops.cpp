#include "csikit/conformer.hpp"

namespace csikit {

namespace {

uint64_t u(int v) { return static_cast<uint64_t>(v); }

} // namespace

FlopsBreakdown flops_breakdown(const ConformerConfig& cfg) {
    cfg.validate();
    FlopsBreakdown bd;
    const uint64_t s = u(cfg.seq_len);
    const uint64_t d = u(cfg.d_model);
    const uint64_t e = u(cfg.ff_expansion);
    const uint64_t ce = u(cfg.conv_expansion);
    const uint64_t k = u(cfg.conv_kernel);
    const uint64_t len = u(cfg.codeword_len());

    const uint64_t ff = 2 * s * e * d * d;        // two linears per module
    const uint64_t attn_proj = 4 * s * d * d;     // q, k, v, out
    const uint64_t attn_prod = 2 * s * s * d;     // scores + context
    uint64_t conv = 0;
    if (cfg.conv_module_enabled) {
        const uint64_t mid = ce * d / 2;
        conv = s * d * (ce * d)  // pointwise expand
               + s * mid * k     // depthwise
               + s * mid * d;    // pointwise project
    }

    for (const char* side : {"encoder", "decoder"}) {
        for (int i = 0; i < cfg.n_layers; ++i) {
            const std::string p = std::string(side) + ".layer" + std::to_string(i);
            bd.items.push_back({p + ".ff1", ff});
            bd.items.push_back({p + ".mhsa.proj", attn_proj});
            bd.items.push_back({p + ".mhsa.products", attn_prod});
            if (cfg.conv_module_enabled) {
                bd.items.push_back({p + ".conv", conv});
            }
            bd.items.push_back({p + ".ff2", ff});
            bd.weight_macs += 2 * ff + attn_proj + conv;
            bd.attention_product_macs += attn_prod;
        }
    }
    const uint64_t fc = s * d * len;
    bd.items.push_back({"encoder.fc", fc});
    bd.items.push_back({"decoder.fc", fc});
    bd.weight_macs += 2 * fc;
    return bd;
}

uint64_t flops_count(const ConformerConfig& cfg) {
    return flops_breakdown(cfg).total();
}

uint64_t param_count(const ConformerConfig& cfg) {
    cfg.validate();
    const uint64_t s = u(cfg.seq_len);
    const uint64_t d = u(cfg.d_model);
    const uint64_t e = u(cfg.ff_expansion);
    const uint64_t ce = u(cfg.conv_expansion);
    const uint64_t k = u(cfg.conv_kernel);
    const uint64_t len = u(cfg.codeword_len());

    const uint64_t ln = 2 * d;
    const uint64_t ff = ln + (d * e * d + e * d) + (e * d * d + d);
    const uint64_t attn = ln + 4 * (d * d + d);
    uint64_t conv = 0;
    if (cfg.conv_module_enabled) {
        const uint64_t mid = ce * d / 2;
        conv = ln + (d * ce * d + ce * d) + mid * k + (mid * d + d);
    }
    const uint64_t layer = 2 * ff + attn + conv + ln;
    const uint64_t fcs = (s * d * len + len) + (len * s * d + s * d);
    return 2 * u(cfg.n_layers) * layer + fcs;
}

} // namespace csikit
