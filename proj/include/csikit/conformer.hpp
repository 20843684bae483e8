#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "csikit/tensor.hpp"

namespace csikit {

/// Named trainable tensor. Names are dotted paths and must be unique within
/// a model; checkpoints address tensors by them.
struct Parameter {
    std::string name;
    Tensor value;

    Parameter() = default;
    Parameter(std::string n, Tensor t) : name(std::move(n)), value(std::move(t)) {
        value.set_requires_grad(true);
    }
};

struct ForwardCtx {
    bool training = false;
    Rng* rng = nullptr; // dropout stream, required when training
};

struct ConformerConfig {
    int n_layers = 4;
    int d_model = 64;   // 2 * n_t
    int seq_len = 32;   // n_a
    int n_heads = 8;
    int ff_expansion = 4;
    int conv_expansion = 2;
    int conv_kernel = 31;
    double dropout_rate = 0.1;
    bool conv_module_enabled = true;
    int cr = 4; // compression ratio, one of {4, 8, 16, 32, 64}

    void validate() const;
    int flat_len() const { return seq_len * d_model; }
    int codeword_len() const { return flat_len() / cr; }
};

struct Linear {
    Parameter w; // [in x out]
    Parameter b; // [out]

    void init(const std::string& prefix, int in, int out, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(std::vector<Parameter*>& out);
};

struct LayerNormModule {
    Parameter gamma;
    Parameter beta;
    double eps = 1e-5;

    void init(const std::string& prefix, int d);
    Tensor forward(const Tensor& x) const;
    void collect(std::vector<Parameter*>& out);
};

// norm -> expand -> swish -> dropout -> project back -> dropout.
// Returns the branch value only; the caller owns the residual.
struct FeedForward {
    LayerNormModule norm;
    Linear lin1, lin2;
    double dropout_rate = 0.0;

    void init(const std::string& prefix, int d, int expansion, double dropout,
              Rng& rng);
    Tensor forward(const Tensor& x, const ForwardCtx& ctx) const;
    void collect(std::vector<Parameter*>& out);
};

// Pre-norm multi-headed self-attention without positional encoding.
// Dropout is applied to the attention weights. Eval-mode reductions over the
// token axis run in canonical order, so permuting input rows permutes the
// output rows bit-exactly.
struct MhsaModule {
    LayerNormModule norm;
    Linear q, k, v, out;
    int n_heads = 1;
    double dropout_rate = 0.0;

    void init(const std::string& prefix, int d, int heads, double dropout,
              Rng& rng);
    Tensor forward(const Tensor& x, const ForwardCtx& ctx) const;
    void collect(std::vector<Parameter*>& out);
};

// norm -> pointwise d->E*d -> GLU -> depthwise conv along the token axis ->
// swish -> pointwise -> dropout. Pointwise 1x1 convolutions are channel-axis
// matmuls and are implemented as such.
struct ConvModule {
    LayerNormModule norm;
    Linear pw1;          // d -> expansion*d
    Parameter dw_kernel; // [expansion*d/2 x kernel]
    Linear pw2;          // expansion*d/2 -> d
    double dropout_rate = 0.0;

    void init(const std::string& prefix, int d, int expansion, int kernel,
              double dropout, Rng& rng);
    Tensor forward(const Tensor& x, const ForwardCtx& ctx) const;
    void collect(std::vector<Parameter*>& out);
};

// Attention and convolution sandwiched between two half-step feed-forward
// branches, with a closing layer norm:
//   y1 = x + 0.5 * ff1(x)
//   y2 = y1 + mhsa(y1)
//   y3 = y2 + conv(y2)        (skipped when the conv module is disabled)
//   out = norm(y3 + 0.5 * ff2(y3))
struct ConformerLayer {
    FeedForward ff1, ff2;
    MhsaModule attn;
    std::optional<ConvModule> conv;
    LayerNormModule final_norm;

    void init(const std::string& prefix, const ConformerConfig& cfg, Rng& rng);
    Tensor forward(const Tensor& x, const ForwardCtx& ctx) const;
    void collect(std::vector<Parameter*>& out);
};

/// Encoder/decoder pair: n_layers conformer layers and a fully connected
/// compression stage on each side. encode maps [seq x d] to a codeword of
/// length seq*d/cr; decode inverts the shapes.
class ConformerModel {
public:
    ConformerModel(ConformerConfig cfg, uint64_t init_seed);

    Tensor encode(const Tensor& x, const ForwardCtx& ctx) const;
    Tensor decode(const Tensor& codeword, const ForwardCtx& ctx) const;

    const ConformerConfig& config() const { return cfg_; }
    std::vector<Parameter*> parameters();
    void zero_grads();

private:
    ConformerConfig cfg_;
    std::vector<ConformerLayer> encoder_layers_;
    Linear encoder_fc_;
    Linear decoder_fc_;
    std::vector<ConformerLayer> decoder_layers_;
};

// MAC counts (1 multiply-accumulate = 1 FLOP) for one encode+decode pass.
// The headline total covers the parameterized linear/convolution layers,
// matching the convention common profilers apply to attention models; the
// data-data score and context products inside attention are itemized and
// totaled separately. Elementwise work is excluded.
struct FlopsBreakdown {
    struct Item {
        std::string name;
        uint64_t macs;
    };
    std::vector<Item> items;
    uint64_t weight_macs = 0;
    uint64_t attention_product_macs = 0;

    uint64_t total() const { return weight_macs; }
};

FlopsBreakdown flops_breakdown(const ConformerConfig& cfg);
uint64_t flops_count(const ConformerConfig& cfg);
uint64_t param_count(const ConformerConfig& cfg);

} // namespace csikit
