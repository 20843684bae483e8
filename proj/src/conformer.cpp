#include "csikit/conformer.hpp"

#include <cmath>

#include "csikit/errors.hpp"

namespace csikit {

void ConformerConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || seq_len < 1 || n_heads < 1) {
        throw ConfigError("conformer: dims must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("conformer: d_model must be divisible by n_heads");
    }
    if (conv_kernel % 2 == 0) {
        throw ConfigError("conformer: conv_kernel must be odd");
    }
    if (ff_expansion < 1 || conv_expansion < 1) {
        throw ConfigError("conformer: expansion factors must be >= 1");
    }
    if ((conv_expansion * d_model) % 2 != 0) {
        throw ConfigError("conformer: conv expansion width must be even for GLU");
    }
    if (cr < 1 || flat_len() % cr != 0) {
        throw ConfigError("conformer: cr must divide seq_len * d_model");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw ConfigError("conformer: dropout_rate must be in [0, 1)");
    }
}

namespace {

Tensor init_weight(Shape shape, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::uniform(std::move(shape), -bound, bound, rng);
}

} // namespace

// ---- Linear ---------------------------------------------------------------

void Linear::init(const std::string& prefix, int in, int out, Rng& rng) {
    w = Parameter(prefix + ".weight", init_weight({in, out}, in, rng));
    b = Parameter(prefix + ".bias", Tensor::zeros({out}));
}

Tensor Linear::forward(const Tensor& x) const {
    return add_rowvec(matmul(x, w.value), b.value);
}

void Linear::collect(std::vector<Parameter*>& out) {
    out.push_back(&w);
    out.push_back(&b);
}

// ---- LayerNormModule --------------------------------------------------------

void LayerNormModule::init(const std::string& prefix, int d) {
    gamma = Parameter(prefix + ".gamma", Tensor::full({d}, 1.0));
    beta = Parameter(prefix + ".beta", Tensor::zeros({d}));
}

Tensor LayerNormModule::forward(const Tensor& x) const {
    return layer_norm(x, gamma.value, beta.value, eps);
}

void LayerNormModule::collect(std::vector<Parameter*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

// ---- FeedForward ------------------------------------------------------------

void FeedForward::init(const std::string& prefix, int d, int expansion,
                       double dropout, Rng& rng) {
    norm.init(prefix + ".norm", d);
    lin1.init(prefix + ".lin1", d, expansion * d, rng);
    lin2.init(prefix + ".lin2", expansion * d, d, rng);
    dropout_rate = dropout;
}

Tensor FeedForward::forward(const Tensor& x, const ForwardCtx& ctx) const {
    Tensor h = norm.forward(x);
    h = swish(lin1.forward(h));
    h = dropout(h, dropout_rate, ctx.rng, ctx.training);
    h = lin2.forward(h);
    return dropout(h, dropout_rate, ctx.rng, ctx.training);
}

void FeedForward::collect(std::vector<Parameter*>& out) {
    norm.collect(out);
    lin1.collect(out);
    lin2.collect(out);
}

// ---- MhsaModule ---------------------------------------------------------------

void MhsaModule::init(const std::string& prefix, int d, int heads,
                      double dropout, Rng& rng) {
    norm.init(prefix + ".norm", d);
    q.init(prefix + ".q", d, d, rng);
    k.init(prefix + ".k", d, d, rng);
    v.init(prefix + ".v", d, d, rng);
    out.init(prefix + ".out", d, d, rng);
    n_heads = heads;
    dropout_rate = dropout;
}

Tensor MhsaModule::forward(const Tensor& x, const ForwardCtx& ctx) const {
    const int d = x.dim(1);
    if (d % n_heads != 0) {
        throw ConfigError("mhsa: feature dim not divisible by head count");
    }
    const int head_dim = d / n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    // Reductions over the token axis use canonical (value-sorted) order in
    // eval mode so the result is invariant to token ordering.
    const bool canonical = !ctx.training;

    Tensor h = norm.forward(x);
    Tensor qs = q.forward(h);
    Tensor ks = k.forward(h);
    Tensor vs = v.forward(h);

    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(n_heads));
    for (int hd = 0; hd < n_heads; ++hd) {
        const int c0 = hd * head_dim, c1 = (hd + 1) * head_dim;
        Tensor qh = slice_cols(qs, c0, c1);
        Tensor kh = slice_cols(ks, c0, c1);
        Tensor vh = slice_cols(vs, c0, c1);
        Tensor scores = scale(matmul(qh, transpose(kh)), att_scale);
        Tensor weights = softmax(scores, canonical);
        weights = dropout(weights, dropout_rate, ctx.rng, ctx.training);
        heads.push_back(matmul(weights, vh, canonical));
    }
    return out.forward(concat_cols(heads));
}

void MhsaModule::collect(std::vector<Parameter*>& out_params) {
    norm.collect(out_params);
    q.collect(out_params);
    k.collect(out_params);
    v.collect(out_params);
    out.collect(out_params);
}

// ---- ConvModule ---------------------------------------------------------------

void ConvModule::init(const std::string& prefix, int d, int expansion,
                      int kernel, double dropout, Rng& rng) {
    norm.init(prefix + ".norm", d);
    pw1.init(prefix + ".pw1", d, expansion * d, rng);
    const int mid = expansion * d / 2;
    dw_kernel = Parameter(prefix + ".dw.kernel",
                          init_weight({mid, kernel}, kernel, rng));
    pw2.init(prefix + ".pw2", mid, d, rng);
    dropout_rate = dropout;
}

Tensor ConvModule::forward(const Tensor& x, const ForwardCtx& ctx) const {
    Tensor h = norm.forward(x);
    h = glu(pw1.forward(h));
    // depthwise runs along the token axis: channels first, convolve, restore
    h = transpose(depthwise_conv1d(transpose(h), dw_kernel.value));
    h = swish(h);
    h = pw2.forward(h);
    return dropout(h, dropout_rate, ctx.rng, ctx.training);
}

void ConvModule::collect(std::vector<Parameter*>& out) {
    norm.collect(out);
    pw1.collect(out);
    out.push_back(&dw_kernel);
    pw2.collect(out);
}

// ---- ConformerLayer ------------------------------------------------------------

void ConformerLayer::init(const std::string& prefix, const ConformerConfig& cfg,
                          Rng& rng) {
    ff1.init(prefix + ".ff1", cfg.d_model, cfg.ff_expansion, cfg.dropout_rate, rng);
    attn.init(prefix + ".mhsa", cfg.d_model, cfg.n_heads, cfg.dropout_rate, rng);
    if (cfg.conv_module_enabled) {
        conv.emplace();
        conv->init(prefix + ".conv", cfg.d_model, cfg.conv_expansion,
                   cfg.conv_kernel, cfg.dropout_rate, rng);
    }
    ff2.init(prefix + ".ff2", cfg.d_model, cfg.ff_expansion, cfg.dropout_rate, rng);
    final_norm.init(prefix + ".final_norm", cfg.d_model);
}

Tensor ConformerLayer::forward(const Tensor& x, const ForwardCtx& ctx) const {
    Tensor y1 = add(x, scale(ff1.forward(x, ctx), 0.5));
    Tensor y2 = add(y1, attn.forward(y1, ctx));
    Tensor y3 = conv ? add(y2, conv->forward(y2, ctx)) : y2;
    return final_norm.forward(add(y3, scale(ff2.forward(y3, ctx), 0.5)));
}

void ConformerLayer::collect(std::vector<Parameter*>& out) {
    ff1.collect(out);
    attn.collect(out);
    if (conv) {
        conv->collect(out);
    }
    ff2.collect(out);
    final_norm.collect(out);
}

// ---- ConformerModel ------------------------------------------------------------

ConformerModel::ConformerModel(ConformerConfig cfg, uint64_t init_seed)
    : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::stream(init_seed, 0);
    encoder_layers_.resize(static_cast<size_t>(cfg_.n_layers));
    for (int i = 0; i < cfg_.n_layers; ++i) {
        encoder_layers_[static_cast<size_t>(i)].init(
            "encoder.layer" + std::to_string(i), cfg_, rng);
    }
    encoder_fc_.init("encoder.fc", cfg_.flat_len(), cfg_.codeword_len(), rng);
    decoder_fc_.init("decoder.fc", cfg_.codeword_len(), cfg_.flat_len(), rng);
    decoder_layers_.resize(static_cast<size_t>(cfg_.n_layers));
    for (int i = 0; i < cfg_.n_layers; ++i) {
        decoder_layers_[static_cast<size_t>(i)].init(
            "decoder.layer" + std::to_string(i), cfg_, rng);
    }
}

Tensor ConformerModel::encode(const Tensor& x, const ForwardCtx& ctx) const {
    if (x.rank() != 2 || x.dim(0) != cfg_.seq_len || x.dim(1) != cfg_.d_model) {
        throw DimensionError("encode: input must be seq_len x d_model");
    }
    Tensor h = x;
    for (const ConformerLayer& layer : encoder_layers_) {
        h = layer.forward(h, ctx);
    }
    h = reshape(h, {1, cfg_.flat_len()});
    h = encoder_fc_.forward(h);
    return reshape(h, {cfg_.codeword_len()});
}

Tensor ConformerModel::decode(const Tensor& codeword, const ForwardCtx& ctx) const {
    if (codeword.rank() != 1 || codeword.dim(0) != cfg_.codeword_len()) {
        throw DimensionError("decode: codeword length does not match cr");
    }
    Tensor h = reshape(codeword, {1, cfg_.codeword_len()});
    h = decoder_fc_.forward(h);
    h = reshape(h, {cfg_.seq_len, cfg_.d_model});
    for (const ConformerLayer& layer : decoder_layers_) {
        h = layer.forward(h, ctx);
    }
    return h;
}

std::vector<Parameter*> ConformerModel::parameters() {
    std::vector<Parameter*> ps;
    for (ConformerLayer& l : encoder_layers_) {
        l.collect(ps);
    }
    encoder_fc_.collect(ps);
    decoder_fc_.collect(ps);
    for (ConformerLayer& l : decoder_layers_) {
        l.collect(ps);
    }
    return ps;
}

void ConformerModel::zero_grads() {
    for (Parameter* p : parameters()) {
        p->value.zero_grad();
    }
}

} // namespace csikit
