#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "csikit/bitstream.hpp"
#include "csikit/conformer.hpp"

namespace csikit {

enum class QuantKind { none, svqvae, uniform, mulaw, basevv };

std::string quant_kind_name(QuantKind k);
QuantKind quant_kind_from_name(const std::string& name);

struct QuantizerSpec {
    QuantKind kind = QuantKind::none;
    int bits = 5;       // B; codebook quantizers use K = 2^B entries
    int embed_dim = 32; // D
    double mu = 255.0;
    double lo = 0.0; // calibrated codeword range (uniform / mu-law)
    double hi = 0.0;
    bool range_set = false;
    uint64_t init_seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static QuantizerSpec from_json(const nlohmann::json& j);
};

/// K x D learnable embedding table, K = 2^B.
struct Codebook {
    Parameter embeddings;
    int k = 0;
    int d = 0;

    void init(const std::string& prefix, int k_entries, int dim, Rng& rng);
    size_t learnable_params() const { return static_cast<size_t>(k) * d; }
};

/// Index of the codebook row closest to v in Euclidean distance; ties go to
/// the lowest index.
int nearest_neighbor(std::span<const double> v, const Codebook& cb);

/// Codebook + commitment terms with the stop-gradients placed so the first
/// term trains only the embeddings and the second only the encoder side:
///   ||sg[q_s] - q_r||^2 + beta * ||q_s - sg[q_r]||^2, summed over positions.
/// q_r must be the differentiable gather of the selected codebook rows.
Tensor vq_loss(const Tensor& q_s, const Tensor& q_r, double beta);

// Scalar quantizer primitives (exposed for direct testing).
int uniform_level(double x, int bits, double lo, double hi);
double uniform_center(int level, int bits, double lo, double hi);
double mulaw_compand(double u, double mu);  // u in [-1, 1]
double mulaw_expand(double y, double mu);

/// A quantization stage between encoder and decoder. forward_train builds
/// the differentiable training path (straight-through where the math is not
/// differentiable); quantize/dequantize are the plain inference path that
/// produces and consumes the wire bitstream.
class QuantizerModule {
public:
    virtual ~QuantizerModule() = default;

    virtual QuantKind kind() const = 0;

    struct TrainOut {
        Tensor cw_hat;
        Tensor vq_codebook; // undefined for scalar quantizers
        Tensor vq_commit;   // undefined for scalar quantizers
    };
    virtual TrainOut forward_train(const Tensor& codeword, double beta) = 0;

    virtual Bitstream quantize(std::span<const double> codeword) const = 0;
    virtual std::vector<double> dequantize(const Bitstream& bs) const = 0;

    virtual std::vector<Parameter*> parameters() { return {}; }
    virtual double bits_per_csi() const = 0;
    virtual QuantizerSpec spec() const = 0;
};

std::unique_ptr<QuantizerModule> make_quantizer(const QuantizerSpec& spec,
                                                int codeword_len);

/// Per-element codebook quantizer: a 1x1 up-channel convolution lifts each
/// codeword scalar to a D-vector, nearest-neighbor lookup picks one of K
/// rows, and a 1x1 down-channel convolution restores the codeword.
class SvqVaeQuantizer : public QuantizerModule {
public:
    SvqVaeQuantizer(const QuantizerSpec& spec, int codeword_len);

    QuantKind kind() const override { return QuantKind::svqvae; }
    TrainOut forward_train(const Tensor& codeword, double beta) override;
    Bitstream quantize(std::span<const double> codeword) const override;
    /// Same as quantize but also returns the lifted q_s rows.
    Bitstream quantize_with_lift(std::span<const double> codeword,
                                 std::vector<double>* q_s_out) const;
    std::vector<double> dequantize(const Bitstream& bs) const override;
    std::vector<Parameter*> parameters() override;
    double bits_per_csi() const override;
    QuantizerSpec spec() const override;

    const Codebook& codebook() const { return codebook_; }

private:
    std::vector<int> lift_and_lookup(std::span<const double> codeword,
                                     std::vector<double>* q_s_out) const;

    QuantizerSpec spec_;
    int codeword_len_;
    Parameter up_w_;   // [1 x D]
    Parameter up_b_;   // [D]
    Codebook codebook_;
    Parameter down_w_; // [D x 1]
    Parameter down_b_; // [1]
};

/// Whole-vector codebook quantizer: the codeword is cut into contiguous
/// D-blocks and each block is matched to a codebook row directly, with no
/// channel convolutions.
class BaseVvQuantizer : public QuantizerModule {
public:
    BaseVvQuantizer(const QuantizerSpec& spec, int codeword_len);

    QuantKind kind() const override { return QuantKind::basevv; }
    TrainOut forward_train(const Tensor& codeword, double beta) override;
    Bitstream quantize(std::span<const double> codeword) const override;
    std::vector<double> dequantize(const Bitstream& bs) const override;
    std::vector<Parameter*> parameters() override;
    double bits_per_csi() const override;
    QuantizerSpec spec() const override;

    const Codebook& codebook() const { return codebook_; }

private:
    QuantizerSpec spec_;
    int codeword_len_;
    Codebook codebook_;
};

/// Scalar quantizer over a calibrated [lo, hi] range; trained end-to-end
/// with a constant-one gradient. The range tracks the running min/max of
/// codewords seen during training and is clamped at inference.
class ScalarQuantizer : public QuantizerModule {
public:
    ScalarQuantizer(QuantKind kind, const QuantizerSpec& spec, int codeword_len);

    QuantKind kind() const override { return kind_; }
    TrainOut forward_train(const Tensor& codeword, double beta) override;
    Bitstream quantize(std::span<const double> codeword) const override;
    std::vector<double> dequantize(const Bitstream& bs) const override;
    double bits_per_csi() const override;
    QuantizerSpec spec() const override;

    void observe(std::span<const double> codeword);
    double map_value(double x) const; // quantize+dequantize one element

private:
    void require_range() const;

    QuantKind kind_;
    QuantizerSpec spec_;
    int codeword_len_;
};

} // namespace csikit
