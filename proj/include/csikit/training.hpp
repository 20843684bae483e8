#pragma once

#include <optional>
#include <string>
#include <vector>

#include "csikit/channel.hpp"
#include "csikit/conformer.hpp"
#include "csikit/quantizer.hpp"

namespace csikit {

struct TrainConfig {
    int epochs = 50;      // reference schedule uses 1000
    int batch_size = 16;  // reference schedule uses 200
    double lr_min = 5e-5;
    double lr_max = 2e-4;
    int warmup_epochs = 3; // reference schedule uses 30; scaled with epochs
    double beta = 0.25;    // commitment weight
    uint64_t seed = 7;
    int val_every = 1; // validate every n-th epoch (the last always runs)

    void validate() const;
};

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    void init(const std::vector<Parameter*>& params);
    bool initialized() const { return !m.empty(); }
};

/// Bias-corrected Adam update applied to every parameter's accumulated
/// gradient. Gradients are left untouched; callers zero them per batch.
void adam_step(const std::vector<Parameter*>& params, AdamState& state, double lr);

/// Linear ramp lr_min -> lr_max over warmup_epochs, then a single cosine
/// descent back towards lr_min over the remaining epochs. Continuous at the
/// junction (both sides evaluate to lr_max).
double cosine_warmup_lr(int epoch, const TrainConfig& cfg);

/// (1/N) * sum_n ||truth_n - pred_n||_F^2 for one pair; batch averaging is
/// done by the caller.
Tensor mse_loss(const Tensor& truth, const Tensor& pred);

/// Total objective: reconstruction error plus the quantizer loss terms when
/// a quantizer is attached.
Tensor total_loss(const Tensor& mse, const Tensor& vq_codebook,
                  const Tensor& vq_commit);

struct LossReport {
    int epoch = 0;
    double train_mse = 0.0;
    double vq_codebook = 0.0;
    double vq_commit = 0.0;
    double val_nmse_db = 0.0;
    double lr = 0.0;

    std::string to_json_line() const;
};

struct TrainResult {
    std::vector<LossReport> reports;
    double best_val_nmse_db = 0.0;
    int best_epoch = -1;
};

/// End-to-end loop: encode -> (quantize / straight-through / dequantize) ->
/// decode -> loss -> backward -> Adam, with dropout active, per-epoch
/// validation in eval mode, and a checkpoint of the best-validation model
/// when run_dir is given. A non-finite loss aborts with a diagnostic naming
/// the first non-finite tensor.
TrainResult train(ConformerModel& model, QuantizerModule* quantizer,
                  const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg, const std::string& run_dir = "");

/// 10*log10 of the mean normalized squared reconstruction error over the
/// de-normalized angular-delay matrices, evaluated with dropout off.
/// Perfect reconstruction is floored at -120 dB; zero-norm samples are
/// excluded with a warning on stderr.
double evaluate_nmse(const ConformerModel& model, const QuantizerModule* quantizer,
                     const Dataset& dataset);

/// NMSE in dB for already-decoded prediction pairs (exposed for tests).
double nmse_db_from_ratios(const std::vector<double>& ratios);

/// Network-facing view of a sample: [n_a x 2*n_t].
Tensor real_csi_to_tensor(const RealCsi& r);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

} // namespace csikit
