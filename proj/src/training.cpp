#include "csikit/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

#include "csikit/checkpoint.hpp"
#include "csikit/errors.hpp"

namespace csikit {

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1) {
        throw ConfigError("train: epochs and batch_size must be positive");
    }
    if (!(lr_min < lr_max)) {
        throw ConfigError("train: lr_min must be below lr_max");
    }
    if (warmup_epochs < 0 || warmup_epochs >= epochs) {
        throw ConfigError("train: warmup_epochs must be below epochs");
    }
    if (beta < 0.0) {
        throw ConfigError("train: beta must be non-negative");
    }
    if (val_every < 1) {
        throw ConfigError("train: val_every must be >= 1");
    }
}

void AdamState::init(const std::vector<Parameter*>& params) {
    step = 0;
    m.clear();
    v.clear();
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Parameter* p : params) {
        m.emplace_back(p->value.size(), 0.0);
        v.emplace_back(p->value.size(), 0.0);
    }
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state, double lr) {
    if (!state.initialized() || state.m.size() != params.size()) {
        throw UsageError("adam_step: state not initialized for these parameters");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        auto g = params[i]->value.grad();
        auto w = params[i]->value.mutable_data();
        auto& mi = state.m[i];
        auto& vi = state.v[i];
        if (mi.size() != g.size()) {
            throw UsageError("adam_step: parameter size changed under the state");
        }
        for (size_t j = 0; j < g.size(); ++j) {
            mi[j] = state.beta1 * mi[j] + (1.0 - state.beta1) * g[j];
            vi[j] = state.beta2 * vi[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = mi[j] / bc1;
            const double vhat = vi[j] / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double cosine_warmup_lr(int epoch, const TrainConfig& cfg) {
    cfg.validate();
    if (epoch < 0 || epoch >= cfg.epochs) {
        throw UsageError("cosine_warmup_lr: epoch out of range");
    }
    if (epoch < cfg.warmup_epochs) {
        return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * static_cast<double>(epoch) /
                                static_cast<double>(cfg.warmup_epochs);
    }
    const double progress = static_cast<double>(epoch - cfg.warmup_epochs) /
                            static_cast<double>(cfg.epochs - cfg.warmup_epochs);
    return cfg.lr_min +
           0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(M_PI * progress));
}

Tensor mse_loss(const Tensor& truth, const Tensor& pred) {
    if (truth.shape() != pred.shape()) {
        throw DimensionError("mse_loss: shape mismatch");
    }
    return sum(square(sub(truth, pred)));
}

Tensor total_loss(const Tensor& mse, const Tensor& vq_codebook,
                  const Tensor& vq_commit) {
    Tensor out = mse;
    if (vq_codebook.defined()) {
        out = add(out, vq_codebook);
    }
    if (vq_commit.defined()) {
        out = add(out, vq_commit);
    }
    return out;
}

std::string LossReport::to_json_line() const {
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "{\"epoch\":%d,\"mse\":%.17g,\"vq_codebook\":%.17g,"
                  "\"vq_commit\":%.17g,\"val_nmse_db\":%.17g,\"lr\":%.17g}",
                  epoch, train_mse, vq_codebook, vq_commit, val_nmse_db, lr);
    return buf;
}

Tensor real_csi_to_tensor(const RealCsi& r) {
    return Tensor({r.n_a, 2 * r.n_t},
                  std::vector<double>(r.values.begin(), r.values.end()));
}

namespace {

void check_dims(const ConformerModel& model, const Dataset& ds, const char* what) {
    if (ds.samples.empty()) {
        throw DataError(std::string(what) + " dataset is empty");
    }
    if (ds.n_a != model.config().seq_len || 2 * ds.n_t != model.config().d_model) {
        throw DataError(std::string(what) +
                        " dataset dims do not match the model (seq_len, d_model)");
    }
}

std::string first_nonfinite(double mse, const Tensor& vq_cb, const Tensor& vq_c,
                            const std::vector<Parameter*>& params) {
    auto finite_all = [](std::span<const double> xs) {
        for (double x : xs) {
            if (!std::isfinite(x)) {
                return false;
            }
        }
        return true;
    };
    // parameters feed everything else, so report them first
    for (const Parameter* p : params) {
        if (!finite_all(p->value.data())) {
            return p->name;
        }
    }
    if (!std::isfinite(mse)) {
        return "mse";
    }
    if (vq_cb.defined() && !std::isfinite(vq_cb.value())) {
        return "vq_codebook";
    }
    if (vq_c.defined() && !std::isfinite(vq_c.value())) {
        return "vq_commit";
    }
    for (const Parameter* p : params) {
        if (!finite_all(p->value.grad())) {
            return p->name + ".grad";
        }
    }
    return "loss";
}

nlohmann::json checkpoint_meta(const ConformerModel& model,
                               const QuantizerModule* quantizer) {
    nlohmann::json meta;
    meta["model"] = conformer_config_to_json(model.config());
    meta["quantizer"] =
        quantizer ? quantizer->spec().to_json() : nlohmann::json(nullptr);
    return meta;
}

void write_checkpoint(const std::string& path, ConformerModel& model,
                      QuantizerModule* quantizer) {
    std::vector<const Parameter*> params;
    for (Parameter* p : model.parameters()) {
        params.push_back(p);
    }
    if (quantizer) {
        for (Parameter* p : quantizer->parameters()) {
            params.push_back(p);
        }
    }
    save_checkpoint(path, checkpoint_meta(model, quantizer), params);
}

} // namespace

double nmse_db_from_ratios(const std::vector<double>& ratios) {
    if (ratios.empty()) {
        throw DataError("nmse: no usable samples");
    }
    double mean = 0.0;
    for (double r : ratios) {
        mean += r;
    }
    mean /= static_cast<double>(ratios.size());
    if (mean < 1e-12) {
        return -120.0; // floor for (near-)perfect reconstruction
    }
    return std::max(-120.0, 10.0 * std::log10(mean));
}

double evaluate_nmse(const ConformerModel& model, const QuantizerModule* quantizer,
                     const Dataset& dataset) {
    check_dims(model, dataset, "eval");
    ForwardCtx ctx; // eval: no tape, no dropout
    std::vector<double> ratios;
    ratios.reserve(dataset.samples.size());
    size_t excluded = 0;
    for (const RealCsi& s : dataset.samples) {
        Tensor x = real_csi_to_tensor(s);
        Tensor cw = model.encode(x, ctx);
        Tensor cw_hat = cw;
        if (quantizer) {
            const Bitstream bs = quantizer->quantize(cw.data());
            cw_hat = Tensor({cw.dim(0)}, quantizer->dequantize(bs));
        }
        Tensor pred = model.decode(cw_hat, ctx);
        // De-normalize both sides; the affine offset cancels in the error
        // term but not in the reference energy.
        const double s4 = 4.0 * s.scale;
        auto xv = x.data();
        auto pv = pred.data();
        double err = 0.0, ref = 0.0;
        for (size_t i = 0; i < xv.size(); ++i) {
            const double dt = (xv[i] - pv[i]) * s4;
            const double rt = (xv[i] - 0.5) * s4;
            err += dt * dt;
            ref += rt * rt;
        }
        if (ref == 0.0) {
            ++excluded;
            continue;
        }
        ratios.push_back(err / ref);
    }
    if (excluded > 0) {
        std::cerr << "warning: excluded " << excluded
                  << " zero-norm sample(s) from NMSE\n";
    }
    return nmse_db_from_ratios(ratios);
}

TrainResult train(ConformerModel& model, QuantizerModule* quantizer,
                  const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg, const std::string& run_dir) {
    cfg.validate();
    check_dims(model, train_set, "train");
    check_dims(model, val_set, "val");

    std::vector<Parameter*> params = model.parameters();
    if (quantizer) {
        for (Parameter* p : quantizer->parameters()) {
            params.push_back(p);
        }
    }
    AdamState adam;
    adam.init(params);

    Rng dropout_rng = Rng::stream(cfg.seed, 1);
    Rng shuffle_rng = Rng::stream(cfg.seed, 2);

    std::ofstream log;
    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        log.open(run_dir + "/loss_log.jsonl", std::ios::trunc);
        if (!log) {
            throw IoError("train: cannot open loss log in " + run_dir);
        }
    }

    TrainResult result;
    result.best_val_nmse_db = std::numeric_limits<double>::infinity();
    double last_val_nmse = 0.0;

    const size_t n = train_set.samples.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) {
        order[i] = i;
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_warmup_lr(epoch, cfg);
        shuffle_rng.shuffle(order);

        double mse_sum = 0.0, cb_sum = 0.0, commit_sum = 0.0;
        for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(n, start + static_cast<size_t>(cfg.batch_size));
            const double inv_b = 1.0 / static_cast<double>(end - start);
            for (Parameter* p : params) {
                p->value.zero_grad();
            }
            for (size_t bi = start; bi < end; ++bi) {
                const RealCsi& sample = train_set.samples[order[bi]];
                Tape tape;
                ForwardCtx ctx{true, &dropout_rng};
                Tensor x = real_csi_to_tensor(sample);
                Tensor cw = model.encode(x, ctx);
                Tensor cw_hat = cw;
                Tensor vq_cb, vq_commit;
                if (quantizer) {
                    auto q = quantizer->forward_train(cw, cfg.beta);
                    cw_hat = q.cw_hat;
                    vq_cb = q.vq_codebook;
                    vq_commit = q.vq_commit;
                }
                Tensor pred = model.decode(cw_hat, ctx);
                Tensor mse = mse_loss(x, pred);
                Tensor loss = total_loss(mse, vq_cb, vq_commit);
                if (!std::isfinite(loss.value())) {
                    throw NumericError(
                        "train: non-finite loss at epoch " + std::to_string(epoch) +
                        "; first non-finite tensor: " +
                        first_nonfinite(mse.value(), vq_cb, vq_commit, params));
                }
                backward(scale(loss, inv_b));
                mse_sum += mse.value();
                if (vq_cb.defined()) {
                    cb_sum += vq_cb.value();
                }
                if (vq_commit.defined()) {
                    commit_sum += vq_commit.value();
                }
            }
            adam_step(params, adam, lr);
        }

        LossReport rep;
        rep.epoch = epoch;
        rep.train_mse = mse_sum / static_cast<double>(n);
        rep.vq_codebook = cb_sum / static_cast<double>(n);
        rep.vq_commit = commit_sum / static_cast<double>(n);
        const bool validate =
            epoch % cfg.val_every == 0 || epoch == cfg.epochs - 1;
        rep.val_nmse_db = validate ? evaluate_nmse(model, quantizer, val_set)
                                   : last_val_nmse;
        last_val_nmse = rep.val_nmse_db;
        rep.lr = lr;
        result.reports.push_back(rep);
        if (log) {
            log << rep.to_json_line() << "\n";
        }
        if (validate && rep.val_nmse_db < result.best_val_nmse_db) {
            result.best_val_nmse_db = rep.val_nmse_db;
            result.best_epoch = epoch;
            if (!run_dir.empty()) {
                write_checkpoint(run_dir + "/checkpoint_best.cscm", model, quantizer);
            }
        }
    }
    if (!run_dir.empty()) {
        write_checkpoint(run_dir + "/checkpoint_final.cscm", model, quantizer);
    }
    return result;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    return nlohmann::json{{"epochs", cfg.epochs},
                          {"batch_size", cfg.batch_size},
                          {"lr_min", cfg.lr_min},
                          {"lr_max", cfg.lr_max},
                          {"warmup_epochs", cfg.warmup_epochs},
                          {"beta", cfg.beta},
                          {"seed", cfg.seed},
                          {"val_every", cfg.val_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.lr_min = j.at("lr_min").get<double>();
    cfg.lr_max = j.at("lr_max").get<double>();
    cfg.warmup_epochs = j.at("warmup_epochs").get<int>();
    cfg.beta = j.at("beta").get<double>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.val_every = j.at("val_every").get<int>();
    cfg.validate();
    return cfg;
}

} // namespace csikit
