// csikit: synthesize CSI datasets, train/evaluate the feedback autoencoder,
// compare quantizers, and report complexity numbers.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "csikit/checkpoint.hpp"
#include "csikit/config.hpp"
#include "csikit/errors.hpp"
#include "csikit/training.hpp"

namespace fs = std::filesystem;
using namespace csikit;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string checkpoint;
    std::string run_name;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_checkpoint) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--set", args.sets, "dotted key=value override (repeatable)");
    cmd->add_option("--run-name", args.run_name, "subdirectory under the run root");
    if (with_checkpoint) {
        cmd->add_option("--checkpoint", args.checkpoint, "model checkpoint path")
            ->required();
    }
}

std::string run_subdir(const RunConfig& cfg, const CommonArgs& args,
                       const std::string& cmd) {
    const std::string name =
        args.run_name.empty() ? cmd + "-" + cfg.config_hash() : args.run_name;
    const std::string dir = cfg.run_dir + "/" + name;
    fs::create_directories(dir);
    return dir;
}

void append_report(const std::string& run_root, const nlohmann::json& row) {
    fs::create_directories(run_root);
    std::ofstream f(run_root + "/report.jsonl", std::ios::app);
    if (!f) {
        throw IoError("cannot append to " + run_root + "/report.jsonl");
    }
    f << row.dump() << "\n";
}

void write_resolved_config(const std::string& dir, const RunConfig& cfg) {
    std::ofstream f(dir + "/config_resolved.json", std::ios::trunc);
    f << cfg.resolved.dump(2) << "\n";
}

Dataset load_split(const RunConfig& cfg, const char* split) {
    return load_dataset(cfg.data.dir + "/" + split + ".csid");
}

// ---- gen-data ---------------------------------------------------------------

int cmd_gen_data(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path, args.sets);
    fs::create_directories(cfg.data.dir);

    std::vector<RealCsi> all;
    double scale = 1.0;
    int n_a = cfg.channel.n_a, n_t = cfg.channel.n_t;
    if (!cfg.data.import_path.empty()) {
        Dataset imported =
            import_raw(cfg.data.import_path, n_a, n_t, cfg.data.import_scale);
        all = std::move(imported.samples);
        scale = imported.scale;
    } else {
        const auto spatial = generate_synthetic(cfg.channel, cfg.data.count);
        std::vector<AngularDelayCsi> angular;
        angular.reserve(spatial.size());
        for (const SpatialFreqCsi& h : spatial) {
            angular.push_back(truncate(dft_forward(h.m), n_a));
        }
        scale = compute_scale(angular);
        all.reserve(angular.size());
        for (const AngularDelayCsi& a : angular) {
            all.push_back(to_real(a, scale));
        }
    }

    const int count = static_cast<int>(all.size());
    const int ratio_sum = cfg.data.split[0] + cfg.data.split[1] + cfg.data.split[2];
    const int n_train = count * cfg.data.split[0] / ratio_sum;
    const int n_val = count * cfg.data.split[1] / ratio_sum;
    const int n_test = count - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1) {
        throw ConfigError("gen-data: count too small for the requested split");
    }

    auto save_slice = [&](const char* name, int begin, int n) {
        Dataset ds;
        ds.n_a = n_a;
        ds.n_t = n_t;
        ds.scale = scale;
        ds.samples.assign(all.begin() + begin, all.begin() + begin + n);
        save_dataset(cfg.data.dir + "/" + name + ".csid", ds);
    };
    save_slice("train", 0, n_train);
    save_slice("val", n_train, n_val);
    save_slice("test", n_train + n_val, n_test);

    std::printf("wrote %d/%d/%d samples (scale %.9g) to %s\n", n_train, n_val,
                n_test, scale, cfg.data.dir.c_str());
    append_report(cfg.run_dir, nlohmann::json{{"cmd", "gen-data"},
                                              {"config_hash", cfg.config_hash()},
                                              {"seed", cfg.channel.seed},
                                              {"count", count},
                                              {"train", n_train},
                                              {"val", n_val},
                                              {"test", n_test},
                                              {"scale", scale}});
    return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path, args.sets);
    Dataset train_set = load_split(cfg, "train");
    Dataset val_set = load_split(cfg, "val");

    ConformerModel model(cfg.model, cfg.model_seed);
    std::unique_ptr<QuantizerModule> quant =
        make_quantizer(cfg.quantizer, cfg.model.codeword_len());

    const std::string dir = run_subdir(cfg, args, "train");
    write_resolved_config(dir, cfg);
    const TrainResult result =
        train(model, quant.get(), train_set, val_set, cfg.training, dir);

    std::printf("best val NMSE %.3f dB at epoch %d; checkpoints in %s\n",
                result.best_val_nmse_db, result.best_epoch, dir.c_str());
    append_report(cfg.run_dir,
                  nlohmann::json{{"cmd", "train"},
                                 {"config_hash", cfg.config_hash()},
                                 {"seed", cfg.training.seed},
                                 {"cr", cfg.model.cr},
                                 {"quantizer", quant_kind_name(cfg.quantizer.kind)},
                                 {"bits", cfg.quantizer.bits},
                                 {"epochs", cfg.training.epochs},
                                 {"best_val_nmse_db", result.best_val_nmse_db},
                                 {"best_epoch", result.best_epoch},
                                 {"run_dir", dir}});
    return 0;
}

// ---- eval -------------------------------------------------------------------

struct RestoredModel {
    ConformerConfig model_cfg;
    std::unique_ptr<ConformerModel> model;
    std::unique_ptr<QuantizerModule> quantizer;
};

RestoredModel restore_from_checkpoint(const std::string& path) {
    const CheckpointData ck = load_checkpoint(path);
    RestoredModel r;
    r.model_cfg = conformer_config_from_json(ck.config.at("model"));
    r.model = std::make_unique<ConformerModel>(r.model_cfg, 0);
    restore_parameters(ck, r.model->parameters());
    if (!ck.config.at("quantizer").is_null()) {
        const QuantizerSpec spec = QuantizerSpec::from_json(ck.config.at("quantizer"));
        r.quantizer = make_quantizer(spec, r.model_cfg.codeword_len());
        restore_parameters(ck, r.quantizer->parameters());
    }
    return r;
}

void refuse_on_model_mismatch(const RunConfig& cfg, const ConformerConfig& ck_cfg) {
    if (!cfg.section_touched("model")) {
        return;
    }
    const nlohmann::json want = conformer_config_to_json(cfg.model);
    const nlohmann::json have = conformer_config_to_json(ck_cfg);
    if (want == have) {
        return;
    }
    std::string diff;
    for (auto it = want.begin(); it != want.end(); ++it) {
        if (have.at(it.key()) != it.value()) {
            diff += "  " + it.key() + ": config " + it.value().dump() +
                    " vs checkpoint " + have.at(it.key()).dump() + "\n";
        }
    }
    throw ConfigError("model config does not match the checkpoint:\n" + diff);
}

int cmd_eval(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path, args.sets);
    RestoredModel r = restore_from_checkpoint(args.checkpoint);
    refuse_on_model_mismatch(cfg, r.model_cfg);
    Dataset test_set = load_split(cfg, "test");

    const double nmse = evaluate_nmse(*r.model, r.quantizer.get(), test_set);
    const int len = r.model_cfg.codeword_len();
    const double bits =
        r.quantizer ? r.quantizer->bits_per_csi() : 32.0 * static_cast<double>(len);
    const uint64_t flops = flops_count(r.model_cfg);
    const uint64_t params = param_count(r.model_cfg);
    const std::string qname =
        r.quantizer ? quant_kind_name(r.quantizer->kind()) : "none";

    std::printf("cr %-3d quantizer %-8s bits/CSI %-8.0f NMSE %8.3f dB  FLOPs "
                "%" PRIu64 "  params %" PRIu64 "\n",
                r.model_cfg.cr, qname.c_str(), bits, nmse, flops, params);
    append_report(cfg.run_dir,
                  nlohmann::json{{"cmd", "eval"},
                                 {"config_hash", cfg.config_hash()},
                                 {"seed", cfg.training.seed},
                                 {"checkpoint", args.checkpoint},
                                 {"cr", r.model_cfg.cr},
                                 {"quantizer", qname},
                                 {"bits", r.quantizer ? r.quantizer->spec().bits : 32},
                                 {"bits_per_csi", bits},
                                 {"nmse_db", nmse},
                                 {"flops", flops},
                                 {"params", params}});
    return 0;
}

// ---- quantize-compare ---------------------------------------------------------

int cmd_quantize_compare(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path, args.sets);
    Dataset train_set = load_split(cfg, "train");
    Dataset val_set = load_split(cfg, "val");
    Dataset test_set = load_split(cfg, "test");

    const CheckpointData base = load_checkpoint(args.checkpoint);
    const ConformerConfig model_cfg =
        conformer_config_from_json(base.config.at("model"));
    refuse_on_model_mismatch(cfg, model_cfg);

    TrainConfig ft = cfg.training;
    ft.epochs = cfg.compare.finetune_epochs;
    ft.warmup_epochs = std::min(ft.warmup_epochs, ft.epochs - 1);

    const std::string dir = run_subdir(cfg, args, "quantize-compare");
    write_resolved_config(dir, cfg);

    std::printf("%-10s %-4s %-10s %-10s\n", "quantizer", "B", "bits/CSI", "NMSE(dB)");
    for (const std::string& qname : cfg.compare.quantizers) {
        for (int bits : cfg.compare.bits) {
            ConformerModel model(model_cfg, 0);
            restore_parameters(base, model.parameters());

            QuantizerSpec spec = cfg.quantizer;
            spec.kind = quant_kind_from_name(qname);
            spec.bits = bits;
            spec.range_set = false;
            std::unique_ptr<QuantizerModule> quant =
                make_quantizer(spec, model_cfg.codeword_len());

            const std::string cell = dir + "/" + qname + "-b" + std::to_string(bits);
            const TrainResult result =
                train(model, quant.get(), train_set, val_set, ft, cell);
            const double nmse = evaluate_nmse(model, quant.get(), test_set);
            const double bpc = quant->bits_per_csi();

            std::printf("%-10s %-4d %-10.0f %-10.3f\n", qname.c_str(), bits, bpc,
                        nmse);
            append_report(cfg.run_dir,
                          nlohmann::json{{"cmd", "quantize-compare"},
                                         {"config_hash", cfg.config_hash()},
                                         {"seed", cfg.training.seed},
                                         {"checkpoint", args.checkpoint},
                                         {"cr", model_cfg.cr},
                                         {"quantizer", qname},
                                         {"bits", bits},
                                         {"bits_per_csi", bpc},
                                         {"nmse_db", nmse},
                                         {"best_val_nmse_db", result.best_val_nmse_db},
                                         {"finetune_epochs", ft.epochs}});
        }
    }
    return 0;
}

// ---- flops ------------------------------------------------------------------

int cmd_flops(const CommonArgs& args) {
    RunConfig cfg = load_run_config(args.config_path, args.sets);
    const FlopsBreakdown bd = flops_breakdown(cfg.model);
    std::printf("itemized MACs for cr=%d:\n", cfg.model.cr);
    for (const auto& item : bd.items) {
        std::printf("  %-28s %12" PRIu64 "\n", item.name.c_str(), item.macs);
    }
    std::printf("  %-28s %12" PRIu64 "\n", "total (weight layers)", bd.weight_macs);
    std::printf("  %-28s %12" PRIu64 "\n", "attention products",
                bd.attention_product_macs);
    std::printf("\n%-6s %-14s %-14s\n", "cr", "FLOPs", "params");
    for (int cr : {4, 8, 16, 32, 64}) {
        ConformerConfig c = cfg.model;
        c.cr = cr;
        if (c.flat_len() % cr != 0) {
            continue;
        }
        std::printf("%-6d %-14" PRIu64 " %-14" PRIu64 "\n", cr, flops_count(c),
                    param_count(c));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CSI feedback autoencoder toolkit"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, cmp_args, flops_args;
    CLI::App* gen = app.add_subcommand("gen-data", "synthesize and split datasets");
    add_common(gen, gen_args, false);
    CLI::App* trn = app.add_subcommand("train", "train the autoencoder");
    add_common(trn, train_args, false);
    CLI::App* evl = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(evl, eval_args, true);
    CLI::App* cmp = app.add_subcommand("quantize-compare",
                                       "fine-tune and compare quantizers");
    add_common(cmp, cmp_args, true);
    CLI::App* flp = app.add_subcommand("flops", "complexity breakdown");
    add_common(flp, flops_args, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_args);
        if (trn->parsed()) return cmd_train(train_args);
        if (evl->parsed()) return cmd_eval(eval_args);
        if (cmp->parsed()) return cmd_quantize_compare(cmp_args);
        if (flp->parsed()) return cmd_flops(flops_args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
