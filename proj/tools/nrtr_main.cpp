// nrtr -- batch CLI for the neuron reconstruction toolkit:
//   synth | train | infer | eval | swc check | blockify
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <array>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "nrtr/pipeline.hpp"
#include "nrtr/swc.hpp"

namespace {

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw nrtr::ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw nrtr::ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return j;
}

std::array<int, 3> parse_dims(const std::string& s) {
    std::array<int, 3> dims{};
    if (std::sscanf(s.c_str(), "%d,%d,%d", &dims[0], &dims[1], &dims[2]) != 3)
        throw nrtr::ConfigError("bad --dims '" + s + "', expected W,H,D");
    return dims;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NRTR neuron reconstruction toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic (volume, SWC) dataset");
    std::string synth_config, synth_out;
    std::uint64_t cli_seed = 0;
    bool seed_given = false;
    synth->add_option("--config", synth_config, "synth spec JSON")->required();
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--seed", cli_seed, "override the spec seed")
        ->each([&](const std::string&) { seed_given = true; });

    // train
    auto* train = app.add_subcommand("train", "train a model on a dataset directory");
    std::string train_config, train_data, train_out, train_resume;
    std::uint64_t train_seed = 0;
    bool train_seed_given = false;
    int train_epochs = -1, train_warmup = -1;
    train->add_option("--config", train_config, "model+train config JSON")->required();
    train->add_option("--data", train_data, "dataset directory (synth output)")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--resume", train_resume, "state_epoch_*.ckpt to resume from");
    train->add_option("--seed", train_seed, "override train.seed")
        ->each([&](const std::string&) { train_seed_given = true; });
    train->add_option("--epochs", train_epochs, "override train.epochs");
    train->add_option("--warmup", train_warmup, "override train.warmup_epochs");

    // infer
    auto* infer = app.add_subcommand("infer", "reconstruct a volume into SWC");
    std::string infer_ckpt, infer_volume, infer_out;
    nrtr::InferOptions opts;
    infer->add_option("--checkpoint", infer_ckpt, "model checkpoint")->required();
    infer->add_option("--volume", infer_volume, "input volume (.json header)")->required();
    infer->add_option("--out", infer_out, "output SWC path")->required();
    infer->add_option("--upsample", opts.upsample,
                      "trilinear upsampling factor (default: 8 when the volume is smaller "
                      "than a block, else 1)");
    infer->add_option("--block", opts.block_size, "block size (must match the model)");
    infer->add_option("--overlap", opts.overlap, "block overlap in voxels");
    infer->add_option("--threshold", opts.threshold, "cls keep threshold (default 0.5)");
    infer->add_option("--tau", opts.tau, "edge prune factor tau (default 3.0)");
    infer->add_option("--cap", opts.absolute_cap, "absolute edge cap in voxels (default 30)");
    infer->add_option("--merge", opts.merge_radius, "duplicate merge radius (default 1.5)");

    // eval
    auto* eval = app.add_subcommand("eval", "voxel-overlap scores between two SWC files");
    std::string eval_pred, eval_gt, eval_dims_str, eval_volume, eval_out;
    eval->add_option("--pred", eval_pred, "predicted SWC")->required();
    eval->add_option("--gt", eval_gt, "ground-truth SWC")->required();
    eval->add_option("--dims", eval_dims_str, "grid W,H,D");
    eval->add_option("--volume", eval_volume, "take dims from this volume header");
    eval->add_option("--out", eval_out, "write the score JSON here too");

    // swc check
    auto* swc = app.add_subcommand("swc", "SWC file utilities");
    auto* swc_check = swc->add_subcommand("check", "validate an SWC file");
    std::string swc_path;
    swc_check->add_option("file", swc_path, "SWC file")->required();

    // blockify
    auto* blockify_cmd = app.add_subcommand("blockify", "list block origins for a volume");
    std::string blockify_volume;
    int blockify_block = 64, blockify_overlap = 0;
    blockify_cmd->add_option("--volume", blockify_volume, "volume header")->required();
    blockify_cmd->add_option("--block", blockify_block, "block size (default 64)");
    blockify_cmd->add_option("--overlap", blockify_overlap, "overlap (default 0)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

    try {
        if (synth->parsed()) {
            auto spec = nrtr::SynthRunSpec::from_json(load_json(synth_config));
            if (seed_given) spec.seed = cli_seed;
            nrtr::run_synth(spec, synth_out, synth_config);
        } else if (train->parsed()) {
            auto cfg = nrtr::TrainRunConfig::from_json(load_json(train_config));
            if (train_seed_given) cfg.train.seed = train_seed;
            if (train_epochs > 0) cfg.train.epochs = train_epochs;
            if (train_warmup >= 0) cfg.train.warmup_epochs = train_warmup;
            nrtr::run_train(cfg, train_data, train_out, train_resume, train_config);
        } else if (infer->parsed()) {
            nrtr::run_infer(infer_ckpt, infer_volume, infer_out, opts);
        } else if (eval->parsed()) {
            std::array<int, 3> dims{};
            if (!eval_dims_str.empty())
                dims = parse_dims(eval_dims_str);
            else if (!eval_volume.empty())
                dims = nrtr::load_volume(eval_volume).dims;
            else
                throw nrtr::ConfigError("eval needs --dims or --volume");
            const nrtr::Scores s = nrtr::run_eval(eval_pred, eval_gt, dims, eval_out);
            std::cout << s.to_json().dump(2) << "\n";
        } else if (swc_check->parsed()) {
            std::ifstream in(swc_path);
            if (!in) throw std::runtime_error("cannot open SWC file: " + swc_path);
            try {
                nrtr::parse_swc(in);
            } catch (const std::exception& e) {
                std::cout << "INVALID " << swc_path << "\n" << e.what() << "\n";
                return 2;
            }
            std::cout << "OK " << swc_path << "\n";
        } else if (blockify_cmd->parsed()) {
            const nrtr::Volume v = nrtr::load_volume(blockify_volume);
            nlohmann::json out = nlohmann::json::array();
            for (const auto& o : nrtr::blockify(v, blockify_block, blockify_overlap))
                out.push_back({o[0], o[1], o[2]});
            std::cout << out.dump() << "\n";
        }
    } catch (const nrtr::TrainAbort& e) {
        std::cerr << "error: " << e.what() << "\n  offending batch:\n";
        for (const auto& src : e.batch_sources) std::cerr << "    " << src << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
