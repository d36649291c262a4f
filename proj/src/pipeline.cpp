#include "nrtr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "nrtr/connect.hpp"

namespace nrtr {

namespace fs = std::filesystem;

namespace {

std::string timestamp_utc() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

std::string sample_name(int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%04d", k);
    return buf;
}

std::string format_loss_row(const LossRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%ld,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.epoch,
                  r.lr_transformer, r.lr_backbone, r.total, r.cls, r.box, r.giou);
    return buf;
}

constexpr const char* kLossHeader =
    "step,epoch,lr_transformer,lr_backbone,loss_total,loss_cls,loss_box,loss_giou\n";

}  // namespace

SynthRunSpec SynthRunSpec::from_json(const nlohmann::json& j) {
    SynthRunSpec s;
    try {
        s.n_samples = j.value("n_samples", s.n_samples);
        s.seed = j.value("seed", s.seed);
        if (j.contains("synth")) {
            const auto& g = j["synth"];
            if (g.contains("dims"))
                for (int a = 0; a < 3; ++a) s.synth.dims[a] = g["dims"].at(a).get<int>();
            s.synth.n_trees = g.value("n_trees", s.synth.n_trees);
            if (g.contains("nodes_per_tree"))
                for (int a = 0; a < 2; ++a)
                    s.synth.nodes_per_tree[a] = g["nodes_per_tree"].at(a).get<int>();
            if (g.contains("radius_range"))
                for (int a = 0; a < 2; ++a)
                    s.synth.radius_range[a] = g["radius_range"].at(a).get<double>();
            s.synth.branch_probability =
                g.value("branch_probability", s.synth.branch_probability);
            if (g.contains("step_range"))
                for (int a = 0; a < 2; ++a)
                    s.synth.step_range[a] = g["step_range"].at(a).get<double>();
        }
        if (j.contains("render")) {
            const auto& r = j["render"];
            if (r.contains("dims"))
                for (int a = 0; a < 3; ++a) s.render.dims[a] = r["dims"].at(a).get<int>();
            s.render.foreground_intensity =
                r.value("foreground_intensity", s.render.foreground_intensity);
            s.render.background_level = r.value("background_level", s.render.background_level);
            s.render.noise_sd = r.value("noise_sd", s.render.noise_sd);
            s.render.psf_sigma = r.value("psf_sigma", s.render.psf_sigma);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad synth spec: ") + e.what());
    }
    if (s.n_samples < 0) throw ConfigError("bad synth spec: n_samples must be >= 0");
    s.synth.dims = s.render.dims = (j.contains("render") ? s.render.dims : s.synth.dims);
    return s;
}

nlohmann::json SynthRunSpec::to_json() const {
    return nlohmann::json{
        {"n_samples", n_samples},
        {"seed", seed},
        {"synth",
         {{"dims", {synth.dims[0], synth.dims[1], synth.dims[2]}},
          {"n_trees", synth.n_trees},
          {"nodes_per_tree", {synth.nodes_per_tree[0], synth.nodes_per_tree[1]}},
          {"radius_range", {synth.radius_range[0], synth.radius_range[1]}},
          {"branch_probability", synth.branch_probability},
          {"step_range", {synth.step_range[0], synth.step_range[1]}}}},
        {"render",
         {{"dims", {render.dims[0], render.dims[1], render.dims[2]}},
          {"foreground_intensity", render.foreground_intensity},
          {"background_level", render.background_level},
          {"noise_sd", render.noise_sd},
          {"psf_sigma", render.psf_sigma}}}};
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const std::string& config_path, std::uint64_t seed, const RunPaths& paths,
                    double wall_clock_seconds) {
    nlohmann::json m = {{"command", command},
                        {"config", config_path},
                        {"seed", seed},
                        {"inputs", paths.inputs},
                        {"outputs", paths.outputs},
                        {"toolkit_version", kToolkitVersion},
                        {"wall_clock_seconds", wall_clock_seconds},
                        {"created", timestamp_utc()}};
    write_text((fs::path(out_dir) / "manifest.json").string(), m.dump(2) + "\n");
}

void run_synth(const SynthRunSpec& spec, const std::string& out_dir,
               const std::string& config_path) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);
    RunPaths paths;
    for (int k = 0; k < spec.n_samples; ++k) {
        SynthSpec s = spec.synth;
        s.seed = mix_seed(spec.seed, 0x51000u + static_cast<std::uint64_t>(k));
        const SwcForest forest = gen_random_forest(s);
        const Volume img =
            render_image(forest, spec.render, mix_seed(spec.seed, 0x52000u + k));
        const std::string base = (fs::path(out_dir) / sample_name(k)).string();
        save_volume(img, base, "u16");
        write_swc_file(forest, base + ".swc");
        paths.outputs.push_back(base + ".json");
        paths.outputs.push_back(base + ".raw");
        paths.outputs.push_back(base + ".swc");
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out_dir, "synth", config_path, spec.seed, paths, secs);
}

TrainRunConfig TrainRunConfig::from_json(const nlohmann::json& j) {
    TrainRunConfig c;
    try {
        if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
        if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
        c.overlap = j.value("overlap", c.overlap);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad train config: ") + e.what());
    }
    return c;
}

nlohmann::json TrainRunConfig::to_json() const {
    return nlohmann::json{
        {"model", model.to_json()}, {"train", train.to_json()}, {"overlap", overlap}};
}

std::vector<TrainSample> load_dataset(const std::string& data_dir, int block_size, int overlap) {
    std::vector<std::string> bases;
    for (const auto& entry : fs::directory_iterator(data_dir)) {
        const fs::path p = entry.path();
        if (p.extension() == ".swc") {
            fs::path base = p;
            base.replace_extension("");
            if (fs::exists(base.string() + ".json") && fs::exists(base.string() + ".raw"))
                bases.push_back(base.string());
        }
    }
    std::sort(bases.begin(), bases.end());

    std::vector<TrainSample> samples;
    for (const auto& base : bases) {
        const Volume vol = load_volume(base);
        const SwcForest forest = read_swc_file(base + ".swc");
        for (const auto& origin : blockify(vol, block_size, overlap)) {
            TrainSample s;
            s.block = extract_block(vol, origin, block_size);
            s.gt = block_ground_truth(
                forest, {double(origin[0]), double(origin[1]), double(origin[2])}, block_size);
            s.source = fs::path(base).filename().string() + ":" + std::to_string(origin[0]) +
                       "," + std::to_string(origin[1]) + "," + std::to_string(origin[2]);
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

void save_train_state(const std::string& path, const NrtrModel<float>& model,
                      const AdamState<float>& adam, int next_epoch, const TrainRunConfig& cfg) {
    std::vector<ParamRecord> records;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const auto& p = model.params[i];
        auto to_rec = [&](const std::string& prefix, const auto& arr) {
            ParamRecord r;
            r.name = prefix + p.name;
            r.shape = p.tensor.shape();
            r.values.assign(arr.data(), arr.data() + arr.size());
            return r;
        };
        records.push_back(to_rec("param/", p.tensor.values()));
        records.push_back(to_rec("adam.m/", adam.m[i]));
        records.push_back(to_rec("adam.v/", adam.v[i]));
    }
    ParamRecord meta;
    meta.name = "meta";
    meta.shape = {2};
    meta.values = {static_cast<float>(adam.t), static_cast<float>(next_epoch)};
    records.push_back(meta);
    write_param_store(path, records);
    nlohmann::json sidecar = {{"format", 1},
                              {"config", cfg.to_json()},
                              {"next_epoch", next_epoch}};
    write_text(path + ".json", sidecar.dump(2) + "\n");
}

TrainState load_train_state(const std::string& path, const TrainRunConfig& cfg) {
    std::ifstream sf(path + ".json");
    if (!sf) throw std::runtime_error("missing train state sidecar: " + path + ".json");
    nlohmann::json sidecar;
    sf >> sidecar;
    const nlohmann::json stored = sidecar.at("config");
    if (stored.dump() != cfg.to_json().dump())
        throw std::runtime_error(
            "resume: configuration differs from the one stored in the train state");

    TrainState state;
    state.model = build_model<float>(cfg.model, cfg.train.seed);
    state.adam = AdamState<float>::init(state.model);

    auto records = read_param_store(path);
    std::unordered_map<std::string, const ParamRecord*> by_name;
    for (const auto& r : records) by_name.emplace(r.name, &r);
    auto fetch = [&](const std::string& name) -> const ParamRecord& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("train state missing " + name);
        return *it->second;
    };
    for (std::size_t i = 0; i < state.model.params.size(); ++i) {
        auto& p = state.model.params[i];
        const auto& pr = fetch("param/" + p.name);
        const auto& mr = fetch("adam.m/" + p.name);
        const auto& vr = fetch("adam.v/" + p.name);
        if (pr.shape != p.tensor.shape())
            throw std::runtime_error("train state parameter " + p.name + " shape mismatch");
        for (std::int64_t k = 0; k < p.tensor.numel(); ++k) {
            p.tensor.values()[k] = pr.values[static_cast<std::size_t>(k)];
            state.adam.m[i][k] = mr.values[static_cast<std::size_t>(k)];
            state.adam.v[i][k] = vr.values[static_cast<std::size_t>(k)];
        }
    }
    const auto& meta = fetch("meta");
    state.adam.t = static_cast<long>(meta.values.at(0));
    state.next_epoch = static_cast<int>(meta.values.at(1));
    return state;
}

void run_train(const TrainRunConfig& cfg, const std::string& data_dir,
               const std::string& out_dir, const std::string& resume_state,
               const std::string& config_path) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.model.validate();
    cfg.train.validate();
    fs::create_directories(out_dir);

    auto dataset = load_dataset(data_dir, cfg.model.block_size, cfg.overlap);

    NrtrModel<float> model;
    AdamState<float> adam;
    int start_epoch = 0;
    if (resume_state.empty()) {
        model = build_model<float>(cfg.model, cfg.train.seed);
        adam = AdamState<float>::init(model);
    } else {
        TrainState st = load_train_state(resume_state, cfg);
        model = std::move(st.model);
        adam = std::move(st.adam);
        start_epoch = st.next_epoch;
    }

    const std::string csv_path = (fs::path(out_dir) / "loss.csv").string();
    const bool append = fs::exists(csv_path);
    std::ofstream csv(csv_path, append ? std::ios::app : std::ios::out);
    if (!csv) throw std::runtime_error("cannot write " + csv_path);
    if (!append) csv << kLossHeader;

    auto checkpoint_paths = [&](int epoch) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "state_epoch_%04d.ckpt", epoch);
        return (fs::path(out_dir) / buf).string();
    };
    auto on_epoch_end = [&](int epoch) {
        if ((epoch + 1) % cfg.train.checkpoint_every_epochs == 0 ||
            epoch == cfg.train.epochs - 1)
            save_train_state(checkpoint_paths(epoch), model, adam, epoch + 1, cfg);
    };
    auto on_row = [&](const LossRow& r) {
        csv << format_loss_row(r);
        csv.flush();
    };

    train(model, dataset, cfg.train, adam, start_epoch, on_epoch_end, on_row);
    const std::string model_path = (fs::path(out_dir) / "model.ckpt").string();
    save_checkpoint(model, model_path);

    RunPaths paths;
    paths.inputs.push_back(data_dir);
    paths.outputs.push_back(model_path);
    paths.outputs.push_back(csv_path);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out_dir, "train", config_path, cfg.train.seed, paths, secs);
}

void run_infer(const std::string& checkpoint, const std::string& volume_path,
               const std::string& out_swc, const InferOptions& opts) {
    const auto t0 = std::chrono::steady_clock::now();
    NrtrModel<float> model = load_checkpoint_auto(checkpoint);
    Volume vol = load_volume(volume_path);
    const int block_size = opts.block_size > 0 ? opts.block_size : model.cfg.block_size;
    if (block_size != model.cfg.block_size)
        throw std::invalid_argument("infer: block size must match the model (" +
                                    std::to_string(model.cfg.block_size) + ")");

    int factor = opts.upsample;
    const bool too_small = vol.dims[0] < block_size || vol.dims[1] < block_size ||
                           vol.dims[2] < block_size;
    if (factor == 0 && too_small) factor = 8;  // resolution rescue for small stacks
    if (factor > 1) vol = upsample_trilinear(vol, factor);

    std::vector<BlockPoints> per_block;
    int block_id = 0;
    for (const auto& origin : blockify(vol, block_size, opts.overlap)) {
        Block raw = extract_block(vol, origin, block_size);
        Block input = normalize(raw);
        PointSet pred = forward(model, input);
        BlockPoints bp;
        bp.points = filter_points(pred, opts.threshold);
        bp.origin = origin;
        bp.size = block_size;
        bp.block_id = block_id++;
        per_block.push_back(std::move(bp));
    }
    const auto merged = merge_blocks(per_block, opts.merge_radius);
    const SwcForest forest = build_forest(merged, opts.tau, opts.absolute_cap);
    write_swc_file(forest, out_swc);

    const fs::path out_dir = fs::path(out_swc).parent_path();
    if (!out_dir.empty()) {
        RunPaths paths;
        paths.inputs = {checkpoint, volume_path};
        paths.outputs = {out_swc};
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_manifest(out_dir.string(), "infer", "", 0, paths, secs);
    }
}

Scores run_eval(const std::string& pred_swc, const std::string& gt_swc,
                const std::array<int, 3>& dims, const std::string& out_json) {
    const SwcForest pred = read_swc_file(pred_swc);
    const SwcForest gt = read_swc_file(gt_swc);
    const Scores s = evaluate(pred, gt, dims);
    if (!out_json.empty()) write_text(out_json, s.to_json().dump(2) + "\n");
    return s;
}

}  // namespace nrtr
