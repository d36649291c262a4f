#include <fstream>
#include <sstream>

#include "nrtr/net.hpp"

namespace nrtr {

namespace {

std::string hash_hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

nlohmann::json read_sidecar(const std::string& path) {
    std::ifstream in(path + ".json");
    if (!in) throw std::runtime_error("missing checkpoint sidecar: " + path + ".json");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("corrupt checkpoint sidecar " + path + ".json: " + e.what());
    }
    return j;
}

}  // namespace

void save_checkpoint(const NrtrModel<float>& model, const std::string& path) {
    write_param_store(path, model_records(model));
    nlohmann::json sidecar = {{"format", 1},
                              {"model", model.cfg.to_json()},
                              {"config_hash", hash_hex(model.cfg.hash())}};
    std::ofstream out(path + ".json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint sidecar: " + path + ".json");
    out << sidecar.dump(2) << "\n";
}

ModelConfig checkpoint_config(const std::string& path) {
    return ModelConfig::from_json(read_sidecar(path).at("model"));
}

NrtrModel<float> load_checkpoint(const std::string& path, const ModelConfig& cfg) {
    const nlohmann::json sidecar = read_sidecar(path);
    const std::string stored_hash = sidecar.at("config_hash").get<std::string>();
    if (stored_hash != hash_hex(cfg.hash()))
        throw std::runtime_error("checkpoint config mismatch: stored hash " + stored_hash +
                                 " != requested " + hash_hex(cfg.hash()));
    NrtrModel<float> model = build_model<float>(cfg, 0);
    auto records = read_param_store(path);
    std::unordered_map<std::string, const ParamRecord*> by_name;
    for (const auto& r : records) by_name.emplace(r.name, &r);
    if (records.size() != model.params.size())
        throw std::runtime_error("checkpoint has " + std::to_string(records.size()) +
                                 " records, model needs " + std::to_string(model.params.size()));
    for (auto& p : model.params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint missing parameter: " + p.name);
        const ParamRecord& r = *it->second;
        if (r.shape != p.tensor.shape())
            throw std::runtime_error("checkpoint parameter " + p.name + " has shape " +
                                     shape_str(r.shape) + ", model expects " +
                                     shape_str(p.tensor.shape()));
        for (std::int64_t i = 0; i < p.tensor.numel(); ++i)
            p.tensor.values()[i] = r.values[static_cast<std::size_t>(i)];
    }
    return model;
}

NrtrModel<float> load_checkpoint_auto(const std::string& path) {
    return load_checkpoint(path, checkpoint_config(path));
}

}  // namespace nrtr
