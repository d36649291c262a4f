#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrtr/metrics.hpp"
#include "nrtr/net.hpp"
#include "nrtr/synth.hpp"
#include "nrtr/train.hpp"

namespace nrtr {

inline const char* kToolkitVersion = "0.1.0";

/// Raised for malformed run configuration files; CLI maps it to the data
/// error exit code.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct SynthRunSpec {
    int n_samples = 4;
    std::uint64_t seed = 0;
    SynthSpec synth;
    RenderSpec render;

    static SynthRunSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct RunPaths {
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
};

/// Writes out_dir/manifest.json describing one CLI run.
void write_manifest(const std::string& out_dir, const std::string& command,
                    const std::string& config_path, std::uint64_t seed, const RunPaths& paths,
                    double wall_clock_seconds);

/// Generates n_samples paired (volume, SWC) samples, deterministic per seed.
void run_synth(const SynthRunSpec& spec, const std::string& out_dir,
               const std::string& config_path = "");

struct TrainRunConfig {
    ModelConfig model;
    TrainConfig train;
    int overlap = 0;  // blockify overlap when cutting training blocks

    static TrainRunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Cuts every volume of a synth dataset directory into training samples.
std::vector<TrainSample> load_dataset(const std::string& data_dir, int block_size, int overlap);

/// Full training run: dataset assembly, optimization, loss CSV, per-epoch
/// state snapshots, final model.ckpt. `resume_state` continues from a
/// state_epoch_*.ckpt snapshot (configs must match it).
void run_train(const TrainRunConfig& cfg, const std::string& data_dir,
               const std::string& out_dir, const std::string& resume_state = "",
               const std::string& config_path = "");

struct InferOptions {
    int upsample = 0;  // 0: factor 8 only when the volume is smaller than a block
    int block_size = 0;  // 0: model block size
    int overlap = 0;
    double threshold = 0.5;
    double tau = 3.0;
    double absolute_cap = 30.0;
    double merge_radius = 1.5;
};

/// checkpoint + volume -> SWC reconstruction (blockify, forward, filter,
/// merge, build_forest).
void run_infer(const std::string& checkpoint, const std::string& volume_path,
               const std::string& out_swc, const InferOptions& opts);

/// Rasterize-and-overlap evaluation of two SWC files on a dims grid.
Scores run_eval(const std::string& pred_swc, const std::string& gt_swc,
                const std::array<int, 3>& dims, const std::string& out_json = "");

// Train-state snapshots (model + Adam + position), used by --resume.
struct TrainState {
    NrtrModel<float> model;
    AdamState<float> adam;
    int next_epoch = 0;
};
void save_train_state(const std::string& path, const NrtrModel<float>& model,
                      const AdamState<float>& adam, int next_epoch,
                      const TrainRunConfig& cfg);
TrainState load_train_state(const std::string& path, const TrainRunConfig& cfg);

}  // namespace nrtr
