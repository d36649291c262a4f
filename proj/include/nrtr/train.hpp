#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrtr/loss_graph.hpp"
#include "nrtr/net.hpp"
#include "nrtr/rng.hpp"
#include "nrtr/synth.hpp"

namespace nrtr {

struct TrainConfig {
    int epochs = 100;
    int warmup_epochs = 10;
    double lr_transformer = 1e-4;
    double lr_backbone = 1e-5;
    double weight_decay = 1e-4;
    bool decoupled_weight_decay = true;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 4;
    std::uint64_t seed = 0;
    LossWeights loss_weights;
    bool augment = true;
    float empty_fg_threshold = 0.05f;  // raw-scale [0,1] intensity
    float empty_min_fraction = 0.001f;
    int checkpoint_every_epochs = 1;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
        if (warmup_epochs < 0 || warmup_epochs >= epochs)
            throw std::invalid_argument("train config: need 0 <= warmup_epochs < epochs");
        if (lr_transformer <= 0 || lr_backbone <= 0)
            throw std::invalid_argument("train config: learning rates must be positive");
        if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    }
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

inline nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{{"epochs", epochs},
                          {"warmup_epochs", warmup_epochs},
                          {"lr_transformer", lr_transformer},
                          {"lr_backbone", lr_backbone},
                          {"weight_decay", weight_decay},
                          {"decoupled_weight_decay", decoupled_weight_decay},
                          {"adam_beta1", adam_beta1},
                          {"adam_beta2", adam_beta2},
                          {"adam_eps", adam_eps},
                          {"batch_size", batch_size},
                          {"seed", seed},
                          {"w_cls", loss_weights.w_cls},
                          {"w_box", loss_weights.w_box},
                          {"w_iou", loss_weights.w_iou},
                          {"no_object_weight", loss_weights.no_object_weight},
                          {"augment", augment},
                          {"empty_fg_threshold", empty_fg_threshold},
                          {"empty_min_fraction", empty_min_fraction},
                          {"checkpoint_every_epochs", checkpoint_every_epochs}};
}

inline TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.lr_transformer = j.value("lr_transformer", c.lr_transformer);
    c.lr_backbone = j.value("lr_backbone", c.lr_backbone);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.decoupled_weight_decay = j.value("decoupled_weight_decay", c.decoupled_weight_decay);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.loss_weights.w_cls = j.value("w_cls", c.loss_weights.w_cls);
    c.loss_weights.w_box = j.value("w_box", c.loss_weights.w_box);
    c.loss_weights.w_iou = j.value("w_iou", c.loss_weights.w_iou);
    c.loss_weights.no_object_weight = j.value("no_object_weight", c.loss_weights.no_object_weight);
    c.augment = j.value("augment", c.augment);
    c.empty_fg_threshold = j.value("empty_fg_threshold", c.empty_fg_threshold);
    c.empty_min_fraction = j.value("empty_min_fraction", c.empty_min_fraction);
    c.checkpoint_every_epochs = j.value("checkpoint_every_epochs", c.checkpoint_every_epochs);
    return c;
}

/// Linear warmup to `base` over warmup_steps, then cosine decay to ~0 at
/// total_steps.
inline double lr_at(long step, long total_steps, long warmup_steps, double base) {
    if (warmup_steps > 0 && step < warmup_steps)
        return base * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return base * 0.5 * (1.0 + std::cos(M_PI * progress));
}

template <typename T>
struct AdamState {
    using Array = typename Tensor<T>::Array;
    std::vector<Array> m;
    std::vector<Array> v;
    long t = 0;

    static AdamState init(const NrtrModel<T>& model) {
        AdamState s;
        s.m.reserve(model.params.size());
        s.v.reserve(model.params.size());
        for (const auto& p : model.params) {
            s.m.push_back(Array::Zero(p.tensor.numel()));
            s.v.push_back(Array::Zero(p.tensor.numel()));
        }
        return s;
    }
};

/// One Adam update with bias correction; weight decay is decoupled
/// (p -= lr*wd*p) by default, classic L2 (grad += wd*p) otherwise.
/// Parameters with no accumulated gradient are treated as zero-gradient.
template <typename T>
void adam_step(NrtrModel<T>& model, AdamState<T>& state, const TrainConfig& cfg,
               double lr_transformer, double lr_backbone) {
    if (state.m.size() != model.params.size())
        throw std::invalid_argument("adam_step: state does not match the model");
    ++state.t;
    const T b1 = static_cast<T>(cfg.adam_beta1);
    const T b2 = static_cast<T>(cfg.adam_beta2);
    const T eps = static_cast<T>(cfg.adam_eps);
    const T bc1 = static_cast<T>(1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t)));
    const T bc2 = static_cast<T>(1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t)));
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        auto& p = model.params[i];
        const T lr =
            static_cast<T>(p.group == "backbone" ? lr_backbone : lr_transformer);
        const T wd = static_cast<T>(cfg.weight_decay);
        auto& vals = p.tensor.values();
        typename Tensor<T>::Array grad =
            p.tensor.has_grad() ? p.tensor.grad()
                                : Tensor<T>::Array::Zero(p.tensor.numel());
        if (!cfg.decoupled_weight_decay && wd != T(0)) grad += wd * vals;
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * grad;
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * grad.square();
        if (cfg.decoupled_weight_decay && wd != T(0)) vals -= lr * wd * vals;
        vals -= lr * (state.m[i] / bc1) / ((state.v[i] / bc2).sqrt() + eps);
    }
}

/// Applies cube symmetry `symmetry_id` (0..47, 0 = identity) to a cubic
/// block and the same affine map to its normalized ground-truth points.
inline void augment(Block& block, PointSet& points, int symmetry_id) {
    const std::size_t expect =
        static_cast<std::size_t>(block.size) * block.size * block.size;
    if (block.data.size() != expect)
        throw std::invalid_argument("augment: block is not cubic");
    const CubeSymmetry s = cube_symmetry(symmetry_id);
    if (symmetry_id != 0) {
        const int n = block.size;
        std::vector<float> out(block.data.size());
        std::array<int, 3> in{}, o{};
        for (in[2] = 0; in[2] < n; ++in[2])
            for (in[1] = 0; in[1] < n; ++in[1])
                for (in[0] = 0; in[0] < n; ++in[0]) {
                    for (int a = 0; a < 3; ++a) {
                        const int c = in[s.perm[a]];
                        o[a] = s.flip[a] ? n - 1 - c : c;
                    }
                    out[static_cast<std::size_t>(o[0]) +
                        static_cast<std::size_t>(n) *
                            (o[1] + static_cast<std::size_t>(n) * o[2])] =
                        block.data[static_cast<std::size_t>(in[0]) +
                                   static_cast<std::size_t>(n) *
                                       (in[1] + static_cast<std::size_t>(n) * in[2])];
                }
        block.data = std::move(out);
        for (auto& p : points.points) {
            const double c[3] = {p.a, p.b, p.c};
            double t[3];
            for (int a = 0; a < 3; ++a) t[a] = s.flip[a] ? 1.0 - c[s.perm[a]] : c[s.perm[a]];
            p.a = t[0];
            p.b = t[1];
            p.c = t[2];
        }
    }
}

/// One training sample: a raw-scale block (intensities in [0,1] before
/// percentile normalization) and its ground-truth point set.
struct TrainSample {
    Block block;
    PointSet gt;
    std::string source;
};

struct LossRow {
    long step = 0;
    int epoch = 0;
    double lr_transformer = 0;
    double lr_backbone = 0;
    double total = 0;
    double cls = 0;
    double box = 0;
    double giou = 0;
};

class TrainAbort : public std::runtime_error {
public:
    TrainAbort(const std::string& what, std::vector<std::string> batch)
        : std::runtime_error(what), batch_sources(std::move(batch)) {}
    std::vector<std::string> batch_sources;
};

struct TrainResult {
    std::vector<LossRow> log;
    long steps_per_epoch = 0;
};

/// The optimization recipe: per-step warmup+cosine schedule, per-group
/// learning rates, cube-symmetry augmentation, Adam. Deterministic given
/// cfg.seed: data order is a per-epoch permutation and augmentation draws
/// come from per-step seeds. `on_epoch_end(epoch)` fires after each epoch
/// for checkpointing; `on_row` after each step. start_epoch > 0 resumes.
template <typename T>
TrainResult train(NrtrModel<T>& model, const std::vector<TrainSample>& dataset,
                  const TrainConfig& cfg, AdamState<T>& adam, int start_epoch = 0,
                  const std::function<void(int)>& on_epoch_end = {},
                  const std::function<void(const LossRow&)>& on_row = {}) {
    cfg.validate();

    // Empty-block filtering on raw-scale intensities, then per-block
    // percentile normalization for the model input.
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (is_empty_block(dataset[i].block, cfg.empty_fg_threshold, cfg.empty_min_fraction))
            continue;
        if (static_cast<int>(dataset[i].gt.size()) > model.cfg.queries) continue;
        kept.push_back(i);
    }
    if (kept.empty())
        throw std::invalid_argument("train: dataset empty after empty-block filtering");
    std::vector<TrainSample> samples;
    samples.reserve(kept.size());
    for (std::size_t i : kept) {
        TrainSample s = dataset[i];
        s.block = normalize(s.block);
        samples.push_back(std::move(s));
    }

    const long n = static_cast<long>(samples.size());
    const long steps_per_epoch = std::max<long>(1, n / cfg.batch_size);
    const long total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;
    const long warmup_steps = static_cast<long>(cfg.warmup_epochs) * steps_per_epoch;
    const bool with_replacement = n < cfg.batch_size;

    TrainResult result;
    result.steps_per_epoch = steps_per_epoch;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        std::vector<long> order(n);
        for (long i = 0; i < n; ++i) order[i] = i;
        Rng shuffle_rng(mix_seed(cfg.seed, 0x5u + static_cast<std::uint64_t>(epoch)));
        for (long i = n - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.below(static_cast<std::uint64_t>(i + 1))]);

        for (long s = 0; s < steps_per_epoch; ++s) {
            const long step = static_cast<long>(epoch) * steps_per_epoch + s;
            const double lr_t = lr_at(step, total_steps, warmup_steps, cfg.lr_transformer);
            const double lr_b = lr_at(step, total_steps, warmup_steps, cfg.lr_backbone);

            std::vector<long> batch(cfg.batch_size);
            Rng step_rng(mix_seed(cfg.seed, 0x9e0000u + static_cast<std::uint64_t>(step)));
            for (int b = 0; b < cfg.batch_size; ++b)
                batch[b] = with_replacement
                               ? static_cast<long>(step_rng.below(static_cast<std::uint64_t>(n)))
                               : order[s * cfg.batch_size + b];

            model.zero_grad();
            LossRow row;
            row.step = step;
            row.epoch = epoch;
            row.lr_transformer = lr_t;
            row.lr_backbone = lr_b;
            std::vector<std::string> batch_sources;
            for (int b = 0; b < cfg.batch_size; ++b) {
                TrainSample sample = samples[batch[b]];
                batch_sources.push_back(sample.source);
                if (cfg.augment) {
                    const int sym = static_cast<int>(step_rng.below(48));
                    augment(sample.block, sample.gt, sym);
                }
                Tensor<T> pred = model.forward_graph(block_to_tensor<T>(sample.block));
                SetLossGraph<T> loss = set_loss_graph(pred, sample.gt, cfg.loss_weights);
                row.total += loss.scalar.total / cfg.batch_size;
                row.cls += loss.scalar.cls_term / cfg.batch_size;
                row.box += loss.scalar.box_term / cfg.batch_size;
                row.giou += loss.scalar.giou_term / cfg.batch_size;
                backward(scalar_mul(loss.total, static_cast<T>(1.0 / cfg.batch_size)));
            }
            if (!std::isfinite(row.total))
                throw TrainAbort("train: non-finite loss at step " + std::to_string(step),
                                 batch_sources);
            adam_step(model, adam, cfg, lr_t, lr_b);
            result.log.push_back(row);
            if (on_row) on_row(row);
        }
        if (on_epoch_end) on_epoch_end(epoch);
    }
    return result;
}

}  // namespace nrtr
