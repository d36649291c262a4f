#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "nrtr/conv.hpp"
#include "nrtr/params.hpp"
#include "nrtr/points.hpp"
#include "nrtr/rng.hpp"
#include "nrtr/tensor.hpp"
#include "nrtr/volume.hpp"

namespace nrtr {

struct ModelConfig {
    int block_size = 64;
    int channels = 192;
    int downsample = 8;
    std::string backbone = "small";  // small | resnet18 | resnet34 | resnet50
    int encoder_layers = 3;
    int decoder_layers = 3;
    int heads = 6;
    int mlp_hidden = -1;   // -1: 4 * channels
    int queries = 64;
    int head_hidden = -1;  // -1: channels

    ModelConfig resolved() const {
        ModelConfig c = *this;
        if (c.mlp_hidden < 0) c.mlp_hidden = 4 * c.channels;
        if (c.head_hidden < 0) c.head_hidden = c.channels;
        return c;
    }

    int grid() const { return block_size / downsample; }
    int tokens() const { return grid() * grid() * grid(); }

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    std::uint64_t hash() const;
};

inline void ModelConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("model config: " + field + " " + why);
    };
    if (block_size <= 0) fail("block_size", "must be positive");
    if (downsample <= 0 || (downsample & (downsample - 1)) != 0)
        fail("downsample", "must be a positive power of two");
    if (block_size % downsample != 0) fail("block_size", "not divisible by downsample");
    if (heads < 1) fail("heads", "must be >= 1");
    if (channels < 1) fail("channels", "must be >= 1");
    if (channels % heads != 0) fail("channels", "not divisible by heads");
    if (channels % 6 != 0) fail("channels", "not divisible by 6 (3-axis sin/cos encoding)");
    if (encoder_layers < 1) fail("encoder_layers", "must be >= 1");
    if (decoder_layers < 1) fail("decoder_layers", "must be >= 1");
    if (queries < 1) fail("queries", "must be >= 1");
    const ModelConfig r = resolved();
    if (r.mlp_hidden < 1) fail("mlp_hidden", "must be >= 1");
    if (r.head_hidden < 1) fail("head_hidden", "must be >= 1");
    if (backbone != "small" && backbone != "resnet18" && backbone != "resnet34" &&
        backbone != "resnet50")
        fail("backbone", "unknown preset '" + backbone + "'");
}

inline nlohmann::json ModelConfig::to_json() const {
    const ModelConfig c = resolved();
    return nlohmann::json{{"block_size", c.block_size},
                          {"channels", c.channels},
                          {"downsample", c.downsample},
                          {"backbone", c.backbone},
                          {"encoder_layers", c.encoder_layers},
                          {"decoder_layers", c.decoder_layers},
                          {"heads", c.heads},
                          {"mlp_hidden", c.mlp_hidden},
                          {"queries", c.queries},
                          {"head_hidden", c.head_hidden}};
}

inline ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.block_size = j.value("block_size", c.block_size);
    c.channels = j.value("channels", c.channels);
    c.downsample = j.value("downsample", c.downsample);
    c.backbone = j.value("backbone", c.backbone);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.heads = j.value("heads", c.heads);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    c.queries = j.value("queries", c.queries);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    return c;
}

inline std::uint64_t ModelConfig::hash() const {
    const std::string s = to_json().dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct BackboneStage {
    int width;
    int blocks;
};

struct BackboneSpec {
    int stem_width;
    bool bottleneck;
    std::vector<BackboneStage> stages;  // stage i sits at stride 2^(i+1)
};

inline BackboneSpec backbone_spec(const std::string& name) {
    if (name == "small") return {16, false, {{16, 2}, {32, 2}, {64, 2}}};
    if (name == "resnet18") return {32, false, {{32, 2}, {64, 2}, {128, 2}, {256, 2}}};
    if (name == "resnet34") return {32, false, {{32, 3}, {64, 4}, {128, 6}, {256, 3}}};
    if (name == "resnet50") return {32, true, {{32, 3}, {64, 4}, {128, 6}, {256, 3}}};
    throw std::invalid_argument("unknown backbone preset: " + name);
}

/// Fixed 3-axis sinusoidal encodings for a grid^3 token lattice:
/// channels/3 per axis, interleaved sin/cos at geometric frequencies
/// (base 10000) of the grid index; token order (z, y, x), x fastest.
template <typename T>
Tensor<T> positional_encoding3d(int grid, int channels) {
    if (channels % 6 != 0) throw ShapeError("positional encoding needs channels % 6 == 0");
    const int per_axis = channels / 3;
    const int pairs = per_axis / 2;
    const int n = grid * grid * grid;
    std::vector<T> enc(static_cast<std::size_t>(n) * channels);
    for (int z = 0; z < grid; ++z)
        for (int y = 0; y < grid; ++y)
            for (int x = 0; x < grid; ++x) {
                const int tok = (z * grid + y) * grid + x;
                const int coords[3] = {x, y, z};
                for (int axis = 0; axis < 3; ++axis)
                    for (int i = 0; i < pairs; ++i) {
                        const double freq =
                            std::pow(10000.0, -2.0 * i / static_cast<double>(per_axis));
                        const double angle = coords[axis] * freq;
                        const std::size_t base =
                            static_cast<std::size_t>(tok) * channels + axis * per_axis + 2 * i;
                        enc[base] = static_cast<T>(std::sin(angle));
                        enc[base + 1] = static_cast<T>(std::cos(angle));
                    }
            }
    return Tensor<T>::from_data({n, channels}, enc, false);
}

/// NRTR: 3D residual backbone with pyramid fusion, transformer
/// encoder-decoder over tokenized features, learned queries, sigmoid heads.
template <typename T>
struct NrtrModel {
    ModelConfig cfg;  // resolved
    std::vector<Parameter<T>> params;
    std::unordered_map<std::string, std::size_t> index;
    Tensor<T> pos;  // constant [tokens, channels]

    const Tensor<T>& p(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw std::logic_error("unknown parameter: " + name);
        return params[it->second].tensor;
    }
    bool has(const std::string& name) const { return index.count(name) != 0; }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& pr : params) n += pr.tensor.numel();
        return n;
    }
    void zero_grad() {
        for (auto& pr : params) pr.tensor.zero_grad();
    }

    Tensor<T> backbone_features(const Tensor<T>& input) const;
    Tensor<T> tokens_from_features(const Tensor<T>& fmap) const;
    Tensor<T> encode(const Tensor<T>& tokens) const;
    Tensor<T> decode(const Tensor<T>& z) const;
    Tensor<T> prediction_heads(const Tensor<T>& emb) const;
    Tensor<T> forward_graph(const Tensor<T>& input) const;
};

namespace detail {

template <typename T>
void add_param(NrtrModel<T>& m, const std::string& name, const std::string& group,
               Tensor<T> tensor) {
    tensor.set_requires_grad(true);
    m.index.emplace(name, m.params.size());
    m.params.push_back({name, group, std::move(tensor)});
}

template <typename T>
Tensor<T> init_normal(Rng& rng, const Shape& shape, double sd) {
    std::vector<T> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = static_cast<T>(rng.normal() * sd);
    return Tensor<T>::from_data(shape, data, false);
}

template <typename T>
void add_conv(NrtrModel<T>& m, Rng& rng, const std::string& name, const std::string& group,
              int cout, int cin, int k) {
    const double sd = std::sqrt(2.0 / (static_cast<double>(cin) * k * k * k));
    add_param(m, name, group, init_normal<T>(rng, {cout, cin, k, k, k}, sd));
}

template <typename T>
void add_linear(NrtrModel<T>& m, Rng& rng, const std::string& name, const std::string& group,
                int in, int out) {
    const double sd = std::sqrt(2.0 / (in + out));
    add_param(m, name + ".w", group, init_normal<T>(rng, {in, out}, sd));
    add_param(m, name + ".b", group, Tensor<T>::zeros({out}));
}

template <typename T>
void add_attention(NrtrModel<T>& m, Rng& rng, const std::string& prefix,
                   const std::string& group, int channels) {
    for (const char* w : {"q", "k", "v", "o"})
        add_linear(m, rng, prefix + ".w" + w, group, channels, channels);
}

/// x [n, C] -> multi-head attention against kv [m, C].
template <typename T>
Tensor<T> attention_block(const NrtrModel<T>& model, const std::string& prefix,
                          const Tensor<T>& x, const Tensor<T>& kv) {
    const int heads = model.cfg.heads;
    const int C = model.cfg.channels;
    const int dh = C / heads;
    const int n = x.shape()[0];
    const int mkv = kv.shape()[0];
    auto proj = [&](const Tensor<T>& src, const std::string& which, int rows) {
        Tensor<T> y = add(matmul(src, model.p(prefix + ".w" + which + ".w")),
                          model.p(prefix + ".w" + which + ".b"));
        return transpose(reshape(y, {rows, heads, dh}), {1, 0, 2});  // [H, rows, dh]
    };
    Tensor<T> q = proj(x, "q", n);
    Tensor<T> k = proj(kv, "k", mkv);
    Tensor<T> v = proj(kv, "v", mkv);
    Tensor<T> att = scaled_dot_product_attention(q, k, v);
    att = reshape(transpose(att, {1, 0, 2}), {n, C});
    return add(matmul(att, model.p(prefix + ".wo.w")), model.p(prefix + ".wo.b"));
}

template <typename T>
Tensor<T> mlp_block(const NrtrModel<T>& model, const std::string& prefix, const Tensor<T>& x) {
    Tensor<T> h = add(matmul(x, model.p(prefix + ".w1.w")), model.p(prefix + ".w1.b"));
    h = gelu(h);
    return add(matmul(h, model.p(prefix + ".w2.w")), model.p(prefix + ".w2.b"));
}

/// Sample-wise normalization of a conv map (over channels and space).
template <typename T>
Tensor<T> conv_norm(const Tensor<T>& x) {
    return layernorm(x, 1);
}

template <typename T>
Tensor<T> residual_block(const NrtrModel<T>& model, const std::string& prefix, Tensor<T> x,
                         bool bottleneck, bool has_skip_proj, int stride) {
    Tensor<T> skip = x;
    Tensor<T> h;
    if (!bottleneck) {
        h = conv3d(x, model.p(prefix + ".conv1.w"), stride, 1);
        h = relu(conv_norm(h));
        h = conv3d(h, model.p(prefix + ".conv2.w"), 1, 1);
        h = conv_norm(h);
    } else {
        h = conv3d(x, model.p(prefix + ".conv1.w"), 1, 0);
        h = relu(conv_norm(h));
        h = conv3d(h, model.p(prefix + ".conv2.w"), stride, 1);
        h = relu(conv_norm(h));
        h = conv3d(h, model.p(prefix + ".conv3.w"), 1, 0);
        h = conv_norm(h);
    }
    if (has_skip_proj) skip = conv3d(skip, model.p(prefix + ".skip.w"), stride, 0);
    return relu(add(h, skip));
}

}  // namespace detail

template <typename T>
Tensor<T> NrtrModel<T>::backbone_features(const Tensor<T>& input) const {
    const BackboneSpec spec = backbone_spec(cfg.backbone);
    Tensor<T> h = conv3d(input, p("backbone.stem.w"), 2, 1);
    h = relu(detail::conv_norm(h));

    std::vector<Tensor<T>> stage_out;
    std::vector<int> stage_stride;
    int stride_now = 2;
    for (std::size_t si = 0; si < spec.stages.size(); ++si) {
        const int expansion = spec.bottleneck ? 4 : 1;
        for (int b = 0; b < spec.stages[si].blocks; ++b) {
            const std::string prefix =
                "backbone.s" + std::to_string(si) + ".b" + std::to_string(b);
            const int stride = (si > 0 && b == 0) ? 2 : 1;
            h = detail::residual_block(*this, prefix, h, spec.bottleneck,
                                       has(prefix + ".skip.w"), stride);
            if (si > 0 && b == 0) stride_now *= 2;
        }
        (void)expansion;
        stage_out.push_back(h);
        stage_stride.push_back(stride_now);
    }

    // Pyramid fusion onto the stride = cfg.downsample map. Pool-then-project
    // on finer maps (averaging commutes with the 1x1 projection).
    Tensor<T> fused;
    for (std::size_t si = 0; si < stage_out.size(); ++si) {
        Tensor<T> f = stage_out[si];
        int s = stage_stride[si];
        while (s < cfg.downsample) {
            f = avgpool3d(f, 2, 2);
            s *= 2;
        }
        f = conv3d(f, p("fpn.lateral" + std::to_string(si) + ".w"), 1, 0);
        f = add_channel_bias(f, p("fpn.lateral" + std::to_string(si) + ".b"));
        while (s > cfg.downsample) {
            f = upsample_nearest3d(f, 2);
            s /= 2;
        }
        fused = fused.defined() ? add(fused, f) : f;
    }
    fused = conv3d(fused, p("fpn.fuse.w"), 1, 0);
    fused = add_channel_bias(fused, p("fpn.fuse.b"));
    return fused;  // [1, C, G, G, G]
}

template <typename T>
Tensor<T> NrtrModel<T>::tokens_from_features(const Tensor<T>& fmap) const {
    const int n = cfg.tokens();
    Tensor<T> t = reshape(fmap, {cfg.channels, n});
    t = transpose(t, {1, 0});  // [n, C]
    return add(t, pos);
}

template <typename T>
Tensor<T> NrtrModel<T>::encode(const Tensor<T>& tokens) const {
    Tensor<T> h = tokens;
    for (int l = 0; l < cfg.encoder_layers; ++l) {
        const std::string prefix = "encoder.l" + std::to_string(l);
        Tensor<T> a = layernorm(h, 1);
        h = add(h, detail::attention_block(*this, prefix + ".attn", a, a));
        h = add(h, detail::mlp_block(*this, prefix + ".mlp", layernorm(h, 1)));
    }
    return layernorm(h, 1);
}

template <typename T>
Tensor<T> NrtrModel<T>::decode(const Tensor<T>& z) const {
    Tensor<T> q = p("queries");
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        const std::string prefix = "decoder.l" + std::to_string(l);
        Tensor<T> a = layernorm(q, 1);
        q = add(q, detail::attention_block(*this, prefix + ".self", a, a));
        q = add(q, detail::mlp_block(*this, prefix + ".mlp_a", layernorm(q, 1)));
        q = add(q, detail::attention_block(*this, prefix + ".cross", layernorm(q, 1), z));
        q = add(q, detail::mlp_block(*this, prefix + ".mlp_b", layernorm(q, 1)));
    }
    return layernorm(q, 1);
}

template <typename T>
Tensor<T> NrtrModel<T>::prediction_heads(const Tensor<T>& emb) const {
    Tensor<T> c = relu(add(matmul(emb, p("head.coord.w1.w")), p("head.coord.w1.b")));
    c = relu(add(matmul(c, p("head.coord.w2.w")), p("head.coord.w2.b")));
    c = add(matmul(c, p("head.coord.w3.w")), p("head.coord.w3.b"));
    c = sigmoid(c);  // [N, 4] -> (a, b, c, r)
    Tensor<T> cls = sigmoid(add(matmul(emb, p("head.cls.w")), p("head.cls.b")));
    return concat<T>({c, cls}, 1);  // [N, 5]
}

template <typename T>
Tensor<T> NrtrModel<T>::forward_graph(const Tensor<T>& input) const {
    const int s = cfg.block_size;
    if (input.shape() != Shape{1, 1, s, s, s})
        throw ShapeError("forward: expected input [1,1," + std::to_string(s) + "," +
                         std::to_string(s) + "," + std::to_string(s) + "], got " +
                         shape_str(input.shape()));
    Tensor<T> fmap = backbone_features(input);
    Tensor<T> tokens = tokens_from_features(fmap);
    Tensor<T> z = encode(tokens);
    Tensor<T> emb = decode(z);
    return prediction_heads(emb);
}

template <typename T>
NrtrModel<T> build_model(const ModelConfig& cfg_in, std::uint64_t seed) {
    cfg_in.validate();
    NrtrModel<T> m;
    m.cfg = cfg_in.resolved();
    const ModelConfig& cfg = m.cfg;
    const BackboneSpec spec = backbone_spec(cfg.backbone);
    Rng rng(seed);

    using detail::add_attention;
    using detail::add_conv;
    using detail::add_linear;
    using detail::add_param;

    add_conv(m, rng, "backbone.stem.w", "backbone", spec.stem_width, 1, 3);
    int in_w = spec.stem_width;
    std::vector<int> stage_out_width;
    for (std::size_t si = 0; si < spec.stages.size(); ++si) {
        const int width = spec.stages[si].width;
        const int out_w = spec.bottleneck ? 4 * width : width;
        for (int b = 0; b < spec.stages[si].blocks; ++b) {
            const std::string prefix =
                "backbone.s" + std::to_string(si) + ".b" + std::to_string(b);
            const int stride = (si > 0 && b == 0) ? 2 : 1;
            if (!spec.bottleneck) {
                add_conv(m, rng, prefix + ".conv1.w", "backbone", width, in_w, 3);
                add_conv(m, rng, prefix + ".conv2.w", "backbone", width, width, 3);
            } else {
                add_conv(m, rng, prefix + ".conv1.w", "backbone", width, in_w, 1);
                add_conv(m, rng, prefix + ".conv2.w", "backbone", width, width, 3);
                add_conv(m, rng, prefix + ".conv3.w", "backbone", out_w, width, 1);
            }
            if (stride != 1 || in_w != out_w)
                add_conv(m, rng, prefix + ".skip.w", "backbone", out_w, in_w, 1);
            in_w = out_w;
        }
        stage_out_width.push_back(in_w);
    }
    for (std::size_t si = 0; si < stage_out_width.size(); ++si) {
        add_conv(m, rng, "fpn.lateral" + std::to_string(si) + ".w", "backbone", cfg.channels,
                 stage_out_width[si], 1);
        add_param(m, "fpn.lateral" + std::to_string(si) + ".b", "backbone",
                  Tensor<T>::zeros({cfg.channels}));
    }
    add_conv(m, rng, "fpn.fuse.w", "backbone", cfg.channels, cfg.channels, 1);
    add_param(m, "fpn.fuse.b", "backbone", Tensor<T>::zeros({cfg.channels}));

    for (int l = 0; l < cfg.encoder_layers; ++l) {
        const std::string prefix = "encoder.l" + std::to_string(l);
        add_attention(m, rng, prefix + ".attn", "transformer", cfg.channels);
        add_linear(m, rng, prefix + ".mlp.w1", "transformer", cfg.channels, cfg.mlp_hidden);
        add_linear(m, rng, prefix + ".mlp.w2", "transformer", cfg.mlp_hidden, cfg.channels);
    }
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        const std::string prefix = "decoder.l" + std::to_string(l);
        add_attention(m, rng, prefix + ".self", "transformer", cfg.channels);
        add_linear(m, rng, prefix + ".mlp_a.w1", "transformer", cfg.channels, cfg.mlp_hidden);
        add_linear(m, rng, prefix + ".mlp_a.w2", "transformer", cfg.mlp_hidden, cfg.channels);
        add_attention(m, rng, prefix + ".cross", "transformer", cfg.channels);
        add_linear(m, rng, prefix + ".mlp_b.w1", "transformer", cfg.channels, cfg.mlp_hidden);
        add_linear(m, rng, prefix + ".mlp_b.w2", "transformer", cfg.mlp_hidden, cfg.channels);
    }
    add_param(m, "queries", "transformer",
              detail::init_normal<T>(rng, {cfg.queries, cfg.channels}, 1.0));
    add_linear(m, rng, "head.coord.w1", "transformer", cfg.channels, cfg.head_hidden);
    add_linear(m, rng, "head.coord.w2", "transformer", cfg.head_hidden, cfg.head_hidden);
    add_linear(m, rng, "head.coord.w3", "transformer", cfg.head_hidden, 4);
    add_linear(m, rng, "head.cls", "transformer", cfg.channels, 1);

    m.pos = positional_encoding3d<T>(cfg.grid(), cfg.channels);

    // Query embeddings must be pairwise distinct or the decoder collapses.
    {
        const auto& q = m.p("queries").values();
        for (int i = 0; i < cfg.queries; ++i)
            for (int j = i + 1; j < cfg.queries; ++j) {
                bool same = true;
                for (int c = 0; c < cfg.channels && same; ++c)
                    same = q[static_cast<std::int64_t>(i) * cfg.channels + c] ==
                           q[static_cast<std::int64_t>(j) * cfg.channels + c];
                if (same) throw std::logic_error("build_model: duplicate query embeddings");
            }
    }
    // Same for positional encodings over the whole grid.
    {
        const auto& e = m.pos.values();
        const int n = cfg.tokens();
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                bool same = true;
                for (int c = 0; c < cfg.channels && same; ++c)
                    same = e[static_cast<std::int64_t>(i) * cfg.channels + c] ==
                           e[static_cast<std::int64_t>(j) * cfg.channels + c];
                if (same)
                    throw std::logic_error("build_model: positional encodings not distinct");
            }
    }
    return m;
}

/// Wraps a normalized block as a [1,1,s,s,s] constant tensor (z, y, x axes;
/// the block's x-fastest layout matches row-major order directly).
template <typename T>
Tensor<T> block_to_tensor(const Block& b) {
    std::vector<T> data(b.data.size());
    for (std::size_t i = 0; i < b.data.size(); ++i) data[i] = static_cast<T>(b.data[i]);
    return Tensor<T>::from_data({1, 1, b.size, b.size, b.size}, data, false);
}

/// Single forward pass: N points, every field in (0,1).
template <typename T>
PointSet forward(const NrtrModel<T>& model, const Block& b) {
    Tensor<T> out = model.forward_graph(block_to_tensor<T>(b));
    PointSet set;
    set.role = SetRole::Prediction;
    set.points.resize(model.cfg.queries);
    for (int i = 0; i < model.cfg.queries; ++i) {
        set.points[i].a = out.value_at(i * 5 + 0);
        set.points[i].b = out.value_at(i * 5 + 1);
        set.points[i].c = out.value_at(i * 5 + 2);
        set.points[i].r = out.value_at(i * 5 + 3);
        set.points[i].cls = out.value_at(i * 5 + 4);
    }
    return set;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

template <typename T>
std::vector<ParamRecord> model_records(const NrtrModel<T>& model) {
    std::vector<ParamRecord> records;
    records.reserve(model.params.size());
    for (const auto& pr : model.params) {
        ParamRecord r;
        r.name = pr.name;
        r.shape = pr.tensor.shape();
        r.values.resize(static_cast<std::size_t>(pr.tensor.numel()));
        for (std::int64_t i = 0; i < pr.tensor.numel(); ++i)
            r.values[static_cast<std::size_t>(i)] = static_cast<float>(pr.tensor.value_at(i));
        records.push_back(std::move(r));
    }
    return records;
}

void save_checkpoint(const NrtrModel<float>& model, const std::string& path);
NrtrModel<float> load_checkpoint(const std::string& path, const ModelConfig& cfg);
NrtrModel<float> load_checkpoint_auto(const std::string& path);
ModelConfig checkpoint_config(const std::string& path);

}  // namespace nrtr
