#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "occlu/augraph/backbone.hpp"
#include "occlu/augraph/head.hpp"
#include "occlu/mae/mae.hpp"

namespace occlu::harness {

/// in -> out affine map applied at `positions` positions.
/// MACs = positions * in * out; params = in * out + out.
struct AffineLayer {
    std::size_t in = 0, out = 0, positions = 1;
};

/// Square-kernel convolution producing out_h x out_w outputs.
/// MACs = out_h * out_w * kernel^2 * in * out; params = kernel^2 * in * out + out.
struct ConvLayer {
    std::size_t in = 0, out = 0, kernel = 1, out_h = 1, out_w = 1;
};

/// Scaled dot-product attention core (projections are separate affine layers).
/// MACs = 2 * queries * keys * dim (scores plus weighted sum); params = 0.
struct AttentionLayer {
    std::size_t queries = 0, keys = 0, dim = 0;
};

/// Layer or batch normalization with a learned scale and offset.
/// MACs = positions * channels; params = 2 * channels.
struct NormLayer {
    std::size_t positions = 0, channels = 0;
};

/// Free parameter tensor (anchors, mask token). MACs = 0; params = count.
struct ParamLayer {
    std::size_t count = 0;
};

using LayerSpec = std::variant<AffineLayer, ConvLayer, AttentionLayer, NormLayer, ParamLayer>;

struct Complexity {
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
};

inline Complexity count_layer(const LayerSpec& layer) {
    return std::visit(
        [](const auto& l) -> Complexity {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, AffineLayer>)
                return {l.in * l.out + l.out, std::uint64_t(l.positions) * l.in * l.out};
            else if constexpr (std::is_same_v<L, ConvLayer>)
                return {l.kernel * l.kernel * l.in * l.out + l.out,
                        std::uint64_t(l.out_h) * l.out_w * l.kernel * l.kernel * l.in * l.out};
            else if constexpr (std::is_same_v<L, AttentionLayer>)
                return {0, 2ull * l.queries * l.keys * l.dim};
            else if constexpr (std::is_same_v<L, NormLayer>)
                return {2ull * l.channels, std::uint64_t(l.positions) * l.channels};
            else
                return {l.count, 0};
        },
        layer);
}

inline Complexity count_params_macs(const std::vector<LayerSpec>& model) {
    Complexity c;
    for (const auto& l : model) {
        auto x = count_layer(l);
        c.params += x.params;
        c.macs += x.macs;
    }
    return c;
}

/// Parses a model description, one layer per line:
///   affine in=<n> out=<n> [positions=<n>]
///   conv in=<n> out=<n> kernel=<n> out_h=<n> out_w=<n>
///   attention queries=<n> keys=<n> dim=<n>
///   norm positions=<n> channels=<n>
///   param count=<n>
/// Blank lines and '#' comments are ignored.
inline std::vector<LayerSpec> parse_model_description(const std::string& text) {
    std::vector<LayerSpec> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string type;
        if (!(ls >> type)) continue;
        std::map<std::string, std::size_t> f;
        std::string kv;
        while (ls >> kv) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key=value");
            f[kv.substr(0, eq)] = std::stoull(kv.substr(eq + 1));
        }
        auto get = [&](const char* k, std::optional<std::size_t> def = std::nullopt) {
            auto it = f.find(k);
            if (it != f.end()) return it->second;
            if (def) return *def;
            throw std::invalid_argument("line " + std::to_string(lineno) + ": " + type + " needs " + k);
        };
        if (type == "affine")
            out.push_back(AffineLayer{get("in"), get("out"), get("positions", 1)});
        else if (type == "conv")
            out.push_back(ConvLayer{get("in"), get("out"), get("kernel"), get("out_h"), get("out_w")});
        else if (type == "attention")
            out.push_back(AttentionLayer{get("queries"), get("keys"), get("dim")});
        else if (type == "norm")
            out.push_back(NormLayer{get("positions"), get("channels")});
        else if (type == "param")
            out.push_back(ParamLayer{get("count")});
        else
            throw std::invalid_argument("line " + std::to_string(lineno) + ": unknown layer type '" + type + "'");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Descriptions of the built-in models

inline void describe_block(std::vector<LayerSpec>& m, std::size_t tokens, std::size_t dim, std::size_t mlp_ratio) {
    m.push_back(NormLayer{tokens, dim});
    m.push_back(AffineLayer{dim, 3 * dim, tokens});
    m.push_back(AttentionLayer{tokens, tokens, dim});
    m.push_back(AffineLayer{dim, dim, tokens});
    m.push_back(NormLayer{tokens, dim});
    m.push_back(AffineLayer{dim, dim * mlp_ratio, tokens});
    m.push_back(AffineLayer{dim * mlp_ratio, dim, tokens});
}

inline void describe_encoder(std::vector<LayerSpec>& m, const mae::MAEConfig& c, std::size_t tokens) {
    m.push_back(AffineLayer{c.patch_dim(), c.enc_dim, tokens});
    for (std::size_t i = 0; i < c.enc_depth; ++i) describe_block(m, tokens, c.enc_dim, c.mlp_ratio);
    m.push_back(NormLayer{tokens, c.enc_dim});
}

inline void describe_decoder(std::vector<LayerSpec>& m, const mae::MAEConfig& c, std::size_t visible) {
    const std::size_t p = c.patches();
    m.push_back(AffineLayer{c.enc_dim, c.dec_dim, visible});
    m.push_back(ParamLayer{c.dec_dim});
    for (std::size_t i = 0; i < c.dec_depth; ++i) describe_block(m, p, c.dec_dim, c.mlp_ratio);
    m.push_back(NormLayer{p, c.dec_dim});
    m.push_back(AffineLayer{c.dec_dim, c.patch_dim(), p});
}

inline void describe_backbone(std::vector<LayerSpec>& m, const std::vector<augraph::ConvSpec>& layers,
                              std::size_t image_size) {
    std::size_t h = image_size;
    for (const auto& l : layers) {
        h = (h + 2 * l.pad - l.kernel) / l.stride + 1;
        m.push_back(ConvLayer{l.in, l.out, l.kernel, h, h});
        m.push_back(NormLayer{h * h, l.out});
    }
}

/// Inference-time head: per-AU maps, edge features, gated GCN layers, prediction and edge
/// classifier. The stage-1 GCN is listed as well since it is part of the parameter set.
inline void describe_head(std::vector<LayerSpec>& m, const augraph::HeadConfig& h, std::size_t spatial) {
    const std::size_t n = h.n_au, c = h.channels, s = spatial;
    m.push_back(AffineLayer{c, n * c, s});
    m.push_back(ParamLayer{n * c});
    m.push_back(AffineLayer{c, c, n});
    m.push_back(AffineLayer{c, c, n});
    m.push_back(NormLayer{n, c});
    // face attention: queries from AU maps, keys and values from F
    m.push_back(AffineLayer{c, c, n * s});
    m.push_back(AffineLayer{c, c, s});
    m.push_back(AffineLayer{c, c, s});
    m.push_back(AttentionLayer{n * s, s, c});
    // relation attention over all AU pairs
    m.push_back(AffineLayer{c, c, n * s});
    m.push_back(AffineLayer{c, c, n * s});
    m.push_back(AffineLayer{c, c, n * s});
    m.push_back(AttentionLayer{n * s, n * s, c});
    for (std::size_t i = 0; i < h.gated_layers; ++i) {
        m.push_back(AffineLayer{c, c, n});
        m.push_back(AffineLayer{c, c, n});
        m.push_back(AffineLayer{c, c, n * n});
        m.push_back(AffineLayer{c, c, n});
        m.push_back(AffineLayer{c, c, n});
        m.push_back(NormLayer{n * n, c});
        m.push_back(NormLayer{n, c});
    }
    m.push_back(AffineLayer{c, 4, n * n});
}

/// Teacher: encoder over visible patches, decoder, backbone and head.
inline std::vector<LayerSpec> describe_teacher(const mae::MAEConfig& mc, const augraph::HeadConfig& hc,
                                               const std::vector<augraph::ConvSpec>& backbone, double mask_ratio) {
    const std::size_t p = mc.patches();
    const auto masked = static_cast<std::size_t>(std::llround(mask_ratio * static_cast<double>(p)));
    const std::size_t visible = p - std::min(masked, p - 1);
    std::vector<LayerSpec> m;
    describe_encoder(m, mc, visible);
    describe_decoder(m, mc, visible);
    describe_backbone(m, backbone, mc.image_size);
    std::size_t fh = mc.image_size;
    for (const auto& l : backbone) fh = (fh + 2 * l.pad - l.kernel) / l.stride + 1;
    describe_head(m, hc, fh * fh);
    return m;
}

/// Clean-image baseline: backbone and head only.
inline std::vector<LayerSpec> describe_baseline(const mae::MAEConfig& mc, const augraph::HeadConfig& hc,
                                                const std::vector<augraph::ConvSpec>& backbone) {
    std::vector<LayerSpec> m;
    describe_backbone(m, backbone, mc.image_size);
    std::size_t fh = mc.image_size;
    for (const auto& l : backbone) fh = (fh + 2 * l.pad - l.kernel) / l.stride + 1;
    describe_head(m, hc, fh * fh);
    return m;
}

/// Student: encoder over all patches, alignment layers and head.
inline std::vector<LayerSpec> describe_student(const mae::MAEConfig& mc, const augraph::HeadConfig& hc,
                                               std::size_t align_pool) {
    const std::size_t g = mc.grid() / align_pool, s = g * g;
    std::vector<LayerSpec> m;
    describe_encoder(m, mc, mc.patches());
    m.push_back(AffineLayer{mc.enc_dim, 2 * hc.channels, s});
    m.push_back(AffineLayer{2 * hc.channels, hc.channels, s});
    m.push_back(NormLayer{s, hc.channels});
    describe_head(m, hc, s);
    return m;
}

}  // namespace occlu::harness
