#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "occlu/numerics/batch_norm.hpp"
#include "occlu/numerics/layers.hpp"
#include "occlu/numerics/ops.hpp"

namespace occlu::augraph {

struct HeadConfig {
    std::size_t n_au = 6;
    std::size_t channels = 32;
    std::size_t top_k = 3;
    std::size_t gated_layers = 2;

    void validate() const {
        if (n_au < 2) throw std::invalid_argument("HeadConfig: need at least two AUs");
        if (channels == 0) throw std::invalid_argument("HeadConfig: channels must be positive");
        if (top_k < 1 || top_k > n_au - 1) throw std::invalid_argument("HeadConfig: top_k must lie in [1, n_au - 1]");
    }
};

template <std::floating_point T>
struct CrossAttentionWeights {
    Linear<T> q, k, v;

    CrossAttentionWeights() = default;
    CrossAttentionWeights(std::size_t c, Rng& rng) : q(c, c, rng), k(c, c, rng), v(c, c, rng) {}

    void collect(ParamSet<T>& ps, const std::string& prefix, const std::string& group) const {
        q.collect(ps, prefix + ".q", group);
        k.collect(ps, prefix + ".k", group);
        v.collect(ps, prefix + ".v", group);
    }
};

template <std::floating_point T>
struct GCNWeights {
    Linear<T> g1, g2;
    BatchNormState<T> bn;

    GCNWeights() = default;
    GCNWeights(std::size_t c, Rng& rng) : g1(c, c, rng), g2(c, c, rng), bn(c) {}

    void collect(ParamSet<T>& ps, const std::string& prefix, const std::string& group) const {
        g1.collect(ps, prefix + ".g1", group);
        g2.collect(ps, prefix + ".g2", group);
        ps.add_batch_norm(prefix + ".bn", bn, group);
    }
};

template <std::floating_point T>
struct GatedGCNWeights {
    Linear<T> a1, a2, a3, u, w;
    BatchNormState<T> bn_e, bn_v;

    GatedGCNWeights() = default;
    GatedGCNWeights(std::size_t c, Rng& rng)
        : a1(c, c, rng), a2(c, c, rng), a3(c, c, rng), u(c, c, rng), w(c, c, rng), bn_e(c), bn_v(c) {}

    static GatedGCNWeights zeros(std::size_t c) {
        GatedGCNWeights g;
        g.a1 = Linear<T>::zeros(c, c);
        g.a2 = Linear<T>::zeros(c, c);
        g.a3 = Linear<T>::zeros(c, c);
        g.u = Linear<T>::zeros(c, c);
        g.w = Linear<T>::zeros(c, c);
        g.bn_e = BatchNormState<T>(c);
        g.bn_v = BatchNormState<T>(c);
        return g;
    }

    void collect(ParamSet<T>& ps, const std::string& prefix, const std::string& group) const {
        a1.collect(ps, prefix + ".a1", group);
        a2.collect(ps, prefix + ".a2", group);
        a3.collect(ps, prefix + ".a3", group);
        u.collect(ps, prefix + ".u", group);
        w.collect(ps, prefix + ".w", group);
        ps.add_batch_norm(prefix + ".bn_e", bn_e, group);
        ps.add_batch_norm(prefix + ".bn_v", bn_v, group);
    }
};

/// FAU detection head shared by teacher and student.
template <std::floating_point T>
struct AUHeadParams {
    HeadConfig config;
    Linear<T> au_fc;    // N per-AU transforms C->C packed as one C->N*C map
    Tensor<T> anchors;  // [N, C]
    GCNWeights<T> gcn;
    CrossAttentionWeights<T> att_face, att_rel;
    std::vector<GatedGCNWeights<T>> gated;
    Linear<T> edge_fc;  // C -> 4

    AUHeadParams() = default;
    AUHeadParams(const HeadConfig& cfg, Rng& rng) : config(cfg) {
        cfg.validate();
        const std::size_t n = cfg.n_au, c = cfg.channels;
        std::vector<T> packed(c * n * c);
        const double bound = std::sqrt(6.0 / static_cast<double>(2 * c));
        for (auto& v : packed) v = static_cast<T>(rng.uniform(-bound, bound));
        au_fc.weight = Tensor<T>({c, n * c}, std::move(packed), true);
        au_fc.bias = Tensor<T>::zeros({n * c}, true);
        std::vector<T> a(n * c);
        for (auto& v : a) v = static_cast<T>(rng.uniform());
        anchors = Tensor<T>({n, c}, std::move(a), true);
        gcn = GCNWeights<T>(c, rng);
        att_face = CrossAttentionWeights<T>(c, rng);
        att_rel = CrossAttentionWeights<T>(c, rng);
        for (std::size_t i = 0; i < cfg.gated_layers; ++i) gated.emplace_back(c, rng);
        edge_fc = Linear<T>(c, 4, rng);
    }

    void collect(ParamSet<T>& ps, const std::string& prefix = "head", const std::string& group = "head") const {
        au_fc.collect(ps, prefix + ".au_fc", group);
        ps.add(prefix + ".anchors", anchors, group);
        gcn.collect(ps, prefix + ".gcn", group);
        att_face.collect(ps, prefix + ".att_face", group);
        att_rel.collect(ps, prefix + ".att_rel", group);
        for (std::size_t i = 0; i < gated.size(); ++i) gated[i].collect(ps, prefix + ".gated" + std::to_string(i), group);
        edge_fc.collect(ps, prefix + ".edge_fc", group);
    }
};

// ---------------------------------------------------------------------------
// Node path

template <std::floating_point T>
struct AUNodes {
    Tensor<T> v;        // [B, N, C]
    Tensor<T> au_maps;  // [B, N, H*W, C]
};

/// F[B, H, W, C] -> per-AU maps and their spatial means.
template <std::floating_point T>
AUNodes<T> extract_au_nodes(const Tensor<T>& f, const Linear<T>& au_fc, std::size_t n_au) {
    if (f.rank() != 4) throw std::invalid_argument("extract_au_nodes: expected B x H x W x C feature map");
    const std::size_t b = f.dim(0), s = f.dim(1) * f.dim(2), c = f.dim(3);
    if (au_fc.in() != c || au_fc.out() != n_au * c) throw std::invalid_argument("extract_au_nodes: transform shape mismatch");
    auto maps = au_fc(reshape(f, {b, s, c}));
    maps = permute(reshape(maps, {b, s, n_au, c}), {0, 2, 1, 3});
    return {mean_axis(maps, 2), maps};
}

template <std::floating_point T>
AUNodes<T> extract_au_nodes(const Tensor<T>& f, const AUHeadParams<T>& head) {
    return extract_au_nodes(f, head.au_fc, head.config.n_au);
}

/// Binary top-K cosine adjacency for one graph V[N, C] -> [N, N]. Not differentiable.
template <std::floating_point T>
Tensor<T> build_adjacency(const Tensor<T>& v, std::size_t k) {
    if (v.rank() != 2) throw std::invalid_argument("build_adjacency: expected N x C node features");
    const std::size_t n = v.dim(0), c = v.dim(1);
    if (k < 1 || k > n - 1) throw std::invalid_argument("build_adjacency: K must lie in [1, N-1]");
    const T* x = v.data().data();
    std::vector<T> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        T s = T(0);
        for (std::size_t j = 0; j < c; ++j) s += x[i * c + j] * x[i * c + j];
        norms[i] = std::sqrt(s);
    }
    std::vector<T> a(n * n, T(0));
    std::vector<std::pair<T, std::size_t>> row;
    for (std::size_t i = 0; i < n; ++i) {
        row.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            T sim = T(0);
            if (norms[i] >= kCosineZeroNorm<T> && norms[j] >= kCosineZeroNorm<T>) {
                T dot = T(0);
                for (std::size_t q = 0; q < c; ++q) dot += x[i * c + q] * x[j * c + q];
                sim = dot / (norms[i] * norms[j]);
            }
            row.emplace_back(sim, j);
        }
        std::stable_sort(row.begin(), row.end(), [](const auto& l, const auto& r) {
            return l.first > r.first || (l.first == r.first && l.second < r.second);
        });
        for (std::size_t r = 0; r < k; ++r) a[i * n + row[r].second] = T(1);
    }
    return Tensor<T>({n, n}, std::move(a));
}

/// Adjacency for each graph of V[B, N, C] -> [B, N, N].
template <std::floating_point T>
Tensor<T> build_adjacency_batch(const Tensor<T>& v, std::size_t k) {
    if (v.rank() != 3) throw std::invalid_argument("build_adjacency_batch: expected B x N x C");
    const std::size_t b = v.dim(0), n = v.dim(1), c = v.dim(2);
    std::vector<T> out;
    out.reserve(b * n * n);
    for (std::size_t i = 0; i < b; ++i) {
        Tensor<T> vi({n, c}, std::vector<T>(v.data().begin() + static_cast<std::ptrdiff_t>(i * n * c),
                                            v.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n * c)));
        auto ai = build_adjacency(vi, k);
        out.insert(out.end(), ai.data().begin(), ai.data().end());
    }
    return Tensor<T>({b, n, n}, std::move(out));
}

/// relu(V + BN(A g1(V) + g2(V))) for V[..., N, C] and A[..., N, N].
template <std::floating_point T>
Tensor<T> gcn_update(const Tensor<T>& v, const Tensor<T>& a, GCNWeights<T>& w, NormMode mode) {
    if (a.rank() != v.rank() || a.shape().back() != v.dim(v.rank() - 2))
        throw std::invalid_argument("gcn_update: adjacency shape " + to_string(a.shape()) + " vs nodes " +
                                    to_string(v.shape()));
    auto msg = add(bmm(a, w.g1(v)), w.g2(v));
    return relu(add(v, batch_norm(msg, w.bn, mode)));
}

namespace detail {

/// Repeats anchors[N, C] over the leading dims of `like`.
template <std::floating_point T>
Tensor<T> broadcast_leading(const Tensor<T>& anchors, const Tensor<T>& like) {
    Tensor<T> out = anchors;
    for (std::size_t i = like.rank() - anchors.rank(); i-- > 0;) out = expand(out, 0, like.dim(i));
    return out;
}

}  // namespace detail

/// p_i = cos(relu(t_i), relu(v_i)) for V[..., N, C] -> [..., N].
template <std::floating_point T>
Tensor<T> predict_au(const Tensor<T>& v, const Tensor<T>& anchors) {
    if (v.rank() < 2 || v.dim(v.rank() - 2) != anchors.dim(0) || v.shape().back() != anchors.dim(1))
        throw std::invalid_argument("predict_au: node features " + to_string(v.shape()) + " vs anchors " +
                                    to_string(anchors.shape()));
    return cosine_similarity(relu(detail::broadcast_leading(anchors, v)), relu(v));
}

// ---------------------------------------------------------------------------
// Edge path

/// softmax(Aq Wq (Bkv Wk)^T / sqrt(C)) Bkv Wv for Aq[..., Lq, C], Bkv[..., Lk, C].
template <std::floating_point T>
Tensor<T> cross_attention(const Tensor<T>& aq, const Tensor<T>& bkv, const CrossAttentionWeights<T>& w) {
    if (aq.rank() != bkv.rank() || aq.shape().back() != bkv.shape().back())
        throw std::invalid_argument("cross_attention: query " + to_string(aq.shape()) + " vs key/value " +
                                    to_string(bkv.shape()));
    const std::size_t c = w.k.out();
    auto scores = scale(bmm(w.q(aq), w.k(bkv), false, true), T(1) / std::sqrt(static_cast<T>(c)));
    return bmm(softmax(scores, scores.rank() - 1), w.v(bkv));
}

/// Edge features E[B, N, N, C] from per-AU maps [B, N, S, C] and the face map F[B, H, W, C].
/// e_ij is the spatial mean of cross_attention(face_i, face_j) where face_i =
/// cross_attention(au_maps_i, F). The mean over query positions is taken on the attention
/// weights before they meet the values, which is the same quantity.
template <std::floating_point T>
Tensor<T> extract_edge_features(const Tensor<T>& au_maps, const Tensor<T>& f, const CrossAttentionWeights<T>& att_face,
                                const CrossAttentionWeights<T>& att_rel) {
    if (au_maps.rank() != 4 || f.rank() != 4) throw std::invalid_argument("extract_edge_features: rank mismatch");
    const std::size_t b = au_maps.dim(0), n = au_maps.dim(1), s = au_maps.dim(2), c = au_maps.dim(3);
    if (f.dim(0) != b || f.dim(1) * f.dim(2) != s || f.dim(3) != c)
        throw std::invalid_argument("extract_edge_features: feature map does not match AU maps");
    auto face = cross_attention(reshape(au_maps, {b, n * s, c}), reshape(f, {b, s, c}), att_face);  // [B, N*S, C]

    const std::size_t ck = att_rel.k.out();
    auto scores = scale(bmm(att_rel.q(face), att_rel.k(face), false, true), T(1) / std::sqrt(static_cast<T>(ck)));
    auto attn = softmax(reshape(scores, {b, n, s, n, s}), 4);
    auto pooled = permute(mean_axis(attn, 2), {0, 2, 1, 3});  // [B, N_j, N_i, S]
    auto values = reshape(att_rel.v(face), {b, n, s, c});     // [B, N_j, S, C]
    return permute(bmm(pooled, values), {0, 2, 1, 3});
}

template <std::floating_point T>
Tensor<T> extract_edge_features(const Tensor<T>& au_maps, const Tensor<T>& f, const AUHeadParams<T>& head) {
    return extract_edge_features(au_maps, f, head.att_face, head.att_rel);
}

template <std::floating_point T>
struct GraphState {
    Tensor<T> v;  // [..., N, C]
    Tensor<T> e;  // [..., N, N, C]
};

/// Residual gated graph convolution over the full graph.
template <std::floating_point T>
GraphState<T> gated_gcn_layer(const Tensor<T>& v, const Tensor<T>& e, GatedGCNWeights<T>& w, NormMode mode) {
    const std::size_t r = v.rank();
    if (r < 2 || e.rank() != r + 1) throw std::invalid_argument("gated_gcn_layer: expected V[..., N, C], E[..., N, N, C]");
    const std::size_t n = v.dim(r - 2);
    const std::size_t row_axis = r - 1, col_axis = r - 2;  // positions of j and i once expanded
    auto src = expand(w.a1(v), row_axis, n);               // A1 v_i at [.., i, j]
    auto dst = expand(w.a2(v), col_axis, n);               // A2 v_j at [.., i, j]
    auto e_new = add(e, relu(batch_norm(add(add(src, dst), w.a3(e)), w.bn_e, mode)));

    auto sig = sigmoid(e_new);
    auto denom = expand(add_scalar(sum_axis(sig, row_axis), T(1e-6)), row_axis, n);
    auto gates = div(sig, denom);
    auto msg = sum_axis(mul(gates, expand(w.w(v), col_axis, n)), row_axis);
    auto v_new = add(v, relu(batch_norm(add(w.u(v), msg), w.bn_v, mode)));
    return {v_new, e_new};
}

/// Edge classification logits [..., N, N, 4].
template <std::floating_point T>
Tensor<T> edge_logits(const Tensor<T>& e, const Linear<T>& edge_fc) {
    return edge_fc(e);
}

// ---------------------------------------------------------------------------
// Stage forward passes

template <std::floating_point T>
struct HeadOutput {
    Tensor<T> p;  // [B, N]
    Tensor<T> z;  // [B, N, N, 4], stage 2 only
};

/// Stage 1: AU nodes, top-K graph, one GCN update, anchor similarity.
template <std::floating_point T>
HeadOutput<T> forward_stage1(const Tensor<T>& f, AUHeadParams<T>& head, NormMode mode) {
    auto nodes = extract_au_nodes(f, head);
    auto a = build_adjacency_batch(nodes.v, head.config.top_k);
    auto v = gcn_update(nodes.v, a, head.gcn, mode);
    return {predict_au(v, head.anchors), {}};
}

/// Stage 2: AU nodes with cross-attention edge features refined by gated GCN layers.
template <std::floating_point T>
HeadOutput<T> forward_stage2(const Tensor<T>& f, AUHeadParams<T>& head, NormMode mode) {
    auto nodes = extract_au_nodes(f, head);
    GraphState<T> g{nodes.v, extract_edge_features(nodes.au_maps, f, head)};
    for (auto& layer : head.gated) g = gated_gcn_layer(g.v, g.e, layer, mode);
    return {predict_au(g.v, head.anchors), edge_logits(g.e, head.edge_fc)};
}

}  // namespace occlu::augraph
