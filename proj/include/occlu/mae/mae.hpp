#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "occlu/mae/transformer.hpp"
#include "occlu/numerics/layers.hpp"
#include "occlu/numerics/ops.hpp"
#include "occlu/occlusion/mask.hpp"

namespace occlu::mae {

using occlusion::MaskSpec;

inline constexpr std::size_t kChannels = 3;

struct MAEConfig {
    std::size_t image_size = 64;
    std::size_t patch_size = 8;
    std::size_t enc_dim = 64;
    std::size_t enc_depth = 4;
    std::size_t enc_heads = 4;
    std::size_t dec_dim = 32;
    std::size_t dec_depth = 2;
    std::size_t dec_heads = 4;
    std::size_t mlp_ratio = 2;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t patches() const { return grid() * grid(); }
    std::size_t patch_dim() const { return patch_size * patch_size * kChannels; }

    void validate() const {
        if (patch_size == 0 || image_size == 0 || image_size % patch_size)
            throw std::invalid_argument("MAEConfig: image_size must be a positive multiple of patch_size");
        if (enc_heads == 0 || dec_heads == 0 || enc_dim % enc_heads || dec_dim % dec_heads)
            throw std::invalid_argument("MAEConfig: dims must be divisible by head counts");
        if (enc_dim % 4 || dec_dim % 4) throw std::invalid_argument("MAEConfig: dims must be divisible by 4");
        if (dec_depth >= enc_depth) throw std::invalid_argument("MAEConfig: decoder must be shallower than encoder");
        if (mlp_ratio == 0) throw std::invalid_argument("MAEConfig: mlp_ratio must be positive");
    }
};

/// Encoded tokens and the patch index each row stands for.
template <std::floating_point T>
struct TokenSequence {
    Tensor<T> tokens;  // [L, D]
    std::vector<std::size_t> positions;
};

template <std::floating_point T>
struct MAEParams {
    MAEConfig config;
    Linear<T> patch_embed;
    Tensor<T> enc_pos;  // fixed
    std::vector<TransformerBlock<T>> enc_blocks;
    LayerNorm<T> enc_norm;
    Linear<T> dec_embed;
    Tensor<T> mask_token;  // [dec_dim], one vector shared by every masked position
    Tensor<T> dec_pos;     // fixed
    std::vector<TransformerBlock<T>> dec_blocks;
    LayerNorm<T> dec_norm;
    Linear<T> dec_pred;

    MAEParams() = default;
    MAEParams(const MAEConfig& cfg, Rng& rng) : config(cfg) {
        cfg.validate();
        patch_embed = Linear<T>(cfg.patch_dim(), cfg.enc_dim, rng);
        enc_pos = sincos_position_table<T>(cfg.grid(), cfg.grid(), cfg.enc_dim);
        for (std::size_t i = 0; i < cfg.enc_depth; ++i) enc_blocks.emplace_back(cfg.enc_dim, cfg.enc_heads, cfg.mlp_ratio, rng);
        enc_norm = LayerNorm<T>(cfg.enc_dim);
        dec_embed = Linear<T>(cfg.enc_dim, cfg.dec_dim, rng);
        std::vector<T> tok(cfg.dec_dim);
        for (auto& v : tok) v = static_cast<T>(0.02 * rng.normal());
        mask_token = Tensor<T>({cfg.dec_dim}, std::move(tok), true);
        dec_pos = sincos_position_table<T>(cfg.grid(), cfg.grid(), cfg.dec_dim);
        for (std::size_t i = 0; i < cfg.dec_depth; ++i) dec_blocks.emplace_back(cfg.dec_dim, cfg.dec_heads, cfg.mlp_ratio, rng);
        dec_norm = LayerNorm<T>(cfg.dec_dim);
        dec_pred = Linear<T>(cfg.dec_dim, cfg.patch_dim(), rng);
    }

    /// Parameters the student reuses.
    void collect_encoder(ParamSet<T>& ps, const std::string& prefix = "mae") const {
        patch_embed.collect(ps, prefix + ".patch_embed", "mae");
        for (std::size_t i = 0; i < enc_blocks.size(); ++i)
            enc_blocks[i].collect(ps, prefix + ".enc" + std::to_string(i), "mae");
        enc_norm.collect(ps, prefix + ".enc_norm", "mae");
    }

    void collect(ParamSet<T>& ps, const std::string& prefix = "mae") const {
        collect_encoder(ps, prefix);
        dec_embed.collect(ps, prefix + ".dec_embed", "mae");
        ps.add(prefix + ".mask_token", mask_token, "mae");
        for (std::size_t i = 0; i < dec_blocks.size(); ++i)
            dec_blocks[i].collect(ps, prefix + ".dec" + std::to_string(i), "mae");
        dec_norm.collect(ps, prefix + ".dec_norm", "mae");
        dec_pred.collect(ps, prefix + ".dec_pred", "mae");
    }
};

// ---------------------------------------------------------------------------
// Patch layout

/// image[H, W, C] -> [P, patch*patch*C], patches in row-major order, each patch
/// flattened as (row, col, channel).
template <std::floating_point T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch_size) {
    if (image.rank() != 3) throw std::invalid_argument("patchify: expected H x W x C image");
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (patch_size == 0 || h % patch_size || w % patch_size)
        throw std::invalid_argument("patchify: image size not divisible by patch size");
    const std::size_t gh = h / patch_size, gw = w / patch_size;
    auto grid = reshape(image, {gh, patch_size, gw, patch_size, c});
    return reshape(permute(grid, {0, 2, 1, 3, 4}), {gh * gw, patch_size * patch_size * c});
}

/// images[B, H, W, C] -> [B, P, patch*patch*C].
template <std::floating_point T>
Tensor<T> patchify_batch(const Tensor<T>& images, std::size_t patch_size) {
    if (images.rank() != 4) throw std::invalid_argument("patchify_batch: expected B x H x W x C");
    const std::size_t b = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
    if (patch_size == 0 || h % patch_size || w % patch_size)
        throw std::invalid_argument("patchify_batch: image size not divisible by patch size");
    const std::size_t gh = h / patch_size, gw = w / patch_size;
    auto grid = reshape(images, {b, gh, patch_size, gw, patch_size, c});
    return reshape(permute(grid, {0, 1, 3, 2, 4, 5}), {b, gh * gw, patch_size * patch_size * c});
}

template <std::floating_point T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t height, std::size_t width, std::size_t patch_size,
                     std::size_t channels = kChannels) {
    const std::size_t gh = height / patch_size, gw = width / patch_size;
    if (patches.rank() != 2 || patches.dim(0) != gh * gw || patches.dim(1) != patch_size * patch_size * channels)
        throw std::invalid_argument("unpatchify: patch tensor does not match geometry");
    auto grid = reshape(patches, {gh, gw, patch_size, patch_size, channels});
    return reshape(permute(grid, {0, 2, 1, 3, 4}), {height, width, channels});
}

namespace detail {

template <std::floating_point T>
void check_geometry(const Tensor<T>& image, const MAEConfig& cfg) {
    if (image.rank() != 3 || image.dim(0) != cfg.image_size || image.dim(1) != cfg.image_size || image.dim(2) != kChannels)
        throw std::invalid_argument("image geometry " + to_string(image.shape()) + " does not match MAE config");
}

template <std::floating_point T>
void check_spec(const MaskSpec& spec, const MAEConfig& cfg) {
    if (spec.grid_h != cfg.grid() || spec.grid_w != cfg.grid() || spec.patch_size != cfg.patch_size)
        throw std::invalid_argument("mask geometry does not match MAE config");
}

template <std::floating_point T>
Tensor<T> run_blocks(Tensor<T> x, const std::vector<TransformerBlock<T>>& blocks) {
    for (const auto& blk : blocks) x = blk(x);
    return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Encoder / decoder

/// Encodes only the visible patches; masked pixels are never read.
template <std::floating_point T>
TokenSequence<T> encode_visible(const Tensor<T>& image, const MaskSpec& spec, const MAEParams<T>& params) {
    const auto& cfg = params.config;
    detail::check_geometry(image, cfg);
    detail::check_spec<T>(spec, cfg);
    auto visible = spec.visible();
    if (visible.empty()) throw std::invalid_argument("encode_visible: every patch is masked");
    auto patches = gather_rows(patchify(image, cfg.patch_size), visible);
    auto pos = gather_rows(params.enc_pos, visible);
    auto x = add(params.patch_embed(patches), pos);
    x = reshape(x, {1, visible.size(), cfg.enc_dim});
    x = params.enc_norm(detail::run_blocks(x, params.enc_blocks));
    return {reshape(x, {visible.size(), cfg.enc_dim}), std::move(visible)};
}

/// Batched encode_visible for images[B, H, W, C]. Samples with equal visible counts share
/// one pass through the encoder.
template <std::floating_point T>
std::vector<TokenSequence<T>> encode_visible_batch(const Tensor<T>& images, const std::vector<MaskSpec>& specs,
                                                   const MAEParams<T>& params) {
    const auto& cfg = params.config;
    const std::size_t b = images.dim(0), p = cfg.patches();
    if (specs.size() != b) throw std::invalid_argument("encode_visible_batch: one mask per image");
    std::vector<std::vector<std::size_t>> vis(b);
    for (std::size_t i = 0; i < b; ++i) {
        detail::check_spec<T>(specs[i], cfg);
        vis[i] = specs[i].visible();
        if (vis[i].empty()) throw std::invalid_argument("encode_visible: every patch is masked");
    }
    std::vector<TokenSequence<T>> out(b);
    auto flat = reshape(patchify_batch(images, cfg.patch_size), {b * p, cfg.patch_dim()});
    std::vector<bool> done(b, false);
    for (std::size_t i = 0; i < b; ++i) {
        if (done[i]) continue;
        std::vector<std::size_t> group;
        for (std::size_t j = i; j < b; ++j)
            if (!done[j] && vis[j].size() == vis[i].size()) group.push_back(j);
        const std::size_t l = vis[i].size();
        std::vector<std::size_t> rows, pos_rows;
        for (auto j : group)
            for (auto v : vis[j]) {
                rows.push_back(j * p + v);
                pos_rows.push_back(v);
            }
        auto x = add(params.patch_embed(gather_rows(flat, rows)), gather_rows(params.enc_pos, pos_rows));
        x = reshape(x, {group.size(), l, cfg.enc_dim});
        x = params.enc_norm(detail::run_blocks(x, params.enc_blocks));
        for (std::size_t g = 0; g < group.size(); ++g) {
            out[group[g]] = {reshape(slice(x, 0, g, 1), {l, cfg.enc_dim}), vis[group[g]]};
            done[group[g]] = true;
        }
    }
    return out;
}

/// Encodes every patch of images[B, H, W, C] with no occlusion information -> [B, P, enc_dim].
template <std::floating_point T>
Tensor<T> encode_full_batch(const Tensor<T>& images, const MAEParams<T>& params) {
    const auto& cfg = params.config;
    if (images.rank() != 4 || images.dim(1) != cfg.image_size || images.dim(2) != cfg.image_size ||
        images.dim(3) != kChannels)
        throw std::invalid_argument("encode_full: image geometry does not match MAE config");
    auto x = add(params.patch_embed(patchify_batch(images, cfg.patch_size)), params.enc_pos);
    return params.enc_norm(detail::run_blocks(x, params.enc_blocks));
}

template <std::floating_point T>
TokenSequence<T> encode_full(const Tensor<T>& image, const MAEParams<T>& params) {
    const auto& cfg = params.config;
    detail::check_geometry(image, cfg);
    auto x = add(params.patch_embed(patchify(image, cfg.patch_size)), params.enc_pos);
    x = reshape(x, {1, cfg.patches(), cfg.enc_dim});
    x = params.enc_norm(detail::run_blocks(x, params.enc_blocks));
    std::vector<std::size_t> pos(cfg.patches());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    return {reshape(x, {cfg.patches(), cfg.enc_dim}), std::move(pos)};
}

/// Decoder input before positional embedding: projected latents at visible positions and
/// the shared mask token everywhere else -> [P, dec_dim].
template <std::floating_point T>
Tensor<T> decoder_input(const TokenSequence<T>& latent, const MaskSpec& spec, const MAEParams<T>& params) {
    detail::check_spec<T>(spec, params.config);
    if (latent.positions != spec.visible()) throw std::invalid_argument("decode: latent positions do not match mask");
    return assemble_rows(params.dec_embed(latent.tokens), latent.positions, params.mask_token, params.config.patches());
}

/// Decodes a batch of latents into per-patch pixel predictions [B, P, patch_dim].
template <std::floating_point T>
Tensor<T> decode_batch(const std::vector<TokenSequence<T>>& latents, const std::vector<MaskSpec>& specs,
                       const MAEParams<T>& params) {
    std::vector<Tensor<T>> inputs;
    inputs.reserve(latents.size());
    for (std::size_t i = 0; i < latents.size(); ++i) inputs.push_back(decoder_input(latents[i], specs[i], params));
    auto x = add(stack(inputs), params.dec_pos);
    x = params.dec_norm(detail::run_blocks(x, params.dec_blocks));
    return params.dec_pred(x);
}

template <std::floating_point T>
Tensor<T> decode(const TokenSequence<T>& latent, const MaskSpec& spec, const MAEParams<T>& params) {
    auto out = decode_batch<T>({latent}, {spec}, params);
    return reshape(out, {params.config.patches(), params.config.patch_dim()});
}

// ---------------------------------------------------------------------------
// Reconstruction loss and compositing

/// Mean squared error over masked pixel values only (every channel of every masked pixel
/// counts once). Visible-patch predictions receive exactly zero gradient.
template <std::floating_point T>
Tensor<T> recon_loss(const Tensor<T>& pred, const Tensor<T>& target_image, const MaskSpec& spec) {
    if (spec.masked.empty()) throw std::invalid_argument("recon_loss: empty mask, loss undefined");
    auto target = patchify(target_image.detach(), spec.patch_size);
    if (pred.shape() != target.shape())
        throw std::invalid_argument("recon_loss: prediction shape " + to_string(pred.shape()) + " vs target " +
                                    to_string(target.shape()));
    const std::size_t width = pred.dim(1);
    const T w = T(1) / static_cast<T>(spec.masked.size() * width);
    std::vector<T> weights(pred.size(), T(0));
    for (auto m : spec.masked) std::fill_n(weights.begin() + static_cast<std::ptrdiff_t>(m * width), width, w);
    return sum(mul(square(sub(pred, target)), Tensor<T>(pred.shape(), std::move(weights))));
}

/// Original visible patches combined with predicted masked patches -> [H, W, C].
template <std::floating_point T>
Tensor<T> composite(const Tensor<T>& original_image, const Tensor<T>& pred_patches, const MaskSpec& spec) {
    if (original_image.rank() != 3 || original_image.dim(0) != spec.grid_h * spec.patch_size ||
        original_image.dim(1) != spec.grid_w * spec.patch_size)
        throw std::invalid_argument("composite: image geometry does not match mask");
    auto orig = patchify(original_image.detach(), spec.patch_size);
    if (pred_patches.shape() != orig.shape()) throw std::invalid_argument("composite: prediction shape mismatch");
    auto merged = where_rows(orig, pred_patches, spec.membership());
    return unpatchify(merged, original_image.dim(0), original_image.dim(1), spec.patch_size, original_image.dim(2));
}

/// Teacher front end output for one batch.
template <std::floating_point T>
struct Reconstruction {
    Tensor<T> composites;  // [B, H, W, C]
    Tensor<T> loss;        // mean per-sample reconstruction loss over samples with a non-empty mask
    std::size_t masked_samples = 0;
};

/// Encode visible, decode, score and composite each image of a batch. The reconstruction
/// target is `targets` (unoccluded images) when given, else `images`.
template <std::floating_point T>
Reconstruction<T> reconstruct_batch(const Tensor<T>& images, const std::vector<MaskSpec>& specs,
                                    const MAEParams<T>& params, const Tensor<T>* targets = nullptr) {
    const std::size_t b = images.dim(0);
    const auto& cfg = params.config;
    auto latents = encode_visible_batch(images, specs, params);
    auto preds = decode_batch(latents, specs, params);
    std::vector<Tensor<T>> comps;
    std::vector<Tensor<T>> losses;
    for (std::size_t i = 0; i < b; ++i) {
        auto img = reshape(slice(images, 0, i, 1), {cfg.image_size, cfg.image_size, kChannels});
        auto pred = reshape(slice(preds, 0, i, 1), {cfg.patches(), cfg.patch_dim()});
        comps.push_back(composite(img, pred, specs[i]));
        if (!specs[i].masked.empty()) {
            auto tgt = targets ? reshape(slice(*targets, 0, i, 1), {cfg.image_size, cfg.image_size, kChannels}) : img;
            losses.push_back(recon_loss(pred, tgt, specs[i]));
        }
    }
    Reconstruction<T> out;
    out.composites = stack(comps);
    out.masked_samples = losses.size();
    out.loss = losses.empty() ? Tensor<T>::scalar(T(0)) : mean(concat(losses, 0));
    return out;
}

}  // namespace occlu::mae
