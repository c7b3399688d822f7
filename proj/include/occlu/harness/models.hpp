#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "occlu/augraph/backbone.hpp"
#include "occlu/augraph/head.hpp"
#include "occlu/distill/distill.hpp"
#include "occlu/harness/config.hpp"
#include "occlu/harness/dataset.hpp"
#include "occlu/mae/mae.hpp"
#include "occlu/occlusion/mask.hpp"

namespace occlu::harness {

struct ModelConfig {
    mae::MAEConfig mae;
    augraph::HeadConfig head;
    std::vector<augraph::ConvSpec> backbone;
    std::size_t align_pool = 1;
};

inline ModelConfig model_config(const Config& cfg) {
    ModelConfig m;
    m.mae.image_size = cfg.count("image_size");
    m.mae.patch_size = cfg.count("patch_size");
    m.mae.enc_dim = cfg.count("enc_dim");
    m.mae.enc_depth = cfg.count("enc_depth");
    m.mae.enc_heads = cfg.count("enc_heads");
    m.mae.dec_dim = cfg.count("dec_dim");
    m.mae.dec_depth = cfg.count("dec_depth");
    m.mae.dec_heads = cfg.count("dec_heads");
    m.mae.mlp_ratio = cfg.count("mlp_ratio");
    m.mae.validate();
    m.head.n_au = cfg.count("n_au");
    m.head.channels = cfg.count("channels");
    m.head.top_k = cfg.count("top_k");
    m.head.gated_layers = cfg.count("gated_layers");
    m.head.validate();
    m.backbone = augraph::default_backbone_layers(m.head.channels);
    m.align_pool = cfg.count("align_pool");
    std::size_t fh = m.mae.image_size;
    for (const auto& l : m.backbone) fh = (fh + 2 * l.pad - l.kernel) / l.stride + 1;
    if (m.align_pool == 0 || m.mae.grid() % m.align_pool || m.mae.grid() / m.align_pool != fh)
        throw std::invalid_argument("student feature grid (" + std::to_string(m.mae.grid()) + " / align_pool) must equal the backbone output size " +
                                    std::to_string(fh));
    return m;
}

/// Reconstruction teacher (MAE + backbone + head) or, with reconstruct = false, the
/// clean-image baseline (backbone + head).
template <std::floating_point T>
struct TeacherModel {
    ModelConfig config;
    bool reconstruct = true;
    mae::MAEParams<T> mae;
    augraph::Backbone<T> backbone;
    augraph::AUHeadParams<T> head;

    TeacherModel(const ModelConfig& cfg, bool reconstruct_, std::uint64_t seed) : config(cfg), reconstruct(reconstruct_) {
        Rng rng(hash_seed({seed, 0x7e1u}));
        if (reconstruct) mae = mae::MAEParams<T>(cfg.mae, rng);
        backbone = augraph::Backbone<T>(cfg.backbone, rng);
        head = augraph::AUHeadParams<T>(cfg.head, rng);
    }

    ParamSet<T> params() const {
        ParamSet<T> ps;
        if (reconstruct) mae.collect(ps);
        backbone.collect(ps);
        head.collect(ps);
        return ps;
    }
};

template <std::floating_point T>
struct StudentModel {
    ModelConfig config;
    mae::MAEParams<T> mae;  // only the encoder is used
    distill::AlignmentParams<T> align;
    augraph::AUHeadParams<T> head;

    StudentModel(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
        Rng rng(hash_seed({seed, 0x57du}));
        mae = mae::MAEParams<T>(cfg.mae, rng);
        align = distill::AlignmentParams<T>(cfg.mae.enc_dim, cfg.head.channels, cfg.align_pool, rng);
        head = augraph::AUHeadParams<T>(cfg.head, rng);
    }

    ParamSet<T> params() const {
        ParamSet<T> ps;
        mae.collect_encoder(ps);
        align.collect(ps);
        head.collect(ps);
        return ps;
    }

    /// Copies the teacher's encoder and head into this student.
    void warm_start(const TeacherModel<T>& teacher) {
        if (!teacher.reconstruct) throw std::invalid_argument("warm_start: teacher has no MAE");
        ParamSet<T> src, dst;
        teacher.mae.collect_encoder(src);
        teacher.head.collect(src);
        mae.collect_encoder(dst);
        head.collect(dst);
        copy_values(src, dst);
    }
};

// ---------------------------------------------------------------------------
// Forward passes

template <std::floating_point T>
struct TeacherOutput {
    augraph::HeadOutput<T> head;
    Tensor<T> recon_loss;
    bool has_recon = false;
};

enum class HeadStage { one, two };

/// Teacher pipeline on occluded images: encode visible, decode, composite, backbone, head.
/// `targets` are the unoccluded images used by the reconstruction loss.
template <std::floating_point T>
TeacherOutput<T> teacher_forward(TeacherModel<T>& m, const Tensor<T>& images, const std::vector<occlusion::MaskSpec>& specs,
                                 const std::type_identity_t<Tensor<T>>* targets, HeadStage stage, NormMode mode) {
    TeacherOutput<T> out;
    Tensor<T> input = images;
    if (m.reconstruct) {
        auto rec = mae::reconstruct_batch(images, specs, m.mae, targets);
        input = rec.composites;
        out.recon_loss = rec.loss;
        out.has_recon = rec.masked_samples > 0;
    }
    auto f = m.backbone(input, mode);
    out.head = stage == HeadStage::one ? augraph::forward_stage1(f, m.head, mode) : augraph::forward_stage2(f, m.head, mode);
    return out;
}

/// Student pipeline: every patch is encoded; no occlusion positions are consumed.
template <std::floating_point T>
augraph::HeadOutput<T> student_forward(StudentModel<T>& m, const Tensor<T>& images, NormMode mode) {
    auto tokens = mae::encode_full_batch(images, m.mae);
    auto f = distill::align_features(tokens, m.align, mode);
    return augraph::forward_stage2(f, m.head, mode);
}

// ---------------------------------------------------------------------------
// Batches

struct MaskSettings {
    occlusion::MaskKind kind = occlusion::MaskKind::random;
    double ratio = 0.0;
    std::array<double, 3> fill{0, 0, 0};
};

inline MaskSettings mask_settings(const Config& cfg, const std::array<double, 3>& mean) {
    MaskSettings s;
    s.kind = occlusion::parse_mask_kind(cfg.text("mask_kind"));
    s.ratio = cfg.real("mask_ratio");
    if (cfg.text("fill") == "mean") s.fill = mean;
    return s;
}

template <std::floating_point T>
struct Batch {
    Tensor<T> clean;   // [B, H, W, 3]
    Tensor<T> masked;  // [B, H, W, 3]
    std::vector<occlusion::MaskSpec> specs;
    Tensor<T> labels;  // [B, N]
};

inline std::uint64_t train_mask_seed(std::uint64_t seed, std::size_t sample, std::size_t epoch) {
    return hash_seed({seed, 0x3a5u, sample, epoch});
}

inline std::uint64_t eval_mask_seed(std::uint64_t seed, std::size_t sample) { return hash_seed({seed, 0x3a5u, sample}); }

/// Assembles samples `index` of `ds`. When `epoch` is set, masks use the training seed
/// stream and images are flipped with probability 1/2 if `flip`; otherwise evaluation
/// masks are used and nothing is flipped.
template <std::floating_point T>
Batch<T> make_batch(const Dataset& ds, const std::vector<std::size_t>& index, const MaskSettings& ms, std::uint64_t seed,
                    std::optional<std::size_t> epoch, bool flip, std::size_t patch_size) {
    const std::size_t n = ds.image_size, b = index.size(), na = ds.n_au, px = n * n * 3;
    if (n % patch_size) throw std::invalid_argument("make_batch: image size not divisible by patch size");
    const std::size_t grid = n / patch_size;
    std::vector<T> clean(b * px), masked(b * px), labels(b * na);
    Batch<T> out;
    const std::array<T, 3> fill{static_cast<T>(ms.fill[0]), static_cast<T>(ms.fill[1]), static_cast<T>(ms.fill[2])};
    for (std::size_t i = 0; i < b; ++i) {
        const auto& s = ds.samples.at(index[i]);
        bool mirrored = false;
        if (epoch && flip) mirrored = Rng(hash_seed({seed, 0xf1u, index[i], *epoch})).uniform() < 0.5;
        T* dst = clean.data() + i * px;
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const std::size_t sx = mirrored ? n - 1 - x : x;
                for (std::size_t c = 0; c < 3; ++c)
                    dst[(y * n + x) * 3 + c] = static_cast<T>(s.pixels[(y * n + sx) * 3 + c]) / T(255);
            }
        const auto mseed = epoch ? train_mask_seed(seed, index[i], *epoch) : eval_mask_seed(seed, index[i]);
        out.specs.push_back(occlusion::gen_mask(ms.kind, grid, grid, ms.ratio, mseed, patch_size));
        std::copy_n(dst, px, masked.data() + i * px);
        occlusion::apply_mask_inplace<T>(std::span<T>(masked.data() + i * px, px), n, n, 3, out.specs.back(), fill);
        for (std::size_t a = 0; a < na; ++a) labels[i * na + a] = static_cast<T>(s.labels[a]);
    }
    out.clean = Tensor<T>({b, n, n, 3}, std::move(clean));
    out.masked = Tensor<T>({b, n, n, 3}, std::move(masked));
    out.labels = Tensor<T>({b, na}, std::move(labels));
    return out;
}

}  // namespace occlu::harness
