#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "occlu/numerics/random.hpp"
#include "occlu/numerics/tensor.hpp"

namespace occlu::occlusion {

enum class MaskKind { random, block };

inline std::string to_string(MaskKind k) { return k == MaskKind::random ? "random" : "block"; }

inline MaskKind parse_mask_kind(std::string_view s) {
    if (s == "random") return MaskKind::random;
    if (s == "block") return MaskKind::block;
    throw std::invalid_argument("unknown mask kind '" + std::string(s) + "'");
}

/// Which patches of a grid are occluded. `masked` is sorted, row-major.
struct MaskSpec {
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::size_t patch_size = 0;
    std::vector<std::size_t> masked;
    MaskKind kind = MaskKind::random;
    std::uint64_t seed = 0;
    double ratio = 0.0;

    std::size_t patches() const { return grid_h * grid_w; }

    bool is_masked(std::size_t patch) const { return std::binary_search(masked.begin(), masked.end(), patch); }

    std::vector<std::size_t> visible() const {
        std::vector<std::size_t> out;
        out.reserve(patches() - masked.size());
        for (std::size_t i = 0, j = 0; i < patches(); ++i) {
            if (j < masked.size() && masked[j] == i)
                ++j;
            else
                out.push_back(i);
        }
        return out;
    }

    /// Per-patch membership flags.
    std::vector<char> membership() const {
        std::vector<char> out(patches(), 0);
        for (auto m : masked) out[m] = 1;
        return out;
    }

    bool operator==(const MaskSpec&) const = default;
};

/// Empty mask for a geometry.
inline MaskSpec no_mask(std::size_t grid_h, std::size_t grid_w, std::size_t patch_size) {
    return MaskSpec{grid_h, grid_w, patch_size, {}, MaskKind::random, 0, 0.0};
}

/// Relative tolerance on the masked fraction of block masks.
inline constexpr double kBlockTolerance = 0.05;

namespace detail {

inline void check_grid(std::size_t grid_h, std::size_t grid_w, std::size_t patch_size) {
    if (grid_h == 0 || grid_w == 0 || patch_size == 0) throw std::invalid_argument("mask grid and patch size must be positive");
}

/// True when `masked` is exactly one filled axis-aligned rectangle.
inline bool is_rectangle(const std::vector<std::size_t>& masked, std::size_t grid_w) {
    if (masked.empty()) return false;
    std::size_t r0 = masked.front() / grid_w, r1 = r0, c0 = masked.front() % grid_w, c1 = c0;
    for (auto m : masked) {
        r0 = std::min(r0, m / grid_w);
        r1 = std::max(r1, m / grid_w);
        c0 = std::min(c0, m % grid_w);
        c1 = std::max(c1, m % grid_w);
    }
    return (r1 - r0 + 1) * (c1 - c0 + 1) == masked.size();
}

}  // namespace detail

/// Uniformly samples round(ratio * P) distinct patches from the seeded stream.
inline MaskSpec gen_random_mask(std::size_t grid_h, std::size_t grid_w, double ratio, std::uint64_t seed,
                                std::size_t patch_size = 8) {
    detail::check_grid(grid_h, grid_w, patch_size);
    if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("random mask ratio must lie in [0, 1)");
    const std::size_t p = grid_h * grid_w;
    const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(p)));
    std::vector<std::size_t> idx(p);
    for (std::size_t i = 0; i < p; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(p - i)]);
    std::vector<std::size_t> masked(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(masked.begin(), masked.end());
    return MaskSpec{grid_h, grid_w, patch_size, std::move(masked), MaskKind::random, seed, ratio};
}

/// One contiguous rectangle covering ratio * P patches within +-5%.
///
/// An aspect ratio h/w is drawn log-uniformly from [0.5, 2]; among all rectangles that fit
/// the grid, have aspect in [0.5, 2] and area within tolerance, the one whose aspect is
/// closest to the draw wins (ties: area nearer the target, then fewer rows). The position
/// is uniform over all placements fully inside the grid.
inline MaskSpec gen_block_mask(std::size_t grid_h, std::size_t grid_w, double ratio, std::uint64_t seed,
                               std::size_t patch_size = 8) {
    detail::check_grid(grid_h, grid_w, patch_size);
    if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("block mask ratio must lie in (0, 1)");
    const double target = ratio * static_cast<double>(grid_h * grid_w);
    Rng rng(seed);
    const double log_aspect = std::log(0.5) + rng.uniform() * (std::log(2.0) - std::log(0.5));

    std::size_t best_h = 0, best_w = 0;
    double best_key0 = std::numeric_limits<double>::infinity(), best_key1 = best_key0;
    for (std::size_t h = 1; h <= grid_h; ++h)
        for (std::size_t w = 1; w <= grid_w; ++w) {
            const double aspect = static_cast<double>(h) / static_cast<double>(w);
            if (aspect < 0.5 || aspect > 2.0) continue;
            const double area = static_cast<double>(h * w);
            if (std::abs(area - target) > kBlockTolerance * target) continue;
            const double key0 = std::abs(std::log(aspect) - log_aspect);
            const double key1 = std::abs(area - target);
            if (key0 < best_key0 - 1e-12 || (std::abs(key0 - best_key0) <= 1e-12 && key1 < best_key1)) {
                best_h = h;
                best_w = w;
                best_key0 = key0;
                best_key1 = key1;
            }
        }
    if (best_h == 0) {
        std::ostringstream os;
        os << "no rectangle with aspect in [0.5, 2] covers " << target << " patches within +-"
           << kBlockTolerance * 100.0 << "% on a " << grid_h << "x" << grid_w << " grid (ratio " << ratio << ")";
        throw std::invalid_argument(os.str());
    }
    const std::size_t top = rng.below(grid_h - best_h + 1);
    const std::size_t left = rng.below(grid_w - best_w + 1);
    std::vector<std::size_t> masked;
    masked.reserve(best_h * best_w);
    for (std::size_t r = top; r < top + best_h; ++r)
        for (std::size_t c = left; c < left + best_w; ++c) masked.push_back(r * grid_w + c);
    return MaskSpec{grid_h, grid_w, patch_size, std::move(masked), MaskKind::block, seed, ratio};
}

inline MaskSpec gen_mask(MaskKind kind, std::size_t grid_h, std::size_t grid_w, double ratio, std::uint64_t seed,
                         std::size_t patch_size) {
    if (kind == MaskKind::random) return gen_random_mask(grid_h, grid_w, ratio, seed, patch_size);
    if (ratio == 0.0) {
        auto m = no_mask(grid_h, grid_w, patch_size);
        m.kind = MaskKind::block;
        m.seed = seed;
        return m;
    }
    return gen_block_mask(grid_h, grid_w, ratio, seed, patch_size);
}

/// Overwrites the pixels of masked patches in an H x W x C buffer with `fill`.
template <typename T>
void apply_mask_inplace(std::span<T> pixels, std::size_t height, std::size_t width, std::size_t channels,
                        const MaskSpec& spec, std::span<const T> fill) {
    if (height != spec.grid_h * spec.patch_size || width != spec.grid_w * spec.patch_size)
        throw std::invalid_argument("apply_mask: image geometry does not match mask grid");
    if (pixels.size() != height * width * channels || fill.size() != channels)
        throw std::invalid_argument("apply_mask: buffer or fill size mismatch");
    for (auto m : spec.masked) {
        const std::size_t py = m / spec.grid_w, px = m % spec.grid_w;
        for (std::size_t y = py * spec.patch_size; y < (py + 1) * spec.patch_size; ++y)
            for (std::size_t x = px * spec.patch_size; x < (px + 1) * spec.patch_size; ++x)
                for (std::size_t c = 0; c < channels; ++c) pixels[(y * width + x) * channels + c] = fill[c];
    }
}

/// Returns a copy of image [H, W, C] with masked patches replaced by the per-channel fill.
template <std::floating_point T>
Tensor<T> apply_mask(const Tensor<T>& image, const MaskSpec& spec, std::span<const T> fill) {
    if (image.rank() != 3) throw std::invalid_argument("apply_mask: expected an H x W x C image");
    std::vector<T> out = image.values();
    apply_mask_inplace<T>(out, image.dim(0), image.dim(1), image.dim(2), spec, fill);
    return Tensor<T>(image.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Text form: one line, "occlu-mask/1" followed by key=value fields.

inline std::string serialize_mask(const MaskSpec& s) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, s.ratio);
    std::ostringstream os;
    os << "occlu-mask/1 kind=" << to_string(s.kind) << " grid_h=" << s.grid_h << " grid_w=" << s.grid_w
       << " patch_size=" << s.patch_size << " ratio=" << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf))
       << " seed=" << s.seed << " masked=";
    for (std::size_t i = 0; i < s.masked.size(); ++i) os << (i ? "," : "") << s.masked[i];
    return os.str();
}

namespace detail {

template <typename V>
V parse_number(std::string_view text, const char* field) {
    V v{};
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw std::invalid_argument(std::string("mask text: bad value for ") + field + ": '" + std::string(text) + "'");
    return v;
}

}  // namespace detail

inline MaskSpec parse_mask(std::string_view text) {
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r' || text.back() == ' ')) text.remove_suffix(1);
    std::istringstream is{std::string(text)};
    std::string tok;
    if (!(is >> tok) || tok != "occlu-mask/1") throw std::invalid_argument("mask text: missing 'occlu-mask/1' header");
    std::map<std::string, std::string> fields;
    while (is >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("mask text: field without '=': " + tok);
        if (!fields.emplace(tok.substr(0, eq), tok.substr(eq + 1)).second)
            throw std::invalid_argument("mask text: duplicate field " + tok.substr(0, eq));
    }
    for (const char* k : {"kind", "grid_h", "grid_w", "patch_size", "ratio", "seed", "masked"})
        if (!fields.contains(k)) throw std::invalid_argument(std::string("mask text: missing field ") + k);
    if (fields.size() != 7) throw std::invalid_argument("mask text: unknown fields present");

    MaskSpec s;
    s.kind = parse_mask_kind(fields["kind"]);
    s.grid_h = detail::parse_number<std::size_t>(fields["grid_h"], "grid_h");
    s.grid_w = detail::parse_number<std::size_t>(fields["grid_w"], "grid_w");
    s.patch_size = detail::parse_number<std::size_t>(fields["patch_size"], "patch_size");
    s.ratio = detail::parse_number<double>(fields["ratio"], "ratio");
    s.seed = detail::parse_number<std::uint64_t>(fields["seed"], "seed");
    detail::check_grid(s.grid_h, s.grid_w, s.patch_size);
    if (!(s.ratio >= 0.0 && s.ratio < 1.0)) throw std::invalid_argument("mask text: ratio outside [0, 1)");

    std::string_view list = fields["masked"];
    while (!list.empty()) {
        auto comma = list.find(',');
        auto item = list.substr(0, comma);
        auto idx = detail::parse_number<std::size_t>(item, "masked");
        if (idx >= s.patches()) throw std::out_of_range("mask text: patch index " + std::to_string(idx) + " out of range");
        s.masked.push_back(idx);
        if (comma == std::string_view::npos) break;
        list.remove_prefix(comma + 1);
    }
    if (!std::is_sorted(s.masked.begin(), s.masked.end()) ||
        std::adjacent_find(s.masked.begin(), s.masked.end()) != s.masked.end())
        throw std::invalid_argument("mask text: indices must be strictly increasing");
    if (s.kind == MaskKind::block && !s.masked.empty() && !detail::is_rectangle(s.masked, s.grid_w))
        throw std::invalid_argument("mask text: block mask is not a rectangle");
    return s;
}

inline bool is_rectangle(const MaskSpec& s) { return detail::is_rectangle(s.masked, s.grid_w); }

}  // namespace occlu::occlusion
