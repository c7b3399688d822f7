#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "occlu/numerics/random.hpp"

namespace occlu::harness {

inline constexpr std::size_t kMaxAU = 6;
inline constexpr std::array<const char*, kMaxAU> kAUNames = {"AU1", "AU4", "AU7", "AU9", "AU12", "AU25"};
inline constexpr std::array<double, kMaxAU> kAURates = {0.35, 0.30, 0.45, 0.30, 0.40, 0.40};
inline constexpr double kPairCorrelation = 0.4;
/// Correlated AU pairs by index into kAUNames: (AU7, AU12), (AU12, AU25), (AU4, AU9).
inline constexpr std::array<std::array<std::size_t, 2>, 3> kCorrelatedPairs = {{{2, 4}, {4, 5}, {1, 3}}};

struct Sample {
    std::string file;
    std::string subject;
    std::vector<int> labels;
    std::vector<std::uint8_t> pixels;  // H * W * 3, row-major RGB
};

struct Dataset {
    std::string root;
    std::size_t image_size = 64;
    std::size_t n_au = 0;
    std::vector<Sample> samples;

    std::vector<std::string> subjects() const {
        std::set<std::string> s;
        for (const auto& x : samples) s.insert(x.subject);
        return {s.begin(), s.end()};
    }

    /// Per-channel mean in [0, 1].
    std::array<double, 3> channel_mean() const {
        std::array<double, 3> sum{0, 0, 0};
        std::size_t n = 0;
        for (const auto& s : samples) {
            for (std::size_t i = 0; i < s.pixels.size(); i += 3)
                for (std::size_t c = 0; c < 3; ++c) sum[c] += s.pixels[i + c];
            n += s.pixels.size() / 3;
        }
        for (auto& v : sum) v = n ? v / (255.0 * static_cast<double>(n)) : 0.0;
        return sum;
    }

    std::vector<std::vector<int>> labels(const std::vector<std::size_t>& index) const {
        std::vector<std::vector<int>> out;
        for (auto i : index) out.push_back(samples.at(i).labels);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

using Color = std::array<float, 3>;

class Canvas {
public:
    explicit Canvas(std::size_t size, Color bg) : n_(size), px_(size * size, bg) {}

    std::size_t size() const { return n_; }
    Color& at(std::size_t x, std::size_t y) { return px_[y * n_ + x]; }
    const std::vector<Color>& pixels() const { return px_; }

    /// Blends `color` with per-pixel coverage from the signed distance `sd(x, y)` (pixels,
    /// negative inside), inside the box [x0, x1] x [y0, y1].
    template <typename SD>
    void paint(float x0, float y0, float x1, float y1, Color color, float alpha, SD&& sd) {
        if (alpha <= 0.0f) return;
        const int ix0 = std::max(0, static_cast<int>(std::floor(x0)) - 1);
        const int iy0 = std::max(0, static_cast<int>(std::floor(y0)) - 1);
        const int ix1 = std::min(static_cast<int>(n_) - 1, static_cast<int>(std::ceil(x1)) + 1);
        const int iy1 = std::min(static_cast<int>(n_) - 1, static_cast<int>(std::ceil(y1)) + 1);
        for (int y = iy0; y <= iy1; ++y)
            for (int x = ix0; x <= ix1; ++x) {
                const float d = sd(static_cast<float>(x) + 0.5f, static_cast<float>(y) + 0.5f);
                const float cov = std::clamp(0.5f - d, 0.0f, 1.0f) * alpha;
                if (cov <= 0.0f) continue;
                auto& p = at(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
                for (std::size_t c = 0; c < 3; ++c) p[c] = p[c] * (1.0f - cov) + color[c] * cov;
            }
    }

    void ellipse(float cx, float cy, float rx, float ry, Color color, float alpha = 1.0f) {
        if (rx <= 0.05f || ry <= 0.05f) return;
        const float rmin = std::min(rx, ry);
        paint(cx - rx, cy - ry, cx + rx, cy + ry, color, alpha, [=](float x, float y) {
            const float u = (x - cx) / rx, v = (y - cy) / ry;
            return (std::sqrt(u * u + v * v) - 1.0f) * rmin;
        });
    }

    void polyline(const std::vector<std::array<float, 2>>& pts, float thickness, Color color, float alpha = 1.0f) {
        float x0 = 1e9f, y0 = 1e9f, x1 = -1e9f, y1 = -1e9f;
        for (const auto& p : pts) {
            x0 = std::min(x0, p[0]);
            y0 = std::min(y0, p[1]);
            x1 = std::max(x1, p[0]);
            y1 = std::max(y1, p[1]);
        }
        const float h = thickness / 2.0f;
        paint(x0 - h, y0 - h, x1 + h, y1 + h, color, alpha, [&](float x, float y) {
            float best = 1e9f;
            for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
                const float ax = pts[i][0], ay = pts[i][1], bx = pts[i + 1][0], by = pts[i + 1][1];
                const float dx = bx - ax, dy = by - ay;
                const float len2 = dx * dx + dy * dy;
                float t = len2 > 0.0f ? ((x - ax) * dx + (y - ay) * dy) / len2 : 0.0f;
                t = std::clamp(t, 0.0f, 1.0f);
                const float ex = x - (ax + t * dx), ey = y - (ay + t * dy);
                best = std::min(best, std::sqrt(ex * ex + ey * ey));
            }
            return best - h;
        });
    }

    void line(float ax, float ay, float bx, float by, float thickness, Color color, float alpha = 1.0f) {
        polyline({{ax, ay}, {bx, by}}, thickness, color, alpha);
    }

    /// Quadratic Bezier from a to b with control point c.
    void curve(float ax, float ay, float cx, float cy, float bx, float by, float thickness, Color color,
               float alpha = 1.0f) {
        std::vector<std::array<float, 2>> pts;
        for (int i = 0; i <= 10; ++i) {
            const float t = static_cast<float>(i) / 10.0f, s = 1.0f - t;
            pts.push_back({s * s * ax + 2 * s * t * cx + t * t * bx, s * s * ay + 2 * s * t * cy + t * t * by});
        }
        polyline(pts, thickness, color, alpha);
    }

private:
    std::size_t n_;
    std::vector<Color> px_;
};

struct SubjectStyle {
    float face_w, face_h, eye_sep, eye_dy, brow_dy, mouth_w, mouth_dy, stroke;
    Color skin, bg, brow, lip;
};

inline SubjectStyle subject_style(std::uint64_t seed, std::size_t subject) {
    Rng r(hash_seed({seed, 0x5u, subject}));
    auto u = [&](double lo, double hi) { return static_cast<float>(r.uniform(lo, hi)); };
    SubjectStyle s{};
    s.face_w = u(-2.5, 2.5);
    s.face_h = u(-2.0, 2.0);
    s.eye_sep = u(-1.5, 1.5);
    s.eye_dy = u(-1.0, 1.0);
    s.brow_dy = u(-1.0, 1.0);
    s.mouth_w = u(-1.5, 1.5);
    s.mouth_dy = u(-1.0, 1.0);
    s.stroke = u(1.0, 1.5);
    const float tone = u(0.45, 0.9);
    s.skin = {tone, tone * u(0.72, 0.85), tone * u(0.55, 0.7)};
    s.bg = {u(0.15, 0.5), u(0.2, 0.55), u(0.3, 0.65)};
    const float b = u(0.05, 0.3);
    s.brow = {b, b * 0.8f, b * 0.6f};
    s.lip = {u(0.55, 0.75), u(0.2, 0.35), u(0.25, 0.4)};
    return s;
}

inline Color shade(Color c, float k) { return {c[0] * k, c[1] * k, c[2] * k}; }

/// Draws one face. `a` holds per-AU intensities in [0, 1] in kAUNames order.
inline void draw_face(Canvas& cv, const SubjectStyle& s, const std::array<float, kMaxAU>& a, float jx, float jy) {
    const float k = static_cast<float>(cv.size()) / 64.0f;
    const float a1 = a[0], a4 = a[1], a7 = a[2], a9 = a[3], a12 = a[4], a25 = a[5];
    const float cx = 32.0f * k + jx, cy = 34.0f * k + jy;
    const float fw = (23.0f + s.face_w) * k, fh = (27.0f + s.face_h + 1.5f * a25) * k;
    const Color crease = shade(s.skin, 0.55f);
    const float st = s.stroke * k;

    cv.ellipse(cx, cy + 0.75f * a25 * k, fw, fh, s.skin);

    // eyes and lid tightener
    const float ey = cy + (-6.0f + s.eye_dy) * k, ex = (10.0f + s.eye_sep) * k;
    for (float side : {-1.0f, 1.0f}) {
        const float x = cx + side * ex;
        const float ry = (3.0f - 1.9f * a7) * k;
        cv.ellipse(x, ey, 4.5f * k, ry, {0.95f, 0.95f, 0.92f});
        cv.ellipse(x, ey, 1.6f * k, std::min(1.6f * k, ry), {0.1f, 0.08f, 0.06f});
        const float ox = x + side * 5.5f * k;
        for (float ang : {-0.45f, 0.0f, 0.45f})
            cv.line(ox, ey, ox + side * 3.5f * k * std::cos(ang), ey + 3.5f * k * std::sin(ang), 0.9f * k, crease, a7);
        cv.curve(x - 4.0f * k, ey + ry + 1.0f * k, x, ey + ry + 2.2f * k, x + 4.0f * k, ey + ry + 1.0f * k, 0.9f * k,
                 crease, a7);
    }

    // brows, inner brow raise, brow lowering
    const float by = ey + (-6.0f + s.brow_dy) * k;
    for (float side : {-1.0f, 1.0f}) {
        const float inner_y = by + (-4.0f * a1 + 3.0f * a4) * k, outer_y = by + (-1.0f * a1 + 1.5f * a4) * k;
        cv.line(cx + side * 4.0f * k, inner_y, cx + side * (ex + 4.5f * k), outer_y, 1.8f * st, s.brow);
    }
    for (float dy : {7.0f, 10.5f})
        cv.curve(cx - 9.0f * k, by - dy * k, cx, by - (dy + 1.5f) * k, cx + 9.0f * k, by - dy * k, 0.9f * k, crease, a1);
    for (float side : {-1.0f, 1.0f})
        cv.line(cx + side * 1.8f * k, by - 1.0f * k, cx + side * 1.4f * k, by + 4.5f * k, 1.0f * k, crease, a4);

    // nose and nose wrinkler
    const float nb = cy + 6.5f * k;
    cv.line(cx, ey + 1.0f * k, cx, nb, 0.9f * st, shade(s.skin, 0.7f));
    for (float side : {-1.0f, 1.0f}) cv.ellipse(cx + side * 2.5f * k, nb + (0.5f - 1.0f * a9) * k, 1.3f * k, 0.9f * k, shade(s.skin, 0.45f));
    for (float dy : {1.5f, 3.0f, 4.5f}) cv.line(cx - 3.0f * k, ey + dy * k, cx + 3.0f * k, ey + dy * k, 0.8f * k, crease, a9);

    // mouth, lip corner puller, lips part
    const float my = cy + (14.0f + s.mouth_dy) * k, mw = (7.0f + s.mouth_w + 1.5f * a12) * k;
    const float corner_y = my - 4.0f * a12 * k;
    for (float side : {-1.0f, 1.0f}) {
        cv.curve(cx + side * 4.0f * k, nb + 0.5f * k, cx + side * 8.5f * k, nb + 3.0f * k, cx + side * (mw + 1.5f * k),
                 corner_y + 1.0f * k, 1.1f * k, crease, a9);
        cv.ellipse(cx + side * 12.0f * k, my - 6.0f * k, 3.5f * k, 2.5f * k, {0.85f, 0.35f, 0.4f}, 0.7f * a12);
    }
    const float gap = 2.2f * a25 * k;
    if (gap > 0.0f) {
        cv.ellipse(cx, my, mw * 0.8f, gap + 0.5f * k, {0.12f, 0.04f, 0.05f});
        cv.line(cx - mw * 0.5f, my - gap * 0.6f, cx + mw * 0.5f, my - gap * 0.6f, 1.0f * k, {0.95f, 0.95f, 0.9f}, a25);
    }
    const float bend = 2.0f * a12 * k;
    cv.curve(cx - mw, corner_y, cx, my - gap + bend - 1.0f * k, cx + mw, corner_y, 1.3f * st, s.lip);
    cv.curve(cx - mw, corner_y, cx, my + gap + bend + 1.5f * k, cx + mw, corner_y, 1.3f * st, s.lip);
    cv.curve(cx - 4.0f * k, my + (7.0f + 2.0f * a25) * k, cx, my + (8.5f + 2.0f * a25) * k, cx + 4.0f * k,
             my + (7.0f + 2.0f * a25) * k, 0.9f * k, crease, a25);
}

inline double normal_upper_quantile(double tail) {
    double lo = -10.0, hi = 10.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (0.5 * std::erfc(mid / std::sqrt(2.0)) > tail)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Lower Cholesky factor of the latent AU correlation matrix for the first n AUs.
inline std::vector<double> latent_cholesky(std::size_t n) {
    std::vector<double> c(n * n, 0.0), l(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) c[i * n + i] = 1.0;
    for (const auto& p : kCorrelatedPairs)
        if (p[0] < n && p[1] < n) c[p[0] * n + p[1]] = c[p[1] * n + p[0]] = kPairCorrelation;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            double s = c[i * n + j];
            for (std::size_t q = 0; q < j; ++q) s -= l[i * n + q] * l[j * n + q];
            l[i * n + j] = i == j ? std::sqrt(s) : s / l[j * n + j];
        }
    return l;
}

inline std::string sample_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%05zu.ppm", i);
    return buf;
}

}  // namespace detail

/// Renders a deterministic synthetic face dataset.
inline Dataset gen_synthetic_dataset(std::size_t n_samples, std::size_t n_subjects, std::uint64_t seed,
                                     std::size_t n_au, std::size_t image_size = 64) {
    if (n_subjects < 3 || n_samples < n_subjects)
        throw std::invalid_argument("gen_synthetic_dataset: need n_samples >= n_subjects >= 3");
    if (n_au < 4 || n_au > kMaxAU) throw std::invalid_argument("gen_synthetic_dataset: n_au must lie in [4, 6]");
    if (image_size < 32) throw std::invalid_argument("gen_synthetic_dataset: image_size must be at least 32");

    const auto chol = detail::latent_cholesky(kMaxAU);
    std::array<double, kMaxAU> thresholds{};
    for (std::size_t i = 0; i < kMaxAU; ++i) thresholds[i] = detail::normal_upper_quantile(kAURates[i]);
    std::vector<detail::SubjectStyle> styles;
    for (std::size_t s = 0; s < n_subjects; ++s) styles.push_back(detail::subject_style(seed, s));

    Dataset ds;
    ds.image_size = image_size;
    ds.n_au = n_au;
    for (std::size_t i = 0; i < n_samples; ++i) {
        Rng r(hash_seed({seed, 0x1u, i}));
        const std::size_t subj = i % n_subjects;
        std::array<double, kMaxAU> e{}, z{};
        for (auto& v : e) v = r.normal();
        for (std::size_t a = 0; a < kMaxAU; ++a)
            for (std::size_t b = 0; b <= a; ++b) z[a] += chol[a * kMaxAU + b] * e[b];
        std::array<float, kMaxAU> intensity{};
        Sample s;
        for (std::size_t a = 0; a < kMaxAU; ++a) {
            const bool on = z[a] > thresholds[a];
            if (on) intensity[a] = static_cast<float>(std::min(1.0, 0.7 + 0.3 * (z[a] - thresholds[a])));
            if (a < n_au) s.labels.push_back(on ? 1 : 0);
        }
        for (std::size_t a = n_au; a < kMaxAU; ++a) intensity[a] = 0.0f;

        const auto& st = styles[subj];
        detail::Canvas cv(image_size, st.bg);
        const float jx = static_cast<float>(r.uniform(-2.0, 2.0)), jy = static_cast<float>(r.uniform(-2.0, 2.0));
        detail::draw_face(cv, st, intensity, jx, jy);
        const float gain = static_cast<float>(r.uniform(0.92, 1.08));
        s.pixels.reserve(image_size * image_size * 3);
        for (const auto& p : cv.pixels())
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = p[c] * gain + 0.02 * r.normal();
                s.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
            }
        s.subject = "S" + std::to_string(subj + 1);
        s.file = detail::sample_name(i);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Files

inline void write_ppm(const std::string& path, const std::vector<std::uint8_t>& rgb, std::size_t w, std::size_t h) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

inline std::vector<std::uint8_t> read_ppm(const std::string& path, std::size_t& w, std::size_t& h) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    auto token = [&]() {
        std::string t;
        char c;
        while (f.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(f, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!t.empty()) break;
                continue;
            }
            t.push_back(c);
        }
        return t;
    };
    if (token() != "P6") throw std::runtime_error(path + ": not a binary PPM");
    w = std::stoul(token());
    h = std::stoul(token());
    if (token() != "255") throw std::runtime_error(path + ": only 8-bit PPM supported");
    std::vector<std::uint8_t> rgb(w * h * 3);
    f.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (f.gcount() != static_cast<std::streamsize>(rgb.size())) throw std::runtime_error(path + ": truncated pixel data");
    return rgb;
}

/// Writes images/<file> and labels.csv under `root`.
inline void save_dataset(const Dataset& ds, const std::string& root) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(root) / "images");
    std::ofstream csv(fs::path(root) / "labels.csv");
    if (!csv) throw std::runtime_error("cannot write labels.csv under " + root);
    csv << "file,subject";
    for (std::size_t a = 0; a < ds.n_au; ++a) csv << ",au_" << (a + 1);
    csv << "\n";
    for (const auto& s : ds.samples) {
        write_ppm((fs::path(root) / "images" / s.file).string(), s.pixels, ds.image_size, ds.image_size);
        csv << s.file << "," << s.subject;
        for (int l : s.labels) csv << "," << l;
        csv << "\n";
    }
}

inline Dataset load_dataset(const std::string& root) {
    namespace fs = std::filesystem;
    std::ifstream csv(fs::path(root) / "labels.csv");
    if (!csv) throw std::runtime_error("cannot open " + (fs::path(root) / "labels.csv").string());
    std::string line;
    if (!std::getline(csv, line)) throw std::runtime_error("labels.csv is empty");
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty() && item.back() == '\r') item.pop_back();
            out.push_back(item);
        }
        return out;
    };
    auto header = split(line);
    if (header.size() < 3 || header[0] != "file" || header[1] != "subject")
        throw std::runtime_error("labels.csv header must start with file,subject");
    Dataset ds;
    ds.root = root;
    ds.n_au = header.size() - 2;
    for (std::size_t a = 0; a < ds.n_au; ++a)
        if (header[a + 2] != "au_" + std::to_string(a + 1)) throw std::runtime_error("labels.csv: unexpected column " + header[a + 2]);
    std::size_t lineno = 1;
    bool first = true;
    while (std::getline(csv, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cols = split(line);
        if (cols.size() != header.size()) throw std::runtime_error("labels.csv:" + std::to_string(lineno) + ": column count");
        Sample s;
        s.file = cols[0];
        s.subject = cols[1];
        if (s.subject.empty()) throw std::runtime_error("labels.csv:" + std::to_string(lineno) + ": empty subject");
        for (std::size_t a = 0; a < ds.n_au; ++a) {
            if (cols[a + 2] != "0" && cols[a + 2] != "1")
                throw std::runtime_error("labels.csv:" + std::to_string(lineno) + ": labels must be 0 or 1");
            s.labels.push_back(cols[a + 2] == "1");
        }
        std::size_t w = 0, h = 0;
        s.pixels = read_ppm((fs::path(root) / "images" / s.file).string(), w, h);
        if (w != h) throw std::runtime_error(s.file + ": images must be square");
        if (first) ds.image_size = w;
        if (w != ds.image_size) throw std::runtime_error(s.file + ": image geometry differs from the first image");
        first = false;
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw std::runtime_error("labels.csv lists no images");
    return ds;
}

// ---------------------------------------------------------------------------
// Splits

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    std::vector<std::string> test_subjects;
};

/// Subject-disjoint k-fold partition. Subjects are shuffled with `seed` and dealt round-robin.
inline std::vector<Fold> kfold_split(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    auto subjects = ds.subjects();
    if (k < 2) throw std::invalid_argument("kfold_split: need at least two folds");
    if (subjects.size() < k)
        throw std::invalid_argument("kfold_split: " + std::to_string(subjects.size()) + " subjects cannot fill " +
                                    std::to_string(k) + " folds");
    Rng r(hash_seed({seed, 0x4u}));
    r.shuffle(subjects);
    std::map<std::string, std::size_t> group;
    for (std::size_t i = 0; i < subjects.size(); ++i) group[subjects[i]] = i % k;
    std::vector<Fold> folds(k);
    for (std::size_t i = 0; i < subjects.size(); ++i) folds[i % k].test_subjects.push_back(subjects[i]);
    for (auto& f : folds) std::sort(f.test_subjects.begin(), f.test_subjects.end());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto g = group.at(ds.samples[i].subject);
        for (std::size_t f = 0; f < k; ++f) (f == g ? folds[f].test : folds[f].train).push_back(i);
    }
    return folds;
}

}  // namespace occlu::harness
