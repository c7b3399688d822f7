// Acceptance run: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "occlu/occlu.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace occlu;
using namespace occlu::harness;

namespace {

// Tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr int kGradSeeds = 20;
constexpr std::size_t kGradN = 4, kGradC = 8;
constexpr double kGradBudgetSec = 300;

constexpr double kOracleTol = 1e-9;
constexpr int kOracleInstances = 100;

constexpr int kMaskSpecs = 1000;
constexpr int kGraphInstances = 1000;
constexpr double kWeightSumTol = 1e-9;

constexpr std::size_t kOverfitSamples = 8;
constexpr std::size_t kTeacherSteps = 500;
constexpr double kTeacherRatio = 0.1;
constexpr std::size_t kMaeSteps = 200;
constexpr double kMaeRatio = 0.5;
constexpr double kConvergenceBudgetSec = 600;

constexpr std::size_t kE2ESamples = 1500, kE2ESubjects = 9, kE2EFolds = 3;
constexpr double kCleanDrop = 0.15;
constexpr double kRecovery = 0.9;
constexpr double kE2EBudgetSec = 7200;
constexpr double kSweepRetention = 0.8;
const std::vector<double> kSweepRatios{0.0, 0.3, 0.5, 0.7};

struct Result {
    bool pass = true;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

Tensor<double> binary_labels(std::size_t rows, std::size_t n, Rng& rng) {
    std::vector<double> y(rows * n);
    for (auto& v : y) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    return Tensor<double>({rows, n}, std::move(y));
}

void randomize_bn(BatchNormState<double>& bn, Rng& rng) {
    for (auto& v : bn.scale.mutable_data()) v = rng.uniform(0.5, 1.5);
    for (auto& v : bn.offset.mutable_data()) v = rng.uniform(-0.3, 0.3);
}

std::vector<double> random_weights(std::size_t n, Rng& rng) {
    std::vector<double> r(n);
    for (auto& v : r) v = rng.uniform(0.1, 0.9);
    return augraph::class_weights(r).w;
}

mae::MAEConfig tiny_mae() {
    mae::MAEConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.enc_dim = 16;
    c.enc_depth = 2;
    c.enc_heads = 2;
    c.dec_dim = 8;
    c.dec_depth = 1;
    c.dec_heads = 2;
    return c;
}

occlusion::MaskSpec random_spec(std::size_t grid, std::size_t patch, Rng& rng, double lo, double hi) {
    return occlusion::gen_random_mask(grid, grid, rng.uniform(lo, hi), rng.next(), patch);
}

Config tiny_config() {
    Config c;
    for (const char* kv : {"precision=f64", "n_samples=36", "n_subjects=3", "enc_dim=16", "enc_depth=2", "enc_heads=2",
                           "dec_dim=8", "dec_depth=1", "dec_heads=2", "channels=8", "batch_size=6", "mae_warmup_epochs=1",
                           "epochs_stage1=1", "epochs_stage2=1", "epochs_student=2", "lr_stage1=1e-3", "lr_stage2=1e-3",
                           "lr_student=1e-3"})
        c.set_assignment(kv);
    return c;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

Result criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    std::map<std::string, double> worst;
    auto note = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };
    const std::size_t n = kGradN, c = kGradC, rows = 3;
    for (int seed = 0; seed < kGradSeeds; ++seed) {
        Rng rng(hash_seed({0xacc1u, static_cast<std::uint64_t>(seed)}));

        // Reconstruction, both wrt predictions and end to end wrt the mask token.
        mae::MAEParams<double> mp(tiny_mae(), rng);
        auto img = testutil::random_tensor({16, 16, 3}, rng, 0.0, 1.0, false);
        auto spec = random_spec(4, 4, rng, 0.2, 0.8);
        note("L_recons", testutil::grad_check([&](const Tensor<double>& pred) { return mae::recon_loss(pred, img, spec); },
                                              testutil::random_tensor({16, 48}, rng)));
        note("L_recons(e2e)", testutil::grad_check(
                                  [&](const Tensor<double>& tok) {
                                      auto q = mp;
                                      q.mask_token = tok;
                                      return mae::recon_loss(mae::decode(mae::encode_visible(img, spec, q), spec, q), img, spec);
                                  },
                                  mp.mask_token));

        const auto y = binary_labels(rows, n, rng);
        const auto w = random_weights(n, rng);
        const double m = 0.05, gamma = 2.0, lambda = rng.uniform(0.01, 1.0), alpha = rng.uniform(0.1, 2.0),
                     beta = rng.uniform(0.05, 1.0), temp = rng.uniform(1.0, 4.0);
        note("L_AU", testutil::grad_check([&](const Tensor<double>& p) { return augraph::au_loss(p, y, w, m, gamma); },
                                          testutil::random_tensor({rows, n}, rng, 0.1, 0.95)));
        const auto targets = augraph::edge_targets(y);
        note("L_E", testutil::grad_check([&](const Tensor<double>& z) { return augraph::edge_loss(z, targets); },
                                         testutil::random_tensor({rows, n, n, 4}, rng, -2, 2)));

        const auto pt = testutil::random_tensor({rows, n}, rng, 0.05, 0.95, false);
        const auto zt = testutil::random_tensor({rows, n, n, 4}, rng, -2, 2, false);
        const auto ps0 = testutil::random_tensor({rows, n}, rng, 0.05, 0.95);
        const auto zs0 = testutil::random_tensor({rows, n, n, 4}, rng, -2, 2);
        note("L_KD_AU", testutil::grad_check([&](const Tensor<double>& p) { return distill::kd_au_loss(p, pt); }, ps0));
        note("L_KD_E", testutil::grad_check([&](const Tensor<double>& z) { return distill::kd_edge_loss(z, zt, temp); }, zs0));
        note("L_KD", testutil::grad_check(
                         [&](const Tensor<double>& p) {
                             return distill::kd_loss(distill::kd_au_loss(p, pt), distill::kd_edge_loss(zs0, zt, temp), beta);
                         },
                         ps0));
        note("L_KD", testutil::grad_check(
                         [&](const Tensor<double>& z) {
                             return distill::kd_loss(distill::kd_au_loss(ps0, pt), distill::kd_edge_loss(z, zt, temp), beta);
                         },
                         zs0));

        // Stage-2 and student objectives through the full head, wrt the feature map.
        augraph::HeadConfig hc;
        hc.n_au = n;
        hc.channels = c;
        hc.top_k = 2;
        augraph::AUHeadParams<double> head(hc, rng);
        const auto f = testutil::random_tensor({2, 3, 3, c}, rng, -1, 1);
        const auto y2 = binary_labels(2, n, rng);
        const auto t2 = augraph::edge_targets(y2);
        const auto pt2 = testutil::random_tensor({2, n}, rng, 0.05, 0.95, false);
        const auto zt2 = testutil::random_tensor({2, n, n, 4}, rng, -2, 2, false);
        note("L_stage2", testutil::grad_check(
                             [&](const Tensor<double>& x) {
                                 auto o = augraph::forward_stage2(x, head, NormMode::train);
                                 return augraph::stage2_loss(augraph::au_loss(o.p, y2, w, m, gamma), augraph::edge_loss(o.z, t2),
                                                             lambda);
                             },
                             f));
        note("L_student", testutil::grad_check(
                              [&](const Tensor<double>& x) {
                                  auto o = augraph::forward_stage2(x, head, NormMode::train);
                                  auto kd = distill::kd_loss(distill::kd_au_loss(o.p, pt2), distill::kd_edge_loss(o.z, zt2, temp),
                                                             beta);
                                  return distill::student_loss(augraph::au_loss(o.p, y2, w, m, gamma),
                                                               augraph::edge_loss(o.z, t2), kd, lambda, alpha);
                              },
                              f));
    }
    const double secs = seconds_since(t0);
    Result r;
    std::ostringstream os;
    os << kGradSeeds << " seeds, N=" << n << " C=" << c << ", max rel err";
    for (const auto& [name, err] : worst) {
        os << " " << name << "=" << fmt(err, 2);
        if (!(err < kGradTol)) r.pass = false;
    }
    os << " (< " << kGradTol << "), " << fmt(secs, 3) << " s (< " << kGradBudgetSec << ")";
    if (!(secs < kGradBudgetSec)) r.pass = false;
    r.detail = os.str();
    return r;
}

// ---------------------------------------------------------------------------
// 2. Formula oracles

Result criterion2() {
    std::map<std::string, double> worst;
    auto note = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };
    Rng rng(0xacc2u);
    for (int t = 0; t < kOracleInstances; ++t) {
        const std::size_t rows = 1 + t % 4, n = 2 + t % 7;

        std::vector<double> rates(n);
        for (auto& v : rates) v = rng.uniform(0.01, 1.0);
        note("class_weights", testutil::max_abs_diff(augraph::class_weights(rates).w, oracle::class_weights(rates)));

        auto p = testutil::random_tensor({rows, n}, rng, 0.0, 1.0, false);
        auto y = binary_labels(rows, n, rng);
        std::vector<double> w(n);
        for (auto& v : w) v = rng.uniform(0.2, 2.0);
        const double m = rng.uniform(0.0, 0.3), gamma = rng.uniform(0.0, 3.0);
        note("au_loss", std::abs(augraph::au_loss(p, y, w, m, gamma).item() - oracle::au_loss(p.values(), y.values(), w, m, gamma)));

        auto ps = testutil::random_tensor({rows, n}, rng, 0.0, 1.0, false);
        note("kd_au_loss", std::abs(distill::kd_au_loss(ps, p).item() - oracle::kd_au_loss(ps.values(), p.values(), true)));

        auto zs = testutil::random_tensor({rows, n, n, 4}, rng, -4, 4, false);
        auto zt = testutil::random_tensor({rows, n, n, 4}, rng, -4, 4, false);
        const double temp = rng.uniform(0.5, 4.0);
        note("kd_edge_loss",
             std::abs(distill::kd_edge_loss(zs, zt, temp).item() - oracle::kd_edge_loss(zs.values(), zt.values(), temp, true)));
        note("edge_loss", std::abs(augraph::edge_loss(zs, augraph::edge_targets(y)).item() - oracle::edge_loss(zs.values(), y.values(), n)));

        const std::size_t b = 2 + t % 2, gn = 3 + t % 3, c = 3 + t % 4;
        auto v = testutil::random_tensor({b, gn, c}, rng, -1, 1, false);
        augraph::GCNWeights<double> gw(c, rng);
        randomize_bn(gw.bn, rng);
        auto a = augraph::build_adjacency_batch(v, 1 + t % (gn - 1));
        auto got = augraph::gcn_update(v, a, gw, NormMode::train);
        note("gcn_update", testutil::max_abs_diff(got.data(), oracle::gcn_update(v.values(), a.values(), gn, c, oracle::Affine(gw.g1),
                                                                                  oracle::Affine(gw.g2), gw.bn.scale.values(),
                                                                                  gw.bn.offset.values(), gw.bn.eps)));

        auto e = testutil::random_tensor({b, gn, gn, c}, rng, -1, 1, false);
        augraph::GatedGCNWeights<double> gg(c, rng);
        randomize_bn(gg.bn_e, rng);
        randomize_bn(gg.bn_v, rng);
        auto st = augraph::gated_gcn_layer(v, e, gg, NormMode::train);
        oracle::GatedWeights ow{oracle::Affine(gg.a1), oracle::Affine(gg.a2), oracle::Affine(gg.a3), oracle::Affine(gg.u),
                                oracle::Affine(gg.w),  gg.bn_e.scale.values(), gg.bn_e.offset.values(),
                                gg.bn_v.scale.values(), gg.bn_v.offset.values(), gg.bn_e.eps};
        auto [v_want, e_want] = oracle::gated_gcn_layer(v.values(), e.values(), gn, c, ow);
        note("gated_gcn_layer", std::max(testutil::max_abs_diff(st.v.data(), v_want), testutil::max_abs_diff(st.e.data(), e_want)));
    }
    Result r;
    std::ostringstream os;
    os << kOracleInstances << " instances each, max abs err";
    for (const auto& [name, err] : worst) {
        os << " " << name << "=" << fmt(err, 2);
        if (!(err < kOracleTol)) r.pass = false;
    }
    os << " (< " << kOracleTol << ")";
    r.detail = os.str();
    return r;
}

// ---------------------------------------------------------------------------
// 3. Masking invariants

Result criterion3() {
    Rng rng(0xacc3u);
    int random_bad = 0, block_bad = 0, block_infeasible = 0, apply_bad = 0, composite_bad = 0, encode_bad = 0;
    int blocks = 0;
    mae::MAEParams<double> mp(tiny_mae(), rng);
    for (int i = 0; i < kMaskSpecs; ++i) {
        const std::size_t patch = 2 + rng.below(3), grid = 4 + rng.below(13), side = grid * patch, total = grid * grid;

        const double ratio = rng.uniform(0.0, 0.95);
        auto rs = occlusion::gen_random_mask(grid, grid, ratio, rng.next(), patch);
        const std::set<std::size_t> uniq(rs.masked.begin(), rs.masked.end());
        if (rs.masked.size() != static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total))) ||
            uniq.size() != rs.masked.size() || (!uniq.empty() && *uniq.rbegin() >= total))
            ++random_bad;

        const double bratio = rng.uniform(0.05, 0.9);
        try {
            auto bs = occlusion::gen_block_mask(grid, grid, bratio, rng.next(), patch);
            ++blocks;
            const double target = bratio * static_cast<double>(total);
            if (!occlusion::is_rectangle(bs) || std::abs(static_cast<double>(bs.masked.size()) - target) > 0.05 * target) ++block_bad;
        } catch (const std::invalid_argument&) {
            ++block_infeasible;
        }

        auto img = testutil::random_tensor({side, side, 3}, rng, 0.0, 1.0, false);
        const std::vector<double> fill{rng.uniform(), rng.uniform(), rng.uniform()};
        auto masked_img = occlusion::apply_mask<double>(img, rs, fill);
        std::vector<bool> hidden(total, false);
        for (auto k : rs.masked) hidden[k] = true;
        auto pred = testutil::random_tensor({total, patch * patch * 3}, rng, 0.0, 1.0, false);
        auto comp = mae::composite(img, pred, rs);
        for (std::size_t yy = 0; yy < side; ++yy)
            for (std::size_t xx = 0; xx < side; ++xx) {
                const bool h = hidden[(yy / patch) * grid + xx / patch];
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    const std::size_t k = (yy * side + xx) * 3 + ch;
                    if (masked_img.data()[k] != (h ? fill[ch] : img.data()[k])) ++apply_bad;
                    if (!h && comp.data()[k] != img.data()[k]) ++composite_bad;
                }
            }

        auto es = random_spec(4, 4, rng, 0.0, 0.9);
        auto small = testutil::random_tensor({16, 16, 3}, rng, 0.0, 1.0, false);
        auto noisy = small.values();
        for (auto k : es.masked)
            for (std::size_t yy = (k / 4) * 4; yy < (k / 4) * 4 + 4; ++yy)
                for (std::size_t xx = (k % 4) * 4; xx < (k % 4) * 4 + 4; ++xx)
                    for (std::size_t ch = 0; ch < 3; ++ch) noisy[(yy * 16 + xx) * 3 + ch] = rng.uniform(-5.0, 5.0);
        if (mae::encode_visible(small, es, mp).tokens.values() !=
            mae::encode_visible(Tensor<double>({16, 16, 3}, noisy), es, mp).tokens.values())
            ++encode_bad;
    }
    Result r;
    r.pass = random_bad == 0 && block_bad == 0 && apply_bad == 0 && composite_bad == 0 && encode_bad == 0 &&
             blocks >= kMaskSpecs / 2;
    std::ostringstream os;
    os << kMaskSpecs << " specs: random count errors " << random_bad << ", block errors " << block_bad << " of " << blocks
       << " (" << block_infeasible << " ratio/grid pairs with no fitting rectangle, rejected), apply_mask mismatches " << apply_bad
       << ", composite mismatches " << composite_bad << ", encode_visible changes " << encode_bad;
    r.detail = os.str();
    return r;
}

// ---------------------------------------------------------------------------
// 4. Graph invariants

Result criterion4() {
    Rng rng(0xacc4u);
    int row_bad = 0, diag_bad = 0, scale_bad = 0, prob_bad = 0;
    double worst_sum = 0.0;
    for (int t = 0; t < kGraphInstances; ++t) {
        const std::size_t n = 2 + rng.below(11), c = 1 + rng.below(16), k = 1 + rng.below(n - 1);
        auto v = testutil::random_tensor({n, c}, rng, -1, 1, false);
        auto a = augraph::build_adjacency(v, k);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += a.data()[i * n + j];
            if (s != static_cast<double>(k)) ++row_bad;
            if (a.data()[i * n + i] != 0.0) ++diag_bad;
        }
        auto scaled = v.values();
        for (std::size_t i = 0; i < n; ++i) {
            const double f = std::exp(rng.uniform(-5.0, 5.0));
            for (std::size_t j = 0; j < c; ++j) scaled[i * c + j] *= f;
        }
        if (augraph::build_adjacency(Tensor<double>({n, c}, scaled), k).values() != a.values()) ++scale_bad;

        auto vb = testutil::random_tensor({2, n, c}, rng, -3, 3, false);
        auto anchors = testutil::random_tensor({n, c}, rng, -1, 1, false);
        const auto probs = augraph::predict_au(vb, anchors);
        for (double p : probs.values())
            if (!(p >= 0.0 && p <= 1.0)) ++prob_bad;

        std::vector<double> rates(n);
        for (auto& x : rates) x = rng.uniform(1e-3, 1.0);
        double s = 0.0;
        for (double x : augraph::class_weights(rates).w) s += x;
        worst_sum = std::max(worst_sum, std::abs(s - static_cast<double>(n)));
    }
    Result r;
    r.pass = row_bad == 0 && diag_bad == 0 && scale_bad == 0 && prob_bad == 0 && worst_sum < kWeightSumTol;
    r.detail = std::to_string(kGraphInstances) + " graphs: row-sum errors " + std::to_string(row_bad) + ", nonzero diagonals " +
               std::to_string(diag_bad) + ", scaling changes " + std::to_string(scale_bad) + ", p outside [0,1] " +
               std::to_string(prob_bad) + ", max |sum w - N| " + fmt(worst_sum, 2) + " (< " + fmt(kWeightSumTol, 2) + ")";
    return r;
}

// ---------------------------------------------------------------------------
// 5. Convergence

Config overfit_config() {
    Config c;
    for (const char* kv : {"precision=f32", "batch_size=8", "mae_warmup_epochs=0", "epochs_stage2=0", "lr_stage1=1e-3",
                           "lr_mae_warmup=1e-3", "lr_schedule=constant", "flip=0"})
        c.set_assignment(kv);
    c.set("n_samples", std::to_string(kOverfitSamples));
    c.set("n_subjects", "4");
    return c;
}

Result criterion5() {
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = overfit_config();
    const auto ds = gen_synthetic_dataset(kOverfitSamples, 4, cfg.seed(), cfg.count("n_au"));
    std::vector<std::size_t> all(kOverfitSamples);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

    cfg.set("epochs_stage1", std::to_string(kTeacherSteps));
    const auto teacher = train_teacher<float>(cfg, ds, all, true);
    double au0 = 0, au_end = 0;
    for (const auto& s : teacher.history)
        if (s.phase == "stage1") {
            if (s.step == 0) au0 = s.l_au;
            au_end = s.l_au;
        }

    cfg.set("epochs_stage1", "0");
    cfg.set("mae_warmup_epochs", std::to_string(kMaeSteps));
    const auto mae_only = train_teacher<float>(cfg, ds, all, true);
    double rec0 = 0, rec_end = 0;
    for (const auto& s : mae_only.history)
        if (s.phase == "mae_warmup") {
            if (s.step == 0) rec0 = s.l_recons;
            rec_end = s.l_recons;
        }
    const double secs = seconds_since(t0);
    Result r;
    r.pass = au_end < kTeacherRatio * au0 && rec_end < kMaeRatio * rec0 && secs < kConvergenceBudgetSec;
    r.detail = "teacher stage 1 on " + std::to_string(kOverfitSamples) + " samples: L_AU " + fmt(au0) + " -> " + fmt(au_end) +
               " after " + std::to_string(kTeacherSteps) + " steps (ratio " + fmt(au_end / au0, 3) + " < " + fmt(kTeacherRatio) +
               "); MAE only: L_recons " + fmt(rec0) + " -> " + fmt(rec_end) + " after " + std::to_string(kMaeSteps) +
               " steps (ratio " + fmt(rec_end / rec0, 3) + " < " + fmt(kMaeRatio) + "); " + fmt(secs, 3) + " s (< " +
               fmt(kConvergenceBudgetSec) + ")";
    return r;
}

// ---------------------------------------------------------------------------
// 6 and 7. End to end on the synthetic set

Config e2e_config() {
    Config c;
    for (const char* kv : {"precision=f32", "mae_warmup_epochs=5", "epochs_stage1=10", "epochs_stage2=10", "epochs_student=20",
                           "lr_stage1=1e-3", "lr_stage2=1e-3", "lr_student=1e-3", "lr_mae_factor=0.1",
                           "lr_mae_factor_student=1"})
        c.set_assignment(kv);
    c.set("n_samples", std::to_string(kE2ESamples));
    c.set("n_subjects", std::to_string(kE2ESubjects));
    c.set("folds", std::to_string(kE2EFolds));
    return c;
}

struct SweepTable {
    std::map<std::string, std::map<double, double>> f1;  // model -> ratio -> mean over folds
    double seconds = 0;
    std::string error;
};

const SweepTable& e2e_results() {
    static const SweepTable table = [] {
        SweepTable t;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const auto cfg = e2e_config();
            const auto ds = gen_synthetic_dataset(kE2ESamples, kE2ESubjects, cfg.seed(), cfg.count("n_au"));
            const auto folds = kfold_split(ds, kE2EFolds, cfg.seed());
            const auto es = eval_settings(cfg);
            std::vector<MetricsReport> all;
            for (std::size_t k = 0; k < folds.size(); ++k) {
                const auto& fold = folds[k];
                AnyModel<float> base{"baseline", train_teacher<float>(cfg, ds, fold.train, false), std::nullopt};
                auto teacher = train_teacher<float>(cfg, ds, fold.train, true);
                AnyModel<float> stu{"student", std::nullopt, train_student<float>(cfg, teacher, ds, fold.train)};
                AnyModel<float> tea{"teacher", teacher, std::nullopt};
                for (auto* m : {&base, &tea, &stu}) {
                    auto reps = robustness_sweep(*m, ds, fold.test, es, kSweepRatios, k);
                    for (const auto& rep : reps) t.f1[m->kind][rep.ratio] += rep.average / static_cast<double>(folds.size());
                    all.insert(all.end(), reps.begin(), reps.end());
                }
                std::cerr << "  fold " << k + 1 << "/" << folds.size() << " done at " << fmt(seconds_since(t0), 4) << " s\n";
            }
            std::cerr << reports_table(all);
        } catch (const std::exception& e) {
            t.error = e.what();
        }
        t.seconds = seconds_since(t0);
        return t;
    }();
    return table;
}

Result criterion6() {
    const auto& t = e2e_results();
    if (!t.error.empty()) return {false, "pipeline failed: " + t.error};
    const double clean = t.f1.at("baseline").at(0.0), base50 = t.f1.at("baseline").at(0.5), stu50 = t.f1.at("student").at(0.5);
    Result r;
    const bool a = clean - base50 >= kCleanDrop, b = stu50 >= kRecovery * clean, budget = t.seconds <= kE2EBudgetSec;
    r.pass = a && b && budget;
    r.detail = "(a) baseline F1 clean " + fmt(clean) + " vs 50% masked " + fmt(base50) + ", drop " + fmt(clean - base50) +
               " (>= " + fmt(kCleanDrop) + ") " + (a ? "ok" : "not met") + "; (b) student F1 at 50% " + fmt(stu50) + " vs " +
               fmt(kRecovery) + " x " + fmt(clean) + " = " + fmt(kRecovery * clean) + " " + (b ? "ok" : "not met") +
               "; teacher F1 at 50% " + fmt(t.f1.at("teacher").at(0.5)) + "; " + std::to_string(kE2EFolds) + "-fold mean, " +
               fmt(t.seconds, 4) + " s (<= " + fmt(kE2EBudgetSec) + ")";
    return r;
}

Result criterion7() {
    const auto& t = e2e_results();
    if (!t.error.empty()) return {false, "pipeline failed: " + t.error};
    const auto& b = t.f1.at("baseline");
    const auto& s = t.f1.at("student");
    Result r;
    std::ostringstream os;
    const bool keep = s.at(0.7) >= kSweepRetention * s.at(0.3);
    os << "student F1 at 70% " << fmt(s.at(0.7)) << " vs " << kSweepRetention << " x F1 at 30% " << fmt(s.at(0.3)) << " = "
       << fmt(kSweepRetention * s.at(0.3)) << (keep ? " ok" : " not met") << "; drops from clean (baseline / student):";
    r.pass = keep;
    for (double ratio : {0.3, 0.5, 0.7}) {
        const double db = b.at(0.0) - b.at(ratio), ds = s.at(0.0) - s.at(ratio);
        os << " " << ratio << ": " << fmt(db, 3) << " / " << fmt(ds, 3);
        if (!(db > ds)) {
            r.pass = false;
            os << " (not faster)";
        }
    }
    r.detail = os.str();
    return r;
}

// ---------------------------------------------------------------------------
// 8. Distillation contracts

Result criterion8() {
    Rng rng(0xacc8u);
    int zero_bad = 0, pos_bad = 0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t rows = 1 + t % 3, n = 2 + t % 5;
        auto p = testutil::random_tensor({rows, n}, rng, 0.0, 1.0, false);
        auto q = testutil::random_tensor({rows, n}, rng, 0.0, 1.0, false);
        auto z = testutil::random_tensor({rows, n, n, 4}, rng, -3, 3, false);
        auto zq = testutil::random_tensor({rows, n, n, 4}, rng, -3, 3, false);
        const double temp = rng.uniform(0.5, 4.0);
        if (distill::kd_au_loss(p, p).item() != 0.0 || distill::kd_edge_loss(z, z, temp).item() != 0.0) ++zero_bad;
        if (!(distill::kd_au_loss(p, q).item() > 0.0) || !(distill::kd_edge_loss(z, zq, temp).item() > 0.0)) ++pos_bad;
    }

    auto cfg = tiny_config();
    const auto ds = gen_synthetic_dataset(cfg.count("n_samples"), cfg.count("n_subjects"), cfg.seed(), cfg.count("n_au"));
    const auto fold = kfold_split(ds, 3, cfg.seed())[0];
    auto teacher = train_teacher<double>(cfg, ds, fold.train, true);
    const auto before = teacher.checkpoint(cfg).serialize();

    // Distillation steps with the teacher graph kept live: every teacher gradient must be zero.
    std::size_t nonzero = 0, checked = 0;
    {
        StudentModel<double> s(teacher.model.config, cfg.seed());
        s.warm_start(teacher.model);
        const LossSettings<double> ls(cfg, ds, fold.train);
        const auto ms = mask_settings(cfg, teacher.fill);
        const auto tparams = teacher.model.params().trainable();
        for (const auto& idx : epoch_batches(fold.train, cfg.count("batch_size"), cfg.seed(), "student", 0)) {
            auto b = make_batch<double>(ds, idx, ms, cfg.seed(), std::size_t{0}, false, cfg.count("patch_size"));
            auto o = student_forward(s, b.masked, NormMode::train);
            auto th = teacher_forward(teacher.model, b.masked, b.specs, nullptr, HeadStage::two, NormMode::eval).head;
            auto kd = distill::kd_loss(distill::kd_au_loss(o.p, th.p), distill::kd_edge_loss(o.z, th.z, ls.temperature), ls.beta);
            auto loss = distill::student_loss(augraph::au_loss(o.p, b.labels, ls.weights, ls.margin, ls.gamma),
                                              augraph::edge_loss(o.z, augraph::edge_targets(b.labels)), kd, ls.lambda, ls.alpha);
            for (const auto& g : grad(loss, tparams))
                for (double v : g.values()) {
                    ++checked;
                    if (v != 0.0) ++nonzero;
                }
        }
    }
    train_student<double>(cfg, teacher, ds, fold.train);
    const bool unchanged = teacher.checkpoint(cfg).serialize() == before;

    cfg.set("alpha", "0");
    const auto with_kd = train_student<double>(cfg, teacher, ds, fold.train).checkpoint(cfg).payload;
    cfg.set("kd", "off");
    const auto without = train_student<double>(cfg, teacher, ds, fold.train).checkpoint(cfg).payload;
    const bool alpha_zero = with_kd == without;

    Result r;
    r.pass = zero_bad == 0 && pos_bad == 0 && nonzero == 0 && checked > 0 && unchanged && alpha_zero;
    r.detail = "200 instances: nonzero at equality " + std::to_string(zero_bad) + ", non-positive otherwise " +
               std::to_string(pos_bad) + "; teacher gradient entries nonzero " + std::to_string(nonzero) + " of " +
               std::to_string(checked) + "; teacher unchanged by distillation " + (unchanged ? "yes" : "no") +
               "; alpha=0 equals kd=off bit for bit " + (alpha_zero ? "yes" : "no");
    return r;
}

// ---------------------------------------------------------------------------
// 9. Complexity

Result criterion9() {
    struct Mini {
        const char* name;
        const char* text;
        std::uint64_t params, macs;
    };
    // affine: 4*2 + 2 params, 4*2 MACs.
    // conv: 3*3*3*4 + 4 params, 2*2 * 3*3*3*4 MACs.
    // transformer block (4 tokens, width 8, MLP 16): norms 2*(2*8), qkv 8*24+24, proj 8*8+8, MLP 8*16+16 + 16*8+8
    //   = 600 params; MACs 2*4*8 + 4*8*24 + 2*4*4*8 + 4*8*8 + 4*8*16 + 4*16*8 = 2368.
    const std::vector<Mini> minis{
        {"affine", "affine in=4 out=2\n", 10, 8},
        {"conv", "conv in=3 out=4 kernel=3 out_h=2 out_w=2\n", 112, 432},
        {"block",
         "norm positions=4 channels=8\naffine in=8 out=24 positions=4\nattention queries=4 keys=4 dim=8\n"
         "affine in=8 out=8 positions=4\nnorm positions=4 channels=8\naffine in=8 out=16 positions=4\n"
         "affine in=16 out=8 positions=4\n",
         600, 2368},
    };
    Result r;
    std::ostringstream os;
    for (const auto& m : minis) {
        const auto c = count_params_macs(parse_model_description(m.text));
        const bool ok = c.params == m.params && c.macs == m.macs;
        r.pass = r.pass && ok;
        os << m.name << " " << c.params << "/" << c.macs << (ok ? " ok" : " expected " + std::to_string(m.params) + "/" + std::to_string(m.macs))
           << "; ";
    }
    Config cfg;
    const auto mc = model_config(cfg);
    const auto t = count_params_macs(describe_teacher(mc.mae, mc.head, mc.backbone, cfg.real("mask_ratio")));
    const auto s = count_params_macs(describe_student(mc.mae, mc.head, mc.align_pool));
    TeacherModel<float> tm(mc, true, 1);
    StudentModel<float> sm(mc, 1);
    const bool match = t.params == tm.params().count() && s.params == sm.params().count();
    const bool less = s.params < t.params && s.macs < t.macs;
    r.pass = r.pass && match && less;
    os << "default config teacher " << t.params << " params " << t.macs << " MACs, student " << s.params << " params " << s.macs
       << " MACs (student < teacher " << (less ? "yes" : "no") << ", counts match built models " << (match ? "yes" : "no") << ")";
    r.detail = os.str();
    return r;
}

// ---------------------------------------------------------------------------
// 10. Reproducibility

Result criterion10() {
    const auto cfg = tiny_config();
    const auto ds = gen_synthetic_dataset(cfg.count("n_samples"), cfg.count("n_subjects"), cfg.seed(), cfg.count("n_au"));
    const auto fold = kfold_split(ds, 3, cfg.seed())[0];
    auto run = [&] {
        auto t = train_teacher<double>(cfg, ds, fold.train, true);
        auto s = train_student<double>(cfg, t, ds, fold.train);
        AnyModel<double> m{"student", std::nullopt, s};
        auto reps = robustness_sweep(m, ds, fold.test, eval_settings(cfg), {0.0, 0.5});
        return std::tuple{t.checkpoint(cfg).serialize(), s.checkpoint(cfg).serialize(), reports_csv(reps)};
    };
    const auto [t1, s1, r1] = run();
    const auto [t2, s2, r2] = run();
    const bool same = t1 == t2 && s1 == s2 && r1 == r2;

    const auto parsed = Checkpoint::parse(s1);
    const bool round_trip = parsed.serialize() == s1;
    auto live = AnyModel<double>::load(parsed);
    auto again = AnyModel<double>::load(Checkpoint::parse(parsed.serialize()));
    const auto es = eval_settings(cfg);
    const bool same_predictions = predict(live, ds, fold.test, es) == predict(again, ds, fold.test, es);

    Result r;
    r.pass = same && round_trip && same_predictions;
    r.detail = std::string("two runs byte-identical (teacher, student checkpoints, reports) ") + (same ? "yes" : "no") +
               "; checkpoint round trip bit-exact " + (round_trip ? "yes" : "no") + "; reloaded predictions identical " +
               (same_predictions ? "yes" : "no");
    return r;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Result()>>> criteria{
        {"gradient suite", criterion1},        {"formula oracles", criterion2},   {"masking invariants", criterion3},
        {"graph invariants", criterion4},      {"convergence", criterion5},       {"end-to-end masking", criterion6},
        {"robustness sweep", criterion7},      {"distillation contracts", criterion8}, {"complexity", criterion9},
        {"reproducibility", criterion10},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
    bool all_pass = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        Result r;
        try {
            r = criteria[i].second();
        } catch (const std::exception& e) {
            r = {false, std::string("exception: ") + e.what()};
        }
        all_pass = all_pass && r.pass;
        std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << r.detail << std::endl;
    }
    return all_pass ? 0 : 1;
}
