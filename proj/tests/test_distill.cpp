#include <gtest/gtest.h>

#include <cmath>

#include "occlu/distill/distill.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace occlu;
using namespace occlu::distill;

namespace {

Tensor<double> scalar(double v) { return Tensor<double>({1}, {v}); }

}  // namespace

TEST(KDConfig, Defaults) {
    KDConfig c;
    EXPECT_EQ(c.temperature, 2.0);
    EXPECT_EQ(c.alpha, 1.0);
    EXPECT_EQ(c.beta, 0.1);
    EXPECT_EQ(c.order, KLOrder::student_teacher);
    c.temperature = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_EQ(parse_kl_order("teacher_student"), KLOrder::teacher_student);
    EXPECT_THROW(parse_kl_order("forward"), std::invalid_argument);
}

TEST(KDAULoss, Examples) {
    EXPECT_NEAR(kd_au_loss(scalar(0.5), scalar(0.25)).item(), 0.14384103622589045, 1e-12);
    Tensor<double> p({2, 3}, {0.1, 0.5, 0.9, 0.0, 1.0, 0.3});
    EXPECT_EQ(kd_au_loss(p, p).item(), 0.0);
    EXPECT_THROW(kd_au_loss(scalar(1.5), scalar(0.5)), std::invalid_argument);
    EXPECT_THROW(kd_au_loss(scalar(0.5), Tensor<double>({2}, {0.5, 0.5})), std::invalid_argument);
}

TEST(KDAULoss, MatchesOracle) {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t rows = 1 + trial % 4, n = 1 + trial % 8;
        auto ps = testutil::random_tensor({rows, n}, rng, 0, 1, false);
        auto pt = testutil::random_tensor({rows, n}, rng, 0, 1, false);
        const double st = kd_au_loss(ps, pt).item(), ts = kd_au_loss(ps, pt, KLOrder::teacher_student).item();
        EXPECT_NEAR(st, oracle::kd_au_loss(ps.values(), pt.values(), true), 1e-9);
        EXPECT_NEAR(ts, oracle::kd_au_loss(ps.values(), pt.values(), false), 1e-9);
        EXPECT_GT(st, 0.0);
    }
}

TEST(KDEdgeLoss, SingleEdge) {
    Tensor<double> zs({1, 1, 4}, {1, 0, 0, 0}), zt({1, 1, 4}, {0, 1, 0, 0});
    // 4 * KL(softmax(zs/2) || softmax(zt/2)) with e = exp(0.5).
    const double e = std::exp(0.5), a = e / (e + 3.0), b = 1.0 / (e + 3.0);
    const double expect = 4.0 * (a * std::log(a / b) + b * std::log(b / a));
    EXPECT_NEAR(kd_edge_loss(zs, zt, 2.0).item(), expect, 1e-12);
    EXPECT_EQ(kd_edge_loss(zs, zs, 2.0).item(), 0.0);
    EXPECT_THROW(kd_edge_loss(zs, zt, 0.0), std::invalid_argument);
}

TEST(KDEdgeLoss, DecreasesWithTemperature) {
    Tensor<double> zs({1, 1, 4}, {1, 0, 0, 0}), zt({1, 1, 4}, {0, 1, 0, 0});
    double prev = kd_edge_loss(zs, zt, 1.0).item();
    for (double t : {2.0, 4.0, 8.0}) {
        const double cur = kd_edge_loss(zs, zt, t).item();
        EXPECT_LT(cur, prev);
        prev = cur;
    }
}

TEST(KDEdgeLoss, MatchesOracle) {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + trial % 5;
        auto zs = testutil::random_tensor({2, n, n, 4}, rng, -4, 4, false);
        auto zt = testutil::random_tensor({2, n, n, 4}, rng, -4, 4, false);
        const double temp = rng.uniform(0.5, 4.0);
        EXPECT_NEAR(kd_edge_loss(zs, zt, temp).item(), oracle::kd_edge_loss(zs.values(), zt.values(), temp, true), 1e-9);
        EXPECT_NEAR(kd_edge_loss(zs, zt, temp, KLOrder::teacher_student).item(),
                    oracle::kd_edge_loss(zs.values(), zt.values(), temp, false), 1e-9);
    }
}

TEST(KDLosses, NoGradientToTeacher) {
    Rng rng(3);
    auto ps = testutil::random_tensor({2, 3}, rng, 0.05, 0.95);
    auto pt = testutil::random_tensor({2, 3}, rng, 0.05, 0.95);
    auto zs = testutil::random_tensor({2, 3, 3, 4}, rng);
    auto zt = testutil::random_tensor({2, 3, 3, 4}, rng);
    auto l = kd_loss(kd_au_loss(ps, pt), kd_edge_loss(zs, zt, 2.0), 0.1);
    auto g = grad(l, std::vector<Tensor<double>>{ps, pt, zs, zt});
    for (double v : g[1].data()) EXPECT_EQ(v, 0.0);
    for (double v : g[3].data()) EXPECT_EQ(v, 0.0);
    double n = 0.0;
    for (double v : g[0].data()) n += std::abs(v);
    EXPECT_GT(n, 0.0);
}

TEST(KDLosses, StudentGradients) {
    Rng rng(4);
    auto pt = testutil::random_tensor({2, 3}, rng, 0.05, 0.95, false);
    auto zt = testutil::random_tensor({3, 3, 4}, rng, -1, 1, false);
    EXPECT_LT(testutil::grad_check([&](const Tensor<double>& ps) { return kd_au_loss(ps, pt); },
                                   testutil::random_tensor({2, 3}, rng, 0.05, 0.95)),
              1e-4);
    EXPECT_LT(testutil::grad_check([&](const Tensor<double>& zs) { return kd_edge_loss(zs, zt, 2.0); },
                                   testutil::random_tensor({3, 3, 4}, rng)),
              1e-4);
}

TEST(CombinedLosses, Arithmetic) {
    auto one = scalar(1.0);
    auto kd = kd_loss(one, one, 1.0);
    EXPECT_EQ(kd.item(), 2.0);
    EXPECT_EQ(student_loss(one, one, kd, 1.0, 1.0).item(), 4.0);
    EXPECT_NEAR(student_loss(one, scalar(2.0), scalar(5.0), 0.01, 0.0).item(), 1.02, 1e-15);
    EXPECT_THROW(kd_loss(one, one, -0.1), std::invalid_argument);
    EXPECT_THROW(student_loss(one, one, one, 0.01, -1.0), std::invalid_argument);
}

TEST(Alignment, ShapeAndPooling) {
    Rng rng(5);
    AlignmentParams<double> a(6, 4, 2, rng);
    auto tokens = testutil::random_tensor({3, 16, 6}, rng, -1, 1, false);
    EXPECT_EQ(align_features(tokens, a, NormMode::train).shape(), (Shape{3, 2, 2, 4}));
    AlignmentParams<double> b(6, 4, 1, rng);
    EXPECT_EQ(align_features(tokens, b, NormMode::train).shape(), (Shape{3, 4, 4, 4}));
    EXPECT_THROW(align_features(testutil::random_tensor({1, 15, 6}, rng), b, NormMode::eval), std::invalid_argument);
    EXPECT_THROW(AlignmentParams<double>(6, 4, 0, rng), std::invalid_argument);
}

TEST(Alignment, ZeroWeightsAndConstantGrid) {
    Rng rng(6);
    AlignmentParams<double> a(6, 4, 2, rng);
    auto tokens = testutil::random_tensor({1, 16, 6}, rng, -1, 1, false);
    AlignmentParams<double> zero = a;
    zero.fc1 = Linear<double>::zeros(6, 8);
    zero.fc2 = Linear<double>::zeros(8, 4);
    auto z = align_features(tokens, zero, NormMode::eval);
    for (double v : z.data()) EXPECT_EQ(v, 0.0);

    std::vector<double> row{0.3, -0.2, 0.9, 0.1, -0.7, 0.4}, grid;
    for (int i = 0; i < 16; ++i) grid.insert(grid.end(), row.begin(), row.end());
    auto out = align_features(Tensor<double>({1, 16, 6}, grid), a, NormMode::eval);
    for (std::size_t p = 1; p < 4; ++p)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.data()[p * 4 + c], out.data()[c], 1e-12);
    oracle::Affine f1(a.fc1), f2(a.fc2);
    auto h = f1(row.data());
    for (auto& v : h) v = oracle::relu(v);
    auto y = f2(h.data());
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.data()[c], oracle::relu(y[c] / std::sqrt(1.0 + 1e-5)), 1e-12);
}
