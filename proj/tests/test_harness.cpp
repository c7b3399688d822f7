#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "occlu/occlu.hpp"
#include "test_util.hpp"

using namespace occlu;
using namespace occlu::harness;
namespace fs = std::filesystem;

namespace {

Config tiny_config() {
    Config c;
    for (const char* kv : {"precision=f64", "n_samples=36", "n_subjects=3", "enc_dim=16", "enc_depth=2", "enc_heads=2",
                           "dec_dim=8", "dec_depth=1", "dec_heads=2", "channels=8", "batch_size=6", "mae_warmup_epochs=1",
                           "epochs_stage1=1", "epochs_stage2=1", "epochs_student=1", "lr_stage1=1e-3", "lr_stage2=1e-3",
                           "lr_student=1e-3"})
        c.set_assignment(kv);
    return c;
}

const Dataset& tiny_dataset() {
    static const Dataset ds = gen_synthetic_dataset(36, 3, 7, 6);
    return ds;
}

double pearson(const std::vector<std::vector<int>>& y, std::size_t a, std::size_t b) {
    double ma = 0, mb = 0;
    for (const auto& r : y) {
        ma += r[a];
        mb += r[b];
    }
    ma /= static_cast<double>(y.size());
    mb /= static_cast<double>(y.size());
    double cov = 0, va = 0, vb = 0;
    for (const auto& r : y) {
        cov += (r[a] - ma) * (r[b] - mb);
        va += (r[a] - ma) * (r[a] - ma);
        vb += (r[b] - mb) * (r[b] - mb);
    }
    return cov / std::sqrt(va * vb);
}

fs::path scratch_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("occlu_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(Config, TrainingDefaults) {
    Config c;
    EXPECT_EQ(c.real("lambda"), 0.01);
    EXPECT_EQ(c.real("alpha"), 1.0);
    EXPECT_EQ(c.real("beta"), 0.1);
    EXPECT_EQ(c.real("temperature"), 2.0);
    EXPECT_EQ(c.count("top_k"), 4u);
    EXPECT_EQ(c.real("beta1"), 0.9);
    EXPECT_EQ(c.real("beta2"), 0.999);
    EXPECT_EQ(c.real("weight_decay"), 5e-4);
    EXPECT_EQ(c.real("lr_mae_factor"), 0.01);
    EXPECT_EQ(c.real("lr_mae_factor_student"), 0.01);
    EXPECT_EQ(c.count("epochs_stage1"), 30u);
    EXPECT_EQ(c.count("epochs_stage2"), 20u);
    EXPECT_EQ(c.count("epochs_student"), 10u);
    EXPECT_EQ(c.real("lr_stage1"), 1e-4);
    EXPECT_EQ(c.real("lr_stage2"), 1e-6);
    EXPECT_EQ(c.real("lr_student"), 1e-5);
}

TEST(Config, ParsingAndErrors) {
    Config c;
    c.load_text("# comment\n\nmask_ratio = 0.3\nsweep_ratios = 0.3, 0.5,0.7\n seed = 18446744073709551615\n");
    EXPECT_EQ(c.real("mask_ratio"), 0.3);
    EXPECT_EQ(c.reals("sweep_ratios"), (std::vector<double>{0.3, 0.5, 0.7}));
    EXPECT_EQ(c.seed(), 18446744073709551615ull);
    EXPECT_THROW(c.set("no_such_key", "1"), std::invalid_argument);
    EXPECT_THROW(c.set("mask_kind", "oval"), std::invalid_argument);
    EXPECT_THROW(c.set("batch_size", "many"), std::invalid_argument);
    EXPECT_THROW(c.set_assignment("batch_size"), std::invalid_argument);
    EXPECT_THROW(c.load_text("mask_ratio 0.3"), std::invalid_argument);
    Config d;
    d.load_text(c.dump());
    EXPECT_EQ(d.values(), c.values());
}

// ---------------------------------------------------------------------------
// Data

TEST(Dataset, DeterministicAndShaped) {
    auto a = gen_synthetic_dataset(30, 3, 5, 6);
    auto b = gen_synthetic_dataset(30, 3, 5, 6);
    ASSERT_EQ(a.samples.size(), 30u);
    EXPECT_EQ(a.subjects().size(), 3u);
    for (std::size_t i = 0; i < 30; ++i) {
        EXPECT_EQ(a.samples[i].pixels, b.samples[i].pixels);
        EXPECT_EQ(a.samples[i].labels, b.samples[i].labels);
        EXPECT_EQ(a.samples[i].pixels.size(), 64u * 64u * 3u);
    }
    auto c = gen_synthetic_dataset(30, 3, 6, 6);
    EXPECT_NE(a.samples[0].pixels, c.samples[0].pixels);
}

TEST(Dataset, RatesAndCorrelations) {
    auto ds = gen_synthetic_dataset(1500, 9, 7, 6);
    std::vector<std::size_t> all(ds.samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto y = ds.labels(all);
    for (double r : augraph::occurrence_rates(y, 6)) {
        EXPECT_GE(r, 0.2);
        EXPECT_LE(r, 0.8);
    }
    for (const auto& p : kCorrelatedPairs) EXPECT_GT(pearson(y, p[0], p[1]), 0.2);
}

TEST(Dataset, SaveLoadRoundTrip) {
    auto dir = scratch_dir("dataset");
    const auto& ds = tiny_dataset();
    save_dataset(ds, dir.string());
    auto back = load_dataset(dir.string());
    ASSERT_EQ(back.samples.size(), ds.samples.size());
    EXPECT_EQ(back.n_au, ds.n_au);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        EXPECT_EQ(back.samples[i].pixels, ds.samples[i].pixels);
        EXPECT_EQ(back.samples[i].labels, ds.samples[i].labels);
        EXPECT_EQ(back.samples[i].subject, ds.samples[i].subject);
    }
    EXPECT_THROW(load_dataset((dir / "missing").string()), std::exception);
    fs::remove_all(dir);
}

TEST(KFold, NineSubjectsThreeFolds) {
    auto ds = gen_synthetic_dataset(90, 9, 3, 6);
    auto folds = kfold_split(ds, 3, 11);
    ASSERT_EQ(folds.size(), 3u);
    std::set<std::string> seen;
    std::size_t tested = 0;
    for (const auto& f : folds) {
        EXPECT_EQ(f.test_subjects.size(), 3u);
        for (const auto& s : f.test_subjects) EXPECT_TRUE(seen.insert(s).second);
        EXPECT_EQ(f.train.size() + f.test.size(), 90u);
        std::set<std::string> train_subjects;
        for (auto i : f.train) train_subjects.insert(ds.samples[i].subject);
        for (const auto& s : f.test_subjects) EXPECT_FALSE(train_subjects.count(s));
        tested += f.test.size();
    }
    EXPECT_EQ(tested, 90u);
    EXPECT_THROW(kfold_split(ds, 10, 1), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Metrics and reports

TEST(F1, Examples) {
    std::vector<std::vector<double>> probs{{0.9}, {0.8}, {0.7}, {0.1}, {0.2}};
    std::vector<std::vector<int>> labels{{1}, {1}, {0}, {1}, {0}};
    auto r = f1_scores(probs, labels);
    EXPECT_EQ(r.tp[0], 2u);
    EXPECT_EQ(r.fp[0], 1u);
    EXPECT_EQ(r.fn[0], 1u);
    EXPECT_NEAR(r.f1[0], 2.0 / 3.0, 1e-15);
    auto perfect = f1_scores({{0.9, 0.1}, {0.1, 0.9}}, {{1, 0}, {0, 1}});
    EXPECT_EQ(perfect.average, 1.0);
    auto none = f1_scores({{0.1}, {0.1}}, {{1}, {0}});
    EXPECT_EQ(none.f1[0], 0.0);
    EXPECT_THROW(f1_scores(probs, labels, 1.0), std::invalid_argument);
}

TEST(Report, CsvRoundTrip) {
    MetricsReport a;
    a.model = "student";
    a.mask_kind = "random";
    a.ratio = 0.5;
    a.fold = 2;
    a.f1 = {0.5, 0.25, 0.75};
    a.average = 0.5;
    auto back = parse_reports_csv(reports_csv({a, a}));
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].model, "student");
    EXPECT_EQ(back[0].mask_kind, "random");
    EXPECT_EQ(back[0].ratio, 0.5);
    EXPECT_EQ(back[0].fold, 2u);
    EXPECT_EQ(back[0].f1, a.f1);
    EXPECT_EQ(back[0].average, 0.5);
    EXPECT_NE(reports_table({a}).find("50.00"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripBitExact) {
    Rng rng(1);
    ParamSet<double> ps;
    ps.add("a", testutil::random_tensor({3, 4}, rng), "g");
    ps.add("b", testutil::random_tensor({5}, rng), "g");
    Checkpoint c;
    c.meta["model"] = "test";
    c.meta["note"] = "two words";
    c.add(ps);
    auto bytes = c.serialize();
    auto back = Checkpoint::parse(bytes);
    EXPECT_EQ(back.serialize(), bytes);
    EXPECT_EQ(back.meta_value("note"), "two words");

    ParamSet<double> fresh;
    fresh.add("a", Tensor<double>::zeros({3, 4}, true), "g");
    fresh.add("b", Tensor<double>::zeros({5}, true), "g");
    back.load_into(fresh);
    EXPECT_EQ(fresh.entries()[0].tensor.values(), ps.entries()[0].tensor.values());
    EXPECT_EQ(fresh.entries()[1].tensor.values(), ps.entries()[1].tensor.values());

    ParamSet<double> wrong;
    wrong.add("a", Tensor<double>::zeros({4, 3}, true), "g");
    EXPECT_THROW(back.load_into(wrong), std::invalid_argument);
    EXPECT_THROW(Checkpoint::parse("garbage\n"), std::runtime_error);
    EXPECT_THROW(Checkpoint::parse(bytes.substr(0, bytes.size() - 1)), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Complexity

TEST(Complexity, MiniConfigs) {
    auto single = count_params_macs(parse_model_description("affine in=4 out=2\n"));
    EXPECT_EQ(single.params, 10u);
    EXPECT_EQ(single.macs, 8u);

    auto conv = count_params_macs(parse_model_description("conv in=3 out=4 kernel=3 out_h=2 out_w=2  # 3x3 conv\n"));
    EXPECT_EQ(conv.params, 112u);
    EXPECT_EQ(conv.macs, 432u);

    auto block = count_params_macs(parse_model_description(
        "norm positions=4 channels=8\n"
        "affine in=8 out=24 positions=4\n"
        "attention queries=4 keys=4 dim=8\n"
        "affine in=8 out=8 positions=4\n"
        "norm positions=4 channels=8\n"
        "affine in=8 out=16 positions=4\n"
        "affine in=16 out=8 positions=4\n"));
    EXPECT_EQ(block.params, 600u);
    EXPECT_EQ(block.macs, 2368u);

    EXPECT_THROW(parse_model_description("affine in=4\n"), std::invalid_argument);
    EXPECT_THROW(parse_model_description("pool size=2\n"), std::invalid_argument);
}

TEST(Complexity, DescriptionsMatchParameterSets) {
    Config cfg;
    const auto mc = model_config(cfg);
    TeacherModel<float> teacher(mc, true, 1), baseline(mc, false, 1);
    StudentModel<float> student(mc, 1);
    const auto t = count_params_macs(describe_teacher(mc.mae, mc.head, mc.backbone, 0.5));
    const auto b = count_params_macs(describe_baseline(mc.mae, mc.head, mc.backbone));
    const auto s = count_params_macs(describe_student(mc.mae, mc.head, mc.align_pool));
    EXPECT_EQ(t.params, teacher.params().count());
    EXPECT_EQ(b.params, baseline.params().count());
    EXPECT_EQ(s.params, student.params().count());
    EXPECT_LT(s.params, t.params);
    EXPECT_LT(s.macs, t.macs);
}

// ---------------------------------------------------------------------------
// Training pipeline

TEST(Pipeline, BatchesMaskDeterministically) {
    const auto& ds = tiny_dataset();
    MaskSettings ms{occlusion::MaskKind::random, 0.5, {0.5, 0.5, 0.5}};
    auto a = make_batch<double>(ds, {0, 1, 2}, ms, 9, std::size_t{0}, true, 8);
    auto b = make_batch<double>(ds, {0, 1, 2}, ms, 9, std::size_t{0}, true, 8);
    EXPECT_EQ(a.masked.values(), b.masked.values());
    auto c = make_batch<double>(ds, {0, 1, 2}, ms, 9, std::size_t{1}, true, 8);
    EXPECT_NE(a.specs[0].masked, c.specs[0].masked);
    for (const auto& s : a.specs) EXPECT_EQ(s.masked.size(), 32u);
}

TEST(Pipeline, TrainingIsReproducible) {
    const auto cfg = tiny_config();
    const auto& ds = tiny_dataset();
    auto fold = kfold_split(ds, 3, cfg.seed())[0];
    auto t1 = train_teacher<double>(cfg, ds, fold.train, true);
    auto t2 = train_teacher<double>(cfg, ds, fold.train, true);
    EXPECT_EQ(t1.checkpoint(cfg).serialize(), t2.checkpoint(cfg).serialize());
    auto s1 = train_student<double>(cfg, t1, ds, fold.train);
    auto s2 = train_student<double>(cfg, t2, ds, fold.train);
    EXPECT_EQ(s1.checkpoint(cfg).serialize(), s2.checkpoint(cfg).serialize());
}

TEST(Pipeline, CheckpointReloadPredictsIdentically) {
    const auto cfg = tiny_config();
    const auto& ds = tiny_dataset();
    auto fold = kfold_split(ds, 3, cfg.seed())[0];
    auto t = train_teacher<double>(cfg, ds, fold.train, false);
    AnyModel<double> live{"baseline", t, std::nullopt};
    auto loaded = AnyModel<double>::load(Checkpoint::parse(t.checkpoint(cfg).serialize()));
    EXPECT_EQ(loaded.kind, "baseline");
    auto es = eval_settings(cfg);
    EXPECT_EQ(predict(live, ds, fold.test, es), predict(loaded, ds, fold.test, es));
}

TEST(Pipeline, TeacherFrozenDuringDistillation) {
    const auto cfg = tiny_config();
    const auto& ds = tiny_dataset();
    auto fold = kfold_split(ds, 3, cfg.seed())[0];
    auto t = train_teacher<double>(cfg, ds, fold.train, true);
    const auto before = t.checkpoint(cfg).serialize();
    train_student<double>(cfg, t, ds, fold.train);
    EXPECT_EQ(t.checkpoint(cfg).serialize(), before);
}

TEST(Pipeline, AlphaZeroMatchesNoDistillation) {
    auto cfg = tiny_config();
    const auto& ds = tiny_dataset();
    auto fold = kfold_split(ds, 3, cfg.seed())[0];
    auto t = train_teacher<double>(cfg, ds, fold.train, true);
    cfg.set("alpha", "0");
    auto with_kd = train_student<double>(cfg, t, ds, fold.train);
    cfg.set("kd", "off");
    auto without = train_student<double>(cfg, t, ds, fold.train);
    EXPECT_EQ(with_kd.checkpoint(cfg).payload, without.checkpoint(cfg).payload);
}

TEST(Pipeline, SweepGivesOneReportPerRatio) {
    const auto cfg = tiny_config();
    const auto& ds = tiny_dataset();
    auto fold = kfold_split(ds, 3, cfg.seed())[0];
    auto t = train_teacher<double>(cfg, ds, fold.train, false);
    AnyModel<double> m{"baseline", t, std::nullopt};
    auto reports = robustness_sweep(m, ds, fold.test, eval_settings(cfg), {0.3, 0.5, 0.7});
    ASSERT_EQ(reports.size(), 3u);
    EXPECT_EQ(reports[1].ratio, 0.5);
    EXPECT_EQ(reports[1].mask_kind, "random");
    EXPECT_THROW(robustness_sweep(m, ds, fold.test, eval_settings(cfg), {0.95}), std::invalid_argument);
}

TEST(Convergence, StudentOverfitsEightSamples) {
    auto cfg = tiny_config();
    cfg.set("precision", "f32");
    cfg.set("batch_size", "8");
    cfg.set("flip", "0");
    cfg.set("lr_mae_factor_student", "1");
    cfg.set("epochs_stage1", "200");
    cfg.set("epochs_stage2", "100");
    cfg.set("epochs_student", "500");
    const auto ds = gen_synthetic_dataset(8, 4, cfg.seed(), 6);
    std::vector<std::size_t> all{0, 1, 2, 3, 4, 5, 6, 7};
    auto t = train_teacher<float>(cfg, ds, all, true);
    auto s = train_student<float>(cfg, t, ds, all);
    ASSERT_EQ(s.history.size(), 500u);
    EXPECT_LT(s.history.back().l_au, 0.2 * s.history.front().l_au);
}
