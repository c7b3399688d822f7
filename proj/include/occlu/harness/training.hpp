#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "occlu/augraph/losses.hpp"
#include "occlu/harness/checkpoint.hpp"
#include "occlu/harness/metrics.hpp"
#include "occlu/harness/models.hpp"
#include "occlu/numerics/optim.hpp"

namespace occlu::harness {

/// Per-channel mean of the samples in `index`, in [0, 1].
inline std::array<double, 3> channel_mean(const Dataset& ds, const std::vector<std::size_t>& index) {
    std::array<double, 3> sum{0, 0, 0};
    std::size_t n = 0;
    for (auto i : index) {
        const auto& px = ds.samples.at(i).pixels;
        for (std::size_t k = 0; k < px.size(); k += 3)
            for (std::size_t c = 0; c < 3; ++c) sum[c] += px[k + c];
        n += px.size() / 3;
    }
    for (auto& v : sum) v = n ? v / (255.0 * static_cast<double>(n)) : 0.0;
    return sum;
}

struct StepLog {
    std::string phase;
    std::size_t epoch = 0;
    std::size_t step = 0;
    double loss = 0, l_au = 0, l_e = 0, l_recons = 0, l_kd = 0;
};

template <std::floating_point T>
struct TrainHooks {
    std::function<void(const std::string& phase, std::size_t epoch, const ParamSet<T>& params)> on_epoch;
    std::function<void(const StepLog&)> on_step;
};

template <std::floating_point T>
struct PhaseLosses {
    Tensor<T> total;
    double l_au = 0, l_e = 0, l_recons = 0, l_kd = 0;
};

struct PhasePlan {
    std::string name;
    std::size_t epochs = 0;
    double lr = 0;
    double mae_factor = 1;
    std::vector<std::string> exclude;  // parameter name prefixes left untouched
};

inline bool has_prefix(const std::string& s, const std::vector<std::string>& prefixes) {
    for (const auto& p : prefixes)
        if (s.compare(0, p.size(), p) == 0) return true;
    return false;
}

inline double scheduled_lr(const Config& cfg, double lr, std::size_t step, std::size_t total) {
    if (cfg.text("lr_schedule") == "constant" || total <= 1) return lr;
    return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

/// Shuffled minibatches of `train`; a trailing batch of one sample is dropped because
/// batch normalization needs two samples in training mode.
inline std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<std::size_t>& train, std::size_t batch_size,
                                                           std::uint64_t seed, const std::string& phase, std::size_t epoch) {
    std::uint64_t tag = 0;
    for (char c : phase) tag = tag * 131 + static_cast<unsigned char>(c);
    auto order = train;
    Rng(hash_seed({seed, tag, epoch})).shuffle(order);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(i),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
        if (b.size() >= 2) out.push_back(std::move(b));
    }
    return out;
}

/// Optimizes the trainable tensors of `ps` not excluded by `plan` with a fresh AdamW.
template <std::floating_point T>
std::vector<StepLog> run_phase(const PhasePlan& plan, const ParamSet<T>& ps, const Config& cfg, const Dataset& ds,
                               const std::vector<std::size_t>& train, const MaskSettings& ms,
                               const std::function<PhaseLosses<T>(const Batch<T>&)>& loss_fn, const TrainHooks<T>& hooks) {
    std::vector<Tensor<T>> params;
    std::vector<double> scales;
    for (const auto& e : ps.entries()) {
        if (!e.trainable || has_prefix(e.name, plan.exclude)) continue;
        params.push_back(e.tensor);
        scales.push_back(e.group == "mae" ? plan.mae_factor : 1.0);
    }
    AdamWOptions opts;
    opts.beta1 = cfg.real("beta1");
    opts.beta2 = cfg.real("beta2");
    opts.weight_decay = cfg.real("weight_decay");
    AdamW<T> opt(params, scales, opts);
    const std::uint64_t seed = cfg.seed();
    const std::size_t bs = cfg.count("batch_size");
    if (bs < 2) throw std::invalid_argument("batch_size must be at least 2");
    const bool flip = cfg.integer("flip") != 0;
    const std::size_t per_epoch = epoch_batches(train, bs, seed, plan.name, 0).size();
    const std::size_t total = per_epoch * plan.epochs;
    std::vector<StepLog> log;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
        for (const auto& idx : epoch_batches(train, bs, seed, plan.name, epoch)) {
            auto batch = make_batch<T>(ds, idx, ms, seed, epoch, flip, cfg.count("patch_size"));
            auto losses = loss_fn(batch);
            const double value = static_cast<double>(losses.total.item());
            if (!std::isfinite(value))
                throw std::runtime_error(plan.name + ": non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                         std::to_string(step) + " (L_AU " + std::to_string(losses.l_au) + ", L_E " +
                                         std::to_string(losses.l_e) + ", L_recons " + std::to_string(losses.l_recons) + ")");
            auto grads = grad(losses.total, params);
            opt.step(grads, scheduled_lr(cfg, plan.lr, step, total));
            StepLog s{plan.name, epoch, step, value, losses.l_au, losses.l_e, losses.l_recons, losses.l_kd};
            if (hooks.on_step) hooks.on_step(s);
            log.push_back(s);
            ++step;
        }
        if (hooks.on_epoch) hooks.on_epoch(plan.name, epoch, ps);
    }
    return log;
}

/// Recomputes batch normalization running statistics with the final weights: one pass over
/// `train` in training mode with no parameter updates.
template <std::floating_point T>
void recalibrate_norms(const Config& cfg, const Dataset& ds, const std::vector<std::size_t>& train, const MaskSettings& ms,
                       const std::function<void(const Batch<T>&)>& forward) {
    NoGradGuard ng;
    const std::uint64_t seed = hash_seed({cfg.seed(), 0x8ec1u});
    for (const auto& idx : epoch_batches(train, cfg.count("batch_size"), seed, "recalibrate", 0))
        forward(make_batch<T>(ds, idx, ms, seed, std::nullopt, false, cfg.count("patch_size")));
}

// ---------------------------------------------------------------------------
// Loss settings shared by every phase

template <std::floating_point T>
struct LossSettings {
    std::vector<double> weights;
    T margin, gamma, lambda, alpha, beta, temperature, recon_weight;
    distill::KLOrder order;

    LossSettings(const Config& cfg, const Dataset& ds, const std::vector<std::size_t>& train)
        : weights(augraph::class_weights(augraph::occurrence_rates(ds.labels(train), ds.n_au)).w),
          margin(static_cast<T>(cfg.real("margin"))),
          gamma(static_cast<T>(cfg.real("gamma"))),
          lambda(static_cast<T>(cfg.real("lambda"))),
          alpha(static_cast<T>(cfg.real("alpha"))),
          beta(static_cast<T>(cfg.real("beta"))),
          temperature(static_cast<T>(cfg.real("temperature"))),
          recon_weight(static_cast<T>(cfg.real("recon_weight"))),
          order(distill::parse_kl_order(cfg.text("kl_order"))) {}
};

inline void check_training_data(const Config& cfg, const Dataset& ds, const std::vector<std::size_t>& train) {
    if (ds.image_size != cfg.count("image_size"))
        throw std::invalid_argument("dataset image size " + std::to_string(ds.image_size) + " differs from config image_size " +
                                    cfg.text("image_size"));
    if (ds.n_au != cfg.count("n_au"))
        throw std::invalid_argument("dataset has " + std::to_string(ds.n_au) + " AUs, config n_au is " + cfg.text("n_au"));
    if (train.size() < 2) throw std::invalid_argument("training split needs at least two samples");
}

/// Checkpoint meta shared by all models: model kind, config and mask fill.
inline void write_meta(Checkpoint& c, const std::string& model, const Config& cfg, const std::array<double, 3>& fill) {
    c.meta["model"] = model;
    for (const auto& [k, v] : cfg.values()) c.meta["cfg." + k] = v;
    std::ostringstream f;
    f << std::setprecision(17) << fill[0] << ' ' << fill[1] << ' ' << fill[2];
    c.meta["fill_mean"] = f.str();
}

inline Config config_from_meta(const Checkpoint& c) {
    Config cfg;
    for (const auto& [k, v] : c.meta)
        if (k.compare(0, 4, "cfg.") == 0) cfg.set(k.substr(4), v);
    return cfg;
}

inline std::array<double, 3> fill_from_meta(const Checkpoint& c) {
    std::istringstream in(c.meta_value("fill_mean"));
    std::array<double, 3> f{};
    if (!(in >> f[0] >> f[1] >> f[2])) throw std::runtime_error("checkpoint: malformed fill_mean");
    return f;
}

// ---------------------------------------------------------------------------
// Teacher and baseline

template <std::floating_point T>
struct TrainedTeacher {
    TeacherModel<T> model;
    std::array<double, 3> fill;
    std::vector<StepLog> history;

    Checkpoint checkpoint(const Config& cfg) const {
        Checkpoint c;
        write_meta(c, model.reconstruct ? "teacher" : "baseline", cfg, fill);
        c.add(model.params());
        return c;
    }
};

inline const std::vector<std::string> kStage1Frozen = {"head.att_", "head.gated", "head.edge_fc"};
inline const std::vector<std::string> kStage2Frozen = {"head.gcn."};

/// Two-stage training. With `reconstruct` the teacher sees masked images and reconstructs
/// them; without it the baseline trains on clean images.
template <std::floating_point T>
TrainedTeacher<T> train_teacher(const Config& cfg, const Dataset& ds, const std::vector<std::size_t>& train, bool reconstruct,
                                const TrainHooks<T>& hooks = {}) {
    check_training_data(cfg, ds, train);
    const auto mc = model_config(cfg);
    TrainedTeacher<T> out{TeacherModel<T>(mc, reconstruct, cfg.seed()), channel_mean(ds, train), {}};
    auto& m = out.model;
    const LossSettings<T> ls(cfg, ds, train);
    auto ms = mask_settings(cfg, out.fill);
    if (!reconstruct) ms.ratio = 0.0;
    const auto ps = m.params();
    const double mae_factor = cfg.real("lr_mae_factor");
    auto append = [&](std::vector<StepLog> v) { out.history.insert(out.history.end(), v.begin(), v.end()); };

    if (reconstruct && cfg.count("mae_warmup_epochs") > 0) {
        PhasePlan warm{"mae_warmup", cfg.count("mae_warmup_epochs"), cfg.real("lr_mae_warmup"), 1.0, {"backbone", "head"}};
        append(run_phase<T>(warm, ps, cfg, ds, train, ms, [&](const Batch<T>& b) {
            auto rec = mae::reconstruct_batch(b.masked, b.specs, m.mae, &b.clean);
            PhaseLosses<T> l{rec.loss};
            l.l_recons = static_cast<double>(rec.loss.item());
            return l;
        }, hooks));
    }

    auto stage_loss = [&](HeadStage stage) {
        return [&, stage](const Batch<T>& b) {
            const auto& input = reconstruct ? b.masked : b.clean;
            auto o = teacher_forward(m, input, b.specs, &b.clean, stage, NormMode::train);
            auto l_au = augraph::au_loss(o.head.p, b.labels, ls.weights, ls.margin, ls.gamma);
            PhaseLosses<T> l;
            l.l_au = static_cast<double>(l_au.item());
            l.total = l_au;
            if (stage == HeadStage::two) {
                auto l_e = augraph::edge_loss(o.head.z, augraph::edge_targets(b.labels));
                l.l_e = static_cast<double>(l_e.item());
                l.total = augraph::stage2_loss(l_au, l_e, ls.lambda);
            }
            if (o.has_recon) {
                l.l_recons = static_cast<double>(o.recon_loss.item());
                l.total = add(l.total, scale(o.recon_loss, ls.recon_weight));
            }
            return l;
        };
    };

    PhasePlan s1{"stage1", cfg.count("epochs_stage1"), cfg.real("lr_stage1"), mae_factor, kStage1Frozen};
    append(run_phase<T>(s1, ps, cfg, ds, train, ms, stage_loss(HeadStage::one), hooks));
    PhasePlan s2{"stage2", cfg.count("epochs_stage2"), cfg.real("lr_stage2"), mae_factor, kStage2Frozen};
    append(run_phase<T>(s2, ps, cfg, ds, train, ms, stage_loss(HeadStage::two), hooks));
    recalibrate_norms<T>(cfg, ds, train, ms, [&](const Batch<T>& b) {
        teacher_forward(m, reconstruct ? b.masked : b.clean, b.specs, nullptr, HeadStage::two, NormMode::train);
    });
    return out;
}

template <std::floating_point T>
TrainedTeacher<T> load_teacher(const Checkpoint& c) {
    const auto& kind = c.meta_value("model");
    if (kind != "teacher" && kind != "baseline") throw std::invalid_argument("checkpoint holds a " + kind + ", not a teacher");
    const auto cfg = config_from_meta(c);
    TrainedTeacher<T> out{TeacherModel<T>(model_config(cfg), kind == "teacher", cfg.seed()), fill_from_meta(c), {}};
    auto ps = out.model.params();
    c.load_into(ps);
    return out;
}

// ---------------------------------------------------------------------------
// Student

template <std::floating_point T>
struct TrainedStudent {
    StudentModel<T> model;
    std::array<double, 3> fill;
    std::vector<StepLog> history;

    Checkpoint checkpoint(const Config& cfg) const {
        Checkpoint c;
        write_meta(c, "student", cfg, fill);
        c.add(model.params());
        return c;
    }
};

/// Distillation from a trained teacher. The student starts from the teacher's encoder and
/// head; with kd = off the teacher is never run.
template <std::floating_point T>
TrainedStudent<T> train_student(const Config& cfg, TrainedTeacher<T>& teacher, const Dataset& ds,
                                const std::vector<std::size_t>& train, const TrainHooks<T>& hooks = {}) {
    check_training_data(cfg, ds, train);
    TrainedStudent<T> out{StudentModel<T>(teacher.model.config, cfg.seed()), teacher.fill, {}};
    auto& s = out.model;
    s.warm_start(teacher.model);
    const LossSettings<T> ls(cfg, ds, train);
    const auto ms = mask_settings(cfg, out.fill);
    const bool kd = cfg.text("kd") == "on";
    PhasePlan plan{"student", cfg.count("epochs_student"), cfg.real("lr_student"), cfg.real("lr_mae_factor_student"), kStage2Frozen};
    out.history = run_phase<T>(plan, s.params(), cfg, ds, train, ms, [&](const Batch<T>& b) {
        auto o = student_forward(s, b.masked, NormMode::train);
        auto l_au = augraph::au_loss(o.p, b.labels, ls.weights, ls.margin, ls.gamma);
        auto l_e = augraph::edge_loss(o.z, augraph::edge_targets(b.labels));
        auto l_kd = Tensor<T>::scalar(T(0));
        if (kd) {
            augraph::HeadOutput<T> t;
            {
                NoGradGuard ng;
                t = teacher_forward(teacher.model, b.masked, b.specs, nullptr, HeadStage::two, NormMode::eval).head;
            }
            l_kd = distill::kd_loss(distill::kd_au_loss(o.p, t.p, ls.order), distill::kd_edge_loss(o.z, t.z, ls.temperature, ls.order),
                                    ls.beta);
        }
        PhaseLosses<T> l{distill::student_loss(l_au, l_e, l_kd, ls.lambda, ls.alpha)};
        l.l_au = static_cast<double>(l_au.item());
        l.l_e = static_cast<double>(l_e.item());
        l.l_kd = static_cast<double>(l_kd.item());
        return l;
    }, hooks);
    recalibrate_norms<T>(cfg, ds, train, ms, [&](const Batch<T>& b) { student_forward(s, b.masked, NormMode::train); });
    return out;
}

template <std::floating_point T>
TrainedStudent<T> load_student(const Checkpoint& c) {
    if (c.meta_value("model") != "student") throw std::invalid_argument("checkpoint holds a " + c.meta_value("model") + ", not a student");
    const auto cfg = config_from_meta(c);
    TrainedStudent<T> out{StudentModel<T>(model_config(cfg), cfg.seed()), fill_from_meta(c), {}};
    auto ps = out.model.params();
    c.load_into(ps);
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

/// A trained model of any kind, as loaded from a checkpoint.
template <std::floating_point T>
struct AnyModel {
    std::string kind;
    std::optional<TrainedTeacher<T>> teacher;
    std::optional<TrainedStudent<T>> student;

    static AnyModel load(const Checkpoint& c) {
        AnyModel m;
        m.kind = c.meta_value("model");
        if (m.kind == "student")
            m.student = load_student<T>(c);
        else
            m.teacher = load_teacher<T>(c);
        return m;
    }

    const std::array<double, 3>& fill() const { return student ? student->fill : teacher->fill; }
};

struct EvalSettings {
    occlusion::MaskKind kind = occlusion::MaskKind::random;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    std::size_t batch_size = 16;
    double threshold = 0.5;
    std::string fill = "mean";
};

inline EvalSettings eval_settings(const Config& cfg) {
    EvalSettings e;
    e.kind = occlusion::parse_mask_kind(cfg.text("mask_kind"));
    e.ratio = cfg.real("mask_ratio");
    e.seed = cfg.seed();
    e.batch_size = std::max<std::size_t>(1, cfg.count("batch_size"));
    e.threshold = cfg.real("threshold");
    e.fill = cfg.text("fill");
    return e;
}

/// AU probabilities for `index` under masks reseeded from (seed, sample index). The
/// student receives only the occluded pixels.
template <std::floating_point T>
std::vector<std::vector<double>> predict(AnyModel<T>& m, const Dataset& ds, const std::vector<std::size_t>& index,
                                         const EvalSettings& es) {
    if (!(es.ratio >= 0.0 && es.ratio <= 0.9)) throw std::invalid_argument("evaluation ratio must lie in [0, 0.9]");
    NoGradGuard ng;
    MaskSettings ms{es.kind, es.ratio, {0, 0, 0}};
    if (es.fill == "mean") ms.fill = m.fill();
    const std::size_t ps = m.student ? m.student->model.config.mae.patch_size : m.teacher->model.config.mae.patch_size;
    std::vector<std::vector<double>> out;
    for (std::size_t i = 0; i < index.size(); i += es.batch_size) {
        std::vector<std::size_t> idx(index.begin() + static_cast<std::ptrdiff_t>(i),
                                     index.begin() + static_cast<std::ptrdiff_t>(std::min(index.size(), i + es.batch_size)));
        auto b = make_batch<T>(ds, idx, ms, es.seed, std::nullopt, false, ps);
        Tensor<T> p;
        if (m.student)
            p = student_forward(m.student->model, b.masked, NormMode::eval).p;
        else
            p = teacher_forward(m.teacher->model, b.masked, b.specs, nullptr, HeadStage::two, NormMode::eval).head.p;
        const std::size_t n = p.dim(1);
        for (std::size_t r = 0; r < idx.size(); ++r)
            out.emplace_back(p.data().begin() + static_cast<std::ptrdiff_t>(r * n),
                             p.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
    }
    return out;
}

template <std::floating_point T>
MetricsReport evaluate(AnyModel<T>& m, const Dataset& ds, const std::vector<std::size_t>& index, const EvalSettings& es,
                       std::size_t fold = 0) {
    auto r = f1_scores(predict(m, ds, index, es), ds.labels(index), es.threshold);
    r.model = m.kind;
    r.mask_kind = es.ratio > 0.0 ? occlusion::to_string(es.kind) : "none";
    r.ratio = es.ratio;
    r.fold = fold;
    return r;
}

template <std::floating_point T>
std::vector<MetricsReport> robustness_sweep(AnyModel<T>& m, const Dataset& ds, const std::vector<std::size_t>& index,
                                            EvalSettings es, const std::vector<double>& ratios, std::size_t fold = 0) {
    std::vector<MetricsReport> out;
    for (double r : ratios) {
        if (!(r >= 0.0 && r <= 0.9)) throw std::invalid_argument("sweep ratio " + std::to_string(r) + " outside [0, 0.9]");
        es.ratio = r;
        out.push_back(evaluate(m, ds, index, es, fold));
    }
    return out;
}

}  // namespace occlu::harness
