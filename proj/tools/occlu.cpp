#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "occlu/occlu.hpp"

namespace fs = std::filesystem;
using namespace occlu;
using namespace occlu::harness;

namespace {

struct Options {
    std::string config_file;
    std::string seed;
    std::string out = ".";
    std::string ckpt;
    std::string data;
    std::vector<std::string> sets;
    std::vector<std::string> inputs;
    std::string model_file;
};

void add_common(CLI::App* app, Options& o) {
    app->add_option("--config", o.config_file, "config file of 'key = value' lines");
    app->add_option("--seed", o.seed, "global seed (unsigned 64-bit)");
    app->add_option("--out", o.out, "output directory");
    app->add_option("--ckpt", o.ckpt, "checkpoint file");
    app->add_option("--set", o.sets, "override a config key, key=value (repeatable)");
}

void apply_overrides(Config& cfg, const Options& o) {
    if (!o.config_file.empty()) cfg.load_file(o.config_file);
    for (const auto& s : o.sets) cfg.set_assignment(s);
    if (!o.seed.empty()) cfg.set("seed", o.seed);
}

Config make_config(const Options& o) {
    Config cfg;
    apply_overrides(cfg, o);
    return cfg;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string history_csv(const std::vector<StepLog>& h) {
    std::ostringstream out;
    out << std::setprecision(9) << "phase,epoch,step,loss,l_au,l_e,l_recons,l_kd\n";
    for (const auto& s : h)
        out << s.phase << ',' << s.epoch << ',' << s.step << ',' << s.loss << ',' << s.l_au << ',' << s.l_e << ',' << s.l_recons
            << ',' << s.l_kd << '\n';
    return out.str();
}

const Fold& select_fold(const std::vector<Fold>& folds, const Config& cfg) {
    const auto k = cfg.count("fold");
    if (k >= folds.size()) throw std::invalid_argument("fold " + std::to_string(k) + " out of range");
    return folds[k];
}

template <std::floating_point T>
TrainHooks<T> epoch_writer(const Config& cfg, const std::string& kind, const std::array<double, 3>& fill, const fs::path& dir) {
    TrainHooks<T> h;
    h.on_epoch = [=](const std::string& phase, std::size_t epoch, const ParamSet<T>& ps) {
        Checkpoint ck;
        write_meta(ck, kind, cfg, fill);
        ck.meta["phase"] = phase;
        ck.meta["epoch"] = std::to_string(epoch);
        ck.add(ps);
        ck.save((dir / (kind + "_" + phase + "_ep" + std::to_string(epoch) + ".ckpt")).string());
        std::cerr << kind << ": " << phase << " epoch " << epoch + 1 << " done\n";
    };
    return h;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Options& o) {
    const auto cfg = make_config(o);
    const auto ds = gen_synthetic_dataset(cfg.count("n_samples"), cfg.count("n_subjects"), cfg.seed(), cfg.count("n_au"),
                                          cfg.count("image_size"));
    save_dataset(ds, o.out);
    std::cout << "wrote " << ds.samples.size() << " images of " << ds.subjects().size() << " subjects to " << o.out << "\n";
    return 0;
}

int cmd_mask_gen(const Options& o) {
    const auto cfg = make_config(o);
    const auto ds = load_dataset(o.data);
    const auto kind = occlusion::parse_mask_kind(cfg.text("mask_kind"));
    const auto ps = cfg.count("patch_size");
    if (ps == 0 || ds.image_size % ps) throw std::invalid_argument("patch_size must divide the image size");
    const auto grid = ds.image_size / ps;
    fs::create_directories(o.out);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        auto spec = occlusion::gen_mask(kind, grid, grid, cfg.real("mask_ratio"), eval_mask_seed(cfg.seed(), i), ps);
        auto name = fs::path(ds.samples[i].file).stem().string() + ".mask";
        write_file(fs::path(o.out) / name, occlusion::serialize_mask(spec));
    }
    std::cout << "wrote " << ds.samples.size() << " masks to " << o.out << "\n";
    return 0;
}

template <std::floating_point T>
int cmd_train_teacher(const Options& o) {
    const auto cfg = make_config(o);
    const auto ds = load_dataset(o.data);
    const auto folds = kfold_split(ds, cfg.count("folds"), cfg.seed());
    const auto& fold = select_fold(folds, cfg);
    const bool reconstruct = cfg.text("pipeline") == "teacher";
    const std::string kind = reconstruct ? "teacher" : "baseline";
    fs::create_directories(o.out);
    auto hooks = epoch_writer<T>(cfg, kind, channel_mean(ds, fold.train), o.out);
    auto trained = train_teacher<T>(cfg, ds, fold.train, reconstruct, hooks);
    const auto path = o.ckpt.empty() ? (fs::path(o.out) / (kind + ".ckpt")) : fs::path(o.ckpt);
    trained.checkpoint(cfg).save(path.string());
    write_file(fs::path(o.out) / (kind + "_history.csv"), history_csv(trained.history));
    std::cout << "saved " << path.string() << "\n";
    return 0;
}

template <std::floating_point T>
int cmd_distill(const Options& o) {
    if (o.ckpt.empty()) throw std::invalid_argument("distill-student needs --ckpt <teacher checkpoint>");
    const auto tck = Checkpoint::load(o.ckpt);
    auto teacher = load_teacher<T>(tck);
    if (!teacher.model.reconstruct) throw std::invalid_argument("distill-student needs a teacher, not a baseline");
    auto cfg = config_from_meta(tck);
    apply_overrides(cfg, o);
    const auto ds = load_dataset(o.data);
    const auto folds = kfold_split(ds, cfg.count("folds"), cfg.seed());
    const auto& fold = select_fold(folds, cfg);
    fs::create_directories(o.out);
    auto hooks = epoch_writer<T>(cfg, "student", teacher.fill, o.out);
    auto trained = train_student<T>(cfg, teacher, ds, fold.train, hooks);
    const auto path = fs::path(o.out) / "student.ckpt";
    trained.checkpoint(cfg).save(path.string());
    write_file(fs::path(o.out) / "student_history.csv", history_csv(trained.history));
    std::cout << "saved " << path.string() << "\n";
    return 0;
}

void emit_reports(const std::vector<MetricsReport>& reports, const fs::path& dir, const std::string& stem) {
    fs::create_directories(dir);
    write_file(dir / (stem + ".csv"), reports_csv(reports));
    const auto table = reports_table(reports);
    write_file(dir / (stem + ".txt"), table);
    std::cout << table;
}

template <std::floating_point T>
int cmd_evaluate(const Options& o, bool sweep) {
    if (o.ckpt.empty()) throw std::invalid_argument("--ckpt is required");
    const auto ck = Checkpoint::load(o.ckpt);
    auto model = AnyModel<T>::load(ck);
    auto cfg = config_from_meta(ck);
    apply_overrides(cfg, o);
    const auto ds = load_dataset(o.data);
    const auto folds = kfold_split(ds, cfg.count("folds"), cfg.seed());
    const auto& fold = select_fold(folds, cfg);
    const auto es = eval_settings(cfg);
    std::vector<MetricsReport> reports;
    if (sweep)
        reports = robustness_sweep(model, ds, fold.test, es, cfg.reals("sweep_ratios"), cfg.count("fold"));
    else
        reports.push_back(evaluate(model, ds, fold.test, es, cfg.count("fold")));
    emit_reports(reports, o.out, model.kind + (sweep ? "_sweep" : "_eval"));
    return 0;
}

int cmd_report(const Options& o) {
    if (o.inputs.empty()) throw std::invalid_argument("report needs one or more CSV files");
    std::vector<MetricsReport> all;
    for (const auto& in : o.inputs) {
        auto r = parse_reports_csv(read_file(in));
        all.insert(all.end(), r.begin(), r.end());
    }
    emit_reports(all, o.out, "report");
    return 0;
}

int cmd_count(const Options& o) {
    auto print = [](const std::string& name, const Complexity& c) {
        std::cout << std::left << std::setw(10) << name << std::right << std::setw(14) << c.params << " params" << std::setw(16)
                  << c.macs << " MACs\n";
    };
    if (!o.model_file.empty()) {
        print(fs::path(o.model_file).filename().string(), count_params_macs(parse_model_description(read_file(o.model_file))));
        return 0;
    }
    const auto cfg = make_config(o);
    const auto mc = model_config(cfg);
    print("teacher", count_params_macs(describe_teacher(mc.mae, mc.head, mc.backbone, cfg.real("mask_ratio"))));
    print("baseline", count_params_macs(describe_baseline(mc.mae, mc.head, mc.backbone)));
    print("student", count_params_macs(describe_student(mc.mae, mc.head, mc.align_pool)));
    return 0;
}

template <std::floating_point T>
int dispatch(const std::string& name, const Options& o) {
    if (name == "train-teacher") return cmd_train_teacher<T>(o);
    if (name == "distill-student") return cmd_distill<T>(o);
    if (name == "evaluate") return cmd_evaluate<T>(o, false);
    return cmd_evaluate<T>(o, true);
}

/// Precision comes from a checkpoint when one is read, else from the config.
std::string precision_of(const std::string& name, const Options& o) {
    if (name != "train-teacher" && !o.ckpt.empty()) {
        auto cfg = config_from_meta(Checkpoint::load(o.ckpt));
        apply_overrides(cfg, o);
        return cfg.text("precision");
    }
    return make_config(o).text("precision");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Occlusion-robust AU detection toolkit"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("gen-data", "render the synthetic face dataset");
    auto* masks = app.add_subcommand("mask-gen", "write evaluation masks for every dataset image");
    auto* teach = app.add_subcommand("train-teacher", "train the teacher (pipeline=teacher) or clean baseline (pipeline=baseline)");
    auto* distill = app.add_subcommand("distill-student", "distill a student from a teacher checkpoint");
    auto* eval = app.add_subcommand("evaluate", "F1 on the test fold at mask_kind / mask_ratio");
    auto* sweep = app.add_subcommand("sweep", "F1 on the test fold for every ratio in sweep_ratios");
    auto* report = app.add_subcommand("report", "merge report CSV files into one table");
    auto* count = app.add_subcommand("count", "parameter and multiply-accumulate counts");

    for (auto* s : {gen, masks, teach, distill, eval, sweep, report, count}) add_common(s, o);
    for (auto* s : {masks, teach, distill, eval, sweep}) s->add_option("--data", o.data, "dataset directory")->required();
    report->add_option("inputs", o.inputs, "report CSV files")->required();
    count->add_option("model", o.model_file, "model description file (defaults to the built-in models)");

    std::ostringstream keys;
    keys << "\nConfig keys (--set key=value):\n";
    for (const auto& k : kConfigKeys) {
        keys << "  " << std::left << std::setw(18) << k.name << std::setw(16) << k.default_value << k.help;
        if (!k.choices.empty()) keys << " [" << k.choices << "]";
        keys << "\n";
    }
    app.footer(keys.str());

    CLI11_PARSE(app, argc, argv);
    try {
        if (gen->parsed()) return cmd_gen_data(o);
        if (masks->parsed()) return cmd_mask_gen(o);
        if (report->parsed()) return cmd_report(o);
        if (count->parsed()) return cmd_count(o);
        std::string name;
        for (auto* s : {teach, distill, eval, sweep})
            if (s->parsed()) name = s->get_name();
        return precision_of(name, o) == "f64" ? dispatch<double>(name, o) : dispatch<float>(name, o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
