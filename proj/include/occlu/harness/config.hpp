#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace occlu::harness {

enum class KeyType { integer, real, text, real_list };

struct KeyInfo {
    std::string_view name;
    KeyType type;
    std::string_view default_value;
    std::string_view choices;  // comma separated, text keys only
    std::string_view help;
};

// clang-format off
inline constexpr KeyInfo kConfigKeys[] = {
    {"seed",              KeyType::integer,   "7",               "", "global seed"},
    {"precision",         KeyType::text,      "f32",             "f32,f64", "floating-point width for training"},
    {"pipeline",          KeyType::text,      "teacher",         "teacher,baseline", "train-teacher: reconstruction teacher or clean-image baseline"},
    // data
    {"n_samples",         KeyType::integer,   "1500",            "", "synthetic samples"},
    {"n_subjects",        KeyType::integer,   "9",               "", "synthetic subjects"},
    {"n_au",              KeyType::integer,   "6",               "", "AU count (4..6)"},
    {"folds",             KeyType::integer,   "3",               "", "cross-validation folds"},
    {"fold",              KeyType::integer,   "0",               "", "fold used by train/evaluate commands"},
    {"flip",              KeyType::integer,   "1",               "", "horizontal flip augmentation (0/1)"},
    // masks
    {"mask_kind",         KeyType::text,      "random",          "random,block", "occlusion family"},
    {"mask_ratio",        KeyType::real,      "0.5",             "", "occlusion ratio"},
    {"fill",              KeyType::text,      "mean",            "mean,zero", "occluded pixel value"},
    {"sweep_ratios",      KeyType::real_list, "0,0.3,0.5,0.7",   "", "ratios for the sweep command"},
    // MAE
    {"image_size",        KeyType::integer,   "64",              "", "square image side"},
    {"patch_size",        KeyType::integer,   "8",               "", "patch side"},
    {"enc_dim",           KeyType::integer,   "64",              "", "encoder width"},
    {"enc_depth",         KeyType::integer,   "4",               "", "encoder blocks"},
    {"enc_heads",         KeyType::integer,   "4",               "", "encoder heads"},
    {"dec_dim",           KeyType::integer,   "32",              "", "decoder width"},
    {"dec_depth",         KeyType::integer,   "2",               "", "decoder blocks"},
    {"dec_heads",         KeyType::integer,   "4",               "", "decoder heads"},
    {"mlp_ratio",         KeyType::integer,   "2",               "", "transformer MLP expansion"},
    // head
    {"channels",          KeyType::integer,   "32",              "", "feature channels C"},
    {"top_k",             KeyType::integer,   "4",               "", "out-degree K of the node graph"},
    {"gated_layers",      KeyType::integer,   "2",               "", "gated GCN layers"},
    {"align_pool",        KeyType::integer,   "1",               "", "student token-grid pooling factor"},
    // losses
    {"margin",            KeyType::real,      "0.05",            "", "probability shift m"},
    {"gamma",             KeyType::real,      "2",               "", "negative focusing exponent"},
    {"lambda",            KeyType::real,      "0.01",            "", "edge loss weight"},
    {"alpha",             KeyType::real,      "1",               "", "distillation weight"},
    {"beta",              KeyType::real,      "0.1",             "", "edge distillation weight"},
    {"temperature",       KeyType::real,      "2",               "", "edge distillation temperature"},
    {"kl_order",          KeyType::text,      "student_teacher", "student_teacher,teacher_student", "KL argument order"},
    {"kd",                KeyType::text,      "on",              "on,off", "compute teacher targets during student training"},
    {"recon_weight",      KeyType::real,      "1",               "", "reconstruction loss weight in teacher stages"},
    // optimization
    {"batch_size",        KeyType::integer,   "16",              "", "mini-batch size"},
    {"beta1",             KeyType::real,      "0.9",             "", "AdamW first moment decay"},
    {"beta2",             KeyType::real,      "0.999",           "", "AdamW second moment decay"},
    {"weight_decay",      KeyType::real,      "5e-4",            "", "AdamW decoupled weight decay"},
    {"lr_mae_factor",     KeyType::real,      "0.01",            "", "MAE learning-rate multiplier in teacher stages"},
    {"lr_mae_factor_student", KeyType::real,  "0.01",            "", "encoder learning-rate multiplier in distillation"},
    {"lr_schedule",       KeyType::text,      "constant",        "constant,cosine", "per-phase schedule"},
    {"mae_warmup_epochs", KeyType::integer,   "0",               "", "reconstruction-only epochs before stage 1"},
    {"lr_mae_warmup",     KeyType::real,      "1e-3",            "", "learning rate of the reconstruction-only phase"},
    {"epochs_stage1",     KeyType::integer,   "30",              "", "teacher stage-1 epochs"},
    {"lr_stage1",         KeyType::real,      "1e-4",            "", "teacher stage-1 learning rate"},
    {"epochs_stage2",     KeyType::integer,   "20",              "", "teacher stage-2 epochs"},
    {"lr_stage2",         KeyType::real,      "1e-6",            "", "teacher stage-2 learning rate"},
    {"epochs_student",    KeyType::integer,   "10",              "", "student epochs"},
    {"lr_student",        KeyType::real,      "1e-5",            "", "student learning rate"},
    {"threshold",         KeyType::real,      "0.5",             "", "F1 decision threshold"},
};
// clang-format on

inline const KeyInfo& key_info(std::string_view name) {
    for (const auto& k : kConfigKeys)
        if (k.name == name) return k;
    throw std::invalid_argument("unknown config key '" + std::string(name) + "'");
}

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline bool parse_real(std::string_view s, double& out) {
    auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

inline bool parse_int(std::string_view s, long long& out) {
    auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace detail

/// Flat key/value configuration with a fixed key table.
class Config {
public:
    Config() {
        for (const auto& k : kConfigKeys) values_[std::string(k.name)] = std::string(k.default_value);
    }

    void set(const std::string& key, const std::string& raw) {
        const auto& info = key_info(key);
        std::string value = detail::trim(raw);
        switch (info.type) {
            case KeyType::integer: {
                long long v;
                std::uint64_t u;
                auto r = std::from_chars(value.data(), value.data() + value.size(), u);
                const bool big = key == "seed" && r.ec == std::errc() && r.ptr == value.data() + value.size();
                if (!big && !detail::parse_int(value, v)) throw std::invalid_argument("config key '" + key + "' expects an integer, got '" + value + "'");
                break;
            }
            case KeyType::real: {
                double v;
                if (!detail::parse_real(value, v)) throw std::invalid_argument("config key '" + key + "' expects a number, got '" + value + "'");
                break;
            }
            case KeyType::real_list:
                for (const auto& part : detail::split(value, ',')) {
                    double v;
                    if (!detail::parse_real(part, v)) throw std::invalid_argument("config key '" + key + "' expects numbers, got '" + value + "'");
                }
                break;
            case KeyType::text: {
                bool ok = info.choices.empty();
                for (const auto& c : detail::split(info.choices, ','))
                    if (c == value) ok = true;
                if (!ok) throw std::invalid_argument("config key '" + key + "' must be one of " + std::string(info.choices));
                break;
            }
        }
        values_[key] = value;
    }

    /// Applies an override of the form key=value.
    void set_assignment(const std::string& assignment) {
        auto eq = assignment.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + assignment + "'");
        set(detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
    }

    /// Reads `key = value` lines; blank lines and lines starting with '#' are skipped.
    void load_text(const std::string& text, const std::string& origin = "config") {
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto t = detail::trim(line);
            if (t.empty() || t[0] == '#') continue;
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
            try {
                set(detail::trim(t.substr(0, eq)), t.substr(eq + 1));
            } catch (const std::invalid_argument& e) {
                throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }

    void load_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open config file " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        load_text(ss.str(), path);
    }

    const std::string& text(const std::string& key) const {
        key_info(key);
        return values_.at(key);
    }

    long long integer(const std::string& key) const {
        long long v = 0;
        detail::parse_int(text(key), v);
        return v;
    }

    std::size_t count(const std::string& key) const {
        auto v = integer(key);
        if (v < 0) throw std::invalid_argument("config key '" + key + "' must be non-negative");
        return static_cast<std::size_t>(v);
    }

    double real(const std::string& key) const {
        double v = 0;
        detail::parse_real(text(key), v);
        return v;
    }

    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        for (const auto& p : detail::split(text(key), ',')) {
            double v = 0;
            detail::parse_real(p, v);
            out.push_back(v);
        }
        return out;
    }

    std::uint64_t seed() const {
        const auto& s = text("seed");
        std::uint64_t v = 0;
        std::from_chars(s.data(), s.data() + s.size(), v);
        return v;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    /// Canonical `key = value` text in table order.
    std::string dump() const {
        std::string out;
        for (const auto& k : kConfigKeys) out += std::string(k.name) + " = " + values_.at(std::string(k.name)) + "\n";
        return out;
    }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace occlu::harness
