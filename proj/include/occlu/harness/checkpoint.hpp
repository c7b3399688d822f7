#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "occlu/numerics/layers.hpp"

namespace occlu::harness {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host order");

inline constexpr int kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    std::string dtype;  // f32 | f64
    std::size_t offset = 0;
    std::size_t nbytes = 0;
    Shape shape;
};

/// Text manifest followed by a little-endian payload:
///
///   OCCLUCKPT 1
///   meta <key> <value...>
///   tensor <name> <dtype> <offset> <nbytes> <d0>x<d1>...
///   payload <bytes>
///   <raw bytes>
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<CheckpointEntry> entries;
    std::vector<char> payload;

    const CheckpointEntry& entry(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e;
        throw std::out_of_range("checkpoint has no tensor " + name);
    }

    const std::string& meta_value(const std::string& key) const {
        auto it = meta.find(key);
        if (it == meta.end()) throw std::out_of_range("checkpoint has no meta key " + key);
        return it->second;
    }

    template <std::floating_point T>
    std::vector<T> values(const std::string& name) const {
        const auto& e = entry(name);
        std::vector<T> out(numel(e.shape));
        if (e.dtype == dtype_name<T>()) {
            std::memcpy(out.data(), payload.data() + e.offset, e.nbytes);
        } else if (e.dtype == "f32") {
            std::vector<float> tmp(out.size());
            std::memcpy(tmp.data(), payload.data() + e.offset, e.nbytes);
            std::copy(tmp.begin(), tmp.end(), out.begin());
        } else {
            std::vector<double> tmp(out.size());
            std::memcpy(tmp.data(), payload.data() + e.offset, e.nbytes);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(tmp[i]);
        }
        return out;
    }

    template <std::floating_point T>
    static std::string dtype_name() {
        return sizeof(T) == 4 ? "f32" : "f64";
    }

    template <std::floating_point T>
    void add(const std::string& name, const Tensor<T>& t) {
        for (const auto& e : entries)
            if (e.name == name) throw std::logic_error("duplicate checkpoint tensor " + name);
        CheckpointEntry e{name, dtype_name<T>(), payload.size(), t.size() * sizeof(T), t.shape()};
        payload.resize(payload.size() + e.nbytes);
        std::memcpy(payload.data() + e.offset, t.data().data(), e.nbytes);
        entries.push_back(std::move(e));
    }

    template <std::floating_point T>
    void add(const ParamSet<T>& ps) {
        for (const auto& e : ps.entries()) add(e.name, e.tensor);
    }

    /// Writes stored values into every tensor of `ps` by name.
    template <std::floating_point T>
    void load_into(ParamSet<T>& ps) const {
        for (const auto& e : ps.entries()) {
            const auto& ce = entry(e.name);
            if (ce.shape != e.tensor.shape())
                throw std::invalid_argument("checkpoint tensor " + e.name + " has shape " + to_string(ce.shape) +
                                            ", model expects " + to_string(e.tensor.shape()));
            auto v = values<T>(e.name);
            auto t = e.tensor;
            std::copy(v.begin(), v.end(), t.mutable_data().begin());
        }
    }

    std::string serialize() const {
        std::ostringstream out;
        out << "OCCLUCKPT " << kCheckpointVersion << "\n";
        for (const auto& [k, v] : meta) {
            if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
                throw std::invalid_argument("checkpoint meta must be single-line and keys space-free");
            out << "meta " << k << " " << v << "\n";
        }
        for (const auto& e : entries) {
            out << "tensor " << e.name << " " << e.dtype << " " << e.offset << " " << e.nbytes << " ";
            for (std::size_t i = 0; i < e.shape.size(); ++i) out << (i ? "x" : "") << e.shape[i];
            out << "\n";
        }
        out << "payload " << payload.size() << "\n";
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        return out.str();
    }

    static Checkpoint parse(const std::string& bytes) {
        Checkpoint c;
        std::size_t pos = 0;
        auto next_line = [&]() {
            auto nl = bytes.find('\n', pos);
            if (nl == std::string::npos) throw std::runtime_error("checkpoint: truncated manifest");
            std::string line = bytes.substr(pos, nl - pos);
            pos = nl + 1;
            return line;
        };
        if (next_line() != "OCCLUCKPT " + std::to_string(kCheckpointVersion))
            throw std::runtime_error("checkpoint: unsupported format or version");
        while (true) {
            auto line = next_line();
            std::istringstream ls(line);
            std::string tag;
            ls >> tag;
            if (tag == "meta") {
                std::string key, value;
                ls >> key;
                std::getline(ls, value);
                if (!value.empty() && value[0] == ' ') value.erase(0, 1);
                c.meta[key] = value;
            } else if (tag == "tensor") {
                CheckpointEntry e;
                std::string shape;
                if (!(ls >> e.name >> e.dtype >> e.offset >> e.nbytes >> shape))
                    throw std::runtime_error("checkpoint: malformed tensor line '" + line + "'");
                if (e.dtype != "f32" && e.dtype != "f64") throw std::runtime_error("checkpoint: unknown dtype " + e.dtype);
                std::stringstream ss(shape);
                std::string d;
                while (std::getline(ss, d, 'x')) e.shape.push_back(std::stoul(d));
                const std::size_t width = e.dtype == "f32" ? 4 : 8;
                if (e.shape.empty() || numel(e.shape) * width != e.nbytes)
                    throw std::runtime_error("checkpoint: size of " + e.name + " does not match its shape");
                c.entries.push_back(std::move(e));
            } else if (tag == "payload") {
                std::size_t n = 0;
                if (!(ls >> n)) throw std::runtime_error("checkpoint: malformed payload line");
                if (bytes.size() - pos != n) throw std::runtime_error("checkpoint: payload size mismatch");
                c.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
                break;
            } else {
                throw std::runtime_error("checkpoint: unexpected manifest line '" + line + "'");
            }
        }
        std::vector<std::pair<std::size_t, std::size_t>> spans;
        for (const auto& e : c.entries) {
            if (e.offset + e.nbytes > c.payload.size()) throw std::runtime_error("checkpoint: entry " + e.name + " out of bounds");
            spans.emplace_back(e.offset, e.offset + e.nbytes);
        }
        std::sort(spans.begin(), spans.end());
        for (std::size_t i = 1; i < spans.size(); ++i)
            if (spans[i].first < spans[i - 1].second) throw std::runtime_error("checkpoint: overlapping entries");
        return c;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write checkpoint " + path);
        auto s = serialize();
        f.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot read checkpoint " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }
};

}  // namespace occlu::harness
