#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "posegen/autodiff.hpp"

namespace posegen::ad {

// Adam with bias correction. One state per parameter list; the list order
// must stay fixed across steps.
template <typename S>
struct AdamState {
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;
    long step = 0;
};

template <typename S>
void adam_step(std::vector<Tensor<S>>& params, double lr, double beta1, double beta2, double eps,
               AdamState<S>& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].values().size(), S(0));
            state.v[i].assign(params[i].values().size(), S(0));
        }
    }
    if (state.m.size() != params.size()) {
        throw std::logic_error("adam_step: state does not match parameter list");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.requires_grad() || !p.has_grad()) {
            throw std::logic_error("adam_step: parameter " + std::to_string(i) + " has no gradient");
        }
        auto& values = p.values();
        const auto& grads = p.grads();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double g = static_cast<double>(grads[k]);
            m[k] = static_cast<S>(beta1 * m[k] + (1.0 - beta1) * g);
            v[k] = static_cast<S>(beta2 * v[k] + (1.0 - beta2) * g * g);
            const double mhat = static_cast<double>(m[k]) / bc1;
            const double vhat = static_cast<double>(v[k]) / bc2;
            values[k] = static_cast<S>(values[k] - lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

// ---- weight checkpoints -----------------------------------------------------
//
// Textual key -> shape -> values map:
//
//   posegen-weights 1
//   tensor <name> <rows> <cols>
//   <row of values>            (one line per row, %.17g)
//
// 17 significant digits round-trip float and double values bit-exactly.

template <typename S>
void save_weights(const std::string& path, const std::vector<std::pair<std::string, Tensor<S>>>& named) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_weights: cannot open " + path);
    out << "posegen-weights 1\n";
    char buf[64];
    for (const auto& [name, t] : named) {
        out << "tensor " << name << " " << t.rows() << " " << t.cols() << "\n";
        for (int r = 0; r < t.rows(); ++r) {
            for (int c = 0; c < t.cols(); ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(t.value(r, c)));
                out << (c ? " " : "") << buf;
            }
            out << "\n";
        }
    }
    if (!out) throw std::runtime_error("save_weights: write failed for " + path);
}

struct LoadedTensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;
};

inline std::map<std::string, LoadedTensor> load_weights(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_weights: cannot open " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "posegen-weights" || version != 1) {
        throw std::runtime_error("load_weights: bad header in " + path);
    }
    std::map<std::string, LoadedTensor> out;
    std::string tok;
    while (in >> tok) {
        if (tok != "tensor") throw std::runtime_error("load_weights: expected 'tensor' in " + path);
        std::string name;
        LoadedTensor t;
        if (!(in >> name >> t.rows >> t.cols) || t.rows < 0 || t.cols < 0) {
            throw std::runtime_error("load_weights: malformed tensor header in " + path);
        }
        t.values.resize(static_cast<std::size_t>(t.rows) * t.cols);
        for (auto& v : t.values) {
            if (!(in >> v)) throw std::runtime_error("load_weights: truncated values in " + path);
        }
        if (!out.emplace(name, std::move(t)).second) {
            throw std::runtime_error("load_weights: duplicate tensor '" + name + "' in " + path);
        }
    }
    return out;
}

template <typename S>
void assign_weights(std::vector<std::pair<std::string, Tensor<S>>>& named,
                    const std::map<std::string, LoadedTensor>& loaded) {
    for (auto& [name, t] : named) {
        auto it = loaded.find(name);
        if (it == loaded.end()) {
            throw std::runtime_error("assign_weights: missing tensor '" + name + "'");
        }
        const LoadedTensor& src = it->second;
        if (src.rows != t.rows() || src.cols != t.cols()) {
            throw std::runtime_error("assign_weights: shape mismatch for '" + name + "'");
        }
        for (std::size_t k = 0; k < t.values().size(); ++k) {
            t.values()[k] = static_cast<S>(src.values[k]);
        }
    }
}

}  // namespace posegen::ad
