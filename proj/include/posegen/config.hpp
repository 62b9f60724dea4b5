#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "posegen/model.hpp"
#include "posegen/trainer.hpp"

namespace posegen {

// Flat key=value run settings. Every key has a documented default; unknown
// keys are rejected. Values are stored as strings and parsed on access.
class RunConfig {
public:
    RunConfig() : values_(defaults()) {}

    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> kDefaults = {
            {"model.d_emb", "64"},
            {"model.n_points", "128"},
            {"model.fusion_depth", "2"},
            {"model.grid_size", "256"},
            {"model.se_ratio", "8"},
            {"model.nonlocal_ratio", "2"},
            {"model.head_widths", "256,128"},
            {"model.global_width", "128"},
            {"model.grid_seed", "7"},
            {"loss.lambda1", "1"},
            {"loss.lambda2", "1"},
            {"loss.lambda3", "1"},
            {"opt.lr", "0.001"},
            {"opt.beta1", "0.9"},
            {"opt.beta2", "0.999"},
            {"opt.eps", "1e-8"},
            {"train.epochs", "12"},
            {"train.batch_size", "4"},
            {"train.weight_seed", "1"},
            {"train.sampling_seed", "2"},
            {"eval.seed", "3"},
            {"eval.auc_max_threshold", "0.1"},
            {"eval.two_cm_threshold", "0.02"},
            {"eval.add_diameter_factor", "0.1"},
        };
        return kDefaults;
    }

    void set(const std::string& key, const std::string& value) {
        if (!defaults().count(key)) {
            throw std::invalid_argument("RunConfig: unknown key '" + key + "'");
        }
        values_[key] = value;
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("RunConfig: cannot open " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw std::runtime_error("RunConfig: " + path + ":" + std::to_string(lineno) +
                                         ": expected key=value");
            }
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    // "key=value" override, as passed on the command line.
    void apply_override(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("RunConfig: override must be key=value: " + assignment);
        }
        set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
    }

    const std::string& raw(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw std::invalid_argument("RunConfig: unknown key '" + key + "'");
        return it->second;
    }

    double number(const std::string& key) const {
        std::size_t pos = 0;
        const std::string& s = raw(key);
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("RunConfig: bad number for " + key);
        return v;
    }

    long integer(const std::string& key) const {
        std::size_t pos = 0;
        const std::string& s = raw(key);
        const long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("RunConfig: bad integer for " + key);
        return v;
    }

    std::vector<int> int_list(const std::string& key) const {
        std::vector<int> out;
        std::istringstream ss(raw(key));
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(std::stoi(trim(item)));
        return out;
    }

    ModelConfig model_config(int appearance_dim) const {
        ModelConfig cfg;
        cfg.d_emb = static_cast<int>(integer("model.d_emb"));
        cfg.n_points = static_cast<int>(integer("model.n_points"));
        cfg.fusion_depth = static_cast<int>(integer("model.fusion_depth"));
        cfg.grid_size = static_cast<int>(integer("model.grid_size"));
        cfg.se_ratio = static_cast<int>(integer("model.se_ratio"));
        cfg.nonlocal_ratio = static_cast<int>(integer("model.nonlocal_ratio"));
        cfg.head_widths = int_list("model.head_widths");
        cfg.global_width = static_cast<int>(integer("model.global_width"));
        cfg.grid_seed = static_cast<std::uint64_t>(integer("model.grid_seed"));
        cfg.appearance_dim = appearance_dim;
        cfg.validate();
        return cfg;
    }

    TrainConfig train_config() const {
        TrainConfig cfg;
        cfg.loss.lambda1 = number("loss.lambda1");
        cfg.loss.lambda2 = number("loss.lambda2");
        cfg.loss.lambda3 = number("loss.lambda3");
        cfg.opt.lr = number("opt.lr");
        cfg.opt.beta1 = number("opt.beta1");
        cfg.opt.beta2 = number("opt.beta2");
        cfg.opt.eps = number("opt.eps");
        cfg.epochs = static_cast<int>(integer("train.epochs"));
        cfg.batch_size = static_cast<int>(integer("train.batch_size"));
        cfg.sampling_seed = static_cast<std::uint64_t>(integer("train.sampling_seed"));
        return cfg;
    }

    // Resolved settings as one provenance line, sorted by key.
    std::string provenance() const {
        std::string out;
        for (const auto& [k, v] : values_) {
            if (!out.empty()) out += " ";
            out += k + "=" + v;
        }
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        for (const auto& [k, v] : values_) j[k] = v;
        return j;
    }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        if (a == std::string::npos) return "";
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace posegen
