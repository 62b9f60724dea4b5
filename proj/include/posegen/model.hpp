#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "posegen/autodiff.hpp"
#include "posegen/geometry.hpp"
#include "posegen/optim.hpp"
#include "posegen/prediction.hpp"
#include "posegen/random.hpp"

#include "json.hpp"

namespace posegen {

struct ModelConfig {
    int d_emb = 64;          // per-branch feature width
    int n_points = 128;      // N points sampled per branch
    int fusion_depth = 2;    // point-fusion blocks per branch
    int grid_size = 256;     // generator grid points
    int se_ratio = 8;        // squeeze-excitation reduction
    int nonlocal_ratio = 2;  // attention channel reduction
    std::vector<int> head_widths = {256, 128};
    int appearance_dim = 11;  // f_a
    int global_width = 128;   // pooled feature width
    std::uint64_t grid_seed = 7;
    bool pointfusion = true;  // false: plain per-point MLP branches

    int fused_width() const { return 3 * d_emb; }
    int enriched_width() const { return fused_width() + global_width; }

    void validate() const {
        if (d_emb < 1 || n_points < 1 || fusion_depth < 1 || grid_size < 1 || se_ratio < 1 ||
            nonlocal_ratio < 1 || appearance_dim < 1 || global_width < 1) {
            throw std::invalid_argument("ModelConfig: all sizes must be positive");
        }
        if (d_emb % se_ratio != 0 || enriched_width() % se_ratio != 0) {
            throw std::invalid_argument("ModelConfig: se_ratio must divide the feature widths");
        }
        if (d_emb % nonlocal_ratio != 0) {
            throw std::invalid_argument("ModelConfig: nonlocal_ratio must divide d_emb");
        }
        if (head_widths.empty()) {
            throw std::invalid_argument("ModelConfig: head_widths must not be empty");
        }
    }

    nlohmann::json to_json() const {
        return {{"d_emb", d_emb},
                {"n_points", n_points},
                {"fusion_depth", fusion_depth},
                {"grid_size", grid_size},
                {"se_ratio", se_ratio},
                {"nonlocal_ratio", nonlocal_ratio},
                {"head_widths", head_widths},
                {"appearance_dim", appearance_dim},
                {"global_width", global_width},
                {"grid_seed", grid_seed},
                {"pointfusion", pointfusion}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig cfg;
        cfg.d_emb = j.at("d_emb");
        cfg.n_points = j.at("n_points");
        cfg.fusion_depth = j.at("fusion_depth");
        cfg.grid_size = j.at("grid_size");
        cfg.se_ratio = j.at("se_ratio");
        cfg.nonlocal_ratio = j.at("nonlocal_ratio");
        cfg.head_widths = j.at("head_widths").get<std::vector<int>>();
        cfg.appearance_dim = j.at("appearance_dim");
        cfg.global_width = j.at("global_width");
        cfg.grid_seed = j.at("grid_seed").get<std::uint64_t>();
        cfg.pointfusion = j.at("pointfusion");
        cfg.validate();
        return cfg;
    }
};

template <typename S>
struct FusedFeature {
    ad::Tensor<S> per_point;  // N x 3*d_emb, SE-gated
    ad::Tensor<S> global;     // 1 x global_width, SE-gated
    ad::Tensor<S> enriched;   // N x (3*d_emb + global_width); rows are per_point ++ global
    // Diagnostics for pooling checks: pre-pool per-point features and the
    // pre-SE pooled global vector.
    ad::Tensor<S> prepool;        // N x global_width
    ad::Tensor<S> global_pre_se;  // 1 x global_width
};

template <typename S>
struct GenerationOutput {
    ad::Tensor<S> cano;   // grid_size x 3
    ad::Tensor<S> posed;  // grid_size x 3
};

template <typename S>
struct PoseTensors {
    ad::Tensor<S> quats;  // N x 4, row-normalized
    ad::Tensor<S> trans;  // N x 3
    ad::Tensor<S> conf;   // N x 1, softmax over the N points
};

// Plain-struct view of a prediction; confidences are renormalized in double
// so downstream exact-sum checks hold after float inference.
template <typename S>
PosePrediction to_prediction(const PoseTensors<S>& t) {
    PosePrediction pred;
    const int n = t.quats.rows();
    double conf_sum = 0.0;
    for (int i = 0; i < n; ++i) conf_sum += static_cast<double>(t.conf.value(i, 0));
    if (conf_sum <= 0.0) throw std::invalid_argument("to_prediction: non-positive confidence mass");
    for (int i = 0; i < n; ++i) {
        Quaternion q(t.quats.value(i, 0), t.quats.value(i, 1), t.quats.value(i, 2),
                     t.quats.value(i, 3));
        pred.quats.push_back(q.normalized());
        pred.trans.emplace_back(t.trans.value(i, 0), t.trans.value(i, 1), t.trans.value(i, 2));
        pred.conf.push_back(static_cast<double>(t.conf.value(i, 0)) / conf_sum);
    }
    return pred;
}

namespace nn {

template <typename S>
struct Linear {
    ad::Tensor<S> w;  // in x out
    ad::Tensor<S> b;  // 1 x out

    ad::Tensor<S> forward(ad::Tape<S>& tape, const ad::Tensor<S>& x) const {
        return tape.add(tape.matmul(x, w), tape.broadcast(b, x.rows(), b.cols()));
    }
};

template <typename S>
Linear<S> make_linear(ad::Tape<S>& tape, int in, int out, Rng& rng, double scale = -1.0) {
    Linear<S> l;
    l.w = tape.leaf(in, out, true);
    l.b = tape.leaf(1, out, true);
    const double std_dev = scale >= 0.0 ? scale : std::sqrt(2.0 / static_cast<double>(in));
    for (auto& v : l.w.values()) v = static_cast<S>(rng.normal(0.0, std_dev));
    return l;
}

// Embedded-Gaussian attention across the N points with a residual,
// zero-initialized output projection (identity at init).
template <typename S>
struct NonLocalBlock {
    Linear<S> theta, phi, g, out;
    int reduced = 0;

    ad::Tensor<S> forward(ad::Tape<S>& tape, const ad::Tensor<S>& x) const {
        auto q = theta.forward(tape, x);                       // N x c'
        auto k = phi.forward(tape, x);                         // N x c'
        auto v = g.forward(tape, x);                           // N x c'
        auto logits = tape.scale(tape.matmul(q, tape.transpose(k)),
                                 1.0 / std::sqrt(static_cast<double>(reduced)));
        auto attn = tape.softmax(logits, 1);                   // rows sum to 1
        auto mixed = tape.matmul(attn, v);                     // N x c'
        return tape.add(x, out.forward(tape, mixed));
    }
};

template <typename S>
NonLocalBlock<S> make_nonlocal(ad::Tape<S>& tape, int channels, int ratio, Rng& rng) {
    NonLocalBlock<S> blk;
    blk.reduced = channels / ratio;
    blk.theta = make_linear(tape, channels, blk.reduced, rng);
    blk.phi = make_linear(tape, channels, blk.reduced, rng);
    blk.g = make_linear(tape, channels, blk.reduced, rng);
    blk.out = make_linear(tape, blk.reduced, channels, rng, 0.0);  // zero init
    return blk;
}

}  // namespace nn

template <typename S>
class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t weight_seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(weight_seed);
        build(rng);
        Rng grid_rng(cfg_.grid_seed);
        grid_.resize(cfg_.grid_size, 3);
        for (int i = 0; i < cfg_.grid_size; ++i)
            for (int j = 0; j < 3; ++j) grid_(i, j) = grid_rng.normal();
    }

    const ModelConfig& config() const { return cfg_; }
    const Eigen::MatrixXd& grid() const { return grid_; }

    // Point-wise fusion: three MLP branches to d_emb, per-point concat,
    // PointNet-style shared MLP + global average pooling, enrichment with the
    // global vector, and a squeeze-excitation gate over the result.
    FusedFeature<S> fuse(ad::Tape<S>& tape, const ad::Tensor<S>& appearance,
                         const ad::Tensor<S>& depth_points, const ad::Tensor<S>& model_points) const {
        if (appearance.rows() != depth_points.rows() || appearance.rows() != model_points.rows()) {
            throw std::invalid_argument("fuse: branch row counts differ");
        }
        if (appearance.cols() != cfg_.appearance_dim) {
            throw std::invalid_argument("fuse: appearance width " + std::to_string(appearance.cols()) +
                                        " != configured " + std::to_string(cfg_.appearance_dim));
        }
        const int n = appearance.rows();
        auto a = run_branch(tape, appearance, app_branch_);
        auto d = run_branch(tape, depth_points, depth_branch_);
        auto m = run_branch(tape, model_points, model_branch_);
        auto fused = tape.concat({a, d, m}, 1);  // N x 3d

        auto h = tape.relu(global_mlp_[0].forward(tape, fused));
        h = tape.relu(global_mlp_[1].forward(tape, h));          // N x g (pre-pool)
        auto pooled = tape.mean(h, 0);                           // 1 x g (pre-SE global)

        auto enriched_raw = tape.concat({fused, tape.broadcast(pooled, n, cfg_.global_width)}, 1);

        // Squeeze-excitation on the enriched channels.
        auto z = tape.mean(enriched_raw, 0);  // 1 x C
        auto gate = tape.sigmoid(se_[1].forward(tape, tape.relu(se_[0].forward(tape, z))));
        auto gate_pp = tape.slice_cols(gate, 0, cfg_.fused_width());
        auto gate_g = tape.slice_cols(gate, cfg_.fused_width(), cfg_.enriched_width());

        FusedFeature<S> out;
        out.per_point = tape.mul(fused, tape.broadcast(gate_pp, n, cfg_.fused_width()));
        out.global = tape.mul(pooled, gate_g);
        out.enriched =
            tape.concat({out.per_point, tape.broadcast(out.global, n, cfg_.global_width)}, 1);
        out.prepool = h;
        out.global_pre_se = pooled;
        return out;
    }

    // Two folding decoder branches over the fixed Gaussian grid, conditioned
    // on the global feature: canonical-pose and target-pose clouds.
    GenerationOutput<S> generate(ad::Tape<S>& tape, const FusedFeature<S>& feature) const {
        if (feature.global.cols() != cfg_.global_width) {
            throw std::invalid_argument("generate: global width mismatch");
        }
        GenerationOutput<S> out;
        out.cano = fold_branch(tape, feature.global, gen_cano_);
        out.posed = fold_branch(tape, feature.global, gen_posed_);
        return out;
    }

    // Shared MLP head: per point (4 quaternion logits, 3 translation offsets,
    // 1 confidence logit). The translation is the depth point plus the
    // predicted offset; confidences are softmax-normalized over the N points.
    PoseTensors<S> predict_pose(ad::Tape<S>& tape, const FusedFeature<S>& feature,
                                const ad::Tensor<S>& depth_points) const {
        if (feature.enriched.rows() != depth_points.rows()) {
            throw std::invalid_argument("predict_pose: row count mismatch with depth points");
        }
        auto h = feature.enriched;
        for (std::size_t i = 0; i + 1 < head_.size(); ++i) {
            h = tape.relu(head_[i].forward(tape, h));
        }
        auto raw = head_.back().forward(tape, h);  // N x 8
        PoseTensors<S> out;
        out.quats = tape.quat_normalize(tape.slice_cols(raw, 0, 4));
        out.trans = tape.add(tape.slice_cols(raw, 4, 7), depth_points);
        out.conf = tape.softmax(tape.slice_cols(raw, 7, 8), 0);
        return out;
    }

    std::vector<ad::Tensor<S>> parameters() const {
        std::vector<ad::Tensor<S>> out;
        for (const auto& [name, t] : named_) out.push_back(t);
        return out;
    }

    const std::vector<std::pair<std::string, ad::Tensor<S>>>& named_parameters() const {
        return named_;
    }

    void zero_grad() {
        for (auto& [name, t] : named_) t.zero_grad();
    }

    void save(const std::string& checkpoint_path) const {
        auto state = named_;
        ad::Tape<S> scratch;
        state.emplace_back("generator.grid", scratch.leaf_from(grid_, false));
        ad::save_weights(checkpoint_path, state);
        nlohmann::json sidecar;
        sidecar["model"] = cfg_.to_json();
        std::ofstream out(checkpoint_path + ".json");
        if (!out) throw std::runtime_error("Model::save: cannot open " + checkpoint_path + ".json");
        out << sidecar.dump(2) << "\n";
    }

    static Model load(const std::string& checkpoint_path) {
        std::ifstream in(checkpoint_path + ".json");
        if (!in) throw std::runtime_error("Model::load: cannot open " + checkpoint_path + ".json");
        nlohmann::json sidecar = nlohmann::json::parse(in);
        ModelConfig cfg = ModelConfig::from_json(sidecar.at("model"));
        Model model(cfg, 0);
        auto loaded = ad::load_weights(checkpoint_path);
        ad::assign_weights(model.named_, loaded);
        auto grid_it = loaded.find("generator.grid");
        if (grid_it == loaded.end()) {
            throw std::runtime_error("Model::load: checkpoint lacks generator.grid");
        }
        if (grid_it->second.rows != cfg.grid_size || grid_it->second.cols != 3) {
            throw std::runtime_error("Model::load: generator.grid shape mismatch");
        }
        for (int i = 0; i < cfg.grid_size; ++i)
            for (int j = 0; j < 3; ++j)
                model.grid_(i, j) = grid_it->second.values[static_cast<std::size_t>(i) * 3 + j];
        return model;
    }

private:
    struct Branch {
        std::vector<nn::Linear<S>> fc;
        std::vector<nn::NonLocalBlock<S>> attention;  // empty when pointfusion is off
    };

    ad::Tensor<S> run_branch(ad::Tape<S>& tape, const ad::Tensor<S>& x, const Branch& branch) const {
        auto h = x;
        for (std::size_t i = 0; i < branch.fc.size(); ++i) {
            h = tape.relu(branch.fc[i].forward(tape, h));
            if (cfg_.pointfusion) h = branch.attention[i].forward(tape, h);
        }
        return h;
    }

    ad::Tensor<S> fold_branch(ad::Tape<S>& tape, const ad::Tensor<S>& global,
                              const std::vector<nn::Linear<S>>& fold) const {
        auto grid_const = tape.constant(grid_);
        auto ctx = tape.broadcast(global, cfg_.grid_size, cfg_.global_width);
        auto h = tape.concat({grid_const, ctx}, 1);
        h = tape.relu(fold[0].forward(tape, h));
        h = tape.relu(fold[1].forward(tape, h));
        auto stage1 = fold[2].forward(tape, h);  // grid_size x 3
        auto h2 = tape.concat({stage1, ctx}, 1);
        h2 = tape.relu(fold[3].forward(tape, h2));
        h2 = tape.relu(fold[4].forward(tape, h2));
        return fold[5].forward(tape, h2);
    }

    Branch make_branch(int in_width, Rng& rng, const std::string& name) {
        Branch b;
        int in = in_width;
        for (int i = 0; i < cfg_.fusion_depth; ++i) {
            b.fc.push_back(nn::make_linear(weights_tape_, in, cfg_.d_emb, rng));
            register_linear(name + ".fc" + std::to_string(i), b.fc.back());
            if (cfg_.pointfusion) {
                b.attention.push_back(
                    nn::make_nonlocal(weights_tape_, cfg_.d_emb, cfg_.nonlocal_ratio, rng));
                register_nonlocal(name + ".nl" + std::to_string(i), b.attention.back());
            }
            in = cfg_.d_emb;
        }
        return b;
    }

    std::vector<nn::Linear<S>> make_fold(Rng& rng, const std::string& name) {
        std::vector<nn::Linear<S>> fold;
        const int ctx_in = cfg_.global_width + 3;
        const int h1 = cfg_.d_emb;
        const int h2 = cfg_.d_emb;
        const int dims[6][2] = {{ctx_in, h1}, {h1, h2}, {h2, 3}, {ctx_in, h1}, {h1, h2}, {h2, 3}};
        for (int i = 0; i < 6; ++i) {
            fold.push_back(nn::make_linear(weights_tape_, dims[i][0], dims[i][1], rng));
            register_linear(name + ".fc" + std::to_string(i), fold.back());
        }
        return fold;
    }

    void register_linear(const std::string& name, const nn::Linear<S>& l) {
        named_.emplace_back(name + ".w", l.w);
        named_.emplace_back(name + ".b", l.b);
    }

    void register_nonlocal(const std::string& name, const nn::NonLocalBlock<S>& blk) {
        register_linear(name + ".theta", blk.theta);
        register_linear(name + ".phi", blk.phi);
        register_linear(name + ".g", blk.g);
        register_linear(name + ".out", blk.out);
    }

    void build(Rng& rng) {
        app_branch_ = make_branch(cfg_.appearance_dim, rng, "app");
        depth_branch_ = make_branch(3, rng, "depth");
        model_branch_ = make_branch(3, rng, "model");

        global_mlp_.push_back(nn::make_linear(weights_tape_, cfg_.fused_width(), cfg_.global_width, rng));
        register_linear("global.fc0", global_mlp_[0]);
        global_mlp_.push_back(nn::make_linear(weights_tape_, cfg_.global_width, cfg_.global_width, rng));
        register_linear("global.fc1", global_mlp_[1]);

        const int c = cfg_.enriched_width();
        se_.push_back(nn::make_linear(weights_tape_, c, c / cfg_.se_ratio, rng));
        register_linear("se.fc0", se_[0]);
        se_.push_back(nn::make_linear(weights_tape_, c / cfg_.se_ratio, c, rng));
        register_linear("se.fc1", se_[1]);

        gen_cano_ = make_fold(rng, "gen_cano");
        gen_posed_ = make_fold(rng, "gen_posed");

        int in = c;
        for (std::size_t i = 0; i < cfg_.head_widths.size(); ++i) {
            head_.push_back(nn::make_linear(weights_tape_, in, cfg_.head_widths[i], rng));
            register_linear("head.fc" + std::to_string(i), head_.back());
            in = cfg_.head_widths[i];
        }
        head_.push_back(nn::make_linear(weights_tape_, in, 8, rng, 0.01));
        // Identity-quaternion bias keeps early rotations well-conditioned.
        head_.back().b.value_ref(0, 0) = S(1);
        register_linear("head.out", head_.back());
    }

    ModelConfig cfg_;
    ad::Tape<S> weights_tape_;  // only used to allocate leaves
    Eigen::MatrixXd grid_;
    Branch app_branch_, depth_branch_, model_branch_;
    std::vector<nn::Linear<S>> global_mlp_;
    std::vector<nn::Linear<S>> se_;
    std::vector<nn::Linear<S>> gen_cano_, gen_posed_;
    std::vector<nn::Linear<S>> head_;
    std::vector<std::pair<std::string, ad::Tensor<S>>> named_;
};

}  // namespace posegen
