#pragma once

#include <algorithm>
#include <numeric>
#include <ostream>
#include <vector>

#include "posegen/losses.hpp"
#include "posegen/manifest.hpp"
#include "posegen/model.hpp"
#include "posegen/optim.hpp"

namespace posegen {

struct OptimConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    LossWeights loss;
    OptimConfig opt;
    int epochs = 12;
    int batch_size = 4;
    std::uint64_t sampling_seed = 2;
};

struct EpochLog {
    int epoch = 0;
    double pose_loss = 0.0;
    double cd_cano = 0.0;
    double cd_gt = 0.0;
    double total = 0.0;
};

namespace detail {

// N rows for one branch triple: appearance + depth from the observed cloud,
// model points from the per-sample model draw.
struct BranchInputs {
    Eigen::MatrixXd appearance;  // N x f_a
    Eigen::MatrixXd depth;       // N x 3
    Eigen::MatrixXd model;       // N x 3
};

inline BranchInputs draw_branch_inputs(const Sample& sample, int n, std::uint64_t seed) {
    const PointCloud obs = sample_points(sample.observed, static_cast<std::size_t>(n), seed);
    const PointCloud mdl =
        sample_points(sample.model_sampled, static_cast<std::size_t>(n), Rng::mix(seed, 1));
    BranchInputs b;
    b.appearance = obs.attrs;
    b.depth.resize(n, 3);
    b.model.resize(n, 3);
    for (int i = 0; i < n; ++i) {
        b.depth.row(i) = obs.points[static_cast<std::size_t>(i)];
        b.model.row(i) = mdl.points[static_cast<std::size_t>(i)];
    }
    return b;
}

}  // namespace detail

// Joint training: confidence-modulated pose loss plus the two generation
// Chamfer terms, Adam updates every batch_size samples.
template <typename S>
std::vector<EpochLog> train_model(Model<S>& model, const Dataset& data, const TrainConfig& cfg,
                                  std::ostream* progress = nullptr) {
    if (data.samples.empty()) throw std::invalid_argument("train_model: dataset has no samples");
    if (cfg.epochs < 1 || cfg.batch_size < 1) {
        throw std::invalid_argument("train_model: epochs and batch_size must be >= 1");
    }
    const int n = model.config().n_points;
    const bool use_generation = cfg.loss.lambda2 > 0.0 || cfg.loss.lambda3 > 0.0;
    auto params = model.parameters();
    ad::AdamState<S> adam;
    std::vector<EpochLog> logs;

    std::vector<std::size_t> order(data.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng(Rng::mix(cfg.sampling_seed, 7000 + static_cast<std::uint64_t>(epoch)));
        epoch_rng.shuffle(order);
        EpochLog log;
        log.epoch = epoch;
        int in_batch = 0;
        model.zero_grad();
        for (std::size_t step = 0; step < order.size(); ++step) {
            const Sample& sample = data.samples[order[step]];
            const ObjectModel& obj = data.objects.at(sample.object_id);
            const std::uint64_t draw_seed =
                Rng::mix(cfg.sampling_seed, (static_cast<std::uint64_t>(epoch) << 32) + step);
            const auto inputs = detail::draw_branch_inputs(sample, n, draw_seed);

            ad::Tape<S> tape;
            auto appearance = tape.constant(inputs.appearance);
            auto depth = tape.constant(inputs.depth);
            auto model_pts = tape.constant(inputs.model);
            auto feature = model.fuse(tape, appearance, depth, model_pts);
            auto pose = model.predict_pose(tape, feature, depth);

            auto loss_pose = adloss::confidence_pose_loss(tape, pose.quats, pose.trans, pose.conf,
                                                          inputs.model, sample.pose_gt,
                                                          obj.symmetric);
            auto total = tape.scale(loss_pose, cfg.loss.lambda1);
            double cd_cano_value = 0.0, cd_gt_value = 0.0;
            if (use_generation) {
                auto generated = model.generate(tape, feature);
                auto target_cano = tape.constant(inputs.model);
                Eigen::MatrixXd posed_m(n, 3);
                const Mat3 rg = quat_to_rotmat(sample.pose_gt.rotation);
                for (int i = 0; i < n; ++i) {
                    posed_m.row(i) =
                        (rg * inputs.model.row(i).transpose() + sample.pose_gt.translation)
                            .transpose();
                }
                auto target_posed = tape.constant(posed_m);
                auto cd_cano = adloss::chamfer(tape, target_cano, generated.cano);
                auto cd_gt = adloss::chamfer(tape, target_posed, generated.posed);
                cd_cano_value = static_cast<double>(cd_cano.scalar());
                cd_gt_value = static_cast<double>(cd_gt.scalar());
                total = tape.add(total, tape.add(tape.scale(cd_cano, cfg.loss.lambda2),
                                                 tape.scale(cd_gt, cfg.loss.lambda3)));
            }
            tape.backward(total);
            tape.clear();

            const double pose_value = static_cast<double>(loss_pose.scalar());
            log.pose_loss += pose_value;
            log.cd_cano += cd_cano_value;
            log.cd_gt += cd_gt_value;
            log.total += cfg.loss.lambda1 * pose_value + cfg.loss.lambda2 * cd_cano_value +
                         cfg.loss.lambda3 * cd_gt_value;

            if (++in_batch == cfg.batch_size || step + 1 == order.size()) {
                ad::adam_step(params, cfg.opt.lr, cfg.opt.beta1, cfg.opt.beta2, cfg.opt.eps, adam);
                model.zero_grad();
                in_batch = 0;
            }
        }
        const double count = static_cast<double>(order.size());
        log.pose_loss /= count;
        log.cd_cano /= count;
        log.cd_gt /= count;
        log.total /= count;
        logs.push_back(log);
        if (progress) {
            (*progress) << "epoch " << epoch << " pose " << log.pose_loss << " cd_cano "
                        << log.cd_cano << " cd_gt " << log.cd_gt << " total " << log.total << "\n";
        }
    }
    return logs;
}

// Forward pass on one sample; returns the N per-point hypotheses.
template <typename S>
PosePrediction infer(const Model<S>& model, const Sample& sample, std::uint64_t seed) {
    const int n = model.config().n_points;
    const auto inputs = detail::draw_branch_inputs(sample, n, seed);
    ad::Tape<S> tape;
    auto feature = model.fuse(tape, tape.constant(inputs.appearance), tape.constant(inputs.depth),
                              tape.constant(inputs.model));
    auto pose = model.predict_pose(tape, feature, tape.constant(inputs.depth));
    return to_prediction(pose);
}

// Generated clouds for one sample (canonical and target pose).
template <typename S>
std::pair<PointCloud, PointCloud> infer_generation(const Model<S>& model, const Sample& sample,
                                                   std::uint64_t seed) {
    const int n = model.config().n_points;
    const auto inputs = detail::draw_branch_inputs(sample, n, seed);
    ad::Tape<S> tape;
    auto feature = model.fuse(tape, tape.constant(inputs.appearance), tape.constant(inputs.depth),
                              tape.constant(inputs.model));
    auto generated = model.generate(tape, feature);
    PointCloud cano, posed;
    for (int i = 0; i < generated.cano.rows(); ++i) {
        cano.points.emplace_back(generated.cano.value(i, 0), generated.cano.value(i, 1),
                                 generated.cano.value(i, 2));
        posed.points.emplace_back(generated.posed.value(i, 0), generated.posed.value(i, 1),
                                  generated.posed.value(i, 2));
    }
    return {cano, posed};
}

}  // namespace posegen
