#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "posegen/autodiff.hpp"
#include "posegen/geometry.hpp"
#include "posegen/kdtree.hpp"
#include "posegen/prediction.hpp"

namespace posegen {

struct LossWeights {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda3 = 1.0;
};

// Pairwise-product size above which nearest-neighbor sums switch to the
// kd-tree path. Both paths agree to 1e-9 (exact NN, same summation order
// up to per-point independence).
inline constexpr std::size_t kBruteForceLimit = 10'000;

namespace detail {

inline std::vector<Vec3> apply_pose(const RigidTransform& t, const std::vector<Vec3>& pts) {
    const Mat3 r = quat_to_rotmat(t.rotation);
    std::vector<Vec3> out;
    out.reserve(pts.size());
    for (const auto& p : pts) out.push_back(r * p + t.translation);
    return out;
}

inline double mean_nn_distance(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sum = 0.0;
    if (from.size() * to.size() > kBruteForceLimit) {
        KdTree3 tree(to);
        for (const auto& p : from) sum += tree.nearest(p).distance;
    } else {
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) best = std::min(best, (p - q).norm());
            sum += best;
        }
    }
    return sum / static_cast<double>(from.size());
}

}  // namespace detail

// ---- evaluation-path losses (64-bit, also shared by the metrics module) ----

// Mean per-point distance between the two posed model clouds.
inline double pose_loss(const RigidTransform& gt, const RigidTransform& est,
                        const PointCloud& model_points) {
    if (model_points.empty()) {
        throw std::invalid_argument("pose_loss: empty model points");
    }
    const Mat3 rg = quat_to_rotmat(gt.rotation);
    const Mat3 re = quat_to_rotmat(est.rotation);
    double sum = 0.0;
    for (const auto& x : model_points.points) {
        sum += ((rg * x + gt.translation) - (re * x + est.translation)).norm();
    }
    return sum / static_cast<double>(model_points.size());
}

// Closest-point variant for symmetric objects: the minimum ranges over all
// estimated-model points.
inline double sym_pose_loss(const RigidTransform& gt, const RigidTransform& est,
                            const PointCloud& model_points) {
    if (model_points.empty()) {
        throw std::invalid_argument("sym_pose_loss: empty model points");
    }
    const std::vector<Vec3> gt_posed = detail::apply_pose(gt, model_points.points);
    const std::vector<Vec3> est_posed = detail::apply_pose(est, model_points.points);
    return detail::mean_nn_distance(gt_posed, est_posed);
}

// Confidence-modulated per-point loss: sum_i c_i * L_p^i, where each
// prediction's pose is applied to all model points.
inline double confidence_pose_loss(const RigidTransform& gt, const PosePrediction& pred,
                                   const PointCloud& model_points, bool symmetric) {
    pred.check();
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const RigidTransform est{pred.quats[i].normalized(), pred.trans[i]};
        const double li = symmetric ? sym_pose_loss(gt, est, model_points)
                                    : pose_loss(gt, est, model_points);
        total += pred.conf[i] * li;
    }
    return total;
}

// Extended Chamfer distance: max of the two directed mean nearest-neighbor
// distances.
inline double chamfer_brute(const PointCloud& s, const PointCloud& s_hat) {
    if (s.empty() || s_hat.empty()) {
        throw std::invalid_argument("chamfer: empty point cloud");
    }
    double a = 0.0, b = 0.0;
    for (const auto& p : s.points) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : s_hat.points) best = std::min(best, (p - q).norm());
        a += best;
    }
    for (const auto& q : s_hat.points) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : s.points) best = std::min(best, (q - p).norm());
        b += best;
    }
    return std::max(a / static_cast<double>(s.size()), b / static_cast<double>(s_hat.size()));
}

inline double chamfer_kdtree(const PointCloud& s, const PointCloud& s_hat) {
    if (s.empty() || s_hat.empty()) {
        throw std::invalid_argument("chamfer: empty point cloud");
    }
    KdTree3 tree_hat(s_hat.points);
    KdTree3 tree_s(s.points);
    double a = 0.0, b = 0.0;
    for (const auto& p : s.points) a += tree_hat.nearest(p).distance;
    for (const auto& q : s_hat.points) b += tree_s.nearest(q).distance;
    return std::max(a / static_cast<double>(s.size()), b / static_cast<double>(s_hat.size()));
}

inline double chamfer(const PointCloud& s, const PointCloud& s_hat) {
    if (s.empty() || s_hat.empty()) {
        throw std::invalid_argument("chamfer: empty point cloud");
    }
    if (s.size() * s_hat.size() > kBruteForceLimit) return chamfer_kdtree(s, s_hat);
    return chamfer_brute(s, s_hat);
}

inline double total_loss(double pose_term, double cd_cano, double cd_posed, const LossWeights& w) {
    if (w.lambda1 < 0.0 || w.lambda2 < 0.0 || w.lambda3 < 0.0) {
        throw std::invalid_argument("total_loss: negative loss weight");
    }
    return w.lambda1 * pose_term + w.lambda2 * cd_cano + w.lambda3 * cd_posed;
}

// ---- differentiable-path builders ------------------------------------------

namespace adloss {

template <typename S>
Eigen::MatrixXd to_matrix(const std::vector<Vec3>& pts) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(pts.size()), 3);
    for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pts[i];
    return m;
}

// Eq. 1 on one pose hypothesis: q_row (1x4, normalized), t_row (1x3).
template <typename S>
ad::Tensor<S> pose_loss(ad::Tape<S>& tape, const ad::Tensor<S>& q_row, const ad::Tensor<S>& t_row,
                        const ad::Tensor<S>& model_pts, const ad::Tensor<S>& gt_posed) {
    auto rotated = tape.rotate_points(q_row, model_pts);
    auto posed = tape.add(rotated, tape.broadcast(t_row, model_pts.rows(), 3));
    auto diff = tape.sub(posed, gt_posed);
    return tape.mean(tape.l2_norm_rows(diff), 0);
}

// Eq. 2 on one pose hypothesis: min over estimated points.
template <typename S>
ad::Tensor<S> sym_pose_loss(ad::Tape<S>& tape, const ad::Tensor<S>& q_row, const ad::Tensor<S>& t_row,
                            const ad::Tensor<S>& model_pts, const ad::Tensor<S>& gt_posed) {
    auto rotated = tape.rotate_points(q_row, model_pts);
    auto posed = tape.add(rotated, tape.broadcast(t_row, model_pts.rows(), 3));
    auto dists = tape.pairwise_dist(gt_posed, posed);
    return tape.mean(tape.min_rows(dists), 0);
}

// Eq. 3: confidence-weighted sum over the N per-point hypotheses.
// quats: N x 4 (already normalized), trans: N x 3, conf: N x 1 (softmaxed).
template <typename S>
ad::Tensor<S> confidence_pose_loss(ad::Tape<S>& tape, const ad::Tensor<S>& quats,
                                   const ad::Tensor<S>& trans, const ad::Tensor<S>& conf,
                                   const Eigen::MatrixXd& model_pts, const RigidTransform& gt,
                                   bool symmetric) {
    const int n = quats.rows();
    auto model_const = tape.constant(model_pts);
    Eigen::MatrixXd gt_posed_m(model_pts.rows(), 3);
    const Mat3 rg = quat_to_rotmat(gt.rotation);
    for (Eigen::Index j = 0; j < model_pts.rows(); ++j) {
        gt_posed_m.row(j) = (rg * model_pts.row(j).transpose() + gt.translation).transpose();
    }
    auto gt_posed = tape.constant(gt_posed_m);
    std::vector<ad::Tensor<S>> per_point;
    per_point.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto q_row = tape.gather_rows(quats, {i});
        auto t_row = tape.gather_rows(trans, {i});
        per_point.push_back(symmetric ? sym_pose_loss(tape, q_row, t_row, model_const, gt_posed)
                                      : pose_loss(tape, q_row, t_row, model_const, gt_posed));
    }
    auto losses = tape.concat(per_point, 0);  // N x 1
    return tape.sum(tape.mul(conf, losses), 0);
}

// Eq. 4 between a generated cloud (differentiable) and a fixed target.
template <typename S>
ad::Tensor<S> chamfer(ad::Tape<S>& tape, const ad::Tensor<S>& target, const ad::Tensor<S>& generated) {
    auto dists = tape.pairwise_dist(target, generated);
    auto fwd = tape.mean(tape.min_rows(dists), 0);
    auto bwd = tape.mean(tape.min_rows(tape.transpose(dists)), 0);
    return tape.maximum(fwd, bwd);
}

}  // namespace adloss

}  // namespace posegen
