#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <stdexcept>
#include <vector>

#include "posegen/geometry.hpp"
#include "posegen/kdtree.hpp"

namespace posegen {

struct IcpConfig {
    int max_iterations = 50;
    double convergence_tol = 1e-9;         // stop when the mean residual improves by less
    double max_correspondence_dist = 0.05; // meters; pairs beyond this are rejected
};

struct IcpResult {
    RigidTransform pose;
    double residual = 0.0;  // mean correspondence distance at the accepted pose
    int iterations = 0;
    std::vector<double> residual_history;  // accepted residuals, non-increasing
};

class DegenerateGeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NoCorrespondenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void check_not_degenerate(const PointCloud& pc, const char* name) {
    if (pc.size() < 3) {
        throw DegenerateGeometryError(std::string("icp_refine: ") + name + " has fewer than 3 points");
    }
    Vec3 c = pc.centroid();
    Mat3 cov = Mat3::Zero();
    for (const auto& p : pc.points) cov += (p - c) * (p - c).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 ev = eig.eigenvalues();  // ascending
    if (ev(2) <= 1e-24 || ev(1) <= 1e-12 * ev(2)) {
        throw DegenerateGeometryError(std::string("icp_refine: ") + name +
                                      " is collinear or coincident");
    }
}

// Closed-form rigid alignment (Umeyama, no scale) minimizing
// sum ||dst_i - (R src_i + t)||^2, with determinant-sign correction so the
// result is a proper rotation.
inline RigidTransform best_rigid_alignment(const std::vector<Vec3>& src,
                                           const std::vector<Vec3>& dst) {
    const double n = static_cast<double>(src.size());
    Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
    for (const auto& p : src) cs += p;
    for (const auto& p : dst) cd += p;
    cs /= n;
    cd /= n;
    Mat3 h = Mat3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        h += (dst[i] - cd) * (src[i] - cs).transpose();
    }
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
        d(2, 2) = -1.0;
    }
    const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
    return {rotmat_to_quat(r), cd - r * cs};
}

}  // namespace detail

namespace detail {

// Mean gated nearest-neighbor distance from the posed model into the
// observed set.
inline double mean_correspondence_residual(const RigidTransform& pose, const KdTree3& observed_tree,
                                           const PointCloud& model_points, double max_dist) {
    const Mat3 r = quat_to_rotmat(pose.rotation);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& m : model_points.points) {
        const auto hit = observed_tree.nearest_within(r * m + pose.translation, max_dist);
        if (hit.index < 0) continue;
        sum += hit.distance;
        ++count;
    }
    if (count < 3) {
        throw NoCorrespondenceError(
            "icp_refine: fewer than 3 correspondences within max_correspondence_dist");
    }
    return sum / static_cast<double>(count);
}

}  // namespace detail

// Point-to-point ICP: nearest-neighbor correspondences from the posed model
// into the observed points, then a closed-form rigid update. A step that
// would raise the mean residual is rejected and iteration stops, so the
// reported residual sequence is non-increasing.
inline IcpResult icp_refine(const RigidTransform& initial, const PointCloud& observed,
                            const PointCloud& model_points, const IcpConfig& cfg = {}) {
    if (cfg.max_iterations <= 0 || cfg.convergence_tol < 0.0 || cfg.max_correspondence_dist <= 0.0) {
        throw std::invalid_argument("icp_refine: invalid configuration");
    }
    detail::check_not_degenerate(observed, "observed cloud");
    detail::check_not_degenerate(model_points, "model cloud");

    KdTree3 observed_tree(observed.points);

    IcpResult result;
    result.pose = initial;
    result.residual = detail::mean_correspondence_residual(initial, observed_tree, model_points,
                                                           cfg.max_correspondence_dist);
    result.residual_history.push_back(result.residual);

    for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
        result.iterations = iter;
        const Mat3 r = quat_to_rotmat(result.pose.rotation);
        std::vector<Vec3> src, dst;
        src.reserve(model_points.size());
        dst.reserve(model_points.size());
        for (const auto& m : model_points.points) {
            const Vec3 posed = r * m + result.pose.translation;
            const auto hit = observed_tree.nearest_within(posed, cfg.max_correspondence_dist);
            if (hit.index < 0) continue;
            src.push_back(posed);
            dst.push_back(observed.points[hit.index]);
        }
        if (src.size() < 3) {
            throw NoCorrespondenceError(
                "icp_refine: fewer than 3 correspondences within max_correspondence_dist");
        }

        const RigidTransform delta = detail::best_rigid_alignment(src, dst);
        const RigidTransform candidate = compose(delta, result.pose);
        const double residual = detail::mean_correspondence_residual(
            candidate, observed_tree, model_points, cfg.max_correspondence_dist);

        if (residual > result.residual) {
            break;  // reject the step, keep the previous pose
        }
        const double improvement = result.residual - residual;
        result.pose = candidate;
        result.residual = residual;
        result.residual_history.push_back(residual);
        if (improvement < cfg.convergence_tol) {
            break;
        }
    }
    return result;
}

}  // namespace posegen
