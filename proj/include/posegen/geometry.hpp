#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "posegen/random.hpp"

namespace posegen {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kUnitQuatTol = 1e-9;

// Rotation as (w, x, y, z). This component order is used everywhere,
// including all file formats.
struct Quaternion {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Quaternion() = default;
    Quaternion(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

    static Quaternion identity() { return {1.0, 0.0, 0.0, 0.0}; }

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

    bool is_unit(double tol = kUnitQuatTol) const { return std::abs(norm() - 1.0) <= tol; }

    Quaternion normalized() const {
        const double n = norm();
        if (n < 1e-300) {
            throw std::invalid_argument("Quaternion::normalized: zero quaternion");
        }
        return {w / n, x / n, y / n, z / n};
    }

    Quaternion conjugate() const { return {w, -x, -y, -z}; }

    // Hamilton product. Unit * unit stays unit.
    Quaternion operator*(const Quaternion& q) const {
        return {w * q.w - x * q.x - y * q.y - z * q.z,
                w * q.x + x * q.w + y * q.z - z * q.y,
                w * q.y - x * q.z + y * q.w + z * q.x,
                w * q.z + x * q.y - y * q.x + z * q.w};
    }

    // Rotation angle in [0, pi].
    double angle() const {
        const double c = std::min(1.0, std::abs(w) / std::max(norm(), 1e-300));
        return 2.0 * std::acos(c);
    }

    static Quaternion from_axis_angle(const Vec3& axis, double angle) {
        const double n = axis.norm();
        if (n < 1e-300) {
            if (std::abs(angle) < 1e-300) return identity();
            throw std::invalid_argument("Quaternion::from_axis_angle: zero axis");
        }
        const double half = 0.5 * angle;
        const double s = std::sin(half) / n;
        return {std::cos(half), axis.x() * s, axis.y() * s, axis.z() * s};
    }
};

inline void require_unit(const Quaternion& q, const char* where) {
    if (!q.is_unit()) {
        std::ostringstream msg;
        msg << where << ": quaternion norm " << q.norm() << " is not 1 within " << kUnitQuatTol;
        throw std::invalid_argument(msg.str());
    }
}

inline Mat3 quat_to_rotmat(const Quaternion& q) {
    require_unit(q, "quat_to_rotmat");
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// Branch-on-largest-diagonal (Shepperd) conversion; stable near 180 degree
// rotations where the naive trace formula cancels.
inline Quaternion rotmat_to_quat(const Mat3& r) {
    const double t = r.trace();
    Quaternion q;
    if (t > r(0, 0) && t > r(1, 1) && t > r(2, 2)) {
        const double s = std::sqrt(1.0 + t) * 2.0;
        q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        const double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
        q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
    } else if (r(1, 1) > r(2, 2)) {
        const double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
        q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
    } else {
        const double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
        q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
    }
    return q.normalized();
}

// Pose p = [R|t]: rotation stored as a unit quaternion, translation in meters.
struct RigidTransform {
    Quaternion rotation;
    Vec3 translation = Vec3::Zero();

    RigidTransform() = default;
    RigidTransform(const Quaternion& q, const Vec3& t) : rotation(q), translation(t) {}

    static RigidTransform identity() { return {}; }

    Vec3 apply(const Vec3& p) const { return quat_to_rotmat(rotation) * p + translation; }
};

inline RigidTransform inverse(const RigidTransform& t) {
    require_unit(t.rotation, "inverse");
    const Quaternion qi = t.rotation.conjugate();
    return {qi, -(quat_to_rotmat(qi) * t.translation)};
}

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    require_unit(a.rotation, "compose");
    require_unit(b.rotation, "compose");
    Quaternion q = (a.rotation * b.rotation).normalized();
    return {q, quat_to_rotmat(a.rotation) * b.translation + a.translation};
}

// Angle of the relative rotation between two transforms, in radians.
inline double rotation_error(const RigidTransform& a, const RigidTransform& b) {
    return (a.rotation.conjugate() * b.rotation).angle();
}

inline double translation_error(const RigidTransform& a, const RigidTransform& b) {
    return (a.translation - b.translation).norm();
}

// Ordered 3D points plus optional per-point attribute rows (appearance
// features, normals). attrs has one row per point when non-empty.
struct PointCloud {
    std::vector<Vec3> points;
    Eigen::MatrixXd attrs;  // 0x0 when absent

    PointCloud() = default;
    explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool has_attrs() const { return attrs.rows() > 0; }

    void check_attrs() const {
        if (has_attrs() && static_cast<std::size_t>(attrs.rows()) != points.size()) {
            throw std::invalid_argument("PointCloud: attribute rows do not match point count");
        }
    }

    Vec3 centroid() const {
        Vec3 c = Vec3::Zero();
        for (const auto& p : points) c += p;
        return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
    }

    // Max pairwise distance. O(n^2); intended for per-object setup, not hot loops.
    double diameter() const {
        double best = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            for (std::size_t j = i + 1; j < points.size(); ++j) {
                best = std::max(best, (points[i] - points[j]).norm());
            }
        }
        return best;
    }
};

inline PointCloud transform_points(const RigidTransform& t, const PointCloud& pc) {
    if (pc.empty()) {
        throw std::invalid_argument("transform_points: empty point cloud");
    }
    pc.check_attrs();
    const Mat3 r = quat_to_rotmat(t.rotation);
    PointCloud out;
    out.points.reserve(pc.size());
    for (const auto& p : pc.points) out.points.push_back(r * p + t.translation);
    out.attrs = pc.attrs;
    return out;
}

// Random sample of exactly n points: without replacement when n <= |pc|
// (so n == |pc| is a permutation), with replacement otherwise.
inline PointCloud sample_points(const PointCloud& pc, std::size_t n, std::uint64_t seed) {
    if (pc.empty()) {
        throw std::invalid_argument("sample_points: empty point cloud");
    }
    if (n < 1) {
        throw std::invalid_argument("sample_points: n must be >= 1");
    }
    pc.check_attrs();
    Rng rng(seed);
    std::vector<std::size_t> idx;
    idx.reserve(n);
    if (n <= pc.size()) {
        std::vector<std::size_t> all(pc.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        // Partial Fisher-Yates: first n entries are a uniform sample.
        for (std::size_t i = 0; i < n; ++i) {
            std::swap(all[i], all[i + rng.index(all.size() - i)]);
            idx.push_back(all[i]);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) idx.push_back(rng.index(pc.size()));
    }
    PointCloud out;
    out.points.reserve(n);
    if (pc.has_attrs()) out.attrs.resize(static_cast<Eigen::Index>(n), pc.attrs.cols());
    for (std::size_t i = 0; i < n; ++i) {
        out.points.push_back(pc.points[idx[i]]);
        if (pc.has_attrs()) out.attrs.row(static_cast<Eigen::Index>(i)) = pc.attrs.row(static_cast<Eigen::Index>(idx[i]));
    }
    return out;
}

// Uniform-axis, uniform-angle rotation with angle <= rotation_bound, and a
// translation uniform in the ball of radius translation_bound.
inline RigidTransform random_pose(double rotation_bound, double translation_bound, std::uint64_t seed) {
    if (rotation_bound < 0.0 || translation_bound < 0.0) {
        throw std::invalid_argument("random_pose: bounds must be >= 0");
    }
    Rng rng(seed);
    // Axis uniform on the sphere.
    const double zc = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * M_PI);
    const double s = std::sqrt(std::max(0.0, 1.0 - zc * zc));
    const Vec3 axis(s * std::cos(phi), s * std::sin(phi), zc);
    const double angle = rng.uniform(0.0, rotation_bound);

    const double tz = rng.uniform(-1.0, 1.0);
    const double tphi = rng.uniform(0.0, 2.0 * M_PI);
    const double ts = std::sqrt(std::max(0.0, 1.0 - tz * tz));
    const double radius = translation_bound * std::cbrt(rng.uniform());
    const Vec3 t = radius * Vec3(ts * std::cos(tphi), ts * std::sin(tphi), tz);

    if (rotation_bound == 0.0) {
        return {Quaternion::identity(), translation_bound == 0.0 ? Vec3::Zero() : t};
    }
    return {Quaternion::from_axis_angle(axis, angle), t};
}

}  // namespace posegen
