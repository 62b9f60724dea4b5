#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "posegen/geometry.hpp"
#include "posegen/ply.hpp"
#include "posegen/random.hpp"

#include "json.hpp"

namespace posegen {

class EmptyViewError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CameraIntrinsics {
    double fx = 500.0, fy = 500.0;
    double cx = 320.0, cy = 240.0;
    int width = 640, height = 480;

    void check() const {
        if (fx <= 0.0 || fy <= 0.0) throw std::invalid_argument("CameraIntrinsics: fx, fy must be > 0");
        if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
            throw std::invalid_argument("CameraIntrinsics: principal point outside image");
        }
    }
};

struct ObjectModel {
    std::string id;
    PointCloud cloud_cano;  // canonical pose, centered at the centroid
    bool symmetric = false;
    double diameter = 0.0;  // max pairwise model-point distance
};

// Width of the procedural appearance feature: canonical coordinates (3)
// plus the object-id embedding.
inline constexpr int kIdEmbedDim = 8;
inline constexpr int kAppearanceDim = 3 + kIdEmbedDim;

struct ViewParams {
    double noise_sigma = 0.0;        // isotropic Gaussian, meters
    double occlusion_fraction = 0.0; // contiguous ball-cut patch
    bool cull = false;               // drop the back-facing hemisphere
    int model_sample_count = 512;    // points drawn from the model branch
};

struct Sample {
    std::string object_id;
    RigidTransform pose_gt;
    PointCloud observed;       // camera frame; attrs hold the appearance rows
    PointCloud model_sampled;  // canonical model points for the model branch

    const Eigen::MatrixXd& appearance() const { return observed.attrs; }
};

// ---- procedural objects -----------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

struct Rect {
    Vec3 origin;
    Vec3 u;  // first edge
    Vec3 v;  // second edge
    double area() const { return u.cross(v).norm(); }
};

inline std::vector<Vec3> sample_rects(const std::vector<Rect>& rects, std::size_t n, Rng& rng) {
    std::vector<double> cumulative;
    double total = 0.0;
    for (const auto& r : rects) {
        total += r.area();
        cumulative.push_back(total);
    }
    std::vector<Vec3> pts;
    pts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double pick = rng.uniform() * total;
        std::size_t k = std::lower_bound(cumulative.begin(), cumulative.end(), pick) -
                        cumulative.begin();
        if (k >= rects.size()) k = rects.size() - 1;
        pts.push_back(rects[k].origin + rng.uniform() * rects[k].u + rng.uniform() * rects[k].v);
    }
    return pts;
}

inline std::vector<Rect> box_faces(const Vec3& lo, const Vec3& hi) {
    const Vec3 d = hi - lo;
    return {
        {lo, {d.x(), 0, 0}, {0, d.y(), 0}},                          // z = lo
        {{lo.x(), lo.y(), hi.z()}, {d.x(), 0, 0}, {0, d.y(), 0}},    // z = hi
        {lo, {d.x(), 0, 0}, {0, 0, d.z()}},                          // y = lo
        {{lo.x(), hi.y(), lo.z()}, {d.x(), 0, 0}, {0, 0, d.z()}},    // y = hi
        {lo, {0, d.y(), 0}, {0, 0, d.z()}},                          // x = lo
        {{hi.x(), lo.y(), lo.z()}, {0, d.y(), 0}, {0, 0, d.z()}},    // x = hi
    };
}

// Outer boundary of the L-shaped prism (unit footprint, height 0.4),
// enumerated explicitly so no interior seam faces are sampled.
inline std::vector<Rect> l_block_faces() {
    std::vector<Rect> faces;
    const double h = 0.4;
    // Footprint decomposed into [0,1]x[0,0.5] and [0,0.5]x[0.5,1].
    for (double z : {0.0, h}) {
        faces.push_back({{0, 0, z}, {1, 0, 0}, {0, 0.5, 0}});
        faces.push_back({{0, 0.5, z}, {0.5, 0, 0}, {0, 0.5, 0}});
    }
    // Side walls along the polygon boundary.
    faces.push_back({{0, 0, 0}, {1, 0, 0}, {0, 0, h}});      // y = 0
    faces.push_back({{1, 0, 0}, {0, 0.5, 0}, {0, 0, h}});    // x = 1
    faces.push_back({{0.5, 0.5, 0}, {0.5, 0, 0}, {0, 0, h}}); // y = 0.5, x in [0.5, 1]
    faces.push_back({{0.5, 0.5, 0}, {0, 0.5, 0}, {0, 0, h}}); // x = 0.5, y in [0.5, 1]
    faces.push_back({{0, 1, 0}, {0.5, 0, 0}, {0, 0, h}});    // y = 1
    faces.push_back({{0, 0, 0}, {0, 1, 0}, {0, 0, h}});      // x = 0
    return faces;
}

}  // namespace detail

// Surface-sampled synthetic object. Shapes: cube, l_block, cylinder, sphere.
// cylinder and sphere are rotationally symmetric (cylinder about its z axis).
inline ObjectModel make_object(const std::string& shape, std::size_t n_points, double scale,
                               std::uint64_t seed) {
    if (n_points < 8) throw std::invalid_argument("make_object: n_points must be >= 8");
    if (scale <= 0.0) throw std::invalid_argument("make_object: scale must be > 0");
    Rng rng(seed);
    ObjectModel obj;
    obj.id = shape;
    std::vector<Vec3> pts;
    if (shape == "cube") {
        const double half = 0.5 * scale;
        pts = detail::sample_rects(detail::box_faces(Vec3(-half, -half, -half), Vec3(half, half, half)),
                                   n_points, rng);
    } else if (shape == "l_block") {
        pts = detail::sample_rects(detail::l_block_faces(), n_points, rng);
        for (auto& p : pts) p *= scale;
    } else if (shape == "cylinder") {
        const double radius = 0.35 * scale;
        const double height = scale;
        const double lateral = 2.0 * M_PI * radius * height;
        const double cap = M_PI * radius * radius;
        const double total = lateral + 2.0 * cap;
        pts.reserve(n_points);
        for (std::size_t i = 0; i < n_points; ++i) {
            const double pick = rng.uniform() * total;
            const double theta = rng.uniform(0.0, 2.0 * M_PI);
            if (pick < lateral) {
                const double z = rng.uniform(-0.5, 0.5) * height;
                pts.emplace_back(radius * std::cos(theta), radius * std::sin(theta), z);
            } else {
                const double r = radius * std::sqrt(rng.uniform());
                const double z = pick < lateral + cap ? -0.5 * height : 0.5 * height;
                pts.emplace_back(r * std::cos(theta), r * std::sin(theta), z);
            }
        }
        obj.symmetric = true;
    } else if (shape == "sphere") {
        const double radius = 0.5 * scale;
        pts.reserve(n_points);
        for (std::size_t i = 0; i < n_points; ++i) {
            const double z = rng.uniform(-1.0, 1.0);
            const double phi = rng.uniform(0.0, 2.0 * M_PI);
            const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
            pts.emplace_back(radius * s * std::cos(phi), radius * s * std::sin(phi), radius * z);
        }
        obj.symmetric = true;
    } else {
        throw std::invalid_argument("make_object: unknown shape '" + shape + "'");
    }
    obj.cloud_cano.points = std::move(pts);
    const Vec3 centroid = obj.cloud_cano.centroid();
    for (auto& p : obj.cloud_cano.points) p -= centroid;
    obj.diameter = obj.cloud_cano.diameter();
    return obj;
}

// Pinhole projection to (pixel, depth) and back. Points outside the image
// are dropped; surviving points round-trip to < 1e-9 m.
inline PointCloud project_and_backproject(const PointCloud& points_camera_frame,
                                          const CameraIntrinsics& k) {
    k.check();
    points_camera_frame.check_attrs();
    PointCloud out;
    std::vector<Eigen::Index> kept;
    for (std::size_t i = 0; i < points_camera_frame.size(); ++i) {
        const Vec3& p = points_camera_frame.points[i];
        if (p.z() <= 0.0) {
            throw std::invalid_argument("project_and_backproject: non-positive depth");
        }
        const double u = k.fx * p.x() / p.z() + k.cx;
        const double v = k.fy * p.y() / p.z() + k.cy;
        if (u < 0.0 || u >= k.width || v < 0.0 || v >= k.height) continue;
        out.points.emplace_back((u - k.cx) * p.z() / k.fx, (v - k.cy) * p.z() / k.fy, p.z());
        kept.push_back(static_cast<Eigen::Index>(i));
    }
    if (points_camera_frame.has_attrs()) {
        out.attrs.resize(static_cast<Eigen::Index>(kept.size()), points_camera_frame.attrs.cols());
        for (std::size_t i = 0; i < kept.size(); ++i) {
            out.attrs.row(static_cast<Eigen::Index>(i)) = points_camera_frame.attrs.row(kept[i]);
        }
    }
    return out;
}

inline Eigen::VectorXd id_embedding(const std::string& object_id) {
    Rng rng(detail::fnv1a(object_id));
    Eigen::VectorXd e(kIdEmbedDim);
    for (int i = 0; i < kIdEmbedDim; ++i) e(i) = rng.uniform(-1.0, 1.0);
    return e;
}

// Renders one observation: pose the canonical cloud, optionally cull the
// back-facing hemisphere, cut a contiguous occlusion patch, drop points
// leaving the image, add sensor noise, and attach per-point appearance
// features (normalized canonical coordinates + object-id embedding).
inline Sample render_sample(const ObjectModel& obj, const RigidTransform& pose,
                            const CameraIntrinsics& k, const ViewParams& view, std::uint64_t seed) {
    k.check();
    if (obj.cloud_cano.empty()) throw std::invalid_argument("render_sample: empty object cloud");
    if (view.noise_sigma < 0.0 || view.occlusion_fraction < 0.0 || view.occlusion_fraction > 1.0) {
        throw std::invalid_argument("render_sample: invalid view parameters");
    }
    if (view.model_sample_count < 1) {
        throw std::invalid_argument("render_sample: model_sample_count must be >= 1");
    }
    Rng rng(seed);
    const Mat3 r = quat_to_rotmat(pose.rotation);

    std::vector<std::size_t> kept;
    std::vector<Vec3> cam;
    kept.reserve(obj.cloud_cano.size());
    cam.reserve(obj.cloud_cano.size());
    for (std::size_t i = 0; i < obj.cloud_cano.size(); ++i) {
        const Vec3 p = r * obj.cloud_cano.points[i] + pose.translation;
        if (p.z() <= 0.0) {
            throw std::invalid_argument("render_sample: pose places object behind the camera");
        }
        kept.push_back(i);
        cam.push_back(p);
    }

    if (view.cull) {
        std::vector<std::size_t> kept2;
        std::vector<Vec3> cam2;
        for (std::size_t j = 0; j < kept.size(); ++j) {
            const Vec3& cano = obj.cloud_cano.points[kept[j]];
            const double n = cano.norm();
            if (n > 0.0) {
                const Vec3 outward = r * (cano / n);
                if (outward.dot(cam[j].normalized()) >= 0.0) continue;  // faces away
            }
            kept2.push_back(kept[j]);
            cam2.push_back(cam[j]);
        }
        kept.swap(kept2);
        cam.swap(cam2);
        if (kept.empty()) throw EmptyViewError("render_sample: all points culled");
    }

    if (view.occlusion_fraction > 0.0 && !kept.empty()) {
        const std::size_t cut = static_cast<std::size_t>(
            std::llround(view.occlusion_fraction * static_cast<double>(kept.size())));
        if (cut >= kept.size()) throw EmptyViewError("render_sample: occlusion removed all points");
        if (cut > 0) {
            const std::size_t center = rng.index(kept.size());
            std::vector<std::size_t> order(kept.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::nth_element(order.begin(), order.begin() + cut, order.end(),
                             [&](std::size_t a, std::size_t b) {
                                 return (cam[a] - cam[center]).squaredNorm() <
                                        (cam[b] - cam[center]).squaredNorm();
                             });
            order.resize(cut);
            std::vector<bool> removed(kept.size(), false);
            for (std::size_t j : order) removed[j] = true;
            std::vector<std::size_t> kept2;
            std::vector<Vec3> cam2;
            for (std::size_t j = 0; j < kept.size(); ++j) {
                if (removed[j]) continue;
                kept2.push_back(kept[j]);
                cam2.push_back(cam[j]);
            }
            kept.swap(kept2);
            cam.swap(cam2);
        }
    }

    // Frustum filter via the camera round trip.
    {
        std::vector<std::size_t> kept2;
        std::vector<Vec3> cam2;
        for (std::size_t j = 0; j < kept.size(); ++j) {
            const Vec3& p = cam[j];
            const double u = k.fx * p.x() / p.z() + k.cx;
            const double v = k.fy * p.y() / p.z() + k.cy;
            if (u < 0.0 || u >= k.width || v < 0.0 || v >= k.height) continue;
            kept2.push_back(kept[j]);
            cam2.emplace_back((u - k.cx) * p.z() / k.fx, (v - k.cy) * p.z() / k.fy, p.z());
        }
        kept.swap(kept2);
        cam.swap(cam2);
        if (kept.empty()) throw EmptyViewError("render_sample: no points left inside the image");
    }

    if (view.noise_sigma > 0.0) {
        for (auto& p : cam) {
            p += Vec3(rng.normal(0.0, view.noise_sigma), rng.normal(0.0, view.noise_sigma),
                      rng.normal(0.0, view.noise_sigma));
        }
    }

    Sample sample;
    sample.object_id = obj.id;
    sample.pose_gt = pose;
    sample.observed.points = std::move(cam);
    const Eigen::VectorXd embed = id_embedding(obj.id);
    sample.observed.attrs.resize(static_cast<Eigen::Index>(kept.size()), kAppearanceDim);
    const double half_diam = std::max(0.5 * obj.diameter, 1e-12);
    for (std::size_t j = 0; j < kept.size(); ++j) {
        const Vec3 cano = obj.cloud_cano.points[kept[j]] / half_diam;
        sample.observed.attrs.block(static_cast<Eigen::Index>(j), 0, 1, 3) = cano.transpose();
        sample.observed.attrs.block(static_cast<Eigen::Index>(j), 3, 1, kIdEmbedDim) =
            embed.transpose();
    }
    sample.model_sampled =
        sample_points(obj.cloud_cano, static_cast<std::size_t>(view.model_sample_count),
                      rng.next_u64());
    return sample;
}

}  // namespace posegen
