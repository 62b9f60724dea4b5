#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "posegen/geometry.hpp"
#include "posegen/kdtree.hpp"
#include "posegen/ply.hpp"
#include "posegen/random.hpp"

using namespace posegen;

namespace {

Quaternion random_unit_quat(Rng& rng) {
    Quaternion q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    return q.normalized();
}

PointCloud random_cloud(std::size_t n, Rng& rng, double extent = 1.0) {
    PointCloud pc;
    for (std::size_t i = 0; i < n; ++i) {
        pc.points.emplace_back(rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                               rng.uniform(-extent, extent));
    }
    return pc;
}

}  // namespace

TEST_CASE("quat_to_rotmat on axis cases") {
    CHECK(quat_to_rotmat(Quaternion::identity()).isApprox(Mat3::Identity(), 1e-15));
    const Mat3 rx = quat_to_rotmat(Quaternion(0, 1, 0, 0));
    Mat3 expected;
    expected << 1, 0, 0, 0, -1, 0, 0, 0, -1;
    CHECK((rx - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("quat_to_rotmat rejects non-unit quaternions and names the norm") {
    CHECK_THROWS_WITH(quat_to_rotmat(Quaternion(0.9, 0, 0, 0)),
                      Catch::Matchers::ContainsSubstring("0.9"));
}

TEST_CASE("q and -q give the same rotation; det is +1; matrix is orthonormal") {
    Rng rng(101);
    for (int i = 0; i < 1000; ++i) {
        const Quaternion q = random_unit_quat(rng);
        const Quaternion neg(-q.w, -q.x, -q.y, -q.z);
        const Mat3 r = quat_to_rotmat(q);
        CHECK((r - quat_to_rotmat(neg)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(std::abs(r.determinant() - 1.0) < 1e-9);
        CHECK((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("rotmat_to_quat round trips, including near 180 degrees") {
    Rng rng(55);
    for (int i = 0; i < 500; ++i) {
        Quaternion q = random_unit_quat(rng);
        if (i % 3 == 0) {
            // Push toward 180-degree rotations where the trace formula cancels.
            q.w = rng.uniform(-1e-4, 1e-4);
            q = q.normalized();
        }
        const Mat3 r = quat_to_rotmat(q);
        const Quaternion back = rotmat_to_quat(r);
        CHECK((quat_to_rotmat(back) - r).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("transform_points") {
    Rng rng(7);
    PointCloud pc = random_cloud(20, rng);
    SECTION("identity leaves the cloud unchanged") {
        const PointCloud out = transform_points(RigidTransform::identity(), pc);
        for (std::size_t i = 0; i < pc.size(); ++i) CHECK((out.points[i] - pc.points[i]).norm() == 0.0);
    }
    SECTION("pure translation") {
        RigidTransform t(Quaternion::identity(), Vec3(1, 0, 0));
        PointCloud single;
        single.points.emplace_back(0, 0, 0);
        const PointCloud out = transform_points(t, single);
        CHECK((out.points[0] - Vec3(1, 0, 0)).norm() == 0.0);
    }
    SECTION("inverse round trip") {
        for (int i = 0; i < 100; ++i) {
            const RigidTransform t(random_unit_quat(rng), Vec3(rng.normal(), rng.normal(), rng.normal()));
            const PointCloud there = transform_points(t, pc);
            const PointCloud back = transform_points(inverse(t), there);
            for (std::size_t j = 0; j < pc.size(); ++j) {
                CHECK((back.points[j] - pc.points[j]).norm() < 1e-9);
            }
        }
    }
    SECTION("rigidity: pairwise distances preserved") {
        const RigidTransform t(random_unit_quat(rng), Vec3(0.3, -2, 1));
        const PointCloud out = transform_points(t, pc);
        for (std::size_t i = 0; i < pc.size(); ++i) {
            for (std::size_t j = i + 1; j < pc.size(); ++j) {
                const double before = (pc.points[i] - pc.points[j]).norm();
                const double after = (out.points[i] - out.points[j]).norm();
                CHECK(std::abs(before - after) < 1e-9);
            }
        }
    }
    SECTION("attributes carried through") {
        pc.attrs.setRandom(static_cast<Eigen::Index>(pc.size()), 4);
        const PointCloud out = transform_points(RigidTransform(random_unit_quat(rng), Vec3(1, 2, 3)), pc);
        CHECK(out.attrs == pc.attrs);
    }
    SECTION("empty cloud rejected") {
        CHECK_THROWS_AS(transform_points(RigidTransform::identity(), PointCloud{}),
                        std::invalid_argument);
    }
}

TEST_CASE("compose") {
    Rng rng(13);
    const RigidTransform t(random_unit_quat(rng), Vec3(0.5, -1, 2));
    SECTION("identity is neutral") {
        const RigidTransform c = compose(RigidTransform::identity(), t);
        CHECK(rotation_error(c, t) < 1e-9);
        CHECK(translation_error(c, t) < 1e-9);
    }
    SECTION("compose with inverse gives identity") {
        const RigidTransform c = compose(t, inverse(t));
        CHECK(c.rotation.angle() < 1e-9);
        CHECK(c.translation.norm() < 1e-9);
        CHECK((quat_to_rotmat(c.rotation) - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    }
    SECTION("matches sequential application and is associative") {
        PointCloud pc = random_cloud(10, rng);
        for (int i = 0; i < 50; ++i) {
            const RigidTransform a(random_unit_quat(rng), Vec3(rng.normal(), rng.normal(), rng.normal()));
            const RigidTransform b(random_unit_quat(rng), Vec3(rng.normal(), rng.normal(), rng.normal()));
            const RigidTransform c(random_unit_quat(rng), Vec3(rng.normal(), rng.normal(), rng.normal()));
            const PointCloud via_compose = transform_points(compose(a, b), pc);
            const PointCloud sequential = transform_points(a, transform_points(b, pc));
            for (std::size_t j = 0; j < pc.size(); ++j) {
                CHECK((via_compose.points[j] - sequential.points[j]).norm() < 1e-9);
            }
            const RigidTransform left = compose(compose(a, b), c);
            const RigidTransform right = compose(a, compose(b, c));
            CHECK(rotation_error(left, right) < 1e-9);
            CHECK(translation_error(left, right) < 1e-9);
        }
    }
}

TEST_CASE("sample_points") {
    Rng rng(3);
    PointCloud pc = random_cloud(2000, rng);
    SECTION("n equal to size gives a permutation") {
        const PointCloud out = sample_points(pc, pc.size(), 9);
        std::set<std::array<double, 3>> in_set, out_set;
        for (const auto& p : pc.points) in_set.insert({p.x(), p.y(), p.z()});
        for (const auto& p : out.points) out_set.insert({p.x(), p.y(), p.z()});
        CHECK(in_set == out_set);
    }
    SECTION("512 of 2000 without replacement are distinct") {
        const PointCloud out = sample_points(pc, 512, 42);
        REQUIRE(out.size() == 512);
        std::set<std::array<double, 3>> seen;
        for (const auto& p : out.points) seen.insert({p.x(), p.y(), p.z()});
        CHECK(seen.size() == 512);
    }
    SECTION("same seed reproduces; more than size samples with replacement") {
        const PointCloud a = sample_points(pc, 100, 7);
        const PointCloud b = sample_points(pc, 100, 7);
        for (std::size_t i = 0; i < 100; ++i) CHECK(a.points[i] == b.points[i]);
        const PointCloud big = sample_points(pc, 2500, 7);
        CHECK(big.size() == 2500);
    }
    SECTION("errors") {
        CHECK_THROWS_AS(sample_points(PointCloud{}, 5, 1), std::invalid_argument);
    }
}

TEST_CASE("random_pose") {
    SECTION("zero bounds give the identity") {
        const RigidTransform t = random_pose(0.0, 0.0, 4);
        CHECK(t.rotation.angle() == 0.0);
        CHECK(t.translation.norm() == 0.0);
    }
    SECTION("bounds respected over 10000 samples") {
        double max_angle = 0.0, max_norm = 0.0;
        for (int i = 0; i < 10000; ++i) {
            const RigidTransform t = random_pose(M_PI, 1.0, 1000 + i);
            max_angle = std::max(max_angle, t.rotation.angle());
            max_norm = std::max(max_norm, t.translation.norm());
            CHECK(t.rotation.is_unit(1e-12));
        }
        CHECK(max_angle <= M_PI + 1e-12);
        CHECK(max_norm <= 1.0 + 1e-12);
        // Uniform angle and ball radius actually cover their ranges.
        CHECK(max_angle > 0.99 * M_PI);
        CHECK(max_norm > 0.95);
    }
    SECTION("fixed seed reproduces") {
        const RigidTransform a = random_pose(1.0, 1.0, 88);
        const RigidTransform b = random_pose(1.0, 1.0, 88);
        CHECK(rotation_error(a, b) == 0.0);
        CHECK(translation_error(a, b) == 0.0);
    }
    SECTION("negative bounds rejected") {
        CHECK_THROWS_AS(random_pose(-0.1, 1.0, 1), std::invalid_argument);
        CHECK_THROWS_AS(random_pose(0.1, -1.0, 1), std::invalid_argument);
    }
}

TEST_CASE("kd-tree nearest matches brute force") {
    Rng rng(31);
    const PointCloud cloud = random_cloud(700, rng);
    KdTree3 tree(cloud.points);
    for (int i = 0; i < 300; ++i) {
        const Vec3 q(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2));
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : cloud.points) best = std::min(best, (p - q).norm());
        const auto hit = tree.nearest(q);
        CHECK(std::abs(hit.distance - best) < 1e-12);
        CHECK((cloud.points[static_cast<std::size_t>(hit.index)] - q).norm() ==
              Catch::Approx(hit.distance));
    }
    CHECK(tree.nearest_within(Vec3(5, 5, 5), 0.1).index == -1);
}

TEST_CASE("PLY round trip") {
    Rng rng(17);
    PointCloud pc = random_cloud(50, rng, 0.3);
    const auto dir = std::filesystem::temp_directory_path();
    SECTION("plain xyz round trips exactly") {
        const auto path = (dir / "posegen_test_plain.ply").string();
        write_ply(path, pc);
        const PointCloud back = read_ply(path);
        REQUIRE(back.size() == pc.size());
        for (std::size_t i = 0; i < pc.size(); ++i) CHECK(back.points[i] == pc.points[i]);
        std::filesystem::remove(path);
    }
    SECTION("colors survive as attributes") {
        pc.attrs.resize(static_cast<Eigen::Index>(pc.size()), 3);
        for (Eigen::Index i = 0; i < pc.attrs.rows(); ++i) {
            pc.attrs(i, 0) = 10;
            pc.attrs(i, 1) = 128;
            pc.attrs(i, 2) = 250;
        }
        const auto path = (dir / "posegen_test_color.ply").string();
        write_ply(path, pc, true);
        const PointCloud back = read_ply(path);
        REQUIRE(back.attrs.rows() == pc.attrs.rows());
        CHECK(back.attrs(0, 1) == 128);
        std::filesystem::remove(path);
    }
    SECTION("unknown properties are skipped") {
        const auto path = (dir / "posegen_test_unknown.ply").string();
        std::ofstream out(path);
        out << "ply\nformat ascii 1.0\nelement vertex 2\n"
               "property float x\nproperty float y\nproperty float z\n"
               "property float confidence\nend_header\n"
               "1 2 3 0.5\n4 5 6 0.25\n";
        out.close();
        const PointCloud back = read_ply(path);
        REQUIRE(back.size() == 2);
        CHECK(back.points[1] == Vec3(4, 5, 6));
        std::filesystem::remove(path);
    }
    SECTION("binary format rejected") {
        const auto path = (dir / "posegen_test_binary.ply").string();
        std::ofstream out(path);
        out << "ply\nformat binary_little_endian 1.0\nend_header\n";
        out.close();
        CHECK_THROWS_AS(read_ply(path), std::runtime_error);
        std::filesystem::remove(path);
    }
}
