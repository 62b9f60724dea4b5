#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "fd_check.hpp"
#include "posegen/autodiff.hpp"
#include "posegen/optim.hpp"
#include "posegen/random.hpp"

using posegen::Rng;
using posegen::ad::Tape;
using posegen::ad::Tensor;

namespace {

constexpr double kPrimitiveTol = 1e-4;
constexpr int kShapesPerOp = 50;

int rand_dim(Rng& rng) { return 1 + static_cast<int>(rng.index(6)); }

}  // namespace

TEST_CASE("elementwise forward basics") {
    Tape<double> tape;
    auto a = tape.leaf_from(Eigen::MatrixXd{{1.0, -2.0}}, false);
    auto b = tape.leaf_from(Eigen::MatrixXd{{3.0, 5.0}}, false);
    CHECK(tape.add(a, b).value(0, 1) == 3.0);
    CHECK(tape.sub(a, b).value(0, 0) == -2.0);
    CHECK(tape.mul(a, b).value(0, 1) == -10.0);
    CHECK(tape.div(b, a).value(0, 1) == -2.5);
    CHECK(tape.square(a).value(0, 1) == 4.0);
    CHECK(tape.relu(a).value(0, 0) == 1.0);
    CHECK(tape.relu(a).value(0, 1) == 0.0);
    CHECK(tape.sigmoid(tape.leaf(1, 1, false)).value(0, 0) == Catch::Approx(0.5));
}

TEST_CASE("shape mismatch reports both shapes") {
    Tape<double> tape;
    auto a = tape.leaf(2, 3, false);
    auto b = tape.leaf(2, 4, false);
    CHECK_THROWS_WITH(tape.add(a, b), Catch::Matchers::ContainsSubstring("(2x3)") &&
                                          Catch::Matchers::ContainsSubstring("(2x4)"));
    CHECK_THROWS_AS(tape.matmul(a, b), std::invalid_argument);
}

TEST_CASE("softmax uniform case and row sums") {
    Tape<double> tape;
    auto x = tape.leaf_from(Eigen::MatrixXd{{0.0}, {0.0}, {0.0}}, false);
    auto s = tape.softmax(x, 0);
    for (int i = 0; i < 3; ++i) CHECK(s.value(i, 0) == Catch::Approx(1.0 / 3.0));

    Rng rng(11);
    auto m = fd::random_matrix(5, 7, rng);
    Tape<double> tape2;
    auto sm = tape2.softmax(tape2.leaf_from(m, false), 1);
    for (int r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 7; ++c) sum += sm.value(r, c);
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("relu backward at -1 and 2") {
    Tape<double> tape;
    auto x = tape.leaf_from(Eigen::MatrixXd{{-1.0, 2.0}}, true);
    auto loss = tape.sum(tape.relu(x), 1);
    tape.backward(loss);
    CHECK(x.grad(0, 0) == 0.0);
    CHECK(x.grad(0, 1) == 1.0);
}

TEST_CASE("min_rows ties route to the lowest index") {
    Tape<double> tape;
    auto x = tape.leaf_from(Eigen::MatrixXd{{2.0, 1.0, 1.0, 3.0}}, true);
    auto m = tape.min_rows(x);
    CHECK(m.value(0, 0) == 1.0);
    CHECK(m.argmin()[0] == 1);
    auto loss = tape.sum(m, 0);
    tape.backward(loss);
    CHECK(x.grad(0, 1) == 1.0);
    CHECK(x.grad(0, 2) == 0.0);
}

TEST_CASE("backward basics") {
    SECTION("mean gradient is 1/n") {
        Tape<double> tape;
        auto x = tape.leaf_from(Eigen::MatrixXd{{1.0}, {2.0}, {5.0}, {-1.0}}, true);
        auto loss = tape.mean(x, 0);
        tape.backward(loss);
        for (int i = 0; i < 4; ++i) CHECK(x.grad(i, 0) == Catch::Approx(0.25));
    }
    SECTION("x*x at 3 gives 6") {
        Tape<double> tape;
        auto x = tape.leaf_from(Eigen::MatrixXd{{3.0}}, true);
        auto loss = tape.mul(x, x);
        tape.backward(loss);
        CHECK(x.grad(0, 0) == Catch::Approx(6.0));
    }
    SECTION("repeated backward accumulates into leaves") {
        Tape<double> tape;
        auto x = tape.leaf_from(Eigen::MatrixXd{{3.0}}, true);
        auto loss = tape.mul(x, x);
        tape.backward(loss);
        tape.backward(loss);
        CHECK(x.grad(0, 0) == Catch::Approx(12.0));
    }
    SECTION("non-scalar loss rejected") {
        Tape<double> tape;
        auto x = tape.leaf(2, 2, true);
        auto y = tape.relu(x);
        CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
    }
}

TEST_CASE("finite-difference check for every primitive") {
    Rng rng(2024);
    auto check_op = [&](const char* name, auto&& make_inputs, const fd::Builder& build) {
        double worst = 0.0;
        for (int rep = 0; rep < kShapesPerOp; ++rep) {
            auto inputs = make_inputs(rep);
            const auto report = fd::check(build, inputs, rng.next_u64());
            worst = std::max(worst, report.max_rel_err);
        }
        INFO(name << " worst rel err " << worst);
        CHECK(worst < kPrimitiveTol);
    };

    auto two_same = [&](int) {
        const int r = rand_dim(rng), c = rand_dim(rng);
        return std::vector<Eigen::MatrixXd>{fd::random_matrix(r, c, rng), fd::random_matrix(r, c, rng)};
    };
    auto one = [&](int) {
        const int r = rand_dim(rng), c = rand_dim(rng);
        return std::vector<Eigen::MatrixXd>{fd::random_matrix(r, c, rng)};
    };

    check_op("add", two_same, [](auto& t, const auto& in) { return t.add(in[0], in[1]); });
    check_op("sub", two_same, [](auto& t, const auto& in) { return t.sub(in[0], in[1]); });
    check_op("mul", two_same, [](auto& t, const auto& in) { return t.mul(in[0], in[1]); });
    check_op("div",
             [&](int) {
                 const int r = rand_dim(rng), c = rand_dim(rng);
                 auto denom = fd::away_from_kinks(fd::random_matrix(r, c, rng), 0.3);
                 return std::vector<Eigen::MatrixXd>{fd::random_matrix(r, c, rng), denom};
             },
             [](auto& t, const auto& in) { return t.div(in[0], in[1]); });
    check_op("matmul",
             [&](int) {
                 const int m = rand_dim(rng), k = rand_dim(rng), n = rand_dim(rng);
                 return std::vector<Eigen::MatrixXd>{fd::random_matrix(m, k, rng),
                                                     fd::random_matrix(k, n, rng)};
             },
             [](auto& t, const auto& in) { return t.matmul(in[0], in[1]); });
    check_op("transpose", one, [](auto& t, const auto& in) { return t.transpose(in[0]); });
    check_op("relu",
             [&](int) {
                 const int r = rand_dim(rng), c = rand_dim(rng);
                 return std::vector<Eigen::MatrixXd>{fd::away_from_kinks(fd::random_matrix(r, c, rng))};
             },
             [](auto& t, const auto& in) { return t.relu(in[0]); });
    check_op("sigmoid", one, [](auto& t, const auto& in) { return t.sigmoid(in[0]); });
    check_op("square", one, [](auto& t, const auto& in) { return t.square(in[0]); });
    check_op("sqrt",
             [&](int) {
                 const int r = rand_dim(rng), c = rand_dim(rng);
                 return std::vector<Eigen::MatrixXd>{fd::random_matrix(r, c, rng, 0.1, 4.0)};
             },
             [](auto& t, const auto& in) { return t.sqrt(in[0]); });
    check_op("softmax0", one, [](auto& t, const auto& in) { return t.softmax(in[0], 0); });
    check_op("softmax1", one, [](auto& t, const auto& in) { return t.softmax(in[0], 1); });
    check_op("mean0", one, [](auto& t, const auto& in) { return t.mean(in[0], 0); });
    check_op("mean1", one, [](auto& t, const auto& in) { return t.mean(in[0], 1); });
    check_op("sum0", one, [](auto& t, const auto& in) { return t.sum(in[0], 0); });
    check_op("sum1", one, [](auto& t, const auto& in) { return t.sum(in[0], 1); });
    check_op("concat0", two_same,
             [](auto& t, const auto& in) { return t.concat({in[0], in[1]}, 0); });
    check_op("concat1", two_same,
             [](auto& t, const auto& in) { return t.concat({in[0], in[1]}, 1); });
    check_op("slice_cols",
             [&](int) {
                 const int r = rand_dim(rng);
                 return std::vector<Eigen::MatrixXd>{fd::random_matrix(r, 5, rng)};
             },
             [](auto& t, const auto& in) { return t.slice_cols(in[0], 1, 4); });
    check_op("gather_rows",
             [&](int) {
                 return std::vector<Eigen::MatrixXd>{fd::random_matrix(5, 3, rng)};
             },
             [](auto& t, const auto& in) { return t.gather_rows(in[0], {4, 0, 2, 0}); });
    check_op("broadcast_row",
             [&](int) {
                 const int c = rand_dim(rng);
                 return std::vector<Eigen::MatrixXd>{fd::random_matrix(1, c, rng)};
             },
             [](auto& t, const auto& in) { return t.broadcast(in[0], 6, in[0].cols()); });
    check_op("broadcast_col",
             [&](int) {
                 const int r = rand_dim(rng);
                 return std::vector<Eigen::MatrixXd>{fd::random_matrix(r, 1, rng)};
             },
             [](auto& t, const auto& in) { return t.broadcast(in[0], in[0].rows(), 5); });
    check_op("l2_norm_rows",
             [&](int) {
                 const int r = rand_dim(rng);
                 // keep rows away from the norm-zero singularity
                 return std::vector<Eigen::MatrixXd>{fd::random_matrix(r, 3, rng, 0.2, 2.0)};
             },
             [](auto& t, const auto& in) { return t.l2_norm_rows(in[0]); });
    check_op("min_rows",
             [&](int) {
                 const int r = rand_dim(rng), c = 1 + rand_dim(rng);
                 return std::vector<Eigen::MatrixXd>{fd::random_matrix(r, c, rng)};
             },
             [](auto& t, const auto& in) { return t.min_rows(in[0]); });
    check_op("scale", one, [](auto& t, const auto& in) { return t.scale(in[0], -1.7); });
    check_op("pairwise_dist",
             [&](int) {
                 const int n = 1 + rand_dim(rng), m = 1 + rand_dim(rng);
                 // disjoint value ranges keep all pair distances > 0
                 return std::vector<Eigen::MatrixXd>{fd::random_matrix(n, 3, rng, -2.0, -0.5),
                                                     fd::random_matrix(m, 3, rng, 0.5, 2.0)};
             },
             [](auto& t, const auto& in) { return t.pairwise_dist(in[0], in[1]); });
    check_op("rotate_points",
             [&](int) {
                 Eigen::MatrixXd q = fd::random_matrix(1, 4, rng, -1.0, 1.0);
                 q /= q.norm();
                 const int m = 1 + rand_dim(rng);
                 return std::vector<Eigen::MatrixXd>{q, fd::random_matrix(m, 3, rng)};
             },
             [](auto& t, const auto& in) { return t.rotate_points(in[0], in[1]); });
    check_op("quat_normalize",
             [&](int) {
                 const int r = rand_dim(rng);
                 Eigen::MatrixXd q = fd::random_matrix(r, 4, rng, -2.0, 2.0);
                 for (int i = 0; i < r; ++i) {
                     if (q.row(i).norm() < 0.1) q(i, 0) += 1.0;
                 }
                 return std::vector<Eigen::MatrixXd>{q};
             },
             [](auto& t, const auto& in) { return t.quat_normalize(in[0]); });
    check_op("maximum",
             [&](int) {
                 // scalar max via relu; keep |a-b| away from the kink
                 Eigen::MatrixXd a(1, 1), b(1, 1);
                 a(0, 0) = rng.uniform(-2.0, 2.0);
                 b(0, 0) = a(0, 0) + (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
                 return std::vector<Eigen::MatrixXd>{a, b};
             },
             [](auto& t, const auto& in) { return t.maximum(in[0], in[1]); });
}

TEST_CASE("composite graph finite-difference check") {
    // A fusion-flavored composite: matmul, softmax attention, pooling, norms.
    Rng rng(77);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<Eigen::MatrixXd> inputs{fd::random_matrix(4, 3, rng),
                                            fd::random_matrix(3, 6, rng),
                                            fd::random_matrix(6, 6, rng)};
        auto build = [](posegen::ad::Tape<double>& t,
                        const std::vector<posegen::ad::Tensor<double>>& in) {
            auto h = t.relu(t.matmul(in[0], in[1]));
            auto attn = t.softmax(t.scale(t.matmul(h, t.transpose(h)), 0.5), 1);
            auto mixed = t.matmul(attn, t.matmul(h, in[2]));
            auto pooled = t.mean(mixed, 0);
            return t.l2_norm_rows(pooled);
        };
        const auto report = fd::check(build, inputs, rng.next_u64());
        CHECK(report.max_rel_err < kPrimitiveTol);
    }
}

TEST_CASE("adam optimizer") {
    SECTION("zero gradient leaves parameters unchanged") {
        Tape<float> tape;
        auto p = tape.leaf_from(Eigen::MatrixXd{{1.5, -2.0}}, true);
        std::vector<Tensor<float>> params{p};
        posegen::ad::AdamState<float> state;
        posegen::ad::adam_step(params, 0.1, 0.9, 0.999, 1e-8, state);
        CHECK(p.value(0, 0) == 1.5f);
        CHECK(p.value(0, 1) == -2.0f);
    }
    SECTION("first step with unit gradient moves by about lr") {
        Tape<double> tape;
        auto p = tape.leaf_from(Eigen::MatrixXd{{0.0}}, true);
        auto x = tape.mul(p, tape.constant_scalar(1.0));
        tape.backward(x);  // gradient 1
        std::vector<Tensor<double>> params{p};
        posegen::ad::AdamState<double> state;
        posegen::ad::adam_step(params, 0.1, 0.9, 0.999, 1e-8, state);
        // bias-corrected mhat = 1, vhat = 1 -> step = lr / (1 + eps)
        CHECK(p.value(0, 0) == Catch::Approx(-0.1).epsilon(1e-6));
    }
    SECTION("quadratic bowl converges") {
        Tape<double> tape;
        auto p = tape.leaf_from(Eigen::MatrixXd{{3.0, -2.0}}, true);
        std::vector<Tensor<double>> params{p};
        posegen::ad::AdamState<double> state;
        const Eigen::MatrixXd target{{0.5, -0.25}};
        int steps = 0;
        for (; steps < 2000; ++steps) {
            Tape<double> step_tape;
            auto diff = step_tape.sub(p, step_tape.constant(target));
            auto loss = step_tape.sum(step_tape.square(diff), 1);
            p.zero_grad();
            step_tape.backward(loss);
            posegen::ad::adam_step(params, 0.01, 0.9, 0.999, 1e-8, state);
            if (std::abs(p.value(0, 0) - 0.5) < 1e-6 && std::abs(p.value(0, 1) + 0.25) < 1e-6) break;
        }
        CHECK(steps < 2000);
    }
    SECTION("missing gradients rejected") {
        Tape<double> tape;
        auto p = tape.leaf(1, 1, false);
        std::vector<Tensor<double>> params{p};
        posegen::ad::AdamState<double> state;
        CHECK_THROWS_AS(posegen::ad::adam_step(params, 0.1, 0.9, 0.999, 1e-8, state),
                        std::logic_error);
    }
}

TEST_CASE("checkpoint text round trip is bit exact") {
    Tape<float> tape;
    Rng rng(5);
    std::vector<std::pair<std::string, Tensor<float>>> named;
    auto a = tape.leaf(3, 4, true);
    for (auto& v : a.values()) v = static_cast<float>(rng.normal(0.0, 2.7));
    auto b = tape.leaf(1, 7, true);
    for (auto& v : b.values()) v = static_cast<float>(rng.uniform(-1e-12, 1e12));
    named.emplace_back("layer.w", a);
    named.emplace_back("layer.b", b);

    const auto path = std::filesystem::temp_directory_path() / "posegen_ckpt_test.txt";
    posegen::ad::save_weights(path.string(), named);
    const auto loaded = posegen::ad::load_weights(path.string());
    REQUIRE(loaded.size() == 2);
    for (const auto& [name, t] : named) {
        const auto& l = loaded.at(name);
        REQUIRE(l.rows == t.rows());
        REQUIRE(l.cols == t.cols());
        for (std::size_t i = 0; i < t.values().size(); ++i) {
            CHECK(static_cast<float>(l.values[i]) == t.values()[i]);  // exact
        }
    }
    std::filesystem::remove(path);
}
