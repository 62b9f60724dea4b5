#pragma once

// Central finite-difference gradient checking used across the test suites.
// The probe loss is sum(w .* f(inputs)) for a fixed random weighting w, so a
// single backward pass checks the full Jacobian against (L(x+h) - L(x-h)) / 2h.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <vector>

#include "posegen/autodiff.hpp"
#include "posegen/random.hpp"

namespace fd {

using Builder = std::function<posegen::ad::Tensor<double>(
    posegen::ad::Tape<double>&, const std::vector<posegen::ad::Tensor<double>>&)>;

struct Report {
    double max_rel_err = 0.0;
    int checked = 0;
};

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double probe_loss(const Builder& build, const std::vector<Eigen::MatrixXd>& inputs,
                         const Eigen::MatrixXd& w) {
    posegen::ad::Tape<double> tape;
    std::vector<posegen::ad::Tensor<double>> leaves;
    for (const auto& m : inputs) leaves.push_back(tape.constant(m));
    auto out = build(tape, leaves);
    double loss = 0.0;
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c) loss += w(r, c) * out.value(r, c);
    return loss;
}

inline Report check(const Builder& build, std::vector<Eigen::MatrixXd> inputs, std::uint64_t seed,
                    double h = 1e-5) {
    posegen::ad::Tape<double> tape;
    std::vector<posegen::ad::Tensor<double>> leaves;
    for (const auto& m : inputs) leaves.push_back(tape.leaf_from(m, true));
    auto out = build(tape, leaves);

    posegen::Rng rng(seed);
    Eigen::MatrixXd w(out.rows(), out.cols());
    for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-1.0, 1.0);

    // Analytic gradient of sum(w .* out).
    auto weighted = tape.mul(out, tape.constant(w));
    auto loss = tape.sum(tape.sum(weighted, 0), 1);
    tape.backward(loss);

    Report report;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        for (int r = 0; r < inputs[t].rows(); ++r) {
            for (int c = 0; c < inputs[t].cols(); ++c) {
                auto plus = inputs;
                auto minus = inputs;
                plus[t](r, c) += h;
                minus[t](r, c) -= h;
                const double numeric =
                    (probe_loss(build, plus, w) - probe_loss(build, minus, w)) / (2.0 * h);
                const double analytic = leaves[t].grad(r, c);
                report.max_rel_err = std::max(report.max_rel_err, rel_err(analytic, numeric));
                ++report.checked;
            }
        }
    }
    return report;
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, posegen::Rng& rng, double lo = -2.0,
                                     double hi = 2.0) {
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
    return m;
}

// Pushes values away from zero so relu kinks and sqrt singularities are not
// sampled within finite-difference reach.
inline Eigen::MatrixXd away_from_kinks(Eigen::MatrixXd m, double margin = 1e-3) {
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
            if (std::abs(m(r, c)) < margin) m(r, c) += m(r, c) >= 0.0 ? margin : -margin;
        }
    }
    return m;
}

}  // namespace fd
