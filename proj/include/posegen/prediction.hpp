#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "posegen/geometry.hpp"

namespace posegen {

// N per-point pose hypotheses with softmax-normalized confidences.
struct PosePrediction {
    std::vector<Quaternion> quats;
    std::vector<Vec3> trans;
    std::vector<double> conf;

    std::size_t size() const { return quats.size(); }

    void check() const {
        if (quats.size() != trans.size() || quats.size() != conf.size()) {
            throw std::invalid_argument("PosePrediction: field lengths differ");
        }
        if (quats.empty()) {
            throw std::invalid_argument("PosePrediction: empty prediction");
        }
        double sum = 0.0;
        for (double c : conf) sum += c;
        if (std::abs(sum - 1.0) > 1e-6) {
            throw std::invalid_argument("PosePrediction: confidences sum to " + std::to_string(sum) +
                                        ", expected 1");
        }
    }
};

// Pose at the highest-confidence prediction; ties break to the lowest index.
inline RigidTransform select_final(const PosePrediction& pred) {
    pred.check();
    std::size_t best = 0;
    for (std::size_t i = 1; i < pred.size(); ++i) {
        if (pred.conf[i] > pred.conf[best]) best = i;
    }
    return {pred.quats[best].normalized(), pred.trans[best]};
}

}  // namespace posegen
