#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "posegen/geometry.hpp"

namespace posegen {

// Static 3-d kd-tree over a point set, median split on the widest axis.
// Queries return the exact nearest neighbor (equidistant ties may resolve to
// either index; the distance is identical).
class KdTree3 {
public:
    explicit KdTree3(const std::vector<Vec3>& points) : points_(points) {
        if (points_.empty()) {
            throw std::invalid_argument("KdTree3: empty point set");
        }
        order_.resize(points_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
        nodes_.reserve(2 * points_.size());
        root_ = build(0, static_cast<int>(order_.size()));
    }

    struct Hit {
        int index = -1;
        double distance = std::numeric_limits<double>::infinity();
    };

    Hit nearest(const Vec3& query) const {
        Hit best;
        double best_sq = std::numeric_limits<double>::infinity();
        search(root_, query, best, best_sq);
        best.distance = std::sqrt(best_sq);
        return best;
    }

    // Nearest neighbor no farther than max_dist; index -1 if none qualifies.
    Hit nearest_within(const Vec3& query, double max_dist) const {
        Hit h = nearest(query);
        if (h.distance > max_dist) return Hit{};
        return h;
    }

    std::size_t size() const { return points_.size(); }

private:
    struct Node {
        int axis = -1;        // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf range in order_
    };

    static constexpr int kLeafSize = 16;

    int build(int begin, int end) {
        Node node;
        if (end - begin <= kLeafSize) {
            node.begin = begin;
            node.end = end;
            nodes_.push_back(node);
            return static_cast<int>(nodes_.size()) - 1;
        }
        Vec3 lo = points_[order_[begin]], hi = lo;
        for (int i = begin + 1; i < end; ++i) {
            lo = lo.cwiseMin(points_[order_[i]]);
            hi = hi.cwiseMax(points_[order_[i]]);
        }
        int axis = 0;
        (hi - lo).maxCoeff(&axis);
        const int mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
        node.axis = axis;
        node.split = points_[order_[mid]][axis];
        const int self = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        const int left = build(begin, mid);
        const int right = build(mid, end);
        nodes_[self].left = left;
        nodes_[self].right = right;
        return self;
    }

    void search(int node_id, const Vec3& q, Hit& best, double& best_sq) const {
        const Node& node = nodes_[node_id];
        if (node.axis < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                const int idx = order_[i];
                const double d = (points_[idx] - q).squaredNorm();
                if (d < best_sq) {
                    best_sq = d;
                    best.index = idx;
                }
            }
            return;
        }
        const double delta = q[node.axis] - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        search(near, q, best, best_sq);
        if (delta * delta < best_sq) {
            search(far, q, best, best_sq);
        }
    }

    std::vector<Vec3> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace posegen
