#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace posegen::ad {

// Reverse-mode autodiff over dense row-major matrices. Scalars are 1x1,
// vectors are Nx1 or 1xN. A Tape owns the recorded operations of one
// session; leaves (parameters, constants) live outside the tape and survive
// Tape::clear() between steps.

template <typename S>
struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<S> values;
    std::vector<S> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::function<void()> backprop;  // accumulates this->grad into parents
    std::vector<int> argmin;         // per-row winner for min_rows

    int size() const { return rows * cols; }
};

template <typename S>
using EigenMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
Eigen::Map<EigenMat<S>> value_map(Node<S>& n) {
    return Eigen::Map<EigenMat<S>>(n.values.data(), n.rows, n.cols);
}

template <typename S>
Eigen::Map<const EigenMat<S>> value_map(const Node<S>& n) {
    return Eigen::Map<const EigenMat<S>>(n.values.data(), n.rows, n.cols);
}

template <typename S>
Eigen::Map<EigenMat<S>> grad_map(Node<S>& n) {
    return Eigen::Map<EigenMat<S>>(n.grad.data(), n.rows, n.cols);
}

template <typename S>
class Tensor {
public:
    Tensor() = default;

    bool valid() const { return static_cast<bool>(n_); }
    int rows() const { return n_->rows; }
    int cols() const { return n_->cols; }
    int size() const { return n_->size(); }
    std::vector<int> shape() const { return {n_->rows, n_->cols}; }
    bool requires_grad() const { return n_->requires_grad; }

    S value(int r, int c = 0) const { return n_->values[static_cast<std::size_t>(r) * n_->cols + c]; }
    S& value_ref(int r, int c = 0) { return n_->values[static_cast<std::size_t>(r) * n_->cols + c]; }
    S scalar() const { return n_->values[0]; }
    const std::vector<S>& values() const { return n_->values; }
    std::vector<S>& values() { return n_->values; }

    S grad(int r, int c = 0) const { return n_->grad[static_cast<std::size_t>(r) * n_->cols + c]; }
    const std::vector<S>& grads() const { return n_->grad; }
    bool has_grad() const { return !n_->grad.empty(); }

    void zero_grad() {
        for (auto& g : n_->grad) g = S(0);
    }

    const std::vector<int>& argmin() const { return n_->argmin; }

    Node<S>* node() const { return n_.get(); }

private:
    explicit Tensor(std::shared_ptr<Node<S>> n) : n_(std::move(n)) {}
    std::shared_ptr<Node<S>> n_;

    template <typename T>
    friend class Tape;
};

template <typename S>
class Tape {
public:
    using T = Tensor<S>;

    // ---- leaves -----------------------------------------------------------

    T leaf(int rows, int cols, bool requires_grad) {
        auto n = std::make_shared<Node<S>>();
        n->rows = rows;
        n->cols = cols;
        n->values.assign(static_cast<std::size_t>(rows) * cols, S(0));
        n->requires_grad = requires_grad;
        if (requires_grad) n->grad.assign(n->values.size(), S(0));
        return T(n);
    }

    T leaf_from(const Eigen::Ref<const Eigen::MatrixXd>& m, bool requires_grad) {
        T t = leaf(static_cast<int>(m.rows()), static_cast<int>(m.cols()), requires_grad);
        for (int r = 0; r < t.rows(); ++r)
            for (int c = 0; c < t.cols(); ++c) t.value_ref(r, c) = static_cast<S>(m(r, c));
        return t;
    }

    T constant(const Eigen::Ref<const Eigen::MatrixXd>& m) { return leaf_from(m, false); }

    T constant_scalar(double v) {
        T t = leaf(1, 1, false);
        t.value_ref(0, 0) = static_cast<S>(v);
        return t;
    }

    // ---- elementwise ------------------------------------------------------

    T add(const T& a, const T& b) {
        require_same_shape(a, b, "add");
        return binary(a, b, [](S x, S y) { return x + y; },
                      [](Node<S>& out, Node<S>& pa, Node<S>& pb) {
                          if (pa.requires_grad) grad_map(pa) += grad_map(out);
                          if (pb.requires_grad) grad_map(pb) += grad_map(out);
                      });
    }

    T sub(const T& a, const T& b) {
        require_same_shape(a, b, "sub");
        return binary(a, b, [](S x, S y) { return x - y; },
                      [](Node<S>& out, Node<S>& pa, Node<S>& pb) {
                          if (pa.requires_grad) grad_map(pa) += grad_map(out);
                          if (pb.requires_grad) grad_map(pb) -= grad_map(out);
                      });
    }

    T mul(const T& a, const T& b) {
        require_same_shape(a, b, "mul");
        return binary(a, b, [](S x, S y) { return x * y; },
                      [](Node<S>& out, Node<S>& pa, Node<S>& pb) {
                          if (pa.requires_grad)
                              grad_map(pa).array() += grad_map(out).array() * value_map(pb).array();
                          if (pb.requires_grad)
                              grad_map(pb).array() += grad_map(out).array() * value_map(pa).array();
                      });
    }

    T div(const T& a, const T& b) {
        require_same_shape(a, b, "div");
        return binary(a, b, [](S x, S y) { return x / y; },
                      [](Node<S>& out, Node<S>& pa, Node<S>& pb) {
                          if (pa.requires_grad)
                              grad_map(pa).array() += grad_map(out).array() / value_map(pb).array();
                          if (pb.requires_grad)
                              grad_map(pb).array() -= grad_map(out).array() * value_map(out).array() /
                                                      value_map(pb).array();
                      });
    }

    T scale(const T& a, double c) {
        T out = fresh(a.rows(), a.cols(), {a});
        const S sc = static_cast<S>(c);
        value_map(*out.node()) = value_map(*a.node()) * sc;
        attach(out, [o = out.node(), pa = a.node(), sc]() {
            if (pa->requires_grad) grad_map(*pa) += grad_map(*o) * sc;
        });
        return out;
    }

    T relu(const T& a) {
        return unary(a, [](S x) { return x > S(0) ? x : S(0); },
                     [](Node<S>& out, Node<S>& pa) {
                         auto g = grad_map(out);
                         auto x = value_map(pa);
                         grad_map(pa).array() += g.array() * (x.array() > S(0)).template cast<S>();
                     });
    }

    T sigmoid(const T& a) {
        return unary(a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
                     [](Node<S>& out, Node<S>& pa) {
                         auto s = value_map(out);
                         grad_map(pa).array() +=
                             grad_map(out).array() * s.array() * (S(1) - s.array());
                     });
    }

    T square(const T& a) {
        return unary(a, [](S x) { return x * x; },
                     [](Node<S>& out, Node<S>& pa) {
                         grad_map(pa).array() += S(2) * grad_map(out).array() * value_map(pa).array();
                     });
    }

    T sqrt(const T& a) {
        for (S v : a.values()) {
            if (v < S(0)) throw std::invalid_argument("sqrt: negative input");
        }
        return unary(a, [](S x) { return std::sqrt(x); },
                     [](Node<S>& out, Node<S>& pa) {
                         for (std::size_t i = 0; i < out.values.size(); ++i) {
                             if (out.values[i] > S(0)) {
                                 pa.grad[i] += out.grad[i] * S(0.5) / out.values[i];
                             }
                         }
                     });
    }

    // ---- linear algebra ---------------------------------------------------

    T matmul(const T& a, const T& b) {
        if (a.cols() != b.rows()) {
            throw std::invalid_argument("matmul: inner dimensions differ: " + shape_str(a) + " vs " +
                                        shape_str(b));
        }
        T out = fresh(a.rows(), b.cols(), {a, b});
        value_map(*out.node()).noalias() = value_map(*a.node()) * value_map(*b.node());
        attach(out, [o = out.node(), pa = a.node(), pb = b.node()]() {
            if (pa->requires_grad)
                grad_map(*pa).noalias() += grad_map(*o) * value_map(*pb).transpose();
            if (pb->requires_grad)
                grad_map(*pb).noalias() += value_map(*pa).transpose() * grad_map(*o);
        });
        return out;
    }

    T transpose(const T& a) {
        T out = fresh(a.cols(), a.rows(), {a});
        value_map(*out.node()) = value_map(*a.node()).transpose();
        attach(out, [o = out.node(), pa = a.node()]() {
            if (pa->requires_grad) grad_map(*pa) += grad_map(*o).transpose();
        });
        return out;
    }

    // ---- shape ops --------------------------------------------------------

    T broadcast(const T& a, int rows, int cols) {
        const bool row_ok = a.rows() == rows || a.rows() == 1;
        const bool col_ok = a.cols() == cols || a.cols() == 1;
        if (!row_ok || !col_ok) {
            throw std::invalid_argument("broadcast: cannot expand " + shape_str(a) + " to (" +
                                        std::to_string(rows) + "x" + std::to_string(cols) + ")");
        }
        T out = fresh(rows, cols, {a});
        auto src = value_map(*a.node());
        auto dst = value_map(*out.node());
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) dst(r, c) = src(a.rows() == 1 ? 0 : r, a.cols() == 1 ? 0 : c);
        attach(out, [o = out.node(), pa = a.node()]() {
            if (!pa->requires_grad) return;
            auto g = grad_map(*o);
            auto dst = grad_map(*pa);
            for (int r = 0; r < o->rows; ++r)
                for (int c = 0; c < o->cols; ++c)
                    dst(pa->rows == 1 ? 0 : r, pa->cols == 1 ? 0 : c) += g(r, c);
        });
        return out;
    }

    T concat(const std::vector<T>& parts, int axis) {
        if (parts.empty()) throw std::invalid_argument("concat: no inputs");
        check_axis(axis, "concat");
        int rows = parts[0].rows(), cols = parts[0].cols();
        for (std::size_t i = 1; i < parts.size(); ++i) {
            if (axis == 0) {
                if (parts[i].cols() != cols)
                    throw std::invalid_argument("concat: column mismatch: " + shape_str(parts[0]) +
                                                " vs " + shape_str(parts[i]));
                rows += parts[i].rows();
            } else {
                if (parts[i].rows() != rows)
                    throw std::invalid_argument("concat: row mismatch: " + shape_str(parts[0]) +
                                                " vs " + shape_str(parts[i]));
                cols += parts[i].cols();
            }
        }
        T out = fresh(rows, cols, parts);
        auto dst = value_map(*out.node());
        int offset = 0;
        for (const T& p : parts) {
            auto src = value_map(*p.node());
            if (axis == 0) dst.middleRows(offset, p.rows()) = src;
            else dst.middleCols(offset, p.cols()) = src;
            offset += axis == 0 ? p.rows() : p.cols();
        }
        std::vector<Node<S>*> parents;
        for (const T& p : parts) parents.push_back(p.node());
        attach(out, [o = out.node(), parents, axis]() {
            auto g = grad_map(*o);
            int offset = 0;
            for (Node<S>* p : parents) {
                const int extent = axis == 0 ? p->rows : p->cols;
                if (p->requires_grad) {
                    if (axis == 0) grad_map(*p) += g.middleRows(offset, extent);
                    else grad_map(*p) += g.middleCols(offset, extent);
                }
                offset += extent;
            }
        });
        return out;
    }

    T slice_cols(const T& a, int begin, int end) {
        if (begin < 0 || end > a.cols() || begin >= end) {
            throw std::invalid_argument("slice_cols: bad range [" + std::to_string(begin) + ", " +
                                        std::to_string(end) + ") for " + shape_str(a));
        }
        T out = fresh(a.rows(), end - begin, {a});
        value_map(*out.node()) = value_map(*a.node()).middleCols(begin, end - begin);
        attach(out, [o = out.node(), pa = a.node(), begin]() {
            if (pa->requires_grad) grad_map(*pa).middleCols(begin, o->cols) += grad_map(*o);
        });
        return out;
    }

    T gather_rows(const T& a, const std::vector<int>& idx) {
        for (int i : idx) {
            if (i < 0 || i >= a.rows())
                throw std::invalid_argument("gather_rows: index " + std::to_string(i) +
                                            " out of range for " + shape_str(a));
        }
        T out = fresh(static_cast<int>(idx.size()), a.cols(), {a});
        auto src = value_map(*a.node());
        auto dst = value_map(*out.node());
        for (std::size_t r = 0; r < idx.size(); ++r) dst.row(static_cast<int>(r)) = src.row(idx[r]);
        attach(out, [o = out.node(), pa = a.node(), idx]() {
            if (!pa->requires_grad) return;
            auto g = grad_map(*o);
            auto dst = grad_map(*pa);
            for (std::size_t r = 0; r < idx.size(); ++r) dst.row(idx[r]) += g.row(static_cast<int>(r));
        });
        return out;
    }

    // ---- reductions -------------------------------------------------------

    T sum(const T& a, int axis) { return reduce(a, axis, false); }
    T mean(const T& a, int axis) { return reduce(a, axis, true); }

    T softmax(const T& a, int axis) {
        check_axis(axis, "softmax");
        T out = fresh(a.rows(), a.cols(), {a});
        auto x = value_map(*a.node());
        auto y = value_map(*out.node());
        const int slices = axis == 0 ? a.cols() : a.rows();
        const int extent = axis == 0 ? a.rows() : a.cols();
        auto at = [axis](auto& m, int s, int e) -> decltype(m(0, 0))& {
            return axis == 0 ? m(e, s) : m(s, e);
        };
        for (int s = 0; s < slices; ++s) {
            S m = at(x, s, 0);
            for (int e = 1; e < extent; ++e) m = std::max(m, at(x, s, e));
            S total = S(0);
            for (int e = 0; e < extent; ++e) {
                at(y, s, e) = std::exp(at(x, s, e) - m);
                total += at(y, s, e);
            }
            for (int e = 0; e < extent; ++e) at(y, s, e) /= total;
        }
        attach(out, [o = out.node(), pa = a.node(), axis]() {
            if (!pa->requires_grad) return;
            auto y = value_map(*o);
            auto g = grad_map(*o);
            auto dst = grad_map(*pa);
            const int slices = axis == 0 ? o->cols : o->rows;
            const int extent = axis == 0 ? o->rows : o->cols;
            auto at = [axis](auto& m, int s, int e) -> decltype(m(0, 0))& {
                return axis == 0 ? m(e, s) : m(s, e);
            };
            for (int s = 0; s < slices; ++s) {
                S dot = S(0);
                for (int e = 0; e < extent; ++e) dot += at(y, s, e) * at(g, s, e);
                for (int e = 0; e < extent; ++e) {
                    at(dst, s, e) += at(y, s, e) * (at(g, s, e) - dot);
                }
            }
        });
        return out;
    }

    // Row-wise Euclidean norm: (n x c) -> (n x 1).
    T l2_norm_rows(const T& a) {
        T out = fresh(a.rows(), 1, {a});
        auto x = value_map(*a.node());
        for (int r = 0; r < a.rows(); ++r) out.value_ref(r, 0) = x.row(r).norm();
        attach(out, [o = out.node(), pa = a.node()]() {
            if (!pa->requires_grad) return;
            auto x = value_map(*pa);
            auto dst = grad_map(*pa);
            for (int r = 0; r < o->rows; ++r) {
                const S n = o->values[static_cast<std::size_t>(r)];
                if (n > S(0)) dst.row(r) += (o->grad[static_cast<std::size_t>(r)] / n) * x.row(r);
            }
        });
        return out;
    }

    // Row-wise minimum: (n x m) -> (n x 1). The subgradient flows only to the
    // argmin element; exact ties resolve to the lowest index.
    T min_rows(const T& a) {
        T out = fresh(a.rows(), 1, {a});
        out.node()->argmin.resize(a.rows());
        auto x = value_map(*a.node());
        for (int r = 0; r < a.rows(); ++r) {
            int best = 0;
            S bv = x(r, 0);
            for (int c = 1; c < a.cols(); ++c) {
                if (x(r, c) < bv) {
                    bv = x(r, c);
                    best = c;
                }
            }
            out.value_ref(r, 0) = bv;
            out.node()->argmin[r] = best;
        }
        attach(out, [o = out.node(), pa = a.node()]() {
            if (!pa->requires_grad) return;
            auto dst = grad_map(*pa);
            for (int r = 0; r < o->rows; ++r)
                dst(r, o->argmin[static_cast<std::size_t>(r)]) += o->grad[static_cast<std::size_t>(r)];
        });
        return out;
    }

    // ---- geometry-aware ops ------------------------------------------------

    // Full pairwise Euclidean distance matrix: (n x 3), (m x 3) -> (n x m).
    T pairwise_dist(const T& a, const T& b) {
        if (a.cols() != 3 || b.cols() != 3) {
            throw std::invalid_argument("pairwise_dist: expects (n x 3) inputs, got " + shape_str(a) +
                                        " and " + shape_str(b));
        }
        T out = fresh(a.rows(), b.rows(), {a, b});
        auto xa = value_map(*a.node());
        auto xb = value_map(*b.node());
        auto d = value_map(*out.node());
        for (int i = 0; i < a.rows(); ++i)
            for (int j = 0; j < b.rows(); ++j) d(i, j) = (xa.row(i) - xb.row(j)).norm();
        attach(out, [o = out.node(), pa = a.node(), pb = b.node()]() {
            auto xa = value_map(*pa);
            auto xb = value_map(*pb);
            auto d = value_map(*o);
            auto g = grad_map(*o);
            for (int i = 0; i < o->rows; ++i) {
                for (int j = 0; j < o->cols; ++j) {
                    const S gij = g(i, j);
                    if (gij == S(0) || d(i, j) <= S(0)) continue;
                    const S w = gij / d(i, j);
                    Eigen::Matrix<S, 1, 3> diff = xa.row(i) - xb.row(j);
                    if (pa->requires_grad) grad_map(*pa).row(i) += w * diff;
                    if (pb->requires_grad) grad_map(*pb).row(j) -= w * diff;
                }
            }
        });
        return out;
    }

    // Applies the quaternion rotation formula to every point: q (1 x 4, wxyz),
    // pts (m x 3) -> (m x 3). The quadratic formula is applied verbatim, so
    // q is expected to be normalized upstream for a proper rotation.
    T rotate_points(const T& q, const T& pts) {
        if (q.rows() != 1 || q.cols() != 4) {
            throw std::invalid_argument("rotate_points: quaternion must be (1 x 4), got " + shape_str(q));
        }
        if (pts.cols() != 3) {
            throw std::invalid_argument("rotate_points: points must be (m x 3), got " + shape_str(pts));
        }
        T out = fresh(pts.rows(), 3, {q, pts});
        Eigen::Matrix<S, 3, 3> r = quat_formula(q);
        value_map(*out.node()).noalias() = value_map(*pts.node()) * r.transpose();
        attach(out, [o = out.node(), pq = q.node(), pp = pts.node()]() {
            Eigen::Map<EigenMat<S>> g(o->grad.data(), o->rows, o->cols);
            Eigen::Map<const EigenMat<S>> p(pp->values.data(), pp->rows, pp->cols);
            const S w = pq->values[0], x = pq->values[1], y = pq->values[2], z = pq->values[3];
            if (pp->requires_grad) {
                Eigen::Matrix<S, 3, 3> r = quat_formula_raw(w, x, y, z);
                grad_map(*pp).noalias() += g * r;
            }
            if (pq->requires_grad) {
                Eigen::Matrix<S, 3, 3> m3 = g.transpose() * p;  // sum_i g_i p_i^T
                Eigen::Matrix<S, 3, 3> dw, dx, dy, dz;
                dw << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
                dx << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
                dy << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
                dz << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
                pq->grad[0] += (dw.array() * m3.array()).sum();
                pq->grad[1] += (dx.array() * m3.array()).sum();
                pq->grad[2] += (dy.array() * m3.array()).sum();
                pq->grad[3] += (dz.array() * m3.array()).sum();
            }
        });
        return out;
    }

    // Row-wise unit normalization of quaternions (n x 4). Rows with norm
    // below 1e-8 become the identity quaternion and pass no gradient.
    T quat_normalize(const T& a) {
        if (a.cols() != 4) {
            throw std::invalid_argument("quat_normalize: expects (n x 4), got " + shape_str(a));
        }
        T out = fresh(a.rows(), 4, {a});
        auto x = value_map(*a.node());
        auto y = value_map(*out.node());
        for (int r = 0; r < a.rows(); ++r) {
            const S n = x.row(r).norm();
            if (n < S(1e-8)) {
                y(r, 0) = S(1);
                y(r, 1) = y(r, 2) = y(r, 3) = S(0);
            } else {
                y.row(r) = x.row(r) / n;
            }
        }
        attach(out, [o = out.node(), pa = a.node()]() {
            if (!pa->requires_grad) return;
            auto x = value_map(*pa);
            auto y = value_map(*o);
            auto g = grad_map(*o);
            auto dst = grad_map(*pa);
            for (int r = 0; r < o->rows; ++r) {
                const S n = x.row(r).norm();
                if (n < S(1e-8)) continue;
                const S dot = y.row(r).dot(g.row(r));
                dst.row(r) += (g.row(r) - dot * y.row(r)) / n;
            }
        });
        return out;
    }

    // ---- composites -------------------------------------------------------

    // max(a, b) for scalars, written as a + relu(b - a); ties route the
    // gradient to a.
    T maximum(const T& a, const T& b) { return add(a, relu(sub(b, a))); }

    // ---- backward ---------------------------------------------------------

    void backward(const T& loss) {
        if (loss.rows() != 1 || loss.cols() != 1) {
            throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss));
        }
        if (!loss.node()->requires_grad) {
            throw std::invalid_argument("backward: loss does not require grad");
        }
        // Fresh pass: recorded (non-leaf) grads restart at zero, leaf grads
        // keep accumulating across calls until the caller resets them.
        for (auto& n : order_) {
            for (auto& g : n->grad) g = S(0);
        }
        loss.node()->grad[0] += S(1);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            if ((*it)->backprop) (*it)->backprop();
        }
    }

    void clear() { order_.clear(); }

    std::size_t recorded() const { return order_.size(); }

private:
    static std::string shape_str(const T& t) {
        return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
    }

    static void check_axis(int axis, const char* op) {
        if (axis != 0 && axis != 1) {
            throw std::invalid_argument(std::string(op) + ": axis must be 0 or 1, got " +
                                        std::to_string(axis));
        }
    }

    static void require_same_shape(const T& a, const T& b, const char* op) {
        if (a.rows() != b.rows() || a.cols() != b.cols()) {
            throw std::invalid_argument(std::string(op) + ": shape mismatch: " + shape_str(a) +
                                        " vs " + shape_str(b));
        }
    }

    static Eigen::Matrix<S, 3, 3> quat_formula_raw(S w, S x, S y, S z) {
        Eigen::Matrix<S, 3, 3> r;
        r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
             2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
             2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
        return r;
    }

    static Eigen::Matrix<S, 3, 3> quat_formula(const T& q) {
        return quat_formula_raw(q.value(0, 0), q.value(0, 1), q.value(0, 2), q.value(0, 3));
    }

    T fresh(int rows, int cols, const std::vector<T>& parents) {
        auto n = std::make_shared<Node<S>>();
        n->rows = rows;
        n->cols = cols;
        n->values.assign(static_cast<std::size_t>(rows) * cols, S(0));
        for (const T& p : parents) {
            if (p.node()->requires_grad) {
                n->requires_grad = true;
                break;
            }
        }
        if (n->requires_grad) n->grad.assign(n->values.size(), S(0));
        return T(n);
    }

    // Registers the backward closure and records the node; inference-only
    // results (no differentiable parent) stay off the tape.
    void attach(T& out, std::function<void()> backprop) {
        if (!out.node()->requires_grad) return;
        out.node()->backprop = std::move(backprop);
        order_.push_back(out.n_);
    }

    template <typename FwdFn, typename BwdFn>
    T unary(const T& a, FwdFn fwd, BwdFn bwd) {
        T out = fresh(a.rows(), a.cols(), {a});
        auto x = value_map(*a.node());
        auto y = value_map(*out.node());
        for (int r = 0; r < a.rows(); ++r)
            for (int c = 0; c < a.cols(); ++c) y(r, c) = fwd(x(r, c));
        attach(out, [o = out.node(), pa = a.node(), bwd]() {
            if (pa->requires_grad) bwd(*o, *pa);
        });
        return out;
    }

    template <typename FwdFn, typename BwdFn>
    T binary(const T& a, const T& b, FwdFn fwd, BwdFn bwd) {
        T out = fresh(a.rows(), a.cols(), {a, b});
        auto xa = value_map(*a.node());
        auto xb = value_map(*b.node());
        auto y = value_map(*out.node());
        for (int r = 0; r < a.rows(); ++r)
            for (int c = 0; c < a.cols(); ++c) y(r, c) = fwd(xa(r, c), xb(r, c));
        attach(out, [o = out.node(), pa = a.node(), pb = b.node(), bwd]() { bwd(*o, *pa, *pb); });
        return out;
    }

    T reduce(const T& a, int axis, bool average) {
        check_axis(axis, average ? "mean" : "sum");
        const int rows = axis == 0 ? 1 : a.rows();
        const int cols = axis == 0 ? a.cols() : 1;
        T out = fresh(rows, cols, {a});
        auto x = value_map(*a.node());
        auto y = value_map(*out.node());
        const S denom = static_cast<S>(axis == 0 ? a.rows() : a.cols());
        if (axis == 0) y = x.colwise().sum();
        else y = x.rowwise().sum();
        if (average) y /= denom;
        attach(out, [o = out.node(), pa = a.node(), axis, average, denom]() {
            if (!pa->requires_grad) return;
            auto g = grad_map(*o);
            auto dst = grad_map(*pa);
            const S w = average ? S(1) / denom : S(1);
            for (int r = 0; r < pa->rows; ++r)
                for (int c = 0; c < pa->cols; ++c) dst(r, c) += w * g(axis == 0 ? 0 : r, axis == 0 ? c : 0);
        });
        return out;
    }

    std::vector<std::shared_ptr<Node<S>>> order_;
};

}  // namespace posegen::ad
