#pragma once
// Reverse-mode differentiation over Matrix values. Nodes form a DAG linked by
// shared_ptr; backward() seeds the (scalar) root and replays hand-derived
// rules in reverse topological order. Only the operations the losses need are
// provided: affine layers, ReLU, row softmax, the Student-t assignment chain,
// and the three scalar objectives.

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lechpe/matrix.hpp"

namespace lechpe::ad {

struct DiffNode;
using Var = std::shared_ptr<DiffNode>;

struct DiffNode {
    Matrix value;
    Matrix grad;  // same shape as value, zero until backward() reaches it
    std::vector<Var> parents;
    std::function<void(const DiffNode&)> backward_rule;  // routes grad into parents
    bool requires_grad = false;
    const char* op = "";
};

// Generic node factory. Public so tests can build fixtures with deliberately
// wrong rules.
inline Var make_node(Matrix value, std::vector<Var> parents,
                     std::function<void(const DiffNode&)> rule, const char* op) {
    require_finite(value, op);
    auto n = std::make_shared<DiffNode>();
    n->grad = Matrix(value.rows(), value.cols(), 0.0);
    n->value = std::move(value);
    n->op = op;
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    n->parents = std::move(parents);
    if (n->requires_grad) n->backward_rule = std::move(rule);
    return n;
}

inline Var constant(Matrix v, const char* op = "constant") {
    return make_node(std::move(v), {}, nullptr, op);
}

inline Var parameter(Matrix v) {
    auto n = make_node(std::move(v), {}, nullptr, "parameter");
    n->requires_grad = true;
    return n;
}

inline double scalar_value(const Var& v) {
    if (v->value.rows() != 1 || v->value.cols() != 1) {
        throw std::invalid_argument(std::string("scalar_value: node '") + v->op + "' has shape " +
                                    v->value.shape_str());
    }
    return v->value(0, 0);
}

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    const Matrix& A = a->value;
    const Matrix& B = b->value;
    if (A.cols() != B.rows()) {
        throw std::invalid_argument("matmul: inner dimensions disagree, " + A.shape_str() +
                                    " vs " + B.shape_str());
    }
    Matrix out(A.rows(), B.cols(), 0.0);
    for (int i = 0; i < A.rows(); ++i) {
        for (int k = 0; k < A.cols(); ++k) {
            const double aik = A(i, k);
            for (int j = 0; j < B.cols(); ++j) out(i, j) += aik * B(k, j);
        }
    }
    return make_node(
        std::move(out), {a, b},
        [a, b](const DiffNode& self) {
            const Matrix& G = self.grad;
            const Matrix& A = a->value;
            const Matrix& B = b->value;
            if (a->requires_grad) {
                Matrix& dA = a->grad;
                for (int i = 0; i < A.rows(); ++i) {
                    for (int j = 0; j < B.cols(); ++j) {
                        const double g = G(i, j);
                        for (int k = 0; k < A.cols(); ++k) dA(i, k) += g * B(k, j);
                    }
                }
            }
            if (b->requires_grad) {
                Matrix& dB = b->grad;
                for (int i = 0; i < A.rows(); ++i) {
                    for (int k = 0; k < A.cols(); ++k) {
                        const double aik = A(i, k);
                        for (int j = 0; j < B.cols(); ++j) dB(k, j) += aik * G(i, j);
                    }
                }
            }
        },
        "matmul");
}

inline Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) {
        throw std::invalid_argument("add: shape mismatch, " + a->value.shape_str() + " vs " +
                                    b->value.shape_str());
    }
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b->value.data()[i];
    return make_node(
        std::move(out), {a, b},
        [a, b](const DiffNode& self) {
            if (a->requires_grad) {
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    a->grad.data()[i] += self.grad.data()[i];
            }
            if (b->requires_grad) {
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    b->grad.data()[i] += self.grad.data()[i];
            }
        },
        "add");
}

// a is NxC, bias is 1xC, added to every row
inline Var add_row_broadcast(const Var& a, const Var& bias) {
    const Matrix& A = a->value;
    const Matrix& B = bias->value;
    if (B.rows() != 1 || B.cols() != A.cols()) {
        throw std::invalid_argument("add_row_broadcast: bias " + B.shape_str() +
                                    " does not match " + A.shape_str());
    }
    Matrix out = A;
    for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < A.cols(); ++j) out(i, j) += B(0, j);
    return make_node(
        std::move(out), {a, bias},
        [a, bias](const DiffNode& self) {
            const Matrix& G = self.grad;
            if (a->requires_grad) {
                for (std::size_t i = 0; i < G.size(); ++i) a->grad.data()[i] += G.data()[i];
            }
            if (bias->requires_grad) {
                for (int i = 0; i < G.rows(); ++i)
                    for (int j = 0; j < G.cols(); ++j) bias->grad(0, j) += G(i, j);
            }
        },
        "add_row_broadcast");
}

inline Var scale(const Var& a, double c) {
    Matrix out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= c;
    return make_node(
        std::move(out), {a},
        [a, c](const DiffNode& self) {
            if (!a->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                a->grad.data()[i] += c * self.grad.data()[i];
        },
        "scale");
}

// elementwise max(0, x); subgradient 0 at the kink
inline Var relu(const Var& x) {
    Matrix out = x->value;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out.data()[i] < 0.0) out.data()[i] = 0.0;
    return make_node(
        std::move(out), {x},
        [x](const DiffNode& self) {
            if (!x->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (x->value.data()[i] > 0.0) x->grad.data()[i] += self.grad.data()[i];
        },
        "relu");
}

// rowwise softmax, stabilized by subtracting the row maximum
inline Var softmax_rows(const Var& logits) {
    const Matrix& X = logits->value;
    if (X.cols() < 1) throw std::invalid_argument("softmax_rows: no columns");
    Matrix out(X.rows(), X.cols());
    for (int i = 0; i < X.rows(); ++i) {
        double mx = X(i, 0);
        for (int j = 1; j < X.cols(); ++j) mx = std::max(mx, X(i, j));
        double sum = 0.0;
        for (int j = 0; j < X.cols(); ++j) {
            out(i, j) = std::exp(X(i, j) - mx);
            sum += out(i, j);
        }
        for (int j = 0; j < X.cols(); ++j) out(i, j) /= sum;
    }
    return make_node(
        std::move(out), {logits},
        [logits](const DiffNode& self) {
            if (!logits->requires_grad) return;
            const Matrix& Y = self.value;
            const Matrix& G = self.grad;
            for (int i = 0; i < Y.rows(); ++i) {
                double dot = 0.0;
                for (int j = 0; j < Y.cols(); ++j) dot += G(i, j) * Y(i, j);
                for (int j = 0; j < Y.cols(); ++j)
                    logits->grad(i, j) += Y(i, j) * (G(i, j) - dot);
            }
        },
        "softmax_rows");
}

// d2(i,j) = ||points_i - centers_j||^2
inline Var pairwise_sqdist(const Var& points, const Var& centers) {
    const Matrix& P = points->value;
    const Matrix& C = centers->value;
    if (P.cols() != C.cols()) {
        throw std::invalid_argument("pairwise_sqdist: dim mismatch, " + P.shape_str() + " vs " +
                                    C.shape_str());
    }
    Matrix out(P.rows(), C.rows());
    for (int i = 0; i < P.rows(); ++i) {
        for (int j = 0; j < C.rows(); ++j) {
            double s = 0.0;
            for (int d = 0; d < P.cols(); ++d) {
                const double diff = P(i, d) - C(j, d);
                s += diff * diff;
            }
            out(i, j) = s;
        }
    }
    return make_node(
        std::move(out), {points, centers},
        [points, centers](const DiffNode& self) {
            const Matrix& G = self.grad;
            const Matrix& P = points->value;
            const Matrix& C = centers->value;
            for (int i = 0; i < P.rows(); ++i) {
                for (int j = 0; j < C.rows(); ++j) {
                    const double g2 = 2.0 * G(i, j);
                    if (g2 == 0.0) continue;
                    for (int d = 0; d < P.cols(); ++d) {
                        const double diff = P(i, d) - C(j, d);
                        if (points->requires_grad) points->grad(i, d) += g2 * diff;
                        if (centers->requires_grad) centers->grad(j, d) -= g2 * diff;
                    }
                }
            }
        },
        "pairwise_sqdist");
}

// elementwise 1 / (1 + x), the Student-t kernel with one degree of freedom
inline Var inv_one_plus(const Var& x) {
    Matrix out = x->value;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = 1.0 / (1.0 + out.data()[i]);
    return make_node(
        std::move(out), {x},
        [x](const DiffNode& self) {
            if (!x->requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.value.data()[i];
                x->grad.data()[i] -= y * y * self.grad.data()[i];
            }
        },
        "inv_one_plus");
}

// y(i,j) = x(i,j) / sum_j x(i,j); inputs must have positive row sums
inline Var normalize_rows(const Var& x) {
    const Matrix& X = x->value;
    Matrix out(X.rows(), X.cols());
    std::vector<double> rowsum(static_cast<std::size_t>(X.rows()));
    for (int i = 0; i < X.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < X.cols(); ++j) s += X(i, j);
        if (s <= 0.0) throw std::invalid_argument("normalize_rows: non-positive row sum");
        rowsum[static_cast<std::size_t>(i)] = s;
        for (int j = 0; j < X.cols(); ++j) out(i, j) = X(i, j) / s;
    }
    return make_node(
        std::move(out), {x},
        [x, rowsum](const DiffNode& self) {
            if (!x->requires_grad) return;
            const Matrix& Y = self.value;
            const Matrix& G = self.grad;
            for (int i = 0; i < Y.rows(); ++i) {
                double dot = 0.0;
                for (int j = 0; j < Y.cols(); ++j) dot += G(i, j) * Y(i, j);
                const double inv = 1.0 / rowsum[static_cast<std::size_t>(i)];
                for (int j = 0; j < Y.cols(); ++j) x->grad(i, j) += (G(i, j) - dot) * inv;
            }
        },
        "normalize_rows");
}

// scalar <W, A>, used both as a reduction and as a probe in gradient checks
inline Var weighted_sum(const Var& a, Matrix w) {
    if (!a->value.same_shape(w)) {
        throw std::invalid_argument("weighted_sum: shape mismatch, " + a->value.shape_str() +
                                    " vs " + w.shape_str());
    }
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w.data()[i] * a->value.data()[i];
    auto wp = std::make_shared<Matrix>(std::move(w));
    return make_node(
        Matrix(1, 1, s), {a},
        [a, wp](const DiffNode& self) {
            if (!a->requires_grad) return;
            const double g = self.grad(0, 0);
            for (std::size_t i = 0; i < wp->size(); ++i)
                a->grad.data()[i] += g * wp->data()[i];
        },
        "weighted_sum");
}

constexpr double kLogClamp = 1e-12;

// mean over rows of -sum_j onehot(i,j) * log(probs(i,j)), log clamped at 1e-12
inline Var cross_entropy_mean(const Var& probs, Matrix onehot) {
    const Matrix& Q = probs->value;
    if (!Q.same_shape(onehot)) {
        throw std::invalid_argument("cross_entropy_mean: shape mismatch, " + Q.shape_str() +
                                    " vs " + onehot.shape_str());
    }
    const double invn = 1.0 / Q.rows();
    double loss = 0.0;
    for (std::size_t i = 0; i < onehot.size(); ++i) {
        const double t = onehot.data()[i];
        if (t != 0.0) loss -= t * std::log(std::max(Q.data()[i], kLogClamp));
    }
    auto tp = std::make_shared<Matrix>(std::move(onehot));
    return make_node(
        Matrix(1, 1, loss * invn), {probs},
        [probs, tp, invn](const DiffNode& self) {
            if (!probs->requires_grad) return;
            const double g = self.grad(0, 0) * invn;
            for (std::size_t i = 0; i < tp->size(); ++i) {
                const double t = tp->data()[i];
                const double q = probs->value.data()[i];
                if (t != 0.0 && q > kLogClamp) probs->grad.data()[i] -= g * t / q;
            }
        },
        "cross_entropy_mean");
}

// mean over rows of (pred - target)^2; pred is Nx1
inline Var mse_mean(const Var& pred, Matrix target) {
    const Matrix& P = pred->value;
    if (!P.same_shape(target)) {
        throw std::invalid_argument("mse_mean: shape mismatch, " + P.shape_str() + " vs " +
                                    target.shape_str());
    }
    if (P.size() == 0) throw std::invalid_argument("mse_mean: empty input");
    const double invn = 1.0 / P.rows();
    double loss = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
        const double d = target.data()[i] - P.data()[i];
        loss += d * d;
    }
    auto tp = std::make_shared<Matrix>(std::move(target));
    return make_node(
        Matrix(1, 1, loss * invn), {pred},
        [pred, tp, invn](const DiffNode& self) {
            if (!pred->requires_grad) return;
            const double g = self.grad(0, 0) * 2.0 * invn;
            for (std::size_t i = 0; i < tp->size(); ++i)
                pred->grad.data()[i] += g * (pred->value.data()[i] - tp->data()[i]);
        },
        "mse_mean");
}

// sum_ij p(i,j) * log(p(i,j) / q(i,j)), p treated as a constant target;
// terms with p = 0 contribute nothing, q clamped below at 1e-12.
// Returns the number of clamped entries through *clamped if given.
inline Var kl_div_const_target(const Var& q, Matrix p, int* clamped = nullptr) {
    const Matrix& Q = q->value;
    if (!Q.same_shape(p)) {
        throw std::invalid_argument("kl_div_const_target: shape mismatch, " + Q.shape_str() +
                                    " vs " + p.shape_str());
    }
    double loss = 0.0;
    int nclamped = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = p.data()[i];
        if (pi <= 0.0) continue;
        double qi = Q.data()[i];
        if (qi < kLogClamp) {
            qi = kLogClamp;
            ++nclamped;
        }
        loss += pi * std::log(pi / qi);
    }
    if (clamped) *clamped = nclamped;
    auto pp = std::make_shared<Matrix>(std::move(p));
    return make_node(
        Matrix(1, 1, loss), {q},
        [q, pp](const DiffNode& self) {
            if (!q->requires_grad) return;
            const double g = self.grad(0, 0);
            for (std::size_t i = 0; i < pp->size(); ++i) {
                const double pi = pp->data()[i];
                const double qi = q->value.data()[i];
                if (pi > 0.0 && qi > kLogClamp) q->grad.data()[i] -= g * pi / qi;
            }
        },
        "kl_div_const_target");
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

// Reverse topological replay from a scalar root. Gradients accumulate into
// node->grad; graphs are built fresh per step, so no zeroing pass is needed.
inline void backward(const Var& root) {
    if (root->value.rows() != 1 || root->value.cols() != 1) {
        throw std::invalid_argument(std::string("backward: root '") + root->op +
                                    "' is not scalar, shape " + root->value.shape_str());
    }
    std::vector<DiffNode*> order;
    std::unordered_set<DiffNode*> seen;
    std::vector<std::pair<DiffNode*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            DiffNode* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_rule) (*it)->backward_rule(**it);
    }
}

}  // namespace lechpe::ad
