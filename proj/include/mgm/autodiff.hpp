#pragma once

// Define-by-run reverse-mode differentiation over rank-2 Tensors.
//
// Each op builds a Node holding its value and a closure that, given the
// node's accumulated gradient, adds contributions into its parents. A new
// tape is recorded on every forward pass; parameters are long-lived leaves.

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "mgm/error.hpp"
#include "mgm/rng.hpp"
#include "mgm/tensor.hpp"

namespace mgm {

struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    bool requires_grad = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Node&)> backward;

    void accumulate(const Tensor& g) {
        if (grad.empty()) {
            grad = g;
            return;
        }
        auto dst = grad.values();
        auto src = g.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    Tensor& grad_slot() {
        if (grad.empty()) grad = Tensor(value.shape(), 0.0);
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Var leaf(Tensor value, bool requires_grad, std::string name = {}) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        n->name = std::move(name);
        return Var(std::move(n));
    }

    static Var constant(Tensor value) { return leaf(std::move(value), false); }

    bool valid() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad_slot() { return node_->grad_slot(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool r) { node_->requires_grad = r; }
    const std::string& name() const { return node_->name; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t rows() const { return node_->value.rows(); }
    std::size_t cols() const { return node_->value.cols(); }
    double item() const { return node_->value.item(); }
    void zero_grad() { node_->grad = Tensor(node_->value.shape(), 0.0); }
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const { return node_; }

    /// Reverse sweep from a scalar. Gradients accumulate into every reachable
    /// node that requires grad; frozen leaves are never touched.
    void backward() const;

private:
    std::shared_ptr<Node> node_;
};

inline void Var::backward() const {
    if (node_->value.size() != 1) throw ShapeError("backward() requires a scalar output");
    if (!node_->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (n->backward) n->grad = Tensor();  // intermediates start fresh
    }
    node_->grad = Tensor::scalar(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

inline Var detach(const Var& v) { return Var::constant(v.value()); }

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(const Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        n->requires_grad = true;
        for (auto& in : inputs) n->parents.push_back(in.ptr());
        n->backward = std::move(bw);
    }
    return Var(std::move(n));
}

inline void add_to(Node* target, const Tensor& g) {
    if (target->requires_grad) target->accumulate(g);
}

inline void check_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

template <typename F>
Tensor map(const Tensor& t, F f) {
    Tensor out = t;
    for (auto& x : out.values()) x = f(x);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
    Tensor out = dense_matmul(a.value(), b.value());
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_op(std::move(out), {a, b}, [an, bn](const Node& self) {
        if (an->requires_grad) an->accumulate(dense_matmul(self.grad, transpose(bn->value)));
        if (bn->requires_grad) bn->accumulate(dense_matmul(transpose(an->value), self.grad));
    });
}

/// Sparse-dense product; differentiable in the dense operand only.
inline Var spmm(std::shared_ptr<const SparseMatrix> adj, const Var& x) {
    Tensor out = adj->multiply(x.value());
    Node* xn = x.node();
    return detail::make_op(std::move(out), {x}, [xn, adj](const Node& self) {
        xn->accumulate(adj->multiply_transposed(self.grad));
    });
}

inline Var spmm(const SparseMatrix& adj, const Var& x) {
    return spmm(std::make_shared<const SparseMatrix>(adj), x);
}

inline Var transpose(const Var& a) {
    Node* an = a.node();
    return detail::make_op(transpose(a.value()), {a},
                           [an](const Node& self) { an->accumulate(transpose(self.grad)); });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
    detail::check_same(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_op(std::move(out), {a, b}, [an, bn](const Node& self) {
        detail::add_to(an, self.grad);
        detail::add_to(bn, self.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::check_same(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_op(std::move(out), {a, b}, [an, bn](const Node& self) {
        detail::add_to(an, self.grad);
        if (bn->requires_grad) bn->accumulate(detail::map(self.grad, [](double g) { return -g; }));
    });
}

inline Var mul(const Var& a, const Var& b) {
    detail::check_same(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_op(std::move(out), {a, b}, [an, bn](const Node& self) {
        if (an->requires_grad) {
            Tensor g = self.grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= bn->value[i];
            an->accumulate(g);
        }
        if (bn->requires_grad) {
            Tensor g = self.grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= an->value[i];
            bn->accumulate(g);
        }
    });
}

inline Var scale(const Var& a, double s) {
    Node* an = a.node();
    return detail::make_op(detail::map(a.value(), [s](double x) { return x * s; }), {a},
                           [an, s](const Node& self) {
                               an->accumulate(detail::map(self.grad, [s](double g) { return g * s; }));
                           });
}

inline Var add_scalar(const Var& a, double s) {
    Node* an = a.node();
    return detail::make_op(detail::map(a.value(), [s](double x) { return x + s; }), {a},
                           [an](const Node& self) { an->accumulate(self.grad); });
}

/// a (m x n) + row (1 x n) broadcast over rows.
inline Var add_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("add_row: " + shape_str(a.shape()) + " + " + shape_str(row.shape()));
    }
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += row.value()(0, j);
    Node* an = a.node();
    Node* rn = row.node();
    return detail::make_op(std::move(out), {a, row}, [an, rn](const Node& self) {
        detail::add_to(an, self.grad);
        if (rn->requires_grad) {
            Tensor g = Tensor::zeros(1, self.grad.cols());
            for (std::size_t i = 0; i < self.grad.rows(); ++i)
                for (std::size_t j = 0; j < self.grad.cols(); ++j) g(0, j) += self.grad(i, j);
            rn->accumulate(g);
        }
    });
}

/// a (m x n) * row (1 x n) broadcast over rows.
inline Var mul_row(const Var& a, const Var& row) {
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("mul_row: " + shape_str(a.shape()) + " * " + shape_str(row.shape()));
    }
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= row.value()(0, j);
    Node* an = a.node();
    Node* rn = row.node();
    return detail::make_op(std::move(out), {a, row}, [an, rn](const Node& self) {
        if (an->requires_grad) {
            Tensor g = self.grad;
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) *= rn->value(0, j);
            an->accumulate(g);
        }
        if (rn->requires_grad) {
            Tensor g = Tensor::zeros(1, self.grad.cols());
            for (std::size_t i = 0; i < self.grad.rows(); ++i)
                for (std::size_t j = 0; j < self.grad.cols(); ++j)
                    g(0, j) += self.grad(i, j) * an->value(i, j);
            rn->accumulate(g);
        }
    });
}

/// a (m x n) * col (m x 1) broadcast over columns.
inline Var mul_col(const Var& a, const Var& col) {
    if (col.cols() != 1 || col.rows() != a.rows()) {
        throw ShapeError("mul_col: " + shape_str(a.shape()) + " * " + shape_str(col.shape()));
    }
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= col.value()(i, 0);
    Node* an = a.node();
    Node* cn = col.node();
    return detail::make_op(std::move(out), {a, col}, [an, cn](const Node& self) {
        if (an->requires_grad) {
            Tensor g = self.grad;
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) *= cn->value(i, 0);
            an->accumulate(g);
        }
        if (cn->requires_grad) {
            Tensor g = Tensor::zeros(self.grad.rows(), 1);
            for (std::size_t i = 0; i < self.grad.rows(); ++i)
                for (std::size_t j = 0; j < self.grad.cols(); ++j)
                    g(i, 0) += self.grad(i, j) * an->value(i, j);
            cn->accumulate(g);
        }
    });
}

inline Var relu(const Var& a) {
    Node* an = a.node();
    return detail::make_op(detail::map(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), {a},
                           [an](const Node& self) {
                               Tensor g = self.grad;
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   if (an->value[i] <= 0.0) g[i] = 0.0;
                               an->accumulate(g);
                           });
}

inline Var elu(const Var& a, double alpha = 1.0) {
    Node* an = a.node();
    return detail::make_op(
        detail::map(a.value(), [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); }), {a},
        [an, alpha](const Node& self) {
            Tensor g = self.grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = an->value[i];
                if (x <= 0.0) g[i] *= alpha * std::exp(x);
            }
            an->accumulate(g);
        });
}

inline Var exp(const Var& a) {
    Tensor out = detail::map(a.value(), [](double x) { return std::exp(x); });
    Node* an = a.node();
    return detail::make_op(out, {a}, [an, out](const Node& self) {
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= out[i];
        an->accumulate(g);
    });
}

inline Var log(const Var& a) {
    for (double x : a.value().values()) {
        if (!(x > 0.0)) throw DomainError("log of non-positive value");
    }
    Node* an = a.node();
    return detail::make_op(detail::map(a.value(), [](double x) { return std::log(x); }), {a},
                           [an](const Node& self) {
                               Tensor g = self.grad;
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] /= an->value[i];
                               an->accumulate(g);
                           });
}

inline Var reciprocal(const Var& a) {
    for (double x : a.value().values()) {
        if (x == 0.0) throw DomainError("reciprocal of zero");
    }
    Node* an = a.node();
    return detail::make_op(detail::map(a.value(), [](double x) { return 1.0 / x; }), {a},
                           [an](const Node& self) {
                               Tensor g = self.grad;
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] /= -(an->value[i] * an->value[i]);
                               an->accumulate(g);
                           });
}

inline double softplus_value(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

inline Var softplus(const Var& a) {
    Node* an = a.node();
    return detail::make_op(detail::map(a.value(), softplus_value), {a}, [an](const Node& self) {
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 / (1.0 + std::exp(-an->value[i]));
        an->accumulate(g);
    });
}

inline Var square(const Var& a) { return mul(a, a); }

inline Var dropout(const Var& a, double rate, Rng& rng) {
    if (rate <= 0.0) return a;
    Tensor mask(a.shape(), 0.0);
    const double keep = 1.0 - rate;
    for (auto& m : mask.values()) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return mul(a, Var::constant(std::move(mask)));
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Var sum(const Var& a) {
    Node* an = a.node();
    return detail::make_op(Tensor::scalar(a.value().sum()), {a}, [an](const Node& self) {
        an->accumulate(Tensor(an->value.shape(), self.grad.item()));
    });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// m x n -> m x 1
inline Var sum_cols(const Var& a) {
    Tensor out = Tensor::zeros(a.rows(), 1);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, 0) += a.value()(i, j);
    Node* an = a.node();
    return detail::make_op(std::move(out), {a}, [an](const Node& self) {
        Tensor g(an->value.shape(), 0.0);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) = self.grad(i, 0);
        an->accumulate(g);
    });
}

inline Var concat_cols(const Var& a, const Var& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("concat_cols: " + shape_str(a.shape()) + " | " + shape_str(b.shape()));
    }
    const std::size_t ca = a.cols(), cb = b.cols();
    Tensor out = Tensor::zeros(a.rows(), ca + cb);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < ca; ++j) out(i, j) = a.value()(i, j);
        for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = b.value()(i, j);
    }
    Node* an = a.node();
    Node* bn = b.node();
    return detail::make_op(std::move(out), {a, b}, [an, bn, ca, cb](const Node& self) {
        const std::size_t m = self.grad.rows();
        if (an->requires_grad) {
            Tensor g = Tensor::zeros(m, ca);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < ca; ++j) g(i, j) = self.grad(i, j);
            an->accumulate(g);
        }
        if (bn->requires_grad) {
            Tensor g = Tensor::zeros(m, cb);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < cb; ++j) g(i, j) = self.grad(i, ca + j);
            bn->accumulate(g);
        }
    });
}

inline Var gather_rows(const Var& a, std::vector<std::size_t> idx) {
    if (idx.empty()) throw ShapeError("gather_rows: empty index list");
    Tensor out = Tensor::zeros(idx.size(), a.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a.value()(idx[i], j);
    }
    Node* an = a.node();
    return detail::make_op(std::move(out), {a}, [an, idx = std::move(idx)](const Node& self) {
        Tensor g(an->value.shape(), 0.0);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(idx[i], j) += self.grad(i, j);
        an->accumulate(g);
    });
}

/// Each row scaled to unit Euclidean norm (rows with norm below eps are
/// divided by eps instead).
inline Var normalize_rows(const Var& a, double eps = 1e-12) {
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<double> norms(m);
    Tensor out = a.value();
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += out(i, j) * out(i, j);
        norms[i] = std::max(std::sqrt(s), eps);
        for (std::size_t j = 0; j < n; ++j) out(i, j) /= norms[i];
    }
    Node* an = a.node();
    return detail::make_op(out, {a}, [an, out, norms, eps](const Node& self) {
        Tensor g(an->value.shape(), 0.0);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            const bool clipped = norms[i] <= eps;
            double dot = 0.0;
            for (std::size_t j = 0; j < g.cols(); ++j) dot += self.grad(i, j) * out(i, j);
            for (std::size_t j = 0; j < g.cols(); ++j) {
                g(i, j) = clipped ? self.grad(i, j) / eps
                                  : (self.grad(i, j) - out(i, j) * dot) / norms[i];
            }
        }
        an->accumulate(g);
    });
}

// ---------------------------------------------------------------------------
// Softmax family

namespace detail {

inline Tensor log_softmax_rows_value(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto r = out.row(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : r) mx = std::max(mx, v);
        double s = 0.0;
        for (double v : r) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        for (double& v : r) v -= lse;
    }
    return out;
}

}  // namespace detail

inline Tensor softmax_rows(const Tensor& x) {
    Tensor out = detail::log_softmax_rows_value(x);
    for (auto& v : out.values()) v = std::exp(v);
    return out;
}

inline Var log_softmax_rows(const Var& a) {
    Tensor out = detail::log_softmax_rows_value(a.value());
    Node* an = a.node();
    return detail::make_op(out, {a}, [an, out](const Node& self) {
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < g.cols(); ++j) s += self.grad(i, j);
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) -= std::exp(out(i, j)) * s;
        }
        an->accumulate(g);
    });
}

inline Var softmax_rows(const Var& a) { return exp(log_softmax_rows(a)); }

/// Mean negative log-likelihood over the rows with mask[i] set. Targets are
/// one-hot (or any row-stochastic) rows.
inline Var softmax_cross_entropy(const Var& logits, const Tensor& targets, const std::vector<bool>& mask) {
    if (!targets.same_shape(logits.value())) {
        throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs targets " +
                         shape_str(targets.shape()));
    }
    if (mask.size() != logits.rows()) throw ShapeError("softmax_cross_entropy: mask length mismatch");
    std::size_t count = 0;
    for (bool m : mask) count += m ? 1 : 0;
    if (count == 0) throw PreconditionError("softmax_cross_entropy: mask selects no rows");

    Tensor logp = detail::log_softmax_rows_value(logits.value());
    double loss = 0.0;
    for (std::size_t i = 0; i < logp.rows(); ++i) {
        if (!mask[i]) continue;
        for (std::size_t j = 0; j < logp.cols(); ++j) {
            if (targets(i, j) != 0.0) loss -= targets(i, j) * logp(i, j);
        }
    }
    const double inv = 1.0 / static_cast<double>(count);
    Node* ln = logits.node();
    return detail::make_op(Tensor::scalar(loss * inv), {logits},
                           [ln, logp, targets, mask, inv](const Node& self) {
                               const double gs = self.grad.item() * inv;
                               Tensor g(logp.shape(), 0.0);
                               for (std::size_t i = 0; i < g.rows(); ++i) {
                                   if (!mask[i]) continue;
                                   double tsum = 0.0;
                                   for (std::size_t j = 0; j < g.cols(); ++j) tsum += targets(i, j);
                                   for (std::size_t j = 0; j < g.cols(); ++j)
                                       g(i, j) = gs * (std::exp(logp(i, j)) * tsum - targets(i, j));
                               }
                               ln->accumulate(g);
                           });
}

// ---------------------------------------------------------------------------
// Dirichlet helpers (digamma-based)

/// E_{Dir(lambda)}[ln w_i] = psi(lambda_i) - psi(sum lambda), for a 1 x n row.
inline Var dirichlet_expected_log(const Var& lambda) {
    const Tensor& l = lambda.value();
    double total = l.sum();
    Tensor out = l;
    const double psi_total = boost::math::digamma(total);
    for (auto& v : out.values()) v = boost::math::digamma(v) - psi_total;
    Node* ln = lambda.node();
    return detail::make_op(std::move(out), {lambda}, [ln, total](const Node& self) {
        double gsum = self.grad.sum();
        const double tri_total = boost::math::trigamma(total);
        Tensor g = ln->value;
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] = self.grad[i] * boost::math::trigamma(ln->value[i]) - gsum * tri_total;
        ln->accumulate(g);
    });
}

/// Closed-form KL(Dir(lambda) || Dir(alpha)); lambda and alpha same shape.
inline double dirichlet_kl_value(const Tensor& lambda, const Tensor& alpha) {
    double lsum = 0.0, asum = 0.0;
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        lsum += lambda[i];
        asum += alpha[i];
    }
    const double psi_l = boost::math::digamma(lsum);
    double kl = std::lgamma(lsum) - std::lgamma(asum);
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        kl += std::lgamma(alpha[i]) - std::lgamma(lambda[i]) +
              (lambda[i] - alpha[i]) * (boost::math::digamma(lambda[i]) - psi_l);
    }
    return kl;
}

inline Var dirichlet_kl(const Var& lambda, const Tensor& alpha) {
    if (!alpha.same_shape(lambda.value())) throw ShapeError("dirichlet_kl: lambda/alpha shape mismatch");
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        if (!(lambda.value()[i] > 0.0) || !(alpha[i] > 0.0))
            throw DomainError("dirichlet_kl: parameters must be strictly positive");
    }
    Node* ln = lambda.node();
    return detail::make_op(Tensor::scalar(dirichlet_kl_value(lambda.value(), alpha)), {lambda},
                           [ln, alpha](const Node& self) {
                               const Tensor& l = ln->value;
                               double lsum = 0.0, diff_sum = 0.0;
                               for (std::size_t i = 0; i < l.size(); ++i) {
                                   lsum += l[i];
                                   diff_sum += l[i] - alpha[i];
                               }
                               const double tri_total = boost::math::trigamma(lsum);
                               Tensor g = l;
                               for (std::size_t i = 0; i < l.size(); ++i) {
                                   g[i] = self.grad.item() * ((l[i] - alpha[i]) * boost::math::trigamma(l[i]) -
                                                              tri_total * diff_sum);
                               }
                               ln->accumulate(g);
                           });
}

}  // namespace mgm
