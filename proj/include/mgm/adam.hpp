#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mgm/autodiff.hpp"
#include "mgm/error.hpp"

namespace mgm {

struct AdamOptions {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction, bound to a fixed list of parameters.
class AdamState {
public:
    AdamState() = default;
    AdamState(std::vector<Var> params, AdamOptions opts = {}) : opts_(opts), params_(std::move(params)) {
        for (const auto& p : params_) {
            m_.emplace_back(p.shape(), 0.0);
            v_.emplace_back(p.shape(), 0.0);
        }
    }

    const AdamOptions& options() const { return opts_; }
    long step_count() const { return step_; }
    const std::vector<Var>& params() const { return params_; }
    const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
    const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    /// Applies one update from the gradients currently stored on the params.
    void step() {
        for (const auto& p : params_) {
            if (p.grad().empty()) {
                throw PreconditionError("adam: parameter '" + p.name() + "' has no gradient");
            }
            if (!p.grad().all_finite()) {
                throw TrainingError("adam: non-finite gradient for parameter '" + p.name() + "'");
            }
        }
        ++step_;
        const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor& w = params_[k].mutable_value();
            const Tensor& g = params_[k].grad();
            Tensor& m = m_[k];
            Tensor& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
                v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
                const double mhat = m[i] / c1;
                const double vhat = v[i] / c2;
                w[i] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
            }
        }
    }

private:
    AdamOptions opts_;
    std::vector<Var> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    long step_ = 0;
};

/// Marks a parameter block frozen for the guard's lifetime: the tape will not
/// propagate into it and its gradient slot stays at zero.
class FreezeGuard {
public:
    explicit FreezeGuard(std::vector<Var> params) : params_(std::move(params)) {
        for (auto& p : params_) {
            previous_.push_back(p.requires_grad());
            p.set_requires_grad(false);
            p.zero_grad();
        }
    }
    ~FreezeGuard() {
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(previous_[i]);
    }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    std::vector<Var> params_;
    std::vector<bool> previous_;
};

}  // namespace mgm
