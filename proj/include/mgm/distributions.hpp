#pragma once

// Densities and closed-form divergences used by the variational model.

#include <boost/math/special_functions/digamma.hpp>

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "mgm/autodiff.hpp"
#include "mgm/error.hpp"
#include "mgm/rng.hpp"

namespace mgm {

/// log Dir(w; alpha), normalizer included. Throws when w is off the simplex by
/// more than 1e-6.
inline double dirichlet_log_density(std::span<const double> w, std::span<const double> alpha) {
    if (w.size() != alpha.size() || w.empty()) throw ShapeError("dirichlet_log_density: size mismatch");
    double total = 0.0, asum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] < -1e-6) throw DomainError("dirichlet_log_density: negative component");
        if (!(alpha[i] > 0.0)) throw DomainError("dirichlet_log_density: concentration must be positive");
        total += w[i];
        asum += alpha[i];
    }
    if (std::abs(total - 1.0) > 1e-6) throw DomainError("dirichlet_log_density: point is off the simplex");
    double lp = std::lgamma(asum);
    for (std::size_t i = 0; i < w.size(); ++i) lp += (alpha[i] - 1.0) * std::log(w[i]) - std::lgamma(alpha[i]);
    return lp;
}

inline double dirichlet_log_density(std::span<const double> w, double alpha) {
    std::vector<double> a(w.size(), alpha);
    return dirichlet_log_density(w, a);
}

inline double kl_dirichlet(std::span<const double> lambda, std::span<const double> alpha) {
    if (lambda.size() != alpha.size() || lambda.empty()) throw ShapeError("kl_dirichlet: size mismatch");
    Tensor l({1, lambda.size()}, std::vector<double>(lambda.begin(), lambda.end()));
    Tensor a({1, alpha.size()}, std::vector<double>(alpha.begin(), alpha.end()));
    for (std::size_t i = 0; i < l.size(); ++i) {
        if (!(l[i] > 0.0) || !(a[i] > 0.0)) throw DomainError("kl_dirichlet: parameters must be positive");
    }
    return dirichlet_kl_value(l, a);
}

/// KL between diagonal Gaussians, summed over dimensions.
inline double kl_gaussian(std::span<const double> q_mean, std::span<const double> q_var,
                          std::span<const double> p_mean, std::span<const double> p_var) {
    const std::size_t n = q_mean.size();
    if (q_var.size() != n || p_mean.size() != n || p_var.size() != n) throw ShapeError("kl_gaussian: size mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(q_var[i] > 0.0) || !(p_var[i] > 0.0)) throw DomainError("kl_gaussian: variances must be positive");
        const double d = q_mean[i] - p_mean[i];
        kl += 0.5 * (q_var[i] / p_var[i] + d * d / p_var[i] - 1.0 + std::log(p_var[i] / q_var[i]));
    }
    return kl;
}

/// K * sum q ln(q / p): KL between multinomials sharing the count K.
inline double kl_multinomial(std::span<const double> q, std::span<const double> p, std::size_t k) {
    if (q.size() != p.size() || q.empty()) throw ShapeError("kl_multinomial: size mismatch");
    if (k < 1) throw DomainError("kl_multinomial: K must be >= 1");
    double kl = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] <= 0.0) continue;
        if (p[i] <= 0.0) throw TrainingError("kl_multinomial: q puts mass where p is zero (infinite KL)");
        kl += q[i] * std::log(q[i] / p[i]);
    }
    return static_cast<double>(k) * kl;
}

/// Isotropic Gaussian N(mean, variance * I) over an embedding matrix.
struct DiagonalGaussian {
    Tensor mean;
    double variance = 1.0;

    DiagonalGaussian(Tensor m, double var) : mean(std::move(m)), variance(var) {
        if (!(variance > 0.0)) throw DomainError("gaussian variance must be positive");
    }

    double log_density(const Tensor& z) const {
        if (!z.same_shape(mean)) throw ShapeError("log_density: shape mismatch");
        const double n = static_cast<double>(z.size());
        double ss = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) ss += (z[i] - mean[i]) * (z[i] - mean[i]);
        return -0.5 * n * std::log(2.0 * std::numbers::pi * variance) - 0.5 * ss / variance;
    }

    /// mean + sqrt(variance) * noise.
    Tensor sample_with_noise(const Tensor& noise) const {
        if (!noise.same_shape(mean)) throw ShapeError("sample: noise shape mismatch");
        Tensor z = mean;
        const double sd = std::sqrt(variance);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += sd * noise[i];
        return z;
    }

    Tensor sample(Rng& rng) const {
        Tensor eps(mean.shape());
        for (auto& e : eps.values()) e = rng.normal();
        return sample_with_noise(eps);
    }
};

/// Prior over embeddings centered on the encoder output.
inline DiagonalGaussian prior_z(const Tensor& encoder_out, double sigma1_sq) {
    return DiagonalGaussian(encoder_out, sigma1_sq);
}

}  // namespace mgm
