#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgm/adam.hpp"
#include "mgm/autodiff.hpp"
#include "mgm/distributions.hpp"
#include "mgm/early_stopping.hpp"
#include "mgm/encoder.hpp"
#include "mgm/error.hpp"
#include "mgm/graph.hpp"
#include "mgm/log.hpp"
#include "mgm/memory.hpp"
#include "mgm/metrics.hpp"
#include "mgm/rng.hpp"
#include "mgm/splits.hpp"

namespace mgm {

inline constexpr double kMasked = -1e30;

struct MgmConfig {
    std::size_t k = 3;
    double eta = 0.8;
    double alpha = 0.1;
    std::vector<double> alpha_per_node;  // overrides `alpha` when non-empty
    double sigma1_init = 1.0;
    double sigma2_init = 1.0;
    std::size_t mc_samples = 1;
    std::size_t em_iterations = 50;
    double tau = 1.0;
    std::size_t e_steps = 5;
    std::size_t m_steps = 5;
    std::size_t patience = 10;
    double lr = 0.001;
    double mass = 0.9;
    MemoryMode memory_mode = MemoryMode::sampled;

    void validate() const {
        if (k < 1) throw ConfigError("K must be >= 1");
        if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
        if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
        for (double a : alpha_per_node)
            if (!(a > 0.0)) throw ConfigError("per-node alpha must be > 0");
        if (!(sigma1_init > 0.0)) throw ConfigError("sigma1 initial variance must be > 0");
        if (!(sigma2_init > 0.0)) throw ConfigError("sigma2 initial variance must be > 0");
        if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
        if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
        if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
        if (!(mass > 0.0 && mass <= 1.0)) throw ConfigError("mass threshold must lie in (0, 1]");
    }
};

inline nlohmann::ordered_json to_json(const MgmConfig& c) {
    nlohmann::ordered_json j;
    j["k"] = c.k;
    j["eta"] = c.eta;
    j["alpha"] = c.alpha;
    j["alpha_per_node"] = c.alpha_per_node;
    j["sigma1_init"] = c.sigma1_init;
    j["sigma2_init"] = c.sigma2_init;
    j["mc_samples"] = c.mc_samples;
    j["em_iterations"] = c.em_iterations;
    j["tau"] = c.tau;
    j["e_steps"] = c.e_steps;
    j["m_steps"] = c.m_steps;
    j["patience"] = c.patience;
    j["lr"] = c.lr;
    j["mass"] = c.mass;
    j["memory_mode"] = to_string(c.memory_mode);
    return j;
}

inline MgmConfig mgm_config_from_json(const nlohmann::json& j) {
    MgmConfig c;
    c.k = j.value("k", c.k);
    c.eta = j.value("eta", c.eta);
    c.alpha = j.value("alpha", c.alpha);
    c.alpha_per_node = j.value("alpha_per_node", c.alpha_per_node);
    c.sigma1_init = j.value("sigma1_init", c.sigma1_init);
    c.sigma2_init = j.value("sigma2_init", c.sigma2_init);
    c.mc_samples = j.value("mc_samples", c.mc_samples);
    c.em_iterations = j.value("em_iterations", c.em_iterations);
    c.tau = j.value("tau", c.tau);
    c.e_steps = j.value("e_steps", c.e_steps);
    c.m_steps = j.value("m_steps", c.m_steps);
    c.patience = j.value("patience", c.patience);
    c.lr = j.value("lr", c.lr);
    c.mass = j.value("mass", c.mass);
    if (j.contains("memory_mode")) c.memory_mode = parse_memory_mode(j.at("memory_mode").get<std::string>());
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Predictive pieces

/// Softmax of the linear head over embedding rows.
inline Tensor classify_local(const Tensor& z, const Linear& head) {
    if (z.cols() != head.weight.rows()) {
        throw ShapeError("classify_local: embeddings " + shape_str(z.shape()) + " vs head " +
                         shape_str(head.weight.shape()));
    }
    return softmax_rows(head(Var::constant(z)).value());
}

/// Label histogram of the selected similar nodes, normalized by K.
inline std::vector<double> classify_global(std::span<const double> counts, const Tensor& labels_one_hot) {
    if (counts.size() != labels_one_hot.rows()) throw ShapeError("classify_global: counts not aligned with labels");
    double k = 0.0;
    for (double t : counts) {
        if (t < 0.0) throw DomainError("classify_global: negative count");
        k += t;
    }
    if (!(k > 0.0)) throw PreconditionError("classify_global: counts must sum to K > 0");
    std::vector<double> p(labels_one_hot.cols(), 0.0);
    for (std::size_t m = 0; m < counts.size(); ++m) {
        if (counts[m] == 0.0) continue;
        for (std::size_t c = 0; c < p.size(); ++c) p[c] += counts[m] * labels_one_hot(m, c);
    }
    for (double& v : p) v /= k;
    return p;
}

inline std::vector<double> fuse_predictions(std::span<const double> local, std::span<const double> global, double eta) {
    if (local.size() != global.size()) throw ShapeError("fuse_predictions: size mismatch");
    if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("fuse_predictions: eta must lie in [0, 1]");
    if (eta == 1.0) return {local.begin(), local.end()};
    std::vector<double> out(local.size());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = eta * local[c] + (1.0 - eta) * global[c];
    return out;
}

namespace detail {

inline Tensor normalized_rows(const Tensor& x, double eps = 1e-12) {
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double n = 0.0;
        for (double v : x.row(r)) n += v * v;
        n = std::sqrt(n) + eps;
        for (double& v : out.row(r)) v /= n;
    }
    return out;
}

/// Additive mask (0 or kMasked) hiding each query's own memory row. A row
/// with nothing left to attend to is left unmasked.
inline Tensor self_mask(std::span<const std::size_t> query_nodes, const MemoryBank& mem, bool* fallback = nullptr) {
    Tensor mask = Tensor::zeros(query_nodes.size(), mem.size());
    for (std::size_t i = 0; i < query_nodes.size(); ++i) {
        const std::size_t r = mem.row_of(query_nodes[i]);
        if (r == mem.size()) continue;
        if (mem.size() == 1) {
            if (fallback) *fallback = true;
            continue;
        }
        mask(i, r) = kMasked;
    }
    return mask;
}

/// 1 x n row holding the value of a 1 x 1 variable.
inline Var broadcast_row(const Var& scalar, std::size_t n) {
    return matmul(scalar, Var::constant(Tensor({1, n}, 1.0)));
}

}  // namespace detail

/// Categorical over memory rows for each query: softmax of
/// cos(z_n, z_m) / tau + ln w_m, with a query's own row masked out.
inline Tensor similar_node_prior(const Tensor& query, const MemoryBank& memory, std::span<const double> omega,
                                 std::size_t k, double tau, std::span<const std::size_t> query_nodes = {}) {
    if (memory.empty()) throw PredictionError("similar_node_prior: memory is empty");
    if (k < 1) throw DomainError("similar_node_prior: K must be >= 1");
    if (!(tau > 0.0)) throw DomainError("similar_node_prior: tau must be > 0");
    if (omega.size() != memory.size()) throw ShapeError("similar_node_prior: weights not aligned with memory");
    if (query.cols() != memory.embeddings.cols()) throw ShapeError("similar_node_prior: embedding width mismatch");
    Tensor logits = dense_matmul(detail::normalized_rows(query), transpose(detail::normalized_rows(memory.embeddings)));
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        for (std::size_t m = 0; m < logits.cols(); ++m) {
            logits(i, m) = logits(i, m) / tau + (omega[m] > 0.0 ? std::log(omega[m]) : kMasked);
        }
    }
    if (!query_nodes.empty()) {
        if (query_nodes.size() != query.rows()) throw ShapeError("similar_node_prior: query node list misaligned");
        bool fallback = false;
        Tensor mask = detail::self_mask(query_nodes, memory, &fallback);
        for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += mask[i];
        if (fallback) logging::warn("every candidate is the query itself; using a uniform prior");
    }
    return softmax_rows(logits);
}

// ---------------------------------------------------------------------------
// Model state

/// Variational parameters phi: Dirichlet parameters (through softplus), the
/// bilinear scorer and label bonus of q(T), the mean correction network and
/// log-variance of q(Z).
struct VariationalParams {
    Var lambda_raw;  // 1 x M
    Var w_q;         // d x d
    Var beta;        // 1 x 1
    Linear correction;  // (d + C) -> d
    Var log_sigma2;  // 1 x d

    std::vector<Var> params() const {
        return {lambda_raw, w_q, beta, correction.weight, correction.bias, log_sigma2};
    }
    Var lambda() const { return softplus(lambda_raw); }
};

inline VariationalParams init_variational(std::size_t m, std::size_t d, std::size_t c, const MgmConfig& cfg) {
    VariationalParams v;
    const double lambda0 = cfg.alpha + 1.0 / static_cast<double>(m);
    v.lambda_raw = Var::leaf(Tensor({1, m}, inverse_softplus(lambda0)), true, "q.lambda_raw");
    v.w_q = Var::leaf(Tensor({d, d}, 0.0), true, "q.w_q");
    v.beta = Var::leaf(Tensor::scalar(1.0), true, "q.beta");
    v.correction = make_zero_linear(d + c, d, "q.correction");
    v.log_sigma2 = Var::leaf(Tensor({1, d}, std::log(cfg.sigma2_init)), true, "q.log_sigma2");
    return v;
}

struct MgmModel {
    MgmConfig config;
    Backbone backbone;
    Var sigma1_raw;  // softplus -> prior variance
    VariationalParams variational;
    MemoryBank memory;    // every training-labeled node
    MemoryBank selected;  // candidates used at prediction time

    std::vector<Var> theta() const {
        auto p = backbone.params();
        p.push_back(sigma1_raw);
        return p;
    }
    std::vector<Var> phi() const { return variational.params(); }

    double sigma1_sq() const { return softplus_value(sigma1_raw.item()); }

    std::vector<double> lambda() const {
        std::vector<double> l;
        for (double r : variational.lambda_raw.value().values()) l.push_back(softplus_value(r));
        return l;
    }

    std::vector<double> expected_omega() const { return mgm::expected_omega(lambda()); }

    Tensor alpha_tensor() const {
        const std::size_t m = memory.size();
        if (config.alpha_per_node.empty()) return Tensor({1, m}, config.alpha);
        if (config.alpha_per_node.size() != m) {
            throw ConfigError("per-node alpha has " + std::to_string(config.alpha_per_node.size()) +
                              " entries for a memory of " + std::to_string(m));
        }
        return Tensor({1, m}, config.alpha_per_node);
    }
};

/// Memory used for prediction under the configured mode.
inline MemoryBank select_memory(const MgmModel& m) {
    const auto w = m.expected_omega();
    if (m.config.memory_mode == MemoryMode::full) return select_fraction(m.memory, w, 1.0);
    return select_candidates(m.memory, w, m.config.mass);
}

inline MgmModel make_model(Backbone backbone, const Graph& g, const std::shared_ptr<const SparseMatrix>& adj,
                           const std::vector<bool>& train_mask, const MgmConfig& cfg) {
    cfg.validate();
    MgmModel m;
    m.config = cfg;
    m.backbone = std::move(backbone);
    m.sigma1_raw = Var::leaf(Tensor::scalar(inverse_softplus(cfg.sigma1_init)), true, "p.sigma1_raw");
    m.memory = build_memory(m.backbone, adj, g, train_mask);
    m.variational = init_variational(m.memory.size(), m.memory.embeddings.cols(), g.num_classes(), cfg);
    (void)m.alpha_tensor();
    m.selected = select_memory(m);
    return m;
}

// ---------------------------------------------------------------------------
// Evidence lower bound

struct ElboTerms {
    Var value;
    double loglik = 0.0;
    double kl_omega = 0.0;
    double kl_z = 0.0;
    double kl_t = 0.0;
};

/// Standard-normal noise for the reparameterized q(Z) draws, one matrix per
/// Monte-Carlo sample.
inline std::vector<Tensor> draw_noise(const MgmModel& m, Rng& rng) {
    std::vector<Tensor> out;
    for (std::size_t s = 0; s < m.config.mc_samples; ++s) {
        Tensor e = Tensor::zeros(m.memory.size(), m.memory.embeddings.cols());
        for (auto& v : e.values()) v = rng.normal();
        out.push_back(std::move(e));
    }
    return out;
}

/// ELBO over the training-labeled nodes (the memory rows):
/// E_q[log p(Y | T, Z)] - KL(q(w) || p(w)) - KL(q(Z) || p(Z)) - KL(q(T) || p(T)).
/// The expectation over T is taken in closed form since the label vote is
/// linear in T.
inline ElboTerms elbo(const MgmModel& m, const Graph& g, const std::shared_ptr<const SparseMatrix>& adj,
                      const std::vector<Tensor>& noise) {
    const MemoryBank& mem = m.memory;
    if (mem.empty()) throw PreconditionError("elbo: memory not populated");
    if (noise.empty()) throw PreconditionError("elbo: at least one noise sample required");
    const std::size_t n_l = mem.size(), d = mem.embeddings.cols();
    const MgmConfig& cfg = m.config;

    const Tensor y = mem.labels_one_hot();
    Tensor agree = dense_matmul(y, transpose(y));
    const Tensor mask = detail::self_mask(mem.node_index, mem);

    Var enc = m.backbone.embed(adj, Var::constant(g.features));
    Var enc_l = gather_rows(enc, mem.node_index);

    // p(T | w, Z): cosine affinity plus the expected log candidate weight.
    Var lambda = m.variational.lambda();
    Var cos = matmul(normalize_rows(enc_l), Var::constant(transpose(detail::normalized_rows(mem.embeddings))));
    Var p_logits = add(add_row(scale(cos, 1.0 / cfg.tau), dirichlet_expected_log(lambda)), Var::constant(mask));
    Var log_p = log_softmax_rows(p_logits);

    // q(T | Y): bilinear score on fixed query embeddings plus a label bonus.
    Var score = matmul(matmul(detach(enc_l), m.variational.w_q), Var::constant(transpose(mem.embeddings)));
    Var q_logits = add(add(score, mul_row(Var::constant(agree), detail::broadcast_row(m.variational.beta, n_l))),
                       Var::constant(mask));
    Var log_q = log_softmax_rows(q_logits);
    Var q = exp(log_q);
    Var kl_t = scale(sum(mul(q, sub(log_q, log_p))), static_cast<double>(cfg.k));

    // q(Z | T, Y): encoder mean shifted by a correction on the expected
    // candidate embedding and the node's own label.
    Var agg = matmul(q, Var::constant(mem.embeddings));
    Var shift = m.variational.correction(concat_cols(agg, Var::constant(y)));
    Var mu = add(enc_l, shift);
    Var sd = exp(scale(m.variational.log_sigma2, 0.5));

    Var global = matmul(q, Var::constant(y));
    Var loglik;
    for (const Tensor& eps : noise) {
        if (eps.rows() != n_l || eps.cols() != d) throw ShapeError("elbo: noise shape " + shape_str(eps.shape()));
        Var z = add(mu, mul_row(Var::constant(eps), sd));
        Var local = softmax_rows(m.backbone.head(z));
        Var fused = cfg.eta == 1.0 ? local : add(scale(local, cfg.eta), scale(global, 1.0 - cfg.eta));
        Var picked = sum_cols(mul(fused, Var::constant(y)));
        Var ll = sum(log(add_scalar(scale(picked, 1.0 - 1e-12), 1e-12)));
        loglik = loglik.valid() ? add(loglik, ll) : ll;
    }
    loglik = scale(loglik, 1.0 / static_cast<double>(noise.size()));

    // KL between N(mu, s2 I) and N(enc, s1 I), summed over training nodes.
    Var s1 = softplus(m.sigma1_raw);
    Var inv_s1 = reciprocal(s1);
    const double nd = static_cast<double>(n_l * d);
    Var kl_z = mul(add(scale(sum(exp(m.variational.log_sigma2)), static_cast<double>(n_l)), sum(square(shift))), inv_s1);
    kl_z = add(kl_z, scale(log(s1), nd));
    kl_z = sub(kl_z, scale(sum(m.variational.log_sigma2), static_cast<double>(n_l)));
    kl_z = scale(add_scalar(kl_z, -nd), 0.5);

    Var kl_w = dirichlet_kl(lambda, m.alpha_tensor());

    ElboTerms t;
    t.value = sub(sub(sub(loglik, kl_w), kl_z), kl_t);
    t.loglik = loglik.item();
    t.kl_omega = kl_w.item();
    t.kl_z = kl_z.item();
    t.kl_t = kl_t.item();
    if (!std::isfinite(t.value.item())) {
        throw TrainingError("non-finite ELBO (loglik " + std::to_string(t.loglik) + ", kl_omega " +
                            std::to_string(t.kl_omega) + ", kl_z " + std::to_string(t.kl_z) + ", kl_t " +
                            std::to_string(t.kl_t) + ")");
    }
    return t;
}

namespace detail {

inline void ascend(const MgmModel& m, const Graph& g, const std::shared_ptr<const SparseMatrix>& adj, AdamState& opt,
                   Rng& noise_rng, std::size_t steps, std::vector<double>* trace) {
    for (std::size_t s = 0; s < steps; ++s) {
        opt.zero_grad();
        ElboTerms t = elbo(m, g, adj, draw_noise(m, noise_rng));
        scale(t.value, -1.0).backward();
        opt.step();
        if (trace) trace->push_back(t.value.item());
    }
}

}  // namespace detail

/// E-step: theta frozen, Adam ascent on the ELBO over the variational
/// parameters.
inline std::vector<double> e_step(MgmModel& m, const Graph& g, const std::shared_ptr<const SparseMatrix>& adj,
                                  AdamState& phi_opt, Rng& noise_rng, std::size_t steps) {
    FreezeGuard frozen(m.theta());
    std::vector<double> trace;
    detail::ascend(m, g, adj, phi_opt, noise_rng, steps, &trace);
    return trace;
}

/// M-step: variational parameters frozen, Adam ascent over theta, followed
/// by a memory refresh.
inline std::vector<double> m_step(MgmModel& m, const Graph& g, const std::shared_ptr<const SparseMatrix>& adj,
                                  AdamState& theta_opt, Rng& noise_rng, std::size_t steps) {
    std::vector<double> trace;
    {
        FreezeGuard frozen(m.phi());
        detail::ascend(m, g, adj, theta_opt, noise_rng, steps, &trace);
    }
    refresh(m.memory, m.backbone, adj, g);
    return trace;
}

// ---------------------------------------------------------------------------
// Prediction

struct Prediction {
    std::vector<std::size_t> nodes;
    Tensor local;
    Tensor global;
    Tensor fused;
    std::vector<int> labels;
};

inline std::size_t argmax(std::span<const double> p) {
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

/// Classifies `nodes` from encoder means. The similar-node set is the K
/// most probable candidates under p(T | E[w], Z) (ties to the lower memory
/// row); the label vote is fused with the local head by eta.
inline Prediction predict(const MgmModel& m, const Graph& g, const std::shared_ptr<const SparseMatrix>& adj,
                          const std::vector<std::size_t>& nodes, std::optional<double> eta_override = {},
                          const MemoryBank* memory = nullptr) {
    const double eta = eta_override.value_or(m.config.eta);
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0, 1]");
    for (std::size_t n : nodes)
        if (n >= g.num_nodes()) throw PredictionError("node index " + std::to_string(n) + " out of range");
    const MemoryBank& mem = memory ? *memory : m.selected;
    const std::size_t c = g.num_classes();

    Prediction out;
    out.nodes = nodes;
    const Tensor enc = m.backbone.embed(adj, Var::constant(g.features)).value();
    Tensor z = Tensor::zeros(std::max<std::size_t>(nodes.size(), 1), enc.cols());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        auto src = enc.row(nodes[i]);
        std::copy(src.begin(), src.end(), z.row(i).begin());
    }
    out.local = classify_local(z, m.backbone.head);
    out.global = Tensor::zeros(out.local.rows(), c);
    out.fused = out.local;

    if (eta < 1.0) {
        if (mem.empty()) throw PredictionError("memory is empty");
        std::vector<double> w = mem.omega;
        if (w.empty()) w.assign(mem.size(), 1.0 / static_cast<double>(mem.size()));
        const Tensor prior = similar_node_prior(z, mem, w, m.config.k, m.config.tau,
                                                nodes.empty() ? std::span<const std::size_t>{}
                                                              : std::span<const std::size_t>(nodes));
        const Tensor y = mem.labels_one_hot();
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const std::size_t self = mem.row_of(nodes[i]);
            std::vector<std::size_t> order;
            for (std::size_t r = 0; r < mem.size(); ++r)
                if (r != self || mem.size() == 1) order.push_back(r);
            const std::size_t k = std::min(m.config.k, order.size());
            std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                              [&](std::size_t a, std::size_t b) {
                                  if (prior(i, a) != prior(i, b)) return prior(i, a) > prior(i, b);
                                  return a < b;
                              });
            std::vector<double> counts(mem.size(), 0.0);
            for (std::size_t j = 0; j < k; ++j) counts[order[j]] = 1.0;
            const auto pg = classify_global(counts, y);
            const auto pf = fuse_predictions(out.local.row(i), pg, eta);
            std::copy(pg.begin(), pg.end(), out.global.row(i).begin());
            std::copy(pf.begin(), pf.end(), out.fused.row(i).begin());
        }
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) out.labels.push_back(static_cast<int>(argmax(out.fused.row(i))));
    return out;
}

// ---------------------------------------------------------------------------
// Variational EM

struct EmRecord {
    std::size_t iteration = 0;  // 0 is the pre-trained state
    double elbo = 0.0;
    double loglik = 0.0;
    double kl_omega = 0.0;
    double kl_z = 0.0;
    double kl_t = 0.0;
    double val_macro_f1 = 0.0;
};

struct TrainOptions {
    PretrainOptions pretrain;
    bool vanilla = false;  // pre-train only
};

struct TrainResult {
    MgmModel model;
    Backbone pretrained;
    std::vector<double> pretrain_train_loss;
    std::vector<double> pretrain_val_loss;
    std::vector<EmRecord> history;
    std::size_t best_iteration = 0;
    bool em_ran = false;
    double pretrain_seconds = 0.0;
    double em_seconds = 0.0;
};

namespace detail {

inline std::vector<std::size_t> labeled_in(const std::vector<bool>& mask, const Graph& g) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i] && g.labels[i] != kUnlabeled) out.push_back(i);
    return out;
}

inline double macro_f1_on(const MgmModel& m, const Graph& g, const std::shared_ptr<const SparseMatrix>& adj,
                          const std::vector<std::size_t>& nodes) {
    const MemoryBank sel = select_memory(m);
    const Prediction p = predict(m, g, adj, nodes, {}, &sel);
    std::vector<int> gold;
    for (std::size_t n : nodes) gold.push_back(g.labels[n]);
    return compute_metrics(p.labels, gold, g.num_classes()).macro_f1;
}

struct EmSnapshot {
    std::vector<Tensor> theta;
    std::vector<Tensor> phi;
    Tensor memory;
};

}  // namespace detail

/// Fills the memory from a pre-trained backbone, then alternates E- and
/// M-steps with early stopping on validation macro-F1. The best state (the
/// starting one included) is restored and the candidate set selected.
inline TrainResult run_em(const Backbone& pretrained, const Graph& g, const SplitMasks& masks,
                          const std::shared_ptr<const SparseMatrix>& adj, const MgmConfig& cfg,
                          const SeedSequence& seeds, bool vanilla = false) {
    cfg.validate();
    using clock = std::chrono::steady_clock;
    TrainResult r;
    r.pretrained = clone(pretrained);
    r.model = make_model(clone(pretrained), g, adj, masks.train, cfg);
    if (vanilla || cfg.eta == 1.0 || cfg.em_iterations == 0) return r;

    auto t1 = clock::now();
    MgmModel& m = r.model;
    r.em_ran = true;
    AdamOptions aopts;
    aopts.lr = cfg.lr;
    AdamState theta_opt(m.theta(), aopts);
    AdamState phi_opt(m.phi(), aopts);
    Rng noise = seeds.stream("em-noise");
    const std::vector<Tensor> eval_noise = draw_noise(m, noise);

    auto val_nodes = detail::labeled_in(masks.val, g);
    if (val_nodes.empty()) val_nodes = detail::labeled_in(masks.train, g);

    auto take = [&] { return detail::EmSnapshot{snapshot(m.theta()), snapshot(m.phi()), m.memory.embeddings}; };
    auto record = [&](std::size_t it) {
        ElboTerms t = elbo(m, g, adj, eval_noise);
        EmRecord e{it, t.value.item(), t.loglik, t.kl_omega, t.kl_z, t.kl_t, detail::macro_f1_on(m, g, adj, val_nodes)};
        r.history.push_back(e);
        return e.val_macro_f1;
    };

    EarlyStopping stopper(cfg.patience, EarlyStopping::Mode::maximize);
    stopper.update(record(0));
    detail::EmSnapshot best = take();
    for (std::size_t it = 1; it <= cfg.em_iterations; ++it) {
        e_step(m, g, adj, phi_opt, noise, cfg.e_steps);
        m_step(m, g, adj, theta_opt, noise, cfg.m_steps);
        if (stopper.update(record(it))) {
            best = take();
            r.best_iteration = it;
        }
        if (stopper.should_stop()) break;
    }
    auto theta = m.theta();
    auto phi = m.phi();
    restore(theta, best.theta);
    restore(phi, best.phi);
    m.memory.embeddings = best.memory;
    m.selected = select_memory(m);
    r.em_seconds = std::chrono::duration<double>(clock::now() - t1).count();
    return r;
}

/// Algorithm in full: supervised pre-training followed by variational EM.
inline TrainResult train_em(const Graph& g, const SplitMasks& masks, const std::shared_ptr<const SparseMatrix>& adj,
                            const EncoderConfig& enc, const MgmConfig& cfg, const SeedSequence& seeds,
                            const TrainOptions& opts = {}) {
    cfg.validate();
    auto t0 = std::chrono::steady_clock::now();
    PretrainOptions popts = opts.pretrain;
    popts.adam.lr = cfg.lr;
    PretrainResult pre = pretrain(enc, g, masks, adj, popts, seeds);
    const double pre_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    TrainResult r = run_em(pre.model, g, masks, adj, cfg, seeds, opts.vanilla);
    r.pretrain_train_loss = std::move(pre.train_loss);
    r.pretrain_val_loss = std::move(pre.val_loss);
    r.pretrain_seconds = pre_seconds;
    return r;
}

/// The pre-trained backbone alone, wrapped so that `predict` reproduces the
/// vanilla classifier.
inline MgmModel vanilla_model(const TrainResult& r) {
    MgmModel m = r.model;
    m.backbone = r.pretrained;
    m.config.eta = 1.0;
    return m;
}

// ---------------------------------------------------------------------------
// Checkpoint

inline nlohmann::ordered_json model_to_json(const MgmModel& m) {
    nlohmann::ordered_json j;
    j["format"] = "mgm-model";
    j["version"] = 1;
    j["config"] = to_json(m.config);
    j["encoder"] = backbone_to_json(m.backbone);
    j["theta_extra"] = params_to_json({m.sigma1_raw});
    j["variational"] = params_to_json(m.phi());
    j["memory"] = memory_to_json(m.memory);
    j["selected"] = memory_to_json(m.selected);
    j["selected_rows"] = m.selected.source_rows;
    return j;
}

inline MgmModel model_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "mgm-model") throw ConfigError("not an MGM checkpoint");
    if (j.value("version", 0) != 1) throw ConfigError("unsupported MGM checkpoint version");
    MgmModel m;
    m.config = mgm_config_from_json(j.at("config"));
    m.backbone = backbone_from_json(j.at("encoder"));
    m.memory = memory_from_json(j.at("memory"));
    m.selected = memory_from_json(j.at("selected"));
    m.sigma1_raw = Var::leaf(Tensor::scalar(0.0), true, "p.sigma1_raw");
    std::vector<Var> extra{m.sigma1_raw};
    params_from_json(j.at("theta_extra"), extra);
    m.variational = init_variational(m.memory.size(), m.memory.embeddings.cols(), m.memory.num_classes, m.config);
    auto phi = m.phi();
    params_from_json(j.at("variational"), phi);
    return m;
}

}  // namespace mgm
