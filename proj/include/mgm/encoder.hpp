#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgm/adam.hpp"
#include "mgm/autodiff.hpp"
#include "mgm/early_stopping.hpp"
#include "mgm/error.hpp"
#include "mgm/graph.hpp"
#include "mgm/rng.hpp"
#include "mgm/splits.hpp"

namespace mgm {

enum class EncoderKind { gcn, sgc, sage };
enum class Activation { relu, elu, none };

inline std::string to_string(EncoderKind k) {
    switch (k) {
        case EncoderKind::gcn: return "gcn";
        case EncoderKind::sgc: return "sgc";
        case EncoderKind::sage: return "sage";
    }
    return "?";
}

inline EncoderKind parse_encoder_kind(const std::string& s) {
    if (s == "gcn") return EncoderKind::gcn;
    if (s == "sgc") return EncoderKind::sgc;
    if (s == "sage" || s == "graphsage") return EncoderKind::sage;
    throw ConfigError("unknown encoder '" + s + "' (expected gcn | sgc | sage)");
}

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::elu: return "elu";
        case Activation::none: return "none";
    }
    return "?";
}

inline Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "elu") return Activation::elu;
    if (s == "none") return Activation::none;
    throw ConfigError("unknown activation '" + s + "'");
}

struct EncoderConfig {
    EncoderKind kind = EncoderKind::gcn;
    std::vector<std::size_t> hidden{16, 16};
    std::size_t hops = 2;  // sgc only
    Activation activation = Activation::relu;
    double dropout = 0.0;

    /// Published per-backbone settings: GCN 2x16 ReLU, SGC 2 hops into 256,
    /// GraphSAGE (mean) 2x64 ELU; no dropout anywhere.
    static EncoderConfig defaults(EncoderKind kind) {
        EncoderConfig c;
        c.kind = kind;
        switch (kind) {
            case EncoderKind::gcn: c.hidden = {16, 16}; c.activation = Activation::relu; break;
            case EncoderKind::sgc: c.hidden = {256}; c.hops = 2; c.activation = Activation::none; break;
            case EncoderKind::sage: c.hidden = {64, 64}; c.activation = Activation::elu; break;
        }
        return c;
    }

    std::size_t layers() const { return hidden.size(); }
    std::size_t output_dim() const { return hidden.empty() ? 0 : hidden.back(); }

    void validate() const {
        if (hidden.empty()) throw ConfigError("encoder needs at least one layer");
        for (auto w : hidden)
            if (w == 0) throw ConfigError("encoder widths must be positive");
        if (kind == EncoderKind::sgc && hidden.size() != 1) throw ConfigError("sgc has exactly one linear map");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    }
};

inline nlohmann::ordered_json to_json(const EncoderConfig& c) {
    return {{"kind", to_string(c.kind)},
            {"hidden", c.hidden},
            {"hops", c.hops},
            {"activation", to_string(c.activation)},
            {"dropout", c.dropout}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    EncoderConfig c = EncoderConfig::defaults(parse_encoder_kind(j.at("kind").get<std::string>()));
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    if (j.contains("hops")) c.hops = j.at("hops").get<std::size_t>();
    if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>());
    if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
    c.validate();
    return c;
}

struct Linear {
    Var weight;  // in x out
    Var bias;    // 1 x out

    Var operator()(const Var& x) const { return add_row(matmul(x, weight), bias); }
    std::vector<Var> params() const { return {weight, bias}; }
};

/// Glorot-uniform weights, zero bias.
inline Linear make_linear(std::size_t in, std::size_t out, Rng& rng, const std::string& name) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w({in, out});
    for (auto& v : w.values()) v = rng.uniform(-limit, limit);
    return {Var::leaf(std::move(w), true, name + ".weight"), Var::leaf(Tensor({1, out}, 0.0), true, name + ".bias")};
}

inline Linear make_zero_linear(std::size_t in, std::size_t out, const std::string& name) {
    return {Var::leaf(Tensor({in, out}, 0.0), true, name + ".weight"),
            Var::leaf(Tensor({1, out}, 0.0), true, name + ".bias")};
}

struct EncoderParams {
    std::vector<Linear> layers;

    std::vector<Var> params() const {
        std::vector<Var> out;
        for (const auto& l : layers) {
            out.push_back(l.weight);
            out.push_back(l.bias);
        }
        return out;
    }
};

inline EncoderParams init_encoder(const EncoderConfig& cfg, std::size_t in_dim, Rng& rng) {
    cfg.validate();
    EncoderParams p;
    std::size_t prev = in_dim;
    for (std::size_t l = 0; l < cfg.layers(); ++l) {
        const std::size_t fan_in = cfg.kind == EncoderKind::sage ? 2 * prev : prev;
        p.layers.push_back(make_linear(fan_in, cfg.hidden[l], rng, "encoder.layer" + std::to_string(l)));
        prev = cfg.hidden[l];
    }
    return p;
}

/// The propagation operator each backbone expects: the renormalized
/// adjacency for GCN/SGC, row-normalized neighbor averaging for GraphSAGE.
inline std::shared_ptr<const SparseMatrix> propagation_matrix(EncoderKind kind, const Graph& g,
                                                              AdjacencyOptions opts) {
    if (kind == EncoderKind::sage) return std::make_shared<const SparseMatrix>(mean_aggregation(g, opts));
    opts.add_self_loops = true;
    return std::make_shared<const SparseMatrix>(normalize_adjacency(g, opts));
}

inline Var activate(Activation a, const Var& x) {
    switch (a) {
        case Activation::relu: return relu(x);
        case Activation::elu: return elu(x);
        case Activation::none: return x;
    }
    return x;
}

/// Node embeddings (N x d). The activation sits between layers; the last
/// layer is linear so the embedding is not clipped before the head.
inline Var encode(const EncoderConfig& cfg, const EncoderParams& params, const std::shared_ptr<const SparseMatrix>& adj,
                  const Var& x, bool training = false, Rng* rng = nullptr) {
    if (adj->rows() != x.rows() || adj->cols() != x.rows()) {
        throw ConfigError("propagation matrix " + std::to_string(adj->rows()) + "x" + std::to_string(adj->cols()) +
                          " does not match " + std::to_string(x.rows()) + " nodes");
    }
    if (params.layers.size() != cfg.layers()) throw ConfigError("encoder parameter count does not match config");
    const std::size_t expect_in = cfg.kind == EncoderKind::sage ? 2 * x.cols() : x.cols();
    if (params.layers.front().weight.rows() != expect_in) {
        throw ConfigError("encoder input width " + std::to_string(params.layers.front().weight.rows()) +
                          " does not match features " + std::to_string(x.cols()));
    }
    auto drop = [&](const Var& h) {
        if (training && cfg.dropout > 0.0 && rng) return dropout(h, cfg.dropout, *rng);
        return h;
    };

    Var h = x;
    switch (cfg.kind) {
        case EncoderKind::gcn:
            for (std::size_t l = 0; l < cfg.layers(); ++l) {
                h = params.layers[l](spmm(adj, drop(h)));
                if (l + 1 < cfg.layers()) h = activate(cfg.activation, h);
            }
            break;
        case EncoderKind::sgc:
            for (std::size_t k = 0; k < cfg.hops; ++k) h = spmm(adj, h);
            h = params.layers[0](drop(h));
            break;
        case EncoderKind::sage:
            for (std::size_t l = 0; l < cfg.layers(); ++l) {
                Var in = drop(h);
                h = params.layers[l](concat_cols(in, spmm(adj, in)));
                if (l + 1 < cfg.layers()) h = activate(cfg.activation, h);
            }
            break;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Parameter (de)serialization

inline nlohmann::ordered_json params_to_json(const std::vector<Var>& params) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& p : params) {
        arr.push_back({{"name", p.name()}, {"shape", p.shape()}, {"values", p.value().raw()}});
    }
    return arr;
}

inline void params_from_json(const nlohmann::json& arr, std::vector<Var>& params) {
    if (arr.size() != params.size()) throw ConfigError("checkpoint parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = arr.at(i);
        if (e.at("name").get<std::string>() != params[i].name()) {
            throw ConfigError("checkpoint parameter '" + e.at("name").get<std::string>() + "' where '" +
                              params[i].name() + "' expected");
        }
        Tensor t(e.at("shape").get<Shape>(), e.at("values").get<std::vector<double>>());
        if (t.shape() != params[i].shape()) throw ShapeError("checkpoint shape mismatch for " + params[i].name());
        params[i].mutable_value() = std::move(t);
    }
}

inline std::vector<Tensor> snapshot(const std::vector<Var>& params) {
    std::vector<Tensor> out;
    for (const auto& p : params) out.push_back(p.value());
    return out;
}

inline void restore(std::vector<Var>& params, const std::vector<Tensor>& saved) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].mutable_value() = saved[i];
}

// ---------------------------------------------------------------------------
// Supervised pre-training

/// Encoder plus linear classification head, i.e. a vanilla GNN classifier.
struct Backbone {
    EncoderConfig config;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    EncoderParams encoder;
    Linear head;

    std::vector<Var> params() const {
        auto p = encoder.params();
        p.push_back(head.weight);
        p.push_back(head.bias);
        return p;
    }

    Var embed(const std::shared_ptr<const SparseMatrix>& adj, const Var& x, bool training = false,
              Rng* rng = nullptr) const {
        return encode(config, encoder, adj, x, training, rng);
    }

    Var logits(const std::shared_ptr<const SparseMatrix>& adj, const Var& x, bool training = false,
               Rng* rng = nullptr) const {
        return head(embed(adj, x, training, rng));
    }
};

inline Backbone init_backbone(const EncoderConfig& cfg, std::size_t input_dim, std::size_t num_classes, Rng& rng) {
    Backbone b;
    b.config = cfg;
    b.input_dim = input_dim;
    b.num_classes = num_classes;
    b.encoder = init_encoder(cfg, input_dim, rng);
    b.head = make_linear(cfg.output_dim(), num_classes, rng, "head");
    return b;
}

inline nlohmann::ordered_json backbone_to_json(const Backbone& b) {
    nlohmann::ordered_json j;
    j["format"] = "mgm-encoder";
    j["version"] = 1;
    j["config"] = to_json(b.config);
    j["input_dim"] = b.input_dim;
    j["num_classes"] = b.num_classes;
    j["params"] = params_to_json(b.params());
    return j;
}

inline Backbone backbone_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "mgm-encoder") throw ConfigError("not an encoder checkpoint");
    if (j.value("version", 0) != 1) throw ConfigError("unsupported encoder checkpoint version");
    Rng dummy(0);
    Backbone b = init_backbone(encoder_config_from_json(j.at("config")), j.at("input_dim").get<std::size_t>(),
                               j.at("num_classes").get<std::size_t>(), dummy);
    auto params = b.params();
    params_from_json(j.at("params"), params);
    return b;
}

/// Deep copy: fresh leaves holding the same values.
inline Backbone clone(const Backbone& b) {
    Backbone c = b;
    c.encoder.layers.clear();
    for (const auto& l : b.encoder.layers) {
        c.encoder.layers.push_back({Var::leaf(l.weight.value(), true, l.weight.name()),
                                    Var::leaf(l.bias.value(), true, l.bias.name())});
    }
    c.head = {Var::leaf(b.head.weight.value(), true, b.head.weight.name()),
              Var::leaf(b.head.bias.value(), true, b.head.bias.name())};
    return c;
}

struct PretrainOptions {
    std::size_t max_epochs = 300;
    std::size_t patience = 10;
    AdamOptions adam;
};

struct PretrainResult {
    Backbone model;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::size_t best_epoch = 0;
};

/// Masked cross-entropy training with Adam; the parameters with the best
/// validation loss are restored at the end.
inline PretrainResult pretrain(const EncoderConfig& cfg, const Graph& g, const SplitMasks& masks,
                               const std::shared_ptr<const SparseMatrix>& adj, const PretrainOptions& opts,
                               const SeedSequence& seeds) {
    std::vector<bool> train = masks.train;
    bool any = false;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train[i] && g.labels[i] == kUnlabeled) train[i] = false;
        any = any || train[i];
    }
    if (!any) throw PreconditionError("pretrain: training mask is empty");
    std::vector<bool> val = masks.val;
    bool has_val = false;
    for (bool v : val) has_val = has_val || v;
    if (!has_val) val = train;

    Rng init = seeds.stream("init");
    Rng drop = seeds.stream("dropout");
    PretrainResult r;
    r.model = init_backbone(cfg, g.feature_dim(), g.num_classes(), init);
    auto params = r.model.params();
    AdamState adam(params, opts.adam);
    const Var x = Var::constant(g.features);
    const Tensor targets = one_hot_labels(g);

    EarlyStopping stopper(opts.patience, EarlyStopping::Mode::minimize);
    auto best = snapshot(params);
    for (std::size_t epoch = 0; epoch < opts.max_epochs; ++epoch) {
        adam.zero_grad();
        Var loss = softmax_cross_entropy(r.model.logits(adj, x, true, &drop), targets, train);
        if (!std::isfinite(loss.item())) {
            throw TrainingError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
        }
        loss.backward();
        adam.step();
        r.train_loss.push_back(loss.item());

        const double vl = softmax_cross_entropy(r.model.logits(adj, x), targets, val).item();
        if (!std::isfinite(vl)) throw TrainingError("pretrain: non-finite validation loss at epoch " + std::to_string(epoch));
        r.val_loss.push_back(vl);
        if (stopper.update(vl)) {
            best = snapshot(params);
            r.best_epoch = epoch;
        }
        if (stopper.should_stop()) break;
    }
    restore(params, best);
    return r;
}

}  // namespace mgm
