#pragma once

// Late fusion of text-model and graph-model probability tables.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgm/error.hpp"
#include "mgm/graph.hpp"
#include "mgm/log.hpp"
#include "mgm/metrics.hpp"
#include "mgm/rng.hpp"
#include "mgm/splits.hpp"
#include "mgm/tensor.hpp"

namespace mgm {

/// Per-media probability vectors from one model. The all-zero vector is a
/// legal placeholder for "no prediction".
struct ProbabilityTable {
    std::string source;
    std::vector<std::string> labels;
    std::size_t num_classes = 0;
    std::map<std::string, std::vector<double>> rows;

    std::size_t size() const { return rows.size(); }
    bool contains(const std::string& id) const { return rows.count(id) > 0; }
    const std::vector<double>& at(const std::string& id) const {
        auto it = rows.find(id);
        if (it == rows.end()) throw PipelineError("table '" + source + "' has no entry for '" + id + "'");
        return it->second;
    }

    void set(const std::string& id, std::vector<double> p) {
        check(id, p);
        rows[id] = std::move(p);
    }

    void check(const std::string& id, const std::vector<double>& p) const {
        if (p.size() != num_classes) {
            throw IngestionError("media '" + id + "': expected " + std::to_string(num_classes) + " probabilities, got " +
                                 std::to_string(p.size()));
        }
        double s = 0.0;
        for (double v : p) {
            if (!std::isfinite(v) || v < 0.0) throw IngestionError("media '" + id + "': negative or non-finite entry");
            s += v;
        }
        if (s != 0.0 && std::abs(s - 1.0) > 1e-6) {
            throw IngestionError("media '" + id + "': probabilities sum to " + std::to_string(s));
        }
    }
};

/// Reads `{"metadata": {"source": ..., "labels": [...]}, "probabilities":
/// {id: [...]}}`; a bare `{id: [...]}` object is accepted too. An empty
/// file is an empty table.
inline ProbabilityTable load_probabilities(const std::string& path, std::size_t num_classes) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    ProbabilityTable t;
    t.num_classes = num_classes;
    t.source = path;
    const std::string text = ss.str();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return t;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw IngestionError(path + ": " + e.what());
    }
    if (!j.is_object()) throw IngestionError(path + ": top level must be an object");
    const nlohmann::json* probs = &j;
    if (j.contains("probabilities")) {
        probs = &j.at("probabilities");
        if (j.contains("metadata")) {
            const auto& meta = j.at("metadata");
            t.source = meta.value("source", t.source);
            if (meta.contains("labels")) t.labels = meta.at("labels").get<std::vector<std::string>>();
            if (!t.labels.empty() && t.labels.size() != num_classes) {
                throw IngestionError(path + ": metadata lists " + std::to_string(t.labels.size()) + " labels, expected " +
                                     std::to_string(num_classes));
            }
        }
    }
    for (const auto& [id, v] : probs->items()) {
        if (!v.is_array()) throw IngestionError("media '" + id + "': probability vector must be an array");
        std::vector<double> p;
        for (const auto& x : v) {
            if (!x.is_number()) throw IngestionError("media '" + id + "': non-numeric probability");
            p.push_back(x.get<double>());
        }
        t.set(id, std::move(p));
    }
    return t;
}

inline nlohmann::ordered_json to_json(const ProbabilityTable& t) {
    nlohmann::ordered_json j;
    j["metadata"] = {{"source", t.source}, {"labels", t.labels}};
    nlohmann::ordered_json probs = nlohmann::ordered_json::object();
    for (const auto& [id, p] : t.rows) probs[id] = p;
    j["probabilities"] = std::move(probs);
    return j;
}

inline void save_probabilities(const ProbabilityTable& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << to_json(t).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Imputation

enum class ImputeMode { zero, graph };
enum class Provenance { text, graph, zero };

inline std::string to_string(ImputeMode m) { return m == ImputeMode::zero ? "zero" : "graph"; }
inline ImputeMode parse_impute_mode(const std::string& s) {
    if (s == "zero") return ImputeMode::zero;
    if (s == "graph") return ImputeMode::graph;
    throw ConfigError("unknown imputation mode '" + s + "' (expected zero | graph)");
}
inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::text: return "text";
        case Provenance::graph: return "graph";
        case Provenance::zero: return "zero";
    }
    return "zero";
}

struct ImputedTable {
    ProbabilityTable table;
    std::map<std::string, Provenance> provenance;
};

/// Completes `table` over `universe`: present vectors are kept, missing ones
/// come from `fallback` (graph mode) or are all-zero.
inline ImputedTable impute_missing(const ProbabilityTable& table, const std::vector<std::string>& universe,
                                   ImputeMode mode, const ProbabilityTable* fallback = nullptr) {
    if (mode == ImputeMode::graph && !fallback) throw PipelineError("graph imputation needs a graph table");
    if (fallback && fallback->num_classes != table.num_classes) {
        throw PipelineError("fallback table has " + std::to_string(fallback->num_classes) + " classes, expected " +
                            std::to_string(table.num_classes));
    }
    ImputedTable out;
    out.table.source = table.source;
    out.table.labels = table.labels;
    out.table.num_classes = table.num_classes;
    for (const auto& id : universe) {
        if (table.contains(id)) {
            out.table.rows[id] = table.at(id);
            out.provenance[id] = Provenance::text;
        } else if (mode == ImputeMode::graph) {
            if (!fallback->contains(id)) {
                throw PipelineError("graph table '" + fallback->source + "' has no entry for '" + id + "'");
            }
            out.table.rows[id] = fallback->at(id);
            out.provenance[id] = Provenance::graph;
        } else {
            out.table.rows[id] = std::vector<double>(table.num_classes, 0.0);
            out.provenance[id] = Provenance::zero;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fusion layer and meta-learner

/// softmax([p_text || p_graph] W + b) with W of shape 2C x C.
inline std::vector<double> fuse_text_graph(std::span<const double> p_text, std::span<const double> p_graph,
                                           const Tensor& w, std::span<const double> b) {
    const std::size_t c = p_text.size();
    if (p_graph.size() != c || w.rows() != 2 * c || w.cols() != c || b.size() != c) {
        throw ShapeError("fuse_text_graph: expected W " + std::to_string(2 * c) + "x" + std::to_string(c));
    }
    Tensor logits({1, c}, std::vector<double>(b.begin(), b.end()));
    for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t i = 0; i < c; ++i) logits(0, j) += p_text[i] * w(i, j) + p_graph[i] * w(c + i, j);
    }
    auto p = softmax_rows(logits).raw();
    return p;
}

struct MetaLearnerOptions {
    double l2 = 1.0;
    double tol = 1e-6;
    std::size_t max_iter = 5000;
};

/// Multinomial logistic regression, loss = sum_i CE_i + l2/2 ||W||^2 (the
/// intercept is not penalized), fit by full-batch gradient descent with
/// Armijo backtracking.
class MetaLearner {
public:
    Tensor weight;  // F x C
    Tensor bias;    // 1 x C
    double l2 = 1.0;
    std::size_t iterations = 0;
    double grad_norm = 0.0;

    static MetaLearner fit(const Tensor& x, const std::vector<int>& y, std::size_t num_classes,
                           const MetaLearnerOptions& opts = {}) {
        if (x.rows() != y.size()) throw ShapeError("meta-learner: feature rows and labels differ");
        if (num_classes < 2) throw FitError("meta-learner needs at least two classes");
        std::vector<std::size_t> count(num_classes, 0);
        for (int v : y) {
            if (v < 0 || static_cast<std::size_t>(v) >= num_classes) throw FitError("meta-learner: label out of range");
            ++count[static_cast<std::size_t>(v)];
        }
        std::size_t present = 0;
        for (auto n : count) present += n > 0 ? 1 : 0;
        if (present < 2) throw FitError("meta-learner: degenerate single-class training data");
        if (present < num_classes) throw FitError("meta-learner: every class needs at least one training example");

        const std::size_t n = x.rows(), f = x.cols(), c = num_classes;
        Tensor onehot = Tensor::zeros(n, c);
        for (std::size_t i = 0; i < n; ++i) onehot(i, static_cast<std::size_t>(y[i])) = 1.0;

        MetaLearner m;
        m.l2 = opts.l2;
        m.weight = Tensor::zeros(f, c);
        m.bias = Tensor::zeros(1, c);

        auto objective = [&](const Tensor& w, const Tensor& b) {
            Tensor logits = dense_matmul(x, w);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) logits(i, j) += b(0, j);
            double loss = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double mx = logits(i, 0);
                for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
                double s = 0.0;
                for (std::size_t j = 0; j < c; ++j) s += std::exp(logits(i, j) - mx);
                loss += mx + std::log(s) - logits(i, static_cast<std::size_t>(y[i]));
            }
            double reg = 0.0;
            for (double v : w.values()) reg += v * v;
            return std::pair{loss + 0.5 * opts.l2 * reg, logits};
        };

        auto [loss, logits] = objective(m.weight, m.bias);
        double step = 1.0;
        for (m.iterations = 0; m.iterations < opts.max_iter; ++m.iterations) {
            Tensor resid = softmax_rows(logits);
            for (std::size_t i = 0; i < resid.size(); ++i) resid[i] -= onehot[i];
            Tensor gw = dense_matmul(transpose(x), resid);
            for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += opts.l2 * m.weight[i];
            Tensor gb = Tensor::zeros(1, c);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) gb(0, j) += resid(i, j);
            double g2 = 0.0;
            for (double v : gw.values()) g2 += v * v;
            for (double v : gb.values()) g2 += v * v;
            m.grad_norm = std::sqrt(g2);
            if (m.grad_norm < opts.tol) break;

            step = std::min(step * 2.0, 1e6);
            for (;;) {
                Tensor w2 = m.weight, b2 = m.bias;
                for (std::size_t i = 0; i < w2.size(); ++i) w2[i] -= step * gw[i];
                for (std::size_t i = 0; i < b2.size(); ++i) b2[i] -= step * gb[i];
                auto [l2v, lg2] = objective(w2, b2);
                if (l2v <= loss - 0.5 * step * g2 || step < 1e-20) {
                    m.weight = std::move(w2);
                    m.bias = std::move(b2);
                    loss = l2v;
                    logits = std::move(lg2);
                    break;
                }
                step *= 0.5;
            }
        }
        return m;
    }

    Tensor predict_proba(const Tensor& x) const {
        if (x.cols() != weight.rows()) {
            throw ShapeError("meta-learner expects " + std::to_string(weight.rows()) + " features, got " +
                             std::to_string(x.cols()));
        }
        Tensor logits = dense_matmul(x, weight);
        for (std::size_t i = 0; i < logits.rows(); ++i)
            for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) += bias(0, j);
        return softmax_rows(logits);
    }

    std::vector<int> predict(const Tensor& x) const {
        Tensor p = predict_proba(x);
        std::vector<int> out;
        for (std::size_t i = 0; i < p.rows(); ++i) {
            auto r = p.row(i);
            out.push_back(static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin()));
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Stage pipeline

/// Gold labels as `id<TAB>label` rows, label names resolved against `labels`.
inline std::map<std::string, int> load_gold(const std::string& path, const std::vector<std::string>& labels) {
    std::map<std::string, int> gold;
    auto lines = detail::read_lines(path);
    for (std::size_t li = 0; li < lines.size(); ++li) {
        auto cols = detail::split_tabs(lines[li]);
        if (cols.size() < 2) throw IngestionError(path + ": row " + std::to_string(li + 1) + " needs id and label");
        const std::string id(detail::trim(cols[0]));
        const std::string name(detail::trim(cols[1]));
        auto it = std::find(labels.begin(), labels.end(), name);
        if (it == labels.end()) {
            if (li == 0) continue;  // header
            throw IngestionError(path + ": row " + std::to_string(li + 1) + ": unknown label '" + name + "'");
        }
        gold[id] = static_cast<int>(it - labels.begin());
    }
    return gold;
}

struct IdSplit {
    std::vector<std::string> train;
    std::vector<std::string> test;
};

/// Class-stratified split of the gold ids; each class sends
/// round(test_ratio * n_c) ids to test.
inline IdSplit stratified_id_split(const std::map<std::string, int>& gold, std::size_t num_classes, double test_ratio,
                                   std::uint64_t seed) {
    if (!(test_ratio > 0.0 && test_ratio < 1.0)) throw ConfigError("test ratio must lie in (0, 1)");
    std::vector<std::vector<std::string>> by_class(num_classes);
    for (const auto& [id, y] : gold) by_class.at(static_cast<std::size_t>(y)).push_back(id);
    Rng rng(seed);
    IdSplit s;
    for (auto& ids : by_class) {
        rng.shuffle(ids.begin(), ids.end());
        const auto nt = static_cast<std::size_t>(std::llround(test_ratio * static_cast<double>(ids.size())));
        for (std::size_t i = 0; i < ids.size(); ++i) (i < nt ? s.test : s.train).push_back(ids[i]);
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

/// Split file: `id<TAB>train|test` rows.
inline IdSplit load_id_split(const std::string& path) {
    IdSplit s;
    for (const auto& line : detail::read_lines(path)) {
        auto cols = detail::split_tabs(line);
        if (cols.size() < 2) throw IngestionError(path + ": split rows need id and part");
        const std::string part(detail::trim(cols[1]));
        if (part == "train") s.train.emplace_back(detail::trim(cols[0]));
        else if (part == "test") s.test.emplace_back(detail::trim(cols[0]));
        else if (part != "part") throw IngestionError(path + ": unknown split part '" + part + "'");
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

struct StageInputs {
    std::size_t num_classes = 0;
    std::vector<ProbabilityTable> text;   // stage 1-2 use the first, stage 3-4 the first two
    std::vector<ProbabilityTable> graph;  // stage 2 uses the first; stage 4 groups of three
    ImputeMode stage3_impute = ImputeMode::graph;
    std::map<std::string, int> gold;
    IdSplit split;
    MetaLearnerOptions meta;
};

struct StageResult {
    int stage = 0;
    MetricsReport metrics;               // single run, or the first run of stage 4
    std::vector<MetricsReport> runs;     // one per stage-4 group
    ProbabilityTable fused;              // test-split probabilities
    std::map<std::string, Provenance> provenance;
};

namespace detail {

inline Tensor feature_matrix(const std::vector<const ProbabilityTable*>& tables, const std::vector<std::string>& ids) {
    std::size_t width = 0;
    for (const auto* t : tables) width += t->num_classes;
    Tensor x = Tensor::zeros(std::max<std::size_t>(ids.size(), 1), width);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::size_t off = 0;
        for (const auto* t : tables) {
            const auto& p = t->at(ids[i]);
            for (std::size_t j = 0; j < p.size(); ++j) x(i, off + j) = p[j];
            off += t->num_classes;
        }
    }
    return x;
}

inline std::vector<int> gold_for(const std::map<std::string, int>& gold, const std::vector<std::string>& ids) {
    std::vector<int> y;
    for (const auto& id : ids) {
        auto it = gold.find(id);
        if (it == gold.end()) throw PipelineError("no gold label for '" + id + "'");
        y.push_back(it->second);
    }
    return y;
}

}  // namespace detail

/// Stage 1: text probabilities, zero-imputed. Stage 2: text probabilities,
/// graph-imputed. Stage 3: two text tables concatenated. Stage 4: stage-3
/// features plus three graph tables per run; runs are reported separately
/// and aggregated by the caller.
inline StageResult run_stage_pipeline(int stage, const StageInputs& in) {
    if (stage < 1 || stage > 4) throw ConfigError("stage must be 1, 2, 3 or 4");
    const std::string tag = "stage " + std::to_string(stage);
    const std::size_t need_text = stage >= 3 ? 2 : 1;
    if (in.text.size() < need_text) throw PipelineError(tag + ": needs " + std::to_string(need_text) + " text table(s)");
    if (stage == 2 && in.graph.empty()) throw PipelineError(tag + ": needs a graph table for imputation");
    if (stage == 3 && in.stage3_impute == ImputeMode::graph && in.graph.empty()) {
        throw PipelineError(tag + ": graph imputation needs a graph table");
    }
    if (stage == 4 && (in.graph.size() < 3 || in.graph.size() % 3 != 0)) {
        throw PipelineError(tag + ": needs graph tables in groups of three, got " + std::to_string(in.graph.size()));
    }
    if (in.split.train.empty() || in.split.test.empty()) throw PipelineError(tag + ": empty train or test split");

    std::vector<std::string> universe = in.split.train;
    universe.insert(universe.end(), in.split.test.begin(), in.split.test.end());
    std::sort(universe.begin(), universe.end());

    StageResult r;
    r.stage = stage;
    std::vector<ImputedTable> text;
    const ImputeMode mode = stage == 1   ? ImputeMode::zero
                            : stage == 2 ? ImputeMode::graph
                                         : (in.graph.empty() ? ImputeMode::zero : in.stage3_impute);
    const ProbabilityTable* fallback = in.graph.empty() ? nullptr : &in.graph.front();
    for (std::size_t t = 0; t < need_text; ++t) text.push_back(impute_missing(in.text[t], universe, mode, fallback));
    r.provenance = text.front().provenance;

    std::vector<std::vector<const ProbabilityTable*>> runs;
    std::vector<const ProbabilityTable*> base;
    for (const auto& t : text) base.push_back(&t.table);
    if (stage == 4) {
        for (std::size_t g = 0; g < in.graph.size(); g += 3) {
            auto feats = base;
            for (std::size_t k = 0; k < 3; ++k) feats.push_back(&in.graph[g + k]);
            runs.push_back(feats);
        }
    } else {
        runs.push_back(base);
    }

    const auto y_train = detail::gold_for(in.gold, in.split.train);
    const auto y_test = detail::gold_for(in.gold, in.split.test);
    for (std::size_t run = 0; run < runs.size(); ++run) {
        const MetaLearner meta =
            MetaLearner::fit(detail::feature_matrix(runs[run], in.split.train), y_train, in.num_classes, in.meta);
        const Tensor proba = meta.predict_proba(detail::feature_matrix(runs[run], in.split.test));
        std::vector<int> pred;
        for (std::size_t i = 0; i < in.split.test.size(); ++i) {
            auto row = proba.row(i);
            pred.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
        r.runs.push_back(compute_metrics(pred, y_test, in.num_classes));
        if (run == 0) {
            r.fused.source = tag;
            r.fused.labels = in.text.front().labels;
            r.fused.num_classes = in.num_classes;
            for (std::size_t i = 0; i < in.split.test.size(); ++i) {
                auto row = proba.row(i);
                r.fused.rows[in.split.test[i]] = std::vector<double>(row.begin(), row.end());
            }
        }
    }
    r.metrics = r.runs.front();
    return r;
}

}  // namespace mgm
