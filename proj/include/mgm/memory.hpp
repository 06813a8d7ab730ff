#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgm/autodiff.hpp"
#include "mgm/encoder.hpp"
#include "mgm/error.hpp"
#include "mgm/graph.hpp"

namespace mgm {

enum class MemoryMode { full, sampled };

inline std::string to_string(MemoryMode m) { return m == MemoryMode::full ? "full" : "sampled"; }

inline MemoryMode parse_memory_mode(const std::string& s) {
    if (s == "full") return MemoryMode::full;
    if (s == "sampled") return MemoryMode::sampled;
    throw ConfigError("unknown memory mode '" + s + "' (expected full | sampled)");
}

/// Stored embeddings of labeled candidate nodes. Rows are detached copies of
/// the encoder output; `omega` holds each row's expected candidate weight
/// (empty means uniform).
struct MemoryBank {
    std::vector<std::size_t> node_index;  // graph node per row, unique
    std::vector<std::string> node_ids;
    std::vector<int> labels;
    std::size_t num_classes = 0;
    Tensor embeddings;  // M x d
    std::vector<double> omega;
    MemoryMode mode = MemoryMode::full;
    double threshold = 1.0;
    std::vector<std::size_t> source_rows;  // row in the full memory

    std::size_t size() const { return node_index.size(); }
    bool empty() const { return node_index.empty(); }

    Tensor labels_one_hot() const {
        Tensor y = Tensor::zeros(std::max<std::size_t>(size(), 1), num_classes);
        for (std::size_t m = 0; m < size(); ++m) y(m, static_cast<std::size_t>(labels[m])) = 1.0;
        return y;
    }

    /// Memory row holding graph node `node`, or size() when absent.
    std::size_t row_of(std::size_t node) const {
        auto it = std::find(node_index.begin(), node_index.end(), node);
        return static_cast<std::size_t>(it - node_index.begin());
    }
};

/// Embeds the graph once and stores the rows of the training-labeled nodes.
inline MemoryBank build_memory(const Backbone& model, const std::shared_ptr<const SparseMatrix>& adj, const Graph& g,
                               const std::vector<bool>& train_mask) {
    MemoryBank mem;
    mem.num_classes = g.num_classes();
    for (std::size_t i = 0; i < train_mask.size(); ++i) {
        if (train_mask[i] && g.labels[i] != kUnlabeled) {
            mem.node_index.push_back(i);
            mem.node_ids.push_back(g.node_ids[i]);
            mem.labels.push_back(g.labels[i]);
        }
    }
    if (mem.empty()) throw PreconditionError("build_memory: training mask selects no labeled nodes");
    mem.source_rows.resize(mem.size());
    std::iota(mem.source_rows.begin(), mem.source_rows.end(), 0);
    const Tensor z = model.embed(adj, Var::constant(g.features)).value();
    mem.embeddings = Tensor::zeros(mem.size(), z.cols());
    for (std::size_t m = 0; m < mem.size(); ++m) {
        auto src = z.row(mem.node_index[m]);
        std::copy(src.begin(), src.end(), mem.embeddings.row(m).begin());
    }
    return mem;
}

/// Recomputes the stored rows from the current encoder; ids, labels and
/// weights are untouched.
inline void refresh(MemoryBank& mem, const Backbone& model, const std::shared_ptr<const SparseMatrix>& adj,
                    const Graph& g) {
    if (mem.empty()) throw PreconditionError("refresh: memory not built");
    const Tensor z = model.embed(adj, Var::constant(g.features)).value();
    for (std::size_t m = 0; m < mem.size(); ++m) {
        auto src = z.row(mem.node_index[m]);
        std::copy(src.begin(), src.end(), mem.embeddings.row(m).begin());
    }
}

/// E[w_i] = lambda_i / sum_j lambda_j under Dir(lambda).
inline std::vector<double> expected_omega(std::span<const double> lambda) {
    if (lambda.empty()) throw PreconditionError("expected_omega: empty parameter vector");
    double total = 0.0;
    for (double l : lambda) {
        if (!(l > 0.0)) throw DomainError("expected_omega: lambda must be strictly positive");
        total += l;
    }
    std::vector<double> w(lambda.begin(), lambda.end());
    for (double& x : w) x /= total;
    return w;
}

/// Positions of the shortest prefix of rows, sorted by descending weight
/// (ties by ascending graph node index), whose cumulative weight reaches
/// `threshold`.
inline std::vector<std::size_t> top_mass_prefix(std::span<const double> omega, std::span<const std::size_t> node_index,
                                                double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("mass threshold must lie in (0, 1]");
    std::vector<std::size_t> order(omega.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (omega[a] != omega[b]) return omega[a] > omega[b];
        return node_index[a] < node_index[b];
    });
    double total = 0.0;
    for (double w : omega) total += w;
    // Accumulated mass is compared against threshold * total so that a
    // vector summing to 1 - 1e-16 still admits threshold 1.
    const double target = threshold * total;
    std::vector<std::size_t> keep;
    double mass = 0.0;
    for (std::size_t r : order) {
        keep.push_back(r);
        mass += omega[r];
        if (mass >= target * (1.0 - 1e-12)) break;
    }
    return keep;
}

inline MemoryBank select_candidates(const MemoryBank& mem, std::span<const double> omega, double threshold = 0.90) {
    if (omega.size() != mem.size()) throw PreconditionError("select_candidates: weights not aligned with memory");
    auto keep = top_mass_prefix(omega, mem.node_index, threshold);
    MemoryBank out;
    out.num_classes = mem.num_classes;
    out.mode = MemoryMode::sampled;
    out.threshold = threshold;
    out.embeddings = Tensor::zeros(keep.size(), mem.embeddings.cols());
    for (std::size_t k = 0; k < keep.size(); ++k) {
        const std::size_t r = keep[k];
        out.node_index.push_back(mem.node_index[r]);
        out.node_ids.push_back(mem.node_ids[r]);
        out.labels.push_back(mem.labels[r]);
        out.omega.push_back(omega[r]);
        out.source_rows.push_back(mem.source_rows.empty() ? r : mem.source_rows[r]);
        auto src = mem.embeddings.row(r);
        std::copy(src.begin(), src.end(), out.embeddings.row(k).begin());
    }
    return out;
}

/// Memory restricted to the given share of expected mass; fraction 1 keeps
/// every row in its original order.
inline MemoryBank select_fraction(const MemoryBank& mem, std::span<const double> omega, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("memory fraction must lie in (0, 1]");
    if (fraction == 1.0) {
        if (omega.size() != mem.size()) throw PreconditionError("select_fraction: weights not aligned with memory");
        MemoryBank out = mem;
        out.omega.assign(omega.begin(), omega.end());
        out.mode = MemoryMode::full;
        out.threshold = 1.0;
        return out;
    }
    return select_candidates(mem, omega, fraction);
}

inline nlohmann::ordered_json memory_to_json(const MemoryBank& mem) {
    nlohmann::ordered_json j;
    j["format"] = "mgm-memory";
    j["version"] = 1;
    j["mode"] = to_string(mem.mode);
    j["threshold"] = mem.threshold;
    j["M"] = mem.size();
    j["num_classes"] = mem.num_classes;
    j["ids"] = mem.node_ids;
    j["node_index"] = mem.node_index;
    j["labels"] = mem.labels;
    j["omega"] = mem.omega;
    j["source_rows"] = mem.source_rows;
    j["dim"] = mem.embeddings.empty() ? 0 : mem.embeddings.cols();
    j["embeddings"] = mem.embeddings.raw();
    return j;
}

inline MemoryBank memory_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "mgm-memory") throw ConfigError("not a memory artifact");
    MemoryBank mem;
    mem.mode = parse_memory_mode(j.at("mode").get<std::string>());
    mem.threshold = j.at("threshold").get<double>();
    mem.num_classes = j.at("num_classes").get<std::size_t>();
    mem.node_ids = j.at("ids").get<std::vector<std::string>>();
    mem.node_index = j.at("node_index").get<std::vector<std::size_t>>();
    mem.labels = j.at("labels").get<std::vector<int>>();
    mem.omega = j.at("omega").get<std::vector<double>>();
    mem.source_rows = j.at("source_rows").get<std::vector<std::size_t>>();
    const auto dim = j.at("dim").get<std::size_t>();
    if (!mem.node_index.empty()) {
        mem.embeddings = Tensor({mem.node_index.size(), dim}, j.at("embeddings").get<std::vector<double>>());
    }
    return mem;
}

}  // namespace mgm
