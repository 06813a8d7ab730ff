#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mgm/error.hpp"
#include "mgm/tensor.hpp"

namespace mgm {

inline constexpr int kUnlabeled = -1;

/// Undirected weighted edge with u < v.
struct Edge {
    std::size_t u;
    std::size_t v;
    double weight;

    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Partially labeled, undirected, weighted node-attributed graph.
struct Graph {
    std::vector<std::string> node_ids;
    Tensor features;  // N x F
    std::vector<Edge> edges;
    std::vector<int> labels;  // class index or kUnlabeled
    std::vector<std::string> label_names;

    std::size_t num_nodes() const { return node_ids.size(); }
    std::size_t num_classes() const { return label_names.size(); }
    std::size_t feature_dim() const { return features.cols(); }

    std::vector<std::size_t> labeled_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] != kUnlabeled) out.push_back(i);
        return out;
    }

    std::size_t num_labeled() const { return labeled_indices().size(); }

    void validate() const {
        const std::size_t n = num_nodes();
        if (n == 0) throw PreconditionError("graph has no nodes");
        if (features.rows() != n || features.cols() < 1) {
            throw ShapeError("feature matrix " + shape_str(features.shape()) + " for " + std::to_string(n) +
                             " nodes");
        }
        if (labels.size() != n) throw ShapeError("label array length differs from node count");
        for (int y : labels) {
            if (y != kUnlabeled && (y < 0 || static_cast<std::size_t>(y) >= num_classes())) {
                throw DomainError("label index " + std::to_string(y) + " outside class range");
            }
        }
        for (const auto& e : edges) {
            if (e.u >= n || e.v >= n || e.u >= e.v) throw DomainError("malformed edge");
            if (!std::isfinite(e.weight) || e.weight < 0.0) throw DomainError("edge weight must be finite, >= 0");
        }
    }

    friend bool operator==(const Graph&, const Graph&) = default;
};

/// Canonical undirected edge list: self-loops dropped, (u,v) ordered so u < v,
/// parallel or reversed duplicates collapsed to the maximum weight, sorted.
inline std::vector<Edge> canonical_edges(const std::vector<Edge>& raw) {
    std::map<std::pair<std::size_t, std::size_t>, double> best;
    for (const auto& e : raw) {
        if (e.u == e.v) continue;
        auto key = std::minmax(e.u, e.v);
        auto [it, inserted] = best.try_emplace({key.first, key.second}, e.weight);
        if (!inserted) it->second = std::max(it->second, e.weight);
    }
    std::vector<Edge> out;
    out.reserve(best.size());
    for (const auto& [k, w] : best) out.push_back({k.first, k.second, w});
    return out;
}

// ---------------------------------------------------------------------------
// Text I/O

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = line.find('\t', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\n')) s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    return s;
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open '" + path + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        std::string_view t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        lines.emplace_back(t);
    }
    return lines;
}

}  // namespace detail

struct LoadOptions {
    // Per-feature z-scoring over all nodes. Off gives the raw file values.
    bool zscore = true;
};

inline void zscore_features(Tensor& x) {
    const std::size_t n = x.rows(), f = x.cols();
    for (std::size_t j = 0; j < f; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += x(i, j);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (x(i, j) - mu) * (x(i, j) - mu);
        var /= static_cast<double>(n);
        const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
        for (std::size_t i = 0; i < n; ++i) x(i, j) = (x(i, j) - mu) / sd;
    }
}

/// Reads the tab-separated nodes / edges / labels triple.
inline Graph load_graph(const std::string& nodes_path, const std::string& edges_path,
                        const std::string& labels_path, const std::vector<std::string>& label_map,
                        LoadOptions opts = {}) {
    if (label_map.empty()) throw ConfigError("label map is empty");
    Graph g;
    g.label_names = label_map;

    std::unordered_map<std::string, std::size_t> index;
    std::vector<double> values;
    std::size_t feat_dim = 0;
    auto node_lines = detail::read_lines(nodes_path);
    for (std::size_t li = 0; li < node_lines.size(); ++li) {
        auto fields = detail::split_tabs(node_lines[li]);
        if (fields.size() < 2) {
            throw IngestionError(nodes_path + " row " + std::to_string(li + 1) + ": expected id and features");
        }
        std::vector<double> row;
        bool numeric = true;
        for (std::size_t k = 1; k < fields.size(); ++k) {
            auto v = detail::parse_double(fields[k]);
            if (!v) {
                numeric = false;
                break;
            }
            row.push_back(*v);
        }
        if (!numeric) {
            if (li == 0) continue;  // header
            throw IngestionError(nodes_path + " row " + std::to_string(li + 1) + ": non-numeric feature");
        }
        if (feat_dim == 0) feat_dim = row.size();
        if (row.size() != feat_dim) {
            throw IngestionError(nodes_path + " row " + std::to_string(li + 1) + ": expected " +
                                 std::to_string(feat_dim) + " features, found " + std::to_string(row.size()));
        }
        std::string id(detail::trim(fields[0]));
        if (!index.emplace(id, g.node_ids.size()).second) {
            throw IngestionError(nodes_path + " row " + std::to_string(li + 1) + ": duplicate node id '" + id + "'");
        }
        g.node_ids.push_back(id);
        values.insert(values.end(), row.begin(), row.end());
    }
    if (g.node_ids.empty()) throw IngestionError(nodes_path + ": no nodes");
    g.features = Tensor({g.node_ids.size(), feat_dim}, std::move(values));
    if (opts.zscore) zscore_features(g.features);

    std::vector<Edge> raw;
    auto edge_lines = detail::read_lines(edges_path);
    for (std::size_t li = 0; li < edge_lines.size(); ++li) {
        auto fields = detail::split_tabs(edge_lines[li]);
        const std::string where = edges_path + " row " + std::to_string(li + 1);
        if (fields.size() < 2) throw IngestionError(where + ": expected src and dst");
        double w = 1.0;
        if (fields.size() >= 3) {
            auto v = detail::parse_double(fields[2]);
            if (!v) {
                if (li == 0) continue;
                throw IngestionError(where + ": non-numeric weight");
            }
            w = *v;
        }
        auto s = index.find(std::string(detail::trim(fields[0])));
        auto d = index.find(std::string(detail::trim(fields[1])));
        if (s == index.end() || d == index.end()) throw IngestionError(where + ": dangling edge endpoint");
        if (!std::isfinite(w) || w < 0.0) throw IngestionError(where + ": weight must be finite and >= 0");
        raw.push_back({s->second, d->second, w});
    }
    g.edges = canonical_edges(raw);

    g.labels.assign(g.node_ids.size(), kUnlabeled);
    std::unordered_map<std::string, int> label_index;
    for (std::size_t c = 0; c < label_map.size(); ++c) label_index.emplace(label_map[c], static_cast<int>(c));
    auto label_lines = detail::read_lines(labels_path);
    for (std::size_t li = 0; li < label_lines.size(); ++li) {
        auto fields = detail::split_tabs(label_lines[li]);
        const std::string where = labels_path + " row " + std::to_string(li + 1);
        if (fields.size() < 2) throw IngestionError(where + ": expected node id and label");
        std::string id(detail::trim(fields[0]));
        std::string lab(detail::trim(fields[1]));
        auto node = index.find(id);
        auto cls = label_index.find(lab);
        if (li == 0 && node == index.end() && cls == label_index.end()) continue;  // header
        if (cls == label_index.end()) throw IngestionError(where + ": unknown label '" + lab + "'");
        if (node == index.end()) throw IngestionError(where + ": unknown node id '" + id + "'");
        int& slot = g.labels[node->second];
        if (slot != kUnlabeled && slot != cls->second) {
            throw IngestionError(where + ": conflicting label for '" + id + "'");
        }
        slot = cls->second;
    }
    g.validate();
    return g;
}

inline void save_graph(const Graph& g, const std::string& nodes_path, const std::string& edges_path,
                       const std::string& labels_path) {
    {
        std::ofstream out(nodes_path);
        if (!out) throw IoError("cannot write '" + nodes_path + "'");
        for (std::size_t i = 0; i < g.num_nodes(); ++i) {
            out << g.node_ids[i];
            for (double v : g.features.row(i)) out << '\t' << detail::format_double(v);
            out << '\n';
        }
    }
    {
        std::ofstream out(edges_path);
        if (!out) throw IoError("cannot write '" + edges_path + "'");
        for (const auto& e : g.edges) {
            out << g.node_ids[e.u] << '\t' << g.node_ids[e.v] << '\t' << detail::format_double(e.weight) << '\n';
        }
    }
    {
        std::ofstream out(labels_path);
        if (!out) throw IoError("cannot write '" + labels_path + "'");
        for (std::size_t i = 0; i < g.num_nodes(); ++i) {
            if (g.labels[i] != kUnlabeled) out << g.node_ids[i] << '\t' << g.label_names[g.labels[i]] << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Propagation matrices

struct AdjacencyOptions {
    bool add_self_loops = true;
    bool weighted = true;
    double weight_scale = 1.0;  // multiplies stored edge weights
};

/// D^-1/2 (A + I) D^-1/2. Nodes left without any entry get a unit self-loop.
inline SparseMatrix normalize_adjacency(const Graph& g, AdjacencyOptions opts = {}) {
    const std::size_t n = g.num_nodes();
    if (n == 0) throw PreconditionError("normalize_adjacency: empty graph");
    std::vector<Triplet> t;
    t.reserve(2 * g.edges.size() + n);
    std::vector<double> deg(n, 0.0);
    for (const auto& e : g.edges) {
        const double w = opts.weighted ? e.weight * opts.weight_scale : 1.0;
        if (w <= 0.0) continue;
        t.push_back({e.u, e.v, w});
        t.push_back({e.v, e.u, w});
        deg[e.u] += w;
        deg[e.v] += w;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (opts.add_self_loops || deg[i] == 0.0) {
            t.push_back({i, i, 1.0});
            deg[i] += 1.0;
        }
    }
    for (auto& e : t) e.weight /= std::sqrt(deg[e.row] * deg[e.col]);
    return SparseMatrix(n, n, std::move(t));
}

/// Row-normalized neighbor averaging without self-loops (GraphSAGE mean
/// aggregator). Isolated nodes aggregate to zero.
inline SparseMatrix mean_aggregation(const Graph& g, AdjacencyOptions opts = {}) {
    const std::size_t n = g.num_nodes();
    std::vector<Triplet> t;
    std::vector<double> deg(n, 0.0);
    for (const auto& e : g.edges) {
        const double w = opts.weighted ? e.weight * opts.weight_scale : 1.0;
        if (w <= 0.0) continue;
        t.push_back({e.u, e.v, w});
        t.push_back({e.v, e.u, w});
        deg[e.u] += w;
        deg[e.v] += w;
    }
    for (auto& e : t) e.weight /= deg[e.row];
    return SparseMatrix(n, n, std::move(t));
}

/// Component id per node (ids assigned in order of first node).
inline std::vector<std::size_t> connected_components(const Graph& g, std::size_t* count = nullptr) {
    const std::size_t n = g.num_nodes();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& e : g.edges) {
        auto a = find(e.u), b = find(e.v);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
    std::vector<std::size_t> comp(n);
    std::unordered_map<std::size_t, std::size_t> ids;
    for (std::size_t i = 0; i < n; ++i) {
        auto r = find(i);
        auto [it, _] = ids.try_emplace(r, ids.size());
        comp[i] = it->second;
    }
    if (count) *count = ids.size();
    return comp;
}

inline Tensor one_hot_labels(const Graph& g) {
    Tensor y = Tensor::zeros(g.num_nodes(), g.num_classes());
    for (std::size_t i = 0; i < g.num_nodes(); ++i)
        if (g.labels[i] != kUnlabeled) y(i, static_cast<std::size_t>(g.labels[i])) = 1.0;
    return y;
}

}  // namespace mgm
