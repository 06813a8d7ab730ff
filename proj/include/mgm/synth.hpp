#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "mgm/error.hpp"
#include "mgm/graph.hpp"
#include "mgm/rng.hpp"
#include "mgm/splits.hpp"

namespace mgm {

struct SynthParams {
    std::size_t n_nodes = 2000;
    std::size_t n_components = 8;
    std::size_t n_classes = 3;
    double homophily = 0.8;
    double label_fraction = 0.02;
    double feature_noise = 1.0;
    std::uint64_t seed = 0;
    std::size_t feature_dim = 5;
    double avg_degree = 6.0;
};

struct SynthResult {
    Graph graph;
    std::vector<int> truth;  // class of every node, labeled or not
};

/// Stochastic-block-model graph made of mutually disconnected components.
///
/// Every component holds a balanced share of every class. Within a component
/// each class group is first connected by a random tree, the groups are then
/// chained by one bridging edge each, and the remaining edges are drawn
/// same-class with probability `homophily`. Features are Gaussian around
/// class means e_c / sqrt(2) (pairwise distance 1). Edge weights mimic
/// audience-overlap percentages in [1, 100].
inline SynthResult synth_graph_with_truth(const SynthParams& p) {
    if (p.n_components < 1) throw GenerationError("n_components must be >= 1");
    if (p.n_classes < 1) throw GenerationError("n_classes must be >= 1");
    if (!(p.homophily >= 0.0 && p.homophily <= 1.0)) throw GenerationError("homophily must lie in [0, 1]");
    if (!(p.label_fraction > 0.0 && p.label_fraction <= 1.0)) {
        throw GenerationError("label_fraction must lie in (0, 1]");
    }
    if (p.feature_noise < 0.0) throw GenerationError("feature_noise must be >= 0");
    if (p.feature_dim < p.n_classes) throw GenerationError("feature_dim must be >= n_classes");
    if (p.n_nodes / p.n_components < p.n_classes) {
        throw GenerationError("component size below class count leaves classes empty");
    }

    SeedSequence seeds(p.seed);
    Rng topo = seeds.stream("topology");
    Rng feat = seeds.stream("features");
    Rng lab = seeds.stream("labels");

    const std::size_t n = p.n_nodes, c = p.n_classes;
    Graph g;
    g.node_ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) g.node_ids.push_back("n" + std::to_string(i));
    for (std::size_t k = 0; k < c; ++k) g.label_names.push_back("c" + std::to_string(k));

    std::vector<int> truth(n);
    std::vector<Edge> raw;
    std::size_t start = 0;
    for (std::size_t comp = 0; comp < p.n_components; ++comp) {
        const std::size_t size = n / p.n_components + (comp < n % p.n_components ? 1 : 0);
        std::vector<int> cls(size);
        for (std::size_t i = 0; i < size; ++i) cls[i] = static_cast<int>(i % c);
        topo.shuffle(cls.begin(), cls.end());
        std::vector<std::vector<std::size_t>> groups(c);
        for (std::size_t i = 0; i < size; ++i) {
            truth[start + i] = cls[i];
            groups[static_cast<std::size_t>(cls[i])].push_back(start + i);
        }

        std::set<std::pair<std::size_t, std::size_t>> seen;
        auto add_edge = [&](std::size_t a, std::size_t b) {
            if (a == b) return false;
            auto key = std::minmax(a, b);
            if (!seen.insert({key.first, key.second}).second) return false;
            const double w = std::round(topo.uniform(1.0, 100.0) * 100.0) / 100.0;
            raw.push_back({key.first, key.second, w});
            return true;
        };
        for (const auto& grp : groups) {
            for (std::size_t i = 1; i < grp.size(); ++i) add_edge(grp[i], grp[topo.index(i)]);
        }
        for (std::size_t k = 1; k < c; ++k) {
            add_edge(groups[k - 1][topo.index(groups[k - 1].size())], groups[k][topo.index(groups[k].size())]);
        }

        const auto target = static_cast<std::size_t>(std::llround(p.avg_degree * static_cast<double>(size) / 2.0));
        const std::size_t max_edges = size * (size - 1) / 2;
        std::size_t attempts = 0;
        while (seen.size() < std::min(target, max_edges) && attempts < 50 * target + 1000) {
            ++attempts;
            const std::size_t a = start + topo.index(size);
            const auto ca = static_cast<std::size_t>(truth[a]);
            std::size_t b;
            if (c == 1 || topo.uniform() < p.homophily) {
                b = groups[ca][topo.index(groups[ca].size())];
            } else {
                std::size_t other = topo.index(c - 1);
                if (other >= ca) ++other;
                b = groups[other][topo.index(groups[other].size())];
            }
            add_edge(a, b);
        }
        start += size;
    }
    g.edges = canonical_edges(raw);

    g.features = Tensor::zeros(n, p.feature_dim);
    const double mean = 1.0 / std::sqrt(2.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p.feature_dim; ++j) {
            const double mu = (j == static_cast<std::size_t>(truth[i])) ? mean : 0.0;
            g.features(i, j) = mu + p.feature_noise * feat.normal();
        }
    }

    // Exactly ceil(label_fraction * N) labeled nodes, stratified by class.
    const auto n_labeled = static_cast<std::size_t>(std::ceil(p.label_fraction * static_cast<double>(n) - 1e-9));
    std::vector<std::vector<std::size_t>> by_class(c);
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(truth[i])].push_back(i);
    std::vector<double> sizes;
    for (const auto& b : by_class) sizes.push_back(static_cast<double>(b.size()));
    auto quota = apportion(n_labeled, sizes);
    g.labels.assign(n, kUnlabeled);
    for (std::size_t k = 0; k < c; ++k) {
        auto nodes = by_class[k];
        lab.shuffle(nodes.begin(), nodes.end());
        for (std::size_t i = 0; i < quota[k]; ++i) g.labels[nodes[i]] = static_cast<int>(k);
    }
    g.validate();
    return {std::move(g), std::move(truth)};
}

inline Graph synth_graph(const SynthParams& p) { return synth_graph_with_truth(p).graph; }

}  // namespace mgm
