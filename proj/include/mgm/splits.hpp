#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "mgm/error.hpp"
#include "mgm/graph.hpp"
#include "mgm/log.hpp"
#include "mgm/rng.hpp"

namespace mgm {

/// Train / validation / test masks over the labeled nodes of a graph.
struct SplitMasks {
    std::vector<bool> train;
    std::vector<bool> val;
    std::vector<bool> test;

    static std::vector<std::size_t> indices(const std::vector<bool>& mask) {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) out.push_back(i);
        return out;
    }

    std::vector<std::size_t> train_indices() const { return indices(train); }
    std::vector<std::size_t> val_indices() const { return indices(val); }
    std::vector<std::size_t> test_indices() const { return indices(test); }

    friend bool operator==(const SplitMasks&, const SplitMasks&) = default;
};

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

/// Splits `total` into integer parts proportional to `weights` (largest
/// remainder; ties to the lower index).
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    std::vector<std::size_t> out(weights.size(), 0);
    if (wsum <= 0.0 || total == 0) return out;
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t used = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = static_cast<double>(total) * weights[i] / wsum;
        out[i] = static_cast<std::size_t>(std::floor(exact));
        used += out[i];
        rem.push_back({exact - std::floor(exact), i});
    }
    std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; used < total; ++k, ++used) ++out[rem[k % rem.size()].second];
    return out;
}

/// Class-stratified random split of the labeled nodes. The training part is
/// then subsampled (again stratified) to round(label_fraction * |train|).
inline SplitMasks make_splits(const Graph& g, SplitRatios ratios, double label_fraction, std::uint64_t seed) {
    if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9 || ratios.train < 0 || ratios.val < 0 ||
        ratios.test < 0) {
        throw ConfigError("split ratios must be non-negative and sum to 1");
    }
    if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("label_fraction must lie in (0, 1]");

    Rng rng(seed);
    const std::size_t n = g.num_nodes(), c = g.num_classes();
    SplitMasks m{std::vector<bool>(n, false), std::vector<bool>(n, false), std::vector<bool>(n, false)};

    std::vector<std::vector<std::size_t>> by_class(c);
    for (std::size_t i = 0; i < n; ++i)
        if (g.labels[i] != kUnlabeled) by_class[static_cast<std::size_t>(g.labels[i])].push_back(i);

    std::vector<std::vector<std::size_t>> train_by_class(c);
    for (std::size_t k = 0; k < c; ++k) {
        auto& nodes = by_class[k];
        rng.shuffle(nodes.begin(), nodes.end());
        const std::size_t nk = nodes.size();
        if (nk == 0) continue;
        if (nk < 3) {
            logging::warn("class '" + g.label_names[k] + "' has " + std::to_string(nk) +
                      " labeled nodes; keeping all of them in training");
            train_by_class[k] = nodes;
            continue;
        }
        std::size_t ntr = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(nk)));
        std::size_t nva = static_cast<std::size_t>(std::llround(ratios.val * static_cast<double>(nk)));
        ntr = std::min(ntr, nk);
        nva = std::min(nva, nk - ntr);
        for (std::size_t i = 0; i < nk; ++i) {
            if (i < ntr) {
                train_by_class[k].push_back(nodes[i]);
            } else if (i < ntr + nva) {
                m.val[nodes[i]] = true;
            } else {
                m.test[nodes[i]] = true;
            }
        }
    }

    std::size_t full_train = 0;
    std::vector<double> sizes(c);
    for (std::size_t k = 0; k < c; ++k) {
        full_train += train_by_class[k].size();
        sizes[k] = static_cast<double>(train_by_class[k].size());
    }
    const auto target = static_cast<std::size_t>(std::llround(label_fraction * static_cast<double>(full_train)));
    auto keep = apportion(target, sizes);
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t i = 0; i < keep[k] && i < train_by_class[k].size(); ++i) m.train[train_by_class[k][i]] = true;
    }
    return m;
}

}  // namespace mgm
