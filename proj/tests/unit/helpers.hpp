#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "mgm/mgm.hpp"

namespace mgm::test {

inline std::filesystem::path temp_dir(const std::string& tag) {
    static std::mt19937_64 gen(std::random_device{}());
    auto p = std::filesystem::temp_directory_path() / ("mgm-" + tag + "-" + std::to_string(gen()));
    std::filesystem::create_directories(p);
    return p;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Two triangles plus an isolated node; nodes 0-2 class 0, 3-5 class 1.
inline Graph toy_graph() {
    Graph g;
    g.label_names = {"a", "b"};
    for (int i = 0; i < 7; ++i) g.node_ids.push_back("v" + std::to_string(i));
    g.features = Tensor::from_rows({{1, 0}, {0.9, 0.1}, {0.8, 0.3}, {0, 1}, {0.2, 0.9}, {0.1, 0.7}, {0.5, 0.5}});
    g.edges = {{0, 1, 1.0}, {1, 2, 1.0}, {0, 2, 1.0}, {3, 4, 1.0}, {4, 5, 1.0}, {3, 5, 1.0}};
    g.labels = {0, 0, 0, 1, 1, 1, kUnlabeled};
    return g;
}

inline SynthParams small_synth(std::uint64_t seed, std::size_t n = 120) {
    SynthParams p;
    p.n_nodes = n;
    p.n_components = 4;
    p.label_fraction = 0.5;
    p.seed = seed;
    return p;
}

}  // namespace mgm::test

namespace mgm::test {

/// Worst relative error between backward() and central differences for a
/// scalar function of the given leaves. Relative error uses max(|a|,|n|,1e-3)
/// as the denominator so exact zeros do not blow up the ratio.
template <typename F>
double gradcheck(F&& f, std::vector<Tensor> inputs, double h = 1e-5) {
    std::vector<Var> leaves;
    for (auto& t : inputs) leaves.push_back(Var::leaf(t, true));
    Var out = f(leaves);
    out.backward();
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor analytic = leaves[k].grad().empty() ? Tensor(inputs[k].shape(), 0.0) : leaves[k].grad();
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            auto eval = [&](double delta) {
                std::vector<Var> probe;
                for (std::size_t j = 0; j < inputs.size(); ++j) {
                    Tensor t = inputs[j];
                    if (j == k) t[i] += delta;
                    probe.push_back(Var::constant(t));
                }
                return f(probe).item();
            };
            const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        }
    }
    return worst;
}

inline Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    Tensor t(Shape{r, c});
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace mgm::test

namespace mgm::test {

/// 50-node synthetic graph with 60% labels, its splits and a briefly
/// pre-trained GCN.
struct EmFixture {
    Graph g;
    SplitMasks masks;
    std::shared_ptr<const SparseMatrix> adj;
    Backbone pretrained;
};

inline EmFixture em_fixture(std::uint64_t seed = 1) {
    SynthParams p;
    p.n_nodes = 50;
    p.n_components = 2;
    p.label_fraction = 0.6;
    p.seed = seed;
    EmFixture f;
    f.g = synth_graph(p);
    f.masks = make_splits(f.g, {}, 1.0, seed);
    f.adj = propagation_matrix(EncoderKind::gcn, f.g, {true, true, 0.01});
    PretrainOptions opts;
    opts.max_epochs = 60;
    f.pretrained = pretrain(EncoderConfig::defaults(EncoderKind::gcn), f.g, f.masks, f.adj, opts, SeedSequence(seed)).model;
    return f;
}

}  // namespace mgm::test
