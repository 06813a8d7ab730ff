#pragma once

// Run configuration and the experiment drivers behind the command line.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgm/encoder.hpp"
#include "mgm/error.hpp"
#include "mgm/fusion.hpp"
#include "mgm/graph.hpp"
#include "mgm/memory.hpp"
#include "mgm/metrics.hpp"
#include "mgm/model.hpp"
#include "mgm/splits.hpp"
#include "mgm/synth.hpp"

namespace mgm {

/// Every knob of a run. Serialized as one flat JSON object; see README for
/// the key list.
struct RunConfig {
    std::string task = "synth";  // synth | files
    std::string nodes, edges, labels;
    std::vector<std::string> label_map{"high", "mixed", "low"};
    bool zscore = true;

    SynthParams synth;
    bool synth_seed_fixed = false;  // otherwise each run seed draws its own graph
    std::string eval_on = "test";   // test | truth (synthetic ground truth off the train/val split)

    EncoderConfig encoder = EncoderConfig::defaults(EncoderKind::gcn);
    MgmConfig mgm;
    SplitRatios ratios;
    double train_fraction = 1.0;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    double weight_scale = 0.01;
    std::size_t max_epochs = 300;
    std::size_t pretrain_patience = 10;
    bool vanilla = false;

    std::vector<std::size_t> k_grid{1, 2, 3, 4, 5, 6, 7};
    std::vector<double> eta_grid{0.6, 0.7, 0.8, 0.9, 1.0};
    std::vector<double> fractions{0.6, 0.8, 1.0};
    std::vector<double> memory_fractions{0.6, 0.8, 0.9, 1.0};
    std::string predict_nodes = "test";  // test | eval | unlabeled | all

    int stage = 1;
    std::vector<std::string> text_tables;
    std::vector<std::string> graph_tables;
    std::string gold;
    std::string split;
    std::string impute = "graph";
    double fuse_test_ratio = 85.0 / 472.0;

    std::string out = "out";

    void validate() const {
        if (task != "synth" && task != "files") throw ConfigError("task must be synth or files");
        if (task == "files") {
            for (const auto* p : {&nodes, &edges, &labels}) {
                if (p->empty()) throw ConfigError("task 'files' needs nodes, edges and labels paths");
                if (!std::filesystem::exists(*p)) throw ConfigError("path does not exist: " + *p);
            }
        }
        if (label_map.empty()) throw ConfigError("label_map is empty");
        if (eval_on != "test" && eval_on != "truth") throw ConfigError("eval_on must be test or truth");
        if (eval_on == "truth" && task != "synth") throw ConfigError("eval_on 'truth' needs the synthetic task");
        if (seeds.empty()) throw ConfigError("seed list is empty");
        if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("train_fraction must lie in (0, 1]");
        if (!(weight_scale > 0.0)) throw ConfigError("weight_scale must be > 0");
        if (predict_nodes != "test" && predict_nodes != "eval" && predict_nodes != "unlabeled" &&
            predict_nodes != "all") {
            throw ConfigError("predict_nodes must be test, eval, unlabeled or all");
        }
        for (double f : fractions)
            if (!(f > 0.0 && f <= 1.0)) throw ConfigError("label fractions must lie in (0, 1]");
        for (double f : memory_fractions)
            if (!(f > 0.0 && f <= 1.0)) throw ConfigError("memory fractions must lie in (0, 1]");
        for (auto k : k_grid)
            if (k < 1) throw ConfigError("k_grid entries must be >= 1");
        for (double e : eta_grid)
            if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("eta_grid entries must lie in [0, 1]");
        (void)parse_impute_mode(impute);
        encoder.validate();
        mgm.validate();
    }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["task"] = c.task;
    j["nodes"] = c.nodes;
    j["edges"] = c.edges;
    j["labels"] = c.labels;
    j["label_map"] = c.label_map;
    j["zscore"] = c.zscore;
    j["n_nodes"] = c.synth.n_nodes;
    j["n_components"] = c.synth.n_components;
    j["n_classes"] = c.synth.n_classes;
    j["homophily"] = c.synth.homophily;
    j["label_fraction"] = c.synth.label_fraction;
    j["feature_noise"] = c.synth.feature_noise;
    j["feature_dim"] = c.synth.feature_dim;
    j["avg_degree"] = c.synth.avg_degree;
    if (c.synth_seed_fixed) j["synth_seed"] = c.synth.seed;
    j["eval_on"] = c.eval_on;
    j["encoder"] = to_string(c.encoder.kind);
    j["hidden"] = c.encoder.hidden;
    j["hops"] = c.encoder.hops;
    j["activation"] = to_string(c.encoder.activation);
    j["dropout"] = c.encoder.dropout;
    const auto mj = to_json(c.mgm);
    for (auto& [k, v] : mj.items()) j[k] = v;
    j["train_ratio"] = c.ratios.train;
    j["val_ratio"] = c.ratios.val;
    j["test_ratio"] = c.ratios.test;
    j["train_fraction"] = c.train_fraction;
    j["seeds"] = c.seeds;
    j["weight_scale"] = c.weight_scale;
    j["max_epochs"] = c.max_epochs;
    j["pretrain_patience"] = c.pretrain_patience;
    j["vanilla"] = c.vanilla;
    j["k_grid"] = c.k_grid;
    j["eta_grid"] = c.eta_grid;
    j["fractions"] = c.fractions;
    j["memory_fractions"] = c.memory_fractions;
    j["predict_nodes"] = c.predict_nodes;
    j["stage"] = c.stage;
    j["text_tables"] = c.text_tables;
    j["graph_tables"] = c.graph_tables;
    j["gold"] = c.gold;
    j["split"] = c.split;
    j["impute"] = c.impute;
    j["fuse_test_ratio"] = c.fuse_test_ratio;
    j["out"] = c.out;
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "task", "nodes", "edges", "labels", "label_map", "zscore", "n_nodes", "n_components", "n_classes",
        "homophily", "label_fraction", "feature_noise", "feature_dim", "avg_degree", "synth_seed", "eval_on",
        "encoder", "hidden", "hops", "activation", "dropout", "k", "eta", "alpha", "alpha_per_node", "sigma1_init",
        "sigma2_init", "mc_samples", "em_iterations", "tau", "e_steps", "m_steps", "patience", "lr", "mass",
        "memory_mode", "train_ratio", "val_ratio", "test_ratio", "train_fraction", "seeds", "weight_scale",
        "max_epochs", "pretrain_patience", "vanilla", "k_grid", "eta_grid", "fractions", "memory_fractions",
        "predict_nodes", "stage", "text_tables", "graph_tables", "gold", "split", "impute", "fuse_test_ratio", "out"};
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");

    RunConfig c;
    try {
        c.task = j.value("task", c.task);
        c.nodes = j.value("nodes", c.nodes);
        c.edges = j.value("edges", c.edges);
        c.labels = j.value("labels", c.labels);
        c.label_map = j.value("label_map", c.label_map);
        c.zscore = j.value("zscore", c.zscore);
        c.synth.n_nodes = j.value("n_nodes", c.synth.n_nodes);
        c.synth.n_components = j.value("n_components", c.synth.n_components);
        c.synth.n_classes = j.value("n_classes", c.synth.n_classes);
        c.synth.homophily = j.value("homophily", c.synth.homophily);
        c.synth.label_fraction = j.value("label_fraction", c.synth.label_fraction);
        c.synth.feature_noise = j.value("feature_noise", c.synth.feature_noise);
        c.synth.feature_dim = j.value("feature_dim", c.synth.feature_dim);
        c.synth.avg_degree = j.value("avg_degree", c.synth.avg_degree);
        if (j.contains("synth_seed")) {
            c.synth.seed = j.at("synth_seed").get<std::uint64_t>();
            c.synth_seed_fixed = true;
        }
        c.eval_on = j.value("eval_on", c.eval_on);
        if (c.task == "synth" && !j.contains("label_map")) {
            c.label_map.clear();
            for (std::size_t k = 0; k < c.synth.n_classes; ++k) c.label_map.push_back("c" + std::to_string(k));
        }

        c.encoder = EncoderConfig::defaults(parse_encoder_kind(j.value("encoder", std::string("gcn"))));
        if (j.contains("hidden")) c.encoder.hidden = j.at("hidden").get<std::vector<std::size_t>>();
        if (j.contains("hops")) c.encoder.hops = j.at("hops").get<std::size_t>();
        if (j.contains("activation")) c.encoder.activation = parse_activation(j.at("activation").get<std::string>());
        if (j.contains("dropout")) c.encoder.dropout = j.at("dropout").get<double>();

        nlohmann::json mj = nlohmann::json::object();
        for (const char* k : {"k", "eta", "alpha", "alpha_per_node", "sigma1_init", "sigma2_init", "mc_samples",
                              "em_iterations", "tau", "e_steps", "m_steps", "patience", "lr", "mass", "memory_mode"})
            if (j.contains(k)) mj[k] = j.at(k);
        c.mgm = mgm_config_from_json(mj);

        c.ratios.train = j.value("train_ratio", c.ratios.train);
        c.ratios.val = j.value("val_ratio", c.ratios.val);
        c.ratios.test = j.value("test_ratio", c.ratios.test);
        c.train_fraction = j.value("train_fraction", c.train_fraction);
        c.seeds = j.value("seeds", c.seeds);
        c.weight_scale = j.value("weight_scale", c.weight_scale);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.pretrain_patience = j.value("pretrain_patience", c.pretrain_patience);
        c.vanilla = j.value("vanilla", c.vanilla);
        c.k_grid = j.value("k_grid", c.k_grid);
        c.eta_grid = j.value("eta_grid", c.eta_grid);
        c.fractions = j.value("fractions", c.fractions);
        c.memory_fractions = j.value("memory_fractions", c.memory_fractions);
        c.predict_nodes = j.value("predict_nodes", c.predict_nodes);
        c.stage = j.value("stage", c.stage);
        c.text_tables = j.value("text_tables", c.text_tables);
        c.graph_tables = j.value("graph_tables", c.graph_tables);
        c.gold = j.value("gold", c.gold);
        c.split = j.value("split", c.split);
        c.impute = j.value("impute", c.impute);
        c.fuse_test_ratio = j.value("fuse_test_ratio", c.fuse_test_ratio);
        c.out = j.value("out", c.out);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    if (c.task == "synth") c.synth.n_classes = c.label_map.size();
    return c;
}

// ---------------------------------------------------------------------------
// Single seeded run

struct Dataset {
    Graph graph;
    std::vector<int> truth;  // synthetic ground truth; empty for file data
};

inline Dataset load_dataset(const RunConfig& c, std::uint64_t seed) {
    if (c.task == "files") {
        LoadOptions lo;
        lo.zscore = c.zscore;
        return {load_graph(c.nodes, c.edges, c.labels, c.label_map, lo), {}};
    }
    SynthParams p = c.synth;
    if (!c.synth_seed_fixed) p.seed = SeedSequence(seed).seed_for("graph");
    auto r = synth_graph_with_truth(p);
    r.graph.label_names = c.label_map;
    return {std::move(r.graph), std::move(r.truth)};
}

/// Everything a seeded run shares between its vanilla and MGM arms.
struct RunContext {
    std::uint64_t seed = 0;
    Dataset data;
    SplitMasks masks;
    std::shared_ptr<const SparseMatrix> adj;
    std::vector<std::size_t> eval_nodes;
    std::vector<int> eval_gold;
};

inline RunContext make_context(const RunConfig& c, std::uint64_t seed, double train_fraction) {
    RunContext ctx;
    ctx.seed = seed;
    ctx.data = load_dataset(c, seed);
    const Graph& g = ctx.data.graph;
    ctx.masks = make_splits(g, c.ratios, train_fraction, SeedSequence(seed).seed_for("split"));
    AdjacencyOptions ao;
    ao.weight_scale = c.weight_scale;
    ctx.adj = propagation_matrix(c.encoder.kind, g, ao);
    if (c.eval_on == "truth") {
        for (std::size_t i = 0; i < g.num_nodes(); ++i) {
            if (ctx.masks.train[i] || ctx.masks.val[i]) continue;
            ctx.eval_nodes.push_back(i);
            ctx.eval_gold.push_back(ctx.data.truth[i]);
        }
    } else {
        ctx.eval_nodes = ctx.masks.test_indices();
        for (auto i : ctx.eval_nodes) ctx.eval_gold.push_back(g.labels[i]);
    }
    if (ctx.eval_nodes.empty()) throw PreconditionError("evaluation set is empty for seed " + std::to_string(seed));
    return ctx;
}

inline PretrainOptions pretrain_options(const RunConfig& c) {
    PretrainOptions p;
    p.max_epochs = c.max_epochs;
    p.patience = c.pretrain_patience;
    p.adam.lr = c.mgm.lr;
    return p;
}

inline PretrainResult pretrain_run(const RunConfig& c, const RunContext& ctx) {
    return pretrain(c.encoder, ctx.data.graph, ctx.masks, ctx.adj, pretrain_options(c), SeedSequence(ctx.seed));
}

inline MetricsReport evaluate(const MgmModel& m, const RunContext& ctx, std::optional<double> eta = {},
                              const MemoryBank* memory = nullptr) {
    const Prediction p = predict(m, ctx.data.graph, ctx.adj, ctx.eval_nodes, eta, memory);
    return compute_metrics(p.labels, ctx.eval_gold, ctx.data.graph.num_classes());
}

// ---------------------------------------------------------------------------
// Paired experiments

struct PairedRun {
    std::uint64_t seed = 0;
    MetricsReport vanilla;
    MetricsReport mgm;
    double vanilla_minutes = 0.0;
    double mgm_minutes = 0.0;
};

/// Vanilla backbone and MGM on one seed, sharing the pre-training.
inline PairedRun paired_run(const RunConfig& c, std::uint64_t seed, double train_fraction = 1.0) {
    const RunContext ctx = make_context(c, seed, train_fraction);
    auto t0 = std::chrono::steady_clock::now();
    const PretrainResult pre = pretrain_run(c, ctx);
    const double pre_min = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    TrainResult r = run_em(pre.model, ctx.data.graph, ctx.masks, ctx.adj, c.mgm, SeedSequence(seed));
    PairedRun out;
    out.seed = seed;
    out.vanilla = evaluate(vanilla_model(r), ctx, 1.0);
    out.mgm = evaluate(r.model, ctx);
    out.vanilla_minutes = pre_min;
    out.mgm_minutes = pre_min + r.em_seconds / 60.0;
    out.vanilla.train_minutes = out.vanilla_minutes;
    out.mgm.train_minutes = out.mgm_minutes;
    return out;
}

struct MemoryFractionRow {
    std::uint64_t seed = 0;
    double fraction = 1.0;
    std::size_t retained = 0;
    MetricsReport metrics;
};

/// One MGM fit per seed, evaluated with memories cut at each mass fraction.
inline std::vector<MemoryFractionRow> memory_fraction_runs(const RunConfig& c, std::uint64_t seed) {
    const RunContext ctx = make_context(c, seed, c.train_fraction);
    const PretrainResult pre = pretrain_run(c, ctx);
    TrainResult r = run_em(pre.model, ctx.data.graph, ctx.masks, ctx.adj, c.mgm, SeedSequence(seed));
    const auto w = r.model.expected_omega();
    std::vector<MemoryFractionRow> rows;
    for (double f : c.memory_fractions) {
        const MemoryBank mem = select_fraction(r.model.memory, w, f);
        rows.push_back({seed, f, mem.size(), evaluate(r.model, ctx, {}, &mem)});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Output helpers

inline void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
}

inline nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

/// Fixed-precision number for CSV/TSV cells (shortest round-trip form).
inline std::string cell(double v) { return detail::format_double(v); }

inline std::string predictions_tsv(const Graph& g, const Prediction& p, const SplitMasks& masks) {
    std::ostringstream os;
    os << "id\tsplit\tlabel";
    for (const auto& name : g.label_names) os << "\tp_" << name;
    os << '\n';
    for (std::size_t i = 0; i < p.nodes.size(); ++i) {
        const std::size_t n = p.nodes[i];
        const char* part = masks.train[n] ? "train" : masks.val[n] ? "val" : masks.test[n] ? "test" : "unlabeled";
        os << g.node_ids[n] << '\t' << part << '\t' << g.label_names[static_cast<std::size_t>(p.labels[i])];
        for (double v : p.fused.row(i)) os << '\t' << cell(v);
        os << '\n';
    }
    return os.str();
}

}  // namespace mgm
