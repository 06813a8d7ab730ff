// mgm: command-line front end for training, prediction, sweeps and fusion.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mgm/mgm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> encoder;
    std::optional<std::size_t> k;
    std::optional<double> eta;
    std::optional<double> alpha;
    std::optional<std::string> memory_mode;
    std::optional<double> mass;
    bool vanilla = false;
    bool quiet = false;

    std::string checkpoint;
    std::string pred;
    std::string gold;
    std::optional<int> stage;
    std::vector<std::string> text;
    std::vector<std::string> graph_tables;
    std::string split;
};

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        auto t = mgm::detail::trim(tok);
        if (t.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stoull(std::string(t), &used));
            if (used != t.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw mgm::ConfigError("MGM_SEED must be a comma-separated list of integers, got '" + s + "'");
        }
    }
    if (out.empty()) throw mgm::ConfigError("MGM_SEED is empty");
    return out;
}

/// file < MGM_SEED < flags
mgm::RunConfig resolve(const Flags& f, bool fusing, bool evaluating) {
    json j = json::object();
    if (!f.config.empty()) j = mgm::read_json(f.config);
    if (!j.is_object()) throw mgm::ConfigError("config must be a JSON object");
    if (const char* env = std::getenv("MGM_SEED"); env && *env) j["seeds"] = parse_seed_list(env);
    if (f.seed) j["seeds"] = std::vector<std::uint64_t>{*f.seed};
    if (f.out) j["out"] = *f.out;
    if (f.encoder) {
        if (j.value("encoder", std::string()) != *f.encoder) {
            j.erase("hidden");
            j.erase("activation");
            j.erase("hops");
        }
        j["encoder"] = *f.encoder;
    }
    if (f.k) j["k"] = *f.k;
    if (f.eta) j["eta"] = *f.eta;
    if (f.alpha) j["alpha"] = *f.alpha;
    if (f.memory_mode) j["memory_mode"] = *f.memory_mode;
    if (f.mass) j["mass"] = *f.mass;
    if (f.vanilla) j["vanilla"] = true;
    if (f.stage) j["stage"] = *f.stage;
    if (!f.text.empty()) j["text_tables"] = f.text;
    if (!f.graph_tables.empty()) j["graph_tables"] = f.graph_tables;
    if (!f.gold.empty()) j["gold"] = f.gold;
    if (!f.split.empty()) j["split"] = f.split;
    if (fusing && !j.contains("label_map")) {
        // label order from the first table that declares one
        std::vector<std::string> tables = j.value("text_tables", std::vector<std::string>{});
        for (const auto& g : j.value("graph_tables", std::vector<std::string>{})) tables.push_back(g);
        for (const auto& t : tables) {
            const json tj = mgm::read_json(t);
            if (tj.is_object() && tj.contains("metadata") && tj["metadata"].contains("labels")) {
                j["label_map"] = tj["metadata"]["labels"];
                break;
            }
        }
        if (!j.contains("label_map")) j["label_map"] = {"high", "mixed", "low"};
    }
    if (evaluating && !j.contains("label_map")) {
        // label order from the p_<name> columns of the predictions header
        std::vector<std::string> names;
        const auto rows = mgm::detail::read_lines(f.pred);
        if (!rows.empty()) {
            for (auto col : mgm::detail::split_tabs(rows.front())) {
                col = mgm::detail::trim(col);
                if (col.starts_with("p_")) names.emplace_back(col.substr(2));
            }
        }
        if (names.empty()) names = {"high", "mixed", "low"};
        j["label_map"] = names;
    }
    mgm::RunConfig c = mgm::run_config_from_json(j);
    c.validate();
    return c;
}

void echo_config(const mgm::RunConfig& c) { mgm::write_json(fs::path(c.out) / "config.json", mgm::to_json(c)); }

fs::path seed_dir(const mgm::RunConfig& c, std::uint64_t seed) {
    return fs::path(c.out) / ("seed-" + std::to_string(seed));
}

std::string metric_cells(const mgm::MetricsReport& r) {
    return mgm::cell(100.0 * r.macro_f1) + "," + mgm::cell(100.0 * r.accuracy) + "," +
           mgm::cell(100.0 * r.average_recall);
}

std::vector<std::size_t> nodes_for(const std::string& which, const mgm::RunContext& ctx) {
    const auto& g = ctx.data.graph;
    if (which == "test") return ctx.masks.test_indices();
    if (which == "eval") return ctx.eval_nodes;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < g.num_nodes(); ++i)
        if (which == "all" || g.labels[i] == mgm::kUnlabeled) out.push_back(i);
    return out;
}

// ---------------------------------------------------------------------------

int cmd_train(const mgm::RunConfig& c) {
    echo_config(c);
    std::vector<mgm::MetricsReport> runs;
    ordered_json timing = {{"runs", ordered_json::array()}};
    for (auto seed : c.seeds) {
        const mgm::RunContext ctx = mgm::make_context(c, seed, c.train_fraction);
        auto t0 = std::chrono::steady_clock::now();
        const mgm::PretrainResult pre = mgm::pretrain_run(c, ctx);
        const double pre_min = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
        mgm::TrainResult r =
            mgm::run_em(pre.model, ctx.data.graph, ctx.masks, ctx.adj, c.mgm, mgm::SeedSequence(seed), c.vanilla);
        const mgm::MgmModel model = c.vanilla ? mgm::vanilla_model(r) : r.model;
        const mgm::Prediction p = mgm::predict(model, ctx.data.graph, ctx.adj, ctx.eval_nodes);
        mgm::MetricsReport m = mgm::compute_metrics(p.labels, ctx.eval_gold, ctx.data.graph.num_classes());
        m.train_minutes = pre_min + r.em_seconds / 60.0;
        runs.push_back(m);

        const fs::path dir = seed_dir(c, seed);
        mgm::write_json(dir / "checkpoint.json", mgm::model_to_json(model));
        mgm::write_json(dir / "metrics.json", mgm::to_json(m));
        mgm::write_text(dir / "predictions.tsv", mgm::predictions_tsv(ctx.data.graph, p, ctx.masks));
        ordered_json hist = ordered_json::array();
        for (const auto& e : r.history) {
            hist.push_back({{"iteration", e.iteration}, {"elbo", e.elbo}, {"loglik", e.loglik},
                            {"kl_omega", e.kl_omega}, {"kl_z", e.kl_z}, {"kl_t", e.kl_t},
                            {"val_macro_f1", 100.0 * e.val_macro_f1}});
        }
        mgm::write_json(dir / "history.json",
                        {{"pretrain_epochs", pre.train_loss.size()}, {"best_iteration", r.best_iteration}, {"em", hist}});
        timing["runs"].push_back({{"seed", seed},
                                  {"vanilla_minutes", pre_min},
                                  {"mgm_minutes", pre_min + r.em_seconds / 60.0},
                                  {"em_ran", r.em_ran}});
        std::cout << "seed " << seed << ": macro-F1 " << 100.0 * m.macro_f1 << "  accuracy " << 100.0 * m.accuracy
                  << "  avg recall " << 100.0 * m.average_recall << '\n';
    }
    mgm::write_json(fs::path(c.out) / "aggregate.json", mgm::aggregate_json(runs));
    mgm::write_json(fs::path(c.out) / "timing.json", timing);
    const auto agg = mgm::aggregate_json(runs);
    std::cout << "macro-F1 " << agg["macro_f1"]["mean"].get<double>() << " +- "
              << agg["macro_f1"]["std"].get<double>() << " over " << runs.size() << " seed(s)\n";
    return 0;
}

int cmd_predict(const mgm::RunConfig& c, const Flags& f) {
    if (f.checkpoint.empty()) throw mgm::ConfigError("predict needs --checkpoint");
    echo_config(c);
    mgm::MgmModel model = mgm::model_from_json(mgm::read_json(f.checkpoint));
    if (f.k) model.config.k = *f.k;
    if (f.eta) model.config.eta = *f.eta;
    if (f.memory_mode) model.config.memory_mode = mgm::parse_memory_mode(*f.memory_mode);
    if (f.mass) model.config.mass = *f.mass;
    model.config.validate();
    if (f.memory_mode || f.mass) model.selected = mgm::select_memory(model);

    const auto seed = c.seeds.front();
    const mgm::RunContext ctx = mgm::make_context(c, seed, c.train_fraction);
    if (ctx.data.graph.feature_dim() != model.backbone.input_dim) {
        throw mgm::ConfigError("checkpoint expects " + std::to_string(model.backbone.input_dim) + " features, graph has " +
                               std::to_string(ctx.data.graph.feature_dim()));
    }
    const auto nodes = nodes_for(c.predict_nodes, ctx);
    const mgm::Prediction p = mgm::predict(model, ctx.data.graph, ctx.adj, nodes);
    mgm::write_text(fs::path(c.out) / "predictions.tsv", mgm::predictions_tsv(ctx.data.graph, p, ctx.masks));
    const mgm::Prediction pe = mgm::predict(model, ctx.data.graph, ctx.adj, ctx.eval_nodes);
    const auto m = mgm::compute_metrics(pe.labels, ctx.eval_gold, ctx.data.graph.num_classes());
    mgm::write_json(fs::path(c.out) / "metrics.json", mgm::to_json(m));
    std::cout << nodes.size() << " predictions; macro-F1 " << 100.0 * m.macro_f1 << " on the evaluation split\n";
    return 0;
}

int cmd_sweep(const mgm::RunConfig& c) {
    if (c.k_grid.empty() || c.eta_grid.empty()) throw mgm::ConfigError("sweep grid is empty");
    echo_config(c);
    std::vector<double> etas = c.eta_grid;
    if (std::find(etas.begin(), etas.end(), 1.0) == etas.end()) etas.push_back(1.0);
    std::ostringstream rows;
    rows << "k,eta,seed,macro_f1,accuracy,average_recall\n";
    std::map<std::pair<std::size_t, double>, std::vector<mgm::MetricsReport>> cells;
    for (auto seed : c.seeds) {
        const mgm::RunContext ctx = mgm::make_context(c, seed, c.train_fraction);
        const mgm::PretrainResult pre = mgm::pretrain_run(c, ctx);
        std::optional<mgm::MetricsReport> vanilla;
        for (auto k : c.k_grid) {
            for (double eta : etas) {
                mgm::MgmConfig mc = c.mgm;
                mc.k = k;
                mc.eta = eta;
                mgm::MetricsReport m;
                if (eta == 1.0) {
                    if (!vanilla) {
                        mgm::TrainResult r = mgm::run_em(pre.model, ctx.data.graph, ctx.masks, ctx.adj, mc,
                                                         mgm::SeedSequence(seed), true);
                        vanilla = mgm::evaluate(mgm::vanilla_model(r), ctx, 1.0);
                    }
                    m = *vanilla;
                } else {
                    mgm::TrainResult r =
                        mgm::run_em(pre.model, ctx.data.graph, ctx.masks, ctx.adj, mc, mgm::SeedSequence(seed));
                    m = mgm::evaluate(r.model, ctx);
                }
                rows << k << ',' << mgm::cell(eta) << ',' << seed << ',' << metric_cells(m) << '\n';
                cells[{k, eta}].push_back(m);
            }
        }
    }
    std::ostringstream summary;
    summary << "k,eta,runs,macro_f1_mean,macro_f1_std,accuracy_mean,accuracy_std\n";
    for (const auto& [key, runs] : cells) {
        const auto agg = mgm::aggregate_json(runs);
        summary << key.first << ',' << mgm::cell(key.second) << ',' << runs.size() << ','
                << mgm::cell(agg["macro_f1"]["mean"].get<double>()) << ','
                << mgm::cell(agg["macro_f1"]["std"].get<double>()) << ','
                << mgm::cell(agg["accuracy"]["mean"].get<double>()) << ','
                << mgm::cell(agg["accuracy"]["std"].get<double>()) << '\n';
    }
    mgm::write_text(fs::path(c.out) / "sweep.csv", rows.str());
    mgm::write_text(fs::path(c.out) / "sweep_summary.csv", summary.str());
    std::cout << "wrote " << cells.size() << " grid cells to " << (fs::path(c.out) / "sweep.csv").string() << '\n';
    return 0;
}

int cmd_label_fraction(const mgm::RunConfig& c) {
    echo_config(c);
    std::ostringstream rows;
    rows << "fraction,seed,vanilla_macro_f1,vanilla_accuracy,vanilla_average_recall,mgm_macro_f1,mgm_accuracy,"
            "mgm_average_recall\n";
    std::ostringstream summary;
    summary << "fraction,runs,vanilla_macro_f1_mean,vanilla_macro_f1_std,mgm_macro_f1_mean,mgm_macro_f1_std\n";
    for (double f : c.fractions) {
        std::vector<mgm::MetricsReport> van, mg;
        for (auto seed : c.seeds) {
            const mgm::PairedRun r = mgm::paired_run(c, seed, f);
            rows << mgm::cell(f) << ',' << seed << ',' << metric_cells(r.vanilla) << ',' << metric_cells(r.mgm) << '\n';
            van.push_back(r.vanilla);
            mg.push_back(r.mgm);
        }
        const auto a = mgm::aggregate_json(van), b = mgm::aggregate_json(mg);
        summary << mgm::cell(f) << ',' << van.size() << ',' << mgm::cell(a["macro_f1"]["mean"].get<double>()) << ','
                << mgm::cell(a["macro_f1"]["std"].get<double>()) << ','
                << mgm::cell(b["macro_f1"]["mean"].get<double>()) << ','
                << mgm::cell(b["macro_f1"]["std"].get<double>()) << '\n';
    }
    mgm::write_text(fs::path(c.out) / "label_fraction.csv", rows.str());
    mgm::write_text(fs::path(c.out) / "label_fraction_summary.csv", summary.str());
    std::cout << summary.str();
    return 0;
}

int cmd_memory_fraction(const mgm::RunConfig& c) {
    echo_config(c);
    std::ostringstream rows;
    rows << "fraction,seed,retained,macro_f1,accuracy,average_recall\n";
    std::map<double, std::vector<mgm::MetricsReport>> by_fraction;
    for (auto seed : c.seeds) {
        for (const auto& r : mgm::memory_fraction_runs(c, seed)) {
            rows << mgm::cell(r.fraction) << ',' << seed << ',' << r.retained << ',' << metric_cells(r.metrics) << '\n';
            by_fraction[r.fraction].push_back(r.metrics);
        }
    }
    std::ostringstream summary;
    summary << "fraction,runs,macro_f1_mean,macro_f1_std\n";
    for (const auto& [f, runs] : by_fraction) {
        const auto a = mgm::aggregate_json(runs);
        summary << mgm::cell(f) << ',' << runs.size() << ',' << mgm::cell(a["macro_f1"]["mean"].get<double>()) << ','
                << mgm::cell(a["macro_f1"]["std"].get<double>()) << '\n';
    }
    mgm::write_text(fs::path(c.out) / "memory_fraction.csv", rows.str());
    mgm::write_text(fs::path(c.out) / "memory_fraction_summary.csv", summary.str());
    std::cout << summary.str();
    return 0;
}

int cmd_synth(const mgm::RunConfig& c) {
    echo_config(c);
    const auto seed = c.seeds.front();
    mgm::RunConfig sc = c;
    sc.task = "synth";
    const mgm::Dataset d = mgm::load_dataset(sc, seed);
    const fs::path out(c.out);
    fs::create_directories(out);
    mgm::save_graph(d.graph, (out / "nodes.tsv").string(), (out / "edges.tsv").string(),
                    (out / "labels.tsv").string());
    std::ostringstream truth;
    for (std::size_t i = 0; i < d.graph.num_nodes(); ++i)
        truth << d.graph.node_ids[i] << '\t' << d.graph.label_names[static_cast<std::size_t>(d.truth[i])] << '\n';
    mgm::write_text(out / "truth.tsv", truth.str());
    mgm::write_json(out / "label_map.json", ordered_json(d.graph.label_names));
    std::size_t comps = 0;
    mgm::connected_components(d.graph, &comps);
    std::cout << d.graph.num_nodes() << " nodes, " << d.graph.edges.size() << " edges, " << comps << " components, "
              << d.graph.num_labeled() << " labeled\n";
    return 0;
}

int cmd_fuse(const mgm::RunConfig& c) {
    echo_config(c);
    if (c.gold.empty()) throw mgm::ConfigError("fuse needs a gold label file");
    const std::size_t nc = c.label_map.size();
    mgm::StageInputs in;
    in.num_classes = nc;
    for (const auto& p : c.text_tables) {
        in.text.push_back(mgm::load_probabilities(p, nc));
        if (in.text.back().labels.empty()) in.text.back().labels = c.label_map;
    }
    for (const auto& p : c.graph_tables) in.graph.push_back(mgm::load_probabilities(p, nc));
    in.stage3_impute = mgm::parse_impute_mode(c.impute);
    in.gold = mgm::load_gold(c.gold, c.label_map);
    in.split = c.split.empty()
                   ? mgm::stratified_id_split(in.gold, nc, c.fuse_test_ratio,
                                              mgm::SeedSequence(c.seeds.front()).seed_for("split"))
                   : mgm::load_id_split(c.split);
    const mgm::StageResult r = mgm::run_stage_pipeline(c.stage, in);
    const fs::path out(c.out);
    mgm::write_json(out / "fused.json", mgm::to_json(r.fused));
    ordered_json metrics = mgm::to_json(r.metrics);
    if (c.stage == 4) {
        ordered_json runs = ordered_json::array();
        for (const auto& m : r.runs) runs.push_back(mgm::to_json(m));
        metrics = {{"runs", runs}, {"aggregate", mgm::aggregate_json(r.runs)}};
    }
    mgm::write_json(out / "metrics.json", metrics);
    std::ostringstream prov;
    for (const auto& [id, p] : r.provenance) prov << id << '\t' << mgm::to_string(p) << '\n';
    mgm::write_text(out / "provenance.tsv", prov.str());
    std::cout << "stage " << c.stage << ": macro-F1 " << 100.0 * r.metrics.macro_f1 << "  accuracy "
              << 100.0 * r.metrics.accuracy << '\n';
    return 0;
}

int cmd_eval(const mgm::RunConfig& c, const Flags& f) {
    if (f.pred.empty() || f.gold.empty()) throw mgm::ConfigError("eval needs --pred and --gold");
    echo_config(c);
    const auto gold = mgm::load_gold(f.gold, c.label_map);
    std::vector<int> pred, truth;
    const auto lines = mgm::detail::read_lines(f.pred);
    for (std::size_t li = 0; li < lines.size(); ++li) {
        auto cols = mgm::detail::split_tabs(lines[li]);
        if (cols.size() < 3) throw mgm::IngestionError(f.pred + ": row " + std::to_string(li + 1) + " is too short");
        const std::string id(mgm::detail::trim(cols[0]));
        const std::string label(mgm::detail::trim(cols[2]));
        if (li == 0 && id == "id") continue;
        auto it = std::find(c.label_map.begin(), c.label_map.end(), label);
        if (it == c.label_map.end()) {
            throw mgm::IngestionError(f.pred + ": row " + std::to_string(li + 1) + ": unknown label '" + label + "'");
        }
        auto g = gold.find(id);
        if (g == gold.end()) continue;
        pred.push_back(static_cast<int>(it - c.label_map.begin()));
        truth.push_back(g->second);
    }
    const auto m = mgm::compute_metrics(pred, truth, c.label_map.size());
    mgm::write_json(fs::path(c.out) / "metrics.json", mgm::to_json(m));
    std::cout << pred.size() << " scored: macro-F1 " << 100.0 * m.macro_f1 << "  accuracy " << 100.0 * m.accuracy
              << "  avg recall " << 100.0 * m.average_recall << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Memory-augmented graph classification: training, prediction, sweeps and fusion"};
    app.require_subcommand(1);
    Flags f;

    auto common = [&f](CLI::App* sub) {
        sub->add_option("--config", f.config, "JSON run configuration");
        sub->add_option("--seed", f.seed, "single seed (overrides MGM_SEED and the config)");
        sub->add_option("--out", f.out, "output directory");
        sub->add_option("--encoder", f.encoder, "gcn | sgc | sage");
        sub->add_option("--k", f.k, "global similar nodes K");
        sub->add_option("--eta", f.eta, "local/global trade-off");
        sub->add_option("--alpha", f.alpha, "Dirichlet concentration");
        sub->add_option("--memory-mode", f.memory_mode, "full | sampled");
        sub->add_option("--mass", f.mass, "candidate mass threshold");
        sub->add_flag("--vanilla", f.vanilla, "backbone only (eta = 1, no EM)");
        sub->add_flag("--quiet", f.quiet, "suppress warnings");
    };

    auto* train = app.add_subcommand("train", "pre-train, run EM and report per-seed and aggregate metrics");
    auto* pred = app.add_subcommand("predict", "classify nodes with a saved checkpoint");
    auto* sweep = app.add_subcommand("sweep", "grid over K and eta");
    auto* lfrac = app.add_subcommand("label-fraction", "paired vanilla/MGM runs at reduced label fractions");
    auto* mfrac = app.add_subcommand("memory-fraction", "MGM evaluated with memories cut at several mass levels");
    auto* synth = app.add_subcommand("synth", "write a synthetic media graph");
    auto* fuse = app.add_subcommand("fuse", "text/graph probability fusion, stages 1-4");
    auto* eval = app.add_subcommand("eval", "score a predictions file against gold labels");
    for (auto* s : {train, pred, sweep, lfrac, mfrac, synth, fuse, eval}) common(s);
    pred->add_option("--checkpoint", f.checkpoint, "checkpoint.json from train")->required();
    eval->add_option("--pred", f.pred, "predictions TSV")->required();
    eval->add_option("--gold", f.gold, "gold labels TSV (id, label)")->required();
    fuse->add_option("--stage", f.stage, "1 | 2 | 3 | 4");
    fuse->add_option("--text", f.text, "text probability table (repeatable)");
    fuse->add_option("--graph-table", f.graph_tables, "graph probability table (repeatable)");
    fuse->add_option("--gold", f.gold, "gold labels TSV (id, label)");
    fuse->add_option("--split", f.split, "split TSV (id, train|test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << '\n';
        return 2;
    }

    try {
        mgm::logging::set_quiet(f.quiet);
        const mgm::RunConfig c = resolve(f, fuse->parsed(), eval->parsed());
        if (train->parsed()) return cmd_train(c);
        if (pred->parsed()) return cmd_predict(c, f);
        if (sweep->parsed()) return cmd_sweep(c);
        if (lfrac->parsed()) return cmd_label_fraction(c);
        if (mfrac->parsed()) return cmd_memory_fraction(c);
        if (synth->parsed()) return cmd_synth(c);
        if (fuse->parsed()) return cmd_fuse(c);
        if (eval->parsed()) return cmd_eval(c, f);
    } catch (const mgm::Error& e) {
        std::cerr << "error: " << e.category() << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
