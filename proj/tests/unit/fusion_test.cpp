#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"

using namespace mgm;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = fs::path(MGM_FIXTURES) / "fusion";
const std::vector<std::string> kLabels{"high", "mixed", "low"};

ProbabilityTable table(std::map<std::string, std::vector<double>> rows, const std::string& src = "t") {
    ProbabilityTable t;
    t.source = src;
    t.num_classes = 3;
    for (auto& [id, p] : rows) t.set(id, p);
    return t;
}

StageInputs fixture_inputs() {
    StageInputs in;
    in.num_classes = 3;
    in.text.push_back(load_probabilities((kFixture / "text_a.json").string(), 3));
    in.text.push_back(load_probabilities((kFixture / "text_b.json").string(), 3));
    for (int s = 0; s < 3; ++s)
        in.graph.push_back(load_probabilities((kFixture / ("graph_" + std::to_string(s) + ".json")).string(), 3));
    in.gold = load_gold((kFixture / "gold.tsv").string(), kLabels);
    in.split = stratified_id_split(in.gold, 3, 85.0 / 472.0, 11);
    return in;
}

}  // namespace

TEST(ProbabilityTable, LoadFormatsAndEmptyFile) {
    auto dir = test::temp_dir("prob");
    test::write_file(dir / "empty.json", "");
    EXPECT_EQ(load_probabilities((dir / "empty.json").string(), 3).size(), 0u);
    test::write_file(dir / "flat.json", R"({"a.com": [0.2, 0.3, 0.5]})");
    auto flat = load_probabilities((dir / "flat.json").string(), 3);
    EXPECT_EQ(flat.at("a.com"), (std::vector<double>{0.2, 0.3, 0.5}));
    save_probabilities(flat, (dir / "out.json").string());
    auto back = load_probabilities((dir / "out.json").string(), 3);
    EXPECT_EQ(back.at("a.com"), flat.at("a.com"));
    auto fx = load_probabilities((kFixture / "text_a.json").string(), 3);
    EXPECT_EQ(fx.labels, kLabels);
    EXPECT_EQ(fx.source, "text-a");
    fs::remove_all(dir);
}

TEST(ProbabilityTable, Validation) {
    EXPECT_THROW(table({{"x", {0.5, 0.5}}}), IngestionError);
    EXPECT_THROW(table({{"x", {0.5, 0.6, -0.1}}}), IngestionError);
    EXPECT_THROW(table({{"x", {0.5, 0.6, 0.1}}}), IngestionError);
    EXPECT_NO_THROW(table({{"x", {0, 0, 0}}}));
    auto dir = test::temp_dir("bad");
    test::write_file(dir / "bad.json", "{not json");
    EXPECT_THROW(load_probabilities((dir / "bad.json").string(), 3), IngestionError);
    fs::remove_all(dir);
}

TEST(Impute, ZeroAndGraphModes) {
    auto text = table({{"a", {0.2, 0.3, 0.5}}});
    auto graph = table({{"a", {1, 0, 0}}, {"b", {0.1, 0.8, 0.1}}});
    std::vector<std::string> universe{"a", "b"};
    auto z = impute_missing(text, universe, ImputeMode::zero);
    EXPECT_EQ(z.table.at("b"), (std::vector<double>{0, 0, 0}));
    EXPECT_EQ(z.table.at("a"), text.at("a"));
    EXPECT_EQ(z.provenance.at("b"), Provenance::zero);
    auto g = impute_missing(text, universe, ImputeMode::graph, &graph);
    EXPECT_EQ(g.table.at("b"), graph.at("b"));
    EXPECT_EQ(g.table.at("a"), text.at("a"));
    EXPECT_EQ(g.provenance.at("a"), Provenance::text);
    EXPECT_EQ(g.provenance.at("b"), Provenance::graph);
    auto same = impute_missing(text, {"a"}, ImputeMode::zero);
    EXPECT_EQ(same.table.rows, text.rows);
    EXPECT_THROW(impute_missing(text, {"c"}, ImputeMode::graph, &graph), PipelineError);
    EXPECT_THROW(impute_missing(text, universe, ImputeMode::graph), PipelineError);
}

TEST(FuseTextGraph, ZeroWeightsUniformAndSimplex) {
    Tensor w = Tensor::zeros(6, 3);
    std::vector<double> b(3, 0.0), pt{0.7, 0.2, 0.1}, pg{0, 0, 1};
    for (double v : fuse_text_graph(pt, pg, w, b)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        Tensor wr = test::random_tensor(rng, 6, 3, -5, 5);
        std::vector<double> br{rng.normal(), rng.normal(), rng.normal()};
        auto p = fuse_text_graph(pt, pg, wr, br);
        double s = 0.0;
        for (double v : p) {
            EXPECT_GE(v, 0.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(FuseTextGraph, LargeScaleTracksSummedArgmax) {
    Tensor w = Tensor::zeros(6, 3);
    for (std::size_t i = 0; i < 3; ++i) w(i, i) = w(3 + i, i) = 50.0;
    std::vector<double> b(3, 0.0);
    Rng rng(8);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> pt(3), pg(3);
        double st = 0, sg = 0;
        for (int i = 0; i < 3; ++i) st += pt[i] = rng.uniform();
        for (int i = 0; i < 3; ++i) sg += pg[i] = rng.uniform();
        std::vector<double> sum(3);
        for (int i = 0; i < 3; ++i) {
            pt[i] /= st;
            pg[i] /= sg;
            sum[i] = pt[i] + pg[i];
        }
        EXPECT_EQ(argmax(fuse_text_graph(pt, pg, w, b)), argmax(sum));
    }
}

TEST(MetaLearner, SeparableToyFitsPerfectly) {
    Tensor x = Tensor::from_rows({{0, 0}, {0.2, 0.1}, {0.1, 0.3}, {2, 2}, {2.2, 1.9}, {1.8, 2.3}});
    std::vector<int> y{0, 0, 0, 1, 1, 1};
    auto m = MetaLearner::fit(x, y, 2);
    EXPECT_EQ(m.predict(x), y);
    EXPECT_LT(m.grad_norm, 1e-6);
}

TEST(MetaLearner, DuplicatedFeatureBarelyMovesPredictions) {
    Rng rng(12);
    const std::size_t n = 20000;
    Tensor x(Shape{n, 2}), xd(Shape{n, 3});
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(rng.index(3));
        const double a = rng.normal() + (y[i] == 1 ? 1.0 : 0.0), b = rng.normal() + (y[i] == 2 ? 1.0 : 0.0);
        x(i, 0) = xd(i, 0) = a;
        x(i, 1) = xd(i, 1) = b;
        xd(i, 2) = b;
    }
    auto p1 = MetaLearner::fit(x, y, 3).predict_proba(x);
    auto p2 = MetaLearner::fit(xd, y, 3).predict_proba(xd);
    double worst = 0.0;
    for (std::size_t i = 0; i < p1.size(); ++i) worst = std::max(worst, std::abs(p1[i] - p2[i]));
    EXPECT_LT(worst, 1e-3);
}

TEST(MetaLearner, DegenerateInputs) {
    Tensor x = Tensor::from_rows({{0}, {1}});
    EXPECT_THROW(MetaLearner::fit(x, {0, 0}, 2), FitError);
    EXPECT_THROW(MetaLearner::fit(x, {0, 1}, 3), FitError);
    EXPECT_THROW(MetaLearner::fit(x, {0}, 2), ShapeError);
}

TEST(MetaLearner, Deterministic) {
    auto in = fixture_inputs();
    auto a = run_stage_pipeline(2, in), b = run_stage_pipeline(2, in);
    EXPECT_EQ(a.metrics.macro_f1, b.metrics.macro_f1);
    EXPECT_EQ(a.fused.rows, b.fused.rows);
}

TEST(Split, StratifiedAndFileSplits) {
    auto in = fixture_inputs();
    EXPECT_EQ(in.gold.size(), 472u);
    EXPECT_NEAR(static_cast<double>(in.split.test.size()), 85.0, 1.0);
    EXPECT_EQ(in.split.train.size() + in.split.test.size(), 472u);
    auto dir = test::temp_dir("split");
    test::write_file(dir / "split.tsv", "id\tpart\na\ttrain\nb\ttest\n");
    auto s = load_id_split((dir / "split.tsv").string());
    EXPECT_EQ(s.train, (std::vector<std::string>{"a"}));
    EXPECT_EQ(s.test, (std::vector<std::string>{"b"}));
    test::write_file(dir / "split.tsv", "a\tdev\n");
    EXPECT_THROW(load_id_split((dir / "split.tsv").string()), IngestionError);
    fs::remove_all(dir);
}

TEST(Stages, GraphImputationBeatsZeroOnFixture) {
    auto in = fixture_inputs();
    auto s1 = run_stage_pipeline(1, in), s2 = run_stage_pipeline(2, in);
    EXPECT_GT(s2.metrics.macro_f1, s1.metrics.macro_f1);
    std::size_t zero = 0;
    for (const auto& [id, p] : s1.provenance) zero += p == Provenance::zero;
    EXPECT_NEAR(static_cast<double>(zero) / 472.0, 0.45, 0.01);
    EXPECT_EQ(s1.fused.size(), in.split.test.size());
}

TEST(Stages, IdenticalTextTablesMakeStageThreeMatchStageOne) {
    auto in = fixture_inputs();
    in.text[1] = in.text[0];
    in.stage3_impute = ImputeMode::zero;
    auto s1 = run_stage_pipeline(1, in), s3 = run_stage_pipeline(3, in);
    EXPECT_NEAR(s3.metrics.macro_f1, s1.metrics.macro_f1, 1e-12);
    EXPECT_NEAR(s3.metrics.accuracy, s1.metrics.accuracy, 1e-12);
}

TEST(Stages, StageFourRunsPerGroupAndMissingInputs) {
    auto in = fixture_inputs();
    auto s4 = run_stage_pipeline(4, in);
    EXPECT_EQ(s4.runs.size(), 1u);
    StageInputs bare = in;
    bare.graph.clear();
    EXPECT_THROW(run_stage_pipeline(2, bare), PipelineError);
    EXPECT_THROW(run_stage_pipeline(4, bare), PipelineError);
    bare.text.resize(1);
    EXPECT_THROW(run_stage_pipeline(3, bare), PipelineError);
    EXPECT_THROW(run_stage_pipeline(5, in), ConfigError);
}
