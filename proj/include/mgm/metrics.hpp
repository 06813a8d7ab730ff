#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgm/error.hpp"

namespace mgm {

/// Classification quality summary. Rates are fractions in [0, 1]; the JSON
/// form reports them x100 as is customary for these tables.
struct MetricsReport {
    std::size_t num_classes = 0;
    double macro_f1 = 0.0;
    double accuracy = 0.0;
    double average_recall = 0.0;
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> f1;
    std::vector<std::size_t> support;
    std::vector<std::vector<std::size_t>> confusion;  // [gold][predicted]
    double train_minutes = 0.0;
};

inline MetricsReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& gold,
                                     std::size_t num_classes) {
    if (predictions.size() != gold.size()) throw PreconditionError("prediction and gold lengths differ");
    if (predictions.empty()) throw PreconditionError("cannot score an empty prediction set");
    if (num_classes == 0) throw PreconditionError("class count must be positive");
    const std::size_t c = num_classes;
    MetricsReport r;
    r.num_classes = c;
    r.confusion.assign(c, std::vector<std::size_t>(c, 0));
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] < 0 || predictions[i] < 0 || static_cast<std::size_t>(gold[i]) >= c ||
            static_cast<std::size_t>(predictions[i]) >= c) {
            throw PreconditionError("label index outside [0, " + std::to_string(c) + ")");
        }
        ++r.confusion[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(predictions[i])];
    }
    std::size_t correct = 0;
    r.precision.assign(c, 0.0);
    r.recall.assign(c, 0.0);
    r.f1.assign(c, 0.0);
    r.support.assign(c, 0);
    for (std::size_t k = 0; k < c; ++k) {
        std::size_t tp = r.confusion[k][k], row = 0, col = 0;
        for (std::size_t j = 0; j < c; ++j) {
            row += r.confusion[k][j];
            col += r.confusion[j][k];
        }
        correct += tp;
        r.support[k] = row;
        r.precision[k] = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
        r.recall[k] = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
        const double denom = r.precision[k] + r.recall[k];
        r.f1[k] = denom > 0.0 ? 2.0 * r.precision[k] * r.recall[k] / denom : 0.0;
        r.macro_f1 += r.f1[k];
        r.average_recall += r.recall[k];
    }
    r.macro_f1 /= static_cast<double>(c);
    r.average_recall /= static_cast<double>(c);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(gold.size());
    return r;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
    auto pct = [](const std::vector<double>& v) {
        std::vector<double> out;
        for (double x : v) out.push_back(100.0 * x);
        return out;
    };
    nlohmann::ordered_json j;
    j["macro_f1"] = 100.0 * r.macro_f1;
    j["accuracy"] = 100.0 * r.accuracy;
    j["average_recall"] = 100.0 * r.average_recall;
    j["precision"] = pct(r.precision);
    j["recall"] = pct(r.recall);
    j["f1"] = pct(r.f1);
    j["support"] = r.support;
    j["confusion"] = r.confusion;
    return j;
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for one value).
struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;
};

inline Aggregate aggregate(const std::vector<double>& xs) {
    Aggregate a;
    if (xs.empty()) return a;
    for (double x : xs) a.mean += x;
    a.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - a.mean) * (x - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return a;
}

inline nlohmann::ordered_json aggregate_json(const std::vector<MetricsReport>& runs) {
    std::vector<double> f1, acc, rec;
    for (const auto& r : runs) {
        f1.push_back(100.0 * r.macro_f1);
        acc.push_back(100.0 * r.accuracy);
        rec.push_back(100.0 * r.average_recall);
    }
    auto pair = [](Aggregate a) { return nlohmann::ordered_json{{"mean", a.mean}, {"std", a.stddev}}; };
    nlohmann::ordered_json j;
    j["runs"] = runs.size();
    j["macro_f1"] = pair(aggregate(f1));
    j["accuracy"] = pair(aggregate(acc));
    j["average_recall"] = pair(aggregate(rec));
    return j;
}

}  // namespace mgm
