#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmsarc/error.hpp"

namespace mmsarc {

/// Binary classification metrics with positive class = 1 (sarcastic).
struct MetricsReport {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0, recall = 0, f1 = 0, accuracy = 0;

    nlohmann::json to_json() const {
        return {{"tp", tp},       {"fp", fp},           {"fn", fn},
                {"tn", tn},       {"precision", precision}, {"recall", recall},
                {"f1", f1},       {"accuracy", accuracy}};
    }

    static MetricsReport from_json(const nlohmann::json& j) {
        MetricsReport r;
        r.tp = j.at("tp").get<long>();
        r.fp = j.at("fp").get<long>();
        r.fn = j.at("fn").get<long>();
        r.tn = j.at("tn").get<long>();
        r.precision = j.at("precision").get<double>();
        r.recall = j.at("recall").get<double>();
        r.f1 = j.at("f1").get<double>();
        r.accuracy = j.at("accuracy").get<double>();
        return r;
    }

    std::string to_table() const {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "metric     value\n"
                      "---------  ------\n"
                      "f1         %.4f\n"
                      "precision  %.4f\n"
                      "recall     %.4f\n"
                      "accuracy   %.4f\n"
                      "counts     tp=%ld fp=%ld fn=%ld tn=%ld",
                      f1, precision, recall, accuracy, tp, fp, fn, tn);
        return buf;
    }
};

inline MetricsReport compute_metrics(const std::vector<int>& predictions,
                                     const std::vector<int>& labels) {
    if (predictions.size() != labels.size())
        throw ContractError("compute_metrics: " + std::to_string(predictions.size()) +
                            " predictions vs " + std::to_string(labels.size()) + " labels");
    if (predictions.empty()) throw ContractError("compute_metrics: empty input");
    MetricsReport r;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], y = labels[i];
        if ((p != 0 && p != 1) || (y != 0 && y != 1))
            throw ContractError("compute_metrics: non-binary value at index " + std::to_string(i));
        if (p == 1 && y == 1) ++r.tp;
        else if (p == 1 && y == 0) ++r.fp;
        else if (p == 0 && y == 1) ++r.fn;
        else ++r.tn;
    }
    const long total = r.tp + r.fp + r.fn + r.tn;
    r.precision = (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
    r.recall = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
    r.f1 = (r.precision + r.recall) > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(total);
    return r;
}

}  // namespace mmsarc
