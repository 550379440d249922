#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusmae/common.hpp"

namespace fusmae {

// Scores plus whichever label sets the task provides. Scores are row-major
// n x K; ties are always broken by index so every metric is deterministic.
struct PredictionSet {
    int n = 0, K = 0;
    std::vector<double> scores;
    std::vector<std::uint8_t> multilabel;  // n*K bytes, may be empty
    std::vector<int> single;               // n entries, may be empty

    void validate() const;
};

struct MetricsReport {
    int n = 0;
    int K = 0;
    // multilabel task (filled when multilabel labels are present)
    double map = -1.0;
    std::vector<double> per_class_ap;        // -1 where undefined
    std::vector<std::uint8_t> ap_defined;    // 0/1 per class
    // single-label task (filled when single labels are present)
    double top1 = -1.0, top3 = -1.0;
    double precision = -1.0, recall = -1.0, f1 = -1.0;
    std::vector<std::string> warnings;

    std::string to_kv() const;
    static std::string csv_header();
    std::string to_csv_row(const std::string& run_label) const;
};

// AP with descending-score ordering, ties by index. Requires >= 1 positive.
double average_precision(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

struct MapResult {
    double map = 0.0;
    std::vector<double> per_class;        // -1 where undefined
    std::vector<std::uint8_t> defined;
    std::vector<std::string> warnings;    // one per excluded class
};
MapResult mean_average_precision(const PredictionSet& pred);

double topk_accuracy(const PredictionSet& pred, int k);

struct Prf {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};
Prf weighted_prf(const PredictionSet& pred);

// Fills every metric the given labels support.
MetricsReport evaluate_predictions(const PredictionSet& pred);

}  // namespace fusmae
