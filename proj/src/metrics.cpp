#include "fusmae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fusmae {

void PredictionSet::validate() const {
    if (n < 1 || K < 1) throw ConfigError("predictions: need n >= 1 and K >= 1");
    if (scores.size() != static_cast<size_t>(n) * K) throw ConfigError("predictions: score size mismatch");
    for (double s : scores)
        if (!std::isfinite(s)) throw ConfigError("predictions: non-finite score");
    if (!multilabel.empty() && multilabel.size() != static_cast<size_t>(n) * K)
        throw ConfigError("predictions: multilabel size mismatch");
    if (!single.empty()) {
        if (single.size() != static_cast<size_t>(n)) throw ConfigError("predictions: single label size mismatch");
        for (int c : single)
            if (c < 0 || c >= K) throw ConfigError("predictions: class id out of range");
    }
}

double average_precision(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw ConfigError("average_precision: scores and labels must be nonempty and equal length");
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    double positives_seen = 0.0, ap = 0.0;
    for (size_t rank = 0; rank < n; ++rank) {
        if (labels[order[rank]]) {
            positives_seen += 1.0;
            ap += positives_seen / static_cast<double>(rank + 1);
        }
    }
    if (positives_seen == 0.0) throw ConfigError("average_precision: no positive labels");
    return ap / positives_seen;
}

MapResult mean_average_precision(const PredictionSet& pred) {
    pred.validate();
    if (pred.multilabel.empty()) throw ConfigError("mean_average_precision: multilabel labels required");
    MapResult out;
    out.per_class.assign(pred.K, -1.0);
    out.defined.assign(pred.K, 0);
    double acc = 0.0;
    int counted = 0;
    for (int k = 0; k < pred.K; ++k) {
        std::vector<double> scores(pred.n);
        std::vector<std::uint8_t> labels(pred.n);
        int positives = 0;
        for (int i = 0; i < pred.n; ++i) {
            scores[i] = pred.scores[static_cast<size_t>(i) * pred.K + k];
            labels[i] = pred.multilabel[static_cast<size_t>(i) * pred.K + k];
            positives += labels[i];
        }
        if (positives == 0) {
            out.warnings.push_back("class " + std::to_string(k) + " has no positives; excluded from mAP");
            continue;
        }
        out.per_class[k] = average_precision(scores, labels);
        out.defined[k] = 1;
        acc += out.per_class[k];
        ++counted;
    }
    if (counted == 0) throw ConfigError("mean_average_precision: no class has a positive label");
    out.map = acc / counted;
    return out;
}

double topk_accuracy(const PredictionSet& pred, int k) {
    pred.validate();
    if (pred.single.empty()) throw ConfigError("topk_accuracy: single labels required");
    if (k < 1 || k > pred.K) throw ConfigError("topk_accuracy: k out of range");
    int hits = 0;
    std::vector<int> order(pred.K);
    for (int i = 0; i < pred.n; ++i) {
        const double* row = pred.scores.data() + static_cast<size_t>(i) * pred.K;
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (row[a] != row[b]) return row[a] > row[b];
            return a < b;
        });
        for (int r = 0; r < k; ++r)
            if (order[r] == pred.single[i]) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / pred.n;
}

Prf weighted_prf(const PredictionSet& pred) {
    pred.validate();
    if (pred.single.empty()) throw ConfigError("weighted_prf: single labels required");
    const int K = pred.K;
    std::vector<std::int64_t> confusion(static_cast<size_t>(K) * K, 0);  // [true][predicted]
    for (int i = 0; i < pred.n; ++i) {
        const double* row = pred.scores.data() + static_cast<size_t>(i) * pred.K;
        int arg = 0;
        for (int k = 1; k < K; ++k)
            if (row[k] > row[arg]) arg = k;  // ties keep the lowest index
        ++confusion[static_cast<size_t>(pred.single[i]) * K + arg];
    }
    Prf out;
    for (int k = 0; k < K; ++k) {
        std::int64_t tp = confusion[static_cast<size_t>(k) * K + k];
        std::int64_t support = 0, predicted = 0;
        for (int j = 0; j < K; ++j) {
            support += confusion[static_cast<size_t>(k) * K + j];
            predicted += confusion[static_cast<size_t>(j) * K + k];
        }
        if (support == 0) continue;  // weight would be zero
        const double p = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
        const double r = static_cast<double>(tp) / support;
        const double f = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
        const double weight = static_cast<double>(support) / pred.n;
        out.precision += weight * p;
        out.recall += weight * r;
        out.f1 += weight * f;
    }
    return out;
}

MetricsReport evaluate_predictions(const PredictionSet& pred) {
    pred.validate();
    MetricsReport report;
    report.n = pred.n;
    report.K = pred.K;
    if (!pred.multilabel.empty()) {
        MapResult mr = mean_average_precision(pred);
        report.map = mr.map;
        report.per_class_ap = mr.per_class;
        report.ap_defined = mr.defined;
        report.warnings.insert(report.warnings.end(), mr.warnings.begin(), mr.warnings.end());
    }
    if (!pred.single.empty()) {
        report.top1 = topk_accuracy(pred, 1);
        report.top3 = topk_accuracy(pred, std::min(3, pred.K));
        Prf prf = weighted_prf(pred);
        report.precision = prf.precision;
        report.recall = prf.recall;
        report.f1 = prf.f1;
    }
    return report;
}

namespace {
std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}
}  // namespace

std::string MetricsReport::to_kv() const {
    std::ostringstream os;
    os << "n=" << n << "\n";
    os << "K=" << K << "\n";
    if (map >= 0) {
        os << "mAP=" << fmt(map) << "\n";
        for (int k = 0; k < K; ++k)
            if (!per_class_ap.empty() && ap_defined[k]) os << "AP_class" << k << "=" << fmt(per_class_ap[k]) << "\n";
    }
    if (top1 >= 0) {
        os << "top1=" << fmt(top1) << "\n";
        os << "top3=" << fmt(top3) << "\n";
        os << "weighted_precision=" << fmt(precision) << "\n";
        os << "weighted_recall=" << fmt(recall) << "\n";
        os << "weighted_f1=" << fmt(f1) << "\n";
    }
    for (const auto& w : warnings) os << "warning=" << w << "\n";
    return os.str();
}

std::string MetricsReport::csv_header() { return "run,n,mAP,top1,top3,precision,recall,f1"; }

std::string MetricsReport::to_csv_row(const std::string& run_label) const {
    std::ostringstream os;
    os << run_label << "," << n << ",";
    os << (map >= 0 ? fmt(map) : "") << ",";
    os << (top1 >= 0 ? fmt(top1) : "") << ",";
    os << (top1 >= 0 ? fmt(top3) : "") << ",";
    os << (top1 >= 0 ? fmt(precision) : "") << ",";
    os << (top1 >= 0 ? fmt(recall) : "") << ",";
    os << (top1 >= 0 ? fmt(f1) : "");
    return os.str();
}

}  // namespace fusmae
