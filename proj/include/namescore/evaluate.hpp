#pragma once

// Classification metrics, ROC/AUC, and the exact-name lookup baseline.

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "namescore/corpus.hpp"
#include "namescore/util/error.hpp"

namespace namescore::eval {

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

inline double f1_score(double p, double r) { return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0; }

inline double safe_div(double a, double b) { return b > 0 ? a / b : 0.0; }

struct EvalReport {
    ClassMetrics benign;
    ClassMetrics malicious;
    ClassMetrics macro_avg;
    ClassMetrics weighted_avg;
    std::array<std::array<std::size_t, 2>, 2> confusion{};  // [true][predicted], 0 benign, 1 malicious
    double threshold = 0.5;
};

namespace detail {

inline int class_index(Label l) {
    require(l != Label::Unlabeled, "evaluation requires labeled records");
    return l == Label::Malicious ? 1 : 0;
}

inline void fill_averages(std::span<ClassMetrics> per_class, ClassMetrics& macro, ClassMetrics& weighted) {
    std::size_t total = 0;
    for (const auto& c : per_class) total += c.support;
    for (const auto& c : per_class) {
        const double k = static_cast<double>(per_class.size());
        macro.precision += c.precision / k;
        macro.recall += c.recall / k;
        macro.f1 += c.f1 / k;
        const double wgt = safe_div(static_cast<double>(c.support), static_cast<double>(total));
        weighted.precision += wgt * c.precision;
        weighted.recall += wgt * c.recall;
        weighted.f1 += wgt * c.f1;
    }
    macro.support = weighted.support = total;
}

}  // namespace detail

/// Scores are P(malicious); a score >= threshold predicts malicious.
inline EvalReport classification_report(std::span<const double> scores, std::span<const Label> labels,
                                        double threshold = 0.5) {
    require(!scores.empty() && scores.size() == labels.size(), "scores and labels must be non-empty and aligned");
    EvalReport r;
    r.threshold = threshold;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const int t = detail::class_index(labels[i]);
        const int p = scores[i] >= threshold ? 1 : 0;
        ++r.confusion[t][p];
    }
    std::array<ClassMetrics, 2> cls;
    for (int c = 0; c < 2; ++c) {
        const double tp = static_cast<double>(r.confusion[c][c]);
        const double predicted = static_cast<double>(r.confusion[0][c] + r.confusion[1][c]);
        const double actual = static_cast<double>(r.confusion[c][0] + r.confusion[c][1]);
        cls[c].precision = safe_div(tp, predicted);
        cls[c].recall = safe_div(tp, actual);
        cls[c].f1 = f1_score(cls[c].precision, cls[c].recall);
        cls[c].support = r.confusion[c][0] + r.confusion[c][1];
    }
    r.benign = cls[0];
    r.malicious = cls[1];
    detail::fill_averages(cls, r.macro_avg, r.weighted_avg);
    return r;
}

inline nlohmann::ordered_json to_json(const ClassMetrics& m) {
    return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["threshold"] = r.threshold;
    j["benign"] = to_json(r.benign);
    j["malicious"] = to_json(r.malicious);
    j["macro_avg"] = to_json(r.macro_avg);
    j["weighted_avg"] = to_json(r.weighted_avg);
    j["confusion"] = {{"true_benign", {{"pred_benign", r.confusion[0][0]}, {"pred_malicious", r.confusion[0][1]}}},
                      {"true_malicious", {{"pred_benign", r.confusion[1][0]}, {"pred_malicious", r.confusion[1][1]}}}};
    return j;
}

// ---------------------------------------------------------------- ROC

struct RocPoint {
    double threshold;  // +inf for the origin
    double fpr;
    double tpr;
};

struct RocCurve {
    std::vector<RocPoint> points;  // threshold descending, (0,0) .. (1,1)
    double auc = 0.0;
};

/// Threshold sweep over distinct scores; tied scores form a single step; trapezoidal AUC.
inline RocCurve roc_auc(std::span<const double> scores, std::span<const Label> labels) {
    require(!scores.empty() && scores.size() == labels.size(), "scores and labels must be non-empty and aligned");
    std::size_t pos = 0;
    for (auto l : labels) pos += detail::class_index(l) == 1;
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw PreconditionError("roc_auc: both classes must be present");
    for (double s : scores) require(!std::isnan(s), "roc_auc: NaN score");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    double area = 0.0;  // in units of pos*neg, doubled for the trapezoid
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        std::size_t dtp = 0, dfp = 0;
        for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] == Label::Malicious ? dtp : dfp)++;
        area += static_cast<double>(dfp) * static_cast<double>(2 * tp + dtp);
        tp += dtp;
        fp += dfp;
        roc.points.push_back({s, static_cast<double>(fp) / static_cast<double>(neg),
                              static_cast<double>(tp) / static_cast<double>(pos)});
    }
    roc.auc = area / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    return roc;
}

/// CSV `threshold,fpr,tpr` with an AUC footer comment.
inline void write_roc_csv(const RocCurve& roc, std::ostream& out) {
    out << "threshold,fpr,tpr\n";
    for (const auto& p : roc.points) {
        if (std::isinf(p.threshold)) out << "inf";
        else out << std::setprecision(17) << p.threshold;
        out << ',' << std::setprecision(17) << p.fpr << ',' << p.tpr << '\n';
    }
    out << "# auc=" << std::setprecision(17) << roc.auc << '\n';
}

// ---------------------------------------------------------------- lookup baseline

enum class LookupLabel { Benign, Malicious, Unseen };

inline std::string_view to_string(LookupLabel l) {
    switch (l) {
        case LookupLabel::Benign: return "benign";
        case LookupLabel::Malicious: return "malicious";
        case LookupLabel::Unseen: return "unseen";
    }
    return "unseen";
}

struct LookupModel {
    std::unordered_map<std::string, Label> table;  // exact raw names
    std::string collision_policy = "majority label per name; exact ties resolve to malicious";
    std::size_t conflicting_names = 0;  // names seen with both labels
    std::size_t tied_names = 0;         // of those, how many were exact ties
};

inline LookupModel lookup_train(const Corpus& train) {
    std::unordered_map<std::string, std::array<std::size_t, 2>> counts;
    for (const auto& r : train.records) ++counts[r.name][detail::class_index(r.label)];
    LookupModel m;
    m.table.reserve(counts.size());
    for (const auto& [name, c] : counts) {
        if (c[0] && c[1]) ++m.conflicting_names;
        if (c[0] == c[1]) ++m.tied_names;
        m.table.emplace(name, c[1] >= c[0] ? Label::Malicious : Label::Benign);
    }
    return m;
}

inline LookupLabel lookup_predict(const LookupModel& m, const std::string& name) {
    const auto it = m.table.find(name);
    if (it == m.table.end()) return LookupLabel::Unseen;
    return it->second == Label::Malicious ? LookupLabel::Malicious : LookupLabel::Benign;
}

struct LookupReport {
    std::array<std::array<std::size_t, 3>, 2> confusion{};  // [true benign/malicious][pred benign/malicious/unseen]
    ClassMetrics benign;
    ClassMetrics malicious;
    ClassMetrics macro_avg;
    ClassMetrics weighted_avg;
};

/// Precision counts only non-Unseen predictions; recall counts every true instance.
inline LookupReport lookup_report(const LookupModel& m, const Corpus& test) {
    LookupReport r;
    for (const auto& rec : test.records) {
        const int t = detail::class_index(rec.label);
        ++r.confusion[t][static_cast<int>(lookup_predict(m, rec.name))];
    }
    std::array<ClassMetrics, 2> cls;
    for (int c = 0; c < 2; ++c) {
        const double tp = static_cast<double>(r.confusion[c][c]);
        const double predicted = static_cast<double>(r.confusion[0][c] + r.confusion[1][c]);
        const std::size_t actual = r.confusion[c][0] + r.confusion[c][1] + r.confusion[c][2];
        cls[c].precision = safe_div(tp, predicted);
        cls[c].recall = safe_div(tp, static_cast<double>(actual));
        cls[c].f1 = f1_score(cls[c].precision, cls[c].recall);
        cls[c].support = actual;
    }
    r.benign = cls[0];
    r.malicious = cls[1];
    detail::fill_averages(cls, r.macro_avg, r.weighted_avg);
    return r;
}

inline nlohmann::ordered_json to_json(const LookupReport& r) {
    nlohmann::ordered_json j;
    j["benign"] = to_json(r.benign);
    j["malicious"] = to_json(r.malicious);
    j["macro_avg"] = to_json(r.macro_avg);
    j["weighted_avg"] = to_json(r.weighted_avg);
    const char* rows[] = {"true_benign", "true_malicious"};
    for (int t = 0; t < 2; ++t)
        j["confusion"][rows[t]] = {{"pred_benign", r.confusion[t][0]},
                                   {"pred_malicious", r.confusion[t][1]},
                                   {"pred_unseen", r.confusion[t][2]}};
    return j;
}

}  // namespace namescore::eval
