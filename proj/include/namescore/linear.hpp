#pragma once

// L1/L2-regularized logistic regression over binary n-gram vectors.
//
//   f(w, b) = R(w) + C * sum_i log(1 + exp(-y_i (w.x_i + b)))
//
// with R(w) = ||w||_1 (L1) or 0.5 ||w||_2^2 (L2); the intercept b is unpenalized.
// Training is monotone FISTA with backtracking and restart; the L1/L2 proximal maps
// are applied exactly, so L1 solutions carry exact zeros.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "namescore/corpus.hpp"
#include "namescore/evaluate.hpp"
#include "namescore/features.hpp"
#include "namescore/util/encoding.hpp"
#include "namescore/util/error.hpp"
#include "namescore/util/rng.hpp"

namespace namescore::linear {

enum class Regularizer { L1, L2 };

inline std::string_view to_string(Regularizer r) { return r == Regularizer::L1 ? "l1" : "l2"; }

inline Regularizer regularizer_from_string(std::string_view s) {
    if (s == "l1") return Regularizer::L1;
    if (s == "l2") return Regularizer::L2;
    throw ParseError(0, "unknown regularizer " + std::string(s));
}

struct LinearModel {
    std::vector<double> w;
    double b = 0.0;
    Regularizer reg = Regularizer::L1;
    double C = 1.0;

    friend bool operator==(const LinearModel&, const LinearModel&) = default;
};

struct TrainConfig {
    Regularizer reg = Regularizer::L1;
    double C = 1.0;
    double tol = 1e-8;  // relative objective decrease
    std::size_t max_iter = 20000;
    std::uint64_t seed = 0;
};

struct TrainResult {
    LinearModel model;
    bool converged = false;
    std::size_t iterations = 0;
    std::vector<double> objective_history;  // objective after each iteration, non-increasing
};

/// Benign -> -1, Malicious -> +1. Unlabeled records are rejected.
inline std::vector<int> signed_labels(const Corpus& c) {
    std::vector<int> y;
    y.reserve(c.size());
    for (const auto& r : c.records) {
        require(r.label != Label::Unlabeled, "signed_labels: corpus contains unlabeled records");
        y.push_back(r.label == Label::Malicious ? 1 : -1);
    }
    return y;
}

namespace detail {

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double margin(std::span<const double> w, double b, const SparseVec& x) {
    double m = b;
    for (auto j : x.active_columns) m += w[j];
    return m;
}

inline double regularizer(Regularizer reg, std::span<const double> w) {
    double r = 0.0;
    if (reg == Regularizer::L1) {
        for (double v : w) r += std::abs(v);
    } else {
        for (double v : w) r += v * v;
        r *= 0.5;
    }
    return r;
}

inline double loss_sum(std::span<const double> w, double b, std::span<const SparseVec> X, std::span<const int> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) s += softplus(-y[i] * margin(w, b, X[i]));
    return s;
}

inline void check_rows(std::span<const SparseVec> X, std::span<const int> y, std::size_t dim) {
    require(!X.empty() && X.size() == y.size(), "rows and labels must be non-empty and of equal length");
    for (std::size_t i = 0; i < X.size(); ++i) {
        require(y[i] == 1 || y[i] == -1, "labels must be -1 or +1");
        for (auto j : X[i].active_columns) require(j < dim, "feature column out of range");
    }
}

}  // namespace detail

inline double objective(const LinearModel& m, std::span<const SparseVec> X, std::span<const int> y) {
    detail::check_rows(X, y, m.w.size());
    return detail::regularizer(m.reg, m.w) + m.C * detail::loss_sum(m.w, m.b, X, y);
}

/// P(malicious | x).
inline double predict_proba(const LinearModel& m, const SparseVec& x) {
    for (auto j : x.active_columns) require(j < m.w.size(), "feature column out of range");
    return detail::sigmoid(detail::margin(m.w, m.b, x));
}

inline TrainResult train_logreg(std::span<const SparseVec> X, std::span<const int> y, std::size_t dim,
                                const TrainConfig& cfg) {
    require(cfg.C > 0 && std::isfinite(cfg.C), "C must be positive");
    require(cfg.tol > 0, "tol must be positive");
    require(cfg.max_iter >= 1, "max_iter must be >= 1");
    detail::check_rows(X, y, dim);
    const bool has_pos = std::find(y.begin(), y.end(), 1) != y.end();
    const bool has_neg = std::find(y.begin(), y.end(), -1) != y.end();
    if (!(has_pos && has_neg)) throw PreconditionError("train_logreg: both classes are required");

    const std::size_t n = X.size();
    const std::size_t p = dim + 1;  // last coordinate is the intercept
    const double C = cfg.C;

    // smooth part and its gradient at point v (weights then bias)
    auto smooth = [&](const std::vector<double>& v) {
        const std::span<const double> w(v.data(), dim);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += detail::softplus(-y[i] * detail::margin(w, v[dim], X[i]));
        return C * s;
    };
    auto smooth_grad = [&](const std::vector<double>& v, std::vector<double>& g) {
        const std::span<const double> w(v.data(), dim);
        std::fill(g.begin(), g.end(), 0.0);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double mi = detail::margin(w, v[dim], X[i]);
            s += detail::softplus(-y[i] * mi);
            const double r = -C * y[i] * detail::sigmoid(-y[i] * mi);
            for (auto j : X[i].active_columns) g[j] += r;
            g[dim] += r;
        }
        return C * s;
    };
    auto reg_value = [&](const std::vector<double>& v) {
        return detail::regularizer(cfg.reg, std::span<const double>(v.data(), dim));
    };
    auto prox = [&](std::vector<double>& v, double step) {
        if (cfg.reg == Regularizer::L1) {
            for (std::size_t j = 0; j < dim; ++j) {
                const double a = std::abs(v[j]) - step;
                v[j] = a > 0 ? std::copysign(a, v[j]) : 0.0;
            }
        } else {
            const double shrink = 1.0 / (1.0 + step);
            for (std::size_t j = 0; j < dim; ++j) v[j] *= shrink;
        }
    };

    std::vector<double> x(p, 0.0), x_prev(p, 0.0), yk(p, 0.0), z(p), g(p), g_x(p);
    double F_x = smooth(x) + reg_value(x);
    double L = 1e-6 * C * static_cast<double>(n);
    double t = 1.0;

    // One backtracked proximal-gradient step from `from`; returns the smooth value at `out`.
    auto prox_step = [&](const std::vector<double>& from, std::vector<double>& grad, std::vector<double>& out) {
        const double f_from = smooth_grad(from, grad);
        for (;;) {
            for (std::size_t k = 0; k < p; ++k) out[k] = from[k] - grad[k] / L;
            prox(out, 1.0 / L);
            const double f_out = smooth(out);
            double lin = 0.0, sq = 0.0;
            for (std::size_t k = 0; k < p; ++k) {
                const double d = out[k] - from[k];
                lin += grad[k] * d;
                sq += d * d;
            }
            if (f_out <= f_from + lin + 0.5 * L * sq + 1e-12 * std::abs(f_from)) return f_out;
            L *= 2.0;
        }
    };

    TrainResult res;
    res.model.reg = cfg.reg;
    res.model.C = C;
    std::vector<double> probe(p);
    for (std::size_t it = 0; it < cfg.max_iter; ++it) {
        const double f_z = prox_step(yk, g, z);
        const double F_z = f_z + reg_value(z);
        const double F_old = F_x;
        x_prev = x;
        bool accepted = F_z <= F_x;
        if (accepted) {
            x = z;
            F_x = F_z;
        }
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        if (accepted) {
            for (std::size_t k = 0; k < p; ++k) yk[k] = x[k] + ((t - 1.0) / t_next) * (x[k] - x_prev[k]);
            t = t_next;
        } else {
            // restart momentum from the best point
            yk = x;
            t = 1.0;
        }
        res.objective_history.push_back(F_x);
        res.iterations = it + 1;

        const double scale = std::max(std::abs(F_x), 1.0);
        if (accepted && F_old - F_x <= cfg.tol * scale) {
            // confirm with a plain proximal-gradient step from the current iterate
            const double f_probe = prox_step(x, g_x, probe);
            const double F_probe = f_probe + reg_value(probe);
            if (F_x - F_probe <= cfg.tol * scale) {
                if (F_probe < F_x) {
                    x = probe;
                    F_x = F_probe;
                    res.objective_history.back() = F_x;
                }
                res.converged = true;
                break;
            }
        }
    }
    res.model.w.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(dim));
    res.model.b = x[dim];
    return res;
}

struct FeatureWeight {
    std::string gram;
    std::size_t column = 0;
    double weight = 0.0;
};

struct TopFeatures {
    std::vector<FeatureWeight> benign;     // most negative weights first
    std::vector<FeatureWeight> malicious;  // most positive weights first
};

inline TopFeatures top_features(const LinearModel& m, const NgramIndex& idx, std::size_t k) {
    require(k >= 1, "top_features: k must be >= 1");
    require(m.w.size() == idx.dim(), "top_features: model and index dimensions differ");
    std::vector<std::size_t> cols(m.w.size());
    std::iota(cols.begin(), cols.end(), std::size_t{0});
    const std::size_t take = std::min(k, cols.size());
    auto collect = [&](auto cmp) {
        std::vector<std::size_t> c = cols;
        std::partial_sort(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(take), c.end(), cmp);
        std::vector<FeatureWeight> out;
        for (std::size_t i = 0; i < take; ++i) out.push_back({idx.gram_utf8(c[i]), c[i], m.w[c[i]]});
        return out;
    };
    TopFeatures tf;
    tf.malicious = collect([&](std::size_t a, std::size_t b) { return m.w[a] != m.w[b] ? m.w[a] > m.w[b] : a < b; });
    tf.benign = collect([&](std::size_t a, std::size_t b) { return m.w[a] != m.w[b] ? m.w[a] < m.w[b] : a < b; });
    return tf;
}

// ---------------------------------------------------------------- cross-validation

struct CvResult {
    std::vector<double> grid;
    std::vector<std::vector<double>> fold_scores;  // per grid value, validation AUC per fold
    double best_C = 0.0;
    std::size_t best_index = 0;
};

/// Default grid: 9 points log-spaced over [1e-3, 1e3].
inline std::vector<double> default_c_grid() {
    std::vector<double> g;
    for (int k = 0; k <= 8; ++k) g.push_back(std::pow(10.0, -3.0 + 0.75 * k));
    return g;
}

/// Stratified fold assignment: each class is shuffled with `seed` and dealt round-robin.
inline std::vector<std::size_t> stratified_folds(std::span<const int> y, std::size_t k_folds, std::uint64_t seed) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < y.size(); ++i) (y[i] > 0 ? pos : neg).push_back(i);
    if (pos.size() < k_folds || neg.size() < k_folds)
        throw PreconditionError("cross_validate: each class needs at least k_folds members");
    Rng rng(seed);
    rng.shuffle(pos);
    rng.shuffle(neg);
    std::vector<std::size_t> fold(y.size());
    for (std::size_t i = 0; i < pos.size(); ++i) fold[pos[i]] = i % k_folds;
    for (std::size_t i = 0; i < neg.size(); ++i) fold[neg[i]] = i % k_folds;
    return fold;
}

/// Validation-AUC model selection over C. Ties go to the smaller C, then the earlier grid entry.
inline CvResult cross_validate(std::span<const SparseVec> X, std::span<const int> y, std::size_t dim,
                               std::span<const double> grid, std::size_t k_folds, const TrainConfig& base) {
    require(k_folds >= 2, "cross_validate: k_folds must be >= 2");
    require(!grid.empty(), "cross_validate: grid is empty");
    detail::check_rows(X, y, dim);
    const auto fold = stratified_folds(y, k_folds, base.seed);

    CvResult res;
    res.grid.assign(grid.begin(), grid.end());
    double best_mean = -1.0;
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        TrainConfig cfg = base;
        cfg.C = grid[gi];
        std::vector<double> scores;
        for (std::size_t f = 0; f < k_folds; ++f) {
            std::vector<SparseVec> Xtr, Xva;
            std::vector<int> ytr;
            std::vector<Label> yva;
            for (std::size_t i = 0; i < X.size(); ++i) {
                if (fold[i] == f) {
                    Xva.push_back(X[i]);
                    yva.push_back(y[i] > 0 ? Label::Malicious : Label::Benign);
                } else {
                    Xtr.push_back(X[i]);
                    ytr.push_back(y[i]);
                }
            }
            const auto trained = train_logreg(Xtr, ytr, dim, cfg);
            std::vector<double> p;
            p.reserve(Xva.size());
            for (const auto& x : Xva) p.push_back(predict_proba(trained.model, x));
            scores.push_back(eval::roc_auc(p, yva).auc);
        }
        const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(k_folds);
        res.fold_scores.push_back(std::move(scores));
        const bool better = mean > best_mean || (mean == best_mean && grid[gi] < res.best_C);
        if (gi == 0 || better) {
            best_mean = mean;
            res.best_C = grid[gi];
            res.best_index = gi;
        }
    }
    return res;
}

// ---------------------------------------------------------------- model files

/// {format, reg, C, bias, dim, weights: base64 float64 LE, ngram_index_ref: sha256 of the index JSON}
inline nlohmann::ordered_json model_to_json(const LinearModel& m, const NgramIndex& idx) {
    require(m.w.size() == idx.dim(), "model and index dimensions differ");
    nlohmann::ordered_json j;
    j["format"] = "namescore.linear/1";
    j["reg"] = to_string(m.reg);
    j["C"] = m.C;
    j["bias"] = m.b;
    j["dim"] = m.w.size();
    j["weights"] = encoding::base64_encode(encoding::to_le_bytes(std::span<const double>(m.w)));
    j["ngram_index_ref"] = idx.content_hash();
    return j;
}

/// Refuses an index whose content hash differs from the one recorded at training time.
inline LinearModel model_from_json(const nlohmann::json& j, const NgramIndex& idx) {
    if (j.value("format", "") != "namescore.linear/1") throw ParseError(0, "not a linear model file");
    if (j.at("ngram_index_ref").get<std::string>() != idx.content_hash())
        throw IntegrityError("n-gram index does not match the one this model was trained with");
    LinearModel m;
    m.reg = regularizer_from_string(j.at("reg").get<std::string>());
    m.C = j.at("C").get<double>();
    m.b = j.at("bias").get<double>();
    m.w = encoding::from_le_bytes<double>(encoding::base64_decode(j.at("weights").get<std::string>()));
    if (m.w.size() != j.at("dim").get<std::size_t>() || m.w.size() != idx.dim())
        throw IntegrityError("weight vector length does not match the n-gram index");
    return m;
}

}  // namespace namescore::linear
