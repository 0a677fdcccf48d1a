#pragma once

// Density clustering of name embeddings (DBSCAN), homogeneity against class labels,
// per-cluster statistics, and a 2-D PCA projection for plotting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "namescore/corpus.hpp"
#include "namescore/util/csv.hpp"
#include "namescore/util/error.hpp"

namespace namescore::cluster {

inline constexpr int kNoise = -1;

struct EmbeddingSet {
    std::size_t dim = 0;
    std::vector<double> values;  // row-major N x dim
    std::vector<NameRecord> records;

    std::size_t size() const { return records.size(); }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }

    void validate() const {
        require(dim >= 1, "embedding set: dim must be positive");
        require(values.size() == records.size() * dim, "embedding set: row count does not match record count");
        for (double v : values)
            if (!std::isfinite(v)) throw NumericError("embedding set contains a non-finite value");
    }
};

struct ClusterAssignment {
    std::vector<int> labels;  // per row; kNoise for noise
    int n_clusters = 0;
    double eps = 0.0;
    std::size_t min_pts = 0;

    std::size_t noise_count() const {
        return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNoise));
    }
    double noise_fraction() const {
        return labels.empty() ? 0.0 : static_cast<double>(noise_count()) / static_cast<double>(labels.size());
    }
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

}  // namespace detail

/// DBSCAN under Euclidean distance. Neighborhoods include the point itself (distance <= eps).
/// Core points are expanded in row order; border points join the first cluster reaching them.
inline ClusterAssignment cluster_density(const EmbeddingSet& e, double eps, std::size_t min_pts) {
    require(e.size() > 0, "cluster_density: empty embedding set");
    require(eps > 0.0, "cluster_density: eps must be positive");
    require(min_pts >= 2, "cluster_density: min_pts must be at least 2");
    e.validate();
    const std::size_t n = e.size();
    const double eps2 = eps * eps;

    std::vector<std::vector<std::size_t>> nbrs(n);
    for (std::size_t i = 0; i < n; ++i) {
        nbrs[i].push_back(i);
        for (std::size_t j = i + 1; j < n; ++j) {
            if (detail::sq_dist(e.row(i), e.row(j)) <= eps2) {
                nbrs[i].push_back(j);
                nbrs[j].push_back(i);
            }
        }
    }
    for (auto& v : nbrs) std::sort(v.begin(), v.end());

    ClusterAssignment a;
    a.eps = eps;
    a.min_pts = min_pts;
    a.labels.assign(n, kNoise);
    std::vector<bool> visited(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        if (visited[i] || nbrs[i].size() < min_pts) continue;
        const int id = a.n_clusters++;
        std::vector<std::size_t> frontier{i};
        visited[i] = true;
        a.labels[i] = id;
        for (std::size_t head = 0; head < frontier.size(); ++head) {
            const std::size_t p = frontier[head];
            if (nbrs[p].size() < min_pts) continue;
            for (std::size_t q : nbrs[p]) {
                if (a.labels[q] == kNoise) a.labels[q] = id;
                if (!visited[q]) {
                    visited[q] = true;
                    frontier.push_back(q);
                }
            }
        }
    }
    return a;
}

// ---------------------------------------------------------------- homogeneity

struct HomogeneityReport {
    double h = 1.0;
    double H_C = 0.0;
    double H_C_given_K = 0.0;
    bool noise_excluded = true;
    std::size_t points = 0;
};

/// h = 1 - H(C|K)/H(C), natural log, 0 log 0 = 0; h = 1 when H(C) = 0.
/// Without noise exclusion, noise points form one extra cluster.
inline HomogeneityReport homogeneity(const ClusterAssignment& a, std::span<const Label> labels, bool exclude_noise = true) {
    require(a.labels.size() == labels.size(), "homogeneity: assignment and labels must align");
    std::map<int, std::map<Label, std::size_t>> joint;
    std::map<Label, std::size_t> class_counts;
    std::size_t n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (exclude_noise && a.labels[i] == kNoise) continue;
        ++joint[a.labels[i]][labels[i]];
        ++class_counts[labels[i]];
        ++n;
    }
    if (n == 0) throw PreconditionError("homogeneity: every point is noise");
    HomogeneityReport r;
    r.noise_excluded = exclude_noise;
    r.points = n;
    const double total = static_cast<double>(n);
    for (const auto& [c, cnt] : class_counts) {
        const double p = static_cast<double>(cnt) / total;
        r.H_C -= p * std::log(p);
    }
    for (const auto& [k, row] : joint) {
        std::size_t nk = 0;
        for (const auto& [c, cnt] : row) nk += cnt;
        for (const auto& [c, cnt] : row) {
            const double n_ck = static_cast<double>(cnt);
            r.H_C_given_K -= (n_ck / total) * std::log(n_ck / static_cast<double>(nk));
        }
    }
    r.h = r.H_C > 0.0 ? 1.0 - r.H_C_given_K / r.H_C : 1.0;
    return r;
}

// ---------------------------------------------------------------- per-cluster statistics

struct ClusterStats {
    int cluster = 0;
    std::size_t size = 0;
    double malicious_fraction = 0.0;
    double top_name_proportion = 0.0;
    std::string top_name;  // smallest name among the most frequent ones
};

/// One entry per cluster id in ascending order; noise excluded.
inline std::vector<ClusterStats> cluster_stats(const ClusterAssignment& a, std::span<const NameRecord> records) {
    require(a.labels.size() == records.size(), "cluster_stats: assignment and records must align");
    std::vector<ClusterStats> out(static_cast<std::size_t>(a.n_clusters));
    std::vector<std::map<std::string, std::size_t>> names(out.size());
    std::vector<std::size_t> malicious(out.size(), 0);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const int k = a.labels[i];
        if (k == kNoise) continue;
        require(k >= 0 && k < a.n_clusters, "cluster_stats: cluster id out of range");
        const auto u = static_cast<std::size_t>(k);
        ++out[u].size;
        malicious[u] += records[i].label == Label::Malicious;
        ++names[u][records[i].name];
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k].cluster = static_cast<int>(k);
        if (out[k].size == 0) continue;
        std::size_t best = 0;
        for (const auto& [name, cnt] : names[k])
            if (cnt > best) {
                best = cnt;
                out[k].top_name = name;
            }
        const double size = static_cast<double>(out[k].size);
        out[k].malicious_fraction = static_cast<double>(malicious[k]) / size;
        out[k].top_name_proportion = static_cast<double>(best) / size;
    }
    return out;
}

/// Counts of top-name proportions in `bins` equal-width bins over (0, 1]; the last bin is closed.
inline std::vector<std::size_t> proportion_histogram(std::span<const ClusterStats> stats, std::size_t bins = 10) {
    require(bins >= 1, "proportion_histogram: bins must be positive");
    std::vector<std::size_t> h(bins, 0);
    for (const auto& s : stats) {
        if (s.size == 0) continue;
        auto b = static_cast<std::size_t>(std::ceil(s.top_name_proportion * static_cast<double>(bins))) - 1;
        ++h[std::min(b, bins - 1)];
    }
    return h;
}

// ---------------------------------------------------------------- projection

/// Top-2 principal component scores, N x 2 row-major. Each column's sign is chosen so that
/// its largest-magnitude entry is positive.
inline std::vector<double> project_2d(const EmbeddingSet& e) {
    require(e.size() >= 2, "project_2d: at least two points are required");
    e.validate();
    const auto n = static_cast<Eigen::Index>(e.size());
    const auto d = static_cast<Eigen::Index>(e.dim);
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < d; ++k) x(i, k) = e.values[static_cast<std::size_t>(i * d + k)];
    x.rowwise() -= x.colwise().mean();
    if (x.squaredNorm() <= 0.0) throw NumericError("project_2d: data has zero variance");

    Eigen::MatrixXd scores(n, 2);
    if (n <= d) {
        // Gram route: eigenvectors of X X^T scaled by sqrt(eigenvalue) are the PC scores.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x * x.transpose());
        for (int c = 0; c < 2; ++c) {
            const Eigen::Index col = n - 1 - c;
            const double lambda = std::max(0.0, es.eigenvalues()(col));
            scores.col(c) = es.eigenvectors().col(col) * std::sqrt(lambda);
        }
    } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x.transpose() * x);
        for (int c = 0; c < 2; ++c) {
            const Eigen::Index col = d - 1 - c;
            if (col >= 0) scores.col(c) = x * es.eigenvectors().col(col);
            else scores.col(c).setZero();
        }
    }
    for (int c = 0; c < 2; ++c) {
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (std::abs(scores(i, c)) > best) {
                best = std::abs(scores(i, c));
                arg = i;
            }
        if (scores(arg, c) < 0) scores.col(c) *= -1.0;
    }
    std::vector<double> out(static_cast<std::size_t>(n * 2));
    for (Eigen::Index i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(2 * i)] = scores(i, 0);
        out[static_cast<std::size_t>(2 * i + 1)] = scores(i, 1);
    }
    return out;
}

// ---------------------------------------------------------------- CSV emitters

inline void write_assignments_csv(const EmbeddingSet& e, const ClusterAssignment& a, std::ostream& out) {
    out << "sha256,name,label,cluster\n";
    for (std::size_t i = 0; i < e.size(); ++i)
        out << e.records[i].sha256 << ',' << csv::quote(e.records[i].name) << ',' << label_code(e.records[i].label) << ','
            << a.labels[i] << '\n';
}

inline void write_stats_csv(std::span<const ClusterStats> stats, std::ostream& out) {
    out << "cluster,size,malicious_fraction,top_name_proportion\n";
    out.precision(17);
    for (const auto& s : stats)
        out << s.cluster << ',' << s.size << ',' << s.malicious_fraction << ',' << s.top_name_proportion << '\n';
}

inline void write_projection_csv(const EmbeddingSet& e, std::span<const double> xy, std::ostream& out) {
    require(xy.size() == 2 * e.size(), "write_projection_csv: coordinate count mismatch");
    out << "sha256,x,y,label\n";
    out.precision(17);
    for (std::size_t i = 0; i < e.size(); ++i)
        out << e.records[i].sha256 << ',' << xy[2 * i] << ',' << xy[2 * i + 1] << ',' << label_code(e.records[i].label) << '\n';
}

}  // namespace namescore::cluster
