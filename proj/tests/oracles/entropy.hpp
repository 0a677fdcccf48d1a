#pragma once

// Homogeneity from explicit contingency-table entropy sums: H(C|K) = sum_k p(k) H(C | K = k).

#include <cmath>
#include <map>
#include <span>

namespace oracle {

struct Entropies {
    double h_c = 0.0;
    double h_c_given_k = 0.0;
    double homogeneity = 1.0;
};

inline double entropy_of(const std::map<int, double>& counts) {
    double total = 0.0;
    for (const auto& [k, v] : counts) total += v;
    double h = 0.0;
    for (const auto& [k, v] : counts)
        if (v > 0) h += -(v / total) * std::log(v / total);
    return h;
}

inline Entropies homogeneity(std::span<const int> cluster, std::span<const int> cls) {
    std::map<int, std::map<int, double>> by_cluster;
    std::map<int, double> marginal;
    for (std::size_t i = 0; i < cluster.size(); ++i) {
        by_cluster[cluster[i]][cls[i]] += 1.0;
        marginal[cls[i]] += 1.0;
    }
    Entropies e;
    e.h_c = entropy_of(marginal);
    const double n = static_cast<double>(cluster.size());
    for (const auto& [k, counts] : by_cluster) {
        double nk = 0.0;
        for (const auto& [c, v] : counts) nk += v;
        e.h_c_given_k += (nk / n) * entropy_of(counts);
    }
    e.homogeneity = e.h_c > 0 ? 1.0 - e.h_c_given_k / e.h_c : 1.0;
    return e;
}

}  // namespace oracle
