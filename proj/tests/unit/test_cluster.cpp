#include <gtest/gtest.h>

#include <sstream>

#include "namescore/cluster.hpp"
#include "oracles/entropy.hpp"

using namespace namescore;
using namespace namescore::cluster;

namespace {

constexpr Label B = Label::Benign;
constexpr Label M = Label::Malicious;

EmbeddingSet points(const std::vector<std::vector<double>>& rows) {
    EmbeddingSet e;
    e.dim = rows.front().size();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        e.values.insert(e.values.end(), rows[i].begin(), rows[i].end());
        e.records.push_back({std::string(64, 'a'), "n" + std::to_string(i), i % 2 ? M : B});
    }
    return e;
}

std::vector<std::vector<double>> blobs(std::size_t per_blob, double sigma, double separation, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<double>> rows;
    for (int b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < per_blob; ++i)
            rows.push_back({b * separation + sigma * rng.normal(), sigma * rng.normal(), sigma * rng.normal()});
    return rows;
}

ClusterAssignment assignment(std::vector<int> labels) {
    ClusterAssignment a;
    a.labels = std::move(labels);
    for (int l : a.labels) a.n_clusters = std::max(a.n_clusters, l + 1);
    return a;
}

std::vector<int> as_int(const std::vector<Label>& l) {
    std::vector<int> out;
    for (auto x : l) out.push_back(static_cast<int>(x));
    return out;
}

}  // namespace

TEST(Dbscan, WellSeparatedBlobsGiveTwoClusters) {
    const auto rows = blobs(60, 0.05, 10.0, 1);
    const auto a = cluster_density(points(rows), 0.5, 4);
    EXPECT_EQ(a.n_clusters, 2);
    EXPECT_EQ(a.noise_count(), 0u);
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(a.labels[i], i < 60 ? 0 : 1);
}

TEST(Dbscan, TinyEpsMakesEverythingNoise) {
    const auto a = cluster_density(points(blobs(20, 1.0, 3.0, 2)), 1e-9, 2);
    EXPECT_EQ(a.n_clusters, 0);
    EXPECT_EQ(a.noise_fraction(), 1.0);
}

TEST(Dbscan, RepeatedPointFormsOneCluster) {
    const std::vector<std::vector<double>> rows(5, {1.0, 2.0});
    const auto a = cluster_density(points(rows), 0.1, 5);
    EXPECT_EQ(a.n_clusters, 1);
    EXPECT_EQ(a.noise_count(), 0u);
}

TEST(Dbscan, BorderAndNoisePoints) {
    // Chain 0..3 with spacing 1; point 4 isolated. min_pts 3 (self included): 1 and 2 are core.
    const auto a = cluster_density(points({{0}, {1}, {2}, {3}, {10}}), 1.0, 3);
    EXPECT_EQ(a.labels, (std::vector<int>{0, 0, 0, 0, kNoise}));
}

TEST(Dbscan, PreconditionsAndSizeAccounting) {
    EXPECT_THROW(cluster_density(EmbeddingSet{}, 1.0, 2), PreconditionError);
    const auto e = points(blobs(10, 0.1, 5, 3));
    EXPECT_THROW(cluster_density(e, 0.0, 2), PreconditionError);
    EXPECT_THROW(cluster_density(e, 1.0, 1), PreconditionError);
    const auto a = cluster_density(e, 0.3, 3);
    std::size_t total = a.noise_count();
    for (const auto& s : cluster_stats(a, e.records)) total += s.size;
    EXPECT_EQ(total, e.size());
}

TEST(Dbscan, AppendingFarPointsKeepsMemberships) {
    const auto rows = blobs(40, 0.2, 6.0, 4);
    const auto base = cluster_density(points(rows), 0.6, 4);
    auto extended = rows;
    for (int k = 0; k < 5; ++k) extended.push_back({1000.0 + 100 * k, -500.0, 0.0});
    const auto a = cluster_density(points(extended), 0.6, 4);
    EXPECT_EQ(std::vector<int>(a.labels.begin(), a.labels.begin() + 80), base.labels);
    for (std::size_t i = 80; i < a.labels.size(); ++i) EXPECT_EQ(a.labels[i], kNoise);
}

TEST(Homogeneity, PureAndMixedBoundaries) {
    const std::vector<Label> labels{M, M, B, B};
    EXPECT_EQ(homogeneity(assignment({0, 0, 1, 1}), labels).h, 1.0);
    EXPECT_NEAR(homogeneity(assignment({0, 1, 0, 1}), labels).h, 0.0, 1e-15);
    const std::vector<Label> one_class{M, M, M};
    EXPECT_EQ(homogeneity(assignment({0, 1, 1}), one_class).h, 1.0);
}

TEST(Homogeneity, HandValueForSmallContingencyTable) {
    // {M,M,B} and {B,B}
    const std::vector<Label> labels{M, M, B, B, B};
    const auto r = homogeneity(assignment({0, 0, 0, 1, 1}), labels);
    const double hc = -(0.4 * std::log(0.4) + 0.6 * std::log(0.6));
    const double hck = 0.6 * -((2.0 / 3) * std::log(2.0 / 3) + (1.0 / 3) * std::log(1.0 / 3));
    EXPECT_NEAR(r.H_C, hc, 1e-15);
    EXPECT_NEAR(r.H_C_given_K, hck, 1e-15);
    EXPECT_NEAR(r.h, 1 - hck / hc, 1e-15);
}

TEST(Homogeneity, MatchesEntropyOracleOnRandomTables) {
    Rng rng(8);
    for (int inst = 0; inst < 50; ++inst) {
        const std::size_t n = 5 + rng.below(200);
        const int k = 1 + static_cast<int>(rng.below(12));
        std::vector<int> cl(n);
        std::vector<Label> lab(n);
        for (std::size_t i = 0; i < n; ++i) {
            cl[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
            lab[i] = rng.bernoulli(0.3) ? M : B;
        }
        const auto want = oracle::homogeneity(cl, as_int(lab));
        const auto got = homogeneity(assignment(cl), lab);
        EXPECT_NEAR(got.H_C, want.h_c, 1e-12);
        EXPECT_NEAR(got.H_C_given_K, want.h_c_given_k, 1e-12);
        EXPECT_NEAR(got.h, want.homogeneity, 1e-12);
    }
}

TEST(Homogeneity, NoiseHandling) {
    const std::vector<Label> labels{M, M, B, B, M};
    const auto a = assignment({0, 0, 1, 1, kNoise});
    const auto excluded = homogeneity(a, labels);
    EXPECT_EQ(excluded.h, 1.0);
    EXPECT_EQ(excluded.points, 4u);
    const auto included = homogeneity(a, labels, false);
    EXPECT_EQ(included.h, 1.0);  // noise as its own single-class group
    EXPECT_EQ(included.points, 5u);
    EXPECT_THROW(homogeneity(assignment({kNoise, kNoise}), std::vector<Label>{M, B}), PreconditionError);
}

TEST(Homogeneity, InvariantToRelabeling) {
    Rng rng(12);
    std::vector<int> cl(100);
    std::vector<Label> lab(100);
    for (std::size_t i = 0; i < 100; ++i) {
        cl[i] = static_cast<int>(rng.below(6));
        lab[i] = rng.bernoulli(0.5) ? M : B;
    }
    const std::vector<int> perm{3, 5, 0, 1, 4, 2};
    std::vector<int> relabeled;
    for (int c : cl) relabeled.push_back(perm[static_cast<std::size_t>(c)]);
    EXPECT_NEAR(homogeneity(assignment(cl), lab).h, homogeneity(assignment(relabeled), lab).h, 1e-15);
}

TEST(Homogeneity, MergingPureClustersOfDifferentClassesNeverHelps) {
    Rng rng(13);
    for (int inst = 0; inst < 30; ++inst) {
        std::vector<int> cl;
        std::vector<Label> lab;
        const std::size_t na = 1 + rng.below(10), nb = 1 + rng.below(10);
        for (std::size_t i = 0; i < na; ++i) cl.push_back(0), lab.push_back(M);
        for (std::size_t i = 0; i < nb; ++i) cl.push_back(1), lab.push_back(B);
        for (std::size_t i = 0; i < 20; ++i) {
            cl.push_back(2 + static_cast<int>(rng.below(3)));
            lab.push_back(rng.bernoulli(0.5) ? M : B);
        }
        auto merged = cl;
        for (auto& c : merged)
            if (c == 1) c = 0;
        EXPECT_LE(homogeneity(assignment(merged), lab).h, homogeneity(assignment(cl), lab).h + 1e-15);
    }
}

TEST(ClusterStats, SizesFractionsAndTopNames) {
    std::vector<NameRecord> recs{{"", "a", M}, {"", "a", M}, {"", "b", M}, {"", "z", B}, {"", "y", M}, {"", "q", B}};
    const auto a = assignment({0, 0, 0, 1, 1, kNoise});
    const auto s = cluster_stats(a, recs);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].size, 3u);
    EXPECT_EQ(s[0].malicious_fraction, 1.0);
    EXPECT_DOUBLE_EQ(s[0].top_name_proportion, 2.0 / 3.0);
    EXPECT_EQ(s[0].top_name, "a");
    EXPECT_EQ(s[1].top_name, "y");  // tie resolved to the smaller name
    EXPECT_EQ(s[1].top_name_proportion, 0.5);
    EXPECT_EQ(s[1].malicious_fraction, 0.5);
}

TEST(ClusterStats, HistogramMatchesRecount) {
    Rng rng(14);
    std::vector<ClusterStats> stats;
    for (int k = 0; k < 300; ++k) {
        ClusterStats s;
        s.size = 1 + rng.below(20);
        s.top_name_proportion = static_cast<double>(1 + rng.below(s.size)) / static_cast<double>(s.size);
        stats.push_back(s);
    }
    const auto h = proportion_histogram(stats, 10);
    std::vector<std::size_t> recount(10, 0);
    for (const auto& s : stats) {
        // bin b covers (b/10, (b+1)/10]
        std::size_t b = 0;
        while (b < 9 && s.top_name_proportion * 10 > static_cast<double>(b + 1) + 1e-12) ++b;
        ++recount[b];
    }
    EXPECT_EQ(h, recount);
}

TEST(Projection, TwoDimensionalDataKeepsItsVariance) {
    Rng rng(15);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 200; ++i) {
        const double u = 3 * rng.normal(), v = 0.5 * rng.normal();
        rows.push_back({u * 0.8 - v * 0.6 + 4, u * 0.6 + v * 0.8 - 1});
    }
    const auto e = points(rows);
    const auto xy = project_2d(e);
    ASSERT_EQ(xy.size(), 400u);
    // Closed-form eigenvalues of the 2x2 scatter matrix.
    double mx = 0, my = 0;
    for (const auto& r : rows) mx += r[0], my += r[1];
    mx /= 200, my /= 200;
    double sxx = 0, syy = 0, sxy = 0;
    for (const auto& r : rows) {
        sxx += (r[0] - mx) * (r[0] - mx);
        syy += (r[1] - my) * (r[1] - my);
        sxy += (r[0] - mx) * (r[1] - my);
    }
    const double half = (sxx + syy) / 2, rad = std::sqrt((sxx - syy) * (sxx - syy) / 4 + sxy * sxy);
    double p0 = 0, p1 = 0, cross = 0;
    for (std::size_t i = 0; i < 200; ++i) {
        p0 += xy[2 * i] * xy[2 * i];
        p1 += xy[2 * i + 1] * xy[2 * i + 1];
        cross += xy[2 * i] * xy[2 * i + 1];
    }
    EXPECT_NEAR(p0, half + rad, 1e-9 * (sxx + syy));
    EXPECT_NEAR(p1, half - rad, 1e-9 * (sxx + syy));
    EXPECT_NEAR(p0 + p1, sxx + syy, 1e-9 * (sxx + syy));
    EXPECT_NEAR(cross, 0.0, 1e-9 * (sxx + syy));
}

TEST(Projection, AxisAlignedDataIsRecoveredUpToSign) {
    const std::vector<std::vector<double>> rows{{-3, 0}, {3, 0}, {0, 1}, {0, -1}, {2, 0.5}, {-2, -0.5}, {2, -0.5}, {-2, 0.5}};
    const auto xy = project_2d(points(rows));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_NEAR(std::abs(xy[2 * i]), std::abs(rows[i][0]), 1e-9);
        EXPECT_NEAR(std::abs(xy[2 * i + 1]), std::abs(rows[i][1]), 1e-9);
    }
}

TEST(Projection, HighDimensionalGramRoute) {
    Rng rng(16);
    std::vector<std::vector<double>> rows(6, std::vector<double>(40));
    for (auto& r : rows)
        for (auto& v : r) v = rng.normal();
    rows.push_back(rows[2]);
    const auto xy = project_2d(points(rows));
    ASSERT_EQ(xy.size(), 14u);
    EXPECT_NEAR(xy[4], xy[12], 1e-9);
    EXPECT_NEAR(xy[5], xy[13], 1e-9);
}

TEST(Projection, DuplicatesAndDegenerateInput) {
    const auto xy = project_2d(points({{1, 2, 3}, {4, 5, 7}, {1, 2, 3}, {0, 1, 0}}));
    EXPECT_EQ(xy[0], xy[4]);
    EXPECT_EQ(xy[1], xy[5]);
    EXPECT_THROW(project_2d(points({{1, 1}, {1, 1}, {1, 1}})), NumericError);
    EXPECT_THROW(project_2d(points({{1, 1}})), PreconditionError);
}

TEST(ClusterCsv, Formats) {
    auto e = points({{0, 0}, {0, 0.1}});
    e.records[0].name = "a,b.exe";
    const auto a = assignment({0, kNoise});
    std::ostringstream out;
    write_assignments_csv(e, a, out);
    EXPECT_EQ(out.str(), "sha256,name,label,cluster\n" + e.records[0].sha256 + ",\"a,b.exe\",0,0\n" + e.records[1].sha256 +
                             ",n1,1,-1\n");
    std::ostringstream st;
    write_stats_csv(cluster_stats(a, e.records), st);
    EXPECT_EQ(st.str(), "cluster,size,malicious_fraction,top_name_proportion\n0,1,0,1\n");
}
