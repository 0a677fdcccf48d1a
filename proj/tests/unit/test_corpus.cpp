#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cctype>
#include <sstream>

#include "namescore/corpus.hpp"

using namespace namescore;

namespace {

const std::string kSha(64, 'a');

std::string sha_n(int i) {
    std::string s = std::to_string(i);
    return std::string(64 - s.size(), '0') + s;
}

Corpus make(std::initializer_list<std::pair<std::string, Label>> items) {
    Corpus c;
    int i = 0;
    for (const auto& [name, label] : items) c.records.push_back({sha_n(i++), name, label});
    return c;
}

}  // namespace

TEST(Ingest, NamesListSelectsFirst) {
    std::istringstream in("{\"sha256\":\"" + kSha + "\",\"names\":[\"d3d9.dll\",\"other.dll\"],\"label\":0}\n");
    const auto r = ingest_jsonl(in);
    ASSERT_EQ(r.corpus.size(), 1u);
    EXPECT_EQ(r.corpus.records[0].name, "d3d9.dll");
    EXPECT_EQ(r.corpus.records[0].label, Label::Benign);
}

TEST(Ingest, UnlabeledMapping) {
    std::istringstream in("{\"sha256\":\"" + kSha + "\",\"name\":\"x\",\"label\":-1}\n");
    EXPECT_EQ(ingest_jsonl(in).corpus.records.at(0).label, Label::Unlabeled);
}

TEST(Ingest, NamesWinsOverName) {
    std::istringstream in("{\"sha256\":\"" + kSha + "\",\"name\":\"b\",\"names\":[\"a\"],\"label\":1}\n");
    const auto r = ingest_jsonl(in);
    EXPECT_EQ(r.corpus.records.at(0).name, "a");
    EXPECT_EQ(r.corpus.records.at(0).label, Label::Malicious);
}

TEST(Ingest, MalformedLineReportsLineNumber) {
    std::istringstream in("{\"sha256\":\"" + kSha + "\",\"name\":\"x\",\"label\":0}\nnot json\n");
    try {
        ingest_jsonl(in);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(Ingest, EmptyNameIsRejectedAndCounted) {
    std::istringstream in("{\"sha256\":\"" + kSha + "\",\"name\":\"\",\"label\":0}\n"
                          "{\"sha256\":\"" + kSha + "\",\"names\":[],\"label\":0}\n"
                          "{\"sha256\":\"" + kSha + "\",\"name\":\"ok.exe\",\"label\":1}\n");
    const auto r = ingest_jsonl(in);
    EXPECT_EQ(r.corpus.size(), 1u);
    EXPECT_EQ(r.rejected_empty_name, 2u);
}

TEST(Ingest, BadShaAndLabelAreParseErrors) {
    std::istringstream bad_sha("{\"sha256\":\"xyz\",\"name\":\"a\",\"label\":0}\n");
    EXPECT_THROW(ingest_jsonl(bad_sha), ParseError);
    std::istringstream bad_label("{\"sha256\":\"" + kSha + "\",\"name\":\"a\",\"label\":7}\n");
    EXPECT_THROW(ingest_jsonl(bad_label), ParseError);
}

TEST(Ingest, UppercaseShaIsNormalized) {
    std::string upper = kSha;
    std::transform(upper.begin(), upper.end(), upper.begin(), [](char c) { return static_cast<char>(std::toupper(c)); });
    std::istringstream in("{\"sha256\":\"" + upper + "\",\"name\":\"a\",\"label\":0}\n");
    EXPECT_EQ(ingest_jsonl(in).corpus.records.at(0).sha256, kSha);
}

TEST(Ingest, CsvWithHeaderAndQuotes) {
    std::istringstream in("sha256,name,label\n" + kSha + ",\"a,b.exe\",1\n" + kSha + ",c.dll,-1\n");
    const auto r = ingest_csv(in);
    ASSERT_EQ(r.corpus.size(), 2u);
    EXPECT_EQ(r.corpus.records[0].name, "a,b.exe");
    EXPECT_EQ(r.corpus.records[1].label, Label::Unlabeled);
    std::istringstream no_header(kSha + ",a,1\n");
    EXPECT_THROW(ingest_csv(no_header), ParseError);
}

TEST(Ingest, JsonlRoundTrip) {
    const auto c = make({{"β.dll", Label::Benign}, {"x \"q\".exe", Label::Malicious}, {"u", Label::Unlabeled}});
    std::stringstream ss;
    write_jsonl(c, ss);
    EXPECT_EQ(ingest_jsonl(ss).corpus.records, c.records);
}

TEST(SelectPrimaryName, Examples) {
    EXPECT_EQ(select_primary_name({"a.exe", "b.exe"}), "a.exe");
    EXPECT_EQ(select_primary_name({"only"}), "only");
    EXPECT_EQ(select_primary_name({"β.dll", "x"}), "β.dll");
    EXPECT_THROW(select_primary_name({}), PreconditionError);
}

TEST(FilterPolicy, Examples) {
    const FilterPolicy p;
    EXPECT_TRUE(contains_banned("virus_sample.exe", p));
    EXPECT_FALSE(contains_banned("settings.dll", p));
    EXPECT_TRUE(contains_banned("MALdoc.bin", p));
    FilterPolicy sensitive;
    sensitive.case_insensitive = false;
    EXPECT_FALSE(contains_banned("MALdoc.bin", sensitive));
}

TEST(FilterPolicy, MatchesCaseFoldOracle) {
    // ASCII lowercase-then-find oracle on ASCII names.
    const FilterPolicy p;
    const std::vector<std::string> names{"HackTool.exe", "normal.dll", "ViRtual.sys", "shacked", "MaLware", "xyz"};
    for (const auto& n : names) {
        std::string low = n;
        std::transform(low.begin(), low.end(), low.begin(), [](char c) { return static_cast<char>(std::tolower(c)); });
        const bool oracle = low.find("vir") != std::string::npos || low.find("mal") != std::string::npos ||
                            low.find("hack") != std::string::npos;
        EXPECT_EQ(contains_banned(n, p), oracle) << n;
    }
}

TEST(FilterPolicy, CountsIdempotentAndFieldPreserving) {
    const auto c = make({{"virus.exe", Label::Malicious},
                         {"ok.dll", Label::Benign},
                         {"MalHack.exe", Label::Malicious},
                         {"fine.sys", Label::Unlabeled}});
    const auto once = apply_filter_policy(c, FilterPolicy{});
    EXPECT_EQ(once.removed, 2u);
    EXPECT_EQ(once.hits.at("vir"), 1u);
    EXPECT_EQ(once.hits.at("mal"), 1u);
    EXPECT_EQ(once.hits.at("hack"), 1u);
    ASSERT_EQ(once.corpus.size(), 2u);
    EXPECT_EQ(once.corpus.records[0], c.records[1]);
    EXPECT_EQ(once.corpus.records[1], c.records[3]);
    const auto twice = apply_filter_policy(once.corpus, FilterPolicy{});
    EXPECT_EQ(twice.corpus, once.corpus);
    EXPECT_EQ(twice.removed, 0u);
}

TEST(FilterPolicy, EmptyListKeepsEverythingAndEmptyEntryIsRejected) {
    const auto c = make({{"virus.exe", Label::Malicious}});
    FilterPolicy none;
    none.banned_substrings.clear();
    EXPECT_EQ(apply_filter_policy(c, none).corpus, c);
    FilterPolicy bad;
    bad.banned_substrings = {""};
    EXPECT_THROW(apply_filter_policy(c, bad), PreconditionError);
}

TEST(DropUnlabeled, Examples) {
    const auto c = make({{"a", Label::Benign}, {"b", Label::Unlabeled}, {"c", Label::Malicious}});
    const auto r = drop_unlabeled(c);
    EXPECT_EQ(r.corpus.size(), 2u);
    EXPECT_EQ(r.removed, 1u);
    const auto clean = make({{"a", Label::Benign}});
    EXPECT_EQ(drop_unlabeled(clean).corpus, clean);
    EXPECT_TRUE(drop_unlabeled(make({{"a", Label::Unlabeled}})).corpus.empty());
}

TEST(Stats, HandCounts) {
    const auto s = compute_stats(make({{"ab", Label::Benign}, {"abc", Label::Malicious}}));
    EXPECT_EQ(s.length_histogram.at(Label::Benign), (std::map<std::size_t, std::size_t>{{2, 1}}));
    EXPECT_EQ(s.length_histogram.at(Label::Malicious), (std::map<std::size_t, std::size_t>{{3, 1}}));
    EXPECT_EQ(s.char_frequency.at(Label::Benign), (std::map<char32_t, std::size_t>{{U'a', 1}, {U'b', 1}}));
    EXPECT_EQ(s.class_counts.at(Label::Benign), 1u);
    EXPECT_THROW(compute_stats(Corpus{}), PreconditionError);
}

TEST(Stats, CodePointLengthsAndInvariants) {
    auto c = make({{"été.dll", Label::Benign}, {"ab", Label::Benign}, {"zz", Label::Malicious}});
    const auto s = compute_stats(c);
    EXPECT_EQ(s.length_histogram.at(Label::Benign).at(7), 1u);
    for (const auto& [label, hist] : s.length_histogram) {
        std::size_t total = 0;
        for (const auto& [len, n] : hist) total += n;
        EXPECT_EQ(total, s.class_counts.at(label));
    }
    std::reverse(c.records.begin(), c.records.end());
    EXPECT_EQ(compute_stats(c), s);
    const auto j = stats_to_json(s);
    EXPECT_EQ(j["class_counts"]["benign"], 2);
    EXPECT_EQ(j["char_frequency"]["benign"]["é"], 2);
}

TEST(Split, SeededAndTagged) {
    SynthConfig cfg;
    cfg.n_benign = 200;
    cfg.n_malicious = 200;
    const auto c = generate_synthetic(cfg);
    const auto [tr, te] = split_train_test(c, 0.25, 9);
    const auto [tr2, te2] = split_train_test(c, 0.25, 9);
    EXPECT_EQ(tr, tr2);
    EXPECT_EQ(tr.split_tag, Split::Train);
    EXPECT_EQ(te.split_tag, Split::Test);
    EXPECT_EQ(tr.size() + te.size(), c.size());
    EXPECT_GT(te.size(), 50u);
    EXPECT_LT(te.size(), 150u);
}

TEST(Synthetic, DeterministicAndBoundaries) {
    SynthConfig cfg;
    cfg.n_benign = 300;
    cfg.n_malicious = 300;
    const auto a = generate_synthetic(cfg);
    const auto b = generate_synthetic(cfg);
    std::stringstream sa, sb;
    write_jsonl(a, sa);
    write_jsonl(b, sb);
    EXPECT_EQ(sa.str(), sb.str());

    cfg.n_benign = 0;
    for (const auto& r : generate_synthetic(cfg).records) EXPECT_EQ(r.label, Label::Malicious);
    for (const auto& r : a.records) {
        EXPECT_TRUE(is_sha256_hex(r.sha256));
        EXPECT_FALSE(r.name.empty());
    }
    EXPECT_THROW(generate_synthetic(SynthConfig{1, 1, {"nope"}, 1}), PreconditionError);
}

TEST(Synthetic, ClassConditionalCharFrequenciesDiffer) {
    const auto s = compute_stats(generate_synthetic(SynthConfig{}));
    const auto& fb = s.char_frequency.at(Label::Benign);
    const auto& fm = s.char_frequency.at(Label::Malicious);
    std::map<char32_t, std::array<double, 2>> table;
    for (const auto& [c, n] : fb) table[c][0] += static_cast<double>(n);
    for (const auto& [c, n] : fm) table[c][1] += static_cast<double>(n);
    double tot[2] = {0, 0};
    for (const auto& [c, v] : table) {
        tot[0] += v[0];
        tot[1] += v[1];
    }
    const double grand = tot[0] + tot[1];
    double stat = 0.0;
    for (const auto& [c, v] : table) {
        const double row = v[0] + v[1];
        for (int k = 0; k < 2; ++k) {
            const double expected = row * tot[k] / grand;
            stat += (v[k] - expected) * (v[k] - expected) / expected;
        }
    }
    const boost::math::chi_squared dist(static_cast<double>(table.size() - 1));
    const double p = boost::math::cdf(boost::math::complement(dist, stat));
    EXPECT_LT(p, 0.01);
}

TEST(Synthetic, LengthTailDecays) {
    const auto s = compute_stats(generate_synthetic(SynthConfig{2000, 0, {}, 5}));
    const auto& h = s.length_histogram.at(Label::Benign);
    std::size_t mid = 0, far = 0;
    for (const auto& [len, n] : h) {
        if (len >= 20 && len < 30) mid += n;
        if (len >= 40 && len < 50) far += n;
    }
    EXPECT_GT(mid, far);
}
