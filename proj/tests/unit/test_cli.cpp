#include <gtest/gtest.h>

#include <json.hpp>

#include "common/cli_runner.hpp"

using json = nlohmann::json;

namespace {

const std::string kCli = NAMESCORE_CLI;

std::string sha(int i) {
    std::string s = std::to_string(i);
    return std::string(64 - s.size(), '0') + s;
}

std::vector<json> jsonl(const std::string& text) {
    std::vector<json> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(json::parse(line));
    return out;
}

std::vector<json> records(const std::string& text) {
    auto all = jsonl(text);
    std::erase_if(all, [](const json& j) { return j.contains("_provenance"); });
    return all;
}

class Cli : public ::testing::Test {
protected:
    Cli() : ws_(::testing::UnitTest::GetInstance()->current_test_info()->name()) {}

    cases::RunResult run(const std::string& args, const std::string& env = "") const { return ws_.run(kCli, args, env); }

    void synth(std::size_t n = 120, int seed = 4) const {
        ASSERT_EQ(run("synth --n-benign " + std::to_string(n) + " --n-malicious " + std::to_string(n) + " --seed " +
                      std::to_string(seed) + " --out corpus.jsonl")
                      .exit_code,
                  0);
        ASSERT_EQ(run("ingest --input corpus.jsonl --test-fraction 0.3 --seed 1 --out train.jsonl --test-out test.jsonl").exit_code,
                  0);
    }

    cases::Workspace ws_;
};

}  // namespace

TEST_F(Cli, IngestReportsBannedSubstringDrops) {
    ws_.write("raw.csv",
              "sha256,name,label\n" + sha(1) + ",virus.exe,1\n" + sha(2) + ",Malware.EXE,1\n" + sha(3) + ",hacktool.exe,1\n" +
                  sha(4) + ",notepad.exe,0\n" + sha(5) + ",setup.exe,-1\n");
    auto r = run("ingest --input raw.csv --out out.jsonl");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto acct = json::parse(r.out);
    EXPECT_EQ(acct["banned_removed"], 3);
    EXPECT_EQ(acct["banned_hits"]["vir"], 1);
    EXPECT_EQ(acct["banned_hits"]["mal"], 1);
    EXPECT_EQ(acct["banned_hits"]["hack"], 1);
    EXPECT_EQ(records(ws_.read("out.jsonl")).size(), 2u);

    r = run("ingest --input raw.csv --filter-banned '' --drop-unlabeled --out all.jsonl");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out)["banned_removed"], 0);
    EXPECT_EQ(json::parse(r.out)["unlabeled_removed"], 1);
    EXPECT_EQ(records(ws_.read("all.jsonl")).size(), 4u);
}

TEST_F(Cli, BadPathFailsWithMessage) {
    const auto r = run("ingest --input missing.jsonl --out out.jsonl");
    EXPECT_NE(r.exit_code, 0);
    EXPECT_NE(r.err.find("missing.jsonl"), std::string::npos);
    EXPECT_FALSE(ws_.exists("out.jsonl"));
}

TEST_F(Cli, LinearModelRecordsRegularizationStrength) {
    synth();
    auto r = run("train --model linear-l1 --train train.jsonl --C 2.78 --out lr.json");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto model = json::parse(ws_.read("lr.json"));
    EXPECT_EQ(model["C"], 2.78);
    EXPECT_EQ(model["reg"], "l1");
    EXPECT_EQ(model["provenance"]["config"]["C"], 2.78);
    const auto log = json::parse(ws_.read("lr.json.log.json"));
    EXPECT_EQ(log["C"], 2.78);
    EXPECT_TRUE(log.contains("converged"));

    ASSERT_EQ(run("train --model linear-l2 --train train.jsonl --out l2.json").exit_code, 0);
    EXPECT_EQ(json::parse(ws_.read("l2.json"))["C"], 0.36);
}

TEST_F(Cli, CharCnnDefaultsAreRecorded) {
    ws_.write("tiny.jsonl", "{\"sha256\":\"" + sha(1) + "\",\"name\":\"a.exe\",\"label\":0}\n{\"sha256\":\"" + sha(2) +
                                "\",\"name\":\"qzx.scr\",\"label\":1}\n");
    const auto r = run("train --model charcnn --train tiny.jsonl --out cnn.json");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto model = json::parse(ws_.read("cnn.json"));
    EXPECT_EQ(model["training"]["epochs"], 10);
    EXPECT_EQ(model["training"]["lr"], 0.001);
    EXPECT_EQ(model["config"]["fc_widths"], json::parse("[1024,1024,2]"));
    const auto log = json::parse(ws_.read("cnn.json.log.json"));
    EXPECT_EQ(log["epoch_loss"].size(), 10u);
}

TEST_F(Cli, UnknownModelIsAUsageError) {
    synth(20);
    const auto r = run("train --model forest --train train.jsonl --out m.json");
    EXPECT_NE(r.exit_code, 0);
    EXPECT_NE(r.err.find("forest"), std::string::npos);
    EXPECT_FALSE(ws_.exists("m.json"));
}

TEST_F(Cli, RankedScoresAreSortedWithStableTies) {
    synth();
    ASSERT_EQ(run("train --model linear-l1 --train train.jsonl --out lr.json").exit_code, 0);
    // duplicated names tie; their relative input order must survive ranking
    std::string input;
    for (int i = 0; i < 12; ++i)
        input += "{\"sha256\":\"" + sha(i) + "\",\"name\":\"" + (i % 3 == 0 ? "setup.exe" : i % 3 == 1 ? "xkq7.scr" : "photo.exe") +
                 "\",\"label\":-1}\n";
    ws_.write("in.jsonl", input);
    auto r = run("score --model-file lr.json --input in.jsonl --ranked --out ranked.jsonl");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto ranked = records(ws_.read("ranked.jsonl"));
    ASSERT_EQ(ranked.size(), 12u);
    for (std::size_t i = 1; i < ranked.size(); ++i) {
        const double a = ranked[i - 1]["p_malicious"], b = ranked[i]["p_malicious"];
        EXPECT_GE(a, b);
        if (a == b) EXPECT_LT(ranked[i - 1]["sha256"].get<std::string>(), ranked[i]["sha256"].get<std::string>());
    }
    ASSERT_EQ(run("score --model-file lr.json --input in.jsonl --out plain.jsonl").exit_code, 0);
    const auto plain = records(ws_.read("plain.jsonl"));
    for (std::size_t i = 0; i < plain.size(); ++i) EXPECT_EQ(plain[i]["sha256"], sha(static_cast<int>(i)));
}

TEST_F(Cli, IndexMismatchIsRefused) {
    synth();
    ASSERT_EQ(run("train --model linear-l1 --train train.jsonl --out a.json").exit_code, 0);
    ASSERT_EQ(run("train --model linear-l1 --train test.jsonl --out b.json").exit_code, 0);
    const auto r = run("score --model-file a.json --index b.json.index.json --input test.jsonl --out s.jsonl");
    EXPECT_NE(r.exit_code, 0);
    EXPECT_NE(r.err.find("index"), std::string::npos);
    EXPECT_FALSE(ws_.exists("s.jsonl"));
}

TEST_F(Cli, EmptyInputGivesEmptyScores) {
    synth(20);
    ASSERT_EQ(run("train --model linear-l1 --train train.jsonl --out lr.json").exit_code, 0);
    ws_.write("empty.jsonl", "");
    const auto r = run("score --model-file lr.json --input empty.jsonl --out s.jsonl");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_TRUE(records(ws_.read("s.jsonl")).empty());
}

TEST_F(Cli, EvalOnPerfectScores) {
    ws_.write("labels.jsonl", "{\"sha256\":\"" + sha(1) + "\",\"name\":\"a\",\"label\":1}\n{\"sha256\":\"" + sha(2) +
                                  "\",\"name\":\"b\",\"label\":0}\n");
    ws_.write("scores.jsonl", "{\"sha256\":\"" + sha(1) + "\",\"name\":\"a\",\"p_malicious\":0.9}\n{\"sha256\":\"" + sha(2) +
                                  "\",\"name\":\"b\",\"p_malicious\":0.2}\n");
    const auto r = run("eval --scores scores.jsonl --labels labels.jsonl --out report.json --roc roc.csv");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto rep = json::parse(ws_.read("report.json"));
    EXPECT_EQ(rep["auc"], 1.0);
    for (const auto* cls : {"benign", "malicious", "macro_avg", "weighted_avg"})
        for (const auto* m : {"precision", "recall", "f1"}) EXPECT_EQ(rep["report"][cls][m], 1.0) << cls << " " << m;
    EXPECT_EQ(ws_.read("roc.csv").rfind("# provenance: ", 0), 0u);
}

TEST_F(Cli, LookupWithDisjointNamesIsAllUnseen) {
    ws_.write("train.jsonl", "{\"sha256\":\"" + sha(1) + "\",\"name\":\"a.exe\",\"label\":1}\n{\"sha256\":\"" + sha(2) +
                                 "\",\"name\":\"b.exe\",\"label\":0}\n");
    ws_.write("test.jsonl", "{\"sha256\":\"" + sha(3) + "\",\"name\":\"c.exe\",\"label\":1}\n{\"sha256\":\"" + sha(4) +
                                "\",\"name\":\"d.exe\",\"label\":0}\n");
    const auto r = run("baseline-lookup --train train.jsonl --test test.jsonl --out lookup.json");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto c = json::parse(ws_.read("lookup.json"))["report"]["confusion"];
    EXPECT_EQ(c["true_benign"]["pred_unseen"], 1);
    EXPECT_EQ(c["true_malicious"]["pred_unseen"], 1);
    EXPECT_EQ(c["true_benign"]["pred_benign"], 0);
    EXPECT_EQ(c["true_malicious"]["pred_malicious"], 0);
}

TEST_F(Cli, ClusterEmitsThreeCsvs) {
    synth(60);
    ASSERT_EQ(run("train --model charcnn --train train.jsonl --out cnn.json --epochs 1 --embed-dim 8 --channels 8 --fc-width 16")
                  .exit_code,
              0);
    const auto r = run("cluster --model-file cnn.json --input test.jsonl --eps 0.5 --min-pts 3 --out-dir out");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    auto header_of = [&](const std::string& f) {
        std::istringstream in(ws_.read(f));
        std::string prov, header;
        std::getline(in, prov);
        std::getline(in, header);
        EXPECT_EQ(prov.rfind("# provenance: ", 0), 0u) << f;
        return header;
    };
    EXPECT_EQ(header_of("out/assignments.csv"), "sha256,name,label,cluster");
    EXPECT_EQ(header_of("out/stats.csv"), "cluster,size,malicious_fraction,top_name_proportion");
    EXPECT_EQ(header_of("out/projection.csv"), "sha256,x,y,label");
    const auto summary = json::parse(ws_.read("out/summary.json"));
    EXPECT_TRUE(summary.contains("clusters"));
    EXPECT_TRUE(summary.contains("homogeneity"));
}

TEST_F(Cli, ConfigFileWithFlagOverride) {
    synth();
    ws_.write("cfg.json", R"({"seed": 9, "train": {"model": "linear-l2", "C": 1.5}})");
    ASSERT_EQ(run("train --config cfg.json --train train.jsonl --out a.json").exit_code, 0);
    const auto a = json::parse(ws_.read("a.json"));
    EXPECT_EQ(a["reg"], "l2");
    EXPECT_EQ(a["C"], 1.5);
    EXPECT_EQ(a["provenance"]["config"]["seed"], 9);
    ASSERT_EQ(run("train --config cfg.json --train train.jsonl --out b.json --C 4").exit_code, 0);
    EXPECT_EQ(json::parse(ws_.read("b.json"))["C"], 4.0);
    ws_.write("typo.json", R"({"train": {"regularisation": 2}})");
    EXPECT_EQ(run("train --config typo.json --model linear-l1 --train train.jsonl --out c.json").exit_code, 2);
}

TEST_F(Cli, ThreadCapDoesNotChangeScores) {
    synth(40);
    ASSERT_EQ(run("train --model charcnn --train train.jsonl --out cnn.json --epochs 1 --embed-dim 8 --channels 8 --fc-width 16")
                  .exit_code,
              0);
    ASSERT_EQ(run("score --model-file cnn.json --input test.jsonl --threads 4 --out a.jsonl").exit_code, 0);
    ASSERT_EQ(run("score --model-file cnn.json --input test.jsonl --threads 4 --out b.jsonl", "NAMESCORE_THREADS=1").exit_code, 0);
    EXPECT_EQ(records(ws_.read("a.jsonl")), records(ws_.read("b.jsonl")));
    EXPECT_NE(run("score --model-file cnn.json --input test.jsonl --out c.jsonl", "NAMESCORE_THREADS=lots").exit_code, 0);
}

TEST_F(Cli, RepeatedRunsAreByteIdentical) {
    synth(50);
    for (const char* out : {"a", "b"}) {
        const std::string o(out);
        ASSERT_EQ(run("train --model linear-l1 --train train.jsonl --out " + o + ".json").exit_code, 0);
        ASSERT_EQ(run("score --model-file " + o + ".json --input test.jsonl --out " + o + ".scores").exit_code, 0);
    }
    EXPECT_EQ(records(ws_.read("a.scores")), records(ws_.read("b.scores")));
    EXPECT_EQ(json::parse(ws_.read("a.json"))["weights"], json::parse(ws_.read("b.json"))["weights"]);
}

TEST_F(Cli, MlpModelsTrainAndScore) {
    ASSERT_EQ(run("synth --n-benign 80 --n-malicious 80 --seed 2 --out corpus.jsonl --dense-out dense.csv --dense-dim 6").exit_code, 0);
    ASSERT_EQ(run("train --model mlp-ember --train corpus.jsonl --features dense.csv --epochs 2 --out mlp.json").exit_code, 0);
    EXPECT_EQ(json::parse(ws_.read("mlp.json"))["input_dim"], 6);
    ASSERT_EQ(run("train --model charcnn --train corpus.jsonl --out cnn.json --epochs 1 --embed-dim 8 --channels 8 --fc-width 16")
                  .exit_code,
              0);
    auto r = run("train --model mlp-fused --train corpus.jsonl --features dense.csv --cnn-model cnn.json --epochs 2 --out fused.json");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(json::parse(ws_.read("fused.json"))["input_dim"], 6 + 16);
    r = run("score --model-file fused.json --input corpus.jsonl --features dense.csv --cnn-model cnn.json --out s.jsonl");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(records(ws_.read("s.jsonl")).size(), 160u);
    EXPECT_NE(run("score --model-file fused.json --input corpus.jsonl --features dense.csv --out t.jsonl").exit_code, 0);
}
