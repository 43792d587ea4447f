#include <gtest/gtest.h>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace lpm;

namespace {

int run(const std::string& args, const std::string& log) {
    const std::string cmd = std::string(LPM_CLI_PATH) + " " + args + " > " + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> lines_of(const std::string& path) {
    std::ifstream in(path);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

// One synthetic screen and one trained checkpoint shared by the whole suite.
class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir = new fixtures::TempDir("cli");
        const auto synth_args = "synth --n-p 40 --n-r 12 --n-c 2 --noise 0.05 --seed 3 --layout disjoint";
        ASSERT_EQ(run(std::string(synth_args) + " --out " + f("screen.tsv") + " --truth " + f("truth.json"), f("synth.log")), 0);
        ASSERT_EQ(run("train --data " + f("screen.tsv") + " --target-context C0 --seed 1 --embed 8 --hidden 32 --layers 2 "
                      "--batch 64 --lr 0.01 --max-epochs 20 --out " + f("m"),
                      f("train.log")),
                  0);
    }
    static void TearDownTestSuite() {
        delete dir;
        dir = nullptr;
    }
    static std::string f(const std::string& name) { return dir->file(name); }

    static fixtures::TempDir* dir;
};

fixtures::TempDir* CliTest::dir = nullptr;

}  // namespace

TEST_F(CliTest, SynthIsByteDeterministic) {
    const auto synth_args = "synth --n-p 40 --n-r 12 --n-c 2 --noise 0.05 --seed 3 --layout disjoint";
    ASSERT_EQ(run(std::string(synth_args) + " --out " + f("again.tsv") + " --truth " + f("again.json"), f("s2.log")), 0);
    EXPECT_EQ(read_file_bytes(f("screen.tsv")), read_file_bytes(f("again.tsv")));
    EXPECT_EQ(read_file_bytes(f("truth.json")), read_file_bytes(f("again.json")));
    const auto data = ingest_long_format(f("screen.tsv"));
    EXPECT_EQ(data.vocab_c().size(), 2u);
    EXPECT_EQ(data.vocab_p().size(), 41u);
    EXPECT_TRUE(std::filesystem::exists(f("screen.tsv.run.json")));
}

TEST_F(CliTest, TrainIsBitReproducible) {
    ASSERT_EQ(run("train --data " + f("screen.tsv") + " --target-context C0 --seed 1 --embed 8 --hidden 32 --layers 2 "
                  "--batch 64 --lr 0.01 --max-epochs 20 --out " + f("m2"),
                  f("t2.log")),
              0);
    EXPECT_EQ(read_file_bytes(f("m.blob")), read_file_bytes(f("m2.blob")));
    EXPECT_EQ(read_file_bytes(f("m.manifest.json")), read_file_bytes(f("m2.manifest.json")));
    EXPECT_EQ(read_file_bytes(f("m.report.csv")), read_file_bytes(f("m2.report.csv")));
    const auto report = lines_of(f("m.report.csv"));
    ASSERT_GE(report.size(), 2u);
    EXPECT_EQ(report[0], "epoch,train_loss,val_rmse,learning_rate");
    const auto run_json = nlohmann::json::parse(read_file_bytes(f("m.run.json")));
    EXPECT_EQ(run_json["command"], "train");
    EXPECT_EQ(run_json["inputs"][f("screen.tsv")], sha256_file(f("screen.tsv")));
}

TEST_F(CliTest, PredictMatchesForwardExactly) {
    const auto ck = load_checkpoint(CheckpointPaths::from_prefix(f("m")));
    std::ofstream(f("q.tsv")) << "context\tperturbation\treadout\nC0\tP00\tR00\nC1\tP03+P07\tR05\nC0\tCTRL\tR11\n";
    ASSERT_EQ(run("predict --checkpoint " + f("m") + " --queries " + f("q.tsv") + " --out " + f("pred.tsv"), f("p.log")), 0);
    const auto rows = lines_of(f("pred.tsv"));
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0], "context\tperturbation\treadout\tprediction");
    ObservationSet vocab(ck.vocab_p, ck.vocab_r, ck.vocab_c, ck.control_symbol);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::istringstream fields(rows[i]);
        std::string c, p, r, v;
        std::getline(fields, c, '\t');
        std::getline(fields, p, '\t');
        std::getline(fields, r, '\t');
        std::getline(fields, v, '\t');
        const Query q{*vocab.lookup_perturbation(p), ck.vocab_r.id(r), ck.vocab_c.id(c)};
        EXPECT_EQ(std::stod(v), static_cast<double>(forward(ck.params, q))) << rows[i];
    }
    ASSERT_EQ(run("predict --checkpoint " + f("m") + " --queries " + f("q.tsv") + " --out " + f("pred2.tsv"), f("p2.log")), 0);
    EXPECT_EQ(read_file_bytes(f("pred.tsv")), read_file_bytes(f("pred2.tsv")));
}

TEST_F(CliTest, PredictRejectsUnknownSymbols) {
    std::ofstream(f("bad.tsv")) << "context\tperturbation\treadout\nC0\tP00+NOPE\tR00\nC9\tP01\tR00\n";
    EXPECT_EQ(run("predict --checkpoint " + f("m") + " --queries " + f("bad.tsv") + " --out " + f("bad_out.tsv"), f("bad.log")), 1);
    EXPECT_FALSE(std::filesystem::exists(f("bad_out.tsv")));
    const auto log = read_file_bytes(f("bad.log"));
    EXPECT_NE(log.find("NOPE"), std::string::npos);
    EXPECT_NE(log.find("C9"), std::string::npos);
}

TEST_F(CliTest, EvaluateWritesOneRowPerSubset) {
    for (const char* method : {"lpm", "noperturb"}) {
        const auto out = f(std::string("metrics_") + method + ".csv");
        ASSERT_EQ(run("evaluate --checkpoint " + f("m") + " --data " + f("screen.tsv") + " --target-context C0 --seed 1 --method " +
                          method + " --out " + out,
                      f("e.log")),
                  0);
        const auto rows = lines_of(out);
        EXPECT_EQ(rows.size(), 1 + standard_subsets().size());
        ASSERT_EQ(run("evaluate --checkpoint " + f("m") + " --data " + f("screen.tsv") + " --target-context C0 --seed 1 --method " +
                          method + " --out " + out + ".2",
                      f("e2.log")),
                  0);
        EXPECT_EQ(read_file_bytes(out), read_file_bytes(out + ".2"));
    }
}

TEST_F(CliTest, EmbedExportsEachDimension) {
    const auto ck = load_checkpoint(CheckpointPaths::from_prefix(f("m")));
    const std::vector<std::pair<std::string, std::size_t>> dims{{"P", ck.vocab_p.size()}, {"R", ck.vocab_r.size()}, {"C", ck.vocab_c.size()}};
    for (const auto& [dim, rows] : dims) {
        const auto out = f("emb_" + dim + ".tsv");
        ASSERT_EQ(run("embed --checkpoint " + f("m") + " --dimension " + dim + " --out " + out, f("emb.log")), 0);
        const auto lines = lines_of(out);
        EXPECT_EQ(lines.size(), rows + 1);
        EXPECT_EQ(lines[0], "symbol\te0\te1\te2\te3\te4\te5\te6\te7");
    }
    EXPECT_EQ(run("embed --checkpoint " + f("m") + " --dimension Q --out " + f("q.tsv"), f("emb.log")), 2);
}

TEST_F(CliTest, ImputeAndNetinferAreDeterministic) {
    for (const char* tag : {"a", "b"}) {
        const std::string t(tag);
        ASSERT_EQ(run("impute --checkpoint " + f("m") + " --data " + f("screen.tsv") + " --target-context C0 --out " + f("full_" + t + ".tsv") +
                          " --imputed-out " + f("imp_" + t + ".tsv"),
                      f("i.log")),
                  0);
        ASSERT_EQ(run("netinfer --data " + f("screen.tsv") + " --context C0 --k 40 --checkpoint " + f("m") + " --truth " + f("truth.json") +
                          " --out " + f("edges_" + t + ".tsv"),
                      f("n.log")),
                  0);
    }
    EXPECT_EQ(read_file_bytes(f("full_a.tsv")), read_file_bytes(f("full_b.tsv")));
    EXPECT_EQ(read_file_bytes(f("imp_a.tsv")), read_file_bytes(f("imp_b.tsv")));
    EXPECT_EQ(read_file_bytes(f("edges_a.tsv")), read_file_bytes(f("edges_b.tsv")));
    EXPECT_EQ(read_file_bytes(f("edges_a.tsv.eval.json")), read_file_bytes(f("edges_b.tsv.eval.json")));

    // Disjoint layout: C0 holds 20 of 40 perturbations, so 20 x 12 rows get imputed.
    EXPECT_EQ(lines_of(f("imp_a.tsv")).size(), 1u + 20 * 12);
    const auto edges = lines_of(f("edges_a.tsv"));
    EXPECT_GT(edges.size(), 41u);
    EXPECT_LE(edges.size(), 81u);
    const auto report = nlohmann::json::parse(read_file_bytes(f("edges_a.tsv.eval.json")));
    EXPECT_EQ(report["universe_size"], 40 * 12);

    ASSERT_EQ(run("netinfer --data " + f("screen.tsv") + " --context C0 --k 5 --out " + f("scored.tsv"), f("n2.log")), 0);
    const auto scored = lines_of(f("scored.tsv"));
    ASSERT_EQ(scored.size(), 6u);
    EXPECT_EQ(scored[0], "source\ttarget\tscore");
}

TEST_F(CliTest, ExitCodes) {
    EXPECT_EQ(run("--help", f("h.log")), 0);
    EXPECT_EQ(run("", f("u.log")), 2);
    EXPECT_EQ(run("frobnicate", f("u.log")), 2);
    EXPECT_EQ(run("train --data " + f("screen.tsv") + " --target-context C0 --grid --lr 0.1 --out " + f("g"), f("g.log")), 2);
    EXPECT_EQ(run("train --data " + f("screen.tsv") + " --target-context NOPE --out " + f("x"), f("x.log")), 1);
    std::ofstream(f("m3.blob"), std::ios::binary) << read_file_bytes(f("m.blob")).substr(8);
    std::ofstream(f("m3.manifest.json"), std::ios::binary) << read_file_bytes(f("m.manifest.json"));
    EXPECT_EQ(run("embed --checkpoint " + f("m3") + " --dimension P --out " + f("e3.tsv"), f("e3.log")), 1);
    EXPECT_NE(read_file_bytes(f("e3.log")).find("hash"), std::string::npos);
}
