#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "egsa/cli.hpp"
#include "egsa/image_io.hpp"
#include "test_util.hpp"

using namespace egsa;
using egsa::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    const auto b = read_file(p);
    return {b.begin(), b.end()};
}

std::vector<std::string> tiny_overrides() {
    return {"model.height=32", "model.width=32", "train.epochs=2", "train.batch=2"};
}

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir("cli");
        ASSERT_EQ(cli({"generate", "--seed", "5", "--out", data().string(), "--train", "4", "--test", "2", "--size",
                       "32x32"})
                      .code,
                  0);
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static fs::path data() { return *dir_ / "data"; }
    static fs::path path(const std::string& name) { return *dir_ / name; }

    static TempDir* dir_;
};

TempDir* CliTest::dir_ = nullptr;

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(cli({}).code, 2);
    EXPECT_EQ(cli({"frobnicate"}).code, 2);
    EXPECT_EQ(cli({"generate"}).code, 2);
    const auto r = cli({"generate", "--out", "/tmp/x", "--train", "0"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("--train"), std::string::npos) << r.err;
    EXPECT_EQ(cli({"generate", "--out", "/tmp/x", "--size", "32by32"}).code, 2);
    EXPECT_EQ(cli({"edges", "--input", "/nonexistent.ppm", "--out", "/tmp/x"}).code, 2);
    EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(CliTest, GenerateWritesManifest) {
    const std::string manifest = slurp(data() / "manifest.txt");
    EXPECT_NE(manifest.find("train/000003"), std::string::npos);
    EXPECT_NE(manifest.find("test/000001"), std::string::npos);
    EXPECT_TRUE(fs::exists(data() / "train" / "000000" / "depth.dmap"));
}

TEST_F(CliTest, TrainEvalDeterministic) {
    const auto a = cli(with({"train", "--data", data().string(), "--out", path("run_a").string()}, tiny_overrides()));
    ASSERT_EQ(a.code, 0) << a.err;
    const auto b = cli(with({"train", "--data", data().string(), "--out", path("run_b").string()}, tiny_overrides()));
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(read_file(path("run_a") / "checkpoint.egsa"), read_file(path("run_b") / "checkpoint.egsa"));
    EXPECT_EQ(slurp(path("run_a") / "train_log.csv"), slurp(path("run_b") / "train_log.csv"));

    // The resolved config is echoed next to the checkpoint.
    const std::string conf = slurp(path("run_a") / "config.txt");
    EXPECT_NE(conf.find("model.height = 32\n"), std::string::npos);
    EXPECT_NE(conf.find("train.epochs = 2\n"), std::string::npos);

    const std::string ckpt = (path("run_a") / "checkpoint.egsa").string();
    const auto e1 = cli({"eval", "--checkpoint", ckpt, "--data", data().string(), "--out", path("r1.csv").string()});
    ASSERT_EQ(e1.code, 0) << e1.err;
    const auto e2 = cli({"eval", "--checkpoint", ckpt, "--data", data().string(), "--out", path("r2.csv").string()});
    ASSERT_EQ(e2.code, 0) << e2.err;
    EXPECT_EQ(read_file(path("r1.csv")), read_file(path("r2.csv")));
    const std::string report = slurp(path("r1.csv"));
    EXPECT_EQ(report.rfind("edge_source,delta_105,delta_110,delta_125,rmse,mae,rel,map_50,miou,delta_105_T", 0), 0u);
    EXPECT_NE(report.find("\nRGB,"), std::string::npos) << report;  // 2 epochs, all before T = 5
    EXPECT_TRUE(fs::exists(path("r1.txt")));

    // A mismatching expected config is refused.
    const auto bad = cli(with({"eval", "--checkpoint", ckpt, "--data", data().string(), "--out",
                               path("r3.csv").string(), "loss.beta_seg=0.5"},
                              tiny_overrides()));
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.err.find("hash"), std::string::npos) << bad.err;
    const auto good = cli(with({"eval", "--checkpoint", ckpt, "--data", data().string(), "--out",
                                path("r4.csv").string()},
                               tiny_overrides()));
    EXPECT_EQ(good.code, 0) << good.err;
}

TEST_F(CliTest, TrainConfigErrors) {
    const auto unknown = cli(with({"train", "--data", data().string(), "--out", path("bad").string(), "no.key=1"},
                                  tiny_overrides()));
    EXPECT_EQ(unknown.code, 2);
    EXPECT_NE(unknown.err.find("no.key"), std::string::npos);
    const auto size = cli({"train", "--data", data().string(), "--out", path("bad2").string()});
    EXPECT_EQ(size.code, 2);
    EXPECT_NE(size.err.find("32x32"), std::string::npos) << size.err;
    const auto missing = cli(with({"train", "--data", path("nowhere").string(), "--out", path("bad3").string()},
                                  tiny_overrides()));
    EXPECT_EQ(missing.code, 1);
}

TEST_F(CliTest, EdgeSourceColumn) {
    auto run = [&](const std::string& name, std::vector<std::string> extra) {
        const auto r = cli(with(with({"train", "--data", data().string(), "--out", path(name).string()},
                                     tiny_overrides()),
                                extra));
        EXPECT_EQ(r.code, 0) << r.err;
        std::istringstream in(slurp(path(name) / "train_log.csv"));
        std::vector<std::string> modes;
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            const auto a = line.find(','), b = line.find(',', a + 1);
            modes.push_back(line.substr(a + 1, b - a - 1));
        }
        return modes;
    };
    EXPECT_EQ(run("modest", {"fusion.variant=MODEST_SA"}), (std::vector<std::string>{"none", "none"}));
    EXPECT_EQ(run("rgb_only", {"schedule.T=21"}), (std::vector<std::string>{"RGB", "RGB"}));
    EXPECT_EQ(run("switch", {"schedule.T=1"}), (std::vector<std::string>{"RGB", "Depth"}));
}

TEST_F(CliTest, EvalWithoutTransparentPixelsPrintsNA) {
    ASSERT_EQ(cli({"generate", "--seed", "6", "--out", path("clear").string(), "--train", "2", "--test", "2", "--size",
                   "32x32", "--transparent-fraction", "0"})
                  .code,
              0);
    const auto t = cli(with({"train", "--data", path("clear").string(), "--out", path("clear_run").string()},
                            {"model.height=32", "model.width=32", "train.epochs=1"}));
    ASSERT_EQ(t.code, 0) << t.err;
    const auto e = cli({"eval", "--checkpoint", (path("clear_run") / "checkpoint.egsa").string(), "--data",
                        path("clear").string(), "--out", path("clear.csv").string()});
    ASSERT_EQ(e.code, 0) << e.err;
    const std::string report = slurp(path("clear.csv"));
    EXPECT_NE(report.find(",NA,NA,NA\n"), std::string::npos) << report;
    EXPECT_NE(slurp(path("clear.txt")).find("transparent metrics NA"), std::string::npos);
}

TEST_F(CliTest, EdgesCommand) {
    const std::string rgb = (data() / "train" / "000000" / "rgb.ppm").string();
    const auto r = cli({"edges", "--input", rgb, "--out", path("edges").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(path("edges") / "edges.pgm"));
    EXPECT_TRUE(fs::exists(path("edges") / "edges_level0_4x4.pgm"));
    EXPECT_TRUE(fs::exists(path("edges") / "edges_level2_16x16.pgm"));
    const auto img = decode_pnm(read_file(path("edges") / "edges.pgm"));
    for (auto v : img.pixels) EXPECT_TRUE(v == 0 || v == 255);

    const std::string depth = (data() / "train" / "000000" / "depth.dmap").string();
    EXPECT_EQ(cli({"edges", "--input", depth, "--mode", "depth", "--out", path("dedges").string()}).code, 0);
    EXPECT_EQ(cli({"edges", "--input", depth, "--out", path("dedges2").string()}).code, 2);
    EXPECT_EQ(cli({"edges", "--input", rgb, "--mode", "sideways", "--out", path("x").string()}).code, 2);
}

TEST_F(CliTest, AblateWritesCombinedCsv) {
    const auto r = cli(with({"ablate", "--data", data().string(), "--out", path("ablate").string(), "--seeds", "3"},
                            {"model.height=32", "model.width=32", "train.epochs=1", "train.batch=4"}));
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream in(slurp(path("ablate") / "ablation.csv"));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line.rfind("variant,edge_source,seed,status,delta_105", 0), 0u);
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line.substr(0, line.find(",3,")));
    EXPECT_EQ(rows, (std::vector<std::string>{"MODEST_CA_SA,none", "MODEST_CA,none", "MODEST_SA,none", "EGSA_CA_SA,RGB",
                                              "EGSA_SA,RGB", "EGSA_SA,Depth", "EGSA_SA,Progressive"}));
    EXPECT_NE(slurp(path("ablate") / "ablation_summary.txt").find("EGSA_SA (Depth)"), std::string::npos);
    EXPECT_TRUE(fs::exists(path("ablate") / "EGSA_SA_Depth_seed3" / "checkpoint.egsa"));
    EXPECT_NE(slurp(path("ablate") / "EGSA_SA_Depth_seed3" / "config.txt").find("schedule.T = 0\n"),
              std::string::npos);
}
