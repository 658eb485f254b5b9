#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "peftbench/cli.hpp"
#include "peftbench/serialize.hpp"
#include "support/support.hpp"

using namespace peftbench;
using namespace peftbench::testing;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code;
    std::string out, err;
};

CliResult run(std::vector<std::string> args)
{
    std::ostringstream out, err;
    int code = dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

const std::string kTable2 = std::string(PEFTBENCH_FIXTURE_DIR) + "/table2.csv";

class CliTest : public ::testing::Test {
protected:
    void SetUp() override
    {
        ::unsetenv("PEFTBENCH_SEED");
        dir_ = fs::temp_directory_path() / ("peftbench_cli_" + std::string(
                                                                  ::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override
    {
        ::unsetenv("PEFTBENCH_SEED");
        fs::remove_all(dir_);
    }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    // A small experiment that trains in milliseconds.
    std::string tiny_config()
    {
        ExperimentConfig cfg;
        cfg.arch = tiny_cnn();
        cfg.peft.method = Method::Bias;
        cfg.dataset.synth.size = 60;
        cfg.dataset.synth.image_size = 8;
        cfg.train.max_epochs = 2;
        cfg.train.patience = 2;
        cfg.train.batch_size = 16;
        cfg.pretrain.epochs = 1;
        cfg.pretrain.source_size = 40;
        cfg.pretrain.batch_size = 16;
        cfg.seeds = {0, 1};
        cfg.seed = 11;
        std::string p = path("cfg.json");
        write_text_file(p, experiment_to_json(cfg).dump(2));
        return p;
    }

    fs::path dir_;
};

}  // namespace

TEST_F(CliTest, HelpListsEveryVerb)
{
    CliResult r = run({"--help"});
    EXPECT_EQ(r.code, kExitOk);
    for (const char* verb :
         {"count-params", "train", "sweep", "hpo", "gen-train", "gen-eval", "rank", "pareto", "ingest-check"})
        EXPECT_NE(r.out.find(verb), std::string::npos) << verb;
}

TEST_F(CliTest, NoVerbIsUsageError)
{
    CliResult r = run({});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("usage:"), std::string::npos);
}

TEST_F(CliTest, UnknownFlagIsUsageError)
{
    CliResult r = run({"rank", "--input", kTable2, "--frobnicate"});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("usage:"), std::string::npos);
    EXPECT_TRUE(r.out.empty());
}

TEST_F(CliTest, RankGolden)
{
    CliResult r = run({"rank", "--input", kTable2});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(r.out,
              "methods,full-ft,linear-probe,tsa,batchnorm,bias,ssf\n"
              "avg_metric,0.78,0.72,0.83,0.82,0.76,0.85\n"
              "avg_rank,2.8,5.2,2.2,3.2,4.6,1.2\n");
}

TEST_F(CliTest, RankEmitMatchesLibrary)
{
    CliResult r = run({"rank", "--input", kTable2, "--emit", "csv"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    RankTable t = rank_table(read_rows_csv(read_text_file(kTable2), Direction::HigherBetter));
    EXPECT_EQ(r.out, render_report(t, ReportFormat::Csv));
    EXPECT_EQ(run({"rank", "--input", kTable2, "--emit", "xml"}).code, kExitUsage);
    EXPECT_EQ(run({"rank", "--input", kTable2, "--direction", "sideways"}).code, kExitUsage);
}

TEST_F(CliTest, MissingInputIsRuntimeError)
{
    CliResult r = run({"rank", "--input", path("absent.csv")});
    EXPECT_EQ(r.code, kExitRuntime);
    EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, CountParamsMatchesLibrary)
{
    CliResult r = run({"count-params", "--arch", "mini-vit", "--method", "lora", "--rank", "4", "--json"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    Json j = Json::parse(r.out);
    PeftSpec spec;
    spec.method = Method::Lora;
    spec.rank = 4;
    AdaptedModel a = make_strategy(build_model(VitConfig{}, RngStream(0, 0x1417)), spec);
    TrainableCount c = trainable_count(a);
    EXPECT_EQ(j["trainable"].get<std::size_t>(), c.trainable);
    EXPECT_EQ(j["total"].get<std::size_t>(), c.total);
    EXPECT_EQ(j["method"], "lora");
}

TEST_F(CliTest, CountParamsRejectsIncompatiblePair)
{
    CliResult r = run({"count-params", "--arch", "mini-cnn", "--method", "lora"});
    EXPECT_EQ(r.code, kExitRuntime);
    EXPECT_NE(r.err.find("lora"), std::string::npos);
    EXPECT_EQ(run({"count-params", "--arch", "mini-cnn", "--method", "nope"}).code, kExitUsage);
    EXPECT_EQ(run({"count-params"}).code, kExitUsage);
}

TEST_F(CliTest, BadFractionsAreUsageErrors)
{
    std::string cfg = tiny_config();
    for (const char* f : {"1,1.5", "0.5,0", "0.1,0.5", "1,abc", "0.5,0.5"}) {
        CliResult r = run({"sweep", "--config", cfg, "--fractions", f});
        EXPECT_EQ(r.code, kExitUsage) << f;
        EXPECT_TRUE(r.out.empty()) << f;
    }
    EXPECT_EQ(run({"train", "--config", cfg, "--fraction", "1.2"}).code, kExitUsage);
}

TEST_F(CliTest, TrainOutputIsDeterministic)
{
    std::string cfg = tiny_config();
    ASSERT_EQ(run({"train", "--config", cfg, "--out", path("a.csv")}).code, kExitOk);
    ASSERT_EQ(run({"train", "--config", cfg, "--out", path("b.csv")}).code, kExitOk);
    std::string a = read_text_file(path("a.csv"));
    EXPECT_EQ(a, read_text_file(path("b.csv")));
    EXPECT_EQ(a.substr(0, a.find('\n')), "method,dataset,metric,std,params,fraction");
}

TEST_F(CliTest, SeedPrecedence)
{
    std::string cfg = tiny_config();
    auto train = [&](std::vector<std::string> extra) {
        std::vector<std::string> args{"train", "--config", cfg, "--json"};
        args.insert(args.end(), extra.begin(), extra.end());
        CliResult r = run(args);
        EXPECT_EQ(r.code, kExitOk) << r.err;
        return r.out;
    };
    std::string file_seed = train({});
    std::string flag7 = train({"--seed", "7"});
    ::setenv("PEFTBENCH_SEED", "7", 1);
    EXPECT_EQ(train({}), flag7);
    ::setenv("PEFTBENCH_SEED", "3", 1);
    EXPECT_EQ(train({"--seed", "7"}), flag7);
    ::setenv("PEFTBENCH_SEED", "11", 1);
    EXPECT_EQ(train({}), file_seed);
    ::setenv("PEFTBENCH_SEED", "x1", 1);
    EXPECT_EQ(run({"train", "--config", cfg}).code, kExitUsage);
}

TEST_F(CliTest, SweepPrintsSeries)
{
    std::string cfg = tiny_config();
    CliResult r = run({"sweep", "--config", cfg, "--fractions", "1,0.5", "--methods", "bias,linear-probe", "--jobs", "2"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    std::istringstream lines(r.out);
    std::string line;
    std::getline(lines, line);
    EXPECT_EQ(line, "fraction,method,mean,std");
    int n = 0;
    while (std::getline(lines, line)) ++n;
    EXPECT_EQ(n, 4);
}

TEST_F(CliTest, HpoReportsBest)
{
    std::string cfg = tiny_config();
    CliResult r = run({"hpo", "--config", cfg, "--trials", "4", "--eta", "2", "--min-budget", "1", "--max-budget", "2",
                 "--json"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    Json j = Json::parse(r.out);
    EXPECT_EQ(j["trials"].size(), 4u);
    EXPECT_EQ(run({"hpo", "--config", cfg, "--trials", "4", "--eta", "2", "--min-budget", "1", "--max-budget", "3"})
                  .code,
              kExitUsage);
}

TEST_F(CliTest, ParetoOnFixture)
{
    CliResult r = run({"pareto", "--input", kTable2, "--dataset", "BreastUS"});
    EXPECT_EQ(run({"pareto", "--input", kTable2, "--dataset", "nowhere"}).code, kExitRuntime);
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "method,dataset,metric,params");
}

TEST_F(CliTest, IngestCheckCsv)
{
    std::string csv = "p0,p1,p2,p3,label\n";
    for (int i = 0; i < 20; ++i) csv += "0,10,20,30," + std::to_string(i % 2) + "\n";
    write_text_file(path("d.csv"), csv);
    CliResult r = run({"ingest-check", "--path", path("d.csv"), "--format", "csv", "--json"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    Json j = Json::parse(r.out);
    EXPECT_EQ(j["items"], 20);
    EXPECT_EQ(j["classes"], 2);
    EXPECT_EQ(run({"ingest-check", "--path", path("d.csv"), "--format", "tar"}).code, kExitUsage);
    write_text_file(path("bad.csv"), "p0,label\n1,dog\n");
    CliResult bad = run({"ingest-check", "--path", path("bad.csv"), "--format", "csv"});
    EXPECT_EQ(bad.code, kExitRuntime);
    EXPECT_NE(bad.err.find("row"), std::string::npos);
}

TEST_F(CliTest, GenEvalOnImageCsvs)
{
    auto images = [&](const std::string& name, double level, std::uint64_t seed) {
        RngStream r(seed, 1);
        std::string s = "p0,p1,p2,p3\n";
        for (int i = 0; i < 40; ++i) {
            for (int k = 0; k < 4; ++k) s += (k ? "," : "") + std::to_string(level + 0.1 * r.normal());
            s += "\n";
        }
        write_text_file(path(name), s);
        return path(name);
    };
    std::string a = images("a.csv", 0.0, 1), b = images("b.csv", 0.0, 2), c = images("c.csv", 0.8, 3);
    CliResult same = run({"gen-eval", "--real", a, "--gen", b, "--json"});
    CliResult far = run({"gen-eval", "--real", a, "--gen", c, "--json"});
    ASSERT_EQ(same.code, kExitOk) << same.err;
    ASSERT_EQ(far.code, kExitOk) << far.err;
    EXPECT_LT(Json::parse(same.out)["fd"].get<double>(), Json::parse(far.out)["fd"].get<double>());
    EXPECT_EQ(run({"gen-eval", "--real", a}).code, kExitUsage);
}
