#include "fixture_env.hpp"

#include <textsql/driver.hpp>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

using namespace textsql;
using nlohmann::json;

namespace {

testsupport::FixtureEnv& env() {
    static testsupport::FixtureEnv instance;
    return instance;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    EXPECT_TRUE(in) << path;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Mock-script rules covering every stage of every fixture dev question.
std::filesystem::path write_gold_mock_script(const std::string& name) {
    const auto examples = corpus::load_dataset(testsupport::fixture_dir() / "dev_spider.json",
                                               corpus::DatasetFormat::spider);
    const auto golds = testsupport::load_gold_stages("dev_gold.json");

    json rules = json::array();
    for (const auto& ex : examples) {
        const auto& g = golds.at(ex.id);
        rules.push_back({{"stage", "aqp"}, {"question", ex.question}, {"response", g.aqp}});
        rules.push_back({{"stage", "csm"}, {"question", ex.question}, {"response", g.csm}});
        rules.push_back({{"stage", "sql"}, {"question", ex.question}, {"response", *ex.gold_sql}});
        rules.push_back({{"stage", "cot"},
                         {"question", ex.question},
                         {"response", g.aqp + "\n### Replaced Question: " + g.csm +
                                          "\n### Gold SQL: " + *ex.gold_sql}});
    }
    const auto path = env().scratch("mock_scripts") / (name + ".json");
    std::ofstream(path) << rules.dump(2);
    return path;
}

std::filesystem::path make_store_file(const std::string& name) {
    llmio::EmbedClient embedder(std::make_shared<llmio::HashEmbedBackend>(64));
    const auto store = testsupport::make_fixture_store(env(), embedder);
    const auto path = env().scratch("stores") / (name + ".jsonl");
    retrieval::save_store(store, path);
    return path;
}

driver::RunOptions base_run_options(const std::string& run_name) {
    driver::RunOptions opts;
    opts.dev_path = testsupport::fixture_dir() / "dev_spider.json";
    opts.format = corpus::DatasetFormat::spider;
    opts.db_root = env().db_root();
    opts.store_path = make_store_file(run_name + "_store");
    opts.run_dir = env().scratch(run_name);
    opts.templates_dir = testsupport::template_dir();
    opts.backend.kind = "mock";
    opts.backend.mock_script = write_gold_mock_script(run_name);
    opts.parallelism = 2;
    return opts;
}

} // namespace

TEST(CmdRun, GoldMockProducesGoldPredictions) {
    auto opts = base_run_options("cmdrun_gold");
    ASSERT_EQ(driver::cmd_run(opts), driver::kExitOk);

    const auto examples = corpus::load_dataset(opts.dev_path, corpus::DatasetFormat::spider);
    std::ifstream preds(opts.run_dir / "predictions.sql");
    ASSERT_TRUE(preds);
    std::string line;
    size_t i = 0;
    while (std::getline(preds, line)) {
        ASSERT_LT(i, examples.size());
        EXPECT_EQ(line, *examples[i].gold_sql);
        ++i;
    }
    EXPECT_EQ(i, examples.size());
    EXPECT_TRUE(std::filesystem::exists(opts.run_dir / "run.json"));
    EXPECT_TRUE(std::filesystem::exists(opts.run_dir / "traces" / "0.json"));
}

TEST(CmdRun, AblationRoutingVisibleInTraces) {
    auto opts = base_run_options("cmdrun_nocsm");
    opts.pipeline.ablation.disable_csm = true;
    ASSERT_EQ(driver::cmd_run(opts), driver::kExitOk);
    const auto trace = pipeline::trace_from_json(
        json::parse(read_file(opts.run_dir / "traces" / "0.json")));
    EXPECT_EQ(trace.generation_prompt_count(), 2u);
    for (const auto& p : trace.prompts) EXPECT_NE(p.kind, prompts::PromptKind::csm);
}

TEST(CmdRun, RecordThenReplayTwiceIsByteIdentical) {
    auto record = base_run_options("cmdrun_record");
    record.record_transcript = record.run_dir / "transcript.jsonl";
    ASSERT_EQ(driver::cmd_run(record), driver::kExitOk);

    auto replay1 = base_run_options("cmdrun_replay1");
    replay1.store_path = record.store_path;
    replay1.backend.kind = "replay";
    replay1.backend.transcript_in = record.record_transcript;
    ASSERT_EQ(driver::cmd_run(replay1), driver::kExitOk);

    auto replay2 = base_run_options("cmdrun_replay2");
    replay2.store_path = record.store_path;
    replay2.backend.kind = "replay";
    replay2.backend.transcript_in = record.record_transcript;
    ASSERT_EQ(driver::cmd_run(replay2), driver::kExitOk);

    EXPECT_EQ(read_file(replay1.run_dir / "predictions.sql"),
              read_file(replay2.run_dir / "predictions.sql"));
}

TEST(CmdRun, DryRunMakesZeroBackendCalls) {
    auto opts = base_run_options("cmdrun_dry");
    opts.backend.mock_script = ""; // a call would throw: no scripted responses
    opts.dry_run = true;
    EXPECT_EQ(driver::cmd_run(opts), driver::kExitOk);
    EXPECT_FALSE(std::filesystem::exists(opts.run_dir / "predictions.sql"));
}

TEST(CmdRun, MissingStoreIsFatal) {
    auto opts = base_run_options("cmdrun_nostore");
    opts.store_path = "/nonexistent/store.jsonl";
    EXPECT_EQ(driver::cmd_run(opts), driver::kExitFatal);
}

TEST(CmdBuildDemos, FixtureTrainingBuildsStore) {
    driver::BuildDemosOptions opts;
    opts.train_path = testsupport::fixture_dir() / "train_spider.json";
    opts.format = corpus::DatasetFormat::spider;
    opts.db_root = env().db_root();
    opts.seeds_path = testsupport::fixture_dir() / "seeds.json";
    opts.out_store = env().scratch("built_stores") / "store.jsonl";
    opts.templates_dir = testsupport::template_dir();
    opts.backend.kind = "mock";

    // script the build responses from the train golds
    const auto train = corpus::load_dataset(opts.train_path, corpus::DatasetFormat::spider);
    const auto golds = testsupport::load_gold_stages("train_gold.json");
    json rules = json::array();
    for (const auto& ex : train) {
        const auto& g = golds.at(ex.id);
        rules.push_back({{"stage", "aqp"}, {"question", ex.question}, {"response", g.aqp}});
        rules.push_back({{"stage", "csm"}, {"question", ex.question}, {"response", g.csm}});
    }
    const auto script = env().scratch("mock_scripts") / "build.json";
    std::ofstream(script) << rules.dump();
    opts.backend.mock_script = script;

    ASSERT_EQ(driver::cmd_build_demos(opts), driver::kExitOk);
    const auto store = retrieval::load_store(opts.out_store);
    EXPECT_EQ(store.demos.size(), retrieval::kSeedCount + train.size());
}

TEST(CmdBuildDemos, MissingSeedsIsFatal) {
    driver::BuildDemosOptions opts;
    opts.train_path = testsupport::fixture_dir() / "train_spider.json";
    opts.db_root = env().db_root();
    opts.seeds_path = "/nonexistent/seeds.json";
    opts.out_store = env().scratch("built_stores") / "never.jsonl";
    opts.templates_dir = testsupport::template_dir();
    EXPECT_EQ(driver::cmd_build_demos(opts), driver::kExitFatal);
    EXPECT_FALSE(std::filesystem::exists(opts.out_store));
}

TEST(CmdBuildDemos, DryRunWritesNothingAndCallsNothing) {
    driver::BuildDemosOptions opts;
    opts.train_path = testsupport::fixture_dir() / "train_spider.json";
    opts.format = corpus::DatasetFormat::spider;
    opts.db_root = env().db_root();
    opts.seeds_path = testsupport::fixture_dir() / "seeds.json";
    opts.out_store = env().scratch("built_stores") / "dry.jsonl";
    opts.templates_dir = testsupport::template_dir();
    opts.backend.kind = "mock"; // no script: any call would throw
    opts.dry_run = true;
    EXPECT_EQ(driver::cmd_build_demos(opts), driver::kExitOk);
    EXPECT_FALSE(std::filesystem::exists(opts.out_store));
}

TEST(CmdEval, ReportMatchesPrintedSummary) {
    auto run = base_run_options("cmdeval_run");
    ASSERT_EQ(driver::cmd_run(run), driver::kExitOk);

    driver::EvalCmdOptions opts;
    opts.run_dir = run.run_dir;
    opts.gold_path = testsupport::fixture_dir() / "dev_spider.json";
    opts.format = corpus::DatasetFormat::spider;
    opts.db_root = env().db_root();
    ASSERT_EQ(driver::cmd_eval(opts), driver::kExitOk);

    const auto report = json::parse(read_file(run.run_dir / "report.json"));
    EXPECT_DOUBLE_EQ(report.at("ex").get<double>(), 1.0);
    EXPECT_EQ(report.at("n").get<int>(), 10);
    EXPECT_TRUE(std::filesystem::exists(run.run_dir / "report.md"));
}

TEST(CmdEval, ScoresExternalPredictions) {
    const auto run_dir = env().scratch("cmdeval_external");
    const auto examples = corpus::load_dataset(testsupport::fixture_dir() / "dev_spider.json",
                                               corpus::DatasetFormat::spider);
    const auto predictions = run_dir / "external.sql";
    {
        std::ofstream out(predictions);
        for (const auto& ex : examples) out << *ex.gold_sql << '\n';
    }
    driver::EvalCmdOptions opts;
    opts.run_dir = run_dir;
    opts.gold_path = testsupport::fixture_dir() / "dev_spider.json";
    opts.format = corpus::DatasetFormat::spider;
    opts.db_root = env().db_root();
    opts.predictions = predictions;
    ASSERT_EQ(driver::cmd_eval(opts), driver::kExitOk);
    const auto report = json::parse(read_file(run_dir / "report.json"));
    EXPECT_DOUBLE_EQ(report.at("ex").get<double>(), 1.0);
}

TEST(CmdEval, MissingDbRootIsFatal) {
    driver::EvalCmdOptions opts;
    opts.run_dir = env().scratch("cmdeval_missing");
    opts.gold_path = testsupport::fixture_dir() / "dev_spider.json";
    opts.db_root = "/nonexistent/dbs";
    EXPECT_EQ(driver::cmd_eval(opts), driver::kExitFatal);
}

TEST(CmdSweepK, ProducesOneRunDirPerK) {
    driver::SweepOptions sweep;
    sweep.base = base_run_options("sweep_parent");
    sweep.k_min = 0;
    sweep.k_max = 2;
    ASSERT_EQ(driver::cmd_sweep_k(sweep), driver::kExitOk);
    for (int k = 0; k <= 2; ++k) {
        const auto dir = sweep.base.run_dir / ("k" + std::to_string(k));
        EXPECT_TRUE(std::filesystem::exists(dir / "predictions.sql")) << dir;
        const auto manifest = json::parse(read_file(dir / "run.json"));
        EXPECT_EQ(manifest.at("pipeline").at("k_fewshot").get<int>(), k);
    }
}

TEST(CliBinary, ConfigFileWithFlagPrecedence) {
    // end-to-end through argv parsing: config supplies the options, an
    // explicit flag overrides one of them
    auto base = base_run_options("cli_binary");
    const auto config = env().scratch("cli_binary") / "run.toml";
    {
        std::ofstream out(config);
        out << "[run]\n";
        out << "dev = \"" << base.dev_path.string() << "\"\n";
        out << "format = \"spider\"\n";
        out << "db-root = \"" << base.db_root.string() << "\"\n";
        out << "store = \"" << base.store_path.string() << "\"\n";
        out << "run-dir = \"" << (base.run_dir / "from_config").string() << "\"\n";
        out << "templates = \"" << base.templates_dir.string() << "\"\n";
        out << "backend = \"mock\"\n";
        out << "mock-script = \"" << base.backend.mock_script.string() << "\"\n";
        out << "k = 2\n";
    }
    auto run_cli = [&](const std::string& args) {
        const std::string cmd = std::string(TEXTSQL_CLI_BIN) + " " + args + " > /dev/null 2>&1";
        return std::system(cmd.c_str());
    };
    ASSERT_EQ(run_cli("run --config " + config.string()), 0);
    auto manifest = json::parse(read_file(base.run_dir / "from_config" / "run.json"));
    EXPECT_EQ(manifest.at("pipeline").at("k_fewshot").get<int>(), 2);

    const auto override_dir = base.run_dir / "overridden";
    ASSERT_EQ(run_cli("run --config " + config.string() + " --run-dir " + override_dir.string() +
                      " --k 1"),
              0);
    manifest = json::parse(read_file(override_dir / "run.json"));
    EXPECT_EQ(manifest.at("pipeline").at("k_fewshot").get<int>(), 1);

    // fatal config errors exit 1
    EXPECT_NE(run_cli("run --dev /nonexistent.json --db-root x --store y --run-dir z"), 0);
}

TEST(CmdShowTrace, PrintsSummary) {
    auto run = base_run_options("showtrace_run");
    ASSERT_EQ(driver::cmd_run(run), driver::kExitOk);
    driver::ShowTraceOptions opts;
    opts.run_dir = run.run_dir;
    opts.example_id = "0";
    EXPECT_EQ(driver::cmd_show_trace(opts), driver::kExitOk);
    opts.example_id = "does-not-exist";
    EXPECT_EQ(driver::cmd_show_trace(opts), driver::kExitFatal);
}
