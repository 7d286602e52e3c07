#include <textsql/prompts.hpp>
#include <textsql/sqlkit.hpp>

#include <benchmark/benchmark.h>

using namespace textsql;

namespace {

corpus::DatabaseSchema bench_schema() {
    corpus::DatabaseSchema s;
    s.db_id = "bench";
    for (int t = 0; t < 12; ++t) {
        corpus::Table table;
        table.name = "table_" + std::to_string(t);
        for (int c = 0; c < 10; ++c)
            table.columns.push_back({"col_" + std::to_string(c), "TEXT", {}});
        table.primary_key = {"col_0"};
        s.tables.push_back(std::move(table));
    }
    return s;
}

const char* kQuery =
    "SELECT T1.col_1, T2.col_2, count(*) FROM table_0 AS T1 "
    "JOIN table_1 AS T2 ON T1.col_0 = T2.col_3 "
    "WHERE T1.col_4 = 'some literal' AND T2.col_5 > 42 "
    "GROUP BY T1.col_1, T2.col_2 ORDER BY count(*) DESC LIMIT 10";

} // namespace

static void BM_ExtractSchemaElements(benchmark::State& state) {
    const auto schema = bench_schema();
    for (auto _ : state) {
        auto used = sqlkit::extract_schema_elements(kQuery, schema);
        benchmark::DoNotOptimize(used);
    }
}
BENCHMARK(BM_ExtractSchemaElements);

static void BM_OracleMask(benchmark::State& state) {
    const auto schema = bench_schema();
    const std::string question =
        "show col_1 and col_2 of table_0 joined with table_1 where col_4 is some literal";
    for (auto _ : state) {
        auto masked = sqlkit::oracle_mask(question, kQuery, schema);
        benchmark::DoNotOptimize(masked);
    }
}
BENCHMARK(BM_OracleMask);

static void BM_SerializeSchema(benchmark::State& state) {
    const auto schema = bench_schema();
    for (auto _ : state) {
        auto text = prompts::serialize_schema(schema);
        benchmark::DoNotOptimize(text);
    }
}
BENCHMARK(BM_SerializeSchema);

static void BM_CountTokens(benchmark::State& state) {
    const auto schema = bench_schema();
    const std::string text = prompts::serialize_schema(schema);
    for (auto _ : state) {
        benchmark::DoNotOptimize(prompts::count_tokens(text));
    }
    state.SetBytesProcessed(state.iterations() * static_cast<int64_t>(text.size()));
}
BENCHMARK(BM_CountTokens);

BENCHMARK_MAIN();
