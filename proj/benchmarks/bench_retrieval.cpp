#include <textsql/retrieval.hpp>

#include <benchmark/benchmark.h>

#include <random>

using namespace textsql;

namespace {

retrieval::DemoStore make_store(size_t count, size_t dim) {
    std::mt19937 rng(11);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    retrieval::DemoStore store;
    store.dim = static_cast<int>(dim);
    for (size_t i = 0; i < count; ++i) {
        retrieval::Demonstration d;
        d.source_example_id = "d" + std::to_string(i);
        d.question_vec.resize(dim);
        for (auto& x : d.question_vec) x = normal(rng);
        d.aqp_vec = d.question_vec;
        store.demos.push_back(std::move(d));
    }
    return store;
}

} // namespace

static void BM_TopK(benchmark::State& state) {
    const auto store = make_store(static_cast<size_t>(state.range(0)), 64);
    std::mt19937 rng(12);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    llmio::EmbeddingVector query(64);
    for (auto& x : query) x = normal(rng);

    for (auto _ : state) {
        auto top = retrieval::top_k(store, query, 5, retrieval::SimilarityKey::question_vec);
        benchmark::DoNotOptimize(top);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TopK)->Arg(1000)->Arg(10000);

static void BM_HashEmbed(benchmark::State& state) {
    llmio::HashEmbedBackend backend(64);
    const std::vector<std::string> texts = {
        "How many singers are there in the database?",
        "List the name and capacity of every stadium ordered by capacity.",
    };
    for (auto _ : state) {
        auto vecs = backend.embed(texts);
        benchmark::DoNotOptimize(vecs);
    }
    state.SetItemsProcessed(state.iterations() * texts.size());
}
BENCHMARK(BM_HashEmbed);

BENCHMARK_MAIN();
