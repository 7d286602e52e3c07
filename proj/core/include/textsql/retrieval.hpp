#pragma once

#include <textsql/corpus.hpp>
#include <textsql/llmio.hpp>
#include <textsql/prompts.hpp>
#include <textsql/sqlkit.hpp>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace textsql::retrieval {

/// A training pair enriched with its masked-question and markup texts plus
/// retrieval vectors.
struct Demonstration {
    std::string source_example_id;
    std::string db_id;
    std::string question;
    std::string aqp_text;
    std::string csm_text;
    std::string gold_sql;
    llmio::EmbeddingVector question_vec;
    llmio::EmbeddingVector aqp_vec;
    sqlkit::UsedSchema pruned_schema;
    bool is_seed = false;
};

struct DemoStore {
    std::vector<Demonstration> demos; // seeds included, flagged
    std::string embed_backend_id;
    int dim = 0;

    size_t size() const { return demos.size(); }
    size_t seed_count() const;
};

inline constexpr size_t kSeedCount = 5;

/// Hand-annotated bootstrap demonstration (no vectors yet).
struct SeedDemo {
    std::string id;
    std::string db_id;
    std::string question;
    std::string aqp_text;
    std::string csm_text;
    std::string gold_sql;
};

/// JSON array of exactly kSeedCount hand-annotated seeds.
std::vector<SeedDemo> load_seeds(const std::filesystem::path& path);

enum class SimilarityKey { question_vec, aqp_vec };

struct Scored {
    const Demonstration* demo;
    double similarity;
};

/// Exact cosine scan over the whole store, ranked non-increasing, ties broken
/// by source_example_id ascending; min(k, |store|) results. Demos whose
/// source_example_id equals exclude_source_id are skipped (leakage guard).
std::vector<Scored> top_k(const DemoStore& store, const llmio::EmbeddingVector& query, size_t k,
                          SimilarityKey key, const std::string& exclude_source_id = {});

/// Few-shot prompt order: ascending similarity, most similar example last.
std::vector<Scored> order_for_prompt(std::vector<Scored> ranked);

struct BuildReject {
    std::string example_id;
    std::string stage;  // "aqp" | "csm" | "schema"
    std::string reason;
};

struct BuildReport {
    size_t built = 0;
    std::vector<BuildReject> rejects;
};

using SchemaProvider = std::function<const corpus::DatabaseSchema&(const std::string& db_id)>;

struct BuildOptions {
    int k_fewshot = 3;
    std::string model = "default";
    int max_tokens = 512;
    bool dry_run = false; // render and count prompts, no LLM or embedding calls
    int parallelism = 1;
};

/// Construct the demonstration store from training pairs: masked question via
/// the LLM (gold SQL in the prompt) validated against the question, then the
/// markup via the LLM, parsed against the schema; question and mask get
/// embedded. Seeds are the few-shot examples for both calls. Per-item
/// failures are collected, not fatal.
DemoStore build_demonstrations(const std::vector<corpus::Example>& training,
                               const std::vector<SeedDemo>& seeds, const SchemaProvider& schemas,
                               llmio::LlmClient& llm, llmio::EmbedClient& embedder,
                               const prompts::TemplateSet& templates, const BuildOptions& options,
                               BuildReport* report);

/// JSONL with a versioned header line.
void save_store(const DemoStore& store, const std::filesystem::path& path);

/// Load and verify: vector dimensions, seed count, mask validation on a
/// sample. A non-empty expected_backend_id that differs from the stored one
/// logs a warning (vectors from another embedder will not match queries).
DemoStore load_store(const std::filesystem::path& path, const std::string& expected_backend_id = {});

} // namespace textsql::retrieval
