#pragma once

#include <textsql/corpus.hpp>
#include <textsql/eval.hpp>
#include <textsql/llmio.hpp>
#include <textsql/pipeline.hpp>
#include <textsql/retrieval.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace textsql::driver {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitCompletedWithFailures = 2;

struct BackendSpec {
    std::string kind = "mock"; // mock | replay | http
    std::string model = "default";
    std::string base_url;
    std::string api_key_env = "LLM_API_KEY";
    std::filesystem::path mock_script;   // JSON rules for the mock backend
    std::filesystem::path transcript_in; // replay source
    std::string embed_kind = "hash";     // hash | http | replay
    int embed_dim = 64;
    std::string embed_base_url;
    std::string embed_model;
};

struct Clients {
    std::shared_ptr<llmio::LlmClient> llm;
    std::shared_ptr<llmio::EmbedClient> embedder;
    std::shared_ptr<llmio::TranscriptWriter> transcript;
    std::shared_ptr<llmio::MockChatBackend> mock; // set for kind == mock
};

/// Wire up chat + embedding clients from a spec; cache_dir and record path
/// may be empty.
Clients make_clients(const BackendSpec& spec, const std::filesystem::path& cache_dir,
                     const std::filesystem::path& record_transcript);

struct BuildDemosOptions {
    std::filesystem::path train_path;
    corpus::DatasetFormat format = corpus::DatasetFormat::spider;
    std::filesystem::path db_root;
    std::filesystem::path seeds_path;
    std::filesystem::path out_store;
    std::filesystem::path templates_dir; // empty: default resolution
    std::filesystem::path cache_dir;
    std::filesystem::path record_transcript;
    BackendSpec backend;
    int k_fewshot = 3;
    int parallelism = 1;
    bool dry_run = false;
};

int cmd_build_demos(const BuildDemosOptions& opts);

struct RunOptions {
    std::filesystem::path dev_path;
    corpus::DatasetFormat format = corpus::DatasetFormat::spider;
    std::filesystem::path db_root;
    std::filesystem::path store_path;
    std::filesystem::path run_dir;
    std::filesystem::path templates_dir;
    std::filesystem::path cache_dir; // default: <run_dir>/cache
    std::filesystem::path record_transcript;
    BackendSpec backend;
    pipeline::PipelineConfig pipeline;
    int parallelism = 1;
    bool dry_run = false;
};

int cmd_run(const RunOptions& opts);

struct EvalCmdOptions {
    std::filesystem::path run_dir;
    std::filesystem::path gold_path;
    corpus::DatasetFormat format = corpus::DatasetFormat::spider;
    std::filesystem::path db_root;
    std::optional<std::filesystem::path> predictions; // score an external file instead of traces
    int ves_repeats = 0;                              // 0: no VES (deterministic report)
    int timeout_ms = 30000;
};

int cmd_eval(const EvalCmdOptions& opts);

struct SweepOptions {
    RunOptions base;
    int k_min = 0;
    int k_max = 5;
};

int cmd_sweep_k(const SweepOptions& opts);

struct ShowTraceOptions {
    std::filesystem::path run_dir;
    std::string example_id;
};

int cmd_show_trace(const ShowTraceOptions& opts);

/// predictions.sql: one whitespace-collapsed statement per line, dataset
/// order; empty line for examples without a prediction.
void write_predictions(const std::filesystem::path& run_dir,
                       const std::vector<pipeline::PipelineTrace>& traces);

/// run.json snapshot (no timestamps: replayed runs must be byte-stable).
void write_run_manifest(const RunOptions& opts);

} // namespace textsql::driver
