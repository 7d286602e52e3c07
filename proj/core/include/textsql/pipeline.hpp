#pragma once

#include <textsql/corpus.hpp>
#include <textsql/llmio.hpp>
#include <textsql/prompts.hpp>
#include <textsql/repr.hpp>
#include <textsql/retrieval.hpp>
#include <textsql/sqlkit.hpp>

#include <nlohmann/json_fwd.hpp>

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <unordered_map>

namespace textsql::pipeline {

struct AblationFlags {
    bool disable_aqp = false;
    bool disable_csm = false;
    bool fewshot_full_schema = false;
    bool full_values = false;
    bool full_foreign_keys = false;
};

enum class Mode { staged, cot };

struct PipelineConfig {
    int k_fewshot = 3;
    int max_corrections = 3;
    std::chrono::milliseconds sql_timeout{30000};
    AblationFlags ablation;
    Mode mode = Mode::staged;
    int value_limit = 10;       // cap on "### Table Value" lines
    bool rerank_sql_demos = false; // re-rank SQL-step demos by markup-text similarity
    std::string model = "default";
    int max_tokens = 1024;
};

enum class TraceStatus { executed, exhausted, failed };

std::string_view trace_status_name(TraceStatus status);

struct SqlAttempt {
    std::string sql;
    sqlkit::ExecutionResult result;
};

/// Full per-question record of one pipeline run.
struct PipelineTrace {
    std::string example_id;
    std::string db_id;
    Mode mode = Mode::staged;
    std::optional<repr::MaskedQuestion> aqp;
    std::optional<repr::SchemaMarkup> csm;
    std::vector<prompts::PromptBundle> prompts; // generation + correction, in order
    std::vector<llmio::ChatResponse> responses;
    std::vector<SqlAttempt> sql_attempts;
    std::string final_sql;
    TraceStatus status = TraceStatus::failed;
    std::string failure_cause;
    std::vector<std::string> flags; // "aqp_fallback", "csm_fallback", "retrieval_key=..."
    int generation_llm_calls = 0;
    int correction_llm_calls = 0;
    long long gen_prompt_tokens = 0;
    long long total_prompt_tokens = 0;
    double wall_ms = 0;

    size_t generation_prompt_count() const;
    bool has_flag(std::string_view flag) const;
};

nlohmann::json trace_to_json(const PipelineTrace& trace);
PipelineTrace trace_from_json(const nlohmann::json& j);

/// Shared read-mostly state for a run. Schemas are cached per db_id; every
/// worker opens its own read-only connection.
class PipelineContext {
public:
    PipelineContext(const retrieval::DemoStore* store, const prompts::TemplateSet* templates,
                    llmio::LlmClient* llm, llmio::EmbedClient* embedder,
                    std::filesystem::path db_root);

    const corpus::DatabaseSchema& schema(const std::string& db_id);
    db::Connection open_db(const std::string& db_id) const;

    const retrieval::DemoStore& store() const { return *store_; }
    const prompts::TemplateSet& templates() const { return *templates_; }
    llmio::LlmClient& llm() const { return *llm_; }
    llmio::EmbedClient& embedder() const { return *embedder_; }
    const std::filesystem::path& db_root() const { return db_root_; }

    int sample_cap = 3; // per-column value examples fetched at schema load

private:
    const retrieval::DemoStore* store_;
    const prompts::TemplateSet* templates_;
    llmio::LlmClient* llm_;
    llmio::EmbedClient* embedder_;
    std::filesystem::path db_root_;
    std::mutex mutex_;
    std::unordered_map<std::string, std::shared_ptr<corpus::DatabaseSchema>> schemas_;
};

/// Masked-question stage: retrieve by question similarity, prompt, validate.
/// One re-prompt on validation failure, then an identity-mask fallback
/// (flagged "aqp_fallback" in the trace).
repr::MaskedQuestion generate_aqp(const corpus::Example& example, PipelineContext& ctx,
                                  const PipelineConfig& cfg, PipelineTrace& trace);

/// Markup stage: retrieve by mask similarity (question similarity under
/// disable_aqp), prompt, parse. One re-prompt with the parse error appended,
/// then a question-level fallback (all extras = leading schema tables).
/// The demos retrieved here are also the SQL step's few-shot examples; they
/// are returned through retrieved_out when requested.
repr::SchemaMarkup generate_csm(const corpus::Example& example,
                                const std::optional<repr::MaskedQuestion>& aqp,
                                PipelineContext& ctx, const PipelineConfig& cfg,
                                PipelineTrace& trace,
                                std::vector<retrieval::Scored>* retrieved_out = nullptr);

/// SQL stage: demos reused from the markup step (retrieved directly when that
/// step was ablated), value section built from database matches with
/// markup-linked columns first.
std::string generate_sql(const corpus::Example& example,
                         const std::optional<repr::MaskedQuestion>& aqp,
                         const std::optional<repr::SchemaMarkup>& csm,
                         const std::vector<retrieval::Scored>& demos_from_csm_step,
                         PipelineContext& ctx, const PipelineConfig& cfg, PipelineTrace& trace);

/// Execute-and-repair loop: returns once the SQL executes or the correction
/// budget is spent. Every attempt (initial included) is logged.
void correct_sql(const std::string& initial_sql, const corpus::Example& example,
                 PipelineContext& ctx, const PipelineConfig& cfg, PipelineTrace& trace);

PipelineTrace run_pipeline(const corpus::Example& example, PipelineContext& ctx,
                           const PipelineConfig& cfg);

/// Single-call variant: one retrieval by question similarity, one prompt
/// producing masked question, markup and SQL in labeled sections, then the
/// same correction loop.
PipelineTrace run_cot(const corpus::Example& example, PipelineContext& ctx,
                      const PipelineConfig& cfg);

/// Batch driver: traces in input order, one worker connection per thread,
/// per-example isolation (a failure never aborts the batch).
std::vector<PipelineTrace> run_batch(const std::vector<corpus::Example>& examples,
                                     PipelineContext& ctx, const PipelineConfig& cfg,
                                     int parallelism);

/// Single-SQL-statement extraction from a completion: fenced ```sql block
/// first, any fenced block starting with SELECT/WITH next, else the first
/// SELECT/WITH line through the first semicolon.
std::string extract_sql(const std::string& completion);

} // namespace textsql::pipeline
