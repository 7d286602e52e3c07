#pragma once

#include <textsql/corpus.hpp>
#include <textsql/sqlkit.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace textsql::prompts {

enum class PromptKind { aqp, csm, sql, correction, cot };

std::string_view prompt_kind_name(PromptKind kind);

struct PromptBundle {
    PromptKind kind;
    std::string text;
    int token_count = 0;
    std::map<std::string, std::string> slots_filled; // slot name -> short source note
};

/// One few-shot example as it appears inside the {ex} block. Fields that a
/// template does not use are simply not rendered.
struct DemoBlock {
    std::string schema_text; // pruned schema of the demo's database
    std::string question;
    std::string mask;
    std::string replaced;
    std::string sql;
};

/// The five prompt templates, loaded from UTF-8 text files with {slot}
/// markers. checksums.json in the same directory pins the expected content;
/// edited templates load fine but log a warning.
class TemplateSet {
public:
    static TemplateSet load(const std::filesystem::path& dir);
    /// Resolution order: explicit path > TEXTSQL_TEMPLATE_DIR env var >
    /// compiled-in default directory.
    static std::filesystem::path default_dir();

    const std::string& text(PromptKind kind) const;
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::map<PromptKind, std::string> templates_;
    std::filesystem::path dir_;
};

/// Deterministic schema text: one block per table with its columns, declared
/// types, primary-key marks and optional per-column value examples. With
/// `restrict`, only the used tables appear; a restricted table with no listed
/// columns keeps all of them (pruning must never drop a needed element).
std::string serialize_schema(const corpus::DatabaseSchema& schema,
                             const sqlkit::UsedSchema* restrict_to = nullptr,
                             const std::vector<corpus::ValueMatch>* values = nullptr);

/// "from.col = to.col" lines. With a table filter, keeps keys where either
/// endpoint table is in the filter.
std::string serialize_foreign_keys(const corpus::DatabaseSchema& schema,
                                   const std::set<std::string>* table_filter = nullptr);

struct RenderOptions {
    /// Build-time prompts carry the training pair's gold SQL.
    std::optional<std::string> gold_sql;
};

PromptBundle render_aqp_prompt(const TemplateSet& templates, const std::string& question,
                               const std::string& schema_text, const std::string& fk_text,
                               const std::vector<DemoBlock>& demos, const RenderOptions& opts = {});

PromptBundle render_csm_prompt(const TemplateSet& templates, const std::string& question,
                               const std::string& mask_text, const std::string& schema_text,
                               const std::string& fk_text, const std::vector<DemoBlock>& demos,
                               const RenderOptions& opts = {});

PromptBundle render_sql_prompt(const TemplateSet& templates, const std::string& question,
                               const std::string& mask_text, const std::string& csm_text,
                               const std::string& schema_text, const std::string& fk_text,
                               const std::string& value_text, const std::vector<DemoBlock>& demos);

PromptBundle render_correction_prompt(const TemplateSet& templates, const std::string& query,
                                      const std::string& evidence, const std::string& desc_str,
                                      const std::string& fk_str, const std::string& old_sql,
                                      const std::string& sqlite_error,
                                      const std::string& exception_class);

PromptBundle render_cot_prompt(const TemplateSet& templates, const std::string& question,
                               const std::string& schema_text, const std::string& fk_text,
                               const std::string& value_text, const std::vector<DemoBlock>& demos);

/// Deterministic token count: a token is a maximal run of [A-Za-z0-9_] or a
/// single other non-whitespace character. Backend-reported counts are
/// preferred where available; this is the reproducible stand-in.
int count_tokens(std::string_view text);

} // namespace textsql::prompts
