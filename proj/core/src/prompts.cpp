#include <textsql/prompts.hpp>
#include <textsql/digest.hpp>
#include <textsql/strutil.hpp>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#ifndef TEXTSQL_TEMPLATE_DIR
#define TEXTSQL_TEMPLATE_DIR ""
#endif

namespace textsql::prompts {

std::string_view prompt_kind_name(PromptKind kind) {
    switch (kind) {
        case PromptKind::aqp: return "aqp";
        case PromptKind::csm: return "csm";
        case PromptKind::sql: return "sql";
        case PromptKind::correction: return "correction";
        case PromptKind::cot: return "cot";
    }
    return "?";
}

namespace {

constexpr std::pair<PromptKind, const char*> kTemplateFiles[] = {
    {PromptKind::aqp, "aqp.txt"},       {PromptKind::csm, "csm.txt"},
    {PromptKind::sql, "sql.txt"},       {PromptKind::correction, "correction.txt"},
    {PromptKind::cot, "cot.txt"},
};

std::string read_template_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot open template " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    if (!text.empty() && text.back() == '\n') text.pop_back(); // POSIX trailing newline
    return text;
}

} // namespace

std::filesystem::path TemplateSet::default_dir() {
    if (const char* env = std::getenv("TEXTSQL_TEMPLATE_DIR"); env && *env) return env;
    return TEXTSQL_TEMPLATE_DIR;
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
    TemplateSet set;
    set.dir_ = dir;

    nlohmann::json checksums;
    const auto manifest = dir / "checksums.json";
    if (std::filesystem::exists(manifest)) {
        std::ifstream in(manifest);
        try {
            checksums = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            spdlog::warn("template checksum manifest {} unparseable: {}", manifest.string(), e.what());
        }
    } else {
        spdlog::warn("no checksums.json in {}; template content is unpinned", dir.string());
    }

    for (const auto& [kind, filename] : kTemplateFiles) {
        std::string text = read_template_file(dir / filename);
        if (checksums.contains(filename)) {
            const std::string expected = checksums[filename].get<std::string>();
            if (sha256_hex(text) != expected)
                spdlog::warn("template {} differs from its pinned checksum (edited?)", filename);
        }
        set.templates_[kind] = std::move(text);
    }
    return set;
}

const std::string& TemplateSet::text(PromptKind kind) const {
    auto it = templates_.find(kind);
    if (it == templates_.end())
        throw ConfigError("template not loaded: " + std::string(prompt_kind_name(kind)));
    return it->second;
}

int count_tokens(std::string_view text) {
    int count = 0;
    size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (str::is_space(c)) {
            ++i;
            continue;
        }
        if (str::is_word_char(c)) {
            while (i < text.size() && str::is_word_char(text[i])) ++i;
        } else {
            ++i;
        }
        ++count;
    }
    return count;
}

namespace {

/// Single-pass slot substitution: {name} markers in the template are replaced
/// by their values; replaced values are never rescanned, so braces inside
/// question text or SQL stay literal.
std::string fill_slots(const std::string& templ, const std::map<std::string, std::string>& slots,
                       std::map<std::string, std::string>* filled) {
    std::string out;
    out.reserve(templ.size() + 256);
    size_t i = 0;
    while (i < templ.size()) {
        if (templ[i] == '{') {
            const size_t close = templ.find('}', i + 1);
            if (close != std::string::npos) {
                const std::string name = templ.substr(i + 1, close - i - 1);
                auto it = slots.find(name);
                if (it != slots.end()) {
                    out += it->second;
                    if (filled) (*filled)[name] = "filled";
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(templ[i]);
        ++i;
    }
    if (filled) {
        for (const auto& [name, value] : slots) {
            if (!filled->count(name))
                throw ConfigError("template slot {" + name + "} missing from template text");
        }
    }
    return out;
}

std::string count_word(int n) {
    switch (n) {
        case 1: return "one";
        case 2: return "two";
        case 3: return "three";
        case 4: return "four";
        case 5: return "five";
        case 6: return "six";
        case 7: return "seven";
        case 8: return "eight";
        case 9: return "nine";
        default: return std::to_string(n);
    }
}

void replace_first(std::string& text, std::string_view from, std::string_view to) {
    const size_t at = text.find(from);
    if (at != std::string::npos) text.replace(at, from.size(), to);
}

/// The templates are written for exactly three examples. For other few-shot
/// counts the two count mentions are rewritten; for zero-shot the whole
/// examples block is dropped.
std::string adjust_example_count(std::string templ, size_t demo_count) {
    if (demo_count == 3) return templ;
    if (demo_count == 0) {
        replace_first(templ, " First, I will provide an instruction and three examples.",
                      " First, I will provide an instruction.");
        replace_first(templ, "Here are three examples:\n\n{ex}\n\n", "");
        replace_first(templ, "Refer to the examples and respond", "Respond");
        return templ;
    }
    const std::string word = count_word(static_cast<int>(demo_count));
    const std::string noun = demo_count == 1 ? "example" : "examples";
    replace_first(templ, "an instruction and three examples.",
                  "an instruction and " + word + " " + noun + ".");
    replace_first(templ, "Here are three examples:",
                  demo_count == 1 ? "Here is one example:" : "Here are " + word + " examples:");
    return templ;
}

std::string render_demo_block(const DemoBlock& demo, PromptKind kind) {
    std::string out;
    if (!demo.schema_text.empty()) out += "### Schema:\n" + demo.schema_text + "\n\n";
    out += "### Original Question: " + demo.question;
    out += "\n### Masked Question: " + demo.mask;
    if (kind == PromptKind::csm || kind == PromptKind::sql || kind == PromptKind::cot)
        out += "\n### Replaced Question: " + demo.replaced;
    if (kind == PromptKind::sql || kind == PromptKind::cot)
        out += "\n### Gold SQL: " + demo.sql;
    return out;
}

std::string render_demo_section(const std::vector<DemoBlock>& demos, PromptKind kind) {
    std::string out;
    for (size_t i = 0; i < demos.size(); ++i) {
        if (i) out += "\n\n";
        out += render_demo_block(demos[i], kind);
    }
    return out;
}

/// Insert "### Gold SQL: {gold_sql}" ahead of the answer header when a
/// build-time prompt carries the training pair's SQL.
std::string with_gold_sql_line(std::string templ, const char* answer_header) {
    const std::string marker = std::string("\n") + answer_header;
    replace_first(templ, marker, "\n### Gold SQL: {gold_sql}" + marker);
    return templ;
}

PromptBundle finish(PromptKind kind, std::string text, std::map<std::string, std::string> filled) {
    PromptBundle bundle;
    bundle.kind = kind;
    bundle.token_count = count_tokens(text);
    bundle.text = std::move(text);
    bundle.slots_filled = std::move(filled);
    return bundle;
}

} // namespace

std::string serialize_schema(const corpus::DatabaseSchema& schema,
                             const sqlkit::UsedSchema* restrict_to,
                             const std::vector<corpus::ValueMatch>* values) {
    if (restrict_to) {
        if (restrict_to->empty())
            throw ConfigError("serialize_schema: empty schema restriction");
        for (const auto& t : restrict_to->tables)
            if (!schema.find_table(t))
                throw ConfigError("serialize_schema: restriction names unknown table '" + t + "'");
        for (const auto& [t, c] : restrict_to->columns) {
            const corpus::Table* table = schema.find_table(t);
            if (!table || !table->find_column(c))
                throw ConfigError("serialize_schema: restriction names unknown column '" + t + "." +
                                  c + "'");
        }
    }

    auto table_included = [&](const corpus::Table& t) {
        if (!restrict_to) return true;
        if (restrict_to->has_table(t.name)) return true;
        for (const auto& [rt, rc] : restrict_to->columns)
            if (str::iequals(rt, t.name)) return true;
        return false;
    };
    auto column_included = [&](const corpus::Table& t, const corpus::Column& c) {
        if (!restrict_to) return true;
        bool any_for_table = false;
        for (const auto& [rt, rc] : restrict_to->columns) {
            if (!str::iequals(rt, t.name)) continue;
            any_for_table = true;
            if (str::iequals(rc, c.name)) return true;
        }
        return !any_for_table; // a table listed without columns keeps them all
    };
    auto value_examples = [&](const corpus::Table& t, const corpus::Column& c) {
        std::string out;
        if (!values) return out;
        for (const auto& v : *values) {
            if (!str::iequals(v.table, t.name) || !str::iequals(v.column, c.name)) continue;
            out += out.empty() ? "" : ", ";
            out += v.value;
        }
        return out;
    };

    std::string out;
    bool first = true;
    for (const auto& table : schema.tables) {
        if (!table_included(table)) continue;
        if (!first) out += "\n\n";
        first = false;
        out += "Table: " + table.name + "\nColumns:";
        for (const auto& col : table.columns) {
            if (!column_included(table, col)) continue;
            out += "\n  " + col.name;
            std::string attrs = col.declared_type;
            const bool is_pk = std::find_if(table.primary_key.begin(), table.primary_key.end(),
                                            [&](const std::string& pk) {
                                                return str::iequals(pk, col.name);
                                            }) != table.primary_key.end();
            if (is_pk) attrs += attrs.empty() ? "primary key" : ", primary key";
            if (!attrs.empty()) out += " (" + attrs + ")";
            if (const std::string ve = value_examples(table, col); !ve.empty())
                out += " Value examples: " + ve;
        }
    }
    if (restrict_to && first)
        throw ConfigError("serialize_schema: restriction matched no tables");
    return out;
}

std::string serialize_foreign_keys(const corpus::DatabaseSchema& schema,
                                   const std::set<std::string>* table_filter) {
    auto in_filter = [&](const std::string& name) {
        if (!table_filter) return true;
        for (const auto& t : *table_filter)
            if (str::iequals(t, name)) return true;
        return false;
    };
    std::string out;
    for (const auto& fk : schema.foreign_keys) {
        if (table_filter && !in_filter(fk.from_table) && !in_filter(fk.to_table)) continue;
        if (!out.empty()) out += "\n";
        out += fk.from_table + "." + fk.from_column + " = " + fk.to_table + "." + fk.to_column;
    }
    return out;
}

PromptBundle render_aqp_prompt(const TemplateSet& templates, const std::string& question,
                               const std::string& schema_text, const std::string& fk_text,
                               const std::vector<DemoBlock>& demos, const RenderOptions& opts) {
    std::string templ = adjust_example_count(templates.text(PromptKind::aqp), demos.size());
    std::map<std::string, std::string> slots = {
        {"schema", schema_text},
        {"db_fk", fk_text},
        {"question", question},
    };
    if (demos.empty()) {
        // {ex} was removed together with its header
    } else {
        slots["ex"] = render_demo_section(demos, PromptKind::aqp);
    }
    if (opts.gold_sql) {
        templ = with_gold_sql_line(templ, "### Masked Question:");
        slots["gold_sql"] = *opts.gold_sql;
    }
    std::map<std::string, std::string> filled;
    std::string text = fill_slots(templ, slots, &filled);
    return finish(PromptKind::aqp, std::move(text), std::move(filled));
}

PromptBundle render_csm_prompt(const TemplateSet& templates, const std::string& question,
                               const std::string& mask_text, const std::string& schema_text,
                               const std::string& fk_text, const std::vector<DemoBlock>& demos,
                               const RenderOptions& opts) {
    if (mask_text.empty()) throw ConfigError("render_csm_prompt: mask text is required");
    std::string templ = adjust_example_count(templates.text(PromptKind::csm), demos.size());
    std::map<std::string, std::string> slots = {
        {"schema", schema_text},
        {"db_fk", fk_text},
        {"question", question},
        {"mask", mask_text},
    };
    if (!demos.empty()) slots["ex"] = render_demo_section(demos, PromptKind::csm);
    if (opts.gold_sql) {
        templ = with_gold_sql_line(templ, "### Replaced Question:");
        slots["gold_sql"] = *opts.gold_sql;
    }
    std::map<std::string, std::string> filled;
    std::string text = fill_slots(templ, slots, &filled);
    return finish(PromptKind::csm, std::move(text), std::move(filled));
}

PromptBundle render_sql_prompt(const TemplateSet& templates, const std::string& question,
                               const std::string& mask_text, const std::string& csm_text,
                               const std::string& schema_text, const std::string& fk_text,
                               const std::string& value_text, const std::vector<DemoBlock>& demos) {
    std::string templ = adjust_example_count(templates.text(PromptKind::sql), demos.size());
    std::map<std::string, std::string> slots = {
        {"schema", schema_text}, {"db_fk", fk_text},   {"value", value_text},
        {"question", question},  {"mask", mask_text},  {"replace", csm_text},
    };
    if (!demos.empty()) slots["ex"] = render_demo_section(demos, PromptKind::sql);
    std::map<std::string, std::string> filled;
    std::string text = fill_slots(templ, slots, &filled);
    return finish(PromptKind::sql, std::move(text), std::move(filled));
}

PromptBundle render_correction_prompt(const TemplateSet& templates, const std::string& query,
                                      const std::string& evidence, const std::string& desc_str,
                                      const std::string& fk_str, const std::string& old_sql,
                                      const std::string& sqlite_error,
                                      const std::string& exception_class) {
    if (old_sql.empty()) throw ConfigError("render_correction_prompt: old SQL is required");
    if (sqlite_error.empty()) throw ConfigError("render_correction_prompt: error text is required");
    const std::map<std::string, std::string> slots = {
        {"query", query},
        {"evidence", evidence},
        {"desc_str", desc_str},
        {"fk_str", fk_str},
        {"sql", old_sql},
        {"sqlite_error", sqlite_error},
        {"exception_class", exception_class},
    };
    std::map<std::string, std::string> filled;
    std::string text = fill_slots(templates.text(PromptKind::correction), slots, &filled);
    return finish(PromptKind::correction, std::move(text), std::move(filled));
}

PromptBundle render_cot_prompt(const TemplateSet& templates, const std::string& question,
                               const std::string& schema_text, const std::string& fk_text,
                               const std::string& value_text, const std::vector<DemoBlock>& demos) {
    std::string templ = adjust_example_count(templates.text(PromptKind::cot), demos.size());
    std::map<std::string, std::string> slots = {
        {"schema", schema_text},
        {"db_fk", fk_text},
        {"value", value_text},
        {"question", question},
    };
    if (!demos.empty()) slots["ex"] = render_demo_section(demos, PromptKind::cot);
    std::map<std::string, std::string> filled;
    std::string text = fill_slots(templ, slots, &filled);
    return finish(PromptKind::cot, std::move(text), std::move(filled));
}

} // namespace textsql::prompts
