#include <textsql/pipeline.hpp>
#include <textsql/strutil.hpp>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <thread>

using nlohmann::json;

namespace textsql::pipeline {

std::string_view trace_status_name(TraceStatus status) {
    switch (status) {
        case TraceStatus::executed: return "executed";
        case TraceStatus::exhausted: return "exhausted";
        case TraceStatus::failed: return "failed";
    }
    return "?";
}

size_t PipelineTrace::generation_prompt_count() const {
    size_t n = 0;
    for (const auto& p : prompts)
        if (p.kind != prompts::PromptKind::correction) ++n;
    return n;
}

bool PipelineTrace::has_flag(std::string_view flag) const {
    for (const auto& f : flags)
        if (f == flag) return true;
    return false;
}

PipelineContext::PipelineContext(const retrieval::DemoStore* store,
                                 const prompts::TemplateSet* templates, llmio::LlmClient* llm,
                                 llmio::EmbedClient* embedder, std::filesystem::path db_root)
    : store_(store), templates_(templates), llm_(llm), embedder_(embedder),
      db_root_(std::move(db_root)) {}

const corpus::DatabaseSchema& PipelineContext::schema(const std::string& db_id) {
    {
        std::lock_guard lock(mutex_);
        if (auto it = schemas_.find(db_id); it != schemas_.end()) return *it->second;
    }
    auto loaded = std::make_shared<corpus::DatabaseSchema>(
        corpus::load_schema(db_root_, db_id, sample_cap));
    std::lock_guard lock(mutex_);
    auto [it, inserted] = schemas_.emplace(db_id, std::move(loaded));
    return *it->second;
}

db::Connection PipelineContext::open_db(const std::string& db_id) const {
    return db::Connection::open_readonly(corpus::database_path(db_root_, db_id));
}

namespace {

// Token accounting: backend-reported prompt tokens when present, the
// deterministic local count otherwise. Generation totals always use the local
// count so staged and single-call modes stay comparable.
llmio::ChatResponse call_llm(PipelineContext& ctx, const PipelineConfig& cfg, PipelineTrace& trace,
                             prompts::PromptBundle bundle) {
    const bool correction = bundle.kind == prompts::PromptKind::correction;
    llmio::ChatRequest req;
    req.prompt = bundle.text;
    req.model = cfg.model;
    req.temperature = 0.0;
    req.max_tokens = cfg.max_tokens;

    auto resp = ctx.llm().complete(req);
    trace.total_prompt_tokens += resp.prompt_tokens > 0 ? resp.prompt_tokens : bundle.token_count;
    if (correction) {
        ++trace.correction_llm_calls;
    } else {
        ++trace.generation_llm_calls;
        trace.gen_prompt_tokens += bundle.token_count;
    }
    trace.prompts.push_back(std::move(bundle));
    trace.responses.push_back(resp);
    return resp;
}

prompts::PromptBundle retry_bundle(const prompts::PromptBundle& original,
                                   const std::string& bad_response, const std::string& error,
                                   std::string_view answer_header) {
    prompts::PromptBundle bundle;
    bundle.kind = original.kind;
    bundle.slots_filled = original.slots_filled;
    bundle.slots_filled["retry"] = "validation failure";
    bundle.text = original.text + " " + bad_response +
                  "\n\nThat response is invalid: " + error +
                  "\nRespond again, with no explanation.\n" + std::string(answer_header);
    bundle.token_count = prompts::count_tokens(bundle.text);
    return bundle;
}

std::vector<prompts::DemoBlock> demo_blocks(PipelineContext& ctx, const PipelineConfig& cfg,
                                            const std::vector<retrieval::Scored>& ordered) {
    std::vector<prompts::DemoBlock> blocks;
    blocks.reserve(ordered.size());
    for (const auto& s : ordered) {
        const corpus::DatabaseSchema& schema = ctx.schema(s.demo->db_id);
        prompts::DemoBlock block;
        const bool prune = !cfg.ablation.fewshot_full_schema && !s.demo->pruned_schema.empty();
        block.schema_text =
            prompts::serialize_schema(schema, prune ? &s.demo->pruned_schema : nullptr);
        block.question = s.demo->question;
        block.mask = s.demo->aqp_text;
        block.replaced = s.demo->csm_text;
        block.sql = s.demo->gold_sql;
        blocks.push_back(std::move(block));
    }
    return blocks;
}

std::vector<retrieval::Scored> retrieve(PipelineContext& ctx, const PipelineConfig& cfg,
                                        const std::string& query_text,
                                        retrieval::SimilarityKey key,
                                        const std::string& exclude_id) {
    if (cfg.k_fewshot <= 0 || ctx.store().demos.empty()) return {};
    const auto query_vec = ctx.embedder().embed_one(query_text);
    auto ranked = retrieval::top_k(ctx.store(), query_vec, static_cast<size_t>(cfg.k_fewshot), key,
                                   exclude_id);
    return retrieval::order_for_prompt(std::move(ranked));
}

std::string value_section(PipelineContext& ctx, const PipelineConfig& cfg,
                          const corpus::Example& example,
                          const std::optional<repr::SchemaMarkup>& csm) {
    const corpus::DatabaseSchema& schema = ctx.schema(example.db_id);
    auto conn = ctx.open_db(example.db_id);
    // over-fetch, then apply markup emphasis before the cap
    const size_t pool = std::max<size_t>(static_cast<size_t>(cfg.value_limit) * 4, 32);
    auto matches = corpus::match_question_values(example.question, schema, conn, pool);

    if (csm && !cfg.ablation.full_values) {
        const auto linked = repr::linked_schema(*csm);
        std::stable_partition(matches.begin(), matches.end(), [&](const corpus::ValueMatch& m) {
            return linked.has_column(m.table, m.column) ||
                   (linked.columns.empty() && linked.has_table(m.table));
        });
    }
    if (matches.size() > static_cast<size_t>(cfg.value_limit))
        matches.resize(static_cast<size_t>(cfg.value_limit));

    std::string out;
    for (const auto& m : matches) {
        if (!out.empty()) out += "\n";
        out += m.table + "." + m.column + " = '" + m.value + "'";
    }
    return out;
}

sqlkit::UsedSchema restriction_from_linked(const repr::LinkedSchema& linked) {
    sqlkit::UsedSchema used;
    used.tables.assign(linked.tables.begin(), linked.tables.end());
    used.columns.assign(linked.columns.begin(), linked.columns.end());
    return used;
}

std::vector<corpus::ValueMatch> sample_value_matches(const corpus::DatabaseSchema& schema) {
    std::vector<corpus::ValueMatch> out;
    for (const auto& t : schema.tables)
        for (const auto& c : t.columns)
            for (const auto& v : c.sample_values)
                out.push_back({t.name, c.name, value_to_prompt_text(v)});
    return out;
}

} // namespace

namespace {

bool starts_with_read_keyword(const std::string& s) {
    const std::string head = str::lower(s.substr(0, 7));
    if (head.rfind("select", 0) == 0 && (s.size() == 6 || !str::is_word_char(s[6]))) return true;
    if (head.rfind("with", 0) == 0 && (s.size() == 4 || !str::is_word_char(s[4]))) return true;
    return false;
}

} // namespace

std::string extract_sql(const std::string& completion) {
    auto first_statement = [](std::string text) {
        text = str::trim(text);
        const size_t semi = text.find(';');
        if (semi != std::string::npos) text = text.substr(0, semi);
        return str::trim(text);
    };

    // fenced block labeled sql
    size_t at = str::ifind(completion, "```sql");
    if (at != std::string::npos) {
        const size_t start = completion.find('\n', at);
        if (start != std::string::npos) {
            const size_t end = completion.find("```", start);
            if (end != std::string::npos) return first_statement(completion.substr(start, end - start));
        }
    }
    // any fenced block that starts with a read statement (a language-tag line
    // other than sql is dropped first)
    at = completion.find("```");
    while (at != std::string::npos) {
        const size_t start = at + 3;
        const size_t end = completion.find("```", start);
        if (end == std::string::npos) break;
        std::string inner = str::trim(completion.substr(start, end - start));
        if (!inner.empty() && !starts_with_read_keyword(inner)) {
            const size_t nl = inner.find('\n');
            if (nl != std::string::npos) inner = str::trim(inner.substr(nl + 1));
        }
        if (starts_with_read_keyword(inner)) return first_statement(inner);
        at = completion.find("```", end + 3);
    }
    // first SELECT/WITH through the first semicolon or end of text
    const std::string folded = str::lower(completion);
    size_t best = std::string::npos;
    for (std::string_view head : {"select", "with"}) {
        size_t pos = folded.find(head);
        while (pos != std::string::npos) {
            const size_t end = pos + head.size();
            const bool left_ok = pos == 0 || !str::is_word_char(completion[pos - 1]);
            const bool right_ok = end >= completion.size() || !str::is_word_char(completion[end]);
            if (left_ok && right_ok) {
                best = std::min(best, pos);
                break;
            }
            pos = folded.find(head, pos + 1);
        }
    }
    if (best == std::string::npos) return "";
    return first_statement(completion.substr(best));
}

repr::MaskedQuestion generate_aqp(const corpus::Example& example, PipelineContext& ctx,
                                  const PipelineConfig& cfg, PipelineTrace& trace) {
    const corpus::DatabaseSchema& schema = ctx.schema(example.db_id);
    const std::string schema_text = prompts::serialize_schema(schema);
    const std::string fk_text = prompts::serialize_foreign_keys(schema);

    const auto ordered = retrieve(ctx, cfg, example.question, retrieval::SimilarityKey::question_vec,
                                  example.id);
    auto bundle = prompts::render_aqp_prompt(ctx.templates(), example.question, schema_text, fk_text,
                                             demo_blocks(ctx, cfg, ordered));
    auto resp = call_llm(ctx, cfg, trace, bundle);
    std::string masked = str::trim(resp.text);
    try {
        return repr::validate_mask(example.question, masked);
    } catch (const repr::MaskError& first_error) {
        auto retry = retry_bundle(bundle, masked, first_error.what(), "### Masked Question:");
        resp = call_llm(ctx, cfg, trace, retry);
        masked = str::trim(resp.text);
        try {
            return repr::validate_mask(example.question, masked);
        } catch (const repr::MaskError&) {
            trace.flags.push_back("aqp_fallback");
            return repr::validate_mask(example.question, example.question); // identity mask
        }
    }
}

repr::SchemaMarkup generate_csm(const corpus::Example& example,
                                const std::optional<repr::MaskedQuestion>& aqp,
                                PipelineContext& ctx, const PipelineConfig& cfg,
                                PipelineTrace& trace,
                                std::vector<retrieval::Scored>* retrieved_out) {
    const corpus::DatabaseSchema& schema = ctx.schema(example.db_id);
    const std::string schema_text = prompts::serialize_schema(schema);
    const std::string fk_text = prompts::serialize_foreign_keys(schema);

    const bool by_question = !aqp.has_value();
    const std::string& query_text = by_question ? example.question : aqp->text;
    const auto key =
        by_question ? retrieval::SimilarityKey::question_vec : retrieval::SimilarityKey::aqp_vec;
    trace.flags.push_back(std::string("csm_retrieval_key=") +
                          (by_question ? "question_vec" : "aqp_vec"));

    const auto ordered = retrieve(ctx, cfg, query_text, key, example.id);
    if (retrieved_out) *retrieved_out = ordered;

    const std::string& mask_text = aqp ? aqp->text : example.question;
    auto bundle = prompts::render_csm_prompt(ctx.templates(), example.question, mask_text,
                                             schema_text, fk_text, demo_blocks(ctx, cfg, ordered));
    auto resp = call_llm(ctx, cfg, trace, bundle);
    std::string markup_text = str::trim(resp.text);
    try {
        return repr::parse_csm(markup_text, schema);
    } catch (const repr::CsmParseError& first_error) {
        auto retry = retry_bundle(bundle, markup_text, first_error.what(), "### Replaced Question:");
        resp = call_llm(ctx, cfg, trace, retry);
        markup_text = str::trim(resp.text);
        try {
            return repr::parse_csm(markup_text, schema);
        } catch (const repr::CsmParseError&) {
            // question-level fallback: no span links, leading tables as extras
            trace.flags.push_back("csm_fallback");
            repr::SchemaMarkup fallback;
            fallback.text = markup_text;
            for (const auto& t : schema.tables) {
                if (fallback.extras.size() >= repr::kMaxExtras) break;
                fallback.extras.push_back(t.name);
            }
            return fallback;
        }
    }
}

std::string generate_sql(const corpus::Example& example,
                         const std::optional<repr::MaskedQuestion>& aqp,
                         const std::optional<repr::SchemaMarkup>& csm,
                         const std::vector<retrieval::Scored>& demos_from_csm_step,
                         PipelineContext& ctx, const PipelineConfig& cfg, PipelineTrace& trace) {
    const corpus::DatabaseSchema& schema = ctx.schema(example.db_id);
    const std::string schema_text = prompts::serialize_schema(schema);

    std::vector<retrieval::Scored> ordered = demos_from_csm_step;
    if (cfg.rerank_sql_demos && csm) {
        ordered = retrieve(ctx, cfg, csm->text, retrieval::SimilarityKey::aqp_vec, example.id);
        trace.flags.push_back("sql_retrieval_key=csm_text");
    } else if (ordered.empty()) {
        // markup step ablated: retrieve here with the best available key
        if (aqp) {
            ordered = retrieve(ctx, cfg, aqp->text, retrieval::SimilarityKey::aqp_vec, example.id);
            trace.flags.push_back("sql_retrieval_key=aqp_vec");
        } else {
            ordered = retrieve(ctx, cfg, example.question, retrieval::SimilarityKey::question_vec,
                               example.id);
            trace.flags.push_back("sql_retrieval_key=question_vec");
        }
    }

    std::string fk_text;
    if (csm && !cfg.ablation.full_foreign_keys) {
        const auto linked = repr::linked_schema(*csm);
        fk_text = linked.tables.empty()
                      ? prompts::serialize_foreign_keys(schema)
                      : prompts::serialize_foreign_keys(schema, &linked.tables);
    } else {
        fk_text = prompts::serialize_foreign_keys(schema);
    }

    const std::string value_text = value_section(ctx, cfg, example, csm);
    auto bundle = prompts::render_sql_prompt(ctx.templates(), example.question,
                                             aqp ? aqp->text : "", csm ? csm->text : "",
                                             schema_text, fk_text, value_text,
                                             demo_blocks(ctx, cfg, ordered));
    const auto resp = call_llm(ctx, cfg, trace, bundle);
    return extract_sql(resp.text);
}

void correct_sql(const std::string& initial_sql, const corpus::Example& example,
                 PipelineContext& ctx, const PipelineConfig& cfg, PipelineTrace& trace) {
    const corpus::DatabaseSchema& schema = ctx.schema(example.db_id);
    auto conn = ctx.open_db(example.db_id);

    std::string current = initial_sql;
    auto exec = sqlkit::execute_sql(conn, current, cfg.sql_timeout);
    trace.sql_attempts.push_back({current, exec});

    int corrections = 0;
    while (!exec.ok() && corrections < cfg.max_corrections) {
        std::string desc_str;
        std::string fk_str;
        const auto samples = sample_value_matches(schema);
        if (trace.csm) {
            const auto linked = repr::linked_schema(*trace.csm);
            if (!linked.empty()) {
                const auto restriction = restriction_from_linked(linked);
                desc_str = prompts::serialize_schema(schema, &restriction, &samples);
                fk_str = prompts::serialize_foreign_keys(schema, &linked.tables);
            }
        }
        if (desc_str.empty()) {
            desc_str = prompts::serialize_schema(schema, nullptr, &samples);
            fk_str = prompts::serialize_foreign_keys(schema);
        }

        auto bundle = prompts::render_correction_prompt(
            ctx.templates(), example.question, example.evidence.value_or(""), desc_str, fk_str,
            current, exec.error_message, exec.error_class);
        const auto resp = call_llm(ctx, cfg, trace, bundle);
        ++corrections;

        const std::string next_sql = extract_sql(resp.text);
        if (next_sql.empty()) {
            trace.status = TraceStatus::failed;
            trace.failure_cause = "correction produced no SQL";
            trace.final_sql = current;
            return;
        }
        current = next_sql;
        exec = sqlkit::execute_sql(conn, current, cfg.sql_timeout);
        trace.sql_attempts.push_back({current, exec});
    }

    trace.final_sql = current;
    trace.status = exec.ok() ? TraceStatus::executed : TraceStatus::exhausted;
    if (!exec.ok()) trace.failure_cause = "correction budget exhausted: " + exec.error_message;
}

PipelineTrace run_pipeline(const corpus::Example& example, PipelineContext& ctx,
                           const PipelineConfig& cfg) {
    PipelineTrace trace;
    trace.example_id = example.id;
    trace.db_id = example.db_id;
    trace.mode = Mode::staged;
    const auto t0 = std::chrono::steady_clock::now();

    try {
        std::optional<repr::MaskedQuestion> aqp;
        std::optional<repr::SchemaMarkup> csm;
        std::vector<retrieval::Scored> csm_demos;

        if (!cfg.ablation.disable_aqp) {
            aqp = generate_aqp(example, ctx, cfg, trace);
            trace.aqp = aqp;
        }
        if (!cfg.ablation.disable_csm) {
            csm = generate_csm(example, aqp, ctx, cfg, trace, &csm_demos);
            trace.csm = csm;
        }
        const std::string sql = generate_sql(example, aqp, csm, csm_demos, ctx, cfg, trace);
        if (sql.empty()) {
            trace.status = TraceStatus::failed;
            trace.failure_cause = "generation produced no SQL";
        } else {
            correct_sql(sql, example, ctx, cfg, trace);
        }
    } catch (const std::exception& e) {
        trace.status = TraceStatus::failed;
        trace.failure_cause = e.what();
    }

    trace.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return trace;
}

namespace {

struct CotSections {
    std::string mask;
    std::string replaced;
    std::string sql;
};

constexpr std::string_view kMaskHeader = "### Masked Question:";
constexpr std::string_view kReplacedHeader = "### Replaced Question:";
constexpr std::string_view kSqlHeader = "### Gold SQL:";

std::optional<CotSections> parse_cot_response(const std::string& text, std::string* missing) {
    const size_t replaced_at = text.find(kReplacedHeader);
    if (replaced_at == std::string::npos) {
        *missing = std::string(kReplacedHeader);
        return std::nullopt;
    }
    const size_t sql_at = text.find(kSqlHeader, replaced_at);
    if (sql_at == std::string::npos) {
        *missing = std::string(kSqlHeader);
        return std::nullopt;
    }
    CotSections out;
    std::string head = text.substr(0, replaced_at);
    const size_t mask_label = head.find(kMaskHeader);
    if (mask_label != std::string::npos) head = head.substr(mask_label + kMaskHeader.size());
    out.mask = str::trim(head);
    out.replaced =
        str::trim(text.substr(replaced_at + kReplacedHeader.size(),
                              sql_at - replaced_at - kReplacedHeader.size()));
    out.sql = str::trim(text.substr(sql_at + kSqlHeader.size()));
    if (out.mask.empty()) {
        *missing = std::string(kMaskHeader);
        return std::nullopt;
    }
    return out;
}

} // namespace

PipelineTrace run_cot(const corpus::Example& example, PipelineContext& ctx,
                      const PipelineConfig& cfg) {
    PipelineTrace trace;
    trace.example_id = example.id;
    trace.db_id = example.db_id;
    trace.mode = Mode::cot;
    const auto t0 = std::chrono::steady_clock::now();

    try {
        const corpus::DatabaseSchema& schema = ctx.schema(example.db_id);
        const std::string schema_text = prompts::serialize_schema(schema);
        const std::string fk_text = prompts::serialize_foreign_keys(schema);
        const std::string value_text = value_section(ctx, cfg, example, std::nullopt);

        const auto ordered = retrieve(ctx, cfg, example.question,
                                      retrieval::SimilarityKey::question_vec, example.id);
        auto bundle = prompts::render_cot_prompt(ctx.templates(), example.question, schema_text,
                                                 fk_text, value_text,
                                                 demo_blocks(ctx, cfg, ordered));
        const auto resp = call_llm(ctx, cfg, trace, bundle);

        std::string missing;
        const auto sections = parse_cot_response(resp.text, &missing);
        if (!sections) {
            trace.status = TraceStatus::failed;
            trace.failure_cause = "structured response missing section '" + missing + "'";
        } else {
            try {
                trace.aqp = repr::validate_mask(example.question, sections->mask);
            } catch (const repr::MaskError&) {
                trace.flags.push_back("aqp_fallback");
                trace.aqp = repr::validate_mask(example.question, example.question);
            }
            try {
                trace.csm = repr::parse_csm(sections->replaced, schema);
            } catch (const repr::CsmParseError&) {
                trace.flags.push_back("csm_fallback");
                repr::SchemaMarkup fallback;
                fallback.text = sections->replaced;
                trace.csm = fallback;
            }
            const std::string sql = extract_sql(sections->sql);
            if (sql.empty()) {
                trace.status = TraceStatus::failed;
                trace.failure_cause = "generation produced no SQL";
            } else {
                correct_sql(sql, example, ctx, cfg, trace);
            }
        }
    } catch (const std::exception& e) {
        trace.status = TraceStatus::failed;
        trace.failure_cause = e.what();
    }

    trace.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return trace;
}

std::vector<PipelineTrace> run_batch(const std::vector<corpus::Example>& examples,
                                     PipelineContext& ctx, const PipelineConfig& cfg,
                                     int parallelism) {
    if (parallelism < 1) throw ConfigError("run_batch: parallelism must be >= 1");
    if (cfg.k_fewshot < 0) throw ConfigError("run_batch: k_fewshot must be >= 0");
    if (cfg.max_corrections < 0) throw ConfigError("run_batch: max_corrections must be >= 0");
    std::vector<PipelineTrace> traces(examples.size());

    auto run_one = [&](size_t i) {
        try {
            traces[i] = cfg.mode == Mode::cot ? run_cot(examples[i], ctx, cfg)
                                              : run_pipeline(examples[i], ctx, cfg);
        } catch (const std::exception& e) {
            PipelineTrace t;
            t.example_id = examples[i].id;
            t.db_id = examples[i].db_id;
            t.mode = cfg.mode;
            t.status = TraceStatus::failed;
            t.failure_cause = e.what();
            traces[i] = std::move(t);
        }
    };

    if (parallelism == 1 || examples.size() <= 1) {
        for (size_t i = 0; i < examples.size(); ++i) run_one(i);
        return traces;
    }

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= examples.size()) break;
            run_one(i);
        }
    };
    std::vector<std::thread> pool;
    const int workers = std::min<int>(parallelism, static_cast<int>(examples.size()));
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return traces;
}

// ---------------------------------------------------------------------------
// Trace serialization

namespace {

const char* kind_name(repr::PlaceholderKind kind) {
    switch (kind) {
        case repr::PlaceholderKind::table: return "table";
        case repr::PlaceholderKind::column: return "column";
        case repr::PlaceholderKind::value: return "value";
    }
    return "?";
}

repr::PlaceholderKind kind_from_name(const std::string& name) {
    if (name == "table") return repr::PlaceholderKind::table;
    if (name == "column") return repr::PlaceholderKind::column;
    return repr::PlaceholderKind::value;
}

} // namespace

json trace_to_json(const PipelineTrace& trace) {
    json j;
    j["example_id"] = trace.example_id;
    j["db_id"] = trace.db_id;
    j["mode"] = trace.mode == Mode::cot ? "cot" : "staged";
    j["status"] = std::string(trace_status_name(trace.status));
    j["failure_cause"] = trace.failure_cause;
    j["final_sql"] = trace.final_sql;
    j["flags"] = trace.flags;
    j["generation_llm_calls"] = trace.generation_llm_calls;
    j["correction_llm_calls"] = trace.correction_llm_calls;
    j["gen_prompt_tokens"] = trace.gen_prompt_tokens;
    j["total_prompt_tokens"] = trace.total_prompt_tokens;
    j["wall_ms"] = trace.wall_ms;

    if (trace.aqp) {
        json alignment = json::array();
        for (const auto& e : trace.aqp->alignment)
            alignment.push_back({{"span", e.span},
                                 {"kind", kind_name(e.kind)},
                                 {"begin", e.begin},
                                 {"end", e.end}});
        j["aqp"] = {{"text", trace.aqp->text}, {"alignment", alignment}};
    }
    if (trace.csm) {
        json links = json::array();
        for (const auto& l : trace.csm->links)
            links.push_back({{"span", l.span},
                             {"kind", kind_name(l.kind)},
                             {"table", l.table},
                             {"column", l.column},
                             {"literal", l.literal}});
        j["csm"] = {{"text", trace.csm->text}, {"links", links}, {"extras", trace.csm->extras}};
    }

    json prompts_json = json::array();
    for (const auto& p : trace.prompts)
        prompts_json.push_back({{"kind", std::string(prompts::prompt_kind_name(p.kind))},
                                {"token_count", p.token_count},
                                {"text", p.text}});
    j["prompts"] = prompts_json;

    json responses_json = json::array();
    for (const auto& r : trace.responses)
        responses_json.push_back({{"text", r.text},
                                  {"prompt_tokens", r.prompt_tokens},
                                  {"completion_tokens", r.completion_tokens},
                                  {"latency_ms", r.latency_ms},
                                  {"cache_hit", r.cache_hit}});
    j["responses"] = responses_json;

    json attempts = json::array();
    for (const auto& a : trace.sql_attempts)
        attempts.push_back({{"sql", a.sql},
                            {"ok", a.result.ok()},
                            {"error_class", a.result.error_class},
                            {"error_message", a.result.error_message},
                            {"row_count", a.result.result_rows.size()},
                            {"elapsed_ms", a.result.elapsed.count()}});
    j["sql_attempts"] = attempts;
    return j;
}

PipelineTrace trace_from_json(const json& j) {
    PipelineTrace trace;
    trace.example_id = j.at("example_id").get<std::string>();
    trace.db_id = j.value("db_id", "");
    trace.mode = j.value("mode", "staged") == "cot" ? Mode::cot : Mode::staged;
    const std::string status = j.value("status", "failed");
    trace.status = status == "executed"   ? TraceStatus::executed
                   : status == "exhausted" ? TraceStatus::exhausted
                                           : TraceStatus::failed;
    trace.failure_cause = j.value("failure_cause", "");
    trace.final_sql = j.value("final_sql", "");
    trace.flags = j.value("flags", std::vector<std::string>{});
    trace.generation_llm_calls = j.value("generation_llm_calls", 0);
    trace.correction_llm_calls = j.value("correction_llm_calls", 0);
    trace.gen_prompt_tokens = j.value("gen_prompt_tokens", 0LL);
    trace.total_prompt_tokens = j.value("total_prompt_tokens", 0LL);
    trace.wall_ms = j.value("wall_ms", 0.0);

    if (j.contains("aqp")) {
        repr::MaskedQuestion aqp;
        aqp.text = j["aqp"].at("text").get<std::string>();
        for (const auto& e : j["aqp"].value("alignment", json::array()))
            aqp.alignment.push_back({e.at("span").get<std::string>(),
                                     kind_from_name(e.at("kind").get<std::string>()),
                                     e.value("begin", size_t{0}), e.value("end", size_t{0})});
        trace.aqp = std::move(aqp);
    }
    if (j.contains("csm")) {
        repr::SchemaMarkup csm;
        csm.text = j["csm"].at("text").get<std::string>();
        for (const auto& l : j["csm"].value("links", json::array())) {
            repr::AnnotatedSpan span;
            span.span = l.at("span").get<std::string>();
            span.kind = kind_from_name(l.at("kind").get<std::string>());
            span.table = l.value("table", "");
            span.column = l.value("column", "");
            span.literal = l.value("literal", "");
            csm.links.push_back(std::move(span));
        }
        csm.extras = j["csm"].value("extras", std::vector<std::string>{});
        trace.csm = std::move(csm);
    }

    for (const auto& p : j.value("prompts", json::array())) {
        prompts::PromptBundle bundle;
        const std::string kind = p.value("kind", "sql");
        bundle.kind = kind == "aqp"          ? prompts::PromptKind::aqp
                      : kind == "csm"        ? prompts::PromptKind::csm
                      : kind == "correction" ? prompts::PromptKind::correction
                      : kind == "cot"        ? prompts::PromptKind::cot
                                             : prompts::PromptKind::sql;
        bundle.token_count = p.value("token_count", 0);
        bundle.text = p.value("text", "");
        trace.prompts.push_back(std::move(bundle));
    }
    for (const auto& r : j.value("responses", json::array())) {
        llmio::ChatResponse resp;
        resp.text = r.value("text", "");
        resp.prompt_tokens = r.value("prompt_tokens", 0);
        resp.completion_tokens = r.value("completion_tokens", 0);
        resp.latency_ms = r.value("latency_ms", 0.0);
        resp.cache_hit = r.value("cache_hit", false);
        trace.responses.push_back(std::move(resp));
    }
    for (const auto& a : j.value("sql_attempts", json::array())) {
        SqlAttempt attempt;
        attempt.sql = a.value("sql", "");
        attempt.result.outcome = a.value("ok", false) ? sqlkit::ExecutionResult::Outcome::rows
                                                      : sqlkit::ExecutionResult::Outcome::error;
        attempt.result.error_class = a.value("error_class", "");
        attempt.result.error_message = a.value("error_message", "");
        trace.sql_attempts.push_back(std::move(attempt));
    }
    return trace;
}

} // namespace textsql::pipeline
