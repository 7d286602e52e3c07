#include <textsql/driver.hpp>
#include <textsql/prompts.hpp>
#include <textsql/strutil.hpp>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <mutex>
#include <unordered_map>

using nlohmann::json;

namespace textsql::driver {

namespace {

prompts::TemplateSet load_templates(const std::filesystem::path& dir) {
    const auto resolved = dir.empty() ? prompts::TemplateSet::default_dir() : dir;
    if (resolved.empty() || !std::filesystem::exists(resolved))
        throw ConfigError("template directory not found: '" + resolved.string() +
                          "' (set --templates or TEXTSQL_TEMPLATE_DIR)");
    return prompts::TemplateSet::load(resolved);
}

std::shared_ptr<llmio::MockChatBackend> mock_from_script(const std::filesystem::path& script) {
    auto mock = std::make_shared<llmio::MockChatBackend>();
    if (script.empty()) return mock;
    std::ifstream in(script);
    if (!in) throw IoError("cannot open mock script: " + script.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(script.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw ParseError(script.string() + ": expected a JSON array of rules");
    for (const auto& rule_json : doc) {
        if (rule_json.contains("default")) {
            mock->set_default_response(rule_json["default"].get<std::string>());
            continue;
        }
        llmio::MockChatBackend::Rule rule;
        if (rule_json.contains("stage")) rule.stage = rule_json["stage"].get<std::string>();
        if (rule_json.contains("question")) rule.question = rule_json["question"].get<std::string>();
        if (rule_json.contains("digest")) rule.digest = rule_json["digest"].get<std::string>();
        if (rule_json.contains("contains")) rule.contains = rule_json["contains"].get<std::string>();
        rule.response = rule_json.at("response").get<std::string>();
        mock->add_rule(std::move(rule));
    }
    return mock;
}

} // namespace

Clients make_clients(const BackendSpec& spec, const std::filesystem::path& cache_dir,
                     const std::filesystem::path& record_transcript) {
    Clients clients;
    if (!record_transcript.empty())
        clients.transcript = std::make_shared<llmio::TranscriptWriter>(record_transcript);

    std::shared_ptr<llmio::ChatBackend> chat;
    if (spec.kind == "mock") {
        clients.mock = mock_from_script(spec.mock_script);
        chat = clients.mock;
    } else if (spec.kind == "replay") {
        if (spec.transcript_in.empty())
            throw ConfigError("replay backend requires --transcript-in");
        chat = std::make_shared<llmio::ReplayChatBackend>(spec.transcript_in);
    } else if (spec.kind == "http") {
        llmio::HttpChatConfig config;
        config.base_url = spec.base_url;
        config.model = spec.model;
        config.api_key_env = spec.api_key_env;
        chat = std::make_shared<llmio::HttpChatBackend>(config);
    } else {
        throw ConfigError("unknown chat backend kind: " + spec.kind);
    }

    std::shared_ptr<llmio::EmbedBackend> embed;
    if (spec.embed_kind == "hash") {
        embed = std::make_shared<llmio::HashEmbedBackend>(spec.embed_dim);
    } else if (spec.embed_kind == "http") {
        llmio::HttpEmbedConfig config;
        config.base_url = spec.embed_base_url.empty() ? spec.base_url : spec.embed_base_url;
        config.model = spec.embed_model;
        config.api_key_env = spec.api_key_env;
        embed = std::make_shared<llmio::HttpEmbedBackend>(config);
    } else if (spec.embed_kind == "replay") {
        if (spec.transcript_in.empty())
            throw ConfigError("replay embedder requires --transcript-in");
        embed = std::make_shared<llmio::ReplayEmbedBackend>(spec.transcript_in);
    } else {
        throw ConfigError("unknown embed backend kind: " + spec.embed_kind);
    }

    llmio::ClientOptions options;
    options.cache_dir = cache_dir;
    options.transcript = clients.transcript;
    options.fallback_token_counter = [](std::string_view text) {
        return prompts::count_tokens(text);
    };
    clients.llm = std::make_shared<llmio::LlmClient>(std::move(chat), options);
    clients.embedder = std::make_shared<llmio::EmbedClient>(std::move(embed), options);
    return clients;
}

int cmd_build_demos(const BuildDemosOptions& opts) {
    try {
        const auto templates = load_templates(opts.templates_dir);
        const auto seeds = retrieval::load_seeds(opts.seeds_path);
        const auto training = corpus::load_dataset(opts.train_path, opts.format);

        auto clients = make_clients(opts.backend, opts.cache_dir, opts.record_transcript);

        std::mutex schema_mutex;
        std::unordered_map<std::string, std::shared_ptr<corpus::DatabaseSchema>> schemas;
        retrieval::SchemaProvider provider =
            [&](const std::string& db_id) -> const corpus::DatabaseSchema& {
            std::lock_guard lock(schema_mutex);
            auto it = schemas.find(db_id);
            if (it == schemas.end())
                it = schemas
                         .emplace(db_id, std::make_shared<corpus::DatabaseSchema>(
                                             corpus::load_schema(opts.db_root, db_id)))
                         .first;
            return *it->second;
        };

        retrieval::BuildOptions build;
        build.k_fewshot = opts.k_fewshot;
        build.model = opts.backend.model;
        build.dry_run = opts.dry_run;
        build.parallelism = opts.parallelism;

        retrieval::BuildReport report;
        const auto store = retrieval::build_demonstrations(training, seeds, provider, *clients.llm,
                                                           *clients.embedder, templates, build,
                                                           &report);
        if (opts.dry_run) {
            fmt::print("dry run: rendered build prompts for {} training examples, no calls made\n",
                       training.size());
            return kExitOk;
        }

        retrieval::save_store(store, opts.out_store);
        fmt::print("built {} demonstrations (+{} seeds) -> {}\n", report.built,
                   retrieval::kSeedCount, opts.out_store.string());
        if (!report.rejects.empty()) {
            fmt::print("{} training examples rejected:\n", report.rejects.size());
            for (const auto& r : report.rejects)
                fmt::print("  {} [{}] {}\n", r.example_id, r.stage, r.reason);
            return kExitCompletedWithFailures;
        }
        return kExitOk;
    } catch (const std::exception& e) {
        spdlog::error("build-demos failed: {}", e.what());
        return kExitFatal;
    }
}

namespace {

json pipeline_config_to_json(const pipeline::PipelineConfig& cfg) {
    return json{
        {"k_fewshot", cfg.k_fewshot},
        {"max_corrections", cfg.max_corrections},
        {"sql_timeout_ms", cfg.sql_timeout.count()},
        {"mode", cfg.mode == pipeline::Mode::cot ? "cot" : "staged"},
        {"value_limit", cfg.value_limit},
        {"rerank_sql_demos", cfg.rerank_sql_demos},
        {"model", cfg.model},
        {"ablation",
         {{"disable_aqp", cfg.ablation.disable_aqp},
          {"disable_csm", cfg.ablation.disable_csm},
          {"fewshot_full_schema", cfg.ablation.fewshot_full_schema},
          {"full_values", cfg.ablation.full_values},
          {"full_foreign_keys", cfg.ablation.full_foreign_keys}}},
    };
}

} // namespace

void write_run_manifest(const RunOptions& opts) {
    json manifest;
    manifest["dev"] = opts.dev_path.string();
    manifest["format"] = opts.format == corpus::DatasetFormat::spider ? "spider" : "bird";
    manifest["db_root"] = opts.db_root.string();
    manifest["store"] = opts.store_path.string();
    manifest["backend"] = {{"kind", opts.backend.kind},
                           {"model", opts.backend.model},
                           {"embed_kind", opts.backend.embed_kind},
                           {"embed_dim", opts.backend.embed_dim}};
    manifest["pipeline"] = pipeline_config_to_json(opts.pipeline);
    manifest["parallelism"] = opts.parallelism;

    std::filesystem::create_directories(opts.run_dir);
    std::ofstream out(opts.run_dir / "run.json", std::ios::trunc);
    if (!out) throw IoError("cannot write run manifest under " + opts.run_dir.string());
    out << manifest.dump(2) << '\n';
}

void write_predictions(const std::filesystem::path& run_dir,
                       const std::vector<pipeline::PipelineTrace>& traces) {
    std::ofstream out(run_dir / "predictions.sql", std::ios::trunc);
    if (!out) throw IoError("cannot write predictions.sql under " + run_dir.string());
    for (const auto& t : traces) out << str::collapse_ws(t.final_sql) << '\n';
}

int cmd_run(const RunOptions& opts) {
    try {
        const auto templates = load_templates(opts.templates_dir);
        const auto examples = corpus::load_dataset(opts.dev_path, opts.format);

        const auto cache_dir = opts.cache_dir.empty() ? opts.run_dir / "cache" : opts.cache_dir;
        // non-replay runs record their exchanges by default so they can be
        // replayed later
        auto record_path = opts.record_transcript;
        if (record_path.empty() && opts.backend.kind != "replay")
            record_path = opts.run_dir / "transcript.jsonl";
        auto clients = make_clients(opts.backend,
                                    opts.dry_run ? std::filesystem::path{} : cache_dir,
                                    opts.dry_run ? std::filesystem::path{} : record_path);

        const auto store = retrieval::load_store(opts.store_path, clients.embedder->backend_id());

        write_run_manifest(opts);

        if (opts.dry_run) {
            // Render the entry prompt per example without retrieval or calls.
            long long tokens = 0;
            for (const auto& ex : examples) {
                const auto schema = corpus::load_schema(opts.db_root, ex.db_id);
                const auto schema_text = prompts::serialize_schema(schema);
                const auto fk_text = prompts::serialize_foreign_keys(schema);
                prompts::PromptBundle bundle;
                if (opts.pipeline.mode == pipeline::Mode::cot)
                    bundle = prompts::render_cot_prompt(templates, ex.question, schema_text, fk_text,
                                                        "", {});
                else
                    bundle = prompts::render_aqp_prompt(templates, ex.question, schema_text, fk_text,
                                                        {});
                tokens += bundle.token_count;
            }
            fmt::print("dry run: {} examples, {} entry-prompt tokens, zero backend calls\n",
                       examples.size(), tokens);
            return kExitOk;
        }

        pipeline::PipelineContext ctx(&store, &templates, clients.llm.get(),
                                      clients.embedder.get(), opts.db_root);
        const auto traces = pipeline::run_batch(examples, ctx, opts.pipeline, opts.parallelism);

        std::filesystem::create_directories(opts.run_dir / "traces");
        size_t failed = 0;
        for (const auto& t : traces) {
            std::ofstream out(opts.run_dir / "traces" / (t.example_id + ".json"), std::ios::trunc);
            out << pipeline::trace_to_json(t).dump(2) << '\n';
            if (t.status == pipeline::TraceStatus::failed) ++failed;
        }
        write_predictions(opts.run_dir, traces);

        fmt::print("ran {} examples -> {} ({} executed, {} exhausted, {} failed)\n", traces.size(),
                   opts.run_dir.string(),
                   std::count_if(traces.begin(), traces.end(),
                                 [](const auto& t) {
                                     return t.status == pipeline::TraceStatus::executed;
                                 }),
                   std::count_if(traces.begin(), traces.end(),
                                 [](const auto& t) {
                                     return t.status == pipeline::TraceStatus::exhausted;
                                 }),
                   failed);
        return failed == 0 ? kExitOk : kExitCompletedWithFailures;
    } catch (const std::exception& e) {
        spdlog::error("run failed: {}", e.what());
        return kExitFatal;
    }
}

int cmd_eval(const EvalCmdOptions& opts) {
    try {
        const auto golds = corpus::load_dataset(opts.gold_path, opts.format);

        eval::EvalOptions eval_opts;
        eval_opts.timeout = std::chrono::milliseconds(opts.timeout_ms);
        if (opts.ves_repeats > 0) eval_opts.ves_repeats = opts.ves_repeats;

        eval::EvalReport report;
        if (opts.predictions) {
            std::ifstream in(*opts.predictions);
            if (!in) throw IoError("cannot open predictions file: " + opts.predictions->string());
            std::vector<pipeline::PipelineTrace> traces;
            std::string line;
            while (std::getline(in, line)) {
                pipeline::PipelineTrace t;
                t.final_sql = str::trim(line);
                t.status = t.final_sql.empty() ? pipeline::TraceStatus::failed
                                               : pipeline::TraceStatus::executed;
                traces.push_back(std::move(t));
            }
            if (traces.size() != golds.size())
                throw ConfigError(fmt::format("predictions file has {} lines, gold set has {}",
                                              traces.size(), golds.size()));
            for (size_t i = 0; i < traces.size(); ++i) traces[i].example_id = golds[i].id;

            report.n = static_cast<int>(golds.size());
            std::vector<eval::ExampleOutcome> outcomes;
            report.ex = eval::execution_accuracy(traces, golds, opts.db_root, eval_opts, &outcomes);
            for (const auto& o : outcomes)
                if (o.included) ++report.n_scored;
            report.per_difficulty = eval::difficulty_breakdown(traces, golds, opts.db_root, eval_opts);
            if (opts.ves_repeats > 0)
                report.ves = eval::ves(traces, golds, opts.db_root, eval_opts);
        } else {
            report = eval::report(opts.run_dir, golds, opts.db_root, eval_opts,
                                  opts.ves_repeats > 0);
        }

        eval::write_report(opts.run_dir, report);
        std::cout << eval::report_to_markdown(report);
        fmt::print("report written to {}\n", (opts.run_dir / "report.json").string());
        return kExitOk;
    } catch (const std::exception& e) {
        spdlog::error("eval failed: {}", e.what());
        return kExitFatal;
    }
}

int cmd_sweep_k(const SweepOptions& opts) {
    if (opts.k_min < 0 || opts.k_max < opts.k_min) {
        spdlog::error("sweep-k: need 0 <= k-min <= k-max");
        return kExitFatal;
    }
    int worst = kExitOk;
    for (int k = opts.k_min; k <= opts.k_max; ++k) {
        RunOptions run = opts.base;
        run.pipeline.k_fewshot = k;
        run.run_dir = opts.base.run_dir / fmt::format("k{}", k);
        if (run.cache_dir.empty()) run.cache_dir = opts.base.run_dir / "cache"; // shared cache
        fmt::print("--- sweep k={} -> {}\n", k, run.run_dir.string());
        worst = std::max(worst, cmd_run(run));
        if (worst == kExitFatal) return worst;
    }
    return worst;
}

int cmd_show_trace(const ShowTraceOptions& opts) {
    try {
        const auto file = opts.run_dir / "traces" / (opts.example_id + ".json");
        std::ifstream in(file);
        if (!in) throw IoError("missing trace file: " + file.string());
        const auto trace = pipeline::trace_from_json(json::parse(in));

        fmt::print("example {} (db {}, mode {})\n", trace.example_id, trace.db_id,
                   trace.mode == pipeline::Mode::cot ? "cot" : "staged");
        fmt::print("status: {}{}\n", pipeline::trace_status_name(trace.status),
                   trace.failure_cause.empty() ? "" : " (" + trace.failure_cause + ")");
        if (trace.aqp) fmt::print("masked question: {}\n", trace.aqp->text);
        if (trace.csm) fmt::print("replaced question: {}\n", trace.csm->text);
        fmt::print("prompts ({} generation + {} correction calls):\n", trace.generation_llm_calls,
                   trace.correction_llm_calls);
        for (const auto& p : trace.prompts)
            fmt::print("  [{}] {} tokens\n", prompts::prompt_kind_name(p.kind), p.token_count);
        for (size_t i = 0; i < trace.sql_attempts.size(); ++i) {
            const auto& a = trace.sql_attempts[i];
            fmt::print("attempt {}: {}\n  -> {}\n", i + 1, str::collapse_ws(a.sql),
                       a.result.ok() ? "ok" : a.result.error_class + ": " + a.result.error_message);
        }
        fmt::print("final SQL: {}\n", str::collapse_ws(trace.final_sql));
        if (!trace.flags.empty()) fmt::print("flags: {}\n", fmt::join(trace.flags, ", "));
        return kExitOk;
    } catch (const std::exception& e) {
        spdlog::error("show-trace failed: {}", e.what());
        return kExitFatal;
    }
}

} // namespace textsql::driver
