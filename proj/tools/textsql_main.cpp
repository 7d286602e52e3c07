#include <textsql/driver.hpp>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <string>
#include <vector>

namespace {

using textsql::driver::BackendSpec;

void add_backend_flags(CLI::App* cmd, BackendSpec& spec) {
    cmd->add_option("--backend", spec.kind, "Chat backend: mock | replay | http")
        ->check(CLI::IsMember({"mock", "replay", "http"}));
    cmd->add_option("--model", spec.model, "Model name sent to the backend");
    cmd->add_option("--base-url", spec.base_url, "Chat-completions base URL (http backend)");
    cmd->add_option("--api-key-env", spec.api_key_env,
                    "Environment variable holding the API key");
    cmd->add_option("--mock-script", spec.mock_script, "JSON rules file for the mock backend");
    cmd->add_option("--transcript-in", spec.transcript_in, "Recorded transcript for replay");
    cmd->add_option("--embedder", spec.embed_kind, "Embedding backend: hash | http | replay")
        ->check(CLI::IsMember({"hash", "http", "replay"}));
    cmd->add_option("--embed-dim", spec.embed_dim, "Hash embedder dimension");
    cmd->add_option("--embed-base-url", spec.embed_base_url, "Embeddings base URL (http)");
    cmd->add_option("--embed-model", spec.embed_model, "Embedding model name (http)");
}

void add_ablation_flags(CLI::App* cmd, textsql::pipeline::PipelineConfig& cfg) {
    cmd->add_flag("--no-aqp", cfg.ablation.disable_aqp, "Skip the masked-question stage");
    cmd->add_flag("--no-csm", cfg.ablation.disable_csm, "Skip the schema-markup stage");
    cmd->add_flag("--fewshot-full-schema", cfg.ablation.fewshot_full_schema,
                  "Few-shot examples carry their full schema instead of the pruned one");
    cmd->add_flag("--full-values", cfg.ablation.full_values,
                  "Value section ignores markup emphasis");
    cmd->add_flag("--full-foreign-keys", cfg.ablation.full_foreign_keys,
                  "Keep all foreign keys in the SQL prompt");
}

} // namespace

int main(int argc, char** argv) {
    spdlog::set_pattern("[%l] %v");

    CLI::App app{"Text-to-SQL pipeline: masked-question retrieval, span-level schema markup, "
                 "staged generation with execution-guided repair"};
    app.require_subcommand(1);
    // config values live under a [subcommand] section; CLI flags take precedence
    app.set_config("--config", "", "Read options from a TOML config file");
    app.fallthrough();

    // build-demos -------------------------------------------------------------
    textsql::driver::BuildDemosOptions build;
    std::string build_format = "spider";
    auto* cmd_build = app.add_subcommand("build-demos", "Construct the demonstration store from "
                                                        "training pairs")->configurable();
    cmd_build->add_option("--train", build.train_path, "Training set JSON")->required();
    cmd_build->add_option("--format", build_format, "Dataset format: spider | bird")
        ->check(CLI::IsMember({"spider", "bird"}));
    cmd_build->add_option("--db-root", build.db_root, "Directory of <db_id>/<db_id>.sqlite")
        ->required();
    cmd_build->add_option("--seeds", build.seeds_path, "Hand-annotated seed file (JSON array of 5)")
        ->required();
    cmd_build->add_option("--out", build.out_store, "Output store path (JSONL)")->required();
    cmd_build->add_option("--templates", build.templates_dir, "Prompt template directory");
    cmd_build->add_option("--cache-dir", build.cache_dir, "Response cache directory");
    cmd_build->add_option("--record", build.record_transcript, "Record exchanges to a transcript");
    cmd_build->add_option("--k", build.k_fewshot, "Few-shot examples per build prompt");
    cmd_build->add_option("--parallel", build.parallelism, "Worker threads");
    cmd_build->add_flag("--dry-run", build.dry_run, "Render and count prompts, make no calls");
    add_backend_flags(cmd_build, build.backend);

    // run ---------------------------------------------------------------------
    textsql::driver::RunOptions run;
    std::string run_format = "spider";
    std::string run_mode = "staged";
    int run_timeout_ms = 30000;
    auto* cmd_run = app.add_subcommand("run", "Run the pipeline over a dev set")->configurable();
    cmd_run->add_option("--dev", run.dev_path, "Dev set JSON")->required();
    cmd_run->add_option("--format", run_format, "Dataset format: spider | bird")
        ->check(CLI::IsMember({"spider", "bird"}));
    cmd_run->add_option("--db-root", run.db_root, "Directory of <db_id>/<db_id>.sqlite")->required();
    cmd_run->add_option("--store", run.store_path, "Demonstration store (JSONL)")->required();
    cmd_run->add_option("--run-dir", run.run_dir, "Output run directory")->required();
    cmd_run->add_option("--templates", run.templates_dir, "Prompt template directory");
    cmd_run->add_option("--cache-dir", run.cache_dir, "Response cache (default <run-dir>/cache)");
    cmd_run->add_option("--record", run.record_transcript, "Record exchanges to a transcript");
    cmd_run->add_option("--mode", run_mode, "staged | cot")
        ->check(CLI::IsMember({"staged", "cot"}));
    cmd_run->add_option("--k", run.pipeline.k_fewshot, "Few-shot examples per prompt");
    cmd_run->add_option("--max-corrections", run.pipeline.max_corrections,
                        "Correction attempts after the initial SQL");
    cmd_run->add_option("--sql-timeout-ms", run_timeout_ms, "Per-statement execution timeout");
    cmd_run->add_option("--value-limit", run.pipeline.value_limit, "Max table-value lines");
    cmd_run->add_option("--parallel", run.parallelism, "Worker threads");
    cmd_run->add_flag("--dry-run", run.dry_run, "Render entry prompts only, make no calls");
    add_ablation_flags(cmd_run, run.pipeline);
    add_backend_flags(cmd_run, run.backend);

    // eval --------------------------------------------------------------------
    textsql::driver::EvalCmdOptions eval_opts;
    std::string eval_format = "spider";
    std::string predictions_path;
    auto* cmd_eval = app.add_subcommand("eval", "Score a run directory (or an external "
                                                "predictions file)")->configurable();
    cmd_eval->add_option("--run-dir", eval_opts.run_dir, "Run directory to score")->required();
    cmd_eval->add_option("--gold", eval_opts.gold_path, "Gold dataset JSON")->required();
    cmd_eval->add_option("--format", eval_format, "Dataset format: spider | bird")
        ->check(CLI::IsMember({"spider", "bird"}));
    cmd_eval->add_option("--db-root", eval_opts.db_root, "Directory of <db_id>/<db_id>.sqlite")
        ->required();
    cmd_eval->add_option("--predictions", predictions_path,
                         "Score this predictions.sql instead of the run's traces");
    cmd_eval->add_option("--ves-repeats", eval_opts.ves_repeats,
                         "Timed repeats per query for VES (0 = skip VES)");
    cmd_eval->add_option("--timeout-ms", eval_opts.timeout_ms, "Per-statement execution timeout");

    // sweep-k -----------------------------------------------------------------
    textsql::driver::SweepOptions sweep;
    std::string sweep_format = "spider";
    std::string sweep_mode = "staged";
    auto* cmd_sweep = app.add_subcommand("sweep-k", "Run the pipeline for each few-shot count "
                                                    "k in a range")->configurable();
    cmd_sweep->add_option("--dev", sweep.base.dev_path, "Dev set JSON")->required();
    cmd_sweep->add_option("--format", sweep_format, "Dataset format: spider | bird")
        ->check(CLI::IsMember({"spider", "bird"}));
    cmd_sweep->add_option("--db-root", sweep.base.db_root, "Directory of databases")->required();
    cmd_sweep->add_option("--store", sweep.base.store_path, "Demonstration store")->required();
    cmd_sweep->add_option("--run-dir", sweep.base.run_dir, "Parent run directory")->required();
    cmd_sweep->add_option("--templates", sweep.base.templates_dir, "Prompt template directory");
    cmd_sweep->add_option("--mode", sweep_mode, "staged | cot")
        ->check(CLI::IsMember({"staged", "cot"}));
    cmd_sweep->add_option("--k-min", sweep.k_min, "Smallest few-shot count");
    cmd_sweep->add_option("--k-max", sweep.k_max, "Largest few-shot count");
    cmd_sweep->add_option("--parallel", sweep.base.parallelism, "Worker threads");
    add_backend_flags(cmd_sweep, sweep.base.backend);

    // show-trace ----------------------------------------------------------------
    textsql::driver::ShowTraceOptions show;
    auto* cmd_show = app.add_subcommand("show-trace", "Pretty-print one example's trace")->configurable();
    cmd_show->add_option("--run-dir", show.run_dir, "Run directory")->required();
    cmd_show->add_option("--id", show.example_id, "Example id")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_build->parsed()) {
            build.format = textsql::corpus::dataset_format_from_name(build_format);
            return textsql::driver::cmd_build_demos(build);
        }
        if (cmd_run->parsed()) {
            run.format = textsql::corpus::dataset_format_from_name(run_format);
            run.pipeline.mode = run_mode == "cot" ? textsql::pipeline::Mode::cot
                                                  : textsql::pipeline::Mode::staged;
            run.pipeline.sql_timeout = std::chrono::milliseconds(run_timeout_ms);
            run.pipeline.model = run.backend.model;
            return textsql::driver::cmd_run(run);
        }
        if (cmd_eval->parsed()) {
            eval_opts.format = textsql::corpus::dataset_format_from_name(eval_format);
            if (!predictions_path.empty()) eval_opts.predictions = predictions_path;
            return textsql::driver::cmd_eval(eval_opts);
        }
        if (cmd_sweep->parsed()) {
            sweep.base.format = textsql::corpus::dataset_format_from_name(sweep_format);
            sweep.base.pipeline.mode = sweep_mode == "cot" ? textsql::pipeline::Mode::cot
                                                           : textsql::pipeline::Mode::staged;
            sweep.base.pipeline.model = sweep.base.backend.model;
            return textsql::driver::cmd_sweep_k(sweep);
        }
        if (cmd_show->parsed()) return textsql::driver::cmd_show_trace(show);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return textsql::driver::kExitFatal;
    }
    return textsql::driver::kExitFatal;
}
