#pragma once

#include <textsql/corpus.hpp>
#include <textsql/pipeline.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace textsql::eval {

struct EvalOptions {
    std::chrono::milliseconds timeout{30000};
    int ves_repeats = 10;
    double ves_clip_max = 2.0;
    /// Test hook: median runtime in ms for (db_id, sql); replaces wall-clock
    /// timing when set.
    std::function<double(const std::string& db_id, const std::string& sql)> timer_override;
};

struct ExampleOutcome {
    std::string id;
    bool included = true; // false when the gold SQL itself failed
    bool correct = false;
    std::string note;
};

/// Fraction of examples whose prediction executes and matches the gold rows
/// (multiset semantics; ordered when the gold has a top-level ORDER BY).
/// Examples whose gold fails are excluded and reported.
double execution_accuracy(const std::vector<pipeline::PipelineTrace>& traces,
                          const std::vector<corpus::Example>& golds,
                          const std::filesystem::path& db_root, const EvalOptions& opts,
                          std::vector<ExampleOutcome>* outcomes = nullptr);

/// Mean per-example reward: 0 when incorrect, sqrt(gold_time/pred_time)
/// clipped to [0, clip_max] when correct. Fraction scale (multiply by 100 for
/// a percentage). Timing failure on a correct example scores 1 with a note.
double ves(const std::vector<pipeline::PipelineTrace>& traces,
           const std::vector<corpus::Example>& golds, const std::filesystem::path& db_root,
           const EvalOptions& opts);

/// ex_percent / avg_prompt_tokens; requires avg_prompt_tokens > 0.
double efficiency_rate(double ex_percent, double avg_prompt_tokens);

/// Execution accuracy per difficulty label plus "total". Empty map (total
/// only) when no labels exist.
std::map<std::string, double> difficulty_breakdown(
    const std::vector<pipeline::PipelineTrace>& traces, const std::vector<corpus::Example>& golds,
    const std::filesystem::path& db_root, const EvalOptions& opts);

struct EvalReport {
    int n = 0;
    int n_scored = 0; // golds that executed
    double ex = 0;    // fraction
    std::optional<double> ves; // fraction scale, only when timing was requested
    double avg_prompt_tokens = 0;
    double avg_gen_prompt_tokens = 0;
    std::optional<double> efficiency;
    std::map<std::string, double> per_difficulty; // includes "total" when labels exist
    std::map<std::string, int> per_difficulty_n;
    std::vector<std::pair<std::string, std::string>> failures; // (example id, cause)
    nlohmann::json config_echo;                                 // run flags for bookkeeping
};

/// Deterministic by construction: everything timing-derived is excluded
/// unless with_ves is set.
EvalReport report(const std::filesystem::path& run_dir, const std::vector<corpus::Example>& golds,
                  const std::filesystem::path& db_root, const EvalOptions& opts,
                  bool with_ves = false);

/// report.json (stable key order, no timing fields) and report.md.
void write_report(const std::filesystem::path& run_dir, const EvalReport& report);

nlohmann::json report_to_json(const EvalReport& report);
std::string report_to_markdown(const EvalReport& report);

/// Load traces/<id>.json files for a run, in dataset order when golds are
/// given (missing traces raise IoError).
std::vector<pipeline::PipelineTrace> load_traces(const std::filesystem::path& run_dir,
                                                 const std::vector<corpus::Example>& golds);

} // namespace textsql::eval
