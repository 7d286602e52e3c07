#include <textsql/eval.hpp>
#include <textsql/sqlkit.hpp>
#include <textsql/strutil.hpp>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>

using nlohmann::json;

namespace textsql::eval {

namespace {

struct ScoredExample {
    const pipeline::PipelineTrace* trace;
    const corpus::Example* gold;
};

std::vector<ScoredExample> pair_up(const std::vector<pipeline::PipelineTrace>& traces,
                                   const std::vector<corpus::Example>& golds) {
    if (traces.size() != golds.size())
        throw ConfigError(fmt::format("trace/gold count mismatch: {} traces, {} golds",
                                      traces.size(), golds.size()));
    std::vector<ScoredExample> out;
    out.reserve(traces.size());
    for (size_t i = 0; i < traces.size(); ++i) {
        if (traces[i].example_id != golds[i].id)
            throw ConfigError(fmt::format("trace {} does not match gold id {} at position {}",
                                          traces[i].example_id, golds[i].id, i));
        out.push_back({&traces[i], &golds[i]});
    }
    return out;
}

struct Verdict {
    bool included = true;
    bool correct = false;
    std::string note;
};

Verdict judge(const ScoredExample& item, const std::filesystem::path& db_root,
              const EvalOptions& opts) {
    Verdict v;
    if (!item.gold->gold_sql || item.gold->gold_sql->empty()) {
        v.included = false;
        v.note = "no gold SQL";
        return v;
    }
    db::Connection conn;
    try {
        conn = db::Connection::open_readonly(corpus::database_path(db_root, item.gold->db_id));
    } catch (const Error& e) {
        v.included = false;
        v.note = e.what();
        return v;
    }
    const auto gold_exec = sqlkit::execute_sql(conn, *item.gold->gold_sql, opts.timeout);
    if (!gold_exec.ok()) {
        v.included = false;
        v.note = "gold SQL failed: " + gold_exec.error_message;
        return v;
    }
    if (item.trace->final_sql.empty()) {
        v.note = "no prediction";
        return v;
    }
    const auto pred_exec = sqlkit::execute_sql(conn, item.trace->final_sql, opts.timeout);
    if (!pred_exec.ok()) {
        v.note = "prediction failed: " + pred_exec.error_message;
        return v;
    }
    const bool ordered = sqlkit::order_sensitive_gold(*item.gold->gold_sql);
    v.correct = sqlkit::compare_results(pred_exec, gold_exec, ordered);
    if (!v.correct) v.note = "result mismatch";
    return v;
}

} // namespace

double execution_accuracy(const std::vector<pipeline::PipelineTrace>& traces,
                          const std::vector<corpus::Example>& golds,
                          const std::filesystem::path& db_root, const EvalOptions& opts,
                          std::vector<ExampleOutcome>* outcomes) {
    const auto paired = pair_up(traces, golds);
    size_t scored = 0, correct = 0;
    for (const auto& item : paired) {
        const Verdict v = judge(item, db_root, opts);
        if (outcomes)
            outcomes->push_back({item.gold->id, v.included, v.correct, v.note});
        if (!v.included) {
            spdlog::warn("example {} excluded from EX: {}", item.gold->id, v.note);
            continue;
        }
        ++scored;
        if (v.correct) ++correct;
    }
    return scored == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(scored);
}

double ves(const std::vector<pipeline::PipelineTrace>& traces,
           const std::vector<corpus::Example>& golds, const std::filesystem::path& db_root,
           const EvalOptions& opts) {
    const auto paired = pair_up(traces, golds);

    // gold and prediction are timed interleaved so load drift cancels out of
    // the ratio
    auto time_ratio = [&](const corpus::Example& gold, const std::string& pred_sql) -> double {
        if (opts.timer_override) {
            const double gold_ms = opts.timer_override(gold.db_id, *gold.gold_sql);
            const double pred_ms = opts.timer_override(gold.db_id, pred_sql);
            return pred_ms > 0 ? gold_ms / pred_ms : 1.0;
        }
        auto conn = db::Connection::open_readonly(corpus::database_path(db_root, gold.db_id));
        const auto [gold_stats, pred_stats] =
            sqlkit::time_sql_pair(conn, *gold.gold_sql, pred_sql, opts.ves_repeats, opts.timeout);
        return pred_stats.median_ms > 0 ? gold_stats.median_ms / pred_stats.median_ms : 1.0;
    };

    size_t scored = 0;
    double total = 0;
    for (const auto& item : paired) {
        const Verdict v = judge(item, db_root, opts);
        if (!v.included) continue;
        ++scored;
        if (!v.correct) continue;
        double reward = 1.0;
        try {
            reward = std::clamp(std::sqrt(time_ratio(*item.gold, item.trace->final_sql)), 0.0,
                                opts.ves_clip_max);
        } catch (const Error& e) {
            spdlog::warn("timing failed for example {}: {}; scoring reward 1", item.gold->id,
                         e.what());
        }
        total += reward;
    }
    return scored == 0 ? 0.0 : total / static_cast<double>(scored);
}

double efficiency_rate(double ex_percent, double avg_prompt_tokens) {
    if (avg_prompt_tokens <= 0) throw ConfigError("efficiency_rate: avg_prompt_tokens must be > 0");
    if (ex_percent == 0) return 0;
    return ex_percent / avg_prompt_tokens;
}

std::map<std::string, double> difficulty_breakdown(
    const std::vector<pipeline::PipelineTrace>& traces, const std::vector<corpus::Example>& golds,
    const std::filesystem::path& db_root, const EvalOptions& opts) {
    const auto paired = pair_up(traces, golds);

    std::map<std::string, std::pair<size_t, size_t>> buckets; // label -> (scored, correct)
    size_t scored = 0, correct = 0;
    bool any_labels = false;
    for (const auto& item : paired) {
        const Verdict v = judge(item, db_root, opts);
        if (!v.included) continue;
        ++scored;
        if (v.correct) ++correct;
        if (item.gold->difficulty) {
            any_labels = true;
            auto& [s, c] = buckets[corpus::difficulty_name(*item.gold->difficulty)];
            ++s;
            if (v.correct) ++c;
        }
    }

    std::map<std::string, double> out;
    out["total"] = scored == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(scored);
    if (any_labels)
        for (const auto& [label, sc] : buckets)
            out[label] = sc.first == 0 ? 0.0 : static_cast<double>(sc.second) /
                                                   static_cast<double>(sc.first);
    return out;
}

std::vector<pipeline::PipelineTrace> load_traces(const std::filesystem::path& run_dir,
                                                 const std::vector<corpus::Example>& golds) {
    std::vector<pipeline::PipelineTrace> traces;
    traces.reserve(golds.size());
    for (const auto& gold : golds) {
        const auto file = run_dir / "traces" / (gold.id + ".json");
        std::ifstream in(file);
        if (!in) throw IoError("missing trace file: " + file.string());
        try {
            traces.push_back(pipeline::trace_from_json(json::parse(in)));
        } catch (const json::exception& e) {
            throw ParseError(file.string() + ": " + e.what());
        }
    }
    return traces;
}

EvalReport report(const std::filesystem::path& run_dir, const std::vector<corpus::Example>& golds,
                  const std::filesystem::path& db_root, const EvalOptions& opts, bool with_ves) {
    EvalReport rep;
    const auto traces = load_traces(run_dir, golds);

    std::vector<ExampleOutcome> outcomes;
    rep.ex = execution_accuracy(traces, golds, db_root, opts, &outcomes);
    rep.n = static_cast<int>(golds.size());
    for (const auto& o : outcomes)
        if (o.included) ++rep.n_scored;

    long long total_tokens = 0, gen_tokens = 0;
    for (const auto& t : traces) {
        total_tokens += t.total_prompt_tokens;
        gen_tokens += t.gen_prompt_tokens;
        if (t.status == pipeline::TraceStatus::failed)
            rep.failures.emplace_back(t.example_id, t.failure_cause);
    }
    if (!traces.empty()) {
        rep.avg_prompt_tokens = static_cast<double>(total_tokens) / traces.size();
        rep.avg_gen_prompt_tokens = static_cast<double>(gen_tokens) / traces.size();
    }
    if (rep.avg_prompt_tokens > 0)
        rep.efficiency = efficiency_rate(rep.ex * 100.0, rep.avg_prompt_tokens);

    rep.per_difficulty = difficulty_breakdown(traces, golds, db_root, opts);
    for (const auto& g : golds)
        if (g.difficulty) ++rep.per_difficulty_n[corpus::difficulty_name(*g.difficulty)];

    if (with_ves) rep.ves = ves(traces, golds, db_root, opts);

    const auto run_json_path = run_dir / "run.json";
    if (std::ifstream run_json(run_json_path); run_json) {
        try {
            const json manifest = json::parse(run_json);
            if (manifest.contains("pipeline")) rep.config_echo = manifest["pipeline"];
        } catch (const json::exception&) {
            spdlog::warn("unreadable run manifest at {}", run_json_path.string());
        }
    }
    return rep;
}

json report_to_json(const EvalReport& rep) {
    json j;
    j["n"] = rep.n;
    j["n_scored"] = rep.n_scored;
    j["ex"] = rep.ex;
    j["ex_percent"] = rep.ex * 100.0;
    if (rep.ves) {
        j["ves"] = *rep.ves;
        j["ves_percent"] = *rep.ves * 100.0;
    }
    j["avg_prompt_tokens"] = rep.avg_prompt_tokens;
    j["avg_gen_prompt_tokens"] = rep.avg_gen_prompt_tokens;
    if (rep.efficiency) j["efficiency_rate"] = *rep.efficiency;
    j["per_difficulty"] = rep.per_difficulty;
    j["per_difficulty_n"] = rep.per_difficulty_n;
    json failures = json::array();
    for (const auto& [id, cause] : rep.failures) failures.push_back({{"id", id}, {"cause", cause}});
    j["failures"] = failures;
    if (!rep.config_echo.is_null()) j["config"] = rep.config_echo;
    return j;
}

std::string report_to_markdown(const EvalReport& rep) {
    std::string md = "# Evaluation report\n\n";
    md += fmt::format("- examples: {} ({} scored)\n", rep.n, rep.n_scored);
    md += fmt::format("- EX: {:.4f} ({:.2f}%)\n", rep.ex, rep.ex * 100.0);
    if (rep.ves) md += fmt::format("- VES: {:.4f} ({:.2f}%)\n", *rep.ves, *rep.ves * 100.0);
    md += fmt::format("- avg prompt tokens: {:.1f}\n", rep.avg_prompt_tokens);
    md += fmt::format("- avg generation prompt tokens: {:.1f}\n", rep.avg_gen_prompt_tokens);
    if (rep.efficiency) md += fmt::format("- efficiency rate: {:.4f}\n", *rep.efficiency);
    if (rep.per_difficulty.size() > 1) {
        md += "\n| difficulty | EX | n |\n|---|---|---|\n";
        for (const auto& [label, ex] : rep.per_difficulty) {
            if (label == "total") continue;
            const auto it = rep.per_difficulty_n.find(label);
            md += fmt::format("| {} | {:.4f} | {} |\n", label, ex,
                              it == rep.per_difficulty_n.end() ? 0 : it->second);
        }
        md += fmt::format("| total | {:.4f} | {} |\n", rep.per_difficulty.at("total"), rep.n_scored);
    }
    if (!rep.failures.empty()) {
        md += "\n## Failures\n\n";
        for (const auto& [id, cause] : rep.failures) md += fmt::format("- {}: {}\n", id, cause);
    }
    return md;
}

void write_report(const std::filesystem::path& run_dir, const EvalReport& rep) {
    {
        std::ofstream out(run_dir / "report.json", std::ios::trunc);
        if (!out) throw IoError("cannot write report.json under " + run_dir.string());
        out << report_to_json(rep).dump(2) << '\n';
    }
    {
        std::ofstream out(run_dir / "report.md", std::ios::trunc);
        out << report_to_markdown(rep);
    }
}

} // namespace textsql::eval
