#include <textsql/retrieval.hpp>
#include <textsql/repr.hpp>
#include <textsql/strutil.hpp>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

using nlohmann::json;

namespace textsql::retrieval {

size_t DemoStore::seed_count() const {
    size_t n = 0;
    for (const auto& d : demos)
        if (d.is_seed) ++n;
    return n;
}

std::vector<SeedDemo> load_seeds(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open seeds file: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw ParseError(path.string() + ": expected a JSON array of seeds");
    std::vector<SeedDemo> seeds;
    for (size_t i = 0; i < doc.size(); ++i) {
        const auto& j = doc[i];
        SeedDemo s;
        s.id = j.value("id", "seed-" + std::to_string(i));
        try {
            s.db_id = j.at("db_id").get<std::string>();
            s.question = j.at("question").get<std::string>();
            s.aqp_text = j.at("aqp").get<std::string>();
            s.csm_text = j.at("csm").get<std::string>();
            s.gold_sql = j.at("sql").get<std::string>();
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ": seed " + std::to_string(i) + ": " + e.what());
        }
        seeds.push_back(std::move(s));
    }
    if (seeds.size() != kSeedCount)
        throw ParseError(path.string() + ": expected exactly " + std::to_string(kSeedCount) +
                         " seed demonstrations, found " + std::to_string(seeds.size()));
    return seeds;
}

namespace {

double cosine(const llmio::EmbeddingVector& a, const llmio::EmbeddingVector& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0 || nb == 0) return 0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace

std::vector<Scored> top_k(const DemoStore& store, const llmio::EmbeddingVector& query, size_t k,
                          SimilarityKey key, const std::string& exclude_source_id) {
    if (k < 1) throw ConfigError("top_k: k must be >= 1");
    std::vector<Scored> scored;
    scored.reserve(store.demos.size());
    for (const auto& demo : store.demos) {
        if (!exclude_source_id.empty() && demo.source_example_id == exclude_source_id) continue;
        const auto& vec = key == SimilarityKey::question_vec ? demo.question_vec : demo.aqp_vec;
        if (vec.size() != query.size())
            throw ConfigError("top_k: vector dimension mismatch (" + std::to_string(vec.size()) +
                              " vs " + std::to_string(query.size()) + ")");
        scored.push_back(Scored{&demo, cosine(query, vec)});
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.demo->source_example_id < b.demo->source_example_id;
    });
    if (scored.size() > k) scored.resize(k);
    return scored;
}

std::vector<Scored> order_for_prompt(std::vector<Scored> ranked) {
    std::reverse(ranked.begin(), ranked.end());
    return ranked;
}

namespace {

std::string demo_schema_text(const Demonstration& demo, const corpus::DatabaseSchema& schema) {
    return prompts::serialize_schema(schema, demo.pruned_schema.empty() ? nullptr : &demo.pruned_schema);
}

prompts::DemoBlock to_block(const Demonstration& demo, const corpus::DatabaseSchema& schema) {
    prompts::DemoBlock block;
    block.schema_text = demo_schema_text(demo, schema);
    block.question = demo.question;
    block.mask = demo.aqp_text;
    block.replaced = demo.csm_text;
    block.sql = demo.gold_sql;
    return block;
}

} // namespace

DemoStore build_demonstrations(const std::vector<corpus::Example>& training,
                               const std::vector<SeedDemo>& seeds, const SchemaProvider& schemas,
                               llmio::LlmClient& llm, llmio::EmbedClient& embedder,
                               const prompts::TemplateSet& templates, const BuildOptions& options,
                               BuildReport* report) {
    if (seeds.size() != kSeedCount)
        throw ConfigError("build_demonstrations requires exactly " + std::to_string(kSeedCount) +
                          " seeds");
    BuildReport local_report;
    BuildReport& rep = report ? *report : local_report;

    DemoStore store;
    store.embed_backend_id = embedder.backend_id();
    store.dim = options.dry_run ? 0 : embedder.dim();

    // Seeds become full demonstrations (their annotations are trusted but the
    // mask alignment is still checked).
    std::vector<Demonstration> seed_demos;
    for (const auto& seed : seeds) {
        const corpus::DatabaseSchema& schema = schemas(seed.db_id);
        repr::validate_mask(seed.question, seed.aqp_text);
        repr::parse_csm(seed.csm_text, schema);
        Demonstration d;
        d.source_example_id = seed.id;
        d.db_id = seed.db_id;
        d.question = seed.question;
        d.aqp_text = seed.aqp_text;
        d.csm_text = seed.csm_text;
        d.gold_sql = seed.gold_sql;
        d.pruned_schema = sqlkit::extract_schema_elements(seed.gold_sql, schema);
        d.is_seed = true;
        if (!options.dry_run) {
            d.question_vec = embedder.embed_one(seed.question);
            d.aqp_vec = embedder.embed_one(seed.aqp_text);
        }
        seed_demos.push_back(std::move(d));
    }

    DemoStore seed_store;
    seed_store.demos = seed_demos;
    seed_store.embed_backend_id = store.embed_backend_id;
    seed_store.dim = store.dim;

    const size_t k = static_cast<size_t>(std::max(options.k_fewshot, 0));

    auto build_one = [&](const corpus::Example& example) -> std::optional<Demonstration> {
        if (!example.gold_sql)
            throw ConfigError("training example " + example.id + " has no gold SQL");
        const corpus::DatabaseSchema& schema = schemas(example.db_id);

        sqlkit::UsedSchema pruned;
        try {
            pruned = sqlkit::extract_schema_elements(*example.gold_sql, schema);
        } catch (const sqlkit::AnalysisError& e) {
            rep.rejects.push_back({example.id, "schema", e.what()});
            return std::nullopt;
        }

        const std::string schema_text = prompts::serialize_schema(schema);
        const std::string fk_text = prompts::serialize_foreign_keys(schema);
        prompts::RenderOptions render_opts;
        render_opts.gold_sql = example.gold_sql;

        if (options.dry_run) {
            // Render the first prompt with an arbitrary seed slice; no calls.
            std::vector<prompts::DemoBlock> blocks;
            for (size_t i = 0; i < std::min(k, seed_demos.size()); ++i)
                blocks.push_back(to_block(seed_demos[i], schemas(seed_demos[i].db_id)));
            prompts::render_aqp_prompt(templates, example.question, schema_text, fk_text, blocks,
                                       render_opts);
            return std::nullopt;
        }

        const auto question_vec = embedder.embed_one(example.question);

        std::vector<prompts::DemoBlock> aqp_blocks;
        if (k > 0) {
            auto ranked = top_k(seed_store, question_vec, k, SimilarityKey::question_vec, example.id);
            for (const auto& s : order_for_prompt(std::move(ranked)))
                aqp_blocks.push_back(to_block(*s.demo, schemas(s.demo->db_id)));
        }
        const auto aqp_prompt = prompts::render_aqp_prompt(templates, example.question, schema_text,
                                                           fk_text, aqp_blocks, render_opts);
        llmio::ChatRequest req;
        req.prompt = aqp_prompt.text;
        req.model = options.model;
        req.max_tokens = options.max_tokens;
        const std::string aqp_text = str::trim(llm.complete(req).text);

        try {
            repr::validate_mask(example.question, aqp_text);
        } catch (const repr::MaskError& e) {
            rep.rejects.push_back({example.id, "aqp", e.what()});
            return std::nullopt;
        }

        const auto aqp_vec = embedder.embed_one(aqp_text);
        std::vector<prompts::DemoBlock> csm_blocks;
        if (k > 0) {
            auto ranked = top_k(seed_store, aqp_vec, k, SimilarityKey::aqp_vec, example.id);
            for (const auto& s : order_for_prompt(std::move(ranked)))
                csm_blocks.push_back(to_block(*s.demo, schemas(s.demo->db_id)));
        }
        const auto csm_prompt = prompts::render_csm_prompt(templates, example.question, aqp_text,
                                                           schema_text, fk_text, csm_blocks,
                                                           render_opts);
        req.prompt = csm_prompt.text;
        const std::string csm_text = str::trim(llm.complete(req).text);

        try {
            repr::parse_csm(csm_text, schema);
        } catch (const repr::CsmParseError& e) {
            rep.rejects.push_back({example.id, "csm", e.what()});
            return std::nullopt;
        }

        Demonstration d;
        d.source_example_id = example.id;
        d.db_id = example.db_id;
        d.question = example.question;
        d.aqp_text = aqp_text;
        d.csm_text = csm_text;
        d.gold_sql = *example.gold_sql;
        d.question_vec = question_vec;
        d.aqp_vec = aqp_vec;
        d.pruned_schema = std::move(pruned);
        return d;
    };

    std::vector<std::optional<Demonstration>> built(training.size());
    const int workers = std::max(1, options.parallelism);
    if (workers == 1 || training.size() <= 1) {
        for (size_t i = 0; i < training.size(); ++i) built[i] = build_one(training[i]);
    } else {
        std::atomic<size_t> next{0};
        std::mutex reject_mutex; // rep.rejects is shared
        auto worker = [&]() {
            while (true) {
                const size_t i = next.fetch_add(1);
                if (i >= training.size()) break;
                try {
                    built[i] = build_one(training[i]);
                } catch (const std::exception& e) {
                    std::lock_guard lock(reject_mutex);
                    rep.rejects.push_back({training[i].id, "fatal", e.what()});
                }
            }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    store.demos = std::move(seed_demos);
    for (auto& d : built) {
        if (d) {
            store.demos.push_back(std::move(*d));
            ++rep.built;
        }
    }
    return store;
}

namespace {

json used_schema_to_json(const sqlkit::UsedSchema& used) {
    json cols = json::array();
    for (const auto& [t, c] : used.columns) cols.push_back(json::array({t, c}));
    return {{"tables", used.tables}, {"columns", cols}};
}

sqlkit::UsedSchema used_schema_from_json(const json& j) {
    sqlkit::UsedSchema used;
    used.tables = j.value("tables", std::vector<std::string>{});
    if (j.contains("columns"))
        for (const auto& pair : j["columns"])
            used.columns.emplace_back(pair.at(0).get<std::string>(), pair.at(1).get<std::string>());
    return used;
}

} // namespace

void save_store(const DemoStore& store, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write store: " + path.string());

    const json header = {{"version", 1},
                         {"embed_backend_id", store.embed_backend_id},
                         {"dim", store.dim},
                         {"count", store.demos.size()}};
    out << header.dump() << '\n';
    for (const auto& d : store.demos) {
        const json j = {
            {"id", d.source_example_id},
            {"db_id", d.db_id},
            {"question", d.question},
            {"aqp", d.aqp_text},
            {"csm", d.csm_text},
            {"sql", d.gold_sql},
            {"question_vec", d.question_vec},
            {"aqp_vec", d.aqp_vec},
            {"pruned_schema", used_schema_to_json(d.pruned_schema)},
            {"seed", d.is_seed},
        };
        out << j.dump() << '\n';
    }
}

DemoStore load_store(const std::filesystem::path& path, const std::string& expected_backend_id) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open store: " + path.string());

    DemoStore store;
    std::string line;
    size_t lineno = 0;
    size_t declared_count = 0;

    auto parse_line = [&](const std::string& text) -> json {
        try {
            return json::parse(text);
        } catch (const json::parse_error& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": corrupt record: " + e.what());
        }
    };

    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty store file");
    ++lineno;
    {
        const json header = parse_line(line);
        const int version = header.value("version", -1);
        if (version != 1)
            throw ParseError(path.string() + ": unsupported store version " +
                             std::to_string(version));
        store.embed_backend_id = header.value("embed_backend_id", "");
        store.dim = header.value("dim", 0);
        declared_count = header.value("count", size_t{0});
    }

    while (std::getline(in, line)) {
        ++lineno;
        if (str::trim(line).empty()) continue;
        const json j = parse_line(line);
        Demonstration d;
        try {
            d.source_example_id = j.at("id").get<std::string>();
            d.db_id = j.at("db_id").get<std::string>();
            d.question = j.at("question").get<std::string>();
            d.aqp_text = j.at("aqp").get<std::string>();
            d.csm_text = j.at("csm").get<std::string>();
            d.gold_sql = j.at("sql").get<std::string>();
            d.question_vec = j.at("question_vec").get<llmio::EmbeddingVector>();
            d.aqp_vec = j.at("aqp_vec").get<llmio::EmbeddingVector>();
            d.pruned_schema = used_schema_from_json(j.value("pruned_schema", json::object()));
            d.is_seed = j.value("seed", false);
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": corrupt record: " + e.what());
        }
        if (store.dim != 0 &&
            (d.question_vec.size() != static_cast<size_t>(store.dim) ||
             d.aqp_vec.size() != static_cast<size_t>(store.dim)))
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": vector dimension differs from header");
        store.demos.push_back(std::move(d));
    }

    if (declared_count != 0 && store.demos.size() != declared_count)
        throw ParseError(path.string() + ": truncated store: header declares " +
                         std::to_string(declared_count) + " records, found " +
                         std::to_string(store.demos.size()));

    if (store.seed_count() != kSeedCount)
        throw ParseError(path.string() + ": store must carry exactly " +
                         std::to_string(kSeedCount) + " seed demonstrations (found " +
                         std::to_string(store.seed_count()) + ")");

    // Spot-check mask alignment on a sample of records.
    size_t checked = 0;
    for (const auto& d : store.demos) {
        if (checked >= 16) break;
        try {
            repr::validate_mask(d.question, d.aqp_text);
        } catch (const repr::MaskError& e) {
            throw ParseError(path.string() + ": demo '" + d.source_example_id +
                             "' fails mask validation: " + e.what());
        }
        ++checked;
    }

    if (!expected_backend_id.empty() && store.embed_backend_id != expected_backend_id)
        spdlog::warn("demo store {} was built with embedder '{}' but the run uses '{}'",
                     path.string(), store.embed_backend_id, expected_backend_id);
    return store;
}

} // namespace textsql::retrieval
