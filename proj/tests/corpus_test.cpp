#include "fixture_env.hpp"

#include <textsql/corpus.hpp>
#include <textsql/sqlite_db.hpp>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <fstream>

using namespace textsql;
using corpus::DatasetFormat;

namespace {

testsupport::FixtureEnv& env() {
    static testsupport::FixtureEnv instance;
    return instance;
}

} // namespace

TEST(LoadDataset, SpiderFieldsAndOrder) {
    const auto examples =
        corpus::load_dataset(testsupport::fixture_dir() / "dev_spider.json", DatasetFormat::spider);
    ASSERT_EQ(examples.size(), 10u);
    EXPECT_EQ(examples[0].id, "0");
    EXPECT_EQ(examples[0].question, "How many singers are there?");
    EXPECT_EQ(examples[0].db_id, "music");
    ASSERT_TRUE(examples[0].gold_sql.has_value());
    EXPECT_EQ(*examples[0].gold_sql, "SELECT count(*) FROM singer");
    EXPECT_FALSE(examples[0].evidence.has_value());
    EXPECT_FALSE(examples[0].difficulty.has_value());
}

TEST(LoadDataset, BirdCapturesEvidenceAndDifficulty) {
    const auto examples =
        corpus::load_dataset(testsupport::fixture_dir() / "dev_bird.json", DatasetFormat::bird);
    ASSERT_EQ(examples.size(), 10u);
    EXPECT_EQ(examples[3].id, "3");
    ASSERT_TRUE(examples[3].evidence.has_value());
    EXPECT_EQ(*examples[3].evidence, "USA singers are those with country = 'USA'");
    ASSERT_TRUE(examples[3].difficulty.has_value());
    EXPECT_EQ(*examples[3].difficulty, corpus::Difficulty::moderate);
    EXPECT_EQ(*examples[6].difficulty, corpus::Difficulty::challenging);
}

TEST(LoadDataset, EmptyArrayGivesEmptyList) {
    const auto path = env().scratch("datasets") / "empty.json";
    std::ofstream(path) << "[]";
    EXPECT_TRUE(corpus::load_dataset(path, DatasetFormat::spider).empty());
}

TEST(LoadDataset, MalformedItemNamesIndex) {
    const auto path = env().scratch("datasets") / "bad.json";
    std::ofstream(path) << R"([{"db_id": "music", "question": "ok", "query": "SELECT 1"},
                              {"db_id": "music"}])";
    try {
        corpus::load_dataset(path, DatasetFormat::spider);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("item 1"), std::string::npos) << e.what();
    }
}

TEST(LoadSchema, FixtureManifestMatches) {
    const auto schema = corpus::load_schema(env().db_root(), "music");
    // hand-written manifest of the fixture database
    ASSERT_EQ(schema.tables.size(), 3u);
    EXPECT_EQ(schema.tables[0].name, "stadium");
    EXPECT_EQ(schema.tables[1].name, "singer");
    EXPECT_EQ(schema.tables[2].name, "concert");

    const auto* singer = schema.find_table("singer");
    ASSERT_NE(singer, nullptr);
    ASSERT_EQ(singer->columns.size(), 4u);
    EXPECT_EQ(singer->columns[0].name, "singer_id");
    EXPECT_EQ(singer->columns[1].name, "name");
    EXPECT_EQ(singer->columns[2].name, "country");
    EXPECT_EQ(singer->columns[3].name, "age");
    ASSERT_EQ(singer->primary_key.size(), 1u);
    EXPECT_EQ(singer->primary_key[0], "singer_id");

    ASSERT_EQ(schema.foreign_keys.size(), 2u);
    // declaration order within the concert table
    EXPECT_EQ(schema.foreign_keys[0].from_table, "concert");
    EXPECT_EQ(schema.foreign_keys[1].from_table, "concert");
    std::set<std::string> targets = {schema.foreign_keys[0].to_table,
                                     schema.foreign_keys[1].to_table};
    EXPECT_EQ(targets, (std::set<std::string>{"stadium", "singer"}));
}

TEST(LoadSchema, CompositeForeignKeyYieldsBothColumnPairs) {
    const auto schema = corpus::load_schema(env().db_root(), "shop");
    int composite_pairs = 0;
    for (const auto& fk : schema.foreign_keys)
        if (fk.from_table == "order_items" && fk.to_table == "orders") ++composite_pairs;
    EXPECT_EQ(composite_pairs, 2); // (order_id, region) -> (order_id, region)

    const auto* orders = schema.find_table("orders");
    ASSERT_NE(orders, nullptr);
    EXPECT_EQ(orders->primary_key, (std::vector<std::string>{"order_id", "region"}));
}

TEST(LoadSchema, IdempotentAcrossLoads) {
    const auto a = corpus::load_schema(env().db_root(), "music");
    const auto b = corpus::load_schema(env().db_root(), "music");
    ASSERT_EQ(a.tables.size(), b.tables.size());
    for (size_t i = 0; i < a.tables.size(); ++i) {
        EXPECT_EQ(a.tables[i].name, b.tables[i].name);
        ASSERT_EQ(a.tables[i].columns.size(), b.tables[i].columns.size());
        for (size_t j = 0; j < a.tables[i].columns.size(); ++j) {
            EXPECT_EQ(a.tables[i].columns[j].name, b.tables[i].columns[j].name);
            EXPECT_EQ(a.tables[i].columns[j].declared_type, b.tables[i].columns[j].declared_type);
            ASSERT_EQ(a.tables[i].columns[j].sample_values.size(),
                      b.tables[i].columns[j].sample_values.size());
            for (size_t k = 0; k < a.tables[i].columns[j].sample_values.size(); ++k)
                EXPECT_TRUE(value_equal(a.tables[i].columns[j].sample_values[k],
                                        b.tables[i].columns[j].sample_values[k]));
        }
    }
    ASSERT_EQ(a.foreign_keys.size(), b.foreign_keys.size());
}

TEST(LoadSchema, EmptyDatabaseIsAnError) {
    const auto dir = env().scratch("emptydb") ;
    std::filesystem::create_directories(dir / "emptydb");
    { auto conn = db::Connection::open_readwrite(dir / "emptydb" / "emptydb.sqlite"); }
    try {
        corpus::load_schema(dir, "emptydb");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("empty schema"), std::string::npos);
    }
}

TEST(LoadSchema, MissingFileIsAnError) {
    EXPECT_THROW(corpus::load_schema(env().db_root(), "no_such_db"), IoError);
}

TEST(SampleColumnValues, FewerValuesThanK) {
    const auto schema = corpus::load_schema(env().db_root(), "shop");
    auto conn = db::Connection::open_readonly(corpus::database_path(env().db_root(), "shop"));
    // orders.region has 2 distinct values
    const auto values = corpus::sample_column_values(schema, conn, "orders", "region", 5);
    ASSERT_EQ(values.size(), 2u);
}

TEST(SampleColumnValues, FirstKInPrimaryKeyOrder) {
    const auto schema = corpus::load_schema(env().db_root(), "music");
    auto conn = db::Connection::open_readonly(corpus::database_path(env().db_root(), "music"));
    const auto values = corpus::sample_column_values(schema, conn, "singer", "name", 3);
    // direct query over the fixture: first three singers by singer_id
    ASSERT_EQ(values.size(), 3u);
    EXPECT_EQ(std::get<std::string>(values[0]), "John Field");
    EXPECT_EQ(std::get<std::string>(values[1]), "Mary Reed");
    EXPECT_EQ(std::get<std::string>(values[2]), "Ana Silva");
}

TEST(SampleColumnValues, AllNullColumnGivesEmpty) {
    const auto dir = env().scratch("nulldb");
    std::filesystem::create_directories(dir / "nulls");
    {
        auto conn = db::Connection::open_readwrite(dir / "nulls" / "nulls.sqlite");
        conn.exec("CREATE TABLE t (id INTEGER PRIMARY KEY, c TEXT);"
                  "INSERT INTO t VALUES (1, NULL), (2, NULL);");
    }
    const auto schema = corpus::load_schema(dir, "nulls");
    auto conn = db::Connection::open_readonly(dir / "nulls" / "nulls.sqlite");
    EXPECT_TRUE(corpus::sample_column_values(schema, conn, "t", "c", 3).empty());
}

TEST(SampleColumnValues, NoDuplicatesAndNoNulls) {
    const auto schema = corpus::load_schema(env().db_root(), "music");
    auto conn = db::Connection::open_readonly(corpus::database_path(env().db_root(), "music"));
    for (const auto& table : schema.tables) {
        for (const auto& col : table.columns) {
            const auto values = corpus::sample_column_values(schema, conn, table.name, col.name, 10);
            for (size_t i = 0; i < values.size(); ++i) {
                EXPECT_FALSE(std::holds_alternative<std::monostate>(values[i]));
                for (size_t j = i + 1; j < values.size(); ++j)
                    EXPECT_FALSE(value_equal(values[i], values[j]));
            }
        }
    }
}

TEST(SampleColumnValues, UnknownColumnThrows) {
    const auto schema = corpus::load_schema(env().db_root(), "music");
    auto conn = db::Connection::open_readonly(corpus::database_path(env().db_root(), "music"));
    EXPECT_THROW(corpus::sample_column_values(schema, conn, "singer", "nope", 3), ConfigError);
    EXPECT_THROW(corpus::sample_column_values(schema, conn, "singer", "name", 0), ConfigError);
}

namespace {

// Independent oracle: scan every text cell of every table directly.
std::vector<corpus::ValueMatch> brute_force_matches(const std::string& question,
                                                    const corpus::DatabaseSchema& schema,
                                                    const db::Connection& conn, size_t min_len) {
    auto lower = [](std::string s) {
        for (char& c : s)
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        return s;
    };
    const std::string folded = lower(question);
    std::vector<corpus::ValueMatch> out;
    for (const auto& table : schema.tables) {
        for (const auto& col : table.columns) {
            auto stmt = conn.prepare("SELECT DISTINCT \"" + col.name + "\" FROM \"" + table.name +
                                     "\" WHERE \"" + col.name + "\" IS NOT NULL");
            while (stmt.step()) {
                const Value v = stmt.column(0);
                if (!std::holds_alternative<std::string>(v)) continue;
                const std::string cell = std::get<std::string>(v);
                std::string needle = lower(cell);
                // trim
                while (!needle.empty() && needle.front() == ' ') needle.erase(needle.begin());
                while (!needle.empty() && needle.back() == ' ') needle.pop_back();
                if (needle.size() < min_len) continue;
                if (folded.find(needle) != std::string::npos)
                    out.push_back({table.name, col.name, cell});
            }
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.value.size() > b.value.size();
    });
    return out;
}

} // namespace

TEST(MatchQuestionValues, FindsLiteralMention) {
    const auto schema = corpus::load_schema(env().db_root(), "music");
    auto conn = db::Connection::open_readonly(corpus::database_path(env().db_root(), "music"));
    const auto matches =
        corpus::match_question_values("Which singers come from France?", schema, conn, 10);
    ASSERT_EQ(matches.size(), 1u);
    EXPECT_EQ(matches[0].table, "singer");
    EXPECT_EQ(matches[0].column, "country");
    EXPECT_EQ(matches[0].value, "France");
}

TEST(MatchQuestionValues, NoOverlapGivesEmpty) {
    const auto schema = corpus::load_schema(env().db_root(), "music");
    auto conn = db::Connection::open_readonly(corpus::database_path(env().db_root(), "music"));
    EXPECT_TRUE(corpus::match_question_values("completely unrelated words", schema, conn, 10).empty());
}

TEST(MatchQuestionValues, LimitKeepsLongestMatch) {
    const auto schema = corpus::load_schema(env().db_root(), "music");
    auto conn = db::Connection::open_readonly(corpus::database_path(env().db_root(), "music"));
    // "Riverside Arena" (15 chars) and "Dayton" (6 chars) both occur
    const auto matches = corpus::match_question_values(
        "Shows at Riverside Arena in Dayton", schema, conn, 1);
    ASSERT_EQ(matches.size(), 1u);
    EXPECT_EQ(matches[0].value, "Riverside Arena");
}

TEST(MatchQuestionValues, AgreesWithBruteForceScan) {
    const auto schema = corpus::load_schema(env().db_root(), "music");
    auto conn = db::Connection::open_readonly(corpus::database_path(env().db_root(), "music"));
    const std::string question = "Did Mary Reed sing at Harbor Dome in Boston or in Dayton?";
    const auto expected = brute_force_matches(question, schema, conn, 3);
    const auto actual = corpus::match_question_values(question, schema, conn, 100);
    ASSERT_EQ(actual.size(), expected.size());
    for (size_t i = 0; i < actual.size(); ++i) {
        EXPECT_EQ(actual[i].table, expected[i].table);
        EXPECT_EQ(actual[i].column, expected[i].column);
        EXPECT_EQ(actual[i].value, expected[i].value);
    }
}

TEST(MatchQuestionValues, EveryMatchExistsVerbatimInDatabase) {
    const auto schema = corpus::load_schema(env().db_root(), "shop");
    auto conn = db::Connection::open_readonly(corpus::database_path(env().db_root(), "shop"));
    const auto matches = corpus::match_question_values(
        "How many Laptop Pro units went to the east region?", schema, conn, 10);
    ASSERT_FALSE(matches.empty());
    for (const auto& m : matches) {
        auto stmt = conn.prepare("SELECT count(*) FROM \"" + m.table + "\" WHERE \"" + m.column +
                                 "\" = '" + m.value + "'");
        ASSERT_TRUE(stmt.step());
        EXPECT_GT(std::get<int64_t>(stmt.column(0)), 0);
    }
}

TEST(TablesJsonCrossCheck, MatchingEntryHasNoWarnings) {
    const auto schema = corpus::load_schema(env().db_root(), "music");
    std::ifstream in(testsupport::fixture_dir() / "tables.json");
    const auto doc = nlohmann::json::parse(in);
    EXPECT_TRUE(corpus::cross_check_tables_json(schema, doc[0]).empty());
}

TEST(TablesJsonCrossCheck, MismatchWarns) {
    const auto schema = corpus::load_schema(env().db_root(), "music");
    nlohmann::json entry = {{"db_id", "music"},
                            {"table_names_original", {"stadium", "singer", "ghost_table"}}};
    const auto warnings = corpus::cross_check_tables_json(schema, entry);
    ASSERT_FALSE(warnings.empty());
    bool mentions_ghost = false;
    for (const auto& w : warnings)
        if (w.find("ghost_table") != std::string::npos) mentions_ghost = true;
    EXPECT_TRUE(mentions_ghost);
}
