#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rulex/extractor.hpp"
#include "rulex/generator.hpp"
#include "rulex/io.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = -1;
    std::string output;  // stdout and stderr
};

CliRun rulex_cli(const std::string& args, const fs::path& scratch) {
    const fs::path log = scratch / "cli.log";
    std::string cmd = std::string(RULEX_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
    int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = rulex::read_text_file(log.string());
    return r;
}

std::string slurp(const fs::path& p) { return rulex::read_text_file(p.string()); }

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / ("rulex_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override {
        if (!HasFailure()) fs::remove_all(dir);
    }

    CliRun run(const std::string& args) { return rulex_cli(args, dir); }
    std::string at(const std::string& name) const { return "'" + (dir / name).string() + "'"; }
    static std::string fixture(const std::string& name) { return std::string(RULEX_FIXTURE_DIR) + "/eval/" + name; }
    static std::string small_config() { return std::string(RULEX_CONFIG_DIR) + "/small.json"; }

    CliRun synth_and_train(const std::string& corpus, const std::string& run_dir) {
        auto s = run("synth --config " + small_config() + " --out " + at(corpus));
        if (s.code != 0) return s;
        return run("train --config " + small_config() + " --corpus " + at(corpus) + " --out " + at(run_dir));
    }

    fs::path dir;
};

}  // namespace

TEST_F(Cli, SynthWritesTheCorpusFiles) {
    auto r = run("synth --config " + small_config() + " --out " + at("corpus"));
    ASSERT_EQ(r.code, 0) << r.output;
    for (const char* f : {"vocab.txt", "rules.txt", "train.jsonl", "dev.jsonl", "test.jsonl", "config.json"})
        EXPECT_TRUE(fs::is_regular_file(dir / "corpus" / f)) << f;
    EXPECT_EQ(count_lines(slurp(dir / "corpus" / "rules.txt")), 2u);
    EXPECT_NE(r.output.find("rulex synth config {"), std::string::npos);
    EXPECT_NE(r.output.find("\"seed\":7"), std::string::npos) << r.output;
    EXPECT_FALSE(fs::exists(dir / "corpus" / ".lock"));
}

TEST_F(Cli, SynthIsByteDeterministicAndSeedFlagWins) {
    ASSERT_EQ(run("synth --config " + small_config() + " --out " + at("a")).code, 0);
    ASSERT_EQ(run("synth --config " + small_config() + " --out " + at("b")).code, 0);
    ASSERT_EQ(run("synth --config " + small_config() + " --seed 8 --out " + at("c")).code, 0);
    for (const char* f : {"train.jsonl", "test.jsonl", "rules.txt", "config.json"})
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    EXPECT_NE(slurp(dir / "a" / "train.jsonl"), slurp(dir / "c" / "train.jsonl"));
    auto cfg = nlohmann::json::parse(slurp(dir / "c" / "config.json"));
    EXPECT_EQ(cfg["seed"], 8);
}

TEST_F(Cli, MissingParentDirectoryIsAnError) {
    auto r = run("synth --config " + small_config() + " --out " + at("no/such/place"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("does not exist"), std::string::npos) << r.output;
}

TEST_F(Cli, BadConfigIsAnError) {
    std::ofstream(dir / "bad.json") << R"({"synth": {"p_hide": 2}})";
    auto r = run("synth --config " + at("bad.json") + " --out " + at("x"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("p_hide"), std::string::npos) << r.output;
}

TEST_F(Cli, LockedDirectoryIsRefused) {
    fs::create_directories(dir / "busy");
    std::ofstream(dir / "busy" / ".lock") << "";
    auto r = run("synth --config " + small_config() + " --out " + at("busy"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("locked"), std::string::npos) << r.output;
}

TEST_F(Cli, TrainWritesOneDiagnosticsRowPerIteration) {
    auto r = synth_and_train("corpus", "run");
    ASSERT_EQ(r.code, 0) << r.output;
    auto csv = slurp(dir / "run" / "diagnostics.csv");
    EXPECT_EQ(count_lines(csv), 3u) << csv;  // header + T = 2
    EXPECT_EQ(csv.rfind("iteration,L_G,L_R,", 0), 0u);
    for (const char* f : {"generator.json", "extractor.json", "vocab.txt", "config.json", "learned_rules.txt"})
        EXPECT_TRUE(fs::is_regular_file(dir / "run" / f)) << f;
}

TEST_F(Cli, SeededTrainingReruns) {
    ASSERT_EQ(synth_and_train("corpus", "run1").code, 0);
    ASSERT_EQ(run("train --config " + small_config() + " --corpus " + at("corpus") + " --out " + at("run2")).code, 0);
    for (const char* f : {"generator.json", "extractor.json", "diagnostics.csv"})
        EXPECT_EQ(slurp(dir / "run1" / f), slurp(dir / "run2" / f)) << f;
}

TEST_F(Cli, CorruptCorpusLineIsNamed) {
    ASSERT_EQ(run("synth --config " + small_config() + " --out " + at("corpus")).code, 0);
    auto text = slurp(dir / "corpus" / "train.jsonl");
    auto second = text.find('\n') + 1;
    text.insert(second, "{not json\n");
    std::ofstream(dir / "corpus" / "train.jsonl", std::ios::trunc) << text;
    auto r = run("train --config " + small_config() + " --corpus " + at("corpus") + " --out " + at("run"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("train.jsonl:2"), std::string::npos) << r.output;
}

TEST_F(Cli, InferExplanationsGroundTheirPaths) {
    ASSERT_EQ(synth_and_train("corpus", "run").code, 0);
    auto r = run("infer --run " + at("run") + " --docs " + at("corpus/test.jsonl") + " --out " + at("pred.jsonl"));
    ASSERT_EQ(r.code, 0) << r.output;
    auto vocab = rulex::read_vocab((dir / "corpus" / "vocab.txt").string());
    auto docs = rulex::read_documents((dir / "corpus" / "test.jsonl").string(), vocab);
    std::ifstream in(dir / "pred.jsonl");
    std::string line;
    std::size_t lines = 0, explained = 0;
    while (std::getline(in, line)) {
        ++lines;
        auto j = nlohmann::json::parse(line);
        const auto& doc = docs.doc(j["doc_id"].get<std::string>());
        ASSERT_EQ(j["triples"].size(), j["explanations"].size());
        for (const auto& e : j["explanations"]) {
            if (e["rule"].is_null()) continue;
            ++explained;
            auto rule = rulex::parse_rule(e["rule"].get<std::string>(), vocab).rule;
            auto path = e["path"].get<std::vector<rulex::EntityId>>();
            auto g = rulex::ground_rule(doc, rule, path.front(), path.back());
            EXPECT_EQ(g.value, e["grounding"].get<double>());
            EXPECT_EQ(g.path, path);
        }
    }
    EXPECT_EQ(lines, docs.docs().size());
    EXPECT_GT(explained, 0u);
    // Evaluating the predictions works end to end.
    auto ev = run("eval --predictions " + at("pred.jsonl") + " --gold " + at("corpus/test.jsonl") + " --vocab " +
                  at("corpus/vocab.txt") + " --train " + at("corpus/train.jsonl") + " --rules " +
                  at("corpus/rules.txt") + " --out " + at("report.json"));
    EXPECT_EQ(ev.code, 0) << ev.output;
}

TEST_F(Cli, ColdCheckpointPredictsNothing) {
    ASSERT_EQ(run("synth --config " + small_config() + " --out " + at("corpus")).code, 0);
    fs::create_directories(dir / "cold");
    fs::copy_file(dir / "corpus" / "vocab.txt", dir / "cold" / "vocab.txt");
    fs::copy_file(small_config(), dir / "cold" / "config.json");
    auto vocab = rulex::read_vocab((dir / "corpus" / "vocab.txt").string());
    rulex::write_text_file((dir / "cold" / "generator.json").string(),
                           rulex::RuleGenerator(vocab.size()).to_json().dump());
    rulex::write_text_file((dir / "cold" / "extractor.json").string(), R"({"bias":{},"rule_weight":{}})");
    auto r = run("infer --run " + at("cold") + " --docs " + at("corpus/test.jsonl") + " --out " + at("pred.jsonl"));
    ASSERT_EQ(r.code, 0) << r.output;
    std::ifstream in(dir / "pred.jsonl");
    std::string line;
    while (std::getline(in, line)) EXPECT_TRUE(nlohmann::json::parse(line)["triples"].empty());
}

TEST_F(Cli, UnknownRelationInDocumentsIsAnError) {
    ASSERT_EQ(synth_and_train("corpus", "run").code, 0);
    std::ofstream(dir / "odd.jsonl") << R"({"doc_id":"z","entities":["a","b"],"atoms":[[0,"zzz",1,0.9]]})" << '\n';
    auto r = run("infer --run " + at("run") + " --docs " + at("odd.jsonl") + " --out " + at("pred.jsonl"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("zzz"), std::string::npos) << r.output;
}

TEST_F(Cli, EvalReproducesTheHandCountedFixture) {
    auto f1 = run("eval --predictions " + fixture("predictions_f1.jsonl") + " --gold " + fixture("gold.jsonl") +
                  " --vocab " + fixture("vocab.txt") + " --out " + at("f1.json"));
    ASSERT_EQ(f1.code, 0) << f1.output;
    auto j = nlohmann::json::parse(slurp(dir / "f1.json"));
    EXPECT_EQ(j["f1"]["f1"].get<double>(), 4.0 / 7.0);
    EXPECT_TRUE(j["logic"].is_null());

    auto logic = run("eval --predictions " + fixture("predictions_logic.jsonl") + " --gold " + fixture("gold.jsonl") +
                     " --vocab " + fixture("vocab.txt") + " --rules " + fixture("rules.txt") + " --out " +
                     at("logic.json"));
    ASSERT_EQ(logic.code, 0) << logic.output;
    j = nlohmann::json::parse(slurp(dir / "logic.json"));
    EXPECT_EQ(j["logic"]["score"].get<double>(), 2.0 / 3.0);

    auto ign = run("eval --predictions " + fixture("predictions_ign.jsonl") + " --gold " + fixture("gold_ign.jsonl") +
                   " --vocab " + fixture("vocab.txt") + " --train " + fixture("train_ign.jsonl") + " --out " +
                   at("ign.json"));
    ASSERT_EQ(ign.code, 0) << ign.output;
    j = nlohmann::json::parse(slurp(dir / "ign.json"));
    EXPECT_EQ(j["ign_f1"]["f1"].get<double>(), 1.0);
    EXPECT_EQ(j["ign_f1"]["tp"].get<int>(), 2);
    EXPECT_EQ(j["f1"]["tp"].get<int>(), 3);
}

TEST_F(Cli, SelfEvaluationOfGold) {
    ASSERT_EQ(run("synth --config " + small_config() + " --out " + at("corpus")).code, 0);
    auto vocab = rulex::read_vocab((dir / "corpus" / "vocab.txt").string());
    auto test = rulex::read_documents((dir / "corpus" / "test.jsonl").string(), vocab);
    {
        std::ofstream out(dir / "gold_pred.jsonl");
        for (const auto& doc : test.docs()) {
            nlohmann::json triples = nlohmann::json::array();
            for (const auto& t : doc.gold_facts()) triples.push_back({t.head, vocab.name(t.rel), t.tail, 1.0});
            out << nlohmann::json{{"doc_id", doc.id()}, {"triples", triples}}.dump() << '\n';
        }
    }
    auto r = run("eval --predictions " + at("gold_pred.jsonl") + " --gold " + at("corpus/test.jsonl") + " --vocab " +
                 at("corpus/vocab.txt") + " --rules " + at("corpus/rules.txt") + " --out " + at("self.json"));
    ASSERT_EQ(r.code, 0) << r.output;
    auto j = nlohmann::json::parse(slurp(dir / "self.json"));
    EXPECT_EQ(j["f1"]["f1"].get<double>(), 1.0);
    EXPECT_TRUE(j["logic"]["vacuous"].get<bool>() || j["logic"]["score"].get<double>() == 1.0);
}

TEST_F(Cli, EvalMissingFileIsAnError) {
    auto r = run("eval --predictions " + at("nope.jsonl") + " --gold " + fixture("gold.jsonl") + " --vocab " +
                 fixture("vocab.txt"));
    EXPECT_NE(r.code, 0);
}

TEST_F(Cli, OracleReportsEverySuite) {
    auto r = run("oracle --scope all --seed 3 --out " + at("oracle.json"));
    ASSERT_EQ(r.code, 0) << r.output;
    auto j = nlohmann::json::parse(slurp(dir / "oracle.json"));
    ASSERT_EQ(j.size(), 5u);
    for (const auto& rep : j) {
        EXPECT_TRUE(rep["passed"].get<bool>()) << rep.dump();
        EXPECT_GT(rep["checks"].get<int>(), 0);
    }
    EXPECT_NE(r.output.find("all oracles passed"), std::string::npos);
}
