#pragma once
// The command implementations behind the rulex binary: synth, train, infer,
// eval and oracle. Each echoes its resolved configuration before working and
// returns a process exit code.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rulex/config.hpp"
#include "rulex/datagen.hpp"
#include "rulex/em.hpp"
#include "rulex/io.hpp"
#include "rulex/metrics.hpp"
#include "rulex/oracle.hpp"

namespace rulex::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;  // command ran but its check failed
inline constexpr int kExitError = 2;   // bad input or configuration

// Common overrides; unset fields keep the file or default value.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<std::string> inference_mode;
};

inline RunConfig resolve_config(const std::string& config_path, const Overrides& o) {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
        try {
            j = nlohmann::json::parse(read_text_file(config_path));
        } catch (const nlohmann::json::exception& e) {
            throw Error(config_path + ": " + e.what());
        }
    }
    RunConfig c;
    try {
        c = run_config_from_json(j);
    } catch (const Error& e) {
        throw Error((config_path.empty() ? std::string("defaults") : config_path) + ": " + e.what());
    }
    if (o.seed) c.seed = *o.seed;
    if (o.threads) c.threads = *o.threads;
    if (o.inference_mode) c.em.mode = parse_inference_mode(*o.inference_mode);
    c.threads = resolve_threads(c.threads);
    finalize(c);
    return c;
}

inline void echo_config(std::ostream& log, const std::string& command, const RunConfig& c) {
    log << "rulex " << command << " config " << to_json(c).dump() << '\n';
}

// Creates `dir` (its parent must exist) or accepts an existing directory.
inline void make_output_dir(const std::string& dir) {
    fs::path p(dir);
    if (p.empty()) throw Error("output directory not given");
    if (fs::is_directory(p)) return;
    auto parent = p.has_parent_path() ? p.parent_path() : fs::path(".");
    if (!fs::is_directory(parent)) throw Error("parent of output directory '" + dir + "' does not exist");
    std::error_code ec;
    fs::create_directory(p, ec);
    if (ec) throw Error("cannot create output directory '" + dir + "': " + ec.message());
}

// Exclusive ownership of a run directory for the lifetime of the object.
class DirLock {
public:
    explicit DirLock(const std::string& dir) : path_((fs::path(dir) / ".lock").string()) {
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (!f) throw Error("directory '" + dir + "' is locked by another command (remove " + path_ + " if stale)");
        std::fclose(f);
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::string path_;
};

inline std::string join(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

// ---------------------------------------------------------------- synth

inline int synth(const std::string& config_path, const Overrides& o, const std::string& out_dir, std::ostream& log) {
    auto cfg = resolve_config(config_path, o);
    echo_config(log, "synth", cfg);
    make_output_dir(out_dir);
    DirLock lock(out_dir);
    auto corpus = gen_corpus(cfg.synth);
    {
        auto f = open_output(join(out_dir, "vocab.txt"));
        write_vocab(f, corpus.vocab);
    }
    {
        auto f = open_output(join(out_dir, "rules.txt"));
        for (const auto& r : corpus.planted) f << format_rule(r, corpus.vocab) << '\n';
    }
    const std::pair<const char*, const Corpus*> splits[] = {
        {"train.jsonl", &corpus.train}, {"dev.jsonl", &corpus.dev}, {"test.jsonl", &corpus.test}};
    for (const auto& [name, c] : splits) {
        auto f = open_output(join(out_dir, name));
        write_documents(f, *c, corpus.vocab);
    }
    write_text_file(join(out_dir, "config.json"), to_json(cfg).dump(2) + "\n");
    log << "wrote " << corpus.train.docs().size() << "/" << corpus.dev.docs().size() << "/"
        << corpus.test.docs().size() << " train/dev/test documents and " << corpus.planted.size()
        << " planted rules to " << out_dir << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- train

inline std::string diagnostics_header() { return "iteration,L_G,L_R,train_f1,fit_loss_start,fit_loss_end,fit_steps\n"; }

inline std::string diagnostics_row(const IterationDiagnostics& d) {
    std::ostringstream os;
    os << d.iteration << ',' << format_double(d.generator_objective) << ',' << format_double(d.extractor_objective)
       << ',' << format_double(d.train_f1) << ',' << format_double(d.fit_losses.front()) << ','
       << format_double(d.fit_losses.back()) << ',' << (d.fit_losses.size() - 1) << '\n';
    return os.str();
}

// Top rules per base relation with their prior and weight, for reading.
inline std::string learned_rules_text(const RuleGenerator& gen, const ExtractorWeights& w, const RelationVocab& vocab,
                                      std::size_t per_head) {
    std::ostringstream os;
    for (RelationId r = 0; static_cast<std::size_t>(r) < vocab.num_base(); ++r) {
        auto set = gen.top_rules(r, per_head, std::max<std::size_t>(per_head, 64));
        for (const auto& [rule, m] : set.unique())
            os << format_rule(rule, vocab) << "\tlog_prior=" << format_double(gen.log_prob(rule))
               << "\tweight=" << format_double(w.weight_of(rule)) << '\n';
    }
    return os.str();
}

inline int train(const std::string& corpus_dir, const std::string& config_path, const Overrides& o,
                 const std::string& run_dir, std::ostream& log) {
    auto cfg = resolve_config(config_path, o);
    echo_config(log, "train", cfg);
    auto vocab = read_vocab(join(corpus_dir, "vocab.txt"));
    auto corpus = read_documents(join(corpus_dir, "train.jsonl"), vocab);
    make_output_dir(run_dir);
    DirLock lock(run_dir);
    write_text_file(join(run_dir, "config.json"), to_json(cfg).dump(2) + "\n");
    {
        auto f = open_output(join(run_dir, "vocab.txt"));
        write_vocab(f, vocab);
    }
    auto diag = open_output(join(run_dir, "diagnostics.csv"));
    diag << diagnostics_header();
    auto result = run_em(corpus, vocab, cfg.em, [&](const IterationDiagnostics& d) {
        diag << diagnostics_row(d) << std::flush;
        log << "iteration " << d.iteration << ": L_G " << d.generator_objective << ", L_R " << d.extractor_objective
            << ", train F1 " << d.train_f1 << '\n';
    });
    write_text_file(join(run_dir, "generator.json"), result.generator.to_json().dump() + "\n");
    write_text_file(join(run_dir, "extractor.json"), weights_to_json(result.weights, vocab).dump() + "\n");
    write_text_file(join(run_dir, "learned_rules.txt"), learned_rules_text(result.generator, result.weights, vocab, 5));
    log << "trained " << result.diagnostics.size() << " iteration(s)" << (result.converged ? " (converged)" : "")
        << "; checkpoints in " << run_dir << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- infer

struct Checkpoint {
    RunConfig config;
    RelationVocab vocab;
    RuleGenerator generator;
    ExtractorWeights weights;
};

inline Checkpoint load_checkpoint(const std::string& run_dir, const Overrides& o) {
    Checkpoint c;
    c.config = resolve_config(join(run_dir, "config.json"), o);
    c.vocab = read_vocab(join(run_dir, "vocab.txt"));
    try {
        c.generator = RuleGenerator::from_json(nlohmann::json::parse(read_text_file(join(run_dir, "generator.json"))));
        c.weights = weights_from_json(nlohmann::json::parse(read_text_file(join(run_dir, "extractor.json"))), c.vocab,
                                      c.generator.max_len());
    } catch (const nlohmann::json::exception& e) {
        throw Error("corrupt checkpoint in '" + run_dir + "': " + e.what());
    }
    if (c.generator.num_relations() != c.vocab.size())
        throw Error("generator checkpoint does not match the vocabulary in '" + run_dir + "'");
    return c;
}

inline nlohmann::json prediction_line(const Document& doc, const std::vector<TriplePrediction>& preds,
                                      const RelationVocab& vocab) {
    nlohmann::json triples = nlohmann::json::array(), explanations = nlohmann::json::array();
    for (const auto& p : preds) {
        const auto& t = p.triple;
        triples.push_back({t.head, vocab.name(t.rel), t.tail, p.prob});
        nlohmann::json e = {{"triple", {t.head, vocab.name(t.rel), t.tail}}};
        if (p.best) {
            e["rule"] = format_rule(p.best->rule, vocab);
            e["weight"] = p.best->weight;
            e["grounding"] = p.best->grounding;
            e["contribution"] = p.best->contribution;
            e["path"] = p.best->path;
        } else {
            e["rule"] = nullptr;
        }
        explanations.push_back(std::move(e));
    }
    return {{"doc_id", doc.id()}, {"triples", std::move(triples)}, {"explanations", std::move(explanations)}};
}

inline int infer(const std::string& run_dir, const std::string& docs_path, const Overrides& o,
                 const std::string& out_path, std::ostream& log) {
    if (!fs::is_directory(run_dir)) throw Error("run directory '" + run_dir + "' does not exist");
    DirLock lock(run_dir);
    auto ck = load_checkpoint(run_dir, o);
    echo_config(log, "infer", ck.config);
    auto corpus = read_documents(docs_path, ck.vocab);
    const auto& docs = corpus.docs();
    std::vector<std::string> lines(docs.size());
    std::size_t positives = 0;
    std::vector<std::size_t> counts(docs.size());
    parallel_for(docs.size(), ck.config.threads, [&](std::size_t i) {
        auto preds = predict_document(docs[i], ck.vocab, ck.generator, ck.weights, ck.config.em);
        counts[i] = preds.size();
        lines[i] = prediction_line(docs[i], preds, ck.vocab).dump();
    });
    auto out = open_output(out_path);
    for (std::size_t i = 0; i < docs.size(); ++i) {
        out << lines[i] << '\n';
        positives += counts[i];
    }
    log << "predicted " << positives << " positive triple(s) over " << docs.size() << " document(s) into " << out_path
        << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalInputs {
    std::string predictions;
    std::string gold;
    std::string vocab;
    std::string train;  // optional: facts excluded by ign F1
    std::string rules;  // optional: rules for the logic score
    std::string out;    // optional: JSON report path
};

struct EvalReport {
    Prf f1;
    Prf ign;
    std::optional<LogicScore> logic;
};

inline nlohmann::json to_json(const Prf& p) {
    return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}, {"tp", p.tp}, {"fp", p.fp}, {"fn", p.fn}};
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j = {{"f1", to_json(r.f1)}, {"ign_f1", to_json(r.ign)}};
    if (r.logic)
        j["logic"] = {{"score", r.logic->score},
                      {"bindings", r.logic->bindings},
                      {"consistent", r.logic->consistent},
                      {"vacuous", r.logic->vacuous}};
    else
        j["logic"] = nullptr;
    return j;
}

inline std::string eval_table(const EvalReport& r) {
    std::ostringstream os;
    os << std::left << std::setw(8) << "metric" << std::right << std::setw(11) << "precision" << std::setw(11)
       << "recall" << std::setw(11) << "f1" << std::setw(7) << "tp" << std::setw(7) << "fp" << std::setw(7) << "fn"
       << '\n';
    auto row = [&](const char* name, const Prf& p) {
        os << std::left << std::setw(8) << name << std::right << std::fixed << std::setprecision(6) << std::setw(11)
           << p.precision << std::setw(11) << p.recall << std::setw(11) << p.f1 << std::setw(7) << p.tp << std::setw(7)
           << p.fp << std::setw(7) << p.fn << '\n';
    };
    row("f1", r.f1);
    row("ign_f1", r.ign);
    if (r.logic)
        os << std::left << std::setw(8) << "logic" << std::right << std::fixed << std::setprecision(6) << std::setw(11)
           << r.logic->score << "  (" << r.logic->consistent << "/" << r.logic->bindings << " bindings"
           << (r.logic->vacuous ? ", vacuous" : "") << ")\n";
    return os.str();
}

inline EvalReport evaluate(const EvalInputs& in) {
    auto vocab = read_vocab(in.vocab);
    auto gold_corpus = read_documents(in.gold, vocab);
    auto preds = read_predictions(in.predictions, vocab);
    auto gold = gold_of(gold_corpus);
    auto names = entity_names_of(gold_corpus);
    for (const auto& [doc, triples] : preds) {
        if (!names.count(doc)) throw Error(in.predictions + ": unknown document '" + doc + "'");
        for (const auto& [t, p] : triples)
            if (t.head < 0 || t.tail < 0 || static_cast<std::size_t>(std::max(t.head, t.tail)) >= names[doc].size())
                throw Error(in.predictions + ": entity id out of range in document '" + doc + "'");
    }
    EvalReport r;
    r.f1 = f1(preds, gold);
    std::set<NamedTriple> train_facts;
    if (!in.train.empty()) train_facts = named_facts_of(read_documents(in.train, vocab));
    r.ign = ign_f1(preds, gold, names, train_facts);
    if (!in.rules.empty()) {
        std::vector<Rule> rules;
        for (auto& pr : read_rules(in.rules, vocab)) rules.push_back(pr.rule);
        r.logic = logic_score(preds, rules, vocab);
    }
    return r;
}

inline int eval(const EvalInputs& in, std::ostream& log) {
    log << "rulex eval config "
        << nlohmann::json{{"predictions", in.predictions},
                          {"gold", in.gold},
                          {"vocab", in.vocab},
                          {"train", in.train},
                          {"rules", in.rules},
                          {"out", in.out}}
               .dump()
        << '\n';
    auto report = evaluate(in);
    if (!in.out.empty()) write_text_file(in.out, to_json(report).dump(2) + "\n");
    log << eval_table(report);
    return kExitOk;
}

// ---------------------------------------------------------------- oracle

inline std::string oracle_table(const std::vector<oracle::Report>& reports) {
    std::ostringstream os;
    os << std::left << std::setw(11) << "oracle" << std::setw(6) << "status" << std::right << std::setw(8) << "cases"
       << std::setw(10) << "checks" << std::setw(10) << "failures" << std::setw(13) << "max_error" << std::setw(10)
       << "seconds" << '\n';
    for (const auto& r : reports) {
        os << std::left << std::setw(11) << r.name << std::setw(6) << (r.passed() ? "PASS" : "FAIL") << std::right
           << std::setw(8) << r.cases << std::setw(10) << r.checks << std::setw(10) << r.failures << std::setw(13)
           << std::scientific << std::setprecision(3) << r.max_error << std::setw(10) << std::fixed
           << std::setprecision(3) << r.seconds << '\n';
        if (!r.first_failure.empty()) os << "  first failure: " << r.first_failure << '\n';
    }
    return os.str();
}

inline nlohmann::json to_json(const oracle::Report& r) {
    return {{"name", r.name},         {"passed", r.passed()},     {"cases", r.cases},
            {"checks", r.checks},     {"failures", r.failures},   {"max_error", r.max_error},
            {"seconds", r.seconds},   {"first_failure", r.first_failure}};
}

inline int run_oracle(const std::string& scope, std::uint64_t seed, const std::string& out, std::ostream& log) {
    log << "rulex oracle config " << nlohmann::json{{"scope", scope}, {"seed", seed}, {"out", out}}.dump() << '\n';
    auto reports = oracle::run(scope, seed);
    log << oracle_table(reports);
    bool ok = true;
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) {
        ok = ok && r.passed();
        j.push_back(to_json(r));
    }
    if (!out.empty()) write_text_file(out, j.dump(2) + "\n");
    log << (ok ? "all oracles passed" : "oracle failures detected") << '\n';
    return ok ? kExitOk : kExitFailed;
}

}  // namespace rulex::cli
