#pragma once
// File formats: vocabulary files, rule files, JSONL documents and
// predictions. Parse errors name the file and line.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rulex/core.hpp"
#include "rulex/metrics.hpp"

namespace rulex {

namespace fs = std::filesystem;

inline std::string located(const std::string& path, std::size_t line, const std::string& what) {
    return path + ":" + std::to_string(line) + ": " + what;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "' for reading");
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    return out;
}

inline std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

// One base relation name per line; a "#self" suffix marks it self-inverse.
// Blank lines are ignored.
inline RelationVocab parse_vocab(std::istream& in, const std::string& origin = "<vocab>") {
    std::vector<std::string> names;
    std::set<std::string> self;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        std::string t = trim(line);
        if (t.empty()) continue;
        bool is_self = false;
        if (t.size() >= 5 && t.compare(t.size() - 5, 5, "#self") == 0) {
            is_self = true;
            t = trim(t.substr(0, t.size() - 5));
        }
        if (t.empty() || t.find('#') != std::string::npos) throw Error(located(origin, no, "malformed relation line"));
        names.push_back(t);
        if (is_self) self.insert(t);
    }
    try {
        return build_vocab(names, self);
    } catch (const Error& e) {
        throw Error(origin + ": " + e.what());
    }
}

inline RelationVocab read_vocab(const std::string& path) {
    auto in = open_input(path);
    return parse_vocab(in, path);
}

inline void write_vocab(std::ostream& out, const RelationVocab& vocab) {
    for (const auto& [name, self] : vocab.base_names()) out << name << (self ? "#self" : "") << '\n';
}

inline std::vector<ParsedRule> parse_rules(std::istream& in, const RelationVocab& vocab, std::size_t max_len,
                                           const std::string& origin = "<rules>") {
    std::vector<ParsedRule> rules;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        try {
            rules.push_back(parse_rule(t, vocab, max_len));
        } catch (const Error& e) {
            throw Error(located(origin, no, e.what()));
        }
    }
    return rules;
}

inline std::vector<ParsedRule> read_rules(const std::string& path, const RelationVocab& vocab,
                                          std::size_t max_len = kDefaultMaxRuleLength) {
    auto in = open_input(path);
    return parse_rules(in, vocab, max_len, path);
}

// {"doc_id", "entities", "atoms": [[h, rel, t, conf]], "facts": [[h, rel, t, label]]}
// Only base-relation atoms are written; readers restore inverses.
inline nlohmann::json document_to_json(const Document& doc, const std::vector<LabeledInstance>& facts,
                                       const RelationVocab& vocab) {
    nlohmann::json atoms = nlohmann::json::array(), labeled = nlohmann::json::array();
    for (const auto& [t, c] : doc.atoms())
        if (vocab.is_base(t.rel)) atoms.push_back({t.head, vocab.name(t.rel), t.tail, c});
    for (const auto& f : facts) labeled.push_back({f.query.head, vocab.name(f.query.rel), f.query.tail, f.label});
    return {{"doc_id", doc.id()}, {"entities", doc.entities()}, {"atoms", std::move(atoms)}, {"facts", std::move(labeled)}};
}

struct ParsedDocument {
    Document doc;
    std::vector<LabeledInstance> facts;
};

inline ParsedDocument document_from_json(const nlohmann::json& j, const RelationVocab& vocab) {
    auto id = j.at("doc_id").get<std::string>();
    auto entities = j.at("entities").get<std::vector<std::string>>();
    auto entity = [&](const nlohmann::json& v) {
        auto e = v.get<std::int64_t>();
        if (e < 0 || static_cast<std::size_t>(e) >= entities.size())
            throw Error("entity id " + std::to_string(e) + " out of range");
        return static_cast<EntityId>(e);
    };
    std::map<Triple, double> atoms;
    for (const auto& a : j.at("atoms")) {
        if (!a.is_array() || a.size() != 4) throw Error("atom must be [h, relation, t, confidence]");
        Triple t{entity(a[0]), vocab.id(a[1].get<std::string>()), entity(a[2])};
        double c = a[3].get<double>();
        if (!(c >= 0.0 && c <= 1.0)) throw Error("confidence " + std::to_string(c) + " outside [0,1]");
        auto [it, fresh] = atoms.emplace(t, c);
        if (!fresh && std::abs(it->second - c) > kInverseTolerance)
            throw Error("duplicate atom with conflicting confidence");
    }
    ParsedDocument out;
    std::set<Triple> gold;
    for (const auto& f : j.value("facts", nlohmann::json::array())) {
        if (!f.is_array() || f.size() != 4) throw Error("fact must be [h, relation, t, label]");
        Triple t{entity(f[0]), vocab.id(f[1].get<std::string>()), entity(f[2])};
        int label = f[3].get<int>();
        if (label != 1 && label != -1) throw Error("fact label must be 1 or -1");
        if (label == 1) gold.insert(t);
        out.facts.push_back({id, t, label});
    }
    out.doc = close_inverses(Document(id, std::move(entities), vocab.size(), std::move(atoms), std::move(gold)), vocab);
    return out;
}

inline Corpus parse_documents(std::istream& in, const RelationVocab& vocab, const std::string& origin = "<documents>") {
    std::vector<Document> docs;
    std::vector<LabeledInstance> instances;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (trim(line).empty()) continue;
        try {
            auto parsed = document_from_json(nlohmann::json::parse(line), vocab);
            docs.push_back(std::move(parsed.doc));
            instances.insert(instances.end(), parsed.facts.begin(), parsed.facts.end());
        } catch (const std::exception& e) {
            throw Error(located(origin, no, e.what()));
        }
    }
    try {
        return Corpus(std::move(docs), std::move(instances));
    } catch (const Error& e) {
        throw Error(origin + ": " + e.what());
    }
}

inline Corpus read_documents(const std::string& path, const RelationVocab& vocab) {
    auto in = open_input(path);
    return parse_documents(in, vocab, path);
}

inline void write_documents(std::ostream& out, const Corpus& corpus, const RelationVocab& vocab) {
    std::map<std::string, std::vector<LabeledInstance>> by_doc;
    for (const auto& inst : corpus.instances()) by_doc[inst.doc_id].push_back(inst);
    for (const auto& doc : corpus.docs()) out << document_to_json(doc, by_doc[doc.id()], vocab).dump() << '\n';
}

inline GoldSet gold_of(const Corpus& corpus) {
    GoldSet gold;
    for (const auto& doc : corpus.docs()) gold[doc.id()] = doc.gold_facts();
    return gold;
}

inline EntityNames entity_names_of(const Corpus& corpus) {
    EntityNames names;
    for (const auto& doc : corpus.docs()) names[doc.id()] = doc.entities();
    return names;
}

inline std::set<NamedTriple> named_facts_of(const Corpus& corpus) {
    std::set<NamedTriple> out;
    for (const auto& doc : corpus.docs())
        for (const auto& t : doc.gold_facts()) out.insert({doc.entities()[t.head], t.rel, doc.entities()[t.tail]});
    return out;
}

// {"doc_id", "triples": [[h, rel, t, prob]]}, optionally with "explanations".
inline PredictionSet parse_predictions(std::istream& in, const RelationVocab& vocab,
                                       const std::string& origin = "<predictions>") {
    PredictionSet out;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (trim(line).empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            auto id = j.at("doc_id").get<std::string>();
            if (out.count(id)) throw Error("duplicate document '" + id + "'");
            auto& triples = out[id];
            for (const auto& t : j.at("triples")) {
                if (!t.is_array() || t.size() != 4) throw Error("triple must be [h, relation, t, prob]");
                Triple tr{t[0].get<EntityId>(), vocab.id(t[1].get<std::string>()), t[2].get<EntityId>()};
                double p = t[3].get<double>();
                if (!(p >= 0.0 && p <= 1.0)) throw Error("probability outside [0,1]");
                if (!triples.emplace(tr, p).second) throw Error("duplicate predicted triple");
            }
        } catch (const std::exception& e) {
            throw Error(located(origin, no, e.what()));
        }
    }
    return out;
}

inline PredictionSet read_predictions(const std::string& path, const RelationVocab& vocab) {
    auto in = open_input(path);
    return parse_predictions(in, vocab, path);
}

inline void write_text_file(const std::string& path, const std::string& content) {
    auto out = open_output(path);
    out << content;
    if (!out) throw Error("failed writing '" + path + "'");
}

inline std::string read_text_file(const std::string& path) {
    auto in = open_input(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace rulex
