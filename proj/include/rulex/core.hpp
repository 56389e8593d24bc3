#pragma once
// Domain vocabulary shared by every rulex module: relation vocabularies,
// conjunctive rules, documents as sparse confidence graphs, and labeled
// queries.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace rulex {

using RelationId = std::int32_t;
using EntityId = std::int32_t;

inline constexpr std::size_t kDefaultMaxRuleLength = 3;
inline constexpr std::string_view kInverseSuffix = "⁻¹";

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Relation names, their inverses, and the STOP symbol used by the rule
// generator. Base relations occupy ids [0, num_base()); inverses of the
// non-self-inverse ones are appended in declaration order.
class RelationVocab {
public:
    RelationVocab() = default;

    std::size_t size() const { return names_.size(); }
    std::size_t num_base() const { return num_base_; }
    // STOP is one past the last relation id and is never a relation.
    RelationId stop() const { return static_cast<RelationId>(names_.size()); }

    bool valid(RelationId r) const { return r >= 0 && static_cast<std::size_t>(r) < names_.size(); }
    bool is_base(RelationId r) const { return r >= 0 && static_cast<std::size_t>(r) < num_base_; }
    bool self_inverse(RelationId r) const { return valid(r) && inverse_[r] == r; }

    const std::string& name(RelationId r) const {
        check(r);
        return names_[r];
    }

    RelationId inverse(RelationId r) const {
        check(r);
        return inverse_[r];
    }

    std::optional<RelationId> find(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    RelationId id(std::string_view name) const {
        if (auto r = find(name)) return *r;
        throw Error("unknown relation '" + std::string(name) + "'");
    }

    // Base names with their self-inverse flag, in declaration order.
    std::vector<std::pair<std::string, bool>> base_names() const {
        std::vector<std::pair<std::string, bool>> out;
        for (std::size_t i = 0; i < num_base_; ++i)
            out.emplace_back(names_[i], inverse_[i] == static_cast<RelationId>(i));
        return out;
    }

    friend RelationVocab build_vocab(const std::vector<std::string>& names,
                                     const std::set<std::string>& self_inverse);

private:
    void check(RelationId r) const {
        if (!valid(r)) throw std::out_of_range("relation id " + std::to_string(r) + " out of range");
    }

    std::vector<std::string> names_;
    std::vector<RelationId> inverse_;
    std::unordered_map<std::string, RelationId> index_;
    std::size_t num_base_ = 0;
};

inline RelationVocab build_vocab(const std::vector<std::string>& names,
                                 const std::set<std::string>& self_inverse) {
    if (names.empty()) throw Error("relation vocabulary is empty");
    RelationVocab v;
    for (const auto& n : names) {
        if (n.empty()) throw Error("empty relation name");
        if (n.find_first_of(" \t&<") != std::string::npos)
            throw Error("relation name '" + n + "' contains a reserved character");
        if (!v.index_.emplace(n, static_cast<RelationId>(v.names_.size())).second)
            throw Error("duplicate relation name '" + n + "'");
        v.names_.push_back(n);
    }
    for (const auto& s : self_inverse) {
        if (!v.index_.count(s)) throw Error("self-inverse relation '" + s + "' is not declared");
    }
    v.num_base_ = names.size();
    v.inverse_.assign(names.size(), -1);
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (self_inverse.count(names[i])) {
            v.inverse_[i] = static_cast<RelationId>(i);
            continue;
        }
        std::string inv = names[i] + std::string(kInverseSuffix);
        auto id = static_cast<RelationId>(v.names_.size());
        if (!v.index_.emplace(inv, id).second) throw Error("duplicate relation name '" + inv + "'");
        v.names_.push_back(inv);
        v.inverse_.push_back(static_cast<RelationId>(i));
        v.inverse_[i] = id;
    }
    return v;
}

// head(e0, el) <- body[0](e0, e1) & ... & body[l-1](e(l-1), el)
struct Rule {
    RelationId head = 0;
    std::vector<RelationId> body;

    std::size_t length() const { return body.size(); }

    friend bool operator==(const Rule&, const Rule&) = default;
    friend auto operator<=>(const Rule&, const Rule&) = default;
};

struct RuleHash {
    std::size_t operator()(const Rule& r) const noexcept {
        std::size_t h = std::hash<RelationId>{}(r.head) * 0x9e3779b97f4a7c15ULL;
        for (RelationId x : r.body) h = (h ^ static_cast<std::size_t>(x + 1)) * 0x100000001b3ULL;
        return h;
    }
};

inline void validate_rule(const Rule& rule, const RelationVocab& vocab,
                          std::size_t max_len = kDefaultMaxRuleLength) {
    if (!vocab.valid(rule.head)) throw Error("rule head id " + std::to_string(rule.head) + " is invalid");
    if (rule.body.empty()) throw Error("rule body is empty");
    if (rule.body.size() > max_len)
        throw Error("rule body length " + std::to_string(rule.body.size()) + " exceeds maximum " +
                    std::to_string(max_len));
    for (RelationId r : rule.body)
        if (!vocab.valid(r)) throw Error("rule body id " + std::to_string(r) + " is invalid");
}

// "head <- r1 & r2 & r3", followed by " weight" when a weight is given.
inline std::string format_rule(const Rule& rule, const RelationVocab& vocab,
                               std::optional<double> weight = std::nullopt) {
    std::string out = vocab.name(rule.head) + " <-";
    for (std::size_t i = 0; i < rule.body.size(); ++i) {
        out += i == 0 ? " " : " & ";
        out += vocab.name(rule.body[i]);
    }
    if (weight) {
        std::ostringstream ss;
        ss.precision(17);
        ss << *weight;
        out += " " + ss.str();
    }
    return out;
}

struct ParsedRule {
    Rule rule;
    double weight = 0.0;
};

// Accepts the weight either bare ("... & r3 0.5") or bracketed ("... & r3 [0.5]").
inline ParsedRule parse_rule(std::string_view line, const RelationVocab& vocab,
                             std::size_t max_len = kDefaultMaxRuleLength) {
    std::istringstream in{std::string(line)};
    std::vector<std::string> tok;
    for (std::string t; in >> t;) tok.push_back(t);
    if (tok.size() < 3 || tok[1] != "<-") throw Error("malformed rule '" + std::string(line) + "'");

    ParsedRule out;
    out.rule.head = vocab.id(tok[0]);
    std::size_t i = 2;
    for (;;) {
        if (i >= tok.size()) throw Error("malformed rule '" + std::string(line) + "'");
        out.rule.body.push_back(vocab.id(tok[i++]));
        if (i < tok.size() && tok[i] == "&") {
            ++i;
            continue;
        }
        break;
    }
    if (i < tok.size()) {
        std::string w = tok[i++];
        if (w.size() >= 2 && w.front() == '[' && w.back() == ']') w = w.substr(1, w.size() - 2);
        try {
            std::size_t used = 0;
            out.weight = std::stod(w, &used);
            if (used != w.size()) throw std::invalid_argument(w);
        } catch (const std::exception&) {
            throw Error("malformed rule weight '" + tok[i - 1] + "'");
        }
        if (!std::isfinite(out.weight)) throw Error("non-finite rule weight '" + tok[i - 1] + "'");
    }
    if (i != tok.size()) throw Error("trailing tokens in rule '" + std::string(line) + "'");
    validate_rule(out.rule, vocab, max_len);
    return out;
}

// The latent rule set: a multiset of rules sharing one head.
struct RuleSet {
    std::vector<Rule> rules;

    std::size_t size() const { return rules.size(); }

    // Distinct rules with multiplicities, in order of first occurrence.
    std::vector<std::pair<Rule, std::size_t>> unique() const {
        std::vector<std::size_t> order(rules.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rules[a] < rules[b]; });
        // (first occurrence, count) per distinct rule
        std::vector<std::pair<std::size_t, std::size_t>> groups;
        for (std::size_t k = 0; k < order.size(); ++k) {
            if (k > 0 && rules[order[k]] == rules[order[k - 1]])
                ++groups.back().second;
            else
                groups.emplace_back(order[k], 1);
        }
        std::sort(groups.begin(), groups.end());
        std::vector<std::pair<Rule, std::size_t>> out;
        out.reserve(groups.size());
        for (const auto& [first, count] : groups) out.emplace_back(rules[first], count);
        return out;
    }
};

struct Triple {
    EntityId head = 0;
    RelationId rel = 0;
    EntityId tail = 0;

    friend bool operator==(const Triple&, const Triple&) = default;
    friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct Edge {
    EntityId to;
    double conf;
};

// A document reduced to its entities and a sparse store of backbone
// confidences. Immutable once constructed; absent atoms read as 0.
class Document {
public:
    Document() = default;

    Document(std::string doc_id, std::vector<std::string> entities, std::size_t num_relations,
             std::map<Triple, double> atoms, std::set<Triple> gold_facts = {})
        : id_(std::move(doc_id)),
          entities_(std::move(entities)),
          num_relations_(num_relations),
          atoms_(std::move(atoms)),
          gold_(std::move(gold_facts)) {
        for (const auto& [t, c] : atoms_) {
            check_triple(t);
            if (!(c >= 0.0 && c <= 1.0))
                throw Error("document '" + id_ + "': confidence " + std::to_string(c) + " outside [0,1]");
        }
        for (const auto& t : gold_) check_triple(t);
        build_index();
    }

    const std::string& id() const { return id_; }
    const std::vector<std::string>& entities() const { return entities_; }
    std::size_t num_entities() const { return entities_.size(); }
    std::size_t num_relations() const { return num_relations_; }
    const std::map<Triple, double>& atoms() const { return atoms_; }
    const std::set<Triple>& gold_facts() const { return gold_; }

    double atom_conf(EntityId h, RelationId r, EntityId t) const {
        check_triple({h, r, t});
        auto it = atoms_.find({h, r, t});
        return it == atoms_.end() ? 0.0 : it->second;
    }

    // Positive-confidence atoms leaving `e` through relation `r`, ordered by tail.
    std::span<const Edge> out_edges(EntityId e, RelationId r) const {
        std::size_t slot = static_cast<std::size_t>(e) * num_relations_ + static_cast<std::size_t>(r);
        return {edges_.data() + offsets_[slot], edges_.data() + offsets_[slot + 1]};
    }

    bool valid_entity(EntityId e) const { return e >= 0 && static_cast<std::size_t>(e) < entities_.size(); }

private:
    void check_triple(const Triple& t) const {
        if (!valid_entity(t.head) || !valid_entity(t.tail))
            throw std::out_of_range("document '" + id_ + "': entity id out of range in (" +
                                    std::to_string(t.head) + ", " + std::to_string(t.rel) + ", " +
                                    std::to_string(t.tail) + ")");
        if (t.rel < 0 || static_cast<std::size_t>(t.rel) >= num_relations_)
            throw std::out_of_range("document '" + id_ + "': relation id " + std::to_string(t.rel) +
                                    " out of range");
    }

    void build_index() {
        std::size_t slots = entities_.size() * num_relations_;
        offsets_.assign(slots + 1, 0);
        for (const auto& [t, c] : atoms_)
            if (c > 0.0) ++offsets_[static_cast<std::size_t>(t.head) * num_relations_ + t.rel + 1];
        for (std::size_t i = 0; i < slots; ++i) offsets_[i + 1] += offsets_[i];
        edges_.resize(offsets_[slots]);
        // std::map iteration is (head, rel, tail)-sorted, which is exactly CSR order.
        std::size_t k = 0;
        for (const auto& [t, c] : atoms_)
            if (c > 0.0) edges_[k++] = Edge{t.tail, c};
    }

    std::string id_;
    std::vector<std::string> entities_;
    std::size_t num_relations_ = 0;
    std::map<Triple, double> atoms_;
    std::set<Triple> gold_;
    std::vector<std::size_t> offsets_{0};
    std::vector<Edge> edges_;
};

inline constexpr double kInverseTolerance = 1e-9;

// Materializes (t, r^-1, h) = c for every stored (h, r, t) = c.
inline Document close_inverses(const Document& doc, const RelationVocab& vocab) {
    if (doc.num_relations() != vocab.size())
        throw Error("document '" + doc.id() + "' relation count does not match vocabulary");
    std::map<Triple, double> atoms = doc.atoms();
    for (const auto& [t, c] : doc.atoms()) {
        Triple inv{t.tail, vocab.inverse(t.rel), t.head};
        auto [it, fresh] = atoms.emplace(inv, c);
        if (!fresh && std::abs(it->second - c) > kInverseTolerance) {
            throw Error("document '" + doc.id() + "': conflicting inverse confidence for (" +
                        std::to_string(t.head) + ", " + vocab.name(t.rel) + ", " + std::to_string(t.tail) +
                        ") = " + std::to_string(c) + " vs (" + std::to_string(inv.head) + ", " +
                        vocab.name(inv.rel) + ", " + std::to_string(inv.tail) + ") = " +
                        std::to_string(it->second));
        }
    }
    return Document(doc.id(), doc.entities(), doc.num_relations(), std::move(atoms), doc.gold_facts());
}

inline bool is_inverse_closed(const Document& doc, const RelationVocab& vocab) {
    for (const auto& [t, c] : doc.atoms()) {
        auto it = doc.atoms().find({t.tail, vocab.inverse(t.rel), t.head});
        if (it == doc.atoms().end() ? c != 0.0 : std::abs(it->second - c) > kInverseTolerance) return false;
    }
    return true;
}

struct LabeledInstance {
    std::string doc_id;
    Triple query;
    int label = 1;  // +1 or -1
};

// Documents plus the labeled queries over them. Index built at construction.
class Corpus {
public:
    Corpus() = default;
    Corpus(std::vector<Document> docs, std::vector<LabeledInstance> instances)
        : docs_(std::move(docs)), instances_(std::move(instances)) {
        for (std::size_t i = 0; i < docs_.size(); ++i)
            if (!index_.emplace(docs_[i].id(), i).second)
                throw Error("duplicate document id '" + docs_[i].id() + "'");
        for (const auto& inst : instances_) doc_index(inst.doc_id);
    }

    const std::vector<Document>& docs() const { return docs_; }
    const std::vector<LabeledInstance>& instances() const { return instances_; }
    bool empty() const { return instances_.empty(); }

    std::size_t doc_index(std::string_view id) const {
        auto it = index_.find(std::string(id));
        if (it == index_.end()) throw Error("unknown document '" + std::string(id) + "'");
        return it->second;
    }
    const Document& doc(std::string_view id) const { return docs_[doc_index(id)]; }
    const Document& doc_of(const LabeledInstance& inst) const { return doc(inst.doc_id); }

private:
    std::vector<Document> docs_;
    std::vector<LabeledInstance> instances_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline void validate_instance(const LabeledInstance& inst, const Document& doc, const RelationVocab& vocab) {
    if (inst.label != 1 && inst.label != -1)
        throw Error("instance label must be +1 or -1, got " + std::to_string(inst.label));
    if (!doc.valid_entity(inst.query.head) || !doc.valid_entity(inst.query.tail) || !vocab.valid(inst.query.rel))
        throw Error("instance query ids invalid for document '" + doc.id() + "'");
}

}  // namespace rulex
