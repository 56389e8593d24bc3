#pragma once
// Micro-averaged F1, ign F1 (facts seen in training excluded), and the logic
// score: the precision of a fixed rule set over a prediction set.

#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "rulex/core.hpp"

namespace rulex {

// doc id -> predicted positive triples with their probabilities.
using PredictionSet = std::map<std::string, std::map<Triple, double>>;
// doc id -> gold fact triples.
using GoldSet = std::map<std::string, std::set<Triple>>;

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0;
};

inline Prf prf_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    Prf out{0.0, 0.0, 0.0, tp, fp, fn};
    if (tp + fp > 0) out.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) out.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    // 2PR/(P+R) rewritten on counts, which rounds once instead of three times.
    if (tp > 0) out.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    return out;
}

namespace detail {

template <typename Keep>
Prf count_prf(const PredictionSet& predictions, const GoldSet& gold, Keep&& keep) {
    for (const auto& [doc, triples] : predictions)
        if (!gold.count(doc)) throw Error("predictions reference unknown document '" + doc + "'");
    std::size_t tp = 0, fp = 0, fn = 0;
    static const std::map<Triple, double> kNone;
    for (const auto& [doc, facts] : gold) {
        auto pit = predictions.find(doc);
        const auto& pred = pit == predictions.end() ? kNone : pit->second;
        for (const auto& [t, p] : pred) {
            if (!keep(doc, t)) continue;
            facts.count(t) ? ++tp : ++fp;
        }
        for (const auto& t : facts)
            if (keep(doc, t) && !pred.count(t)) ++fn;
    }
    return prf_from_counts(tp, fp, fn);
}

}  // namespace detail

inline Prf f1(const PredictionSet& predictions, const GoldSet& gold) {
    return detail::count_prf(predictions, gold, [](const std::string&, const Triple&) { return true; });
}

// Backbone-only predictions: every base-relation atom between distinct
// entities whose raw confidence exceeds `threshold`.
inline PredictionSet threshold_predictions(const std::vector<Document>& docs, const RelationVocab& vocab,
                                           double threshold = 0.5) {
    PredictionSet out;
    for (const auto& doc : docs) {
        auto& triples = out[doc.id()];
        for (const auto& [t, c] : doc.atoms())
            if (vocab.is_base(t.rel) && t.head != t.tail && c > threshold) triples.emplace(t, c);
    }
    return out;
}

// (head entity name, relation, tail entity name)
using NamedTriple = std::tuple<std::string, RelationId, std::string>;

// Entity names per document, for mapping triples to NamedTriple.
using EntityNames = std::map<std::string, std::vector<std::string>>;

inline Prf ign_f1(const PredictionSet& predictions, const GoldSet& gold, const EntityNames& names,
                  const std::set<NamedTriple>& train_facts) {
    return detail::count_prf(predictions, gold, [&](const std::string& doc, const Triple& t) {
        if (train_facts.empty()) return true;
        auto it = names.find(doc);
        if (it == names.end()) throw Error("no entity names for document '" + doc + "'");
        const auto& ents = it->second;
        if (t.head < 0 || t.tail < 0 || static_cast<std::size_t>(std::max(t.head, t.tail)) >= ents.size())
            throw Error("entity id out of range in document '" + doc + "'");
        return !train_facts.count({ents[t.head], t.rel, ents[t.tail]});
    });
}

struct LogicScore {
    double score = 1.0;
    std::size_t bindings = 0;    // bindings whose whole body is predicted
    std::size_t consistent = 0;  // ... whose head is predicted too
    bool vacuous = true;         // no body-satisfied binding anywhere
};

// Bindings with e0 == el are skipped: a head atom r(e, e) is never a query.
inline LogicScore logic_score(const PredictionSet& predictions, const std::vector<Rule>& eval_rules,
                              const RelationVocab& vocab) {
    LogicScore out;
    for (const auto& [doc, triples] : predictions) {
        // Predicted atoms closed under inverses, as (head, relation) -> tails.
        std::map<std::pair<EntityId, RelationId>, std::vector<EntityId>> adj;
        std::set<Triple> holds;
        for (const auto& [t, p] : triples) {
            holds.insert(t);
            holds.insert({t.tail, vocab.inverse(t.rel), t.head});
        }
        for (const auto& t : holds) adj[{t.head, t.rel}].push_back(t.tail);

        std::set<EntityId> starts;
        for (const auto& t : holds) starts.insert(t.head);
        for (const auto& rule : eval_rules) {
            std::vector<EntityId> path;
            auto walk = [&](auto&& self, EntityId at, std::size_t i) -> void {
                if (i == rule.body.size()) {
                    if (path.front() == at) return;
                    ++out.bindings;
                    if (holds.count({path.front(), rule.head, at})) ++out.consistent;
                    return;
                }
                auto it = adj.find({at, rule.body[i]});
                if (it == adj.end()) return;
                for (EntityId next : it->second) self(self, next, i + 1);
            };
            for (EntityId s : starts) {
                path.assign(1, s);
                walk(walk, s, 0);
            }
        }
    }
    out.vacuous = out.bindings == 0;
    out.score = out.vacuous ? 1.0 : static_cast<double>(out.consistent) / static_cast<double>(out.bindings);
    return out;
}

}  // namespace rulex
