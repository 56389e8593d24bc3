#pragma once
// Synthetic corpora with planted rules.
//
// Each document gets uniformly sampled base facts plus a few seeded
// instantiations of every planted rule body. One forward-chaining sweep per
// rule over the base facts yields the derived facts. Backbone confidences are
// near 1 for true atoms and near 0 for sampled false atoms, with label flips;
// a derived fact's own atom is withheld with probability p_hide, so only rule
// grounding can recover it.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rulex/core.hpp"
#include "rulex/util.hpp"

namespace rulex {

struct Range {
    std::int64_t lo = 0, hi = 0;
};

struct SynthConfig {
    std::size_t relations = 10;
    std::set<std::string> self_inverse;
    std::vector<std::string> planted_rules;  // rule text; random rules when empty
    std::size_t random_rules = 3;
    std::size_t random_rule_length = 2;
    std::size_t max_rule_length = kDefaultMaxRuleLength;
    std::size_t docs = 300;
    Range entities{8, 12};
    Range base_facts{12, 20};
    Range chains_per_rule{2, 4};  // seeded body instantiations per planted rule
    Range false_atoms{5, 10};
    std::size_t entity_pool = 1000;
    double p_flip = 0.05;
    double jitter = 0.2;
    double p_hide = 0.5;
    std::size_t negative_ratio = 4;
    std::vector<double> split{2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0};  // train, dev, test
    std::uint64_t seed = 1;
};

inline std::vector<std::string> synth_relation_names(std::size_t n) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("r" + std::to_string(i));
    return names;
}

inline void validate(const SynthConfig& c) {
    auto prob = [](double p, const char* what) {
        if (!(p >= 0.0 && p <= 1.0)) throw Error(std::string(what) + " must lie in [0,1]");
    };
    auto range = [](const Range& r, std::int64_t min, const char* what) {
        if (r.lo < min || r.hi < r.lo)
            throw Error(std::string(what) + " range [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) +
                        "] is invalid");
    };
    if (c.relations == 0) throw Error("synthetic corpus needs at least one relation");
    if (c.docs == 0) throw Error("synthetic corpus needs at least one document");
    range(c.entities, 2, "entities per document");
    range(c.base_facts, 0, "base facts per document");
    range(c.chains_per_rule, 0, "chains per rule");
    range(c.false_atoms, 0, "false atoms per document");
    prob(c.p_flip, "p_flip");
    prob(c.p_hide, "p_hide");
    if (!(c.jitter >= 0.0 && c.jitter < 0.5)) throw Error("jitter must lie in [0, 0.5)");
    if (c.split.size() != 3) throw Error("split needs train, dev and test fractions");
    double sum = 0.0;
    for (double f : c.split) {
        prob(f, "split fraction");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error("split fractions must sum to 1");
    if (c.entity_pool < static_cast<std::size_t>(c.entities.hi)) throw Error("entity pool smaller than a document");
    if (c.random_rule_length == 0 || c.random_rule_length > c.max_rule_length)
        throw Error("random rule length must lie in [1, max_rule_length]");
}

struct SynthCorpus {
    RelationVocab vocab;
    std::vector<Rule> planted;
    Corpus train, dev, test;
};

namespace detail {

// Base triple equivalent to atom (h, r, t) for any relation id. A
// self-inverse atom is stored with head <= tail, so (x, r, y) and (y, r, x)
// are one fact.
inline Triple to_base(const RelationVocab& vocab, EntityId h, RelationId r, EntityId t) {
    if (!vocab.is_base(r)) return {t, vocab.inverse(r), h};
    if (vocab.self_inverse(r) && t < h) return {t, r, h};
    return {h, r, t};
}

inline std::vector<Rule> random_rules(const SynthConfig& cfg, const RelationVocab& vocab, Rng& rng) {
    const auto base = static_cast<RelationId>(vocab.num_base());
    if (cfg.random_rules > vocab.num_base())
        throw Error("more random rules than relations to head them");
    std::vector<RelationId> order(vocab.num_base());
    for (RelationId r = 0; r < base; ++r) order[r] = r;
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
    std::set<RelationId> heads(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.random_rules));
    std::vector<RelationId> pool;  // body relations: neither a head nor a head's inverse
    for (RelationId r = 0; static_cast<std::size_t>(r) < vocab.size(); ++r) {
        RelationId b = vocab.is_base(r) ? r : vocab.inverse(r);
        if (!heads.count(b)) pool.push_back(r);
    }
    if (pool.empty()) throw Error("no relations left for random rule bodies");
    std::vector<Rule> rules;
    for (std::size_t i = 0; i < cfg.random_rules; ++i) {
        Rule rule{order[i], {}};
        while (rule.body.size() < cfg.random_rule_length) {
            RelationId r = pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(pool.size()) - 1))];
            // x & x^-1 walks straight back; keep bodies genuinely multi-hop.
            if (!rule.body.empty() && vocab.inverse(rule.body.back()) == r) continue;
            rule.body.push_back(r);
        }
        rules.push_back(std::move(rule));
    }
    std::sort(rules.begin(), rules.end());
    return rules;
}

inline std::set<Triple> inverse_closure(const std::set<Triple>& facts, const RelationVocab& vocab) {
    std::set<Triple> out = facts;
    for (const auto& f : facts) out.insert({f.tail, vocab.inverse(f.rel), f.head});
    return out;
}

inline std::set<Triple> derive(const std::set<Triple>& base, const std::vector<Rule>& rules, const RelationVocab& vocab) {
    std::set<Triple> closed = inverse_closure(base, vocab);
    std::map<std::pair<EntityId, RelationId>, std::vector<EntityId>> adj;
    for (const auto& f : closed) adj[{f.head, f.rel}].push_back(f.tail);
    std::set<EntityId> starts;
    for (const auto& f : closed) starts.insert(f.head);
    std::set<Triple> derived;
    for (const auto& rule : rules) {
        auto walk = [&](auto&& self, EntityId from, EntityId at, std::size_t i) -> void {
            if (i == rule.body.size()) {
                if (from == at) return;
                Triple t = to_base(vocab, from, rule.head, at);
                if (!base.count(t)) derived.insert(t);
                return;
            }
            auto it = adj.find({at, rule.body[i]});
            if (it == adj.end()) return;
            for (EntityId next : it->second) self(self, from, next, i + 1);
        };
        for (EntityId s : starts) walk(walk, s, s, 0);
    }
    return derived;
}

struct SynthDoc {
    Document doc;
    std::vector<LabeledInstance> instances;
};

inline SynthDoc synth_document(const SynthConfig& cfg, const RelationVocab& vocab, const std::vector<Rule>& planted,
                               const std::string& doc_id, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0));
    const auto n = static_cast<EntityId>(uniform_int(rng, cfg.entities.lo, cfg.entities.hi));
    const auto base_rels = static_cast<std::int64_t>(vocab.num_base());

    std::set<std::int64_t> picked;
    while (picked.size() < static_cast<std::size_t>(n))
        picked.insert(uniform_int(rng, 0, static_cast<std::int64_t>(cfg.entity_pool) - 1));
    std::vector<std::int64_t> ids(picked.begin(), picked.end());
    for (std::size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
    std::vector<std::string> entities;
    for (auto id : ids) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "E%04lld", static_cast<long long>(id));
        entities.emplace_back(buf);
    }

    auto random_pair = [&](EntityId& h, EntityId& t) {
        h = static_cast<EntityId>(uniform_int(rng, 0, n - 1));
        do t = static_cast<EntityId>(uniform_int(rng, 0, n - 1));
        while (t == h);
    };

    std::set<Triple> base;
    const auto nfacts = uniform_int(rng, cfg.base_facts.lo, cfg.base_facts.hi);
    // Distinct base facts between distinct entities.
    std::int64_t capacity = 0;
    for (RelationId r = 0; r < base_rels; ++r)
        capacity += static_cast<std::int64_t>(n) * (n - 1) / (vocab.self_inverse(r) ? 2 : 1);
    for (std::int64_t k = 0; k < nfacts && static_cast<std::int64_t>(base.size()) < capacity; ++k) {
        Triple f;
        do {
            random_pair(f.head, f.tail);
            f.rel = static_cast<RelationId>(uniform_int(rng, 0, base_rels - 1));
            f = to_base(vocab, f.head, f.rel, f.tail);
        } while (base.count(f));
        base.insert(f);
    }
    for (const auto& rule : planted) {
        if (rule.body.size() + 1 > static_cast<std::size_t>(n)) continue;
        auto chains = uniform_int(rng, cfg.chains_per_rule.lo, cfg.chains_per_rule.hi);
        for (std::int64_t c = 0; c < chains; ++c) {
            std::vector<EntityId> path;
            while (path.size() < rule.body.size() + 1) {
                auto e = static_cast<EntityId>(uniform_int(rng, 0, n - 1));
                if (std::find(path.begin(), path.end(), e) == path.end()) path.push_back(e);
            }
            for (std::size_t i = 0; i < rule.body.size(); ++i)
                base.insert(to_base(vocab, path[i], rule.body[i], path[i + 1]));
        }
    }

    std::set<Triple> derived = derive(base, planted, vocab);
    std::set<Triple> gold = base;
    gold.insert(derived.begin(), derived.end());

    std::map<Triple, double> atoms;
    for (const auto& f : gold) {
        bool hidden = derived.count(f) && uniform01(rng) < cfg.p_hide;
        bool flip = uniform01(rng) < cfg.p_flip;
        double u = uniform01(rng) * cfg.jitter;
        if (!hidden) atoms[f] = flip ? u : 1.0 - u;
    }
    const auto nfalse = uniform_int(rng, cfg.false_atoms.lo, cfg.false_atoms.hi);
    const std::int64_t free_slots = capacity - static_cast<std::int64_t>(gold.size());
    for (std::int64_t k = 0, made = 0; k < nfalse && made < free_slots; ++k, ++made) {
        Triple f;
        do {
            random_pair(f.head, f.tail);
            f.rel = static_cast<RelationId>(uniform_int(rng, 0, base_rels - 1));
            f = to_base(vocab, f.head, f.rel, f.tail);
        } while (gold.count(f) || atoms.count(f));
        bool flip = uniform01(rng) < cfg.p_flip;
        double u = uniform01(rng) * cfg.jitter;
        atoms[f] = flip ? 1.0 - u : u;
    }

    SynthDoc out;
    for (const auto& f : gold) out.instances.push_back({doc_id, f, 1});
    Rng neg(derive_seed(seed, 1));
    std::set<Triple> negatives;
    const std::int64_t want = std::min<std::int64_t>(
        static_cast<std::int64_t>(cfg.negative_ratio * gold.size()), capacity - static_cast<std::int64_t>(gold.size()));
    while (static_cast<std::int64_t>(negatives.size()) < want) {
        Triple f;
        f.head = static_cast<EntityId>(uniform_int(neg, 0, n - 1));
        do f.tail = static_cast<EntityId>(uniform_int(neg, 0, n - 1));
        while (f.tail == f.head);
        f.rel = static_cast<RelationId>(uniform_int(neg, 0, base_rels - 1));
        f = to_base(vocab, f.head, f.rel, f.tail);
        if (!gold.count(f) && negatives.insert(f).second) out.instances.push_back({doc_id, f, -1});
    }
    out.doc = close_inverses(Document(doc_id, std::move(entities), vocab.size(), std::move(atoms), std::move(gold)), vocab);
    return out;
}

}  // namespace detail

inline SynthCorpus gen_corpus(const SynthConfig& cfg) {
    validate(cfg);
    SynthCorpus out;
    out.vocab = build_vocab(synth_relation_names(cfg.relations), cfg.self_inverse);
    Rng rule_rng(derive_seed(cfg.seed, 0xbeef));
    if (cfg.planted_rules.empty()) {
        out.planted = detail::random_rules(cfg, out.vocab, rule_rng);
    } else {
        for (const auto& text : cfg.planted_rules) {
            auto rule = parse_rule(text, out.vocab, cfg.max_rule_length).rule;
            out.planted.push_back(rule);
        }
    }

    const auto train = static_cast<std::size_t>(std::floor(static_cast<double>(cfg.docs) * cfg.split[0] + 0.5));
    const auto dev = std::min(cfg.docs - std::min(train, cfg.docs),
                              static_cast<std::size_t>(std::floor(static_cast<double>(cfg.docs) * cfg.split[1] + 0.5)));
    const std::size_t sizes[3] = {std::min(train, cfg.docs), dev, cfg.docs - std::min(train, cfg.docs) - dev};
    const char* names[3] = {"train", "dev", "test"};
    Corpus* targets[3] = {&out.train, &out.dev, &out.test};
    for (std::size_t s = 0; s < 3; ++s) {
        std::vector<Document> docs;
        std::vector<LabeledInstance> instances;
        for (std::size_t d = 0; d < sizes[s]; ++d) {
            char id[48];
            std::snprintf(id, sizeof id, "%s_%04zu", names[s], d);
            auto sd = detail::synth_document(cfg, out.vocab, out.planted, id, derive_seed(cfg.seed, s + 1, d));
            instances.insert(instances.end(), sd.instances.begin(), sd.instances.end());
            docs.push_back(std::move(sd.doc));
        }
        *targets[s] = Corpus(std::move(docs), std::move(instances));
    }
    return out;
}

}  // namespace rulex
