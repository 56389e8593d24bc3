#pragma once
// EM over latent rule sets.
//
// E-step: rules for a query are scored by
//   H(rule) = log p(rule | r) + (y/2) * (bias[r] / N + weight[rule] * ground(rule))
// which comes from replacing log sigmoid(x) with its expansion -log 2 + x/2
// around 0; the approximate posterior over rules is softmax(H).
// M-step: the generator is refit on posterior-weighted rules, then the
// extractor is refit on rule sets drawn from the updated generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rulex/core.hpp"
#include "rulex/extractor.hpp"
#include "rulex/generator.hpp"
#include "rulex/util.hpp"

namespace rulex {

enum class InferenceMode { sample, top };

inline std::string to_string(InferenceMode m) { return m == InferenceMode::sample ? "sample" : "top"; }

inline InferenceMode parse_inference_mode(std::string_view s) {
    if (s == "sample") return InferenceMode::sample;
    if (s == "top" || s == "top_rules") return InferenceMode::top;
    throw Error("unknown inference mode '" + std::string(s) + "' (expected sample or top)");
}

struct EMConfig {
    std::size_t rules_per_query = 50;  // N
    std::size_t iterations = 10;       // T
    std::uint64_t seed = 1;
    FitConfig fit;
    double tolerance = 1e-4;  // early stop on |delta ELBO|
    InferenceMode mode = InferenceMode::top;
    std::size_t beam = 256;
    // Add every rule body with a positive grounding for the query to the
    // E-step candidates, next to the N prior samples.
    bool propose_grounded = true;
    std::size_t threads = 0;  // 0: RULEX_THREADS or 1
    GeneratorConfig generator;
};

inline void validate(const EMConfig& c) {
    if (c.rules_per_query == 0) throw Error("rules_per_query (N) must be at least 1");
    if (c.iterations == 0) throw Error("iterations (T) must be at least 1");
    if (c.mode == InferenceMode::top && c.beam < c.rules_per_query)
        throw Error("beam must be at least rules_per_query");
    validate(c.generator);
}

// -log(1 + e^-x) truncated after the linear term.
inline double log_sigmoid_taylor(double x) { return -std::log(2.0) + 0.5 * x; }

inline double rule_score(double log_prior, int label, double bias, double weight, double grounding,
                         std::size_t n) {
    return log_prior + 0.5 * static_cast<double>(label) * (bias / static_cast<double>(n) + weight * grounding);
}

inline double rule_score_H(const LabeledInstance& inst, const Rule& rule, const RuleGenerator& gen,
                           const ExtractorWeights& weights, const Document& doc, std::size_t n) {
    if (rule.head != inst.query.rel) throw Error("rule head does not match query relation");
    if (n == 0) throw Error("rule set size must be at least 1");
    double g = ground_rule(doc, rule, inst.query.head, inst.query.tail).value;
    return rule_score(gen.log_prob(rule), inst.label, weights.bias_of(rule.head), weights.weight_of(rule), g, n);
}

inline std::vector<double> softmax(std::span<const double> h) {
    std::vector<double> w(h.size());
    if (h.empty()) return w;
    double m = *std::max_element(h.begin(), h.end());
    double z = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) z += (w[i] = std::exp(h[i] - m));
    for (double& x : w) x /= z;
    return w;
}

// Every rule body of length <= max_len with a positive-confidence path from
// h to t, with its best path product. Built by exhaustive path enumeration,
// so it agrees exactly with ground_rule; bodies absent from the table ground
// to 0.
class GroundingTable {
public:
    GroundingTable() = default;

    static GroundingTable build(const Document& doc, EntityId h, EntityId t, std::size_t max_len) {
        GroundingTable table;
        table.base_ = doc.num_relations() + 1;
        if (static_cast<double>(max_len) * std::log2(static_cast<double>(table.base_)) > 63)
            throw Error("rule length too large for grounding table keys");
        std::unordered_map<std::uint64_t, double> best;
        const auto R = static_cast<RelationId>(doc.num_relations());
        // (entity, key, product, depth, place value)
        struct Frame {
            EntityId at;
            std::uint64_t key;
            double product;
            std::size_t depth;
            std::uint64_t place;
        };
        std::vector<Frame> stack{{h, 0, 1.0, 0, 1}};
        while (!stack.empty()) {
            Frame f = stack.back();
            stack.pop_back();
            if (f.depth == max_len) continue;
            for (RelationId r = 0; r < R; ++r) {
                for (const Edge& e : doc.out_edges(f.at, r)) {
                    double v = f.product * e.conf;
                    if (!(v > 0.0)) continue;
                    std::uint64_t key = f.key + static_cast<std::uint64_t>(r + 1) * f.place;
                    if (e.to == t) {
                        auto [it, fresh] = best.emplace(key, v);
                        if (!fresh && v > it->second) it->second = v;
                    }
                    stack.push_back({e.to, key, v, f.depth + 1, f.place * table.base_});
                }
            }
        }
        table.entries_.assign(best.begin(), best.end());
        std::sort(table.entries_.begin(), table.entries_.end());
        return table;
    }

    double value(std::span<const RelationId> body) const {
        std::uint64_t k = encode(body);
        auto it = std::lower_bound(entries_.begin(), entries_.end(), std::pair<std::uint64_t, double>{k, -1.0});
        return it != entries_.end() && it->first == k ? it->second : 0.0;
    }

    std::size_t size() const { return entries_.size(); }

    // Grounded bodies in key order.
    std::vector<std::pair<std::vector<RelationId>, double>> bodies() const {
        std::vector<std::pair<std::vector<RelationId>, double>> out;
        for (const auto& [k, v] : entries_) out.emplace_back(decode(k), v);
        return out;
    }

    // (body key, value) pairs in key order; body_of inverts key.
    const std::vector<std::pair<std::uint64_t, double>>& entries() const { return entries_; }
    std::uint64_t key(std::span<const RelationId> body) const { return encode(body); }
    std::vector<RelationId> body_of(std::uint64_t key) const { return decode(key); }

private:
    std::uint64_t encode(std::span<const RelationId> body) const {
        std::uint64_t k = 0, place = 1;
        for (RelationId r : body) {
            k += static_cast<std::uint64_t>(r + 1) * place;
            place *= base_;
        }
        return k;
    }

    std::vector<RelationId> decode(std::uint64_t k) const {
        std::vector<RelationId> body;
        for (; k > 0; k /= base_) body.push_back(static_cast<RelationId>(k % base_) - 1);
        return body;
    }

    std::uint64_t base_ = 1;
    std::vector<std::pair<std::uint64_t, double>> entries_;
};

struct PosteriorSample {
    std::size_t instance = 0;
    std::vector<Rule> rules;                // unique candidates
    std::vector<std::size_t> multiplicity;  // times drawn from the prior (0 for proposals)
    std::vector<double> log_prior;
    std::vector<double> grounding;
    std::vector<double> H;
    std::vector<double> weight;  // softmax(H)
};

// Scores explicit candidates; groundings come from `ground` (body -> value).
// `Prior` is a RuleGenerator or a GeneratorView of one.
template <typename Prior, typename GroundFn>
PosteriorSample posterior_over(const LabeledInstance& inst, std::size_t instance_index,
                               std::span<const std::pair<Rule, std::size_t>> candidates, const Prior& gen,
                               const ExtractorWeights& weights, std::size_t n, GroundFn&& ground) {
    if (n == 0) throw Error("rule set size must be at least 1");
    PosteriorSample ps;
    ps.instance = instance_index;
    const double bias = weights.bias_of(inst.query.rel);
    for (const auto& [rule, mult] : candidates) {
        if (rule.head != inst.query.rel) throw Error("rule head does not match query relation");
        double lp = gen.log_prob(rule);
        double g = ground(rule);
        ps.rules.push_back(rule);
        ps.multiplicity.push_back(mult);
        ps.log_prior.push_back(lp);
        ps.grounding.push_back(g);
        ps.H.push_back(rule_score(lp, inst.label, bias, weights.weight_of(rule), g, n));
    }
    ps.weight = softmax(ps.H);
    return ps;
}

inline PosteriorSample posterior_over(const LabeledInstance& inst, const Document& doc,
                                      std::span<const std::pair<Rule, std::size_t>> candidates,
                                      const RuleGenerator& gen, const ExtractorWeights& weights, std::size_t n) {
    return posterior_over(inst, 0, candidates, gen, weights, n, [&](const Rule& rule) {
        return ground_rule(doc, rule, inst.query.head, inst.query.tail).value;
    });
}

// Draws N rules from the prior, merges duplicates (and grounded proposals
// when enabled), and scores them.
template <typename Prior>
PosteriorSample e_step(const LabeledInstance& inst, std::size_t instance_index, const GroundingTable& table,
                       const Prior& gen, const ExtractorWeights& weights, std::size_t n, Rng& rng,
                       bool propose_grounded) {
    auto candidates = gen.sample_set(inst.query.rel, n, rng).unique();
    if (propose_grounded) {
        std::vector<std::uint64_t> seen;
        for (const auto& c : candidates) seen.push_back(table.key(c.first.body));
        std::sort(seen.begin(), seen.end());
        for (const auto& [k, v] : table.entries())
            if (!std::binary_search(seen.begin(), seen.end(), k))
                candidates.emplace_back(Rule{inst.query.rel, table.body_of(k)}, 0);
    }
    return posterior_over(inst, instance_index, candidates, gen, weights, n,
                          [&](const Rule& rule) { return table.value(rule.body); });
}

inline PosteriorSample e_step(const LabeledInstance& inst, const Document& doc, const RuleGenerator& gen,
                              const ExtractorWeights& weights, std::size_t n, Rng& rng, bool propose_grounded = false) {
    auto table = GroundingTable::build(doc, inst.query.head, inst.query.tail, gen.max_len());
    return e_step(inst, 0, table, gen, weights, n, rng, propose_grounded);
}

// Refits the generator on (rule, posterior weight) pairs, one query at a time.
inline void m_step_generator(std::span<const PosteriorSample> posteriors, RuleGenerator& gen) {
    if (posteriors.empty()) throw Error("generator M-step needs at least one posterior");
    for (const auto& ps : posteriors)
        if (!ps.rules.empty()) gen.fit_weighted(ps.rules.front().head, ps.rules, ps.weight);
}

// N * sum_rule p_hat(rule) * log p(rule): the generator's share of the ELBO
// for one query.
template <typename Prior>
double generator_objective(const PosteriorSample& ps, const Prior& gen, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < ps.rules.size(); ++i) s += ps.weight[i] * gen.log_prob(ps.rules[i]);
    return static_cast<double>(n) * s;
}

// Rule sets for queries: top mode shares one deterministic set per relation;
// sample mode draws per query from `rng`.
class RulesetSource {
public:
    RulesetSource(const RuleGenerator& gen, const EMConfig& cfg) : gen_(gen), cfg_(cfg) {}

    // Call before handing the source to several threads.
    void prepare(std::span<const RelationId> relations) {
        if (cfg_.mode == InferenceMode::sample) {
            view_.emplace(gen_, relations);
            return;
        }
        for (RelationId r : relations) top(r);
    }

    const RuleSet& top(RelationId r) {
        auto it = cache_.find(r);
        if (it == cache_.end()) it = cache_.emplace(r, gen_.top_rules(r, cfg_.rules_per_query, cfg_.beam)).first;
        return it->second;
    }

    const RuleSet& top(RelationId r) const {
        auto it = cache_.find(r);
        if (it == cache_.end()) throw Error("rule set cache not prepared for relation " + std::to_string(r));
        return it->second;
    }

    RuleSet get(RelationId r, Rng& rng) const {
        if (cfg_.mode == InferenceMode::top) return top(r);
        return view_ ? view_->sample_set(r, cfg_.rules_per_query, rng) : gen_.sample_set(r, cfg_.rules_per_query, rng);
    }

private:
    const RuleGenerator& gen_;
    const EMConfig& cfg_;
    std::map<RelationId, RuleSet> cache_;
    std::optional<GeneratorView> view_;
};

namespace stream {
inline constexpr std::uint64_t kEStep = 1, kMStep = 2, kElbo = 3, kInfer = 4;
}

struct TrainingSet {
    const Corpus& corpus;
    std::vector<GroundingTable> tables;  // one per instance

    TrainingSet(const Corpus& c, std::size_t max_len, std::size_t threads) : corpus(c), tables(c.instances().size()) {
        parallel_for(tables.size(), threads, [&](std::size_t i) {
            const auto& inst = c.instances()[i];
            tables[i] = GroundingTable::build(c.doc_of(inst), inst.query.head, inst.query.tail, max_len);
        });
    }

    std::vector<RelationId> relations() const {
        std::vector<RelationId> rs;
        for (const auto& inst : corpus.instances()) rs.push_back(inst.query.rel);
        std::sort(rs.begin(), rs.end());
        rs.erase(std::unique(rs.begin(), rs.end()), rs.end());
        return rs;
    }
};

inline std::vector<GroundedInstance> ground_rulesets(const TrainingSet& data, const RuleGenerator& gen,
                                                     const EMConfig& cfg, std::uint64_t seed) {
    RulesetSource source(gen, cfg);
    auto rels = data.relations();
    source.prepare(rels);
    const auto& instances = data.corpus.instances();
    std::vector<GroundedInstance> batch(instances.size());
    parallel_for(instances.size(), resolve_threads(cfg.threads), [&](std::size_t i) {
        const auto& inst = instances[i];
        Rng rng(derive_seed(seed, i));
        RuleSet set = source.get(inst.query.rel, rng);
        GroundedInstance g{inst.query.rel, inst.label, {}};
        for (auto& [rule, mult] : set.unique()) {
            double v = data.tables[i].value(rule.body);
            g.rules.push_back({std::move(rule), mult, v});
        }
        batch[i] = std::move(g);
    });
    return batch;
}

struct ExtractorStep {
    FitReport report;
    std::vector<GroundedInstance> batch;
};

// Draws fresh rule sets from the (updated) generator and fits the extractor on them.
inline ExtractorStep m_step_extractor(const TrainingSet& data, const RuleGenerator& gen,
                                      const ExtractorWeights& weights, const EMConfig& cfg, std::uint64_t seed) {
    ExtractorStep step;
    step.batch = ground_rulesets(data, gen, cfg, seed);
    step.report = fit(step.batch, weights, cfg.fit);
    return step;
}

inline ExtractorStep m_step_extractor(const Corpus& corpus, const RuleGenerator& gen, const ExtractorWeights& weights,
                                      const EMConfig& cfg, std::uint64_t seed) {
    TrainingSet data(corpus, gen.max_len(), resolve_threads(cfg.threads));
    return m_step_extractor(data, gen, weights, cfg, seed);
}

inline double score_grounded(const GroundedInstance& g, const ExtractorWeights& w) {
    double s = w.bias_of(g.relation);
    for (const auto& gr : g.rules)
        if (gr.grounding != 0.0) s += w.weight_of(gr.rule) * static_cast<double>(gr.multiplicity) * gr.grounding;
    return s;
}

struct Elbo {
    double generator = 0.0;  // L_G
    double extractor = 0.0;  // L_R

    double total() const { return generator + extractor; }
};

// Monte-Carlo ELBO terms averaged over queries and `samples` repetitions.
inline Elbo elbo(const TrainingSet& data, const RuleGenerator& gen, const ExtractorWeights& weights,
                 const EMConfig& cfg, std::uint64_t seed, std::size_t samples) {
    if (samples == 0) throw Error("elbo needs at least one sample");
    const auto& instances = data.corpus.instances();
    if (instances.empty()) throw Error("elbo needs at least one query");
    Elbo out;
    const auto heads = data.relations();
    GeneratorView prior(gen, heads);
    for (std::size_t s = 0; s < samples; ++s) {
        std::vector<double> lg(instances.size());
        parallel_for(instances.size(), resolve_threads(cfg.threads), [&](std::size_t i) {
            Rng rng(derive_seed(seed, stream::kElbo, s, i));
            auto ps = e_step(instances[i], i, data.tables[i], prior, weights, cfg.rules_per_query, rng,
                             cfg.propose_grounded);
            lg[i] = generator_objective(ps, prior, cfg.rules_per_query);
        });
        auto batch = ground_rulesets(data, gen, cfg, derive_seed(seed, stream::kElbo, s));
        for (std::size_t i = 0; i < instances.size(); ++i) {
            out.generator += lg[i];
            out.extractor += log_sigmoid(static_cast<double>(batch[i].label) * score_grounded(batch[i], weights));
        }
    }
    double denom = static_cast<double>(samples * instances.size());
    out.generator /= denom;
    out.extractor /= denom;
    return out;
}

struct IterationDiagnostics {
    std::size_t iteration = 0;  // 1-based
    double generator_objective = 0.0;
    double extractor_objective = 0.0;
    double train_f1 = 0.0;
    std::vector<double> fit_losses;  // extractor training loss at each accepted step
};

struct EMResult {
    RuleGenerator generator;
    ExtractorWeights weights;
    std::vector<IterationDiagnostics> diagnostics;
    bool converged = false;
};

inline double instance_f1(std::span<const GroundedInstance> batch, const ExtractorWeights& w) {
    double tp = 0, fp = 0, fn = 0;
    for (const auto& g : batch) {
        bool pred = score_grounded(g, w) > 0.0;
        if (pred && g.label == 1) ++tp;
        if (pred && g.label == -1) ++fp;
        if (!pred && g.label == 1) ++fn;
    }
    double p = tp + fp > 0 ? tp / (tp + fp) : 0.0, r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

// One E-step / generator M-step / extractor M-step round.
inline IterationDiagnostics em_iteration(const TrainingSet& data, RuleGenerator& gen, ExtractorWeights& weights,
                                         const EMConfig& cfg, std::size_t iteration) {
    const auto& instances = data.corpus.instances();
    const std::size_t threads = resolve_threads(cfg.threads);
    const auto heads = data.relations();
    std::vector<PosteriorSample> posteriors(instances.size());
    {
        GeneratorView prior(gen, heads);
        parallel_for(instances.size(), threads, [&](std::size_t i) {
            Rng rng(derive_seed(cfg.seed, stream::kEStep, iteration, i));
            posteriors[i] = e_step(instances[i], i, data.tables[i], prior, weights, cfg.rules_per_query, rng,
                                   cfg.propose_grounded);
        });
    }
    m_step_generator(posteriors, gen);

    auto step = m_step_extractor(data, gen, weights, cfg, derive_seed(cfg.seed, stream::kMStep, iteration));
    weights = std::move(step.report.weights);

    IterationDiagnostics d;
    d.iteration = iteration;
    std::vector<double> lg(instances.size());
    GeneratorView fitted(gen, heads);
    parallel_for(instances.size(), threads,
                 [&](std::size_t i) { lg[i] = generator_objective(posteriors[i], fitted, cfg.rules_per_query); });
    double lr = 0.0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        d.generator_objective += lg[i];
        lr += log_sigmoid(static_cast<double>(step.batch[i].label) * score_grounded(step.batch[i], weights));
    }
    d.generator_objective /= static_cast<double>(instances.size());
    d.extractor_objective = lr / static_cast<double>(instances.size());
    d.train_f1 = instance_f1(step.batch, weights);
    d.fit_losses = std::move(step.report.losses);
    return d;
}

template <typename OnIteration>
EMResult run_em(const Corpus& corpus, const RelationVocab& vocab, const EMConfig& cfg, OnIteration&& on_iteration) {
    validate(cfg);
    if (corpus.empty()) throw Error("training corpus has no labeled queries");
    for (const auto& inst : corpus.instances()) validate_instance(inst, corpus.doc_of(inst), vocab);
    TrainingSet data(corpus, cfg.generator.max_len, resolve_threads(cfg.threads));
    EMResult result{RuleGenerator(vocab.size(), cfg.generator), {}, {}, false};
    double previous = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        IterationDiagnostics d;
        try {
            d = em_iteration(data, result.generator, result.weights, cfg, it);
        } catch (const std::exception& e) {
            throw Error("EM iteration " + std::to_string(it) + " failed: " + e.what());
        }
        double total = d.generator_objective + d.extractor_objective;
        result.diagnostics.push_back(std::move(d));
        on_iteration(result.diagnostics.back());
        if (std::isfinite(previous) && std::abs(total - previous) < cfg.tolerance) {
            result.converged = true;
            break;
        }
        previous = total;
    }
    return result;
}

inline EMResult run_em(const Corpus& corpus, const RelationVocab& vocab, const EMConfig& cfg) {
    return run_em(corpus, vocab, cfg, [](const IterationDiagnostics&) {});
}

struct Contribution {
    Rule rule;
    std::size_t multiplicity = 1;
    double weight = 0.0;
    double grounding = 0.0;
    double contribution = 0.0;  // multiplicity * weight * grounding
    std::vector<EntityId> path;
};

struct Inference {
    int label = -1;
    double prob_positive = 0.5;
    double score = 0.0;
    std::vector<Contribution> rules;  // grounded rules, largest contribution first
};

inline Inference explain(const Document& doc, const Triple& query, const RuleSet& ruleset,
                         const ExtractorWeights& weights) {
    Inference out;
    out.score = weights.bias_of(query.rel);
    for (auto& [rule, mult] : ruleset.unique()) {
        if (rule.head != query.rel) throw Error("rule head does not match query relation");
        auto g = ground_rule(doc, rule, query.head, query.tail);
        if (!g.grounded()) continue;
        double w = weights.weight_of(rule);
        double c = static_cast<double>(mult) * w * g.value;
        out.score += c;
        out.rules.push_back({std::move(rule), mult, w, g.value, c, std::move(g.path)});
    }
    std::stable_sort(out.rules.begin(), out.rules.end(),
                     [](const Contribution& a, const Contribution& b) { return a.contribution > b.contribution; });
    auto p = predict_from_score(out.score);
    out.label = p.label;
    out.prob_positive = p.prob_positive;
    return out;
}

inline std::uint64_t query_seed(std::uint64_t seed, const std::string& doc_id, const Triple& q) {
    return derive_seed(seed, stream::kInfer, std::hash<std::string>{}(doc_id), q.head, q.rel, q.tail);
}

template <typename Prior>
Inference infer(const Document& doc, const Triple& query, const Prior& gen, const ExtractorWeights& weights,
                const EMConfig& cfg) {
    RuleSet set;
    if (cfg.mode == InferenceMode::top) {
        set = gen.top_rules(query.rel, cfg.rules_per_query, cfg.beam);
    } else {
        Rng rng(query_seed(cfg.seed, doc.id(), query));
        set = gen.sample_set(query.rel, cfg.rules_per_query, rng);
    }
    return explain(doc, query, set, weights);
}

struct TriplePrediction {
    Triple triple;
    double prob = 0.0;
    std::optional<Contribution> best;  // strongest positive contribution, if any
};

// Positive predictions over every (h, r, t) with r a base relation and h != t.
inline std::vector<TriplePrediction> predict_document(const Document& doc, const RelationVocab& vocab,
                                                      const RuleGenerator& gen, const ExtractorWeights& weights,
                                                      const EMConfig& cfg) {
    std::vector<TriplePrediction> out;
    const auto n = static_cast<EntityId>(doc.num_entities());
    for (RelationId r = 0; static_cast<std::size_t>(r) < vocab.num_base(); ++r) {
        if (cfg.mode == InferenceMode::sample) {
            const RelationId heads[] = {r};
            GeneratorView prior(gen, heads);
            for (EntityId h = 0; h < n; ++h)
                for (EntityId t = 0; t < n; ++t) {
                    if (h == t) continue;
                    auto inf = infer(doc, {h, r, t}, prior, weights, cfg);
                    if (inf.label != 1) continue;
                    TriplePrediction tp{{h, r, t}, inf.prob_positive, std::nullopt};
                    if (!inf.rules.empty() && inf.rules.front().contribution > 0.0) tp.best = inf.rules.front();
                    out.push_back(std::move(tp));
                }
            continue;
        }
        auto unique = gen.top_rules(r, cfg.rules_per_query, cfg.beam).unique();
        struct Active {
            Rule rule;
            std::size_t multiplicity;
            double weight;
        };
        std::vector<Active> active;
        for (auto& [rule, mult] : unique) {
            double w = weights.weight_of(rule);
            if (w != 0.0) active.push_back({std::move(rule), mult, w});
        }
        const double bias = weights.bias_of(r);
        for (EntityId h = 0; h < n; ++h) {
            std::vector<double> s(static_cast<std::size_t>(n), bias), top(static_cast<std::size_t>(n), 0.0);
            std::vector<std::size_t> arg(static_cast<std::size_t>(n), active.size());
            for (std::size_t k = 0; k < active.size(); ++k) {
                auto vals = ground_from(doc, active[k].rule, h);
                const double scale = static_cast<double>(active[k].multiplicity) * active[k].weight;
                for (EntityId t = 0; t < n; ++t) {
                    double c = scale * vals[t];
                    s[t] += c;
                    if (c > top[t]) {
                        top[t] = c;
                        arg[t] = k;
                    }
                }
            }
            for (EntityId t = 0; t < n; ++t) {
                if (t == h || !(s[t] > 0.0)) continue;
                TriplePrediction tp{{h, r, t}, prob(1, s[t]), std::nullopt};
                if (arg[t] < active.size()) {
                    const Active& a = active[arg[t]];
                    auto g = ground_rule(doc, a.rule, h, t);
                    tp.best = Contribution{a.rule, a.multiplicity, a.weight, g.value, top[t], std::move(g.path)};
                }
                out.push_back(std::move(tp));
            }
        }
    }
    return out;
}

}  // namespace rulex
