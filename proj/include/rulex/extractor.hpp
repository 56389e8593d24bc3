#pragma once
// Relation extractor p(y | q, z).
//
// A rule is grounded on a document by the best product-t-norm path from the
// query head to the query tail; the rule set is combined by a weighted sum
// passed through a sigmoid:
//
//   score(q, z) = bias[r] + sum_{rule in z} weight[rule] * ground(rule, h, t)
//   p(y | q, z) = sigmoid(y * score)

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rulex/core.hpp"

namespace rulex {

struct GroundingResult {
    double value = 0.0;
    std::vector<EntityId> path;  // e0 = h, ..., el = t; empty when value is 0

    bool grounded() const { return !path.empty(); }
};

namespace detail {

// One max-product sweep per body position. best[i][e] is the best product of
// a path from h that has consumed i body atoms and sits at e; back[i][e] is
// its predecessor.
inline void max_product_sweep(const Document& doc, std::span<const RelationId> body, EntityId h,
                              std::vector<double>& best, std::vector<EntityId>* back) {
    const std::size_t n = doc.num_entities();
    best.assign(n * (body.size() + 1), 0.0);
    if (back) back->assign(n * (body.size() + 1), -1);
    best[static_cast<std::size_t>(h)] = 1.0;
#ifdef RULEX_INJECT_DP_FAULT
    const std::size_t steps = body.size() > 1 ? body.size() - 1 : body.size();
#else
    const std::size_t steps = body.size();
#endif
    for (std::size_t i = 0; i < steps; ++i) {
        const double* cur = best.data() + i * n;
        double* next = best.data() + (i + 1) * n;
        for (std::size_t e = 0; e < n; ++e) {
            if (cur[e] <= 0.0) continue;
            for (const Edge& edge : doc.out_edges(static_cast<EntityId>(e), body[i])) {
                double v = cur[e] * edge.conf;
                if (v > next[edge.to]) {
                    next[edge.to] = v;
                    if (back) (*back)[(i + 1) * n + static_cast<std::size_t>(edge.to)] = static_cast<EntityId>(e);
                }
            }
        }
    }
#ifdef RULEX_INJECT_DP_FAULT
    if (steps != body.size()) {
        std::copy_n(best.data() + steps * n, n, best.data() + body.size() * n);
        if (back) std::copy_n(back->data() + steps * n, n, back->data() + body.size() * n);
    }
#endif
}

inline void check_grounding_args(const Document& doc, const Rule& rule, EntityId h, EntityId t) {
    if (!doc.valid_entity(h) || !doc.valid_entity(t)) throw std::out_of_range("grounding entity id out of range");
    if (rule.body.empty()) throw Error("rule body is empty");
    for (RelationId r : rule.body)
        if (r < 0 || static_cast<std::size_t>(r) >= doc.num_relations())
            throw std::out_of_range("rule body id " + std::to_string(r) + " out of range");
}

}  // namespace detail

inline GroundingResult ground_rule(const Document& doc, const Rule& rule, EntityId h, EntityId t) {
    detail::check_grounding_args(doc, rule, h, t);
    std::vector<double> best;
    std::vector<EntityId> back;
    detail::max_product_sweep(doc, rule.body, h, best, &back);
    const std::size_t n = doc.num_entities(), l = rule.body.size();
    GroundingResult out;
    out.value = best[l * n + static_cast<std::size_t>(t)];
    if (out.value > 0.0) {
        out.path.assign(l + 1, t);
        for (std::size_t i = l; i > 0; --i)
            out.path[i - 1] = back[i * n + static_cast<std::size_t>(out.path[i])];
    }
    return out;
}

// Grounding values from h to every tail entity at once.
inline std::vector<double> ground_from(const Document& doc, const Rule& rule, EntityId h) {
    detail::check_grounding_args(doc, rule, h, h);
    std::vector<double> best;
    detail::max_product_sweep(doc, rule.body, h, best, nullptr);
    const std::size_t n = doc.num_entities();
    return {best.end() - static_cast<std::ptrdiff_t>(n), best.end()};
}

// Learnable scalars: a bias per query relation and a weight per
// (relation, rule), the relation being the rule's own head. Unseen keys read 0.
struct ExtractorWeights {
    std::map<RelationId, double> bias;
    std::map<Rule, double> rule_weight;

    double bias_of(RelationId r) const {
        auto it = bias.find(r);
        return it == bias.end() ? 0.0 : it->second;
    }
    double weight_of(const Rule& rule) const {
        auto it = rule_weight.find(rule);
        return it == rule_weight.end() ? 0.0 : it->second;
    }
    bool has_weight(const Rule& rule) const { return rule_weight.count(rule) != 0; }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& [k, v] : bias) s += v * v;
        for (const auto& [k, v] : rule_weight) s += v * v;
        return s;
    }

    friend bool operator==(const ExtractorWeights&, const ExtractorWeights&) = default;
};

inline double score(const Document& doc, const Triple& query, const RuleSet& ruleset,
                    const ExtractorWeights& weights) {
    double s = weights.bias_of(query.rel);
    for (const auto& [rule, mult] : ruleset.unique()) {
        if (rule.head != query.rel)
            throw Error("rule head " + std::to_string(rule.head) + " does not match query relation " +
                        std::to_string(query.rel));
        double w = weights.weight_of(rule);
        if (w == 0.0) continue;
        s += static_cast<double>(mult) * w * ground_rule(doc, rule, query.head, query.tail).value;
    }
    return s;
}

// sigmoid(y * s) without overflow for large |s|.
inline double prob(int y, double s) {
    double z = static_cast<double>(y) * s;
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

// log sigmoid(z), stable on both tails.
inline double log_sigmoid(double z) {
    if (z >= 0.0) return -std::log1p(std::exp(-z));
    return z - std::log1p(std::exp(z));
}

struct Prediction {
    int label = -1;
    double prob_positive = 0.5;
};

// Positive iff score > 0; a zero score predicts negative.
inline Prediction predict_from_score(double s) { return {s > 0.0 ? 1 : -1, prob(1, s)}; }

inline Prediction predict(const Document& doc, const Triple& query, const RuleSet& ruleset,
                          const ExtractorWeights& weights) {
    return predict_from_score(score(doc, query, ruleset, weights));
}

struct GroundedRule {
    Rule rule;
    std::size_t multiplicity = 1;
    double grounding = 0.0;
};

// One training query with its rule set already grounded.
struct GroundedInstance {
    RelationId relation = 0;
    int label = 1;
    std::vector<GroundedRule> rules;
};

inline GroundedInstance ground_instance(const Document& doc, const LabeledInstance& inst, const RuleSet& ruleset) {
    GroundedInstance g{inst.query.rel, inst.label, {}};
    for (auto& [rule, mult] : ruleset.unique()) {
        if (rule.head != inst.query.rel) throw Error("rule head does not match query relation");
        double v = ground_rule(doc, rule, inst.query.head, inst.query.tail).value;
        g.rules.push_back({std::move(rule), mult, v});
    }
    return g;
}

struct LossGrad {
    double loss = 0.0;
    ExtractorWeights gradient;  // touched and regularized entries only
};

namespace detail {

// Dense parameterization of the entries a batch touches (plus every existing
// entry, all of which the L2 term touches).
struct CompiledBatch {
    std::vector<RelationId> bias_keys;
    std::vector<Rule> rule_keys;
    struct Feature {
        std::size_t param;
        double value;  // multiplicity * grounding
    };
    struct Row {
        std::size_t bias_param;
        int label;
        std::vector<Feature> features;
    };
    std::vector<Row> rows;

    std::size_t size() const { return bias_keys.size() + rule_keys.size(); }

    std::vector<double> gather(const ExtractorWeights& w) const {
        std::vector<double> p(size());
        for (std::size_t i = 0; i < bias_keys.size(); ++i) p[i] = w.bias_of(bias_keys[i]);
        for (std::size_t i = 0; i < rule_keys.size(); ++i) p[bias_keys.size() + i] = w.weight_of(rule_keys[i]);
        return p;
    }

    void scatter(std::span<const double> p, ExtractorWeights& w) const {
        for (std::size_t i = 0; i < bias_keys.size(); ++i) w.bias[bias_keys[i]] = p[i];
        for (std::size_t i = 0; i < rule_keys.size(); ++i) {
            double v = p[bias_keys.size() + i];
            auto it = w.rule_weight.find(rule_keys[i]);
            if (it != w.rule_weight.end())
                it->second = v;
            else if (v != 0.0)
                w.rule_weight.emplace(rule_keys[i], v);
        }
    }

    // Sum of -log sigmoid(y * s) plus (l2 / 2) * ||p||^2; fills grad when given.
    double evaluate(std::span<const double> p, double l2, std::vector<double>* grad) const {
        double loss = 0.0;
        if (grad) grad->assign(p.size(), 0.0);
        for (const Row& row : rows) {
            double s = p[row.bias_param];
            for (const auto& f : row.features) s += p[f.param] * f.value;
            double ys = static_cast<double>(row.label) * s;
            loss -= log_sigmoid(ys);
            if (grad) {
                double coeff = -static_cast<double>(row.label) * prob(1, -ys);
                (*grad)[row.bias_param] += coeff;
                for (const auto& f : row.features) (*grad)[f.param] += coeff * f.value;
            }
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            norm += p[i] * p[i];
            if (grad) (*grad)[i] += l2 * p[i];
        }
        return loss + 0.5 * l2 * norm;
    }
};

inline CompiledBatch compile(std::span<const GroundedInstance> batch, const ExtractorWeights& weights) {
    CompiledBatch cb;
    std::map<RelationId, std::size_t> bias_index;
    std::unordered_map<Rule, std::size_t, RuleHash> rule_index;
    for (const auto& [r, v] : weights.bias) bias_index.emplace(r, 0);
    for (const auto& inst : batch) {
        bias_index.emplace(inst.relation, 0);
        if (inst.label != 1 && inst.label != -1) throw Error("instance label must be +1 or -1");
        for (const auto& gr : inst.rules) {
            if (!std::isfinite(gr.grounding)) throw Error("non-finite grounding value");
            if (gr.rule.head != inst.relation) throw Error("rule head does not match query relation");
        }
    }
    for (auto& [r, idx] : bias_index) {
        idx = cb.bias_keys.size();
        cb.bias_keys.push_back(r);
    }
    auto rule_param = [&](const Rule& rule) {
        auto [it, fresh] = rule_index.emplace(rule, cb.rule_keys.size());
        if (fresh) cb.rule_keys.push_back(rule);
        return it->second;
    };
    for (const auto& [rule, v] : weights.rule_weight) rule_param(rule);
    for (const auto& inst : batch) {
        CompiledBatch::Row row{bias_index.at(inst.relation), inst.label, {}};
        for (const auto& gr : inst.rules) {
            std::size_t k = rule_param(gr.rule);
            if (gr.grounding != 0.0)
                row.features.push_back({k, static_cast<double>(gr.multiplicity) * gr.grounding});
        }
        cb.rows.push_back(std::move(row));
    }
    for (auto& row : cb.rows)
        for (auto& f : row.features) f.param += cb.bias_keys.size();
    return cb;
}

}  // namespace detail

inline LossGrad loss_and_grad(std::span<const GroundedInstance> batch, const ExtractorWeights& weights,
                              double l2) {
    auto cb = detail::compile(batch, weights);
    auto p = cb.gather(weights);
    std::vector<double> g;
    LossGrad out;
    out.loss = cb.evaluate(p, l2, &g);
    for (std::size_t i = 0; i < cb.bias_keys.size(); ++i) out.gradient.bias[cb.bias_keys[i]] = g[i];
    for (std::size_t i = 0; i < cb.rule_keys.size(); ++i)
        out.gradient.rule_weight[cb.rule_keys[i]] = g[cb.bias_keys.size() + i];
    return out;
}

struct FitConfig {
    double lr = 0.1;
    std::size_t epochs = 5;
    double l2 = 1e-4;
};

struct FitReport {
    ExtractorWeights weights;
    std::vector<double> losses;  // initial loss, then the loss after each accepted step
};

inline constexpr int kMaxHalvings = 20;

// Full-batch gradient descent; a step that would raise the loss is halved
// until it does not.
inline FitReport fit(std::span<const GroundedInstance> batch, ExtractorWeights weights, const FitConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw Error("learning rate must be positive");
    if (!(cfg.l2 >= 0.0)) throw Error("l2 penalty must be non-negative");
    auto cb = detail::compile(batch, weights);
    auto p = cb.gather(weights);
    std::vector<double> g, trial(p.size());
    double loss = cb.evaluate(p, cfg.l2, &g);
    if (!std::isfinite(loss)) throw Error("initial extractor loss is not finite");
    FitReport report;
    report.losses.push_back(loss);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double gnorm = 0.0;
        for (double x : g) gnorm += x * x;
        if (gnorm == 0.0) break;
        double step = cfg.lr;
        bool accepted = false;
        double trial_loss = loss;
        for (int k = 0; k <= kMaxHalvings; ++k, step *= 0.5) {
            for (std::size_t i = 0; i < p.size(); ++i) trial[i] = p[i] - step * g[i];
            trial_loss = cb.evaluate(trial, cfg.l2, nullptr);
            if (std::isfinite(trial_loss) && trial_loss <= loss) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            // A step this small changes the loss by less than its rounding error.
            if (step * 2.0 * gnorm <= 1e-12 * (1.0 + std::abs(loss))) break;
            throw Error("extractor fit diverged at epoch " + std::to_string(epoch) + ": loss " +
                        std::to_string(loss) + ", last trial " + std::to_string(trial_loss) + ", gradient norm " +
                        std::to_string(std::sqrt(gnorm)) + " after " + std::to_string(kMaxHalvings) + " halvings");
        }
        p.swap(trial);
        loss = cb.evaluate(p, cfg.l2, &g);
        report.losses.push_back(loss);
    }
    cb.scatter(p, weights);
    report.weights = std::move(weights);
    return report;
}

inline nlohmann::json weights_to_json(const ExtractorWeights& w, const RelationVocab& vocab) {
    nlohmann::json bias = nlohmann::json::object(), rules = nlohmann::json::object();
    for (const auto& [r, v] : w.bias) bias[vocab.name(r)] = v;
    for (const auto& [rule, v] : w.rule_weight) rules[format_rule(rule, vocab)] = v;
    return {{"bias", std::move(bias)}, {"rule_weight", std::move(rules)}};
}

inline ExtractorWeights weights_from_json(const nlohmann::json& j, const RelationVocab& vocab,
                                          std::size_t max_len = kDefaultMaxRuleLength) {
    ExtractorWeights w;
    for (const auto& [name, v] : j.at("bias").items()) {
        double x = v.get<double>();
        if (!std::isfinite(x)) throw Error("non-finite bias for '" + name + "'");
        w.bias[vocab.id(name)] = x;
    }
    for (const auto& [text, v] : j.at("rule_weight").items()) {
        double x = v.get<double>();
        if (!std::isfinite(x)) throw Error("non-finite weight for '" + text + "'");
        w.rule_weight[parse_rule(text, vocab, max_len).rule] = x;
    }
    return w;
}

}  // namespace rulex
