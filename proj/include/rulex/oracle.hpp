#pragma once
// Brute-force equivalence checks. Each oracle recomputes a library result by
// exhaustive enumeration or finite differences, using code paths that share
// nothing with the implementation beyond the data types.

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rulex/core.hpp"
#include "rulex/em.hpp"
#include "rulex/extractor.hpp"
#include "rulex/generator.hpp"
#include "rulex/util.hpp"

namespace rulex::oracle {

struct Report {
    explicit Report(std::string n) : name(std::move(n)) {}

    std::string name;
    std::size_t cases = 0;
    std::size_t checks = 0;
    std::size_t failures = 0;
    double max_error = 0.0;
    double seconds = 0.0;
    std::string first_failure;

    bool passed() const { return checks > 0 && failures == 0; }

    void fail(const std::string& what) {
        if (failures++ == 0) first_failure = what;
    }
};

namespace detail {

class Timer {
public:
    explicit Timer(Report& r) : report_(r), start_(std::chrono::steady_clock::now()) {}
    ~Timer() { report_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    Report& report_;
    std::chrono::steady_clock::time_point start_;
};

inline double pick_confidence(Rng& rng) {
    switch (uniform_int(rng, 0, 3)) {
        case 0: return 1.0;
        case 1: return 0.5;
        case 2: return static_cast<double>(uniform_int(rng, 1, 9)) / 10.0;
        default: return uniform01(rng);
    }
}

// Random inverse-closed document with at most `max_entities` entities.
inline Document random_document(const RelationVocab& vocab, std::size_t max_entities, Rng& rng,
                                const std::string& id = "oracle") {
    const auto n = uniform_int(rng, 1, static_cast<std::int64_t>(max_entities));
    const double density = 0.05 + 0.35 * uniform01(rng);
    std::vector<std::string> names;
    for (std::int64_t i = 0; i < n; ++i) names.push_back("e" + std::to_string(i));
    std::map<Triple, double> atoms;
    for (EntityId h = 0; h < n; ++h)
        for (RelationId r = 0; static_cast<std::size_t>(r) < vocab.num_base(); ++r)
            for (EntityId t = vocab.self_inverse(r) ? h : 0; t < n; ++t)
                if (uniform01(rng) < density) atoms[{h, r, t}] = pick_confidence(rng);
    return close_inverses(Document(id, std::move(names), vocab.size(), std::move(atoms)), vocab);
}

inline Rule random_rule(const RelationVocab& vocab, std::size_t max_len, Rng& rng) {
    Rule rule{static_cast<RelationId>(uniform_int(rng, 0, static_cast<std::int64_t>(vocab.num_base()) - 1)), {}};
    const auto len = uniform_int(rng, 1, static_cast<std::int64_t>(max_len));
    for (std::int64_t i = 0; i < len; ++i)
        rule.body.push_back(static_cast<RelationId>(uniform_int(rng, 0, static_cast<std::int64_t>(vocab.size()) - 1)));
    return rule;
}

// Best product over every entity sequence h = e0, e1, ..., el = t, each
// product accumulated left to right.
inline double brute_force_grounding(const Document& doc, const Rule& rule, EntityId h, EntityId t) {
    const std::size_t l = rule.body.size();
    const auto n = static_cast<EntityId>(doc.num_entities());
    std::vector<EntityId> mid(l - 1, 0);
    double best = 0.0;
    for (;;) {
        double v = 1.0;
        EntityId at = h;
        for (std::size_t i = 0; i < l; ++i) {
            EntityId to = i + 1 == l ? t : mid[i];
            v *= doc.atom_conf(at, rule.body[i], to);
            at = to;
        }
        best = std::max(best, v);
        std::size_t k = mid.size();
        while (k > 0 && ++mid[k - 1] == n) mid[--k] = 0;
        if (k == 0) break;
    }
    return best;
}

inline double path_product(const Document& doc, const Rule& rule, const std::vector<EntityId>& path) {
    double v = 1.0;
    for (std::size_t i = 0; i < rule.body.size(); ++i) v *= doc.atom_conf(path[i], rule.body[i], path[i + 1]);
    return v;
}

inline std::string describe(const Rule& rule, EntityId h, EntityId t) {
    std::ostringstream os;
    os << "head " << rule.head << " body [";
    for (std::size_t i = 0; i < rule.body.size(); ++i) os << (i ? "," : "") << rule.body[i];
    os << "] h=" << h << " t=" << t;
    return os.str();
}

}  // namespace detail

// ground_rule, ground_from and GroundingTable against exhaustive enumeration.
inline Report grounding(std::uint64_t seed, std::size_t docs = 1000, std::size_t max_entities = 6,
                        std::size_t max_len = 3) {
    Report rep("grounding");
    detail::Timer timer(rep);
    auto vocab = build_vocab({"a", "b", "c"}, {"c"});
    for (std::size_t d = 0; d < docs; ++d) {
        Rng rng(derive_seed(seed, d));
        auto doc = detail::random_document(vocab, max_entities, rng);
        const auto n = static_cast<EntityId>(doc.num_entities());
        std::vector<Rule> rules;
        for (int k = 0; k < 3; ++k) rules.push_back(detail::random_rule(vocab, max_len, rng));
        std::vector<std::vector<GroundingTable>> tables(static_cast<std::size_t>(n));
        for (EntityId h = 0; h < n; ++h)
            for (EntityId t = 0; t < n; ++t) tables[h].push_back(GroundingTable::build(doc, h, t, max_len));
        for (const auto& rule : rules) {
            ++rep.cases;
            for (EntityId h = 0; h < n; ++h) {
                auto from = ground_from(doc, rule, h);
                for (EntityId t = 0; t < n; ++t) {
                    const double truth = detail::brute_force_grounding(doc, rule, h, t);
                    auto g = ground_rule(doc, rule, h, t);
                    rep.checks += 4;
                    if (g.value != truth)
                        rep.fail("ground_rule value " + std::to_string(g.value) + " != " + std::to_string(truth) +
                                 " for " + detail::describe(rule, h, t));
                    if (g.grounded() != (truth > 0.0))
                        rep.fail("attainability mismatch for " + detail::describe(rule, h, t));
                    else if (g.grounded() &&
                             (g.path.size() != rule.body.size() + 1 || g.path.front() != h || g.path.back() != t ||
                              detail::path_product(doc, rule, g.path) != g.value))
                        rep.fail("returned path does not attain the value for " + detail::describe(rule, h, t));
                    if (from[t] != truth) rep.fail("ground_from disagrees for " + detail::describe(rule, h, t));
                    if (tables[h][t].value(rule.body) != truth)
                        rep.fail("grounding table disagrees for " + detail::describe(rule, h, t));
                    if (truth > 0.0 || g.value > 0.0) rep.max_error = std::max(rep.max_error, std::abs(g.value - truth));
                }
            }
        }
    }
    return rep;
}

// Posterior weights over the full rule space of a 4-id vocabulary with
// L_max = 2, against a softmax coded here in long double; and invariance of
// softmax under constant shifts of H.
inline Report posterior(std::uint64_t seed, std::size_t cases = 200) {
    Report rep("posterior");
    detail::Timer timer(rep);
    auto vocab = build_vocab({"a", "b"}, {});  // a, b, a^-1, b^-1
    GeneratorConfig gc;
    gc.max_len = 2;
    const auto bodies = enumerate_bodies(vocab.size(), gc.max_len);
    const double shifts[] = {-5.0, 0.0, 7.0};
    for (std::size_t c = 0; c < cases; ++c) {
        ++rep.cases;
        Rng rng(derive_seed(seed, c));
        auto doc = detail::random_document(vocab, 5, rng);
        const auto n = static_cast<EntityId>(doc.num_entities());
        LabeledInstance inst{doc.id(),
                             {static_cast<EntityId>(uniform_int(rng, 0, n - 1)),
                              static_cast<RelationId>(uniform_int(rng, 0, 1)),
                              static_cast<EntityId>(uniform_int(rng, 0, n - 1))},
                             uniform01(rng) < 0.5 ? 1 : -1};
        const RelationId head = inst.query.rel;

        RuleGenerator gen(vocab.size(), gc);
        const auto fits = uniform_int(rng, 0, 3);
        for (std::int64_t f = 0; f < fits; ++f) {
            std::vector<std::pair<Rule, double>> w;
            for (int k = 0; k < 6; ++k) w.emplace_back(Rule{head, bodies[uniform_int(rng, 0, bodies.size() - 1)]}, 5.0 * uniform01(rng));
            w.front().second += 0.1;
            gen.fit_weighted(head, w);
        }
        ExtractorWeights weights;
        weights.bias[head] = 4.0 * uniform01(rng) - 2.0;
        for (const auto& b : bodies)
            if (uniform01(rng) < 0.5) weights.rule_weight[{head, b}] = 6.0 * uniform01(rng) - 3.0;
        const std::size_t N = static_cast<std::size_t>(uniform_int(rng, 1, 50));

        std::vector<std::pair<Rule, std::size_t>> candidates;
        for (const auto& b : bodies) candidates.emplace_back(Rule{head, b}, 1);
        auto ps = posterior_over(inst, doc, candidates, gen, weights, N);

        // Independent H: prior from chained next-token probabilities, grounding by enumeration.
        std::vector<long double> H;
        for (const auto& [rule, m] : candidates) {
            long double lp = 0.0L;
            for (std::size_t i = 0; i <= rule.body.size() && i < gc.max_len; ++i) {
                auto dist = gen.next_distribution(head, std::span<const RelationId>(rule.body).first(i));
                lp += std::log(static_cast<long double>(i < rule.body.size() ? dist[rule.body[i]] : dist.back()));
            }
            const long double g = detail::brute_force_grounding(doc, rule, inst.query.head, inst.query.tail);
            H.push_back(lp + 0.5L * inst.label *
                                 (static_cast<long double>(weights.bias_of(head)) / static_cast<long double>(N) +
                                  static_cast<long double>(weights.weight_of(rule)) * g));
        }
        long double mx = H.front();
        for (auto h : H) mx = std::max(mx, h);
        long double z = 0.0L;
        for (auto h : H) z += std::exp(h - mx);
        for (std::size_t i = 0; i < H.size(); ++i) {
            const double expected = static_cast<double>(std::exp(H[i] - mx) / z);
            const double err = std::abs(ps.weight[i] - expected);
            rep.max_error = std::max(rep.max_error, err);
            ++rep.checks;
            if (err > 1e-12) rep.fail("posterior weight " + std::to_string(i) + " off by " + std::to_string(err));
        }
        for (double shift : shifts) {
            std::vector<double> shifted(ps.H);
            for (double& h : shifted) h += shift;
            auto w = softmax(shifted);
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double err = std::abs(w[i] - ps.weight[i]);
                rep.max_error = std::max(rep.max_error, err);
                ++rep.checks;
                if (err > 1e-12) rep.fail("softmax not shift invariant at c=" + std::to_string(shift));
            }
        }
    }
    return rep;
}

// Sum of exp(log_prob) over every rule for every head, before and after
// three rounds of fit_weighted.
inline Report generator_normalization(std::uint64_t seed, std::size_t num_relations = 6, std::size_t max_len = 3) {
    Report rep("generator");
    detail::Timer timer(rep);
    GeneratorConfig gc;
    gc.max_len = max_len;
    RuleGenerator gen(num_relations, gc);
    const auto bodies = enumerate_bodies(num_relations, max_len);
    Rng rng(seed);
    auto check = [&](const std::string& when) {
        for (RelationId head = 0; static_cast<std::size_t>(head) < num_relations; ++head) {
            ++rep.cases;
            double total = 0.0;
            for (const auto& b : bodies) total += std::exp(gen.log_prob({head, b}));
            const double err = std::abs(total - 1.0);
            rep.max_error = std::max(rep.max_error, err);
            ++rep.checks;
            if (err > 1e-6)
                rep.fail(when + ": head " + std::to_string(head) + " sums to " + std::to_string(total));
        }
    };
    check("before fitting");
    for (int round = 1; round <= 3; ++round) {
        for (RelationId head = 0; static_cast<std::size_t>(head) < num_relations; ++head) {
            std::vector<std::pair<Rule, double>> w;
            for (int k = 0; k < 20; ++k)
                w.emplace_back(Rule{head, bodies[uniform_int(rng, 0, bodies.size() - 1)]}, 3.0 * uniform01(rng));
            w.front().second += 0.5;
            gen.fit_weighted(head, w);
        }
        check("after fit " + std::to_string(round));
    }
    return rep;
}

// loss_and_grad against central finite differences of the same loss.
inline Report gradient(std::uint64_t seed, std::size_t cases = 100, double step = 1e-5, double tolerance = 1e-4) {
    Report rep("gradient");
    detail::Timer timer(rep);
    auto vocab = build_vocab({"a", "b", "c"}, {});
    const auto bodies = enumerate_bodies(vocab.size(), 2);
    for (std::size_t c = 0; c < cases; ++c) {
        ++rep.cases;
        Rng rng(derive_seed(seed, c));
        std::vector<GroundedInstance> batch;
        const auto rows = uniform_int(rng, 1, 12);
        for (std::int64_t i = 0; i < rows; ++i) {
            GroundedInstance g{static_cast<RelationId>(uniform_int(rng, 0, 2)), uniform01(rng) < 0.5 ? 1 : -1, {}};
            const auto k = uniform_int(rng, 0, 5);
            for (std::int64_t j = 0; j < k; ++j) {
                double value = uniform01(rng) < 0.3 ? 0.0 : uniform01(rng);
                g.rules.push_back({Rule{g.relation, bodies[uniform_int(rng, 0, 7)]},
                                   static_cast<std::size_t>(uniform_int(rng, 1, 3)), value});
            }
            batch.push_back(std::move(g));
        }
        ExtractorWeights w;
        for (RelationId r = 0; r < 3; ++r)
            if (uniform01(rng) < 0.7) w.bias[r] = 4.0 * uniform01(rng) - 2.0;
        for (int k = 0; k < 6; ++k)
            w.rule_weight[{static_cast<RelationId>(uniform_int(rng, 0, 2)), bodies[uniform_int(rng, 0, 11)]}] =
                6.0 * uniform01(rng) - 3.0;
        const double l2 = uniform01(rng) < 0.2 ? 0.0 : 0.1 * uniform01(rng);

        auto analytic = loss_and_grad(batch, w, l2);
        auto loss_at = [&](const ExtractorWeights& x) { return loss_and_grad(batch, x, l2).loss; };
        auto compare = [&](double a, double numeric, const std::string& what) {
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
            rep.max_error = std::max(rep.max_error, err);
            ++rep.checks;
            if (err > tolerance)
                rep.fail(what + ": analytic " + std::to_string(a) + " numeric " + std::to_string(numeric));
        };
        for (const auto& [r, a] : analytic.gradient.bias) {
            auto plus = w, minus = w;
            plus.bias[r] = w.bias_of(r) + step;
            minus.bias[r] = w.bias_of(r) - step;
            compare(a, (loss_at(plus) - loss_at(minus)) / (2.0 * step), "bias " + std::to_string(r));
        }
        for (const auto& [rule, a] : analytic.gradient.rule_weight) {
            auto plus = w, minus = w;
            plus.rule_weight[rule] = w.weight_of(rule) + step;
            minus.rule_weight[rule] = w.weight_of(rule) - step;
            compare(a, (loss_at(plus) - loss_at(minus)) / (2.0 * step), "rule weight");
        }
    }
    return rep;
}

// |log sigmoid(x) - (-log 2 + x/2)| <= x^2/8 on [-1, 1], exact at 0.
inline Report taylor(double step = 1e-3) {
    Report rep("taylor");
    detail::Timer timer(rep);
    const auto points = static_cast<std::int64_t>(std::llround(2.0 / step));
    for (std::int64_t i = 0; i <= points; ++i) {
        const double x = -1.0 + static_cast<double>(i) * step;
        const double exact = -std::log1p(std::exp(-x));
        const double err = std::abs(exact - log_sigmoid_taylor(x));
        ++rep.cases;
        ++rep.checks;
        rep.max_error = std::max(rep.max_error, err);
        if (err > x * x / 8.0 + 1e-12) rep.fail("bound violated at x=" + std::to_string(x));
    }
    ++rep.checks;
    const double at_zero = std::abs(log_sigmoid(0.0) - log_sigmoid_taylor(0.0));
    if (at_zero > 2.0 * std::numeric_limits<double>::epsilon())
        rep.fail("expansion differs at x=0 by " + std::to_string(at_zero));
    return rep;
}

inline const std::vector<std::string>& scopes() {
    static const std::vector<std::string> names{"grounding", "posterior", "generator", "gradient", "taylor"};
    return names;
}

// scope: "all" or one of scopes().
inline std::vector<Report> run(const std::string& scope, std::uint64_t seed) {
    std::vector<Report> out;
    bool known = scope == "all";
    for (const auto& s : scopes()) known = known || s == scope;
    if (!known) throw Error("unknown oracle scope '" + scope + "'");
    auto want = [&](const char* s) { return scope == "all" || scope == s; };
    if (want("grounding")) out.push_back(grounding(seed));
    if (want("posterior")) out.push_back(posterior(seed));
    if (want("generator")) out.push_back(generator_normalization(seed));
    if (want("gradient")) out.push_back(gradient(seed));
    if (want("taylor")) out.push_back(taylor());
    return out;
}

}  // namespace rulex::oracle
