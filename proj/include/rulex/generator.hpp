#pragma once
// Autoregressive rule generator p(rule | head).
//
// Bodies are generated token by token. The next-token distribution mixes
// additively smoothed count estimates at context depths k, k-1, ..., 0, where
// the depth-d context is the head plus the last min(d, position) body tokens.
// Each depth estimate is normalized over the symbols allowed at the current
// position (STOP is forbidden first and forced once the body reaches max_len),
// so the mixture is normalized exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rulex/core.hpp"
#include "rulex/util.hpp"

namespace rulex {

struct GeneratorConfig {
    std::size_t order = 2;                        // k: body tokens of context at the deepest level
    double alpha = 0.1;                           // additive smoothing
    std::vector<double> backoff{0.6, 0.3, 0.1};   // mixture weights for depths k, k-1, ..., 0
    std::size_t max_len = kDefaultMaxRuleLength;  // L_max
};

inline void validate(const GeneratorConfig& c) {
    if (!(c.alpha > 0.0) || !std::isfinite(c.alpha)) throw Error("generator alpha must be positive");
    if (c.max_len == 0) throw Error("generator max_len must be at least 1");
    if (c.backoff.size() != c.order + 1)
        throw Error("generator backoff needs order+1 = " + std::to_string(c.order + 1) + " weights");
    double sum = 0.0;
    for (double w : c.backoff) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw Error("generator backoff weights must be non-negative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw Error("generator backoff weights must sum to 1");
}

class RuleGenerator {
public:
    RuleGenerator() = default;

    RuleGenerator(std::size_t num_relations, GeneratorConfig config = {})
        : num_relations_(num_relations), config_(std::move(config)) {
        if (num_relations == 0) throw Error("generator needs at least one relation");
        validate(config_);
        // Context keys pack (head, tokens) in base num_relations+2.
        double bits = static_cast<double>(config_.order + 1) * std::log2(static_cast<double>(num_relations + 2));
        if (bits > 62) throw Error("generator order too large for vocabulary size");
        tables_.resize(config_.order + 1);
    }

    std::size_t num_relations() const { return num_relations_; }
    std::size_t num_symbols() const { return num_relations_ + 1; }
    RelationId stop() const { return static_cast<RelationId>(num_relations_); }
    const GeneratorConfig& config() const { return config_; }
    std::size_t max_len() const { return config_.max_len; }

    // P(next | head, prefix) over relation ids and STOP (last slot).
    void next_distribution(RelationId head, std::span<const RelationId> prefix, std::span<double> out) const {
        const std::size_t V = num_symbols();
        const std::size_t pos = prefix.size();
        std::fill(out.begin(), out.end(), 0.0);
        if (pos >= config_.max_len) {
            out[V - 1] = 1.0;
            return;
        }
        const bool stop_allowed = pos > 0;
        const double allowed = static_cast<double>(stop_allowed ? V : V - 1);
        const double alpha = config_.alpha;
        for (std::size_t d = 0; d <= config_.order; ++d) {
            double lambda = config_.backoff[config_.order - d];
            if (lambda == 0.0) continue;
            std::size_t take = std::min(d, pos);
            const Entry* e = find(d, head, prefix.subspan(pos - take, take));
            double total = 0.0;
            if (e) total = stop_allowed ? e->total : e->total - e->counts[V - 1];
            double denom = total + alpha * allowed;
            for (std::size_t x = 0; x < V; ++x) {
                if (x == V - 1 && !stop_allowed) continue;
                double c = e ? e->counts[x] : 0.0;
                out[x] += lambda * (c + alpha) / denom;
            }
        }
    }

    std::vector<double> next_distribution(RelationId head, std::span<const RelationId> prefix) const {
        std::vector<double> out(num_symbols());
        next_distribution(head, prefix, out);
        return out;
    }

    double log_prob(const Rule& rule) const {
        check_rule(rule);
        std::vector<double> dist(num_symbols());
        double lp = 0.0;
        std::span<const RelationId> body(rule.body);
        for (std::size_t i = 0; i <= body.size(); ++i) {
            if (i == config_.max_len) break;  // forced STOP, log 1
            next_distribution(rule.head, body.first(i), dist);
            std::size_t sym = i < body.size() ? static_cast<std::size_t>(body[i]) : num_relations_;
            lp += std::log(dist[sym]);
        }
        return lp;
    }

    Rule sample(RelationId head, Rng& rng) const {
        check_head(head);
        Rule rule{head, {}};
        std::vector<double> dist(num_symbols());
        while (rule.body.size() < config_.max_len) {
            next_distribution(head, rule.body, dist);
            std::size_t sym = draw(dist, uniform01(rng));
            if (sym == num_relations_) break;
            rule.body.push_back(static_cast<RelationId>(sym));
        }
        return rule;
    }

    // Inverse-CDF lookup of u in `dist`, skipping zero-probability symbols.
    static std::size_t draw(std::span<const double> dist, double u) {
        std::size_t sym = 0, last_positive = 0;
        double acc = 0.0;
        for (; sym < dist.size(); ++sym) {
            if (dist[sym] <= 0.0) continue;
            last_positive = sym;
            acc += dist[sym];
            if (u < acc) return sym;
        }
        return last_positive;  // u beyond accumulated rounding
    }

    RuleSet sample_set(RelationId head, std::size_t n, Rng& rng) const {
        if (n == 0) throw Error("rule set size must be at least 1");
        RuleSet set;
        set.rules.reserve(n);
        for (std::size_t i = 0; i < n; ++i) set.rules.push_back(sample(head, rng));
        return set;
    }

    // Beam search for the n most probable complete rules. Distinct rules are
    // returned in order of decreasing log-probability (ties: lexicographic
    // body); when fewer than n exist the best rule is repeated.
    RuleSet top_rules(RelationId head, std::size_t n, std::size_t beam) const {
        check_head(head);
        if (n == 0) throw Error("rule set size must be at least 1");
        if (beam < n) throw Error("beam width must be at least the rule set size");

        struct Hyp {
            std::vector<RelationId> body;
            double lp;
        };
        auto better = [](const Hyp& a, const Hyp& b) {
            if (a.lp != b.lp) return a.lp > b.lp;
            return a.body < b.body;
        };
        std::vector<Hyp> frontier{{{}, 0.0}}, complete, next;
        std::vector<double> dist(num_symbols());
        for (std::size_t pos = 0; pos <= config_.max_len && !frontier.empty(); ++pos) {
            next.clear();
            for (const auto& h : frontier) {
                next_distribution(head, h.body, dist);
                for (std::size_t x = 0; x < dist.size(); ++x) {
                    if (dist[x] <= 0.0) continue;
                    double lp = h.lp + (pos == config_.max_len ? 0.0 : std::log(dist[x]));
                    if (x == num_relations_) {
                        complete.push_back({h.body, lp});
                    } else {
                        auto body = h.body;
                        body.push_back(static_cast<RelationId>(x));
                        next.push_back({std::move(body), lp});
                    }
                }
            }
            if (next.size() > beam) {
                std::partial_sort(next.begin(), next.begin() + static_cast<std::ptrdiff_t>(beam), next.end(), better);
                next.resize(beam);
            }
            frontier.swap(next);
        }
        std::sort(complete.begin(), complete.end(), better);
        RuleSet set;
        for (std::size_t i = 0; i < complete.size() && i < n; ++i) set.rules.push_back({head, complete[i].body});
        while (set.rules.size() < n) set.rules.push_back(set.rules.front());
        return set;
    }

    // Adds weight * (context, next) counts for every generation event of each
    // rule, its terminating STOP included.
    void fit_weighted(RelationId head, std::span<const std::pair<Rule, double>> weighted) {
        std::vector<Rule> rules;
        std::vector<double> weights;
        for (const auto& [rule, w] : weighted) {
            rules.push_back(rule);
            weights.push_back(w);
        }
        fit_weighted(head, rules, weights);
    }

    void fit_weighted(RelationId head, std::span<const Rule> rules, std::span<const double> weights) {
        check_head(head);
        if (rules.size() != weights.size()) throw Error("fit needs one weight per rule");
        bool any_positive = false;
        for (std::size_t i = 0; i < rules.size(); ++i) {
            const double w = weights[i];
            if (!std::isfinite(w) || w < 0.0) throw Error("fit weights must be finite and non-negative");
            if (rules[i].head != head) throw Error("fit rule head does not match the fitted head");
            check_rule(rules[i]);
            any_positive = any_positive || w > 0.0;
        }
        if (!any_positive) throw Error("fit needs at least one positive weight");
        std::vector<Entry*> touched;
        for (std::size_t i = 0; i < rules.size(); ++i) {
            const Rule& rule = rules[i];
            const double w = weights[i];
            if (w == 0.0) continue;
            std::span<const RelationId> body(rule.body);
            for (std::size_t pos = 0; pos <= body.size(); ++pos) {
                std::size_t sym = pos < body.size() ? static_cast<std::size_t>(body[pos]) : num_relations_;
                for (std::size_t d = 0; d <= config_.order; ++d) {
                    std::size_t take = std::min(d, pos);
                    Entry& e = entry(d, head, body.subspan(pos - take, take));
                    e.counts[sym] += w;
                    touched.push_back(&e);
                }
            }
        }
        // Totals are re-summed in symbol order so a checkpoint reload
        // reproduces them bit for bit.
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        for (Entry* e : touched) e->total = sum_counts(e->counts);
    }

    // Checkpoint: config plus a mapping "d<depth>:<head>:<t1,t2,...>" -> counts.
    nlohmann::json to_json() const {
        nlohmann::json tables = nlohmann::json::object();
        for (std::size_t d = 0; d < tables_.size(); ++d) {
            for (const auto& [key, e] : tables_[d]) {
                std::string k = "d" + std::to_string(d) + ":" + std::to_string(e.head) + ":";
                for (std::size_t i = 0; i < e.tokens.size(); ++i) k += (i ? "," : "") + std::to_string(e.tokens[i]);
                tables[k] = e.counts;
            }
        }
        return {{"num_relations", num_relations_},
                {"order", config_.order},
                {"alpha", config_.alpha},
                {"backoff", config_.backoff},
                {"max_len", config_.max_len},
                {"tables", std::move(tables)}};
    }

    static RuleGenerator from_json(const nlohmann::json& j) {
        GeneratorConfig cfg;
        cfg.order = j.at("order").get<std::size_t>();
        cfg.alpha = j.at("alpha").get<double>();
        cfg.backoff = j.at("backoff").get<std::vector<double>>();
        cfg.max_len = j.at("max_len").get<std::size_t>();
        RuleGenerator g(j.at("num_relations").get<std::size_t>(), cfg);
        for (const auto& [k, v] : j.at("tables").items()) {
            auto c1 = k.find(':'), c2 = k.find(':', c1 + 1);
            if (k.empty() || k[0] != 'd' || c1 == std::string::npos || c2 == std::string::npos)
                throw Error("malformed generator context '" + k + "'");
            std::size_t d = std::stoul(k.substr(1, c1 - 1));
            auto head = static_cast<RelationId>(std::stol(k.substr(c1 + 1, c2 - c1 - 1)));
            std::vector<RelationId> tokens;
            std::string rest = k.substr(c2 + 1);
            for (std::size_t p = 0; p < rest.size();) {
                std::size_t q = rest.find(',', p);
                if (q == std::string::npos) q = rest.size();
                tokens.push_back(static_cast<RelationId>(std::stol(rest.substr(p, q - p))));
                p = q + 1;
            }
            if (d > cfg.order || tokens.size() > d) throw Error("malformed generator context '" + k + "'");
            g.check_head(head);
            for (RelationId t : tokens)
                if (t < 0 || static_cast<std::size_t>(t) >= g.num_relations_)
                    throw Error("malformed generator context '" + k + "'");
            auto counts = v.get<std::vector<double>>();
            if (counts.size() != g.num_symbols()) throw Error("generator context '" + k + "' has wrong arity");
            Entry& e = g.entry(d, head, tokens);
            for (double c : counts)
                if (!(c >= 0.0) || !std::isfinite(c)) throw Error("generator counts must be non-negative");
            e.counts = counts;
            e.total = sum_counts(e.counts);
        }
        return g;
    }

private:
    static double sum_counts(const std::vector<double>& counts) {
        double t = 0.0;
        for (double c : counts) t += c;
        return t;
    }

    struct Entry {
        RelationId head;
        std::vector<RelationId> tokens;
        std::vector<double> counts;
        double total = 0.0;
    };

    std::uint64_t key(RelationId head, std::span<const RelationId> tokens) const {
        const std::uint64_t base = num_relations_ + 2;
        std::uint64_t k = static_cast<std::uint64_t>(head) + 1;
        for (RelationId t : tokens) k = k * base + static_cast<std::uint64_t>(t) + 1;
        return k;
    }

    const Entry* find(std::size_t depth, RelationId head, std::span<const RelationId> tokens) const {
        const auto& table = tables_[depth];
        auto it = table.find(key(head, tokens));
        return it == table.end() ? nullptr : &it->second;
    }

    Entry& entry(std::size_t depth, RelationId head, std::span<const RelationId> tokens) {
        auto [it, fresh] = tables_[depth].try_emplace(key(head, tokens));
        if (fresh) {
            it->second.head = head;
            it->second.tokens.assign(tokens.begin(), tokens.end());
            it->second.counts.assign(num_symbols(), 0.0);
        }
        return it->second;
    }

    void check_head(RelationId head) const {
        if (head < 0 || static_cast<std::size_t>(head) >= num_relations_)
            throw Error("rule head id " + std::to_string(head) + " out of range");
    }

    void check_rule(const Rule& rule) const {
        check_head(rule.head);
        if (rule.body.empty()) throw Error("rule body is empty");
        if (rule.body.size() > config_.max_len)
            throw Error("rule body length " + std::to_string(rule.body.size()) + " exceeds maximum " +
                        std::to_string(config_.max_len));
        for (RelationId r : rule.body)
            if (r < 0 || static_cast<std::size_t>(r) >= num_relations_)
                throw Error("rule body id " + std::to_string(r) + " out of range");
    }

    std::size_t num_relations_ = 0;
    GeneratorConfig config_;
    std::vector<std::unordered_map<std::uint64_t, Entry>> tables_;
};


// Read-only snapshot of a generator with the next-token distributions of
// every prefix precomputed per head, for the sampling and scoring loops of
// an E-step. Results are bitwise identical to the generator's own. Heads not
// listed, or whose prefix tree exceeds kMaxViewEntries, fall back to the
// generator.
class GeneratorView {
public:
    static constexpr std::size_t kMaxViewEntries = std::size_t{1} << 20;

    GeneratorView(const RuleGenerator& gen, std::span<const RelationId> heads) : gen_(&gen) {
        const std::size_t R = gen.num_relations(), V = gen.num_symbols(), L = gen.max_len();
        offsets_.assign(1, 0);
        std::size_t level = 1, nodes = 0;
        bool fits = true;
        for (std::size_t p = 0; p < L; ++p) {
            nodes += level;
            offsets_.push_back(nodes);
            if (nodes * V > kMaxViewEntries) {
                fits = false;
                break;
            }
            level *= R;
        }
        tables_.resize(R);
        if (!fits) return;
        std::vector<RelationId> prefix;
        for (RelationId head : heads) {
            if (head < 0 || static_cast<std::size_t>(head) >= R)
                throw Error("rule head id " + std::to_string(head) + " out of range");
            auto& t = tables_[static_cast<std::size_t>(head)];
            if (!t.prob.empty()) continue;
            t.prob.assign(nodes * V, 0.0);
            t.logp.assign(nodes * V, 0.0);
            for (std::size_t p = 0; p < L; ++p) {
                prefix.assign(p, 0);
                for (std::size_t i = offsets_[p]; i < offsets_[p + 1]; ++i) {
                    std::span<double> out(t.prob.data() + i * V, V);
                    gen.next_distribution(head, prefix, out);
                    for (std::size_t x = 0; x < V; ++x) t.logp[i * V + x] = std::log(out[x]);
                    for (std::size_t k = p; k > 0; --k) {  // odometer step, last token fastest
                        if (static_cast<std::size_t>(++prefix[k - 1]) < R) break;
                        prefix[k - 1] = 0;
                    }
                }
            }
        }
    }

    const RuleGenerator& generator() const { return *gen_; }

    RuleSet top_rules(RelationId head, std::size_t n, std::size_t beam) const { return gen_->top_rules(head, n, beam); }

    double log_prob(const Rule& rule) const {
        const auto* t = table(rule.head);
        const std::size_t V = gen_->num_symbols(), R = gen_->num_relations();
        bool valid = t && !rule.body.empty() && rule.body.size() <= gen_->max_len();
        for (RelationId r : rule.body) valid = valid && r >= 0 && static_cast<std::size_t>(r) < R;
        if (!valid) return gen_->log_prob(rule);  // slow path, which also reports bad rules
        double lp = 0.0;
        std::size_t node = 0;
        for (std::size_t i = 0; i <= rule.body.size(); ++i) {
            if (i == gen_->max_len()) break;
            std::size_t sym = i < rule.body.size() ? static_cast<std::size_t>(rule.body[i]) : R;
            lp += t->logp[(offsets_[i] + node) * V + sym];
            node = node * R + sym;
        }
        return lp;
    }

    Rule sample(RelationId head, Rng& rng) const {
        const auto* t = table(head);
        if (!t) return gen_->sample(head, rng);
        const std::size_t V = gen_->num_symbols(), R = gen_->num_relations();
        Rule rule{head, {}};
        std::size_t node = 0;
        while (rule.body.size() < gen_->max_len()) {
            const std::size_t p = rule.body.size();
            std::span<const double> dist(t->prob.data() + (offsets_[p] + node) * V, V);
            std::size_t sym = RuleGenerator::draw(dist, uniform01(rng));
            if (sym == R) break;
            rule.body.push_back(static_cast<RelationId>(sym));
            node = node * R + sym;
        }
        return rule;
    }

    RuleSet sample_set(RelationId head, std::size_t n, Rng& rng) const {
        if (n == 0) throw Error("rule set size must be at least 1");
        RuleSet set;
        set.rules.reserve(n);
        for (std::size_t i = 0; i < n; ++i) set.rules.push_back(sample(head, rng));
        return set;
    }

private:
    struct Table {
        std::vector<double> prob, logp;  // node-major, num_symbols per node
    };

    const Table* table(RelationId head) const {
        if (head < 0 || static_cast<std::size_t>(head) >= tables_.size()) return nullptr;
        const auto& t = tables_[static_cast<std::size_t>(head)];
        return t.prob.empty() ? nullptr : &t;
    }

    const RuleGenerator* gen_;
    std::vector<std::size_t> offsets_;  // first node index of each prefix length
    std::vector<Table> tables_;
};

// Every body of length 1..max_len over `num_relations` ids, lexicographic
// within each length. Only sensible for small vocabularies.
inline std::vector<std::vector<RelationId>> enumerate_bodies(std::size_t num_relations, std::size_t max_len) {
    std::vector<std::vector<RelationId>> out;
    std::vector<RelationId> cur;
    for (std::size_t len = 1; len <= max_len; ++len) {
        cur.assign(len, 0);
        for (;;) {
            out.push_back(cur);
            std::size_t i = len;
            while (i > 0 && static_cast<std::size_t>(++cur[i - 1]) == num_relations) cur[--i] = 0;
            if (i == 0) break;
        }
    }
    return out;
}

}  // namespace rulex
