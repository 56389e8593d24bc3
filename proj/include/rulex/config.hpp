#pragma once
// Run configuration: defaults, overridden by a JSON file, overridden by
// command-line flags. Unknown keys are rejected so typos do not silently
// fall back to defaults.

#include <optional>
#include <set>
#include <string>

#include "json.hpp"
#include "rulex/datagen.hpp"
#include "rulex/em.hpp"

namespace rulex {

struct RunConfig {
    std::uint64_t seed = 1;
    std::size_t threads = 0;  // 0: RULEX_THREADS, else 1
    SynthConfig synth;
    EMConfig em;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw Error(where + " must be a JSON object");
    std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw Error("unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad value for '" + std::string(key) + "' in " + where + ": " + e.what());
    }
}

inline void read_range(const nlohmann::json& j, const char* key, Range& out, const std::string& where) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
        throw Error("'" + std::string(key) + "' in " + where + " must be [lo, hi]");
    out = {v[0].get<std::int64_t>(), v[1].get<std::int64_t>()};
}

}  // namespace detail

inline nlohmann::json to_json(const SynthConfig& c) {
    auto range = [](const Range& r) { return nlohmann::json::array({r.lo, r.hi}); };
    return {{"relations", c.relations},
            {"self_inverse", c.self_inverse},
            {"planted_rules", c.planted_rules},
            {"random_rules", c.random_rules},
            {"random_rule_length", c.random_rule_length},
            {"max_rule_length", c.max_rule_length},
            {"docs", c.docs},
            {"entities", range(c.entities)},
            {"base_facts", range(c.base_facts)},
            {"chains_per_rule", range(c.chains_per_rule)},
            {"false_atoms", range(c.false_atoms)},
            {"entity_pool", c.entity_pool},
            {"p_flip", c.p_flip},
            {"jitter", c.jitter},
            {"p_hide", c.p_hide},
            {"negative_ratio", c.negative_ratio},
            {"split", c.split}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
    const std::string where = "synth config";
    detail::reject_unknown(j,
                           {"relations", "self_inverse", "planted_rules", "random_rules", "random_rule_length",
                            "max_rule_length", "docs", "entities", "base_facts", "chains_per_rule", "false_atoms",
                            "entity_pool", "p_flip", "jitter", "p_hide", "negative_ratio", "split"},
                           where);
    detail::read(j, "relations", c.relations, where);
    detail::read(j, "self_inverse", c.self_inverse, where);
    detail::read(j, "planted_rules", c.planted_rules, where);
    detail::read(j, "random_rules", c.random_rules, where);
    detail::read(j, "random_rule_length", c.random_rule_length, where);
    detail::read(j, "max_rule_length", c.max_rule_length, where);
    detail::read(j, "docs", c.docs, where);
    detail::read_range(j, "entities", c.entities, where);
    detail::read_range(j, "base_facts", c.base_facts, where);
    detail::read_range(j, "chains_per_rule", c.chains_per_rule, where);
    detail::read_range(j, "false_atoms", c.false_atoms, where);
    detail::read(j, "entity_pool", c.entity_pool, where);
    detail::read(j, "p_flip", c.p_flip, where);
    detail::read(j, "jitter", c.jitter, where);
    detail::read(j, "p_hide", c.p_hide, where);
    detail::read(j, "negative_ratio", c.negative_ratio, where);
    detail::read(j, "split", c.split, where);
}

inline nlohmann::json to_json(const EMConfig& c) {
    return {{"rules_per_query", c.rules_per_query},
            {"iterations", c.iterations},
            {"tolerance", c.tolerance},
            {"inference_mode", to_string(c.mode)},
            {"beam", c.beam},
            {"propose_grounded", c.propose_grounded},
            {"generator",
             {{"order", c.generator.order},
              {"alpha", c.generator.alpha},
              {"backoff", c.generator.backoff},
              {"max_len", c.generator.max_len}}},
            {"fit", {{"lr", c.fit.lr}, {"epochs", c.fit.epochs}, {"l2", c.fit.l2}}}};
}

inline void from_json(const nlohmann::json& j, EMConfig& c) {
    const std::string where = "em config";
    detail::reject_unknown(
        j, {"rules_per_query", "iterations", "tolerance", "inference_mode", "beam", "propose_grounded", "generator", "fit"},
        where);
    detail::read(j, "rules_per_query", c.rules_per_query, where);
    detail::read(j, "iterations", c.iterations, where);
    detail::read(j, "tolerance", c.tolerance, where);
    if (j.contains("inference_mode")) c.mode = parse_inference_mode(j.at("inference_mode").get<std::string>());
    detail::read(j, "beam", c.beam, where);
    detail::read(j, "propose_grounded", c.propose_grounded, where);
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        detail::reject_unknown(g, {"order", "alpha", "backoff", "max_len"}, "generator config");
        detail::read(g, "order", c.generator.order, "generator config");
        detail::read(g, "alpha", c.generator.alpha, "generator config");
        detail::read(g, "backoff", c.generator.backoff, "generator config");
        detail::read(g, "max_len", c.generator.max_len, "generator config");
    }
    if (j.contains("fit")) {
        const auto& f = j.at("fit");
        detail::reject_unknown(f, {"lr", "epochs", "l2"}, "fit config");
        detail::read(f, "lr", c.fit.lr, "fit config");
        detail::read(f, "epochs", c.fit.epochs, "fit config");
        detail::read(f, "l2", c.fit.l2, "fit config");
    }
}

inline nlohmann::json to_json(const RunConfig& c) {
    return {{"seed", c.seed}, {"threads", c.threads}, {"synth", to_json(c.synth)}, {"em", to_json(c.em)}};
}

// The top-level seed and thread count are copied into the sections.
inline void finalize(RunConfig& c) {
    c.synth.seed = c.seed;
    c.em.seed = c.seed;
    c.em.threads = c.threads;
    validate(c.synth);
    validate(c.em);
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    detail::reject_unknown(j, {"seed", "threads", "synth", "em"}, "config");
    detail::read(j, "seed", c.seed, "config");
    detail::read(j, "threads", c.threads, "config");
    if (j.contains("synth")) from_json(j.at("synth"), c.synth);
    if (j.contains("em")) from_json(j.at("em"), c.em);
    finalize(c);
    return c;
}

}  // namespace rulex
