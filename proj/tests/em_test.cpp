#include <gtest/gtest.h>

#include <cmath>

#include "rulex/em.hpp"

using namespace rulex;

namespace {

// Relations q, a, b (all with inverses). Every document has a positive query
// q(x, z) explained by a(x, y) & b(y, z) and a negative q(x, w) that only the
// decoy body a & b^-1 reaches.
struct Toy {
    RelationVocab vocab = build_vocab({"q", "a", "b"}, {});
    Corpus corpus;

    explicit Toy(int docs = 12) {
        const RelationId q = 0, a = 1, b = 2;
        std::vector<Document> ds;
        std::vector<LabeledInstance> inst;
        for (int i = 0; i < docs; ++i) {
            std::string id = "doc" + std::to_string(i);
            double c = 0.8 + 0.01 * i;
            std::map<Triple, double> atoms{{{0, a, 1}, c}, {{1, b, 2}, 1.0}, {{3, b, 1}, 0.9}};
            ds.push_back(close_inverses(Document(id, {"x", "y", "z", "w"}, vocab.size(), atoms), vocab));
            inst.push_back({id, {0, q, 2}, 1});
            inst.push_back({id, {0, q, 3}, -1});
        }
        corpus = Corpus(std::move(ds), std::move(inst));
    }
};

EMConfig small_config() {
    EMConfig cfg;
    cfg.rules_per_query = 5;
    cfg.iterations = 3;
    cfg.tolerance = 0.0;
    cfg.fit = {0.5, 30, 1e-4};
    return cfg;
}

}  // namespace

TEST(RuleScore, WorkedExample) {
    // log p = -1, bias 0, weight 0.81, grounding 1, N = 1.
    EXPECT_NEAR(rule_score(-1.0, 1, 0.0, 0.81, 1.0, 1), -0.595, 1e-12);
    EXPECT_NEAR(rule_score(-1.0, -1, 0.0, 0.81, 1.0, 1), -1.405, 1e-12);
    // The bias is shared by the N rules of a set.
    EXPECT_NEAR(rule_score(0.0, 1, 2.0, 0.0, 0.0, 4), 0.25, 1e-15);
}

TEST(RuleScore, MatchesTheDocumentBasedVersion) {
    Toy toy;
    RuleGenerator gen(toy.vocab.size());
    ExtractorWeights w;
    w.bias[0] = -0.4;
    w.rule_weight[{0, {1, 2}}] = 1.7;
    const auto& inst = toy.corpus.instances()[0];
    const Rule rule{0, {1, 2}};
    const auto& doc = toy.corpus.doc_of(inst);
    double g = ground_rule(doc, rule, 0, 2).value;
    EXPECT_EQ(rule_score_H(inst, rule, gen, w, doc, 5), rule_score(gen.log_prob(rule), 1, -0.4, 1.7, g, 5));
    EXPECT_THROW(rule_score_H(inst, {1, {2}}, gen, w, doc, 5), Error);
    EXPECT_THROW(rule_score_H(inst, rule, gen, w, doc, 0), Error);
}

TEST(Softmax, TwoCandidates) {
    const std::vector<double> h{0.0, std::log(3.0)};
    auto w = softmax(h);
    EXPECT_NEAR(w[0], 0.25, 1e-15);
    EXPECT_NEAR(w[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariantAndStable) {
    const std::vector<double> h{-3.0, 0.5, 2.0, 2.0};
    auto base = softmax(h);
    for (double shift : {-1e3, -7.0, 5.0, 1e3}) {
        std::vector<double> moved(h);
        for (double& x : moved) x += shift;
        auto w = softmax(moved);
        double sum = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            EXPECT_NEAR(w[i], base[i], 1e-12);
            sum += w[i];
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
    EXPECT_TRUE(softmax(std::vector<double>{}).empty());
}

TEST(Taylor, LinearTermAndErrorBound) {
    for (double x : {0.0, 0.01, 0.3, 1.0, 2.5}) {
        EXPECT_NEAR(log_sigmoid_taylor(x) - log_sigmoid_taylor(-x), x, 1e-15);
        // log sigmoid has |second derivative| <= 1/4, so the error is at most x^2 / 8.
        EXPECT_LE(std::abs(log_sigmoid(x) - log_sigmoid_taylor(x)), x * x / 8.0 + 1e-15);
    }
    EXPECT_NEAR(log_sigmoid(1e-3) - log_sigmoid_taylor(1e-3), 0.0, 1e-6);
}

TEST(EStep, CandidatesAreUniqueAndWeightsNormalized) {
    Toy toy;
    RuleGenerator gen(toy.vocab.size(), {});
    const auto& inst = toy.corpus.instances()[0];
    Rng rng(4);
    auto ps = e_step(inst, toy.corpus.doc_of(inst), gen, {}, 40, rng);
    std::size_t drawn = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < ps.rules.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) EXPECT_NE(ps.rules[i], ps.rules[j]);
        drawn += ps.multiplicity[i];
        sum += ps.weight[i];
        EXPECT_NEAR(ps.H[i], ps.log_prior[i], 1e-15);  // zero weights: H is the prior
    }
    EXPECT_EQ(drawn, 40u);
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(EStep, GroundedProposalsJoinTheCandidates) {
    Toy toy;
    RuleGenerator gen(toy.vocab.size());
    const auto& inst = toy.corpus.instances()[0];
    const auto& doc = toy.corpus.doc_of(inst);
    auto table = GroundingTable::build(doc, 0, 2, 3);
    Rng rng(9);
    auto ps = e_step(inst, 0, table, gen, ExtractorWeights{}, 1, rng, true);
    for (const auto& [body, v] : table.bodies()) {
        auto it = std::find(ps.rules.begin(), ps.rules.end(), Rule{0, body});
        ASSERT_NE(it, ps.rules.end());
        EXPECT_EQ(ps.grounding[static_cast<std::size_t>(it - ps.rules.begin())], v);
    }
    EXPECT_EQ(ps.rules.size(), table.size() + (table.value(ps.rules[0].body) == 0.0 ? 1u : 0u));
}

TEST(EStep, PositiveWeightShiftsMassTowardGroundedRules) {
    Toy toy;
    RuleGenerator gen(toy.vocab.size());
    const auto& doc = toy.corpus.docs()[0];
    const LabeledInstance pos{doc.id(), {0, 0, 2}, 1}, neg{doc.id(), {0, 0, 2}, -1};
    const std::vector<std::pair<Rule, std::size_t>> cands{{Rule{0, {1, 2}}, 1}, {Rule{0, {2, 1}}, 1}};
    ExtractorWeights w;
    w.rule_weight[{0, {1, 2}}] = 2.0;
    auto p = posterior_over(pos, doc, cands, gen, w, 1);
    auto n = posterior_over(neg, doc, cands, gen, w, 1);
    EXPECT_GT(p.weight[0], 0.5);
    EXPECT_LT(n.weight[0], 0.5);
}

TEST(MStep, GeneratorFitDoesNotLowerTheObjective) {
    Toy toy;
    RuleGenerator gen(toy.vocab.size());
    Rng rng(1);
    std::vector<PosteriorSample> ps;
    for (std::size_t i = 0; i < toy.corpus.instances().size(); ++i) {
        const auto& inst = toy.corpus.instances()[i];
        ps.push_back(e_step(inst, toy.corpus.doc_of(inst), gen, {}, 10, rng, true));
    }
    auto total = [&](const RuleGenerator& g) {
        double s = 0.0;
        for (const auto& p : ps) s += generator_objective(p, g, 10);
        return s;
    };
    const double before = total(gen);
    m_step_generator(ps, gen);
    EXPECT_GE(total(gen), before);
    EXPECT_THROW(m_step_generator({}, gen), Error);
}

TEST(EM, SeparableToyIsLearnedExactly) {
    Toy toy;
    auto result = run_em(toy.corpus, toy.vocab, small_config());
    ASSERT_EQ(result.diagnostics.size(), 3u);
    EXPECT_GT(result.weights.weight_of({0, {1, 2}}), 0.0);
    std::size_t correct = 0;
    for (const auto& inst : toy.corpus.instances()) {
        auto inf = infer(toy.corpus.doc_of(inst), inst.query, result.generator, result.weights, small_config());
        correct += inf.label == inst.label;
    }
    EXPECT_EQ(correct, toy.corpus.instances().size());
    EXPECT_EQ(result.diagnostics.back().train_f1, 1.0);
}

TEST(EM, SingleIteration) {
    Toy toy(3);
    auto cfg = small_config();
    cfg.iterations = 1;
    std::size_t calls = 0;
    auto result = run_em(toy.corpus, toy.vocab, cfg, [&](const IterationDiagnostics& d) {
        ++calls;
        EXPECT_EQ(d.iteration, 1u);
        EXPECT_FALSE(d.fit_losses.empty());
    });
    EXPECT_EQ(calls, 1u);
    EXPECT_EQ(result.diagnostics.size(), 1u);
}

TEST(EM, IsDeterministicAcrossThreadCounts) {
    Toy toy(6);
    auto cfg = small_config();
    cfg.mode = InferenceMode::sample;
    cfg.threads = 1;
    auto a = run_em(toy.corpus, toy.vocab, cfg);
    cfg.threads = 3;
    auto b = run_em(toy.corpus, toy.vocab, cfg);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_EQ(a.generator.to_json(), b.generator.to_json());
    for (std::size_t i = 0; i < a.diagnostics.size(); ++i)
        EXPECT_EQ(a.diagnostics[i].generator_objective, b.diagnostics[i].generator_objective);
}

TEST(EM, ExtractorFitLossesAreMonotone) {
    Toy toy;
    auto result = run_em(toy.corpus, toy.vocab, small_config());
    for (const auto& d : result.diagnostics)
        for (std::size_t i = 1; i < d.fit_losses.size(); ++i) EXPECT_LE(d.fit_losses[i], d.fit_losses[i - 1]);
}

TEST(EM, RejectsBadConfigAndEmptyCorpus) {
    Toy toy;
    auto cfg = small_config();
    cfg.rules_per_query = 0;
    EXPECT_THROW(run_em(toy.corpus, toy.vocab, cfg), Error);
    cfg = small_config();
    cfg.beam = 2;
    EXPECT_THROW(run_em(toy.corpus, toy.vocab, cfg), Error);
    EXPECT_THROW(run_em(Corpus{}, toy.vocab, small_config()), Error);
}

TEST(Inference, ColdModelPredictsNegative) {
    Toy toy;
    RuleGenerator gen(toy.vocab.size());
    for (auto mode : {InferenceMode::top, InferenceMode::sample}) {
        auto cfg = small_config();
        cfg.mode = mode;
        auto inf = infer(toy.corpus.docs()[0], {0, 0, 2}, gen, ExtractorWeights{}, cfg);
        EXPECT_EQ(inf.label, -1);
        EXPECT_EQ(inf.prob_positive, 0.5);
    }
}

TEST(Inference, ExplanationsListOnlyGroundedRules) {
    Toy toy;
    const auto& doc = toy.corpus.docs()[0];
    ExtractorWeights w;
    w.bias[0] = -0.5;
    w.rule_weight[{0, {1, 2}}] = 2.0;
    w.rule_weight[{0, {2, 1}}] = 5.0;
    RuleSet set{{Rule{0, {1, 2}}, Rule{0, {2, 1}}, Rule{0, {1, 2}}}};
    auto inf = explain(doc, {0, 0, 2}, set, w);
    ASSERT_EQ(inf.rules.size(), 1u);
    const auto& c = inf.rules[0];
    EXPECT_EQ(c.multiplicity, 2u);
    EXPECT_EQ(c.path, (std::vector<EntityId>{0, 1, 2}));
    EXPECT_NEAR(c.contribution, 2.0 * 2.0 * 0.8, 1e-15);
    EXPECT_NEAR(inf.score, -0.5 + 3.2, 1e-15);
    EXPECT_EQ(inf.score, score(doc, {0, 0, 2}, set, w));
    EXPECT_EQ(inf.label, 1);
}

TEST(Inference, DocumentPredictionsAgreeWithPerQueryInference) {
    Toy toy;
    auto cfg = small_config();
    auto result = run_em(toy.corpus, toy.vocab, cfg);
    const auto& doc = toy.corpus.docs()[0];
    auto preds = predict_document(doc, toy.vocab, result.generator, result.weights, cfg);
    std::size_t positives = 0;
    for (RelationId r = 0; r < 3; ++r)
        for (EntityId h = 0; h < 4; ++h)
            for (EntityId t = 0; t < 4; ++t) {
                if (h == t) continue;
                auto inf = infer(doc, {h, r, t}, result.generator, result.weights, cfg);
                if (inf.label != 1) continue;
                ++positives;
                auto it = std::find_if(preds.begin(), preds.end(),
                                       [&](const TriplePrediction& p) { return p.triple == Triple{h, r, t}; });
                ASSERT_NE(it, preds.end());
                EXPECT_NEAR(it->prob, inf.prob_positive, 1e-12);
            }
    EXPECT_EQ(preds.size(), positives);
}
