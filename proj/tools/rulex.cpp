// rulex: synthesize corpora, train, infer, evaluate, and run oracle checks.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rulex/commands.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::optional<std::string> mode;

    rulex::cli::Overrides overrides() const { return {seed, threads, mode}; }
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_config = true) {
    if (with_config) cmd->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "random seed (overrides the config)");
    cmd->add_option("--threads", f.threads, "worker threads (falls back to RULEX_THREADS, then 1)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--inference-mode", f.mode, "rule sets at inference: sample or top")
        ->check(CLI::IsMember({"sample", "top"}));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rulex: latent logic rules for document-level relation extraction"};
    app.require_subcommand(1);

    CommonFlags synth_flags, train_flags, infer_flags;
    std::string synth_out, corpus_dir, run_out, run_dir, docs_path, predictions_out;

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with planted rules");
    add_common(synth, synth_flags);
    synth->add_option("--out", synth_out, "output corpus directory")->required();

    auto* train = app.add_subcommand("train", "run EM on a corpus directory");
    add_common(train, train_flags);
    train->add_option("--corpus", corpus_dir, "corpus directory with vocab.txt and train.jsonl")
        ->required()
        ->check(CLI::ExistingDirectory);
    train->add_option("--out", run_out, "run directory for checkpoints and diagnostics")->required();

    auto* infer = app.add_subcommand("infer", "predict relations with a trained run");
    add_common(infer, infer_flags, false);
    infer->add_option("--run", run_dir, "run directory written by train")->required();
    infer->add_option("--docs", docs_path, "documents (JSONL)")->required()->check(CLI::ExistingFile);
    infer->add_option("--out", predictions_out, "predictions file (JSONL)")->required();

    rulex::cli::EvalInputs eval_in;
    auto* eval = app.add_subcommand("eval", "score predictions: F1, ign F1 and logic");
    eval->add_option("--predictions", eval_in.predictions, "predictions (JSONL)")->required()->check(CLI::ExistingFile);
    eval->add_option("--gold", eval_in.gold, "gold documents (JSONL)")->required()->check(CLI::ExistingFile);
    eval->add_option("--vocab", eval_in.vocab, "relation vocabulary")->required()->check(CLI::ExistingFile);
    eval->add_option("--train", eval_in.train, "training documents, whose facts ign F1 excludes")
        ->check(CLI::ExistingFile);
    eval->add_option("--rules", eval_in.rules, "rules for the logic score")->check(CLI::ExistingFile);
    eval->add_option("--out", eval_in.out, "JSON report path");

    std::string scope = "all", oracle_out;
    std::uint64_t oracle_seed = 1;
    auto* oracle = app.add_subcommand("oracle", "run the brute-force equivalence suites");
    oracle->add_option("--scope", scope, "all, grounding, posterior, generator, gradient or taylor")
        ->check(CLI::IsMember({"all", "grounding", "posterior", "generator", "gradient", "taylor"}));
    oracle->add_option("--seed", oracle_seed, "random seed for the generated cases");
    oracle->add_option("--out", oracle_out, "JSON report path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return rulex::cli::synth(synth_flags.config, synth_flags.overrides(), synth_out, std::cout);
        if (train->parsed())
            return rulex::cli::train(corpus_dir, train_flags.config, train_flags.overrides(), run_out, std::cout);
        if (infer->parsed())
            return rulex::cli::infer(run_dir, docs_path, infer_flags.overrides(), predictions_out, std::cout);
        if (eval->parsed()) return rulex::cli::eval(eval_in, std::cout);
        if (oracle->parsed()) return rulex::cli::run_oracle(scope, oracle_seed, oracle_out, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "rulex: error: " << e.what() << '\n';
        return rulex::cli::kExitError;
    }
    return rulex::cli::kExitError;
}
