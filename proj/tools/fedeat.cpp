// fedeat: generate synthetic data, run federated experiments, evaluate
// checkpoints, and compare run summaries.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "fedeat/experiment.hpp"

namespace fs = std::filesystem;
using namespace fedeat;

namespace {

constexpr int exit_runtime = 1;
constexpr int exit_config = 2;

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    const fs::path probe = dir / ".fedeat-write-probe";
    std::ofstream out(probe);
    if (ec || !out) throw ConfigError({"output path is not writable: " + dir.string()});
    out.close();
    fs::remove(probe, ec);
}

// Unreadable or malformed inputs are usage errors, not runtime faults.
template <typename F>
auto as_input(F&& load) {
    try {
        return load();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& err) {
        throw ConfigError({err.what()});
    }
}

json read_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError({"cannot read " + path});
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError({path + ": " + e.what()});
    }
}

struct GenData {
    std::string task = "sst2-like";
    GeneratorOptions options;
    std::uint64_t seed = 1;
    std::string out;

    int run() const {
        const TaskKind kind = parse_task(task);
        throw_if_invalid(options.size >= 2 ? std::vector<std::string>{}
                                           : std::vector<std::string>{"--size must be >= 2"});
        const fs::path dir(out);
        ensure_dir(dir);
        const GeneratedTask t = generate_task(kind, options, seed);
        write_jsonl((dir / "train.jsonl").string(), t.train);
        write_jsonl((dir / "test.jsonl").string(), t.test);
        t.vocab.save((dir / "vocab.txt").string());
        log::info("wrote " + std::to_string(t.train.size()) + " train and " + std::to_string(t.test.size()) +
                  " test examples to " + dir.string());
        return 0;
    }
};

struct Run {
    std::string config;
    bool dry_run = false;
    std::optional<std::size_t> workers, rounds;
    std::optional<std::uint64_t> seed;
    std::string preset, output;

    int run() const {
        ExperimentConfig c = load_experiment(config);
        if (seed) c.seed = *seed;
        if (rounds) c.federation.rounds = *rounds;
        if (workers) c.federation.workers = *workers;
        if (!preset.empty()) apply_preset(c, preset);
        if (!output.empty()) c.output_dir = fs::absolute(output).lexically_normal().string();
        throw_if_invalid(c.violations());
        const LoadedData data = load_data(c);
        c = resolve(std::move(c), data);
        if (dry_run) {
            std::cout << json{{"config", experiment_json(c)}, {"plan", round_plan(c, data)}}.dump(2) << '\n';
            return 0;
        }
        log::info("run " + c.name + " (" + (c.preset.empty() ? "custom" : c.preset) + ", seed " +
                  std::to_string(c.seed) + ") -> " + c.output_dir);
        const json summary = run_to_directory(c, data);
        std::cout << summary.at("final").dump() << '\n';
        return 0;
    }
};

struct Eval {
    std::string checkpoint, benign, vocab, adversarial, config, out;
    TextPerturbationSpec spec;
    std::string mode = "both";

    int run() {
        const ModelParams params = as_input([&] { return load_checkpoint(checkpoint); });
        const Vocabulary v = as_input([&] { return Vocabulary::load(vocab); });
        const std::vector<Example> data = as_input([&] { return read_jsonl(benign); });
        if (data.empty()) throw ConfigError({"--benign has no examples: " + benign});

        // The architecture this data needs, from a run config if given,
        // otherwise the checkpoint's own shape sized to the vocabulary.
        ArchitectureConfig expected = params.arch();
        if (!config.empty()) {
            ExperimentConfig c = load_experiment(config);
            expected = c.architecture;
        }
        if (expected.vocab_size == 0 || config.empty()) expected.vocab_size = v.size();
        std::size_t max_label = 0;
        for (const auto& e : data) max_label = std::max(max_label, e.label);
        if (expected.num_classes == 0) expected.num_classes = params.arch().num_classes;
        if (max_label >= expected.num_classes) expected.num_classes = max_label + 1;
        const auto diff = schema_diff(expected, params.arch());
        if (!diff.empty()) {
            std::cerr << "checkpoint does not match the expected architecture:\n";
            for (const auto& d : diff) std::cerr << "  " << d << '\n';
            return exit_config;
        }

        std::vector<EvalPair> pairs;
        if (!adversarial.empty()) {
            const std::vector<Example> adv = as_input([&] { return read_jsonl(adversarial); });
            if (adv.size() != data.size())
                throw ConfigError({"--adversarial has " + std::to_string(adv.size()) + " examples but --benign has " +
                                   std::to_string(data.size())});
            for (std::size_t i = 0; i < data.size(); ++i) pairs.push_back({data[i], adv[i]});
        } else {
            spec.mode = parse_text_mode(mode);
            pairs = build_eval_pairs(data, spec, v);
        }
        const std::string report = report_json(evaluate(params, v, pairs)).dump(2) + "\n";
        if (out.empty()) {
            std::cout << report;
        } else {
            if (fs::path(out).has_parent_path()) ensure_dir(fs::path(out).parent_path());
            write_text(out, report);
        }
        return 0;
    }
};

struct Compare {
    std::vector<std::string> baseline, candidate;
    std::string out;

    int run() const {
        std::vector<json> b, c;
        for (const auto& p : baseline) b.push_back(read_json(p));
        for (const auto& p : candidate) c.push_back(read_json(p));
        const std::string csv = compare_summaries(b, c);
        if (out.empty()) {
            std::cout << csv;
        } else {
            write_text(out, csv);
        }
        return 0;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated adversarial-training simulator"};
    app.require_subcommand(1);

    GenData gen;
    auto* g = app.add_subcommand("gen-data", "Write synthetic train/test JSONL and a vocabulary");
    g->add_option("--task", gen.task, "sst2-like, qqp-like, mnli-like or qnli-like")->capture_default_str();
    g->add_option("--size", gen.options.size, "Total examples before the split")->capture_default_str();
    g->add_option("--vocab-size", gen.options.vocab_size, "Vocabulary entries")->capture_default_str();
    g->add_option("--train-fraction", gen.options.train_fraction)->capture_default_str();
    g->add_option("--noise", gen.options.noise, "Chance of one misleading cue word")->capture_default_str();
    g->add_option("--seed", gen.seed)->capture_default_str();
    g->add_option("--out", gen.out, "Output directory")->required();

    Run run;
    auto* r = app.add_subcommand("run", "Run a federated experiment from a JSON config");
    r->add_option("config", run.config, "Experiment config")->required()->check(CLI::ExistingFile);
    r->add_flag("--dry-run", run.dry_run, "Print the resolved config and round plan, then exit");
    r->add_option("--workers", run.workers, "Client threads per round (0: all cores)");
    r->add_option("--seed", run.seed);
    r->add_option("--rounds", run.rounds);
    r->add_option("--preset", run.preset, "fedavg, eat-only, gm-only or fedeat");
    r->add_option("--output", run.output, "Output directory");

    Eval ev;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on benign and perturbed data");
    e->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
    e->add_option("--benign", ev.benign, "Benign JSONL")->required()->check(CLI::ExistingFile);
    e->add_option("--vocab", ev.vocab)->required()->check(CLI::ExistingFile);
    e->add_option("--adversarial", ev.adversarial, "Perturbed JSONL, aligned with --benign")->check(CLI::ExistingFile);
    e->add_option("--config", ev.config, "Run config whose architecture the checkpoint must match")
        ->check(CLI::ExistingFile);
    e->add_option("--mode", ev.mode, "word-substitution, distractor-append or both")->capture_default_str();
    e->add_option("--rate", ev.spec.rate)->capture_default_str();
    e->add_option("--perturb-seed", ev.spec.seed)->capture_default_str();
    e->add_option("--out", ev.out, "Report path (default: stdout)");

    Compare cmp;
    auto* c = app.add_subcommand("compare", "Tabulate ASR and accuracy deltas between two groups of runs");
    c->add_option("--baseline", cmp.baseline, "summary.json files")->required();
    c->add_option("--candidate", cmp.candidate, "summary.json files")->required();
    c->add_option("--out", cmp.out, "CSV path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : exit_config;
    }

    try {
        if (*g) return gen.run();
        if (*r) return run.run();
        if (*e) return ev.run();
        return cmp.run();
    } catch (const ConfigError& err) {
        std::cerr << err.what() << '\n';
        return exit_config;
    } catch (const std::exception& err) {
        log::error(err.what());
        return exit_runtime;
    }
}
