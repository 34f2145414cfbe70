#pragma once

// Declarative experiment configuration, data loading, and the run driver
// shared by the command-line tool and the acceptance suite.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedeat/adversary.hpp"
#include "fedeat/aggregation.hpp"
#include "fedeat/dataset.hpp"
#include "fedeat/error.hpp"
#include "fedeat/evaluation.hpp"
#include "fedeat/federation.hpp"
#include "fedeat/log.hpp"
#include "fedeat/model.hpp"

namespace fedeat {

using nlohmann::json;

struct GenerateSpec {
    TaskKind task = TaskKind::sst2;
    GeneratorOptions options;
    std::optional<std::uint64_t> seed;  // defaults to the run seed
};

struct DataSource {
    std::string train, test, vocab;  // JSONL, JSONL, one token per line
    std::optional<GenerateSpec> generate;
};

// The four ablation arms. A preset fixes whether local training is
// adversarial and which aggregator the server uses.
struct Preset {
    std::string name;
    bool adversarial;
    AggregationKind aggregation;
};

inline const std::vector<Preset>& presets() {
    static const std::vector<Preset> p{{"fedavg", false, AggregationKind::fedavg},
                                       {"eat-only", true, AggregationKind::fedavg},
                                       {"gm-only", false, AggregationKind::geometric_median},
                                       {"fedeat", true, AggregationKind::geometric_median}};
    return p;
}

inline const Preset* find_preset(const std::string& name) {
    for (const auto& p : presets())
        if (p.name == name) return &p;
    return nullptr;
}

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 1;
    std::string preset;  // empty: arms taken from the explicit fields
    DataSource data;
    // vocab_size and num_classes of 0 are filled in from the data.
    ArchitectureConfig architecture{0, 16, {16}, 0, 24, Activation::tanh};
    FederationConfig federation;
    bool adversarial_training = true;
    PerturbationConfig perturbation;
    AggregationPolicy aggregation;
    TextPerturbationSpec eval_perturbation;
    std::size_t eval_every = 5;        // 0: evaluate only after the last round
    std::size_t checkpoint_every = 0;  // 0: final model only
    std::string output_dir = "runs/experiment";

    // The perturbation settings local training actually uses.
    PerturbationConfig training_perturbation() const {
        PerturbationConfig p = perturbation;
        if (!adversarial_training) {
            p.lambda = 0.0;
            p.adv_only = false;
        }
        return p;
    }

    // Invariants that do not need the data. Architecture sizes are checked
    // after resolve().
    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (!preset.empty() && !find_preset(preset)) {
            v.push_back("preset must be one of fedavg, eat-only, gm-only, fedeat, got '" + preset + "'");
        }
        if (!data.generate && (data.train.empty() || data.test.empty() || data.vocab.empty())) {
            v.push_back("data needs train, test and vocab paths, or a generate block");
        }
        if (data.generate) {
            if (data.generate->options.size < 2) v.push_back("data.generate.size must be >= 2");
            if (!(data.generate->options.train_fraction > 0 && data.generate->options.train_fraction < 1))
                v.push_back("data.generate.train_fraction must lie in (0, 1)");
        }
        if (output_dir.empty()) v.push_back("output_dir must be set");
        for (auto& s : federation.violations()) v.push_back(s);
        for (auto& s : perturbation.violations()) v.push_back(s);
        for (auto& s : aggregation.violations()) v.push_back(s);
        for (auto& s : eval_perturbation.violations()) v.push_back("evaluation." + s);
        return v;
    }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

// Collects every problem instead of stopping at the first.
class Reader {
public:
    std::vector<std::string> errors;

    void keys(const json& obj, const std::string& path, std::initializer_list<std::string_view> allowed) {
        if (!obj.is_object()) {
            errors.push_back((path.empty() ? "config" : path) + " must be an object");
            return;
        }
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
                errors.push_back("unknown key " + path + (path.empty() ? "" : ".") + it.key());
        }
    }

    template <typename T>
    bool get(const json& obj, const std::string& path, const char* key, T& out) {
        if (!obj.is_object() || !obj.contains(key)) return false;
        const json& v = obj.at(key);
        const std::string where = path + (path.empty() ? "" : ".") + key;
        if constexpr (std::is_unsigned_v<T>) {
            if (v.is_number_integer() && v.get<long long>() < 0) {
                errors.push_back(where + " must be >= 0");
                return false;
            }
        }
        try {
            out = v.get<T>();
            return true;
        } catch (const json::exception&) {
            errors.push_back(where + " has the wrong type (" + v.type_name() + ")");
            return false;
        }
    }

    template <typename E, typename Parse>
    bool get_enum(const json& obj, const std::string& path, const char* key, E& out, Parse parse) {
        std::string s;
        if (!get(obj, path, key, s)) return false;
        try {
            out = parse(s);
            return true;
        } catch (const ConfigError& e) {
            for (const auto& m : e.violations()) errors.push_back(m);
            return false;
        }
    }

    const json& section(const json& obj, const char* key) {
        static const json empty = json::object();
        if (!obj.contains(key)) return empty;
        if (!obj.at(key).is_object()) {
            errors.push_back(std::string(key) + " must be an object");
            return empty;
        }
        return obj.at(key);
    }
};

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
    if (p.empty()) return p;
    const std::filesystem::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

} // namespace detail

inline std::string to_string(Norm n) { return n == Norm::l2 ? "l2" : "linf"; }
inline Norm parse_norm(const std::string& s) {
    if (s == "l2") return Norm::l2;
    if (s == "linf") return Norm::linf;
    throw ConfigError({"perturbation.norm must be l2 or linf, got '" + s + "'"});
}
inline std::string to_string(PerturbInit i) { return i == PerturbInit::zero ? "zero" : "random"; }
inline PerturbInit parse_init(const std::string& s) {
    if (s == "zero") return PerturbInit::zero;
    if (s == "random") return PerturbInit::random;
    throw ConfigError({"perturbation.init must be zero or random, got '" + s + "'"});
}
inline std::string to_string(ProjectionTarget t) { return t == ProjectionTarget::delta ? "delta" : "step"; }
inline ProjectionTarget parse_proj_target(const std::string& s) {
    if (s == "delta") return ProjectionTarget::delta;
    if (s == "step") return ProjectionTarget::step;
    throw ConfigError({"perturbation.proj_target must be delta or step, got '" + s + "'"});
}

inline json experiment_json(const ExperimentConfig& c) {
    json data = json::object();
    if (c.data.generate) {
        const auto& g = *c.data.generate;
        data["generate"] = {{"task", to_string(g.task)},
                            {"size", g.options.size},
                            {"vocab_size", g.options.vocab_size},
                            {"train_fraction", g.options.train_fraction},
                            {"noise", g.options.noise}};
        if (g.seed) data["generate"]["seed"] = *g.seed;
    } else {
        data = {{"train", c.data.train}, {"test", c.data.test}, {"vocab", c.data.vocab}};
    }
    json malicious = json::array();
    for (const auto& m : c.federation.malicious) {
        json e = {{"client", m.client}, {"kind", to_string(m.behavior.kind)}};
        if (m.behavior.kind == MaliciousKind::gaussian_noise) e["sigma"] = m.behavior.sigma;
        if (m.behavior.kind == MaliciousKind::scale) e["gamma"] = m.behavior.gamma;
        malicious.push_back(e);
    }
    const auto& f = c.federation;
    const auto& p = c.perturbation;
    const auto& e = c.eval_perturbation;
    json j = {
        {"name", c.name},
        {"seed", c.seed},
        {"data", data},
        {"architecture", c.architecture},
        {"federation",
         {{"num_clients", f.num_clients},
          {"clients_per_round", f.clients_per_round},
          {"rounds", f.rounds},
          {"local_epochs", f.local_epochs},
          {"learning_rate", f.learning_rate},
          {"batch_size", f.batch_size},
          {"partition",
           f.partition.kind == PartitionScheme::Kind::iid ? json{{"kind", "iid"}}
                                                          : json{{"kind", "dirichlet"}, {"beta", f.partition.beta}}},
          {"malicious", malicious},
          {"max_fault_fraction", f.max_fault_fraction},
          {"workers", f.workers}}},
        {"perturbation",
         {{"enabled", c.adversarial_training},
          {"epsilon", p.epsilon},
          {"alpha", p.alpha},
          {"steps", p.steps},
          {"norm", to_string(p.norm)},
          {"lambda", p.lambda},
          {"init", to_string(p.init)},
          {"proj_target", to_string(p.proj_target)},
          {"adv_only", p.adv_only}}},
        {"aggregation",
         {{"kind", to_string(c.aggregation.kind)},
          {"tolerance", c.aggregation.tolerance},
          {"max_iterations", c.aggregation.max_iterations},
          {"smoothing", c.aggregation.smoothing}}},
        {"evaluation",
         {{"every", c.eval_every},
          {"text_perturbation",
           {{"mode", to_string(e.mode)}, {"rate", e.rate}, {"distractors", e.distractors}, {"seed", e.seed}}}}},
        {"checkpoint_every", c.checkpoint_every},
        {"output_dir", c.output_dir}};
    if (!c.preset.empty()) j["preset"] = c.preset;
    return j;
}

// Parses a config document. Relative paths resolve against `base_dir`.
// Throws ConfigError listing every problem found.
inline ExperimentConfig parse_experiment(const json& j, const std::filesystem::path& base_dir = ".") {
    detail::Reader r;
    ExperimentConfig c;
    r.keys(j, "", {"name", "seed", "preset", "data", "architecture", "federation", "perturbation", "aggregation",
                   "evaluation", "checkpoint_every", "output_dir"});
    if (!j.is_object()) throw ConfigError(r.errors);
    r.get(j, "", "name", c.name);
    r.get(j, "", "seed", c.seed);
    r.get(j, "", "preset", c.preset);
    r.get(j, "", "checkpoint_every", c.checkpoint_every);
    if (r.get(j, "", "output_dir", c.output_dir)) c.output_dir = detail::resolve_path(c.output_dir, base_dir);

    const json& d = r.section(j, "data");
    r.keys(d, "data", {"train", "test", "vocab", "generate"});
    if (d.contains("generate")) {
        const json& g = r.section(d, "generate");
        r.keys(g, "data.generate", {"task", "size", "vocab_size", "train_fraction", "noise", "seed"});
        GenerateSpec spec;
        r.get_enum(g, "data.generate", "task", spec.task, parse_task);
        r.get(g, "data.generate", "size", spec.options.size);
        r.get(g, "data.generate", "vocab_size", spec.options.vocab_size);
        r.get(g, "data.generate", "train_fraction", spec.options.train_fraction);
        r.get(g, "data.generate", "noise", spec.options.noise);
        std::uint64_t seed = 0;
        if (r.get(g, "data.generate", "seed", seed)) spec.seed = seed;
        c.data.generate = spec;
        if (d.contains("train") || d.contains("test") || d.contains("vocab"))
            r.errors.push_back("data: give either file paths or a generate block, not both");
    } else {
        for (auto [key, out] : {std::pair{"train", &c.data.train}, {"test", &c.data.test}, {"vocab", &c.data.vocab}}) {
            if (r.get(d, "data", key, *out)) *out = detail::resolve_path(*out, base_dir);
        }
    }

    const json& a = r.section(j, "architecture");
    r.keys(a, "architecture", {"vocab_size", "embed_dim", "hidden_dims", "num_classes", "max_len", "activation",
                               "pooling"});
    r.get(a, "architecture", "vocab_size", c.architecture.vocab_size);
    r.get(a, "architecture", "embed_dim", c.architecture.embed_dim);
    r.get(a, "architecture", "hidden_dims", c.architecture.hidden_dims);
    r.get(a, "architecture", "num_classes", c.architecture.num_classes);
    r.get(a, "architecture", "max_len", c.architecture.max_len);
    r.get_enum(a, "architecture", "activation", c.architecture.activation, parse_activation);
    std::string pooling = "mean";
    if (r.get(a, "architecture", "pooling", pooling) && pooling != "mean")
        r.errors.push_back("architecture.pooling: only 'mean' is supported");

    const json& f = r.section(j, "federation");
    auto& fc = c.federation;
    r.keys(f, "federation", {"num_clients", "clients_per_round", "rounds", "local_epochs", "learning_rate",
                             "batch_size", "partition", "malicious", "max_fault_fraction", "workers"});
    r.get(f, "federation", "num_clients", fc.num_clients);
    r.get(f, "federation", "clients_per_round", fc.clients_per_round);
    r.get(f, "federation", "rounds", fc.rounds);
    r.get(f, "federation", "local_epochs", fc.local_epochs);
    r.get(f, "federation", "learning_rate", fc.learning_rate);
    r.get(f, "federation", "batch_size", fc.batch_size);
    r.get(f, "federation", "max_fault_fraction", fc.max_fault_fraction);
    r.get(f, "federation", "workers", fc.workers);
    if (f.contains("partition")) {
        const json& p = r.section(f, "partition");
        r.keys(p, "federation.partition", {"kind", "beta"});
        std::string kind = "dirichlet";
        r.get(p, "federation.partition", "kind", kind);
        if (kind == "iid") {
            fc.partition.kind = PartitionScheme::Kind::iid;
        } else if (kind == "dirichlet") {
            fc.partition.kind = PartitionScheme::Kind::dirichlet;
        } else {
            r.errors.push_back("federation.partition.kind must be iid or dirichlet, got '" + kind + "'");
        }
        r.get(p, "federation.partition", "beta", fc.partition.beta);
    }
    if (f.contains("malicious")) {
        if (!f.at("malicious").is_array()) {
            r.errors.push_back("federation.malicious must be an array");
        } else {
            for (std::size_t i = 0; i < f.at("malicious").size(); ++i) {
                const json& m = f.at("malicious")[i];
                const std::string path = "federation.malicious[" + std::to_string(i) + "]";
                r.keys(m, path, {"client", "kind", "sigma", "gamma"});
                MaliciousClient mc;
                if (!r.get(m, path, "client", mc.client)) r.errors.push_back(path + ".client is required");
                r.get_enum(m, path, "kind", mc.behavior.kind, parse_malicious);
                r.get(m, path, "sigma", mc.behavior.sigma);
                r.get(m, path, "gamma", mc.behavior.gamma);
                fc.malicious.push_back(mc);
            }
        }
    }

    const json& p = r.section(j, "perturbation");
    auto& pc = c.perturbation;
    r.keys(p, "perturbation", {"enabled", "epsilon", "alpha", "steps", "norm", "lambda", "init", "proj_target",
                               "adv_only"});
    const bool explicit_enabled = r.get(p, "perturbation", "enabled", c.adversarial_training);
    r.get(p, "perturbation", "epsilon", pc.epsilon);
    r.get(p, "perturbation", "alpha", pc.alpha);
    r.get(p, "perturbation", "steps", pc.steps);
    r.get_enum(p, "perturbation", "norm", pc.norm, parse_norm);
    r.get(p, "perturbation", "lambda", pc.lambda);
    r.get_enum(p, "perturbation", "init", pc.init, parse_init);
    r.get_enum(p, "perturbation", "proj_target", pc.proj_target, parse_proj_target);
    r.get(p, "perturbation", "adv_only", pc.adv_only);

    const json& g = r.section(j, "aggregation");
    r.keys(g, "aggregation", {"kind", "tolerance", "max_iterations", "smoothing"});
    const bool explicit_kind = r.get_enum(g, "aggregation", "kind", c.aggregation.kind, parse_aggregation);
    r.get(g, "aggregation", "tolerance", c.aggregation.tolerance);
    r.get(g, "aggregation", "max_iterations", c.aggregation.max_iterations);
    r.get(g, "aggregation", "smoothing", c.aggregation.smoothing);

    const json& e = r.section(j, "evaluation");
    r.keys(e, "evaluation", {"every", "text_perturbation"});
    r.get(e, "evaluation", "every", c.eval_every);
    if (e.contains("text_perturbation")) {
        const json& t = r.section(e, "text_perturbation");
        r.keys(t, "evaluation.text_perturbation", {"mode", "rate", "distractors", "seed"});
        r.get_enum(t, "evaluation.text_perturbation", "mode", c.eval_perturbation.mode, parse_text_mode);
        r.get(t, "evaluation.text_perturbation", "rate", c.eval_perturbation.rate);
        r.get(t, "evaluation.text_perturbation", "distractors", c.eval_perturbation.distractors);
        r.get(t, "evaluation.text_perturbation", "seed", c.eval_perturbation.seed);
    }

    if (const Preset* pre = find_preset(c.preset)) {
        if (explicit_enabled && c.adversarial_training != pre->adversarial)
            r.errors.push_back("preset " + pre->name + " conflicts with perturbation.enabled = " +
                               (c.adversarial_training ? "true" : "false"));
        if (explicit_kind && c.aggregation.kind != pre->aggregation)
            r.errors.push_back("preset " + pre->name + " conflicts with aggregation.kind = " +
                               to_string(c.aggregation.kind));
        c.adversarial_training = pre->adversarial;
        c.aggregation.kind = pre->aggregation;
    }

    for (auto& v : c.violations()) r.errors.push_back(v);
    throw_if_invalid(std::move(r.errors));
    return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError({"cannot read config file " + path});
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError({path + ": " + e.what()});
    }
    return parse_experiment(j, std::filesystem::absolute(path).parent_path());
}

// Applies a preset to an already-parsed config (command-line override).
inline void apply_preset(ExperimentConfig& c, const std::string& name) {
    const Preset* p = find_preset(name);
    if (!p) throw ConfigError({"preset must be one of fedavg, eat-only, gm-only, fedeat, got '" + name + "'"});
    c.preset = p->name;
    c.adversarial_training = p->adversarial;
    c.aggregation.kind = p->aggregation;
}

// ---------------------------------------------------------------------------
// Data

struct LoadedData {
    std::string task;
    Vocabulary vocab;
    std::vector<Example> train, test;
};

inline LoadedData load_data(const ExperimentConfig& c) {
    if (c.data.generate) {
        const auto& g = *c.data.generate;
        GeneratedTask t = generate_task(g.task, g.options, g.seed.value_or(c.seed));
        return {to_string(g.task), std::move(t.vocab), std::move(t.train), std::move(t.test)};
    }
    LoadedData d;
    try {
        d.vocab = Vocabulary::load(c.data.vocab);
        d.train = read_jsonl(c.data.train);
        d.test = read_jsonl(c.data.test);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError({std::string("data: ") + e.what()});
    }
    if (d.train.empty()) throw ConfigError({"data.train is empty: " + c.data.train});
    if (d.test.empty()) throw ConfigError({"data.test is empty: " + c.data.test});
    d.task = d.train.front().task;
    return d;
}

// Fills the data-dependent architecture fields and checks them.
inline ExperimentConfig resolve(ExperimentConfig c, const LoadedData& d) {
    std::vector<std::string> v;
    auto& a = c.architecture;
    if (a.vocab_size == 0) {
        a.vocab_size = d.vocab.size();
    } else if (a.vocab_size != d.vocab.size()) {
        v.push_back("architecture.vocab_size is " + std::to_string(a.vocab_size) + " but the vocabulary has " +
                    std::to_string(d.vocab.size()) + " entries");
    }
    std::size_t max_label = 0;
    for (const auto* split : {&d.train, &d.test})
        for (const auto& e : *split) max_label = std::max(max_label, e.label);
    if (a.num_classes == 0) {
        a.num_classes = c.data.generate ? num_classes(c.data.generate->task) : std::max<std::size_t>(2, max_label + 1);
    } else if (max_label >= a.num_classes) {
        v.push_back("data has label " + std::to_string(max_label) + " but architecture.num_classes is " +
                    std::to_string(a.num_classes));
    }
    for (auto& s : a.violations()) v.push_back(s);
    if (d.train.size() < c.federation.num_clients)
        v.push_back("federation.num_clients (" + std::to_string(c.federation.num_clients) +
                    ") exceeds the training set size (" + std::to_string(d.train.size()) + ")");
    for (auto& s : c.violations()) v.push_back(s);
    throw_if_invalid(std::move(v));
    return c;
}

// ---------------------------------------------------------------------------
// Running

inline std::vector<std::size_t> labels_of(const std::vector<Example>& ex) {
    std::vector<std::size_t> l;
    l.reserve(ex.size());
    for (const auto& e : ex) l.push_back(e.label);
    return l;
}

inline json round_plan(const ExperimentConfig& c, const LoadedData& d) {
    const auto shards = partition_data(labels_of(d.train), c.federation.num_clients, c.federation.partition, c.seed);
    json sizes = json::array();
    for (const auto& s : shards) sizes.push_back(s.size());
    json rounds = json::array();
    for (std::size_t t = 0; t < c.federation.rounds; ++t) {
        Rng rng = make_rng(c.seed, "sample", {t});
        const auto ids = sample_clients(c.federation.num_clients, c.federation.clients_per_round, rng);
        json mal = json::array();
        for (auto id : ids)
            for (const auto& m : c.federation.malicious)
                if (m.client == id) mal.push_back(id);
        const bool eval = (c.eval_every > 0 && (t + 1) % c.eval_every == 0) || t + 1 == c.federation.rounds;
        const bool ckpt = c.checkpoint_every > 0 && (t + 1) % c.checkpoint_every == 0;
        rounds.push_back({{"round", t}, {"clients", ids}, {"malicious", mal}, {"evaluate", eval}, {"checkpoint", ckpt}});
    }
    return {{"shard_sizes", sizes}, {"rounds", rounds}};
}

struct ExperimentResult {
    FederationResult federation;
    EvalReport final_report;
    json summary;
};

struct ExperimentHooks {
    std::function<void(const RoundRecord&, const ModelParams&)> on_round;
};

// Runs a resolved config in memory. Evaluation happens every eval_every
// rounds and always after the last one.
inline ExperimentResult run_experiment(const ExperimentConfig& c, const LoadedData& d, const ExperimentHooks& hooks = {}) {
    const auto train = to_samples(d.train, d.vocab, c.architecture.max_len);
    const auto shards = partition_data(labels_of(d.train), c.federation.num_clients, c.federation.partition, c.seed);
    const auto pairs = build_eval_pairs(d.test, c.eval_perturbation, d.vocab);
    FederationHooks fh;
    fh.eval_every = c.eval_every == 0 ? c.federation.rounds : c.eval_every;
    fh.evaluator = [&](const ModelParams& p) { return evaluate(p, d.vocab, pairs); };
    fh.on_round = hooks.on_round;
    ExperimentResult out;
    out.federation = run_federation(init_params(c.architecture, c.seed), train, shards, c.federation,
                                    c.training_perturbation(), c.aggregation, c.seed, fh);
    out.final_report = *out.federation.rounds.back().eval;
    std::size_t faults = 0;
    for (const auto& r : out.federation.rounds) faults += r.faults;
    out.summary = {{"name", c.name},
                   {"preset", c.preset.empty() ? json(nullptr) : json(c.preset)},
                   {"task", d.task},
                   {"seed", c.seed},
                   {"policy", to_string(c.aggregation.kind)},
                   {"adversarial_training", c.adversarial_training},
                   {"rounds", c.federation.rounds},
                   {"client_faults", faults},
                   {"status", "ok"},
                   {"final", report_json(out.final_report)}};
    return out;
}

// ---------------------------------------------------------------------------
// Artifacts

inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string metrics_header() {
    return "round,policy,mean_client_loss,client_faults,gm_iterations,aggregation_objective,accuracy,asr,b_c,a_m";
}

inline std::string metrics_row(const RoundRecord& r) {
    std::string s = std::to_string(r.round) + "," + to_string(r.aggregation.kind) + "," +
                    format_double(r.mean_client_loss) + "," + std::to_string(r.faults) + "," +
                    std::to_string(r.aggregation.iterations) + "," + format_double(r.aggregation.objective) + ",";
    if (r.eval) {
        s += format_double(r.eval->accuracy) + "," + (r.eval->asr ? format_double(*r.eval->asr) : "") + "," +
             std::to_string(r.eval->b_c) + "," + std::to_string(r.eval->a_m);
    } else {
        s += ",,,";
    }
    return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

// Runs `c` and writes into c.output_dir:
//   config.resolved.json   the resolved config (re-runnable as is)
//   adversarial_test.jsonl the perturbed evaluation set
//   metrics.csv            one row per round, flushed as rounds finish
//   checkpoints/round_NNNN.json every checkpoint_every rounds
//   model.json             final global model
//   summary.json           final report (status "failed" after a runtime fault)
// The directory must be writable; errors creating it are ConfigErrors.
inline json run_to_directory(const ExperimentConfig& c, const LoadedData& d) {
    namespace fs = std::filesystem;
    const fs::path dir(c.output_dir);
    std::error_code ec;
    fs::create_directories(dir / "checkpoints", ec);
    std::ofstream probe(dir / "config.resolved.json", std::ios::binary);
    if (ec || !probe) throw ConfigError({"output_dir is not writable: " + dir.string()});
    probe << experiment_json(c).dump(2) << '\n';
    probe.close();

    {
        std::ofstream adv(dir / "adversarial_test.jsonl", std::ios::binary);
        for (const auto& p : build_eval_pairs(d.test, c.eval_perturbation, d.vocab))
            adv << example_json(p.adversarial).dump() << '\n';
    }

    std::ofstream csv(dir / "metrics.csv", std::ios::binary);
    if (!csv) throw ConfigError({"output_dir is not writable: " + dir.string()});
    csv << metrics_header() << '\n' << std::flush;

    ExperimentHooks hooks;
    hooks.on_round = [&](const RoundRecord& r, const ModelParams& p) {
        csv << metrics_row(r) << '\n' << std::flush;
        std::ostringstream msg;
        msg << "round " << r.round + 1 << "/" << c.federation.rounds << " loss " << r.mean_client_loss;
        if (r.eval) {
            msg << " acc " << r.eval->accuracy << " asr ";
            if (r.eval->asr) msg << *r.eval->asr;
            else msg << "undefined";
        }
        msg << " (" << r.wall_seconds << "s)";
        log::info(msg.str());
        if (c.checkpoint_every > 0 && (r.round + 1) % c.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "round_%04zu.json", r.round + 1);
            save_checkpoint(p, (dir / "checkpoints" / name).string());
        }
    };
    try {
        ExperimentResult res = run_experiment(c, d, hooks);
        save_checkpoint(res.federation.final_params, (dir / "model.json").string());
        write_text(dir / "summary.json", res.summary.dump(2) + "\n");
        return res.summary;
    } catch (const RunError& e) {
        json failed = {{"name", c.name}, {"task", d.task}, {"seed", c.seed}, {"status", "failed"}, {"error", e.what()}};
        write_text(dir / "summary.json", failed.dump(2) + "\n");
        throw;
    }
}

// ---------------------------------------------------------------------------
// Comparison of two groups of run summaries (e.g. fedavg vs fedeat), one
// row per task plus an average row. Seeds within a group are averaged.

inline std::string compare_summaries(const std::vector<json>& baseline, const std::vector<json>& candidate) {
    struct Agg {
        double acc = 0, asr = 0;
        std::size_t n = 0, n_asr = 0;
        std::string label;
    };
    auto fold = [](const std::vector<json>& group, const char* side) {
        std::map<std::string, Agg> by_task;
        for (const auto& s : group) {
            if (s.value("status", std::string("ok")) != "ok" || !s.contains("final"))
                throw Error(std::string(side) + ": summary for task '" + s.value("task", std::string("?")) +
                            "' is not a completed run");
            Agg& a = by_task[s.at("task").get<std::string>()];
            const std::string label = s.at("preset").is_null() ? s.value("name", std::string("run"))
                                                                 : s.at("preset").get<std::string>();
            if (a.label.empty()) a.label = label;
            else if (a.label != label) a.label = "mixed";
            a.acc += s.at("final").at("accuracy").get<double>();
            ++a.n;
            if (!s.at("final").at("asr").is_null()) {
                a.asr += s.at("final").at("asr").get<double>();
                ++a.n_asr;
            }
        }
        return by_task;
    };
    const auto base = fold(baseline, "baseline"), cand = fold(candidate, "candidate");
    if (base.empty()) throw Error("compare: no baseline summaries");
    std::ostringstream out;
    out << "task,baseline,candidate,baseline_asr,candidate_asr,asr_delta,baseline_accuracy,candidate_accuracy,"
           "accuracy_delta\n";
    double sums[4] = {0, 0, 0, 0};
    std::size_t counts[2] = {0, 0};
    auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    for (const auto& [task, b] : base) {
        auto it = cand.find(task);
        if (it == cand.end()) throw Error("compare: task '" + task + "' has no candidate summary");
        const Agg& c = it->second;
        const double bacc = b.acc / static_cast<double>(b.n), cacc = c.acc / static_cast<double>(c.n);
        std::optional<double> basr, casr, dasr;
        if (b.n_asr) basr = b.asr / static_cast<double>(b.n_asr);
        if (c.n_asr) casr = c.asr / static_cast<double>(c.n_asr);
        if (basr && casr) {
            dasr = *casr - *basr;
            sums[0] += *basr, sums[1] += *casr, ++counts[0];
        }
        sums[2] += bacc, sums[3] += cacc, ++counts[1];
        out << task << "," << b.label << "," << c.label << "," << cell(basr) << "," << cell(casr) << "," << cell(dasr)
            << "," << format_double(bacc) << "," << format_double(cacc) << "," << format_double(cacc - bacc) << "\n";
    }
    for (const auto& [task, c] : cand)
        if (!base.count(task)) throw Error("compare: task '" + task + "' has no baseline summary");
    std::optional<double> ab, ac, ad;
    if (counts[0]) {
        ab = sums[0] / static_cast<double>(counts[0]);
        ac = sums[1] / static_cast<double>(counts[0]);
        ad = *ac - *ab;
    }
    const double bacc = sums[2] / static_cast<double>(counts[1]), cacc = sums[3] / static_cast<double>(counts[1]);
    out << "average,,," << cell(ab) << "," << cell(ac) << "," << cell(ad) << "," << format_double(bacc) << ","
        << format_double(cacc) << "," << format_double(cacc - bacc) << "\n";
    return out.str();
}

} // namespace fedeat
