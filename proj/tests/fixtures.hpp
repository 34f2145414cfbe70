#pragma once

#include <numeric>
#include <vector>

#include "fedeat/dataset.hpp"
#include "fedeat/federation.hpp"
#include "fedeat/model.hpp"

namespace fedeat::fixture {

struct ToyModel {
    GeneratedTask task;
    ArchitectureConfig arch;
    ModelParams params;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

inline ArchitectureConfig toy_arch(const GeneratedTask& t) {
    ArchitectureConfig a;
    a.vocab_size = t.vocab.size();
    a.embed_dim = 8;
    a.hidden_dims = {};
    a.num_classes = num_classes(t.task);
    a.max_len = 16;
    return a;
}

// A clean-trained 2-class sentiment model (centralized SGD, a few epochs).
inline ToyModel trained_toy(std::uint64_t seed = 11, std::size_t size = 400, std::size_t epochs = 4) {
    GeneratorOptions opt;
    opt.size = size;
    opt.vocab_size = 120;
    ToyModel m{generate_task(TaskKind::sst2, opt, seed), {}, ModelParams{}, {}, {}};
    m.arch = toy_arch(m.task);
    m.train = to_samples(m.task.train, m.task.vocab, m.arch.max_len);
    m.test = to_samples(m.task.test, m.task.vocab, m.arch.max_len);
    FederationConfig fc;
    fc.local_epochs = epochs;
    fc.learning_rate = 2.0;
    fc.batch_size = 4;
    PerturbationConfig clean;
    clean.lambda = 0.0;
    std::vector<std::size_t> all(m.train.size());
    std::iota(all.begin(), all.end(), 0);
    Rng rng = make_rng(seed, "toy-train");
    m.params = client_train(init_params(m.arch, seed), m.train, all, fc, clean, 0, rng).params;
    return m;
}

inline double accuracy(const ModelParams& p, const std::vector<Sample>& data) {
    std::size_t ok = 0;
    for (const auto& s : data) ok += predict(p, s.ids) == s.label;
    return static_cast<double>(ok) / static_cast<double>(data.size());
}

} // namespace fedeat::fixture
