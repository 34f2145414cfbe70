#pragma once

// Minimal clean FedAvg written directly against the model's forward/backward
// primitives, for cross-checking the orchestrator. It shares only the RNG
// stream names with the library (so runs are comparable), not its loops.

#include <vector>

#include "fedeat/autodiff.hpp"
#include "fedeat/dataset.hpp"
#include "fedeat/model.hpp"
#include "fedeat/rng.hpp"

namespace fedeat::reference {

struct Setup {
    std::size_t n = 4, m = 4, rounds = 5, epochs = 1, batch = 8;
    double lr = 0.5;
    std::uint64_t seed = 1;
};

inline std::vector<std::size_t> pick_clients(std::size_t n, std::size_t m, std::uint64_t seed, std::size_t t) {
    Rng rng = make_rng(seed, "sample", {t});
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(i);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + uniform_index(rng, n - i);
        const std::size_t tmp = ids[i];
        ids[i] = ids[j];
        ids[j] = tmp;
    }
    ids.resize(m);
    std::sort(ids.begin(), ids.end());
    return ids;
}

inline std::vector<double> local_sgd(const ModelParams& global, const std::vector<Sample>& data,
                                     const std::vector<std::size_t>& shard, const Setup& s, std::size_t t,
                                     std::size_t id) {
    Rng rng = make_rng(s.seed, "client", {t, id});
    ModelParams w = global;
    std::vector<std::size_t> order = shard;
    for (std::size_t e = 0; e < s.epochs; ++e) {
        shuffle_in_place(order, rng);
        for (std::size_t b = 0; b < order.size(); b += s.batch) {
            const std::size_t end = std::min(order.size(), b + s.batch);
            Tape tape;
            BoundModel bm = bind(tape, w, true);
            Var total;
            for (std::size_t i = b; i < end; ++i) {
                const Sample& x = data[order[i]];
                Var l = loss(bm, embed(bm, x.ids), x.mask, x.label);
                total = i == b ? l : add(total, l);
            }
            tape.backward(scale(total, 1.0 / static_cast<double>(end - b)));
            const ModelParams g = gradients(bm, w);
            for (std::size_t p = 0; p < w.tensors().size(); ++p) {
                auto wd = w.tensors()[p].tensor.data();
                const auto gd = g.tensors()[p].tensor.data();
                for (std::size_t i = 0; i < wd.size(); ++i) wd[i] -= s.lr * gd[i];
            }
        }
    }
    return w.flatten();
}

// Global parameters after each round.
inline std::vector<std::vector<double>> run(const ModelParams& init, const std::vector<Sample>& data,
                                            const std::vector<std::vector<std::size_t>>& shards, const Setup& s) {
    std::vector<std::vector<double>> history;
    ModelParams global = init;
    for (std::size_t t = 0; t < s.rounds; ++t) {
        const auto ids = pick_clients(s.n, s.m, s.seed, t);
        double total = 0.0;
        for (std::size_t id : ids) total += static_cast<double>(shards[id].size());
        std::vector<double> acc(global.parameter_count(), 0.0);
        for (std::size_t id : ids) {
            const std::vector<double> w = local_sgd(global, data, shards[id], s, t, id);
            const double pk = static_cast<double>(shards[id].size()) / total;
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += pk * w[i];
        }
        global = global.unflatten(acc);
        history.push_back(acc);
    }
    return history;
}

} // namespace fedeat::reference
