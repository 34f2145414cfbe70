#pragma once

// Round-based federated training: client sampling, local (adversarial) SGD,
// model-poisoning behaviours, and server aggregation.
//
// Random streams (all derived from the run seed):
//   partition          ("partition")
//   round-t sampling   ("sample", t)
//   client i, round t  ("client", t, i)    epoch shuffles and attack init
//   poisoning          ("malicious", t, i)
// Client streams depend only on (seed, round, client), so results do not
// depend on how client work is scheduled across threads.

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fedeat/adversary.hpp"
#include "fedeat/aggregation.hpp"
#include "fedeat/dataset.hpp"
#include "fedeat/error.hpp"
#include "fedeat/evaluation.hpp"
#include "fedeat/model.hpp"
#include "fedeat/rng.hpp"

namespace fedeat {

struct PartitionScheme {
    enum class Kind { iid, dirichlet } kind = Kind::dirichlet;
    double beta = 0.5;
};

enum class MaliciousKind { sign_flip, gaussian_noise, scale };

inline std::string to_string(MaliciousKind k) {
    switch (k) {
    case MaliciousKind::sign_flip: return "sign-flip";
    case MaliciousKind::gaussian_noise: return "gaussian-noise";
    case MaliciousKind::scale: return "scale";
    }
    return "?";
}

inline MaliciousKind parse_malicious(const std::string& s) {
    if (s == "sign-flip") return MaliciousKind::sign_flip;
    if (s == "gaussian-noise") return MaliciousKind::gaussian_noise;
    if (s == "scale") return MaliciousKind::scale;
    throw ConfigError({"malicious kind must be sign-flip, gaussian-noise or scale, got '" + s + "'"});
}

struct MaliciousBehavior {
    MaliciousKind kind = MaliciousKind::sign_flip;
    double sigma = 1.0;   // gaussian-noise
    double gamma = -1.0;  // scale

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (kind == MaliciousKind::gaussian_noise && !(sigma > 0)) v.push_back("malicious sigma must be > 0");
        if (kind == MaliciousKind::scale && (gamma == 0.0 || !std::isfinite(gamma)))
            v.push_back("malicious gamma must be finite and non-zero");
        return v;
    }
};

struct MaliciousClient {
    std::size_t client = 0;
    MaliciousBehavior behavior;
};

struct FederationConfig {
    std::size_t num_clients = 8;        // n
    std::size_t clients_per_round = 4;  // m
    std::size_t rounds = 20;            // T
    std::size_t local_epochs = 1;       // E
    double learning_rate = 0.5;         // eta
    std::size_t batch_size = 8;
    PartitionScheme partition;
    std::vector<MaliciousClient> malicious;
    // A round with more faulted clients than this fraction of m aborts the run.
    double max_fault_fraction = 0.5;
    // Client threads per round; 0 = hardware concurrency.
    std::size_t workers = 0;

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (num_clients < 1) v.push_back("federation.num_clients must be >= 1");
        if (clients_per_round < 1 || clients_per_round > num_clients)
            v.push_back("federation.clients_per_round must satisfy 1 <= m <= num_clients");
        if (rounds < 1) v.push_back("federation.rounds must be >= 1");
        if (local_epochs < 1) v.push_back("federation.local_epochs must be >= 1");
        if (!(learning_rate > 0)) v.push_back("federation.learning_rate must be > 0");
        if (batch_size < 1) v.push_back("federation.batch_size must be >= 1");
        if (partition.kind == PartitionScheme::Kind::dirichlet && !(partition.beta > 0))
            v.push_back("federation.partition.beta must be > 0");
        if (!(max_fault_fraction >= 0 && max_fault_fraction <= 1))
            v.push_back("federation.max_fault_fraction must lie in [0, 1]");
        std::vector<bool> seen(num_clients, false);
        for (const auto& m : malicious) {
            if (m.client >= num_clients) {
                v.push_back("federation.malicious client " + std::to_string(m.client) + " is not in [0, n)");
                continue;
            }
            if (seen[m.client]) v.push_back("federation.malicious client " + std::to_string(m.client) + " listed twice");
            seen[m.client] = true;
            for (auto& s : m.behavior.violations()) v.push_back("federation." + s);
        }
        return v;
    }
};

// ---------------------------------------------------------------------------

// Splits sample indices into n disjoint, non-empty shards covering all of
// them. iid: shuffled then cut into near-equal runs. dirichlet: each class is
// divided by proportions drawn from Dirichlet(beta * 1_n); empty shards then
// take one index at a time from the currently largest shard.
inline std::vector<std::vector<std::size_t>> partition_data(std::span<const std::size_t> labels, std::size_t n,
                                                            const PartitionScheme& scheme, std::uint64_t seed) {
    if (labels.empty()) throw Error("partition_data: empty dataset");
    if (n < 1 || n > labels.size())
        throw Error("partition_data: cannot split " + std::to_string(labels.size()) + " examples into " +
                    std::to_string(n) + " non-empty shards");
    Rng rng = make_rng(seed, "partition");
    std::vector<std::vector<std::size_t>> shards(n);
    if (scheme.kind == PartitionScheme::Kind::iid) {
        std::vector<std::size_t> idx(labels.size());
        std::iota(idx.begin(), idx.end(), 0);
        shuffle_in_place(idx, rng);
        const std::size_t base = idx.size() / n, extra = idx.size() % n;
        std::size_t off = 0;
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t len = base + (s < extra ? 1 : 0);
            shards[s].assign(idx.begin() + static_cast<std::ptrdiff_t>(off),
                             idx.begin() + static_cast<std::ptrdiff_t>(off + len));
            off += len;
        }
    } else {
        if (!(scheme.beta > 0)) throw Error("partition_data: dirichlet beta must be > 0");
        std::map<std::size_t, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
        std::gamma_distribution<double> gamma(scheme.beta, 1.0);
        for (auto& [cls, idx] : by_class) {
            shuffle_in_place(idx, rng);
            std::vector<double> p(n);
            double total = 0.0;
            for (auto& x : p) total += (x = gamma(rng));
            if (!(total > 0)) std::fill(p.begin(), p.end(), 1.0), total = static_cast<double>(n);
            double cum = 0.0;
            std::size_t start = 0;
            for (std::size_t s = 0; s < n; ++s) {
                cum += p[s] / total;
                std::size_t end = s + 1 == n ? idx.size()
                                             : std::min(idx.size(), static_cast<std::size_t>(std::llround(
                                                                        cum * static_cast<double>(idx.size()))));
                end = std::max(end, start);
                shards[s].insert(shards[s].end(), idx.begin() + static_cast<std::ptrdiff_t>(start),
                                 idx.begin() + static_cast<std::ptrdiff_t>(end));
                start = end;
            }
        }
        for (auto& s : shards) std::sort(s.begin(), s.end());
        for (std::size_t s = 0; s < n; ++s) {
            while (shards[s].empty()) {
                auto largest = std::max_element(shards.begin(), shards.end(),
                                                [](const auto& a, const auto& b) { return a.size() < b.size(); });
                shards[s].push_back(largest->back());
                largest->pop_back();
            }
        }
    }
    for (auto& s : shards) std::sort(s.begin(), s.end());
    return shards;
}

// m distinct client ids drawn uniformly without replacement, ascending.
inline std::vector<std::size_t> sample_clients(std::size_t n, std::size_t m, Rng& rng) {
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    for (std::size_t i = 0; i < m; ++i) std::swap(ids[i], ids[i + uniform_index(rng, n - i)]);
    ids.resize(m);
    std::sort(ids.begin(), ids.end());
    return ids;
}

// Leaves of a bound model in schema order.
inline std::vector<Var> bound_leaves(const BoundModel& m) {
    std::vector<Var> v{*m.embedding};
    for (std::size_t i = 0; i < m.hidden_weights.size(); ++i) {
        v.push_back(m.hidden_weights[i]);
        v.push_back(m.hidden_biases[i]);
    }
    v.push_back(m.head_weight);
    v.push_back(m.head_bias);
    return v;
}

// Local training: E epochs of minibatch SGD over a shuffled copy of the
// shard, each batch minimizing the mean adversarial loss. A non-finite batch
// loss aborts the client; the update then carries `global` unchanged and
// faulted = true.
inline ClientUpdate client_train(const ModelParams& global, std::span<const Sample> data,
                                 std::span<const std::size_t> shard, const FederationConfig& cfg,
                                 const PerturbationConfig& pert, std::size_t client_id, Rng& rng) {
    if (shard.empty()) throw Error("client_train: empty shard for client " + std::to_string(client_id));
    ClientUpdate up{client_id, global, shard.size(), "honest", 0.0, false};
    std::vector<std::size_t> order(shard.begin(), shard.end());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        shuffle_in_place(order, rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            Tape tape;
            BoundModel m = bind(tape, up.params, true);
            Var total;
            for (std::size_t i = start; i < end; ++i) {
                Var l = adversarial_loss(tape, m, up.params, data[order[i]], pert, &rng).total;
                total = i == start ? l : add(total, l);
            }
            Var batch_loss = scale(total, 1.0 / static_cast<double>(end - start));
            const double value = batch_loss.value().item();
            if (!std::isfinite(value)) {
                up.params = global;
                up.faulted = true;
                up.train_loss = value;
                return up;
            }
            tape.backward(batch_loss);
            const auto leaves = bound_leaves(m);
            auto& tensors = up.params.tensors();
            for (std::size_t p = 0; p < leaves.size(); ++p) {
                const Tensor& g = leaves[p].grad();
                auto w = tensors[p].tensor.data();
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.learning_rate * g[i];
            }
            loss_sum += value;
            ++batches;
        }
    }
    up.train_loss = loss_sum / static_cast<double>(batches);
    return up;
}

// Model poisoning on a finished update:
//   sign-flip       w <- 2 w_global - w
//   gaussian-noise  w <- w + N(0, sigma^2 I)
//   scale           w <- w_global + gamma (w - w_global)
inline ClientUpdate apply_malicious(ClientUpdate update, const ModelParams& global, const MaliciousBehavior& behavior,
                                    Rng& rng) {
    throw_if_invalid(behavior.violations());
    update.honesty = "malicious:" + to_string(behavior.kind);
    if (behavior.kind == MaliciousKind::scale && behavior.gamma == 1.0) return update;
    std::vector<double> w = update.params.flatten();
    const std::vector<double> g = global.flatten();
    std::normal_distribution<double> noise(0.0, behavior.sigma);
    for (std::size_t i = 0; i < w.size(); ++i) {
        switch (behavior.kind) {
        case MaliciousKind::sign_flip: w[i] = 2.0 * g[i] - w[i]; break;
        case MaliciousKind::gaussian_noise: w[i] += noise(rng); break;
        case MaliciousKind::scale: w[i] = g[i] + behavior.gamma * (w[i] - g[i]); break;
        }
    }
    update.params = update.params.unflatten(w);
    return update;
}

// ---------------------------------------------------------------------------

struct RoundRecord {
    std::size_t round = 0;
    std::vector<std::size_t> sampled;
    std::vector<double> client_losses;
    std::vector<std::string> honesty;
    std::size_t faults = 0;
    double mean_client_loss = 0.0;
    AggregationTelemetry aggregation;
    std::optional<EvalReport> eval;
    double wall_seconds = 0.0;  // log only; never written to data files
};

struct FederationResult {
    ModelParams final_params;
    std::vector<RoundRecord> rounds;
};

struct FederationHooks {
    // Evaluate after rounds where (round + 1) % eval_every == 0, and after the
    // last round. 0 disables scheduled evaluation.
    std::size_t eval_every = 0;
    std::function<EvalReport(const ModelParams&)> evaluator;
    // Called after each round with the new global model.
    std::function<void(const RoundRecord&, const ModelParams&)> on_round;
};

class RunError : public Error {
public:
    using Error::Error;
};

namespace detail {

template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    pool.clear();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace detail

inline FederationResult run_federation(const ModelParams& initial, std::span<const Sample> train,
                                       const std::vector<std::vector<std::size_t>>& shards,
                                       const FederationConfig& cfg, const PerturbationConfig& pert,
                                       const AggregationPolicy& policy, std::uint64_t seed,
                                       const FederationHooks& hooks = {}) {
    {
        auto v = cfg.violations();
        for (auto& s : pert.violations()) v.push_back(s);
        for (auto& s : policy.violations()) v.push_back(s);
        throw_if_invalid(std::move(v));
    }
    if (shards.size() != cfg.num_clients)
        throw Error("run_federation: " + std::to_string(shards.size()) + " shards for " +
                    std::to_string(cfg.num_clients) + " clients");
    std::vector<const MaliciousBehavior*> behavior(cfg.num_clients, nullptr);
    for (const auto& m : cfg.malicious) behavior[m.client] = &m.behavior;

    FederationResult result{initial, {}};
    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        const auto started = std::chrono::steady_clock::now();
        Rng sampler = make_rng(seed, "sample", {t});
        RoundRecord rec;
        rec.round = t;
        rec.sampled = sample_clients(cfg.num_clients, cfg.clients_per_round, sampler);

        const ModelParams& global = result.final_params;
        std::vector<ClientUpdate> updates(rec.sampled.size());
        detail::parallel_for(rec.sampled.size(), cfg.workers, [&](std::size_t k) {
            const std::size_t id = rec.sampled[k];
            Rng rng = make_rng(seed, "client", {t, id});
            ClientUpdate up = client_train(global, train, shards[id], cfg, pert, id, rng);
            if (behavior[id] && !up.faulted) {
                Rng poison = make_rng(seed, "malicious", {t, id});
                up = apply_malicious(std::move(up), global, *behavior[id], poison);
            }
            updates[k] = std::move(up);
        });

        double loss_sum = 0.0;
        std::size_t healthy = 0;
        for (const auto& u : updates) {
            rec.client_losses.push_back(u.train_loss);
            rec.honesty.push_back(u.honesty);
            if (u.faulted) {
                ++rec.faults;
            } else {
                loss_sum += u.train_loss;
                ++healthy;
            }
        }
        rec.mean_client_loss = healthy ? loss_sum / static_cast<double>(healthy) : std::nan("");
        if (static_cast<double>(rec.faults) > cfg.max_fault_fraction * static_cast<double>(updates.size())) {
            throw RunError("round " + std::to_string(t) + ": " + std::to_string(rec.faults) + " of " +
                           std::to_string(updates.size()) + " clients produced a non-finite loss (limit " +
                           std::to_string(cfg.max_fault_fraction) + " of m)");
        }

        AggregationResult agg = aggregate(updates, policy);
        rec.aggregation = agg.telemetry;
        result.final_params = std::move(agg.params);

        const bool last = t + 1 == cfg.rounds;
        if (hooks.evaluator && hooks.eval_every > 0 && ((t + 1) % hooks.eval_every == 0 || last)) {
            rec.eval = hooks.evaluator(result.final_params);
        }
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (hooks.on_round) hooks.on_round(rec, result.final_params);
        result.rounds.push_back(std::move(rec));
    }
    return result;
}

} // namespace fedeat
