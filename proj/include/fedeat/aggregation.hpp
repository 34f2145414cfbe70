#pragma once

// Server-side aggregation of client parameter vectors.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedeat/error.hpp"
#include "fedeat/model.hpp"

namespace fedeat {

struct ClientUpdate {
    std::size_t client_id = 0;
    ModelParams params;
    std::size_t sample_count = 1;
    // Ground-truth bookkeeping ("honest" or "malicious:<kind>"); aggregators
    // never read it.
    std::string honesty = "honest";
    double train_loss = 0.0;
    bool faulted = false;
};

enum class AggregationKind { fedavg, geometric_median };

inline std::string to_string(AggregationKind k) {
    return k == AggregationKind::fedavg ? "fedavg" : "geometric-median";
}

inline AggregationKind parse_aggregation(const std::string& s) {
    if (s == "fedavg") return AggregationKind::fedavg;
    if (s == "geometric-median") return AggregationKind::geometric_median;
    throw ConfigError({"aggregation.kind must be fedavg or geometric-median, got '" + s + "'"});
}

struct AggregationPolicy {
    AggregationKind kind = AggregationKind::geometric_median;
    double tolerance = 1e-6;  // stop when ||w_{t+1} - w_t||_2 <= tolerance
    int max_iterations = 100;
    double smoothing = 1e-8;  // floor on distances in the Weiszfeld weights

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (!(tolerance > 0)) v.push_back("aggregation.tolerance must be > 0");
        if (max_iterations < 1) v.push_back("aggregation.max_iterations must be >= 1");
        if (!(smoothing > 0)) v.push_back("aggregation.smoothing must be > 0");
        return v;
    }
};

struct AggregationTelemetry {
    AggregationKind kind = AggregationKind::fedavg;
    int iterations = 0;
    double objective = 0.0;  // sum_k ||w_k - w_agg||_2
};

struct AggregationResult {
    ModelParams params;
    AggregationTelemetry telemetry;
};

namespace detail {

inline void check_updates(std::span<const ClientUpdate> updates, const char* op) {
    if (updates.empty()) throw Error(std::string(op) + ": no client updates");
    for (const auto& u : updates) {
        if (!u.params.same_schema(updates.front().params)) {
            throw Error(std::string(op) + ": client " + std::to_string(u.client_id) + " has a different schema");
        }
        if (u.sample_count < 1) throw Error(std::string(op) + ": sample_count must be >= 1");
    }
}

// Canonical order (client id, then values) so results do not depend on the
// order in which updates arrived.
inline std::vector<std::vector<double>> canonical_vectors(std::span<const ClientUpdate> updates,
                                                          std::vector<std::size_t>* counts = nullptr) {
    std::vector<std::size_t> order(updates.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::vector<double>> flat;
    flat.reserve(updates.size());
    for (const auto& u : updates) flat.push_back(u.params.flatten());
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (updates[a].client_id != updates[b].client_id) return updates[a].client_id < updates[b].client_id;
        if (updates[a].sample_count != updates[b].sample_count) return updates[a].sample_count < updates[b].sample_count;
        return flat[a] < flat[b];
    });
    std::vector<std::vector<double>> out;
    out.reserve(updates.size());
    if (counts) counts->clear();
    for (std::size_t i : order) {
        out.push_back(std::move(flat[i]));
        if (counts) counts->push_back(updates[i].sample_count);
    }
    return out;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace detail

inline double sum_of_distances(std::span<const std::vector<double>> points, std::span<const double> w) {
    double s = 0.0;
    for (const auto& p : points) s += detail::distance(p, w);
    return s;
}

// agg[i] = sum_k (n_k / N) * w_k[i], summed in ascending client-id order.
// A single client (weight exactly 1) comes back bit-for-bit.
inline ModelParams fedavg(std::span<const ClientUpdate> updates) {
    detail::check_updates(updates, "fedavg");
    std::vector<std::size_t> counts;
    const auto vecs = detail::canonical_vectors(updates, &counts);
    const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    std::vector<double> agg(vecs.front().size(), 0.0);
    for (std::size_t k = 0; k < vecs.size(); ++k) {
        const double weight = static_cast<double>(counts[k]) / total;
        for (std::size_t i = 0; i < agg.size(); ++i) agg[i] += weight * vecs[k][i];
    }
    return updates.front().params.unflatten(agg);
}

struct WeiszfeldResult {
    std::vector<double> point;
    int iterations = 0;
    double objective = 0.0;
    // Objective at the initial point and after every iteration.
    std::vector<double> objective_trace;
};

// Smoothed Weiszfeld iteration for argmin_w sum_k ||w_k - w||_2, started at
// the unweighted mean:
//   w <- sum_k w_k / max(||w_k - w||, nu)  /  sum_k 1 / max(||w_k - w||, nu)
inline WeiszfeldResult weiszfeld(std::span<const std::vector<double>> points, const AggregationPolicy& policy) {
    throw_if_invalid(policy.violations());
    if (points.empty()) throw Error("geometric_median: no points");
    const std::size_t dim = points.front().size();
    for (const auto& p : points) {
        if (p.size() != dim) throw Error("geometric_median: points differ in dimension");
        for (double v : p)
            if (!std::isfinite(v)) throw Error("geometric_median: update contains non-finite values");
    }
    WeiszfeldResult r;
    r.point.assign(dim, 0.0);
    for (const auto& p : points)
        for (std::size_t i = 0; i < dim; ++i) r.point[i] += p[i];
    for (auto& v : r.point) v /= static_cast<double>(points.size());
    r.objective_trace.push_back(sum_of_distances(points, r.point));

    std::vector<double> next(dim);
    // A zero objective means every point coincides with the mean.
    while (r.objective_trace.back() > 0.0 && r.iterations < policy.max_iterations) {
        std::fill(next.begin(), next.end(), 0.0);
        double denom = 0.0;
        for (const auto& p : points) {
            const double w = 1.0 / std::max(detail::distance(p, r.point), policy.smoothing);
            denom += w;
            for (std::size_t i = 0; i < dim; ++i) next[i] += w * p[i];
        }
        for (auto& v : next) v /= denom;
        ++r.iterations;
        const double step = detail::distance(next, r.point);
        r.point.swap(next);
        r.objective_trace.push_back(sum_of_distances(points, r.point));
        if (step <= policy.tolerance) break;
    }
    r.objective = r.objective_trace.back();
    return r;
}

struct GeometricMedianResult {
    ModelParams params;
    int iterations = 0;
    double objective = 0.0;
    std::vector<double> objective_trace;
};

// Unweighted geometric median over the whole flattened parameter vector.
inline GeometricMedianResult geometric_median(std::span<const ClientUpdate> updates, const AggregationPolicy& policy) {
    detail::check_updates(updates, "geometric_median");
    const auto vecs = detail::canonical_vectors(updates);
    WeiszfeldResult w = weiszfeld(vecs, policy);
    return {updates.front().params.unflatten(w.point), w.iterations, w.objective, std::move(w.objective_trace)};
}

inline AggregationResult aggregate(std::span<const ClientUpdate> updates, const AggregationPolicy& policy) {
    if (policy.kind == AggregationKind::geometric_median) {
        auto gm = geometric_median(updates, policy);
        return {std::move(gm.params), {policy.kind, gm.iterations, gm.objective}};
    }
    ModelParams avg = fedavg(updates);
    std::vector<std::vector<double>> vecs;
    for (const auto& u : updates) vecs.push_back(u.params.flatten());
    const double objective = sum_of_distances(vecs, avg.flatten());
    return {std::move(avg), {policy.kind, 0, objective}};
}

} // namespace fedeat
