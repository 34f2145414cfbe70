#pragma once

// Embedding-space PGD attacks used during training, and text-space
// perturbations used to build adversarial evaluation sets.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedeat/autodiff.hpp"
#include "fedeat/dataset.hpp"
#include "fedeat/error.hpp"
#include "fedeat/model.hpp"
#include "fedeat/rng.hpp"

namespace fedeat {

enum class Norm { l2, linf };
enum class PerturbInit { zero, random };
// `delta` projects the accumulated perturbation after every step (standard
// PGD). `step` projects each step alone and accumulates the results.
enum class ProjectionTarget { delta, step };

struct PerturbationConfig {
    double epsilon = 0.5;
    double alpha = 0.1;
    int steps = 10;
    Norm norm = Norm::l2;
    double lambda = 1.0;
    PerturbInit init = PerturbInit::zero;
    ProjectionTarget proj_target = ProjectionTarget::delta;
    // Train on the adversarial term only, without the clean term.
    bool adv_only = false;

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (!(epsilon > 0)) v.push_back("perturbation.epsilon must be > 0");
        if (!(alpha > 0)) v.push_back("perturbation.alpha must be > 0");
        if (steps < 1) v.push_back("perturbation.steps must be >= 1");
        if (!(lambda >= 0)) v.push_back("perturbation.lambda must be >= 0");
        return v;
    }

    friend bool operator==(const PerturbationConfig&, const PerturbationConfig&) = default;
};

inline double norm_of(const Tensor& t, Norm p) {
    double acc = 0.0;
    for (double v : t.data()) acc = p == Norm::l2 ? acc + v * v : std::max(acc, std::abs(v));
    return p == Norm::l2 ? std::sqrt(acc) : acc;
}

// Projection onto {d : ||d||_p <= epsilon}.
inline Tensor project(const Tensor& delta, double epsilon, Norm p) {
    for (double v : delta.data())
        if (!std::isfinite(v)) throw Error("project: perturbation has non-finite values");
    Tensor out = delta;
    if (p == Norm::linf) {
        for (auto& v : out.data()) v = std::clamp(v, -epsilon, epsilon);
        return out;
    }
    const double n = norm_of(delta, Norm::l2);
    if (n <= epsilon) return out;
    const double s = epsilon / n;
    for (auto& v : out.data()) v *= s;
    return out;
}

struct AttackResult {
    Tensor z_adv;
    Tensor delta;
    // The loss gradient went non-finite; delta was reset to zero.
    bool aborted = false;
};

inline Tensor random_in_ball(const Shape& shape, double epsilon, Norm p, Rng& rng) {
    Tensor d(shape);
    if (p == Norm::linf) {
        for (auto& v : d.data()) v = uniform_real(rng, -epsilon, epsilon);
        return d;
    }
    std::normal_distribution<double> n01(0.0, 1.0);
    for (auto& v : d.data()) v = n01(rng);
    const double n = norm_of(d, Norm::l2);
    const double radius = epsilon * std::pow(uniform01(rng), 1.0 / static_cast<double>(d.size()));
    if (n > 0)
        for (auto& v : d.data()) v *= radius / n;
    return d;
}

// Projected gradient ascent on the loss with respect to the embedding rows.
// Each step differentiates on a throwaway tape whose parameters are constants,
// so no parameter gradient is produced and `params` is never touched.
inline AttackResult pgd_attack(const ModelParams& params, const Tensor& z, std::span<const std::uint8_t> mask,
                               std::size_t label, const PerturbationConfig& cfg, Rng* rng = nullptr) {
    throw_if_invalid(cfg.violations());
    Tensor delta(z.shape());
    if (cfg.init == PerturbInit::random) {
        if (!rng) throw Error("pgd_attack: random init needs an rng");
        delta = random_in_ball(z.shape(), cfg.epsilon, cfg.norm, *rng);
    }
    for (int k = 0; k < cfg.steps; ++k) {
        Tape tape;
        BoundModel m = bind(tape, params, false, false);
        Tensor zin = z;
        for (std::size_t i = 0; i < zin.size(); ++i) zin[i] += delta[i];
        Var zv = tape.leaf(std::move(zin), true);
        Tensor g = tape.grad_wrt(loss(m, zv, mask, label), zv);
        bool finite = true;
        for (auto& v : g.data()) {
            finite = finite && std::isfinite(v);
            v *= cfg.alpha;
        }
        if (!finite) return {z, Tensor(z.shape()), true};
        if (cfg.proj_target == ProjectionTarget::delta) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
            delta = project(g, cfg.epsilon, cfg.norm);
        } else {
            Tensor step = project(g, cfg.epsilon, cfg.norm);
            for (std::size_t i = 0; i < step.size(); ++i) delta[i] += step[i];
        }
    }
    Tensor z_adv = z;
    for (std::size_t i = 0; i < z_adv.size(); ++i) z_adv[i] += delta[i];
    return {std::move(z_adv), std::move(delta), false};
}

struct AdversarialLoss {
    Var total;
    double clean = 0.0;
    std::optional<double> adversarial;
    bool attack_aborted = false;
};

// clean + lambda * adversarial on `tape`, where the adversarial term feeds
// embed(x) + delta with delta held constant. backward() therefore reaches the
// parameters through both terms. With lambda = 0 (and adv_only off) no attack
// runs and the result is the plain loss.
inline AdversarialLoss adversarial_loss(Tape& tape, const BoundModel& bound, const ModelParams& params,
                                        const Sample& sample, const PerturbationConfig& cfg, Rng* rng = nullptr) {
    Var z = embed(bound, sample.ids);
    Var clean = loss(bound, z, sample.mask, sample.label);
    AdversarialLoss out{clean, clean.value().item(), std::nullopt, false};
    if (cfg.lambda == 0.0 && !cfg.adv_only) return out;
    AttackResult attack = pgd_attack(params, z.value(), sample.mask, sample.label, cfg, rng);
    out.attack_aborted = attack.aborted;
    Var adv = loss(bound, add(z, tape.constant(std::move(attack.delta))), sample.mask, sample.label);
    out.adversarial = adv.value().item();
    out.total = cfg.adv_only ? adv : add(clean, scale(adv, cfg.lambda));
    return out;
}

inline double adversarial_loss_value(const ModelParams& params, const Sample& sample, const PerturbationConfig& cfg,
                                     Rng* rng = nullptr) {
    Tape tape;
    BoundModel m = bind(tape, params, false);
    return adversarial_loss(tape, m, params, sample, cfg, rng).total.value().item();
}

// ---------------------------------------------------------------------------
// Text perturbations

enum class TextMode { word_substitution, distractor_append, both };

inline std::string to_string(TextMode m) {
    switch (m) {
    case TextMode::word_substitution: return "word-substitution";
    case TextMode::distractor_append: return "distractor-append";
    case TextMode::both: return "both";
    }
    return "?";
}

inline TextMode parse_text_mode(const std::string& s) {
    if (s == "word-substitution") return TextMode::word_substitution;
    if (s == "distractor-append") return TextMode::distractor_append;
    if (s == "both") return TextMode::both;
    throw ConfigError({"text_perturbation.mode must be word-substitution, distractor-append or both, got '" + s + "'"});
}

struct TextPerturbationSpec {
    TextMode mode = TextMode::both;
    double rate = 0.15;
    std::vector<std::string> distractors = default_distractors();
    std::uint64_t seed = 7;

    bool substitutes() const { return mode != TextMode::distractor_append; }
    bool appends() const { return mode != TextMode::word_substitution; }

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (!(rate >= 0.0 && rate <= 1.0)) v.push_back("text_perturbation.rate must lie in [0, 1]");
        if (appends() && distractors.empty())
            v.push_back("text_perturbation.distractors must be non-empty for mode " + to_string(mode));
        return v;
    }
};

namespace detail {

inline std::string substitute_words(const std::string& text, double rate, std::span<const std::string> pool, Rng& rng,
                                    std::size_t& replaced) {
    std::vector<std::string> words = split_words(text);
    bool changed = false;
    for (auto& w : words) {
        if (is_stopword(w) || uniform01(rng) >= rate) continue;
        std::size_t tries = 0;
        std::string repl = w;
        while (repl == w && tries++ < 64) repl = pool[uniform_index(rng, pool.size())];
        if (repl != w) {
            w = std::move(repl);
            changed = true;
            ++replaced;
        }
    }
    if (!changed) return text;
    std::string out;
    for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
    return out;
}

} // namespace detail

// Label-preserving text perturbation. Substitution replaces each non-stopword
// with probability `rate` by a different word drawn from `pool`; distractor
// append adds one pool phrase to the last segment. Deterministic in
// (spec.seed, index).
inline Example perturb_text(const Example& example, const TextPerturbationSpec& spec,
                            std::span<const std::string> pool, std::uint64_t index) {
    throw_if_invalid(spec.violations());
    Example out = example;
    Rng rng = make_rng(spec.seed, "perturb-text", {index});
    std::size_t replaced = 0;
    if (spec.substitutes() && spec.rate > 0.0 && !pool.empty()) {
        out.text = detail::substitute_words(out.text, spec.rate, pool, rng, replaced);
        if (!out.text2.empty()) out.text2 = detail::substitute_words(out.text2, spec.rate, pool, rng, replaced);
    }
    if (spec.appends()) {
        const std::string& phrase = spec.distractors[uniform_index(rng, spec.distractors.size())];
        std::string& target = out.text2.empty() ? out.text : out.text2;
        target = target.empty() ? phrase : target + " " + phrase;
    }
    out.perturbation = {{"mode", to_string(spec.mode)}, {"rate", spec.rate}, {"seed", spec.seed},
                        {"index", index}, {"substituted", replaced}};
    return out;
}

} // namespace fedeat
