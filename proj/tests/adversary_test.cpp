#include "fedeat/adversary.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fedeat;

namespace {

Tensor vec(std::vector<double> v) { return Tensor::vector(std::move(v)); }

ArchitectureConfig tiny_arch() {
    ArchitectureConfig a;
    a.vocab_size = 10;
    a.embed_dim = 3;
    a.hidden_dims = {4};
    a.num_classes = 2;
    a.max_len = 5;
    return a;
}

Sample tiny_sample(std::size_t label = 1) {
    Sample s{{2, 3, 4, 0, 0}, {}, label};
    s.mask = pad_mask(s.ids);
    return s;
}

// Random tensor generator for property tests.
Tensor random_tensor(Rng& rng, std::size_t n, double scale) {
    Tensor t(Shape{n});
    for (auto& v : t.data()) v = uniform_real(rng, -scale, scale);
    return t;
}

} // namespace

TEST(Project, L2ScalesOntoSphere) {
    const Tensor p = project(vec({3, 4}), 1.0, Norm::l2);
    EXPECT_DOUBLE_EQ(p[0], 0.6);
    EXPECT_DOUBLE_EQ(p[1], 0.8);
}

TEST(Project, LinfClampsCoordinates) {
    EXPECT_EQ(project(vec({2, -0.5}), 1.0, Norm::linf), vec({1, -0.5}));
}

TEST(Project, InteriorPointUnchanged) {
    const Tensor d = vec({0.15, 0.2});  // norm 0.25 = eps / 2
    EXPECT_EQ(project(d, 0.5, Norm::l2), d);
    EXPECT_EQ(project(d, 0.5, Norm::linf), d);
}

TEST(Project, NonFiniteRejected) {
    EXPECT_THROW(project(vec({1, NAN}), 1.0, Norm::l2), Error);
    EXPECT_THROW(project(vec({INFINITY}), 1.0, Norm::linf), Error);
}

TEST(Project, IdempotentAndInsideBallOnRandomInputs) {
    Rng rng = make_rng(5, "project-prop");
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + uniform_index(rng, 12);
        const double eps = uniform_real(rng, 0.01, 3.0);
        const Tensor d = random_tensor(rng, n, uniform_real(rng, 0.01, 10.0));
        const Tensor p2 = project(d, eps, Norm::l2);
        const Tensor pp2 = project(p2, eps, Norm::l2);
        EXPECT_LE(norm_of(p2, Norm::l2), eps + 1e-12);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(pp2[i], p2[i], 1e-12);
        const Tensor pinf = project(d, eps, Norm::linf);
        EXPECT_EQ(project(pinf, eps, Norm::linf), pinf);
        EXPECT_LE(norm_of(pinf, Norm::linf), eps);
    }
}

TEST(PerturbationConfig, ViolationsListEveryField) {
    PerturbationConfig c;
    c.epsilon = 0;
    c.alpha = -1;
    c.steps = 0;
    c.lambda = -0.5;
    EXPECT_EQ(c.violations().size(), 4u);
    EXPECT_TRUE(PerturbationConfig{}.violations().empty());
}

TEST(Pgd, ZeroGradientLeavesDeltaAtZero) {
    ModelParams p = init_params(tiny_arch(), 3);
    for (auto& v : p.get("head.weight").data()) v = 0.0;  // logits = bias, constant in z
    const Sample s = tiny_sample();
    const Tensor z = embed_values(p, s.ids);
    const AttackResult r = pgd_attack(p, z, s.mask, s.label, PerturbationConfig{});
    EXPECT_EQ(r.z_adv, z);
    EXPECT_EQ(norm_of(r.delta, Norm::l2), 0.0);
    EXPECT_FALSE(r.aborted);
}

TEST(Pgd, SingleHugeStepSaturatesTheBall) {
    const ModelParams p = init_params(tiny_arch(), 4);
    const Sample s = tiny_sample();
    PerturbationConfig c;
    c.steps = 1;
    c.alpha = 1e6;
    const AttackResult r = pgd_attack(p, embed_values(p, s.ids), s.mask, s.label, c);
    EXPECT_NEAR(norm_of(r.delta, Norm::l2), c.epsilon, 1e-12);
    c.norm = Norm::linf;
    const AttackResult ri = pgd_attack(p, embed_values(p, s.ids), s.mask, s.label, c);
    EXPECT_DOUBLE_EQ(norm_of(ri.delta, Norm::linf), c.epsilon);
}

TEST(Pgd, NeverTouchesParameters) {
    const ModelParams p = init_params(tiny_arch(), 5);
    const ModelParams before = p;
    const Sample s = tiny_sample();
    pgd_attack(p, embed_values(p, s.ids), s.mask, s.label, PerturbationConfig{});
    EXPECT_EQ(p, before);
}

TEST(Pgd, PaddingRowsAreNotPerturbed) {
    const ModelParams p = init_params(tiny_arch(), 6);
    const Sample s = tiny_sample();
    const AttackResult r = pgd_attack(p, embed_values(p, s.ids), s.mask, s.label, PerturbationConfig{});
    const std::size_t d = tiny_arch().embed_dim;
    for (std::size_t row = 3; row < 5; ++row)
        for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(r.delta[row * d + c], 0.0);
}

TEST(Pgd, RandomInitStaysInBallAndNeedsRng) {
    const ModelParams p = init_params(tiny_arch(), 7);
    const Sample s = tiny_sample();
    PerturbationConfig c;
    c.init = PerturbInit::random;
    const Tensor z = embed_values(p, s.ids);
    EXPECT_THROW(pgd_attack(p, z, s.mask, s.label, c), Error);
    for (Norm n : {Norm::l2, Norm::linf}) {
        c.norm = n;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng = make_rng(seed, "attack");
            EXPECT_LE(norm_of(pgd_attack(p, z, s.mask, s.label, c, &rng).delta, n), c.epsilon + 1e-9);
        }
    }
}

TEST(Pgd, StepProjectionCanLeaveTheBall) {
    // Projecting each step, not the sum, bounds only the step: K steps can
    // drift up to K * eps.
    const ModelParams p = init_params(tiny_arch(), 8);
    const Sample s = tiny_sample();
    PerturbationConfig c;
    c.alpha = 1e6;
    c.steps = 3;
    c.proj_target = ProjectionTarget::step;
    const AttackResult r = pgd_attack(p, embed_values(p, s.ids), s.mask, s.label, c);
    EXPECT_GT(norm_of(r.delta, Norm::l2), c.epsilon);
    EXPECT_LE(norm_of(r.delta, Norm::l2), 3 * c.epsilon + 1e-9);
}

TEST(Pgd, AscentOnTrainedToyModel) {
    const auto toy = fixture::trained_toy();
    ASSERT_GT(fixture::accuracy(toy.params, toy.test), 0.7);
    const PerturbationConfig c;
    std::size_t ascended = 0, n = 0;
    for (const auto& s : toy.train) {
        if (n == 100) break;
        const Tensor z = embed_values(toy.params, s.ids);
        const AttackResult r = pgd_attack(toy.params, z, s.mask, s.label, c);
        EXPECT_LE(norm_of(r.delta, Norm::l2), c.epsilon + 1e-9);
        ascended += loss_value(toy.params, r.z_adv, s.mask, s.label) >= loss_value(toy.params, z, s.mask, s.label);
        ++n;
    }
    EXPECT_GE(ascended, 95u);
}

TEST(AdversarialLoss, LambdaZeroIsPlainLoss) {
    const ModelParams p = init_params(tiny_arch(), 9);
    const Sample s = tiny_sample();
    PerturbationConfig c;
    c.lambda = 0.0;
    const double plain = loss_value(p, embed_values(p, s.ids), s.mask, s.label);
    EXPECT_EQ(adversarial_loss_value(p, s, c), plain);
}

TEST(AdversarialLoss, ZeroDeltaDoublesCleanLoss) {
    ModelParams p = init_params(tiny_arch(), 10);
    for (auto& v : p.get("head.weight").data()) v = 0.0;
    p.get("head.bias")[0] = 0.3;
    const Sample s = tiny_sample(0);
    const double clean = loss_value(p, embed_values(p, s.ids), s.mask, s.label);
    EXPECT_EQ(adversarial_loss_value(p, s, PerturbationConfig{}), 2.0 * clean);
}

TEST(AdversarialLoss, MatchesTwoPassOracle) {
    const ModelParams p = init_params(tiny_arch(), 11);
    PerturbationConfig c;
    c.lambda = 0.7;
    for (std::size_t label : {0u, 1u}) {
        const Sample s = tiny_sample(label);
        const Tensor z = embed_values(p, s.ids);
        const Tensor delta = pgd_attack(p, z, s.mask, s.label, c).delta;
        Tensor zadv = z;
        for (std::size_t i = 0; i < z.size(); ++i) zadv[i] += delta[i];
        const double clean = loss_value(p, z, s.mask, label);
        const double adv = loss_value(p, zadv, s.mask, label);
        EXPECT_NEAR(adversarial_loss_value(p, s, c), clean + c.lambda * adv, 1e-12);
        EXPECT_GE(adv, clean);
    }
}

TEST(AdversarialLoss, GradientFlowsThroughBothTerms) {
    // d/dtheta [clean + lambda adv] with delta frozen, checked by finite
    // differences that hold delta fixed too.
    const ModelParams p = init_params(tiny_arch(), 12);
    const Sample s = tiny_sample(1);
    PerturbationConfig c;
    c.lambda = 1.5;
    const Tensor delta = pgd_attack(p, embed_values(p, s.ids), s.mask, s.label, c).delta;

    Tape tape;
    BoundModel m = bind(tape, p, true);
    tape.backward(adversarial_loss(tape, m, p, s, c).total);
    const std::vector<double> g = gradients(m, p).flatten();

    auto f = [&](std::vector<double>& x) {
        const ModelParams q = p.unflatten(x);
        const Tensor z = embed_values(q, s.ids);
        Tensor za = z;
        for (std::size_t i = 0; i < z.size(); ++i) za[i] += delta[i];
        return loss_value(q, z, s.mask, 1) + c.lambda * loss_value(q, za, s.mask, 1);
    };
    const std::vector<double> x = p.flatten();
    for (std::size_t i = 0; i < x.size(); ++i)
        EXPECT_LT(oracle::rel_err(g[i], oracle::central_difference(f, x, i)), 1e-4) << "coordinate " << i;
}

TEST(AdversarialLoss, AdvOnlyDropsCleanTerm) {
    const ModelParams p = init_params(tiny_arch(), 13);
    const Sample s = tiny_sample();
    PerturbationConfig c;
    c.adv_only = true;
    const Tensor z = embed_values(p, s.ids);
    const AttackResult r = pgd_attack(p, z, s.mask, s.label, c);
    EXPECT_NEAR(adversarial_loss_value(p, s, c), loss_value(p, r.z_adv, s.mask, s.label), 1e-12);
}

// ---------------------------------------------------------------------------

TEST(PerturbText, DistractorAppendOnSentimentExample) {
    TextPerturbationSpec spec;
    spec.mode = TextMode::distractor_append;
    spec.distractors = {"and false is not true"};
    const Example in{"a subtle chiller", "", 1, "sst2-like", nullptr};
    const Example out = perturb_text(in, spec, {}, 0);
    EXPECT_EQ(out.text, "a subtle chiller and false is not true");
    EXPECT_EQ(out.label, 1u);
    EXPECT_EQ(out.perturbation.at("mode"), "distractor-append");
}

TEST(PerturbText, DistractorGoesOnSecondSegmentForPairs) {
    TextPerturbationSpec spec;
    spec.mode = TextMode::distractor_append;
    spec.distractors = {"and true is true"};
    const Example out = perturb_text({"q one", "q two", 0, "qqp-like", nullptr}, spec, {}, 3);
    EXPECT_EQ(out.text, "q one");
    EXPECT_EQ(out.text2, "q two and true is true");
}

TEST(PerturbText, RateZeroLeavesTextUnchanged) {
    TextPerturbationSpec spec;
    spec.mode = TextMode::word_substitution;
    spec.rate = 0.0;
    const std::vector<std::string> pool{"x", "y"};
    const Example in{"The Movie was GREAT", "", 1, "sst2-like", nullptr};
    EXPECT_EQ(perturb_text(in, spec, pool, 0).text, in.text);
}

TEST(PerturbText, RateOneReplacesExactlyTheContentWords) {
    TextPerturbationSpec spec;
    spec.mode = TextMode::word_substitution;
    spec.rate = 1.0;
    const std::vector<std::string> pool{"alpha", "beta", "gamma", "movie", "great"};
    const Example in{"the movie was truly great", "", 1, "sst2-like", nullptr};
    for (std::uint64_t idx = 0; idx < 20; ++idx) {
        const Example out = perturb_text(in, spec, pool, idx);
        const auto a = split_words(in.text), b = split_words(out.text);
        ASSERT_EQ(a.size(), b.size());
        std::vector<std::size_t> changed;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i] != b[i]) changed.push_back(i);
        EXPECT_EQ(changed, (std::vector<std::size_t>{1, 3, 4}));
        EXPECT_EQ(out.perturbation.at("substituted"), 3);
    }
}

TEST(PerturbText, DeterministicAndLabelPreserving) {
    const TextPerturbationSpec spec;
    const std::vector<std::string> pool{"red", "blue", "green", "fast", "slow"};
    Rng gen = make_rng(1, "text-prop");
    for (std::uint64_t i = 0; i < 100; ++i) {
        std::string text;
        for (std::size_t w = 0, n = uniform_index(gen, 8); w < n; ++w)
            text += (w ? " " : "") + (uniform01(gen) < 0.3 ? stopwords()[uniform_index(gen, 5)] : pool[uniform_index(gen, 5)]);
        const Example in{text, "", uniform_index(gen, 3), "mnli-like", nullptr};
        const Example a = perturb_text(in, spec, pool, i);
        EXPECT_EQ(a, perturb_text(in, spec, pool, i));
        EXPECT_EQ(a.label, in.label);
    }
}

TEST(PerturbText, EmptyTextPassesThrough) {
    TextPerturbationSpec spec;
    spec.mode = TextMode::word_substitution;
    spec.rate = 1.0;
    const std::vector<std::string> pool{"x"};
    EXPECT_EQ(perturb_text({"", "", 0, "", nullptr}, spec, pool, 0).text, "");
}

TEST(PerturbText, SpecViolations) {
    TextPerturbationSpec spec;
    spec.rate = 1.5;
    spec.distractors.clear();
    EXPECT_EQ(spec.violations().size(), 2u);
    spec.mode = TextMode::word_substitution;
    EXPECT_EQ(spec.violations().size(), 1u);
    EXPECT_THROW(parse_text_mode("swap"), ConfigError);
}
