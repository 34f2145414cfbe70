#pragma once

// Benign accuracy and attack success rate over paired benign/adversarial sets.
//
//   B_c = benign examples classified correctly
//   A_m = of those B_c, the ones whose adversarial counterpart is misclassified
//   ASR = A_m / B_c   (undefined when B_c = 0)
//
// Examples the model already gets wrong benignly never count toward A_m.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedeat/adversary.hpp"
#include "fedeat/dataset.hpp"
#include "fedeat/error.hpp"
#include "fedeat/model.hpp"

namespace fedeat {

struct EvalPair {
    Example benign;
    Example adversarial;
};

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;  // [true][predicted]

struct EvalReport {
    std::size_t total = 0;
    std::size_t b_c = 0;
    std::size_t a_m = 0;
    double accuracy = 0.0;
    std::optional<double> asr;
    ConfusionMatrix benign_confusion;
    ConfusionMatrix adversarial_confusion;
    // The model predicted a single class for every benign example.
    bool constant_predictions = false;
};

inline std::vector<EvalPair> build_eval_pairs(const std::vector<Example>& benign, const TextPerturbationSpec& spec,
                                              const Vocabulary& vocab) {
    throw_if_invalid(spec.violations());
    const std::vector<std::string> pool = vocab.words();
    std::vector<EvalPair> pairs;
    pairs.reserve(benign.size());
    for (std::size_t i = 0; i < benign.size(); ++i) pairs.push_back({benign[i], perturb_text(benign[i], spec, pool, i)});
    return pairs;
}

inline EvalReport score_predictions(std::span<const std::size_t> labels, std::span<const std::size_t> benign_pred,
                                    std::span<const std::size_t> adv_pred, std::size_t classes) {
    if (labels.empty()) throw Error("evaluate: no evaluation pairs");
    if (benign_pred.size() != labels.size() || adv_pred.size() != labels.size())
        throw Error("evaluate: prediction and label counts differ");
    EvalReport r;
    r.total = labels.size();
    r.benign_confusion.assign(classes, std::vector<std::size_t>(classes, 0));
    r.adversarial_confusion = r.benign_confusion;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes || benign_pred[i] >= classes || adv_pred[i] >= classes)
            throw Error("evaluate: label or prediction out of range at pair " + std::to_string(i));
        ++r.benign_confusion[labels[i]][benign_pred[i]];
        ++r.adversarial_confusion[labels[i]][adv_pred[i]];
        if (benign_pred[i] == labels[i]) {
            ++r.b_c;
            if (adv_pred[i] != labels[i]) ++r.a_m;
        }
    }
    r.accuracy = static_cast<double>(r.b_c) / static_cast<double>(r.total);
    if (r.b_c > 0) r.asr = static_cast<double>(r.a_m) / static_cast<double>(r.b_c);
    r.constant_predictions =
        std::all_of(benign_pred.begin(), benign_pred.end(), [&](std::size_t p) { return p == benign_pred[0]; });
    return r;
}

inline EvalReport evaluate(const ModelParams& params, const Vocabulary& vocab, std::span<const EvalPair> pairs) {
    if (pairs.empty()) throw Error("evaluate: no evaluation pairs");
    const std::size_t max_len = params.arch().max_len;
    std::vector<std::size_t> labels, benign, adv;
    for (const auto& p : pairs) {
        if (p.benign.label != p.adversarial.label) throw Error("evaluate: pair labels differ");
        labels.push_back(p.benign.label);
        benign.push_back(predict(params, tokenize(p.benign.joined(), vocab, max_len)));
        adv.push_back(predict(params, tokenize(p.adversarial.joined(), vocab, max_len)));
    }
    return score_predictions(labels, benign, adv, params.arch().num_classes);
}

inline nlohmann::json report_json(const EvalReport& r) {
    return {{"accuracy", r.accuracy},
            {"asr", r.asr ? nlohmann::json(*r.asr) : nlohmann::json(nullptr)},
            {"b_c", r.b_c},
            {"a_m", r.a_m},
            {"confusion",
             {{"benign", r.benign_confusion},
              {"adversarial", r.adversarial_confusion},
              {"total", r.total},
              {"constant_predictions", r.constant_predictions}}}};
}

} // namespace fedeat
