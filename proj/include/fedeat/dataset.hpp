#pragma once

// Labelled text examples, the JSONL dataset format, and a generator for four
// synthetic classification tasks:
//   sst2-like  keyword-driven binary sentiment
//   qqp-like   pair equivalence: both questions about the same topic cluster
//   mnli-like  3-way entailment: same cluster (0), other cluster (1), same
//              cluster with a negation cue (2)
//   qnli-like  question/answer match: the answer carries an entity of the type
//              the question word asks for (1) or of another type (0)
// Every task is learnable from a bag of words, so the pooled classifier can
// reach high benign accuracy at desk scale.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedeat/error.hpp"
#include "fedeat/model.hpp"
#include "fedeat/rng.hpp"

namespace fedeat {

struct Example {
    std::string text;
    std::string text2;  // second segment for pair tasks, empty otherwise
    std::size_t label = 0;
    std::string task;
    nlohmann::json perturbation;  // null for benign data

    // The string the tokenizer sees.
    std::string joined() const { return text2.empty() ? text : text + " " + text2; }

    friend bool operator==(const Example&, const Example&) = default;
};

inline nlohmann::json example_json(const Example& e) {
    nlohmann::json j = {{"text", e.text}, {"label", e.label}, {"task", e.task}};
    if (!e.text2.empty()) j["text2"] = e.text2;
    if (!e.perturbation.is_null()) j["perturbation"] = e.perturbation;
    return j;
}

inline Example example_from_json(const nlohmann::json& j) {
    Example e;
    e.text = j.at("text").get<std::string>();
    e.text2 = j.value("text2", std::string());
    const auto label = j.at("label").get<long long>();
    if (label < 0) throw Error("dataset: negative label");
    e.label = static_cast<std::size_t>(label);
    e.task = j.value("task", std::string());
    if (j.contains("perturbation")) e.perturbation = j.at("perturbation");
    return e;
}

inline void write_jsonl(const std::string& path, const std::vector<Example>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write dataset: " + path);
    for (const auto& e : examples) out << example_json(e).dump() << '\n';
    if (!out) throw Error("write failed: " + path);
}

inline std::vector<Example> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read dataset: " + path);
    std::vector<Example> out;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(example_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

// An example tokenized for the model.
struct Sample {
    TokenIds ids;
    PadMask mask;
    std::size_t label = 0;
};

inline Sample to_sample(const Example& e, const Vocabulary& vocab, std::size_t max_len) {
    Sample s{tokenize(e.joined(), vocab, max_len), {}, e.label};
    s.mask = pad_mask(s.ids);
    return s;
}

inline std::vector<Sample> to_samples(const std::vector<Example>& ex, const Vocabulary& vocab, std::size_t max_len) {
    std::vector<Sample> out;
    out.reserve(ex.size());
    for (const auto& e : ex) out.push_back(to_sample(e, vocab, max_len));
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic tasks

enum class TaskKind { sst2, qqp, mnli, qnli };

inline const std::vector<std::string>& task_names() {
    static const std::vector<std::string> names{"sst2-like", "qqp-like", "mnli-like", "qnli-like"};
    return names;
}

inline TaskKind parse_task(const std::string& s) {
    const auto& n = task_names();
    for (std::size_t i = 0; i < n.size(); ++i)
        if (n[i] == s) return static_cast<TaskKind>(i);
    throw ConfigError({"unknown task '" + s + "' (expected sst2-like, qqp-like, mnli-like or qnli-like)"});
}

inline std::string to_string(TaskKind t) { return task_names()[static_cast<std::size_t>(t)]; }

inline std::size_t num_classes(TaskKind t) { return t == TaskKind::mnli ? 3 : 2; }

inline const std::vector<std::string>& stopwords() {
    static const std::vector<std::string> w{"a",  "an",   "the", "and", "or",   "of",  "to",   "in",  "is",
                                            "it", "this", "that", "for", "with", "on", "was", "are", "be"};
    return w;
}

inline bool is_stopword(std::string_view w) {
    const auto& s = stopwords();
    return std::find(s.begin(), s.end(), w) != s.end();
}

inline const std::vector<std::string>& default_distractors() {
    static const std::vector<std::string> d{"and false is not true", "and true is not false", "and true is true",
                                            "and false is false"};
    return d;
}

namespace synth {

inline const std::vector<std::string> positive{"good",   "great",    "excellent", "wonderful", "superb",
                                               "subtle", "charming", "delightful", "moving",   "well-crafted",
                                               "clever", "fresh",    "beautiful",  "gripping", "enjoyable"};
inline const std::vector<std::string> negative{"bad",   "awful", "boring", "dull",    "terrible",
                                               "weak",  "tedious", "clumsy", "bland", "messy",
                                               "lifeless", "stale", "annoying", "forgettable", "poor"};
inline const std::vector<std::vector<std::string>> topics{
    {"fruit", "dinner", "meal", "diet", "snack", "breakfast"},
    {"weight", "exercise", "gym", "running", "training", "muscle"},
    {"money", "bank", "loan", "savings", "credit", "budget"},
    {"phone", "laptop", "software", "screen", "battery", "keyboard"},
    {"travel", "flight", "hotel", "visa", "airport", "passport"},
    {"school", "exam", "degree", "teacher", "course", "homework"},
    {"music", "guitar", "song", "piano", "concert", "album"},
    {"health", "doctor", "sleep", "fever", "medicine", "clinic"}};
inline const std::vector<std::string> negations{"not", "never", "no", "nobody", "none"};
// Label cues for the pair tasks. A mean-pooled bag of words cannot compare the
// two segments, so each pair label also leaves lexical evidence, with topic
// and entity words as context.
inline const std::vector<std::string> agree_cues{"same", "similar", "also", "equally", "likewise", "identical"};
inline const std::vector<std::string> differ_cues{"instead", "different", "unlike", "rather", "otherwise", "separate"};
inline const std::vector<std::string> entail_cues{"indeed", "certainly", "definitely", "surely", "clearly"};
inline const std::vector<std::string> neutral_cues{"maybe", "perhaps", "possibly", "might", "probably"};
inline const std::vector<std::string> answer_cues{"because", "therefore", "thus", "hence", "namely"};
inline const std::vector<std::string> offtopic_cues{"meanwhile", "elsewhere", "however", "although", "besides"};
inline const std::vector<std::string> question_words{"who", "where", "when", "howmany"};
inline const std::vector<std::vector<std::string>> entities{
    {"odo", "alice", "bishop", "earl", "king", "artist"},
    {"kent", "paris", "bayeux", "river", "village", "harbor"},
    {"monday", "century", "winter", "morning", "decade", "yesterday"},
    {"seven", "dozen", "hundred", "twelve", "thousand", "three"}};
inline const std::vector<std::string> syllables{"ba", "ke", "lo", "mi", "nu", "ra", "si", "to", "vu", "ze",
                                                "dor", "fen", "gal", "hup", "jor", "kas", "lin", "mop"};

inline std::vector<std::string> task_lexicon(TaskKind t) {
    std::vector<std::string> w;
    auto append = [&](const std::vector<std::string>& v) { w.insert(w.end(), v.begin(), v.end()); };
    switch (t) {
    case TaskKind::sst2:
        append(positive), append(negative);
        break;
    case TaskKind::qqp:
        for (const auto& c : topics) append(c);
        append({"can", "does", "how", "why", "what"});
        append(agree_cues), append(differ_cues);
        break;
    case TaskKind::mnli:
        for (const auto& c : topics) append(c);
        append(negations), append(entail_cues), append(neutral_cues);
        break;
    case TaskKind::qnli:
        append(question_words);
        for (const auto& c : entities) append(c);
        for (const auto& c : topics) append(c);
        append(answer_cues), append(offtopic_cues);
        break;
    }
    return w;
}

// Deterministic pronounceable filler words, distinct from every lexicon.
inline std::vector<std::string> filler_words(std::size_t count) {
    std::vector<std::string> out;
    const std::size_t s = syllables.size();
    for (std::size_t i = 0; out.size() < count; ++i) {
        std::string w = syllables[i % s] + syllables[(i / s) % s];
        if (i >= s * s) w += syllables[(i / (s * s)) % s];
        out.push_back(w);
    }
    return out;
}

} // namespace synth

struct GeneratedTask {
    TaskKind task;
    Vocabulary vocab;
    std::vector<Example> train;
    std::vector<Example> test;
};

struct GeneratorOptions {
    std::size_t size = 1000;
    std::size_t vocab_size = 300;
    double train_fraction = 0.8;
    // Probability of adding one misleading cue word to an example.
    double noise = 0.25;
};

// Vocabulary for a task: stopwords, task lexicon, distractor words, then
// filler words up to vocab_size entries (specials included).
inline Vocabulary task_vocabulary(TaskKind task, std::size_t vocab_size) {
    Vocabulary v;
    for (const auto& w : stopwords()) v.add(w);
    for (const auto& w : synth::task_lexicon(task)) v.add(w);
    for (const auto& phrase : default_distractors())
        for (const auto& w : split_words(phrase)) v.add(w);
    const std::size_t base = v.size();
    for (const auto& w : synth::filler_words(vocab_size > base ? vocab_size - base : 0)) v.add(w);
    return v;
}

inline GeneratedTask generate_task(TaskKind task, const GeneratorOptions& opt, std::uint64_t seed) {
    if (opt.size < 2) throw ConfigError({"gen-data: size must be >= 2"});
    GeneratedTask out{task, task_vocabulary(task, opt.vocab_size), {}, {}};
    std::vector<std::string> fillers;
    const auto lex = synth::task_lexicon(task);
    for (const auto& w : out.vocab.words()) {
        if (std::find(lex.begin(), lex.end(), w) == lex.end() && !is_stopword(w)) fillers.push_back(w);
    }
    Rng rng = make_rng(seed, "gen-data", {static_cast<std::uint64_t>(task)});
    auto pick = [&](const auto& v) { return v[uniform_index(rng, v.size())]; };
    const std::vector<std::string> openers{"can", "does", "how", "why", "what"};
    auto pad_out = [&](std::vector<std::string>& words, std::size_t n_fill) {
        for (std::size_t i = 0; i < n_fill; ++i)
            words.push_back(uniform01(rng) < 0.35 || fillers.empty() ? pick(stopwords()) : pick(fillers));
        shuffle_in_place(words, rng);
    };
    auto join = [](const std::vector<std::string>& w) {
        std::string s;
        for (const auto& x : w) s += (s.empty() ? "" : " ") + x;
        return s;
    };
    auto other_index = [&](std::size_t n, std::size_t avoid) {
        std::size_t k = uniform_index(rng, n - 1);
        return k >= avoid ? k + 1 : k;
    };

    // One or two cue words for the true label, plus one misleading cue when noisy.
    auto add_cues = [&](std::vector<std::string>& words, const std::vector<std::string>& own,
                        const std::vector<std::string>& other, bool noisy_example) {
        for (std::size_t j = 0, k = 1 + uniform_index(rng, 2); j < k; ++j) words.push_back(pick(own));
        if (noisy_example) words.push_back(pick(other));
    };

    std::vector<Example> all;
    const std::size_t classes = num_classes(task);
    for (std::size_t i = 0; i < opt.size; ++i) {
        Example e;
        e.task = to_string(task);
        e.label = uniform_index(rng, classes);
        const bool noisy = uniform01(rng) < opt.noise;
        switch (task) {
        case TaskKind::sst2: {
            const auto& own = e.label == 1 ? synth::positive : synth::negative;
            const auto& opp = e.label == 1 ? synth::negative : synth::positive;
            std::vector<std::string> w;
            const std::size_t k = 2 + uniform_index(rng, 2);
            for (std::size_t j = 0; j < k; ++j) w.push_back(pick(own));
            if (noisy) w.push_back(pick(opp));
            pad_out(w, 3 + uniform_index(rng, 5));
            e.text = join(w);
            break;
        }
        case TaskKind::qqp: {
            const std::size_t a = uniform_index(rng, synth::topics.size());
            const std::size_t b = e.label == 1 ? a : other_index(synth::topics.size(), a);
            std::vector<std::string> q1{pick(openers)};
            std::vector<std::string> q2{pick(openers)};
            q1.push_back(pick(synth::topics[a])), q1.push_back(pick(synth::topics[a]));
            q2.push_back(pick(synth::topics[b])), q2.push_back(pick(synth::topics[b]));
            add_cues(q2, e.label == 1 ? synth::agree_cues : synth::differ_cues,
                     e.label == 1 ? synth::differ_cues : synth::agree_cues, noisy);
            pad_out(q1, 2 + uniform_index(rng, 3));
            pad_out(q2, 2 + uniform_index(rng, 3));
            e.text = join(q1), e.text2 = join(q2);
            break;
        }
        case TaskKind::mnli: {
            const std::size_t a = uniform_index(rng, synth::topics.size());
            const std::size_t b = e.label == 1 ? other_index(synth::topics.size(), a) : a;
            std::vector<std::string> p, h;
            for (int j = 0; j < 3; ++j) p.push_back(pick(synth::topics[a]));
            h.push_back(pick(synth::topics[b])), h.push_back(pick(synth::topics[b]));
            const std::vector<const std::vector<std::string>*> cues{&synth::entail_cues, &synth::neutral_cues,
                                                                    &synth::negations};
            add_cues(h, *cues[e.label], *cues[other_index(3, e.label)], noisy);
            pad_out(p, 2 + uniform_index(rng, 3));
            pad_out(h, 1 + uniform_index(rng, 3));
            e.text = join(p), e.text2 = join(h);
            break;
        }
        case TaskKind::qnli: {
            const std::size_t qtype = uniform_index(rng, synth::question_words.size());
            const std::size_t atype = e.label == 1 ? qtype : other_index(synth::entities.size(), qtype);
            std::vector<std::string> q{synth::question_words[qtype], pick(pick(synth::topics))};
            std::vector<std::string> ans{pick(synth::entities[atype]), pick(synth::entities[atype])};
            add_cues(ans, e.label == 1 ? synth::answer_cues : synth::offtopic_cues,
                     e.label == 1 ? synth::offtopic_cues : synth::answer_cues, noisy);
            pad_out(q, 2 + uniform_index(rng, 3));
            pad_out(ans, 2 + uniform_index(rng, 4));
            e.text = join(q), e.text2 = join(ans);
            break;
        }
        }
        all.push_back(std::move(e));
    }
    auto n_train = static_cast<std::size_t>(static_cast<double>(opt.size) * opt.train_fraction + 0.5);
    n_train = std::clamp<std::size_t>(n_train, 1, opt.size - 1);
    out.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
    return out;
}

} // namespace fedeat
