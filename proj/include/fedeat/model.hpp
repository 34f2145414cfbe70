#pragma once

// Bag-of-embeddings text classifier:
//   ids -> embedding rows [L,d] -> masked mean pool [d] -> 0..2 dense layers
//   with tanh/relu -> linear head [C].
// embed() and forward_from_embedding() are separate so that perturbations can
// be applied to the embedding rows directly.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedeat/autodiff.hpp"
#include "fedeat/error.hpp"
#include "fedeat/rng.hpp"
#include "fedeat/tensor.hpp"

namespace fedeat {

using TokenId = std::size_t;
using TokenIds = std::vector<TokenId>;
using PadMask = std::vector<std::uint8_t>;

class Vocabulary {
public:
    static constexpr TokenId pad = 0;
    static constexpr TokenId unk = 1;
    static constexpr std::string_view pad_token = "<pad>";
    static constexpr std::string_view unk_token = "<unk>";

    Vocabulary() : tokens_{std::string(pad_token), std::string(unk_token)} { reindex(); }

    // Specials are prepended; duplicates and specials in `words` are skipped.
    static Vocabulary from_words(const std::vector<std::string>& words) {
        Vocabulary v;
        for (const auto& w : words) v.add(w);
        return v;
    }

    TokenId add(const std::string& word) {
        if (auto it = index_.find(word); it != index_.end()) return it->second;
        tokens_.push_back(word);
        index_.emplace(word, tokens_.size() - 1);
        return tokens_.size() - 1;
    }

    std::size_t size() const noexcept { return tokens_.size(); }

    TokenId id(std::string_view word) const {
        auto it = index_.find(std::string(word));
        return it == index_.end() ? unk : it->second;
    }

    bool contains(std::string_view word) const { return index_.count(std::string(word)) != 0; }

    const std::string& token(TokenId id) const { return tokens_.at(id); }

    // Non-special tokens in id order.
    std::vector<std::string> words() const { return {tokens_.begin() + 2, tokens_.end()}; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("cannot write vocabulary file: " + path);
        for (const auto& t : tokens_) out << t << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot read vocabulary file: " + path);
        std::vector<std::string> lines;
        for (std::string line; std::getline(in, line);) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) lines.push_back(line);
        }
        if (lines.size() < 2 || lines[0] != pad_token || lines[1] != unk_token) {
            throw Error("vocabulary file must start with " + std::string(pad_token) + " and " +
                        std::string(unk_token) + ": " + path);
        }
        Vocabulary v;
        for (std::size_t i = 2; i < lines.size(); ++i) {
            if (v.contains(lines[i])) throw Error("duplicate vocabulary entry '" + lines[i] + "' in " + path);
            v.add(lines[i]);
        }
        return v;
    }

private:
    void reindex() {
        index_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
};

inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

// Whitespace split, lowercase, unknowns -> UNK, then pad/truncate to max_len.
inline TokenIds tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
    TokenIds ids(max_len, Vocabulary::pad);
    std::size_t i = 0;
    for (const auto& w : split_words(text)) {
        if (i == max_len) break;
        ids[i++] = vocab.id(w);
    }
    return ids;
}

inline std::vector<std::string> detokenize(std::span<const TokenId> ids, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (TokenId id : ids) {
        if (id != Vocabulary::pad) out.push_back(vocab.token(id));
    }
    return out;
}

inline PadMask pad_mask(std::span<const TokenId> ids) {
    PadMask m(ids.size());
    std::transform(ids.begin(), ids.end(), m.begin(), [](TokenId id) { return id != Vocabulary::pad ? 1 : 0; });
    return m;
}

// ---------------------------------------------------------------------------

enum class Activation { tanh, relu };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

inline Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw ConfigError({"architecture.activation must be tanh or relu, got '" + s + "'"});
}

struct ArchitectureConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 16;
    std::vector<std::size_t> hidden_dims{16};
    std::size_t num_classes = 2;
    std::size_t max_len = 24;
    Activation activation = Activation::tanh;

    std::vector<std::string> violations() const {
        std::vector<std::string> v;
        if (vocab_size < 2) v.push_back("architecture.vocab_size must be >= 2 (PAD and UNK)");
        if (embed_dim < 1) v.push_back("architecture.embed_dim must be >= 1");
        if (hidden_dims.size() > 2) v.push_back("architecture.hidden_dims allows at most 2 layers");
        for (std::size_t h : hidden_dims)
            if (h < 1) v.push_back("architecture.hidden_dims entries must be >= 1");
        if (num_classes < 1) v.push_back("architecture.num_classes must be >= 1");
        if (max_len < 1) v.push_back("architecture.max_len must be >= 1");
        return v;
    }

    friend bool operator==(const ArchitectureConfig&, const ArchitectureConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ArchitectureConfig& a) {
    j = {{"vocab_size", a.vocab_size}, {"embed_dim", a.embed_dim}, {"hidden_dims", a.hidden_dims},
         {"num_classes", a.num_classes}, {"max_len", a.max_len}, {"activation", to_string(a.activation)},
         {"pooling", "mean"}};
}

inline void from_json(const nlohmann::json& j, ArchitectureConfig& a) {
    a.vocab_size = j.value("vocab_size", a.vocab_size);
    a.embed_dim = j.value("embed_dim", a.embed_dim);
    a.hidden_dims = j.value("hidden_dims", a.hidden_dims);
    a.num_classes = j.value("num_classes", a.num_classes);
    a.max_len = j.value("max_len", a.max_len);
    a.activation = parse_activation(j.value("activation", to_string(a.activation)));
    if (j.value("pooling", std::string("mean")) != "mean") {
        throw ConfigError({"architecture.pooling: only 'mean' is supported"});
    }
}

using ParamSchema = std::vector<std::pair<std::string, Shape>>;

inline ParamSchema make_schema(const ArchitectureConfig& arch) {
    ParamSchema s;
    s.emplace_back("embedding", Shape{arch.vocab_size, arch.embed_dim});
    std::size_t in = arch.embed_dim;
    for (std::size_t i = 0; i < arch.hidden_dims.size(); ++i) {
        const std::string prefix = "hidden" + std::to_string(i);
        s.emplace_back(prefix + ".weight", Shape{in, arch.hidden_dims[i]});
        s.emplace_back(prefix + ".bias", Shape{arch.hidden_dims[i]});
        in = arch.hidden_dims[i];
    }
    s.emplace_back("head.weight", Shape{in, arch.num_classes});
    s.emplace_back("head.bias", Shape{arch.num_classes});
    return s;
}

inline std::vector<std::string> schema_diff(const ArchitectureConfig& expected, const ArchitectureConfig& actual) {
    std::vector<std::string> diff;
    const auto a = make_schema(expected);
    const auto b = make_schema(actual);
    for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
        const std::string lhs = i < a.size() ? a[i].first + " " + to_string(a[i].second) : "<none>";
        const std::string rhs = i < b.size() ? b[i].first + " " + to_string(b[i].second) : "<none>";
        if (lhs != rhs) diff.push_back("expected " + lhs + ", found " + rhs);
    }
    if (expected.activation != actual.activation) {
        diff.push_back("expected activation " + to_string(expected.activation) + ", found " +
                       to_string(actual.activation));
    }
    if (expected.max_len != actual.max_len) {
        diff.push_back("expected max_len " + std::to_string(expected.max_len) + ", found " +
                       std::to_string(actual.max_len));
    }
    return diff;
}

struct NamedTensor {
    std::string name;
    Tensor tensor;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// Ordered named parameter tensors following make_schema(arch). The unit
// exchanged between clients and the server.
class ModelParams {
public:
    ModelParams() = default;

    ModelParams(ArchitectureConfig arch, std::vector<NamedTensor> tensors)
        : arch_(std::move(arch)), tensors_(std::move(tensors)) {
        const auto schema = make_schema(arch_);
        if (schema.size() != tensors_.size()) {
            throw ShapeError("ModelParams: expected " + std::to_string(schema.size()) + " tensors, got " +
                             std::to_string(tensors_.size()));
        }
        for (std::size_t i = 0; i < schema.size(); ++i) {
            if (schema[i].first != tensors_[i].name || schema[i].second != tensors_[i].tensor.shape()) {
                throw ShapeError("ModelParams: tensor " + std::to_string(i) + " is " + tensors_[i].name + " " +
                                 to_string(tensors_[i].tensor.shape()) + ", schema wants " + schema[i].first +
                                 " " + to_string(schema[i].second));
            }
        }
    }

    static ModelParams zeros(const ArchitectureConfig& arch) {
        std::vector<NamedTensor> t;
        for (auto& [name, shape] : make_schema(arch)) t.push_back({name, Tensor(shape)});
        return ModelParams(arch, std::move(t));
    }

    const ArchitectureConfig& arch() const noexcept { return arch_; }
    const std::vector<NamedTensor>& tensors() const noexcept { return tensors_; }
    std::vector<NamedTensor>& tensors() noexcept { return tensors_; }

    const Tensor& get(std::string_view name) const {
        for (const auto& t : tensors_)
            if (t.name == name) return t.tensor;
        throw Error("ModelParams: no tensor named '" + std::string(name) + "'");
    }
    Tensor& get(std::string_view name) {
        return const_cast<Tensor&>(static_cast<const ModelParams&>(*this).get(name));
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.tensor.size();
        return n;
    }

    bool same_schema(const ModelParams& other) const {
        if (tensors_.size() != other.tensors_.size()) return false;
        for (std::size_t i = 0; i < tensors_.size(); ++i) {
            if (tensors_[i].name != other.tensors_[i].name ||
                tensors_[i].tensor.shape() != other.tensors_[i].tensor.shape())
                return false;
        }
        return true;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        for (const auto& t : tensors_) out.insert(out.end(), t.tensor.data().begin(), t.tensor.data().end());
        return out;
    }

    // A copy of this schema holding `flat`.
    ModelParams unflatten(std::span<const double> flat) const {
        if (flat.size() != parameter_count()) {
            throw ShapeError("unflatten: expected " + std::to_string(parameter_count()) + " values, got " +
                             std::to_string(flat.size()));
        }
        ModelParams out = *this;
        std::size_t off = 0;
        for (auto& t : out.tensors_) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.tensor.size(), t.tensor.data().begin());
            off += t.tensor.size();
        }
        return out;
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;

private:
    ArchitectureConfig arch_;
    std::vector<NamedTensor> tensors_;
};

// Weights ~ U(-0.1, 0.1) in schema order from one seeded stream; biases zero.
inline ModelParams init_params(const ArchitectureConfig& arch, std::uint64_t seed) {
    throw_if_invalid(arch.violations());
    ModelParams p = ModelParams::zeros(arch);
    Rng rng = make_rng(seed, "init");
    for (auto& t : p.tensors()) {
        if (t.name.ends_with(".bias")) continue;
        for (auto& v : t.tensor.data()) v = uniform_real(rng, -0.1, 0.1);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Forward pass on a tape

struct BoundModel {
    std::optional<Var> embedding;
    std::vector<Var> hidden_weights;
    std::vector<Var> hidden_biases;
    Var head_weight;
    Var head_bias;
    ArchitectureConfig arch;
};

// Records the parameters as leaves of `tape`. The embedding table is skipped
// when only forward_from_embedding() is needed.
inline BoundModel bind(Tape& tape, const ModelParams& params, bool requires_grad, bool with_embedding = true) {
    BoundModel m;
    m.arch = params.arch();
    const auto& t = params.tensors();
    if (with_embedding) m.embedding = tape.leaf(t[0].tensor, requires_grad);
    const std::size_t layers = m.arch.hidden_dims.size();
    for (std::size_t i = 0; i < layers; ++i) {
        m.hidden_weights.push_back(tape.leaf(t[1 + 2 * i].tensor, requires_grad));
        m.hidden_biases.push_back(tape.leaf(t[2 + 2 * i].tensor, requires_grad));
    }
    m.head_weight = tape.leaf(t[1 + 2 * layers].tensor, requires_grad);
    m.head_bias = tape.leaf(t[2 + 2 * layers].tensor, requires_grad);
    return m;
}

// Gradients of the bound leaves, in schema order, as a ModelParams.
inline ModelParams gradients(const BoundModel& m, const ModelParams& like) {
    ModelParams g = like;
    auto& t = g.tensors();
    if (!m.embedding) throw Error("gradients: embedding was not bound");
    t[0].tensor = m.embedding->grad();
    for (std::size_t i = 0; i < m.hidden_weights.size(); ++i) {
        t[1 + 2 * i].tensor = m.hidden_weights[i].grad();
        t[2 + 2 * i].tensor = m.hidden_biases[i].grad();
    }
    const std::size_t layers = m.hidden_weights.size();
    t[1 + 2 * layers].tensor = m.head_weight.grad();
    t[2 + 2 * layers].tensor = m.head_bias.grad();
    return g;
}

inline Var embed(const BoundModel& m, std::span<const TokenId> ids) {
    if (!m.embedding) throw Error("embed: model was bound without its embedding table");
    if (ids.size() != m.arch.max_len) {
        throw ShapeError("embed: expected " + std::to_string(m.arch.max_len) + " ids, got " +
                         std::to_string(ids.size()));
    }
    return gather_rows(*m.embedding, ids);
}

inline Var forward_from_embedding(const BoundModel& m, const Var& z, std::span<const std::uint8_t> mask) {
    const Shape want{m.arch.max_len, m.arch.embed_dim};
    if (z.shape() != want) {
        throw ShapeError("forward_from_embedding: z has shape " + to_string(z.shape()) + ", expected " +
                         to_string(want));
    }
    Var h = mean_rows(z, mask);
    for (std::size_t i = 0; i < m.hidden_weights.size(); ++i) {
        h = add(matmul(h, m.hidden_weights[i]), m.hidden_biases[i]);
        h = m.arch.activation == Activation::tanh ? tanh(h) : relu(h);
    }
    return add(matmul(h, m.head_weight), m.head_bias);
}

inline Var loss(const BoundModel& m, const Var& z, std::span<const std::uint8_t> mask, std::size_t label) {
    return softmax_cross_entropy(forward_from_embedding(m, z, mask), label);
}

// ---------------------------------------------------------------------------
// Value-level helpers (each builds and drops its own tape)

inline Tensor embed_values(const ModelParams& params, std::span<const TokenId> ids) {
    const Tensor& table = params.get("embedding");
    const std::size_t d = table.dim(1);
    Tensor z({ids.size(), d});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= table.dim(0)) {
            throw ShapeError("embed: id " + std::to_string(ids[r]) + " out of range for vocabulary of " +
                             std::to_string(table.dim(0)));
        }
        std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d,
                    z.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    return z;
}

inline Tensor logits_from_embedding(const ModelParams& params, const Tensor& z, std::span<const std::uint8_t> mask) {
    Tape tape;
    BoundModel m = bind(tape, params, false, false);
    return forward_from_embedding(m, tape.constant(z), mask).value();
}

inline Tensor logits(const ModelParams& params, std::span<const TokenId> ids) {
    const PadMask mask = pad_mask(ids);
    return logits_from_embedding(params, embed_values(params, ids), mask);
}

// Ties resolve toward the lower class index.
inline std::size_t argmax(const Tensor& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

inline std::size_t predict(const ModelParams& params, std::span<const TokenId> ids) {
    return argmax(logits(params, ids));
}

inline double loss_value(const ModelParams& params, const Tensor& z, std::span<const std::uint8_t> mask,
                         std::size_t label) {
    Tape tape;
    BoundModel m = bind(tape, params, false, false);
    return loss(m, tape.constant(z), mask, label).value().item();
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON with the architecture and every tensor in schema order.
// Doubles are written in shortest round-trip form, so save/load is exact.

inline nlohmann::json checkpoint_json(const ModelParams& p) {
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : p.tensors()) {
        tensors.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"values", t.tensor.values()}});
    }
    return {{"format", "fedeat-checkpoint"}, {"version", 1}, {"architecture", p.arch()}, {"tensors", tensors}};
}

inline ModelParams params_from_checkpoint(const nlohmann::json& j) {
    if (j.value("format", std::string()) != "fedeat-checkpoint") throw Error("not a fedeat checkpoint");
    ArchitectureConfig arch = j.at("architecture").get<ArchitectureConfig>();
    std::vector<NamedTensor> tensors;
    for (const auto& t : j.at("tensors")) {
        tensors.push_back({t.at("name").get<std::string>(),
                           Tensor(t.at("shape").get<Shape>(), t.at("values").get<std::vector<double>>())});
    }
    return ModelParams(std::move(arch), std::move(tensors));
}

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out << checkpoint_json(p).dump() << '\n';
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read checkpoint: " + path);
    return params_from_checkpoint(nlohmann::json::parse(in));
}

} // namespace fedeat
