#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Tape records one forward pass. Every primitive appends a node holding its
// output value and a closure that maps the output gradient onto its inputs.
// Nodes are appended in evaluation order, so the record is topological and a
// reverse sweep applies the chain rule exactly.
//
// Shape rules (no broadcasting, every primitive checks exact conformance):
//   add, mul          a: S, b: S            -> S
//   scale             a: S, c scalar        -> S
//   matmul            a: [m,k], b: [k,n]    -> [m,n]
//                     a: [k],   b: [k,n]    -> [n]
//   gather_rows       table: [V,d], ids: L  -> [L,d]   (every id < V)
//   mean_rows         x: [L,d], mask: L     -> [d]     (mean over kept rows,
//                                                      zero vector if none)
//   tanh, relu        a: S                  -> S
//   sum               a: S                  -> []
//   softmax_cross_entropy  logits: [C], label < C -> []
//
// A tape serves a single backward pass. backward() consumes it; grad_wrt()
// leaves it intact and never writes into the stored gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedeat/error.hpp"
#include "fedeat/tensor.hpp"

namespace fedeat {

class Tape;
class Var;

namespace detail {

class GradSink;

using BackwardFn = std::function<void(const Tensor& out_grad, GradSink& sink)>;

struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    BackwardFn backward;
};

struct TapeState {
    std::vector<Node> nodes;
    bool consumed = false;
};

// Gradient buffers for one reverse sweep, allocated lazily and only for nodes
// that require a gradient.
class GradSink {
public:
    explicit GradSink(const TapeState& state) : state_(state), grads_(state.nodes.size()) {}

    // Zero-initialized accumulator for node `id`, or nullptr when the node
    // does not require a gradient.
    Tensor* acc(std::size_t id) {
        if (!state_.nodes[id].requires_grad) return nullptr;
        auto& g = grads_[id];
        if (!g) g.emplace(state_.nodes[id].value.shape());
        return &*g;
    }

    const Tensor& value(std::size_t id) const { return state_.nodes[id].value; }

    std::optional<Tensor>& slot(std::size_t id) { return grads_[id]; }

private:
    const TapeState& state_;
    std::vector<std::optional<Tensor>> grads_;
};

struct Ops;

} // namespace detail

// Handle to a node on a Tape. Cheap to copy; does not keep the tape alive.
class Var {
public:
    Var() = default;

    const Tensor& value() const { return node().value; }
    const Shape& shape() const { return node().value.shape(); }
    bool requires_grad() const { return node().requires_grad; }
    std::size_t id() const noexcept { return id_; }

    bool has_grad() const { return node().grad.has_value(); }
    const Tensor& grad() const {
        const auto& n = node();
        if (!n.grad) throw TapeError("grad: no gradient stored for node " + std::to_string(id_));
        return *n.grad;
    }

private:
    friend class Tape;
    friend struct detail::Ops;

    Var(std::weak_ptr<detail::TapeState> tape, std::size_t id) : tape_(std::move(tape)), id_(id) {}

    std::shared_ptr<detail::TapeState> state() const {
        auto s = tape_.lock();
        if (!s) throw TapeError("Var refers to a freed tape");
        return s;
    }

    const detail::Node& node() const {
        auto s = state();
        if (id_ >= s->nodes.size()) throw TapeError("Var id out of range for its tape");
        return s->nodes[id_];
    }

    std::weak_ptr<detail::TapeState> tape_;
    std::size_t id_ = 0;
};

namespace detail {

struct Ops {
    static std::shared_ptr<TapeState> state_of(const Var& v) { return v.state(); }

    static std::shared_ptr<TapeState> common(const char* op, const Var& a, const Var& b) {
        auto sa = a.state();
        if (sa != b.state()) throw TapeError(std::string(op) + ": operands live on different tapes");
        return sa;
    }

    static Var record(const std::shared_ptr<TapeState>& s, const char* op, Tensor value,
                      bool requires_grad, BackwardFn backward) {
        if (s->consumed) throw TapeError(std::string(op) + ": tape already consumed by backward()");
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.op = op;
        if (requires_grad) n.backward = std::move(backward);
        s->nodes.push_back(std::move(n));
        return Var(s, s->nodes.size() - 1);
    }

    static bool rg(const TapeState& s, std::size_t id) { return s.nodes[id].requires_grad; }
};

inline void require_same_shape(const char* op, const Shape& a, const Shape& b) {
    if (a != b) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
    }
}

} // namespace detail

class Tape {
public:
    Tape() : state_(std::make_shared<detail::TapeState>()) {}

    Var leaf(Tensor value, bool requires_grad = false) {
        return detail::Ops::record(state_, "leaf", std::move(value), requires_grad, nullptr);
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }

    std::size_t size() const noexcept { return state_->nodes.size(); }
    bool consumed() const noexcept { return state_->consumed; }
    bool owns(const Var& v) const { return v.tape_.lock() == state_; }

    // Populates grad() for every node that requires a gradient (zeros where
    // the loss does not depend on it), then marks the tape consumed.
    void backward(const Var& loss) {
        check_loss(loss, "backward");
        detail::GradSink sink = sweep(loss);
        for (std::size_t i = 0; i < state_->nodes.size(); ++i) {
            auto& n = state_->nodes[i];
            if (!n.requires_grad) continue;
            auto& g = sink.slot(i);
            n.grad = g ? std::move(*g) : Tensor(n.value.shape());
        }
        for (auto& n : state_->nodes) n.backward = nullptr;
        state_->consumed = true;
    }

    // d(loss)/d(target) as a fresh tensor. Stored gradients are untouched.
    Tensor grad_wrt(const Var& loss, const Var& target) const {
        check_loss(loss, "grad_wrt");
        if (!owns(target)) throw TapeError("grad_wrt: target is not on this tape");
        if (!state_->nodes[target.id()].requires_grad) {
            throw TapeError("grad_wrt: target was recorded without requires_grad");
        }
        detail::GradSink sink = sweep(loss);
        auto& g = sink.slot(target.id());
        return g ? std::move(*g) : Tensor(state_->nodes[target.id()].value.shape());
    }

private:
    void check_loss(const Var& loss, const char* op) const {
        if (state_->consumed) throw TapeError(std::string(op) + ": tape already consumed by backward()");
        if (!owns(loss)) throw TapeError(std::string(op) + ": loss is not on this tape");
        const auto& shape = loss.shape();
        if (!shape.empty()) {
            throw ShapeError(std::string(op) + ": loss must be scalar, got shape " + to_string(shape));
        }
    }

    detail::GradSink sweep(const Var& loss) const {
        detail::GradSink sink(*state_);
        if (state_->nodes[loss.id()].requires_grad) sink.slot(loss.id()).emplace(Tensor::scalar(1.0));
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            const auto& n = state_->nodes[i];
            auto& g = sink.slot(i);
            if (g && n.backward) n.backward(*g, sink);
        }
        return sink;
    }

    std::shared_ptr<detail::TapeState> state_;
};

// ---------------------------------------------------------------------------
// Primitives

inline Var add(const Var& a, const Var& b) {
    auto s = detail::Ops::common("add", a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    detail::require_same_shape("add", av.shape(), bv.shape());
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    const bool rg = detail::Ops::rg(*s, ia) || detail::Ops::rg(*s, ib);
    return detail::Ops::record(s, "add", std::move(out), rg, [ia, ib](const Tensor& g, detail::GradSink& sink) {
        for (std::size_t id : {ia, ib}) {
            if (Tensor* acc = sink.acc(id)) {
                for (std::size_t i = 0; i < g.size(); ++i) (*acc)[i] += g[i];
            }
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    auto s = detail::Ops::common("mul", a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    detail::require_same_shape("mul", av.shape(), bv.shape());
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    const bool rg = detail::Ops::rg(*s, ia) || detail::Ops::rg(*s, ib);
    return detail::Ops::record(s, "mul", std::move(out), rg, [ia, ib](const Tensor& g, detail::GradSink& sink) {
        if (Tensor* acc = sink.acc(ia)) {
            const Tensor& bv = sink.value(ib);
            for (std::size_t i = 0; i < g.size(); ++i) (*acc)[i] += g[i] * bv[i];
        }
        if (Tensor* acc = sink.acc(ib)) {
            const Tensor& av = sink.value(ia);
            for (std::size_t i = 0; i < g.size(); ++i) (*acc)[i] += g[i] * av[i];
        }
    });
}

inline Var scale(const Var& a, double c) {
    auto s = detail::Ops::state_of(a);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    const std::size_t ia = a.id();
    return detail::Ops::record(s, "scale", std::move(out), detail::Ops::rg(*s, ia),
                               [ia, c](const Tensor& g, detail::GradSink& sink) {
                                   if (Tensor* acc = sink.acc(ia)) {
                                       for (std::size_t i = 0; i < g.size(); ++i) (*acc)[i] += c * g[i];
                                   }
                               });
}

inline Var matmul(const Var& a, const Var& b) {
    auto s = detail::Ops::common("matmul", a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const bool vec = av.rank() == 1;
    if ((av.rank() != 1 && av.rank() != 2) || bv.rank() != 2 ||
        av.shape().back() != bv.dim(0)) {
        throw ShapeError("matmul: shape mismatch " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
    }
    const std::size_t m = vec ? 1 : av.dim(0);
    const std::size_t k = bv.dim(0);
    const std::size_t n = bv.dim(1);
    Tensor out(vec ? Shape{n} : Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
        }
    }
    const std::size_t ia = a.id(), ib = b.id();
    const bool rg = detail::Ops::rg(*s, ia) || detail::Ops::rg(*s, ib);
    return detail::Ops::record(s, "matmul", std::move(out), rg,
                               [ia, ib, m, k, n](const Tensor& g, detail::GradSink& sink) {
        const Tensor& av = sink.value(ia);
        const Tensor& bv = sink.value(ib);
        if (Tensor* acc = sink.acc(ia)) {  // dA = G B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double t = 0.0;
                    for (std::size_t j = 0; j < n; ++j) t += g[i * n + j] * bv[p * n + j];
                    (*acc)[i * k + p] += t;
                }
        }
        if (Tensor* acc = sink.acc(ib)) {  // dB = A^T G
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double x = av[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) (*acc)[p * n + j] += x * g[i * n + j];
                }
        }
    });
}

// Embedding lookup. Backward scatter-adds, so repeated ids accumulate.
inline Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
    auto s = detail::Ops::state_of(table);
    const Tensor& tv = table.value();
    if (tv.rank() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + to_string(tv.shape()));
    const std::size_t rows = tv.dim(0), d = tv.dim(1);
    Tensor out({ids.size(), d});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= rows) {
            throw ShapeError("gather_rows: id " + std::to_string(ids[r]) + " out of range for table " +
                             to_string(tv.shape()));
        }
        std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d,
                    out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    const std::size_t it = table.id();
    std::vector<std::size_t> saved(ids.begin(), ids.end());
    return detail::Ops::record(s, "gather_rows", std::move(out), detail::Ops::rg(*s, it),
                               [it, d, saved = std::move(saved)](const Tensor& g, detail::GradSink& sink) {
                                   if (Tensor* acc = sink.acc(it)) {
                                       for (std::size_t r = 0; r < saved.size(); ++r)
                                           for (std::size_t c = 0; c < d; ++c)
                                               (*acc)[saved[r] * d + c] += g[r * d + c];
                                   }
                               });
}

// Mean over the rows whose mask entry is non-zero. An all-zero mask yields the
// zero vector (and a zero gradient).
inline Var mean_rows(const Var& x, std::span<const std::uint8_t> mask) {
    auto s = detail::Ops::state_of(x);
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || mask.size() != xv.dim(0)) {
        throw ShapeError("mean_rows: shape mismatch " + to_string(xv.shape()) + " vs mask [" +
                         std::to_string(mask.size()) + "]");
    }
    const std::size_t rows = xv.dim(0), d = xv.dim(1);
    const auto kept = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
    Tensor out({d});
    const double w = kept ? 1.0 / static_cast<double>(kept) : 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        for (std::size_t c = 0; c < d; ++c) out[c] += xv[r * d + c];
    }
    for (std::size_t c = 0; c < d; ++c) out[c] *= w;
    const std::size_t ix = x.id();
    std::vector<std::uint8_t> saved(mask.begin(), mask.end());
    return detail::Ops::record(s, "mean_rows", std::move(out), detail::Ops::rg(*s, ix),
                               [ix, d, w, saved = std::move(saved)](const Tensor& g, detail::GradSink& sink) {
                                   if (Tensor* acc = sink.acc(ix)) {
                                       for (std::size_t r = 0; r < saved.size(); ++r) {
                                           if (!saved[r]) continue;
                                           for (std::size_t c = 0; c < d; ++c) (*acc)[r * d + c] += w * g[c];
                                       }
                                   }
                               });
}

inline Var mean_rows(const Var& x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ShapeError("mean_rows: expected rank 2, got " + to_string(xv.shape()));
    std::vector<std::uint8_t> all(xv.dim(0), 1);
    return mean_rows(x, all);
}

inline Var tanh(const Var& a) {
    auto s = detail::Ops::state_of(a);
    Tensor out = a.value();
    for (auto& v : out.data()) v = std::tanh(v);
    const std::size_t ia = a.id();
    const std::size_t self = s->nodes.size();
    return detail::Ops::record(s, "tanh", std::move(out), detail::Ops::rg(*s, ia),
                               [ia, self](const Tensor& g, detail::GradSink& sink) {
                                   if (Tensor* acc = sink.acc(ia)) {
                                       const Tensor& y = sink.value(self);
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           (*acc)[i] += g[i] * (1.0 - y[i] * y[i]);
                                   }
                               });
}

inline Var relu(const Var& a) {
    auto s = detail::Ops::state_of(a);
    Tensor out = a.value();
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    const std::size_t ia = a.id();
    return detail::Ops::record(s, "relu", std::move(out), detail::Ops::rg(*s, ia),
                               [ia](const Tensor& g, detail::GradSink& sink) {
                                   if (Tensor* acc = sink.acc(ia)) {
                                       const Tensor& x = sink.value(ia);
                                       for (std::size_t i = 0; i < g.size(); ++i)
                                           if (x[i] > 0.0) (*acc)[i] += g[i];
                                   }
                               });
}

inline Var sum(const Var& a) {
    auto s = detail::Ops::state_of(a);
    const Tensor& av = a.value();
    double total = 0.0;
    for (double v : av.data()) total += v;
    const std::size_t ia = a.id();
    return detail::Ops::record(s, "sum", Tensor::scalar(total), detail::Ops::rg(*s, ia),
                               [ia](const Tensor& g, detail::GradSink& sink) {
                                   if (Tensor* acc = sink.acc(ia)) {
                                       for (auto& v : acc->data()) v += g[0];
                                   }
                               });
}

// Numerically stable log-softmax cross-entropy for one example.
inline Var softmax_cross_entropy(const Var& logits, std::size_t label) {
    auto s = detail::Ops::state_of(logits);
    const Tensor& lv = logits.value();
    if (lv.rank() != 1 || lv.size() == 0) {
        throw ShapeError("softmax_cross_entropy: logits must be a non-empty vector, got " + to_string(lv.shape()));
    }
    if (label >= lv.size()) {
        throw Error("softmax_cross_entropy: label " + std::to_string(label) + " out of range for " +
                    std::to_string(lv.size()) + " classes");
    }
    const double mx = *std::max_element(lv.data().begin(), lv.data().end());
    std::vector<double> probs(lv.size());
    double z = 0.0;
    for (std::size_t i = 0; i < lv.size(); ++i) {
        probs[i] = std::exp(lv[i] - mx);
        z += probs[i];
    }
    for (auto& p : probs) p /= z;
    const double loss = std::log(z) + mx - lv[label];
    const std::size_t il = logits.id();
    return detail::Ops::record(s, "softmax_cross_entropy", Tensor::scalar(loss), detail::Ops::rg(*s, il),
                               [il, label, probs = std::move(probs)](const Tensor& g, detail::GradSink& sink) {
                                   if (Tensor* acc = sink.acc(il)) {
                                       for (std::size_t i = 0; i < probs.size(); ++i)
                                           (*acc)[i] += g[0] * (probs[i] - (i == label ? 1.0 : 0.0));
                                   }
                               });
}

} // namespace fedeat
