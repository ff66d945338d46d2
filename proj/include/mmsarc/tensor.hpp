#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmsarc/error.hpp"

namespace mmsarc {

using Shape = std::vector<int>;
using Rng = std::mt19937_64;

/// Mask over sequence positions; nonzero = position is real, zero = padding.
using Mask = std::vector<std::uint8_t>;

inline Mask all_valid(int n) { return Mask(static_cast<std::size_t>(n), 1); }

/// Deterministic seed derivation (splitmix64 finalizer), used to shard
/// independent random streams off one root seed.
inline std::uint64_t mix_seed(std::uint64_t root, std::uint64_t stream) {
    std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline long numel(const Shape& s) {
    long n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("shape has non-positive dimension");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {
inline thread_local int no_grad_depth = 0;
inline thread_local long next_node_id = 0;
inline bool debug_checks_flag = false;
}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// RAII guard: ops executed inside do not record backward rules.
class NoGradGuard {
public:
    NoGradGuard() { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// When enabled, every op output is scanned for NaN/Inf and an op producing
/// one throws NumericError. Off by default (costs one pass per op).
inline void set_debug_checks(bool on) { detail::debug_checks_flag = on; }
inline bool debug_checks() { return detail::debug_checks_flag; }

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    long node_id = 0;
    const char* op = "leaf";
};

/// Shared-handle n-dimensional array of doubles, row-major. Ops on tensors
/// whose inputs require grad are recorded on the thread's active Graph and
/// replayed in reverse by backward().
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
        const long n = numel(shape);
        if (static_cast<long>(values.size()) != n)
            throw ShapeError("tensor " + shape_str(shape) + " expects " + std::to_string(n) +
                             " values, got " + std::to_string(values.size()));
        impl_ = std::make_shared<TensorImpl>();
        impl_->shape = std::move(shape);
        impl_->values = std::move(values);
        impl_->requires_grad = requires_grad;
        impl_->node_id = detail::next_node_id++;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const long n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                      requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        const long n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v),
                      requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor({1}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
        const long n = numel(shape);
        std::normal_distribution<double> dist(0.0, 1.0);
        std::vector<double> v(static_cast<std::size_t>(n));
        for (auto& x : v) x = dist(rng) * stddev;
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    long size() const { return static_cast<long>(impl_->values.size()); }

    std::vector<double>& values() { return impl_->values; }
    const std::vector<double>& values() const { return impl_->values; }
    double* data() { return impl_->values.data(); }
    const double* data() const { return impl_->values.data(); }

    /// Scalar convenience accessor; requires size() == 1.
    double value() const {
        if (size() != 1) throw ContractError("value(): tensor is not scalar");
        return impl_->values[0];
    }

    double& at(long i) { return impl_->values[static_cast<std::size_t>(i)]; }
    double at(long i) const { return impl_->values[static_cast<std::size_t>(i)]; }

    /// Row-major multi-index access, e.g. t.at({i, j}).
    double& at(const Shape& idx) { return impl_->values[flat_index(idx)]; }
    double at(const Shape& idx) const { return impl_->values[flat_index(idx)]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    /// Accumulated gradient, allocated (zero) on first access.
    std::vector<double>& grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
        return impl_->grad;
    }
    const std::vector<double>& grad() const {
        if (impl_->grad.empty())
            throw ContractError("grad(): no gradient accumulated for this tensor");
        return impl_->grad;
    }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad() { impl_->grad.clear(); }

    long node_id() const { return impl_->node_id; }
    const char* op() const { return impl_->op; }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::size_t flat_index(const Shape& idx) const {
        const Shape& s = impl_->shape;
        if (idx.size() != s.size())
            throw ShapeError("at(): " + std::to_string(idx.size()) + " indices for " +
                             shape_str(s));
        std::size_t flat = 0;
        for (std::size_t k = 0; k < s.size(); ++k) {
            if (idx[k] < 0 || idx[k] >= s[k])
                throw ShapeError("at(): index " + std::to_string(idx[k]) + " out of range for " +
                                 shape_str(s));
            flat = flat * static_cast<std::size_t>(s[k]) + static_cast<std::size_t>(idx[k]);
        }
        return flat;
    }

    std::shared_ptr<TensorImpl> impl_;
};

/// Append-only record of executed ops; inputs always precede outputs, so the
/// record order is a topological order and backward() is a single reverse
/// sweep. One Graph per training thread (thread_local active instance).
class Graph {
public:
    struct Record {
        const char* op;
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::shared_ptr<TensorImpl> output;
        /// Accumulates input gradients given the output gradient. Entries of
        /// `dins` are null for inputs that do not require grad.
        std::function<void(const std::vector<double>& dout,
                           const std::vector<std::vector<double>*>& dins)>
            backward;
    };

    static Graph& active() {
        static thread_local Graph g;
        return g;
    }

    void record(Record r) { records_.push_back(std::move(r)); }
    std::size_t size() const { return records_.size(); }
    void clear() { records_.clear(); }

    /// Reverse-mode sweep from a scalar loss. Per-pass gradients are kept in
    /// scratch buffers and added into each requires-grad tensor's persistent
    /// grad at the end, so repeated calls accumulate exactly.
    void backward_from(const Tensor& loss) {
        if (!loss.defined() || loss.size() != 1)
            throw ContractError("backward: loss must be a scalar tensor");
        if (!loss.requires_grad())
            throw ContractError("backward: loss does not require grad (no live graph)");

        std::unordered_map<TensorImpl*, std::vector<double>> pass;
        pass[loss.impl().get()] = {1.0};

        for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
            auto found = pass.find(it->output.get());
            if (found == pass.end()) continue;
            // element references stay valid across rehashing; iterators do not
            const std::vector<double>& dout = found->second;
            std::vector<std::vector<double>*> dins(it->inputs.size(), nullptr);
            for (std::size_t i = 0; i < it->inputs.size(); ++i) {
                TensorImpl* in = it->inputs[i].get();
                if (!in->requires_grad) continue;
                auto& buf = pass[in];
                if (buf.empty()) buf.assign(in->values.size(), 0.0);
                dins[i] = &buf;
            }
            it->backward(dout, dins);
        }

        for (auto& [impl, g] : pass) {
            if (!impl->requires_grad || g.empty()) continue;
            if (impl->grad.empty()) impl->grad.assign(impl->values.size(), 0.0);
            for (std::size_t i = 0; i < g.size(); ++i) impl->grad[i] += g[i];
        }
    }

private:
    std::vector<Record> records_;
};

/// Runs reverse-mode differentiation of `loss` over the active graph.
inline void backward(const Tensor& loss) { Graph::active().backward_from(loss); }

}  // namespace mmsarc
