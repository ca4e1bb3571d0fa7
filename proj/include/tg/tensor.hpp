#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tg/errors.hpp"
#include "tg/rng.hpp"

namespace tg {

inline thread_local int g_no_grad_depth = 0;

inline bool grad_enabled() { return g_no_grad_depth == 0; }

// RAII scope that disables graph recording (inference / data paths).
struct NoGradGuard {
    NoGradGuard() { ++g_no_grad_depth; }
    ~NoGradGuard() { --g_no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
struct TensorT;

// One recorded primitive: the tensors it consumed and how to push the output
// gradient back into them.
template <class T>
struct NodeT {
    std::vector<TensorT<T>> parents;
    std::function<void(const TensorT<T>& out)> backward;
};

// Dense row-major tensor. Copies share the payload (data/grad/node), so a
// tensor value is a cheap handle; ops never mutate their inputs.
template <class T>
struct TensorT {
    std::vector<int> shape;
    std::shared_ptr<std::vector<T>> data;
    std::shared_ptr<std::vector<T>> grad;  // allocated iff requires_grad
    std::shared_ptr<NodeT<T>> node;        // null for leaves
    bool requires_grad = false;

    TensorT() = default;

    static size_t numel_of(const std::vector<int>& shape) {
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        return n;
    }

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        TensorT t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(numel_of(t.shape), T{0});
        t.requires_grad = requires_grad;
        if (requires_grad) t.grad = std::make_shared<std::vector<T>>(t.data->size(), T{0});
        return t;
    }

    static TensorT full(std::vector<int> shape, T value, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (T& v : *t.data) v = value;
        return t;
    }

    static TensorT from_data(std::vector<int> shape, std::vector<T> values, bool requires_grad = false) {
        if (numel_of(shape) != values.size())
            throw DimensionError("from_data: " + std::to_string(values.size()) + " values for shape " +
                                 shape_str(shape));
        TensorT t;
        t.shape = std::move(shape);
        t.data = std::make_shared<std::vector<T>>(std::move(values));
        t.requires_grad = requires_grad;
        if (requires_grad) t.grad = std::make_shared<std::vector<T>>(t.data->size(), T{0});
        return t;
    }

    static TensorT randn(std::vector<int> shape, Rng& rng, T stddev = T{1}, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (T& v : *t.data) v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
        return t;
    }

    size_t numel() const { return data ? data->size() : 0; }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    T* gptr() { return grad->data(); }
    const T* gptr() const { return grad->data(); }

    T item() const {
        if (numel() != 1) throw DimensionError("item: tensor has " + std::to_string(numel()) + " elements");
        return (*data)[0];
    }

    void ensure_grad() {
        if (!grad) grad = std::make_shared<std::vector<T>>(numel(), T{0});
    }

    void zero_grad() {
        if (grad)
            for (T& g : *grad) g = T{0};
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << ']';
        return os.str();
    }
    std::string shape_str() const { return shape_str(shape); }
};

// Shared plumbing for op implementations: wire the output to its node when
// recording is active and any input carries gradient.
template <class T>
TensorT<T> make_result(std::vector<int> shape, std::vector<TensorT<T>> parents,
                       std::function<void(const TensorT<T>&)> backward_fn) {
    bool track = false;
    if (grad_enabled())
        for (const auto& p : parents)
            if (p.requires_grad) track = true;
    TensorT<T> out = TensorT<T>::zeros(std::move(shape), track);
    if (track) {
        out.node = std::make_shared<NodeT<T>>();
        out.node->parents = std::move(parents);
        out.node->backward = std::move(backward_fn);
    }
    return out;
}

// Reverse pass from a scalar loss. Visits each recorded op exactly once, in
// reverse topological order. Iterative DFS; graphs can be thousands of ops deep.
template <class T>
void backward(TensorT<T>& loss) {
    if (loss.numel() != 1) throw DimensionError("backward: loss must be scalar, got " + loss.shape_str());
    loss.ensure_grad();
    (*loss.grad)[0] = T{1};
    if (!loss.node) return;

    struct Frame {
        NodeT<T>* node;
        TensorT<T> out;
        size_t next = 0;
    };
    std::vector<std::pair<NodeT<T>*, TensorT<T>>> topo;
    std::unordered_set<NodeT<T>*> visited;
    std::vector<Frame> stack;
    stack.push_back({loss.node.get(), loss});
    visited.insert(loss.node.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            const TensorT<T>& p = f.node->parents[f.next++];
            if (p.node && !visited.count(p.node.get())) {
                visited.insert(p.node.get());
                stack.push_back({p.node.get(), p});
            }
        } else {
            topo.emplace_back(f.node, f.out);
            stack.pop_back();
        }
    }
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        NodeT<T>* n = it->first;
        for (auto& p : n->parents)
            if (p.requires_grad) const_cast<TensorT<T>&>(p).ensure_grad();
        n->backward(it->second);
    }
}

using Tensor = TensorT<float>;

}  // namespace tg
