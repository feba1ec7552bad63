#include "cornerdet/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace cornerdet {

std::string Shape::str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
}

namespace {

thread_local bool g_grad_enabled = true;
thread_local KinkRecorder* g_recorder = nullptr;

}  // namespace

namespace detail {

std::vector<double>& TensorImpl::grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
}

bool grad_enabled() { return g_grad_enabled; }

void record_decision(std::uint64_t value) {
    if (g_recorder == nullptr) return;
    // splitmix-style mixing, order sensitive
    std::uint64_t z = g_recorder->hash_ ^ (value + 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    g_recorder->hash_ = z ^ (z >> 31);
}

bool recording_decisions() { return g_recorder != nullptr; }

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t != nullptr && t->defined() && t->requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<double> values, std::shared_ptr<Node> node) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(values);
    if (node) {
        impl->requires_grad = true;
        impl->creator = std::move(node);
    }
    return Tensor(std::move(impl));
}

}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

KinkRecorder::KinkRecorder() : previous_(g_recorder), hash_(0) { g_recorder = this; }
KinkRecorder::~KinkRecorder() { g_recorder = previous_; }
std::uint64_t KinkRecorder::fingerprint() const { return hash_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(shape, 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    return from_data(shape, std::vector<double>(shape.numel(), value), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape.numel()) {
        throw Error("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                    shape.str());
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1, 1, 1, 1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    static const Shape empty{};
    return impl_ ? impl_->shape : empty;
}

std::span<const double> Tensor::data() const {
    if (!impl_) return {};
    return impl_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!impl_) return {};
    return impl_->data;
}

std::span<const double> Tensor::grad() const {
    if (!impl_) return {};
    return impl_->grad;
}

double Tensor::item() const {
    if (numel() != 1) throw Error("item() requires a single-element tensor, got " + shape().str());
    return impl_->data[0];
}

std::size_t Tensor::index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = shape();
    return ((n * s.c + c) * s.h + h) * s.w + w;
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return impl_->data[index(n, c, h, w)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    if (!impl_) throw Error("set_requires_grad on an undefined tensor");
    if (!impl_->is_leaf()) throw Error("requires_grad can only be changed on leaf tensors");
    impl_->requires_grad = flag;
}

void Tensor::zero_grad() {
    if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from_data(shape(), impl_->data, false); }

Tensor Tensor::clone() const { return from_data(shape(), impl_->data, requires_grad() && impl_->is_leaf()); }

void Tensor::backward() const {
    if (!impl_) throw Error("backward on an undefined tensor");
    if (numel() != 1) throw Error("backward requires a scalar loss, got shape " + shape().str());
    if (!impl_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (inputs before users).
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (node->creator && next < node->creator->inputs.size()) {
            detail::TensorImpl* child = node->creator->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    for (detail::TensorImpl* t : order) {
        if (!t->is_leaf()) t->grad.assign(t->data.size(), 0.0);
    }
    impl_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* t = *it;
        if (t->is_leaf()) continue;
        t->creator->backward(*t);
        // interior gradients are dead once propagated
        std::vector<double>().swap(t->grad);
    }
}

}  // namespace cornerdet
