#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cornerdet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// NCHW extents of a rank-4 tensor.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    std::size_t numel() const { return n * c * h * w; }
    std::size_t plane() const { return h * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

class Tensor;

namespace detail {

struct TensorImpl;

/// A recorded operation. Holds whatever the backward rule needs; the
/// output value is handed back in so nodes never own their result.
class Node {
public:
    virtual ~Node() = default;
    virtual void backward(const TensorImpl& out) = 0;

    std::vector<std::shared_ptr<TensorImpl>> inputs;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    std::shared_ptr<Node> creator;

    bool is_leaf() const { return creator == nullptr; }
    /// Allocates grad on first use and returns it.
    std::vector<double>& grad_buffer();
};

bool grad_enabled();

/// Fingerprint of the discrete decisions (ReLU gates, max routes, clamps,
/// sampling cells) taken during a forward pass. Only accumulated while a
/// KinkRecorder is active; finite-difference checks use it to detect that a
/// perturbation crossed a non-differentiable point.
void record_decision(std::uint64_t value);
bool recording_decisions();

}  // namespace detail

/// Disables graph construction for the lifetime of the guard.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

class KinkRecorder {
public:
    KinkRecorder();
    ~KinkRecorder();
    KinkRecorder(const KinkRecorder&) = delete;
    KinkRecorder& operator=(const KinkRecorder&) = delete;

    std::uint64_t fingerprint() const;

private:
    KinkRecorder* previous_;
    std::uint64_t hash_;
    friend void detail::record_decision(std::uint64_t);
};

/// Dense rank-4 array of doubles with optional reverse-mode tracking.
///
/// Tensors are shared handles: copying a Tensor aliases the same storage.
/// Values produced by operations are treated as immutable; only leaves
/// (parameters, inputs) are written through mutable_data().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t numel() const { return shape().numel(); }

    std::span<const double> data() const;
    std::span<double> mutable_data();
    /// Empty when no gradient has reached this tensor.
    std::span<const double> grad() const;

    double item() const;
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;
    std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    void zero_grad();

    /// Copy of the values without history; the result is a fresh leaf.
    Tensor detach() const;
    Tensor clone() const;

    /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across
    /// calls; interior gradients are recomputed each call.
    void backward() const;

    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

namespace detail {

/// True when grad mode is on and at least one input is tracked.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

/// Wraps freshly computed values; `node` may be null for untracked results.
/// A non-null node must already list its inputs.
Tensor make_result(Shape shape, std::vector<double> values, std::shared_ptr<Node> node);

}  // namespace detail

}  // namespace cornerdet
