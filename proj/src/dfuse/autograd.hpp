#pragma once

// Minimal tape-based reverse-mode differentiation over dense double tensors.
//
// Every op returns a Var that owns its value and, when any input requires a
// gradient, a backward closure that accumulates into its parents' grads.
// Parameters are leaf Vars created with Var::parameter(); their grads persist
// across backward() calls until zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace dfuse::ag {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s) noexcept;
std::string shape_str(const Shape& s);

// Eigen peels unaligned heads off its vectorised reductions, so the summation
// order would otherwise follow heap addresses and runs would not repeat bit-exactly.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

struct Node {
    Shape shape;
    Buffer value;
    Buffer grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    // Zero-initialised on first use.
    Buffer& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Shape shape, std::vector<double> value);
    static Var constant(Shape shape, double fill);
    static Var parameter(Shape shape, std::vector<double> value);

    explicit operator bool() const noexcept { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> value() const { return node_->value; }
    std::span<double> mutable_value() { return node_->value; }
    // Empty span when no gradient has been accumulated.
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad_buffer(); }
    bool requires_grad() const { return node_->requires_grad; }
    double item() const;

    void zero_grad();

    Node* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node>& ptr() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Build an op output. When gradients are disabled or no parent needs one, the
// closure is dropped and the result is a constant.
Var make_result(Shape shape, std::vector<double> value, std::vector<Var> parents,
                std::function<void(Node&)> backward);

// Accumulate d(root)/d(leaf) * seed into every reachable leaf's grad.
void backward(const Var& root, double seed = 1.0);

bool grad_enabled() noexcept;

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

}  // namespace dfuse::ag
