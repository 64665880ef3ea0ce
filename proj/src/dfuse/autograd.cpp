#include "dfuse/autograd.hpp"

#include "dfuse/error.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace dfuse::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& s) noexcept
{
    std::size_t n = 1;
    for (int d : s)
        n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& s)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i)
        os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

Buffer& Node::grad_buffer()
{
    if (grad.empty())
        grad.assign(value.size(), 0.0);
    return grad;
}

Var Var::constant(Shape shape, std::vector<double> value)
{
    require(ag::numel(shape) == value.size(), ErrorCode::ShapeMismatch,
            "value size does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(value.begin(), value.end());
    return Var(std::move(n));
}

Var Var::constant(Shape shape, double fill)
{
    const auto count = ag::numel(shape);
    return constant(std::move(shape), std::vector<double>(count, fill));
}

Var Var::parameter(Shape shape, std::vector<double> value)
{
    Var v = constant(std::move(shape), std::move(value));
    v.node_->requires_grad = true;
    return v;
}

double Var::item() const
{
    require(node_->value.size() == 1, ErrorCode::ShapeMismatch, "item() on a non-scalar");
    return node_->value[0];
}

void Var::zero_grad()
{
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Var make_result(Shape shape, std::vector<double> value, std::vector<Var> parents,
                std::function<void(Node&)> backward)
{
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(value.begin(), value.end());
    if (g_grad_enabled) {
        const bool any = std::any_of(parents.begin(), parents.end(),
                                     [](const Var& p) { return p && p.requires_grad(); });
        if (any) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (auto& p : parents)
                n->parents.push_back(p.ptr());
            n->backward = std::move(backward);
        }
    }
    return Var(std::move(n));
}

void backward(const Var& root, double seed)
{
    require(static_cast<bool>(root), ErrorCode::InvalidArgument, "backward on an empty Var");
    if (!root.requires_grad())
        return;

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && p->backward && seen.insert(p).second)
                stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    auto& g = root.node()->grad_buffer();
    for (auto& v : g)
        v += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && !n->grad.empty())
            n->backward(*n);
    }
    // Release intermediate grads so a later backward through the same graph starts clean.
    for (Node* n : order)
        if (n->backward)
            Buffer().swap(n->grad);
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

}  // namespace dfuse::ag
