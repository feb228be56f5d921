#include "seam/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace seam::autograd {

Tensor make_output(Shape shape, DType dt, detail::Storage data, const char* op,
                   std::vector<Tensor> inputs,
                   std::function<void(const Tensor& out)> backward) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->dtype = dt;
    impl->data = std::move(data);

    bool any_grad = false;
    for (const auto& in : inputs) {
        any_grad = any_grad || in.requires_grad();
    }
    Tensor out = Tensor::wrap(std::move(impl));
    if (!out.all_finite()) {
        throw NumericError(std::string(op) + ": non-finite value in output");
    }
    if (any_grad) {
        out.set_requires_grad(true);
        auto node = std::make_shared<Node>();
        node->op = op;
        node->inputs = std::move(inputs);
        node->backward = std::move(backward);
        out.impl()->node = std::move(node);
    }
    return out;
}

namespace {

bool grad_finite(const detail::TensorImpl& impl) {
    for (float x : impl.grad.f32) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    for (double x : impl.grad.f64) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

} // namespace

void backward(const Tensor& loss) {
    if (!loss.defined()) {
        throw ValidationError("backward: undefined loss tensor");
    }
    if (loss.size() != 1) {
        throw ValidationError("backward: loss must be scalar, got shape " +
                              shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        return; // disconnected from any parameter; nothing to do
    }

    // Tape: depth-first post-order over producing nodes. Iterative to keep
    // deep conv stacks off the call stack.
    std::vector<std::shared_ptr<detail::TensorImpl>> tape;
    std::unordered_set<detail::TensorImpl*> visited;
    std::vector<std::pair<std::shared_ptr<detail::TensorImpl>, std::size_t>> stack;
    stack.emplace_back(loss.impl(), 0);
    visited.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [impl, next_child] = stack.back();
        if (impl->node && next_child < impl->node->inputs.size()) {
            const auto& child = impl->node->inputs[next_child].impl();
            ++next_child;
            if (child->node && !visited.count(child.get())) {
                visited.insert(child.get());
                stack.emplace_back(child, 0);
            }
        } else {
            tape.push_back(impl);
            stack.pop_back();
        }
    }

    // Seed d(loss)/d(loss) = 1.
    auto& loss_impl = *loss.impl();
    loss_impl.grad.resize_zero(loss_impl.dtype, 1);
    if (loss_impl.dtype == DType::f32) {
        loss_impl.grad.f32[0] = 1.0f;
    } else {
        loss_impl.grad.f64[0] = 1.0;
    }

    for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
        const auto& impl = *it;
        if (!impl->node) {
            continue;
        }
        if (impl->grad.empty()) {
            continue; // branch never received gradient (unused output)
        }
        impl->node->backward(Tensor::wrap(impl));
    }

    for (const auto& impl : tape) {
        if (!impl->grad.empty() && !grad_finite(*impl)) {
            throw NumericError("backward: non-finite gradient" +
                               (impl->node ? " at op " + impl->node->op : std::string()));
        }
        if (!impl->node) {
            continue;
        }
        for (const auto& in : impl->node->inputs) { // covers leaf gradients
            if (in.impl()->grad.empty()) {
                continue;
            }
            if (!grad_finite(*in.impl())) {
                throw NumericError("backward: non-finite gradient into input of op " +
                                   impl->node->op);
            }
        }
    }
}

void sgd_step(std::vector<Tensor>& params, double lr) {
    for (auto& p : params) {
        if (!p.has_grad()) {
            throw ValidationError("sgd_step: parameter missing gradient");
        }
    }
    for (auto& p : params) {
        const auto n = static_cast<std::size_t>(p.size());
        auto& impl = *p.impl();
        if (p.dtype() == DType::f32) {
            const float flr = static_cast<float>(lr);
            for (std::size_t i = 0; i < n; ++i) {
                impl.data.f32[i] -= flr * impl.grad.f32[i];
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                impl.data.f64[i] -= lr * impl.grad.f64[i];
            }
        }
        impl.grad.clear();
    }
}

} // namespace seam::autograd
