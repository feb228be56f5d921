#pragma once

#include <functional>
#include <string>
#include <vector>

#include "seam/tensor.hpp"

namespace seam::autograd {

/// One recorded operation. `backward` reads the output's gradient and
/// accumulates into the inputs' gradients.
struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    std::function<void(const Tensor& out)> backward;
};

/// Helper for op implementations: wraps freshly computed data in a tensor,
/// verifies it is finite, and records a Node when any input requires grad.
Tensor make_output(Shape shape, DType dt, detail::Storage data, const char* op,
                   std::vector<Tensor> inputs,
                   std::function<void(const Tensor& out)> backward);

/// Reverse-mode pass from a scalar loss. Derives the tape (a topological
/// order of the recorded nodes), seeds d(loss)/d(loss) = 1, then runs each
/// node's backward rule exactly once. Gradients accumulate additively when
/// a tensor feeds several ops. Raises NumericError if any accumulated
/// gradient is non-finite.
void backward(const Tensor& loss);

/// p <- p - lr * grad(p) for each parameter, then clears all grads.
/// Raises ValidationError if any parameter is missing its gradient.
void sgd_step(std::vector<Tensor>& params, double lr);

} // namespace seam::autograd
