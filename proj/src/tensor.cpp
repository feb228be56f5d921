#include "seam/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace seam {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        if (e <= 0) {
            throw ShapeError("non-positive extent in shape " + shape_str(shape));
        }
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, DType dt, bool requires_grad) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->dtype = dt;
    impl->requires_grad = requires_grad;
    return impl;
}

template <typename T>
bool finite_all(const std::vector<T>& v) {
    for (T x : v) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

} // namespace

Tensor Tensor::zeros(Shape shape, DType dt, bool requires_grad) {
    auto n = static_cast<std::size_t>(numel(shape));
    auto impl = make_impl(std::move(shape), dt, requires_grad);
    impl->data.resize_zero(dt, n);
    return wrap(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, DType dt, bool requires_grad) {
    auto n = static_cast<std::size_t>(numel(shape));
    auto impl = make_impl(std::move(shape), dt, requires_grad);
    if (dt == DType::f32) {
        impl->data.f32.assign(n, static_cast<float>(value));
    } else {
        impl->data.f64.assign(n, value);
    }
    return wrap(std::move(impl));
}

Tensor Tensor::from_f32(Shape shape, std::vector<float> values, bool requires_grad) {
    if (numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("from_f32: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    }
    auto impl = make_impl(std::move(shape), DType::f32, requires_grad);
    impl->data.f32 = std::move(values);
    return wrap(std::move(impl));
}

Tensor Tensor::from_f64(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("from_f64: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    }
    auto impl = make_impl(std::move(shape), DType::f64, requires_grad);
    impl->data.f64 = std::move(values);
    return wrap(std::move(impl));
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, DType dt, bool requires_grad) {
    auto n = static_cast<std::size_t>(numel(shape));
    auto impl = make_impl(std::move(shape), dt, requires_grad);
    if (dt == DType::f32) {
        impl->data.f32.resize(n);
        for (auto& x : impl->data.f32) {
            x = static_cast<float>(rng.uniform(lo, hi));
        }
    } else {
        impl->data.f64.resize(n);
        for (auto& x : impl->data.f64) {
            x = rng.uniform(lo, hi);
        }
    }
    return wrap(std::move(impl));
}

std::int64_t Tensor::size() const {
    return impl_->dtype == DType::f32 ? static_cast<std::int64_t>(impl_->data.f32.size())
                                      : static_cast<std::int64_t>(impl_->data.f64.size());
}

std::span<const float> Tensor::f32() const {
    if (impl_->dtype != DType::f32) {
        throw DTypeError("f32 access on f64 tensor");
    }
    return impl_->data.f32;
}

std::span<float> Tensor::f32_mut() {
    if (impl_->dtype != DType::f32) {
        throw DTypeError("f32 access on f64 tensor");
    }
    return impl_->data.f32;
}

std::span<const double> Tensor::f64() const {
    if (impl_->dtype != DType::f64) {
        throw DTypeError("f64 access on f32 tensor");
    }
    return impl_->data.f64;
}

std::span<double> Tensor::f64_mut() {
    if (impl_->dtype != DType::f64) {
        throw DTypeError("f64 access on f32 tensor");
    }
    return impl_->data.f64;
}

double Tensor::at(std::int64_t i) const {
    return impl_->dtype == DType::f32 ? static_cast<double>(impl_->data.f32[static_cast<std::size_t>(i)])
                                      : impl_->data.f64[static_cast<std::size_t>(i)];
}

void Tensor::set(std::int64_t i, double v) {
    if (impl_->dtype == DType::f32) {
        impl_->data.f32[static_cast<std::size_t>(i)] = static_cast<float>(v);
    } else {
        impl_->data.f64[static_cast<std::size_t>(i)] = v;
    }
}

std::span<const float> Tensor::grad_f32() const {
    if (impl_->dtype != DType::f32) {
        throw DTypeError("grad_f32 on f64 tensor");
    }
    return impl_->grad.f32;
}

std::span<const double> Tensor::grad_f64() const {
    if (impl_->dtype != DType::f64) {
        throw DTypeError("grad_f64 on f32 tensor");
    }
    return impl_->grad.f64;
}

std::span<float> Tensor::grad_f32_mut() {
    if (impl_->dtype != DType::f32) {
        throw DTypeError("grad_f32_mut on f64 tensor");
    }
    return impl_->grad.f32;
}

std::span<double> Tensor::grad_f64_mut() {
    if (impl_->dtype != DType::f64) {
        throw DTypeError("grad_f64_mut on f32 tensor");
    }
    return impl_->grad.f64;
}

double Tensor::grad_at(std::int64_t i) const {
    return impl_->dtype == DType::f32
               ? static_cast<double>(impl_->grad.f32[static_cast<std::size_t>(i)])
               : impl_->grad.f64[static_cast<std::size_t>(i)];
}

Tensor Tensor::grad() const {
    if (!has_grad()) {
        throw ValidationError("grad(): no gradient present");
    }
    auto impl = make_impl(impl_->shape, impl_->dtype, false);
    impl->data = impl_->grad;
    return wrap(std::move(impl));
}

void Tensor::zero_grad() {
    impl_->grad.clear();
}

Tensor Tensor::clone() const {
    auto impl = make_impl(impl_->shape, impl_->dtype, impl_->requires_grad);
    impl->data = impl_->data;
    return wrap(std::move(impl));
}

Tensor Tensor::detach() const {
    auto impl = make_impl(impl_->shape, impl_->dtype, false);
    impl->data = impl_->data;
    return wrap(std::move(impl));
}

Tensor Tensor::astype(DType dt) const {
    if (dt == impl_->dtype) {
        return clone();
    }
    auto impl = make_impl(impl_->shape, dt, false);
    const auto n = static_cast<std::size_t>(size());
    if (dt == DType::f32) {
        impl->data.f32.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            impl->data.f32[i] = static_cast<float>(impl_->data.f64[i]);
        }
    } else {
        impl->data.f64.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            impl->data.f64[i] = static_cast<double>(impl_->data.f32[i]);
        }
    }
    return wrap(std::move(impl));
}

bool Tensor::all_finite() const {
    return impl_->dtype == DType::f32 ? finite_all(impl_->data.f32) : finite_all(impl_->data.f64);
}

void accumulate_grad(Tensor& t, const Tensor& delta) {
    auto& impl = *t.impl();
    if (delta.dtype() != impl.dtype) {
        throw DTypeError("gradient dtype mismatch");
    }
    if (delta.shape() != impl.shape) {
        throw ShapeError("gradient shape mismatch: " + shape_str(delta.shape()) + " vs " +
                         shape_str(impl.shape));
    }
    const auto n = static_cast<std::size_t>(t.size());
    if (impl.grad.empty()) {
        impl.grad.resize_zero(impl.dtype, n);
    }
    if (impl.dtype == DType::f32) {
        const auto src = delta.f32();
        for (std::size_t i = 0; i < n; ++i) {
            impl.grad.f32[i] += src[i];
        }
    } else {
        const auto src = delta.f64();
        for (std::size_t i = 0; i < n; ++i) {
            impl.grad.f64[i] += src[i];
        }
    }
}

} // namespace seam
