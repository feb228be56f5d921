#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seam/errors.hpp"
#include "seam/rng.hpp"

namespace seam {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

inline const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }
inline std::size_t dtype_size(DType dt) { return dt == DType::f32 ? 4 : 8; }

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace autograd {
struct Node;
}

namespace detail {

/// Storage holds exactly one of the two buffers, selected by the owning
/// tensor's dtype.
struct Storage {
    std::vector<float> f32;
    std::vector<double> f64;

    bool empty() const { return f32.empty() && f64.empty(); }
    void resize_zero(DType dt, std::size_t n) {
        if (dt == DType::f32) {
            f32.assign(n, 0.0f);
        } else {
            f64.assign(n, 0.0);
        }
    }
    void clear() {
        f32.clear();
        f32.shrink_to_fit();
        f64.clear();
        f64.shrink_to_fit();
    }
};

struct TensorImpl {
    Shape shape;
    DType dtype = DType::f32;
    Storage data;
    bool requires_grad = false;
    Storage grad; // empty until backward touches this tensor
    std::shared_ptr<autograd::Node> node; // producing op; null for leaves
};

} // namespace detail

/// Dense n-dimensional array, row-major, fp32 or fp64. Value type with
/// shared-buffer semantics: copying a Tensor aliases the same storage
/// (clone() gives an independent copy). Gradients live beside the data and
/// are populated by autograd::backward.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, DType dt = DType::f32, bool requires_grad = false);
    static Tensor full(Shape shape, double value, DType dt = DType::f32, bool requires_grad = false);
    static Tensor from_f32(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor from_f64(Shape shape, std::vector<double> values, bool requires_grad = false);
    /// Uniform values in [lo, hi) drawn from rng.
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng, DType dt = DType::f32,
                          bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    DType dtype() const { return impl_->dtype; }
    std::int64_t size() const;

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    std::span<const float> f32() const;
    std::span<float> f32_mut();
    std::span<const double> f64() const;
    std::span<double> f64_mut();

    /// dtype-erased element access by flat index (reads widen to double).
    double at(std::int64_t i) const;
    void set(std::int64_t i, double v);

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    std::span<const float> grad_f32() const;
    std::span<const double> grad_f64() const;
    std::span<float> grad_f32_mut();
    std::span<double> grad_f64_mut();
    double grad_at(std::int64_t i) const;
    /// Gradient as an independent tensor (throws if absent).
    Tensor grad() const;
    void zero_grad();

    /// Independent deep copy; drops graph links and gradient.
    Tensor clone() const;
    /// Same values, no graph link, requires_grad off.
    Tensor detach() const;
    Tensor astype(DType dt) const;

    /// True if every element is finite.
    bool all_finite() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
    static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

  private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Accumulate `delta` (same shape/dtype) into t's grad buffer, allocating
/// zeros on first touch. Used by backward rules.
void accumulate_grad(Tensor& t, const Tensor& delta);

} // namespace seam
