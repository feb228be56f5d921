#include "seam/masking.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <type_traits>

#include "seam/errors.hpp"
#include "seam/ops.hpp"
#include "seam/serialize.hpp"

namespace seam::masking {

namespace {

template <typename T>
std::span<const T> view(const Tensor& t) {
    if constexpr (std::is_same_v<T, double>) {
        return t.f64();
    } else {
        return t.f32();
    }
}

template <typename T>
std::span<T> view_mut(Tensor& t) {
    if constexpr (std::is_same_v<T, double>) {
        return t.f64_mut();
    } else {
        return t.f32_mut();
    }
}

void check_congruent(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                     const char* what) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(b.size()) +
                         " tensors, got " + std::to_string(a.size()));
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].shape() != b[i].shape()) {
            throw ShapeError(std::string(what) + ": tensor " + std::to_string(i) +
                             " has shape " + shape_str(a[i].shape()) + ", expected " +
                             shape_str(b[i].shape()));
        }
        if (a[i].dtype() != b[i].dtype()) {
            throw DTypeError(std::string(what) + ": tensor " + std::to_string(i) +
                             " dtype mismatch");
        }
    }
}

template <typename T>
Tensor binarize_one(const Tensor& r) {
    Tensor out = Tensor::zeros(r.shape(), r.dtype());
    auto src = view<T>(r);
    auto dst = view_mut<T>(out);
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = src[i] > T(0) ? T(1) : T(0);
    }
    return out;
}

template <typename T>
double sum_of(const Tensor& t) {
    double acc = 0.0;
    for (T v : view<T>(t)) acc += static_cast<double>(v);
    return acc;
}

} // namespace

RelevanceMask RelevanceMask::clone() const {
    RelevanceMask out;
    out.total = total;
    out.relevance.reserve(relevance.size());
    for (const auto& t : relevance) out.relevance.push_back(t.clone());
    return out;
}

BinaryMask BinaryMask::clone() const {
    BinaryMask out;
    out.total = total;
    out.masks.reserve(masks.size());
    for (const auto& t : masks) out.masks.push_back(t.clone());
    return out;
}

RelevanceMask init_relevance(const model::ModelGraph& m) {
    auto weights = m.maskable_weights();
    if (weights.empty()) {
        throw ValidationError("init_relevance: model has no maskable weights");
    }
    RelevanceMask r;
    r.relevance.reserve(weights.size());
    for (const auto& w : weights) {
        r.relevance.push_back(Tensor::full(w.shape(), 1.0, w.dtype()));
        r.total += numel(w.shape());
    }
    return r;
}

BinaryMask binarize(const RelevanceMask& r) {
    if (r.relevance.empty()) {
        throw ValidationError("binarize: empty relevance mask");
    }
    BinaryMask out;
    out.total = r.total;
    out.masks.reserve(r.relevance.size());
    for (const auto& t : r.relevance) {
        out.masks.push_back(t.dtype() == DType::f64 ? binarize_one<double>(t)
                                                    : binarize_one<float>(t));
    }
    return out;
}

MaskedContext apply_mask(const model::ModelGraph& m, const BinaryMask& mask,
                         bool track_gradients) {
    auto weights = m.maskable_weights();
    if (weights.empty()) {
        throw ValidationError("apply_mask: model has no maskable weights");
    }
    check_congruent(mask.masks, weights, "apply_mask");

    MaskedContext ctx;
    ctx.mask_leaves = mask.masks;
    ctx.effective_weights.reserve(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        ctx.mask_leaves[i].set_requires_grad(track_gradients);
        ctx.effective_weights.push_back(ops::mul(weights[i], ctx.mask_leaves[i]));
    }
    return ctx;
}

std::vector<Tensor> ste_gradients(const RelevanceMask& r, const std::vector<Tensor>& upstream,
                                  const std::vector<Tensor>& weights) {
    check_congruent(upstream, r.relevance, "ste_gradients: upstream");
    check_congruent(weights, r.relevance, "ste_gradients: weights");
    std::vector<Tensor> out;
    out.reserve(r.relevance.size());
    for (std::size_t i = 0; i < r.relevance.size(); ++i) {
        out.push_back(ops::mul(upstream[i].detach(), weights[i].detach()));
    }
    return out;
}

double retention_rate(const BinaryMask& m) {
    if (m.masks.empty() || m.total <= 0) {
        throw ValidationError("retention_rate: empty mask");
    }
    double kept = 0.0;
    std::int64_t counted = 0;
    for (const auto& t : m.masks) {
        kept += t.dtype() == DType::f64 ? sum_of<double>(t) : sum_of<float>(t);
        counted += numel(t.shape());
    }
    if (counted != m.total) {
        throw ValidationError("retention_rate: mask total " + std::to_string(m.total) +
                              " does not match element count " + std::to_string(counted));
    }
    return kept / static_cast<double>(m.total);
}

std::vector<Tensor> retention_gradient(const RelevanceMask& r, double alpha, std::int64_t l) {
    if (l <= 0) {
        throw ValidationError("retention_gradient: nonpositive mask size");
    }
    if (l != r.total) {
        throw ValidationError("retention_gradient: mask size " + std::to_string(l) +
                              " does not match relevance total " + std::to_string(r.total));
    }
    if (!std::isfinite(alpha)) {
        throw ValidationError("retention_gradient: alpha must be finite");
    }
    const double g = alpha / static_cast<double>(l);
    std::vector<Tensor> out;
    out.reserve(r.relevance.size());
    for (const auto& t : r.relevance) {
        out.push_back(Tensor::full(t.shape(), g, t.dtype()));
    }
    return out;
}

void save_mask(const BinaryMask& m, const std::string& path) {
    io::TensorFile f;
    f.metadata["kind"] = "mask";
    f.metadata["retention_rate"] = retention_rate(m);
    f.metadata["total"] = m.total;
    f.tensors.reserve(m.masks.size());
    for (std::size_t i = 0; i < m.masks.size(); ++i) {
        f.tensors.push_back({"mask" + std::to_string(i), m.masks[i]});
    }
    io::write_tensor_file(path, f);
}

BinaryMask load_mask(const std::string& path) {
    io::TensorFile f = io::read_tensor_file(path);
    if (!f.metadata.contains("kind") || f.metadata["kind"] != "mask") {
        throw ValidationError("load_mask: " + path + " is not a mask file");
    }
    BinaryMask m;
    m.masks.reserve(f.tensors.size());
    for (std::size_t i = 0; i < f.tensors.size(); ++i) {
        const Tensor* found = f.find("mask" + std::to_string(i));
        if (!found) {
            throw ValidationError("load_mask: missing tensor mask" + std::to_string(i));
        }
        const Tensor& t = *found;
        auto ok = [&](auto tag) {
            using T = decltype(tag);
            for (T v : view<T>(t)) {
                if (v != T(0) && v != T(1)) return false;
            }
            return true;
        };
        bool valid = t.dtype() == DType::f64 ? ok(double{}) : ok(float{});
        if (!valid) {
            throw ValidationError("load_mask: mask" + std::to_string(i) +
                                  " contains values other than 0 and 1");
        }
        m.masks.push_back(t);
        m.total += numel(t.shape());
    }
    if (m.masks.empty()) {
        throw ValidationError("load_mask: file contains no mask tensors");
    }
    return m;
}

} // namespace seam::masking
