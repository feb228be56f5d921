#include "seam/sparse.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>
#include <vector>

#include "seam/data.hpp"
#include "seam/errors.hpp"
#include "seam/rng.hpp"
#include "seam/serialize.hpp"

namespace seam::sparse {

namespace {

template <typename T> std::span<const T> view(const Tensor& t) {
    if constexpr (std::is_same_v<T, float>) {
        return t.f32();
    } else {
        return t.f64();
    }
}

template <typename T> Tensor tensor_of(Shape shape, std::vector<T> values) {
    if constexpr (std::is_same_v<T, float>) {
        return Tensor::from_f32(std::move(shape), std::move(values));
    } else {
        return Tensor::from_f64(std::move(shape), std::move(values));
    }
}

template <typename T> SparseTensor sparsify_impl(const Tensor& dense) {
    SparseTensor s;
    s.shape = dense.shape();
    s.dtype = dense.dtype();
    const auto rows = s.shape[0];
    const auto width = numel(s.shape) / rows;
    const auto dv = view<T>(dense);
    std::vector<T> vals;
    s.offsets.reserve(static_cast<std::size_t>(rows) + 1);
    s.offsets.push_back(0);
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = dv.data() + r * width;
        for (std::int64_t c = 0; c < width; ++c) {
            if (row[c] != T(0)) {
                s.indices.push_back(c);
                vals.push_back(row[c]);
            }
        }
        s.offsets.push_back(static_cast<std::int64_t>(s.indices.size()));
    }
    if (!vals.empty()) {
        const auto count = static_cast<std::int64_t>(vals.size());
        s.values = tensor_of<T>({count}, std::move(vals));
    }
    return s;
}

template <typename T> Tensor densify_impl(const SparseTensor& t) {
    Tensor out = Tensor::zeros(t.shape, t.dtype);
    if (t.nnz() == 0) {
        return out;
    }
    auto ov = [&]() -> std::span<T> {
        if constexpr (std::is_same_v<T, float>) {
            return out.f32_mut();
        } else {
            return out.f64_mut();
        }
    }();
    const auto vv = view<T>(t.values);
    const auto width = t.row_width();
    for (std::size_t r = 0; r + 1 < t.offsets.size(); ++r) {
        for (auto k = t.offsets[r]; k < t.offsets[r + 1]; ++k) {
            ov[r * static_cast<std::size_t>(width) +
               static_cast<std::size_t>(t.indices[static_cast<std::size_t>(k)])] =
                vv[static_cast<std::size_t>(k)];
        }
    }
    return out;
}

/// One inference pass over raw buffers; no graph, no gradients. `shapes`
/// is the per-sample shape after every layer.
template <typename T>
std::vector<T> run_layers(const SparseModel& sm, const std::vector<Shape>& shapes,
                          std::vector<T> cur, std::int64_t batch) {
    Shape in_shape = sm.arch.input_shape;
    for (std::size_t li = 0; li < sm.layers.size(); ++li) {
        const auto& layer = sm.layers[li];
        const auto& spec = layer.spec;
        const Shape& out_shape = shapes[li];
        switch (spec.kind) {
        case model::LayerKind::dense: {
            const auto in = spec.in, out = spec.out;
            const auto vv = layer.weight.nnz() ? view<T>(layer.weight.values) : std::span<const T>{};
            const auto bv = view<T>(layer.bias);
            std::vector<T> next(static_cast<std::size_t>(batch * out));
            for (std::int64_t b = 0; b < batch; ++b) {
                const T* xr = cur.data() + b * in;
                T* yr = next.data() + b * out;
                for (std::int64_t o = 0; o < out; ++o) {
                    T acc(0);
                    for (auto k = layer.weight.offsets[static_cast<std::size_t>(o)];
                         k < layer.weight.offsets[static_cast<std::size_t>(o) + 1]; ++k) {
                        acc += vv[static_cast<std::size_t>(k)] *
                               xr[layer.weight.indices[static_cast<std::size_t>(k)]];
                    }
                    yr[o] = acc + bv[static_cast<std::size_t>(o)];
                }
            }
            cur = std::move(next);
            break;
        }
        case model::LayerKind::conv2d: {
            const auto ic = in_shape[0], h = in_shape[1], w = in_shape[2];
            const auto oc = out_shape[0], ho = out_shape[1], wo = out_shape[2];
            const auto pad = spec.padding, stride = spec.stride;
            const auto hp = h + 2 * pad, wp = w + 2 * pad;
            const auto kh = spec.kh, kw = spec.kw;
            const auto vv = layer.weight.nnz() ? view<T>(layer.weight.values) : std::span<const T>{};
            const auto bv = view<T>(layer.bias);
            std::vector<T> padded(static_cast<std::size_t>(ic * hp * wp));
            std::vector<T> next(static_cast<std::size_t>(batch * oc * ho * wo));
            for (std::int64_t b = 0; b < batch; ++b) {
                std::fill(padded.begin(), padded.end(), T(0));
                const T* src = cur.data() + b * ic * h * w;
                for (std::int64_t c = 0; c < ic; ++c) {
                    for (std::int64_t y = 0; y < h; ++y) {
                        std::memcpy(padded.data() + (c * hp + y + pad) * wp + pad,
                                    src + (c * h + y) * w, static_cast<std::size_t>(w) * sizeof(T));
                    }
                }
                T* out = next.data() + b * oc * ho * wo;
                for (std::int64_t f = 0; f < oc; ++f) {
                    T* plane = out + f * ho * wo;
                    std::fill(plane, plane + ho * wo, T(0));
                    for (auto k = layer.weight.offsets[static_cast<std::size_t>(f)];
                         k < layer.weight.offsets[static_cast<std::size_t>(f) + 1]; ++k) {
                        const auto coord = layer.weight.indices[static_cast<std::size_t>(k)];
                        const auto ci = coord / (kh * kw);
                        const auto dy = coord / kw % kh;
                        const auto dx = coord % kw;
                        const T v = vv[static_cast<std::size_t>(k)];
                        for (std::int64_t oy = 0; oy < ho; ++oy) {
                            const T* prow = padded.data() + (ci * hp + oy * stride + dy) * wp + dx;
                            T* orow = plane + oy * wo;
                            for (std::int64_t ox = 0; ox < wo; ++ox) {
                                orow[ox] += v * prow[ox * stride];
                            }
                        }
                    }
                    const T fb = bv[static_cast<std::size_t>(f)];
                    for (std::int64_t p = 0; p < ho * wo; ++p) {
                        plane[p] += fb;
                    }
                }
            }
            cur = std::move(next);
            break;
        }
        case model::LayerKind::relu:
            for (auto& v : cur) {
                if (!(v > T(0)) && !std::isnan(v)) {
                    v = T(0);
                }
            }
            break;
        case model::LayerKind::maxpool2d: {
            const auto c = in_shape[0], h = in_shape[1], w = in_shape[2];
            const auto ho = out_shape[1], wo = out_shape[2];
            const auto k = spec.pool, stride = spec.pool_stride;
            std::vector<T> next(static_cast<std::size_t>(batch * c * ho * wo));
            for (std::int64_t nc = 0; nc < batch * c; ++nc) {
                const T* plane = cur.data() + nc * h * w;
                T* out = next.data() + nc * ho * wo;
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        T best = plane[oy * stride * w + ox * stride];
                        for (int dy = 0; dy < k; ++dy) {
                            for (int dx = 0; dx < k; ++dx) {
                                const T v = plane[(oy * stride + dy) * w + ox * stride + dx];
                                best = v > best ? v : best;
                            }
                        }
                        out[oy * wo + ox] = best;
                    }
                }
            }
            cur = std::move(next);
            break;
        }
        case model::LayerKind::dropout:
        case model::LayerKind::flatten:
            break;
        }
        in_shape = out_shape;
    }
    if (sm.head) {
        const auto in = sm.head->n(), out = sm.head->k();
        const auto wv = view<T>(sm.head->weight);
        const auto bv = view<T>(sm.head->bias);
        std::vector<T> next(static_cast<std::size_t>(batch * out));
        for (std::int64_t b = 0; b < batch; ++b) {
            const T* xr = cur.data() + b * in;
            T* yr = next.data() + b * out;
            for (std::int64_t o = 0; o < out; ++o) {
                T acc(0);
                const T* wr = wv.data() + o * in;
                for (std::int64_t i = 0; i < in; ++i) {
                    acc += wr[i] * xr[i];
                }
                yr[o] = acc + bv[static_cast<std::size_t>(o)];
            }
        }
        cur = std::move(next);
    }
    return cur;
}

std::int64_t conv_positions(const Shape& out_shape) { return out_shape[1] * out_shape[2]; }

std::int64_t nonzero_count(const Tensor& w) {
    std::int64_t n = 0;
    const auto total = numel(w.shape());
    for (std::int64_t i = 0; i < total; ++i) {
        n += w.at(i) != 0.0 ? 1 : 0;
    }
    return n;
}

void append_row(FlopReport& rep, std::size_t layer_index, const char* kind, std::int64_t flops) {
    rep.rows.push_back({"L" + std::to_string(layer_index) + "." + kind, kind, flops});
    rep.total += flops;
}

FlopReport count_impl(const model::ArchitectureDescriptor& arch,
                      const model::ModelGraph* params_of, bool count_zeros) {
    const auto chain = arch.shape_chain();
    FlopReport rep;
    rep.count_zeros = count_zeros;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& l = arch.layers[i];
        if (l.kind == model::LayerKind::dense) {
            const std::int64_t weights =
                count_zeros ? l.in * l.out : nonzero_count(params_of->params[i].weight);
            append_row(rep, i, "dense", weights);
        } else if (l.kind == model::LayerKind::conv2d) {
            const std::int64_t weights =
                count_zeros ? l.in * l.out * l.kh * l.kw
                            : nonzero_count(params_of->params[i].weight);
            append_row(rep, i, "conv2d", weights * conv_positions(chain[i]));
        }
    }
    if (params_of && params_of->head) {
        const auto& head = *params_of->head;
        const std::int64_t weights =
            count_zeros ? head.k() * head.n() : nonzero_count(head.weight);
        rep.rows.push_back({"head.dense", "dense", weights});
        rep.total += weights;
    }
    return rep;
}

double mean_of(const std::vector<double>& xs) {
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double stddev_of(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) {
        return 0.0;
    }
    double acc = 0.0;
    for (double x : xs) {
        acc += (x - mean) * (x - mean);
    }
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

/// Times fn over cfg.repetitions after cfg.warmup untimed passes.
LatencyStats time_path(const std::function<void()>& fn, const BenchmarkConfig& cfg) {
    for (int i = 0; i < cfg.warmup; ++i) {
        fn();
    }
    std::vector<double> ms(static_cast<std::size_t>(cfg.repetitions));
    for (int i = 0; i < cfg.repetitions; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        ms[static_cast<std::size_t>(i)] =
            std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    LatencyStats s;
    s.mean_ms = mean_of(ms);
    s.stddev_ms = stddev_of(ms, s.mean_ms);
    return s;
}

/// Contiguous row ranges of near-equal size for data-parallel splitting.
std::vector<std::pair<std::int64_t, std::int64_t>> row_chunks(std::int64_t rows, int threads) {
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    const auto n = std::min<std::int64_t>(threads, rows);
    for (std::int64_t i = 0; i < n; ++i) {
        const auto lo = rows * i / n, hi = rows * (i + 1) / n;
        if (hi > lo) {
            out.emplace_back(lo, hi);
        }
    }
    return out;
}

} // namespace

std::int64_t SparseTensor::row_width() const {
    return shape.empty() || shape[0] == 0 ? 0 : numel(shape) / shape[0];
}

void SparseTensor::validate() const {
    if (shape.size() != 2 && shape.size() != 4) {
        throw ValidationError("sparse tensor: expected rank 2 or 4, got " + shape_str(shape));
    }
    if (static_cast<std::int64_t>(offsets.size()) != shape[0] + 1 || offsets.front() != 0) {
        throw ValidationError("sparse tensor: offsets do not match " + std::to_string(shape[0]) +
                              " rows");
    }
    const auto width = row_width();
    for (std::size_t r = 0; r + 1 < offsets.size(); ++r) {
        if (offsets[r + 1] < offsets[r]) {
            throw ValidationError("sparse tensor: offsets decrease at row " + std::to_string(r));
        }
        for (auto k = offsets[r]; k < offsets[r + 1]; ++k) {
            const auto idx = indices[static_cast<std::size_t>(k)];
            if (idx < 0 || idx >= width) {
                throw ValidationError("sparse tensor: index " + std::to_string(idx) +
                                      " outside row width " + std::to_string(width));
            }
            if (k > offsets[r] && indices[static_cast<std::size_t>(k - 1)] >= idx) {
                throw ValidationError("sparse tensor: indices not increasing in row " +
                                      std::to_string(r));
            }
        }
    }
    const auto count = offsets.back();
    const bool values_ok = count == 0 ? !values.defined()
                                      : values.defined() && values.shape() == Shape{count} &&
                                            values.dtype() == dtype;
    if (count != static_cast<std::int64_t>(indices.size()) || !values_ok) {
        throw ValidationError("sparse tensor: nnz bookkeeping is inconsistent");
    }
}

SparseTensor sparsify(const Tensor& dense) {
    if (!dense.defined() || (dense.shape().size() != 2 && dense.shape().size() != 4)) {
        throw ShapeError("sparsify: expects a rank-2 or rank-4 weight tensor");
    }
    return dense.dtype() == DType::f32 ? sparsify_impl<float>(dense)
                                       : sparsify_impl<double>(dense);
}

Tensor densify(const SparseTensor& t) {
    t.validate();
    return t.dtype == DType::f32 ? densify_impl<float>(t) : densify_impl<double>(t);
}

DType SparseModel::dtype() const {
    for (const auto& l : layers) {
        if (l.spec.has_params()) {
            return l.weight.dtype;
        }
    }
    return DType::f32;
}

SparseModel to_sparse(const model::ModelGraph& m) {
    m.arch.shape_chain();
    if (m.params.size() != m.arch.layers.size()) {
        throw ValidationError("to_sparse: model carries " + std::to_string(m.params.size()) +
                              " parameter slots for " + std::to_string(m.arch.layers.size()) +
                              " layers");
    }
    SparseModel sm;
    sm.arch = m.arch;
    sm.layers.reserve(m.arch.layers.size());
    for (std::size_t i = 0; i < m.arch.layers.size(); ++i) {
        SparseLayer l;
        l.spec = m.arch.layers[i];
        if (l.spec.has_params()) {
            l.weight = sparsify(m.params[i].weight);
            l.bias = m.params[i].bias.clone();
        }
        sm.layers.push_back(std::move(l));
    }
    if (m.head) {
        sm.head = m.head->clone();
    }
    sm.seed = m.seed;
    sm.train_acc = m.train_acc;
    sm.test_acc = m.test_acc;
    sm.extra_metadata = m.extra_metadata;
    return sm;
}

model::ModelGraph densify(const SparseModel& sm) {
    model::ModelGraph m;
    m.arch = sm.arch;
    m.params.resize(sm.layers.size());
    for (std::size_t i = 0; i < sm.layers.size(); ++i) {
        if (sm.layers[i].spec.has_params()) {
            m.params[i].weight = densify(sm.layers[i].weight);
            m.params[i].bias = sm.layers[i].bias.clone();
        }
    }
    if (sm.head) {
        m.head = sm.head->clone();
    }
    m.seed = sm.seed;
    m.train_acc = sm.train_acc;
    m.test_acc = sm.test_acc;
    m.extra_metadata = sm.extra_metadata;
    return m;
}

namespace {

Tensor index_tensor(const std::vector<std::int64_t>& v) {
    std::vector<double> d(v.begin(), v.end());
    const auto count = static_cast<std::int64_t>(d.size());
    return Tensor::from_f64({count}, d);
}

std::vector<std::int64_t> index_vector(const Tensor& t, const std::string& what) {
    std::vector<std::int64_t> out;
    out.reserve(static_cast<std::size_t>(t.size()));
    for (const double d : t.f64()) {
        if (!(std::abs(d) < 9007199254740992.0) || d != std::floor(d)) {
            throw ValidationError(what + " holds a non-integral entry");
        }
        out.push_back(static_cast<std::int64_t>(d));
    }
    return out;
}

} // namespace

void save_sparse_model(const SparseModel& sm, const std::string& path) {
    io::TensorFile tf;
    tf.metadata = sm.extra_metadata.is_object() ? sm.extra_metadata : nlohmann::json::object();
    tf.metadata["storage"] = "csr";
    tf.metadata["n_classes"] = sm.output_width();
    tf.metadata["input_shape"] = sm.arch.input_shape;
    tf.metadata["seed"] = sm.seed;
    tf.metadata["arch"] = io::arch_to_json(sm.arch);
    tf.metadata["train_acc"] = sm.train_acc;
    tf.metadata["test_acc"] = sm.test_acc;
    tf.metadata["format_version"] = io::kFormatVersion;
    for (std::size_t i = 0; i < sm.layers.size(); ++i) {
        const auto& layer = sm.layers[i];
        if (!layer.spec.has_params()) {
            continue;
        }
        layer.weight.validate();
        const std::string base = "layer" + std::to_string(i);
        tf.tensors.push_back({base + ".offsets", index_tensor(layer.weight.offsets)});
        if (layer.weight.nnz() > 0) {
            tf.tensors.push_back({base + ".indices", index_tensor(layer.weight.indices)});
            tf.tensors.push_back({base + ".values", layer.weight.values});
        }
        tf.tensors.push_back({base + ".bias", layer.bias});
    }
    if (sm.head) {
        tf.tensors.push_back({"head.weight", sm.head->weight});
        tf.tensors.push_back({"head.bias", sm.head->bias});
    }
    io::write_tensor_file(path, tf);
}

SparseModel load_sparse_model(const std::string& path) {
    const io::TensorFile tf = io::read_tensor_file(path);
    if (!tf.metadata.contains("storage") || tf.metadata["storage"] != "csr") {
        throw ValidationError(path + ": not a sparse model file");
    }
    SparseModel sm;
    try {
        sm.arch = io::arch_from_json(tf.metadata.at("arch"));
        sm.arch.input_shape = tf.metadata.at("input_shape").get<Shape>();
        sm.seed = tf.metadata.at("seed").get<std::uint64_t>();
        sm.train_acc = tf.metadata.at("train_acc").get<double>();
        sm.test_acc = tf.metadata.at("test_acc").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": model metadata incomplete: " + e.what());
    }
    static const char* known[] = {"storage",   "n_classes", "input_shape",    "seed",
                                  "arch",      "train_acc", "test_acc",       "format_version"};
    for (const auto& [key, value] : tf.metadata.items()) {
        bool skip = false;
        for (const char* k : known) {
            if (key == k) skip = true;
        }
        if (!skip) {
            sm.extra_metadata[key] = value;
        }
    }

    sm.layers.resize(sm.arch.layers.size());
    for (std::size_t i = 0; i < sm.arch.layers.size(); ++i) {
        const auto& spec = sm.arch.layers[i];
        sm.layers[i].spec = spec;
        if (!spec.has_params()) {
            continue;
        }
        const std::string base = "layer" + std::to_string(i);
        const Tensor* off = tf.find(base + ".offsets");
        const Tensor* b = tf.find(base + ".bias");
        if (!off || !b) {
            throw ValidationError(path + ": missing tensors for " + base);
        }
        SparseTensor st;
        st.shape = spec.kind == model::LayerKind::dense ? Shape{spec.out, spec.in}
                                                        : Shape{spec.out, spec.in, spec.kh, spec.kw};
        st.dtype = b->dtype();
        st.offsets = index_vector(*off, path + ": " + base + ".offsets");
        if (const Tensor* idx = tf.find(base + ".indices")) {
            const Tensor* vals = tf.find(base + ".values");
            if (!vals) {
                throw ValidationError(path + ": " + base + " has indices but no values");
            }
            st.indices = index_vector(*idx, path + ": " + base + ".indices");
            st.values = *vals;
            st.dtype = vals->dtype();
        }
        st.validate();
        sm.layers[i].weight = std::move(st);
        sm.layers[i].bias = *b;
    }
    if (const Tensor* hw = tf.find("head.weight")) {
        const Tensor* hb = tf.find("head.bias");
        if (!hb) {
            throw ValidationError(path + ": head.weight without head.bias");
        }
        sm.head = model::Head{*hw, *hb};
    }
    return sm;
}

Tensor sparse_forward(const SparseModel& sm, const Tensor& x) {
    Shape expected = sm.arch.input_shape;
    expected.insert(expected.begin(), x.defined() && !x.shape().empty() ? x.shape()[0] : 0);
    if (!x.defined() || x.shape() != expected) {
        throw ShapeError("sparse_forward: input " +
                         (x.defined() ? shape_str(x.shape()) : "<undefined>") +
                         " does not match declared shape " + shape_str(sm.arch.input_shape));
    }
    if (x.dtype() != sm.dtype()) {
        throw DTypeError("sparse_forward: input dtype does not match the model");
    }
    const auto shapes = sm.arch.shape_chain();
    const auto batch = x.shape()[0];
    if (x.dtype() == DType::f32) {
        auto xv = x.f32();
        auto out = run_layers<float>(sm, shapes, std::vector<float>(xv.begin(), xv.end()), batch);
        return Tensor::from_f32({batch, sm.output_width()}, std::move(out));
    }
    auto xv = x.f64();
    auto out = run_layers<double>(sm, shapes, std::vector<double>(xv.begin(), xv.end()), batch);
    return Tensor::from_f64({batch, sm.output_width()}, std::move(out));
}

nlohmann::json FlopReport::to_json() const {
    auto rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        rows_json.push_back({{"layer", r.layer}, {"kind", r.kind}, {"flops", r.flops}});
    }
    return nlohmann::json{{"convention", convention},
                          {"count_zeros", count_zeros},
                          {"total", total},
                          {"rows", rows_json}};
}

FlopReport count_flops(const model::ArchitectureDescriptor& arch) {
    return count_impl(arch, nullptr, true);
}

FlopReport count_flops(const model::ModelGraph& m, bool count_zeros) {
    if (m.params.size() != m.arch.layers.size()) {
        throw ValidationError("count_flops: model carries " + std::to_string(m.params.size()) +
                              " parameter slots for " + std::to_string(m.arch.layers.size()) +
                              " layers");
    }
    return count_impl(m.arch, &m, count_zeros);
}

std::string flops_csv(const FlopReport& all_weights, const FlopReport& nonzero_only) {
    if (all_weights.rows.size() != nonzero_only.rows.size()) {
        throw ValidationError("flops_csv: reports describe different layer sequences");
    }
    std::ostringstream os;
    os << "layer,kind,flops_dense,flops_sparse\n";
    for (std::size_t i = 0; i < all_weights.rows.size(); ++i) {
        const auto& a = all_weights.rows[i];
        const auto& b = nonzero_only.rows[i];
        if (a.layer != b.layer || a.kind != b.kind) {
            throw ValidationError("flops_csv: reports describe different layer sequences");
        }
        os << a.layer << ',' << a.kind << ',' << a.flops << ',' << b.flops << '\n';
    }
    return os.str();
}

void BenchmarkConfig::validate() const {
    if (batch_size < 1) {
        throw ValidationError("benchmark batch_size must be >= 1");
    }
    if (repetitions < 10) {
        throw ValidationError("benchmark repetitions must be >= 10");
    }
    if (warmup < 0) {
        throw ValidationError("benchmark warmup must be >= 0");
    }
    if (threads < 1) {
        throw ValidationError("benchmark threads must be >= 1");
    }
}

nlohmann::json BenchmarkResult::to_json() const {
    return nlohmann::json{
        {"batch_size", batch_size},
        {"repetitions", repetitions},
        {"threads", threads},
        {"dense", {{"mean_ms", dense.mean_ms}, {"stddev_ms", dense.stddev_ms}}},
        {"sparse", {{"mean_ms", sparse.mean_ms}, {"stddev_ms", sparse.stddev_ms}}},
        {"speedup", speedup()}};
}

BenchmarkResult benchmark(const model::ModelGraph& dense_model, const SparseModel& sparse_model,
                          const BenchmarkConfig& cfg) {
    cfg.validate();
    if (dense_model.arch.input_shape != sparse_model.arch.input_shape) {
        throw ShapeError("benchmark: models disagree on the input shape");
    }
    Rng rng(cfg.seed);
    Shape xshape = dense_model.arch.input_shape;
    xshape.insert(xshape.begin(), cfg.batch_size);
    Tensor x = Tensor::uniform(xshape, 0.0, 1.0, rng, dense_model.dtype());
    Tensor xs = x.dtype() == sparse_model.dtype() ? x : x.astype(sparse_model.dtype());

    const auto chunks = row_chunks(cfg.batch_size, cfg.threads);
    std::vector<Tensor> dense_in, sparse_in;
    for (const auto& [lo, hi] : chunks) {
        std::vector<std::size_t> rows(static_cast<std::size_t>(hi - lo));
        std::iota(rows.begin(), rows.end(), static_cast<std::size_t>(lo));
        dense_in.push_back(data::gather_rows(x, rows));
        sparse_in.push_back(data::gather_rows(xs, rows));
    }

    volatile double sink = 0.0;
    auto run_split = [&](const std::vector<Tensor>& in, auto&& call) {
        if (in.size() == 1) {
            sink = sink + call(in[0]).at(0);
            return;
        }
        std::vector<std::thread> workers;
        std::vector<double> firsts(in.size(), 0.0);
        for (std::size_t i = 0; i < in.size(); ++i) {
            workers.emplace_back([&, i] { firsts[i] = call(in[i]).at(0); });
        }
        for (auto& w : workers) {
            w.join();
        }
        sink = sink + firsts[0];
    };

    BenchmarkResult out;
    out.batch_size = cfg.batch_size;
    out.repetitions = cfg.repetitions;
    out.threads = static_cast<int>(chunks.size());
    out.dense = time_path(
        [&] { run_split(dense_in, [&](const Tensor& t) { return model::forward(dense_model, t); }); },
        cfg);
    out.sparse = time_path(
        [&] { run_split(sparse_in, [&](const Tensor& t) { return sparse_forward(sparse_model, t); }); },
        cfg);
    (void)sink;
    return out;
}

} // namespace seam::sparse
