#include "seam/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "seam/autograd.hpp"
#include "seam/errors.hpp"
#include "seam/ops.hpp"

namespace seam::model {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    }
    throw ValidationError("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& name) {
    if (name == "dense") return LayerKind::dense;
    if (name == "conv2d") return LayerKind::conv2d;
    if (name == "relu") return LayerKind::relu;
    if (name == "maxpool2d") return LayerKind::maxpool2d;
    if (name == "dropout") return LayerKind::dropout;
    if (name == "flatten") return LayerKind::flatten;
    throw ValidationError("unknown layer kind: " + name);
}

LayerSpec LayerSpec::dense(std::int64_t in, std::int64_t out) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.in = in;
    s.out = out;
    s.maskable = true;
    return s;
}

LayerSpec LayerSpec::conv(std::int64_t in_ch, std::int64_t out_ch, int k, int stride,
                          int padding) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in = in_ch;
    s.out = out_ch;
    s.kh = k;
    s.kw = k;
    s.stride = stride;
    s.padding = padding;
    s.maskable = true;
    return s;
}

LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = LayerKind::relu;
    return s;
}

LayerSpec LayerSpec::maxpool(int k, int stride) {
    LayerSpec s;
    s.kind = LayerKind::maxpool2d;
    s.pool = k;
    s.pool_stride = stride;
    return s;
}

LayerSpec LayerSpec::dropout(double rate) {
    LayerSpec s;
    s.kind = LayerKind::dropout;
    s.rate = rate;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    return s;
}

std::vector<Shape> ArchitectureDescriptor::shape_chain() const {
    if (layers.empty()) {
        throw ShapeError(name + ": empty layer list");
    }
    std::vector<Shape> chain;
    Shape cur = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string where = name + " layer " + std::to_string(i) + " (" +
                                  layer_kind_name(l.kind) + ")";
        switch (l.kind) {
        case LayerKind::dense:
            if (cur.size() != 1 || cur[0] != l.in) {
                throw ShapeError(where + ": expects " + std::to_string(l.in) +
                                 " features, got " + shape_str(cur));
            }
            cur = {l.out};
            break;
        case LayerKind::conv2d: {
            if (cur.size() != 3 || cur[0] != l.in) {
                throw ShapeError(where + ": expects " + std::to_string(l.in) +
                                 " channels, got " + shape_str(cur));
            }
            const std::int64_t ho = (cur[1] + 2 * l.padding - l.kh) / l.stride + 1;
            const std::int64_t wo = (cur[2] + 2 * l.padding - l.kw) / l.stride + 1;
            if (l.kh > cur[1] + 2 * l.padding || l.kw > cur[2] + 2 * l.padding || ho <= 0 ||
                wo <= 0) {
                throw ShapeError(where + ": degenerate output for input " + shape_str(cur));
            }
            cur = {l.out, ho, wo};
            break;
        }
        case LayerKind::relu:
        case LayerKind::dropout:
            break;
        case LayerKind::maxpool2d: {
            if (cur.size() != 3) {
                throw ShapeError(where + ": expects [C,H,W], got " + shape_str(cur));
            }
            if (l.pool > cur[1] || l.pool > cur[2]) {
                throw ShapeError(where + ": window exceeds input " + shape_str(cur));
            }
            cur = {cur[0], (cur[1] - l.pool) / l.pool_stride + 1,
                   (cur[2] - l.pool) / l.pool_stride + 1};
            break;
        }
        case LayerKind::flatten:
            cur = {numel(cur)};
            break;
        }
        chain.push_back(cur);
    }
    if (cur != Shape{n_classes}) {
        throw ShapeError(name + ": final layer emits " + shape_str(cur) + ", expected [" +
                         std::to_string(n_classes) + "]");
    }
    return chain;
}

ArchitectureDescriptor ArchitectureDescriptor::small_cnn_mnist() {
    ArchitectureDescriptor a;
    a.name = "small_cnn_mnist";
    a.input_shape = {1, 28, 28};
    a.n_classes = 10;
    a.layers = {
        LayerSpec::conv(1, 8, 3), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
        LayerSpec::conv(8, 16, 3), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
        LayerSpec::conv(16, 32, 3), LayerSpec::relu(),
        LayerSpec::conv(32, 32, 3), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
        LayerSpec::flatten(),
        LayerSpec::dense(32 * 3 * 3, 64), LayerSpec::relu(),
        LayerSpec::dense(64, 10),
    };
    a.shape_chain();
    return a;
}

ArchitectureDescriptor ArchitectureDescriptor::vgg16_32() {
    ArchitectureDescriptor a;
    a.name = "vgg16_32";
    a.input_shape = {3, 32, 32};
    a.n_classes = 10;
    const int plan[5][3] = {{64, 64, 0}, {128, 128, 0}, {256, 256, 256}, {512, 512, 512},
                            {512, 512, 512}};
    std::int64_t ch = 3;
    for (const auto& block : plan) {
        for (int width : block) {
            if (width == 0) {
                continue;
            }
            a.layers.push_back(LayerSpec::conv(ch, width, 3));
            a.layers.push_back(LayerSpec::relu());
            ch = width;
        }
        a.layers.push_back(LayerSpec::maxpool(2, 2));
    }
    a.layers.push_back(LayerSpec::flatten());
    a.layers.push_back(LayerSpec::dense(512, 512));
    a.layers.push_back(LayerSpec::relu());
    a.layers.push_back(LayerSpec::dense(512, 512));
    a.layers.push_back(LayerSpec::relu());
    a.layers.push_back(LayerSpec::dense(512, 10));
    a.shape_chain();
    return a;
}

ArchitectureDescriptor ArchitectureDescriptor::by_name(const std::string& name) {
    if (name == "small_cnn_mnist") {
        return small_cnn_mnist();
    }
    if (name == "vgg16_32") {
        return vgg16_32();
    }
    throw ValidationError("unknown architecture preset: " + name);
}

std::vector<std::string> ArchitectureDescriptor::preset_names() {
    return {"small_cnn_mnist", "vgg16_32"};
}

namespace {

double glorot_limit(const LayerSpec& l) {
    double fan_in, fan_out;
    if (l.kind == LayerKind::dense) {
        fan_in = static_cast<double>(l.in);
        fan_out = static_cast<double>(l.out);
    } else {
        fan_in = static_cast<double>(l.in * l.kh * l.kw);
        fan_out = static_cast<double>(l.out * l.kh * l.kw);
    }
    return std::sqrt(6.0 / (fan_in + fan_out));
}

Shape weight_shape(const LayerSpec& l) {
    return l.kind == LayerKind::dense ? Shape{l.out, l.in} : Shape{l.out, l.in, l.kh, l.kw};
}

} // namespace

Head Head::random(std::int64_t k, std::int64_t n, Rng& rng, DType dt) {
    if (k < 2) {
        throw ValidationError("head: needs at least 2 outputs, got " + std::to_string(k));
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(k + n));
    Head h;
    h.weight = Tensor::uniform({k, n}, -limit, limit, rng, dt);
    h.bias = Tensor::zeros({k}, dt);
    return h;
}

Head Head::clone() const {
    Head h;
    h.weight = weight.clone();
    h.bias = bias.clone();
    return h;
}

ModelGraph init_model(const ArchitectureDescriptor& arch, std::uint64_t seed, DType dt) {
    arch.shape_chain();
    ModelGraph m;
    m.arch = arch;
    m.seed = seed;
    m.params.resize(arch.layers.size());
    Rng rng(seed);
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& l = arch.layers[i];
        if (!l.has_params()) {
            continue;
        }
        const double limit = glorot_limit(l);
        m.params[i].weight = Tensor::uniform(weight_shape(l), -limit, limit, rng, dt);
        m.params[i].bias = Tensor::zeros({l.out}, dt);
    }
    return m;
}

std::vector<Tensor> ModelGraph::maskable_weights() const {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        if (arch.layers[i].maskable) {
            out.push_back(params[i].weight);
        }
    }
    return out;
}

std::int64_t ModelGraph::maskable_count() const {
    std::int64_t n = 0;
    for (const auto& w : maskable_weights()) {
        n += w.size();
    }
    return n;
}

std::vector<Tensor> ModelGraph::trainable_params(bool include_head) const {
    std::vector<Tensor> out;
    for (const auto& p : params) {
        if (p.weight.defined()) {
            out.push_back(p.weight);
        }
        if (p.bias.defined()) {
            out.push_back(p.bias);
        }
    }
    if (include_head && head) {
        out.push_back(head->weight);
        out.push_back(head->bias);
    }
    return out;
}

ModelGraph ModelGraph::clone() const {
    ModelGraph m;
    m.arch = arch;
    m.seed = seed;
    m.train_acc = train_acc;
    m.test_acc = test_acc;
    m.extra_metadata = extra_metadata;
    m.params.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].weight.defined()) {
            m.params[i].weight = params[i].weight.clone();
        }
        if (params[i].bias.defined()) {
            m.params[i].bias = params[i].bias.clone();
        }
    }
    if (head) {
        m.head = head->clone();
    }
    return m;
}

ModelGraph ModelGraph::astype(DType dt) const {
    ModelGraph m = clone();
    for (auto& p : m.params) {
        if (p.weight.defined()) {
            p.weight = p.weight.astype(dt);
        }
        if (p.bias.defined()) {
            p.bias = p.bias.astype(dt);
        }
    }
    if (m.head) {
        m.head->weight = m.head->weight.astype(dt);
        m.head->bias = m.head->bias.astype(dt);
    }
    return m;
}

DType ModelGraph::dtype() const {
    for (const auto& p : params) {
        if (p.weight.defined()) {
            return p.weight.dtype();
        }
    }
    return DType::f32;
}

namespace {

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
}

void fnv_tensor(std::uint64_t& h, const Tensor& t) {
    if (!t.defined()) {
        return;
    }
    if (t.dtype() == DType::f32) {
        fnv_bytes(h, t.f32().data(), t.f32().size() * sizeof(float));
    } else {
        fnv_bytes(h, t.f64().data(), t.f64().size() * sizeof(double));
    }
}

} // namespace

std::uint64_t ModelGraph::param_checksum() const {
    std::uint64_t h = 14695981039346656037ULL;
    for (const auto& p : params) {
        fnv_tensor(h, p.weight);
        fnv_tensor(h, p.bias);
    }
    if (head) {
        fnv_tensor(h, head->weight);
        fnv_tensor(h, head->bias);
    }
    return h;
}

Tensor forward(const ModelGraph& m, const Tensor& x, const ForwardOptions& opts) {
    Shape expected = m.arch.input_shape;
    expected.insert(expected.begin(), x.defined() && !x.shape().empty() ? x.shape()[0] : 0);
    if (!x.defined() || x.shape() != expected) {
        throw ShapeError("forward: input " + (x.defined() ? shape_str(x.shape()) : "<undefined>") +
                         " does not match declared shape " + shape_str(m.arch.input_shape));
    }

    // Position of the classifier for the optional extra dropout: the head
    // when attached, else the last parametered layer.
    std::ptrdiff_t classifier_layer = -1;
    if (opts.classifier_dropout > 0.0 && (!m.head || !opts.apply_head)) {
        for (std::size_t i = 0; i < m.arch.layers.size(); ++i) {
            if (m.arch.layers[i].has_params()) {
                classifier_layer = static_cast<std::ptrdiff_t>(i);
            }
        }
    }

    auto need_rng = [&]() -> Rng& {
        if (!opts.rng) {
            throw ValidationError("forward: training-mode dropout requires an rng");
        }
        return *opts.rng;
    };

    Tensor cur = x;
    std::size_t mask_i = 0;
    for (std::size_t i = 0; i < m.arch.layers.size(); ++i) {
        const auto& l = m.arch.layers[i];
        if (opts.classifier_dropout > 0.0 && static_cast<std::ptrdiff_t>(i) == classifier_layer &&
            opts.training) {
            cur = ops::dropout(cur, opts.classifier_dropout, true, need_rng());
        }
        switch (l.kind) {
        case LayerKind::dense: {
            Tensor w = m.params[i].weight;
            if (l.maskable && opts.maskable_override) {
                w = (*opts.maskable_override)[mask_i];
            }
            cur = ops::linear(cur, w, m.params[i].bias);
            break;
        }
        case LayerKind::conv2d: {
            Tensor w = m.params[i].weight;
            if (l.maskable && opts.maskable_override) {
                w = (*opts.maskable_override)[mask_i];
            }
            cur = ops::conv2d(cur, w, m.params[i].bias, l.stride, l.padding);
            break;
        }
        case LayerKind::relu:
            cur = ops::relu(cur);
            break;
        case LayerKind::maxpool2d:
            cur = ops::maxpool2d(cur, l.pool, l.pool_stride);
            break;
        case LayerKind::dropout:
            cur = opts.training ? ops::dropout(cur, l.rate, true, need_rng()) : cur;
            break;
        case LayerKind::flatten:
            cur = ops::flatten(cur);
            break;
        }
        if (l.maskable) {
            ++mask_i;
        }
    }
    if (opts.maskable_override && mask_i != opts.maskable_override->size()) {
        throw ShapeError("forward: " + std::to_string(opts.maskable_override->size()) +
                         " override tensors for " + std::to_string(mask_i) + " maskable layers");
    }
    if (m.head && opts.apply_head) {
        if (opts.classifier_dropout > 0.0 && opts.training) {
            cur = ops::dropout(cur, opts.classifier_dropout, true, need_rng());
        }
        cur = ops::linear(cur, m.head->weight, m.head->bias);
    }
    return cur;
}

ModelGraph attach_head(const ModelGraph& m, const Head& head) {
    if (head.n() != m.output_width()) {
        throw ShapeError("attach_head: head expects " + std::to_string(head.n()) +
                         " inputs, model emits " + std::to_string(m.output_width()));
    }
    if (m.head) {
        throw ValidationError("attach_head: model already has a head");
    }
    ModelGraph out = m.clone();
    out.head = head.clone();
    out.train_acc = -1.0;
    out.test_acc = -1.0;
    return out;
}

ModelGraph replace_classifier(const ModelGraph& m, std::int64_t k, std::uint64_t seed) {
    if (k < 2) {
        throw ValidationError("replace_classifier: k must be >= 2");
    }
    ModelGraph out = m.clone();
    out.head.reset();
    std::ptrdiff_t last = -1;
    for (std::size_t i = 0; i < out.arch.layers.size(); ++i) {
        if (out.arch.layers[i].kind == LayerKind::dense) {
            last = static_cast<std::ptrdiff_t>(i);
        }
    }
    if (last < 0) {
        throw ValidationError("replace_classifier: model has no dense classifier layer");
    }
    auto& spec = out.arch.layers[static_cast<std::size_t>(last)];
    spec.out = k;
    out.arch.n_classes = k;
    Rng rng(seed);
    const double limit = glorot_limit(spec);
    out.params[static_cast<std::size_t>(last)].weight =
        Tensor::uniform(weight_shape(spec), -limit, limit, rng, m.dtype());
    out.params[static_cast<std::size_t>(last)].bias = Tensor::zeros({k}, m.dtype());
    out.arch.shape_chain();
    out.train_acc = -1.0;
    out.test_acc = -1.0;
    return out;
}

double accuracy(const ModelGraph& m, const data::Dataset& ds, int batch_size) {
    if (ds.size() == 0) {
        throw ValidationError("accuracy: empty dataset");
    }
    const auto width = m.output_width();
    std::int64_t correct = 0;
    for (std::int64_t start = 0; start < ds.size(); start += batch_size) {
        const auto count = std::min<std::int64_t>(batch_size, ds.size() - start);
        std::vector<std::size_t> rows(static_cast<std::size_t>(count));
        for (std::int64_t i = 0; i < count; ++i) {
            rows[static_cast<std::size_t>(i)] = static_cast<std::size_t>(start + i);
        }
        Tensor xb = data::gather_rows(ds.images, rows);
        if (xb.dtype() != m.dtype()) {
            xb = xb.astype(m.dtype());
        }
        const auto pred = ops::argmax_rows(forward(m, xb));
        for (std::int64_t i = 0; i < count; ++i) {
            const int y = ds.labels[static_cast<std::size_t>(start + i)];
            if (y < 0 || y >= width) {
                throw ValidationError("accuracy: label " + std::to_string(y) +
                                      " out of range [0," + std::to_string(width) + ")");
            }
            correct += pred[static_cast<std::size_t>(i)] == y;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

ModelGraph train_original(const ArchitectureDescriptor& arch, const data::Dataset& train,
                          const data::Dataset& test, const TrainConfig& cfg) {
    if (train.size() == 0 || test.size() == 0) {
        throw ValidationError("train_original: empty split");
    }
    if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.lr < 0.0) {
        throw ValidationError("train_original: bad config");
    }
    ModelGraph m = init_model(arch, cfg.seed);
    auto params = m.trainable_params();
    for (auto& p : params) {
        p.set_requires_grad(true);
    }

    Rng rng = Rng(cfg.seed).fork(1);
    std::vector<std::size_t> order(static_cast<std::size_t>(train.size()));
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto end = std::min(order.size(), start + cfg.batch_size);
            const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                order.begin() + static_cast<std::ptrdiff_t>(end));
            Tensor xb = data::gather_rows(train.images, rows);
            std::vector<int> yb;
            yb.reserve(rows.size());
            for (auto r : rows) {
                yb.push_back(train.labels[r]);
            }
            Tensor targets = ops::one_hot(yb, arch.n_classes, m.dtype());
            ForwardOptions fwd;
            fwd.training = true;
            fwd.rng = &rng;
            Tensor loss = ops::softmax_cross_entropy(forward(m, xb, fwd), targets);
            autograd::backward(loss);
            autograd::sgd_step(params, cfg.lr);
        }
    }
    for (auto& p : params) {
        p.set_requires_grad(false);
    }
    m.train_acc = accuracy(m, train);
    m.test_acc = accuracy(m, test);
    return m;
}

} // namespace seam::model
