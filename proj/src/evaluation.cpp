#include "seam/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seam/autograd.hpp"
#include "seam/errors.hpp"
#include "seam/ops.hpp"
#include "seam/serialize.hpp"

namespace seam::evaluation {

namespace {

/// Largest value representable in `dt` that does not exceed eps. Casting
/// rounds to nearest, so a rounded-up float must be stepped back one ulp.
double effective_epsilon(double eps, DType dt) {
    if (dt == DType::f64) {
        return eps;
    }
    float f = static_cast<float>(eps);
    while (static_cast<double>(f) > eps) {
        f = std::nextafter(f, 0.0f);
    }
    return static_cast<double>(f);
}

/// Exact |v - c| > eps for IEEE doubles. The rounded difference plus its
/// TwoSum residual equals v - c exactly, and the residual is at most half
/// an ulp of the rounded part, so comparing the pair against eps decides
/// the real-number inequality without error.
bool outside_ball(double v, double c, double eps) {
    const double s = v - c;
    const double t = v - s;
    const double err = (v - (s + t)) + (t - c);
    const double m = std::fabs(s);
    if (m > eps) {
        return true;
    }
    if (m < eps) {
        return false;
    }
    return s >= 0.0 ? err > 0.0 : err < 0.0;
}

template <typename T>
void ascend_and_project(std::span<T> xv, std::span<const T> gv, std::span<const T> cv,
                        double step_size, double eps_eff) {
    const T st = static_cast<T>(step_size);
    const T te = static_cast<T>(eps_eff);
    for (std::size_t i = 0; i < xv.size(); ++i) {
        T v = xv[i];
        const T g = gv[i];
        if (st != T(0) && g != T(0)) {
            v = g > T(0) ? v + st : v - st;
        }
        if (v < T(0)) {
            v = T(0);
        }
        if (v > T(1)) {
            v = T(1);
        }
        const T c = cv[i];
        const T lo = c - te;
        const T hi = c + te;
        if (v < lo) {
            v = lo;
        }
        if (v > hi) {
            v = hi;
        }
        while (outside_ball(static_cast<double>(v), static_cast<double>(c), eps_eff)) {
            v = std::nextafter(v, c);
        }
        xv[i] = v;
    }
}

void check_box(const Tensor& x) {
    bool ok = true;
    if (x.dtype() == DType::f32) {
        for (float v : x.f32()) {
            ok = ok && v >= 0.0f && v <= 1.0f;
        }
    } else {
        for (double v : x.f64()) {
            ok = ok && v >= 0.0 && v <= 1.0;
        }
    }
    if (!ok) {
        throw ValidationError("attack: inputs must lie in [0,1]");
    }
}

using LossFn = std::function<Tensor(const Tensor&)>;

/// Shared attack core: repeat (gradient, sign step, box clamp, ball clamp,
/// exact pull-back) from x. Steps apply to the mutated point; projections
/// always target the original x.
Tensor attack_loop(const LossFn& loss_fn, const Tensor& x, double epsilon, int steps,
                   double step_size) {
    check_box(x);
    const double eps_eff = effective_epsilon(epsilon, x.dtype());
    Tensor clean = x.clone();
    Tensor cur = x.clone();
    for (int it = 0; it < steps; ++it) {
        cur.set_requires_grad(true);
        Tensor loss = loss_fn(cur);
        if (!loss.defined() || !loss.requires_grad()) {
            throw ValidationError("attack: loss does not depend on the input");
        }
        autograd::backward(loss);
        if (!cur.has_grad()) {
            throw ValidationError("attack: input gradient unavailable");
        }
        if (cur.dtype() == DType::f32) {
            ascend_and_project<float>(cur.f32_mut(), cur.grad_f32(), clean.f32(), step_size,
                                      eps_eff);
        } else {
            ascend_and_project<double>(cur.f64_mut(), cur.grad_f64(), clean.f64(), step_size,
                                       eps_eff);
        }
        cur.zero_grad();
        cur.set_requires_grad(false);
    }
    return cur;
}

void check_attack_inputs(const model::ModelGraph& m, const Tensor& x,
                         const std::vector<int>& labels) {
    if (!x.defined() || x.shape().empty() || x.shape()[0] == 0) {
        throw ValidationError("attack: empty input batch");
    }
    if (x.dtype() != m.dtype()) {
        throw DTypeError("attack: input dtype does not match the model");
    }
    if (static_cast<std::int64_t>(labels.size()) != x.shape()[0]) {
        throw ValidationError("attack: " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(x.shape()[0]) + " rows");
    }
    const auto width = m.output_width();
    for (int y : labels) {
        if (y < 0 || y >= width) {
            throw ValidationError("attack: label " + std::to_string(y) + " outside [0," +
                                  std::to_string(width) + ")");
        }
    }
}

void check_pair_set(const AdversarialSet& adv) {
    if (adv.size() == 0) {
        throw ValidationError("empty adversarial set");
    }
    if (static_cast<std::int64_t>(adv.labels.size()) != adv.size()) {
        throw ValidationError("adversarial set: label count does not match rows");
    }
}

void copy_rows_into(Tensor& dst, const Tensor& src, std::int64_t row0) {
    const auto row_elems = numel(dst.shape()) / dst.shape()[0];
    const auto off = static_cast<std::size_t>(row0 * row_elems);
    if (dst.dtype() == DType::f32) {
        auto d = dst.f32_mut();
        auto s = src.f32();
        std::copy(s.begin(), s.end(), d.begin() + static_cast<std::ptrdiff_t>(off));
    } else {
        auto d = dst.f64_mut();
        auto s = src.f64();
        std::copy(s.begin(), s.end(), d.begin() + static_cast<std::ptrdiff_t>(off));
    }
}

std::vector<std::vector<std::int64_t>> label_groups(const model::ModelGraph& m,
                                                    const data::TargetProblem& target) {
    const auto width = m.output_width();
    if (static_cast<std::int64_t>(target.label_map.size()) != width) {
        throw ShapeError("label map covers " + std::to_string(target.label_map.size()) +
                         " classes but the model outputs " + std::to_string(width));
    }
    std::vector<std::vector<std::int64_t>> groups(static_cast<std::size_t>(target.k));
    for (std::size_t i = 0; i < target.label_map.size(); ++i) {
        const int j = target.label_map[i];
        if (j < 0) {
            continue;
        }
        if (j >= target.k) {
            throw ValidationError("label map entry " + std::to_string(j) + " outside [0," +
                                  std::to_string(target.k) + ")");
        }
        groups[static_cast<std::size_t>(j)].push_back(static_cast<std::int64_t>(i));
    }
    for (std::int64_t j = 0; j < target.k; ++j) {
        if (groups[static_cast<std::size_t>(j)].empty()) {
            throw ValidationError("target label " + std::to_string(j) +
                                  " has no source classes in the label map");
        }
    }
    return groups;
}

void require_key(const nlohmann::json& j, const char* key, const char* what) {
    if (!j.contains(key)) {
        throw ValidationError(std::string(what) + ": missing key '" + key + "'");
    }
}

} // namespace

void AttackConfig::validate() const {
    if (kind != "fgsm" && kind != "pgd") {
        throw ValidationError("attack kind must be fgsm or pgd, got '" + kind + "'");
    }
    if (!std::isfinite(epsilon) || epsilon < 0.0) {
        throw ValidationError("attack epsilon must be finite and >= 0");
    }
    if (steps < 1) {
        throw ValidationError("attack steps must be >= 1");
    }
    if (!std::isfinite(step_size) || step_size <= 0.0) {
        throw ValidationError("attack step_size must be finite and > 0");
    }
}

nlohmann::json AttackConfig::to_json() const {
    return nlohmann::json{{"kind", kind},
                          {"epsilon", epsilon},
                          {"steps", steps},
                          {"step_size", step_size},
                          {"seed", seed}};
}

AttackConfig AttackConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ValidationError("attack config: expected an object");
    }
    for (const char* key : {"kind", "epsilon", "steps", "step_size", "seed"}) {
        require_key(j, key, "attack config");
    }
    AttackConfig c;
    try {
        c.kind = j.at("kind").get<std::string>();
        c.epsilon = j.at("epsilon").get<double>();
        c.steps = j.at("steps").get<int>();
        c.step_size = j.at("step_size").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("attack config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json MetricsReport::to_json() const {
    return nlohmann::json{{"acc", acc},
                          {"dir", dir},
                          {"retention_rate", retention_rate},
                          {"flops", flops},
                          {"latency_ms_per_batch", latency_ms_per_batch},
                          {"config", config}};
}

double dir(const model::ModelGraph& m, const AdversarialSet& adv) {
    check_pair_set(adv);
    data::Dataset ds{adv.images, adv.labels};
    return 1.0 - accuracy(m, ds);
}

double mapped_accuracy(const model::ModelGraph& original, const data::TargetProblem& target,
                       const data::Dataset& ds) {
    if (ds.size() == 0) {
        throw ValidationError("mapped_accuracy: empty dataset");
    }
    if (static_cast<std::int64_t>(ds.labels.size()) != ds.size()) {
        throw ValidationError("mapped_accuracy: label count does not match rows");
    }
    const auto width = original.output_width();
    if (static_cast<std::int64_t>(target.label_map.size()) != width) {
        throw ShapeError("label map covers " + std::to_string(target.label_map.size()) +
                         " classes but the model outputs " + std::to_string(width));
    }
    for (int y : ds.labels) {
        if (y < 0 || y >= target.k) {
            throw ValidationError("mapped_accuracy: label " + std::to_string(y) + " outside [0," +
                                  std::to_string(target.k) + ")");
        }
    }
    const auto n = ds.size();
    const std::int64_t batch = 256;
    std::int64_t correct = 0;
    for (std::int64_t at = 0; at < n; at += batch) {
        const auto take = std::min(batch, n - at);
        std::vector<std::size_t> rows(static_cast<std::size_t>(take));
        std::iota(rows.begin(), rows.end(), static_cast<std::size_t>(at));
        Tensor x = data::gather_rows(ds.images, rows);
        if (x.dtype() != original.dtype()) {
            x = x.astype(original.dtype());
        }
        Tensor z = model::forward(original, x);
        const auto pred = ops::argmax_rows(z);
        for (std::int64_t r = 0; r < take; ++r) {
            const int mapped = target.label_map[static_cast<std::size_t>(pred[r])];
            if (mapped == ds.labels[static_cast<std::size_t>(at + r)]) {
                ++correct;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

double mapped_dir(const model::ModelGraph& original, const data::TargetProblem& target,
                  const AdversarialSet& adv) {
    check_pair_set(adv);
    data::Dataset ds{adv.images, adv.labels};
    return 1.0 - mapped_accuracy(original, target, ds);
}

Tensor fgsm(const model::ModelGraph& m, const Tensor& x, const std::vector<int>& labels,
            double epsilon) {
    check_attack_inputs(m, x, labels);
    if (!std::isfinite(epsilon) || epsilon < 0.0) {
        throw ValidationError("attack epsilon must be finite and >= 0");
    }
    Tensor onehot = ops::one_hot(labels, m.output_width(), m.dtype());
    auto loss_fn = [&m, onehot](const Tensor& leaf) {
        return ops::softmax_cross_entropy(model::forward(m, leaf), onehot);
    };
    return attack_loop(loss_fn, x, epsilon, 1, epsilon);
}

Tensor pgd(const model::ModelGraph& m, const Tensor& x, const std::vector<int>& labels,
           double epsilon, int steps, double step_size) {
    check_attack_inputs(m, x, labels);
    if (!std::isfinite(epsilon) || epsilon < 0.0) {
        throw ValidationError("attack epsilon must be finite and >= 0");
    }
    if (steps < 1) {
        throw ValidationError("attack steps must be >= 1");
    }
    if (!std::isfinite(step_size) || step_size <= 0.0) {
        throw ValidationError("attack step_size must be finite and > 0");
    }
    Tensor onehot = ops::one_hot(labels, m.output_width(), m.dtype());
    auto loss_fn = [&m, onehot](const Tensor& leaf) {
        return ops::softmax_cross_entropy(model::forward(m, leaf), onehot);
    };
    return attack_loop(loss_fn, x, epsilon, steps, step_size);
}

void FinetuneConfig::validate() const {
    if (epochs < 1) {
        throw ValidationError("finetune epochs must be >= 1");
    }
    if (!std::isfinite(lr) || lr < 0.0) {
        throw ValidationError("finetune lr must be finite and >= 0");
    }
    if (batch_size < 1) {
        throw ValidationError("finetune batch_size must be >= 1");
    }
    if (!std::isfinite(dropout) || dropout < 0.0 || dropout >= 1.0) {
        throw ValidationError("finetune dropout must lie in [0,1)");
    }
}

model::ModelGraph finetune(const model::ModelGraph& m, const data::TargetProblem& target,
                           const FinetuneConfig& cfg) {
    cfg.validate();
    if (m.output_width() != target.k) {
        throw ShapeError("finetune: model outputs " + std::to_string(m.output_width()) +
                         " classes but the target has " + std::to_string(target.k));
    }
    if (target.train.size() == 0) {
        throw ValidationError("finetune: target has no training rows");
    }
    for (int y : target.train.labels) {
        if (y < 0 || y >= target.k) {
            throw ValidationError("finetune: label " + std::to_string(y) + " outside [0," +
                                  std::to_string(target.k) + ")");
        }
    }

    model::ModelGraph ft = m.clone();
    auto params = ft.trainable_params(true);
    for (auto& p : params) {
        p.set_requires_grad(true);
    }

    // Positions pinned at 0.0 for the whole run (the re-engineered zero
    // pattern); fresh zeros elsewhere (biases) stay trainable.
    std::vector<std::pair<Tensor, std::vector<std::int64_t>>> frozen;
    if (cfg.freeze_mask) {
        for (auto& w : ft.maskable_weights()) {
            std::vector<std::int64_t> zeros;
            const auto n = numel(w.shape());
            for (std::int64_t i = 0; i < n; ++i) {
                if (w.at(i) == 0.0) {
                    zeros.push_back(i);
                }
            }
            if (!zeros.empty()) {
                frozen.emplace_back(w, std::move(zeros));
            }
        }
    }

    Rng rng(cfg.seed);
    Rng order = rng.fork(1);
    Rng drop = rng.fork(2);
    const auto n = target.train.size();
    std::vector<std::size_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    const DType dt = ft.dtype();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        order.shuffle(idx);
        for (std::int64_t at = 0; at < n; at += cfg.batch_size) {
            const auto take = std::min<std::int64_t>(cfg.batch_size, n - at);
            std::vector<std::size_t> rows(idx.begin() + at, idx.begin() + at + take);
            data::Dataset batch = data::subset(target.train, rows);
            Tensor x = batch.images.dtype() == dt ? batch.images : batch.images.astype(dt);

            model::ForwardOptions fo;
            fo.training = true;
            fo.rng = &drop;
            fo.classifier_dropout = cfg.dropout;
            Tensor logits = model::forward(ft, x, fo);
            Tensor loss =
                ops::softmax_cross_entropy(logits, ops::one_hot(batch.labels, target.k, dt));
            autograd::backward(loss);

            for (auto& [w, zeros] : frozen) {
                if (!w.has_grad()) {
                    continue;
                }
                if (dt == DType::f32) {
                    auto g = w.grad_f32_mut();
                    for (auto i : zeros) {
                        g[static_cast<std::size_t>(i)] = 0.0f;
                    }
                } else {
                    auto g = w.grad_f64_mut();
                    for (auto i : zeros) {
                        g[static_cast<std::size_t>(i)] = 0.0;
                    }
                }
            }
            autograd::sgd_step(params, cfg.lr);
        }
    }

    for (auto& p : params) {
        p.set_requires_grad(false);
    }
    ft.train_acc = accuracy(ft, target.train);
    if (target.test.size() > 0) {
        ft.test_acc = accuracy(ft, target.test);
    }
    ft.extra_metadata["finetune"] = nlohmann::json{
        {"epochs", cfg.epochs},       {"lr", cfg.lr},
        {"batch_size", cfg.batch_size}, {"seed", cfg.seed},
        {"freeze_mask", cfg.freeze_mask}, {"dropout", cfg.dropout}};
    return ft;
}

AdversarialSet build_adversarial_set(const model::ModelGraph& original,
                                     const data::TargetProblem& target, const AttackConfig& cfg) {
    cfg.validate();
    if (target.test.size() == 0) {
        throw ValidationError("build_adversarial_set: target has no test rows");
    }
    for (int y : target.test.labels) {
        if (y < 0 || y >= target.k) {
            throw ValidationError("build_adversarial_set: label " + std::to_string(y) +
                                  " outside [0," + std::to_string(target.k) + ")");
        }
    }
    const auto groups = label_groups(original, target);
    const DType dt = original.dtype();
    Tensor clean =
        target.test.images.dtype() == dt ? target.test.images.clone() : target.test.images.astype(dt);

    const auto n = target.test.size();
    Tensor images = Tensor::zeros(clean.shape(), dt);
    const std::int64_t batch = 128;
    for (std::int64_t at = 0; at < n; at += batch) {
        const auto take = std::min(batch, n - at);
        std::vector<std::size_t> rows(static_cast<std::size_t>(take));
        std::iota(rows.begin(), rows.end(), static_cast<std::size_t>(at));
        Tensor x = data::gather_rows(clean, rows);
        std::vector<int> labels(target.test.labels.begin() + at,
                                target.test.labels.begin() + at + take);
        Tensor onehot = ops::one_hot(labels, target.k, dt);
        auto loss_fn = [&original, &groups, onehot](const Tensor& leaf) {
            Tensor z = model::forward(original, leaf);
            return ops::softmax_cross_entropy(ops::group_logsumexp(z, groups), onehot);
        };
        Tensor hit = cfg.kind == "fgsm"
                         ? attack_loop(loss_fn, x, cfg.epsilon, 1, cfg.epsilon)
                         : attack_loop(loss_fn, x, cfg.epsilon, cfg.steps, cfg.step_size);
        copy_rows_into(images, hit, at);
    }

    AdversarialSet s;
    s.images = images;
    s.clean = clean;
    s.labels = target.test.labels;
    s.config = cfg;
    s.source_checksum = original.param_checksum();
    return s;
}

void save_adversarial_set(const AdversarialSet& s, const std::string& path) {
    if (!s.images.defined() || !s.clean.defined()) {
        throw ValidationError("save_adversarial_set: undefined tensors");
    }
    if (s.images.shape() != s.clean.shape() || s.images.dtype() != s.clean.dtype()) {
        throw ValidationError("save_adversarial_set: images and clean sources disagree");
    }
    check_pair_set(s);
    s.config.validate();
    io::TensorFile tf;
    tf.metadata = nlohmann::json{{"kind", "adversarial-set"},
                                 {"attack", s.config.to_json()},
                                 {"labels", s.labels},
                                 {"source_checksum", s.source_checksum}};
    tf.tensors.push_back({"images", s.images});
    tf.tensors.push_back({"clean", s.clean});
    io::write_tensor_file(path, tf);
}

AdversarialSet load_adversarial_set(const std::string& path) {
    io::TensorFile tf = io::read_tensor_file(path);
    for (const char* key : {"kind", "attack", "labels", "source_checksum"}) {
        require_key(tf.metadata, key, "adversarial set file");
    }
    if (tf.metadata.at("kind") != "adversarial-set") {
        throw ValidationError("adversarial set file: kind is not adversarial-set");
    }
    const Tensor* images = tf.find("images");
    const Tensor* clean = tf.find("clean");
    if (images == nullptr || clean == nullptr) {
        throw ValidationError("adversarial set file: missing images or clean tensor");
    }
    AdversarialSet s;
    s.images = images->clone();
    s.clean = clean->clone();
    try {
        s.labels = tf.metadata.at("labels").get<std::vector<int>>();
        s.source_checksum = tf.metadata.at("source_checksum").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("adversarial set file: ") + e.what());
    }
    s.config = AttackConfig::from_json(tf.metadata.at("attack"));
    if (s.images.shape() != s.clean.shape() || s.images.dtype() != s.clean.dtype()) {
        throw ValidationError("adversarial set file: images and clean sources disagree");
    }
    check_pair_set(s);
    return s;
}

} // namespace seam::evaluation
