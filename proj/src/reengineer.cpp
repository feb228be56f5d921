#include "seam/reengineer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <span>
#include <type_traits>

#include "seam/autograd.hpp"
#include "seam/errors.hpp"
#include "seam/ops.hpp"
#include "seam/rng.hpp"

namespace seam::reengineer {

namespace {

template <typename T>
std::span<T> view_mut(Tensor& t) {
    if constexpr (std::is_same_v<T, double>) {
        return t.f64_mut();
    } else {
        return t.f32_mut();
    }
}

template <typename T>
std::span<const T> grad_of(const Tensor& t) {
    if constexpr (std::is_same_v<T, double>) {
        return t.grad_f64();
    } else {
        return t.grad_f32();
    }
}

double scalar_of(const Tensor& t) {
    return t.dtype() == DType::f64 ? t.f64()[0] : static_cast<double>(t.f32()[0]);
}

void check_candidate(const model::ModelGraph& m, const Candidate& cand) {
    if (m.head) {
        throw ValidationError("reengineer: model already carries a head; "
                              "search runs against the original classifier");
    }
    if (!cand.head.weight.defined() || !cand.head.bias.defined()) {
        throw ValidationError("reengineer: candidate head is uninitialized");
    }
    if (cand.head.n() != m.output_width()) {
        throw ShapeError("reengineer: head consumes " + std::to_string(cand.head.n()) +
                         " logits but the model emits " + std::to_string(m.output_width()));
    }
    if (cand.head.k() < 2) {
        throw ValidationError("reengineer: head must have at least 2 classes");
    }
}

void check_labels(const std::vector<int>& labels, std::int64_t k, const char* where) {
    for (int y : labels) {
        if (y < 0 || y >= k) {
            throw ValidationError(std::string(where) + ": label " + std::to_string(y) +
                                  " out of range [0," + std::to_string(k) + ")");
        }
    }
}

Tensor batch_images(const model::ModelGraph& m, const data::Dataset& batch) {
    return batch.images.dtype() == m.dtype() ? batch.images : batch.images.astype(m.dtype());
}

Tensor candidate_logits(const model::ModelGraph& m, const masking::MaskedContext& ctx,
                        const model::Head& head, const Tensor& x) {
    model::ForwardOptions opts;
    opts.maskable_override = &ctx.effective_weights;
    Tensor feats = model::forward(m, x, opts);
    return ops::linear(feats, head.weight, head.bias);
}

/// -= xi * (g_ce + g_wr), elementwise in the tensor's own precision.
template <typename T>
void descend_relevance(Tensor& r, std::span<const T> g_ce, const Tensor& g_wr, double xi) {
    auto rv = view_mut<T>(r);
    std::span<const T> gv;
    if constexpr (std::is_same_v<T, double>) {
        gv = g_wr.f64();
    } else {
        gv = g_wr.f32();
    }
    for (std::size_t j = 0; j < rv.size(); ++j) {
        const T ce = g_ce.empty() ? T(0) : g_ce[j];
        rv[j] -= static_cast<T>(xi) * (ce + gv[j]);
    }
}

template <typename T>
void descend_param(Tensor& p, double xi) {
    if (!p.has_grad()) {
        return;
    }
    auto pv = view_mut<T>(p);
    auto gv = grad_of<T>(p);
    for (std::size_t j = 0; j < pv.size(); ++j) {
        pv[j] -= static_cast<T>(xi) * gv[j];
    }
}

/// One mini-batch update of `cand` in place; returns the pre-update loss.
double descend_once(const model::ModelGraph& m, Candidate& cand, const data::Dataset& batch,
                    const ReengineerConfig& cfg) {
    const std::int64_t k = cand.head.k();
    check_labels(batch.labels, k, "search_step");

    auto mask = masking::binarize(cand.relevance);
    auto ctx = masking::apply_mask(m, mask, /*track_gradients=*/true);
    cand.head.weight.set_requires_grad(true);
    cand.head.bias.set_requires_grad(true);

    Tensor x = batch_images(m, batch);
    Tensor loss = ops::softmax_cross_entropy(candidate_logits(m, ctx, cand.head, x),
                                             ops::one_hot(batch.labels, k, m.dtype()));
    autograd::backward(loss);
    const double pre_update = scalar_of(loss);

    auto g_wr = masking::retention_gradient(cand.relevance, cfg.alpha, cand.relevance.total);
    for (std::size_t i = 0; i < cand.relevance.relevance.size(); ++i) {
        Tensor& r = cand.relevance.relevance[i];
        const Tensor& leaf = ctx.mask_leaves[i];
        if (r.dtype() == DType::f64) {
            descend_relevance<double>(r, leaf.has_grad() ? leaf.grad_f64() : std::span<const double>(),
                                      g_wr[i], cfg.xi);
        } else {
            descend_relevance<float>(r, leaf.has_grad() ? leaf.grad_f32() : std::span<const float>(),
                                     g_wr[i], cfg.xi);
        }
    }

    if (cand.head.weight.dtype() == DType::f64) {
        descend_param<double>(cand.head.weight, cfg.xi);
        descend_param<double>(cand.head.bias, cfg.xi);
    } else {
        descend_param<float>(cand.head.weight, cfg.xi);
        descend_param<float>(cand.head.bias, cfg.xi);
    }
    cand.head.weight.zero_grad();
    cand.head.bias.zero_grad();
    cand.head.weight.set_requires_grad(false);
    cand.head.bias.set_requires_grad(false);
    return pre_update;
}

double candidate_accuracy(const model::ModelGraph& m, const Candidate& cand,
                          const data::Dataset& ds, std::int64_t batch_size) {
    auto ctx = masking::apply_mask(m, masking::binarize(cand.relevance), false);
    std::int64_t correct = 0;
    for (std::int64_t start = 0; start < ds.size(); start += batch_size) {
        const auto count = std::min<std::int64_t>(batch_size, ds.size() - start);
        std::vector<std::size_t> rows(static_cast<std::size_t>(count));
        std::iota(rows.begin(), rows.end(), static_cast<std::size_t>(start));
        Tensor xb = data::gather_rows(ds.images, rows);
        if (xb.dtype() != m.dtype()) {
            xb = xb.astype(m.dtype());
        }
        const auto pred = ops::argmax_rows(candidate_logits(m, ctx, cand.head, xb));
        for (std::int64_t i = 0; i < count; ++i) {
            correct += pred[static_cast<std::size_t>(i)] ==
                       ds.labels[static_cast<std::size_t>(start + i)];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

double window_mean(const std::vector<double>& v, std::size_t first, std::size_t count) {
    double acc = 0.0;
    for (std::size_t i = first; i < first + count; ++i) acc += v[i];
    return acc / static_cast<double>(count);
}

/// Relative change of the objective's moving average across one round.
bool has_converged(const std::vector<double>& o_history, int window, double tol) {
    const std::size_t w = static_cast<std::size_t>(window);
    if (o_history.size() < w + 1) {
        return false;
    }
    const std::size_t n = o_history.size();
    const double ma_new = window_mean(o_history, n - w, w);
    const double ma_old = window_mean(o_history, n - w - 1, w);
    const double denom = std::max(std::abs(ma_old), 1e-12);
    return std::abs(ma_new - ma_old) / denom < tol;
}

std::string fmt_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

void ReengineerConfig::validate() const {
    if (!std::isfinite(alpha) || alpha < 0.0) {
        throw ValidationError("reengineer config: alpha must be finite and >= 0");
    }
    if (!std::isfinite(xi) || xi <= 0.0) {
        throw ValidationError("reengineer config: xi must be finite and > 0");
    }
    if (max_rounds < 1) {
        throw ValidationError("reengineer config: max_rounds must be >= 1");
    }
    if (convergence_window < 2) {
        throw ValidationError("reengineer config: convergence_window must be >= 2");
    }
    if (!std::isfinite(convergence_tol) || convergence_tol <= 0.0) {
        throw ValidationError("reengineer config: convergence_tol must be finite and > 0");
    }
    if (batch_size < 1) {
        throw ValidationError("reengineer config: batch_size must be >= 1");
    }
}

Candidate Candidate::clone() const {
    Candidate c;
    c.relevance = relevance.clone();
    c.head = head.clone();
    c.objective_value = objective_value;
    c.round = round;
    return c;
}

std::string SearchTrace::to_csv() const {
    std::string out = "round,l_ce,l_wr,objective,train_acc\n";
    for (const auto& r : rounds) {
        out += std::to_string(r.round);
        out += ',';
        out += fmt_double(r.l_ce);
        out += ',';
        out += fmt_double(r.l_wr);
        out += ',';
        out += fmt_double(r.objective_value);
        out += ',';
        out += fmt_double(r.train_acc);
        out += '\n';
    }
    return out;
}

double objective(double l_ce, double l_wr, double alpha) {
    return l_ce + alpha * l_wr;
}

Candidate init_candidate(const model::ModelGraph& m, std::int64_t k, std::uint64_t seed) {
    if (m.head) {
        throw ValidationError("init_candidate: model already carries a head");
    }
    if (k < 2) {
        throw ValidationError("init_candidate: need at least 2 target classes, got " +
                              std::to_string(k));
    }
    Candidate c;
    c.relevance = masking::init_relevance(m);
    Rng head_rng = Rng(seed).fork(0);
    c.head = model::Head::random(k, m.output_width(), head_rng, m.dtype());
    return c;
}

Evaluation evaluate_candidate(const model::ModelGraph& m, const Candidate& cand,
                              const data::Dataset& batch, const ReengineerConfig& cfg) {
    if (batch.size() == 0) {
        throw ValidationError("evaluate_candidate: empty batch");
    }
    check_candidate(m, cand);
    const std::int64_t k = cand.head.k();
    check_labels(batch.labels, k, "evaluate_candidate");

    auto mask = masking::binarize(cand.relevance);
    const double l_wr = masking::retention_rate(mask);
    auto ctx = masking::apply_mask(m, mask, false);
    Tensor x = batch_images(m, batch);
    Tensor loss = ops::softmax_cross_entropy(candidate_logits(m, ctx, cand.head, x),
                                             ops::one_hot(batch.labels, k, m.dtype()));
    const double l_ce = scalar_of(loss);
    return {l_ce, l_wr, objective(l_ce, l_wr, cfg.alpha)};
}

Candidate search_step(const model::ModelGraph& m, const Candidate& cand,
                      const data::Dataset& batch, const ReengineerConfig& cfg) {
    if (batch.size() == 0) {
        throw ValidationError("search_step: empty batch");
    }
    check_candidate(m, cand);

    Candidate next = cand.clone();
    if (cfg.xi != 0.0) {
        descend_once(m, next, batch, cfg);
    }
    const Evaluation ev = evaluate_candidate(m, next, batch, cfg);
    next.objective_value = ev.o;
    return next;
}

SearchResult run_search(const model::ModelGraph& m, const data::TargetProblem& target,
                        const ReengineerConfig& cfg) {
    cfg.validate();
    if (target.train.size() == 0) {
        throw ValidationError("run_search: empty target training split");
    }
    if (target.k < 2) {
        throw ValidationError("run_search: need at least 2 target classes, got " +
                              std::to_string(target.k));
    }
    check_labels(target.train.labels, target.k, "run_search");

    Candidate cand = init_candidate(m, target.k, cfg.seed);
    Candidate best;
    SearchTrace trace;
    std::vector<double> o_history;
    Rng shuffle_rng = Rng(cfg.seed).fork(1);

    const std::int64_t n = target.train.size();
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int round = 1; round <= cfg.max_rounds; ++round) {
        shuffle_rng.shuffle(order);
        double ce_sum = 0.0;
        for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
            const auto count = std::min<std::int64_t>(cfg.batch_size, n - start);
            std::vector<std::size_t> rows(order.begin() + start, order.begin() + start + count);
            const data::Dataset batch = data::subset(target.train, rows);
            ce_sum += descend_once(m, cand, batch, cfg) * static_cast<double>(count);
        }

        RoundRecord rec;
        rec.round = round;
        rec.l_ce = ce_sum / static_cast<double>(n);
        rec.l_wr = masking::retention_rate(masking::binarize(cand.relevance));
        rec.objective_value = objective(rec.l_ce, rec.l_wr, cfg.alpha);
        rec.train_acc = candidate_accuracy(m, cand, target.train, 256);
        trace.rounds.push_back(rec);
        o_history.push_back(rec.objective_value);

        if (rec.objective_value < best.objective_value) {
            best = cand.clone();
            best.objective_value = rec.objective_value;
            best.round = round;
            trace.best_round = round;
        }
        if (has_converged(o_history, cfg.convergence_window, cfg.convergence_tol)) {
            trace.converged = true;
            break;
        }
    }

    SearchResult result;
    result.reengineered = build_reengineered_model(m, best, &cfg);
    result.trace = std::move(trace);
    result.best = std::move(best);
    return result;
}

model::ModelGraph build_reengineered_model(const model::ModelGraph& m, const Candidate& cand,
                                           const ReengineerConfig* cfg) {
    check_candidate(m, cand);
    auto mask = masking::binarize(cand.relevance);
    const double retention = masking::retention_rate(mask);

    model::ModelGraph baked = m.clone();
    auto weights = baked.maskable_weights();
    if (weights.size() != mask.masks.size()) {
        throw ShapeError("build_reengineered_model: mask covers " +
                         std::to_string(mask.masks.size()) + " tensors, model has " +
                         std::to_string(weights.size()));
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i].shape() != mask.masks[i].shape()) {
            throw ShapeError("build_reengineered_model: mask tensor " + std::to_string(i) +
                             " shape mismatch");
        }
        if (weights[i].dtype() == DType::f64) {
            auto wv = weights[i].f64_mut();
            auto mv = mask.masks[i].f64();
            for (std::size_t j = 0; j < wv.size(); ++j) {
                if (mv[j] == 0.0) wv[j] = 0.0;
            }
        } else {
            auto wv = weights[i].f32_mut();
            auto mv = mask.masks[i].f32();
            for (std::size_t j = 0; j < wv.size(); ++j) {
                if (mv[j] == 0.0f) wv[j] = 0.0f;
            }
        }
    }

    model::ModelGraph out = model::attach_head(baked, cand.head);
    out.extra_metadata["kind"] = "reengineered";
    out.extra_metadata["retention_rate"] = retention;
    out.extra_metadata["target_classes"] = cand.head.k();
    if (cfg) {
        out.extra_metadata["reengineer_config"] = {
            {"alpha", cfg->alpha},
            {"xi", cfg->xi},
            {"max_rounds", cfg->max_rounds},
            {"convergence_tol", cfg->convergence_tol},
            {"convergence_window", cfg->convergence_window},
            {"batch_size", cfg->batch_size},
            {"seed", cfg->seed},
        };
    }
    return out;
}

} // namespace seam::reengineer
