#pragma once

#include <string>
#include <vector>

#include "seam/model.hpp"
#include "seam/tensor.hpp"

namespace seam::masking {

/// Continuous relevance scores, one tensor per maskable weight tensor,
/// shape-congruent with the model's maskable weights.
struct RelevanceMask {
    std::vector<Tensor> relevance;
    std::int64_t total = 0; // L

    RelevanceMask clone() const;
};

/// {0,1} mask derived from relevance by the strict-positive indicator.
struct BinaryMask {
    std::vector<Tensor> masks;
    std::int64_t total = 0;

    BinaryMask clone() const;
};

/// All relevance values start at exactly 1.0, so the initial candidate is
/// the unmodified original model.
RelevanceMask init_relevance(const model::ModelGraph& m);

/// Elementwise 1 if r > 0 else 0 (open interval: r = 0 maps to 0).
BinaryMask binarize(const RelevanceMask& r);

/// Mask leaves plus the effective weights w * mask built from them. With
/// track_gradients, the mask tensors become gradient leaves: after a
/// backward pass their gradients equal upstream * w, which under the
/// straight-through estimator is exactly the relevance gradient of the
/// cross-entropy term. Original weights are never mutated.
struct MaskedContext {
    std::vector<Tensor> mask_leaves;
    std::vector<Tensor> effective_weights;
};

MaskedContext apply_mask(const model::ModelGraph& m, const BinaryMask& mask,
                         bool track_gradients = false);

/// Straight-through estimate of d(loss)/d(relevance): the indicator's
/// derivative is replaced by 1, so the estimate is upstream * weight
/// elementwise. Gradient reaches every element, including currently-zero
/// mask positions; that is what lets removed weights return.
std::vector<Tensor> ste_gradients(const RelevanceMask& r, const std::vector<Tensor>& upstream,
                                  const std::vector<Tensor>& weights);

/// Weight retention rate: (1/L) * sum of mask elements.
double retention_rate(const BinaryMask& m);

/// Gradient of alpha * retention_rate w.r.t. relevance under the
/// straight-through estimator: the constant alpha/L everywhere.
std::vector<Tensor> retention_gradient(const RelevanceMask& r, double alpha, std::int64_t l);

void save_mask(const BinaryMask& m, const std::string& path);
BinaryMask load_mask(const std::string& path);

} // namespace seam::masking
