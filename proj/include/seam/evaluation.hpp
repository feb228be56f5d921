#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "seam/data.hpp"
#include "seam/model.hpp"
#include "seam/tensor.hpp"

namespace seam::evaluation {

using model::accuracy;

struct AttackConfig {
    std::string kind = "fgsm"; // "fgsm" | "pgd"
    double epsilon = 8.0 / 255.0;
    int steps = 10;
    double step_size = 2.0 / 255.0;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static AttackConfig from_json(const nlohmann::json& j);
};

/// Perturbed inputs paired with their target labels; `clean` keeps the
/// sources so norm bounds stay checkable after a round-trip.
struct AdversarialSet {
    Tensor images;
    Tensor clean;
    std::vector<int> labels;
    AttackConfig config;
    /// param_checksum of the attacked model.
    std::uint64_t source_checksum = 0;

    std::int64_t size() const { return images.defined() ? images.shape()[0] : 0; }
};

struct MetricsReport {
    double acc = -1.0;
    double dir = -1.0;
    double retention_rate = -1.0;
    std::int64_t flops = -1;
    double latency_ms_per_batch = -1.0;
    nlohmann::json config = nlohmann::json::object();

    nlohmann::json to_json() const;
};

/// Misclassification rate on the perturbed pairs; defined as
/// 1 - accuracy-on-pairs so the two sum to exactly 1.0.
double dir(const model::ModelGraph& m, const AdversarialSet& adv);

/// Accuracy of an N-way model on target-labeled data: predictions are the
/// native argmax mapped through the target's label_map (unmapped classes
/// never match).
double mapped_accuracy(const model::ModelGraph& original, const data::TargetProblem& target,
                       const data::Dataset& ds);

/// dir of an N-way model on the set, with predictions mapped as above.
double mapped_dir(const model::ModelGraph& original, const data::TargetProblem& target,
                  const AdversarialSet& adv);

/// x_hat = clip(x + epsilon * sign(grad_x loss), 0, 1), the single-step
/// attack; labels index the model's own output width.
Tensor fgsm(const model::ModelGraph& m, const Tensor& x, const std::vector<int>& labels,
            double epsilon);

/// Iterated sign-ascent with projection onto the epsilon ball around x and
/// the [0,1] box after every step; steps=1 with step_size=epsilon is fgsm.
Tensor pgd(const model::ModelGraph& m, const Tensor& x, const std::vector<int>& labels,
           double epsilon, int steps, double step_size);

struct FinetuneConfig {
    int epochs = 5;
    double lr = 0.01;
    std::int64_t batch_size = 64;
    std::uint64_t seed = 0;
    /// Keep weights that start at exactly 0.0 pinned at 0.0 throughout, so
    /// a re-engineered model keeps its reduction.
    bool freeze_mask = true;
    /// Dropout rate applied before the classifier during fine-tuning only;
    /// 0 disables.
    double dropout = 0.0;

    void validate() const;
};

/// SGD on the target training split. The model's output width must equal
/// target.k (re-engineered models arrive with their head; full-model
/// baselines get a fresh classifier via model::replace_classifier first).
model::ModelGraph finetune(const model::ModelGraph& m, const data::TargetProblem& target,
                           const FinetuneConfig& cfg);

/// Attacks every target test sample against `original` (its N-way logits
/// restricted to the target problem by grouped log-sum-exp), deterministic
/// in the config. The returned set carries the attack parameters and the
/// attacked model's checksum.
AdversarialSet build_adversarial_set(const model::ModelGraph& original,
                                     const data::TargetProblem& target, const AttackConfig& cfg);

void save_adversarial_set(const AdversarialSet& s, const std::string& path);
AdversarialSet load_adversarial_set(const std::string& path);

} // namespace seam::evaluation
