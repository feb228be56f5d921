#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "seam/data.hpp"
#include "seam/masking.hpp"
#include "seam/model.hpp"

namespace seam::reengineer {

struct ReengineerConfig {
    double alpha = 1.0; // retention pressure weight
    double xi = 0.05;   // shared learning rate for relevance and head
    int max_rounds = 300;
    double convergence_tol = 1e-3;
    int convergence_window = 5;
    std::int64_t batch_size = 64;
    std::uint64_t seed = 0;

    /// Enforced at the run_search boundary: alpha >= 0, xi > 0,
    /// max_rounds >= 1, window >= 2, tol > 0, batch_size >= 1.
    void validate() const;
};

/// One point in the search space: continuous relevance scores plus the
/// target-problem head, with the objective recorded at its last evaluation.
struct Candidate {
    masking::RelevanceMask relevance;
    model::Head head;
    double objective_value = std::numeric_limits<double>::infinity();
    int round = 0;

    Candidate clone() const;
};

struct RoundRecord {
    int round = 0; // 1-based epoch index
    double l_ce = 0.0;
    double l_wr = 0.0;
    double objective_value = 0.0;
    double train_acc = 0.0;
};

struct SearchTrace {
    std::vector<RoundRecord> rounds;
    int best_round = 0;
    bool converged = false;

    /// CSV with header `round,l_ce,l_wr,objective,train_acc`; floats are
    /// shortest round-trip representations.
    std::string to_csv() const;
};

/// l_ce + alpha * l_wr. Pure arithmetic; callers guarantee l_wr in [0,1]
/// and l_ce >= 0.
double objective(double l_ce, double l_wr, double alpha);

struct Evaluation {
    double l_ce = 0.0;
    double l_wr = 0.0;
    double o = 0.0;
};

/// All-ones relevance plus a freshly initialized K-way head reading the
/// model's logits: the starting candidate, equivalent to the unmodified
/// original model under a random linear readout.
Candidate init_candidate(const model::ModelGraph& m, std::int64_t k, std::uint64_t seed);

/// Masked forward + head on one batch, no parameter updates. Returns the
/// mean cross entropy, the retention rate of the binarized relevance, and
/// their alpha-weighted sum.
Evaluation evaluate_candidate(const model::ModelGraph& m, const Candidate& cand,
                              const data::Dataset& batch, const ReengineerConfig& cfg);

/// One SGD step: relevance moves by -xi * (ce_gradient + alpha/L), the head
/// by -xi * its cross-entropy gradient, then the updated candidate is
/// re-evaluated on the same batch. The input candidate is not mutated.
Candidate search_step(const model::ModelGraph& m, const Candidate& cand,
                      const data::Dataset& batch, const ReengineerConfig& cfg);

struct SearchResult {
    model::ModelGraph reengineered;
    SearchTrace trace;
    Candidate best;
};

/// Full search: rounds are epochs over the target training split,
/// mini-batched, with per-round records of epoch-mean cross entropy,
/// retention, objective, and training accuracy. Stops when the relative
/// change of the objective's moving average falls below tol or at
/// max_rounds; returns the model built from the minimum-objective round.
SearchResult run_search(const model::ModelGraph& m, const data::TargetProblem& target,
                        const ReengineerConfig& cfg);

/// Original parameters with masked-out weights stored as literal 0.0 and
/// the candidate's head attached. The source model is untouched;
/// extra_metadata records the class count, retention rate, and config.
model::ModelGraph build_reengineered_model(const model::ModelGraph& m, const Candidate& cand,
                                           const ReengineerConfig* cfg = nullptr);

} // namespace seam::reengineer
