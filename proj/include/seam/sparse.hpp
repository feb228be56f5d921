#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seam/model.hpp"
#include "seam/tensor.hpp"

namespace seam::sparse {

/// Compressed storage for one weight tensor: CSR over the leading (output)
/// dimension with the remaining dimensions flattened into the column index.
/// For conv weights [OC,IC,KH,KW] a column decodes as (ic*KH + kh)*KW + kw.
/// Weights equal to zero are dropped; densify restores them as +0.0.
struct SparseTensor {
    Shape shape;
    DType dtype = DType::f32;
    std::vector<std::int64_t> offsets; // shape[0] + 1
    std::vector<std::int64_t> indices; // nnz, strictly increasing per row
    Tensor values;                     // [nnz]; undefined when nnz = 0

    std::int64_t nnz() const { return static_cast<std::int64_t>(indices.size()); }
    std::int64_t row_width() const;
    /// Monotone offsets, in-bound ordered indices, consistent nnz.
    void validate() const;
};

SparseTensor sparsify(const Tensor& dense);
Tensor densify(const SparseTensor& t);

struct SparseLayer {
    model::LayerSpec spec;
    SparseTensor weight; // only when spec.has_params()
    Tensor bias;
};

/// Mirror of a ModelGraph with sparse weight storage; biases, head and
/// metadata ride along dense so the round-trip is lossless.
struct SparseModel {
    model::ArchitectureDescriptor arch;
    std::vector<SparseLayer> layers;
    std::optional<model::Head> head;
    std::uint64_t seed = 0;
    double train_acc = -1.0, test_acc = -1.0;
    nlohmann::json extra_metadata = nlohmann::json::object();

    std::int64_t output_width() const { return head ? head->k() : arch.n_classes; }
    DType dtype() const;
};

SparseModel to_sparse(const model::ModelGraph& m);
model::ModelGraph densify(const SparseModel& sm);

/// Same container format as dense model files; offsets and indices travel
/// as f64 tensors (exact for the index magnitudes that occur here) and the
/// values/indices tensors are omitted for layers with nnz = 0.
void save_sparse_model(const SparseModel& sm, const std::string& path);
SparseModel load_sparse_model(const std::string& path);

/// Eval-mode inference that executes one multiply-accumulate per stored
/// weight and nothing for dropped ones. x: [B, input_shape...].
Tensor sparse_forward(const SparseModel& sm, const Tensor& x);

struct FlopRow {
    std::string layer;
    std::string kind;
    std::int64_t flops = 0;
};

/// Per-sample multiply-accumulate counts over conv/dense layers (and the
/// head when attached). Everything else runs outside the convention.
struct FlopReport {
    std::vector<FlopRow> rows;
    std::int64_t total = 0;
    bool count_zeros = true;
    std::string convention =
        "1 FLOP = 1 multiply-accumulate; conv/dense weights only; bias additions excluded";

    nlohmann::json to_json() const;
};

/// Counts with every weight included (no parameters needed).
FlopReport count_flops(const model::ArchitectureDescriptor& arch);
/// count_zeros=false counts a weight only when it is non-zero; each conv
/// weight contributes one MAC per output position it touches.
FlopReport count_flops(const model::ModelGraph& m, bool count_zeros);

/// CSV with header layer,kind,flops_dense,flops_sparse. The two reports
/// must describe the same layer sequence.
std::string flops_csv(const FlopReport& all_weights, const FlopReport& nonzero_only);

struct BenchmarkConfig {
    int batch_size = 16;
    int repetitions = 200;
    int warmup = 10;
    /// Worker threads for data-parallel batch splitting; 1 = sequential.
    int threads = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LatencyStats {
    double mean_ms = 0.0;
    double stddev_ms = 0.0;
};

struct BenchmarkResult {
    LatencyStats dense, sparse;
    int batch_size = 0;
    int repetitions = 0;
    int threads = 0;

    double speedup() const { return dense.mean_ms / sparse.mean_ms; }
    nlohmann::json to_json() const;
};

/// Wall-clock per-batch latency of both paths on identical random inputs,
/// `warmup` untimed passes first, then mean/stddev over `repetitions`.
BenchmarkResult benchmark(const model::ModelGraph& dense_model, const SparseModel& sparse_model,
                          const BenchmarkConfig& cfg = {});

} // namespace seam::sparse
