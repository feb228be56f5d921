#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seam/data.hpp"
#include "seam/rng.hpp"
#include "seam/tensor.hpp"

namespace seam::model {

enum class LayerKind { dense, conv2d, relu, maxpool2d, dropout, flatten };

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

/// One layer of a feed-forward chain. Extents are fixed at graph build;
/// only dense/conv2d carry parameters, and only their weight tensors are
/// maskable (biases never are).
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::int64_t in = 0, out = 0; // dense: features; conv2d: channels
    std::int64_t kh = 0, kw = 0;  // conv2d kernel extents
    int stride = 1, padding = 0;  // conv2d
    int pool = 0, pool_stride = 0;
    double rate = 0.0; // dropout
    bool maskable = false;

    static LayerSpec dense(std::int64_t in, std::int64_t out);
    static LayerSpec conv(std::int64_t in_ch, std::int64_t out_ch, int k, int stride = 1,
                          int padding = 1);
    static LayerSpec relu();
    static LayerSpec maxpool(int k, int stride);
    static LayerSpec dropout(double rate);
    static LayerSpec flatten();

    bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
};

/// Layer chain with extents only; enough to build parameters, validate
/// shape compatibility and count FLOPs analytically.
struct ArchitectureDescriptor {
    std::string name;
    Shape input_shape; // per-sample, e.g. {1,28,28}
    std::int64_t n_classes = 0;
    std::vector<LayerSpec> layers;

    /// Per-layer output shapes (per-sample). Throws ShapeError on any
    /// incompatibility, including a final width != n_classes.
    std::vector<Shape> shape_chain() const;

    /// 4-conv CNN for 28x28 grayscale, 10 classes.
    static ArchitectureDescriptor small_cnn_mnist();
    /// VGG16 feature stack + 512-512-10 classifier for 32x32 RGB.
    static ArchitectureDescriptor vgg16_32();
    /// Registry lookup by preset name; ValidationError on unknown names.
    static ArchitectureDescriptor by_name(const std::string& name);
    static std::vector<std::string> preset_names();
};

/// Output head: dense K x N weights + K biases appended after the original
/// logits.
struct Head {
    Tensor weight; // [K, N]
    Tensor bias;   // [K]

    std::int64_t k() const { return weight.shape()[0]; }
    std::int64_t n() const { return weight.shape()[1]; }
    static Head random(std::int64_t k, std::int64_t n, Rng& rng, DType dt = DType::f32);
    Head clone() const;
};

struct LayerParams {
    Tensor weight, bias; // undefined for parameter-free layers
};

/// A classifier: architecture + parameters + optional head + metadata.
struct ModelGraph {
    ArchitectureDescriptor arch;
    std::vector<LayerParams> params; // aligned with arch.layers
    std::optional<Head> head;

    std::uint64_t seed = 0;
    double train_acc = -1.0, test_acc = -1.0;
    /// Free-form provenance carried through save/load (the fixed file keys
    /// win on collision); re-engineering records retention and config here.
    nlohmann::json extra_metadata = nlohmann::json::object();

    /// Output width: head K when attached, else arch.n_classes.
    std::int64_t output_width() const { return head ? head->k() : arch.n_classes; }

    /// Weight tensors of maskable layers, in layer order (aliased handles).
    std::vector<Tensor> maskable_weights() const;
    /// L: total scalar count across maskable weight tensors.
    std::int64_t maskable_count() const;
    /// All parameter tensors (weights, biases, head) for optimizer steps.
    std::vector<Tensor> trainable_params(bool include_head = true) const;

    ModelGraph clone() const;
    ModelGraph astype(DType dt) const;
    DType dtype() const;
    /// FNV-1a over all parameter bytes; detects any mutation.
    std::uint64_t param_checksum() const;
};

struct ForwardOptions {
    bool training = false;
    Rng* rng = nullptr; // required when training a graph with dropout
    /// Effective weights replacing the maskable layers' weights, in
    /// maskable-layer order (used for masked forward passes).
    const std::vector<Tensor>* maskable_override = nullptr;
    bool apply_head = true;
    /// Extra dropout inserted immediately before the classifier (the head
    /// when attached, else the final dense layer). 0 disables.
    double classifier_dropout = 0.0;
};

/// Run the layer chain (and head, if any). x: [B, input_shape...].
Tensor forward(const ModelGraph& m, const Tensor& x, const ForwardOptions& opts = {});

/// Fresh parameters drawn uniform in +-sqrt(6/(fan_in+fan_out)), biases
/// zero; deterministic in seed.
ModelGraph init_model(const ArchitectureDescriptor& arch, std::uint64_t seed,
                      DType dt = DType::f32);

/// Deep-copied model with the head appended; head input width must equal
/// the model's output width. Never mutates the source.
ModelGraph attach_head(const ModelGraph& m, const Head& head);

/// Deep-copied model whose final dense layer is re-initialized with k
/// outputs (fresh seeded weights); any head is dropped.
ModelGraph replace_classifier(const ModelGraph& m, std::int64_t k, std::uint64_t seed);

struct TrainConfig {
    int epochs = 5;
    double lr = 0.1;
    int batch_size = 64;
    std::uint64_t seed = 0;
};

/// Mini-batch SGD on softmax cross-entropy. Deterministic in cfg.seed;
/// records final train/test accuracy in the returned model's metadata.
ModelGraph train_original(const ArchitectureDescriptor& arch, const data::Dataset& train,
                          const data::Dataset& test, const TrainConfig& cfg);

/// Share of correct argmax predictions; forward runs in eval mode,
/// mini-batched. Labels must lie in [0, output_width).
double accuracy(const ModelGraph& m, const data::Dataset& ds, int batch_size = 256);

} // namespace seam::model
