#pragma once

#include <string>
#include <utility>
#include <vector>

#include "seam/rng.hpp"
#include "seam/tensor.hpp"

namespace seam::data {

/// Images [N,C,H,W] (fp32, values in [0,1]) with integer labels.
struct Dataset {
    Tensor images;
    std::vector<int> labels;

    std::int64_t size() const { return images.defined() ? images.shape()[0] : 0; }
};

/// A loaded dataset plus its provenance.
struct DatasetSource {
    Dataset data;
    std::string format; // "idx" | "cifar-binary"
    std::int64_t n_classes = 0;
};

/// MNIST-style IDX pair: images magic 0x00000803, labels magic 0x00000801,
/// big-endian extents, one byte per pixel/label. Pixels are scaled to [0,1].
DatasetSource load_idx(const std::string& images_path, const std::string& labels_path);

/// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3x1024 pixel
/// planes. Pixels are scaled to [0,1].
DatasetSource load_cifar_binary(const std::vector<std::string>& paths);

/// New dataset holding the given rows, in the given order.
Dataset subset(const Dataset& ds, const std::vector<std::size_t>& rows);

/// Rows of a [N,...] tensor gathered into a new [idx.size(),...] tensor.
Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows);

struct SplitPair {
    Dataset train, test;
};

/// Seeded shuffle, then the first `train_fraction` of rows become the
/// training split. Membership is disjoint and exhaustive.
SplitPair split(const Dataset& ds, double train_fraction, Rng& rng);

/// Named groups of original class indices. Groups must be disjoint and
/// contain at least two classes each (singleton groups are rejected).
struct SuperclassMap {
    std::vector<std::pair<std::string, std::vector<int>>> entries;

    static SuperclassMap from_json_file(const std::string& path, std::int64_t n_classes);
    const std::vector<int>* find(const std::string& name) const;
};

enum class NegativeSampling { balanced, all };

/// A K-way classification problem carved out of an N-way dataset.
struct TargetProblem {
    std::int64_t k = 2;
    std::string description;
    /// target label of each original class, or -1 if excluded. Used to map
    /// the original model's N-way argmax onto target labels.
    std::vector<int> label_map;
    /// one-vs-rest: {positive_class}; superclass: members in target order.
    std::vector<std::int64_t> member_classes;
    bool one_vs_rest = false;
    Dataset train, test;
};

/// One-vs-rest target: chosen class maps to label 1, sampled negatives to 0.
/// Balanced sampling draws as many negatives as there are positives.
TargetProblem build_binary_target(const Dataset& train, const Dataset& test,
                                  std::int64_t n_classes, std::int64_t class_index,
                                  NegativeSampling policy, Rng& rng);

/// Superclass target: dataset restricted to the group's classes, labels
/// re-indexed 0..K-1 in member order.
TargetProblem build_superclass_target(const Dataset& train, const Dataset& test,
                                      std::int64_t n_classes, const SuperclassMap& map,
                                      const std::string& name);

} // namespace seam::data
