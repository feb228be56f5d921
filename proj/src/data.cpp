#include "seam/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "seam/errors.hpp"

namespace seam::data {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    in.seekg(0, std::ios::end);
    const auto len = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    std::vector<unsigned char> bytes(len);
    if (len && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(len))) {
        throw IoError("read failed on " + path);
    }
    return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                        const std::string& path) {
    if (off + 4 > b.size()) {
        throw TruncatedError(path + ": ended inside header");
    }
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
           (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

} // namespace

DatasetSource load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto ib = read_file(images_path);
    if (read_be32(ib, 0, images_path) != 0x00000803u) {
        throw BadMagicError(images_path + ": not an IDX image file");
    }
    const std::uint32_t n = read_be32(ib, 4, images_path);
    const std::uint32_t h = read_be32(ib, 8, images_path);
    const std::uint32_t w = read_be32(ib, 12, images_path);
    const std::size_t pixel_count = std::size_t(n) * h * w;
    if (ib.size() < 16 + pixel_count) {
        throw TruncatedError(images_path + ": payload short by " +
                             std::to_string(16 + pixel_count - ib.size()) + " bytes");
    }

    const auto lb = read_file(labels_path);
    if (read_be32(lb, 0, labels_path) != 0x00000801u) {
        throw BadMagicError(labels_path + ": not an IDX label file");
    }
    const std::uint32_t ln = read_be32(lb, 4, labels_path);
    if (ln != n) {
        throw ValidationError(labels_path + ": " + std::to_string(ln) + " labels for " +
                              std::to_string(n) + " images");
    }
    if (lb.size() < 8 + ln) {
        throw TruncatedError(labels_path + ": payload short");
    }

    std::vector<float> pixels(pixel_count);
    for (std::size_t i = 0; i < pixel_count; ++i) {
        pixels[i] = static_cast<float>(ib[16 + i]) / 255.0f;
    }
    DatasetSource src;
    src.format = "idx";
    src.data.images = Tensor::from_f32(
        {std::int64_t(n), 1, std::int64_t(h), std::int64_t(w)}, std::move(pixels));
    src.data.labels.resize(n);
    int max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        src.data.labels[i] = lb[8 + i];
        max_label = std::max(max_label, src.data.labels[i]);
    }
    src.n_classes = max_label + 1;
    return src;
}

DatasetSource load_cifar_binary(const std::vector<std::string>& paths) {
    if (paths.empty()) {
        throw ValidationError("load_cifar_binary: no input files");
    }
    constexpr std::size_t record = 3073;
    std::vector<float> pixels;
    std::vector<int> labels;
    for (const auto& path : paths) {
        const auto bytes = read_file(path);
        if (bytes.empty() || bytes.size() % record != 0) {
            throw ValidationError(path + ": length " + std::to_string(bytes.size()) +
                                  " not a multiple of 3073");
        }
        const std::size_t count = bytes.size() / record;
        pixels.reserve(pixels.size() + count * 3072);
        for (std::size_t r = 0; r < count; ++r) {
            const unsigned char* rec = bytes.data() + r * record;
            if (rec[0] >= 10) {
                throw ValidationError(path + ": label byte " + std::to_string(int(rec[0])) +
                                      " in record " + std::to_string(r));
            }
            labels.push_back(rec[0]);
            for (std::size_t i = 0; i < 3072; ++i) {
                pixels.push_back(static_cast<float>(rec[1 + i]) / 255.0f);
            }
        }
    }
    DatasetSource src;
    src.format = "cifar-binary";
    src.n_classes = 10;
    src.data.images = Tensor::from_f32({std::int64_t(labels.size()), 3, 32, 32}, std::move(pixels));
    src.data.labels = std::move(labels);
    return src;
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
    if (t.shape().empty()) {
        throw ShapeError("gather_rows: scalar input");
    }
    const auto n = t.shape()[0];
    const std::int64_t row_size = numel(t.shape()) / n;
    Shape out_shape = t.shape();
    out_shape[0] = static_cast<std::int64_t>(rows.size());
    Tensor out = Tensor::zeros(out_shape, t.dtype());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (static_cast<std::int64_t>(rows[r]) >= n) {
            throw ValidationError("gather_rows: row " + std::to_string(rows[r]) + " out of range");
        }
        for (std::int64_t i = 0; i < row_size; ++i) {
            out.set(static_cast<std::int64_t>(r) * row_size + i,
                    t.at(static_cast<std::int64_t>(rows[r]) * row_size + i));
        }
    }
    return out;
}

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& rows) {
    Dataset out;
    out.images = gather_rows(ds.images, rows);
    out.labels.reserve(rows.size());
    for (auto r : rows) {
        out.labels.push_back(ds.labels.at(r));
    }
    return out;
}

SplitPair split(const Dataset& ds, double train_fraction, Rng& rng) {
    if (train_fraction <= 0.0 || train_fraction >= 1.0) {
        throw ValidationError("split: train fraction must lie in (0,1)");
    }
    const auto n = static_cast<std::size_t>(ds.size());
    if (n < 2) {
        throw ValidationError("split: need at least 2 samples");
    }
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
    }
    rng.shuffle(idx);
    auto cut = static_cast<std::size_t>(static_cast<double>(n) * train_fraction);
    cut = std::clamp<std::size_t>(cut, 1, n - 1);
    SplitPair out;
    out.train = subset(ds, {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut)});
    out.test = subset(ds, {idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end()});
    return out;
}

SuperclassMap SuperclassMap::from_json_file(const std::string& path, std::int64_t n_classes) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    if (!j.is_object()) {
        throw ValidationError(path + ": expected an object of name -> class index list");
    }
    SuperclassMap map;
    std::vector<bool> seen(static_cast<std::size_t>(n_classes), false);
    for (const auto& [name, members] : j.items()) {
        if (!members.is_array()) {
            throw ValidationError(path + ": " + name + " is not an array");
        }
        std::vector<int> idx;
        for (const auto& m : members) {
            if (!m.is_number_integer()) {
                throw ValidationError(path + ": " + name + " holds a non-integer entry");
            }
            const int v = m.get<int>();
            if (v < 0 || v >= n_classes) {
                throw ValidationError(path + ": class " + std::to_string(v) + " in " + name +
                                      " out of range [0," + std::to_string(n_classes) + ")");
            }
            if (seen[static_cast<std::size_t>(v)]) {
                throw ValidationError(path + ": class " + std::to_string(v) +
                                      " appears in more than one superclass");
            }
            seen[static_cast<std::size_t>(v)] = true;
            idx.push_back(v);
        }
        if (idx.size() < 2) {
            throw ValidationError(path + ": superclass " + name +
                                  " has fewer than 2 classes and is rejected");
        }
        map.entries.emplace_back(name, std::move(idx));
    }
    if (map.entries.empty()) {
        throw ValidationError(path + ": no superclasses defined");
    }
    return map;
}

const std::vector<int>* SuperclassMap::find(const std::string& name) const {
    for (const auto& [n, members] : entries) {
        if (n == name) {
            return &members;
        }
    }
    return nullptr;
}

namespace {

/// One-vs-rest relabeling of a single split.
Dataset binary_relabel(const Dataset& ds, std::int64_t class_index, NegativeSampling policy,
                       Rng& rng) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        (ds.labels[i] == class_index ? pos : neg).push_back(i);
    }
    if (pos.empty()) {
        throw ValidationError("build_binary_target: class " + std::to_string(class_index) +
                              " has no samples");
    }
    if (neg.empty()) {
        throw ValidationError("build_binary_target: no negative samples available");
    }
    if (policy == NegativeSampling::balanced && neg.size() > pos.size()) {
        rng.shuffle(neg);
        neg.resize(pos.size());
    }
    std::vector<std::size_t> rows = pos;
    rows.insert(rows.end(), neg.begin(), neg.end());
    rng.shuffle(rows);
    Dataset out = subset(ds, rows);
    for (auto& l : out.labels) {
        l = l == class_index ? 1 : 0;
    }
    return out;
}

} // namespace

TargetProblem build_binary_target(const Dataset& train, const Dataset& test,
                                  std::int64_t n_classes, std::int64_t class_index,
                                  NegativeSampling policy, Rng& rng) {
    if (class_index < 0 || class_index >= n_classes) {
        throw ValidationError("build_binary_target: class index " + std::to_string(class_index) +
                              " out of range [0," + std::to_string(n_classes) + ")");
    }
    TargetProblem tp;
    tp.k = 2;
    tp.one_vs_rest = true;
    tp.member_classes = {class_index};
    tp.description = "binary:" + std::to_string(class_index) +
                     (policy == NegativeSampling::balanced ? "(balanced)" : "(all)");
    tp.label_map.assign(static_cast<std::size_t>(n_classes), 0);
    tp.label_map[static_cast<std::size_t>(class_index)] = 1;
    Rng train_rng = rng.fork(1);
    Rng test_rng = rng.fork(2);
    tp.train = binary_relabel(train, class_index, policy, train_rng);
    tp.test = binary_relabel(test, class_index, policy, test_rng);
    return tp;
}

namespace {

Dataset superclass_relabel(const Dataset& ds, const std::vector<int>& members) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        if (std::find(members.begin(), members.end(), ds.labels[i]) != members.end()) {
            rows.push_back(i);
        }
    }
    if (rows.empty()) {
        throw ValidationError("build_superclass_target: no samples from the member classes");
    }
    Dataset out = subset(ds, rows);
    for (auto& l : out.labels) {
        l = static_cast<int>(std::find(members.begin(), members.end(), l) - members.begin());
    }
    return out;
}

} // namespace

TargetProblem build_superclass_target(const Dataset& train, const Dataset& test,
                                      std::int64_t n_classes, const SuperclassMap& map,
                                      const std::string& name) {
    const auto* members = map.find(name);
    if (!members) {
        throw ValidationError("build_superclass_target: unknown superclass " + name);
    }
    if (members->size() < 2) {
        throw ValidationError("build_superclass_target: superclass " + name + " is a singleton");
    }
    TargetProblem tp;
    tp.k = static_cast<std::int64_t>(members->size());
    tp.one_vs_rest = false;
    tp.description = "superclass:" + name;
    tp.label_map.assign(static_cast<std::size_t>(n_classes), -1);
    for (std::size_t t = 0; t < members->size(); ++t) {
        tp.member_classes.push_back((*members)[t]);
        tp.label_map[static_cast<std::size_t>((*members)[t])] = static_cast<int>(t);
    }
    tp.train = superclass_relabel(train, *members);
    tp.test = superclass_relabel(test, *members);
    return tp;
}

} // namespace seam::data
