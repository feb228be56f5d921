#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "seam/model.hpp"
#include "seam/tensor.hpp"

namespace seam::io {

/// On-disk container: magic "SEAM", u16 format version (little-endian),
/// u32 metadata byte length + UTF-8 JSON, u32 tensor count, then per
/// tensor: u32 name length + name, u8 dtype tag (0=f32, 1=f64), u8 rank,
/// rank u32 extents, raw little-endian payload.
inline constexpr std::uint16_t kFormatVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct TensorFile {
    nlohmann::json metadata;
    std::vector<NamedTensor> tensors;

    const Tensor* find(const std::string& name) const;
};

/// Exact byte size the container will occupy on disk.
std::size_t encoded_size(const TensorFile& tf);

/// Atomic: written to a temporary sibling and renamed into place.
void write_tensor_file(const std::string& path, const TensorFile& tf);

/// Raises BadMagicError / VersionError / TruncatedError respectively for a
/// wrong magic, an unsupported version, and a short file.
TensorFile read_tensor_file(const std::string& path);

void save_model(const model::ModelGraph& m, const std::string& path);
model::ModelGraph load_model(const std::string& path);

/// Architecture metadata used inside model files; exposed for reports.
nlohmann::json arch_to_json(const model::ArchitectureDescriptor& arch);
model::ArchitectureDescriptor arch_from_json(const nlohmann::json& j);

} // namespace seam::io
