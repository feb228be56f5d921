#include "seam/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "seam/errors.hpp"

namespace seam::io {

namespace {

constexpr char kMagic[4] = {'S', 'E', 'A', 'M'};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

struct Reader {
    const std::string path;
    std::vector<char> bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (pos + n > bytes.size()) {
            throw TruncatedError(path + ": ended inside " + what);
        }
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
        pos += 2;
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
        pos += 4;
        return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
               (std::uint32_t(p[3]) << 24);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(bytes[pos++]);
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(bytes.data() + pos, n);
        pos += n;
        return s;
    }
    const char* raw(std::size_t n, const char* what) {
        need(n, what);
        const char* p = bytes.data() + pos;
        pos += n;
        return p;
    }
};

} // namespace

const Tensor* TensorFile::find(const std::string& name) const {
    for (const auto& nt : tensors) {
        if (nt.name == name) {
            return &nt.tensor;
        }
    }
    return nullptr;
}

std::size_t encoded_size(const TensorFile& tf) {
    std::size_t n = 4 + 2 + 4 + tf.metadata.dump().size() + 4;
    for (const auto& [name, t] : tf.tensors) {
        n += 4 + name.size() + 1 + 1 + 4 * t.shape().size();
        n += static_cast<std::size_t>(t.size()) * dtype_size(t.dtype());
    }
    return n;
}

void write_tensor_file(const std::string& path, const TensorFile& tf) {
    std::string out;
    out.append(kMagic, 4);
    put_u16(out, kFormatVersion);
    const std::string meta = tf.metadata.dump();
    put_u32(out, static_cast<std::uint32_t>(meta.size()));
    out += meta;
    put_u32(out, static_cast<std::uint32_t>(tf.tensors.size()));
    for (const auto& [name, t] : tf.tensors) {
        if (!t.defined()) {
            throw ValidationError("write_tensor_file: tensor " + name + " is undefined");
        }
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(t.dtype()));
        out.push_back(static_cast<char>(t.shape().size()));
        for (auto e : t.shape()) {
            put_u32(out, static_cast<std::uint32_t>(e));
        }
        const std::size_t payload = static_cast<std::size_t>(t.size()) * dtype_size(t.dtype());
        const std::size_t off = out.size();
        out.resize(off + payload);
        if (t.dtype() == DType::f32) {
            std::memcpy(out.data() + off, t.f32().data(), payload);
        } else {
            std::memcpy(out.data() + off, t.f64().data(), payload);
        }
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw IoError("cannot open " + tmp + " for writing");
        }
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) {
            throw IoError("write failed on " + tmp);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("rename " + tmp + " -> " + path + ": " + ec.message());
    }
}

TensorFile read_tensor_file(const std::string& path) {
    Reader r{path, {}, 0};
    {
        std::ifstream f(path, std::ios::binary);
        if (!f) {
            throw IoError("cannot open " + path);
        }
        f.seekg(0, std::ios::end);
        r.bytes.resize(static_cast<std::size_t>(f.tellg()));
        f.seekg(0);
        if (!r.bytes.empty() &&
            !f.read(r.bytes.data(), static_cast<std::streamsize>(r.bytes.size()))) {
            throw IoError("read failed on " + path);
        }
    }

    r.need(4, "magic");
    if (std::memcmp(r.bytes.data(), kMagic, 4) != 0) {
        throw BadMagicError(path + ": bad magic bytes");
    }
    r.pos = 4;
    const std::uint16_t version = r.u16("version");
    if (version != kFormatVersion) {
        throw VersionError(path + ": format version " + std::to_string(version) +
                           ", expected " + std::to_string(kFormatVersion));
    }

    TensorFile tf;
    const std::uint32_t meta_len = r.u32("metadata length");
    const std::string meta = r.str(meta_len, "metadata");
    try {
        tf.metadata = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": metadata is not valid JSON: " + e.what());
    }

    const std::uint32_t count = r.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor nt;
        const std::uint32_t name_len = r.u32("tensor name length");
        nt.name = r.str(name_len, "tensor name");
        const std::uint8_t tag = r.u8("dtype tag");
        if (tag > 1) {
            throw DTypeError(path + ": unknown dtype tag " + std::to_string(tag) + " on " +
                             nt.name);
        }
        const DType dt = static_cast<DType>(tag);
        const std::uint8_t rank = r.u8("rank");
        Shape shape(rank);
        for (auto& e : shape) {
            e = r.u32("extent");
        }
        const auto n = static_cast<std::size_t>(numel(shape));
        const char* payload = r.raw(n * dtype_size(dt), "tensor payload");
        if (dt == DType::f32) {
            std::vector<float> v(n);
            std::memcpy(v.data(), payload, n * sizeof(float));
            nt.tensor = Tensor::from_f32(shape, std::move(v));
        } else {
            std::vector<double> v(n);
            std::memcpy(v.data(), payload, n * sizeof(double));
            nt.tensor = Tensor::from_f64(shape, std::move(v));
        }
        tf.tensors.push_back(std::move(nt));
    }
    return tf;
}

nlohmann::json arch_to_json(const model::ArchitectureDescriptor& arch) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : arch.layers) {
        nlohmann::json j{{"kind", model::layer_kind_name(l.kind)}};
        switch (l.kind) {
        case model::LayerKind::dense:
            j["in"] = l.in;
            j["out"] = l.out;
            break;
        case model::LayerKind::conv2d:
            j["in"] = l.in;
            j["out"] = l.out;
            j["kh"] = l.kh;
            j["kw"] = l.kw;
            j["stride"] = l.stride;
            j["padding"] = l.padding;
            break;
        case model::LayerKind::maxpool2d:
            j["pool"] = l.pool;
            j["pool_stride"] = l.pool_stride;
            break;
        case model::LayerKind::dropout:
            j["rate"] = l.rate;
            break;
        default:
            break;
        }
        layers.push_back(std::move(j));
    }
    return nlohmann::json{{"name", arch.name}, {"layers", std::move(layers)}};
}

model::ArchitectureDescriptor arch_from_json(const nlohmann::json& j) {
    using model::LayerKind;
    using model::LayerSpec;
    model::ArchitectureDescriptor arch;
    arch.name = j.at("name").get<std::string>();
    for (const auto& lj : j.at("layers")) {
        const auto kind = model::layer_kind_from_name(lj.at("kind").get<std::string>());
        switch (kind) {
        case LayerKind::dense:
            arch.layers.push_back(
                LayerSpec::dense(lj.at("in").get<std::int64_t>(), lj.at("out").get<std::int64_t>()));
            break;
        case LayerKind::conv2d: {
            auto s = LayerSpec::conv(lj.at("in").get<std::int64_t>(),
                                     lj.at("out").get<std::int64_t>(), 1,
                                     lj.at("stride").get<int>(), lj.at("padding").get<int>());
            s.kh = lj.at("kh").get<std::int64_t>();
            s.kw = lj.at("kw").get<std::int64_t>();
            arch.layers.push_back(s);
            break;
        }
        case LayerKind::relu:
            arch.layers.push_back(LayerSpec::relu());
            break;
        case LayerKind::maxpool2d:
            arch.layers.push_back(
                LayerSpec::maxpool(lj.at("pool").get<int>(), lj.at("pool_stride").get<int>()));
            break;
        case LayerKind::dropout:
            arch.layers.push_back(LayerSpec::dropout(lj.at("rate").get<double>()));
            break;
        case LayerKind::flatten:
            arch.layers.push_back(LayerSpec::flatten());
            break;
        }
    }
    return arch;
}

void save_model(const model::ModelGraph& m, const std::string& path) {
    TensorFile tf;
    tf.metadata = m.extra_metadata.is_object() ? m.extra_metadata : nlohmann::json::object();
    tf.metadata["n_classes"] = m.output_width();
    tf.metadata["input_shape"] = m.arch.input_shape;
    tf.metadata["seed"] = m.seed;
    tf.metadata["arch"] = arch_to_json(m.arch);
    tf.metadata["train_acc"] = m.train_acc;
    tf.metadata["test_acc"] = m.test_acc;
    tf.metadata["format_version"] = kFormatVersion;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const std::string base = "layer" + std::to_string(i);
        if (m.params[i].weight.defined()) {
            tf.tensors.push_back({base + ".weight", m.params[i].weight});
        }
        if (m.params[i].bias.defined()) {
            tf.tensors.push_back({base + ".bias", m.params[i].bias});
        }
    }
    if (m.head) {
        tf.tensors.push_back({"head.weight", m.head->weight});
        tf.tensors.push_back({"head.bias", m.head->bias});
    }
    write_tensor_file(path, tf);
}

model::ModelGraph load_model(const std::string& path) {
    const TensorFile tf = read_tensor_file(path);
    model::ModelGraph m;
    try {
        m.arch = arch_from_json(tf.metadata.at("arch"));
        m.arch.input_shape = tf.metadata.at("input_shape").get<Shape>();
        m.seed = tf.metadata.at("seed").get<std::uint64_t>();
        m.train_acc = tf.metadata.at("train_acc").get<double>();
        m.test_acc = tf.metadata.at("test_acc").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": model metadata incomplete: " + e.what());
    }
    static const char* known[] = {"n_classes", "input_shape", "seed",     "arch",
                                  "train_acc", "test_acc",    "format_version"};
    for (const auto& [key, value] : tf.metadata.items()) {
        bool required = false;
        for (const char* k : known) {
            if (key == k) required = true;
        }
        if (!required) {
            m.extra_metadata[key] = value;
        }
    }

    m.params.resize(m.arch.layers.size());
    for (std::size_t i = 0; i < m.arch.layers.size(); ++i) {
        if (!m.arch.layers[i].has_params()) {
            continue;
        }
        const std::string base = "layer" + std::to_string(i);
        const Tensor* w = tf.find(base + ".weight");
        const Tensor* b = tf.find(base + ".bias");
        if (!w || !b) {
            throw ValidationError(path + ": missing tensors for " + base);
        }
        m.params[i].weight = *w;
        m.params[i].bias = *b;
    }
    if (const Tensor* hw = tf.find("head.weight")) {
        const Tensor* hb = tf.find("head.bias");
        if (!hb) {
            throw ValidationError(path + ": head.weight without head.bias");
        }
        model::Head h;
        h.weight = *hw;
        h.bias = *hb;
        m.head = std::move(h);
    }

    // The chain guards against extent/tensor mismatches before first use.
    const std::int64_t meta_classes = tf.metadata.at("n_classes").get<std::int64_t>();
    m.arch.n_classes = m.head ? m.head->n() : meta_classes;
    for (std::size_t i = 0; i < m.arch.layers.size(); ++i) {
        auto& l = m.arch.layers[i];
        if (!l.has_params()) {
            continue;
        }
        const auto& ws = m.params[i].weight.shape();
        if ((l.kind == model::LayerKind::dense && ws != Shape{l.out, l.in}) ||
            (l.kind == model::LayerKind::conv2d && ws != Shape{l.out, l.in, l.kh, l.kw})) {
            throw ValidationError(path + ": layer" + std::to_string(i) +
                                  " tensor shape disagrees with metadata");
        }
    }
    m.arch.shape_chain();
    if (m.output_width() != meta_classes) {
        throw ValidationError(path + ": n_classes metadata disagrees with tensors");
    }
    return m;
}

} // namespace seam::io
