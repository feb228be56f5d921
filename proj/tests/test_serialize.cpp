#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "seam/errors.hpp"
#include "seam/serialize.hpp"
#include "support/tmpdir.hpp"

using namespace seam;
using testsupport::TmpDir;

namespace {

std::vector<char> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void dump(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

io::TensorFile sample_file() {
    io::TensorFile tf;
    tf.metadata = {{"kind", "test"}, {"note", "fixture"}};
    Rng rng(3);
    tf.tensors.push_back({"alpha", Tensor::uniform({2, 3}, -1, 1, rng, DType::f32)});
    tf.tensors.push_back({"beta", Tensor::uniform({4}, -1, 1, rng, DType::f64)});
    return tf;
}

} // namespace

TEST_SUITE("serialize") {

TEST_CASE("tensor container round-trips bitwise") {
    TmpDir tmp("ser");
    auto tf = sample_file();
    io::write_tensor_file(tmp.file("a.seam"), tf);
    auto rt = io::read_tensor_file(tmp.file("a.seam"));

    CHECK(rt.metadata == tf.metadata);
    REQUIRE(rt.tensors.size() == 2);
    CHECK(rt.tensors[0].name == "alpha");
    CHECK(rt.tensors[1].name == "beta");
    CHECK(rt.tensors[0].tensor.dtype() == DType::f32);
    CHECK(rt.tensors[1].tensor.dtype() == DType::f64);
    CHECK(rt.tensors[0].tensor.shape() == Shape{2, 3});
    for (std::int64_t i = 0; i < 6; ++i) {
        CHECK(rt.tensors[0].tensor.f32()[static_cast<std::size_t>(i)] ==
              tf.tensors[0].tensor.f32()[static_cast<std::size_t>(i)]);
    }
    for (std::int64_t i = 0; i < 4; ++i) {
        CHECK(rt.tensors[1].tensor.f64()[static_cast<std::size_t>(i)] ==
              tf.tensors[1].tensor.f64()[static_cast<std::size_t>(i)]);
    }
    CHECK(rt.find("beta") != nullptr);
    CHECK(rt.find("gamma") == nullptr);
}

TEST_CASE("file size equals the declared encoding size exactly") {
    TmpDir tmp("ser-size");
    auto tf = sample_file();
    io::write_tensor_file(tmp.file("a.seam"), tf);
    CHECK(std::filesystem::file_size(tmp.file("a.seam")) == io::encoded_size(tf));
    // no temporary left behind
    CHECK_FALSE(std::filesystem::exists(tmp.file("a.seam") + ".tmp"));
}

TEST_CASE("corruption raises distinct error classes") {
    TmpDir tmp("ser-err");
    auto tf = sample_file();
    io::write_tensor_file(tmp.file("a.seam"), tf);
    const auto bytes = slurp(tmp.file("a.seam"));

    auto bad = bytes;
    bad[0] = 'X';
    dump(tmp.file("bad-magic"), bad);
    CHECK_THROWS_AS(io::read_tensor_file(tmp.file("bad-magic")), BadMagicError);

    auto ver = bytes;
    ver[4] = 9;
    dump(tmp.file("bad-version"), ver);
    CHECK_THROWS_AS(io::read_tensor_file(tmp.file("bad-version")), VersionError);

    // truncation anywhere raises TruncatedError
    for (std::size_t cut : {2u, 5u, 8u, 20u}) {
        auto t = bytes;
        t.resize(cut);
        dump(tmp.file("cut"), t);
        CHECK_THROWS_AS(io::read_tensor_file(tmp.file("cut")), TruncatedError);
    }
    auto t = bytes;
    t.resize(bytes.size() - 1);
    dump(tmp.file("cut-tail"), t);
    CHECK_THROWS_AS(io::read_tensor_file(tmp.file("cut-tail")), TruncatedError);

    CHECK_THROWS_AS(io::read_tensor_file(tmp.file("missing")), IoError);

    // dtype tag of the first tensor record sits right after metadata block,
    // tensor count and the name field
    const std::size_t meta_len = tf.metadata.dump().size();
    const std::size_t tag_off = 4 + 2 + 4 + meta_len + 4 + 4 + tf.tensors[0].name.size();
    auto dt = bytes;
    dt[tag_off] = 5;
    dump(tmp.file("bad-dtype"), dt);
    CHECK_THROWS_AS(io::read_tensor_file(tmp.file("bad-dtype")), DTypeError);
}

TEST_CASE("models round-trip with identical forward outputs") {
    TmpDir tmp("ser-model");
    auto arch = model::ArchitectureDescriptor::small_cnn_mnist();
    auto m = model::init_model(arch, 17);
    m.train_acc = 0.91;
    m.test_acc = 0.9;

    io::save_model(m, tmp.file("m.seam"));
    auto rt = io::load_model(tmp.file("m.seam"));

    CHECK(rt.param_checksum() == m.param_checksum());
    CHECK(rt.seed == 17);
    CHECK(rt.train_acc == 0.91);
    CHECK(rt.test_acc == 0.9);
    CHECK(rt.arch.name == "small_cnn_mnist");
    CHECK(rt.arch.input_shape == Shape{1, 28, 28});
    CHECK(rt.maskable_count() == m.maskable_count());

    Rng rng(5);
    Tensor x = Tensor::uniform({2, 1, 28, 28}, 0, 1, rng);
    Tensor a = model::forward(m, x);
    Tensor b = model::forward(rt, x);
    for (std::int64_t i = 0; i < a.size(); ++i) {
        CHECK(a.at(i) == b.at(i));
    }
}

TEST_CASE("models with heads round-trip") {
    TmpDir tmp("ser-head");
    auto arch = model::ArchitectureDescriptor::small_cnn_mnist();
    auto m = model::init_model(arch, 3);
    Rng hr(8);
    auto withhead = model::attach_head(m, model::Head::random(2, 10, hr));
    io::save_model(withhead, tmp.file("h.seam"));
    auto rt = io::load_model(tmp.file("h.seam"));

    REQUIRE(rt.head.has_value());
    CHECK(rt.output_width() == 2);
    CHECK(rt.arch.n_classes == 10);
    CHECK(rt.param_checksum() == withhead.param_checksum());
    CHECK(rt.maskable_count() == m.maskable_count());
}

TEST_CASE("model loading validates structure") {
    TmpDir tmp("ser-val");
    auto arch = model::ArchitectureDescriptor::small_cnn_mnist();
    auto m = model::init_model(arch, 1);
    io::save_model(m, tmp.file("m.seam"));
    auto tf = io::read_tensor_file(tmp.file("m.seam"));

    auto missing = tf;
    missing.tensors.erase(missing.tensors.begin()); // drop layer0.weight
    io::write_tensor_file(tmp.file("missing.seam"), missing);
    CHECK_THROWS_AS(io::load_model(tmp.file("missing.seam")), ValidationError);

    auto nometa = tf;
    nometa.metadata.erase("arch");
    io::write_tensor_file(tmp.file("nometa.seam"), nometa);
    CHECK_THROWS_AS(io::load_model(tmp.file("nometa.seam")), ValidationError);

    auto badshape = tf;
    badshape.tensors[0].tensor = Tensor::zeros({7, 7});
    io::write_tensor_file(tmp.file("badshape.seam"), badshape);
    CHECK_THROWS_AS(io::load_model(tmp.file("badshape.seam")), ValidationError);
}

TEST_CASE("architecture json survives a round trip") {
    auto arch = model::ArchitectureDescriptor::vgg16_32();
    auto j = io::arch_to_json(arch);
    auto back = io::arch_from_json(j);
    back.input_shape = arch.input_shape;
    back.n_classes = arch.n_classes;
    REQUIRE(back.layers.size() == arch.layers.size());
    back.shape_chain();
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        CHECK(back.layers[i].kind == arch.layers[i].kind);
        CHECK(back.layers[i].in == arch.layers[i].in);
        CHECK(back.layers[i].out == arch.layers[i].out);
        CHECK(back.layers[i].maskable == arch.layers[i].maskable);
    }
}

} // TEST_SUITE
