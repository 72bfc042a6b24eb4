#include "doctest.h"

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "hnext/data.hpp"
#include "hnext/rng.hpp"

using namespace hnext;

namespace {

namespace fs = std::filesystem;

void write_be32(std::ofstream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                static_cast<char>(v >> 8), static_cast<char>(v)};
    out.write(b.data(), 4);
}

// fabricate an IDX image file with deterministic payload
std::string write_idx_images(const fs::path& path, std::uint32_t n, std::uint32_t h,
                             std::uint32_t w, std::uint32_t magic = 0x00000803,
                             bool truncate = false) {
    std::ofstream out(path, std::ios::binary);
    write_be32(out, magic);
    write_be32(out, n);
    write_be32(out, h);
    write_be32(out, w);
    const std::size_t total = static_cast<std::size_t>(n) * h * w - (truncate ? 7 : 0);
    Rng rng(5);
    for (std::size_t i = 0; i < total; ++i) {
        const char byte = static_cast<char>(rng.below(256));
        out.write(&byte, 1);
    }
    return path.string();
}

// a synthetic 60k/10k source whose first three bytes encode the sample index,
// so splits can be traced back to the pool
MnistSource synthetic_source() {
    MnistSource src;
    src.height = 28;
    src.width = 28;
    auto fill = [&](std::vector<std::uint8_t>& images, std::vector<std::uint8_t>& labels,
                    std::size_t count) {
        images.assign(count * 784, 0);
        labels.resize(count);
        Rng rng(9);
        for (std::size_t i = 0; i < count; ++i) {
            images[i * 784 + 0] = static_cast<std::uint8_t>(i & 0xff);
            images[i * 784 + 1] = static_cast<std::uint8_t>((i >> 8) & 0xff);
            images[i * 784 + 2] = static_cast<std::uint8_t>((i >> 16) & 0xff);
            // interior content away from the border so rotations keep it
            for (int p = 300; p < 480; ++p) images[i * 784 + p] = static_cast<std::uint8_t>(rng.below(256));
            labels[i] = static_cast<std::uint8_t>(i % 10);
        }
    };
    fill(src.train_images, src.train_labels, 60000);
    fill(src.test_images, src.test_labels, 10000);
    return src;
}

std::size_t recover_index(const RotatedDataset& ds, std::size_t i) {
    const float* px = ds.images.data() + i * 784;
    auto byte = [&](int p) {
        return static_cast<std::size_t>(std::lround(static_cast<double>(px[p]) * 255.0));
    };
    return byte(0) | (byte(1) << 8) | (byte(2) << 16);
}

}  // namespace

TEST_CASE("read_idx parses headers and rejects malformed files") {
    const fs::path dir = fs::temp_directory_path();
    const std::string ok = write_idx_images(dir / "idx_ok", 3, 4, 5);
    const IdxData d = read_idx(ok);
    CHECK(d.magic == 0x00000803);
    REQUIRE(d.dims.size() == 3);
    CHECK(d.dims[0] == 3);
    CHECK(d.dims[1] == 4);
    CHECK(d.dims[2] == 5);
    CHECK(d.payload.size() == 60);

    const std::string bad_magic = write_idx_images(dir / "idx_bad", 1, 2, 2, 0x00000899);
    CHECK_THROWS_AS(read_idx(bad_magic), FormatError);

    const std::string short_file = write_idx_images(dir / "idx_short", 2, 3, 3, 0x00000803, true);
    CHECK_THROWS_AS(read_idx(short_file), LengthError);

    CHECK_THROWS_AS(read_idx((dir / "idx_missing").string()), DataError);
    for (const char* name : {"idx_ok", "idx_bad", "idx_short"})
        fs::remove(dir / name);
}

TEST_CASE("real mnist files parse with the documented shape, when present") {
    const char* env = std::getenv("HNEXT_DATA_DIR");
    const std::string dir = env ? env : "/root/data/mnist";
    if (!fs::exists(fs::path(dir) / "train-images-idx3-ubyte")) {
        MESSAGE("mnist source not found; skipping");
        return;
    }
    const IdxData images = read_idx(dir + "/train-images-idx3-ubyte");
    CHECK(images.magic == 0x00000803);
    CHECK(images.dims[0] == 60000);
    CHECK(images.dims[1] == 28);
    CHECK(images.dims[2] == 28);
    const IdxData labels = read_idx(dir + "/train-labels-idx1-ubyte");
    CHECK(labels.magic == 0x00000801);
    CHECK(labels.dims[0] == 60000);
    for (std::uint8_t v : labels.payload) CHECK(v <= 9);
}

TEST_CASE("mnist-rot-test: sizes, upright train, rotated test/valid") {
    const MnistSource src = synthetic_source();
    const DatasetBundle b = generate_dataset("mnist-rot-test", 11, src);
    CHECK(b.train.size() == 50000);
    CHECK(b.valid.size() == 10000);
    CHECK(b.test.size() == 10000);
    for (double a : b.train.angles) CHECK(a == 0.0);
    int rotated = 0;
    for (double a : b.valid.angles) rotated += (a != 0.0);
    CHECK(rotated > 9900);  // uniform draws almost never hit exactly zero
    rotated = 0;
    for (double a : b.test.angles) rotated += (a != 0.0);
    CHECK(rotated > 9900);
}

TEST_CASE("upright samples are bit-identical to the normalized source") {
    const MnistSource src = synthetic_source();
    GenerateOptions opt;
    opt.max_train = 64;
    opt.max_valid = 4;
    opt.max_test_base = 4;
    const DatasetBundle b = generate_dataset("mnist-rot-test", 12, src, false, opt);
    for (std::size_t i = 0; i < b.train.size(); ++i) {
        const std::size_t idx = recover_index(b.train, i);
        for (int p = 0; p < 784; ++p) {
            const float expected = static_cast<float>(src.train_images[idx * 784 + p] / 255.0);
            CHECK(b.train.images[i * 784 + p] == expected);
        }
    }
}

TEST_CASE("swn-gcn-mnist: replicated fixed-angle test set, upright train/valid") {
    const MnistSource src = synthetic_source();
    GenerateOptions opt;
    opt.max_test_base = 50;
    const DatasetBundle b = generate_dataset("swn-gcn-mnist", 13, src, false, opt);
    CHECK(b.train.size() == 50000);
    CHECK(b.valid.size() == 10000);
    CHECK(b.test.size() == 50 * 12);
    for (double a : b.train.angles) CHECK(a == 0.0);
    for (double a : b.valid.angles) CHECK(a == 0.0);

    std::map<double, int> histogram;
    for (double a : b.test.angles) histogram[a]++;
    REQUIRE(histogram.size() == 12);
    for (double angle : fixed_eval_angles()) CHECK(histogram.at(angle) == 50);

    // label distribution matches the selected base samples, replication-scaled
    std::map<int, int> base_labels;
    for (std::size_t i = 0; i < 50; ++i) base_labels[b.test.labels[i]]++;
    std::map<int, int> all_labels;
    for (std::uint8_t l : b.test.labels) all_labels[l]++;
    for (const auto& [label, count] : base_labels) CHECK(all_labels.at(label) == count * 12);
}

TEST_CASE("train/valid carve is disjoint and exhaustive") {
    const MnistSource src = synthetic_source();
    const DatasetBundle b = generate_dataset("swn-gcn-mnist", 14, src);
    std::set<std::size_t> train_idx;
    for (std::size_t i = 0; i < b.train.size(); ++i) train_idx.insert(recover_index(b.train, i));
    CHECK(train_idx.size() == 50000);  // no duplicates
    for (std::size_t i = 0; i < b.valid.size(); ++i)
        CHECK(train_idx.count(recover_index(b.valid, i)) == 0);
}

TEST_CASE("rot-mnist: table sizes as printed, swap flag reverses them") {
    const MnistSource src = synthetic_source();
    GenerateOptions opt;
    const DatasetBundle printed = generate_dataset("rot-mnist", 15, src, false, opt);
    CHECK(printed.train.size() == 10000);
    CHECK(printed.test.size() == 2000);
    CHECK(printed.valid.size() == 50000);
    int rotated = 0;
    for (double a : printed.train.angles) rotated += (a != 0.0);
    CHECK(rotated > 9900);  // rotation covers the training split too

    const DatasetBundle swapped = generate_dataset("rot-mnist", 15, src, true, opt);
    CHECK(swapped.test.size() == 50000);
    CHECK(swapped.valid.size() == 2000);
}

TEST_CASE("generation is deterministic; unknown variants are rejected") {
    const MnistSource src = synthetic_source();
    GenerateOptions opt;
    opt.max_train = 100;
    opt.max_valid = 50;
    opt.max_test_base = 20;
    const DatasetBundle a = generate_dataset("mnist-rot-test", 16, src, false, opt);
    const DatasetBundle b = generate_dataset("mnist-rot-test", 16, src, false, opt);
    CHECK(a.train.images == b.train.images);
    CHECK(a.test.images == b.test.images);
    CHECK(a.valid.angles == b.valid.angles);

    const DatasetBundle c = generate_dataset("mnist-rot-test", 17, src, false, opt);
    CHECK(a.test.angles != c.test.angles);

    CHECK_THROWS_AS(generate_dataset("imagenet", 1, src), ParameterError);
    CHECK_THROWS_AS(generate_dataset("cifar-rot-test", 1, src), ParameterError);
}

TEST_CASE("dataset archives round-trip and checksum deterministically") {
    const MnistSource src = synthetic_source();
    GenerateOptions opt;
    opt.max_train = 32;
    opt.max_valid = 8;
    opt.max_test_base = 8;
    const DatasetBundle b = generate_dataset("mnist-rot-test", 18, src, false, opt);

    const fs::path path = fs::temp_directory_path() / "hnext_data_test.hnxd";
    write_dataset_archive(b.test, path.string());
    const RotatedDataset back = read_dataset_archive(path.string());
    CHECK(back.variant == b.test.variant);
    CHECK(back.split == "test");
    CHECK(back.seed == 18);
    CHECK(back.images == b.test.images);
    CHECK(back.labels == b.test.labels);
    CHECK(back.angles == b.test.angles);

    const std::uint64_t h1 = fnv1a_file(path.string());
    write_dataset_archive(b.test, path.string());
    CHECK(fnv1a_file(path.string()) == h1);

    // corrupt the magic
    std::ofstream(path, std::ios::binary) << "NOTDATA!";
    CHECK_THROWS_AS(read_dataset_archive(path.string()), FormatError);
    fs::remove(path);
}
