#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hnext/grid.hpp"

namespace hnext {

// Raw IDX tensor: big-endian header (magic, dims), row-major byte payload.
struct IdxData {
    std::uint32_t magic = 0;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload;
};

// Accepts the two MNIST container layouts: 0x00000803 (N x H x W images) and
// 0x00000801 (N labels).
IdxData read_idx(const std::string& path);

struct MnistSource {
    int height = 28;
    int width = 28;
    std::vector<std::uint8_t> train_images;  // 60000 x 784
    std::vector<std::uint8_t> train_labels;
    std::vector<std::uint8_t> test_images;   // 10000 x 784
    std::vector<std::uint8_t> test_labels;

    std::size_t train_count() const { return train_labels.size(); }
    std::size_t test_count() const { return test_labels.size(); }
};

MnistSource load_mnist(const std::string& dir);

// One generated split: images normalized to [0,1] (rotation applied on the
// float representation), per-sample rotation angle in degrees.
struct RotatedDataset {
    std::string variant;
    std::string split;  // train | valid | test
    std::uint64_t seed = 0;
    int height = 0;
    int width = 0;
    std::vector<float> images;  // N x H x W
    std::vector<std::uint8_t> labels;
    std::vector<double> angles;  // degrees

    std::size_t size() const { return labels.size(); }
    RealGrid image(std::size_t idx) const;
};

struct DatasetBundle {
    RotatedDataset train;
    RotatedDataset valid;
    RotatedDataset test;
};

// Library-side trimming for desk-scale runs; the CLI always generates the
// full Table-style sizes. 0 keeps a split complete. max_test_base trims the
// pre-replication test pool of the fixed-angle variant.
struct GenerateOptions {
    int max_train = 0;
    int max_valid = 0;
    int max_test_base = 0;
};

// variant: mnist-rot-test | swn-gcn-mnist | rot-mnist (cifar variants are
// declared out of scope and rejected). Deterministic given (variant, seed).
DatasetBundle generate_dataset(const std::string& variant, std::uint64_t seed,
                               const MnistSource& source, bool rot_mnist_swap_test_valid = false,
                               const GenerateOptions& options = {});

// Self-describing split archive (documented byte layout, little-endian):
//   "HNXDATA1" | u32 version | u32 len + variant | u32 len + split |
//   u64 seed | u64 count | u64 height | u64 width |
//   f64 angles[count] | u8 labels[count] | f32 images[count*h*w]
void write_dataset_archive(const RotatedDataset& dataset, const std::string& path);
RotatedDataset read_dataset_archive(const std::string& path);

// FNV-1a 64-bit over the file bytes; used for the generation manifest.
std::uint64_t fnv1a_file(const std::string& path);

const std::vector<double>& fixed_eval_angles();  // 0, 30, ..., 330

}  // namespace hnext
